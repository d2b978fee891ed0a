use ict_core::engine::*;
use ict_core::proxy::forward_one;
use ict_core::tasks::*;

fn main() {
    let task = lookup_task("seq-lookup-8x4").unwrap();
    let dataset = make_offline_dataset(&task, 512, 0.2, 0).unwrap();
    let mut cfg = IctConfig::default_for(task.kind());
    cfg.n_starts = 1;
    cfg.seed = 0;
    cfg.finetune_rate = 1e-3;
    let noise = cfg.resolve_noise_scale(&dataset);
    let ensemble = pretrain_ensemble(&dataset, &cfg).unwrap();
    let starts = starting_designs(&dataset, 1).unwrap();
    let x0 = starts[0].1.clone();
    let g = mean_ensemble_grad(&ensemble.proxies, &x0).unwrap();
    println!("pretrained mean grad norm at x0: {:.6}", g.dot(&g).sqrt());

    let mut st = ensemble.clone();
    let mut x = x0.clone();
    for t in 0..cfg.iterations {
        for slot in 0..3 {
            let mut rng = SubroundRng::for_slot(cfg.seed, 0, t as u64, slot);
            let (next, _) = ict_subround(&st, slot as usize, &x, &dataset, &cfg, noise, &mut rng).unwrap();
            st = next;
        }
        x = ensemble_ascend_step(&st, &x, cfg.ascent_rate, task.bounds()).unwrap();
        if t % 20 == 0 || t == cfg.iterations - 1 {
            let g = mean_ensemble_grad(&st.proxies, &x).unwrap();
            println!("iter {t}: grad norm {:.6}, |x-x0| {:.4}, oracle(dec(x)) {:.4}",
                g.dot(&g).sqrt(), (&x - &x0).dot(&(&x - &x0)).sqrt(),
                task.normalize(task.score(x.view())));
        }
    }
    // final ascent with frozen ensemble
    let mut xf = x0.clone();
    for _ in 0..cfg.iterations {
        xf = ensemble_ascend_step(&st, &xf, cfg.ascent_rate, task.bounds()).unwrap();
    }
    println!("final ascent: |xf-x0| {:.4}, normalized {:.4}",
        (&xf - &x0).dot(&(&xf - &x0)).sqrt(),
        task.normalize(task.score(xf.view())));
}
