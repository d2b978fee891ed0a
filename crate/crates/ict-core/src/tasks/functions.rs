//! Raw objective functions for the builtin tasks.

use ndarray::Array2;
use rand::distributions::{Distribution, Uniform};
use rand::rngs::StdRng;
use rand::SeedableRng;

use std::f64::consts::{E, PI};

/// Classic Ackley function (minimum 0 at the origin).
pub fn ackley(x: &[f64]) -> f64 {
    let d = x.len() as f64;
    let a = 20.0;
    let b = 0.2;
    let c = 2.0 * PI;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / d;
    let cos = x.iter().map(|v| (c * v).cos()).sum::<f64>() / d;
    -a * (-b * sq.sqrt()).exp() - cos.exp() + a + E
}

/// Classic Rosenbrock function (minimum 0 at all-ones).
pub fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            100.0 * (b - a * a).powi(2) + (1.0 - a).powi(2)
        })
        .sum()
}

/// Tabulated sequence landscape: a per-position contribution plus an
/// adjacent-pair interaction for each of the `length - 1` neighboring
/// position pairs. Coefficients come from a seeded generator, so the
/// landscape is fixed but has no closed-form optimum; with a small alphabet
/// it is exhaustively enumerable.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqLandscape {
    pub length: usize,
    pub alphabet: usize,
    /// `length x alphabet` per-position contributions.
    position: Array2<f64>,
    /// One `alphabet x alphabet` table per adjacent position pair.
    pairwise: Vec<Array2<f64>>,
}

impl SeqLandscape {
    pub fn generate(length: usize, alphabet: usize, seed: u64) -> Self {
        let mut rng = StdRng::seed_from_u64(seed);
        let pos_dist = Uniform::new_inclusive(-1.0, 1.0);
        let pair_dist = Uniform::new_inclusive(-0.6, 0.6);
        let position = Array2::from_shape_fn((length, alphabet), |_| pos_dist.sample(&mut rng));
        let pairwise = (0..length - 1)
            .map(|_| Array2::from_shape_fn((alphabet, alphabet), |_| pair_dist.sample(&mut rng)))
            .collect();
        SeqLandscape {
            length,
            alphabet,
            position,
            pairwise,
        }
    }

    pub fn score(&self, seq: &[usize]) -> f64 {
        debug_assert_eq!(seq.len(), self.length);
        let mut total = 0.0;
        for (p, &s) in seq.iter().enumerate() {
            total += self.position[[p, s]];
        }
        for (p, pair) in self.pairwise.iter().enumerate() {
            total += pair[[seq[p], seq[p + 1]]];
        }
        total
    }

    pub fn domain_size(&self) -> u64 {
        (self.alphabet as u64).pow(self.length as u32)
    }

    /// Exact global extremes by full enumeration of the design space.
    pub fn enumerate_extremes(&self) -> (f64, f64) {
        let mut seq = vec![0usize; self.length];
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        loop {
            let s = self.score(&seq);
            min = min.min(s);
            max = max.max(s);
            // Odometer increment over the alphabet.
            let mut pos = 0;
            loop {
                if pos == self.length {
                    return (min, max);
                }
                seq[pos] += 1;
                if seq[pos] < self.alphabet {
                    break;
                }
                seq[pos] = 0;
                pos += 1;
            }
        }
    }
}
