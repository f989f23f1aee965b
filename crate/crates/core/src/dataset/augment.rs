use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

const WEAK_JITTER: f64 = 0.05;
const STRONG_JITTER: f64 = 0.25;
const STRONG_DROP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strength {
    Weak,
    Strong,
}

/// Source of the random draws consumed by augmentation.
pub trait NoiseSource {
    /// Standard normal draw.
    fn gaussian(&mut self) -> f64;
    /// Uniform draw in `[0, 1)`.
    fn uniform(&mut self) -> f64;
}

impl<R: Rng> NoiseSource for R {
    fn gaussian(&mut self) -> f64 {
        self.sample(StandardNormal)
    }

    fn uniform(&mut self) -> f64 {
        self.random()
    }
}

/// Weak: Gaussian jitter with std `0.05 * stats`. Strong: jitter with std
/// `0.25 * stats`, then each coordinate is zeroed with probability 0.1.
pub fn augment<S: NoiseSource + ?Sized>(
    x: ArrayView1<'_, f64>,
    strength: Strength,
    stats: ArrayView1<'_, f64>,
    src: &mut S,
) -> Array1<f64> {
    debug_assert_eq!(x.len(), stats.len());
    let mut out = Array1::zeros(x.len());
    fill(out.view_mut(), x, strength, stats, src);
    out
}

/// Augments the selected rows of `x`, in order.
pub fn augment_rows<S: NoiseSource + ?Sized>(
    x: ArrayView2<'_, f64>,
    rows: &[usize],
    strength: Strength,
    stats: ArrayView1<'_, f64>,
    src: &mut S,
) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (k, &i) in rows.iter().enumerate() {
        fill(out.row_mut(k), x.row(i), strength, stats, src);
    }
    out
}

fn fill<S: NoiseSource + ?Sized>(
    mut out: ndarray::ArrayViewMut1<'_, f64>,
    x: ArrayView1<'_, f64>,
    strength: Strength,
    stats: ArrayView1<'_, f64>,
    src: &mut S,
) {
    match strength {
        Strength::Weak => {
            for j in 0..x.len() {
                out[j] = x[j] + WEAK_JITTER * stats[j] * src.gaussian();
            }
        }
        Strength::Strong => {
            for j in 0..x.len() {
                let jittered = x[j] + STRONG_JITTER * stats[j] * src.gaussian();
                out[j] = if src.uniform() < STRONG_DROP { 0.0 } else { jittered };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    struct Silent;

    impl NoiseSource for Silent {
        fn gaussian(&mut self) -> f64 {
            0.0
        }
        fn uniform(&mut self) -> f64 {
            0.5
        }
    }

    #[test]
    fn zero_draws_leave_weak_view_unchanged() {
        let x = Array1::from(vec![1.5, -2.0, 0.25]);
        let stats = Array1::from(vec![1.0, 2.0, 3.0]);
        let out = augment(x.view(), Strength::Weak, stats.view(), &mut Silent);
        assert_eq!(out, x);
    }

    #[test]
    fn strong_drop_count_is_binomial() {
        let x = Array1::from_elem(1000, 5.0);
        let stats = Array1::ones(1000);
        let mut rng = stream(3, Purpose::Augment, 0);
        let out = augment(x.view(), Strength::Strong, stats.view(), &mut rng);
        let zeros = out.iter().filter(|v| **v == 0.0).count();
        assert!((60..=140).contains(&zeros), "{zeros}");
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn strong_jitter_exceeds_weak() {
        let x = Array1::zeros(20_000);
        let stats = Array1::ones(20_000);
        let mut rng = stream(1, Purpose::Augment, 0);
        let weak = augment(x.view(), Strength::Weak, stats.view(), &mut rng);
        let strong = augment(x.view(), Strength::Strong, stats.view(), &mut rng);
        let sd = |a: &Array1<f64>| (a.mapv(|v| v * v).sum() / a.len() as f64).sqrt();
        assert!((sd(&weak) - 0.05).abs() < 0.005);
        // 90% of coordinates keep jitter with std 0.25.
        assert!((sd(&strong) - 0.25 * 0.9f64.sqrt()).abs() < 0.01);
    }

    #[test]
    fn different_streams_differ() {
        let x = Array1::zeros(8);
        let stats = Array1::ones(8);
        let a = augment(x.view(), Strength::Weak, stats.view(), &mut stream(1, Purpose::Augment, 0));
        let b = augment(x.view(), Strength::Weak, stats.view(), &mut stream(1, Purpose::Augment, 1));
        assert_ne!(a, b);
    }

    #[test]
    fn rows_match_single_sample_calls() {
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64);
        let stats = Array1::ones(3);
        let batch = augment_rows(x.view(), &[2, 0], Strength::Strong, stats.view(), &mut stream(9, Purpose::Augment, 0));
        let mut rng = stream(9, Purpose::Augment, 0);
        let first = augment(x.row(2), Strength::Strong, stats.view(), &mut rng);
        let second = augment(x.row(0), Strength::Strong, stats.view(), &mut rng);
        assert_eq!(batch.row(0), first);
        assert_eq!(batch.row(1), second);
    }
}
