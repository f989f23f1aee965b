//! Independent oracles shared by the integration and acceptance tests. Each
//! one recomputes a quantity with plain loops and closed forms rather than
//! the crate's own code paths.
#![allow(dead_code)]

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selcorr::model::ModelParams;
use selcorr::reweight::{batch_stats, truncated_normal_weight, update_distribution, CorrectionState};
use selcorr::selection::{partition, EpochProbe, ThresholdState};
use selcorr::trainer::{composite_loss_and_grads, BatchViews};

// ---------------------------------------------------------------- gradients

/// Naive forward pass on one row. Returns the logits and the ReLU on/off
/// pattern of every hidden unit.
fn naive_forward(p: &ModelParams, x: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let mut h = x.to_vec();
    let mut pattern = Vec::new();
    let last = p.layers.len() - 1;
    for (k, l) in p.layers.iter().enumerate() {
        let mut z = vec![0.0; l.weight.nrows()];
        for (o, zo) in z.iter_mut().enumerate() {
            *zo = l.bias[o] + (0..h.len()).map(|i| l.weight[[o, i]] * h[i]).sum::<f64>();
        }
        if k < last {
            for v in &mut z {
                pattern.push(*v > 0.0);
                *v = v.max(0.0);
            }
        }
        h = z;
    }
    (h, pattern)
}

fn naive_ce(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

fn naive_term(p: &ModelParams, x: &Array2<f64>, t: &[usize], w: &[f64], pattern: &mut Vec<bool>) -> f64 {
    if x.nrows() == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for r in 0..x.nrows() {
        let (logits, pat) = naive_forward(p, x.row(r).as_slice().unwrap());
        pattern.extend(pat);
        sum += w[r] * naive_ce(&logits, t[r]);
    }
    sum / x.nrows() as f64
}

/// Composite objective including the weight-decay penalty, plus the
/// activation pattern it was evaluated on.
fn naive_objective(p: &ModelParams, v: &BatchViews, wd: f64) -> (f64, Vec<bool>) {
    let mut pattern = Vec::new();
    let ones = vec![1.0; v.clean_given.len()];
    let clean = naive_term(p, &v.clean_weak, &v.clean_given, &ones, &mut pattern);
    let noisy = naive_term(p, &v.noisy_strong, &v.noisy_corrected, &v.noisy_weights, &mut pattern);
    let reg = naive_term(p, &v.clean_strong, &v.clean_corrected, &v.clean_weights, &mut pattern);
    let penalty: f64 = p.layers.iter().map(|l| l.weight.iter().map(|w| w * w).sum::<f64>()).sum();
    (clean + noisy + reg + 0.5 * wd * penalty, pattern)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.5..1.5))
}

fn random_views(rng: &mut ChaCha8Rng, dim: usize, classes: usize) -> BatchViews {
    let nc = rng.random_range(0..6);
    let nn = rng.random_range(0..6);
    let labels = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| rng.random_range(0..classes)).collect::<Vec<_>>();
    let weights = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| rng.random_range(0.01..=1.0)).collect::<Vec<_>>();
    BatchViews {
        clean_weak: random_matrix(rng, nc, dim),
        clean_given: labels(rng, nc),
        clean_strong: random_matrix(rng, nc, dim),
        clean_corrected: labels(rng, nc),
        clean_weights: weights(rng, nc),
        noisy_strong: random_matrix(rng, nn, dim),
        noisy_corrected: labels(rng, nn),
        noisy_weights: weights(rng, nn),
    }
}

fn random_net(rng: &mut ChaCha8Rng) -> ModelParams {
    let depth = rng.random_range(1..=2);
    let mut dims = vec![rng.random_range(1..=4)];
    for _ in 0..depth {
        dims.push(rng.random_range(2..=7));
    }
    dims.push(rng.random_range(2..=5));
    let mut p = ModelParams::init(&dims, rng.random());
    for l in &mut p.layers {
        l.bias = Array1::from_shape_fn(l.bias.len(), |_| rng.random_range(-0.5..0.5));
    }
    p
}

pub struct GradientReport {
    pub nets: usize,
    pub coordinates: usize,
    /// Coordinates where the perturbation crossed a ReLU kink; finite
    /// differences are meaningless there.
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub elapsed: Duration,
}

/// Relative error `|a - n| / max(|a|, |n|)`, 0 when both vanish. Where both
/// sides are below `1e-7` in magnitude the absolute difference is used,
/// since the central difference itself carries `~1e-11` rounding noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-7 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares composite-loss gradients against central differences of the
/// naive objective on `nets` random small MLPs and batches.
pub fn gradient_check(nets: usize, step: f64, seed: u64) -> GradientReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut coordinates, mut skipped, mut max_rel) = (0, 0, 0.0f64);
    for _ in 0..nets {
        let p = random_net(&mut rng);
        let views = random_views(&mut rng, p.input_dim(), p.output_dim());
        let wd = rng.random_range(0.0..1e-3);
        let (_, grads) = composite_loss_and_grads(&p, &views, wd);
        let analytic: Vec<f64> = grads.values().collect();
        for (k, a) in analytic.iter().enumerate() {
            let mut plus = p.clone();
            *plus.values_mut().nth(k).unwrap() += step;
            let mut minus = p.clone();
            *minus.values_mut().nth(k).unwrap() -= step;
            let (fp, pat_p) = naive_objective(&plus, &views, wd);
            let (fm, pat_m) = naive_objective(&minus, &views, wd);
            if pat_p != pat_m {
                skipped += 1;
                continue;
            }
            coordinates += 1;
            max_rel = max_rel.max(relative_error(*a, (fp - fm) / (2.0 * step)));
        }
    }
    GradientReport {
        nets,
        coordinates,
        skipped_kinks: skipped,
        max_rel_error: max_rel,
        elapsed: start.elapsed(),
    }
}

// ---------------------------------------------------------------------- EMA

fn random_probs(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Array2<f64> {
    let mut p = Array2::from_shape_fn((n, c), |_| rng.random_range(0.0..1.0f64).powi(3) + 1e-9);
    for mut row in p.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

fn probe_of(probs: Array2<f64>, given: &[usize]) -> EpochProbe {
    let given_label_prob = given.iter().enumerate().map(|(i, &y)| probs[[i, y]]).collect();
    EpochProbe { probs, given_label_prob }
}

/// Closed-form EMA over the per-epoch observations `xs[1..]` (epoch 0 is
/// skipped) starting from `init`: `m^k init + sum_j (1-m) m^(k-j) x_j`,
/// where only observations marked present count.
fn closed_form_ema(init: f64, m: f64, xs: &[(bool, f64)]) -> f64 {
    let present: Vec<f64> = xs.iter().skip(1).filter(|(ok, _)| *ok).map(|(_, x)| *x).collect();
    let k = present.len() as i32;
    let mut total = m.powi(k) * init;
    for (j, x) in present.iter().enumerate() {
        total += (1.0 - m) * m.powi(k - 1 - j as i32) * x;
    }
    total
}

pub struct EmaReport {
    pub sequences: usize,
    pub max_abs_diff: f64,
    /// The incremental state at epoch 0 equals the documented initial values
    /// exactly, in every sequence.
    pub initial_values_exact: bool,
}

/// Runs the incremental threshold and distribution updates on random
/// probability-matrix sequences and compares each state against a
/// from-scratch recomputation from the whole history.
pub fn ema_check(sequences: usize, seed: u64) -> EmaReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_diff = 0.0f64;
    let mut initial_ok = true;
    for _ in 0..sequences {
        let c = rng.random_range(2..=8);
        let n = rng.random_range(1..=40);
        let epochs = rng.random_range(1..=12);
        let m = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.5..0.999) };
        let given: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();

        let mut th = ThresholdState::new(c, m);
        let mut dist = CorrectionState::new(c, m, 1.0);
        let mut t_obs = Vec::new();
        let mut e_obs = vec![Vec::new(); c];
        let mut mu_obs = vec![Vec::new(); c];
        let mut s2_obs = vec![Vec::new(); c];

        for epoch in 0..epochs {
            let probs = random_probs(&mut rng, n, c);
            let corrected: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let noisy: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
            let conf: Vec<f64> = (0..n).map(|i| probs[[i, corrected[i]]]).collect();

            // Observations, by hand.
            t_obs.push((true, (0..n).map(|i| probs[[i, given[i]]]).sum::<f64>() / n as f64));
            for k in 0..c {
                e_obs[k].push((true, (0..n).map(|i| probs[[i, k]]).sum::<f64>() / n as f64));
                let members: Vec<f64> = noisy.iter().filter(|&&i| corrected[i] == k).map(|&i| conf[i]).collect();
                let cnt = members.len() as f64;
                let mu = members.iter().sum::<f64>() / cnt;
                let var = members.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / cnt;
                mu_obs[k].push((!members.is_empty(), mu));
                s2_obs[k].push((!members.is_empty(), var));
            }

            // Incremental state.
            th.advance(epoch, &probe_of(probs, &given));
            update_distribution(&mut dist, epoch, &batch_stats(&conf, &corrected, &noisy, c));

            if epoch == 0 {
                let inv = 1.0 / c as f64;
                initial_ok &= th.global_t == inv
                    && th.class_e.iter().all(|&e| e == inv)
                    && dist.mu.iter().all(|&u| u == inv)
                    && dist.sigma2.iter().all(|&s| s == 1.0);
            }

            let inv = 1.0 / c as f64;
            max_diff = max_diff.max((th.global_t - closed_form_ema(inv, m, &t_obs)).abs());
            for k in 0..c {
                max_diff = max_diff.max((th.class_e[k] - closed_form_ema(inv, m, &e_obs[k])).abs());
                max_diff = max_diff.max((dist.mu[k] - closed_form_ema(inv, m, &mu_obs[k])).abs());
                max_diff = max_diff.max((dist.sigma2[k] - closed_form_ema(1.0, m, &s2_obs[k])).abs());
            }
        }
    }
    EmaReport {
        sequences,
        max_abs_diff: max_diff,
        initial_values_exact: initial_ok,
    }
}

// ---------------------------------------------------------------- partition

pub struct PartitionReport {
    pub trials: usize,
    pub mismatches: usize,
    /// Samples placed exactly on their class threshold.
    pub boundary_samples: usize,
    pub boundary_selected: usize,
}

/// Random probes (N <= 1000, C <= 20) with some samples pinned exactly to
/// their threshold, compared against a per-sample filter.
pub fn partition_check(trials: usize, seed: u64) -> PartitionReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut mismatches, mut boundary, mut boundary_selected) = (0, 0, 0);
    for _ in 0..trials {
        let c = rng.random_range(2..=20);
        let n = rng.random_range(1..=1000);
        let mut probs = random_probs(&mut rng, n, c);
        let given: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let local_t: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..0.6)).collect();
        let mut on_edge = vec![false; n];
        for i in 0..n {
            if rng.random_bool(0.05) {
                probs[[i, given[i]]] = local_t[given[i]];
                on_edge[i] = true;
            }
        }
        let probe = probe_of(probs.clone(), &given);
        let part = partition(&probe, &given, &local_t);

        let mut expect_clean = Vec::new();
        let mut expect_noisy = Vec::new();
        for i in 0..n {
            if probs[[i, given[i]]] > local_t[given[i]] {
                expect_clean.push(i);
            } else {
                expect_noisy.push(i);
            }
        }
        if part.clean_indices != expect_clean || part.noisy_indices != expect_noisy {
            mismatches += 1;
        }
        boundary += on_edge.iter().filter(|&&e| e).count();
        boundary_selected += part.clean_indices.iter().filter(|&&i| on_edge[i]).count();
    }
    PartitionReport {
        trials,
        mismatches,
        boundary_samples: boundary,
        boundary_selected,
    }
}

// ------------------------------------------------------------------ weights

#[derive(Debug, Default)]
pub struct WeightReport {
    pub triples: usize,
    pub out_of_range: usize,
    pub plateau_mismatch: usize,
    pub max_jump_at_mean: f64,
    pub monotonicity_violations: usize,
}

/// Property sweep of the truncated-normal weight over random triples.
pub fn weight_check(triples: usize, seed: u64) -> WeightReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = WeightReport {
        triples,
        ..Default::default()
    };
    for k in 0..triples {
        let lm = [1.0, 0.5, 2.0, 0.1][k % 4];
        let mu: f64 = rng.random_range(0.0..=1.0);
        let sigma2 = 10f64.powf(rng.random_range(-6.0..1.0));
        // Mix uniform draws with points right at, just below and just above the mean.
        let conf = match k % 5 {
            0 => mu,
            1 => mu.next_down(),
            2 => mu.next_up(),
            _ => rng.random_range(0.0..=1.0),
        };
        let w = truncated_normal_weight(conf, mu, sigma2, lm);
        if !(w > 0.0 && w <= lm) {
            r.out_of_range += 1;
        }
        if (w == lm) != (conf >= mu) {
            r.plateau_mismatch += 1;
        }
        let jump = (truncated_normal_weight(mu - 1e-12, mu, sigma2, lm) - truncated_normal_weight(mu, mu, sigma2, lm)).abs();
        r.max_jump_at_mean = r.max_jump_at_mean.max(jump);
        let other = rng.random_range(0.0..=1.0);
        let (lo, hi) = if other < conf { (other, conf) } else { (conf, other) };
        if truncated_normal_weight(lo, mu, sigma2, lm) > truncated_normal_weight(hi, mu, sigma2, lm) {
            r.monotonicity_violations += 1;
        }
    }
    r
}

// --------------------------------------------------------------- utilities

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
