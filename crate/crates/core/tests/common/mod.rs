#![allow(dead_code)]

use flame::dataset::Dataset;
use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random categorical dataset; every arity is in `2..=max_arity`.
pub fn random_dataset(seed: u64, n: usize, p: usize, max_arity: u32) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arities: Vec<u32> = (0..p).map(|_| rng.random_range(2..=max_arity)).collect();
    let mut codes = Vec::with_capacity(n * p);
    for _ in 0..n {
        for &h in &arities {
            codes.push(rng.random_range(0..h));
        }
    }
    let treatment = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let outcome = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let names = (0..p).map(|k| format!("c{k}")).collect();
    Dataset::from_parts(names, arities, codes, treatment, outcome, None, None).unwrap()
}

/// Brute-force partition: units grouped by their active-covariate tuple via
/// pairwise comparison, keeping groups with both arms. Sorted by first member.
pub fn naive_groups(d: &Dataset<f64>, considered: &[usize], active: &[usize]) -> Vec<Vec<usize>> {
    let same = |u: usize, v: usize| active.iter().all(|&k| d.code(u, k) == d.code(v, k));
    let mut units: Vec<usize> = considered.to_vec();
    units.sort_unstable();
    let mut taken = vec![false; units.len()];
    let mut out = Vec::new();
    for i in 0..units.len() {
        if taken[i] {
            continue;
        }
        let mut g = vec![units[i]];
        taken[i] = true;
        for j in i + 1..units.len() {
            if !taken[j] && same(units[i], units[j]) {
                taken[j] = true;
                g.push(units[j]);
            }
        }
        let t = g.iter().filter(|&&u| d.is_treated(u)).count();
        if t > 0 && t < g.len() {
            out.push(g);
        }
    }
    out
}

/// Per-bin bias for one covariate, as `[α0, α1, β0, β1]`.
pub type P1Bias = [Rational64; 4];

/// Hand-coded enumeration of the 16 single-covariate allocations.
///
/// States: 0 empty, 1 treated only, 2 control only, 3 both. Outcomes are
/// control `α0 + α1·x`, treated `α0 + α1·x + β0 + β1·x`. Returns the number of
/// valid allocations and the average bias in bins x = 0 and x = 1.
pub fn p1_brute_force() -> (u64, [P1Bias; 2]) {
    let zero = Rational64::from_integer(0);
    let one = Rational64::from_integer(1);
    let xs = [zero, one];
    let mut valid = 0u64;
    let mut sums = [[zero; 4]; 2];
    for s0 in 0..4u8 {
        for s1 in 0..4u8 {
            let states = [s0, s1];
            let mut est: [Option<P1Bias>; 2] = [None, None];
            let mut t_left = [s0 & 1 != 0, s1 & 1 != 0];
            let mut c_left = [s0 & 2 != 0, s1 & 2 != 0];
            // full-covariate level: a bin with both arms is its own group
            for b in 0..2 {
                if states[b] == 3 {
                    est[b] = Some([zero, zero, one, xs[b]]);
                    t_left[b] = false;
                    c_left[b] = false;
                }
            }
            // covariate dropped: everyone left is one cell
            let tb: Vec<usize> = (0..2).filter(|&b| t_left[b]).collect();
            let cb: Vec<usize> = (0..2).filter(|&b| c_left[b]).collect();
            if !tb.is_empty() && !cb.is_empty() {
                let nt = Rational64::from_integer(tb.len() as i64);
                let nc = Rational64::from_integer(cb.len() as i64);
                let mean_xt = tb.iter().map(|&b| xs[b]).sum::<Rational64>() / nt;
                let mean_xc = cb.iter().map(|&b| xs[b]).sum::<Rational64>() / nc;
                // mean(α0 + α1 x + β0 + β1 x) over treated minus mean(α0 + α1 x) over control
                let e = [zero, mean_xt - mean_xc, one, mean_xt];
                for slot in est.iter_mut() {
                    if slot.is_none() {
                        *slot = Some(e);
                    }
                }
            }
            if let [Some(e0), Some(e1)] = est {
                valid += 1;
                for (b, e) in [e0, e1].into_iter().enumerate() {
                    let truth = [zero, zero, one, xs[b]];
                    for i in 0..4 {
                        sums[b][i] += e[i] - truth[i];
                    }
                }
            }
        }
    }
    let n = Rational64::from_integer(valid as i64);
    (valid, sums.map(|row| row.map(|v| v / n)))
}

/// Holdout for the linear model `y = Σ w_j x_j + w_t·t + N(0, σ)` with
/// `x_j` uniform on `{−1, 1}`, stored as codes 0/1 (`x = 2c − 1`).
pub fn symmetric_linear(seed: u64, n: usize, w: &[f64], w_t: f64, sigma: f64) -> Dataset<f64> {
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let p = w.len();
    let mut codes = Vec::with_capacity(n * p);
    let mut treatment = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    for u in 0..n {
        let t = u % 2 == 1;
        let mut y = if t { w_t } else { 0.0 };
        for &wj in w {
            let c: u32 = rng.random_range(0..2);
            y += wj * (2.0 * c as f64 - 1.0);
            codes.push(c);
        }
        if sigma > 0.0 {
            y += noise.sample(&mut rng);
        }
        treatment.push(t);
        outcome.push(y);
    }
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    Dataset::from_parts(names, vec![2; p], codes, treatment, outcome, None, None).unwrap()
}

/// Random data over the same covariates as `d`, alternating treated and control.
pub fn random_like(d: &Dataset<f64>, seed: u64, n: usize) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut codes = Vec::with_capacity(n * d.n_covariates());
    let mut outcome = Vec::with_capacity(n);
    for _ in 0..n {
        let mut y = rng.random_range(-1.0..1.0);
        for (k, &h) in d.arities().iter().enumerate() {
            let c = rng.random_range(0..h);
            y += (k + 1) as f64 * c as f64;
            codes.push(c);
        }
        outcome.push(y);
    }
    let treatment = (0..n).map(|u| u % 2 == 0).collect();
    Dataset::from_parts(d.covariate_names().to_vec(), d.arities().to_vec(), codes, treatment, outcome, None, None).unwrap()
}
