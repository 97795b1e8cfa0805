//! Least-absolute-deviations regression without intercept.
//!
//! IRLS on `sqrt(r^2 + eps^2)` with a shrinking `eps`, then coordinate descent
//! where every step is an exact weighted median.

use nalgebra::{DMatrix, DVector};

/// Result of one LAD fit.
#[derive(Clone, Debug, PartialEq)]
pub struct LadSolution {
    pub coef: Vec<f64>,
    /// `sum_i |y_i - coef . x_i|`.
    pub abs_sum: f64,
    /// Design had (numerically) fewer independent columns than coefficients.
    pub rank_deficient: bool,
}

const EPS_SCHEDULE: [f64; 9] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10];
const IRLS_ITERS: usize = 40;
const CD_SWEEPS: usize = 200;
const TOL: f64 = 1e-12;

pub fn abs_residual_sum(y: &[f64], x: &[&[f64]], coef: &[f64]) -> f64 {
    (0..y.len())
        .map(|i| {
            let fit: f64 = x.iter().zip(coef).map(|(col, b)| col[i] * b).sum();
            (y[i] - fit).abs()
        })
        .sum()
}

fn residuals(y: &[f64], x: &[&[f64]], coef: &[f64], out: &mut [f64]) {
    out.copy_from_slice(y);
    for (col, b) in x.iter().zip(coef) {
        for (r, v) in out.iter_mut().zip(col.iter()) {
            *r -= b * v;
        }
    }
}

/// Minimiser of `sum_i w_i |z_i - t|`.
pub fn weighted_median(pairs: &mut [(f64, f64)]) -> f64 {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for &(z, w) in pairs.iter() {
        acc += w;
        if acc >= 0.5 * total {
            return z;
        }
    }
    pairs.last().map(|p| p.0).unwrap_or(0.0)
}

/// Weighted normal equations; `ridge_rel` adds `ridge_rel * trace / k` to the diagonal.
fn weighted_solve(x: &[&[f64]], y: &[f64], w: Option<&[f64]>, ridge_rel: f64) -> Option<Vec<f64>> {
    let k = x.len();
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for i in 0..y.len() {
        let wi = w.map_or(1.0, |w| w[i]);
        for r in 0..k {
            let xr = x[r][i] * wi;
            rhs[r] += xr * y[i];
            for c in 0..=r {
                a[(r, c)] += xr * x[c][i];
            }
        }
    }
    let ridge = ridge_rel * a.trace() / k as f64;
    for r in 0..k {
        for c in 0..r {
            a[(c, r)] = a[(r, c)];
        }
        a[(r, r)] += ridge;
    }
    let sol = match a.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => a.lu().solve(&rhs)?,
    };
    sol.iter()
        .all(|v| v.is_finite())
        .then(|| sol.iter().copied().collect())
}

fn is_rank_deficient(x: &[&[f64]]) -> bool {
    let k = x.len();
    let n = x[0].len();
    let mut g = DMatrix::<f64>::zeros(k, k);
    for r in 0..k {
        for c in 0..=r {
            let v: f64 = x[r].iter().zip(x[c]).map(|(a, b)| a * b).sum();
            g[(r, c)] = v;
            g[(c, r)] = v;
        }
    }
    let trace = g.trace();
    let eig = g.symmetric_eigenvalues();
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    n < k || trace <= 0.0 || min <= 1e-12 * trace
}

pub fn lad_fit(y: &[f64], x: &[&[f64]]) -> LadSolution {
    let n = y.len();
    let k = x.len();
    if k == 0 {
        return LadSolution {
            coef: Vec::new(),
            abs_sum: y.iter().map(|v| v.abs()).sum(),
            rank_deficient: false,
        };
    }
    let rank_deficient = is_rank_deficient(x);
    let ridge = if rank_deficient { 1e-8 } else { 0.0 };

    let mut coef = weighted_solve(x, y, None, ridge).unwrap_or_else(|| vec![0.0; k]);
    let mut r = vec![0.0; n];
    residuals(y, x, &coef, &mut r);
    let mut best = r.iter().map(|v| v.abs()).sum::<f64>();
    let mut best_coef = coef.clone();
    let scale = (best / n as f64).max(1e-300);

    let mut w = vec![0.0; n];
    for &rel in &EPS_SCHEDULE {
        let eps = rel * scale;
        let mut prev = f64::INFINITY;
        for _ in 0..IRLS_ITERS {
            for (wi, ri) in w.iter_mut().zip(&r) {
                *wi = 1.0 / (ri * ri + eps * eps).sqrt();
            }
            let Some(next) = weighted_solve(x, y, Some(&w), ridge) else {
                break;
            };
            coef = next;
            residuals(y, x, &coef, &mut r);
            let obj: f64 = r.iter().map(|v| v.abs()).sum();
            if obj < best {
                best = obj;
                best_coef.clone_from(&coef);
            }
            if (prev - obj).abs() <= TOL * obj.max(1e-300) {
                break;
            }
            prev = obj;
        }
        coef.clone_from(&best_coef);
        residuals(y, x, &coef, &mut r);
    }

    coef = best_coef;
    residuals(y, x, &coef, &mut r);
    let mut obj: f64 = r.iter().map(|v| v.abs()).sum();
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..CD_SWEEPS {
        let start = obj;
        for c in 0..k {
            pairs.clear();
            for i in 0..n {
                let xi = x[c][i];
                if xi != 0.0 {
                    pairs.push(((r[i] + coef[c] * xi) / xi, xi.abs()));
                }
            }
            if pairs.is_empty() {
                continue;
            }
            let cand = weighted_median(&mut pairs);
            let delta = cand - coef[c];
            if delta == 0.0 {
                continue;
            }
            let new_obj: f64 = r
                .iter()
                .zip(x[c])
                .map(|(ri, xi)| (ri - delta * xi).abs())
                .sum();
            if new_obj < obj {
                coef[c] = cand;
                for (ri, xi) in r.iter_mut().zip(x[c]) {
                    *ri -= delta * xi;
                }
                obj = new_obj;
            }
        }
        if start - obj <= 1e-15 * start.max(1e-300) {
            break;
        }
    }
    // recompute from scratch to avoid drift in the running residuals
    let abs_sum = abs_residual_sum(y, x, &coef);
    LadSolution {
        coef,
        abs_sum,
        rank_deficient,
    }
}
