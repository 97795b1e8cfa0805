//! Priors, importance-sampled marginal likelihoods, DAG priors and the
//! posterior over an enumerated DAG space.
//!
//! Prior and proposal both factorise over nodes, so the marginal likelihood of
//! a DAG is a product of per-family integrals. Each family `(j, pa(j))` is
//! estimated once with a stream keyed by `(seed, j, pa bits)` and shared by
//! every DAG containing it.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::graph::{Dag, NodeSet};
use crate::rng::derived_stream;
use crate::scm::Dataset;
use crate::working::{log_prior_density, parent_gram, FamilyFits, NodeFit};

/// Degrees of freedom of the multivariate-t coefficient proposal.
pub const NU: f64 = 5.0;
pub const DEFAULT_M_SAMPLES: usize = 10_000;
pub const MIN_M_SAMPLES: usize = 100;
const MAX_ATTEMPTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoeffPrior {
    /// `b_j ~ N(0, tau2 I)`.
    Ridge { tau2: f64 },
    /// `b_j ~ N(0, g * 2 theta_j^2 * (D_j^T D_j)^{-1})`.
    GPrior { g: f64 },
}

/// Node-wise parameter prior: coefficient prior plus `theta ~ InvGamma(shape, rate)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub coeff_prior: CoeffPrior,
    pub scale_shape: f64,
    pub scale_rate: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            coeff_prior: CoeffPrior::Ridge { tau2: 100.0 },
            scale_shape: 1.0,
            scale_rate: 1.0,
        }
    }
}

impl PriorSpec {
    pub fn g_prior(g: f64) -> Self {
        PriorSpec {
            coeff_prior: CoeffPrior::GPrior { g },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let hyper = match self.coeff_prior {
            CoeffPrior::Ridge { tau2 } => tau2,
            CoeffPrior::GPrior { g } => g,
        };
        if [hyper, self.scale_shape, self.scale_rate]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
        {
            Ok(())
        } else {
            Err(Error::InvalidParameter(
                "prior hyperparameters must be positive".into(),
            ))
        }
    }
}

/// Importance distribution of one family: multivariate t for `b`, lognormal
/// for `theta`.
#[derive(Clone, Debug)]
pub struct ProposalParams {
    pub location: Vec<f64>,
    pub scale: DMatrix<f64>,
    /// Mean and variance of `log theta`.
    pub log_theta_mean: f64,
    pub c_n: f64,
    /// A diagonal jitter had to be added to keep `scale` positive definite.
    pub jittered: bool,
}

impl ProposalParams {
    pub fn new(data: &Dataset, fit: &NodeFit) -> Result<ProposalParams> {
        let n = data.n() as f64;
        let c_n = (1.0 + 1.0 / n).ln();
        let k = fit.parents.len();
        let gram = parent_gram(data, fit.parents);
        let (inv, jittered) = if k == 0 {
            (DMatrix::zeros(0, 0), false)
        } else {
            invert_spd(gram)?
        };
        let scale = inv * ((NU - 2.0) / NU * fit.theta / 2.0);
        Ok(ProposalParams {
            location: fit.coef.clone(),
            scale,
            log_theta_mean: fit.theta.ln() - c_n / 2.0,
            c_n,
            jittered,
        })
    }
}

fn invert_spd(m: DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok((ch.inverse(), false));
    }
    let k = m.nrows();
    let jitter = 1e-8 * m.trace().abs().max(1e-300) / k as f64;
    let mj = m + DMatrix::identity(k, k) * jitter;
    warn!("near-singular parent Gram matrix; added {jitter:e} jitter");
    mj.cholesky()
        .map(|ch| (ch.inverse(), true))
        .ok_or_else(|| Error::Numerical("parent Gram matrix not invertible".into()))
}

/// Log marginal likelihood estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginalEstimate {
    pub log_m: f64,
    /// Delta-method standard error of `log_m`.
    pub mc_std_error: f64,
    pub m_samples: usize,
}

impl MarginalEstimate {
    fn combine<'a>(parts: impl Iterator<Item = &'a MarginalEstimate>) -> MarginalEstimate {
        let mut out = MarginalEstimate {
            log_m: 0.0,
            mc_std_error: 0.0,
            m_samples: usize::MAX,
        };
        for p in parts {
            out.log_m += p.log_m;
            out.mc_std_error += p.mc_std_error * p.mc_std_error;
            out.m_samples = out.m_samples.min(p.m_samples);
        }
        out.mc_std_error = out.mc_std_error.sqrt();
        out
    }
}

/// Log-mean-exp of log weights with a delta-method standard error.
pub fn log_mean_exp(logw: &[f64]) -> (f64, f64) {
    let m = logw.len() as f64;
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let mean = w.iter().sum::<f64>() / m;
    let var = if logw.len() > 1 {
        w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    (max + mean.ln(), (var / m).sqrt() / mean)
}

fn log_mvt_density(q: &DVector<f64>, chol_l: &DMatrix<f64>, logdet: f64) -> f64 {
    let k = q.len() as f64;
    let y = chol_l
        .solve_lower_triangular(q)
        .expect("non-singular cholesky factor");
    let maha = y.norm_squared();
    ln_gamma((NU + k) / 2.0)
        - ln_gamma(NU / 2.0)
        - 0.5 * k * (NU * PI).ln()
        - 0.5 * logdet
        - 0.5 * (NU + k) * (1.0 + maha / NU).ln()
}

/// Per-family importance-sampling estimate of
/// `log int prod_i Laplace(x_ij | b, theta) pi(b) pi(theta) db dtheta`.
pub fn family_marginal(
    data: &Dataset,
    fit: &NodeFit,
    prior: &PriorSpec,
    m_samples: usize,
    seed: u64,
) -> Result<MarginalEstimate> {
    prior.validate()?;
    if m_samples < MIN_M_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "m_samples = {m_samples} below minimum {MIN_M_SAMPLES}"
        )));
    }
    let base = ProposalParams::new(data, fit)?;
    let k = fit.parents.len();
    let n = data.n() as f64;
    let y = data.column(fit.node);
    let cols: Vec<&[f64]> = fit.parents.iter().map(|p| data.column(p)).collect();
    let gram = parent_gram(data, fit.parents);
    let sum_abs_y: f64 = y.iter().map(|v| v.abs()).sum();
    let chi = Gamma::new(NU / 2.0, 2.0).expect("valid gamma");
    let sd_log = base.c_n.sqrt();

    for attempt in 0..MAX_ATTEMPTS {
        let mut scale = base.scale.clone();
        if attempt > 0 {
            let jitter =
                10f64.powi(attempt as i32 - 1) * 1e-6 * scale.trace().max(1e-300) / k.max(1) as f64;
            scale += DMatrix::identity(k, k) * jitter;
        }
        let chol = match scale.clone().cholesky() {
            Some(c) => c.l(),
            None if k == 0 => DMatrix::zeros(0, 0),
            None => continue,
        };
        let logdet = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let mut rng = derived_stream(seed, &[attempt as u64]);
        let mut logw = Vec::with_capacity(m_samples);
        let mut r = vec![0.0; y.len()];
        let mut ok = true;
        for _ in 0..m_samples {
            // coefficients
            let (b, log_qb) = if k == 0 {
                (Vec::new(), 0.0)
            } else {
                let z = DVector::<f64>::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
                let u: f64 = chi.sample(&mut rng);
                let q = &chol * z * (NU / u).sqrt();
                let lq = log_mvt_density(&q, &chol, logdet);
                let b: Vec<f64> = base
                    .location
                    .iter()
                    .zip(q.iter())
                    .map(|(l, d)| l + d)
                    .collect();
                (b, lq)
            };
            // scale
            let eps: f64 = StandardNormal.sample(&mut rng);
            let log_theta = base.log_theta_mean + sd_log * eps;
            let theta = log_theta.exp();
            let log_qt = -log_theta - 0.5 * (2.0 * PI * base.c_n).ln() - 0.5 * eps * eps;

            let s = if k == 0 {
                sum_abs_y
            } else {
                r.copy_from_slice(y);
                for (col, bk) in cols.iter().zip(&b) {
                    for (ri, x) in r.iter_mut().zip(col.iter()) {
                        *ri -= bk * x;
                    }
                }
                r.iter().map(|v| v.abs()).sum()
            };
            let ll = -n * (2.0 * theta).ln() - s / theta;
            let lp = log_prior_density(prior, &b, theta, Some(&gram));
            let w = ll + lp - log_qb - log_qt;
            if !w.is_finite() {
                ok = false;
                break;
            }
            logw.push(w);
        }
        if ok {
            let (log_m, se) = log_mean_exp(&logw);
            if log_m.is_finite() && se.is_finite() {
                return Ok(MarginalEstimate {
                    log_m,
                    mc_std_error: se,
                    m_samples,
                });
            }
        }
        warn!(
            "non-finite importance weights for node {} (attempt {})",
            fit.node + 1,
            attempt + 1
        );
    }
    Err(Error::Numerical(format!(
        "importance weights non-finite after {MAX_ATTEMPTS} attempts (node {})",
        fit.node + 1
    )))
}

fn family_seed_parts(node: usize, parents: NodeSet) -> [u64; 2] {
    [node as u64, parents.bits() as u64]
}

/// Importance-sampled `log m(D_n | g)`.
pub fn importance_marginal(
    data: &Dataset,
    g: &Dag,
    prior: &PriorSpec,
    m_samples: usize,
    seed: u64,
) -> Result<MarginalEstimate> {
    let fams = FamilyFits::compute(data, std::slice::from_ref(g))?;
    let marg = FamilyMarginals::compute(data, &fams, prior, m_samples, seed)?;
    marg.marginal(g)
}

/// Importance-sampled marginals for every family in a [`FamilyFits`].
#[derive(Clone, Debug)]
pub struct FamilyMarginals {
    map: HashMap<(usize, u16), MarginalEstimate>,
}

impl FamilyMarginals {
    pub fn compute(
        data: &Dataset,
        fams: &FamilyFits,
        prior: &PriorSpec,
        m_samples: usize,
        seed: u64,
    ) -> Result<FamilyMarginals> {
        let mut fits: Vec<&NodeFit> = fams.iter().collect();
        fits.sort_by_key(|f| (f.node, f.parents.bits()));
        let map = fits
            .par_iter()
            .map(|f| {
                let s = crate::rng::derive_seed(seed, &family_seed_parts(f.node, f.parents));
                family_marginal(data, f, prior, m_samples, s)
                    .map(|m| ((f.node, f.parents.bits()), m))
            })
            .collect::<Result<HashMap<_, _>>>()?;
        Ok(FamilyMarginals { map })
    }

    pub fn marginal(&self, g: &Dag) -> Result<MarginalEstimate> {
        let parts = (0..g.p())
            .map(|j| {
                self.map
                    .get(&(j, g.parents(j).bits()))
                    .ok_or_else(|| Error::MissingDag(g.to_text()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MarginalEstimate::combine(parts.into_iter()))
    }
}

/// Exact `log m` of a parentless node under an inverse-gamma scale prior.
pub fn root_log_marginal_exact(xs: &[f64], prior: &PriorSpec) -> f64 {
    let n = xs.len() as f64;
    let s: f64 = xs.iter().map(|v| v.abs()).sum();
    let (a, b) = (prior.scale_shape, prior.scale_rate);
    -n * std::f64::consts::LN_2 + a * b.ln() - ln_gamma(a) + ln_gamma(n + a)
        - (n + a) * (s + b).ln()
}

// ---------------------------------------------------------------- d_n

/// How the minimum positive risk-gap estimate behind `d_n` is taken.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DnRule {
    /// Smallest strictly positive `delta_hat` over all pairs.
    Literal,
    /// Smallest `delta_hat` exceeding `z` standard errors (paired per-row SE).
    Significant { z: f64 },
}

impl Default for DnRule {
    fn default() -> Self {
        DnRule::Significant { z: 3.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DnEstimate {
    pub value: f64,
    /// No qualifying positive gap was found; `value = 1/K`.
    pub fallback: bool,
}

fn n_choose_2(p: usize) -> f64 {
    (p * p.saturating_sub(1) / 2).max(1) as f64
}

/// `d_n = (1/K) min { delta_hat(g, g') > 0 }` with `K = C(p, 2)`, using the
/// default [`DnRule`].
pub fn compute_dn(data: &Dataset, dags: &[Dag]) -> Result<f64> {
    let fams = FamilyFits::compute(data, dags)?;
    Ok(compute_dn_with(data, &fams, dags, DnRule::default())?.value)
}

pub fn compute_dn_with(
    data: &Dataset,
    fams: &FamilyFits,
    dags: &[Dag],
    rule: DnRule,
) -> Result<DnEstimate> {
    let mut uniq: Vec<Dag> = dags.to_vec();
    uniq.sort();
    uniq.dedup();
    if uniq.is_empty() {
        return Err(Error::Empty("dag list"));
    }
    let k = n_choose_2(data.p());
    let n = data.n() as f64;
    let lls = uniq
        .iter()
        .map(|g| fams.max_loglik(g))
        .collect::<Result<Vec<_>>>()?;
    let mut best = f64::INFINITY;
    match rule {
        DnRule::Literal => {
            for a in &lls {
                for b in &lls {
                    let d = (b - a) / n;
                    if d > 0.0 && d < best {
                        best = d;
                    }
                }
            }
        }
        DnRule::Significant { z } => {
            // per-row losses per family, summed per dag
            let mut fam_rows: HashMap<(usize, u16), Vec<f64>> = HashMap::new();
            for f in fams.iter() {
                let c = (2.0 * f.theta).ln();
                let rows = f
                    .residuals(data)
                    .iter()
                    .map(|r| c + r.abs() / f.theta)
                    .collect();
                fam_rows.insert((f.node, f.parents.bits()), rows);
            }
            let rows: Vec<Vec<f64>> = uniq
                .iter()
                .map(|g| {
                    let mut out = vec![0.0; data.n()];
                    for j in 0..g.p() {
                        for (o, v) in out.iter_mut().zip(&fam_rows[&(j, g.parents(j).bits())]) {
                            *o += v;
                        }
                    }
                    out
                })
                .collect();
            let pair_min: Vec<f64> = (0..uniq.len())
                .into_par_iter()
                .map(|a| {
                    let mut m = f64::INFINITY;
                    for b in 0..uniq.len() {
                        let d = (lls[b] - lls[a]) / n;
                        if !(d > 0.0) || d >= m {
                            continue;
                        }
                        let diff: Vec<f64> =
                            rows[a].iter().zip(&rows[b]).map(|(x, y)| x - y).collect();
                        let (_, se) = crate::working::mean_and_se(&diff);
                        if d > z * se {
                            m = d;
                        }
                    }
                    m
                })
                .collect();
            best = pair_min.into_iter().fold(best, f64::min);
        }
    }
    if best.is_finite() {
        Ok(DnEstimate {
            value: best / k,
            fallback: false,
        })
    } else {
        warn!("no positive risk gap found; falling back to d_n = 1/K");
        Ok(DnEstimate {
            value: 1.0 / k,
            fallback: true,
        })
    }
}

// ---------------------------------------------------------------- DAG priors

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DnChoice {
    Fixed { d: f64 },
    DataDriven { rule: DnRule },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DagPriorSpec {
    Uniform,
    /// `pi(g) ∝ exp(-n^alpha d_n |g|)`.
    Complexity {
        alpha: f64,
        d: DnChoice,
    },
}

impl DagPriorSpec {
    pub fn complexity(alpha: f64) -> DagPriorSpec {
        DagPriorSpec::Complexity {
            alpha,
            d: DnChoice::DataDriven {
                rule: DnRule::default(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DagPriorSpec::Uniform => Ok(()),
            DagPriorSpec::Complexity { alpha, d } => {
                if !(alpha > 0.5 && alpha < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "alpha = {alpha} outside (1/2, 1)"
                    )));
                }
                match d {
                    DnChoice::Fixed { d } if !(d > 0.0) => {
                        Err(Error::InvalidParameter("fixed d_n must be positive".into()))
                    }
                    DnChoice::DataDriven {
                        rule: DnRule::Significant { z },
                    } if !(z >= 0.0) => {
                        Err(Error::InvalidParameter("z must be non-negative".into()))
                    }
                    _ => Ok(()),
                }
            }
        }
    }

    pub fn needs_dn(&self) -> bool {
        matches!(self, DagPriorSpec::Complexity { .. })
    }
}

/// Unnormalised log prior of a DAG.
pub fn dag_log_prior(g: &Dag, spec: &DagPriorSpec, n: usize, d_n: f64) -> Result<f64> {
    spec.validate()?;
    match *spec {
        DagPriorSpec::Uniform => Ok(0.0),
        DagPriorSpec::Complexity { alpha, .. } => {
            if n == 0 || !(d_n > 0.0) {
                return Err(Error::InvalidParameter(
                    "complexity prior needs n >= 1 and d_n > 0".into(),
                ));
            }
            Ok(-(n as f64).powf(alpha) * d_n * g.edge_count() as f64)
        }
    }
}

// ---------------------------------------------------------------- posterior

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorRow {
    pub dag: Dag,
    pub log_marginal: f64,
    pub mc_std_error: f64,
    pub log_prior: f64,
    pub posterior: f64,
}

impl PosteriorRow {
    fn log_joint(&self) -> f64 {
        self.log_marginal + self.log_prior
    }
}

/// Posterior over a DAG list, rows sorted by posterior (descending).
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorTable {
    pub rows: Vec<PosteriorRow>,
    pub n: usize,
    pub d_n: Option<f64>,
}

impl PosteriorTable {
    pub fn row(&self, g: &Dag) -> Result<&PosteriorRow> {
        self.rows
            .iter()
            .find(|r| r.dag == *g)
            .ok_or_else(|| Error::MissingDag(g.to_text()))
    }

    pub fn posterior(&self, g: &Dag) -> Result<f64> {
        self.row(g).map(|r| r.posterior)
    }

    pub fn map_dag(&self) -> &Dag {
        &self.rows[0].dag
    }

    /// CSV with header `dag,log_marginal,log_prior,posterior`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dag,log_marginal,log_prior,posterior\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.10},{:.10},{:.12e}",
                r.dag.edge_label(),
                r.log_marginal,
                r.log_prior,
                r.posterior
            );
        }
        s
    }
}

pub fn posterior_table(
    marginals: &[(Dag, MarginalEstimate)],
    prior: &DagPriorSpec,
    n: usize,
    d_n: Option<f64>,
) -> Result<PosteriorTable> {
    if marginals.is_empty() {
        return Err(Error::Empty("marginals"));
    }
    let d = if prior.needs_dn() {
        match (prior, d_n) {
            (
                DagPriorSpec::Complexity {
                    d: DnChoice::Fixed { d },
                    ..
                },
                _,
            ) => *d,
            (_, Some(d)) => d,
            _ => {
                return Err(Error::InvalidParameter(
                    "complexity prior requires d_n".into(),
                ))
            }
        }
    } else {
        0.0
    };
    let mut rows = marginals
        .iter()
        .map(|(g, m)| {
            Ok(PosteriorRow {
                dag: *g,
                log_marginal: m.log_m,
                mc_std_error: m.mc_std_error,
                log_prior: dag_log_prior(g, prior, n, d)?,
                posterior: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max = rows
        .iter()
        .map(PosteriorRow::log_joint)
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = rows.iter().map(|r| (r.log_joint() - max).exp()).sum();
    for r in &mut rows {
        r.posterior = (r.log_joint() - max).exp() / z;
    }
    rows.sort_by(|a, b| b.posterior.total_cmp(&a.posterior));
    Ok(PosteriorTable {
        rows,
        n,
        d_n: prior.needs_dn().then_some(d),
    })
}

/// `(log BF(g1, g2), log posterior odds(g1, g2))`.
pub fn bayes_factor(table: &PosteriorTable, g1: &Dag, g2: &Dag) -> Result<(f64, f64)> {
    let (a, b) = (table.row(g1)?, table.row(g2)?);
    let bf = a.log_marginal - b.log_marginal;
    Ok((bf, bf + a.log_prior - b.log_prior))
}

/// `pi(g1) / (pi(g1) + pi(g2))`, evaluated in log space.
pub fn posterior_share(table: &PosteriorTable, g1: &Dag, g2: &Dag) -> Result<f64> {
    let (_, log_odds) = bayes_factor(table, g1, g2)?;
    if log_odds.is_nan() {
        return Err(Error::Numerical("zero posterior mass on both dags".into()));
    }
    Ok(1.0 / (1.0 + (-log_odds).exp()))
}

/// Posterior mass of a set of DAGs.
pub fn class_posterior(table: &PosteriorTable, class: &[Dag]) -> f64 {
    table
        .rows
        .iter()
        .filter(|r| class.contains(&r.dag))
        .map(|r| r.posterior)
        .sum()
}

/// Posterior over `dags` for one dataset, end to end.
#[derive(Clone, Debug)]
pub struct PosteriorRun {
    pub table: PosteriorTable,
    pub dn: Option<DnEstimate>,
}

pub fn posterior_for_data(
    data: &Dataset,
    dags: &[Dag],
    prior: &PriorSpec,
    dag_prior: &DagPriorSpec,
    m_samples: usize,
    seed: u64,
) -> Result<PosteriorRun> {
    dag_prior.validate()?;
    let fams = FamilyFits::compute(data, dags)?;
    let margs = FamilyMarginals::compute(data, &fams, prior, m_samples, seed)?;
    let marginals = dags
        .iter()
        .map(|g| margs.marginal(g).map(|m| (*g, m)))
        .collect::<Result<Vec<_>>>()?;
    let dn = match dag_prior {
        DagPriorSpec::Complexity {
            d: DnChoice::DataDriven { rule },
            ..
        } => Some(compute_dn_with(data, &fams, dags, *rule)?),
        DagPriorSpec::Complexity {
            d: DnChoice::Fixed { d },
            ..
        } => Some(DnEstimate {
            value: *d,
            fallback: false,
        }),
        DagPriorSpec::Uniform => None,
    };
    let table = posterior_table(&marginals, dag_prior, data.n(), dn.map(|d| d.value))?;
    Ok(PosteriorRun { table, dn })
}
