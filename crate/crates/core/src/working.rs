//! Laplace-error working model: likelihood, LAD maximum likelihood, risk and
//! the Laplace-approximated evidence.

use std::collections::HashMap;
use std::f64::consts::{LN_2, PI};

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::bayes::{CoeffPrior, PriorSpec};
use crate::error::{Error, Result};
use crate::graph::{Dag, EdgeCoefficients, NodeSet};
use crate::lad::lad_fit;
use crate::scm::{Dataset, ScmSpec};

/// Lower bound on fitted scales; fits hitting it interpolate the data.
pub const THETA_FLOOR: f64 = 1e-12;

/// LAD fit of one node on one parent set.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFit {
    pub node: usize,
    pub parents: NodeSet,
    /// Coefficients in ascending parent order.
    pub coef: Vec<f64>,
    pub theta: f64,
    pub abs_sum: f64,
    pub rank_deficient: bool,
    /// `theta` was clamped to [`THETA_FLOOR`].
    pub degenerate: bool,
}

impl NodeFit {
    /// `-n log 2 - n log theta - n`, the node's maximised log-likelihood.
    pub fn max_loglik(&self, n: usize) -> f64 {
        let n = n as f64;
        -n * (1.0 + LN_2) - n * self.theta.ln()
    }

    pub fn residuals(&self, data: &Dataset) -> Vec<f64> {
        let mut r = data.column(self.node).to_vec();
        for (k, b) in self.parents.iter().zip(&self.coef) {
            for (ri, x) in r.iter_mut().zip(data.column(k)) {
                *ri -= b * x;
            }
        }
        r
    }
}

pub fn fit_node(data: &Dataset, node: usize, parents: NodeSet) -> Result<NodeFit> {
    check_node(data, node)?;
    let cols: Vec<&[f64]> = parents.iter().map(|k| data.column(k)).collect();
    if parents.contains(node) || parents.iter().any(|k| k >= data.p()) {
        return Err(Error::InvalidParameter(format!(
            "bad parent set {parents} for node {}",
            node + 1
        )));
    }
    let sol = lad_fit(data.column(node), &cols);
    if sol.rank_deficient {
        warn!(
            "rank-deficient design for node {} on parents {parents}; ridge-polished",
            node + 1
        );
    }
    let raw = sol.abs_sum / data.n() as f64;
    let degenerate = !(raw > THETA_FLOOR);
    Ok(NodeFit {
        node,
        parents,
        coef: sol.coef,
        theta: raw.max(THETA_FLOOR),
        abs_sum: sol.abs_sum,
        rank_deficient: sol.rank_deficient,
        degenerate,
    })
}

fn check_node(data: &Dataset, node: usize) -> Result<()> {
    if node >= data.p() {
        return Err(Error::NodeIndex { node, p: data.p() });
    }
    Ok(())
}

/// Maximum-likelihood fit of the working model for one DAG.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkingFit {
    pub dag: Dag,
    pub n: usize,
    pub nodes: Vec<NodeFit>,
    pub max_loglik: f64,
}

impl WorkingFit {
    fn assemble(dag: Dag, n: usize, nodes: Vec<NodeFit>) -> WorkingFit {
        let max_loglik = nodes.iter().map(|f| f.max_loglik(n)).sum();
        WorkingFit {
            dag,
            n,
            nodes,
            max_loglik,
        }
    }

    pub fn theta_hat(&self) -> Vec<f64> {
        self.nodes.iter().map(|f| f.theta).collect()
    }

    pub fn b_hat(&self, j: usize) -> &[f64] {
        &self.nodes[j].coef
    }

    pub fn coefficients(&self) -> EdgeCoefficients {
        let mut c = EdgeCoefficients::new();
        for f in &self.nodes {
            for (k, b) in f.parents.iter().zip(&f.coef) {
                c.set(k, f.node, *b);
            }
        }
        c
    }

    pub fn flagged(&self) -> bool {
        self.nodes.iter().any(|f| f.rank_deficient || f.degenerate)
    }

    /// `-max_loglik / n`.
    pub fn empirical_risk(&self) -> f64 {
        -self.max_loglik / self.n as f64
    }

    /// Per-row negative log-density at the fit:
    /// `c_i = sum_j (log 2 theta_j + |r_ij| / theta_j)`; their mean is the
    /// empirical risk.
    pub fn row_losses(&self, data: &Dataset) -> Vec<f64> {
        let mut out = vec![0.0; data.n()];
        for f in &self.nodes {
            let c = (2.0 * f.theta).ln();
            for (o, r) in out.iter_mut().zip(f.residuals(data)) {
                *o += c + r.abs() / f.theta;
            }
        }
        out
    }
}

pub fn fit_lad(data: &Dataset, g: &Dag) -> Result<WorkingFit> {
    if data.p() != g.p() {
        return Err(Error::Mismatch(data.p(), g.p()));
    }
    let nodes = (0..g.p())
        .map(|j| fit_node(data, j, g.parents(j)))
        .collect::<Result<Vec<_>>>()?;
    Ok(WorkingFit::assemble(*g, data.n(), nodes))
}

/// LAD fits for every (node, parent set) family used by a list of DAGs;
/// each family is fitted once.
#[derive(Clone, Debug)]
pub struct FamilyFits {
    n: usize,
    fits: HashMap<(usize, u16), NodeFit>,
}

impl FamilyFits {
    pub fn compute(data: &Dataset, dags: &[Dag]) -> Result<FamilyFits> {
        let mut keys: Vec<(usize, u16)> = dags
            .iter()
            .flat_map(|g| (0..g.p()).map(move |j| (j, g.parents(j).bits())))
            .collect();
        keys.sort_unstable();
        keys.dedup();
        let fits = keys
            .par_iter()
            .map(|&(j, bits)| fit_node(data, j, NodeSet::from_bits(bits)).map(|f| ((j, bits), f)))
            .collect::<Result<HashMap<_, _>>>()?;
        Ok(FamilyFits { n: data.n(), fits })
    }

    pub fn node(&self, j: usize, parents: NodeSet) -> Option<&NodeFit> {
        self.fits.get(&(j, parents.bits()))
    }

    pub fn fit(&self, g: &Dag) -> Result<WorkingFit> {
        let nodes = (0..g.p())
            .map(|j| {
                self.node(j, g.parents(j))
                    .cloned()
                    .ok_or_else(|| Error::MissingDag(g.to_text()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(WorkingFit::assemble(*g, self.n, nodes))
    }

    pub fn max_loglik(&self, g: &Dag) -> Result<f64> {
        (0..g.p())
            .map(|j| {
                self.node(j, g.parents(j))
                    .map(|f| f.max_loglik(self.n))
                    .ok_or_else(|| Error::MissingDag(g.to_text()))
            })
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NodeFit> {
        self.fits.values()
    }
}

/// Working-model log-likelihood at arbitrary `(b, theta)`.
pub fn log_likelihood(data: &Dataset, g: &Dag, b: &EdgeCoefficients, theta: &[f64]) -> Result<f64> {
    if data.p() != g.p() {
        return Err(Error::Mismatch(data.p(), g.p()));
    }
    b.validate_for(g)?;
    if theta.len() != g.p() || theta.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidParameter(
            "theta must be positive, one per node".into(),
        ));
    }
    let n = data.n() as f64;
    let mut ll = -n * g.p() as f64 * LN_2;
    for (j, &th) in theta.iter().enumerate() {
        let mut abs = 0.0;
        for i in 0..data.n() {
            let mut r = data.column(j)[i];
            for k in g.parents(j).iter() {
                r -= b.get(k, j).unwrap() * data.column(k)[i];
            }
            abs += r.abs();
        }
        ll -= n * th.ln() + abs / th;
    }
    Ok(ll)
}

/// Monte Carlo estimate of a population risk `h_gamma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_mc: usize,
}

pub(crate) fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Risk of `g` on a fixed sample, with an influence-function standard error.
pub fn risk_on_sample(data: &Dataset, fit: &WorkingFit) -> RiskEstimate {
    let (_, se) = mean_and_se(&fit.row_losses(data));
    RiskEstimate {
        value: fit.empirical_risk(),
        std_error: se,
        n_mc: data.n(),
    }
}

pub const MIN_RISK_SAMPLES: usize = 10_000;

/// `h_gamma` estimated as the empirical risk on a synthetic sample of size `n_mc`.
pub fn population_risk(spec: &ScmSpec, g: &Dag, n_mc: usize, seed: u64) -> Result<RiskEstimate> {
    if n_mc < MIN_RISK_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "n_mc = {n_mc} below minimum {MIN_RISK_SAMPLES}"
        )));
    }
    let data = spec.sample_dataset(n_mc, seed)?;
    let fit = fit_lad(&data, g)?;
    Ok(risk_on_sample(&data, &fit))
}

/// Gaussian-kernel density of `xs` at zero (Silverman bandwidth).
pub(crate) fn kde_at_zero(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let sd = mean_and_se(xs).1 * n.sqrt();
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((p * (n - 1.0)).round() as usize).min(sorted.len() - 1)];
    let iqr = (q(0.75) - q(0.25)) / 1.34;
    let spread = if iqr > 0.0 { sd.min(iqr) } else { sd };
    let h = (0.9 * spread * n.powf(-0.2)).max(1e-300);
    xs.iter()
        .map(|x| (-(x / h).powi(2) / 2.0).exp())
        .sum::<f64>()
        / (n * h * (2.0 * PI).sqrt())
}

/// Log prior density of one node's `(b, theta)`.
pub(crate) fn log_prior_density(
    prior: &PriorSpec,
    b: &[f64],
    theta: f64,
    gram: Option<&DMatrix<f64>>,
) -> f64 {
    let (a0, b0) = (prior.scale_shape, prior.scale_rate);
    let mut lp =
        a0 * b0.ln() - statrs::function::gamma::ln_gamma(a0) - (a0 + 1.0) * theta.ln() - b0 / theta;
    let k = b.len();
    if k == 0 {
        return lp;
    }
    match prior.coeff_prior {
        CoeffPrior::Ridge { tau2 } => {
            lp += b
                .iter()
                .map(|v| -0.5 * (2.0 * PI * tau2).ln() - v * v / (2.0 * tau2))
                .sum::<f64>();
        }
        CoeffPrior::GPrior { g } => {
            // N(0, g * 2 theta^2 * (D^T D)^{-1}); precision = (D^T D) / (2 g theta^2)
            let gram = gram.expect("g-prior needs the parent Gram matrix");
            let s = 2.0 * g * theta * theta;
            let bv = nalgebra::DVector::from_column_slice(b);
            let quad = (bv.transpose() * gram * &bv)[(0, 0)] / s;
            let logdet_prec = gram.determinant().ln() - k as f64 * s.ln();
            lp += -0.5 * k as f64 * (2.0 * PI).ln() + 0.5 * logdet_prec - 0.5 * quad;
        }
    }
    lp
}

pub(crate) fn parent_gram(data: &Dataset, parents: NodeSet) -> DMatrix<f64> {
    let cols: Vec<&[f64]> = parents.iter().map(|k| data.column(k)).collect();
    let k = cols.len();
    DMatrix::from_fn(k, k, |r, c| {
        cols[r].iter().zip(cols[c]).map(|(a, b)| a * b).sum()
    })
}

/// Laplace-approximation constant of one node: prior density at the MLE,
/// `(2 pi)^{d/2}` and `det(J)^{-1/2}` with the block-diagonal information
/// `J = diag(1/theta^2, (2 f(0) / theta) E[z z^T])`.
fn laplace_constant(data: &Dataset, f: &NodeFit, prior: &PriorSpec) -> Result<f64> {
    let k = f.parents.len();
    let n = data.n() as f64;
    let gram = parent_gram(data, f.parents);
    let mut logdet_j = -2.0 * f.theta.ln();
    if k > 0 {
        let dens = kde_at_zero(&f.residuals(data));
        if !(dens > 0.0) {
            return Err(Error::Numerical(
                "zero residual density at the median".into(),
            ));
        }
        let det_s = (&gram / n).determinant();
        if !(det_s > 0.0) {
            return Err(Error::Numerical("singular parent design".into()));
        }
        logdet_j += k as f64 * (2.0 * dens / f.theta).ln() + det_s.ln();
    }
    let lp = log_prior_density(prior, &f.coef, f.theta, Some(&gram));
    Ok(lp + 0.5 * (k + 1) as f64 * (2.0 * PI).ln() - 0.5 * logdet_j)
}

/// `max_loglik - ((p + |g|)/2) log n`, plus the estimated constant under the
/// default prior when `include_constant` is set.
pub fn laplace_log_marginal(data: &Dataset, g: &Dag, include_constant: bool) -> Result<f64> {
    laplace_log_marginal_with(data, g, include_constant.then(PriorSpec::default).as_ref())
}

pub fn laplace_log_marginal_with(
    data: &Dataset,
    g: &Dag,
    prior: Option<&PriorSpec>,
) -> Result<f64> {
    if data.n() < 2 {
        return Err(Error::InvalidParameter(
            "laplace approximation needs n >= 2".into(),
        ));
    }
    let fit = fit_lad(data, g)?;
    if fit.nodes.iter().any(|f| f.degenerate) {
        return Err(Error::Numerical(
            "degenerate fit (zero residual scale)".into(),
        ));
    }
    let d = (g.p() + g.edge_count()) as f64;
    let mut v = fit.max_loglik - 0.5 * d * (data.n() as f64).ln();
    if let Some(prior) = prior {
        for f in &fit.nodes {
            v += laplace_constant(data, f, prior)?;
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::lad::abs_residual_sum;
    use crate::rng::stream;
    use rand::Rng as _;

    fn ds(cols: Vec<Vec<f64>>) -> Dataset {
        Dataset::from_columns(cols).unwrap()
    }

    #[test]
    fn log_likelihood_hand_values() {
        let g = Dag::empty(1).unwrap();
        let e = EdgeCoefficients::new();
        let v = log_likelihood(&ds(vec![vec![0.0]]), &g, &e, &[1.0]).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
        let v = log_likelihood(&ds(vec![vec![1.0, -1.0]]), &g, &e, &[2.0]).unwrap();
        assert!((v - (2.0 * 0.25f64.ln() - 1.0)).abs() < 1e-12);
        assert!((v + 3.772_588_722_239_781).abs() < 1e-12);
        assert!(log_likelihood(&ds(vec![vec![1.0]]), &g, &e, &[0.0]).is_err());
    }

    #[test]
    fn log_likelihood_factorises() {
        let d = ds(vec![vec![0.3, -1.2, 2.0], vec![1.0, 0.5, -0.1]]);
        let g = Dag::empty(2).unwrap();
        let e = EdgeCoefficients::new();
        let both = log_likelihood(&d, &g, &e, &[0.7, 1.3]).unwrap();
        let a = log_likelihood(
            &ds(vec![d.column(0).to_vec()]),
            &Dag::empty(1).unwrap(),
            &e,
            &[0.7],
        )
        .unwrap();
        let b = log_likelihood(
            &ds(vec![d.column(1).to_vec()]),
            &Dag::empty(1).unwrap(),
            &e,
            &[1.3],
        )
        .unwrap();
        assert!((both - a - b).abs() < 1e-12);
    }

    #[test]
    fn root_node_scale_is_mean_abs() {
        let d = ds(vec![vec![1.0, -3.0, 2.0, 0.5]]);
        let f = fit_lad(&d, &Dag::empty(1).unwrap()).unwrap();
        assert!(f.b_hat(0).is_empty());
        assert!((f.theta_hat()[0] - 6.5 / 4.0).abs() < 1e-15);
    }

    fn check_invariants(data: &Dataset, fit: &WorkingFit) {
        let n = data.n() as f64;
        let p = fit.dag.p() as f64;
        let ident = -n * p * (1.0 + LN_2) - n * fit.theta_hat().iter().map(|t| t.ln()).sum::<f64>();
        assert!((fit.max_loglik - ident).abs() <= 1e-9 * ident.abs().max(1.0));
        let ll = log_likelihood(data, &fit.dag, &fit.coefficients(), &fit.theta_hat()).unwrap();
        assert!((ll - fit.max_loglik).abs() <= 1e-7 * ll.abs().max(1.0));
        for f in &fit.nodes {
            assert!(f.theta > 0.0);
            let cols: Vec<&[f64]> = f.parents.iter().map(|k| data.column(k)).collect();
            let y = data.column(f.node);
            for c in 0..f.coef.len() {
                for d in [1e-4, -1e-4] {
                    let mut b = f.coef.clone();
                    b[c] += d;
                    assert!(abs_residual_sum(y, &cols, &b) >= f.abs_sum - 1e-9 * n);
                }
            }
        }
    }

    #[test]
    fn fits_satisfy_invariants_on_all_p3_dags() {
        let data = catalog::study1().sample_dataset(400, 17).unwrap();
        for g in crate::graph::enumerate_dags(3).unwrap() {
            let fit = fit_lad(&data, &g).unwrap();
            check_invariants(&data, &fit);
        }
    }

    #[test]
    fn fitted_objective_beats_random_perturbations() {
        let data = catalog::study3().sample_dataset(200, 4).unwrap();
        let g = crate::graph::enumerate_dags(3)
            .unwrap()
            .into_iter()
            .max_by_key(|g| g.edge_count())
            .unwrap();
        let fit = fit_lad(&data, &g).unwrap();
        let mut rng = stream(99);
        for f in &fit.nodes {
            let cols: Vec<&[f64]> = f.parents.iter().map(|k| data.column(k)).collect();
            for _ in 0..1000 {
                let b: Vec<f64> = f
                    .coef
                    .iter()
                    .map(|c| c + rng.random_range(-0.05..0.05))
                    .collect();
                assert!(abs_residual_sum(data.column(f.node), &cols, &b) >= f.abs_sum - 1e-9);
            }
        }
    }

    #[test]
    fn family_cache_matches_direct_fits() {
        let data = catalog::study2().sample_dataset(300, 2).unwrap();
        let dags = crate::graph::enumerate_dags(3).unwrap();
        let fam = FamilyFits::compute(&data, &dags).unwrap();
        for g in &dags {
            assert_eq!(fam.fit(g).unwrap(), fit_lad(&data, g).unwrap());
        }
    }

    #[test]
    fn unit_variance_chain_reversed_fit() {
        // gamma = {1->3, 1->2, 3->2} on the unit-variance chain
        let data = catalog::unit_chain().sample_dataset(1_000_000, 21).unwrap();
        let g = Dag::from_edges(3, &[(0, 2), (0, 1), (2, 1)]).unwrap();
        let fit = fit_lad(&data, &g).unwrap();
        let c = fit.coefficients();
        assert!((c.get(0, 2).unwrap() - 4.5).abs() < 0.01);
        assert!((c.get(2, 1).unwrap() - 1.8 / 4.24).abs() < 0.01);
        assert!((c.get(0, 1).unwrap() - 2.5 / 4.24).abs() < 0.01);
    }

    #[test]
    fn risk_at_truth_matches_closed_form() {
        for (name, spec) in catalog::packaged() {
            let r = population_risk(&spec, spec.dag(), 200_000, 5).unwrap();
            let h = spec.analytic_h_star().unwrap();
            assert!(
                (r.value - h).abs() < 3.0 * r.std_error,
                "{name}: {} vs {h} (se {})",
                r.value,
                r.std_error
            );
        }
    }

    #[test]
    fn risk_requires_enough_samples() {
        let s = catalog::study1();
        assert!(population_risk(&s, s.dag(), 100, 1).is_err());
    }

    #[test]
    fn laplace_penalty_per_edge() {
        let data = catalog::study1().sample_dataset(500, 8).unwrap();
        let g = *catalog::study1().dag();
        let sup = Dag::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let a = laplace_log_marginal(&data, &g, false).unwrap();
        let b = laplace_log_marginal(&data, &sup, false).unwrap();
        let lla = fit_lad(&data, &g).unwrap().max_loglik;
        let llb = fit_lad(&data, &sup).unwrap().max_loglik;
        assert!(((a - lla) - (b - llb) - 0.5 * 500f64.ln()).abs() < 1e-9);
        assert!(laplace_log_marginal(&data, &g, true).unwrap().is_finite());
    }
}
