//! Ground-truth generator: linear recursive SEMs with Gaussian-scale-mixture
//! errors, `eps_j = lambda_j * z_j`, plus closed-form moment calculators.

use std::f64::consts::{LN_2, PI};
use std::io::{BufRead, Write};

use rand::Rng as _;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::graph::{Dag, EdgeCoefficients, NodeSet};
use crate::rng::{derived_stream, Rng};

/// Distribution of the mixing scale `lambda` of one error term.
///
/// Parameters of the `*OnSquare` variants describe the law of `lambda^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum MixingLaw {
    /// `lambda = sigma` almost surely (Gaussian error).
    PointMass { sigma: f64 },
    /// `lambda^2 ~ Exponential` with the given mean. Mean 2 gives Laplace(0, 1).
    ExpOnSquare { mean: f64 },
    /// `lambda^2 ~ InverseGamma(shape, scale)`. `(nu/2, nu/2)` gives Student t.
    InvGammaOnSquare { shape: f64, scale: f64 },
    /// `lambda ~ Uniform[lo, hi]`.
    UniformOnLambda { lo: f64, hi: f64 },
    /// `lambda^2` takes `values[i]` with probability `probs[i]`.
    DiscreteOnSquare { values: Vec<f64>, probs: Vec<f64> },
}

impl MixingLaw {
    /// Gaussian error with the given variance.
    pub fn gaussian(variance: f64) -> MixingLaw {
        MixingLaw::PointMass {
            sigma: variance.sqrt(),
        }
    }

    /// Student t with `nu` degrees of freedom.
    pub fn student_t(nu: f64) -> MixingLaw {
        MixingLaw::InvGammaOnSquare {
            shape: nu / 2.0,
            scale: nu / 2.0,
        }
    }

    /// Laplace(0, b): `lambda^2 ~ Exp(mean 2 b^2)`.
    pub fn laplace(b: f64) -> MixingLaw {
        MixingLaw::ExpOnSquare { mean: 2.0 * b * b }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        match self {
            MixingLaw::PointMass { sigma } if !(*sigma > 0.0 && sigma.is_finite()) => {
                bad("point mass requires sigma > 0")
            }
            MixingLaw::ExpOnSquare { mean } if !(*mean > 0.0 && mean.is_finite()) => {
                bad("exponential mixing requires mean > 0")
            }
            MixingLaw::InvGammaOnSquare { shape, scale } if !(*shape > 0.0 && *scale > 0.0) => {
                bad("inverse-gamma mixing requires shape, scale > 0")
            }
            MixingLaw::UniformOnLambda { lo, hi } if !(*lo > 0.0 && hi > lo) => {
                bad("uniform mixing requires 0 < lo < hi")
            }
            MixingLaw::DiscreteOnSquare { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return bad("discrete mixing needs matching non-empty values/probs");
                }
                if values.iter().any(|v| !(*v > 0.0)) || probs.iter().any(|q| !(*q > 0.0)) {
                    return bad("discrete mixing needs positive values and probabilities");
                }
                if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return bad("discrete mixing probabilities must sum to 1");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Gaussian error iff the mixing law is a point mass.
    pub fn is_degenerate(&self) -> bool {
        match self {
            MixingLaw::PointMass { .. } => true,
            MixingLaw::DiscreteOnSquare { values, .. } => {
                values.iter().all(|v| (v - values[0]).abs() == 0.0)
            }
            _ => false,
        }
    }

    pub fn sample_lambda(&self, rng: &mut Rng) -> f64 {
        match self {
            MixingLaw::PointMass { sigma } => *sigma,
            MixingLaw::ExpOnSquare { mean } => {
                let e: f64 = Exp1.sample(rng);
                (mean * e).sqrt()
            }
            MixingLaw::InvGammaOnSquare { shape, scale } => {
                let g = Gamma::new(*shape, 1.0)
                    .expect("validated shape")
                    .sample(rng);
                (scale / g).sqrt()
            }
            MixingLaw::UniformOnLambda { lo, hi } => rng.random_range(*lo..*hi),
            MixingLaw::DiscreteOnSquare { values, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, q) in values.iter().zip(probs) {
                    acc += q;
                    if u < acc {
                        return v.sqrt();
                    }
                }
                values[values.len() - 1].sqrt()
            }
        }
    }

    /// One error draw `lambda * z`.
    pub fn sample_error(&self, rng: &mut Rng) -> f64 {
        let lambda = self.sample_lambda(rng);
        let z: f64 = StandardNormal.sample(rng);
        lambda * z
    }

    /// `E[lambda]` in closed form.
    pub fn mean_abs_lambda(&self) -> Result<f64> {
        self.validate()?;
        Ok(match self {
            MixingLaw::PointMass { sigma } => *sigma,
            MixingLaw::ExpOnSquare { mean } => (mean * PI).sqrt() / 2.0,
            MixingLaw::InvGammaOnSquare { shape, scale } => {
                if *shape <= 0.5 {
                    return Err(Error::UndefinedMoment(format!(
                        "E[lambda] infinite for inverse-gamma shape {shape} <= 1/2"
                    )));
                }
                scale.sqrt() * (ln_gamma(shape - 0.5) - ln_gamma(*shape)).exp()
            }
            MixingLaw::UniformOnLambda { lo, hi } => (lo + hi) / 2.0,
            MixingLaw::DiscreteOnSquare { values, probs } => {
                values.iter().zip(probs).map(|(v, q)| q * v.sqrt()).sum()
            }
        })
    }

    /// `E|eps| = sqrt(2/pi) E[lambda]`.
    pub fn mean_abs_error(&self) -> Result<f64> {
        Ok((2.0 / PI).sqrt() * self.mean_abs_lambda()?)
    }

    /// `E[lambda^2]`, the error variance; `None` when infinite.
    pub fn second_moment(&self) -> Option<f64> {
        match self {
            MixingLaw::PointMass { sigma } => Some(sigma * sigma),
            MixingLaw::ExpOnSquare { mean } => Some(*mean),
            MixingLaw::InvGammaOnSquare { shape, scale } => {
                (*shape > 1.0).then(|| scale / (shape - 1.0))
            }
            MixingLaw::UniformOnLambda { lo, hi } => Some((lo * lo + lo * hi + hi * hi) / 3.0),
            MixingLaw::DiscreteOnSquare { values, probs } => {
                Some(values.iter().zip(probs).map(|(v, q)| q * v).sum())
            }
        }
    }

    /// Whether the finite-second-moment assumption of the consistency theory holds.
    pub fn has_finite_second_moment(&self) -> bool {
        self.second_moment().is_some()
    }
}

/// Linear recursive SEM: true DAG, non-zero edge coefficients and one mixing
/// law per node.
#[derive(Clone, Debug, PartialEq)]
pub struct ScmSpec {
    dag: Dag,
    coeffs: EdgeCoefficients,
    noise: Vec<MixingLaw>,
}

impl ScmSpec {
    pub fn new(dag: Dag, coeffs: EdgeCoefficients, noise: Vec<MixingLaw>) -> Result<ScmSpec> {
        coeffs.validate_for(&dag)?;
        if let Some(((k, j), _)) = coeffs.iter().find(|(_, v)| *v == 0.0 || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "coefficient on edge {}->{} must be finite and non-zero",
                k + 1,
                j + 1
            )));
        }
        if noise.len() != dag.p() {
            return Err(Error::InvalidParameter(format!(
                "{} noise laws for {} nodes",
                noise.len(),
                dag.p()
            )));
        }
        for law in &noise {
            law.validate()?;
        }
        Ok(ScmSpec { dag, coeffs, noise })
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn coeffs(&self) -> &EdgeCoefficients {
        &self.coeffs
    }

    pub fn noise(&self) -> &[MixingLaw] {
        &self.noise
    }

    pub fn p(&self) -> usize {
        self.dag.p()
    }

    /// Nodes whose mixing law is non-degenerate.
    pub fn nongaussian_set(&self) -> NodeSet {
        (0..self.p())
            .filter(|&j| !self.noise[j].is_degenerate())
            .collect()
    }

    /// Nodes whose error violates the finite-second-moment assumption.
    pub fn infinite_variance_nodes(&self) -> NodeSet {
        (0..self.p())
            .filter(|&j| !self.noise[j].has_finite_second_moment())
            .collect()
    }

    /// Exact minimum risk at the true DAG:
    /// `h_* = p (1 + log 2) + sum_j log E|eps_j|`.
    pub fn analytic_h_star(&self) -> Result<f64> {
        let mut h = self.p() as f64 * (1.0 + LN_2);
        for law in &self.noise {
            h += law.mean_abs_error()?.ln();
        }
        Ok(h)
    }

    /// Draws `n` rows. Node `j` uses its own stream keyed by `(seed, j)`.
    pub fn sample_dataset(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::InvalidParameter("n must be >= 1".into()));
        }
        let p = self.p();
        let order = self.dag.topological_order()?;
        let mut columns = vec![Vec::new(); p];
        for &j in order.as_slice() {
            let mut rng = derived_stream(seed, &[j as u64]);
            let mut col: Vec<f64> = (0..n)
                .map(|_| self.noise[j].sample_error(&mut rng))
                .collect();
            for k in self.dag.parents(j).iter() {
                let b = self.coeffs.get(k, j).expect("validated");
                for (x, &xk) in col.iter_mut().zip(&columns[k]) {
                    *x += b * xk;
                }
            }
            columns[j] = col;
        }
        Dataset::from_columns(columns)
    }
}

/// One edge of an [`ScmConfig`], 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeConfig {
    pub from: usize,
    pub to: usize,
    pub coef: f64,
}

/// Serialisable form of an [`ScmSpec`] (1-based node indices).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScmConfig {
    pub p: usize,
    #[serde(default)]
    pub edges: Vec<EdgeConfig>,
    pub noise: Vec<MixingLaw>,
}

impl TryFrom<ScmConfig> for ScmSpec {
    type Error = Error;

    fn try_from(c: ScmConfig) -> Result<ScmSpec> {
        let mut pairs = Vec::with_capacity(c.edges.len());
        let mut coeffs = EdgeCoefficients::new();
        for e in &c.edges {
            if e.from == 0 || e.to == 0 {
                return Err(Error::Parse("edge indices are 1-based".into()));
            }
            pairs.push((e.from - 1, e.to - 1));
            coeffs.set(e.from - 1, e.to - 1, e.coef);
        }
        let dag = Dag::from_edges(c.p, &pairs)?;
        ScmSpec::new(dag, coeffs, c.noise)
    }
}

impl From<&ScmSpec> for ScmConfig {
    fn from(s: &ScmSpec) -> ScmConfig {
        ScmConfig {
            p: s.p(),
            edges: s
                .coeffs
                .iter()
                .map(|((k, j), coef)| EdgeConfig {
                    from: k + 1,
                    to: j + 1,
                    coef,
                })
                .collect(),
            noise: s.noise.clone(),
        }
    }
}

impl Serialize for ScmSpec {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ScmConfig::from(self).serialize(ser)
    }
}

impl<'de> Deserialize<'de> for ScmSpec {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let c = ScmConfig::deserialize(de)?;
        ScmSpec::try_from(c).map_err(serde::de::Error::custom)
    }
}

/// Convenience free function mirroring [`ScmSpec::sample_dataset`].
pub fn sample_dataset(spec: &ScmSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.sample_dataset(n, seed)
}

/// `E[lambda]` of a mixing law.
pub fn mean_abs_lambda(law: &MixingLaw) -> Result<f64> {
    law.mean_abs_lambda()
}

/// `n x p` observations stored column-major; column `j` is variable `X_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n: usize,
    columns: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Dataset> {
        let n = columns.first().map(Vec::len).unwrap_or(0);
        if columns.is_empty() || n == 0 {
            return Err(Error::Empty("dataset"));
        }
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidParameter("ragged columns".into()));
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite observation".into()));
        }
        Ok(Dataset { n, columns })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Dataset> {
        let p = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidParameter("ragged rows".into()));
        }
        let columns = (0..p)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        Dataset::from_columns(columns)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.n);
        Dataset::from_columns(self.columns.iter().map(|c| c[..n].to_vec()).collect())
    }

    /// CSV with header `X1,...,Xp`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (1..=self.p()).map(|j| format!("X{j}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.n {
            let row: Vec<String> = self.columns.iter().map(|c| format!("{:?}", c[i])).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads CSV written by [`Dataset::write_csv`]; a non-numeric first line is
    /// treated as a header.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Dataset> {
        let mut rows = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|t| t.trim().parse::<f64>()).collect();
            match parsed {
                Ok(row) => rows.push(row),
                Err(_) if i == 0 => continue,
                Err(_) => return Err(Error::Parse(format!("bad numeric row {}", i + 1))),
            }
        }
        Dataset::from_rows(&rows)
    }
}
