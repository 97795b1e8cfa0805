//! Replicated simulation experiments: sample data, build the posterior over
//! all DAGs, record class posteriors, and summarise per sample size.
//!
//! Every replicate draws from streams keyed by `(master_seed, n, replicate)`,
//! and results are merged in `(n, replicate)` order, so the CSV output does
//! not depend on the thread count.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{class_posterior, posterior_for_data, posterior_share, DagPriorSpec, PriorSpec};
use crate::catalog;
use crate::equivalence::distribution_equivalence_class;
use crate::error::{Error, Result};
use crate::graph::{enumerate_dags, Dag};
use crate::rng::derive_seed;
use crate::scm::ScmSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub scm: ScmSpec,
    pub n_list: Vec<usize>,
    pub replicates: usize,
    pub mc_samples: usize,
    pub prior: DagPriorSpec,
    #[serde(default)]
    pub param_prior: PriorSpec,
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Report the posterior share of the true DAG against this DAG.
    #[serde(default)]
    pub share_with: Option<Dag>,
    /// Worker threads; `None` uses the global rayon pool.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() || self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "n_list must be non-empty and strictly ascending".into(),
            ));
        }
        if self.n_list[0] == 0 {
            return Err(Error::Config("sample sizes must be positive".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        if let Some(g) = &self.share_with {
            if g.p() != self.scm.p() {
                return Err(Error::Mismatch(g.p(), self.scm.p()));
            }
        }
        self.prior.validate()?;
        self.param_prior.validate()
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn scaled(mut self, scale: Scale) -> ExperimentConfig {
        match scale {
            Scale::Full => {}
            Scale::Desk => {
                self.replicates = 20;
                self.n_list = vec![400, 1600, 6400];
                self.mc_samples = 4000;
            }
            Scale::Factor(f) => {
                let shrink = |v: usize, min: usize| ((v as f64 * f).round() as usize).max(min);
                self.replicates = shrink(self.replicates, 1);
                self.mc_samples = shrink(self.mc_samples, crate::bayes::MIN_M_SAMPLES);
                let mut ns: Vec<usize> = self.n_list.iter().map(|&n| shrink(n, 50)).collect();
                ns.dedup();
                self.n_list = ns;
            }
        }
        self
    }
}

/// Run-size presets. `Desk`: 20 replicates, n in {400, 1600, 6400}, 4000
/// importance samples. `Factor(f)`: multiplies replicates, importance samples
/// and every n by `f` (floors 1, 100 and 50).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scale {
    Full,
    Desk,
    Factor(f64),
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Scale> {
        match s {
            "full" => Ok(Scale::Full),
            "desk" => Ok(Scale::Desk),
            _ => match s.parse::<f64>() {
                Ok(f) if f > 0.0 && f <= 1.0 => Ok(Scale::Factor(f)),
                _ => Err(Error::Parse(format!(
                    "scale must be full, desk or a factor in (0, 1]: {s}"
                ))),
            },
        }
    }
}

/// The packaged study configurations: `1`, `2a`, `2b`, `3`.
pub fn builtin_study(id: &str) -> Result<ExperimentConfig> {
    let base = |name: &str, scm: ScmSpec, prior: DagPriorSpec| ExperimentConfig {
        name: name.to_string(),
        scm,
        n_list: vec![1600, 3200, 6400, 12800],
        replicates: 100,
        mc_samples: crate::bayes::DEFAULT_M_SAMPLES,
        prior,
        param_prior: PriorSpec::default(),
        master_seed: 20_240_601,
        output_dir: None,
        share_with: None,
        threads: None,
    };
    Ok(match id {
        "1" => base("study1", catalog::study1(), DagPriorSpec::Uniform),
        "2a" => base("study2a", catalog::study2(), DagPriorSpec::Uniform),
        "2b" => base("study2b", catalog::study2(), DagPriorSpec::complexity(0.99)),
        "3" => {
            let mut c = base("study3", catalog::study3(), DagPriorSpec::complexity(0.99));
            c.share_with = Some(Dag::from_edges(3, &[(0, 2), (0, 1), (2, 1)])?);
            c
        }
        _ => {
            return Err(Error::Config(format!(
                "unknown study id {id:?} (expected 1, 2a, 2b, 3)"
            )))
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateResult {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    /// Posterior mass of the distribution-equivalence class of the true DAG.
    pub class_posterior: f64,
    pub posterior_true: f64,
    pub share: Option<f64>,
    pub map_dag: Dag,
    pub d_n: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateFailure {
    pub n: usize,
    pub replicate: usize,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub class: Vec<Dag>,
    pub rows: Vec<ReplicateResult>,
    pub failures: Vec<ReplicateFailure>,
}

pub fn replicate_seed(master: u64, n: usize, replicate: usize) -> u64 {
    derive_seed(master, &[n as u64, replicate as u64])
}

fn run_replicate(
    cfg: &ExperimentConfig,
    dags: &[Dag],
    class: &[Dag],
    n: usize,
    replicate: usize,
) -> Result<ReplicateResult> {
    let start = Instant::now();
    let seed = replicate_seed(cfg.master_seed, n, replicate);
    let data = cfg.scm.sample_dataset(n, derive_seed(seed, &[0]))?;
    let run = posterior_for_data(
        &data,
        dags,
        &cfg.param_prior,
        &cfg.prior,
        cfg.mc_samples,
        derive_seed(seed, &[1]),
    )?;
    let gstar = cfg.scm.dag();
    let share = match &cfg.share_with {
        Some(g) => Some(posterior_share(&run.table, gstar, g)?),
        None => None,
    };
    Ok(ReplicateResult {
        n,
        replicate,
        seed,
        class_posterior: class_posterior(&run.table, class),
        posterior_true: run.table.posterior(gstar)?,
        share,
        map_dag: *run.table.map_dag(),
        d_n: run.dn.map(|d| d.value),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let dags = enumerate_dags(cfg.scm.p())?;
    let mut class = distribution_equivalence_class(cfg.scm.dag(), cfg.scm.nongaussian_set())?;
    class.sort();
    let tasks: Vec<(usize, usize)> = cfg
        .n_list
        .iter()
        .flat_map(|&n| (0..cfg.replicates).map(move |r| (n, r)))
        .collect();
    info!(
        "{}: {} replicates over n = {:?}",
        cfg.name,
        tasks.len(),
        cfg.n_list
    );
    let work = || -> Vec<Result<ReplicateResult>> {
        tasks
            .par_iter()
            .map(|&(n, r)| run_replicate(cfg, &dags, &class, n, r))
            .collect()
    };
    let results = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (&(n, replicate), res) in tasks.iter().zip(results) {
        match res {
            Ok(r) => rows.push(r),
            Err(e) => {
                warn!("replicate n={n} r={replicate} failed: {e}");
                failures.push(ReplicateFailure {
                    n,
                    replicate,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(ExperimentOutput {
        config: cfg.clone(),
        class,
        rows,
        failures,
    })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub metric: &'static str,
    pub n: usize,
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub const HIST_BINS: usize = 20;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ExperimentOutput {
    /// Values of a metric (`class_posterior`, `posterior_true`, `share`) at `n`.
    pub fn metric(&self, metric: &str, n: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.n == n)
            .filter_map(|r| match metric {
                "class_posterior" => Some(r.class_posterior),
                "posterior_true" => Some(r.posterior_true),
                "share" => r.share,
                _ => None,
            })
            .collect()
    }

    fn metrics(&self) -> Vec<&'static str> {
        let mut m = vec!["class_posterior", "posterior_true"];
        if self.config.share_with.is_some() {
            m.push("share");
        }
        m
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut out = Vec::new();
        for metric in self.metrics() {
            for &n in &self.config.n_list {
                let mut v = self.metric(metric, n);
                if v.is_empty() {
                    continue;
                }
                v.sort_by(f64::total_cmp);
                out.push(SummaryRow {
                    metric,
                    n,
                    count: v.len(),
                    mean: v.iter().sum::<f64>() / v.len() as f64,
                    min: v[0],
                    q1: quantile(&v, 0.25),
                    median: quantile(&v, 0.5),
                    q3: quantile(&v, 0.75),
                    max: v[v.len() - 1],
                });
            }
        }
        out
    }

    pub fn median(&self, metric: &str, n: usize) -> f64 {
        let mut v = self.metric(metric, n);
        v.sort_by(f64::total_cmp);
        quantile(&v, 0.5)
    }

    /// `n,replicate,seed,class_posterior,posterior_true,share,map_dag,d_n`.
    pub fn results_csv(&self) -> String {
        let mut s =
            String::from("n,replicate,seed,class_posterior,posterior_true,share,map_dag,d_n\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.n,
                r.replicate,
                r.seed,
                r.class_posterior,
                r.posterior_true,
                opt(r.share),
                r.map_dag.edge_label(),
                opt(r.d_n)
            );
        }
        s
    }

    /// `metric,n,count,mean,min,q1,median,q3,max`.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("metric,n,count,mean,min,q1,median,q3,max\n");
        for r in self.summary() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.metric, r.n, r.count, r.mean, r.min, r.q1, r.median, r.q3, r.max
            );
        }
        s
    }

    /// `metric,n,bin_lo,bin_hi,count` with 20 bins of width 0.05 on [0, 1].
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("metric,n,bin_lo,bin_hi,count\n");
        for metric in self.metrics() {
            for &n in &self.config.n_list {
                let mut counts = [0usize; HIST_BINS];
                for v in self.metric(metric, n) {
                    let b = ((v * HIST_BINS as f64).floor() as usize).min(HIST_BINS - 1);
                    counts[b] += 1;
                }
                for (b, c) in counts.iter().enumerate() {
                    let lo = b as f64 / HIST_BINS as f64;
                    let hi = (b + 1) as f64 / HIST_BINS as f64;
                    let _ = writeln!(s, "{metric},{n},{lo:.2},{hi:.2},{c}");
                }
            }
        }
        s
    }

    pub fn failures_csv(&self) -> String {
        let mut s = String::from("n,replicate,error\n");
        for f in &self.failures {
            let _ = writeln!(
                s,
                "{},{},\"{}\"",
                f.n,
                f.replicate,
                f.error.replace('"', "'")
            );
        }
        s
    }

    /// `n,replicate,wall_ms`; kept apart from the deterministic outputs.
    pub fn timing_csv(&self) -> String {
        let mut s = String::from("n,replicate,wall_ms\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:.3}", r.n, r.replicate, r.wall_ms);
        }
        s
    }

    /// Writes `results.csv`, `summary.csv`, `histogram.csv`, `failures.csv`,
    /// `timing.csv` and the effective `config.toml` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("results.csv"), self.results_csv())?;
        fs::write(dir.join("summary.csv"), self.summary_csv())?;
        fs::write(dir.join("histogram.csv"), self.histogram_csv())?;
        fs::write(dir.join("failures.csv"), self.failures_csv())?;
        fs::write(dir.join("timing.csv"), self.timing_csv())?;
        fs::write(dir.join("config.toml"), self.config.to_toml()?)?;
        Ok(())
    }
}
