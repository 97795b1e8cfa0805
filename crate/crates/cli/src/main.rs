use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use dagsel::bayes::{posterior_for_data, DagPriorSpec, DnChoice, DnRule, PriorSpec};
use dagsel::harness::{builtin_study, run_experiment, ExperimentConfig, Scale};
use dagsel::oracle::classify;
use dagsel::{catalog, cpdag, distribution_equivalence_class, enumerate_dags, fit_lad, res_cpdag};
use dagsel::{Dag, Dataset, NodeSet, ScmSpec};

/// Bayesian DAG selection under a Laplace working model.
#[derive(Parser)]
#[command(name = "dagsel", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a replicated simulation study and write CSV summaries.
    Experiment {
        /// Packaged study: 1, 2a, 2b or 3.
        #[arg(long, conflicts_with = "config")]
        study: Option<String>,
        /// TOML experiment configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// full, desk, or a shrink factor in (0, 1].
        #[arg(long, default_value = "full")]
        scale: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a dataset from a packaged or TOML-described SEM.
    Simulate {
        /// Packaged spec name or a TOML file.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// LAD fit of the working model for one DAG.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// e.g. "p=3; edges=1->2,2->3".
        #[arg(long)]
        dag: Dag,
    },
    /// Posterior over every DAG on the data's nodes (p <= 5).
    Posterior {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = PriorKind::Uniform)]
        prior: PriorKind,
        #[arg(long, default_value_t = 0.99)]
        alpha: f64,
        /// Fixed d_n; data-driven when omitted.
        #[arg(long)]
        d: Option<f64>,
        #[arg(long, value_enum, default_value_t = DnKind::Significant)]
        dn_rule: DnKind,
        /// Significance level (in standard errors) for the `significant` rule.
        #[arg(long, default_value_t = 3.0)]
        z: f64,
        #[arg(long, default_value_t = 10_000)]
        mc_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// CPDAG of a DAG.
    Cpdag {
        #[arg(long)]
        dag: Dag,
    },
    /// Restricted CPDAG given the non-Gaussian nodes.
    Rescpdag {
        #[arg(long)]
        dag: Dag,
        /// Comma-separated 1-based node list.
        #[arg(long, default_value = "")]
        ng: String,
    },
    /// Distribution-equivalence class (p <= 5).
    Declass {
        #[arg(long)]
        dag: Dag,
        #[arg(long, default_value = "")]
        ng: String,
    },
    /// Monte Carlo risk classes of a spec (p <= 4).
    Oracle {
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 1_000_000)]
        n_mc: usize,
        #[arg(long, default_value_t = 3.0)]
        tol_sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the risk-gap CSV (stdout after the report otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List every DAG on p nodes (p <= 5).
    Enumerate {
        #[arg(long)]
        p: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorKind {
    Uniform,
    Complexity,
}

#[derive(Clone, Copy, ValueEnum)]
enum DnKind {
    Literal,
    Significant,
}

fn load_spec(s: &str) -> Result<ScmSpec> {
    if let Some(spec) = catalog::by_name(s) {
        return Ok(spec);
    }
    let path = Path::new(s);
    if !path.exists() {
        bail!(
            "unknown spec {s:?}: not a file and not one of {}",
            catalog::SPEC_NAMES.join(", ")
        );
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {s}"))?;
    toml::from_str(&text).with_context(|| format!("parsing {s}"))
}

fn load_data(path: &Path) -> Result<Dataset> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Dataset::read_csv(BufReader::new(f))?)
}

fn parse_ng(s: &str, p: usize) -> Result<NodeSet> {
    let mut set = NodeSet::EMPTY;
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let j: usize = tok.parse().with_context(|| format!("bad node {tok:?}"))?;
        if j == 0 || j > p {
            bail!("node {j} outside 1..={p}");
        }
        set.insert(j - 1);
    }
    Ok(set)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(io::stdout().write_all(text.as_bytes())?),
    }
}

fn join_f64(v: impl Iterator<Item = f64>) -> String {
    v.map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Experiment {
            study,
            config,
            scale,
            seed,
            threads,
            out,
        } => {
            let mut cfg = match (study, config) {
                (Some(id), None) => builtin_study(&id)?,
                (None, Some(path)) => ExperimentConfig::from_toml(
                    &fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?,
                )?,
                _ => bail!("pass exactly one of --study or --config"),
            };
            cfg = cfg.scaled(scale.parse::<Scale>()?);
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if threads.is_some() {
                cfg.threads = threads;
            }
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from(format!("out/{}", cfg.name)));
            let res = run_experiment(&cfg)?;
            res.write_to(&dir)?;
            print!("{}", res.summary_csv());
            eprintln!(
                "wrote {} rows ({} failures) to {}",
                res.rows.len(),
                res.failures.len(),
                dir.display()
            );
        }
        Cmd::Simulate { spec, n, seed, out } => {
            let data = load_spec(&spec)?.sample_dataset(n, seed)?;
            let mut buf = Vec::new();
            data.write_csv(&mut buf)?;
            emit(out.as_deref(), std::str::from_utf8(&buf)?)?;
        }
        Cmd::Fit { data, dag } => {
            let data = load_data(&data)?;
            let fit = fit_lad(&data, &dag)?;
            let mut s = String::from("node,parents,b_hat,theta_hat,max_loglik\n");
            for f in &fit.nodes {
                let pa: Vec<String> = f.parents.iter().map(|k| (k + 1).to_string()).collect();
                s += &format!(
                    "{},{},{},{},{}\n",
                    f.node + 1,
                    pa.join(";"),
                    join_f64(f.coef.iter().copied()),
                    f.theta,
                    f.max_loglik(data.n())
                );
            }
            s += &format!("total,,,,{}\n", fit.max_loglik);
            emit(None, &s)?;
            if fit.flagged() {
                eprintln!("warning: rank-deficient or degenerate node fit");
            }
        }
        Cmd::Posterior {
            data,
            prior,
            alpha,
            d,
            dn_rule,
            z,
            mc_samples,
            seed,
        } => {
            let data = load_data(&data)?;
            let dags = enumerate_dags(data.p())?;
            let dag_prior = match prior {
                PriorKind::Uniform => DagPriorSpec::Uniform,
                PriorKind::Complexity => DagPriorSpec::Complexity {
                    alpha,
                    d: match (d, dn_rule) {
                        (Some(d), _) => DnChoice::Fixed { d },
                        (None, DnKind::Literal) => DnChoice::DataDriven {
                            rule: DnRule::Literal,
                        },
                        (None, DnKind::Significant) => DnChoice::DataDriven {
                            rule: DnRule::Significant { z },
                        },
                    },
                },
            };
            let run = posterior_for_data(
                &data,
                &dags,
                &PriorSpec::default(),
                &dag_prior,
                mc_samples,
                seed,
            )?;
            emit(None, &run.table.to_csv())?;
            if let Some(dn) = run.dn {
                eprintln!(
                    "d_n = {}{}",
                    dn.value,
                    if dn.fallback { " (fallback 1/K)" } else { "" }
                );
            }
        }
        Cmd::Cpdag { dag } => println!("{}", cpdag(&dag)),
        Cmd::Rescpdag { dag, ng } => {
            let ng = parse_ng(&ng, dag.p())?;
            println!("{}", res_cpdag(&dag, ng)?);
        }
        Cmd::Declass { dag, ng } => {
            let ng = parse_ng(&ng, dag.p())?;
            for g in distribution_equivalence_class(&dag, ng)? {
                println!("{g}");
            }
        }
        Cmd::Oracle {
            spec,
            n_mc,
            tol_sigma,
            seed,
            out,
        } => {
            let spec = load_spec(&spec)?;
            let rep = classify(&spec, n_mc, tol_sigma, seed)?;
            println!("{rep}");
            let mut csv = String::from("dag,risk,delta,std_error,psi\n");
            for r in &rep.gaps {
                csv += &format!(
                    "{},{},{},{},{}\n",
                    r.dag.edge_label(),
                    r.risk,
                    r.delta,
                    r.std_error,
                    r.psi
                );
            }
            if out.is_none() {
                println!();
            }
            emit(out.as_deref(), &csv)?;
            if !rep.well_separated() {
                eprintln!(
                    "warning: smallest separation {:.2} sigma; increase --n-mc",
                    rep.min_separation
                );
            }
        }
        Cmd::Enumerate { p } => {
            for g in enumerate_dags(p)? {
                println!("{g}");
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
