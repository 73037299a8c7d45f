//! Subcommand pipelines. Every output file carries the config hash and seed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use roughbridge::bridge::{bridge_consistency_test, kernel_conditioned_ensemble, sample_model_paths, ConsistencyParams};
use roughbridge::gaussian::{CovarianceModel, FbmSampler};
use roughbridge::io::{
    read_ensemble_csv, read_json, write_comment, write_csv_rows, write_ensemble_csv, write_json, write_jsonl,
    write_rough_path, write_weights_csv, EnsembleMetadata,
};
use roughbridge::ldp::{rate_endpoint, tail_probe, varadhan_sweep, RateProblem, TailParams, VaradhanParams};
use roughbridge::lift::{cauchy_rate_estimate, lift_dyadic, LiftSummary};
use roughbridge::path_spaces::{GridPath, NormMode};
use roughbridge::rng::derive_seed;
use roughbridge::solvers::{solve_rde, solve_young, SolutionPath};
use serde::Serialize;

use crate::config::{
    BridgeConfig, ExperimentConfig, LiftConfig, PathSource, RateConfig, SampleConfig, SolveConfig, TailConfig,
    VaradhanConfig,
};
use crate::CliError;

/// Resolved run context.
pub struct Run {
    pub config: ExperimentConfig,
    pub hash: String,
    pub out: PathBuf,
}

impl Run {
    pub fn new(config: ExperimentConfig, out: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&out)?;
        Ok(Self {
            hash: config.hash(),
            config,
            out,
        })
    }

    fn seed(&self) -> u64 {
        self.config.seed
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn csv_file(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let mut w = BufWriter::new(File::create(self.path(name))?);
        write_comment(&mut w, &[("config_hash", self.hash.clone()), ("seed", self.seed().to_string())])?;
        Ok(w)
    }

    fn json<T: Serialize>(&self, name: &str, body: T) -> Result<(), CliError> {
        write_json(
            self.path(name),
            &Stamped {
                config_hash: &self.hash,
                seed: self.seed(),
                created: None,
                body,
            },
        )?;
        Ok(())
    }

    /// JSON metadata, the only place a timestamp appears.
    fn metadata<T: Serialize>(&self, name: &str, body: T) -> Result<(), CliError> {
        write_json(
            self.path(name),
            &Stamped {
                config_hash: &self.hash,
                seed: self.seed(),
                created: Some(timestamp()),
                body,
            },
        )?;
        Ok(())
    }
}

#[derive(Serialize)]
struct Stamped<'a, T> {
    config_hash: &'a str,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    created: Option<String>,
    #[serde(flatten)]
    body: T,
}

fn timestamp() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("{secs}")
}

fn block<'a, T>(b: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    b.as_ref()
        .ok_or_else(|| CliError::Validation(format!("config has no `{name}` block")))
}

pub fn cmd_sample(run: &Run) -> Result<Vec<PathBuf>, CliError> {
    let c: &SampleConfig = block(&run.config.sample, "sample")?;
    c.validate()?;
    let model = CovarianceModel::new(c.hurst.clone(), c.horizon)?;
    let paths = FbmSampler::new(&model, c.level)?.sample_many(run.seed(), c.n_paths);
    let mut w = run.csv_file("ensemble.csv")?;
    write_ensemble_csv(&mut w, &paths)?;
    w.flush()?;
    let meta = EnsembleMetadata {
        hurst: c.hurst.clone(),
        horizon: c.horizon,
        level: c.level,
        dim: model.dim(),
        n_paths: c.n_paths,
        seed: run.seed(),
        config_hash: run.hash.clone(),
        created: Some(timestamp()),
    };
    write_json(run.path("ensemble.json"), &meta)?;
    Ok(vec![run.path("ensemble.csv"), run.path("ensemble.json")])
}

/// Load an ensemble from its metadata file; the CSV sits next to it.
pub fn load_ensemble(metadata: &Path) -> Result<(EnsembleMetadata, Vec<GridPath<f64>>), CliError> {
    let meta: EnsembleMetadata = read_json(metadata)?;
    let csv = metadata.with_extension("csv");
    let paths = read_ensemble_csv(File::open(csv)?, &meta)?;
    Ok((meta, paths))
}

fn polygon(dim: usize, level: u32, horizon: f64) -> Result<GridPath<f64>, CliError> {
    // four linear pieces through fixed nodes
    let node = |k: usize, j: usize| ((k * (j + 2)) as f64 * 0.9).sin();
    Ok(GridPath::from_fn(dim, horizon, level, |t: f64| {
        let s = (4.0 * t / horizon).min(4.0);
        let k = (s.floor() as usize).min(3);
        let f = s - k as f64;
        (0..dim).map(|j| node(k, j) * (1.0 - f) + node(k + 1, j) * f).collect()
    })?)
}

#[derive(Serialize)]
struct LiftLine<'a> {
    config_hash: &'a str,
    seed: u64,
    index: usize,
    exact_convergence: bool,
    summary: LiftSummary,
}

pub fn cmd_lift(run: &Run) -> Result<Vec<PathBuf>, CliError> {
    let c: &LiftConfig = block(&run.config.lift, "lift")?;
    c.validate()?;
    let paths = match &c.source {
        PathSource::Ensemble { metadata } => {
            let (meta, paths) = load_ensemble(Path::new(metadata))?;
            let min_h = meta.hurst.iter().copied().fold(f64::INFINITY, f64::min);
            if c.mode.alpha() >= min_h {
                log::warn!(
                    "alpha = {} is not below the smallest Hurst index {min_h}; the lift runs in a diagnostic regime",
                    c.mode.alpha()
                );
            }
            paths
        }
        PathSource::Polygon { dim, level, horizon } => vec![polygon(*dim, *level, *horizon)?],
    };
    let records = roughbridge::lift::lift_ensemble(&paths, c.mode, c.tol)?;
    let lines: Vec<LiftLine> = records
        .iter()
        .enumerate()
        .map(|(index, r)| LiftLine {
            config_hash: &run.hash,
            seed: run.seed(),
            index,
            exact_convergence: r.converged && r.distances.last().is_some_and(|d| *d <= 1e-12),
            summary: r.summary(),
        })
        .collect();
    let mut files = vec![run.path("lift.jsonl")];
    let mut w = BufWriter::new(File::create(run.path("lift.jsonl"))?);
    write_jsonl(&mut w, &lines)?;
    let rough_dir = run.path("rough");
    fs::create_dir_all(&rough_dir)?;
    for (i, r) in records.iter().enumerate() {
        let p = rough_dir.join(format!("path_{i:05}.rgh"));
        let mut w = BufWriter::new(File::create(&p)?);
        write_rough_path(&mut w, &r.rough_path, Some(&run.hash), Some(run.seed()))?;
        files.push(p);
    }
    if records.len() > 1 {
        match cauchy_rate_estimate(&records, c.q) {
            Ok((fit, per_level)) => {
                #[derive(Serialize)]
                struct Pooled {
                    q: f64,
                    fit: roughbridge::lift::RateFit,
                    per_level: Vec<(u32, f64)>,
                }
                run.json(
                    "cauchy.json",
                    Pooled {
                        q: c.q,
                        fit,
                        per_level,
                    },
                )?;
                files.push(run.path("cauchy.json"));
            }
            Err(e) => log::warn!("pooled Cauchy rate not available: {e}"),
        }
    }
    Ok(files)
}

fn lift_degree(hurst: &[f64], alpha: Option<f64>) -> Result<Option<usize>, CliError> {
    let min_h = hurst.iter().copied().fold(f64::INFINITY, f64::min);
    if min_h > 0.5 {
        return Ok(None);
    }
    let alpha = alpha.unwrap_or(min_h - 0.05);
    Ok(Some(NormMode::Holder { alpha }.degree()?))
}

pub fn cmd_solve(run: &Run) -> Result<Vec<PathBuf>, CliError> {
    let c: &SolveConfig = block(&run.config.solve, "solve")?;
    c.validate()?;
    let sys = c.fields.build::<f64>()?;
    let model = CovarianceModel::new(c.hurst.clone(), c.horizon)?;
    let degree = lift_degree(&c.hurst, c.alpha)?;
    let sampler = FbmSampler::new(&model, c.level)?;
    let drivers = sampler.sample_many(run.seed(), c.n_paths);
    let sols: Vec<SolutionPath<f64>> = drivers
        .iter()
        .map(|w| match degree {
            None => solve_young(&sys, w, &c.a, c.beta),
            Some(k) => solve_rde(&sys, &lift_dyadic(w, c.level, k)?, &c.a, c.beta),
        })
        .collect::<Result<_, _>>()?;
    let paths: Vec<GridPath<f64>> = sols.iter().map(|s| s.path.clone()).collect();
    let mut w = run.csv_file("solutions.csv")?;
    write_ensemble_csv(&mut w, &paths)?;
    w.flush()?;
    let meta = EnsembleMetadata {
        hurst: c.hurst.clone(),
        horizon: c.horizon,
        level: c.level,
        dim: sys.state_dim(),
        n_paths: c.n_paths,
        seed: run.seed(),
        config_hash: run.hash.clone(),
        created: Some(timestamp()),
    };
    write_json(run.path("solutions.json"), &meta)?;
    #[derive(Serialize)]
    struct SolveReport {
        scheme: roughbridge::solvers::Scheme,
        error_estimates: Vec<Option<f64>>,
    }
    run.json(
        "solve_report.json",
        SolveReport {
            scheme: sols[0].scheme,
            error_estimates: sols.iter().map(|s| s.error_estimate).collect(),
        },
    )?;
    Ok(vec![run.path("solutions.csv"), run.path("solutions.json"), run.path("solve_report.json")])
}

pub fn cmd_bridge(run: &Run) -> Result<Vec<PathBuf>, CliError> {
    let c: &BridgeConfig = block(&run.config.bridge, "bridge")?;
    c.validate()?;
    let model = c.model.as_transition();
    let paths = sample_model_paths(model.as_ref(), &c.a, c.horizon, c.level, c.n_paths, run.seed())?;
    let report = bridge_consistency_test(
        model.as_ref(),
        &paths,
        &c.times,
        &c.a,
        &c.b,
        ConsistencyParams {
            sigma: c.sigma,
            n_boot: c.n_boot,
            n_exact: c.n_exact,
            seed: derive_seed(run.seed(), 1),
        },
    )?;
    run.json("bridge.json", &report)?;
    let ens = kernel_conditioned_ensemble(&paths, &c.b, c.sigma)?;
    let mut w = run.csv_file("weights.csv")?;
    write_weights_csv(&mut w, &ens.weights)?;
    Ok(vec![run.path("bridge.json"), run.path("weights.csv")])
}

fn rate_problem(c: &RateConfig) -> Result<RateProblem, CliError> {
    let sys = c.fields.build::<f64>()?;
    let model = CovarianceModel::new(c.hurst.clone(), c.horizon)?;
    let mut p = RateProblem::new(sys, c.a.clone(), c.b.clone(), c.beta0, model)?;
    p.control_level = c.control_level;
    p.solve_level = c.solve_level;
    p.settings = c.optimizer;
    p.validate()?;
    Ok(p)
}

pub fn cmd_rate(run: &Run) -> Result<Vec<PathBuf>, CliError> {
    let c: &RateConfig = block(&run.config.rate, "rate")?;
    c.validate("rate")?;
    let result = rate_endpoint(&rate_problem(c)?)?;
    run.json("rate.json", &result)?;
    Ok(vec![run.path("rate.json")])
}

pub fn cmd_varadhan(run: &Run) -> Result<Vec<PathBuf>, CliError> {
    let c: &VaradhanConfig = block(&run.config.varadhan, "varadhan")?;
    c.validate()?;
    let p = rate_problem(&c.problem)?;
    let params = VaradhanParams {
        n_paths: c.n_paths,
        level: c.level,
        bandwidth_factor: c.bandwidth_factor,
        seed: run.seed(),
        importance: c.importance,
        beta: c.beta,
        alpha: c.alpha,
    };
    let report = varadhan_sweep(&p, &c.epsilons, &params)?;
    let mut w = run.csv_file("varadhan.csv")?;
    write_csv_rows(&mut w, &report.rows)?;
    #[derive(Serialize)]
    struct Meta {
        rate: f64,
        extrapolated_limit: Option<f64>,
        n_paths: usize,
    }
    run.metadata(
        "varadhan.json",
        Meta {
            rate: report.rate,
            extrapolated_limit: report.extrapolated_limit,
            n_paths: c.n_paths,
        },
    )?;
    Ok(vec![run.path("varadhan.csv"), run.path("varadhan.json")])
}

pub fn cmd_probe_tail(run: &Run) -> Result<Vec<PathBuf>, CliError> {
    let c: &TailConfig = block(&run.config.probe_tail, "probe_tail")?;
    c.validate()?;
    let model = CovarianceModel::new(c.hurst.clone(), c.horizon)?;
    let params = TailParams {
        level: c.level,
        n_paths: c.n_paths,
        seed: run.seed(),
        min_exceedances: c.min_exceedances,
    };
    let report = tail_probe(&model, c.mode, &c.radii, &params)?;
    let mut w = run.csv_file("tail.csv")?;
    write_csv_rows(&mut w, &report.rows)?;
    #[derive(Serialize)]
    struct Meta {
        slope: Option<f64>,
        r_squared: Option<f64>,
    }
    run.metadata(
        "tail.json",
        Meta {
            slope: report.slope,
            r_squared: report.r_squared,
        },
    )?;
    Ok(vec![run.path("tail.csv"), run.path("tail.json")])
}

/// The rough path written for a lifted path, reloaded.
pub fn load_rough_path(path: &Path) -> Result<roughbridge::RoughPathGrid, CliError> {
    Ok(roughbridge::io::read_rough_path(File::open(path)?)?.1)
}

