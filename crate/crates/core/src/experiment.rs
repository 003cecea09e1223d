//! Named, reproducible experiments driven by a single JSON document.
//!
//! Every experiment writes one or more CSV tables into `output_dir`, each
//! with a JSON sidecar (`<table>.json`) holding the resolved configuration,
//! the library version, the seed and the column list, plus a `summary.json`
//! with the pass/fail checks of the run. Outputs depend only on the
//! configuration and the seed: work items get their own random stream keyed
//! by `(N, replication)` and results are gathered in that order before
//! anything is written, so the thread count never changes a byte.
//!
//! | experiment      | tables                                   |
//! |-----------------|------------------------------------------|
//! | `convergence`   | `convergence.csv`, `convergence_summary.csv` |
//! | `pde_check`     | `pde_l1.csv`, `pde_residual.csv`         |
//! | `sampler_check` | `sampler_ks.csv`                         |
//! | `moment_check`  | `moments.csv`                            |
//! | `rank_check`    | `rank_gaps.csv`, `rank_summary.csv`      |

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limit_law::{AnalyticPath, LimitLaw};
use crate::measures::{empirical, ranked_vs_table, sup_distance, MeasurePath, Metric};
use crate::model::{validate, InitialLaw, ModelParams};
use crate::particle::{simulate_strided, time_grid};
use crate::pde::{
    check_truncation, solve, test_function_bank, weak_residual, SolverGrid, TestFunction, TrajectoryPath,
};
use crate::rng::{Lane, SeedSplitter};

pub const SCHEMA_VERSION: u32 = 1;
pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Largest CDF-table cell mass used for analytic reference measures.
const REFERENCE_MASS: f64 = 1e-3;
/// Largest CDF-table cell mass used for KS statistics.
const KS_MASS: f64 = 5e-3;
/// Time-step doubling range and settling tolerance for the weak residual of
/// the analytic path.
const ANALYTIC_STEPS: (usize, usize) = (40, 640);
const ANALYTIC_SETTLE: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Convergence,
    PdeCheck,
    SamplerCheck,
    MomentCheck,
    RankCheck,
}

/// One experiment. Fields not used by the chosen experiment are ignored;
/// `params.n_particles` is overridden by each entry of `n_values` in
/// `convergence` and `rank_check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub params: ModelParams,
    pub law: InitialLaw,
    pub dt: f64,
    #[serde(default)]
    pub n_values: Vec<usize>,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: Option<SolverGrid>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub metric: Metric,
    /// Evaluation times; empty means the horizon only.
    #[serde(default)]
    pub times: Vec<f64>,
    /// Draws per KS statistic in `sampler_check`.
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    /// Number of recorded time intervals in `convergence`.
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
}

fn one() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_sample_size() -> usize {
    100_000
}

fn default_snapshots() -> usize {
    20
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks every invariant that can be checked before any simulation,
    /// including the PDE truncation precondition.
    pub fn validate(&self) -> Result<()> {
        validate(&self.params, &self.law).map_err(Error::Validation)?;
        let fail = |msg: String| Err(Error::Config(msg));
        if self.replications == 0 {
            return fail("replications must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt <= self.params.horizon) {
            return fail(format!("dt must lie in (0, T], got {}", self.dt));
        }
        if self.n_values.contains(&0) || self.n_values.windows(2).any(|w| w[1] <= w[0]) {
            return fail(format!("n_values must be positive and strictly increasing, got {:?}", self.n_values));
        }
        if let Some(t) = self.times.iter().find(|&&t| !(t > 0.0 && t <= self.params.horizon)) {
            return fail(format!("time {t} outside (0, T]"));
        }
        match self.experiment {
            ExperimentKind::Convergence | ExperimentKind::RankCheck if self.n_values.is_empty() => {
                return fail("n_values must not be empty".into());
            }
            ExperimentKind::Convergence if self.snapshots == 0 => {
                return fail("snapshots must be at least 1".into());
            }
            ExperimentKind::SamplerCheck if self.sample_size == 0 => {
                return fail("sample_size must be at least 1".into());
            }
            ExperimentKind::MomentCheck => {
                let steps = time_grid(self.params.horizon, self.dt)?.len() - 1;
                for &t in &self.times {
                    node_index(t, self.params.horizon, steps)?;
                }
            }
            ExperimentKind::PdeCheck => {
                let grid = self.grid.ok_or_else(|| Error::Config("pde_check needs a grid".into()))?;
                check_truncation(&self.params, &self.law, &grid)?;
                for &t in &self.times {
                    node_index(t, self.params.horizon, grid.nt)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn eval_times(&self) -> Vec<f64> {
        if self.times.is_empty() {
            vec![self.params.horizon]
        } else {
            self.times.clone()
        }
    }
}

/// Index of `t` on the uniform grid `k T / steps`.
fn node_index(t: f64, horizon: f64, steps: usize) -> Result<usize> {
    let x = t / horizon * steps as f64;
    let k = x.round();
    if (x - k).abs() > 1e-9 * x.max(1.0) {
        return Err(Error::Config(format!("time {t} is not a node of the {steps}-step grid on [0, {horizon}]")));
    }
    Ok(k as usize)
}

/// A named threshold comparison; `passed` is what `--assert` looks at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, passed: value <= threshold }
    }

    fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, passed: value < threshold }
    }

    fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, passed: value >= threshold }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: ExperimentKind,
    pub tables: Vec<String>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    schema_version: u32,
    library_version: &'a str,
    seed: u64,
    table: &'a str,
    columns: &'a [&'a str],
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    library_version: &'a str,
    seed: u64,
    report: &'a Report,
}

#[derive(Serialize)]
struct FailureManifest<'a> {
    schema_version: u32,
    library_version: &'a str,
    seed: u64,
    error: String,
    failed_items: &'a [String],
    completed_tables: &'a [String],
    config: &'a ExperimentConfig,
}

/// Writes tables and remembers what has been written.
struct Output<'a> {
    cfg: &'a ExperimentConfig,
    tables: Vec<String>,
}

impl<'a> Output<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(&cfg.output_dir)?;
        Ok(Self { cfg, tables: Vec::new() })
    }

    fn table(&mut self, name: &str, columns: &[&str], rows: &[String]) -> Result<()> {
        let mut body = columns.join(",");
        body.push('\n');
        for r in rows {
            body.push_str(r);
            body.push('\n');
        }
        let csv = format!("{name}.csv");
        fs::write(self.cfg.output_dir.join(&csv), body)?;
        let side = Sidecar {
            schema_version: SCHEMA_VERSION,
            library_version: LIBRARY_VERSION,
            seed: self.cfg.seed,
            table: &csv,
            columns,
            config: self.cfg,
        };
        fs::write(self.cfg.output_dir.join(format!("{name}.json")), serde_json::to_string_pretty(&side)?)?;
        self.tables.push(csv);
        Ok(())
    }

    fn fail(&self, error: &Error, failed_items: &[String]) -> Result<()> {
        let manifest = FailureManifest {
            schema_version: SCHEMA_VERSION,
            library_version: LIBRARY_VERSION,
            seed: self.cfg.seed,
            error: error.to_string(),
            failed_items,
            completed_tables: &self.tables,
            config: self.cfg,
        };
        fs::write(self.cfg.output_dir.join("failure.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    fn finish(self, experiment: ExperimentKind, checks: Vec<Check>) -> Result<Report> {
        let report = Report { experiment, tables: self.tables, checks };
        let summary = Summary {
            schema_version: SCHEMA_VERSION,
            library_version: LIBRARY_VERSION,
            seed: self.cfg.seed,
            report: &report,
        };
        fs::write(self.cfg.output_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        Ok(report)
    }
}

/// A work item's label and outcome.
type Labelled<T> = (String, Result<T>);

/// Splits per-item results into successes (in order) and labelled failures.
fn partition<T>(results: Vec<Labelled<T>>) -> (Vec<T>, Vec<String>, Option<Error>) {
    let mut ok = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    let mut first = None;
    for (label, r) in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                failed.push(format!("{label}: {e}"));
                first.get_or_insert(e);
            }
        }
    }
    (ok, failed, first)
}

/// Validates and runs `cfg` on a pool of `threads` workers (`None` lets
/// rayon decide).
pub fn run_with_threads(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<Report> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run(cfg))
}

/// Validates and runs `cfg` on the current rayon pool.
pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::Convergence => run_convergence(cfg),
        ExperimentKind::PdeCheck => run_pde_check(cfg),
        ExperimentKind::SamplerCheck => run_sampler_check(cfg),
        ExperimentKind::MomentCheck => run_moment_check(cfg),
        ExperimentKind::RankCheck => run_rank_check(cfg),
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Largest divisor of `steps` not exceeding `steps / intervals`.
fn stride_for(steps: usize, intervals: usize) -> usize {
    let target = (steps / intervals.max(1)).max(1);
    (1..=target).rev().find(|&d| steps.is_multiple_of(d)).unwrap_or(1)
}

fn tasks(n_values: &[usize], replications: usize) -> Vec<(usize, usize)> {
    n_values.iter().flat_map(|&n| (0..replications).map(move |r| (n, r))).collect()
}

/// Sup-over-time distance between each replication's empirical path and the
/// analytic limit path.
///
/// `convergence.csv`: `N,replication,metric,value`.
/// `convergence_summary.csv`: `N,metric,median,min,max`.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<Report> {
    let mut out = Output::new(cfg)?;
    let limit = LimitLaw::new(cfg.params.eta, cfg.law.clone())?;
    let grid = time_grid(cfg.params.horizon, cfg.dt)?;
    let stride = stride_for(grid.len() - 1, cfg.snapshots);
    let times: Vec<f64> = grid.iter().copied().step_by(stride).collect();
    let reference = times.par_iter().map(|&t| limit.measure_at(t, REFERENCE_MASS)).collect::<Result<Vec<_>>>()?;
    let reference = MeasurePath::new(times, reference)?;

    let splitter = SeedSplitter::new(cfg.seed, Lane::Particles);
    let results: Vec<Labelled<(usize, usize, f64)>> = tasks(&cfg.n_values, cfg.replications)
        .into_par_iter()
        .map(|(n, rep)| {
            let value = (|| {
                let params = ModelParams { n_particles: n, ..cfg.params };
                let mut rng = splitter.stream(n as u64, rep as u64);
                let paths = simulate_strided(&params, &cfg.law, cfg.dt, stride, &mut rng)?;
                let measures =
                    (0..paths.time_grid().len()).map(|j| empirical(paths.snapshot(j))).collect::<Result<Vec<_>>>()?;
                let path = MeasurePath::new(paths.time_grid().to_vec(), measures)?;
                sup_distance(&path, &reference, cfg.metric)
            })();
            (format!("N={n} replication={rep}"), value.map(|v| (n, rep, v)))
        })
        .collect();
    let (rows, failed, err) = partition(results);

    let metric = cfg.metric.name();
    let lines: Vec<String> = rows.iter().map(|(n, r, v)| format!("{n},{r},{metric},{v}")).collect();
    out.table("convergence", &["N", "replication", "metric", "value"], &lines)?;
    if let Some(e) = err {
        out.fail(&e, &failed)?;
        return Err(e);
    }

    let medians: Vec<f64> = cfg
        .n_values
        .iter()
        .map(|&n| median(&rows.iter().filter(|r| r.0 == n).map(|r| r.2).collect::<Vec<_>>()))
        .collect();
    let summary: Vec<String> = cfg
        .n_values
        .iter()
        .zip(&medians)
        .map(|(&n, m)| {
            let vals = rows.iter().filter(|r| r.0 == n).map(|r| r.2);
            let lo = vals.clone().fold(f64::INFINITY, f64::min);
            let hi = vals.fold(0.0, f64::max);
            format!("{n},{metric},{m},{lo},{hi}")
        })
        .collect();
    out.table("convergence_summary", &["N", "metric", "median", "min", "max"], &summary)?;

    let mut checks = Vec::new();
    if medians.len() > 1 {
        let worst = medians.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
        checks.push(Check::below("median decreasing in N (largest successive ratio)", worst, 1.0));
        let ratio = medians[medians.len() - 1] / medians[0];
        checks.push(Check::below("median ratio largest N / smallest N", ratio, 0.6));
    }
    out.finish(cfg.experiment, checks)
}

/// PDE solve on the configured grid and on the refined grid.
///
/// `pde_l1.csv`: `nx,nt,t,l1_analytic,l1_mollified,mass_drift` where
/// `l1_mollified` compares with the limit started from the discretized
/// initial data.
/// `pde_residual.csv`: `path,test_function,t,residual` for the analytic
/// limit path and the PDE trajectory on the configured grid.
pub fn run_pde_check(cfg: &ExperimentConfig) -> Result<Report> {
    let mut out = Output::new(cfg)?;
    let grid = cfg.grid.expect("validated");
    let limit = LimitLaw::new(cfg.params.eta, cfg.law.clone())?;
    let times = cfg.eval_times();
    let horizon = cfg.params.horizon;
    let eta = cfg.params.eta;
    let m = limit.m_lambda();

    let grids = [grid, grid.refined()];
    let solved = grids.par_iter().map(|g| solve(&cfg.params, &cfg.law, g)).collect::<Result<Vec<_>>>()?;
    let mut l1_rows = Vec::new();
    let mut l1_at_horizon = Vec::new();
    for (g, traj) in grids.iter().zip(&solved) {
        let mollified = LimitLaw::new(eta, traj.initial_as_law())?;
        let drift = traj.mass_drift();
        let rows = times
            .par_iter()
            .map(|&t| {
                let n = node_index(t, horizon, g.nt)?;
                Ok((t, traj.l1_error(n, &limit)?, traj.l1_error(n, &mollified)?))
            })
            .collect::<Result<Vec<_>>>()?;
        for (t, a, b) in rows {
            if t == horizon {
                l1_at_horizon.push(a);
            }
            l1_rows.push(format!("{},{},{t},{a},{b},{drift}", g.nx, g.nt));
        }
    }
    out.table("pde_l1", &["nx", "nt", "t", "l1_analytic", "l1_mollified", "mass_drift"], &l1_rows)?;

    let bank = test_function_bank();
    let items: Vec<(usize, f64)> = (0..bank.len()).flat_map(|i| times.iter().map(move |&t| (i, t))).collect();
    let analytic =
        items.par_iter().map(|&(i, t)| analytic_residual(&limit, &bank[i], t)).collect::<Result<Vec<_>>>()?;
    let traj_path = TrajectoryPath::new(&solved[0]);
    let numeric =
        items.iter().map(|&(i, t)| weak_residual(&traj_path, &bank[i], t, eta, m)).collect::<Result<Vec<_>>>()?;
    let mut res_rows = Vec::new();
    for (label, values) in [("analytic", &analytic), ("pde", &numeric)] {
        for (&(i, t), r) in items.iter().zip(values.iter()) {
            res_rows.push(format!("{label},{},{t},{r}", bank[i].name()));
        }
    }
    out.table("pde_residual", &["path", "test_function", "t", "residual"], &res_rows)?;

    let max_abs = |v: &[f64]| v.iter().fold(0.0_f64, |a, r| a.max(r.abs()));
    let mut checks = Vec::new();
    let drift = solved.iter().map(|s| s.mass_drift()).fold(0.0, f64::max);
    checks.push(Check::at_most("PDE mass drift", drift, 1e-6));
    if let [coarse, fine] = l1_at_horizon[..] {
        checks.push(Check::at_most("L1 error at the horizon", coarse, 1e-2));
        checks.push(Check::at_least("L1 refinement ratio", coarse / fine, 1.5));
    }
    checks.push(Check::at_most("analytic path weak residual", max_abs(&analytic), 1e-4));
    checks.push(Check::at_most("PDE weak residual", max_abs(&numeric), 5e-3));
    out.finish(cfg.experiment, checks)
}

/// Weak residual of the analytic path on `[0, t]`, doubling the number of
/// Simpson steps until two successive values agree. Test functions whose
/// support edge meets an atom of `λ` need the finer grids.
fn analytic_residual(limit: &LimitLaw, g: &TestFunction, t: f64) -> Result<f64> {
    let (mut n, max) = ANALYTIC_STEPS;
    let residual = |n| weak_residual(&AnalyticPath::uniform(limit.clone(), t, n)?, g, t, limit.eta(), limit.m_lambda());
    let mut prev = residual(n)?;
    while n < max {
        n *= 2;
        let next = residual(n)?;
        let settled = (next - prev).abs() <= ANALYTIC_SETTLE;
        prev = next;
        if settled {
            break;
        }
    }
    Ok(prev)
}

/// Kolmogorov–Smirnov distance between `samples` and a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// 1% critical value of the KS statistic, asymptotic in `n`.
pub fn ks_critical(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

/// Exact limit samples against the tabulated CDF.
///
/// `sampler_ks.csv`: `t,replication,n,ks,critical`.
pub fn run_sampler_check(cfg: &ExperimentConfig) -> Result<Report> {
    let mut out = Output::new(cfg)?;
    let limit = LimitLaw::new(cfg.params.eta, cfg.law.clone())?;
    let times = cfg.eval_times();
    let tables = times.par_iter().map(|&t| limit.cdf_table(t, KS_MASS)).collect::<Result<Vec<_>>>()?;
    let splitter = SeedSplitter::new(cfg.seed, Lane::LimitSampler);
    let n = cfg.sample_size;
    let items = tasks(&(0..times.len()).collect::<Vec<_>>(), cfg.replications);
    let results: Vec<Labelled<(f64, usize, f64)>> = items
        .into_par_iter()
        .map(|(k, rep)| {
            let t = times[k];
            let mut rng = splitter.stream(k as u64, rep as u64);
            let ks = limit.sample(t, n, &mut rng).map(|s| ks_statistic(&s, |y| tables[k].cdf(y)));
            (format!("t={t} replication={rep}"), ks.map(|d| (t, rep, d)))
        })
        .collect();
    let (rows, failed, err) = partition(results);
    let crit = ks_critical(n);
    let lines: Vec<String> = rows.iter().map(|(t, r, d)| format!("{t},{r},{n},{d},{crit}")).collect();
    out.table("sampler_ks", &["t", "replication", "n", "ks", "critical"], &lines)?;
    if let Some(e) = err {
        out.fail(&e, &failed)?;
        return Err(e);
    }
    let checks = rows.iter().map(|(t, r, d)| Check::below(format!("KS t={t} replication={r}"), *d, crit)).collect();
    out.finish(cfg.experiment, checks)
}

/// Monte Carlo estimate with its standard error.
fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// First and second moments of the total against their exact growth.
///
/// `moments.csv`: `t,moment,estimate,target,std_error,z`.
pub fn run_moment_check(cfg: &ExperimentConfig) -> Result<Report> {
    let mut out = Output::new(cfg)?;
    let params = cfg.params;
    let steps = time_grid(params.horizon, cfg.dt)?.len() - 1;
    let times = cfg.eval_times();
    let nodes = times.iter().map(|&t| node_index(t, params.horizon, steps)).collect::<Result<Vec<_>>>()?;
    let splitter = SeedSplitter::new(cfg.seed, Lane::Particles);
    let n = params.n_particles;
    let results: Vec<Labelled<Vec<f64>>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = splitter.stream(n as u64, rep as u64);
            let totals = simulate_strided(&params, &cfg.law, cfg.dt, 1, &mut rng)
                .map(|p| nodes.iter().map(|&k| p.totals()[k]).collect());
            (format!("replication={rep}"), totals)
        })
        .collect();
    let (totals, failed, err) = partition(results);
    if let Some(e) = err {
        out.fail(&e, &failed)?;
        return Err(e);
    }

    let mom = cfg.law.moments()?;
    let nf = n as f64;
    let s0 = nf * mom.m1;
    let s0_sq = nf * mom.m2 + nf * (nf - 1.0) * mom.m1 * mom.m1;
    let mut lines = Vec::new();
    let mut checks = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        let first: Vec<f64> = totals.iter().map(|v| v[k]).collect();
        let second: Vec<f64> = first.iter().map(|s| s * s).collect();
        let targets = [s0 * (0.5 * params.eta * t).exp(), s0_sq * ((params.eta + 1.0 / nf) * t).exp()];
        for (order, (sample, target, bound)) in [(1, (&first, targets[0], 3.0)), (2, (&second, targets[1], 4.0))] {
            let (est, se) = mean_and_se(sample);
            let z = (est - target) / se;
            lines.push(format!("{t},{order},{est},{target},{se},{z}"));
            checks.push(Check::at_most(format!("|z| of moment {order} at t={t}"), z.abs(), bound));
        }
    }
    out.table("moments", &["t", "moment", "estimate", "target", "std_error", "z"], &lines)?;
    out.finish(cfg.experiment, checks)
}

/// Ranked positions at the horizon against limit quantiles. The gap of a
/// replication is the mean `|Y_(k) − q(k/(N+1))|` over ranks whose plotting
/// position lies in `[0.1, 0.9]`.
///
/// `rank_gaps.csv`: `N,replication,mean_gap`.
/// `rank_summary.csv`: `N,median_mean_gap`.
pub fn run_rank_check(cfg: &ExperimentConfig) -> Result<Report> {
    let mut out = Output::new(cfg)?;
    let limit = LimitLaw::new(cfg.params.eta, cfg.law.clone())?;
    let table = limit.cdf_table(cfg.params.horizon, REFERENCE_MASS)?;
    let steps = time_grid(cfg.params.horizon, cfg.dt)?.len() - 1;
    let splitter = SeedSplitter::new(cfg.seed, Lane::Particles);
    let results: Vec<Labelled<(usize, usize, f64)>> = tasks(&cfg.n_values, cfg.replications)
        .into_par_iter()
        .map(|(n, rep)| {
            let gap = (|| {
                let params = ModelParams { n_particles: n, ..cfg.params };
                let mut rng = splitter.stream(n as u64, rep as u64);
                let paths = simulate_strided(&params, &cfg.law, cfg.dt, steps, &mut rng)?;
                let rows = ranked_vs_table(paths.snapshot(paths.time_grid().len() - 1), &table)?;
                let middle: Vec<f64> = rows
                    .iter()
                    .filter(|r| (0.1..=0.9).contains(&(r.rank as f64 / (n + 1) as f64)))
                    .map(|r| r.gap)
                    .collect();
                if middle.is_empty() {
                    return Err(Error::Empty("no middle ranks"));
                }
                Ok(middle.iter().sum::<f64>() / middle.len() as f64)
            })();
            (format!("N={n} replication={rep}"), gap.map(|g| (n, rep, g)))
        })
        .collect();
    let (rows, failed, err) = partition(results);
    let lines: Vec<String> = rows.iter().map(|(n, r, g)| format!("{n},{r},{g}")).collect();
    out.table("rank_gaps", &["N", "replication", "mean_gap"], &lines)?;
    if let Some(e) = err {
        out.fail(&e, &failed)?;
        return Err(e);
    }
    let medians: Vec<f64> = cfg
        .n_values
        .iter()
        .map(|&n| median(&rows.iter().filter(|r| r.0 == n).map(|r| r.2).collect::<Vec<_>>()))
        .collect();
    let lines: Vec<String> = cfg.n_values.iter().zip(&medians).map(|(n, m)| format!("{n},{m}")).collect();
    out.table("rank_summary", &["N", "median_mean_gap"], &lines)?;
    let mut checks = Vec::new();
    if medians.len() > 1 {
        let ratio = medians[medians.len() - 1] / medians[0];
        checks.push(Check::below("rank gap ratio largest N / smallest N", ratio, 1.0));
    }
    out.finish(cfg.experiment, checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            experiment: kind,
            params: ModelParams::new(2.0, 16, 0.5),
            law: InitialLaw::point_mass(1.0),
            dt: 0.01,
            n_values: vec![8, 32],
            replications: 3,
            seed: 11,
            grid: Some(SolverGrid { x_max: 30.0, nx: 200, nt: 100 }),
            output_dir: PathBuf::new(),
            metric: Metric::Wasserstein1,
            times: vec![],
            sample_size: 2000,
            snapshots: 10,
        }
    }

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("vsm-exp-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn config_round_trips_and_fills_defaults() {
        let text = r#"{"experiment":"sampler_check","params":{"eta":2.0,"n_particles":1,"horizon":1.0},
            "law":{"type":"gamma","shape":2.0,"scale":0.5},"dt":0.001}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.replications, 1);
        assert_eq!(cfg.sample_size, 100_000);
        assert_eq!(cfg.metric, Metric::Wasserstein1);
        let again = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
        assert!(ExperimentConfig::from_json(r#"{"experiment":"nope"}"#).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = base(ExperimentKind::Convergence);
        c.replications = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = base(ExperimentKind::Convergence);
        c.n_values = vec![32, 8];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = base(ExperimentKind::Convergence);
        c.params.eta = 0.5;
        assert!(matches!(c.validate(), Err(Error::Validation(_))));
        let mut c = base(ExperimentKind::PdeCheck);
        c.grid = Some(SolverGrid { x_max: 3.0, nx: 200, nt: 100 });
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = base(ExperimentKind::PdeCheck);
        c.times = vec![0.123];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(base(ExperimentKind::PdeCheck).validate().is_ok());
    }

    #[test]
    fn stride_divides_steps() {
        assert_eq!(stride_for(1000, 20), 50);
        assert_eq!(stride_for(7, 20), 1);
        assert_eq!(stride_for(1001, 20), 13);
        assert_eq!(1001 % 13, 0);
    }

    #[test]
    fn ks_statistic_of_exact_quantiles_is_half_a_step() {
        let n = 100;
        let s: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&s, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn convergence_tables_are_thread_independent() {
        let mut a = base(ExperimentKind::Convergence);
        a.output_dir = temp_dir("conv-a");
        let mut b = a.clone();
        b.output_dir = temp_dir("conv-b");
        let ra = run_with_threads(&a, Some(1)).unwrap();
        let rb = run_with_threads(&b, Some(4)).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(ra.tables, vec!["convergence.csv", "convergence_summary.csv"]);
        for t in &ra.tables {
            assert_eq!(fs::read(a.output_dir.join(t)).unwrap(), fs::read(b.output_dir.join(t)).unwrap());
        }
        let csv = fs::read_to_string(a.output_dir.join("convergence.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 * 3);
        let side: serde_json::Value =
            serde_json::from_slice(&fs::read(a.output_dir.join("convergence.json")).unwrap()).unwrap();
        assert_eq!(side["schema_version"], 1);
        assert_eq!(side["seed"], 11);
        assert_eq!(side["library_version"], LIBRARY_VERSION);
        assert_eq!(side["config"]["experiment"], "convergence");
    }

    #[test]
    fn levy_and_w1_tables_are_nonnegative() {
        for metric in [Metric::Levy, Metric::Wasserstein1] {
            let mut c = base(ExperimentKind::Convergence);
            c.n_values = vec![64];
            c.metric = metric;
            c.output_dir = temp_dir(metric.name());
            run(&c).unwrap();
            let csv = fs::read_to_string(c.output_dir.join("convergence.csv")).unwrap();
            for line in csv.lines().skip(1) {
                let f: Vec<&str> = line.split(',').collect();
                assert_eq!(f[2], metric.name());
                assert!(f[3].parse::<f64>().unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn failing_replications_leave_a_manifest() {
        // a zero initial total makes every replication degenerate
        let mut c = base(ExperimentKind::MomentCheck);
        c.law = InitialLaw::discrete(&[(0.0, 0.5), (2.0, 0.5)]);
        c.params.n_particles = 1;
        c.replications = 40;
        c.output_dir = temp_dir("fail");
        assert!(run(&c).is_err());
        let manifest: serde_json::Value =
            serde_json::from_slice(&fs::read(c.output_dir.join("failure.json")).unwrap()).unwrap();
        assert!(!manifest["failed_items"].as_array().unwrap().is_empty());
        assert!(manifest["error"].as_str().unwrap().contains("0"));
    }
}
