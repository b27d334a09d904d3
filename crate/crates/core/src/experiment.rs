//! Experiment driver: shared scenario, filter runs, report files.
//!
//! Output layout under the output directory:
//!
//! - `metrics.csv`: `filter,step,error_vs_truth,error_vs_kf,effective_rank`,
//!   preceded by a `# schema_version=1` line. Holds no timings, so two runs
//!   with the same config and seed produce identical bytes.
//! - `summary.json`: status, noise level, timings and storage per filter.
//! - `variance_<filter>.txt`, `spectrum_<filter>.txt`: final-step maps.
//! - `snapshots/<filter>/step_<t>.txt`: `cell x y mean variance` per step.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{load_config, ExperimentConfig, FilterKind, PrecomputeMode, SpectraMode};
use crate::error::{Error, Result};
use crate::filters::{
    hikf_precompute, hikf_precompute_dense, AssimilationFilter, DenseKalmanFilter, EnsembleKalmanFilter, Hikf, HikfState,
    KfState, ModelNoiseSampler,
};
use crate::fmm::{FmmConfig, FmmTree};
use crate::geom::{Grid2D, Point2, PointSet};
use crate::kernel::{dense_gram, direct_rows, KernelSpec};
use crate::metrics::{
    effective_rank, posterior_spectrum, relative_error, CostRecord, CostTable, FilterReport, RunReport, StepMetrics,
    DEFAULT_RANK_FRACTION,
};
use crate::obs::ObservationOperator;
use crate::rng::{self, Purpose, GENERATOR_DESCRIPTION};
use crate::ssm::{simulate_truth_and_data, NoiseLevel, SyntheticData};
use crate::tomography::{build_ray_operator, make_plume, Acquisition, PlumeScenario, RayOperator};

pub const SCHEMA_VERSION: u32 = 1;

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub override_size_guard: bool,
}

impl RunOptions {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.output.dir = d.clone();
        }
        if self.override_size_guard {
            cfg.run.override_size_guard = true;
        }
    }
}

/// Truth, data and operator shared by every filter of a run.
pub struct Scenario {
    pub grid: Grid2D,
    pub acquisition: Acquisition,
    pub h: Arc<RayOperator>,
    pub plume: PlumeScenario,
    pub data: SyntheticData,
}

pub fn build_scenario(cfg: &ExperimentConfig, base: Option<&Path>) -> Result<Scenario> {
    let grid = cfg.grid.build()?;
    let acquisition = cfg.acquisition.build();
    let h = Arc::new(build_ray_operator(&grid, &acquisition)?);
    let plume = match &cfg.plume.file {
        Some(f) => {
            let path = base.map_or_else(|| f.clone(), |b| b.join(f));
            PlumeScenario::import(&path, grid.len(), cfg.steps)?
        }
        None => make_plume(&grid, &cfg.plume_params(), cfg.steps)?,
    };
    let noise = match (cfg.noise.snr_db, cfg.noise.variance) {
        (Some(db), None) => NoiseLevel::SnrDb(db),
        (None, Some(v)) => NoiseLevel::Variance(v),
        _ => return Err(Error::Config("noise: give exactly one of snr_db or variance".into())),
    };
    let data = simulate_truth_and_data(h.as_ref(), &plume, noise, cfg.seed)?;
    Ok(Scenario {
        grid,
        acquisition,
        h,
        plume,
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FilterSpec {
    Kf,
    Hikf,
    Enkf(usize),
}

fn filter_specs(cfg: &ExperimentConfig) -> Vec<FilterSpec> {
    let mut out = Vec::new();
    // the dense KF runs first so the others can be compared against it
    if cfg.has(FilterKind::Kf) {
        out.push(FilterSpec::Kf);
    }
    for f in &cfg.filters {
        match f {
            FilterKind::Kf => {}
            FilterKind::Hikf => out.push(FilterSpec::Hikf),
            FilterKind::Enkf => out.extend(cfg.enkf.ensemble_sizes.iter().map(|&n| FilterSpec::Enkf(n))),
        }
    }
    out
}

type BoxedFilter = Box<dyn AssimilationFilter + Send>;

fn build_filter(spec: FilterSpec, cfg: &ExperimentConfig, sc: &Scenario) -> Result<BoxedFilter> {
    let m = sc.grid.len();
    let points = sc.grid.cell_centers();
    let r = sc.data.noise_variance;
    let mean0 = DVector::zeros(m);
    Ok(match spec {
        FilterSpec::Kf => {
            let q = dense_gram(&cfg.kernel, points.points());
            Box::new(DenseKalmanFilter::new(KfState::initial(mean0, cfg.alpha), q, sc.h.clone(), r)?)
        }
        FilterSpec::Hikf => {
            let pre = match cfg.run.hikf_precompute {
                PrecomputeMode::Fmm => {
                    let tree = FmmTree::build(&points, cfg.kernel, cfg.fmm)?;
                    hikf_precompute(sc.h.as_ref(), &tree)?
                }
                PrecomputeMode::Dense => hikf_precompute_dense(sc.h.as_ref(), &dense_gram(&cfg.kernel, points.points()))?,
            };
            let state = HikfState::initial(sc.h.as_ref(), mean0, cfg.alpha)?;
            Box::new(Hikf::new(state, Arc::new(pre), sc.h.clone(), r)?)
        }
        FilterSpec::Enkf(n) => {
            let sampler = ModelNoiseSampler::from_kernel(&cfg.kernel, points.points())?;
            let state = crate::filters::enkf_init(&mean0, cfg.alpha, n, cfg.seed)?;
            Box::new(EnsembleKalmanFilter::new(state, Arc::new(sampler), sc.h.clone(), r, cfg.seed)?)
        }
    })
}

/// Per-step record of one filter run.
struct Trace {
    label: String,
    means: Vec<DVector<f64>>,
    variances: Vec<DVector<f64>>,
    ranks: Vec<Option<usize>>,
    final_spectrum: Option<Vec<f64>>,
    cost: CostRecord,
    failure: Option<String>,
}

fn run_one(spec: FilterSpec, cfg: &ExperimentConfig, sc: &Scenario) -> Trace {
    let label = match spec {
        FilterSpec::Kf => "kf".to_string(),
        FilterSpec::Hikf => "hikf".to_string(),
        FilterSpec::Enkf(n) => format!("enkf_{n}"),
    };
    let mut trace = Trace {
        label: label.clone(),
        means: Vec::new(),
        variances: Vec::new(),
        ranks: Vec::new(),
        final_spectrum: None,
        cost: CostRecord {
            filter: label,
            ..Default::default()
        },
        failure: None,
    };
    let t0 = Instant::now();
    let mut filter = match build_filter(spec, cfg, sc) {
        Ok(f) => f,
        Err(e) => {
            trace.failure = Some(format!("setup failed: {e}"));
            return trace;
        }
    };
    trace.cost.precompute_seconds = t0.elapsed().as_secs_f64();
    trace.cost.storage_bytes = filter.storage_bytes();

    let steps = sc.data.observations.len();
    for (t, z) in sc.data.observations.iter().enumerate() {
        let t1 = Instant::now();
        let result = filter.step(z);
        trace.cost.online_seconds += t1.elapsed().as_secs_f64();
        if let Err(e) = result {
            trace.failure = Some(format!("step {}: {e}", t + 1));
            break;
        }
        let mean = filter.mean();
        if mean.iter().any(|v| !v.is_finite()) {
            trace.failure = Some(format!("step {}: non-finite state estimate", t + 1));
            break;
        }
        trace.means.push(mean);
        trace.variances.push(filter.variance());

        let last = t + 1 == steps;
        let want_spectrum = match spec {
            // ensemble spectra cost only O(N³)
            FilterSpec::Enkf(_) => true,
            FilterSpec::Hikf => false,
            FilterSpec::Kf => cfg.output.spectra == SpectraMode::EveryStep || (last && cfg.output.spectra == SpectraMode::Final),
        };
        let spectrum = if want_spectrum { posterior_spectrum(&filter.covariance()) } else { None };
        trace
            .ranks
            .push(spectrum.as_ref().and_then(|s| effective_rank(s, DEFAULT_RANK_FRACTION).ok()).map(|r| r.rank));
        if last && cfg.output.spectra != SpectraMode::None {
            trace.final_spectrum = spectrum;
        }
    }
    trace
}

#[derive(Serialize)]
struct FilterSummary<'a> {
    filter: &'a str,
    completed: bool,
    steps_completed: usize,
    failure: Option<&'a str>,
    precompute_seconds: f64,
    online_seconds: f64,
    storage_bytes: usize,
    final_error_vs_truth: Option<f64>,
    final_error_vs_kf: Option<f64>,
    final_effective_rank: Option<usize>,
    spectrum_available: bool,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    status: &'a str,
    seed: u64,
    steps: usize,
    state_dim: usize,
    obs_dim: usize,
    noise_variance: f64,
    realized_snr_db: f64,
    rng: &'a str,
    hikf_precompute: PrecomputeMode,
    timings_comparable: bool,
    filters: Vec<FilterSummary<'a>>,
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn cell_table(grid: &Grid2D, header: &str, columns: &[&DVector<f64>]) -> String {
    let mut s = String::with_capacity(grid.len() * 24 * (2 + columns.len()));
    s.push_str(header);
    s.push('\n');
    for k in 0..grid.len() {
        let (i, j) = grid.cell(k);
        let c = grid.center(i, j);
        let _ = write!(s, "{k} {:.6} {:.6}", c.x, c.y);
        for col in columns {
            let _ = write!(s, " {:.15e}", col[k]);
        }
        s.push('\n');
    }
    s
}

/// Runs every selected filter on one shared scenario and writes the report
/// files into `cfg.output.dir`. Relative plume files resolve against `base`.
///
/// A filter that fails mid-run leaves its completed steps in the outputs,
/// the summary is marked `partial`, and the error is returned.
pub fn run_config(cfg: &ExperimentConfig, base: Option<&Path>) -> Result<RunReport> {
    let diags = crate::config::check_config(cfg, base);
    if !diags.is_empty() {
        let lines: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return Err(Error::Config(lines.join("; ")));
    }
    let sc = build_scenario(cfg, base)?;
    let specs = filter_specs(cfg);
    let traces: Vec<Trace> = if cfg.run.parallel {
        specs.par_iter().map(|&s| run_one(s, cfg, &sc)).collect()
    } else {
        specs.iter().map(|&s| run_one(s, cfg, &sc)).collect()
    };
    write_outputs(cfg, &sc, &traces)
}

fn write_outputs(cfg: &ExperimentConfig, sc: &Scenario, traces: &[Trace]) -> Result<RunReport> {
    let out = &cfg.output.dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let kf_means = traces.iter().find(|t| t.label == "kf").map(|t| &t.means);

    let mut reports = Vec::new();
    let mut csv = format!("# schema_version={SCHEMA_VERSION}\nfilter,step,error_vs_truth,error_vs_kf,effective_rank\n");
    for tr in traces {
        let mut steps = Vec::with_capacity(tr.means.len());
        for (t, mean) in tr.means.iter().enumerate() {
            let e_truth = relative_error(mean, &sc.data.truth[t])?.value;
            let e_kf = match kf_means {
                Some(k) if tr.label != "kf" => match k.get(t) {
                    Some(kt) => Some(relative_error(mean, kt)?.value),
                    None => None,
                },
                _ => None,
            };
            let _ = writeln!(
                csv,
                "{},{},{:.15e},{},{}",
                tr.label,
                t + 1,
                e_truth,
                fmt_opt(e_kf.map(|v| format!("{v:.15e}"))),
                fmt_opt(tr.ranks[t])
            );
            steps.push(StepMetrics {
                step: t + 1,
                error_vs_truth: e_truth,
                error_vs_kf: e_kf,
                effective_rank: tr.ranks[t],
            });
        }
        reports.push(FilterReport {
            filter: tr.label.clone(),
            steps,
            final_variance: tr.variances.last().map(|v| v.as_slice().to_vec()).unwrap_or_default(),
            final_spectrum: tr.final_spectrum.clone(),
            cost: tr.cost.clone(),
            completed: tr.failure.is_none(),
        });
    }
    write_file(&out.join("metrics.csv"), &csv)?;

    for tr in traces {
        if let Some(v) = tr.variances.last() {
            write_file(&out.join(format!("variance_{}.txt", tr.label)), &cell_table(&sc.grid, "# cell x y variance", &[v]))?;
        }
        if let Some(s) = &tr.final_spectrum {
            let mut text = String::from("# index eigenvalue\n");
            for (i, v) in s.iter().enumerate() {
                let _ = writeln!(text, "{} {v:.15e}", i + 1);
            }
            write_file(&out.join(format!("spectrum_{}.txt", tr.label)), &text)?;
        }
        if cfg.output.snapshots {
            let dir = out.join("snapshots").join(&tr.label);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (t, (m, v)) in tr.means.iter().zip(&tr.variances).enumerate() {
                let text = cell_table(&sc.grid, "# cell x y mean variance", &[m, v]);
                write_file(&dir.join(format!("step_{:03}.txt", t + 1)), &text)?;
            }
        }
    }

    let failed: Vec<&Trace> = traces.iter().filter(|t| t.failure.is_some()).collect();
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        status: if failed.is_empty() { "complete" } else { "partial" },
        seed: cfg.seed,
        steps: cfg.steps,
        state_dim: sc.grid.len(),
        obs_dim: sc.h.nrows(),
        noise_variance: sc.data.noise_variance,
        realized_snr_db: sc.data.realized_snr_db,
        rng: GENERATOR_DESCRIPTION,
        hikf_precompute: cfg.run.hikf_precompute,
        timings_comparable: !cfg.run.parallel,
        filters: traces
            .iter()
            .zip(&reports)
            .map(|(tr, rep)| FilterSummary {
                filter: &tr.label,
                completed: tr.failure.is_none(),
                steps_completed: tr.means.len(),
                failure: tr.failure.as_deref(),
                precompute_seconds: tr.cost.precompute_seconds,
                online_seconds: tr.cost.online_seconds,
                storage_bytes: tr.cost.storage_bytes,
                final_error_vs_truth: rep.steps.last().map(|s| s.error_vs_truth),
                final_error_vs_kf: rep.steps.last().and_then(|s| s.error_vs_kf),
                final_effective_rank: rep.steps.last().and_then(|s| s.effective_rank),
                spectrum_available: tr.final_spectrum.is_some(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&out.join("summary.json"), &json)?;

    if !failed.is_empty() {
        let msgs: Vec<String> = failed
            .iter()
            .map(|t| format!("{}: {}", t.label, t.failure.as_deref().unwrap_or("")))
            .collect();
        return Err(Error::Numerical(format!("partial outputs written to {}; {}", out.display(), msgs.join("; "))));
    }
    Ok(RunReport {
        filters: reports,
        noise_variance: sc.data.noise_variance,
        realized_snr_db: sc.data.realized_snr_db,
    })
}

/// Loads, overrides, validates and runs a config file.
pub fn run_experiment(config_path: &Path, opts: &RunOptions) -> Result<RunReport> {
    let mut cfg = load_config_with(config_path, opts)?;
    opts.apply(&mut cfg);
    run_config(&cfg, config_path.parent())
}

fn load_config_with(path: &Path, opts: &RunOptions) -> Result<ExperimentConfig> {
    if !opts.override_size_guard {
        return load_config(path);
    }
    // the guard is lifted before validation
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let mut cfg = crate::config::parse_config(&text, json).map_err(|d| Error::Config(d.to_string()))?;
    cfg.run.override_size_guard = true;
    Ok(cfg)
}

/// Runs the configured filters without snapshots and writes `costs.csv`.
pub fn bench_filters(config_path: &Path, opts: &RunOptions) -> Result<CostTable> {
    let mut cfg = load_config_with(config_path, opts)?;
    opts.apply(&mut cfg);
    cfg.output.snapshots = false;
    cfg.output.spectra = SpectraMode::None;
    cfg.run.parallel = false;
    let report = run_config(&cfg, config_path.parent())?;
    let table = report.costs();
    write_file(&cfg.output.dir.join("costs.csv"), &table.to_csv())?;
    Ok(table)
}

/// Sizes, orders and kernel for the fast-summation benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct FmmBenchConfig {
    pub sizes: Vec<usize>,
    pub n_cheb: Vec<usize>,
    pub kernel: KernelSpec,
    pub max_leaf_points: usize,
    pub seed: u64,
    /// Matvec timings keep the fastest of this many repetitions.
    pub repeats: usize,
    /// Up to this size the error uses every row of the direct sum; above it
    /// a random subset of `sample_rows` rows.
    pub exact_limit: usize,
    pub sample_rows: usize,
}

impl Default for FmmBenchConfig {
    fn default() -> Self {
        FmmBenchConfig {
            sizes: vec![10_000, 20_000, 40_000],
            n_cheb: vec![3, 4, 5, 6, 7],
            kernel: KernelSpec::gaussian(1.0, 2.5),
            max_leaf_points: 64,
            seed: 1,
            repeats: 5,
            exact_limit: 10_000,
            sample_rows: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FmmBenchRow {
    pub m: usize,
    pub n_cheb: usize,
    pub build_seconds: f64,
    pub matvec_seconds: f64,
    pub relative_error: f64,
    pub error_rows: usize,
}

/// `m` uniform points in the unit square and a unit-norm Gaussian charge vector.
pub fn uniform_problem(m: usize, seed: u64) -> (PointSet, Vec<f64>) {
    let mut r = rng::stream(seed, Purpose::Benchmark, m as u64, 0);
    let pts: Vec<Point2> = (0..m).map(|_| Point2::new(r.random(), r.random())).collect();
    let mut v = vec![0.0; m];
    rng::fill_standard_normal(&mut rng::stream(seed, Purpose::Benchmark, m as u64, 1), &mut v);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    (PointSet::new(pts).expect("finite points"), v)
}

/// Relative ℓ² error of `approx` on `rows` against direct summation.
pub fn sampled_error(kernel: &KernelSpec, points: &PointSet, v: &[f64], approx: &[f64], rows: &[usize]) -> f64 {
    let exact = direct_rows(kernel, points.points(), rows, v);
    let (mut num, mut den) = (0.0, 0.0);
    for (e, &i) in exact.iter().zip(rows) {
        num += (approx[i] - e).powi(2);
        den += e * e;
    }
    (num / den).sqrt()
}

/// Minimum wall time of `repeats` calls.
pub fn min_time<T>(repeats: usize, mut f: impl FnMut() -> T) -> (f64, T) {
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let out = f();
        best = best.min(t.elapsed().as_secs_f64());
        last = Some(out);
    }
    (best, last.expect("at least one repetition"))
}

pub fn bench_fmm(cfg: &FmmBenchConfig) -> Result<Vec<FmmBenchRow>> {
    cfg.kernel.validate()?;
    let mut rows = Vec::new();
    for &m in &cfg.sizes {
        let (points, v) = uniform_problem(m, cfg.seed);
        let err_rows: Vec<usize> = if m <= cfg.exact_limit {
            (0..m).collect()
        } else {
            let mut r = rng::stream(cfg.seed, Purpose::Benchmark, m as u64, 2);
            (0..cfg.sample_rows).map(|_| r.random_range(0..m)).collect()
        };
        let exact = direct_rows(&cfg.kernel, points.points(), &err_rows, &v);
        for &n in &cfg.n_cheb {
            let fc = FmmConfig::new(n, cfg.max_leaf_points);
            let (build_seconds, tree) = min_time(1, || FmmTree::build(&points, cfg.kernel, fc));
            let tree = tree?;
            let (matvec_seconds, u) = min_time(cfg.repeats, || tree.matvec(&v));
            let u = u?;
            let (mut num, mut den) = (0.0, 0.0);
            for (e, &i) in exact.iter().zip(&err_rows) {
                num += (u[i] - e).powi(2);
                den += e * e;
            }
            rows.push(FmmBenchRow {
                m,
                n_cheb: n,
                build_seconds,
                matvec_seconds,
                relative_error: (num / den).sqrt(),
                error_rows: err_rows.len(),
            });
        }
    }
    Ok(rows)
}

pub fn fmm_bench_csv(rows: &[FmmBenchRow]) -> String {
    let mut s = String::from("m,n_cheb,build_seconds,matvec_seconds,relative_error,error_rows\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.3e},{}",
            r.m, r.n_cheb, r.build_seconds, r.matvec_seconds, r.relative_error, r.error_rows
        );
    }
    s
}
