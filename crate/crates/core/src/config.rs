//! Declarative experiment description.
//!
//! The canonical encoding is TOML; a file ending in `.json` is read as JSON
//! with the same schema. See `configs/crosswell.toml` for a complete example.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmm::FmmConfig;
use crate::geom::{Grid2D, Point2};
use crate::kernel::KernelSpec;
use crate::tomography::{Acquisition, BlobParams, PlumeParams};

/// Dense KF runs above this many cells are refused unless overridden.
pub const KF_SIZE_GUARD: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Kf,
    Hikf,
    Enkf,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Kf => "kf",
            FilterKind::Hikf => "hikf",
            FilterKind::Enkf => "enkf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "unit")]
    pub dx: f64,
    #[serde(default = "unit")]
    pub dy: f64,
    #[serde(default)]
    pub origin_x: f64,
    #[serde(default)]
    pub origin_y: f64,
}

fn unit() -> f64 {
    1.0
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid2D> {
        Grid2D::new(self.nx, self.ny, Point2::new(self.origin_x, self.origin_y), self.dx, self.dy)
    }
}

/// Sources sit on the injection well at `x = source_x`, receivers on the
/// observation well at `x = receiver_x`, each evenly spread over its `y`
/// range. Explicit position lists replace the generated layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionConfig {
    #[serde(default)]
    pub sources: usize,
    #[serde(default)]
    pub receivers: usize,
    #[serde(default)]
    pub source_x: f64,
    #[serde(default)]
    pub receiver_x: f64,
    #[serde(default)]
    pub source_y: (f64, f64),
    #[serde(default)]
    pub receiver_y: (f64, f64),
    #[serde(default)]
    pub source_positions: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub receiver_positions: Option<Vec<(f64, f64)>>,
}

impl AcquisitionConfig {
    pub fn build(&self) -> Acquisition {
        let mut acq = Acquisition::crosswell(
            self.sources,
            self.source_x,
            self.source_y,
            self.receivers,
            self.receiver_x,
            self.receiver_y,
        );
        if let Some(s) = &self.source_positions {
            acq.sources = s.iter().map(|&(x, y)| Point2::new(x, y)).collect();
        }
        if let Some(r) = &self.receiver_positions {
            acq.receivers = r.iter().map(|&(x, y)| Point2::new(x, y)).collect();
        }
        acq
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Target SNR over the whole record, in dB.
    #[serde(default)]
    pub snr_db: Option<f64>,
    /// Fixed observation-noise variance; exclusive with `snr_db`.
    #[serde(default)]
    pub variance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnkfConfig {
    #[serde(default)]
    pub ensemble_sizes: Vec<usize>,
}

/// Either a file of precomputed fields, explicit blob parameters, or the
/// default two-lobe scenario (optionally with its breakthrough step moved).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlumeConfig {
    /// Columnar `step cell value` file, relative to the config file.
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub breakthrough_step: Option<usize>,
    #[serde(default)]
    pub blobs: Option<Vec<BlobParams>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectraMode {
    None,
    #[default]
    Final,
    EveryStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Write per-step mean and variance for every filter.
    #[serde(default = "yes")]
    pub snapshots: bool,
    #[serde(default)]
    pub spectra: SpectraMode,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_out_dir(),
            snapshots: true,
            spectra: SpectraMode::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecomputeMode {
    #[default]
    Fmm,
    Dense,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub hikf_precompute: PrecomputeMode,
    #[serde(default)]
    pub override_size_guard: bool,
    /// Run filters concurrently; timings are then flagged as not comparable.
    #[serde(default)]
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub steps: usize,
    #[serde(default)]
    pub alpha: f64,
    pub filters: Vec<FilterKind>,
    #[serde(default)]
    pub enkf: EnkfConfig,
    pub grid: GridConfig,
    pub acquisition: AcquisitionConfig,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub fmm: FmmConfig,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub plume: PlumeConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub run: RunConfig,
}

impl ExperimentConfig {
    /// The crosswell benchmark: 59 x 55 cells, 6 sources and 48 receivers on
    /// wells 30 units apart, 41 frames at 65 dB.
    pub fn crosswell_benchmark() -> Self {
        ExperimentConfig {
            seed: 2009,
            steps: 41,
            alpha: 0.0,
            filters: vec![FilterKind::Kf, FilterKind::Hikf],
            enkf: EnkfConfig::default(),
            grid: GridConfig {
                nx: 59,
                ny: 55,
                dx: 0.6,
                dy: 0.6,
                origin_x: 0.0,
                origin_y: 0.0,
            },
            acquisition: AcquisitionConfig {
                sources: 6,
                receivers: 48,
                source_x: 2.7,
                receiver_x: 32.7,
                source_y: (10.5, 22.5),
                receiver_y: (1.5, 31.5),
                source_positions: None,
                receiver_positions: None,
            },
            kernel: KernelSpec::exponential(1e-3, 10.0),
            fmm: FmmConfig::new(9, 64),
            noise: NoiseConfig {
                snr_db: Some(65.0),
                variance: None,
            },
            plume: PlumeConfig::default(),
            output: OutputConfig::default(),
            run: RunConfig::default(),
        }
    }

    /// The smaller instance used for exact-identity checks: 30 x 28 cells
    /// and 6 x 24 rays.
    pub fn crosswell_small() -> Self {
        let mut c = Self::crosswell_benchmark();
        c.grid = GridConfig {
            nx: 30,
            ny: 28,
            dx: 35.4 / 30.0,
            dy: 33.0 / 28.0,
            origin_x: 0.0,
            origin_y: 0.0,
        };
        c.acquisition.receivers = 24;
        c
    }

    pub fn state_dim(&self) -> usize {
        self.grid.nx * self.grid.ny
    }

    pub fn has(&self, kind: FilterKind) -> bool {
        self.filters.contains(&kind)
    }

    pub fn plume_params(&self) -> PlumeParams {
        let ext_w = self.grid.nx as f64 * self.grid.dx;
        let ext_h = self.grid.ny as f64 * self.grid.dy;
        let acq = self.acquisition.build();
        let src_x = acq.sources.first().map_or(self.grid.origin_x, |p| p.x) - self.grid.origin_x;
        let rec_x = acq.receivers.first().map_or(self.grid.origin_x + ext_w, |p| p.x) - self.grid.origin_x;
        let mut p = PlumeParams::crosswell_default(ext_w, ext_h, src_x, rec_x, self.steps);
        for b in &mut p.blobs {
            for c in [&mut b.center_x.0, &mut b.center_x.1] {
                *c += self.grid.origin_x;
            }
            for c in [&mut b.center_y.0, &mut b.center_y.1] {
                *c += self.grid.origin_y;
            }
        }
        if let Some(tb) = self.plume.breakthrough_step {
            p.breakthrough_step = tb;
        }
        if let Some(blobs) = &self.plume.blobs {
            p.blobs = blobs.clone();
        }
        p
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// One violated constraint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    /// Dotted path of the offending field, e.g. `grid.nx`.
    pub field: String,
    pub message: String,
    /// 1-based line in the source file when it could be located.
    pub line: Option<usize>,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses the text; syntax and schema errors come back as one diagnostic.
pub fn parse_config(text: &str, json: bool) -> std::result::Result<ExperimentConfig, Diagnostic> {
    if json {
        serde_json::from_str(text).map_err(|e| Diagnostic {
            field: "<document>".into(),
            message: e.to_string(),
            line: Some(e.line()),
        })
    } else {
        toml::from_str(text).map_err(|e| Diagnostic {
            field: "<document>".into(),
            message: e.message().to_string(),
            line: e.span().map(|s| line_of_offset(text, s.start)),
        })
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg = parse_config(&text, is_json(path)).map_err(|d| Error::Config(d.to_string()))?;
    let diags = check_config(&cfg, path.parent());
    if diags.is_empty() {
        Ok(cfg)
    } else {
        let lines: Vec<String> = diags.iter().map(|d| locate(d.clone(), &text, is_json(path)).to_string()).collect();
        Err(Error::Config(lines.join("; ")))
    }
}

/// Reads and checks a config file; an empty list means it is valid.
pub fn validate_config(path: &Path) -> Result<Vec<Diagnostic>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let json = is_json(path);
    Ok(match parse_config(&text, json) {
        Err(d) => vec![d],
        Ok(cfg) => check_config(&cfg, path.parent())
            .into_iter()
            .map(|d| locate(d, &text, json))
            .collect(),
    })
}

/// Best-effort line lookup: the key's line inside its table.
fn locate(mut d: Diagnostic, text: &str, json: bool) -> Diagnostic {
    let parts: Vec<&str> = d.field.split('.').collect();
    let Some((key, tables)) = parts.split_last() else {
        return d;
    };
    let mut start = 0;
    if !json && !tables.is_empty() {
        let header = format!("[{}]", tables.join("."));
        match text.lines().position(|l| l.trim() == header) {
            Some(i) => start = i,
            None => return d,
        }
    }
    let needle = if json { format!("\"{key}\"") } else { key.to_string() };
    for (i, line) in text.lines().enumerate().skip(start) {
        let t = line.trim_start();
        if i > start && !json && t.starts_with('[') && !tables.is_empty() {
            break;
        }
        if t.starts_with(&needle) && t[needle.len()..].trim_start().starts_with(if json { ':' } else { '=' }) {
            d.line = Some(i + 1);
            return d;
        }
    }
    // key absent: point at its table header
    if !json && !tables.is_empty() {
        d.line = Some(start + 1);
    }
    d
}

/// Every semantic violation of a parsed config. `base` resolves relative
/// plume files.
pub fn check_config(cfg: &ExperimentConfig, base: Option<&Path>) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut push = |field: &str, message: String| {
        out.push(Diagnostic {
            field: field.to_string(),
            message,
            line: None,
        })
    };

    if cfg.steps == 0 {
        push("steps", "must be >= 1".into());
    }
    if !(cfg.alpha.is_finite() && cfg.alpha >= 0.0) {
        push("alpha", format!("must be finite and >= 0, got {}", cfg.alpha));
    }
    if cfg.filters.is_empty() {
        push("filters", "select at least one of kf, hikf, enkf".into());
    }
    for (i, f) in cfg.filters.iter().enumerate() {
        if cfg.filters[..i].contains(f) {
            push("filters", format!("{} listed twice", f.name()));
        }
    }
    if cfg.has(FilterKind::Enkf) {
        if cfg.enkf.ensemble_sizes.is_empty() {
            push("enkf.ensemble_sizes", "enkf is selected but no ensemble size is given".into());
        }
        for &n in &cfg.enkf.ensemble_sizes {
            if n < 2 {
                push("enkf.ensemble_sizes", format!("ensemble size must be >= 2, got {n}"));
            }
        }
    }

    let g = &cfg.grid;
    if g.nx == 0 {
        push("grid.nx", "must be >= 1".into());
    }
    if g.ny == 0 {
        push("grid.ny", "must be >= 1".into());
    }
    for (name, v) in [("grid.dx", g.dx), ("grid.dy", g.dy)] {
        if !(v.is_finite() && v > 0.0) {
            push(name, format!("must be finite and > 0, got {v}"));
        }
    }
    for (name, v) in [("grid.origin_x", g.origin_x), ("grid.origin_y", g.origin_y)] {
        if !v.is_finite() {
            push(name, "must be finite".into());
        }
    }
    let grid = g.build().ok();

    let a = &cfg.acquisition;
    let acq = a.build();
    if acq.sources.is_empty() {
        push("acquisition.sources", "need at least one source".into());
    }
    if acq.receivers.is_empty() {
        push("acquisition.receivers", "need at least one receiver".into());
    }
    if let Some(grid) = &grid {
        let ext = grid.extent();
        let inside = |p: &Point2| p.is_finite() && ext.contains(*p);
        if !acq.sources.iter().all(inside) {
            push(
                if a.source_positions.is_some() { "acquisition.source_positions" } else { "acquisition.source_x" },
                "every source must lie inside the grid".into(),
            );
        }
        if !acq.receivers.iter().all(inside) {
            push(
                if a.receiver_positions.is_some() { "acquisition.receiver_positions" } else { "acquisition.receiver_x" },
                "every receiver must lie inside the grid".into(),
            );
        }
    }
    if acq.sources.iter().any(|s| acq.receivers.iter().any(|r| s == r)) {
        push("acquisition", "a source coincides with a receiver".into());
    }

    for (f, msg) in cfg.kernel.violations() {
        push(&format!("kernel.{f}"), msg);
    }
    for (f, msg) in cfg.fmm.violations() {
        push(&format!("fmm.{f}"), msg);
    }

    match (cfg.noise.snr_db, cfg.noise.variance) {
        (Some(_), Some(_)) => push("noise", "give either snr_db or variance, not both".into()),
        (None, None) => push("noise", "give snr_db or variance".into()),
        (Some(db), None) if !db.is_finite() => push("noise.snr_db", "must be finite".into()),
        (None, Some(v)) if !(v.is_finite() && v > 0.0) => push("noise.variance", format!("must be > 0, got {v}")),
        _ => {}
    }

    if let Some(file) = &cfg.plume.file {
        if cfg.plume.blobs.is_some() || cfg.plume.breakthrough_step.is_some() {
            push("plume.file", "a plume file excludes blob parameters".into());
        }
        let resolved = base.map_or_else(|| file.clone(), |b| b.join(file));
        if !resolved.is_file() {
            push("plume.file", format!("{} does not exist", resolved.display()));
        }
    } else if cfg.steps > 0 {
        for (f, msg) in cfg.plume_params().violations() {
            push(&format!("plume.{f}"), msg);
        }
    }

    if cfg.has(FilterKind::Kf) && cfg.state_dim() > KF_SIZE_GUARD && !cfg.run.override_size_guard {
        push(
            "filters",
            format!(
                "dense KF refused for {} cells (limit {KF_SIZE_GUARD}); set run.override_size_guard to force",
                cfg.state_dim()
            ),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fields(d: &[Diagnostic]) -> Vec<&str> {
        d.iter().map(|d| d.field.as_str()).collect()
    }

    #[test]
    fn benchmark_configs_are_valid() {
        assert!(check_config(&ExperimentConfig::crosswell_benchmark(), None).is_empty());
        assert!(check_config(&ExperimentConfig::crosswell_small(), None).is_empty());
        assert_eq!(ExperimentConfig::crosswell_benchmark().acquisition.build().n_rays(), 288);
        assert_eq!(ExperimentConfig::crosswell_small().acquisition.build().n_rays(), 144);
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::crosswell_benchmark();
        let text = c.to_toml().unwrap();
        assert_eq!(parse_config(&text, false).unwrap(), c);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(parse_config(&json, true).unwrap(), c);
    }

    #[test]
    fn zero_steps_names_field() {
        let mut c = ExperimentConfig::crosswell_small();
        c.steps = 0;
        assert!(fields(&check_config(&c, None)).contains(&"steps"));
    }

    #[test]
    fn enkf_needs_sizes() {
        let mut c = ExperimentConfig::crosswell_small();
        c.filters.push(FilterKind::Enkf);
        assert_eq!(fields(&check_config(&c, None)), vec!["enkf.ensemble_sizes"]);
        c.enkf.ensemble_sizes = vec![50, 1];
        assert_eq!(check_config(&c, None).len(), 1);
    }

    #[test]
    fn collects_every_violation() {
        let mut c = ExperimentConfig::crosswell_small();
        c.filters.clear();
        c.grid.dx = -1.0;
        c.kernel.length_scale = 0.0;
        c.fmm.n_cheb = 1;
        c.noise.variance = Some(1.0);
        let f = check_config(&c, None);
        let names = fields(&f);
        for want in ["filters", "grid.dx", "kernel.length_scale", "fmm.n_cheb", "noise"] {
            assert!(names.contains(&want), "{want} missing from {names:?}");
        }
    }

    #[test]
    fn size_guard() {
        let mut c = ExperimentConfig::crosswell_benchmark();
        c.grid.nx = 200;
        c.grid.ny = 200;
        c.grid.dx = 0.2;
        c.grid.dy = 0.2;
        assert!(fields(&check_config(&c, None)).contains(&"filters"));
        c.run.override_size_guard = true;
        assert!(!fields(&check_config(&c, None)).contains(&"filters"));
    }

    #[test]
    fn syntax_error_has_line() {
        let d = parse_config("seed = 1\nsteps = \n", false).unwrap_err();
        assert_eq!(d.line, Some(2));
        let d = parse_config("seed = 1\nbogus = 3\n", false).unwrap_err();
        assert!(d.message.contains("bogus"), "{}", d.message);
    }

    #[test]
    fn semantic_error_located() {
        let mut c = ExperimentConfig::crosswell_small();
        c.grid.ny = 0;
        let text = c.to_toml().unwrap();
        let d = check_config(&c, None).into_iter().find(|d| d.field == "grid.ny").unwrap();
        let d = locate(d, &text, false);
        let line = text.lines().nth(d.line.unwrap() - 1).unwrap();
        assert!(line.trim_start().starts_with("ny"), "{line}");
    }
}
