//! Experiment configuration: a TOML file plus `section.key=value` overrides.

use std::path::{Path, PathBuf};

use migr_core::farfield::{DirectionSet, FrequencyGrid};
use migr_core::grid::{Grid3, ScalarField};
use migr_core::io::read_scalar_field;
use migr_core::recovery::{k_sequence, EstimatorKind, KSequence, TauGrid};
use migr_core::rng::NoiseSeed;
use migr_core::solver::{smooth_bump, Potential, SolverConfig};
use migr_core::source::{SourceModel, SpectrumKind};
use serde::Deserialize;

/// Invalid configuration, tagged with the offending field path.
#[derive(Debug, thiserror::Error)]
#[error("config error at `{path}`: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

fn fail<T>(path: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { path: path.into(), message: message.into() })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    pub source: SourceSpec,
    #[serde(default)]
    pub potential: PotentialSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub farfield: FarFieldSpec,
    #[serde(default)]
    pub bands: BandSpec,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    #[serde(default)]
    pub validate: ValidateSpec,
    #[serde(default)]
    pub study: StudySpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub center: [f64; 3],
    pub side: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub m: f64,
    #[serde(default = "default_spectrum")]
    pub spectrum: String,
    pub mu: ShapeSpec,
    #[serde(default)]
    pub mean: ShapeSpec,
}

fn default_spectrum() -> String {
    "compact-riesz".into()
}

/// Profile of `mu` or of the mean source.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    /// `none`, `gaussian-bump`, `double-bump` or `file`.
    pub shape: String,
    #[serde(default = "one")]
    pub amplitude: f64,
    /// Gaussian width of `gaussian-bump`, bump radius of `double-bump`.
    #[serde(default = "default_width")]
    pub width: f64,
    /// Radius beyond which `gaussian-bump` is zero.
    #[serde(default)]
    pub cutoff: Option<f64>,
    /// Distance between the two centres of `double-bump`.
    #[serde(default)]
    pub separation: f64,
    #[serde(default)]
    pub center: [f64; 3],
    #[serde(default)]
    pub path: Option<PathBuf>,
}

impl Default for ShapeSpec {
    fn default() -> Self {
        Self {
            shape: "none".into(),
            amplitude: 1.0,
            width: default_width(),
            cutoff: None,
            separation: 0.0,
            center: [0.0; 3],
            path: None,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn default_width() -> f64 {
    0.25
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    /// `none`, `gaussian` or `file`.
    pub kind: String,
    #[serde(default = "one")]
    pub amplitude: f64,
    /// `V = amplitude * exp(-decay_rate |x - center|^2)`.
    #[serde(default = "default_decay")]
    pub decay_rate: f64,
    #[serde(default)]
    pub center: [f64; 3],
    #[serde(default)]
    pub path: Option<PathBuf>,
}

fn default_decay() -> f64 {
    12.5
}

impl Default for PotentialSpec {
    fn default() -> Self {
        Self { kind: "none".into(), amplitude: 1.0, decay_rate: default_decay(), center: [0.0; 3], path: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_iter")]
    pub max_iter: usize,
    #[serde(default = "default_pad")]
    pub pad_factor: usize,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_iter() -> usize {
    200
}

fn default_pad() -> usize {
    2
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self { tol: default_tol(), max_iter: default_iter(), pad_factor: default_pad() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarFieldSpec {
    #[serde(default = "default_directions")]
    pub directions: usize,
    /// Closed under `x -> -x`; requires an even count.
    #[serde(default = "yes")]
    pub antipodal: bool,
    #[serde(default = "default_dk")]
    pub dk: f64,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub first_index: u64,
}

fn default_directions() -> usize {
    32
}

fn yes() -> bool {
    true
}

fn default_dk() -> f64 {
    0.125
}

fn default_realizations() -> usize {
    1
}

fn default_seed() -> u64 {
    1
}

impl Default for FarFieldSpec {
    fn default() -> Self {
        Self {
            directions: default_directions(),
            antipodal: true,
            dk: default_dk(),
            realizations: default_realizations(),
            seed: default_seed(),
            first_index: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSpec {
    /// Explicit band starts; otherwise `K_j = scale * j^(m* + gamma)`.
    #[serde(default)]
    pub ks: Option<Vec<f64>>,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "one")]
    pub tau_step: f64,
    #[serde(default = "default_tau_count")]
    pub tau_count: usize,
}

fn default_scale() -> f64 {
    8.0
}

fn default_gamma() -> f64 {
    0.5
}

fn default_count() -> usize {
    3
}

fn default_tau_count() -> usize {
    3
}

impl Default for BandSpec {
    fn default() -> Self {
        Self {
            ks: None,
            scale: default_scale(),
            gamma: default_gamma(),
            count: default_count(),
            tau_step: 1.0,
            tau_count: default_tau_count(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default)]
    pub realization: usize,
    /// Nodes per axis of the reconstruction grid (same box as `grid`).
    #[serde(default)]
    pub target_n: Option<usize>,
}

fn default_kind() -> String {
    "single-realization".into()
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        Self { kind: default_kind(), realization: 0, target_n: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSpec {
    #[serde(default = "default_val_realizations")]
    pub realizations: usize,
    #[serde(default = "default_val_ks")]
    pub ks: Vec<f64>,
    #[serde(default = "default_val_dirs")]
    pub directions: usize,
    #[serde(default = "yes")]
    pub covariance: bool,
    #[serde(default = "yes")]
    pub leading_term: bool,
    #[serde(default = "yes")]
    pub cross_decay: bool,
    #[serde(default = "yes")]
    pub mean_decay: bool,
    #[serde(default = "yes")]
    pub ergodic: bool,
}

fn default_val_realizations() -> usize {
    40
}

fn default_val_ks() -> Vec<f64> {
    vec![4.0, 8.0, 16.0]
}

fn default_val_dirs() -> usize {
    4
}

impl Default for ValidateSpec {
    fn default() -> Self {
        Self {
            realizations: default_val_realizations(),
            ks: default_val_ks(),
            directions: default_val_dirs(),
            covariance: true,
            leading_term: true,
            cross_decay: true,
            mean_decay: true,
            ergodic: true,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    /// Grid sizes to sweep; empty means `grid.n` only.
    #[serde(default)]
    pub grid_sizes: Vec<usize>,
    /// Realization counts to sweep; empty means `farfield.realizations` only.
    #[serde(default)]
    pub realizations: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

/// Parse a TOML document, apply `key.path=value` overrides (flags win) and validate.
pub fn load(text: &str, overrides: &[String], base: &Path) -> Result<ExperimentConfig, ConfigError> {
    let mut doc: toml::Table = match text.parse() {
        Ok(t) => t,
        Err(e) => return fail("<file>", e.to_string()),
    };
    for o in overrides {
        let Some((key, raw)) = o.split_once('=') else {
            return fail(o, "override must look like section.key=value");
        };
        let value = parse_value(raw.trim());
        set_path(&mut doc, key.trim(), value)?;
    }
    let mut cfg: ExperimentConfig = match toml::Value::Table(doc).try_into() {
        Ok(c) => c,
        Err(e) => return fail("<file>", e.to_string()),
    };
    for p in [&mut cfg.source.mu.path, &mut cfg.source.mean.path, &mut cfg.potential.path].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(doc: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => return fail(key, format!("`{p}` is not a section")),
        };
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.grid;
        if !(g.side > 0.0 && g.side.is_finite()) {
            return fail("grid.side", "must be positive");
        }
        if g.n < 8 {
            return fail("grid.n", "at least 8 nodes per axis");
        }
        let m = self.source.m;
        if !(m > 2.0 && m < 3.0) {
            return fail("source.m", format!("{m} is outside (2, 3)"));
        }
        if self.source.spectrum.parse::<SpectrumKind>().is_err() {
            return fail("source.spectrum", "expected compact-riesz or periodic-riesz");
        }
        check_shape("source.mu", &self.source.mu)?;
        check_shape("source.mean", &self.source.mean)?;
        match self.potential.kind.as_str() {
            "none" => {}
            "gaussian" => {
                if !(self.potential.decay_rate > 0.0) {
                    return fail("potential.decay_rate", "must be positive");
                }
            }
            "file" => {
                if self.potential.path.is_none() {
                    return fail("potential.path", "required for kind = file");
                }
            }
            other => return fail("potential.kind", format!("unknown kind `{other}`")),
        }
        if let Err(e) = self.solver_config().validate() {
            return fail("solver", e.to_string());
        }
        let ff = &self.farfield;
        if ff.realizations == 0 {
            return fail("farfield.realizations", "must be at least 1");
        }
        if ff.directions == 0 || (ff.antipodal && ff.directions % 2 == 1) {
            return fail("farfield.directions", "must be positive (and even when antipodal)");
        }
        if !(ff.dk > 0.0) {
            return fail("farfield.dk", "must be positive");
        }
        let b = &self.bands;
        if let Some(ks) = &b.ks {
            if ks.is_empty() || ks.iter().any(|k| !(*k > 0.0)) || ks.windows(2).any(|w| w[1] <= w[0]) {
                return fail("bands.ks", "must be positive and strictly increasing");
            }
        } else {
            if b.count == 0 {
                return fail("bands.count", "must be at least 1");
            }
            if !(b.gamma > 0.0) {
                return fail("bands.gamma", "must be positive");
            }
            if !(b.scale > 0.0) {
                return fail("bands.scale", "must be positive");
            }
        }
        if !(b.tau_step > 0.0) || b.tau_count == 0 {
            return fail("bands.tau_step", "tau grid needs a positive step and count");
        }
        let ratio = b.tau_step / ff.dk;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return fail("bands.tau_step", format!("must be a multiple of farfield.dk = {}", ff.dk));
        }
        let k1 = self.k_sequence().map_err(|e| ConfigError { path: "bands".into(), message: e.to_string() })?.values[0];
        if ff.dk > 0.25f64.min(k1 / 64.0) * (1.0 + 1e-12) {
            return fail("farfield.dk", format!("must not exceed min(0.25, K_1/64) = {}", 0.25f64.min(k1 / 64.0)));
        }
        let nyq = self.grid().map_err(|e| ConfigError { path: "grid".into(), message: e.to_string() })?.nyquist();
        let top = self.frequencies().map_err(|e| ConfigError { path: "bands".into(), message: e.to_string() })?.k_max();
        if top >= nyq {
            return fail("grid.n", format!("band coverage reaches k = {top:.2}, beyond the grid Nyquist {nyq:.2}"));
        }
        if self.estimator_kind().is_err() {
            return fail("estimator.kind", "expected single-realization, mean-subtracted or ensemble");
        }
        if self.estimator.realization >= ff.realizations {
            return fail("estimator.realization", "index beyond farfield.realizations");
        }
        if let Some(n) = self.estimator.target_n {
            if n < 4 {
                return fail("estimator.target_n", "at least 4 nodes per axis");
            }
        }
        let v = &self.validate;
        if v.realizations < 20 {
            return fail("validate.realizations", "at least 20");
        }
        if v.directions == 0 {
            return fail("validate.directions", "must be positive");
        }
        if self.study.grid_sizes.iter().any(|&n| n < 8) {
            return fail("study.grid_sizes", "each size needs at least 8 nodes per axis");
        }
        if self.study.realizations.contains(&0) {
            return fail("study.realizations", "counts must be positive");
        }
        Ok(())
    }

    pub fn grid(&self) -> migr_core::Result<Grid3> {
        Grid3::cube(self.grid.center, self.grid.side, self.grid.n)
    }

    pub fn target_grid(&self) -> migr_core::Result<Grid3> {
        Grid3::cube(self.grid.center, self.grid.side, self.estimator.target_n.unwrap_or(self.grid.n / 2))
    }

    pub fn model(&self, grid: Grid3) -> anyhow::Result<SourceModel> {
        let mu = shape_field(&self.source.mu, grid)?;
        let mean = shape_field(&self.source.mean, grid)?;
        let spectrum: SpectrumKind = self.source.spectrum.parse()?;
        Ok(SourceModel::new(mu, mean, self.source.m)?.with_spectrum(spectrum))
    }

    pub fn potential(&self, grid: Grid3) -> anyhow::Result<Potential> {
        let p = &self.potential;
        Ok(match p.kind.as_str() {
            "gaussian" => Potential::gaussian(grid, p.amplitude, (2.0 * p.decay_rate).sqrt().recip(), p.center)?,
            "file" => Potential::new(load_on(p.path.as_deref().expect("validated"), grid)?),
            _ => Potential::zero(grid),
        })
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig { tol: self.solver.tol, max_iter: self.solver.max_iter, pad_factor: self.solver.pad_factor }
    }

    pub fn directions(&self) -> migr_core::Result<DirectionSet> {
        if self.farfield.antipodal {
            DirectionSet::antipodal(self.farfield.directions)
        } else {
            DirectionSet::fibonacci(self.farfield.directions)
        }
    }

    pub fn k_sequence(&self) -> migr_core::Result<KSequence> {
        match &self.bands.ks {
            Some(ks) => Ok(KSequence { exponent: f64::NAN, scale: ks[0], values: ks.clone() }),
            None => k_sequence(self.source.m, self.bands.gamma, self.bands.scale, self.bands.count),
        }
    }

    pub fn taus(&self) -> migr_core::Result<TauGrid> {
        TauGrid::new(self.bands.tau_step, self.bands.tau_count)
    }

    /// Frequencies covering every band `[K_j, 2 K_j]` shifted by up to `tau_max`.
    pub fn frequencies(&self) -> migr_core::Result<FrequencyGrid> {
        let seq = self.k_sequence()?;
        let taus = self.taus()?;
        let top = 2.0 * seq.values[seq.values.len() - 1] + taus.max();
        FrequencyGrid::covering(seq.values[0], top, self.farfield.dk)
    }

    pub fn seeds(&self) -> Vec<NoiseSeed> {
        (0..self.farfield.realizations as u64)
            .map(|r| NoiseSeed::new(self.farfield.seed, self.farfield.first_index + r))
            .collect()
    }

    pub fn estimator_kind(&self) -> migr_core::Result<EstimatorKind> {
        self.estimator.kind.parse()
    }
}

fn check_shape(path: &str, s: &ShapeSpec) -> Result<(), ConfigError> {
    match s.shape.as_str() {
        "none" => Ok(()),
        "gaussian-bump" | "double-bump" => {
            if !(s.width > 0.0) {
                return fail(&format!("{path}.width"), "must be positive");
            }
            if s.cutoff.is_some_and(|c| !(c > 0.0)) {
                return fail(&format!("{path}.cutoff"), "must be positive");
            }
            Ok(())
        }
        "file" => match s.path {
            Some(_) => Ok(()),
            None => fail(&format!("{path}.path"), "required for shape = file"),
        },
        other => fail(&format!("{path}.shape"), format!("unknown shape `{other}`")),
    }
}

/// `e^{1 - 1/(1 - t)}` for `t < 1`, else 0: a smooth window in `t = r^2 / R^2`.
fn window(t: f64) -> f64 {
    if t < 1.0 {
        (1.0 - 1.0 / (1.0 - t)).exp()
    } else {
        0.0
    }
}

fn shape_field(s: &ShapeSpec, grid: Grid3) -> anyhow::Result<ScalarField> {
    Ok(match s.shape.as_str() {
        "gaussian-bump" => {
            let cutoff = s.cutoff.unwrap_or(3.0 * s.width);
            ScalarField::from_fn(grid, |x| {
                let r2 = (0..3).map(|a| (x[a] - s.center[a]).powi(2)).sum::<f64>();
                // the window flattens the Gaussian only near the cutoff
                s.amplitude * (-r2 / (2.0 * s.width * s.width)).exp() * window((r2 / (cutoff * cutoff)).powi(4))
            })?
        }
        "double-bump" => {
            let half = 0.5 * s.separation;
            let a = smooth_bump(grid, s.amplitude, s.width, [s.center[0] - half, s.center[1], s.center[2]])?;
            let b = smooth_bump(grid, s.amplitude, s.width, [s.center[0] + half, s.center[1], s.center[2]])?;
            ScalarField::new(grid, a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect())?
        }
        "file" => load_on(s.path.as_deref().expect("validated"), grid)?,
        _ => ScalarField::zeros(grid),
    })
}

fn load_on(path: &Path, grid: Grid3) -> anyhow::Result<ScalarField> {
    let f = read_scalar_field(path)?;
    if !f.grid().same_shape(&grid) {
        anyhow::bail!(ConfigError {
            path: path.display().to_string(),
            message: "field grid differs from the configured grid".into()
        });
    }
    Ok(f)
}
