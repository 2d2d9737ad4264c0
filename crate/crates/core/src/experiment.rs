//! Experiment presets, configuration files, ND caching and run reports.

use crate::error::{Error, Result};
use crate::export::{export_heatmap, lattice_to_image, spectrum_report};
use crate::grid::{Grid, Side};
use crate::nd::{apply_mask, apply_noise, assemble_kernel, MaskMode, MaskSpec, NdKernel, NdMatrix, NoiseSpec};
use crate::operators::{assemble_k, OperatorSet};
use crate::persist::{sha256_bytes, sha256_file, write_matrix};
use crate::recon::{reconstruct_with, ControlSolver, ReconConfig, ReconResult};
use crate::speed::{SpeedField, SpeedPreset};
use crate::wave::Closure;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const CACHE_ENV: &str = "BCMAP_CACHE_DIR";
const CACHE_FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
    Custom,
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExperimentId::Exp1 => "exp1",
            ExperimentId::Exp2 => "exp2",
            ExperimentId::Exp3 => "exp3",
            ExperimentId::Exp4 => "exp4",
            ExperimentId::Custom => "custom",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    /// intervals per axis on the inversion grid
    pub i: usize,
    /// fine simulation grid is `factor` times finer
    #[serde(default = "two")]
    pub factor: usize,
    pub t: f64,
}

fn two() -> usize {
    2
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams { i: 25, factor: 2, t: 4.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub mask: MaskSpec,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CachePolicy {
    /// reuse a valid cached kernel, assemble otherwise
    #[default]
    Use,
    /// always assemble and overwrite the cache
    Refresh,
    /// never touch the cache
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub speed: SpeedPreset,
    #[serde(default)]
    pub grid: GridParams,
    #[serde(default)]
    pub closure: Closure,
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub recon: ReconConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub cache: CachePolicy,
    /// write the singular values of K for every variant (slow)
    #[serde(default)]
    pub spectrum: bool,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn variant(name: &str, noise: NoiseSpec, mask: MaskSpec) -> Variant {
    Variant { name: name.into(), noise, mask }
}

impl ExperimentConfig {
    pub fn preset(id: ExperimentId) -> Result<ExperimentConfig> {
        let clean = || variant("clean", NoiseSpec::none(), MaskSpec::default());
        let (speed, variants) = match id {
            ExperimentId::Exp1 => (
                SpeedPreset::Constant { value: 1.0 },
                vec![
                    clean(),
                    variant("gaussian_5", NoiseSpec::gaussian(0.05, 1), MaskSpec::default()),
                    variant("gaussian_50", NoiseSpec::gaussian(0.5, 1), MaskSpec::default()),
                    variant("constant_0.01", NoiseSpec::constant(0.01), MaskSpec::default()),
                    variant("constant_0.02", NoiseSpec::constant(0.02), MaskSpec::default()),
                    variant("constant_0.05", NoiseSpec::constant(0.05), MaskSpec::default()),
                ],
            ),
            ExperimentId::Exp2 => (SpeedPreset::Smooth, vec![clean()]),
            ExperimentId::Exp3 => {
                let m = |s: &[Side]| MaskSpec::new(s, MaskMode::Receivers);
                (
                    SpeedPreset::Constant { value: 1.0 },
                    vec![
                        variant("no_y-", NoiseSpec::none(), m(&[Side::YMinus])),
                        variant("no_y-_x+", NoiseSpec::none(), m(&[Side::YMinus, Side::XPlus])),
                        variant(
                            "no_y-_x+_y+",
                            NoiseSpec::none(),
                            m(&[Side::YMinus, Side::XPlus, Side::YPlus]),
                        ),
                    ],
                )
            }
            ExperimentId::Exp4 => (SpeedPreset::piecewise(), vec![clean()]),
            ExperimentId::Custom => {
                return Err(Error::Config("custom experiments need a config file".into()))
            }
        };
        Ok(ExperimentConfig {
            experiment: id,
            speed,
            grid: GridParams::default(),
            closure: Closure::Ghost,
            variants,
            recon: ReconConfig::default(),
            output: default_output().join(id.to_string()),
            cache: CachePolicy::Use,
            spectrum: false,
        })
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.i < 2 || self.grid.factor == 0 {
            return Err(Error::Config("grid needs i >= 2 and factor >= 1".into()));
        }
        if !(self.grid.t > 0.0) {
            return Err(Error::Config("grid.t must be positive".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("at least one variant is required".into()));
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.variants.len() || names.iter().any(|n| n.is_empty() || n.contains('/')) {
            return Err(Error::Config("variant names must be unique, nonempty and contain no '/'".into()));
        }
        self.recon.validate()?;
        self.speed.sample(2)?;
        Ok(())
    }

    pub fn coarse_grid(&self) -> Result<Grid> {
        let c_max = self.speed.c_max_bound(self.grid.i * self.grid.factor)?;
        Grid::new(self.grid.i, self.grid.t, c_max)
    }

    /// SHA-256 of the canonical JSON form, without output location and
    /// cache policy.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("output");
            m.remove("cache");
        }
        sha256_bytes(v.to_string().as_bytes())
    }

    /// Key of the ND kernel this configuration needs.
    pub fn kernel_key(&self) -> String {
        let k = json!({
            "format": CACHE_FORMAT,
            "speed": self.speed,
            "i": self.grid.i,
            "factor": self.grid.factor,
            "t": self.grid.t,
            "closure": self.closure,
        });
        sha256_bytes(k.to_string().as_bytes())
    }
}

/// Pipeline stage, used for diagnostics and exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Assemble,
    NoiseMask,
    Operators,
    Control,
    Recon,
    Output,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Assemble => 3,
            Stage::NoiseMask => 4,
            Stage::Operators => 5,
            Stage::Control => 6,
            Stage::Recon => 7,
            Stage::Output => 8,
        }
    }
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Assemble => "assemble",
            Stage::NoiseMask => "noise/mask",
            Stage::Operators => "operators",
            Stage::Control => "control",
            Stage::Recon => "recon",
            Stage::Output => "output",
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage {}: {source}", stage.name())]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

pub fn cache_root() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("bcmap-cache"))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CacheStamp {
    key: String,
    g0: String,
    g1: String,
}

/// Cached kernel if present and intact, otherwise a fresh assembly.
/// Returns the kernel and whether it came from the cache.
pub fn obtain_kernel(cfg: &ExperimentConfig, root: &Path) -> Result<(NdKernel, bool)> {
    let key = cfg.kernel_key();
    let dir = root.join(&key);
    if cfg.cache == CachePolicy::Use {
        if let Some(k) = load_cached(&dir, &key) {
            return Ok((k, true));
        }
    }
    let coarse = cfg.coarse_grid()?;
    let speed_fine = cfg.speed.sample(coarse.i * cfg.grid.factor)?;
    let kernel = assemble_kernel(&speed_fine, &coarse, cfg.grid.factor, cfg.closure)?;
    if cfg.cache != CachePolicy::Off {
        save_cached(&kernel, &dir, &key, cfg)?;
    }
    Ok((kernel, false))
}

fn load_cached(dir: &Path, key: &str) -> Option<NdKernel> {
    let stamp: CacheStamp = serde_json::from_str(&std::fs::read_to_string(dir.join("stamp.json")).ok()?).ok()?;
    if stamp.key != key
        || sha256_file(&dir.join("g0.bctm")).ok()? != stamp.g0
        || sha256_file(&dir.join("g1.bctm")).ok()? != stamp.g1
    {
        return None;
    }
    NdKernel::load(dir).ok()
}

fn save_cached(kernel: &NdKernel, dir: &Path, key: &str, cfg: &ExperimentConfig) -> Result<()> {
    kernel.save(dir, json!({ "speed": cfg.speed, "key": key }))?;
    let stamp = CacheStamp {
        key: key.into(),
        g0: sha256_file(&dir.join("g0.bctm"))?,
        g1: sha256_file(&dir.join("g1.bctm"))?,
    };
    std::fs::write(dir.join("stamp.json"), serde_json::to_string_pretty(&stamp)?)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantMetrics {
    pub name: String,
    pub noise: NoiseSpec,
    pub mask: MaskSpec,
    pub rel_l2_error_vs_truth: Option<f64>,
    pub rel_l2_error_vs_projection: Option<f64>,
    pub rel_l2_error_vs_regularized_projection: Option<f64>,
    pub alpha: f64,
    pub sigma_max_sq: f64,
    pub k_asymmetry: f64,
    pub pair_asymmetry: f64,
    pub max_control_residual: f64,
    pub span_defect: f64,
    pub floor_hits: usize,
    pub zero_nd: bool,
    pub k_zero_singular_values: Option<usize>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub experiment: ExperimentId,
    pub config_digest: String,
    pub grid: Grid,
    pub kernel_from_cache: bool,
    pub stage_seconds: BTreeMap<String, f64>,
    pub metrics: Vec<VariantMetrics>,
    pub manifest: Vec<ManifestEntry>,
    pub warnings: Vec<String>,
}

/// Metrics document without timings; identical inputs give identical bytes.
pub fn metrics_json(experiment: ExperimentId, digest: &str, metrics: &[VariantMetrics]) -> String {
    serde_json::to_string_pretty(&json!({
        "experiment": experiment,
        "config_digest": digest,
        "variants": metrics,
    }))
    .expect("metrics serialize")
        + "\n"
}

struct Timer(BTreeMap<String, f64>);

impl Timer {
    fn add(&mut self, k: &str, t: Instant) {
        *self.0.entry(k.to_string()).or_insert(0.0) += t.elapsed().as_secs_f64();
    }
}

/// Runs every variant of the configuration and writes its artifacts.
pub fn run_experiment(cfg: &ExperimentConfig) -> std::result::Result<RunReport, StageError> {
    run_experiment_in(cfg, &cache_root())
}

pub fn run_experiment_in(cfg: &ExperimentConfig, cache: &Path) -> std::result::Result<RunReport, StageError> {
    cfg.validate().at(Stage::Config)?;
    let t0 = Instant::now();
    let (kernel, cached) = obtain_kernel(cfg, cache).at(Stage::Assemble)?;
    let secs = t0.elapsed().as_secs_f64();
    run_with_kernel(cfg, kernel, cached, secs)
}

/// Runs the configuration on an already assembled kernel, which must match
/// the configured grid.
pub fn run_with_kernel(
    cfg: &ExperimentConfig,
    kernel: NdKernel,
    cached: bool,
    assemble_seconds: f64,
) -> std::result::Result<RunReport, StageError> {
    cfg.validate().at(Stage::Config)?;
    let want = cfg.coarse_grid().at(Stage::Config)?;
    if !want.same_shape(&kernel.grid) || kernel.factor != cfg.grid.factor {
        return Err(StageError {
            stage: Stage::Assemble,
            source: Error::Shape(format!(
                "kernel grid I={} L={} factor {} does not match configured I={} L={} factor {}",
                kernel.grid.i, kernel.grid.l, kernel.factor, want.i, want.l, cfg.grid.factor
            )),
        });
    }
    let digest = cfg.digest();
    let mut warnings = Vec::new();
    if cfg.grid.i >= 50 {
        warnings.push(format!("full-scale grid I={}: assembly and solves take hours", cfg.grid.i));
    }
    let mut timer = Timer(BTreeMap::new());
    timer.0.insert("assemble".into(), assemble_seconds);
    let grid = kernel.grid;
    let truth = cfg.speed.sample(grid.i).at(Stage::Config)?;
    let base = NdMatrix::from_kernel(kernel, cfg.speed.name());
    let out = &cfg.output;
    std::fs::create_dir_all(out).map_err(Error::from).at(Stage::Output)?;
    let mut files: Vec<PathBuf> = Vec::new();
    let mut metrics = Vec::new();

    for v in &cfg.variants {
        let t = Instant::now();
        let nd = apply_noise(&base, v.noise).at(Stage::NoiseMask)?;
        let nd = apply_mask(&nd, &v.mask);
        timer.add("noise_mask", t);

        let t = Instant::now();
        let ops = OperatorSet::new(&grid);
        let k = assemble_k(&nd, &ops).at(Stage::Operators)?;
        timer.add("operators", t);

        let t = Instant::now();
        let solver = ControlSolver::new(&k, cfg.recon.alpha_rel, Some(nd.support())).at(Stage::Control)?;
        timer.add("control", t);

        let t = Instant::now();
        let res = reconstruct_with(&nd, &cfg.recon, Some(&truth), &ops, &k, &solver).at(Stage::Recon)?;
        timer.add("recon", t);

        let t = Instant::now();
        let vdir = out.join(&v.name);
        let mut k_zero = None;
        if cfg.spectrum {
            let s = spectrum_report(&k.mat, &vdir.join("k_spectrum.csv")).at(Stage::Output)?;
            files.push(vdir.join("k_spectrum.csv"));
            files.push(vdir.join("k_spectrum.csv.json"));
            k_zero = Some(s.zero_count);
        }
        files.extend(write_variant(&vdir, &res).at(Stage::Output)?);
        timer.add("output", t);

        metrics.push(VariantMetrics {
            name: v.name.clone(),
            noise: v.noise,
            mask: v.mask.clone(),
            rel_l2_error_vs_truth: res.rel_l2_error_vs_truth,
            rel_l2_error_vs_projection: res.rel_l2_error_vs_projection,
            rel_l2_error_vs_regularized_projection: res.rel_l2_error_vs_regularized_projection,
            alpha: res.alpha,
            sigma_max_sq: res.sigma_max_sq,
            k_asymmetry: res.k_asymmetry,
            pair_asymmetry: res.pair_asymmetry,
            max_control_residual: res.max_control_residual,
            span_defect: res.span_defect,
            floor_hits: res.floor_hits,
            zero_nd: nd.is_zero(),
            k_zero_singular_values: k_zero,
            warnings: res.warnings.clone(),
        });
    }

    let t = Instant::now();
    let mpath = out.join("metrics.json");
    std::fs::write(&mpath, metrics_json(cfg.experiment, &digest, &metrics))
        .map_err(Error::from)
        .at(Stage::Output)?;
    files.push(mpath);
    let cpath = out.join("config.toml");
    std::fs::write(&cpath, cfg.to_toml().at(Stage::Output)?).map_err(Error::from).at(Stage::Output)?;
    files.push(cpath);
    let mut manifest = Vec::with_capacity(files.len());
    for f in &files {
        manifest.push(ManifestEntry {
            path: f.strip_prefix(out).unwrap_or(f).display().to_string(),
            sha256: sha256_file(f).at(Stage::Output)?,
        });
    }
    timer.add("output", t);
    let report = RunReport {
        experiment: cfg.experiment,
        config_digest: digest,
        grid,
        kernel_from_cache: cached,
        stage_seconds: timer.0,
        metrics,
        manifest,
        warnings,
    };
    let text = serde_json::to_string_pretty(&report).map_err(Error::from).at(Stage::Output)?;
    std::fs::write(out.join("report.json"), text + "\n").map_err(Error::from).at(Stage::Output)?;
    Ok(report)
}

fn write_variant(dir: &Path, res: &ReconResult) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let i = res.grid.i;
    let n = i + 1;
    let mut files = Vec::new();
    let mut grid_out = |name: &str, values: &[f64]| -> Result<()> {
        let img = lattice_to_image(i, values);
        let h = export_heatmap(n, n, &img, &dir.join(name))?;
        let bin = dir.join(format!("{name}.bctm"));
        write_matrix(&bin, n, n, values)?;
        files.push(h.csv);
        files.push(h.pgm.clone());
        files.push(crate::persist::sidecar_path(&h.pgm));
        files.push(bin);
        Ok(())
    };
    grid_out("reconstruction", &res.c_rec)?;
    grid_out("c_inv_sq", &res.c_inv_sq)?;
    if let (Some(t), Some(p)) = (&res.truth, &res.projection) {
        grid_out("truth", t)?;
        grid_out("projection", p)?;
        let err: Vec<f64> = res.c_rec.iter().zip(t).map(|(a, b)| a - b).collect();
        grid_out("error", &err)?;
        let perr: Vec<f64> = res.c_rec.iter().zip(p).map(|(a, b)| a - b).collect();
        grid_out("error_vs_projection", &perr)?;
    }
    Ok(files)
}

/// Speed field of a configuration on its inversion grid.
pub fn truth_field(cfg: &ExperimentConfig) -> Result<SpeedField> {
    cfg.speed.sample(cfg.grid.i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for id in [ExperimentId::Exp1, ExperimentId::Exp2, ExperimentId::Exp3, ExperimentId::Exp4] {
            let c = ExperimentConfig::preset(id).unwrap();
            c.validate().unwrap();
            let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
            assert_eq!(back, c);
        }
        assert!(ExperimentConfig::preset(ExperimentId::Custom).is_err());
    }

    #[test]
    fn exp3_masks_are_cumulative() {
        let c = ExperimentConfig::preset(ExperimentId::Exp3).unwrap();
        let sides: Vec<usize> = c.variants.iter().map(|v| v.mask.removed_sides.len()).collect();
        assert_eq!(sides, vec![1, 2, 3]);
        assert_eq!(c.variants[1].mask.removed_sides[..1], c.variants[0].mask.removed_sides[..]);
    }

    #[test]
    fn kernel_key_ignores_noise() {
        let a = ExperimentConfig::preset(ExperimentId::Exp1).unwrap();
        let b = ExperimentConfig::preset(ExperimentId::Exp3).unwrap();
        assert_eq!(a.kernel_key(), b.kernel_key());
        assert_ne!(a.digest(), b.digest());
    }
}
