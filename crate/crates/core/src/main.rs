use bcmap::experiment::{
    run_experiment, run_with_kernel, CachePolicy, ExperimentConfig, ExperimentId, Stage, StageError,
};
use bcmap::export::{export_heatmap, spectrum_report};
use bcmap::nd::{apply_mask, apply_noise, assemble_kernel, MaskMode, MaskSpec, NdKernel, NdMatrix, NoiseKind, NoiseSpec};
use bcmap::operators::{adjoint_residual, assemble_k, OperatorSet};
use bcmap::persist::{read_csv, read_matrix};
use bcmap::wave::Closure;
use bcmap::{Error, Grid, Side, SpeedPreset};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bcmap", version, about = "Boundary-control wave-speed reconstruction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Assemble or inspect ND-map kernels
    Ndmap {
        #[command(subcommand)]
        cmd: NdCmd,
    },
    /// Run a reconstruction from a config file
    Recon {
        #[command(subcommand)]
        cmd: ReconCmd,
    },
    /// Run an experiment preset
    Experiment {
        #[arg(value_enum)]
        id: PresetId,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write heatmaps and spectra
    Export {
        #[command(subcommand)]
        cmd: ExportCmd,
    },
}

#[derive(Subcommand)]
enum NdCmd {
    Assemble {
        #[command(flatten)]
        speed: SpeedArgs,
        /// inversion grid intervals per axis
        #[arg(long, default_value_t = 15)]
        i: usize,
        #[arg(long, default_value_t = 2)]
        factor: usize,
        #[arg(long, default_value_t = 1.95)]
        t: f64,
        #[arg(long, value_enum, default_value_t = ClosureArg::Ghost)]
        closure: ClosureArg,
        #[arg(long)]
        out: PathBuf,
    },
    Info {
        dir: PathBuf,
        /// also compute adjoint residuals (reads every block)
        #[arg(long)]
        residuals: bool,
    },
}

#[derive(Subcommand)]
enum ReconCmd {
    Run {
        #[arg(long)]
        config: PathBuf,
        /// use a kernel written by `ndmap assemble` instead of the cache
        #[arg(long)]
        nd: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Subcommand)]
enum ExportCmd {
    /// CSV or container grid to CSV + PGM heatmap
    Heatmap {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Singular values of K for a stored kernel
    Spectrum {
        #[arg(long)]
        nd: PathBuf,
        #[arg(long, value_enum, default_value_t = NoiseArg::None)]
        noise: NoiseArg,
        #[arg(long, default_value_t = 0.0)]
        level: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// sides without data, e.g. y- x+
        #[arg(long, num_args = 1..)]
        remove: Vec<Side>,
        #[arg(long, value_enum, default_value_t = MaskArg::Receivers)]
        mask_mode: MaskArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    i: Option<usize>,
    #[arg(long)]
    factor: Option<usize>,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    alpha_rel: Option<f64>,
    #[arg(long)]
    beta_rel: Option<f64>,
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long)]
    floor: Option<f64>,
    #[arg(long, value_enum)]
    cache: Option<CacheArg>,
    /// write K spectra per variant
    #[arg(long)]
    spectrum: bool,
    /// I=50 on a 100-interval fine grid; takes hours
    #[arg(long)]
    full_scale: bool,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if self.full_scale {
            eprintln!("warning: full-scale run (I=50, fine I=100) takes hours");
            cfg.grid.i = 50;
        }
        if let Some(v) = &self.out {
            cfg.output = v.clone();
        }
        if let Some(v) = self.i {
            cfg.grid.i = v;
        }
        if let Some(v) = self.factor {
            cfg.grid.factor = v;
        }
        if let Some(v) = self.t {
            cfg.grid.t = v;
        }
        if let Some(v) = self.alpha_rel {
            cfg.recon.alpha_rel = v;
        }
        if let Some(v) = self.beta_rel {
            cfg.recon.beta_rel = v;
        }
        if let Some(v) = self.cutoff {
            cfg.recon.cutoff = v;
        }
        if let Some(v) = self.floor {
            cfg.recon.floor = v;
        }
        if let Some(v) = self.cache {
            cfg.cache = match v {
                CacheArg::Use => CachePolicy::Use,
                CacheArg::Refresh => CachePolicy::Refresh,
                CacheArg::Off => CachePolicy::Off,
            };
        }
        cfg.spectrum |= self.spectrum;
    }
}

#[derive(Args)]
struct SpeedArgs {
    #[arg(long, value_enum, default_value_t = SpeedArg::Constant)]
    speed: SpeedArg,
    /// value for the constant preset
    #[arg(long, default_value_t = 1.0)]
    value: f64,
    /// expression in x, y, pi for the expression preset
    #[arg(long)]
    expr: Option<String>,
}

impl SpeedArgs {
    fn preset(&self) -> Result<SpeedPreset, Error> {
        Ok(match self.speed {
            SpeedArg::Constant => SpeedPreset::Constant { value: self.value },
            SpeedArg::Smooth => SpeedPreset::Smooth,
            SpeedArg::Piecewise => SpeedPreset::piecewise(),
            SpeedArg::Expression => SpeedPreset::Expression {
                expr: self
                    .expr
                    .clone()
                    .ok_or_else(|| Error::Config("--expr is required for the expression preset".into()))?,
            },
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetId {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpeedArg {
    Constant,
    Smooth,
    Piecewise,
    Expression,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ClosureArg {
    Ghost,
    OneSided,
}

#[derive(Clone, Copy, ValueEnum)]
enum CacheArg {
    Use,
    Refresh,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    None,
    Gaussian,
    Constant,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Both,
    Receivers,
    Sources,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}

fn at(stage: Stage) -> impl Fn(Error) -> StageError {
    move |source| StageError { stage, source }
}

fn run(cli: Cli) -> Result<(), StageError> {
    match cli.cmd {
        Cmd::Ndmap { cmd: NdCmd::Assemble { speed, i, factor, t, closure, out } } => {
            let preset = speed.preset().map_err(at(Stage::Config))?;
            let c_max = preset.c_max_bound(i * factor).map_err(at(Stage::Config))?;
            let coarse = Grid::new(i, t, c_max).map_err(at(Stage::Config))?;
            let fine_speed = preset.sample(i * factor).map_err(at(Stage::Config))?;
            let closure = match closure {
                ClosureArg::Ghost => Closure::Ghost,
                ClosureArg::OneSided => Closure::OneSided,
            };
            let k = assemble_kernel(&fine_speed, &coarse, factor, closure).map_err(at(Stage::Assemble))?;
            k.save(&out, json!({ "speed": preset })).map_err(at(Stage::Output))?;
            println!("{}", serde_json::to_string_pretty(&kernel_info(&k, false)).unwrap());
            Ok(())
        }
        Cmd::Ndmap { cmd: NdCmd::Info { dir, residuals } } => {
            let k = NdKernel::load(&dir).map_err(at(Stage::Config))?;
            println!("{}", serde_json::to_string_pretty(&kernel_info(&k, residuals)).unwrap());
            Ok(())
        }
        Cmd::Recon { cmd: ReconCmd::Run { config, nd, overrides } } => {
            let mut cfg = ExperimentConfig::load(&config).map_err(at(Stage::Config))?;
            overrides.apply(&mut cfg);
            let report = match nd {
                Some(dir) => {
                    let k = NdKernel::load(&dir).map_err(at(Stage::Assemble))?;
                    run_with_kernel(&cfg, k, true, 0.0)?
                }
                None => run_experiment(&cfg)?,
            };
            print_report(&report);
            Ok(())
        }
        Cmd::Experiment { id, overrides } => {
            let id = match id {
                PresetId::Exp1 => ExperimentId::Exp1,
                PresetId::Exp2 => ExperimentId::Exp2,
                PresetId::Exp3 => ExperimentId::Exp3,
                PresetId::Exp4 => ExperimentId::Exp4,
            };
            let mut cfg = ExperimentConfig::preset(id).map_err(at(Stage::Config))?;
            overrides.apply(&mut cfg);
            let report = run_experiment(&cfg)?;
            print_report(&report);
            Ok(())
        }
        Cmd::Export { cmd: ExportCmd::Heatmap { input, out } } => {
            let m = load_grid(&input).map_err(at(Stage::Config))?;
            let h = export_heatmap(m.rows, m.cols, &m.data, &out).map_err(at(Stage::Output))?;
            println!("{}", serde_json::to_string_pretty(&h).unwrap());
            Ok(())
        }
        Cmd::Export { cmd: ExportCmd::Spectrum { nd, noise, level, seed, remove, mask_mode, out } } => {
            let k = NdKernel::load(&nd).map_err(at(Stage::Config))?;
            let grid = k.grid;
            let spec = match noise {
                NoiseArg::None => NoiseSpec::none(),
                NoiseArg::Gaussian => NoiseSpec { kind: NoiseKind::Gaussian, level, seed },
                NoiseArg::Constant => NoiseSpec::constant(level),
            };
            let mode = match mask_mode {
                MaskArg::Both => MaskMode::SourcesAndReceivers,
                MaskArg::Receivers => MaskMode::Receivers,
                MaskArg::Sources => MaskMode::Sources,
            };
            let m = NdMatrix::from_kernel(k, "stored");
            let m = apply_noise(&m, spec).map_err(at(Stage::NoiseMask))?;
            let m = apply_mask(&m, &MaskSpec::new(&remove, mode));
            let kk = assemble_k(&m, &OperatorSet::new(&grid)).map_err(at(Stage::Operators))?;
            let s = spectrum_report(&kk.mat, &out).map_err(at(Stage::Output))?;
            println!(
                "{}",
                json!({ "count": s.values.len(), "sigma_max": s.sigma_max, "zero_count": s.zero_count, "expected_zero_count": 4 * grid.i })
            );
            Ok(())
        }
    }
}

fn load_grid(path: &Path) -> Result<bcmap::persist::DenseMatrix, Error> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv(path),
        _ => read_matrix(path),
    }
}

fn kernel_info(k: &NdKernel, residuals: bool) -> serde_json::Value {
    let mut v = json!({
        "grid": k.grid,
        "fine": k.fine,
        "factor": k.factor,
        "closure": k.closure,
        "n_full": k.grid.n_full(),
        "n_half": k.grid.n_half(),
        "rms": k.rms(),
    });
    if residuals {
        let m = NdMatrix::from_kernel(k.clone(), "stored");
        v["adjoint_residual"] = json!(adjoint_residual(&m, false));
        v["weighted_adjoint_residual"] = json!(adjoint_residual(&m, true));
    }
    v
}

fn print_report(r: &bcmap::experiment::RunReport) {
    println!(
        "{} on I={} L={} (kernel {})",
        r.experiment,
        r.grid.i,
        r.grid.l,
        if r.kernel_from_cache { "cached" } else { "assembled" }
    );
    for m in &r.metrics {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}%")).unwrap_or_else(|| "-".into());
        println!(
            "  {:<16} truth {:>10}  projection {:>10}  regularized projection {:>10}",
            m.name,
            f(m.rel_l2_error_vs_truth),
            f(m.rel_l2_error_vs_projection),
            f(m.rel_l2_error_vs_regularized_projection)
        );
        for w in &m.warnings {
            println!("    warning: {w}");
        }
    }
    for w in &r.warnings {
        println!("warning: {w}");
    }
}
