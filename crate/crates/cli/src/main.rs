//! `lsvos` command-line harness: data generation, training, evaluation,
//! ablation sweeps and report rendering.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use lsvos::features::{write_feature_csv, write_vosf, FeatureDataset};
use lsvos::geometry::write_scene_csv;
use lsvos::metrics::EvaluationReport;
use lsvos::pipeline::{
    ablate, evaluate_bundle, lambda_grid, load_data, load_run, noise_grid, parse_sweep, render_ablation, run_with_data,
    write_ablation, write_run, AblationRow, ExperimentConfig, CONFIG_FILE, CONFIG_KEYS, REPORT_FILE,
};
use lsvos::scoring::{METHOD_DEFAULT, METHOD_MAHALANOBIS};
use lsvos::synthesis::SynthMethod;
use lsvos::synthgen::{generate_features, generate_scenes, GeneratorSpec};
use lsvos::Error;

#[derive(Parser)]
#[command(
    name = "lsvos",
    version,
    about = "Latent-space virtual outlier synthesis on detection features"
)]
struct Cli {
    /// Root for default output locations.
    #[arg(long, global = true, env = "LSVOS_OUTPUT_ROOT", default_value = "lsvos-out")]
    output_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature dataset (and optionally box scenes).
    Generate(GenerateArgs),
    /// Train with the two-phase schedule and evaluate on the validation split.
    Train(TrainArgs),
    /// Re-score a finished run from its checkpoint.
    Evaluate(RunArgs),
    /// Run one training per sweep point and tabulate the results.
    Ablate(AblateArgs),
    /// Print the stored metric table of a run or ablation directory.
    Report(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Smoke,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Smoke => "smoke",
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overlap of FP features with the ID clusters, in [0, 1].
    #[arg(long)]
    fp_overlap: Option<f64>,
    /// Also write CSV copies of the feature files.
    #[arg(long)]
    csv: bool,
    /// Number of box scenes to write (0 = none).
    #[arg(long, default_value_t = 0)]
    scenes: usize,
    #[arg(long, default_value_t = 12)]
    boxes_per_scene: usize,
    /// Prediction pose jitter in metres.
    #[arg(long, default_value_t = 0.05)]
    jitter: f64,
    /// Output directory (default: <output-root>/data/<preset>-seed<seed>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; without it the preset config is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in config used when no file is given.
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Dotted-key override, e.g. `--set loss.lambda=2` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> lsvos::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => match self.preset {
                Preset::Desk => ExperimentConfig::desk(),
                Preset::Smoke => ExperimentConfig::smoke(),
            },
        };
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Validate the config and exit without training.
    #[arg(long)]
    dry_run: bool,
    /// Run directory (default: <output-root>/runs/<config hash prefix>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Run (or ablation) directory.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Grid {
    /// (alpha, beta) pairs of the noise-parameter table.
    Noise,
    /// lambda values of the loss-weight table.
    Lambda,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// `key=v1,v2,...`; several are zipped point by point (repeatable).
    #[arg(long, value_name = "KEY=V1,V2")]
    sweep: Vec<String>,
    /// Built-in grid instead of --sweep.
    #[arg(long, value_enum, conflicts_with = "sweep")]
    grid: Option<Grid>,
    /// Method shown in the printed table.
    #[arg(long, default_value = "uncertainty")]
    method: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn method_label(cfg: &ExperimentConfig) -> impl Fn(&str) -> String + '_ {
    move |m: &str| match m {
        METHOD_DEFAULT => "Default score".to_string(),
        METHOD_MAHALANOBIS => "Mahalanobis".to_string(),
        _ => match cfg.synth_method {
            Some(SynthMethod::LsVos) => "LS-VOS (ours)".to_string(),
            Some(s) => format!("Uncertainty head ({})", s.display_name()),
            None => "Uncertainty head (FP only)".to_string(),
        },
    }
}

fn write_split(dir: &Path, name: &str, ds: &FeatureDataset, csv: bool) -> lsvos::Result<()> {
    write_vosf(
        BufWriter::new(File::create(dir.join(format!("{name}.vosf")))?),
        ds.d,
        ds.k,
        &ds.records,
    )?;
    if csv {
        write_feature_csv(
            BufWriter::new(File::create(dir.join(format!("{name}.csv")))?),
            ds.d,
            &ds.records,
        )?;
    }
    Ok(())
}

fn cmd_generate(root: &Path, a: &GenerateArgs) -> lsvos::Result<()> {
    let mut spec = GeneratorSpec::preset(a.preset.name(), a.seed)?;
    if let Some(o) = a.fp_overlap {
        spec.fp_overlap = o;
    }
    spec.validate()?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| root.join("data").join(format!("{}-seed{}", a.preset.name(), a.seed)));
    fs::create_dir_all(&out)?;
    let (train, val) = generate_features(&spec)?;
    write_split(&out, "train", &train, a.csv)?;
    write_split(&out, "val", &val, a.csv)?;
    println!(
        "wrote {} (D={}, K={}, fp_overlap={})",
        out.display(),
        spec.d,
        spec.k,
        spec.fp_overlap
    );
    for ds in [&train, &val] {
        println!(
            "  {:<5} ID {:>6}  FP {:>6}",
            ds.split.as_str(),
            ds.count(lsvos::features::Label::Id),
            ds.count(lsvos::features::Label::Fp)
        );
    }
    if a.scenes > 0 {
        let dir = out.join("scenes");
        fs::create_dir_all(&dir)?;
        let scenes = generate_scenes(a.scenes, a.boxes_per_scene, a.jitter, a.seed)?;
        let mut preds = 0;
        for (i, s) in scenes.iter().enumerate() {
            write_scene_csv(
                BufWriter::new(File::create(dir.join(format!("scene_{i:04}.csv")))?),
                &s.scene,
            )?;
            preds += s.scene.preds.len();
        }
        println!("  scenes {:>5}  predictions {preds}", scenes.len());
    }
    Ok(())
}

fn cmd_train(root: &Path, a: &TrainArgs) -> lsvos::Result<()> {
    let cfg = a.config.load()?;
    if a.dry_run {
        println!("config ok ({})", cfg.hash());
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    let dir = a
        .out
        .clone()
        .unwrap_or_else(|| root.join("runs").join(&cfg.hash()[..12]));
    let start = Instant::now();
    let data = load_data(&cfg)?;
    let outcome = run_with_data(&cfg, &data)?;
    let secs = start.elapsed().as_secs_f64();
    write_run(&dir, &cfg, &outcome, secs)?;
    info!("run finished in {secs:.1}s");
    println!("run {} ({secs:.1}s)", dir.display());
    print!("{}", outcome.report.render_table(method_label(&cfg)));
    Ok(())
}

fn cmd_evaluate(a: &RunArgs) -> lsvos::Result<()> {
    let (cfg, bundle, stored) = load_run(&a.run)?;
    let data = load_data(&cfg)?;
    let (report, _) = evaluate_bundle(&cfg, &data, &bundle)?;
    if report.methods != stored.methods {
        warn!("re-evaluation differs from the stored {REPORT_FILE}");
    }
    print!("{}", report.render_table(method_label(&cfg)));
    Ok(())
}

fn cmd_ablate(root: &Path, a: &AblateArgs) -> lsvos::Result<()> {
    let base = a.config.load()?;
    let points = match a.grid {
        Some(Grid::Noise) => noise_grid(),
        Some(Grid::Lambda) => lambda_grid(),
        None => parse_sweep(&a.sweep)?,
    };
    let dir = a
        .out
        .clone()
        .unwrap_or_else(|| root.join("ablations").join(&base.hash()[..12]));
    let rows = ablate(&base, &points)?;
    write_ablation(&dir, &rows)?;
    fs::write(dir.join(CONFIG_FILE), base.to_toml_string())?;
    println!("ablation {}", dir.display());
    print!("{}", render_ablation(&rows, &a.method));
    let failed = rows.iter().filter(|r| !r.succeeded()).count();
    if failed > 0 {
        return Err(Error::Divergence {
            phase: "ablation".into(),
            step: failed,
            detail: format!("{failed} of {} runs failed", rows.len()),
        });
    }
    Ok(())
}

fn cmd_report(a: &RunArgs) -> lsvos::Result<()> {
    let ablation = a.run.join("ablation.json");
    if ablation.is_file() {
        let rows: Vec<AblationRow> = serde_json::from_str(&fs::read_to_string(ablation)?)?;
        print!("{}", render_ablation(&rows, lsvos::pipeline::METHOD_UNCERTAINTY));
        return Ok(());
    }
    let report_path = a.run.join(REPORT_FILE);
    if !report_path.is_file() {
        return Err(Error::NotReady(format!("{} holds no report", a.run.display())));
    }
    let report = EvaluationReport::from_json(&fs::read_to_string(report_path)?)?;
    let cfg = ExperimentConfig::from_file(&a.run.join(CONFIG_FILE))?;
    print!("{}", report.render_table(method_label(&cfg)));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(&cli.output_root, a),
        Command::Train(a) => cmd_train(&cli.output_root, a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(&cli.output_root, a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config { .. }) {
                eprintln!("\naccepted config keys:");
                for (k, d) in CONFIG_KEYS {
                    eprintln!("  {k:<24} {d}");
                }
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
