//! Command-line surface: dataset generation, training runs, ablation sweeps,
//! boundary export, and gradient checking.
//!
//! Exit codes: 0 success, 2 config error, 3 numerical divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ganda::datasets::write_feature_csv;
use ganda::eval::{boundary_grid, export_boundary, run_ablation, sibling_grid_csv};
use ganda::gradcheck::grad_check;
use ganda::manifest::{DatasetDescriptor, RunManifest, TOOL_VERSION};
use ganda::models::ModelBundle;
use ganda::trainer::{fit, TrainConfig, Variant};

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "ganda", version, about = "Domain-adaptation training with predefined feature targets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-domain dataset into a directory
    GenData {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Train one model from a JSON config
    Run(RunArgs),
    /// Train several variants over several seeds and tabulate accuracies
    Ablate(AblateArgs),
    /// Export the decision boundary of a finished run as SVG + CSV
    ExportBoundary(ExportArgs),
    /// Verify analytic gradients against finite differences
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum GenKind {
    /// Twin moons, target rotated about the origin
    Moons {
        #[arg(long, default_value_t = 100)]
        n_per_class: usize,
        #[arg(long, default_value_t = 35.0)]
        rotation: f64,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gaussian blobs, target translated by a shift vector
    Blobs {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 50)]
        n_per_class: usize,
        #[arg(long, default_value_t = 4.0)]
        center_spread: f64,
        /// Comma-separated shift vector, length = dim
        #[arg(long, default_value = "2.0,0.0")]
        shift: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON file mirroring the training config field-for-field
    #[arg(long)]
    config: PathBuf,
    /// Directory produced by gen-data (source.csv/target.csv/dataset.json)
    #[arg(long, conflicts_with_all = ["source", "target"])]
    data: Option<PathBuf>,
    /// Source feature CSV (with --target)
    #[arg(long, requires = "target")]
    source: Option<PathBuf>,
    /// Target feature CSV (with --source)
    #[arg(long, requires = "source")]
    target: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    /// "all" or a comma-separated subset of GAN_DA,CDAN,GAN_CFR,GAN_OFR,GAN_FIX
    #[arg(long, default_value = "all")]
    variants: String,
    /// Comma-separated seed list
    #[arg(long, default_value = "0,1,2,3,4")]
    seeds: String,
    #[arg(long, conflicts_with_all = ["source", "target"])]
    data: Option<PathBuf>,
    #[arg(long, requires = "target")]
    source: Option<PathBuf>,
    #[arg(long, requires = "source")]
    target: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// Run directory containing manifest.json and model.json
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value_t = 200)]
    resolution: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

type AnyError = Box<dyn std::error::Error>;

fn dispatch(cli: Cli) -> Result<ExitCode, AnyError> {
    match cli.command {
        Command::GenData { kind } => gen_data(kind),
        Command::Run(args) => run(args),
        Command::Ablate(args) => ablate(args),
        Command::ExportBoundary(args) => export(args),
        Command::GradCheck { seed } => Ok(run_grad_check(seed)),
    }
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, AnyError> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("bad number '{x}': {e}").into()))
        .collect()
}

fn gen_data(kind: GenKind) -> Result<ExitCode, AnyError> {
    let (descriptor, out) = match kind {
        GenKind::Moons { n_per_class, rotation, noise, seed, out } => {
            (DatasetDescriptor::Moons { n_per_class, rotation, noise, seed }, out)
        }
        GenKind::Blobs { classes, dim, n_per_class, center_spread, shift, seed, out } => {
            let shift = parse_f64_list(&shift)?;
            (DatasetDescriptor::Blobs { class_count: classes, dim, n_per_class, center_spread, shift, seed }, out)
        }
    };
    let pair = match descriptor.load() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("config error: {e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    std::fs::create_dir_all(&out)?;
    write_feature_csv(&out.join("source.csv"), &pair.source().features, &pair.source().labels, pair.dim())?;
    write_feature_csv(&out.join("target.csv"), pair.target_features(), pair.eval_target_labels(), pair.dim())?;
    std::fs::write(out.join("dataset.json"), serde_json::to_string_pretty(&descriptor)?)?;
    println!(
        "wrote {} source and {} target samples (dim {}, {} classes) to {}",
        pair.source().len(),
        pair.target_len(),
        pair.dim(),
        pair.class_count(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_config(path: &Path) -> Result<TrainConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let cfg: TrainConfig = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn resolve_dataset(
    data: Option<PathBuf>,
    source: Option<PathBuf>,
    target: Option<PathBuf>,
) -> Result<DatasetDescriptor, String> {
    if let Some(dir) = data {
        let djson = dir.join("dataset.json");
        if djson.is_file() {
            let text = std::fs::read_to_string(&djson).map_err(|e| format!("{}: {e}", djson.display()))?;
            // CSV files are authoritative for ingestion; the descriptor is
            // kept when it regenerates the identical data deterministically
            return serde_json::from_str(&text).map_err(|e| format!("{}: {e}", djson.display()));
        }
        let (s, t) = (dir.join("source.csv"), dir.join("target.csv"));
        if s.is_file() && t.is_file() {
            return Ok(DatasetDescriptor::Csv { source: s, target: t });
        }
        return Err(format!("{}: no dataset.json or source.csv/target.csv", dir.display()));
    }
    match (source, target) {
        (Some(s), Some(t)) => Ok(DatasetDescriptor::Csv { source: s, target: t }),
        _ => Err("provide --data DIR or both --source and --target".into()),
    }
}

fn run(args: RunArgs) -> Result<ExitCode, AnyError> {
    let cfg = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    let descriptor = match resolve_dataset(args.data, args.source, args.target) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("config error: {e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    let pair = match descriptor.load() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("config error: {e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };

    let outcome = fit(&pair, &cfg)?;
    std::fs::create_dir_all(&args.out)?;

    let mut history = String::new();
    for report in &outcome.history {
        history.push_str(&serde_json::to_string(report)?);
        history.push('\n');
    }
    std::fs::write(args.out.join("history.jsonl"), history)?;
    outcome.bundle.save(&args.out.join("model.json"))?;

    let (final_s, final_t) = outcome
        .history
        .last()
        .map(|r| (r.acc_source, r.acc_target))
        .unwrap_or((0.0, 0.0));
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        config: cfg,
        dataset: descriptor,
        final_acc_source: final_s,
        final_acc_target: final_t,
        diverged: outcome.diverged.clone(),
        history_path: "history.jsonl".into(),
        model_path: "model.json".into(),
    };
    manifest.save(&args.out.join("manifest.json"))?;

    for report in &outcome.history {
        println!(
            "epoch {:>3}  ce {:.4}  align {:.4}  adv {:.4}  acc_s {:.3}  acc_t {:.3}",
            report.epoch, report.loss_ce, report.loss_align, report.loss_adv_disc, report.acc_source, report.acc_target
        );
    }
    if let Some(reason) = outcome.diverged {
        eprintln!("diverged: {reason}");
        return Ok(ExitCode::from(EXIT_DIVERGED));
    }
    println!("final source accuracy {final_s:.4}, target accuracy {final_t:.4}");
    Ok(ExitCode::SUCCESS)
}

fn ablate(args: AblateArgs) -> Result<ExitCode, AnyError> {
    let cfg = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    let variants: Vec<Variant> = if args.variants.trim().eq_ignore_ascii_case("all") {
        Variant::ALL.to_vec()
    } else {
        let mut out = Vec::new();
        for name in args.variants.split(',') {
            match Variant::parse(name.trim()) {
                Some(v) => out.push(v),
                None => {
                    eprintln!("config error: unknown variant '{name}'");
                    return Ok(ExitCode::from(EXIT_CONFIG));
                }
            }
        }
        out
    };
    let seeds: Vec<u64> = match args.seeds.split(',').map(|s| s.trim().parse::<u64>()).collect() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("config error: bad seed list: {e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };

    let descriptor = match resolve_dataset(args.data, args.source, args.target) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("config error: {e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    let pair = match descriptor.load() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("config error: {e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };

    let table = run_ablation(&pair, &cfg, &variants, &seeds)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("ablation.csv"), table.to_csv())?;
    let text = table.to_text();
    std::fs::write(args.out.join("ablation.txt"), &text)?;
    print!("{text}");
    for run in &table.runs {
        if let Some(reason) = &run.diverged {
            eprintln!("note: {} seed {} diverged: {}", run.variant.name(), run.seed, reason);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn export(args: ExportArgs) -> Result<ExitCode, AnyError> {
    let manifest_path = args.run.join("manifest.json");
    let manifest = match RunManifest::load(&manifest_path) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("config error: {e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    let pair = manifest.dataset.load()?;
    let mut bundle = ModelBundle::init(
        pair.dim(),
        manifest.config.embed_dim,
        pair.class_count(),
        manifest.config.hidden,
        manifest.config.seed,
    )?;
    bundle.load(&args.run.join(&manifest.model_path))?;
    let grid = boundary_grid(&bundle, &pair, args.resolution)?;
    export_boundary(&grid, &pair, &args.out)?;
    println!("wrote {} and {}", args.out.display(), sibling_grid_csv(&args.out).display());
    Ok(ExitCode::SUCCESS)
}

fn run_grad_check(seed: u64) -> ExitCode {
    match grad_check(seed) {
        Ok(report) => {
            let mut ok = true;
            for t in &report.terms {
                println!("{:<14} entries {:>5}  max rel err {:.3e}", t.term, t.checked_entries, t.max_rel_err);
                if t.max_rel_err >= 1e-5 {
                    ok = false;
                }
            }
            if ok {
                println!("gradients OK (seed {seed})");
                ExitCode::SUCCESS
            } else {
                eprintln!("gradient check FAILED (seed {seed})");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
