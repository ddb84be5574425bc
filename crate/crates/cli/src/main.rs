use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use tmps_core::config::KeyValues;
use tmps_core::data::{load_dataset, save_dataset, DEFAULT_TARGET_PER_CLASS};
use tmps_core::embedding::{read_checkpoint, write_checkpoint};
use tmps_core::eval::{evaluate_pool, percent, InferenceRule};
use tmps_core::manifest::{read_manifest, write_manifest};
use tmps_core::report::{render_summary, ComparisonTable};
use tmps_core::sweep::{read_cells_csv, run_sweep, write_cells_csv, write_summary_csv, SweepSpec, SWEEP_KEYS};
use tmps_core::synth::{generate_pool, SynthConfig, SYNTH_KEYS};
use tmps_core::train::{train, Regime, TrainConfig, TRAIN_KEYS};
use tmps_core::{checksum, Error};

const DATASET_FILE: &str = "dataset.csv";
const CHECKPOINT_FILE: &str = "model.ckpt";
const MANIFEST_FILE: &str = "run.manifest";

#[derive(Parser)]
#[command(name = "tmps", version, about = "Target-aware metric learning with prioritized sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key=value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic source/target dataset.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Train one regime; writes a checkpoint and a run manifest.
    Train {
        dataset: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        regime: Option<Regime>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the target evaluation split.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rule: Option<InferenceRule>,
        /// Evaluate on the source pool instead (sanity check).
        #[arg(long)]
        source: bool,
        /// Defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every (regime, p, seed) cell.
    Sweep {
        /// Existing dataset; generated from the config when absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        rule: Option<InferenceRule>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Render sweep results as text tables.
    Report {
        /// Sweep output directory or its cells.csv.
        results: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFinite { .. } | Error::Io { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { common, out } => cmd_gen(&common, &out),
        Command::Train {
            dataset,
            common,
            regime,
            p,
            lambda,
            out,
        } => cmd_train(&dataset, &common, regime, p, lambda, &out),
        Command::Eval {
            checkpoint,
            dataset,
            common,
            rule,
            source,
            out,
        } => cmd_eval(&checkpoint, &dataset, &common, rule, source, out.as_deref()),
        Command::Sweep {
            dataset,
            common,
            lambda,
            rule,
            jobs,
            out,
        } => cmd_sweep(dataset.as_deref(), &common, lambda, rule, jobs, &out),
        Command::Report { results, out } => cmd_report(&results, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn known_keys() -> Vec<&'static str> {
    let mut keys: Vec<&str> = SYNTH_KEYS.iter().chain(&TRAIN_KEYS).chain(&SWEEP_KEYS).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    keys
}

fn load_config(common: &Common) -> Result<KeyValues, Failure> {
    let kv = match &common.config {
        Some(path) => KeyValues::load(path).map_err(|e| match e {
            Error::Parse { .. } => Failure {
                code: 1,
                message: format!("{}: {e}", path.display()),
            },
            other => other.into(),
        })?,
        None => KeyValues::default(),
    };
    kv.reject_unknown(&known_keys()).map_err(|e| Failure {
        code: 1,
        message: match &common.config {
            Some(path) => format!("{}: {e}", path.display()),
            None => e.to_string(),
        },
    })?;
    Ok(kv)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Error::io(path, e).into())
}

fn cmd_gen(common: &Common, out: &Path) -> CmdResult {
    let kv = load_config(common)?;
    let mut config = SynthConfig::default();
    config.apply(&kv)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate()?;
    let pool = generate_pool(&config)?;
    create_dir(out)?;
    let path = out.join(DATASET_FILE);
    save_dataset(&pool, &path)?;
    let digest = checksum(&read_file(&path)?);
    println!("{} sha256={digest} rows={}", path.display(), pool.sample_count());
    Ok(())
}

fn cmd_train(
    dataset_path: &Path,
    common: &Common,
    regime: Option<Regime>,
    p: Option<f64>,
    lambda: Option<f64>,
    out: &Path,
) -> CmdResult {
    let kv = load_config(common)?;
    let mut config = TrainConfig::default();
    config.apply(&kv)?;
    if let Some(r) = regime {
        config.regime = r;
    }
    if let Some(p) = p {
        config.p = p;
    }
    if let Some(l) = lambda {
        config.lambda = l;
    }
    if let Some(s) = common.seed {
        config.seed = s;
    }
    let k: usize = kv.parsed("k")?.unwrap_or(DEFAULT_TARGET_PER_CLASS);
    config.validate()?;

    let dataset_bytes = read_file(dataset_path)?;
    let pool = load_dataset(dataset_path)?;
    let dataset = pool.split(k, config.seed)?;
    let started = Instant::now();
    let model = train(&dataset, &config)?;
    let elapsed = started.elapsed().as_secs_f64();

    create_dir(out)?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let mut ckpt = Vec::new();
    write_checkpoint(&model.network, &mut ckpt).map_err(|e| Error::io(&ckpt_path, e))?;
    write_file(&ckpt_path, &ckpt)?;

    let mut manifest = kv.clone();
    for (key, value) in config.to_key_values().iter() {
        manifest.set(key, value);
    }
    manifest.set("k", k.to_string());
    manifest.set("split_seed", config.seed.to_string());
    manifest.set("dataset", dataset_path.display().to_string());
    manifest.set("dataset_sha256", checksum(&dataset_bytes));
    manifest.set("checkpoint_sha256", checksum(&ckpt));
    manifest.set("steps", model.loss_trace.len().to_string());
    manifest.set(
        "final_loss",
        model.final_loss().map(|l| l.to_string()).unwrap_or_default(),
    );
    manifest.set("wall_time_secs", format!("{elapsed:.3}"));
    let manifest_path = out.join(MANIFEST_FILE);
    let mut text = Vec::new();
    write_manifest(&manifest, &mut text).map_err(|e| Error::io(&manifest_path, e))?;
    write_file(&manifest_path, &text)?;

    println!(
        "{} sha256={} regime={} final_loss={}",
        ckpt_path.display(),
        checksum(&ckpt),
        config.regime,
        manifest.get("final_loss").unwrap_or("")
    );
    Ok(())
}

fn cmd_eval(
    ckpt_path: &Path,
    dataset_path: &Path,
    common: &Common,
    rule: Option<InferenceRule>,
    source: bool,
    out: Option<&Path>,
) -> CmdResult {
    let kv = load_config(common)?;
    let run_dir = ckpt_path.parent().unwrap_or(Path::new("."));
    let manifest_path = run_dir.join(MANIFEST_FILE);
    let manifest = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        read_manifest(&text).map_err(|e| Failure {
            code: 1,
            message: format!("{}: {e}", manifest_path.display()),
        })?
    } else {
        KeyValues::default()
    };
    let split_seed = match common.seed {
        Some(s) => s,
        None => manifest.parsed("split_seed")?.or(kv.parsed("seed")?).unwrap_or(0),
    };
    let k: usize = kv
        .parsed("k")?
        .or(manifest.parsed("k")?)
        .unwrap_or(DEFAULT_TARGET_PER_CLASS);
    let rule = match rule {
        Some(r) => r,
        None => kv.parsed("rule")?.unwrap_or(InferenceRule::Head),
    };

    let ckpt = read_file(ckpt_path)?;
    let network = read_checkpoint(ckpt.as_slice())?;
    let dataset_bytes = read_file(dataset_path)?;
    let dataset = load_dataset(dataset_path)?.split(k, split_seed)?;
    let pool = if source { dataset.source() } else { dataset.target_eval() };
    let mut report = evaluate_pool(&network, &dataset, pool, rule)?;
    report.dataset_id = checksum(&dataset_bytes);
    report.checkpoint_id = checksum(&ckpt);

    let out = out.unwrap_or(run_dir);
    create_dir(out)?;
    let stem = if source { "eval_source" } else { "eval" };
    let report_path = out.join(format!("{stem}.csv"));
    write_file(&report_path, report.csv_string().as_bytes())?;
    let confusion_path = out.join(format!("{stem}_confusion.csv"));
    let mut confusion = Vec::new();
    report
        .confusion
        .write_csv(&mut confusion)
        .map_err(|e| Error::io(&confusion_path, e))?;
    write_file(&confusion_path, &confusion)?;

    for (class, m) in report.per_class.iter().enumerate() {
        println!("class {class}: F1 {}", percent(m.f1));
    }
    println!("macro F1 {} ({})", percent(report.macro_f1), report_path.display());
    Ok(())
}

fn cmd_sweep(
    dataset_path: Option<&Path>,
    common: &Common,
    lambda: Option<f64>,
    rule: Option<InferenceRule>,
    jobs: Option<usize>,
    out: &Path,
) -> CmdResult {
    let kv = load_config(common)?;
    let mut spec = SweepSpec::default();
    spec.apply(&kv)?;
    if let Some(s) = common.seed {
        spec.master_seed = s;
    }
    if let Some(l) = lambda {
        spec.train.lambda = l;
    }
    if let Some(r) = rule {
        spec.rule = r;
    }
    if let Some(j) = jobs {
        spec.jobs = j;
    }
    spec.validate()?;
    spec.train.validate()?;

    let pool = match dataset_path {
        Some(path) => load_dataset(path)?,
        None => {
            let mut synth = SynthConfig::default();
            synth.apply(&kv)?;
            synth.seed = spec.master_seed;
            synth.validate()?;
            generate_pool(&synth)?
        }
    };
    let result = run_sweep(&spec, &pool)?;

    create_dir(out)?;
    let mut summary = Vec::new();
    write_summary_csv(&result.rows, &mut summary).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("sweep.csv"), &summary)?;
    let mut cells = Vec::new();
    write_cells_csv(&result.cells, pool.num_classes, &mut cells).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("cells.csv"), &cells)?;
    let reports = out.join("cells");
    create_dir(&reports)?;
    for cell in &result.cells {
        if let Ok(output) = &cell.outcome {
            let name = match cell.key.p {
                Some(_) => format!("{}_p{}_s{}.csv", cell.key.regime.key(), cell.key.p_index, cell.key.seed),
                None => format!("{}_s{}.csv", cell.key.regime.key(), cell.key.seed),
            };
            write_file(&reports.join(name), output.report.csv_string().as_bytes())?;
        }
    }

    for row in &result.rows {
        let p = row.p.map(|p| format!(" p={p}")).unwrap_or_default();
        println!(
            "{}{p}: {} ± {} (n={})",
            row.regime,
            percent(row.mean_macro_f1),
            percent(row.std_macro_f1),
            row.n_seeds
        );
    }
    let failed: Vec<_> = result.failed_cells().collect();
    if failed.is_empty() {
        return Ok(());
    }
    for cell in &failed {
        eprintln!(
            "cell {} p={:?} seed={} failed: {}",
            cell.key.regime,
            cell.key.p,
            cell.key.seed,
            cell.outcome.as_ref().err().map(String::as_str).unwrap_or("")
        );
    }
    Err(Failure {
        code: 3,
        message: format!("{} of {} cells failed", failed.len(), result.cells.len()),
    })
}

fn cmd_report(results: &Path, out: Option<&Path>) -> CmdResult {
    let path = if results.is_dir() {
        results.join("cells.csv")
    } else {
        results.to_path_buf()
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let records = read_cells_csv(&text).map_err(|e| Failure {
        code: 1,
        message: format!("{}: {e}", path.display()),
    })?;
    let table = ComparisonTable::from_records(&records)?;
    let rendered = format!("{}\n{}", render_summary(&records), table.render());
    print!("{rendered}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join("report.txt"), rendered.as_bytes())?;
    }
    Ok(())
}
