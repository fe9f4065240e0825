use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fnd_core::checks::{run_gradchecks, Scope};
use fnd_core::corpus::{
    generate_synthetic, inject_false_negatives, load_linerecords, write_fliplog, write_linerecords, InventoryMode,
    Split,
};
use fnd_core::pipeline::{
    self, evaluate, load_run_classifier, run_experiment, write_manifest, write_run_outputs, EpochReport,
    ExperimentConfig, FinalMetrics, RunMode,
};

#[derive(Parser)]
#[command(name = "fnd", version, about = "False-negative denoising experiments for relation extraction")]
struct Cli {
    /// Config file of `key = value` lines; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated seeds; `train` runs once per seed.
    #[arg(long, value_delimiter = ',', global = true)]
    seeds: Vec<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/val/test files.
    Synth,
    /// Flip a fraction of positives to NA and write the flip log.
    Inject {
        input: PathBuf,
        /// Defaults to `fn_ratio` from the config.
        #[arg(long)]
        ratio: Option<f64>,
        /// Split of the input; inferred from the file name when omitted.
        #[arg(long)]
        split: Option<Split>,
    },
    /// Run an experiment and write its run directory.
    Train {
        #[arg(long)]
        mode: Option<RunMode>,
    },
    /// Evaluate a run's classifier on a test file.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[arg(long, default_value = "layers")]
        scope: Scope,
        /// Scale analytic gradients by 1.1 so every check must fail.
        #[arg(long)]
        corrupt: bool,
    },
    /// Summarise a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

type CmdResult = Result<bool, String>;

fn load_config(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.apply_text(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| format!("override {o:?} is not KEY=VALUE"))?;
        cfg.set(k.trim(), v).map_err(|e| e.to_string())?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<&Path, String> {
    cli.out.as_deref().ok_or_else(|| "--out is required".to_string())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), String> {
    fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()))
}

fn mkdir(path: &Path) -> Result<(), String> {
    fs::create_dir_all(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_synth(cli: &Cli) -> CmdResult {
    let cfg = load_config(cli)?;
    let out = out_dir(cli)?;
    let seed = cli.seed.unwrap_or(cfg.data_seed());
    let (train, val, test) = generate_synthetic(&cfg.synth, seed).map_err(|e| e.to_string())?;
    mkdir(out)?;
    for (name, d) in [("train.txt", &train), ("val.txt", &val), ("test.txt", &test)] {
        write(&out.join(name), write_linerecords(d))?;
    }
    println!(
        "wrote {} train, {} val, {} test instances to {}",
        train.len(),
        val.len(),
        test.len(),
        out.display()
    );
    Ok(true)
}

fn infer_split(path: &Path) -> Split {
    let name = path.file_name().map(|n| n.to_string_lossy().to_lowercase()).unwrap_or_default();
    if name.contains("test") {
        Split::Test
    } else if name.contains("val") || name.contains("dev") {
        Split::Validation
    } else {
        Split::Train
    }
}

fn cmd_inject(cli: &Cli, input: &Path, ratio: Option<f64>, split: Option<Split>) -> CmdResult {
    let cfg = load_config(cli)?;
    let out = out_dir(cli)?;
    let split = split.unwrap_or_else(|| infer_split(input));
    if split == Split::Test {
        return Err(format!("{}: refusing to inject noise into a test split", input.display()));
    }
    let ratio = ratio.unwrap_or(cfg.fn_ratio);
    let seed = cli.seed.unwrap_or(cfg.noise_seed());
    let data = load_linerecords(input, InventoryMode::Embedded, split).map_err(|e| format!("{}: {e}", input.display()))?;
    let (noisy, log) = inject_false_negatives(&data, ratio, seed).map_err(|e| e.to_string())?;
    mkdir(out)?;
    let name = input.file_name().ok_or("input has no file name")?;
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    write(&out.join(name), write_linerecords(&noisy))?;
    write(&out.join(format!("{stem}.flips.tsv")), write_fliplog(&log, &noisy.inventory))?;
    println!("flipped {} of {} positives", log.len(), data.positive_count());
    Ok(true)
}

fn train_one(cfg: &ExperimentConfig, dir: &Path) -> Result<FinalMetrics, String> {
    write_manifest(dir, cfg).map_err(|e| e.to_string())?;
    let run = run_experiment(cfg).map_err(|e| e.to_string())?;
    write_run_outputs(dir, &run).map_err(|e| e.to_string())?;
    Ok(run.final_metrics)
}

fn cmd_train(cli: &Cli, mode: Option<RunMode>) -> CmdResult {
    let mut cfg = load_config(cli)?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    let out = out_dir(cli)?;
    let seeds = if cli.seeds.is_empty() { vec![cfg.seed] } else { cli.seeds.clone() };
    for &seed in &seeds {
        let cfg = ExperimentConfig { seed, ..cfg.clone() };
        let dir = if cli.seeds.len() > 1 { out.join(format!("seed-{seed}")) } else { out.to_path_buf() };
        match train_one(&cfg, &dir) {
            Ok(m) => println!(
                "{} seed {seed}: test P {:.4} R {:.4} F1 {:.4} -> {}",
                cfg.mode,
                m.test.precision,
                m.test.recall,
                m.test.f1,
                dir.display()
            ),
            Err(e) => {
                let _ = fs::write(dir.join("FAILED"), format!("{e}\n"));
                return Err(format!("seed {seed}: {e}"));
            }
        }
    }
    Ok(true)
}

fn cmd_eval(cli: &Cli, run: &Path, test: &Path) -> CmdResult {
    let (_, rc) = load_run_classifier(run).map_err(|e| e.to_string())?;
    let data = load_linerecords(test, InventoryMode::Explicit(rc.inventory.clone()), Split::Test)
        .map_err(|e| format!("{}: {e}", test.display()))?;
    let (metrics, curve, preds) = evaluate(&rc, &data).map_err(|e| e.to_string())?;
    let out = cli.out.as_deref().unwrap_or(run);
    mkdir(out)?;
    let json = serde_json::to_string_pretty(&metrics).map_err(|e| e.to_string())?;
    write(&out.join("eval_metrics.json"), json + "\n")?;
    pipeline::write_pr_curve(out, &curve).map_err(|e| e.to_string())?;
    pipeline::write_predictions(out, &data, &preds, &rc.inventory).map_err(|e| e.to_string())?;
    println!(
        "P {:.4} R {:.4} F1 {:.4} over {} instances",
        metrics.precision, metrics.recall, metrics.f1, metrics.instances
    );
    Ok(true)
}

fn cmd_gradcheck(cli: &Cli, scope: Scope, corrupt: bool) -> CmdResult {
    let seed = cli.seed.unwrap_or(0);
    let rows = run_gradchecks(scope, seed, corrupt).map_err(|e| e.to_string())?;
    println!("{:<28} {:>12} {:>8}  result", "check", "rel_error", "tol");
    for r in &rows {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!("{:<28} {:>12.3e} {:>8.0e}  {verdict}", r.name, r.error, r.tolerance);
    }
    Ok(rows.iter().all(|r| r.passed()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn cmd_report(run: &Path) -> CmdResult {
    let path = run.join("epoch_reports.jsonl");
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    println!("epoch  loss    val_f1  reward  base    keep  disc  rev");
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let r: EpochReport = serde_json::from_str(line).map_err(|e| format!("{}: {e}", path.display()))?;
        let a = r.train_actions.unwrap_or_default();
        println!(
            "{:>5}  {:<6}  {:.4}  {:<6}  {:<6}  {:>4}  {:>4}  {:>3}{}",
            r.epoch,
            fmt_opt(r.train_loss),
            r.val_f1,
            fmt_opt(r.reward),
            fmt_opt(r.baseline),
            a.keep,
            a.discard,
            a.revise,
            if r.aborted { "  aborted" } else { "" }
        );
    }
    let path = run.join("final_metrics.json");
    if let Ok(text) = fs::read_to_string(&path) {
        let m: FinalMetrics = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        println!(
            "final {} seed {}: test P {:.4} R {:.4} F1 {:.4}; revision accuracy {}",
            m.mode,
            m.seed,
            m.test.precision,
            m.test.recall,
            m.test.f1,
            fmt_opt(m.revision_accuracy)
        );
        if let Some(pd) = m.policy_train {
            for (row, name) in [(0, "TN"), (1, "FN")] {
                if let Some(p) = pd.row_percentages(row) {
                    println!("{name}: keep {:.1}% discard {:.1}% revise {:.1}%", p[0], p[1], p[2]);
                }
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Synth => cmd_synth(&cli),
        Command::Inject { input, ratio, split } => cmd_inject(&cli, input, *ratio, *split),
        Command::Train { mode } => cmd_train(&cli, *mode),
        Command::Eval { run, test } => cmd_eval(&cli, run, test),
        Command::Gradcheck { scope, corrupt } => cmd_gradcheck(&cli, *scope, *corrupt),
        Command::Report { run } => cmd_report(run),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
