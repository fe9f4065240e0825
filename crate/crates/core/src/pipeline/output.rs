//! Run-directory layout.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, PipelineError, RunOutcome};
use crate::agent::Decision;
use crate::classifier::ClassifierModel;
use crate::corpus::{parse_linerecords, write_fliplog, write_linerecords, Dataset, InventoryMode, RelationInventory, Split};
use crate::encoder::Vocab;

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.txt";
pub const REPORTS: &str = "epoch_reports.jsonl";
pub const DECISIONS: &str = "decisions.tsv";
pub const VAL_DECISIONS: &str = "val_decisions.tsv";
pub const FINAL: &str = "final_metrics.json";
pub const RC_CKPT: &str = "rc.ckpt";
pub const DA_CKPT: &str = "da.ckpt";
pub const VOCAB: &str = "vocab.txt";
pub const INVENTORY: &str = "inventory.txt";

/// Written before any training output; enough to reproduce the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub mode: String,
    pub seed: u64,
    pub data_seed: u64,
    pub noise_seed: u64,
    pub out_dir: String,
    pub config: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::File {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_manifest(dir: &Path, cfg: &ExperimentConfig) -> Result<RunManifest, PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = RunManifest {
        code_version: CODE_VERSION.to_string(),
        mode: cfg.mode.to_string(),
        seed: cfg.seed,
        data_seed: cfg.data_seed(),
        noise_seed: cfg.noise_seed(),
        out_dir: dir.display().to_string(),
        config: cfg.to_text(),
    };
    write_file(&dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    write_file(&dir.join(CONFIG), cfg.to_text())?;
    Ok(manifest)
}

fn decision_rows(out: &mut String, epoch: usize, decisions: &[Decision], inv: &RelationInventory) {
    for d in decisions {
        let rel = d.revised_relation.map_or("-", |r| inv.name(r));
        let _ = writeln!(out, "{epoch}\t{}\t{}\t{}\t{rel}", d.id, d.action, d.log_prob);
    }
}

fn inventory_text(inv: &RelationInventory) -> String {
    write_linerecords(&Dataset {
        inventory: inv.clone(),
        instances: Vec::new(),
        split: Split::Train,
    })
}

/// Writes every artifact of a finished run into `dir`.
pub fn write_run_outputs(dir: &Path, run: &RunOutcome) -> Result<(), PipelineError> {
    let inv = &run.data.train.inventory;

    let mut reports = String::new();
    for r in &run.reports {
        reports.push_str(&serde_json::to_string(r)?);
        reports.push('\n');
    }
    write_file(&dir.join(REPORTS), reports)?;

    if run.da.is_some() {
        let header = "epoch\tid\taction\tlog_prob\trevised\n";
        let (mut train, mut val) = (header.to_string(), header.to_string());
        for (epoch, d) in run.decisions.iter().enumerate() {
            decision_rows(&mut train, epoch, &d.train, inv);
            decision_rows(&mut val, epoch, &d.val, inv);
        }
        write_file(&dir.join(DECISIONS), train)?;
        write_file(&dir.join(VAL_DECISIONS), val)?;
        let mut labels = String::new();
        for (id, a) in &run.action_labels {
            let _ = writeln!(labels, "{id}\t{a}");
        }
        write_file(&dir.join("action_labels.tsv"), labels)?;
    }

    write_file(&dir.join("flips_train.tsv"), write_fliplog(&run.data.flips_train, inv))?;
    write_file(&dir.join("flips_val.tsv"), write_fliplog(&run.data.flips_val, inv))?;
    write_file(&dir.join(FINAL), serde_json::to_string_pretty(&run.final_metrics)? + "\n")?;
    write_file(&dir.join(VOCAB), run.vocab.to_text())?;
    write_file(&dir.join(INVENTORY), inventory_text(inv))?;

    let mut buf = Vec::new();
    run.rc.net.save(&mut buf)?;
    write_file(&dir.join(RC_CKPT), buf)?;
    if let Some(da) = &run.da {
        let mut buf = Vec::new();
        da.net.save(&mut buf)?;
        write_file(&dir.join(DA_CKPT), buf)?;
    }

    write_predictions(dir, &run.data.test, &run.test_predictions, inv)?;
    write_pr_curve(dir, &run.pr_curve)?;
    Ok(())
}

/// `id\tpredicted relation\tprobability` for each test instance.
pub fn write_predictions(
    dir: &Path,
    test: &Dataset,
    predictions: &[(usize, f64)],
    inv: &RelationInventory,
) -> Result<(), PipelineError> {
    let mut out = String::new();
    for (inst, (p, c)) in test.instances.iter().zip(predictions) {
        let _ = writeln!(out, "{}\t{}\t{c}", inst.id, inv.name(*p));
    }
    write_file(&dir.join("predictions.tsv"), out)
}

/// Two columns, `recall\tprecision`, one row per positive prediction.
pub fn write_pr_curve(dir: &Path, curve: &[crate::eval::PrPoint]) -> Result<(), PipelineError> {
    let mut out = String::new();
    for p in curve {
        let _ = writeln!(out, "{}\t{}", p.recall, p.precision);
    }
    write_file(&dir.join("pr_curve.tsv"), out)
}

/// Rebuilds the trained classifier stored in a run directory.
pub fn load_run_classifier(dir: &Path) -> Result<(ExperimentConfig, ClassifierModel), PipelineError> {
    let cfg = ExperimentConfig::from_text(&read_file(&dir.join(CONFIG))?)?;
    let vocab = Vocab::from_text(&read_file(&dir.join(VOCAB))?);
    let inv = parse_linerecords(&read_file(&dir.join(INVENTORY))?, InventoryMode::Embedded, Split::Train)?.inventory;
    let ckpt = dir.join(RC_CKPT);
    let file = File::open(&ckpt).map_err(io_err(&ckpt))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rc = ClassifierModel::new(cfg.encoder.clone(), vocab, inv, cfg.lr_rc_co, &mut rng)?;
    rc.net.load(std::io::BufReader::new(file))?;
    Ok((cfg, rc))
}
