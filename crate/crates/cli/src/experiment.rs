//! Dataset loading, source pre-training and the four subcommands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use ssnll_core::adapt::extract_features;
use ssnll_core::data::idx::idx_dataset;
use ssnll_core::data::{generate_shifted_gaussians, LabeledDataset, ShiftSpec};
use ssnll_core::nn::{checkpoint, Classifier, Matrix};
use ssnll_core::trainer::{
    evaluate, run_ssnll, train_source, Evaluation, SourceReport, SsnllOutcome, StageAccuracies, TrainConfig,
};

use crate::config::{CsvConfig, DatasetConfig, ExperimentConfig, IdxConfig};
use crate::error::{CliError, Result};

pub const CODE_VERSION: &str = concat!("ssnll ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone)]
pub struct Domains {
    pub source: LabeledDataset,
    pub target: LabeledDataset,
}

impl Domains {
    pub fn get(&self, domain: Domain) -> &LabeledDataset {
        match domain {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }
}

/// Materializes both domains for one seed.
pub fn load_domains(config: &ExperimentConfig, seed: u64) -> Result<Domains> {
    match &config.dataset {
        DatasetConfig::Synthetic(spec) => {
            let (source, target) = generate_shifted_gaussians(&ShiftSpec { seed, ..spec.clone() })?;
            Ok(Domains { source, target })
        }
        DatasetConfig::Idx(idx) => load_idx(idx, seed),
        DatasetConfig::Csv(c) => load_csv_pair(c),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn with_path(path: &Path, e: ssnll_core::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn load_idx(idx: &IdxConfig, seed: u64) -> Result<Domains> {
    let source = idx_dataset(&read(&idx.source_images)?, &read(&idx.source_labels)?, idx.num_classes)
        .map_err(|e| with_path(&idx.source_images, e))?;
    let target = idx_dataset(&read(&idx.target_images)?, &read(&idx.target_labels)?, idx.num_classes)
        .map_err(|e| with_path(&idx.target_images, e))?;
    if source.dim() != target.dim() {
        return Err(CliError::Data(format!(
            "source images have {} values per sample, target images {}",
            source.dim(),
            target.dim()
        )));
    }
    let Some(count) = idx.subsample else {
        return Ok(Domains { source, target });
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |data: LabeledDataset| -> Result<LabeledDataset> {
        if count >= data.len() {
            return Ok(data);
        }
        let mut chosen = rand::seq::index::sample(&mut rng, data.len(), count).into_vec();
        chosen.sort_unstable();
        Ok(data.subset(&chosen)?)
    };
    Ok(Domains {
        source: pick(source)?,
        target: pick(target)?,
    })
}

fn load_csv_pair(c: &CsvConfig) -> Result<Domains> {
    let source = read_dataset_csv(&c.source, c.num_classes)?;
    let target = read_dataset_csv(&c.target, c.num_classes)?;
    if source.dim() != target.dim() {
        return Err(CliError::Data(format!(
            "source has {} features, target {}",
            source.dim(),
            target.dim()
        )));
    }
    Ok(Domains { source, target })
}

/// Reads the `feature_0..feature_{d-1},label` layout written by
/// [`LabeledDataset::write_csv`].
pub fn read_dataset_csv(path: &Path, num_classes: usize) -> Result<LabeledDataset> {
    let data_err = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| data_err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| data_err(e.to_string()))?.clone();
    let dim = headers.len().saturating_sub(1);
    let expected = (0..dim).map(|j| format!("feature_{j}")).chain(["label".to_string()]);
    if headers.is_empty() || !headers.iter().eq(expected) {
        return Err(data_err("header must be feature_0..feature_{d-1},label".into()));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| data_err(e.to_string()))?;
        let row = line + 2;
        for field in record.iter().take(dim) {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| data_err(format!("line {row}: bad feature {field:?}")))?;
            values.push(x);
        }
        let label: i64 = record[dim]
            .trim()
            .parse()
            .map_err(|_| data_err(format!("line {row}: bad label {:?}", &record[dim])))?;
        labels.push(match label {
            -1 => None,
            y if y >= 0 => Some(y as usize),
            y => {
                return Err(data_err(format!(
                    "line {row}: label {y} is neither -1 nor a class index"
                )))
            }
        });
    }
    let features = Matrix::from_vec(labels.len(), dim, values)?;
    LabeledDataset::new(features, labels, num_classes).map_err(|e| data_err(e.to_string()))
}

/// The source model for one seed: loaded from the configured checkpoint or
/// freshly initialized and trained.
pub fn pretrain(
    config: &ExperimentConfig,
    source: &LabeledDataset,
    seed: u64,
) -> Result<(Classifier, Option<SourceReport>)> {
    if let Some(path) = &config.model.source_checkpoint {
        let model = load_checkpoint(path)?;
        check_widths(&model, source)?;
        return Ok((model, None));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Classifier::mlp(source.dim(), &config.model.hidden, source.num_classes(), &mut rng)?;
    let report = train_source(
        &mut model,
        source,
        &TrainConfig {
            seed,
            ..config.source_train.clone()
        },
    )?;
    log::info!(
        "seed {seed}: source training accuracy {:.4}",
        report.final_train_accuracy
    );
    Ok((model, Some(report)))
}

pub fn load_checkpoint(path: &Path) -> Result<Classifier> {
    checkpoint::load(path).map_err(|e| match e {
        ssnll_core::Error::Io(_) => CliError::io(path, std::io::Error::other(e.to_string())),
        other => CliError::Data(format!("{}: {other}", path.display())),
    })
}

fn check_widths(model: &Classifier, data: &LabeledDataset) -> Result<()> {
    if model.input_width() != data.dim() || model.num_classes() != data.num_classes() {
        return Err(CliError::Data(format!(
            "checkpoint maps {} inputs to {} classes, dataset has {} features and {} classes",
            model.input_width(),
            model.num_classes(),
            data.dim(),
            data.num_classes()
        )));
    }
    Ok(())
}

/// Result of pre-training plus adaptation for one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub source_model: Classifier,
    pub source_report: Option<SourceReport>,
    pub outcome: SsnllOutcome,
}

impl SeedRun {
    pub fn stages(&self) -> StageAccuracies {
        self.outcome.stages
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.outcome.final_accuracy()
    }
}

pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let domains = load_domains(config, seed)?;
    let (source_model, source_report) = pretrain(config, &domains.source, seed)?;
    let outcome = adapt(&source_model, &domains.target, &config.adapt_train, seed)?;
    Ok(SeedRun {
        seed,
        source_model,
        source_report,
        outcome,
    })
}

fn adapt(model: &Classifier, target: &LabeledDataset, base: &TrainConfig, seed: u64) -> Result<SsnllOutcome> {
    let outcome = run_ssnll(model, target, &TrainConfig { seed, ..base.clone() })?;
    if let Some(acc) = outcome.final_accuracy() {
        log::info!("seed {seed}: r={} final target accuracy {acc:.4}", base.split_ratio);
    }
    Ok(outcome)
}

/// Median of the values present; `None` when there are none.
pub fn median(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunRow {
    pub source_only: Option<f64>,
    pub adabn: Option<f64>,
    pub adabn_dtc: Option<f64>,
    pub ssnll_final: Option<f64>,
    pub ssnll_best: Option<f64>,
}

impl RunRow {
    fn of(run: &SeedRun) -> Self {
        let s = run.stages();
        Self {
            source_only: s.source_only,
            adabn: s.adabn,
            adabn_dtc: s.adabn_dtc,
            ssnll_final: run.outcome.final_accuracy(),
            ssnll_best: run.outcome.best_accuracy(),
        }
    }

    fn median_of(rows: &[RunRow]) -> Self {
        Self {
            source_only: median(rows.iter().map(|r| r.source_only)),
            adabn: median(rows.iter().map(|r| r.adabn)),
            adabn_dtc: median(rows.iter().map(|r| r.adabn_dtc)),
            ssnll_final: median(rows.iter().map(|r| r.ssnll_final)),
            ssnll_best: median(rows.iter().map(|r| r.ssnll_best)),
        }
    }

    fn cells(&self) -> [String; 5] {
        [
            self.source_only,
            self.adabn,
            self.adabn_dtc,
            self.ssnll_final,
            self.ssnll_best,
        ]
        .map(cell)
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}%", 100.0 * x)).unwrap_or_else(|| "n/a".into())
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub runs: Vec<RunRow>,
    pub median: RunRow,
}

impl RunSummary {
    /// Median accuracy per stage, one line each.
    pub fn table(&self) -> String {
        let m = &self.median;
        let mut out = format!(
            "{:<18} {:>8}   (median over {} seed(s))\n",
            "stage",
            "accuracy",
            self.runs.len()
        );
        for (name, v) in [
            ("source-only", m.source_only),
            ("+AdaBN", m.adabn),
            ("+AdaBN+DTC", m.adabn_dtc),
            ("SSNLL", m.ssnll_final),
        ] {
            out.push_str(&format!("{name:<18} {:>8}\n", pct(v)));
        }
        out
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn finish(path: &Path, mut w: impl Write) -> Result<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn save_checkpoint(model: &Classifier, path: &Path) -> Result<()> {
    checkpoint::save(model, path).map_err(|e| CliError::io(path, std::io::Error::other(e.to_string())))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).map_err(|e| CliError::io(path, e))?;
    finish(path, w)
}

#[derive(Serialize)]
struct Manifest<'a> {
    code_version: &'a str,
    command: &'a str,
    config: &'a ExperimentConfig,
}

fn write_manifest(config: &ExperimentConfig, command: &str) -> Result<()> {
    create_dir(&config.output_dir)?;
    let path = config.output_dir.join("manifest.json");
    let manifest = Manifest {
        code_version: CODE_VERSION,
        command,
        config,
    };
    write_with(&path, |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        writeln!(w)
    })
}

fn write_metrics(outcome: &SsnllOutcome, path: &Path) -> Result<()> {
    write_with(path, |w| {
        for m in &outcome.metrics {
            serde_json::to_writer(&mut *w, m)?;
            writeln!(w)?;
        }
        Ok(())
    })
}

fn seed_dir(config: &ExperimentConfig, seed: u64) -> PathBuf {
    config.output_dir.join(format!("seed-{seed}"))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, std::io::Error::other(e.to_string()))
}

/// `run`: pre-train (or load), adapt, and write every artifact per seed.
pub fn cmd_run(config: &ExperimentConfig) -> Result<RunSummary> {
    write_manifest(config, "run")?;
    let mut rows = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let run = run_seed(config, seed)?;
        let dir = seed_dir(config, seed);
        create_dir(&dir)?;
        save_checkpoint(&run.source_model, &dir.join("source.ckpt"))?;
        save_checkpoint(&run.outcome.post_adabn, &dir.join("epoch0.ckpt"))?;
        save_checkpoint(&run.outcome.model, &dir.join("final.ckpt"))?;
        write_metrics(&run.outcome, &dir.join("metrics.jsonl"))?;
        let o = &run.outcome;
        write_with(&dir.join("pseudo_labels.csv"), |w| {
            o.refined_pseudo.write_csv(Some(&o.clusters), w)
        })?;
        write_with(&dir.join("split.csv"), |w| {
            o.last_split.write_csv(&o.last_losses, &o.refined_pseudo.labels, w)
        })?;
        rows.push(RunRow::of(&run));
    }
    let summary = RunSummary {
        median: RunRow::median_of(&rows),
        runs: rows,
    };
    let path = config.output_dir.join("summary.csv");
    let mut w = csv_writer(&path)?;
    let header = ["seed", "source_only", "adabn", "adabn_dtc", "ssnll_final", "ssnll_best"];
    w.write_record(header).map_err(|e| csv_err(&path, e))?;
    for (seed, row) in config.seeds.iter().zip(&summary.runs) {
        let mut record = vec![seed.to_string()];
        record.extend(row.cells());
        w.write_record(&record).map_err(|e| csv_err(&path, e))?;
    }
    let mut record = vec!["median".to_string()];
    record.extend(summary.median.cells());
    w.write_record(&record).map_err(|e| csv_err(&path, e))?;
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub r: f64,
    pub final_accuracy: Option<f64>,
    pub best_accuracy: Option<f64>,
}

/// `sweep`: one adaptation per split ratio from a shared source model per seed.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    let ratios = config.sweep_ratios()?.to_vec();
    write_manifest(config, "sweep")?;
    let mut per_seed: Vec<Vec<SweepPoint>> = Vec::new();
    for &seed in &config.seeds {
        let domains = load_domains(config, seed)?;
        let (model, _) = pretrain(config, &domains.source, seed)?;
        let dir = seed_dir(config, seed);
        create_dir(&dir)?;
        save_checkpoint(&model, &dir.join("source.ckpt"))?;
        let mut points = Vec::with_capacity(ratios.len());
        for &r in &ratios {
            let outcome = adapt(
                &model,
                &domains.target,
                &TrainConfig {
                    split_ratio: r,
                    ..config.adapt_train.clone()
                },
                seed,
            )?;
            let rdir = dir.join(format!("r-{r}"));
            create_dir(&rdir)?;
            write_metrics(&outcome, &rdir.join("metrics.jsonl"))?;
            points.push(SweepPoint {
                r,
                final_accuracy: outcome.final_accuracy(),
                best_accuracy: outcome.best_accuracy(),
            });
        }
        per_seed.push(points);
    }

    let runs_path = config.output_dir.join("sweep_runs.csv");
    let mut w = csv_writer(&runs_path)?;
    w.write_record(["seed", "r", "final_accuracy", "best_accuracy"])
        .map_err(|e| csv_err(&runs_path, e))?;
    for (seed, points) in config.seeds.iter().zip(&per_seed) {
        for p in points {
            w.write_record([
                seed.to_string(),
                p.r.to_string(),
                cell(p.final_accuracy),
                cell(p.best_accuracy),
            ])
            .map_err(|e| csv_err(&runs_path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(&runs_path, e))?;

    let medians: Vec<SweepPoint> = ratios
        .iter()
        .enumerate()
        .map(|(i, &r)| SweepPoint {
            r,
            final_accuracy: median(per_seed.iter().map(|p| p[i].final_accuracy)),
            best_accuracy: median(per_seed.iter().map(|p| p[i].best_accuracy)),
        })
        .collect();
    let path = config.output_dir.join("sweep.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["r", "final_accuracy", "best_accuracy"])
        .map_err(|e| csv_err(&path, e))?;
    for p in &medians {
        w.write_record([p.r.to_string(), cell(p.final_accuracy), cell(p.best_accuracy)])
            .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(medians)
}

/// `export-embeddings`: feature-tap activations as `index,label,feat_0..`.
pub fn cmd_export_embeddings(
    config: &ExperimentConfig,
    checkpoint: &Path,
    domain: Domain,
    seed: u64,
    out: &Path,
) -> Result<usize> {
    let model = load_checkpoint(checkpoint)?;
    let domains = load_domains(config, seed)?;
    let data = domains.get(domain);
    check_widths(&model, data)?;
    let features = extract_features(&model, data)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut w = csv_writer(out)?;
    let mut header = vec!["index".to_string(), "label".to_string()];
    header.extend((0..features.cols()).map(|j| format!("feat_{j}")));
    w.write_record(&header).map_err(|e| csv_err(out, e))?;
    for (i, (row, label)) in features.iter_rows().zip(data.labels()).enumerate() {
        let mut record = vec![i.to_string(), label.map_or("-1".to_string(), |y| y.to_string())];
        record.extend(row.iter().map(f64::to_string));
        w.write_record(&record).map_err(|e| csv_err(out, e))?;
    }
    w.flush().map_err(|e| CliError::io(out, e))?;
    Ok(data.len())
}

/// `eval`: accuracy, per-class recall and confusion of a checkpoint.
pub fn cmd_eval(config: &ExperimentConfig, checkpoint: &Path, domain: Domain, seed: u64) -> Result<Evaluation> {
    let model = load_checkpoint(checkpoint)?;
    let domains = load_domains(config, seed)?;
    let data = domains.get(domain);
    check_widths(&model, data)?;
    if !data.is_fully_labeled() {
        return Err(CliError::Data("evaluation needs a fully labeled dataset".into()));
    }
    Ok(evaluate(&model, data)?)
}

pub fn format_evaluation(e: &Evaluation) -> String {
    let mut out = format!("accuracy {}\n\nclass  recall\n", pct(Some(e.accuracy)));
    for (c, acc) in e.per_class_accuracy.iter().enumerate() {
        out.push_str(&format!("{c:>5}  {:>7}\n", pct(*acc)));
    }
    out.push_str("\nconfusion (rows: truth, columns: prediction)\n");
    for row in &e.confusion {
        let cells: Vec<String> = row.iter().map(|n| format!("{n:>6}")).collect();
        out.push_str(&cells.join(""));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_present_values() {
        assert_eq!(median([Some(3.0), None, Some(1.0), Some(2.0)]), Some(2.0));
        assert_eq!(median([Some(4.0), Some(1.0)]), Some(2.5));
        assert_eq!(median([None]), None);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let features = Matrix::from_rows(&[&[0.5, -1.25], &[3.0, 1e-7]]).unwrap();
        let data = LabeledDataset::new(features, vec![Some(1), None], 2).unwrap();
        let path = dir.path().join("d.csv");
        data.write_csv(File::create(&path).unwrap()).unwrap();
        assert_eq!(read_dataset_csv(&path, 2).unwrap(), data);

        fs::write(&path, "x,label\n1,0\n").unwrap();
        assert!(matches!(read_dataset_csv(&path, 2), Err(CliError::Data(_))));
        fs::write(&path, "feature_0,label\n1,-2\n").unwrap();
        assert!(matches!(read_dataset_csv(&path, 2), Err(CliError::Data(_))));
    }
}
