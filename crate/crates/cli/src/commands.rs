use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tbooster::checkpoint;
use tbooster::connector::{train_connector, Connector, ConnectorConfig};
use tbooster::metrics::{evaluate, EvalReport};
use tbooster::mot::{read_mot, to_mot_string, FeatureTable, MotRow};
use tbooster::pipeline::boost;
use tbooster::splitter::{train_splitter_observed, Splitter, SplitterConfig, SplitterLossKind};
use tbooster::synth::{
    connector_samples, corpus_stats, label_switch_mask, splitter_windows, test_sequences, training_sequences,
    CorpusStats, Sequence,
};

use crate::ablation::{heads_sweep, module_ablation, splitter_ap, threshold_grid, AblationReport, SmoothingRow};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::file(dir, e))?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    ensure_parent(path)?;
    std::fs::write(path, contents).map_err(|e| CliError::file(path, e))
}

fn save_checkpoint(params: &tbooster::params::ParamStore<f32>, out: &Path) -> CliResult<()> {
    ensure_parent(out)?;
    checkpoint::save(params, out).map_err(|e| CliError::file(out, e))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn load_splitter(path: &Path, cfg: &SplitterConfig) -> CliResult<Splitter<f32>> {
    let params = checkpoint::load(path).map_err(|e| CliError::file(path, e))?;
    Splitter::from_params(params, cfg.clone()).map_err(|e| CliError::file(path, e))
}

pub fn load_connector(path: &Path, cfg: &ConnectorConfig) -> CliResult<Connector<f32>> {
    let params = checkpoint::load(path).map_err(|e| CliError::file(path, e))?;
    Connector::from_params(params, cfg.clone()).map_err(|e| CliError::file(path, e))
}

/// Tracker run with its hidden per-detection identities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRecord {
    pub track_id: i64,
    pub frames: Vec<i64>,
    pub gt_ids: Vec<i64>,
    pub switch_mask: Vec<f32>,
}

fn write_sequence(dir: &Path, seq: &Sequence) -> CliResult<()> {
    write_file(&dir.join("gt.txt"), to_mot_string(&seq.gt_rows()))?;
    let mut det = String::new();
    for d in seq.detections.iter().flatten() {
        let r = MotRow::new(d.frame, -1, d.bbox, 1.0);
        let _ = writeln!(det, "{},-1,{}", r.frame, r.raw);
    }
    write_file(&dir.join("det.txt"), det)?;
    let (rows, table) = seq.tracker_output();
    write_file(&dir.join("tracks.txt"), to_mot_string(&rows))?;
    let mut feats = Vec::new();
    table.write(&mut feats)?;
    write_file(&dir.join("features.jsonl"), feats)?;
    let mut labels = String::new();
    for t in &seq.tracklets {
        let rec = LabelRecord {
            track_id: t.track_id,
            frames: t.frames.clone(),
            gt_ids: t.gt_ids.clone(),
            switch_mask: label_switch_mask(&t.gt_ids)?.values,
        };
        labels += &serde_json::to_string(&rec).map_err(tbooster::Error::from)?;
        labels.push('\n');
    }
    write_file(&dir.join("labels.jsonl"), labels)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSummary {
    pub train: CorpusStats,
    pub test: CorpusStats,
}

/// Writes `corpus/{train,test}/seq-NNN/` under the output directory.
pub fn cmd_synth(cfg: &RunConfig) -> CliResult<SynthSummary> {
    cfg.validate()?;
    let root = cfg.out_dir.join("corpus");
    let train = training_sequences(cfg.seed, &cfg.synth)?;
    let test = test_sequences(cfg.seed, &cfg.synth)?;
    for (split, seqs) in [("train", &train), ("test", &test)] {
        for (i, s) in seqs.iter().enumerate() {
            write_sequence(&root.join(split).join(format!("seq-{i:03}")), s)?;
        }
    }
    let summary = SynthSummary {
        train: corpus_stats(&train),
        test: corpus_stats(&test),
    };
    write_file(&root.join("stats.json"), json(&summary))?;
    write_file(&root.join("config.toml"), cfg.to_toml())?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub examples: usize,
    pub iterations: u64,
    /// Mean loss over the last 100 iterations.
    pub final_loss: f64,
}

fn tail_mean(losses: &[f64]) -> f64 {
    let tail = &losses[losses.len().saturating_sub(100)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

pub fn cmd_train_splitter(cfg: &RunConfig, out: &Path) -> CliResult<TrainSummary> {
    cfg.validate()?;
    let train = cfg.splitter_train();
    let seqs = training_sequences(cfg.seed, &cfg.synth)?;
    let windows = splitter_windows(&seqs, cfg.splitter.window)?;
    let model = Splitter::<f32>::new(cfg.splitter.clone(), train.seed)?;
    let every = (train.iterations / 10).max(1);
    let result = train_splitter_observed(model, &windows, &train, |it, _, loss| {
        if (it + 1) % every == 0 {
            eprintln!("splitter: iteration {}/{} loss {loss:.4}", it + 1, train.iterations);
        }
    })?;
    save_checkpoint(&result.model.params, out)?;
    let summary = TrainSummary {
        checkpoint: out.to_path_buf(),
        examples: windows.len(),
        iterations: train.iterations,
        final_loss: tail_mean(&result.losses),
    };
    write_file(&out.with_extension("json"), json(&summary))?;
    Ok(summary)
}

pub fn cmd_train_connector(cfg: &RunConfig, out: &Path) -> CliResult<TrainSummary> {
    cfg.validate()?;
    let train = cfg.connector_train();
    let seqs = training_sequences(cfg.seed, &cfg.synth)?;
    let samples = connector_samples(&seqs, cfg.synth.min_sample_len, 0);
    let result = train_connector(&samples, &cfg.connector, &train)?;
    save_checkpoint(&result.model.params, out)?;
    let summary = TrainSummary {
        checkpoint: out.to_path_buf(),
        examples: samples.len(),
        iterations: train.iterations,
        final_loss: tail_mean(&result.losses),
    };
    write_file(&out.with_extension("json"), json(&summary))?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct BoostArgs {
    pub input: PathBuf,
    pub features: PathBuf,
    pub splitter: Option<PathBuf>,
    pub connector: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoostSummary {
    pub rows: usize,
    pub tracks_in: usize,
    pub segments: usize,
    pub tracks_out: usize,
}

pub fn cmd_boost(cfg: &RunConfig, args: &BoostArgs) -> CliResult<BoostSummary> {
    cfg.pipeline.validate()?;
    let rows = read_mot(&args.input).map_err(|e| CliError::file(&args.input, e))?;
    let table = FeatureTable::read(&args.features).map_err(|e| CliError::file(&args.features, e))?;
    let splitter = args.splitter.as_deref().map(|p| load_splitter(p, &cfg.splitter)).transpose()?;
    let connector = args.connector.as_deref().map(|p| load_connector(p, &cfg.connector)).transpose()?;
    let (out, trace) = boost(&rows, &table, splitter.as_ref(), connector.as_ref(), &cfg.pipeline)?;
    write_file(&args.out, to_mot_string(&out))?;
    let ids = |r: &[MotRow]| r.iter().map(|r| r.id).collect::<std::collections::BTreeSet<_>>().len();
    Ok(BoostSummary {
        rows: out.len(),
        tracks_in: ids(&rows),
        segments: trace.segments.len(),
        tracks_out: ids(&out),
    })
}

pub fn cmd_eval(gt: &Path, pred: &Path, report: Option<&Path>) -> CliResult<EvalReport> {
    let g = read_mot(gt).map_err(|e| CliError::file(gt, e))?;
    let p = read_mot(pred).map_err(|e| CliError::file(pred, e))?;
    let r = evaluate(&g, &p);
    if let Some(path) = report {
        write_file(path, json(&r))?;
    }
    Ok(r)
}

#[derive(Debug, Clone)]
pub struct AblateArgs {
    pub splitter: PathBuf,
    pub connector: PathBuf,
    /// Hard-label splitter; trained with the same budget when absent.
    pub baseline_splitter: Option<PathBuf>,
}

/// Runs every ablation table and writes `ablation.json` and `ablation.md`.
pub fn cmd_ablate(cfg: &RunConfig, args: &AblateArgs) -> CliResult<AblationReport> {
    cfg.validate()?;
    let splitter = load_splitter(&args.splitter, &cfg.splitter)?;
    let connector = load_connector(&args.connector, &cfg.connector)?;
    let test = test_sequences(cfg.seed, &cfg.synth)?;
    let train = training_sequences(cfg.seed, &cfg.synth)?;
    let pipe = &cfg.pipeline;

    let baseline = match &args.baseline_splitter {
        Some(p) => load_splitter(p, &cfg.splitter)?,
        None => {
            eprintln!("ablate: training hard-label splitter");
            let windows = splitter_windows(&train, cfg.splitter.window)?;
            let mut t = cfg.splitter_train();
            t.loss = SplitterLossKind::Hard;
            let model = Splitter::<f32>::new(cfg.splitter.clone(), t.seed)?;
            train_splitter_observed(model, &windows, &t, |_, _, _| {})?.model
        }
    };
    let tol = cfg.ablate.ap_tolerance;
    let smoothing = SmoothingRow {
        adaptive_ap: splitter_ap(&test, &splitter, pipe, tol)?,
        baseline_ap: splitter_ap(&test, &baseline, pipe, tol)?,
        tolerance: tol,
    };
    eprintln!("ablate: module and threshold tables");
    let modules = module_ablation(&test, &splitter, &connector, pipe)?;
    let grid = threshold_grid(&test, &splitter, &connector, pipe, &cfg.ablate.delta_s, &cfg.ablate.delta_c)?;
    eprintln!("ablate: heads sweep");
    let samples = connector_samples(&train, cfg.synth.min_sample_len, 0);
    let mut ht = cfg.connector_train();
    ht.iterations = cfg.ablate.heads_iterations;
    let heads = heads_sweep(&samples, &test, &splitter, &cfg.connector, &ht, &cfg.ablate.heads, pipe)?;
    let report = AblationReport {
        modules,
        grid,
        smoothing,
        heads,
    };
    write_file(&cfg.out_dir.join("ablation.json"), json(&report))?;
    write_file(&cfg.out_dir.join("ablation.md"), report.to_markdown())?;
    Ok(report)
}
