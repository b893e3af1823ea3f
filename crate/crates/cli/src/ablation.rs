//! Ablation tables over the synthetic benchmark.

use serde::{Deserialize, Serialize};
use tbooster::connector::{train_connector, Connector, ConnectorConfig, ConnectorSample, ConnectorTrainConfig};
use tbooster::metrics::{splitting_ap, EvalReport};
use tbooster::pipeline::{boost, windowed_mask, PipelineConfig};
use tbooster::splitter::Splitter;
use tbooster::synth::{label_switch_mask, Sequence};
use tbooster::Result;

pub const MODULE_ROWS: [&str; 4] = ["original", "+connector", "+splitter", "+both"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleRow {
    pub name: String,
    pub idf1: f64,
    pub mota: f64,
    pub ids: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub delta_s: f64,
    pub delta_c: f64,
    pub idf1: f64,
    pub mota: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingRow {
    pub adaptive_ap: f64,
    pub baseline_ap: f64,
    pub tolerance: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadsRow {
    pub heads: usize,
    pub head_dim: usize,
    pub msa_params: usize,
    pub idf1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub modules: Vec<ModuleRow>,
    pub grid: Vec<GridCell>,
    pub smoothing: SmoothingRow,
    pub heads: Vec<HeadsRow>,
}

/// Boosts every sequence's tracker output and pools the metrics.
pub fn benchmark(
    seqs: &[Sequence],
    splitter: Option<&Splitter<f32>>,
    connector: Option<&Connector<f32>>,
    cfg: &PipelineConfig,
) -> Result<EvalReport> {
    let parts = seqs
        .iter()
        .map(|s| {
            let (rows, table) = s.tracker_output();
            let (out, _) = boost(&rows, &table, splitter, connector, cfg)?;
            Ok(tbooster::metrics::evaluate(&s.gt_rows(), &out))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::combine(&parts))
}

/// Rows in [`MODULE_ROWS`] order.
pub fn module_ablation(
    seqs: &[Sequence],
    splitter: &Splitter<f32>,
    connector: &Connector<f32>,
    cfg: &PipelineConfig,
) -> Result<Vec<ModuleRow>> {
    let combos = [
        (None, None),
        (None, Some(connector)),
        (Some(splitter), None),
        (Some(splitter), Some(connector)),
    ];
    MODULE_ROWS
        .iter()
        .zip(combos)
        .map(|(name, (s, c))| {
            let r = benchmark(seqs, s, c, cfg)?;
            Ok(ModuleRow {
                name: name.to_string(),
                idf1: r.idf1,
                mota: r.mota,
                ids: r.ids,
            })
        })
        .collect()
}

/// Full pipeline for every `(δs, δc)` pair, `δs` outermost.
pub fn threshold_grid(
    seqs: &[Sequence],
    splitter: &Splitter<f32>,
    connector: &Connector<f32>,
    cfg: &PipelineConfig,
    delta_s: &[f64],
    delta_c: &[f64],
) -> Result<Vec<GridCell>> {
    let mut out = Vec::with_capacity(delta_s.len() * delta_c.len());
    for &ds in delta_s {
        for &dc in delta_c {
            let c = PipelineConfig {
                delta_s: ds,
                delta_c: dc,
                ..cfg.clone()
            };
            let r = benchmark(seqs, Some(splitter), Some(connector), &c)?;
            out.push(GridCell {
                delta_s: ds,
                delta_c: dc,
                idf1: r.idf1,
                mota: r.mota,
            });
        }
    }
    Ok(out)
}

/// Splitting AP over every tracker tracklet with at least two detections.
pub fn splitter_ap(seqs: &[Sequence], splitter: &Splitter<f32>, cfg: &PipelineConfig, tolerance: usize) -> Result<f64> {
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for s in seqs {
        for (t, f) in s.tracklets.iter().zip(&s.features) {
            if t.len() < 2 {
                continue;
            }
            gt.push(label_switch_mask(&t.gt_ids)?.values);
            pred.push(windowed_mask(f, splitter, cfg)?.values);
        }
    }
    Ok(splitting_ap(&pred, &gt, tolerance))
}

/// Trains one connector per head count with the model width fixed and
/// scores the full pipeline with each.
#[allow(clippy::too_many_arguments)]
pub fn heads_sweep(
    samples: &[ConnectorSample],
    seqs: &[Sequence],
    splitter: &Splitter<f32>,
    connector: &ConnectorConfig,
    train: &ConnectorTrainConfig,
    heads: &[usize],
    cfg: &PipelineConfig,
) -> Result<Vec<HeadsRow>> {
    heads
        .iter()
        .map(|&k| {
            let c = ConnectorConfig {
                heads: k,
                ..connector.clone()
            };
            let model = train_connector(samples, &c, train)?.model;
            let r = benchmark(seqs, Some(splitter), Some(&model), cfg)?;
            Ok(HeadsRow {
                heads: k,
                head_dim: model.cfg.head_dim(),
                msa_params: model.attention_param_count(),
                idf1: r.idf1,
            })
        })
        .collect()
}

impl AblationReport {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("## Modules\n\n| method | IDF1 | MOTA | IDS |\n|---|---|---|---|\n");
        for r in &self.modules {
            s += &format!("| {} | {:.2} | {:.2} | {} |\n", r.name, 100.0 * r.idf1, 100.0 * r.mota, r.ids);
        }
        let mut ds: Vec<f64> = Vec::new();
        let mut dc: Vec<f64> = Vec::new();
        for c in &self.grid {
            if !ds.contains(&c.delta_s) {
                ds.push(c.delta_s);
            }
            if !dc.contains(&c.delta_c) {
                dc.push(c.delta_c);
            }
        }
        s += "\n## Thresholds (IDF1)\n\n| δs \\ δc |";
        for c in &dc {
            s += &format!(" {c} |");
        }
        s += "\n|---|";
        s += &"---|".repeat(dc.len());
        s += "\n";
        for d in &ds {
            s += &format!("| {d} |");
            for c in self.grid.iter().filter(|c| c.delta_s == *d) {
                s += &format!(" {:.2} |", 100.0 * c.idf1);
            }
            s += "\n";
        }
        s += &format!(
            "\n## Splitter loss (AP, ±{} frames)\n\n| loss | AP |\n|---|---|\n| hard labels | {:.2} |\n| adaptive smoothing | {:.2} |\n",
            self.smoothing.tolerance,
            100.0 * self.smoothing.baseline_ap,
            100.0 * self.smoothing.adaptive_ap
        );
        s += "\n## Heads\n\n| heads | head dim | MSA params | IDF1 |\n|---|---|---|---|\n";
        for h in &self.heads {
            s += &format!("| {} | {} | {} | {:.2} |\n", h.heads, h.head_dim, h.msa_params, 100.0 * h.idf1);
        }
        s
    }
}
