//! Scripted ablation grid: train/evaluate every (value, fold, seed) cell of
//! one ablated axis with shared seeds and data, and emit comparison tables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DatasetIndex, FoldConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_with_records, MetricsReport};
use crate::exec;
use crate::model::Checkpoint;
use crate::pseudoclass::{ExclusionPolicy, SamplingStrategy};
use crate::superpixel::SuperpixelAlgo;
use crate::train::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationAxis {
    Superpixel,
    Sampling,
    Exclusion,
    Alpha,
    Baseline,
}

/// One setting of the ablated axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AxisValue {
    Algo(SuperpixelAlgo),
    Strategy(SamplingStrategy),
    Policy(ExclusionPolicy),
    Alpha(f64),
    SelfSupervision(bool),
}

impl AxisValue {
    pub fn label(&self) -> String {
        match self {
            AxisValue::Algo(SuperpixelAlgo::Felzenszwalb(_)) => "felzenszwalb".into(),
            AxisValue::Algo(SuperpixelAlgo::Slic(_)) => "slic".into(),
            AxisValue::Algo(SuperpixelAlgo::Grid { rows, cols }) => format!("grid{rows}x{cols}"),
            AxisValue::Strategy(SamplingStrategy::TopK(k)) => format!("top{k}"),
            AxisValue::Strategy(SamplingStrategy::UniformAll) => "uniform".into(),
            AxisValue::Policy(ExclusionPolicy::TargetOnly) => "target-only".into(),
            AxisValue::Policy(ExclusionPolicy::AllBaseClasses) => "base".into(),
            AxisValue::Policy(ExclusionPolicy::AllBaseAndNovel) => "base-novel".into(),
            AxisValue::Alpha(a) => format!("alpha{a}"),
            AxisValue::SelfSupervision(true) => "with-ss".into(),
            AxisValue::SelfSupervision(false) => "baseline".into(),
        }
    }

    fn apply(&self, cfg: &mut TrainConfig) {
        match self {
            AxisValue::Algo(algo) => cfg.superpixel = algo.clone(),
            AxisValue::Strategy(s) => cfg.sampling_strategy = *s,
            AxisValue::Policy(p) => cfg.exclusion_policy = *p,
            AxisValue::Alpha(a) => cfg.alpha = *a,
            AxisValue::SelfSupervision(on) => cfg.selfsup_enabled = *on,
        }
    }

    fn matches_axis(&self, axis: AblationAxis) -> bool {
        matches!(
            (self, axis),
            (AxisValue::Algo(_), AblationAxis::Superpixel)
                | (AxisValue::Strategy(_), AblationAxis::Sampling)
                | (AxisValue::Policy(_), AblationAxis::Exclusion)
                | (AxisValue::Alpha(_), AblationAxis::Alpha)
                | (AxisValue::SelfSupervision(_), AblationAxis::Baseline)
        )
    }
}

#[derive(Debug, Clone)]
pub struct AblationSpec {
    pub axis: AblationAxis,
    pub values: Vec<AxisValue>,
    /// Shared training configuration; the seed field is overwritten per cell.
    pub base: TrainConfig,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    pub eval_shots: usize,
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidParameter("ablation needs at least one value".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("ablation needs at least one seed".into()));
        }
        for v in &self.values {
            if !v.matches_axis(self.axis) {
                return Err(Error::InvalidParameter(format!(
                    "value {} does not belong to axis {:?}",
                    v.label(),
                    self.axis
                )));
            }
        }
        self.base.validate()
    }

    /// The two fixed rows of the baseline comparison.
    pub fn baseline_values() -> Vec<AxisValue> {
        vec![AxisValue::SelfSupervision(true), AxisValue::SelfSupervision(false)]
    }
}

/// One trained/evaluated cell; a failed run keeps its error message and
/// leaves the metric absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellOutcome {
    pub value_label: String,
    pub fold: usize,
    pub seed: u64,
    pub mean_iou: Option<f64>,
    pub error: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub mean: Option<f64>,
    pub stddev: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowSummary {
    pub value_label: String,
    pub per_fold: Vec<FoldSummary>,
    /// Mean of the per-fold means.
    pub overall_mean: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub folds: Vec<usize>,
    pub seeds: Vec<u64>,
    pub rows: Vec<RowSummary>,
    pub cells: Vec<CellOutcome>,
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '-' })
        .collect()
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Runs every (value, fold, seed) cell: train, store the checkpoint, evaluate
/// with the shared evaluation seed, store the report. Cells run in parallel;
/// outcomes are collected in cell order.
pub fn run_ablation(
    spec: &AblationSpec,
    index: &DatasetIndex,
    folds: &[usize],
    out_dir: &Path,
) -> Result<AblationTable> {
    spec.validate()?;
    if folds.is_empty() {
        return Err(Error::InvalidParameter("ablation needs at least one fold".into()));
    }
    let mut fold_configs = Vec::with_capacity(folds.len());
    for &f in folds {
        fold_configs.push(FoldConfig::builtin(&index.classes, f)?);
    }
    std::fs::create_dir_all(out_dir.join("checkpoints"))?;
    std::fs::create_dir_all(out_dir.join("reports"))?;

    struct CellSpec<'a> {
        value: &'a AxisValue,
        fold: usize,
        fold_config: &'a FoldConfig,
        seed: u64,
    }
    let mut cell_specs = Vec::new();
    for value in &spec.values {
        for (fi, &fold) in folds.iter().enumerate() {
            for &seed in &spec.seeds {
                cell_specs.push(CellSpec { value, fold, fold_config: &fold_configs[fi], seed });
            }
        }
    }

    let run_cell = |cell: &CellSpec| -> CellOutcome {
        let label = cell.value.label();
        let stem = format!("{}_f{}_s{}", sanitize(&label), cell.fold, cell.seed);
        let mut cfg = spec.base.clone();
        cell.value.apply(&mut cfg);
        cfg.seed = cell.seed;
        let result = (|| -> Result<(f64, PathBuf, PathBuf)> {
            let output = train(index, cell.fold_config, &cfg)?;
            let ckpt_path = out_dir.join("checkpoints").join(format!("{stem}.ckpt"));
            Checkpoint { params: output.params.clone(), seed: cell.seed }.save(&ckpt_path)?;
            let (report, _) = evaluate_with_records(
                &output.params,
                index,
                cell.fold_config,
                spec.eval_shots,
                spec.eval_episodes,
                spec.eval_seed,
            )?;
            let report_path = out_dir.join("reports").join(format!("{stem}.json"));
            let mut json = serde_json::to_string_pretty(&report)?;
            json.push('\n');
            std::fs::write(&report_path, json)?;
            Ok((report.mean_iou, ckpt_path, report_path))
        })();
        match result {
            Ok((mean_iou, ckpt, report)) => CellOutcome {
                value_label: label,
                fold: cell.fold,
                seed: cell.seed,
                mean_iou: Some(mean_iou),
                error: None,
                checkpoint: Some(ckpt),
                report: Some(report),
            },
            Err(e) => CellOutcome {
                value_label: label,
                fold: cell.fold,
                seed: cell.seed,
                mean_iou: None,
                error: Some(e.to_string()),
                checkpoint: None,
                report: None,
            },
        }
    };
    let cells = exec::map_collect(cell_specs.len(), |i| run_cell(&cell_specs[i]));

    let mut rows = Vec::with_capacity(spec.values.len());
    for value in &spec.values {
        let label = value.label();
        let mut per_fold = Vec::with_capacity(folds.len());
        let mut fold_means = Vec::new();
        for &fold in folds {
            let vals: Vec<f64> = cells
                .iter()
                .filter(|c| c.value_label == label && c.fold == fold)
                .filter_map(|c| c.mean_iou)
                .collect();
            if vals.is_empty() {
                per_fold.push(FoldSummary { fold, mean: None, stddev: None });
            } else {
                let (mean, std) = mean_and_std(&vals);
                per_fold.push(FoldSummary { fold, mean: Some(mean), stddev: Some(std) });
                fold_means.push(mean);
            }
        }
        let overall_mean = if fold_means.len() == folds.len() {
            Some(fold_means.iter().sum::<f64>() / fold_means.len() as f64)
        } else {
            None
        };
        rows.push(RowSummary { value_label: label, per_fold, overall_mean });
    }

    Ok(AblationTable {
        axis: spec.axis,
        folds: folds.to_vec(),
        seeds: spec.seeds.clone(),
        rows,
        cells,
    })
}

pub fn render_markdown(table: &AblationTable) -> String {
    let mut out = String::new();
    out.push_str(&format!("# Ablation: {:?}\n\n", table.axis));
    out.push_str("| value |");
    for fold in &table.folds {
        out.push_str(&format!(" fold {fold} |"));
    }
    out.push_str(" mean |\n|---|");
    for _ in &table.folds {
        out.push_str("---|");
    }
    out.push_str("---|\n");
    for row in &table.rows {
        out.push_str(&format!("| {} |", row.value_label));
        for fs in &row.per_fold {
            match (fs.mean, fs.stddev) {
                (Some(m), Some(s)) => out.push_str(&format!(" {m:.4} ± {s:.4} |")),
                _ => out.push_str(" — |"),
            }
        }
        match row.overall_mean {
            Some(m) => out.push_str(&format!(" {m:.4} |\n")),
            None => out.push_str(" — |\n"),
        }
    }
    let failures: Vec<&CellOutcome> = table.cells.iter().filter(|c| c.error.is_some()).collect();
    if !failures.is_empty() {
        out.push_str("\n## Failed cells\n\n");
        for c in failures {
            out.push_str(&format!(
                "- {} fold {} seed {}: {}\n",
                c.value_label,
                c.fold,
                c.seed,
                c.error.as_deref().unwrap_or("unknown")
            ));
        }
    }
    out
}

/// Writes `table.md`, `table.csv`, and `cells.csv` under `out_dir`.
pub fn write_tables(table: &AblationTable, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("table.md"), render_markdown(table))?;

    let mut summary = String::from("value");
    for fold in &table.folds {
        summary.push_str(&format!(",fold{fold}_mean,fold{fold}_stddev"));
    }
    summary.push_str(",overall_mean\n");
    for row in &table.rows {
        summary.push_str(&row.value_label);
        for fs in &row.per_fold {
            match (fs.mean, fs.stddev) {
                (Some(m), Some(s)) => summary.push_str(&format!(",{m},{s}")),
                _ => summary.push_str(",,"),
            }
        }
        match row.overall_mean {
            Some(m) => summary.push_str(&format!(",{m}\n")),
            None => summary.push_str(",\n"),
        }
    }
    std::fs::write(out_dir.join("table.csv"), summary)?;

    let mut cells = String::from("value,fold,seed,mean_iou,error\n");
    for c in &table.cells {
        cells.push_str(&format!(
            "{},{},{},{},{}\n",
            c.value_label,
            c.fold,
            c.seed,
            c.mean_iou.map(|v| v.to_string()).unwrap_or_default(),
            c.error.clone().unwrap_or_default().replace(',', ";")
        ));
    }
    std::fs::write(out_dir.join("cells.csv"), cells)?;
    Ok(())
}

/// Paired per-bucket comparison of two reports over identical seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketComparison {
    pub num_classes: usize,
    pub episodes_a: usize,
    pub mean_iou_a: Option<f64>,
    pub episodes_b: usize,
    pub mean_iou_b: Option<f64>,
    /// `a - b` when both sides are present.
    pub delta: Option<f64>,
}

/// Bucket-by-bucket comparison; the output covers the union of both inputs'
/// buckets, and a bucket missing on one side is reported with an absent mean.
pub fn compare_by_num_classes(a: &MetricsReport, b: &MetricsReport) -> Vec<BucketComparison> {
    let mut buckets: Vec<usize> =
        a.by_num_classes.keys().chain(b.by_num_classes.keys()).copied().collect();
    buckets.sort_unstable();
    buckets.dedup();
    buckets
        .into_iter()
        .map(|bucket| {
            let sa = a.by_num_classes.get(&bucket);
            let sb = b.by_num_classes.get(&bucket);
            BucketComparison {
                num_classes: bucket,
                episodes_a: sa.map_or(0, |s| s.episodes),
                mean_iou_a: sa.map(|s| s.mean_iou),
                episodes_b: sb.map_or(0, |s| s.episodes),
                mean_iou_b: sb.map(|s| s.mean_iou),
                delta: match (sa, sb) {
                    (Some(x), Some(y)) => Some(x.mean_iou - y.mean_iou),
                    _ => None,
                },
            }
        })
        .collect()
}

/// CSV rendering of a bucket comparison.
pub fn comparison_csv(rows: &[BucketComparison]) -> String {
    let mut out = String::from("num_classes,episodes_a,mean_iou_a,episodes_b,mean_iou_b,delta\n");
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.num_classes,
            r.episodes_a,
            fmt(r.mean_iou_a),
            r.episodes_b,
            fmt(r.mean_iou_b),
            fmt(r.delta)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{report_from_records, EpisodeRecord, EvalConfigEcho};

    fn report(records: &[EpisodeRecord]) -> MetricsReport {
        report_from_records(
            records,
            EvalConfigEcho {
                shots: 1,
                episodes: records.len(),
                seed: 0,
                fold: FoldConfig {
                    base_classes: [1u32].into_iter().collect(),
                    novel_classes: [2u32].into_iter().collect(),
                },
            },
        )
    }

    #[test]
    fn self_comparison_has_zero_deltas() {
        let r = report(&[
            EpisodeRecord { target_class: 2, intersection: 1, union: 2, num_classes: 1 },
            EpisodeRecord { target_class: 2, intersection: 1, union: 4, num_classes: 3 },
        ]);
        let rows = compare_by_num_classes(&r, &r);
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|row| row.delta == Some(0.0)));
    }

    #[test]
    fn comparison_covers_bucket_union_and_flags_mismatch() {
        let a = report(&[EpisodeRecord { target_class: 2, intersection: 1, union: 2, num_classes: 1 }]);
        let b = report(&[EpisodeRecord { target_class: 2, intersection: 3, union: 4, num_classes: 2 }]);
        let rows = compare_by_num_classes(&a, &b);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].num_classes, 1);
        assert_eq!(rows[0].mean_iou_a, Some(0.5));
        assert_eq!(rows[0].mean_iou_b, None);
        assert_eq!(rows[0].delta, None);
        assert_eq!(rows[1].num_classes, 2);
        assert_eq!(rows[1].delta, None);
    }

    #[test]
    fn deltas_match_manual_subtraction() {
        let a = report(&[EpisodeRecord { target_class: 2, intersection: 3, union: 4, num_classes: 2 }]);
        let b = report(&[EpisodeRecord { target_class: 2, intersection: 1, union: 4, num_classes: 2 }]);
        let rows = compare_by_num_classes(&a, &b);
        assert_eq!(rows[0].delta, Some(0.75 - 0.25));
    }

    #[test]
    fn spec_validation_catches_mismatched_values() {
        let spec = AblationSpec {
            axis: AblationAxis::Alpha,
            values: vec![AxisValue::SelfSupervision(true)],
            base: TrainConfig::default(),
            seeds: vec![1],
            eval_episodes: 10,
            eval_seed: 0,
            eval_shots: 1,
        };
        assert!(spec.validate().is_err());
    }
}
