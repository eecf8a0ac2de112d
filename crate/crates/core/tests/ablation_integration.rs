//! Ablation harness on a miniature configuration: cell bookkeeping, the
//! recomputation oracle against stored checkpoints, and the alpha-zero /
//! baseline identity.

mod common;

use tempfile::TempDir;

use protoseg::ablation::{run_ablation, write_tables, AblationAxis, AblationSpec, AxisValue};
use protoseg::data::{generate_synthetic_dataset, load_dataset, FoldConfig};
use protoseg::eval::evaluate_with_records;
use protoseg::model::Checkpoint;
use protoseg::train::TrainConfig;

fn mini_spec(axis: AblationAxis, values: Vec<AxisValue>) -> AblationSpec {
    AblationSpec {
        axis,
        values,
        base: TrainConfig { episodes: 40, ..TrainConfig::default() },
        seeds: vec![31, 32],
        eval_episodes: 30,
        eval_seed: 900,
        eval_shots: 1,
    }
}

#[test]
fn alpha_ablation_cells_match_stored_checkpoints() {
    let data = TempDir::new().unwrap();
    generate_synthetic_dataset(data.path(), 50, 12, 48, 3, 41).unwrap();
    let index = load_dataset(data.path()).unwrap();
    let out = TempDir::new().unwrap();

    let spec = mini_spec(
        AblationAxis::Alpha,
        vec![AxisValue::Alpha(0.0), AxisValue::Alpha(0.5)],
    );
    let table = run_ablation(&spec, &index, &[0], out.path()).unwrap();
    assert_eq!(table.cells.len(), 4);
    assert!(table.cells.iter().all(|c| c.error.is_none()));

    // Recomputation oracle: evaluating the stored checkpoint reproduces the
    // table cell exactly.
    for cell in &table.cells {
        let ckpt = Checkpoint::load(cell.checkpoint.as_ref().unwrap()).unwrap();
        let fold = FoldConfig::builtin(&index.classes, cell.fold).unwrap();
        let (report, _) = evaluate_with_records(
            &ckpt.params,
            &index,
            &fold,
            spec.eval_shots,
            spec.eval_episodes,
            spec.eval_seed,
        )
        .unwrap();
        assert_eq!(
            report.mean_iou.to_bits(),
            cell.mean_iou.unwrap().to_bits(),
            "cell {} f{} s{} does not reproduce from its checkpoint",
            cell.value_label,
            cell.fold,
            cell.seed
        );
    }

    // The alpha = 0 cells are bit-identical to the baseline rows.
    let baseline = run_ablation(
        &mini_spec(AblationAxis::Baseline, AblationSpec::baseline_values()),
        &index,
        &[0],
        TempDir::new().unwrap().path(),
    )
    .unwrap();
    for seed in [31u64, 32] {
        let alpha0 = table
            .cells
            .iter()
            .find(|c| c.value_label == "alpha0" && c.seed == seed)
            .unwrap();
        let bl = baseline
            .cells
            .iter()
            .find(|c| c.value_label == "baseline" && c.seed == seed)
            .unwrap();
        let a = std::fs::read(alpha0.checkpoint.as_ref().unwrap()).unwrap();
        let b = std::fs::read(bl.checkpoint.as_ref().unwrap()).unwrap();
        assert_eq!(a, b, "alpha=0 checkpoint differs from the baseline run (seed {seed})");
    }

    // Baseline axis has exactly two rows.
    assert_eq!(baseline.rows.len(), 2);
    let labels: Vec<&str> = baseline.rows.iter().map(|r| r.value_label.as_str()).collect();
    assert_eq!(labels, vec!["with-ss", "baseline"]);

    write_tables(&table, out.path()).unwrap();
    for file in ["table.md", "table.csv", "cells.csv"] {
        assert!(out.path().join(file).exists(), "{file} missing");
    }
    let cells_csv = std::fs::read_to_string(out.path().join("cells.csv")).unwrap();
    assert_eq!(cells_csv.lines().count(), 1 + table.cells.len());
}

#[test]
fn failed_cells_are_recorded_not_fatal() {
    let data = TempDir::new().unwrap();
    generate_synthetic_dataset(data.path(), 30, 12, 48, 3, 43).unwrap();
    let index = load_dataset(data.path()).unwrap();
    let out = TempDir::new().unwrap();

    // A grid partition larger than the image is a per-cell failure.
    let spec = mini_spec(
        AblationAxis::Superpixel,
        vec![
            AxisValue::Algo(protoseg::superpixel::SuperpixelAlgo::Grid { rows: 500, cols: 500 }),
            AxisValue::Algo(protoseg::superpixel::SuperpixelAlgo::Grid { rows: 6, cols: 6 }),
        ],
    );
    let table = run_ablation(&spec, &index, &[0], out.path()).unwrap();
    let bad: Vec<_> = table.cells.iter().filter(|c| c.error.is_some()).collect();
    let good: Vec<_> = table.cells.iter().filter(|c| c.error.is_none()).collect();
    assert_eq!(bad.len(), 2, "oversized grid cells should fail");
    assert_eq!(good.len(), 2);
    let bad_row = table.rows.iter().find(|r| r.value_label == "grid500x500").unwrap();
    assert!(bad_row.per_fold[0].mean.is_none());
    assert!(bad_row.overall_mean.is_none());
    // The rendered markdown marks the absent cells.
    let md = protoseg::ablation::render_markdown(&table);
    assert!(md.contains("—"));
    assert!(md.contains("Failed cells"));
}
