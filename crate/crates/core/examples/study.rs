//! Development driver for the paired SS-vs-baseline study: trains every
//! (fold, seed, variant) cell on a synthetic dataset and prints overall and
//! multi-class meanIoU per cell.
//!
//! Usage: `cargo run --example study -- <data_dir> [episodes] [folds] [seeds]`

use std::path::Path;

use protoseg::data::{generate_synthetic_dataset, load_dataset, FoldConfig};
use protoseg::eval::{evaluate_with_records, mean_iou_from_records};
use protoseg::exec;
use protoseg::pseudoclass::SamplingStrategy;
use protoseg::superpixel::SuperpixelAlgo;
use protoseg::train::{train, TrainConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let data_dir = args.get(1).map(String::as_str).unwrap_or("/tmp/psdemo/data");
    let episodes: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let folds: Vec<usize> = args
        .get(3)
        .map(|s| s.split(',').map(|x| x.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![0, 1, 2, 3]);
    let seeds: Vec<u64> = args
        .get(4)
        .map(|s| s.split(',').map(|x| x.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![11, 12, 13]);

    let chosen: Vec<String> = args
        .get(5)
        .map(|s| s.split(',').map(str::to_string).collect())
        .unwrap_or_else(|| vec!["ss".into(), "baseline".into(), "grid".into(), "uniform".into()]);
    let image_size: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(64);

    if !Path::new(data_dir).join("index.json").exists() {
        eprintln!("generating dataset at {data_dir} (size {image_size})");
        generate_synthetic_dataset(Path::new(data_dir), 200, 12, image_size, 4, 7).unwrap();
    }
    let index = load_dataset(Path::new(data_dir)).unwrap();

    let all_variants: Vec<(&str, Box<dyn Fn(&mut TrainConfig) + Sync>)> = vec![
        ("ss", Box::new(|_cfg: &mut TrainConfig| {})),
        ("target", Box::new(|cfg: &mut TrainConfig| {
            cfg.exclusion_policy = protoseg::pseudoclass::ExclusionPolicy::TargetOnly
        })),
        ("baseline", Box::new(|cfg: &mut TrainConfig| cfg.alpha = 0.0)),
        ("grid", Box::new(|cfg: &mut TrainConfig| {
            cfg.superpixel = SuperpixelAlgo::Grid { rows: 10, cols: 10 }
        })),
        ("uniform", Box::new(|cfg: &mut TrainConfig| {
            cfg.sampling_strategy = SamplingStrategy::UniformAll
        })),
    ];
    let variants: Vec<(&str, Box<dyn Fn(&mut TrainConfig) + Sync>)> = all_variants
        .into_iter()
        .filter(|(name, _)| chosen.iter().any(|c| c == name))
        .collect();

    struct Cell {
        variant: usize,
        fold: usize,
        seed: u64,
    }
    let mut cells = Vec::new();
    for (vi, (name, _)) in variants.iter().enumerate() {
        for &fold in &folds {
            // Ablation variants (grid/uniform) only on fold 0.
            if *name == "grid" || *name == "uniform" {
                if fold != folds[0] {
                    continue;
                }
            }
            for &seed in &seeds {
                cells.push(Cell { variant: vi, fold, seed });
            }
        }
    }

    let t0 = std::time::Instant::now();
    let results = exec::map_collect(cells.len(), |i| {
        let cell = &cells[i];
        let mut cfg = TrainConfig { episodes, ..TrainConfig::default() };
        (variants[cell.variant].1)(&mut cfg);
        cfg.seed = cell.seed;
        let fold_cfg = FoldConfig::builtin(&index.classes, cell.fold).unwrap();
        let out = train(&index, &fold_cfg, &cfg).unwrap();
        let (report, records) =
            evaluate_with_records(&out.params, &index, &fold_cfg, 1, 1000, 9000).unwrap();
        let multi = mean_iou_from_records(&records, 2).unwrap_or(f64::NAN);
        (variants[cell.variant].0, cell.fold, cell.seed, report.mean_iou, multi)
    });
    eprintln!("total {:.1}s", t0.elapsed().as_secs_f64());

    println!("variant,fold,seed,mean_iou,multi2_iou");
    for (name, fold, seed, miou, multi) in &results {
        println!("{name},{fold},{seed},{miou:.4},{multi:.4}");
    }

    println!("\n== per-fold medians (criterion view) ==");
    for &fold in &folds {
        let get = |name: &str, multi: bool| -> Vec<f64> {
            results
                .iter()
                .filter(|(n, f, ..)| *n == name && *f == fold)
                .map(|&(_, _, _, m, m2)| if multi { m2 } else { m })
                .collect()
        };
        let ss_multi = get("ss", true);
        let bl_multi = get("baseline", true);
        let ss_all = get("ss", false);
        let bl_all = get("baseline", false);
        if ss_multi.is_empty() || bl_multi.is_empty() {
            continue;
        }
        println!(
            "fold {fold}: multi2 ss={:.4} bl={:.4} ({}), overall ss={:.4} bl={:.4} ({})",
            median(ss_multi.clone()),
            median(bl_multi.clone()),
            if median(ss_multi) >= median(bl_multi) { "PASS" } else { "FAIL" },
            median(ss_all.clone()),
            median(bl_all.clone()),
            if median(ss_all) >= median(bl_all) { "pass" } else { "fail" },
        );
    }
    let fold0 = folds[0];
    let m = |name: &str| -> Vec<f64> {
        results
            .iter()
            .filter(|(n, f, ..)| *n == name && *f == fold0)
            .map(|&(_, _, _, miou, _)| miou)
            .collect()
    };
    let (ss, grid, uniform) = (m("ss"), m("grid"), m("uniform"));
    if !grid.is_empty() {
        println!(
            "fold {fold0} ablations: felz={:.4} grid={:.4} ({}), top5={:.4} uniform={:.4} ({})",
            median(ss.clone()),
            median(grid.clone()),
            if median(grid) < median(ss.clone()) { "PASS grid<felz" } else { "FAIL" },
            median(ss.clone()),
            median(uniform.clone()),
            if median(ss) >= median(uniform) { "PASS top5>=uniform" } else { "FAIL" },
        );
    }
}
