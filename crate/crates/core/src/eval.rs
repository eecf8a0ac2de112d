//! Metrics and analyses: IoU with per-class accumulation, fold meanIoU, the
//! meanIoU-by-class-count breakdown, and embedding dumps for external
//! visualization.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{count_classes, sample_episode, DatasetIndex, Episode, FoldConfig, Split};
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{masked_mean, BinaryMask, ProbMask};
use crate::model::{extract_features, predict, ModelParams};

/// Anything that can answer a query episode with a probability mask.
pub trait QueryPredictor: Sync {
    fn predict_episode(&self, episode: &Episode) -> Result<ProbMask>;
}

impl QueryPredictor for ModelParams {
    fn predict_episode(&self, episode: &Episode) -> Result<ProbMask> {
        predict(&episode.support, &episode.query.0, self)
    }
}

/// Threshold a probability mask; ties resolve to background (strict `>`).
pub fn binarize(pred: &ProbMask, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let bits = pred.probs().iter().map(|&p| u8::from(p > threshold)).collect();
    BinaryMask::new(pred.width(), pred.height(), bits)
}

/// Intersection over union; defined as 1.0 when both masks are empty.
pub fn iou(gt: &BinaryMask, pred: &BinaryMask) -> Result<f64> {
    let i = gt.intersection_count(pred)?;
    let u = gt.union_count(pred)?;
    Ok(if u == 0 { 1.0 } else { i as f64 / u as f64 })
}

/// Raw per-episode counts, the input to every aggregate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub target_class: u32,
    pub intersection: u64,
    pub union: u64,
    /// Distinct ground-truth classes in the query image.
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub intersection: u64,
    pub union: u64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub episodes: usize,
    pub mean_iou: f64,
}

/// Echo of the evaluation addressing, embedded in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfigEcho {
    pub shots: usize,
    pub episodes: usize,
    pub seed: u64,
    pub fold: FoldConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: BTreeMap<u32, ClassStats>,
    /// Unweighted mean of per-class IoU over classes with at least one
    /// evaluated episode.
    pub mean_iou: f64,
    pub by_num_classes: BTreeMap<usize, BucketStats>,
    pub episode_count: usize,
    pub config: EvalConfigEcho,
}

/// Aggregates episode records: per-class intersection/union sums first,
/// division last.
pub fn report_from_records(records: &[EpisodeRecord], config: EvalConfigEcho) -> MetricsReport {
    let mut class_sums: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    let mut bucket_class_sums: BTreeMap<usize, BTreeMap<u32, (u64, u64)>> = BTreeMap::new();
    let mut bucket_episodes: BTreeMap<usize, usize> = BTreeMap::new();
    for r in records {
        let sums = class_sums.entry(r.target_class).or_insert((0, 0));
        sums.0 += r.intersection;
        sums.1 += r.union;
        let bucket = bucket_class_sums.entry(r.num_classes).or_default();
        let bs = bucket.entry(r.target_class).or_insert((0, 0));
        bs.0 += r.intersection;
        bs.1 += r.union;
        *bucket_episodes.entry(r.num_classes).or_insert(0) += 1;
    }
    let ratio = |(i, u): (u64, u64)| if u == 0 { 1.0 } else { i as f64 / u as f64 };
    let per_class: BTreeMap<u32, ClassStats> = class_sums
        .iter()
        .map(|(&c, &(i, u))| (c, ClassStats { intersection: i, union: u, iou: ratio((i, u)) }))
        .collect();
    let mean_iou = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().map(|s| s.iou).sum::<f64>() / per_class.len() as f64
    };
    let by_num_classes: BTreeMap<usize, BucketStats> = bucket_class_sums
        .iter()
        .map(|(&bucket, classes)| {
            let mean = classes.values().map(|&s| ratio(s)).sum::<f64>() / classes.len() as f64;
            (bucket, BucketStats { episodes: bucket_episodes[&bucket], mean_iou: mean })
        })
        .collect();
    MetricsReport { per_class, mean_iou, by_num_classes, episode_count: records.len(), config }
}

/// meanIoU over the records whose query contains at least `min_classes`
/// classes; `None` when no record qualifies.
pub fn mean_iou_from_records(records: &[EpisodeRecord], min_classes: usize) -> Option<f64> {
    let mut class_sums: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.num_classes >= min_classes) {
        let sums = class_sums.entry(r.target_class).or_insert((0, 0));
        sums.0 += r.intersection;
        sums.1 += r.union;
    }
    if class_sums.is_empty() {
        return None;
    }
    let sum: f64 = class_sums
        .values()
        .map(|&(i, u)| if u == 0 { 1.0 } else { i as f64 / u as f64 })
        .sum();
    Some(sum / class_sums.len() as f64)
}

/// Evaluates `n_episodes` seeded novel-split episodes. Episodes are sampled
/// sequentially and evaluated in parallel; records come back in episode
/// order, so results do not depend on the thread count.
pub fn evaluate_with_records<P: QueryPredictor>(
    predictor: &P,
    index: &DatasetIndex,
    fold: &FoldConfig,
    k: usize,
    n_episodes: usize,
    seed: u64,
) -> Result<(MetricsReport, Vec<EpisodeRecord>)> {
    fold.validate(Some(&index.classes))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let episodes: Vec<Episode> = (0..n_episodes)
        .map(|_| sample_episode(index, fold, Split::Novel, k, &mut rng))
        .collect::<Result<_>>()?;
    let outcomes = exec::map_collect(episodes.len(), |i| -> Result<EpisodeRecord> {
        let ep = &episodes[i];
        let pred = predictor.predict_episode(ep)?;
        let bin = binarize(&pred, 0.5)?;
        Ok(EpisodeRecord {
            target_class: ep.target_class,
            intersection: ep.query.1.intersection_count(&bin)? as u64,
            union: ep.query.1.union_count(&bin)? as u64,
            num_classes: count_classes(&ep.query_labelmap),
        })
    });
    let records: Vec<EpisodeRecord> = outcomes.into_iter().collect::<Result<_>>()?;
    let config = EvalConfigEcho { shots: k, episodes: n_episodes, seed, fold: fold.clone() };
    Ok((report_from_records(&records, config), records))
}

pub fn evaluate(
    params: &ModelParams,
    index: &DatasetIndex,
    fold: &FoldConfig,
    k: usize,
    n_episodes: usize,
    seed: u64,
) -> Result<MetricsReport> {
    Ok(evaluate_with_records(params, index, fold, k, n_episodes, seed)?.0)
}

/// One row per novel episode: target class id plus the masked mean of the
/// query features over the ground-truth mask, as CSV for external t-SNE
/// tooling. Returns the number of rows written.
pub fn dump_embeddings(
    params: &ModelParams,
    index: &DatasetIndex,
    fold: &FoldConfig,
    n_episodes: usize,
    seed: u64,
    out: &mut impl Write,
) -> Result<usize> {
    fold.validate(Some(&index.classes))?;
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let episodes: Vec<Episode> = (0..n_episodes)
        .map(|_| sample_episode(index, fold, Split::Novel, 1, &mut rng))
        .collect::<Result<_>>()?;
    let rows = exec::map_collect(episodes.len(), |i| -> Result<(u32, Vec<f64>)> {
        let ep = &episodes[i];
        let feats = extract_features(&ep.query.0, params)?;
        Ok((ep.target_class, masked_mean(&feats, &ep.query.1)?))
    });
    let mut header = String::from("class_id");
    for j in 0..params.embed_dim {
        header.push_str(&format!(",e{j}"));
    }
    writeln!(out, "{header}")?;
    let mut count = 0;
    for row in rows {
        let (class, embedding) = row?;
        let mut line = class.to_string();
        for v in embedding {
            line.push_str(&format!(",{v}"));
        }
        writeln!(out, "{line}")?;
        count += 1;
    }
    Ok(count)
}

/// Writes `report.json` plus the per-class and by-num-classes CSV tables.
pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    std::fs::write(dir.join("report.json"), json)?;

    let mut per_class = String::from("class_id,intersection,union,iou\n");
    for (class, stats) in &report.per_class {
        per_class.push_str(&format!(
            "{class},{},{},{}\n",
            stats.intersection, stats.union, stats.iou
        ));
    }
    std::fs::write(dir.join("per_class.csv"), per_class)?;

    let mut buckets = String::from("num_classes,episodes,mean_iou\n");
    for (bucket, stats) in &report.by_num_classes {
        buckets.push_str(&format!("{bucket},{},{}\n", stats.episodes, stats.mean_iou));
    }
    std::fs::write(dir.join("by_num_classes.csv"), buckets)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::data(path, e.to_string()))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::data(path, format!("invalid report: {e}")))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8], w: usize) -> BinaryMask {
        BinaryMask::new(w, bits.len() / w, bits.to_vec()).unwrap()
    }

    #[test]
    fn binarize_strict_inequality_and_idempotence() {
        let p = ProbMask::new(2, 1, vec![0.5, 0.5]).unwrap();
        assert!(binarize(&p, 0.5).unwrap().is_empty());
        let p = ProbMask::new(2, 1, vec![0.2, 0.9]).unwrap();
        let b = binarize(&p, 0.5).unwrap();
        assert_eq!(b.bits(), &[0, 1]);
        let again = binarize(
            &ProbMask::new(2, 1, b.bits().iter().map(|&v| v as f64).collect()).unwrap(),
            0.5,
        )
        .unwrap();
        assert_eq!(again, b);
        assert!(binarize(&p, 0.0).is_err());
    }

    #[test]
    fn iou_cases() {
        let a = mask(&[1, 1, 0, 0], 2);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let b = mask(&[0, 0, 1, 1], 2);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
        // Areas 4 and 4 with overlap 2: 2/6.
        let c = mask(&[1, 1, 1, 1, 0, 0, 0, 0], 4);
        let d = mask(&[0, 0, 1, 1, 1, 1, 0, 0], 4);
        assert!((iou(&c, &d).unwrap() - 2.0 / 6.0).abs() < 1e-12);
        // Both empty.
        let e = mask(&[0, 0], 2);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn iou_is_symmetric_and_bounded() {
        let a = mask(&[1, 0, 1, 0, 1, 0], 3);
        let b = mask(&[1, 1, 0, 0, 1, 1], 3);
        assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
        let v = iou(&a, &b).unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    fn echo() -> EvalConfigEcho {
        EvalConfigEcho {
            shots: 1,
            episodes: 4,
            seed: 0,
            fold: FoldConfig {
                base_classes: [1u32].into_iter().collect(),
                novel_classes: [2u32, 3].into_iter().collect(),
            },
        }
    }

    #[test]
    fn report_accumulates_before_dividing() {
        let records = vec![
            EpisodeRecord { target_class: 2, intersection: 3, union: 6, num_classes: 1 },
            EpisodeRecord { target_class: 2, intersection: 1, union: 2, num_classes: 2 },
            EpisodeRecord { target_class: 3, intersection: 0, union: 4, num_classes: 2 },
        ];
        let report = report_from_records(&records, echo());
        // Class 2 accumulates (4, 8) -> 0.5 rather than mean(0.5, 0.5).
        assert_eq!(report.per_class[&2].intersection, 4);
        assert_eq!(report.per_class[&2].union, 8);
        assert_eq!(report.per_class[&2].iou, 0.5);
        assert_eq!(report.per_class[&3].iou, 0.0);
        assert_eq!(report.mean_iou, 0.25);
        assert_eq!(report.episode_count, 3);
        // Buckets: 1 -> one episode of class 2 (0.5); 2 -> class 2 (0.5) and
        // class 3 (0.0) -> 0.25.
        assert_eq!(report.by_num_classes[&1].episodes, 1);
        assert_eq!(report.by_num_classes[&1].mean_iou, 0.5);
        assert_eq!(report.by_num_classes[&2].episodes, 2);
        assert_eq!(report.by_num_classes[&2].mean_iou, 0.25);
        let total: usize = report.by_num_classes.values().map(|b| b.episodes).sum();
        assert_eq!(total, report.episode_count);
    }

    #[test]
    fn multiclass_mean_filters_buckets() {
        let records = vec![
            EpisodeRecord { target_class: 2, intersection: 1, union: 1, num_classes: 1 },
            EpisodeRecord { target_class: 2, intersection: 1, union: 4, num_classes: 3 },
        ];
        assert_eq!(mean_iou_from_records(&records, 2), Some(0.25));
        assert_eq!(mean_iou_from_records(&records, 4), None);
        assert_eq!(mean_iou_from_records(&records, 0), Some(0.4));
    }

    #[test]
    fn report_round_trips_through_json() {
        let records = vec![
            EpisodeRecord { target_class: 2, intersection: 7, union: 13, num_classes: 2 },
            EpisodeRecord { target_class: 3, intersection: 1, union: 3, num_classes: 1 },
        ];
        let report = report_from_records(&records, echo());
        let dir = tempfile::tempdir().unwrap();
        write_report(&report, dir.path()).unwrap();
        let back = read_report(&dir.path().join("report.json")).unwrap();
        assert_eq!(report, back);
        let csv = std::fs::read_to_string(dir.path().join("per_class.csv")).unwrap();
        assert_eq!(csv.lines().count(), report.per_class.len() + 1);
    }
}
