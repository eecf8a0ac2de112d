//! Pseudo-class generation for self-supervision: superpixel candidates in the
//! query background, exclusion of annotated pixels, activation scoring, and
//! top-k sampling.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, FeatureMap, Image, LabelMap};
use crate::superpixel::{regions_to_masks, SuperpixelAlgo};

/// Which annotated pixels are removed from pseudo-mask candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExclusionPolicy {
    /// Remove only the episode's target class.
    TargetOnly,
    /// Remove every training (base) class.
    AllBaseClasses,
    /// Remove base classes and the held-out novel classes.
    AllBaseAndNovel,
}

/// How the pseudo-class is drawn from the scored candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingStrategy {
    /// Uniform choice among the k highest-scoring candidates.
    TopK(usize),
    /// Uniform choice among all candidates, ignoring scores.
    UniformAll,
}

impl SamplingStrategy {
    pub fn validate(&self) -> Result<()> {
        if let SamplingStrategy::TopK(0) = self {
            return Err(Error::InvalidParameter("top-k must be >= 1".into()));
        }
        Ok(())
    }
}

/// A refined pseudo-mask candidate with its activation score.
#[derive(Debug, Clone)]
pub struct ScoredCandidate {
    pub refined_mask: BinaryMask,
    pub score: f64,
}

/// The query image paired with its selected refined pseudo-mask; serves as
/// both pseudo-support and pseudo-query.
#[derive(Debug, Clone)]
pub struct PseudoEpisode {
    pub image: Image,
    pub mask: BinaryMask,
}

/// Pixels that must be removed from pseudo-masks under `policy`.
///
/// Policy sets may not contain the background id 0, and base and novel sets
/// must be disjoint.
pub fn build_exclusion_mask(
    labels: &LabelMap,
    target_class: u32,
    base_classes: &BTreeSet<u32>,
    novel_classes: &BTreeSet<u32>,
    policy: ExclusionPolicy,
) -> Result<BinaryMask> {
    if target_class == 0 {
        return Err(Error::InvalidParameter("target class 0 is the background".into()));
    }
    if base_classes.contains(&0) || novel_classes.contains(&0) {
        return Err(Error::InvalidParameter(
            "policy class sets may not contain the background id 0".into(),
        ));
    }
    if !base_classes.is_disjoint(novel_classes) {
        return Err(Error::InvalidParameter("base and novel class sets overlap".into()));
    }
    let excluded = |label: u32| -> bool {
        if label == 0 {
            return false;
        }
        match policy {
            ExclusionPolicy::TargetOnly => label == target_class,
            ExclusionPolicy::AllBaseClasses => base_classes.contains(&label),
            ExclusionPolicy::AllBaseAndNovel => {
                base_classes.contains(&label) || novel_classes.contains(&label)
            }
        }
    };
    if policy == ExclusionPolicy::TargetOnly && labels.class_area(target_class) == 0 {
        return Err(Error::InvalidParameter(format!(
            "target class {target_class} is not present in the label map"
        )));
    }
    let bits = labels.labels().iter().map(|&l| u8::from(excluded(l))).collect();
    BinaryMask::new(labels.width(), labels.height(), bits)
}

/// Pseudo-mask refinement: `result = pseudo * (1 - exclusion)` element-wise.
pub fn refine_pseudo_mask(pseudo: &BinaryMask, exclusion: &BinaryMask) -> Result<BinaryMask> {
    pseudo.check_dims(exclusion, "refine_pseudo_mask")?;
    let bits = pseudo
        .bits()
        .iter()
        .zip(exclusion.bits())
        .map(|(&p, &e)| p * (1 - e))
        .collect();
    BinaryMask::new(pseudo.width(), pseudo.height(), bits)
}

/// Class activation score: the mean of `f` over the masked pixels and all
/// channels.
pub fn activation_score(f: &FeatureMap, m: &BinaryMask) -> Result<f64> {
    if f.width() != m.width() || f.height() != m.height() {
        return Err(Error::dims(
            "activation_score",
            (f.width(), f.height()),
            (m.width(), m.height()),
        ));
    }
    let count = m.count_ones();
    if count == 0 {
        return Err(Error::EmptyMask("activation score of an empty mask"));
    }
    let mut sum = 0.0;
    for (idx, &bit) in m.bits().iter().enumerate() {
        if bit == 1 {
            sum += f.pixel(idx).iter().sum::<f64>();
        }
    }
    Ok(sum / (f.depth() * count) as f64)
}

/// Index of the selected candidate. Top-k draws uniformly among the
/// `min(k, n)` highest-scoring candidates, breaking score ties by ascending
/// candidate index.
pub fn sample_pseudo_class(
    candidates: &[ScoredCandidate],
    strategy: SamplingStrategy,
    rng: &mut impl RngCore,
) -> Result<usize> {
    strategy.validate()?;
    if candidates.is_empty() {
        return Err(Error::EmptyMask("no pseudo-class candidates available"));
    }
    match strategy {
        SamplingStrategy::UniformAll => Ok(rng.random_range(0..candidates.len())),
        SamplingStrategy::TopK(k) => {
            let mut order: Vec<usize> = (0..candidates.len()).collect();
            order.sort_by(|&a, &b| {
                candidates[b]
                    .score
                    .total_cmp(&candidates[a].score)
                    .then(a.cmp(&b))
            });
            let pool = k.min(order.len());
            Ok(order[rng.random_range(0..pool)])
        }
    }
}

/// Full pseudo-class pipeline: segment the query, drop annotated pixels from
/// each region, filter tiny fragments, score, and sample. Returns `None`
/// when no candidate survives.
#[allow(clippy::too_many_arguments)]
pub fn generate_pseudo_episode(
    query: &Image,
    labels: &LabelMap,
    target_class: u32,
    features: &FeatureMap,
    algo: &SuperpixelAlgo,
    base_classes: &BTreeSet<u32>,
    novel_classes: &BTreeSet<u32>,
    policy: ExclusionPolicy,
    strategy: SamplingStrategy,
    min_area: usize,
    rng: &mut impl RngCore,
) -> Result<Option<PseudoEpisode>> {
    let sp_seed = rng.next_u64();
    let sp = algo.segment(query, sp_seed)?;
    let exclusion = build_exclusion_mask(labels, target_class, base_classes, novel_classes, policy)?;
    let mut candidates = Vec::new();
    for mask in regions_to_masks(&sp) {
        let refined = refine_pseudo_mask(&mask, &exclusion)?;
        if refined.count_ones() < min_area.max(1) {
            continue;
        }
        let score = activation_score(features, &refined)?;
        candidates.push(ScoredCandidate { refined_mask: refined, score });
    }
    if candidates.is_empty() {
        return Ok(None);
    }
    let chosen = sample_pseudo_class(&candidates, strategy, rng)?;
    let mask = candidates.swap_remove(chosen).refined_mask;
    debug_assert_eq!(
        mask.intersection_count(&labels.binarize(target_class)).unwrap(),
        0,
        "pseudo-mask must be disjoint from the target class"
    );
    Ok(Some(PseudoEpisode { image: query.clone(), mask }))
}

/// Default minimum candidate area: 16 pixels, scaled down with small
/// Felzenszwalb `min_size` settings.
pub fn default_min_area(min_size: usize) -> usize {
    (min_size / 4).min(16).max(1)
}
