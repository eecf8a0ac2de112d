//! Episodic training with the dual-pathway objective: the supervised query
//! loss plus an alpha-weighted self-supervised loss on a pseudo support-query
//! pair, optimized by SGD with momentum over manually derived reverse-mode
//! gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_episode, DatasetIndex, Episode, FoldConfig, Split};
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{BinaryMask, FeatureMap, Image, ProbMask};
use crate::model::{
    cosine, extract_features, gather_patch, make_prototypes, merge_prototypes,
    softplus_derivative_from_output, vec_norm, ModelParams, Prototype, COSINE_EPS,
};
use crate::pseudoclass::{generate_pseudo_episode, ExclusionPolicy, SamplingStrategy};
use crate::superpixel::{FelzenszwalbParams, SuperpixelAlgo};

/// Stream ids of the per-purpose RNGs split off the master seed. Keeping the
/// episode stream separate from the pseudo-class stream means runs that only
/// differ in the self-supervision settings see identical episode sequences.
const EPISODE_STREAM: u64 = 0;
const PSEUDO_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the self-supervised loss term.
    pub alpha: f64,
    pub shots_k: usize,
    pub episodes: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Probability clamp applied before the logarithms.
    pub clamp_eps: f64,
    pub seed: u64,
    pub exclusion_policy: ExclusionPolicy,
    pub sampling_strategy: SamplingStrategy,
    pub superpixel: SuperpixelAlgo,
    /// Minimum surviving pseudo-mask area in pixels.
    pub min_area: usize,
    /// Master switch for the self-supervised pathway.
    pub selfsup_enabled: bool,
    pub patch_radius: usize,
    pub embed_dim: usize,
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.5,
            shots_k: 1,
            episodes: 2000,
            learning_rate: 0.05,
            momentum: 0.9,
            clamp_eps: 1e-7,
            seed: 0,
            exclusion_policy: ExclusionPolicy::AllBaseClasses,
            sampling_strategy: SamplingStrategy::TopK(5),
            superpixel: SuperpixelAlgo::Felzenszwalb(FelzenszwalbParams::default()),
            min_area: 16,
            selfsup_enabled: true,
            patch_radius: 2,
            embed_dim: 16,
            temperature: 20.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "clamp_eps must lie in (0, 0.5), got {}",
                self.clamp_eps
            )));
        }
        if self.shots_k == 0 {
            return Err(Error::InvalidParameter("shots_k must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(Error::InvalidParameter("learning_rate must be > 0 and momentum in [0, 1)".into()));
        }
        self.sampling_strategy.validate()?;
        Ok(())
    }

    /// Whether the pseudo-class pathway contributes to this run at all.
    pub fn selfsup_active(&self) -> bool {
        self.selfsup_enabled && self.alpha > 0.0
    }
}

/// Gradient (or momentum-velocity) buffers mirroring the trainable fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            weights: vec![0.0; params.weights.len()],
            bias: vec![0.0; params.bias.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.bias)
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

/// Per-episode loss bookkeeping, one JSON line in the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub episode: usize,
    pub sup_loss: f64,
    pub selfsup_loss: Option<f64>,
    pub total_loss: f64,
    pub pseudo_generated: bool,
}

/// Spatially averaged binary cross-entropy with probability clamping.
pub fn cross_entropy_loss(gt: &BinaryMask, pred: &ProbMask, clamp_eps: f64) -> Result<f64> {
    if gt.width() != pred.width() || gt.height() != pred.height() {
        return Err(Error::dims(
            "cross_entropy_loss",
            (gt.width(), gt.height()),
            (pred.width(), pred.height()),
        ));
    }
    let mut sum = 0.0;
    for (&m, &p) in gt.bits().iter().zip(pred.probs()) {
        let p = p.clamp(clamp_eps, 1.0 - clamp_eps);
        sum += if m == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(-sum / (gt.width() * gt.height()) as f64)
}

/// Weighted sum of the two pathway losses; absent self-supervision leaves
/// the supervised loss unchanged.
pub fn total_loss(sup: f64, selfsup: Option<f64>, alpha: f64) -> f64 {
    match selfsup {
        Some(s) => sup + alpha * s,
        None => sup,
    }
}

/// One comparison pathway with the intermediates backward needs.
struct ComparisonTrace {
    fg: Prototype,
    bg: Prototype,
    fg_norm: f64,
    bg_norm: f64,
    pixel_norms: Vec<f64>,
    cos_fg: Vec<f64>,
    cos_bg: Vec<f64>,
    /// Unclamped two-way softmax output per pixel.
    probs: Vec<f64>,
    gt: BinaryMask,
    loss: f64,
}

fn forward_comparison(
    feats: &FeatureMap,
    fg: Prototype,
    bg: Prototype,
    temperature: f64,
    gt: &BinaryMask,
    clamp_eps: f64,
) -> Result<ComparisonTrace> {
    let n = feats.width() * feats.height();
    if gt.width() != feats.width() || gt.height() != feats.height() {
        return Err(Error::dims(
            "forward_comparison",
            (feats.width(), feats.height()),
            (gt.width(), gt.height()),
        ));
    }
    let fg_norm = fg.norm();
    let bg_norm = bg.norm();
    if fg_norm == 0.0 || bg_norm == 0.0 {
        return Err(Error::InvalidParameter("zero-norm prototype".into()));
    }
    let mut pixel_norms = Vec::with_capacity(n);
    let mut cos_fg = Vec::with_capacity(n);
    let mut cos_bg = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n);
    let mut loss_sum = 0.0;
    for u in 0..n {
        let pix = feats.pixel(u);
        let norm = vec_norm(pix);
        let cf = cosine(pix, &fg.0, norm, fg_norm);
        let cb = cosine(pix, &bg.0, norm, bg_norm);
        let z = temperature * (cf - cb);
        let p = 1.0 / (1.0 + (-z).exp());
        let clamped = p.clamp(clamp_eps, 1.0 - clamp_eps);
        loss_sum += if gt.bits()[u] == 1 { clamped.ln() } else { (1.0 - clamped).ln() };
        pixel_norms.push(norm);
        cos_fg.push(cf);
        cos_bg.push(cb);
        probs.push(p);
    }
    Ok(ComparisonTrace {
        fg,
        bg,
        fg_norm,
        bg_norm,
        pixel_norms,
        cos_fg,
        cos_bg,
        probs,
        gt: gt.clone(),
        loss: -loss_sum / n as f64,
    })
}

/// Reverse pass of one comparison pathway. Accumulates feature gradients in
/// place and returns the prototype gradients; `weight` is the loss weight of
/// this pathway in the total objective.
fn backward_comparison(
    trace: &ComparisonTrace,
    feats: &FeatureMap,
    temperature: f64,
    clamp_eps: f64,
    weight: f64,
    d_feats: &mut [f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = trace.probs.len();
    let d = feats.depth();
    let mut d_fg = vec![0.0; d];
    let mut d_bg = vec![0.0; d];
    let inv_n = 1.0 / n as f64;
    for u in 0..n {
        let p = trace.probs[u];
        // A probability in the clamped region contributes zero gradient.
        if p < clamp_eps || p > 1.0 - clamp_eps {
            continue;
        }
        let m = trace.gt.bits()[u] as f64;
        // d(loss)/dz with z = T (c_fg - c_bg): (p - m) / n, times the weight.
        let dz = weight * (p - m) * inv_n;
        let a = temperature * dz; // d(loss)/d cos_fg
        let b = -temperature * dz; // d(loss)/d cos_bg
        let pix = feats.pixel(u);
        let norm = trace.pixel_norms[u];
        let row = &mut d_feats[u * d..(u + 1) * d];

        // cos(f, g) = f.g / (|f||g| + eps):
        //   d/df = g/D - (c |g| / (D |f|)) f
        //   d/dg = f/D - (c |f| / (D |g|)) g
        let df = norm * trace.fg_norm + COSINE_EPS;
        let k1 = a / df;
        let k2 = a * trace.cos_fg[u] * trace.fg_norm / (df * norm);
        let k4 = a * trace.cos_fg[u] * norm / (df * trace.fg_norm);
        let db_ = norm * trace.bg_norm + COSINE_EPS;
        let k5 = b / db_;
        let k6 = b * trace.cos_bg[u] * trace.bg_norm / (db_ * norm);
        let k8 = b * trace.cos_bg[u] * norm / (db_ * trace.bg_norm);
        for j in 0..d {
            row[j] += k1 * trace.fg.0[j] - k2 * pix[j] + k5 * trace.bg.0[j] - k6 * pix[j];
            d_fg[j] += k1 * pix[j] - k4 * trace.fg.0[j];
            d_bg[j] += k5 * pix[j] - k8 * trace.bg.0[j];
        }
    }
    (d_fg, d_bg)
}

/// Backward of masked average pooling: spread the prototype gradient evenly
/// over the masked pixels.
fn masked_mean_backward(d_proto: &[f64], mask: &BinaryMask, shots: usize, d_feats: &mut [f64]) {
    let d = d_proto.len();
    let scale = 1.0 / (shots as f64 * mask.count_ones() as f64);
    for (u, &bit) in mask.bits().iter().enumerate() {
        if bit == 1 {
            let row = &mut d_feats[u * d..(u + 1) * d];
            for j in 0..d {
                row[j] += d_proto[j] * scale;
            }
        }
    }
}

/// Backward of the extractor: chain feature gradients through the softplus
/// and the patch-linear map into parameter gradients. Rows produce partial
/// sums that are folded in row order, keeping the result thread-count
/// independent.
fn extract_backward(
    img: &Image,
    params: &ModelParams,
    feats: &FeatureMap,
    d_feats: &[f64],
    grads: &mut Gradients,
) {
    let (w, h, d) = (img.width(), img.height(), params.embed_dim);
    let patch_len = params.patch_len();
    let partials = exec::map_collect(h, |y| {
        let mut dw = vec![0.0; d * patch_len];
        let mut dbias = vec![0.0; d];
        let mut patch = vec![0.0; patch_len];
        for x in 0..w {
            let u = y * w + x;
            gather_patch(img, x, y, params.patch_radius, &mut patch);
            let f_row = feats.pixel(u);
            let g_row = &d_feats[u * d..(u + 1) * d];
            for j in 0..d {
                let coeff = g_row[j] * softplus_derivative_from_output(f_row[j]);
                if coeff == 0.0 {
                    continue;
                }
                dbias[j] += coeff;
                let wrow = &mut dw[j * patch_len..(j + 1) * patch_len];
                for (dst, &x_val) in wrow.iter_mut().zip(&patch) {
                    *dst += coeff * x_val;
                }
            }
        }
        (dw, dbias)
    });
    for (dw, dbias) in partials {
        for (dst, src) in grads.weights.iter_mut().zip(&dw) {
            *dst += src;
        }
        for (dst, src) in grads.bias.iter_mut().zip(&dbias) {
            *dst += src;
        }
    }
}

/// A completed forward pass of one episode, with the pseudo pair fixed.
pub struct EpisodeTrace<'a> {
    params: &'a ModelParams,
    episode: &'a Episode,
    pseudo_mask: Option<&'a BinaryMask>,
    clamp_eps: f64,
    support_feats: Vec<FeatureMap>,
    query_feats: FeatureMap,
    sup: ComparisonTrace,
    pseudo: Option<ComparisonTrace>,
    pub sup_loss: f64,
    pub selfsup_loss: Option<f64>,
}

impl EpisodeTrace<'_> {
    pub fn total_loss(&self, alpha: f64) -> f64 {
        total_loss(self.sup_loss, self.selfsup_loss, alpha)
    }
}

/// Runs both pathways forward. `query_feats` may be passed in when the
/// caller has already extracted them (they only depend on the query image
/// and the parameters); `pseudo_mask` is treated as a constant of the
/// iteration.
pub fn forward_episode<'a>(
    params: &'a ModelParams,
    episode: &'a Episode,
    query_feats: Option<FeatureMap>,
    pseudo_mask: Option<&'a BinaryMask>,
    clamp_eps: f64,
) -> Result<EpisodeTrace<'a>> {
    let mut support_feats = Vec::with_capacity(episode.support.len());
    let mut fg_shots = Vec::with_capacity(episode.support.len());
    let mut bg_shots = Vec::with_capacity(episode.support.len());
    for (img, mask) in &episode.support {
        let feats = extract_features(img, params)?;
        let (fg, bg) = make_prototypes(&feats, mask)?;
        fg_shots.push(fg);
        bg_shots.push(bg);
        support_feats.push(feats);
    }
    let fg = merge_prototypes(&fg_shots)?;
    let bg = merge_prototypes(&bg_shots)?;
    let query_feats = match query_feats {
        Some(f) => f,
        None => extract_features(&episode.query.0, params)?,
    };
    let sup = forward_comparison(
        &query_feats,
        fg,
        bg,
        params.temperature,
        &episode.query.1,
        clamp_eps,
    )?;
    let pseudo = match pseudo_mask {
        Some(mask) => {
            let (pfg, pbg) = make_prototypes(&query_feats, mask)?;
            Some(forward_comparison(
                &query_feats,
                pfg,
                pbg,
                params.temperature,
                mask,
                clamp_eps,
            )?)
        }
        None => None,
    };
    let sup_loss = sup.loss;
    let selfsup_loss = pseudo.as_ref().map(|t| t.loss);
    Ok(EpisodeTrace {
        params,
        episode,
        pseudo_mask,
        clamp_eps,
        support_feats,
        query_feats,
        sup,
        pseudo,
        sup_loss,
        selfsup_loss,
    })
}

/// Exact reverse-mode gradients of the total loss through both pathways.
/// The parameters are shared, so the query feature map collects gradient
/// from the supervised comparison and, when present, from the pseudo
/// pathway's prototypes and comparison before a single extractor backward.
pub fn backward(trace: &EpisodeTrace<'_>, alpha: f64) -> Result<Gradients> {
    let params = trace.params;
    let d = params.embed_dim;
    let mut grads = Gradients::zeros_like(params);
    let n_query = trace.query_feats.width() * trace.query_feats.height();
    let mut d_query = vec![0.0; n_query * d];

    let (d_fg, d_bg) = backward_comparison(
        &trace.sup,
        &trace.query_feats,
        params.temperature,
        trace.clamp_eps,
        1.0,
        &mut d_query,
    );

    // Merged prototype -> per-shot prototypes -> support features.
    let shots = trace.episode.support.len();
    for (feats, (img, mask)) in trace.support_feats.iter().zip(&trace.episode.support) {
        let n = feats.width() * feats.height();
        let mut d_sup_feats = vec![0.0; n * d];
        masked_mean_backward(&d_fg, mask, shots, &mut d_sup_feats);
        masked_mean_backward(&d_bg, &mask.complement(), shots, &mut d_sup_feats);
        extract_backward(img, params, feats, &d_sup_feats, &mut grads);
    }

    if alpha > 0.0 {
        if let (Some(ptrace), Some(pmask)) = (&trace.pseudo, trace.pseudo_mask) {
            let (d_pfg, d_pbg) = backward_comparison(
                ptrace,
                &trace.query_feats,
                params.temperature,
                trace.clamp_eps,
                alpha,
                &mut d_query,
            );
            masked_mean_backward(&d_pfg, pmask, 1, &mut d_query);
            masked_mean_backward(&d_pbg, &pmask.complement(), 1, &mut d_query);
        }
    }

    extract_backward(&trace.episode.query.0, params, &trace.query_feats, &d_query, &mut grads);
    Ok(grads)
}

/// SGD with momentum: `v <- momentum v + g`, `p <- p - lr v`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &Gradients,
    lr: f64,
    momentum: f64,
    velocity: &mut Gradients,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient(format!(
            "aborting update; max |grad| = {}",
            grads.max_abs()
        )));
    }
    for ((v, g), p) in velocity
        .weights
        .iter_mut()
        .zip(&grads.weights)
        .chain(velocity.bias.iter_mut().zip(&grads.bias))
        .zip(params.weights.iter_mut().chain(params.bias.iter_mut()))
    {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// One optimizer step over one episode: supervised pathway, optional pseudo
/// pathway on the query, combined backward, SGD update.
pub fn train_episode(
    params: &mut ModelParams,
    velocity: &mut Gradients,
    episode: &Episode,
    fold: &FoldConfig,
    cfg: &TrainConfig,
    pseudo_rng: &mut ChaCha8Rng,
) -> Result<LossRecord> {
    let query_feats = extract_features(&episode.query.0, params)?;
    let pseudo = if cfg.selfsup_active() {
        generate_pseudo_episode(
            &episode.query.0,
            &episode.query_labelmap,
            episode.target_class,
            &query_feats,
            &cfg.superpixel,
            &fold.base_classes,
            &fold.novel_classes,
            cfg.exclusion_policy,
            cfg.sampling_strategy,
            cfg.min_area,
            pseudo_rng,
        )?
    } else {
        None
    };
    let pseudo_mask = pseudo.as_ref().map(|p| &p.mask);
    let trace = forward_episode(params, episode, Some(query_feats), pseudo_mask, cfg.clamp_eps)?;
    let grads = backward(&trace, cfg.alpha)?;
    let record = LossRecord {
        episode: 0,
        sup_loss: trace.sup_loss,
        selfsup_loss: trace.selfsup_loss,
        total_loss: trace.total_loss(cfg.alpha),
        pseudo_generated: trace.selfsup_loss.is_some(),
    };
    sgd_step(params, &grads, cfg.learning_rate, cfg.momentum, velocity)?;
    Ok(record)
}

/// Result of a training run.
pub struct TrainOutput {
    pub params: ModelParams,
    pub records: Vec<LossRecord>,
    /// Episodes skipped because of a degenerate support, with the reason.
    pub skipped: Vec<(usize, String)>,
}

/// Full episodic training loop over the fold's base classes. Deterministic
/// in `(dataset, fold, cfg, cfg.seed)`.
pub fn train(index: &DatasetIndex, fold: &FoldConfig, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut params =
        ModelParams::init(cfg.patch_radius, cfg.embed_dim, cfg.temperature, cfg.seed)?;
    let mut velocity = Gradients::zeros_like(&params);
    let mut episode_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    episode_rng.set_stream(EPISODE_STREAM);
    let mut pseudo_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    pseudo_rng.set_stream(PSEUDO_STREAM);

    let mut records = Vec::with_capacity(cfg.episodes);
    let mut skipped = Vec::new();
    for ep in 0..cfg.episodes {
        let episode = sample_episode(index, fold, Split::Base, cfg.shots_k, &mut episode_rng)?;
        match train_episode(&mut params, &mut velocity, &episode, fold, cfg, &mut pseudo_rng) {
            Ok(mut record) => {
                record.episode = ep;
                records.push(record);
            }
            Err(Error::DegenerateSupport(reason)) => skipped.push((ep, reason)),
            Err(other) => return Err(other),
        }
    }
    Ok(TrainOutput { params, records, skipped })
}
