//! The shared segmentation model: a trainable patch-linear feature extractor
//! with a softplus nonlinearity, masked-average-pool prototypes, and a
//! cosine-similarity comparison head over foreground and background
//! prototypes.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{masked_mean, BinaryMask, FeatureMap, Image, ProbMask};

/// Numerical floor added to the norm product in cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

/// Dedicated seed stream for parameter initialization (see `train` for the
/// episode and pseudo-class streams).
pub(crate) const INIT_STREAM: u64 = 2;

/// Trainable parameters: a linear map from the flattened
/// `(2r+1) x (2r+1) x 3` pixel patch to `embed_dim` channels, plus the
/// comparison temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub patch_radius: usize,
    pub embed_dim: usize,
    /// `embed_dim x patch_len`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Cosine logit scale; must be positive.
    pub temperature: f64,
}

impl ModelParams {
    pub fn patch_len(&self) -> usize {
        let side = 2 * self.patch_radius + 1;
        side * side * 3
    }

    /// Seeded uniform initialization in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`.
    pub fn init(patch_radius: usize, embed_dim: usize, temperature: f64, seed: u64) -> Result<Self> {
        if embed_dim == 0 {
            return Err(Error::InvalidParameter("embed_dim must be >= 1".into()));
        }
        if !(temperature > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
        let side = 2 * patch_radius + 1;
        let patch_len = side * side * 3;
        let bound = 1.0 / (patch_len as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let weights = (0..embed_dim * patch_len)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let bias = (0..embed_dim).map(|_| rng.random_range(-bound..=bound)).collect();
        Ok(ModelParams { patch_radius, embed_dim, weights, bias, temperature })
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.embed_dim * self.patch_len() {
            return Err(Error::InvalidParameter(format!(
                "weights length {} does not match {} x {}",
                self.weights.len(),
                self.embed_dim,
                self.patch_len()
            )));
        }
        if self.bias.len() != self.embed_dim {
            return Err(Error::InvalidParameter("bias length does not match embed_dim".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidParameter("temperature must be > 0".into()));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("model parameters must be finite".into()));
        }
        Ok(())
    }
}

/// Per-class feature vector from masked average pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype(pub Vec<f64>);

impl Prototype {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[inline]
pub(crate) fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// d/du softplus(u), recovered from the output value y = softplus(u):
/// sigma(u) = 1 - exp(-y).
#[inline]
pub(crate) fn softplus_derivative_from_output(y: f64) -> f64 {
    1.0 - (-y).exp()
}

/// Flattened `(2r+1) x (2r+1) x 3` patch around `(x, y)` with edge
/// replication, written into `buf`. Interior pixels copy whole contiguous
/// patch rows; border pixels fall back to per-sample clamping.
#[inline]
pub(crate) fn gather_patch(img: &Image, x: usize, y: usize, radius: usize, buf: &mut [f64]) {
    let (w, h) = (img.width(), img.height());
    let side = 2 * radius + 1;
    let row_len = side * 3;
    if x >= radius && x + radius < w && y >= radius && y + radius < h {
        let data = img.data();
        for (dy, chunk) in buf.chunks_exact_mut(row_len).enumerate() {
            let start = ((y + dy - radius) * w + x - radius) * 3;
            chunk.copy_from_slice(&data[start..start + row_len]);
        }
        return;
    }
    let mut i = 0;
    let r = radius as isize;
    for dy in -r..=r {
        for dx in -r..=r {
            for c in 0..3 {
                buf[i] = img.get_clamped(x as isize + dx, y as isize + dy, c);
                i += 1;
            }
        }
    }
    let _ = h;
}

/// Dot product with a fixed 4-lane accumulation order: deterministic and
/// wide enough for the compiler to vectorize.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let chunks = a.len() / 4;
    let mut acc = [0.0f64; 4];
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Feature vectors of one image row; the per-row kernel behind
/// [`extract_features`] (also driven directly by the benchmarks).
pub fn feature_row(img: &Image, p: &ModelParams, y: usize) -> Vec<f64> {
    let w = img.width();
    let d = p.embed_dim;
    let patch_len = p.patch_len();
    let mut patch = vec![0.0; patch_len];
    let mut row = vec![0.0; w * d];
    for x in 0..w {
        gather_patch(img, x, y, p.patch_radius, &mut patch);
        for j in 0..d {
            let wrow = &p.weights[j * patch_len..(j + 1) * patch_len];
            let pre = p.bias[j] + dot(wrow, &patch);
            row[x * d + j] = softplus(pre);
        }
    }
    row
}

/// Per-pixel features: linear map over the edge-replicated patch, then
/// softplus. Rows are computed independently, so the parallel and sequential
/// paths agree bitwise.
pub fn extract_features(img: &Image, p: &ModelParams) -> Result<FeatureMap> {
    p.validate()?;
    let (w, h, d) = (img.width(), img.height(), p.embed_dim);
    let rows = exec::map_collect(h, |y| feature_row(img, p, y));
    let mut values = Vec::with_capacity(w * h * d);
    for row in rows {
        values.extend_from_slice(&row);
    }
    FeatureMap::new(w, h, d, values)
}

/// Foreground and background prototypes of one support pair.
pub fn make_prototypes(f: &FeatureMap, m: &BinaryMask) -> Result<(Prototype, Prototype)> {
    let fg_count = m.count_ones();
    if fg_count == 0 {
        return Err(Error::DegenerateSupport("support mask has no foreground pixels".into()));
    }
    if fg_count == m.width() * m.height() {
        return Err(Error::DegenerateSupport("support mask has no background pixels".into()));
    }
    let fg = masked_mean(f, m)?;
    let bg = masked_mean(f, &m.complement())?;
    Ok((Prototype(fg), Prototype(bg)))
}

/// Channel-wise arithmetic mean of prototypes.
///
/// Per channel the addends are summed in sorted order, which makes the result
/// independent of the shot order; a channel whose values are all equal short
/// circuits to that value, so averaging k identical prototypes reproduces the
/// input bit for bit.
pub fn merge_prototypes(protos: &[Prototype]) -> Result<Prototype> {
    let first = protos
        .first()
        .ok_or_else(|| Error::InvalidParameter("cannot merge an empty prototype list".into()))?;
    let d = first.dim();
    if protos.iter().any(|p| p.dim() != d) {
        return Err(Error::InvalidParameter("prototype dimensions differ".into()));
    }
    let k = protos.len() as f64;
    let mut out = Vec::with_capacity(d);
    let mut chan = Vec::with_capacity(protos.len());
    for c in 0..d {
        chan.clear();
        chan.extend(protos.iter().map(|p| p.0[c]));
        chan.sort_by(f64::total_cmp);
        if chan[0] == chan[chan.len() - 1] {
            out.push(chan[0]);
        } else {
            out.push(chan.iter().sum::<f64>() / k);
        }
    }
    Ok(Prototype(out))
}

#[inline]
pub(crate) fn cosine(a: &[f64], b: &[f64], norm_a: f64, norm_b: f64) -> f64 {
    dot(a, b) / (norm_a * norm_b + COSINE_EPS)
}

#[inline]
pub(crate) fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Two-way softmax over temperature-scaled cosine similarities:
/// `p_fg = exp(T c_fg) / (exp(T c_fg) + exp(T c_bg))`, evaluated in the
/// shifted form `1 / (1 + exp(-(T c_fg - T c_bg)))`.
pub fn cosine_compare(
    f: &FeatureMap,
    fg: &Prototype,
    bg: &Prototype,
    temperature: f64,
) -> Result<ProbMask> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    if fg.dim() != f.depth() || bg.dim() != f.depth() {
        return Err(Error::InvalidParameter("prototype dimension does not match features".into()));
    }
    let (norm_fg, norm_bg) = (fg.norm(), bg.norm());
    if norm_fg == 0.0 || norm_bg == 0.0 {
        return Err(Error::InvalidParameter("zero-norm prototype".into()));
    }
    let n = f.width() * f.height();
    let row_len = f.width();
    let probs_rows = exec::map_collect(f.height(), |y| {
        let mut row = Vec::with_capacity(row_len);
        for x in 0..row_len {
            let pix = f.pixel(y * row_len + x);
            let norm_pix = vec_norm(pix);
            let c_fg = cosine(pix, &fg.0, norm_pix, norm_fg);
            let c_bg = cosine(pix, &bg.0, norm_pix, norm_bg);
            let z = temperature * (c_fg - c_bg);
            row.push(1.0 / (1.0 + (-z).exp()));
        }
        row
    });
    let mut probs = Vec::with_capacity(n);
    for row in probs_rows {
        probs.extend_from_slice(&row);
    }
    ProbMask::new(f.width(), f.height(), probs)
}

/// k-shot prediction: per-shot prototypes, averaged across shots, compared
/// against the query features.
pub fn predict(support: &[(Image, BinaryMask)], query: &Image, p: &ModelParams) -> Result<ProbMask> {
    if support.is_empty() {
        return Err(Error::DegenerateSupport("support set is empty".into()));
    }
    let mut fg_shots = Vec::with_capacity(support.len());
    let mut bg_shots = Vec::with_capacity(support.len());
    for (img, mask) in support {
        let feats = extract_features(img, p)?;
        let (fg, bg) = make_prototypes(&feats, mask)?;
        fg_shots.push(fg);
        bg_shots.push(bg);
    }
    let fg = merge_prototypes(&fg_shots)?;
    let bg = merge_prototypes(&bg_shots)?;
    let query_feats = extract_features(query, p)?;
    cosine_compare(&query_feats, &fg, &bg, p.temperature)
}

// Checkpoint format: one JSON header line (fixed field order), then the
// weight and bias payloads as little-endian f64.

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    patch_radius: usize,
    embed_dim: usize,
    temperature: f64,
    seed: u64,
    version: u32,
}

const CHECKPOINT_VERSION: u32 = 1;

/// A trained model plus the seed it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub seed: u64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.validate()?;
        let header = CheckpointHeader {
            patch_radius: self.params.patch_radius,
            embed_dim: self.params.embed_dim,
            temperature: self.params.temperature,
            seed: self.seed,
            version: CHECKPOINT_VERSION,
        };
        let mut file = std::fs::File::create(path)?;
        serde_json::to_writer(&mut file, &header)?;
        file.write_all(b"\n")?;
        let mut payload =
            Vec::with_capacity((self.params.weights.len() + self.params.bias.len()) * 8);
        for v in self.params.weights.iter().chain(&self.params.bias) {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&payload)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::data(path, e.to_string()))?;
        let mut reader = BufReader::new(file);
        let mut header_line = String::new();
        reader.read_line(&mut header_line)?;
        let header: CheckpointHeader = serde_json::from_str(header_line.trim_end())
            .map_err(|e| Error::data(path, format!("bad checkpoint header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::data(
                path,
                format!("unsupported checkpoint version {}", header.version),
            ));
        }
        let side = 2 * header.patch_radius + 1;
        let patch_len = side * side * 3;
        let n_weights = header.embed_dim * patch_len;
        let mut payload = Vec::new();
        reader.read_to_end(&mut payload)?;
        let expect = (n_weights + header.embed_dim) * 8;
        if payload.len() != expect {
            return Err(Error::data(
                path,
                format!("payload length {} does not match expected {expect}", payload.len()),
            ));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let weights: Vec<f64> = values.by_ref().take(n_weights).collect();
        let bias: Vec<f64> = values.collect();
        let params = ModelParams {
            patch_radius: header.patch_radius,
            embed_dim: header.embed_dim,
            weights,
            bias,
            temperature: header.temperature,
        };
        params.validate()?;
        Ok(Checkpoint { params, seed: header.seed })
    }
}
