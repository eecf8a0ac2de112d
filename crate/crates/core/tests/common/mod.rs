//! Shared test oracles: an independently coded graph-merge segmentation
//! reference, a dense-convolution smoother, and finite-difference gradient
//! checking over whole episodes.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use protoseg::data::Episode;
use protoseg::grid::{BinaryMask, Image, LabelMap};
use protoseg::model::ModelParams;
use protoseg::train::{backward, forward_episode};

/// Brute-force dense 2-D Gaussian convolution with edge replication
/// (kernel truncated at radius ceil(4 sigma), normalized).
pub fn dense_gaussian(img: &Image, sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let mut kernel = Vec::new();
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    let (w, h) = (img.width(), img.height());
    let mut out = vec![0.0; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        let k = kernel[(dx + radius) as usize] * kernel[(dy + radius) as usize]
                            / (norm * norm);
                        acc += k * img.get_clamped(x as isize + dx, y as isize + dy, c);
                    }
                }
                out[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    out
}

/// Step-by-step reference of the graph-merge segmentation, written against
/// explicit component member lists instead of union-find: smooth, build the
/// 8-connected edge list in scan order (E, S, SE, SW), stable-sort by
/// weight, merge by the adaptive predicate, absorb undersized components
/// over the sorted edges, relabel compactly in first-pixel scan order.
pub fn reference_felzenszwalb(img: &Image, scale: f64, sigma: f64, min_size: usize) -> Vec<u32> {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let smoothed: Vec<f64> = if sigma > 0.0 {
        dense_gaussian(img, sigma).iter().map(|v| v.clamp(0.0, 1.0)).collect()
    } else {
        img.data().to_vec()
    };
    let scaled: Vec<f64> = smoothed.iter().map(|v| v * 255.0).collect();

    let mut edges: Vec<(f64, usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            for (dx, dy) in [(1isize, 0isize), (0, 1), (1, 1), (-1, 1)] {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx >= 0 && (nx as usize) < w && ny >= 0 && (ny as usize) < h {
                    let a = y * w + x;
                    let b = ny as usize * w + nx as usize;
                    let mut sq = 0.0;
                    for c in 0..3 {
                        let d = scaled[a * 3 + c] - scaled[b * 3 + c];
                        sq += d * d;
                    }
                    edges.push((sq.sqrt(), a, b));
                }
            }
        }
    }
    edges.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut comp_of: Vec<usize> = (0..n).collect();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut internal: Vec<f64> = vec![0.0; n];

    let merge = |comp_of: &mut Vec<usize>,
                 members: &mut Vec<Vec<usize>>,
                 internal: &mut Vec<f64>,
                 keep: usize,
                 drop: usize,
                 weight: f64| {
        let moved = std::mem::take(&mut members[drop]);
        for &px in &moved {
            comp_of[px] = keep;
        }
        members[keep].extend(moved);
        internal[keep] = internal[keep].max(internal[drop]).max(weight);
    };

    for &(weight, a, b) in &edges {
        let (ca, cb) = (comp_of[a], comp_of[b]);
        if ca == cb {
            continue;
        }
        let ta = internal[ca] + scale / members[ca].len() as f64;
        let tb = internal[cb] + scale / members[cb].len() as f64;
        if weight <= ta.min(tb) {
            merge(&mut comp_of, &mut members, &mut internal, ca, cb, weight);
        }
    }
    for &(weight, a, b) in &edges {
        let (ca, cb) = (comp_of[a], comp_of[b]);
        if ca != cb && (members[ca].len() < min_size || members[cb].len() < min_size) {
            merge(&mut comp_of, &mut members, &mut internal, ca, cb, weight);
        }
    }

    let mut next = 0u32;
    let mut relabel: std::collections::HashMap<usize, u32> = std::collections::HashMap::new();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let id = *relabel.entry(comp_of[i]).or_insert_with(|| {
            let id = next;
            next += 1;
            id
        });
        out.push(id);
    }
    out
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    let data = (0..w * h * 3).map(|_| rng.random_range(0.0..=1.0)).collect();
    Image::new(w, h, data).unwrap()
}

/// Random mask with at least `margin` foreground and background pixels.
pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, margin: usize) -> BinaryMask {
    loop {
        let bits: Vec<u8> = (0..w * h).map(|_| u8::from(rng.random_bool(0.4))).collect();
        let ones: usize = bits.iter().map(|&b| b as usize).sum();
        if ones >= margin && ones <= w * h - margin {
            return BinaryMask::new(w, h, bits).unwrap();
        }
    }
}

/// Small randomized episode whose query label map is the binarized target.
pub fn random_episode(rng: &mut ChaCha8Rng, w: usize, h: usize, shots: usize) -> Episode {
    let query_mask = random_mask(rng, w, h, 2);
    let labels =
        LabelMap::new(w, h, query_mask.bits().iter().map(|&b| b as u32).collect()).unwrap();
    Episode {
        target_class: 1,
        support: (0..shots).map(|_| (random_image(rng, w, h), random_mask(rng, w, h, 2))).collect(),
        query: (random_image(rng, w, h), query_mask),
        query_labelmap: labels,
    }
}

/// Pseudo-mask disjoint from the query ground truth.
pub fn random_pseudo_mask(rng: &mut ChaCha8Rng, gt: &BinaryMask) -> BinaryMask {
    loop {
        let bits: Vec<u8> = gt
            .bits()
            .iter()
            .map(|&g| if g == 1 { 0 } else { u8::from(rng.random_bool(0.5)) })
            .collect();
        let ones: usize = bits.iter().map(|&b| b as usize).sum();
        if ones >= 2 && ones < gt.bits().len() - gt.count_ones() {
            return BinaryMask::new(gt.width(), gt.height(), bits).unwrap();
        }
    }
}

/// Max relative error between analytic and central finite-difference
/// gradients of the total episode loss, over every parameter.
pub fn fd_max_rel_error(
    params: &ModelParams,
    episode: &Episode,
    pseudo: Option<&BinaryMask>,
    alpha: f64,
    clamp_eps: f64,
) -> f64 {
    let trace = forward_episode(params, episode, None, pseudo, clamp_eps).unwrap();
    let analytic = backward(&trace, alpha).unwrap();
    let loss_at = |p: &ModelParams| {
        forward_episode(p, episode, None, pseudo, clamp_eps).unwrap().total_loss(alpha)
    };
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    let n_weights = params.weights.len();
    for i in 0..n_weights + params.bias.len() {
        let mut plus = params.clone();
        let mut minus = params.clone();
        if i < n_weights {
            plus.weights[i] += h;
            minus.weights[i] -= h;
        } else {
            plus.bias[i - n_weights] += h;
            minus.bias[i - n_weights] -= h;
        }
        let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        let a = if i < n_weights { analytic.weights[i] } else { analytic.bias[i - n_weights] };
        let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    max_rel
}
