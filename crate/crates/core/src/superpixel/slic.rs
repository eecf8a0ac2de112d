//! SLIC superpixels: localized k-means in combined CIELAB + position space.

use crate::error::{Error, Result};
use crate::grid::Image;

use super::{SlicParams, SuperpixelMap};

/// sRGB (D65) to CIELAB for one pixel with channels in [0, 1].
fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    fn linearize(c: f64) -> f64 {
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    let r = linearize(rgb[0]);
    let g = linearize(rgb[1]);
    let b = linearize(rgb[2]);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    // D65 white point.
    let (xn, yn, zn) = (0.95047, 1.0, 1.08883);
    fn f(t: f64) -> f64 {
        const DELTA: f64 = 6.0 / 29.0;
        if t > DELTA * DELTA * DELTA {
            t.cbrt()
        } else {
            t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
        }
    }
    let (fx, fy, fz) = (f(x / xn), f(y / yn), f(z / zn));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Clone, Copy)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

/// Regular grid positions with spacing `step`, offset half a step from the
/// border.
fn grid_positions(extent: usize, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut pos = step / 2.0;
    while pos < extent as f64 {
        out.push(pos);
        pos += step;
    }
    if out.is_empty() {
        out.push(extent as f64 / 2.0);
    }
    out
}

/// SLIC segmentation. `_rng_seed` is accepted for call-site uniformity with
/// the other segmenters; the algorithm itself is deterministic.
pub fn slic(img: &Image, p: &SlicParams, _rng_seed: u64) -> Result<SuperpixelMap> {
    p.validate()?;
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    if p.n_segments > n {
        return Err(Error::InvalidParameter(format!(
            "n_segments {} exceeds pixel count {}",
            p.n_segments, n
        )));
    }

    let lab: Vec<[f64; 3]> = (0..n).map(|i| rgb_to_lab(img.rgb(i % w, i / w))).collect();

    let spacing = ((w * h) as f64 / p.n_segments as f64).sqrt();

    // Initialize centers on the grid, then perturb each to the
    // lowest-gradient pixel in its 3x3 neighborhood.
    let gradient = |x: usize, y: usize| -> f64 {
        let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
        let at = |x: usize, y: usize| lab[y * w + x];
        let dx = {
            let a = at(clamp(x as isize + 1, w), y);
            let b = at(clamp(x as isize - 1, w), y);
            (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
        };
        let dy = {
            let a = at(x, clamp(y as isize + 1, h));
            let b = at(x, clamp(y as isize - 1, h));
            (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
        };
        dx + dy
    };

    let mut centers: Vec<Center> = Vec::new();
    for &cy in &grid_positions(h, spacing) {
        for &cx in &grid_positions(w, spacing) {
            if centers.len() == p.n_segments {
                break;
            }
            let (mut bx, mut by) = (
                (cx.round() as usize).min(w - 1),
                (cy.round() as usize).min(h - 1),
            );
            let mut best = gradient(bx, by);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let nx = bx as isize + dx;
                    let ny = by as isize + dy;
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        continue;
                    }
                    let g = gradient(nx as usize, ny as usize);
                    if g < best {
                        best = g;
                        bx = nx as usize;
                        by = ny as usize;
                    }
                }
            }
            centers.push(Center { lab: lab[by * w + bx], x: bx as f64, y: by as f64 });
        }
    }

    let compactness_sq = (p.compactness / spacing).powi(2);
    let mut labels: Vec<u32> = vec![u32::MAX; n];
    let mut dists: Vec<f64> = vec![f64::INFINITY; n];

    for _ in 0..p.max_iterations {
        dists.iter_mut().for_each(|d| *d = f64::INFINITY);
        labels.iter_mut().for_each(|l| *l = u32::MAX);

        // Assignment: each center searches a 2S x 2S window. Equidistant
        // pixels go to the later center, which splits the midline between
        // grid-aligned centers evenly instead of growing the first region.
        for (ci, c) in centers.iter().enumerate() {
            let x0 = ((c.x - spacing).floor().max(0.0)) as usize;
            let x1 = ((c.x + spacing).ceil() as usize).min(w - 1);
            let y0 = ((c.y - spacing).floor().max(0.0)) as usize;
            let y1 = ((c.y + spacing).ceil() as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let i = y * w + x;
                    let l = lab[i];
                    let dc = (l[0] - c.lab[0]).powi(2)
                        + (l[1] - c.lab[1]).powi(2)
                        + (l[2] - c.lab[2]).powi(2);
                    let dxy = (x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2);
                    let d = dc + dxy * compactness_sq;
                    if d <= dists[i] {
                        dists[i] = d;
                        labels[i] = ci as u32;
                    }
                }
            }
        }
        // Pixels outside every window fall back to a full scan.
        for i in 0..n {
            if labels[i] == u32::MAX {
                let (x, y) = (i % w, i / w);
                let l = lab[i];
                for (ci, c) in centers.iter().enumerate() {
                    let dc = (l[0] - c.lab[0]).powi(2)
                        + (l[1] - c.lab[1]).powi(2)
                        + (l[2] - c.lab[2]).powi(2);
                    let dxy = (x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2);
                    let d = dc + dxy * compactness_sq;
                    if d <= dists[i] {
                        dists[i] = d;
                        labels[i] = ci as u32;
                    }
                }
            }
        }

        // Center update; empty centers stay put.
        let mut sums = vec![[0.0f64; 5]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for i in 0..n {
            let ci = labels[i] as usize;
            let l = lab[i];
            sums[ci][0] += l[0];
            sums[ci][1] += l[1];
            sums[ci][2] += l[2];
            sums[ci][3] += (i % w) as f64;
            sums[ci][4] += (i / w) as f64;
            counts[ci] += 1;
        }
        let mut max_move = 0.0f64;
        for (ci, c) in centers.iter_mut().enumerate() {
            if counts[ci] == 0 {
                continue;
            }
            let k = counts[ci] as f64;
            let nx = sums[ci][3] / k;
            let ny = sums[ci][4] / k;
            let movement = ((nx - c.x).powi(2) + (ny - c.y).powi(2)).sqrt();
            max_move = max_move.max(movement);
            *c = Center {
                lab: [sums[ci][0] / k, sums[ci][1] / k, sums[ci][2] / k],
                x: nx,
                y: ny,
            };
        }
        if max_move < 0.5 {
            break;
        }
    }

    let assignment = enforce_connectivity(&labels, w, h, spacing);
    Ok(SuperpixelMap::from_assignment(w, h, &assignment))
}

/// Splits the cluster map into 4-connected components and reassigns orphaned
/// components (smaller than `spacing^2 / 4`) to the largest adjacent
/// component.
fn enforce_connectivity(labels: &[u32], w: usize, h: usize, spacing: f64) -> Vec<usize> {
    let n = w * h;
    let mut comp = vec![usize::MAX; n];
    let mut comp_sizes: Vec<usize> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_sizes.len();
        let cluster = labels[start];
        let mut size = 0;
        stack.push(start);
        comp[start] = id;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut try_push = |j: usize| {
                if comp[j] == usize::MAX && labels[j] == cluster {
                    comp[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                try_push(i - 1);
            }
            if x + 1 < w {
                try_push(i + 1);
            }
            if y > 0 {
                try_push(i - w);
            }
            if y + 1 < h {
                try_push(i + w);
            }
        }
        comp_sizes.push(size);
    }

    let min_size = spacing * spacing / 4.0;
    // Union-style redirect table: orphaned components point at their target.
    let mut redirect: Vec<usize> = (0..comp_sizes.len()).collect();
    let resolve = |redirect: &[usize], mut c: usize| {
        while redirect[c] != c {
            c = redirect[c];
        }
        c
    };

    // Visit components in first-pixel scan order.
    let mut first_pixel = vec![usize::MAX; comp_sizes.len()];
    for i in 0..n {
        if first_pixel[comp[i]] == usize::MAX {
            first_pixel[comp[i]] = i;
        }
    }
    let mut order: Vec<usize> = (0..comp_sizes.len()).collect();
    order.sort_by_key(|&c| first_pixel[c]);

    for &c in &order {
        if (comp_sizes[c] as f64) >= min_size {
            continue;
        }
        // Largest adjacent component (after earlier merges); ties go to the
        // smaller component index.
        let mut best: Option<(usize, usize)> = None;
        for i in 0..n {
            if resolve(&redirect, comp[i]) != c {
                continue;
            }
            let (x, y) = (i % w, i / w);
            let consider = |j: usize, best: &mut Option<(usize, usize)>| {
                let other = resolve(&redirect, comp[j]);
                if other != c {
                    let cand = (comp_sizes[other], other);
                    match best {
                        None => *best = Some(cand),
                        Some((sz, id)) => {
                            if cand.0 > *sz || (cand.0 == *sz && cand.1 < *id) {
                                *best = Some(cand);
                            }
                        }
                    }
                }
            };
            if x > 0 {
                consider(i - 1, &mut best);
            }
            if x + 1 < w {
                consider(i + 1, &mut best);
            }
            if y > 0 {
                consider(i - w, &mut best);
            }
            if y + 1 < h {
                consider(i + w, &mut best);
            }
        }
        if let Some((_, target)) = best {
            comp_sizes[target] += comp_sizes[c];
            redirect[c] = target;
        }
    }

    (0..n).map(|i| resolve(&redirect, comp[i])).collect()
}
