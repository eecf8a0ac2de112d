//! Graph-based segmentation by adaptive region merging.
//!
//! The image is treated as an 8-connected grid graph with Euclidean RGB edge
//! weights on the `[0, 255]`-scaled smoothed image. Edges are processed in
//! ascending weight order (ties broken by construction order); two components
//! merge when the joining edge is no heavier than the smaller of their
//! internal differences plus the `scale / size` tolerance. A final pass over
//! the sorted edges absorbs every component below `min_size` into its
//! cheapest edge-adjacent neighbor.

use crate::error::Result;
use crate::grid::{gaussian_smooth, Image};

use super::{FelzenszwalbParams, SuperpixelMap};

struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
    /// Largest edge weight in the component's spanning structure.
    internal: Vec<f64>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grandparent = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grandparent;
            x = grandparent;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32, weight: f64) -> u32 {
        let (a, b) = if self.size[a as usize] >= self.size[b as usize] { (a, b) } else { (b, a) };
        self.parent[b as usize] = a;
        self.size[a as usize] += self.size[b as usize];
        self.internal[a as usize] = self.internal[a as usize].max(self.internal[b as usize]).max(weight);
        a
    }
}

/// Forward 8-neighborhood offsets: E, S, SE, SW. Enumerating these per pixel
/// in scan order fixes the edge construction order, which is the tie-break
/// for equal weights.
const NEIGHBORS: [(isize, isize); 4] = [(1, 0), (0, 1), (1, 1), (-1, 1)];

pub fn felzenszwalb(img: &Image, p: &FelzenszwalbParams) -> Result<SuperpixelMap> {
    p.validate()?;
    let smoothed = if p.sigma > 0.0 { gaussian_smooth(img, p.sigma)? } else { img.clone() };
    let (w, h) = (smoothed.width(), smoothed.height());
    let n = w * h;

    // Edge weights on the [0, 255] intensity scale so that `scale` keeps the
    // magnitude of the reference parameterization.
    let scaled: Vec<f64> = smoothed.data().iter().map(|&v| v * 255.0).collect();
    let dist = |a: usize, b: usize| -> f64 {
        let (pa, pb) = (&scaled[a * 3..a * 3 + 3], &scaled[b * 3..b * 3 + 3]);
        let dr = pa[0] - pb[0];
        let dg = pa[1] - pb[1];
        let db = pa[2] - pb[2];
        (dr * dr + dg * dg + db * db).sqrt()
    };

    let mut edges: Vec<(f64, u32, u32)> = Vec::with_capacity(4 * n);
    for y in 0..h {
        for x in 0..w {
            let a = y * w + x;
            for (dx, dy) in NEIGHBORS {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx >= 0 && (nx as usize) < w && ny >= 0 && (ny as usize) < h {
                    let b = ny as usize * w + nx as usize;
                    edges.push((dist(a, b), a as u32, b as u32));
                }
            }
        }
    }
    // Stable sort keeps construction order among equal weights.
    edges.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("edge weights are finite"));

    let mut ds = DisjointSet::new(n);
    for &(weight, a, b) in &edges {
        let ra = ds.find(a);
        let rb = ds.find(b);
        if ra == rb {
            continue;
        }
        let threshold_a = ds.internal[ra as usize] + p.scale / ds.size[ra as usize] as f64;
        let threshold_b = ds.internal[rb as usize] + p.scale / ds.size[rb as usize] as f64;
        if weight <= threshold_a.min(threshold_b) {
            ds.union(ra, rb, weight);
        }
    }

    // Enforce the minimum region size, merging across the cheapest boundary
    // edges first.
    for &(weight, a, b) in &edges {
        let ra = ds.find(a);
        let rb = ds.find(b);
        if ra != rb
            && ((ds.size[ra as usize] as usize) < p.min_size
                || (ds.size[rb as usize] as usize) < p.min_size)
        {
            ds.union(ra, rb, weight);
        }
    }

    let assignment: Vec<usize> = (0..n).map(|i| ds.find(i as u32) as usize).collect();
    Ok(SuperpixelMap::from_assignment(w, h, &assignment))
}
