//! Superpixel segmentation: graph-based Felzenszwalb merging (default),
//! SLIC iterative clustering, and uniform gridding.

mod felzenszwalb;
mod slic;

pub use felzenszwalb::felzenszwalb;
pub use slic::slic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Image};

/// A partition of the image into contiguous regions. Region ids are exactly
/// `0..num_regions`, assigned in first-pixel scan order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    width: usize,
    height: usize,
    region_id: Vec<u32>,
    num_regions: usize,
}

impl SuperpixelMap {
    pub fn new(width: usize, height: usize, region_id: Vec<u32>, num_regions: usize) -> Result<Self> {
        if region_id.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "region data length {} does not match {}x{}",
                region_id.len(),
                width,
                height
            )));
        }
        let mut seen = vec![false; num_regions];
        for &r in &region_id {
            let r = r as usize;
            if r >= num_regions {
                return Err(Error::InvalidParameter(format!(
                    "region id {r} out of range for {num_regions} regions"
                )));
            }
            seen[r] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::InvalidParameter("region ids must be contiguous from 0".into()));
        }
        Ok(SuperpixelMap { width, height, region_id, num_regions })
    }

    /// Relabels an arbitrary pixel -> group assignment compactly in
    /// first-pixel scan order.
    pub(crate) fn from_assignment(width: usize, height: usize, assignment: &[usize]) -> Self {
        let mut remap: Vec<u32> = Vec::new();
        let mut lookup = std::collections::HashMap::new();
        let mut region_id = Vec::with_capacity(assignment.len());
        for &group in assignment {
            let id = *lookup.entry(group).or_insert_with(|| {
                let next = remap.len() as u32;
                remap.push(next);
                next
            });
            region_id.push(id);
        }
        SuperpixelMap { width, height, region_id, num_regions: remap.len() }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_regions(&self) -> usize {
        self.num_regions
    }

    pub fn region_ids(&self) -> &[u32] {
        &self.region_id
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.region_id[y * self.width + x]
    }

    /// Pixel count per region id.
    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_regions];
        for &r in &self.region_id {
            sizes[r as usize] += 1;
        }
        sizes
    }
}

/// Parameters of the graph-based merge segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FelzenszwalbParams {
    /// Threshold constant k of the merge predicate.
    pub scale: f64,
    /// Pre-smoothing Gaussian sigma; 0 disables smoothing.
    pub sigma: f64,
    /// Minimum region size enforced by the post-merge pass.
    pub min_size: usize,
}

impl Default for FelzenszwalbParams {
    fn default() -> Self {
        FelzenszwalbParams { scale: 100.0, sigma: 0.8, min_size: 200 }
    }
}

impl FelzenszwalbParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) {
            return Err(Error::InvalidParameter(format!("scale must be > 0, got {}", self.scale)));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.min_size == 0 {
            return Err(Error::InvalidParameter("min_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Parameters of the SLIC clustering segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicParams {
    pub n_segments: usize,
    pub compactness: f64,
    pub max_iterations: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        SlicParams { n_segments: 100, compactness: 10.0, max_iterations: 10 }
    }
}

impl SlicParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_segments == 0 {
            return Err(Error::InvalidParameter("n_segments must be >= 1".into()));
        }
        if !(self.compactness > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "compactness must be > 0, got {}",
                self.compactness
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Segmentation algorithm selector carried through configs and the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SuperpixelAlgo {
    Felzenszwalb(FelzenszwalbParams),
    Slic(SlicParams),
    Grid { rows: usize, cols: usize },
}

impl SuperpixelAlgo {
    pub fn segment(&self, img: &Image, seed: u64) -> Result<SuperpixelMap> {
        match self {
            SuperpixelAlgo::Felzenszwalb(p) => felzenszwalb(img, p),
            SuperpixelAlgo::Slic(p) => slic(img, p, seed),
            SuperpixelAlgo::Grid { rows, cols } => grid_partition(img.width(), img.height(), *rows, *cols),
        }
    }
}

/// Splits the image into `rows x cols` rectangular cells; remainder pixels
/// are absorbed by the last row/column of cells.
pub fn grid_partition(width: usize, height: usize, rows: usize, cols: usize) -> Result<SuperpixelMap> {
    if rows == 0 || cols == 0 || rows > height || cols > width {
        return Err(Error::InvalidParameter(format!(
            "degenerate grid: {rows}x{cols} cells on a {width}x{height} image"
        )));
    }
    let cell_w = width / cols;
    let cell_h = height / rows;
    let mut region_id = Vec::with_capacity(width * height);
    for y in 0..height {
        let r = (y / cell_h).min(rows - 1);
        for x in 0..width {
            let c = (x / cell_w).min(cols - 1);
            region_id.push((r * cols + c) as u32);
        }
    }
    SuperpixelMap::new(width, height, region_id, rows * cols)
}

/// One binary mask per region; pairwise disjoint, union covers the image.
pub fn regions_to_masks(sp: &SuperpixelMap) -> Vec<BinaryMask> {
    let (w, h) = (sp.width, sp.height);
    let mut masks: Vec<Vec<u8>> = vec![vec![0; w * h]; sp.num_regions];
    for (idx, &r) in sp.region_id.iter().enumerate() {
        masks[r as usize][idx] = 1;
    }
    masks
        .into_iter()
        .map(|bits| BinaryMask::new(w, h, bits).expect("region mask dimensions match"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_partition_exact_cells() {
        let sp = grid_partition(100, 100, 10, 10).unwrap();
        assert_eq!(sp.num_regions(), 100);
        assert!(sp.region_sizes().iter().all(|&s| s == 100));
    }

    #[test]
    fn grid_partition_remainder_goes_to_last_cells() {
        let sp = grid_partition(105, 100, 10, 10).unwrap();
        assert_eq!(sp.num_regions(), 100);
        let sizes = sp.region_sizes();
        // Last column of cells is 15 px wide.
        for r in 0..10 {
            assert_eq!(sizes[r * 10 + 9], 15 * 10);
            assert_eq!(sizes[r * 10], 10 * 10);
        }
    }

    #[test]
    fn grid_partition_single_pixel_cells() {
        let sp = grid_partition(10, 10, 10, 10).unwrap();
        assert_eq!(sp.num_regions(), 100);
        assert!(sp.region_sizes().iter().all(|&s| s == 1));
    }

    #[test]
    fn grid_partition_rejects_degenerate() {
        assert!(grid_partition(5, 5, 10, 10).is_err());
        assert!(grid_partition(5, 5, 0, 2).is_err());
    }

    #[test]
    fn masks_partition_the_image() {
        let sp = grid_partition(7, 5, 2, 3).unwrap();
        let masks = regions_to_masks(&sp);
        assert_eq!(masks.len(), 6);
        let total: usize = masks.iter().map(|m| m.count_ones()).sum();
        assert_eq!(total, 35);
        // Reconstructing region ids from the masks reproduces the map.
        let mut rebuilt = vec![u32::MAX; 35];
        for (rid, m) in masks.iter().enumerate() {
            for (i, &b) in m.bits().iter().enumerate() {
                if b == 1 {
                    assert_eq!(rebuilt[i], u32::MAX, "masks overlap");
                    rebuilt[i] = rid as u32;
                }
            }
        }
        assert_eq!(rebuilt, sp.region_ids());
    }

    #[test]
    fn single_region_map_gives_all_ones_mask() {
        let sp = SuperpixelMap::new(4, 2, vec![0; 8], 1).unwrap();
        let masks = regions_to_masks(&sp);
        assert_eq!(masks.len(), 1);
        assert_eq!(masks[0].count_ones(), 8);
    }

    #[test]
    fn map_validation_rejects_gaps() {
        assert!(SuperpixelMap::new(2, 1, vec![0, 2], 3).is_err());
        assert!(SuperpixelMap::new(2, 1, vec![0, 3], 2).is_err());
    }
}
