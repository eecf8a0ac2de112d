//! Dense 2-D grid containers shared by the whole pipeline.
//!
//! All grids are row-major with `(x, y)` addressed as `y * width + x`, are
//! immutable after construction, and validate their invariants up front.

use crate::error::{Error, Result};

/// RGB image with per-channel intensities in `[0, 1]`, interleaved row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("image dimensions must be positive".into()));
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidParameter(format!(
                "image data length {} does not match {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter("image intensities must lie in [0, 1]".into()));
        }
        Ok(Image { width, height, data })
    }

    /// Image filled with a single RGB color.
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Image::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, channel: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height && channel < 3);
        self.data[(y * self.width + x) * 3 + channel]
    }

    #[inline]
    pub fn rgb(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Channel value with coordinates clamped to the image border
    /// (edge replication).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, channel: usize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.get(cx, cy, channel)
    }
}

/// Per-pixel non-negative class identifiers; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("label map dimensions must be positive".into()));
        }
        if labels.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "label data length {} does not match {}x{}",
                labels.len(),
                width,
                height
            )));
        }
        Ok(LabelMap { width, height, labels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Binary mask of the pixels carrying `class_id`.
    pub fn binarize(&self, class_id: u32) -> BinaryMask {
        let bits = self.labels.iter().map(|&l| u8::from(l == class_id)).collect();
        BinaryMask::new(self.width, self.height, bits).expect("dimensions match by construction")
    }

    /// Pixel count of `class_id`.
    pub fn class_area(&self, class_id: u32) -> usize {
        self.labels.iter().filter(|&&l| l == class_id).count()
    }
}

/// Per-pixel {0, 1} class membership.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("mask dimensions must be positive".into()));
        }
        if bits.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "mask data length {} does not match {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidParameter("mask values must be 0 or 1".into()));
        }
        Ok(BinaryMask { width, height, bits })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        BinaryMask { width, height, bits: vec![0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.bits[y * self.width + x]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// Pixel-wise complement.
    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| 1 - b).collect(),
        }
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        self.check_dims(other, "mask intersection")?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a == 1 && b == 1)
            .count())
    }

    pub fn union_count(&self, other: &BinaryMask) -> Result<usize> {
        self.check_dims(other, "mask union")?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a == 1 || b == 1)
            .count())
    }

    pub(crate) fn check_dims(&self, other: &BinaryMask, context: &'static str) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::dims(
                context,
                (self.width, self.height),
                (other.width, other.height),
            ));
        }
        Ok(())
    }
}

/// Per-pixel foreground probability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMask {
    width: usize,
    height: usize,
    probs: Vec<f64>,
}

impl ProbMask {
    pub fn new(width: usize, height: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "probability data length {} does not match {}x{}",
                probs.len(),
                width,
                height
            )));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter("probabilities must lie in [0, 1]".into()));
        }
        Ok(ProbMask { width, height, probs })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.probs[y * self.width + x]
    }
}

/// Per-pixel feature vectors, stored pixel-major:
/// `values[(y * width + x) * depth + z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    depth: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, depth: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height * depth {
            return Err(Error::InvalidParameter(format!(
                "feature data length {} does not match {}x{}x{}",
                values.len(),
                width,
                height,
                depth
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("feature values must be finite".into()));
        }
        Ok(FeatureMap { width, height, depth, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Feature vector of the pixel at flat index `idx = y * width + x`.
    #[inline]
    pub fn pixel(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.depth..(idx + 1) * self.depth]
    }
}

/// Separable Gaussian smoothing with edge replication at the borders.
///
/// The kernel is truncated at radius `ceil(4 * sigma)` and normalized to
/// unit mass.
pub fn gaussian_smooth(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }

    let (w, h) = (img.width, img.height);
    // Horizontal pass.
    let mut horizontal = vec![0.0; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (ki, k) in kernel.iter().enumerate() {
                    let sx = x as isize + ki as isize - radius;
                    acc += k * img.get_clamped(sx, y as isize, c);
                }
                horizontal[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (ki, k) in kernel.iter().enumerate() {
                    let sy = (y as isize + ki as isize - radius).clamp(0, h as isize - 1) as usize;
                    acc += k * horizontal[(sy * w + x) * 3 + c];
                }
                // Convex combination of inputs; clip rounding spill just past
                // the valid range.
                out[(y * w + x) * 3 + c] = acc.clamp(0.0, 1.0);
            }
        }
    }
    Image::new(w, h, out)
}

/// Per-channel mean of `f` over the pixels where `m` is 1.
pub fn masked_mean(f: &FeatureMap, m: &BinaryMask) -> Result<Vec<f64>> {
    if f.width != m.width() || f.height != m.height() {
        return Err(Error::dims(
            "masked_mean",
            (f.width, f.height),
            (m.width(), m.height()),
        ));
    }
    let count = m.count_ones();
    if count == 0 {
        return Err(Error::EmptyMask("masked_mean over an empty mask"));
    }
    let mut sums = vec![0.0; f.depth];
    for (idx, &bit) in m.bits().iter().enumerate() {
        if bit == 1 {
            let pix = f.pixel(idx);
            for (s, v) in sums.iter_mut().zip(pix) {
                *s += v;
            }
        }
    }
    let n = count as f64;
    for s in &mut sums {
        *s /= n;
    }
    Ok(sums)
}
