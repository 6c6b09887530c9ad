//! Feature lattice primitives: unit-norm feature maps, boxes and binary masks.
//!
//! Everything lives on the feature lattice. Image-space boxes are expected to
//! be projected to lattice coordinates by whoever produced the feature map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the unit-norm invariant. Vectors already within it are kept
/// bit-for-bit so that save/load round-trips exactly.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// H×W grid of D-dimensional unit vectors, row-major `[row][col][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    /// Builds a map from raw values, renormalizing every vector.
    pub fn new(height: usize, width: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::DimensionMismatch(format!(
                "lattice must be nonempty, got {height}x{width}"
            )));
        }
        if channels < 2 {
            return Err(Error::DimensionMismatch(format!(
                "need at least 2 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!(
                "payload has {} values, expected {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        for (idx, v) in data.chunks_exact_mut(channels).enumerate() {
            let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::ZeroNorm {
                    row: idx / width,
                    col: idx % width,
                });
            }
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                for x in v.iter_mut() {
                    *x = (*x as f64 / norm) as f32;
                }
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a map from f64 vectors, one per lattice position.
    pub fn from_vectors(height: usize, width: usize, vectors: &[Vec<f64>]) -> Result<Self> {
        let channels = vectors.first().map(|v| v.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(height * width * channels);
        for v in vectors {
            if v.len() != channels {
                return Err(Error::DimensionMismatch("ragged feature vectors".into()));
            }
            data.extend(v.iter().map(|&x| x as f32));
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn raw(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Iterates vectors in row-major order.
    pub fn vectors(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.channels)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copies the part of the map covered by `bbox` (clipped to the lattice).
    pub fn crop(&self, bbox: &BoundingBox) -> Result<FeatureMap> {
        let clipped = bbox.clip(self.height, self.width)?;
        let (h, w) = (clipped.height(), clipped.width());
        let mut data = Vec::with_capacity(h * w * self.channels);
        for r in clipped.y0 as usize..clipped.y1 as usize {
            let start = (r * self.width + clipped.x0 as usize) * self.channels;
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Ok(FeatureMap {
            height: h,
            width: w,
            channels: self.channels,
            data,
        })
    }

    /// Nearest-neighbour resampling to a new lattice size. Vectors are copied,
    /// so unit norm is preserved.
    pub fn resample(&self, height: usize, width: usize) -> FeatureMap {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for r in 0..height {
            let sr = nearest_index(r, height, self.height);
            for c in 0..width {
                let sc = nearest_index(c, width, self.width);
                data.extend_from_slice(self.get(sr, sc));
            }
        }
        FeatureMap {
            height,
            width,
            channels: self.channels,
            data,
        }
    }
}

/// Maps index `i` of a lattice of length `to` onto a lattice of length `from`
/// by nearest centre.
pub fn nearest_index(i: usize, to: usize, from: usize) -> usize {
    if to == from {
        return i;
    }
    let pos = ((i as f64 + 0.5) * from as f64 / to as f64).floor() as usize;
    pos.min(from - 1)
}

/// Half-open box `[x0, x1) × [y0, y1)` on the feature lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl BoundingBox {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidBox(format!("({x0},{y0})-({x1},{y1}) is empty")));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> usize {
        (self.x1 - self.x0).max(0) as usize
    }

    pub fn height(&self) -> usize {
        (self.y1 - self.y0).max(0) as usize
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, row: i64, col: i64) -> bool {
        row >= self.y0 && row < self.y1 && col >= self.x0 && col < self.x1
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let b = BoundingBox {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        };
        (b.x0 < b.x1 && b.y0 < b.y1).then_some(b)
    }

    pub fn overlaps(&self, other: &BoundingBox) -> bool {
        self.intersection(other).is_some()
    }

    /// Clips to an `height × width` lattice; errors when nothing remains.
    pub fn clip(&self, height: usize, width: usize) -> Result<BoundingBox> {
        let lattice = BoundingBox {
            x0: 0,
            y0: 0,
            x1: width as i64,
            y1: height as i64,
        };
        self.intersection(&lattice).ok_or(Error::EmptyIntersection)
    }

    /// Interprets `inner` relative to this box's origin and returns it in
    /// absolute coordinates, clipped to this box.
    pub fn compose(&self, inner: &BoundingBox) -> Option<BoundingBox> {
        let shifted = BoundingBox {
            x0: inner.x0 + self.x0,
            y0: inner.y0 + self.y0,
            x1: inner.x1 + self.x0,
            y1: inner.y1 + self.y0,
        };
        shifted.intersection(self)
    }

    /// Shrinks every side by `fraction / 2` of the box extent (at least one
    /// lattice cell). Returns `None` if nothing is left.
    pub fn shrink(&self, fraction: f64) -> Option<BoundingBox> {
        let mx = ((self.width() as f64 * fraction / 2.0).ceil() as i64).max(1);
        let my = ((self.height() as f64 * fraction / 2.0).ceil() as i64).max(1);
        let b = BoundingBox {
            x0: self.x0 + mx,
            y0: self.y0 + my,
            x1: self.x1 - mx,
            y1: self.y1 - my,
        };
        (b.x0 < b.x1 && b.y0 < b.y1).then_some(b)
    }

    pub fn translate(&self, dx: i64, dy: i64) -> BoundingBox {
        BoundingBox {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} bits for a {height}x{width} mask",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_dims(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && b).collect();
        Ok(Self {
            height: self.height,
            width: self.width,
            bits,
        })
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_dims(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect();
        Ok(Self {
            height: self.height,
            width: self.width,
            bits,
        })
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Places `local` (box-sized) into a lattice-sized mask at `bbox`;
    /// cells falling outside the lattice are dropped.
    pub fn paste(height: usize, width: usize, bbox: &BoundingBox, local: &BinaryMask) -> BinaryMask {
        let mut out = BinaryMask::empty(height, width);
        for r in 0..local.height {
            for c in 0..local.width {
                if !local.get(r, c) {
                    continue;
                }
                let (sr, sc) = (bbox.y0 + r as i64, bbox.x0 + c as i64);
                if sr >= 0 && sc >= 0 && (sr as usize) < height && (sc as usize) < width {
                    out.set(sr as usize, sc as usize, true);
                }
            }
        }
        out
    }

    /// Run-length encoding in row-major order, alternating runs starting
    /// with `false`.
    pub fn to_rle(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in &self.bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn from_rle(height: usize, width: usize, runs: &[u32]) -> Result<BinaryMask> {
        let mut bits = Vec::with_capacity(height * width);
        let mut value = false;
        for &run in runs {
            bits.extend(std::iter::repeat_n(value, run as usize));
            value = !value;
        }
        Self::from_bits(height, width, bits)
    }
}

/// Intersection over union; two empty masks count as a perfect match.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_dims(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_4x4() -> FeatureMap {
        let vectors: Vec<Vec<f64>> = (0..16)
            .map(|i| vec![1.0, i as f64, 0.5])
            .collect();
        FeatureMap::from_vectors(4, 4, &vectors).unwrap()
    }

    #[test]
    fn zero_vector_rejected() {
        let err = FeatureMap::new(1, 2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::ZeroNorm { row: 0, col: 1 }));
    }

    #[test]
    fn vectors_are_renormalized() {
        let m = FeatureMap::new(1, 1, 3, vec![2.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.get(0, 0), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn crop_full_and_single() {
        let m = map_4x4();
        let full = m.crop(&BoundingBox::new(0, 0, 4, 4).unwrap()).unwrap();
        assert_eq!(full, m);
        let one = m.crop(&BoundingBox::new(0, 0, 1, 1).unwrap()).unwrap();
        assert_eq!((one.height(), one.width()), (1, 1));
        assert_eq!(one.get(0, 0), m.get(0, 0));
    }

    #[test]
    fn crop_out_of_range() {
        let m = map_4x4();
        let err = m.crop(&BoundingBox::new(5, 5, 8, 8).unwrap()).unwrap_err();
        assert!(matches!(err, Error::EmptyIntersection));
    }

    #[test]
    fn crop_clips_partially_outside_box() {
        let m = map_4x4();
        let c = m.crop(&BoundingBox::new(-2, 2, 2, 9).unwrap()).unwrap();
        assert_eq!((c.height(), c.width()), (2, 2));
        assert_eq!(c.get(0, 0), m.get(2, 0));
    }

    #[test]
    fn nested_crop_composes() {
        let m = map_4x4();
        let outer = BoundingBox::new(1, 0, 4, 3).unwrap();
        let inner = BoundingBox::new(1, 1, 3, 3).unwrap();
        let a = m.crop(&outer).unwrap().crop(&inner).unwrap();
        let b = m.crop(&outer.compose(&inner).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn iou_examples() {
        let a = BinaryMask::from_fn(2, 4, |r, c| r == 0 && c < 2);
        let b = BinaryMask::from_fn(2, 4, |r, _| r == 0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.5);
        let d = BinaryMask::from_fn(2, 4, |r, _| r == 1);
        assert_eq!(iou(&a, &d).unwrap(), 0.0);
        let e = BinaryMask::empty(2, 4);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert!(iou(&a, &BinaryMask::empty(3, 4)).is_err());
    }

    #[test]
    fn rle_round_trip() {
        let m = BinaryMask::from_fn(3, 5, |r, c| (r + c) % 3 == 0 || c == 4);
        let rle = m.to_rle();
        assert_eq!(BinaryMask::from_rle(3, 5, &rle).unwrap(), m);
        let all = BinaryMask::from_fn(2, 2, |_, _| true);
        assert_eq!(all.to_rle(), vec![0, 4]);
    }

    #[test]
    fn resample_identity_and_nearest() {
        let m = map_4x4();
        assert_eq!(m.resample(4, 4), m);
        let up = m.resample(8, 8);
        assert_eq!(up.get(7, 7), m.get(3, 3));
        assert_eq!(up.get(1, 0), m.get(0, 0));
    }
}
