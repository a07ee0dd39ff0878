//! Row-major 2D buffers shared by the renderer, losses and loaders.

use crate::error::{Error, Result};

/// Dense `height x width` map of reals, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "buffer of {} values does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn add(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] += v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Per-pixel validity flags, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "mask of {} flags does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::InvalidArgument("mask shapes differ".into()));
        }
        Ok(Mask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a && *b)
                .collect(),
        })
    }
}

/// Metric depth map plus validity. Invalid pixels hold depth 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub depth: Image,
    pub valid: Mask,
}

impl DepthImage {
    /// Builds a depth image; pixels that are non-finite or `<= 0` are invalid.
    pub fn from_depth(depth: Image) -> Self {
        let (w, h) = (depth.width(), depth.height());
        let mut depth = depth;
        let mut valid = Mask::new(w, h, false);
        for (i, d) in depth.as_mut_slice().iter_mut().enumerate() {
            if d.is_finite() && *d > 0.0 {
                valid.data[i] = true;
            } else {
                *d = 0.0;
            }
        }
        Self { depth, valid }
    }

    pub fn new(depth: Image, valid: Mask) -> Result<Self> {
        if depth.width() != valid.width() || depth.height() != valid.height() {
            return Err(Error::InvalidArgument("depth/valid shapes differ".into()));
        }
        let mut img = Self { depth, valid };
        img.sanitize();
        Ok(img)
    }

    fn sanitize(&mut self) {
        for (d, v) in self.depth.data.iter_mut().zip(self.valid.data.iter_mut()) {
            if !(d.is_finite() && *d > 0.0) {
                *v = false;
            }
            if !*v {
                *d = 0.0;
            }
        }
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_depth_is_invalid() {
        let img = Image::from_vec(3, 1, vec![1.0, f64::NAN, -2.0]).unwrap();
        let d = DepthImage::from_depth(img);
        assert_eq!(d.valid.as_slice(), &[true, false, false]);
        assert_eq!(d.depth.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(Image::from_vec(2, 2, vec![0.0; 3]).is_err());
        assert!(DepthImage::new(Image::zeros(2, 2), Mask::new(3, 2, true)).is_err());
    }
}
