//! Minimal dense tensors for parameters and feature maps.
//!
//! Everything runs on plain row-major `Vec` storage. Inference and training
//! are f32 in production; gradient verification instantiates the same code
//! at f64, so the numeric kernels are generic over [`Scalar`].

use num_traits::{Float, NumAssign};

/// Element type of all numeric kernels (implemented for `f32` and `f64`).
pub trait Scalar:
    Float + NumAssign + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor of arbitrary rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// A multi-channel time×frequency feature map, laid out `[channel][frame][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<S> {
    pub channels: usize,
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> FeatureMap<S> {
    pub fn zeros(channels: usize, frames: usize, bins: usize) -> Self {
        FeatureMap {
            channels,
            frames,
            bins,
            data: vec![S::zero(); channels * frames * bins],
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, t: usize, f: usize) -> usize {
        (c * self.frames + t) * self.bins + f
    }

    #[inline]
    pub fn at(&self, c: usize, t: usize, f: usize) -> S {
        self.data[self.idx(c, t, f)]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, t: usize, f: usize) -> &mut S {
        let i = self.idx(c, t, f);
        &mut self.data[i]
    }

    /// Slice holding one channel's frame row.
    #[inline]
    pub fn row(&self, c: usize, t: usize) -> &[S] {
        let start = (c * self.frames + t) * self.bins;
        &self.data[start..start + self.bins]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.frames == other.frames && self.bins == other.bins
    }
}
