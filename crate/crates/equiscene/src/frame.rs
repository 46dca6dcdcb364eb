//! RGB frame container: float values in [0, 1], shape (3, 64, 64).

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const FRAME_CHANNELS: usize = 3;
pub const CANVAS: usize = 64;
pub const FRAME_LEN: usize = FRAME_CHANNELS * CANVAS * CANVAS;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    data: Vec<f32>,
}

impl Frame {
    pub fn new(data: Vec<f32>) -> Result<Self> {
        if data.len() != FRAME_LEN {
            return Err(Error::ShapeMismatch(format!(
                "frame has {} values, expected {}",
                data.len(),
                FRAME_LEN
            )));
        }
        Ok(Self { data })
    }

    pub fn zeros() -> Self {
        Self { data: vec![0.0; FRAME_LEN] }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * CANVAS + y) * CANVAS + x]
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(&[FRAME_CHANNELS, CANVAS, CANVAS], self.data.clone()).expect("frame shape")
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        if t.dims() != [FRAME_CHANNELS, CANVAS, CANVAS] {
            return Err(Error::ShapeMismatch(format!("tensor dims {:?}", t.dims())));
        }
        Self::new(t.data().to_vec())
    }

    /// Mean squared error against another frame.
    pub fn mse(&self, other: &Frame) -> f64 {
        let mut acc = 0.0f64;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let d = *a as f64 - *b as f64;
            acc += d * d;
        }
        acc / FRAME_LEN as f64
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|&v| (0.0..=1.0).contains(&v))
    }
}

/// Stack frames into a (B, 3, 64, 64) batch tensor.
pub fn batch_tensor(frames: &[&Frame]) -> Tensor<f32> {
    let mut data = Vec::with_capacity(frames.len() * FRAME_LEN);
    for f in frames {
        data.extend_from_slice(f.data());
    }
    Tensor::new(&[frames.len(), FRAME_CHANNELS, CANVAS, CANVAS], data).expect("batch shape")
}
