use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense `frames × channels` matrix in row-major (frame-major) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMatrix {
    frames: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FrameMatrix {
    pub fn new(frames: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != frames * channels {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {frames}x{channels} matrix",
                data.len()
            )));
        }
        Ok(Self {
            frames,
            channels,
            data,
        })
    }

    pub fn zeros(frames: usize, channels: usize) -> Self {
        Self {
            frames,
            channels,
            data: vec![0.0; frames * channels],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        &self.data[frame * self.channels..(frame + 1) * self.channels]
    }

    pub fn get(&self, frame: usize, channel: usize) -> f32 {
        self.data[frame * self.channels + channel]
    }

    pub fn set(&mut self, frame: usize, channel: usize, value: f32) {
        self.data[frame * self.channels + channel] = value;
    }

    /// Copy of one channel across all frames.
    pub fn column(&self, channel: usize) -> Vec<f32> {
        (0..self.frames).map(|f| self.get(f, channel)).collect()
    }

    /// Frames in a different order; used to probe order sensitivity.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &f in order {
            data.extend_from_slice(self.row(f));
        }
        Self {
            frames: order.len(),
            channels: self.channels,
            data,
        }
    }
}
