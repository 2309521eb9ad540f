//! Vertex cochains: one d-dimensional stalk vector per node and channel.

use crate::error::{Error, Result};

/// Dense node-major storage for a 0-cochain with `channels` independent
/// signal channels: entry (node, stalk coordinate, channel) lives at
/// `(node * d + coord) * channels + channel`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cochain {
    num_nodes: usize,
    d: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Cochain {
    pub fn zeros(num_nodes: usize, d: usize, channels: usize) -> Self {
        Self {
            num_nodes,
            d,
            channels,
            data: vec![0.0; num_nodes * d * channels],
        }
    }

    /// Wrap an existing node-major buffer of length `num_nodes * d * channels`.
    pub fn from_vec(num_nodes: usize, d: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != num_nodes * d * channels {
            return Err(Error::ShapeMismatch {
                context: "cochain buffer",
                expected: format!("{} values", num_nodes * d * channels),
                found: format!("{}", data.len()),
            });
        }
        Ok(Self {
            num_nodes,
            d,
            channels,
            data,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn get(&self, node: usize, coord: usize, channel: usize) -> f64 {
        self.data[(node * self.d + coord) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, node: usize, coord: usize, channel: usize, value: f64) {
        self.data[(node * self.d + coord) * self.channels + channel] = value;
    }

    #[inline]
    pub fn at_mut(&mut self, node: usize, coord: usize, channel: usize) -> &mut f64 {
        &mut self.data[(node * self.d + coord) * self.channels + channel]
    }

    /// Contiguous `d * channels` slice for one node.
    #[inline]
    pub fn node(&self, node: usize) -> &[f64] {
        let w = self.d * self.channels;
        &self.data[node * w..(node + 1) * w]
    }

    #[inline]
    pub fn node_mut(&mut self, node: usize) -> &mut [f64] {
        let w = self.d * self.channels;
        &mut self.data[node * w..(node + 1) * w]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    /// self += alpha * other
    pub fn axpy(&mut self, alpha: f64, other: &Cochain) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    pub fn dot(&self, other: &Cochain) -> f64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Euclidean norm of a single channel.
    pub fn channel_norm(&self, channel: usize) -> f64 {
        let mut s = 0.0;
        for node in 0..self.num_nodes {
            for coord in 0..self.d {
                let v = self.get(node, coord, channel);
                s += v * v;
            }
        }
        s.sqrt()
    }

    /// Flatten one channel into a plain vector of length `num_nodes * d`.
    pub fn channel_vec(&self, channel: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_nodes * self.d);
        for node in 0..self.num_nodes {
            for coord in 0..self.d {
                out.push(self.get(node, coord, channel));
            }
        }
        out
    }

    /// Inverse of [`Cochain::channel_vec`] for a single-channel cochain.
    pub fn from_channel_vec(num_nodes: usize, d: usize, v: &[f64]) -> Result<Self> {
        Self::from_vec(num_nodes, d, 1, v.to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
