use serde::{Deserialize, Serialize};

use crate::decoder::DecoderParams;
use crate::encoder::EncoderParams;
use crate::tensor::Matrix;
use crate::vocab::Vocabulary;

/// Vocabulary plus encoder and decoder parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub vocab: Vocabulary,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

impl Model {
    pub fn init(vocab: Vocabulary, dim: usize, hidden: usize, seed: u64) -> Self {
        let v = vocab.size();
        Model {
            encoder: EncoderParams::init(v, dim, seed),
            decoder: DecoderParams::init(v, dim, hidden, seed),
            vocab,
        }
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn hidden(&self) -> usize {
        self.decoder.hidden()
    }

    /// Every parameter tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let mut out = vec![("encoder.embedding", &self.encoder.embedding)];
        out.extend(self.decoder.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.encoder.embedding];
        out.extend(self.decoder.tensors_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data.len()).sum()
    }

    /// A model of the same shape with every parameter zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(0.0);
        }
        z
    }

    /// Read the `i`-th parameter in flattened order.
    pub fn param(&self, mut i: usize) -> f64 {
        for (_, t) in self.tensors() {
            if i < t.data.len() {
                return t.data[i];
            }
            i -= t.data.len();
        }
        panic!("parameter index out of range")
    }

    pub fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        for t in self.tensors_mut() {
            if i < t.data.len() {
                return &mut t.data[i];
            }
            i -= t.data.len();
        }
        panic!("parameter index out of range")
    }

    /// Name and in-tensor offset of flattened parameter `i`.
    pub fn param_name(&self, mut i: usize) -> (&'static str, usize) {
        for (name, t) in self.tensors() {
            if i < t.data.len() {
                return (name, i);
            }
            i -= t.data.len();
        }
        panic!("parameter index out of range")
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }
}
