//! Flat, named parameter storage shared by the model, optimizer and checkpoints.

use ndarray::{ArrayView1, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::rng::Rng;

/// Which learning-rate group a tensor belongs to for layer-wise decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    /// Token projections and the mask token.
    Embedding,
    /// Encoder layer, numbered from 1.
    Layer(usize),
    /// Final norm and classifier.
    Head,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
    pub group: Group,
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform with variance `scale² / fan_in`.
    FanIn { fan_in: usize, scale: f64 },
    Normal(f64),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, decay: bool, group: Group, r: &mut Rng) -> usize {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::FanIn { fan_in, scale } => {
                let a = scale * (3.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| r.gen_range(-a..=a)).collect()
            }
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).expect("valid std");
                (0..n).map(|_| d.sample(r)).collect()
            }
        };
        self.tensors.push(Tensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
            decay,
            group,
        });
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn mat(&self, idx: usize) -> ArrayView2<'_, f64> {
        let t = &self.tensors[idx];
        ArrayView2::from_shape((t.shape[0], t.shape[1]), &t.data).expect("tensor is 2-D")
    }

    pub fn vec(&self, idx: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.tensors[idx].data[..])
    }

    pub fn zero_grads(&self) -> Grads {
        Grads(self.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }
}

/// Gradients, laid out like the owning [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.0.iter_mut().flatten() {
            *v *= s;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// Accumulate a dense 2-D gradient into tensor `idx`.
    pub(crate) fn acc_mat(&mut self, idx: usize, g: ArrayView2<'_, f64>) {
        let dst = &mut self.0[idx];
        for (d, s) in dst.iter_mut().zip(g.iter()) {
            *d += s;
        }
    }

    pub(crate) fn acc_vec(&mut self, idx: usize, g: impl IntoIterator<Item = f64>) {
        for (d, s) in self.0[idx].iter_mut().zip(g) {
            *d += s;
        }
    }
}
