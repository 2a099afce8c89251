//! Forward and backward passes of the two answerer architectures.
//!
//! Cross encoder: the summed n-gram embedding is concatenated with the image
//! feature and fed through one shared two-layer network.
//!
//! Dual encoder: the text (embedding, dense) and the image (dense, dense)
//! have separate encoders; their outputs are fused by elementwise product and
//! classified by a linear layer.

use std::collections::BTreeMap;

use super::{Arch, Dims, TextEncoding};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        Self { name: name.to_string(), shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Tensor names and shapes, in storage order. The embedding is always first.
pub fn layout(arch: Arch, d: &Dims) -> Vec<(&'static str, Vec<usize>)> {
    let emb = ("embed", vec![d.buckets, d.embed_dim]);
    match arch {
        Arch::Cross => vec![
            emb,
            ("w1", vec![d.hidden, d.embed_dim + d.image_dim]),
            ("b1", vec![d.hidden]),
            ("w2", vec![d.answers, d.hidden]),
            ("b2", vec![d.answers]),
        ],
        Arch::Dual => vec![
            emb,
            ("text_w", vec![d.hidden, d.embed_dim]),
            ("text_b", vec![d.hidden]),
            ("img_w1", vec![d.hidden, d.image_dim]),
            ("img_b1", vec![d.hidden]),
            ("img_w2", vec![d.hidden, d.hidden]),
            ("img_b2", vec![d.hidden]),
            ("out_w", vec![d.answers, d.hidden]),
            ("out_b", vec![d.answers]),
        ],
    }
}

/// Gradient with respect to every tensor. The embedding gradient is kept as
/// sparse rows; only buckets present in the batch are touched.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub dense: Vec<Vec<T>>,
    pub embed_rows: BTreeMap<u32, Vec<T>>,
    embed_dim: usize,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(tensors: &[Tensor<T>]) -> Self {
        let embed_dim = tensors[0].shape[1];
        let dense = tensors
            .iter()
            .enumerate()
            .map(|(i, t)| if i == 0 { Vec::new() } else { vec![T::zero(); t.numel()] })
            .collect();
        Self { dense, embed_rows: BTreeMap::new(), embed_dim }
    }

    /// Gradient entry at a flat index of tensor `tensor`.
    pub fn get(&self, tensor: usize, flat: usize) -> T {
        if tensor == 0 {
            let (row, col) = (flat / self.embed_dim, flat % self.embed_dim);
            self.embed_rows.get(&(row as u32)).map_or(T::zero(), |r| r[col])
        } else {
            self.dense[tensor][flat]
        }
    }

    fn embed_row(&mut self, row: u32) -> &mut Vec<T> {
        let d = self.embed_dim;
        self.embed_rows.entry(row).or_insert_with(|| vec![T::zero(); d])
    }
}

/// Activations kept for the backward pass.
pub(crate) struct Activations<T> {
    text: Vec<T>,
    h1: Vec<T>,
    h2: Vec<T>,
    h3: Vec<T>,
    pub logits: Vec<T>,
}

fn matvec<T: Scalar>(w: &[T], bias: &[T], x: &[T], out: &mut Vec<T>) {
    let cols = x.len();
    out.clear();
    out.extend(bias.iter().enumerate().map(|(r, &b)| {
        let row = &w[r * cols..(r + 1) * cols];
        row.iter().zip(x).fold(b, |acc, (&a, &v)| acc + a * v)
    }));
}

// grad_w += delta ⊗ x, grad_b += delta, returns Wᵀ delta when wanted
fn backprop_dense<T: Scalar>(
    w: &[T],
    x: &[T],
    delta: &[T],
    grad_w: &mut [T],
    grad_b: Option<&mut [T]>,
    want_input: bool,
) -> Vec<T> {
    let cols = x.len();
    let mut dx = if want_input { vec![T::zero(); cols] } else { Vec::new() };
    for (r, &d) in delta.iter().enumerate() {
        if d == T::zero() {
            continue;
        }
        let gw = &mut grad_w[r * cols..(r + 1) * cols];
        for (g, &v) in gw.iter_mut().zip(x) {
            *g += d * v;
        }
        if want_input {
            let row = &w[r * cols..(r + 1) * cols];
            for (o, &a) in dx.iter_mut().zip(row) {
                *o += a * d;
            }
        }
    }
    if let Some(gb) = grad_b {
        for (g, &d) in gb.iter_mut().zip(delta) {
            *g += d;
        }
    }
    dx
}

fn tanh_in_place<T: Scalar>(v: &mut [T]) {
    for x in v {
        *x = x.tanh();
    }
}

fn tanh_backward<T: Scalar>(grad_out: &mut [T], activated: &[T]) {
    for (g, &a) in grad_out.iter_mut().zip(activated) {
        *g *= T::one() - a * a;
    }
}

fn embed<T: Scalar>(table: &[T], dim: usize, enc: &TextEncoding) -> Vec<T> {
    let mut e = vec![T::zero(); dim];
    for (idx, count) in enc.iter() {
        let c = T::from_f64_lossy(f64::from(count));
        let row = &table[idx as usize * dim..(idx as usize + 1) * dim];
        for (o, &v) in e.iter_mut().zip(row) {
            *o += c * v;
        }
    }
    e
}

pub(crate) fn forward<T: Scalar>(arch: Arch, t: &[Tensor<T>], enc: &TextEncoding, image: &[T]) -> Activations<T> {
    let dim = t[0].shape[1];
    let text = embed(&t[0].data, dim, enc);
    let mut h1 = Vec::new();
    let mut h2 = Vec::new();
    let mut h3 = Vec::new();
    let mut logits = Vec::new();
    match arch {
        Arch::Cross => {
            let joint: Vec<T> = text.iter().chain(image).copied().collect();
            matvec(&t[1].data, &t[2].data, &joint, &mut h1);
            tanh_in_place(&mut h1);
            matvec(&t[3].data, &t[4].data, &h1, &mut logits);
        }
        Arch::Dual => {
            // h1: text branch, h2/h3: image branch layers
            matvec(&t[1].data, &t[2].data, &text, &mut h1);
            tanh_in_place(&mut h1);
            matvec(&t[3].data, &t[4].data, image, &mut h2);
            tanh_in_place(&mut h2);
            matvec(&t[5].data, &t[6].data, &h2, &mut h3);
            tanh_in_place(&mut h3);
            let fused: Vec<T> = h1.iter().zip(&h3).map(|(&a, &b)| a * b).collect();
            matvec(&t[7].data, &t[8].data, &fused, &mut logits);
        }
    }
    Activations { text, h1, h2, h3, logits }
}

/// Accumulates the gradient of `dlogits · logits` into `g`.
pub(crate) fn backward<T: Scalar>(
    arch: Arch,
    t: &[Tensor<T>],
    enc: &TextEncoding,
    image: &[T],
    act: &Activations<T>,
    dlogits: &[T],
    g: &mut Gradients<T>,
) {
    let dtext = match arch {
        Arch::Cross => {
            let (lo, hi) = g.dense.split_at_mut(4);
            let mut dh1 = backprop_dense(&t[3].data, &act.h1, dlogits, &mut lo[3], Some(&mut hi[0]), true);
            tanh_backward(&mut dh1, &act.h1);
            let joint: Vec<T> = act.text.iter().chain(image).copied().collect();
            let (lo, hi) = g.dense.split_at_mut(2);
            let djoint = backprop_dense(&t[1].data, &joint, &dh1, &mut lo[1], Some(&mut hi[0]), true);
            djoint[..act.text.len()].to_vec()
        }
        Arch::Dual => {
            let fused: Vec<T> = act.h1.iter().zip(&act.h3).map(|(&a, &b)| a * b).collect();
            let (lo, hi) = g.dense.split_at_mut(8);
            let dfused = backprop_dense(&t[7].data, &fused, dlogits, &mut lo[7], Some(&mut hi[0]), true);
            let mut dh1: Vec<T> = dfused.iter().zip(&act.h3).map(|(&d, &b)| d * b).collect();
            let mut dh3: Vec<T> = dfused.iter().zip(&act.h1).map(|(&d, &a)| d * a).collect();
            tanh_backward(&mut dh3, &act.h3);
            let (lo, hi) = g.dense.split_at_mut(6);
            let mut dh2 = backprop_dense(&t[5].data, &act.h2, &dh3, &mut lo[5], Some(&mut hi[0]), true);
            tanh_backward(&mut dh2, &act.h2);
            let (lo, hi) = g.dense.split_at_mut(4);
            backprop_dense(&t[3].data, image, &dh2, &mut lo[3], Some(&mut hi[0]), false);
            tanh_backward(&mut dh1, &act.h1);
            let (lo, hi) = g.dense.split_at_mut(2);
            backprop_dense(&t[1].data, &act.text, &dh1, &mut lo[1], Some(&mut hi[0]), true)
        }
    };
    for (idx, count) in enc.iter() {
        let c = T::from_f64_lossy(f64::from(count));
        let row = g.embed_row(idx);
        for (r, &d) in row.iter_mut().zip(&dtext) {
            *r += c * d;
        }
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exp: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum = exp.iter().copied().fold(T::zero(), |a, b| a + b);
    exp.into_iter().map(|e| e / sum).collect()
}
