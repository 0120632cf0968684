//! Gated fusion and hash layer.
//!
//! For an item with vision features `v` and text features `t`:
//!
//! ```text
//! z_c  = [v ‖ t]                          concatenation
//! gate = sigmoid(z_c · w_f + b_f)          context gate
//! z_f  = gate ∘ z_c
//! h    = tanh(z_f · w_h + b_h)             relaxed k-bit code
//! ```
//!
//! Weights are stored row-major as `[input][output]`, so `w_f` is
//! `d_c x d_c` and `w_h` is `d_c x k`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::Variant;
use crate::dataio::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::matrix::{affine_into, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    concat_dim: usize,
    code_bits: usize,
    pub w_f: Vec<f64>,
    pub b_f: Vec<f64>,
    pub w_h: Vec<f64>,
    pub b_h: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(concat_dim: usize, code_bits: usize) -> Self {
        Self {
            concat_dim,
            code_bits,
            w_f: vec![0.0; concat_dim * concat_dim],
            b_f: vec![0.0; concat_dim],
            w_h: vec![0.0; concat_dim * code_bits],
            b_h: vec![0.0; code_bits],
        }
    }

    /// Builds from raw tensors, checking shapes and finiteness.
    pub fn from_parts(
        concat_dim: usize,
        code_bits: usize,
        w_f: Vec<f64>,
        b_f: Vec<f64>,
        w_h: Vec<f64>,
        b_h: Vec<f64>,
    ) -> Result<Self> {
        let p = Self {
            concat_dim,
            code_bits,
            w_f,
            b_f,
            w_h,
            b_h,
        };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        let (d, k) = (self.concat_dim, self.code_bits);
        let expected = [d * d, d, d * k, k];
        for ((name, t), n) in self.tensors().into_iter().zip(expected) {
            if t.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "{name} has {} entries, expected {n}",
                    t.len()
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::ShapeMismatch(format!("{name} holds a non-finite entry")));
            }
        }
        Ok(())
    }

    pub fn concat_dim(&self) -> usize {
        self.concat_dim
    }

    pub fn code_bits(&self) -> usize {
        self.code_bits
    }

    /// `(name, values)` in checkpoint order.
    pub fn tensors(&self) -> [(&'static str, &[f64]); 4] {
        [
            ("w_f", &self.w_f),
            ("b_f", &self.b_f),
            ("w_h", &self.w_h),
            ("b_h", &self.b_h),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w_f, &mut self.b_f, &mut self.w_h, &mut self.b_h]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Rounds every entry to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Glorot-uniform weights with `a = sqrt(6 / (fan_in + fan_out))`, zero biases.
///
/// Entries are drawn as `f32`, so a fresh model survives a checkpoint round
/// trip unchanged.
pub fn init_params(concat_dim: usize, code_bits: usize, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::zeros(concat_dim, code_bits);
    glorot_fill(&mut p.w_f, concat_dim, concat_dim, &mut rng);
    glorot_fill(&mut p.w_h, concat_dim, code_bits, &mut rng);
    p
}

fn glorot_fill(w: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut a = limit as f32;
    if a as f64 > limit {
        a = f32::from_bits(a.to_bits() - 1);
    }
    for v in w.iter_mut() {
        *v = rng.random_range(-a..a) as f64;
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Concatenates the two modalities, zero-filling whichever one the variant excludes.
pub fn concat(vision: &[f32], text: &[f32], variant: Variant) -> Vec<f64> {
    let mut z = Vec::with_capacity(vision.len() + text.len());
    let keep_vision = variant != Variant::TextOnly;
    let keep_text = variant != Variant::VisionOnly;
    z.extend(vision.iter().map(|&x| if keep_vision { x as f64 } else { 0.0 }));
    z.extend(text.iter().map(|&x| if keep_text { x as f64 } else { 0.0 }));
    z
}

/// Context gate: returns `(z_f, gate)`.
pub fn forward_gate(z_c: &[f64], params: &ModelParams) -> (Vec<f64>, Vec<f64>) {
    let mut gate = vec![0.0; z_c.len()];
    affine_into(z_c, &params.w_f, &params.b_f, &mut gate);
    for g in gate.iter_mut() {
        *g = sigmoid(*g);
    }
    let z_f = gate.iter().zip(z_c).map(|(g, z)| g * z).collect();
    (z_f, gate)
}

pub fn hash_preactivation(z_f: &[f64], params: &ModelParams) -> Vec<f64> {
    let mut pre = vec![0.0; params.code_bits];
    affine_into(z_f, &params.w_h, &params.b_h, &mut pre);
    pre
}

pub fn forward_hash(z_f: &[f64], params: &ModelParams) -> Vec<f64> {
    let mut h = hash_preactivation(z_f, params);
    for v in h.iter_mut() {
        *v = v.tanh();
    }
    h
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchActivations {
    pub z_c: Matrix,
    /// `None` for the concat-only variant, which skips the gate.
    pub gate: Option<Matrix>,
    pub z_f: Matrix,
    pub h: Matrix,
}

impl BatchActivations {
    pub fn rows(&self) -> usize {
        self.h.rows()
    }
}

struct RowActs {
    z_c: Vec<f64>,
    gate: Option<Vec<f64>>,
    z_f: Vec<f64>,
    h: Vec<f64>,
}

fn forward_row(vision: &[f32], text: &[f32], params: &ModelParams, variant: Variant) -> RowActs {
    let z_c = concat(vision, text, variant);
    let (z_f, gate) = if variant.uses_gate() {
        let (z_f, gate) = forward_gate(&z_c, params);
        (z_f, Some(gate))
    } else {
        (z_c.clone(), None)
    };
    let h = forward_hash(&z_f, params);
    RowActs { z_c, gate, z_f, h }
}

fn check_inputs(vision: &EmbeddingMatrix, text: &EmbeddingMatrix, params: &ModelParams) -> Result<()> {
    if vision.count() != text.count() {
        return Err(Error::DimMismatch(format!(
            "{} vision rows vs {} text rows",
            vision.count(),
            text.count()
        )));
    }
    if vision.dim() + text.dim() != params.concat_dim() {
        return Err(Error::DimMismatch(format!(
            "vision dim {} + text dim {} != model input dim {}",
            vision.dim(),
            text.dim(),
            params.concat_dim()
        )));
    }
    Ok(())
}

/// Runs concat → gate → hash over every row. Rows are independent and may be
/// computed in parallel; each lands in its own slot.
pub fn forward_batch(
    vision: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
    params: &ModelParams,
    variant: Variant,
) -> Result<BatchActivations> {
    check_inputs(vision, text, params)?;
    let rows: Vec<RowActs> = (0..vision.count())
        .into_par_iter()
        .map(|r| forward_row(vision.row(r), text.row(r), params, variant))
        .collect();
    let d_c = params.concat_dim();
    let k = params.code_bits();
    let stack = |f: &dyn Fn(&RowActs) -> &[f64], cols: usize| {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in &rows {
            data.extend_from_slice(f(r));
        }
        Matrix::from_vec(rows.len(), cols, data)
    };
    Ok(BatchActivations {
        z_c: stack(&|r| &r.z_c, d_c),
        gate: variant
            .uses_gate()
            .then(|| stack(&|r| r.gate.as_deref().unwrap(), d_c)),
        z_f: stack(&|r| &r.z_f, d_c),
        h: stack(&|r| &r.h, k),
    })
}

/// Relaxed codes only; skips keeping the intermediates.
pub fn encode_relaxed(
    vision: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
    params: &ModelParams,
    variant: Variant,
) -> Result<Matrix> {
    check_inputs(vision, text, params)?;
    let rows: Vec<Vec<f64>> = (0..vision.count())
        .into_par_iter()
        .map(|r| forward_row(vision.row(r), text.row(r), params, variant).h)
        .collect();
    let mut m = Matrix::zeros(rows.len(), params.code_bits());
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).copy_from_slice(r);
    }
    Ok(m)
}
