//! Backpropagation, Adam, the training loop and checkpoints.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! "MMH1" 'P' u32 d_c u32 k
//! f32 w_f[d_c * d_c]  f32 b_f[d_c]  f32 w_h[d_c * k]  f32 b_h[k]
//! u64 seed  u8 variant
//! u8 has_optimizer
//!   [u64 step  f64 m[...] for w_f, b_f, w_h, b_h  f64 v[...] same order]
//! ```

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binfmt::{self, atomic_write, ByteReader, KIND_PARAMS};
use crate::config::{self, TrainConfig, Variant};
use crate::dataio::{Dataset, Split};
use crate::error::{Error, Result};
use crate::loss::{phi_matrix, total_loss, LossWeights, Windows};
use crate::matrix::{accumulate_outer, back_into, Matrix};
use crate::model::{forward_batch, init_params, BatchActivations, ModelParams};
use crate::pipeline::evaluate_model;

/// Gradients share the parameter layout.
pub type ParamGrads = ModelParams;

/// Analytic gradients of the loss through the hash layer and the gate.
pub fn backward_batch(
    acts: &BatchActivations,
    grad_h: &Matrix,
    params: &ModelParams,
    variant: Variant,
) -> Result<ParamGrads> {
    let (b, k) = acts.h.shape();
    let d_c = params.concat_dim();
    if grad_h.shape() != (b, k) || k != params.code_bits() || acts.z_c.shape() != (b, d_c) {
        return Err(Error::ShapeMismatch(format!(
            "grad_h {:?}, activations h {:?} z_c {:?}, params ({d_c}, {})",
            grad_h.shape(),
            acts.h.shape(),
            acts.z_c.shape(),
            params.code_bits()
        )));
    }
    if acts.gate.is_some() != variant.uses_gate() {
        return Err(Error::ShapeMismatch(format!(
            "activations do not match variant {variant}"
        )));
    }

    let mut grads = ModelParams::zeros(d_c, k);

    // Through tanh.
    let mut g_pre = grad_h.clone();
    for (g, h) in g_pre.as_mut_slice().iter_mut().zip(acts.h.as_slice()) {
        *g *= 1.0 - h * h;
    }
    accumulate_outer(&acts.z_f, &g_pre, &mut grads.w_h, &mut grads.b_h);

    if let Some(gate) = &acts.gate {
        // Into z_f, then through z_f = gate ∘ z_c and the sigmoid.
        let mut g_gate = Matrix::zeros(b, d_c);
        for r in 0..b {
            let out = g_gate.row_mut(r);
            back_into(g_pre.row(r), &params.w_h, out);
            for ((o, z), s) in out.iter_mut().zip(acts.z_c.row(r)).zip(gate.row(r)) {
                *o *= z * s * (1.0 - s);
            }
        }
        accumulate_outer(&acts.z_c, &g_gate, &mut grads.w_f, &mut grads.b_f);
    }
    Ok(grads)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moment estimates, laid out like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = ModelParams::zeros(params.concat_dim(), params.code_bits());
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ModelParams, grads: &ParamGrads, state: &mut OptimizerState, lr: f64) -> Result<()> {
    let shape = (params.concat_dim(), params.code_bits());
    for other in [grads, &state.m, &state.v] {
        if (other.concat_dim(), other.code_bits()) != shape {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tensors ({}, {}) vs params {shape:?}",
                other.concat_dim(),
                other.code_bits()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let [pw_f, pb_f, pw_h, pb_h] = params.tensors_mut();
    let [mw_f, mb_f, mw_h, mb_h] = state.m.tensors_mut();
    let [vw_f, vb_f, vw_h, vb_h] = state.v.tensors_mut();
    let groups = [
        (pw_f, &grads.w_f, mw_f, vw_f),
        (pb_f, &grads.b_f, mb_f, vb_f),
        (pw_h, &grads.w_h, mw_h, vw_h),
        (pb_h, &grads.b_h, mb_h, vb_h),
    ];
    for (p, g, m, v) in groups {
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_m: f64,
    pub loss_q: f64,
    pub map: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,loss_total,loss_m,loss_q,map,wall_ms";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.epochs {
            let map = r.map.map(|m| m.to_string()).unwrap_or_default();
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epoch, r.loss_total, r.loss_m, r.loss_q, map, r.wall_ms
            )
            .unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv = self.to_csv();
        atomic_write(path, |w| Ok(w.write_all(csv.as_bytes())?))
    }

    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|r| r.loss_total).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub log: TrainLog,
}

impl TrainOutcome {
    pub fn checkpoint(&self, config: &TrainConfig) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            seed: config.seed,
            variant: config.variant,
            optimizer: Some(self.optimizer.clone()),
        }
    }
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(dataset, config, |_| {})
}

/// Mini-batch training. Each epoch reshuffles the training ids and drops the
/// trailing partial batch; `observe` sees every finished epoch.
pub fn train_with_observer<F>(dataset: &Dataset, config: &TrainConfig, mut observe: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord),
{
    // Zero epochs is a valid no-op here even though a stored config needs one.
    config::validate(&TrainConfig {
        epochs: config.epochs.max(1),
        ..config.clone()
    })?;
    if dataset.vision.dim() != config.vision_dim || dataset.text.dim() != config.text_dim {
        return Err(Error::DimMismatch(format!(
            "data dims ({}, {}) vs config ({}, {})",
            dataset.vision.dim(),
            dataset.text.dim(),
            config.vision_dim,
            config.text_dim
        )));
    }
    let b = config.batch_size;
    let mut train_ids = dataset.split_ids(Split::Train);
    if train_ids.len() < b {
        return Err(Error::TrainTooSmall {
            have: train_ids.len(),
            need: b,
        });
    }
    let windows = Windows::new(config.lambda, b)?;
    let weights = LossWeights::from(config);

    let mut params = init_params(config.concat_dim(), config.code_bits, config.seed);
    let mut optimizer = OptimizerState::new(&params);
    let mut log = TrainLog::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        train_ids.shuffle(&mut rng);
        let batches = train_ids.len() / b;
        let (mut sum_total, mut sum_m, mut sum_q) = (0.0, 0.0, 0.0);
        for (batch_no, batch) in train_ids.chunks_exact(b).enumerate() {
            let vision = dataset.vision.gather(batch);
            let text = dataset.text.gather(batch);
            let acts = forward_batch(&vision, &text, &params, config.variant)?;
            let phi = phi_matrix(&dataset.labels, batch, windows);
            let loss = total_loss(&acts.h, &phi, &weights)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                });
            }
            let grads = backward_batch(&acts, &loss.grad_h, &params, config.variant)?;
            adam_step(&mut params, &grads, &mut optimizer, config.learning_rate)?;
            params.round_to_f32();
            sum_total += loss.total;
            sum_m += loss.l_m;
            sum_q += loss.l_q;
        }
        let n = batches as f64;
        let map = if config.eval_each_epoch {
            Some(evaluate_model(&params, config.variant, dataset)?.map)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            loss_total: sum_total / n,
            loss_m: sum_m / n,
            loss_q: sum_q / n,
            map,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        observe(&record);
        log.epochs.push(record);
    }

    Ok(TrainOutcome {
        params,
        optimizer,
        log,
    })
}

/// Model parameters with provenance and, optionally, optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub seed: u64,
    pub variant: Variant,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    /// Parameters are stored as `f32`; they round-trip exactly when every
    /// entry is `f32`-representable, which initialization and training keep true.
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::with_capacity(22 + p.num_params() * 4);
        out.extend_from_slice(binfmt::MAGIC);
        out.push(KIND_PARAMS);
        out.extend_from_slice(&(p.concat_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(p.code_bits() as u32).to_le_bytes());
        for (_, t) in p.tensors() {
            for &v in t {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.push(self.variant.as_byte());
        match &self.optimizer {
            None => out.push(0),
            Some(state) => {
                out.push(1);
                out.extend_from_slice(&state.step.to_le_bytes());
                for moments in [&state.m, &state.v] {
                    for (_, t) in moments.tensors() {
                        for &v in t {
                            out.extend_from_slice(&v.to_le_bytes());
                        }
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.header(KIND_PARAMS)?;
        let d_c = r.u32("d_c")? as usize;
        let k = r.u32("k")? as usize;
        let n = (d_c as u128) * (d_c as u128 + k as u128 + 1) + k as u128;
        r.expect_remaining(n * 4 + 10, "parameters")?;
        let mut read_f32 = |len: usize, what: &str| -> Result<Vec<f64>> {
            (0..len).map(|_| Ok(r.f32(what)? as f64)).collect()
        };
        let w_f = read_f32(d_c * d_c, "w_f")?;
        let b_f = read_f32(d_c, "b_f")?;
        let w_h = read_f32(d_c * k, "w_h")?;
        let b_h = read_f32(k, "b_h")?;
        let params = ModelParams::from_parts(d_c, k, w_f, b_f, w_h, b_h)?;
        let seed = r.u64("seed")?;
        let variant_byte = r.u8("variant")?;
        let variant = Variant::from_byte(variant_byte)
            .ok_or_else(|| Error::ShapeMismatch(format!("unknown variant byte {variant_byte}")))?;
        let optimizer = match r.u8("optimizer flag")? {
            0 => None,
            1 => {
                let step = r.u64("step")?;
                r.expect_remaining(n * 16, "optimizer state")?;
                let mut moments = Vec::with_capacity(2);
                for _ in 0..2 {
                    let mut read_f64 = |len: usize| -> Result<Vec<f64>> {
                        (0..len).map(|_| r.f64("moment")).collect()
                    };
                    let w_f = read_f64(d_c * d_c)?;
                    let b_f = read_f64(d_c)?;
                    let w_h = read_f64(d_c * k)?;
                    let b_h = read_f64(k)?;
                    moments.push(ModelParams::from_parts(d_c, k, w_f, b_f, w_h, b_h)?);
                }
                let v = moments.pop().unwrap();
                let m = moments.pop().unwrap();
                Some(OptimizerState { m, v, step })
            }
            other => {
                return Err(Error::ShapeMismatch(format!("bad optimizer flag {other}")));
            }
        };
        r.finish()?;
        Ok(Checkpoint {
            params,
            seed,
            variant,
            optimizer,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = checkpoint.to_bytes();
    atomic_write(path, |w| Ok(w.write_all(&bytes)?))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
