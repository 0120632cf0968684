//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use mmhash::config::Variant;
use mmhash::dataio::{EmbeddingMatrix, LabelMatrix};
use mmhash::loss::{phi_matrix, total_loss, LossWeights, Windows};
use mmhash::matrix::Matrix;
use mmhash::model::{forward_batch, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative error used by every gradient check.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest relative error over coordinates whose analytic gradient exceeds `floor`,
/// plus how many coordinates were compared.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (a, n) in analytic.iter().zip(numeric) {
        if a.abs() > floor {
            worst = worst.max(rel_err(*a, *n));
            checked += 1;
        }
    }
    (worst, checked)
}

/// A `b x k` matrix of values in (-1, 1), as tanh outputs would be.
pub fn random_codes(rng: &mut ChaCha8Rng, b: usize, k: usize) -> Matrix {
    Matrix::from_vec(b, k, (0..b * k).map(|_| rng.random_range(-2.0f64..2.0).tanh()).collect())
}

pub fn random_phi(rng: &mut ChaCha8Rng, m: usize) -> Matrix {
    Matrix::from_vec(m, m, (0..m * m).map(|_| rng.random_bool(0.5) as u8 as f64).collect())
}

pub fn random_embeddings(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> EmbeddingMatrix {
    let vals = (0..rows * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    EmbeddingMatrix::new(rows, dim, vals).unwrap()
}

/// Random label lists over `categories`, each item carrying 1..=3 labels.
pub fn random_label_lists(rng: &mut ChaCha8Rng, n: usize, categories: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|_| {
            let count = rng.random_range(1..=3usize.min(categories));
            let mut l: Vec<usize> = Vec::new();
            while l.len() < count {
                let c = rng.random_range(0..categories);
                if !l.contains(&c) {
                    l.push(c);
                }
            }
            l.sort_unstable();
            l
        })
        .collect()
}

/// Flattens params in checkpoint order.
pub fn flatten(p: &ModelParams) -> Vec<f64> {
    p.tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect()
}

pub fn unflatten(like: &ModelParams, flat: &[f64]) -> ModelParams {
    let mut p = like.clone();
    let mut at = 0;
    for t in p.tensors_mut() {
        let n = t.len();
        t.copy_from_slice(&flat[at..at + n]);
        at += n;
    }
    p
}

/// Total loss of a batch through the full forward pass.
pub fn pipeline_loss(
    params: &ModelParams,
    vision: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
    labels: &LabelMatrix,
    weights: &LossWeights,
    variant: Variant,
) -> f64 {
    let ids: Vec<usize> = (0..vision.count()).collect();
    let windows = Windows::new(weights.lambda, vision.count()).unwrap();
    let phi = phi_matrix(labels, &ids, windows);
    let acts = forward_batch(vision, text, params, variant).unwrap();
    total_loss(&acts.h, &phi, weights).unwrap().total
}

pub fn naive_hamming(a: &[bool], b: &[bool]) -> u32 {
    assert_eq!(a.len(), b.len());
    let mut d = 0;
    for j in 0..a.len() {
        if a[j] != b[j] {
            d += 1;
        }
    }
    d
}

/// One item for the brute-force mAP: id, unpacked code bits, label list.
pub struct Item {
    pub id: u64,
    pub bits: Vec<bool>,
    pub labels: Vec<usize>,
}

/// Textbook mAP: naive distances, stable sort on (distance, id), AP as the
/// mean of precision at each relevant rank. Queries with no relevant item
/// are left out.
pub fn brute_force_map(queries: &[Item], db: &[Item]) -> f64 {
    let mut aps = Vec::new();
    for q in queries {
        let mut scored: Vec<(u32, u64, bool)> = db
            .iter()
            .map(|item| {
                let relevant = q.labels.iter().any(|l| item.labels.contains(l));
                (naive_hamming(&q.bits, &item.bits), item.id, relevant)
            })
            .collect();
        scored.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        let total = scored.iter().filter(|s| s.2).count();
        if total == 0 {
            continue;
        }
        let mut hits = 0;
        let mut precisions = Vec::new();
        for (rank, s) in scored.iter().enumerate() {
            if s.2 {
                hits += 1;
                precisions.push(hits as f64 / (rank + 1) as f64);
            }
        }
        aps.push(precisions.iter().sum::<f64>() / total as f64);
    }
    aps.iter().sum::<f64>() / aps.len() as f64
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mmhash")
}

/// Runs the CLI single-threaded.
pub fn mmhash(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("MMHASH_THREADS", "1")
        .output()
        .expect("spawn mmhash")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn parse_map(stdout: &[u8]) -> f64 {
    let text = String::from_utf8_lossy(stdout);
    let line = text
        .lines()
        .find(|l| l.starts_with("map="))
        .unwrap_or_else(|| panic!("no map= line in {text}"));
    line["map=".len()..]
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap()
}
