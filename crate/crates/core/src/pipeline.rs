//! Glue between a trained model, binary codes and evaluation.

use crate::codes::{binarize, build_index, CodeIndex};
use crate::config::Variant;
use crate::dataio::{Dataset, EmbeddingMatrix, Split};
use crate::error::{Error, Result};
use crate::eval::{mean_average_precision, EvalResult};
use crate::matrix::Matrix;
use crate::model::{encode_relaxed, ModelParams};

/// Relaxed codes for the listed items, one row per id.
pub fn relaxed_codes(
    params: &ModelParams,
    variant: Variant,
    vision: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
    ids: &[usize],
) -> Result<Matrix> {
    if let Some(&bad) = ids.iter().find(|&&id| id >= vision.count() || id >= text.count()) {
        return Err(Error::IdOutOfRange {
            id: bad as u64,
            count: vision.count().min(text.count()),
        });
    }
    encode_relaxed(&vision.gather(ids), &text.gather(ids), params, variant)
}

/// Forward pass plus sign binarization for the listed items.
pub fn encode_items(
    params: &ModelParams,
    variant: Variant,
    vision: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
    ids: &[usize],
) -> Result<CodeIndex> {
    let h = relaxed_codes(params, variant, vision, text, ids)?;
    let mut index = build_index(
        ids.iter()
            .zip(h.iter_rows())
            .map(|(&id, row)| (id as u64, binarize(row))),
    )?;
    if index.is_empty() {
        index = CodeIndex::empty(params.code_bits());
    }
    Ok(index)
}

pub fn encode_split(
    params: &ModelParams,
    variant: Variant,
    dataset: &Dataset,
    split: Split,
) -> Result<CodeIndex> {
    encode_items(
        params,
        variant,
        &dataset.vision,
        &dataset.text,
        &dataset.split_ids(split),
    )
}

/// Encodes the query and retrieval splits and scores the query set.
pub fn evaluate_model(params: &ModelParams, variant: Variant, dataset: &Dataset) -> Result<EvalResult> {
    let db = encode_split(params, variant, dataset, Split::Retrieval)?;
    let queries = encode_split(params, variant, dataset, Split::Query)?;
    mean_average_precision(&queries, &dataset.labels, &db, &dataset.labels)
}

/// Mean over rows of `‖|h| − 1‖₂ / √k`, how far relaxed codes sit from ±1.
pub fn quantization_gap(h: &Matrix) -> f64 {
    if h.rows() == 0 {
        return 0.0;
    }
    let k = h.cols() as f64;
    h.iter_rows()
        .map(|row| row.iter().map(|x| (x.abs() - 1.0).powi(2)).sum::<f64>().sqrt() / k.sqrt())
        .sum::<f64>()
        / h.rows() as f64
}
