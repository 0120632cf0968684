//! Mean Average Precision over full Hamming rankings.
//!
//! An item is relevant to a query when their label sets intersect. AP uses
//! the whole ranking (no cutoff) and `R` is the number of relevant items in
//! the retrieval set. Queries with `R = 0` are left out of the mean and
//! reported in [`EvalResult::skipped`].

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::binfmt::atomic_write;
use crate::codes::{search, CodeIndex};
use crate::config::{TrainConfig, Variant};
use crate::dataio::{Dataset, LabelMatrix};
use crate::error::{Error, Result};
use crate::loss::similarity_indicator;
use crate::pipeline::evaluate_model;
use crate::trainer::train;

pub fn relevance(query_labels: &[u8], item_labels: &[u8]) -> bool {
    similarity_indicator(query_labels, item_labels) == 1
}

/// `(1/R) Σ precision@p` over the relevant positions `p`; 0 when `R = 0`.
pub fn average_precision(ranked_relevance: &[bool], total_relevant: usize) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, _) in ranked_relevance.iter().enumerate().filter(|(_, r)| **r) {
        hits += 1;
        sum += hits as f64 / (pos + 1) as f64;
    }
    if hits != total_relevant {
        return Err(Error::RelevantCountMismatch {
            expected: total_relevant,
            found: hits,
        });
    }
    if total_relevant == 0 {
        return Ok(0.0);
    }
    Ok(sum / total_relevant as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub map: f64,
    /// `(query id, AP)` for every query with at least one relevant item, in query order.
    pub per_query: Vec<(u64, f64)>,
    /// Queries with no relevant item in the retrieval set.
    pub skipped: Vec<u64>,
    pub retrieval_size: usize,
    pub bits: usize,
}

impl EvalResult {
    pub fn num_queries(&self) -> usize {
        self.per_query.len()
    }

    pub fn per_query_csv(&self) -> String {
        let mut s = String::from("query_id,ap\n");
        for (id, ap) in &self.per_query {
            writeln!(s, "{id},{ap}").unwrap();
        }
        s
    }

    pub fn summary_line(&self) -> String {
        format!(
            "map={} queries={} skipped={} retrieval={} bits={}",
            self.map,
            self.num_queries(),
            self.skipped.len(),
            self.retrieval_size,
            self.bits
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv = self.per_query_csv();
        atomic_write(path, |w| Ok(w.write_all(csv.as_bytes())?))
    }
}

fn label_row(labels: &LabelMatrix, id: u64) -> Result<&[u8]> {
    if id >= labels.count() as u64 {
        return Err(Error::IdOutOfRange {
            id,
            count: labels.count(),
        });
    }
    Ok(labels.row(id as usize))
}

/// Ranks the database for every query and averages AP over queries with a
/// relevant item. Query and database ids index into their label matrices.
pub fn mean_average_precision(
    queries: &CodeIndex,
    query_labels: &LabelMatrix,
    database: &CodeIndex,
    db_labels: &LabelMatrix,
) -> Result<EvalResult> {
    if !queries.is_empty() && !database.is_empty() && queries.bits() != database.bits() {
        return Err(Error::WidthMismatch {
            left: database.bits(),
            right: queries.bits(),
        });
    }
    for &id in database.ids() {
        label_row(db_labels, id)?;
    }
    for &id in queries.ids() {
        label_row(query_labels, id)?;
    }

    let aps: Vec<(u64, Option<f64>)> = (0..queries.len())
        .into_par_iter()
        .map(|q| -> Result<(u64, Option<f64>)> {
            let qid = queries.ids()[q];
            let q_labels = query_labels.row(qid as usize);
            let ranked = search(database, &queries.code(q))?;
            let rel: Vec<bool> = ranked
                .iter()
                .map(|&(id, _)| relevance(q_labels, db_labels.row(id as usize)))
                .collect();
            let total = rel.iter().filter(|r| **r).count();
            if total == 0 {
                return Ok((qid, None));
            }
            Ok((qid, Some(average_precision(&rel, total)?)))
        })
        .collect::<Result<_>>()?;

    let mut per_query = Vec::with_capacity(aps.len());
    let mut skipped = Vec::new();
    for (id, ap) in aps {
        match ap {
            Some(ap) => per_query.push((id, ap)),
            None => skipped.push(id),
        }
    }
    if per_query.is_empty() {
        return Err(Error::ZeroQueries);
    }
    let map = per_query.iter().map(|(_, ap)| ap).sum::<f64>() / per_query.len() as f64;
    Ok(EvalResult {
        map,
        per_query,
        skipped,
        retrieval_size: database.len(),
        bits: database.bits(),
    })
}

/// mAP grid: one row per variant, one column per code width.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub bits: Vec<usize>,
    pub rows: Vec<(Variant, Vec<f64>)>,
}

impl AblationReport {
    pub fn cell(&self, variant: Variant, bits: usize) -> Option<f64> {
        let col = self.bits.iter().position(|&b| b == bits)?;
        let (_, row) = self.rows.iter().find(|(v, _)| *v == variant)?;
        row.get(col).copied()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant");
        for b in &self.bits {
            write!(s, ",{b}_bits").unwrap();
        }
        s.push('\n');
        for (variant, cells) in &self.rows {
            s.push_str(variant.name());
            for m in cells {
                write!(s, ",{m}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv = self.to_csv();
        atomic_write(path, |w| Ok(w.write_all(csv.as_bytes())?))
    }
}

/// Trains and scores every variant at every width with the same seed.
/// Rows follow [`Variant::ALL`]: text only, vision only, concat only, full.
pub fn ablation_report(dataset: &Dataset, config: &TrainConfig, bit_list: &[usize]) -> Result<AblationReport> {
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let mut cells = Vec::with_capacity(bit_list.len());
        for &bits in bit_list {
            let c = TrainConfig {
                code_bits: bits,
                variant,
                eval_each_epoch: false,
                ..config.clone()
            };
            let outcome = train(dataset, &c)?;
            cells.push(evaluate_model(&outcome.params, variant, dataset)?.map);
        }
        rows.push((variant, cells));
    }
    Ok(AblationReport {
        bits: bit_list.to_vec(),
        rows,
    })
}
