//! Embedding and label files, split manifests, and synthetic data.
//!
//! File layouts (all little-endian):
//!
//! ```text
//! embeddings: "MMH1" 'E' u64 count u32 dim  f32[count * dim]   row-major
//! labels:     "MMH1" 'L' u64 count u32 cats u8[count * ceil(cats / 8)]
//! ```
//!
//! Label rows are bitsets: category `c` lives in byte `c / 8`, bit `c % 8`.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};

use crate::binfmt::{self, atomic_write, ByteReader, KIND_EMBEDDINGS, KIND_LABELS};
use crate::error::{Error, Result};

/// `count` row vectors of width `dim`, stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    count: usize,
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(count: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != count * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {count}x{dim} matrix",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self { count, dim, values })
    }

    pub fn zeros(count: usize, dim: usize) -> Self {
        Self {
            count,
            dim,
            values: vec![0.0; count * dim],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Copies the listed rows into a new matrix.
    pub fn gather(&self, ids: &[usize]) -> EmbeddingMatrix {
        let mut values = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            values.extend_from_slice(self.row(id));
        }
        EmbeddingMatrix {
            count: ids.len(),
            dim: self.dim,
            values,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + self.values.len() * 4);
        out.extend_from_slice(binfmt::MAGIC);
        out.push(KIND_EMBEDDINGS);
        out.extend_from_slice(&(self.count as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.header(KIND_EMBEDDINGS)?;
        let count = r.u64("count")?;
        let dim = r.u32("dim")? as usize;
        r.expect_remaining(count as u128 * dim as u128 * 4, "embedding payload")?;
        let count = count as usize;
        let mut values = Vec::with_capacity(count * dim);
        for _ in 0..count * dim {
            values.push(r.f32("value")?);
        }
        r.finish()?;
        Self::new(count, dim, values)
    }
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let bytes = matrix.to_bytes();
    atomic_write(path, |w| Ok(w.write_all(&bytes)?))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::from_bytes(&std::fs::read(path)?)
}

/// Multi-hot category sets, one packed bitset per item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    count: usize,
    categories: usize,
    bits: Vec<u8>,
}

impl LabelMatrix {
    pub fn bytes_per_row(categories: usize) -> usize {
        categories.div_ceil(8)
    }

    /// Builds from packed rows; rejects empty rows and bits past `categories`.
    pub fn from_packed(count: usize, categories: usize, bits: Vec<u8>) -> Result<Self> {
        let stride = Self::bytes_per_row(categories);
        if bits.len() != count * stride {
            return Err(Error::ShapeMismatch(format!(
                "{} label bytes for {count} rows of {stride}",
                bits.len()
            )));
        }
        let out = Self {
            count,
            categories,
            bits,
        };
        for i in 0..count {
            let row = out.row(i);
            if row.iter().all(|&b| b == 0) {
                return Err(Error::EmptyLabelRow(i));
            }
            if categories % 8 != 0 && row[stride - 1] >> (categories % 8) != 0 {
                return Err(Error::ShapeMismatch(format!(
                    "label row {i} sets a bit past category {categories}"
                )));
            }
        }
        Ok(out)
    }

    /// Builds from per-item lists of category indices.
    pub fn from_lists(categories: usize, lists: &[Vec<usize>]) -> Result<Self> {
        let stride = Self::bytes_per_row(categories);
        let mut bits = vec![0u8; lists.len() * stride];
        for (i, list) in lists.iter().enumerate() {
            for &c in list {
                if c >= categories {
                    return Err(Error::ShapeMismatch(format!(
                        "category {c} out of range for {categories}"
                    )));
                }
                bits[i * stride + c / 8] |= 1 << (c % 8);
            }
        }
        Self::from_packed(lists.len(), categories, bits)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let stride = Self::bytes_per_row(self.categories);
        &self.bits[i * stride..(i + 1) * stride]
    }

    pub fn has(&self, i: usize, category: usize) -> bool {
        self.row(i)[category / 8] >> (category % 8) & 1 == 1
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + self.bits.len());
        out.extend_from_slice(binfmt::MAGIC);
        out.push(KIND_LABELS);
        out.extend_from_slice(&(self.count as u64).to_le_bytes());
        out.extend_from_slice(&(self.categories as u32).to_le_bytes());
        out.extend_from_slice(&self.bits);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.header(KIND_LABELS)?;
        let count = r.u64("count")?;
        let categories = r.u32("categories")? as usize;
        let stride = Self::bytes_per_row(categories);
        r.expect_remaining(count as u128 * stride as u128, "label payload")?;
        let bits = r.take(count as usize * stride, "label payload")?.to_vec();
        r.finish()?;
        Self::from_packed(count as usize, categories, bits)
    }
}

pub fn write_labels(matrix: &LabelMatrix, path: &Path) -> Result<()> {
    let bytes = matrix.to_bytes();
    atomic_write(path, |w| Ok(w.write_all(&bytes)?))
}

pub fn read_labels(path: &Path) -> Result<LabelMatrix> {
    LabelMatrix::from_bytes(&std::fs::read(path)?)
}

/// Train / retrieval / query id lists. Query and retrieval never overlap.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitManifest {
    pub train: Vec<u64>,
    pub retrieval: Vec<u64>,
    pub query: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Retrieval,
    Query,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "retrieval" => Ok(Split::Retrieval),
            "query" => Ok(Split::Query),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

impl SplitManifest {
    pub fn ids(&self, split: Split) -> &[u64] {
        match split {
            Split::Train => &self.train,
            Split::Retrieval => &self.retrieval,
            Split::Query => &self.query,
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.retrieval.len(), self.query.len())
    }

    /// Checks disjointness of query/retrieval and that ids fit `item_count`.
    pub fn check(&self, item_count: usize) -> Result<()> {
        let mut in_retrieval = vec![false; item_count];
        for &id in self.train.iter().chain(&self.retrieval).chain(&self.query) {
            if id >= item_count as u64 {
                return Err(Error::IdOutOfRange {
                    id,
                    count: item_count,
                });
            }
        }
        for &id in &self.retrieval {
            in_retrieval[id as usize] = true;
        }
        if let Some(&id) = self.query.iter().find(|&&id| in_retrieval[id as usize]) {
            return Err(Error::OverlapQueryRetrieval(id));
        }
        Ok(())
    }

    /// Parses the section format: `train:`, `retrieval:` and `query:` lines,
    /// each followed by whitespace-separated ids (same line or following
    /// lines, up to the next section).
    pub fn parse(text: &str) -> Result<SplitManifest> {
        let mut out = SplitManifest::default();
        let mut seen = [false; 3];
        let mut current: Option<Split> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let mut rest = raw.trim();
            if rest.is_empty() || rest.starts_with('#') {
                continue;
            }
            if let Some((head, tail)) = rest.split_once(':') {
                let split: Split = head.trim().parse().map_err(|message| Error::ManifestSyntax {
                    line: line_no,
                    message,
                })?;
                let slot = split as usize;
                if seen[slot] {
                    return Err(Error::ManifestSyntax {
                        line: line_no,
                        message: format!("section `{}` repeated", head.trim()),
                    });
                }
                seen[slot] = true;
                current = Some(split);
                rest = tail;
            }
            let Some(split) = current else {
                return Err(Error::ManifestSyntax {
                    line: line_no,
                    message: "ids before any section header".into(),
                });
            };
            let list = match split {
                Split::Train => &mut out.train,
                Split::Retrieval => &mut out.retrieval,
                Split::Query => &mut out.query,
            };
            for tok in rest.split_whitespace() {
                list.push(tok.parse().map_err(|_| Error::ManifestSyntax {
                    line: line_no,
                    message: format!("`{tok}` is not a decimal id"),
                })?);
            }
        }
        if let Some(missing) = ["train", "retrieval", "query"]
            .iter()
            .zip(seen)
            .find(|(_, s)| !s)
        {
            return Err(Error::ManifestSyntax {
                line: 0,
                message: format!("missing `{}:` section", missing.0),
            });
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, ids) in [
            ("train", &self.train),
            ("retrieval", &self.retrieval),
            ("query", &self.query),
        ] {
            s.push_str(name);
            s.push(':');
            for id in ids {
                write!(s, " {id}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Reads a manifest and checks it against a file of `item_count` items.
pub fn load_manifest(path: &Path, item_count: usize) -> Result<SplitManifest> {
    let m = SplitManifest::parse(&std::fs::read_to_string(path)?)?;
    m.check(item_count)?;
    Ok(m)
}

pub fn write_manifest(manifest: &SplitManifest, path: &Path) -> Result<()> {
    let text = manifest.to_text();
    atomic_write(path, |w| Ok(w.write_all(text.as_bytes())?))
}

/// Paired vision/text embeddings with labels and splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vision: EmbeddingMatrix,
    pub text: EmbeddingMatrix,
    pub labels: LabelMatrix,
    pub manifest: SplitManifest,
}

/// Standard file names inside a data directory.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub vision: PathBuf,
    pub text: PathBuf,
    pub labels: PathBuf,
    pub manifest: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            vision: dir.join("vision.emb"),
            text: dir.join("text.emb"),
            labels: dir.join("labels.lbl"),
            manifest: dir.join("manifest.txt"),
        }
    }
}

impl Dataset {
    pub fn new(
        vision: EmbeddingMatrix,
        text: EmbeddingMatrix,
        labels: LabelMatrix,
        manifest: SplitManifest,
    ) -> Result<Self> {
        if vision.count() != text.count() || vision.count() != labels.count() {
            return Err(Error::DimMismatch(format!(
                "item counts differ: vision {}, text {}, labels {}",
                vision.count(),
                text.count(),
                labels.count()
            )));
        }
        manifest.check(vision.count())?;
        Ok(Self {
            vision,
            text,
            labels,
            manifest,
        })
    }

    pub fn load(paths: &DatasetPaths) -> Result<Self> {
        let vision = read_embeddings(&paths.vision)?;
        let text = read_embeddings(&paths.text)?;
        let labels = read_labels(&paths.labels)?;
        let manifest = SplitManifest::parse(&std::fs::read_to_string(&paths.manifest)?)?;
        Self::new(vision, text, labels, manifest)
    }

    pub fn save(&self, paths: &DatasetPaths) -> Result<()> {
        write_embeddings(&self.vision, &paths.vision)?;
        write_embeddings(&self.text, &paths.text)?;
        write_labels(&self.labels, &paths.labels)?;
        write_manifest(&self.manifest, &paths.manifest)
    }

    pub fn count(&self) -> usize {
        self.vision.count()
    }

    pub fn split_ids(&self, split: Split) -> Vec<usize> {
        self.manifest
            .ids(split)
            .iter()
            .map(|&id| id as usize)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub clusters: usize,
    pub per_cluster: usize,
    pub dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            clusters: 4,
            per_cluster: 100,
            dim: 32,
            noise: 0.1,
            seed: 42,
        }
    }
}

/// Per-cluster split sizes: (train, retrieval, query).
pub fn synthetic_split_sizes(per_cluster: usize) -> (usize, usize, usize) {
    let query = ((per_cluster as f64 * 0.1).round() as usize).max(1);
    let retrieval = ((per_cluster as f64 * 0.3).round() as usize).max(1);
    (per_cluster - query - retrieval, retrieval, query)
}

/// Gaussian clusters around random unit-norm centers, one center per cluster
/// and modality. Items are laid out cluster by cluster; within a cluster the
/// first 60% go to train, the next 30% to retrieval and the last 10% to query.
/// Labels are the one-hot cluster id.
pub fn generate_synthetic(p: &SynthParams) -> Result<Dataset> {
    let bad = |field: &'static str, reason: &str| Error::ConfigInvalid {
        field,
        reason: reason.into(),
    };
    if p.clusters < 2 {
        return Err(bad("clusters", "need at least 2 clusters"));
    }
    if p.per_cluster < 4 {
        return Err(bad("per_cluster", "need at least 4 items per cluster"));
    }
    if p.dim == 0 {
        return Err(bad("dim", "must be at least 1"));
    }
    if !(p.noise >= 0.0 && p.noise.is_finite()) {
        return Err(bad("noise", "must be finite and >= 0"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let unit_center = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..p.dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    };
    let vision_centers: Vec<Vec<f64>> = (0..p.clusters).map(|_| unit_center(&mut rng)).collect();
    let text_centers: Vec<Vec<f64>> = (0..p.clusters).map(|_| unit_center(&mut rng)).collect();

    let noise = Normal::new(0.0, p.noise).expect("noise validated above");
    let total = p.clusters * p.per_cluster;
    let mut vision = Vec::with_capacity(total * p.dim);
    let mut text = Vec::with_capacity(total * p.dim);
    let mut lists = Vec::with_capacity(total);
    let mut manifest = SplitManifest::default();
    let (n_train, n_retrieval, _) = synthetic_split_sizes(p.per_cluster);

    for c in 0..p.clusters {
        for j in 0..p.per_cluster {
            for (out, center) in [(&mut vision, &vision_centers[c]), (&mut text, &text_centers[c])] {
                for &x in center {
                    let v = if p.noise == 0.0 {
                        x
                    } else {
                        x + rng.sample(noise)
                    };
                    out.push(v as f32);
                }
            }
            lists.push(vec![c]);
            let id = (c * p.per_cluster + j) as u64;
            if j < n_train {
                manifest.train.push(id);
            } else if j < n_train + n_retrieval {
                manifest.retrieval.push(id);
            } else {
                manifest.query.push(id);
            }
        }
    }

    Dataset::new(
        EmbeddingMatrix::new(total, p.dim, vision)?,
        EmbeddingMatrix::new(total, p.dim, text)?,
        LabelMatrix::from_lists(p.clusters, &lists)?,
        manifest,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn zero_matrix_file_size() {
        let m = EmbeddingMatrix::zeros(2, 3);
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), 4 + 1 + 8 + 4 + 24);
        assert_eq!(EmbeddingMatrix::from_bytes(&bytes).unwrap(), m);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = EmbeddingMatrix::zeros(2, 3).to_bytes();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bad),
            Err(Error::BadMagic { .. })
        ));
        bytes.pop();
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(Error::TruncatedFile(_))
        ));
    }

    #[test]
    fn declared_size_must_match_length() {
        let bytes = EmbeddingMatrix::zeros(3, 4).to_bytes();
        let mut longer = bytes.clone();
        longer.extend_from_slice(&[0; 4]);
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&longer),
            Err(Error::TrailingBytes(4))
        ));
        // A header claiming an enormous payload fails before allocating.
        let mut huge = bytes.clone();
        huge[5..13].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&huge),
            Err(Error::TruncatedFile(_))
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let mut bytes = EmbeddingMatrix::zeros(2, 2).to_bytes();
        bytes[17 + 3 * 4..17 + 4 * 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(Error::NonFiniteValue { row: 1, col: 1 })
        ));
        assert!(EmbeddingMatrix::new(1, 1, vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn full_scale_header() {
        let m = EmbeddingMatrix::zeros(25996, 512);
        let back = EmbeddingMatrix::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!((back.count(), back.dim()), (25996, 512));
    }

    #[test]
    fn label_bit_order() {
        let m = LabelMatrix::from_lists(24, &[vec![0, 2]]).unwrap();
        assert_eq!(LabelMatrix::bytes_per_row(24), 3);
        assert_eq!(m.row(0), &[0b0000_0101, 0, 0]);
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), 17 + 3);
        assert_eq!(bytes[17], 5);
        assert!(m.has(0, 2) && !m.has(0, 1));
        assert_eq!(LabelMatrix::from_bytes(&bytes).unwrap(), m);
    }

    #[test]
    fn empty_label_row_rejected() {
        assert!(matches!(
            LabelMatrix::from_lists(24, &[vec![1], vec![]]),
            Err(Error::EmptyLabelRow(1))
        ));
        let mut bytes = LabelMatrix::from_lists(24, &[vec![1]]).unwrap().to_bytes();
        bytes[17] = 0;
        assert!(matches!(
            LabelMatrix::from_bytes(&bytes),
            Err(Error::EmptyLabelRow(0))
        ));
    }

    #[test]
    fn padding_bits_must_be_zero() {
        assert!(LabelMatrix::from_packed(1, 3, vec![0b1000_0001]).is_err());
        assert!(LabelMatrix::from_packed(1, 3, vec![0b0000_0100]).is_ok());
    }

    fn manifest_with_sizes(train: usize, retrieval: usize, query: usize) -> (String, usize) {
        // Query ids first, then retrieval; train is drawn from the retrieval range.
        let q: Vec<u64> = (0..query as u64).collect();
        let r: Vec<u64> = (query as u64..(query + retrieval) as u64).collect();
        let t: Vec<u64> = r.iter().take(train).copied().collect();
        let m = SplitManifest {
            train: t,
            retrieval: r,
            query: q,
        };
        (m.to_text(), query + retrieval)
    }

    #[test]
    fn benchmark_manifest_sizes() {
        let dir = tempfile::tempdir().unwrap();
        for (sizes, name) in [
            ((5000, 17772, 2243), "mirflickr"),
            ((21000, 193749, 2085), "nuswide"),
        ] {
            let (text, count) = manifest_with_sizes(sizes.0, sizes.1, sizes.2);
            let path = dir.path().join(name);
            std::fs::write(&path, text).unwrap();
            assert_eq!(load_manifest(&path, count).unwrap().sizes(), sizes);
        }
    }

    #[test]
    fn manifest_errors() {
        let overlap = "train: 1 2\nretrieval: 3 7\nquery: 7 9\n";
        assert!(matches!(
            SplitManifest::parse(overlap).unwrap().check(10),
            Err(Error::OverlapQueryRetrieval(7))
        ));
        let ok = SplitManifest::parse("train: 1\nretrieval: 2\nquery: 3\n").unwrap();
        assert!(matches!(
            ok.check(3),
            Err(Error::IdOutOfRange { id: 3, count: 3 })
        ));
        assert!(SplitManifest::parse("train: 1\nretrieval: 2\n").is_err());
        assert!(SplitManifest::parse("train: x\nretrieval:\nquery:\n").is_err());
        assert!(SplitManifest::parse("5\ntrain:\nretrieval:\nquery:\n").is_err());
    }

    #[test]
    fn manifest_multi_line_sections() {
        let text = "train:\n0 1\n2\nretrieval: 3\n4\nquery:\n5\n";
        let m = SplitManifest::parse(text).unwrap();
        assert_eq!(m.train, vec![0, 1, 2]);
        assert_eq!(m.retrieval, vec![3, 4]);
        assert_eq!(m.query, vec![5]);
        assert_eq!(SplitManifest::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn synthetic_zero_noise_matches_centers() {
        let d = generate_synthetic(&SynthParams {
            clusters: 3,
            per_cluster: 5,
            dim: 4,
            noise: 0.0,
            seed: 1,
        })
        .unwrap();
        for m in [&d.vision, &d.text] {
            for c in 0..3 {
                let first = m.row(c * 5);
                let norm: f32 = first.iter().map(|x| x * x).sum::<f32>().sqrt();
                assert!((norm - 1.0).abs() < 1e-6);
                for j in 1..5 {
                    assert_eq!(m.row(c * 5 + j), first);
                }
            }
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let p = SynthParams::default();
        let a = generate_synthetic(&p).unwrap();
        let b = generate_synthetic(&p).unwrap();
        assert_eq!(a.vision.to_bytes(), b.vision.to_bytes());
        assert_eq!(a.text.to_bytes(), b.text.to_bytes());
        assert_eq!(a.labels.to_bytes(), b.labels.to_bytes());
        assert_eq!(a.manifest.to_text(), b.manifest.to_text());
        let c = generate_synthetic(&SynthParams { seed: 43, ..p }).unwrap();
        assert_ne!(a.vision, c.vision);
    }

    #[test]
    fn synthetic_counts() {
        let d = generate_synthetic(&SynthParams::default()).unwrap();
        assert_eq!(d.count(), 400);
        assert_eq!(d.manifest.sizes(), (240, 120, 40));
        // Every query's relevant set is exactly its own cluster's retrieval items.
        for &q in &d.manifest.query {
            let cluster = q as usize / 100;
            let relevant: Vec<u64> = d
                .manifest
                .retrieval
                .iter()
                .copied()
                .filter(|&r| d.labels.row(r as usize) == d.labels.row(q as usize))
                .collect();
            assert_eq!(relevant.len(), 30);
            assert!(relevant.iter().all(|&r| r as usize / 100 == cluster));
        }
    }

    #[test]
    fn synthetic_preconditions() {
        let base = SynthParams::default();
        for p in [
            SynthParams { clusters: 1, ..base },
            SynthParams { per_cluster: 3, ..base },
            SynthParams { noise: -0.5, ..base },
        ] {
            assert!(generate_synthetic(&p).is_err(), "{p:?}");
        }
        assert_eq!(synthetic_split_sizes(4), (2, 1, 1));
    }

    #[test]
    fn synthetic_output_reloads() {
        let dir = tempfile::tempdir().unwrap();
        for (clusters, per_cluster, dim, noise) in [(2, 4, 1, 0.0), (5, 13, 7, 0.5), (3, 40, 16, 2.0)] {
            let d = generate_synthetic(&SynthParams {
                clusters,
                per_cluster,
                dim,
                noise,
                seed: 3,
            })
            .unwrap();
            let paths = DatasetPaths::in_dir(dir.path());
            d.save(&paths).unwrap();
            assert_eq!(Dataset::load(&paths).unwrap(), d);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn embedding_round_trip(count in 0usize..6, dim in 1usize..9, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f32> = (0..count * dim)
                .map(|_| f32::from_bits(rng.random::<u32>() & 0xBF7F_FFFF))
                .collect();
            let m = EmbeddingMatrix::new(count, dim, values).unwrap();
            let back = EmbeddingMatrix::from_bytes(&m.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), m.to_bytes());
        }

        #[test]
        fn label_round_trip(categories in 1usize..40, rows in prop::collection::vec(any::<u64>(), 1..8)) {
            let lists: Vec<Vec<usize>> = rows
                .iter()
                .map(|&r| {
                    let mut l: Vec<usize> = (0..categories).filter(|c| r >> (c % 64) & 1 == 1).collect();
                    if l.is_empty() {
                        l.push((r % categories as u64) as usize);
                    }
                    l
                })
                .collect();
            let m = LabelMatrix::from_lists(categories, &lists).unwrap();
            prop_assert_eq!(LabelMatrix::from_bytes(&m.to_bytes()).unwrap(), m);
        }
    }
}
