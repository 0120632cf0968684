//! Pairwise metric loss and quantization loss over a batch of relaxed codes.
//!
//! With batch size `b` and window `m = lambda * b`, the metric loss compares
//! every row of the first window `[0, m)` against every row of the second
//! window `[b - m, b)`:
//!
//! ```text
//! theta_ij = h_i · h_j
//! L_m = 1/m² Σ_ij [ delta * softplus(theta_ij) - phi_ij * theta_ij ]
//! L_q = 1/b  Σ_{i in I} ‖ |h_i| - 1 ‖₂          I = first ∪ second window
//! L   = L_m + mu * L_q
//! ```
//!
//! Rows may sit in both windows when `lambda > 0.5`; they then collect both
//! gradient contributions, and pairs with `i == j` are kept.

use crate::dataio::LabelMatrix;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::model::sigmoid;

/// Guards the norm in the quantization gradient at `|h| = 1`.
pub const QUANT_EPS: f64 = 1e-12;

/// 1 when two label sets share a category.
pub fn similarity_indicator(labels_i: &[u8], labels_j: &[u8]) -> u8 {
    labels_i.iter().zip(labels_j).any(|(a, b)| a & b != 0) as u8
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Size of each loss window, `lambda * b`, which must be a whole number >= 1.
pub fn window_size(lambda: f64, batch: usize) -> Result<usize> {
    let w = lambda * batch as f64;
    if !(lambda > 0.0 && lambda <= 1.0) || w.round() < 1.0 || (w - w.round()).abs() >= 1e-9 {
        return Err(Error::NonIntegralWindow(w));
    }
    Ok(w.round() as usize)
}

/// Row indices of the two windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Windows {
    pub batch: usize,
    pub size: usize,
}

impl Windows {
    pub fn new(lambda: f64, batch: usize) -> Result<Self> {
        Ok(Self {
            batch,
            size: window_size(lambda, batch)?,
        })
    }

    pub fn first(&self) -> std::ops::Range<usize> {
        0..self.size
    }

    pub fn second(&self) -> std::ops::Range<usize> {
        self.batch - self.size..self.batch
    }

    /// The index set of the quantization loss: the union of both windows.
    pub fn contains(&self, row: usize) -> bool {
        row < self.size || row >= self.batch - self.size
    }
}

/// Θ and Φ for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseTerms {
    /// `m x m`; entry `(a, c)` pairs first-window row `a` with second-window row `b - m + c`.
    pub theta: Matrix,
    pub phi: Matrix,
}

pub fn theta_matrix(h: &Matrix, windows: Windows) -> Matrix {
    let m = windows.size;
    let mut theta = Matrix::zeros(m, m);
    for (a, i) in windows.first().enumerate() {
        for (c, j) in windows.second().enumerate() {
            theta.set(a, c, dot(h.row(i), h.row(j)));
        }
    }
    theta
}

/// Φ for a batch whose rows are the items `batch_ids` of `labels`.
pub fn phi_matrix(labels: &LabelMatrix, batch_ids: &[usize], windows: Windows) -> Matrix {
    let m = windows.size;
    let mut phi = Matrix::zeros(m, m);
    for (a, i) in windows.first().enumerate() {
        for (c, j) in windows.second().enumerate() {
            let s = similarity_indicator(labels.row(batch_ids[i]), labels.row(batch_ids[j]));
            phi.set(a, c, s as f64);
        }
    }
    phi
}

pub fn pairwise_terms(
    h: &Matrix,
    labels: &LabelMatrix,
    batch_ids: &[usize],
    lambda: f64,
) -> Result<PairwiseTerms> {
    let windows = Windows::new(lambda, h.rows())?;
    Ok(PairwiseTerms {
        theta: theta_matrix(h, windows),
        phi: phi_matrix(labels, batch_ids, windows),
    })
}

/// Metric loss value and its gradient with respect to `h`.
pub fn metric_loss(h: &Matrix, phi: &Matrix, delta: f64, lambda: f64) -> Result<(f64, Matrix)> {
    let windows = Windows::new(lambda, h.rows())?;
    let m = windows.size;
    if phi.shape() != (m, m) {
        return Err(Error::ShapeMismatch(format!(
            "phi is {:?}, windows need {m}x{m}",
            phi.shape()
        )));
    }
    let norm = 1.0 / (m * m) as f64;
    let k = h.cols();
    let mut value = 0.0;
    let mut grad = Matrix::zeros(h.rows(), k);
    for (a, i) in windows.first().enumerate() {
        for (c, j) in windows.second().enumerate() {
            let theta = dot(h.row(i), h.row(j));
            let p = phi.get(a, c);
            value += delta * softplus(theta) - p * theta;
            let d_theta = (delta * sigmoid(theta) - p) * norm;
            if d_theta == 0.0 {
                continue;
            }
            for col in 0..k {
                let hi = h.get(i, col);
                let hj = h.get(j, col);
                let gi = grad.get(i, col) + d_theta * hj;
                grad.set(i, col, gi);
                let gj = grad.get(j, col) + d_theta * hi;
                grad.set(j, col, gj);
            }
        }
    }
    Ok((value * norm, grad))
}

/// Quantization loss value and its gradient with respect to `h`.
pub fn quantization_loss(h: &Matrix, lambda: f64) -> Result<(f64, Matrix)> {
    let b = h.rows();
    let windows = Windows::new(lambda, b)?;
    let scale = 1.0 / b as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(b, h.cols());
    for i in (0..b).filter(|&i| windows.contains(i)) {
        let row = h.row(i);
        let norm = row
            .iter()
            .map(|x| (x.abs() - 1.0).powi(2))
            .sum::<f64>()
            .sqrt();
        value += norm;
        let denom = norm.max(QUANT_EPS);
        for (g, &x) in grad.row_mut(i).iter_mut().zip(row) {
            let sign = if x >= 0.0 { 1.0 } else { -1.0 };
            *g = scale * (x.abs() - 1.0) * sign / denom;
        }
    }
    Ok((value * scale, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub delta: f64,
    pub mu: f64,
}

impl From<&crate::config::TrainConfig> for LossWeights {
    fn from(c: &crate::config::TrainConfig) -> Self {
        Self {
            lambda: c.lambda,
            delta: c.delta,
            mu: c.mu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l_m: f64,
    pub l_q: f64,
    pub total: f64,
    /// ∂total/∂h, `b x k`.
    pub grad_h: Matrix,
}

pub fn total_loss(h: &Matrix, phi: &Matrix, w: &LossWeights) -> Result<LossBreakdown> {
    let (l_m, mut grad_h) = metric_loss(h, phi, w.delta, w.lambda)?;
    let (l_q, grad_q) = quantization_loss(h, w.lambda)?;
    if w.mu != 0.0 {
        for (g, q) in grad_h.as_mut_slice().iter_mut().zip(grad_q.as_slice()) {
            *g += w.mu * q;
        }
    }
    Ok(LossBreakdown {
        l_m,
        l_q,
        total: l_m + w.mu * l_q,
        grad_h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(lists: &[Vec<usize>]) -> LabelMatrix {
        LabelMatrix::from_lists(8, lists).unwrap()
    }

    #[test]
    fn similarity_examples() {
        let m = labels(&[vec![0], vec![0, 1], vec![1], vec![0, 3]]);
        assert_eq!(similarity_indicator(m.row(0), m.row(1)), 1);
        assert_eq!(similarity_indicator(m.row(0), m.row(2)), 0);
        assert_eq!(similarity_indicator(m.row(3), m.row(3)), 1);
    }

    #[test]
    fn orthogonal_similar_pair_is_ln2() {
        let h = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let phi = Matrix::filled(1, 1, 1.0);
        let (v, _) = metric_loss(&h, &phi, 1.0, 0.5).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn aligned_dissimilar_pair() {
        let h = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]);
        let phi = Matrix::zeros(1, 1);
        let (v, _) = metric_loss(&h, &phi, 1.0, 0.5).unwrap();
        assert!((v - 2.126_928_011_042_972_5).abs() < 1e-12);
    }

    #[test]
    fn zero_delta_all_similar_is_negative_inner_product() {
        let h = Matrix::from_rows(&[[0.5, -0.2], [0.1, 0.3], [-0.4, 0.6], [0.2, 0.2]]);
        let phi = Matrix::filled(2, 2, 1.0);
        let (v, grad) = metric_loss(&h, &phi, 0.0, 0.5).unwrap();
        let mut sum = 0.0;
        for i in 0..2 {
            for j in 2..4 {
                sum += dot(h.row(i), h.row(j));
            }
        }
        assert!((v + sum / 4.0).abs() < 1e-15);
        // Row 0 only appears as h_i, so its gradient is -Σ_j h_j / m².
        for col in 0..2 {
            let expect = -(h.get(2, col) + h.get(3, col)) / 4.0;
            assert!((grad.get(0, col) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn quantization_examples() {
        let h = Matrix::from_rows(&[[0.5, -0.5, 0.5, 0.5]]);
        let (v, _) = quantization_loss(&h, 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let (v, _) = quantization_loss(&Matrix::zeros(1, 16), 1.0).unwrap();
        assert!((v - 4.0).abs() < 1e-12);
        let binary = Matrix::from_rows(&[[1.0, -1.0, 1.0, -1.0], [-1.0, -1.0, 1.0, 1.0]]);
        let (v, grad) = quantization_loss(&binary, 0.5).unwrap();
        assert_eq!(v, 0.0);
        assert!(grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn quantization_ignores_rows_outside_windows() {
        // b = 4, lambda = 0.25: windows are rows {0} and {3}.
        let h = Matrix::from_rows(&[[0.5; 2], [0.1; 2], [0.2; 2], [-0.5; 2]]);
        let (v, grad) = quantization_loss(&h, 0.25).unwrap();
        let per_row = (2.0f64 * 0.25).sqrt();
        assert!((v - 2.0 * per_row / 4.0).abs() < 1e-15);
        assert!(grad.row(1).iter().chain(grad.row(2)).all(|&g| g == 0.0));
        let (_, mgrad) = metric_loss(&h, &Matrix::zeros(1, 1), 1.0, 0.25).unwrap();
        assert!(mgrad.row(1).iter().chain(mgrad.row(2)).all(|&g| g == 0.0));
    }

    #[test]
    fn total_examples() {
        let h = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let phi = Matrix::filled(1, 1, 1.0);
        let w0 = LossWeights {
            lambda: 0.5,
            delta: 1.0,
            mu: 0.0,
        };
        let t0 = total_loss(&h, &phi, &w0).unwrap();
        let (lm, gm) = metric_loss(&h, &phi, 1.0, 0.5).unwrap();
        assert_eq!(t0.total, lm);
        assert_eq!(t0.grad_h, gm);

        let w1 = LossWeights { mu: 0.01, ..w0 };
        let w2 = LossWeights { mu: 0.02, ..w0 };
        let t1 = total_loss(&h, &phi, &w1).unwrap();
        let t2 = total_loss(&h, &phi, &w2).unwrap();
        assert!((t2.total - t1.total - 0.01 * t1.l_q).abs() < 1e-15);
        assert_eq!(t1.total, t1.l_m + 0.01 * t1.l_q);
    }

    #[test]
    fn weighted_sum_of_worked_examples() {
        // l_m = ln 2 and l_q = 1.0 combined with mu = 0.01.
        let total = std::f64::consts::LN_2 + 0.01 * 1.0;
        assert!((total - 0.7031).abs() < 1e-4);
    }

    #[test]
    fn monotonicity_in_theta() {
        let mut prev = f64::NEG_INFINITY;
        for step in -40..=40 {
            let theta = step as f64 * 0.25;
            let h = Matrix::from_rows(&[[theta.signum() * theta.abs().sqrt(), 0.0], [theta.abs().sqrt(), 0.0]]);
            let (v, _) = metric_loss(&h, &Matrix::zeros(1, 1), 1.0, 0.5).unwrap();
            assert!(v > prev, "not increasing at theta {theta}");
            prev = v;
        }
        // Φ = 1, δ = 1: ∂L/∂Θ = σ(Θ) − 1 < 0, seen through h_i along h_j.
        let h = Matrix::from_rows(&[[0.3, 0.4], [0.6, -0.2]]);
        let (_, g) = metric_loss(&h, &Matrix::filled(1, 1, 1.0), 1.0, 0.5).unwrap();
        let theta = dot(h.row(0), h.row(1));
        let d = sigmoid(theta) - 1.0;
        assert!(d < 0.0);
        assert!((g.get(0, 0) - d * 0.6).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable() {
        for k in [8.0, 64.0, 256.0, 1000.0] {
            for x in [-k, k] {
                assert!(softplus(x).is_finite());
            }
        }
        assert!((softplus(256.0) - 256.0).abs() < 1e-12);
        assert!(softplus(-256.0) > 0.0);
        let h = Matrix::from_rows(&[[1.0; 256], [1.0; 256]]);
        let (v, g) = metric_loss(&h, &Matrix::zeros(1, 1), 1.0, 0.5).unwrap();
        assert!((v - 256.0).abs() < 1e-9);
        assert!(g.as_slice().iter().all(|x| x.is_finite()));
        let hn = Matrix::from_rows(&[[1.0; 256], [-1.0; 256]]);
        let (v, _) = metric_loss(&hn, &Matrix::filled(1, 1, 1.0), 1.0, 0.5).unwrap();
        assert!(v.is_finite() && (v - 256.0).abs() < 1e-9);
    }

    #[test]
    fn window_errors() {
        let h = Matrix::zeros(5, 4);
        assert!(matches!(
            metric_loss(&h, &Matrix::zeros(2, 2), 1.0, 0.5),
            Err(Error::NonIntegralWindow(_))
        ));
        assert!(matches!(quantization_loss(&h, 0.5), Err(Error::NonIntegralWindow(_))));
        assert!(matches!(
            metric_loss(&Matrix::zeros(4, 4), &Matrix::zeros(3, 3), 1.0, 0.5),
            Err(Error::ShapeMismatch(_))
        ));
        assert_eq!(window_size(0.5, 128).unwrap(), 64);
        assert_eq!(window_size(1.0, 3).unwrap(), 3);
        assert!(window_size(0.1, 5).is_err());
    }

    #[test]
    fn overlapping_windows_include_diagonal() {
        // b = 2, lambda = 1: both windows cover both rows.
        let h = Matrix::from_rows(&[[0.5, 0.5], [-0.5, 0.5]]);
        let phi = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let (v, _) = metric_loss(&h, &phi, 1.0, 1.0).unwrap();
        let mut expect = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let t = dot(h.row(i), h.row(j));
                expect += softplus(t) - phi.get(i, j) * t;
            }
        }
        assert!((v - expect / 4.0).abs() < 1e-15);
    }

    #[test]
    fn phi_from_labels() {
        let l = labels(&[vec![0], vec![1], vec![0, 2], vec![1]]);
        let ids = [0, 1, 2, 3];
        let w = Windows::new(0.5, 4).unwrap();
        let phi = phi_matrix(&l, &ids, w);
        // first window {0, 1}, second {2, 3}
        assert_eq!(phi, Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]));
        let h = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.0]]);
        let terms = pairwise_terms(&h, &l, &ids, 0.5).unwrap();
        assert_eq!(terms.theta, Matrix::from_rows(&[[1.0, 0.5], [1.0, 0.0]]));
        assert_eq!(terms.phi, phi);
    }
}
