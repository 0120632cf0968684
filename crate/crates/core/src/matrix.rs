use rayon::prelude::*;

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out[o] = bias[o] + sum_i x[i] * w[i, o]` for a row-major `x.len() x out.len()` weight.
pub fn affine_into(x: &[f64], w: &[f64], bias: &[f64], out: &mut [f64]) {
    let n_out = out.len();
    debug_assert_eq!(w.len(), x.len() * n_out);
    out.copy_from_slice(bias);
    for (xi, w_row) in x.iter().zip(w.chunks_exact(n_out)) {
        if *xi == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(w_row) {
            *o += xi * wv;
        }
    }
}

/// Accumulates `grad_w += a^T g` and `grad_b += colsum(g)` for a batch, where
/// `a` is `n x in` and `g` is `n x out`. Each weight row is owned by one task
/// and sums batch rows in index order, so the result does not depend on the
/// thread count.
pub fn accumulate_outer(a: &Matrix, g: &Matrix, grad_w: &mut [f64], grad_b: &mut [f64]) {
    let n_out = g.cols();
    grad_w
        .par_chunks_mut(n_out)
        .enumerate()
        .for_each(|(i, gw_row)| {
            for r in 0..a.rows() {
                let ai = a.get(r, i);
                if ai == 0.0 {
                    continue;
                }
                for (gw, gv) in gw_row.iter_mut().zip(g.row(r)) {
                    *gw += ai * gv;
                }
            }
        });
    for r in 0..g.rows() {
        for (gb, gv) in grad_b.iter_mut().zip(g.row(r)) {
            *gb += gv;
        }
    }
}

/// `out = g w^T` for one row: `out[i] = sum_o g[o] * w[i, o]`.
pub fn back_into(g: &[f64], w: &[f64], out: &mut [f64]) {
    let n_out = g.len();
    for (o, w_row) in out.iter_mut().zip(w.chunks_exact(n_out)) {
        *o = dot(g, w_row);
    }
}
