//! Minimal dense numeric kernels: row-major f64 matrices, LayerNorm with an
//! analytic backward pass, depthwise causal convolution, lower-triangular
//! masking, nearest-rank percentiles, and correlation statistics.
//!
//! No broadcasting, no autodiff, no GPU. Everything here is a pure function of
//! its inputs and safe to call concurrently.

use crate::{Error, Result};

/// Dense row-major matrix of f64.
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

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dim(format!(
                "matrix {}x{} needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// C = A * B with the usual (rows x inner)(inner x cols) shapes.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dim(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        // i-k-j order keeps the inner loop contiguous in both B and C.
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Matrix {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v *= s;
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dim(format!(
                "add {}x{} to {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = self.clone();
        for (o, &v) in out.data.iter_mut().zip(other.data.iter()) {
            *o += v;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dim(format!(
                "sub {}x{} from {}x{}",
                other.rows, other.cols, self.rows, self.cols
            )));
        }
        let mut out = self.clone();
        for (o, &v) in out.data.iter_mut().zip(other.data.iter()) {
            *o -= v;
        }
        Ok(out)
    }

    /// out += s * (a outer b), i.e. out[i][j] += s * a[i] * b[j].
    pub fn add_outer(&mut self, a: &[f64], b: &[f64], s: f64) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, &ai) in a.iter().enumerate() {
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (o, &bj) in row.iter_mut().zip(b.iter()) {
                *o += s * ai * bj;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Column slice [c0, c1) of every row, as a new matrix.
    pub fn columns(&self, c0: usize, c1: usize) -> Matrix {
        assert!(c0 <= c1 && c1 <= self.cols);
        let mut out = Matrix::zeros(self.rows, c1 - c0);
        for r in 0..self.rows {
            out.row_mut(r)
                .copy_from_slice(&self.row(r)[c0..c1]);
        }
        out
    }

    /// Row slice [r0, r1) as a new matrix.
    pub fn row_block(&self, r0: usize, r1: usize) -> Matrix {
        assert!(r0 <= r1 && r1 <= self.rows);
        Matrix {
            rows: r1 - r0,
            cols: self.cols,
            data: self.data[r0 * self.cols..r1 * self.cols].to_vec(),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Lower-triangular mask keeping (row t, col i) iff i <= t + k, for k in {0, -1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TriangularMask {
    pub size: usize,
    pub diagonal_offset: i64,
}

impl TriangularMask {
    pub fn new(size: usize, diagonal_offset: i64) -> Result<Self> {
        if diagonal_offset != 0 && diagonal_offset != -1 {
            return Err(Error::Config(format!(
                "mask diagonal offset must be 0 or -1, got {diagonal_offset}"
            )));
        }
        Ok(Self {
            size,
            diagonal_offset,
        })
    }

    pub fn active(&self, row: usize, col: usize) -> bool {
        (col as i64) <= row as i64 + self.diagonal_offset
    }
}

/// Zero out score entries above the masked diagonal: out[t][i] = scores[t][i]
/// if i <= t + k, else 0.
pub fn tril_weighted_sum(scores: &Matrix, mask: TriangularMask) -> Result<Matrix> {
    if scores.rows() != scores.cols() {
        return Err(Error::Dim(format!(
            "mask expects a square matrix, got {}x{}",
            scores.rows(),
            scores.cols()
        )));
    }
    if scores.rows() != mask.size {
        return Err(Error::Dim(format!(
            "mask size {} vs matrix size {}",
            mask.size,
            scores.rows()
        )));
    }
    let mut out = Matrix::zeros(scores.rows(), scores.cols());
    for t in 0..scores.rows() {
        let limit = t as i64 + mask.diagonal_offset;
        if limit < 0 {
            continue;
        }
        let hi = (limit as usize + 1).min(scores.cols());
        out.row_mut(t)[..hi].copy_from_slice(&scores.row(t)[..hi]);
    }
    Ok(out)
}

/// Saved statistics from a LayerNorm forward pass, consumed by the backward.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub inv_std: f64,
    pub normalized: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// y = gamma .* (x - mean(x)) / sqrt(var(x) + eps) + beta
pub fn layer_norm_forward(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(Vec<f64>, LayerNormCache)> {
    let n = x.len();
    if n == 0 {
        return Err(Error::Empty("layer_norm_forward on empty vector".into()));
    }
    if gamma.len() != n || beta.len() != n {
        return Err(Error::Dim(format!(
            "layer_norm_forward: x len {}, gamma len {}, beta len {}",
            n,
            gamma.len(),
            beta.len()
        )));
    }
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::Config(format!("layer norm eps must be > 0, got {eps}")));
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
    let inv_std = 1.0 / (var + eps).sqrt();
    let normalized: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    let y: Vec<f64> = normalized
        .iter()
        .zip(gamma.iter().zip(beta.iter()))
        .map(|(xn, (g, b))| g * xn + b)
        .collect();
    Ok((
        y,
        LayerNormCache {
            inv_std,
            normalized,
            gamma: gamma.to_vec(),
        },
    ))
}

/// Exact vector-Jacobian product of [`layer_norm_forward`] with respect to x.
///
/// grad_x = inv_std * (g - mean(g) - xhat * mean(g .* xhat)) with g = grad_y .* gamma.
pub fn layer_norm_backward(grad_y: &[f64], cache: &LayerNormCache) -> Result<Vec<f64>> {
    let n = cache.normalized.len();
    if grad_y.len() != n {
        return Err(Error::Dim(format!(
            "layer_norm_backward: grad len {} vs cached dim {}",
            grad_y.len(),
            n
        )));
    }
    let nf = n as f64;
    let g: Vec<f64> = grad_y
        .iter()
        .zip(cache.gamma.iter())
        .map(|(dy, gm)| dy * gm)
        .collect();
    let mean_g = g.iter().sum::<f64>() / nf;
    let mean_gx = g
        .iter()
        .zip(cache.normalized.iter())
        .map(|(gi, xi)| gi * xi)
        .sum::<f64>()
        / nf;
    Ok(g.iter()
        .zip(cache.normalized.iter())
        .map(|(gi, xi)| cache.inv_std * (gi - mean_g - xi * mean_gx))
        .collect())
}

/// Depthwise causal 1-D convolution with left zero-padding.
///
/// out[t][c] = sum_w kernel[w][c] * seq[t - w][c], treating seq[negative] = 0.
pub fn causal_conv1d(seq: &Matrix, kernel: &Matrix) -> Result<Matrix> {
    if kernel.rows() == 0 {
        return Err(Error::Config("conv kernel width must be >= 1".into()));
    }
    if kernel.cols() != seq.cols() {
        return Err(Error::Dim(format!(
            "conv: seq has {} channels, kernel {}",
            seq.cols(),
            kernel.cols()
        )));
    }
    let t_len = seq.rows();
    let width = kernel.rows();
    let chans = seq.cols();
    let mut out = Matrix::zeros(t_len, chans);
    for t in 0..t_len {
        for w in 0..width.min(t + 1) {
            let src = seq.row(t - w);
            let k = kernel.row(w);
            let dst = out.row_mut(t);
            for c in 0..chans {
                dst[c] += k[c] * src[c];
            }
        }
    }
    Ok(out)
}

/// Nearest-rank percentile: sort ascending, return the element at index
/// ceil(q * n) - 1, clamped to [0, n-1]. Always returns an observed value.
pub fn nearest_rank_percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile of empty list".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("percentile q must be in [0,1], got {q}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite percentile input"));
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as i64 - 1;
    let idx = rank.clamp(0, n as i64 - 1) as usize;
    Ok(sorted[idx])
}

/// Pearson correlation coefficient. Errors on fewer than 3 points or on a
/// zero-variance input (the coefficient is undefined, not zero).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dim(format!(
            "pearson: {} vs {} points",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::Undefined(format!(
            "pearson needs >= 3 points, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y.iter()) {
        sxx += (xi - mx) * (xi - mx);
        syy += (yi - my) * (yi - my);
        sxy += (xi - mx) * (yi - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined(
            "pearson undefined for constant input".into(),
        ));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Ranks with ties assigned the average of their covered positions (1-based).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("non-finite rank input"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson on average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dim(format!(
            "spearman: {} vs {} points",
            x.len(),
            y.len()
        )));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}
