//! TTT-Linear fast-weight layer.
//!
//! The layer keeps a per-head fast weight (W, b) and adapts it while it runs:
//! every token contributes a gradient of the self-supervised reconstruction
//! loss ||LN(K W + b) - (V - K)||^2, taken at the chunk-entry weights. Outputs
//! are computed from the test view Q against the causally-masked partial sums
//! of those gradients, the K projection is added back as a residual, and the
//! merged heads go through an output projection.
//!
//! Two equivalent forward paths are provided: a sequential reference
//! ([`TttLayer::primal_forward_update`]) and a batched masked-matmul form
//! ([`TttLayer::dual_forward`]). Both also report the chunk's reconstruction
//! loss, which downstream gating uses as its signal.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::{
    causal_conv1d, dot, layer_norm_backward, layer_norm_forward, tril_weighted_sum, Matrix,
    TriangularMask,
};
use crate::rng::SeededRng;
use crate::weights_io as wio;
use crate::{Error, Result};

const PARAMS_MAGIC: &[u8; 8] = b"TTTPRMS1";
const PARAMS_VERSION: u32 = 1;

/// Scale of the shared base projection; keeps the K-residual path quiet next
/// to the backbone stream.
const WQ_SCALE: f64 = 0.25;
/// Gain of the output projection at deterministic init.
const OUT_GAIN: f64 = 0.5;
/// Init scale for the learning-rate gate weight vector.
const LR_GATE_WEIGHT_SCALE: f64 = 0.01;
/// Init bias of the learning-rate gate; sigmoid(-3) ~ 0.047 keeps the
/// accumulated chunk-mean step inside the stable range.
const LR_GATE_BIAS: f64 = -3.0;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TttConfig {
    pub model_dim: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub conv_width: usize,
    /// Base inner-loop learning rate, scaled per token by the sigmoid gate.
    pub base_inner_lr: f64,
    /// Reconstruction-loss weight in the combined training objective.
    /// Reported in config echoes only; no outer training happens here.
    pub recon_weight_beta: f64,
    /// Tokens per gating chunk.
    pub chunk_size: usize,
    /// Causal mask diagonal: 0 includes each token's own gradient in its
    /// output, -1 excludes it.
    pub mask_diagonal: i64,
    pub layer_norm_eps: f64,
}

impl TttConfig {
    pub fn desk_default() -> Self {
        Self {
            model_dim: 64,
            n_heads: 2,
            head_dim: 32,
            conv_width: 4,
            base_inner_lr: 1.0,
            recon_weight_beta: 0.1,
            chunk_size: 64,
            mask_diagonal: 0,
            layer_norm_eps: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.n_heads == 0 || self.head_dim == 0 {
            return Err(Error::Config("ttt dims must be >= 1".into()));
        }
        if self.model_dim != self.n_heads * self.head_dim {
            return Err(Error::Config(format!(
                "model_dim {} != n_heads {} * head_dim {}",
                self.model_dim, self.n_heads, self.head_dim
            )));
        }
        if self.conv_width == 0 || self.chunk_size == 0 {
            return Err(Error::Config("conv_width and chunk_size must be >= 1".into()));
        }
        if !self.base_inner_lr.is_finite() || self.base_inner_lr <= 0.0 {
            return Err(Error::Config("base_inner_lr must be > 0".into()));
        }
        if self.recon_weight_beta < 0.0 {
            return Err(Error::Config("recon_weight_beta must be >= 0".into()));
        }
        if self.mask_diagonal != 0 && self.mask_diagonal != -1 {
            return Err(Error::Config(format!(
                "mask_diagonal must be 0 or -1, got {}",
                self.mask_diagonal
            )));
        }
        if !self.layer_norm_eps.is_finite() || self.layer_norm_eps <= 0.0 {
            return Err(Error::Config("layer_norm_eps must be > 0".into()));
        }
        Ok(())
    }
}

/// Frozen projection parameters of the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    /// Shared base projection for the train view K and test view Q.
    pub wq_base: Matrix,
    /// Depthwise causal kernels differentiating Q and K from the base.
    pub conv_q: Matrix,
    pub conv_k: Matrix,
    /// Independent value projection.
    pub wv: Matrix,
    /// Per-token learning-rate gate: eta = base_lr * sigmoid(h . w + b).
    pub lr_gate_weight: Vec<f64>,
    pub lr_gate_bias: f64,
    /// Inner LayerNorm affine parameters, shared across heads.
    pub ln_gamma: Vec<f64>,
    pub ln_beta: Vec<f64>,
    /// Output projection applied after the residual add.
    pub w_out: Matrix,
    /// Initial fast weight and bias per head.
    pub w0: Vec<Matrix>,
    pub b0: Vec<Vec<f64>>,
}

impl ProjectionParams {
    /// Deterministic init from a seed. wq_base (scaled) and wv are random
    /// orthogonal; the output projection is tied to the value projection as
    /// w_out = OUT_GAIN * wv^T, so a reconstructed value row maps back onto
    /// the hidden state it came from. The view convolutions differentiate Q
    /// and K by time: conv_q is an identity tap while conv_k is a one-step
    /// lag tap, which turns the reconstruction task into next-step
    /// prediction over hidden states (K at position t carries position
    /// t - 1). Fast weights start as per-head orthogonal matrices, the
    /// LayerNorm affine as (1, 0).
    pub fn deterministic_init(config: &TttConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let mut rng = SeededRng::derive(seed, "ttt-params");
        let wq_base = random_orthogonal(d, &mut rng).scale(WQ_SCALE);
        let wv = random_orthogonal(d, &mut rng);
        let w_out = wv.transpose().scale(OUT_GAIN);

        let mut conv_q = Matrix::zeros(config.conv_width, d);
        let mut conv_k = Matrix::zeros(config.conv_width, d);
        let k_tap = 1.min(config.conv_width - 1);
        for c in 0..d {
            conv_q.set(0, c, 1.0);
            conv_k.set(k_tap, c, 1.0);
        }

        let mut lr_gate_weight = vec![0.0; d];
        rng.fill_normal(&mut lr_gate_weight, LR_GATE_WEIGHT_SCALE);

        let w0 = (0..config.n_heads)
            .map(|_| random_orthogonal(config.head_dim, &mut rng))
            .collect();
        let b0 = vec![vec![0.0; config.head_dim]; config.n_heads];

        Ok(Self {
            wq_base,
            conv_q,
            conv_k,
            wv,
            lr_gate_weight,
            lr_gate_bias: LR_GATE_BIAS,
            ln_gamma: vec![1.0; config.head_dim],
            ln_beta: vec![0.0; config.head_dim],
            w_out,
            w0,
            b0,
        })
    }

    pub fn validate(&self, config: &TttConfig) -> Result<()> {
        let d = config.model_dim;
        let hd = config.head_dim;
        let square = |m: &Matrix, name: &str| -> Result<()> {
            if m.rows() != d || m.cols() != d {
                return Err(Error::Dim(format!(
                    "{name} must be {d}x{d}, got {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
            Ok(())
        };
        square(&self.wq_base, "wq_base")?;
        square(&self.wv, "wv")?;
        square(&self.w_out, "w_out")?;
        for (name, conv) in [("conv_q", &self.conv_q), ("conv_k", &self.conv_k)] {
            if conv.rows() != config.conv_width || conv.cols() != d {
                return Err(Error::Dim(format!("{name} shape mismatch")));
            }
        }
        if self.lr_gate_weight.len() != d
            || self.ln_gamma.len() != hd
            || self.ln_beta.len() != hd
            || self.w0.len() != config.n_heads
            || self.b0.len() != config.n_heads
        {
            return Err(Error::Dim("projection parameter shape mismatch".into()));
        }
        for w in &self.w0 {
            if w.rows() != hd || w.cols() != hd {
                return Err(Error::Dim("w0 must be head_dim x head_dim".into()));
            }
        }
        for b in &self.b0 {
            if b.len() != hd {
                return Err(Error::Dim("b0 must be head_dim".into()));
            }
        }
        let all_finite = self.wq_base.is_finite()
            && self.conv_q.is_finite()
            && self.conv_k.is_finite()
            && self.wv.is_finite()
            && self.w_out.is_finite()
            && self.lr_gate_weight.iter().all(|v| v.is_finite())
            && self.lr_gate_bias.is_finite()
            && self.ln_gamma.iter().all(|v| v.is_finite())
            && self.ln_beta.iter().all(|v| v.is_finite())
            && self.w0.iter().all(Matrix::is_finite)
            && self.b0.iter().flatten().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::NonFinite("projection parameters".into()));
        }
        Ok(())
    }
}

/// Random orthogonal matrix via modified Gram-Schmidt on a Gaussian draw.
pub fn random_orthogonal(n: usize, rng: &mut SeededRng) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    rng.fill_normal(m.data_mut(), 1.0);
    // Orthonormalize rows.
    for i in 0..n {
        for j in 0..i {
            let proj = dot(m.row(i), m.row(j));
            let prev = m.row(j).to_vec();
            for (a, b) in m.row_mut(i).iter_mut().zip(prev.iter()) {
                *a -= proj * b;
            }
        }
        let norm = dot(m.row(i), m.row(i)).sqrt();
        if norm > 1e-12 {
            for a in m.row_mut(i) {
                *a /= norm;
            }
        } else {
            // Degenerate draw; fall back to a unit basis vector.
            for (c, a) in m.row_mut(i).iter_mut().enumerate() {
                *a = if c == i { 1.0 } else { 0.0 };
            }
        }
    }
    m
}

/// Mutable inner-loop state: one fast weight matrix and bias per head.
#[derive(Debug, Clone, PartialEq)]
pub struct FastWeightState {
    pub w: Vec<Matrix>,
    pub b: Vec<Vec<f64>>,
    pub chunks_seen: usize,
}

impl FastWeightState {
    pub fn from_params(params: &ProjectionParams) -> Self {
        Self {
            w: params.w0.clone(),
            b: params.b0.clone(),
            chunks_seen: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(Matrix::is_finite) && self.b.iter().flatten().all(|v| v.is_finite())
    }
}

/// Q/K/V projections of one chunk plus the per-token learning rates.
#[derive(Debug, Clone)]
pub struct ChunkViews {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub eta: Vec<f64>,
}

impl ChunkViews {
    pub fn len(&self) -> usize {
        self.q.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.q.rows() == 0
    }
}

/// Outputs and measurements of one chunk forward.
#[derive(Debug, Clone)]
pub struct ChunkForwardResult {
    /// Layer output after residual add and output projection, T x model_dim.
    pub outputs: Matrix,
    /// Mean of per-token reconstruction losses; the gating signal.
    pub recon_loss_scalar: f64,
    /// Per-token reconstruction loss, averaged across heads, at chunk-entry
    /// weights.
    pub per_token_recon: Vec<f64>,
    /// Per-token inner learning rates.
    pub eta: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct HeadForward {
    /// LN(z_out) + K residual, before the output projection. T x head_dim.
    pre_out: Matrix,
    per_token_loss: Vec<f64>,
    w_new: Matrix,
    b_new: Vec<f64>,
}

/// The layer: immutable config and projections. State is owned by the caller
/// and threaded through the forward methods.
#[derive(Debug, Clone)]
pub struct TttLayer {
    pub config: TttConfig,
    pub params: ProjectionParams,
}

impl TttLayer {
    pub fn new(config: TttConfig, params: ProjectionParams) -> Result<Self> {
        config.validate()?;
        params.validate(&config)?;
        Ok(Self { config, params })
    }

    pub fn init_state(&self) -> FastWeightState {
        FastWeightState::from_params(&self.params)
    }

    /// Project hidden states into the shared-base views: Q and K come from
    /// hidden * wq_base through separate causal convolutions, V from an
    /// independent projection, and eta from the per-token sigmoid gate.
    pub fn project_views(&self, hidden: &Matrix) -> Result<ChunkViews> {
        if hidden.rows() == 0 {
            return Err(Error::Empty("project_views on empty chunk".into()));
        }
        if hidden.cols() != self.config.model_dim {
            return Err(Error::Dim(format!(
                "hidden dim {} vs model_dim {}",
                hidden.cols(),
                self.config.model_dim
            )));
        }
        let base = hidden.matmul(&self.params.wq_base)?;
        let q = causal_conv1d(&base, &self.params.conv_q)?;
        let k = causal_conv1d(&base, &self.params.conv_k)?;
        let v = hidden.matmul(&self.params.wv)?;
        let eta = (0..hidden.rows())
            .map(|t| {
                self.config.base_inner_lr
                    * sigmoid(dot(hidden.row(t), &self.params.lr_gate_weight)
                        + self.params.lr_gate_bias)
            })
            .collect();
        Ok(ChunkViews { q, k, v, eta })
    }

    fn head_cols(&self, h: usize) -> (usize, usize) {
        let hd = self.config.head_dim;
        (h * hd, (h + 1) * hd)
    }

    /// Per-head slice of a T x model_dim view.
    pub fn head_view(&self, m: &Matrix, head: usize) -> Matrix {
        let (c0, c1) = self.head_cols(head);
        m.columns(c0, c1)
    }

    /// Per-token reconstruction losses of one head at the given fast weights:
    /// loss[t] = || LN(K[t] W + b) - (V[t] - K[t]) ||^2.
    pub fn recon_loss(
        &self,
        w: &Matrix,
        b: &[f64],
        k_h: &Matrix,
        v_h: &Matrix,
    ) -> Result<(Vec<f64>, f64)> {
        let hd = self.config.head_dim;
        if w.rows() != hd || w.cols() != hd || b.len() != hd {
            return Err(Error::Dim("fast weight shape mismatch".into()));
        }
        if k_h.cols() != hd || v_h.cols() != hd || k_h.rows() != v_h.rows() {
            return Err(Error::Dim("per-head view shape mismatch".into()));
        }
        let t_len = k_h.rows();
        if t_len == 0 {
            return Err(Error::Empty("recon_loss on empty chunk".into()));
        }
        let mut per_token = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let z = mat_vec_left(k_h.row(t), w, b);
            let (y, _) = layer_norm_forward(
                &z,
                &self.params.ln_gamma,
                &self.params.ln_beta,
                self.config.layer_norm_eps,
            )?;
            let loss: f64 = y
                .iter()
                .zip(k_h.row(t).iter().zip(v_h.row(t).iter()))
                .map(|(yi, (ki, vi))| {
                    let d = yi - (vi - ki);
                    d * d
                })
                .sum();
            per_token.push(loss);
        }
        let mean = per_token.iter().sum::<f64>() / t_len as f64;
        Ok((per_token, mean))
    }

    /// Analytic gradient of the mean reconstruction loss of one head with
    /// respect to (W, b), chaining through the LayerNorm backward.
    pub fn inner_gradient(
        &self,
        w: &Matrix,
        b: &[f64],
        k_h: &Matrix,
        v_h: &Matrix,
    ) -> Result<(Matrix, Vec<f64>)> {
        let hd = self.config.head_dim;
        if k_h.cols() != hd || v_h.cols() != hd || k_h.rows() != v_h.rows() {
            return Err(Error::Dim("per-head view shape mismatch".into()));
        }
        let t_len = k_h.rows();
        if t_len == 0 {
            return Err(Error::Empty("inner_gradient on empty chunk".into()));
        }
        let mut dw = Matrix::zeros(hd, hd);
        let mut db = vec![0.0; hd];
        let inv_t = 1.0 / t_len as f64;
        for t in 0..t_len {
            let g = self.token_z_gradient(w, b, k_h.row(t), v_h.row(t))?;
            dw.add_outer(k_h.row(t), &g, inv_t);
            for (acc, gi) in db.iter_mut().zip(g.iter()) {
                *acc += gi * inv_t;
            }
        }
        Ok((dw, db))
    }

    /// Gradient of one token's reconstruction loss with respect to z = K W + b.
    fn token_z_gradient(&self, w: &Matrix, b: &[f64], k: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let z = mat_vec_left(k, w, b);
        let (y, cache) = layer_norm_forward(
            &z,
            &self.params.ln_gamma,
            &self.params.ln_beta,
            self.config.layer_norm_eps,
        )?;
        let grad_y: Vec<f64> = y
            .iter()
            .zip(k.iter().zip(v.iter()))
            .map(|(yi, (ki, vi))| 2.0 * (yi - (vi - ki)))
            .collect();
        layer_norm_backward(&grad_y, &cache)
    }

    /// Sequential reference forward. Per-token gradients are evaluated at the
    /// chunk-entry weights against the chunk-mean objective (each token's
    /// loss carries weight 1/T, so the fully-accumulated state equals one
    /// eta-weighted mean-loss step and stays well inside the stable step
    /// range for any chunk length). Position t's output uses the partial
    /// gradient sum over positions i <= t + mask_diagonal; the committed
    /// end-of-chunk state absorbs every token under either mask convention.
    pub fn primal_forward_update(
        &self,
        state: &FastWeightState,
        views: &ChunkViews,
    ) -> Result<(ChunkForwardResult, FastWeightState)> {
        self.forward_impl(state, views, ForwardPath::Primal)
    }

    /// Batched forward equivalent to [`Self::primal_forward_update`]:
    /// z_t = q_t W_0 + b_0 - sum_{i <= t+k} eta_i (q_t . k_i) g_i, realized as
    /// masked matrix products.
    pub fn dual_forward(
        &self,
        state: &FastWeightState,
        views: &ChunkViews,
    ) -> Result<(ChunkForwardResult, FastWeightState)> {
        self.forward_impl(state, views, ForwardPath::Dual)
    }

    fn forward_impl(
        &self,
        state: &FastWeightState,
        views: &ChunkViews,
        path: ForwardPath,
    ) -> Result<(ChunkForwardResult, FastWeightState)> {
        let t_len = views.len();
        if t_len == 0 {
            return Err(Error::Empty("forward on empty chunk".into()));
        }
        if views.eta.len() != t_len || views.k.rows() != t_len || views.v.rows() != t_len {
            return Err(Error::Dim("chunk view lengths disagree".into()));
        }
        let n_heads = self.config.n_heads;
        let mut pre = Matrix::zeros(t_len, self.config.model_dim);
        let mut per_token = vec![0.0; t_len];
        let mut new_state = FastWeightState {
            w: Vec::with_capacity(n_heads),
            b: Vec::with_capacity(n_heads),
            chunks_seen: state.chunks_seen + 1,
        };
        for h in 0..n_heads {
            let q_h = self.head_view(&views.q, h);
            let k_h = self.head_view(&views.k, h);
            let v_h = self.head_view(&views.v, h);
            let fwd = match path {
                ForwardPath::Primal => {
                    self.forward_head_primal(&state.w[h], &state.b[h], &q_h, &k_h, &v_h, &views.eta)?
                }
                ForwardPath::Dual => {
                    self.forward_head_dual(&state.w[h], &state.b[h], &q_h, &k_h, &v_h, &views.eta)?
                }
            };
            let (c0, _) = self.head_cols(h);
            for t in 0..t_len {
                per_token[t] += fwd.per_token_loss[t] / n_heads as f64;
                pre.row_mut(t)[c0..c0 + self.config.head_dim]
                    .copy_from_slice(fwd.pre_out.row(t));
            }
            new_state.w.push(fwd.w_new);
            new_state.b.push(fwd.b_new);
        }
        for (t, loss) in per_token.iter().enumerate() {
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "reconstruction loss at token {t}"
                )));
            }
        }
        let outputs = pre.matmul(&self.params.w_out)?;
        for t in 0..t_len {
            if outputs.row(t).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer output at token {t}")));
            }
        }
        if !new_state.is_finite() {
            return Err(Error::NonFinite("fast weights after chunk".into()));
        }
        let recon_loss_scalar = per_token.iter().sum::<f64>() / t_len as f64;
        Ok((
            ChunkForwardResult {
                outputs,
                recon_loss_scalar,
                per_token_recon: per_token,
                eta: views.eta.clone(),
            },
            new_state,
        ))
    }

    fn forward_head_primal(
        &self,
        w0: &Matrix,
        b0: &[f64],
        q_h: &Matrix,
        k_h: &Matrix,
        v_h: &Matrix,
        eta: &[f64],
    ) -> Result<HeadForward> {
        let t_len = q_h.rows();
        let hd = self.config.head_dim;
        let inv_t = 1.0 / t_len as f64;
        let mut per_token_loss = Vec::with_capacity(t_len);
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let z = mat_vec_left(k_h.row(t), w0, b0);
            let (y, cache) = layer_norm_forward(
                &z,
                &self.params.ln_gamma,
                &self.params.ln_beta,
                self.config.layer_norm_eps,
            )?;
            let mut loss = 0.0;
            let mut grad_y = vec![0.0; hd];
            for i in 0..hd {
                let d = y[i] - (v_h.row(t)[i] - k_h.row(t)[i]);
                loss += d * d;
                grad_y[i] = 2.0 * d;
            }
            per_token_loss.push(loss);
            let g = layer_norm_backward(&grad_y, &cache)?;
            grads.push(g.iter().map(|gi| gi * eta[t] * inv_t).collect());
        }

        let mut w_acc = Matrix::zeros(hd, hd);
        let mut b_acc = vec![0.0; hd];
        let mut pre_out = Matrix::zeros(t_len, hd);
        let include_own = self.config.mask_diagonal == 0;
        for t in 0..t_len {
            if include_own {
                w_acc.add_outer(k_h.row(t), &grads[t], 1.0);
                for (acc, g) in b_acc.iter_mut().zip(grads[t].iter()) {
                    *acc += g;
                }
            }
            let base = mat_vec_left(q_h.row(t), w0, b0);
            let sub = mat_vec_left(q_h.row(t), &w_acc, &b_acc);
            let z_out: Vec<f64> = base.iter().zip(sub.iter()).map(|(a, b)| a - b).collect();
            let (y_out, _) = layer_norm_forward(
                &z_out,
                &self.params.ln_gamma,
                &self.params.ln_beta,
                self.config.layer_norm_eps,
            )?;
            for i in 0..hd {
                pre_out.set(t, i, y_out[i] + k_h.row(t)[i]);
            }
            if !include_own {
                w_acc.add_outer(k_h.row(t), &grads[t], 1.0);
                for (acc, g) in b_acc.iter_mut().zip(grads[t].iter()) {
                    *acc += g;
                }
            }
        }

        let w_new = w0.sub(&w_acc)?;
        let b_new: Vec<f64> = b0.iter().zip(b_acc.iter()).map(|(b, a)| b - a).collect();
        Ok(HeadForward {
            pre_out,
            per_token_loss,
            w_new,
            b_new,
        })
    }

    fn forward_head_dual(
        &self,
        w0: &Matrix,
        b0: &[f64],
        q_h: &Matrix,
        k_h: &Matrix,
        v_h: &Matrix,
        eta: &[f64],
    ) -> Result<HeadForward> {
        let t_len = q_h.rows();
        let hd = self.config.head_dim;
        let inv_t = 1.0 / t_len as f64;

        // Per-token z-gradients at chunk-entry weights, scaled by eta / T
        // (chunk-mean objective, matching the primal path).
        let mut per_token_loss = Vec::with_capacity(t_len);
        let mut g_scaled = Matrix::zeros(t_len, hd);
        for t in 0..t_len {
            let z = mat_vec_left(k_h.row(t), w0, b0);
            let (y, cache) = layer_norm_forward(
                &z,
                &self.params.ln_gamma,
                &self.params.ln_beta,
                self.config.layer_norm_eps,
            )?;
            let mut loss = 0.0;
            let mut grad_y = vec![0.0; hd];
            for i in 0..hd {
                let d = y[i] - (v_h.row(t)[i] - k_h.row(t)[i]);
                loss += d * d;
                grad_y[i] = 2.0 * d;
            }
            per_token_loss.push(loss);
            let g = layer_norm_backward(&grad_y, &cache)?;
            for i in 0..hd {
                g_scaled.set(t, i, g[i] * eta[t] * inv_t);
            }
        }

        // Masked attention-style weights: scores[t][i] = q_t . k_i.
        let scores = q_h.matmul(&k_h.transpose())?;
        let mask = TriangularMask::new(t_len, self.config.mask_diagonal)?;
        let masked = tril_weighted_sum(&scores, mask)?;
        let grad_term = masked.matmul(&g_scaled)?;

        // Masked running bias subtraction: prefix sums of scaled gradients.
        let mut bias_sub = Matrix::zeros(t_len, hd);
        let mut running = vec![0.0; hd];
        let include_own = self.config.mask_diagonal == 0;
        for t in 0..t_len {
            if include_own {
                for i in 0..hd {
                    running[i] += g_scaled.get(t, i);
                }
            }
            bias_sub.row_mut(t).copy_from_slice(&running);
            if !include_own {
                for i in 0..hd {
                    running[i] += g_scaled.get(t, i);
                }
            }
        }

        let base = q_h.matmul(w0)?;
        let mut pre_out = Matrix::zeros(t_len, hd);
        for t in 0..t_len {
            let z_out: Vec<f64> = (0..hd)
                .map(|i| base.get(t, i) + b0[i] - grad_term.get(t, i) - bias_sub.get(t, i))
                .collect();
            let (y_out, _) = layer_norm_forward(
                &z_out,
                &self.params.ln_gamma,
                &self.params.ln_beta,
                self.config.layer_norm_eps,
            )?;
            for i in 0..hd {
                pre_out.set(t, i, y_out[i] + k_h.row(t)[i]);
            }
        }

        let w_new = w0.sub(&k_h.transpose().matmul(&g_scaled)?)?;
        let b_new: Vec<f64> = (0..hd).map(|i| b0[i] - running[i]).collect();
        Ok(HeadForward {
            pre_out,
            per_token_loss,
            w_new,
            b_new,
        })
    }

    /// One explicit gradient step on the mean chunk loss: the UPDATE branch of
    /// gating. Distinct from the per-token recurrence inside the forwards.
    pub fn apply_chunk_update(
        &self,
        state: &FastWeightState,
        views: &ChunkViews,
        eta_mean: f64,
    ) -> Result<FastWeightState> {
        let mut out = state.clone();
        for h in 0..self.config.n_heads {
            let k_h = self.head_view(&views.k, h);
            let v_h = self.head_view(&views.v, h);
            let (dw, db) = self.inner_gradient(&state.w[h], &state.b[h], &k_h, &v_h)?;
            out.w[h] = state.w[h].sub(&dw.scale(eta_mean))?;
            for (b, d) in out.b[h].iter_mut().zip(db.iter()) {
                *b -= eta_mean * d;
            }
        }
        if !out.is_finite() {
            return Err(Error::NonFinite("fast weights after chunk update".into()));
        }
        Ok(out)
    }

    /// Mean reconstruction loss across heads at the given state.
    pub fn recon_mean(&self, state: &FastWeightState, views: &ChunkViews) -> Result<f64> {
        let mut total = 0.0;
        for h in 0..self.config.n_heads {
            let k_h = self.head_view(&views.k, h);
            let v_h = self.head_view(&views.v, h);
            let (_, mean) = self.recon_loss(&state.w[h], &state.b[h], &k_h, &v_h)?;
            total += mean;
        }
        Ok(total / self.config.n_heads as f64)
    }

    /// Reconstruction-loss reduction from one chunk update: delta = loss0 -
    /// loss1, leaving `state` untouched.
    pub fn ttt_improvement(
        &self,
        state: &FastWeightState,
        views: &ChunkViews,
        eta_mean: f64,
    ) -> Result<(f64, f64, f64)> {
        let loss0 = self.recon_mean(state, views)?;
        let updated = self.apply_chunk_update(state, views, eta_mean)?;
        let loss1 = self.recon_mean(&updated, views)?;
        Ok((loss0 - loss1, loss0, loss1))
    }

    pub fn save_params<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        let mut w = BufWriter::new(file);
        self.write_params(&mut w)?;
        w.flush()?;
        // Human-readable sidecar mirroring the config.
        let sidecar = path.as_ref().with_extension(
            match path.as_ref().extension().and_then(|e| e.to_str()) {
                Some(ext) => format!("{ext}.json"),
                None => "json".to_string(),
            },
        );
        std::fs::write(&sidecar, serde_json::to_string_pretty(&self.config)?)?;
        Ok(())
    }

    fn write_params<W: Write>(&self, w: &mut W) -> Result<()> {
        wio::write_magic(w, PARAMS_MAGIC, PARAMS_VERSION)?;
        wio::write_u32(w, self.config.model_dim as u32)?;
        wio::write_u32(w, self.config.n_heads as u32)?;
        wio::write_u32(w, self.config.head_dim as u32)?;
        wio::write_u32(w, self.config.conv_width as u32)?;
        wio::write_u32(w, self.config.chunk_size as u32)?;
        wio::write_i32(w, self.config.mask_diagonal as i32)?;
        wio::write_f64(w, self.config.base_inner_lr)?;
        wio::write_f64(w, self.config.recon_weight_beta)?;
        wio::write_f64(w, self.config.layer_norm_eps)?;
        wio::write_matrix(w, &self.params.wq_base)?;
        wio::write_matrix(w, &self.params.conv_q)?;
        wio::write_matrix(w, &self.params.conv_k)?;
        wio::write_matrix(w, &self.params.wv)?;
        wio::write_vector(w, &self.params.lr_gate_weight)?;
        wio::write_f64(w, self.params.lr_gate_bias)?;
        wio::write_vector(w, &self.params.ln_gamma)?;
        wio::write_vector(w, &self.params.ln_beta)?;
        wio::write_matrix(w, &self.params.w_out)?;
        for m in &self.params.w0 {
            wio::write_matrix(w, m)?;
        }
        for b in &self.params.b0 {
            wio::write_vector(w, b)?;
        }
        Ok(())
    }

    pub fn load_params<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        Self::read_params(&mut r)
    }

    fn read_params<R: Read>(r: &mut R) -> Result<Self> {
        let version = wio::read_magic(r, PARAMS_MAGIC)?;
        if version != PARAMS_VERSION {
            return Err(Error::Format(format!(
                "unsupported params version {version}"
            )));
        }
        let config = TttConfig {
            model_dim: wio::read_u32(r)? as usize,
            n_heads: wio::read_u32(r)? as usize,
            head_dim: wio::read_u32(r)? as usize,
            conv_width: wio::read_u32(r)? as usize,
            chunk_size: wio::read_u32(r)? as usize,
            mask_diagonal: wio::read_i32(r)? as i64,
            base_inner_lr: wio::read_f64(r)?,
            recon_weight_beta: wio::read_f64(r)?,
            layer_norm_eps: wio::read_f64(r)?,
        };
        let wq_base = wio::read_matrix(r)?;
        let conv_q = wio::read_matrix(r)?;
        let conv_k = wio::read_matrix(r)?;
        let wv = wio::read_matrix(r)?;
        let lr_gate_weight = wio::read_vector(r)?;
        let lr_gate_bias = wio::read_f64(r)?;
        let ln_gamma = wio::read_vector(r)?;
        let ln_beta = wio::read_vector(r)?;
        let w_out = wio::read_matrix(r)?;
        let mut w0 = Vec::with_capacity(config.n_heads);
        for _ in 0..config.n_heads {
            w0.push(wio::read_matrix(r)?);
        }
        let mut b0 = Vec::with_capacity(config.n_heads);
        for _ in 0..config.n_heads {
            b0.push(wio::read_vector(r)?);
        }
        let params = ProjectionParams {
            wq_base,
            conv_q,
            conv_k,
            wv,
            lr_gate_weight,
            lr_gate_bias,
            ln_gamma,
            ln_beta,
            w_out,
            w0,
            b0,
        };
        Self::new(config, params)
    }
}

enum ForwardPath {
    Primal,
    Dual,
}

/// Row-vector times matrix plus bias: out[j] = sum_m x[m] W[m][j] + b[j].
fn mat_vec_left(x: &[f64], w: &Matrix, b: &[f64]) -> Vec<f64> {
    let mut out = b.to_vec();
    for (m, &xm) in x.iter().enumerate() {
        if xm == 0.0 {
            continue;
        }
        let row = w.row(m);
        for (o, &wj) in out.iter_mut().zip(row.iter()) {
            *o += xm * wj;
        }
    }
    out
}
