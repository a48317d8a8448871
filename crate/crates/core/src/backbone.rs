//! Frozen toy causal language model over bytes, plus the corpus plumbing
//! around it: identity byte tokenizer, sequence/chunk splitting, teacher-forced
//! cross-entropy, and the within-sequence shuffle used by the sanity check.
//!
//! The backbone is a standard pre-LN transformer (embeddings + learned
//! positions, causal self-attention, GELU MLP, final LayerNorm) with the LM
//! head tied to the embedding table by default. It is a deterministic function
//! of (seed, config) and is never mutated during evaluation; the fast-weight
//! layer hangs off the final hidden states as a residual branch before the
//! head.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::{dot, layer_norm_forward, Matrix};
use crate::rng::SeededRng;
use crate::ttt_layer::random_orthogonal;
use crate::weights_io as wio;
use crate::{Error, Result};

const WEIGHTS_MAGIC: &[u8; 8] = b"BACKBNW1";
const WEIGHTS_VERSION: u32 = 1;
const CORPUS_MAGIC: &[u8; 8] = b"BYTECRP1";
const CORPUS_VERSION: u32 = 1;

/// Init scales. Attention and MLP outputs are damped so the token embedding
/// survives the residual stream and the tied head keeps a usable readout;
/// the embedding scale sets the softmax temperature and is kept small enough
/// that the untrained model is never confidently wrong.
const EMBED_SCALE: f64 = 0.3;
const POS_SCALE: f64 = 0.05;
const ATTN_PROJ_SCALE: f64 = 0.5;
const ATTN_OUT_SCALE: f64 = 0.25;
const MLP_OUT_SCALE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub n_blocks: usize,
    pub model_dim: usize,
    pub n_heads: usize,
    pub mlp_hidden: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    /// Tied head reads logits off the embedding table transpose.
    pub tied_head: bool,
}

impl BackboneConfig {
    pub fn desk_default() -> Self {
        Self {
            n_blocks: 2,
            model_dim: 64,
            n_heads: 2,
            mlp_hidden: 256,
            vocab_size: 256,
            max_positions: 1024,
            tied_head: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0
            || self.model_dim == 0
            || self.n_heads == 0
            || self.mlp_hidden == 0
            || self.vocab_size == 0
            || self.max_positions == 0
        {
            return Err(Error::Config("backbone dims must be >= 1".into()));
        }
        if self.model_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by n_heads {}",
                self.model_dim, self.n_heads
            )));
        }
        if self.vocab_size > 256 {
            return Err(Error::Config("byte-level vocab cannot exceed 256".into()));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BlockParams {
    ln1_gamma: Vec<f64>,
    ln1_beta: Vec<f64>,
    wq: Matrix,
    wk: Matrix,
    wv: Matrix,
    wo: Matrix,
    ln2_gamma: Vec<f64>,
    ln2_beta: Vec<f64>,
    mlp_w1: Matrix,
    mlp_b1: Vec<f64>,
    mlp_w2: Matrix,
    mlp_b2: Vec<f64>,
}

/// Frozen backbone weights. Deterministic in (seed, config).
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneWeights {
    pub config: BackboneConfig,
    embedding: Matrix,
    positional: Matrix,
    blocks: Vec<BlockParams>,
    ln_f_gamma: Vec<f64>,
    ln_f_beta: Vec<f64>,
    /// Present only for an untied head.
    head: Option<Matrix>,
}

impl BackboneWeights {
    pub fn deterministic_init(config: &BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let mut rng = SeededRng::derive(seed, "backbone");

        let mut embedding = Matrix::zeros(config.vocab_size, d);
        rng.fill_normal(embedding.data_mut(), EMBED_SCALE);
        let mut positional = Matrix::zeros(config.max_positions, d);
        rng.fill_normal(positional.data_mut(), POS_SCALE);

        let mut blocks = Vec::with_capacity(config.n_blocks);
        for _ in 0..config.n_blocks {
            let mut mlp_w1 = Matrix::zeros(d, config.mlp_hidden);
            rng.fill_normal(mlp_w1.data_mut(), 1.0 / (d as f64).sqrt());
            let mut mlp_w2 = Matrix::zeros(config.mlp_hidden, d);
            rng.fill_normal(
                mlp_w2.data_mut(),
                MLP_OUT_SCALE / (config.mlp_hidden as f64).sqrt(),
            );
            blocks.push(BlockParams {
                ln1_gamma: vec![1.0; d],
                ln1_beta: vec![0.0; d],
                wq: random_orthogonal(d, &mut rng).scale(ATTN_PROJ_SCALE),
                wk: random_orthogonal(d, &mut rng).scale(ATTN_PROJ_SCALE),
                wv: random_orthogonal(d, &mut rng).scale(ATTN_PROJ_SCALE),
                wo: random_orthogonal(d, &mut rng).scale(ATTN_OUT_SCALE),
                ln2_gamma: vec![1.0; d],
                ln2_beta: vec![0.0; d],
                mlp_w1,
                mlp_b1: vec![0.0; config.mlp_hidden],
                mlp_w2,
                mlp_b2: vec![0.0; d],
            });
        }

        let head = if config.tied_head {
            None
        } else {
            let mut h = Matrix::zeros(d, config.vocab_size);
            rng.fill_normal(h.data_mut(), 1.0 / (d as f64).sqrt());
            Some(h)
        };

        Ok(Self {
            config: config.clone(),
            embedding,
            positional,
            blocks,
            ln_f_gamma: vec![1.0; d],
            ln_f_beta: vec![0.0; d],
            head,
        })
    }

    /// Content hash over every parameter; identical before and after any
    /// evaluation run.
    pub fn content_hash(&self) -> u64 {
        let mut parts: Vec<&[f64]> = vec![self.embedding.data(), self.positional.data()];
        for b in &self.blocks {
            parts.push(&b.ln1_gamma);
            parts.push(&b.ln1_beta);
            parts.push(b.wq.data());
            parts.push(b.wk.data());
            parts.push(b.wv.data());
            parts.push(b.wo.data());
            parts.push(&b.ln2_gamma);
            parts.push(&b.ln2_beta);
            parts.push(b.mlp_w1.data());
            parts.push(&b.mlp_b1);
            parts.push(b.mlp_w2.data());
            parts.push(&b.mlp_b2);
        }
        parts.push(&self.ln_f_gamma);
        parts.push(&self.ln_f_beta);
        if let Some(h) = &self.head {
            parts.push(h.data());
        }
        wio::content_hash(&parts)
    }

    /// Full-sequence causal forward; returns the final hidden states
    /// (post final LayerNorm), one row per token.
    pub fn forward(&self, tokens: &[u8]) -> Result<Matrix> {
        let t_len = tokens.len();
        if t_len == 0 {
            return Err(Error::Empty("backbone forward on empty sequence".into()));
        }
        if t_len > self.config.max_positions {
            return Err(Error::Config(format!(
                "sequence length {} exceeds max positions {}",
                t_len, self.config.max_positions
            )));
        }
        let d = self.config.model_dim;
        let mut x = Matrix::zeros(t_len, d);
        for (t, &tok) in tokens.iter().enumerate() {
            let id = tok as usize;
            if id >= self.config.vocab_size {
                return Err(Error::Config(format!(
                    "token id {id} >= vocab size {}",
                    self.config.vocab_size
                )));
            }
            for c in 0..d {
                x.set(t, c, self.embedding.get(id, c) + self.positional.get(t, c));
            }
        }

        let eps = 1e-6;
        for block in &self.blocks {
            // x += attention(LN(x))
            let mut normed = Matrix::zeros(t_len, d);
            for t in 0..t_len {
                let (y, _) = layer_norm_forward(x.row(t), &block.ln1_gamma, &block.ln1_beta, eps)?;
                normed.row_mut(t).copy_from_slice(&y);
            }
            let attn = self.attention(&normed, block)?;
            for t in 0..t_len {
                for c in 0..d {
                    x.set(t, c, x.get(t, c) + attn.get(t, c));
                }
            }
            // x += mlp(LN(x))
            let mut normed = Matrix::zeros(t_len, d);
            for t in 0..t_len {
                let (y, _) = layer_norm_forward(x.row(t), &block.ln2_gamma, &block.ln2_beta, eps)?;
                normed.row_mut(t).copy_from_slice(&y);
            }
            let up = normed.matmul(&block.mlp_w1)?;
            let mut act = up;
            for t in 0..t_len {
                for (c, v) in act.row_mut(t).iter_mut().enumerate() {
                    *v = gelu(*v + block.mlp_b1[c]);
                }
            }
            let down = act.matmul(&block.mlp_w2)?;
            for t in 0..t_len {
                for c in 0..d {
                    x.set(t, c, x.get(t, c) + down.get(t, c) + block.mlp_b2[c]);
                }
            }
        }

        let mut out = Matrix::zeros(t_len, d);
        for t in 0..t_len {
            let (y, _) = layer_norm_forward(x.row(t), &self.ln_f_gamma, &self.ln_f_beta, eps)?;
            out.row_mut(t).copy_from_slice(&y);
        }
        if !out.is_finite() {
            return Err(Error::NonFinite("backbone hidden states".into()));
        }
        Ok(out)
    }

    fn attention(&self, x: &Matrix, block: &BlockParams) -> Result<Matrix> {
        let t_len = x.rows();
        let d = self.config.model_dim;
        let hd = self.config.head_dim();
        let q = x.matmul(&block.wq)?;
        let k = x.matmul(&block.wk)?;
        let v = x.matmul(&block.wv)?;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut ctx = Matrix::zeros(t_len, d);
        for h in 0..self.config.n_heads {
            let c0 = h * hd;
            for t in 0..t_len {
                // Causal softmax over positions 0..=t only; later positions
                // are never touched, keeping the prefix bit-exact.
                let qt = &q.row(t)[c0..c0 + hd];
                let mut scores = Vec::with_capacity(t + 1);
                let mut max = f64::NEG_INFINITY;
                for i in 0..=t {
                    let s = dot(qt, &k.row(i)[c0..c0 + hd]) * scale;
                    max = max.max(s);
                    scores.push(s);
                }
                let mut denom = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    denom += *s;
                }
                let out = &mut ctx.row_mut(t)[c0..c0 + hd];
                for (i, &p) in scores.iter().enumerate() {
                    let weight = p / denom;
                    for (o, &vi) in out.iter_mut().zip(v.row(i)[c0..c0 + hd].iter()) {
                        *o += weight * vi;
                    }
                }
            }
        }
        ctx.matmul(&block.wo)
    }

    fn head_logits(&self, s: &[f64]) -> Vec<f64> {
        match &self.head {
            Some(h) => {
                let mut out = vec![0.0; self.config.vocab_size];
                for (m, &sm) in s.iter().enumerate() {
                    let row = h.row(m);
                    for (o, &w) in out.iter_mut().zip(row.iter()) {
                        *o += sm * w;
                    }
                }
                out
            }
            None => (0..self.config.vocab_size)
                .map(|y| dot(s, self.embedding.row(y)))
                .collect(),
        }
    }

    /// Per-token teacher-forced cross-entropy in nats. The fast-weight layer
    /// output joins the residual stream after the final block, before the
    /// head: logits = (hidden + layer_out) . head.
    pub fn ce_per_token(
        &self,
        hidden: &Matrix,
        layer_out: &Matrix,
        labels: &[u8],
    ) -> Result<Vec<f64>> {
        let t_len = hidden.rows();
        if layer_out.rows() != t_len
            || hidden.cols() != self.config.model_dim
            || layer_out.cols() != self.config.model_dim
        {
            return Err(Error::Dim("ce: hidden/layer output shape mismatch".into()));
        }
        if labels.len() != t_len {
            return Err(Error::Dim(format!(
                "ce: {} labels for {} positions",
                labels.len(),
                t_len
            )));
        }
        let mut out = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let s: Vec<f64> = hidden
                .row(t)
                .iter()
                .zip(layer_out.row(t).iter())
                .map(|(a, b)| a + b)
                .collect();
            let logits = self.head_logits(&s);
            let label = labels[t] as usize;
            if label >= logits.len() {
                return Err(Error::Config(format!("label {label} out of vocab")));
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            out.push(lse - logits[label]);
        }
        Ok(out)
    }

    /// Mean cross-entropy over the chunk, nats.
    pub fn ce_loss(&self, hidden: &Matrix, layer_out: &Matrix, labels: &[u8]) -> Result<f64> {
        let per_token = self.ce_per_token(hidden, layer_out, labels)?;
        Ok(per_token.iter().sum::<f64>() / per_token.len() as f64)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        wio::write_magic(&mut w, WEIGHTS_MAGIC, WEIGHTS_VERSION)?;
        wio::write_u32(&mut w, self.config.n_blocks as u32)?;
        wio::write_u32(&mut w, self.config.model_dim as u32)?;
        wio::write_u32(&mut w, self.config.n_heads as u32)?;
        wio::write_u32(&mut w, self.config.mlp_hidden as u32)?;
        wio::write_u32(&mut w, self.config.vocab_size as u32)?;
        wio::write_u32(&mut w, self.config.max_positions as u32)?;
        wio::write_u32(&mut w, u32::from(self.config.tied_head))?;
        wio::write_matrix(&mut w, &self.embedding)?;
        wio::write_matrix(&mut w, &self.positional)?;
        for b in &self.blocks {
            wio::write_vector(&mut w, &b.ln1_gamma)?;
            wio::write_vector(&mut w, &b.ln1_beta)?;
            wio::write_matrix(&mut w, &b.wq)?;
            wio::write_matrix(&mut w, &b.wk)?;
            wio::write_matrix(&mut w, &b.wv)?;
            wio::write_matrix(&mut w, &b.wo)?;
            wio::write_vector(&mut w, &b.ln2_gamma)?;
            wio::write_vector(&mut w, &b.ln2_beta)?;
            wio::write_matrix(&mut w, &b.mlp_w1)?;
            wio::write_vector(&mut w, &b.mlp_b1)?;
            wio::write_matrix(&mut w, &b.mlp_w2)?;
            wio::write_vector(&mut w, &b.mlp_b2)?;
        }
        wio::write_vector(&mut w, &self.ln_f_gamma)?;
        wio::write_vector(&mut w, &self.ln_f_beta)?;
        if let Some(h) = &self.head {
            wio::write_matrix(&mut w, h)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        let version = wio::read_magic(&mut r, WEIGHTS_MAGIC)?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Format(format!(
                "unsupported backbone weights version {version}"
            )));
        }
        let config = BackboneConfig {
            n_blocks: wio::read_u32(&mut r)? as usize,
            model_dim: wio::read_u32(&mut r)? as usize,
            n_heads: wio::read_u32(&mut r)? as usize,
            mlp_hidden: wio::read_u32(&mut r)? as usize,
            vocab_size: wio::read_u32(&mut r)? as usize,
            max_positions: wio::read_u32(&mut r)? as usize,
            tied_head: wio::read_u32(&mut r)? != 0,
        };
        config.validate()?;
        let embedding = wio::read_matrix(&mut r)?;
        let positional = wio::read_matrix(&mut r)?;
        let mut blocks = Vec::with_capacity(config.n_blocks);
        for _ in 0..config.n_blocks {
            blocks.push(BlockParams {
                ln1_gamma: wio::read_vector(&mut r)?,
                ln1_beta: wio::read_vector(&mut r)?,
                wq: wio::read_matrix(&mut r)?,
                wk: wio::read_matrix(&mut r)?,
                wv: wio::read_matrix(&mut r)?,
                wo: wio::read_matrix(&mut r)?,
                ln2_gamma: wio::read_vector(&mut r)?,
                ln2_beta: wio::read_vector(&mut r)?,
                mlp_w1: wio::read_matrix(&mut r)?,
                mlp_b1: wio::read_vector(&mut r)?,
                mlp_w2: wio::read_matrix(&mut r)?,
                mlp_b2: wio::read_vector(&mut r)?,
            });
        }
        let ln_f_gamma = wio::read_vector(&mut r)?;
        let ln_f_beta = wio::read_vector(&mut r)?;
        let head = if config.tied_head {
            None
        } else {
            Some(wio::read_matrix(&mut r)?)
        };
        Ok(Self {
            config,
            embedding,
            positional,
            blocks,
            ln_f_gamma,
            ln_f_beta,
            head,
        })
    }
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

/// Identity byte tokenizer.
pub fn tokenize(bytes: &[u8]) -> Vec<u8> {
    bytes.to_vec()
}

pub fn detokenize(tokens: &[u8]) -> Vec<u8> {
    tokens.to_vec()
}

/// Fixed-length slice of one sequence with teacher-forcing labels:
/// labels[t] is the token following tokens[t] in the original stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenChunk {
    pub sequence_id: usize,
    pub chunk_index: usize,
    pub tokens: Vec<u8>,
    pub labels: Vec<u8>,
}

/// Split a token stream into non-overlapping sequences of `seq_len` inputs
/// (each consuming seq_len + 1 stream tokens so every position has a label),
/// each cut into seq_len / chunk_size chunks. The trailing remainder of the
/// stream is dropped.
pub fn chunk_stream(
    tokens: &[u8],
    seq_len: usize,
    chunk_size: usize,
) -> Result<Vec<Vec<TokenChunk>>> {
    if chunk_size == 0 {
        return Err(Error::Config("chunk_size must be >= 1".into()));
    }
    if seq_len == 0 || seq_len % chunk_size != 0 {
        return Err(Error::Config(format!(
            "chunk_size {chunk_size} must divide seq_len {seq_len}"
        )));
    }
    let stride = seq_len + 1;
    let n_sequences = tokens.len() / stride;
    let chunks_per_seq = seq_len / chunk_size;
    let mut out = Vec::with_capacity(n_sequences);
    for s in 0..n_sequences {
        let slice = &tokens[s * stride..(s + 1) * stride];
        let mut chunks = Vec::with_capacity(chunks_per_seq);
        for c in 0..chunks_per_seq {
            let lo = c * chunk_size;
            let hi = lo + chunk_size;
            chunks.push(TokenChunk {
                sequence_id: s,
                chunk_index: c,
                tokens: slice[lo..hi].to_vec(),
                labels: slice[lo + 1..hi + 1].to_vec(),
            });
        }
        out.push(chunks);
    }
    Ok(out)
}

/// Uniform random permutation of one sequence's tokens from a seeded stream.
/// Labels must be recomputed from the permuted stream (chunk_stream does).
pub fn shuffle_within_sequence(tokens: &[u8], seed: u64) -> Vec<u8> {
    let mut out = tokens.to_vec();
    let mut rng = SeededRng::derive(seed, "shuffle-sequence");
    rng.shuffle(&mut out);
    out
}

/// Synthetic corpus families for desk-scale experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusPattern {
    /// Per-sequence template bytes laid out in runs with a noise fraction;
    /// chunk difficulty varies with template novelty and noise density.
    Patterned,
    /// One constant byte; an easy fixture.
    Constant,
    /// Uniform random bytes; a hard fixture.
    Random,
}

impl std::str::FromStr for CorpusPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "patterned" => Ok(CorpusPattern::Patterned),
            "constant" => Ok(CorpusPattern::Constant),
            "random" => Ok(CorpusPattern::Random),
            other => Err(Error::Config(format!("unknown corpus pattern '{other}'"))),
        }
    }
}

/// Generate `n_sequences` sequences of (seq_len + 1) tokens each, sized so
/// the stream chunks without remainder.
///
/// A patterned sequence mixes two block kinds over a disjoint per-sequence
/// byte alphabet: plain runs of a single byte (easy for any repeat-biased
/// model) and repeated motifs of 3-6 distinct bytes whose successor
/// structure is perfectly regular but invisible to a frozen backbone. One
/// fresh motif usually appears mid-sequence and a small typo rate scatters
/// random bytes. Chunks therefore range from "novel motif, everything to
/// learn" to "seen it all, nothing to gain", the difficulty spread the
/// gating experiments need.
pub fn generate_corpus(
    pattern: CorpusPattern,
    n_sequences: usize,
    seq_len: usize,
    seed: u64,
) -> Vec<u8> {
    let stride = seq_len + 1;
    let mut rng = SeededRng::derive(seed, "synth-corpus");
    let mut out = Vec::with_capacity(n_sequences * stride);
    for _ in 0..n_sequences {
        match pattern {
            CorpusPattern::Constant => out.extend(std::iter::repeat_n(b'a', stride)),
            CorpusPattern::Random => {
                out.extend((0..stride).map(|_| rng.below(256) as u8));
            }
            CorpusPattern::Patterned => {
                // Disjoint byte pool so every byte has one successor rule.
                let mut alphabet: Vec<u8> = (0..=255).collect();
                rng.shuffle(&mut alphabet);
                let mut pool = alphabet.into_iter();
                let draw_motif = |pool: &mut dyn Iterator<Item = u8>,
                                  rng: &mut SeededRng|
                 -> Vec<u8> {
                    let len = 3 + rng.below(4);
                    (0..len).map(|_| pool.next().expect("alphabet")).collect()
                };
                let plain: Vec<u8> = (0..1 + rng.below(2))
                    .map(|_| pool.next().expect("alphabet"))
                    .collect();
                let n_motifs = 1 + rng.below(2);
                let mut motifs: Vec<Vec<u8>> = (0..n_motifs)
                    .map(|_| draw_motif(&mut pool, &mut rng))
                    .collect();
                let typo_rate = 0.01 + 0.04 * rng.uniform();
                let novel_at = if rng.uniform() < 0.6 {
                    Some(stride / 4 + rng.below(stride / 2))
                } else {
                    None
                };
                let mut written = 0;
                while written < stride {
                    if let Some(pos) = novel_at {
                        if written >= pos && motifs.len() == n_motifs {
                            motifs.push(draw_motif(&mut pool, &mut rng));
                        }
                    }
                    let run = (24 + rng.below(41)).min(stride - written);
                    // Half the blocks are plain runs, half motif repeats.
                    let block: Vec<u8> = if rng.uniform() < 0.5 {
                        vec![plain[rng.below(plain.len())]]
                    } else {
                        motifs[rng.below(motifs.len())].clone()
                    };
                    for i in 0..run {
                        if rng.uniform() < typo_rate {
                            out.push(rng.below(256) as u8);
                        } else {
                            out.push(block[i % block.len()]);
                        }
                    }
                    written += run;
                }
            }
        }
    }
    out
}

pub fn write_corpus<P: AsRef<Path>>(path: P, tokens: &[u8]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    wio::write_magic(&mut w, CORPUS_MAGIC, CORPUS_VERSION)?;
    wio::write_u64(&mut w, tokens.len() as u64)?;
    w.write_all(tokens)?;
    w.flush()?;
    Ok(())
}

pub fn read_corpus<P: AsRef<Path>>(path: P) -> Result<Vec<u8>> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let version = wio::read_magic(&mut r, CORPUS_MAGIC)?;
    if version != CORPUS_VERSION {
        return Err(Error::Format(format!("unsupported corpus version {version}")));
    }
    let count = wio::read_u64(&mut r)? as usize;
    let mut tokens = vec![0u8; count];
    r.read_exact(&mut tokens)?;
    Ok(tokens)
}

/// Load corpus tokens from a path: a directory of UTF-8 text files (read in
/// sorted filename order), a token-stream .bin written by [`write_corpus`],
/// or a plain text file.
pub fn load_corpus<P: AsRef<Path>>(path: P) -> Result<Vec<u8>> {
    let path = path.as_ref();
    if path.is_dir() {
        let mut entries: Vec<_> = std::fs::read_dir(path)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        if entries.is_empty() {
            return Err(Error::Empty(format!("no files in corpus dir {path:?}")));
        }
        let mut tokens = Vec::new();
        for file in entries {
            tokens.extend_from_slice(&std::fs::read(&file)?);
        }
        return Ok(tokens);
    }
    let bytes = std::fs::read(path)?;
    if bytes.len() >= 8 && &bytes[..8] == CORPUS_MAGIC {
        return read_corpus(path);
    }
    if bytes.is_empty() {
        return Err(Error::Empty(format!("corpus file {path:?} is empty")));
    }
    Ok(bytes)
}
