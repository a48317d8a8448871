//! Evaluation harness: runs gating policies over a corpus, records per-chunk
//! measurements, and computes the comparison metrics (oracle recovery,
//! decision accuracy, signal/advantage correlations, McNemar, FLOPs ledger)
//! plus the shuffled-input and mask-diagonal ablations.
//!
//! Measurement semantics: every chunk gets an initial forward (CE under SKIP,
//! reconstruction loss) and an update branch (one chunk-level gradient step
//! from the chunk-entry fast weights, then a re-forward; CE under UPDATE).
//! The carried fast-weight trajectory is the initial forward's, so a chunk's
//! recorded (ce_skip, ce_update) pair is the same for every policy and a
//! policy's realized CE is exactly ce_update or ce_skip per its decision.
//! That keeps per-chunk advantages well defined, lets the oracle be checked
//! against exhaustive subset enumeration, and isolates policies from each
//! other; the instrumentation cost of the always-run update branch is
//! reported in the ledger rather than charged to any policy.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::{chunk_stream, shuffle_within_sequence, BackboneWeights};
use crate::gating::{
    budget, oracle_advantage, oracle_select, random_select_m, select_top_m, ThresholdController,
};
use crate::numerics::{pearson, spearman};
use crate::ttt_layer::TttLayer;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Skip,
    Update1,
    Gate,
    Random,
    Oracle,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Skip => "skip",
            Policy::Update1 => "update1",
            Policy::Gate => "gate",
            Policy::Random => "random",
            Policy::Oracle => "oracle",
        }
    }

    pub fn all() -> [Policy; 5] {
        [
            Policy::Skip,
            Policy::Update1,
            Policy::Gate,
            Policy::Random,
            Policy::Oracle,
        ]
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "skip" => Ok(Policy::Skip),
            "update1" | "update_1" | "dense" => Ok(Policy::Update1),
            "gate" | "recon" => Ok(Policy::Gate),
            "random" | "rand" => Ok(Policy::Random),
            "oracle" => Ok(Policy::Oracle),
            other => Err(Error::Config(format!("unknown policy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalMode {
    /// Raw reconstruction loss from the initial forward; free.
    Recon,
    /// Loss reduction after one chunk update; needs the update branch.
    Delta,
}

impl FromStr for SignalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "recon" => Ok(SignalMode::Recon),
            "delta" => Ok(SignalMode::Delta),
            other => Err(Error::Config(format!("unknown signal mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalAggregation {
    /// Mean of per-token losses over the chunk (default).
    Mean,
    /// Loss at the last chunk position only.
    LastToken,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub seed: u64,
    pub seq_len: usize,
    pub chunk_size: usize,
    /// Target update rate rho.
    pub target_rate: f64,
    /// EMA smoothing factor alpha.
    pub alpha: f64,
    /// Calibration chunk count.
    pub n_cal: usize,
    pub signal_mode: SignalMode,
    pub signal_aggregation: SignalAggregation,
    /// Reset fast weights at sequence boundaries (default) or carry across.
    pub reset_per_sequence: bool,
    /// Oracle budget applied per sequence instead of over the whole corpus.
    pub oracle_per_sequence: bool,
    pub policies: Vec<Policy>,
}

impl HarnessConfig {
    pub fn desk_default() -> Self {
        Self {
            seed: 42,
            seq_len: 256,
            chunk_size: 64,
            target_rate: 0.5,
            alpha: 0.1,
            n_cal: 16,
            signal_mode: SignalMode::Recon,
            signal_aggregation: SignalAggregation::Mean,
            reset_per_sequence: true,
            oracle_per_sequence: false,
            policies: Policy::all().to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 || self.seq_len == 0 || self.seq_len % self.chunk_size != 0 {
            return Err(Error::Config(format!(
                "chunk_size {} must divide seq_len {}",
                self.chunk_size, self.seq_len
            )));
        }
        if !(self.target_rate > 0.0 && self.target_rate <= 1.0) {
            return Err(Error::Config(format!(
                "target rate must be in (0,1], got {}",
                self.target_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0,1], got {}", self.alpha)));
        }
        if self.n_cal == 0 {
            return Err(Error::Config("n_cal must be >= 1".into()));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("at least one policy required".into()));
        }
        Ok(())
    }

    pub fn has_policy(&self, p: Policy) -> bool {
        self.policies.contains(&p)
    }
}

/// Per-chunk measurements and each policy's decision/realized CE.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sequence_id: usize,
    pub chunk_index: usize,
    /// Gating signal from the initial forward (per configured aggregation).
    pub recon_loss: f64,
    /// Reconstruction-loss drop from one chunk update.
    pub ttt_delta: f64,
    pub ce_skip: f64,
    pub ce_update: f64,
    pub decisions: BTreeMap<String, bool>,
    pub ce_realized: BTreeMap<String, f64>,
    pub flops_charged: BTreeMap<String, f64>,
}

impl EvalRecord {
    pub fn advantage(&self) -> f64 {
        oracle_advantage(self.ce_skip, self.ce_update)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostLedger {
    pub chunk_count: usize,
    pub update_count: BTreeMap<String, usize>,
    pub relative_flops: BTreeMap<String, f64>,
    /// Instrumentation cost the harness pays per chunk to measure ce_update
    /// for every chunk regardless of decisions; not charged to any policy.
    pub measurement_overhead_per_chunk: f64,
    /// Extra per-chunk cost of the gating signal itself: 2.0 in delta mode
    /// (the signal requires a committed update step), 0.0 for raw loss.
    pub signal_overhead_per_chunk: f64,
}

impl CostLedger {
    fn from_records(records: &[EvalRecord], signal_mode: SignalMode) -> Self {
        let chunk_count = records.len();
        let mut update_count = BTreeMap::new();
        for r in records {
            for (name, d) in &r.decisions {
                *update_count.entry(name.clone()).or_insert(0) += usize::from(*d);
            }
        }
        let relative_flops = update_count
            .iter()
            .map(|(name, count)| {
                (
                    name.clone(),
                    relative_flops_gated(*count as f64 / chunk_count as f64),
                )
            })
            .collect();
        Self {
            chunk_count,
            update_count,
            relative_flops,
            measurement_overhead_per_chunk: 2.0,
            signal_overhead_per_chunk: match signal_mode {
                SignalMode::Recon => 0.0,
                SignalMode::Delta => 2.0,
            },
        }
    }
}

/// Relative FLOPs of a gated policy at a realized update rate: 1 + 2 rate.
pub fn relative_flops_gated(rate: f64) -> f64 {
    1.0 + 2.0 * rate
}

/// Relative FLOPs of a dense policy with N update steps per chunk: 1 + 2N.
pub fn relative_flops_update_n(n: u32) -> f64 {
    1.0 + 2.0 * f64::from(n)
}

#[derive(Debug, Clone)]
pub struct SuiteOutput {
    pub records: Vec<EvalRecord>,
    pub ledger: CostLedger,
    /// Final controller state when the gate policy ran.
    pub controller: Option<ThresholdController>,
}

impl SuiteOutput {
    pub fn mean_realized_ce(&self, policy: Policy) -> Option<f64> {
        let name = policy.name();
        let mut total = 0.0;
        for r in &self.records {
            total += *r.ce_realized.get(name)?;
        }
        Some(total / self.records.len() as f64)
    }

    pub fn realized_update_rate(&self, policy: Policy) -> Option<f64> {
        let count = self.ledger.update_count.get(policy.name())?;
        Some(*count as f64 / self.ledger.chunk_count as f64)
    }
}

/// One chunk's policy-independent measurements.
struct Measurement {
    sequence_id: usize,
    chunk_index: usize,
    signal: f64,
    recon_scalar: f64,
    ttt_delta: f64,
    ce_skip: f64,
    ce_update: f64,
}

fn locate(e: Error, sequence_id: usize, chunk_index: usize) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!(
            "{msg} (sequence {sequence_id}, chunk {chunk_index})"
        )),
        other => other,
    }
}

/// The measurement pass: initial forward and update branch for every chunk,
/// in global chunk order, carrying the initial forward's state.
fn measure(
    tokens: &[u8],
    backbone: &BackboneWeights,
    layer: &TttLayer,
    config: &HarnessConfig,
    limit: Option<usize>,
) -> Result<Vec<Measurement>> {
    let sequences = chunk_stream(tokens, config.seq_len, config.chunk_size)?;
    if sequences.is_empty() {
        return Err(Error::Empty(format!(
            "corpus yields no sequences at seq_len {} (needs >= {} tokens)",
            config.seq_len,
            config.seq_len + 1
        )));
    }
    let mut out = Vec::new();
    let mut carried = layer.init_state();
    'sequences: for chunks in &sequences {
        let seq_tokens: Vec<u8> = chunks.iter().flat_map(|c| c.tokens.clone()).collect();
        let sid = chunks[0].sequence_id;
        let hidden = backbone.forward(&seq_tokens).map_err(|e| locate(e, sid, 0))?;
        let mut state = if config.reset_per_sequence {
            layer.init_state()
        } else {
            carried.clone()
        };
        for chunk in chunks {
            let ci = chunk.chunk_index;
            let loc = |e| locate(e, sid, ci);
            let lo = ci * config.chunk_size;
            let h_chunk = hidden.row_block(lo, lo + config.chunk_size);
            let views = layer.project_views(&h_chunk).map_err(loc)?;

            let (init, state_next) = layer.dual_forward(&state, &views).map_err(loc)?;
            let ce_skip = backbone
                .ce_loss(&h_chunk, &init.outputs, &chunk.labels)
                .map_err(loc)?;

            let eta_mean = views.eta.iter().sum::<f64>() / views.eta.len() as f64;
            let updated = layer.apply_chunk_update(&state, &views, eta_mean).map_err(loc)?;
            let (re_fwd, _) = layer.dual_forward(&updated, &views).map_err(loc)?;
            let ce_update = backbone
                .ce_loss(&h_chunk, &re_fwd.outputs, &chunk.labels)
                .map_err(loc)?;
            let loss_after = layer.recon_mean(&updated, &views).map_err(loc)?;
            let ttt_delta = init.recon_loss_scalar - loss_after;

            let recon_signal = match config.signal_aggregation {
                SignalAggregation::Mean => init.recon_loss_scalar,
                SignalAggregation::LastToken => *init.per_token_recon.last().expect("chunk >= 1"),
            };
            let signal = match config.signal_mode {
                SignalMode::Recon => recon_signal,
                SignalMode::Delta => ttt_delta,
            };
            if !ce_skip.is_finite() || !ce_update.is_finite() {
                return Err(Error::non_finite_at("cross-entropy", sid, ci));
            }
            out.push(Measurement {
                sequence_id: sid,
                chunk_index: ci,
                signal,
                recon_scalar: recon_signal,
                ttt_delta,
                ce_skip,
                ce_update,
            });
            state = state_next;
            if let Some(n) = limit {
                if out.len() >= n {
                    break 'sequences;
                }
            }
        }
        carried = state;
    }
    Ok(out)
}

/// Run the configured policies over the corpus and record everything.
pub fn run_policy_suite(
    tokens: &[u8],
    backbone: &BackboneWeights,
    layer: &TttLayer,
    config: &HarnessConfig,
) -> Result<SuiteOutput> {
    config.validate()?;
    let measurements = measure(tokens, backbone, layer, config, None)?;
    let k_total = measurements.len();

    let mut decisions: BTreeMap<Policy, Vec<bool>> = BTreeMap::new();
    let mut controller_out = None;
    for &policy in &config.policies {
        if decisions.contains_key(&policy) {
            continue;
        }
        let d = match policy {
            Policy::Skip => vec![false; k_total],
            Policy::Update1 => vec![true; k_total],
            Policy::Random => random_select_m(
                k_total,
                budget(k_total, config.target_rate),
                config.seed,
            ),
            Policy::Gate => {
                let mut controller =
                    ThresholdController::new(config.target_rate, config.alpha, config.n_cal)?;
                let mut d = Vec::with_capacity(k_total);
                for m in &measurements {
                    d.push(controller.observe_and_decide(m.signal)?.decision.is_update());
                }
                controller_out = Some(controller);
                d
            }
            Policy::Oracle => {
                let advantages: Vec<f64> =
                    measurements.iter().map(|m| m.ce_skip - m.ce_update).collect();
                if config.oracle_per_sequence {
                    let mut d = Vec::with_capacity(k_total);
                    let mut i = 0;
                    while i < k_total {
                        let sid = measurements[i].sequence_id;
                        let mut j = i;
                        while j < k_total && measurements[j].sequence_id == sid {
                            j += 1;
                        }
                        d.extend(oracle_select(&advantages[i..j], config.target_rate)?);
                        i = j;
                    }
                    d
                } else {
                    oracle_select(&advantages, config.target_rate)?
                }
            }
        };
        decisions.insert(policy, d);
    }

    let records: Vec<EvalRecord> = measurements
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut dec = BTreeMap::new();
            let mut realized = BTreeMap::new();
            let mut flops = BTreeMap::new();
            for (policy, d) in &decisions {
                let on = d[i];
                dec.insert(policy.name().to_string(), on);
                realized.insert(
                    policy.name().to_string(),
                    if on { m.ce_update } else { m.ce_skip },
                );
                flops.insert(policy.name().to_string(), if on { 3.0 } else { 1.0 });
            }
            EvalRecord {
                sequence_id: m.sequence_id,
                chunk_index: m.chunk_index,
                recon_loss: m.recon_scalar,
                ttt_delta: m.ttt_delta,
                ce_skip: m.ce_skip,
                ce_update: m.ce_update,
                decisions: dec,
                ce_realized: realized,
                flops_charged: flops,
            }
        })
        .collect();

    let ledger = CostLedger::from_records(&records, config.signal_mode);
    let out = SuiteOutput {
        records,
        ledger,
        controller: controller_out,
    };

    // Oracle dominance holds by construction on the recorded advantages.
    if let (Some(oracle_ce), Some(random_ce)) = (
        out.mean_realized_ce(Policy::Oracle),
        out.mean_realized_ce(Policy::Random),
    ) {
        assert!(
            oracle_ce <= random_ce + 1e-12,
            "oracle dominance violated: {oracle_ce} > {random_ce}"
        );
    }
    Ok(out)
}

/// Run the first n_cal chunks through a fresh controller; returns the
/// calibrated controller and the buffered signals.
pub fn calibrate(
    tokens: &[u8],
    backbone: &BackboneWeights,
    layer: &TttLayer,
    config: &HarnessConfig,
) -> Result<(ThresholdController, Vec<f64>)> {
    config.validate()?;
    let measurements = measure(tokens, backbone, layer, config, Some(config.n_cal))?;
    if measurements.len() < config.n_cal {
        return Err(Error::Config(format!(
            "corpus has {} chunks, calibration needs {}",
            measurements.len(),
            config.n_cal
        )));
    }
    let mut controller =
        ThresholdController::new(config.target_rate, config.alpha, config.n_cal)?;
    let mut buffer = Vec::with_capacity(config.n_cal);
    for m in &measurements {
        controller.observe_and_decide(m.signal)?;
        buffer.push(m.signal);
    }
    Ok((controller, buffer))
}

/// Fraction of oracle improvement over SKIP captured by a method:
/// (skip - ours) / (skip - oracle).
pub fn oracle_recovery(mean_skip: f64, mean_ours: f64, mean_oracle: f64) -> Result<f64> {
    let denom = mean_skip - mean_oracle;
    if denom <= 0.0 {
        return Err(Error::Undefined(format!(
            "oracle recovery needs skip > oracle, got skip {mean_skip} oracle {mean_oracle}"
        )));
    }
    Ok((mean_skip - mean_ours) / denom)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CorrelationStats {
    pub pearson_r: f64,
    pub spearman_rho: f64,
    pub topk_overlap: f64,
}

/// Correlations between the gating signal and the oracle advantage, plus the
/// top-rho overlap of their rankings.
pub fn correlation_suite(
    records: &[EvalRecord],
    signal_mode: SignalMode,
    rho: f64,
) -> Result<CorrelationStats> {
    if records.len() < 3 {
        return Err(Error::Undefined(format!(
            "correlation needs >= 3 records, got {}",
            records.len()
        )));
    }
    let signal: Vec<f64> = records
        .iter()
        .map(|r| match signal_mode {
            SignalMode::Recon => r.recon_loss,
            SignalMode::Delta => r.ttt_delta,
        })
        .collect();
    let advantage: Vec<f64> = records.iter().map(EvalRecord::advantage).collect();
    let pearson_r = pearson(&signal, &advantage)?;
    let spearman_rho = spearman(&signal, &advantage)?;
    let m = budget(records.len(), rho);
    if m == 0 {
        return Err(Error::Undefined("top-k overlap with empty budget".into()));
    }
    let by_signal = select_top_m(&signal, m);
    let by_advantage = select_top_m(&advantage, m);
    let inter = by_signal
        .iter()
        .zip(by_advantage.iter())
        .filter(|(a, b)| **a && **b)
        .count();
    Ok(CorrelationStats {
        pearson_r,
        spearman_rho,
        topk_overlap: inter as f64 / m as f64,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McnemarResult {
    pub policy_a: String,
    pub policy_b: String,
    /// Chunks where a matched the oracle and b did not.
    pub b_discordant: usize,
    /// Chunks where b matched the oracle and a did not.
    pub c_discordant: usize,
    /// Continuity-corrected statistic (|b-c|-1)^2/(b+c); None when b+c = 0.
    pub statistic: Option<f64>,
    /// Chi-square(1) upper tail of the statistic. Suggestive only: chunks
    /// from one stream are not independent samples.
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionMetrics {
    /// Fraction of chunks where each policy's decision matches the oracle's.
    pub accuracy: BTreeMap<String, f64>,
    pub mcnemar: Option<McnemarResult>,
}

/// Decision agreement with the oracle, and McNemar's test between the gate
/// and random policies when both are present.
pub fn decision_metrics(records: &[EvalRecord]) -> Result<DecisionMetrics> {
    if records.is_empty() {
        return Err(Error::Empty("decision metrics on no records".into()));
    }
    let oracle = Policy::Oracle.name();
    if !records[0].decisions.contains_key(oracle) {
        return Err(Error::Config(
            "decision metrics need oracle decisions present".into(),
        ));
    }
    let mut accuracy = BTreeMap::new();
    for name in records[0].decisions.keys() {
        if name == oracle {
            continue;
        }
        let agree = records
            .iter()
            .filter(|r| r.decisions[name] == r.decisions[oracle])
            .count();
        accuracy.insert(name.clone(), agree as f64 / records.len() as f64);
    }

    let gate = Policy::Gate.name();
    let random = Policy::Random.name();
    let mcnemar = if records[0].decisions.contains_key(gate)
        && records[0].decisions.contains_key(random)
    {
        Some(mcnemar_vs_reference(records, gate, random, oracle))
    } else {
        None
    };
    Ok(DecisionMetrics { accuracy, mcnemar })
}

/// McNemar's test on two policies' agreement with a reference policy.
pub fn mcnemar_vs_reference(
    records: &[EvalRecord],
    policy_a: &str,
    policy_b: &str,
    reference: &str,
) -> McnemarResult {
    let mut b_disc = 0usize;
    let mut c_disc = 0usize;
    for r in records {
        let a_right = r.decisions[policy_a] == r.decisions[reference];
        let b_right = r.decisions[policy_b] == r.decisions[reference];
        match (a_right, b_right) {
            (true, false) => b_disc += 1,
            (false, true) => c_disc += 1,
            _ => {}
        }
    }
    let (statistic, p_value) = match mcnemar_statistic(b_disc, c_disc) {
        Some(stat) => (Some(stat), Some(chi_square_1_tail(stat))),
        None => (None, None),
    };
    McnemarResult {
        policy_a: policy_a.to_string(),
        policy_b: policy_b.to_string(),
        b_discordant: b_disc,
        c_discordant: c_disc,
        statistic,
        p_value,
    }
}

/// Continuity-corrected McNemar statistic; undefined when b + c = 0.
pub fn mcnemar_statistic(b: usize, c: usize) -> Option<f64> {
    if b + c == 0 {
        return None;
    }
    let diff = (b as f64 - c as f64).abs() - 1.0;
    Some(diff * diff / (b + c) as f64)
}

/// Upper tail of chi-square with one degree of freedom: P(X > x) = erfc(sqrt(x/2)).
pub fn chi_square_1_tail(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    erfc((x / 2.0).sqrt())
}

/// Complementary error function. Abramowitz-Stegun 7.1.26 rational
/// approximation for small arguments, asymptotic series in the far tail.
fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x > 3.0 {
        // erfc(x) ~ exp(-x^2)/(x sqrt(pi)) (1 - 1/(2x^2) + 3/(4x^4) - 15/(8x^6))
        let inv2 = 1.0 / (x * x);
        let series = 1.0 - 0.5 * inv2 + 0.75 * inv2 * inv2 - 1.875 * inv2 * inv2 * inv2;
        return (-x * x).exp() / (x * std::f64::consts::PI.sqrt()) * series;
    }
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    poly * (-x * x).exp()
}

#[derive(Debug, Clone)]
pub struct PairedRun {
    pub baseline: SuiteOutput,
    pub variant: SuiteOutput,
}

/// Relative CE improvement of the gate policy over SKIP, as a fraction of the
/// SKIP loss.
pub fn gate_improvement(output: &SuiteOutput) -> Option<f64> {
    let skip = output.mean_realized_ce(Policy::Skip)?;
    let gate = output.mean_realized_ce(Policy::Gate)?;
    Some((skip - gate) / skip)
}

/// Sanity check: run the suite on the corpus as-is and on a copy whose
/// sequences are internally shuffled (same seeds, same config). Structured
/// data should show a larger gate-over-SKIP improvement than shuffled data.
pub fn sanity_shuffled(
    tokens: &[u8],
    backbone: &BackboneWeights,
    layer: &TttLayer,
    config: &HarnessConfig,
) -> Result<PairedRun> {
    let baseline = run_policy_suite(tokens, backbone, layer, config)?;
    let shuffled = shuffle_corpus(tokens, config);
    let variant = run_policy_suite(&shuffled, backbone, layer, config)?;
    Ok(PairedRun { baseline, variant })
}

/// Shuffle each (seq_len + 1)-token sequence slice in place, deterministically
/// per (seed, sequence index). Token multisets per sequence are preserved.
pub fn shuffle_corpus(tokens: &[u8], config: &HarnessConfig) -> Vec<u8> {
    let stride = config.seq_len + 1;
    let mut out = tokens.to_vec();
    let n_sequences = tokens.len() / stride;
    for s in 0..n_sequences {
        let slice = &tokens[s * stride..(s + 1) * stride];
        let shuffled = shuffle_within_sequence(slice, config.seed.wrapping_add(s as u64));
        out[s * stride..(s + 1) * stride].copy_from_slice(&shuffled);
    }
    out
}

/// Ablation: identical runs differing only in the causal-mask diagonal.
pub fn ablate_diagonal(
    tokens: &[u8],
    backbone: &BackboneWeights,
    layer: &TttLayer,
    config: &HarnessConfig,
) -> Result<PairedRun> {
    let mut include = layer.clone();
    include.config.mask_diagonal = 0;
    let mut strict = layer.clone();
    strict.config.mask_diagonal = -1;
    Ok(PairedRun {
        baseline: run_policy_suite(tokens, backbone, &include, config)?,
        variant: run_policy_suite(tokens, backbone, &strict, config)?,
    })
}
