//! Command-line entry points: eval, calibrate, ablate, synth.
//!
//! Every command is deterministic given (flags, seed, input files). Outputs
//! are computed fully before anything is written, so a failing run never
//! leaves partial files. Exit codes: 0 success, 2 configuration error,
//! 3 numeric failure, 4 I/O failure.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::backbone::{
    generate_corpus, load_corpus, write_corpus, BackboneConfig, BackboneWeights, CorpusPattern,
};
use crate::harness::{
    ablate_diagonal, calibrate, gate_improvement, run_policy_suite, sanity_shuffled,
    HarnessConfig, Policy, SignalAggregation, SignalMode, SuiteOutput,
};
use crate::numerics::nearest_rank_percentile;
use crate::report::{build_summary, emit_report};
use crate::ttt_layer::{ProjectionParams, TttConfig, TttLayer};
use crate::{Error, Result};

/// Environment variable providing the default output directory.
pub const OUT_DIR_ENV: &str = "TTT_GATE_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "ttt-gate",
    version,
    about = "Gated test-time training over byte corpora: evaluate policies, calibrate the threshold gate, run ablations, generate synthetic corpora"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run gating policies over a corpus; write report.json and records.csv.
    Eval(EvalArgs),
    /// Calibrate the gate threshold on the first n-cal chunks; write a
    /// controller checkpoint.
    Calibrate(CalibrateArgs),
    /// Paired ablation runs: mask diagonal, shuffled input, or delta signal.
    Ablate(AblateArgs),
    /// Generate a synthetic byte corpus file.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Corpus path: token-stream .bin, plain text file, or directory of text
    /// files (read in sorted filename order).
    #[arg(long)]
    pub corpus: PathBuf,

    /// Optional weights path: a fast-weight layer params file, a backbone
    /// weights file, or a directory containing `ttt.params` and/or
    /// `backbone.weights`. Components without a file are deterministically
    /// initialized from --seed.
    #[arg(long)]
    pub weights: Option<PathBuf>,

    #[arg(long, default_value_t = 42)]
    pub seed: u64,

    #[arg(long, default_value_t = 256)]
    pub seq_len: usize,

    #[arg(long, default_value_t = 64)]
    pub chunk_size: usize,

    /// Target update rate rho.
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,

    /// EMA smoothing factor alpha.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,

    /// Number of calibration chunks.
    #[arg(long, default_value_t = 16)]
    pub ncal: usize,

    /// Causal mask diagonal offset: 0 includes each token's own gradient,
    /// -1 excludes it.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub mask_k: i64,

    /// Comma-separated policies to run: skip,update1,gate,random,oracle.
    #[arg(long, default_value = "skip,update1,gate,random,oracle")]
    pub policies: String,

    /// Gating signal: recon (raw reconstruction loss) or delta (loss drop
    /// after one update step; costs an extra update per chunk).
    #[arg(long, default_value = "recon")]
    pub signal: String,

    /// Output directory; defaults to $TTT_GATE_OUT, then ./out.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// Mask diagonal k = 0 vs k = -1.
    Diagonal,
    /// Structured corpus vs per-sequence shuffled copy.
    Shuffled,
    /// Gate on the delta signal instead of raw reconstruction loss.
    Delta,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Which ablation to run.
    #[arg(value_enum)]
    pub which: Ablation,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Number of sequences to emit.
    #[arg(long, default_value_t = 64)]
    pub sequences: usize,
    #[arg(long, default_value_t = 256)]
    pub seq_len: usize,
    /// Corpus family: patterned, constant, or random.
    #[arg(long, default_value = "patterned")]
    pub pattern: String,
    /// Output corpus file.
    #[arg(long)]
    pub out: PathBuf,
}

/// Validated run configuration, echoed verbatim into report.json.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub corpus: PathBuf,
    pub weights: Option<PathBuf>,
    pub seed: u64,
    pub seq_len: usize,
    pub chunk_size: usize,
    pub rho: f64,
    pub alpha: f64,
    pub n_cal: usize,
    pub mask_k: i64,
    pub policies: Vec<String>,
    pub signal: String,
    pub out_dir: PathBuf,
}

impl RunConfig {
    fn from_common(command: &str, common: &CommonArgs) -> Result<Self> {
        let policies: Vec<String> = common
            .policies
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if policies.is_empty() {
            return Err(Error::Config("no policies given".into()));
        }
        for p in &policies {
            Policy::from_str(p)?;
        }
        SignalMode::from_str(&common.signal)?;
        let out_dir = common
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        let config = Self {
            command: command.to_string(),
            corpus: common.corpus.clone(),
            weights: common.weights.clone(),
            seed: common.seed,
            seq_len: common.seq_len,
            chunk_size: common.chunk_size,
            rho: common.rho,
            alpha: common.alpha,
            n_cal: common.ncal,
            mask_k: common.mask_k,
            policies,
            signal: common.signal.clone(),
            out_dir,
        };
        config.harness_config()?.validate()?;
        Ok(config)
    }

    pub fn harness_config(&self) -> Result<HarnessConfig> {
        Ok(HarnessConfig {
            seed: self.seed,
            seq_len: self.seq_len,
            chunk_size: self.chunk_size,
            target_rate: self.rho,
            alpha: self.alpha,
            n_cal: self.n_cal,
            signal_mode: SignalMode::from_str(&self.signal)?,
            signal_aggregation: SignalAggregation::Mean,
            reset_per_sequence: true,
            oracle_per_sequence: false,
            policies: self
                .policies
                .iter()
                .map(|p| Policy::from_str(p))
                .collect::<Result<Vec<_>>>()?,
        })
    }
}

const PARAMS_FILE_NAME: &str = "ttt.params";
const BACKBONE_FILE_NAME: &str = "backbone.weights";

fn sniff_magic(path: &Path) -> Result<[u8; 8]> {
    use std::io::Read;
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    Ok(magic)
}

/// Resolve the backbone and fast-weight layer for a run: load whatever the
/// --weights path provides, deterministically initialize the rest from seed.
pub fn load_components(config: &RunConfig) -> Result<(BackboneWeights, TttLayer)> {
    let mut layer: Option<TttLayer> = None;
    let mut backbone: Option<BackboneWeights> = None;
    if let Some(path) = &config.weights {
        if path.is_dir() {
            let params_path = path.join(PARAMS_FILE_NAME);
            if params_path.is_file() {
                layer = Some(TttLayer::load_params(&params_path)?);
            }
            let backbone_path = path.join(BACKBONE_FILE_NAME);
            if backbone_path.is_file() {
                backbone = Some(BackboneWeights::load(&backbone_path)?);
            }
            if layer.is_none() && backbone.is_none() {
                return Err(Error::Config(format!(
                    "weights dir {path:?} has neither {PARAMS_FILE_NAME} nor {BACKBONE_FILE_NAME}"
                )));
            }
        } else {
            match &sniff_magic(path)? {
                b"TTTPRMS1" => layer = Some(TttLayer::load_params(path)?),
                b"BACKBNW1" => backbone = Some(BackboneWeights::load(path)?),
                other => {
                    return Err(Error::Format(format!(
                        "unrecognized weights magic {:?} in {path:?}",
                        String::from_utf8_lossy(other)
                    )))
                }
            }
        }
    }

    let backbone = match backbone {
        Some(b) => b,
        None => {
            let mut bcfg = BackboneConfig::desk_default();
            bcfg.max_positions = bcfg.max_positions.max(config.seq_len);
            BackboneWeights::deterministic_init(&bcfg, config.seed)?
        }
    };
    let layer = match layer {
        Some(mut l) => {
            // Chunk size and mask diagonal are runtime choices; the file
            // provides the projections.
            l.config.chunk_size = config.chunk_size;
            l.config.mask_diagonal = config.mask_k;
            l.config.validate()?;
            l
        }
        None => {
            let mut tcfg = TttConfig::desk_default();
            tcfg.model_dim = backbone.config.model_dim;
            tcfg.head_dim = tcfg.model_dim / tcfg.n_heads;
            tcfg.chunk_size = config.chunk_size;
            tcfg.mask_diagonal = config.mask_k;
            let params = ProjectionParams::deterministic_init(&tcfg, config.seed)?;
            TttLayer::new(tcfg, params)?
        }
    };
    if layer.config.model_dim != backbone.config.model_dim {
        return Err(Error::Config(format!(
            "layer model_dim {} != backbone model_dim {}",
            layer.config.model_dim, backbone.config.model_dim
        )));
    }
    Ok((backbone, layer))
}

fn print_suite(label: &str, output: &SuiteOutput, summary: &crate::report::ReportSummary) {
    println!("== {label}: {} chunks over {} sequences ==", summary.chunk_count, summary.sequence_count);
    for (name, p) in &summary.policies {
        let acc = p
            .decision_accuracy_vs_oracle
            .map_or(String::new(), |a| format!("  acc={a:.3}"));
        println!(
            "  {name:<8} ce={:.4}  ppl={:.3}  rate={:.3}  flops={:.2}x{acc}",
            p.mean_ce, p.perplexity, p.realized_update_rate, p.relative_flops
        );
    }
    if let Some(r) = summary.oracle_recovery {
        println!("  oracle recovery: {:.1}%", 100.0 * r);
    }
    if let Some(c) = &summary.correlations {
        println!(
            "  signal/advantage: pearson={:.3} spearman={:.3} top-{:.0}% overlap={:.3}",
            c.pearson_r,
            c.spearman_rho,
            100.0 * summary
                .config
                .get("rho")
                .and_then(|v| v.as_f64())
                .unwrap_or(0.5),
            c.topk_overlap
        );
    }
    if let Some(m) = &summary.mcnemar {
        match (m.statistic, m.p_value) {
            (Some(s), Some(p)) => println!(
                "  mcnemar {} vs {}: b={} c={} statistic={s:.4} p={p:.3e} (independence assumed; suggestive)",
                m.policy_a, m.policy_b, m.b_discordant, m.c_discordant
            ),
            _ => println!("  mcnemar: undefined (no discordant chunks)"),
        }
    }
    if let Some(rate) = output.realized_update_rate(Policy::Gate) {
        println!("  gate realized rate: {rate:.4}");
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let run = RunConfig::from_common("eval", &args.common)?;
    let harness = run.harness_config()?;
    let tokens = load_corpus(&run.corpus)?;
    let (backbone, layer) = load_components(&run)?;
    let output = run_policy_suite(&tokens, &backbone, &layer, &harness)?;
    let summary = build_summary(&output, &harness, serde_json::to_value(&run)?)?;
    let (report_path, csv_path) =
        emit_report(&summary, &output.records, &run.out_dir, "report", "records")?;
    print_suite("eval", &output, &summary);
    println!("wrote {} and {}", report_path.display(), csv_path.display());
    Ok(())
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<()> {
    let run = RunConfig::from_common("calibrate", &args.common)?;
    let harness = run.harness_config()?;
    let tokens = load_corpus(&run.corpus)?;
    let (backbone, layer) = load_components(&run)?;
    let (controller, buffer) = calibrate(&tokens, &backbone, &layer, &harness)?;
    println!("calibrated tau = {:.6e} from {} chunks", controller.tau, buffer.len());
    for q in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let v = nearest_rank_percentile(&buffer, q)?;
        println!("  buffer p{:>3}: {v:.6e}", (q * 100.0) as u32);
    }
    std::fs::create_dir_all(&run.out_dir)?;
    let path = run.out_dir.join("controller.json");
    std::fs::write(&path, controller.to_json()?)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let run = RunConfig::from_common("ablate", &args.common)?;
    let harness = run.harness_config()?;
    let tokens = load_corpus(&run.corpus)?;
    let (backbone, layer) = load_components(&run)?;
    match args.which {
        Ablation::Diagonal => {
            let pair = ablate_diagonal(&tokens, &backbone, &layer, &harness)?;
            let emit_pair = |suite: &SuiteOutput, k: i64, stem: &str, records: &str| -> Result<_> {
                let mut echo = serde_json::to_value(&run)?;
                echo["mask_k"] = serde_json::json!(k);
                let summary = build_summary(suite, &harness, echo)?;
                emit_report(&summary, &suite.records, &run.out_dir, stem, records)?;
                Ok(summary)
            };
            let s0 = emit_pair(&pair.baseline, 0, "report_k0", "records_k0")?;
            let s1 = emit_pair(&pair.variant, -1, "report_km1", "records_km1")?;
            print_suite("mask k=0", &pair.baseline, &s0);
            print_suite("mask k=-1", &pair.variant, &s1);
            for (name, p0) in &s0.policies {
                if let Some(p1) = s1.policies.get(name) {
                    println!(
                        "  delta ce[{name}]: {:+.6} nats (k=0 {:.4} vs k=-1 {:.4})",
                        p0.mean_ce - p1.mean_ce,
                        p0.mean_ce,
                        p1.mean_ce
                    );
                }
            }
        }
        Ablation::Shuffled => {
            let pair = sanity_shuffled(&tokens, &backbone, &layer, &harness)?;
            let normal = build_summary(&pair.baseline, &harness, serde_json::to_value(&run)?)?;
            let mut echo = serde_json::to_value(&run)?;
            echo["shuffled"] = serde_json::json!(true);
            let shuffled = build_summary(&pair.variant, &harness, echo)?;
            emit_report(&normal, &pair.baseline.records, &run.out_dir, "report_normal", "records_normal")?;
            emit_report(&shuffled, &pair.variant.records, &run.out_dir, "report_shuffled", "records_shuffled")?;
            print_suite("normal", &pair.baseline, &normal);
            print_suite("shuffled", &pair.variant, &shuffled);
            let imp_n = gate_improvement(&pair.baseline);
            let imp_s = gate_improvement(&pair.variant);
            if let (Some(n), Some(s)) = (imp_n, imp_s) {
                println!(
                    "  gate improvement over skip: normal {:.2}% vs shuffled {:.2}%",
                    100.0 * n,
                    100.0 * s
                );
            }
        }
        Ablation::Delta => {
            let mut harness = harness;
            harness.signal_mode = SignalMode::Delta;
            let mut echo = serde_json::to_value(&run)?;
            echo["signal"] = serde_json::json!("delta");
            let output = run_policy_suite(&tokens, &backbone, &layer, &harness)?;
            let summary = build_summary(&output, &harness, echo)?;
            emit_report(&summary, &output.records, &run.out_dir, "report_delta", "records_delta")?;
            print_suite("delta signal", &output, &summary);
            println!(
                "  signal overhead: {:.1} forward-equivalents per chunk (charged in ledger)",
                summary.signal_overhead_per_chunk
            );
        }
    }
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    if args.sequences == 0 {
        return Err(Error::Config("need at least one sequence".into()));
    }
    let pattern = CorpusPattern::from_str(&args.pattern)?;
    let tokens = generate_corpus(pattern, args.sequences, args.seq_len, args.seed);
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_corpus(&args.out, &tokens)?;
    println!(
        "wrote {} ({} tokens, {} sequences of seq_len {})",
        args.out.display(),
        tokens.len(),
        args.sequences,
        args.seq_len
    );
    Ok(())
}

impl Cli {
    pub fn run(&self) -> Result<()> {
        match &self.command {
            Command::Eval(args) => cmd_eval(args),
            Command::Calibrate(args) => cmd_calibrate(args),
            Command::Ablate(args) => cmd_ablate(args),
            Command::Synth(args) => cmd_synth(args),
        }
    }
}

/// Exit code mapping: 2 config, 3 numeric, 4 I/O.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Dim(_) | Error::Empty(_) => 2,
        Error::NonFinite(_) | Error::Undefined(_) => 3,
        Error::Io(_) | Error::Json(_) | Error::Format(_) => 4,
    }
}
