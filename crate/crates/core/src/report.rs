//! Report assembly and emission: `report.json` (versioned summary + config
//! echo) and `records.csv` (one row per chunk), both with deterministic field
//! ordering so identical runs produce byte-identical files. A structural
//! validator for the report schema is bundled for round-trip checks.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::harness::{
    correlation_suite, decision_metrics, oracle_recovery, CorrelationStats, EvalRecord,
    HarnessConfig, McnemarResult, Policy, SuiteOutput,
};
use crate::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyReport {
    pub mean_ce: f64,
    /// exp(mean CE).
    pub perplexity: f64,
    pub update_count: usize,
    pub realized_update_rate: f64,
    pub relative_flops: f64,
    pub decision_accuracy_vs_oracle: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportSummary {
    pub report_version: u32,
    pub crate_version: String,
    pub chunk_count: usize,
    pub sequence_count: usize,
    pub policies: BTreeMap<String, PolicyReport>,
    /// (skip - gate) / (skip - oracle); None when undefined or policies absent.
    pub oracle_recovery: Option<f64>,
    /// Signal/advantage correlations; None on degenerate inputs.
    pub correlations: Option<CorrelationStats>,
    /// Gate-vs-random agreement with the oracle. The independence assumption
    /// is only approximate for chunks of one stream; suggestive, not asserted.
    pub mcnemar: Option<McnemarResult>,
    /// Harness instrumentation cost (update branch measured on every chunk),
    /// in forward-pass units per chunk; not charged to any policy.
    pub measurement_overhead_per_chunk: f64,
    /// Cost of producing the gating signal itself (delta mode pays 2x).
    pub signal_overhead_per_chunk: f64,
    /// Verbatim run configuration.
    pub config: Value,
}

/// Assemble the summary from a finished suite run.
pub fn build_summary(
    output: &SuiteOutput,
    config: &HarnessConfig,
    config_echo: Value,
) -> Result<ReportSummary> {
    if output.records.is_empty() {
        return Err(Error::Empty("summary of an empty run".into()));
    }
    let has_oracle = output.records[0].decisions.contains_key(Policy::Oracle.name());
    let accuracy = if has_oracle {
        decision_metrics(&output.records)?.accuracy
    } else {
        BTreeMap::new()
    };
    let mcnemar = if has_oracle {
        decision_metrics(&output.records)?.mcnemar
    } else {
        None
    };

    let mut policies = BTreeMap::new();
    for name in output.records[0].decisions.keys() {
        let mean_ce = output
            .records
            .iter()
            .map(|r| r.ce_realized[name])
            .sum::<f64>()
            / output.records.len() as f64;
        let update_count = output.ledger.update_count[name];
        policies.insert(
            name.clone(),
            PolicyReport {
                mean_ce,
                perplexity: mean_ce.exp(),
                update_count,
                realized_update_rate: update_count as f64 / output.ledger.chunk_count as f64,
                relative_flops: output.ledger.relative_flops[name],
                decision_accuracy_vs_oracle: accuracy.get(name).copied(),
            },
        );
    }

    let recovery = match (
        policies.get(Policy::Skip.name()),
        policies.get(Policy::Gate.name()),
        policies.get(Policy::Oracle.name()),
    ) {
        (Some(skip), Some(gate), Some(oracle)) => {
            oracle_recovery(skip.mean_ce, gate.mean_ce, oracle.mean_ce).ok()
        }
        _ => None,
    };
    let correlations =
        correlation_suite(&output.records, config.signal_mode, config.target_rate).ok();
    let sequence_count = output
        .records
        .iter()
        .map(|r| r.sequence_id)
        .max()
        .map_or(0, |m| m + 1);

    Ok(ReportSummary {
        report_version: REPORT_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        chunk_count: output.ledger.chunk_count,
        sequence_count,
        policies,
        oracle_recovery: recovery,
        correlations,
        mcnemar,
        measurement_overhead_per_chunk: output.ledger.measurement_overhead_per_chunk,
        signal_overhead_per_chunk: output.ledger.signal_overhead_per_chunk,
        config: config_echo,
    })
}

/// Format a float with 17 significant digits.
fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write `<stem>.json` and `<records_stem>.csv` under `dir`. Returns the two
/// paths. File contents are deterministic functions of the inputs.
pub fn emit_report(
    summary: &ReportSummary,
    records: &[EvalRecord],
    dir: &Path,
    stem: &str,
    records_stem: &str,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let report_path = dir.join(format!("{stem}.json"));
    let mut json = serde_json::to_string_pretty(summary)?;
    json.push('\n');
    std::fs::write(&report_path, json)?;

    let csv_path = dir.join(format!("{records_stem}.csv"));
    let file = std::fs::File::create(&csv_path)?;
    let mut w = std::io::BufWriter::new(file);
    let policy_names: Vec<String> = records
        .first()
        .map(|r| r.decisions.keys().cloned().collect())
        .unwrap_or_default();
    let mut header = vec![
        "sequence_id".to_string(),
        "chunk_index".to_string(),
        "recon_loss".to_string(),
        "ttt_delta".to_string(),
        "ce_skip".to_string(),
        "ce_update".to_string(),
    ];
    for p in &policy_names {
        header.push(format!("{p}_decision"));
        header.push(format!("{p}_ce"));
    }
    writeln!(w, "{}", header.join(","))?;
    for r in records {
        let mut row = vec![
            r.sequence_id.to_string(),
            r.chunk_index.to_string(),
            fmt17(r.recon_loss),
            fmt17(r.ttt_delta),
            fmt17(r.ce_skip),
            fmt17(r.ce_update),
        ];
        for p in &policy_names {
            row.push(if r.decisions[p] { "1" } else { "0" }.to_string());
            row.push(fmt17(r.ce_realized[p]));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok((report_path, csv_path))
}

fn expect_field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::Format(format!("report missing field '{key}'")))
}

fn expect_number(v: &Value, key: &str) -> Result<()> {
    if v.is_number() {
        Ok(())
    } else {
        Err(Error::Format(format!("report field '{key}' must be a number")))
    }
}

/// Structural validation of a report.json document.
pub fn validate_report(value: &Value) -> Result<()> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Format("report must be a JSON object".into()))?;
    for key in ["report_version", "chunk_count", "sequence_count"] {
        expect_number(expect_field(obj, key)?, key)?;
    }
    if !expect_field(obj, "crate_version")?.is_string() {
        return Err(Error::Format("crate_version must be a string".into()));
    }
    let policies = expect_field(obj, "policies")?
        .as_object()
        .ok_or_else(|| Error::Format("policies must be an object".into()))?;
    if policies.is_empty() {
        return Err(Error::Format("policies must be non-empty".into()));
    }
    for (name, p) in policies {
        let p = p
            .as_object()
            .ok_or_else(|| Error::Format(format!("policy '{name}' must be an object")))?;
        for key in [
            "mean_ce",
            "perplexity",
            "update_count",
            "realized_update_rate",
            "relative_flops",
        ] {
            expect_number(expect_field(p, key)?, key)?;
        }
    }
    for key in [
        "oracle_recovery",
        "correlations",
        "mcnemar",
        "measurement_overhead_per_chunk",
        "signal_overhead_per_chunk",
        "config",
    ] {
        expect_field(obj, key)?;
    }
    Ok(())
}
