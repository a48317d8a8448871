//! Acceptance suite. Each test covers one numbered criterion and prints one
//! PASS/FAIL line; run with `cargo test --test acceptance -- --nocapture`
//! to see them.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};

use ttt_gate::backbone::{
    chunk_stream, generate_corpus, BackboneConfig, BackboneWeights, CorpusPattern,
};
use ttt_gate::gating::{budget, oracle_select, random_select_m, ThresholdController};
use ttt_gate::harness::{
    gate_improvement, mcnemar_statistic, oracle_recovery, relative_flops_gated,
    relative_flops_update_n, run_policy_suite, sanity_shuffled, HarnessConfig, Policy,
};
use ttt_gate::numerics::{
    dot, layer_norm_backward, layer_norm_forward, nearest_rank_percentile, pearson, spearman,
    Matrix,
};
use ttt_gate::rng::SeededRng;
use ttt_gate::ttt_layer::{random_orthogonal, ProjectionParams, TttConfig, TttLayer};

fn criterion(n: u32, desc: &str, f: impl FnOnce()) {
    let outcome = catch_unwind(AssertUnwindSafe(f));
    match outcome {
        Ok(()) => println!("ACCEPTANCE {n} PASS: {desc}"),
        Err(e) => {
            println!("ACCEPTANCE {n} FAIL: {desc}");
            std::panic::resume_unwind(e);
        }
    }
}

fn layer_with(n_heads: usize, head_dim: usize, t_len: usize, k: i64, seed: u64) -> TttLayer {
    let config = TttConfig {
        model_dim: n_heads * head_dim,
        n_heads,
        head_dim,
        conv_width: 3,
        base_inner_lr: 1.0,
        recon_weight_beta: 0.1,
        chunk_size: t_len,
        mask_diagonal: k,
        layer_norm_eps: 1e-6,
    };
    let params = ProjectionParams::deterministic_init(&config, seed).unwrap();
    TttLayer::new(config, params).unwrap()
}

fn random_views(layer: &TttLayer, t_len: usize, seed: u64) -> ttt_gate::ttt_layer::ChunkViews {
    let mut rng = SeededRng::new(seed);
    let mut hidden = Matrix::zeros(t_len, layer.config.model_dim);
    rng.fill_normal(hidden.data_mut(), 1.0);
    layer.project_views(&hidden).unwrap()
}

fn random_state(layer: &TttLayer, seed: u64) -> ttt_gate::ttt_layer::FastWeightState {
    let mut rng = SeededRng::new(seed);
    let hd = layer.config.head_dim;
    ttt_gate::ttt_layer::FastWeightState {
        w: (0..layer.config.n_heads)
            .map(|_| random_orthogonal(hd, &mut rng))
            .collect(),
        b: (0..layer.config.n_heads)
            .map(|_| {
                let mut b = vec![0.0; hd];
                rng.fill_normal(&mut b, 0.1);
                b
            })
            .collect(),
        chunks_seen: 0,
    }
}

fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-9))
        .fold(0.0, f64::max)
}

#[test]
fn criterion_01_dual_primal_equivalence() {
    criterion(
        1,
        "dual forward matches the sequential reference within 1e-8 over 200 instances",
        || {
            let start = std::time::Instant::now();
            let mut instances = 0;
            for &k in &[0i64, -1] {
                for &t_len in &[1usize, 2, 4, 8, 16] {
                    for &head_dim in &[1usize, 2, 4, 8] {
                        for seed in 0..5u64 {
                            let layer = layer_with(2, head_dim, t_len, k, 900 + seed);
                            let state = random_state(&layer, 7_000 + seed);
                            let views = random_views(&layer, t_len, 8_000 + instances as u64);
                            let (p, ps) = layer.primal_forward_update(&state, &views).unwrap();
                            let (d, ds) = layer.dual_forward(&state, &views).unwrap();
                            assert!(
                                max_rel_err(p.outputs.data(), d.outputs.data()) <= 1e-8,
                                "outputs k={k} T={t_len} hd={head_dim} seed={seed}"
                            );
                            assert!(
                                max_rel_err(&p.per_token_recon, &d.per_token_recon) <= 1e-8,
                                "losses k={k} T={t_len} hd={head_dim}"
                            );
                            for h in 0..2 {
                                assert!(max_rel_err(ps.w[h].data(), ds.w[h].data()) <= 1e-8);
                                assert!(max_rel_err(&ps.b[h], &ds.b[h]) <= 1e-8);
                            }
                            instances += 1;
                        }
                    }
                }
            }
            assert!(instances >= 200, "only {instances} instances");
            assert!(
                start.elapsed().as_secs() <= 10,
                "took {:?}",
                start.elapsed()
            );
        },
    );
}

#[test]
fn criterion_02_gradient_correctness() {
    criterion(
        2,
        "analytic inner gradient and LayerNorm backward match central finite differences",
        || {
            let start = std::time::Instant::now();
            let h = 1e-5;
            let mut instances = 0;

            // Fast-weight gradient of the mean chunk loss.
            for seed in 0..16u64 {
                let head_dim = [2usize, 3, 4, 6][(seed % 4) as usize];
                let layer = layer_with(1, head_dim, 4, 0, 100 + seed);
                let mut rng = SeededRng::new(200 + seed);
                let mut w = random_orthogonal(head_dim, &mut rng);
                for v in w.data_mut() {
                    *v *= 0.8;
                }
                let mut b = vec![0.0; head_dim];
                rng.fill_normal(&mut b, 0.2);
                let mut k_h = Matrix::zeros(4, head_dim);
                rng.fill_normal(k_h.data_mut(), 1.0);
                let mut v_h = Matrix::zeros(4, head_dim);
                rng.fill_normal(v_h.data_mut(), 1.0);
                let (dw, db) = layer.inner_gradient(&w, &b, &k_h, &v_h).unwrap();
                let loss_at = |w: &Matrix, b: &[f64]| layer.recon_loss(w, b, &k_h, &v_h).unwrap().1;
                for r in 0..head_dim {
                    for c in 0..head_dim {
                        let mut wp = w.clone();
                        wp.set(r, c, w.get(r, c) + h);
                        let mut wm = w.clone();
                        wm.set(r, c, w.get(r, c) - h);
                        let fd = (loss_at(&wp, &b) - loss_at(&wm, &b)) / (2.0 * h);
                        let scale = fd.abs().max(dw.get(r, c).abs()).max(1e-6);
                        assert!(
                            (fd - dw.get(r, c)).abs() / scale <= 1e-4,
                            "dW[{r}][{c}] seed {seed}"
                        );
                    }
                }
                for i in 0..head_dim {
                    let mut bp = b.clone();
                    bp[i] += h;
                    let mut bm = b.clone();
                    bm[i] -= h;
                    let fd = (loss_at(&w, &bp) - loss_at(&w, &bm)) / (2.0 * h);
                    let scale = fd.abs().max(db[i].abs()).max(1e-6);
                    assert!((fd - db[i]).abs() / scale <= 1e-4, "db[{i}] seed {seed}");
                }
                instances += 1;
            }

            // LayerNorm backward on vector dims 2..32.
            let mut rng = SeededRng::new(31);
            for case in 0..96u64 {
                let dim = [2usize, 3, 4, 8, 16, 32][(case % 6) as usize];
                let x: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
                let gamma: Vec<f64> = (0..dim).map(|_| 1.0 + 0.3 * rng.normal()).collect();
                let beta: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
                let grad_y: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
                let (_, cache) = layer_norm_forward(&x, &gamma, &beta, 1e-6).unwrap();
                let gx = layer_norm_backward(&grad_y, &cache).unwrap();
                for i in 0..dim {
                    let mut xp = x.clone();
                    xp[i] += h;
                    let (yp, _) = layer_norm_forward(&xp, &gamma, &beta, 1e-6).unwrap();
                    let mut xm = x.clone();
                    xm[i] -= h;
                    let (ym, _) = layer_norm_forward(&xm, &gamma, &beta, 1e-6).unwrap();
                    let fd = (dot(&grad_y, &yp) - dot(&grad_y, &ym)) / (2.0 * h);
                    let scale = fd.abs().max(gx[i].abs()).max(1e-6);
                    assert!((fd - gx[i]).abs() / scale <= 1e-4, "case {case} comp {i}");
                }
                instances += 1;
            }

            assert!(instances >= 100, "only {instances} instances");
            assert!(
                start.elapsed().as_secs() <= 10,
                "took {:?}",
                start.elapsed()
            );
        },
    );
}

fn small_pipeline(k: i64, seed: u64) -> (BackboneWeights, TttLayer) {
    let bcfg = BackboneConfig {
        n_blocks: 2,
        model_dim: 16,
        n_heads: 2,
        mlp_hidden: 32,
        vocab_size: 256,
        max_positions: 64,
        tied_head: true,
    };
    let backbone = BackboneWeights::deterministic_init(&bcfg, seed).unwrap();
    let tcfg = TttConfig {
        model_dim: 16,
        n_heads: 2,
        head_dim: 8,
        conv_width: 3,
        base_inner_lr: 1.0,
        recon_weight_beta: 0.1,
        chunk_size: 8,
        mask_diagonal: k,
        layer_norm_eps: 1e-6,
    };
    let params = ProjectionParams::deterministic_init(&tcfg, seed).unwrap();
    (backbone, TttLayer::new(tcfg, params).unwrap())
}

/// Per-position CE of one sequence through backbone + fast-weight layer,
/// chunk by chunk, carrying state.
fn pipeline_ce_per_position(
    backbone: &BackboneWeights,
    layer: &TttLayer,
    tokens: &[u8],
    seq_len: usize,
    chunk_size: usize,
) -> Vec<f64> {
    let sequences = chunk_stream(tokens, seq_len, chunk_size).unwrap();
    let chunks = &sequences[0];
    let seq_tokens: Vec<u8> = chunks.iter().flat_map(|c| c.tokens.clone()).collect();
    let hidden = backbone.forward(&seq_tokens).unwrap();
    let mut state = layer.init_state();
    let mut out = Vec::with_capacity(seq_len);
    for chunk in chunks {
        let lo = chunk.chunk_index * chunk_size;
        let h = hidden.row_block(lo, lo + chunk_size);
        let views = layer.project_views(&h).unwrap();
        let (fwd, next) = layer.dual_forward(&state, &views).unwrap();
        out.extend(
            backbone
                .ce_per_token(&h, &fwd.outputs, &chunk.labels)
                .unwrap(),
        );
        state = next;
    }
    out
}

#[test]
fn criterion_03_end_to_end_causality() {
    criterion(
        3,
        "perturbing a token changes nothing before it, end to end, both mask conventions",
        || {
            let seq_len = 32;
            let chunk_size = 8;
            let mut cases = 0;
            for &k in &[0i64, -1] {
                let (backbone, layer) = small_pipeline(k, 42);
                for seed in 0..26u64 {
                    let mut rng = SeededRng::new(5_000 + seed);
                    let tokens: Vec<u8> =
                        (0..seq_len + 1).map(|_| rng.below(256) as u8).collect();
                    let base =
                        pipeline_ce_per_position(&backbone, &layer, &tokens, seq_len, chunk_size);

                    // Keep the perturbed position inside the input range.
                    let p = 1 + rng.below(seq_len - 1);
                    let mut perturbed = tokens.clone();
                    perturbed[p] = perturbed[p].wrapping_add(1 + rng.below(255) as u8);
                    let changed = pipeline_ce_per_position(
                        &backbone, &layer, &perturbed, seq_len, chunk_size,
                    );
                    // CE at position t consumes the label at t+1, so strictly
                    // earlier positions are those before p - 1.
                    for t in 0..p.saturating_sub(1) {
                        assert_eq!(base[t], changed[t], "k={k} seed={seed} p={p} t={t}");
                    }
                    assert!(
                        base.iter()
                            .zip(changed.iter())
                            .any(|(a, b)| a != b),
                        "perturbation had no effect at all (k={k} seed={seed})"
                    );
                    cases += 1;
                }
            }
            assert!(cases >= 50, "only {cases} cases");
        },
    );
}

#[test]
fn criterion_04_controller_rate_control() {
    criterion(
        4,
        "trailing-500 realized update rate within 0.5 +/- 0.02 on i.i.d. streams",
        || {
            let draws: [fn(&mut SeededRng) -> f64; 3] = [
                |rng| 0.5 + rng.uniform(),
                |rng| -(1.0 - rng.uniform()).ln(),
                |rng| rng.normal().exp(),
            ];
            for (d, draw) in draws.iter().enumerate() {
                for seed in 0..5u64 {
                    let mut rng = SeededRng::new(10_000 + 97 * d as u64 + seed);
                    let mut controller = ThresholdController::new(0.5, 0.1, 16).unwrap();
                    let mut updates = 0;
                    for i in 0..2000 {
                        let decision = controller.observe_and_decide(draw(&mut rng)).unwrap();
                        if i >= 1500 && decision.decision.is_update() {
                            updates += 1;
                        }
                    }
                    let rate = updates as f64 / 500.0;
                    assert!(
                        (rate - 0.5).abs() <= 0.02,
                        "distribution {d} seed {seed}: trailing rate {rate}"
                    );
                }
            }
        },
    );
}

#[test]
fn criterion_05_recovery_arithmetic() {
    criterion(
        5,
        "oracle recovery reproduces the four reported rows within 0.1 percentage points",
        || {
            let rows = [
                (2.324, 1.977, 1.935, 89.2),
                (1.909, 1.697, 1.653, 82.8),
                (2.005, 1.656, 1.580, 82.1),
                (1.875, 1.576, 1.518, 83.8),
            ];
            for (skip, ours, oracle, want_pct) in rows {
                let got_pct = 100.0 * oracle_recovery(skip, ours, oracle).unwrap();
                assert!(
                    (got_pct - want_pct).abs() <= 0.1,
                    "({skip}, {ours}, {oracle}): {got_pct:.3}% vs {want_pct}%"
                );
            }
        },
    );
}

#[test]
fn criterion_06_cost_model() {
    criterion(
        6,
        "relative FLOPs are exactly 1.0 / 3.0 / 2.0 for skip / dense / gated-at-0.5, and 1 + 2N",
        || {
            assert_eq!(relative_flops_gated(0.0), 1.0);
            assert_eq!(relative_flops_update_n(1), 3.0);
            assert_eq!(relative_flops_gated(0.5), 2.0);
            for n in [0u32, 1, 2, 4] {
                assert_eq!(relative_flops_update_n(n), 1.0 + 2.0 * f64::from(n));
            }
        },
    );
}

#[test]
fn criterion_07_oracle_optimality() {
    criterion(
        7,
        "oracle selection attains the brute-force best equal-budget subset (K <= 12)",
        || {
            // Pure selection against exhaustive enumeration.
            let mut rng = SeededRng::new(777);
            for _ in 0..40 {
                let k = 4 + rng.below(9);
                let adv: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
                let rho = [0.25, 0.5, 0.75, 1.0][rng.below(4)];
                let sel = oracle_select(&adv, rho).unwrap();
                let m = sel.iter().filter(|s| **s).count();
                assert_eq!(m, budget(k, rho));
                let total: f64 = (0..k).filter(|i| sel[*i]).map(|i| adv[i]).sum();
                let mut best = if m == 0 { 0.0 } else { f64::NEG_INFINITY };
                for bits in 0u32..(1 << k) {
                    if bits.count_ones() as usize != m {
                        continue;
                    }
                    let sum: f64 = (0..k).filter(|i| bits >> i & 1 == 1).map(|i| adv[i]).sum();
                    best = best.max(sum);
                }
                assert!((total - best).abs() <= 1e-12, "greedy {total} vs best {best}");
            }

            // End to end: 12-chunk corpora, realized total CE vs enumeration.
            for seed in 0..3u64 {
                let (backbone, layer) = small_pipeline(0, 42 + seed);
                let tokens = generate_corpus(CorpusPattern::Patterned, 3, 32, 4_000 + seed);
                let mut config = HarnessConfig::desk_default();
                config.seq_len = 32;
                config.chunk_size = 8;
                config.n_cal = 4;
                config.seed = seed;
                let out = run_policy_suite(&tokens, &backbone, &layer, &config).unwrap();
                let k = out.records.len();
                assert_eq!(k, 12);
                let m = budget(k, config.target_rate);
                let oracle_total: f64 = out
                    .records
                    .iter()
                    .map(|r| r.ce_realized[Policy::Oracle.name()])
                    .sum();
                let mut best = f64::INFINITY;
                for bits in 0u32..(1 << k) {
                    if bits.count_ones() as usize != m {
                        continue;
                    }
                    let total: f64 = out
                        .records
                        .iter()
                        .enumerate()
                        .map(|(i, r)| if bits >> i & 1 == 1 { r.ce_update } else { r.ce_skip })
                        .sum();
                    best = best.min(total);
                }
                assert!(
                    (oracle_total - best).abs() <= 1e-12 * k as f64,
                    "seed {seed}: oracle {oracle_total} vs brute force {best}"
                );
            }
        },
    );
}

fn desk_suite(corpus_seed: u64, run_seed: u64) -> (ttt_gate::harness::SuiteOutput, HarnessConfig, Vec<u8>) {
    let tokens = generate_corpus(CorpusPattern::Patterned, 130, 256, corpus_seed);
    let mut bcfg = BackboneConfig::desk_default();
    bcfg.max_positions = 256;
    let backbone = BackboneWeights::deterministic_init(&bcfg, run_seed).unwrap();
    let tcfg = TttConfig::desk_default();
    let params = ProjectionParams::deterministic_init(&tcfg, run_seed).unwrap();
    let layer = TttLayer::new(tcfg, params).unwrap();
    let mut config = HarnessConfig::desk_default();
    config.seed = run_seed;
    let out = run_policy_suite(&tokens, &backbone, &layer, &config).unwrap();
    (out, config, tokens)
}

#[test]
fn criterion_08_gate_beats_random_at_matched_budget() {
    criterion(
        8,
        "reconstruction gating beats random selection at matched budget in >= 4 of 5 seeds",
        || {
            let mut wins = 0;
            for seed in 0..5u64 {
                let (out, _, _) = desk_suite(2_000 + seed, seed);
                let k = out.records.len();
                assert!(k >= 500, "need >= 500 chunks, got {k}");
                let gate_updates = out.ledger.update_count[Policy::Gate.name()];
                let gate_ce = out.mean_realized_ce(Policy::Gate).unwrap();

                // Random at the gate's realized budget, on the same records.
                let matched = random_select_m(k, gate_updates, seed);
                let random_ce: f64 = out
                    .records
                    .iter()
                    .zip(matched.iter())
                    .map(|(r, on)| if *on { r.ce_update } else { r.ce_skip })
                    .sum::<f64>()
                    / k as f64;
                println!(
                    "  seed {seed}: gate {gate_ce:.4} vs matched random {random_ce:.4} ({} updates)",
                    gate_updates
                );
                if gate_ce <= random_ce {
                    wins += 1;
                }
            }
            assert!(wins >= 4, "gate beat matched random in only {wins}/5 seeds");
        },
    );
}

#[test]
fn criterion_09_shuffled_input_sanity() {
    criterion(
        9,
        "gate-over-skip improvement on structured input exceeds shuffled input in >= 4 of 5 seeds",
        || {
            let mut wins = 0;
            for seed in 0..5u64 {
                let tokens = generate_corpus(CorpusPattern::Patterned, 130, 256, 2_000 + seed);
                let mut bcfg = BackboneConfig::desk_default();
                bcfg.max_positions = 256;
                let backbone = BackboneWeights::deterministic_init(&bcfg, seed).unwrap();
                let tcfg = TttConfig::desk_default();
                let params = ProjectionParams::deterministic_init(&tcfg, seed).unwrap();
                let layer = TttLayer::new(tcfg, params).unwrap();
                let mut config = HarnessConfig::desk_default();
                config.seed = seed;
                let pair = sanity_shuffled(&tokens, &backbone, &layer, &config).unwrap();
                let normal = gate_improvement(&pair.baseline).unwrap();
                let shuffled = gate_improvement(&pair.variant).unwrap();
                println!(
                    "  seed {seed}: improvement normal {:.3}% vs shuffled {:.3}%",
                    100.0 * normal,
                    100.0 * shuffled
                );
                if normal > shuffled {
                    wins += 1;
                }
            }
            assert!(wins >= 4, "structured beat shuffled in only {wins}/5 seeds");
        },
    );
}

#[test]
fn criterion_10_statistics_suite() {
    criterion(
        10,
        "correlation and McNemar statistics match definitional references",
        || {
            // Independent references, written in a different style.
            fn pearson_reference(x: &[f64], y: &[f64]) -> f64 {
                let n = x.len() as f64;
                let sx: f64 = x.iter().sum();
                let sy: f64 = y.iter().sum();
                let sxx: f64 = x.iter().map(|v| v * v).sum();
                let syy: f64 = y.iter().map(|v| v * v).sum();
                let sxy: f64 = x.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                (n * sxy - sx * sy)
                    / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
            }
            fn ranks_reference(x: &[f64]) -> Vec<f64> {
                x.iter()
                    .map(|xi| {
                        let less = x.iter().filter(|xj| *xj < xi).count() as f64;
                        let equal = x.iter().filter(|xj| *xj == xi).count() as f64;
                        less + (equal + 1.0) / 2.0
                    })
                    .collect()
            }

            let mut rng = SeededRng::new(99);
            for case in 0..20 {
                let n = 50;
                let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
                let y: Vec<f64> = x
                    .iter()
                    .map(|v| 0.6 * v + 0.8 * rng.normal())
                    .collect();
                let r = pearson(&x, &y).unwrap();
                assert!((r - pearson_reference(&x, &y)).abs() <= 1e-10, "case {case}");
                let rho = spearman(&x, &y).unwrap();
                let want = pearson_reference(&ranks_reference(&x), &ranks_reference(&y));
                assert!((rho - want).abs() <= 1e-10, "case {case}");

                // Top-half overlap against a sort-based reference.
                let m = n / 2;
                let top = |v: &[f64]| -> Vec<usize> {
                    let mut idx: Vec<usize> = (0..v.len()).collect();
                    idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap().then(a.cmp(&b)));
                    idx.truncate(m);
                    idx
                };
                let tx = top(&x);
                let ty = top(&y);
                let inter = tx.iter().filter(|i| ty.contains(i)).count();
                let want_overlap = inter as f64 / m as f64;
                let sel_x = ttt_gate::gating::select_top_m(&x, m);
                let sel_y = ttt_gate::gating::select_top_m(&y, m);
                let got_overlap = sel_x
                    .iter()
                    .zip(sel_y.iter())
                    .filter(|(a, b)| **a && **b)
                    .count() as f64
                    / m as f64;
                assert!((got_overlap - want_overlap).abs() <= 1e-10);
            }

            assert_eq!(mcnemar_statistic(10, 0).unwrap(), 8.1);
            assert_eq!(mcnemar_statistic(10, 10).unwrap(), 0.05);
        },
    );
}

#[test]
fn criterion_11_cli_determinism() {
    criterion(
        11,
        "two identical eval runs produce byte-identical report.json and records.csv",
        || {
            let bin = env!("CARGO_BIN_EXE_ttt-gate");
            let dir = tempfile::tempdir().unwrap();
            let corpus = dir.path().join("corpus.bin");
            let synth = std::process::Command::new(bin)
                .args([
                    "synth",
                    "--seed",
                    "9",
                    "--sequences",
                    "24",
                    "--seq-len",
                    "64",
                    "--out",
                ])
                .arg(&corpus)
                .output()
                .unwrap();
            assert!(synth.status.success());

            // Identical flags both times, including the output directory;
            // the files are snapshotted between runs.
            let out_dir = dir.path().join("run");
            let run = || {
                let status = std::process::Command::new(bin)
                    .args(["eval", "--seed", "3", "--seq-len", "64", "--chunk-size", "16"])
                    .arg("--corpus")
                    .arg(&corpus)
                    .arg("--out")
                    .arg(&out_dir)
                    .output()
                    .unwrap();
                assert!(status.status.success(), "{:?}", String::from_utf8_lossy(&status.stderr));
            };
            run();
            let first: Vec<Vec<u8>> = ["report.json", "records.csv"]
                .iter()
                .map(|name| std::fs::read(out_dir.join(name)).unwrap())
                .collect();
            run();
            for (name, a) in ["report.json", "records.csv"].iter().zip(&first) {
                let b = std::fs::read(out_dir.join(name)).unwrap();
                assert_eq!(a, &b, "{name} differs between identical runs");
                assert!(!a.is_empty());
            }
        },
    );
}

// Cross-cutting invariants exercised at the suite level rather than per
// criterion: budget exactness and calibration rank counts.

#[test]
fn suite_budgets_and_calibration_are_exact() {
    let (out, config, _) = desk_suite(2_100, 11);
    let k = out.records.len();
    let m = budget(k, config.target_rate);
    assert_eq!(out.ledger.update_count[Policy::Oracle.name()], m);
    assert_eq!(out.ledger.update_count[Policy::Random.name()], m);

    // Gate trailing rate after warmup stays near the target.
    let trailing = 250;
    let updates = out
        .records
        .iter()
        .rev()
        .take(trailing)
        .filter(|r| r.decisions[Policy::Gate.name()])
        .count();
    let rate = updates as f64 / trailing as f64;
    assert!(
        (rate - config.target_rate).abs() <= 0.05,
        "trailing gate rate {rate}"
    );

    // Calibration exactness on distinct signals.
    let mut controller = ThresholdController::new(0.5, 0.1, 16).unwrap();
    let mut rng = SeededRng::new(5);
    let signals: Vec<f64> = (0..16).map(|_| rng.uniform()).collect();
    for s in &signals {
        controller.observe_and_decide(*s).unwrap();
    }
    let above = signals.iter().filter(|s| **s > controller.tau).count();
    assert_eq!(above, 8);
    assert_eq!(
        controller.tau,
        nearest_rank_percentile(&signals, 0.5).unwrap()
    );
}

#[test]
fn suite_report_fields_are_reproducible() {
    let (out, config, _) = desk_suite(2_200, 13);
    let summary = ttt_gate::report::build_summary(
        &out,
        &config,
        serde_json::json!({"rho": config.target_rate}),
    )
    .unwrap();
    let policies: Vec<&String> = summary.policies.keys().collect();
    assert_eq!(policies, ["gate", "oracle", "random", "skip", "update1"]);
    let recovery = summary.oracle_recovery.unwrap();
    assert!(recovery > 0.0 && recovery <= 1.5, "recovery {recovery}");
    let corr = summary.correlations.unwrap();
    assert!(corr.pearson_r > 0.0, "pearson {}", corr.pearson_r);

    let mut per_policy: BTreeMap<&str, f64> = BTreeMap::new();
    for (name, p) in &summary.policies {
        per_policy.insert(name, p.mean_ce);
    }
    // Ordering expected of a working gate: dense <= oracle-ish <= gate <=
    // random <= skip, up to the oracle being budget-limited.
    assert!(per_policy["gate"] <= per_policy["random"]);
    assert!(per_policy["random"] <= per_policy["skip"]);
    assert!(per_policy["oracle"] <= per_policy["gate"]);
}
