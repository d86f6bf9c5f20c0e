//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamdec_core::metrics::{
    speedup, summarize_attention, summarize_confidence, throughput_proxy,
};
use streamdec_core::scheduler::{adaptive_threshold, decode};
use streamdec_core::{
    DecodeConfig, LocalMarkovOracle, OracleScript, SchedulerKind, ScriptedOracle, StepRecord,
    TokenId, ToyTransformer,
};

use common::{
    prompt, reference_decode, streaming_call_counts, vanilla_call_counts, RefParams, RefView,
};

// Pinned tolerances.
const THRESHOLD_TOL: f64 = 1e-12;
const PERCENTILE_TOL: f64 = 1e-12;
const ATTENTION_SUM_TOL: f64 = 1e-6;
const MIN_QUERY_SPEEDUP: f64 = 3.0;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn cfg(gen_len: usize, block_size: usize, window: usize) -> DecodeConfig {
    DecodeConfig {
        gen_len,
        block_size,
        window,
        ..DecodeConfig::default()
    }
}

fn threshold_suite() -> Outcome {
    let worked = [
        ((0.9, 0.3, 1.0), 0.9),
        ((0.9, 0.4, 0.0), 0.54),
        ((0.9, 0.5, 0.5), 0.675),
    ];
    for ((t, a, r), want) in worked {
        let got = adaptive_threshold(t, a, r).map_err(|e| e.to_string())?;
        ensure!(got == want, "({t}, {a}, {r}) gave {got}, want {want}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let tau0 = rng.random_range(1e-9..=1.0);
        let alpha = rng.random_range(0.0..=1.0);
        let r = rng.random_range(0.0..=1.0);
        let tau = adaptive_threshold(tau0, alpha, r).map_err(|e| e.to_string())?;
        // expanded form, evaluated independently
        let expected = tau0 - tau0 * alpha + tau0 * alpha * r;
        worst = worst.max((tau - expected).abs());
        ensure!(
            tau >= tau0 * (1.0 - alpha) - THRESHOLD_TOL && tau <= tau0 + THRESHOLD_TOL,
            "tau {tau} outside band for ({tau0}, {alpha}, {r})"
        );
    }
    ensure!(worst <= THRESHOLD_TOL, "max arithmetic error {worst:e}");
    Ok(format!(
        "10000 triples, max error {worst:.1e}; worked values exact"
    ))
}

fn random_confidence_script(n: usize, k: usize, rng: &mut ChaCha8Rng) -> OracleScript {
    OracleScript::uniform(n, k, |_, _, _| {
        let tok = if rng.random_bool(0.05) {
            TokenId::EOS.0
        } else {
            rng.random_range(3..40)
        };
        (tok, rng.random_range(0.0..1.0))
    })
}

fn reduces_to_fixed_threshold() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for case in 0..100 {
        let k = rng.random_range(1..=16usize);
        let n = rng.random_range(1..=128 / k);
        let script = random_confidence_script(n, k, &mut rng);
        let oracle = ScriptedOracle::with_vocab(&script, 40).map_err(|e| e.to_string())?;
        let tau0 = rng.random_range(0.05..=1.0);
        let p = prompt(rng.random_range(1..20), 40, case);
        let streaming = DecodeConfig {
            tau0,
            alpha: 0.0,
            early_exit: false,
            ..cfg(n * k, k, n)
        };
        let fixed = DecodeConfig {
            scheduler: SchedulerKind::FixedThreshold,
            alpha: 0.0,
            ..streaming.clone()
        };
        let a = decode(&p, &oracle, &streaming).map_err(|e| e.to_string())?;
        let b = decode(&p, &oracle, &fixed).map_err(|e| e.to_string())?;
        ensure!(
            a.tokens == b.tokens,
            "case {case} (L={}, K={k}) diverged",
            n * k
        );
    }
    Ok("100 scripted oracles, L <= 128, K <= 16, outputs identical".into())
}

fn accepted_sets(trace: &[StepRecord]) -> Vec<Vec<usize>> {
    trace
        .iter()
        .map(|r| {
            let mut v: Vec<usize> = r.accepted.iter().map(|a| a.pos).collect();
            v.sort();
            v
        })
        .collect()
}

fn full_window_equivalence() -> Outcome {
    let (l, k) = (128, 16);
    let n = l / k;
    let mut total_steps = 0;
    for seed in 0..50u64 {
        let m = ToyTransformer::new(32, 64, seed).map_err(|e| e.to_string())?;
        let p = prompt(24, 64, seed);
        let c = DecodeConfig {
            seed,
            ..cfg(l, k, n - 1)
        };
        let ours = decode(&p, &m, &c).map_err(|e| e.to_string())?;
        let reference = reference_decode(
            &p,
            &m,
            RefParams {
                gen_len: l,
                block_size: k,
                tau0: c.tau0,
                alpha: c.alpha,
                early_exit: c.early_exit,
            },
            RefView::Full,
        );
        ensure!(
            ours.tokens == reference.tokens,
            "seed {seed}: tokens differ"
        );
        ensure!(
            accepted_sets(&ours.trace) == reference.steps,
            "seed {seed}: per-step acceptance differs"
        );
        ensure!(
            ours.exited_early_at == reference.exited_early_at,
            "seed {seed}: early exit differs"
        );
        total_steps += ours.trace.len();
    }
    Ok(format!(
        "50 seeds, L=128, K=16, {total_steps} steps bit-identical to the unpruned reference"
    ))
}

fn locality_equivalence() -> Outcome {
    let radius = 64;
    let l = 256;
    let mut checked = 0;
    for (k, w) in [(16, 4), (32, 2), (8, 8)] {
        for seed in 0..100u64 {
            let d = LocalMarkovOracle::new(radius, 64, seed).map_err(|e| e.to_string())?;
            let p = prompt(16 + (seed % 32) as usize, 64, seed);
            let pruned = decode(&p, &d, &cfg(l, k, w)).map_err(|e| e.to_string())?;
            let full = decode(&p, &d, &cfg(l, k, l / k)).map_err(|e| e.to_string())?;
            ensure!(
                pruned.tokens == full.tokens,
                "K={k} w={w} seed {seed}: pruned output differs"
            );
            checked += 1;
        }
    }
    let (k, w) = (16, 2);
    let mut diverged = 0;
    for seed in 0..100u64 {
        let d = LocalMarkovOracle::new(radius, 64, seed).map_err(|e| e.to_string())?;
        let p = prompt(16 + (seed % 32) as usize, 64, seed);
        let pruned = decode(&p, &d, &cfg(l, k, w)).map_err(|e| e.to_string())?;
        let full = decode(&p, &d, &cfg(l, k, l / k)).map_err(|e| e.to_string())?;
        diverged += usize::from(pruned.tokens != full.tokens);
    }
    Ok(format!(
        "D=64: {checked} runs with w*K >= 64 identical; w*K = 32 divergence rate {:.2}",
        diverged as f64 / 100.0
    ))
}

fn termination() -> Outcome {
    for (k, n) in [(1, 8), (4, 4), (16, 8), (32, 4)] {
        let script = OracleScript::uniform(n, k, |b, s, i| (3 + ((b + s + i) % 20) as u32, 0.0));
        let oracle = ScriptedOracle::with_vocab(&script, 32).map_err(|e| e.to_string())?;
        for kind in [SchedulerKind::Streaming, SchedulerKind::FixedThreshold] {
            let c = DecodeConfig {
                scheduler: kind,
                alpha: if kind == SchedulerKind::Streaming {
                    0.3
                } else {
                    0.0
                },
                ..cfg(n * k, k, 2)
            };
            let res = decode(&prompt(8, 32, 0), &oracle, &c).map_err(|e| e.to_string())?;
            ensure!(
                res.trace.len() == n * k,
                "{kind:?} K={k}: {} steps",
                res.trace.len()
            );
            for b in 0..n {
                let steps = res.trace.iter().filter(|r| r.block == b).count();
                ensure!(steps == k, "{kind:?} block {b}: {steps} steps, want {k}");
            }
            ensure!(
                res.trace
                    .iter()
                    .all(|r| r.accepted.len() == 1 && r.fallback),
                "{kind:?}: a step did not commit exactly one fallback token"
            );
            ensure!(
                res.tokens.iter().all(|&t| t != TokenId::MASK),
                "{kind:?}: masked slot left"
            );
        }
    }
    Ok("zero-confidence oracle: K steps per block, L steps total, 1 commit per step".into())
}

fn early_exit_zero_cost() -> Outcome {
    let (k, n) = (8, 16);
    for b in 0..n {
        let script = OracleScript::uniform(n, k, |blk, _, i| {
            if blk == b && i == 3 {
                (TokenId::EOS.0, 0.97)
            } else {
                (3 + i as u32, 0.95)
            }
        });
        let oracle = ScriptedOracle::with_vocab(&script, 32).map_err(|e| e.to_string())?;
        let res =
            decode(&prompt(10, 32, 1), &oracle, &cfg(n * k, k, 2)).map_err(|e| e.to_string())?;
        ensure!(
            res.exited_early_at == Some(b),
            "EOS in block {b}: exit {:?}",
            res.exited_early_at
        );
        ensure!(
            res.ledger.per_block[b + 1..].iter().all(|c| c.is_zero()),
            "EOS in block {b}: later blocks charged"
        );
        ensure!(
            res.tokens[(b + 1) * k..].iter().all(|&t| t == TokenId::EOS),
            "EOS in block {b}: tail not EOS"
        );
        let off = DecodeConfig {
            early_exit: false,
            ..cfg(n * k, k, 2)
        };
        let res = decode(&prompt(10, 32, 1), &oracle, &off).map_err(|e| e.to_string())?;
        ensure!(
            res.exited_early_at.is_none(),
            "early exit fired while disabled"
        );
        ensure!(
            res.ledger.per_block.iter().all(|c| c.forward_calls > 0),
            "disabled early exit skipped a block"
        );
    }
    Ok("N=16, EOS in every block b: blocks after b cost exactly zero".into())
}

fn cost_closed_form() -> Outcome {
    let (pl, l, k, w) = (300, 512, 32, 4);
    let n = l / k;
    let steps = 4;
    // four steps per block: eight confident positions per step
    let script = OracleScript::uniform(n, k, |_, s, i| {
        (3 + (i % 30) as u32, if i / 8 == s { 0.95 } else { 0.1 })
    });
    let oracle = ScriptedOracle::with_vocab(&script, 40).map_err(|e| e.to_string())?;
    let p = prompt(pl, 40, 7);
    let sc = DecodeConfig {
        early_exit: false,
        ..cfg(l, k, w)
    };
    let ours = decode(&p, &oracle, &sc).map_err(|e| e.to_string())?;
    let vc = DecodeConfig {
        scheduler: SchedulerKind::Vanilla,
        steps_per_block: steps,
        ..sc.clone()
    };
    let vanilla = decode(&p, &oracle, &vc).map_err(|e| e.to_string())?;

    // counting oracle for a mid-sequence step: current block, four window
    // blocks and the final slot
    let mid = (k + w * k + 1) as u64;
    let full = (pl + l) as u64;
    let mid_calls: Vec<_> = ours
        .ledger
        .calls
        .iter()
        .filter(|c| c.cache_hit && c.block + w < n - 1)
        .collect();
    ensure!(!mid_calls.is_empty(), "no mid-sequence cached steps");
    ensure!(
        mid_calls
            .iter()
            .all(|c| c.queries as u64 == mid && mid == 161),
        "mid-block query count is not 161"
    );
    ensure!(
        vanilla
            .ledger
            .calls
            .iter()
            .all(|c| c.queries as u64 == full && full == 812),
        "vanilla per-step query count is not 812"
    );
    let reduction = full as f64 / mid as f64;
    ensure!(
        (reduction - 812.0 / 161.0).abs() < 1e-12,
        "reduction {reduction}"
    );

    let per_block = vec![steps; n];
    let expected = streaming_call_counts(pl, l, k, w, true, &per_block);
    let got: Vec<(u64, u64)> = ours
        .ledger
        .calls
        .iter()
        .map(|c| (c.queries as u64, c.keys as u64))
        .collect();
    ensure!(
        got == expected,
        "streaming per-call counts differ from closed form"
    );
    let t = &ours.ledger.totals;
    ensure!(
        t.query_tokens == expected.iter().map(|c| c.0).sum::<u64>()
            && t.key_tokens == expected.iter().map(|c| c.1).sum::<u64>()
            && t.attention_pairs == expected.iter().map(|c| c.0 * c.1).sum::<u64>()
            && t.forward_calls == (n * steps) as u64,
        "streaming totals differ from closed form"
    );
    let vexp = vanilla_call_counts(pl, l, n * steps);
    let vt = &vanilla.ledger.totals;
    ensure!(
        vt.query_tokens == vexp.iter().map(|c| c.0).sum::<u64>()
            && vt.attention_pairs == vexp.iter().map(|c| c.0 * c.1).sum::<u64>(),
        "vanilla totals differ from closed form"
    );
    Ok(format!(
        "mid-block {mid} vs vanilla {full} queries per step ({reduction:.2}x); totals q={} pairs={}",
        t.query_tokens, t.attention_pairs
    ))
}

fn desk_speedup() -> Outcome {
    let (pl, l, k, w) = (64, 256, 32, 2);
    let mut worst = f64::INFINITY;
    let mut walls = Vec::new();
    for seed in 0..8u64 {
        let m = ToyTransformer::new(32, 64, seed).map_err(|e| e.to_string())?;
        let p = prompt(pl, 64, seed);
        let sc = DecodeConfig {
            tau0: 0.9,
            alpha: 0.3,
            seed,
            ..cfg(l, k, w)
        };
        let vc = DecodeConfig {
            scheduler: SchedulerKind::Vanilla,
            steps_per_block: 8,
            ..sc.clone()
        };
        let ours = throughput_proxy(&decode(&p, &m, &sc).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let base = throughput_proxy(&decode(&p, &m, &vc).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let s = speedup(&ours, &base).map_err(|e| e.to_string())?;
        worst = worst.min(s.query);
        walls.extend(s.wall_clock);
        ensure!(
            s.query >= MIN_QUERY_SPEEDUP,
            "seed {seed}: query-proxy speedup {:.3} < {MIN_QUERY_SPEEDUP}",
            s.query
        );
    }
    walls.sort_by(f64::total_cmp);
    let wall = walls.get(walls.len() / 2).copied().unwrap_or(f64::NAN);
    Ok(format!(
        "8 seeds, min query-proxy speedup {worst:.2}x (>= {MIN_QUERY_SPEEDUP}); median wall-clock {wall:.2}x (not asserted)"
    ))
}

fn brute_percentile(mut v: Vec<f64>, p: f64) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

fn confidence_dynamics() -> Outcome {
    let (l, k) = (256, 32);
    let mut traces = Vec::new();
    for seed in 0..100u64 {
        let d = LocalMarkovOracle::new(8, 64, seed).map_err(|e| e.to_string())?;
        let p = prompt(16 + (seed % 24) as usize, 64, seed);
        let c = DecodeConfig {
            early_exit: false,
            seed,
            ..cfg(l, k, 2)
        };
        traces.extend(decode(&p, &d, &c).map_err(|e| e.to_string())?.trace);
    }
    let summary = summarize_confidence(&traces).map_err(|e| e.to_string())?;
    let mut pooled: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for r in &traces {
        pooled
            .entry((r.block, r.step))
            .or_default()
            .extend(&r.confs);
    }
    for row in &summary.rows {
        ensure!(
            row.q25 <= row.q75,
            "block {} step {}: q25 > q75",
            row.block,
            row.step
        );
        let v = pooled[&(row.block, row.step)].clone();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        ensure!(
            (row.mean - mean).abs() <= PERCENTILE_TOL
                && (row.q25 - brute_percentile(v.clone(), 0.25)).abs() <= PERCENTILE_TOL
                && (row.q75 - brute_percentile(v, 0.75)).abs() <= PERCENTILE_TOL,
            "block {} step {}: summary differs from brute force",
            row.block,
            row.step
        );
    }
    let monotone = summary.monotone_blocks();
    ensure!(
        monotone.values().all(|&m| m),
        "mean confidence decreased in blocks {:?}",
        monotone
            .iter()
            .filter(|(_, &m)| !m)
            .map(|(b, _)| b)
            .collect::<Vec<_>>()
    );
    Ok(format!(
        "100 runs, {} rows, mean confidence non-decreasing in all {} blocks",
        summary.rows.len(),
        monotone.len()
    ))
}

fn attention_mass() -> Outcome {
    let m = ToyTransformer::new(32, 64, 3).map_err(|e| e.to_string())?;
    let res = decode(&prompt(48, 64, 3), &m, &cfg(128, 16, 2)).map_err(|e| e.to_string())?;
    let summary = summarize_attention(&res.trace).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for r in &summary.rows {
        worst = worst.max((r.prefix + r.current + r.suffix - 1.0).abs());
    }
    ensure!(worst <= ATTENTION_SUM_TOL, "row sum off by {worst:e}");
    let single = decode(&prompt(48, 64, 3), &m, &cfg(64, 64, 2)).map_err(|e| e.to_string())?;
    let s = summarize_attention(&single.trace).map_err(|e| e.to_string())?;
    ensure!(
        s.rows.iter().all(|r| r.suffix == 0.0),
        "single-block run has suffix mass"
    );
    Ok(format!(
        "{} rows, max |sum - 1| = {worst:.1e}; single-block suffix mass exactly 0",
        summary.rows.len()
    ))
}

fn cli_reproducibility() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_streamdec");
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/default.json");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let st = Command::new(bin)
            .arg("run")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(out)
            .env_remove("STREAMDEC_OUT")
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(
            st.status.success(),
            "run failed: {}",
            String::from_utf8_lossy(&st.stderr)
        );
    }
    let mut traces = 0;
    for entry in std::fs::read_dir(&a).map_err(|e| e.to_string())? {
        let name = entry.map_err(|e| e.to_string())?.file_name();
        if name.to_string_lossy().starts_with("trace_") {
            let x = std::fs::read(a.join(&name)).map_err(|e| e.to_string())?;
            let y = std::fs::read(b.join(&name)).map_err(|e| e.to_string())?;
            ensure!(x == y, "{} differs between runs", name.to_string_lossy());
            traces += 1;
        }
    }
    ensure!(traces > 0, "no trace files written");
    let out = Command::new(bin)
        .arg("compare")
        .arg(&a)
        .arg("--baseline")
        .arg(&a)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "compare failed");
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines().skip_while(|l| !l.starts_with("bundle"));
    let header: Vec<&str> = lines.next().ok_or("no table")?.split_whitespace().collect();
    let row: Vec<&str> = lines.next().ok_or("no row")?.split_whitespace().collect();
    for (h, v) in header.iter().zip(&row) {
        if h.starts_with("speedup") || *h == "step_q_red" || *h == "wall_clock" {
            let x: f64 = v.parse().map_err(|_| format!("{h} = {v}"))?;
            ensure!(x == 1.0, "{h} = {v}");
        }
    }
    Ok(format!(
        "{traces} trace file(s) byte-identical; self-compare prints 1.0 for every proxy"
    ))
}

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "adaptive threshold suite",
            budget: Duration::from_secs(1),
            run: threshold_suite,
        },
        Criterion {
            id: 2,
            name: "reduction to fixed threshold",
            budget: Duration::from_secs(10),
            run: reduces_to_fixed_threshold,
        },
        Criterion {
            id: 3,
            name: "full-window equivalence",
            budget: Duration::from_secs(30),
            run: full_window_equivalence,
        },
        Criterion {
            id: 4,
            name: "locality equivalence",
            budget: Duration::from_secs(30),
            run: locality_equivalence,
        },
        Criterion {
            id: 5,
            name: "termination",
            budget: Duration::from_secs(5),
            run: termination,
        },
        Criterion {
            id: 6,
            name: "early-exit zero cost",
            budget: Duration::from_secs(5),
            run: early_exit_zero_cost,
        },
        Criterion {
            id: 7,
            name: "cost-model closed form",
            budget: Duration::from_secs(5),
            run: cost_closed_form,
        },
        Criterion {
            id: 8,
            name: "desk-scale speedup",
            budget: Duration::from_secs(60),
            run: desk_speedup,
        },
        Criterion {
            id: 9,
            name: "confidence dynamics",
            budget: Duration::from_secs(30),
            run: confidence_dynamics,
        },
        Criterion {
            id: 10,
            name: "attention region mass",
            budget: Duration::from_secs(10),
            run: attention_mass,
        },
        Criterion {
            id: 11,
            name: "CLI reproducibility",
            budget: Duration::from_secs(30),
            run: cli_reproducibility,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome =
            catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > c.budget => Err(format!(
                "took {:.2}s, budget {:.0}s",
                elapsed.as_secs_f64(),
                c.budget.as_secs_f64()
            )),
            o => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => {
                failed += 1;
                ("FAIL", d.as_str())
            }
        };
        println!(
            "[{tag}] criterion {:>2} {:<30} {:>6.2}s  {detail}",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
