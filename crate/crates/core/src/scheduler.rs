//! Decoding state machines.
//!
//! All four scheduler kinds share one block loop and differ only in how the
//! view is built, whether the prefix cache is reused, how positions are
//! selected each step and whether early exit is armed:
//!
//! | kind              | view      | prefix cache | selection                  | early exit |
//! |-------------------|-----------|--------------|----------------------------|------------|
//! | `streaming`       | pruned    | yes          | adaptive threshold         | optional   |
//! | `fixed_threshold` | full      | yes          | constant threshold `tau0`  | no         |
//! | `prefix_cache`    | full      | yes          | top `K/M` per step         | no         |
//! | `vanilla`         | full      | no           | top `K/M` per step         | no         |
//!
//! The top-`K/M` rule is a reconstruction of the usual fixed-step masked
//! diffusion sampler: exactly `M` steps per block, committing the `K/M`
//! most confident masked positions each step.
//!
//! Only current-block positions are ever committed, even though window and
//! trailing positions are queried.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::denoiser::{predict, Denoiser, Prediction, RegionMass};
use crate::error::{Error, Result};
use crate::metrics::CostLedger;
use crate::pruner::{build_view, prefix_cache_update, pruned_index_set, CacheEvent, PrefixCache};
use crate::sequence::{BlockPartition, SequenceState, TokenId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Streaming,
    FixedThreshold,
    PrefixCache,
    Vanilla,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 4] = [
        SchedulerKind::Streaming,
        SchedulerKind::FixedThreshold,
        SchedulerKind::PrefixCache,
        SchedulerKind::Vanilla,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchedulerKind::Streaming => "streaming",
            SchedulerKind::FixedThreshold => "fixed_threshold",
            SchedulerKind::PrefixCache => "prefix_cache",
            SchedulerKind::Vanilla => "vanilla",
        }
    }

    fn uses_fixed_steps(self) -> bool {
        matches!(self, SchedulerKind::PrefixCache | SchedulerKind::Vanilla)
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchedulerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    /// Generation length `L` in tokens.
    pub gen_len: usize,
    /// Block size `K` in tokens.
    pub block_size: usize,
    /// Suffix window `w`, in blocks after the current one.
    pub window: usize,
    pub tau0: f64,
    pub alpha: f64,
    pub early_exit: bool,
    pub keep_trailing: bool,
    /// Steps per block `M` for the fixed-step baselines.
    pub steps_per_block: usize,
    pub scheduler: SchedulerKind,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            gen_len: 512,
            block_size: 32,
            window: 4,
            tau0: 0.9,
            alpha: 0.3,
            early_exit: true,
            keep_trailing: true,
            steps_per_block: 8,
            scheduler: SchedulerKind::Streaming,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gen_len == 0 {
            return Err(Error::config("gen_len", "must be at least 1"));
        }
        if self.block_size == 0 {
            return Err(Error::config("block_size", "must be at least 1"));
        }
        if !self.gen_len.is_multiple_of(self.block_size) {
            return Err(Error::config(
                "block_size",
                format!(
                    "{} does not divide gen_len {}",
                    self.block_size, self.gen_len
                ),
            ));
        }
        if !(self.tau0 > 0.0 && self.tau0 <= 1.0) {
            return Err(Error::config(
                "tau0",
                format!("{} not in (0, 1]", self.tau0),
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(
                "alpha",
                format!("{} not in [0, 1]", self.alpha),
            ));
        }
        if self.scheduler.uses_fixed_steps()
            && (self.steps_per_block == 0 || !self.block_size.is_multiple_of(self.steps_per_block))
        {
            return Err(Error::config(
                "steps_per_block",
                format!(
                    "{} must be positive and divide block_size {}",
                    self.steps_per_block, self.block_size
                ),
            ));
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> usize {
        self.gen_len / self.block_size.max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptedToken {
    pub pos: usize,
    pub token: u32,
    pub conf: f64,
}

/// Outcome of one decode step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub block: usize,
    pub step: usize,
    pub tau: f64,
    pub r_mask: f64,
    pub accepted: Vec<AcceptedToken>,
    pub fallback: bool,
    /// Mean attention mass of the current block's queries on
    /// `[prefix, current, suffix]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attn: Option<[f64; 3]>,
    /// Confidences of every masked current-block position at this step,
    /// in position order, accepted or not.
    #[serde(default)]
    pub confs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    /// Final contents of the `L` generation slots.
    pub tokens: Vec<TokenId>,
    pub trace: Vec<StepRecord>,
    pub ledger: CostLedger,
    pub exited_early_at: Option<usize>,
    pub prompt_len: usize,
    pub wall_clock_seconds: f64,
}

/// `tau0 * (1 - alpha * (1 - r_mask))`.
pub fn adaptive_threshold(tau0: f64, alpha: f64, r_mask: f64) -> Result<f64> {
    if !(tau0 > 0.0 && tau0 <= 1.0) {
        return Err(Error::ParamOutOfRange {
            name: "tau0",
            value: tau0,
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::ParamOutOfRange {
            name: "alpha",
            value: alpha,
        });
    }
    if !(0.0..=1.0).contains(&r_mask) {
        return Err(Error::ParamOutOfRange {
            name: "r_mask",
            value: r_mask,
        });
    }
    Ok(tau0 * (1.0 - alpha * (1.0 - r_mask)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub accepted: Vec<Prediction>,
    pub fallback: bool,
}

/// Every candidate at or above `tau`; if there is none, the single most
/// confident candidate (lowest position on ties).
pub fn select_positions(candidates: &[Prediction], tau: f64) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    let accepted: Vec<Prediction> = candidates
        .iter()
        .filter(|p| p.confidence >= tau)
        .copied()
        .collect();
    if !accepted.is_empty() {
        return Ok(Selection {
            accepted,
            fallback: false,
        });
    }
    let best = candidates
        .iter()
        .copied()
        .reduce(|best, p| {
            if p.confidence > best.confidence
                || (p.confidence == best.confidence && p.position < best.position)
            {
                p
            } else {
                best
            }
        })
        .expect("non-empty");
    Ok(Selection {
        accepted: vec![best],
        fallback: true,
    })
}

/// The `count` most confident candidates, lowest position first on ties.
fn select_top(candidates: &[Prediction], count: usize) -> Vec<Prediction> {
    let mut ranked = candidates.to_vec();
    ranked.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.position.cmp(&b.position))
    });
    ranked.truncate(count);
    ranked.sort_by_key(|p| p.position);
    ranked
}

/// True when early exit is armed and the block committed `EOS` through a
/// threshold-passing acceptance.
pub fn early_exit_triggered(block_records: &[StepRecord], cfg: &DecodeConfig) -> bool {
    cfg.early_exit
        && block_records.iter().any(|r| {
            !r.fallback
                && r.accepted
                    .iter()
                    .any(|a| a.token == TokenId::EOS.0 && a.conf >= r.tau)
        })
}

#[derive(Clone, Copy, Debug)]
enum Rule {
    Adaptive { tau0: f64, alpha: f64 },
    TopK(usize),
}

#[derive(Clone, Copy, Debug)]
struct Policy {
    window: usize,
    keep_trailing: bool,
    cache: bool,
    rule: Rule,
    early_exit: bool,
}

impl Policy {
    fn for_config(cfg: &DecodeConfig) -> Self {
        let full = cfg.num_blocks();
        match cfg.scheduler {
            SchedulerKind::Streaming => Policy {
                window: cfg.window,
                keep_trailing: cfg.keep_trailing,
                cache: true,
                rule: Rule::Adaptive {
                    tau0: cfg.tau0,
                    alpha: cfg.alpha,
                },
                early_exit: cfg.early_exit,
            },
            SchedulerKind::FixedThreshold => Policy {
                window: full,
                keep_trailing: false,
                cache: true,
                rule: Rule::Adaptive {
                    tau0: cfg.tau0,
                    alpha: 0.0,
                },
                early_exit: false,
            },
            SchedulerKind::PrefixCache | SchedulerKind::Vanilla => Policy {
                window: full,
                keep_trailing: false,
                cache: cfg.scheduler == SchedulerKind::PrefixCache,
                rule: Rule::TopK(cfg.block_size / cfg.steps_per_block),
                early_exit: false,
            },
        }
    }
}

/// Decodes block `block` until none of its slots is masked, appending
/// forward costs to `ledger`.
#[allow(clippy::too_many_arguments)]
pub fn decode_block(
    state: &mut SequenceState,
    partition: &BlockPartition,
    block: usize,
    denoiser: &dyn Denoiser,
    cfg: &DecodeConfig,
    cache: &mut PrefixCache,
    ledger: &mut CostLedger,
) -> Result<Vec<StepRecord>> {
    run_block(
        state,
        partition,
        block,
        denoiser,
        &Policy::for_config(cfg),
        cache,
        ledger,
    )
}

fn run_block(
    state: &mut SequenceState,
    partition: &BlockPartition,
    block: usize,
    denoiser: &dyn Denoiser,
    policy: &Policy,
    cache: &mut PrefixCache,
    ledger: &mut CostLedger,
) -> Result<Vec<StepRecord>> {
    if state.masked_in_block(partition, block)? == 0 {
        return Err(Error::BlockAlreadyDone(block));
    }
    let idx = pruned_index_set(
        partition,
        block,
        policy.window,
        state.prompt_len(),
        policy.keep_trailing,
    )?;
    let current = idx.current.clone();
    let gen_offset = state.prompt_len();
    let mut records = Vec::new();
    let mut step = 0;
    while state.masked_in_block(partition, block)? > 0 {
        let hit =
            policy.cache && prefix_cache_update(cache, state, partition, block)? == CacheEvent::Hit;
        let mut view = build_view(state, &idx)?;
        view.step = step;
        let preds = predict(denoiser, &view, &view.query_span, cache)?;

        let queries = view.query_span.len() + if hit { 0 } else { view.prefix_len() };
        ledger.record_forward(block, queries, view.len(), hit)?;

        let candidates: Vec<Prediction> = preds
            .entries
            .iter()
            .filter(|e| current.contains(&e.position) && state.is_mask_at(e.position))
            .copied()
            .collect();
        let r_mask = state.masked_ratio(partition, block)?;
        let (tau, selection) = match policy.rule {
            Rule::Adaptive { tau0, alpha } => {
                let tau = adaptive_threshold(tau0, alpha, r_mask)?;
                (tau, select_positions(&candidates, tau)?)
            }
            Rule::TopK(n) => (
                0.0,
                Selection {
                    accepted: select_top(&candidates, n),
                    fallback: false,
                },
            ),
        };
        for p in &selection.accepted {
            state.commit(p.position - gen_offset, p.token)?;
        }

        let attn = preds.attention.as_ref().map(|_| {
            let mut sum = [0.0; 3];
            let mut n = 0usize;
            for pos in current.clone() {
                if let Some(m) = preds.attention_at(pos) {
                    for (s, v) in sum.iter_mut().zip(m) {
                        *s += v;
                    }
                    n += 1;
                }
            }
            sum.map(|s| s / n.max(1) as f64) as RegionMass
        });
        records.push(StepRecord {
            block,
            step,
            tau,
            r_mask,
            accepted: selection
                .accepted
                .iter()
                .map(|p| AcceptedToken {
                    pos: p.position,
                    token: p.token.0,
                    conf: p.confidence,
                })
                .collect(),
            fallback: selection.fallback,
            attn,
            confs: candidates.iter().map(|p| p.confidence).collect(),
        });
        step += 1;
    }
    Ok(records)
}

fn run(prompt: &[TokenId], denoiser: &dyn Denoiser, cfg: &DecodeConfig) -> Result<DecodeResult> {
    cfg.validate()?;
    let started = Instant::now();
    let partition = BlockPartition::new(cfg.gen_len, cfg.block_size)?;
    let mut state = SequenceState::new(prompt.to_vec(), cfg.gen_len)?;
    let policy = Policy::for_config(cfg);
    let mut cache = if policy.cache {
        PrefixCache::new()
    } else {
        PrefixCache::disabled()
    };
    let mut ledger = CostLedger::new(partition.num_blocks());
    let mut trace = Vec::new();
    let mut exited_early_at = None;
    for block in 0..partition.num_blocks() {
        let records = run_block(
            &mut state,
            &partition,
            block,
            denoiser,
            &policy,
            &mut cache,
            &mut ledger,
        )?;
        let exit = policy.early_exit && early_exit_triggered(&records, cfg);
        trace.extend(records);
        if exit {
            exited_early_at = Some(block);
            break;
        }
    }
    Ok(DecodeResult {
        tokens: state.generated_tokens(TokenId::EOS),
        trace,
        ledger,
        exited_early_at,
        prompt_len: prompt.len(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Runs the configured streaming decoder. Slots left after an early exit
/// read as `EOS`.
pub fn decode_sequence(
    prompt: &[TokenId],
    denoiser: &dyn Denoiser,
    cfg: &DecodeConfig,
) -> Result<DecodeResult> {
    if cfg.scheduler != SchedulerKind::Streaming {
        return Err(Error::config(
            "scheduler",
            format!("decode_sequence runs streaming, got {}", cfg.scheduler),
        ));
    }
    run(prompt, denoiser, cfg)
}

/// Runs one of the three baselines with the decode parameters of `cfg`.
pub fn run_baseline(
    prompt: &[TokenId],
    denoiser: &dyn Denoiser,
    kind: SchedulerKind,
    cfg: &DecodeConfig,
) -> Result<DecodeResult> {
    if kind == SchedulerKind::Streaming {
        return Err(Error::UnknownKind(format!("{kind} is not a baseline")));
    }
    let cfg = DecodeConfig {
        scheduler: kind,
        ..cfg.clone()
    };
    run(prompt, denoiser, &cfg)
}

/// Dispatches on `cfg.scheduler`.
pub fn decode(
    prompt: &[TokenId],
    denoiser: &dyn Denoiser,
    cfg: &DecodeConfig,
) -> Result<DecodeResult> {
    run(prompt, denoiser, cfg)
}
