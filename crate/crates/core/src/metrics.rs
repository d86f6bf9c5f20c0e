//! Cost accounting, throughput proxies and trace summaries.
//!
//! Cost convention: every forward call attends all view entries as keys.
//! Queries are the view's query span; on calls that rebuild (or do not
//! have) the prefix cache, every prefix entry counts as a query too.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheduler::{DecodeResult, StepRecord};
use crate::sequence::TokenId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostCounters {
    pub forward_calls: u64,
    pub query_tokens: u64,
    pub key_tokens: u64,
    pub attention_pairs: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

impl CostCounters {
    fn add(&mut self, o: &CostCounters) {
        self.forward_calls += o.forward_calls;
        self.query_tokens += o.query_tokens;
        self.key_tokens += o.key_tokens;
        self.attention_pairs += o.attention_pairs;
        self.cache_hits += o.cache_hits;
        self.cache_misses += o.cache_misses;
    }

    pub fn is_zero(&self) -> bool {
        *self == CostCounters::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardCall {
    pub block: usize,
    pub queries: usize,
    pub keys: usize,
    pub cache_hit: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    #[serde(flatten)]
    pub totals: CostCounters,
    pub per_block: Vec<CostCounters>,
    /// Every forward call in order.
    pub calls: Vec<ForwardCall>,
}

impl CostLedger {
    pub fn new(num_blocks: usize) -> Self {
        Self {
            totals: CostCounters::default(),
            per_block: vec![CostCounters::default(); num_blocks],
            calls: Vec::new(),
        }
    }

    pub fn record_forward(
        &mut self,
        block: usize,
        queries: usize,
        keys: usize,
        cache_hit: bool,
    ) -> Result<()> {
        if queries == 0 || keys < queries {
            return Err(Error::InvalidCounts { queries, keys });
        }
        if block >= self.per_block.len() {
            self.per_block.resize(block + 1, CostCounters::default());
        }
        let delta = CostCounters {
            forward_calls: 1,
            query_tokens: queries as u64,
            key_tokens: keys as u64,
            attention_pairs: queries as u64 * keys as u64,
            cache_hits: u64::from(cache_hit),
            cache_misses: u64::from(!cache_hit),
        };
        self.totals.add(&delta);
        self.per_block[block].add(&delta);
        self.calls.push(ForwardCall {
            block,
            queries,
            keys,
            cache_hit,
        });
        Ok(())
    }

    /// Counter-wise sum; associative and commutative over the counters.
    pub fn merge(&mut self, other: &CostLedger) {
        self.totals.add(&other.totals);
        if other.per_block.len() > self.per_block.len() {
            self.per_block
                .resize(other.per_block.len(), CostCounters::default());
        }
        for (a, b) in self.per_block.iter_mut().zip(&other.per_block) {
            a.add(b);
        }
        self.calls.extend_from_slice(&other.calls);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub non_eos_tokens: u64,
    pub forward_calls: u64,
    pub query_tokens: u64,
    pub attention_pairs: u64,
    /// Non-EOS tokens per query token.
    pub proxy_tps_q: f64,
    /// Non-EOS tokens per attention pair.
    pub proxy_tps_a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl ThroughputReport {
    fn from_counts(
        non_eos_tokens: u64,
        c: &CostCounters,
        wall_clock_seconds: Option<f64>,
    ) -> Result<Self> {
        if c.forward_calls == 0 {
            return Err(Error::EmptyRun);
        }
        let ratio = |d: u64| {
            if d == 0 {
                0.0
            } else {
                non_eos_tokens as f64 / d as f64
            }
        };
        Ok(Self {
            non_eos_tokens,
            forward_calls: c.forward_calls,
            query_tokens: c.query_tokens,
            attention_pairs: c.attention_pairs,
            proxy_tps_q: ratio(c.query_tokens),
            proxy_tps_a: ratio(c.attention_pairs),
            wall_clock_seconds,
        })
    }

    /// Pools several runs into one report.
    pub fn pooled(reports: &[ThroughputReport]) -> Result<Self> {
        let mut c = CostCounters::default();
        let mut non_eos = 0;
        let mut wall = None;
        for r in reports {
            non_eos += r.non_eos_tokens;
            c.forward_calls += r.forward_calls;
            c.query_tokens += r.query_tokens;
            c.attention_pairs += r.attention_pairs;
            if let Some(w) = r.wall_clock_seconds {
                *wall.get_or_insert(0.0) += w;
            }
        }
        Self::from_counts(non_eos, &c, wall)
    }
}

/// Throughput proxies of a finished run; only non-`EOS` slots count as
/// generated tokens.
pub fn throughput_proxy(result: &DecodeResult) -> Result<ThroughputReport> {
    let non_eos = result.tokens.iter().filter(|&&t| t != TokenId::EOS).count() as u64;
    ThroughputReport::from_counts(
        non_eos,
        &result.ledger.totals,
        Some(result.wall_clock_seconds),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub query: f64,
    pub attention: f64,
    /// Baseline query tokens per call over ours.
    pub per_step_query_reduction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock: Option<f64>,
}

pub fn speedup(ours: &ThroughputReport, baseline: &ThroughputReport) -> Result<Speedup> {
    if baseline.query_tokens == 0
        || baseline.proxy_tps_q <= 0.0
        || baseline.proxy_tps_a <= 0.0
        || ours.query_tokens == 0
        || ours.forward_calls == 0
        || baseline.forward_calls == 0
    {
        return Err(Error::DivideByZero);
    }
    let per_call = |r: &ThroughputReport| r.query_tokens as f64 / r.forward_calls as f64;
    let wall_clock = match (ours.wall_clock_seconds, baseline.wall_clock_seconds) {
        (Some(o), Some(b)) if o > 0.0 => Some(b / o),
        _ => None,
    };
    Ok(Speedup {
        query: ours.proxy_tps_q / baseline.proxy_tps_q,
        attention: ours.proxy_tps_a / baseline.proxy_tps_a,
        per_step_query_reduction: per_call(baseline) / per_call(ours),
        wall_clock,
    })
}

/// Percentile of ascending `sorted` data by linear interpolation between
/// closest ranks: rank `h = (n - 1) p`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRow {
    pub block: usize,
    pub step: usize,
    pub mean: f64,
    pub q25: f64,
    pub q75: f64,
    /// Masked current-block positions at this step, averaged over runs.
    pub n_masked_remaining: f64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfidenceSummary {
    pub rows: Vec<ConfidenceRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub block: usize,
    pub step: usize,
    pub prefix: f64,
    pub current: f64,
    pub suffix: f64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub rows: Vec<AttentionRow>,
}

/// Per `(block, step)` mean and interquartile range of all candidate
/// confidences observed at that step, pooled across runs.
pub fn summarize_confidence<'a>(
    trace: impl IntoIterator<Item = &'a StepRecord>,
) -> Result<ConfidenceSummary> {
    let mut groups: BTreeMap<(usize, usize), (Vec<f64>, usize)> = BTreeMap::new();
    for r in trace {
        let g = groups.entry((r.block, r.step)).or_default();
        g.0.extend_from_slice(&r.confs);
        g.1 += 1;
    }
    if groups.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let rows = groups
        .into_iter()
        .filter(|(_, (c, _))| !c.is_empty())
        .map(|((block, step), (mut confs, runs))| {
            confs.sort_by(f64::total_cmp);
            ConfidenceRow {
                block,
                step,
                mean: confs.iter().sum::<f64>() / confs.len() as f64,
                q25: percentile_sorted(&confs, 0.25),
                q75: percentile_sorted(&confs, 0.75),
                n_masked_remaining: confs.len() as f64 / runs as f64,
            }
        })
        .collect();
    Ok(ConfidenceSummary { rows })
}

/// Per `(block, step)` mean attention mass of current-block queries on the
/// three regions, averaged across runs.
pub fn summarize_attention<'a>(
    trace: impl IntoIterator<Item = &'a StepRecord>,
) -> Result<AttentionSummary> {
    let mut groups: BTreeMap<(usize, usize), ([f64; 3], usize)> = BTreeMap::new();
    for r in trace {
        let attn = r.attn.ok_or(Error::NoAttentionData)?;
        let g = groups.entry((r.block, r.step)).or_default();
        for (s, v) in g.0.iter_mut().zip(attn) {
            *s += v;
        }
        g.1 += 1;
    }
    if groups.is_empty() {
        return Err(Error::NoAttentionData);
    }
    let rows = groups
        .into_iter()
        .map(|((block, step), (sum, n))| AttentionRow {
            block,
            step,
            prefix: sum[0] / n as f64,
            current: sum[1] / n as f64,
            suffix: sum[2] / n as f64,
        })
        .collect();
    Ok(AttentionSummary { rows })
}

impl ConfidenceSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("block,step,mean,q25,q75,n_masked_remaining\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.block, r.step, r.mean, r.q25, r.q75, r.n_masked_remaining
            );
        }
        out
    }

    /// Blocks whose mean confidence never drops from one step to the next.
    pub fn monotone_blocks(&self) -> BTreeMap<usize, bool> {
        let mut verdict = BTreeMap::new();
        for w in self.rows.windows(2) {
            if w[0].block == w[1].block && w[1].mean < w[0].mean {
                verdict.insert(w[0].block, false);
            }
        }
        for r in &self.rows {
            verdict.entry(r.block).or_insert(true);
        }
        verdict
    }
}

impl AttentionSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("block,step,prefix,current,suffix\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.block, r.step, r.prefix, r.current, r.suffix
            );
        }
        out
    }
}

/// Writes one JSON object per step record.
pub fn write_trace_jsonl<W: Write>(mut w: W, trace: &[StepRecord]) -> std::io::Result<()> {
    for r in trace {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace_jsonl<R: BufRead>(r: R) -> Result<Vec<StepRecord>> {
    r.lines()
        .enumerate()
        .filter(|(_, l)| !l.as_ref().is_ok_and(|l| l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::io("<trace>", e))?;
            serde_json::from_str(&line).map_err(|e| Error::json(format!("trace line {}", i + 1), e))
        })
        .collect()
}
