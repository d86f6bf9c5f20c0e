//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use streamdec_core::pruner::SequenceView;
use streamdec_core::{Denoiser, PrefixCache, TokenId};

/// What a reference run produced.
#[derive(Debug, PartialEq)]
pub struct RefRun {
    pub tokens: Vec<TokenId>,
    /// Accepted absolute positions of each step, ascending.
    pub steps: Vec<Vec<usize>>,
    pub exited_early_at: Option<usize>,
}

/// How the reference decoder shapes the view.
#[derive(Clone, Copy, Debug)]
pub enum RefView {
    /// Every prompt and generation slot.
    Full,
    /// Prefix, current block, `window` following blocks and the final slot
    /// when the window falls short of it.
    Pruned { window: usize, keep_trailing: bool },
}

#[derive(Clone, Copy, Debug)]
pub struct RefParams {
    pub gen_len: usize,
    pub block_size: usize,
    pub tau0: f64,
    pub alpha: f64,
    pub early_exit: bool,
}

/// Straight-line streaming decoder written from the definitions: builds
/// each view by hand, uses no prefix cache, and keeps its own threshold and
/// selection logic.
pub fn reference_decode(
    prompt: &[TokenId],
    d: &dyn Denoiser,
    p: RefParams,
    shape: RefView,
) -> RefRun {
    let pl = prompt.len();
    let k = p.block_size;
    let n = p.gen_len / k;
    let mut seq: Vec<TokenId> = prompt.to_vec();
    seq.resize(pl + p.gen_len, TokenId::MASK);
    let mut steps = Vec::new();
    let mut exited = None;
    for c in 0..n {
        let cur = pl + c * k..pl + (c + 1) * k;
        let positions: Vec<usize> = match shape {
            RefView::Full => (0..pl + p.gen_len).collect(),
            RefView::Pruned {
                window,
                keep_trailing,
            } => {
                let last_block = (c + window).min(n - 1);
                let mut v: Vec<usize> = (0..pl + (last_block + 1) * k).collect();
                if keep_trailing && last_block < n - 1 {
                    v.push(pl + p.gen_len - 1);
                }
                v
            }
        };
        let mut step = 0;
        let mut confident_eos = false;
        while cur.clone().any(|i| seq[i] == TokenId::MASK) {
            let view = SequenceView {
                tokens: positions.iter().map(|&i| seq[i]).collect(),
                position_ids: positions.clone(),
                query_span: positions
                    .iter()
                    .copied()
                    .filter(|&i| cur.contains(&i) || (i >= cur.end && seq[i] == TokenId::MASK))
                    .collect(),
                block: c,
                step,
                prompt_len: pl,
                gen_len: p.gen_len,
                current: cur.clone(),
            };
            let preds = d
                .predict(&view, &view.query_span, &mut PrefixCache::disabled())
                .unwrap();
            let masked = cur.clone().filter(|&i| seq[i] == TokenId::MASK).count();
            let r = masked as f64 / k as f64;
            let tau = p.tau0 * (1.0 - p.alpha * (1.0 - r));
            let cands: Vec<_> = preds
                .entries
                .iter()
                .filter(|e| cur.contains(&e.position) && seq[e.position] == TokenId::MASK)
                .collect();
            let mut chosen: Vec<_> = cands.iter().filter(|e| e.confidence >= tau).collect();
            let fallback = chosen.is_empty();
            if fallback {
                let mut best = cands[0];
                for e in &cands {
                    if e.confidence > best.confidence {
                        best = e;
                    }
                }
                chosen.push(cands.iter().find(|e| e.position == best.position).unwrap());
            }
            let mut acc = Vec::new();
            for e in chosen {
                seq[e.position] = e.token;
                acc.push(e.position);
                if !fallback && e.token == TokenId::EOS {
                    confident_eos = true;
                }
            }
            acc.sort();
            steps.push(acc);
            step += 1;
        }
        if p.early_exit && confident_eos {
            exited = Some(c);
            break;
        }
    }
    let tokens = seq[pl..]
        .iter()
        .map(|&t| if t == TokenId::MASK { TokenId::EOS } else { t })
        .collect();
    RefRun {
        tokens,
        steps,
        exited_early_at: exited,
    }
}

/// Per-call `(queries, keys)` of a streaming run, counted from the view
/// rule: prefix + current + window blocks (+ final slot), queries are the
/// current block plus every masked window/final slot, and the prefix is
/// queried again on the first step of each block.
pub fn streaming_call_counts(
    prompt_len: usize,
    gen_len: usize,
    block_size: usize,
    window: usize,
    keep_trailing: bool,
    steps_per_block: &[usize],
) -> Vec<(u64, u64)> {
    let n = gen_len / block_size;
    let mut out = Vec::new();
    for (c, &steps) in steps_per_block.iter().enumerate() {
        let ahead = window.min(n - 1 - c);
        let trailing = usize::from(keep_trailing && c + window < n - 1);
        let prefix = prompt_len + c * block_size;
        let keys = prefix + block_size + ahead * block_size + trailing;
        let q = block_size + ahead * block_size + trailing;
        for s in 0..steps {
            let queries = if s == 0 { q + prefix } else { q };
            out.push((queries as u64, keys as u64));
        }
    }
    out
}

/// Per-call `(queries, keys)` of a vanilla run: the full sequence is both
/// queried and attended every step.
pub fn vanilla_call_counts(prompt_len: usize, gen_len: usize, calls: usize) -> Vec<(u64, u64)> {
    let total = (prompt_len + gen_len) as u64;
    vec![(total, total); calls]
}

/// Deterministic prompt of ordinary tokens.
pub fn prompt(len: usize, vocab: usize, salt: u64) -> Vec<TokenId> {
    (0..len as u64)
        .map(|i| {
            let h = (i.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt).rotate_left(17);
            TokenId(3 + (h % (vocab as u64 - 3)) as u32)
        })
        .collect()
}
