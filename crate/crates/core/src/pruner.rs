//! Suffix pruning: the retained index set, the position-preserving view fed
//! to the denoiser, and the per-block prefix key/value cache.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::sequence::{region_for, BlockPartition, Region, SequenceState, TokenId};

/// Absolute positions retained for one decode step of block `block`.
///
/// The window holds the `w` blocks right after the current block (clipped
/// at the last block). The trailing index is the final generation position
/// and is only kept when the window stops short of it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrunedIndexSet {
    pub block: usize,
    pub prompt_len: usize,
    pub gen_len: usize,
    pub prefix: Range<usize>,
    pub current: Range<usize>,
    pub window: Range<usize>,
    pub trailing: Option<usize>,
}

impl PrunedIndexSet {
    /// All retained positions in ascending order.
    pub fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.prefix
            .clone()
            .chain(self.current.clone())
            .chain(self.window.clone())
            .chain(self.trailing)
    }

    pub fn len(&self) -> usize {
        self.prefix.len()
            + self.current.len()
            + self.window.len()
            + usize::from(self.trailing.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, position: usize) -> bool {
        self.prefix.contains(&position)
            || self.current.contains(&position)
            || self.window.contains(&position)
            || self.trailing == Some(position)
    }
}

pub fn pruned_index_set(
    partition: &BlockPartition,
    block: usize,
    window_blocks: usize,
    prompt_len: usize,
    keep_trailing: bool,
) -> Result<PrunedIndexSet> {
    let n = partition.num_blocks();
    let k = partition.block_size();
    let cur = partition.range(block)?;
    let last = block.saturating_add(window_blocks).min(n - 1);
    let window_end = (last + 1) * k;
    let trailing = (keep_trailing && last < n - 1).then(|| prompt_len + partition.gen_len() - 1);
    Ok(PrunedIndexSet {
        block,
        prompt_len,
        gen_len: partition.gen_len(),
        prefix: 0..prompt_len + cur.start,
        current: prompt_len + cur.start..prompt_len + cur.end,
        window: prompt_len + cur.end..prompt_len + window_end,
        trailing,
    })
}

/// Tokens gathered at a [`PrunedIndexSet`], keyed by their original
/// absolute positions.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceView {
    pub tokens: Vec<TokenId>,
    pub position_ids: Vec<usize>,
    /// Positions the denoiser is asked to predict, ascending.
    pub query_span: Vec<usize>,
    pub block: usize,
    /// Step index within the block; set by the scheduler.
    pub step: usize,
    pub prompt_len: usize,
    pub gen_len: usize,
    pub current: Range<usize>,
}

impl SequenceView {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Index of an absolute position inside the view.
    pub fn index_of(&self, position: usize) -> Option<usize> {
        self.position_ids.binary_search(&position).ok()
    }

    pub fn token_at(&self, position: usize) -> Option<TokenId> {
        self.index_of(position).map(|i| self.tokens[i])
    }

    /// Number of view entries ahead of the current block.
    pub fn prefix_len(&self) -> usize {
        self.position_ids
            .partition_point(|&p| p < self.current.start)
    }

    pub fn region_of(&self, position: usize) -> Region {
        region_for(position, &self.current)
    }
}

pub fn build_view(state: &SequenceState, idx: &PrunedIndexSet) -> Result<SequenceView> {
    if idx.prompt_len != state.prompt_len() {
        return Err(Error::InconsistentIndexSet(format!(
            "prompt length {} != {}",
            idx.prompt_len,
            state.prompt_len()
        )));
    }
    if idx.gen_len != state.gen_len() {
        return Err(Error::InconsistentIndexSet(format!(
            "generation length {} != {}",
            idx.gen_len,
            state.gen_len()
        )));
    }
    let mut tokens = Vec::with_capacity(idx.len());
    let mut position_ids = Vec::with_capacity(idx.len());
    for pos in idx.positions() {
        tokens.push(state.token_at(pos)?);
        position_ids.push(pos);
    }
    let query_span = idx
        .current
        .clone()
        .chain(
            idx.window
                .clone()
                .chain(idx.trailing)
                .filter(|&p| state.is_mask_at(p)),
        )
        .collect();
    Ok(SequenceView {
        tokens,
        position_ids,
        query_span,
        block: idx.block,
        step: 0,
        prompt_len: idx.prompt_len,
        gen_len: idx.gen_len,
        current: idx.current.clone(),
    })
}

/// Stored key/value rows for the cached prefix, row-major `len × dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct KvRows {
    pub len: usize,
    pub dim: usize,
    pub keys: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheEvent {
    Hit,
    Miss,
}

/// Prefix key/value cache, rebuilt once per block and reused for the rest
/// of that block's steps.
#[derive(Clone, Debug, Default)]
pub struct PrefixCache {
    enabled: bool,
    cached_upto: usize,
    valid_for_block: Option<usize>,
    hits: u64,
    misses: u64,
    kv: Option<KvRows>,
}

impl PrefixCache {
    pub fn new() -> Self {
        Self {
            enabled: true,
            ..Default::default()
        }
    }

    /// A cache that never stores anything; used by the no-reuse baseline.
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn cached_upto(&self) -> usize {
        self.cached_upto
    }

    pub fn valid_for_block(&self) -> Option<usize> {
        self.valid_for_block
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    /// Stored rows usable for `view`, if they were built for its block.
    pub fn rows_for(&self, view: &SequenceView) -> Option<&KvRows> {
        if !self.enabled || self.valid_for_block != Some(view.block) {
            return None;
        }
        self.kv.as_ref().filter(|kv| kv.len == view.prefix_len())
    }

    /// Stores rows for the current block. Ignored when disabled or stale.
    pub fn store_rows(&mut self, view: &SequenceView, rows: KvRows) {
        if self.enabled && self.valid_for_block == Some(view.block) {
            self.kv = Some(rows);
        }
    }
}

/// Records a step of block `block` against the cache: the first step of a
/// block rebuilds it, later steps of the same block reuse it.
pub fn prefix_cache_update(
    cache: &mut PrefixCache,
    state: &SequenceState,
    partition: &BlockPartition,
    block: usize,
) -> Result<CacheEvent> {
    let start = partition.range(block)?.start;
    match cache.valid_for_block {
        Some(b) if block < b => Err(Error::BlockRegression {
            cached: b,
            requested: block,
        }),
        Some(b) if block == b => {
            cache.hits += 1;
            Ok(CacheEvent::Hit)
        }
        _ => {
            cache.misses += 1;
            cache.valid_for_block = Some(block);
            cache.cached_upto = state.prompt_len() + start;
            cache.kv = None;
            Ok(CacheEvent::Miss)
        }
    }
}
