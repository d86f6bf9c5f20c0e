//! The denoiser interface and its three implementations.
//!
//! A denoiser maps a [`SequenceView`] to one `(token, confidence)` pair per
//! requested query position. Confidence is the maximum softmax probability
//! of the returned token; full distributions never leave the implementation.

mod local_markov;
mod scripted;
mod toy_transformer;

pub use local_markov::LocalMarkovOracle;
pub use scripted::{OracleScript, ScriptEntry, ScriptStep, ScriptedOracle};
pub use toy_transformer::ToyTransformer;

use std::fmt;

use crate::error::{Error, Result};
use crate::pruner::{PrefixCache, SequenceView};
use crate::sequence::TokenId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Locality {
    /// Predictions at `q` only read view entries within this many positions
    /// of `q`, plus the last entry of the view.
    Radius(usize),
    Unbounded,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub position: usize,
    pub token: TokenId,
    pub confidence: f64,
}

/// Attention mass of one query on the prefix, current and suffix regions.
pub type RegionMass = [f64; 3];

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Predictions {
    pub entries: Vec<Prediction>,
    /// One triple per entry, when the denoiser computes attention.
    pub attention: Option<Vec<RegionMass>>,
}

impl Predictions {
    pub fn get(&self, position: usize) -> Option<&Prediction> {
        self.entries
            .binary_search_by_key(&position, |e| e.position)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn attention_at(&self, position: usize) -> Option<RegionMass> {
        let i = self
            .entries
            .binary_search_by_key(&position, |e| e.position)
            .ok()?;
        self.attention.as_ref().map(|a| a[i])
    }
}

pub trait Denoiser: Send + Sync + fmt::Debug {
    fn vocab_size(&self) -> usize;

    fn locality(&self) -> Locality;

    /// Predicts every position in `queries` (ascending, each present in
    /// `view`). `cache` may be read and filled with prefix key/value rows.
    fn predict(
        &self,
        view: &SequenceView,
        queries: &[usize],
        cache: &mut PrefixCache,
    ) -> Result<Predictions>;
}

/// Runs `denoiser` after checking the view and query set.
pub fn predict(
    denoiser: &dyn Denoiser,
    view: &SequenceView,
    queries: &[usize],
    cache: &mut PrefixCache,
) -> Result<Predictions> {
    check_view(view, queries, denoiser.vocab_size())?;
    denoiser.predict(view, queries, cache)
}

pub(crate) fn check_view(view: &SequenceView, queries: &[usize], vocab: usize) -> Result<()> {
    if view.tokens.len() != view.position_ids.len() {
        return Err(Error::InconsistentIndexSet(
            "token and position id counts differ".into(),
        ));
    }
    if view.position_ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InconsistentIndexSet(
            "position ids are not strictly increasing".into(),
        ));
    }
    if let Some(t) = view.tokens.iter().find(|t| t.0 as usize >= vocab) {
        return Err(Error::VocabMismatch { token: t.0, vocab });
    }
    if let Some(&q) = queries.iter().find(|&&q| view.index_of(q).is_none()) {
        return Err(Error::QueryNotInView(q));
    }
    Ok(())
}

/// Stable 64-bit mixer (splitmix64 finalizer) used for seeded hashing.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
