//! Sequence bookkeeping shared by every other module: token ids, the block
//! partition of the generation buffer, the mutable decode state and the
//! prefix / current / suffix region split.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A vocabulary token id. Ids `0..3` are reserved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub const MASK: TokenId = TokenId(0);
    pub const EOS: TokenId = TokenId(1);
    pub const PAD: TokenId = TokenId(2);
    /// First id that is not reserved.
    pub const FIRST_ORDINARY: u32 = 3;
    /// Smallest vocabulary that holds the reserved ids plus one ordinary token.
    pub const MIN_VOCAB: usize = 4;

    pub fn is_reserved(self) -> bool {
        self.0 < Self::FIRST_ORDINARY
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One generation slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Mask,
    Committed(TokenId),
}

impl Slot {
    pub fn is_mask(self) -> bool {
        matches!(self, Slot::Mask)
    }

    /// The token the denoiser sees for this slot.
    pub fn token(self) -> TokenId {
        match self {
            Slot::Mask => TokenId::MASK,
            Slot::Committed(t) => t,
        }
    }
}

/// Split of an `L`-token generation buffer into `N` blocks of `K` tokens.
/// Ranges are generation-buffer indices, not absolute positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockPartition {
    gen_len: usize,
    block_size: usize,
    ranges: Vec<Range<usize>>,
}

impl BlockPartition {
    pub fn new(gen_len: usize, block_size: usize) -> Result<Self> {
        if gen_len == 0 || block_size == 0 {
            return Err(Error::ZeroLength);
        }
        if !gen_len.is_multiple_of(block_size) {
            return Err(Error::NonDivisible {
                gen_len,
                block_size,
            });
        }
        let ranges = (0..gen_len / block_size)
            .map(|n| n * block_size..(n + 1) * block_size)
            .collect();
        Ok(Self {
            gen_len,
            block_size,
            ranges,
        })
    }

    pub fn gen_len(&self) -> usize {
        self.gen_len
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn num_blocks(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn range(&self, block: usize) -> Result<Range<usize>> {
        self.ranges
            .get(block)
            .cloned()
            .ok_or(Error::BlockOutOfRange {
                block,
                num_blocks: self.num_blocks(),
            })
    }

    /// Block that owns generation index `gen_index`.
    pub fn block_of(&self, gen_index: usize) -> Option<usize> {
        (gen_index < self.gen_len).then(|| gen_index / self.block_size)
    }
}

/// Same as [`BlockPartition::new`].
pub fn partition_blocks(gen_len: usize, block_size: usize) -> Result<BlockPartition> {
    BlockPartition::new(gen_len, block_size)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Prefix,
    Current,
    Suffix,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Prefix, Region::Current, Region::Suffix];

    pub fn index(self) -> usize {
        match self {
            Region::Prefix => 0,
            Region::Current => 1,
            Region::Suffix => 2,
        }
    }
}

/// Prompt plus the `L`-slot generation buffer. Absolute position of
/// generation slot `i` is `prompt_len + i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceState {
    prompt: Vec<TokenId>,
    gen: Vec<Slot>,
}

impl SequenceState {
    pub fn new(prompt: Vec<TokenId>, gen_len: usize) -> Result<Self> {
        if prompt.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        if gen_len == 0 {
            return Err(Error::ZeroLength);
        }
        Ok(Self {
            prompt,
            gen: vec![Slot::Mask; gen_len],
        })
    }

    pub fn prompt(&self) -> &[TokenId] {
        &self.prompt
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt.len()
    }

    pub fn gen_len(&self) -> usize {
        self.gen.len()
    }

    pub fn total_len(&self) -> usize {
        self.prompt.len() + self.gen.len()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.gen
    }

    /// Token visible at an absolute position; masked slots read as [`TokenId::MASK`].
    pub fn token_at(&self, position: usize) -> Result<TokenId> {
        let p = self.prompt.len();
        if position < p {
            Ok(self.prompt[position])
        } else {
            self.gen
                .get(position - p)
                .map(|s| s.token())
                .ok_or(Error::PositionOutOfRange {
                    position,
                    len: self.total_len(),
                })
        }
    }

    pub fn is_mask_at(&self, position: usize) -> bool {
        position
            .checked_sub(self.prompt.len())
            .and_then(|i| self.gen.get(i))
            .is_some_and(|s| s.is_mask())
    }

    /// Commits generation slot `index`. Committed slots are immutable.
    pub fn commit(&mut self, index: usize, token: TokenId) -> Result<()> {
        let len = self.total_len();
        let slot = self.gen.get_mut(index).ok_or(Error::PositionOutOfRange {
            position: index,
            len,
        })?;
        match slot {
            Slot::Mask => {
                *slot = Slot::Committed(token);
                Ok(())
            }
            Slot::Committed(_) => Err(Error::SlotAlreadyCommitted { index }),
        }
    }

    /// Absolute positions of a block.
    pub fn block_positions(
        &self,
        partition: &BlockPartition,
        block: usize,
    ) -> Result<Range<usize>> {
        let r = partition.range(block)?;
        let p = self.prompt.len();
        Ok(p + r.start..p + r.end)
    }

    pub fn masked_in_block(&self, partition: &BlockPartition, block: usize) -> Result<usize> {
        let r = partition.range(block)?;
        Ok(self.gen[r].iter().filter(|s| s.is_mask()).count())
    }

    /// Fraction of the block's slots still masked.
    pub fn masked_ratio(&self, partition: &BlockPartition, block: usize) -> Result<f64> {
        let masked = self.masked_in_block(partition, block)?;
        Ok(masked as f64 / partition.block_size() as f64)
    }

    pub fn region_of(
        &self,
        position: usize,
        partition: &BlockPartition,
        current_block: usize,
    ) -> Result<Region> {
        if position >= self.total_len() {
            return Err(Error::PositionOutOfRange {
                position,
                len: self.total_len(),
            });
        }
        let current = self.block_positions(partition, current_block)?;
        Ok(region_for(position, &current))
    }

    /// Generated tokens, reading masked slots as `fill`.
    pub fn generated_tokens(&self, fill: TokenId) -> Vec<TokenId> {
        self.gen
            .iter()
            .map(|s| match s {
                Slot::Mask => fill,
                Slot::Committed(t) => *t,
            })
            .collect()
    }
}

/// Same as [`SequenceState::new`].
pub fn init_sequence(prompt: Vec<TokenId>, gen_len: usize) -> Result<SequenceState> {
    SequenceState::new(prompt, gen_len)
}

pub(crate) fn region_for(position: usize, current: &Range<usize>) -> Region {
    if position < current.start {
        Region::Prefix
    } else if position < current.end {
        Region::Current
    } else {
        Region::Suffix
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt(n: usize) -> Vec<TokenId> {
        (0..n).map(|i| TokenId(3 + (i % 50) as u32)).collect()
    }

    #[test]
    fn partition_examples() {
        let p = partition_blocks(512, 32).unwrap();
        assert_eq!(p.num_blocks(), 16);
        assert_eq!(p.ranges()[0], 0..32);
        assert_eq!(p.ranges()[15], 480..512);

        assert_eq!(partition_blocks(32, 32).unwrap().num_blocks(), 1);
        assert!(matches!(
            partition_blocks(10, 32),
            Err(Error::NonDivisible { .. })
        ));
        assert!(matches!(partition_blocks(0, 4), Err(Error::ZeroLength)));
        assert!(matches!(partition_blocks(4, 0), Err(Error::ZeroLength)));
    }

    #[test]
    fn init_examples() {
        let s = init_sequence(prompt(300), 512).unwrap();
        assert_eq!(s.prompt_len(), 300);
        assert_eq!(s.gen_len(), 512);
        assert!(s.slots().iter().all(|s| s.is_mask()));

        let s = init_sequence(prompt(1), 1).unwrap();
        assert_eq!(s.slots(), &[Slot::Mask]);

        assert!(matches!(init_sequence(vec![], 8), Err(Error::EmptyPrompt)));
    }

    #[test]
    fn masked_ratio_examples() {
        let part = partition_blocks(64, 32).unwrap();
        let mut s = init_sequence(prompt(4), 64).unwrap();
        assert_eq!(s.masked_ratio(&part, 0).unwrap(), 1.0);
        for i in 0..24 {
            s.commit(i, TokenId(5)).unwrap();
        }
        assert_eq!(s.masked_ratio(&part, 0).unwrap(), 0.25);
        for i in 24..32 {
            s.commit(i, TokenId(5)).unwrap();
        }
        assert_eq!(s.masked_ratio(&part, 0).unwrap(), 0.0);
        assert!(matches!(
            s.masked_ratio(&part, 2),
            Err(Error::BlockOutOfRange { .. })
        ));
    }

    #[test]
    fn committed_slots_are_immutable() {
        let mut s = init_sequence(prompt(2), 4).unwrap();
        s.commit(1, TokenId(7)).unwrap();
        assert!(matches!(
            s.commit(1, TokenId(8)),
            Err(Error::SlotAlreadyCommitted { index: 1 })
        ));
        assert_eq!(s.token_at(3).unwrap(), TokenId(7));
    }

    #[test]
    fn region_examples() {
        let part = partition_blocks(512, 32).unwrap();
        let s = init_sequence(prompt(300), 512).unwrap();
        assert_eq!(s.region_of(299, &part, 0).unwrap(), Region::Prefix);
        assert_eq!(s.region_of(300, &part, 0).unwrap(), Region::Current);
        assert_eq!(s.region_of(340, &part, 0).unwrap(), Region::Suffix);
        assert!(matches!(
            s.region_of(812, &part, 0),
            Err(Error::PositionOutOfRange { .. })
        ));
    }
}
