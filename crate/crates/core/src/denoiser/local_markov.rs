use super::{mix64, Denoiser, Locality, Prediction, Predictions};
use crate::error::{Error, Result};
use crate::pruner::{PrefixCache, SequenceView};
use crate::sequence::TokenId;

/// Deterministic predictor with a hard locality radius.
///
/// For query `q` the neighbourhood is every view entry `p != q` with
/// `|p - q| <= radius`. Confidence is linear in the committed fraction of
/// that neighbourhood:
///
/// `conf = CONF_FLOOR + (CONF_CEIL - CONF_FLOOR) * committed / neighbours`
///
/// and is `CONF_FLOOR` for an empty neighbourhood. The token is a seeded
/// hash of the committed neighbours (relative offset and id), the masked
/// neighbour count and the final generation slot (when the view holds it),
/// mapped onto the ordinary vocabulary. The final slot is treated as always
/// visible; nothing else outside the radius is read.
#[derive(Clone, Debug)]
pub struct LocalMarkovOracle {
    radius: usize,
    vocab: usize,
    seed: u64,
}

impl LocalMarkovOracle {
    pub const CONF_FLOOR: f64 = 0.2;
    pub const CONF_CEIL: f64 = 0.99;

    pub fn new(radius: usize, vocab: usize, seed: u64) -> Result<Self> {
        if vocab < TokenId::MIN_VOCAB {
            return Err(Error::InvalidDenoiser(format!(
                "vocabulary {vocab} smaller than {}",
                TokenId::MIN_VOCAB
            )));
        }
        Ok(Self {
            radius,
            vocab,
            seed,
        })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    fn predict_one(&self, view: &SequenceView, q: usize) -> Prediction {
        let lo = view.position_ids.partition_point(|&p| p + self.radius < q);
        let hi = view
            .position_ids
            .partition_point(|&p| p <= q.saturating_add(self.radius));
        let mut h = mix64(self.seed);
        let mut committed = 0usize;
        let mut masked = 0usize;
        for i in lo..hi {
            let p = view.position_ids[i];
            if p == q {
                continue;
            }
            let t = view.tokens[i];
            if t == TokenId::MASK {
                masked += 1;
            } else {
                committed += 1;
                let offset = p as i64 - q as i64;
                h = mix64(h ^ (offset as u64).rotate_left(32) ^ u64::from(t.0));
            }
        }
        h = mix64(h ^ masked as u64);
        let trailing = view.prompt_len + view.gen_len - 1;
        if let Some(t) = view.token_at(trailing) {
            h = mix64(h ^ ((trailing as u64) << 20) ^ u64::from(t.0));
        }
        let total = committed + masked;
        let frac = if total == 0 {
            0.0
        } else {
            committed as f64 / total as f64
        };
        let ordinary = (self.vocab as u64) - u64::from(TokenId::FIRST_ORDINARY);
        Prediction {
            position: q,
            token: TokenId(TokenId::FIRST_ORDINARY + (h % ordinary) as u32),
            confidence: Self::CONF_FLOOR + (Self::CONF_CEIL - Self::CONF_FLOOR) * frac,
        }
    }
}

impl Denoiser for LocalMarkovOracle {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn locality(&self) -> Locality {
        Locality::Radius(self.radius)
    }

    fn predict(
        &self,
        view: &SequenceView,
        queries: &[usize],
        _cache: &mut PrefixCache,
    ) -> Result<Predictions> {
        let entries = queries
            .iter()
            .map(|&q| {
                view.index_of(q)
                    .ok_or(Error::QueryNotInView(q))
                    .map(|_| self.predict_one(view, q))
            })
            .collect::<Result<_>>()?;
        Ok(Predictions {
            entries,
            attention: None,
        })
    }
}
