use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Denoiser, Locality, Prediction, Predictions};
use crate::error::{Error, Result};
use crate::pruner::{PrefixCache, SequenceView};
use crate::sequence::TokenId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub local_pos: usize,
    pub token: u32,
    pub conf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    pub block: usize,
    pub step: usize,
    pub entries: Vec<ScriptEntry>,
}

/// Scripted `(token, confidence)` values keyed by block, step and
/// block-local position. JSON form: `{"steps": [{"block", "step", "entries": [...]}]}`.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleScript {
    pub steps: Vec<ScriptStep>,
}

impl OracleScript {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::MalformedScript(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Adds (or extends) the entry list for `(block, step)`.
    pub fn push(&mut self, block: usize, step: usize, local_pos: usize, token: u32, conf: f64) {
        let entry = ScriptEntry {
            local_pos,
            token,
            conf,
        };
        match self
            .steps
            .iter_mut()
            .find(|s| s.block == block && s.step == step)
        {
            Some(s) => s.entries.push(entry),
            None => self.steps.push(ScriptStep {
                block,
                step,
                entries: vec![entry],
            }),
        }
    }

    /// Script that answers `(token, conf(block, step, local_pos))` for every
    /// position of every step up to `block_size` steps per block.
    pub fn uniform(
        num_blocks: usize,
        block_size: usize,
        mut f: impl FnMut(usize, usize, usize) -> (u32, f64),
    ) -> Self {
        let steps = (0..num_blocks)
            .flat_map(|b| (0..block_size).map(move |t| (b, t)))
            .map(|(block, step)| ScriptStep {
                block,
                step,
                entries: (0..block_size)
                    .map(|local_pos| {
                        let (token, conf) = f(block, step, local_pos);
                        ScriptEntry {
                            local_pos,
                            token,
                            conf,
                        }
                    })
                    .collect(),
            })
            .collect();
        Self { steps }
    }
}

/// Replays an [`OracleScript`] for the masked positions of the current
/// block, ignoring view contents. Committed current-block positions echo
/// their token at confidence 1; other queried positions answer `PAD` at
/// confidence 0.
#[derive(Clone, Debug)]
pub struct ScriptedOracle {
    vocab: usize,
    table: HashMap<(usize, usize, usize), (TokenId, f64)>,
}

impl ScriptedOracle {
    pub fn new(script: &OracleScript) -> Result<Self> {
        let max_token = script
            .steps
            .iter()
            .flat_map(|s| s.entries.iter().map(|e| e.token as usize))
            .max()
            .unwrap_or(0);
        Self::with_vocab(script, (max_token + 1).max(TokenId::MIN_VOCAB))
    }

    pub fn with_vocab(script: &OracleScript, vocab: usize) -> Result<Self> {
        if vocab < TokenId::MIN_VOCAB {
            return Err(Error::MalformedScript(format!(
                "vocabulary {vocab} smaller than {}",
                TokenId::MIN_VOCAB
            )));
        }
        let mut table = HashMap::new();
        for s in &script.steps {
            for e in &s.entries {
                if !(0.0..=1.0).contains(&e.conf) {
                    return Err(Error::MalformedScript(format!(
                        "confidence {} at block {} step {} pos {} outside [0, 1]",
                        e.conf, s.block, s.step, e.local_pos
                    )));
                }
                if e.token == TokenId::MASK.0 || e.token as usize >= vocab {
                    return Err(Error::MalformedScript(format!(
                        "token {} at block {} step {} pos {} is not a valid output",
                        e.token, s.block, s.step, e.local_pos
                    )));
                }
                let key = (s.block, s.step, e.local_pos);
                if table.insert(key, (TokenId(e.token), e.conf)).is_some() {
                    return Err(Error::MalformedScript(format!(
                        "duplicate entry for block {} step {} pos {}",
                        s.block, s.step, e.local_pos
                    )));
                }
            }
        }
        Ok(Self { vocab, table })
    }
}

impl Denoiser for ScriptedOracle {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn locality(&self) -> Locality {
        Locality::Radius(0)
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
                let tok = view.token_at(q).ok_or(Error::QueryNotInView(q))?;
                let (token, confidence) = if !view.current.contains(&q) {
                    (TokenId::PAD, 0.0)
                } else if tok != TokenId::MASK {
                    (tok, 1.0)
                } else {
                    let local = q - view.current.start;
                    *self
                        .table
                        .get(&(view.block, view.step, local))
                        .ok_or_else(|| {
                            Error::MalformedScript(format!(
                                "no entry for block {} step {} pos {local}",
                                view.block, view.step
                            ))
                        })?
                };
                Ok(Prediction {
                    position: q,
                    token,
                    confidence,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Predictions {
            entries,
            attention: None,
        })
    }
}
