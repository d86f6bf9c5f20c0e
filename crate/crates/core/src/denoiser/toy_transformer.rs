use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Denoiser, Locality, Prediction, Predictions, RegionMass};
use crate::error::{Error, Result};
use crate::pruner::{KvRows, PrefixCache, SequenceView};
use crate::sequence::TokenId;

const ROPE_BASE: f64 = 10_000.0;

/// Multiplier on the output logits (cosine similarities).
const LOGIT_SCALE: f64 = 14.0;
/// Multiplier on the attention scores.
const ATTN_SCALE: f64 = 3.0;

/// One bidirectional attention layer with seeded fixed weights.
///
/// Queries and keys are rotated by the absolute position ids of the view,
/// so a pruned view carries exactly the positional information of the
/// entries it keeps. `MASK` entries contribute keys but zero values. The
/// output distribution is a softmax over the cosine between the attention
/// output and each token's value row, so confidence tracks how sharply a
/// position attends to committed context. `MASK` and `PAD` are never
/// predicted.
///
/// Key/value rows depend only on token and position, so prefix rows stored
/// in a [`PrefixCache`] are exact.
#[derive(Clone, Debug)]
pub struct ToyTransformer {
    dim: usize,
    vocab: usize,
    embed: Vec<f64>,
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    inv_freq: Vec<f64>,
    // unit-norm value projection of every token, the output table
    unembed: Vec<f64>,
    logit_scale: f64,
    attn_scale: f64,
}

impl ToyTransformer {
    pub fn new(embed_dim: usize, vocab: usize, seed: u64) -> Result<Self> {
        if embed_dim == 0 || !embed_dim.is_multiple_of(2) {
            return Err(Error::OddEmbedDim(embed_dim));
        }
        if vocab < TokenId::MIN_VOCAB {
            return Err(Error::InvalidDenoiser(format!(
                "vocabulary {vocab} smaller than {}",
                TokenId::MIN_VOCAB
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_scale = 1.0 / (embed_dim as f64).sqrt();
        let mut matrix = |n: usize, scale: f64| -> Vec<f64> {
            (0..n)
                .map(|_| rng.random_range(-1.0..1.0) * scale)
                .collect()
        };
        let embed = matrix(vocab * embed_dim, 3f64.sqrt());
        let wq = matrix(embed_dim * embed_dim, w_scale * 3f64.sqrt());
        let wk = matrix(embed_dim * embed_dim, w_scale * 3f64.sqrt());
        let wv = matrix(embed_dim * embed_dim, w_scale * 3f64.sqrt());
        let inv_freq = (0..embed_dim / 2)
            .map(|i| ROPE_BASE.powf(-2.0 * i as f64 / embed_dim as f64))
            .collect();
        let mut m = Self {
            dim: embed_dim,
            vocab,
            embed,
            wq,
            wk,
            wv,
            inv_freq,
            unembed: vec![0.0; vocab * embed_dim],
            logit_scale: LOGIT_SCALE,
            attn_scale: ATTN_SCALE,
        };
        let mut u = vec![0.0; embed_dim];
        for t in 0..vocab {
            m.project(&m.wv, m.embedding(TokenId(t as u32)), &mut u);
            let norm = u
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            for (o, x) in m.unembed[t * embed_dim..(t + 1) * embed_dim]
                .iter_mut()
                .zip(&u)
            {
                *o = x / norm;
            }
        }
        Ok(m)
    }

    pub fn with_logit_scale(mut self, scale: f64) -> Self {
        self.logit_scale = scale;
        self
    }

    pub fn with_attention_scale(mut self, scale: f64) -> Self {
        self.attn_scale = scale;
        self
    }

    pub fn embed_dim(&self) -> usize {
        self.dim
    }

    fn embedding(&self, t: TokenId) -> &[f64] {
        let i = t.0 as usize * self.dim;
        &self.embed[i..i + self.dim]
    }

    fn project(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = w[r * self.dim..(r + 1) * self.dim]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum();
        }
    }

    fn rotate(&self, v: &mut [f64], position: usize) {
        for (i, f) in self.inv_freq.iter().enumerate() {
            let (sin, cos) = (position as f64 * f).sin_cos();
            let (a, b) = (v[2 * i], v[2 * i + 1]);
            v[2 * i] = a * cos - b * sin;
            v[2 * i + 1] = a * sin + b * cos;
        }
    }

    fn key_value(&self, token: TokenId, position: usize, key: &mut [f64], value: &mut [f64]) {
        let x = self.embedding(token);
        self.project(&self.wk, x, key);
        self.rotate(key, position);
        if token == TokenId::MASK {
            value.fill(0.0);
        } else {
            self.project(&self.wv, x, value);
        }
    }

    /// Rotated key and value rows for every view entry, reusing cached
    /// prefix rows when the cache holds them for this view's block.
    fn kv_rows(&self, view: &SequenceView, cache: &mut PrefixCache) -> KvRows {
        let d = self.dim;
        let n = view.len();
        let mut keys = vec![0.0; n * d];
        let mut values = vec![0.0; n * d];
        let prefix = view.prefix_len();
        let start = match cache.rows_for(view) {
            Some(rows) => {
                keys[..prefix * d].copy_from_slice(&rows.keys);
                values[..prefix * d].copy_from_slice(&rows.values);
                prefix
            }
            None => 0,
        };
        for i in start..n {
            let (k, v) = (
                &mut keys[i * d..(i + 1) * d],
                &mut values[i * d..(i + 1) * d],
            );
            self.key_value(view.tokens[i], view.position_ids[i], k, v);
        }
        if start == 0 && cache.is_enabled() {
            cache.store_rows(
                view,
                KvRows {
                    len: prefix,
                    dim: d,
                    keys: keys[..prefix * d].to_vec(),
                    values: values[..prefix * d].to_vec(),
                },
            );
        }
        KvRows {
            len: n,
            dim: d,
            keys,
            values,
        }
    }

    fn attend(&self, view: &SequenceView, rows: &KvRows, idx: usize) -> Vec<f64> {
        let d = self.dim;
        let mut q = vec![0.0; d];
        self.project(&self.wq, self.embedding(view.tokens[idx]), &mut q);
        self.rotate(&mut q, view.position_ids[idx]);
        let scale = self.attn_scale / (d as f64).sqrt();
        let scores: Vec<f64> = rows
            .keys
            .chunks_exact(d)
            .map(|k| k.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() * scale)
            .collect();
        softmax(&scores)
    }

    /// Attention distribution of the entry at `position` over all view keys.
    pub fn attention_weights(&self, view: &SequenceView, position: usize) -> Result<Vec<f64>> {
        let idx = view
            .index_of(position)
            .ok_or(Error::QueryNotInView(position))?;
        let rows = self.kv_rows(view, &mut PrefixCache::disabled());
        Ok(self.attend(view, &rows, idx))
    }

    fn predict_one(
        &self,
        view: &SequenceView,
        rows: &KvRows,
        q: usize,
    ) -> (Prediction, RegionMass) {
        let d = self.dim;
        let idx = view.index_of(q).expect("query checked against view");
        let weights = self.attend(view, rows, idx);
        let mut h = vec![0.0; d];
        let mut mass = [0.0; 3];
        for (i, (a, v)) in weights.iter().zip(rows.values.chunks_exact(d)).enumerate() {
            for (hj, vj) in h.iter_mut().zip(v) {
                *hj += a * vj;
            }
            mass[view.region_of(view.position_ids[i]).index()] += a;
        }
        let norm = h
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        let scale = self.logit_scale / norm;
        let logits: Vec<f64> = self
            .unembed
            .chunks_exact(d)
            .enumerate()
            .map(|(t, u)| {
                let tok = TokenId(t as u32);
                if tok == TokenId::MASK || tok == TokenId::PAD {
                    f64::NEG_INFINITY
                } else {
                    u.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() * scale
                }
            })
            .collect();
        let probs = softmax(&logits);
        let (best, conf) = probs
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, &p)| {
                    if p > acc.1 {
                        (i, p)
                    } else {
                        acc
                    }
                },
            );
        (
            Prediction {
                position: q,
                token: TokenId(best as u32),
                confidence: conf,
            },
            mass,
        )
    }
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Denoiser for ToyTransformer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn locality(&self) -> Locality {
        Locality::Unbounded
    }

    fn predict(
        &self,
        view: &SequenceView,
        queries: &[usize],
        cache: &mut PrefixCache,
    ) -> Result<Predictions> {
        if let Some(&q) = queries.iter().find(|&&q| view.index_of(q).is_none()) {
            return Err(Error::QueryNotInView(q));
        }
        let rows = self.kv_rows(view, cache);
        let (entries, attention) = queries
            .iter()
            .map(|&q| self.predict_one(view, &rows, q))
            .unzip();
        Ok(Predictions {
            entries,
            attention: Some(attention),
        })
    }
}
