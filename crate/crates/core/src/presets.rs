//! Published per-benchmark decode settings, usable as `run --preset <name>`.
//!
//! Window sizes are listed in tokens as published; [`Preset::decode`]
//! converts them to whole blocks.

use crate::scheduler::DecodeConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preset {
    pub model: &'static str,
    pub benchmark: &'static str,
    pub gen_len: usize,
    pub window_tokens: usize,
    pub tau0: f64,
    pub alpha: f64,
    pub block_size: usize,
}

const fn row(
    model: &'static str,
    benchmark: &'static str,
    gen_len: usize,
    window_tokens: usize,
    alpha: f64,
) -> Preset {
    Preset {
        model,
        benchmark,
        gen_len,
        window_tokens,
        tau0: 0.9,
        alpha,
        block_size: 32,
    }
}

pub const PRESETS: &[Preset] = &[
    row("dream", "humaneval", 256, 192, 0.7),
    row("dream", "humaneval", 512, 128, 0.4),
    row("dream", "gsm8k", 256, 32, 0.3),
    row("dream", "gsm8k", 512, 32, 0.3),
    row("dream", "mbpp", 256, 192, 0.3),
    row("dream", "mbpp", 512, 192, 0.6),
    row("dream", "math", 256, 32, 0.1),
    row("dream", "math", 512, 32, 0.3),
    row("llada", "humaneval", 256, 192, 0.3),
    row("llada", "humaneval", 512, 256, 0.4),
    row("llada", "gsm8k", 256, 96, 0.3),
    row("llada", "gsm8k", 512, 96, 0.3),
    row("llada", "mbpp", 256, 32, 0.3),
    row("llada", "mbpp", 512, 32, 0.3),
    row("llada", "math", 256, 128, 0.3),
    row("llada", "math", 512, 256, 0.2),
    row("llada-1.5", "humaneval", 256, 96, 0.3),
    row("llada-1.5", "humaneval", 512, 96, 0.4),
    row("llada-1.5", "gsm8k", 256, 96, 0.4),
    row("llada-1.5", "gsm8k", 512, 128, 0.6),
    row("llada-1.5", "mbpp", 256, 96, 0.3),
    row("llada-1.5", "mbpp", 512, 96, 0.3),
    row("llada-1.5", "math", 256, 96, 0.4),
    row("llada-1.5", "math", 512, 192, 0.3),
];

impl Preset {
    /// `<model>-<benchmark>-<gen_len>`, e.g. `llada-gsm8k-512`.
    pub fn name(&self) -> String {
        format!("{}-{}-{}", self.model, self.benchmark, self.gen_len)
    }

    pub fn decode(&self) -> DecodeConfig {
        DecodeConfig {
            gen_len: self.gen_len,
            block_size: self.block_size,
            window: self.window_tokens / self.block_size,
            tau0: self.tau0,
            alpha: self.alpha,
            ..DecodeConfig::default()
        }
    }
}

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name() == name)
}
