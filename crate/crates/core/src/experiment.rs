//! Configuration-driven experiment runner behind the `streamdec` binary.
//!
//! A run writes a bundle directory:
//!
//! ```text
//! manifest.json        engine version, config hash, seed, creation time, config
//! report.json          throughput report pooled over repetitions
//! trace_000.jsonl      one step record per line
//! ledger_000.json      cost ledger
//! report_000.json      throughput report
//! tokens_000.json      prompt and generated tokens
//! ```
//!
//! Sweeps write one such bundle per point under `sweep_NNN_*` plus a
//! combined `sweep.csv`. Only the manifest carries a timestamp.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::{Denoiser, LocalMarkovOracle, OracleScript, ScriptedOracle, ToyTransformer};
use crate::error::{Error, Result};
use crate::metrics::{
    read_trace_jsonl, speedup, summarize_attention, summarize_confidence, throughput_proxy,
    write_trace_jsonl, CostLedger, ThroughputReport,
};
use crate::scheduler::{decode, DecodeConfig, DecodeResult, SchedulerKind};
use crate::sequence::TokenId;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserSpec {
    Scripted {
        script: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vocab: Option<usize>,
    },
    LocalMarkov {
        radius: usize,
        vocab: usize,
    },
    ToyTransformer {
        embed_dim: usize,
        vocab: usize,
    },
}

impl DenoiserSpec {
    /// Builds the denoiser for one repetition.
    pub fn build(&self, seed: u64) -> Result<Box<dyn Denoiser>> {
        Ok(match self {
            DenoiserSpec::Scripted { script, vocab } => {
                let s = OracleScript::load(script)?;
                Box::new(match vocab {
                    Some(v) => ScriptedOracle::with_vocab(&s, *v)?,
                    None => ScriptedOracle::new(&s)?,
                })
            }
            DenoiserSpec::LocalMarkov { radius, vocab } => {
                Box::new(LocalMarkovOracle::new(*radius, *vocab, seed)?)
            }
            DenoiserSpec::ToyTransformer { embed_dim, vocab } => {
                Box::new(ToyTransformer::new(*embed_dim, *vocab, seed)?)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum PromptSpec {
    Synthetic {
        length: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    File {
        file: PathBuf,
    },
}

impl PromptSpec {
    /// Prompt for repetition `rep`. Synthetic prompts are uniform over the
    /// ordinary vocabulary.
    pub fn tokens(&self, vocab: usize, master_seed: u64, rep: u64) -> Result<Vec<TokenId>> {
        match self {
            PromptSpec::Synthetic { length, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    seed.unwrap_or(master_seed).wrapping_add(rep) ^ 0x5EE_D0F9_A0A7,
                );
                Ok((0..*length)
                    .map(|_| TokenId(rng.random_range(TokenId::FIRST_ORDINARY..vocab as u32)))
                    .collect())
            }
            PromptSpec::File { file } => read_token_file(file),
        }
    }
}

/// Reads a JSON array of ids or whitespace-separated ids.
pub fn read_token_file(path: &Path) -> Result<Vec<TokenId>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let ids: Vec<u32> = serde_json::from_str(trimmed)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        return Ok(ids.into_iter().map(TokenId).collect());
    }
    text.split_whitespace()
        .map(|w| {
            w.parse::<u32>()
                .map(TokenId)
                .map_err(|e| Error::config("prompt.file", format!("bad token `{w}`: {e}")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_size: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_len: Option<Vec<usize>>,
}

impl Sweep {
    /// Cartesian product of the listed values, applied over `base`.
    pub fn points(&self, base: &DecodeConfig) -> Vec<DecodeConfig> {
        let mut points = vec![base.clone()];
        fn expand<T: Clone>(
            points: Vec<DecodeConfig>,
            values: &Option<Vec<T>>,
            set: impl Fn(&mut DecodeConfig, T),
        ) -> Vec<DecodeConfig> {
            match values {
                None => points,
                Some(vs) => points
                    .iter()
                    .flat_map(|p| {
                        vs.iter().map(|v| {
                            let mut c = p.clone();
                            set(&mut c, v.clone());
                            c
                        })
                    })
                    .collect(),
            }
        }
        points = expand(points, &self.gen_len, |c, v| c.gen_len = v);
        points = expand(points, &self.block_size, |c, v| c.block_size = v);
        points = expand(points, &self.window, |c, v| c.window = v);
        expand(points, &self.alpha, |c, v| c.alpha = v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub decode: DecodeConfig,
    pub denoiser: DenoiserSpec,
    pub prompt: PromptSpec,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
}

fn one() -> usize {
    1
}

impl Default for ExperimentConfig {
    /// Streaming decode with `tau0 = 0.9`, `alpha = 0.3`, 32-token blocks,
    /// 512-token generation and a 4-block window over the toy transformer.
    fn default() -> Self {
        Self {
            decode: DecodeConfig::default(),
            denoiser: DenoiserSpec::ToyTransformer {
                embed_dim: 32,
                vocab: 64,
            },
            prompt: PromptSpec::Synthetic {
                length: 64,
                seed: None,
            },
            repetitions: 1,
            output_dir: None,
            sweep: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(json_field(&e), e.to_string()))
    }

    /// Loads a config file, or the config embedded in a run manifest.
    /// Relative script and prompt paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::config("<root>", e.to_string()))?;
        let mut cfg = if value.get("manifest_version").is_some() {
            Manifest::from_value(value)?.config
        } else {
            Self::from_json(&text)?
        };
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let DenoiserSpec::Scripted { script, .. } = &mut self.denoiser {
            fix(script);
        }
        if let PromptSpec::File { file } = &mut self.prompt {
            fix(file);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.decode.validate()?;
        if self.repetitions == 0 {
            return Err(Error::config("repetitions", "must be at least 1"));
        }
        match &self.denoiser {
            DenoiserSpec::ToyTransformer { embed_dim, vocab } => {
                if *embed_dim == 0 || embed_dim % 2 != 0 {
                    return Err(Error::config(
                        "denoiser.embed_dim",
                        "must be even and positive",
                    ));
                }
                check_vocab(*vocab)?;
            }
            DenoiserSpec::LocalMarkov { vocab, .. } => check_vocab(*vocab)?,
            DenoiserSpec::Scripted { vocab, .. } => {
                if let Some(v) = vocab {
                    check_vocab(*v)?;
                }
            }
        }
        if let PromptSpec::Synthetic { length, .. } = &self.prompt {
            if *length == 0 {
                return Err(Error::config("prompt.length", "must be at least 1"));
            }
        }
        if let Some(sweep) = &self.sweep {
            let lists = [
                ("sweep.window", sweep.window.as_ref().map(Vec::len)),
                ("sweep.alpha", sweep.alpha.as_ref().map(Vec::len)),
                ("sweep.block_size", sweep.block_size.as_ref().map(Vec::len)),
                ("sweep.gen_len", sweep.gen_len.as_ref().map(Vec::len)),
            ];
            if lists.iter().all(|(_, l)| l.is_none()) {
                return Err(Error::config("sweep", "no sweep axis given"));
            }
            if let Some((name, _)) = lists.iter().find(|(_, l)| *l == Some(0)) {
                return Err(Error::config(*name, "must not be empty"));
            }
            for p in sweep.points(&self.decode) {
                p.validate().map_err(|e| match e {
                    Error::ConfigInvalid { field, reason } => Error::ConfigInvalid {
                        field: format!("sweep.{field}"),
                        reason,
                    },
                    other => other,
                })?;
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn check_vocab(v: usize) -> Result<()> {
    if v < TokenId::MIN_VOCAB {
        return Err(Error::config(
            "denoiser.vocab",
            format!("must be at least {}", TokenId::MIN_VOCAB),
        ));
    }
    Ok(())
}

/// Best-effort field name from a serde error message.
fn json_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    for marker in ["unknown field `", "missing field `", "unknown variant `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    "<root>".to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub manifest_version: u32,
    pub engine_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub scheduler: SchedulerKind,
    pub repetitions: usize,
    pub created_unix: u64,
    pub config: ExperimentConfig,
}

impl Manifest {
    fn from_value(value: serde_json::Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::config(json_field(&e), e.to_string()))
    }

    pub fn load(bundle: &Path) -> Result<Self> {
        let path = bundle.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

#[derive(Clone, Debug, Serialize)]
struct TokenDump {
    prompt: Vec<u32>,
    output: Vec<u32>,
    exited_early_at: Option<usize>,
}

/// Outcome of one bundle written by [`run_experiment`].
#[derive(Clone, Debug)]
pub struct BundleSummary {
    pub dir: PathBuf,
    pub decode: DecodeConfig,
    pub report: ThroughputReport,
    pub trace_files: Vec<PathBuf>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs one repetition of `cfg` with its seeds derived from `rep`.
pub fn run_repetition(cfg: &ExperimentConfig, rep: usize) -> Result<(Vec<TokenId>, DecodeResult)> {
    let seed = cfg.decode.seed.wrapping_add(rep as u64);
    let denoiser = cfg.denoiser.build(seed)?;
    let prompt = cfg
        .prompt
        .tokens(denoiser.vocab_size(), cfg.decode.seed, rep as u64)?;
    let result = decode(&prompt, denoiser.as_ref(), &cfg.decode)?;
    Ok((prompt, result))
}

fn write_bundle(cfg: &ExperimentConfig, dir: &Path) -> Result<BundleSummary> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let runs: Vec<(Vec<TokenId>, DecodeResult)> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(cfg, rep))
        .collect::<Result<_>>()?;

    let mut reports = Vec::with_capacity(runs.len());
    let mut trace_files = Vec::with_capacity(runs.len());
    for (rep, (prompt, result)) in runs.iter().enumerate() {
        let trace_path = dir.join(format!("trace_{rep:03}.jsonl"));
        let file = fs::File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
        let mut w = std::io::BufWriter::new(file);
        write_trace_jsonl(&mut w, &result.trace).map_err(|e| Error::io(&trace_path, e))?;
        std::io::Write::flush(&mut w).map_err(|e| Error::io(&trace_path, e))?;
        trace_files.push(trace_path);

        write_json(&dir.join(format!("ledger_{rep:03}.json")), &result.ledger)?;
        let report = throughput_proxy(result)?;
        write_json(&dir.join(format!("report_{rep:03}.json")), &report)?;
        write_json(
            &dir.join(format!("tokens_{rep:03}.json")),
            &TokenDump {
                prompt: prompt.iter().map(|t| t.0).collect(),
                output: result.tokens.iter().map(|t| t.0).collect(),
                exited_early_at: result.exited_early_at,
            },
        )?;
        reports.push(report);
    }
    let report = ThroughputReport::pooled(&reports)?;
    write_json(&dir.join("report.json"), &report)?;

    let config = ExperimentConfig {
        sweep: None,
        output_dir: None,
        ..cfg.clone()
    };
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        engine_version: crate::VERSION.to_string(),
        config_hash: config.hash(),
        seed: cfg.decode.seed,
        scheduler: cfg.decode.scheduler,
        repetitions: cfg.repetitions,
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(BundleSummary {
        dir: dir.to_path_buf(),
        decode: cfg.decode.clone(),
        report,
        trace_files,
    })
}

/// Runs `cfg` into `out`. Returns one summary per bundle written (one per
/// sweep point, or a single one without a sweep).
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<BundleSummary>> {
    cfg.validate()?;
    let Some(sweep) = &cfg.sweep else {
        return Ok(vec![write_bundle(cfg, out)?]);
    };
    let points = sweep.points(&cfg.decode);
    let mut summaries = Vec::with_capacity(points.len());
    for (i, decode) in points.into_iter().enumerate() {
        let name = format!(
            "sweep_{i:03}_w{}_a{}_k{}_l{}",
            decode.window, decode.alpha, decode.block_size, decode.gen_len
        );
        let point = ExperimentConfig {
            decode,
            sweep: None,
            ..cfg.clone()
        };
        summaries.push(write_bundle(&point, &out.join(name))?);
    }
    let mut csv = String::from(
        "bundle,window,alpha,block_size,gen_len,non_eos_tokens,forward_calls,query_tokens,attention_pairs,proxy_tps_q,proxy_tps_a\n",
    );
    for s in &summaries {
        let r = &s.report;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            s.dir.file_name().unwrap_or_default().to_string_lossy(),
            s.decode.window,
            s.decode.alpha,
            s.decode.block_size,
            s.decode.gen_len,
            r.non_eos_tokens,
            r.forward_calls,
            r.query_tokens,
            r.attention_pairs,
            r.proxy_tps_q,
            r.proxy_tps_a
        ));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("sweep.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(summaries)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub bundle: String,
    pub scheduler: SchedulerKind,
    pub non_eos_tokens: u64,
    pub query_tokens: u64,
    pub attention_pairs: u64,
    pub speedup_query: f64,
    pub speedup_attention: f64,
    pub per_step_query_reduction: f64,
    pub speedup_wall_clock: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "bundle,scheduler,non_eos_tokens,query_tokens,attention_pairs,speedup_query,speedup_attention,per_step_query_reduction,speedup_wall_clock\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.bundle,
                r.scheduler,
                r.non_eos_tokens,
                r.query_tokens,
                r.attention_pairs,
                r.speedup_query,
                r.speedup_attention,
                r.per_step_query_reduction,
                r.speedup_wall_clock
                    .map(|v| v.to_string())
                    .unwrap_or_default()
            ));
        }
        out
    }

    /// Column-aligned text table.
    pub fn to_table(&self) -> String {
        let header = [
            "bundle",
            "scheduler",
            "non_eos",
            "query_tokens",
            "attn_pairs",
            "speedup_q",
            "speedup_a",
            "step_q_red",
            "wall_clock",
        ];
        let cells: Vec<[String; 9]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.bundle.clone(),
                    r.scheduler.to_string(),
                    r.non_eos_tokens.to_string(),
                    r.query_tokens.to_string(),
                    r.attention_pairs.to_string(),
                    format!("{:.3}", r.speedup_query),
                    format!("{:.3}", r.speedup_attention),
                    format!("{:.3}", r.per_step_query_reduction),
                    r.speedup_wall_clock
                        .map(|v| format!("{v:.2}"))
                        .unwrap_or_else(|| "-".into()),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| {
                cells
                    .iter()
                    .map(|c| c[i].len())
                    .chain([header[i].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |row: Vec<&str>| {
            row.iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    if i < 2 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = format!("baseline: {}\n", self.baseline);
        out.push_str(&line(header.to_vec()));
        out.push('\n');
        for c in &cells {
            out.push_str(&line(c.iter().map(String::as_str).collect()));
            out.push('\n');
        }
        out
    }
}

fn bundle_name(p: &Path) -> String {
    p.canonicalize()
        .unwrap_or_else(|_| p.to_path_buf())
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

fn load_report(bundle: &Path) -> Result<ThroughputReport> {
    let path = bundle.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

fn check_comparable(a: &Manifest, b: &Manifest, name: &str) -> Result<()> {
    let (x, y) = (&a.config, &b.config);
    let mismatch = if x.decode.gen_len != y.decode.gen_len {
        Some("gen_len")
    } else if x.decode.block_size != y.decode.block_size {
        Some("block_size")
    } else if x.denoiser != y.denoiser {
        Some("denoiser")
    } else if x.prompt != y.prompt {
        Some("prompt")
    } else if x.decode.seed != y.decode.seed {
        Some("seed")
    } else if x.repetitions != y.repetitions {
        Some("repetitions")
    } else {
        None
    };
    match mismatch {
        Some(field) => Err(Error::IncomparableBundles(format!(
            "{name} differs from the baseline in `{field}`"
        ))),
        None => Ok(()),
    }
}

/// Compares every bundle's pooled throughput against `baseline`.
pub fn compare_runs(bundles: &[PathBuf], baseline: &Path) -> Result<Comparison> {
    let base_manifest = Manifest::load(baseline)?;
    let base_report = load_report(baseline)?;
    let mut rows = Vec::with_capacity(bundles.len());
    for b in bundles {
        let name = bundle_name(b);
        let m = Manifest::load(b)?;
        check_comparable(&m, &base_manifest, &name)?;
        let r = load_report(b)?;
        let s = speedup(&r, &base_report)?;
        rows.push(ComparisonRow {
            bundle: name,
            scheduler: m.scheduler,
            non_eos_tokens: r.non_eos_tokens,
            query_tokens: r.query_tokens,
            attention_pairs: r.attention_pairs,
            speedup_query: s.query,
            speedup_attention: s.attention,
            per_step_query_reduction: s.per_step_query_reduction,
            speedup_wall_clock: s.wall_clock,
        });
    }
    Ok(Comparison {
        baseline: bundle_name(baseline),
        rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnalysisKind {
    Confidence,
    Attention,
}

impl std::str::FromStr for AnalysisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "confidence" => Ok(AnalysisKind::Confidence),
            "attention" => Ok(AnalysisKind::Attention),
            other => Err(Error::config("kind", format!("unknown analysis `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Analysis {
    pub csv_path: PathBuf,
    /// Human-readable verdict lines.
    pub verdicts: Vec<String>,
}

/// Trace files of a bundle, in repetition order.
pub fn trace_files(bundle: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(bundle)
        .map_err(|e| Error::io(bundle, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("trace_") && n.ends_with(".jsonl"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyBundle(bundle.to_path_buf()));
    }
    Ok(files)
}

/// Summarizes every trace in `bundle` and writes the summary CSV to `out`.
pub fn analyze_traces(bundle: &Path, kind: AnalysisKind, out: &Path) -> Result<Analysis> {
    let mut records = Vec::new();
    for f in trace_files(bundle)? {
        let file = fs::File::open(&f).map_err(|e| Error::io(&f, e))?;
        records.extend(read_trace_jsonl(BufReader::new(file))?);
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (csv_path, csv, verdicts) = match kind {
        AnalysisKind::Confidence => {
            let s = summarize_confidence(&records)?;
            let verdicts = s
                .monotone_blocks()
                .into_iter()
                .map(|(b, ok)| {
                    format!(
                        "block {b}: mean confidence {}",
                        if ok { "non-decreasing" } else { "NOT monotone" }
                    )
                })
                .collect();
            (out.join("confidence_summary.csv"), s.to_csv(), verdicts)
        }
        AnalysisKind::Attention => {
            let s = summarize_attention(&records)?;
            let worst = s
                .rows
                .iter()
                .map(|r| (r.prefix + r.current + r.suffix - 1.0).abs())
                .fold(0.0, f64::max);
            let verdicts = vec![format!(
                "{} rows, max |prefix + current + suffix - 1| = {worst:.3e}",
                s.rows.len()
            )];
            (out.join("attention_summary.csv"), s.to_csv(), verdicts)
        }
    };
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    Ok(Analysis { csv_path, verdicts })
}

/// Process exit status for an error: 2 config, 3 I/O, 4 incomparable
/// inputs, 1 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ConfigInvalid { .. }
        | Error::UnknownKind(_)
        | Error::MalformedScript(_)
        | Error::OddEmbedDim(_)
        | Error::InvalidDenoiser(_)
        | Error::NonDivisible { .. }
        | Error::ZeroLength
        | Error::EmptyPrompt
        | Error::VocabMismatch { .. } => 2,
        Error::Io { .. } | Error::Json { .. } | Error::EmptyBundle(_) => 3,
        Error::IncomparableBundles(_) => 4,
        _ => 1,
    }
}

/// Merged ledger over every repetition of a bundle.
pub fn load_merged_ledger(bundle: &Path) -> Result<CostLedger> {
    let mut merged = CostLedger::default();
    let mut rep = 0;
    loop {
        let path = bundle.join(format!("ledger_{rep:03}.json"));
        if !path.exists() {
            break;
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let l: CostLedger =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        merged.merge(&l);
        rep += 1;
    }
    Ok(merged)
}
