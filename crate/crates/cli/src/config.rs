//! Run configuration: defaults, config file, and flag overrides.
//!
//! The config file is line-oriented `key = value` text; `#` starts a
//! comment. Unknown keys and unparseable values are rejected with the key
//! and line number. Precedence: flags > file > defaults.

use std::fmt::Write as _;
use std::path::Path;

use csap_core::cost::ReportFormat;
use csap_core::decoder::{DecoderConfig, Variant};
use csap_core::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub decoder: DecoderConfig,
    pub input_size: usize,
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub dataset_size: usize,
    pub holdout: usize,
    pub eval_every: usize,
    pub format: ReportFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            decoder: DecoderConfig::default(),
            input_size: 512,
            seed: 0,
            steps: 600,
            lr: 0.1,
            batch_size: 4,
            dataset_size: 48,
            holdout: 8,
            eval_every: 100,
            format: ReportFormat::Text,
        }
    }
}

fn parse_usize(key: &str, line: usize, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: key '{key}' expects an integer, got '{value}'")))
}

fn parse_u64(key: &str, line: usize, value: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: key '{key}' expects an integer, got '{value}'")))
}

fn parse_f64(key: &str, line: usize, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: key '{key}' expects a number, got '{value}'")))
}

impl RunConfig {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "d" => self.decoder.d = parse_usize(key, line, value)?,
            "n_heads" => self.decoder.n_heads = parse_usize(key, line, value)?,
            "r" => self.decoder.r = parse_usize(key, line, value)?,
            "s" => self.decoder.s = parse_usize(key, line, value)?,
            "ffn_expansion" => self.decoder.ffn_expansion = parse_usize(key, line, value)?,
            "num_classes" => self.decoder.num_classes = parse_usize(key, line, value)?,
            "source_stage" => self.decoder.source_stage = parse_usize(key, line, value)?,
            "variant" => {
                self.decoder.variant = value
                    .parse::<Variant>()
                    .map_err(|e| Error::Config(format!("line {line}: {e}")))?
            }
            "stage_channels" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 4 {
                    return Err(Error::Config(format!(
                        "line {line}: key 'stage_channels' expects 4 comma-separated integers"
                    )));
                }
                for (i, p) in parts.iter().enumerate() {
                    self.decoder.stage_channels[i] = parse_usize(key, line, p)?;
                }
            }
            "input_size" => self.input_size = parse_usize(key, line, value)?,
            "seed" => self.seed = parse_u64(key, line, value)?,
            "steps" => self.steps = parse_usize(key, line, value)?,
            "lr" => self.lr = parse_f64(key, line, value)?,
            "batch_size" => self.batch_size = parse_usize(key, line, value)?,
            "dataset_size" => self.dataset_size = parse_usize(key, line, value)?,
            "holdout" => self.holdout = parse_usize(key, line, value)?,
            "eval_every" => self.eval_every = parse_usize(key, line, value)?,
            "format" => {
                self.format = value
                    .parse::<ReportFormat>()
                    .map_err(|e| Error::Config(format!("line {line}: {e}")))?
            }
            other => {
                return Err(Error::Config(format!(
                    "line {line}: unknown key '{other}'"
                )))
            }
        }
        Ok(())
    }

    /// Validate cross-key constraints (divisibility and ranges).
    pub fn validate(&self) -> Result<()> {
        self.decoder.validate()?;
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::Config(format!(
                "input_size {} must be a positive multiple of 32",
                self.input_size
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Canonical serialization; `parse` of the output reproduces the config.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let d = &self.decoder;
        let _ = writeln!(out, "d = {}", d.d);
        let _ = writeln!(out, "n_heads = {}", d.n_heads);
        let _ = writeln!(out, "r = {}", d.r);
        let _ = writeln!(out, "s = {}", d.s);
        let _ = writeln!(out, "ffn_expansion = {}", d.ffn_expansion);
        let _ = writeln!(out, "num_classes = {}", d.num_classes);
        let _ = writeln!(out, "source_stage = {}", d.source_stage);
        let _ = writeln!(out, "variant = {}", d.variant);
        let _ = writeln!(
            out,
            "stage_channels = {},{},{},{}",
            d.stage_channels[0], d.stage_channels[1], d.stage_channels[2], d.stage_channels[3]
        );
        let _ = writeln!(out, "input_size = {}", self.input_size);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "steps = {}", self.steps);
        let _ = writeln!(out, "lr = {}", self.lr);
        let _ = writeln!(out, "batch_size = {}", self.batch_size);
        let _ = writeln!(out, "dataset_size = {}", self.dataset_size);
        let _ = writeln!(out, "holdout = {}", self.holdout);
        let _ = writeln!(out, "eval_every = {}", self.eval_every);
        let _ = writeln!(
            out,
            "format = {}",
            match self.format {
                ReportFormat::Text => "text",
                ReportFormat::Kv => "kv",
            }
        );
        out
    }

    /// Parse `key = value` text on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {line}: expected 'key = value', got '{stripped}'"))
            })?;
            cfg.set(key.trim(), value.trim(), line)?;
        }
        Ok(cfg)
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }
}
