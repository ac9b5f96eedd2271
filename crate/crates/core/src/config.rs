//! Run configuration: flat `key = value` text with `#` comments.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grl::{FusionMode, JointMode, MaskMode};
use crate::model::{GrlSettings, ScoreRows};
use crate::scorers::{ConvEConfig, ModelKind};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train_path: PathBuf,
    pub valid_path: PathBuf,
    pub test_path: PathBuf,
    pub model: ModelKind,
    pub grl_enabled: bool,
    pub joint_mode: JointMode,
    pub fusion_mode: FusionMode,
    pub mask_mode: MaskMode,
    pub lambda: f64,
    pub dim: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub label_smoothing: f64,
    pub score_rows: ScoreRows,
    pub seed: u64,
    pub many_fraction: f64,
    pub conve_height: usize,
    pub conve_filters: usize,
    pub conve_kernel: usize,
    pub input_dropout: f64,
    pub feature_dropout: f64,
    pub hidden_dropout: f64,
    pub transe_margin: f64,
    pub transe_negatives: usize,
    pub checkpoint: PathBuf,
    pub report_path: PathBuf,
    pub per_query: bool,
    /// Relation dropped from every split; its test triples become the
    /// zero-shot set.
    pub withhold_relation: Option<String>,
    /// Tab-separated zero-shot triples `(head, relation, tail)`.
    pub zero_shot_path: Option<PathBuf>,
    /// Superset graph to sample zero-shot triples from.
    pub zero_shot_superset: Option<PathBuf>,
    pub zero_shot_count: usize,
    pub transe_checkpoint: Option<PathBuf>,
    pub zero_shot_report: PathBuf,
    pub attention_path: Option<PathBuf>,
    pub attention_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train_path: PathBuf::from("train.txt"),
            valid_path: PathBuf::from("valid.txt"),
            test_path: PathBuf::from("test.txt"),
            model: ModelKind::DistMult,
            grl_enabled: false,
            joint_mode: JointMode::Concat,
            fusion_mode: FusionMode::Adaptive,
            mask_mode: MaskMode::PreSoftmax,
            lambda: 0.1,
            dim: 200,
            lr: 0.003,
            batch_size: 128,
            epochs: 1000,
            eval_every: 5,
            patience: 10,
            label_smoothing: 0.1,
            score_rows: ScoreRows::Key,
            seed: 0,
            many_fraction: 0.2,
            conve_height: 10,
            conve_filters: 32,
            conve_kernel: 3,
            input_dropout: 0.2,
            feature_dropout: 0.2,
            hidden_dropout: 0.3,
            transe_margin: 1.0,
            transe_negatives: 1,
            checkpoint: PathBuf::from("model.ckpt"),
            report_path: PathBuf::from("report.json"),
            per_query: false,
            withhold_relation: None,
            zero_shot_path: None,
            zero_shot_superset: None,
            zero_shot_count: 100,
            transe_checkpoint: None,
            zero_shot_report: PathBuf::from("zeroshot.json"),
            attention_path: None,
            attention_samples: 100,
        }
    }
}

pub const MAX_EPOCHS: usize = 1000;

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn optional(value: &str) -> Option<&str> {
    (!value.is_empty() && value != "none").then_some(value)
}

impl RunConfig {
    /// Reads a config file; relative paths in it are taken from the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_text(&mut self, text: &str, base: &Path) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim(), base)?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides (paths relative to the working
    /// directory) and re-validates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {:?} is not key=value", o.as_ref())))?;
            self.set(k.trim(), v.trim(), Path::new(""))?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        match key {
            "train_path" => self.train_path = resolve(base, value),
            "valid_path" => self.valid_path = resolve(base, value),
            "test_path" => self.test_path = resolve(base, value),
            "model" => self.model = value.parse()?,
            "grl_enabled" => self.grl_enabled = parse_bool(key, value)?,
            "joint_mode" => self.joint_mode = value.parse()?,
            "fusion_mode" => self.fusion_mode = value.parse()?,
            "mask_mode" => self.mask_mode = value.parse()?,
            "lambda" => self.lambda = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "label_smoothing" => self.label_smoothing = parse(key, value)?,
            "score_rows" => self.score_rows = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "many_fraction" => self.many_fraction = parse(key, value)?,
            "conve_height" => self.conve_height = parse(key, value)?,
            "conve_filters" => self.conve_filters = parse(key, value)?,
            "conve_kernel" => self.conve_kernel = parse(key, value)?,
            "input_dropout" => self.input_dropout = parse(key, value)?,
            "feature_dropout" => self.feature_dropout = parse(key, value)?,
            "hidden_dropout" => self.hidden_dropout = parse(key, value)?,
            "transe_margin" => self.transe_margin = parse(key, value)?,
            "transe_negatives" => self.transe_negatives = parse(key, value)?,
            "checkpoint" => self.checkpoint = resolve(base, value),
            "report_path" => self.report_path = resolve(base, value),
            "per_query" => self.per_query = parse_bool(key, value)?,
            "withhold_relation" => self.withhold_relation = optional(value).map(str::to_owned),
            "zero_shot_path" => self.zero_shot_path = optional(value).map(|v| resolve(base, v)),
            "zero_shot_superset" => self.zero_shot_superset = optional(value).map(|v| resolve(base, v)),
            "zero_shot_count" => self.zero_shot_count = parse(key, value)?,
            "transe_checkpoint" => self.transe_checkpoint = optional(value).map(|v| resolve(base, v)),
            "zero_shot_report" => self.zero_shot_report = resolve(base, value),
            "attention_path" => self.attention_path = optional(value).map(|v| resolve(base, v)),
            "attention_samples" => self.attention_samples = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::Config(msg.to_owned())) };
        let unit = |v: f64| (0.0..1.0).contains(&v);
        check(self.dim > 0, "dim must be positive")?;
        check(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive")?;
        check(self.batch_size > 0, "batch_size must be positive")?;
        check((1..=MAX_EPOCHS).contains(&self.epochs), "epochs must be in 1..=1000")?;
        check(self.eval_every > 0, "eval_every must be positive")?;
        check(self.patience > 0, "patience must be positive")?;
        check(unit(self.label_smoothing), "label_smoothing must be in [0, 1)")?;
        check(self.many_fraction > 0.0 && self.many_fraction <= 1.0, "many_fraction must be in (0, 1]")?;
        check(self.lambda >= 0.0 && self.lambda.is_finite(), "lambda must be non-negative")?;
        check(
            unit(self.input_dropout) && unit(self.feature_dropout) && unit(self.hidden_dropout),
            "dropout rates must be in [0, 1)",
        )?;
        check(self.transe_margin > 0.0 && self.transe_margin.is_finite(), "transe_margin must be positive")?;
        check(self.transe_negatives > 0, "transe_negatives must be positive")?;
        check(self.zero_shot_count > 0, "zero_shot_count must be positive")?;
        check(!(self.grl_enabled && self.model == ModelKind::TransE), "grl_enabled needs distmult or conve")?;
        Ok(())
    }

    pub fn conve(&self) -> ConvEConfig {
        ConvEConfig {
            height: self.conve_height,
            filters: self.conve_filters,
            kernel: self.conve_kernel,
            input_dropout: self.input_dropout,
            feature_dropout: self.feature_dropout,
            hidden_dropout: self.hidden_dropout,
        }
    }

    pub fn grl(&self) -> Option<GrlSettings> {
        self.grl_enabled.then_some(GrlSettings {
            joint_mode: self.joint_mode,
            fusion_mode: self.fusion_mode,
            mask_mode: self.mask_mode,
            lambda: self.lambda,
        })
    }

    /// Every key with its current value, as accepted by [`RunConfig::set`].
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let p = |p: &Path| p.display().to_string();
        let o = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_owned(), |p| p.display().to_string());
        let pairs: Vec<(&str, String)> = vec![
            ("train_path", p(&self.train_path)),
            ("valid_path", p(&self.valid_path)),
            ("test_path", p(&self.test_path)),
            ("model", self.model.to_string()),
            ("grl_enabled", self.grl_enabled.to_string()),
            ("joint_mode", self.joint_mode.to_string()),
            ("fusion_mode", self.fusion_mode.to_string()),
            ("mask_mode", self.mask_mode.to_string()),
            ("lambda", self.lambda.to_string()),
            ("dim", self.dim.to_string()),
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("patience", self.patience.to_string()),
            ("label_smoothing", self.label_smoothing.to_string()),
            ("score_rows", self.score_rows.to_string()),
            ("seed", self.seed.to_string()),
            ("many_fraction", self.many_fraction.to_string()),
            ("conve_height", self.conve_height.to_string()),
            ("conve_filters", self.conve_filters.to_string()),
            ("conve_kernel", self.conve_kernel.to_string()),
            ("input_dropout", self.input_dropout.to_string()),
            ("feature_dropout", self.feature_dropout.to_string()),
            ("hidden_dropout", self.hidden_dropout.to_string()),
            ("transe_margin", self.transe_margin.to_string()),
            ("transe_negatives", self.transe_negatives.to_string()),
            ("checkpoint", p(&self.checkpoint)),
            ("report_path", p(&self.report_path)),
            ("per_query", self.per_query.to_string()),
            ("withhold_relation", self.withhold_relation.clone().unwrap_or_else(|| "none".into())),
            ("zero_shot_path", o(&self.zero_shot_path)),
            ("zero_shot_superset", o(&self.zero_shot_superset)),
            ("zero_shot_count", self.zero_shot_count.to_string()),
            ("transe_checkpoint", o(&self.transe_checkpoint)),
            ("zero_shot_report", p(&self.zero_shot_report)),
            ("attention_path", o(&self.attention_path)),
            ("attention_samples", self.attention_samples.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in pairs {
            cfg.set(k, v, Path::new(""))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
