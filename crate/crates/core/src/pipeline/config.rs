use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::decodesim::{CorpusSizes, DecodeConfig, SplitSizes};
use crate::lrnn::TrainConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {msg}")]
    BadValue { line: usize, key: String, msg: String },
    #[error("unknown variant `{0}` (expected one of: {list})", list = Variant::names())]
    UnknownVariant(String),
}

/// A trainable classifier configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    BaseSingle,
    ChatterSingle,
    Ratio,
    ScoreMerge,
    EmbedMerge,
    ParallelFullRandom,
    ParallelFullPretrained,
    Moe,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::BaseSingle,
        Variant::ChatterSingle,
        Variant::Ratio,
        Variant::ScoreMerge,
        Variant::EmbedMerge,
        Variant::ParallelFullRandom,
        Variant::ParallelFullPretrained,
        Variant::Moe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::BaseSingle => "base-single",
            Variant::ChatterSingle => "chatter-single",
            Variant::Ratio => "ratio",
            Variant::ScoreMerge => "score-merge",
            Variant::EmbedMerge => "embed-merge",
            Variant::ParallelFullRandom => "parallel-full-random",
            Variant::ParallelFullPretrained => "parallel-full-pretrained",
            Variant::Moe => "moe",
        }
    }

    /// Row label in the summary table.
    pub fn description(self) -> &'static str {
        match self {
            Variant::BaseSingle => "BaseLM based Bi-LRNN",
            Variant::ChatterSingle => "ChatterLM based Bi-LRNN",
            Variant::Ratio => "Probability ratio (BaseLM / ChatterLM)",
            Variant::ScoreMerge => "Score merge of pretrained Bi-LRNNs",
            Variant::EmbedMerge => "Embedding merge of pretrained Bi-LRNNs",
            Variant::ParallelFullRandom => "Parallel Bi-LRNN (random init)",
            Variant::ParallelFullPretrained => "Parallel Bi-LRNN (pretrained init)",
            Variant::Moe => "Mixture of experts",
        }
    }

    /// Single models this variant starts from.
    pub fn prerequisites(self) -> &'static [Variant] {
        match self {
            Variant::ScoreMerge | Variant::EmbedMerge | Variant::ParallelFullPretrained | Variant::Moe => {
                &[Variant::BaseSingle, Variant::ChatterSingle]
            }
            _ => &[],
        }
    }

    pub fn names() -> String {
        Variant::ALL.map(|v| v.as_str()).join(", ")
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| ConfigError::UnknownVariant(s.to_string()))
    }
}

/// Everything a run depends on. Serialized as flat `key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Fraction of the reference split sizes.
    pub scale: f64,
    pub lm_sentences: usize,
    pub heldout_sentences: usize,
    pub near_miss_rate: f64,
    pub lm_order: usize,
    pub lm_discount: f64,
    pub confusion_lambda: f64,
    pub noise_sigma: f64,
    pub beam: usize,
    pub max_arcs_per_step: usize,
    pub hidden: usize,
    pub classifier_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub target_fs: f64,
    /// Encoder learning-rate multiplier when fine-tuning pretrained encoders.
    pub finetune_lr_scale: f64,
    /// `P(in-domain)` for the ratio baseline; `None` uses the train TT fraction.
    pub prior: Option<f64>,
    pub variants: Vec<Variant>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            scale: 0.1,
            lm_sentences: 4000,
            heldout_sentences: 500,
            near_miss_rate: 0.1,
            lm_order: 3,
            lm_discount: 0.4,
            confusion_lambda: 1.5,
            noise_sigma: 0.3,
            beam: 8,
            max_arcs_per_step: 4,
            hidden: 32,
            classifier_hidden: 32,
            epochs: 8,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            target_fs: 0.004,
            finetune_lr_scale: 0.1,
            prior: None,
            variants: Variant::ALL.to_vec(),
            out: PathBuf::from("run"),
        }
    }
}

const KEYS: [&str; 24] = [
    "seed",
    "scale",
    "lm_sentences",
    "heldout_sentences",
    "near_miss_rate",
    "lm_order",
    "lm_discount",
    "confusion_lambda",
    "noise_sigma",
    "beam",
    "max_arcs_per_step",
    "hidden",
    "classifier_hidden",
    "epochs",
    "batch_size",
    "learning_rate",
    "beta1",
    "beta2",
    "adam_eps",
    "target_fs",
    "finetune_lr_scale",
    "prior",
    "variants",
    "out",
];

impl RunConfig {
    pub fn corpus_sizes(&self) -> CorpusSizes {
        CorpusSizes {
            lm_sentences: self.lm_sentences,
            heldout_sentences: self.heldout_sentences,
            splits: SplitSizes::scaled(self.scale),
            near_miss_rate: self.near_miss_rate,
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig { beam: self.beam, max_arcs_per_step: self.max_arcs_per_step }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            seed,
            target_fs: self.target_fs,
        }
    }

    fn value(&self, key: &str) -> String {
        let f = |x: f64| format!("{x}");
        match key {
            "seed" => self.seed.to_string(),
            "scale" => f(self.scale),
            "lm_sentences" => self.lm_sentences.to_string(),
            "heldout_sentences" => self.heldout_sentences.to_string(),
            "near_miss_rate" => f(self.near_miss_rate),
            "lm_order" => self.lm_order.to_string(),
            "lm_discount" => f(self.lm_discount),
            "confusion_lambda" => f(self.confusion_lambda),
            "noise_sigma" => f(self.noise_sigma),
            "beam" => self.beam.to_string(),
            "max_arcs_per_step" => self.max_arcs_per_step.to_string(),
            "hidden" => self.hidden.to_string(),
            "classifier_hidden" => self.classifier_hidden.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "learning_rate" => f(self.learning_rate),
            "beta1" => f(self.beta1),
            "beta2" => f(self.beta2),
            "adam_eps" => f(self.adam_eps),
            "target_fs" => f(self.target_fs),
            "finetune_lr_scale" => f(self.finetune_lr_scale),
            "prior" => self.prior.map_or_else(|| "auto".to_string(), f),
            "variants" => self.variants.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(","),
            "out" => self.out.display().to_string(),
            _ => unreachable!("{key}"),
        }
    }

    /// Every key, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# ftmkit run configuration\n");
        for k in KEYS {
            writeln!(s, "{k} = {}", self.value(k)).unwrap();
        }
        s
    }

    /// Defaults overridden by the keys present in `text`. Blank lines and
    /// `#` comments are ignored.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let n = i + 1;
            let (key, val) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| ConfigError::Syntax { line: n, msg: format!("expected `key = value`, got `{line}`") })?;
            let bad = |msg: String| ConfigError::BadValue { line: n, key: key.to_string(), msg };
            fn num<T: FromStr>(v: &str) -> Result<T, String>
            where
                T::Err: fmt::Display,
            {
                v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
            }
            match key {
                "seed" => c.seed = num(val).map_err(bad)?,
                "scale" => c.scale = num(val).map_err(bad)?,
                "lm_sentences" => c.lm_sentences = num(val).map_err(bad)?,
                "heldout_sentences" => c.heldout_sentences = num(val).map_err(bad)?,
                "near_miss_rate" => c.near_miss_rate = num(val).map_err(bad)?,
                "lm_order" => c.lm_order = num(val).map_err(bad)?,
                "lm_discount" => c.lm_discount = num(val).map_err(bad)?,
                "confusion_lambda" => c.confusion_lambda = num(val).map_err(bad)?,
                "noise_sigma" => c.noise_sigma = num(val).map_err(bad)?,
                "beam" => c.beam = num(val).map_err(bad)?,
                "max_arcs_per_step" => c.max_arcs_per_step = num(val).map_err(bad)?,
                "hidden" => c.hidden = num(val).map_err(bad)?,
                "classifier_hidden" => c.classifier_hidden = num(val).map_err(bad)?,
                "epochs" => c.epochs = num(val).map_err(bad)?,
                "batch_size" => c.batch_size = num(val).map_err(bad)?,
                "learning_rate" => c.learning_rate = num(val).map_err(bad)?,
                "beta1" => c.beta1 = num(val).map_err(bad)?,
                "beta2" => c.beta2 = num(val).map_err(bad)?,
                "adam_eps" => c.adam_eps = num(val).map_err(bad)?,
                "target_fs" => c.target_fs = num(val).map_err(bad)?,
                "finetune_lr_scale" => c.finetune_lr_scale = num(val).map_err(bad)?,
                "prior" => c.prior = if val == "auto" { None } else { Some(num(val).map_err(bad)?) },
                "variants" => {
                    c.variants = val
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse::<Variant>().map_err(|e| bad(e.to_string())))
                        .collect::<Result<_, _>>()?
                }
                "out" => c.out = PathBuf::from(val),
                _ => return Err(ConfigError::UnknownKey { line: n, key: key.to_string() }),
            }
        }
        c.check()?;
        Ok(c)
    }

    fn check(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: &str| Err(ConfigError::BadValue { line: 0, key: key.into(), msg: msg.into() });
        if !(self.scale > 0.0) {
            return bad("scale", "must be positive");
        }
        if self.lm_sentences == 0 || self.heldout_sentences == 0 {
            return bad("lm_sentences", "corpora must be non-empty");
        }
        if !(0.0..=1.0).contains(&self.near_miss_rate) {
            return bad("near_miss_rate", "must lie in [0, 1]");
        }
        if self.beam == 0 || self.max_arcs_per_step == 0 {
            return bad("beam", "beam and max_arcs_per_step must be at least 1");
        }
        if self.hidden == 0 || self.classifier_hidden == 0 || self.epochs == 0 || self.batch_size == 0 {
            return bad("hidden", "hidden, classifier_hidden, epochs and batch_size must be positive");
        }
        if !(self.learning_rate >= 0.0) || !(self.finetune_lr_scale >= 0.0) {
            return bad("learning_rate", "must be non-negative");
        }
        if let Some(p) = self.prior {
            if !(p > 0.0 && p < 1.0) {
                return bad("prior", "must lie in (0, 1) or be `auto`");
            }
        }
        Ok(())
    }
}
