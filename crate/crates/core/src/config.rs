//! Hyperparameters and the flat `key = value` config file.
//!
//! Every value is overridable. Resolution order is command-line flag, then
//! config file, then the built-in defaults below. [`PartialConfig`] carries
//! the "maybe set" layer so the sources can be merged before validation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_CODE_BITS: usize = 64;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_DELTA: f64 = 1.0;
pub const DEFAULT_MU: f64 = 0.01;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-2;
pub const DEFAULT_EPOCHS: usize = 50;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_MODALITY_DIM: usize = 512;

/// Which parts of the fusion network are active.
///
/// The single-modality variants zero-fill the excluded modality so every
/// variant shares one parameter shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Variant {
    #[default]
    Full,
    /// Concatenation without the context gate.
    ConcatOnly,
    VisionOnly,
    TextOnly,
}

impl Variant {
    /// Table order used by ablation reports.
    pub const ALL: [Variant; 4] = [
        Variant::TextOnly,
        Variant::VisionOnly,
        Variant::ConcatOnly,
        Variant::Full,
    ];

    pub fn as_byte(self) -> u8 {
        match self {
            Variant::Full => 0,
            Variant::ConcatOnly => 1,
            Variant::VisionOnly => 2,
            Variant::TextOnly => 3,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Variant::Full),
            1 => Some(Variant::ConcatOnly),
            2 => Some(Variant::VisionOnly),
            3 => Some(Variant::TextOnly),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::ConcatOnly => "concat_only",
            Variant::VisionOnly => "vision_only",
            Variant::TextOnly => "text_only",
        }
    }

    pub fn uses_gate(self) -> bool {
        self != Variant::ConcatOnly
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(Variant::Full),
            "concat_only" | "concat" => Ok(Variant::ConcatOnly),
            "vision_only" | "vision" | "image" => Ok(Variant::VisionOnly),
            "text_only" | "text" => Ok(Variant::TextOnly),
            other => Err(format!(
                "unknown variant `{other}` (expected full, concat-only, vision-only, text-only)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub code_bits: usize,
    pub batch_size: usize,
    /// Fraction of the batch covered by each pairwise-loss window.
    pub lambda: f64,
    /// Weight on the softplus term of the metric loss.
    pub delta: f64,
    /// Weight on the quantization loss.
    pub mu: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub vision_dim: usize,
    pub text_dim: usize,
    pub variant: Variant,
    /// Evaluate retrieval mAP after every epoch and record it in the log.
    pub eval_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            code_bits: DEFAULT_CODE_BITS,
            batch_size: DEFAULT_BATCH_SIZE,
            lambda: DEFAULT_LAMBDA,
            delta: DEFAULT_DELTA,
            mu: DEFAULT_MU,
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: DEFAULT_EPOCHS,
            seed: DEFAULT_SEED,
            vision_dim: DEFAULT_MODALITY_DIM,
            text_dim: DEFAULT_MODALITY_DIM,
            variant: Variant::Full,
            eval_each_epoch: false,
        }
    }
}

impl TrainConfig {
    pub fn concat_dim(&self) -> usize {
        self.vision_dim + self.text_dim
    }

    /// Number of rows in each loss window, `lambda * batch_size`.
    pub fn window(&self) -> usize {
        (self.lambda * self.batch_size as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        validate(self)
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::ConfigInvalid {
        field,
        reason: reason.into(),
    }
}

/// Checks every invariant, reporting the first one violated.
pub fn validate(c: &TrainConfig) -> Result<()> {
    if c.code_bits < 8 || c.code_bits > 256 || c.code_bits % 8 != 0 {
        return Err(invalid(
            "code_bits",
            format!("{} is not a multiple of 8 in [8, 256]", c.code_bits),
        ));
    }
    if c.batch_size == 0 {
        return Err(invalid("batch_size", "must be at least 1"));
    }
    if !(c.lambda > 0.0 && c.lambda <= 1.0) {
        return Err(invalid("lambda", format!("{} is outside (0, 1]", c.lambda)));
    }
    let window = c.lambda * c.batch_size as f64;
    if window.round() < 1.0 || (window - window.round()).abs() >= 1e-9 {
        return Err(invalid(
            "lambda",
            format!(
                "lambda * batch_size = {window} must be a whole number >= 1 (batch_size {})",
                c.batch_size
            ),
        ));
    }
    if !(c.delta >= 0.0 && c.delta.is_finite()) {
        return Err(invalid("delta", format!("{} must be finite and >= 0", c.delta)));
    }
    if !(c.mu >= 0.0 && c.mu.is_finite()) {
        return Err(invalid("mu", format!("{} must be finite and >= 0", c.mu)));
    }
    if !(c.learning_rate > 0.0 && c.learning_rate.is_finite()) {
        return Err(invalid(
            "learning_rate",
            format!("{} must be finite and > 0", c.learning_rate),
        ));
    }
    if c.epochs == 0 {
        return Err(invalid("epochs", "must be at least 1"));
    }
    if c.vision_dim == 0 {
        return Err(invalid("vision_dim", "must be at least 1"));
    }
    if c.text_dim == 0 {
        return Err(invalid("text_dim", "must be at least 1"));
    }
    Ok(())
}

/// A config layer where every key may be absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartialConfig {
    pub code_bits: Option<usize>,
    pub batch_size: Option<usize>,
    pub lambda: Option<f64>,
    pub delta: Option<f64>,
    pub mu: Option<f64>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub vision_dim: Option<usize>,
    pub text_dim: Option<usize>,
    pub variant: Option<Variant>,
    pub eval_each_epoch: Option<bool>,
}

impl PartialConfig {
    /// Fills the gaps in `self` from `lower`; values already set in `self` win.
    pub fn or(self, lower: PartialConfig) -> PartialConfig {
        PartialConfig {
            code_bits: self.code_bits.or(lower.code_bits),
            batch_size: self.batch_size.or(lower.batch_size),
            lambda: self.lambda.or(lower.lambda),
            delta: self.delta.or(lower.delta),
            mu: self.mu.or(lower.mu),
            learning_rate: self.learning_rate.or(lower.learning_rate),
            epochs: self.epochs.or(lower.epochs),
            seed: self.seed.or(lower.seed),
            vision_dim: self.vision_dim.or(lower.vision_dim),
            text_dim: self.text_dim.or(lower.text_dim),
            variant: self.variant.or(lower.variant),
            eval_each_epoch: self.eval_each_epoch.or(lower.eval_each_epoch),
        }
    }

    /// Applies defaults for absent keys. Does not validate.
    pub fn resolve(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            code_bits: self.code_bits.unwrap_or(d.code_bits),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            lambda: self.lambda.unwrap_or(d.lambda),
            delta: self.delta.unwrap_or(d.delta),
            mu: self.mu.unwrap_or(d.mu),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            epochs: self.epochs.unwrap_or(d.epochs),
            seed: self.seed.unwrap_or(d.seed),
            vision_dim: self.vision_dim.unwrap_or(d.vision_dim),
            text_dim: self.text_dim.unwrap_or(d.text_dim),
            variant: self.variant.unwrap_or(d.variant),
            eval_each_epoch: self.eval_each_epoch.unwrap_or(d.eval_each_epoch),
        }
    }

    /// Parses the `key = value` text format. Blank lines and `#` comments are
    /// ignored; unknown keys and repeated keys are syntax errors.
    pub fn parse(text: &str) -> Result<PartialConfig> {
        let mut out = PartialConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |message: String| Error::ConfigSyntax {
                line: line_no,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let value = value.trim();
            if value.is_empty() {
                return Err(syntax(format!("missing value for `{key}`")));
            }

            fn num<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
                value.parse().map_err(|_| Error::ConfigSyntax {
                    line,
                    message: format!("cannot parse `{value}` for `{key}`"),
                })
            }
            fn set<T>(slot: &mut Option<T>, v: T, key: &str, line: usize) -> Result<()> {
                if slot.is_some() {
                    return Err(Error::ConfigSyntax {
                        line,
                        message: format!("duplicate key `{key}`"),
                    });
                }
                *slot = Some(v);
                Ok(())
            }

            match key {
                "code_bits" => set(&mut out.code_bits, num(key, value, line_no)?, key, line_no)?,
                "batch_size" => set(&mut out.batch_size, num(key, value, line_no)?, key, line_no)?,
                "lambda" => set(&mut out.lambda, num(key, value, line_no)?, key, line_no)?,
                "delta" => set(&mut out.delta, num(key, value, line_no)?, key, line_no)?,
                "mu" => set(&mut out.mu, num(key, value, line_no)?, key, line_no)?,
                "learning_rate" => {
                    set(&mut out.learning_rate, num(key, value, line_no)?, key, line_no)?
                }
                "epochs" => set(&mut out.epochs, num(key, value, line_no)?, key, line_no)?,
                "seed" => set(&mut out.seed, num(key, value, line_no)?, key, line_no)?,
                "vision_dim" => set(&mut out.vision_dim, num(key, value, line_no)?, key, line_no)?,
                "text_dim" => set(&mut out.text_dim, num(key, value, line_no)?, key, line_no)?,
                "variant" => {
                    let v = value.parse().map_err(|m| syntax(m))?;
                    set(&mut out.variant, v, key, line_no)?
                }
                "eval_each_epoch" => {
                    set(&mut out.eval_each_epoch, num(key, value, line_no)?, key, line_no)?
                }
                other => return Err(syntax(format!("unknown key `{other}`"))),
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<PartialConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }
}

/// Reads a config file, fills defaults and validates.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let config = PartialConfig::load(path)?.resolve();
    validate(&config)?;
    Ok(config)
}

/// Renders a config in the file format accepted by [`load_config`].
pub fn to_config_text(c: &TrainConfig) -> String {
    format!(
        "code_bits = {}\nbatch_size = {}\nlambda = {}\ndelta = {}\nmu = {}\n\
         learning_rate = {}\nepochs = {}\nseed = {}\nvision_dim = {}\ntext_dim = {}\n\
         variant = {}\neval_each_epoch = {}\n",
        c.code_bits,
        c.batch_size,
        c.lambda,
        c.delta,
        c.mu,
        c.learning_rate,
        c.epochs,
        c.seed,
        c.vision_dim,
        c.text_dim,
        c.variant,
        c.eval_each_epoch
    )
}
