//! Flat `key = value` config files and their merge with CLI flags.
//!
//! Keys use the same dotted names as the long flags (`margin.kind`,
//! `train.lr`, `post.p1`). Precedence is defaults, then file, then flags.
//! Unknown or duplicate keys are usage errors so typos never pass silently.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use dynarc::data::TrainConfig;
use dynarc::margins::MarginConfig;
use dynarc::postprocess::PostprocessConfig;

use crate::{AppError, Mode, PredictArgs, TrainArgs};

pub(crate) struct FileConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl FileConfig {
    pub(crate) fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub(crate) fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            AppError::Runtime(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(AppError::Usage(format!(
                    "config line {line}: expected `key = value`, got `{trimmed}`"
                )));
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(AppError::Usage(format!("config line {line}: empty key")));
            }
            if let Some((first, _)) = entries.insert(key.clone(), (line, value.trim().to_string()))
            {
                return Err(AppError::Usage(format!(
                    "config line {line}: duplicate key `{key}` (first set on line {first})"
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Remove and parse one key. Consumed keys are exempt from the final
    /// unknown-key sweep even when a flag overrides them.
    pub(crate) fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, AppError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, raw)) => raw.parse::<T>().map(Some).map_err(|e| {
                AppError::Usage(format!(
                    "config key `{key}` (line {line}): invalid value `{raw}`: {e}"
                ))
            }),
        }
    }

    pub(crate) fn reject_unknown(&self) -> Result<(), AppError> {
        if let Some((key, (line, _))) = self.entries.iter().next() {
            return Err(AppError::Usage(format!(
                "unknown config key `{key}` (line {line})"
            )));
        }
        Ok(())
    }
}

fn resolve_margin(file: &mut FileConfig, args: &TrainArgs) -> Result<MarginConfig<f64>, AppError> {
    let kind = args
        .margin_kind
        .clone()
        .or(file.take::<String>("margin.kind")?);
    let lambda = args.margin_lambda.or(file.take("margin.lambda")?);
    let lower = args.margin_lower.or(file.take("margin.lower")?);
    let upper = args.margin_upper.or(file.take("margin.upper")?);
    let n_min = args.margin_n_min.or(file.take("margin.n-min")?);
    let n_max = args.margin_n_max.or(file.take("margin.n-max")?);

    match kind.as_deref().unwrap_or("dynamic") {
        "constant" => {
            let level = match (lower, upper) {
                (Some(l), Some(u)) if l == u => l,
                (Some(l), None) => l,
                (None, Some(u)) => u,
                (None, None) => 0.25,
                (Some(l), Some(u)) => {
                    return Err(AppError::Usage(format!(
                        "constant margins need a single level, got lower {l} and upper {u}"
                    )));
                }
            };
            Ok(MarginConfig::constant(level))
        }
        "dynamic" => {
            let mut cfg = MarginConfig::default();
            if let Some(v) = lambda {
                cfg.lambda = v;
            }
            if let Some(v) = lower {
                cfg.lower = v;
            }
            if let Some(v) = upper {
                cfg.upper = v;
            }
            if n_min.is_some() {
                cfg.n_min = n_min;
            }
            if n_max.is_some() {
                cfg.n_max = n_max;
            }
            Ok(cfg)
        }
        other => Err(AppError::Usage(format!(
            "margin.kind must be `constant` or `dynamic`, got `{other}`"
        ))),
    }
}

pub(crate) fn resolve_train_config(
    file: &mut FileConfig,
    args: &TrainArgs,
) -> Result<TrainConfig<f64>, AppError> {
    let margin = resolve_margin(file, args)?;
    let mut cfg = TrainConfig::<f64> {
        margin,
        ..TrainConfig::default()
    };
    if let Some(v) = args.embed_dim.or(file.take("train.embed-dim")?) {
        cfg.embed_dim = v;
    }
    if let Some(v) = args.subcenters.or(file.take("train.subcenters")?) {
        cfg.num_subcenters = v;
    }
    if let Some(v) = args.epochs.or(file.take("train.epochs")?) {
        cfg.epochs = v;
    }
    if let Some(v) = args.lr.or(file.take("train.lr")?) {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.momentum.or(file.take("train.momentum")?) {
        cfg.momentum = v;
    }
    if let Some(v) = args.batch_size.or(file.take("train.batch-size")?) {
        cfg.batch_size = v;
    }
    if let Some(v) = args.scale.or(file.take("train.scale")?) {
        cfg.scale = v;
    }
    if let Some(v) = args.folds.or(file.take("train.folds")?) {
        cfg.num_folds = v;
    }
    if let Some(v) = args.val_fold.or(file.take("train.val-fold")?) {
        cfg.val_fold = v;
    }
    if let Some(v) = args.seed.or(file.take("train.seed")?) {
        cfg.seed = v;
    }
    cfg.validate().map_err(|e| AppError::Usage(e.to_string()))?;
    // Probe calibration with a placeholder census so contradictory margin
    // settings surface as usage errors before any data is read.
    cfg.margin
        .schedule_for_counts(&[1, 100])
        .map_err(|e| AppError::Usage(e.to_string()))?;
    Ok(cfg)
}

pub(crate) fn resolve_post_config(
    file: &mut FileConfig,
    args: &PredictArgs,
) -> Result<(Mode, PostprocessConfig<f64>), AppError> {
    let mode_raw = args.mode.clone().or(file.take::<String>("post.mode")?);
    let mode = match mode_raw {
        Some(s) => Mode::parse(&s)?,
        None => Mode::Pp1,
    };
    let mut cfg = PostprocessConfig::<f64>::default();
    if let Some(v) = args.neighbor_k.or(file.take("post.neighbor-k")?) {
        cfg.neighbor_k = v;
    }
    if let Some(v) = args.p1.or(file.take("post.p1")?) {
        cfg.p1 = v;
    }
    if let Some(v) = args.p2.or(file.take("post.p2")?) {
        cfg.p2 = v;
    }
    if let Some(v) = args.head_candidates.or(file.take("post.head-candidates")?) {
        cfg.head_candidates = v;
    }
    cfg.validate().map_err(|e| AppError::Usage(e.to_string()))?;
    Ok((mode, cfg))
}
