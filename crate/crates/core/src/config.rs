//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # desk-scale replication
//! hidden      = 256, 256, 256
//! dataset     = synthetic(10, 3000, 6, 3, 1.0, 7)
//! optimizer   = sgd(0.9, 1e-4)
//! schedule    = scyc(4e-2, 6e-2, 1, 4, 10K, 32K, 48K, nil)
//! criterion   = global_magnitude
//! imp         = false
//! prune_rate  = 0.2
//! cycles      = 25
//! epochs      = 60
//! batch_size  = 64
//! seeds       = 0, 1, 2, 3, 4
//! patience    = 10
//! ```
//!
//! Schedules use the positional forms of [`ScheduleSpec`]. Datasets are
//! `idx(images_path, labels_path)` (relative to the config file) or
//! `synthetic(classes, n, side, clusters, spread, seed)`. Optimizers are
//! `sgd(momentum, weight_decay)`, `adam(weight_decay[, beta1, beta2, eps])`
//! and `rmsprop(weight_decay[, decay, eps])`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::harness::{DatasetSource, ExperimentConfig};
use crate::optim::OptimizerKind;
use crate::prune::{PruneCriterion, ScoringRule};
use crate::sched::ScheduleSpec;

const KEYS: &[&str] = &[
    "batch_norm",
    "batch_size",
    "criterion",
    "cycles",
    "dataset",
    "epochs",
    "hidden",
    "imp",
    "optimizer",
    "patience",
    "prune_rate",
    "schedule",
    "seeds",
    "snapshot_rows",
    "tail_quantile",
];

struct Entry {
    line: usize,
    value: String,
}

fn at(line: usize, key: &str) -> String {
    format!("line {line} (`{key}`)")
}

fn split_call(s: &str) -> Option<(&str, Vec<&str>)> {
    let (name, rest) = s.split_once('(')?;
    let body = rest.trim_end().strip_suffix(')')?;
    Some((
        name.trim(),
        body.split(',').map(str::trim).filter(|a| !a.is_empty()).collect(),
    ))
}

fn parse_num<T: std::str::FromStr>(loc: &str, what: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::config(loc, format!("expected {what}, got `{s}`")))
}

fn parse_optimizer(loc: &str, s: &str) -> Result<OptimizerKind> {
    let (name, args) = split_call(s).ok_or_else(|| Error::config(loc, format!("malformed optimizer `{s}`")))?;
    let nums: Vec<f64> = args
        .iter()
        .map(|a| parse_num(loc, "a number", a))
        .collect::<Result<_>>()?;
    let kind = match (name.to_ascii_lowercase().as_str(), nums.as_slice()) {
        ("sgd", [momentum, wd]) => OptimizerKind::sgd(*momentum, *wd),
        ("adam", [wd]) => OptimizerKind::adam(*wd),
        ("adam", [wd, b1, b2, eps]) => OptimizerKind::Adam {
            beta1: *b1,
            beta2: *b2,
            epsilon: *eps,
            weight_decay: *wd,
        },
        ("rmsprop", [wd]) => OptimizerKind::rmsprop(*wd),
        ("rmsprop", [wd, decay, eps]) => OptimizerKind::RmsProp {
            decay: *decay,
            epsilon: *eps,
            weight_decay: *wd,
        },
        _ => return Err(Error::config(loc, format!("unknown optimizer form `{s}`"))),
    };
    kind.validate().map_err(|e| Error::config(loc, e.to_string()))?;
    Ok(kind)
}

fn format_optimizer(kind: &OptimizerKind) -> String {
    match *kind {
        OptimizerKind::Sgd { momentum, weight_decay } => format!("sgd({momentum:e}, {weight_decay:e})"),
        OptimizerKind::Adam {
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } => format!("adam({weight_decay:e}, {beta1:e}, {beta2:e}, {epsilon:e})"),
        OptimizerKind::RmsProp {
            decay,
            epsilon,
            weight_decay,
        } => format!("rmsprop({weight_decay:e}, {decay:e}, {epsilon:e})"),
    }
}

fn parse_dataset(loc: &str, s: &str, base: &Path) -> Result<DatasetSource> {
    let (name, args) = split_call(s).ok_or_else(|| Error::config(loc, format!("malformed dataset `{s}`")))?;
    match (name.to_ascii_lowercase().as_str(), args.as_slice()) {
        ("idx", [images, labels]) => Ok(DatasetSource::Idx {
            images: base.join(images),
            labels: base.join(labels),
        }),
        ("synthetic", [classes, n, side, clusters, spread, seed]) => {
            let spec = SyntheticSpec {
                classes: parse_num(loc, "a class count", classes)?,
                n: parse_num(loc, "an example count", n)?,
                side: parse_num(loc, "an image side", side)?,
                clusters: parse_num(loc, "a cluster count", clusters)?,
                spread: parse_num(loc, "a spread", spread)?,
                seed: parse_num(loc, "a seed", seed)?,
            };
            spec.validate().map_err(|e| Error::config(loc, e.to_string()))?;
            Ok(DatasetSource::Synthetic(spec))
        }
        _ => Err(Error::config(loc, format!("unknown dataset form `{s}`"))),
    }
}

fn format_dataset(d: &DatasetSource) -> String {
    match d {
        DatasetSource::Idx { images, labels } => format!("idx({}, {})", images.display(), labels.display()),
        DatasetSource::Synthetic(s) => format!(
            "synthetic({}, {}, {}, {}, {:e}, {})",
            s.classes, s.n, s.side, s.clusters, s.spread, s.seed
        ),
    }
}

fn parse_bool(loc: &str, s: &str) -> Result<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(loc, format!("expected true or false, got `{s}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(loc: &str, what: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse_num(loc, what, v))
        .collect()
}

/// Parses configuration text. Relative dataset paths resolve against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| {
            Error::config(
                format!("line {line}"),
                format!("expected `key = value`, got `{content}`"),
            )
        })?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(Error::config(at(line, key), "unknown key"));
        }
        if let Some(prev) = entries.get(key) {
            return Err(Error::config(
                at(line, key),
                format!("duplicate key, first set on line {}", prev.line),
            ));
        }
        entries.insert(
            key.to_string(),
            Entry {
                line,
                value: value.trim().to_string(),
            },
        );
    }

    let mut cfg = ExperimentConfig::default();
    let mut imp = false;
    let mut rule = cfg.criterion.rule;
    for (key, Entry { line, value }) in &entries {
        let loc = at(*line, key);
        let v = value.as_str();
        match key.as_str() {
            "batch_norm" => cfg.batch_norm = parse_bool(&loc, v)?,
            "batch_size" => cfg.batch_size = parse_num(&loc, "a batch size", v)?,
            "criterion" => {
                rule = v
                    .parse::<ScoringRule>()
                    .map_err(|e| Error::config(&loc, e.to_string()))?
            }
            "cycles" => cfg.cycles = parse_num(&loc, "a cycle count", v)?,
            "dataset" => cfg.dataset = parse_dataset(&loc, v, base)?,
            "epochs" => cfg.epochs = parse_num(&loc, "an epoch count", v)?,
            "hidden" => cfg.hidden = parse_list(&loc, "a layer width", v)?,
            "imp" => imp = parse_bool(&loc, v)?,
            "optimizer" => cfg.optimizer = parse_optimizer(&loc, v)?,
            "patience" => {
                cfg.patience = if v.eq_ignore_ascii_case("inf") || v.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(parse_num(&loc, "an epoch count or `inf`", v)?)
                }
            }
            "prune_rate" => {
                let p: f64 = parse_num(&loc, "a rate", v)?;
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::config(
                        &loc,
                        format!("invalid pruning rate {p}: expected 0 <= p < 1"),
                    ));
                }
                cfg.prune_rate = p;
            }
            "schedule" => {
                cfg.schedule = v
                    .parse::<ScheduleSpec>()
                    .map_err(|e| Error::config(&loc, e.to_string()))?
            }
            "seeds" => cfg.seeds = parse_list(&loc, "a seed", v)?,
            "snapshot_rows" => cfg.snapshot_rows = parse_num(&loc, "a row count", v)?,
            "tail_quantile" => cfg.tail_quantile = parse_num(&loc, "a quantile", v)?,
            _ => unreachable!("key list checked above"),
        }
    }
    cfg.criterion = PruneCriterion { rule, imp_rewind: imp };
    cfg.schedule = cfg.schedule.with_prune_rate(cfg.prune_rate);
    cfg.validate().map_err(|e| match e {
        Error::Config { location, message } => {
            let location = entries
                .get(&location)
                .map_or(location.clone(), |en| at(en.line, &location));
            Error::Config { location, message }
        }
        Error::InvalidRate(p) => Error::config(
            entries
                .get("prune_rate")
                .map_or("prune_rate".into(), |en| at(en.line, "prune_rate")),
            format!("invalid pruning rate {p}"),
        ),
        other => other,
    })?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    parse_config_str(&text, &base)
}

/// Canonical text form: every key, sorted, full precision. Parsing it back
/// yields the same config.
pub fn canonical_config(cfg: &ExperimentConfig) -> String {
    let join = |v: &[String]| v.join(", ");
    let mut out = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    put("batch_norm", cfg.batch_norm.to_string());
    put("batch_size", cfg.batch_size.to_string());
    put("criterion", cfg.criterion.rule.to_string());
    put("cycles", cfg.cycles.to_string());
    put("dataset", format_dataset(&cfg.dataset));
    put("epochs", cfg.epochs.to_string());
    put(
        "hidden",
        join(&cfg.hidden.iter().map(ToString::to_string).collect::<Vec<_>>()),
    );
    put("imp", cfg.criterion.imp_rewind.to_string());
    put("optimizer", format_optimizer(&cfg.optimizer));
    put(
        "patience",
        cfg.patience.map_or_else(|| "inf".to_string(), |p| p.to_string()),
    );
    put("prune_rate", format!("{:e}", cfg.prune_rate));
    put("schedule", cfg.schedule.to_string());
    put(
        "seeds",
        join(&cfg.seeds.iter().map(ToString::to_string).collect::<Vec<_>>()),
    );
    put("snapshot_rows", cfg.snapshot_rows.to_string());
    put("tail_quantile", format!("{:e}", cfg.tail_quantile));
    out
}
