//! `key = value` configuration files for training runs.
//!
//! Blank lines and lines starting with `#` are ignored. `preset` and
//! `variant` are applied before every other key regardless of position.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::trainer::{TrainConfig, Variant};

pub const KEYS: &[&str] = &[
    "preset",
    "variant",
    "batch",
    "payload",
    "alpha",
    "beta",
    "xi",
    "policy_lr",
    "env_lr",
    "lr_decay_every",
    "lr_decay_factor",
    "iterations",
    "seed",
    "update_ratio",
    "warmup",
    "checkpoint_every",
    "image_dir",
    "image_size",
    "qf",
    "synthetic_images",
    "texture",
    "unet_schedule",
    "dct_groups",
    "dct_width",
    "msu_upsampler",
    "leaky_slope",
    "output_bias",
    "level_shift",
    "bn_momentum",
    "bn_eps",
    "bank",
    "truncation",
    "env_widths",
    "env_kernels",
    "env_repeats",
    "pool_size",
    "pool_stride",
];

/// Parses `key = value` lines, rejecting unknown keys and duplicates.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown key {k:?}", n + 1)));
        }
        if out.iter().any(|(e, _)| e == k) {
            return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Sets one key on a configuration.
pub fn apply(c: &mut TrainConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "preset" => {
            *c = match v {
                "desk" => TrainConfig::default(),
                "toy" => TrainConfig::toy(),
                "paper" => TrainConfig::paper_scale(),
                _ => return Err(Error::Config(format!("preset: unknown preset {v:?}"))),
            }
        }
        "variant" => c.set_variant(v.parse::<Variant>()?),
        "batch" => c.batch = num(key, v)?,
        "payload" => c.payload = v.parse().map_err(|e| Error::Config(format!("payload: {e}")))?,
        "alpha" => c.alpha = num(key, v)?,
        "beta" => c.beta = num(key, v)?,
        "xi" => c.xi = num(key, v)?,
        "policy_lr" => c.policy_lr = num(key, v)?,
        "env_lr" => c.env_lr = num(key, v)?,
        "lr_decay_every" => c.lr_decay_every = num(key, v)?,
        "lr_decay_factor" => c.lr_decay_factor = num(key, v)?,
        "iterations" => c.iterations = num(key, v)?,
        "seed" => c.seed = num(key, v)?,
        "update_ratio" => {
            let (p, e) = v
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("update_ratio: expected p:e, got {v:?}")))?;
            c.update_ratio = (num(key, p.trim())?, num(key, e.trim())?);
        }
        "warmup" => c.warmup = num(key, v)?,
        "checkpoint_every" => c.checkpoint_every = num(key, v)?,
        "image_dir" => c.image_dir = (!v.is_empty()).then(|| v.to_string()),
        "image_size" => c.image_size = num(key, v)?,
        "qf" => c.qf = num(key, v)?,
        "synthetic_images" => c.synthetic_images = num(key, v)?,
        "texture" => c.policy.texture_provider = v.parse()?,
        "unet_schedule" => c.policy.unet_schedule = list(key, v)?,
        "dct_groups" => c.policy.dct_groups = num(key, v)?,
        "dct_width" => c.policy.dct_width = num(key, v)?,
        "msu_upsampler" => c.policy.msu_upsampler = if v.is_empty() { Vec::new() } else { list(key, v)? },
        "leaky_slope" => c.policy.leaky_slope = num(key, v)?,
        "output_bias" => c.policy.output_bias = num(key, v)?,
        "level_shift" => c.policy.level_shift = num(key, v)?,
        "bn_momentum" => {
            let m = num(key, v)?;
            c.policy.bn.momentum = m;
            c.env.bn.momentum = m;
        }
        "bn_eps" => {
            let e = num(key, v)?;
            c.policy.bn.eps = e;
            c.env.bn.eps = e;
        }
        "bank" => c.env.filter_bank = v.parse()?,
        "truncation" => c.env.truncation = num(key, v)?,
        "env_widths" => c.env.widths = list(key, v)?,
        "env_kernels" => c.env.kernels = list(key, v)?,
        "env_repeats" => c.env.group_repeats = num(key, v)?,
        "pool_size" => c.env.pool_size = num(key, v)?,
        "pool_stride" => c.env.pool_stride = num(key, v)?,
        _ => return Err(Error::Config(format!("unknown key {key:?}"))),
    }
    Ok(())
}

/// Builds a configuration from defaults plus `pairs`, with `preset` and
/// `variant` applied first.
pub fn build(pairs: &[(String, String)]) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    for first in ["preset", "variant"] {
        if let Some((k, v)) = pairs.iter().find(|(k, _)| k == first) {
            apply(&mut c, k, v)?;
        }
    }
    for (k, v) in pairs {
        if k != "preset" && k != "variant" {
            apply(&mut c, k, v)?;
        }
    }
    c.validate()?;
    Ok(c)
}

/// Reads a configuration file (if any) and overrides it with `flags`.
pub fn load_config(path: Option<&Path>, flags: &[(String, String)]) -> Result<TrainConfig> {
    let mut pairs = match path {
        Some(p) => parse_pairs(&std::fs::read_to_string(p)?)?,
        None => Vec::new(),
    };
    for (k, v) in flags {
        if !KEYS.contains(&k.as_str()) {
            return Err(Error::Config(format!("unknown key {k:?}")));
        }
        match pairs.iter_mut().find(|(e, _)| e == k) {
            Some(slot) => slot.1 = v.clone(),
            None => pairs.push((k.clone(), v.clone())),
        }
    }
    build(&pairs)
}

/// Complete `key = value` snapshot; [`from_kv`] restores it exactly.
pub fn to_kv(c: &TrainConfig) -> String {
    let p = &c.policy;
    let e = &c.env;
    let lines = [
        ("variant", c.variant.to_string()),
        ("batch", c.batch.to_string()),
        ("payload", c.payload.to_string()),
        ("alpha", format!("{:?}", c.alpha)),
        ("beta", format!("{:?}", c.beta)),
        ("xi", format!("{:?}", c.xi)),
        ("policy_lr", format!("{:?}", c.policy_lr)),
        ("env_lr", format!("{:?}", c.env_lr)),
        ("lr_decay_every", c.lr_decay_every.to_string()),
        ("lr_decay_factor", format!("{:?}", c.lr_decay_factor)),
        ("iterations", c.iterations.to_string()),
        ("seed", c.seed.to_string()),
        ("update_ratio", format!("{}:{}", c.update_ratio.0, c.update_ratio.1)),
        ("warmup", c.warmup.to_string()),
        ("checkpoint_every", c.checkpoint_every.to_string()),
        ("image_dir", c.image_dir.clone().unwrap_or_default()),
        ("image_size", c.image_size.to_string()),
        ("qf", c.qf.to_string()),
        ("synthetic_images", c.synthetic_images.to_string()),
        ("texture", p.texture_provider.to_string()),
        ("unet_schedule", join(&p.unet_schedule)),
        ("dct_groups", p.dct_groups.to_string()),
        ("dct_width", p.dct_width.to_string()),
        ("msu_upsampler", join(&p.msu_upsampler)),
        ("leaky_slope", format!("{:?}", p.leaky_slope)),
        ("output_bias", format!("{:?}", p.output_bias)),
        ("level_shift", p.level_shift.to_string()),
        ("bn_momentum", format!("{:?}", p.bn.momentum)),
        ("bn_eps", format!("{:?}", p.bn.eps)),
        ("bank", e.filter_bank.to_string()),
        ("truncation", format!("{:?}", e.truncation)),
        ("env_widths", join(&e.widths)),
        ("env_kernels", join(&e.kernels)),
        ("env_repeats", e.group_repeats.to_string()),
        ("pool_size", e.pool_size.to_string()),
        ("pool_stride", e.pool_stride.to_string()),
    ];
    lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn from_kv(text: &str) -> Result<TrainConfig> {
    build(&parse_pairs(text)?)
}
