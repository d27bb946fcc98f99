//! Flat `key = value` experiment configuration with dotted namespaces.
//!
//! Lines starting with `#` are comments. Later assignments replace earlier
//! ones, and command-line overrides are applied last. The canonical form
//! (sorted `key = value` lines) is what gets hashed and echoed into outputs.

use crate::exit::CliError;
use lpp_core::finite::RadiusStrategy;
use lpp_core::integral::RadiiMode;
use lpp_core::ModelParams;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

/// Keys accepted in configuration files, with a one-line meaning.
pub const KNOWN_KEYS: &[(&str, &str)] = &[
    ("model.a", "row speed a"),
    ("model.b", "column speed b"),
    ("model.ell", "conditioned corner value per unit L"),
    ("geometry.points", "scaled points x,y separated by ';'"),
    ("geometry.r", "fluctuation thresholds r_i"),
    ("geometry.m", "row count M for single-point sweeps"),
    ("geometry.n", "column count N for single-point sweeps"),
    ("geometry.t", "threshold grid start:stop:step or a list"),
    ("geometry.times", "bridge or diagonal times in (0, 1)"),
    ("geometry.shifts", "diagonal shifts s_i"),
    ("geometry.thresholds", "bridge or diagonal thresholds"),
    ("numeric.l", "scale parameter L or a ladder of them"),
    ("numeric.n_max", "series truncation |n| <= n_max"),
    ("numeric.nodes", "trapezoid nodes per circle (0 = by dimension)"),
    ("numeric.radii", "default | steepest:RATIO | geometric:INNER:RATIO"),
    ("numeric.delta", "conditioning window half-width in sigma sqrt(L) units"),
    ("numeric.budget", "maximum number of Monte Carlo fields"),
    ("numeric.samples", "accepted (or plain) Monte Carlo samples"),
    ("numeric.seed", "random seed"),
    ("numeric.identity", "identity names separated by ',' or 'all'"),
    ("numeric.mode", "simulate mode: conditional | unconditional"),
    ("numeric.kind", "limit kind: offdiag | diag | bridge"),
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    entries: BTreeMap<String, String>,
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    CliError::Validation(msg.into()).into()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {}: expected key = value, got '{line}'", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> anyhow::Result<()> {
        let key = key.to_ascii_lowercase();
        if !KNOWN_KEYS.iter().any(|(k, _)| *k == key) {
            return Err(invalid(format!("unknown configuration key '{key}'")));
        }
        self.entries.insert(key, value.to_string());
        Ok(())
    }

    /// `self` with every key of `over` replacing the same key here.
    pub fn overlay(&self, over: &ExperimentConfig) -> ExperimentConfig {
        let mut entries = self.entries.clone();
        entries.extend(over.entries.iter().map(|(k, v)| (k.clone(), v.clone())));
        ExperimentConfig { entries }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> anyhow::Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| invalid(format!("missing required key '{key}'")))
    }

    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &String)> {
        self.entries.iter()
    }

    pub fn f64(&self, key: &str) -> anyhow::Result<f64> {
        parse_f64(key, self.raw(key)?)
    }

    pub fn u64(&self, key: &str) -> anyhow::Result<u64> {
        let raw = self.raw(key)?;
        let v: f64 = parse_f64(key, raw)?;
        if v < 0.0 || v.fract() != 0.0 || v > u64::MAX as f64 {
            return Err(invalid(format!("{key} must be a non-negative integer, got '{raw}'")));
        }
        Ok(v as u64)
    }

    pub fn usize(&self, key: &str) -> anyhow::Result<usize> {
        Ok(self.u64(key)? as usize)
    }

    pub fn positive_i64(&self, key: &str) -> anyhow::Result<i64> {
        let v = self.u64(key)?;
        if v == 0 {
            return Err(invalid(format!("{key} must be at least 1")));
        }
        Ok(v as i64)
    }

    pub fn list(&self, key: &str) -> anyhow::Result<Vec<f64>> {
        let raw = self.raw(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',').map(|s| parse_f64(key, s.trim())).collect()
    }

    /// A list, or a `start:stop:step` grid with `stop` included when hit.
    pub fn grid(&self, key: &str) -> anyhow::Result<Vec<f64>> {
        let raw = self.raw(key)?;
        let parts: Vec<&str> = raw.split(':').collect();
        if parts.len() == 1 {
            return self.list(key);
        }
        if parts.len() != 3 {
            return Err(invalid(format!("{key}: expected start:stop:step, got '{raw}'")));
        }
        let start = parse_f64(key, parts[0].trim())?;
        let stop = parse_f64(key, parts[1].trim())?;
        let step = parse_f64(key, parts[2].trim())?;
        if !(step > 0.0) || stop < start {
            return Err(invalid(format!("{key}: empty or unbounded grid '{raw}'")));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        if count > 1_000_000 {
            return Err(invalid(format!("{key}: grid of {count} points is too large")));
        }
        Ok((0..count).map(|k| start + step * k as f64).collect())
    }

    pub fn points(&self, key: &str) -> anyhow::Result<Vec<(f64, f64)>> {
        let raw = self.raw(key)?;
        raw.split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|pair| {
                let xy: Vec<&str> = pair.split(',').collect();
                if xy.len() != 2 {
                    return Err(invalid(format!("{key}: expected x,y in '{pair}'")));
                }
                Ok((parse_f64(key, xy[0].trim())?, parse_f64(key, xy[1].trim())?))
            })
            .collect()
    }

    pub fn model(&self) -> anyhow::Result<ModelParams> {
        Ok(ModelParams::new(self.f64("model.a")?, self.f64("model.b")?, self.f64("model.ell")?)?)
    }

    pub fn radii_mode(&self) -> anyhow::Result<RadiiMode> {
        let raw = self.raw("numeric.radii")?;
        let parts: Vec<&str> = raw.split(':').map(str::trim).collect();
        let num = |s: &str| parse_f64("numeric.radii", s);
        match parts.as_slice() {
            ["default"] => Ok(RadiiMode::Default),
            ["steepest", ratio] => Ok(RadiiMode::Steepest { ratio: num(ratio)? }),
            ["geometric", inner, ratio] => Ok(RadiiMode::Geometric {
                inner: num(inner)?,
                ratio: num(ratio)?,
            }),
            _ => Err(invalid(format!(
                "numeric.radii must be default, steepest:RATIO or geometric:INNER:RATIO, got '{raw}'"
            ))),
        }
    }

    pub fn radius_strategy(&self) -> anyhow::Result<RadiusStrategy> {
        Ok(match self.radii_mode()? {
            RadiiMode::Default => RadiusStrategy::Default,
            RadiiMode::Steepest { ratio } => RadiusStrategy::Steepest { ratio },
            RadiiMode::Geometric { inner, ratio } => RadiusStrategy::Geometric { inner, ratio },
            RadiiMode::Explicit { .. } => unreachable!("explicit radii are not parsed from configs"),
        })
    }

    /// `None` when `numeric.nodes` is 0 (pick by dimension).
    pub fn nodes(&self) -> anyhow::Result<Option<usize>> {
        let n = self.usize("numeric.nodes")?;
        if n == 0 {
            return Ok(None);
        }
        if n < 8 || n % 2 == 1 {
            return Err(invalid(format!("numeric.nodes must be even and at least 8, got {n}")));
        }
        Ok(Some(n))
    }
}

fn parse_f64(key: &str, raw: &str) -> anyhow::Result<f64> {
    let v: f64 = raw
        .parse()
        .map_err(|_| invalid(format!("{key}: '{raw}' is not a number")))?;
    if !v.is_finite() {
        return Err(invalid(format!("{key}: '{raw}' is not finite")));
    }
    Ok(v)
}
