//! Run configuration: a flat INI file with `[operator]`, `[task]` and `[output]` sections.
//!
//! ```text
//! file    := { line }
//! line    := blank | comment | section | entry
//! comment := ('#' | ';') text
//! section := '[' name ']'
//! entry   := key '=' value          (value runs to end of line; '#' starts a trailing comment)
//!            { indented-line }      (indented lines without '=' continue the value)
//! ```
//!
//! Keys are case-sensitive; unknown sections, unknown keys and repeated keys are errors.
//! Lists are separated by whitespace or commas. See the README for every key.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use kolmo::coeff::{parse_expr, CoefficientField, Expr, OperatorSpec};
use kolmo::group::validate_blocks;
use nalgebra::DMatrix;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key `{key}` in [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("key `{key}` in [{section}] given twice")]
    Duplicate { section: String, key: String },
    #[error("missing required key `{key}` in [{section}]")]
    Missing { section: String, key: String },
    #[error("[{section}] {key} = {value:?}: {msg}")]
    Value {
        section: String,
        key: String,
        value: String,
        msg: String,
    },
    #[error("invalid operator: {0}")]
    Operator(String),
    #[error("override `{0}` must look like key=value")]
    Override(String),
}

const OPERATOR_KEYS: &[&str] = &["blocks", "b", "c", "mu", "bound"];

const TASK_KEYS: &[&str] = &[
    "task",
    "t",
    "big_t",
    "s",
    "x",
    "y",
    "n",
    "seed",
    "steps",
    "scheme",
    "half",
    "nodes",
    "phi",
    "saves",
    "dt",
    "lambda",
    "tau_min",
    "tau_max",
    "times",
    "probe_half",
    "probe_nodes",
    "eta",
    "sigma",
    "tau",
    "k_cfg",
    "eps",
    "rho",
    "r",
    "p",
    "z0_t",
    "z0_x",
    "tolerance",
    "density",
    "data",
    "samples",
];

const OUTPUT_KEYS: &[&str] = &["dir", "formats"];

/// Coefficient keys `a<i><j>` (diffusion entries) and `drift<i>` (first-order terms), 1-based.
fn is_coefficient_key(key: &str) -> bool {
    let digits = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_digit() && c != '0');
    match key.strip_prefix("drift") {
        Some(rest) => rest.len() == 1 && digits(rest),
        None => key
            .strip_prefix('a')
            .is_some_and(|rest| rest.len() == 2 && digits(rest)),
    }
}

/// Parsed but untyped sections.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    pub sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        let mut last_key: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            let indented = raw.starts_with([' ', '\t']);
            if indented && !line.contains('=') && !line.starts_with('[') {
                let (Some(section), Some(key)) = (&current, &last_key) else {
                    return Err(ConfigError::Syntax {
                        line: line_no,
                        msg: "continuation line without a preceding entry".into(),
                    });
                };
                let more = line.split('#').next().unwrap_or("").trim();
                let value = sections
                    .get_mut(section)
                    .and_then(|m| m.get_mut(key))
                    .expect("entry exists");
                value.push(' ');
                value.push_str(more);
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line: line_no,
                    msg: "unterminated section header".into(),
                })?;
                let name = name.trim().to_string();
                if !["operator", "task", "output"].contains(&name.as_str()) {
                    return Err(ConfigError::UnknownSection(name));
                }
                sections.entry(name.clone()).or_default();
                current = Some(name);
                last_key = None;
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            let section = current.clone().ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                msg: "entry before any section header".into(),
            })?;
            let value = value.split('#').next().unwrap_or("").trim();
            insert(&mut sections, &section, key.trim(), value)?;
            last_key = Some(key.trim().to_string());
        }
        Ok(Self { sections })
    }

    /// Sets `key` in `section`, replacing any value from the file.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        check_key(section, key)?;
        self.sections
            .entry(section.into())
            .or_default()
            .insert(key.into(), value.trim().into());
        Ok(())
    }

    /// `[section]` blocks with sorted keys: the form that is hashed.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (name, entries) in &self.sections {
            if entries.is_empty() {
                continue;
            }
            let _ = writeln!(out, "[{name}]");
            for (k, v) in entries {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    /// Hex SHA-256 of [`RawConfig::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn section(&self, name: &str) -> Section<'_> {
        static EMPTY: BTreeMap<String, String> = BTreeMap::new();
        Section {
            name: name.to_string(),
            entries: self.sections.get(name).unwrap_or(&EMPTY),
        }
    }
}

fn check_key(section: &str, key: &str) -> Result<(), ConfigError> {
    let known = match section {
        "operator" => OPERATOR_KEYS.contains(&key) || is_coefficient_key(key),
        "task" => TASK_KEYS.contains(&key),
        "output" => OUTPUT_KEYS.contains(&key),
        other => return Err(ConfigError::UnknownSection(other.into())),
    };
    if known {
        Ok(())
    } else {
        Err(ConfigError::UnknownKey {
            section: section.into(),
            key: key.into(),
        })
    }
}

fn insert(
    sections: &mut BTreeMap<String, BTreeMap<String, String>>,
    section: &str,
    key: &str,
    value: &str,
) -> Result<(), ConfigError> {
    check_key(section, key)?;
    let entries = sections.entry(section.into()).or_default();
    if entries.contains_key(key) {
        return Err(ConfigError::Duplicate {
            section: section.into(),
            key: key.into(),
        });
    }
    entries.insert(key.into(), value.into());
    Ok(())
}

/// Typed access to one section.
pub struct Section<'a> {
    name: String,
    entries: &'a BTreeMap<String, String>,
}

impl Section<'_> {
    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn bad(&self, key: &str, value: &str, msg: impl Into<String>) -> ConfigError {
        ConfigError::Value {
            section: self.name.clone(),
            key: key.into(),
            value: value.into(),
            msg: msg.into(),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        self.f64_opt(key).map(|v| v.unwrap_or(default))
    }

    pub fn f64_opt(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(Some(x)),
                _ => Err(self.bad(key, v, "expected a finite number")),
            },
        }
    }

    pub fn f64_required(&self, key: &str) -> Result<f64, ConfigError> {
        self.f64_opt(key)?.ok_or_else(|| ConfigError::Missing {
            section: self.name.clone(),
            key: key.into(),
        })
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| self.bad(key, v, "expected a non-negative integer")),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<u64>()
                .map_err(|_| self.bad(key, v, "expected a non-negative integer")),
        }
    }

    pub fn list_f64(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => split_list(v)
                .map(|s| match s.parse::<f64>() {
                    Ok(x) if x.is_finite() => Ok(x),
                    _ => Err(self.bad(key, v, format!("`{s}` is not a finite number"))),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }

    pub fn list_usize(&self, key: &str) -> Result<Option<Vec<usize>>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => split_list(v)
                .map(|s| {
                    s.parse::<usize>()
                        .map_err(|_| self.bad(key, v, format!("`{s}` is not a count")))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }

    /// A point in `R^d`; missing means the origin.
    pub fn point(&self, key: &str, d: usize) -> Result<Vec<f64>, ConfigError> {
        match self.list_f64(key)? {
            None => Ok(vec![0.0; d]),
            Some(p) if p.len() == d => Ok(p),
            Some(p) => Err(self.bad(
                key,
                self.raw(key).unwrap_or(""),
                format!("expected {d} coordinates, got {}", p.len()),
            )),
        }
    }

    /// One value per axis; a single value is repeated.
    pub fn per_axis_f64(&self, key: &str, d: usize, default: f64) -> Result<Vec<f64>, ConfigError> {
        match self.list_f64(key)? {
            None => Ok(vec![default; d]),
            Some(v) if v.len() == 1 => Ok(vec![v[0]; d]),
            Some(v) if v.len() == d => Ok(v),
            Some(v) => Err(self.bad(
                key,
                self.raw(key).unwrap_or(""),
                format!("expected 1 or {d} values, got {}", v.len()),
            )),
        }
    }

    pub fn per_axis_usize(
        &self,
        key: &str,
        d: usize,
        default: usize,
    ) -> Result<Vec<usize>, ConfigError> {
        match self.list_usize(key)? {
            None => Ok(vec![default; d]),
            Some(v) if v.len() == 1 => Ok(vec![v[0]; d]),
            Some(v) if v.len() == d => Ok(v),
            Some(v) => Err(self.bad(
                key,
                self.raw(key).unwrap_or(""),
                format!("expected 1 or {d} values, got {}", v.len()),
            )),
        }
    }

    pub fn string_or(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    /// Expression in `t, x1, …, xd`.
    pub fn expr_or(&self, key: &str, d: usize, default: &str) -> Result<Expr, ConfigError> {
        let src = self.raw(key).unwrap_or(default);
        parse_expr(src, d).map_err(|e| self.bad(key, src, e.to_string()))
    }
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
}

/// Output formats selected in `[output] formats`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formats {
    pub csv: bool,
    pub json: bool,
    pub svg: bool,
    pub bin: bool,
}

impl Default for Formats {
    fn default() -> Self {
        Self {
            csv: true,
            json: true,
            svg: false,
            bin: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    pub formats: Formats,
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub raw: RawConfig,
    pub spec: OperatorSpec,
    pub output: OutputSpec,
    pub hash: String,
}

impl RunConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let spec = build_operator(&raw)?;
        let output = build_output(&raw)?;
        let hash = raw.hash();
        Ok(Self {
            raw,
            spec,
            output,
            hash,
        })
    }

    pub fn task(&self) -> Section<'_> {
        self.raw.section("task")
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }
}

fn build_output(raw: &RawConfig) -> Result<OutputSpec, ConfigError> {
    let sec = raw.section("output");
    let dir = sec.raw("dir").map(PathBuf::from);
    let formats = match sec.raw("formats") {
        None => Formats::default(),
        Some(v) => {
            let mut f = Formats {
                csv: false,
                json: false,
                svg: false,
                bin: false,
            };
            for item in split_list(v) {
                match item {
                    "csv" => f.csv = true,
                    "json" => f.json = true,
                    "svg" => f.svg = true,
                    "bin" => f.bin = true,
                    other => {
                        return Err(ConfigError::Value {
                            section: "output".into(),
                            key: "formats".into(),
                            value: v.into(),
                            msg: format!("unknown format `{other}` (csv, json, svg, bin)"),
                        })
                    }
                }
            }
            f
        }
    };
    Ok(OutputSpec { dir, formats })
}

/// Builds the operator. Defaults: `a = ½ I`, no first-order terms, `c = 0`, `μ = 2`, `M = 1`.
fn build_operator(raw: &RawConfig) -> Result<OperatorSpec, ConfigError> {
    let sec = raw.section("operator");
    let blocks = sec
        .list_usize("blocks")?
        .ok_or_else(|| ConfigError::Missing {
            section: "operator".into(),
            key: "blocks".into(),
        })?;
    let d: usize = blocks.iter().sum();
    let m0 = blocks.first().copied().unwrap_or(0);
    let entries = sec.list_f64("b")?.ok_or_else(|| ConfigError::Missing {
        section: "operator".into(),
        key: "b".into(),
    })?;
    if entries.len() != d * d {
        return Err(ConfigError::Value {
            section: "operator".into(),
            key: "b".into(),
            value: sec.raw("b").unwrap_or("").into(),
            msg: format!(
                "expected {} entries (d = {d}), got {}",
                d * d,
                entries.len()
            ),
        });
    }
    let drift = validate_blocks(DMatrix::from_row_slice(d, d, &entries), &blocks)
        .map_err(|e| ConfigError::Operator(e.to_string()))?;

    for key in raw
        .sections
        .get("operator")
        .into_iter()
        .flat_map(|m| m.keys())
    {
        let index_ok = |s: &str| s.chars().all(|c| (c as usize - '0' as usize) <= m0);
        if let Some(rest) = key.strip_prefix("drift") {
            if !index_ok(rest) {
                return Err(ConfigError::Operator(format!(
                    "`{key}`: index exceeds m0 = {m0}"
                )));
            }
        } else if let Some(rest) = key.strip_prefix('a') {
            if !index_ok(rest) {
                return Err(ConfigError::Operator(format!(
                    "`{key}`: index exceeds m0 = {m0}"
                )));
            }
        }
    }
    let a: Vec<Vec<String>> = (1..=m0)
        .map(|i| {
            (1..=m0)
                .map(|j| {
                    sec.raw(&format!("a{i}{j}"))
                        .map(str::to_string)
                        .unwrap_or_else(|| if i == j { "0.5".into() } else { "0".into() })
                })
                .collect()
        })
        .collect();
    let first: Vec<String> = (1..=m0)
        .map(|i| sec.raw(&format!("drift{i}")).unwrap_or("0").to_string())
        .collect();
    let a_refs: Vec<Vec<&str>> = a
        .iter()
        .map(|r| r.iter().map(String::as_str).collect())
        .collect();
    let first_refs: Vec<&str> = first.iter().map(String::as_str).collect();
    let bound = sec.f64_or("bound", 1.0)?;
    let field =
        CoefficientField::parse(d, &a_refs, &first_refs, sec.raw("c").unwrap_or("0"), bound)
            .map_err(|e| ConfigError::Operator(e.to_string()))?;
    let mu = sec.f64_or("mu", 2.0)?;
    OperatorSpec::new(drift, Arc::new(field), mu).map_err(|e| ConfigError::Operator(e.to_string()))
}
