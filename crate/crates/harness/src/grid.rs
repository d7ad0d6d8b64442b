//! Experiment grids: a base config plus a `[grid]` table of axes whose
//! Cartesian product is expanded into individual runs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::config::{config_from_table, parse_config, ExperimentConfig, Locator};
use crate::error::{HarnessError, Result};

pub const DEFAULT_CAP: usize = 256;

/// Grid axes in expansion order (the last axis varies fastest), each with
/// the config key it sets.
pub const AXES: [(&str, &str, &str); 11] = [
    ("loss", "loss", "kind"),
    ("reg", "reg", "kind"),
    ("lambda", "reg", "lambda"),
    ("preset", "optimizer", "preset"),
    ("augment", "augment", "spec"),
    ("family", "model", "family"),
    ("sn", "model", "sn"),
    ("cr_mode", "reg", "cr_mode"),
    ("layer_rule", "reg", "layer_rule"),
    ("augment_only", "run", "augment_only"),
    ("residual", "model", "residual"),
];

pub const SWEEP_LAMBDAS: [f64; 4] = [0.1, 1.0, 10.0, 100.0];
pub const SWEEP_REGS: [&str; 4] = ["cr", "gp", "dr", "jsr"];

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    /// The config without its `[grid]` table, as written.
    pub base: toml::Table,
    pub axes: Vec<(String, Vec<toml::Value>)>,
    pub cap: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub id: String,
    /// Axis name to the value label used in the run id.
    pub axes: BTreeMap<String, String>,
    pub config: ExperimentConfig,
}

pub fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Float(f) => format!("{f}"),
        other => other.to_string(),
    }
}

fn id_fragment(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '-' }).collect()
}

fn axis_entry(name: &str) -> Option<(&'static str, &'static str)> {
    AXES.iter().find(|(a, _, _)| *a == name).map(|(_, s, k)| (*s, *k))
}

fn set_key(table: &mut toml::Table, section: &str, key: &str, value: toml::Value) {
    let sec = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    if let toml::Value::Table(t) = sec {
        t.insert(key.to_string(), value);
    }
}

impl GridSpec {
    pub fn parse(text: &str) -> Result<GridSpec> {
        let loc = Locator::new(Some(text));
        let mut table: toml::Table = text.parse().map_err(|e| loc.toml_error(&e))?;
        let grid = match table.remove("grid") {
            Some(toml::Value::Table(g)) => g,
            Some(_) => return Err(loc.err("grid", "must be a table")),
            None => toml::Table::new(),
        };
        // The base must stand on its own, with line numbers for its errors.
        let base_text = toml::to_string(&table).expect("parsed tables serialize");
        if let Err(e) = parse_config(&base_text) {
            return Err(match e {
                HarnessError::Config { key, message, .. } => loc.err(&key, message),
                other => other,
            });
        }
        let mut cap = DEFAULT_CAP;
        let mut axes = Vec::new();
        for (name, value) in &grid {
            let key = format!("grid.{name}");
            if name == "cap" {
                cap = value
                    .as_integer()
                    .filter(|&c| c >= 1)
                    .ok_or_else(|| loc.err(&key, "must be a positive integer"))? as usize;
                continue;
            }
            if axis_entry(name).is_none() {
                let known: Vec<&str> = AXES.iter().map(|a| a.0).collect();
                return Err(loc.err(&key, format!("unknown axis (expected one of {})", known.join(", "))));
            }
            let values = value.as_array().filter(|a| !a.is_empty()).ok_or_else(|| loc.err(&key, "must be a non-empty array"))?;
            axes.push((name.clone(), values.clone()));
        }
        axes.sort_by_key(|(name, _)| AXES.iter().position(|a| a.0 == name));
        let spec = GridSpec { base: table, axes, cap };
        if let Err(e) = spec.expand() {
            return Err(match e {
                HarnessError::Config { key, message, .. } => {
                    // Axis values live under [grid], not at the key they set.
                    let line = loc.line_of(&key).or_else(|| {
                        AXES.iter()
                            .find(|(_, s, k)| format!("{s}.{k}") == key)
                            .and_then(|(a, _, _)| loc.line_of(&format!("grid.{a}")))
                    });
                    HarnessError::config(line, key, message)
                }
                other => other,
            });
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<GridSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        GridSpec::parse(&text)
    }

    /// The `{0.1, 1, 10, 100} × {cr, gp, dr, jsr}` matrix around a base config.
    pub fn sweep_lambda(base_text: &str) -> Result<GridSpec> {
        let loc = Locator::new(Some(base_text));
        let table: toml::Table = base_text.parse().map_err(|e| loc.toml_error(&e))?;
        if table.contains_key("grid") {
            return Err(loc.err("grid", "sweep-lambda takes a plain config, not a grid"));
        }
        parse_config(base_text)?;
        let spec = GridSpec {
            base: table,
            axes: vec![
                ("reg".into(), SWEEP_REGS.iter().map(|r| toml::Value::String(r.to_string())).collect()),
                ("lambda".into(), SWEEP_LAMBDAS.iter().map(|&l| toml::Value::Float(l)).collect()),
            ],
            cap: DEFAULT_CAP,
        };
        spec.expand()?;
        Ok(spec)
    }

    pub fn size(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    pub fn base_id(&self) -> String {
        self.base
            .get("run")
            .and_then(|r| r.get("id"))
            .and_then(|v| v.as_str())
            .unwrap_or("run")
            .to_string()
    }

    pub fn expand(&self) -> Result<Vec<GridPoint>> {
        let size = self.size();
        if size > self.cap {
            return Err(HarnessError::config(
                None,
                "grid.cap",
                format!("grid has {size} configurations, above the cap of {}", self.cap),
            ));
        }
        let base_id = self.base_id();
        let mut points = Vec::with_capacity(size);
        let mut seen = BTreeSet::new();
        for flat in 0..size {
            let mut table = self.base.clone();
            let mut labels = BTreeMap::new();
            let mut parts = Vec::new();
            let mut rem = flat;
            let mut picks = vec![0; self.axes.len()];
            for (i, (_, values)) in self.axes.iter().enumerate().rev() {
                picks[i] = rem % values.len();
                rem /= values.len();
            }
            for ((name, values), &pick) in self.axes.iter().zip(&picks) {
                let value = values[pick].clone();
                let (section, key) = axis_entry(name).expect("axes are checked on parse");
                let label = value_label(&value);
                parts.push(format!("{name}-{}", id_fragment(&label)));
                labels.insert(name.clone(), label);
                set_key(&mut table, section, key, value);
            }
            let id = if parts.is_empty() { base_id.clone() } else { format!("{base_id}__{}", parts.join("_")) };
            if !seen.insert(id.clone()) {
                return Err(HarnessError::config(None, "grid", format!("duplicate run id {id}")));
            }
            set_key(&mut table, "run", "id", toml::Value::String(id.clone()));
            let config = config_from_table(table).map_err(|e| match e {
                HarnessError::Config { key, message, .. } => HarnessError::config(None, key, format!("in {id}: {message}")),
                other => other,
            })?;
            points.push(GridPoint { id, axes: labels, config });
        }
        Ok(points)
    }
}
