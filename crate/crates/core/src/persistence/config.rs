//! Flat `key = value` configuration.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{PncError, Result};
use crate::model::{LeafMode, ModelOptions};
use crate::numerics::DEFAULT_INPUT_FLOOR;
use crate::structure::{build_1d_structure_with_windows, build_2d_structure, CircuitStructure, LayerKind};
use crate::training::{Objective, TrainConfig};

/// Circuit geometry: a chain of variables or an image grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Geometry {
    Chain { num_vars: usize },
    Grid { height: usize, width: usize },
}

/// Resolved configuration. Every field has a default, so an empty file is a
/// complete configuration (a 28x28 grid of 256-valued pixels).
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub geometry: Geometry,
    pub components: usize,
    pub leaf_components: usize,
    pub nu: usize,
    /// Per-internal-layer window overrides for chains.
    pub nu_per_layer: Vec<usize>,
    pub layer_kind: LayerKind,
    pub weight_net_depth: usize,
    pub weight_net_hidden: usize,
    pub num_classes: usize,
    pub leaf_mode: LeafMode,
    pub categories: usize,
    pub input_floor: f64,
    pub train: TrainConfig,
    pub images: Option<String>,
    pub labels: Option<String>,
    /// Use only the first `n` samples of the data files.
    pub max_samples: Option<usize>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            geometry: Geometry::Grid {
                height: 28,
                width: 28,
            },
            components: 12,
            leaf_components: 12,
            nu: 1,
            nu_per_layer: Vec::new(),
            layer_kind: LayerKind::Neural,
            weight_net_depth: 1,
            weight_net_hidden: 0,
            num_classes: 1,
            leaf_mode: LeafMode::Categorical,
            categories: 256,
            input_floor: DEFAULT_INPUT_FLOOR,
            train: TrainConfig::default(),
            images: None,
            labels: None,
            max_samples: None,
        }
    }
}

const KEYS: &[&str] = &[
    "height",
    "width",
    "num_vars",
    "components",
    "leaf_components",
    "nu",
    "nu_per_layer",
    "layer_kind",
    "weight_net_depth",
    "weight_net_hidden",
    "num_classes",
    "leaf_mode",
    "categories",
    "input_floor",
    "learning_rate",
    "batch_size",
    "epochs",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "objective",
    "seed",
    "val_fraction",
    "weight_decay",
    "images",
    "labels",
    "max_samples",
];

struct Entries {
    values: HashMap<&'static str, (usize, String)>,
}

impl Entries {
    fn line(&self, key: &str) -> usize {
        self.values.get(key).map_or(0, |(l, _)| *l)
    }

    fn get<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some((line, raw)) => raw
                .parse()
                .map(Some)
                .map_err(|_| PncError::config(*line, format!("{key}: expected {what}, got {raw:?}"))),
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(_, v)| v.as_str())
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut entries = Entries {
            values: HashMap::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let content = line.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| PncError::config(n, format!("expected `key = value`, got {content:?}")))?;
            let key = key.trim();
            let known = KEYS
                .iter()
                .find(|k| **k == key)
                .ok_or_else(|| PncError::config(n, format!("unknown key {key:?}")))?;
            if entries
                .values
                .insert(known, (n, value.trim().to_string()))
                .is_some()
            {
                return Err(PncError::config(n, format!("duplicate key {key:?}")));
            }
        }
        Self::resolve(&entries)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| PncError::io(path, e))?;
        Config::parse(&text)
    }

    fn resolve(e: &Entries) -> Result<Config> {
        let d = Config::default();
        let int = "a non-negative integer";
        let real = "a number";
        let height: Option<usize> = e.get("height", int)?;
        let width: Option<usize> = e.get("width", int)?;
        let num_vars: Option<usize> = e.get("num_vars", int)?;
        let geometry = match (num_vars, height, width) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                return Err(PncError::config(
                    e.line("num_vars"),
                    "num_vars cannot be combined with height/width",
                ))
            }
            (Some(n), None, None) => Geometry::Chain { num_vars: n },
            (None, h, w) => Geometry::Grid {
                height: h.unwrap_or(28),
                width: w.unwrap_or(28),
            },
        };
        let components = e.get("components", int)?.unwrap_or(d.components);
        let layer_kind = match e.raw("layer_kind") {
            None => d.layer_kind,
            Some(s) => LayerKind::parse(s).ok_or_else(|| {
                PncError::config(
                    e.line("layer_kind"),
                    format!("layer_kind must be plain, quotient or neural, got {s:?}"),
                )
            })?,
        };
        let leaf_mode = match e.raw("leaf_mode") {
            None => d.leaf_mode,
            Some(s) => LeafMode::parse(s).ok_or_else(|| {
                PncError::config(
                    e.line("leaf_mode"),
                    format!("leaf_mode must be categorical or two_input, got {s:?}"),
                )
            })?,
        };
        let leaf_default = if leaf_mode == LeafMode::TwoInput { 2 } else { components };
        let nu_per_layer = match e.raw("nu_per_layer") {
            None | Some("") => Vec::new(),
            Some(s) => s
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| {
                    PncError::config(
                        e.line("nu_per_layer"),
                        format!("nu_per_layer: expected comma-separated integers, got {s:?}"),
                    )
                })?,
        };
        let objective = match e.raw("objective") {
            None => d.train.objective,
            Some(s) => Objective::parse(s).ok_or_else(|| {
                PncError::config(
                    e.line("objective"),
                    format!("objective must be nll or cross_entropy, got {s:?}"),
                )
            })?,
        };
        let text = |key: &str| e.raw(key).map(str::to_string).filter(|s| !s.is_empty());
        let cfg = Config {
            geometry,
            components,
            leaf_components: e.get("leaf_components", int)?.unwrap_or(leaf_default),
            nu: e.get("nu", int)?.unwrap_or(d.nu),
            nu_per_layer,
            layer_kind,
            weight_net_depth: e.get("weight_net_depth", int)?.unwrap_or(d.weight_net_depth),
            weight_net_hidden: e.get("weight_net_hidden", int)?.unwrap_or(d.weight_net_hidden),
            num_classes: e.get("num_classes", int)?.unwrap_or(d.num_classes),
            leaf_mode,
            categories: e.get("categories", int)?.unwrap_or(d.categories),
            input_floor: e.get("input_floor", real)?.unwrap_or(d.input_floor),
            train: TrainConfig {
                learning_rate: e.get("learning_rate", real)?.unwrap_or(d.train.learning_rate),
                batch_size: e.get("batch_size", int)?.unwrap_or(d.train.batch_size),
                epochs: e.get("epochs", int)?.unwrap_or(d.train.epochs),
                adam_beta1: e.get("adam_beta1", real)?.unwrap_or(d.train.adam_beta1),
                adam_beta2: e.get("adam_beta2", real)?.unwrap_or(d.train.adam_beta2),
                adam_epsilon: e.get("adam_epsilon", real)?.unwrap_or(d.train.adam_epsilon),
                objective,
                seed: e.get("seed", int)?.unwrap_or(d.train.seed),
                val_fraction: e.get("val_fraction", real)?.unwrap_or(d.train.val_fraction),
                weight_decay: e.get("weight_decay", real)?.unwrap_or(d.train.weight_decay),
            },
            images: text("images"),
            labels: text("labels"),
            max_samples: e.get("max_samples", int)?,
        };
        cfg.check(|key| e.line(key))?;
        Ok(cfg)
    }

    /// Constraint checks; `line_of` maps a key to the line it came from.
    fn check(&self, line_of: impl Fn(&str) -> usize) -> Result<()> {
        let fail = |key: &str, msg: String| Err(PncError::config(line_of(key), msg));
        match self.geometry {
            Geometry::Chain { num_vars: 0 } => return fail("num_vars", "num_vars must be >= 1".into()),
            Geometry::Grid { height, width } if height == 0 || width == 0 => {
                return fail(if height == 0 { "height" } else { "width" }, "grid sides must be >= 1".into())
            }
            _ => {}
        }
        if self.components == 0 {
            return fail("components", "components must be >= 1".into());
        }
        if self.leaf_components == 0 {
            return fail("leaf_components", "leaf_components must be >= 1".into());
        }
        if self.leaf_mode == LeafMode::TwoInput && self.leaf_components != 2 {
            return fail("leaf_components", "two_input leaves need leaf_components = 2".into());
        }
        if self.leaf_mode == LeafMode::Categorical && !(1..=256).contains(&self.categories) {
            return fail("categories", format!("categories must lie in 1..=256, got {}", self.categories));
        }
        if !(1..=2).contains(&self.weight_net_depth) {
            return fail("weight_net_depth", "weight_net_depth must be 1 or 2".into());
        }
        if self.weight_net_depth == 2 && self.weight_net_hidden == 0 {
            return fail("weight_net_hidden", "depth-2 weight networks need weight_net_hidden >= 1".into());
        }
        if self.num_classes == 0 {
            return fail("num_classes", "num_classes must be >= 1".into());
        }
        if !self.input_floor.is_finite() {
            return fail("input_floor", "input_floor must be finite".into());
        }
        if !self.nu_per_layer.is_empty() && !matches!(self.geometry, Geometry::Chain { .. }) {
            return fail("nu_per_layer", "nu_per_layer applies to chains only".into());
        }
        if let Err(PncError::Input(msg)) = self.train.validate() {
            let key = msg.split_whitespace().next().unwrap_or("").to_string();
            return fail(&key, msg);
        }
        if self.max_samples == Some(0) {
            return fail("max_samples", "max_samples must be >= 1".into());
        }
        Ok(())
    }

    pub fn num_variables(&self) -> usize {
        match self.geometry {
            Geometry::Chain { num_vars } => num_vars,
            Geometry::Grid { height, width } => height * width,
        }
    }

    pub fn build_structure(&self) -> Result<CircuitStructure> {
        match self.geometry {
            Geometry::Chain { num_vars } => build_1d_structure_with_windows(
                num_vars,
                self.components,
                self.leaf_components,
                self.nu,
                &self.nu_per_layer,
                self.layer_kind,
            ),
            Geometry::Grid { height, width } => {
                build_2d_structure(height, width, self.components, self.leaf_components, self.layer_kind)
            }
        }
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions {
            leaf_mode: self.leaf_mode,
            num_categories: self.categories,
            num_classes: self.num_classes,
            net_depth: self.weight_net_depth,
            net_hidden: self.weight_net_hidden,
            input_floor: self.input_floor,
        }
    }

    /// Every key with its resolved value; `parse(render(c)) == c`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        match self.geometry {
            Geometry::Chain { num_vars } => put("num_vars", num_vars.to_string()),
            Geometry::Grid { height, width } => {
                put("height", height.to_string());
                put("width", width.to_string());
            }
        }
        put("components", self.components.to_string());
        put("leaf_components", self.leaf_components.to_string());
        put("nu", self.nu.to_string());
        if !self.nu_per_layer.is_empty() {
            let list: Vec<String> = self.nu_per_layer.iter().map(|v| v.to_string()).collect();
            put("nu_per_layer", list.join(","));
        }
        put("layer_kind", self.layer_kind.as_str().to_string());
        put("weight_net_depth", self.weight_net_depth.to_string());
        put("weight_net_hidden", self.weight_net_hidden.to_string());
        put("num_classes", self.num_classes.to_string());
        put("leaf_mode", self.leaf_mode.as_str().to_string());
        put("categories", self.categories.to_string());
        put("input_floor", self.input_floor.to_string());
        let t = &self.train;
        put("learning_rate", t.learning_rate.to_string());
        put("batch_size", t.batch_size.to_string());
        put("epochs", t.epochs.to_string());
        put("adam_beta1", t.adam_beta1.to_string());
        put("adam_beta2", t.adam_beta2.to_string());
        put("adam_epsilon", t.adam_epsilon.to_string());
        put("objective", t.objective.as_str().to_string());
        put("seed", t.seed.to_string());
        put("val_fraction", t.val_fraction.to_string());
        put("weight_decay", t.weight_decay.to_string());
        if let Some(p) = &self.images {
            put("images", p.clone());
        }
        if let Some(p) = &self.labels {
            put("labels", p.clone());
        }
        if let Some(n) = self.max_samples {
            put("max_samples", n.to_string());
        }
        out
    }
}
