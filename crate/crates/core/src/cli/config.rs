//! Run configuration files: TOML (`key = value`) or JSON, with every
//! unspecified key taking its preset default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::ShapeKind;
use crate::model::{MatchCostKind, ModelConfig};
use crate::training::TrainConfig;

/// Model keys a config file may set. `T` defaults to `3 * M` after `M` is
/// resolved.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(rename = "M")]
    pub m: Option<usize>,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    #[serde(rename = "T")]
    pub t: Option<usize>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    #[serde(rename = "D")]
    pub d: Option<usize>,
    pub heads: Option<usize>,
    pub enc_layers: Option<usize>,
    pub dec_layers: Option<usize>,
    pub patch_px: Option<usize>,
    pub num_classes: Option<usize>,
    pub ffn_dim: Option<usize>,
    pub conf_threshold: Option<f64>,
    pub focal_alpha: Option<f64>,
    pub focal_gamma: Option<f64>,
    pub match_cost: Option<MatchCostKind>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    /// Selects the model preset; when absent the caller's default applies.
    pub chart_kind: Option<ShapeKind>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
}

/// A fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub chart_kind: ShapeKind,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ConfigFile {
    /// Parses JSON when the text starts with `{`, TOML otherwise.
    pub fn parse(text: &str) -> Result<Self, String> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string().trim_end().replace('\n', " "))
        }
    }

    pub fn resolve(&self, default_kind: ShapeKind) -> Result<RunConfig, String> {
        let chart_kind = self.chart_kind.unwrap_or(default_kind);
        if chart_kind == ShapeKind::NoObject {
            return Err("chart_kind must be bar, line or pie".into());
        }
        let mut model = ModelConfig::preset(chart_kind);
        let s = &self.model;
        if let Some(m) = s.m {
            model.m = m;
        }
        model.t = s.t.unwrap_or(3 * model.m);
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = s.$field {
                    model.$field = v;
                })*
            };
        }
        set!(n, k, d, heads, enc_layers, dec_layers, patch_px, num_classes, ffn_dim);
        set!(conf_threshold, focal_alpha, focal_gamma, match_cost);
        model.validate()?;
        self.train.validate().map_err(|e| e.to_string())?;
        Ok(RunConfig {
            chart_kind,
            model,
            train: self.train.clone(),
        })
    }
}

/// Reads a config file; an absent `chart_kind` selects the line preset.
pub fn parse_config(path: &Path) -> Result<RunConfig, String> {
    read_config(path)?.resolve(ShapeKind::Line)
}

pub fn read_config(path: &Path) -> Result<ConfigFile, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    ConfigFile::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> Result<RunConfig, String> {
        ConfigFile::parse(text)?.resolve(ShapeKind::Line)
    }

    #[test]
    fn empty_config_gives_line_defaults() {
        let c = resolve("").unwrap();
        assert_eq!((c.model.m, c.model.n, c.model.t, c.model.k), (4, 14, 12, 3));
        assert_eq!((c.model.focal_alpha, c.model.focal_gamma, c.model.conf_threshold), (0.25, 2.0, 0.5));
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(resolve("{}").unwrap(), c);
    }

    #[test]
    fn t_follows_m_unless_set() {
        let c = resolve("[model]\nM = 8\n").unwrap();
        assert_eq!((c.model.m, c.model.t), (8, 24));
        let c = resolve(r#"{"model": {"M": 8, "T": 30}}"#).unwrap();
        assert_eq!((c.model.m, c.model.t), (8, 30));
        for k in 0..=5 {
            assert_eq!(resolve(&format!("[model]\nK = {k}\n")).unwrap().model.k, k);
        }
    }

    #[test]
    fn presets_follow_chart_kind() {
        let c = resolve("chart_kind = \"pie\"\n[train]\nsteps = 7\n").unwrap();
        assert_eq!((c.chart_kind, c.model.m, c.model.n, c.model.t), (ShapeKind::Pie, 8, 3, 24));
        assert_eq!(c.train.steps, 7);
        assert_eq!(c.train.learning_rate, TrainConfig::default().learning_rate);
    }

    #[test]
    fn bad_keys_and_types_are_errors() {
        assert!(resolve("[model]\nQ = 1\n").unwrap_err().contains('Q'));
        assert!(resolve("bogus = 1\n").is_err());
        assert!(resolve("[train]\nsteps = \"many\"\n").is_err());
        assert!(resolve(r#"{"model": {"M": -1}}"#).is_err());
        assert!(resolve("[train]\nsteps = 0\n").is_err());
        assert!(resolve("[model]\nD = 30\nheads = 4\n").is_err());
    }
}
