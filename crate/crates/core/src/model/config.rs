use serde::{Deserialize, Serialize};

use crate::geometry::ShapeKind;

/// How the classification term enters the matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchCostKind {
    /// `-focal(q, c) + l1(p, target)`, with the focal loss negated.
    #[default]
    NegFocal,
    /// `-q[c] + l1(p, target)`, the usual DETR-style probability cost.
    NegProb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// One-to-one shape capacity.
    #[serde(rename = "M")]
    pub m: usize,
    /// Keypoints per shape.
    #[serde(rename = "N")]
    pub n: usize,
    /// One-to-many shape capacity.
    #[serde(rename = "T")]
    pub t: usize,
    /// Ground-truth repetition factor of the one-to-many branch; 0 disables it.
    #[serde(rename = "K")]
    pub k: usize,
    /// Embedding width.
    #[serde(rename = "D")]
    pub d: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub patch_px: usize,
    pub num_classes: usize,
    pub ffn_dim: usize,
    pub conf_threshold: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub match_cost: MatchCostKind,
}

impl ModelConfig {
    /// Defaults for a chart kind: lines use M=4, N=14; bars M=4, N=2; pies
    /// M=8, N=3. T is always 3M and K is 3.
    pub fn preset(kind: ShapeKind) -> Self {
        let (m, n) = match kind {
            ShapeKind::Bar => (4, 2),
            ShapeKind::Pie => (8, 3),
            _ => (4, 14),
        };
        Self {
            m,
            n,
            t: 3 * m,
            k: 3,
            d: 32,
            heads: 4,
            enc_layers: 1,
            dec_layers: 2,
            patch_px: 8,
            num_classes: 3,
            ffn_dim: 64,
            conf_threshold: 0.5,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            match_cost: MatchCostKind::NegFocal,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let checks = [
            (self.m >= 1, "M must be at least 1".to_string()),
            (self.n >= 2, "N must be at least 2".to_string()),
            (self.t >= 1, "T must be at least 1".to_string()),
            (self.d >= 1 && self.heads >= 1, "D and heads must be positive".to_string()),
            (
                self.d % self.heads.max(1) == 0,
                format!("D={} is not divisible by heads={}", self.d, self.heads),
            ),
            (self.patch_px >= 1, "patch_px must be at least 1".to_string()),
            (self.ffn_dim >= 1, "ffn_dim must be at least 1".to_string()),
            (
                self.num_classes == ShapeKind::CLASSES.len(),
                format!("num_classes must be {}", ShapeKind::CLASSES.len()),
            ),
            (
                self.conf_threshold > 0.0 && self.conf_threshold < 1.0,
                format!("conf_threshold {} must lie in (0, 1)", self.conf_threshold),
            ),
            (
                (0.0..=1.0).contains(&self.focal_alpha) && self.focal_gamma >= 0.0,
                format!("focal alpha {} / gamma {} out of range", self.focal_alpha, self.focal_gamma),
            ),
        ];
        match checks.into_iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(msg),
            None => Ok(()),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    /// Whether the one-to-many branch contributes to training.
    pub fn one_to_many_enabled(&self) -> bool {
        self.k > 0
    }
}
