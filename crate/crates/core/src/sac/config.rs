use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Algorithm variants compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    /// Two critics, one critic update per environment step.
    Sac,
    /// Plain SAC with 20 critic updates per step.
    SacUtd20,
    /// Large ensemble, minimum over a random subset for targets.
    Redq,
    /// Dropout and LayerNorm critics.
    Droq,
    /// LayerNorm critics without dropout.
    LayerNormOnly,
    /// Dropout critics without LayerNorm.
    DropoutOnly,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Sac,
        Variant::SacUtd20,
        Variant::Redq,
        Variant::Droq,
        Variant::LayerNormOnly,
        Variant::DropoutOnly,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Sac => "SAC",
            Variant::SacUtd20 => "SAC-UTD20",
            Variant::Redq => "REDQ",
            Variant::Droq => "DroQ",
            Variant::LayerNormOnly => "LN",
            Variant::DropoutOnly => "Dropout",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.label().to_string()
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        Ok(match norm.as_str() {
            "sac" | "sac-utd1" => Variant::Sac,
            "sac-utd20" => Variant::SacUtd20,
            "redq" => Variant::Redq,
            "droq" => Variant::Droq,
            "ln" | "ln-only" | "layernorm" | "layer-norm" => Variant::LayerNormOnly,
            "dropout" | "dropout-only" => Variant::DropoutOnly,
            _ => return Err(Error::Config(format!("unknown agent variant '{s}'"))),
        })
    }
}

/// Learner hyperparameters. [`AgentConfig::for_variant`] fills in the
/// variant's defaults; every field may be overridden afterwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub variant: Variant,
    pub n_ensemble: usize,
    pub target_subset: usize,
    pub utd_ratio: usize,
    pub discount: f64,
    pub ema_rate: f64,
    pub dropout_rate: f64,
    pub layer_norm: bool,
    /// Subtract `α·log π` inside the bootstrap target.
    pub entropy_in_target: bool,
    /// Include `α·log π` in the actor objective.
    pub entropy_in_actor: bool,
    /// Temperature target; `None` means minus the action dimension.
    pub target_entropy: Option<f64>,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub init_alpha: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self::for_variant(Variant::Droq)
    }
}

impl AgentConfig {
    pub fn for_variant(variant: Variant) -> Self {
        let base = Self {
            variant,
            n_ensemble: 2,
            target_subset: 2,
            utd_ratio: 20,
            discount: 0.99,
            ema_rate: 0.005,
            dropout_rate: 0.0,
            layer_norm: false,
            entropy_in_target: true,
            entropy_in_actor: true,
            target_entropy: None,
            batch_size: 256,
            hidden: vec![256, 256],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            init_alpha: 1.0,
            log_std_min: -10.0,
            log_std_max: 2.0,
        };
        match variant {
            Variant::Sac => Self {
                utd_ratio: 1,
                ..base
            },
            Variant::SacUtd20 => base,
            Variant::Redq => Self {
                n_ensemble: 10,
                ..base
            },
            Variant::Droq => Self {
                dropout_rate: 0.01,
                layer_norm: true,
                ..base
            },
            Variant::LayerNormOnly => Self {
                layer_norm: true,
                ..base
            },
            Variant::DropoutOnly => Self {
                dropout_rate: 0.01,
                ..base
            },
        }
    }

    pub fn target_entropy_for(&self, act_dim: usize) -> f64 {
        self.target_entropy.unwrap_or(-(act_dim as f64))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_ensemble == 0 {
            return fail("n_ensemble must be at least 1".into());
        }
        if self.target_subset == 0 || self.target_subset > self.n_ensemble {
            return fail(format!(
                "target_subset {} must lie in 1..={}",
                self.target_subset, self.n_ensemble
            ));
        }
        if self.utd_ratio == 0 {
            return fail("utd_ratio must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.discount) {
            return fail(format!("discount {} outside [0, 1)", self.discount));
        }
        if !(self.ema_rate > 0.0 && self.ema_rate <= 1.0) {
            return fail(format!("ema_rate {} outside (0, 1]", self.ema_rate));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return fail(format!("invalid hidden sizes {:?}", self.hidden));
        }
        if !(self.init_alpha > 0.0) {
            return fail("init_alpha must be positive".into());
        }
        if !(self.log_std_min < self.log_std_max) {
            return fail("log_std_min must be below log_std_max".into());
        }
        for (name, lr) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("alpha_lr", self.alpha_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}
