use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::TraitKappaScale;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    /// Value-loss coefficient.
    pub c1: f64,
    /// Entropy-bonus coefficient.
    pub c2: f64,
    /// Token-wise KL coefficient.
    pub beta: f64,
    /// Mix between batch-wise and trait-wise QWK in the Q reward.
    pub lambda_q: f64,
    pub batch_size: usize,
    pub ppo_epochs: usize,
    pub updates: usize,
    /// Base policy step size; multiplied by `rl_step_scale`.
    pub rl_step_size: f64,
    pub rl_step_scale: f64,
    /// Adam step size for the raw loss weights.
    pub weight_step_size: f64,
    pub max_grad_norm: Option<f64>,
    /// Rollout sampling temperature.
    pub temperature: f64,
    /// Include the KL term at the reward-bearing token and after it.
    pub kl_at_terminal: bool,
    pub trait_scale: TraitKappaScale,
    pub advantage_norm: AdvantageNorm,
    /// Rollout batches used to fit the value head, with the policy frozen,
    /// before the first policy update.
    pub value_warmup: usize,
    pub value_warmup_step_size: f64,
    /// Consecutive non-finite updates tolerated before aborting.
    pub nonfinite_patience: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            c1: 0.5,
            c2: 0.01,
            beta: 0.05,
            lambda_q: 0.5,
            batch_size: 4,
            ppo_epochs: 4,
            updates: 300,
            rl_step_size: 1.41e-6,
            rl_step_scale: 10.0,
            weight_step_size: 1e-3,
            max_grad_norm: Some(1.0),
            temperature: 1.0,
            kl_at_terminal: true,
            trait_scale: TraitKappaScale::Pooled,
            advantage_norm: AdvantageNorm::Batch,
            value_warmup: 25,
            value_warmup_step_size: 1e-2,
            nonfinite_patience: 3,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.gamma) || !unit(self.gae_lambda) {
            return Err(Error::Config("gamma and gae_lambda must lie in (0, 1]".into()));
        }
        if !(self.clip_epsilon > 0.0) {
            return Err(Error::Config("clip_epsilon must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_q) {
            return Err(Error::Config("lambda_q must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 || self.ppo_epochs == 0 {
            return Err(Error::Config("batch_size and ppo_epochs must be positive".into()));
        }
        if !(self.beta >= 0.0) || !(self.c1 >= 0.0) || !(self.c2 >= 0.0) {
            return Err(Error::Config("beta, c1 and c2 must be non-negative".into()));
        }
        if !(self.learning_rate() > 0.0) || !(self.weight_step_size >= 0.0) || !(self.temperature > 0.0) {
            return Err(Error::Config("step sizes and temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn learning_rate(&self) -> f64 {
        self.rl_step_size * self.rl_step_scale
    }
}

/// How advantages are standardized before the surrogate loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageNorm {
    /// Zero mean and unit variance over the batch, per channel.
    #[default]
    Batch,
    /// Unit variance over the batch without centering.
    ScaleOnly,
    None,
}

/// Loss weighting for the two reward channels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum WeightMode {
    /// Raw weights trained jointly with the policy; normalized by softmax.
    Learned { init_raw: [f64; 2] },
    /// Normalized weights held constant.
    Fixed { w_q: f64, w_m: f64 },
}

/// Channel and weighting choices that define one training variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantPlan {
    pub use_q: bool,
    pub use_m: bool,
    pub weights: WeightMode,
    /// Overrides `TrainerConfig::lambda_q` when set.
    pub lambda_q: Option<f64>,
}

impl VariantPlan {
    pub fn validate(&self) -> Result<()> {
        if !self.use_q && !self.use_m {
            return Err(Error::Config("at least one reward channel must be active".into()));
        }
        if let WeightMode::Fixed { w_q, w_m } = self.weights {
            if !(w_q >= 0.0 && w_m >= 0.0 && ((w_q + w_m) - 1.0).abs() < 1e-12) {
                return Err(Error::Config(format!("fixed weights ({w_q}, {w_m}) must be non-negative and sum to 1")));
            }
            if (!self.use_q && w_q != 0.0) || (!self.use_m && w_m != 0.0) {
                return Err(Error::Config("a disabled channel must carry zero weight".into()));
            }
        }
        if let Some(l) = self.lambda_q {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::Config("lambda_q must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Training variant. Serialized by name; `Custom` plans do not round-trip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Variant {
    /// Supervised policy only; no RL stage.
    ArtsBaseline,
    BiQ,
    UniQT,
    UniQB,
    SasrlM,
    SasrlQ,
    Fixed { w_q: f64, w_m: f64 },
    Custom(VariantPlan),
}

impl Variant {
    /// The nine variants of the ablation grid.
    pub fn grid() -> Vec<Variant> {
        vec![
            Variant::ArtsBaseline,
            Variant::BiQ,
            Variant::UniQT,
            Variant::UniQB,
            Variant::SasrlM,
            Variant::SasrlQ,
            Variant::Fixed { w_q: 0.3, w_m: 0.7 },
            Variant::Fixed { w_q: 0.5, w_m: 0.5 },
            Variant::Fixed { w_q: 0.7, w_m: 0.3 },
        ]
    }

    /// `None` for the supervised baseline.
    pub fn plan(&self) -> Option<VariantPlan> {
        let learned = WeightMode::Learned { init_raw: [0.0, 0.0] };
        let both = |weights, lambda_q| VariantPlan { use_q: true, use_m: true, weights, lambda_q };
        Some(match *self {
            Variant::ArtsBaseline => return None,
            Variant::BiQ => both(learned, None),
            Variant::UniQT => both(learned, Some(0.0)),
            Variant::UniQB => both(learned, Some(1.0)),
            Variant::SasrlM => VariantPlan {
                use_q: false,
                use_m: true,
                weights: WeightMode::Fixed { w_q: 0.0, w_m: 1.0 },
                lambda_q: None,
            },
            Variant::SasrlQ => VariantPlan {
                use_q: true,
                use_m: false,
                weights: WeightMode::Fixed { w_q: 1.0, w_m: 0.0 },
                lambda_q: None,
            },
            Variant::Fixed { w_q, w_m } => both(WeightMode::Fixed { w_q, w_m }, None),
            Variant::Custom(plan) => plan,
        })
    }

    pub fn is_primary(&self) -> bool {
        *self == Variant::BiQ
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::ArtsBaseline => f.write_str("arts"),
            Variant::BiQ => f.write_str("samrl-biq"),
            Variant::UniQT => f.write_str("samrl-uniq-t"),
            Variant::UniQB => f.write_str("samrl-uniq-b"),
            Variant::SasrlM => f.write_str("sasrl-m"),
            Variant::SasrlQ => f.write_str("sasrl-q"),
            Variant::Fixed { w_q, w_m } => write!(f, "fixed-{w_q}-{w_m}"),
            Variant::Custom(_) => f.write_str("custom"),
        }
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> Self {
        v.to_string()
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
        Ok(match s.to_ascii_lowercase().as_str() {
            "arts" | "baseline" => Variant::ArtsBaseline,
            "samrl-biq" | "biq" => Variant::BiQ,
            "samrl-uniq-t" | "uniq-t" => Variant::UniQT,
            "samrl-uniq-b" | "uniq-b" => Variant::UniQB,
            "sasrl-m" => Variant::SasrlM,
            "sasrl-q" => Variant::SasrlQ,
            other => {
                let parts: Vec<&str> = other.strip_prefix("fixed-").map(|r| r.split('-').collect()).unwrap_or_default();
                match parts.as_slice() {
                    [q, m] => {
                        let parse = |x: &str| x.parse::<f64>().map_err(|_| Error::Config(format!("bad weight in {s}")));
                        Variant::Fixed { w_q: parse(q)?, w_m: parse(m)? }
                    }
                    _ => return Err(Error::Config(format!("unknown variant {s}"))),
                }
            }
        })
    }
}
