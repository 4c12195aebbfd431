//! Reservation policies and the per-task reservation rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Micros, MICROS_PER_SECOND};
use crate::utilization::{ChangeMode, Pooling};

/// False for negative values and NaN.
fn non_negative(x: f64) -> bool {
    x >= 0.0
}

fn default_period() -> f64 {
    300.0
}
fn default_decay() -> f64 {
    0.1
}
fn default_borg_margin() -> f64 {
    0.15
}
fn default_class_threshold() -> f64 {
    300.0
}

/// Where a change-quantile policy gets its margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarginSource {
    /// Measured from the replayed trace at the policy's sampling period.
    Measured {
        #[serde(default = "default_pooling")]
        pooling: Pooling,
        #[serde(default)]
        exclude_churn: bool,
        #[serde(default = "default_mode")]
        mode: ChangeMode,
        /// Separate margins for short-lived and long-running tasks.
        #[serde(default)]
        per_class: bool,
        #[serde(default = "default_class_threshold")]
        class_threshold_s: f64,
    },
    /// Fixed quantile values per resource, as relative (or absolute) changes.
    Fixed {
        cpu: f64,
        memory: f64,
        #[serde(default = "default_mode")]
        mode: ChangeMode,
    },
}

fn default_pooling() -> Pooling {
    Pooling::Task
}
fn default_mode() -> ChangeMode {
    ChangeMode::Relative
}

impl Default for MarginSource {
    fn default() -> Self {
        MarginSource::Measured {
            pooling: default_pooling(),
            exclude_churn: false,
            mode: default_mode(),
            per_class: false,
            class_threshold_s: default_class_threshold(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyVariant {
    /// Reserve the full request.
    RequestStatic,
    /// Decay from the request toward usage plus a margin.
    BorgDecay {
        #[serde(default = "default_decay")]
        decay_rate: f64,
        #[serde(default = "default_borg_margin")]
        margin_fraction: f64,
    },
    /// Usage plus the q-quantile of the usage-change distribution.
    ChangeQuantileMargin {
        quantile: f64,
        #[serde(default)]
        floor_fraction: f64,
        #[serde(default)]
        source: MarginSource,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policy {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_period")]
    pub sampling_period_s: f64,
    pub variant: PolicyVariant,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyList {
    policy: Vec<Policy>,
}

impl Policy {
    pub fn new(variant: PolicyVariant) -> Self {
        Policy {
            name: None,
            sampling_period_s: default_period(),
            variant,
        }
    }

    pub fn request_static() -> Self {
        Policy::new(PolicyVariant::RequestStatic)
    }

    pub fn borg_decay() -> Self {
        Policy::new(PolicyVariant::BorgDecay {
            decay_rate: default_decay(),
            margin_fraction: default_borg_margin(),
        })
    }

    /// Change-quantile margin measured per task from the replayed trace.
    pub fn change_quantile(quantile: f64) -> Self {
        Policy::new(PolicyVariant::ChangeQuantileMargin {
            quantile,
            floor_fraction: 0.0,
            source: MarginSource::default(),
        })
    }

    pub fn with_period(mut self, seconds: f64) -> Self {
        self.sampling_period_s = seconds;
        self
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn period(&self) -> Micros {
        (self.sampling_period_s * MICROS_PER_SECOND as f64).round() as Micros
    }

    /// Parses either a single policy or a `[[policy]]` list.
    pub fn list_from_toml(text: &str) -> Result<Vec<Policy>> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("policy file: {e}")))?;
        let policies = if table.contains_key("policy") {
            PolicyList::deserialize(table)
                .map_err(|e| Error::Config(format!("policy file: {e}")))?
                .policy
        } else {
            vec![Policy::deserialize(table).map_err(|e| Error::Config(format!("policy file: {e}")))?]
        };
        if policies.is_empty() {
            return Err(Error::Config("policy file lists no policies".into()));
        }
        for p in &policies {
            p.validate()?;
        }
        Ok(policies)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Policy(m));
        if !(self.sampling_period_s.is_finite() && self.period() > 0) {
            return bad(format!("sampling period {} s must be positive", self.sampling_period_s));
        }
        match &self.variant {
            PolicyVariant::RequestStatic => {}
            PolicyVariant::BorgDecay {
                decay_rate,
                margin_fraction,
            } => {
                if !(*decay_rate > 0.0 && *decay_rate <= 1.0) {
                    return bad(format!("decay_rate {decay_rate} outside (0, 1]"));
                }
                if !non_negative(*margin_fraction) {
                    return bad(format!("margin_fraction {margin_fraction} is negative"));
                }
            }
            PolicyVariant::ChangeQuantileMargin {
                quantile,
                floor_fraction,
                source,
            } => {
                if !(*quantile > 0.0 && *quantile < 1.0) {
                    return bad(format!("quantile {quantile} outside (0, 1)"));
                }
                if !non_negative(*floor_fraction) {
                    return bad(format!("floor_fraction {floor_fraction} is negative"));
                }
                match source {
                    MarginSource::Fixed { cpu, memory, .. } if !(non_negative(*cpu) && non_negative(*memory)) => {
                        return bad("fixed margins must be non-negative".into());
                    }
                    MarginSource::Measured { class_threshold_s, .. } if !non_negative(*class_threshold_s) => {
                        return bad("class_threshold_s must be non-negative".into());
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Short human-readable description with every parameter.
    pub fn describe(&self) -> String {
        let body = match &self.variant {
            PolicyVariant::RequestStatic => "request_static".to_string(),
            PolicyVariant::BorgDecay {
                decay_rate,
                margin_fraction,
            } => format!("borg_decay(decay={decay_rate}, margin={margin_fraction})"),
            PolicyVariant::ChangeQuantileMargin {
                quantile,
                floor_fraction,
                source,
            } => {
                let src = match source {
                    MarginSource::Measured {
                        pooling,
                        exclude_churn,
                        mode,
                        per_class,
                        class_threshold_s,
                    } => format!(
                        "measured/{pooling:?}/{mode:?}{}{}",
                        if *exclude_churn { "/steady" } else { "" },
                        if *per_class {
                            format!("/per-class@{class_threshold_s}s")
                        } else {
                            String::new()
                        }
                    )
                    .to_lowercase(),
                    MarginSource::Fixed { cpu, memory, mode } => {
                        format!("fixed/{mode:?}(cpu={cpu}, memory={memory})").to_lowercase()
                    }
                };
                format!("change_quantile_margin(q={quantile}, floor={floor_fraction}, source={src})")
            }
        };
        let name = self.name.as_deref().map(|n| format!("{n}: ")).unwrap_or_default();
        format!("{name}{body} @ {}s", self.sampling_period_s)
    }
}

/// A policy resolved for one task and resource.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ReserveRule {
    Static,
    Decay { rate: f64, margin: f64 },
    Margin { change: f64, mode: ChangeMode, floor: f64 },
}

/// Reservation for the next period.
///
/// `last_usage` is the usage of the previous period (`None` on cold start),
/// `prev_reservation` the reservation made for it. The result never exceeds
/// the request; where usage already exceeds the request, the cap wins.
pub fn reserve(rule: &ReserveRule, last_usage: Option<f64>, prev_reservation: Option<f64>, request: Option<f64>) -> Result<f64> {
    let request = request.ok_or_else(|| Error::Policy("task has no request to reserve against".into()))?;
    let Some(u) = last_usage else { return Ok(request) };
    let r = match *rule {
        ReserveRule::Static => request,
        ReserveRule::Decay { rate, margin } => {
            let target = u * (1.0 + margin);
            let prev = prev_reservation.unwrap_or(request);
            target.max(prev - rate * (prev - target))
        }
        ReserveRule::Margin { change, mode, floor } => {
            let with_margin = match mode {
                ChangeMode::Relative => u * (1.0 + change),
                ChangeMode::Absolute => u + change,
            };
            with_margin.max(u * (1.0 + floor))
        }
    };
    Ok(r.min(request))
}
