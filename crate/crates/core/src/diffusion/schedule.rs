//! Cumulative noise schedules.
//!
//! Throughout the crate `ᾱ_t` is the cumulative signal fraction, so a latent
//! at level `t` is `√ᾱ_t · z_0 + √(1-ᾱ_t) · ε`. Level 0 is clean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const COSINE_OFFSET: f64 = 0.008;
const COSINE_MAX_BETA: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear { beta_min: f64, beta_max: f64 },
    Cosine,
}

impl Default for ScheduleKind {
    fn default() -> Self {
        ScheduleKind::Linear {
            beta_min: 1e-4,
            beta_max: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(steps: usize, kind: ScheduleKind) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        match kind {
            ScheduleKind::Linear { beta_min, beta_max } => {
                if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
                    return Err(Error::invalid(format!(
                        "linear schedule needs 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
                    )));
                }
                let mut acc = 1.0;
                for t in 1..=steps {
                    let beta = if steps == 1 {
                        beta_min
                    } else {
                        beta_min + (beta_max - beta_min) * (t - 1) as f64 / (steps - 1) as f64
                    };
                    acc *= 1.0 - beta;
                    alpha_bar.push(acc);
                }
            }
            ScheduleKind::Cosine => {
                let f = |t: usize| {
                    let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                    (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
                };
                let f0 = f(0);
                let mut prev = 1.0;
                for t in 1..=steps {
                    let ratio = (f(t) / f0) / (f(t - 1) / f0);
                    let beta = (1.0 - ratio).clamp(1e-12, COSINE_MAX_BETA);
                    prev *= 1.0 - beta;
                    alpha_bar.push(prev);
                }
            }
        }
        Self::from_alpha_bar(alpha_bar)
    }

    /// Wraps an explicit table `ᾱ_0 = 1 > ᾱ_1 > … > ᾱ_T > 0`.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::invalid("schedule table needs at least two entries"));
        }
        if alpha_bar[0] != 1.0 {
            return Err(Error::invalid("schedule must start at alpha_bar = 1"));
        }
        for t in 1..alpha_bar.len() {
            let a = alpha_bar[t];
            if !(a > 0.0 && a < alpha_bar[t - 1]) {
                return Err(Error::invalid(format!(
                    "schedule is not strictly decreasing in (0, 1] at t = {t}"
                )));
            }
        }
        Ok(Self { alpha_bar })
    }

    /// Number of noising steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn table(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn check_level(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::invalid(format!(
                "noise level {t} outside [0, {}]",
                self.steps()
            )));
        }
        Ok(())
    }

    /// Largest level whose `ᾱ` is at least `min_alpha_bar`.
    pub fn last_level_above(&self, min_alpha_bar: f64) -> usize {
        self.alpha_bar
            .iter()
            .rposition(|&a| a >= min_alpha_bar)
            .unwrap_or(0)
    }

    /// `n + 1` evenly spaced levels from `from` to `to`, endpoints included,
    /// with repeats removed.
    pub fn sub_levels(from: usize, to: usize, n: usize) -> Vec<usize> {
        let mut levels: Vec<usize> = (0..=n)
            .map(|k| {
                let x = from as f64 + (to as f64 - from as f64) * k as f64 / n as f64;
                x.round() as usize
            })
            .collect();
        levels.dedup();
        levels
    }
}
