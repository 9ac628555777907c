//! Optimizer configuration and its `key = value` text form.

use std::collections::BTreeMap;
use std::fmt;

use crate::diffusion::{Codec, DiffusionSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::scene::DEFAULT_SPLAT_CAP;

/// The configuration file shipped with the crate.
pub const DEFAULT_CONFIG_TEXT: &str = include_str!("../../configs/default.conf");

/// Noise-level dependent weight `ω(t)` of the generation term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Omega {
    Constant,
    /// `(1 − ᾱ_t)^p`.
    SnrPower(f64),
}

impl Omega {
    pub fn weight(&self, alpha_bar: f64) -> f64 {
        match *self {
            Omega::Constant => 1.0,
            Omega::SnrPower(p) => (1.0 - alpha_bar).max(0.0).powf(p),
        }
    }
}

/// How the noisy latent of each step is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    /// Deterministic DDIM inversion of the current render.
    Inversion,
    /// Forward noising with fresh Gaussian noise (ablation).
    Random,
}

/// Transformation applied to raw gradients before the Langevin step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preconditioner {
    /// Plain gradients.
    None,
    /// Per-parameter Adam moments (β₁ = 0.9, β₂ = 0.999, ε = 1e-15).
    Adam,
}

/// Per-group step sizes `ξ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSizes {
    /// Multiplied by the scene extent.
    pub position: f64,
    pub opacity: f64,
    pub scale: f64,
    pub tangent: f64,
    pub color: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GgdsConfig {
    /// Total optimization steps `K`.
    pub steps: usize,
    /// DDIM steps `N` for inversion and for denoising.
    pub denoise_steps: usize,
    pub noise_mode: NoiseMode,
    pub schedule_steps: usize,
    pub schedule: ScheduleKind,
    pub t_max: usize,
    pub t_min_start: usize,
    pub t_min_end: usize,
    pub omega: Omega,
    pub lambda_lpips: f64,
    pub lambda_norm: f64,
    pub lambda_disp: f64,
    pub lambda_tv: f64,
    pub lambda_distortion: f64,
    pub lambda_normal_consistency: f64,
    pub lr: StepSizes,
    pub lambda_noise: f64,
    /// Final fraction of the run over which `λ_noise` decays linearly to 0.
    pub noise_decay_fraction: f64,
    pub preconditioner: Preconditioner,
    /// Use the update `Θ + ξ∇L` instead of descent.
    pub ascend: bool,
    pub min_scale: f64,
    pub cap: usize,
    /// Density control period in steps; 0 disables it.
    pub densify_every: usize,
    pub densify_until: usize,
    /// Mean `|∂L/∂center|` above which a large splat is split.
    pub densify_grad_threshold: f64,
    /// Splats whose larger scale exceeds this fraction of the scene extent
    /// count as large.
    pub densify_scale: f64,
    pub prune_opacity: f64,
    /// Visible splats whose projected radius never exceeded this many pixels
    /// are pruned.
    pub prune_footprint_px: f64,
    pub codec_factor: usize,
    pub deterministic: bool,
    pub seed: u64,
}

impl Default for GgdsConfig {
    fn default() -> Self {
        Self {
            steps: 6000,
            denoise_steps: 5,
            noise_mode: NoiseMode::Inversion,
            schedule_steps: 1000,
            schedule: ScheduleKind::default(),
            t_max: 800,
            t_min_start: 500,
            t_min_end: 20,
            omega: Omega::Constant,
            lambda_lpips: 0.2,
            lambda_norm: 0.05,
            lambda_disp: 0.5,
            lambda_tv: 0.01,
            lambda_distortion: 0.0,
            lambda_normal_consistency: 0.0,
            lr: StepSizes {
                position: 1.6e-4,
                opacity: 5e-2,
                scale: 5e-3,
                tangent: 1e-3,
                color: 2.5e-3,
            },
            lambda_noise: 1e-4,
            noise_decay_fraction: 0.2,
            preconditioner: Preconditioner::Adam,
            ascend: false,
            min_scale: 1e-4,
            cap: DEFAULT_SPLAT_CAP,
            densify_every: 200,
            densify_until: 3000,
            densify_grad_threshold: 2e-4,
            densify_scale: 0.01,
            prune_opacity: 0.005,
            prune_footprint_px: 0.1,
            codec_factor: 1,
            deterministic: true,
            seed: 0,
        }
    }
}

fn parse_num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("config key `{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::invalid(format!("config key `{key}`: expected a boolean, got `{value}`"))),
    }
}

impl GgdsConfig {
    /// The shipped default configuration file, parsed.
    pub fn shipped() -> Result<Self> {
        Self::parse(DEFAULT_CONFIG_TEXT)
    }

    /// Parses `key = value` lines on top of [`GgdsConfig::default`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            if seen.insert(key.to_string(), n + 1).is_some() {
                return Err(Error::invalid(format!("config line {}: duplicate key `{key}`", n + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| Error::invalid(format!("config line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "steps" => self.steps = parse_num(key, value)?,
            "denoise_steps" => self.denoise_steps = parse_num(key, value)?,
            "noise_mode" => {
                self.noise_mode = match value {
                    "inversion" => NoiseMode::Inversion,
                    "random" => NoiseMode::Random,
                    _ => return Err(Error::invalid(format!("noise_mode must be inversion or random, got `{value}`"))),
                }
            }
            "schedule" => {
                self.schedule = match value {
                    "linear" => match self.schedule {
                        ScheduleKind::Linear { .. } => self.schedule,
                        ScheduleKind::Cosine => ScheduleKind::default(),
                    },
                    "cosine" => ScheduleKind::Cosine,
                    _ => return Err(Error::invalid(format!("schedule must be linear or cosine, got `{value}`"))),
                }
            }
            "beta_min" | "beta_max" => {
                let v: f64 = parse_num(key, value)?;
                let (mut lo, mut hi) = match self.schedule {
                    ScheduleKind::Linear { beta_min, beta_max } => (beta_min, beta_max),
                    ScheduleKind::Cosine => {
                        return Err(Error::invalid(format!("`{key}` only applies to the linear schedule")))
                    }
                };
                if key == "beta_min" {
                    lo = v;
                } else {
                    hi = v;
                }
                self.schedule = ScheduleKind::Linear {
                    beta_min: lo,
                    beta_max: hi,
                };
            }
            "schedule_steps" => self.schedule_steps = parse_num(key, value)?,
            "t_max" => self.t_max = parse_num(key, value)?,
            "t_min_start" => self.t_min_start = parse_num(key, value)?,
            "t_min_end" => self.t_min_end = parse_num(key, value)?,
            "omega" => {
                self.omega = if value == "constant" {
                    Omega::Constant
                } else if let Some(p) = value.strip_prefix("snr_power:") {
                    Omega::SnrPower(parse_num(key, p)?)
                } else {
                    return Err(Error::invalid(format!("omega must be constant or snr_power:<p>, got `{value}`")));
                }
            }
            "lambda_lpips" => self.lambda_lpips = parse_num(key, value)?,
            "lambda_norm" => self.lambda_norm = parse_num(key, value)?,
            "lambda_disp" => self.lambda_disp = parse_num(key, value)?,
            "lambda_tv" => self.lambda_tv = parse_num(key, value)?,
            "lambda_distortion" => self.lambda_distortion = parse_num(key, value)?,
            "lambda_normal_consistency" => self.lambda_normal_consistency = parse_num(key, value)?,
            "lr_position" => self.lr.position = parse_num(key, value)?,
            "lr_opacity" => self.lr.opacity = parse_num(key, value)?,
            "lr_scale" => self.lr.scale = parse_num(key, value)?,
            "lr_tangent" => self.lr.tangent = parse_num(key, value)?,
            "lr_color" => self.lr.color = parse_num(key, value)?,
            "lambda_noise" => self.lambda_noise = parse_num(key, value)?,
            "noise_decay_fraction" => self.noise_decay_fraction = parse_num(key, value)?,
            "preconditioner" => {
                self.preconditioner = match value {
                    "none" => Preconditioner::None,
                    "adam" => Preconditioner::Adam,
                    _ => return Err(Error::invalid(format!("preconditioner must be none or adam, got `{value}`"))),
                }
            }
            "ascend" => self.ascend = parse_bool(key, value)?,
            "min_scale" => self.min_scale = parse_num(key, value)?,
            "cap" => self.cap = parse_num(key, value)?,
            "densify_every" => self.densify_every = parse_num(key, value)?,
            "densify_until" => self.densify_until = parse_num(key, value)?,
            "densify_grad_threshold" => self.densify_grad_threshold = parse_num(key, value)?,
            "densify_scale" => self.densify_scale = parse_num(key, value)?,
            "prune_opacity" => self.prune_opacity = parse_num(key, value)?,
            "prune_footprint_px" => self.prune_footprint_px = parse_num(key, value)?,
            "codec_factor" => self.codec_factor = parse_num(key, value)?,
            "deterministic" => self.deterministic = parse_bool(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            _ => return Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Every field as `key → value`, in a form [`GgdsConfig::parse`] accepts.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("steps", self.steps.to_string());
        put("denoise_steps", self.denoise_steps.to_string());
        put(
            "noise_mode",
            match self.noise_mode {
                NoiseMode::Inversion => "inversion",
                NoiseMode::Random => "random",
            }
            .into(),
        );
        match self.schedule {
            ScheduleKind::Linear { beta_min, beta_max } => {
                put("schedule", "linear".into());
                put("beta_min", beta_min.to_string());
                put("beta_max", beta_max.to_string());
            }
            ScheduleKind::Cosine => put("schedule", "cosine".into()),
        }
        put("schedule_steps", self.schedule_steps.to_string());
        put("t_max", self.t_max.to_string());
        put("t_min_start", self.t_min_start.to_string());
        put("t_min_end", self.t_min_end.to_string());
        put(
            "omega",
            match self.omega {
                Omega::Constant => "constant".into(),
                Omega::SnrPower(p) => format!("snr_power:{p}"),
            },
        );
        put("lambda_lpips", self.lambda_lpips.to_string());
        put("lambda_norm", self.lambda_norm.to_string());
        put("lambda_disp", self.lambda_disp.to_string());
        put("lambda_tv", self.lambda_tv.to_string());
        put("lambda_distortion", self.lambda_distortion.to_string());
        put("lambda_normal_consistency", self.lambda_normal_consistency.to_string());
        put("lr_position", self.lr.position.to_string());
        put("lr_opacity", self.lr.opacity.to_string());
        put("lr_scale", self.lr.scale.to_string());
        put("lr_tangent", self.lr.tangent.to_string());
        put("lr_color", self.lr.color.to_string());
        put("lambda_noise", self.lambda_noise.to_string());
        put("noise_decay_fraction", self.noise_decay_fraction.to_string());
        put(
            "preconditioner",
            match self.preconditioner {
                Preconditioner::None => "none",
                Preconditioner::Adam => "adam",
            }
            .into(),
        );
        put("ascend", self.ascend.to_string());
        put("min_scale", self.min_scale.to_string());
        put("cap", self.cap.to_string());
        put("densify_every", self.densify_every.to_string());
        put("densify_until", self.densify_until.to_string());
        put("densify_grad_threshold", self.densify_grad_threshold.to_string());
        put("densify_scale", self.densify_scale.to_string());
        put("prune_opacity", self.prune_opacity.to_string());
        put("prune_footprint_px", self.prune_footprint_px.to_string());
        put("codec_factor", self.codec_factor.to_string());
        put("deterministic", self.deterministic.to_string());
        put("seed", self.seed.to_string());
        m
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if self.denoise_steps == 0 {
            return Err(Error::invalid("denoise_steps must be at least 1"));
        }
        if !(self.t_min_end <= self.t_min_start
            && self.t_min_start <= self.t_max
            && self.t_max <= self.schedule_steps)
        {
            return Err(Error::invalid(format!(
                "need t_min_end ≤ t_min_start ≤ t_max ≤ T, got {} ≤ {} ≤ {} ≤ {}",
                self.t_min_end, self.t_min_start, self.t_max, self.schedule_steps
            )));
        }
        let nonneg = [
            ("lambda_lpips", self.lambda_lpips),
            ("lambda_norm", self.lambda_norm),
            ("lambda_disp", self.lambda_disp),
            ("lambda_tv", self.lambda_tv),
            ("lambda_distortion", self.lambda_distortion),
            ("lambda_normal_consistency", self.lambda_normal_consistency),
            ("lr_position", self.lr.position),
            ("lr_opacity", self.lr.opacity),
            ("lr_scale", self.lr.scale),
            ("lr_tangent", self.lr.tangent),
            ("lr_color", self.lr.color),
            ("lambda_noise", self.lambda_noise),
            ("densify_grad_threshold", self.densify_grad_threshold),
            ("densify_scale", self.densify_scale),
            ("prune_opacity", self.prune_opacity),
            ("prune_footprint_px", self.prune_footprint_px),
        ];
        for (k, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{k} must be finite and non-negative, got {v}")));
            }
        }
        if let Omega::SnrPower(p) = self.omega {
            if !p.is_finite() {
                return Err(Error::invalid("omega power must be finite"));
            }
        }
        if !(0.0..=1.0).contains(&self.noise_decay_fraction) {
            return Err(Error::invalid("noise_decay_fraction must lie in [0, 1]"));
        }
        if !(self.min_scale > 0.0 && self.min_scale.is_finite()) {
            return Err(Error::invalid("min_scale must be positive"));
        }
        if self.cap == 0 {
            return Err(Error::invalid("cap must be at least 1"));
        }
        if self.codec_factor == 0 {
            return Err(Error::invalid("codec_factor must be at least 1"));
        }
        Ok(())
    }

    pub fn build_schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::new(self.schedule_steps, self.schedule)
    }

    pub fn codec(&self) -> Codec {
        if self.codec_factor == 1 {
            Codec::Identity
        } else {
            Codec::pooled(self.codec_factor)
        }
    }

    /// Lower sampling bound `t_min(k)`, annealed linearly over the run.
    pub fn t_min_at(&self, k: usize) -> usize {
        let frac = k.min(self.steps) as f64 / self.steps as f64;
        let v = self.t_min_start as f64 + (self.t_min_end as f64 - self.t_min_start as f64) * frac;
        v.round() as usize
    }

    /// `λ_noise` at step `k`: constant, then a linear ramp to 0 over the final
    /// `noise_decay_fraction` of the run.
    pub fn noise_at(&self, k: usize) -> f64 {
        let k_total = self.steps as f64;
        let start = k_total * (1.0 - self.noise_decay_fraction);
        let k = k as f64;
        if k <= start || self.noise_decay_fraction == 0.0 {
            return self.lambda_noise;
        }
        self.lambda_noise * ((k_total - k) / (k_total - start)).max(0.0)
    }
}

impl fmt::Display for GgdsConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_map() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_file_matches_defaults() {
        assert_eq!(GgdsConfig::shipped().unwrap(), GgdsConfig::default());
    }

    #[test]
    fn shipped_file_fixes_loop_constants() {
        let cfg = GgdsConfig::shipped().unwrap();
        assert_eq!(cfg.denoise_steps, 5);
        assert_eq!(cfg.steps, 6000);
        assert_eq!(cfg.cap, 4_000_000);
    }

    #[test]
    fn shipped_annealing_never_raises_lower_bound() {
        let cfg = GgdsConfig::shipped().unwrap();
        let mut prev = cfg.t_min_at(0);
        assert_eq!(prev, cfg.t_min_start);
        for k in 1..=cfg.steps {
            let cur = cfg.t_min_at(k);
            assert!(cur <= prev, "t_min rose at step {k}");
            prev = cur;
        }
        assert_eq!(prev, cfg.t_min_end);
    }

    #[test]
    fn text_form_round_trips() {
        let mut cfg = GgdsConfig::default();
        cfg.omega = Omega::SnrPower(0.5);
        cfg.noise_mode = NoiseMode::Random;
        cfg.lr.color = 0.125;
        cfg.seed = 99;
        assert_eq!(GgdsConfig::parse(&cfg.to_string()).unwrap(), cfg);
        let mut cos = GgdsConfig::default();
        cos.schedule = ScheduleKind::Cosine;
        assert_eq!(GgdsConfig::parse(&cos.to_string()).unwrap(), cos);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        assert!(GgdsConfig::parse("learning_rate = 1").is_err());
        assert!(GgdsConfig::parse("steps = 1\nsteps = 2").is_err());
        assert!(GgdsConfig::parse("steps").is_err());
        assert!(GgdsConfig::parse("steps = many").is_err());
    }

    #[test]
    fn ordering_of_levels_is_validated() {
        assert!(GgdsConfig::parse("t_min_end = 600").is_err());
        assert!(GgdsConfig::parse("t_max = 1001").is_err());
        assert!(GgdsConfig::parse("lambda_tv = -1").is_err());
        assert!(GgdsConfig::parse("steps = 0").is_err());
    }

    #[test]
    fn noise_decays_to_zero_at_the_end() {
        let cfg = GgdsConfig {
            steps: 100,
            ..Default::default()
        };
        assert_eq!(cfg.noise_at(0), cfg.lambda_noise);
        assert_eq!(cfg.noise_at(80), cfg.lambda_noise);
        assert!((cfg.noise_at(90) - 0.5 * cfg.lambda_noise).abs() < 1e-18);
        assert_eq!(cfg.noise_at(100), 0.0);
    }

    #[test]
    fn omega_weights() {
        assert_eq!(Omega::Constant.weight(0.3), 1.0);
        assert!((Omega::SnrPower(2.0).weight(0.5) - 0.25).abs() < 1e-15);
    }
}
