//! Training hyper-parameters and their flat `key=value` file form.

use std::fmt::Write as _;
use std::path::Path;

use crate::codec::{FocalLossConfig, LossWeights, ModelConfig, QuantMode};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Strictly positive and descending.
    pub lambda_values: Vec<f64>,
    pub lr: f64,
    pub disc_lr: f64,
    pub batch_size: usize,
    /// Iterations for the first (from-scratch) rate point.
    pub iterations: usize,
    /// Iterations for each warm-started rate point.
    pub warm_iterations: usize,
    pub phi_adv: f64,
    pub phi_dec: f64,
    pub mu_attr: f64,
    pub seed: u64,
    pub model: ModelConfig,
    pub block_edge: i32,
    pub discriminator: bool,
    pub dense_conv: bool,
    pub no_avrpm: bool,
    pub quant: QuantMode,
    /// Keeps `entropy.log_scale` at its initial value.
    pub fixed_entropy: bool,
    /// Random per-sample color remapping of training targets.
    pub augment: bool,
    pub focal: FocalLossConfig,
}

impl TrainConfig {
    /// Full-size settings; not runnable on a desk machine.
    pub fn full() -> Self {
        Self {
            lambda_values: vec![0.0125, 0.00625, 0.003125, 0.0015625, 0.00078125, 0.000390625, 0.0001953125],
            lr: 1e-5,
            disc_lr: 1e-5,
            batch_size: 100,
            iterations: 200_000,
            warm_iterations: 200_000,
            model: ModelConfig::FULL,
            ..Self::desk()
        }
    }

    pub fn desk() -> Self {
        Self {
            lambda_values: vec![0.0125, 0.00625, 0.003125],
            lr: 1e-3,
            disc_lr: 1e-4,
            batch_size: 4,
            iterations: 1200,
            warm_iterations: 400,
            phi_adv: 0.4,
            phi_dec: 0.6,
            mu_attr: 1.0,
            seed: 0,
            model: ModelConfig::DESK,
            block_edge: crate::avrpm::DEFAULT_BLOCK_EDGE,
            discriminator: true,
            dense_conv: false,
            no_avrpm: false,
            quant: QuantMode::Noise,
            fixed_entropy: false,
            augment: true,
            focal: FocalLossConfig::default(),
        }
    }

    /// Loss weights for rate point `lambda`; `phi_adv` is zero without a
    /// discriminator.
    pub fn weights(&self, lambda: f64) -> LossWeights {
        LossWeights {
            lambda,
            phi_adv: if self.discriminator { self.phi_adv } else { 0.0 },
            phi_dec: self.phi_dec,
            mu_attr: self.mu_attr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.lambda_values.is_empty() {
            return bad("lambdas must not be empty".into());
        }
        if self.lambda_values.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return bad(format!("lambdas {:?} must be positive", self.lambda_values));
        }
        if self.lambda_values.windows(2).any(|w| w[1] >= w[0]) {
            return bad(format!("lambdas {:?} must be strictly descending", self.lambda_values));
        }
        if !(self.lr > 0.0 && self.disc_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.model.hidden == 0 || self.model.latent == 0 || self.model.latent > 255 {
            return bad(format!("model widths {:?} out of range", self.model));
        }
        for (k, v) in [("phi_adv", self.phi_adv), ("phi_dec", self.phi_dec), ("mu_attr", self.mu_attr)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{k} = {v} must be non-negative"));
            }
        }
        crate::avrpm::validate_block_edge(self.block_edge)
    }

    /// Applies `key=value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut cfg = Self::desk();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::InvalidConfig(format!("`{k}`: cannot parse `{v}`")))
        }
        fn flag(k: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::InvalidConfig(format!("`{k}`: expected a boolean, got `{v}`"))),
            }
        }
        match key {
            "preset" => {
                *self = match value {
                    "desk" => Self::desk(),
                    "full" => Self::full(),
                    _ => return Err(Error::InvalidConfig(format!("unknown preset `{value}`"))),
                }
            }
            "lambdas" | "lambda_values" => {
                self.lambda_values = value.split(',').map(|s| num(key, s.trim())).collect::<Result<_>>()?;
            }
            "lr" => self.lr = num(key, value)?,
            "disc_lr" => self.disc_lr = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "warm_iterations" => self.warm_iterations = num(key, value)?,
            "phi_adv" => self.phi_adv = num(key, value)?,
            "phi_dec" => self.phi_dec = num(key, value)?,
            "mu_attr" => self.mu_attr = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "hidden" => self.model.hidden = num(key, value)?,
            "latent" | "latent_channels" => self.model.latent = num(key, value)?,
            "block_edge" => self.block_edge = num(key, value)?,
            "discriminator" => self.discriminator = flag(key, value)?,
            "dense_conv" => self.dense_conv = flag(key, value)?,
            "no_avrpm" => self.no_avrpm = flag(key, value)?,
            "fixed_entropy" => self.fixed_entropy = flag(key, value)?,
            "augment" => self.augment = flag(key, value)?,
            "quant" => {
                self.quant = match value {
                    "noise" => QuantMode::Noise,
                    "ste" => QuantMode::StraightThrough,
                    "identity" => QuantMode::Identity,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "`quant` must be noise, ste or identity, got `{value}`"
                        )))
                    }
                }
            }
            "focal_xi" => self.focal.xi = num(key, value)?,
            "focal_sigma_occupied" => self.focal.sigma_occupied = num(key, value)?,
            "focal_sigma_empty" => self.focal.sigma_empty = num(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let l: Vec<String> = self.lambda_values.iter().map(f64::to_string).collect();
        let _ = writeln!(s, "lambdas={}", l.join(","));
        let _ = writeln!(s, "lr={}\ndisc_lr={}", self.lr, self.disc_lr);
        let _ = writeln!(
            s,
            "batch_size={}\niterations={}\nwarm_iterations={}",
            self.batch_size, self.iterations, self.warm_iterations
        );
        let _ = writeln!(s, "phi_adv={}\nphi_dec={}\nmu_attr={}", self.phi_adv, self.phi_dec, self.mu_attr);
        let _ = writeln!(s, "seed={}\nhidden={}\nlatent={}", self.seed, self.model.hidden, self.model.latent);
        let _ = writeln!(s, "block_edge={}", self.block_edge);
        let _ = writeln!(
            s,
            "discriminator={}\ndense_conv={}\nno_avrpm={}",
            self.discriminator, self.dense_conv, self.no_avrpm
        );
        let _ = writeln!(s, "fixed_entropy={}\naugment={}", self.fixed_entropy, self.augment);
        let q = match self.quant {
            QuantMode::Noise => "noise",
            QuantMode::Identity => "identity",
            QuantMode::StraightThrough | QuantMode::Infer => "ste",
        };
        let _ = writeln!(s, "quant={q}");
        let _ = writeln!(
            s,
            "focal_xi={}\nfocal_sigma_occupied={}\nfocal_sigma_empty={}",
            self.focal.xi, self.focal.sigma_occupied, self.focal.sigma_empty
        );
        s
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        TrainConfig::desk().validate().unwrap();
        let p = TrainConfig::full();
        p.validate().unwrap();
        assert_eq!(p.lambda_values.len(), 7);
        assert_eq!(p.lambda_values[0], 0.0125);
        assert_eq!((p.batch_size, p.iterations, p.lr), (100, 200_000, 1e-5));
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::desk();
        c.lambda_values = vec![0.5, 0.1];
        c.discriminator = false;
        c.quant = QuantMode::StraightThrough;
        c.seed = 77;
        let mut d = TrainConfig::desk();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = TrainConfig::desk();
        assert!(c.apply_text("lambdas=0.1,0.2\n").is_err());
        assert!(TrainConfig::desk().apply_text("lambdas=0.1,-0.2\n").is_err());
        assert!(TrainConfig::desk().apply_text("nonsense=1\n").is_err());
        assert!(TrainConfig::desk().apply_text("lr\n").is_err());
        assert!(TrainConfig::desk().apply_text("block_edge=12\n").is_err());
        let mut ok = TrainConfig::desk();
        ok.apply_text("# comment\n\niterations = 5  # trailing\n").unwrap();
        assert_eq!(ok.iterations, 5);
    }

    #[test]
    fn no_discriminator_zeroes_phi_adv() {
        let mut c = TrainConfig::desk();
        assert_eq!(c.weights(0.1).phi_adv, 0.4);
        c.discriminator = false;
        assert_eq!(c.weights(0.1).phi_adv, 0.0);
    }
}
