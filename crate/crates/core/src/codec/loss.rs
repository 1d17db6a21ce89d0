//! Rate-distortion objective and its parts.

use crate::error::{Error, Result};
use crate::nn::{bce, focal_term, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalLossConfig {
    pub xi: f64,
    pub sigma_occupied: f64,
    pub sigma_empty: f64,
}

impl Default for FocalLossConfig {
    fn default() -> Self {
        Self { xi: 2.0, sigma_occupied: 0.75, sigma_empty: 0.25 }
    }
}

impl FocalLossConfig {
    /// Class weight per site, optionally multiplied by a per-site factor.
    pub fn weights(&self, labels: &[bool], extra: Option<&[f64]>) -> Vec<f64> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &occ)| {
                let w = if occ { self.sigma_occupied } else { self.sigma_empty };
                w * extra.map_or(1.0, |e| e[i])
            })
            .collect()
    }
}

/// Mean over scales of the per-scale mean focal loss.
pub fn focal_loss_on_tape(tape: &mut Tape, logits: &[Var], labels: &[Vec<bool>], cfg: &FocalLossConfig) -> Result<Var> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::AlignmentError(format!("{} logit scales, {} label scales", logits.len(), labels.len())));
    }
    let mut total: Option<Var> = None;
    for (z, y) in logits.iter().zip(labels) {
        let l = tape.focal(*z, y.clone(), cfg.weights(y, None), cfg.xi)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    Ok(tape.scale(total.expect("non-empty"), 1.0 / logits.len() as f64))
}

/// Plain-value focal loss with the same reduction as [`focal_loss_on_tape`].
pub fn focal_loss(logits: &[Vec<f64>], labels: &[Vec<bool>], cfg: &FocalLossConfig) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::AlignmentError(format!("{} logit scales, {} label scales", logits.len(), labels.len())));
    }
    let mut sum = 0.0;
    for (z, y) in logits.iter().zip(labels) {
        if z.len() != y.len() || z.is_empty() {
            return Err(Error::AlignmentError(format!("{} logits, {} labels", z.len(), y.len())));
        }
        let w = cfg.weights(y, None);
        sum +=
            z.iter().zip(y).zip(&w).map(|((&z, &o), &w)| focal_term(z, o, w, cfg.xi).0).sum::<f64>() / z.len() as f64;
    }
    Ok(sum / logits.len() as f64)
}

/// Discriminator loss `-mean ln D(real) - mean ln(1 - D(fake))` and the
/// non-saturating generator term `-mean ln D(fake)`.
pub fn adversarial_loss(d_real: &[f64], d_fake: &[f64]) -> (f64, f64) {
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&p| f(p)).sum::<f64>() / v.len().max(1) as f64;
    let l_adv = mean(d_real, &|p| bce(1.0, p)) + mean(d_fake, &|p| bce(0.0, p));
    let gen = mean(d_fake, &|p| bce(1.0, p));
    (l_adv, gen)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub phi_adv: f64,
    pub phi_dec: f64,
    pub mu_attr: f64,
}

impl LossWeights {
    pub fn new(lambda: f64) -> Self {
        Self { lambda, phi_adv: 0.4, phi_dec: 0.6, mu_attr: 1.0 }
    }
}

/// Attribute MSE is measured on the 0-255 scale.
pub const ATTR_MSE_SCALE: f64 = 255.0 * 255.0;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub distortion: f64,
    /// Estimated bits per input point.
    pub rate: f64,
    pub rate_bits: f64,
    /// Generator adversarial term.
    pub l_adv: f64,
    /// Discriminator loss on the same step.
    pub l_adv_disc: f64,
    pub l_dec: f64,
    pub attr_mse: f64,
    pub lambda: f64,
    pub phi_adv: f64,
    pub phi_dec: f64,
    pub mu_attr: f64,
}

impl LossBreakdown {
    pub fn compose(w: &LossWeights, l_adv: f64, l_dec: f64, attr_mse: f64, rate_bits: f64, points: usize) -> Self {
        let distortion = w.phi_adv * l_adv + w.phi_dec * (l_dec + w.mu_attr * attr_mse);
        let rate = rate_bits / points.max(1) as f64;
        Self {
            total: w.lambda * distortion + rate,
            distortion,
            rate,
            rate_bits,
            l_adv,
            l_adv_disc: 0.0,
            l_dec,
            attr_mse,
            lambda: w.lambda,
            phi_adv: w.phi_adv,
            phi_dec: w.phi_dec,
            mu_attr: w.mu_attr,
        }
    }

    /// Largest violation of `L = lambda D + R` and the distortion identity.
    pub fn identity_error(&self) -> f64 {
        let d = self.phi_adv * self.l_adv + self.phi_dec * (self.l_dec + self.mu_attr * self.attr_mse);
        (self.total - (self.lambda * self.distortion + self.rate)).abs().max((self.distortion - d).abs())
    }

    /// Component-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut m = LossBreakdown::default();
        for b in items {
            m.total += b.total / n;
            m.distortion += b.distortion / n;
            m.rate += b.rate / n;
            m.rate_bits += b.rate_bits / n;
            m.l_adv += b.l_adv / n;
            m.l_adv_disc += b.l_adv_disc / n;
            m.l_dec += b.l_dec / n;
            m.attr_mse += b.attr_mse / n;
        }
        if let Some(b) = items.first() {
            m.lambda = b.lambda;
            m.phi_adv = b.phi_adv;
            m.phi_dec = b.phi_dec;
            m.mu_attr = b.mu_attr;
        }
        m
    }
}

/// Records `lambda D + R` from its parts; `gen_term` is absent when the
/// adversarial branch is disabled. `rate_bits` is divided by `points`.
pub fn total_loss_on_tape(
    tape: &mut Tape,
    w: &LossWeights,
    gen_term: Option<Var>,
    l_dec: Var,
    attr_mse: Var,
    rate_bits: Var,
    points: usize,
) -> Result<Var> {
    let mse = tape.scale(attr_mse, w.mu_attr);
    let dec = tape.add(l_dec, mse)?;
    let mut d = tape.scale(dec, w.phi_dec);
    if let Some(g) = gen_term {
        let adv = tape.scale(g, w.phi_adv);
        d = tape.add(d, adv)?;
    }
    let ld = tape.scale(d, w.lambda);
    let r = tape.scale(rate_bits, 1.0 / points.max(1) as f64);
    tape.add(ld, r)
}
