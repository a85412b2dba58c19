//! Least-squares adversarial losses, feature matching, and the L1 mel loss.
//! Per sub-discriminator terms are means over score-map elements; the totals
//! sum over sub-discriminators.

use super::disc::DiscOutput;
use crate::error::{Error, Result};
use crate::signal::{mel_graph, StftBasis};
use crate::tensor::{Graph, Var};

/// `sum_d mean((D_d(real) - 1)^2) + mean(D_d(fake)^2)`.
pub fn discriminator_loss(
    g: &mut Graph,
    real: &[DiscOutput],
    fake: &[DiscOutput],
) -> Result<Var> {
    if real.len() != fake.len() {
        return Err(Error::Shape("disc loss: sub-discriminator count mismatch".into()));
    }
    let mut total: Option<Var> = None;
    for (r, f) in real.iter().zip(fake) {
        let r_shift = g.add_const(r.score, -1.0);
        let r_sq = g.mul(r_shift, r_shift)?;
        let r_term = g.mean(r_sq);
        let f_sq = g.mul(f.score, f.score)?;
        let f_term = g.mean(f_sq);
        let pair = g.add(r_term, f_term)?;
        total = Some(match total {
            Some(t) => g.add(t, pair)?,
            None => pair,
        });
    }
    total.ok_or_else(|| Error::InvalidArg("disc loss: no sub-discriminators".into()))
}

/// `sum_d mean((D_d(fake) - 1)^2)`.
pub fn generator_adversarial_loss(g: &mut Graph, fake: &[DiscOutput]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for f in fake {
        let shift = g.add_const(f.score, -1.0);
        let sq = g.mul(shift, shift)?;
        let term = g.mean(sq);
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::InvalidArg("adv loss: no sub-discriminators".into()))
}

/// `sum_d sum_layers mean(|feat_real - feat_fake|)`.
pub fn feature_matching_loss(
    g: &mut Graph,
    real: &[DiscOutput],
    fake: &[DiscOutput],
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (r, f) in real.iter().zip(fake) {
        if r.features.len() != f.features.len() {
            return Err(Error::Shape("fm loss: feature map count mismatch".into()));
        }
        for (&fr, &ff) in r.features.iter().zip(&f.features) {
            let diff = g.sub(fr, ff)?;
            let l1 = g.abs(diff);
            let term = g.mean(l1);
            total = Some(match total {
                Some(t) => g.add(t, term)?,
                None => term,
            });
        }
    }
    total.ok_or_else(|| Error::InvalidArg("fm loss: no feature maps".into()))
}

/// Mean L1 between the log-mel spectrograms of two equal-length signals.
pub fn mel_l1_loss(g: &mut Graph, basis: &StftBasis, real: Var, fake: Var) -> Result<Var> {
    let (_, _, t_r) = g.value(real).as_bct();
    let (_, _, t_f) = g.value(fake).as_bct();
    if t_r != t_f {
        return Err(Error::Shape(format!(
            "mel loss: real {t_r} vs fake {t_f} samples"
        )));
    }
    let mel_r = mel_graph(g, basis, real)?;
    let mel_f = mel_graph(g, basis, fake)?;
    let diff = g.sub(mel_r, mel_f)?;
    let l1 = g.abs(diff);
    Ok(g.mean(l1))
}
