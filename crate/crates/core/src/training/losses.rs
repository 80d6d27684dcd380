use crate::error::{Error, Result};
use crate::nn::tape::bce_value;
use crate::nn::{Tape, Tensor, Var};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

/// Mean binary cross-entropy `-(1/N) Σ [x ln p + (1 - x) ln(1 - p)]`.
pub fn bce_loss(targets: &[f64], probs: &[f64]) -> Result<f64> {
    if targets.len() != probs.len() || targets.is_empty() {
        return Err(Error::dim(format!(
            "bce over {} targets and {} probabilities",
            targets.len(),
            probs.len()
        )));
    }
    Ok(bce_value(probs, targets, PROB_EPS))
}

/// Real pairs scored against 1, generated pairs and real images with wrong
/// captions scored against 0, summed.
pub fn discriminator_loss_gan_int(
    real_matching: &[f64],
    fake_matching: &[f64],
    real_mismatched: &[f64],
) -> Result<f64> {
    let n = real_matching.len();
    if fake_matching.len() != n || real_mismatched.len() != n {
        return Err(Error::dim("discriminator outputs differ in length"));
    }
    Ok(bce_loss(&vec![1.0; n], real_matching)?
        + bce_loss(&vec![0.0; n], fake_matching)?
        + bce_loss(&vec![0.0; n], real_mismatched)?)
}

pub fn generator_loss_v1(fake_matching: &[f64]) -> Result<f64> {
    bce_loss(&vec![1.0; fake_matching.len()], fake_matching)
}

/// Mean absolute difference between the decoded output and the backbone
/// image.
pub fn consistency_term(decoded: &Tensor, g_hat: &Tensor) -> Result<f64> {
    if decoded.shape() != g_hat.shape() {
        return Err(Error::dim(format!(
            "decoded {:?} vs backbone {:?}",
            decoded.shape(),
            g_hat.shape()
        )));
    }
    let total: f64 = decoded
        .data()
        .iter()
        .zip(g_hat.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(total / decoded.numel() as f64)
}

pub fn generator_loss_v2(
    fake_matching: &[f64],
    decoded: &Tensor,
    g_hat: &Tensor,
    gamma: f64,
) -> Result<f64> {
    Ok(generator_loss_v1(fake_matching)? + gamma * consistency_term(decoded, g_hat)?)
}

/// Tape form of [`discriminator_loss_gan_int`].
pub fn discriminator_loss_on_tape(
    tape: &mut Tape,
    real_matching: Var,
    fake_matching: Var,
    real_mismatched: Var,
) -> Result<Var> {
    let n = tape.value(real_matching).numel();
    let a = tape.bce(real_matching, &vec![1.0; n], PROB_EPS)?;
    let b = tape.bce(fake_matching, &vec![0.0; n], PROB_EPS)?;
    let c = tape.bce(real_mismatched, &vec![0.0; n], PROB_EPS)?;
    let ab = tape.add(a, b)?;
    tape.add(ab, c)
}

/// Tape form of the generator losses; `consistency` adds
/// `gamma * mean|decoded - g_hat|`.
pub fn generator_loss_on_tape(
    tape: &mut Tape,
    fake_matching: Var,
    consistency: Option<(Var, Var, f64)>,
) -> Result<Var> {
    let n = tape.value(fake_matching).numel();
    let adv = tape.bce(fake_matching, &vec![1.0; n], PROB_EPS)?;
    let Some((decoded, g_hat, gamma)) = consistency else {
        return Ok(adv);
    };
    let diff = tape.sub(decoded, g_hat)?;
    let diff = tape.abs(diff)?;
    let m = tape.mean(diff)?;
    let term = tape.affine(m, gamma, 0.0)?;
    tape.add(adv, term)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn bce_hand_values() {
        assert!((bce_loss(&[1.0], &[0.5]).unwrap() - LN_2).abs() < 1e-12);
        assert!((bce_loss(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - LN_2).abs() < 1e-12);
        assert!(bce_loss(&[1.0], &[1.0 - PROB_EPS]).unwrap() < 1e-6);
        assert!(bce_loss(&[1.0, 0.0], &[0.5]).is_err());
    }

    #[test]
    fn three_pair_loss() {
        let h = [0.5; 4];
        assert!((discriminator_loss_gan_int(&h, &h, &h).unwrap() - 3.0 * LN_2).abs() < 1e-12);
        let perfect = discriminator_loss_gan_int(&[1.0], &[PROB_EPS], &[PROB_EPS]).unwrap();
        assert!(perfect < 1e-6);
        let worst = discriminator_loss_gan_int(&[0.0], &[1.0], &[1.0]).unwrap();
        assert!(worst.is_finite() && worst > 40.0);
        let parts = bce_loss(&[1.0], &[0.7]).unwrap()
            + bce_loss(&[0.0], &[0.2]).unwrap()
            + bce_loss(&[0.0], &[0.4]).unwrap();
        assert_eq!(discriminator_loss_gan_int(&[0.7], &[0.2], &[0.4]).unwrap(), parts);
    }

    #[test]
    fn generator_losses() {
        assert!((generator_loss_v1(&[0.5]).unwrap() - LN_2).abs() < 1e-12);
        assert!(generator_loss_v1(&[0.9]).unwrap() < generator_loss_v1(&[0.6]).unwrap());
        let a = Tensor::full([2, 8, 8, 3], 40.0);
        let b = Tensor::full([2, 8, 8, 3], 30.0);
        let v1 = generator_loss_v1(&[0.3, 0.6]).unwrap();
        assert_eq!(generator_loss_v2(&[0.3, 0.6], &a, &a, 0.1).unwrap(), v1);
        assert_eq!(generator_loss_v2(&[0.3, 0.6], &a, &b, 0.0).unwrap(), v1);
        let extra = generator_loss_v2(&[0.3, 0.6], &a, &b, 0.1).unwrap() - v1;
        assert!((extra - 1.0).abs() < 1e-12);
        assert!(generator_loss_v2(&[0.5], &a, &Tensor::zeros([8]), 0.1).is_err());
    }

    #[test]
    fn tape_forms_agree() {
        let mut tape = Tape::new();
        let p = |t: &mut Tape, v: &[f64]| t.variable(Tensor::new([v.len()], v.to_vec()).unwrap());
        let (a, b, c) = (p(&mut tape, &[0.7, 0.8]), p(&mut tape, &[0.2, 0.3]), p(&mut tape, &[0.4, 0.1]));
        let l = discriminator_loss_on_tape(&mut tape, a, b, c).unwrap();
        let want = discriminator_loss_gan_int(&[0.7, 0.8], &[0.2, 0.3], &[0.4, 0.1]).unwrap();
        assert!((tape.value(l).item().unwrap() - want).abs() < 1e-12);

        let h = tape.variable(Tensor::full([1, 8, 8, 3], 12.0));
        let g = tape.variable(Tensor::full([1, 8, 8, 3], 2.0));
        let l = generator_loss_on_tape(&mut tape, b, Some((h, g, 0.1))).unwrap();
        let want = generator_loss_v1(&[0.2, 0.3]).unwrap() + 1.0;
        assert!((tape.value(l).item().unwrap() - want).abs() < 1e-12);
    }
}
