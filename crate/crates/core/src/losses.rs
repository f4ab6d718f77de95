//! Scalar objectives and their gradients.
//!
//! Every distance reduces by the mean over all elements, so values do not
//! depend on batch size. "L2" distances are mean squared differences.

use num_traits::Float;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LossError {
    #[error("operands have different lengths: {left} vs {right}")]
    ShapeMismatch { left: usize, right: usize },
    #[error("operands are empty")]
    Empty,
}

fn check<F>(a: &[F], b: &[F]) -> Result<F, LossError>
where
    F: Float,
{
    if a.len() != b.len() {
        return Err(LossError::ShapeMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(F::from(a.len()).expect("length fits"))
}

/// Mean absolute difference.
pub fn l1<F: Float>(a: &[F], b: &[F]) -> Result<F, LossError> {
    let n = check(a, b)?;
    Ok(a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + (x - y).abs()) / n)
}

/// Gradient of [`l1`] with respect to `a`.
pub fn l1_grad<F: Float>(a: &[F], b: &[F]) -> Result<Vec<F>, LossError> {
    let n = check(a, b)?;
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            if d > F::zero() {
                n.recip()
            } else if d < F::zero() {
                -n.recip()
            } else {
                F::zero()
            }
        })
        .collect())
}

/// Mean squared difference.
pub fn mse<F: Float>(a: &[F], b: &[F]) -> Result<F, LossError> {
    let n = check(a, b)?;
    Ok(a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y)) / n)
}

/// Gradient of [`mse`] with respect to `a`.
pub fn mse_grad<F: Float>(a: &[F], b: &[F]) -> Result<Vec<F>, LossError> {
    let n = check(a, b)?;
    let two = F::one() + F::one();
    Ok(a.iter().zip(b).map(|(&x, &y)| two * (x - y) / n).collect())
}

/// Image reconstruction error between input and reconstruction.
pub fn s_con<F: Float>(x: &[F], x_hat: &[F]) -> Result<F, LossError> {
    l1(x, x_hat)
}

/// Latent consistency error between the two encodings.
pub fn s_enc<F: Float>(z1: &[F], z2: &[F]) -> Result<F, LossError> {
    mse(z1, z2)
}

/// Feature matching error between discriminator features of real and reconstructed images.
pub fn s_adv<F: Float>(feat_real: &[F], feat_fake: &[F]) -> Result<F, LossError> {
    mse(feat_real, feat_fake)
}

/// Teacher/student distance of first latent codes.
pub fn k1<F: Float>(z1_teacher: &[F], z1_student: &[F]) -> Result<F, LossError> {
    mse(z1_teacher, z1_student)
}

/// Teacher/student distance of reconstructions.
pub fn kx<F: Float>(x_hat_teacher: &[F], x_tilde_student: &[F]) -> Result<F, LossError> {
    l1(x_hat_teacher, x_tilde_student)
}

/// Teacher/student distance of re-encoded latent codes.
pub fn k2<F: Float>(z2_teacher: &[F], z2_student: &[F]) -> Result<F, LossError> {
    mse(z2_teacher, z2_student)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub w_con: f64,
    pub w_enc: f64,
    pub w_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_con: 10.0, w_enc: 1.0, w_adv: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillWeights {
    pub w1: f64,
    pub wx: f64,
    pub w2: f64,
}

impl Default for DistillWeights {
    fn default() -> Self {
        Self { w1: 1.0, wx: 1.0, w2: 1.0 }
    }
}

fn checked_weights(ws: [f64; 3]) -> bool {
    ws.iter().all(|w| w.is_finite() && *w >= 0.0)
}

impl LossWeights {
    pub fn is_valid(&self) -> bool {
        checked_weights([self.w_con, self.w_enc, self.w_adv])
    }
}

impl DistillWeights {
    pub fn is_valid(&self) -> bool {
        checked_weights([self.w1, self.wx, self.w2])
    }
}

pub fn generator_loss(w: &LossWeights, s_con: f64, s_enc: f64, s_adv: f64) -> f64 {
    w.w_con * s_con + w.w_enc * s_enc + w.w_adv * s_adv
}

pub fn k_l(w: &DistillWeights, k1: f64, kx: f64, k2: f64) -> f64 {
    w.w1 * k1 + w.wx * kx + w.w2 * k2
}

/// Clamp for log arguments in the cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

/// Binary cross-entropy with target 1 for `p_real` and 0 for `p_fake`,
/// averaged over all probabilities of both sets.
pub fn discriminator_loss<F: Float>(p_real: &[F], p_fake: &[F]) -> F {
    let eps = F::from(LOG_CLAMP).expect("clamp");
    let total = F::from(p_real.len() + p_fake.len()).expect("count");
    let real: F = p_real.iter().fold(F::zero(), |acc, &p| acc - p.max(eps).ln());
    let fake: F = p_fake.iter().fold(F::zero(), |acc, &p| acc - (F::one() - p).max(eps).ln());
    (real + fake) / total
}

/// Gradients of [`discriminator_loss`] with respect to `p_real` and `p_fake`.
pub fn discriminator_loss_grad<F: Float>(p_real: &[F], p_fake: &[F]) -> (Vec<F>, Vec<F>) {
    let eps = F::from(LOG_CLAMP).expect("clamp");
    let total = F::from(p_real.len() + p_fake.len()).expect("count");
    let real = p_real
        .iter()
        .map(|&p| if p > eps { -(p * total).recip() } else { F::zero() })
        .collect();
    let fake = p_fake
        .iter()
        .map(|&p| if F::one() - p > eps { ((F::one() - p) * total).recip() } else { F::zero() })
        .collect();
    (real, fake)
}
