//! The two training losses. Both return the mean over all voxels of the
//! batch together with the gradient with respect to the probabilities.

use serde::{Deserialize, Serialize};

use crate::autograd::{Batch, Real};
use crate::error::{Error, Result};

/// Probability clamp used by the cross-entropy loss.
pub const WCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Weighted inner product.
    Wip,
    /// Weighted cross entropy.
    Wce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Weight of the tract (foreground) term.
    pub weight: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            kind: LossKind::Wip,
            weight: 3.0,
        }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1.0..=1000.0).contains(&self.weight) {
            return Err(Error::Spec(format!("loss.weight must lie in [1, 1000], got {}", self.weight)));
        }
        Ok(())
    }

    pub fn evaluate<T: Real>(&self, p: &Batch<T>, r: &Batch<T>) -> Result<(f64, Batch<T>)> {
        self.validate()?;
        match self.kind {
            LossKind::Wip => loss_wip(p, r, self.weight),
            LossKind::Wce => loss_wce(p, r, self.weight),
        }
    }
}

fn check<T: Real>(p: &Batch<T>, r: &Batch<T>) -> Result<()> {
    if p.shape() != r.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} and reference {:?} differ in shape",
            p.shape(),
            r.shape()
        )));
    }
    if p.is_empty() {
        return Err(Error::EmptyDomain);
    }
    if let Some(v) = r.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
        return Err(Error::Precondition(format!("reference must be binary, found {v:?}")));
    }
    Ok(())
}

/// `L = −(1/N)·Σ [W·r·p + (1−r)·(1−p)]`.
pub fn loss_wip<T: Real>(p: &Batch<T>, r: &Batch<T>, w: f64) -> Result<(f64, Batch<T>)> {
    check(p, r)?;
    let n = p.len() as f64;
    let mut total = 0.0;
    for (&pi, &ri) in p.data().iter().zip(r.data()) {
        let (pi, ri) = (pi.f64(), ri.f64());
        total += w * ri * pi + (1.0 - ri) * (1.0 - pi);
    }
    let grad = Batch::from_vec(
        p.shape(),
        r.data()
            .iter()
            .map(|&ri| {
                let ri = ri.f64();
                T::of(-(w * ri - (1.0 - ri)) / n)
            })
            .collect(),
    )?;
    Ok((-total / n, grad))
}

/// `L = −(1/N)·Σ [W·r·ln p + (1−r)·ln(1−p)]` with `p` clamped to `[ε, 1−ε]`.
pub fn loss_wce<T: Real>(p: &Batch<T>, r: &Batch<T>, w: f64) -> Result<(f64, Batch<T>)> {
    check(p, r)?;
    let n = p.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &ri) in p.data().iter().zip(r.data()) {
        let (pi, ri) = (pi.f64().clamp(WCE_EPS, 1.0 - WCE_EPS), ri.f64());
        total += w * ri * pi.ln() + (1.0 - ri) * (1.0 - pi).ln();
        grad.push(T::of(-(w * ri / pi - (1.0 - ri) / (1.0 - pi)) / n));
    }
    Ok((-total / n, Batch::from_vec(p.shape(), grad)?))
}

/// Central-difference check of `kind` on a random batch drawn from `seed`:
/// probabilities in (0.05, 0.95), a random binary reference and a weight
/// from {1, 3, 5, 10, 100}.
pub fn check_loss(kind: LossKind, seed: u64, h: f64) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x10_55 ^ ((kind as u64) << 32));
    let shape = [
        rng.random_range(1..=2usize),
        1,
        rng.random_range(1..=5usize),
        rng.random_range(1..=5usize),
        rng.random_range(1..=5usize),
    ];
    let n: usize = shape.iter().product();
    let weight = [1.0, 3.0, 5.0, 10.0, 100.0][rng.random_range(0..5usize)];
    let spec = LossSpec { kind, weight };
    let r = Batch::from_vec(shape, (0..n).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect())?;
    let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
    crate::autograd::finite_diff_check(
        |t| {
            let (l, g) = spec.evaluate(&Batch::from_vec(shape, t.to_vec())?, &r)?;
            Ok((l, g.into_data()))
        },
        &p,
        h,
    )
}
