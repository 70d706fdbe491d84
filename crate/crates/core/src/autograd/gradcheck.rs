//! Central-difference verification of analytic gradients.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::{Conv3d, ConvTranspose3d, Padding};
use super::layers::{self, BatchNormConfig, Mode};
use super::tensor::Batch;
use crate::error::{Error, Result};

/// Compares the analytic gradient returned by `f` with central differences
/// of its value. `f` maps parameters to `(value, gradient)`.
///
/// Returns `max_i |a_i − n_i| / max(1e-8, |a_i| + |n_i|)`.
pub fn finite_diff_check<F>(f: F, params: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (value, analytic) = f(params)?;
    if analytic.len() != params.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    if !value.is_finite() || analytic.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite value or gradient at the base point".into()));
    }
    let mut theta = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        theta[i] = params[i] + h;
        let up = f(&theta)?.0;
        theta[i] = params[i] - h;
        let down = f(&theta)?.0;
        theta[i] = params[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!("non-finite value perturbing parameter {i}")));
        }
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Every differentiable operator with a gradient-check case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    Conv3d,
    Conv3dStrided,
    Conv3dPointwise,
    ConvTranspose3d,
    MaxPool3d,
    BatchNormTrain,
    BatchNormEval,
    Prelu,
    Sigmoid,
    ConcatChannels,
    ResidualAdd,
}

impl Operator {
    pub const ALL: [Operator; 11] = [
        Operator::Conv3d,
        Operator::Conv3dStrided,
        Operator::Conv3dPointwise,
        Operator::ConvTranspose3d,
        Operator::MaxPool3d,
        Operator::BatchNormTrain,
        Operator::BatchNormEval,
        Operator::Prelu,
        Operator::Sigmoid,
        Operator::ConcatChannels,
        Operator::ResidualAdd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operator::Conv3d => "conv3d",
            Operator::Conv3dStrided => "conv3d_stride2",
            Operator::Conv3dPointwise => "conv3d_1x1",
            Operator::ConvTranspose3d => "conv_transpose3d",
            Operator::MaxPool3d => "maxpool3d",
            Operator::BatchNormTrain => "batchnorm3d_train",
            Operator::BatchNormEval => "batchnorm3d_eval",
            Operator::Prelu => "prelu",
            Operator::Sigmoid => "sigmoid",
            Operator::ConcatChannels => "concat_channels",
            Operator::ResidualAdd => "residual_add",
        }
    }
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values bounded away from zero with random sign.
fn off_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Runs the check for `op` on a random small shape drawn from `seed`
/// (B ≤ 2, C ≤ 3, spatial extents ≤ 6). The checked scalar is `Σ r·op(θ)`
/// for a fixed random `r`.
pub fn check_operator(op: Operator, seed: u64, h: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (op as u64).wrapping_mul(0x9E37_79B9));
    let b = rng.random_range(1..=2usize);
    let cin = rng.random_range(1..=3usize);
    let cout = rng.random_range(1..=3usize);
    let mut spatial = [0usize; 3];
    for s in &mut spatial {
        *s = rng.random_range(2..=6usize);
    }
    let xshape = [b, cin, spatial[0], spatial[1], spatial[2]];
    let nx: usize = xshape.iter().product();
    let x = |t: &[f64]| Batch::from_vec(xshape, t[..nx].to_vec());

    match op {
        Operator::Conv3d | Operator::Conv3dStrided | Operator::Conv3dPointwise => {
            let conv = match op {
                Operator::Conv3d => Conv3d::new(cin, cout, 3, 1, Padding::Same),
                Operator::Conv3dStrided => {
                    if rng.random_bool(0.5) {
                        Conv3d::new(cin, cout, 3, 2, Padding::Same)
                    } else {
                        Conv3d::new(cin, cout, 2, 2, Padding::Valid)
                    }
                }
                _ => Conv3d::new(cin, cout, 1, 1, Padding::Same),
            };
            let nw = conv.weight_len();
            let out = conv.output_dims(spatial)?;
            let r = uniform(&mut rng, b * cout * out.iter().product::<usize>(), -1.0, 1.0);
            let theta = uniform(&mut rng, nx + nw + cout, -1.0, 1.0);
            finite_diff_check(
                |t| {
                    let xb = x(t)?;
                    let (w, bias) = (&t[nx..nx + nw], &t[nx + nw..]);
                    let y = conv.forward(&xb, w, Some(bias))?;
                    let g = conv.backward(&xb, w, &Batch::from_vec(y.shape(), r.clone())?, true)?;
                    let mut grad = g.input.unwrap().into_data();
                    grad.extend(g.weight);
                    grad.extend(g.bias);
                    Ok((dot(y.data(), &r), grad))
                },
                &theta,
                h,
            )
        }
        Operator::ConvTranspose3d => {
            let ct = ConvTranspose3d::new(cin, cout);
            let nw = ct.weight_len();
            let r = uniform(&mut rng, b * cout * 8 * nx / (b * cin), -1.0, 1.0);
            let theta = uniform(&mut rng, nx + nw, -1.0, 1.0);
            finite_diff_check(
                |t| {
                    let xb = x(t)?;
                    let w = &t[nx..];
                    let y = ct.forward(&xb, w)?;
                    let g = ct.backward(&xb, w, &Batch::from_vec(y.shape(), r.clone())?, true)?;
                    let mut grad = g.input.unwrap().into_data();
                    grad.extend(g.weight);
                    Ok((dot(y.data(), &r), grad))
                },
                &theta,
                h,
            )
        }
        Operator::MaxPool3d => {
            // Well-separated distinct values so no perturbation flips an argmax.
            let mut theta: Vec<f64> = (0..nx).map(|i| i as f64 * 0.1).collect();
            theta.shuffle(&mut rng);
            for v in &mut theta {
                *v += rng.random_range(0.0..0.01);
            }
            let out = xshape[0] * xshape[1] * spatial.iter().map(|s| s / 2).product::<usize>();
            let r = uniform(&mut rng, out, -1.0, 1.0);
            finite_diff_check(
                |t| {
                    let xb = x(t)?;
                    let (y, arg) = layers::maxpool3d(&xb)?;
                    let dx = layers::maxpool3d_backward(xshape, &arg, &Batch::from_vec(y.shape(), r.clone())?);
                    Ok((dot(y.data(), &r), dx.into_data()))
                },
                &theta,
                h,
            )
        }
        Operator::BatchNormTrain | Operator::BatchNormEval => {
            let mode = if op == Operator::BatchNormTrain { Mode::Train } else { Mode::Eval };
            let rm = uniform(&mut rng, cin, -0.5, 0.5);
            let rv = uniform(&mut rng, cin, 0.5, 2.0);
            let r = uniform(&mut rng, nx, -1.0, 1.0);
            let mut theta = uniform(&mut rng, nx, -2.0, 2.0);
            theta.extend(uniform(&mut rng, cin, 0.5, 1.5));
            theta.extend(uniform(&mut rng, cin, -0.5, 0.5));
            finite_diff_check(
                |t| {
                    let xb = x(t)?;
                    let (gamma, beta) = (&t[nx..nx + cin], &t[nx + cin..]);
                    let (y, cache) = layers::batchnorm3d(&xb, gamma, beta, &rm, &rv, mode, BatchNormConfig::default())?;
                    let (dx, dg, db) = layers::batchnorm3d_backward(gamma, &cache, &Batch::from_vec(xshape, r.clone())?);
                    let mut grad = dx.into_data();
                    grad.extend(dg);
                    grad.extend(db);
                    Ok((dot(y.data(), &r), grad))
                },
                &theta,
                h,
            )
        }
        Operator::Prelu => {
            let r = uniform(&mut rng, nx, -1.0, 1.0);
            let mut theta = off_zero(&mut rng, nx);
            theta.extend(uniform(&mut rng, cin, 0.0, 0.5));
            finite_diff_check(
                |t| {
                    let xb = x(t)?;
                    let a = &t[nx..];
                    let y = layers::prelu(&xb, a)?;
                    let (dx, da) = layers::prelu_backward(&xb, a, &Batch::from_vec(xshape, r.clone())?);
                    let mut grad = dx.into_data();
                    grad.extend(da);
                    Ok((dot(y.data(), &r), grad))
                },
                &theta,
                h,
            )
        }
        Operator::Sigmoid => {
            let r = uniform(&mut rng, nx, -1.0, 1.0);
            let theta = uniform(&mut rng, nx, -4.0, 4.0);
            finite_diff_check(
                |t| {
                    let y = layers::sigmoid(&x(t)?);
                    let dx = layers::sigmoid_backward(&y, &Batch::from_vec(xshape, r.clone())?);
                    Ok((dot(y.data(), &r), dx.into_data()))
                },
                &theta,
                h,
            )
        }
        Operator::ConcatChannels => {
            let yshape = [b, cout, spatial[0], spatial[1], spatial[2]];
            let ny: usize = yshape.iter().product();
            let r = uniform(&mut rng, nx + ny, -1.0, 1.0);
            let theta = uniform(&mut rng, nx + ny, -1.0, 1.0);
            finite_diff_check(
                |t| {
                    let a = x(t)?;
                    let bb = Batch::from_vec(yshape, t[nx..].to_vec())?;
                    let y = layers::concat_channels(&a, &bb)?;
                    let (ga, gb) = layers::split_channels(&Batch::from_vec(y.shape(), r.clone())?, cin);
                    let mut grad = ga.into_data();
                    grad.extend(gb.into_data());
                    Ok((dot(y.data(), &r), grad))
                },
                &theta,
                h,
            )
        }
        Operator::ResidualAdd => {
            let r = uniform(&mut rng, nx, -1.0, 1.0);
            let theta = uniform(&mut rng, 2 * nx, -1.0, 1.0);
            finite_diff_check(
                |t| {
                    let a = x(t)?;
                    let bb = Batch::from_vec(xshape, t[nx..].to_vec())?;
                    let y = layers::residual_add(&a, &bb)?;
                    let mut grad = r.clone();
                    grad.extend_from_slice(&r);
                    Ok((dot(y.data(), &r), grad))
                },
                &theta,
                h,
            )
        }
    }
}
