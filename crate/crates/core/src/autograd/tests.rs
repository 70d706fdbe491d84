use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_batch(rng: &mut ChaCha8Rng, shape: [usize; 5]) -> Batch<f64> {
    Batch::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Direct summation over every output voxel and kernel tap.
fn naive_conv(x: &Batch<f64>, w: &[f64], bias: &[f64], cout: usize, k: usize, s: usize, same: bool) -> Batch<f64> {
    let [b, cin, sx, sy, sz] = x.shape();
    let ext = [sx, sy, sz];
    let mut out = [0usize; 3];
    let mut lo = [0isize; 3];
    for a in 0..3 {
        if same {
            out[a] = ext[a].div_ceil(s);
            let total = ((out[a] - 1) * s + k).saturating_sub(ext[a]);
            lo[a] = (total / 2) as isize;
        } else {
            out[a] = (ext[a] - k) / s + 1;
        }
    }
    let mut y = Batch::zeros([b, cout, out[0], out[1], out[2]]);
    let at_x = |n: usize, c: usize, i: usize, j: usize, l: usize| (((n * cin + c) * sx + i) * sy + j) * sz + l;
    for n in 0..b {
        for co in 0..cout {
            for ox in 0..out[0] {
                for oy in 0..out[1] {
                    for oz in 0..out[2] {
                        let mut acc = bias[co];
                        for ci in 0..cin {
                            for kx in 0..k {
                                for ky in 0..k {
                                    for kz in 0..k {
                                        let ix = (ox * s + kx) as isize - lo[0];
                                        let iy = (oy * s + ky) as isize - lo[1];
                                        let iz = (oz * s + kz) as isize - lo[2];
                                        if ix < 0 || iy < 0 || iz < 0 || ix >= sx as isize || iy >= sy as isize || iz >= sz as isize {
                                            continue;
                                        }
                                        let wv = w[(((co * cin + ci) * k + kx) * k + ky) * k + kz];
                                        acc += wv * x.data()[at_x(n, ci, ix as usize, iy as usize, iz as usize)];
                                    }
                                }
                            }
                        }
                        let o = (((n * cout + co) * out[0] + ox) * out[1] + oy) * out[2] + oz;
                        y.data_mut()[o] = acc;
                    }
                }
            }
        }
    }
    y
}

/// Each input voxel scatters `v·w` into its 2³ output block.
fn naive_conv_transpose(x: &Batch<f64>, w: &[f64], cout: usize) -> Batch<f64> {
    let [b, cin, sx, sy, sz] = x.shape();
    let mut y = Batch::zeros([b, cout, 2 * sx, 2 * sy, 2 * sz]);
    for n in 0..b {
        for ci in 0..cin {
            for i in 0..sx {
                for j in 0..sy {
                    for l in 0..sz {
                        let v = x.data()[(((n * cin + ci) * sx + i) * sy + j) * sz + l];
                        for co in 0..cout {
                            for a in 0..2 {
                                for bb in 0..2 {
                                    for c in 0..2 {
                                        let wv = w[(((ci * cout + co) * 2 + a) * 2 + bb) * 2 + c];
                                        let o = (((n * cout + co) * 2 * sx + 2 * i + a) * 2 * sy + 2 * j + bb) * 2 * sz + 2 * l + c;
                                        y.data_mut()[o] += v * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol * (1.0 + y.abs()), "index {i}: {x} vs {y}");
    }
}

#[test]
fn identity_and_zero_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_batch(&mut rng, [2, 1, 3, 4, 5]);
    let conv = Conv3d::new(1, 1, 1, 1, Padding::Same);
    let y = conv.forward(&x, &[1.0], Some(&[0.0])).unwrap();
    assert_eq!(y, x);
    let conv3 = Conv3d::new(1, 2, 3, 1, Padding::Same);
    let y = conv3.forward(&x, &vec![0.0; conv3.weight_len()], Some(&[0.0, 0.0])).unwrap();
    assert_eq!(y.shape(), [2, 2, 3, 4, 5]);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn all_ones_kernel_counts_neighbours() {
    let conv = Conv3d::new(1, 1, 3, 1, Padding::Same);
    let x = Batch::from_fn([1, 1, 3, 3, 3], |_| 1.0f64);
    let w = vec![1.0; 27];
    let y = conv.forward(&x, &w, None).unwrap();
    let oracle = naive_conv(&x, &w, &[0.0], 1, 3, 1, true);
    assert_eq!(y, oracle);
    assert_eq!(y.data()[13], 27.0);
    for corner in [0, 2, 6, 8, 18, 20, 24, 26] {
        assert_eq!(y.data()[corner], 8.0);
    }
}

#[test]
fn conv_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (k, s, same) in [(3, 1, true), (3, 2, true), (2, 2, false), (3, 1, false), (1, 1, true), (3, 2, false)] {
        for _ in 0..3 {
            let shape = [
                rng.random_range(1..=2),
                rng.random_range(1..=3),
                rng.random_range(3..=7),
                rng.random_range(3..=7),
                rng.random_range(3..=7),
            ];
            let cout = rng.random_range(1..=3);
            let pad = if same { Padding::Same } else { Padding::Valid };
            let conv = Conv3d::new(shape[1], cout, k, s, pad);
            let x = rand_batch(&mut rng, shape);
            let w = rand_vec(&mut rng, conv.weight_len());
            let bias = rand_vec(&mut rng, cout);
            let y = conv.forward(&x, &w, Some(&bias)).unwrap();
            let oracle = naive_conv(&x, &w, &bias, cout, k, s, same);
            assert_eq!(y.shape(), oracle.shape(), "k={k} s={s} same={same}");
            assert_close(y.data(), oracle.data(), 1e-12);
        }
    }
}

#[test]
fn conv_errors() {
    let x = Batch::<f64>::zeros([1, 2, 4, 4, 4]);
    let conv = Conv3d::new(3, 1, 3, 1, Padding::Same);
    assert!(matches!(conv.forward(&x, &vec![0.0; conv.weight_len()], None), Err(crate::Error::Shape(_))));
    let valid = Conv3d::new(2, 1, 3, 1, Padding::Valid);
    let small = Batch::<f64>::zeros([1, 2, 2, 4, 4]);
    assert!(matches!(valid.forward(&small, &vec![0.0; valid.weight_len()], None), Err(crate::Error::Shape(_))));
}

#[test]
fn conv_transpose_scatter() {
    let ct = ConvTranspose3d::new(1, 1);
    let x = Batch::from_vec([1, 1, 1, 1, 1], vec![2.5f64]).unwrap();
    let y = ct.forward(&x, &[1.0; 8]).unwrap();
    assert_eq!(y.shape(), [1, 1, 2, 2, 2]);
    assert!(y.data().iter().all(|&v| v == 2.5));

    let ct = ConvTranspose3d::new(3, 2);
    let zero = Batch::<f64>::zeros([2, 3, 4, 4, 4]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = rand_vec(&mut rng, ct.weight_len());
    let y = ct.forward(&zero, &w).unwrap();
    assert_eq!(y.shape(), [2, 2, 8, 8, 8]);
    assert!(y.data().iter().all(|&v| v == 0.0));

    let x = rand_batch(&mut rng, [2, 3, 3, 2, 4]);
    let y = ct.forward(&x, &w).unwrap();
    assert_close(y.data(), naive_conv_transpose(&x, &w, 2).data(), 1e-12);
    assert!(matches!(ct.forward(&Batch::<f64>::zeros([1, 2, 2, 2, 2]), &w), Err(crate::Error::Shape(_))));
}

#[test]
fn conv_transpose_is_adjoint_of_strided_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let small = [rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4)];
        let conv = Conv3d::new(cin, cout, 2, 2, Padding::Valid);
        let ct = ConvTranspose3d::new(cout, cin);
        let w = rand_vec(&mut rng, conv.weight_len());
        let x = rand_batch(&mut rng, [1, cin, 2 * small[0], 2 * small[1], 2 * small[2]]);
        let y = rand_batch(&mut rng, [1, cout, small[0], small[1], small[2]]);
        let lhs = dot(conv.forward(&x, &w, None).unwrap().data(), y.data());
        let rhs = dot(x.data(), ct.forward(&y, &w).unwrap().data());
        assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(rhs.abs()).max(1e-12), "{lhs} vs {rhs}");
    }
}

#[test]
fn maxpool_examples() {
    let x = Batch::from_fn([1, 1, 8, 8, 8], |_| 3.0f64);
    let (y, arg) = maxpool3d(&x).unwrap();
    assert_eq!(y.shape(), [1, 1, 4, 4, 4]);
    assert!(y.data().iter().all(|&v| v == 3.0));
    let dx = maxpool3d_backward(x.shape(), &arg, &Batch::from_fn(y.shape(), |_| 1.0));
    for i in 0..8 {
        for j in 0..8 {
            for l in 0..8 {
                let g = dx.data()[(i * 8 + j) * 8 + l];
                let first = i % 2 == 0 && j % 2 == 0 && l % 2 == 0;
                assert_eq!(g, if first { 1.0 } else { 0.0 });
            }
        }
    }
    let x = Batch::from_vec([1, 1, 2, 2, 2], vec![1.0f64, 5.0, 3.0, 2.0, 0.0, -1.0, 4.0, 5.0]).unwrap();
    let (y, arg) = maxpool3d(&x).unwrap();
    assert_eq!(y.data(), &[5.0]);
    assert_eq!(arg, vec![1]);
    assert!(maxpool3d(&Batch::<f64>::zeros([1, 1, 1, 4, 4])).is_err());
}

#[test]
fn batchnorm_examples() {
    let cfg = BatchNormConfig::default();
    let x = Batch::from_fn([2, 1, 2, 2, 2], |_| 7.0f64);
    let (y, _) = batchnorm3d(&x, &[1.0], &[0.0], &[0.0], &[1.0], Mode::Train, cfg).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));

    let tiny = BatchNormConfig { eps: 1e-14, ..cfg };
    let x = Batch::from_vec([1, 1, 1, 1, 2], vec![1.0f64, 3.0]).unwrap();
    let (y, cache) = batchnorm3d(&x, &[1.0], &[0.0], &[0.0], &[1.0], Mode::Train, tiny).unwrap();
    assert_close(y.data(), &[-1.0, 1.0], 1e-9);
    let (mut rm, mut rv) = (vec![0.0], vec![1.0]);
    update_running_stats(&mut rm, &mut rv, &cache, tiny);
    assert_close(&rm, &[0.1 * 2.0], 1e-12);
    // Unbiased variance of {1, 3} is 2.
    assert_close(&rv, &[0.9 + 0.1 * 2.0], 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_batch(&mut rng, [2, 2, 3, 3, 3]);
    let (y, _) = batchnorm3d(&x, &[0.0, 0.0], &[0.3, -0.7], &[0.0, 0.0], &[1.0, 1.0], Mode::Train, cfg).unwrap();
    for (i, &v) in y.data().iter().enumerate() {
        let c = (i / 27) % 2;
        assert_eq!(v, [0.3, -0.7][c]);
    }

    let x = Batch::from_vec([1, 1, 1, 1, 2], vec![1.0f64, 3.0]).unwrap();
    let (y, _) = batchnorm3d(&x, &[2.0], &[1.0], &[1.0], &[4.0], Mode::Eval, cfg).unwrap();
    let s = (4.0f64 + 1e-5).sqrt();
    assert_close(y.data(), &[1.0, 2.0 * 2.0 / s + 1.0], 1e-12);

    let single = Batch::from_vec([1, 1, 1, 1, 1], vec![1.0f64]).unwrap();
    assert!(matches!(
        batchnorm3d(&single, &[1.0], &[0.0], &[0.0], &[1.0], Mode::Train, cfg),
        Err(crate::Error::Precondition(_))
    ));
    assert!(batchnorm3d(&single, &[1.0], &[0.0], &[0.0], &[1.0], Mode::Eval, cfg).is_ok());
}

#[test]
fn prelu_and_sigmoid_examples() {
    let x = Batch::from_vec([1, 1, 1, 1, 3], vec![2.0f64, -2.0, -5.0]).unwrap();
    assert_eq!(prelu(&x, &[0.25]).unwrap().data(), &[2.0, -0.5, -1.25]);
    assert_eq!(prelu(&x, &[0.0]).unwrap().data(), &[2.0, 0.0, 0.0]);
    assert!(prelu(&x, &[0.25, 0.25]).is_err());

    assert_eq!(sigmoid_scalar(0.0f64), 0.5);
    assert!((sigmoid_scalar(50.0f64) - 1.0).abs() < 1e-12);
    assert!(sigmoid_scalar(-100.0f64) > 0.0);
    assert!(sigmoid_scalar(100.0f64).is_finite());
    let y = sigmoid(&Batch::from_vec([1, 1, 1, 1, 1], vec![0.0f64]).unwrap());
    let d = sigmoid_backward(&y, &Batch::from_vec([1, 1, 1, 1, 1], vec![1.0]).unwrap());
    assert_eq!(d.data(), &[0.25]);
}

#[test]
fn structural_joins() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = rand_batch(&mut rng, [2, 2, 2, 3, 2]);
    let b = rand_batch(&mut rng, [2, 3, 2, 3, 2]);
    let empty = Batch::<f64>::zeros([2, 0, 2, 3, 2]);
    assert_eq!(concat_channels(&a, &empty).unwrap(), a);
    let c = concat_channels(&a, &b).unwrap();
    assert_eq!(c.shape(), [2, 5, 2, 3, 2]);
    for s in 0..2 {
        assert_eq!(c.plane(s, 2), b.plane(s, 0));
        assert_eq!(c.plane(s, 1), a.plane(s, 1));
    }
    let (ga, gb) = split_channels(&c, 2);
    assert_eq!((ga, gb), (a.clone(), b.clone()));
    assert!(concat_channels(&a, &Batch::zeros([2, 1, 2, 3, 3])).is_err());

    assert_eq!(residual_add(&a, &Batch::zeros(a.shape())).unwrap(), a);
    assert!(residual_add(&a, &a.map(|v| -v)).unwrap().data().iter().all(|&v| v == 0.0));
    assert!(residual_add(&a, &b).is_err());
}

#[test]
fn finite_diff_check_basics() {
    let linear = |t: &[f64]| Ok((t.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v).sum(), (1..=t.len()).map(|i| i as f64).collect()));
    assert!(finite_diff_check(linear, &[0.3, -1.2, 4.0], 1e-5).unwrap() < 1e-10);
    let constant = |t: &[f64]| Ok((2.0, vec![0.0; t.len()]));
    assert_eq!(finite_diff_check(constant, &[1.0, 2.0], 1e-5).unwrap(), 0.0);
    let blowup = |t: &[f64]| Ok((1.0 / t[0], vec![-1.0 / (t[0] * t[0])]));
    assert!(matches!(finite_diff_check(blowup, &[0.0], 1e-5), Err(crate::Error::Numeric(_))));
}

#[test]
fn conv_sigmoid_sum_composite() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shape = [2, 2, 5, 5, 5];
    let nx: usize = shape.iter().product();
    let conv = Conv3d::new(2, 2, 3, 1, Padding::Same);
    let nw = conv.weight_len();
    let mut theta = rand_vec(&mut rng, nx);
    theta.extend(rand_vec(&mut rng, nw).iter().map(|v| v * 0.3));
    theta.extend(rand_vec(&mut rng, 2));
    let f = |t: &[f64]| {
        let x = Batch::from_vec(shape, t[..nx].to_vec())?;
        let mut params = ParamStore::new();
        let w = params.add_param("w", conv.weight_shape(), t[nx..nx + nw].to_vec());
        let b = params.add_param("b", vec![2], t[nx + nw..].to_vec());
        let mut tape = Tape::new(Mode::Train);
        let xi = tape.leaf(x);
        let h = tape.conv(&params, xi, conv, w, Some(b))?;
        let p = tape.sigmoid(h);
        let value: f64 = tape.value(p).data().iter().sum();
        let seed = Batch::from_fn(tape.value(p).shape(), |_| 1.0);
        let grads = tape.backward(p, seed, &mut params)?;
        let mut g = grads[xi.index()].clone().unwrap().into_data();
        g.extend(params.flat_grads());
        Ok((value, g))
    };
    assert!(finite_diff_check(f, &theta, 1e-5).unwrap() < 1e-4);
}

#[test]
fn every_operator_passes_gradient_check() {
    for op in Operator::ALL {
        for seed in 0..20 {
            let err = check_operator(op, seed, 1e-5).unwrap();
            assert!(err < 1e-4, "{} seed {seed}: {err}", op.name());
        }
    }
}

#[test]
fn tape_accumulates_shared_parameters() {
    // y = conv(conv(x)) with the same weights: gradient must sum both uses.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let conv = Conv3d::new(2, 2, 3, 1, Padding::Same);
    let x = rand_batch(&mut rng, [1, 2, 3, 3, 3]);
    let w0 = rand_vec(&mut rng, conv.weight_len());
    let f = |t: &[f64]| {
        let mut params = ParamStore::new();
        let w = params.add_param("w", conv.weight_shape(), t.to_vec());
        let mut tape = Tape::new(Mode::Eval);
        let xi = tape.input(x.clone());
        let h = tape.conv(&params, xi, conv, w, None)?;
        let y = tape.conv(&params, h, conv, w, None)?;
        let v = tape.value(y).data().iter().sum();
        let seed = Batch::from_fn(tape.value(y).shape(), |_| 1.0);
        let grads = tape.backward(y, seed, &mut params)?;
        assert!(grads[0].is_none());
        Ok((v, params.flat_grads()))
    };
    assert!(finite_diff_check(f, &w0, 1e-5).unwrap() < 1e-4);
}

#[test]
fn forward_is_independent_of_thread_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Batch<f32> = rand_batch(&mut rng, [2, 3, 9, 7, 8]).cast();
    let conv = Conv3d::new(3, 4, 3, 1, Padding::Same);
    let w: Vec<f32> = rand_vec(&mut rng, conv.weight_len()).iter().map(|&v| v as f32).collect();
    let dy: Batch<f32> = rand_batch(&mut rng, [2, 4, 9, 7, 8]).cast();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let y = conv.forward(&x, &w, Some(&[0.1, 0.2, 0.3, 0.4])).unwrap();
            let g = conv.backward(&x, &w, &dy, true).unwrap();
            let (p, _) = maxpool3d(&y).unwrap();
            (y, g.weight, g.input.unwrap(), p)
        })
    };
    let a = run(1);
    for t in [2, 3, 5] {
        let b = run(t);
        assert!(a.0.data().iter().zip(b.0.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
        assert!(a.1.iter().zip(&b.1).all(|(u, v)| u.to_bits() == v.to_bits()));
        assert!(a.2.data().iter().zip(b.2.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
        assert_eq!(a.3, b.3);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn same_padding_stride_one_preserves_dims(x in 1usize..8, y in 1usize..8, z in 1usize..8, k in prop::sample::select(vec![1usize, 3, 5])) {
        let conv = Conv3d::new(1, 1, k, 1, Padding::Same);
        prop_assert_eq!(conv.output_dims([x, y, z]).unwrap(), [x, y, z]);
    }

    #[test]
    fn same_padding_stride_two_is_ceil(x in 1usize..12, y in 1usize..12, z in 1usize..12) {
        let conv = Conv3d::new(1, 1, 3, 2, Padding::Same);
        prop_assert_eq!(conv.output_dims([x, y, z]).unwrap(), [x.div_ceil(2), y.div_ceil(2), z.div_ceil(2)]);
    }
}
