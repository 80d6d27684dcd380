//! Finite-difference checks shared by the gradient tests and the acceptance run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use t2ci::dataset::{generate_toy_dataset, prepare_compressed_dataset, toy_word_vectors};
use t2ci::coeffs::CoefficientMask;
use t2ci::models::{DecoderH, Generator, IdctLayer, ModelVariant};
use t2ci::nn::gradcheck::relative_error;
use t2ci::nn::{finite_diff_check, Mode, Padding, ParamStore, RunningStats, Tape, Tensor, Var};
use t2ci::training::{GanModel, TrainConfig, TrainingSet};
use t2ci::Result;

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-5;
/// The full losses pass through many leaky units, so a wider step can
/// straddle one of their kinks.
const FULL_LOSS_EPS: f64 = 1e-6;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random values kept at least 0.1 away from zero, clear of kinks.
fn off_zero(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape.to_vec(), 0.0, 1.0, &mut rng(seed)).map(|v| v + 0.1 * v.signum())
}

/// Fixed non-uniform weighting turning any output into a scalar.
fn project(tape: &mut Tape, y: Var) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| (i as f64 * 0.7).sin() + 0.3).collect())?;
    let z = tape.mul_const(y, &w)?;
    tape.sum(z)
}

fn check(name: &str, x: &Tensor, f: impl Fn(&mut Tape, Var) -> Result<Var>) {
    check_with_step(name, x, EPS, f)
}

fn check_with_step(name: &str, x: &Tensor, eps: f64, f: impl Fn(&mut Tape, Var) -> Result<Var>) {
    let err = finite_diff_check(
        |t, v| {
            let y = f(t, v)?;
            project(t, y)
        },
        x,
        eps,
    )
    .unwrap();
    assert!(err < TOL, "{name}: relative error {err:e}");
}

pub fn elementwise_ops() {
    let x = off_zero(&[2, 3, 4], 1);
    check("leaky_relu", &x, |t, v| t.leaky_relu(v, 0.2));
    check("tanh", &x, |t, v| t.tanh(v));
    check("sigmoid", &x, |t, v| t.sigmoid(v));
    check("abs", &x, |t, v| t.abs(v));
    check("affine", &x, |t, v| t.affine(v, -1.7, 0.4));
    check("clip", &x.map(|v| v * 3.0), |t, v| t.clip(v, -1.05, 1.05));
    let c = off_zero(&[2, 3, 4], 2);
    check("mul_const", &x, |t, v| t.mul_const(v, &c));
    check("add_const", &x, |t, v| t.add_const(v, &c));
    check("add", &x, |t, v| {
        let k = t.constant(c.clone());
        t.add(v, k)
    });
    check("sub", &x, |t, v| {
        let k = t.constant(c.clone());
        t.sub(k, v)
    });
    check("mul", &x, |t, v| {
        let k = t.constant(c.clone());
        let a = t.mul(v, k)?;
        t.mul(a, v)
    });
    check("mean", &x, |t, v| t.mean(v));
    check("sum", &x, |t, v| t.sum(v));
}

pub fn shape_ops() {
    let x = off_zero(&[2, 4, 4, 3], 3);
    check("reshape", &x, |t, v| t.reshape(v, &[8, 12]));
    check("upsample2", &x, |t, v| t.upsample2(v));
    check("slice_last", &x, |t, v| t.slice_last(v, 1, 2));
    check("concat_last", &x, |t, v| {
        let s = t.affine(v, 2.0, 0.0)?;
        t.concat_last(&[v, s, v])
    });
    check("slice_outer", &x, |t, v| t.slice_outer(v, 1, 1));
    check("concat_outer", &x, |t, v| {
        let s = t.tanh(v)?;
        t.concat_outer(&[s, v])
    });
    let rows = off_zero(&[3, 5], 4);
    check("tile_spatial", &rows, |t, v| t.tile_spatial(v, 2, 3));
    let bias = off_zero(&[3], 5);
    check("add_bias/input", &x, |t, v| {
        let b = t.constant(bias.clone());
        t.add_bias(v, b)
    });
    check("add_bias/bias", &bias, |t, b| {
        let v = t.constant(x.clone());
        t.add_bias(v, b)
    });
}

pub fn dense_layer() {
    let x = off_zero(&[4, 6], 6);
    let w = off_zero(&[6, 3], 7);
    let b = off_zero(&[3], 8);
    let dense = |x: &Tensor, w: &Tensor, b: &Tensor, which: usize| {
        let (x, w, b) = (x.clone(), w.clone(), b.clone());
        move |t: &mut Tape, v: Var| {
            let mut vars = [None; 3];
            vars[which] = Some(v);
            let get = |t: &mut Tape, i: usize, val: &Tensor| vars[i].unwrap_or_else(|| t.constant(val.clone()));
            let (xv, wv, bv) = (get(t, 0, &x), get(t, 1, &w), get(t, 2, &b));
            t.dense(xv, wv, bv)
        }
    };
    check("dense/x", &x, dense(&x, &w, &b, 0));
    check("dense/w", &w, dense(&x, &w, &b, 1));
    check("dense/b", &b, dense(&x, &w, &b, 2));
}

pub fn convolutions_match_direct_loops_and_their_gradients() {
    for (stride, padding, kernel) in [(1, Padding::Same, 3), (2, Padding::Same, 4), (2, Padding::Valid, 3), (1, Padding::Valid, 1)] {
        let x = off_zero(&[2, 7, 6, 3], 9);
        let k = off_zero(&[kernel, kernel, 3, 4], 10);
        let mut tape = Tape::new();
        let (xv, kv) = (tape.constant(x.clone()), tape.constant(k.clone()));
        let y = tape.conv2d(xv, kv, stride, padding).unwrap();
        let s = tape.value(y).shape().to_vec();
        let pads = match padding {
            Padding::Valid => (0, 0),
            Padding::Same => (
                ((s[1] - 1) * stride + kernel).saturating_sub(7) / 2,
                ((s[2] - 1) * stride + kernel).saturating_sub(6) / 2,
            ),
        };
        let expect = super::naive_conv2d(x.data(), (2, 7, 6, 3), k.data(), (kernel, kernel, 4), stride, pads, (s[1], s[2]));
        let worst = expect.iter().zip(tape.value(y).data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-12, "stride {stride} {padding:?}: {worst}");

        let name = format!("conv2d s{stride} {padding:?}");
        check(&name, &x, |t, v| {
            let kk = t.constant(k.clone());
            t.conv2d(v, kk, stride, padding)
        });
        check(&name, &k, |t, kk| {
            let v = t.constant(x.clone());
            t.conv2d(v, kk, stride, padding)
        });
    }
}

pub fn transposed_convolution_is_the_adjoint_and_differentiates() {
    // <conv(x), y> == <x, conv_t(y)> for the same kernel [kh, kw, c_small, c_big].
    let x = off_zero(&[2, 8, 8, 3], 11);
    let k = off_zero(&[4, 4, 3, 5], 12);
    let mut tape = Tape::new();
    let (xv, kv) = (tape.constant(x.clone()), tape.constant(k.clone()));
    let fwd = tape.conv2d(xv, kv, 2, Padding::Same).unwrap();
    let y = off_zero(tape.value(fwd).shape(), 13);
    let yv = tape.constant(y.clone());
    let back = tape.conv2d_transpose(yv, kv, 2, Padding::Same).unwrap();
    let lhs: f64 = tape.value(fwd).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.data().iter().zip(tape.value(back).data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{lhs} vs {rhs}");

    check("conv2d_transpose/x", &y, |t, v| {
        let kk = t.constant(k.clone());
        t.conv2d_transpose(v, kk, 2, Padding::Same)
    });
    check("conv2d_transpose/k", &k, |t, kk| {
        let v = t.constant(y.clone());
        t.conv2d_transpose(v, kk, 2, Padding::Same)
    });
}

pub fn locally_connected_layer() {
    let x = off_zero(&[2, 8, 8, 2], 14);
    let w = off_zero(&[2, 2, 32, 32], 15);
    let b = off_zero(&[2, 2, 32], 16);
    check("locally_connected/x", &x, |t, v| {
        let (wv, bv) = (t.constant(w.clone()), t.constant(b.clone()));
        t.locally_connected(v, 4, wv, Some(bv))
    });
    check("locally_connected/w", &w, |t, wv| {
        let v = t.constant(x.clone());
        t.locally_connected(v, 4, wv, None)
    });
    check("locally_connected/b", &b, |t, bv| {
        let (v, wv) = (t.constant(x.clone()), t.constant(w.clone()));
        t.locally_connected(v, 4, wv, Some(bv))
    });
}

pub fn batch_norm_in_both_modes() {
    let mut store = ParamStore::new();
    store.add_buffer("mean", off_zero(&[3], 17));
    store.add_buffer("var", off_zero(&[3], 18).map(f64::abs));
    let stats = RunningStats {
        mean: store.key("mean").unwrap(),
        var: store.key("var").unwrap(),
    };
    let x = off_zero(&[3, 2, 2, 3], 19);
    let gamma = off_zero(&[3], 20);
    let beta = off_zero(&[3], 21);
    for mode in [Mode::Train, Mode::Eval] {
        check("batch_norm/x", &x, |t, v| {
            let (g, b) = (t.constant(gamma.clone()), t.constant(beta.clone()));
            t.batch_norm(v, g, b, &store, stats, mode)
        });
        check("batch_norm/gamma", &gamma, |t, g| {
            let (v, b) = (t.constant(x.clone()), t.constant(beta.clone()));
            t.batch_norm(v, g, b, &store, stats, mode)
        });
        check("batch_norm/beta", &beta, |t, b| {
            let (v, g) = (t.constant(x.clone()), t.constant(gamma.clone()));
            t.batch_norm(v, g, b, &store, stats, mode)
        });
    }
}

pub fn dropout_with_a_fixed_mask() {
    let x = off_zero(&[4, 10], 22);
    check("dropout", &x, |t, v| t.dropout(v, 0.3, Mode::Train, &mut rng(23)));
}

pub fn losses() {
    let p = Tensor::new([6], vec![0.1, 0.35, 0.5, 0.62, 0.8, 0.97]).unwrap();
    let targets = [1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
    check("bce", &p, |t, v| t.bce(v, &targets, 1e-12));
    let logits = off_zero(&[4, 3], 24);
    check("softmax_cross_entropy", &logits, |t, v| t.softmax_cross_entropy(v, &[0, 2, 1, 2]));
}

pub fn straight_through_rounding_passes_gradient_unchanged() {
    let x = off_zero(&[2, 5], 25);
    let mut tape = Tape::new();
    let v = tape.variable(x.clone());
    let r = tape.round_ste(v).unwrap();
    assert!(tape.value(r).data().iter().all(|v| v.fract() == 0.0));
    let loss = project(&mut tape, r).unwrap();
    let g = tape.backward(loss).unwrap();
    let expect: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin() + 0.3).collect();
    assert_eq!(g.get(v).unwrap().data(), &expect[..]);
}

pub fn decoder_layers() {
    // Mid-range coefficients keep every decoded pixel clear of the clip.
    let plane = Tensor::randn(vec![2, 16, 16, 1], 0.0, 4.0, &mut rng(27));
    let idct = IdctLayer::new(16, 16).unwrap();
    // Linear maps: a wide step is exact and avoids cancellation against
    // the level shift.
    check_with_step("idct", &plane, 0.5, |t, v| idct.forward(t, v));
    let coeffs = Tensor::randn(vec![2, 16, 16, 3], 0.0, 0.1, &mut rng(26));
    let decoder = DecoderH::new(16, 16, 50).unwrap();
    let mut tape = Tape::new();
    let v = tape.constant(coeffs.clone());
    let out = decoder.forward(&mut tape, v).unwrap();
    assert!(tape.value(out).data().iter().all(|&p| (5.0..250.0).contains(&p)));
    check_with_step("decoder_h", &coeffs, 0.01, |t, v| decoder.forward(t, v));
}

fn full_loss_check(variant: ModelVariant) {
    let seed = 31;
    let rgb = generate_toy_dataset(4, 2, seed, 16).unwrap();
    let table = toy_word_vectors(seed);
    let data = match variant {
        ModelVariant::V1 => {
            let dct = prepare_compressed_dataset(&rgb, 50, CoefficientMask::default()).unwrap();
            TrainingSet::from_dct(&dct, &table).unwrap()
        }
        ModelVariant::V2 => TrainingSet::from_rgb(&rgb, &table).unwrap(),
    };
    let config = TrainConfig::tiny(variant);
    let mut model = GanModel::new(&config, data.range, &mut rng(seed)).unwrap();
    if let Generator::V2(g) = &mut model.generator {
        g.set_rounding(false);
    }
    // Random smooth point: jitter every generator parameter so the
    // consistency term sits away from its kink at zero.
    let mut jitter = rng(seed + 1);
    for p in model.generator.store_mut().iter_mut().filter(|p| p.trainable) {
        let scale = 0.05 * (p.value.data().iter().map(|v| v.abs()).sum::<f64>() / p.value.numel() as f64).max(0.01);
        let noise = Tensor::randn(p.value.shape().to_vec(), 0.0, scale, &mut jitter);
        for (v, n) in p.value.data_mut().iter_mut().zip(noise.data()) {
            *v += n;
        }
    }
    let batch = data.batch(&[0, 1, 2], &mut rng(seed + 2)).unwrap();
    let loss_at = |model: &GanModel| -> (Tape, Var) {
        let mut tape = Tape::new();
        let loss = model.generator_loss(&mut tape, &batch, &mut rng(seed + 3)).unwrap();
        (tape, loss)
    };

    let (tape, loss) = loss_at(&model);
    // The loss sums thousands of terms, so evaluating it carries tens of
    // ulps of noise. Below this size a gradient is lost in that noise
    // divided by the step.
    let noise = 64.0 * tape.value(loss).item().unwrap().abs() * f64::EPSILON;
    let floor = noise / FULL_LOSS_EPS / TOL;
    let grads = tape.backward(loss).unwrap();
    let store = model.generator.store_mut();
    store.zero_grad();
    store.accumulate_grads(&tape, &grads);
    let analytic: Vec<(String, Tensor)> =
        store.iter().filter(|p| p.trainable).map(|p| (p.name.clone(), p.grad.clone())).collect();

    let mut pick = rng(seed + 4);
    let mut worst = (0.0, String::new());
    for (name, grad) in &analytic {
        for _ in 0..3 {
            let i = rand::Rng::random_range(&mut pick, 0..grad.numel());
            let orig = model.generator.store().get(name).unwrap().value.data()[i];
            let mut value_with = |delta: f64| {
                model.generator.store_mut().get_mut(name).unwrap().value.data_mut()[i] = orig + delta;
                let (t, l) = loss_at(&model);
                t.value(l).item().unwrap()
            };
            let numeric = (value_with(FULL_LOSS_EPS) - value_with(-FULL_LOSS_EPS)) / (2.0 * FULL_LOSS_EPS);
            value_with(0.0);
            let err = relative_error(grad.data()[i], numeric, floor);
            if err > worst.0 {
                worst = (err, format!("{name}[{i}]: analytic {} numeric {numeric}", grad.data()[i]));
            }
        }
    }
    assert!(worst.0 < TOL, "{variant}: {} ({:e})", worst.1, worst.0);
}

pub fn generator_loss_graph_v1() {
    full_loss_check(ModelVariant::V1);
}

pub fn generator_loss_graph_v2_without_rounding() {
    full_loss_check(ModelVariant::V2);
}

pub const CASES: &[(&str, fn())] = &[
    ("elementwise_ops", elementwise_ops),
    ("shape_ops", shape_ops),
    ("dense_layer", dense_layer),
    ("convolutions_match_direct_loops_and_their_gradients", convolutions_match_direct_loops_and_their_gradients),
    ("transposed_convolution_is_the_adjoint_and_differentiates", transposed_convolution_is_the_adjoint_and_differentiates),
    ("locally_connected_layer", locally_connected_layer),
    ("batch_norm_in_both_modes", batch_norm_in_both_modes),
    ("dropout_with_a_fixed_mask", dropout_with_a_fixed_mask),
    ("losses", losses),
    ("straight_through_rounding_passes_gradient_unchanged", straight_through_rounding_passes_gradient_unchanged),
    ("decoder_layers", decoder_layers),
    ("generator_loss_graph_v1", generator_loss_graph_v1),
    ("generator_loss_graph_v2_without_rounding", generator_loss_graph_v2_without_rounding),
];
