//! Checks tape gradients of a small conv / batch-norm / locally connected
//! graph against central differences.
//!
//! cargo run --release --example gradient_check

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use t2ci::nn::{finite_diff_check, finite_diff_check_params, Mode, Padding, ParamStore, RunningStats, Tape, Tensor};

fn main() -> t2ci::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    store.add("conv", Tensor::randn([3, 3, 2, 4], 0.0, 0.5, &mut rng));
    store.add("gamma", Tensor::randn([4], 1.0, 0.1, &mut rng));
    store.add("beta", Tensor::randn([4], 0.0, 0.1, &mut rng));
    store.add_buffer("mean", Tensor::zeros([4]));
    store.add_buffer("var", Tensor::full([4], 1.0));
    store.add("lc", Tensor::randn([2, 2, 16, 4], 0.0, 0.3, &mut rng));
    let x = Tensor::randn([2, 8, 8, 2], 0.0, 1.0, &mut rng);

    let graph = |tape: &mut Tape, store: &ParamStore, x| {
        let k = tape.param(store, "conv")?;
        let h = tape.conv2d(x, k, 2, Padding::Same)?;
        let stats = RunningStats {
            mean: store.key("mean")?,
            var: store.key("var")?,
        };
        let g = tape.param(store, "gamma")?;
        let b = tape.param(store, "beta")?;
        let h = tape.batch_norm(h, g, b, store, stats, Mode::Train)?;
        let h = tape.tanh(h)?;
        let w = tape.param(store, "lc")?;
        let h = tape.locally_connected(h, 2, w, None)?;
        let h = tape.mul(h, h)?;
        tape.mean(h)
    };

    let input_err = finite_diff_check(|tape, x| graph(tape, &store, x), &x, 1e-5)?;
    println!("input gradient   max relative error {input_err:.2e}");
    let names = ["conv", "gamma", "beta", "lc"];
    let param_err = finite_diff_check_params(&mut store.clone(), &names, None, 1e-5, 1e-6, |tape, s| {
        let x = tape.constant(x.clone());
        graph(tape, s, x)
    })?;
    println!("parameter gradient max relative error {param_err:.2e}");
    Ok(())
}
