use rand::Rng;

use super::Architecture;
use crate::embedding::EMBEDDING_DIM;
use crate::error::{Error, Result};
use crate::nn::{
    Mode, Padding, ParamStore, RunningStats, Tape, Tensor, Var, DROPOUT_RATE, INIT_STD, LEAKY_SLOPE,
};

/// Four stride-2 convolutions (batch norm on all but the first), then the
/// tiled caption embedding is appended as channels, mixed with the image
/// features by a 1x1 convolution, and a last valid convolution covering
/// the remaining grid gives one logit per item.
#[derive(Debug, Clone)]
pub struct Discriminator {
    arch: Architecture,
    store: ParamStore,
    dropout: f64,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut store = ParamStore::new();
        let mut c_in = 3;
        for (i, &w) in arch.discriminator_widths.iter().enumerate() {
            store.add(
                format!("d/conv{i}/kernel"),
                Tensor::randn([4, 4, c_in, w], 0.0, INIT_STD, rng),
            );
            if i == 0 {
                store.add("d/conv0/bias", Tensor::zeros([w]));
            } else {
                add_batch_norm(&mut store, &format!("d/conv{i}"), w);
            }
            c_in = w;
        }
        store.add(
            "d/joint/kernel",
            Tensor::randn([1, 1, c_in + EMBEDDING_DIM, c_in], 0.0, INIT_STD, rng),
        );
        add_batch_norm(&mut store, "d/joint", c_in);
        let r = arch.image_size / 16;
        store.add("d/final/kernel", Tensor::randn([r, r, c_in, 1], 0.0, INIT_STD, rng));
        store.add("d/final/bias", Tensor::zeros([1]));
        Ok(Discriminator {
            arch,
            store,
            dropout: DROPOUT_RATE,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::param(format!("dropout rate {rate} outside [0, 1)")));
        }
        self.dropout = rate;
        Ok(())
    }

    /// `img: [n, S, S, 3]` (any scale; callers feed `[-1, 1]`), `psi: [n,
    /// 300]`. Returns `[n]` probabilities that each pair is real.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        img: Var,
        psi: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let s = self.arch.image_size;
        let n = match (tape.value(img).shape(), psi.shape()) {
            (&[n, h, w, 3], &[m, EMBEDDING_DIM]) if h == s && w == s && n == m => n,
            (is, ps) => {
                return Err(Error::dim(format!(
                    "discriminator expects [n, {s}, {s}, 3] and [n, {EMBEDDING_DIM}], got {is:?} and {ps:?}"
                )))
            }
        };
        let store = &self.store;
        let mut h = img;
        for i in 0..4 {
            let k = tape.param(store, &format!("d/conv{i}/kernel"))?;
            h = tape.conv2d(h, k, 2, Padding::Same)?;
            if i == 0 {
                let b = tape.param(store, "d/conv0/bias")?;
                h = tape.add_bias(h, b)?;
            } else {
                h = apply_batch_norm(tape, store, &format!("d/conv{i}"), h, mode)?;
            }
            h = tape.leaky_relu(h, LEAKY_SLOPE)?;
            h = tape.dropout(h, self.dropout, mode, rng)?;
        }
        let r = s / 16;
        let p = tape.constant(psi.clone());
        let tiled = tape.tile_spatial(p, r, r)?;
        let h = tape.concat_last(&[h, tiled])?;
        let k = tape.param(store, "d/joint/kernel")?;
        let h = tape.conv2d(h, k, 1, Padding::Valid)?;
        let h = apply_batch_norm(tape, store, "d/joint", h, mode)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        let h = tape.dropout(h, self.dropout, mode, rng)?;
        let k = tape.param(store, "d/final/kernel")?;
        let h = tape.conv2d(h, k, 1, Padding::Valid)?;
        let b = tape.param(store, "d/final/bias")?;
        let h = tape.add_bias(h, b)?;
        let h = tape.sigmoid(h)?;
        tape.reshape(h, &[n])
    }
}

fn add_batch_norm(store: &mut ParamStore, layer: &str, width: usize) {
    store.add(format!("{layer}/gamma"), Tensor::ones([width]));
    store.add(format!("{layer}/beta"), Tensor::zeros([width]));
    store.add_buffer(format!("{layer}/running_mean"), Tensor::zeros([width]));
    store.add_buffer(format!("{layer}/running_var"), Tensor::ones([width]));
}

fn apply_batch_norm(tape: &mut Tape, store: &ParamStore, layer: &str, x: Var, mode: Mode) -> Result<Var> {
    let gamma = tape.param(store, &format!("{layer}/gamma"))?;
    let beta = tape.param(store, &format!("{layer}/beta"))?;
    let stats = RunningStats {
        mean: store.key(&format!("{layer}/running_mean"))?,
        var: store.key(&format!("{layer}/running_var"))?,
    };
    tape.batch_norm(x, gamma, beta, store, stats, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Profile;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn probabilities_per_item() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = Discriminator::new(Architecture::for_profile(Profile::Tiny), &mut rng).unwrap();
        let img = Tensor::randn([3, 16, 16, 3], 0.0, 0.5, &mut rng);
        let psi = Tensor::randn([3, EMBEDDING_DIM], 0.0, 0.3, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(img.clone());
        let p = d.forward(&mut tape, x, &psi, Mode::Train, &mut rng).unwrap();
        assert_eq!(tape.value(p).shape(), &[3]);
        assert!(tape.value(p).data().iter().all(|v| *v > 0.0 && *v < 1.0));

        let eval = |rng: &mut ChaCha8Rng| {
            let mut t = Tape::new();
            let x = t.constant(img.clone());
            let p = d.forward(&mut t, x, &psi, Mode::Eval, rng).unwrap();
            t.value(p).clone()
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(eval(&mut r1), eval(&mut r2));
    }

    #[test]
    fn rejects_wrong_image_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = Discriminator::new(Architecture::for_profile(Profile::Tiny), &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 8, 8, 3]));
        let psi = Tensor::zeros([1, EMBEDDING_DIM]);
        assert!(d.forward(&mut tape, x, &psi, Mode::Eval, &mut rng).is_err());
    }
}
