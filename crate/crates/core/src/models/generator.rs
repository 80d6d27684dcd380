use rand::Rng;

use super::decoder::coefficient_divisors;
use super::{check_conditioning, Architecture, ModelVariant, NOISE_DIM};
use crate::codec::color::{RGB_TO_YCBCR, YCBCR_OFFSET};
use crate::codec::dct::{basis, LEVEL_SHIFT};
use crate::codec::quant::validate_quality;
use crate::embedding::EMBEDDING_DIM;
use crate::error::{Error, Result};
use crate::nn::{Mode, Padding, ParamStore, RunningStats, Tape, Tensor, Var, INIT_STD, LEAKY_SLOPE};

/// Parameter prefixes of the six locally connected layers: three 1x1
/// colour layers then three 8x8 transform layers, one per output channel.
pub const LOC_LAYER_NAMES: [&str; 6] = [
    "loc1/y", "loc1/cb", "loc1/cr", "loc2/y", "loc2/cb", "loc2/cr",
];

fn gaussian<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::randn(shape.to_vec(), 0.0, INIT_STD, rng)
}

fn init_backbone<R: Rng + ?Sized>(store: &mut ParamStore, arch: &Architecture, rng: &mut R) {
    let s = arch.seed_size();
    let widths = arch.generator_widths;
    store.add("g/dense/w", gaussian(&[NOISE_DIM + EMBEDDING_DIM, s * s * widths[0]], rng));
    store.add("g/dense/b", Tensor::zeros([s * s * widths[0]]));
    let mut c_in = widths[0];
    for (i, &w) in widths.iter().enumerate() {
        store.add(format!("g/stage{i}/kernel"), gaussian(&[3, 3, c_in, w], rng));
        store.add(format!("g/stage{i}/gamma"), Tensor::ones([w]));
        store.add(format!("g/stage{i}/beta"), Tensor::zeros([w]));
        store.add_buffer(format!("g/stage{i}/running_mean"), Tensor::zeros([w]));
        store.add_buffer(format!("g/stage{i}/running_var"), Tensor::ones([w]));
        c_in = w;
    }
    store.add("g/up/kernel", gaussian(&[4, 4, c_in, c_in], rng));
    store.add("g/up/bias", Tensor::zeros([c_in]));
    store.add("g/out/kernel", gaussian(&[3, 3, c_in, 3], rng));
    store.add("g/out/bias", Tensor::zeros([3]));
}

/// Dense -> four conv/BN/LeakyReLU stages (nearest 2x upsampling before the
/// second and third) -> stride-2 transposed conv -> conv -> tanh.
fn backbone_forward(
    tape: &mut Tape,
    store: &ParamStore,
    arch: &Architecture,
    z: &Tensor,
    psi: &Tensor,
    mode: Mode,
) -> Result<Var> {
    let n = check_conditioning(z, psi)?;
    let s = arch.seed_size();
    let zv = tape.constant(z.clone());
    let pv = tape.constant(psi.clone());
    let x = tape.concat_last(&[zv, pv])?;
    let w = tape.param(store, "g/dense/w")?;
    let b = tape.param(store, "g/dense/b")?;
    let h = tape.dense(x, w, b)?;
    let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
    let mut h = tape.reshape(h, &[n, s, s, arch.generator_widths[0]])?;
    for i in 0..4 {
        if i == 1 || i == 2 {
            h = tape.upsample2(h)?;
        }
        let k = tape.param(store, &format!("g/stage{i}/kernel"))?;
        h = tape.conv2d(h, k, 1, Padding::Same)?;
        let gamma = tape.param(store, &format!("g/stage{i}/gamma"))?;
        let beta = tape.param(store, &format!("g/stage{i}/beta"))?;
        let stats = RunningStats {
            mean: store.key(&format!("g/stage{i}/running_mean"))?,
            var: store.key(&format!("g/stage{i}/running_var"))?,
        };
        h = tape.batch_norm(h, gamma, beta, store, stats, mode)?;
        h = tape.leaky_relu(h, LEAKY_SLOPE)?;
    }
    let k = tape.param(store, "g/up/kernel")?;
    let h = tape.conv2d_transpose(h, k, 2, Padding::Same)?;
    let b = tape.param(store, "g/up/bias")?;
    let h = tape.add_bias(h, b)?;
    let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
    let k = tape.param(store, "g/out/kernel")?;
    let h = tape.conv2d(h, k, 1, Padding::Same)?;
    let b = tape.param(store, "g/out/bias")?;
    let h = tape.add_bias(h, b)?;
    tape.tanh(h)
}

/// Noise + caption embedding to a `[n, S, S, 3]` tensor in `(-1, 1)`.
#[derive(Debug, Clone)]
pub struct GeneratorV1 {
    arch: Architecture,
    store: ParamStore,
}

impl GeneratorV1 {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut store = ParamStore::new();
        init_backbone(&mut store, &arch, rng);
        Ok(GeneratorV1 { arch, store })
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

    /// `z: [n, 100]`, `psi: [n, 300]`.
    pub fn forward(&self, tape: &mut Tape, z: &Tensor, psi: &Tensor, mode: Mode) -> Result<Var> {
        backbone_forward(tape, &self.store, &self.arch, z, psi, mode)
    }
}

/// Everything a [`GeneratorV2`] forward pass exposes.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorV2Output {
    /// Rounded quantized coefficients, `[n, S, S, 3]`.
    pub quantized: Var,
    /// Coefficients divided by the quantization steps, before rounding.
    pub pre_round: Var,
    /// Backbone image rescaled to `[0, 255]`.
    pub g_hat: Var,
}

/// Backbone followed by per-pixel colour layers, blockwise transform layers
/// and a quantization layer. The learned stages start out as the exact
/// colour transform and DCT.
#[derive(Debug, Clone)]
pub struct GeneratorV2 {
    arch: Architecture,
    quality: u8,
    store: ParamStore,
    inverse_steps: Tensor,
    rounding: bool,
}

impl GeneratorV2 {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, quality: u32, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let quality = validate_quality(quality)?;
        let mut store = ParamStore::new();
        init_backbone(&mut store, &arch, rng);
        let s = arch.image_size;
        for (c, name) in LOC_LAYER_NAMES[..3].iter().enumerate() {
            let w: Vec<f64> = (0..s * s).flat_map(|_| RGB_TO_YCBCR[c]).collect();
            store.add(format!("{name}/weight"), Tensor::new([s, s, 3, 1], w)?);
            store.add(format!("{name}/bias"), Tensor::full([s, s, 1], YCBCR_OFFSET[c]));
        }
        let (weight, bias) = dct_layer_init(s / 8);
        for name in &LOC_LAYER_NAMES[3..] {
            store.add(format!("{name}/weight"), weight.clone());
            store.add(format!("{name}/bias"), bias.clone());
        }
        let inverse_steps = coefficient_divisors(s, s, quality as u32)?.map(|q| 1.0 / q);
        Ok(GeneratorV2 {
            arch,
            quality,
            store,
            inverse_steps,
            rounding: true,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn quality(&self) -> u8 {
        self.quality
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// With rounding off the quantization layer is a plain division, which
    /// makes the whole graph smooth for finite-difference checks.
    pub fn set_rounding(&mut self, on: bool) {
        self.rounding = on;
    }

    /// Number of locally connected layers in the parameter store.
    pub fn loc_layer_count(&self) -> usize {
        self.store
            .names()
            .filter(|n| n.starts_with("loc") && n.ends_with("/weight"))
            .count()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        z: &Tensor,
        psi: &Tensor,
        mode: Mode,
    ) -> Result<GeneratorV2Output> {
        let raw = backbone_forward(tape, &self.store, &self.arch, z, psi, mode)?;
        let g_hat = tape.affine(raw, 127.5, 127.5)?;
        let mut channels = Vec::with_capacity(3);
        for name in &LOC_LAYER_NAMES[..3] {
            let w = tape.param(&self.store, &format!("{name}/weight"))?;
            let b = tape.param(&self.store, &format!("{name}/bias"))?;
            channels.push(tape.locally_connected(g_hat, 1, w, Some(b))?);
        }
        let ycc = tape.concat_last(&channels)?;
        let mut coeffs = Vec::with_capacity(3);
        for (c, name) in LOC_LAYER_NAMES[3..].iter().enumerate() {
            let plane = tape.slice_last(ycc, c, 1)?;
            let w = tape.param(&self.store, &format!("{name}/weight"))?;
            let b = tape.param(&self.store, &format!("{name}/bias"))?;
            coeffs.push(tape.locally_connected(plane, 8, w, Some(b))?);
        }
        let dct = tape.concat_last(&coeffs)?;
        let pre_round = tape.mul_const(dct, &self.inverse_steps)?;
        let quantized = if self.rounding {
            tape.round_ste(pre_round)?
        } else {
            pre_round
        };
        Ok(GeneratorV2Output {
            quantized,
            pre_round,
            g_hat,
        })
    }
}

/// Forward DCT with the level shift folded into the bias, replicated over a
/// `blocks x blocks` grid.
fn dct_layer_init(blocks: usize) -> (Tensor, Tensor) {
    let mut w = [0.0; 64 * 64];
    let mut b = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            for u in 0..8 {
                for v in 0..8 {
                    let k = basis(u, v, y, x);
                    w[(y * 8 + x) * 64 + u * 8 + v] = k;
                    b[u * 8 + v] -= LEVEL_SHIFT * k;
                }
            }
        }
    }
    let n = blocks * blocks;
    let weight = Tensor::new([blocks, blocks, 64, 64], w.repeat(n)).unwrap();
    let bias = Tensor::new([blocks, blocks, 64], b.repeat(n)).unwrap();
    (weight, bias)
}

/// Either generator behind one interface for the training loop.
#[derive(Debug, Clone)]
pub enum Generator {
    V1(GeneratorV1),
    V2(GeneratorV2),
}

impl Generator {
    pub fn variant(&self) -> ModelVariant {
        match self {
            Generator::V1(_) => ModelVariant::V1,
            Generator::V2(_) => ModelVariant::V2,
        }
    }

    pub fn arch(&self) -> &Architecture {
        match self {
            Generator::V1(g) => g.arch(),
            Generator::V2(g) => g.arch(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            Generator::V1(g) => g.store(),
            Generator::V2(g) => g.store(),
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            Generator::V1(g) => g.store_mut(),
            Generator::V2(g) => g.store_mut(),
        }
    }

    pub fn as_v2(&self) -> Result<&GeneratorV2> {
        match self {
            Generator::V2(g) => Ok(g),
            Generator::V1(_) => Err(Error::Config("operation needs a v2 generator".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{noise_batch, Profile};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inputs(n: usize, seed: u64) -> (Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = noise_batch(n, &mut rng);
        let psi = Tensor::randn([n, EMBEDDING_DIM], 0.0, 0.3, &mut rng);
        (z, psi)
    }

    #[test]
    fn v1_output_shape_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GeneratorV1::new(Architecture::for_profile(Profile::Tiny), &mut rng).unwrap();
        let (z, psi) = inputs(2, 2);
        let mut tape = Tape::new();
        let out = g.forward(&mut tape, &z, &psi, Mode::Train).unwrap();
        let v = tape.value(out);
        assert_eq!(v.shape(), &[2, 16, 16, 3]);
        assert!(v.data().iter().all(|x| x.abs() < 1.0));

        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let a = g.forward(&mut t1, &z, &psi, Mode::Eval).unwrap();
        let b = g.forward(&mut t2, &z, &psi, Mode::Eval).unwrap();
        assert_eq!(t1.value(a), t2.value(b));
    }

    #[test]
    fn wrong_conditioning_shapes_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GeneratorV1::new(Architecture::for_profile(Profile::Tiny), &mut rng).unwrap();
        let z = Tensor::zeros([1, 99]);
        let psi = Tensor::zeros([1, EMBEDDING_DIM]);
        assert!(matches!(
            g.forward(&mut Tape::new(), &z, &psi, Mode::Eval),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn v2_has_six_loc_layers_and_integer_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = GeneratorV2::new(Architecture::for_profile(Profile::Tiny), 50, &mut rng).unwrap();
        assert_eq!(g.loc_layer_count(), 6);
        let (z, psi) = inputs(1, 4);
        let mut tape = Tape::new();
        let out = g.forward(&mut tape, &z, &psi, Mode::Eval).unwrap();
        let q = tape.value(out.quantized);
        assert_eq!(q.shape(), tape.value(out.pre_round).shape());
        assert!(q.data().iter().all(|v| v.fract() == 0.0));
        let gh = tape.value(out.g_hat);
        assert!(gh.data().iter().all(|v| (0.0..=255.0).contains(v)));
    }

    #[test]
    fn v2_at_init_is_the_codec_pipeline_on_its_backbone_image() {
        use crate::codec::color::rgb_pixel_to_ycbcr;
        use crate::codec::quant::tables_for_quality;
        use crate::codec::{fdct_block, Block};

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = GeneratorV2::new(Architecture::for_profile(Profile::Tiny), 50, &mut rng).unwrap();
        let (z, psi) = inputs(2, 9);
        let mut tape = Tape::new();
        let out = g.forward(&mut tape, &z, &psi, Mode::Train).unwrap();
        let gh = tape.value(out.g_hat);
        let pre = tape.value(out.pre_round);
        let tables = tables_for_quality(50).unwrap();
        let px = |n: usize, y: usize, x: usize| {
            let i = ((n * 16 + y) * 16 + x) * 3;
            rgb_pixel_to_ycbcr([gh.data()[i], gh.data()[i + 1], gh.data()[i + 2]])
        };
        let mut worst = 0.0_f64;
        for n in 0..2 {
            for c in 0..3 {
                for by in 0..2 {
                    for bx in 0..2 {
                        let mut block: Block = [0.0; 64];
                        for y in 0..8 {
                            for x in 0..8 {
                                block[y * 8 + x] = px(n, by * 8 + y, bx * 8 + x)[c];
                            }
                        }
                        let coeffs = fdct_block(&block);
                        let table = &tables[if c == 0 { 0 } else { 1 }];
                        for u in 0..8 {
                            for v in 0..8 {
                                let want = coeffs[u * 8 + v] / table.get(u * 8 + v);
                                let i = ((n * 16 + by * 8 + u) * 16 + bx * 8 + v) * 3 + c;
                                worst = worst.max((pre.data()[i] - want).abs());
                            }
                        }
                    }
                }
            }
        }
        assert!(worst < 1e-9, "{worst}");
    }
}
