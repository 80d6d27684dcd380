//! GAN losses and the training loop: each batch updates the discriminator
//! on (real, matching caption), (generated, matching caption) and (real,
//! wrong caption) pairs, then updates the generator through the frozen
//! discriminator.

mod config;
mod losses;

pub use config::{DiscriminatorInput, TrainConfig};
pub use losses::{
    bce_loss, consistency_term, discriminator_loss_gan_int, discriminator_loss_on_tape,
    generator_loss_on_tape, generator_loss_v1, generator_loss_v2, PROB_EPS,
};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coeffs::{CoefficientMask, NormalizationRange};
use crate::dataset::{image_to_tensor, sample_mismatched, DctDataset, Domain, RgbDataset};
use crate::embedding::{embed_caption, TextEmbedding, WordVectorTable};
use crate::error::{Error, Result};
use crate::models::{
    embedding_batch, noise_batch, Architecture, DecoderH, Discriminator, Generator, GeneratorV1,
    GeneratorV2, ModelManifest, ModelVariant, LOC_LAYER_NAMES,
};
use crate::nn::{checkpoint, AdamState, Mode, ParamStore, Tape, Tensor, Var};

/// Images and caption embeddings ready for batching.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    /// `[S, S, 3]`: normalized DCT for a dct domain, 0..255 RGB otherwise.
    pub images: Vec<Tensor>,
    /// Every caption embedding of every image.
    pub embeddings: Vec<Vec<TextEmbedding>>,
    pub domain: Domain,
    pub image_size: usize,
    pub range: Option<NormalizationRange>,
    pub mask: Option<CoefficientMask>,
}

fn embed_all(rgb: &RgbDataset, table: &WordVectorTable) -> Result<Vec<Vec<TextEmbedding>>> {
    rgb.items
        .iter()
        .map(|item| {
            item.captions
                .iter()
                .map(|c| embed_caption(c, table))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::item(&item.id, e))
        })
        .collect()
}

impl TrainingSet {
    pub fn from_rgb(rgb: &RgbDataset, table: &WordVectorTable) -> Result<Self> {
        Ok(TrainingSet {
            images: rgb.items.iter().map(|i| image_to_tensor(&i.image)).collect(),
            embeddings: embed_all(rgb, table)?,
            domain: Domain::Rgb,
            image_size: rgb.image_size,
            range: None,
            mask: None,
        })
    }

    pub fn from_dct(dct: &DctDataset, table: &WordVectorTable) -> Result<Self> {
        Ok(TrainingSet {
            images: (0..dct.coeffs.len()).map(|i| dct.normalized(i)).collect(),
            embeddings: embed_all(&dct.rgb, table)?,
            domain: Domain::Dct,
            image_size: dct.rgb.image_size,
            range: Some(dct.range),
            mask: Some(dct.mask),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Draws one caption per image, a wrong caption from another image and
    /// a noise vector per item.
    pub fn batch<R: Rng + ?Sized>(&self, indices: &[usize], rng: &mut R) -> Result<Batch> {
        let counts: Vec<usize> = self.embeddings.iter().map(Vec::len).collect();
        let mut matching = Vec::with_capacity(indices.len());
        let mut mismatched = Vec::with_capacity(indices.len());
        let mut images = Vec::with_capacity(indices.len());
        for &i in indices {
            images.push(self.images[i].clone());
            matching.push(&self.embeddings[i][rng.random_range(0..counts[i])]);
            let (j, c) = sample_mismatched(&counts, i, rng)?;
            mismatched.push(&self.embeddings[j][c]);
        }
        Ok(Batch {
            real_images: Tensor::stack(&images)?,
            matching: embedding_batch(&matching)?,
            mismatched: embedding_batch(&mismatched)?,
            noise: noise_batch(indices.len(), rng),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub real_images: Tensor,
    pub matching: Tensor,
    pub mismatched: Tensor,
    pub noise: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub d_loss: f64,
    pub g_loss: f64,
}

/// Generator, discriminator and both optimizers.
#[derive(Debug, Clone)]
pub struct GanModel {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub g_opt: AdamState,
    pub d_opt: AdamState,
    decoder: DecoderH,
    range: Option<NormalizationRange>,
    d_input: DiscriminatorInput,
    gamma: f64,
}

impl GanModel {
    /// `range` is required for v1 (it maps generator outputs back to
    /// coefficients when decoding).
    pub fn new(
        config: &TrainConfig,
        range: Option<NormalizationRange>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let arch = Architecture::for_profile(config.profile);
        let generator = match config.variant {
            ModelVariant::V1 => {
                if range.is_none() {
                    return Err(Error::Config("v1 needs a normalization range".into()));
                }
                Generator::V1(GeneratorV1::new(arch, rng)?)
            }
            ModelVariant::V2 => Generator::V2(GeneratorV2::new(arch, config.quality, rng)?),
        };
        let discriminator = Discriminator::new(arch, rng)?;
        let mut g_opt = AdamState::new(generator.store(), config.learning_rate, config.beta1);
        for name in LOC_LAYER_NAMES {
            g_opt.scale_rate(generator.store(), &format!("{name}/"), config.loc_rate_scale);
        }
        let d_opt = AdamState::new(discriminator.store(), config.learning_rate, config.beta1);
        Ok(GanModel {
            generator,
            discriminator,
            g_opt,
            d_opt,
            decoder: DecoderH::new(arch.image_size, arch.image_size, config.quality)?,
            range,
            d_input: config.discriminator_input,
            gamma: config.gamma,
        })
    }

    pub fn decoder(&self) -> &DecoderH {
        &self.decoder
    }

    pub fn range(&self) -> Option<NormalizationRange> {
        self.range
    }

    fn v1_to_rgb(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (scale, shift) = {
            let r = self.range.expect("v1 models carry a range");
            let half = (r.max_value() - r.min_value()) / 2.0;
            (half, r.min_value() + half)
        };
        let coeffs = tape.affine(x, scale, shift)?;
        self.decoder.decode_dequantized(tape, coeffs)
    }

    /// Maps a real batch to discriminator input.
    fn real_input(&self, tape: &mut Tape, real: &Tensor) -> Result<Var> {
        let x = tape.constant(real.clone());
        match (&self.generator, self.d_input) {
            (Generator::V1(_), DiscriminatorInput::Dct) => Ok(x),
            (Generator::V1(_), DiscriminatorInput::DecodedRgb) => {
                let rgb = self.v1_to_rgb(tape, x)?;
                tape.affine(rgb, 1.0 / 127.5, -1.0)
            }
            (Generator::V2(_), _) => tape.affine(x, 1.0 / 127.5, -1.0),
        }
    }

    /// Scores (real, matching), (fake, matching) and (real, mismatched)
    /// pairs in one discriminator pass so batch statistics are shared.
    fn score_pairs(
        &self,
        tape: &mut Tape,
        real: Var,
        fake: Var,
        batch: &Batch,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Var, Var, Var)> {
        let n = batch.real_images.shape()[0];
        let images = tape.concat_outer(&[real, fake, real])?;
        let psi = Tensor::concat_outer(&[batch.matching.clone(), batch.matching.clone(), batch.mismatched.clone()])?;
        let p = self.discriminator.forward(tape, images, &psi, Mode::Train, rng)?;
        Ok((tape.slice_outer(p, 0, n)?, tape.slice_outer(p, n, n)?, tape.slice_outer(p, 2 * n, n)?))
    }

    /// Generator forward pass: `(discriminator input, optional (decoded,
    /// g_hat) pair for the consistency term)`.
    fn generate(
        &self,
        tape: &mut Tape,
        noise: &Tensor,
        psi: &Tensor,
        mode: Mode,
    ) -> Result<(Var, Option<(Var, Var)>)> {
        match &self.generator {
            Generator::V1(g) => {
                let out = g.forward(tape, noise, psi, mode)?;
                match self.d_input {
                    DiscriminatorInput::Dct => Ok((out, None)),
                    DiscriminatorInput::DecodedRgb => {
                        let rgb = self.v1_to_rgb(tape, out)?;
                        Ok((tape.affine(rgb, 1.0 / 127.5, -1.0)?, None))
                    }
                }
            }
            Generator::V2(g) => {
                let out = g.forward(tape, noise, psi, mode)?;
                let decoded = self.decoder.forward(tape, out.quantized)?;
                let d_in = tape.affine(decoded, 1.0 / 127.5, -1.0)?;
                Ok((d_in, Some((decoded, out.g_hat))))
            }
        }
    }
}

impl GanModel {
    /// Generator objective for `batch` on `tape`, with gradients reaching
    /// the generator parameters (the discriminator is scored in train mode).
    pub fn generator_loss(&self, tape: &mut Tape, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<Var> {
        let (fake, consistency) = self.generate(tape, &batch.noise, &batch.matching, Mode::Train)?;
        self.generator_loss_from(tape, fake, consistency, batch, rng)
    }

    fn generator_loss_from(
        &self,
        tape: &mut Tape,
        fake: Var,
        consistency: Option<(Var, Var)>,
        batch: &Batch,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let real = self.real_input(tape, &batch.real_images)?;
        let (_, p, _) = self.score_pairs(tape, real, fake, batch, rng)?;
        let extra = consistency.map(|(dec, g_hat)| (dec, g_hat, self.gamma));
        generator_loss_on_tape(tape, p, extra)
    }
}

fn update(store: &mut ParamStore, opt: &mut AdamState, tape: &Tape, loss: Var) -> Result<()> {
    let grads = tape.backward(loss)?;
    store.zero_grad();
    store.accumulate_grads(tape, &grads);
    opt.step(store)?;
    store.commit_running_stats(tape);
    Ok(())
}

/// One discriminator update followed by one generator update.
pub fn train_step(model: &mut GanModel, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<StepMetrics> {
    let n = batch.real_images.shape()[0];
    if n < 2 {
        return Err(Error::Training("batches need at least two items".into()));
    }
    let mut g_tape = Tape::new();
    let (fake, consistency) = model.generate(&mut g_tape, &batch.noise, &batch.matching, Mode::Train)?;

    let mut d_tape = Tape::new();
    let real = model.real_input(&mut d_tape, &batch.real_images)?;
    let fake_const = d_tape.constant(g_tape.value(fake).clone());
    let (p_real, p_fake, p_wrong) = model.score_pairs(&mut d_tape, real, fake_const, batch, rng)?;
    let d_loss = discriminator_loss_on_tape(&mut d_tape, p_real, p_fake, p_wrong)?;
    let d_value = d_tape.value(d_loss).item()?;
    update(model.discriminator.store_mut(), &mut model.d_opt, &d_tape, d_loss)?;

    model.discriminator.store_mut().set_requires_grad(false);
    let result = (|| -> Result<f64> {
        let g_loss = model.generator_loss_from(&mut g_tape, fake, consistency, batch, rng)?;
        let g_value = g_tape.value(g_loss).item()?;
        update(model.generator.store_mut(), &mut model.g_opt, &g_tape, g_loss)?;
        Ok(g_value)
    })();
    model.discriminator.store_mut().set_requires_grad(true);
    let g_value = result?;
    if !d_value.is_finite() || !g_value.is_finite() {
        return Err(Error::Numeric(format!("non-finite losses d={d_value} g={g_value}")));
    }
    Ok(StepMetrics {
        d_loss: d_value,
        g_loss: g_value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub wall_time: f64,
}

/// CSV with a header line and one row per epoch.
pub fn metrics_csv(log: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,d_loss,g_loss,wall_time\n");
    for m in log {
        writeln!(s, "{},{},{},{:.3}", m.epoch, m.d_loss, m.g_loss, m.wall_time).unwrap();
    }
    s
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub model: GanModel,
    pub log: Vec<EpochMetrics>,
}

fn check_domain(data: &TrainingSet, config: &TrainConfig) -> Result<()> {
    let want = match config.variant {
        ModelVariant::V1 => Domain::Dct,
        ModelVariant::V2 => Domain::Rgb,
    };
    if data.domain != want {
        return Err(Error::Config(format!(
            "{} training needs a {want} dataset, got {}",
            config.variant, data.domain
        )));
    }
    let size = Architecture::for_profile(config.profile).image_size;
    if data.image_size != size {
        return Err(Error::Config(format!(
            "{} profile expects {size}x{size} images, dataset has {}",
            config.profile, data.image_size
        )));
    }
    if data.len() < 2 {
        return Err(Error::Config("training needs at least two images".into()));
    }
    Ok(())
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

fn run_epoch(model: &mut GanModel, data: &TrainingSet, config: &TrainConfig, epoch: usize) -> Result<EpochMetrics> {
    let start = Instant::now();
    let mut rng = epoch_rng(config.seed, epoch);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let (mut d_sum, mut g_sum, mut steps) = (0.0, 0.0, 0usize);
    for chunk in order.chunks(config.batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let batch = data.batch(chunk, &mut rng)?;
        let m = train_step(model, &batch, &mut rng)?;
        d_sum += m.d_loss;
        g_sum += m.g_loss;
        steps += 1;
    }
    Ok(EpochMetrics {
        epoch,
        d_loss: d_sum / steps as f64,
        g_loss: g_sum / steps as f64,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn prefixed(prefix: &str, tensors: Vec<(String, Tensor)>) -> impl Iterator<Item = (String, Tensor)> + '_ {
    tensors.into_iter().map(move |(n, t)| (format!("{prefix}{n}"), t))
}

fn take_prefixed(tensors: &[(String, Tensor)], prefix: &str) -> Vec<(String, Tensor)> {
    tensors
        .iter()
        .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
        .collect()
}

/// Serializes the full training state after `epochs_done` epochs.
pub fn save_training_checkpoint(run: &TrainingRun, path: impl AsRef<Path>) -> Result<()> {
    let m = &run.model;
    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    tensors.extend(prefixed("generator/", m.generator.store().named_tensors()));
    tensors.extend(prefixed("discriminator/", m.discriminator.store().named_tensors()));
    tensors.extend(prefixed("g_adam/", m.g_opt.named_tensors(m.generator.store())));
    tensors.extend(prefixed("d_adam/", m.d_opt.named_tensors(m.discriminator.store())));
    let rows: Vec<f64> = run
        .log
        .iter()
        .flat_map(|e| [e.epoch as f64, e.d_loss, e.g_loss, e.wall_time])
        .collect();
    tensors.push(("epochs_done".into(), Tensor::scalar(run.log.len() as f64)));
    if !rows.is_empty() {
        tensors.push(("log".into(), Tensor::new([run.log.len(), 4], rows)?));
    }
    checkpoint::save_checkpoint(path, &tensors)
}

/// Rebuilds a run from [`save_training_checkpoint`] output. `config` must
/// match the one the checkpoint was trained with.
pub fn load_training_checkpoint(
    data: &TrainingSet,
    config: &TrainConfig,
    path: impl AsRef<Path>,
) -> Result<TrainingRun> {
    let tensors = checkpoint::load_checkpoint(path)?;
    let mut init = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = GanModel::new(config, data.range, &mut init)?;
    model.generator.store_mut().load_named(take_prefixed(&tensors, "generator/"))?;
    model.discriminator.store_mut().load_named(take_prefixed(&tensors, "discriminator/"))?;
    model.g_opt.load_named(model.generator.store(), &take_prefixed(&tensors, "g_adam/"))?;
    model.d_opt.load_named(model.discriminator.store(), &take_prefixed(&tensors, "d_adam/"))?;
    let mut log = Vec::new();
    if let Some((_, t)) = tensors.iter().find(|(n, _)| n == "log") {
        for r in t.data().chunks_exact(4) {
            log.push(EpochMetrics {
                epoch: r[0] as usize,
                d_loss: r[1],
                g_loss: r[2],
                wall_time: r[3],
            });
        }
    }
    Ok(TrainingRun { model, log })
}

/// Where [`run_training`] writes its artifacts.
#[derive(Debug, Clone)]
pub struct OutputDir(pub PathBuf);

impl OutputDir {
    pub fn metrics(&self) -> PathBuf {
        self.0.join("metrics.csv")
    }

    pub fn checkpoint(&self, epochs_done: usize) -> PathBuf {
        self.0.join("checkpoints").join(format!("epoch_{epochs_done:04}.t2cp"))
    }

    pub fn generator(&self) -> PathBuf {
        self.0.join("generator.t2cp")
    }

    pub fn discriminator(&self) -> PathBuf {
        self.0.join("discriminator.t2cp")
    }

    pub fn manifest(&self) -> PathBuf {
        self.0.join("model.manifest")
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Trains from scratch (or continues `resume`) until `config.epochs`
/// epochs are done. With `out`, metrics are rewritten after every epoch,
/// checkpoints are saved every `config.checkpoint_every` epochs and the
/// final generator, discriminator and model manifest are written.
pub fn run_training(
    data: &TrainingSet,
    config: &TrainConfig,
    out: Option<&OutputDir>,
    resume: Option<TrainingRun>,
) -> Result<TrainingRun> {
    config.validate()?;
    check_domain(data, config)?;
    let mut run = match resume {
        Some(r) => r,
        None => {
            let mut init = ChaCha8Rng::seed_from_u64(config.seed);
            TrainingRun {
                model: GanModel::new(config, data.range, &mut init)?,
                log: Vec::new(),
            }
        }
    };
    for epoch in run.log.len()..config.epochs {
        let m = run_epoch(&mut run.model, data, config, epoch)?;
        log::info!("epoch {epoch}: d_loss {:.4} g_loss {:.4} ({:.2}s)", m.d_loss, m.g_loss, m.wall_time);
        run.log.push(m);
        if let Some(out) = out {
            write_file(&out.metrics(), &metrics_csv(&run.log))?;
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                let path = out.checkpoint(epoch + 1);
                ensure_parent(&path)?;
                save_training_checkpoint(&run, path)?;
            }
        }
    }
    if let Some(out) = out {
        fs::create_dir_all(&out.0).map_err(|e| Error::io(&out.0, e))?;
        checkpoint::save_checkpoint(out.generator(), &run.model.generator.store().named_tensors())?;
        checkpoint::save_checkpoint(out.discriminator(), &run.model.discriminator.store().named_tensors())?;
        model_manifest(&run, data, config).save(out.manifest())?;
    }
    Ok(run)
}

pub fn model_manifest(run: &TrainingRun, data: &TrainingSet, config: &TrainConfig) -> ModelManifest {
    ModelManifest {
        variant: config.variant,
        profile: config.profile,
        quality: config.quality as u8,
        seed: config.seed,
        epochs_trained: run.log.len(),
        range: data.range,
        mask: data.mask,
    }
}

/// Loads a generator saved by [`run_training`].
pub fn load_generator(dir: impl AsRef<Path>) -> Result<(Generator, ModelManifest)> {
    let out = OutputDir(dir.as_ref().to_path_buf());
    let manifest = ModelManifest::load(out.manifest())?;
    let arch = manifest.arch();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = match manifest.variant {
        ModelVariant::V1 => Generator::V1(GeneratorV1::new(arch, &mut rng)?),
        ModelVariant::V2 => Generator::V2(GeneratorV2::new(arch, manifest.quality as u32, &mut rng)?),
    };
    g.store_mut().load_named(checkpoint::load_checkpoint(out.generator())?)?;
    Ok((g, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_toy_dataset, toy_word_vectors};
    use crate::models::Profile;

    fn toy_set(n: usize) -> TrainingSet {
        let d = generate_toy_dataset(n, 2, 3, 16).unwrap();
        TrainingSet::from_rgb(&d, &toy_word_vectors(3)).unwrap()
    }

    #[test]
    fn batch_shapes() {
        let data = toy_set(6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = data.batch(&[0, 3, 5], &mut rng).unwrap();
        assert_eq!(b.real_images.shape(), &[3, 16, 16, 3]);
        assert_eq!(b.matching.shape(), &[3, 300]);
        assert_eq!(b.mismatched.shape(), &[3, 300]);
        assert_eq!(b.noise.shape(), &[3, 100]);
    }

    #[test]
    fn step_is_reproducible_and_moves_generator() {
        let data = toy_set(4);
        let config = TrainConfig::tiny(ModelVariant::V2);
        let run = || {
            let mut init = ChaCha8Rng::seed_from_u64(1);
            let mut model = GanModel::new(&config, None, &mut init).unwrap();
            let before = model.generator.store().checksum();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let batch = data.batch(&[0, 1, 2, 3], &mut rng).unwrap();
            let m = train_step(&mut model, &batch, &mut rng).unwrap();
            (m, before, model.generator.store().checksum())
        };
        let (m1, before, after) = run();
        let (m2, _, _) = run();
        assert_eq!(m1, m2);
        assert_ne!(before, after);
        assert!((m1.d_loss - 3.0 * std::f64::consts::LN_2).abs() < 0.5, "{m1:?}");
    }

    #[test]
    fn loc_layers_get_the_configured_rate_scale() {
        let config = TrainConfig::tiny(ModelVariant::V2);
        let model = GanModel::new(&config, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let store = model.generator.store();
        for (name, &scale) in store.names().zip(&model.g_opt.rate_scale) {
            let want = if name.starts_with("loc") { config.loc_rate_scale } else { 1.0 };
            assert_eq!(scale, want, "{name}");
        }
        assert!(model.d_opt.rate_scale.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn variant_domain_mismatch_is_a_config_error() {
        let data = toy_set(4);
        let config = TrainConfig::tiny(ModelVariant::V1);
        assert!(matches!(run_training(&data, &config, None, None), Err(Error::Config(_))));
    }

    #[test]
    fn profile_size_mismatch_is_a_config_error() {
        let data = toy_set(4);
        let mut config = TrainConfig::tiny(ModelVariant::V2);
        config.profile = Profile::Paper;
        assert!(matches!(run_training(&data, &config, None, None), Err(Error::Config(_))));
    }
}
