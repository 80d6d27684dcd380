//! Command-line front end: toy data, DCT preparation, training, generation,
//! decoding and evaluation.
//!
//! Settings come from an optional `key = value` file (`--config`) with
//! flags layered on top. Recognised keys are those of
//! [`TrainConfig::from_kv`] plus `out`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{decompress_image, JpegBitstream};
use crate::coeffs::CoefficientMask;
use crate::dataset::{
    generate_toy_dataset, load_captioned_dataset, prepare_compressed_dataset, save_image,
    toy_word_vectors, DatasetManifest, DctDataset, Domain,
};
use crate::embedding::{embed_caption, load_vectors, WordVectorTable};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_generator, EvalConfig};
use crate::kv::KeyValues;
use crate::models::{noise_batch, sample_generator, Architecture, ModelVariant, Profile};
use crate::training::{
    load_generator, load_training_checkpoint, run_training, OutputDir, TrainConfig, TrainingSet,
};

const VECTORS_FILE: &str = "vectors.txt";
const EVALUATION_FILE: &str = "evaluation";

#[derive(Debug, Parser)]
#[command(name = "t2ci", version, about = "Text-to-compressed-image GANs")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// key = value settings file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// paper | tiny
    #[arg(long, global = true)]
    profile: Option<String>,
    #[arg(long, global = true)]
    quality: Option<u32>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch: Option<usize>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Output directory (output file for `decode`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Writes a procedural captioned dataset and its word vectors.
    ToyDataset {
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
    },
    /// Compresses an RGB dataset into masked, normalized DCT coefficients.
    PrepDct {
        #[arg(long)]
        data: PathBuf,
        /// 64 characters of 0/1, row-major; defaults to the 9 low frequencies.
        #[arg(long)]
        mask: Option<String>,
        /// Keep a seeded uniform sample of this many images.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Trains a generator/discriminator pair.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// v1 | v2
        #[arg(long)]
        model: Option<String>,
        /// Word vectors; defaults to the dataset's own.
        #[arg(long)]
        vectors: Option<PathBuf>,
        /// Training checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Samples images for one caption from a trained model directory.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        caption: String,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        vectors: Option<PathBuf>,
    },
    /// Decodes a bitstream to an RGB file (.t2cr, or .png by extension).
    Decode { input: PathBuf },
    /// Scores a trained model against a labeled dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long, default_value_t = 10)]
        splits: usize,
    },
}

/// Config file merged with flags.
#[derive(Debug, Clone, Default)]
pub struct CliConfig {
    pub values: KeyValues,
}

impl CliConfig {
    fn from_args(g: &GlobalArgs) -> Result<Self> {
        let mut values = match &g.config {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::new(),
        };
        let mut set = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                values.set(key, v);
            }
        };
        set("seed", g.seed.map(|v| v.to_string()));
        set("profile", g.profile.clone());
        set("quality", g.quality.map(|v| v.to_string()));
        set("epochs", g.epochs.map(|v| v.to_string()));
        set("batch", g.batch.map(|v| v.to_string()));
        set("gamma", g.gamma.map(|v| v.to_string()));
        set("out", g.out.as_ref().map(|p| p.display().to_string()));
        Ok(CliConfig { values })
    }

    pub fn seed(&self) -> Result<u64> {
        Ok(self.values.parse_opt("seed")?.unwrap_or(0))
    }

    pub fn profile(&self) -> Result<Profile> {
        Ok(self.values.parse_opt("profile")?.unwrap_or(Profile::Tiny))
    }

    pub fn quality(&self) -> Result<u32> {
        Ok(self.values.parse_opt("quality")?.unwrap_or(50))
    }

    pub fn out(&self) -> Option<PathBuf> {
        self.values.get("out").map(PathBuf::from)
    }

    fn require_out(&self) -> Result<PathBuf> {
        self.out()
            .ok_or_else(|| Error::Config("--out (or `out` in the config file) is required".into()))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        TrainConfig::from_kv(&self.values)
    }
}

/// Parses `argv` (program name first) and runs the subcommand. Returns the
/// process exit code: 0 on success, 2 on usage errors, 1 on failures.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match CliConfig::from_args(&cli.global).and_then(|c| dispatch(&c, cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(config: &CliConfig, command: Command) -> Result<()> {
    match command {
        Command::ToyDataset { n, classes } => toy_dataset(config, n, classes),
        Command::PrepDct { data, mask, limit } => prep_dct(config, &data, mask.as_deref(), limit),
        Command::Train {
            data,
            model,
            vectors,
            resume,
        } => train(config, &data, model.as_deref(), vectors.as_deref(), resume.as_deref()),
        Command::Generate {
            model,
            caption,
            count,
            vectors,
        } => generate(config, &model, &caption, count, vectors.as_deref()),
        Command::Decode { input } => decode(config, &input),
        Command::Evaluate {
            model,
            data,
            vectors,
            samples,
            splits,
        } => evaluate(config, &model, &data, vectors.as_deref(), samples, splits),
    }
}

fn must_exist(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} does not exist", path.display())))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn copy_file(from: &Path, to: &Path) -> Result<()> {
    fs::copy(from, to).map(|_| ()).map_err(|e| Error::io(from, e))
}

/// The explicit file, else the one named by the dataset manifest, else
/// `vectors.txt` in `fallback_dir`.
fn resolve_vectors(explicit: Option<&Path>, data: Option<&Path>, fallback_dir: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        must_exist(p)?;
        return Ok(p.to_path_buf());
    }
    if let Some(root) = data {
        if root.join("manifest").exists() {
            if let Some(v) = DatasetManifest::load(root)?.vectors {
                return Ok(root.join(v));
            }
        }
    }
    if let Some(dir) = fallback_dir {
        let p = dir.join(VECTORS_FILE);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::Config("no word vectors given (use --vectors)".into()))
}

fn toy_dataset(config: &CliConfig, n: usize, classes: usize) -> Result<()> {
    let out = config.require_out()?;
    let seed = config.seed()?;
    let size = Architecture::for_profile(config.profile()?).image_size;
    let dataset = generate_toy_dataset(n, classes, seed, size)?;
    create_dir(&out)?;
    let mut manifest = dataset.save(&out)?;
    toy_word_vectors(seed).save(out.join(VECTORS_FILE))?;
    manifest.vectors = Some(VECTORS_FILE.into());
    manifest.save(&out)?;
    println!("wrote {} images ({classes} classes, {size}x{size}) to {}", n, out.display());
    Ok(())
}

fn prep_dct(config: &CliConfig, data: &Path, mask: Option<&str>, limit: Option<usize>) -> Result<()> {
    must_exist(data)?;
    let out = config.require_out()?;
    let mask = match mask {
        Some(m) => m.parse()?,
        None => CoefficientMask::default(),
    };
    let source = if data.join("manifest").exists() {
        Some(DatasetManifest::load(data)?)
    } else {
        None
    };
    let size = match &source {
        Some(m) => m.image_size,
        None => Architecture::for_profile(config.profile()?).image_size,
    };
    let mut rgb = load_captioned_dataset(data, size)?;
    if let Some(n) = limit {
        rgb = rgb.subset(n, &mut ChaCha8Rng::seed_from_u64(config.seed()?));
    }
    let dct = prepare_compressed_dataset(&rgb, config.quality()?, mask)?;
    create_dir(&out)?;
    let mut manifest = dct.save(&out)?;
    if let Some(v) = source.and_then(|m| m.vectors) {
        copy_file(&data.join(&v), &out.join(&v))?;
        manifest.vectors = Some(v);
        manifest.save(&out)?;
    }
    println!(
        "wrote {} coefficient images (quality {}, range {:.3}..{:.3}) to {}",
        dct.coeffs.len(),
        dct.quality,
        dct.range.min_value(),
        dct.range.max_value(),
        out.display()
    );
    Ok(())
}

fn train(
    config: &CliConfig,
    data: &Path,
    model: Option<&str>,
    vectors: Option<&Path>,
    resume: Option<&Path>,
) -> Result<()> {
    must_exist(data)?;
    if let Some(r) = resume {
        must_exist(r)?;
    }
    let out = config.require_out()?;
    let mut values = config.values.clone();
    if let Some(m) = model {
        values.set("model", m);
    }
    let train_config = TrainConfig::from_kv(&values)?;
    let vectors_path = resolve_vectors(vectors, Some(data), None)?;
    let table = load_vectors(&vectors_path)?;
    let set = match train_config.variant {
        ModelVariant::V1 => TrainingSet::from_dct(&DctDataset::load(data)?, &table)?,
        ModelVariant::V2 => {
            let size = Architecture::for_profile(train_config.profile).image_size;
            TrainingSet::from_rgb(&load_captioned_dataset(data, size)?, &table)?
        }
    };
    let resume = resume
        .map(|p| load_training_checkpoint(&set, &train_config, p))
        .transpose()?;
    create_dir(&out)?;
    train_config.to_kv().save_atomic(out.join("train.config"))?;
    copy_file(&vectors_path, &out.join(VECTORS_FILE))?;
    let run = run_training(&set, &train_config, Some(&OutputDir(out.clone())), resume)?;
    if let Some(last) = run.log.last() {
        println!(
            "trained {} epochs: d_loss {:.4} g_loss {:.4}; model in {}",
            run.log.len(),
            last.d_loss,
            last.g_loss,
            out.display()
        );
    }
    Ok(())
}

fn generate(
    config: &CliConfig,
    model: &Path,
    caption: &str,
    count: usize,
    vectors: Option<&Path>,
) -> Result<()> {
    must_exist(model)?;
    if count == 0 {
        return Err(Error::Config("--count must be positive".into()));
    }
    let out = config.out().unwrap_or_else(|| model.join("samples"));
    let table: WordVectorTable = load_vectors(resolve_vectors(vectors, None, Some(model))?)?;
    let (generator, manifest) = load_generator(model)?;
    let psi = embed_caption(caption, &table)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed()?);
    let noise = noise_batch(count, &mut rng);
    let samples = sample_generator(&generator, &manifest, &vec![&psi; count], &noise)?;
    create_dir(&out)?;
    for (k, s) in samples.iter().enumerate() {
        let stem = out.join(format!("sample_{k:03}"));
        s.bitstream.save(stem.with_extension("t2cj"))?;
        s.coefficients.save(stem.with_extension("t2cd"))?;
        save_image(&s.rgb, stem.with_extension("t2cr"))?;
    }
    println!("wrote {count} samples for {caption:?} to {}", out.display());
    Ok(())
}

fn decode(config: &CliConfig, input: &Path) -> Result<()> {
    must_exist(input)?;
    let out = config.out().unwrap_or_else(|| input.with_extension("t2cr"));
    let img = decompress_image(&JpegBitstream::load(input)?)?;
    save_image(&img, &out)?;
    println!("decoded {}x{} image to {}", img.width(), img.height(), out.display());
    Ok(())
}

fn evaluate(
    config: &CliConfig,
    model: &Path,
    data: &Path,
    vectors: Option<&Path>,
    samples: usize,
    splits: usize,
) -> Result<()> {
    must_exist(model)?;
    must_exist(data)?;
    let out = config.out().unwrap_or_else(|| model.to_path_buf());
    let table = load_vectors(resolve_vectors(vectors, Some(data), Some(model))?)?;
    let (generator, manifest) = load_generator(model)?;
    let data_manifest = DatasetManifest::load(data)?;
    let dct = match data_manifest.domain {
        Domain::Dct => Some(DctDataset::load(data)?),
        Domain::Rgb => None,
    };
    let rgb = match &dct {
        Some(d) => d.rgb.clone(),
        None => load_captioned_dataset(data, data_manifest.image_size)?,
    };
    let eval = EvalConfig {
        samples,
        splits,
        seed: config.seed()?,
        ..EvalConfig::default()
    };
    let report = evaluate_generator(&generator, &manifest, &rgb, dct.as_ref(), &table, &eval)?;
    let kv = report.to_kv();
    create_dir(&out)?;
    kv.save_atomic(out.join(EVALUATION_FILE))?;
    print!("{kv}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn global(config: Option<PathBuf>, seed: Option<u64>) -> GlobalArgs {
        GlobalArgs {
            config,
            seed,
            profile: None,
            quality: None,
            epochs: Some(3),
            batch: None,
            gamma: None,
            out: None,
        }
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        fs::write(&path, "# settings\nseed = 5\nepochs = 40\nbatch = 8\n").unwrap();
        let c = CliConfig::from_args(&global(Some(path), Some(9))).unwrap();
        assert_eq!(c.seed().unwrap(), 9);
        let t = c.train_config().unwrap();
        assert_eq!((t.epochs, t.batch_size, t.seed), (3, 8, 9));
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(run_cli(["t2ci", "no-such-command"]), 2);
        assert_eq!(run_cli(["t2ci"]), 2);
        assert_eq!(run_cli(["t2ci", "toy-dataset", "--n", "many"]), 2);
    }

    #[test]
    fn failures_exit_with_one() {
        assert_eq!(run_cli(["t2ci", "decode", "/no/such/file.t2cj"]), 1);
        assert_eq!(run_cli(["t2ci", "toy-dataset"]), 1);
    }
}
