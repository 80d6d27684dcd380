//! Scoring a trained generator against a labeled captioned dataset.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::RgbImage;
use crate::coeffs::{apply_coefficient_mask, normalize_dct};
use crate::dataset::{DctDataset, RgbDataset};
use crate::embedding::{embed_caption, WordVectorTable};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::metrics::{
    classifier_input, conditional_color_stats, inception_score, train_proxy_classifier,
    ColourGroupStats, ProxyConfig,
};
use crate::models::{noise_batch, sample_generator, GeneratedSample, Generator, ModelManifest};
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub samples: usize,
    pub splits: usize,
    pub seed: u64,
    pub proxy: ProxyConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples: 64,
            splits: 10,
            seed: 0,
            proxy: ProxyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub samples: usize,
    pub classifier_accuracy: f64,
    /// Proxy-classifier score of the decoded samples, (mean, std).
    pub inception: (f64, f64),
    /// Same classifier on one constant gray image repeated.
    pub baseline: (f64, f64),
    /// Score in the coefficient domain, for v1 models scored with their
    /// DCT dataset.
    pub dct_inception: Option<(f64, f64)>,
    pub colours: Vec<ColourGroupStats>,
}

impl EvaluationReport {
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.push("samples", self.samples);
        kv.push("classifier_accuracy", self.classifier_accuracy);
        kv.push("inception_mean", self.inception.0);
        kv.push("inception_std", self.inception.1);
        kv.push("baseline_mean", self.baseline.0);
        kv.push("baseline_std", self.baseline.1);
        if let Some((m, s)) = self.dct_inception {
            kv.push("dct_inception_mean", m);
            kv.push("dct_inception_std", s);
        }
        for g in &self.colours {
            let [r, gr, b] = g.mean_rgb;
            kv.push(format!("{}_count", g.colour), g.count);
            kv.push(format!("{}_mean_rgb", g.colour), format!("{r:.3} {gr:.3} {b:.3}"));
            if let Some(f) = g.dominant_fraction {
                kv.push(format!("{}_dominant_fraction", g.colour), f);
            }
        }
        kv
    }
}

/// Captions used for sample `k`: dataset items in order, cycling through
/// each item's captions on later passes.
pub fn evaluation_captions(dataset: &RgbDataset, samples: usize) -> Vec<String> {
    let n = dataset.items.len();
    (0..samples)
        .map(|k| {
            let caps = &dataset.items[k % n].captions;
            caps[(k / n) % caps.len()].clone()
        })
        .collect()
}

/// Generates `config.samples` images from dataset captions and scores them.
pub fn generate_for_evaluation(
    generator: &Generator,
    manifest: &ModelManifest,
    dataset: &RgbDataset,
    table: &WordVectorTable,
    config: &EvalConfig,
) -> Result<(Vec<String>, Vec<GeneratedSample>)> {
    let captions = evaluation_captions(dataset, config.samples);
    let psi = captions
        .iter()
        .map(|c| embed_caption(c, table))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = noise_batch(captions.len(), &mut rng);
    let refs: Vec<_> = psi.iter().collect();
    let samples = sample_generator(generator, manifest, &refs, &noise)?;
    Ok((captions, samples))
}

/// Trains the RGB proxy classifier on `dataset` (and a DCT one on `dct`
/// when given), then scores generated samples, a constant-image baseline
/// and per-colour statistics.
pub fn evaluate_generator(
    generator: &Generator,
    manifest: &ModelManifest,
    dataset: &RgbDataset,
    dct: Option<&DctDataset>,
    table: &WordVectorTable,
    config: &EvalConfig,
) -> Result<EvaluationReport> {
    if config.samples == 0 {
        return Err(Error::Config("evaluation needs at least one sample".into()));
    }
    let labels = dataset
        .labels()
        .ok_or_else(|| Error::Config("evaluation needs a labeled dataset".into()))?;
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(dataset.class_names.len());
    let real: Vec<RgbImage> = dataset.items.iter().map(|i| i.image.clone()).collect();
    let clf = train_proxy_classifier(&classifier_input(&real)?, &labels, classes, &config.proxy)?;

    let (captions, samples) = generate_for_evaluation(generator, manifest, dataset, table, config)?;
    let splits = config.splits.min(samples.len());
    let rgbs: Vec<RgbImage> = samples.iter().map(|s| s.rgb.clone()).collect();
    let inception = inception_score(&clf.predict(&classifier_input(&rgbs)?)?, splits)?;
    let size = dataset.image_size;
    let constant = vec![RgbImage::filled(size, size, [128; 3]); samples.len()];
    let baseline = inception_score(&clf.predict(&classifier_input(&constant)?)?, splits)?;

    let dct_inception = match dct {
        Some(d) => {
            let real = Tensor::stack(&(0..d.coeffs.len()).map(|i| d.normalized(i)).collect::<Vec<_>>())?;
            let dct_clf = train_proxy_classifier(&real, &labels, classes, &config.proxy)?;
            let generated = samples
                .iter()
                .map(|s| normalize_dct(&apply_coefficient_mask(&s.coefficients.dequantized(), &d.mask), &d.range))
                .collect::<Vec<_>>();
            Some(inception_score(&dct_clf.predict(&Tensor::stack(&generated)?)?, splits)?)
        }
        None => None,
    };

    Ok(EvaluationReport {
        samples: samples.len(),
        classifier_accuracy: clf.accuracy(),
        inception,
        baseline,
        dct_inception,
        colours: conditional_color_stats(&rgbs, &captions)?,
    })
}
