//! Sample-quality measures: inception score over any classifier's
//! posteriors, a small trainable proxy classifier to produce them, and
//! per-colour statistics for captions from the toy grammar.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::RgbImage;
use crate::dataset::TOY_COLOURS;
use crate::embedding::tokenize;
use crate::error::{Error, Result};
use crate::nn::tape::softmax_rows;
use crate::nn::{AdamState, Padding, ParamStore, Tape, Tensor, LEAKY_SLOPE};

/// Row-major `[n, classes]` posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities {
    classes: usize,
    rows: Vec<f64>,
}

impl ClassProbabilities {
    /// Every row must be nonnegative and sum to 1 within 1e-9.
    pub fn new(classes: usize, rows: Vec<f64>) -> Result<Self> {
        if classes == 0 || !rows.len().is_multiple_of(classes) {
            return Err(Error::dim(format!(
                "{} values do not form rows of {classes}",
                rows.len()
            )));
        }
        for (i, r) in rows.chunks_exact(classes).enumerate() {
            let sum: f64 = r.iter().sum();
            if r.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::param(format!("row {i} is not a probability vector")));
            }
        }
        Ok(ClassProbabilities { classes, rows })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.classes..(i + 1) * self.classes]
    }

    /// Most probable class of each row.
    pub fn argmax(&self) -> Vec<usize> {
        self.rows
            .chunks_exact(self.classes)
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
                    .0
            })
            .collect()
    }
}

fn split_score(rows: &[f64], classes: usize) -> f64 {
    let n = rows.len() / classes;
    // First row plus the mean deviation from it: exact when all rows agree.
    let first = &rows[..classes];
    let mut marginal = first.to_vec();
    for r in rows.chunks_exact(classes) {
        for ((m, p), f) in marginal.iter_mut().zip(r).zip(first) {
            *m += (p - f) / n as f64;
        }
    }
    let mean_kl = rows
        .chunks_exact(classes)
        .map(|r| {
            r.iter()
                .zip(&marginal)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, m)| p * (p.ln() - m.ln()))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n as f64;
    mean_kl.exp()
}

/// `exp(E_x KL(p(y|x) || p(y)))` per split, as (mean, population std) over
/// `splits` contiguous equal parts.
pub fn inception_score(probs: &ClassProbabilities, splits: usize) -> Result<(f64, f64)> {
    let n = probs.len();
    if splits == 0 || n < splits {
        return Err(Error::param(format!("{n} images cannot form {splits} splits")));
    }
    let c = probs.classes;
    let scores: Vec<f64> = (0..splits)
        .map(|k| split_score(&probs.rows[k * n / splits * c..(k + 1) * n / splits * c], c))
        .collect();
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Training fails unless this training accuracy is reached.
    pub min_accuracy: f64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            epochs: 50,
            batch_size: 16,
            learning_rate: 0.005,
            seed: 0,
            min_accuracy: 0.95,
        }
    }
}

/// Two stride-2 convolutions and a dense softmax head. Inputs are expected
/// roughly in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct ProxyClassifier {
    store: ParamStore,
    input_shape: [usize; 3],
    classes: usize,
    accuracy: f64,
}

impl ProxyClassifier {
    fn new(input_shape: [usize; 3], classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let [h, w, c] = input_shape;
        let mut store = ParamStore::new();
        store.add("conv0/kernel", Tensor::randn([3, 3, c, 8], 0.0, 0.3, rng));
        store.add("conv0/bias", Tensor::zeros([8]));
        store.add("conv1/kernel", Tensor::randn([3, 3, 8, 16], 0.0, 0.1, rng));
        store.add("conv1/bias", Tensor::zeros([16]));
        let flat = h.div_ceil(4) * w.div_ceil(4) * 16;
        store.add("head/w", Tensor::randn([flat, classes], 0.0, 0.05, rng));
        store.add("head/b", Tensor::zeros([classes]));
        ProxyClassifier {
            store,
            input_shape,
            classes,
            accuracy: 0.0,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Training-set accuracy reached by [`train_proxy_classifier`].
    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }

    fn logits(&self, tape: &mut Tape, images: &Tensor) -> Result<crate::nn::Var> {
        let s = images.shape();
        if s.len() != 4 || s[1..] != self.input_shape {
            return Err(Error::dim(format!(
                "classifier expects [n, {:?}], got {s:?}",
                self.input_shape
            )));
        }
        let n = s[0];
        let mut h = tape.constant(images.clone());
        for i in 0..2 {
            let k = tape.param(&self.store, &format!("conv{i}/kernel"))?;
            h = tape.conv2d(h, k, 2, Padding::Same)?;
            let b = tape.param(&self.store, &format!("conv{i}/bias"))?;
            h = tape.add_bias(h, b)?;
            h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        }
        let flat = tape.value(h).numel() / n;
        let h = tape.reshape(h, &[n, flat])?;
        let w = tape.param(&self.store, "head/w")?;
        let b = tape.param(&self.store, "head/b")?;
        tape.dense(h, w, b)
    }

    pub fn predict(&self, images: &Tensor) -> Result<ClassProbabilities> {
        let mut rows = Vec::new();
        let n = images.shape().first().copied().unwrap_or(0);
        for start in (0..n).step_by(64) {
            let part = images.slice_outer(start, 64.min(n - start))?;
            let mut tape = Tape::new();
            let logits = self.logits(&mut tape, &part)?;
            rows.extend(softmax_rows(tape.value(logits).data(), self.classes));
        }
        ClassProbabilities::new(self.classes, rows)
    }
}

fn accuracy(clf: &ProxyClassifier, images: &Tensor, labels: &[usize]) -> Result<f64> {
    let pred = clf.predict(images)?.argmax();
    Ok(pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
}

/// Fits a [`ProxyClassifier`] to `images: [n, h, w, c]` with integer
/// `labels` for `config.epochs` epochs; fails unless the final training
/// accuracy reaches `min_accuracy`.
pub fn train_proxy_classifier(
    images: &Tensor,
    labels: &[usize],
    classes: usize,
    config: &ProxyConfig,
) -> Result<ProxyClassifier> {
    let s = images.shape();
    if s.len() != 4 || s[0] != labels.len() || labels.is_empty() {
        return Err(Error::dim(format!("{} labels for images {s:?}", labels.len())));
    }
    if classes < 2 || labels.iter().any(|&l| l >= classes) {
        return Err(Error::param("labels must lie in 0..classes with at least two classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut clf = ProxyClassifier::new([s[1], s[2], s[3]], classes, &mut rng);
    let mut opt = AdamState::new(&clf.store, config.learning_rate, 0.9);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch = Tensor::stack(
                &chunk
                    .iter()
                    .map(|&i| images.slice_outer(i, 1).and_then(|t| t.reshape(s[1..].to_vec())))
                    .collect::<Result<Vec<_>>>()?,
            )?;
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let logits = clf.logits(&mut tape, &batch)?;
            let loss = tape.softmax_cross_entropy(logits, &ys)?;
            let grads = tape.backward(loss)?;
            clf.store.zero_grad();
            clf.store.accumulate_grads(&tape, &grads);
            opt.step(&mut clf.store)?;
        }
    }
    clf.accuracy = accuracy(&clf, images, labels)?;
    if clf.accuracy >= config.min_accuracy {
        return Ok(clf);
    }
    Err(Error::Training(format!(
        "proxy classifier reached {:.3} accuracy, needs {}",
        clf.accuracy, config.min_accuracy
    )))
}

/// `[n, h, w, 3]` tensor of images mapped to `[-1, 1]`.
pub fn classifier_input(images: &[RgbImage]) -> Result<Tensor> {
    let ts: Vec<Tensor> = images
        .iter()
        .map(|img| crate::dataset::image_to_tensor(img).map(|v| v / 127.5 - 1.0))
        .collect();
    Tensor::stack(&ts)
}

/// Channel a colour name is expected to dominate, where one exists.
pub fn dominant_channel(colour: &str) -> Option<usize> {
    match colour {
        "red" => Some(0),
        "green" => Some(1),
        "blue" => Some(2),
        _ => None,
    }
}

/// The shape colour a toy caption names.
pub fn caption_colour(caption: &str) -> Result<&'static str> {
    let tokens = tokenize(caption);
    TOY_COLOURS
        .iter()
        .map(|c| c.0)
        .find(|c| tokens.iter().any(|t| t == c))
        .ok_or_else(|| Error::param(format!("caption {caption:?} names no known colour")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColourGroupStats {
    pub colour: String,
    pub count: usize,
    /// Mean RGB over all pixels of all images in the group.
    pub mean_rgb: [f64; 3],
    /// Fraction of images whose own largest channel mean is the colour's
    /// dominant channel; `None` for colours without one.
    pub dominant_fraction: Option<f64>,
}

/// Groups images by the colour their caption names; empty groups are
/// left out.
pub fn conditional_color_stats(images: &[RgbImage], captions: &[String]) -> Result<Vec<ColourGroupStats>> {
    if images.len() != captions.len() {
        return Err(Error::dim(format!("{} images vs {} captions", images.len(), captions.len())));
    }
    let colours = captions
        .iter()
        .map(|c| caption_colour(c))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (name, _) in TOY_COLOURS {
        let group: Vec<&RgbImage> = images
            .iter()
            .zip(&colours)
            .filter(|(_, c)| **c == name)
            .map(|(i, _)| i)
            .collect();
        if group.is_empty() {
            continue;
        }
        let means: Vec<[f64; 3]> = group.iter().map(|i| i.channel_means()).collect();
        let mut mean_rgb = [0.0; 3];
        for m in &means {
            for c in 0..3 {
                mean_rgb[c] += m[c] / means.len() as f64;
            }
        }
        let dominant_fraction = dominant_channel(name).map(|ch| {
            means
                .iter()
                .filter(|m| (0..3).all(|c| c == ch || m[ch] > m[c]))
                .count() as f64
                / means.len() as f64
        });
        out.push(ColourGroupStats {
            colour: name.to_string(),
            count: group.len(),
            mean_rgb,
            dominant_fraction,
        });
    }
    Ok(out)
}
