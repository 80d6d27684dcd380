//! The text-conditioned networks: a DCGAN-style generator, its variant that
//! ends in learned colour/DCT/quantization stages, the shared
//! discriminator and the fixed decoder used to look at generated
//! coefficients as pixels.

mod decoder;
mod discriminator;
mod generator;
mod manifest;
mod sample;

pub use decoder::{
    coefficient_divisors, inverse_colour_layer, serialize_generated, DecoderH, IdctLayer,
};
pub use discriminator::Discriminator;
pub use generator::{Generator, GeneratorV1, GeneratorV2, GeneratorV2Output, LOC_LAYER_NAMES};
pub use manifest::ModelManifest;
pub use sample::{sample_generator, GeneratedSample};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding::{TextEmbedding, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Length of the generator's noise input.
pub const NOISE_DIM: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// 64x64 images and the full filter counts.
    Paper,
    /// 16x16 images with filter counts divided by eight.
    Tiny,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "tiny" => Ok(Profile::Tiny),
            _ => Err(Error::Config(format!("unknown profile {s:?} (paper|tiny)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Tiny => "tiny",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    /// Generator output is a normalized DCT image.
    V1,
    /// Generator ends in colour, DCT and quantization layers.
    V2,
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v1" => Ok(ModelVariant::V1),
            "v2" => Ok(ModelVariant::V2),
            _ => Err(Error::Config(format!("unknown model {s:?} (v1|v2)"))),
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelVariant::V1 => "v1",
            ModelVariant::V2 => "v2",
        })
    }
}

/// Image size and filter counts shared by a generator/discriminator pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub image_size: usize,
    pub generator_widths: [usize; 4],
    pub discriminator_widths: [usize; 4],
}

impl Architecture {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Architecture {
                image_size: 64,
                generator_widths: [512, 256, 128, 64],
                discriminator_widths: [64, 128, 256, 512],
            },
            Profile::Tiny => Architecture {
                image_size: 16,
                generator_widths: [64, 32, 16, 8],
                discriminator_widths: [8, 16, 32, 64],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || !self.image_size.is_multiple_of(16) {
            return Err(Error::Config(format!(
                "image size {} must be a positive multiple of 16",
                self.image_size
            )));
        }
        if self
            .generator_widths
            .iter()
            .chain(&self.discriminator_widths)
            .any(|&w| w == 0)
        {
            return Err(Error::Config("filter counts must be positive".into()));
        }
        Ok(())
    }

    /// Side of the generator's first feature map.
    pub fn seed_size(&self) -> usize {
        self.image_size / 8
    }
}

/// Standard-normal generator input.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector(pub Vec<f64>);

impl NoiseVector {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        NoiseVector((0..NOISE_DIM).map(|_| StandardNormal.sample(rng)).collect())
    }
}

/// `[n, 100]` noise batch.
pub fn noise_batch<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor {
    let data = (0..n)
        .flat_map(|_| NoiseVector::sample(rng).0)
        .collect();
    Tensor::new([n, NOISE_DIM], data).expect("noise shape")
}

/// `[n, 300]` from individual embeddings.
pub fn embedding_batch(items: &[&TextEmbedding]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(items.len() * EMBEDDING_DIM);
    for e in items {
        if e.values.len() != EMBEDDING_DIM {
            return Err(Error::dim(format!(
                "caption embedding has {} values, networks expect {EMBEDDING_DIM}",
                e.values.len()
            )));
        }
        data.extend_from_slice(&e.values);
    }
    Tensor::new([items.len(), EMBEDDING_DIM], data)
}

pub(crate) fn check_conditioning(z: &Tensor, psi: &Tensor) -> Result<usize> {
    match (z.shape(), psi.shape()) {
        (&[n, NOISE_DIM], &[m, EMBEDDING_DIM]) if n == m && n > 0 => Ok(n),
        (zs, ps) => Err(Error::dim(format!(
            "expected noise [n, {NOISE_DIM}] and embeddings [n, {EMBEDDING_DIM}], got {zs:?} and {ps:?}"
        ))),
    }
}
