use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::models::{ModelVariant, Profile};

/// What the discriminator sees when training the v1 generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscriminatorInput {
    /// Normalized DCT tensors, real and generated alike.
    Dct,
    /// Both sides decoded to RGB through denormalization, IDCT and the
    /// inverse colour transform.
    DecodedRgb,
}

impl FromStr for DiscriminatorInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dct" => Ok(DiscriminatorInput::Dct),
            "rgb" => Ok(DiscriminatorInput::DecodedRgb),
            _ => Err(Error::Config(format!("unknown discriminator input {s:?} (dct|rgb)"))),
        }
    }
}

impl fmt::Display for DiscriminatorInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscriminatorInput::Dct => "dct",
            DiscriminatorInput::DecodedRgb => "rgb",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    /// Weight of the decoded-vs-backbone term for v2.
    pub gamma: f64,
    pub seed: u64,
    pub variant: ModelVariant,
    pub profile: Profile,
    /// Quantization quality of the v2 generator's last layer.
    pub quality: u32,
    /// Save a resumable checkpoint every this many epochs (0: never).
    pub checkpoint_every: usize,
    pub discriminator_input: DiscriminatorInput,
    /// Learning-rate multiplier for the v2 locally connected layers.
    pub loc_rate_scale: f64,
}

impl TrainConfig {
    pub fn paper(variant: ModelVariant) -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 64,
            learning_rate: 0.0002,
            beta1: 0.5,
            gamma: 0.1,
            seed: 0,
            variant,
            profile: Profile::Paper,
            quality: 50,
            checkpoint_every: 50,
            discriminator_input: DiscriminatorInput::Dct,
            loc_rate_scale: 1.0,
        }
    }

    /// Desk-scale settings for 16x16 toy data.
    pub fn tiny(variant: ModelVariant) -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 16,
            learning_rate: 0.0005,
            profile: Profile::Tiny,
            checkpoint_every: 0,
            loc_rate_scale: 0.001,
            ..Self::paper(variant)
        }
    }

    pub fn for_profile(profile: Profile, variant: ModelVariant) -> Self {
        match profile {
            Profile::Paper => Self::paper(variant),
            Profile::Tiny => Self::tiny(variant),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::Config("need at least one epoch and batches of at least 2".into()));
        }
        if !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(self.gamma >= 0.0)
            || !(self.loc_rate_scale >= 0.0)
        {
            return Err(Error::Config("learning rate, beta1, gamma or loc_rate_scale out of range".into()));
        }
        crate::codec::quant::validate_quality(self.quality)?;
        Ok(())
    }

    /// Overrides fields named in `kv`; `profile` and `model` pick the base
    /// defaults first.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let profile = kv.parse_opt("profile")?.unwrap_or(Profile::Tiny);
        let variant = kv.parse_opt("model")?.unwrap_or(ModelVariant::V2);
        let mut c = Self::for_profile(profile, variant);
        if let Some(v) = kv.parse_opt("epochs")? {
            c.epochs = v;
        }
        if let Some(v) = kv.parse_opt("batch")? {
            c.batch_size = v;
        }
        if let Some(v) = kv.parse_opt("learning_rate")? {
            c.learning_rate = v;
        }
        if let Some(v) = kv.parse_opt("beta1")? {
            c.beta1 = v;
        }
        if let Some(v) = kv.parse_opt("gamma")? {
            c.gamma = v;
        }
        if let Some(v) = kv.parse_opt("seed")? {
            c.seed = v;
        }
        if let Some(v) = kv.parse_opt("quality")? {
            c.quality = v;
        }
        if let Some(v) = kv.parse_opt("checkpoint_every")? {
            c.checkpoint_every = v;
        }
        if let Some(v) = kv.parse_opt("discriminator_input")? {
            c.discriminator_input = v;
        }
        if let Some(v) = kv.parse_opt("loc_rate_scale")? {
            c.loc_rate_scale = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.push("profile", self.profile);
        kv.push("model", self.variant);
        kv.push("epochs", self.epochs);
        kv.push("batch", self.batch_size);
        kv.push("learning_rate", self.learning_rate);
        kv.push("beta1", self.beta1);
        kv.push("gamma", self.gamma);
        kv.push("seed", self.seed);
        kv.push("quality", self.quality);
        kv.push("checkpoint_every", self.checkpoint_every);
        kv.push("discriminator_input", self.discriminator_input);
        kv.push("loc_rate_scale", self.loc_rate_scale);
        kv
    }
}
