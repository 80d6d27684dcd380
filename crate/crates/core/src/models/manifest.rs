use std::path::Path;

use super::{Architecture, ModelVariant, Profile};
use crate::coeffs::{CoefficientMask, NormalizationRange};
use crate::error::Result;
use crate::kv::KeyValues;

/// What a saved generator needs besides its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelManifest {
    pub variant: ModelVariant,
    pub profile: Profile,
    pub quality: u8,
    pub seed: u64,
    pub epochs_trained: usize,
    /// Normalization of v1 outputs.
    pub range: Option<NormalizationRange>,
    pub mask: Option<CoefficientMask>,
}

impl ModelManifest {
    pub fn arch(&self) -> Architecture {
        Architecture::for_profile(self.profile)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.push("model", self.variant);
        kv.push("profile", self.profile);
        kv.push("image_size", self.arch().image_size);
        kv.push("quality", self.quality);
        kv.push("seed", self.seed);
        kv.push("epochs_trained", self.epochs_trained);
        if let Some(r) = self.range {
            kv.push("range_min", r.min_value());
            kv.push("range_max", r.max_value());
        }
        if let Some(m) = self.mask {
            kv.push("mask", m);
        }
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let range = match (kv.parse_opt::<f64>("range_min")?, kv.parse_opt::<f64>("range_max")?) {
            (Some(lo), Some(hi)) => Some(NormalizationRange::new(lo, hi)?),
            _ => None,
        };
        Ok(ModelManifest {
            variant: kv.parse_required("model")?,
            profile: kv.parse_required("profile")?,
            quality: kv.parse_required("quality")?,
            seed: kv.parse_required("seed")?,
            epochs_trained: kv.parse_required("epochs_trained")?,
            range,
            mask: kv.parse_opt("mask")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_kv().save_atomic(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KeyValues::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let m = ModelManifest {
            variant: ModelVariant::V1,
            profile: Profile::Tiny,
            quality: 50,
            seed: 9,
            epochs_trained: 3,
            range: Some(NormalizationRange::new(-1016.25, 733.0).unwrap()),
            mask: Some(CoefficientMask::default()),
        };
        assert_eq!(ModelManifest::from_kv(&m.to_kv()).unwrap(), m);
    }
}
