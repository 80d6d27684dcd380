use super::{serialize_generated, Generator, ModelManifest};
use crate::codec::{decompress_image, entropy_decode, entropy_encode, DctImage, JpegBitstream, RgbImage};
use crate::coeffs::{apply_coefficient_mask, denormalize_dct};
use crate::embedding::TextEmbedding;
use crate::error::{Error, Result};
use crate::nn::{Mode, Tape, Tensor};

use super::embedding_batch;

/// One generated image in every representation the pipeline produces.
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    /// Raw generator output, `[S, S, 3]`: normalized coefficients for v1,
    /// rounded quantized coefficients for v2.
    pub output: Tensor,
    /// Quantized coefficients as entropy coded.
    pub coefficients: DctImage,
    pub bitstream: JpegBitstream,
    /// The bitstream decompressed.
    pub rgb: RgbImage,
}

const CHUNK: usize = 32;

fn finish_v1(out: &Tensor, manifest: &ModelManifest, size: usize) -> Result<(DctImage, JpegBitstream)> {
    let range = manifest
        .range
        .ok_or_else(|| Error::Config("v1 model manifest has no normalization range".into()))?;
    let deq = denormalize_dct(out, &range, size, size, manifest.quality as u32, false)?;
    let deq = match &manifest.mask {
        Some(m) => apply_coefficient_mask(&deq, m),
        None => deq,
    };
    let q = deq.requantized();
    let bits = entropy_encode(&q)?;
    Ok((q, bits))
}

/// Runs the generator in eval mode on `noise: [n, 100]` and one caption
/// embedding per row, then serializes and decodes each result. v1 outputs
/// are denormalized, masked with the model's mask and requantized first.
pub fn sample_generator(
    generator: &Generator,
    manifest: &ModelManifest,
    captions: &[&TextEmbedding],
    noise: &Tensor,
) -> Result<Vec<GeneratedSample>> {
    let n = captions.len();
    if noise.shape() != [n, super::NOISE_DIM] {
        return Err(Error::dim(format!("noise {:?} for {n} captions", noise.shape())));
    }
    let size = generator.arch().image_size;
    let mut samples = Vec::with_capacity(n);
    for start in (0..n).step_by(CHUNK) {
        let len = CHUNK.min(n - start);
        let z = noise.slice_outer(start, len)?;
        let psi = embedding_batch(&captions[start..start + len])?;
        let mut tape = Tape::new();
        let out = match generator {
            Generator::V1(g) => g.forward(&mut tape, &z, &psi, Mode::Eval)?,
            Generator::V2(g) => g.forward(&mut tape, &z, &psi, Mode::Eval)?.quantized,
        };
        let out = tape.value(out).clone();
        for i in 0..len {
            let one = out.slice_outer(i, 1)?.reshape([size, size, 3])?;
            let (coefficients, bitstream) = match generator {
                Generator::V1(_) => finish_v1(&one, manifest, size)?,
                Generator::V2(_) => {
                    let bits = serialize_generated(&one, size, size, manifest.quality as u32)?;
                    (entropy_decode(&bits)?, bits)
                }
            };
            let rgb = decompress_image(&bitstream)?;
            samples.push(GeneratedSample {
                output: one,
                coefficients,
                bitstream,
                rgb,
            });
        }
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{CoefficientMask, NormalizationRange};
    use crate::models::{noise_batch, Architecture, GeneratorV1, GeneratorV2, ModelVariant, Profile};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn manifest(variant: ModelVariant) -> ModelManifest {
        ModelManifest {
            variant,
            profile: Profile::Tiny,
            quality: 50,
            seed: 0,
            epochs_trained: 0,
            range: Some(NormalizationRange::new(-500.0, 900.0).unwrap()),
            mask: Some(CoefficientMask::default()),
        }
    }

    #[test]
    fn both_variants_produce_decodable_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let arch = Architecture::for_profile(Profile::Tiny);
        let psi = TextEmbedding {
            values: vec![0.1; 300],
            source_caption: "x".into(),
        };
        let noise = noise_batch(3, &mut rng);
        for (g, m) in [
            (Generator::V1(GeneratorV1::new(arch, &mut rng).unwrap()), manifest(ModelVariant::V1)),
            (Generator::V2(GeneratorV2::new(arch, 50, &mut rng).unwrap()), manifest(ModelVariant::V2)),
        ] {
            let s = sample_generator(&g, &m, &[&psi; 3], &noise).unwrap();
            assert_eq!(s.len(), 3);
            for x in &s {
                assert_eq!((x.rgb.width(), x.rgb.height()), (16, 16));
                assert_eq!(entropy_decode(&x.bitstream).unwrap(), x.coefficients);
            }
            if let Generator::V1(_) = g {
                let c = &s[0].coefficients;
                for ch in 0..3 {
                    let b = c.block(ch, 1, 1);
                    assert!((0..64).all(|p| CoefficientMask::default().keeps(p) || b[p] == 0.0));
                }
            }
        }
    }
}
