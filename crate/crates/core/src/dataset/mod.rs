//! Captioned image collections on disk and in memory, their compressed
//! (masked DCT) counterparts, and a procedural toy set.
//!
//! Directory layout:
//!
//! ```text
//! root/manifest            key = value description
//! root/images/<id>.t2cr    raw RGB (png/jpg also accepted when loading)
//! root/captions/<id>.txt   one caption per line
//! root/dct/<id>.t2cd       masked dequantized coefficients (dct datasets)
//! ```

mod toy;

pub use toy::{
    draw_toy_image, generate_toy_dataset, toy_captions, toy_class, toy_vocabulary,
    toy_word_vectors, MAX_TOY_CLASSES, TOY_BACKGROUNDS, TOY_COLOURS, TOY_SHAPES,
};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;

use crate::codec::{compress_image, partial_decompress, DctImage, DecodeStop, RgbImage};
use crate::coeffs::{
    apply_coefficient_mask, compute_dataset_range, normalize_dct, CoefficientMask,
    NormalizationRange,
};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::nn::Tensor;

const RAW_MAGIC: &[u8; 4] = b"T2CR";

/// Serializes an image as `T2CR`: magic, width and height (u32 LE), then
/// interleaved RGB bytes.
pub fn encode_raw_image(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + img.as_bytes().len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    out.extend_from_slice(img.as_bytes());
    out
}

pub fn decode_raw_image(bytes: &[u8]) -> Result<RgbImage> {
    if bytes.len() < 12 || &bytes[..4] != RAW_MAGIC {
        return Err(Error::decode(0, "not a T2CR file"));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() - 12 != w * h * 3 {
        return Err(Error::decode(
            12,
            format!("{w}x{h} image needs {} bytes, found {}", w * h * 3, bytes.len() - 12),
        ));
    }
    RgbImage::new(w, h, bytes[12..].to_vec())
}

pub fn save_raw_image(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_raw_image(img)).map_err(|e| Error::io(path, e))
}

/// Reads `.t2cr` natively and anything else through the `image` crate.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "t2cr") {
        return decode_raw_image(&fs::read(path).map_err(|e| Error::io(path, e))?);
    }
    let img = image::open(path)?.to_rgb8();
    RgbImage::new(img.width() as usize, img.height() as usize, img.into_raw())
}

/// Writes `.t2cr` natively and any other extension the `image` crate knows
/// (png, jpg).
pub fn save_image(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "t2cr") {
        return save_raw_image(img, path);
    }
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.as_bytes().to_vec())
        .expect("image geometry");
    buf.save(path)?;
    Ok(())
}

/// `[h, w, 3]` tensor of 0..255 intensities.
pub fn image_to_tensor(img: &RgbImage) -> Tensor {
    let data = img.as_bytes().iter().map(|&b| b as f64).collect();
    Tensor::new([img.height(), img.width(), 3], data).expect("image geometry")
}

/// Rounds and clamps an `[h, w, 3]` (or `[1, h, w, 3]`) tensor to bytes.
pub fn tensor_to_image(t: &Tensor) -> Result<RgbImage> {
    let (h, w) = match t.shape() {
        &[h, w, 3] | &[1, h, w, 3] => (h, w),
        s => return Err(Error::dim(format!("not an RGB tensor: {s:?}"))),
    };
    let data = t.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    RgbImage::new(w, h, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionedImage {
    pub id: String,
    pub image: RgbImage,
    /// Size before resizing to the dataset size.
    pub original_size: (usize, usize),
    pub captions: Vec<String>,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Rgb,
    Dct,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Rgb => "rgb",
            Domain::Dct => "dct",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(Domain::Rgb),
            "dct" => Ok(Domain::Dct),
            _ => Err(Error::Config(format!("unknown dataset domain {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub label: Option<usize>,
}

/// On-disk description of a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub domain: Domain,
    pub image_size: usize,
    pub seed: u64,
    pub class_names: Vec<String>,
    /// Word-vector file relative to the dataset root.
    pub vectors: Option<String>,
    pub quality: Option<u8>,
    pub mask: Option<CoefficientMask>,
    pub range: Option<NormalizationRange>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.push("domain", self.domain);
        kv.push("image_size", self.image_size);
        kv.push("seed", self.seed);
        for c in &self.class_names {
            kv.push("class", c);
        }
        if let Some(v) = &self.vectors {
            kv.push("vectors", v);
        }
        if let Some(q) = self.quality {
            kv.push("quality", q);
        }
        if let Some(m) = self.mask {
            kv.push("mask", m);
        }
        if let Some(r) = self.range {
            kv.push("range_min", r.min_value());
            kv.push("range_max", r.max_value());
        }
        for e in &self.entries {
            match e.label {
                Some(l) => kv.push("entry", format!("{} {l}", e.id)),
                None => kv.push("entry", &e.id),
            }
        }
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut entries = Vec::new();
        for v in kv.get_all("entry") {
            let mut parts = v.split_whitespace();
            let id = parts
                .next()
                .ok_or_else(|| Error::Config("empty manifest entry".into()))?;
            let label = parts
                .next()
                .map(|l| {
                    l.parse::<usize>()
                        .map_err(|e| Error::Config(format!("bad label for {id}: {e}")))
                })
                .transpose()?;
            entries.push(ManifestEntry {
                id: id.to_string(),
                label,
            });
        }
        let range = match (kv.parse_opt::<f64>("range_min")?, kv.parse_opt::<f64>("range_max")?) {
            (Some(lo), Some(hi)) => Some(NormalizationRange::new(lo, hi)?),
            _ => None,
        };
        let m = DatasetManifest {
            domain: kv.parse_required("domain")?,
            image_size: kv.parse_required("image_size")?,
            seed: kv.parse_required("seed")?,
            class_names: kv.get_all("class").map(str::to_string).collect(),
            vectors: kv.get("vectors").map(str::to_string),
            quality: kv.parse_opt("quality")?,
            mask: kv.parse_opt("mask")?,
            range,
            entries,
        };
        if m.domain == Domain::Dct && (m.range.is_none() || m.quality.is_none()) {
            return Err(Error::Config(
                "dct manifest needs quality, range_min and range_max".into(),
            ));
        }
        Ok(m)
    }

    pub fn save(&self, root: impl AsRef<Path>) -> Result<()> {
        self.to_kv().save_atomic(root.as_ref().join("manifest"))
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KeyValues::load(root.as_ref().join("manifest"))?)
    }
}

/// Captioned RGB images held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbDataset {
    pub items: Vec<CaptionedImage>,
    pub class_names: Vec<String>,
    pub seed: u64,
    pub image_size: usize,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn read_captions(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)
        .map_err(|e| Error::io(path, e))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

impl RgbDataset {
    fn manifest(&self, domain: Domain) -> DatasetManifest {
        DatasetManifest {
            domain,
            image_size: self.image_size,
            seed: self.seed,
            class_names: self.class_names.clone(),
            vectors: None,
            quality: None,
            mask: None,
            range: None,
            entries: self
                .items
                .iter()
                .map(|i| ManifestEntry {
                    id: i.id.clone(),
                    label: i.label,
                })
                .collect(),
        }
    }

    fn write_files(&self, root: &Path) -> Result<()> {
        create_dir(&root.join("images"))?;
        create_dir(&root.join("captions"))?;
        for item in &self.items {
            save_raw_image(&item.image, root.join("images").join(format!("{}.t2cr", item.id)))?;
            let path = root.join("captions").join(format!("{}.txt", item.id));
            fs::write(&path, item.captions.join("\n") + "\n").map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Writes images, captions and an rgb manifest under `root`.
    pub fn save(&self, root: impl AsRef<Path>) -> Result<DatasetManifest> {
        let root = root.as_ref();
        self.write_files(root)?;
        let m = self.manifest(Domain::Rgb);
        m.save(root)?;
        Ok(m)
    }

    pub fn labels(&self) -> Option<Vec<usize>> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.items.iter().position(|i| i.id == id)
    }

    /// `n` items drawn uniformly without replacement, kept in their
    /// original order. Asking for at least every item returns them all.
    pub fn subset<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> RgbDataset {
        let mut picked = rand::seq::index::sample(rng, self.items.len(), n.min(self.items.len())).into_vec();
        picked.sort_unstable();
        RgbDataset {
            items: picked.into_iter().map(|i| self.items[i].clone()).collect(),
            class_names: self.class_names.clone(),
            seed: self.seed,
            image_size: self.image_size,
        }
    }
}

fn load_item(root: &Path, id: &str, image_path: &Path, size: usize, label: Option<usize>) -> Result<Option<CaptionedImage>> {
    let cap_path = root.join("captions").join(format!("{id}.txt"));
    if !cap_path.exists() {
        log::warn!("{id}: no caption file, skipping");
        return Ok(None);
    }
    let captions = read_captions(&cap_path)?;
    if captions.is_empty() {
        log::warn!("{id}: caption file is empty, skipping");
        return Ok(None);
    }
    let img = load_image(image_path).map_err(|e| Error::item(id, e))?;
    let original_size = (img.width(), img.height());
    let image = if original_size == (size, size) {
        img
    } else {
        img.resize_nearest(size, size)
    };
    Ok(Some(CaptionedImage {
        id: id.to_string(),
        image,
        original_size,
        captions,
        label,
    }))
}

/// Loads `root`. With a manifest its entries are followed; otherwise every
/// file in `root/images` with a caption file becomes an item. Images are
/// resized to `image_size` squares (nearest neighbour).
pub fn load_captioned_dataset(root: impl AsRef<Path>, image_size: usize) -> Result<RgbDataset> {
    let root = root.as_ref();
    let mut items = Vec::new();
    let (class_names, seed) = if root.join("manifest").exists() {
        let m = DatasetManifest::load(root)?;
        for e in &m.entries {
            let path = root.join("images").join(format!("{}.t2cr", e.id));
            if let Some(item) = load_item(root, &e.id, &path, image_size, e.label)? {
                items.push(item);
            }
        }
        (m.class_names, m.seed)
    } else {
        let dir = root.join("images");
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "t2cr" | "png" | "jpg" | "jpeg"))
            })
            .collect();
        paths.sort();
        for p in paths {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            if let Some(item) = load_item(root, &id, &p, image_size, None)? {
                items.push(item);
            }
        }
        (Vec::new(), 0)
    };
    if items.is_empty() {
        return Err(Error::Config(format!("no captioned images under {}", root.display())));
    }
    Ok(RgbDataset {
        items,
        class_names,
        seed,
        image_size,
    })
}

/// RGB items plus their masked, dequantized coefficients and the global
/// normalization range.
#[derive(Debug, Clone, PartialEq)]
pub struct DctDataset {
    pub rgb: RgbDataset,
    pub coeffs: Vec<DctImage>,
    pub quality: u8,
    pub mask: CoefficientMask,
    pub range: NormalizationRange,
}

impl DctDataset {
    /// `[S, S, 3]` normalized tensor of item `i`.
    pub fn normalized(&self, i: usize) -> Tensor {
        normalize_dct(&self.coeffs[i], &self.range)
    }

    pub fn manifest(&self) -> DatasetManifest {
        let mut m = self.rgb.manifest(Domain::Dct);
        m.quality = Some(self.quality);
        m.mask = Some(self.mask);
        m.range = Some(self.range);
        m
    }

    /// Writes the RGB files, `dct/<id>.t2cd` and a dct manifest.
    pub fn save(&self, root: impl AsRef<Path>) -> Result<DatasetManifest> {
        let root = root.as_ref();
        self.rgb.write_files(root)?;
        create_dir(&root.join("dct"))?;
        for (item, c) in self.rgb.items.iter().zip(&self.coeffs) {
            c.save(root.join("dct").join(format!("{}.t2cd", item.id)))?;
        }
        let m = self.manifest();
        m.save(root)?;
        Ok(m)
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let m = DatasetManifest::load(root)?;
        if m.domain != Domain::Dct {
            return Err(Error::Config(format!("{} is not a dct dataset", root.display())));
        }
        let rgb = load_captioned_dataset(root, m.image_size)?;
        let coeffs = rgb
            .items
            .iter()
            .map(|i| DctImage::load(root.join("dct").join(format!("{}.t2cd", i.id))))
            .collect::<Result<Vec<_>>>()?;
        Ok(DctDataset {
            rgb,
            coeffs,
            quality: m.quality.expect("checked by from_kv"),
            mask: m.mask.unwrap_or_default(),
            range: m.range.expect("checked by from_kv"),
        })
    }
}

/// Compresses every image, decodes it back to dequantized coefficients,
/// applies `mask` and records the range over the masked coefficients.
pub fn prepare_compressed_dataset(
    rgb: &RgbDataset,
    quality: u32,
    mask: CoefficientMask,
) -> Result<DctDataset> {
    let q = crate::codec::quant::validate_quality(quality)?;
    let coeffs = rgb
        .items
        .iter()
        .map(|item| {
            let bits = compress_image(&item.image, quality).map_err(|e| Error::item(&item.id, e))?;
            let deq = partial_decompress(&bits, DecodeStop::Dequantized)
                .map_err(|e| Error::item(&item.id, e))?;
            Ok(apply_coefficient_mask(&deq, &mask))
        })
        .collect::<Result<Vec<_>>>()?;
    let range = compute_dataset_range(&coeffs)?;
    Ok(DctDataset {
        rgb: rgb.clone(),
        coeffs,
        quality: q,
        mask,
        range,
    })
}

/// Picks another image uniformly, then one of its captions uniformly.
/// `caption_counts[i]` is the number of captions of image `i`.
pub fn sample_mismatched<R: Rng + ?Sized>(
    caption_counts: &[usize],
    index: usize,
    rng: &mut R,
) -> Result<(usize, usize)> {
    let n = caption_counts.len();
    if n < 2 {
        return Err(Error::param("wrong captions need at least two images"));
    }
    if index >= n {
        return Err(Error::param(format!("image index {index} out of {n}")));
    }
    let mut j = rng.random_range(0..n - 1);
    if j >= index {
        j += 1;
    }
    if caption_counts[j] == 0 {
        return Err(Error::param(format!("image {j} has no captions")));
    }
    Ok((j, rng.random_range(0..caption_counts[j])))
}

/// A caption owned by an image other than `image_id`.
pub fn sample_mismatched_captions<'a, R: Rng + ?Sized>(
    dataset: &'a RgbDataset,
    image_id: &str,
    rng: &mut R,
) -> Result<&'a str> {
    let index = dataset
        .index_of(image_id)
        .ok_or_else(|| Error::param(format!("unknown image id {image_id:?}")))?;
    let counts: Vec<usize> = dataset.items.iter().map(|i| i.captions.len()).collect();
    let (j, c) = sample_mismatched(&counts, index, rng)?;
    Ok(&dataset.items[j].captions[c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn raw_image_round_trip() {
        let mut img = RgbImage::filled(3, 2, [1, 2, 3]);
        img.set_pixel(2, 1, [250, 0, 9]);
        assert_eq!(decode_raw_image(&encode_raw_image(&img)).unwrap(), img);
        assert!(decode_raw_image(b"T2CR\x01\0\0\0\x01\0\0\0").is_err());
    }

    #[test]
    fn subsets_are_seeded_ordered_and_distinct() {
        let data = generate_toy_dataset(30, 2, 4, 16).unwrap();
        let pick = |seed| -> Vec<String> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            data.subset(12, &mut rng).items.into_iter().map(|i| i.id).collect()
        };
        let a = pick(1);
        assert_eq!(a, pick(1));
        assert_ne!(a, pick(2));
        assert_eq!(a.len(), 12);
        let positions: Vec<usize> = a.iter().map(|id| data.index_of(id).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(data.subset(99, &mut ChaCha8Rng::seed_from_u64(0)).items.len(), 30);
    }

    #[test]
    fn png_and_raw_files_load_back_identically() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = RgbImage::filled(5, 4, [10, 200, 30]);
        img.set_pixel(4, 3, [255, 0, 128]);
        for name in ["a.png", "a.t2cr"] {
            let path = dir.path().join(name);
            save_image(&img, &path).unwrap();
            assert_eq!(load_image(&path).unwrap(), img, "{name}");
        }
    }

    #[test]
    fn manifest_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate_toy_dataset(4, 2, 3, 16).unwrap();
        let m = d.save(dir.path()).unwrap();
        assert_eq!(DatasetManifest::load(dir.path()).unwrap(), m);
        assert_eq!(load_captioned_dataset(dir.path(), 16).unwrap(), d);

        let dct = prepare_compressed_dataset(&d, 50, CoefficientMask::default()).unwrap();
        let dm = dct.save(dir.path()).unwrap();
        assert_eq!(DatasetManifest::load(dir.path()).unwrap(), dm);
        assert_eq!(DctDataset::load(dir.path()).unwrap(), dct);
    }

    #[test]
    fn folder_without_manifest_skips_uncaptioned_and_resizes() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::create_dir_all(root.join("images")).unwrap();
        fs::create_dir_all(root.join("captions")).unwrap();
        for (id, size) in [("a", 16), ("b", 16), ("c", 20)] {
            save_raw_image(&RgbImage::filled(size, size, [9, 9, 9]), root.join(format!("images/{id}.t2cr"))).unwrap();
        }
        fs::write(root.join("captions/a.txt"), "one\ntwo\n").unwrap();
        fs::write(root.join("captions/c.txt"), "three\n").unwrap();
        let d = load_captioned_dataset(root, 16).unwrap();
        assert_eq!(d.items.len(), 2);
        assert_eq!(d.items[0].captions, ["one", "two"]);
        assert_eq!(d.items[1].original_size, (20, 20));
        assert_eq!(d.items[1].image.width(), 16);
    }

    #[test]
    fn empty_folder_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("images")).unwrap();
        assert!(load_captioned_dataset(dir.path(), 16).is_err());
    }

    #[test]
    fn prepared_blocks_respect_mask_and_range() {
        let d = generate_toy_dataset(6, 2, 5, 16).unwrap();
        let mask = CoefficientMask::default();
        let dct = prepare_compressed_dataset(&d, 50, mask).unwrap();
        for c in &dct.coeffs {
            for ch in 0..3 {
                for by in 0..c.blocks_y() {
                    for bx in 0..c.blocks_x() {
                        let b = c.block(ch, by, bx);
                        assert!(b.iter().enumerate().all(|(i, v)| mask.keeps(i) || *v == 0.0));
                    }
                }
                assert!(c.plane(ch).iter().all(|v| *v >= dct.range.min_value() && *v <= dct.range.max_value()));
            }
        }
        assert_eq!(prepare_compressed_dataset(&d, 50, mask).unwrap(), dct);
    }

    #[test]
    fn mismatched_caption_never_matches_and_covers() {
        let counts = [3, 1, 2, 5, 4];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..400 {
            let (j, c) = sample_mismatched(&counts, 2, &mut rng).unwrap();
            assert_ne!(j, 2);
            assert!(c < counts[j]);
            seen.insert(j);
        }
        assert_eq!(seen.len(), 4);

        let d = generate_toy_dataset(4, 2, 1, 16).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_mismatched_captions(&d, "img_0001", &mut rng).unwrap().to_string()
        };
        assert_eq!(draw(7), draw(7));
    }

    #[test]
    fn single_image_has_no_wrong_caption() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_mismatched(&[3], 0, &mut rng).is_err());
    }
}
