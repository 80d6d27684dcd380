//! Procedural captioned images: one solid-coloured shape on a neutral
//! background, with template captions naming the colour and shape.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CaptionedImage, RgbDataset};
use crate::codec::RgbImage;
use crate::embedding::{toy_vector_table, WordVectorTable, EMBEDDING_DIM};
use crate::error::{Error, Result};

/// Shape colours in class order, with their nominal RGB values.
pub const TOY_COLOURS: [(&str, [u8; 3]); 6] = [
    ("red", [220, 30, 30]),
    ("blue", [30, 60, 220]),
    ("green", [40, 190, 40]),
    ("yellow", [230, 210, 30]),
    ("purple", [140, 40, 170]),
    ("orange", [240, 130, 20]),
];

pub const TOY_SHAPES: [&str; 5] = ["circle", "square", "triangle", "diamond", "cross"];

/// Background names and their base gray levels.
pub const TOY_BACKGROUNDS: [(&str, u8); 3] = [("white", 240), ("black", 12), ("gray", 128)];

const TEMPLATES: [&str; 5] = [
    "a {c} {s} flower on a {b} background",
    "a {c} flower shaped like a {s}",
    "this flower is {c} and {s} on a plain {b} background",
    "a {s} shaped {c} flower",
    "{c} petals forming a {s}",
];

/// Distinct (colour, shape) pairs available as classes.
pub const MAX_TOY_CLASSES: usize = 30;

/// `(colour, shape)` of class `k`.
pub fn toy_class(k: usize) -> (&'static str, &'static str) {
    (TOY_COLOURS[k % TOY_COLOURS.len()].0, TOY_SHAPES[(k + k / TOY_COLOURS.len()) % TOY_SHAPES.len()])
}

/// Every caption of a toy image.
pub fn toy_captions(colour: &str, shape: &str, background: &str) -> Vec<String> {
    TEMPLATES
        .iter()
        .map(|t| t.replace("{c}", colour).replace("{s}", shape).replace("{b}", background))
        .collect()
}

/// Every word a toy caption can contain, sorted.
pub fn toy_vocabulary() -> Vec<&'static str> {
    let mut words: Vec<&str> = TEMPLATES
        .iter()
        .flat_map(|t| t.split_whitespace())
        .filter(|w| !w.starts_with('{'))
        .chain(TOY_COLOURS.iter().map(|c| c.0))
        .chain(TOY_SHAPES)
        .chain(TOY_BACKGROUNDS.iter().map(|b| b.0))
        .collect();
    words.sort_unstable();
    words.dedup();
    words
}

/// Seeded 300-d vectors covering [`toy_vocabulary`].
pub fn toy_word_vectors(seed: u64) -> WordVectorTable {
    toy_vector_table(toy_vocabulary(), EMBEDDING_DIM, seed)
}

fn inside(shape: &str, dx: f64, dy: f64, r: f64) -> bool {
    match shape {
        "circle" => dx * dx + dy * dy <= r * r,
        "square" => dx.abs() <= 0.8 * r && dy.abs() <= 0.8 * r,
        "triangle" => dy <= r && dx.abs() <= (dy + r) / 2.0,
        "diamond" => dx.abs() + dy.abs() <= r,
        "cross" => {
            (dx.abs() <= r / 3.0 && dy.abs() <= r) || (dy.abs() <= r / 3.0 && dx.abs() <= r)
        }
        _ => false,
    }
}

fn jitter<R: Rng + ?Sized>(v: u8, amount: i32, rng: &mut R) -> u8 {
    (v as i32 + rng.random_range(-amount..=amount)).clamp(0, 255) as u8
}

/// Draws one image of the given class.
pub fn draw_toy_image<R: Rng + ?Sized>(
    size: usize,
    colour: [u8; 3],
    shape: &str,
    background: u8,
    rng: &mut R,
) -> RgbImage {
    let s = size as f64;
    let r = s * rng.random_range(0.3..0.42);
    let cx = s / 2.0 + s * rng.random_range(-0.08..0.08);
    let cy = s / 2.0 + s * rng.random_range(-0.08..0.08);
    let fg = colour.map(|c| jitter(c, 15, rng));
    let bg = jitter(background, 10, rng);
    let mut img = RgbImage::filled(size, size, [bg; 3]);
    for y in 0..size {
        for x in 0..size {
            if inside(shape, x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, r) {
                img.set_pixel(x, y, fg);
            }
        }
    }
    img
}

/// `n_images` square images, image `i` belonging to class `i % n_classes`.
pub fn generate_toy_dataset(
    n_images: usize,
    n_classes: usize,
    seed: u64,
    image_size: usize,
) -> Result<RgbDataset> {
    if !(2..=MAX_TOY_CLASSES).contains(&n_classes) {
        return Err(Error::param(format!(
            "toy datasets need 2..={MAX_TOY_CLASSES} classes, got {n_classes}"
        )));
    }
    if image_size == 0 {
        return Err(Error::param("image size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class_names = (0..n_classes)
        .map(|k| {
            let (c, s) = toy_class(k);
            format!("{c} {s}")
        })
        .collect();
    let mut items = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let k = i % n_classes;
        let (colour_name, shape) = toy_class(k);
        let colour = TOY_COLOURS[k % TOY_COLOURS.len()].1;
        let &(bg_name, bg) = TOY_BACKGROUNDS.choose(&mut rng).unwrap();
        let image = draw_toy_image(image_size, colour, shape, bg, &mut rng);
        items.push(CaptionedImage {
            id: format!("img_{i:04}"),
            original_size: (image_size, image_size),
            image,
            captions: toy_captions(colour_name, shape, bg_name),
            label: Some(k),
        });
    }
    Ok(RgbDataset {
        items,
        class_names,
        seed,
        image_size,
    })
}
