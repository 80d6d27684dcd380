//! Builds a toy captioned dataset, compresses it to masked coefficients and
//! shows the normalization that feeds the coefficient-domain generator.
//!
//! cargo run --release --example dct_dataset -- [out_dir]

use t2ci::coeffs::CoefficientMask;
use t2ci::dataset::{generate_toy_dataset, prepare_compressed_dataset, DctDataset};

fn main() -> t2ci::Result<()> {
    let rgb = generate_toy_dataset(16, 2, 0, 16)?;
    let item = &rgb.items[0];
    println!("{}: {:?}", item.id, item.captions);

    let mask = CoefficientMask::default();
    let dct = prepare_compressed_dataset(&rgb, 50, mask)?;
    println!("mask {mask} keeps {} of 64 positions", mask.count());
    println!("range [{}, {}]", dct.range.min_value(), dct.range.max_value());

    let c = &dct.coeffs[0];
    let nonzero = (0..3)
        .flat_map(|ch| (0..c.blocks_y()).flat_map(move |by| (0..c.blocks_x()).map(move |bx| (ch, by, bx))))
        .map(|(ch, by, bx)| c.block(ch, by, bx).iter().filter(|v| **v != 0.0).count())
        .max()
        .unwrap_or(0);
    println!("at most {nonzero} nonzero coefficients in any block");

    let (lo, hi) = (0..dct.coeffs.len())
        .flat_map(|i| dct.normalized(i).data().to_vec())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    println!("normalized values span [{lo}, {hi}]");

    if let Some(dir) = std::env::args().nth(1) {
        dct.save(&dir)?;
        assert_eq!(DctDataset::load(&dir)?, dct);
        println!("saved and reloaded {dir}");
    }
    Ok(())
}
