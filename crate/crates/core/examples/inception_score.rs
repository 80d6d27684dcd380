//! Inception score with a small proxy classifier trained on toy data.
//!
//! cargo run --release --example inception_score

use t2ci::codec::RgbImage;
use t2ci::dataset::generate_toy_dataset;
use t2ci::metrics::{classifier_input, inception_score, train_proxy_classifier, ClassProbabilities, ProxyConfig};

fn main() -> t2ci::Result<()> {
    let uniform = ClassProbabilities::new(3, vec![1.0 / 3.0; 18])?;
    println!("uniform predictions: {:?}", inception_score(&uniform, 1)?);
    let one_hots = ClassProbabilities::new(3, (0..9).map(|i| (i % 4 == 0) as u8 as f64).collect())?;
    println!("distinct one-hots:   {:?}", inception_score(&one_hots, 1)?);

    let data = generate_toy_dataset(64, 2, 0, 16)?;
    let images: Vec<RgbImage> = data.items.iter().map(|i| i.image.clone()).collect();
    let labels = data.labels().expect("toy data is labeled");
    let clf = train_proxy_classifier(&classifier_input(&images)?, &labels, 2, &ProxyConfig::default())?;
    println!("proxy classifier train accuracy {:.3}", clf.accuracy());

    let real = clf.predict(&classifier_input(&images)?)?;
    println!("real images:     {:?}", inception_score(&real, 8)?);
    let gray = vec![RgbImage::filled(16, 16, [128; 3]); 64];
    println!("constant images: {:?}", inception_score(&clf.predict(&classifier_input(&gray)?)?, 8)?);
    Ok(())
}
