//! Caption embeddings as mean word vectors.
//!
//! cargo run --release --example text_embedding -- [vectors.txt]

use t2ci::dataset::toy_word_vectors;
use t2ci::embedding::{embed_caption, load_vectors, tokenize, WordVectorTable};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn main() -> t2ci::Result<()> {
    let table: WordVectorTable = match std::env::args().nth(1) {
        Some(path) => load_vectors(path)?,
        None => toy_word_vectors(0),
    };
    println!("{} words, dimension {}", table.len(), table.dim());

    let captions = [
        "A red circle on a white background.",
        "the flower is red and round",
        "A blue square on a black background.",
    ];
    println!("tokens: {:?}", tokenize(captions[0]));
    let embedded = captions
        .iter()
        .map(|c| embed_caption(c, &table))
        .collect::<t2ci::Result<Vec<_>>>()?;
    for i in 0..captions.len() {
        for j in i + 1..captions.len() {
            println!(
                "cos({:?}, {:?}) = {:.3}",
                captions[i],
                captions[j],
                cosine(&embedded[i].values, &embedded[j].values)
            );
        }
    }
    match embed_caption("zzz qqq", &table) {
        Err(e) => println!("unknown-only caption: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
