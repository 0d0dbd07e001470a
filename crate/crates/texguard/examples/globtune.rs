//! Scratch harness: sweep global-classifier hyperparameters on a corpus and
//! print the training accuracy curve.

use std::path::PathBuf;

use texguard::corpus::load_corpus;
use texguard_core::attention::{build_classifier, train_classifier, ClassifierSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let corpus_dir = PathBuf::from(&args[1]);
    let patch: usize = args[2].parse().unwrap();
    let embed: usize = args[3].parse().unwrap();
    let lr: f64 = args[4].parse().unwrap();
    let epochs: usize = args[5].parse().unwrap();
    let n: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(128);
    let batch: usize = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(16);
    let stem: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(8);

    let corpus = load_corpus(&corpus_dir).unwrap();
    let images: Vec<_> = corpus.images.into_iter().take(n).collect();
    let labels: Vec<usize> = corpus.entries.iter().take(n).map(|e| e.label).collect();

    let mut spec = ClassifierSpec::global(images[0].width(), 2);
    spec.patch_size = patch;
    spec.embed_dim = embed;
    spec.base_channels = stem;
    let mut params = build_classifier::<f32>(&spec, 1234).unwrap();
    let hist =
        train_classifier(&mut params, &spec, &images, &labels, epochs, lr, batch, 99).unwrap();
    let pts: Vec<String> = hist
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 5 == 4 || *i == hist.len() - 1)
        .map(|(i, a)| format!("e{i}:{a:.3}"))
        .collect();
    println!(
        "patch {patch} embed {embed} lr {lr} n {n} batch {batch} stem {stem}: {}",
        pts.join(" ")
    );
}
