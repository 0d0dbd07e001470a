//! Scratch probe: held-out surrogate quality. Trains (or loads) a surrogate
//! for the given edit kind and reports PSNR(G(img), analytic target) plus the
//! outside-region mean absolute deviation on the test split.

use std::path::Path;

use texguard::config::RunConfig;
use texguard::corpus::load_corpus;
use texguard::pipeline::{self, analytic_edit_for};
use texguard::weights::load_params;
use texguard_core::metrics;
use texguard_core::surrogate::{apply, EditKind};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cfg = RunConfig::load(Path::new(&args[1])).unwrap();
    let kind = match args[2].as_str() {
        "hair-recolor" => EditKind::HairRecolor,
        _ => EditKind::RegionInvert,
    };
    let wpath = cfg.weights_dir.join(format!("surrogate_{}.txgw", kind.name()));
    if !wpath.exists() {
        let hist = pipeline::train_editor(&cfg, kind).unwrap();
        println!("trained {}: final MSE {:.6}", kind.name(), hist.last().unwrap());
    }
    let params = load_params(&wpath).unwrap();
    let corpus = load_corpus(&cfg.corpus_dir.join("test")).unwrap();
    let (mut psnr_sum, mut dev_sum, mut n) = (0.0, 0.0, 0usize);
    for ((img, mask), _e) in corpus
        .images
        .iter()
        .zip(&corpus.masks)
        .zip(&corpus.entries)
    {
        let target = analytic_edit_for(&cfg, kind, img, mask).unwrap();
        let out = apply(&params, img).unwrap();
        psnr_sum += metrics::psnr(&out, &target).unwrap();
        let (mut dev, mut cnt) = (0.0f64, 0usize);
        for c in 0..img.channels() {
            for y in 0..img.height() {
                for x in 0..img.width() {
                    if mask[y * img.width() + x] == 0 {
                        dev += (out.get(x, y, c) - img.get(x, y, c)).abs() as f64;
                        cnt += 1;
                    }
                }
            }
        }
        dev_sum += dev / cnt as f64;
        n += 1;
    }
    println!(
        "{}: held-out PSNR {:.2} dB, outside-region MAD {:.4} (n={n})",
        kind.name(),
        psnr_sum / n as f64,
        dev_sum / n as f64,
    );
}
