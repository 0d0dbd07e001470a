//! Scratch probe: white-box PGD on the surrogate input to measure the
//! reachable output distortion at a given epsilon.

use std::path::PathBuf;

use texguard::corpus::load_corpus;
use texguard::weights::load_params;
use texguard_core::nn::ParamNodes;
use texguard_core::ops;
use texguard_core::surrogate::surrogate_forward;
use texguard_core::{Tape, Tensor};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let sur_path = PathBuf::from(&args[1]);
    let corpus_dir = PathBuf::from(&args[2]);
    let eps: f32 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(8.0 / 255.0);
    let steps: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(80);
    let n_imgs: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(8);

    let sur = load_params(&sur_path).unwrap();
    let corpus = load_corpus(&corpus_dir).unwrap();

    for (idx, img) in corpus.images.iter().take(n_imgs).enumerate() {
        let x0 = img.to_nchw();
        // clean output
        let y0 = {
            let mut tape = Tape::new();
            let nodes = ParamNodes::stage(&mut tape, &sur);
            let x = tape.leaf(x0.clone());
            let y = surrogate_forward(&mut tape, &nodes, &sur, x).unwrap();
            tape.value(y).clone()
        };
        let mut delta = vec![0.0f32; x0.len()];
        let mut best = 0.0f64;
        for _ in 0..steps {
            let adv: Vec<f32> = x0
                .data()
                .iter()
                .zip(&delta)
                .map(|(&x, &d)| (x + d).clamp(0.0, 1.0))
                .collect();
            let mut tape = Tape::new();
            let nodes = ParamNodes::stage(&mut tape, &sur);
            let xn = tape.leaf(Tensor::new(x0.shape(), adv).unwrap());
            let y = surrogate_forward(&mut tape, &nodes, &sur, xn).unwrap();
            let y0n = tape.leaf(y0.clone());
            let diff = ops::sub(&mut tape, y, y0n).unwrap();
            let sq = ops::mul(&mut tape, diff, diff).unwrap();
            let mse = ops::mean_all(&mut tape, sq);
            let grads = tape.backward(mse).unwrap();
            let g = grads[xn.0].as_ref().unwrap();
            best = best.max(tape.value(mse).item() as f64);
            for (d, &gi) in delta.iter_mut().zip(g.data()) {
                *d = (*d + (eps / 8.0) * gi.signum()).clamp(-eps, eps);
            }
        }
        println!("image {idx}: max output MSE {best:.5} at eps {eps:.4}");
    }
}
