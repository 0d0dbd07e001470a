//! Scratch tuner: train the dual defense with given loss weights and report
//! DSR / PSNR / SSIM against the configured editor on the test split.

use std::path::{Path, PathBuf};

use texguard::config::RunConfig;
use texguard::corpus::load_corpus;
use texguard::pipeline::{train_defense_variant, DefenseVariant, LoadedModels};
use texguard::weights::load_params;
use texguard_core::metrics;
use texguard_core::perturb::protect;
use texguard_core::surrogate::apply;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = RunConfig::load(Path::new(&args[1])).unwrap();
    cfg.loss.lambda1 = args[2].parse().unwrap();
    cfg.loss.lambda2 = args[3].parse().unwrap();
    cfg.defense.epochs = args[4].parse().unwrap();
    if let Some(eps) = args.get(5) {
        cfg.defense.epsilon = eps.parse().unwrap();
    }
    let variant = DefenseVariant::Dual;

    let t0 = std::time::Instant::now();
    let logs = train_defense_variant(&cfg, variant).unwrap();
    println!(
        "trained {} epochs in {:.0}s: first (mae {:.4} mse {:.4} cam {:.4}) last (mae {:.4} mse {:.4} cam {:.4})",
        logs.len(),
        t0.elapsed().as_secs_f64(),
        logs[0].mae,
        logs[0].mse,
        logs[0].cam,
        logs.last().unwrap().mae,
        logs.last().unwrap().mse,
        logs.last().unwrap().cam,
    );

    let corpus = load_corpus(&cfg.corpus_dir.join("test")).unwrap();
    let models = LoadedModels::load(&cfg).unwrap();
    let deps = models.deps(variant).unwrap();
    let enh = load_params(&PathBuf::from(
        cfg.weights_dir.join(format!("defense_{}.txgw", variant.name())),
    ))
    .unwrap();
    let sur = models.surrogate(cfg.defense_editor).unwrap();
    let dcfg = cfg.defense_with_seed();

    let (mut psnr_sum, mut ssim_sum, mut dist_sum, mut wins) = (0.0, 0.0, 0.0, 0usize);
    let mut noise_wins = 0usize;
    let mut rng = texguard_core::rng::Rng::new(dcfg.seed ^ 0xbeef);
    let n = corpus.images.len();
    for img in &corpus.images {
        let adv = protect(img, &enh, &deps, &dcfg).unwrap();
        let g_ori = apply(sur, img).unwrap();
        let g_adv = apply(sur, &adv).unwrap();
        let d = metrics::distortion_l2(&g_ori, &g_adv).unwrap();
        psnr_sum += metrics::psnr(img, &adv).unwrap();
        ssim_sum += metrics::ssim(img, &adv).unwrap();
        dist_sum += d;
        if d >= 0.05 {
            wins += 1;
        }
        let eps = cfg.defense.epsilon as f32;
        let noisy_px: Vec<f32> = img
            .pixels()
            .iter()
            .map(|&p| (p + eps * (2.0 * rng.uniform_f64() as f32 - 1.0)).clamp(0.0, 1.0))
            .collect();
        let noisy =
            texguard_core::Image::new(img.width(), img.height(), img.channels(), noisy_px)
                .unwrap();
        let g_noisy = apply(sur, &noisy).unwrap();
        if metrics::distortion_l2(&g_ori, &g_noisy).unwrap() >= 0.05 {
            noise_wins += 1;
        }
    }
    println!(
        "lambda1 {} lambda2 {} eps {:.4}: DSR {:.1}% noiseDSR {:.1}% mean_d {:.4} PSNR {:.2} SSIM {:.4} (n={n})",
        cfg.loss.lambda1,
        cfg.loss.lambda2,
        cfg.defense.epsilon,
        100.0 * wins as f64 / n as f64,
        100.0 * noise_wins as f64 / n as f64,
        dist_sum / n as f64,
        psnr_sum / n as f64,
        ssim_sum / n as f64,
    );
}
