//! Acceptance gate: one pass/fail line per criterion (run with
//! `cargo test --test acceptance -- --nocapture` to see them all).

use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use texguard::config::RunConfig;
use texguard::pipeline::{self, DefenseVariant};
use texguard_core::attention::AttentionMap;
use texguard_core::surrogate::EditKind;
use texguard_core::metrics::{dsr, psnr, ssim, EvalRecord, PSNR_CAP_DB};
use texguard_core::perturb::{loss_cam, loss_total, LossWeights};
use texguard_core::rng::Rng;
use texguard_core::texture::{bilateral_filter, lbp_map, FilterParams};
use texguard_core::Image;

fn verdict(criterion: usize, what: &str, ok: bool, detail: &str) {
    println!(
        "acceptance criterion {criterion} ({what}): {} [{detail}]",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} ({what}) failed: {detail}");
}

fn random_gray(rng: &mut Rng, w: usize, h: usize) -> Image<f64> {
    let px: Vec<f64> = (0..w * h).map(|_| rng.uniform_f64()).collect();
    Image::new(w, h, 1, px).unwrap()
}

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let reports = texguard_core::gradcheck::run_all(2024).expect("gradient suite runs");
    let elapsed = start.elapsed();
    let worst = reports
        .iter()
        .map(|r| r.max_rel_err / r.tolerance.max(f64::MIN_POSITIVE))
        .fold(0.0f64, f64::max);
    let all_ok = reports.iter().all(|r| r.passed());
    let in_time = elapsed.as_secs_f64() < 120.0;
    verdict(
        1,
        "gradient suite vs finite differences",
        all_ok && in_time,
        &format!(
            "{} checks, worst err/tol ratio {worst:.3}, {:.2}s",
            reports.len(),
            elapsed.as_secs_f64()
        ),
    );
}

/// Independent brute-force LBP for P=8, R=1: the 8 integer neighbors,
/// counter-clockwise from (+1, 0), bit set when neighbor >= center, borders
/// replicated by clamping.
fn lbp8_oracle(img: &Image<f64>) -> Vec<u32> {
    let (w, h) = (img.width(), img.height());
    let offs: [(i64, i64); 8] = [
        (1, 0),
        (1, -1),
        (0, -1),
        (-1, -1),
        (-1, 0),
        (-1, 1),
        (0, 1),
        (1, 1),
    ];
    let mut codes = Vec::with_capacity(w * h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let center = img.get(x as usize, y as usize, 0);
            let mut code = 0u32;
            for (k, (dx, dy)) in offs.iter().enumerate() {
                let nx = (x + dx).clamp(0, w as i64 - 1) as usize;
                let ny = (y + dy).clamp(0, h as i64 - 1) as usize;
                if img.get(nx, ny, 0) >= center {
                    code |= 1 << k;
                }
            }
            codes.push(code);
        }
    }
    codes
}

#[test]
fn criterion_2_lbp_oracle() {
    let mut rng = Rng::new(42);
    let mut mismatches = 0usize;
    for _ in 0..100 {
        let img = random_gray(&mut rng, 16, 16);
        let got = lbp_map(&img, 8, 1.0).unwrap();
        let want = lbp8_oracle(&img);
        mismatches += got
            .codes
            .iter()
            .zip(&want)
            .filter(|(a, b)| a != b)
            .count();
    }
    verdict(
        2,
        "LBP brute-force oracle, 100 random 16x16",
        mismatches == 0,
        &format!("{mismatches} code mismatches"),
    );
}

/// Naive double-loop bilateral filter with the same border convention
/// (truncate + renormalize) and sigma_r on the 0..255 gray scale.
fn bilateral_oracle(img: &Image<f64>, window: usize, sigma_d: f64, sigma_r: f64) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let r = (window / 2) as i64;
    let sr = sigma_r / 255.0;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let center = img.get(x as usize, y as usize, 0);
            let mut acc = 0.0;
            let mut norm = 0.0;
            for ny in (y - r).max(0)..=(y + r).min(h as i64 - 1) {
                for nx in (x - r).max(0)..=(x + r).min(w as i64 - 1) {
                    let v = img.get(nx as usize, ny as usize, 0);
                    let d2 = ((nx - x).pow(2) + (ny - y).pow(2)) as f64;
                    let wgt = (-d2 / (2.0 * sigma_d * sigma_d)).exp()
                        * (-(center - v).powi(2) / (2.0 * sr * sr)).exp();
                    acc += wgt * v;
                    norm += wgt;
                }
            }
            out.push(acc / norm);
        }
    }
    out
}

#[test]
fn criterion_3_bilateral_oracle() {
    let mut rng = Rng::new(7);
    let params = FilterParams {
        window: 31,
        sigma_d: 75.0,
        sigma_r: 15.0,
    };
    let mut max_dev = 0.0f64;
    for _ in 0..8 {
        let img = random_gray(&mut rng, 32, 32);
        let got = bilateral_filter(&img, &params).unwrap();
        let want = bilateral_oracle(&img, 31, 75.0, 15.0);
        for (a, b) in got.pixels().iter().zip(&want) {
            max_dev = max_dev.max((a - b).abs());
        }
    }
    let flat = Image::new(32, 32, 1, vec![0.42; 1024]).unwrap();
    let filtered = bilateral_filter(&flat, &params).unwrap();
    let const_dev = filtered
        .pixels()
        .iter()
        .map(|v| (v - 0.42).abs())
        .fold(0.0f64, f64::max);
    verdict(
        3,
        "bilateral naive double-loop oracle",
        max_dev <= 1e-9 && const_dev <= 1e-12,
        &format!("max dev {max_dev:.3e}, constant-image dev {const_dev:.3e}"),
    );
}

#[test]
fn criterion_4_metric_oracles() {
    let mut rng = Rng::new(5);
    let a = {
        let px: Vec<f64> = (0..3 * 16 * 16).map(|_| rng.uniform_f64()).collect();
        Image::new(16, 16, 3, px).unwrap()
    };
    let ssim_self = ssim(&a, &a).unwrap();
    let psnr_self = psnr(&a, &a).unwrap();

    // constant offset 0.1 -> MSE exactly 0.01 -> 20 dB
    let zero = Image::new(16, 16, 3, vec![0.0; 768]).unwrap();
    let tenth = Image::new(16, 16, 3, vec![0.1; 768]).unwrap();
    let p = psnr(&zero, &tenth).unwrap();

    let recs: Vec<EvalRecord> = [0.06, 0.04, 0.05]
        .iter()
        .enumerate()
        .map(|(i, &d)| EvalRecord {
            image_id: format!("i{i}"),
            psnr_db: 0.0,
            ssim: 0.0,
            distortion_d: d,
            success: d >= 0.05,
        })
        .collect();
    let rate = dsr(&recs, 0.05).unwrap();

    let ok = ssim_self == 1.0
        && psnr_self == PSNR_CAP_DB
        && (p - 20.0).abs() <= 1e-9
        && (rate - 66.67).abs() <= 0.01;
    verdict(
        4,
        "metric oracles",
        ok,
        &format!("ssim(a,a)={ssim_self}, psnr@mse0.01={p:.12}, dsr={rate:.4}%"),
    );
}

#[test]
fn criterion_5_loss_arithmetic() {
    let w = LossWeights::default();
    let total: f64 = loss_total(0.1, -0.2, 0.5, &w);

    // uniform |difference| of 0.5 everywhere, above the 0.3 mask threshold
    let ha = AttentionMap::new(4, 4, vec![0.75; 16]).unwrap();
    let hb = AttentionMap::new(4, 4, vec![0.25; 16]).unwrap();
    let (cam, empty) = loss_cam(&ha, &hb, w.threshold).unwrap();

    let (cam_empty, was_empty) = loss_cam(&ha, &ha, w.threshold).unwrap();

    let ok = (total - 0.142).abs() <= 1e-9
        && (cam - (-(0.5f64.ln()))).abs() <= 1e-6
        && !empty
        && cam_empty == 0.0
        && was_empty;
    verdict(
        5,
        "loss arithmetic",
        ok,
        &format!("total={total:.9}, cam={cam:.7} (want {:.7}), empty-mask={cam_empty}", -(0.5f64.ln())),
    );
}

/// Shared scaffolding for the pipeline-level criteria: a config rooted in a
/// temp dir with every knob set explicitly so reruns are reproducible.
fn pipeline_cfg(root: &Path, train_n: usize, test_n: usize, image_size: usize) -> RunConfig {
    RunConfig {
        corpus_dir: root.join("corpus"),
        weights_dir: root.join("weights"),
        reports_dir: root.join("reports"),
        image_size,
        train_n,
        test_n,
        ..RunConfig::default()
    }
}

/// The pipeline criteria (6, 7, 8) train real models; serialize them so the
/// test harness's thread pool cannot time-slice them against each other and
/// inflate the wall-clock budget of criterion 6.
static PIPELINE_LOCK: Mutex<()> = Mutex::new(());

/// Desk-scale tuning shared by criteria 6 and 7: a sharper bilateral filter
/// than the full-scale defaults (so the band evidence reaches the texture
/// branch at 64x64), a longer surrogate schedule, and loss weights balancing
/// output distortion against perceptual quality at this scale.
fn desk_tune(cfg: &mut RunConfig) {
    cfg.filter_window = 7;
    cfg.filter_sigma_d = 2.0;
    cfg.filter_sigma_r = 10.0;
    cfg.surrogate_epochs = 80;
    cfg.surrogate_lr = 5e-3;
    cfg.defense.epsilon = 0.047;
    cfg.defense.epochs = 20;
    cfg.loss.lambda1 = 40.0;
    cfg.loss.lambda2 = 5.0;
}

#[test]
fn criterion_6_desk_scale_defense() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = pipeline_cfg(dir.path(), 256, 64, 64);
    desk_tune(&mut cfg);

    pipeline::generate_corpus(&cfg).unwrap();
    pipeline::train_classifiers(&cfg).unwrap();
    pipeline::train_editor(&cfg, cfg.defense_editor).unwrap();
    pipeline::train_defense_variant(&cfg, DefenseVariant::Dual).unwrap();
    let report =
        pipeline::evaluate_kinds(&cfg, DefenseVariant::Dual, 0.05, &[cfg.defense_editor])
            .unwrap();
    let elapsed = start.elapsed();

    let defense = &report.rows[0];
    let noise = &report.rows[1];
    let ok = defense.dsr_percent >= 60.0
        && defense.mean_psnr >= 35.0
        && defense.mean_ssim >= 0.90
        && noise.dsr_percent <= defense.dsr_percent / 2.0
        && elapsed.as_secs() <= 15 * 60;
    verdict(
        6,
        "desk-scale defense analogue",
        ok,
        &format!(
            "DSR {:.1}% (noise {:.1}%), PSNR {:.2} dB, SSIM {:.4}, {:.0}s",
            defense.dsr_percent,
            noise.dsr_percent,
            defense.mean_psnr,
            defense.mean_ssim,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_7_ablation_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = pipeline_cfg(dir.path(), 64, 32, 64);
    desk_tune(&mut cfg);
    cfg.loss.lambda1 = 14.0;

    pipeline::generate_corpus(&cfg).unwrap();
    pipeline::train_classifiers(&cfg).unwrap();
    pipeline::train_editor(&cfg, cfg.defense_editor).unwrap();
    let report = pipeline::ablation(&cfg, 0.05).unwrap();

    let row = |name: &str| {
        report
            .rows
            .iter()
            .find(|r| r.edit_kind == name)
            .unwrap_or_else(|| panic!("ablation row `{name}` missing"))
    };
    let (dual, global, local) = (row("dual"), row("global-only"), row("local-only"));
    let ordering = dual.dsr_percent >= global.dsr_percent
        && global.dsr_percent >= local.dsr_percent - 5.0;
    let quality = report.rows.iter().all(|r| r.mean_psnr >= 34.0);
    verdict(
        7,
        "ablation soft ordering",
        report.rows.len() == 3 && ordering && quality,
        &format!(
            "DSR dual {:.1}% / global-only {:.1}% / local-only {:.1}%, min PSNR {:.2} dB",
            dual.dsr_percent,
            global.dsr_percent,
            local.dsr_percent,
            report
                .rows
                .iter()
                .map(|r| r.mean_psnr)
                .fold(f64::INFINITY, f64::min)
        ),
    );
}

#[test]
fn criterion_8_determinism_and_persistence() {
    let run = |root: &Path| {
        let mut cfg = pipeline_cfg(root, 8, 4, 32);
        cfg.classifier_epochs = 2;
        cfg.surrogate_epochs = 2;
        cfg.defense.epochs = 2;
        pipeline::generate_corpus(&cfg).unwrap();
        pipeline::train_classifiers(&cfg).unwrap();
        pipeline::train_editor(&cfg, EditKind::HairRecolor).unwrap();
        pipeline::train_editor(&cfg, EditKind::RegionInvert).unwrap();
        pipeline::train_defense_variant(&cfg, DefenseVariant::Dual).unwrap();
        pipeline::evaluate(&cfg, DefenseVariant::Dual, 0.05).unwrap();
        (
            std::fs::read(cfg.reports_dir.join("report_dual.csv")).unwrap(),
            std::fs::read(cfg.reports_dir.join("records_dual.csv")).unwrap(),
            cfg,
        )
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let (report_a, records_a, cfg_a) = run(dir_a.path());
    let (report_b, records_b, _) = run(dir_b.path());
    let reports_identical = report_a == report_b && records_a == records_b;

    // weight persistence: load -> save -> bit-identical file
    let wpath = cfg_a.weights_dir.join("defense_dual.txgw");
    let params = texguard::weights::load_params(&wpath).unwrap();
    let resaved = dir_a.path().join("resaved.txgw");
    texguard::weights::save_params(&params, &resaved).unwrap();
    let weights_identical = std::fs::read(&wpath).unwrap() == std::fs::read(&resaved).unwrap();

    // PNG persistence: load -> save -> byte-stable
    let png = cfg_a.corpus_dir.join("test").join("face_0000.png");
    let img = texguard::imageio::load_image(&png).unwrap();
    let repng = dir_a.path().join("resaved.png");
    texguard::imageio::save_image(&img, &repng).unwrap();
    let png_identical = std::fs::read(&png).unwrap() == std::fs::read(&repng).unwrap();

    verdict(
        8,
        "determinism and persistence",
        reports_identical && weights_identical && png_identical,
        &format!(
            "reports identical: {reports_identical}, weights bit-identical: {weights_identical}, png byte-stable: {png_identical}"
        ),
    );
}
