//! Line-based `key = value` run configuration with dotted section prefixes.
//! The `TEXGUARD_SEED` environment variable overrides the seed (and nothing
//! else).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use texguard_core::perturb::{DefenseConfig, LossWeights};
use texguard_core::surrogate::EditKind;
use texguard_core::texture::FilterParams;

/// Complete run configuration; every field has a pinned default.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus_dir: PathBuf,
    pub weights_dir: PathBuf,
    pub reports_dir: PathBuf,
    pub seed: u64,
    pub image_size: usize,
    pub train_n: usize,
    pub test_n: usize,
    /// Bilateral filter window and sigmas (sigma_r in 0-255 gray units).
    pub filter_window: usize,
    pub filter_sigma_d: f64,
    pub filter_sigma_r: f64,
    /// Use the standard 0.114 blue coefficient instead of the default 0.116.
    pub gray_standard: bool,
    pub loss: LossWeights,
    pub defense: DefenseConfig,
    /// Which surrogate editor the defense trains against.
    pub defense_editor: EditKind,
    pub classifier_epochs: usize,
    /// Per-family learning rates: the attention classifier needs a gentler
    /// step than the conv classifier.
    pub classifier_local_lr: f64,
    pub classifier_global_lr: f64,
    pub classifier_batch: usize,
    pub surrogate_epochs: usize,
    pub surrogate_lr: f64,
    pub surrogate_batch: usize,
    pub recolor_hue: [f64; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus_dir: PathBuf::from("artifacts/corpus"),
            weights_dir: PathBuf::from("artifacts/weights"),
            reports_dir: PathBuf::from("artifacts/reports"),
            seed: 7,
            image_size: 64,
            train_n: 256,
            test_n: 64,
            filter_window: 31,
            filter_sigma_d: 75.0,
            filter_sigma_r: 15.0,
            gray_standard: false,
            loss: LossWeights::default(),
            defense: DefenseConfig::default(),
            defense_editor: EditKind::RegionInvert,
            classifier_epochs: 30,
            classifier_local_lr: 1e-2,
            classifier_global_lr: 2e-3,
            classifier_batch: 16,
            surrogate_epochs: 60,
            surrogate_lr: 2e-3,
            surrogate_batch: 16,
            recolor_hue: [0.85, 0.2, 0.55],
        }
    }
}

impl RunConfig {
    /// Parse a config file; unknown keys are rejected so typos surface.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("read config {}", path.display()))?;
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{}:{}: expected `key = value`", path.display(), lineno + 1);
            };
            cfg.set(key.trim(), value.trim())
                .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        }
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply the single supported environment override.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var("TEXGUARD_SEED") {
            self.seed = v
                .parse()
                .with_context(|| format!("TEXGUARD_SEED `{v}` is not an integer"))?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: std::error::Error + Send + Sync + 'static,
        {
            v.parse()
                .with_context(|| format!("`{key}` has invalid value `{v}`"))
        }
        match key {
            "paths.corpus_dir" => self.corpus_dir = PathBuf::from(value),
            "paths.weights_dir" => self.weights_dir = PathBuf::from(value),
            "paths.reports_dir" => self.reports_dir = PathBuf::from(value),
            "seed" => self.seed = num(key, value)?,
            "corpus.image_size" => self.image_size = num(key, value)?,
            "corpus.train_n" => self.train_n = num(key, value)?,
            "corpus.test_n" => self.test_n = num(key, value)?,
            "filter.window" => self.filter_window = num(key, value)?,
            "filter.sigma_d" => self.filter_sigma_d = num(key, value)?,
            "filter.sigma_r" => self.filter_sigma_r = num(key, value)?,
            "texture.gray_standard" => self.gray_standard = num(key, value)?,
            "loss.lambda1" => self.loss.lambda1 = num(key, value)?,
            "loss.lambda2" => self.loss.lambda2 = num(key, value)?,
            "loss.lambda3" => self.loss.lambda3 = num(key, value)?,
            "loss.threshold" => self.loss.threshold = num(key, value)?,
            "defense.epsilon" => self.defense.epsilon = num(key, value)?,
            "defense.epochs" => self.defense.epochs = num(key, value)?,
            "defense.lr" => self.defense.lr = num(key, value)?,
            "defense.batch_size" => self.defense.batch_size = num(key, value)?,
            "defense.editor" => {
                self.defense_editor = match value {
                    "hair-recolor" => EditKind::HairRecolor,
                    "region-invert" => EditKind::RegionInvert,
                    other => bail!("unknown editor `{other}` (hair-recolor, region-invert)"),
                }
            }
            "classifier.epochs" => self.classifier_epochs = num(key, value)?,
            "classifier.local_lr" => self.classifier_local_lr = num(key, value)?,
            "classifier.global_lr" => self.classifier_global_lr = num(key, value)?,
            "classifier.batch_size" => self.classifier_batch = num(key, value)?,
            "surrogate.epochs" => self.surrogate_epochs = num(key, value)?,
            "surrogate.lr" => self.surrogate_lr = num(key, value)?,
            "surrogate.batch_size" => self.surrogate_batch = num(key, value)?,
            "edit.recolor_r" => self.recolor_hue[0] = num(key, value)?,
            "edit.recolor_g" => self.recolor_hue[1] = num(key, value)?,
            "edit.recolor_b" => self.recolor_hue[2] = num(key, value)?,
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.filter_params().validate()?;
        self.loss.validate()?;
        self.defense.validate()?;
        if self.image_size < 16 || self.image_size % 8 != 0 {
            bail!(
                "corpus.image_size must be a multiple of 8 and >= 16, got {}",
                self.image_size
            );
        }
        if self.train_n == 0 || self.test_n == 0 {
            bail!("corpus.train_n and corpus.test_n must be >= 1");
        }
        if self
            .recolor_hue
            .iter()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            bail!("edit.recolor_* components must lie in [0,1]");
        }
        Ok(())
    }

    pub fn filter_params(&self) -> FilterParams<f32> {
        FilterParams {
            window: self.filter_window,
            sigma_d: self.filter_sigma_d as f32,
            sigma_r: self.filter_sigma_r as f32,
        }
    }

    pub fn gray_coeffs(&self) -> [f64; 3] {
        if self.gray_standard {
            texguard_core::texture::GRAY_COEFFS_STANDARD
        } else {
            texguard_core::texture::GRAY_COEFFS_DEFAULT
        }
    }

    /// The defense seed follows the run seed unless set explicitly.
    pub fn defense_with_seed(&self) -> DefenseConfig {
        DefenseConfig {
            seed: self.seed,
            ..self.defense
        }
    }
}
