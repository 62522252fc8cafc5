//! Flat `key = value` run configuration with documented defaults.
//! Unknown keys are rejected; the effective configuration is echoed into
//! the output directory of every command.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use siftfuse::backbone::BackboneKind;
use siftfuse::model::FusedModelConfig;
use siftfuse::sift::SiftConfig;

use crate::CliError;

/// (key, default, documentation) for every recognized entry.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("dataset", "shapes", "corpus: `shapes` (synthetic) or `cifar10` (binary batches)"),
    ("data_dir", "", "directory holding the cifar10 binary batches"),
    ("n_train", "2000", "shapes: generated training images; cifar10: training subset cap (0 = all)"),
    ("n_test", "500", "shapes: generated test images; cifar10: test subset cap (0 = all)"),
    ("image_size", "64", "square input resolution shared by detector, backbone and attacks"),
    ("n_classes", "4", "class count for the shapes corpus (cifar10 fixes 10)"),
    ("backbone", "vit", "semantic branch: `vit` or `cnn`"),
    ("use_graph_branch", "true", "false trains the semantic-only baseline"),
    ("k", "5", "neighbors per keypoint in the graph"),
    ("sift_octaves", "0", "pyramid octaves (0 = auto from image size)"),
    ("sift_scales_per_octave", "3", "scale samples per octave"),
    ("sift_base_sigma", "1.6", "base blur of the scale space"),
    ("sift_contrast_threshold", "0.03", "minimum refined DoG contrast"),
    ("sift_edge_ratio", "10", "edge rejection ratio"),
    ("sift_max_keypoints", "256", "keypoint cap per image, by descending response"),
    ("epochs", "15", "training epochs"),
    ("batch_size", "32", "training batch size"),
    ("lr", "0.001", "Adam learning rate"),
    ("flip_augment", "true", "random horizontal flips during training"),
    ("early_stop_val_acc", "0", "stop when validation accuracy reaches this (0 = off)"),
    ("attack_steps", "10", "PGD iterations"),
    ("attack_step_size", "0", "PGD step size (0 = 2.5 * eps / steps)"),
    ("attack_random_start", "true", "random start inside the epsilon ball"),
    ("eps_min", "0.001", "smallest nonzero epsilon of the sweep grid"),
    ("eps_max", "0.1", "largest epsilon of the sweep grid"),
    ("eps_count", "9", "number of nonzero grid epsilons"),
    ("stability_noise", "0,2,4,8,16", "noise std-devs on the 0-255 scale for `stability` (0 = clean reference row)"),
    ("graph_k_list", "1,3,5,8", "k values rendered by the `graph` command"),
    ("seed", "17", "master seed for data, init, shuffling and attacks"),
    ("threads", "0", "worker threads (0 = all cores)"),
    ("out_dir", "out", "artifact output directory"),
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let values =
            KEYS.iter().map(|(k, d, _)| (k.to_string(), d.to_string())).collect();
        RunConfig { values }
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are
    /// validation errors.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Validation(format!(
                    "config line {}: expected `key = value`, got {raw:?}",
                    i + 1
                )));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !KEYS.iter().any(|(k, _, _)| *k == key) {
            return Err(CliError::Validation(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("config key {key} missing from defaults"))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize, CliError> {
        self.get(key)
            .parse()
            .map_err(|e| CliError::Validation(format!("config {key}: {e}")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64, CliError> {
        self.get(key)
            .parse()
            .map_err(|e| CliError::Validation(format!("config {key}: {e}")))
    }

    pub fn get_f32(&self, key: &str) -> Result<f32, CliError> {
        self.get(key)
            .parse()
            .map_err(|e| CliError::Validation(format!("config {key}: {e}")))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64, CliError> {
        self.get(key)
            .parse()
            .map_err(|e| CliError::Validation(format!("config {key}: {e}")))
    }

    pub fn get_bool(&self, key: &str) -> Result<bool, CliError> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(CliError::Validation(format!("config {key}: expected bool, got {other:?}"))),
        }
    }

    pub fn get_list_f32(&self, key: &str) -> Result<Vec<f32>, CliError> {
        self.get(key)
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| CliError::Validation(format!("config {key}: {e}")))
            })
            .collect()
    }

    pub fn get_list_usize(&self, key: &str) -> Result<Vec<usize>, CliError> {
        self.get(key)
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| CliError::Validation(format!("config {key}: {e}")))
            })
            .collect()
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.get_u64("seed")
    }

    pub fn out_dir(&self) -> &Path {
        Path::new(self.get("out_dir"))
    }

    pub fn threads(&self) -> Result<usize, CliError> {
        self.get_usize("threads")
    }

    pub fn sift_config(&self) -> Result<SiftConfig, CliError> {
        let octaves = self.get_usize("sift_octaves")?;
        Ok(SiftConfig {
            n_octaves: if octaves == 0 { None } else { Some(octaves) },
            scales_per_octave: self.get_usize("sift_scales_per_octave")?,
            base_sigma: self.get_f32("sift_base_sigma")?,
            contrast_threshold: self.get_f32("sift_contrast_threshold")?,
            edge_ratio: self.get_f32("sift_edge_ratio")?,
            max_keypoints: self.get_usize("sift_max_keypoints")?,
            upscale_factor: 1,
        })
    }

    pub fn n_classes(&self) -> Result<usize, CliError> {
        if self.get("dataset") == "cifar10" {
            Ok(10)
        } else {
            self.get_usize("n_classes")
        }
    }

    pub fn backbone(&self) -> Result<BackboneKind, CliError> {
        BackboneKind::parse(self.get("backbone"))
            .ok_or_else(|| CliError::Validation(format!("config backbone: unknown kind {:?}", self.get("backbone"))))
    }

    /// Model configuration for a variant (`use_graph_branch` forced).
    pub fn model_config(&self, use_graph_branch: bool) -> Result<FusedModelConfig, CliError> {
        let size = self.get_usize("image_size")?;
        let mut cfg = FusedModelConfig::new(self.backbone()?, use_graph_branch, self.n_classes()?);
        cfg.k = self.get_usize("k")?;
        cfg.sift = self.sift_config()?;
        cfg.cnn.input_size = size;
        cfg.vit.input_size = size;
        if size < 8 {
            return Err(CliError::Validation(format!("image_size {size} is below the minimum of 8")));
        }
        if cfg.backbone == BackboneKind::Vit && size % cfg.vit.patch != 0 {
            return Err(CliError::Validation(format!(
                "image_size {size} is not divisible by the patch size {}",
                cfg.vit.patch
            )));
        }
        Ok(cfg)
    }

    /// Canonical `key = value` text, sorted by key.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Key table for `--help`.
    pub fn help_table() -> String {
        let mut out = String::from("Config keys (key = value lines; `#` comments):\n");
        for (k, d, doc) in KEYS {
            let _ = writeln!(out, "  {k:<24} default: {d:<12} {doc}");
        }
        out
    }
}
