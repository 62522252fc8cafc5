//! Command implementations. Every command is deterministic given its
//! configuration and seed, writes its artifacts atomically under the output
//! directory, and echoes the effective configuration next to them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use siftfuse::attack::{self, AttackConfig, VariantSpec};
use siftfuse::data::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use siftfuse::data::{self, write_atomic, Dataset};
use siftfuse::graph::{self, NormalizationStats};
use siftfuse::model::{self, FusedModelConfig, TrainHyper};
use siftfuse::sift::{self, Keypoint};
use siftfuse::tensor::ParamSet;

use crate::config::RunConfig;
use crate::{svg, CliError};

/// Runs `f` inside a rayon pool with the configured thread count
/// (0 = library default). Results are thread-count independent.
pub fn with_threads<T>(threads: usize, f: impl FnOnce() -> T + Send) -> T
where
    T: Send,
{
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("rayon pool construction");
    pool.install(f)
}

fn echo_config(cfg: &RunConfig) -> Result<(), CliError> {
    write_text(&cfg.out_dir().join("config.txt"), &cfg.echo())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

/// Builds the configured dataset: generated shapes or CIFAR-10 batches,
/// preprocessed into the shared square input space.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let size = cfg.get_usize("image_size")?;
    match cfg.get("dataset") {
        "shapes" => Ok(data::shapes::make_synthetic_shapes(
            cfg.get_usize("n_train")?,
            cfg.get_usize("n_test")?,
            size,
            cfg.n_classes()?,
            cfg.seed()?,
        )),
        "cifar10" => {
            let dir = cfg.get("data_dir");
            if dir.is_empty() {
                return Err(CliError::Validation(
                    "dataset = cifar10 requires data_dir".into(),
                ));
            }
            let mut ds = data::cifar::load_cifar10(Path::new(dir))?;
            let (nt, ns) = (cfg.get_usize("n_train")?, cfg.get_usize("n_test")?);
            if nt > 0 || ns > 0 {
                ds.limit(
                    if nt == 0 { ds.train.len() } else { nt },
                    if ns == 0 { ds.test.len() } else { ns },
                );
            }
            ds.preprocess_to(size);
            Ok(ds)
        }
        other => Err(CliError::Validation(format!("unknown dataset {other:?}"))),
    }
}

fn hyper_from(cfg: &RunConfig) -> Result<TrainHyper, CliError> {
    let early = cfg.get_f32("early_stop_val_acc")?;
    Ok(TrainHyper {
        lr: cfg.get_f32("lr")?,
        batch_size: cfg.get_usize("batch_size")?,
        epochs: cfg.get_usize("epochs")?,
        seed: cfg.seed()?,
        flip_augment: cfg.get_bool("flip_augment")?,
        early_stop_val_acc: (early > 0.0).then_some(early),
        ..TrainHyper::default()
    })
}

fn attack_from(cfg: &RunConfig) -> Result<AttackConfig, CliError> {
    let step = cfg.get_f32("attack_step_size")?;
    Ok(AttackConfig {
        epsilon: 0.0,
        steps: cfg.get_usize("attack_steps")?,
        step_size: (step > 0.0).then_some(step),
        random_start: cfg.get_bool("attack_random_start")?,
        seed: cfg.seed()?,
    })
}

/// `extract <image.ppm>`: keypoint text file plus an SVG overlay.
pub fn cmd_extract(image: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let img = data::ppm::read_ppm(image)?;
    let kps = sift::extract(&img, &cfg.sift_config()?)?;
    let stem = file_stem(image);
    let out = cfg.out_dir();
    write_text(&out.join(format!("{stem}_keypoints.txt")), &sift::keypoints_to_text(&kps))?;
    let points: Vec<Keypoint> = kps.iter().map(|(kp, _)| kp.clone()).collect();
    write_text(&out.join(format!("{stem}_overlay.svg")), &svg::keypoint_overlay(&img, &points))?;
    echo_config(cfg)?;
    println!("extracted {} keypoints from {}", kps.len(), image.display());
    Ok(())
}

/// `graph <image.ppm>`: per configured k, a graph text file and an SVG
/// rendering. Coordinate statistics come from this image's own keypoints.
pub fn cmd_graph(image: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let img = data::ppm::read_ppm(image)?;
    let sift_cfg = cfg.sift_config()?;
    let kps = sift::extract(&img, &sift_cfg)?;
    let stats = match graph::compute_normalization_stats([kps.as_slice()]) {
        Ok(stats) => stats,
        Err(graph::GraphError::EmptyCorpus) => NormalizationStats {
            mu_x: img.width as f32 / 2.0,
            mu_y: img.height as f32 / 2.0,
            sigma_x: img.width as f32 / 4.0,
            sigma_y: img.height as f32 / 4.0,
            eps: NormalizationStats::DEFAULT_EPS,
        },
        Err(e) => return Err(e.into()),
    };
    let default_k = cfg.get_usize("k")?;
    let stem = file_stem(image);
    let out = cfg.out_dir();
    let points: Vec<Keypoint> = kps.iter().map(|(kp, _)| kp.clone()).collect();
    for k in cfg.get_list_usize("graph_k_list")? {
        let g = graph::build_graph_from_keypoints(
            &kps,
            &stats,
            k,
            (img.width as f32 / 2.0, img.height as f32 / 2.0),
        );
        write_text(&out.join(format!("{stem}_graph_k{k}.txt")), &g.to_text())?;
        write_text(
            &out.join(format!("{stem}_graph_k{k}.svg")),
            &svg::graph_overlay(&img, &points, g.edges(), k, k == default_k),
        )?;
    }
    echo_config(cfg)?;
    println!("graphs for {} written to {}", image.display(), out.display());
    Ok(())
}

/// `train [--variant fused|baseline]`: trains per the configuration and
/// writes checkpoint, stats, history CSV and the echoed config.
pub fn cmd_train(cfg: &RunConfig, variant: Option<&str>) -> Result<(), CliError> {
    let use_graph = match variant {
        None => cfg.get_bool("use_graph_branch")?,
        Some("fused") => true,
        Some("baseline") => false,
        Some(other) => {
            return Err(CliError::Usage(format!(
                "unknown variant {other:?} (expected fused or baseline)"
            )))
        }
    };
    let model_cfg = cfg.model_config(use_graph)?;
    let dataset = load_dataset(cfg)?;
    let out = cfg.out_dir();
    let outcome =
        model::train(&dataset, &model_cfg, &hyper_from(cfg)?, Some(&out.join("cache")))?;

    let name = model_cfg.variant_name();
    let ck = Checkpoint {
        config_digest: model_cfg.digest(),
        tensors: outcome.params.snapshot(),
        stats: outcome.stats,
        history: outcome.history.clone(),
    };
    save_checkpoint(&out.join(format!("{name}.sgck")), &ck)?;

    let mut history_csv = String::from("epoch,loss,val_acc\n");
    for row in &outcome.history {
        let _ = writeln!(history_csv, "{},{},{}", row.epoch, row.loss, row.val_acc);
    }
    write_text(&out.join(format!("history_{name}.csv")), &history_csv)?;

    let s = outcome.stats;
    let stats_txt = format!(
        "mu_x = {}\nmu_y = {}\nsigma_x = {}\nsigma_y = {}\neps = {}\n",
        s.mu_x, s.mu_y, s.sigma_x, s.sigma_y, s.eps
    );
    write_text(&out.join(format!("stats_{name}.txt")), &stats_txt)?;
    echo_config(cfg)?;

    let last = outcome.history.last();
    println!(
        "trained {name}: {} epochs, final val_acc {}",
        outcome.history.len(),
        last.map(|r| r.val_acc).unwrap_or(f32::NAN)
    );
    Ok(())
}

/// `sweep <checkpoint>...`: loads checkpoints (their config digests must
/// match this configuration's fused or baseline variant), attacks the test
/// split over the epsilon grid, and writes the report CSV plus a log-x
/// accuracy plot.
pub fn cmd_sweep(checkpoints: &[PathBuf], cfg: &RunConfig) -> Result<(), CliError> {
    if checkpoints.is_empty() {
        return Err(CliError::Usage("sweep needs at least one checkpoint".into()));
    }
    let fused_cfg = cfg.model_config(true)?;
    let baseline_cfg = cfg.model_config(false)?;

    struct Loaded {
        name: &'static str,
        cfg: FusedModelConfig,
        params: ParamSet,
        stats: NormalizationStats,
    }
    let mut loaded = Vec::new();
    for path in checkpoints {
        let ck = load_checkpoint(path)?;
        let (name, model_cfg) = if ck.config_digest == fused_cfg.digest() {
            ("fused", fused_cfg.clone())
        } else if ck.config_digest == baseline_cfg.digest() {
            ("baseline", baseline_cfg.clone())
        } else {
            ck.expect_config(fused_cfg.digest())?;
            unreachable!("expect_config returned despite digest mismatch");
        };
        loaded.push(Loaded {
            name,
            cfg: model_cfg,
            params: ParamSet::from_snapshot(&ck.tensors),
            stats: ck.stats,
        });
    }

    let dataset = load_dataset(cfg)?;
    let grid = attack::epsilon_grid(
        cfg.get_f64("eps_min")?,
        cfg.get_f64("eps_max")?,
        cfg.get_usize("eps_count")?,
    )?;
    let atk = attack_from(cfg)?;
    let variants: Vec<VariantSpec> = loaded
        .iter()
        .map(|l| VariantSpec {
            name: l.name.to_string(),
            params: &l.params,
            cfg: &l.cfg,
            stats: &l.stats,
        })
        .collect();
    let report = attack::sweep(&dataset.test, &variants, &grid, &atk, &dataset.name)?;

    let out = cfg.out_dir();
    write_text(&out.join("report.csv"), &report.to_csv())?;
    write_text(&out.join("sweep.svg"), &svg::sweep_plot(&report, &grid))?;
    echo_config(cfg)?;
    println!(
        "swept {} variants x {} epsilons over {} samples",
        variants.len(),
        grid.len() + 1,
        dataset.test.len()
    );
    Ok(())
}

/// `stability <image.ppm>`: keypoint stability diagnostics over the
/// configured noise grid, as CSV `noise,repeatability,desc_dist,pixel_dist`.
pub fn cmd_stability(image: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let img = data::ppm::read_ppm(image)?;
    let levels: Vec<f32> =
        cfg.get_list_f32("stability_noise")?.iter().map(|v| v / 255.0).collect();
    let reports = sift::measure_keypoint_stability(&img, &cfg.sift_config()?, &levels, cfg.seed()?)?;
    let mut csv = String::from("noise,repeatability,desc_dist,pixel_dist\n");
    for r in &reports {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            r.noise_level, r.repeatability, r.mean_descriptor_distance, r.mean_pixel_distance
        );
    }
    let out = cfg.out_dir();
    write_text(&out.join("stability.csv"), &csv)?;
    echo_config(cfg)?;
    println!("stability over {} noise levels written to {}", reports.len(), out.display());
    Ok(())
}
