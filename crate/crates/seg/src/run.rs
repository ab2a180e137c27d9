//! Pipeline steps behind the command-line verbs.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vimpute_core::augment::{self, AugmentConfig};
use vimpute_core::dataset::{split_dataset, Dataset, Sample, Split};
use vimpute_core::metrics::{self, compare, Comparison, EvalReport};
use vimpute_core::model::{Mode, ModelConfig, Network, Variant};
use vimpute_core::phantom::generate_phantoms;
use vimpute_core::postprocess::{postprocess, PostprocessConfig};
use vimpute_core::preprocess::{preprocess_image, preprocess_mask, resize_mask, PreprocessConfig};
use vimpute_core::train::{fit_with, TrainState, Trainer};
use vimpute_core::{BinaryMask, GrayImage};

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::error::{Error, IoContext, Result};
use crate::io;

pub const FROZEN_CONFIG: &str = "config.frozen";
pub const HISTORY: &str = "history.csv";
pub const BEST: &str = "best.ckpt";
pub const LAST: &str = "last.ckpt";
const LOCK: &str = "run.lock";

/// Exclusive ownership of an output directory for the lifetime of the guard.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).at(dir)?;
        let path = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked { path }),
            Err(e) => Err(Error::Io { path, source: e }),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn preprocess_dataset(ds: Dataset, cfg: &PreprocessConfig) -> Result<Dataset> {
    let split = ds.split();
    let items = ds
        .into_items()
        .into_iter()
        .map(|s| Ok(Sample::new(s.id, preprocess_image(&s.image, cfg)?, preprocess_mask(&s.mask, cfg)?)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(items, split)?)
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::Io { path: path.to_path_buf(), source: std::io::Error::new(std::io::ErrorKind::NotFound, "directory not found") })
    }
}

/// Preprocessed training and validation sets from `data.root`. Without a
/// `val/` directory the validation set is split off `train/`.
pub fn load_train_val(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    require_dir(&cfg.data_root)?;
    let train = io::load_dataset(&cfg.data_root.join("train"), Split::Train)?;
    let val_dir = cfg.data_root.join("val");
    let (train, val) = if val_dir.is_dir() {
        (train, io::load_dataset(&val_dir, Split::Val)?)
    } else {
        split_dataset(&train, (1.0 - cfg.val_fraction, cfg.val_fraction), cfg.split_seed())?
    };
    Ok((preprocess_dataset(train, &cfg.preprocess)?, preprocess_dataset(val, &cfg.preprocess)?))
}

pub fn load_test(cfg: &RunConfig) -> Result<Dataset> {
    require_dir(&cfg.data_root)?;
    preprocess_dataset(io::load_dataset(&cfg.data_root.join("test"), Split::Test)?, &cfg.preprocess)
}

/// Outcome of one training run.
pub struct Trained {
    pub best: Network<f32>,
    pub state: TrainState,
}

/// Trains on in-memory data. With `run_dir`, writes `history.csv`,
/// `last.ckpt` after every epoch and `best.ckpt` whenever validation improves.
pub fn train_datasets(cfg: &RunConfig, train: &Dataset, val: &Dataset, run_dir: Option<&Path>, log: &mut dyn Write) -> Result<Trained> {
    cfg.validate()?;
    let tcfg = cfg.train_config();
    let net = Network::<f32>::build(&cfg.model, cfg.init_seed())?;
    let mut trainer = Trainer::new(net, &tcfg, &cfg.augment, train, val)?;
    let mut history = match run_dir {
        Some(dir) => {
            let path = dir.join(HISTORY);
            let mut f = File::create(&path).at(&path)?;
            writeln!(f, "epoch,train_loss,val_loss").at(&path)?;
            Some((f, path))
        }
        None => None,
    };
    let (best, state) = fit_with(&mut trainer, tcfg.max_epochs, tcfg.patience, |st, tr, improved| {
        let rec = st.history.last().expect("an epoch was recorded");
        let _ = writeln!(log, "epoch {:>3}  train {:.6}  val {:.6}{}", rec.epoch, rec.train_loss, rec.val_loss, if improved { "  *" } else { "" });
        if let (Some((f, path)), Some(dir)) = (history.as_mut(), run_dir) {
            writeln!(f, "{},{},{}", rec.epoch, rec.train_loss, rec.val_loss).at(path.as_path())?;
            f.flush().at(path.as_path())?;
            let save = |name: &str| checkpoint::save(&dir.join(name), &tr.net, &cfg.preprocess, tr.steps(), rec.epoch, rec.val_loss);
            save(LAST)?;
            if improved {
                save(BEST)?;
            }
        }
        Ok::<(), Error>(())
    })?;
    Ok(Trained { best, state })
}

/// The `train` verb: trains from `data.root`, writing into the run directory.
pub fn train_run(cfg: &RunConfig, log: &mut dyn Write) -> Result<Trained> {
    cfg.validate()?;
    let (train, val) = load_train_val(cfg)?;
    let dir = cfg.run_dir();
    let _lock = RunLock::acquire(&dir)?;
    let frozen = dir.join(FROZEN_CONFIG);
    fs::write(&frozen, cfg.to_text()).at(&frozen)?;
    train_datasets(cfg, &train, &val, Some(&dir), log)
}

pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let json = dir.join("report.json");
    fs::write(&json, serde_json::to_string_pretty(report).expect("report serializes")).at(&json)?;
    let csv = dir.join("report.csv");
    let mut text = String::from("id,dice,accuracy\n");
    for s in &report.per_image {
        text.push_str(&format!("{},{},{}\n", s.id, s.dice, s.accuracy));
    }
    fs::write(&csv, text).at(&csv)
}

/// The `evaluate` verb: scores a checkpoint on a dataset directory.
pub fn evaluate_run(ckpt: &Path, data: &Path, post: &PostprocessConfig, out: &Path) -> Result<EvalReport> {
    let Checkpoint { header, network } = checkpoint::load(ckpt)?;
    let ds = preprocess_dataset(io::load_dataset(data, Split::Test)?, &header.preprocess)?;
    let report = metrics::evaluate(&network, &ds, post)?;
    write_report(&report, out)?;
    Ok(report)
}

/// Overlay colours: true positive green, false negative blue, false positive red.
pub fn overlay(img: &GrayImage, pred: &BinaryMask, reference: &BinaryMask) -> Vec<u8> {
    let mut rgb = Vec::with_capacity(img.pixels().len() * 3);
    for ((&v, &p), &r) in img.pixels().iter().zip(pred.pixels()).zip(reference.pixels()) {
        let g = (v * 255.0).round() as u8;
        rgb.extend_from_slice(&match (p, r) {
            (1, 1) => [0, 255, 0],
            (0, 1) => [0, 0, 255],
            (1, 0) => [255, 0, 0],
            _ => [g, g, g],
        });
    }
    rgb
}

/// The `segment` verb. Masks are written at the input resolution as
/// `<out>/<id>.png`; with `reference`, also `<out>/<id>_overlay.png`.
pub fn segment_run(ckpt: &Path, input: &Path, output: &Path, reference: Option<&Path>, post: &PostprocessConfig) -> Result<usize> {
    let Checkpoint { header, network } = checkpoint::load(ckpt)?;
    post.validate()?;
    let dir = if input.join(io::IMAGES_DIR).is_dir() { input.join(io::IMAGES_DIR) } else { input.to_path_buf() };
    let files = io::list_pngs(&dir)?;
    if files.is_empty() {
        return Err(Error::EmptyDirectory { path: dir });
    }
    let _lock = RunLock::acquire(output)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (id, path) in &files {
        let img = io::read_image(path)?;
        let x = preprocess_image(&img, &header.preprocess)?;
        let soft = network.forward(&x, Mode::Eval, &mut rng)?.soft_mask;
        let mask = resize_mask(&postprocess(&soft, post), img.height(), img.width())?;
        io::write_mask(&output.join(format!("{id}.png")), &mask)?;
        if let Some(ref_dir) = reference {
            let ref_path = ref_dir.join(format!("{id}.png"));
            if !ref_path.is_file() {
                return Err(Error::OrphanImage { id: id.clone(), path: ref_path });
            }
            let truth = io::read_mask(&ref_path)?;
            if truth.dims() != img.dims() {
                return Err(Error::BadFile { path: ref_path, reason: "reference mask size differs from the image".into() });
            }
            io::write_rgb(&output.join(format!("{id}_overlay.png")), img.height(), img.width(), overlay(&img, &mask, &truth))?;
        }
    }
    Ok(files.len())
}

/// Panels left to right: preprocessed input, then the input after each
/// enabled family alone, then all enabled families together.
pub fn augment_preview(cfg: &RunConfig, image: &Path, seed: u64, out: &Path) -> Result<()> {
    cfg.augment.validate()?;
    let img = preprocess_image(&io::read_image(image)?, &cfg.preprocess)?;
    let mask = BinaryMask::empty(img.height(), img.width());
    let forced = AugmentConfig { p_aug: 1.0, ..cfg.augment.clone() };
    let a = &cfg.augment;
    let mut panels = vec![img.clone()];
    let families = [(a.enable_standard, (true, false, false)), (a.enable_block, (false, true, false)), (a.enable_diffuse, (false, false, true))];
    for (i, (on, (s, b, d))) in families.into_iter().enumerate() {
        if on {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            panels.push(augment::apply(&img, &mask, &forced.with_families(s, b, d), &mut rng).image);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    panels.push(augment::apply(&img, &mask, &forced, &mut rng).image);
    let (h, w) = img.dims();
    let gap = 4;
    let total_w = panels.len() * w + (panels.len() - 1) * gap;
    let mut grid = vec![1.0f32; h * total_w];
    for (k, p) in panels.iter().enumerate() {
        let x0 = k * (w + gap);
        for y in 0..h {
            grid[y * total_w + x0..y * total_w + x0 + w].copy_from_slice(&p.pixels()[y * w..(y + 1) * w]);
        }
    }
    io::write_image8(out, &GrayImage::new(h, total_w, grid)?)
}

/// The `phantoms` verb.
pub fn write_phantoms(n: usize, size: (usize, usize), occluded_fraction: f64, seed: u64, out: &Path) -> Result<Dataset> {
    let ds = generate_phantoms(n, size, occluded_fraction, seed)?;
    io::save_dataset(&ds, out)?;
    Ok(ds)
}

/// Augmentation rows of the ablation grid: (name, standard, block, diffuse).
pub const AUGMENT_ROWS: [(&str, bool, bool, bool); 4] = [
    ("standard", true, false, false),
    ("block", true, true, false),
    ("diffuse", true, false, true),
    ("block+diffuse", true, true, true),
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub model: String,
    pub augmentation: String,
    pub dice_mean: f64,
    pub dice_std: f64,
    pub acc_mean: f64,
    pub acc_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationSummary {
    pub rows: Vec<AblationRow>,
    /// Baseline against proposed within each augmentation row.
    pub comparisons: Vec<Comparison>,
}

/// Configuration of one ablation cell derived from `base`; the feature width
/// follows the variant's default.
pub fn ablation_config(base: &RunConfig, variant: Variant, row: usize) -> RunConfig {
    let (name, s, b, d) = AUGMENT_ROWS[row];
    let mut cfg = base.clone();
    cfg.model = ModelConfig { variant, base_features: ModelConfig::for_variant(variant).base_features, ..base.model.clone() };
    cfg.augment = base.augment.with_families(s, b, d);
    cfg.run_name = format!("{}_{}", variant.name(), name.replace('+', "_"));
    cfg
}

/// Trains and tests all eight cells in memory, writing each cell's
/// report under `<run_dir>/<variant>_<augmentation>/`.
pub fn ablation_datasets(base: &RunConfig, train: &Dataset, val: &Dataset, test: &Dataset, log: &mut dyn Write) -> Result<AblationSummary> {
    let root = base.run_dir();
    let mut rows = Vec::new();
    let mut comparisons = Vec::new();
    for row in 0..AUGMENT_ROWS.len() {
        let mut reports = Vec::new();
        for variant in [Variant::Baseline, Variant::Proposed] {
            let cfg = ablation_config(base, variant, row);
            let dir = root.join(&cfg.run_name);
            fs::create_dir_all(&dir).at(&dir)?;
            fs::write(dir.join(FROZEN_CONFIG), cfg.to_text()).at(dir.join(FROZEN_CONFIG))?;
            let _ = writeln!(log, "== {}", cfg.run_name);
            let trained = train_datasets(&cfg, train, val, Some(&dir), log)?;
            let report = metrics::evaluate(&trained.best, test, &cfg.post)?;
            write_report(&report, &dir)?;
            rows.push(AblationRow {
                model: variant.name().into(),
                augmentation: AUGMENT_ROWS[row].0.into(),
                dice_mean: report.dice_mean,
                dice_std: report.dice_std,
                acc_mean: report.acc_mean,
                acc_std: report.acc_std,
            });
            reports.push(report);
        }
        for metric in ["dice", "accuracy"] {
            match compare(&reports[0], &reports[1], &format!("baseline/{}", AUGMENT_ROWS[row].0), &format!("proposed/{}", AUGMENT_ROWS[row].0), metric) {
                Ok(c) => comparisons.push(c),
                Err(vimpute_core::Error::DegenerateComparison) => {
                    let _ = writeln!(log, "{} {metric}: identical per-image scores, no test", AUGMENT_ROWS[row].0);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    let summary = AblationSummary { rows, comparisons };
    write_summary(&summary, &root)?;
    Ok(summary)
}

pub fn write_summary(summary: &AblationSummary, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let mut csv = String::from("model,augmentation,dice_mean,dice_std,acc_mean,acc_std\n");
    for r in &summary.rows {
        csv.push_str(&format!("{},{},{},{},{},{}\n", r.model, r.augmentation, r.dice_mean, r.dice_std, r.acc_mean, r.acc_std));
    }
    fs::write(dir.join("summary.csv"), csv).at(dir.join("summary.csv"))?;
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(dir.join("summary.json"), json).at(dir.join("summary.json"))
}

/// The `ablation` verb.
pub fn ablation_run(cfg: &RunConfig, log: &mut dyn Write) -> Result<AblationSummary> {
    cfg.validate()?;
    let (train, val) = load_train_val(cfg)?;
    let test = load_test(cfg)?;
    let root = cfg.run_dir();
    let _lock = RunLock::acquire(&root)?;
    fs::write(root.join(FROZEN_CONFIG), cfg.to_text()).at(root.join(FROZEN_CONFIG))?;
    ablation_datasets(cfg, &train, &val, &test, log)
}
