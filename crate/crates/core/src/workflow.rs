//! File-level jobs: training with periodic checkpoints, single image
//! inference, paired-directory evaluation and dataset degradation. The
//! command line is a thin wrapper around these.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{ModelKind, RunConfig};
use crate::data::{degrade_pair, list_images, psnr, read_image, ssim, write_image, Dataset, Image};
use crate::error::{Error, Result};
use crate::mswinsr::{MswinSr, SrModel};
use crate::train::{Checkpoint, GanRun, History, L1Run, Regime};
use crate::ugswinsr::{Discriminator, Generator};

/// A super-resolution network of either family.
pub enum AnyModel {
    Mswin(MswinSr<f32>),
    Gen(Generator<f32>),
}

impl AnyModel {
    /// Freshly initialized from the run's seed.
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        let seed = cfg.train.seed;
        Ok(match cfg.model {
            ModelKind::Mswinsr => AnyModel::Mswin(MswinSr::new(cfg.mswinsr.clone(), seed)?),
            _ => AnyModel::Gen(Generator::new(cfg.ugswinsr.clone(), seed)?),
        })
    }

    /// Rebuilds the model a checkpoint was written for and loads its
    /// weights. Adversarial checkpoints contribute their generator.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(RunConfig, Self)> {
        let cfg = RunConfig::parse(&ckpt.meta)
            .map_err(|e| Error::CheckpointInvalid(format!("embedded configuration: {e}")))?;
        let mut model = Self::build(&cfg)?;
        let prefix = if ckpt.params.iter().any(|p| p.name.starts_with("gen.")) { "gen." } else { "" };
        ckpt.load_params(prefix, model.as_model_mut().params_mut())?;
        Ok((cfg, model))
    }

    pub fn as_model(&self) -> &dyn SrModel<f32> {
        match self {
            AnyModel::Mswin(m) => m,
            AnyModel::Gen(g) => g,
        }
    }

    fn as_model_mut(&mut self) -> &mut dyn SrModel<f32> {
        match self {
            AnyModel::Mswin(m) => m,
            AnyModel::Gen(g) => g,
        }
    }

    /// Upscales one image. Gray and alpha inputs are converted to RGB for
    /// three-channel models.
    pub fn upscale(&self, img: &Image) -> Result<Image> {
        let m = self.as_model();
        let img = if m.in_channels() == 3 { img.to_rgb() } else { img.clone() };
        if img.channels != m.in_channels() {
            return Err(Error::invalid(format!(
                "model expects {} channels, image has {}",
                m.in_channels(),
                img.channels
            )));
        }
        m.check_input(img.height, img.width)?;
        Image::from_tensor(&m.forward(&img.to_tensor::<f32>())?, 0)
    }
}

// one per training run, so the variant size gap does not matter
#[allow(clippy::large_enum_variant)]
enum Job<'d> {
    Mswin(L1Run<'d, MswinSr<f32>>),
    Unet(L1Run<'d, Generator<f32>>),
    Gan(GanRun<'d>),
}

impl Job<'_> {
    fn step(&self) -> u64 {
        match self {
            Job::Mswin(r) => r.step,
            Job::Unet(r) => r.step,
            Job::Gan(r) => r.step,
        }
    }

    fn total(&self) -> u64 {
        match self {
            Job::Mswin(r) => r.total_steps(),
            Job::Unet(r) => r.total_steps(),
            Job::Gan(r) => r.total_steps(),
        }
    }

    fn run_until(&mut self, step: u64) -> Result<()> {
        match self {
            Job::Mswin(r) => r.run_until(step),
            Job::Unet(r) => r.run_until(step),
            Job::Gan(r) => r.run_until(step),
        }
    }

    fn checkpoint(&self, meta: &str) -> Checkpoint {
        match self {
            Job::Mswin(r) => r.checkpoint(meta),
            Job::Unet(r) => r.checkpoint(meta),
            Job::Gan(r) => r.checkpoint(meta),
        }
    }

    fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        match self {
            Job::Mswin(r) => r.restore(ckpt),
            Job::Unet(r) => r.restore(ckpt),
            Job::Gan(r) => r.restore(ckpt),
        }
    }

    fn history(&self) -> &History {
        match self {
            Job::Mswin(r) => &r.history,
            Job::Unet(r) => &r.history,
            Job::Gan(r) => &r.history,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub resumed_from: Option<u64>,
    pub steps: u64,
    pub final_loss: Option<f64>,
    pub final_val_psnr: Option<f64>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Where `train` writes and resumes its checkpoint.
pub fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.paths.out_dir.join("checkpoint.bin"))
}

fn same_architecture(a: &RunConfig, b: &RunConfig) -> bool {
    a.model == b.model
        && match a.model {
            ModelKind::Mswinsr => a.mswinsr == b.mswinsr,
            _ => a.ugswinsr == b.ugswinsr,
        }
}

/// A CSV log rewritten after every chunk. On resume the rows already on
/// disk are kept and new rows are appended after them.
struct Log {
    path: PathBuf,
    earlier: String,
}

impl Log {
    fn open(path: PathBuf, resuming: bool) -> Self {
        let earlier = if resuming { fs::read_to_string(&path).unwrap_or_default() } else { String::new() };
        Self { path, earlier }
    }

    fn write(&self, csv: &str) -> Result<()> {
        let text = if self.earlier.is_empty() {
            csv.to_string()
        } else {
            self.earlier.clone() + csv.split_once('\n').map_or("", |(_, rows)| rows)
        };
        fs::write(&self.path, text).map_err(|e| Error::io(&self.path, e))
    }
}

/// Trains per `cfg`, checkpointing every `train.checkpoint_every` steps
/// and at the end. An existing checkpoint for the same architecture is
/// resumed. Logs go to `out_dir/train.csv` (and `disc.csv` for the
/// adversarial regime). `progress` receives one line per chunk.
pub fn run_training(cfg: &RunConfig, mut progress: impl FnMut(&str)) -> Result<TrainReport> {
    cfg.validate()?;
    let out = &cfg.paths.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (train, val) = Dataset::load(&cfg.dataset, cfg.scale(), cfg.train.seed)?;
    let tc = cfg.train.clone();
    let mut job = match (cfg.model, tc.regime) {
        (ModelKind::Mswinsr, _) => Job::Mswin(L1Run::new(MswinSr::new(cfg.mswinsr.clone(), tc.seed)?, &train, &val, tc)?),
        (_, Regime::L1) => Job::Unet(L1Run::new(Generator::new(cfg.ugswinsr.clone(), tc.seed)?, &train, &val, tc)?),
        (_, Regime::Gan) => {
            let gen = Generator::new(cfg.ugswinsr.clone(), tc.seed)?;
            let disc = Discriminator::new(cfg.ugswinsr.disc_config(cfg.dataset.hr_size), tc.seed)?;
            Job::Gan(GanRun::new(gen, disc, &train, &val, tc)?)
        }
    };

    let ckpt_path = checkpoint_path(cfg);
    let meta = cfg.to_json();
    let mut resumed_from = None;
    if ckpt_path.exists() {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        let theirs = RunConfig::parse(&ckpt.meta)
            .map_err(|e| Error::CheckpointInvalid(format!("embedded configuration: {e}")))?;
        if !same_architecture(cfg, &theirs) {
            return Err(Error::CheckpointInvalid(format!(
                "{} was written for a different architecture",
                ckpt_path.display()
            )));
        }
        job.restore(&ckpt)?;
        resumed_from = Some(ckpt.step);
        progress(&format!("resumed from {} at step {}", ckpt_path.display(), ckpt.step));
    }

    let total = job.total();
    let every = match cfg.train.checkpoint_every {
        0 => total.max(1),
        n => n,
    };
    let resuming = resumed_from.is_some();
    let log = Log::open(out.join("train.csv"), resuming);
    let disc_log = Log::open(out.join("disc.csv"), resuming);
    while job.step() < total {
        let next = ((job.step() / every + 1) * every).min(total);
        job.run_until(next)?;
        job.checkpoint(&meta).save(&ckpt_path)?;
        let h = job.history();
        log.write(&h.to_csv())?;
        if let Job::Gan(r) = &job {
            disc_log.write(&r.history.disc_csv())?;
        }
        let mut line = format!("step {}/{}", job.step(), total);
        if let Some(&(_, l)) = h.loss.last() {
            write!(line, "  loss {l:.5}").unwrap();
        }
        if let Some(&(_, p)) = h.val_psnr.last() {
            write!(line, "  val psnr {p:.3} dB").unwrap();
        }
        progress(&line);
    }
    if !ckpt_path.exists() {
        job.checkpoint(&meta).save(&ckpt_path)?;
    }
    let h = job.history();
    Ok(TrainReport {
        resumed_from,
        steps: job.step(),
        final_loss: h.loss.last().map(|&(_, l)| l),
        final_val_psnr: h.val_psnr.last().map(|&(_, p)| p),
        checkpoint: ckpt_path,
        log: log.path,
    })
}

/// Loads `checkpoint`, upscales the image at `input` and writes `output`.
pub fn upscale_file(checkpoint: &Path, input: &Path, output: &Path) -> Result<Image> {
    let (_, model) = AnyModel::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    let sr = model.upscale(&read_image(input)?)?;
    write_image(output, &sr)?;
    Ok(sr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

fn by_stem(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    Ok(list_images(dir)?
        .into_iter()
        .map(|p| (p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), p))
        .collect())
}

fn find_stem(files: &[(String, PathBuf)], stem: &str, dir: &Path) -> Result<PathBuf> {
    files
        .iter()
        .find(|(s, _)| s == stem)
        .map(|(_, p)| p.clone())
        .ok_or_else(|| Error::invalid(format!("no image named `{stem}` in {}", dir.display())))
}

/// PSNR and SSIM of every image in `dir/hr` against its namesake in
/// `dir/sr`, or, given a model, against the model's output for the
/// namesake in `dir/lr`. Outputs are quantized to 8 bits first, as a
/// written file would be.
pub fn evaluate_dir(dir: &Path, model: Option<&AnyModel>) -> Result<Vec<EvalRow>> {
    let hr_dir = dir.join("hr");
    let hr = by_stem(&hr_dir)?;
    if hr.is_empty() {
        return Err(Error::invalid(format!("no images in {}", hr_dir.display())));
    }
    let other_dir = dir.join(if model.is_some() { "lr" } else { "sr" });
    let other = by_stem(&other_dir)?;
    let mut rows = Vec::with_capacity(hr.len());
    for (stem, path) in &hr {
        let target = read_image(path)?.to_rgb();
        let src = read_image(&find_stem(&other, stem, &other_dir)?)?.to_rgb();
        let pred = match model {
            Some(m) => m.upscale(&src)?,
            None => src,
        };
        let pred = Image::from_u8(pred.width, pred.height, pred.channels, &pred.to_u8())?;
        rows.push(EvalRow {
            name: stem.clone(),
            psnr: psnr(&pred, &target, 1.0)?,
            ssim: ssim(&pred, &target)?,
        });
    }
    Ok(rows)
}

/// Fixed-width table with a trailing mean row.
pub fn format_eval_table(rows: &[EvalRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}  {:>10}  {:>8}\n", "image", "PSNR (dB)", "SSIM");
    for r in rows {
        writeln!(out, "{:<width$}  {:>10.4}  {:>8.5}", r.name, r.psnr, r.ssim).unwrap();
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let p = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
        let s = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        writeln!(out, "{:<width$}  {p:>10.4}  {s:>8.5}", "mean").unwrap();
    }
    out
}

/// Applies the crop, resize and downsample pipeline to every image in
/// `input`, writing `out/hr/<name>.png` and `out/lr/<name>.png`.
/// Returns the number of pairs written.
pub fn degrade_dir(input: &Path, out: &Path, hr_size: usize, scale: usize) -> Result<usize> {
    let files = list_images(input)?;
    if files.is_empty() {
        return Err(Error::invalid(format!("no .png or .ppm images in {}", input.display())));
    }
    let (hr_dir, lr_dir) = (out.join("hr"), out.join("lr"));
    for d in [&hr_dir, &lr_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for path in &files {
        let pair = degrade_pair(&read_image(path)?, hr_size, scale)?;
        let name = format!("{}.png", path.file_stem().unwrap_or_default().to_string_lossy());
        write_image(&hr_dir.join(&name), &pair.hr)?;
        write_image(&lr_dir.join(&name), &pair.lr)?;
    }
    Ok(files.len())
}
