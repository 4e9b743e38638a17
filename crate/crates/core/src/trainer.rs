//! Ray batches, the two-term photometric loss, and joint optimization of the
//! field and the cameras.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, backward, detach, ops, AdamState, Tensor, Value};
use crate::camera::{ndc_rays, Cameras, Pixel, NDC_NEAR};
use crate::error::{Error, Result};
use crate::field::{Field, FieldConfig};
use crate::image::Image;
use crate::render::{render_rays, stratified_depths, RayRender};
use crate::scene::Scene;

/// Which gradient paths from the corrected prediction reach the cameras.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetachMode {
    /// Only the hash-encoding input is detached; the corrected render still
    /// reaches the cameras through the main network's `c` and `σ`.
    HeInput,
    /// The corrected render is computed from detached rays, so cameras see
    /// gradients from the main prediction alone.
    Full,
}

impl DetachMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DetachMode::HeInput => "he-input",
            DetachMode::Full => "full",
        }
    }
}

impl fmt::Display for DetachMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetachMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "he-input" => Ok(DetachMode::HeInput),
            "full" => Ok(DetachMode::Full),
            other => Err(Error::Config(format!(
                "detach mode must be he-input or full, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_rows: usize,
    pub batch_cols: usize,
    pub samples_per_ray: usize,
    pub lr_init: f64,
    pub lr_final_net: f64,
    pub lr_final_cam: f64,
    pub detach_mode: DetachMode,
    pub per_camera_focal: bool,
    /// Iterations between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub seed: u64,
    pub field: FieldConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10_000,
            batch_rows: 32,
            batch_cols: 32,
            samples_per_ray: 128,
            lr_init: 1e-3,
            lr_final_net: 1e-5,
            lr_final_cam: 1e-8,
            detach_mode: DetachMode::HeInput,
            per_camera_focal: false,
            checkpoint_every: 0,
            seed: 0,
            field: FieldConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("epochs", self.epochs),
            ("batch_rows", self.batch_rows),
            ("batch_cols", self.batch_cols),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if self.samples_per_ray < 2 {
            return Err(Error::Config("samples_per_ray must be at least 2".into()));
        }
        let rates = [
            ("lr_init", self.lr_init),
            ("lr_final_net", self.lr_final_net),
            ("lr_final_cam", self.lr_final_cam),
        ];
        if let Some((k, v)) = rates.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("{k} must be positive, got {v}")));
        }
        self.field.hash.validate()
    }

    pub fn rays_per_batch(&self) -> usize {
        self.batch_rows * self.batch_cols
    }
}

/// `lr_init · (lr_final / lr_init)^(step / total)`.
pub fn lr_schedule(step: u64, total: u64, lr_init: f64, lr_final: f64) -> f64 {
    if total == 0 {
        return lr_init;
    }
    let frac = step.min(total) as f64 / total as f64;
    lr_init * (lr_final / lr_init).powf(frac)
}

/// Rays through a row×column grid of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct RayBatch {
    /// Camera index, i.e. position within the training images.
    pub image: usize,
    pub pixels: Vec<Pixel>,
    /// `m×3` target colors.
    pub targets: Tensor,
    /// `m×N` NDC depths.
    pub depths: Tensor,
}

/// Grid batch on image `image`: `rows` distinct rows and `cols` distinct
/// columns, every intersection a ray, followed by stratified depths.
pub fn make_batch(
    images: &[Image],
    image: usize,
    rows: usize,
    cols: usize,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<RayBatch> {
    let img = images
        .get(image)
        .ok_or_else(|| Error::InvalidArgument(format!("image {image} of {}", images.len())))?;
    let (w, h) = (img.width(), img.height());
    if h < rows || w < cols {
        return Err(Error::InvalidArgument(format!(
            "image {w}×{h} is smaller than the {rows}×{cols} ray grid"
        )));
    }
    let mut rs = rand::seq::index::sample(rng, h, rows).into_vec();
    let mut cs = rand::seq::index::sample(rng, w, cols).into_vec();
    rs.sort_unstable();
    cs.sort_unstable();
    let pixels: Vec<Pixel> = rs
        .iter()
        .flat_map(|&r| cs.iter().map(move |&c| (r, c)))
        .collect();
    let mut targets = Tensor::zeros(pixels.len(), 3);
    for (i, &(r, c)) in pixels.iter().enumerate() {
        targets.row_slice_mut(i).copy_from_slice(&img.pixel(r, c));
    }
    let depths = stratified_depths(pixels.len(), samples, rng)?;
    Ok(RayBatch {
        image,
        pixels,
        targets,
        depths,
    })
}

/// [`make_batch`] on a uniformly chosen image.
pub fn sample_batch(images: &[Image], config: &TrainConfig, rng: &mut impl Rng) -> Result<RayBatch> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("no training images".into()));
    }
    let image = rng.gen_range(0..images.len());
    make_batch(
        images,
        image,
        config.batch_rows,
        config.batch_cols,
        config.samples_per_ray,
        rng,
    )
}

#[derive(Debug, Clone)]
pub struct LossTerms {
    pub total: Value,
    pub main: f64,
    pub corrected: f64,
}

/// `mean‖p − p̃‖² + mean‖p − p̃_c‖²`, each mean over rays and channels.
pub fn combined_loss(target: &Tensor, main: &Value, corrected: &Value) -> Result<LossTerms> {
    let p = Value::constant(target.clone());
    let a = ops::mean_squares(&ops::sub(main, &p)?);
    let b = ops::mean_squares(&ops::sub(corrected, &p)?);
    let (main, corrected) = (a.item(), b.item());
    Ok(LossTerms {
        total: ops::add(&a, &b)?,
        main,
        corrected,
    })
}

/// The forward pass of one training batch.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub loss: LossTerms,
    pub main: Value,
    pub corrected: Value,
    pub render: RayRender,
}

/// Camera → rays → NDC → samples → field → both renders → loss.
pub fn batch_forward(
    field: &Field,
    cameras: &Cameras,
    batch: &RayBatch,
    detach_mode: DetachMode,
) -> Result<BatchForward> {
    let rays = cameras.rays(batch.image, &batch.pixels)?;
    let scale = cameras.focal_scale_value(batch.image)?;
    let ndc = ndc_rays(&rays.origins, &rays.directions, &scale, NDC_NEAR)?;
    let view = ops::normalize_rows(&rays.directions)?;
    let render = render_rays(field, &ndc, &view, &batch.depths)?;
    let main = render.main.rgb.clone();
    let corrected = match detach_mode {
        DetachMode::HeInput => render.corrected.rgb.clone(),
        DetachMode::Full => {
            render_rays(field, &detach(&ndc), &detach(&view), &batch.depths)?
                .corrected
                .rgb
        }
    };
    let loss = combined_loss(&batch.targets, &main, &corrected)?;
    Ok(BatchForward {
        loss,
        main,
        corrected,
        render,
    })
}

/// Adam state per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub main: AdamState,
    pub correction: AdamState,
    pub camera: AdamState,
}

impl Optimizers {
    pub fn new(field: &Field, cameras: &Cameras) -> Self {
        Self {
            main: AdamState::new(&field.main_parameters()),
            correction: AdamState::new(&field.correction_parameters()),
            camera: AdamState::new(&cameras.parameters()),
        }
    }
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub iteration: u64,
    pub epoch: u64,
    pub image: usize,
    pub loss_main: f64,
    pub loss_corrected: f64,
    pub lr_net: f64,
    pub lr_cam: f64,
}

impl LossReport {
    pub fn combined(&self) -> f64 {
        self.loss_main + self.loss_corrected
    }

    pub const CSV_HEADER: &'static str = "iteration,epoch,loss_main,loss_corrected,lr_net,lr_cam";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:e},{:e}",
            self.iteration, self.epoch, self.loss_main, self.loss_corrected, self.lr_net, self.lr_cam
        )
    }
}

/// Learning rates of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRates {
    pub net: f64,
    pub cam: f64,
}

fn state_dump(field: &Field, cameras: &Cameras, batch: &RayBatch, loss: &LossTerms) -> String {
    let max_param = field
        .named_parameters()
        .iter()
        .map(|(n, v)| (n.clone(), v.data().max_abs()))
        .fold((String::new(), 0.0f64), |acc, x| if x.1 >= acc.1 { x } else { acc });
    format!(
        "image {} main {} corrected {}; camera r {:?} t {:?} focal {:?}; largest |param| {} = {}",
        batch.image,
        loss.main,
        loss.corrected,
        cameras.rotations.data().row_slice(batch.image),
        cameras.translations.data().row_slice(batch.image),
        cameras.focal(batch.image),
        max_param.0,
        max_param.1
    )
}

/// Forward, backward and one Adam update of every parameter group.
///
/// A non-finite loss aborts before any parameter changes.
pub fn train_step(
    field: &Field,
    cameras: &Cameras,
    optimizers: &mut Optimizers,
    batch: &RayBatch,
    detach_mode: DetachMode,
    rates: StepRates,
    iteration: u64,
) -> Result<(f64, f64)> {
    let fwd = batch_forward(field, cameras, batch, detach_mode)?;
    if !fwd.loss.total.item().is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration,
            state: state_dump(field, cameras, batch, &fwd.loss),
        });
    }
    backward(&fwd.loss.total)?;
    drop(fwd.render);
    adam_step(&field.main_parameters(), &mut optimizers.main, rates.net)?;
    let cc = field.correction_parameters();
    if !cc.is_empty() {
        adam_step(&cc, &mut optimizers.correction, rates.net)?;
    }
    adam_step(&cameras.parameters(), &mut optimizers.camera, rates.cam)?;
    Ok((fwd.loss.main, fwd.loss.corrected))
}

/// Full training state: model, cameras, optimizers and the random stream.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub field: Field,
    pub cameras: Cameras,
    pub optimizers: Optimizers,
    pub rng: ChaCha8Rng,
    /// Completed iterations.
    pub iteration: u64,
    /// Image order of the current epoch.
    pub epoch_order: Vec<usize>,
    images: Vec<Image>,
}

impl Trainer {
    /// Fresh model with cameras at the origin, for the scene's training images.
    pub fn new(scene: &Scene, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let images = scene.train_images();
        if images.is_empty() {
            return Err(Error::InvalidArgument("scene has no training images".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let field = Field::new(config.field.clone(), &mut rng)?;
        let cameras = Cameras::at_origin(
            images.len(),
            scene.width(),
            scene.height(),
            config.per_camera_focal,
        );
        let optimizers = Optimizers::new(&field, &cameras);
        Ok(Self {
            config,
            field,
            cameras,
            optimizers,
            rng,
            iteration: 0,
            epoch_order: Vec::new(),
            images,
        })
    }

    /// Reassembles a trainer from saved parts.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        scene: &Scene,
        config: TrainConfig,
        field: Field,
        cameras: Cameras,
        optimizers: Optimizers,
        rng: ChaCha8Rng,
        iteration: u64,
        epoch_order: Vec<usize>,
    ) -> Result<Self> {
        config.validate()?;
        let images = scene.train_images();
        if cameras.len() != images.len()
            || (cameras.width(), cameras.height()) != (scene.width(), scene.height())
        {
            return Err(Error::InvalidArgument(format!(
                "{} cameras of {}×{} for {} training images of {}×{}",
                cameras.len(),
                cameras.width(),
                cameras.height(),
                images.len(),
                scene.width(),
                scene.height()
            )));
        }
        Ok(Self {
            config,
            field,
            cameras,
            optimizers,
            rng,
            iteration,
            epoch_order,
            images,
        })
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    /// `epochs × training images`.
    pub fn total_iterations(&self) -> u64 {
        self.config.epochs as u64 * self.images.len() as u64
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.total_iterations()
    }

    pub fn rates(&self, iteration: u64) -> StepRates {
        let total = self.total_iterations();
        let c = &self.config;
        StepRates {
            net: lr_schedule(iteration, total, c.lr_init, c.lr_final_net),
            cam: lr_schedule(iteration, total, c.lr_init, c.lr_final_cam),
        }
    }

    /// Draws the next batch: a new shuffled image order at each epoch start,
    /// then the next image of the order.
    pub fn next_batch(&mut self) -> Result<RayBatch> {
        let n = self.images.len();
        let pos = (self.iteration % n as u64) as usize;
        if pos == 0 {
            self.epoch_order = (0..n).collect();
            self.epoch_order.shuffle(&mut self.rng);
        }
        let c = &self.config;
        make_batch(
            &self.images,
            self.epoch_order[pos],
            c.batch_rows,
            c.batch_cols,
            c.samples_per_ray,
            &mut self.rng,
        )
    }

    pub fn step(&mut self) -> Result<LossReport> {
        let iteration = self.iteration;
        let rates = self.rates(iteration);
        let batch = self.next_batch()?;
        let (loss_main, loss_corrected) = train_step(
            &self.field,
            &self.cameras,
            &mut self.optimizers,
            &batch,
            self.config.detach_mode,
            rates,
            iteration,
        )?;
        self.iteration += 1;
        Ok(LossReport {
            iteration,
            epoch: iteration / self.images.len() as u64,
            image: batch.image,
            loss_main,
            loss_corrected,
            lr_net: rates.net,
            lr_cam: rates.cam,
        })
    }

    /// Runs to completion. With an output directory, appends to
    /// `history.csv` and writes `checkpoint.hcc` every `checkpoint_every`
    /// iterations and at the end.
    pub fn run(&mut self, out: Option<&Path>) -> Result<Vec<LossReport>> {
        let mut history = match out {
            Some(dir) => Some(HistoryWriter::open(dir, self.iteration)?),
            None => None,
        };
        let total = self.total_iterations();
        let log_every = (total / 20).max(1);
        let mut reports = Vec::with_capacity((total - self.iteration.min(total)) as usize);
        while !self.is_finished() {
            let report = self.step()?;
            if let Some(h) = history.as_mut() {
                h.push(&report);
            }
            if report.iteration % log_every == 0 || self.is_finished() {
                log::info!(
                    "iter {}/{} epoch {} loss {:.5} (main {:.5}, corrected {:.5})",
                    report.iteration + 1,
                    total,
                    report.epoch,
                    report.combined(),
                    report.loss_main,
                    report.loss_corrected
                );
            }
            reports.push(report);
            let every = self.config.checkpoint_every;
            let due = every > 0 && self.iteration % every == 0;
            if let (Some(dir), Some(h)) = (out, history.as_mut()) {
                if due || self.is_finished() {
                    h.flush()?;
                    crate::checkpoint::save(&dir.join(CHECKPOINT_FILE), self)?;
                }
            }
        }
        if let Some(h) = history.as_mut() {
            h.flush()?;
        }
        Ok(reports)
    }
}

pub const CHECKPOINT_FILE: &str = "checkpoint.hcc";
pub const HISTORY_FILE: &str = "history.csv";

/// Buffered `history.csv`, truncated to the rows before the resume point.
struct HistoryWriter {
    path: PathBuf,
    pending: String,
}

impl HistoryWriter {
    fn open(dir: &Path, start: u64) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(HISTORY_FILE);
        let mut kept = format!("{}\n", LossReport::CSV_HEADER);
        if start > 0 {
            if let Ok(text) = fs::read_to_string(&path) {
                for line in text.lines().skip(1) {
                    let it = line.split(',').next().and_then(|v| v.parse::<u64>().ok());
                    if it.is_some_and(|it| it < start) {
                        kept.push_str(line);
                        kept.push('\n');
                    }
                }
            }
        }
        fs::write(&path, kept).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            pending: String::new(),
        })
    }

    fn push(&mut self, r: &LossReport) {
        self.pending.push_str(&r.csv_row());
        self.pending.push('\n');
    }

    fn flush(&mut self) -> Result<()> {
        if self.pending.is_empty() {
            return Ok(());
        }
        fs::OpenOptions::new()
            .append(true)
            .open(&self.path)
            .and_then(|mut f| f.write_all(self.pending.as_bytes()))
            .map_err(|e| Error::io(&self.path, e))?;
        self.pending.clear();
        Ok(())
    }
}
