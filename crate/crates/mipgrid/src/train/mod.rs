//! End-to-end optimization: ray pools with per-scale loss multipliers,
//! fused forward/backward batches, Adam updates, grid-upsampling and
//! kernel-unfreezing schedules, and the finite-difference gradient harness.

pub mod adam;
pub mod backward;
pub mod gradcheck;
pub mod grads;

pub use adam::{Adam, LrSet};
pub use backward::{batch_loss, process_batch, BatchOpts, BatchStats};
pub use gradcheck::{gradient_check, BlockReport, GradientReport};
pub use grads::{block_list, field_block, field_block_mut, BlockId, Gradients};

use crate::cli::metrics::psnr_from_mse;
use crate::data::{MultiScaleDataset, ScaleLevel};
use crate::error::{Error, Result};
use crate::factor_grids::{FactorGridVM, GridFamily, PlaneGrid};
use crate::field::{BankSet, DecoderMlp, FieldEval, Grid, RadianceField, DIR_ENC_LEN};
use crate::mipgen::init_gaussian;
use crate::render::{render_view, RayBatch, RenderOpts};
use crate::scalecoord::{default_anchors, ScaleIndexMap, ScaleKind};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// Full training-run configuration (model + schedule + render defaults).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_rays: usize,
    pub lr_grid: f64,
    pub lr_kernel: f64,
    pub lr_decoder: f64,
    /// Exponential decay: lr(t) = lr0 * ratio^(t / iterations); 1.0 = none.
    pub lr_decay_ratio: f64,
    /// (iteration, cube resolution) events, ascending.
    pub upsample_schedule: Vec<(usize, usize)>,
    pub kernel_start_iteration: usize,
    /// Per-factor loss multipliers; `None` = squared factor.
    pub loss_scale_weights: Option<Vec<f64>>,
    pub seed: u64,
    pub eval_every: usize,
    pub eval_views: usize,
    // Model.
    pub family: GridFamily,
    pub rank_density: usize,
    pub rank_appearance: usize,
    pub channels: usize,
    pub hidden: usize,
    pub resolution: usize,
    /// Number of generated scales; 1 = single-scale baseline (no banks).
    pub scales: usize,
    pub kernel_size: usize,
    pub kernel_stdevs: Vec<f64>,
    pub kernels_trainable: bool,
    pub kind: ScaleKind,
    pub anchors_override: Option<Vec<f64>>,
    pub bound: f64,
    // Render.
    pub n_samples: usize,
    /// Scale the per-ray sample count down proportionally at reduced
    /// render resolutions. Off by default: a fixed count keeps
    /// anti-aliasing gains attributable to the model, not the sampler.
    pub scale_samples: bool,
    pub background: [f64; 3],
    pub near: f64,
    pub far: f64,
    pub factors: Vec<u32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 3000,
            batch_rays: 512,
            lr_grid: 0.02,
            lr_kernel: 0.001,
            lr_decoder: 0.001,
            lr_decay_ratio: 0.1,
            upsample_schedule: vec![(1000, 64)],
            kernel_start_iteration: 1500,
            loss_scale_weights: None,
            seed: 0,
            eval_every: 0,
            eval_views: 2,
            family: GridFamily::Vm,
            rank_density: 4,
            rank_appearance: 4,
            channels: 6,
            hidden: 64,
            resolution: 32,
            scales: 4,
            kernel_size: 3,
            kernel_stdevs: vec![1.0, 1.5, 2.5, 4.0],
            kernels_trainable: true,
            kind: ScaleKind::Discrete,
            anchors_override: None,
            bound: 1.0,
            n_samples: 128,
            scale_samples: false,
            background: [1.0; 3],
            near: 2.0,
            far: 6.0,
            factors: vec![1, 2, 4, 8],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_rays == 0 {
            return Err(Error::Config("train.batch_rays must be positive".into()));
        }
        for (name, lr) in [
            ("train.lr_grid", self.lr_grid),
            ("train.lr_kernel", self.lr_kernel),
            ("train.lr_decoder", self.lr_decoder),
        ] {
            if !(lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr_decay_ratio > 0.0 && self.lr_decay_ratio <= 1.0) {
            return Err(Error::Config("train.lr_decay_ratio must be in (0, 1]".into()));
        }
        if !self.upsample_schedule.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err(Error::Config(
                "train.upsample_schedule iterations must be ascending".into(),
            ));
        }
        if let Some((last_iter, _)) = self.upsample_schedule.last() {
            if self.scales > 1 && self.kernel_start_iteration < *last_iter {
                return Err(Error::Config(format!(
                    "train.kernel_start_iteration ({}) must be >= the last upsample iteration ({})",
                    self.kernel_start_iteration, last_iter
                )));
            }
        }
        if self.scales > 1 && self.kernel_stdevs.len() != self.scales {
            return Err(Error::Config(format!(
                "model.kernel_stdevs needs {} values, got {}",
                self.scales,
                self.kernel_stdevs.len()
            )));
        }
        if self.scales > 1 && self.kernel_size % 2 == 0 {
            return Err(Error::Config("model.kernel_size must be odd".into()));
        }
        if self.n_samples < 2 {
            return Err(Error::Config("render.n_samples must be >= 2".into()));
        }
        if self.factors.len() < 2 || self.factors[0] != 1 {
            return Err(Error::Config(
                "data.factors must start at 1 with >= 2 entries".into(),
            ));
        }
        if let Some(w) = &self.loss_scale_weights {
            if w.len() != self.factors.len() {
                return Err(Error::Config(
                    "train.loss_scale_weights must match data.factors".into(),
                ));
            }
        }
        Ok(())
    }

    /// Reference distance used to anchor the continuous coordinate.
    pub fn t_ref(&self) -> f64 {
        0.5 * (self.near + self.far)
    }

    /// Primary index map. Anchors default to the training-scale footprints;
    /// when the model's S differs from the factor count they span the same
    /// range geometrically.
    pub fn primary_map(&self, base_s_disc: f64) -> Result<ScaleIndexMap> {
        if let Some(a) = &self.anchors_override {
            return ScaleIndexMap::new(a.clone());
        }
        let base = match self.kind {
            ScaleKind::Discrete => base_s_disc,
            ScaleKind::Continuous | ScaleKind::TwoD => base_s_disc * self.t_ref(),
        };
        let s = self.scales.max(2);
        if s == self.factors.len() {
            default_anchors(
                base,
                &self.factors.iter().map(|f| *f as f64).collect::<Vec<_>>(),
            )
        } else {
            let max_f = *self.factors.last().unwrap() as f64;
            let anchors = (0..s)
                .map(|i| base * max_f.powf(i as f64 / (s - 1) as f64))
                .collect();
            ScaleIndexMap::new(anchors)
        }
    }

    /// Distance-channel anchors for the 2-D kind: uniform quantiles of the
    /// sample-distance range.
    pub fn secondary_map(&self) -> Result<Option<ScaleIndexMap>> {
        if self.kind != ScaleKind::TwoD {
            return Ok(None);
        }
        let s = self.scales.max(2);
        let anchors = (0..s)
            .map(|i| self.near + (self.far - self.near) * (i as f64 + 0.5) / s as f64)
            .collect();
        Ok(Some(ScaleIndexMap::new(anchors)?))
    }
}

fn init_grid(
    family: GridFamily,
    resolution: usize,
    rank: usize,
    channels: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Grid> {
    let res = [resolution; 3];
    Ok(match family {
        GridFamily::Vm => {
            let mut g = FactorGridVM::zeros(res, rank, channels)?;
            for t in 0..3 {
                g.vectors[t]
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-0.1..0.1));
                g.matrices[t]
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-0.1..0.1));
            }
            Grid::Vm(g)
        }
        GridFamily::Planes => {
            // Multiplicative planes start near 1 so rank products carry
            // usable signal.
            let mut g = PlaneGrid::zeros(res, rank, channels)?;
            for p in 0..3 {
                g.planes[p]
                    .iter_mut()
                    .for_each(|v| *v = 1.0 + rng.gen_range(-0.1..0.1));
            }
            Grid::Planes(g)
        }
    })
}

/// Build the initial field for a config. Draw order is fixed (density grid,
/// appearance grid, banks, basis, decoder) so fields are reproducible.
pub fn init_field(cfg: &TrainConfig, base_s_disc: f64) -> Result<RadianceField> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let density_grid = init_grid(cfg.family, cfg.resolution, cfg.rank_density, 1, &mut rng)?;
    let appearance_grid = init_grid(
        cfg.family,
        cfg.resolution,
        cfg.rank_appearance,
        cfg.channels,
        &mut rng,
    )?;
    let mk_banks = |rank: usize| -> Result<Option<BankSet>> {
        if cfg.scales < 2 {
            return Ok(None);
        }
        let mut primary = init_gaussian(
            cfg.family,
            cfg.scales,
            cfg.kernel_size,
            rank,
            &cfg.kernel_stdevs,
        )?;
        primary.trainable = cfg.kernels_trainable;
        let secondary = if cfg.kind == ScaleKind::TwoD {
            Some(primary.clone())
        } else {
            None
        };
        Ok(Some(BankSet { primary, secondary }))
    };
    let density_banks = mk_banks(cfg.rank_density)?;
    let appearance_banks = mk_banks(cfg.rank_appearance)?;
    let feat_a = appearance_grid.feature_len();
    let lim = (3.0 / feat_a as f64).sqrt();
    let basis: Vec<f64> = (0..cfg.channels * feat_a)
        .map(|_| rng.gen_range(-lim..lim))
        .collect();
    let decoder = DecoderMlp::init(cfg.channels + DIR_ENC_LEN, cfg.hidden, &mut rng);
    let field = RadianceField {
        density_grid,
        appearance_grid,
        density_banks,
        appearance_banks,
        basis,
        channels: cfg.channels,
        decoder,
        density_shift: -10.0,
        kind: cfg.kind,
        primary_map: cfg.primary_map(base_s_disc)?,
        secondary_map: cfg.secondary_map()?,
        param_version: 0,
    };
    field.validate()?;
    Ok(field)
}

// ---------------------------------------------------------------------------
// Ray pool
// ---------------------------------------------------------------------------

/// All training rays, flattened across scales, views and pixels, with the
/// normalized per-scale loss multipliers baked in.
pub struct RayPool {
    batch: RayBatch,
}

impl RayPool {
    pub fn build(levels: &[ScaleLevel], cfg: &TrainConfig) -> Result<RayPool> {
        let weights: Vec<f64> = match &cfg.loss_scale_weights {
            Some(w) => w.clone(),
            None => cfg.factors.iter().map(|f| (*f as f64).powi(2)).collect(),
        };
        // Normalize so the mean weight over the pool is 1.
        let mut total_w = 0.0;
        let mut total_n = 0usize;
        for (level, w) in levels.iter().zip(weights.iter()) {
            let n: usize = level.views.iter().map(|v| v.image.pixels.len()).sum();
            total_w += w * n as f64;
            total_n += n;
        }
        if total_n == 0 {
            return Err(Error::Data("ray pool is empty".into()));
        }
        let norm = total_n as f64 / total_w;

        let mut batch = RayBatch::default();
        let mut image_id = 0u64;
        for (level, w) in levels.iter().zip(weights.iter()) {
            let weight = w * norm;
            for view in &level.views {
                let s_disc = view.camera.discrete_scale()?;
                for py in 0..view.camera.height {
                    for px in 0..view.camera.width {
                        let ray = view.camera.pixel_ray(px, py);
                        let pixel_id = (py * view.camera.width + px) as u64;
                        batch.push(ray, s_disc, view.image.get(px, py), weight, image_id, pixel_id);
                    }
                }
                image_id += 1;
            }
        }
        batch.validate()?;
        Ok(RayPool { batch })
    }

    pub fn len(&self) -> usize {
        self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch.is_empty()
    }

    /// Total loss weight contributed by each scale level (balance check).
    pub fn weight_totals(&self, levels: &[ScaleLevel]) -> Vec<f64> {
        let mut totals = Vec::new();
        let mut offset = 0usize;
        for level in levels {
            let n: usize = level.views.iter().map(|v| v.image.pixels.len()).sum();
            let sum: f64 = self.batch.weights[offset..offset + n].iter().sum();
            totals.push(sum);
            offset += n;
        }
        totals
    }

    /// Sample `n` rays with replacement.
    pub fn draw(&self, rng: &mut ChaCha8Rng, n: usize) -> RayBatch {
        let mut out = RayBatch::default();
        for _ in 0..n {
            let i = rng.gen_range(0..self.batch.len());
            out.push(
                crate::render::Ray {
                    origin: self.batch.origins[i],
                    dir: self.batch.dirs[i],
                },
                self.batch.s_disc[i],
                self.batch.gt_rgb[i],
                self.batch.weights[i],
                self.batch.image_ids[i],
                self.batch.pixel_ids[i],
            );
        }
        out
    }
}

// ---------------------------------------------------------------------------
// The spec-level loss and backward surfaces
// ---------------------------------------------------------------------------

/// Mean over rays of `weight * |rgb_pred - rgb_gt|^2`.
pub fn loss(field: &RadianceField, batch: &RayBatch, opts: &BatchOpts) -> Result<f64> {
    let eval = field.prepare()?;
    batch_loss(field, &eval, batch, opts)
}

/// Gradients of `loss` for every trainable block.
pub fn backward(
    field: &RadianceField,
    batch: &RayBatch,
    opts: &BatchOpts,
    kernels_active: bool,
) -> Result<(Gradients, BatchStats)> {
    let eval = field.prepare()?;
    process_batch(field, &eval, batch, opts, kernels_active)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub iteration: usize,
    pub loss: f64,
    pub train_psnr: f64,
    /// Per-factor test PSNR; empty when this iteration did not evaluate.
    pub eval_psnr: Vec<f64>,
    pub seconds: f64,
}

pub fn metrics_csv(factors: &[u32], rows: &[MetricsRow]) -> String {
    let mut out = String::from("iteration,loss,train_psnr");
    for f in factors {
        out.push_str(&format!(",psnr_f{f}"));
    }
    out.push_str(",seconds\n");
    for row in rows {
        out.push_str(&format!(
            "{},{:.8},{:.4}",
            row.iteration, row.loss, row.train_psnr
        ));
        if row.eval_psnr.is_empty() {
            for _ in factors {
                out.push(',');
            }
        } else {
            for p in &row.eval_psnr {
                out.push_str(&format!(",{p:.4}"));
            }
        }
        out.push_str(&format!(",{:.3}\n", row.seconds));
    }
    out
}

pub struct TrainOutput {
    pub field: RadianceField,
    pub metrics: Vec<MetricsRow>,
    /// ChaCha8 train-stream state: 32-byte seed + 16-byte LE word position.
    pub rng_state: Vec<u8>,
}

fn rng_state_bytes(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut out = Vec::with_capacity(48);
    out.extend_from_slice(&rng.get_seed());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    out
}

/// Mean test PSNR per scale level, rendering up to `max_views` views each.
pub fn eval_psnr_per_scale(
    eval: &FieldEval,
    levels: &[ScaleLevel],
    cfg: &TrainConfig,
    max_views: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(levels.len());
    for level in levels {
        let take = level.views.len().min(max_views.max(1));
        let mut acc = 0.0;
        for (i, view) in level.views.iter().take(take).enumerate() {
            let opts = RenderOpts {
                n_samples: cfg.n_samples,
                background: cfg.background,
                seed: cfg.seed,
                image_id: i as u64,
                scale_override: None,
            };
            let img = render_view(eval, &view.camera, cfg.bound, &opts)?;
            let mse = crate::cli::metrics::mse(&img, &view.image)?;
            acc += psnr_from_mse(mse);
        }
        out.push(acc / take as f64);
    }
    Ok(out)
}

/// Run the schedule: grid-only training, upsampling events, kernel unfreeze,
/// periodic eval. `periodic` fires at eval points (checkpoint hook).
pub fn run(
    cfg: &TrainConfig,
    dataset: &MultiScaleDataset,
    mut periodic: Option<&mut dyn FnMut(&RadianceField, usize, &[MetricsRow]) -> Result<()>>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    dataset.validate()?;
    let base_cam = dataset.base_train_camera()?;
    let base_s_disc = base_cam.discrete_scale()?;
    let mut field = init_field(cfg, base_s_disc)?;
    let pool = RayPool::build(&dataset.train, cfg)?;
    let mut train_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x517c_c1b7_2722_0a95);
    let mut adam = Adam::new(&field);
    let mut metrics = Vec::new();
    let started = Instant::now();
    let blocks = block_list(&field);

    for iteration in 0..cfg.iterations {
        for (at, res) in &cfg.upsample_schedule {
            if *at == iteration {
                field.density_grid = field.density_grid.upsample([*res; 3])?;
                field.appearance_grid = field.appearance_grid.upsample([*res; 3])?;
                field.param_version += 1;
                // Moment shapes changed; restart the optimizer state.
                adam = Adam::new(&field);
            }
        }
        let kernels_active =
            cfg.scales > 1 && cfg.kernels_trainable && iteration >= cfg.kernel_start_iteration;

        let batch = pool.draw(&mut train_rng, cfg.batch_rays);
        let opts = BatchOpts {
            n_samples: cfg.n_samples,
            near: cfg.near,
            far: cfg.far,
            background: cfg.background,
            bound: cfg.bound,
            seed: cfg.seed,
            iteration: iteration as u64,
            n_chunks: rayon::current_num_threads(),
        };
        let (grads, stats) = {
            let eval_grids = field.prepare()?;
            process_batch(&field, &eval_grids, &batch, &opts, kernels_active)?
        };
        if let Err(block) = grads.check_finite(&blocks) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in block {block} at iteration {iteration}"
            )));
        }
        let decay = cfg
            .lr_decay_ratio
            .powf(iteration as f64 / cfg.iterations.max(1) as f64);
        let lrs = LrSet {
            grid: cfg.lr_grid * decay,
            kernel: cfg.lr_kernel * decay,
            decoder: cfg.lr_decoder * decay,
        };
        adam.step(&mut field, &grads, &lrs);

        let do_eval = cfg.eval_every > 0
            && ((iteration + 1) % cfg.eval_every == 0 || iteration + 1 == cfg.iterations);
        let eval_psnr = if do_eval {
            let eval_grids = field.prepare()?;
            eval_psnr_per_scale(&eval_grids, &dataset.test, cfg, cfg.eval_views)?
        } else {
            Vec::new()
        };
        metrics.push(MetricsRow {
            iteration,
            loss: stats.loss,
            train_psnr: psnr_from_mse(stats.mse),
            eval_psnr,
            seconds: started.elapsed().as_secs_f64(),
        });
        if do_eval {
            if let Some(hook) = periodic.as_deref_mut() {
                hook(&field, iteration, &metrics)?;
            }
        }
    }
    Ok(TrainOutput {
        field,
        metrics,
        rng_state: rng_state_bytes(&train_rng),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_procedural_dataset, ProceduralScene};
    use crate::render::Ray;

    fn tiny_scene() -> ProceduralScene {
        ProceduralScene {
            width: 16,
            height: 16,
            n_train: 2,
            n_test: 1,
            ..Default::default()
        }
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            iterations: 4,
            batch_rays: 16,
            resolution: 8,
            rank_density: 2,
            rank_appearance: 2,
            channels: 3,
            hidden: 8,
            scales: 2,
            kernel_stdevs: vec![1.0, 2.0],
            upsample_schedule: vec![],
            kernel_start_iteration: 0,
            n_samples: 8,
            near: 1.5,
            far: 4.2,
            background: [0.0; 3],
            eval_every: 0,
            ..Default::default()
        }
    }

    fn tiny_opts(seed: u64) -> BatchOpts {
        BatchOpts {
            n_samples: 8,
            near: 1.5,
            far: 4.2,
            background: [0.0; 3],
            bound: 1.0,
            seed,
            iteration: 0,
            n_chunks: 1,
        }
    }

    #[test]
    fn config_invariants_enforced() {
        let mut cfg = tiny_config();
        cfg.upsample_schedule = vec![(10, 16)];
        cfg.kernel_start_iteration = 5;
        assert!(cfg.validate().is_err());
        cfg.kernel_start_iteration = 10;
        assert!(cfg.validate().is_ok());
        cfg.lr_grid = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn loss_examples() {
        // Against a field whose render is the pure background: perfect
        // predictions -> 0; residual (0.1, 0, 0) with weight 1 -> 0.01;
        // weight 4 scales by 4.
        let cfg = tiny_config();
        let mut field = init_field(&cfg, 0.005).unwrap();
        field.density_grid = field.density_grid.zeros_like();
        let mut opts = tiny_opts(0);
        opts.background = [0.4, 0.4, 0.4];
        let ray = Ray {
            origin: [2.0, 0.0, 0.0],
            dir: [-1.0, 0.0, 0.0],
        };
        let mut batch = RayBatch::default();
        batch.push(ray, 0.005, [0.3, 0.4, 0.4], 1.0, 0, 0);
        let l = loss(&field, &batch, &opts).unwrap();
        assert!((l - 0.01).abs() < 1e-4, "{l}");

        let mut perfect = RayBatch::default();
        perfect.push(ray, 0.005, [0.4, 0.4, 0.4], 1.0, 0, 0);
        let l0 = loss(&field, &perfect, &opts).unwrap();
        assert!(l0 < 1e-6, "{l0}");

        let mut weighted = RayBatch::default();
        weighted.push(ray, 0.005, [0.3, 0.4, 0.4], 4.0, 0, 0);
        let l4 = loss(&field, &weighted, &opts).unwrap();
        assert!((l4 - 4.0 * l).abs() < 1e-6);
    }

    #[test]
    fn zero_residual_gives_zero_gradients() {
        let cfg = tiny_config();
        let field = init_field(&cfg, 0.005).unwrap();
        let opts = tiny_opts(3);
        let ray = Ray {
            origin: [2.5, 0.1, 0.2],
            dir: crate::render::normalize([-1.0, -0.04, -0.08]),
        };
        // Recover the prediction channel-wise from the loss polynomial:
        // loss(gt) = |pred - gt|^2, so loss(e_c) - loss(0) = 1 - 2 pred_c.
        let eval = field.prepare().unwrap();
        let mut probe = RayBatch::default();
        probe.push(ray, 0.005, [0.0; 3], 1.0, 0, 7);
        let l0 = batch_loss(&field, &eval, &probe, &opts).unwrap();
        let mut pred = [0.0; 3];
        for c in 0..3 {
            let mut gt = [0.0; 3];
            gt[c] = 1.0;
            let mut probe_c = RayBatch::default();
            probe_c.push(ray, 0.005, gt, 1.0, 0, 7);
            let l1 = batch_loss(&field, &eval, &probe_c, &opts).unwrap();
            pred[c] = (1.0 - (l1 - l0)) / 2.0;
        }
        let mut exact = RayBatch::default();
        exact.push(ray, 0.005, pred, 1.0, 0, 7);
        let (grads, stats) = process_batch(&field, &eval, &exact, &opts, true).unwrap();
        assert!(stats.loss < 1e-20);
        for (name, id) in &block_list(&field) {
            assert!(
                grads.block(*id).iter().all(|&g| g.abs() < 1e-12),
                "block {name} expected zero"
            );
        }
    }

    #[test]
    fn frozen_kernels_have_zero_gradients() {
        let cfg = tiny_config();
        let field = init_field(&cfg, 0.005).unwrap();
        let opts = tiny_opts(4);
        let mut batch = RayBatch::default();
        batch.push(
            Ray {
                origin: [2.5, 0.0, 0.0],
                dir: [-1.0, 0.0, 0.0],
            },
            0.005,
            [0.9, 0.1, 0.2],
            1.0,
            0,
            0,
        );
        let (grads, _) = backward(&field, &batch, &opts, false).unwrap();
        let banks = grads.density_banks.as_ref().unwrap();
        assert!(banks.primary.k1d.iter().all(|&g| g == 0.0));
        assert!(banks.primary.k2d.iter().all(|&g| g == 0.0));
        // Grids still receive gradient.
        match &grads.density {
            Grid::Vm(g) => assert!(g.vectors[0].iter().any(|&v| v != 0.0)),
            _ => unreachable!(),
        }
        // Unfrozen: kernel taps receive gradient.
        let (grads, _) = backward(&field, &batch, &opts, true).unwrap();
        let banks = grads.density_banks.as_ref().unwrap();
        assert!(banks.primary.k2d.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn tiny_gradient_check_smoke() {
        // One cheap configuration; the acceptance suite runs all six
        // family x coordinate-kind combinations at full size.
        let mut cfg = tiny_config();
        cfg.rank_density = 1;
        cfg.rank_appearance = 1;
        cfg.channels = 2;
        cfg.hidden = 4;
        cfg.resolution = 4;
        let mut field = init_field(&cfg, 0.005).unwrap();
        let mut opts = tiny_opts(9);
        opts.n_samples = 4;
        let mut batch = RayBatch::default();
        batch.push(
            Ray {
                origin: [2.4, 0.2, -0.1],
                dir: crate::render::normalize([-1.0, -0.08, 0.04]),
            },
            0.005,
            [0.8, 0.3, 0.1],
            1.0,
            0,
            0,
        );
        let report = gradient_check(&mut field, &batch, &opts, 1e-5, 1e-4).unwrap();
        assert!(report.pass, "worst rel err {}", report.worst());
    }

    #[test]
    fn run_zero_iterations_returns_initialization() {
        let scene = tiny_scene();
        let ds = build_procedural_dataset(&scene, &[1, 2, 4, 8]).unwrap();
        let mut cfg = tiny_config();
        cfg.iterations = 0;
        let out = run(&cfg, &ds, None).unwrap();
        let base_s = ds.base_train_camera().unwrap().discrete_scale().unwrap();
        let init = init_field(&cfg, base_s).unwrap();
        assert_eq!(out.field.basis, init.basis);
        match (&out.field.density_grid, &init.density_grid) {
            (Grid::Vm(a), Grid::Vm(b)) => assert_eq!(a, b),
            _ => unreachable!(),
        }
        assert!(out.metrics.is_empty());
    }

    #[test]
    fn run_is_deterministic() {
        let scene = tiny_scene();
        let ds = build_procedural_dataset(&scene, &[1, 2, 4, 8]).unwrap();
        let cfg = tiny_config();
        let a = run(&cfg, &ds, None).unwrap();
        let b = run(&cfg, &ds, None).unwrap();
        assert_eq!(a.metrics.len(), b.metrics.len());
        for (ra, rb) in a.metrics.iter().zip(b.metrics.iter()) {
            assert_eq!(ra.loss, rb.loss);
            assert_eq!(ra.train_psnr, rb.train_psnr);
        }
        assert_eq!(a.field.basis, b.field.basis);
        assert_eq!(a.field.density_shift, b.field.density_shift);
    }

    #[test]
    fn loss_weight_totals_balanced() {
        let scene = tiny_scene();
        let ds = build_procedural_dataset(&scene, &[1, 2, 4, 8]).unwrap();
        let cfg = tiny_config();
        let pool = RayPool::build(&ds.train, &cfg).unwrap();
        let totals = pool.weight_totals(&ds.train);
        let mean = totals.iter().sum::<f64>() / totals.len() as f64;
        for t in &totals {
            assert!((t - mean).abs() / mean < 0.01, "{totals:?}");
        }
    }

    #[test]
    fn upsample_event_and_freeze_schedule() {
        let scene = tiny_scene();
        let ds = build_procedural_dataset(&scene, &[1, 2, 4, 8]).unwrap();
        let mut cfg = tiny_config();
        cfg.iterations = 3;
        cfg.upsample_schedule = vec![(1, 12)];
        cfg.kernel_start_iteration = 2;
        let out = run(&cfg, &ds, None).unwrap();
        assert_eq!(out.field.density_grid.resolution(), [12, 12, 12]);
        // Kernels unfroze at iteration 2, so they moved off the init.
        let base_s = ds.base_train_camera().unwrap().discrete_scale().unwrap();
        let init = init_field(&cfg, base_s).unwrap();
        let a = &out.field.density_banks.as_ref().unwrap().primary.k2d;
        let b = &init.density_banks.as_ref().unwrap().primary.k2d;
        assert_ne!(a, b);
        // And they were bitwise constant before the unfreeze: re-run with
        // iterations = 2 (events at 1).
        let mut cfg2 = cfg.clone();
        cfg2.iterations = 2;
        let out2 = run(&cfg2, &ds, None).unwrap();
        let frozen = &out2.field.density_banks.as_ref().unwrap().primary.k2d;
        assert_eq!(frozen, b);
    }
}
