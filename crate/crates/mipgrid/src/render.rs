//! Camera rays, stratified sampling and emission-absorption compositing.
//!
//! Cameras follow the OpenGL-style convention of the transforms JSON: x
//! right, y up, camera looks along -z. Per-ray RNG seeds derive from
//! (global seed, image id, pixel id, draw index) so multi-worker execution is
//! bit-reproducible.

use crate::error::{Error, Result};
use crate::field::{FeatScratch, FieldEval};
use crate::scalecoord::{discrete_scale, ScaleCoordinate, ScaleKind};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Pinhole camera with a rigid camera-to-world transform.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub focal_x: f64,
    pub focal_y: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major camera-to-world.
    pub c2w: [[f64; 4]; 4],
    pub near: f64,
    pub far: f64,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_x > 0.0) || !(self.focal_y > 0.0) {
            return Err(Error::InvalidArg("camera focal lengths must be positive".into()));
        }
        if !(self.near < self.far) || !(self.near > 0.0) {
            return Err(Error::InvalidArg(format!(
                "need 0 < near < far, got near {} far {}",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArg("camera must have nonzero size".into()));
        }
        // Rotation block orthonormal within 1e-4.
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..3).map(|k| self.c2w[k][a] * self.c2w[k][b]).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-4 {
                    return Err(Error::InvalidArg(
                        "camera rotation block is not orthonormal".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Footprint coordinate of this camera's pixels at unit depth.
    pub fn discrete_scale(&self) -> Result<f64> {
        discrete_scale(self.focal_x, self.focal_y)
    }

    /// Camera for the same view rendered at `new_width` x `new_height`:
    /// focal and principal point scale with the size ratio.
    pub fn scaled(&self, new_width: usize, new_height: usize) -> CameraModel {
        let rx = new_width as f64 / self.width as f64;
        let ry = new_height as f64 / self.height as f64;
        CameraModel {
            focal_x: self.focal_x * rx,
            focal_y: self.focal_y * ry,
            cx: self.cx * rx,
            cy: self.cy * ry,
            width: new_width,
            height: new_height,
            c2w: self.c2w,
            near: self.near,
            far: self.far,
        }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.c2w[0][3], self.c2w[1][3], self.c2w[2][3]]
    }

    fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.c2w;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    /// World-space ray through image-plane position (u, v) in pixel units.
    pub fn ray_through(&self, u: f64, v: f64) -> Ray {
        let x = (u - self.cx) / self.focal_x;
        let y = (v - self.cy) / self.focal_y;
        // Image rows grow downward while camera y points up.
        let dir_cam = [x, -y, -1.0];
        let dir = normalize(self.rotate(dir_cam));
        Ray {
            origin: self.position(),
            dir,
        }
    }

    /// World-space ray through the center of pixel (px, py).
    pub fn pixel_ray(&self, px: usize, py: usize) -> Ray {
        self.ray_through(px as f64 + 0.5, py as f64 + 0.5)
    }
}

pub fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
}

impl Ray {
    pub fn at(&self, t: f64) -> [f64; 3] {
        [
            self.origin[0] + t * self.dir[0],
            self.origin[1] + t * self.dir[1],
            self.origin[2] + t * self.dir[2],
        ]
    }
}

/// A batch of rays with scale metadata, ground truth and loss weights.
#[derive(Debug, Clone, Default)]
pub struct RayBatch {
    pub origins: Vec<[f64; 3]>,
    pub dirs: Vec<[f64; 3]>,
    /// Discrete scale coordinate of the source image.
    pub s_disc: Vec<f64>,
    pub gt_rgb: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    /// Seed material for per-ray stratified sampling.
    pub image_ids: Vec<u64>,
    pub pixel_ids: Vec<u64>,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.dirs.len() != n
            || self.s_disc.len() != n
            || self.gt_rgb.len() != n
            || self.weights.len() != n
            || self.image_ids.len() != n
            || self.pixel_ids.len() != n
        {
            return Err(Error::Shape("ray batch column lengths differ".into()));
        }
        for d in &self.dirs {
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArg("ray directions must be unit-norm".into()));
            }
        }
        if self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidArg("ray weights must be positive".into()));
        }
        Ok(())
    }

    pub fn push(&mut self, ray: Ray, s_disc: f64, gt: [f64; 3], weight: f64, image_id: u64, pixel_id: u64) {
        self.origins.push(ray.origin);
        self.dirs.push(ray.dir);
        self.s_disc.push(s_disc);
        self.gt_rgb.push(gt);
        self.weights.push(weight);
        self.image_ids.push(image_id);
        self.pixel_ids.push(pixel_id);
    }
}

/// Rays through the centers of the given pixels, each carrying the camera's
/// discrete scale coordinate. Ground truth and weights default to zero/one.
pub fn generate_rays(camera: &CameraModel, pixels: &[(usize, usize)]) -> Result<RayBatch> {
    camera.validate()?;
    let s_disc = camera.discrete_scale()?;
    let mut batch = RayBatch::default();
    for &(px, py) in pixels {
        if px >= camera.width || py >= camera.height {
            return Err(Error::InvalidArg(format!(
                "pixel ({px}, {py}) outside {}x{} image",
                camera.width, camera.height
            )));
        }
        let ray = camera.pixel_ray(px, py);
        batch.push(ray, s_disc, [0.0; 3], 1.0, 0, (py * camera.width + px) as u64);
    }
    Ok(batch)
}

/// Sample positions and segment lengths along a ray.
#[derive(Debug, Clone)]
pub struct RaySamples {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
}

fn deltas_from_t(t: &[f64], far: f64) -> Vec<f64> {
    let n = t.len();
    let mut delta = vec![0.0; n];
    for i in 0..n - 1 {
        delta[i] = t[i + 1] - t[i];
    }
    delta[n - 1] = far - t[n - 1];
    delta
}

/// One uniform draw per equal sub-interval of [near, far]; deltas are the
/// inter-sample spacing, with the last delta reaching `far`.
pub fn stratified_samples(near: f64, far: f64, n: usize, rng: &mut impl Rng) -> RaySamples {
    debug_assert!(n >= 2);
    let bin = (far - near) / n as f64;
    let t: Vec<f64> = (0..n)
        .map(|i| near + bin * (i as f64 + rng.gen::<f64>()))
        .collect();
    let delta = deltas_from_t(&t, far);
    RaySamples { t, delta }
}

/// Degenerate stratification: every draw at the bin midpoint.
pub fn midpoint_samples(near: f64, far: f64, n: usize) -> RaySamples {
    debug_assert!(n >= 2);
    let bin = (far - near) / n as f64;
    let t: Vec<f64> = (0..n).map(|i| near + bin * (i as f64 + 0.5)).collect();
    let delta = deltas_from_t(&t, far);
    RaySamples { t, delta }
}

/// Deterministic per-ray sampling stream derived from
/// (global seed, image id, pixel id, draw index).
pub fn ray_rng(global_seed: u64, image_id: u64, pixel_id: u64, draw: u64) -> ChaCha8Rng {
    let mut state = splitmix64(global_seed ^ 0x9e37_79b9_7f4a_7c15);
    state = splitmix64(state ^ image_id.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    state = splitmix64(state ^ pixel_id.wrapping_mul(0x94d0_49bb_1331_11eb));
    state = splitmix64(state ^ draw);
    let mut seed = [0u8; 32];
    let mut s = state;
    for chunk in seed.chunks_exact_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Emission-absorption compositing output.
#[derive(Debug, Clone)]
pub struct CompositeOut {
    pub rgb: [f64; 3],
    pub opacity: f64,
    pub weights: Vec<f64>,
}

/// `alpha_i = 1 - exp(-sigma_i delta_i)`, `T_i = prod_{j<i} (1 - alpha_j)`,
/// `w_i = T_i alpha_i`, `rgb = sum w_i c_i + (1 - sum w_i) background`.
pub fn composite(sigma: &[f64], rgb: &[[f64; 3]], delta: &[f64], background: [f64; 3]) -> CompositeOut {
    let n = sigma.len();
    debug_assert_eq!(rgb.len(), n);
    debug_assert_eq!(delta.len(), n);
    let mut weights = vec![0.0; n];
    let mut transmittance = 1.0;
    let mut out = [0.0f64; 3];
    let mut opacity = 0.0;
    for i in 0..n {
        let alpha = 1.0 - (-sigma[i] * delta[i]).exp();
        let w = transmittance * alpha;
        weights[i] = w;
        opacity += w;
        for c in 0..3 {
            out[c] += w * rgb[i][c];
        }
        transmittance *= 1.0 - alpha;
    }
    for c in 0..3 {
        out[c] += (1.0 - opacity) * background[c];
    }
    CompositeOut {
        rgb: out,
        opacity,
        weights,
    }
}

/// Reverse-mode pass for `composite`: given d(loss)/d(rgb_out), produce
/// d(loss)/d(sigma_i) and d(loss)/d(c_i).
///
/// Uses the suffix-accumulation identity: with
/// `L = sum_i T_i alpha_i <c_i - bg, g>` (g = d_rgb), the derivative w.r.t.
/// `alpha_i` is `T_i <c_i - bg, g> - sum_{j>i} w_j <c_j - bg, g> / (1-alpha_i)`.
pub fn composite_backward(
    sigma: &[f64],
    rgb: &[[f64; 3]],
    delta: &[f64],
    background: [f64; 3],
    d_rgb_out: [f64; 3],
    d_sigma: &mut [f64],
    d_rgb: &mut [[f64; 3]],
) {
    let n = sigma.len();
    // Forward quantities.
    let mut alpha = vec![0.0; n];
    let mut trans = vec![0.0; n]; // T_i before sample i
    let mut t_cur = 1.0;
    for i in 0..n {
        alpha[i] = 1.0 - (-sigma[i] * delta[i]).exp();
        trans[i] = t_cur;
        t_cur *= 1.0 - alpha[i];
    }
    // Per-sample contribution of color-minus-background along d_rgb_out.
    let dot = |c: &[f64; 3]| -> f64 {
        (0..3)
            .map(|k| (c[k] - background[k]) * d_rgb_out[k])
            .sum::<f64>()
    };
    // Suffix sum of w_j * dot_j for j > i.
    let mut suffix = 0.0;
    let mut suffixes = vec![0.0; n];
    for i in (0..n).rev() {
        suffixes[i] = suffix;
        suffix += trans[i] * alpha[i] * dot(&rgb[i]);
    }
    for i in 0..n {
        let w = trans[i] * alpha[i];
        for k in 0..3 {
            d_rgb[i][k] = w * d_rgb_out[k];
        }
        // d alpha_i: own term plus attenuation of every later sample.
        let one_minus = (1.0 - alpha[i]).max(1e-300);
        let d_alpha = trans[i] * dot(&rgb[i]) - suffixes[i] / one_minus;
        // alpha = 1 - exp(-sigma delta) => d alpha / d sigma = delta * exp(..).
        d_sigma[i] = d_alpha * delta[i] * (1.0 - alpha[i]);
    }
}

/// Linear-float RGB image in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl ImageF {
    pub fn new(width: usize, height: usize) -> Self {
        ImageF {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    /// Display conversion is clamp-only; the data is display-referred.
    pub fn to_rgba8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() * 4);
        for p in &self.pixels {
            for c in p {
                out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            out.push(255);
        }
        out
    }
}

/// Everything `render_view` needs besides the prepared field.
#[derive(Debug, Clone)]
pub struct RenderOpts {
    pub n_samples: usize,
    pub background: [f64; 3],
    pub seed: u64,
    pub image_id: u64,
    /// Replaces the camera-derived discrete scale when set (explicit scale
    /// value from the CLI).
    pub scale_override: Option<f64>,
}

/// The scale coordinate a sample at distance `t` sees, per coordinate kind.
pub fn sample_coord(kind: ScaleKind, s_disc: f64, t: f64) -> Result<ScaleCoordinate> {
    match kind {
        ScaleKind::Discrete => ScaleCoordinate::discrete(s_disc),
        ScaleKind::Continuous => ScaleCoordinate::continuous(s_disc * t),
        ScaleKind::TwoD => ScaleCoordinate::two_d(s_disc * t, t),
    }
}

/// Render one sample's (sigma, rgb) pair.
#[allow(clippy::too_many_arguments)]
fn shade_sample(
    eval: &FieldEval,
    bound: f64,
    pos: [f64; 3],
    dir: [f64; 3],
    kind: ScaleKind,
    s_disc: f64,
    t: f64,
    scratch: &mut FeatScratch,
) -> Result<(f64, [f64; 3])> {
    let coord = sample_coord(kind, s_disc, t)?;
    let p = [pos[0] / bound, pos[1] / bound, pos[2] / bound];
    let sigma = eval.density(p, &coord, scratch)?;
    let rgb = eval.color(p, dir, &coord, scratch)?;
    Ok((sigma, rgb))
}

/// Render a full image with per-ray deterministic stratified sampling.
/// Rows are processed in parallel; the result is identical for any worker
/// count because every pixel derives its own RNG stream.
pub fn render_view(
    eval: &FieldEval,
    camera: &CameraModel,
    bound: f64,
    opts: &RenderOpts,
) -> Result<ImageF> {
    camera.validate()?;
    let s_disc = match opts.scale_override {
        Some(v) => {
            if !(v > 0.0) {
                return Err(Error::InvalidArg(format!("scale value must be positive, got {v}")));
            }
            v
        }
        None => camera.discrete_scale()?,
    };
    let kind = eval.field.kind;
    let n = opts.n_samples;
    let width = camera.width;
    let rows: Result<Vec<Vec<[f64; 3]>>> = (0..camera.height)
        .into_par_iter()
        .map(|py| {
            let mut scratch = FeatScratch::default();
            let mut sigma = vec![0.0; n];
            let mut rgb = vec![[0.0; 3]; n];
            let mut row = Vec::with_capacity(width);
            for px in 0..width {
                let ray = camera.pixel_ray(px, py);
                let pixel_id = (py * width + px) as u64;
                let mut rng = ray_rng(opts.seed, opts.image_id, pixel_id, 0);
                let samples = stratified_samples(camera.near, camera.far, n, &mut rng);
                for (i, &t) in samples.t.iter().enumerate() {
                    let (s, c) = shade_sample(
                        eval,
                        bound,
                        ray.at(t),
                        ray.dir,
                        kind,
                        s_disc,
                        t,
                        &mut scratch,
                    )?;
                    sigma[i] = s;
                    rgb[i] = c;
                }
                let out = composite(&sigma, &rgb, &samples.delta, opts.background);
                row.push(out.rgb);
            }
            Ok(row)
        })
        .collect();
    let rows = rows?;
    let mut img = ImageF::new(camera.width, camera.height);
    for (py, row) in rows.into_iter().enumerate() {
        for (px, rgb) in row.into_iter().enumerate() {
            img.set(px, py, rgb);
        }
    }
    Ok(img)
}
