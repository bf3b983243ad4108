//! Datasets: Blender-format ingestion, multi-scale construction by
//! power-of-two box averaging with focal rescale, and the procedural
//! checkerboard-sphere scene with analytic ground truth.

use crate::error::{Error, Result};
use crate::render::{CameraModel, ImageF, Ray};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};

/// One posed image.
#[derive(Debug, Clone)]
pub struct View {
    pub camera: CameraModel,
    pub image: ImageF,
}

/// All views of one downsample factor.
#[derive(Debug, Clone)]
pub struct ScaleLevel {
    pub factor: u32,
    pub views: Vec<View>,
}

#[derive(Debug, Clone)]
pub struct MultiScaleDataset {
    pub train: Vec<ScaleLevel>,
    pub test: Vec<ScaleLevel>,
}

impl MultiScaleDataset {
    pub fn validate(&self) -> Result<()> {
        for split in [&self.train, &self.test] {
            if split.is_empty() {
                continue;
            }
            let count = split[0].views.len();
            for level in split.iter() {
                if level.views.len() != count {
                    return Err(Error::Data(
                        "per-scale image counts differ across levels".into(),
                    ));
                }
                for v in &level.views {
                    if v.camera.width != v.image.width || v.camera.height != v.image.height {
                        return Err(Error::Data("camera size does not match image".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Base (factor 1) training camera, the anchor reference.
    pub fn base_train_camera(&self) -> Result<&CameraModel> {
        self.train
            .first()
            .and_then(|level| level.views.first())
            .map(|v| &v.camera)
            .ok_or_else(|| Error::Data("dataset has no training views".into()))
    }
}

// ---------------------------------------------------------------------------
// Blender transforms JSON
// ---------------------------------------------------------------------------

fn parse_matrix(frame: &Value) -> Result<[[f64; 4]; 4]> {
    let rows = frame
        .get("transform_matrix")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Data("frame missing transform_matrix".into()))?;
    if rows.len() != 4 {
        return Err(Error::Data("transform_matrix must have 4 rows".into()));
    }
    let mut m = [[0.0; 4]; 4];
    for (i, row) in rows.iter().enumerate() {
        let cols = row
            .as_array()
            .ok_or_else(|| Error::Data("transform_matrix row is not an array".into()))?;
        if cols.len() != 4 {
            return Err(Error::Data("transform_matrix row must have 4 entries".into()));
        }
        for (j, v) in cols.iter().enumerate() {
            m[i][j] = v
                .as_f64()
                .ok_or_else(|| Error::Data("transform_matrix entry is not a number".into()))?;
        }
    }
    Ok(m)
}

fn load_png_rgba(path: &Path, background: [f64; 3]) -> Result<ImageF> {
    let dynimg = image::open(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let rgba = match dynimg {
        image::DynamicImage::ImageRgba8(img) => img,
        image::DynamicImage::ImageRgb8(img) => {
            // 8-bit RGB is accepted as alpha = 1.
            let mut out = image::RgbaImage::new(img.width(), img.height());
            for (x, y, p) in img.enumerate_pixels() {
                out.put_pixel(x, y, image::Rgba([p[0], p[1], p[2], 255]));
            }
            out
        }
        _ => {
            return Err(Error::Data(format!(
                "{} is not an 8-bit RGBA image",
                path.display()
            )))
        }
    };
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let mut img = ImageF::new(w, h);
    for (x, y, p) in rgba.enumerate_pixels() {
        let a = p[3] as f64 / 255.0;
        let mut rgb = [0.0; 3];
        for c in 0..3 {
            // Straight-alpha composite onto the configured background.
            rgb[c] = (p[c] as f64 / 255.0) * a + background[c] * (1.0 - a);
        }
        img.set(x as usize, y as usize, rgb);
    }
    Ok(img)
}

/// Load one split of a Blender-layout scene directory.
///
/// `camera_angle_x` gives `focal = 0.5 * width / tan(0.5 * angle)`; frames
/// carry row-major camera-to-world matrices with OpenGL axes (x right, y up,
/// camera looking down -z).
pub fn load_blender_split(
    dir: &Path,
    split: &str,
    background: [f64; 3],
    near: f64,
    far: f64,
) -> Result<Vec<View>> {
    let tf_path = dir.join(format!("transforms_{split}.json"));
    if !tf_path.exists() {
        return Err(Error::Data(format!("missing {}", tf_path.display())));
    }
    let text = fs::read_to_string(&tf_path)?;
    let root: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("malformed JSON in {}: {e}", tf_path.display())))?;
    let angle_x = root
        .get("camera_angle_x")
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::Data(format!("{} missing camera_angle_x", tf_path.display())))?;
    let frames = root
        .get("frames")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Data(format!("{} missing frames", tf_path.display())))?;
    let mut views = Vec::with_capacity(frames.len());
    for frame in frames {
        let file_path = frame
            .get("file_path")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Data("frame missing file_path".into()))?;
        let mut png: PathBuf = dir.join(file_path);
        if png.extension().is_none() {
            png.set_extension("png");
        }
        let image = load_png_rgba(&png, background)?;
        let c2w = parse_matrix(frame)?;
        let focal = 0.5 * image.width as f64 / (0.5 * angle_x).tan();
        let camera = CameraModel {
            focal_x: focal,
            focal_y: focal,
            cx: image.width as f64 / 2.0,
            cy: image.height as f64 / 2.0,
            width: image.width,
            height: image.height,
            c2w,
            near,
            far,
        };
        camera.validate()?;
        views.push(View { camera, image });
    }
    Ok(views)
}

/// Load both splits at the base scale.
pub fn load_blender(
    dir: &Path,
    background: [f64; 3],
    near: f64,
    far: f64,
) -> Result<(Vec<View>, Vec<View>)> {
    let train = load_blender_split(dir, "train", background, near, far)?;
    let test = load_blender_split(dir, "test", background, near, far)?;
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// Multi-scale construction
// ---------------------------------------------------------------------------

/// One 2x2 box-average step.
fn downsample_half(img: &ImageF) -> ImageF {
    let (w, h) = (img.width / 2, img.height / 2);
    let mut out = ImageF::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for dy in 0..2 {
                for dx in 0..2 {
                    let p = img.get(2 * x + dx, 2 * y + dy);
                    for c in 0..3 {
                        acc[c] += p[c];
                    }
                }
            }
            out.set(x, y, [acc[0] * 0.25, acc[1] * 0.25, acc[2] * 0.25]);
        }
    }
    out
}

/// Downsample by a power-of-two factor, defined as repeated 2x2 averaging so
/// that `down(2) . down(2)` is bit-identical to `down(4)`.
pub fn downsample_image(img: &ImageF, factor: u32) -> Result<ImageF> {
    if !factor.is_power_of_two() {
        return Err(Error::InvalidArg(format!(
            "downsample factor must be a power of two, got {factor}"
        )));
    }
    if img.width % factor as usize != 0 || img.height % factor as usize != 0 {
        return Err(Error::InvalidArg(format!(
            "image {}x{} not divisible by factor {factor}",
            img.width, img.height
        )));
    }
    let mut cur = img.clone();
    let mut f = factor;
    while f > 1 {
        cur = downsample_half(&cur);
        f /= 2;
    }
    Ok(cur)
}

/// Build the per-factor levels of one split: images box-averaged, focal and
/// principal point divided by the factor.
pub fn make_multiscale(base: &[View], factors: &[u32]) -> Result<Vec<ScaleLevel>> {
    if factors.is_empty() || factors[0] != 1 {
        return Err(Error::InvalidArg("factor list must start at 1".into()));
    }
    if !factors.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidArg("factors must be strictly ascending".into()));
    }
    let max = *factors.last().unwrap() as usize;
    let mut levels = Vec::with_capacity(factors.len());
    for &f in factors {
        let mut views = Vec::with_capacity(base.len());
        for v in base {
            if v.image.width % max != 0 || v.image.height % max != 0 {
                return Err(Error::InvalidArg(format!(
                    "base image {}x{} not divisible by max factor {max}",
                    v.image.width, v.image.height
                )));
            }
            let image = if f == 1 {
                v.image.clone()
            } else {
                downsample_image(&v.image, f)?
            };
            let camera = v
                .camera
                .scaled(v.camera.width / f as usize, v.camera.height / f as usize);
            views.push(View { camera, image });
        }
        levels.push(ScaleLevel { factor: f, views });
    }
    Ok(levels)
}

// ---------------------------------------------------------------------------
// Procedural scene
// ---------------------------------------------------------------------------

/// Checkerboard-textured sphere at the origin with orbiting cameras.
/// Everything is closed-form; ground truth comes from supersampled analytic
/// intersection, deterministic for a given seed.
#[derive(Debug, Clone)]
pub struct ProceduralScene {
    pub sphere_radius: f64,
    pub checker_freq: u32,
    pub color_a: [f64; 3],
    pub color_b: [f64; 3],
    pub background: [f64; 3],
    pub orbit_radius: f64,
    pub camera_angle_x: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for ProceduralScene {
    fn default() -> Self {
        ProceduralScene {
            sphere_radius: 0.6,
            checker_freq: 4,
            color_a: [0.95, 0.9, 0.85],
            color_b: [0.05, 0.1, 0.15],
            background: [0.0, 0.0, 0.0],
            orbit_radius: 2.7,
            camera_angle_x: 0.8,
            width: 64,
            height: 64,
            near: 1.5,
            far: 4.2,
            n_train: 8,
            n_test: 4,
            seed: 0,
        }
    }
}

impl ProceduralScene {
    /// Analytic radiance along a ray: nearest sphere intersection's checker
    /// color, else the background.
    pub fn trace(&self, ray: &Ray) -> [f64; 3] {
        let o = ray.origin;
        let d = ray.dir;
        let b = o[0] * d[0] + o[1] * d[1] + o[2] * d[2];
        let c = o[0] * o[0] + o[1] * o[1] + o[2] * o[2] - self.sphere_radius * self.sphere_radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return self.background;
        }
        let t = -b - disc.sqrt();
        if t <= 0.0 {
            return self.background;
        }
        let p = ray.at(t);
        self.texture(p)
    }

    /// Checker lookup in spherical coordinates; cells are sized so theta and
    /// phi cells subtend comparable angles.
    pub fn texture(&self, p: [f64; 3]) -> [f64; 3] {
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let theta = (p[2] / r).clamp(-1.0, 1.0).acos(); // [0, pi]
        let phi = p[1].atan2(p[0]); // (-pi, pi]
        let u = theta / std::f64::consts::PI * self.checker_freq as f64;
        let v = (phi + std::f64::consts::PI) / std::f64::consts::PI * self.checker_freq as f64;
        let cell = (u.floor() as i64 + v.floor() as i64).rem_euclid(2);
        if cell == 0 {
            self.color_a
        } else {
            self.color_b
        }
    }

    fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.camera_angle_x).tan()
    }

    /// Camera on the orbit sphere looking at the origin, world up = +z.
    pub fn orbit_camera(&self, azimuth: f64, elevation: f64) -> CameraModel {
        let pos = [
            self.orbit_radius * azimuth.cos() * elevation.cos(),
            self.orbit_radius * azimuth.sin() * elevation.cos(),
            self.orbit_radius * elevation.sin(),
        ];
        // Backward = away from target; right = up_world x backward.
        let bl = (pos[0] * pos[0] + pos[1] * pos[1] + pos[2] * pos[2]).sqrt();
        let back = [pos[0] / bl, pos[1] / bl, pos[2] / bl];
        let upw = [0.0, 0.0, 1.0];
        let right = {
            let r = [
                upw[1] * back[2] - upw[2] * back[1],
                upw[2] * back[0] - upw[0] * back[2],
                upw[0] * back[1] - upw[1] * back[0],
            ];
            let n = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            [r[0] / n, r[1] / n, r[2] / n]
        };
        let up = [
            back[1] * right[2] - back[2] * right[1],
            back[2] * right[0] - back[0] * right[2],
            back[0] * right[1] - back[1] * right[0],
        ];
        let c2w = [
            [right[0], up[0], back[0], pos[0]],
            [right[1], up[1], back[1], pos[1]],
            [right[2], up[2], back[2], pos[2]],
            [0.0, 0.0, 0.0, 1.0],
        ];
        CameraModel {
            focal_x: self.focal(),
            focal_y: self.focal(),
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
            width: self.width,
            height: self.height,
            c2w,
            near: self.near,
            far: self.far,
        }
    }

    /// Deterministic camera sets for both splits.
    pub fn cameras(&self) -> (Vec<CameraModel>, Vec<CameraModel>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let tau = 2.0 * std::f64::consts::PI;
        let mut train = Vec::with_capacity(self.n_train);
        for i in 0..self.n_train {
            let az = tau * (i as f64 + rng.gen_range(-0.15..0.15)) / self.n_train as f64;
            let el = (0.18 + 0.35 * ((i % 3) as f64 / 2.0)) + rng.gen_range(-0.02..0.02);
            train.push(self.orbit_camera(az, el));
        }
        let mut test = Vec::with_capacity(self.n_test);
        for i in 0..self.n_test {
            let az = tau * (i as f64 + 0.5 + rng.gen_range(-0.15..0.15)) / self.n_test as f64;
            let el = 0.3 + rng.gen_range(-0.05..0.05);
            test.push(self.orbit_camera(az, el));
        }
        (train, test)
    }
}

/// Supersample factor per axis for analytic references.
const SUPERSAMPLE: usize = 8;

/// The anti-aliased reference image: every pixel averages an 8x8 grid of
/// analytic sub-pixel rays (64 per pixel, integer lattice, no RNG).
pub fn render_procedural(scene: &ProceduralScene, camera: &CameraModel) -> ImageF {
    let mut img = ImageF::new(camera.width, camera.height);
    for py in 0..camera.height {
        for px in 0..camera.width {
            let mut acc = [0.0; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let u = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                    let v = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                    let ray = camera.ray_through(u, v);
                    let c = scene.trace(&ray);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            let inv = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
            img.set(px, py, [acc[0] * inv, acc[1] * inv, acc[2] * inv]);
        }
    }
    img
}

// ---------------------------------------------------------------------------
// On-disk layout
// ---------------------------------------------------------------------------

fn write_split(dir: &Path, split: &str, angle_x: f64, views: &[View]) -> Result<()> {
    let img_dir = dir.join(split);
    fs::create_dir_all(&img_dir)?;
    let mut frames = Vec::with_capacity(views.len());
    for (i, v) in views.iter().enumerate() {
        let name = format!("r_{i}");
        let rows: Vec<Vec<f64>> = v.camera.c2w.iter().map(|r| r.to_vec()).collect();
        frames.push(json!({
            "file_path": format!("./{split}/{name}"),
            "transform_matrix": rows,
        }));
        let bytes = v.image.to_rgba8();
        let img = image::RgbaImage::from_raw(v.image.width as u32, v.image.height as u32, bytes)
            .expect("buffer size matches");
        img.save(img_dir.join(format!("{name}.png")))
            .map_err(|e| Error::Data(format!("cannot write png: {e}")))?;
    }
    let root = json!({ "camera_angle_x": angle_x, "frames": frames });
    fs::write(
        dir.join(format!("transforms_{split}.json")),
        serde_json::to_string_pretty(&root).expect("serializable"),
    )?;
    Ok(())
}

/// Write a complete multi-scale dataset: one Blender-layout tree per factor
/// under `factor_<f>/`. The camera angle is size-invariant, so every tree
/// carries the same `camera_angle_x` and the halved image sizes encode the
/// focal rescale exactly.
pub fn write_multiscale_dataset(
    dir: &Path,
    angle_x: f64,
    train: &[ScaleLevel],
    test: &[ScaleLevel],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (split, levels) in [("train", train), ("test", test)] {
        for level in levels {
            let tree = dir.join(format!("factor_{}", level.factor));
            fs::create_dir_all(&tree)?;
            write_split(&tree, split, angle_x, &level.views)?;
        }
    }
    Ok(())
}

/// Generate the procedural scene's multi-scale dataset in memory: analytic
/// base renders, then the standard box-average pyramid.
pub fn build_procedural_dataset(
    scene: &ProceduralScene,
    factors: &[u32],
) -> Result<MultiScaleDataset> {
    let (train_cams, test_cams) = scene.cameras();
    let mk = |cams: &[CameraModel]| -> Vec<View> {
        cams.iter()
            .map(|cam| View {
                camera: cam.clone(),
                image: render_procedural(scene, cam),
            })
            .collect()
    };
    let train = make_multiscale(&mk(&train_cams), factors)?;
    let test = make_multiscale(&mk(&test_cams), factors)?;
    let ds = MultiScaleDataset { train, test };
    ds.validate()?;
    Ok(ds)
}

/// Load a dataset directory: either per-factor trees written by `gen-data`
/// (`factor_1/`, `factor_2/`, ...) or a plain Blender scene that gets
/// multiscaled in memory.
pub fn load_dataset(
    dir: &Path,
    factors: &[u32],
    background: [f64; 3],
    near: f64,
    far: f64,
) -> Result<MultiScaleDataset> {
    let ds = if dir.join("factor_1").exists() {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for &f in factors {
            let tree = dir.join(format!("factor_{f}"));
            let (tr, te) = load_blender(&tree, background, near, far)?;
            train.push(ScaleLevel {
                factor: f,
                views: tr,
            });
            test.push(ScaleLevel {
                factor: f,
                views: te,
            });
        }
        MultiScaleDataset { train, test }
    } else {
        let (tr, te) = load_blender(dir, background, near, far)?;
        MultiScaleDataset {
            train: make_multiscale(&tr, factors)?,
            test: make_multiscale(&te, factors)?,
        }
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::normalize;
    use crate::scalecoord::discrete_scale;

    #[test]
    fn blender_focal_from_angle() {
        // camera_angle_x = 0.6911, width 800 -> focal ~ 1111.11.
        let focal = 0.5 * 800.0 / (0.5f64 * 0.6911).tan();
        assert!((focal - 1111.11).abs() < 0.5);
    }

    #[test]
    fn missing_transforms_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_blender_split(dir.path(), "test", [1.0; 3], 2.0, 6.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("transforms_test.json"), "{msg}");
    }

    #[test]
    fn downsample_checkerboard_and_constants() {
        let mut img = ImageF::new(2, 2);
        img.set(0, 0, [0.0; 3]);
        img.set(1, 0, [1.0; 3]);
        img.set(0, 1, [1.0; 3]);
        img.set(1, 1, [0.0; 3]);
        let half = downsample_image(&img, 2).unwrap();
        assert_eq!(half.get(0, 0), [0.5; 3]);

        let mut flat = ImageF::new(8, 8);
        flat.pixels.iter_mut().for_each(|p| *p = [0.37, 0.11, 0.93]);
        for f in [1, 2, 4, 8] {
            let d = downsample_image(&flat, f).unwrap();
            assert!(d.pixels.iter().all(|p| {
                (p[0] - 0.37).abs() < 1e-12
                    && (p[1] - 0.11).abs() < 1e-12
                    && (p[2] - 0.93).abs() < 1e-12
            }));
        }
    }

    #[test]
    fn downsample_factor_one_is_copy() {
        let mut img = ImageF::new(4, 4);
        img.set(1, 2, [0.3, 0.6, 0.9]);
        let same = downsample_image(&img, 1).unwrap();
        assert_eq!(img, same);
    }

    #[test]
    fn downsample_composition_is_exact() {
        let scene = ProceduralScene::default();
        let cam = scene.orbit_camera(0.7, 0.3);
        let img = render_procedural(&scene, &cam);
        let via_two = downsample_image(&downsample_image(&img, 2).unwrap(), 2).unwrap();
        let direct = downsample_image(&img, 4).unwrap();
        assert_eq!(via_two, direct);
    }

    #[test]
    fn downsample_rejects_indivisible() {
        let img = ImageF::new(6, 6);
        assert!(downsample_image(&img, 4).is_err());
        assert!(downsample_image(&img, 3).is_err());
    }

    #[test]
    fn multiscale_cameras_rescale_exactly() {
        let scene = ProceduralScene {
            width: 32,
            height: 32,
            n_train: 2,
            n_test: 1,
            ..Default::default()
        };
        let ds = build_procedural_dataset(&scene, &[1, 2, 4, 8]).unwrap();
        let base = &ds.train[0].views[0].camera;
        for level in &ds.train {
            for v in &level.views {
                let f = level.factor as f64;
                assert_eq!(v.camera.width, base.width / level.factor as usize);
                assert_eq!(v.camera.focal_x, base.focal_x / f);
                // Footprint homogeneity ties the dataset to the scale map.
                let s_base = discrete_scale(base.focal_x, base.focal_y).unwrap();
                let s_f = discrete_scale(v.camera.focal_x, v.camera.focal_y).unwrap();
                assert!((s_f - f * s_base).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn procedural_far_camera_sees_background() {
        let scene = ProceduralScene {
            background: [0.2, 0.4, 0.6],
            ..Default::default()
        };
        let cam = scene.orbit_camera(1.1, 0.4);
        // A ray pointing away from the sphere.
        let ray = Ray {
            origin: cam.position(),
            dir: normalize(cam.position()),
        };
        assert_eq!(scene.trace(&ray), scene.background);
    }

    #[test]
    fn procedural_center_ray_hits_by_quadratic() {
        let scene = ProceduralScene::default();
        // From +x toward the origin: hit at x = radius.
        let ray = Ray {
            origin: [2.7, 0.0, 0.0],
            dir: [-1.0, 0.0, 0.0],
        };
        let hit_t = 2.7 - scene.sphere_radius;
        let p = ray.at(hit_t);
        let expect = scene.texture(p);
        assert_eq!(scene.trace(&ray), expect);
        // Hand quadratic: b = o.d, c = |o|^2 - r^2, t = -b - sqrt(b^2 - c).
        let b = -2.7;
        let c = 2.7f64 * 2.7 - scene.sphere_radius * scene.sphere_radius;
        let t = -b - (b * b - c).sqrt();
        assert!((t - hit_t).abs() < 1e-12);
    }

    #[test]
    fn procedural_reference_consistent_across_scales() {
        // Supersampled factor-2 reference vs box-downsampled factor-1
        // reference: PSNR > 40 dB.
        let scene = ProceduralScene::default();
        let cam = scene.orbit_camera(0.3, 0.25);
        let full = render_procedural(&scene, &cam);
        let half_cam = cam.scaled(cam.width / 2, cam.height / 2);
        let half_direct = render_procedural(&scene, &half_cam);
        let half_down = downsample_image(&full, 2).unwrap();
        let mut mse = 0.0;
        for (a, b) in half_direct.pixels.iter().zip(half_down.pixels.iter()) {
            for c in 0..3 {
                mse += (a[c] - b[c]).powi(2);
            }
        }
        mse /= (half_direct.pixels.len() * 3) as f64;
        let psnr = -10.0 * mse.log10();
        assert!(psnr > 40.0, "psnr {psnr}");
    }

    #[test]
    fn procedural_dataset_deterministic() {
        let scene = ProceduralScene {
            width: 16,
            height: 16,
            n_train: 2,
            n_test: 1,
            ..Default::default()
        };
        let a = build_procedural_dataset(&scene, &[1, 2]).unwrap();
        let b = build_procedural_dataset(&scene, &[1, 2]).unwrap();
        for (la, lb) in a.train.iter().zip(b.train.iter()) {
            for (va, vb) in la.views.iter().zip(lb.views.iter()) {
                assert_eq!(va.image, vb.image);
            }
        }
    }

    #[test]
    fn constant_texture_gives_constant_images() {
        let color = [0.42, 0.42, 0.42];
        let scene = ProceduralScene {
            color_a: color,
            color_b: color,
            background: color,
            width: 16,
            height: 16,
            ..Default::default()
        };
        let cam = scene.orbit_camera(0.9, 0.2);
        let img = render_procedural(&scene, &cam);
        assert!(img
            .pixels
            .iter()
            .all(|p| (0..3).all(|c| (p[c] - color[c]).abs() < 1e-12)));
    }

    #[test]
    fn write_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scene = ProceduralScene {
            width: 16,
            height: 16,
            n_train: 2,
            n_test: 1,
            ..Default::default()
        };
        let ds = build_procedural_dataset(&scene, &[1, 2]).unwrap();
        write_multiscale_dataset(dir.path(), scene.camera_angle_x, &ds.train, &ds.test).unwrap();
        assert!(dir.path().join("factor_1/transforms_train.json").exists());
        assert!(dir.path().join("factor_2/train/r_0.png").exists());
        let loaded =
            load_dataset(dir.path(), &[1, 2], scene.background, scene.near, scene.far).unwrap();
        assert_eq!(loaded.train.len(), 2);
        assert_eq!(loaded.train[0].views.len(), 2);
        // 8-bit quantization is the only loss.
        let orig = &ds.train[0].views[0].image;
        let back = &loaded.train[0].views[0].image;
        for (a, b) in orig.pixels.iter().zip(back.pixels.iter()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 0.5 / 255.0 + 1e-9);
            }
        }
        let ca = &ds.train[0].views[0].camera;
        let cb = &loaded.train[0].views[0].camera;
        assert!((ca.focal_x - cb.focal_x).abs() < 1e-9);
    }

    #[test]
    fn identity_pose_looks_down_minus_z() {
        let dir = tempfile::tempdir().unwrap();
        let scene_dir = dir.path();
        fs::create_dir_all(scene_dir.join("train")).unwrap();
        let img = image::RgbaImage::from_pixel(4, 4, image::Rgba([255, 0, 0, 255]));
        img.save(scene_dir.join("train/r_0.png")).unwrap();
        let root = json!({
            "camera_angle_x": 0.8,
            "frames": [{
                "file_path": "./train/r_0",
                "transform_matrix": [
                    [1.0, 0.0, 0.0, 0.0],
                    [0.0, 1.0, 0.0, 0.0],
                    [0.0, 0.0, 1.0, 0.0],
                    [0.0, 0.0, 0.0, 1.0],
                ],
            }],
        });
        fs::write(scene_dir.join("transforms_train.json"), root.to_string()).unwrap();
        let views = load_blender_split(scene_dir, "train", [0.0; 3], 0.5, 2.0).unwrap();
        let cam = &views[0].camera;
        assert_eq!(cam.position(), [0.0, 0.0, 0.0]);
        let ray = cam.ray_through(2.0, 2.0); // image center
        assert!((ray.dir[0]).abs() < 1e-12);
        assert!((ray.dir[1]).abs() < 1e-12);
        assert!((ray.dir[2] + 1.0).abs() < 1e-12);
    }
}
