//! Flat key=value configuration.
//!
//! Sections are spelled with dotted keys (`train.iterations = 3000`), `#`
//! starts a comment, unknown keys are rejected by name. `to_text` emits the
//! complete canonical key set, which is what checkpoints echo.

use crate::data::ProceduralScene;
use crate::error::{Error, Result};
use crate::factor_grids::GridFamily;
use crate::scalecoord::ScaleKind;
use crate::train::TrainConfig;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

/// Parsed configuration: the training/model config plus CLI-level extras.
#[derive(Debug, Clone)]
pub struct Config {
    pub train: TrainConfig,
    pub data_path: Option<PathBuf>,
    pub scene: ProceduralScene,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            train: TrainConfig::default(),
            data_path: None,
            scene: ProceduralScene::default(),
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Config(format!("key {key}: expected a number, got {v:?}")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Config(format!("key {key}: expected an integer, got {v:?}")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| Error::Config(format!("key {key}: expected an integer, got {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("key {key}: expected a bool, got {v:?}"))),
    }
}

fn parse_f64_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(key, s))
        .collect()
}

fn parse_u32_list(key: &str, v: &str) -> Result<Vec<u32>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("key {key}: expected integers, got {v:?}")))
        })
        .collect()
}

fn parse_rgb(key: &str, v: &str) -> Result<[f64; 3]> {
    match v {
        "white" => return Ok([1.0; 3]),
        "black" => return Ok([0.0; 3]),
        _ => {}
    }
    let parts = parse_f64_list(key, v)?;
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "key {key}: expected white, black or r,g,b — got {v:?}"
        )));
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn parse_schedule(key: &str, v: &str) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (a, b) = item.split_once(':').ok_or_else(|| {
            Error::Config(format!("key {key}: expected iter:resolution items, got {item:?}"))
        })?;
        out.push((parse_usize(key, a.trim())?, parse_usize(key, b.trim())?));
    }
    Ok(out)
}

fn rgb_text(v: [f64; 3]) -> String {
    if v == [1.0; 3] {
        "white".into()
    } else if v == [0.0; 3] {
        "black".into()
    } else {
        format!("{},{},{}", v[0], v[1], v[2])
    }
}

fn list_text(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut kv = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if kv.insert(key.clone(), value).is_some() {
                return Err(Error::Config(format!("duplicate key {key}")));
            }
        }
        let mut cfg = Config::default();
        for (key, value) in &kv {
            cfg.apply(key, value)?;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        let s = &mut self.scene;
        match key {
            "data.path" => self.data_path = Some(PathBuf::from(v)),
            "data.factors" => t.factors = parse_u32_list(key, v)?,
            "model.family" => {
                t.family = match v {
                    "vm" => GridFamily::Vm,
                    "planes" => GridFamily::Planes,
                    _ => {
                        return Err(Error::Config(format!(
                            "key model.family: expected vm or planes, got {v:?}"
                        )))
                    }
                }
            }
            "model.rank_density" => t.rank_density = parse_usize(key, v)?,
            "model.rank_appearance" => t.rank_appearance = parse_usize(key, v)?,
            "model.channels" => t.channels = parse_usize(key, v)?,
            "model.hidden" => t.hidden = parse_usize(key, v)?,
            "model.resolution" => t.resolution = parse_usize(key, v)?,
            "model.scales" => t.scales = parse_usize(key, v)?,
            "model.kernel_size" => t.kernel_size = parse_usize(key, v)?,
            "model.kernel_stdevs" => t.kernel_stdevs = parse_f64_list(key, v)?,
            "model.kernels_trainable" => t.kernels_trainable = parse_bool(key, v)?,
            "model.bound" => t.bound = parse_f64(key, v)?,
            "scale_coord.kind" => t.kind = ScaleKind::parse(v)?,
            "scale_coord.anchors" => {
                let list = parse_f64_list(key, v)?;
                t.anchors_override = if list.is_empty() { None } else { Some(list) };
            }
            "render.background" => t.background = parse_rgb(key, v)?,
            "render.n_samples" => t.n_samples = parse_usize(key, v)?,
            "render.scale_samples" => t.scale_samples = parse_bool(key, v)?,
            "render.near" => t.near = parse_f64(key, v)?,
            "render.far" => t.far = parse_f64(key, v)?,
            "train.iterations" => t.iterations = parse_usize(key, v)?,
            "train.batch_rays" => t.batch_rays = parse_usize(key, v)?,
            "train.lr_grid" => t.lr_grid = parse_f64(key, v)?,
            "train.lr_kernel" => t.lr_kernel = parse_f64(key, v)?,
            "train.lr_decoder" => t.lr_decoder = parse_f64(key, v)?,
            "train.lr_decay_ratio" => t.lr_decay_ratio = parse_f64(key, v)?,
            "train.upsample_schedule" => t.upsample_schedule = parse_schedule(key, v)?,
            "train.kernel_start_iteration" => t.kernel_start_iteration = parse_usize(key, v)?,
            "train.loss_scale_weights" => {
                let list = parse_f64_list(key, v)?;
                t.loss_scale_weights = if list.is_empty() { None } else { Some(list) };
            }
            "train.seed" => t.seed = parse_u64(key, v)?,
            "train.eval_every" => t.eval_every = parse_usize(key, v)?,
            "train.eval_views" => t.eval_views = parse_usize(key, v)?,
            "scene.width" => s.width = parse_usize(key, v)?,
            "scene.height" => s.height = parse_usize(key, v)?,
            "scene.n_train" => s.n_train = parse_usize(key, v)?,
            "scene.n_test" => s.n_test = parse_usize(key, v)?,
            "scene.radius" => s.sphere_radius = parse_f64(key, v)?,
            "scene.orbit_radius" => s.orbit_radius = parse_f64(key, v)?,
            "scene.camera_angle_x" => s.camera_angle_x = parse_f64(key, v)?,
            "scene.checker_freq" => {
                s.checker_freq = parse_usize(key, v)? as u32;
            }
            "scene.color_a" => s.color_a = parse_rgb(key, v)?,
            "scene.color_b" => s.color_b = parse_rgb(key, v)?,
            "scene.background" => s.background = parse_rgb(key, v)?,
            "scene.seed" => s.seed = parse_u64(key, v)?,
            _ => {
                return Err(Error::Config(format!("unknown config key {key:?}")));
            }
        }
        Ok(())
    }

    /// Canonical full-key serialization; checkpoints echo this.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let s = &self.scene;
        let mut out = String::new();
        if let Some(p) = &self.data_path {
            let _ = writeln!(out, "data.path = {}", p.display());
        }
        let _ = writeln!(
            out,
            "data.factors = {}",
            t.factors.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(
            out,
            "model.family = {}",
            match t.family {
                GridFamily::Vm => "vm",
                GridFamily::Planes => "planes",
            }
        );
        let _ = writeln!(out, "model.rank_density = {}", t.rank_density);
        let _ = writeln!(out, "model.rank_appearance = {}", t.rank_appearance);
        let _ = writeln!(out, "model.channels = {}", t.channels);
        let _ = writeln!(out, "model.hidden = {}", t.hidden);
        let _ = writeln!(out, "model.resolution = {}", t.resolution);
        let _ = writeln!(out, "model.scales = {}", t.scales);
        let _ = writeln!(out, "model.kernel_size = {}", t.kernel_size);
        let _ = writeln!(out, "model.kernel_stdevs = {}", list_text(&t.kernel_stdevs));
        let _ = writeln!(out, "model.kernels_trainable = {}", t.kernels_trainable);
        let _ = writeln!(out, "model.bound = {}", t.bound);
        let _ = writeln!(out, "scale_coord.kind = {}", t.kind.as_str());
        if let Some(a) = &t.anchors_override {
            let _ = writeln!(out, "scale_coord.anchors = {}", list_text(a));
        }
        let _ = writeln!(out, "render.background = {}", rgb_text(t.background));
        let _ = writeln!(out, "render.n_samples = {}", t.n_samples);
        let _ = writeln!(out, "render.scale_samples = {}", t.scale_samples);
        let _ = writeln!(out, "render.near = {}", t.near);
        let _ = writeln!(out, "render.far = {}", t.far);
        let _ = writeln!(out, "train.iterations = {}", t.iterations);
        let _ = writeln!(out, "train.batch_rays = {}", t.batch_rays);
        let _ = writeln!(out, "train.lr_grid = {}", t.lr_grid);
        let _ = writeln!(out, "train.lr_kernel = {}", t.lr_kernel);
        let _ = writeln!(out, "train.lr_decoder = {}", t.lr_decoder);
        let _ = writeln!(out, "train.lr_decay_ratio = {}", t.lr_decay_ratio);
        let _ = writeln!(
            out,
            "train.upsample_schedule = {}",
            t.upsample_schedule
                .iter()
                .map(|(i, r)| format!("{i}:{r}"))
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(out, "train.kernel_start_iteration = {}", t.kernel_start_iteration);
        if let Some(w) = &t.loss_scale_weights {
            let _ = writeln!(out, "train.loss_scale_weights = {}", list_text(w));
        }
        let _ = writeln!(out, "train.seed = {}", t.seed);
        let _ = writeln!(out, "train.eval_every = {}", t.eval_every);
        let _ = writeln!(out, "train.eval_views = {}", t.eval_views);
        let _ = writeln!(out, "scene.width = {}", s.width);
        let _ = writeln!(out, "scene.height = {}", s.height);
        let _ = writeln!(out, "scene.n_train = {}", s.n_train);
        let _ = writeln!(out, "scene.n_test = {}", s.n_test);
        let _ = writeln!(out, "scene.radius = {}", s.sphere_radius);
        let _ = writeln!(out, "scene.orbit_radius = {}", s.orbit_radius);
        let _ = writeln!(out, "scene.camera_angle_x = {}", s.camera_angle_x);
        let _ = writeln!(out, "scene.checker_freq = {}", s.checker_freq);
        let _ = writeln!(out, "scene.color_a = {}", rgb_text(s.color_a));
        let _ = writeln!(out, "scene.color_b = {}", rgb_text(s.color_b));
        let _ = writeln!(out, "scene.background = {}", rgb_text(s.background));
        let _ = writeln!(out, "scene.seed = {}", s.seed);
        out
    }
}
