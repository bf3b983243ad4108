//! Kernel and grid visualization: grayscale PNGs plus a plain-text report
//! of per-kernel second moments.

use crate::error::{Error, Result};
use crate::factor_grids::{slice_xy_planes, slice_xy_vm, GridFamily};
use crate::field::{Grid, RadianceField};
use crate::mipgen::{second_moment_1d, second_moment_2d, MipKernelBank};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// One kernel's report row. `moment` is NaN when the kernel sum is too
/// close to zero for the moment to be defined.
#[derive(Debug, Clone)]
pub struct KernelEntry {
    pub grid: &'static str,
    pub bank: &'static str,
    pub scale: usize,
    pub slot: String,
    pub rank: usize,
    pub is_2d: bool,
    pub moment: f64,
    pub min: f64,
    pub max: f64,
}

fn bank_entries(grid: &'static str, tag: &'static str, bank: &MipKernelBank, out: &mut Vec<KernelEntry>) {
    let vm = bank.family == GridFamily::Vm;
    let slots_1d = ["vec_x", "vec_y", "vec_z"];
    let slots_2d = if vm {
        ["mat_yz", "mat_xz", "mat_xy"]
    } else {
        ["plane_yz", "plane_xz", "plane_xy"]
    };
    for scale in 0..bank.scales {
        if vm {
            for (slot, name) in slots_1d.iter().enumerate() {
                for r in 0..bank.rank {
                    let k = bank.k1d_slice(scale, slot, r);
                    out.push(KernelEntry {
                        grid,
                        bank: tag,
                        scale,
                        slot: name.to_string(),
                        rank: r,
                        is_2d: false,
                        moment: second_moment_1d(k).unwrap_or(f64::NAN),
                        min: k.iter().cloned().fold(f64::INFINITY, f64::min),
                        max: k.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    });
                }
            }
        }
        for (slot, name) in slots_2d.iter().enumerate() {
            for r in 0..bank.rank {
                let k = bank.k2d_slice(scale, slot, r);
                out.push(KernelEntry {
                    grid,
                    bank: tag,
                    scale,
                    slot: name.to_string(),
                    rank: r,
                    is_2d: true,
                    moment: second_moment_2d(k, bank.kernel_size).unwrap_or(f64::NAN),
                    min: k.iter().cloned().fold(f64::INFINITY, f64::min),
                    max: k.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                });
            }
        }
    }
}

/// Every kernel of every bank, in report order.
pub fn kernel_entries(field: &RadianceField) -> Vec<KernelEntry> {
    let mut out = Vec::new();
    for (banks, grid) in [
        (&field.density_banks, "density"),
        (&field.appearance_banks, "appearance"),
    ] {
        if let Some(bs) = banks {
            bank_entries(grid, "a", &bs.primary, &mut out);
            if let Some(b) = &bs.secondary {
                bank_entries(grid, "b", b, &mut out);
            }
        }
    }
    out
}

fn save_gray_png(path: &Path, values: &[f64], width: usize, height: usize, upscale: usize) -> Result<()> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = (max - min).max(1e-12);
    let (w, h) = (width * upscale, height * upscale);
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = values[(y / upscale) * width + x / upscale];
            let g = (((v - min) / range) * 255.0).round() as u8;
            img.put_pixel(x as u32, y as u32, image::Luma([g]));
        }
    }
    img.save(path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Write per-kernel PNGs, generated-grid XY slices and the moment report.
/// Returns the report text.
pub fn write_kernel_artifacts(field: &RadianceField, out_dir: &Path) -> Result<String> {
    fs::create_dir_all(out_dir)?;
    let kernel_dir = out_dir.join("kernels");
    fs::create_dir_all(&kernel_dir)?;

    let entries = kernel_entries(field);
    let mut report = String::new();
    let _ = writeln!(
        report,
        "kernel report: grid bank scale slot rank kind moment min max"
    );
    for e in &entries {
        let _ = writeln!(
            report,
            "{} {} {} {} {} {} {:.6} {:.6} {:.6}",
            e.grid,
            e.bank,
            e.scale,
            e.slot,
            e.rank,
            if e.is_2d { "2d" } else { "1d" },
            e.moment,
            e.min,
            e.max
        );
    }
    // Per-scale mean moments (the width-vs-scale summary).
    for (banks, grid) in [
        (&field.density_banks, "density"),
        (&field.appearance_banks, "appearance"),
    ] {
        if let Some(bs) = banks {
            for scale in 0..bs.primary.scales {
                let mean = bs.primary.mean_second_moment(scale).unwrap_or(f64::NAN);
                let _ = writeln!(report, "mean_moment {grid} a scale {scale} {mean:.6}");
            }
        }
    }

    // Kernel images (normalization bounds are in the report).
    for (banks, grid) in [
        (&field.density_banks, "density"),
        (&field.appearance_banks, "appearance"),
    ] {
        let Some(bs) = banks else { continue };
        for (tag, bank) in [("a", Some(&bs.primary)), ("b", bs.secondary.as_ref())] {
            let Some(bank) = bank else { continue };
            let k = bank.kernel_size;
            for scale in 0..bank.scales {
                for slot in 0..3 {
                    for r in 0..bank.rank {
                        if bank.family == GridFamily::Vm {
                            let name =
                                format!("{grid}_{tag}_s{scale}_vec{slot}_r{r}.png");
                            save_gray_png(
                                &kernel_dir.join(name),
                                bank.k1d_slice(scale, slot, r),
                                k,
                                1,
                                16,
                            )?;
                        }
                        let name = format!("{grid}_{tag}_s{scale}_mat{slot}_r{r}.png");
                        save_gray_png(
                            &kernel_dir.join(name),
                            bank.k2d_slice(scale, slot, r),
                            k,
                            k,
                            16,
                        )?;
                    }
                }
            }
        }
    }

    // Generated appearance-grid slices: shared grid first, then each scale.
    let grid_dir = out_dir.join("grids");
    fs::create_dir_all(&grid_dir)?;
    let slice_of = |g: &Grid| -> (Vec<f64>, usize, usize) {
        let res = g.resolution();
        match g {
            Grid::Vm(v) => (slice_xy_vm(v, 0, res[2] / 2), res[1], res[0]),
            Grid::Planes(p) => (slice_xy_planes(p, 0, res[2] / 2), res[1], res[0]),
        }
    };
    let (shared, w, h) = slice_of(&field.appearance_grid);
    save_gray_png(&grid_dir.join("appearance_shared.png"), &shared, w, h, 2)?;
    if !field.is_baseline() {
        let eval = field.prepare()?;
        for (i, g) in eval.appearance.primary.iter().enumerate() {
            let (slice, w, h) = slice_of(g);
            save_gray_png(
                &grid_dir.join(format!("appearance_scale{i}.png")),
                &slice,
                w,
                h,
                2,
            )?;
        }
    }

    fs::write(out_dir.join("report.txt"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalecoord::ScaleKind;
    use crate::train::{init_field, TrainConfig};

    fn cfg(scales: usize, stdevs: Vec<f64>) -> TrainConfig {
        TrainConfig {
            resolution: 6,
            rank_density: 2,
            rank_appearance: 2,
            channels: 3,
            hidden: 6,
            scales,
            kernel_stdevs: stdevs,
            upsample_schedule: vec![],
            kernel_start_iteration: 0,
            kind: ScaleKind::Discrete,
            ..Default::default()
        }
    }

    #[test]
    fn entry_count_is_scales_by_slots_by_rank() {
        let field = init_field(&cfg(4, vec![1.0, 1.5, 2.5, 4.0]), 0.005).unwrap();
        let entries = kernel_entries(&field);
        // Two banks (density.a, appearance.a), VM: S x (3 vec + 3 mat) x R.
        let per_bank = 4 * 6 * 2;
        assert_eq!(entries.len(), 2 * per_bank);
    }

    #[test]
    fn gaussian_init_moments_increase_and_identity_is_zero() {
        let field = init_field(&cfg(4, vec![1.0, 1.5, 2.5, 4.0]), 0.005).unwrap();
        let bank = &field.appearance_banks.as_ref().unwrap().primary;
        let mut prev = -1.0;
        for scale in 0..4 {
            let m = bank.mean_second_moment(scale).unwrap();
            assert!(m > prev, "scale {scale}");
            prev = m;
        }
        let ident =
            crate::mipgen::MipKernelBank::identity(GridFamily::Vm, 2, 3, 2).unwrap();
        for scale in 0..2 {
            for m in ident.second_moments(scale).unwrap() {
                assert_eq!(m, 0.0);
            }
        }
    }

    #[test]
    fn artifacts_written() {
        let field = init_field(&cfg(2, vec![1.0, 2.0]), 0.005).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let report = write_kernel_artifacts(&field, dir.path()).unwrap();
        assert!(report.contains("mean_moment appearance a scale 1"));
        assert!(dir.path().join("report.txt").exists());
        assert!(dir
            .path()
            .join("kernels/appearance_a_s0_mat0_r0.png")
            .exists());
        assert!(dir.path().join("grids/appearance_shared.png").exists());
        assert!(dir.path().join("grids/appearance_scale1.png").exists());
    }
}
