//! PSNR and SSIM on [0,1] float images, plus the per-scale eval report.
//!
//! SSIM is pinned to the standard parameters (11x11 Gaussian window,
//! sigma 1.5, K1 = 0.01, K2 = 0.03, L = 1) so reports stay comparable
//! across implementations. Windows are truncated at image borders with the
//! Gaussian weights renormalized over the valid region, which keeps the
//! metric defined for images smaller than the window.

use crate::error::{Error, Result};
use crate::render::ImageF;

/// PSNR cap reported for identical images (MSE = 0).
pub const PSNR_CAP: f64 = 99.0;

pub fn mse(a: &ImageF, b: &ImageF) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Shape(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mut acc = 0.0;
    for (pa, pb) in a.pixels.iter().zip(b.pixels.iter()) {
        for c in 0..3 {
            let d = pa[c] - pb[c];
            acc += d * d;
        }
    }
    Ok(acc / (a.pixels.len() * 3) as f64)
}

/// `10 log10(1 / mse)`, capped at 99 dB.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (-10.0 * mse.log10()).min(PSNR_CAP)
}

pub fn psnr(a: &ImageF, b: &ImageF) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW - 1) as f64 / 2.0;
    let mut w = [0.0; SSIM_WINDOW];
    for (j, slot) in w.iter_mut().enumerate() {
        *slot = (-(j as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Mean SSIM over pixels and channels.
pub fn ssim(a: &ImageF, b: &ImageF) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Shape("image sizes differ".into()));
    }
    let w1d = gaussian_window();
    let half = (SSIM_WINDOW / 2) as isize;
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let (width, height) = (a.width as isize, a.height as isize);
    let mut total = 0.0;
    let mut count = 0usize;
    for py in 0..height {
        for px in 0..width {
            for ch in 0..3 {
                let mut wsum = 0.0;
                let mut mx = 0.0;
                let mut my = 0.0;
                let mut mxx = 0.0;
                let mut myy = 0.0;
                let mut mxy = 0.0;
                for dy in -half..=half {
                    let y = py + dy;
                    if y < 0 || y >= height {
                        continue;
                    }
                    for dx in -half..=half {
                        let x = px + dx;
                        if x < 0 || x >= width {
                            continue;
                        }
                        let w = w1d[(dy + half) as usize] * w1d[(dx + half) as usize];
                        let va = a.get(x as usize, y as usize)[ch];
                        let vb = b.get(x as usize, y as usize)[ch];
                        wsum += w;
                        mx += w * va;
                        my += w * vb;
                        mxx += w * va * va;
                        myy += w * vb * vb;
                        mxy += w * va * vb;
                    }
                }
                mx /= wsum;
                my /= wsum;
                let sxx = (mxx / wsum - mx * mx).max(0.0);
                let syy = (myy / wsum - my * my).max(0.0);
                let sxy = mxy / wsum - mx * my;
                let s = ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
                    / ((mx * mx + my * my + c1) * (sxx + syy + c2));
                total += s;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// One evaluated image.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub factor: u32,
    pub image: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-scale and average metrics, shaped like the usual multi-scale tables
/// (LPIPS is reported as "n/a": it needs a pretrained perceptual network).
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// (factor, mean psnr, mean ssim), in factor order.
    pub per_scale: Vec<(u32, f64, f64)>,
    pub avg_psnr: f64,
    pub avg_ssim: f64,
    pub wall_seconds: f64,
}

impl EvalReport {
    /// Aggregate rows; per-scale means over images, average over scales.
    pub fn from_rows(rows: Vec<EvalRow>, wall_seconds: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArg("no evaluation rows".into()));
        }
        let mut factors: Vec<u32> = rows.iter().map(|r| r.factor).collect();
        factors.sort_unstable();
        factors.dedup();
        let mut per_scale = Vec::with_capacity(factors.len());
        for f in &factors {
            let sel: Vec<&EvalRow> = rows.iter().filter(|r| r.factor == *f).collect();
            let p = sel.iter().map(|r| r.psnr).sum::<f64>() / sel.len() as f64;
            let s = sel.iter().map(|r| r.ssim).sum::<f64>() / sel.len() as f64;
            per_scale.push((*f, p, s));
        }
        let avg_psnr = per_scale.iter().map(|x| x.1).sum::<f64>() / per_scale.len() as f64;
        let avg_ssim = per_scale.iter().map(|x| x.2).sum::<f64>() / per_scale.len() as f64;
        Ok(EvalReport {
            rows,
            per_scale,
            avg_psnr,
            avg_ssim,
            wall_seconds,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("factor,image,psnr,ssim,lpips\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{:.6},{:.6},n/a\n", r.factor, r.image, r.psnr, r.ssim));
        }
        for (f, p, s) in &self.per_scale {
            out.push_str(&format!("{f},mean,{p:.6},{s:.6},n/a\n"));
        }
        out.push_str(&format!("all,mean,{:.6},{:.6},n/a\n", self.avg_psnr, self.avg_ssim));
        out
    }

    pub fn pretty_table(&self) -> String {
        let mut out = String::new();
        out.push_str("           Avg.");
        for (f, _, _) in &self.per_scale {
            out.push_str(&format!("   1/{f} Res."));
        }
        out.push('\n');
        out.push_str(&format!("PSNR  {:9.2}", self.avg_psnr));
        for (_, p, _) in &self.per_scale {
            out.push_str(&format!(" {p:9.2}"));
        }
        out.push('\n');
        out.push_str(&format!("SSIM  {:9.4}", self.avg_ssim));
        for (_, _, s) in &self.per_scale {
            out.push_str(&format!(" {s:9.4}"));
        }
        out.push('\n');
        out.push_str("LPIPS       n/a");
        for _ in &self.per_scale {
            out.push_str("       n/a");
        }
        out.push('\n');
        out.push_str(&format!("wall-clock: {:.1}s\n", self.wall_seconds));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(w: usize, h: usize, v: f64) -> ImageF {
        let mut img = ImageF::new(w, h);
        img.pixels.iter_mut().for_each(|p| *p = [v; 3]);
        img
    }

    #[test]
    fn identical_images_hit_the_cap() {
        let img = uniform(8, 8, 0.42);
        assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mse_em2_is_20db() {
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_half_vs_point6() {
        let a = uniform(16, 16, 0.5);
        let b = uniform(16, 16, 0.6);
        let m = mse(&a, &b).unwrap();
        assert!((m - 0.01).abs() < 1e-12);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        // Variances vanish: SSIM reduces to the luminance term
        // (2 mx my + C1) / (mx^2 + my^2 + C1).
        let s = ssim(&a, &b).unwrap();
        let expect = (2.0 * 0.5 * 0.6 + 1e-4) / (0.25 + 0.36 + 1e-4);
        assert!((s - expect).abs() < 1e-9, "{s} vs {expect}");
        assert!(s < 1.0);
    }

    #[test]
    fn ssim_defined_for_tiny_images() {
        let a = uniform(4, 4, 0.2);
        let b = uniform(4, 4, 0.2);
        assert!((ssim(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn report_averages_match_rows() {
        let rows = vec![
            EvalRow { factor: 1, image: 0, psnr: 30.0, ssim: 0.9 },
            EvalRow { factor: 1, image: 1, psnr: 32.0, ssim: 0.92 },
            EvalRow { factor: 2, image: 0, psnr: 28.0, ssim: 0.8 },
            EvalRow { factor: 2, image: 1, psnr: 29.0, ssim: 0.82 },
        ];
        let rep = EvalReport::from_rows(rows, 1.0).unwrap();
        assert!((rep.per_scale[0].1 - 31.0).abs() < 1e-12);
        assert!((rep.per_scale[1].1 - 28.5).abs() < 1e-12);
        assert!((rep.avg_psnr - 29.75).abs() < 1e-12);
        let csv = rep.to_csv();
        assert!(csv.contains("lpips"));
        assert!(rep.pretty_table().contains("n/a"));
    }
}
