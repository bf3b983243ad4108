//! Scale-aware input coordinates and their mapping to fractional scale
//! indices.
//!
//! Three coordinate kinds exist: `discrete` (one value per image, the pixel
//! footprint at unit depth), `continuous` (footprint scaled by ray distance)
//! and `two_d` (continuous value plus the raw distance as a second channel).
//! A `ScaleIndexMap` turns a coordinate value into a fractional index in
//! `[0, S-1]` by piecewise-linear interpolation in log2 space, so the
//! geometric training scales (factors 1, 2, 4, 8) land on equispaced
//! anchors.

use crate::error::{Error, Result};

pub const FOOTPRINT_RADIUS_FACTOR: f64 = 2.0 / 3.4641016151377544; // 2 / sqrt(12)

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleKind {
    Discrete,
    Continuous,
    TwoD,
}

impl ScaleKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "disc" => Ok(ScaleKind::Discrete),
            "cont" => Ok(ScaleKind::Continuous),
            "2d" => Ok(ScaleKind::TwoD),
            other => Err(Error::Config(format!(
                "scale_coord.kind must be disc, cont or 2d, got {other:?}"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ScaleKind::Discrete => "disc",
            ScaleKind::Continuous => "cont",
            ScaleKind::TwoD => "2d",
        }
    }
}

/// A scale coordinate attached to a sample point. `s_secondary` is present
/// exactly for the two-dimensional kind (the raw ray distance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleCoordinate {
    pub kind: ScaleKind,
    pub s_primary: f64,
    pub s_secondary: Option<f64>,
}

impl ScaleCoordinate {
    pub fn discrete(s: f64) -> Result<Self> {
        check_positive("discrete scale", s)?;
        Ok(ScaleCoordinate {
            kind: ScaleKind::Discrete,
            s_primary: s,
            s_secondary: None,
        })
    }

    pub fn continuous(s: f64) -> Result<Self> {
        check_positive("continuous scale", s)?;
        Ok(ScaleCoordinate {
            kind: ScaleKind::Continuous,
            s_primary: s,
            s_secondary: None,
        })
    }

    pub fn two_d(s: f64, t: f64) -> Result<Self> {
        check_positive("2-d scale", s)?;
        check_positive("2-d distance channel", t)?;
        Ok(ScaleCoordinate {
            kind: ScaleKind::TwoD,
            s_primary: s,
            s_secondary: Some(t),
        })
    }
}

fn check_positive(what: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::InvalidArg(format!(
            "{what} must be positive and finite, got {v}"
        )));
    }
    Ok(())
}

/// World-space pixel footprint of a camera at unit depth:
/// `((1/f_x + 1/f_y) / 2) * 2 / sqrt(12)`.
pub fn discrete_scale(focal_x: f64, focal_y: f64) -> Result<f64> {
    if !(focal_x > 0.0) || !(focal_y > 0.0) {
        return Err(Error::InvalidArg(format!(
            "focal lengths must be positive, got ({focal_x}, {focal_y})"
        )));
    }
    Ok((1.0 / focal_x + 1.0 / focal_y) * 0.5 * FOOTPRINT_RADIUS_FACTOR)
}

/// Footprint at distance `t` along the ray.
pub fn continuous_scale(s_disc: f64, t: f64) -> Result<f64> {
    check_positive("discrete scale", s_disc)?;
    check_positive("ray distance", t)?;
    Ok(s_disc * t)
}

/// Anchor values for the S scale slots, interpolated in log2 space.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleIndexMap {
    anchors: Vec<f64>,
    log2_anchors: Vec<f64>,
    /// True when the anchors were given largest-first.
    descending: bool,
}

impl ScaleIndexMap {
    /// Anchors must be positive and strictly monotone (either direction);
    /// index i maps to `anchors[i]`.
    pub fn new(anchors: Vec<f64>) -> Result<Self> {
        if anchors.len() < 2 {
            return Err(Error::Shape(format!(
                "scale index map needs at least 2 anchors, got {}",
                anchors.len()
            )));
        }
        for &a in &anchors {
            check_positive("anchor", a)?;
        }
        let ascending = anchors.windows(2).all(|w| w[0] < w[1]);
        let descending = anchors.windows(2).all(|w| w[0] > w[1]);
        if !ascending && !descending {
            return Err(Error::InvalidArg(
                "anchors must be strictly monotone".into(),
            ));
        }
        let ordered: Vec<f64> = if descending {
            anchors.iter().rev().cloned().collect()
        } else {
            anchors.clone()
        };
        let log2_anchors = ordered.iter().map(|a| a.log2()).collect();
        Ok(ScaleIndexMap {
            anchors,
            log2_anchors,
            descending,
        })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    /// Fractional index in [0, S-1]: piecewise-linear in log2(value) against
    /// the log2 anchors, clamped outside the anchor range.
    pub fn fractional_index(&self, value: f64) -> f64 {
        let s = self.log2_anchors.len();
        let lv = value.max(f64::MIN_POSITIVE).log2();
        let idx = if lv <= self.log2_anchors[0] {
            0.0
        } else if lv >= self.log2_anchors[s - 1] {
            (s - 1) as f64
        } else {
            let mut k = 0;
            while lv >= self.log2_anchors[k + 1] {
                k += 1;
            }
            let lo = self.log2_anchors[k];
            let hi = self.log2_anchors[k + 1];
            k as f64 + (lv - lo) / (hi - lo)
        };
        if self.descending {
            (s - 1) as f64 - idx
        } else {
            idx
        }
    }
}

/// Index map whose anchors are the base footprint times each training
/// downsample factor.
pub fn default_anchors(base_s_disc: f64, factors: &[f64]) -> Result<ScaleIndexMap> {
    check_positive("base discrete scale", base_s_disc)?;
    if factors.len() < 2 {
        return Err(Error::Shape(format!(
            "need at least 2 scale factors, got {}",
            factors.len()
        )));
    }
    if !factors.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidArg(
            "scale factors must be positive and strictly ascending".into(),
        ));
    }
    for &f in factors {
        check_positive("scale factor", f)?;
    }
    ScaleIndexMap::new(factors.iter().map(|f| base_s_disc * f).collect())
}
