//! Central finite-difference verification of the analytic gradients.
//!
//! The finite-difference side only ever calls the forward loss, so the two
//! routes share nothing past the loss definition itself. Everything runs in
//! f64; entries where both sides are below the noise floor are compared
//! absolutely.

use crate::error::Result;
use crate::field::RadianceField;
use crate::render::RayBatch;
use crate::train::backward::{batch_loss, process_batch, BatchOpts};
use crate::train::grads::{block_list, field_block_mut};

#[derive(Debug, Clone)]
pub struct BlockReport {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub tolerance: f64,
    pub step: f64,
    pub blocks: Vec<BlockReport>,
    pub pass: bool,
}

impl GradientReport {
    pub fn worst(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_err)
            .fold(0.0, f64::max)
    }
}

/// Denominator floor: gradients this small are compared absolutely, since
/// central differences of an O(1) loss bottom out near 1e-11.
const REL_FLOOR: f64 = 1e-6;

/// Compare analytic gradients of the full loss against central finite
/// differences for every trainable block.
pub fn gradient_check(
    field: &mut RadianceField,
    batch: &RayBatch,
    opts: &BatchOpts,
    h: f64,
    tolerance: f64,
) -> Result<GradientReport> {
    let blocks = block_list(field);
    let (analytic, _) = {
        let eval = field.prepare()?;
        process_batch(field, &eval, batch, opts, true)?
    };

    let mut reports = Vec::with_capacity(blocks.len());
    for (name, id) in &blocks {
        let len = field_block_mut(field, *id).len();
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for i in 0..len {
            let original = field_block_mut(field, *id)[i];
            field_block_mut(field, *id)[i] = original + h;
            let plus = {
                let eval = field.prepare()?;
                batch_loss(field, &eval, batch, opts)?
            };
            field_block_mut(field, *id)[i] = original - h;
            let minus = {
                let eval = field.prepare()?;
                batch_loss(field, &eval, batch, opts)?
            };
            field_block_mut(field, *id)[i] = original;
            let fd = (plus - minus) / (2.0 * h);
            let a = analytic.block(*id)[i];
            let abs = (a - fd).abs();
            let rel = abs / a.abs().max(fd.abs()).max(REL_FLOOR);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        reports.push(BlockReport {
            name: name.clone(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
            pass: max_rel < tolerance,
        });
    }
    let pass = reports.iter().all(|b| b.pass);
    Ok(GradientReport {
        tolerance,
        step: h,
        blocks: reports,
        pass,
    })
}
