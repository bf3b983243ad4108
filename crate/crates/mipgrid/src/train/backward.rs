//! Fused forward/backward over ray batches.
//!
//! Per ray: stratified samples, feature extraction from the generated
//! multi-scale grids, decoding, compositing, loss; then the exact reverse
//! pass scattering gradients into per-chunk accumulators. Multi-scale grid
//! gradients are folded through the convolution backward onto the shared
//! grid and kernel banks once per batch.
//!
//! Chunks are contiguous ray ranges; partial accumulators are reduced in
//! chunk order, so results are reproducible for a fixed chunk count.

use crate::error::{Error, Result};
use crate::factor_grids::{FactorGridVM, PlaneGrid, PointStencil};
use crate::field::{
    apply_basis, basis_backward, sigmoid, softplus, DecoderCache, DecoderMlp, FieldEval, Grid,
    MsSet, RadianceField, ScaleBlend, DIR_ENC_LEN,
};
use crate::mipgen::{generate_planes_backward, generate_vm_backward, MipKernelBank};
use crate::render::{composite, composite_backward, ray_rng, stratified_samples, RayBatch};
use crate::scalecoord::ScaleKind;
use crate::train::grads::Gradients;
use rayon::prelude::*;

/// Everything a batch pass needs besides the field and rays.
#[derive(Debug, Clone)]
pub struct BatchOpts {
    pub n_samples: usize,
    pub near: f64,
    pub far: f64,
    pub background: [f64; 3],
    pub bound: f64,
    pub seed: u64,
    /// Mixed into the per-ray sample jitter so revisited pixels see fresh
    /// stratification.
    pub iteration: u64,
    /// Fixed chunk count; reduction order is chunk-major.
    pub n_chunks: usize,
}

/// Per-scale grid gradients for one underlying grid.
#[derive(Debug, Clone)]
struct MsGrads {
    primary: Vec<Grid>,
    secondary: Option<Vec<Grid>>,
}

impl MsGrads {
    fn zeros_like(set: &MsSet) -> Self {
        MsGrads {
            primary: set.primary.iter().map(Grid::zeros_like).collect(),
            secondary: set
                .secondary
                .as_ref()
                .map(|s| s.iter().map(Grid::zeros_like).collect()),
        }
    }
}

fn add_grid(acc: &mut Grid, other: &Grid) {
    match (acc, other) {
        (Grid::Vm(a), Grid::Vm(b)) => {
            for t in 0..3 {
                for (x, y) in a.vectors[t].iter_mut().zip(b.vectors[t].iter()) {
                    *x += y;
                }
                for (x, y) in a.matrices[t].iter_mut().zip(b.matrices[t].iter()) {
                    *x += y;
                }
            }
        }
        (Grid::Planes(a), Grid::Planes(b)) => {
            for p in 0..3 {
                for (x, y) in a.planes[p].iter_mut().zip(b.planes[p].iter()) {
                    *x += y;
                }
            }
        }
        _ => panic!("grid family mismatch in gradient fold"),
    }
}

/// One chunk's gradient contributions.
struct BatchAccum {
    d_ms_density: MsGrads,
    d_ms_appearance: MsGrads,
    basis: Vec<f64>,
    decoder: DecoderMlp,
    density_shift: f64,
    weighted_se: f64,
    se: f64,
    rays: usize,
}

impl BatchAccum {
    fn zeros(field: &RadianceField, eval: &FieldEval) -> Self {
        BatchAccum {
            d_ms_density: MsGrads::zeros_like(&eval.density),
            d_ms_appearance: MsGrads::zeros_like(&eval.appearance),
            basis: vec![0.0; field.basis.len()],
            decoder: DecoderMlp::zeros(field.decoder.in_dim, field.decoder.hidden),
            density_shift: 0.0,
            weighted_se: 0.0,
            se: 0.0,
            rays: 0,
        }
    }

    fn fold(&mut self, other: &BatchAccum) {
        for (a, b) in self
            .d_ms_density
            .primary
            .iter_mut()
            .zip(other.d_ms_density.primary.iter())
        {
            add_grid(a, b);
        }
        if let (Some(a), Some(b)) = (
            self.d_ms_density.secondary.as_mut(),
            other.d_ms_density.secondary.as_ref(),
        ) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                add_grid(x, y);
            }
        }
        for (a, b) in self
            .d_ms_appearance
            .primary
            .iter_mut()
            .zip(other.d_ms_appearance.primary.iter())
        {
            add_grid(a, b);
        }
        if let (Some(a), Some(b)) = (
            self.d_ms_appearance.secondary.as_mut(),
            other.d_ms_appearance.secondary.as_ref(),
        ) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                add_grid(x, y);
            }
        }
        for (a, b) in self.basis.iter_mut().zip(other.basis.iter()) {
            *a += b;
        }
        for (a, b) in self.decoder.w1.iter_mut().zip(other.decoder.w1.iter()) {
            *a += b;
        }
        for (a, b) in self.decoder.b1.iter_mut().zip(other.decoder.b1.iter()) {
            *a += b;
        }
        for (a, b) in self.decoder.w2.iter_mut().zip(other.decoder.w2.iter()) {
            *a += b;
        }
        for (a, b) in self.decoder.b2.iter_mut().zip(other.decoder.b2.iter()) {
            *a += b;
        }
        self.density_shift += other.density_shift;
        self.weighted_se += other.weighted_se;
        self.se += other.se;
        self.rays += other.rays;
    }
}

/// Reusable per-chunk buffers; sized once per batch.
#[derive(Default)]
struct RayWorkspace {
    t: Vec<f64>,
    delta: Vec<f64>,
    st_d: Vec<PointStencil>,
    st_a: Vec<PointStencil>,
    blend_p: Vec<ScaleBlend>,
    blend_s: Vec<ScaleBlend>,
    density_pre: Vec<f64>,
    sigma: Vec<f64>,
    rgb: Vec<[f64; 3]>,
    raw_app: Vec<f64>,
    dec_caches: Vec<DecoderCache>,
    d_sigma: Vec<f64>,
    d_rgb: Vec<[f64; 3]>,
    feat_a: Vec<f64>,
    feat_b: Vec<f64>,
    feat_c: Vec<f64>,
    d_feat: Vec<f64>,
    d_dec_in: Vec<f64>,
    d_raw: Vec<f64>,
    dec_in: Vec<f64>,
}

impl RayWorkspace {
    fn ensure(&mut self, n: usize, feat_d: usize, feat_a: usize, in_dim: usize) {
        let feat_max = feat_d.max(feat_a);
        self.t.resize(n, 0.0);
        self.delta.resize(n, 0.0);
        let st0 = PointStencil::new([0.0; 3], [2, 2, 2]);
        self.st_d.resize(n, st0);
        self.st_a.resize(n, st0);
        self.blend_p.resize(n, ScaleBlend::new(0.0, 1));
        self.blend_s.resize(n, ScaleBlend::new(0.0, 1));
        self.density_pre.resize(n, 0.0);
        self.sigma.resize(n, 0.0);
        self.rgb.resize(n, [0.0; 3]);
        self.raw_app.resize(n * feat_a, 0.0);
        self.dec_caches.resize_with(n, DecoderCache::default);
        self.d_sigma.resize(n, 0.0);
        self.d_rgb.resize(n, [0.0; 3]);
        self.feat_a.resize(feat_max, 0.0);
        self.feat_b.resize(feat_max, 0.0);
        self.feat_c.resize(feat_max, 0.0);
        self.d_feat.resize(feat_max, 0.0);
        self.d_dec_in.resize(in_dim, 0.0);
        self.d_raw.resize(feat_a, 0.0);
        self.dec_in.resize(in_dim, 0.0);
    }
}

/// Forward mix of the scales bracketing a blend, reusing the blend the
/// backward pass will see.
fn extract_with_blend(
    ms: &[Grid],
    st: &PointStencil,
    blend: ScaleBlend,
    out: &mut [f64],
    tmp: &mut [f64],
) {
    ms[blend.lo].sample_into(st, out);
    if blend.w_hi != 0.0 {
        ms[blend.hi].sample_into(st, tmp);
        for (o, s) in out.iter_mut().zip(tmp.iter()) {
            *o = *o * (1.0 - blend.w_hi) + *s * blend.w_hi;
        }
    }
}

fn scatter_with_blend(
    ms: &[Grid],
    d_ms: &mut [Grid],
    st: &PointStencil,
    blend: ScaleBlend,
    d_feat: &[f64],
    weight: f64,
    tmp: &mut [f64],
) {
    let w_lo = weight * (1.0 - blend.w_hi);
    if w_lo != 0.0 {
        for (t, d) in tmp.iter_mut().zip(d_feat.iter()) {
            *t = d * w_lo;
        }
        ms[blend.lo].sample_backward(st, tmp, &mut d_ms[blend.lo]);
    }
    let w_hi = weight * blend.w_hi;
    if w_hi != 0.0 {
        for (t, d) in tmp.iter_mut().zip(d_feat.iter()) {
            *t = d * w_hi;
        }
        ms[blend.hi].sample_backward(st, tmp, &mut d_ms[blend.hi]);
    }
}

/// Feature extraction for one sample given precomputed blends. The 2-D kind
/// averages bank A (primary blend) with bank B (secondary blend).
#[allow(clippy::too_many_arguments)]
fn features_forward(
    set: &MsSet,
    kind: ScaleKind,
    baseline: bool,
    st: &PointStencil,
    blend_p: ScaleBlend,
    blend_s: ScaleBlend,
    out: &mut [f64],
    tmp_a: &mut [f64],
    tmp_b: &mut [f64],
) {
    if baseline {
        set.primary[0].sample_into(st, out);
        return;
    }
    match kind {
        ScaleKind::TwoD => {
            extract_with_blend(&set.primary, st, blend_p, out, tmp_a);
            let secondary = set.secondary.as_ref().expect("validated 2-d field");
            extract_with_blend(secondary, st, blend_s, tmp_b, tmp_a);
            for (o, b) in out.iter_mut().zip(tmp_b.iter()) {
                *o = 0.5 * (*o + *b);
            }
        }
        _ => extract_with_blend(&set.primary, st, blend_p, out, tmp_a),
    }
}

#[allow(clippy::too_many_arguments)]
fn features_backward(
    set: &MsSet,
    d_set: &mut MsGrads,
    kind: ScaleKind,
    baseline: bool,
    st: &PointStencil,
    blend_p: ScaleBlend,
    blend_s: ScaleBlend,
    d_feat: &[f64],
    tmp: &mut [f64],
) {
    if baseline {
        set.primary[0].sample_backward(st, d_feat, &mut d_set.primary[0]);
        return;
    }
    match kind {
        ScaleKind::TwoD => {
            scatter_with_blend(&set.primary, &mut d_set.primary, st, blend_p, d_feat, 0.5, tmp);
            let sec = set.secondary.as_ref().expect("validated 2-d field");
            let d_sec = d_set.secondary.as_mut().expect("validated 2-d field");
            scatter_with_blend(sec, d_sec, st, blend_s, d_feat, 0.5, tmp);
        }
        _ => scatter_with_blend(&set.primary, &mut d_set.primary, st, blend_p, d_feat, 1.0, tmp),
    }
}

/// Forward pass for one ray; fills the workspace caches and returns the
/// composited color.
fn forward_ray(
    field: &RadianceField,
    eval: &FieldEval,
    batch: &RayBatch,
    ray: usize,
    opts: &BatchOpts,
    ws: &mut RayWorkspace,
) -> Result<[f64; 3]> {
    let n = opts.n_samples;
    let feat_d = field.density_grid.feature_len();
    let feat_a = field.appearance_grid.feature_len();
    let in_dim = field.decoder.in_dim;
    ws.ensure(n, feat_d, feat_a, in_dim);

    let mut rng = ray_rng(opts.seed, batch.image_ids[ray], batch.pixel_ids[ray], opts.iteration);
    let samples = stratified_samples(opts.near, opts.far, n, &mut rng);
    ws.t.copy_from_slice(&samples.t);
    ws.delta.copy_from_slice(&samples.delta);

    let origin = batch.origins[ray];
    let dir = batch.dirs[ray];
    let s_disc = batch.s_disc[ray];
    let baseline = field.is_baseline();
    let s_eff = eval.density.primary.len();
    let kind = field.kind;

    let res_d = field.density_grid.resolution();
    let res_a = field.appearance_grid.resolution();
    let inv_bound = 1.0 / opts.bound;

    // Direction encoding is shared by all samples of the ray.
    let mut enc = [0.0; DIR_ENC_LEN];
    crate::field::encode_direction(dir, &mut enc);

    let disc_idx = if baseline {
        0.0
    } else {
        match kind {
            ScaleKind::Discrete => field.primary_map.fractional_index(s_disc),
            _ => 0.0,
        }
    };

    for i in 0..n {
        let t = ws.t[i];
        let p = [
            (origin[0] + t * dir[0]) * inv_bound,
            (origin[1] + t * dir[1]) * inv_bound,
            (origin[2] + t * dir[2]) * inv_bound,
        ];
        ws.st_d[i] = PointStencil::new(p, res_d);
        ws.st_a[i] = PointStencil::new(p, res_a);
        let (blend_p, blend_s) = if baseline {
            (ScaleBlend::new(0.0, 1), ScaleBlend::new(0.0, 1))
        } else {
            match kind {
                ScaleKind::Discrete => (ScaleBlend::new(disc_idx, s_eff), ScaleBlend::new(0.0, 1)),
                ScaleKind::Continuous => (
                    ScaleBlend::new(field.primary_map.fractional_index(s_disc * t), s_eff),
                    ScaleBlend::new(0.0, 1),
                ),
                ScaleKind::TwoD => {
                    let map_s = field.secondary_map.as_ref().expect("validated 2-d field");
                    (
                        ScaleBlend::new(field.primary_map.fractional_index(s_disc * t), s_eff),
                        ScaleBlend::new(map_s.fractional_index(t), s_eff),
                    )
                }
            }
        };
        ws.blend_p[i] = blend_p;
        ws.blend_s[i] = blend_s;

        features_forward(
            &eval.density,
            kind,
            baseline,
            &ws.st_d[i],
            blend_p,
            blend_s,
            &mut ws.feat_a[..feat_d],
            &mut ws.feat_b[..feat_d],
            &mut ws.feat_c[..feat_d],
        );
        let pre: f64 = ws.feat_a[..feat_d].iter().sum::<f64>() + field.density_shift;
        ws.density_pre[i] = pre;
        ws.sigma[i] = softplus(pre);

        let raw = &mut ws.raw_app[i * feat_a..(i + 1) * feat_a];
        features_forward(
            &eval.appearance,
            kind,
            baseline,
            &ws.st_a[i],
            blend_p,
            blend_s,
            raw,
            &mut ws.feat_b[..feat_a],
            &mut ws.feat_c[..feat_a],
        );
        apply_basis(&field.basis, field.channels, raw, &mut ws.dec_in[..field.channels]);
        ws.dec_in[field.channels..field.channels + DIR_ENC_LEN].copy_from_slice(&enc);
        ws.rgb[i] = field
            .decoder
            .forward(&ws.dec_in[..in_dim], &mut ws.dec_caches[i]);
    }

    let out = composite(&ws.sigma[..n], &ws.rgb[..n], &ws.delta[..n], opts.background);
    Ok(out.rgb)
}

/// Reverse pass for the ray most recently run through `forward_ray`.
fn backward_ray(
    field: &RadianceField,
    eval: &FieldEval,
    opts: &BatchOpts,
    d_pred: [f64; 3],
    ws: &mut RayWorkspace,
    accum: &mut BatchAccum,
) {
    let n = opts.n_samples;
    let feat_d = field.density_grid.feature_len();
    let feat_a = field.appearance_grid.feature_len();
    let baseline = field.is_baseline();
    let kind = field.kind;
    let channels = field.channels;

    composite_backward(
        &ws.sigma[..n],
        &ws.rgb[..n],
        &ws.delta[..n],
        opts.background,
        d_pred,
        &mut ws.d_sigma[..n],
        &mut ws.d_rgb[..n],
    );

    for i in 0..n {
        // Density: sigma = softplus(sum feat + shift).
        let d_pre = ws.d_sigma[i] * sigmoid(ws.density_pre[i]);
        if d_pre != 0.0 {
            accum.density_shift += d_pre;
            ws.d_feat[..feat_d].iter_mut().for_each(|v| *v = d_pre);
            features_backward(
                &eval.density,
                &mut accum.d_ms_density,
                kind,
                baseline,
                &ws.st_d[i],
                ws.blend_p[i],
                ws.blend_s[i],
                &ws.d_feat[..feat_d],
                &mut ws.feat_b[..feat_d],
            );
        }

        // Color: decoder -> basis -> appearance features.
        field.decoder.backward(
            &ws.dec_caches[i],
            ws.d_rgb[i],
            &mut accum.decoder,
            &mut ws.d_dec_in,
        );
        let raw = &ws.raw_app[i * feat_a..(i + 1) * feat_a];
        // Split to appease the borrow checker: d_dec_in's head is d_channels.
        let (d_chan, _) = ws.d_dec_in.split_at(channels);
        basis_backward(
            &field.basis,
            channels,
            raw,
            d_chan,
            &mut accum.basis,
            &mut ws.d_raw[..feat_a],
        );
        features_backward(
            &eval.appearance,
            &mut accum.d_ms_appearance,
            kind,
            baseline,
            &ws.st_a[i],
            ws.blend_p[i],
            ws.blend_s[i],
            &ws.d_raw[..feat_a],
            &mut ws.feat_b[..feat_a],
        );
    }
}

fn process_chunk(
    field: &RadianceField,
    eval: &FieldEval,
    batch: &RayBatch,
    range: std::ops::Range<usize>,
    opts: &BatchOpts,
    n_total: usize,
) -> Result<BatchAccum> {
    let mut ws = RayWorkspace::default();
    let mut accum = BatchAccum::zeros(field, eval);
    for ray in range {
        let pred = forward_ray(field, eval, batch, ray, opts, &mut ws)?;
        let gt = batch.gt_rgb[ray];
        let w = batch.weights[ray];
        let mut se = 0.0;
        let mut d_pred = [0.0; 3];
        for k in 0..3 {
            let r = pred[k] - gt[k];
            se += r * r;
            d_pred[k] = 2.0 * w * r / n_total as f64;
        }
        accum.weighted_se += w * se;
        accum.se += se;
        accum.rays += 1;
        backward_ray(field, eval, opts, d_pred, &mut ws, &mut accum);
    }
    Ok(accum)
}

fn chunk_ranges(n: usize, n_chunks: usize) -> Vec<std::ops::Range<usize>> {
    let n_chunks = n_chunks.max(1).min(n.max(1));
    (0..n_chunks)
        .map(|c| (c * n / n_chunks)..((c + 1) * n / n_chunks))
        .collect()
}

/// Loss statistics of one batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchStats {
    /// Mean over rays of `weight * |pred - gt|^2`.
    pub loss: f64,
    /// Unweighted per-channel MSE, the train-PSNR source.
    pub mse: f64,
}

/// Full forward+backward over a batch. `kernels_active` gates kernel-tap
/// gradients: while frozen the bank blocks come back identically zero.
pub fn process_batch(
    field: &RadianceField,
    eval: &FieldEval,
    batch: &RayBatch,
    opts: &BatchOpts,
    kernels_active: bool,
) -> Result<(Gradients, BatchStats)> {
    if batch.is_empty() {
        return Err(Error::InvalidArg("empty ray batch".into()));
    }
    let n = batch.len();
    let ranges = chunk_ranges(n, opts.n_chunks);
    let partials: Result<Vec<BatchAccum>> = ranges
        .into_par_iter()
        .map(|r| process_chunk(field, eval, batch, r, opts, n))
        .collect();
    let partials = partials?;
    let mut total = partials
        .into_iter()
        .reduce(|mut a, b| {
            a.fold(&b);
            a
        })
        .expect("at least one chunk");

    let stats = BatchStats {
        loss: total.weighted_se / n as f64,
        mse: total.se / (3.0 * n as f64),
    };
    if !stats.loss.is_finite() {
        return Err(Error::Numeric(format!(
            "loss is not finite ({}); aborting",
            stats.loss
        )));
    }

    // Fold multi-scale grid gradients through the generators.
    let mut grads = Gradients::zeros_like(field);
    grads.basis = std::mem::take(&mut total.basis);
    grads.decoder = std::mem::replace(
        &mut total.decoder,
        DecoderMlp::zeros(field.decoder.in_dim, field.decoder.hidden),
    );
    grads.density_shift = total.density_shift;

    fold_ms_grads(
        &field.density_grid,
        &field.density_banks,
        total.d_ms_density,
        &mut grads.density,
        grads.density_banks.as_mut(),
        kernels_active,
    );
    fold_ms_grads(
        &field.appearance_grid,
        &field.appearance_banks,
        total.d_ms_appearance,
        &mut grads.appearance,
        grads.appearance_banks.as_mut(),
        kernels_active,
    );

    Ok((grads, stats))
}

fn unwrap_vm(grids: Vec<Grid>) -> Vec<FactorGridVM> {
    grids
        .into_iter()
        .map(|g| match g {
            Grid::Vm(v) => v,
            _ => unreachable!("family checked by caller"),
        })
        .collect()
}

fn unwrap_planes(grids: Vec<Grid>) -> Vec<PlaneGrid> {
    grids
        .into_iter()
        .map(|g| match g {
            Grid::Planes(v) => v,
            _ => unreachable!("family checked by caller"),
        })
        .collect()
}

fn fold_ms_grads(
    shared: &Grid,
    banks: &Option<crate::field::BankSet>,
    d_ms: MsGrads,
    d_shared: &mut Grid,
    d_banks: Option<&mut crate::field::BankSet>,
    kernels_active: bool,
) {
    match banks {
        None => {
            // Baseline: the single "scale" is the shared grid itself.
            add_grid(d_shared, &d_ms.primary[0]);
        }
        Some(bs) => {
            let d_banks = d_banks.expect("gradients shaped like the field");
            fold_one_bank(
                shared,
                &bs.primary,
                d_ms.primary,
                d_shared,
                kernels_active.then_some(&mut d_banks.primary),
            );
            if let (Some(bank), Some(d_scales)) = (&bs.secondary, d_ms.secondary) {
                let d_bank = d_banks.secondary.as_mut().expect("gradient banks match");
                fold_one_bank(
                    shared,
                    bank,
                    d_scales,
                    d_shared,
                    kernels_active.then_some(d_bank),
                );
            }
        }
    }
}

fn fold_one_bank(
    shared: &Grid,
    bank: &MipKernelBank,
    d_scales: Vec<Grid>,
    d_shared: &mut Grid,
    d_bank: Option<&mut MipKernelBank>,
) {
    let d_bank = if bank.trainable { d_bank } else { None };
    match (shared, d_shared) {
        (Grid::Vm(s), Grid::Vm(ds)) => {
            generate_vm_backward(s, bank, &unwrap_vm(d_scales), ds, d_bank)
        }
        (Grid::Planes(s), Grid::Planes(ds)) => {
            generate_planes_backward(s, bank, &unwrap_planes(d_scales), ds, d_bank)
        }
        _ => unreachable!("gradient family mismatch"),
    }
}

/// Forward-only loss of a batch (the finite-difference side of the gradient
/// check and the quick NaN probe).
pub fn batch_loss(
    field: &RadianceField,
    eval: &FieldEval,
    batch: &RayBatch,
    opts: &BatchOpts,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArg("empty ray batch".into()));
    }
    let mut ws = RayWorkspace::default();
    let mut acc = 0.0;
    for ray in 0..batch.len() {
        let pred = forward_ray(field, eval, batch, ray, opts, &mut ws)?;
        let gt = batch.gt_rgb[ray];
        let mut se = 0.0;
        for k in 0..3 {
            let r = pred[k] - gt[k];
            se += r * r;
        }
        acc += batch.weights[ray] * se;
    }
    Ok(acc / batch.len() as f64)
}
