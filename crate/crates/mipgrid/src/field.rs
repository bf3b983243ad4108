//! The radiance field: scale-interpolated feature extraction, density
//! activation and the appearance decoder.
//!
//! Density is `softplus(sum of extracted components + shift)`; color comes
//! from a 2-layer MLP over basis-mapped appearance channels concatenated
//! with a frequency encoding of the view direction. Feature blending across
//! the fractional scale index happens on sampled features, which matches
//! blending the dense multi-scale tensors by linearity of trilinear
//! interpolation in the dense values.

use crate::error::{Error, Result};
use crate::factor_grids::{
    sample_planes_backward, sample_planes_into, sample_vm_backward, sample_vm_into, upsample_planes,
    upsample_vm, FactorGridVM, GridFamily, PlaneGrid, PointStencil,
};
use crate::mipgen::{generate_planes, generate_vm, MipKernelBank, MultiScaleGrid};
use crate::scalecoord::{ScaleCoordinate, ScaleIndexMap, ScaleKind};
use rand::Rng;

/// Octaves in the view-direction frequency encoding (sin and cos each).
pub const DIR_ENC_OCTAVES: usize = 2;
pub const DIR_ENC_LEN: usize = 3 * 2 * DIR_ENC_OCTAVES;

/// Either factorization family behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    Vm(FactorGridVM),
    Planes(PlaneGrid),
}

impl Grid {
    pub fn family(&self) -> GridFamily {
        match self {
            Grid::Vm(_) => GridFamily::Vm,
            Grid::Planes(_) => GridFamily::Planes,
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            Grid::Vm(g) => g.rank,
            Grid::Planes(g) => g.rank,
        }
    }

    pub fn resolution(&self) -> [usize; 3] {
        match self {
            Grid::Vm(g) => g.resolution,
            Grid::Planes(g) => g.resolution,
        }
    }

    pub fn feature_len(&self) -> usize {
        match self {
            Grid::Vm(g) => g.feature_len(),
            Grid::Planes(g) => g.feature_len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Grid::Vm(g) => g.validate(),
            Grid::Planes(g) => g.validate(),
        }
    }

    pub fn zeros_like(&self) -> Grid {
        match self {
            Grid::Vm(g) => Grid::Vm(
                FactorGridVM::zeros(g.resolution, g.rank, g.channels).expect("valid shape"),
            ),
            Grid::Planes(g) => Grid::Planes(
                PlaneGrid::zeros(g.resolution, g.rank, g.channels).expect("valid shape"),
            ),
        }
    }

    pub fn upsample(&self, new_resolution: [usize; 3]) -> Result<Grid> {
        Ok(match self {
            Grid::Vm(g) => Grid::Vm(upsample_vm(g, new_resolution)?),
            Grid::Planes(g) => Grid::Planes(upsample_planes(g, new_resolution)?),
        })
    }

    pub fn sample_into(&self, st: &PointStencil, out: &mut [f64]) {
        match self {
            Grid::Vm(g) => sample_vm_into(g, st, out),
            Grid::Planes(g) => sample_planes_into(g, st, out),
        }
    }

    pub fn sample_backward(&self, st: &PointStencil, d_out: &[f64], grad: &mut Grid) {
        match (self, grad) {
            (Grid::Vm(g), Grid::Vm(gr)) => sample_vm_backward(g, st, d_out, gr),
            (Grid::Planes(g), Grid::Planes(gr)) => sample_planes_backward(g, st, d_out, gr),
            _ => panic!("gradient family mismatch"),
        }
    }

    /// Named factor arrays, fixed order (checkpoint and optimizer layout).
    pub fn array_names(&self) -> &'static [&'static str] {
        match self {
            Grid::Vm(_) => &["vec_x", "vec_y", "vec_z", "mat_yz", "mat_xz", "mat_xy"],
            Grid::Planes(_) => &["plane_yz", "plane_xz", "plane_xy"],
        }
    }

    pub fn visit_arrays(&self, mut f: impl FnMut(&'static str, &[f64])) {
        match self {
            Grid::Vm(g) => {
                f("vec_x", &g.vectors[0]);
                f("vec_y", &g.vectors[1]);
                f("vec_z", &g.vectors[2]);
                f("mat_yz", &g.matrices[0]);
                f("mat_xz", &g.matrices[1]);
                f("mat_xy", &g.matrices[2]);
            }
            Grid::Planes(g) => {
                f("plane_yz", &g.planes[0]);
                f("plane_xz", &g.planes[1]);
                f("plane_xy", &g.planes[2]);
            }
        }
    }

    pub fn visit_arrays_mut(&mut self, mut f: impl FnMut(&'static str, &mut Vec<f64>)) {
        match self {
            Grid::Vm(g) => {
                f("vec_x", &mut g.vectors[0]);
                f("vec_y", &mut g.vectors[1]);
                f("vec_z", &mut g.vectors[2]);
                f("mat_yz", &mut g.matrices[0]);
                f("mat_xz", &mut g.matrices[1]);
                f("mat_xy", &mut g.matrices[2]);
            }
            Grid::Planes(g) => {
                f("plane_yz", &mut g.planes[0]);
                f("plane_xz", &mut g.planes[1]);
                f("plane_xy", &mut g.planes[2]);
            }
        }
    }
}

/// Numerically stable softplus; its derivative is the logistic.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Frequency encoding of a unit direction: sin/cos at octaves 2^0..2^(O-1).
pub fn encode_direction(d: [f64; 3], out: &mut [f64]) {
    debug_assert_eq!(out.len(), DIR_ENC_LEN);
    let mut i = 0;
    for oct in 0..DIR_ENC_OCTAVES {
        let f = (1u32 << oct) as f64;
        for k in 0..3 {
            out[i] = (f * d[k]).sin();
            out[i + 1] = (f * d[k]).cos();
            i += 2;
        }
    }
}

/// Two affine layers with tanh between; logistic squashing on the 3 outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderMlp {
    pub in_dim: usize,
    pub hidden: usize,
    /// Row-major `[hidden][in_dim]`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major `[3][hidden]`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Per-sample activations retained for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct DecoderCache {
    pub input: Vec<f64>,
    pub hidden_act: Vec<f64>,
    pub out_pre: [f64; 3],
}

impl DecoderMlp {
    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        DecoderMlp {
            in_dim,
            hidden,
            w1: vec![0.0; hidden * in_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; 3 * hidden],
            b2: vec![0.0; 3],
        }
    }

    pub fn init(in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut mlp = Self::zeros(in_dim, hidden);
        let lim1 = (6.0 / (in_dim + hidden) as f64).sqrt();
        let lim2 = (6.0 / (hidden + 3) as f64).sqrt();
        mlp.w1.iter_mut().for_each(|w| *w = rng.gen_range(-lim1..lim1));
        mlp.w2.iter_mut().for_each(|w| *w = rng.gen_range(-lim2..lim2));
        mlp
    }

    /// Forward pass; fills the cache and returns colors in (0,1)^3.
    pub fn forward(&self, input: &[f64], cache: &mut DecoderCache) -> [f64; 3] {
        debug_assert_eq!(input.len(), self.in_dim);
        cache.input.clear();
        cache.input.extend_from_slice(input);
        cache.hidden_act.resize(self.hidden, 0.0);
        for h in 0..self.hidden {
            let row = &self.w1[h * self.in_dim..(h + 1) * self.in_dim];
            let mut acc = self.b1[h];
            for (w, x) in row.iter().zip(input.iter()) {
                acc += w * x;
            }
            cache.hidden_act[h] = acc.tanh();
        }
        let mut rgb = [0.0; 3];
        for k in 0..3 {
            let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
            let mut acc = self.b2[k];
            for (w, h) in row.iter().zip(cache.hidden_act.iter()) {
                acc += w * h;
            }
            cache.out_pre[k] = acc;
            rgb[k] = sigmoid(acc);
        }
        rgb
    }

    /// Backward pass from d(loss)/d(rgb). Accumulates parameter gradients
    /// into `grads` and writes d(loss)/d(input) into `d_input`.
    pub fn backward(
        &self,
        cache: &DecoderCache,
        d_rgb: [f64; 3],
        grads: &mut DecoderMlp,
        d_input: &mut [f64],
    ) {
        let mut d_out_pre = [0.0; 3];
        for k in 0..3 {
            let s = sigmoid(cache.out_pre[k]);
            d_out_pre[k] = d_rgb[k] * s * (1.0 - s);
        }
        let mut d_hidden = vec![0.0; self.hidden];
        for k in 0..3 {
            let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
            let grow = &mut grads.w2[k * self.hidden..(k + 1) * self.hidden];
            for h in 0..self.hidden {
                d_hidden[h] += row[h] * d_out_pre[k];
                grow[h] += cache.hidden_act[h] * d_out_pre[k];
            }
            grads.b2[k] += d_out_pre[k];
        }
        d_input.iter_mut().for_each(|v| *v = 0.0);
        for h in 0..self.hidden {
            let act = cache.hidden_act[h];
            let d_pre = d_hidden[h] * (1.0 - act * act);
            let row = &self.w1[h * self.in_dim..(h + 1) * self.in_dim];
            let grow = &mut grads.w1[h * self.in_dim..(h + 1) * self.in_dim];
            for i in 0..self.in_dim {
                d_input[i] += row[i] * d_pre;
                grow[i] += cache.input[i] * d_pre;
            }
            grads.b1[h] += d_pre;
        }
    }
}

/// Kernel banks attached to one grid; the second bank exists only for the
/// 2-D scale coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct BankSet {
    pub primary: MipKernelBank,
    pub secondary: Option<MipKernelBank>,
}

/// The assembled field. `*_banks == None` is the single-scale baseline: the
/// shared grids are sampled directly and the scale coordinate is ignored.
#[derive(Debug, Clone)]
pub struct RadianceField {
    pub density_grid: Grid,
    pub appearance_grid: Grid,
    pub density_banks: Option<BankSet>,
    pub appearance_banks: Option<BankSet>,
    /// Rank components -> appearance channels, row-major `[channels][feat]`.
    pub basis: Vec<f64>,
    pub channels: usize,
    pub decoder: DecoderMlp,
    pub density_shift: f64,
    pub kind: ScaleKind,
    pub primary_map: ScaleIndexMap,
    pub secondary_map: Option<ScaleIndexMap>,
    /// Bumped on every mutation; generated-grid caches key on it.
    pub param_version: u64,
}

impl RadianceField {
    pub fn validate(&self) -> Result<()> {
        self.density_grid.validate()?;
        self.appearance_grid.validate()?;
        if self.density_grid.family() != self.appearance_grid.family() {
            return Err(Error::Shape(
                "density and appearance grids must share the factorization family".into(),
            ));
        }
        if self.density_banks.is_some() != self.appearance_banks.is_some() {
            return Err(Error::Shape(
                "density and appearance must both be mip or both baseline".into(),
            ));
        }
        for (bank_set, grid, label) in [
            (&self.density_banks, &self.density_grid, "density"),
            (&self.appearance_banks, &self.appearance_grid, "appearance"),
        ] {
            if let Some(bs) = bank_set {
                if bs.primary.rank != grid.rank() {
                    return Err(Error::Shape(format!(
                        "{label} bank rank {} does not match grid rank {}",
                        bs.primary.rank,
                        grid.rank()
                    )));
                }
                if bs.primary.scales != self.primary_map.len() {
                    return Err(Error::Shape(format!(
                        "{label} bank has {} scales, index map has {}",
                        bs.primary.scales,
                        self.primary_map.len()
                    )));
                }
                match (self.kind, &bs.secondary) {
                    (ScaleKind::TwoD, None) => {
                        return Err(Error::Shape(format!(
                            "2-d scale coordinate needs a secondary {label} bank"
                        )))
                    }
                    (ScaleKind::TwoD, Some(_)) if self.secondary_map.is_none() => {
                        return Err(Error::Shape("2-d kind needs a secondary index map".into()))
                    }
                    (ScaleKind::Discrete | ScaleKind::Continuous, Some(_)) => {
                        return Err(Error::Shape(format!(
                            "secondary {label} bank present without the 2-d kind"
                        )))
                    }
                    _ => {}
                }
            }
        }
        if self.basis.len() != self.channels * self.appearance_grid.feature_len() {
            return Err(Error::Shape("basis shape mismatch".into()));
        }
        if self.decoder.in_dim != self.channels + DIR_ENC_LEN {
            return Err(Error::Shape("decoder input dim mismatch".into()));
        }
        Ok(())
    }

    pub fn is_baseline(&self) -> bool {
        self.density_banks.is_none()
    }

    /// Fractional index for the primary scale axis of a coordinate.
    pub fn primary_index(&self, coord: &ScaleCoordinate) -> Result<f64> {
        if coord.kind != self.kind {
            return Err(Error::InvalidArg(format!(
                "coordinate kind {:?} does not match field kind {:?}",
                coord.kind, self.kind
            )));
        }
        Ok(self.primary_map.fractional_index(coord.s_primary))
    }

    pub fn secondary_index(&self, coord: &ScaleCoordinate) -> Result<Option<f64>> {
        match (self.kind, coord.s_secondary, &self.secondary_map) {
            (ScaleKind::TwoD, Some(t), Some(map)) => Ok(Some(map.fractional_index(t))),
            (ScaleKind::TwoD, _, _) => Err(Error::InvalidArg(
                "2-d coordinate requires a distance channel and secondary map".into(),
            )),
            _ => Ok(None),
        }
    }

    /// Generate the per-scale grids this parameter snapshot implies.
    pub fn prepare(&self) -> Result<FieldEval<'_>> {
        let density = self.make_ms(&self.density_grid, &self.density_banks)?;
        let appearance = self.make_ms(&self.appearance_grid, &self.appearance_banks)?;
        Ok(FieldEval {
            field: self,
            density,
            appearance,
            version: self.param_version,
        })
    }

    fn make_ms(&self, grid: &Grid, banks: &Option<BankSet>) -> Result<MsSet> {
        let gen_one = |bank: &MipKernelBank| -> Result<Vec<Grid>> {
            let ms = match grid {
                Grid::Vm(g) => generate_vm(g, bank)?,
                Grid::Planes(g) => generate_planes(g, bank)?,
            };
            Ok(match ms {
                MultiScaleGrid::Vm(v) => v.into_iter().map(Grid::Vm).collect(),
                MultiScaleGrid::Planes(v) => v.into_iter().map(Grid::Planes).collect(),
            })
        };
        match banks {
            Some(bs) => Ok(MsSet {
                primary: gen_one(&bs.primary)?,
                secondary: bs.secondary.as_ref().map(gen_one).transpose()?,
            }),
            // Baseline: one "scale", the shared grid itself.
            None => Ok(MsSet {
                primary: vec![grid.clone()],
                secondary: None,
            }),
        }
    }
}

/// Generated multi-scale grids for one underlying grid.
#[derive(Debug, Clone)]
pub struct MsSet {
    pub primary: Vec<Grid>,
    pub secondary: Option<Vec<Grid>>,
}

/// Blend between the two scale grids bracketing a fractional index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleBlend {
    pub lo: usize,
    pub hi: usize,
    pub w_hi: f64,
}

impl ScaleBlend {
    /// Clamp `idx` into [0, scales-1] and split into floor/ceil weights.
    pub fn new(idx: f64, scales: usize) -> Self {
        debug_assert!(scales >= 1);
        let idx = idx.clamp(0.0, (scales - 1) as f64);
        let lo = (idx.floor() as usize).min(scales - 1);
        let hi = (lo + 1).min(scales - 1);
        let w_hi = if hi == lo { 0.0 } else { idx - lo as f64 };
        ScaleBlend { lo, hi, w_hi }
    }
}

/// Sample the bracketing scales of a multi-scale set and blend linearly.
/// Equals single-scale sampling when the index is integral.
pub fn extract_scaled_into(
    ms: &[Grid],
    st: &PointStencil,
    idx: f64,
    out: &mut [f64],
    scratch: &mut [f64],
) {
    let blend = ScaleBlend::new(idx, ms.len());
    ms[blend.lo].sample_into(st, out);
    if blend.w_hi != 0.0 {
        ms[blend.hi].sample_into(st, scratch);
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            *o = *o * (1.0 - blend.w_hi) + *s * blend.w_hi;
        }
    }
}

/// Allocating convenience wrapper around `extract_scaled_into`.
pub fn extract_scaled(ms: &[Grid], p: [f64; 3], idx: f64) -> Vec<f64> {
    let st = PointStencil::new(p, ms[0].resolution());
    let n = ms[0].feature_len();
    let mut out = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    extract_scaled_into(ms, &st, idx, &mut out, &mut scratch);
    out
}

/// Bank-A features at the primary index and bank-B features at the secondary
/// index, averaged elementwise.
pub fn extract_2d_into(
    set: &MsSet,
    st: &PointStencil,
    idx_primary: f64,
    idx_secondary: f64,
    out: &mut [f64],
    scratch_a: &mut [f64],
    scratch_b: &mut [f64],
) -> Result<()> {
    let secondary = set
        .secondary
        .as_ref()
        .ok_or_else(|| Error::Shape("2-d extraction needs a secondary bank".into()))?;
    extract_scaled_into(&set.primary, st, idx_primary, out, scratch_a);
    extract_scaled_into(secondary, st, idx_secondary, scratch_b, scratch_a);
    for (o, b) in out.iter_mut().zip(scratch_b.iter()) {
        *o = 0.5 * (*o + *b);
    }
    Ok(())
}

/// Reusable per-thread buffers for field evaluation.
#[derive(Debug, Clone, Default)]
pub struct FeatScratch {
    pub feat: Vec<f64>,
    pub alt_a: Vec<f64>,
    pub alt_b: Vec<f64>,
    pub dec_in: Vec<f64>,
    pub dec_cache: DecoderCache,
}

impl FeatScratch {
    fn ensure(&mut self, feat_len: usize, in_dim: usize) {
        if self.feat.len() < feat_len {
            self.feat.resize(feat_len, 0.0);
            self.alt_a.resize(feat_len, 0.0);
            self.alt_b.resize(feat_len, 0.0);
        }
        if self.dec_in.len() < in_dim {
            self.dec_in.resize(in_dim, 0.0);
        }
    }
}

/// A prepared parameter snapshot: the generated multi-scale grids plus the
/// field they came from. Read-only; safe to share across workers.
#[derive(Debug)]
pub struct FieldEval<'a> {
    pub field: &'a RadianceField,
    pub density: MsSet,
    pub appearance: MsSet,
    pub version: u64,
}

impl FieldEval<'_> {
    /// True when the field has mutated since this snapshot was generated;
    /// cached snapshots key their validity on the parameter version.
    pub fn is_stale(&self, field: &RadianceField) -> bool {
        self.version != field.param_version
    }

    /// Blended density components at a point (term-major, unreduced).
    pub fn density_features(
        &self,
        st: &PointStencil,
        coord: &ScaleCoordinate,
        out: &mut [f64],
        scratch_a: &mut [f64],
        scratch_b: &mut [f64],
    ) -> Result<()> {
        self.extract(&self.density, st, coord, out, scratch_a, scratch_b)
    }

    pub fn appearance_features(
        &self,
        st: &PointStencil,
        coord: &ScaleCoordinate,
        out: &mut [f64],
        scratch_a: &mut [f64],
        scratch_b: &mut [f64],
    ) -> Result<()> {
        self.extract(&self.appearance, st, coord, out, scratch_a, scratch_b)
    }

    fn extract(
        &self,
        set: &MsSet,
        st: &PointStencil,
        coord: &ScaleCoordinate,
        out: &mut [f64],
        scratch_a: &mut [f64],
        scratch_b: &mut [f64],
    ) -> Result<()> {
        if self.field.is_baseline() {
            set.primary[0].sample_into(st, out);
            return Ok(());
        }
        match self.field.kind {
            ScaleKind::TwoD => {
                let idx_p = self.field.primary_index(coord)?;
                let idx_s = self
                    .field
                    .secondary_index(coord)?
                    .ok_or_else(|| Error::InvalidArg("missing distance channel".into()))?;
                extract_2d_into(set, st, idx_p, idx_s, out, scratch_a, scratch_b)
            }
            _ => {
                let idx = self.field.primary_index(coord)?;
                extract_scaled_into(&set.primary, st, idx, out, scratch_a);
                Ok(())
            }
        }
    }

    /// Volume density at a (clamped) point: softplus of the summed density
    /// components plus the trainable shift. View-independent by
    /// construction: no direction input exists on this path.
    pub fn density(
        &self,
        p: [f64; 3],
        coord: &ScaleCoordinate,
        scratch: &mut FeatScratch,
    ) -> Result<f64> {
        let n = self.field.density_grid.feature_len();
        scratch.ensure(
            n.max(self.field.appearance_grid.feature_len()),
            self.field.decoder.in_dim,
        );
        let st = PointStencil::new(p, self.field.density_grid.resolution());
        let mut feat = std::mem::take(&mut scratch.feat);
        let mut a = std::mem::take(&mut scratch.alt_a);
        let mut b = std::mem::take(&mut scratch.alt_b);
        let res = self.density_features(&st, coord, &mut feat[..n], &mut a[..n], &mut b[..n]);
        let sum: f64 = feat[..n].iter().sum();
        scratch.feat = feat;
        scratch.alt_a = a;
        scratch.alt_b = b;
        res?;
        Ok(softplus(sum + self.field.density_shift))
    }

    /// RGB color for a point and view direction. Non-unit directions are
    /// normalized; zero directions are rejected.
    pub fn color(
        &self,
        p: [f64; 3],
        dir: [f64; 3],
        coord: &ScaleCoordinate,
        scratch: &mut FeatScratch,
    ) -> Result<[f64; 3]> {
        let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        if norm < 1e-12 {
            return Err(Error::InvalidArg("zero view direction".into()));
        }
        let d = [dir[0] / norm, dir[1] / norm, dir[2] / norm];
        let n = self.field.appearance_grid.feature_len();
        let channels = self.field.channels;
        let in_dim = self.field.decoder.in_dim;
        scratch.ensure(n.max(self.field.density_grid.feature_len()), in_dim);
        let st = PointStencil::new(p, self.field.appearance_grid.resolution());
        let mut feat = std::mem::take(&mut scratch.feat);
        let mut a = std::mem::take(&mut scratch.alt_a);
        let mut b = std::mem::take(&mut scratch.alt_b);
        let res = self.appearance_features(&st, coord, &mut feat[..n], &mut a[..n], &mut b[..n]);
        if res.is_ok() {
            apply_basis(
                &self.field.basis,
                channels,
                &feat[..n],
                &mut scratch.dec_in[..channels],
            );
        }
        scratch.feat = feat;
        scratch.alt_a = a;
        scratch.alt_b = b;
        res?;
        encode_direction(d, &mut scratch.dec_in[channels..channels + DIR_ENC_LEN]);
        let rgb = self
            .field
            .decoder
            .forward(&scratch.dec_in[..in_dim], &mut scratch.dec_cache);
        Ok(rgb)
    }
}

/// `out[c] = sum_f basis[c][f] * raw[f]`.
pub fn apply_basis(basis: &[f64], channels: usize, raw: &[f64], out: &mut [f64]) {
    let n = raw.len();
    debug_assert_eq!(basis.len(), channels * n);
    for (c, slot) in out.iter_mut().enumerate() {
        let row = &basis[c * n..(c + 1) * n];
        let mut acc = 0.0;
        for (w, x) in row.iter().zip(raw.iter()) {
            acc += w * x;
        }
        *slot = acc;
    }
}

/// Accumulates basis gradients and the pull-back onto raw features.
pub fn basis_backward(
    basis: &[f64],
    channels: usize,
    raw: &[f64],
    d_channels: &[f64],
    d_basis: &mut [f64],
    d_raw: &mut [f64],
) {
    let n = raw.len();
    d_raw.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..channels {
        let g = d_channels[c];
        let row = &basis[c * n..(c + 1) * n];
        let grow = &mut d_basis[c * n..(c + 1) * n];
        for f in 0..n {
            d_raw[f] += row[f] * g;
            grow[f] += raw[f] * g;
        }
    }
}
