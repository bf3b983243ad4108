//! Factorized 3D feature grids: vector-matrix (VM) and tri-plane variants.
//!
//! Both factorizations store rank-major contiguous arrays so the depth-wise
//! convolutions in `mipgen` can stride over the spatial dimensions per rank.
//! Sampling uses corner-aligned nodes in [-1, 1]: node `i` of an axis with
//! `n` nodes sits at `-1 + 2i/(n-1)`. Out-of-range points clamp to the
//! boundary.

use crate::error::{Error, Result};

/// Max element count for dense reconstructions (oracle / visualization only).
pub const DENSE_ELEMENT_BUDGET: usize = 1 << 22;

/// Which factorization family a grid belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridFamily {
    Vm,
    Planes,
}

/// Vector-matrix factorization: per rank, an axis vector paired with the
/// matrix over the complementary plane. Term t couples `vectors[t]` with
/// `matrices[t]`:
///
/// - term 0: `v^X` (len H) with `M^{YZ}` (W x L)
/// - term 1: `v^Y` (len W) with `M^{XZ}` (H x L)
/// - term 2: `v^Z` (len L) with `M^{XY}` (H x W)
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGridVM {
    pub rank: usize,
    pub channels: usize,
    /// (H, W, L) node counts along X, Y, Z.
    pub resolution: [usize; 3],
    /// Rank-major: `vectors[axis][r * len + i]`.
    pub vectors: [Vec<f64>; 3],
    /// Rank-major: `matrices[term][r * (a*b) + ia * b + ib]`.
    pub matrices: [Vec<f64>; 3],
}

/// Tri-plane factorization: the broadcast product of three axis-aligned
/// planes. `planes[0]` = YZ (Dy x Dz), `planes[1]` = XZ (Dx x Dz),
/// `planes[2]` = XY (Dx x Dy), each rank-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneGrid {
    pub rank: usize,
    pub channels: usize,
    /// (Dx, Dy, Dz).
    pub resolution: [usize; 3],
    pub planes: [Vec<f64>; 3],
}

/// Dense H x W x L x R tensor. Test oracle and visualization target only.
#[derive(Debug, Clone)]
pub struct DenseGrid3D {
    pub rank: usize,
    pub resolution: [usize; 3],
    /// Rank-major: `data[((r * H + h) * W + w) * L + l]`.
    pub data: Vec<f64>,
}

impl DenseGrid3D {
    pub fn zeros(resolution: [usize; 3], rank: usize) -> Result<Self> {
        let [h, w, l] = resolution;
        let n = h
            .checked_mul(w)
            .and_then(|x| x.checked_mul(l))
            .and_then(|x| x.checked_mul(rank))
            .ok_or_else(|| Error::Budget("dense grid size overflows usize".into()))?;
        if n > DENSE_ELEMENT_BUDGET {
            return Err(Error::Budget(format!(
                "dense grid needs {n} elements, budget is {DENSE_ELEMENT_BUDGET}"
            )));
        }
        Ok(DenseGrid3D {
            rank,
            resolution,
            data: vec![0.0; n],
        })
    }

    #[inline]
    pub fn idx(&self, h: usize, w: usize, l: usize, r: usize) -> usize {
        let [hh, ww, ll] = self.resolution;
        debug_assert!(h < hh && w < ww && l < ll && r < self.rank);
        ((r * hh + h) * ww + w) * ll + l
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, l: usize, r: usize) -> f64 {
        self.data[self.idx(h, w, l, r)]
    }
}

fn check_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{name} contains non-finite values")));
    }
    Ok(())
}

/// Per-term vector length: the axis the term's vector lives on.
#[inline]
pub fn vm_vector_len(resolution: [usize; 3], term: usize) -> usize {
    resolution[term]
}

/// Per-term matrix shape (rows, cols) over the complementary plane.
#[inline]
pub fn vm_matrix_shape(resolution: [usize; 3], term: usize) -> (usize, usize) {
    let [h, w, l] = resolution;
    match term {
        0 => (w, l), // YZ
        1 => (h, l), // XZ
        2 => (h, w), // XY
        _ => unreachable!("term index out of range"),
    }
}

/// Plane shape (rows, cols) for `planes[p]`.
#[inline]
pub fn plane_shape(resolution: [usize; 3], plane: usize) -> (usize, usize) {
    let [dx, dy, dz] = resolution;
    match plane {
        0 => (dy, dz),
        1 => (dx, dz),
        2 => (dx, dy),
        _ => unreachable!("plane index out of range"),
    }
}

impl FactorGridVM {
    pub fn zeros(resolution: [usize; 3], rank: usize, channels: usize) -> Result<Self> {
        validate_shape(resolution, rank, channels)?;
        let vectors = [
            vec![0.0; rank * vm_vector_len(resolution, 0)],
            vec![0.0; rank * vm_vector_len(resolution, 1)],
            vec![0.0; rank * vm_vector_len(resolution, 2)],
        ];
        let mk = |t: usize| {
            let (a, b) = vm_matrix_shape(resolution, t);
            vec![0.0; rank * a * b]
        };
        Ok(FactorGridVM {
            rank,
            channels,
            resolution,
            vectors,
            matrices: [mk(0), mk(1), mk(2)],
        })
    }

    pub fn validate(&self) -> Result<()> {
        validate_shape(self.resolution, self.rank, self.channels)?;
        for t in 0..3 {
            let vlen = self.rank * vm_vector_len(self.resolution, t);
            if self.vectors[t].len() != vlen {
                return Err(Error::Shape(format!(
                    "vector axis {t}: expected {vlen} values, got {}",
                    self.vectors[t].len()
                )));
            }
            let (a, b) = vm_matrix_shape(self.resolution, t);
            if self.matrices[t].len() != self.rank * a * b {
                return Err(Error::Shape(format!(
                    "matrix term {t}: expected {} values, got {}",
                    self.rank * a * b,
                    self.matrices[t].len()
                )));
            }
            check_finite("vm vector", &self.vectors[t])?;
            check_finite("vm matrix", &self.matrices[t])?;
        }
        Ok(())
    }

    /// Number of per-point feature components (term-major: 3 * rank).
    pub fn feature_len(&self) -> usize {
        3 * self.rank
    }

    #[inline]
    pub fn vector_at(&self, term: usize, r: usize, i: usize) -> f64 {
        self.vectors[term][r * vm_vector_len(self.resolution, term) + i]
    }

    #[inline]
    pub fn matrix_at(&self, term: usize, r: usize, ia: usize, ib: usize) -> f64 {
        let (a, b) = vm_matrix_shape(self.resolution, term);
        debug_assert!(ia < a && ib < b);
        self.matrices[term][(r * a + ia) * b + ib]
    }
}

impl PlaneGrid {
    pub fn zeros(resolution: [usize; 3], rank: usize, channels: usize) -> Result<Self> {
        validate_shape(resolution, rank, channels)?;
        let mk = |p: usize| {
            let (a, b) = plane_shape(resolution, p);
            vec![0.0; rank * a * b]
        };
        Ok(PlaneGrid {
            rank,
            channels,
            resolution,
            planes: [mk(0), mk(1), mk(2)],
        })
    }

    pub fn validate(&self) -> Result<()> {
        validate_shape(self.resolution, self.rank, self.channels)?;
        for p in 0..3 {
            let (a, b) = plane_shape(self.resolution, p);
            if self.planes[p].len() != self.rank * a * b {
                return Err(Error::Shape(format!(
                    "plane {p}: expected {} values, got {}",
                    self.rank * a * b,
                    self.planes[p].len()
                )));
            }
            check_finite("plane", &self.planes[p])?;
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        self.rank
    }

    #[inline]
    pub fn plane_at(&self, plane: usize, r: usize, ia: usize, ib: usize) -> f64 {
        let (a, b) = plane_shape(self.resolution, plane);
        debug_assert!(ia < a && ib < b);
        self.planes[plane][(r * a + ia) * b + ib]
    }
}

fn validate_shape(resolution: [usize; 3], rank: usize, channels: usize) -> Result<()> {
    if rank == 0 {
        return Err(Error::Shape("rank must be positive".into()));
    }
    if channels == 0 {
        return Err(Error::Shape("channels must be positive".into()));
    }
    if resolution.iter().any(|&n| n < 2) {
        return Err(Error::Shape(
            "every resolution component must be >= 2 (interpolation needs two nodes)".into(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Dense reconstruction oracles
// ---------------------------------------------------------------------------

/// Expand a VM grid to the dense per-rank tensor:
/// `out[h,w,l,r] = v_r^X[h] M_r^{YZ}[w,l] + v_r^Y[w] M_r^{XZ}[h,l] + v_r^Z[l] M_r^{XY}[h,w]`.
///
/// Rank components are retained; summation over rank happens in the decoder.
pub fn reconstruct_dense_vm(g: &FactorGridVM) -> Result<DenseGrid3D> {
    g.validate()?;
    let [h, w, l] = g.resolution;
    let mut dense = DenseGrid3D::zeros(g.resolution, g.rank)?;
    for r in 0..g.rank {
        for ih in 0..h {
            for iw in 0..w {
                for il in 0..l {
                    let value = g.vector_at(0, r, ih) * g.matrix_at(0, r, iw, il)
                        + g.vector_at(1, r, iw) * g.matrix_at(1, r, ih, il)
                        + g.vector_at(2, r, il) * g.matrix_at(2, r, ih, iw);
                    let idx = dense.idx(ih, iw, il, r);
                    dense.data[idx] = value;
                }
            }
        }
    }
    Ok(dense)
}

/// Expand a tri-plane grid:
/// `out[x,y,z,r] = M^{YZ}[y,z,r] * M^{XZ}[x,z,r] * M^{XY}[x,y,r]`.
pub fn reconstruct_dense_planes(g: &PlaneGrid) -> Result<DenseGrid3D> {
    g.validate()?;
    let [dx, dy, dz] = g.resolution;
    let mut dense = DenseGrid3D::zeros(g.resolution, g.rank)?;
    for r in 0..g.rank {
        for ix in 0..dx {
            for iy in 0..dy {
                for iz in 0..dz {
                    let value = g.plane_at(0, r, iy, iz)
                        * g.plane_at(1, r, ix, iz)
                        * g.plane_at(2, r, ix, iy);
                    let idx = dense.idx(ix, iy, iz, r);
                    dense.data[idx] = value;
                }
            }
        }
    }
    Ok(dense)
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Linear interpolation stencil on one axis: nodes `i0` and `i0 + 1` with
/// weights `(1 - frac, frac)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisStencil {
    pub i0: usize,
    pub frac: f64,
}

impl AxisStencil {
    /// Corner-aligned stencil for normalized coordinate `c` in [-1, 1] on an
    /// axis with `n >= 2` nodes. Coordinates outside [-1, 1] clamp.
    pub fn new(c: f64, n: usize) -> Self {
        debug_assert!(n >= 2);
        let c = c.clamp(-1.0, 1.0);
        let u = (c + 1.0) * 0.5 * (n - 1) as f64;
        let mut i0 = u.floor() as usize;
        if i0 >= n - 1 {
            i0 = n - 2;
        }
        AxisStencil {
            i0,
            frac: u - i0 as f64,
        }
    }

    #[inline]
    pub fn gather(&self, values: &[f64]) -> f64 {
        values[self.i0] * (1.0 - self.frac) + values[self.i0 + 1] * self.frac
    }
}

/// The three per-axis stencils for a sample point. All ranks of all factor
/// arrays at one resolution share these.
#[derive(Debug, Clone, Copy)]
pub struct PointStencil {
    pub axes: [AxisStencil; 3],
}

impl PointStencil {
    pub fn new(p: [f64; 3], resolution: [usize; 3]) -> Self {
        PointStencil {
            axes: [
                AxisStencil::new(p[0], resolution[0]),
                AxisStencil::new(p[1], resolution[1]),
                AxisStencil::new(p[2], resolution[2]),
            ],
        }
    }

    /// Stencil axes that index the rows/cols of a VM term's matrix (equal to
    /// the plane axes of the tri-plane layout).
    #[inline]
    pub fn plane_axes(&self, term: usize) -> (AxisStencil, AxisStencil) {
        match term {
            0 => (self.axes[1], self.axes[2]),
            1 => (self.axes[0], self.axes[2]),
            2 => (self.axes[0], self.axes[1]),
            _ => unreachable!(),
        }
    }
}

#[inline]
fn gather_1d(values: &[f64], r: usize, len: usize, s: AxisStencil) -> f64 {
    let base = r * len;
    values[base + s.i0] * (1.0 - s.frac) + values[base + s.i0 + 1] * s.frac
}

#[inline]
fn gather_2d(values: &[f64], r: usize, shape: (usize, usize), sa: AxisStencil, sb: AxisStencil) -> f64 {
    let (a, b) = shape;
    debug_assert!(sa.i0 + 1 < a);
    let base = (r * a + sa.i0) * b + sb.i0;
    let wa1 = sa.frac;
    let wa0 = 1.0 - wa1;
    let wb1 = sb.frac;
    let wb0 = 1.0 - wb1;
    wa0 * (values[base] * wb0 + values[base + 1] * wb1)
        + wa1 * (values[base + b] * wb0 + values[base + b + 1] * wb1)
}

#[inline]
fn scatter_1d(grad: &mut [f64], r: usize, len: usize, s: AxisStencil, g: f64) {
    let base = r * len;
    grad[base + s.i0] += g * (1.0 - s.frac);
    grad[base + s.i0 + 1] += g * s.frac;
}

#[inline]
fn scatter_2d(grad: &mut [f64], r: usize, shape: (usize, usize), sa: AxisStencil, sb: AxisStencil, g: f64) {
    let (a, b) = shape;
    let base = (r * a + sa.i0) * b + sb.i0;
    let wa1 = sa.frac;
    let wa0 = 1.0 - wa1;
    let wb1 = sb.frac;
    let wb0 = 1.0 - wb1;
    grad[base] += g * wa0 * wb0;
    grad[base + 1] += g * wa0 * wb1;
    grad[base + b] += g * wa1 * wb0;
    grad[base + b + 1] += g * wa1 * wb1;
}

/// Interpolated (vector, matrix) parts of one VM term at one rank.
#[inline]
pub fn vm_term_parts(g: &FactorGridVM, st: &PointStencil, term: usize, r: usize) -> (f64, f64) {
    let vlen = vm_vector_len(g.resolution, term);
    let (sa, sb) = st.plane_axes(term);
    let v = gather_1d(&g.vectors[term], r, vlen, st.axes[term]);
    let m = gather_2d(&g.matrices[term], r, vm_matrix_shape(g.resolution, term), sa, sb);
    (v, m)
}

/// Sample a VM grid at a stencil. Output is term-major: `out[t * R + r]`
/// holds `v_r(axis_t) * M_r(plane_t)`.
pub fn sample_vm_into(g: &FactorGridVM, st: &PointStencil, out: &mut [f64]) {
    debug_assert_eq!(out.len(), g.feature_len());
    for term in 0..3 {
        for r in 0..g.rank {
            let (v, m) = vm_term_parts(g, st, term, r);
            out[term * g.rank + r] = v * m;
        }
    }
}

/// Sample a VM grid at a normalized point.
pub fn sample_vm(g: &FactorGridVM, p: [f64; 3]) -> Vec<f64> {
    let st = PointStencil::new(p, g.resolution);
    let mut out = vec![0.0; g.feature_len()];
    sample_vm_into(g, &st, &mut out);
    out
}

/// Accumulate d(loss)/d(factors) for one sampled VM feature vector.
/// `d_out` is term-major like `sample_vm_into`'s output.
pub fn sample_vm_backward(
    g: &FactorGridVM,
    st: &PointStencil,
    d_out: &[f64],
    grad: &mut FactorGridVM,
) {
    for term in 0..3 {
        let vlen = vm_vector_len(g.resolution, term);
        let shape = vm_matrix_shape(g.resolution, term);
        let (sa, sb) = st.plane_axes(term);
        for r in 0..g.rank {
            let go = d_out[term * g.rank + r];
            if go == 0.0 {
                continue;
            }
            let (v, m) = vm_term_parts(g, st, term, r);
            scatter_1d(&mut grad.vectors[term], r, vlen, st.axes[term], go * m);
            scatter_2d(&mut grad.matrices[term], r, shape, sa, sb, go * v);
        }
    }
}

/// Interpolated values of the three planes at one rank.
#[inline]
pub fn plane_parts(g: &PlaneGrid, st: &PointStencil, r: usize) -> [f64; 3] {
    let mut parts = [0.0; 3];
    for (p, part) in parts.iter_mut().enumerate() {
        let (sa, sb) = st.plane_axes(p);
        *part = gather_2d(&g.planes[p], r, plane_shape(g.resolution, p), sa, sb);
    }
    parts
}

/// Sample a tri-plane grid: `out[r]` is the product of the three bilinear
/// plane samples at rank `r`.
pub fn sample_planes_into(g: &PlaneGrid, st: &PointStencil, out: &mut [f64]) {
    debug_assert_eq!(out.len(), g.feature_len());
    for (r, slot) in out.iter_mut().enumerate() {
        let parts = plane_parts(g, st, r);
        *slot = parts[0] * parts[1] * parts[2];
    }
}

pub fn sample_planes(g: &PlaneGrid, p: [f64; 3]) -> Vec<f64> {
    let st = PointStencil::new(p, g.resolution);
    let mut out = vec![0.0; g.feature_len()];
    sample_planes_into(g, &st, &mut out);
    out
}

/// Accumulate d(loss)/d(planes) for one sampled tri-plane feature vector.
pub fn sample_planes_backward(
    g: &PlaneGrid,
    st: &PointStencil,
    d_out: &[f64],
    grad: &mut PlaneGrid,
) {
    for r in 0..g.rank {
        let go = d_out[r];
        if go == 0.0 {
            continue;
        }
        let parts = plane_parts(g, st, r);
        for p in 0..3 {
            let others = match p {
                0 => parts[1] * parts[2],
                1 => parts[0] * parts[2],
                _ => parts[0] * parts[1],
            };
            let (sa, sb) = st.plane_axes(p);
            scatter_2d(
                &mut grad.planes[p],
                r,
                plane_shape(g.resolution, p),
                sa,
                sb,
                go * others,
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Upsampling
// ---------------------------------------------------------------------------

/// Linearly resample a rank-major vector array onto a finer corner-aligned
/// lattice. Node positions: old node i at `i/(n_old-1)` of the axis extent.
fn resample_vec(values: &[f64], rank: usize, n_old: usize, n_new: usize) -> Vec<f64> {
    let mut out = vec![0.0; rank * n_new];
    for r in 0..rank {
        for j in 0..n_new {
            let u = if n_new == 1 {
                0.0
            } else {
                j as f64 * (n_old - 1) as f64 / (n_new - 1) as f64
            };
            let mut i0 = u.floor() as usize;
            if i0 >= n_old - 1 {
                i0 = n_old - 2;
            }
            let f = u - i0 as f64;
            out[r * n_new + j] =
                values[r * n_old + i0] * (1.0 - f) + values[r * n_old + i0 + 1] * f;
        }
    }
    out
}

/// Bilinear resample of a rank-major 2-D array, done as two 1-D passes.
fn resample_mat(
    values: &[f64],
    rank: usize,
    (a_old, b_old): (usize, usize),
    (a_new, b_new): (usize, usize),
) -> Vec<f64> {
    // Pass 1: rows (axis a), per column.
    let mut tmp = vec![0.0; rank * a_new * b_old];
    for r in 0..rank {
        for ja in 0..a_new {
            let u = if a_new == 1 {
                0.0
            } else {
                ja as f64 * (a_old - 1) as f64 / (a_new - 1) as f64
            };
            let mut i0 = u.floor() as usize;
            if i0 >= a_old - 1 {
                i0 = a_old - 2;
            }
            let f = u - i0 as f64;
            for jb in 0..b_old {
                let lo = values[(r * a_old + i0) * b_old + jb];
                let hi = values[(r * a_old + i0 + 1) * b_old + jb];
                tmp[(r * a_new + ja) * b_old + jb] = lo * (1.0 - f) + hi * f;
            }
        }
    }
    // Pass 2: columns (axis b).
    let mut out = vec![0.0; rank * a_new * b_new];
    for r in 0..rank {
        for ja in 0..a_new {
            for jb in 0..b_new {
                let u = if b_new == 1 {
                    0.0
                } else {
                    jb as f64 * (b_old - 1) as f64 / (b_new - 1) as f64
                };
                let mut i0 = u.floor() as usize;
                if i0 >= b_old - 1 {
                    i0 = b_old - 2;
                }
                let f = u - i0 as f64;
                let lo = tmp[(r * a_new + ja) * b_old + i0];
                let hi = tmp[(r * a_new + ja) * b_old + i0 + 1];
                out[(r * a_new + ja) * b_new + jb] = lo * (1.0 - f) + hi * f;
            }
        }
    }
    out
}

fn check_upsample(old: [usize; 3], new: [usize; 3]) -> Result<()> {
    if new.iter().zip(old.iter()).any(|(n, o)| n < o) {
        return Err(Error::InvalidArg(format!(
            "upsample cannot shrink resolution {old:?} -> {new:?}"
        )));
    }
    if new.iter().any(|&n| n < 2) {
        return Err(Error::Shape("upsampled resolution must be >= 2".into()));
    }
    Ok(())
}

/// Resample a VM grid onto a finer node lattice. Identity when the
/// resolution is unchanged.
pub fn upsample_vm(g: &FactorGridVM, new_resolution: [usize; 3]) -> Result<FactorGridVM> {
    check_upsample(g.resolution, new_resolution)?;
    if new_resolution == g.resolution {
        return Ok(g.clone());
    }
    let mut out = FactorGridVM::zeros(new_resolution, g.rank, g.channels)?;
    for t in 0..3 {
        out.vectors[t] = resample_vec(
            &g.vectors[t],
            g.rank,
            vm_vector_len(g.resolution, t),
            vm_vector_len(new_resolution, t),
        );
        out.matrices[t] = resample_mat(
            &g.matrices[t],
            g.rank,
            vm_matrix_shape(g.resolution, t),
            vm_matrix_shape(new_resolution, t),
        );
    }
    Ok(out)
}

pub fn upsample_planes(g: &PlaneGrid, new_resolution: [usize; 3]) -> Result<PlaneGrid> {
    check_upsample(g.resolution, new_resolution)?;
    if new_resolution == g.resolution {
        return Ok(g.clone());
    }
    let mut out = PlaneGrid::zeros(new_resolution, g.rank, g.channels)?;
    for p in 0..3 {
        out.planes[p] = resample_mat(
            &g.planes[p],
            g.rank,
            plane_shape(g.resolution, p),
            plane_shape(new_resolution, p),
        );
    }
    Ok(out)
}

/// Trilinear interpolation of a dense grid at a normalized point, per rank.
/// Shares the corner-aligned / clamping convention with the factor samplers,
/// which makes it the reference the samplers are tested against.
pub fn sample_dense(dense: &DenseGrid3D, p: [f64; 3]) -> Vec<f64> {
    let st = PointStencil::new(p, dense.resolution);
    let [sx, sy, sz] = st.axes;
    let mut out = vec![0.0; dense.rank];
    for (r, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (ix, wx) in [(sx.i0, 1.0 - sx.frac), (sx.i0 + 1, sx.frac)] {
            for (iy, wy) in [(sy.i0, 1.0 - sy.frac), (sy.i0 + 1, sy.frac)] {
                for (iz, wz) in [(sz.i0, 1.0 - sz.frac), (sz.i0 + 1, sz.frac)] {
                    acc += wx * wy * wz * dense.get(ix, iy, iz, r);
                }
            }
        }
        *slot = acc;
    }
    out
}

/// A 2-D slice of the reconstructed feature volume at fixed Z, one rank
/// component. Used by the grid visualizer; avoids materializing the dense
/// tensor.
pub fn slice_xy_vm(g: &FactorGridVM, r: usize, iz: usize) -> Vec<f64> {
    let [h, w, _] = g.resolution;
    let mut out = vec![0.0; h * w];
    for ih in 0..h {
        for iw in 0..w {
            out[ih * w + iw] = g.vector_at(0, r, ih) * g.matrix_at(0, r, iw, iz)
                + g.vector_at(1, r, iw) * g.matrix_at(1, r, ih, iz)
                + g.vector_at(2, r, iz) * g.matrix_at(2, r, ih, iw);
        }
    }
    out
}

pub fn slice_xy_planes(g: &PlaneGrid, r: usize, iz: usize) -> Vec<f64> {
    let [dx, dy, _] = g.resolution;
    let mut out = vec![0.0; dx * dy];
    for ix in 0..dx {
        for iy in 0..dy {
            out[ix * dy + iy] = g.plane_at(0, r, iy, iz)
                * g.plane_at(1, r, ix, iz)
                * g.plane_at(2, r, ix, iy);
        }
    }
    out
}
