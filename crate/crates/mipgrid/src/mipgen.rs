//! Multi-scale grid generation.
//!
//! A bank of per-scale, per-axis, per-rank kernels turns the shared factor
//! grid into S filtered variants: vectors get 1-D kernels, matrices and
//! planes get 2-D kernels, depth-wise (no cross-rank mixing). Scale index 0
//! is the highest scale (full-resolution rendering), S-1 the lowest.
//!
//! Convolutions are centered cross-correlations with replicate padding, the
//! same convention the dense 3-D oracle uses, which keeps the separability
//! property exact.

use crate::error::{Error, Result};
use crate::factor_grids::{
    plane_shape, vm_matrix_shape, vm_vector_len, DenseGrid3D, FactorGridVM, GridFamily, PlaneGrid,
    DENSE_ELEMENT_BUDGET,
};

/// Per-scale, per-axis, per-rank depth-wise convolution kernels.
///
/// For the VM family each (scale, term, rank) slot holds a 1-D kernel for
/// the term's vector and a K x K kernel for its matrix. The planes family
/// holds only the K x K kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct MipKernelBank {
    pub family: GridFamily,
    pub scales: usize,
    pub kernel_size: usize,
    pub rank: usize,
    /// `[scale][term][rank][tap]`, flattened; empty for the planes family.
    pub k1d: Vec<f64>,
    /// `[scale][slot][rank][row][col]`, flattened. Slot = VM matrix term or
    /// plane index.
    pub k2d: Vec<f64>,
    pub trainable: bool,
}

impl MipKernelBank {
    fn check_params(scales: usize, kernel_size: usize, rank: usize) -> Result<()> {
        if scales < 2 {
            return Err(Error::Shape("kernel bank needs at least 2 scales".into()));
        }
        if kernel_size % 2 == 0 || kernel_size == 0 {
            return Err(Error::InvalidArg(format!(
                "kernel size must be odd and positive, got {kernel_size}"
            )));
        }
        if rank == 0 {
            return Err(Error::Shape("kernel bank rank must be positive".into()));
        }
        Ok(())
    }

    /// All-zero bank with identity shape bookkeeping (used for gradients).
    pub fn zeros(family: GridFamily, scales: usize, kernel_size: usize, rank: usize) -> Result<Self> {
        Self::check_params(scales, kernel_size, rank)?;
        let k1d_len = match family {
            GridFamily::Vm => scales * 3 * rank * kernel_size,
            GridFamily::Planes => 0,
        };
        Ok(MipKernelBank {
            family,
            scales,
            kernel_size,
            rank,
            k1d: vec![0.0; k1d_len],
            k2d: vec![0.0; scales * 3 * rank * kernel_size * kernel_size],
            trainable: true,
        })
    }

    /// Identity bank: center tap 1, everything else 0. Generation with it
    /// reproduces the shared grid at every scale.
    pub fn identity(family: GridFamily, scales: usize, kernel_size: usize, rank: usize) -> Result<Self> {
        let mut bank = Self::zeros(family, scales, kernel_size, rank)?;
        let k = kernel_size;
        let c = k / 2;
        for scale in 0..scales {
            for slot in 0..3 {
                for r in 0..rank {
                    if family == GridFamily::Vm {
                        let idx = bank.k1d_index(scale, slot, r, c);
                        bank.k1d[idx] = 1.0;
                    }
                    let idx = bank.k2d_index(scale, slot, r, c, c);
                    bank.k2d[idx] = 1.0;
                }
            }
        }
        Ok(bank)
    }

    #[inline]
    pub fn k1d_index(&self, scale: usize, term: usize, r: usize, tap: usize) -> usize {
        ((scale * 3 + term) * self.rank + r) * self.kernel_size + tap
    }

    #[inline]
    pub fn k2d_index(&self, scale: usize, slot: usize, r: usize, row: usize, col: usize) -> usize {
        let k = self.kernel_size;
        (((scale * 3 + slot) * self.rank + r) * k + row) * k + col
    }

    #[inline]
    pub fn k1d_slice(&self, scale: usize, term: usize, r: usize) -> &[f64] {
        let base = self.k1d_index(scale, term, r, 0);
        &self.k1d[base..base + self.kernel_size]
    }

    #[inline]
    pub fn k2d_slice(&self, scale: usize, slot: usize, r: usize) -> &[f64] {
        let base = self.k2d_index(scale, slot, r, 0, 0);
        &self.k2d[base..base + self.kernel_size * self.kernel_size]
    }

    pub fn validate_for_vm(&self, grid: &FactorGridVM) -> Result<()> {
        if self.family != GridFamily::Vm {
            return Err(Error::Shape("bank family is not VM".into()));
        }
        if self.rank != grid.rank {
            return Err(Error::Shape(format!(
                "bank rank {} does not match grid rank {}",
                self.rank, grid.rank
            )));
        }
        Ok(())
    }

    pub fn validate_for_planes(&self, grid: &PlaneGrid) -> Result<()> {
        if self.family != GridFamily::Planes {
            return Err(Error::Shape("bank family is not planes".into()));
        }
        if self.rank != grid.rank {
            return Err(Error::Shape(format!(
                "bank rank {} does not match grid rank {}",
                self.rank, grid.rank
            )));
        }
        Ok(())
    }

    /// Second moments of every kernel at one scale, in report order:
    /// VM: per term the 1-D kernels (rank-major), then per slot the 2-D
    /// kernels; planes: 2-D kernels only.
    pub fn second_moments(&self, scale: usize) -> Result<Vec<f64>> {
        if scale >= self.scales {
            return Err(Error::InvalidArg(format!(
                "scale {scale} out of range (S = {})",
                self.scales
            )));
        }
        let mut out = Vec::new();
        if self.family == GridFamily::Vm {
            for term in 0..3 {
                for r in 0..self.rank {
                    out.push(second_moment_1d(self.k1d_slice(scale, term, r))?);
                }
            }
        }
        for slot in 0..3 {
            for r in 0..self.rank {
                out.push(second_moment_2d(
                    self.k2d_slice(scale, slot, r),
                    self.kernel_size,
                )?);
            }
        }
        Ok(out)
    }

    /// Mean kernel second moment at one scale.
    pub fn mean_second_moment(&self, scale: usize) -> Result<f64> {
        let m = self.second_moments(scale)?;
        Ok(m.iter().sum::<f64>() / m.len() as f64)
    }
}

/// S filtered copies of a shared grid, all at the shared resolution/rank.
#[derive(Debug, Clone)]
pub enum MultiScaleGrid {
    Vm(Vec<FactorGridVM>),
    Planes(Vec<PlaneGrid>),
}

impl MultiScaleGrid {
    pub fn scales(&self) -> usize {
        match self {
            MultiScaleGrid::Vm(v) => v.len(),
            MultiScaleGrid::Planes(v) => v.len(),
        }
    }
}

// ---------------------------------------------------------------------------
// Gaussian initialization
// ---------------------------------------------------------------------------

/// Normalized discrete Gaussian: `w[j] ~ exp(-(j-c)^2 / (2 sigma^2))`,
/// `c = (K-1)/2`, scaled to sum 1.
pub fn gaussian_kernel_1d(kernel_size: usize, sigma: f64) -> Result<Vec<f64>> {
    if kernel_size % 2 == 0 || kernel_size == 0 {
        return Err(Error::InvalidArg("kernel size must be odd".into()));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArg(format!("stdev must be positive, got {sigma}")));
    }
    let c = (kernel_size - 1) as f64 / 2.0;
    let mut w: Vec<f64> = (0..kernel_size)
        .map(|j| (-(j as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    Ok(w)
}

/// Gaussian-initialized bank: every 1-D kernel at scale i is the discrete
/// Gaussian with `stdevs[i]`; every 2-D kernel is the outer product of that
/// 1-D kernel with itself (so it also sums to 1).
pub fn init_gaussian(
    family: GridFamily,
    scales: usize,
    kernel_size: usize,
    rank: usize,
    stdevs: &[f64],
) -> Result<MipKernelBank> {
    if stdevs.len() != scales {
        return Err(Error::Shape(format!(
            "need {scales} stdevs, got {}",
            stdevs.len()
        )));
    }
    let mut bank = MipKernelBank::zeros(family, scales, kernel_size, rank)?;
    for (scale, &sigma) in stdevs.iter().enumerate() {
        let g = gaussian_kernel_1d(kernel_size, sigma)?;
        for slot in 0..3 {
            for r in 0..rank {
                if family == GridFamily::Vm {
                    let base = bank.k1d_index(scale, slot, r, 0);
                    bank.k1d[base..base + kernel_size].copy_from_slice(&g);
                }
                for row in 0..kernel_size {
                    for col in 0..kernel_size {
                        let idx = bank.k2d_index(scale, slot, r, row, col);
                        bank.k2d[idx] = g[row] * g[col];
                    }
                }
            }
        }
    }
    Ok(bank)
}

// ---------------------------------------------------------------------------
// Convolution primitives (replicate padding, centered cross-correlation)
// ---------------------------------------------------------------------------

#[inline]
fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// `out[n] = sum_j k[j] * in[clamp(n + j - c)]`.
pub fn conv1d_replicate(input: &[f64], kernel: &[f64], out: &mut [f64]) {
    let n = input.len();
    let k = kernel.len();
    let c = (k / 2) as isize;
    debug_assert_eq!(out.len(), n);
    for (i, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &kj) in kernel.iter().enumerate() {
            acc += kj * input[clamp_idx(i as isize + j as isize - c, n)];
        }
        *slot = acc;
    }
}

/// Reverse of `conv1d_replicate`: scatters `d_out` into `d_input` and, when
/// given, accumulates the kernel gradient.
pub fn conv1d_replicate_backward(
    input: &[f64],
    kernel: &[f64],
    d_out: &[f64],
    d_input: &mut [f64],
    mut d_kernel: Option<&mut [f64]>,
) {
    let n = input.len();
    let k = kernel.len();
    let c = (k / 2) as isize;
    for i in 0..n {
        let go = d_out[i];
        if go == 0.0 {
            continue;
        }
        for j in 0..k {
            let src = clamp_idx(i as isize + j as isize - c, n);
            d_input[src] += kernel[j] * go;
            if let Some(dk) = d_kernel.as_deref_mut() {
                dk[j] += input[src] * go;
            }
        }
    }
}

/// 2-D centered cross-correlation with replicate padding over a
/// row-major `(rows, cols)` array.
pub fn conv2d_replicate(
    input: &[f64],
    (rows, cols): (usize, usize),
    kernel: &[f64],
    kernel_size: usize,
    out: &mut [f64],
) {
    let c = (kernel_size / 2) as isize;
    debug_assert_eq!(input.len(), rows * cols);
    debug_assert_eq!(kernel.len(), kernel_size * kernel_size);
    for ia in 0..rows {
        for ib in 0..cols {
            let mut acc = 0.0;
            for ka in 0..kernel_size {
                let sa = clamp_idx(ia as isize + ka as isize - c, rows);
                for kb in 0..kernel_size {
                    let sb = clamp_idx(ib as isize + kb as isize - c, cols);
                    acc += kernel[ka * kernel_size + kb] * input[sa * cols + sb];
                }
            }
            out[ia * cols + ib] = acc;
        }
    }
}

pub fn conv2d_replicate_backward(
    input: &[f64],
    (rows, cols): (usize, usize),
    kernel: &[f64],
    kernel_size: usize,
    d_out: &[f64],
    d_input: &mut [f64],
    mut d_kernel: Option<&mut [f64]>,
) {
    let c = (kernel_size / 2) as isize;
    for ia in 0..rows {
        for ib in 0..cols {
            let go = d_out[ia * cols + ib];
            if go == 0.0 {
                continue;
            }
            for ka in 0..kernel_size {
                let sa = clamp_idx(ia as isize + ka as isize - c, rows);
                for kb in 0..kernel_size {
                    let sb = clamp_idx(ib as isize + kb as isize - c, cols);
                    d_input[sa * cols + sb] += kernel[ka * kernel_size + kb] * go;
                    if let Some(dk) = d_kernel.as_deref_mut() {
                        dk[ka * kernel_size + kb] += input[sa * cols + sb] * go;
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Generate the S-scale VM grids by depth-wise convolution of every factor.
pub fn generate_vm(shared: &FactorGridVM, bank: &MipKernelBank) -> Result<MultiScaleGrid> {
    bank.validate_for_vm(shared)?;
    let mut grids = Vec::with_capacity(bank.scales);
    for scale in 0..bank.scales {
        let mut g = shared.clone();
        for term in 0..3 {
            let vlen = vm_vector_len(shared.resolution, term);
            let shape = vm_matrix_shape(shared.resolution, term);
            for r in 0..shared.rank {
                conv1d_replicate(
                    &shared.vectors[term][r * vlen..(r + 1) * vlen],
                    bank.k1d_slice(scale, term, r),
                    &mut g.vectors[term][r * vlen..(r + 1) * vlen],
                );
                let plane = shape.0 * shape.1;
                conv2d_replicate(
                    &shared.matrices[term][r * plane..(r + 1) * plane],
                    shape,
                    bank.k2d_slice(scale, term, r),
                    bank.kernel_size,
                    &mut g.matrices[term][r * plane..(r + 1) * plane],
                );
            }
        }
        grids.push(g);
    }
    Ok(MultiScaleGrid::Vm(grids))
}

/// Gradient of `generate_vm`: folds per-scale grid gradients back onto the
/// shared grid and (when requested) the kernel taps.
pub fn generate_vm_backward(
    shared: &FactorGridVM,
    bank: &MipKernelBank,
    d_scales: &[FactorGridVM],
    d_shared: &mut FactorGridVM,
    d_bank: Option<&mut MipKernelBank>,
) {
    let k = bank.kernel_size;
    let (mut dk1_all, mut dk2_all) = match d_bank {
        Some(b) => (Some(&mut b.k1d[..]), Some(&mut b.k2d[..])),
        None => (None, None),
    };
    for (scale, d_g) in d_scales.iter().enumerate() {
        for term in 0..3 {
            let vlen = vm_vector_len(shared.resolution, term);
            let shape = vm_matrix_shape(shared.resolution, term);
            for r in 0..shared.rank {
                let base1 = bank.k1d_index(scale, term, r, 0);
                conv1d_replicate_backward(
                    &shared.vectors[term][r * vlen..(r + 1) * vlen],
                    bank.k1d_slice(scale, term, r),
                    &d_g.vectors[term][r * vlen..(r + 1) * vlen],
                    &mut d_shared.vectors[term][r * vlen..(r + 1) * vlen],
                    dk1_all.as_deref_mut().map(|s| &mut s[base1..base1 + k]),
                );
                let plane = shape.0 * shape.1;
                let base2 = bank.k2d_index(scale, term, r, 0, 0);
                conv2d_replicate_backward(
                    &shared.matrices[term][r * plane..(r + 1) * plane],
                    shape,
                    bank.k2d_slice(scale, term, r),
                    k,
                    &d_g.matrices[term][r * plane..(r + 1) * plane],
                    &mut d_shared.matrices[term][r * plane..(r + 1) * plane],
                    dk2_all.as_deref_mut().map(|s| &mut s[base2..base2 + k * k]),
                );
            }
        }
    }
}

/// Generate the S-scale tri-plane grids.
pub fn generate_planes(shared: &PlaneGrid, bank: &MipKernelBank) -> Result<MultiScaleGrid> {
    bank.validate_for_planes(shared)?;
    let mut grids = Vec::with_capacity(bank.scales);
    for scale in 0..bank.scales {
        let mut g = shared.clone();
        for p in 0..3 {
            let shape = plane_shape(shared.resolution, p);
            let plane = shape.0 * shape.1;
            for r in 0..shared.rank {
                conv2d_replicate(
                    &shared.planes[p][r * plane..(r + 1) * plane],
                    shape,
                    bank.k2d_slice(scale, p, r),
                    bank.kernel_size,
                    &mut g.planes[p][r * plane..(r + 1) * plane],
                );
            }
        }
        grids.push(g);
    }
    Ok(MultiScaleGrid::Planes(grids))
}

pub fn generate_planes_backward(
    shared: &PlaneGrid,
    bank: &MipKernelBank,
    d_scales: &[PlaneGrid],
    d_shared: &mut PlaneGrid,
    d_bank: Option<&mut MipKernelBank>,
) {
    let k = bank.kernel_size;
    let mut dk2_all = d_bank.map(|b| &mut b.k2d[..]);
    for (scale, d_g) in d_scales.iter().enumerate() {
        for p in 0..3 {
            let shape = plane_shape(shared.resolution, p);
            let plane = shape.0 * shape.1;
            for r in 0..shared.rank {
                let base2 = bank.k2d_index(scale, p, r, 0, 0);
                conv2d_replicate_backward(
                    &shared.planes[p][r * plane..(r + 1) * plane],
                    shape,
                    bank.k2d_slice(scale, p, r),
                    k,
                    &d_g.planes[p][r * plane..(r + 1) * plane],
                    &mut d_shared.planes[p][r * plane..(r + 1) * plane],
                    dk2_all.as_deref_mut().map(|s| &mut s[base2..base2 + k * k]),
                );
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Dense 3-D oracle
// ---------------------------------------------------------------------------

/// Which axis the 1-D kernel lives on; the 2-D kernel covers the
/// complementary plane. Mirrors the VM term order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisAssignment {
    XWithYz,
    YWithXz,
    ZWithXy,
}

/// 3-D convolution of a dense tensor with the separable kernel
/// `k1 (x) k2` arranged along `axis_assignment`, replicate padding.
///
/// Implemented as a 1-D pass along the assigned axis followed by a 2-D pass
/// over the complementary plane; per-axis clamping makes this identical to
/// the materialized 3-D kernel loop the tests use.
pub fn dense_conv3d_oracle(
    dense: &DenseGrid3D,
    k1: &[f64],
    k2: &[f64],
    axis_assignment: AxisAssignment,
) -> Result<DenseGrid3D> {
    let [h, w, l] = dense.resolution;
    let n = h * w * l * dense.rank;
    if n > DENSE_ELEMENT_BUDGET {
        return Err(Error::Budget(format!(
            "dense conv needs {n} elements, budget is {DENSE_ELEMENT_BUDGET}"
        )));
    }
    let k = k1.len();
    if k % 2 == 0 || k2.len() != k * k {
        return Err(Error::Shape(
            "kernel must be odd-length with a matching K x K companion".into(),
        ));
    }
    let c = (k / 2) as isize;
    let mut mid = dense.clone();
    // Pass 1: 1-D along the assigned axis.
    let axis = match axis_assignment {
        AxisAssignment::XWithYz => 0usize,
        AxisAssignment::YWithXz => 1,
        AxisAssignment::ZWithXy => 2,
    };
    let dims = [h, w, l];
    for r in 0..dense.rank {
        for ih in 0..h {
            for iw in 0..w {
                for il in 0..l {
                    let mut acc = 0.0;
                    for (j, &kj) in k1.iter().enumerate() {
                        let mut idx = [ih as isize, iw as isize, il as isize];
                        idx[axis] += j as isize - c;
                        let ci = [
                            clamp_idx(idx[0], dims[0]),
                            clamp_idx(idx[1], dims[1]),
                            clamp_idx(idx[2], dims[2]),
                        ];
                        acc += kj * dense.get(ci[0], ci[1], ci[2], r);
                    }
                    let slot = mid.idx(ih, iw, il, r);
                    mid.data[slot] = acc;
                }
            }
        }
    }
    // Pass 2: 2-D over the complementary plane.
    let (pa, pb) = match axis_assignment {
        AxisAssignment::XWithYz => (1usize, 2usize),
        AxisAssignment::YWithXz => (0, 2),
        AxisAssignment::ZWithXy => (0, 1),
    };
    let mut out = dense.clone();
    for r in 0..dense.rank {
        for ih in 0..h {
            for iw in 0..w {
                for il in 0..l {
                    let mut acc = 0.0;
                    for ka in 0..k {
                        for kb in 0..k {
                            let mut idx = [ih as isize, iw as isize, il as isize];
                            idx[pa] += ka as isize - c;
                            idx[pb] += kb as isize - c;
                            let ci = [
                                clamp_idx(idx[0], dims[0]),
                                clamp_idx(idx[1], dims[1]),
                                clamp_idx(idx[2], dims[2]),
                            ];
                            acc += k2[ka * k + kb] * mid.get(ci[0], ci[1], ci[2], r);
                        }
                    }
                    let slot = out.idx(ih, iw, il, r);
                    out.data[slot] = acc;
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Kernel second moments
// ---------------------------------------------------------------------------

const MOMENT_SUM_FLOOR: f64 = 1e-8;

/// `sum_j w[j] (j - c)^2 / sum_j w[j]` for a centered 1-D kernel.
/// Well-defined for unnormalized trained kernels with non-negligible sum.
pub fn second_moment_1d(kernel: &[f64]) -> Result<f64> {
    let sum: f64 = kernel.iter().sum();
    if sum.abs() <= MOMENT_SUM_FLOOR {
        return Err(Error::Numeric(format!(
            "kernel sum {sum:.3e} too close to zero for a second moment"
        )));
    }
    let c = (kernel.len() - 1) as f64 / 2.0;
    let m: f64 = kernel
        .iter()
        .enumerate()
        .map(|(j, &w)| w * (j as f64 - c).powi(2))
        .sum();
    Ok(m / sum)
}

/// Radial second moment of a K x K kernel, averaged per axis so a Gaussian
/// outer product reports the same value as its 1-D generator.
pub fn second_moment_2d(kernel: &[f64], kernel_size: usize) -> Result<f64> {
    let sum: f64 = kernel.iter().sum();
    if sum.abs() <= MOMENT_SUM_FLOOR {
        return Err(Error::Numeric(format!(
            "kernel sum {sum:.3e} too close to zero for a second moment"
        )));
    }
    let c = (kernel_size - 1) as f64 / 2.0;
    let mut m = 0.0;
    for row in 0..kernel_size {
        for col in 0..kernel_size {
            let dr = row as f64 - c;
            let dc = col as f64 - c;
            m += kernel[row * kernel_size + col] * (dr * dr + dc * dc);
        }
    }
    Ok(m / (2.0 * sum))
}
