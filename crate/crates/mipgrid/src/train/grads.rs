//! Gradient storage and parameter-block addressing.
//!
//! Every trainable block of a `RadianceField` has a stable `BlockId` and a
//! fixed position in `block_list`; the optimizer, the finite-difference
//! harness and the checkpoint writer all iterate blocks in this one order.

use crate::field::{BankSet, DecoderMlp, Grid, RadianceField};
use crate::mipgen::MipKernelBank;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WhichGrid {
    Density,
    Appearance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockId {
    /// One factor array; `arr` indexes `Grid::array_names` order.
    GridArr { grid: WhichGrid, arr: usize },
    /// One kernel tensor; `k2d` selects the 2-D taps, otherwise 1-D.
    BankArr { grid: WhichGrid, secondary: bool, k2d: bool },
    Basis,
    DecW1,
    DecB1,
    DecW2,
    DecB2,
    DensityShift,
}

/// Learning-rate group a block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrGroup {
    Grid,
    Kernel,
    Decoder,
}

impl BlockId {
    pub fn lr_group(&self) -> LrGroup {
        match self {
            BlockId::GridArr { .. } => LrGroup::Grid,
            BlockId::BankArr { .. } => LrGroup::Kernel,
            _ => LrGroup::Decoder,
        }
    }
}

/// All trainable blocks of a field, in fixed order, with display names.
pub fn block_list(field: &RadianceField) -> Vec<(String, BlockId)> {
    let mut out = Vec::new();
    for (grid, which, label) in [
        (&field.density_grid, WhichGrid::Density, "density"),
        (&field.appearance_grid, WhichGrid::Appearance, "appearance"),
    ] {
        for (arr, name) in grid.array_names().iter().enumerate() {
            out.push((format!("{label}.{name}"), BlockId::GridArr { grid: which, arr }));
        }
    }
    for (banks, which, label) in [
        (&field.density_banks, WhichGrid::Density, "density"),
        (&field.appearance_banks, WhichGrid::Appearance, "appearance"),
    ] {
        if let Some(bs) = banks {
            let mut push_bank = |bank: &MipKernelBank, secondary: bool, tag: &str| {
                if !bank.k1d.is_empty() {
                    out.push((
                        format!("bank.{label}.{tag}.k1d"),
                        BlockId::BankArr { grid: which, secondary, k2d: false },
                    ));
                }
                out.push((
                    format!("bank.{label}.{tag}.k2d"),
                    BlockId::BankArr { grid: which, secondary, k2d: true },
                ));
            };
            push_bank(&bs.primary, false, "a");
            if let Some(b) = &bs.secondary {
                push_bank(b, true, "b");
            }
        }
    }
    out.push(("basis".into(), BlockId::Basis));
    out.push(("decoder.w1".into(), BlockId::DecW1));
    out.push(("decoder.b1".into(), BlockId::DecB1));
    out.push(("decoder.w2".into(), BlockId::DecW2));
    out.push(("decoder.b2".into(), BlockId::DecB2));
    out.push(("density_shift".into(), BlockId::DensityShift));
    out
}

fn grid_arr(grid: &Grid, arr: usize) -> &Vec<f64> {
    match grid {
        Grid::Vm(g) => {
            if arr < 3 {
                &g.vectors[arr]
            } else {
                &g.matrices[arr - 3]
            }
        }
        Grid::Planes(g) => &g.planes[arr],
    }
}

fn grid_arr_mut(grid: &mut Grid, arr: usize) -> &mut Vec<f64> {
    match grid {
        Grid::Vm(g) => {
            if arr < 3 {
                &mut g.vectors[arr]
            } else {
                &mut g.matrices[arr - 3]
            }
        }
        Grid::Planes(g) => &mut g.planes[arr],
    }
}

fn bank_of(banks: &Option<BankSet>, secondary: bool) -> &MipKernelBank {
    let bs = banks.as_ref().expect("bank block on bankless field");
    if secondary {
        bs.secondary.as_ref().expect("secondary bank missing")
    } else {
        &bs.primary
    }
}

fn bank_of_mut(banks: &mut Option<BankSet>, secondary: bool) -> &mut MipKernelBank {
    let bs = banks.as_mut().expect("bank block on bankless field");
    if secondary {
        bs.secondary.as_mut().expect("secondary bank missing")
    } else {
        &mut bs.primary
    }
}

/// Borrow a block's values. `DensityShift` is exposed as a 1-slice.
pub fn field_block<'a>(field: &'a RadianceField, id: BlockId) -> &'a [f64] {
    match id {
        BlockId::GridArr { grid, arr } => match grid {
            WhichGrid::Density => grid_arr(&field.density_grid, arr),
            WhichGrid::Appearance => grid_arr(&field.appearance_grid, arr),
        },
        BlockId::BankArr { grid, secondary, k2d } => {
            let bank = match grid {
                WhichGrid::Density => bank_of(&field.density_banks, secondary),
                WhichGrid::Appearance => bank_of(&field.appearance_banks, secondary),
            };
            if k2d {
                &bank.k2d
            } else {
                &bank.k1d
            }
        }
        BlockId::Basis => &field.basis,
        BlockId::DecW1 => &field.decoder.w1,
        BlockId::DecB1 => &field.decoder.b1,
        BlockId::DecW2 => &field.decoder.w2,
        BlockId::DecB2 => &field.decoder.b2,
        BlockId::DensityShift => std::slice::from_ref(&field.density_shift),
    }
}

pub fn field_block_mut<'a>(field: &'a mut RadianceField, id: BlockId) -> &'a mut [f64] {
    match id {
        BlockId::GridArr { grid, arr } => match grid {
            WhichGrid::Density => grid_arr_mut(&mut field.density_grid, arr),
            WhichGrid::Appearance => grid_arr_mut(&mut field.appearance_grid, arr),
        },
        BlockId::BankArr { grid, secondary, k2d } => {
            let bank = match grid {
                WhichGrid::Density => bank_of_mut(&mut field.density_banks, secondary),
                WhichGrid::Appearance => bank_of_mut(&mut field.appearance_banks, secondary),
            };
            if k2d {
                &mut bank.k2d
            } else {
                &mut bank.k1d
            }
        }
        BlockId::Basis => &mut field.basis,
        BlockId::DecW1 => &mut field.decoder.w1,
        BlockId::DecB1 => &mut field.decoder.b1,
        BlockId::DecW2 => &mut field.decoder.w2,
        BlockId::DecB2 => &mut field.decoder.b2,
        BlockId::DensityShift => std::slice::from_mut(&mut field.density_shift),
    }
}

/// Gradients for every trainable block, shaped like the field.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub density: Grid,
    pub appearance: Grid,
    pub density_banks: Option<BankSet>,
    pub appearance_banks: Option<BankSet>,
    pub basis: Vec<f64>,
    pub decoder: DecoderMlp,
    pub density_shift: f64,
}

fn zero_banks(banks: &Option<BankSet>) -> Option<BankSet> {
    banks.as_ref().map(|bs| {
        let zero = |b: &MipKernelBank| {
            let mut z = b.clone();
            z.k1d.iter_mut().for_each(|v| *v = 0.0);
            z.k2d.iter_mut().for_each(|v| *v = 0.0);
            z
        };
        BankSet {
            primary: zero(&bs.primary),
            secondary: bs.secondary.as_ref().map(zero),
        }
    })
}

impl Gradients {
    pub fn zeros_like(field: &RadianceField) -> Self {
        Gradients {
            density: field.density_grid.zeros_like(),
            appearance: field.appearance_grid.zeros_like(),
            density_banks: zero_banks(&field.density_banks),
            appearance_banks: zero_banks(&field.appearance_banks),
            basis: vec![0.0; field.basis.len()],
            decoder: DecoderMlp::zeros(field.decoder.in_dim, field.decoder.hidden),
            density_shift: 0.0,
        }
    }

    pub fn block<'a>(&'a self, id: BlockId) -> &'a [f64] {
        match id {
            BlockId::GridArr { grid, arr } => match grid {
                WhichGrid::Density => grid_arr(&self.density, arr),
                WhichGrid::Appearance => grid_arr(&self.appearance, arr),
            },
            BlockId::BankArr { grid, secondary, k2d } => {
                let bank = match grid {
                    WhichGrid::Density => bank_of(&self.density_banks, secondary),
                    WhichGrid::Appearance => bank_of(&self.appearance_banks, secondary),
                };
                if k2d {
                    &bank.k2d
                } else {
                    &bank.k1d
                }
            }
            BlockId::Basis => &self.basis,
            BlockId::DecW1 => &self.decoder.w1,
            BlockId::DecB1 => &self.decoder.b1,
            BlockId::DecW2 => &self.decoder.w2,
            BlockId::DecB2 => &self.decoder.b2,
            BlockId::DensityShift => std::slice::from_ref(&self.density_shift),
        }
    }

    /// Largest-magnitude non-finite check, naming the offending block.
    pub fn check_finite(&self, blocks: &[(String, BlockId)]) -> Result<(), String> {
        for (name, id) in blocks {
            if self.block(*id).iter().any(|v| !v.is_finite()) {
                return Err(name.clone());
            }
        }
        Ok(())
    }
}
