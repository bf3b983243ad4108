//! Versioned binary checkpoints.
//!
//! Fixed little-endian layout with named tensor blocks, readable without a
//! serialization library:
//!
//! ```text
//! magic "MGRD" | version u32 | family u8 | kind u8 | has_banks u8 |
//! trainable u8 | S u32 | K u32 | R_density u32 | R_appearance u32 |
//! channels u32 | hidden u32 | density res u32x3 | appearance res u32x3 |
//! bound f64 | primary anchors (u32 count + f64s) |
//! secondary anchors (u32 count + f64s) | rng state (u32 len + bytes) |
//! config echo (u32 len + utf8) | block count u32 | blocks...
//! ```
//!
//! Each block: name (u32 len + utf8), dtype u8 (0 = f32, 1 = f64), ndim u8,
//! dims u32 x ndim, payload little-endian. Loading an unknown version fails
//! cleanly; a round-trip reproduces every tensor bitwise.

use crate::error::{Error, Result};
use crate::factor_grids::{plane_shape, vm_matrix_shape, vm_vector_len, GridFamily};
use crate::field::{Grid, RadianceField};
use crate::scalecoord::{ScaleIndexMap, ScaleKind};
use crate::train::grads::{block_list, field_block, BlockId, WhichGrid};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"MGRD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub field: RadianceField,
    pub config_echo: String,
    pub rng_state: Vec<u8>,
}

fn block_shape(field: &RadianceField, id: BlockId) -> Vec<u32> {
    let grid_of = |w: WhichGrid| match w {
        WhichGrid::Density => &field.density_grid,
        WhichGrid::Appearance => &field.appearance_grid,
    };
    match id {
        BlockId::GridArr { grid, arr } => {
            let g = grid_of(grid);
            let (rank, res) = (g.rank() as u32, g.resolution());
            match g {
                Grid::Vm(_) => {
                    if arr < 3 {
                        vec![rank, vm_vector_len(res, arr) as u32]
                    } else {
                        let (a, b) = vm_matrix_shape(res, arr - 3);
                        vec![rank, a as u32, b as u32]
                    }
                }
                Grid::Planes(_) => {
                    let (a, b) = plane_shape(res, arr);
                    vec![rank, a as u32, b as u32]
                }
            }
        }
        BlockId::BankArr { grid, k2d, .. } => {
            let g = grid_of(grid);
            let banks = match grid {
                WhichGrid::Density => field.density_banks.as_ref(),
                WhichGrid::Appearance => field.appearance_banks.as_ref(),
            }
            .expect("bank block implies banks");
            let (s, k, r) = (
                banks.primary.scales as u32,
                banks.primary.kernel_size as u32,
                g.rank() as u32,
            );
            if k2d {
                vec![s, 3, r, k, k]
            } else {
                vec![s, 3, r, k]
            }
        }
        BlockId::Basis => vec![
            field.channels as u32,
            field.appearance_grid.feature_len() as u32,
        ],
        BlockId::DecW1 => vec![field.decoder.hidden as u32, field.decoder.in_dim as u32],
        BlockId::DecB1 => vec![field.decoder.hidden as u32],
        BlockId::DecW2 => vec![3, field.decoder.hidden as u32],
        BlockId::DecB2 => vec![3],
        BlockId::DensityShift => vec![1],
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(
    path: &Path,
    field: &RadianceField,
    config_echo: &str,
    rng_state: &[u8],
) -> Result<()> {
    field.validate()?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    buf.push(match field.density_grid.family() {
        GridFamily::Vm => 0,
        GridFamily::Planes => 1,
    });
    buf.push(match field.kind {
        ScaleKind::Discrete => 0,
        ScaleKind::Continuous => 1,
        ScaleKind::TwoD => 2,
    });
    let has_banks = field.density_banks.is_some();
    buf.push(has_banks as u8);
    let trainable = field
        .density_banks
        .as_ref()
        .map(|b| b.primary.trainable)
        .unwrap_or(false);
    buf.push(trainable as u8);
    let (scales, kernel_size) = field
        .density_banks
        .as_ref()
        .map(|b| (b.primary.scales as u32, b.primary.kernel_size as u32))
        .unwrap_or((1, 0));
    put_u32(&mut buf, scales);
    put_u32(&mut buf, kernel_size);
    put_u32(&mut buf, field.density_grid.rank() as u32);
    put_u32(&mut buf, field.appearance_grid.rank() as u32);
    put_u32(&mut buf, field.channels as u32);
    put_u32(&mut buf, field.decoder.hidden as u32);
    for n in field.density_grid.resolution() {
        put_u32(&mut buf, n as u32);
    }
    for n in field.appearance_grid.resolution() {
        put_u32(&mut buf, n as u32);
    }
    // Bound is carried in the config echo; reserve the slot for layout
    // stability anyway.
    put_f64s(&mut buf, &[0.0]);
    put_u32(&mut buf, field.primary_map.len() as u32);
    put_f64s(&mut buf, field.primary_map.anchors());
    match &field.secondary_map {
        Some(m) => {
            put_u32(&mut buf, m.len() as u32);
            put_f64s(&mut buf, m.anchors());
        }
        None => put_u32(&mut buf, 0),
    }
    put_u32(&mut buf, rng_state.len() as u32);
    buf.extend_from_slice(rng_state);
    let echo = config_echo.as_bytes();
    put_u32(&mut buf, echo.len() as u32);
    buf.extend_from_slice(echo);

    let blocks = block_list(field);
    put_u32(&mut buf, blocks.len() as u32);
    for (name, id) in &blocks {
        put_u32(&mut buf, name.len() as u32);
        buf.extend_from_slice(name.as_bytes());
        buf.push(1); // f64
        let shape = block_shape(field, *id);
        buf.push(shape.len() as u8);
        let mut count = 1usize;
        for d in &shape {
            put_u32(&mut buf, *d);
            count *= *d as usize;
        }
        let data = field_block(field, *id);
        if data.len() != count {
            return Err(Error::Checkpoint(format!(
                "block {name}: shape {shape:?} does not cover {} values",
                data.len()
            )));
        }
        put_f64s(&mut buf, data);
    }

    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Checkpoint("invalid utf8 in checkpoint".into()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let raw = fs::read(path)?;
    let mut r = Reader { buf: &raw, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads {VERSION})"
        )));
    }
    let family = match r.u8()? {
        0 => GridFamily::Vm,
        1 => GridFamily::Planes,
        other => return Err(Error::Checkpoint(format!("unknown family tag {other}"))),
    };
    let kind = match r.u8()? {
        0 => ScaleKind::Discrete,
        1 => ScaleKind::Continuous,
        2 => ScaleKind::TwoD,
        other => return Err(Error::Checkpoint(format!("unknown scale kind {other}"))),
    };
    let has_banks = r.u8()? != 0;
    let trainable = r.u8()? != 0;
    let scales = r.u32()? as usize;
    let kernel_size = r.u32()? as usize;
    let rank_density = r.u32()? as usize;
    let rank_appearance = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let mut res_d = [0usize; 3];
    for slot in res_d.iter_mut() {
        *slot = r.u32()? as usize;
    }
    let mut res_a = [0usize; 3];
    for slot in res_a.iter_mut() {
        *slot = r.u32()? as usize;
    }
    let _reserved = r.f64()?;
    let n_anchor = r.u32()? as usize;
    let primary_map = ScaleIndexMap::new(r.f64s(n_anchor)?)?;
    let n_secondary = r.u32()? as usize;
    let secondary_map = if n_secondary > 0 {
        Some(ScaleIndexMap::new(r.f64s(n_secondary)?)?)
    } else {
        None
    };
    let rng_len = r.u32()? as usize;
    let rng_state = r.take(rng_len)?.to_vec();
    let config_echo = r.string()?;

    let n_blocks = r.u32()? as usize;
    let mut blocks: Vec<(String, Vec<u32>, Vec<f64>)> = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let name = r.string()?;
        let dtype = r.u8()?;
        let ndim = r.u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        let mut count = 1usize;
        for _ in 0..ndim {
            let d = r.u32()?;
            count *= d as usize;
            dims.push(d);
        }
        let data = match dtype {
            1 => r.f64s(count)?,
            0 => {
                let raw = r.take(count * 4)?;
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect()
            }
            other => {
                return Err(Error::Checkpoint(format!(
                    "unknown dtype {other} in block {name}"
                )))
            }
        };
        blocks.push((name, dims, data));
    }

    // Rebuild the field skeleton, then fill every block by name.
    use crate::factor_grids::{FactorGridVM, PlaneGrid};
    use crate::field::{BankSet, DecoderMlp, DIR_ENC_LEN};
    use crate::mipgen::MipKernelBank;
    let mk_grid = |res: [usize; 3], rank: usize, ch: usize| -> Result<Grid> {
        Ok(match family {
            GridFamily::Vm => Grid::Vm(FactorGridVM::zeros(res, rank, ch)?),
            GridFamily::Planes => Grid::Planes(PlaneGrid::zeros(res, rank, ch)?),
        })
    };
    let mk_banks = |rank: usize| -> Result<Option<BankSet>> {
        if !has_banks {
            return Ok(None);
        }
        let mut primary = MipKernelBank::zeros(family, scales, kernel_size, rank)?;
        primary.trainable = trainable;
        let secondary = if kind == ScaleKind::TwoD {
            Some(primary.clone())
        } else {
            None
        };
        Ok(Some(BankSet { primary, secondary }))
    };
    let mut field = RadianceField {
        density_grid: mk_grid(res_d, rank_density, 1)?,
        appearance_grid: mk_grid(res_a, rank_appearance, channels)?,
        density_banks: mk_banks(rank_density)?,
        appearance_banks: mk_banks(rank_appearance)?,
        basis: vec![0.0; channels * match family {
            GridFamily::Vm => 3 * rank_appearance,
            GridFamily::Planes => rank_appearance,
        }],
        channels,
        decoder: DecoderMlp::zeros(channels + DIR_ENC_LEN, hidden),
        density_shift: 0.0,
        kind,
        primary_map,
        secondary_map,
        param_version: 0,
    };

    let expected = block_list(&field);
    if expected.len() != blocks.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} blocks, model shape implies {}",
            blocks.len(),
            expected.len()
        )));
    }
    for ((name, id), (got_name, dims, data)) in expected.iter().zip(blocks.iter()) {
        if name != got_name {
            return Err(Error::Checkpoint(format!(
                "block order mismatch: expected {name}, found {got_name}"
            )));
        }
        let shape = block_shape(&field, *id);
        if shape != *dims {
            return Err(Error::Checkpoint(format!(
                "block {name}: shape {dims:?} does not match model {shape:?}"
            )));
        }
        let dst = crate::train::grads::field_block_mut(&mut field, *id);
        if dst.len() != data.len() {
            return Err(Error::Checkpoint(format!("block {name}: length mismatch")));
        }
        dst.copy_from_slice(data);
    }
    field.validate()?;
    Ok(Checkpoint {
        field,
        config_echo,
        rng_state,
    })
}
