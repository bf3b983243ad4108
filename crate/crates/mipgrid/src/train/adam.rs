//! Adam with bias-corrected moments and per-block learning-rate groups.

use crate::field::RadianceField;
use crate::train::grads::{block_list, field_block_mut, BlockId, Gradients, LrGroup};

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Current learning rates per block group.
#[derive(Debug, Clone, Copy)]
pub struct LrSet {
    pub grid: f64,
    pub kernel: f64,
    pub decoder: f64,
}

impl LrSet {
    fn for_group(&self, group: LrGroup) -> f64 {
        match group {
            LrGroup::Grid => self.grid,
            LrGroup::Kernel => self.kernel,
            LrGroup::Decoder => self.decoder,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    blocks: Vec<(BlockId, Moments)>,
}

impl Adam {
    /// Fresh state shaped like the field's block list.
    pub fn new(field: &RadianceField) -> Self {
        let blocks = block_list(field)
            .into_iter()
            .map(|(_, id)| {
                let len = crate::train::grads::field_block(field, id).len();
                (
                    id,
                    Moments {
                        m: vec![0.0; len],
                        v: vec![0.0; len],
                    },
                )
            })
            .collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            blocks,
        }
    }

    /// One update over every block. Zero-gradient blocks keep their
    /// parameters bitwise unchanged while the moments decay.
    pub fn step(&mut self, field: &mut RadianceField, grads: &Gradients, lrs: &LrSet) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, moments) in self.blocks.iter_mut() {
            let lr = lrs.for_group(id.lr_group());
            let g = grads.block(*id);
            let p = field_block_mut(field, *id);
            debug_assert_eq!(g.len(), p.len());
            for i in 0..p.len() {
                let gi = g[i];
                moments.m[i] = self.beta1 * moments.m[i] + (1.0 - self.beta1) * gi;
                moments.v[i] = self.beta2 * moments.v[i] + (1.0 - self.beta2) * gi * gi;
                if gi == 0.0 && moments.m[i] == 0.0 && moments.v[i] == 0.0 {
                    continue;
                }
                let m_hat = moments.m[i] / bc1;
                let v_hat = moments.v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        field.param_version += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_grids::{FactorGridVM, GridFamily};
    use crate::field::{BankSet, DecoderMlp, Grid, DIR_ENC_LEN};
    use crate::mipgen::init_gaussian;
    use crate::scalecoord::{default_anchors, ScaleKind};

    fn mk_field() -> RadianceField {
        let mut g = FactorGridVM::zeros([3, 3, 3], 1, 1).unwrap();
        g.vectors[0][0] = 0.5;
        let grid = Grid::Vm(g);
        let bank = init_gaussian(GridFamily::Vm, 2, 3, 1, &[1.0, 2.0]).unwrap();
        RadianceField {
            density_grid: grid.clone(),
            appearance_grid: grid,
            density_banks: Some(BankSet {
                primary: bank.clone(),
                secondary: None,
            }),
            appearance_banks: Some(BankSet {
                primary: bank,
                secondary: None,
            }),
            basis: vec![0.1; 2 * 3],
            channels: 2,
            decoder: DecoderMlp::zeros(2 + DIR_ENC_LEN, 4),
            density_shift: -10.0,
            kind: ScaleKind::Discrete,
            primary_map: default_anchors(0.01, &[1.0, 2.0]).unwrap(),
            secondary_map: None,
            param_version: 0,
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut field = mk_field();
        let before = field.clone();
        let grads = Gradients::zeros_like(&field);
        let mut adam = Adam::new(&field);
        let lrs = LrSet {
            grid: 0.1,
            kernel: 0.1,
            decoder: 0.1,
        };
        adam.step(&mut field, &grads, &lrs);
        adam.step(&mut field, &grads, &lrs);
        assert_eq!(field.basis, before.basis);
        assert_eq!(field.density_shift, before.density_shift);
        match (&field.density_grid, &before.density_grid) {
            (Grid::Vm(a), Grid::Vm(b)) => assert_eq!(a, b),
            _ => unreachable!(),
        }
    }

    #[test]
    fn first_step_is_sign_scaled() {
        // t = 1: m_hat = g, v_hat = g^2, update = -lr * g / (|g| + eps).
        let mut field = mk_field();
        let mut grads = Gradients::zeros_like(&field);
        grads.density_shift = 0.75;
        let before = field.density_shift;
        let mut adam = Adam::new(&field);
        let lrs = LrSet {
            grid: 0.0,
            kernel: 0.0,
            decoder: 0.01,
        };
        adam.step(&mut field, &grads, &lrs);
        let expect = before - 0.01 * 0.75 / (0.75 + 1e-8);
        assert!((field.density_shift - expect).abs() < 1e-12);
    }

    #[test]
    fn recurrence_replays_exactly() {
        // Two identical steps must match a hand-rolled Adam recurrence.
        let mut field = mk_field();
        let mut grads = Gradients::zeros_like(&field);
        grads.density_shift = -0.3;
        let x0 = field.density_shift;
        let mut adam = Adam::new(&field);
        let lrs = LrSet {
            grid: 0.0,
            kernel: 0.0,
            decoder: 0.02,
        };
        adam.step(&mut field, &grads, &lrs);
        adam.step(&mut field, &grads, &lrs);

        let (b1, b2, eps, lr, g) = (0.9, 0.999, 1e-8, 0.02, -0.3);
        let mut m = 0.0;
        let mut v = 0.0;
        let mut x = x0;
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1f(t, b1));
            let vh = v / (1.0 - b1f(t, b2));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((field.density_shift - x).abs() < 1e-12);
    }

    fn b1f(t: u64, b: f64) -> f64 {
        b.powi(t as i32)
    }
}
