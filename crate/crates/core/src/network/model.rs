//! Trainable networked model: free parameters `(xi_i, z_i, z_M)` mapped to
//! certified CGRO blocks on every evaluation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::train::{batch_weight, Sample, Trainable};
use super::{evaluation_order, NetworkedOperator};
use crate::certificates::{assemble_full_condition_matrix, check_psd, PSD_TOLERANCE};
use crate::error::{Error, Result};
use crate::operators::{CgroParams, CgroRealized, SequenceOperator};
use crate::parametrization::{allocate_gains, nu_partials, FreeGainParams, GainAllocation, GammaMode};
use crate::topology::InterconnectionTopology;

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    pub topology: InterconnectionTopology,
    pub blocks: Vec<CgroParams>,
    pub z: Vec<f64>,
    pub gamma: GammaMode,
    pub radius: f64,
}

impl NetworkModel {
    pub fn new(
        topology: InterconnectionTopology,
        blocks: Vec<CgroParams>,
        z: Vec<f64>,
        gamma: GammaMode,
        radius: f64,
    ) -> Result<Self> {
        if blocks.len() != topology.len() || z.len() != topology.len() {
            return Err(Error::Config(format!(
                "topology has {} blocks, got {} parameter blocks and {} z entries",
                topology.len(),
                blocks.len(),
                z.len()
            )));
        }
        for (i, (b, dims)) in blocks.iter().zip(topology.blocks()).enumerate() {
            if b.dims() != *dims {
                return Err(Error::Config(format!("parameter block {i} has dims {:?}, expected {:?}", b.dims(), dims)));
            }
        }
        if let GammaMode::Fixed { gamma_m } = gamma {
            if !(gamma_m > 0.0 && gamma_m.is_finite()) {
                return Err(Error::Domain(format!("fixed network gain must be positive, got {gamma_m}")));
            }
        }
        let model = NetworkModel {
            topology,
            blocks,
            z,
            gamma,
            radius,
        };
        let feedthrough: Vec<bool> = model.blocks.iter().map(CgroParams::has_feedthrough).collect();
        evaluation_order(&model.topology, &feedthrough)?;
        Ok(model)
    }

    /// Random blocks with `z = 0`, the largest sub-gain the allocation offers.
    pub fn random<R: Rng + ?Sized>(
        topology: InterconnectionTopology,
        feedthrough: &[bool],
        gamma: GammaMode,
        radius: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if feedthrough.len() != topology.len() {
            return Err(Error::shape("feedthrough flags", topology.len(), feedthrough.len()));
        }
        let blocks = topology
            .blocks()
            .iter()
            .zip(feedthrough)
            .map(|(&dims, &ft)| CgroParams::random(dims, ft, rng))
            .collect();
        let z = vec![0.0; topology.len()];
        Self::new(topology, blocks, z, gamma, radius)
    }

    pub fn allocation(&self) -> Result<GainAllocation> {
        allocate_gains(
            &self.topology,
            &FreeGainParams {
                z: self.z.clone(),
                gamma_mode: self.gamma,
            },
        )
    }

    pub fn realize(&self) -> Result<NetworkedOperator<CgroRealized>> {
        let allocation = self.allocation()?;
        let ops = self
            .blocks
            .iter()
            .zip(&allocation.gammas)
            .map(|(p, &g)| CgroRealized::new(p, g, self.radius))
            .collect::<Result<Vec<_>>>()?;
        NetworkedOperator::new(self.topology.clone(), ops, Some(allocation))
    }

    /// Smallest eigenvalue of the negated full dissipation condition.
    pub fn certificate_min_eigenvalue(&self) -> Result<f64> {
        let a = self.allocation()?;
        let s = assemble_full_condition_matrix(&self.topology, &a)?;
        Ok(check_psd(&s, PSD_TOLERANCE)?.1)
    }

    fn forward_backward(
        &self,
        net: &NetworkedOperator<CgroRealized>,
        sample: &Sample,
        weight: f64,
        acc: &mut [BlockGrads],
    ) -> Result<f64> {
        let t = &self.topology;
        let ops = net.subops();
        let order = net.evaluation_order();
        let nb = t.len();
        let ins: Vec<_> = (0..nb).map(|i| t.input_index_set(i).unwrap()).collect();
        let outs: Vec<_> = (0..nb).map(|i| t.output_index_set(i).unwrap()).collect();
        let coupling = t.coupling();
        let steps = sample.inputs.len();
        if sample.targets.len() != steps || steps == 0 {
            return Err(Error::shape("sample targets", steps.max(1), sample.targets.len()));
        }

        // forward, keeping tanh(x_i(t)), u(t) and y(t)
        let mut x: Vec<DVector<f64>> = t.blocks().iter().map(|b| DVector::zeros(b.n)).collect();
        let mut s_hist: Vec<Vec<DVector<f64>>> = Vec::with_capacity(steps);
        let mut u_hist = Vec::with_capacity(steps);
        let mut residuals = Vec::with_capacity(steps);
        let mut loss = 0.0;
        for (step, d) in sample.inputs.iter().enumerate() {
            if d.len() != t.input_width() {
                return Err(Error::shape(format!("input at step {step}"), t.input_width(), d.len()));
            }
            let s: Vec<DVector<f64>> = x.iter().map(|xi| xi.map(f64::tanh)).collect();
            let mut y = DVector::zeros(t.output_width());
            for &i in order {
                let mut yi = &ops[i].c * &s[i];
                if let Some(dm) = &ops[i].d {
                    let r = &ins[i];
                    let ui = coupling.rows(r.start, r.len()) * &y + d.rows(r.start, r.len());
                    yi += dm * ui;
                }
                yi *= ops[i].scale;
                y.rows_mut(outs[i].start, outs[i].len()).copy_from(&yi);
            }
            let u = coupling * &y + d;
            for i in 0..nb {
                let r = &ins[i];
                x[i] = &ops[i].a * &s[i] + &ops[i].b * u.rows(r.start, r.len());
            }
            let res = &y - &sample.targets[step];
            loss += weight * res.norm_squared();
            residuals.push(res);
            s_hist.push(s);
            u_hist.push(u);
        }
        if !loss.is_finite() {
            return Ok(loss);
        }

        // backward through time; lambda[i] is dL/dx_i(t+1)
        let mut lambda: Vec<DVector<f64>> = t.blocks().iter().map(|b| DVector::zeros(b.n)).collect();
        let mut gy_blocks: Vec<DVector<f64>> = vec![DVector::zeros(0); nb];
        for step in (0..steps).rev() {
            let gy = &residuals[step] * (2.0 * weight);
            let s = &s_hist[step];
            let u = &u_hist[step];
            let mut gu = DVector::zeros(t.input_width());
            for i in 0..nb {
                let r = &ins[i];
                gu.rows_mut(r.start, r.len()).copy_from(&(ops[i].b.transpose() * &lambda[i]));
            }
            for &i in order.iter().rev() {
                let c = &outs[i];
                let gyi = gy.rows(c.start, c.len()) + coupling.columns(c.start, c.len()).transpose() * &gu;
                let r = &ins[i];
                let ui = u.rows(r.start, r.len());
                if let Some(dm) = &ops[i].d {
                    let add = dm.transpose() * &gyi * ops[i].scale;
                    let mut view = gu.rows_mut(r.start, r.len());
                    view += add;
                    if let Some(gd) = acc[i].d.as_mut() {
                        *gd += &gyi * ui.transpose();
                    }
                }
                acc[i].c += &gyi * s[i].transpose();
                gy_blocks[i] = gyi;
            }
            for i in 0..nb {
                let r = &ins[i];
                acc[i].a += &lambda[i] * s[i].transpose();
                acc[i].b += &lambda[i] * u.rows(r.start, r.len()).transpose();
                let gs = ops[i].c.transpose() * &gy_blocks[i] * ops[i].scale + ops[i].a.transpose() * &lambda[i];
                lambda[i] = gs.component_mul(&s[i].map(|v| 1.0 - v * v));
            }
        }
        Ok(loss)
    }
}

/// Gradients with respect to the realized `A, B, sC, sD` of one block.
struct BlockGrads {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: Option<DMatrix<f64>>,
}

impl Trainable for NetworkModel {
    fn num_params(&self) -> usize {
        self.blocks.iter().map(|b| b.len() + 1).sum::<usize>() + usize::from(self.gamma.is_trainable())
    }

    /// Layout: for each block `xi_i` then `z_i`; finally `z_M` when trainable.
    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (b, &z) in self.blocks.iter().zip(&self.z) {
            b.to_flat(&mut out);
            out.push(z);
        }
        if let GammaMode::Trainable { z_m } = self.gamma {
            out.push(z_m);
        }
        out
    }

    fn set_params(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params(), "parameter vector length");
        let mut k = 0;
        for (b, z) in self.blocks.iter_mut().zip(self.z.iter_mut()) {
            k += b.set_flat(&values[k..]);
            *z = values[k];
            k += 1;
        }
        if let GammaMode::Trainable { z_m } = &mut self.gamma {
            *z_m = values[k];
        }
    }

    fn loss(&self, batch: &[Sample]) -> Result<f64> {
        let net = self.realize()?;
        let x0 = DVector::zeros(self.topology.state_width());
        let weight = batch_weight(batch)?;
        let mut loss = 0.0;
        for sample in batch {
            let y = net.rollout(&x0, &sample.inputs)?;
            loss += weight * y.iter().zip(&sample.targets).map(|(a, b)| (a - b).norm_squared()).sum::<f64>();
        }
        Ok(loss)
    }

    fn loss_and_grad(&self, batch: &[Sample]) -> Result<(f64, Vec<f64>)> {
        let net = self.realize()?;
        let allocation = net.allocation().expect("realized from an allocation").clone();
        let weight = batch_weight(batch)?;
        let mut acc: Vec<BlockGrads> = net
            .subops()
            .iter()
            .map(|op| BlockGrads {
                a: DMatrix::zeros(op.a.nrows(), op.a.ncols()),
                b: DMatrix::zeros(op.b.nrows(), op.b.ncols()),
                c: DMatrix::zeros(op.c.nrows(), op.c.ncols()),
                d: op.d.as_ref().map(|d| DMatrix::zeros(d.nrows(), d.ncols())),
            })
            .collect();
        let mut loss = 0.0;
        for sample in batch {
            loss += self.forward_backward(&net, sample, weight, &mut acc)?;
        }

        let mut grad = Vec::with_capacity(self.num_params());
        let mut d_gamma_m = 0.0;
        for (i, ((op, params), g)) in net.subops().iter().zip(&self.blocks).zip(&acc).enumerate() {
            let (g_params, d_gamma_i) = op.pullback(params, &g.a, &g.b, &g.c, g.d.as_ref());
            g_params.to_flat(&mut grad);
            let (dz, dgm) = nu_partials(&self.topology, i, self.z[i], allocation.gamma_m)?;
            grad.push(d_gamma_i * dz);
            d_gamma_m += d_gamma_i * dgm;
        }
        if self.gamma.is_trainable() {
            grad.push(d_gamma_m * self.gamma.gamma_derivative());
        }
        Ok((loss, grad))
    }

    fn gamma_m(&self) -> Option<f64> {
        Some(self.gamma.effective_gamma())
    }

    fn certificate_min_eigenvalue(&self) -> Result<Option<f64>> {
        NetworkModel::certificate_min_eigenvalue(self).map(Some)
    }
}
