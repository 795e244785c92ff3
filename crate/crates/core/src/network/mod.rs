//! Sub-operators wired through the coupling matrix: `u = M y + d`, `e = y`.

mod model;
mod train;

pub use model::NetworkModel;
pub use train::{
    central_difference_gradient, compare_gradients, gradient_check, train, train_with, EpochRecord, GradientMethod, Sample, Trainable,
    TrainingConfig, TrainingReport,
};

pub(crate) use train::batch_weight;

use nalgebra::DVector;

use crate::error::{ensure_finite, Error, Result};
use crate::operators::{check_len, SequenceOperator, SubOperator};
use crate::parametrization::GainAllocation;
use crate::topology::InterconnectionTopology;

/// Relative tolerance when matching assigned gains against an allocation.
const GAIN_MATCH_RTOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct NetworkedOperator<S> {
    topology: InterconnectionTopology,
    subops: Vec<S>,
    allocation: Option<GainAllocation>,
    order: Vec<usize>,
}

/// Topological order of the feedthrough dependency graph.
///
/// Edge `j -> i` exists when `i` has direct feedthrough and `M` routes an
/// output of `j` into an input of `i`. Ties are broken by the smallest index,
/// so the order is the identity when nothing has feedthrough.
pub fn evaluation_order(t: &InterconnectionTopology, feedthrough: &[bool]) -> Result<Vec<usize>> {
    let n = t.len();
    if feedthrough.len() != n {
        return Err(Error::shape("feedthrough flags", n, feedthrough.len()));
    }
    let mut preds = vec![Vec::new(); n];
    for i in (0..n).filter(|&i| feedthrough[i]) {
        for j in 0..n {
            if t.couples(j, i)? {
                preds[i].push(j);
            }
        }
    }
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let next = (0..n).find(|&i| !done[i] && preds[i].iter().all(|&j| done[j]));
        match next {
            Some(i) => {
                done[i] = true;
                order.push(i);
            }
            None => return Err(Error::IllPosed(find_cycle(&preds, &done))),
        }
    }
    Ok(order)
}

/// Walks predecessor links among unfinished nodes until one repeats.
fn find_cycle(preds: &[Vec<usize>], done: &[bool]) -> Vec<usize> {
    let start = (0..preds.len()).find(|&i| !done[i]).expect("an unfinished node exists");
    let mut path = vec![start];
    let mut node = start;
    loop {
        // every unfinished node has an unfinished predecessor
        let prev = *preds[node].iter().find(|&&j| !done[j]).expect("unfinished predecessor");
        if let Some(pos) = path.iter().position(|&k| k == prev) {
            let mut cycle: Vec<usize> = path[pos..].to_vec();
            cycle.reverse();
            return cycle;
        }
        path.push(prev);
        node = prev;
    }
}

impl<S: SubOperator> NetworkedOperator<S> {
    /// Wires `subops` through `t`. When an allocation is given, every
    /// sub-operator must carry exactly the gain assigned to it.
    pub fn new(t: InterconnectionTopology, subops: Vec<S>, allocation: Option<GainAllocation>) -> Result<Self> {
        if subops.len() != t.len() {
            return Err(Error::Config(format!(
                "topology has {} blocks but {} sub-operators were given",
                t.len(),
                subops.len()
            )));
        }
        for (i, (op, block)) in subops.iter().zip(t.blocks()).enumerate() {
            if op.dims() != *block {
                return Err(Error::Config(format!(
                    "sub-operator {i} has dims {:?}, topology block is {:?}",
                    op.dims(),
                    block
                )));
            }
        }
        if let Some(a) = &allocation {
            if a.gammas.len() != t.len() || a.alphas.len() != t.len() {
                return Err(Error::Config(format!("allocation covers {} blocks, topology has {}", a.gammas.len(), t.len())));
            }
            for (i, (op, &gamma)) in subops.iter().zip(&a.gammas).enumerate() {
                match op.assigned_gain() {
                    Some(g) if (g - gamma).abs() <= GAIN_MATCH_RTOL * gamma => {}
                    other => {
                        return Err(Error::Config(format!(
                            "sub-operator {i} carries gain {other:?}, allocation assigns {gamma}"
                        )))
                    }
                }
            }
        }
        let feedthrough: Vec<bool> = subops.iter().map(SubOperator::has_feedthrough).collect();
        let order = evaluation_order(&t, &feedthrough)?;
        Ok(NetworkedOperator {
            topology: t,
            subops,
            allocation,
            order,
        })
    }

    pub fn topology(&self) -> &InterconnectionTopology {
        &self.topology
    }

    pub fn subops(&self) -> &[S] {
        &self.subops
    }

    pub fn allocation(&self) -> Option<&GainAllocation> {
        self.allocation.as_ref()
    }

    pub fn evaluation_order(&self) -> &[usize] {
        &self.order
    }

    /// Certified network gain, when the network was built from an allocation.
    pub fn gamma_m(&self) -> Option<f64> {
        self.allocation.as_ref().map(|a| a.gamma_m)
    }

    /// Runs the network from stacked state `x0`, returning `e(t) = y(t)` and,
    /// when `keep_states` is set, the stacked states `x(0..=T)`.
    pub fn rollout_with_states(
        &self,
        x0: &DVector<f64>,
        d: &[DVector<f64>],
        keep_states: bool,
    ) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
        let t = &self.topology;
        if d.is_empty() {
            return Err(Error::Domain("network rollout needs at least one time step".into()));
        }
        check_len("stacked initial state", x0, t.state_width())?;
        ensure_finite("stacked initial state", x0.as_slice())?;
        let state_ranges: Vec<_> = (0..t.len()).map(|i| t.state_index_set(i).unwrap()).collect();
        let in_ranges: Vec<_> = (0..t.len()).map(|i| t.input_index_set(i).unwrap()).collect();
        let out_ranges: Vec<_> = (0..t.len()).map(|i| t.output_index_set(i).unwrap()).collect();

        let mut x: Vec<DVector<f64>> = state_ranges.iter().map(|r| x0.rows(r.start, r.len()).into_owned()).collect();
        let mut outputs = Vec::with_capacity(d.len());
        let mut states = Vec::new();
        if keep_states {
            states.push(x0.clone());
        }
        for (step, dt) in d.iter().enumerate() {
            check_len(&format!("exogenous input at step {step}"), dt, t.input_width())?;
            ensure_finite("exogenous input", dt.as_slice())?;
            let mut y = DVector::zeros(t.output_width());
            for &i in &self.order {
                let yi = if self.subops[i].has_feedthrough() {
                    // entries of y not yet computed are not coupled into block i
                    let r = &in_ranges[i];
                    let ui = t.coupling().rows(r.start, r.len()) * &y + dt.rows(r.start, r.len());
                    self.subops[i].output(&x[i], Some(&ui))?
                } else {
                    self.subops[i].output(&x[i], None)?
                };
                y.rows_mut(out_ranges[i].start, out_ranges[i].len()).copy_from(&yi);
            }
            let u = t.coupling() * &y + dt;
            for i in 0..t.len() {
                let r = &in_ranges[i];
                x[i] = self.subops[i].advance(&x[i], &u.rows(r.start, r.len()).into_owned())?;
            }
            if keep_states {
                let mut stacked = DVector::zeros(t.state_width());
                for (i, r) in state_ranges.iter().enumerate() {
                    stacked.rows_mut(r.start, r.len()).copy_from(&x[i]);
                }
                states.push(stacked);
            }
            outputs.push(y);
        }
        Ok((outputs, states))
    }
}

impl<S: SubOperator> SequenceOperator for NetworkedOperator<S> {
    fn input_dim(&self) -> usize {
        self.topology.input_width()
    }
    fn output_dim(&self) -> usize {
        self.topology.output_width()
    }
    fn state_dim(&self) -> usize {
        self.topology.state_width()
    }
    fn rollout(&self, x0: &DVector<f64>, inputs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        Ok(self.rollout_with_states(x0, inputs, false)?.0)
    }
}

/// Sum of squared residuals and its mean over every scalar entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub sum: f64,
    pub mean: f64,
}

pub fn loss_mse(y: &[Vec<DVector<f64>>], y_ref: &[Vec<DVector<f64>>]) -> Result<LossValue> {
    if y.is_empty() || y.len() != y_ref.len() {
        return Err(Error::shape("loss batch", y_ref.len().max(1), y.len()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, (a, b)) in y.iter().zip(y_ref).enumerate() {
        if a.len() != b.len() {
            return Err(Error::shape(format!("sequence {k} length"), b.len(), a.len()));
        }
        for (t, (ya, yb)) in a.iter().zip(b).enumerate() {
            if ya.len() != yb.len() {
                return Err(Error::shape(format!("sequence {k} step {t} width"), yb.len(), ya.len()));
            }
            sum += (ya - yb).norm_squared();
            count += ya.len();
        }
    }
    Ok(LossValue {
        sum,
        mean: if count == 0 { 0.0 } else { sum / count as f64 },
    })
}
