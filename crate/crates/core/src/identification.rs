//! Black-box identification of the three-tank plant: a trainable model
//! (networked or plain RNN) plus the scaling between plant units and model
//! units.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetworkModel, Sample, Trainable};
use crate::operators::{RnnGrads, RnnParams, SequenceOperator, SubOperator};
use crate::plant::{Levels, PlantSequence};

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Networked(NetworkModel),
    Rnn(RnnParams),
}

impl Model {
    pub fn family(&self) -> &'static str {
        match self {
            Model::Networked(_) => "networked",
            Model::Rnn(_) => "rnn",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Networked(m) => m.topology.input_width(),
            Model::Rnn(r) => r.w_u.ncols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Model::Networked(m) => m.topology.output_width(),
            Model::Rnn(r) => r.w_y.nrows(),
        }
    }

    pub fn rollout(&self, inputs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        match self {
            Model::Networked(m) => {
                let net = m.realize()?;
                net.rollout(&DVector::zeros(m.topology.state_width()), inputs)
            }
            Model::Rnn(r) => r.rollout(&DVector::zeros(r.w_x.nrows()), inputs),
        }
    }
}

impl Trainable for RnnParams {
    fn num_params(&self) -> usize {
        self.len()
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        self.to_flat(&mut out);
        out
    }

    fn set_params(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.len(), "parameter vector length");
        self.set_flat(values);
    }

    fn loss(&self, batch: &[Sample]) -> Result<f64> {
        let weight = crate::network::batch_weight(batch)?;
        let x0 = DVector::zeros(self.w_x.nrows());
        let mut loss = 0.0;
        for s in batch {
            let y = self.rollout(&x0, &s.inputs)?;
            if s.targets.len() != y.len() {
                return Err(Error::shape("sample targets", y.len(), s.targets.len()));
            }
            loss += weight * y.iter().zip(&s.targets).map(|(a, b)| (a - b).norm_squared()).sum::<f64>();
        }
        Ok(loss)
    }

    fn loss_and_grad(&self, batch: &[Sample]) -> Result<(f64, Vec<f64>)> {
        let weight = crate::network::batch_weight(batch)?;
        let mut grads = RnnGrads::zeros(SubOperator::dims(self));
        let mut loss = 0.0;
        for s in batch {
            if s.targets.len() != s.inputs.len() {
                return Err(Error::shape("sample targets", s.inputs.len(), s.targets.len()));
            }
            loss += self.loss_and_grad(&s.inputs, &s.targets, weight, &mut grads);
        }
        let mut flat = Vec::with_capacity(self.len());
        grads.to_flat(&mut flat);
        Ok((loss, flat))
    }
}

impl Trainable for Model {
    fn num_params(&self) -> usize {
        match self {
            Model::Networked(m) => m.num_params(),
            Model::Rnn(r) => Trainable::num_params(r),
        }
    }

    fn params(&self) -> Vec<f64> {
        match self {
            Model::Networked(m) => m.params(),
            Model::Rnn(r) => Trainable::params(r),
        }
    }

    fn set_params(&mut self, values: &[f64]) {
        match self {
            Model::Networked(m) => m.set_params(values),
            Model::Rnn(r) => Trainable::set_params(r, values),
        }
    }

    fn loss(&self, batch: &[Sample]) -> Result<f64> {
        match self {
            Model::Networked(m) => m.loss(batch),
            Model::Rnn(r) => Trainable::loss(r, batch),
        }
    }

    fn loss_and_grad(&self, batch: &[Sample]) -> Result<(f64, Vec<f64>)> {
        match self {
            Model::Networked(m) => m.loss_and_grad(batch),
            Model::Rnn(r) => Trainable::loss_and_grad(r, batch),
        }
    }

    fn gamma_m(&self) -> Option<f64> {
        match self {
            Model::Networked(m) => m.gamma_m(),
            Model::Rnn(_) => None,
        }
    }

    fn certificate_min_eigenvalue(&self) -> Result<Option<f64>> {
        match self {
            Model::Networked(m) => m.certificate_min_eigenvalue().map(Some),
            Model::Rnn(_) => Ok(None),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputScaling {
    /// One factor for all levels, so the model loss is proportional to the
    /// plant-unit loss.
    #[default]
    Shared,
    PerChannel,
}

/// Target magnitudes of the scaled signals seen by the model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    pub output: OutputScaling,
    /// RMS of the scaled pump signal.
    pub input_rms: f64,
    /// RMS of the scaled levels.
    pub output_rms: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            output: OutputScaling::Shared,
            input_rms: 0.1,
            output_rms: 0.015,
        }
    }
}

impl ScalingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("input_rms", self.input_rms), ("output_rms", self.output_rms)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Model units are plant units divided by these factors; no offsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scaling {
    pub input: f64,
    pub output: Vec<f64>,
}

impl Scaling {
    pub fn identity(outputs: usize) -> Self {
        Scaling {
            input: 1.0,
            output: vec![1.0; outputs],
        }
    }

    /// Factors that bring the root-mean-square magnitudes over `seqs` to the
    /// configured levels.
    pub fn fit<'a>(seqs: impl IntoIterator<Item = &'a PlantSequence>, cfg: &ScalingConfig) -> Result<Self> {
        cfg.validate()?;
        let (mut v_sq, mut n_v) = (0.0, 0usize);
        let (mut y_sq, mut n_y) = ([0.0f64; 3], 0usize);
        for s in seqs {
            v_sq += s.v.iter().map(|v| v * v).sum::<f64>();
            n_v += s.v.len();
            for y in &s.y_ref {
                for i in 0..3 {
                    y_sq[i] += y[i] * y[i];
                }
            }
            n_y += s.y_ref.len();
        }
        if n_v == 0 || n_y == 0 {
            return Err(Error::Domain("cannot fit scaling to an empty set".into()));
        }
        let rms = |sq: f64, n: usize| {
            let r = (sq / n as f64).sqrt();
            if r > 0.0 {
                r
            } else {
                1.0
            }
        };
        let output = match cfg.output {
            OutputScaling::Shared => vec![rms(y_sq.iter().sum(), 3 * n_y); 3],
            OutputScaling::PerChannel => y_sq.iter().map(|&s| rms(s, n_y)).collect(),
        };
        Ok(Scaling {
            input: rms(v_sq, n_v) / cfg.input_rms,
            output: output.into_iter().map(|o| o / cfg.output_rms).collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentificationModel {
    pub model: Model,
    pub scaling: Scaling,
    /// Rows of the model input that receive the scaled pump signal.
    pub input_rows: Vec<usize>,
}

impl IdentificationModel {
    pub fn new(model: Model, scaling: Scaling, input_rows: Vec<usize>) -> Result<Self> {
        let width = model.input_dim();
        if input_rows.is_empty() || input_rows.iter().any(|&r| r >= width) {
            return Err(Error::Config(format!("input rows {input_rows:?} must be nonempty and below {width}")));
        }
        if model.output_dim() != 3 || scaling.output.len() != 3 {
            return Err(Error::Config(format!(
                "the plant has 3 outputs; model has {} and scaling has {}",
                model.output_dim(),
                scaling.output.len()
            )));
        }
        if !(scaling.input > 0.0) || scaling.output.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("scaling factors must be positive".into()));
        }
        Ok(IdentificationModel {
            model,
            scaling,
            input_rows,
        })
    }

    pub fn model_inputs(&self, v: &[f64]) -> Vec<DVector<f64>> {
        let width = self.model.input_dim();
        v.iter()
            .map(|&vt| {
                let mut d = DVector::zeros(width);
                for &r in &self.input_rows {
                    d[r] = vt / self.scaling.input;
                }
                d
            })
            .collect()
    }

    pub fn sample(&self, seq: &PlantSequence) -> Sample {
        Sample {
            inputs: self.model_inputs(&seq.v),
            targets: seq
                .y_ref
                .iter()
                .map(|y| DVector::from_fn(3, |i, _| y[i] / self.scaling.output[i]))
                .collect(),
        }
    }

    pub fn samples<'a>(&self, seqs: impl IntoIterator<Item = &'a PlantSequence>) -> Vec<Sample> {
        seqs.into_iter().map(|s| self.sample(s)).collect()
    }

    /// Open-loop prediction in plant units from zero model state.
    pub fn predict(&self, v: &[f64]) -> Result<Vec<Levels>> {
        let y = self.model.rollout(&self.model_inputs(v))?;
        Ok(y.iter().map(|yt| std::array::from_fn(|i| yt[i] * self.scaling.output[i])).collect())
    }

    /// Mean squared error in plant units over every level entry.
    pub fn mse<'a>(&self, seqs: impl IntoIterator<Item = &'a PlantSequence>) -> Result<f64> {
        let (mut sum, mut count) = (0.0, 0usize);
        for s in seqs {
            let y = self.predict(&s.v)?;
            for (a, b) in y.iter().zip(&s.y_ref) {
                sum += (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>();
                count += 3;
            }
        }
        if count == 0 {
            return Err(Error::Domain("no sequences to evaluate".into()));
        }
        Ok(sum / count as f64)
    }

    pub fn tunable_parameter_count(&self) -> usize {
        self.model.num_params()
    }
}
