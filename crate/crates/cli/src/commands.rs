//! The five subcommands. Each returns a summary and writes its artifacts
//! under the configured output directory.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::DVector;
use netgain_core::certificates::{certify, estimate_incremental_gain, CertificateReport, InputPair, PSD_TOLERANCE};
use netgain_core::identification::{IdentificationModel, Model, Scaling};
use netgain_core::network::{train, train_with, EpochRecord, NetworkModel, TrainingConfig};
use netgain_core::operators::RnnParams;
use netgain_core::parametrization::GammaMode;
use netgain_core::persistence::{Checkpoint, RngState, CHECKPOINT_SUFFIX};
use netgain_core::plant::{generate_dataset, PlantDataset};
use netgain_core::topology::BlockDims;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Family};
use crate::error::{io, CliError};

/// File layout below the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Layout { root: cfg.output_dir() }
    }

    pub fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn checkpoint(&self, epoch: usize) -> PathBuf {
        self.train_dir().join("checkpoints").join(format!("epoch_{epoch:04}{CHECKPOINT_SUFFIX}"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.train_dir().join(format!("final{CHECKPOINT_SUFFIX}"))
    }

    pub fn loss_csv(&self) -> PathBuf {
        self.train_dir().join("loss.csv")
    }

    pub fn certificate_json(&self) -> PathBuf {
        self.root.join("certify").join("certificate.json")
    }

    pub fn evaluate_dir(&self) -> PathBuf {
        self.root.join("evaluate")
    }

    pub fn sweep_csv(&self) -> PathBuf {
        self.root.join("compare").join("sweep.csv")
    }
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    create_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numeric(e.to_string()))? + "\n";
    fs::write(path, text).map_err(|e| io(path, e))
}

pub fn load_dataset(dir: &Path) -> Result<PlantDataset, CliError> {
    if !dir.join("manifest.json").exists() {
        return Err(CliError::Config(format!(
            "no dataset at {}; run `netgain generate` first or set dataset_path",
            dir.display()
        )));
    }
    Ok(PlantDataset::load(dir)?)
}

fn gamma_mode(cfg: &ExperimentConfig) -> GammaMode {
    if cfg.training.train_gamma_m {
        GammaMode::Trainable {
            z_m: cfg.model.gamma_m.sqrt(),
        }
    } else {
        GammaMode::Fixed {
            gamma_m: cfg.model.gamma_m,
        }
    }
}

/// Randomly initialized model of `family`; `size` overrides the state size of
/// every block (networked) or the hidden width (RNN).
pub fn build_model(
    cfg: &ExperimentConfig,
    family: Family,
    size: Option<usize>,
    seed: u64,
    scaling: Scaling,
) -> Result<(IdentificationModel, RngState), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (model, rows) = match family {
        Family::Networked => {
            let mut topo = cfg.topology()?;
            if let Some(n) = size {
                topo = topo.with_state_dims(&vec![n; topo.len()])?;
            }
            let feedthrough = cfg.model.feedthrough.clone().unwrap_or_else(|| vec![false; topo.len()]);
            let net = NetworkModel::random(topo, &feedthrough, gamma_mode(cfg), cfg.model.radius, &mut rng)?;
            (Model::Networked(net), cfg.input_rows())
        }
        Family::Rnn => {
            let hidden = size.unwrap_or(cfg.model.rnn_hidden);
            (Model::Rnn(RnnParams::random(BlockDims::new(1, 3, hidden), &mut rng)), vec![0])
        }
    };
    let state = RngState {
        algorithm: "chacha8".into(),
        seed,
        word_pos: rng.get_word_pos().to_string(),
    };
    Ok((IdentificationModel::new(model, scaling, rows)?, state))
}

#[derive(Clone, Debug, Serialize)]
pub struct GenerateSummary {
    pub path: PathBuf,
    pub sequences: usize,
    pub length: usize,
    pub identification: usize,
    pub validation: usize,
    pub noise_std: f64,
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<GenerateSummary, CliError> {
    let data = generate_dataset(&cfg.dataset)?;
    let dir = cfg.dataset_dir();
    fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
    data.save(&dir)?;
    Ok(GenerateSummary {
        path: dir,
        sequences: data.sequences.len(),
        length: data.length(),
        identification: data.identification.len(),
        validation: data.validation.len(),
        noise_std: data.noise_std,
    })
}

/// One row of the loss history CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    #[serde(rename = "gamma_M")]
    pub gamma_m: Option<f64>,
    pub min_certificate_eigenvalue: Option<f64>,
}

impl From<&EpochRecord> for LossRow {
    fn from(r: &EpochRecord) -> Self {
        LossRow {
            epoch: r.epoch,
            train_loss: r.train_loss,
            val_loss: r.val_loss,
            gamma_m: r.gamma_m,
            min_certificate_eigenvalue: r.min_certificate_eigenvalue,
        }
    }
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRow>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| io(path, e))?;
    reader
        .deserialize()
        .collect::<Result<Vec<LossRow>, _>>()
        .map_err(|e| io(path, e))
}

fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<(), CliError> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| io(path, e))?;
    if rows.is_empty() {
        w.write_record(["epoch", "train_loss", "val_loss", "gamma_M", "min_certificate_eigenvalue"])
            .map_err(|e| io(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| io(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub family: &'static str,
    pub tunable_parameter_count: usize,
    pub start_epoch: usize,
    pub epochs: usize,
    pub final_train_loss: Option<f64>,
    pub initial_val_mse: f64,
    pub final_val_mse: f64,
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
}

/// Trains from scratch, or from `resume` up to `training.epochs`.
pub fn cmd_train(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<TrainSummary, CliError> {
    let layout = Layout::new(cfg);
    let data = load_dataset(&cfg.dataset_dir())?;
    let (mut model, rng, start, mut rows) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let stored = TrainingConfig {
                epochs: cfg.training.epochs,
                ..ckpt.training.clone()
            };
            if stored != cfg.training {
                warn!("training settings differ from the checkpoint; using the configured ones");
            }
            if ckpt.epoch > cfg.training.epochs {
                return Err(CliError::Config(format!(
                    "training.epochs: checkpoint is at epoch {} but only {} epochs are configured",
                    ckpt.epoch, cfg.training.epochs
                )));
            }
            let previous = if layout.loss_csv().exists() { read_loss_csv(&layout.loss_csv())? } else { Vec::new() };
            let kept: Vec<LossRow> = previous.into_iter().filter(|r| r.epoch <= ckpt.epoch).collect();
            (ckpt.identification_model()?, ckpt.rng.clone(), ckpt.epoch, kept)
        }
        None => {
            let scaling = Scaling::fit(data.identification_set(), &cfg.scaling)?;
            let (m, rng) = build_model(cfg, cfg.model.family, None, cfg.training.seed, scaling)?;
            (m, rng, 0, Vec::new())
        }
    };
    let initial_val_mse = model.mse(data.validation_set())?;
    create_parent(&layout.checkpoint(0))?;
    let save = |m: &IdentificationModel, epoch: usize, path: &Path| Checkpoint::new(m, &cfg.training, epoch, rng.clone()).save(path);
    if resume.is_none() {
        save(&model, 0, &layout.checkpoint(0))?;
    }
    let train_set = model.samples(data.identification_set());
    let val_set = model.samples(data.validation_set());
    let every = cfg.checkpoint.every;
    let mut snapshot = model.clone();
    let result = train_with(&mut model.model, &train_set, &val_set, &cfg.training, start, |m, record| {
        rows.push(record.into());
        if record.epoch % every == 0 || record.epoch == cfg.training.epochs {
            snapshot.model = m.clone();
            save(&snapshot, record.epoch, &layout.checkpoint(record.epoch))?;
        }
        Ok(())
    });
    write_loss_csv(&layout.loss_csv(), &rows)?;
    if let Err(e) = result {
        return Err(match e {
            netgain_core::Error::Divergence { epoch, learning_rate } => CliError::Numeric(format!(
                "training diverged at epoch {epoch} with learning rate {learning_rate}; the loss history up to the failure is in {}",
                layout.loss_csv().display()
            )),
            other => other.into(),
        });
    }
    save(&model, cfg.training.epochs, &layout.final_checkpoint())?;
    let final_val_mse = model.mse(data.validation_set())?;
    info!("validation MSE {initial_val_mse:.4} -> {final_val_mse:.4}");
    Ok(TrainSummary {
        family: model.model.family(),
        tunable_parameter_count: model.tunable_parameter_count(),
        start_epoch: start,
        epochs: cfg.training.epochs,
        final_train_loss: rows.last().map(|r| r.train_loss),
        initial_val_mse,
        final_val_mse,
        checkpoint: layout.final_checkpoint(),
        loss_csv: layout.loss_csv(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CertifySummary {
    pub checkpoint: PathBuf,
    pub epoch: usize,
    pub gamma_m: f64,
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub certificate: CertificateReport,
    pub empirical_gain: f64,
    /// Empirical gain over `gamma_M`; at most 1 for a sound certificate.
    pub empirical_ratio: f64,
    pub probe_pairs: usize,
    pub probe_length: usize,
}

/// Random input pairs of the given width drawn from a standard normal.
pub fn probe_pairs(width: usize, pairs: usize, length: usize, seed: u64) -> Vec<InputPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq = |rng: &mut ChaCha8Rng| -> Vec<DVector<f64>> {
        (0..length)
            .map(|_| DVector::from_fn(width, |_, _| StandardNormal.sample(rng)))
            .collect()
    };
    (0..pairs).map(|_| (seq(&mut rng), seq(&mut rng))).collect()
}

pub fn cmd_certify(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<CertifySummary, CliError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let net = match ckpt.model.restore()? {
        Model::Networked(net) => net,
        Model::Rnn(_) => {
            return Err(CliError::Certificate(format!(
                "{} holds an RNN, which carries no gain certificate",
                checkpoint.display()
            )))
        }
    };
    let allocation = net.allocation()?;
    let certificate = certify(&net.topology, &allocation, PSD_TOLERANCE)?;
    let realized = net.realize()?;
    let pairs = probe_pairs(
        net.topology.input_width(),
        cfg.certify.probe_pairs,
        cfg.certify.probe_length,
        cfg.certify.seed,
    );
    let x0 = DVector::zeros(net.topology.state_width());
    let empirical_gain = estimate_incremental_gain(&realized, &pairs, &x0)?;
    let gamma_m = allocation.gamma_m;
    let summary = CertifySummary {
        checkpoint: checkpoint.to_path_buf(),
        epoch: ckpt.epoch,
        gamma_m,
        alphas: allocation.alphas.clone(),
        gammas: allocation.gammas.clone(),
        certificate,
        empirical_gain,
        empirical_ratio: empirical_gain / gamma_m,
        probe_pairs: cfg.certify.probe_pairs,
        probe_length: cfg.certify.probe_length,
    };
    write_json(&Layout::new(cfg).certificate_json(), &summary)?;
    if !summary.certificate.psd {
        return Err(CliError::Certificate(format!(
            "certificate is not positive semidefinite (min eigenvalue {:e})",
            summary.certificate.min_eigenvalue
        )));
    }
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct SequenceMse {
    pub sequence: usize,
    pub mse: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvaluationSummary {
    pub checkpoint: PathBuf,
    pub aggregate_mse: f64,
    pub per_sequence: Vec<SequenceMse>,
    pub baseline_checkpoint: Option<PathBuf>,
    pub baseline_mse: Option<f64>,
    /// Baseline MSE over aggregate MSE.
    pub improvement: Option<f64>,
}

#[derive(Serialize)]
struct PredictionRow {
    t: usize,
    pred_h1: f64,
    pred_h2: f64,
    pred_h3: f64,
    ref_h1: f64,
    ref_h2: f64,
    ref_h3: f64,
}

/// Open-loop validation rollouts of `checkpoint`, optionally against a `baseline` checkpoint.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    dataset: &Path,
    baseline: Option<&Path>,
) -> Result<EvaluationSummary, CliError> {
    let model = Checkpoint::load(checkpoint)?.identification_model()?;
    let data = load_dataset(dataset)?;
    let dir = Layout::new(cfg).evaluate_dir();
    let pred_dir = dir.join("predictions");
    fs::create_dir_all(&pred_dir).map_err(|e| io(&pred_dir, e))?;
    let mut per_sequence = Vec::new();
    for &k in &data.validation {
        let seq = &data.sequences[k];
        let pred = model.predict(&seq.v)?;
        let path = pred_dir.join(format!("seq_{k:04}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, e))?;
        for (t, (p, r)) in pred.iter().zip(&seq.y_ref).enumerate() {
            w.serialize(PredictionRow {
                t,
                pred_h1: p[0],
                pred_h2: p[1],
                pred_h3: p[2],
                ref_h1: r[0],
                ref_h2: r[1],
                ref_h3: r[2],
            })
            .map_err(|e| io(&path, e))?;
        }
        w.flush().map_err(|e| io(&path, e))?;
        per_sequence.push(SequenceMse {
            sequence: k,
            mse: model.mse([seq])?,
        });
    }
    let aggregate_mse = model.mse(data.validation_set())?;
    let baseline_mse = match baseline {
        Some(p) => Some(Checkpoint::load(p)?.identification_model()?.mse(data.validation_set())?),
        None => None,
    };
    let summary = EvaluationSummary {
        checkpoint: checkpoint.to_path_buf(),
        aggregate_mse,
        per_sequence,
        baseline_checkpoint: baseline.map(Path::to_path_buf),
        baseline_mse,
        improvement: baseline_mse.map(|b| b / aggregate_mse),
    };
    write_json(&dir.join("metrics.json"), &summary)?;
    Ok(summary)
}

/// One cell of the comparison sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: String,
    pub tunable_parameter_count: usize,
    pub val_loss: Option<f64>,
    pub seed: u64,
    /// State size of each networked block, or the RNN hidden width.
    pub size: usize,
    pub status: String,
}

fn sweep_cell(
    cfg: &ExperimentConfig,
    data: &PlantDataset,
    scaling: &Scaling,
    family: Family,
    size: usize,
    seed: u64,
    learning_rate: Option<f64>,
) -> Result<SweepRow, CliError> {
    let (mut model, _) = build_model(cfg, family, Some(size), seed, scaling.clone())?;
    let count = model.tunable_parameter_count();
    let training = TrainingConfig {
        seed,
        learning_rate: learning_rate.unwrap_or(cfg.training.learning_rate),
        ..cfg.training.clone()
    };
    let samples = model.samples(data.identification_set());
    let outcome = train(&mut model.model, &samples, &[], &training).and_then(|_| model.mse(data.validation_set()));
    let (val_loss, status) = match outcome {
        Ok(v) if v.is_finite() => (Some(v), "ok".to_string()),
        Ok(v) => (None, format!("non-finite validation loss {v}")),
        Err(e) => (None, e.to_string()),
    };
    if val_loss.is_none() {
        warn!("{} size {size} seed {seed}: {status}", family.name());
    }
    Ok(SweepRow {
        model: family.name().to_string(),
        tunable_parameter_count: count,
        val_loss,
        seed,
        size,
        status,
    })
}

/// Trains every grid cell for every seed on one dataset and writes the sweep CSV.
pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>, CliError> {
    let data = load_dataset(&cfg.dataset_dir())?;
    let scaling = Scaling::fit(data.identification_set(), &cfg.scaling)?;
    let c = &cfg.compare;
    let mut rows = Vec::new();
    for &seed in &c.seeds {
        for &n in &c.networked.state_dims {
            rows.push(sweep_cell(cfg, &data, &scaling, Family::Networked, n, seed, c.networked.learning_rate)?);
        }
        for &h in &c.rnn.hidden {
            rows.push(sweep_cell(cfg, &data, &scaling, Family::Rnn, h, seed, c.rnn.learning_rate)?);
        }
    }
    let path = Layout::new(cfg).sweep_csv();
    create_parent(&path)?;
    let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| io(&path, e))?;
    }
    w.flush().map_err(|e| io(&path, e))?;
    Ok(rows)
}
