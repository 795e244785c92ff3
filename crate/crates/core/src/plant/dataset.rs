use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{simulate_tanks, Levels, TankParams};
use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "default_sequences")]
    pub sequences: usize,
    #[serde(default = "default_length")]
    pub length: usize,
    #[serde(default = "default_v_range")]
    pub v_range: [f64; 2],
    /// Steps each random pump value is held.
    #[serde(default = "default_hold")]
    pub hold: usize,
    /// Range of the uniformly drawn initial levels, in cm.
    #[serde(default = "default_initial_range")]
    pub initial_level_range: [f64; 2],
    /// Noise standard deviation in cm; `None` means 1% of the mean noise-free level.
    #[serde(default)]
    pub noise_std: Option<f64>,
    #[serde(default = "default_split")]
    pub split_ratio: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub plant: TankParams,
}

fn default_sequences() -> usize {
    40
}

fn default_length() -> usize {
    20
}

fn default_v_range() -> [f64; 2] {
    [10.0, 100.0]
}

fn default_hold() -> usize {
    5
}

fn default_initial_range() -> [f64; 2] {
    [0.0, 20.0]
}

fn default_split() -> f64 {
    0.7
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            sequences: default_sequences(),
            length: default_length(),
            v_range: default_v_range(),
            hold: default_hold(),
            initial_level_range: default_initial_range(),
            noise_std: None,
            split_ratio: default_split(),
            seed: 0,
            plant: TankParams::table1(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        if self.sequences < 2 || self.length == 0 || self.hold == 0 {
            return Err(Error::Domain(format!(
                "need at least 2 sequences, length >= 1 and hold >= 1 (got {}, {}, {})",
                self.sequences, self.length, self.hold
            )));
        }
        let [lo, hi] = self.v_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Domain(format!("invalid input range [{lo}, {hi}]")));
        }
        let [lo, hi] = self.initial_level_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(Error::Domain(format!("invalid initial level range [{lo}, {hi}]")));
        }
        if let Some(s) = self.noise_std {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Domain(format!("noise_std must be nonnegative, got {s}")));
            }
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Domain(format!("split_ratio must lie in (0, 1), got {}", self.split_ratio)));
        }
        Ok(())
    }
}

/// One experiment: `y_ref[t]` is the noisy level vector `h(t)` observed
/// while `v[t]` is applied, for `t = 0..T`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantSequence {
    pub initial_levels: Levels,
    pub v: Vec<f64>,
    pub y_ref: Vec<Levels>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantDataset {
    pub config: DatasetConfig,
    /// Noise level actually applied.
    pub noise_std: f64,
    pub sequences: Vec<PlantSequence>,
    pub identification: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    config: DatasetConfig,
    noise_std: f64,
    sequence_length: usize,
    initial_levels: Vec<Levels>,
    identification: Vec<usize>,
    validation: Vec<usize>,
    files: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    t: usize,
    v: f64,
    y1: f64,
    y2: f64,
    y3: f64,
}

fn sequence_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64))
}

pub fn generate_dataset(cfg: &DatasetConfig) -> Result<PlantDataset> {
    cfg.validate()?;
    let mut rngs: Vec<ChaCha8Rng> = (0..cfg.sequences).map(|i| sequence_rng(cfg.seed, i)).collect();
    let mut clean = Vec::with_capacity(cfg.sequences);
    for rng in &mut rngs {
        let [lo, hi] = cfg.initial_level_range;
        let h0: Levels = std::array::from_fn(|_| if hi > lo { rng.random_range(lo..hi) } else { lo });
        let mut v = Vec::with_capacity(cfg.length);
        while v.len() < cfg.length {
            let [vlo, vhi] = cfg.v_range;
            let value = if vhi > vlo { rng.random_range(vlo..vhi) } else { vlo };
            let n = cfg.hold.min(cfg.length - v.len());
            v.extend(std::iter::repeat_n(value, n));
        }
        let mut h = simulate_tanks(&h0, &v, &cfg.plant)?;
        h.pop();
        clean.push((h0, v, h));
    }

    let noise_std = match cfg.noise_std {
        Some(s) => s,
        None => {
            let (sum, count) = clean
                .iter()
                .flat_map(|(_, _, h)| h.iter().flatten())
                .fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
            0.01 * sum / count as f64
        }
    };
    let normal = Normal::new(0.0, noise_std).map_err(|e| Error::Domain(e.to_string()))?;
    let sequences = clean
        .into_iter()
        .zip(&mut rngs)
        .map(|((initial_levels, v, h), rng)| {
            let y_ref = h
                .iter()
                .map(|l| std::array::from_fn(|i| if noise_std > 0.0 { l[i] + normal.sample(rng) } else { l[i] }))
                .collect();
            PlantSequence { initial_levels, v, y_ref }
        })
        .collect();

    let mut order: Vec<usize> = (0..cfg.sequences).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    order.shuffle(&mut shuffle_rng);
    let n_id = ((cfg.split_ratio * cfg.sequences as f64).ceil() as usize).min(cfg.sequences - 1);
    let validation = order.split_off(n_id);
    Ok(PlantDataset {
        config: cfg.clone(),
        noise_std,
        sequences,
        identification: order,
        validation,
    })
}

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(format!("{}: {e}", path.display())))
}

impl PlantDataset {
    pub fn length(&self) -> usize {
        self.sequences.first().map_or(0, |s| s.v.len())
    }

    pub fn identification_set(&self) -> impl Iterator<Item = &PlantSequence> {
        self.identification.iter().map(|&i| &self.sequences[i])
    }

    pub fn validation_set(&self) -> impl Iterator<Item = &PlantSequence> {
        self.validation.iter().map(|&i| &self.sequences[i])
    }

    /// Writes `manifest.json` and one `seq_NNNN.csv` per sequence into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let mut files = Vec::with_capacity(self.sequences.len());
        for (k, seq) in self.sequences.iter().enumerate() {
            let name = format!("seq_{k:04}.csv");
            let path = dir.join(&name);
            let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
            for (t, (v, y)) in seq.v.iter().zip(&seq.y_ref).enumerate() {
                w.serialize(Row {
                    t,
                    v: *v,
                    y1: y[0],
                    y2: y[1],
                    y3: y[2],
                })
                .map_err(|e| io_err(&path, e))?;
            }
            w.flush().map_err(|e| io_err(&path, e))?;
            files.push(name);
        }
        let manifest = Manifest {
            format_version: DATASET_FORMAT_VERSION,
            config: self.config.clone(),
            noise_std: self.noise_std,
            sequence_length: self.length(),
            initial_levels: self.sequences.iter().map(|s| s.initial_levels).collect(),
            identification: self.identification.clone(),
            validation: self.validation.clone(),
            files,
        };
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| io_err(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            offset: crate::persistence::byte_offset(&text, e.line(), e.column()),
            message: format!("{}: {e}", path.display()),
        })?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Migration {
                found: manifest.format_version,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        if manifest.initial_levels.len() != manifest.files.len() {
            return Err(Error::shape("initial levels in manifest", manifest.files.len(), manifest.initial_levels.len()));
        }
        let mut sequences = Vec::with_capacity(manifest.files.len());
        for (name, initial_levels) in manifest.files.iter().zip(&manifest.initial_levels) {
            let path = dir.join(name);
            let mut r = csv::Reader::from_path(&path).map_err(|e| io_err(&path, e))?;
            let mut v = Vec::new();
            let mut y_ref = Vec::new();
            for (t, row) in r.deserialize::<Row>().enumerate() {
                let row = row.map_err(|e| Error::Parse {
                    offset: e.position().map_or(0, |p| p.byte() as usize),
                    message: format!("{}: {e}", path.display()),
                })?;
                if row.t != t {
                    return Err(Error::Parse {
                        offset: 0,
                        message: format!("{}: expected t = {t}, found {}", path.display(), row.t),
                    });
                }
                v.push(row.v);
                y_ref.push([row.y1, row.y2, row.y3]);
            }
            if v.len() != manifest.sequence_length {
                return Err(Error::shape(format!("length of {}", path.display()), manifest.sequence_length, v.len()));
            }
            sequences.push(PlantSequence {
                initial_levels: *initial_levels,
                v,
                y_ref,
            });
        }
        let n = sequences.len();
        if manifest.identification.iter().chain(&manifest.validation).any(|&i| i >= n) {
            return Err(Error::Domain("split index out of range".into()));
        }
        Ok(PlantDataset {
            config: manifest.config,
            noise_std: manifest.noise_std,
            sequences,
            identification: manifest.identification,
            validation: manifest.validation,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> DatasetConfig {
        DatasetConfig {
            sequences: 10,
            length: 30,
            seed,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn split_follows_ratio() {
        let d = generate_dataset(&small(1)).unwrap();
        assert_eq!(d.identification.len(), 7);
        assert_eq!(d.validation.len(), 3);
        let mut all: Vec<usize> = d.identification.iter().chain(&d.validation).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn noiseless_references_equal_simulation() {
        let cfg = DatasetConfig {
            noise_std: Some(0.0),
            ..small(2)
        };
        let d = generate_dataset(&cfg).unwrap();
        for s in &d.sequences {
            let h = simulate_tanks(&s.initial_levels, &s.v, &cfg.plant).unwrap();
            assert_eq!(s.y_ref[..], h[..s.v.len()]);
            assert!(s.v.iter().all(|v| (10.0..100.0).contains(v)));
            assert_eq!(s.v[0], s.v[4]);
            assert!(s.initial_levels.iter().all(|h| (0.0..20.0).contains(h)));
        }
    }

    #[test]
    fn default_noise_is_one_percent_of_mean_level() {
        let d = generate_dataset(&small(3)).unwrap();
        let clean = generate_dataset(&DatasetConfig {
            noise_std: Some(0.0),
            ..small(3)
        })
        .unwrap();
        let levels: Vec<f64> = clean.sequences.iter().flat_map(|s| s.y_ref.iter().flatten().copied()).collect();
        let mean = levels.iter().sum::<f64>() / levels.len() as f64;
        assert!((d.noise_std - 0.01 * mean).abs() < 1e-12 * mean);
        assert_eq!(d.sequences[0].v, clean.sequences[0].v);
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_dataset(&small(4)).unwrap(), generate_dataset(&small(4)).unwrap());
        assert_ne!(generate_dataset(&small(4)).unwrap(), generate_dataset(&small(5)).unwrap());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            DatasetConfig { sequences: 1, ..small(0) },
            DatasetConfig { length: 0, ..small(0) },
            DatasetConfig { v_range: [100.0, 10.0], ..small(0) },
            DatasetConfig { noise_std: Some(-1.0), ..small(0) },
            DatasetConfig { split_ratio: 1.0, ..small(0) },
        ] {
            assert!(matches!(generate_dataset(&cfg), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn save_load_round_trip() {
        let d = generate_dataset(&small(6)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        assert_eq!(PlantDataset::load(dir.path()).unwrap(), d);
    }
}
