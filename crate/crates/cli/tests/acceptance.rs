//! Acceptance suite. Prints one line per criterion and exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use netgain_cli::commands::{cmd_compare, cmd_evaluate, cmd_generate, cmd_train, read_loss_csv, Layout};
use netgain_cli::ExperimentConfig;
use netgain_core::certificates::{
    assemble_certificate_matrix, assemble_full_condition_matrix, check_psd, estimate_incremental_gain, gershgorin_check,
    InputPair,
};
use netgain_core::identification::{IdentificationModel, Model, Scaling};
use netgain_core::network::{evaluation_order, gradient_check, NetworkModel, Sample, Trainable, TrainingConfig};
use netgain_core::operators::{CgroParams, CgroRealized, RnnParams, SequenceOperator};
use netgain_core::parametrization::{allocate_gains, FreeGainParams, GammaMode};
use netgain_core::persistence::{Checkpoint, RngState};
use netgain_core::plant::{generate_dataset, simulate_tanks, tank_derivative, DatasetConfig, Levels, TankParams};
use netgain_core::topology::{BlockDims, InterconnectionTopology};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PSD_TOL: f64 = 1e-9;
const GAIN_SLACK: f64 = 1e-6;
const GRADIENT_RTOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const ROLLOUT_ATOL: f64 = 1e-12;
const EULER_RATIO: (f64, f64) = (1.5, 2.5);
const IMPROVEMENT: f64 = 10.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, steps: usize, amplitude: f64) -> Vec<DVector<f64>> {
    let normal = rand_distr::StandardNormal;
    (0..steps)
        .map(|_| DVector::from_fn(dim, |_, _| amplitude * rng.sample::<f64, _>(normal)))
        .collect()
}

/// Two input sequences from the same draw: either independent or a perturbation of each other.
fn probe_pair(rng: &mut ChaCha8Rng, dim: usize, steps: usize) -> InputPair {
    let amplitude = log_uniform(rng, 0.05, 20.0);
    let d = gaussian(rng, dim, steps, amplitude);
    let d_alt = if rng.random_bool(0.5) {
        gaussian(rng, dim, steps, amplitude)
    } else {
        let eps = log_uniform(rng, 1e-3, 1.0) * amplitude;
        d.iter().zip(gaussian(rng, dim, steps, eps)).map(|(a, b)| a + b).collect()
    };
    (d, d_alt)
}

fn random_coupling(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> DMatrix<f64> {
    let density = rng.random_range(0.2..=1.0);
    DMatrix::from_fn(rows, cols, |_, _| {
        if rng.random_bool(density) {
            rng.random_range(-bound..=bound)
        } else {
            0.0
        }
    })
}

fn random_topology(rng: &mut ChaCha8Rng, max_blocks: usize, max_width: usize, bound: f64) -> InterconnectionTopology {
    let blocks = rng.random_range(1..=max_blocks);
    let dims: Vec<BlockDims> = (0..blocks)
        .map(|_| {
            BlockDims::new(
                rng.random_range(1..=max_width),
                rng.random_range(1..=max_width),
                rng.random_range(1..=3),
            )
        })
        .collect();
    let m: usize = dims.iter().map(|b| b.m).sum();
    let p: usize = dims.iter().map(|b| b.p).sum();
    InterconnectionTopology::new(dims, random_coupling(rng, m, p, bound)).unwrap()
}

/// Random feedthrough flags, redrawn until the interconnection is well posed.
fn well_posed_feedthrough(rng: &mut ChaCha8Rng, t: &InterconnectionTopology) -> Vec<bool> {
    loop {
        let ft: Vec<bool> = (0..t.len()).map(|_| rng.random_bool(0.4)).collect();
        if evaluation_order(t, &ft).is_ok() {
            return ft;
        }
    }
}

fn random_network(rng: &mut ChaCha8Rng, max_blocks: usize, gamma: GammaMode) -> NetworkModel {
    let t = random_topology(rng, max_blocks, 2, 1.5);
    let ft = well_posed_feedthrough(rng, &t);
    let mut model = NetworkModel::random(t, &ft, gamma, rng.random_range(0.5..0.99), rng).unwrap();
    for z in &mut model.z {
        *z = rng.random_range(-3.0..3.0);
    }
    let scale = log_uniform(rng, 0.2, 5.0);
    for b in &mut model.blocks {
        b.a_hat *= scale;
        b.b_hat *= scale;
    }
    model
}

struct Corpus {
    topology: InterconnectionTopology,
    params: FreeGainParams,
}

fn certificate_corpus() -> Vec<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..1000)
        .map(|_| {
            let topology = random_topology(&mut rng, 6, 3, 2.0);
            let z = (0..topology.len()).map(|_| rng.random_range(-10.0..=10.0)).collect();
            let gamma_m = log_uniform(&mut rng, 1e-2, 1e2);
            Corpus {
                topology,
                params: FreeGainParams {
                    z,
                    gamma_mode: GammaMode::Fixed { gamma_m },
                },
            }
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let (mut failures, mut worst) = (0, f64::INFINITY);
    for c in certificate_corpus() {
        let ok = allocate_gains(&c.topology, &c.params).and_then(|a| {
            let s = assemble_full_condition_matrix(&c.topology, &a)?;
            check_psd(&s, PSD_TOL)
        });
        match ok {
            Ok((psd, min)) => {
                worst = worst.min(min);
                if !psd {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    outcome(failures == 0, format!("1000 draws, {failures} failures, smallest eigenvalue {worst:.3e}"))
}

fn criterion_2() -> Outcome {
    let (mut passes, mut counterexamples, mut matrices) = (0, 0, 0);
    for c in certificate_corpus() {
        let a = allocate_gains(&c.topology, &c.params).unwrap();
        let mut forms = vec![assemble_full_condition_matrix(&c.topology, &a).unwrap()];
        if let Ok(s) = assemble_certificate_matrix(&c.topology, &a) {
            forms.push(s);
        }
        for s in forms {
            matrices += 1;
            let (g, _) = gershgorin_check(&s);
            let (psd, _) = check_psd(&s, PSD_TOL).unwrap();
            if g {
                passes += 1;
                if !psd {
                    counterexamples += 1;
                }
            }
        }
    }
    outcome(
        counterexamples == 0,
        format!("{matrices} matrices, {passes} Gershgorin passes, {counterexamples} counterexamples"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut violations, mut worst_ratio) = (0, 0.0f64);
    for _ in 0..500 {
        let dims = BlockDims::new(rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=4));
        let mut params = CgroParams::random(dims, rng.random_bool(0.5), &mut rng);
        let scale = log_uniform(&mut rng, 0.1, 10.0);
        params.a_hat *= scale;
        params.b_hat *= scale;
        let gamma = log_uniform(&mut rng, 1e-2, 1e2);
        let op = CgroRealized::new(&params, gamma, rng.random_range(0.5..0.99)).unwrap();
        let pairs: Vec<InputPair> = (0..50).map(|_| probe_pair(&mut rng, dims.m, 128)).collect();
        let gain = estimate_incremental_gain(&op, &pairs, &DVector::zeros(dims.n)).unwrap();
        worst_ratio = worst_ratio.max(gain / gamma);
        if gain > gamma + GAIN_SLACK {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("500 operators x 50 pairs, {violations} violations, largest empirical/assigned {worst_ratio:.4}"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut violations, mut worst_ratio, mut with_feedthrough) = (0, 0.0f64, 0);
    for _ in 0..100 {
        let gamma_m = log_uniform(&mut rng, 0.1, 10.0);
        let model = random_network(&mut rng, 4, GammaMode::Fixed { gamma_m });
        if model.blocks.iter().any(|b| b.has_feedthrough()) {
            with_feedthrough += 1;
        }
        let net = model.realize().unwrap();
        let width = model.topology.input_width();
        let pairs: Vec<InputPair> = (0..20).map(|_| probe_pair(&mut rng, width, 64)).collect();
        let gain = estimate_incremental_gain(&net, &pairs, &DVector::zeros(model.topology.state_width())).unwrap();
        worst_ratio = worst_ratio.max(gain / gamma_m);
        if gain > gamma_m + GAIN_SLACK {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!(
            "100 networks ({with_feedthrough} with feedthrough) x 20 pairs, {violations} violations, largest empirical/gamma_M {worst_ratio:.4}"
        ),
    )
}

fn configs_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

fn config_in(name: &str, root: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(Some(&configs_dir().join(name)), &[]).unwrap();
    cfg.output_dir = root.join("runs");
    cfg
}

fn criterion_5() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let cfg = config_in("slow_learning_rate.toml", tmp.path());
    assert_eq!((cfg.training.learning_rate, cfg.training.epochs), (1e-2, 500));
    cmd_generate(&cfg).unwrap();
    cmd_train(&cfg, None).unwrap();
    let rows = read_loss_csv(&Layout::new(&cfg).loss_csv()).unwrap();
    let eigs: Vec<f64> = rows.iter().filter_map(|r| r.min_certificate_eigenvalue).collect();
    let worst = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    let all_psd = rows.len() == 500 && eigs.len() == 500 && worst >= -PSD_TOL;
    outcome(
        all_psd,
        format!(
            "eta=1e-2, E=500, {} logged epochs, smallest certificate eigenvalue {worst:.3e}, loss {:.4e} -> {:.4e}",
            rows.len(),
            rows.first().map_or(f64::NAN, |r| r.train_loss),
            rows.last().map_or(f64::NAN, |r| r.train_loss)
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dims = BlockDims::new(3, 3, 3);
    let mut coupling = random_coupling(&mut rng, 6, 6, 1.0);
    // block 1 has feedthrough, so it must not feed itself
    coupling.view_mut((3, 3), (3, 3)).fill(0.0);
    let t = InterconnectionTopology::new(vec![dims, dims], coupling).unwrap();
    let blocks = vec![CgroParams::random(dims, false, &mut rng), CgroParams::random(dims, true, &mut rng)];
    let model = NetworkModel::new(t, blocks, vec![0.4, -0.7], GammaMode::Trainable { z_m: 1.3 }, 0.95).unwrap();
    let batch: Vec<Sample> = (0..2)
        .map(|_| Sample {
            inputs: gaussian(&mut rng, 6, 16, 1.0),
            targets: gaussian(&mut rng, 6, 16, 0.5),
        })
        .collect();
    let n = model.num_params();
    let err = gradient_check(&model, &batch, FD_STEP, n, 0).unwrap();
    outcome(
        n >= 50 && err <= GRADIENT_RTOL,
        format!("2 sub-operators, T=16, {n} coordinates, max relative error {err:.3e}"),
    )
}

fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Stacked recurrence with the algebraic loop solved as one linear system.
fn stacked_rollout(model: &NetworkModel, x0: &DVector<f64>, d: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let net = model.realize().unwrap();
    let ops = net.subops();
    let a = block_diag(&ops.iter().map(|o| o.a.clone()).collect::<Vec<_>>());
    let b = block_diag(&ops.iter().map(|o| o.b.clone()).collect::<Vec<_>>());
    let c = block_diag(&ops.iter().map(|o| &o.c * o.scale).collect::<Vec<_>>());
    let dd = block_diag(
        &ops.iter()
            .map(|o| o.d.as_ref().map_or_else(|| DMatrix::zeros(o.c.nrows(), o.b.ncols()), |d| d * o.scale))
            .collect::<Vec<_>>(),
    );
    let m = model.topology.coupling();
    let loop_matrix = DMatrix::identity(m.nrows(), m.nrows()) - m * &dd;
    let lu = loop_matrix.lu();
    let mut x = x0.clone();
    let mut out = Vec::new();
    for dt in d {
        let s = x.map(f64::tanh);
        let u = lu.solve(&(m * (&c * &s) + dt)).unwrap();
        out.push(&c * &s + &dd * &u);
        x = &a * &s + &b * &u;
    }
    out
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst, mut with_feedthrough) = (0.0f64, 0);
    for _ in 0..50 {
        let gamma_m = log_uniform(&mut rng, 0.2, 5.0);
        let model = random_network(&mut rng, 4, GammaMode::Fixed { gamma_m });
        if model.blocks.iter().any(|b| b.has_feedthrough()) {
            with_feedthrough += 1;
        }
        let steps = rng.random_range(1..=32);
        let x0 = gaussian(&mut rng, model.topology.state_width(), 1, 1.0).remove(0);
        let d = gaussian(&mut rng, model.topology.input_width(), steps, 1.0);
        let y = model.realize().unwrap().rollout(&x0, &d).unwrap();
        for (a, b) in y.iter().zip(stacked_rollout(&model, &x0, &d)) {
            worst = worst.max((a - b).amax());
        }
    }
    outcome(
        worst <= ROLLOUT_ATOL,
        format!("50 instances ({with_feedthrough} with feedthrough), max abs deviation {worst:.3e}"),
    )
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let cfg = config_in("three_tank.toml", tmp.path());
    cmd_generate(&cfg).unwrap();
    let started = Instant::now();
    cmd_train(&cfg, None).unwrap();
    let layout = Layout::new(&cfg);
    let eval = cmd_evaluate(&cfg, &layout.final_checkpoint(), &cfg.dataset_dir(), Some(&layout.checkpoint(0))).unwrap();
    let improvement = eval.improvement.unwrap();
    let rows = cmd_compare(&cfg).unwrap();
    let smallest = |family: &str, seed: u64| {
        rows.iter()
            .filter(|r| r.model == family && r.seed == seed)
            .min_by_key(|r| r.tunable_parameter_count)
            .map(|r| (r.tunable_parameter_count, r.val_loss.unwrap_or(f64::INFINITY)))
            .unwrap()
    };
    let mut wins = 0;
    let mut cells = Vec::new();
    for &seed in &cfg.compare.seeds {
        let (cn, ln) = smallest("networked", seed);
        let (cr, lr) = smallest("rnn", seed);
        if ln <= lr {
            wins += 1;
        }
        cells.push(format!("seed {seed}: {ln:.1} ({cn}) vs {lr:.1} ({cr})"));
    }
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    outcome(
        improvement >= IMPROVEMENT && wins >= 2 && cfg.compare.seeds.len() == 3 && minutes < 30.0,
        format!(
            "(a) validation MSE {:.1} -> {:.1}, {improvement:.1}x; (b) networked <= RNN at smallest size in {wins}/3 [{}]; {minutes:.2} min",
            eval.baseline_mse.unwrap(),
            eval.aggregate_mse,
            cells.join("; ")
        ),
    )
}

fn rk4_terminal(h0: Levels, v: f64, p: &TankParams, dt: f64, steps: usize) -> Levels {
    let add = |h: &Levels, k: &Levels, s: f64| -> Levels { std::array::from_fn(|i| h[i] + s * k[i]) };
    let f = |h: &Levels| tank_derivative(h, v, p).unwrap();
    let mut h = h0;
    for _ in 0..steps {
        let k1 = f(&h);
        let k2 = f(&add(&h, &k1, dt / 2.0));
        let k3 = f(&add(&h, &k2, dt / 2.0));
        let k4 = f(&add(&h, &k3, dt));
        h = std::array::from_fn(|i| h[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    h
}

fn criterion_9() -> Outcome {
    let plant = TankParams::table1();
    let rest = simulate_tanks(&[0.0; 3], &[0.0; 1000], &plant).unwrap();
    let equilibrium = rest.iter().all(|h| h.iter().all(|&x| x == 0.0));

    let (h0, v, horizon) = ([10.0, 5.0, 2.0], 50.0, 20.0);
    let reference = rk4_terminal(h0, v, &plant, 1e-3, 20_000);
    let err = |ts: f64| {
        let p = TankParams { ts, ..plant };
        let steps = (horizon / ts).round() as usize;
        let h = *simulate_tanks(&h0, &vec![v; steps], &p).unwrap().last().unwrap();
        (0..3).map(|i| (h[i] - reference[i]).powi(2)).sum::<f64>().sqrt()
    };
    let errors: Vec<f64> = [0.1, 0.05, 0.025, 0.0125].iter().map(|&ts| err(ts)).collect();
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let first_order = ratios.iter().all(|r| (EULER_RATIO.0..=EULER_RATIO.1).contains(r));

    let cfg = DatasetConfig {
        seed: 9,
        ..DatasetConfig::default()
    };
    let (a, b) = (generate_dataset(&cfg).unwrap(), generate_dataset(&cfg).unwrap());
    let bits = |d: &netgain_core::plant::PlantDataset| -> Vec<u64> {
        d.sequences
            .iter()
            .flat_map(|s| s.v.iter().copied().chain(s.y_ref.iter().flatten().copied()).chain(s.initial_levels))
            .map(f64::to_bits)
            .collect()
    };
    let tmp = tempfile::TempDir::new().unwrap();
    a.save(&tmp.path().join("a")).unwrap();
    b.save(&tmp.path().join("b")).unwrap();
    let same_files = ["manifest.json", "seq_0000.csv", "seq_0039.csv"]
        .iter()
        .all(|f| std::fs::read(tmp.path().join("a").join(f)).unwrap() == std::fs::read(tmp.path().join("b").join(f)).unwrap());
    let deterministic = bits(&a) == bits(&b) && a.identification == b.identification && same_files;
    outcome(
        equilibrium && first_order && deterministic,
        format!(
            "rest equilibrium exact: {equilibrium}; Euler error ratios {:?}; dataset bitwise deterministic: {deterministic}",
            ratios.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

fn random_identification_model(rng: &mut ChaCha8Rng) -> IdentificationModel {
    let scaling = Scaling {
        input: log_uniform(rng, 0.1, 100.0),
        output: (0..3).map(|_| log_uniform(rng, 0.1, 100.0)).collect(),
    };
    if rng.random_bool(0.3) {
        let rnn = RnnParams::random(BlockDims::new(1, 3, rng.random_range(1..=6)), rng);
        return IdentificationModel::new(Model::Rnn(rnn), scaling, vec![0]).unwrap();
    }
    let outputs: Vec<usize> = match rng.random_range(0..3) {
        0 => vec![3],
        1 => vec![2, 1],
        _ => vec![1, 1, 1],
    };
    let dims: Vec<BlockDims> = outputs
        .iter()
        .map(|&p| BlockDims::new(rng.random_range(1..=2), p, rng.random_range(0..=3)))
        .collect();
    let m: usize = dims.iter().map(|b| b.m).sum();
    let t = InterconnectionTopology::new(dims, random_coupling(rng, m, 3, 1.5)).unwrap();
    let ft = well_posed_feedthrough(rng, &t);
    let gamma = if rng.random_bool(0.5) {
        GammaMode::Trainable {
            z_m: rng.random_range(-3.0..3.0),
        }
    } else {
        GammaMode::Fixed {
            gamma_m: log_uniform(rng, 0.1, 10.0),
        }
    };
    let mut net = NetworkModel::random(t, &ft, gamma, rng.random_range(0.5..0.99), rng).unwrap();
    for z in &mut net.z {
        *z = rng.random_range(-5.0..5.0);
    }
    let rows: Vec<usize> = (0..m).filter(|_| rng.random_bool(0.5)).collect();
    let rows = if rows.is_empty() { vec![0] } else { rows };
    IdentificationModel::new(Model::Networked(net), scaling, rows).unwrap()
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let tmp = tempfile::TempDir::new().unwrap();
    let probe: Vec<f64> = (0..64).map(|k| 50.0 + 40.0 * (0.3 * k as f64).sin()).collect();
    let mut mismatches = 0;
    for k in 0..100 {
        let model = random_identification_model(&mut rng);
        let training = TrainingConfig {
            learning_rate: log_uniform(&mut rng, 1e-4, 1e3),
            epochs: rng.random_range(1..1000),
            seed: rng.random(),
            ..TrainingConfig::default()
        };
        let rng_state = RngState {
            algorithm: "chacha8".into(),
            seed: rng.random(),
            word_pos: rng.random::<u64>().to_string(),
        };
        let path = tmp.path().join(format!("c{k}.netgain.json"));
        let ckpt = Checkpoint::new(&model, &training, rng.random_range(0..1000), rng_state);
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let restored = loaded.identification_model().unwrap();
        let before: Vec<u64> = model.predict(&probe).unwrap().iter().flatten().map(|v| v.to_bits()).collect();
        let after: Vec<u64> = restored.predict(&probe).unwrap().iter().flatten().map(|v| v.to_bits()).collect();
        if before != after || loaded != ckpt || loaded.to_json().unwrap() != std::fs::read_to_string(&path).unwrap() {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("100 checkpoints, {mismatches} rollouts differ after reload"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("freeness and certificate over 1000 random allocations", criterion_1),
        ("Gershgorin soundness", criterion_2),
        ("sub-operator gain soundness", criterion_3),
        ("network gain soundness", criterion_4),
        ("certificate throughout three-tank training", criterion_5),
        ("reverse-mode gradient vs central differences", criterion_6),
        ("networked rollout vs stacked recurrence", criterion_7),
        ("three-tank trend: improvement and RNN comparison", criterion_8),
        ("plant sanity", criterion_9),
        ("checkpoint round trip", criterion_10),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {} {name}: {} [{:.1}s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            started.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
