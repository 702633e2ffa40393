//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.
//!
//! Runs on the default synthetic corpus; expect roughly 20 minutes on one core.

use std::path::Path;
use std::time::Instant;

use fedsep::experiment::{self, RunReport, Topology};
use fedsep::ExperimentConfig;
use fedsep_core::autodiff::finite_diff_check;
use fedsep_core::eval::{evaluate_model, EvalCondition, EvalExample, EvalSet, EvalSplit, PassThrough};
use fedsep_core::federation::{
    epoch_plan, run_training, ClientState, FederationConfig, MomentPolicy, RoundMetrics, RoundRecord,
};
use fedsep_core::losses::{loss, make_loss_program, LossInstance, LossKind};
use fedsep_core::model::{init_params, separate, separate_with_grad, ModelConfig, ParamVector};
use fedsep_core::optim::AdamState;
use fedsep_core::signal::{mixture_consistency_project, si_sdr, CAP_DB};
use fedsep_core::{AudioBuffer, Sequential, SourceStack};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-4;
const FD_TOLERANCE: f64 = 1e-4;
const FD_INSTANCES: u64 = 5;
const FD_CLIP: usize = 96;
const SCALE_TOLERANCE_DB: f64 = 1e-9;
const CONSISTENCY_TOLERANCE: f64 = 1e-6;
const IDEMPOTENCE_TOLERANCE: f64 = 1e-12;
const RANDOM_CASES: u64 = 100;
const ORACLE_ROUNDS: u64 = 10;
const ORACLE_TOLERANCE: f64 = 1e-12;
const FEDERATION_MARGIN_DB: f64 = 1.0;
const IID_GAP_DB: f64 = 2.0;
const TRANSFER_FRACTION: f64 = 0.8;
const SWEEP_TOTAL_DB: f64 = 0.3;
const DETERMINISM_ROUNDS: u64 = 20;
const ACCEPTANCE_EVAL_EVERY: u64 = 5;
const GRADIENT_BUDGET_S: f64 = 120.0;
const ORACLE_BUDGET_S: f64 = 300.0;
const FEDERATION_BUDGET_S: f64 = 7200.0;

type Verdict = Result<(bool, String), String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn noise(r: &mut ChaCha8Rng, len: usize, scale: f64) -> AudioBuffer {
    AudioBuffer::new((0..len).map(|_| scale * r.gen_range(-1.0..1.0)).collect(), 8000).unwrap()
}

fn random_params(config: &ModelConfig, r: &mut ChaCha8Rng) -> ParamVector {
    let p = init_params(config).unwrap();
    let mut values = p.values().to_vec();
    for seg in p.layout().segments().iter().filter(|s| s.is_bias) {
        for v in &mut values[seg.range()] {
            *v = r.gen_range(-0.1..0.1);
        }
    }
    p.with_values(values).unwrap()
}

fn random_instance(r: &mut ChaCha8Rng, kind: LossKind, len: usize) -> LossInstance {
    let s1 = noise(r, len, 1.0);
    let s2 = noise(r, len, 0.5);
    let n = noise(r, len, 0.5);
    LossInstance::build(kind, s1.add(&s2).unwrap(), Some((s1, s2)), n).unwrap()
}

fn gradients() -> Verdict {
    let model = ModelConfig::default();
    let mut worst: f64 = 0.0;
    let mut excluded = 0;
    for kind in [LossKind::Supervised, LossKind::Unsupervised] {
        for i in 0..FD_INSTANCES {
            let mut r = rng(100 + i);
            let params = random_params(&ModelConfig { seed: i, ..model.clone() }, &mut r);
            let inst = random_instance(&mut r, kind, FD_CLIP);
            let program = make_loss_program(kind, params.layout().clone());
            let rep = finite_diff_check(&program, params.values(), &inst, FD_STEP, FD_TOLERANCE).map_err(|e| e.to_string())?;
            worst = worst.max(rep.max_relative_error);
            excluded += rep.excluded.len();
        }
    }
    let checked = 2 * FD_INSTANCES as usize * init_params(&model).unwrap().len() - excluded;
    Ok((
        worst < FD_TOLERANCE,
        format!("max relative error {worst:.2e} < {FD_TOLERANCE:.0e} over {checked} coordinates, {excluded} at kinks"),
    ))
}

fn si_sdr_properties() -> Verdict {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    let mut capped = true;
    for _ in 0..RANDOM_CASES {
        let len = r.gen_range(16..512);
        let e = noise(&mut r, len, 1.0);
        let y = noise(&mut r, len, 1.0);
        let a: f64 = r.gen_range(0.01..100.0);
        let base = si_sdr(&e, &y).unwrap();
        let scaled = si_sdr(&e.scaled(a).unwrap(), &y).unwrap();
        worst = worst.max((base - scaled).abs());
        capped &= si_sdr(&y, &y).unwrap() == CAP_DB;
    }
    let examples = (0..20)
        .map(|i| {
            let s1 = noise(&mut r, 400, 1.0);
            let s2 = noise(&mut r, 400, 0.7);
            EvalExample { clip_id: format!("e{i}"), noisy_speech: s1.add(&s2).unwrap(), speech: s1, extra_noise: noise(&mut r, 400, 0.5) }
        })
        .collect();
    let set = EvalSet { examples };
    let mut zero = true;
    for cond in [EvalCondition::OneNoise, EvalCondition::TwoNoise] {
        let res = evaluate_model(&PassThrough, &set, EvalSplit::Valid, cond, &Sequential).map_err(|e| e.to_string())?;
        zero &= res.per_example.iter().all(|&v| v == 0.0);
    }
    Ok((
        worst < SCALE_TOLERANCE_DB && capped && zero,
        format!("scale drift {worst:.1e} dB < {SCALE_TOLERANCE_DB:.0e}, si_sdr(y,y) = cap: {capped}, pass-through exactly 0: {zero}"),
    ))
}

fn consistency() -> Verdict {
    let model = ModelConfig::default();
    let mut sum_err: f64 = 0.0;
    let mut idem_err: f64 = 0.0;
    for i in 0..RANDOM_CASES {
        let mut r = rng(300 + i);
        let params = random_params(&ModelConfig { seed: i, ..model.clone() }, &mut r);
        let len = r.gen_range(64..600);
        let x = noise(&mut r, len, 1.0);
        let out = separate(&params, &x).map_err(|e| e.to_string())?;
        for (a, b) in out.sum().samples().iter().zip(x.samples()) {
            sum_err = sum_err.max((a - b).abs());
        }
        let again = mixture_consistency_project(&out, &x).map_err(|e| e.to_string())?;
        for (s, t) in out.sources().iter().zip(again.sources()) {
            for (a, b) in s.samples().iter().zip(t.samples()) {
                idem_err = idem_err.max((a - b).abs());
            }
        }
    }
    Ok((
        sum_err < CONSISTENCY_TOLERANCE && idem_err < IDEMPOTENCE_TOLERANCE,
        format!("max |Σŝ - x| {sum_err:.1e} < {CONSISTENCY_TOLERANCE:.0e}, re-projection drift {idem_err:.1e} < {IDEMPOTENCE_TOLERANCE:.0e}"),
    ))
}

fn permutation() -> Verdict {
    let mut r = rng(4);
    let mut mismatches = 0;
    for i in 0..RANDOM_CASES {
        let kind = if i % 2 == 0 { LossKind::Supervised } else { LossKind::Unsupervised };
        let len = r.gen_range(16..300);
        let inst = random_instance(&mut r, kind, len);
        let est: Vec<AudioBuffer> = (0..3).map(|_| noise(&mut r, len, 1.0)).collect();
        let a = SourceStack::new(est.clone()).unwrap();
        let b = SourceStack::new(vec![est[0].clone(), est[2].clone(), est[1].clone()]).unwrap();
        if loss(&a, &inst).unwrap().to_bits() != loss(&b, &inst).unwrap().to_bits() {
            mismatches += 1;
        }
    }
    Ok((mismatches == 0, format!("{mismatches} of {RANDOM_CASES} instances change under the slot 2/3 swap")))
}

fn oracle(cfg: &ExperimentConfig) -> Verdict {
    let corpus = fedsep::corpus::Corpus::open(&cfg.resolve(&cfg.corpus_dir), cfg.data_sample_rate).map_err(|e| e.to_string())?;
    let data = corpus.client_datasets(cfg.num_clients, cfg.seed).map_err(|e| e.to_string())?.swap_remove(0).without_references();
    let init = init_params(&cfg.model_config()).unwrap();
    const SHARED_SEED: u64 = 0x5eed;
    let mut clients: Vec<ClientState> = (0..4)
        .map(|id| {
            let mut c = ClientState::new(id, data.clone(), LossKind::Unsupervised, AdamState::new(init.len(), 1e-3), cfg.seed).unwrap();
            c.rng_seed = SHARED_SEED;
            c
        })
        .collect();
    let fed = FederationConfig {
        rounds: ORACLE_ROUNDS,
        batch_size: cfg.batch_size,
        eval_every: ORACLE_ROUNDS,
        selection_window: ORACLE_ROUNDS,
        moments: MomentPolicy::Reset,
        ..FederationConfig::default()
    };
    let zero = RoundMetrics { valid_1n: 0.0, valid_2n: 0.0, test_1n: 0.0, test_2n: 0.0 };
    let mut globals = Vec::new();
    let exec = fedsep::executor::Parallel::new(1);
    run_training(init.clone(), &mut clients, &fed, cfg.seed, &exec, &mut |_, _| Ok(zero), &mut |_, p| {
        globals.push(p.values().to_vec());
        Ok(())
    })
    .map_err(|e| e.to_string())?;

    let mut values = init.values().to_vec();
    let mut worst: f64 = 0.0;
    for round in 1..=ORACLE_ROUNDS {
        let (mut m, mut v) = (vec![0.0; values.len()], vec![0.0; values.len()]);
        for (t, batch) in epoch_plan(SHARED_SEED, round, data.mixtures.len(), data.noises.len(), cfg.batch_size).iter().enumerate() {
            let batch: Vec<LossInstance> = batch
                .iter()
                .map(|&(i, j)| LossInstance::unsupervised(data.mixtures[i].mixture.clone(), data.noises[j].audio.clone()).unwrap())
                .collect();
            let (_, g) = separate_with_grad(&init.with_values(values.clone()).unwrap(), &batch, &Sequential).unwrap();
            let t = t as i32 + 1;
            let (c1, c2) = (1.0 - 0.9f64.powi(t), 1.0 - 0.999f64.powi(t));
            for k in 0..values.len() {
                let gk = g.as_slice()[k];
                m[k] = 0.9 * m[k] + 0.1 * gk;
                v[k] = 0.999 * v[k] + 0.001 * gk * gk;
                values[k] -= 1e-3 * (m[k] / c1) / ((v[k] / c2).sqrt() + 1e-8);
            }
        }
        let dev = globals[round as usize - 1].iter().zip(&values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(dev);
    }
    Ok((
        worst < ORACLE_TOLERANCE,
        format!("max |θ_fed - θ_single| {worst:.1e} < {ORACLE_TOLERANCE:.0e} over {ORACLE_ROUNDS} rounds, 4 clients"),
    ))
}

fn run(cfg: &ExperimentConfig, name: &str, topology: Topology, runs: &mut Vec<(String, RunReport)>) -> Result<RunReport, String> {
    let started = Instant::now();
    let cfg = ExperimentConfig { run_dir: format!("runs/{name}"), ..cfg.clone() };
    let report = experiment::train_with(&cfg, topology).map_err(|e| format!("{name}: {e}"))?;
    eprintln!(
        "  [{name}] best round {} valid_2n {:.3} dB test_2n {:.3} dB ({:.0} s)",
        report.best_round,
        report.best_metrics.valid_2n,
        report.best_metrics.test_2n,
        started.elapsed().as_secs_f64()
    );
    runs.push((name.to_string(), report.clone()));
    Ok(report)
}

fn federation(cfg: &ExperimentConfig, runs: &mut Vec<(String, RunReport)>) -> Verdict {
    let iid_cfg = ExperimentConfig {
        rounds: cfg.rounds / 4,
        selection_window: cfg.selection_window.div_ceil(4),
        eval_every: 1,
        ..cfg.clone()
    };
    let iid = run(&iid_cfg, "iid", Topology::Pooled, runs)?.best_metrics.valid_2n;
    let floor_iid = iid - IID_GAP_DB;
    let fed = run(cfg, "federated", Topology::Federated, runs)?.best_metrics.valid_2n;
    let mut isolated = Vec::new();
    for k in 0..3 {
        isolated.push(run(cfg, &format!("isolated_{k}"), Topology::Isolated(k), runs)?.best_metrics.valid_2n);
    }
    let mean_iso = isolated.iter().sum::<f64>() / 3.0;
    let pass = fed >= mean_iso + FEDERATION_MARGIN_DB && fed >= floor_iid;
    Ok((
        pass,
        format!(
            "federated {fed:.2} dB vs isolated mean {mean_iso:.2} dB ({:.2} / {:.2} / {:.2}): margin {:+.2} ≥ {FEDERATION_MARGIN_DB}; IID {iid:.2} dB: gap {:.2} ≤ {IID_GAP_DB}",
            isolated[0],
            isolated[1],
            isolated[2],
            fed - mean_iso,
            iid - fed
        ),
    ))
}

fn rounds_to_reach(history: &[RoundRecord], target: f64) -> Option<u64> {
    history.iter().find(|r| r.metrics.is_some_and(|m| m.valid_2n >= target)).map(|r| r.round)
}

fn transfer(cfg: &ExperimentConfig, runs: &mut Vec<(String, RunReport)>) -> Verdict {
    experiment::generate(cfg, true).map_err(|e| e.to_string())?;
    let started = Instant::now();
    let (ckpt, pre) = experiment::pretrain(cfg).map_err(|e| e.to_string())?;
    if let Some(pre) = pre {
        eprintln!(
            "  [pretrain] best epoch {} valid_2n {:.3} dB on the pre-training corpus ({:.0} s)",
            pre.best_round,
            pre.best_metrics.valid_2n,
            started.elapsed().as_secs_f64()
        );
        runs.push(("pretrain".into(), pre));
    }
    let scratch = &runs.iter().find(|(n, _)| n == "federated").ok_or("federated run missing")?.1;
    let scratch_history = scratch.history.clone();
    let tuned_cfg = ExperimentConfig {
        regime: fedsep::config::RegimeKey::FineTune,
        init_checkpoint: ckpt.to_string_lossy().into_owned(),
        ..cfg.clone()
    };
    let tuned = run(&tuned_cfg, "fine_tune", Topology::Federated, runs)?;
    let final_scratch = scratch_history.last().and_then(|r| r.metrics).ok_or("last round not evaluated")?.valid_2n;
    let target = TRANSFER_FRACTION * final_scratch;
    let a = rounds_to_reach(&tuned.history, target);
    let b = rounds_to_reach(&scratch_history, target);
    let head_start = tuned.history[0].metrics.unwrap().valid_2n - scratch_history[0].metrics.unwrap().valid_2n;
    let show = |r: Option<u64>| r.map_or("never".to_string(), |r| r.to_string());
    let pass = final_scratch > 0.0 && matches!((a, b), (Some(a), Some(b)) if a < b);
    Ok((
        pass,
        format!(
            "target {target:.2} dB (80% of {final_scratch:.2}): pre-trained init reaches it at round {}, from scratch at round {}; round-1 head start {head_start:+.2} dB",
            show(a),
            show(b)
        ),
    ))
}

fn sweep(cfg: &ExperimentConfig, runs: &mut Vec<(String, RunReport)>) -> Verdict {
    let p0 = runs.iter().find(|(n, _)| n == "federated").ok_or("federated run missing")?.1.best_metrics;
    let mut scores = vec![p0];
    for (name, p) in [("ps_0.50", 0.5), ("ps_1.00", 1.0)] {
        let c = ExperimentConfig { supervised_fraction: p, ..cfg.clone() };
        scores.push(run(&c, name, Topology::Federated, runs)?.best_metrics);
    }
    let t: Vec<f64> = scores.iter().map(|m| m.test_2n).collect();
    let pass = t[1] >= t[0] && t[2] >= t[1] && t[2] - t[0] >= SWEEP_TOTAL_DB;
    Ok((
        pass,
        format!(
            "test_2n at p_s 0 / 0.5 / 1: {:.2} / {:.2} / {:.2} dB, total {:+.2} ≥ {SWEEP_TOTAL_DB} (test_1n {:.2} / {:.2} / {:.2})",
            t[0],
            t[1],
            t[2],
            t[2] - t[0],
            scores[0].test_1n,
            scores[1].test_1n,
            scores[2].test_1n
        ),
    ))
}

fn scheduling(cfg: &ExperimentConfig, runs: &[(String, RunReport)]) -> Verdict {
    let mut rounds = 0;
    let mut violations = Vec::new();
    for (name, r) in runs {
        let c = r.client_mixtures.len();
        let batch = cfg.batch_size;
        for rec in &r.history {
            rounds += 1;
            if rec.participants.len() != (c / 4).max(1) {
                violations.push(format!("{name} round {}: |A| = {}", rec.round, rec.participants.len()));
            }
            for (p, k) in rec.participants.iter().zip(&rec.local_steps) {
                if *k != r.client_mixtures[*p] / batch {
                    violations.push(format!("{name} round {} client {p}: K = {k}", rec.round));
                }
            }
        }
    }
    Ok((
        violations.is_empty() && rounds > 0,
        if violations.is_empty() {
            format!("K and |A| exact in all {rounds} rounds of {} runs", runs.len())
        } else {
            format!("{} violations, first: {}", violations.len(), violations[0])
        },
    ))
}

fn bytes(p: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn determinism(cfg: &ExperimentConfig) -> Verdict {
    let mut outputs = Vec::new();
    for (name, workers) in [("det_w1_a", 1), ("det_w1_b", 1), ("det_w4", 4)] {
        let c = ExperimentConfig {
            rounds: DETERMINISM_ROUNDS,
            selection_window: DETERMINISM_ROUNDS,
            workers,
            checkpoint_every: 10,
            run_dir: format!("runs/{name}"),
            ..cfg.clone()
        };
        let r = experiment::train(&c).map_err(|e| e.to_string())?;
        let mut files = Vec::new();
        for f in ["metrics.csv", "best.ckpt", "final.ckpt", "checkpoints/round_00010.ckpt", "checkpoints/round_00020.ckpt"] {
            files.push((f, bytes(&r.run_dir.join(f))?));
        }
        outputs.push(files);
    }
    let differing: Vec<&str> = outputs[0]
        .iter()
        .enumerate()
        .filter(|(i, (_, b))| outputs[1][*i].1 != *b || outputs[2][*i].1 != *b)
        .map(|(_, (f, _))| *f)
        .collect();
    Ok((
        differing.is_empty(),
        if differing.is_empty() {
            format!("{DETERMINISM_ROUNDS}-round runs byte-identical across repeats and workers 1/4 (csv + 4 checkpoints)")
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    ))
}

fn main() {
    let started = Instant::now();
    std::env::remove_var(fedsep::config::OUTPUT_ROOT_ENV);
    let root = tempfile::tempdir().expect("temp dir");
    let cfg = ExperimentConfig {
        output_root: root.path().to_string_lossy().into_owned(),
        eval_every: ACCEPTANCE_EVAL_EVERY,
        record_wall_seconds: false,
        ..ExperimentConfig::default()
    };
    cfg.validate().expect("default config is valid");

    let mut results: Vec<bool> = Vec::new();
    let mut report = |id: u32, name: &str, verdict: Verdict, t: Instant| {
        let (pass, detail) = verdict.unwrap_or_else(|e| (false, format!("error: {e}")));
        let secs = t.elapsed().as_secs_f64();
        let budget = match id {
            1 => GRADIENT_BUDGET_S,
            5 => ORACLE_BUDGET_S,
            6 => FEDERATION_BUDGET_S,
            _ => f64::INFINITY,
        };
        let pass = pass && secs <= budget;
        println!("criterion {id:>2} {name:<24} {}  {detail} [{secs:.0} s]", if pass { "PASS" } else { "FAIL" });
        results.push(pass);
    };

    let t = Instant::now();
    report(1, "gradient correctness", gradients(), t);
    let t = Instant::now();
    report(2, "si-sdr properties", si_sdr_properties(), t);
    let t = Instant::now();
    report(3, "mixture consistency", consistency(), t);
    let t = Instant::now();
    report(4, "permutation invariance", permutation(), t);

    let corpus = experiment::generate(&cfg, false);
    if let Err(e) = corpus {
        println!("corpus generation failed: {e}");
        std::process::exit(1);
    }
    let t = Instant::now();
    report(5, "fedavg oracle", oracle(&cfg), t);

    let mut runs = Vec::new();
    let t = Instant::now();
    report(6, "federation sanity", federation(&cfg, &mut runs), t);
    let t = Instant::now();
    report(7, "transfer learning", transfer(&cfg, &mut runs), t);
    let t = Instant::now();
    report(8, "supervision sweep", sweep(&cfg, &mut runs), t);
    let t = Instant::now();
    report(9, "scheduling arithmetic", scheduling(&cfg, &runs), t);
    let t = Instant::now();
    report(10, "determinism", determinism(&cfg), t);

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed in {:.0} s", results.len(), started.elapsed().as_secs_f64());
    if passed != results.len() {
        std::process::exit(1);
    }
}
