//! Experiment commands shared by the CLI and the acceptance suite.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fedsep_core::data::{ClientDataset, Split};
use fedsep_core::eval::{evaluate_model, EvalCondition, EvalSet, EvalSplit};
use fedsep_core::federation::{run_training, ClientState, RoundMetrics, RoundRecord};
use fedsep_core::losses::LossKind;
use fedsep_core::model::{init_params, ModelConfig, ParamVector};
use fedsep_core::optim::{make_optimizer, Regime};
use fedsep_core::Executor;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::corpus::{generate_corpus, shared_speakers, Corpus};
use crate::error::{Error, Result};
use crate::executor::Parallel;

pub const METRICS_HEADER: [&str; 8] = [
    "round",
    "participants",
    "audio_hours",
    "valid_sisdri_1n",
    "valid_sisdri_2n",
    "test_sisdri_1n",
    "test_sisdri_2n",
    "wall_seconds",
];

pub const SUMMARY_HEADER: [&str; 7] = [
    "supervised_fraction",
    "supervised_clients",
    "best_round",
    "valid_sisdri_1n",
    "valid_sisdri_2n",
    "test_sisdri_1n",
    "test_sisdri_2n",
];

/// Which clients take part in a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// `num_clients` non-IID clients with federated averaging.
    Federated,
    /// Only client `k` of the federated partition, trained alone.
    Isolated(usize),
    /// All training data on a single node.
    Pooled,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub run_dir: PathBuf,
    pub metrics_csv: PathBuf,
    pub best_checkpoint: PathBuf,
    pub history: Vec<RoundRecord>,
    pub best_round: u64,
    pub best_metrics: RoundMetrics,
    pub best_params: ParamVector,
    pub final_params: ParamVector,
    /// `|D^m|` of every client, by id.
    pub client_mixtures: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub supervised_fraction: f64,
    pub supervised_clients: usize,
    pub best_round: u64,
    pub metrics: RoundMetrics,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))
}

/// Writes the FL corpus, or the pre-training corpus with `pretrain`.
pub fn generate(cfg: &ExperimentConfig, pretrain: bool) -> Result<PathBuf> {
    let (spec, dir) = if pretrain {
        (cfg.pretrain_spec(), cfg.resolve(&cfg.pretrain_corpus_dir))
    } else {
        (cfg.data_spec(), cfg.resolve(&cfg.corpus_dir))
    };
    create_dir(&dir)?;
    generate_corpus(&spec, &dir)
}

fn open_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    Corpus::open(&cfg.resolve(&cfg.corpus_dir), cfg.data_sample_rate)
}

fn initial_params(cfg: &ExperimentConfig, model: &ModelConfig) -> Result<ParamVector> {
    if cfg.init_checkpoint.is_empty() {
        Ok(init_params(model)?)
    } else {
        Ok(checkpoint::load(&cfg.resolve(&cfg.init_checkpoint), model)?.params)
    }
}

struct EvalSets {
    valid: EvalSet,
    test: EvalSet,
}

impl EvalSets {
    fn load(corpus: &Corpus, seed: u64) -> Result<Self> {
        Ok(Self { valid: corpus.eval_set(Split::Valid, seed)?, test: corpus.eval_set(Split::Test, seed)? })
    }

    fn score<E: Executor>(&self, params: &ParamVector, exec: &E) -> fedsep_core::Result<RoundMetrics> {
        let run = |set: &EvalSet, split, cond| evaluate_model(params, set, split, cond, exec).map(|r| r.mean_si_sdri);
        Ok(RoundMetrics {
            valid_1n: run(&self.valid, EvalSplit::Valid, EvalCondition::OneNoise)?,
            valid_2n: run(&self.valid, EvalSplit::Valid, EvalCondition::TwoNoise)?,
            test_1n: run(&self.test, EvalSplit::Test, EvalCondition::OneNoise)?,
            test_2n: run(&self.test, EvalSplit::Test, EvalCondition::TwoNoise)?,
        })
    }
}

fn fmt_metric(v: f64) -> String {
    format!("{v:.6}")
}

struct MetricsWriter {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl MetricsWriter {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(Error::io(&path))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(METRICS_HEADER).map_err(|e| Error::format(&path, e.to_string()))?;
        writer.flush().map_err(Error::io(&path))?;
        Ok(Self { path, writer })
    }

    fn row(&mut self, rec: &RoundRecord, m: &RoundMetrics, wall_seconds: f64) -> Result<()> {
        let participants: Vec<String> = rec.participants.iter().map(|p| p.to_string()).collect();
        self.writer
            .write_record([
                rec.round.to_string(),
                participants.join(" "),
                fmt_metric(rec.audio_hours),
                fmt_metric(m.valid_1n),
                fmt_metric(m.valid_2n),
                fmt_metric(m.test_1n),
                fmt_metric(m.test_2n),
                format!("{wall_seconds:.3}"),
            ])
            .map_err(|e| Error::format(&self.path, e.to_string()))?;
        self.writer.flush().map_err(Error::io(&self.path))
    }
}

struct Job<'a> {
    cfg: &'a ExperimentConfig,
    model: ModelConfig,
    datasets: Vec<(ClientDataset, LossKind)>,
    evals: &'a EvalSets,
    init: ParamVector,
    regime: Regime,
    run_dir: PathBuf,
    rounds: u64,
}

fn execute(job: Job<'_>) -> Result<RunReport> {
    let Job { cfg, model, datasets, evals, init, regime, run_dir, rounds } = job;
    create_dir(&run_dir)?;
    let config_echo = run_dir.join("config.toml");
    std::fs::write(&config_echo, cfg.to_toml()).map_err(Error::io(&config_echo))?;
    let exec = Parallel::new(cfg.workers);
    let client_mixtures = datasets.iter().map(|(d, _)| d.mixtures.len()).collect();
    let mut clients = datasets
        .into_iter()
        .enumerate()
        .map(|(id, (d, kind))| ClientState::new(id, d, kind, make_optimizer(regime, init.len())?, cfg.seed))
        .collect::<fedsep_core::Result<Vec<_>>>()?;
    let fed = fedsep_core::federation::FederationConfig { rounds, ..cfg.federation() };
    let metrics_csv = run_dir.join("metrics.csv");
    let mut writer = MetricsWriter::create(metrics_csv.clone())?;
    let started = Instant::now();
    let mut io_error: Option<Error> = None;
    let mut evaluate = |_round: u64, p: &ParamVector| evals.score(p, &exec);
    let mut on_round = |rec: &RoundRecord, params: &ParamVector| -> fedsep_core::Result<()> {
        let wall = if cfg.record_wall_seconds { started.elapsed().as_secs_f64() } else { 0.0 };
        let mut step = || -> Result<()> {
            if let Some(m) = &rec.metrics {
                writer.row(rec, m, wall)?;
            }
            if cfg.checkpoint_every > 0 && rec.round % cfg.checkpoint_every == 0 {
                let path = run_dir.join("checkpoints").join(format!("round_{:05}.ckpt", rec.round));
                checkpoint::save(&path, &model, params, rec.round, cfg.seed)?;
            }
            Ok(())
        };
        step().map_err(|e| {
            let msg = e.to_string();
            io_error = Some(e);
            fedsep_core::Error::Contract(msg)
        })
    };
    let outcome = match run_training(init, &mut clients, &fed, cfg.seed, &exec, &mut evaluate, &mut on_round) {
        Ok(o) => o,
        Err(e) => return Err(io_error.take().unwrap_or(Error::Core(e))),
    };
    let best_metrics = outcome
        .server
        .history
        .iter()
        .find(|r| r.round == outcome.best_round)
        .and_then(|r| r.metrics)
        .expect("best round was evaluated");
    let best_checkpoint = run_dir.join("best.ckpt");
    checkpoint::save(&best_checkpoint, &model, &outcome.best_params, outcome.best_round, cfg.seed)?;
    checkpoint::save(&run_dir.join("final.ckpt"), &model, &outcome.server.global_params, rounds, cfg.seed)?;
    Ok(RunReport {
        run_dir,
        metrics_csv,
        best_checkpoint,
        history: outcome.server.history,
        best_round: outcome.best_round,
        best_metrics,
        best_params: outcome.best_params,
        final_params: outcome.server.global_params,
        client_mixtures,
    })
}

fn client_kind(supervised: bool) -> LossKind {
    if supervised {
        LossKind::Supervised
    } else {
        LossKind::Unsupervised
    }
}

/// Unsupervised clients never see reference stems.
fn as_client(d: ClientDataset, kind: LossKind) -> (ClientDataset, LossKind) {
    match kind {
        LossKind::Supervised => (d, kind),
        LossKind::Unsupervised => (d.without_references(), kind),
    }
}

/// Runs training with the given topology and writes metrics and checkpoints to `run_dir`.
pub fn train_with(cfg: &ExperimentConfig, topology: Topology) -> Result<RunReport> {
    cfg.validate()?;
    let model = cfg.model_config();
    let corpus = open_corpus(cfg)?;
    let evals = EvalSets::load(&corpus, cfg.seed)?;
    let n_sup = cfg.supervised_clients();
    let datasets = match topology {
        Topology::Federated => corpus
            .client_datasets(cfg.num_clients, cfg.seed)?
            .into_iter()
            .enumerate()
            .map(|(i, d)| as_client(d, client_kind(i < n_sup)))
            .collect(),
        Topology::Isolated(k) => {
            let mut all = corpus.client_datasets(cfg.num_clients, cfg.seed)?;
            if k >= all.len() {
                return Err(Error::Config(format!("isolated client {k} does not exist (num_clients = {})", all.len())));
            }
            vec![as_client(all.swap_remove(k), client_kind(k < n_sup))]
        }
        Topology::Pooled => vec![as_client(corpus.pooled_train(cfg.seed)?, client_kind(n_sup == cfg.num_clients))],
    };
    let init = initial_params(cfg, &model)?;
    execute(Job {
        cfg,
        model,
        datasets,
        evals: &evals,
        init,
        regime: cfg.regime(),
        run_dir: cfg.resolve(&cfg.run_dir),
        rounds: cfg.rounds,
    })
}

pub fn train(cfg: &ExperimentConfig) -> Result<RunReport> {
    train_with(cfg, Topology::Federated)
}

/// Supervised single-node training on the pre-training corpus.
///
/// Returns the path of `pretrained.ckpt` and, for a positive epoch count,
/// the run report.
pub fn pretrain(cfg: &ExperimentConfig) -> Result<(PathBuf, Option<RunReport>)> {
    cfg.validate()?;
    let model = cfg.model_config();
    let fl = open_corpus(cfg)?;
    let pre = Corpus::open(&cfg.resolve(&cfg.pretrain_corpus_dir), cfg.data_sample_rate)?;
    let shared = shared_speakers(&fl, &pre);
    if !shared.is_empty() {
        return Err(Error::Config(format!(
            "pre-training corpus shares {} speaker ids with the federated corpus (first: {})",
            shared.len(),
            shared[0]
        )));
    }
    let run_dir = cfg.resolve(&cfg.pretrain_run_dir);
    create_dir(&run_dir)?;
    let out = run_dir.join("pretrained.ckpt");
    let init = init_params(&model)?;
    if cfg.pretrain_epochs == 0 {
        checkpoint::save(&out, &model, &init, 0, cfg.seed)?;
        return Ok((out, None));
    }
    let evals = EvalSets::load(&pre, cfg.seed)?;
    let pooled = pre.pooled_train(cfg.seed)?;
    let report = execute(Job {
        cfg,
        model: model.clone(),
        datasets: vec![(pooled, LossKind::Supervised)],
        evals: &evals,
        init,
        regime: Regime::FromScratch,
        run_dir,
        rounds: cfg.pretrain_epochs,
    })?;
    checkpoint::save(&out, &model, &report.best_params, report.best_round, cfg.seed)?;
    Ok((out, Some(report)))
}

fn fraction_label(p: f64) -> String {
    format!("ps_{p:.2}")
}

/// One training run per supervised fraction, sharing corpus and seeds.
pub fn sweep(cfg: &ExperimentConfig) -> Result<(PathBuf, Vec<SweepRow>)> {
    cfg.validate()?;
    let dir = cfg.resolve(&cfg.sweep_dir);
    create_dir(&dir)?;
    let mut rows = Vec::with_capacity(cfg.sweep_fractions.len());
    for &p in &cfg.sweep_fractions {
        let run = ExperimentConfig {
            supervised_fraction: p,
            run_dir: dir.join(fraction_label(p)).to_string_lossy().into_owned(),
            ..cfg.clone()
        };
        let report = train(&run)?;
        rows.push(SweepRow {
            supervised_fraction: p,
            supervised_clients: run.supervised_clients(),
            best_round: report.best_round,
            metrics: report.best_metrics,
        });
    }
    let path = dir.join("summary.csv");
    let file = File::create(&path).map_err(Error::io(&path))?;
    let mut w = csv::Writer::from_writer(file);
    let fmt_err = |e: csv::Error| Error::format(&path, e.to_string());
    w.write_record(SUMMARY_HEADER).map_err(fmt_err)?;
    for r in &rows {
        w.write_record([
            format!("{:.2}", r.supervised_fraction),
            r.supervised_clients.to_string(),
            r.best_round.to_string(),
            fmt_metric(r.metrics.valid_1n),
            fmt_metric(r.metrics.valid_2n),
            fmt_metric(r.metrics.test_1n),
            fmt_metric(r.metrics.test_2n),
        ])
        .map_err(fmt_err)?;
    }
    w.flush().map_err(Error::io(&path))?;
    Ok((path, rows))
}

/// Re-scores a checkpoint on the validation and test splits.
pub fn evaluate(cfg: &ExperimentConfig, checkpoint_path: &Path) -> Result<RoundMetrics> {
    cfg.validate()?;
    let model = cfg.model_config();
    let params = checkpoint::load(checkpoint_path, &model)?.params;
    let corpus = open_corpus(cfg)?;
    let evals = EvalSets::load(&corpus, cfg.seed)?;
    Ok(evals.score(&params, &Parallel::new(cfg.workers))?)
}
