//! Federated averaging: sample clients, train locally, average, evaluate.

mod client;
mod server;

use alloc::vec::Vec;

use crate::error::{config_err, contract, Result};
use crate::eval::{in_window, Selection, SELECTION_WINDOW};
use crate::exec::{Executor, Sequential};
use crate::model::ParamVector;

pub use client::{client_update, epoch_plan, steps_per_epoch, ClientState, LocalResult, MomentPolicy};
pub use server::{
    fedavg_aggregate, participants_per_round, round_traffic_bytes, sample_available_clients, Aggregation, RoundMetrics,
    RoundRecord, ServerState, WeightUpdate,
};

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub rounds: u64,
    pub batch_size: usize,
    /// Evaluate every `eval_every` rounds; the first and last rounds always are.
    pub eval_every: u64,
    pub selection_window: u64,
    pub selection: Selection,
    pub aggregation: Aggregation,
    pub moments: MomentPolicy,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 200,
            batch_size: 6,
            eval_every: 1,
            selection_window: SELECTION_WINDOW,
            selection: Selection::default(),
            aggregation: Aggregation::default(),
            moments: MomentPolicy::default(),
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(config_err!("rounds must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(config_err!("eval_every must be at least 1"));
        }
        if self.selection_window == 0 {
            return Err(config_err!("selection_window must be at least 1"));
        }
        Ok(())
    }

    pub fn is_eval_round(&self, round: u64) -> bool {
        round == 1 || round == self.rounds || round % self.eval_every == 0
    }
}

/// Evaluation hook: receives the round number and the new global parameters.
pub type Evaluator<'a> = dyn FnMut(u64, &ParamVector) -> Result<RoundMetrics> + 'a;

fn check_clients(clients: &[ClientState], batch_size: usize) -> Result<()> {
    if clients.is_empty() {
        return Err(config_err!("at least one client is required"));
    }
    for (i, c) in clients.iter().enumerate() {
        if c.id != i {
            return Err(contract!("client at position {i} has id {}", c.id));
        }
        steps_per_epoch(c.dataset.mixtures.len(), batch_size, c.id)?;
    }
    Ok(())
}

/// Runs one communication round and appends its record to `server.history`.
pub fn run_round<E: Executor>(
    server: &mut ServerState,
    clients: &mut [ClientState],
    config: &FederationConfig,
    exec: &E,
    evaluate: &mut Evaluator<'_>,
) -> Result<()> {
    check_clients(clients, config.batch_size)?;
    let round = server.round + 1;
    let participants = sample_available_clients(clients.len(), server.rng_seed, round);
    let global = &server.global_params;
    let results = exec.map_mut(clients, |c| {
        if participants.binary_search(&c.id).is_ok() {
            Some(client_update(c, global, round, config.batch_size, config.moments, &Sequential))
        } else {
            None
        }
    });
    let mut updates = Vec::with_capacity(participants.len());
    let mut local_steps = Vec::with_capacity(participants.len());
    let mut audio_seconds = 0.0;
    for (id, r) in results.into_iter().enumerate() {
        if let Some(r) = r {
            let r = r?;
            audio_seconds += r.examples as f64 * clients[id].dataset.clip_seconds();
            local_steps.push(r.steps);
            updates.push(WeightUpdate { client_id: id, params: r.params, num_examples: r.examples });
        }
    }
    let aggregated = fedavg_aggregate(&updates, config.aggregation)?;
    let metrics = if config.is_eval_round(round) { Some(evaluate(round, &aggregated)?) } else { None };
    server.complete_round(aggregated, participants, local_steps, audio_seconds / 3600.0, metrics)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub server: ServerState,
    pub best_round: u64,
    pub best_params: ParamVector,
}

/// Runs `config.rounds` rounds from `initial` and keeps the best model of
/// the selection window. `on_round` sees every record as it is appended.
pub fn run_training<E: Executor>(
    initial: ParamVector,
    clients: &mut [ClientState],
    config: &FederationConfig,
    seed: u64,
    exec: &E,
    evaluate: &mut Evaluator<'_>,
    on_round: &mut dyn FnMut(&RoundRecord, &ParamVector) -> Result<()>,
) -> Result<TrainingOutcome> {
    config.validate()?;
    check_clients(clients, config.batch_size)?;
    let mut server = ServerState::new(initial, seed);
    let mut best: Option<(u64, f64, ParamVector)> = None;
    for _ in 0..config.rounds {
        run_round(&mut server, clients, config, exec, evaluate)?;
        let rec = server.history.last().expect("round recorded");
        on_round(rec, &server.global_params)?;
        if let Some(m) = &rec.metrics {
            let score = config.selection.score(m);
            let eligible = in_window(rec.round, config.rounds, config.selection_window);
            if eligible && best.as_ref().map_or(true, |(_, b, _)| score >= *b) {
                best = Some((rec.round, score, server.global_params.clone()));
            }
        }
    }
    let (best_round, _, best_params) = best.expect("the last round is always evaluated");
    Ok(TrainingOutcome { server, best_round, best_params })
}
