//! Server side of the federation: participant sampling, weight averaging and
//! round bookkeeping. It handles parameter vectors and scalar metrics only.

use alloc::vec::Vec;

use rand::seq::index;

use crate::error::{contract, Result};
use crate::model::ParamVector;
use crate::rng;

/// Mean SI-SDRi of one evaluation round, in dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMetrics {
    pub valid_1n: f64,
    pub valid_2n: f64,
    pub test_1n: f64,
    pub test_2n: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    /// Participating client ids, ascending.
    pub participants: Vec<usize>,
    /// Local optimisation steps of each participant, aligned with `participants`.
    pub local_steps: Vec<usize>,
    pub metrics: Option<RoundMetrics>,
    /// Audio processed by clients so far, in hours.
    pub audio_hours: f64,
}

/// A participant's result as the server sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightUpdate {
    pub client_id: usize,
    pub params: ParamVector,
    /// Examples consumed in the round; used only by weighted averaging.
    pub num_examples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Aggregation {
    #[default]
    Uniform,
    DataSize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub global_params: ParamVector,
    /// Completed rounds.
    pub round: u64,
    pub rng_seed: u64,
    pub history: Vec<RoundRecord>,
}

impl ServerState {
    pub fn new(global_params: ParamVector, rng_seed: u64) -> Self {
        Self { global_params, round: 0, rng_seed, history: Vec::new() }
    }

    pub fn audio_hours(&self) -> f64 {
        self.history.last().map_or(0.0, |r| r.audio_hours)
    }

    /// Installs the aggregate of a finished round and appends its record.
    pub fn complete_round(
        &mut self,
        global_params: ParamVector,
        participants: Vec<usize>,
        local_steps: Vec<usize>,
        audio_hours_delta: f64,
        metrics: Option<RoundMetrics>,
    ) -> Result<&RoundRecord> {
        if !global_params.is_aggregable_with(&self.global_params) {
            return Err(contract!("aggregated parameters changed layout"));
        }
        let audio_hours = self.audio_hours() + audio_hours_delta;
        self.round += 1;
        self.global_params = global_params;
        self.history.push(RoundRecord { round: self.round, participants, local_steps, metrics, audio_hours });
        Ok(self.history.last().expect("just pushed"))
    }
}

/// Number of participants per round.
pub fn participants_per_round(num_clients: usize) -> usize {
    (num_clients / 4).max(1)
}

/// Bytes moved through the server in one round: every participant downloads
/// and uploads the full parameter vector as f64.
pub fn round_traffic_bytes(participants: usize, param_len: usize) -> u64 {
    2 * participants as u64 * param_len as u64 * 8
}

/// Uniform sample without replacement of `max(1, ⌊C/4⌋)` client ids,
/// returned ascending.
pub fn sample_available_clients(num_clients: usize, seed: u64, round: u64) -> Vec<usize> {
    if num_clients == 0 {
        return Vec::new();
    }
    let mut r = rng::stream(seed, &[rng::tag::SAMPLE_CLIENTS, round]);
    let mut ids = index::sample(&mut r, num_clients, participants_per_round(num_clients)).into_vec();
    ids.sort_unstable();
    ids
}

/// Elementwise mean of the updates, summed in ascending client-id order.
pub fn fedavg_aggregate(updates: &[WeightUpdate], aggregation: Aggregation) -> Result<ParamVector> {
    let first = updates.first().ok_or_else(|| contract!("no updates to aggregate"))?;
    if let Some(bad) = updates.iter().find(|u| !u.params.is_aggregable_with(&first.params)) {
        return Err(contract!("update from client {} has a different layout", bad.client_id));
    }
    let mut order: Vec<&WeightUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.client_id);
    if order.windows(2).any(|w| w[0].client_id == w[1].client_id) {
        return Err(contract!("duplicate client id among updates"));
    }
    if order.len() == 1 {
        return Ok(order[0].params.clone());
    }
    let weights: Vec<f64> = match aggregation {
        Aggregation::Uniform => alloc::vec![1.0; order.len()],
        Aggregation::DataSize => order.iter().map(|u| u.num_examples as f64).collect(),
    };
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(contract!("aggregation weights sum to zero"));
    }
    let mut acc = alloc::vec![0.0; first.params.len()];
    for (u, &w) in order.iter().zip(&weights) {
        if aggregation == Aggregation::Uniform {
            acc.iter_mut().zip(u.params.values()).for_each(|(a, v)| *a += v);
        } else {
            acc.iter_mut().zip(u.params.values()).for_each(|(a, v)| *a += w * v);
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    first.params.with_values(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Layout, ModelConfig};
    use alloc::vec;

    fn layout() -> Layout {
        Layout::new(&ModelConfig { frame_len: 2, hop: 1, basis: 3, hidden: 1, num_sources: 3, seed: 0 }).unwrap()
    }

    fn update(id: usize, fill: &[f64]) -> WeightUpdate {
        let l = layout();
        let values: Vec<f64> = (0..l.total_len()).map(|i| fill[i % fill.len()]).collect();
        WeightUpdate { client_id: id, params: ParamVector::new(values, l).unwrap(), num_examples: 1 }
    }

    #[test]
    fn sample_sizes() {
        assert_eq!(sample_available_clients(16, 1, 1).len(), 4);
        assert_eq!(sample_available_clients(4, 1, 1).len(), 1);
        assert_eq!(sample_available_clients(3, 1, 1).len(), 1);
        let s = sample_available_clients(256, 1, 7);
        assert_eq!(s.len(), 64);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s, sample_available_clients(256, 1, 7));
        assert_ne!(s, sample_available_clients(256, 1, 8));
    }

    #[test]
    fn traffic() {
        assert_eq!(round_traffic_bytes(2, 37184), 1_189_888);
        assert_eq!(round_traffic_bytes(0, 10), 0);
    }

    #[test]
    fn mean_of_one_is_verbatim() {
        let u = update(3, &[0.1, 0.7, -0.3]);
        assert_eq!(fedavg_aggregate(&[u.clone()], Aggregation::Uniform).unwrap(), u.params);
        assert_eq!(fedavg_aggregate(&[u.clone()], Aggregation::DataSize).unwrap(), u.params);
    }

    #[test]
    fn midpoint_and_order_independence() {
        let a = update(0, &[0.0, 2.0]);
        let b = update(1, &[2.0, 0.0]);
        let m = fedavg_aggregate(&[a.clone(), b.clone()], Aggregation::Uniform).unwrap();
        assert!(m.values().iter().all(|&v| v == 1.0));
        let c = update(2, &[0.3, 0.1, 0.7]);
        let x = fedavg_aggregate(&[a.clone(), b.clone(), c.clone()], Aggregation::Uniform).unwrap();
        let y = fedavg_aggregate(&[c, a, b], Aggregation::Uniform).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn data_size_weighting() {
        let mut a = update(0, &[0.0]);
        let mut b = update(1, &[4.0]);
        a.num_examples = 3;
        b.num_examples = 1;
        let m = fedavg_aggregate(&[a, b], Aggregation::DataSize).unwrap();
        assert!(m.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rejects_layout_mismatch_and_empty() {
        let a = update(0, &[0.0]);
        let other = Layout::new(&ModelConfig { frame_len: 2, hop: 1, basis: 4, hidden: 1, num_sources: 3, seed: 0 }).unwrap();
        let b = WeightUpdate {
            client_id: 1,
            params: ParamVector::new(vec![0.0; other.total_len()], other).unwrap(),
            num_examples: 1,
        };
        assert!(fedavg_aggregate(&[a, b], Aggregation::Uniform).is_err());
        assert!(fedavg_aggregate(&[], Aggregation::Uniform).is_err());
    }
}
