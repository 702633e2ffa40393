//! Local training on a client's private data.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::ClientDataset;
use crate::error::{config_err, contract, Result};
use crate::exec::Executor;
use crate::losses::{LossInstance, LossKind};
use crate::model::{separate_with_grad, ParamVector};
use crate::optim::AdamState;
use crate::rng;

/// What happens to Adam moments between rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MomentPolicy {
    /// Moments carry over to the client's next round.
    #[default]
    Persist,
    /// Every round starts from zeroed moments.
    Reset,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub dataset: ClientDataset,
    pub kind: LossKind,
    pub optimizer: AdamState,
    /// Key of this client's shuffling and noise-pairing stream.
    pub rng_seed: u64,
    /// Parameters after the client's latest update.
    pub local_params: Option<ParamVector>,
}

impl ClientState {
    /// `seed` is the experiment seed; the client stream is derived from it and `id`.
    pub fn new(id: usize, dataset: ClientDataset, kind: LossKind, optimizer: AdamState, seed: u64) -> Result<Self> {
        if kind == LossKind::Supervised && !dataset.has_references() {
            return Err(config_err!("client {id} is supervised but lacks reference stems"));
        }
        let rng_seed = rng::derive(seed, &[rng::tag::CLIENT_SEED, id as u64]);
        Ok(Self { id, dataset, kind, optimizer, rng_seed, local_params: None })
    }

    /// Optimisation steps in one local epoch, `⌊|D^m| / B⌋`.
    pub fn local_steps(&self, batch_size: usize) -> usize {
        self.dataset.mixtures.len() / batch_size.max(1)
    }
}

/// `⌊num_mixtures / B⌋`, rejecting clients too small for one batch.
pub fn steps_per_epoch(num_mixtures: usize, batch_size: usize, client: usize) -> Result<usize> {
    if batch_size == 0 {
        return Err(config_err!("batch_size must be at least 1"));
    }
    let k = num_mixtures / batch_size;
    if k == 0 {
        return Err(config_err!(
            "client {client} holds {num_mixtures} mixtures, fewer than batch_size {batch_size}"
        ));
    }
    Ok(k)
}

/// Mini-batches of one local epoch: a shuffle of mixture indices cut into
/// `K` batches, each mixture paired with a noise index drawn with replacement.
pub fn epoch_plan(
    rng_seed: u64,
    round: u64,
    num_mixtures: usize,
    num_noises: usize,
    batch_size: usize,
) -> Vec<Vec<(usize, usize)>> {
    let mut r = rng::stream(rng_seed, &[rng::tag::CLIENT_EPOCH, round]);
    let mut order: Vec<usize> = (0..num_mixtures).collect();
    order.shuffle(&mut r);
    let k = num_mixtures / batch_size;
    order[..k * batch_size]
        .chunks(batch_size)
        .map(|chunk| chunk.iter().map(|&m| (m, r.gen_range(0..num_noises))).collect())
        .collect()
}

/// Result of one local epoch.
#[derive(Debug, Clone)]
pub struct LocalResult {
    pub params: ParamVector,
    pub steps: usize,
    pub examples: usize,
    pub mean_loss: f64,
}

fn instances(dataset: &ClientDataset, kind: LossKind, batch: &[(usize, usize)]) -> Result<Vec<LossInstance>> {
    batch
        .iter()
        .map(|&(m, n)| {
            let mix = &dataset.mixtures[m];
            LossInstance::build(kind, mix.mixture.clone(), mix.references.clone(), dataset.noises[n].audio.clone())
        })
        .collect()
}

/// Copies `global`, runs one local epoch of Adam steps and returns the
/// client's new parameters.
pub fn client_update<E: Executor>(
    client: &mut ClientState,
    global: &ParamVector,
    round: u64,
    batch_size: usize,
    moments: MomentPolicy,
    exec: &E,
) -> Result<LocalResult> {
    let k = steps_per_epoch(client.dataset.mixtures.len(), batch_size, client.id)?;
    if client.optimizer.first_moment.len() != global.len() {
        return Err(contract!("client {} optimiser does not match the model", client.id));
    }
    if moments == MomentPolicy::Reset {
        client.optimizer.reset();
    }
    let plan = epoch_plan(client.rng_seed, round, client.dataset.mixtures.len(), client.dataset.noises.len(), batch_size);
    debug_assert_eq!(plan.len(), k);
    let mut params = global.clone();
    let mut values = params.values().to_vec();
    let mut loss_sum = 0.0;
    for batch in &plan {
        let batch = instances(&client.dataset, client.kind, batch)?;
        let current = params.with_values(values)?;
        let (loss, grad) = separate_with_grad(&current, &batch, exec)?;
        loss_sum += loss;
        values = current.into_values();
        client.optimizer.step(&mut values, grad.as_slice())?;
    }
    params = params.with_values(values)?;
    client.local_params = Some(params.clone());
    Ok(LocalResult { params, steps: k, examples: k * batch_size, mean_loss: loss_sum / k as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_count() {
        assert_eq!(steps_per_epoch(100, 6, 0).unwrap(), 16);
        assert!(steps_per_epoch(5, 6, 0).is_err());
        assert!(steps_per_epoch(5, 0, 0).is_err());
    }

    #[test]
    fn plan_shape() {
        let p = epoch_plan(9, 1, 100, 7, 6);
        assert_eq!(p.len(), 16);
        assert!(p.iter().all(|b| b.len() == 6 && b.iter().all(|&(m, n)| m < 100 && n < 7)));
        let mut seen: Vec<usize> = p.iter().flatten().map(|&(m, _)| m).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 96);
        assert_eq!(p, epoch_plan(9, 1, 100, 7, 6));
        assert_ne!(p, epoch_plan(9, 2, 100, 7, 6));
    }
}
