//! Client datasets, the speaker-fold partitioner and the noise pairing
//! procedure.
//!
//! A corpus is a set of speaker folds. Every noisy-speech clip in a fold
//! carries its embedded noise stem. Pairing keeps half of each fold as
//! noisy-speech mixtures and turns the noise stems of the other half into
//! the fold's isolated-noise recordings; clients are then formed from
//! disjoint groups of speakers.

mod synth;

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{config_err, Error, Result};
use crate::rng;
use crate::signal::AudioBuffer;

pub use synth::{generate_synthetic_corpus, speaker_f0, SyntheticClip, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Mixture,
    Noise,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Mixture => "mixture",
            Role::Noise => "noise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mixture" => Some(Role::Mixture),
            "noise" => Some(Role::Noise),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "valid" => Some(Split::Valid),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One manifest record. Paths are opaque strings interpreted by the loader.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub speaker_id: u32,
    pub role: Role,
    pub split: Split,
    pub duration_s: f64,
    pub path: String,
    /// `(speech, embedded noise)` stems of a mixture, when available.
    pub references: Option<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.clip_id.as_str()) {
                return Err(config_err!("duplicate clip_id {} in manifest", e.clip_id));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    /// Sorted distinct speakers of a split.
    pub fn speakers(&self, split: Split) -> Vec<u32> {
        let set: BTreeSet<u32> =
            self.entries.iter().filter(|e| e.split == split).map(|e| e.speaker_id).collect();
        set.into_iter().collect()
    }

    /// Entries of one speaker fold within a split, in manifest order.
    pub fn fold(&self, split: Split, speaker: u32) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.split == split && e.speaker_id == speaker)
            .collect()
    }
}

/// Assigns speakers to `num_clients` disjoint groups of near-equal size.
///
/// Speakers are shuffled with `seed`, then the first `S mod C` clients take
/// `⌈S/C⌉` speakers and the rest `⌊S/C⌋`. Each group is returned sorted.
pub fn partition_speakers(speakers: &[u32], num_clients: usize, seed: u64) -> Result<Vec<Vec<u32>>> {
    let distinct: BTreeSet<u32> = speakers.iter().copied().collect();
    if distinct.len() != speakers.len() {
        return Err(config_err!("speaker list contains duplicates"));
    }
    if num_clients == 0 {
        return Err(config_err!("num_clients must be positive"));
    }
    if num_clients > speakers.len() {
        return Err(config_err!(
            "num_clients ({num_clients}) exceeds the number of training speakers ({})",
            speakers.len()
        ));
    }
    let mut order: Vec<u32> = distinct.into_iter().collect();
    order.shuffle(&mut rng::stream(seed, &[rng::tag::PARTITION]));
    let base = order.len() / num_clients;
    let extra = order.len() % num_clients;
    let mut groups = Vec::with_capacity(num_clients);
    let mut rest = order.as_slice();
    for c in 0..num_clients {
        let take = base + usize::from(c < extra);
        let (head, tail) = rest.split_at(take);
        let mut g = head.to_vec();
        g.sort_unstable();
        groups.push(g);
        rest = tail;
    }
    Ok(groups)
}

/// Result of halving one speaker fold.
#[derive(Debug, Clone, PartialEq)]
pub struct Pairing<T> {
    /// Clips that stay noisy-speech mixtures.
    pub retained: Vec<T>,
    /// Clips whose noise stems become isolated noise recordings.
    pub discarded: Vec<T>,
}

/// Keeps `⌊n/2⌋` clips of a fold as mixtures and discards the remaining
/// `⌈n/2⌉`, whose noise stems become the fold's noise recordings.
///
/// `seed` should already identify the fold (see [`fold_seed`]). Both halves
/// keep the fold's original relative order.
pub fn pair_mixtures_with_noise<T: Clone>(fold: &[T], seed: u64) -> Result<Pairing<T>> {
    if fold.len() < 2 {
        return Err(config_err!("speaker fold needs at least 2 clips, has {}", fold.len()));
    }
    let mut idx: Vec<usize> = (0..fold.len()).collect();
    idx.shuffle(&mut rng::stream(seed, &[rng::tag::PAIRING]));
    let keep = fold.len() / 2;
    let mut retained: Vec<usize> = idx[..keep].to_vec();
    let mut discarded: Vec<usize> = idx[keep..].to_vec();
    retained.sort_unstable();
    discarded.sort_unstable();
    Ok(Pairing {
        retained: retained.into_iter().map(|i| fold[i].clone()).collect(),
        discarded: discarded.into_iter().map(|i| fold[i].clone()).collect(),
    })
}

/// Seed for pairing the fold of `speaker`.
pub fn fold_seed(seed: u64, speaker: u32) -> u64 {
    rng::derive(seed, &[rng::tag::PAIRING, speaker as u64])
}

/// A noisy-speech recording `x`, with `(s₁, s₂)` when the holder has them.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureExample {
    pub clip_id: String,
    pub mixture: AudioBuffer,
    pub references: Option<(AudioBuffer, AudioBuffer)>,
}

/// An isolated noise recording `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseClip {
    pub clip_id: String,
    pub audio: AudioBuffer,
}

/// Private data of one client: noisy mixtures plus isolated noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub mixtures: Vec<MixtureExample>,
    pub noises: Vec<NoiseClip>,
    pub speaker_ids: Vec<u32>,
}

impl ClientDataset {
    pub fn new(mixtures: Vec<MixtureExample>, noises: Vec<NoiseClip>, speaker_ids: Vec<u32>) -> Result<Self> {
        if mixtures.is_empty() {
            return Err(config_err!("client dataset has no mixtures"));
        }
        if noises.is_empty() {
            return Err(config_err!("client dataset has no noise recordings"));
        }
        let reference = &mixtures[0].mixture;
        for m in &mixtures {
            m.mixture.check_compatible(reference).map_err(|_| clip_mismatch(&m.clip_id))?;
            if let Some((s1, s2)) = &m.references {
                s1.check_compatible(reference).map_err(|_| clip_mismatch(&m.clip_id))?;
                s2.check_compatible(reference).map_err(|_| clip_mismatch(&m.clip_id))?;
            }
        }
        for n in &noises {
            n.audio.check_compatible(reference).map_err(|_| clip_mismatch(&n.clip_id))?;
        }
        Ok(Self { mixtures, noises, speaker_ids })
    }

    pub fn has_references(&self) -> bool {
        self.mixtures.iter().all(|m| m.references.is_some())
    }

    /// Copy without reference stems, as an unsupervised client would hold it.
    pub fn without_references(&self) -> Self {
        let mut d = self.clone();
        d.mixtures.iter_mut().for_each(|m| m.references = None);
        d
    }

    pub fn clip_len(&self) -> usize {
        self.mixtures[0].mixture.len()
    }

    pub fn clip_seconds(&self) -> f64 {
        self.mixtures[0].mixture.duration_seconds()
    }
}

fn clip_mismatch(clip: &str) -> Error {
    config_err!("clip {clip} differs in length or sample rate from the rest of its dataset")
}

/// Merges datasets (for pooled single-node training).
pub fn pool(datasets: &[ClientDataset]) -> Result<ClientDataset> {
    let mut mixtures = Vec::new();
    let mut noises = Vec::new();
    let mut speakers = Vec::new();
    for d in datasets {
        mixtures.extend(d.mixtures.iter().cloned());
        noises.extend(d.noises.iter().cloned());
        speakers.extend(d.speaker_ids.iter().copied());
    }
    speakers.sort_unstable();
    ClientDataset::new(mixtures, noises, speakers)
}
