//! SI-SDRi evaluation under the one-noise and two-noise conditions, and
//! best-round selection.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::ClientDataset;
use crate::error::{config_err, contract, Result};
use crate::exec::Executor;
pub use crate::federation::{RoundMetrics, RoundRecord};
use crate::model::{self, ParamVector};
use crate::signal::{si_sdr_improvement, AudioBuffer, SourceStack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalSplit {
    Valid,
    Test,
}

/// Which sources are active in the evaluation input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalCondition {
    /// `m = s₁ + s₂`
    OneNoise,
    /// `m = s₁ + s₂ + n`
    TwoNoise,
}

/// One frozen evaluation item.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalExample {
    pub clip_id: String,
    pub speech: AudioBuffer,
    /// Noisy speech `s₁ + s₂`.
    pub noisy_speech: AudioBuffer,
    /// Extra noise `n` added under [`EvalCondition::TwoNoise`].
    pub extra_noise: AudioBuffer,
}

impl EvalExample {
    pub fn input(&self, condition: EvalCondition) -> Result<AudioBuffer> {
        match condition {
            EvalCondition::OneNoise => Ok(self.noisy_speech.clone()),
            EvalCondition::TwoNoise => self.noisy_speech.add(&self.extra_noise),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalSet {
    pub examples: Vec<EvalExample>,
}

impl EvalSet {
    /// Frozen pairing: mixture `i` gets noise `i mod |noises|`.
    pub fn from_dataset(dataset: &ClientDataset) -> Result<Self> {
        let mut examples = Vec::with_capacity(dataset.mixtures.len());
        for (i, m) in dataset.mixtures.iter().enumerate() {
            let (s1, _) = m
                .references
                .as_ref()
                .ok_or_else(|| config_err!("evaluation clip {} has no reference stems", m.clip_id))?;
            let noise = &dataset.noises[i % dataset.noises.len()];
            examples.push(EvalExample {
                clip_id: m.clip_id.clone(),
                speech: s1.clone(),
                noisy_speech: m.mixture.clone(),
                extra_noise: noise.audio.clone(),
            });
        }
        Ok(Self { examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub split: EvalSplit,
    pub condition: EvalCondition,
    pub mean_si_sdri: f64,
    pub per_example: Vec<f64>,
    pub num_examples: usize,
}

/// Anything that maps a mixture to separated sources.
pub trait Separate: Sync {
    fn separate(&self, mixture: &AudioBuffer) -> Result<SourceStack>;
}

impl Separate for ParamVector {
    fn separate(&self, mixture: &AudioBuffer) -> Result<SourceStack> {
        model::separate(self, mixture)
    }
}

/// Puts the input in slot 1 and silence elsewhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassThrough;

impl Separate for PassThrough {
    fn separate(&self, mixture: &AudioBuffer) -> Result<SourceStack> {
        let silence = AudioBuffer::zeros(mixture.len(), mixture.sample_rate())?;
        SourceStack::new(alloc::vec![mixture.clone(), silence.clone(), silence])
    }
}

/// Scores output slot 1 against `s₁` for every example.
pub fn evaluate_model<S: Separate + ?Sized, E: Executor>(
    model: &S,
    set: &EvalSet,
    split: EvalSplit,
    condition: EvalCondition,
    exec: &E,
) -> Result<EvalResult> {
    if set.is_empty() {
        return Err(config_err!("evaluation set is empty"));
    }
    let scores = exec.map(set.len(), |i| {
        let ex = &set.examples[i];
        let m = ex.input(condition)?;
        let out = model.separate(&m)?;
        si_sdr_improvement(out.source(0), &ex.speech, &m)
    });
    let per_example = scores.into_iter().collect::<Result<Vec<f64>>>()?;
    let mean_si_sdri = per_example.iter().sum::<f64>() / per_example.len() as f64;
    Ok(EvalResult { split, condition, mean_si_sdri, num_examples: per_example.len(), per_example })
}

/// Validation score used to pick the best round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Selection {
    ValidOneNoise,
    #[default]
    ValidTwoNoise,
}

impl Selection {
    pub fn score(self, m: &RoundMetrics) -> f64 {
        match self {
            Selection::ValidOneNoise => m.valid_1n,
            Selection::ValidTwoNoise => m.valid_2n,
        }
    }
}

pub const SELECTION_WINDOW: u64 = 50;

/// Whether `round` falls in the last `window` rounds of a run ending at `last_round`.
pub fn in_window(round: u64, last_round: u64, window: u64) -> bool {
    round + window > last_round && round <= last_round
}

/// Argmax of the selection score over evaluated rounds within the last
/// `window` rounds of `history`; ties go to the later round.
pub fn select_best(history: &[RoundRecord], window: u64, selection: Selection) -> Result<u64> {
    let last = history.last().map(|r| r.round).ok_or_else(|| contract!("empty history"))?;
    let mut best: Option<(u64, f64)> = None;
    for rec in history.iter().filter(|r| in_window(r.round, last, window)) {
        if let Some(m) = &rec.metrics {
            let s = selection.score(m);
            if best.map_or(true, |(_, b)| s >= b) {
                best = Some((rec.round, s));
            }
        }
    }
    best.map(|(r, _)| r)
        .ok_or_else(|| contract!("no evaluated round within the last {window} rounds"))
}
