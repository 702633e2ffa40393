//! Supervised and mixture-invariant training losses.
//!
//! Both losses keep output slot 1 fixed as the speech estimate and search
//! only the two assignments of slots 2 and 3 (`(2,3)` and `(3,2)`). The
//! signal-level loss is negative SI-SDR. Ties between the two assignments
//! resolve to `(2,3)`.

use alloc::vec::Vec;

use crate::autodiff::{NodeId, Program, Tape};
use crate::error::{contract, Result};
use crate::model::{record_separator, Layout, NUM_SOURCES};
use crate::signal::{si_sdr_slices, AudioBuffer, SourceStack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Supervised,
    Unsupervised,
}

/// Everything one training example contributes to a loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossInstance {
    kind: LossKind,
    mom: AudioBuffer,
    noisy_speech: AudioBuffer,
    noise: AudioBuffer,
    references: Option<(AudioBuffer, AudioBuffer)>,
}

/// Maximum per-sample deviation tolerated between `x` and `s₁ + s₂`.
pub const REFERENCE_SUM_TOLERANCE: f64 = 1e-6;

impl LossInstance {
    /// Unsupervised instance: noisy speech `x` and an isolated noise `n`.
    pub fn unsupervised(noisy_speech: AudioBuffer, noise: AudioBuffer) -> Result<Self> {
        let mom = noisy_speech.add(&noise)?;
        Ok(Self { kind: LossKind::Unsupervised, mom, noisy_speech, noise, references: None })
    }

    /// Supervised instance; `noisy_speech` must equal `speech + speech_noise`.
    pub fn supervised(
        noisy_speech: AudioBuffer,
        speech: AudioBuffer,
        speech_noise: AudioBuffer,
        noise: AudioBuffer,
    ) -> Result<Self> {
        noisy_speech.check_compatible(&speech)?;
        noisy_speech.check_compatible(&speech_noise)?;
        let worst = noisy_speech
            .samples()
            .iter()
            .zip(speech.samples().iter().zip(speech_noise.samples()))
            .map(|(x, (s1, s2))| (x - (s1 + s2)).abs())
            .fold(0.0, f64::max);
        if worst > REFERENCE_SUM_TOLERANCE {
            return Err(contract!(
                "noisy speech differs from the sum of its references by {worst:e}"
            ));
        }
        let mom = noisy_speech.add(&noise)?;
        Ok(Self {
            kind: LossKind::Supervised,
            mom,
            noisy_speech,
            noise,
            references: Some((speech, speech_noise)),
        })
    }

    /// Builds an instance of the requested kind; supervised needs references.
    pub fn build(
        kind: LossKind,
        noisy_speech: AudioBuffer,
        references: Option<(AudioBuffer, AudioBuffer)>,
        noise: AudioBuffer,
    ) -> Result<Self> {
        match (kind, references) {
            (LossKind::Unsupervised, _) => Self::unsupervised(noisy_speech, noise),
            (LossKind::Supervised, Some((s1, s2))) => Self::supervised(noisy_speech, s1, s2, noise),
            (LossKind::Supervised, None) => {
                Err(contract!("supervised instance requires reference stems"))
            }
        }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    /// The model input `x + n`.
    pub fn mom(&self) -> &AudioBuffer {
        &self.mom
    }

    pub fn noisy_speech(&self) -> &AudioBuffer {
        &self.noisy_speech
    }

    pub fn noise(&self) -> &AudioBuffer {
        &self.noise
    }

    pub fn references(&self) -> Option<(&AudioBuffer, &AudioBuffer)> {
        self.references.as_ref().map(|(a, b)| (a, b))
    }
}

#[inline]
fn neg_si_sdr(estimate: &[f64], target: &[f64]) -> f64 {
    -si_sdr_slices(estimate, target)
}

#[inline]
fn pick_min(a: f64, b: f64) -> f64 {
    if a <= b {
        a
    } else {
        b
    }
}

fn check_stack(estimates: &SourceStack, instance: &LossInstance) -> Result<()> {
    if estimates.num_sources() != NUM_SOURCES {
        return Err(contract!(
            "loss expects {NUM_SOURCES} estimated sources, got {}",
            estimates.num_sources()
        ));
    }
    estimates.source(0).check_compatible(instance.mom())
}

/// `L(ŝ₁,s₁) + ½·min_π [L(ŝ_π₁,s₂) + L(ŝ_π₂,n)]`.
pub fn supervised_loss(estimates: &SourceStack, instance: &LossInstance) -> Result<f64> {
    check_stack(estimates, instance)?;
    let (s1, s2) = match (instance.kind, instance.references()) {
        (LossKind::Supervised, Some(r)) => r,
        _ => return Err(contract!("supervised_loss needs a supervised instance")),
    };
    let e = |i: usize| estimates.source(i).samples();
    let n = instance.noise.samples();
    let speech = neg_si_sdr(e(0), s1.samples());
    let keep = neg_si_sdr(e(1), s2.samples()) + neg_si_sdr(e(2), n);
    let swap = neg_si_sdr(e(2), s2.samples()) + neg_si_sdr(e(1), n);
    Ok(speech + 0.5 * pick_min(keep, swap))
}

/// `min_π [L(ŝ₁ + ŝ_π₁, x) + L(ŝ_π₂, n)]`.
pub fn unsupervised_mixit_loss(estimates: &SourceStack, instance: &LossInstance) -> Result<f64> {
    check_stack(estimates, instance)?;
    let e = |i: usize| estimates.source(i).samples();
    let x = instance.noisy_speech.samples();
    let n = instance.noise.samples();
    let with = |j: usize| -> Vec<f64> { e(0).iter().zip(e(j)).map(|(a, b)| a + b).collect() };
    let keep = neg_si_sdr(&with(1), x) + neg_si_sdr(e(2), n);
    let swap = neg_si_sdr(&with(2), x) + neg_si_sdr(e(1), n);
    Ok(pick_min(keep, swap))
}

/// Evaluates the loss matching `instance.kind()`.
pub fn loss(estimates: &SourceStack, instance: &LossInstance) -> Result<f64> {
    match instance.kind {
        LossKind::Supervised => supervised_loss(estimates, instance),
        LossKind::Unsupervised => unsupervised_mixit_loss(estimates, instance),
    }
}

/// Separator followed by one of the losses, as a differentiable program.
#[derive(Debug, Clone)]
pub struct LossProgram {
    kind: LossKind,
    layout: Layout,
}

impl LossProgram {
    pub fn new(kind: LossKind, layout: Layout) -> Self {
        Self { kind, layout }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }
}

/// Program computing the `kind` loss of the separator with `layout`.
pub fn make_loss_program(kind: LossKind, layout: Layout) -> LossProgram {
    LossProgram::new(kind, layout)
}

fn neg_si_sdr_node(tape: &mut Tape, estimate: NodeId, target: NodeId) -> Result<NodeId> {
    let v = tape.si_sdr(estimate, target)?;
    tape.scale(v, -1.0)
}

fn pair_node(tape: &mut Tape, (e1, t1): (NodeId, NodeId), (e2, t2): (NodeId, NodeId)) -> Result<NodeId> {
    let a = neg_si_sdr_node(tape, e1, t1)?;
    let b = neg_si_sdr_node(tape, e2, t2)?;
    tape.add(a, b)
}

impl Program for LossProgram {
    type Input = LossInstance;

    fn record(&self, tape: &mut Tape, params: &[f64], instance: &LossInstance) -> Result<NodeId> {
        if self.layout.num_sources != NUM_SOURCES {
            return Err(contract!(
                "loss program expects {NUM_SOURCES} estimated sources, layout has {}",
                self.layout.num_sources
            ));
        }
        if instance.kind != self.kind {
            return Err(contract!("{:?} program given a {:?} instance", self.kind, instance.kind));
        }
        let mom = tape.vector(instance.mom.samples())?;
        let out = record_separator(tape, &self.layout, params, mom)?;
        let n = tape.vector(instance.noise.samples())?;
        match self.kind {
            LossKind::Supervised => {
                let (s1, s2) = instance
                    .references()
                    .ok_or_else(|| contract!("supervised instance without references"))?;
                let s1 = tape.vector(s1.samples())?;
                let s2 = tape.vector(s2.samples())?;
                let speech = neg_si_sdr_node(tape, out[0], s1)?;
                let keep = pair_node(tape, (out[1], s2), (out[2], n))?;
                let swap = pair_node(tape, (out[2], s2), (out[1], n))?;
                let best = tape.min2(keep, swap)?;
                let half = tape.scale(best, 0.5)?;
                tape.add(speech, half)
            }
            LossKind::Unsupervised => {
                let x = tape.vector(instance.noisy_speech.samples())?;
                let with2 = tape.add(out[0], out[1])?;
                let with3 = tape.add(out[0], out[2])?;
                let keep = pair_node(tape, (with2, x), (out[2], n))?;
                let swap = pair_node(tape, (with3, x), (out[1], n))?;
                tape.min2(keep, swap)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::signal::CAP_DB;
    use alloc::vec;

    fn buf(v: &[f64]) -> AudioBuffer {
        AudioBuffer::new(v.to_vec(), 8000).unwrap()
    }

    fn instance() -> LossInstance {
        let s1 = buf(&[1.0, 0.5, -0.25, 0.0]);
        let s2 = buf(&[0.0, 0.25, 0.5, -1.0]);
        let n = buf(&[0.5, -0.5, 0.0, 0.25]);
        let x = s1.add(&s2).unwrap();
        LossInstance::supervised(x, s1, s2, n).unwrap()
    }

    #[test]
    fn supervised_perfect_estimates() {
        let inst = instance();
        let (s1, s2) = inst.references().unwrap();
        let est = SourceStack::new(vec![s1.clone(), s2.clone(), inst.noise().clone()]).unwrap();
        assert_eq!(supervised_loss(&est, &inst).unwrap(), -2.0 * CAP_DB);
    }

    #[test]
    fn unsupervised_perfect_regrouping() {
        let inst = instance();
        let (s1, s2) = inst.references().unwrap();
        let unsup = LossInstance::unsupervised(inst.noisy_speech().clone(), inst.noise().clone()).unwrap();
        let est = SourceStack::new(vec![s1.clone(), s2.clone(), inst.noise().clone()]).unwrap();
        assert_eq!(unsupervised_mixit_loss(&est, &unsup).unwrap(), -2.0 * CAP_DB);
    }

    #[test]
    fn supervised_rejects_unsupervised_instance() {
        let inst = instance();
        let unsup = LossInstance::unsupervised(inst.noisy_speech().clone(), inst.noise().clone()).unwrap();
        let est = SourceStack::new(vec![inst.noise().clone(); 3]).unwrap();
        assert!(matches!(supervised_loss(&est, &unsup), Err(Error::Contract(_))));
    }

    #[test]
    fn losses_reject_wrong_source_count() {
        let inst = instance();
        let est = SourceStack::new(vec![inst.noise().clone(); 2]).unwrap();
        assert!(supervised_loss(&est, &inst).is_err());
        assert!(unsupervised_mixit_loss(&est, &inst).is_err());
    }

    #[test]
    fn supervised_requires_consistent_references() {
        let s1 = buf(&[1.0, 0.0]);
        let s2 = buf(&[0.0, 1.0]);
        let n = buf(&[0.5, 0.5]);
        assert!(LossInstance::supervised(buf(&[1.0, 1.1]), s1.clone(), s2.clone(), n.clone()).is_err());
        assert!(LossInstance::build(LossKind::Supervised, buf(&[1.0, 1.0]), None, n).is_err());
    }
}
