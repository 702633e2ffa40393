//! Waveform containers and signal-level measures.

use alloc::vec::Vec;

use crate::autodiff::kernels;
use crate::error::{contract, Error, Result};
use crate::math;

/// Relative regulariser on the residual energy of SI-SDR.
///
/// The residual is offset by `SI_SDR_EPS * ‖αy‖²`, so the measure stays
/// exactly scale invariant while perfect reconstruction evaluates to
/// `10·log10(1/ε) = 80 dB`, above the reporting ceiling.
pub const SI_SDR_EPS: f64 = 1e-8;

/// Ceiling (and, symmetrically, floor) of every reported SI-SDR in dB.
pub const CAP_DB: f64 = 60.0;

/// A mono waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("audio buffer must hold at least one sample".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Domain("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Domain(alloc::format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    /// An all-zero buffer of `len` samples.
    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(alloc::vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.samples.iter().map(|s| s * factor).collect(), self.sample_rate)
    }

    /// Fails unless `other` has the same length and sample rate.
    pub fn check_compatible(&self, other: &AudioBuffer) -> Result<()> {
        if self.len() != other.len() {
            return Err(contract!("length mismatch: {} vs {}", self.len(), other.len()));
        }
        if self.sample_rate != other.sample_rate {
            return Err(contract!(
                "sample-rate mismatch: {} vs {}",
                self.sample_rate,
                other.sample_rate
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &AudioBuffer) -> Result<Self> {
        self.check_compatible(other)?;
        let samples = self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect();
        Self::new(samples, self.sample_rate)
    }
}

/// `M` waveforms of identical length and rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceStack {
    sources: Vec<AudioBuffer>,
}

impl SourceStack {
    pub fn new(sources: Vec<AudioBuffer>) -> Result<Self> {
        let first = sources
            .first()
            .ok_or_else(|| Error::Domain("source stack needs at least one source".into()))?;
        for s in &sources[1..] {
            first.check_compatible(s)?;
        }
        Ok(Self { sources })
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn len(&self) -> usize {
        self.sources[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample_rate(&self) -> u32 {
        self.sources[0].sample_rate()
    }

    pub fn source(&self, index: usize) -> &AudioBuffer {
        &self.sources[index]
    }

    pub fn sources(&self) -> &[AudioBuffer] {
        &self.sources
    }

    pub fn into_sources(self) -> Vec<AudioBuffer> {
        self.sources
    }

    /// Elementwise sum over all sources.
    pub fn sum(&self) -> AudioBuffer {
        let mut acc = alloc::vec![0.0; self.len()];
        for s in &self.sources {
            for (a, v) in acc.iter_mut().zip(s.samples()) {
                *a += v;
            }
        }
        AudioBuffer { samples: acc, sample_rate: self.sample_rate() }
    }
}

/// SI-SDR on raw slices. Callers guarantee equal, nonzero lengths.
///
/// Returns a value clamped to `[-CAP_DB, CAP_DB]`; an estimate with no
/// component along the target evaluates to `-CAP_DB`.
pub fn si_sdr_slices(estimate: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(estimate.len(), target.len());
    let mut dot = 0.0;
    let mut target_energy = 0.0;
    for (e, y) in estimate.iter().zip(target) {
        dot += e * y;
        target_energy += y * y;
    }
    let alpha = dot / target_energy;
    let mut signal = 0.0;
    let mut residual = 0.0;
    for (e, y) in estimate.iter().zip(target) {
        let s = alpha * y;
        signal += s * s;
        let r = s - e;
        residual += r * r;
    }
    if signal <= 0.0 {
        return -CAP_DB;
    }
    let ratio = signal / (residual + SI_SDR_EPS * signal);
    (10.0 * math::log10(ratio)).clamp(-CAP_DB, CAP_DB)
}

/// Scale-invariant signal-to-distortion ratio of `estimate` against `target`, in dB.
pub fn si_sdr(estimate: &AudioBuffer, target: &AudioBuffer) -> Result<f64> {
    if estimate.len() != target.len() {
        return Err(contract!(
            "si_sdr length mismatch: estimate {} vs target {}",
            estimate.len(),
            target.len()
        ));
    }
    if target.samples().iter().all(|&y| y == 0.0) {
        return Err(Error::Domain("si_sdr target is identically zero".into()));
    }
    Ok(si_sdr_slices(estimate.samples(), target.samples()))
}

/// SI-SDR gain of `estimate` over the unprocessed `input_mixture`.
pub fn si_sdr_improvement(
    estimate: &AudioBuffer,
    target: &AudioBuffer,
    input_mixture: &AudioBuffer,
) -> Result<f64> {
    if input_mixture.len() != target.len() {
        return Err(contract!(
            "si_sdr_improvement length mismatch: mixture {} vs target {}",
            input_mixture.len(),
            target.len()
        ));
    }
    Ok(si_sdr(estimate, target)? - si_sdr(input_mixture, target)?)
}

/// Mixture of mixtures: the elementwise sum of a noisy recording and a noise recording.
pub fn synthesize_mom(noisy_speech: &AudioBuffer, noise: &AudioBuffer) -> Result<AudioBuffer> {
    noisy_speech.add(noise)
}

/// Writes `s'_m = s_m + (x - Σ_k s_k) / M` into `out`.
pub fn project_slices(sources: &[&[f64]], mixture: &[f64], out: &mut [Vec<f64>]) {
    let share = kernels::consistency_share(sources, mixture);
    for (o, s) in out.iter_mut().zip(sources) {
        for ((o, s), r) in o.iter_mut().zip(s.iter()).zip(&share) {
            *o = s + r;
        }
    }
}

/// Projects `estimates` so that they sum to `mixture`, spreading the
/// residual uniformly over the sources.
pub fn mixture_consistency_project(
    estimates: &SourceStack,
    mixture: &AudioBuffer,
) -> Result<SourceStack> {
    estimates.source(0).check_compatible(mixture)?;
    let views: Vec<&[f64]> = estimates.sources().iter().map(|s| s.samples()).collect();
    let mut out = alloc::vec![alloc::vec![0.0; mixture.len()]; views.len()];
    project_slices(&views, mixture.samples(), &mut out);
    let sources = out
        .into_iter()
        .map(|samples| AudioBuffer::new(samples, mixture.sample_rate()))
        .collect::<Result<Vec<_>>>()?;
    SourceStack::new(sources)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn buf(v: &[f64]) -> AudioBuffer {
        AudioBuffer::new(v.to_vec(), 8000).unwrap()
    }

    #[test]
    fn buffer_invariants() {
        assert!(AudioBuffer::new(vec![], 8000).is_err());
        assert!(AudioBuffer::new(vec![f64::NAN], 8000).is_err());
        assert!(AudioBuffer::new(vec![1.0], 0).is_err());
        let a = buf(&[1.0, 2.0]);
        let b = AudioBuffer::new(vec![1.0, 2.0], 16000).unwrap();
        assert!(matches!(a.add(&b), Err(Error::Contract(_))));
    }

    #[test]
    fn si_sdr_hand_value() {
        let v = si_sdr(&buf(&[1.0, 1.0]), &buf(&[1.0, 0.0])).unwrap();
        assert!(v.abs() < 1e-6, "{v}");
    }

    #[test]
    fn si_sdr_perfect_hits_cap() {
        let y = buf(&[1.0, 2.0, 3.0]);
        assert_eq!(si_sdr(&y, &y).unwrap(), CAP_DB);
    }

    #[test]
    fn si_sdr_errors() {
        assert!(matches!(
            si_sdr(&buf(&[1.0, 2.0]), &buf(&[1.0])),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            si_sdr(&buf(&[1.0, 2.0]), &buf(&[0.0, 0.0])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn orthogonal_estimate_hits_floor() {
        assert_eq!(si_sdr(&buf(&[0.0, 1.0]), &buf(&[1.0, 0.0])).unwrap(), -CAP_DB);
        assert_eq!(si_sdr(&buf(&[0.0, 0.0]), &buf(&[1.0, 0.0])).unwrap(), -CAP_DB);
    }

    #[test]
    fn improvement_examples() {
        let est = buf(&[1.0, 1.0]);
        let target = buf(&[1.0, 0.0]);
        assert_eq!(si_sdr_improvement(&est, &target, &est).unwrap(), 0.0);
        let v = si_sdr_improvement(&est, &target, &buf(&[1.0, 1.0])).unwrap();
        assert!(v.abs() < 1e-9);
        let mix = buf(&[1.0, 0.5]);
        let expect = CAP_DB - si_sdr(&mix, &target).unwrap();
        assert_eq!(si_sdr_improvement(&target, &target, &mix).unwrap(), expect);
    }

    #[test]
    fn mom_examples() {
        assert_eq!(synthesize_mom(&buf(&[1.0, 2.0]), &buf(&[0.0, 0.0])).unwrap(), buf(&[1.0, 2.0]));
        assert_eq!(synthesize_mom(&buf(&[1.0, -1.0]), &buf(&[-1.0, 1.0])).unwrap(), buf(&[0.0, 0.0]));
        assert_eq!(
            synthesize_mom(&buf(&[0.5, 0.5]), &buf(&[0.25, -0.25])).unwrap(),
            buf(&[0.75, 0.25])
        );
        assert!(synthesize_mom(&buf(&[1.0]), &buf(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn projection_examples() {
        let zeros = SourceStack::new(vec![buf(&[0.0, 0.0]); 3]).unwrap();
        let out = mixture_consistency_project(&zeros, &buf(&[3.0, 6.0])).unwrap();
        for s in out.sources() {
            assert_eq!(s.samples(), &[1.0, 2.0]);
        }
        let consistent =
            SourceStack::new(vec![buf(&[1.0, 0.5]), buf(&[0.25, 0.0]), buf(&[0.75, 1.5])]).unwrap();
        let out = mixture_consistency_project(&consistent, &buf(&[2.0, 2.0])).unwrap();
        assert_eq!(out, consistent);
    }
}
