//! Desk-scale synthetic corpus.
//!
//! "Speech" is a harmonic tone complex whose fundamental, spectral tilt,
//! formant position and syllable-rate envelope are fixed per speaker.
//! "Noise" is Gaussian noise through a clip-specific resonant band-pass whose
//! centre scatters around a per-speaker recording environment, so speaker
//! folds differ in their noise as well as their voices.
//! Each clip is stored as 16-bit stems plus their integer sum, so the
//! mixture equals the sum of its references exactly after loading.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::Split;
use crate::error::{config_err, Result};
use crate::math;
use crate::rng::{self, Stream};

const TWO_PI: f64 = core::f64::consts::TAU;
const SPEECH_RMS: f64 = 0.1;
const PEAK_LIMIT: f64 = 0.9;

/// Parameters of a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub speakers: usize,
    pub valid_speakers: usize,
    pub test_speakers: usize,
    pub clips_per_speaker: usize,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
    /// Speaker ids are `speaker_id_base + index`.
    pub speaker_id_base: u32,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    pub noise_center_min_hz: f64,
    pub noise_center_max_hz: f64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            speakers: 8,
            valid_speakers: 4,
            test_speakers: 4,
            clips_per_speaker: 48,
            clip_seconds: 0.5,
            sample_rate: 8000,
            seed: 0,
            speaker_id_base: 0,
            f0_min_hz: 90.0,
            f0_max_hz: 320.0,
            noise_center_min_hz: 300.0,
            noise_center_max_hz: 3200.0,
            snr_min_db: -5.0,
            snr_max_db: 5.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.speakers == 0 {
            return Err(config_err!("data_speakers must be positive"));
        }
        if self.clips_per_speaker < 2 {
            return Err(config_err!("data_clips_per_speaker must be at least 2"));
        }
        if !(self.clip_seconds > 0.0) || !self.clip_seconds.is_finite() {
            return Err(config_err!("data_clip_seconds must be positive"));
        }
        if self.sample_rate == 0 {
            return Err(config_err!("data_sample_rate must be positive"));
        }
        if self.clip_samples() == 0 {
            return Err(config_err!("data_clip_seconds is shorter than one sample"));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(0.0 < self.f0_min_hz && self.f0_min_hz <= self.f0_max_hz && self.f0_max_hz < nyquist) {
            return Err(config_err!("data_f0_min_hz/data_f0_max_hz must satisfy 0 < min <= max < Nyquist"));
        }
        if !(0.0 < self.noise_center_min_hz
            && self.noise_center_min_hz <= self.noise_center_max_hz
            && self.noise_center_max_hz < nyquist)
        {
            return Err(config_err!(
                "data_noise_center_min_hz/data_noise_center_max_hz must satisfy 0 < min <= max < Nyquist"
            ));
        }
        if !(self.snr_min_db <= self.snr_max_db) {
            return Err(config_err!("data_snr_min_db exceeds data_snr_max_db"));
        }
        Ok(())
    }

    pub fn clip_samples(&self) -> usize {
        math::round(self.clip_seconds * self.sample_rate as f64) as usize
    }

    pub fn total_speakers(&self) -> usize {
        self.speakers + self.valid_speakers + self.test_speakers
    }

    /// Speaker id range covered by this spec.
    pub fn speaker_ids(&self) -> core::ops::Range<u32> {
        self.speaker_id_base..self.speaker_id_base + self.total_speakers() as u32
    }

    fn split_of(&self, index: usize) -> Split {
        if index < self.speakers {
            Split::Train
        } else if index < self.speakers + self.valid_speakers {
            Split::Valid
        } else {
            Split::Test
        }
    }
}

/// One generated noisy-speech clip with its stems, as 16-bit PCM.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClip {
    pub clip_id: String,
    pub speaker_id: u32,
    pub split: Split,
    pub snr_db: f64,
    pub speech: Vec<i16>,
    pub noise: Vec<i16>,
    pub mixture: Vec<i16>,
}

/// Fundamental of the speaker at `index` within `[f0_min, f0_max]`.
///
/// Uses the golden-ratio sequence, which never repeats a value.
pub fn speaker_f0(spec: &SyntheticSpec, index: usize) -> f64 {
    let golden = 0.618_033_988_749_894_9;
    let frac = (index as f64 + 1.0) * golden;
    let frac = frac - math::floor(frac);
    spec.f0_min_hz + (spec.f0_max_hz - spec.f0_min_hz) * frac
}

struct Voice {
    f0: f64,
    tilt: f64,
    formant_hz: f64,
    syllable_hz: f64,
    /// Centre of the speaker's recording-environment noise band.
    room_hz: f64,
    /// Band-pass quality of that environment.
    room_q: f64,
}

fn voice(spec: &SyntheticSpec, index: usize, speaker_id: u32) -> Voice {
    let mut r = rng::stream(spec.seed, &[rng::tag::CORPUS, 0, speaker_id as u64]);
    Voice {
        f0: speaker_f0(spec, index),
        tilt: r.gen_range(0.6..1.6),
        formant_hz: r.gen_range(400.0..1800.0),
        syllable_hz: r.gen_range(2.5..6.0),
        room_hz: log_uniform(&mut r, spec.noise_center_min_hz, spec.noise_center_max_hz),
        room_q: log_uniform(&mut r, 0.7, 4.0),
    }
}

fn speech(v: &Voice, len: usize, sr: f64, r: &mut Stream) -> Vec<f64> {
    let f0 = v.f0 * (1.0 + r.gen_range(-0.03..0.03));
    let vibrato_hz = r.gen_range(3.0..6.0);
    let vibrato_phase = r.gen_range(0.0..TWO_PI);
    let env_phase = r.gen_range(0.0..TWO_PI);
    let harmonics = ((0.45 * sr) / f0) as usize;
    let amps: Vec<f64> = (1..=harmonics)
        .map(|h| {
            let hf = h as f64 * f0;
            let d = (hf - v.formant_hz) / 400.0;
            math::powf(h as f64, -v.tilt) * (1.0 + 2.0 * math::exp(-d * d))
        })
        .collect();
    let phases: Vec<f64> = (0..harmonics).map(|_| r.gen_range(0.0..TWO_PI)).collect();
    let mut out = Vec::with_capacity(len);
    let mut phase = 0.0;
    for i in 0..len {
        let t = i as f64 / sr;
        let inst = f0 * (1.0 + 0.01 * math::sin(TWO_PI * vibrato_hz * t + vibrato_phase));
        phase += TWO_PI * inst / sr;
        let mut s = 0.0;
        for (h, (a, p)) in amps.iter().zip(&phases).enumerate() {
            s += a * math::sin((h + 1) as f64 * phase + p);
        }
        let env = 0.2 + 0.8 * (0.5 - 0.5 * math::cos(TWO_PI * v.syllable_hz * t + env_phase));
        out.push(env * s);
    }
    out
}

/// Log-scale spread of per-clip noise centre and Q around the speaker's room.
const ROOM_JITTER: f64 = 0.1;
/// Upper bound of the broadband component mixed into each noise clip.
const WHITE_FLOOR: f64 = 0.05;

fn gaussian(r: &mut Stream) -> f64 {
    let u1: f64 = 1.0 - r.gen::<f64>();
    let u2: f64 = r.gen();
    math::sqrt(-2.0 * math::ln(u1)) * math::cos(TWO_PI * u2)
}

fn log_uniform(r: &mut Stream, lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        return lo;
    }
    math::exp(r.gen_range(math::ln(lo)..math::ln(hi)))
}

fn noise(spec: &SyntheticSpec, v: &Voice, len: usize, sr: f64, r: &mut Stream) -> Vec<f64> {
    // clip band shapes scatter narrowly around the speaker's room
    let center = (v.room_hz * math::exp(r.gen_range(-ROOM_JITTER..ROOM_JITTER)))
        .clamp(spec.noise_center_min_hz, spec.noise_center_max_hz);
    let q = v.room_q * math::exp(r.gen_range(-ROOM_JITTER..ROOM_JITTER));
    let white_mix = r.gen_range(0.0..WHITE_FLOOR);
    // RBJ band-pass, 0 dB peak gain
    let w0 = TWO_PI * center / sr;
    let alpha = math::sin(w0) / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * math::cos(w0) / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    let mut out = Vec::with_capacity(len);
    // run the filter in before recording so the clip starts in steady state
    let warmup = 256;
    for i in 0..len + warmup {
        let x = gaussian(r);
        let y = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = x;
        y2 = y1;
        y1 = y;
        if i >= warmup {
            out.push(y + white_mix * x);
        }
    }
    out
}

fn rms(x: &[f64]) -> f64 {
    math::sqrt(x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64)
}

fn quantize(x: f64) -> i16 {
    math::round(x * 32768.0).clamp(-32768.0, 32767.0) as i16
}

/// Generates every clip of the corpus, speaker by speaker.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<Vec<SyntheticClip>> {
    spec.validate()?;
    let len = spec.clip_samples();
    let sr = spec.sample_rate as f64;
    let mut clips = Vec::with_capacity(spec.total_speakers() * spec.clips_per_speaker);
    for index in 0..spec.total_speakers() {
        let speaker_id = spec.speaker_id_base + index as u32;
        let v = voice(spec, index, speaker_id);
        for c in 0..spec.clips_per_speaker {
            let mut r = rng::stream(spec.seed, &[rng::tag::CORPUS, 1, speaker_id as u64, c as u64]);
            let snr_db = r.gen_range(spec.snr_min_db..=spec.snr_max_db);
            let mut s = speech(&v, len, sr, &mut r);
            let mut n = noise(spec, &v, len, sr, &mut r);
            let gs = SPEECH_RMS / rms(&s);
            let gn = rms(&s) * gs / (rms(&n) * math::powf(10.0, snr_db / 20.0));
            s.iter_mut().for_each(|x| *x *= gs);
            n.iter_mut().for_each(|x| *x *= gn);
            let peak = s.iter().zip(&n).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
            if peak > PEAK_LIMIT {
                let g = PEAK_LIMIT / peak;
                s.iter_mut().for_each(|x| *x *= g);
                n.iter_mut().for_each(|x| *x *= g);
            }
            let speech: Vec<i16> = s.iter().map(|&x| quantize(x)).collect();
            let noise: Vec<i16> = n.iter().map(|&x| quantize(x)).collect();
            let mixture = speech
                .iter()
                .zip(&noise)
                .map(|(&a, &b)| (a as i32 + b as i32).clamp(-32768, 32767) as i16)
                .collect();
            clips.push(SyntheticClip {
                clip_id: format!("spk{speaker_id:05}_c{c:03}"),
                speaker_id,
                split: spec.split_of(index),
                snr_db,
                speech,
                noise,
                mixture,
            });
        }
    }
    Ok(clips)
}
