#![allow(dead_code)]

use fedsep_core::data::{ClientDataset, MixtureExample, NoiseClip};
use fedsep_core::losses::{LossInstance, LossKind};
use fedsep_core::model::{init_params, ModelConfig, ParamVector};
use fedsep_core::AudioBuffer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_config(seed: u64) -> ModelConfig {
    ModelConfig { frame_len: 8, hop: 4, basis: 6, hidden: 8, num_sources: 3, seed }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_signal(r: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| r.gen_range(-1.0..1.0)).collect()
}

pub fn buffer(v: Vec<f64>) -> AudioBuffer {
    AudioBuffer::new(v, 8000).unwrap()
}

/// Random instance whose `x` is exactly `s1 + s2`.
pub fn random_instance(r: &mut ChaCha8Rng, kind: LossKind, len: usize) -> LossInstance {
    let s1 = buffer(random_signal(r, len));
    let s2 = buffer(random_signal(r, len));
    let n = buffer(random_signal(r, len));
    let x = s1.add(&s2).unwrap();
    LossInstance::build(kind, x, Some((s1, s2)), n).unwrap()
}

/// Parameters with small random biases so no unit sits exactly at a kink.
pub fn random_params(config: &ModelConfig, r: &mut ChaCha8Rng) -> ParamVector {
    let p = init_params(config).unwrap();
    let mut values = p.values().to_vec();
    for seg in p.layout().segments().iter().filter(|s| s.is_bias) {
        for v in &mut values[seg.range()] {
            *v = r.gen_range(-0.1..0.1);
        }
    }
    p.with_values(values).unwrap()
}

/// Supervised-capable client data: `n` mixtures with stems and `n` noises.
pub fn random_dataset(r: &mut ChaCha8Rng, n: usize, len: usize) -> ClientDataset {
    let mixtures = (0..n)
        .map(|i| {
            let s1 = buffer(random_signal(r, len));
            let s2 = buffer(random_signal(r, len).iter().map(|v| 0.3 * v).collect());
            MixtureExample { clip_id: format!("m{i}"), mixture: s1.add(&s2).unwrap(), references: Some((s1, s2)) }
        })
        .collect();
    let noises = (0..n)
        .map(|i| NoiseClip { clip_id: format!("n{i}"), audio: buffer(random_signal(r, len).iter().map(|v| 0.3 * v).collect()) })
        .collect();
    ClientDataset::new(mixtures, noises, vec![0]).unwrap()
}
