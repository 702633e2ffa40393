//! Corpus on disk: generation, loading and client construction.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fedsep_core::data::{
    fold_seed, generate_synthetic_corpus, pair_mixtures_with_noise, partition_speakers, ClientDataset,
    Manifest, ManifestEntry, MixtureExample, NoiseClip, Role, Split, SyntheticSpec,
};
use fedsep_core::eval::EvalSet;

use crate::error::{Error, Result};
use crate::manifest::{read_manifest, write_manifest};
use crate::wav::{load_clip, write_pcm16};

pub const MANIFEST_FILE: &str = "manifest.tsv";

/// Writes the synthetic corpus under `dir` and returns the manifest path.
pub fn generate_corpus(spec: &SyntheticSpec, dir: &Path) -> Result<PathBuf> {
    let clips = generate_synthetic_corpus(spec)?;
    let audio = dir.join("audio");
    std::fs::create_dir_all(&audio).map_err(Error::io(&audio))?;
    let duration_s = spec.clip_samples() as f64 / spec.sample_rate as f64;
    let mut entries = Vec::with_capacity(clips.len());
    for c in &clips {
        let rel = |suffix: &str| format!("audio/{}_{suffix}.wav", c.clip_id);
        let (mix, s1, s2) = (rel("mix"), rel("s1"), rel("s2"));
        write_pcm16(&dir.join(&mix), &c.mixture, spec.sample_rate)?;
        write_pcm16(&dir.join(&s1), &c.speech, spec.sample_rate)?;
        write_pcm16(&dir.join(&s2), &c.noise, spec.sample_rate)?;
        entries.push(ManifestEntry {
            clip_id: c.clip_id.clone(),
            speaker_id: c.speaker_id,
            role: Role::Mixture,
            split: c.split,
            duration_s,
            path: mix,
            references: Some((s1, s2)),
        });
    }
    let path = dir.join(MANIFEST_FILE);
    write_manifest(&path, &Manifest::new(entries)?)?;
    Ok(path)
}

/// A loaded noisy-speech clip with optional stems.
#[derive(Debug, Clone)]
struct Clip {
    example: MixtureExample,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    root: PathBuf,
    manifest: Manifest,
    sample_rate: u32,
}

impl Corpus {
    pub fn open(dir: &Path, sample_rate: u32) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::Io {
                path: path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "manifest not found; run `fedsep generate` first"),
            });
        }
        Ok(Self { root: dir.to_path_buf(), manifest: read_manifest(&path)?, sample_rate })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn speaker_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.manifest.entries().iter().map(|e| e.speaker_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    fn load(&self, e: &ManifestEntry) -> Result<Clip> {
        let mixture = load_clip(&self.root.join(&e.path), &e.clip_id, self.sample_rate)?;
        let declared = (e.duration_s * self.sample_rate as f64).round() as usize;
        if declared != mixture.len() {
            return Err(Error::Ingest {
                clip: e.clip_id.clone(),
                detail: format!("{} samples on disk, manifest declares {} s", mixture.len(), e.duration_s),
            });
        }
        let references = match &e.references {
            Some((r1, r2)) => {
                let s1 = load_clip(&self.root.join(r1), &e.clip_id, self.sample_rate)?;
                let s2 = load_clip(&self.root.join(r2), &e.clip_id, self.sample_rate)?;
                if s1.len() != mixture.len() || s2.len() != mixture.len() {
                    return Err(Error::Ingest {
                        clip: e.clip_id.clone(),
                        detail: "reference stems differ in duration from the mixture".into(),
                    });
                }
                Some((s1, s2))
            }
            None => None,
        };
        Ok(Clip { example: MixtureExample { clip_id: e.clip_id.clone(), mixture, references } })
    }

    /// Mixtures and noise of one speaker fold after pairing.
    ///
    /// When every mixture carries stems, half the fold is kept and the
    /// embedded noise of the other half becomes the noise set. Otherwise the
    /// fold's standalone noise entries are used and all mixtures are kept.
    fn fold(&self, split: Split, speaker: u32, seed: u64) -> Result<(Vec<MixtureExample>, Vec<NoiseClip>)> {
        let entries = self.manifest.fold(split, speaker);
        let mixtures: Vec<&ManifestEntry> = entries.iter().copied().filter(|e| e.role == Role::Mixture).collect();
        let noises: Vec<&ManifestEntry> = entries.iter().copied().filter(|e| e.role == Role::Noise).collect();
        if !mixtures.is_empty() && mixtures.iter().all(|e| e.references.is_some()) && noises.is_empty() {
            let pairing = pair_mixtures_with_noise(&mixtures, fold_seed(seed, speaker))?;
            let kept = pairing.retained.iter().map(|e| Ok(self.load(e)?.example)).collect::<Result<Vec<_>>>()?;
            let mut noise = Vec::with_capacity(pairing.discarded.len());
            for e in &pairing.discarded {
                let clip = self.load(e)?.example;
                let (_, n) = clip.references.expect("checked above");
                noise.push(NoiseClip { clip_id: clip.clip_id, audio: n });
            }
            return Ok((kept, noise));
        }
        let kept = mixtures.iter().map(|e| Ok(self.load(e)?.example)).collect::<Result<Vec<_>>>()?;
        let noise = noises
            .iter()
            .map(|e| {
                let audio = load_clip(&self.root.join(&e.path), &e.clip_id, self.sample_rate)?;
                Ok(NoiseClip { clip_id: e.clip_id.clone(), audio })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((kept, noise))
    }

    fn dataset(&self, split: Split, speakers: &[u32], seed: u64) -> Result<ClientDataset> {
        let mut mixtures = Vec::new();
        let mut noises = Vec::new();
        for &s in speakers {
            let (m, n) = self.fold(split, s, seed)?;
            mixtures.extend(m);
            noises.extend(n);
        }
        Ok(ClientDataset::new(mixtures, noises, speakers.to_vec())?)
    }

    /// Non-IID client datasets from disjoint groups of training speakers.
    pub fn client_datasets(&self, num_clients: usize, seed: u64) -> Result<Vec<ClientDataset>> {
        let groups = partition_speakers(&self.manifest.speakers(Split::Train), num_clients, seed)?;
        groups.iter().map(|g| self.dataset(Split::Train, g, seed)).collect()
    }

    /// All training speakers in one dataset.
    pub fn pooled_train(&self, seed: u64) -> Result<ClientDataset> {
        self.dataset(Split::Train, &self.manifest.speakers(Split::Train), seed)
    }

    /// Frozen evaluation set of a held-out split.
    pub fn eval_set(&self, split: Split, seed: u64) -> Result<EvalSet> {
        let speakers = self.manifest.speakers(split);
        if speakers.is_empty() {
            return Err(Error::Config(format!("corpus has no {} speakers", split.as_str())));
        }
        Ok(EvalSet::from_dataset(&self.dataset(split, &speakers, seed)?)?)
    }
}

/// Speaker ids present in both corpora.
pub fn shared_speakers(a: &Corpus, b: &Corpus) -> Vec<u32> {
    let other: BTreeMap<u32, ()> = b.speaker_ids().into_iter().map(|s| (s, ())).collect();
    a.speaker_ids().into_iter().filter(|s| other.contains_key(s)).collect()
}
