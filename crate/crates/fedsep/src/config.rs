//! Flat experiment configuration.
//!
//! Every key has a default, so an empty file is a valid config. Command-line
//! `--set key=value` pairs override file values. Relative paths resolve
//! against `output_root`, which the `FEDSEP_OUTPUT_ROOT` environment
//! variable overrides.

use std::path::{Path, PathBuf};

use fedsep_core::data::SyntheticSpec;
use fedsep_core::eval::Selection;
use fedsep_core::federation::{Aggregation, FederationConfig, MomentPolicy};
use fedsep_core::model::{ModelConfig, NUM_SOURCES};
use fedsep_core::optim::Regime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OUTPUT_ROOT_ENV: &str = "FEDSEP_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKey {
    FromScratch,
    FineTune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionKey {
    #[serde(rename = "valid_1n")]
    Valid1n,
    #[serde(rename = "valid_2n")]
    Valid2n,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKey {
    Uniform,
    DataSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentsKey {
    Persist,
    Reset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub num_clients: usize,
    pub rounds: u64,
    pub batch_size: usize,
    pub supervised_fraction: f64,
    pub regime: RegimeKey,
    /// Empty means random initialisation.
    pub init_checkpoint: String,
    pub eval_every: u64,
    pub selection_window: u64,
    pub selection: SelectionKey,
    pub aggregation: AggregationKey,
    pub moments: MomentsKey,
    pub workers: usize,
    /// Periodic checkpoint interval in rounds; 0 disables.
    pub checkpoint_every: u64,
    /// Write 0 instead of elapsed time so reruns give identical CSV bytes.
    pub record_wall_seconds: bool,

    pub output_root: String,
    pub corpus_dir: String,
    pub run_dir: String,
    pub sweep_dir: String,
    pub sweep_fractions: Vec<f64>,

    pub model_frame_len: usize,
    pub model_hop: usize,
    pub model_basis: usize,
    pub model_hidden: usize,

    pub data_seed: u64,
    pub data_speakers: usize,
    pub data_valid_speakers: usize,
    pub data_test_speakers: usize,
    pub data_clips_per_speaker: usize,
    pub data_clip_seconds: f64,
    pub data_sample_rate: u32,
    pub data_speaker_id_base: u32,
    pub data_f0_min_hz: f64,
    pub data_f0_max_hz: f64,
    pub data_noise_center_min_hz: f64,
    pub data_noise_center_max_hz: f64,
    pub data_snr_min_db: f64,
    pub data_snr_max_db: f64,

    pub pretrain_corpus_dir: String,
    pub pretrain_run_dir: String,
    pub pretrain_epochs: u64,
    pub pretrain_seed: u64,
    pub pretrain_speakers: usize,
    pub pretrain_valid_speakers: usize,
    pub pretrain_test_speakers: usize,
    pub pretrain_clips_per_speaker: usize,
    pub pretrain_speaker_id_base: u32,
    pub pretrain_f0_min_hz: f64,
    pub pretrain_f0_max_hz: f64,
    pub pretrain_noise_center_min_hz: f64,
    pub pretrain_noise_center_max_hz: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let data = SyntheticSpec::default();
        let model = ModelConfig::default();
        Self {
            seed: 0,
            num_clients: 8,
            rounds: 200,
            batch_size: 6,
            supervised_fraction: 0.0,
            regime: RegimeKey::FromScratch,
            init_checkpoint: String::new(),
            eval_every: 1,
            selection_window: 50,
            selection: SelectionKey::Valid2n,
            aggregation: AggregationKey::Uniform,
            moments: MomentsKey::Persist,
            workers: 1,
            checkpoint_every: 0,
            record_wall_seconds: true,
            output_root: "fedsep_out".into(),
            corpus_dir: "corpus".into(),
            run_dir: "runs/train".into(),
            sweep_dir: "runs/sweep".into(),
            sweep_fractions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            model_frame_len: model.frame_len,
            model_hop: model.hop,
            model_basis: model.basis,
            model_hidden: model.hidden,
            data_seed: data.seed,
            data_speakers: data.speakers,
            data_valid_speakers: data.valid_speakers,
            data_test_speakers: data.test_speakers,
            data_clips_per_speaker: data.clips_per_speaker,
            data_clip_seconds: data.clip_seconds,
            data_sample_rate: data.sample_rate,
            data_speaker_id_base: data.speaker_id_base,
            data_f0_min_hz: data.f0_min_hz,
            data_f0_max_hz: data.f0_max_hz,
            data_noise_center_min_hz: data.noise_center_min_hz,
            data_noise_center_max_hz: data.noise_center_max_hz,
            data_snr_min_db: data.snr_min_db,
            data_snr_max_db: data.snr_max_db,
            pretrain_corpus_dir: "corpus_pretrain".into(),
            pretrain_run_dir: "runs/pretrain".into(),
            pretrain_epochs: 20,
            pretrain_seed: 1,
            pretrain_speakers: 16,
            pretrain_valid_speakers: 4,
            pretrain_test_speakers: 4,
            pretrain_clips_per_speaker: 24,
            pretrain_speaker_id_base: 1000,
            pretrain_f0_min_hz: 70.0,
            pretrain_f0_max_hz: 260.0,
            pretrain_noise_center_min_hz: 200.0,
            pretrain_noise_center_max_hz: 2400.0,
        }
    }
}

impl ExperimentConfig {
    /// Reads `path` (if given) and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(Error::io(p))?;
                text.parse::<toml::Table>().map_err(|e| Error::Config(format!("{}: {}", p.display(), one_line(&e))))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not of the form key=value")))?;
            table.insert(key.trim().to_string(), parse_value(value.trim()));
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(one_line(&e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.num_clients == 0 {
            return fail("num_clients must be at least 1");
        }
        if self.rounds == 0 {
            return fail("rounds must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.supervised_fraction) {
            return fail("supervised_fraction must lie in [0, 1]");
        }
        if self.eval_every == 0 {
            return fail("eval_every must be at least 1");
        }
        if self.selection_window == 0 {
            return fail("selection_window must be at least 1");
        }
        if self.workers == 0 {
            return fail("workers must be at least 1");
        }
        if self.sweep_fractions.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return fail("sweep_fractions entries must lie in [0, 1]");
        }
        if self.regime == RegimeKey::FineTune && self.init_checkpoint.is_empty() {
            return fail("regime = fine_tune requires init_checkpoint");
        }
        self.model_config().validate()?;
        self.data_spec().validate()?;
        self.pretrain_spec().validate().map_err(|e| {
            Error::Config(e.to_string().replace("data_", "pretrain_"))
        })?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            frame_len: self.model_frame_len,
            hop: self.model_hop,
            basis: self.model_basis,
            hidden: self.model_hidden,
            num_sources: NUM_SOURCES,
            seed: self.seed,
        }
    }

    pub fn data_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            speakers: self.data_speakers,
            valid_speakers: self.data_valid_speakers,
            test_speakers: self.data_test_speakers,
            clips_per_speaker: self.data_clips_per_speaker,
            clip_seconds: self.data_clip_seconds,
            sample_rate: self.data_sample_rate,
            seed: self.data_seed,
            speaker_id_base: self.data_speaker_id_base,
            f0_min_hz: self.data_f0_min_hz,
            f0_max_hz: self.data_f0_max_hz,
            noise_center_min_hz: self.data_noise_center_min_hz,
            noise_center_max_hz: self.data_noise_center_max_hz,
            snr_min_db: self.data_snr_min_db,
            snr_max_db: self.data_snr_max_db,
        }
    }

    /// Second synthetic distribution used for server-side pre-training.
    pub fn pretrain_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            speakers: self.pretrain_speakers,
            valid_speakers: self.pretrain_valid_speakers,
            test_speakers: self.pretrain_test_speakers,
            clips_per_speaker: self.pretrain_clips_per_speaker,
            seed: self.pretrain_seed,
            speaker_id_base: self.pretrain_speaker_id_base,
            f0_min_hz: self.pretrain_f0_min_hz,
            f0_max_hz: self.pretrain_f0_max_hz,
            noise_center_min_hz: self.pretrain_noise_center_min_hz,
            noise_center_max_hz: self.pretrain_noise_center_max_hz,
            ..self.data_spec()
        }
    }

    pub fn federation(&self) -> FederationConfig {
        FederationConfig {
            rounds: self.rounds,
            batch_size: self.batch_size,
            eval_every: self.eval_every,
            selection_window: self.selection_window,
            selection: match self.selection {
                SelectionKey::Valid1n => Selection::ValidOneNoise,
                SelectionKey::Valid2n => Selection::ValidTwoNoise,
            },
            aggregation: match self.aggregation {
                AggregationKey::Uniform => Aggregation::Uniform,
                AggregationKey::DataSize => Aggregation::DataSize,
            },
            moments: match self.moments {
                MomentsKey::Persist => MomentPolicy::Persist,
                MomentsKey::Reset => MomentPolicy::Reset,
            },
        }
    }

    pub fn regime(&self) -> Regime {
        match self.regime {
            RegimeKey::FromScratch => Regime::FromScratch,
            RegimeKey::FineTune => Regime::FineTune,
        }
    }

    /// Number of supervised clients, `round(p_s·C)`; the lowest ids get supervision.
    pub fn supervised_clients(&self) -> usize {
        ((self.supervised_fraction * self.num_clients as f64).round() as usize).min(self.num_clients)
    }

    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from(&self.output_root),
        }
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.output_root().join(p)
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn one_line(e: &dyn std::fmt::Display) -> String {
    e.to_string().split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let c = ExperimentConfig::load(None, &[]).unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn overrides_apply_and_round_trip() {
        let c = ExperimentConfig::load(
            None,
            &["rounds=30".into(), "regime=from_scratch".into(), "sweep_fractions=[0, 1]".into(), "run_dir=runs/x".into()],
        )
        .unwrap();
        assert_eq!(c.rounds, 30);
        assert_eq!(c.sweep_fractions, vec![0.0, 1.0]);
        assert_eq!(c.run_dir, "runs/x");
        let back: ExperimentConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn errors_name_the_field() {
        let e = ExperimentConfig::load(None, &["data_speakers=0".into()]).unwrap_err();
        assert!(e.to_string().contains("data_speakers"), "{e}");
        let e = ExperimentConfig::load(None, &["pretrain_speakers=0".into()]).unwrap_err();
        assert!(e.to_string().contains("pretrain_speakers"), "{e}");
        let e = ExperimentConfig::load(None, &["no_such_key=1".into()]).unwrap_err();
        assert!(e.to_string().contains("no_such_key"), "{e}");
        assert_eq!(e.code(), "E_CONFIG");
        assert!(!e.to_string().contains('\n'));
    }

    #[test]
    fn supervised_count() {
        let c = ExperimentConfig { num_clients: 4, supervised_fraction: 1.0, ..Default::default() };
        assert_eq!(c.supervised_clients(), 4);
        let c = ExperimentConfig { num_clients: 8, supervised_fraction: 0.5, ..Default::default() };
        assert_eq!(c.supervised_clients(), 4);
    }
}
