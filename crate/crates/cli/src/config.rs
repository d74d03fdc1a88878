//! Experiment configuration: a TOML file whose every key is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use locdistill::distill::TrainConfig;
use locdistill::losses::{DistillConfig, KlDirection, KlOptions, LossWeights, TbrGate};
use locdistill::toydet::ModelConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every derived seed.
    pub seed: u64,
    pub out: PathBuf,
    pub nms_threshold: f64,
    pub data: DataSection,
    pub models: ModelsSection,
    pub train: TrainSection,
    pub distill: DistillSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train_count: usize,
    pub eval_count: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsSection {
    pub teacher: Vec<usize>,
    /// Hidden widths of each assistant, largest first.
    pub assistants: Vec<Vec<usize>>,
    pub student: Vec<usize>,
    pub n_bins: usize,
    pub e_min: f64,
    pub e_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub decay_factor: f64,
    pub decay_epochs: Vec<usize>,
    pub batch_size: usize,
    pub warm_start: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlReference {
    Teacher,
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateRule {
    StudentInferior,
    StudentSuperior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    pub temperature: f64,
    pub lambda_regression: f64,
    pub lambda_dfl: f64,
    pub lambda_ld: f64,
    pub tau_squared: bool,
    pub kl_reference: KlReference,
    pub class_kd: bool,
    pub kd_ce_weight: f64,
    pub kd_kl_weight: f64,
    pub tbr_lambda: f64,
    pub tbr_epsilon: f64,
    pub tbr_gate: GateRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub temperatures: Vec<f64>,
    /// `temp-sweep` averages over root seeds `seed .. seed + seeds`.
    pub seeds: u64,
    pub demo_objects: usize,
    pub demo_views: usize,
    pub demo_thresholds: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("out"),
            nms_threshold: 0.6,
            data: DataSection::default(),
            models: ModelsSection::default(),
            train: TrainSection::default(),
            distill: DistillSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train_count: 600,
            eval_count: 500,
            sigma: 2.0,
        }
    }
}

impl Default for ModelsSection {
    fn default() -> Self {
        ModelsSection {
            teacher: vec![64],
            assistants: vec![vec![16]],
            student: vec![8],
            n_bins: 17,
            e_min: 0.0,
            e_max: 16.0,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 60,
            lr: 0.2,
            decay_factor: 0.1,
            decay_epochs: vec![48],
            batch_size: 32,
            warm_start: false,
        }
    }
}

impl Default for DistillSection {
    fn default() -> Self {
        let d = DistillConfig::default();
        DistillSection {
            temperature: d.tau,
            lambda_regression: d.weights.regression,
            lambda_dfl: d.weights.dfl,
            lambda_ld: d.weights.ld,
            tau_squared: d.kl.tau_squared,
            kl_reference: KlReference::Teacher,
            class_kd: d.class_kd,
            kd_ce_weight: d.kd_ce_weight,
            kd_kl_weight: d.kd_kl_weight,
            tbr_lambda: d.tbr_lambda,
            tbr_epsilon: d.tbr_epsilon,
            tbr_gate: GateRule::StudentInferior,
        }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            temperatures: vec![1.0, 5.0, 10.0, 15.0, 20.0],
            seeds: 3,
            demo_objects: 200,
            demo_views: 5,
            demo_thresholds: vec![0.6, 0.95],
        }
    }
}

/// Roles of the model ladder; the index feeds the init-seed derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Teacher,
    Assistant(usize),
    Student,
}

impl ExperimentConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        ExperimentConfig {
            seed,
            ..self.clone()
        }
    }

    pub fn model(&self, role: Role) -> ModelConfig {
        let m = &self.models;
        let (hidden, index) = match role {
            Role::Teacher => (m.teacher.clone(), 0),
            Role::Assistant(i) => (m.assistants[i].clone(), i as u64 + 1),
            Role::Student => (m.student.clone(), m.assistants.len() as u64 + 1),
        };
        ModelConfig {
            input_dim: locdistill::toydet::SceneConfig::default().feature_dim(),
            hidden,
            n_bins: m.n_bins,
            e_min: m.e_min,
            e_max: m.e_max,
            n_classes: locdistill::toydet::SceneConfig::default().n_classes,
            seed: locdistill::seed::derive_seed(
                self.seed,
                locdistill::seed::labels::MODEL_INIT,
                index,
            ),
        }
    }

    pub fn assistants(&self) -> Vec<ModelConfig> {
        (0..self.models.assistants.len())
            .map(|i| self.model(Role::Assistant(i)))
            .collect()
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            lr: t.lr,
            decay_factor: t.decay_factor,
            decay_epochs: t.decay_epochs.clone(),
            batch_size: t.batch_size,
            seed: locdistill::seed::derive_seed(self.seed, locdistill::seed::labels::SHUFFLE, 0),
            warm_start: t.warm_start,
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        let d = &self.distill;
        DistillConfig {
            tau: d.temperature,
            weights: LossWeights {
                regression: d.lambda_regression,
                dfl: d.lambda_dfl,
                ld: d.lambda_ld,
            },
            kl: KlOptions {
                direction: match d.kl_reference {
                    KlReference::Teacher => KlDirection::TeacherReference,
                    KlReference::Student => KlDirection::StudentReference,
                },
                tau_squared: d.tau_squared,
            },
            tbr_epsilon: d.tbr_epsilon,
            tbr_lambda: d.tbr_lambda,
            tbr_gate: match d.tbr_gate {
                GateRule::StudentInferior => TbrGate::StudentInferior,
                GateRule::StudentSuperior => TbrGate::StudentSuperior,
            },
            class_kd: d.class_kd,
            kd_ce_weight: d.kd_ce_weight,
            kd_kl_weight: d.kd_kl_weight,
        }
    }

    /// Checks every section; errors name the offending field.
    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |field: &str, why: String| Err(CliError::Invalid(format!("{field}: {why}")));
        if !(0.0..=1.0).contains(&self.nms_threshold) {
            return invalid(
                "nms_threshold",
                format!("must lie in [0, 1], got {}", self.nms_threshold),
            );
        }
        if self.data.train_count == 0 || self.data.eval_count == 0 {
            return invalid("data.train_count", "sample counts must be >= 1".into());
        }
        if !(self.data.sigma >= 0.0) || !self.data.sigma.is_finite() {
            return invalid(
                "data.sigma",
                format!("must be >= 0, got {}", self.data.sigma),
            );
        }
        if !(self.distill.temperature > 0.0) || !self.distill.temperature.is_finite() {
            return invalid(
                "distill.temperature",
                format!("must be > 0, got {}", self.distill.temperature),
            );
        }
        if let Some(t) = self.sweep.temperatures.iter().find(|t| !(**t > 0.0)) {
            return invalid(
                "sweep.temperatures",
                format!("every temperature must be > 0, got {t}"),
            );
        }
        if self.sweep.seeds == 0 {
            return invalid("sweep.seeds", "must be >= 1".into());
        }
        if self.sweep.demo_objects == 0 || self.sweep.demo_views == 0 {
            return invalid("sweep.demo_objects", "demo sizes must be >= 1".into());
        }
        if let Some(t) = self
            .sweep
            .demo_thresholds
            .iter()
            .find(|t| !(0.0..=1.0).contains(*t))
        {
            return invalid(
                "sweep.demo_thresholds",
                format!("thresholds must lie in [0, 1], got {t}"),
            );
        }
        for (name, role) in [
            ("models.teacher", Role::Teacher),
            ("models.student", Role::Student),
        ] {
            self.model(role)
                .validate()
                .or_else(|e| invalid(name, e.to_string()))?;
        }
        for (i, a) in self.assistants().iter().enumerate() {
            a.validate()
                .or_else(|e| invalid(&format!("models.assistants[{i}]"), e.to_string()))?;
        }
        locdistill::distill::enumerate_ta_paths(
            &self.model(Role::Teacher),
            &self.assistants(),
            &self.model(Role::Student),
        )
        .map_err(|e| CliError::Invalid(format!("models: {e}")))?;
        self.train_config()
            .validate()
            .or_else(|e| invalid("train", e.to_string()))?;
        self.distill_config()
            .validate()
            .or_else(|e| invalid("distill", e.to_string()))?;
        Ok(())
    }
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates configuration text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::ConfigParse {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a configuration file. Missing keys take their documented defaults.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn config_to_string(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}

pub fn save_config(cfg: &ExperimentConfig, path: &Path) -> Result<(), CliError> {
    std::fs::write(path, config_to_string(cfg))
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.distill.temperature, 10.0);
        assert_eq!(
            (
                cfg.distill.lambda_regression,
                cfg.distill.lambda_dfl,
                cfg.distill.lambda_ld
            ),
            (2.0, 0.25, 0.25)
        );
        assert_eq!(cfg.nms_threshold, 0.6);
    }

    #[test]
    fn negative_temperature_names_the_field() {
        let err = parse_config("[distill]\ntemperature = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("temperature"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_the_line() {
        let err = parse_config("seed = 3\n\n[data]\nsigma = = 2\n").unwrap_err();
        match err {
            CliError::ConfigParse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config("[data]\nsigmaa = 1.0\n").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = ExperimentConfig {
            seed: 17,
            ..ExperimentConfig::default()
        };
        cfg.models.assistants = vec![vec![32], vec![16, 4]];
        cfg.distill.tbr_gate = GateRule::StudentSuperior;
        let back = parse_config(&config_to_string(&cfg)).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn ladder_order_is_validated() {
        let err = parse_config("[models]\nteacher = [8]\nstudent = [64]\n").unwrap_err();
        assert!(err.to_string().contains("models"), "{err}");
    }

    #[test]
    fn roles_get_distinct_init_seeds() {
        let cfg = ExperimentConfig::default();
        assert_ne!(cfg.model(Role::Teacher).seed, cfg.model(Role::Student).seed);
        assert_eq!(cfg.model(Role::Student).seed, cfg.model(Role::Student).seed);
    }
}
