//! Run configuration: one TOML file describing the data source, the
//! window × input sweep and every experiment setting.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{run_repetitions, ExperimentConfig, RepetitionReport};
use crate::ingestion::Session;
use crate::parallel::Execution;
use crate::sampling::{
    build_dataset, Dataset, DatasetConfig, InputCombo, Task, Thresholds, WindowSpec,
};
use crate::synth::{generate, SynthConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Session directories. When empty, the session generated from the
    /// `[synth]` section is used instead.
    pub sessions: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out: PathBuf,
    pub task: Task,
    pub combos: Vec<InputCombo>,
    pub windows_s: Vec<f64>,
    pub overlap_frac: f64,
    /// Write each built dataset as a binary container under `<out>/datasets`.
    pub export_datasets: bool,
    pub thresholds: Thresholds,
    pub data: DataConfig,
    pub experiment: ExperimentConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            task: Task::Binary,
            combos: InputCombo::ALL.to_vec(),
            windows_s: vec![15.0],
            overlap_frac: 0.5,
            export_datasets: false,
            thresholds: Thresholds::default(),
            data: DataConfig::default(),
            experiment: ExperimentConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Comments attached to keys in `--print-defaults` output, by table and key.
const KEY_DOCS: &[(&str, &str, &str)] = &[
    (
        "",
        "out",
        "output directory for sessions, reports, predictions and checkpoints",
    ),
    (
        "",
        "task",
        "\"binary\" (same group or not) or \"joint4\" (no interaction + three role pairs)",
    ),
    (
        "",
        "combos",
        "input combinations to sweep: acceleration, proximity, fusion",
    ),
    ("", "windows_s", "window lengths in seconds to sweep"),
    (
        "",
        "overlap_frac",
        "fraction of a window shared with the next one",
    ),
    (
        "",
        "export_datasets",
        "save every built dataset as a binary container",
    ),
    (
        "thresholds",
        "membership",
        "minimum co-grouped fraction of a window for a positive pair",
    ),
    (
        "thresholds",
        "speaking",
        "minimum speaking fraction of a window to count as speaker",
    ),
    (
        "data",
        "sessions",
        "session directories; empty means: use the [synth] session",
    ),
    (
        "experiment",
        "repetitions",
        "independent random pair splits",
    ),
    (
        "experiment",
        "seed_base",
        "repetition i uses seed seed_base + i",
    ),
    (
        "experiment",
        "jobs",
        "repetitions run concurrently when above 1",
    ),
    (
        "experiment",
        "strict_determinism",
        "fixed gradient chunking; results independent of thread count",
    ),
    (
        "experiment.train",
        "epochs",
        "training epochs; the epoch with lowest validation loss is kept",
    ),
    ("experiment.train", "precision", "\"f32\" or \"f64\""),
    ("experiment.train", "hidden", "LSTM units per layer"),
    ("experiment.train", "layers", "stacked LSTM layers"),
    (
        "experiment.train",
        "head_hidden",
        "units of the ReLU layer between the LSTM and the output",
    ),
    (
        "experiment.train",
        "relu_on_logits",
        "apply ReLU to the output layer too",
    ),
    (
        "experiment.split",
        "max_attempts",
        "split draws tried before giving up",
    ),
    (
        "experiment.split",
        "participant_disjoint",
        "no participant shared between train, validation and test",
    ),
    (
        "synth",
        "seed",
        "required whenever a [synth] table is present",
    ),
    (
        "synth",
        "n_participants",
        "participants in the generated session",
    ),
    (
        "synth",
        "p_tp",
        "per-second proximity detection probability for co-grouped pairs",
    ),
    (
        "synth",
        "p_fp",
        "per-second detection probability for all other pairs",
    ),
    (
        "synth",
        "speaker_energy",
        "scale of the gesture process added while speaking",
    ),
    (
        "synth",
        "coordination_gain",
        "amplitude of the movement component shared within a group",
    ),
];

impl RunConfig {
    /// Parses and validates a configuration. A `[synth]` table must name its
    /// `seed` explicitly.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(synth) = table.get("synth") {
            if synth.get("seed").is_none() {
                return Err(Error::Config("[synth]: missing field `seed`".into()));
            }
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configuration serializes")
    }

    /// Default configuration as TOML, with each documented key preceded by a
    /// comment.
    pub fn defaults_toml() -> String {
        let plain = Self::default().to_toml();
        let mut out =
            String::from("# fformation run configuration (all values are the defaults)\n\n");
        let mut table = String::new();
        for line in plain.lines() {
            let trimmed = line.trim();
            if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                table = name.to_string();
            } else if let Some((key, _)) = trimmed.split_once(" = ") {
                if let Some((_, _, doc)) =
                    KEY_DOCS.iter().find(|(t, k, _)| *t == table && *k == key)
                {
                    out.push_str(&format!("# {doc}\n"));
                }
            }
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.windows_s.is_empty() {
            return Err(Error::Config(
                "windows_s must list at least one window length".into(),
            ));
        }
        if self.combos.is_empty() {
            return Err(Error::Config(
                "combos must list at least one input combination".into(),
            ));
        }
        for &w in &self.windows_s {
            self.window(w)?;
        }
        for (name, v) in [
            ("membership", self.thresholds.membership),
            ("speaking", self.thresholds.speaking),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!(
                    "thresholds.{name} must be in [0, 1], got {v}"
                )));
            }
        }
        self.experiment.validate()?;
        if self.data.sessions.is_empty() {
            self.synth.validate()?;
            for &w in &self.windows_s {
                self.synth.validate_for_window(w)?;
            }
        }
        Ok(())
    }

    /// Fails when a referenced session directory does not exist.
    pub fn check_paths(&self) -> Result<()> {
        for p in &self.data.sessions {
            if !p.is_dir() {
                return Err(Error::Data(format!(
                    "session directory {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn window(&self, length_s: f64) -> Result<WindowSpec> {
        let spec = WindowSpec {
            overlap_frac: self.overlap_frac,
            ..WindowSpec::new(length_s)?
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dataset_config(&self, length_s: f64, combo: InputCombo) -> Result<DatasetConfig> {
        Ok(DatasetConfig {
            window: self.window(length_s)?,
            combo,
            task: self.task,
            thresholds: self.thresholds,
        })
    }

    /// Loads the configured session directories, or generates the
    /// synthetic session.
    pub fn sessions(&self) -> Result<Vec<Session>> {
        if self.data.sessions.is_empty() {
            return Ok(vec![generate(&self.synth)?.session]);
        }
        self.check_paths()?;
        self.data
            .sessions
            .iter()
            .map(|p| Session::load(p))
            .collect()
    }

    pub fn build(
        &self,
        sessions: &[Session],
        length_s: f64,
        combo: InputCombo,
        exec: Execution,
    ) -> Result<Dataset> {
        build_dataset(sessions, &self.dataset_config(length_s, combo)?, exec)
    }

    /// Builds the dataset of one sweep cell and runs every repetition on it.
    /// The returned report embeds this configuration.
    pub fn run_cell(
        &self,
        sessions: &[Session],
        length_s: f64,
        combo: InputCombo,
    ) -> Result<(Dataset, RepetitionReport)> {
        let dataset = self.build(sessions, length_s, combo, Execution::parallel(true))?;
        let mut report = run_repetitions(&dataset, &self.experiment)?;
        report.run_config = Some(serde_json::to_value(self)?);
        Ok((dataset, report))
    }

    /// The configuration embedded in `report`, narrowed to the report's
    /// window length and input combination.
    pub fn from_report(report: &RepetitionReport) -> Result<Self> {
        let value = report
            .run_config
            .clone()
            .ok_or_else(|| Error::Data("report has no embedded run configuration".into()))?;
        let mut cfg: RunConfig = serde_json::from_value(value)?;
        let dc = report.dataset.config;
        cfg.windows_s = vec![dc.window.length_s];
        cfg.overlap_frac = dc.window.overlap_frac;
        cfg.combos = vec![dc.combo];
        cfg.task = dc.task;
        cfg.thresholds = dc.thresholds;
        cfg.experiment = report.config;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Whether two reports carry identical metrics, bit for bit. Timings, the
/// job count and the embedded run configuration are ignored.
pub fn same_metrics(a: &RepetitionReport, b: &RepetitionReport) -> Result<bool> {
    let strip = |r: &RepetitionReport| {
        let mut r = r.without_timings();
        r.run_config = None;
        r.config.jobs = 1;
        serde_json::to_string(&r)
    };
    Ok(strip(a)? == strip(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_defaults_parse_back_to_defaults() {
        let text = RunConfig::defaults_toml();
        assert!(text.contains("# required whenever a [synth] table is present\nseed = 0"));
        assert_eq!(
            RunConfig::from_toml_str(&text).unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn synth_table_without_seed_names_the_field() {
        let err = RunConfig::from_toml_str("[synth]\nn_participants = 8\n").unwrap_err();
        assert!(
            matches!(&err, Error::Config(m) if m.contains("`seed`")),
            "{err}"
        );
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "windows_s = []",
            "windows_s = [15.05]",
            "task = \"ternary\"",
            "bogus = 1",
            "[experiment]\nrepetitions = 1",
            "[thresholds]\nmembership = 1.5\nspeaking = 0.3",
        ] {
            let err = RunConfig::from_toml_str(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        }
    }

    #[test]
    fn overrides_merge_with_defaults() {
        let cfg = RunConfig::from_toml_str(
            "task = \"joint4\"\ncombos = [\"fusion\"]\nwindows_s = [10.0, 25.0]\n[experiment]\nrepetitions = 3\n[experiment.train]\nepochs = 7\n",
        )
        .unwrap();
        assert_eq!(cfg.task, Task::Joint4);
        assert_eq!(cfg.combos, vec![InputCombo::Fusion]);
        assert_eq!(cfg.experiment.repetitions, 3);
        assert_eq!(cfg.experiment.train.epochs, 7);
        assert_eq!(cfg.experiment.train.batch_size, 64);
        assert_eq!(
            cfg.dataset_config(25.0, InputCombo::Fusion)
                .unwrap()
                .window
                .frames_per_window(),
            500
        );
    }

    #[test]
    fn missing_session_directory_is_a_data_error() {
        let cfg = RunConfig {
            data: DataConfig {
                sessions: vec![PathBuf::from("/nonexistent/session")],
            },
            ..RunConfig::default()
        };
        assert!(matches!(cfg.sessions(), Err(Error::Data(_))));
    }
}
