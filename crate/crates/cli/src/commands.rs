use std::path::{Path, PathBuf};
use std::time::Instant;

use fformation::config::{same_metrics, RunConfig};
use fformation::experiment::{predict, RepetitionReport};
use fformation::metrics::{read_predictions, summarize, write_predictions, PredictionRow};
use fformation::nn::gradcheck::{gradient_suite, SUITE_TOLERANCE};
use fformation::nn::Checkpoint;
use fformation::parallel::Execution;
use fformation::sampling::{Dataset, InputCombo, Task};
use fformation::synth::generate;
use log::{info, warn};
use serde_json::json;

use crate::table::{self, Cell};
use crate::{CmdResult, Failure, EXIT_CONFIG, EXIT_RUN};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SESSION_DIR: &str = "session";

pub enum DataArg {
    File(PathBuf),
    Build(InputCombo, f64),
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::from(fformation::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| io_failure(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| io_failure(path, e))
}

/// `gen` only runs from an explicit `[synth]` table with a seed.
pub fn require_synth_seed(path: &Path) -> CmdResult {
    let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display()))
    })?;
    match table.get("synth") {
        None => Err(Failure::new(
            EXIT_CONFIG,
            format!("{}: missing [synth] table", path.display()),
        )),
        Some(s) if s.get("seed").is_none() => Err(Failure::new(
            EXIT_CONFIG,
            format!("{}: [synth]: missing field `seed`", path.display()),
        )),
        Some(_) => Ok(()),
    }
}

pub fn cell_name(task: Task, window_s: f64, combo: InputCombo) -> String {
    let task = match task {
        Task::Binary => "binary",
        Task::Joint4 => "joint4",
    };
    format!("{task}_w{window_s}_{}", combo.name())
}

pub fn gen(cfg: &RunConfig) -> CmdResult {
    let synth = generate(&cfg.synth)?;
    let session_dir = cfg.out.join(SESSION_DIR);
    synth.export(&session_dir)?;

    let sessions = [synth.session];
    let class_names = cfg.task.class_names();
    let mut preview = Vec::new();
    let combos = if cfg.export_datasets {
        &cfg.combos[..]
    } else {
        &cfg.combos[..1]
    };
    for &w in &cfg.windows_s {
        for &combo in combos {
            let ds = cfg.build(&sessions, w, combo, Execution::parallel(true))?;
            if cfg.export_datasets {
                let dir = cfg.out.join("datasets");
                create_dir(&dir)?;
                ds.save(&dir.join(format!("{}.ffds", cell_name(cfg.task, w, combo))))?;
            }
            if combo == cfg.combos[0] {
                preview.push(json!({
                    "window_s": w,
                    "samples": ds.samples.len(),
                    "pairs": ds.pairs().len(),
                    "skipped": ds.skipped,
                    "label_counts": ds.label_counts,
                }));
            }
        }
    }
    let segments = &synth.latent.segments;
    let groups_formed: usize = segments.iter().map(|s| s.groups.len()).sum();
    let manifest = json!({
        "format": "fformation-synth/1",
        "session_dir": SESSION_DIR,
        "participants": sessions[0].participants,
        "duration_s": sessions[0].duration_s,
        "arrangements": segments.len(),
        "groups_formed": groups_formed,
        "task": cfg.task,
        "class_names": class_names,
        "class_balance": preview,
        "synth": cfg.synth,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(fformation::Error::from)?;
    write_file(&cfg.out.join(MANIFEST_FILE), text)?;

    println!(
        "generated {} participants, {:.0} s, {} arrangements, {} groups formed -> {}",
        sessions[0].participants.len(),
        sessions[0].duration_s,
        segments.len(),
        groups_formed,
        session_dir.display()
    );
    for p in &preview {
        let counts: Vec<String> = class_names
            .iter()
            .zip(p["label_counts"].as_array().into_iter().flatten())
            .map(|(n, c)| format!("{n} {c}"))
            .collect();
        println!(
            "  window {} s: {} samples ({})",
            p["window_s"],
            p["samples"],
            counts.join(", ")
        );
    }
    Ok(())
}

fn tagged_predictions(report: &RepetitionReport) -> Vec<PredictionRow> {
    report
        .repetitions
        .iter()
        .flat_map(|r| {
            r.predictions.iter().map(move |p| PredictionRow {
                sample_id: format!("r{}/{}", r.index, p.sample_id),
                ..p.clone()
            })
        })
        .collect()
}

pub fn run(cfg: &RunConfig) -> CmdResult {
    let dirs = ["reports", "predictions", "checkpoints"].map(|d| cfg.out.join(d));
    for d in &dirs {
        create_dir(d)?;
    }
    let [reports_dir, predictions_dir, checkpoints_dir] = dirs;
    write_file(&cfg.out.join("run_config.toml"), cfg.to_toml())?;

    let sessions = cfg.sessions()?;
    let mut cells = Vec::new();
    let mut failed = 0;
    for &w in &cfg.windows_s {
        for &combo in &cfg.combos {
            let name = cell_name(cfg.task, w, combo);
            info!("cell {name}: {} repetitions", cfg.experiment.repetitions);
            let (dataset, report) = cfg.run_cell(&sessions, w, combo)?;
            if cfg.export_datasets {
                let dir = cfg.out.join("datasets");
                create_dir(&dir)?;
                dataset.save(&dir.join(format!("{name}.ffds")))?;
            }
            report.save(&reports_dir.join(format!("{name}.json")))?;
            let rows = tagged_predictions(&report);
            if !rows.is_empty() {
                write_predictions(&predictions_dir.join(format!("{name}.csv")), &rows)?;
            }
            for rep in &report.repetitions {
                if let Some(params) = &rep.params {
                    let ck =
                        Checkpoint::new(params, None, cfg.experiment.train.precision, rep.seed);
                    ck.save(&checkpoints_dir.join(format!("{name}_r{:02}.json", rep.index)))?;
                }
            }
            failed += report.failed.len();
            cells.push(Cell::of(w, combo, &report));
        }
    }
    let summary = table::render(cfg.task, &cells);
    print!("{summary}");
    write_file(&cfg.out.join("summary.txt"), &summary)?;
    write_file(&cfg.out.join("summary.csv"), table::csv(&cells))?;
    if failed > 0 {
        return Err(Failure::new(
            EXIT_RUN,
            format!("{failed} repetition(s) failed; affected reports are flagged partial"),
        ));
    }
    Ok(())
}

pub fn replay(path: &Path, jobs: Option<usize>) -> CmdResult {
    let original = RepetitionReport::load(path)?;
    let mut cfg = RunConfig::from_report(&original)?;
    if let Some(j) = jobs {
        cfg.experiment.jobs = j;
    }
    if !cfg.experiment.strict_determinism {
        warn!("the report was produced without strict determinism; metrics may differ in the last bits");
    }
    let sessions = cfg.sessions()?;
    let (_, report) = cfg.run_cell(&sessions, cfg.windows_s[0], cfg.combos[0])?;
    if same_metrics(&original, &report)? {
        println!(
            "reproduced {} ({} repetitions, seeds {:?})",
            path.display(),
            report.repetitions.len(),
            report.seeds
        );
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_RUN,
            format!("re-run metrics differ from {}", path.display()),
        ))
    }
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, source: DataArg) -> CmdResult {
    let ck = Checkpoint::load(checkpoint)?;
    let dataset = match source {
        DataArg::File(p) => Dataset::load(&p)?,
        DataArg::Build(combo, w) => {
            cfg.build(&cfg.sessions()?, w, combo, Execution::parallel(true))?
        }
    };
    let params = ck.params::<f64>()?;
    let idx: Vec<usize> = (0..dataset.samples.len()).collect();
    let rows = predict(
        &params,
        &dataset,
        &idx,
        cfg.experiment.train.batch_size,
        Execution::parallel(true),
    )?;
    create_dir(&cfg.out)?;
    write_predictions(&cfg.out.join("predictions.csv"), &rows)?;
    let summary = summarize(&rows, dataset.n_classes())?;
    let text = serde_json::to_string_pretty(&summary).map_err(fformation::Error::from)?;
    write_file(&cfg.out.join("metrics.json"), text)?;
    print!("{}", table::metrics(&summary));
    Ok(())
}

pub fn metrics(path: &Path, out: Option<&Path>) -> CmdResult {
    let rows = read_predictions(path)?;
    let n_classes = rows.first().map_or(0, |r| r.scores.len());
    let summary = summarize(&rows, n_classes)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        let text = serde_json::to_string_pretty(&summary).map_err(fformation::Error::from)?;
        write_file(&dir.join("metrics.json"), text)?;
    }
    print!("{}", table::metrics(&summary));
    Ok(())
}

pub fn check_gradients(seeds: u64) -> CmdResult {
    let start = Instant::now();
    let cases = gradient_suite(seeds)?;
    let mut worst = 0.0f64;
    for c in &cases {
        println!(
            "seed {:>3}  classes {}  params {:>4}  max rel error {:.3e}  ({})",
            c.seed, c.n_classes, c.report.n_params, c.report.max_rel_error, c.report.worst_group
        );
        worst = worst.max(c.report.max_rel_error);
    }
    println!(
        "max relative error {worst:.3e} over {} models in {:.2} s",
        cases.len(),
        start.elapsed().as_secs_f64()
    );
    if worst < SUITE_TOLERANCE {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_RUN,
            format!("gradient check failed: {worst:.3e} >= {SUITE_TOLERANCE:e}"),
        ))
    }
}
