//! Plain-text summaries. Nothing here depends on wall-clock time, so two
//! strict runs of the same configuration print identical tables.

use std::fmt::Write;

use fformation::experiment::RepetitionReport;
use fformation::metrics::MetricsSummary;
use fformation::sampling::{InputCombo, Task};

pub struct Cell {
    pub window_s: f64,
    pub combo: InputCombo,
    pub completed: usize,
    pub failed: usize,
    /// Mean, sample std and one-sided p-value against chance.
    pub auc: Option<(f64, f64, Option<f64>)>,
    pub class_names: Vec<String>,
    pub normalized: Option<Vec<Vec<f64>>>,
}

impl Cell {
    pub fn of(window_s: f64, combo: InputCombo, report: &RepetitionReport) -> Self {
        Self {
            window_s,
            combo,
            completed: report.repetitions.len() - report.failed.len(),
            failed: report.failed.len(),
            auc: report
                .auc
                .as_ref()
                .map(|a| (a.mean, a.std, a.vs_chance.as_ref().map(|t| t.p_value))),
            class_names: report
                .confusion
                .as_ref()
                .map(|c| c.class_names.clone())
                .unwrap_or_default(),
            normalized: report.confusion.as_ref().map(|c| c.normalized.rows.clone()),
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        self.normalized
            .as_ref()
            .map(|rows| rows.iter().enumerate().map(|(i, r)| r[i]).collect())
    }
}

fn combos_of(cells: &[Cell]) -> Vec<InputCombo> {
    let mut v: Vec<InputCombo> = Vec::new();
    for c in cells {
        if !v.contains(&c.combo) {
            v.push(c.combo);
        }
    }
    v
}

fn windows_of(cells: &[Cell]) -> Vec<f64> {
    let mut v: Vec<f64> = Vec::new();
    for c in cells {
        if !v.contains(&c.window_s) {
            v.push(c.window_s);
        }
    }
    v
}

fn matrix(out: &mut String, names: &[String], rows: &[Vec<f64>]) {
    let width = names.iter().map(String::len).max().unwrap_or(0).max(6);
    let _ = write!(out, "  {:>width$}", "true\\pred");
    for n in names {
        let _ = write!(out, " {n:>width$}");
    }
    out.push('\n');
    for (n, row) in names.iter().zip(rows) {
        let _ = write!(out, "  {n:>width$}");
        for v in row {
            let _ = write!(out, " {v:>width$.3}");
        }
        out.push('\n');
    }
}

/// Window length against input combination: mean AUC for the binary task,
/// normalized confusion diagonals (plus full matrices) for the joint task.
pub fn render(task: Task, cells: &[Cell]) -> String {
    let combos = combos_of(cells);
    let windows = windows_of(cells);
    let find = |w: f64, c: InputCombo| cells.iter().find(|x| x.window_s == w && x.combo == c);
    let mut out = String::new();
    let col = 26;
    match task {
        Task::Binary => out.push_str("mean test AUC ± std (p: one-sided t-test against 0.5)\n"),
        Task::Joint4 => {
            let names = cells
                .first()
                .map(|c| c.class_names.join(", "))
                .unwrap_or_default();
            let _ = writeln!(out, "accumulated normalized confusion diagonal ({names})");
        }
    }
    let _ = write!(out, "{:>8}", "window_s");
    for c in &combos {
        let _ = write!(out, " | {:<col$}", c.name());
    }
    out.push('\n');
    for &w in &windows {
        let _ = write!(out, "{w:>8}");
        for &c in &combos {
            let text = match find(w, c) {
                None => String::new(),
                Some(cell) => {
                    let mut s = match task {
                        Task::Binary => match cell.auc {
                            Some((m, sd, Some(p))) => format!("{m:.3} ± {sd:.3} (p={p:.1e})"),
                            Some((m, sd, None)) => format!("{m:.3} ± {sd:.3}"),
                            None => "-".to_string(),
                        },
                        Task::Joint4 => cell.diagonal().map_or("-".to_string(), |d| {
                            d.iter()
                                .map(|v| format!("{v:.2}"))
                                .collect::<Vec<_>>()
                                .join(" ")
                        }),
                    };
                    if cell.failed > 0 {
                        let _ = write!(s, " [{} failed]", cell.failed);
                    }
                    s
                }
            };
            let _ = write!(out, " | {text:<col$}");
        }
        out.push('\n');
    }
    if task == Task::Joint4 {
        for cell in cells {
            if let Some(rows) = &cell.normalized {
                let _ = writeln!(
                    out,
                    "\nwindow {} s, {} ({} repetitions):",
                    cell.window_s,
                    cell.combo.name(),
                    cell.completed
                );
                matrix(&mut out, &cell.class_names, rows);
            }
        }
    }
    out
}

pub fn csv(cells: &[Cell]) -> String {
    let k = cells
        .iter()
        .filter_map(|c| c.normalized.as_ref())
        .map(Vec::len)
        .max()
        .unwrap_or(0);
    let mut out = String::from("window_s,combo,completed,failed,mean_auc,std_auc,p_vs_chance");
    for i in 0..k {
        let _ = write!(out, ",diag_{i}");
    }
    out.push('\n');
    for c in cells {
        let (m, s, p) = match c.auc {
            Some((m, s, p)) => (
                m.to_string(),
                s.to_string(),
                p.map(|p| p.to_string()).unwrap_or_default(),
            ),
            None => Default::default(),
        };
        let _ = write!(
            out,
            "{},{},{},{},{m},{s},{p}",
            c.window_s,
            c.combo.name(),
            c.completed,
            c.failed
        );
        let diag = c.diagonal().unwrap_or_default();
        for i in 0..k {
            let _ = write!(
                out,
                ",{}",
                diag.get(i).map(|v| v.to_string()).unwrap_or_default()
            );
        }
        out.push('\n');
    }
    out
}

pub fn metrics(m: &MetricsSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "samples  {}", m.n_samples);
    let _ = writeln!(out, "accuracy {:.4}", m.accuracy);
    if let Some(auc) = m.auc {
        let _ = writeln!(out, "auc      {auc:.4}");
    }
    let k = m.normalized.rows.len();
    let names: Vec<String> = (0..k).map(|i| format!("class {i}")).collect();
    out.push_str("row-normalized confusion:\n");
    matrix(&mut out, &names, &m.normalized.rows);
    out.push_str("counts:\n");
    let counts: Vec<Vec<f64>> = m
        .confusion
        .rows()
        .iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    let width = 8;
    for (n, row) in names.iter().zip(counts) {
        let _ = write!(out, "  {n:>width$}");
        for v in row {
            let _ = write!(out, " {v:>width$}");
        }
        out.push('\n');
    }
    out
}
