use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{roc_auc, ConfusionMatrix, NormalizedConfusion};
use crate::error::{Error, Result};

/// One line of a predictions file: `sample_id,true,pred_class,score_0..score_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub sample_id: String,
    pub true_class: usize,
    pub pred_class: usize,
    pub scores: Vec<f64>,
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let k = rows.first().map_or(0, |r| r.scores.len());
    if rows.iter().any(|r| r.scores.len() != k) {
        return Err(Error::Data(
            "prediction rows have differing score counts".into(),
        ));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["sample_id".to_string(), "true".into(), "pred_class".into()];
    header.extend((0..k).map(|c| format!("score_{c}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        let mut rec = vec![
            r.sample_id.clone(),
            r.true_class.to_string(),
            r.pred_class.to_string(),
        ];
        rec.extend(r.scores.iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(path, row, e.to_string())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    let fixed = ["sample_id", "true", "pred_class"];
    if header.len() < 4 || header.iter().take(3).ne(fixed) {
        return Err(Error::parse(
            path,
            1,
            format!("expected header {},score_0,...", fixed.join(",")),
        ));
    }
    for (c, h) in header.iter().skip(3).enumerate() {
        if h != format!("score_{c}") {
            return Err(Error::parse(
                path,
                1,
                format!("column {} should be score_{c}, found {h:?}", c + 3),
            ));
        }
    }
    let k = header.len() - 3;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let int = |j: usize| -> Result<usize> {
            let v: usize = rec[j]
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, line, format!("bad class index {:?}", &rec[j])))?;
            if v >= k {
                return Err(Error::parse(
                    path,
                    line,
                    format!("class {v} with {k} score columns"),
                ));
            }
            Ok(v)
        };
        let scores = (3..3 + k)
            .map(|j| {
                rec[j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(path, line, format!("bad score {:?}", &rec[j])))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(PredictionRow {
            sample_id: rec[0].to_string(),
            true_class: int(1)?,
            pred_class: int(2)?,
            scores,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub n_samples: usize,
    pub accuracy: f64,
    /// Binary task only: AUC of `score_1` for class 1.
    pub auc: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub normalized: NormalizedConfusion,
}

pub fn summarize(rows: &[PredictionRow], n_classes: usize) -> Result<MetricsSummary> {
    if rows.is_empty() {
        return Err(Error::Metric("no predictions".into()));
    }
    let truth: Vec<usize> = rows.iter().map(|r| r.true_class).collect();
    let preds: Vec<usize> = rows.iter().map(|r| r.pred_class).collect();
    let mut confusion = ConfusionMatrix::new(n_classes);
    confusion.update(&preds, &truth)?;
    let correct = truth.iter().zip(&preds).filter(|(a, b)| a == b).count();
    let auc = if n_classes == 2 {
        let scores: Vec<f64> = rows.iter().map(|r| r.scores[1]).collect();
        let labels: Vec<bool> = truth.iter().map(|&t| t == 1).collect();
        Some(roc_auc(&scores, &labels)?.auc)
    } else {
        None
    };
    Ok(MetricsSummary {
        n_samples: rows.len(),
        accuracy: correct as f64 / rows.len() as f64,
        auc,
        normalized: confusion.normalize(),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<PredictionRow> {
        vec![
            PredictionRow {
                sample_id: "P1-P2/0/3".into(),
                true_class: 1,
                pred_class: 1,
                scores: vec![0.1, 0.9],
            },
            PredictionRow {
                sample_id: "P1-P3/0/3".into(),
                true_class: 0,
                pred_class: 1,
                scores: vec![1.0 / 3.0, 2.0 / 3.0],
            },
            PredictionRow {
                sample_id: "P2-P3/0/3".into(),
                true_class: 0,
                pred_class: 0,
                scores: vec![0.7, 0.3],
            },
        ]
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.csv");
        write_predictions(&p, &rows()).unwrap();
        assert_eq!(read_predictions(&p).unwrap(), rows());
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("sample_id,true,pred_class,score_0,score_1\n"));
    }

    #[test]
    fn summary() {
        let s = summarize(&rows(), 2).unwrap();
        assert_eq!(s.auc, Some(1.0));
        assert!((s.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.confusion.get(0, 1), 1);
    }

    #[test]
    fn malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "id,true,pred,score_0\na,0,0,0.5\n").unwrap();
        assert!(read_predictions(&p).is_err());
        std::fs::write(
            &p,
            "sample_id,true,pred_class,score_0,score_1\na,0,2,0.5,0.5\n",
        )
        .unwrap();
        match read_predictions(&p) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
    }
}
