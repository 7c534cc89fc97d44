use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Predictor;
use crate::error::{Error, Result};
use crate::features::{FeaturizedTrace, TARGET_NAMES};
use crate::neural::loss::{bce, smape};

/// Masked losses for one (game, session index) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLoss {
    pub game_id: String,
    /// 1-based position of the session within its trace.
    pub session_index: usize,
    /// Per-target mean loss; `None` when every entry in the cell is masked.
    pub losses: [Option<f64>; 4],
    pub counts: [usize; 4],
}

/// Test losses: BCE for ch, SMAPE for st, ss and ab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: [f64; 4],
    pub counts: [usize; 4],
    pub cells: Vec<CellLoss>,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    sums: [f64; 4],
    counts: [usize; 4],
}

impl Acc {
    fn add(&mut self, other: &Acc) {
        for k in 0..4 {
            self.sums[k] += other.sums[k];
            self.counts[k] += other.counts[k];
        }
    }
}

/// Scores `model` on `test`.
pub fn evaluate<P: Predictor + ?Sized>(model: &P, test: &[FeaturizedTrace]) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Empty("test split has no traces".into()));
    }
    let per_trace: Vec<Vec<Acc>> = test
        .par_iter()
        .map(|tr| {
            let preds = model.predict(tr)?;
            Ok(preds
                .iter()
                .enumerate()
                .map(|(t, p)| {
                    let mut a = Acc::default();
                    for k in 0..4 {
                        if tr.target_valid(t, k) {
                            let y = tr.targets[t][k];
                            a.sums[k] += if k == 0 { bce(p[k], y) } else { smape(p[k], y) };
                            a.counts[k] += 1;
                        }
                    }
                    a
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut overall = Acc::default();
    let mut cells: BTreeMap<(&str, usize), Acc> = BTreeMap::new();
    for (tr, accs) in test.iter().zip(&per_trace) {
        for (t, a) in accs.iter().enumerate() {
            overall.add(a);
            cells.entry((tr.game_id.as_str(), t + 1)).or_default().add(a);
        }
    }
    let mean = |a: &Acc, k: usize| (a.counts[k] > 0).then(|| a.sums[k] / a.counts[k] as f64);
    Ok(EvalReport {
        overall: std::array::from_fn(|k| mean(&overall, k).unwrap_or(f64::NAN)),
        counts: overall.counts,
        cells: cells
            .into_iter()
            .map(|((game, idx), a)| CellLoss {
                game_id: game.to_string(),
                session_index: idx,
                losses: std::array::from_fn(|k| mean(&a, k)),
                counts: a.counts,
            })
            .collect(),
    })
}

/// Long-format CSV: `scope,game_id,session_index,target,loss,count`, with the
/// overall rows first (`scope = overall`, empty game and index).
pub fn write_eval_csv<W: Write>(report: &EvalReport, out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scope", "game_id", "session_index", "target", "loss", "count"])?;
    for k in 0..4 {
        w.write_record([
            "overall",
            "",
            "",
            TARGET_NAMES[k],
            &report.overall[k].to_string(),
            &report.counts[k].to_string(),
        ])?;
    }
    for c in &report.cells {
        for k in 0..4 {
            if let Some(loss) = c.losses[k] {
                w.write_record([
                    "cell",
                    &c.game_id,
                    &c.session_index.to_string(),
                    TARGET_NAMES[k],
                    &loss.to_string(),
                    &c.counts[k].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::test_support::small_split;
    use crate::models::StepPrediction;

    struct Oracle;
    impl Predictor for Oracle {
        fn predict(&self, trace: &FeaturizedTrace) -> Result<Vec<StepPrediction>> {
            Ok(trace.targets.clone())
        }
    }

    struct Constant(StepPrediction);
    impl Predictor for Constant {
        fn predict(&self, trace: &FeaturizedTrace) -> Result<Vec<StepPrediction>> {
            Ok(vec![self.0; trace.len()])
        }
    }

    #[test]
    fn perfect_predictor_has_zero_smape() {
        let split = small_split(20, 1);
        let report = evaluate(&Oracle, &split.test).unwrap();
        assert_eq!(&report.overall[1..], &[0.0, 0.0, 0.0]);
        for c in &report.cells {
            for k in 1..4 {
                assert!(c.losses[k].is_none_or(|v| v == 0.0));
            }
        }
    }

    #[test]
    fn half_prediction_on_uncertain_labels_is_ln2() {
        let mut split = small_split(10, 2);
        for t in &mut split.test {
            t.targets.iter_mut().for_each(|y| y[0] = 0.5);
        }
        let report = evaluate(&Constant([0.5, 0.3, 0.3, 0.3]), &split.test).unwrap();
        assert!((report.overall[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cells_partition_the_overall_counts() {
        let split = small_split(20, 3);
        let report = evaluate(&Constant([0.3, 0.2, 0.5, 0.1]), &split.test).unwrap();
        for k in 0..4 {
            let total: usize = report.cells.iter().map(|c| c.counts[k]).sum();
            assert_eq!(total, report.counts[k]);
            let weighted: f64 = report
                .cells
                .iter()
                .filter_map(|c| c.losses[k].map(|l| l * c.counts[k] as f64))
                .sum();
            assert!((weighted / total as f64 - report.overall[k]).abs() < 1e-12);
        }
        assert!(report.cells.iter().all(|c| c.session_index >= 1));
        // SMAPE is bounded; BCE is only finite under clipping
        assert!(report.overall[1..]
            .iter()
            .chain(report.cells.iter().flat_map(|c| c.losses[1..].iter().flatten()))
            .all(|v| (0.0..=1.0).contains(v)));
        assert!(report.overall[0].is_finite());
    }

    #[test]
    fn empty_test_split_is_an_error() {
        assert!(evaluate(&Oracle, &[]).is_err());
    }

    #[test]
    fn csv_has_overall_rows_first() {
        let split = small_split(10, 4);
        let report = evaluate(&Constant([0.4, 0.2, 0.5, 0.1]), &split.test).unwrap();
        let mut buf = Vec::new();
        write_eval_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "scope,game_id,session_index,target,loss,count");
        assert!(lines[1].starts_with("overall,,,ch,"));
        assert!(lines[5].starts_with("cell,"));
    }
}
