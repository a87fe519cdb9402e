//! Metrics, reports, relative confusion matrices, and seed aggregation.

use super::labels::LabelSet;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Evaluation result for one model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub labels: Vec<String>,
    /// Percent correct in [0, 100].
    pub accuracy: f64,
    /// Unweighted mean of per-class F1 in [0, 1]; absent classes count 0.
    pub macro_f1: f64,
    /// `confusion[gold][predicted]` counts, label order as in `labels`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn total(&self) -> usize {
        self.confusion.iter().map(|r| r.iter().sum::<usize>()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Build a report from parallel gold/prediction label indices.
pub fn evaluate_predictions(
    labels: &LabelSet,
    gold: &[usize],
    predicted: &[usize],
) -> Result<EvalReport> {
    if gold.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    if gold.len() != predicted.len() {
        return Err(Error::InvalidInput(format!(
            "{} gold vs {} predictions",
            gold.len(),
            predicted.len()
        )));
    }
    let k = labels.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&g, &p) in gold.iter().zip(predicted) {
        if g >= k || p >= k {
            return Err(Error::InvalidInput(format!("label index out of range: {g}, {p}")));
        }
        confusion[g][p] += 1;
    }
    let (accuracy, macro_f1) = metrics_from_confusion(&confusion);
    Ok(EvalReport {
        task: labels.task.clone(),
        labels: labels.markers.clone(),
        accuracy,
        macro_f1,
        confusion,
    })
}

/// `(accuracy %, macro F1)` from a gold × predicted count matrix. A class
/// absent from both gold and predictions has F1 = 0 and still averages.
pub fn metrics_from_confusion(confusion: &[Vec<usize>]) -> (f64, f64) {
    let k = confusion.len();
    let total: usize = confusion.iter().map(|r| r.iter().sum::<usize>()).sum();
    let trace: usize = (0..k).map(|i| confusion[i][i]).sum();
    let accuracy = if total == 0 { 0.0 } else { 100.0 * trace as f64 / total as f64 };
    let mut f1_sum = 0.0;
    for c in 0..k {
        let tp = confusion[c][c] as f64;
        let gold_c: f64 = confusion[c].iter().sum::<usize>() as f64;
        let pred_c: f64 = (0..k).map(|g| confusion[g][c]).sum::<usize>() as f64;
        let f1 = if gold_c + pred_c == 0.0 { 0.0 } else { 2.0 * tp / (gold_c + pred_c) };
        f1_sum += f1;
    }
    (accuracy, f1_sum / k.max(1) as f64)
}

/// Signed class-wise prediction difference `CM_A − CM_B` (by convention A =
/// gesture model, B = text-only). Rows sum to zero whenever both reports
/// score the same test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeConfusion {
    pub labels: Vec<String>,
    /// Gold-class frequencies (shared by both reports).
    pub gold_counts: Vec<usize>,
    pub matrix: Vec<Vec<i64>>,
}

pub fn relative_confusion(a: &EvalReport, b: &EvalReport) -> Result<RelativeConfusion> {
    if a.labels != b.labels {
        return Err(Error::InvalidInput("reports have different label sets".into()));
    }
    let k = a.labels.len();
    let matrix: Vec<Vec<i64>> = (0..k)
        .map(|g| (0..k).map(|p| a.confusion[g][p] as i64 - b.confusion[g][p] as i64).collect())
        .collect();
    let gold_counts: Vec<usize> = a.confusion.iter().map(|r| r.iter().sum()).collect();
    Ok(RelativeConfusion { labels: a.labels.clone(), gold_counts, matrix })
}

impl RelativeConfusion {
    /// Row order for rendering: descending gold-class frequency, ties by
    /// label order.
    pub fn row_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.labels.len()).collect();
        order.sort_by(|&a, &b| self.gold_counts[b].cmp(&self.gold_counts[a]).then(a.cmp(&b)));
        order
    }

    /// CSV with a header row, rows ordered by descending gold frequency.
    pub fn to_csv(&self) -> String {
        let order = self.row_order();
        let mut out = String::from("gold\\predicted");
        for &c in &order {
            out.push(',');
            out.push_str(&self.labels[c]);
        }
        out.push('\n');
        for &r in &order {
            out.push_str(&self.labels[r]);
            for &c in &order {
                out.push_str(&format!(",{}", self.matrix[r][c]));
            }
            out.push('\n');
        }
        out
    }

    /// Diverging-color SVG heatmap (red = more by B / fewer by A, blue =
    /// more by A), same row order as the CSV.
    pub fn to_svg(&self) -> String {
        let order = self.row_order();
        let k = order.len();
        let cell = 28usize;
        let margin = 110usize;
        let w = margin + k * cell + 20;
        let h = margin + k * cell + 20;
        let max_abs = self
            .matrix
            .iter()
            .flatten()
            .map(|v| v.abs())
            .max()
            .unwrap_or(0)
            .max(1) as f64;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
             font-family=\"monospace\" font-size=\"10\">\n"
        );
        for (ri, &r) in order.iter().enumerate() {
            let y = margin + ri * cell;
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
                margin - 6,
                y + cell / 2 + 3,
                xml_escape(&self.labels[r])
            ));
            for (ci, &c) in order.iter().enumerate() {
                let x = margin + ci * cell;
                let v = self.matrix[r][c] as f64 / max_abs;
                // Diverging palette: negative -> red, positive -> blue.
                let (rr, gg, bb) = if v >= 0.0 {
                    let t = v;
                    (
                        (255.0 * (1.0 - t)) as u8,
                        (255.0 * (1.0 - t * 0.6)) as u8,
                        255u8,
                    )
                } else {
                    let t = -v;
                    (
                        255u8,
                        (255.0 * (1.0 - t * 0.6)) as u8,
                        (255.0 * (1.0 - t)) as u8,
                    )
                };
                svg.push_str(&format!(
                    "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" \
                     fill=\"rgb({rr},{gg},{bb})\" stroke=\"#ccc\"/>\n"
                ));
                svg.push_str(&format!(
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                    x + cell / 2,
                    y + cell / 2 + 3,
                    self.matrix[r][c]
                ));
            }
        }
        for (ci, &c) in order.iter().enumerate() {
            let x = margin + ci * cell + cell / 2;
            svg.push_str(&format!(
                "<text x=\"{x}\" y=\"{}\" text-anchor=\"end\" \
                 transform=\"rotate(-60 {x} {})\">{}</text>\n",
                margin - 6,
                margin - 6,
                xml_escape(&self.labels[c])
            ));
        }
        svg.push_str("</svg>\n");
        svg
    }

    pub fn save(&self, csv_path: &Path, svg_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv())?;
        std::fs::write(svg_path, self.to_svg())?;
        Ok(())
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Mean ± sample standard deviation (n − 1) over per-seed metric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: Vec<u64>,
    pub accuracy_per_seed: Vec<f64>,
    pub f1_per_seed: Vec<f64>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

pub fn aggregate(seeds: &[u64], reports: &[EvalReport]) -> Result<Aggregate> {
    if seeds.len() != reports.len() || reports.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} seeds vs {} reports",
            seeds.len(),
            reports.len()
        )));
    }
    let acc: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    let f1: Vec<f64> = reports.iter().map(|r| r.macro_f1).collect();
    let (am, astd) = mean_std(&acc);
    let (fm, fstd) = mean_std(&f1);
    Ok(Aggregate {
        seeds: seeds.to_vec(),
        accuracy_per_seed: acc,
        f1_per_seed: f1,
        accuracy_mean: am,
        accuracy_std: astd,
        f1_mean: fm,
        f1_std: fstd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels2() -> LabelSet {
        LabelSet::new("t", vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn all_correct_is_100_percent_f1_one() {
        let r = evaluate_predictions(&labels2(), &[0, 1, 0], &[0, 1, 0]).unwrap();
        assert_eq!(r.accuracy, 100.0);
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.confusion, vec![vec![2, 0], vec![0, 1]]);
    }

    #[test]
    fn all_a_predictions_on_half_a_gold_give_one_third_f1() {
        // Gold half a / half b, predictions all a:
        // accuracy 50, macro F1 = (2/3 + 0) / 2 = 1/3.
        let r = evaluate_predictions(&labels2(), &[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap();
        assert_eq!(r.accuracy, 50.0);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_match_confusion_recomputation() {
        let labels = LabelSet::new("t", vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let gold = [0, 0, 1, 2, 2, 2, 1, 0];
        let pred = [0, 1, 1, 2, 0, 2, 1, 0];
        let r = evaluate_predictions(&labels, &gold, &pred).unwrap();
        let (acc, f1) = metrics_from_confusion(&r.confusion);
        assert_eq!(acc, r.accuracy);
        assert_eq!(f1, r.macro_f1);
        // Row sums are the gold class counts; trace/total = accuracy/100.
        for (c, row) in r.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), gold.iter().filter(|&&g| g == c).count());
        }
        let trace: usize = (0..3).map(|i| r.confusion[i][i]).sum();
        assert_eq!(trace as f64 / r.total() as f64, r.accuracy / 100.0);
    }

    #[test]
    fn identical_reports_give_zero_relative_matrix() {
        let r = evaluate_predictions(&labels2(), &[0, 1], &[1, 0]).unwrap();
        let rel = relative_confusion(&r, &r).unwrap();
        assert!(rel.matrix.iter().flatten().all(|&v| v == 0));
    }

    #[test]
    fn relative_rows_sum_to_zero_on_shared_test_sets() {
        let gold = [0, 0, 1, 1];
        let a = evaluate_predictions(&labels2(), &gold, &[0, 0, 1, 0]).unwrap();
        let b = evaluate_predictions(&labels2(), &gold, &[0, 1, 1, 1]).unwrap();
        let rel = relative_confusion(&a, &b).unwrap();
        for row in &rel.matrix {
            assert_eq!(row.iter().sum::<i64>(), 0);
        }
    }

    #[test]
    fn hand_computed_relative_entry() {
        // A: gold a -> pred a twice. B: gold a -> a once, b once.
        let a = evaluate_predictions(&labels2(), &[0, 0], &[0, 0]).unwrap();
        let b = evaluate_predictions(&labels2(), &[0, 0], &[0, 1]).unwrap();
        let rel = relative_confusion(&a, &b).unwrap();
        assert_eq!(rel.matrix[0], vec![1, -1]);
    }

    #[test]
    fn csv_orders_rows_by_descending_gold_frequency() {
        let labels = LabelSet::new("t", vec!["rare".into(), "common".into()]).unwrap();
        let r1 = evaluate_predictions(&labels, &[1, 1, 1, 0], &[1, 1, 0, 0]).unwrap();
        let rel = relative_confusion(&r1, &r1).unwrap();
        let csv = rel.to_csv();
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("gold\\predicted,common,rare"));
        assert!(lines.next().unwrap().starts_with("common,"));
        assert!(csv.contains('\n'));
        let svg = rel.to_svg();
        assert!(svg.starts_with("<svg") && svg.contains("</svg>"));
    }

    #[test]
    fn label_mismatch_errors() {
        let a = evaluate_predictions(&labels2(), &[0], &[0]).unwrap();
        let other = LabelSet::new("t", vec!["x".into(), "y".into()]).unwrap();
        let b = evaluate_predictions(&other, &[0], &[0]).unwrap();
        assert!(relative_confusion(&a, &b).is_err());
    }

    #[test]
    fn aggregation_matches_hand_computation() {
        let labels = labels2();
        let mk = |acc_pairs: &[(usize, usize)]| {
            let gold: Vec<usize> = acc_pairs.iter().map(|&(g, _)| g).collect();
            let pred: Vec<usize> = acc_pairs.iter().map(|&(_, p)| p).collect();
            evaluate_predictions(&labels, &gold, &pred).unwrap()
        };
        let r1 = mk(&[(0, 0), (1, 1)]); // 100%
        let r2 = mk(&[(0, 0), (1, 0)]); // 50%
        let agg = aggregate(&[1, 2], &[r1, r2]).unwrap();
        assert_eq!(agg.accuracy_mean, 75.0);
        // Sample std with n−1: sqrt(((100−75)² + (50−75)²) / 1) = 35.355…
        assert!((agg.accuracy_std - (1250.0f64).sqrt()).abs() < 1e-9);
        // Identical metric across seeds -> std 0.
        let r3 = mk(&[(0, 0), (1, 1)]);
        let r4 = mk(&[(0, 0), (1, 1)]);
        let agg2 = aggregate(&[1, 2], &[r3, r4]).unwrap();
        assert_eq!(agg2.accuracy_std, 0.0);
    }

    #[test]
    fn empty_test_set_errors() {
        assert!(evaluate_predictions(&labels2(), &[], &[]).is_err());
    }
}
