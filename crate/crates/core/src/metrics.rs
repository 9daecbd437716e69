//! Classification criteria over a confusion matrix: overall accuracy,
//! average (per-class) accuracy, and Cohen's kappa, plus mean/std
//! aggregation across repeated runs and the CSV table layout.

use crate::error::{Error, Result};

/// k x k tally, rows indexed by true class, columns by predicted class.
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    /// Tallies (true, predicted) pairs; every index must lie below `k`.
    pub fn new(truth: &[usize], pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
        if k == 0 {
            return Err(Error::Contract("confusion matrix needs k >= 1".into()));
        }
        if truth.len() != pred.len() {
            return Err(Error::Contract(format!(
                "{} true labels vs {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let mut counts = vec![0u64; k * k];
        for (i, (&t, &p)) in truth.iter().zip(pred).enumerate() {
            if t >= k || p >= k {
                return Err(Error::Contract(format!(
                    "pair {i} has class ({t}, {p}) outside 0..{k}"
                )));
            }
            counts[t * k + p] += 1;
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn count(&self, t: usize, p: usize) -> u64 {
        self.counts[t * self.k + p]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.count(i, i)).sum()
    }

    fn row_sums(&self) -> Vec<u64> {
        self.counts
            .chunks(self.k)
            .map(|row| row.iter().sum())
            .collect()
    }

    fn col_sums(&self) -> Vec<u64> {
        let mut cols = vec![0u64; self.k];
        for row in self.counts.chunks(self.k) {
            for (c, v) in cols.iter_mut().zip(row) {
                *c += v;
            }
        }
        cols
    }

    /// Per-class recall: diagonal over row sum. Errors if any class has no
    /// true samples.
    pub fn per_class_recall(&self) -> Result<Vec<f64>> {
        self.row_sums()
            .iter()
            .enumerate()
            .map(|(i, &row)| {
                if row == 0 {
                    Err(Error::Metric(format!(
                        "class {} has no true samples",
                        i + 1
                    )))
                } else {
                    Ok(self.count(i, i) as f64 / row as f64)
                }
            })
            .collect()
    }
}

/// Overall accuracy: trace over total.
pub fn oa(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Metric("empty confusion matrix".into()));
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Average accuracy: mean per-class recall.
pub fn aa(cm: &ConfusionMatrix) -> Result<f64> {
    let recalls = cm.per_class_recall()?;
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Cohen's kappa: (p_o - p_e) / (1 - p_e) with chance agreement
/// p_e = sum_i row_i * col_i / total^2. When every sample lands in one
/// (true, predicted) cell, p_e degenerates to 1; kappa is then defined as 1
/// for perfect agreement and 0 otherwise.
pub fn kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Metric("empty confusion matrix".into()));
    }
    let po = cm.trace() as f64 / total as f64;
    let cross: u128 = cm
        .row_sums()
        .iter()
        .zip(cm.col_sums())
        .map(|(&r, c)| r as u128 * c as u128)
        .sum();
    let pe = cross as f64 / (total as f64 * total as f64);
    if pe == 1.0 {
        return Ok(if po == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((po - pe) / (1.0 - pe))
}

/// The three criteria plus per-class recall for one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: Vec<f64>,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<MetricsReport> {
        Ok(MetricsReport {
            per_class: cm.per_class_recall()?,
            oa: oa(cm)?,
            aa: aa(cm)?,
            kappa: kappa(cm)?,
        })
    }

    pub fn from_predictions(truth: &[usize], pred: &[usize], k: usize) -> Result<MetricsReport> {
        MetricsReport::from_confusion(&ConfusionMatrix::new(truth, pred, k)?)
    }

    /// Rows in table order: one per class, then OA, AA, kappa.
    fn as_rows(&self) -> Vec<f64> {
        let mut rows = self.per_class.clone();
        rows.extend([self.oa, self.aa, self.kappa]);
        rows
    }
}

/// Mean and population standard deviation of one table cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateCell {
    pub mean: f64,
    pub std: f64,
}

/// Elementwise mean and population std over repeated reports, in table row
/// order (k per-class rows, then OA, AA, kappa).
pub fn aggregate(reports: &[MetricsReport]) -> Result<Vec<AggregateCell>> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Contract("aggregation needs at least one report".into()))?;
    let k = first.per_class.len();
    if reports.iter().any(|r| r.per_class.len() != k) {
        return Err(Error::Contract("reports disagree on class count".into()));
    }
    let table: Vec<Vec<f64>> = reports.iter().map(|r| r.as_rows()).collect();
    let n = table.len() as f64;
    let rows = k + 3;
    let mut out = Vec::with_capacity(rows);
    for row in 0..rows {
        let mean = table.iter().map(|r| r[row]).sum::<f64>() / n;
        let var = table.iter().map(|r| (r[row] - mean).powi(2)).sum::<f64>() / n;
        out.push(AggregateCell {
            mean,
            std: var.sqrt(),
        });
    }
    Ok(out)
}

/// Result table across variants: one column per variant, one row per class
/// followed by OA, AA, and kappa rows, each cell `mean(std)` in percent.
pub struct ResultTable {
    pub variants: Vec<String>,
    /// cells[row][variant], row order as in `aggregate`.
    pub cells: Vec<Vec<AggregateCell>>,
}

impl ResultTable {
    pub fn from_runs(runs: &[(String, Vec<MetricsReport>)]) -> Result<ResultTable> {
        let columns: Vec<Vec<AggregateCell>> = runs
            .iter()
            .map(|(_, reports)| aggregate(reports))
            .collect::<Result<_>>()?;
        let rows = columns
            .first()
            .ok_or_else(|| Error::Contract("table needs at least one variant".into()))?
            .len();
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Contract("variants disagree on class count".into()));
        }
        let cells = (0..rows)
            .map(|row| columns.iter().map(|col| col[row]).collect())
            .collect();
        Ok(ResultTable {
            variants: runs.iter().map(|(name, _)| name.clone()).collect(),
            cells,
        })
    }

    /// CSV with a `row` label column and one column per variant; accuracies
    /// are percentages formatted `mean(std)` to two decimals.
    pub fn csv(&self) -> String {
        let classes = self.cells.len() - 3;
        let mut out = String::from("row");
        for v in &self.variants {
            out.push(',');
            out.push_str(v);
        }
        out.push('\n');
        for (row, cells) in self.cells.iter().enumerate() {
            let label = match row.checked_sub(classes) {
                None => format!("class_{}", row + 1),
                Some(0) => "OA".into(),
                Some(1) => "AA".into(),
                _ => "Kappa".into(),
            };
            out.push_str(&label);
            for cell in cells {
                out.push(',');
                out.push_str(&format!(
                    "{:.2}({:.2})",
                    cell.mean * 100.0,
                    cell.std * 100.0
                ));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn hand_tally_matches() {
        let cm = ConfusionMatrix::new(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(cm.count(0, 0), 1);
        assert_eq!(cm.count(0, 1), 1);
        assert_eq!(cm.count(1, 1), 1);
        assert_eq!(cm.count(1, 0), 0);
        assert_eq!(cm.total(), 3);
    }

    #[test]
    fn identity_predictions_give_a_diagonal() {
        let cm = ConfusionMatrix::new(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(cm.count(t, p), u64::from(t == p));
            }
        }
        assert_eq!(oa(&cm).unwrap(), 1.0);
        assert_eq!(aa(&cm).unwrap(), 1.0);
        assert_eq!(kappa(&cm).unwrap(), 1.0);
    }

    #[test]
    fn empty_and_out_of_range_inputs_are_rejected() {
        let cm = ConfusionMatrix::new(&[], &[], 3).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(matches!(oa(&cm), Err(Error::Metric(_))));
        assert!(matches!(kappa(&cm), Err(Error::Metric(_))));
        assert!(matches!(
            ConfusionMatrix::new(&[0, 3], &[0, 0], 3),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            ConfusionMatrix::new(&[0], &[0, 1], 3),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn missing_true_class_fails_average_accuracy() {
        let cm = ConfusionMatrix::new(&[0, 0], &[0, 2], 3).unwrap();
        assert!(matches!(aa(&cm), Err(Error::Metric(_))));
        // OA and kappa stay defined.
        assert_eq!(oa(&cm).unwrap(), 0.5);
        kappa(&cm).unwrap();
    }

    #[test]
    fn degenerate_single_cell_matrices_follow_the_convention() {
        let same = ConfusionMatrix::new(&[1, 1, 1], &[1, 1, 1], 3).unwrap();
        assert_eq!(kappa(&same).unwrap(), 1.0);
        let crossed = ConfusionMatrix::new(&[0, 0, 0], &[1, 1, 1], 3).unwrap();
        assert_eq!(kappa(&crossed).unwrap(), 0.0);
    }

    /// Independent recount: tally pairs in a plain map, then apply the
    /// definitional formulas to the integer tallies in ascending class
    /// order, exactly as the implementation does.
    fn brute_force(truth: &[usize], pred: &[usize], k: usize) -> (f64, f64, f64) {
        let mut tally = std::collections::HashMap::new();
        for (&t, &p) in truth.iter().zip(pred) {
            *tally.entry((t, p)).or_insert(0u64) += 1;
        }
        let n = truth.len() as f64;
        let mut diag = vec![0u64; k];
        let mut rows = vec![0u64; k];
        let mut cols = vec![0u64; k];
        for (&(t, p), &c) in &tally {
            rows[t] += c;
            cols[p] += c;
            if t == p {
                diag[t] += c;
            }
        }
        let oa = diag.iter().sum::<u64>() as f64 / n;
        let aa = (0..k).map(|i| diag[i] as f64 / rows[i] as f64).sum::<f64>() / k as f64;
        let cross: u128 = (0..k).map(|i| rows[i] as u128 * cols[i] as u128).sum();
        let pe = cross as f64 / (n * n);
        let kap = if pe == 1.0 {
            if oa == 1.0 {
                1.0
            } else {
                0.0
            }
        } else {
            (oa - pe) / (1.0 - pe)
        };
        (oa, aa, kap)
    }

    #[test]
    fn metrics_equal_a_brute_force_recount_exactly() {
        let mut rng = crate::rng::Seeds::new(31).stream("metric-fuzz");
        for _ in 0..100 {
            let k = rng.gen_range(2..8);
            let n = rng.gen_range(k..=1000);
            // i % k with n >= k covers every class, so aa stays defined.
            let mut truth: Vec<usize> = (0..n).map(|i| i % k).collect();
            use rand::seq::SliceRandom;
            truth.shuffle(&mut rng);
            let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let cm = ConfusionMatrix::new(&truth, &pred, k).unwrap();
            let (boa, baa, bkap) = brute_force(&truth, &pred, k);
            assert_eq!(oa(&cm).unwrap(), boa);
            assert_eq!(aa(&cm).unwrap(), baa);
            assert_eq!(kappa(&cm).unwrap(), bkap);
            let o = oa(&cm).unwrap();
            let a = aa(&cm).unwrap();
            let kp = kappa(&cm).unwrap();
            assert!((0.0..=1.0).contains(&o));
            assert!((0.0..=1.0).contains(&a));
            assert!(kp > -1.0 && kp <= 1.0);
        }
    }

    #[test]
    fn random_balanced_predictions_score_near_zero_kappa() {
        let mut rng = crate::rng::Seeds::new(37).stream("kappa-mc");
        let k = 4;
        let n = 100_000;
        let truth: Vec<usize> = (0..n).map(|i| i % k).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let cm = ConfusionMatrix::new(&truth, &pred, k).unwrap();
        let kap = kappa(&cm).unwrap();
        assert!(kap.abs() < 0.02, "kappa {kap} too far from chance level");
    }

    #[test]
    fn relabeling_both_sides_leaves_criteria_unchanged() {
        let mut rng = crate::rng::Seeds::new(41).stream("relabel");
        let k = 5;
        let perm = [3, 0, 4, 1, 2];
        let truth: Vec<usize> = (0..400).map(|i| i % k).collect();
        let pred: Vec<usize> = (0..400).map(|_| rng.gen_range(0..k)).collect();
        let a = ConfusionMatrix::new(&truth, &pred, k).unwrap();
        let tp: Vec<usize> = truth.iter().map(|&t| perm[t]).collect();
        let pp: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
        let b = ConfusionMatrix::new(&tp, &pp, k).unwrap();
        assert!((oa(&a).unwrap() - oa(&b).unwrap()).abs() < 1e-12);
        assert!((aa(&a).unwrap() - aa(&b).unwrap()).abs() < 1e-12);
        assert!((kappa(&a).unwrap() - kappa(&b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn aggregation_hand_case() {
        let r = |oa: f64| MetricsReport {
            per_class: vec![oa],
            oa,
            aa: oa,
            kappa: oa,
        };
        let cells = aggregate(&[r(0.90), r(0.92)]).unwrap();
        assert_eq!(cells.len(), 4);
        for cell in &cells {
            assert!((cell.mean - 0.91).abs() < 1e-15);
            assert!((cell.std - 0.01).abs() < 1e-15);
        }

        let single = aggregate(&[r(0.5)]).unwrap();
        assert!(single.iter().all(|c| c.std == 0.0));
        assert!(matches!(aggregate(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn aggregation_is_permutation_invariant() {
        let reports: Vec<MetricsReport> = (0..5)
            .map(|i| {
                let v = 0.8 + 0.03 * i as f64;
                MetricsReport {
                    per_class: vec![v, 1.0 - v],
                    oa: v,
                    aa: v,
                    kappa: v / 2.0,
                }
            })
            .collect();
        let mut shuffled = reports.clone();
        shuffled.reverse();
        let a = aggregate(&reports).unwrap();
        let b = aggregate(&shuffled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.mean - y.mean).abs() < 1e-12);
            assert!((x.std - y.std).abs() < 1e-12);
        }
    }

    #[test]
    fn table_layout_and_formatting() {
        let report = MetricsReport {
            per_class: vec![0.9322, 0.5],
            oa: 0.9322,
            aa: 0.7161,
            kappa: 0.9217,
        };
        let table = ResultTable::from_runs(&[
            ("cm".into(), vec![report.clone()]),
            ("bam_cm".into(), vec![report]),
        ])
        .unwrap();
        let csv = table.csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 2 + 3);
        assert_eq!(lines[0], "row,cm,bam_cm");
        assert_eq!(lines[1], "class_1,93.22(0.00),93.22(0.00)");
        assert!(lines[3].starts_with("OA,"));
        assert!(lines[5].starts_with("Kappa,"));
    }
}
