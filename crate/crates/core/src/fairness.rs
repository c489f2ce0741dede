//! Group fairness measurements for binary predictions and a binary protected
//! attribute: confusion matrices per group, parity and odds gaps,
//! significance tests, and plug-in entropies.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{check_len, normal_cdf};

/// Scores strictly above this are positive predictions.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl GroupCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.fp + self.tn
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn predicted_positive(&self) -> u64 {
        self.tp + self.fp
    }
}

/// Confusion counts indexed by protected group `0` and `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupedConfusion {
    pub groups: [GroupCounts; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub fpr: f64,
    pub fnr: f64,
}

fn binary(values: &[f64], what: &str) -> Result<()> {
    if let Some(v) = values.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument(format!("{what} must be 0 or 1, got {v}")));
    }
    Ok(())
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} must lie in (0, 1)"
        )));
    }
    Ok(())
}

pub fn confusion_by_group(
    y_hat: &[f64],
    y: &[f64],
    z: &[f64],
    threshold: f64,
) -> Result<GroupedConfusion> {
    check_len(y_hat.len(), y.len())?;
    check_len(y_hat.len(), z.len())?;
    check_threshold(threshold)?;
    binary(y, "label")?;
    binary(z, "protected value")?;
    let mut c = GroupedConfusion::default();
    for ((&p, &yi), &zi) in y_hat.iter().zip(y).zip(z) {
        let g = &mut c.groups[zi as usize];
        match (p > threshold, yi == 1.0) {
            (true, true) => g.tp += 1,
            (true, false) => g.fp += 1,
            (false, false) => g.tn += 1,
            (false, true) => g.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn rates(c: &GroupedConfusion) -> Result<[GroupRates; 2]> {
    let mut out = [GroupRates { fpr: 0.0, fnr: 0.0 }; 2];
    for (group, (counts, r)) in c.groups.iter().zip(out.iter_mut()).enumerate() {
        if counts.negatives() == 0 {
            return Err(Error::EmptyDenominator { group, rate: "FPR" });
        }
        if counts.positives() == 0 {
            return Err(Error::EmptyDenominator { group, rate: "FNR" });
        }
        r.fpr = counts.fp as f64 / counts.negatives() as f64;
        r.fnr = counts.fn_ as f64 / counts.positives() as f64;
    }
    Ok(out)
}

/// `|P(pred = 1 | z = 0) - P(pred = 1 | z = 1)|`
pub fn demographic_parity_gap(y_hat: &[f64], z: &[f64], threshold: f64) -> Result<f64> {
    check_len(y_hat.len(), z.len())?;
    check_threshold(threshold)?;
    binary(z, "protected value")?;
    let mut pos = [0u64; 2];
    let mut n = [0u64; 2];
    for (&p, &zi) in y_hat.iter().zip(z) {
        let g = zi as usize;
        n[g] += 1;
        pos[g] += (p > threshold) as u64;
    }
    for (g, &count) in n.iter().enumerate() {
        if count == 0 {
            return Err(Error::EmptyCell(format!("z={g}")));
        }
    }
    Ok((pos[0] as f64 / n[0] as f64 - pos[1] as f64 / n[1] as f64).abs())
}

/// `(|FPR₀ - FPR₁|, |TPR₀ - TPR₁|)`
pub fn equalized_odds_gaps(y_hat: &[f64], y: &[f64], z: &[f64], threshold: f64) -> Result<(f64, f64)> {
    let c = confusion_by_group(y_hat, y, z, threshold)?;
    for (g, counts) in c.groups.iter().enumerate() {
        if counts.negatives() == 0 {
            return Err(Error::EmptyCell(format!("y=0, z={g}")));
        }
        if counts.positives() == 0 {
            return Err(Error::EmptyCell(format!("y=1, z={g}")));
        }
    }
    let r = rates(&c)?;
    Ok(((r[0].fpr - r[1].fpr).abs(), (r[0].fnr - r[1].fnr).abs()))
}

/// Two-tailed p-value of the pooled two-proportion z-test for `k1/n1` vs
/// `k2/n2`.
pub fn two_proportion_ztest(k1: u64, n1: u64, k2: u64, n2: u64) -> Result<f64> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidArgument("z-test needs nonzero sample sizes".into()));
    }
    if k1 > n1 || k2 > n2 {
        return Err(Error::InvalidArgument(format!(
            "successes exceed trials ({k1}/{n1}, {k2}/{n2})"
        )));
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let pooled = (k1 + k2) as f64 / (n1f + n2f);
    let var = pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f);
    if var <= 0.0 {
        return Ok(1.0);
    }
    let z = (k1 as f64 / n1f - k2 as f64 / n2f) / var.sqrt();
    Ok((2.0 * (1.0 - normal_cdf(z.abs()))).clamp(0.0, 1.0))
}

/// Plug-in entropies in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub h_z: f64,
    pub h_z_given_y: Option<f64>,
}

fn binary_entropy(ones: u64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = ones as f64 / n as f64;
    let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

pub fn empirical_entropy(z: &[f64], y: Option<&[f64]>) -> Result<EntropyEstimate> {
    if z.is_empty() {
        return Err(Error::InvalidArgument("entropy of an empty sample".into()));
    }
    binary(z, "protected value")?;
    let ones = z.iter().filter(|&&v| v == 1.0).count() as u64;
    let n = z.len() as u64;
    let h_z = binary_entropy(ones, n);
    let h_z_given_y = match y {
        None => None,
        Some(y) => {
            check_len(z.len(), y.len())?;
            binary(y, "label")?;
            let mut n_y = [0u64; 2];
            let mut ones_y = [0u64; 2];
            for (&zi, &yi) in z.iter().zip(y) {
                n_y[yi as usize] += 1;
                ones_y[yi as usize] += (zi == 1.0) as u64;
            }
            Some(
                (0..2)
                    .map(|k| n_y[k] as f64 / n as f64 * binary_entropy(ones_y[k], n_y[k]))
                    .sum(),
            )
        }
    };
    Ok(EntropyEstimate { h_z, h_z_given_y })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub fpr: f64,
    pub fnr: f64,
    pub positive_rate: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Everything measured about one set of test predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub accuracy: f64,
    pub groups: [GroupReport; 2],
    pub dp_gap: f64,
    pub eo_gap_y0: f64,
    pub eo_gap_y1: f64,
    pub p_value_y0: f64,
    pub p_value_y1: f64,
    pub confusion: GroupedConfusion,
}

impl FairnessReport {
    pub fn from_predictions(y_hat: &[f64], y: &[f64], z: &[f64], threshold: f64) -> Result<Self> {
        let confusion = confusion_by_group(y_hat, y, z, threshold)?;
        Self::from_confusion(confusion)
    }

    pub fn from_confusion(confusion: GroupedConfusion) -> Result<Self> {
        let r = rates(&confusion)?;
        let [c0, c1] = confusion.groups;
        let group = |c: &GroupCounts, r: &GroupRates| GroupReport {
            fpr: r.fpr,
            fnr: r.fnr,
            positive_rate: c.predicted_positive() as f64 / c.total() as f64,
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
        };
        let groups = [group(&c0, &r[0]), group(&c1, &r[1])];
        let correct = c0.tp + c0.tn + c1.tp + c1.tn;
        let total = c0.total() + c1.total();
        Ok(FairnessReport {
            accuracy: correct as f64 / total as f64,
            dp_gap: (groups[0].positive_rate - groups[1].positive_rate).abs(),
            eo_gap_y0: (r[0].fpr - r[1].fpr).abs(),
            eo_gap_y1: (r[0].fnr - r[1].fnr).abs(),
            p_value_y0: two_proportion_ztest(c0.fp, c0.negatives(), c1.fp, c1.negatives())?,
            p_value_y1: two_proportion_ztest(c0.tp, c0.positives(), c1.tp, c1.positives())?,
            groups,
            confusion,
        })
    }
}

/// Confusion matrices laid out side by side, one column block per run and
/// one row block per group.
pub fn format_confusion_tables(runs: &[(&str, &GroupedConfusion)], group_names: [&str; 2]) -> String {
    const CELL: usize = 8;
    let block = 3 * (CELL + 3) - 1;
    let mut out = String::new();
    let rule = |out: &mut String| {
        for _ in runs {
            out.push('+');
            out.push_str(&"-".repeat(block));
        }
        out.push_str("+\n");
    };
    rule(&mut out);
    for (title, _) in runs {
        let _ = write!(out, "|{title:^block$}");
    }
    out.push_str("|\n");
    rule(&mut out);
    for (g, name) in group_names.iter().enumerate() {
        for _ in runs {
            let _ = write!(out, "| {name:<CELL$} | {:>CELL$} | {:>CELL$} ", "Pred 0", "Pred 1");
        }
        out.push_str("|\n");
        for (row, label) in ["True 0", "True 1"].iter().enumerate() {
            for (_, c) in runs {
                let counts = &c.groups[g];
                let (p0, p1) = if row == 0 {
                    (counts.tn, counts.fp)
                } else {
                    (counts.fn_, counts.tp)
                };
                let _ = write!(out, "| {label:<CELL$} | {p0:>CELL$} | {p1:>CELL$} ");
            }
            out.push_str("|\n");
        }
        rule(&mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn table3_debiased() -> GroupedConfusion {
        GroupedConfusion {
            groups: [
                GroupCounts {
                    tn: 4518,
                    fp: 313,
                    fn_: 263,
                    tp: 327,
                },
                GroupCounts {
                    tn: 7071,
                    fp: 533,
                    fn_: 1416,
                    tp: 1840,
                },
            ],
        }
    }

    fn table3_baseline() -> GroupedConfusion {
        GroupedConfusion {
            groups: [
                GroupCounts {
                    tn: 4711,
                    fp: 120,
                    fn_: 265,
                    tp: 325,
                },
                GroupCounts {
                    tn: 6907,
                    fp: 697,
                    fn_: 1194,
                    tp: 2062,
                },
            ],
        }
    }

    /// Expands counts into per-example (ŷ, y, z) lists.
    fn expand(c: &GroupedConfusion) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (mut p, mut y, mut z) = (vec![], vec![], vec![]);
        for (g, counts) in c.groups.iter().enumerate() {
            for (n, pred, label) in [
                (counts.tp, 0.9, 1.0),
                (counts.fp, 0.9, 0.0),
                (counts.tn, 0.1, 0.0),
                (counts.fn_, 0.1, 1.0),
            ] {
                for _ in 0..n {
                    p.push(pred);
                    y.push(label);
                    z.push(g as f64);
                }
            }
        }
        (p, y, z)
    }

    #[test]
    fn confusion_perfect_predictor() {
        let y = [0.0, 1.0, 1.0, 0.0];
        let z = [0.0, 0.0, 1.0, 1.0];
        let c = confusion_by_group(&y, &y, &z, 0.5).unwrap();
        for g in c.groups {
            assert_eq!(g.fp + g.fn_, 0);
        }
    }

    #[test]
    fn confusion_threshold_is_strict() {
        let c = confusion_by_group(&[0.5], &[1.0], &[0.0], 0.5).unwrap();
        assert_eq!(c.groups[0].fn_, 1);
        assert!(confusion_by_group(&[0.5], &[1.0, 0.0], &[0.0], 0.5).is_err());
    }

    #[test]
    fn confusion_recovers_table_counts() {
        let c = table3_debiased();
        let (p, y, z) = expand(&c);
        assert_eq!(confusion_by_group(&p, &y, &z, 0.5).unwrap(), c);
        assert_eq!(c.groups[0].total(), 5421);
        assert_eq!(c.groups[1].total(), 10860);
    }

    #[test]
    fn rates_from_table_counts() {
        let r = rates(&table3_debiased()).unwrap();
        assert_abs_diff_eq!(r[0].fpr, 313.0 / 4831.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r[0].fpr, 0.0648, epsilon = 5e-5);
        assert_abs_diff_eq!(r[0].fnr, 0.4458, epsilon = 5e-5);
        assert_abs_diff_eq!(r[1].fpr, 0.0701, epsilon = 5e-5);
        assert_abs_diff_eq!(r[1].fnr, 0.4349, epsilon = 5e-5);
    }

    #[test]
    fn rates_all_negative_predictor() {
        let (_, y, z) = expand(&table3_baseline());
        let p = vec![0.0; y.len()];
        let r = rates(&confusion_by_group(&p, &y, &z, 0.5).unwrap()).unwrap();
        assert_eq!(r[0].fnr, 1.0);
        assert_eq!(r[0].fpr, 0.0);
    }

    #[test]
    fn rates_empty_denominator_names_group() {
        let c = GroupedConfusion {
            groups: [
                GroupCounts {
                    tp: 1,
                    fp: 1,
                    tn: 0,
                    fn_: 0,
                },
                GroupCounts {
                    tp: 0,
                    fp: 1,
                    tn: 1,
                    fn_: 0,
                },
            ],
        };
        match rates(&c) {
            Err(Error::EmptyDenominator { group: 1, rate: "FNR" }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parity_gap_examples() {
        let p = [0.9, 0.2, 0.9, 0.2];
        assert_eq!(demographic_parity_gap(&p, &[0.0, 0.0, 1.0, 1.0], 0.5).unwrap(), 0.0);
        let p = [1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let z = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(demographic_parity_gap(&p, &z, 0.5).unwrap(), 0.25);
        assert!(matches!(
            demographic_parity_gap(&[1.0], &[0.0], 0.5),
            Err(Error::EmptyCell(_))
        ));
    }

    #[test]
    fn odds_gaps_from_tables() {
        let (p, y, z) = expand(&table3_debiased());
        let (g0, g1) = equalized_odds_gaps(&p, &y, &z, 0.5).unwrap();
        assert_abs_diff_eq!(g0, 0.0053, epsilon = 1e-4);
        assert_abs_diff_eq!(g1, 0.0109, epsilon = 1e-4);

        let (p, y, z) = expand(&table3_baseline());
        let (g0, g1) = equalized_odds_gaps(&p, &y, &z, 0.5).unwrap();
        assert_abs_diff_eq!(g0, 0.0669, epsilon = 1e-4);
        assert_abs_diff_eq!(g1, 0.0825, epsilon = 1e-4);
    }

    #[test]
    fn odds_gaps_empty_cell() {
        match equalized_odds_gaps(&[0.9, 0.1, 0.9], &[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0], 0.5) {
            Err(Error::EmptyCell(cell)) => assert_eq!(cell, "y=1, z=1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ztest_examples() {
        assert_abs_diff_eq!(two_proportion_ztest(313, 4831, 533, 7604).unwrap(), 0.25, epsilon = 0.01);
        assert_abs_diff_eq!(two_proportion_ztest(327, 590, 1840, 3256).unwrap(), 0.62, epsilon = 0.01);
        assert_eq!(two_proportion_ztest(5, 10, 50, 100).unwrap(), 1.0);
        assert_eq!(two_proportion_ztest(0, 10, 0, 100).unwrap(), 1.0);
        assert!(two_proportion_ztest(1, 0, 1, 2).is_err());
        assert!(two_proportion_ztest(3, 2, 1, 2).is_err());
    }

    #[test]
    fn entropy_examples() {
        let e = empirical_entropy(&[0.0, 1.0, 0.0, 1.0], None).unwrap();
        assert_abs_diff_eq!(e.h_z, std::f64::consts::LN_2, epsilon = 1e-15);
        assert!(e.h_z_given_y.is_none());

        let z = [0.0, 1.0, 1.0, 0.0, 1.0];
        let e = empirical_entropy(&z, Some(&z)).unwrap();
        assert_eq!(e.h_z_given_y, Some(0.0));

        let e = empirical_entropy(&[1.0, 1.0, 1.0, 0.0], None).unwrap();
        let expected = -0.75 * 0.75f64.ln() - 0.25 * 0.25f64.ln();
        assert_abs_diff_eq!(e.h_z, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(e.h_z, 0.562335, epsilon = 1e-6);
    }

    #[test]
    fn report_from_debiased_table() {
        let r = FairnessReport::from_confusion(table3_debiased()).unwrap();
        assert_abs_diff_eq!(r.accuracy, (4518 + 327 + 7071 + 1840) as f64 / 16281.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.p_value_y0, 0.25, epsilon = 0.01);
        assert_abs_diff_eq!(r.p_value_y1, 0.62, epsilon = 0.01);
        for g in &r.groups {
            assert_abs_diff_eq!(g.fnr, 1.0 - g.tp as f64 / (g.tp + g.fn_) as f64, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(
            r.dp_gap,
            (r.groups[0].positive_rate - r.groups[1].positive_rate).abs(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn confusion_table_golden() {
        let base = table3_baseline();
        let deb = table3_debiased();
        let text = format_confusion_tables(
            &[("Without Debiasing", &base), ("With Debiasing", &deb)],
            ["Female", "Male"],
        );
        let expected = "\
+--------------------------------+--------------------------------+
|       Without Debiasing        |         With Debiasing         |
+--------------------------------+--------------------------------+
| Female   |   Pred 0 |   Pred 1 | Female   |   Pred 0 |   Pred 1 |
| True 0   |     4711 |      120 | True 0   |     4518 |      313 |
| True 1   |      265 |      325 | True 1   |      263 |      327 |
+--------------------------------+--------------------------------+
| Male     |   Pred 0 |   Pred 1 | Male     |   Pred 0 |   Pred 1 |
| True 0   |     6907 |      697 | True 0   |     7071 |      533 |
| True 1   |     1194 |     2062 | True 1   |     1416 |     1840 |
+--------------------------------+--------------------------------+
";
        assert_eq!(text, expected);
    }
}
