//! Discovery decisions from Bayes factors, their utilities and error rates.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{domain, structural, Result};
use crate::inference::Hypothesis;
use crate::io::fmt17;

/// Utility of each (truth, action) outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub true_discovery: f64,
    pub false_discovery: f64,
    pub true_rejection: f64,
    pub false_rejection: f64,
}

impl Default for UtilitySpec {
    /// A false discovery costs five times what a true discovery gains.
    fn default() -> Self {
        Self { true_discovery: 10.0, false_discovery: -50.0, true_rejection: 5.0, false_rejection: -5.0 }
    }
}

impl UtilitySpec {
    pub fn validate(&self) -> Result<()> {
        let all = [self.true_discovery, self.false_discovery, self.true_rejection, self.false_rejection];
        if all.iter().all(|u| u.is_finite()) {
            Ok(())
        } else {
            Err(domain("utilities must be finite"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Discovery,
    NoDiscovery,
    /// The Bayes factor could not be estimated.
    NoDecision,
}

/// Claims a discovery when `bf10 >= threshold`. A missing Bayes factor gives no decision.
pub fn decide(bf10: Option<f64>, threshold: f64) -> Action {
    match bf10 {
        Some(b) if b > 0.0 && !b.is_nan() => {
            if b >= threshold {
                Action::Discovery
            } else {
                Action::NoDiscovery
            }
        }
        _ => Action::NoDecision,
    }
}

/// Counts of decided runs per (truth, action) cell, in the order
/// (H0, discovery), (H0, no discovery), (H1, discovery), (H1, no discovery).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TruthActionCounts {
    pub h0_disc: usize,
    pub h0_nodisc: usize,
    pub h1_disc: usize,
    pub h1_nodisc: usize,
    /// Runs without a decision, excluded from the four cells.
    pub no_decision: usize,
}

impl TruthActionCounts {
    pub fn new(h0_disc: usize, h0_nodisc: usize, h1_disc: usize, h1_nodisc: usize) -> Self {
        Self { h0_disc, h0_nodisc, h1_disc, h1_nodisc, no_decision: 0 }
    }

    pub fn total(&self) -> usize {
        self.h0_disc + self.h0_nodisc + self.h1_disc + self.h1_nodisc
    }

    pub fn discoveries(&self) -> usize {
        self.h0_disc + self.h1_disc
    }
}

pub fn tabulate(truths: &[Hypothesis], actions: &[Action]) -> Result<TruthActionCounts> {
    if truths.len() != actions.len() {
        return Err(structural(format!("{} truths but {} actions", truths.len(), actions.len())));
    }
    let mut c = TruthActionCounts::default();
    for (t, a) in truths.iter().zip(actions) {
        match (t, a) {
            (_, Action::NoDecision) => c.no_decision += 1,
            (Hypothesis::H0, Action::Discovery) => c.h0_disc += 1,
            (Hypothesis::H0, Action::NoDiscovery) => c.h0_nodisc += 1,
            (Hypothesis::H1, Action::Discovery) => c.h1_disc += 1,
            (Hypothesis::H1, Action::NoDiscovery) => c.h1_nodisc += 1,
        }
    }
    Ok(c)
}

/// Mean utility per decided run.
pub fn average_utility(c: &TruthActionCounts, u: &UtilitySpec) -> Result<f64> {
    let n = c.total();
    if n == 0 {
        return Err(structural("average utility is undefined without decided runs"));
    }
    let sum = c.h0_disc as f64 * u.false_discovery
        + c.h0_nodisc as f64 * u.true_rejection
        + c.h1_disc as f64 * u.true_discovery
        + c.h1_nodisc as f64 * u.false_rejection;
    Ok(sum / n as f64)
}

/// 40 log-spaced thresholds from 1 to 100.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..40).map(|i| 10f64.powf(2.0 * i as f64 / 39.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOptimum {
    pub best_threshold: f64,
    pub best_utility: f64,
    /// `(threshold, average utility)` for every grid point.
    pub curve: Vec<(f64, f64)>,
}

impl ThresholdOptimum {
    /// CSV with header `threshold,avg_utility`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "threshold,avg_utility")?;
        for (t, u) in &self.curve {
            writeln!(w, "{},{}", fmt17(*t), fmt17(*u))?;
        }
        Ok(())
    }
}

/// Average utility at each threshold of `grid`; the best threshold is the
/// smallest one attaining the maximum.
pub fn optimize_threshold(
    bfs: &[Option<f64>],
    truths: &[Hypothesis],
    u: &UtilitySpec,
    grid: &[f64],
) -> Result<ThresholdOptimum> {
    u.validate()?;
    if grid.is_empty() {
        return Err(structural("threshold grid is empty"));
    }
    if grid.iter().any(|g| !(*g > 0.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(structural("threshold grid must be positive and strictly increasing"));
    }
    let mut curve = Vec::with_capacity(grid.len());
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &t in grid {
        let actions: Vec<Action> = bfs.iter().map(|b| decide(*b, t)).collect();
        let avg = average_utility(&tabulate(truths, &actions)?, u)?;
        if avg > best.1 {
            best = (t, avg);
        }
        curve.push((t, avg));
    }
    Ok(ThresholdOptimum { best_threshold: best.0, best_utility: best.1, curve })
}

/// Proportions of (no discovery, discovery) within each true hypothesis;
/// `None` for a hypothesis without decided runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryRates {
    pub h0: Option<[f64; 2]>,
    pub h1: Option<[f64; 2]>,
}

impl DiscoveryRates {
    /// Share of discoveries among H0-true runs.
    pub fn false_discovery_rate(&self) -> Option<f64> {
        self.h0.map(|r| r[1])
    }

    /// Share of discoveries among H1-true runs.
    pub fn true_discovery_rate(&self) -> Option<f64> {
        self.h1.map(|r| r[1])
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "truth,no_discovery,discovery")?;
        for (name, row) in [("H0", self.h0), ("H1", self.h1)] {
            let r = row.unwrap_or([f64::NAN; 2]);
            writeln!(w, "{name},{},{}", fmt17(r[0]), fmt17(r[1]))?;
        }
        Ok(())
    }
}

pub fn discovery_rates(c: &TruthActionCounts) -> Result<DiscoveryRates> {
    if c.total() == 0 {
        return Err(structural("no decided runs"));
    }
    let row = |d: usize, nd: usize| {
        let n = (d + nd) as f64;
        (n > 0.0).then(|| [nd as f64 / n, d as f64 / n])
    };
    Ok(DiscoveryRates { h0: row(c.h0_disc, c.h0_nodisc), h1: row(c.h1_disc, c.h1_nodisc) })
}

/// Percentages of (evidence for H0, no evidence, evidence for H1) per true
/// hypothesis, with evidence for H0 at `bf10 <= lo` and for H1 at `bf10 >= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeWayRates {
    pub h0: Option<[f64; 3]>,
    pub h1: Option<[f64; 3]>,
}

impl ThreeWayRates {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "truth,evidence_h0,no_evidence,evidence_h1")?;
        for (name, row) in [("H0", self.h0), ("H1", self.h1)] {
            let r = row.unwrap_or([f64::NAN; 3]);
            writeln!(w, "{name},{},{},{}", fmt17(r[0]), fmt17(r[1]), fmt17(r[2]))?;
        }
        Ok(())
    }
}

pub fn three_way_rates(bfs: &[Option<f64>], truths: &[Hypothesis], lo: f64, hi: f64) -> Result<ThreeWayRates> {
    if !(lo < hi) {
        return Err(structural(format!("lower threshold {lo} must be below upper threshold {hi}")));
    }
    if bfs.len() != truths.len() {
        return Err(structural("Bayes factors and truths differ in length"));
    }
    let mut counts = [[0usize; 3]; 2];
    for (b, t) in bfs.iter().zip(truths) {
        let Some(b) = b else { continue };
        let k = if *b <= lo {
            0
        } else if *b >= hi {
            2
        } else {
            1
        };
        counts[*t as usize][k] += 1;
    }
    let pct = |c: [usize; 3]| {
        let n: usize = c.iter().sum();
        (n > 0).then(|| c.map(|v| 100.0 * v as f64 / n as f64))
    };
    Ok(ThreeWayRates { h0: pct(counts[0]), h1: pct(counts[1]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decisions() {
        assert_eq!(decide(Some(6.5), 5.0), Action::Discovery);
        assert_eq!(decide(Some(10.0), 10.0), Action::Discovery);
        assert_eq!(decide(Some(1.0), 10.0), Action::NoDiscovery);
        assert_eq!(decide(None, 10.0), Action::NoDecision);
    }

    #[test]
    fn utilities() {
        let u = UtilitySpec::default();
        let a = average_utility(&TruthActionCounts::new(23, 222, 170, 83), &u).unwrap();
        assert!((a - 2.5).abs() < 1e-9);
        let b = average_utility(&TruthActionCounts::new(0, 245, 121, 132), &u).unwrap();
        assert!((b - 3.564257).abs() < 1e-6);
        let zero = UtilitySpec { true_discovery: 0.0, false_discovery: 0.0, true_rejection: 0.0, false_rejection: 0.0 };
        assert_eq!(average_utility(&TruthActionCounts::new(1, 2, 3, 4), &zero).unwrap(), 0.0);
        assert!(average_utility(&TruthActionCounts::default(), &u).is_err());
    }

    #[test]
    fn tabulation() {
        assert_eq!(tabulate(&[], &[]).unwrap(), TruthActionCounts::default());
        assert!(tabulate(&[Hypothesis::H0], &[]).is_err());
        let c = tabulate(
            &[Hypothesis::H0, Hypothesis::H1, Hypothesis::H1],
            &[Action::Discovery, Action::NoDecision, Action::NoDiscovery],
        )
        .unwrap();
        assert_eq!(c, TruthActionCounts { h0_disc: 1, h1_nodisc: 1, no_decision: 1, ..Default::default() });
    }

    #[test]
    fn rates() {
        let r = discovery_rates(&TruthActionCounts::new(23, 222, 170, 83)).unwrap();
        let h0 = r.h0.unwrap();
        let h1 = r.h1.unwrap();
        assert!((h0[0] - 0.91).abs() < 0.005 && (h0[1] - 0.09).abs() < 0.005);
        assert!((h1[0] - 0.33).abs() < 0.005 && (h1[1] - 0.67).abs() < 0.005);
        let only = discovery_rates(&TruthActionCounts::new(0, 0, 5, 0)).unwrap();
        assert_eq!(only.h1, Some([0.0, 1.0]));
        assert_eq!(only.h0, None);
    }

    #[test]
    fn three_way() {
        let mut bfs = Vec::new();
        let mut truths = Vec::new();
        let mut push = |b: f64, n: usize, t: Hypothesis| {
            for _ in 0..n {
                bfs.push(Some(b));
                truths.push(t);
            }
        };
        push(0.05, 32, Hypothesis::H0);
        push(1.0, 213, Hypothesis::H0);
        push(2.0, 132, Hypothesis::H1);
        push(20.0, 121, Hypothesis::H1);
        let r = three_way_rates(&bfs, &truths, 0.1, 10.0).unwrap();
        let h0 = r.h0.unwrap().map(|v| v.round());
        let h1 = r.h1.unwrap().map(|v| v.round());
        assert_eq!(h0, [13.0, 87.0, 0.0]);
        assert_eq!(h1, [0.0, 52.0, 48.0]);
        assert!(three_way_rates(&bfs, &truths, 10.0, 10.0).is_err());
    }

    #[test]
    fn optimizer_tie_rule() {
        let bfs = vec![Some(0.5), Some(0.2)];
        let truths = vec![Hypothesis::H0, Hypothesis::H1];
        let grid = default_threshold_grid();
        assert_eq!(grid.len(), 40);
        assert!((grid[0] - 1.0).abs() < 1e-12 && (grid[39] - 100.0).abs() < 1e-9);
        let opt = optimize_threshold(&bfs, &truths, &UtilitySpec::default(), &grid).unwrap();
        assert_eq!(opt.best_threshold, grid[0]);
        assert!(opt.curve.iter().all(|(_, u)| *u == opt.curve[0].1));
    }

    fn arb_ensemble() -> impl Strategy<Value = (Vec<Option<f64>>, Vec<Hypothesis>)> {
        prop::collection::vec((-5.0f64..6.0, any::<bool>()), 1..60).prop_map(|v| {
            v.into_iter().map(|(lb, h1)| (Some(lb.exp()), if h1 { Hypothesis::H1 } else { Hypothesis::H0 })).unzip()
        })
    }

    fn arb_utility() -> impl Strategy<Value = UtilitySpec> {
        (-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0).prop_map(|(a, b, c, d)| UtilitySpec {
            true_discovery: a,
            false_discovery: b,
            true_rejection: c,
            false_rejection: d,
        })
    }

    proptest! {
        #[test]
        fn utility_is_linear(c in (0usize..50, 0usize..50, 0usize..50, 1usize..50), u in arb_utility(), k in -5.0f64..5.0, s in -10.0f64..10.0) {
            let counts = TruthActionCounts::new(c.0, c.1, c.2, c.3);
            let base = average_utility(&counts, &u).unwrap();
            let scaled = UtilitySpec { true_discovery: k * u.true_discovery, false_discovery: k * u.false_discovery,
                true_rejection: k * u.true_rejection, false_rejection: k * u.false_rejection };
            prop_assert!((average_utility(&counts, &scaled).unwrap() - k * base).abs() < 1e-9);
            let shifted = UtilitySpec { true_discovery: u.true_discovery + s, false_discovery: u.false_discovery + s,
                true_rejection: u.true_rejection + s, false_rejection: u.false_rejection + s };
            prop_assert!((average_utility(&counts, &shifted).unwrap() - (base + s)).abs() < 1e-9);
        }

        #[test]
        fn argmax_invariant_to_positive_affine((bfs, truths) in arb_ensemble(), u in arb_utility(), k in 0.5f64..4.0, s in -10.0f64..10.0) {
            let grid = default_threshold_grid();
            let a = optimize_threshold(&bfs, &truths, &u, &grid).unwrap();
            let v = UtilitySpec { true_discovery: k * u.true_discovery + s, false_discovery: k * u.false_discovery + s,
                true_rejection: k * u.true_rejection + s, false_rejection: k * u.false_rejection + s };
            let b = optimize_threshold(&bfs, &truths, &v, &grid).unwrap();
            // equal utilities may differ in the last bits after the transform; compare curves
            for ((_, x), (_, y)) in a.curve.iter().zip(&b.curve) {
                prop_assert!((k * x + s - y).abs() < 1e-9);
            }
            let best = b.curve.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
            let at = b.curve.iter().find(|c| c.0 == a.best_threshold).unwrap().1;
            prop_assert!((at - best).abs() < 1e-9);
        }

        #[test]
        fn raising_threshold_never_adds_discoveries((bfs, truths) in arb_ensemble(), t in 0.1f64..50.0, d in 0.0f64..50.0) {
            let at = |th: f64| {
                let a: Vec<Action> = bfs.iter().map(|b| decide(*b, th)).collect();
                tabulate(&truths, &a).unwrap().discoveries()
            };
            prop_assert!(at(t + d) <= at(t));
        }

        #[test]
        fn rate_rows_sum_to_one((bfs, truths) in arb_ensemble(), t in 0.1f64..50.0) {
            let a: Vec<Action> = bfs.iter().map(|b| decide(*b, t)).collect();
            let r = discovery_rates(&tabulate(&truths, &a).unwrap()).unwrap();
            for row in [r.h0, r.h1].into_iter().flatten() {
                prop_assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
            }
            let w = three_way_rates(&bfs, &truths, 1.0 / 3.0, 3.0).unwrap();
            for row in [w.h0, w.h1].into_iter().flatten() {
                prop_assert!((row.iter().sum::<f64>() - 100.0).abs() < 1e-9);
            }
        }
    }
}
