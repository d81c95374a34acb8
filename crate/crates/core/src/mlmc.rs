//! Level planning, weight families, the sigma-antithetic MLMC
//! estimator and exact cost accounting.
//!
//! A plan for terminal resolution `n = m^L` runs L + 1 levels. Level 0
//! averages the payoff of the single-step scheme; level `l >= 1`
//! averages `(phi(fine) + phi(antithetic))/2 - phi(coarse)` over
//! coupled triples at resolutions `(m^l, m^{l-1})`, all three legs on
//! one shared grid. Sample sizes follow
//! `N_l = ceil(kappa * n^{2 alpha} * sum(a) / (m^{2(l-1)} a_l))`,
//! with the level-0 convention `N_0 = ceil(kappa * n^{2 alpha} * sum(a) / a_0)`.
//! The global factor `kappa` shrinks every level uniformly so that
//! desk-scale runs keep the Lindeberg-Feller structure of the
//! full-size estimator, changing only the estimator variance by
//! `1/kappa`.

use crate::error::{Error, Result};
use crate::model::{Payoff, SdeModel};
use crate::noise::{Permutation, Purpose, StreamKey};
use crate::scheme::CoupledEngine;
use crate::stats::{par_chunked, Accum};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Unit,
    InvEll,
    InvEllLog,
    /// a_l = m^{-l/2}: cost-optimal, but its weight sum converges, so
    /// the CLT's weight condition fails. Flagged wherever it is used.
    Optimal,
}

impl WeightKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(WeightKind::Unit),
            "inv_ell" => Ok(WeightKind::InvEll),
            "inv_ell_log" => Ok(WeightKind::InvEllLog),
            "optimal" => Ok(WeightKind::Optimal),
            other => Err(Error::invalid(format!(
                "unknown weight family {other:?}; expected unit | inv_ell | inv_ell_log | optimal"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WeightKind::Unit => "unit",
            WeightKind::InvEll => "inv_ell",
            WeightKind::InvEllLog => "inv_ell_log",
            WeightKind::Optimal => "optimal",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeightFamily {
    pub kind: WeightKind,
    /// Free weight of the base level; the paper's displays never pin
    /// it, so it defaults to 1.
    pub a0: f64,
}

impl WeightFamily {
    pub fn new(kind: WeightKind) -> Self {
        WeightFamily { kind, a0: 1.0 }
    }

    pub fn with_a0(kind: WeightKind, a0: f64) -> Result<Self> {
        if !(a0 > 0.0) || !a0.is_finite() {
            return Err(Error::invalid("a0 must be positive and finite"));
        }
        Ok(WeightFamily { kind, a0 })
    }

    /// Whether the family satisfies the weight condition required by
    /// the estimator's CLT (diverging weight sum with vanishing
    /// Lyapunov ratio).
    pub fn satisfies_condition_w(&self) -> bool {
        self.kind != WeightKind::Optimal
    }
}

/// The level weight a_l (l >= 1). `inv_ell_log` is undefined at l = 1,
/// where we use 1/ln(2); any positive finite value preserves the
/// weight condition.
pub fn weight(family: &WeightFamily, ell: usize, m: usize) -> f64 {
    debug_assert!(ell >= 1);
    let l = ell as f64;
    match family.kind {
        WeightKind::Unit => 1.0,
        WeightKind::InvEll => 1.0 / l,
        WeightKind::InvEllLog => {
            if ell == 1 {
                1.0 / 2f64.ln()
            } else {
                1.0 / (l * l.ln())
            }
        }
        WeightKind::Optimal => (m as f64).powf(-l / 2.0),
    }
}

/// A fully resolved execution plan: resolutions, weights, sample
/// sizes and the desk-scale shrink factor.
#[derive(Clone, Debug, Serialize)]
pub struct LevelPlan {
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub levels: usize,
    pub family: WeightFamily,
    /// Realized a_1..a_L.
    pub weights: Vec<f64>,
    /// N_0..N_L.
    pub sample_sizes: Vec<u64>,
    pub kappa: f64,
    /// True when some N_l hit the floor of 2 samples.
    pub clamped: bool,
    pub violates_condition_w: bool,
}

impl LevelPlan {
    /// The paper's cost convention: levels 1..L only, each coupled
    /// replicate costing `2 m^l + m^{l-1}` scheme steps.
    pub fn paper_cost(&self) -> f64 {
        let m = self.m as f64;
        (1..=self.levels)
            .map(|l| self.sample_sizes[l] as f64 * (2.0 * m.powi(l as i32) + m.powi(l as i32 - 1)))
            .sum()
    }

    /// Paper cost plus the base level at one step-unit per sample.
    pub fn total_cost(&self) -> f64 {
        self.paper_cost() + self.sample_sizes[0] as f64
    }
}

/// Exact integer log: returns L with m^L = n, or None.
fn exact_log(n: usize, m: usize) -> Option<usize> {
    let mut value = n;
    let mut l = 0;
    while value > 1 {
        if value % m != 0 {
            return None;
        }
        value /= m;
        l += 1;
    }
    (l >= 1).then_some(l)
}

/// Resolve sample sizes for terminal resolution `n = m^L`.
pub fn plan_levels(
    n: usize,
    m: usize,
    alpha: f64,
    family: WeightFamily,
    kappa: f64,
) -> Result<LevelPlan> {
    if m < 2 {
        return Err(Error::invalid("plan needs refinement factor m >= 2"));
    }
    let levels = exact_log(n, m).ok_or_else(|| {
        Error::invalid(format!("n = {n} is not a positive power of m = {m}"))
    })?;
    if !(0.5..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "alpha = {alpha} outside the bias-order range [0.5, 1]"
        )));
    }
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::invalid("kappa must be positive and finite"));
    }
    let weights: Vec<f64> = (1..=levels).map(|l| weight(&family, l, m)).collect();
    let sum_a: f64 = weights.iter().sum();
    let budget = kappa * (n as f64).powf(2.0 * alpha) * sum_a;
    let mut clamped = false;
    let mut sample_sizes = Vec::with_capacity(levels + 1);
    let mut raw_sizes = vec![budget / family.a0];
    for l in 1..=levels {
        let scale = (m as f64).powi(2 * (l as i32 - 1));
        raw_sizes.push(budget / (scale * weights[l - 1]));
    }
    for raw in raw_sizes {
        let n_l = raw.ceil();
        if n_l < 2.0 {
            clamped = true;
            sample_sizes.push(2);
        } else {
            sample_sizes.push(n_l as u64);
        }
    }
    Ok(LevelPlan {
        n,
        m,
        alpha,
        levels,
        family,
        weights,
        sample_sizes,
        kappa,
        clamped,
        violates_condition_w: !family.satisfies_condition_w(),
    })
}

/// Total abstract step-units of a plan (levels 1..L at the paper's
/// per-replicate cost, plus the base level at one unit per sample).
pub fn theoretical_cost(plan: &LevelPlan) -> f64 {
    plan.total_cost()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LevelStats {
    pub ell: usize,
    pub samples: u64,
    pub mean: f64,
    pub variance: f64,
    pub cost_units: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MlmcResult {
    pub estimate: f64,
    pub levels: Vec<LevelStats>,
    pub paper_cost_units: f64,
    pub total_cost_units: f64,
    pub master_seed: u64,
}

impl MlmcResult {
    /// Standard error of the estimate from the per-level sample
    /// variances.
    pub fn std_err(&self) -> f64 {
        self.levels
            .iter()
            .map(|s| s.variance / s.samples as f64)
            .sum::<f64>()
            .sqrt()
    }
}

/// Run the sigma-antithetic MLMC estimator for the plan.
///
/// Level 0 draws `N_0` single-step payoffs; level `l` draws `N_l`
/// coupled triples at `(n, m) = (m^{l-1}, m)` with the reversal
/// permutation (the only strictly decreasing choice, which is what
/// makes the antithetic average converge at order one). Levels and
/// replicates use disjoint streams keyed by (seed, level, replicate),
/// and per-level statistics merge in fixed chunk order, so the result
/// is bit-stable across thread counts.
pub fn estimate(
    model: &SdeModel,
    payoff: &Payoff,
    plan: &LevelPlan,
    master_seed: u64,
) -> Result<MlmcResult> {
    let sigma = Permutation::reversal(plan.m);
    let mut levels = Vec::with_capacity(plan.levels + 1);

    let n0 = plan.sample_sizes[0];
    let parts = par_chunked(n0, |range| {
        let mut engine = CoupledEngine::new(model);
        let mut acc = Accum::default();
        for rep in range {
            let key = StreamKey::new(master_seed, Purpose::MlmcLevel, 0, rep);
            engine
                .run_coarse_only(model, &key, 1, plan.m)
                .map_err(|e| Error::LevelReplicate {
                    level: 0,
                    replicate: rep,
                    source: Box::new(e),
                })?;
            acc.push(payoff.value(&engine.coarse));
        }
        Ok(acc)
    })?;
    let base = Accum::merge_in_order(parts.iter());
    levels.push(LevelStats {
        ell: 0,
        samples: n0,
        mean: base.mean(),
        variance: base.variance(),
        cost_units: n0 as f64,
    });

    for l in 1..=plan.levels {
        let n_l = plan.sample_sizes[l];
        let coarse_steps = plan.m.pow(l as u32 - 1);
        let parts = par_chunked(n_l, |range| {
            let mut engine = CoupledEngine::new(model);
            let mut acc = Accum::default();
            for rep in range {
                let key = StreamKey::new(master_seed, Purpose::MlmcLevel, l as i64, rep);
                engine
                    .run(model, &key, coarse_steps, plan.m, &sigma)
                    .map_err(|e| Error::LevelReplicate {
                        level: l,
                        replicate: rep,
                        source: Box::new(e),
                    })?;
                acc.push(engine.level_correction(payoff));
            }
            Ok(acc)
        })?;
        let acc = Accum::merge_in_order(parts.iter());
        let m = plan.m as f64;
        levels.push(LevelStats {
            ell: l,
            samples: n_l,
            mean: acc.mean(),
            variance: acc.variance(),
            cost_units: n_l as f64 * (2.0 * m.powi(l as i32) + m.powi(l as i32 - 1)),
        });
    }

    let estimate = levels.iter().map(|s| s.mean).sum();
    Ok(MlmcResult {
        estimate,
        levels,
        paper_cost_units: plan.paper_cost(),
        total_cost_units: plan.total_cost(),
        master_seed,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct WeightConditionRow {
    pub levels: usize,
    pub weight_sum: f64,
    /// The Lyapunov ratio sum(a^{p/2}) / sum(a)^{p/2}; the weight
    /// condition needs it to vanish as L grows.
    pub lyapunov_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct WeightConditionReport {
    pub family: WeightFamily,
    pub m: usize,
    pub p: f64,
    pub rows: Vec<WeightConditionRow>,
    pub weight_sum_increasing: bool,
    pub ratio_decreasing: bool,
    pub violates_condition_w: bool,
}

/// Tabulate the weight-condition diagnostics over a grid of level
/// counts.
pub fn weight_condition_report(
    family: WeightFamily,
    m: usize,
    p: f64,
    level_grid: &[usize],
) -> Result<WeightConditionReport> {
    if !(p > 2.0) {
        return Err(Error::invalid("the weight condition is stated for p > 2"));
    }
    if level_grid.iter().any(|&l| l < 2) {
        return Err(Error::invalid("each level count must be at least 2"));
    }
    let rows: Vec<WeightConditionRow> = level_grid
        .iter()
        .map(|&levels| {
            let weights: Vec<f64> = (1..=levels).map(|l| weight(&family, l, m)).collect();
            let sum: f64 = weights.iter().sum();
            let sum_p: f64 = weights.iter().map(|a| a.powf(p / 2.0)).sum();
            WeightConditionRow {
                levels,
                weight_sum: sum,
                lyapunov_ratio: sum_p / sum.powf(p / 2.0),
            }
        })
        .collect();
    let weight_sum_increasing = rows.windows(2).all(|w| w[1].weight_sum > w[0].weight_sum);
    let ratio_decreasing = rows
        .windows(2)
        .all(|w| w[1].lyapunov_ratio < w[0].lyapunov_ratio);
    Ok(WeightConditionReport {
        family,
        m,
        p,
        rows,
        weight_sum_increasing,
        ratio_decreasing,
        violates_condition_w: !family.satisfies_condition_w(),
    })
}
