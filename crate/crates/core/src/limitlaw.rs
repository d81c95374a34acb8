//! Statistical verification harness: realizes the triangular-array
//! noise processes driving the coupling error, measures strong
//! convergence rates, profiles per-level variance decay, runs the CLT
//! normality experiment and the permutation ablation.
//!
//! The four arrays realized per grid (terminal values at t = 1) are
//!
//! * `z0[j,j']  = sum_i sum_k  d_{ik}^j d_{ik}^{j'}`
//! * `z1[j,j',j''] = n sum_i sum_{k != k'} (d_{ik'}^j d_{ik'}^{j'} - delta_{jj'}/(n m)) d_{ik}^{j''}`
//! * `z2[j,j'] = sqrt(n) sum_i sum_{k < k'} (d_{ik}^j d_{ik'}^{j'} - d_{ik'}^j d_{ik}^{j'})`
//! * `z3[j,j',j''] = n sum_i sum_{k'' < k' < k} d_{ik'}^{j'} (d_{ik}^j d_{ik''}^{j''} + d_{ik''}^j d_{ik}^{j''})`
//!
//! where `d_{ik}` is the k-th fine increment of cell i. Their limit
//! laws are Brownian motions with explicit m-dependent variances,
//! independent of each other and of the driving motion; the variance
//! and independence columns reported here are exact at every n, which
//! is what makes desk-scale tolerance checks meaningful.

use crate::error::{Error, Result};
use crate::mlmc::{estimate, plan_levels, WeightFamily};
use crate::model::{Payoff, SdeModel};
use crate::noise::{sample_grid_into, FineIncrementGrid, Permutation, Purpose, StreamKey};
use crate::scheme::{coupled_triple_from_grid, CoupledEngine};
use crate::stats::{par_chunked, Accum, CoAccum};
use serde::Serialize;

pub use crate::stats::{ks_normality, ks_two_sample, loglog_slope};

/// Terminal values of the triangular noise arrays for one grid.
#[derive(Clone, Debug)]
pub struct NoiseArrays {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    /// (j, j') row-major, length q^2.
    pub z0: Vec<f64>,
    /// (j, j', j'') row-major, length q^3.
    pub z1: Vec<f64>,
    /// (j, j') row-major, length q^2; antisymmetric with zero diagonal.
    pub z2: Vec<f64>,
    /// (j, j', j'') row-major, length q^3; identically zero for m = 2
    /// (the index range k'' < k' < k is empty).
    pub z3: Vec<f64>,
}

impl NoiseArrays {
    fn zeros(n: usize, m: usize, q: usize) -> Self {
        NoiseArrays {
            n,
            m,
            q,
            z0: vec![0.0; q * q],
            z1: vec![0.0; q * q * q],
            z2: vec![0.0; q * q],
            z3: vec![0.0; q * q * q],
        }
    }

    #[inline]
    pub fn z0_at(&self, j: usize, jp: usize) -> f64 {
        self.z0[j * self.q + jp]
    }

    #[inline]
    pub fn z1_at(&self, j: usize, jp: usize, jpp: usize) -> f64 {
        self.z1[(j * self.q + jp) * self.q + jpp]
    }

    #[inline]
    pub fn z2_at(&self, j: usize, jp: usize) -> f64 {
        self.z2[j * self.q + jp]
    }

    #[inline]
    pub fn z3_at(&self, j: usize, jp: usize, jpp: usize) -> f64 {
        self.z3[(j * self.q + jp) * self.q + jpp]
    }
}

/// Realize the noise arrays at t = 1 for one grid.
pub fn noise_arrays(grid: &FineIncrementGrid) -> NoiseArrays {
    let mut out = NoiseArrays::zeros(grid.n, grid.m, grid.q);
    noise_arrays_into(grid, &mut out);
    out
}

fn noise_arrays_into(grid: &FineIncrementGrid, out: &mut NoiseArrays) {
    let (n, m, q) = (grid.n, grid.m, grid.q);
    if out.q != q {
        *out = NoiseArrays::zeros(n, m, q);
    }
    out.n = n;
    out.m = m;
    out.z0.fill(0.0);
    out.z1.fill(0.0);
    out.z2.fill(0.0);
    out.z3.fill(0.0);
    let corr = 1.0 / (n * m) as f64;
    let mut cell_sum = vec![0.0; q];
    for i in 0..n {
        cell_sum.fill(0.0);
        for k in 0..m {
            for (acc, &v) in cell_sum.iter_mut().zip(grid.delta(i, k)) {
                *acc += v;
            }
        }
        for k in 0..m {
            let d = grid.delta(i, k);
            for j in 0..q {
                for jp in 0..q {
                    out.z0[j * q + jp] += d[j] * d[jp];
                }
            }
        }
        // z1: the quadratic factor sits on k', the linear factor on k.
        for kp in 0..m {
            let dkp = grid.delta(i, kp);
            for j in 0..q {
                for jp in 0..q {
                    let mut p = dkp[j] * dkp[jp];
                    if j == jp {
                        p -= corr;
                    }
                    let row = (j * q + jp) * q;
                    for jpp in 0..q {
                        out.z1[row + jpp] += p * (cell_sum[jpp] - dkp[jpp]);
                    }
                }
            }
        }
        for k in 0..m {
            let dk = grid.delta(i, k);
            for kp in k + 1..m {
                let dkp = grid.delta(i, kp);
                for j in 0..q {
                    for jp in 0..q {
                        out.z2[j * q + jp] += dk[j] * dkp[jp] - dkp[j] * dk[jp];
                    }
                }
            }
        }
        for kpp in 0..m {
            let dkpp = grid.delta(i, kpp);
            for kp in kpp + 1..m {
                let dkp = grid.delta(i, kp);
                for k in kp + 1..m {
                    let dk = grid.delta(i, k);
                    for j in 0..q {
                        for jp in 0..q {
                            let f = dkp[jp];
                            let row = (j * q + jp) * q;
                            for jpp in 0..q {
                                out.z3[row + jpp] += f * (dk[j] * dkpp[jpp] + dkpp[j] * dk[jpp]);
                            }
                        }
                    }
                }
            }
        }
    }
    let nf = n as f64;
    for v in &mut out.z1 {
        *v *= nf;
    }
    let sqrt_n = nf.sqrt();
    for v in &mut out.z2 {
        *v *= sqrt_n;
    }
    for v in &mut out.z3 {
        *v *= nf;
    }
}

/// Limit variance of a z1 component at t = 1.
pub fn z1_limit_variance(m: usize, j: usize, jp: usize) -> f64 {
    let mf = m as f64;
    let base = (mf - 1.0) / (mf * mf);
    if j == jp {
        2.0 * base
    } else {
        base
    }
}

/// Limit variance of a z2 component at t = 1 (zero on the diagonal).
pub fn z2_limit_variance(m: usize, j: usize, jp: usize) -> f64 {
    if j == jp {
        0.0
    } else {
        let mf = m as f64;
        (mf - 1.0) / mf
    }
}

/// Limit variance of a z3 component at t = 1; the diagonal condition
/// is on the outer pair (j, j'').
pub fn z3_limit_variance(m: usize, j: usize, jpp: usize) -> f64 {
    let mf = m as f64;
    let base = (mf - 1.0) * (mf - 2.0) / (3.0 * mf * mf);
    if j == jpp {
        2.0 * base
    } else {
        base
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VarianceRow {
    pub component: String,
    pub empirical: f64,
    pub theoretical: f64,
    /// Normal-theory standard error of the variance estimate,
    /// `s^2 sqrt(2 / (R - 1))`; the array limits are gaussian, so this
    /// is the right scale at desk-size R.
    pub std_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeanRow {
    pub component: String,
    pub empirical: f64,
    pub theoretical: f64,
    pub std_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CovarianceRow {
    pub a: String,
    pub b: String,
    pub covariance: f64,
    pub within_bound: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct NoiseVarianceReport {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub replicates: u64,
    pub master_seed: u64,
    /// Empirical vs limit variance for every z1/z2/z3 component.
    pub variance_rows: Vec<VarianceRow>,
    /// Empirical mean of z0 vs the identity matrix.
    pub z0_mean_rows: Vec<MeanRow>,
    /// Pairwise covariances among sampled components and terminal W.
    pub covariance_rows: Vec<CovarianceRow>,
    /// The independence tolerance 4 / sqrt(R).
    pub covariance_bound: f64,
    pub max_abs_covariance: f64,
    /// Largest |z3| entry seen on any grid; exactly 0 for m = 2.
    pub max_abs_z3: f64,
}

fn component_labels(q: usize) -> (Vec<String>, usize, usize, usize, usize) {
    // Tracked vector layout: z0 (q^2), z1 (q^3), z2 (q^2), z3 (q^3), w (q).
    let mut labels = Vec::new();
    for j in 1..=q {
        for jp in 1..=q {
            labels.push(format!("z0_{j}{jp}"));
        }
    }
    let z1_off = labels.len();
    for j in 1..=q {
        for jp in 1..=q {
            for jpp in 1..=q {
                labels.push(format!("z1_{j}{jp}{jpp}"));
            }
        }
    }
    let z2_off = labels.len();
    for j in 1..=q {
        for jp in 1..=q {
            labels.push(format!("z2_{j}{jp}"));
        }
    }
    let z3_off = labels.len();
    for j in 1..=q {
        for jp in 1..=q {
            for jpp in 1..=q {
                labels.push(format!("z3_{j}{jp}{jpp}"));
            }
        }
    }
    let w_off = labels.len();
    for j in 1..=q {
        labels.push(format!("w_{j}"));
    }
    (labels, z1_off, z2_off, z3_off, w_off)
}

/// Empirical variances and covariances of the noise arrays over
/// independent grids, against the exact theoretical columns.
pub fn noise_variance_report(
    master_seed: u64,
    n: usize,
    m: usize,
    q: usize,
    replicates: u64,
) -> Result<NoiseVarianceReport> {
    if replicates < 2 {
        return Err(Error::invalid("noise_variance_report needs at least 2 replicates"));
    }
    let (labels, z1_off, z2_off, z3_off, w_off) = component_labels(q);
    let dim = labels.len();

    struct Chunk {
        co: CoAccum,
        max_abs_z3: f64,
    }
    let parts = par_chunked(replicates, |range| {
        let mut grid = FineIncrementGrid::from_values(1, 2, 1, vec![0.0, 0.0]).expect("shape");
        let mut arrays = NoiseArrays::zeros(n, m, q);
        let mut tracked = vec![0.0; dim];
        let mut chunk = Chunk {
            co: CoAccum::new(dim),
            max_abs_z3: 0.0,
        };
        for rep in range {
            let key = StreamKey::new(master_seed, Purpose::Noise, n as i64, rep);
            sample_grid_into(&key, n, m, q, &mut grid)?;
            noise_arrays_into(&grid, &mut arrays);
            let w = grid.terminal_w();
            tracked[..q * q].copy_from_slice(&arrays.z0);
            tracked[z1_off..z1_off + q * q * q].copy_from_slice(&arrays.z1);
            tracked[z2_off..z2_off + q * q].copy_from_slice(&arrays.z2);
            tracked[z3_off..z3_off + q * q * q].copy_from_slice(&arrays.z3);
            tracked[w_off..].copy_from_slice(&w);
            chunk.co.push(&tracked);
            for &v in &arrays.z3 {
                chunk.max_abs_z3 = chunk.max_abs_z3.max(v.abs());
            }
        }
        Ok(chunk)
    })?;
    let mut co = CoAccum::new(dim);
    let mut max_abs_z3: f64 = 0.0;
    for part in &parts {
        co.merge(&part.co);
        max_abs_z3 = max_abs_z3.max(part.max_abs_z3);
    }

    let r = replicates as f64;
    let var_se_factor = (2.0 / (r - 1.0)).sqrt();
    let mut variance_rows = Vec::new();
    for j in 0..q {
        for jp in 0..q {
            for jpp in 0..q {
                let idx = z1_off + (j * q + jp) * q + jpp;
                variance_rows.push(VarianceRow {
                    component: labels[idx].clone(),
                    empirical: co.variance(idx),
                    theoretical: z1_limit_variance(m, j, jp),
                    std_err: co.variance(idx) * var_se_factor,
                });
            }
        }
    }
    for j in 0..q {
        for jp in 0..q {
            let idx = z2_off + j * q + jp;
            variance_rows.push(VarianceRow {
                component: labels[idx].clone(),
                empirical: co.variance(idx),
                theoretical: z2_limit_variance(m, j, jp),
                std_err: co.variance(idx) * var_se_factor,
            });
        }
    }
    for j in 0..q {
        for jp in 0..q {
            for jpp in 0..q {
                let idx = z3_off + (j * q + jp) * q + jpp;
                variance_rows.push(VarianceRow {
                    component: labels[idx].clone(),
                    empirical: co.variance(idx),
                    theoretical: if m == 2 {
                        0.0
                    } else {
                        z3_limit_variance(m, j, jpp)
                    },
                    std_err: co.variance(idx) * var_se_factor,
                });
            }
        }
    }

    let mut z0_mean_rows = Vec::new();
    for j in 0..q {
        for jp in 0..q {
            let idx = j * q + jp;
            z0_mean_rows.push(MeanRow {
                component: labels[idx].clone(),
                empirical: co.mean(idx),
                theoretical: if j == jp { 1.0 } else { 0.0 },
                std_err: (co.variance(idx) / r).sqrt(),
            });
        }
    }

    // Sampled components for the independence table: one diagonal and
    // one generic component per array (z3 only when it is not
    // structurally zero), plus the terminal Brownian coordinates.
    let mut sampled: Vec<usize> = Vec::new();
    sampled.push(z1_off); // z1_111
    if q >= 2 {
        sampled.push(z1_off + q * q); // z1_211
        sampled.push(z2_off + q); // z2_21
    }
    if m >= 3 {
        sampled.push(z3_off); // z3_111
        if q >= 2 {
            sampled.push(z3_off + q * q); // z3_211
        }
    }
    for j in 0..q.min(2) {
        sampled.push(w_off + j);
    }
    let bound = 4.0 / r.sqrt();
    let mut covariance_rows = Vec::new();
    let mut max_abs_cov: f64 = 0.0;
    for (pos, &a) in sampled.iter().enumerate() {
        for &b in &sampled[pos + 1..] {
            let cov = co.covariance(a, b);
            max_abs_cov = max_abs_cov.max(cov.abs());
            covariance_rows.push(CovarianceRow {
                a: labels[a].clone(),
                b: labels[b].clone(),
                covariance: cov,
                within_bound: cov.abs() <= bound,
            });
        }
    }

    Ok(NoiseVarianceReport {
        n,
        m,
        q,
        replicates,
        master_seed,
        variance_rows,
        z0_mean_rows,
        covariance_rows,
        covariance_bound: bound,
        max_abs_covariance: max_abs_cov,
        max_abs_z3,
    })
}

/// Which functional of the coupling errors a rate study measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ErrorFunctional {
    /// |U| and |V| at t = 1 (the default; the limit theorems are
    /// stated through time-1 functionals).
    Terminal,
    /// sup over the coarse grid times.
    SupCoarseTimes,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RatePoint {
    pub n: usize,
    pub rms_u: f64,
    pub rms_v: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub std_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RateReport {
    pub model: String,
    pub m: usize,
    pub sigma: String,
    pub replicates: u64,
    pub master_seed: u64,
    pub functional: ErrorFunctional,
    pub points: Vec<RatePoint>,
    /// Log-log slope of RMS|U| vs n; absent when U degenerates to
    /// zero (order-invariant schemes).
    pub u_slope: Option<SlopeFit>,
    pub v_slope: Option<SlopeFit>,
    pub u_degenerate: bool,
    pub v_degenerate: bool,
}

/// RMS below this is treated as exactly-zero coupling error (the
/// order-invariant degenerate cases); it is far above f64 rounding
/// accumulated over a path and far below any genuine coupling error.
const DEGENERATE_RMS: f64 = 1e-10;

/// Strong-error measurement: per n, the RMS over replicates of the
/// antithetic difference |U| = |fine - antithetic| and of the average
/// error |V| = |(fine + antithetic)/2 - coarse|, with fitted log-log
/// slopes. Deterministic given (master_seed, n_grid, replicates).
pub fn strong_rate_report(
    model: &SdeModel,
    m: usize,
    n_grid: &[usize],
    replicates: u64,
    sigma: &Permutation,
    functional: ErrorFunctional,
    master_seed: u64,
) -> Result<RateReport> {
    if n_grid.len() < 4 {
        return Err(Error::invalid("rate study needs at least 4 grid resolutions"));
    }
    if replicates < 100 {
        return Err(Error::invalid("rate study needs at least 100 replicates"));
    }
    if sigma.order() != m {
        return Err(Error::invalid("permutation order must equal m"));
    }
    let mut points = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        if n < 1 {
            return Err(Error::invalid("grid resolutions must be positive"));
        }
        let (u_acc, v_acc) = accumulate_uv(model, m, n, replicates, sigma, functional, master_seed)?;
        points.push(RatePoint {
            n,
            rms_u: u_acc.mean().max(0.0).sqrt(),
            rms_v: v_acc.mean().max(0.0).sqrt(),
        });
    }
    let u_degenerate = points.iter().any(|p| p.rms_u < DEGENERATE_RMS);
    let v_degenerate = points.iter().any(|p| p.rms_v < DEGENERATE_RMS);
    let fit = |get: &dyn Fn(&RatePoint) -> f64, degenerate: bool| -> Result<Option<SlopeFit>> {
        if degenerate {
            return Ok(None);
        }
        let pts: Vec<(f64, f64)> = points.iter().map(|p| (p.n as f64, get(p))).collect();
        let (slope, std_err) = loglog_slope(&pts)?;
        Ok(Some(SlopeFit { slope, std_err }))
    };
    let u_slope = fit(&|p| p.rms_u, u_degenerate)?;
    let v_slope = fit(&|p| p.rms_v, v_degenerate)?;
    Ok(RateReport {
        model: model.name().to_string(),
        m,
        sigma: sigma.label(),
        replicates,
        master_seed,
        functional,
        points,
        u_slope,
        v_slope,
        u_degenerate,
        v_degenerate,
    })
}

/// Accumulate |U|^2 and |V|^2 over replicates for one resolution.
fn accumulate_uv(
    model: &SdeModel,
    m: usize,
    n: usize,
    replicates: u64,
    sigma: &Permutation,
    functional: ErrorFunctional,
    master_seed: u64,
) -> Result<(Accum, Accum)> {
    let parts = par_chunked(replicates, |range| {
        let mut engine = CoupledEngine::new(model);
        let mut grid = FineIncrementGrid::from_values(1, 2, 1, vec![0.0, 0.0]).expect("shape");
        let mut u_acc = Accum::default();
        let mut v_acc = Accum::default();
        for rep in range {
            let key = StreamKey::new(master_seed, Purpose::Rates, n as i64, rep);
            match functional {
                ErrorFunctional::Terminal => {
                    sample_grid_into(&key, n, m, model.dim_noise(), &mut grid)?;
                    engine.run_grid(model, &grid, sigma, None)?;
                    u_acc.push(norm_sq_diff(&engine.fine, &engine.antithetic));
                    v_acc.push(norm_sq_avg_diff(&engine.fine, &engine.antithetic, &engine.coarse));
                }
                ErrorFunctional::SupCoarseTimes => {
                    sample_grid_into(&key, n, m, model.dim_noise(), &mut grid)?;
                    let triple = coupled_triple_from_grid(model, &grid, sigma, true)?;
                    let rec = triple.trajectories.as_ref().expect("recorded");
                    let mut sup_u: f64 = 0.0;
                    let mut sup_v: f64 = 0.0;
                    for ((f, a), c) in rec
                        .fine
                        .states
                        .iter()
                        .zip(&rec.antithetic.states)
                        .zip(&rec.coarse.states)
                    {
                        sup_u = sup_u.max(norm_sq_diff(f, a));
                        sup_v = sup_v.max(norm_sq_avg_diff(f, a, c));
                    }
                    u_acc.push(sup_u);
                    v_acc.push(sup_v);
                }
            }
        }
        Ok((u_acc, v_acc))
    })?;
    let mut u_total = Accum::default();
    let mut v_total = Accum::default();
    for (u, v) in &parts {
        u_total.merge(u);
        v_total.merge(v);
    }
    Ok((u_total, v_total))
}

#[inline]
fn norm_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn norm_sq_avg_diff(fine: &[f64], anti: &[f64], coarse: &[f64]) -> f64 {
    fine.iter()
        .zip(anti)
        .zip(coarse)
        .map(|((f, a), c)| {
            let v = 0.5 * (f + a) - c;
            v * v
        })
        .sum()
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelVarianceRow {
    pub ell: usize,
    pub samples: u64,
    pub mean: f64,
    pub variance: f64,
    /// m^{2(l-1)) * Var of the level correction; converges to the CLT
    /// variance as l grows.
    pub scaled_variance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelVarianceProfile {
    pub model: String,
    pub payoff: String,
    pub m: usize,
    pub replicates: u64,
    pub master_seed: u64,
    pub rows: Vec<LevelVarianceRow>,
}

/// Per-level variance of the antithetic correction with a fixed
/// replicate count per level (independent of any plan).
pub fn level_variance_profile(
    model: &SdeModel,
    payoff: &Payoff,
    m: usize,
    max_level: usize,
    replicates: u64,
    master_seed: u64,
) -> Result<LevelVarianceProfile> {
    if max_level < 1 {
        return Err(Error::invalid("need at least one level"));
    }
    if replicates < 2 {
        return Err(Error::invalid("need at least 2 replicates per level"));
    }
    let sigma = Permutation::reversal(m);
    let mut rows = Vec::with_capacity(max_level);
    for l in 1..=max_level {
        let coarse_steps = m.pow(l as u32 - 1);
        let parts = par_chunked(replicates, |range| {
            let mut engine = CoupledEngine::new(model);
            let mut acc = Accum::default();
            for rep in range {
                let key = StreamKey::new(master_seed, Purpose::MlmcLevel, l as i64, rep);
                engine.run(model, &key, coarse_steps, m, &sigma)?;
                acc.push(engine.level_correction(payoff));
            }
            Ok(acc)
        })?;
        let acc = Accum::merge_in_order(parts.iter());
        let scale = (m as f64).powi(2 * (l as i32 - 1));
        rows.push(LevelVarianceRow {
            ell: l,
            samples: replicates,
            mean: acc.mean(),
            variance: acc.variance(),
            scaled_variance: scale * acc.variance(),
        });
    }
    Ok(LevelVarianceProfile {
        model: model.name().to_string(),
        payoff: payoff.id().to_string(),
        m,
        replicates,
        master_seed,
        rows,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CltReport {
    pub model: String,
    pub payoff: String,
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub replicates: u64,
    pub master_seed: u64,
    /// Per-replicate estimator values.
    pub qhat: Vec<f64>,
    /// The same values standardized by their empirical mean and
    /// standard deviation (bias constants are unknown, so the test
    /// checks shape, not location).
    pub standardized: Vec<f64>,
    pub ks_statistic: f64,
    pub p_value: f64,
    pub qhat_mean: f64,
    pub qhat_variance: f64,
    /// n^{2 alpha} Var(qhat), comparable to the limit variance over
    /// kappa.
    pub scaled_qhat_variance: f64,
    /// m^{2(l-1)} Var_l per level from the first replicate's run.
    pub scaled_level_variances: Vec<f64>,
    /// Last-level scaled variance divided by kappa: the in-scope proxy
    /// for the limit variance of the normalized estimator.
    pub v_proxy_over_kappa: f64,
    /// Total step-units of one estimator run.
    pub cost_per_estimate: f64,
}

/// CLT normality experiment: run the estimator `replicates` times with
/// disjoint seeds, standardize, and KS-test against the normal law.
#[allow(clippy::too_many_arguments)]
pub fn clt_report(
    model: &SdeModel,
    payoff: &Payoff,
    n: usize,
    m: usize,
    alpha: f64,
    family: WeightFamily,
    kappa: f64,
    replicates: u64,
    master_seed: u64,
) -> Result<CltReport> {
    if replicates < 200 {
        return Err(Error::invalid(
            "clt_report needs at least 200 replicates for a meaningful KS p-value",
        ));
    }
    let plan = plan_levels(n, m, alpha, family, kappa)?;
    let mut qhat = Vec::with_capacity(replicates as usize);
    let mut scaled_level_variances = Vec::new();
    for rep in 0..replicates {
        let seed = StreamKey::new(master_seed, Purpose::CltReplicate, 0, rep).derived_seed();
        let result = estimate(model, payoff, &plan, seed)?;
        if rep == 0 {
            scaled_level_variances = result
                .levels
                .iter()
                .skip(1)
                .map(|s| (m as f64).powi(2 * (s.ell as i32 - 1)) * s.variance)
                .collect();
        }
        qhat.push(result.estimate);
    }
    let (ks_statistic, p_value) = ks_normality(&qhat)?;
    let mut acc = Accum::default();
    for &v in &qhat {
        acc.push(v);
    }
    let sd = acc.std_dev();
    let standardized: Vec<f64> = qhat.iter().map(|v| (v - acc.mean()) / sd).collect();
    let v_proxy = scaled_level_variances.last().copied().unwrap_or(0.0);
    Ok(CltReport {
        model: model.name().to_string(),
        payoff: payoff.id().to_string(),
        n,
        m,
        alpha,
        kappa,
        replicates,
        master_seed,
        qhat,
        standardized,
        ks_statistic,
        p_value,
        qhat_mean: acc.mean(),
        qhat_variance: acc.variance(),
        scaled_qhat_variance: (n as f64).powf(2.0 * alpha) * acc.variance(),
        scaled_level_variances,
        v_proxy_over_kappa: v_proxy / kappa,
        cost_per_estimate: plan.total_cost(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationCell {
    pub n: usize,
    /// n^2 times the total variance of the terminal average error V.
    pub scaled_variance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationSeries {
    pub sigma: String,
    pub strictly_decreasing: bool,
    pub cells: Vec<AblationCell>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    pub model: String,
    pub m: usize,
    pub replicates: u64,
    pub master_seed: u64,
    pub series: Vec<AblationSeries>,
    /// True when the reversal's scaled variance at the largest n is no
    /// larger than every other tested permutation's.
    pub reversal_minimal_at_largest_n: Option<bool>,
}

/// Compare permutations by the n-scaled variance of the terminal
/// average error. All permutations see the same grids (common random
/// numbers keyed like the rate study), which pairs the comparison and
/// makes the reversal column reproduce the rate statistics on shared
/// seeds.
pub fn sigma_ablation(
    model: &SdeModel,
    m: usize,
    permutations: &[Permutation],
    n_grid: &[usize],
    replicates: u64,
    master_seed: u64,
) -> Result<AblationReport> {
    if m < 3 {
        return Err(Error::invalid(
            "the ablation needs m >= 3; for m = 2 the reversal is the only non-identity permutation",
        ));
    }
    if permutations.is_empty() || n_grid.is_empty() {
        return Err(Error::invalid("need at least one permutation and one resolution"));
    }
    if replicates < 2 {
        return Err(Error::invalid("need at least 2 replicates"));
    }
    for sigma in permutations {
        if sigma.order() != m {
            return Err(Error::invalid(format!(
                "permutation {} does not have order {m}",
                sigma.label()
            )));
        }
        if sigma.is_identity() {
            return Err(Error::invalid(
                "the identity permutation is not an antithetic coupling",
            ));
        }
    }
    let d = model.dim_state();
    let n_sigma = permutations.len();
    let mut series: Vec<AblationSeries> = permutations
        .iter()
        .map(|sigma| AblationSeries {
            sigma: sigma.label(),
            strictly_decreasing: *sigma == Permutation::reversal(m),
            cells: Vec::with_capacity(n_grid.len()),
        })
        .collect();
    for &n in n_grid {
        let parts = par_chunked(replicates, |range| {
            let mut engine = CoupledEngine::new(model);
            let mut grid = FineIncrementGrid::from_values(1, 2, 1, vec![0.0, 0.0]).expect("shape");
            let mut accs: Vec<CoAccum> = (0..n_sigma).map(|_| CoAccum::new(d)).collect();
            let mut v = vec![0.0; d];
            for rep in range {
                let key = StreamKey::new(master_seed, Purpose::Rates, n as i64, rep);
                sample_grid_into(&key, n, m, model.dim_noise(), &mut grid)?;
                for (sigma, acc) in permutations.iter().zip(&mut accs) {
                    engine.run_grid(model, &grid, sigma, None)?;
                    for l in 0..d {
                        v[l] = 0.5 * (engine.fine[l] + engine.antithetic[l]) - engine.coarse[l];
                    }
                    acc.push(&v);
                }
            }
            Ok(accs)
        })?;
        for (s, serie) in series.iter_mut().enumerate() {
            let mut total = CoAccum::new(d);
            for part in &parts {
                total.merge(&part[s]);
            }
            let total_var: f64 = (0..d).map(|l| total.variance(l)).sum();
            serie.cells.push(AblationCell {
                n,
                scaled_variance: (n * n) as f64 * total_var,
            });
        }
    }
    let largest = n_grid.iter().copied().max().unwrap();
    let at_largest = |s: &AblationSeries| -> f64 {
        s.cells
            .iter()
            .find(|c| c.n == largest)
            .map(|c| c.scaled_variance)
            .unwrap_or(f64::NAN)
    };
    let reversal_minimal_at_largest_n = series
        .iter()
        .find(|s| s.strictly_decreasing)
        .map(|rev| {
            let rv = at_largest(rev);
            series.iter().all(|s| at_largest(s) >= rv - 1e-12)
        });
    Ok(AblationReport {
        model: model.name().to_string(),
        m,
        replicates,
        master_seed,
        series,
        reversal_minimal_at_largest_n,
    })
}
