//! Acceptance suite: desk-scale, fixed-seed checks of the library's
//! quantitative claims. One test per criterion; every tolerance is
//! pinned here. Each test prints a single summary line.

use sigma_mlmc::limitlaw::{
    clt_report, level_variance_profile, noise_arrays, noise_variance_report, sigma_ablation,
    strong_rate_report, ErrorFunctional, NoiseVarianceReport,
};
use sigma_mlmc::mlmc::{plan_levels, WeightFamily, WeightKind};
use sigma_mlmc::model::{build_model, build_payoff, h_tensor, ModelParams, SdeModel, MODEL_IDS};
use sigma_mlmc::noise::{sample_grid, Permutation, Purpose, StreamKey};
use sigma_mlmc::scheme::{coupled_triple, simulate_fine};
use std::sync::LazyLock;
use std::time::Instant;

const SEED: u64 = 71;

fn cc() -> SdeModel {
    build_model("clark-cameron", &ModelParams::default()).unwrap()
}

/// The m = 2 and m = 3 noise reports at full acceptance size are shared
/// by criteria 1-4.
static NOISE_M2: LazyLock<NoiseVarianceReport> =
    LazyLock::new(|| noise_variance_report(SEED, 64, 2, 2, 100_000).unwrap());
static NOISE_M3: LazyLock<NoiseVarianceReport> =
    LazyLock::new(|| noise_variance_report(SEED, 64, 3, 2, 100_000).unwrap());

fn variance_of(report: &NoiseVarianceReport, component: &str) -> f64 {
    report
        .variance_rows
        .iter()
        .find(|r| r.component == component)
        .unwrap_or_else(|| panic!("component {component} missing"))
        .empirical
}

#[test]
fn c01_noise_variances_m2() {
    let t0 = Instant::now();
    let report = &*NOISE_M2;
    let z2_21 = variance_of(report, "z2_21");
    let z1_211 = variance_of(report, "z1_211");
    let z1_111 = variance_of(report, "z1_111");
    assert!(
        (z2_21 - 0.5).abs() <= 0.01,
        "Var(z2_21) = {z2_21}, want 0.5 +/- 0.01"
    );
    assert!(
        (z1_211 - 0.25).abs() <= 0.01,
        "Var(z1_211) = {z1_211}, want 0.25 +/- 0.01"
    );
    assert!(
        (z1_111 - 0.5).abs() <= 0.015,
        "Var(z1_111) = {z1_111}, want 0.5 +/- 0.015"
    );
    assert_eq!(
        report.max_abs_z3, 0.0,
        "z3 must vanish identically at m = 2"
    );
    println!(
        "criterion 01 (noise variances, m=2): PASS — Var(z2_21)={z2_21:.4}, Var(z1_211)={z1_211:.4}, \
         Var(z1_111)={z1_111:.4}, max|z3|=0 [{:.1}s]",
        t0.elapsed().as_secs_f64()
    );
}

#[test]
fn c02_noise_variances_m3() {
    let t0 = Instant::now();
    let report = &*NOISE_M3;
    let z3_211 = variance_of(report, "z3_211");
    let z3_111 = variance_of(report, "z3_111");
    let z2_21 = variance_of(report, "z2_21");
    let t_z3_off = 2.0 / 27.0;
    let t_z3_diag = 4.0 / 27.0;
    let t_z2 = 2.0 / 3.0;
    assert!(
        (z3_211 - t_z3_off).abs() <= 0.05 * t_z3_off,
        "Var(z3_211) = {z3_211}, want 2/27 +/- 5%"
    );
    assert!(
        (z3_111 - t_z3_diag).abs() <= 0.05 * t_z3_diag,
        "Var(z3_111) = {z3_111}, want 4/27 +/- 5%"
    );
    assert!(
        (z2_21 - t_z2).abs() <= 0.02 * t_z2,
        "Var(z2_21) = {z2_21}, want 2/3 +/- 2%"
    );
    println!(
        "criterion 02 (noise variances, m=3): PASS — Var(z3_211)={z3_211:.5}, Var(z3_111)={z3_111:.5}, \
         Var(z2_21)={z2_21:.4} [{:.1}s]",
        t0.elapsed().as_secs_f64()
    );
}

#[test]
fn c03_noise_independence() {
    let t0 = Instant::now();
    for (label, report) in [("m=2", &*NOISE_M2), ("m=3", &*NOISE_M3)] {
        assert!(
            report.max_abs_covariance <= report.covariance_bound,
            "{label}: max |cov| {} above 4/sqrt(R) = {}",
            report.max_abs_covariance,
            report.covariance_bound
        );
        for row in &report.covariance_rows {
            assert!(
                row.within_bound,
                "{label}: cov({}, {}) = {} outside bound",
                row.a, row.b, row.covariance
            );
        }
    }
    println!(
        "criterion 03 (independence): PASS — max |cov| {:.5} (m=2), {:.5} (m=3), bound {:.5} [{:.1}s]",
        NOISE_M2.max_abs_covariance,
        NOISE_M3.max_abs_covariance,
        NOISE_M2.covariance_bound,
        t0.elapsed().as_secs_f64()
    );
}

#[test]
fn c04_z0_mean_is_identity() {
    let t0 = Instant::now();
    let report = &*NOISE_M2;
    let mut worst: f64 = 0.0;
    for row in &report.z0_mean_rows {
        let dev = (row.empirical - row.theoretical).abs();
        worst = worst.max(dev);
        assert!(
            dev <= 0.01,
            "mean {} = {} deviates from identity by {dev}",
            row.component,
            row.empirical
        );
    }
    println!(
        "criterion 04 (z0 mean = I_q): PASS — worst entry deviation {worst:.5} [{:.1}s]",
        t0.elapsed().as_secs_f64()
    );
}

#[test]
fn c05_strong_rates_clark_cameron() {
    let t0 = Instant::now();
    let report = strong_rate_report(
        &cc(),
        2,
        &[8, 16, 32, 64, 128, 256],
        4000,
        &Permutation::reversal(2),
        ErrorFunctional::Terminal,
        SEED,
    )
    .unwrap();
    let u = report
        .u_slope
        .expect("U does not degenerate on clark-cameron");
    assert!(
        (-0.60..=-0.40).contains(&u.slope),
        "U slope {} outside [-0.60, -0.40]",
        u.slope
    );
    println!(
        "criterion 05 (strong rate of U): PASS — slope {:+.4} +/- {:.4} [{:.1}s]",
        u.slope,
        u.std_err,
        t0.elapsed().as_secs_f64()
    );
    // The V clause cannot hold on this model: the average of the fine
    // and reversal-antithetic legs reproduces the coarse scheme
    // pathwise (the X2 equation never feeds back, and per cell the
    // averaged increment equals the coarse increment identically), so
    // RMS|V| is float noise (~1e-16) with no power law to fit. The
    // genuine order-1 rate of V is demonstrated on the trig-2d model
    // in c05_supplement_v_rate_on_trig_model.
    let v = report.v_slope.map(|f| f.slope);
    println!(
        "criterion 05 (strong rate of V): FAIL expected — rms|V| = {:.2e}..{:.2e} (exact cancellation), slope fit {:?}",
        report.points.first().unwrap().rms_v,
        report.points.last().unwrap().rms_v,
        v
    );
    assert!(
        !report.v_degenerate && v.map_or(false, |s| (-1.15..=-0.85).contains(&s)),
        "criterion 05 V clause: RMS|V| on clark-cameron is zero up to rounding \
         (antithetic average == coarse scheme pathwise; the paper's V-limit vanishes \
         for this model), so no slope in [-1.15, -0.85] exists; see the V-rate \
         supplement on trig-2d"
    );
}

#[test]
fn c05_supplement_v_rate_on_trig_model() {
    // Not a spec criterion: documents that the order-1 rate of V is
    // real on a model whose average-error limit does not vanish.
    let t0 = Instant::now();
    let model = build_model("trig-2d", &ModelParams::default()).unwrap();
    let report = strong_rate_report(
        &model,
        2,
        &[8, 16, 32, 64, 128, 256],
        4000,
        &Permutation::reversal(2),
        ErrorFunctional::Terminal,
        SEED,
    )
    .unwrap();
    let u = report.u_slope.unwrap();
    let v = report.v_slope.unwrap();
    assert!(
        (-0.60..=-0.40).contains(&u.slope),
        "trig-2d U slope {}",
        u.slope
    );
    assert!(
        (-1.15..=-0.85).contains(&v.slope),
        "trig-2d V slope {}",
        v.slope
    );
    println!(
        "criterion 05 supplement (trig-2d rates): PASS — U slope {:+.4}, V slope {:+.4} [{:.1}s]",
        u.slope,
        v.slope,
        t0.elapsed().as_secs_f64()
    );
}

#[test]
fn c06_level_variance_decay() {
    let t0 = Instant::now();
    let payoff = build_payoff("x2sq", 2, 0.0).unwrap();
    let profile = level_variance_profile(&cc(), &payoff, 2, 6, 10_000, SEED).unwrap();
    let tail: Vec<f64> = profile.rows[3..6].iter().map(|r| r.scaled_variance).collect();
    let hi = tail.iter().cloned().fold(f64::MIN, f64::max);
    let lo = tail.iter().cloned().fold(f64::MAX, f64::min);
    assert!(
        hi / lo < 2.0,
        "scaled variances over levels 4..6 vary by {:.3}x: {tail:?}",
        hi / lo
    );
    println!(
        "criterion 06 (level-variance decay): PASS — m^(2(l-1)) Var_l over l=4..6 \
         in [{lo:.5}, {hi:.5}], ratio {:.3} [{:.1}s]",
        hi / lo,
        t0.elapsed().as_secs_f64()
    );
}

#[test]
fn c07_clt_shape() {
    let t0 = Instant::now();
    let payoff = build_payoff("x2", 2, 0.0).unwrap();
    // kappa = 37.5 puts one estimator run at 9,993,600 step-units,
    // the ~1e7 budget the criterion asks for.
    let report = clt_report(
        &cc(),
        &payoff,
        64,
        2,
        1.0,
        WeightFamily::new(WeightKind::Unit),
        37.5,
        400,
        SEED,
    )
    .unwrap();
    assert!(
        (report.cost_per_estimate - 1e7).abs() < 0.05e7,
        "cost per estimate {} not ~1e7",
        report.cost_per_estimate
    );
    assert!(
        report.p_value > 0.01,
        "KS p-value {} rejects normality",
        report.p_value
    );
    println!(
        "criterion 07 (CLT shape): PASS — KS = {:.4}, p = {:.4}, cost/estimate = {:.0} [{:.0}s]",
        report.ks_statistic,
        report.p_value,
        report.cost_per_estimate,
        t0.elapsed().as_secs_f64()
    );
}

#[test]
fn c08_plan_and_cost_arithmetic() {
    let t0 = Instant::now();
    let unit = WeightFamily::new(WeightKind::Unit);
    let plan = plan_levels(16, 2, 1.0, unit, 1.0).unwrap();
    assert_eq!(plan.sample_sizes, vec![1024, 1024, 256, 64, 16]);
    assert_eq!(plan.paper_cost(), 9600.0);

    // Complexity sweep n = 2^4 .. 2^12: unit weights grow like log n
    // within a 10% ratio band; optimal weights stay below the analytic
    // supremum (2m^2 + m) / (sqrt(m) - 1)^2 of their cost/n^2.
    let grid: Vec<usize> = (4..=12).map(|e| 1usize << e).collect();
    let mut unit_ratio: Vec<f64> = Vec::new();
    let mut optimal_over_n2: Vec<f64> = Vec::new();
    let optimal = WeightFamily::new(WeightKind::Optimal);
    for &n in &grid {
        let pu = plan_levels(n, 2, 1.0, unit, 1.0).unwrap();
        unit_ratio.push(pu.paper_cost() / (n * n) as f64 / (n as f64).ln());
        let po = plan_levels(n, 2, 1.0, optimal, 1.0).unwrap();
        optimal_over_n2.push(po.paper_cost() / (n * n) as f64);
    }
    let u_hi = unit_ratio.iter().cloned().fold(f64::MIN, f64::max);
    let u_lo = unit_ratio.iter().cloned().fold(f64::MAX, f64::min);
    assert!(
        u_hi / u_lo <= 1.10,
        "unit cost/n^2/log n spreads by {:.4}",
        u_hi / u_lo
    );
    let sup = (2.0 * 4.0 + 2.0) / (2f64.sqrt() - 1.0).powi(2);
    for (&n, &c) in grid.iter().zip(&optimal_over_n2) {
        assert!(
            c <= sup * 1.01,
            "optimal cost/n^2 = {c} at n = {n} above the analytic bound {sup}"
        );
    }
    println!(
        "criterion 08 (plan & cost): PASS — N = (1024,1024,256,64,16), paper cost 9600; \
         unit log-growth ratio {:.4}, optimal cost/n^2 <= {:.2} [{:.1}s]",
        u_hi / u_lo,
        sup,
        t0.elapsed().as_secs_f64()
    );
}

#[test]
fn c09_structural_identities() {
    let t0 = Instant::now();
    let model = cc();

    // Identity permutation: antithetic leg bit-equals the fine leg.
    for rep in 0..100 {
        let key = StreamKey::new(SEED, Purpose::Rates, 16, rep);
        let triple = coupled_triple(&model, &key, 16, 2, &Permutation::identity(2), false).unwrap();
        assert_eq!(triple.fine_terminal, triple.antithetic_terminal);
    }

    // simulate_fine(grid, sigma) == simulate_fine(permute(grid, sigma), Id)
    // bitwise, on 1000 random grids.
    let sigma = Permutation::reversal(3);
    let id3 = Permutation::identity(3);
    for rep in 0..1000 {
        let key = StreamKey::new(SEED, Purpose::Rates, 9, rep);
        let grid = sample_grid(&key, 9, 3, 2).unwrap();
        let direct = simulate_fine(&model, &grid, &sigma).unwrap();
        let permuted = simulate_fine(&model, &grid.permuted(&sigma).unwrap(), &id3).unwrap();
        assert_eq!(direct, permuted, "rep {rep}");
    }

    // h-tensor against central finite differences of g, 100 points per
    // built-in model, 1e-6 relative.
    for id in MODEL_IDS {
        let model = build_model(id, &ModelParams::default()).unwrap();
        let (d, q) = (model.dim_state(), model.dim_noise());
        for rep in 0..100u64 {
            let key = StreamKey::new(SEED ^ rep, Purpose::Noise, 1, rep);
            let probe_grid = sample_grid(&key, 1, 2, d).unwrap();
            let x: Vec<f64> = probe_grid.values()[..d].iter().map(|v| v * 8.0).collect();
            let h = h_tensor(&model, &x).unwrap();
            let g = model.diffusion(&x);
            let mut xp = x.clone();
            for l in 0..d {
                for j in 0..q {
                    for jp in 0..q {
                        let mut fd = 0.0;
                        for lp in 0..d {
                            let step = 1e-6 * (1.0 + x[lp].abs());
                            xp[lp] = x[lp] + step;
                            let gp = model.diffusion(&xp)[l * q + j];
                            xp[lp] = x[lp] - step;
                            let gm = model.diffusion(&xp)[l * q + j];
                            xp[lp] = x[lp];
                            fd += (gp - gm) / (2.0 * step) * g[lp * q + jp];
                        }
                        fd *= 0.5;
                        let got = h.get(l, j, jp);
                        assert!(
                            (got - fd).abs() <= 1e-6 * got.abs().max(1.0),
                            "{id}: h[{l},{j},{jp}] = {got} vs finite differences {fd}"
                        );
                    }
                }
            }
        }
    }

    // z2 antisymmetry holds exactly on 1000 grids.
    for rep in 0..1000 {
        let key = StreamKey::new(SEED, Purpose::Noise, 8, rep);
        let grid = sample_grid(&key, 8, 2, 2).unwrap();
        let arrays = noise_arrays(&grid);
        for j in 0..2 {
            for jp in 0..2 {
                assert_eq!(arrays.z2_at(j, jp), -arrays.z2_at(jp, j));
            }
        }
    }
    println!(
        "criterion 09 (structural identities): PASS — bitwise permutation commutation, \
         h-tensor FD agreement, z2 antisymmetry [{:.1}s]",
        t0.elapsed().as_secs_f64()
    );
}

#[test]
fn c10_sigma_ablation() {
    let t0 = Instant::now();
    // Reversal against every other non-identity permutation of order 3.
    let perms = vec![
        Permutation::reversal(3),
        Permutation::from_one_based(&[2, 3, 1]).unwrap(),
        Permutation::from_one_based(&[3, 1, 2]).unwrap(),
        Permutation::from_one_based(&[1, 3, 2]).unwrap(),
        Permutation::from_one_based(&[2, 1, 3]).unwrap(),
    ];
    let report = sigma_ablation(&cc(), 3, &perms, &[9, 27, 81], 4000, SEED).unwrap();
    let at = |s: &sigma_mlmc::limitlaw::AblationSeries, n: usize| {
        s.cells.iter().find(|c| c.n == n).unwrap().scaled_variance
    };
    let reversal = report
        .series
        .iter()
        .find(|s| s.strictly_decreasing)
        .unwrap();
    let rev_81 = at(reversal, 81);
    for s in &report.series {
        assert!(
            at(s, 81) >= rev_81 - 1e-12,
            "{} beats the reversal at n = 81: {} < {}",
            s.sigma,
            at(s, 81),
            rev_81
        );
    }
    assert_eq!(report.reversal_minimal_at_largest_n, Some(true));
    let others: Vec<String> = report
        .series
        .iter()
        .filter(|s| !s.strictly_decreasing)
        .map(|s| format!("{} {:.3e}", s.sigma, at(s, 81)))
        .collect();
    println!(
        "criterion 10 (sigma ablation): PASS — reversal n^2 Var = {rev_81:.3e} at n=81 vs {} [{:.1}s]",
        others.join(", "),
        t0.elapsed().as_secs_f64()
    );
}
