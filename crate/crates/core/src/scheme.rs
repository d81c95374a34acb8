//! The truncated Milstein step (no Lévy area) and the coupled
//! simulation of coarse, fine and sigma-antithetic fine paths on one
//! shared Brownian grid.
//!
//! One step of the scheme is
//! `x' = x + f(x) dt + g(x) dw + H(x) : (dw dw^T - I_q dt)`,
//! where `H(x)` collects the h-tensor matrices and `:` contracts the
//! noise indices. The fine scheme applies it with `dt = 1/(n m)` to the
//! within-cell increments in ascending order; the antithetic scheme
//! consumes them in sigma-permuted order; the coarse scheme takes the
//! summed increments with `dt = 1/n`.

use crate::error::{Error, Result};
use crate::model::{h_tensor_into, Payoff, SdeModel};
use crate::noise::{sample_grid, FineIncrementGrid, Permutation, StreamKey};

/// Reusable evaluation buffers so the stepping loop never allocates.
#[derive(Clone, Debug)]
pub struct StepScratch {
    f: Vec<f64>,
    g: Vec<f64>,
    jac: Vec<f64>,
    h: Vec<f64>,
    a: Vec<f64>,
    x_next: Vec<f64>,
}

impl StepScratch {
    pub fn new(model: &SdeModel) -> Self {
        let (d, q) = (model.dim_state(), model.dim_noise());
        StepScratch {
            f: vec![0.0; d],
            g: vec![0.0; d * q],
            jac: vec![0.0; d * q * d],
            h: vec![0.0; d * q * q],
            a: vec![0.0; q * q],
            x_next: vec![0.0; d],
        }
    }
}

/// One in-place step; on a non-finite result the caller decides how to
/// tag the failure.
#[inline]
fn raw_step(model: &SdeModel, x: &mut [f64], dt: f64, dw: &[f64], scr: &mut StepScratch) -> bool {
    let d = x.len();
    let q = dw.len();
    model.drift_into(x, &mut scr.f);
    model.diffusion_into(x, &mut scr.g);
    model.jacobian_into(x, &mut scr.jac);
    h_tensor_into(&scr.g, &scr.jac, d, q, &mut scr.h);
    // a = dw dw^T - I_q dt
    for j in 0..q {
        for jp in 0..q {
            scr.a[j * q + jp] = dw[j] * dw[jp];
        }
        scr.a[j * q + j] -= dt;
    }
    let mut finite = true;
    for l in 0..d {
        let mut acc = x[l] + scr.f[l] * dt;
        let grow = &scr.g[l * q..(l + 1) * q];
        for j in 0..q {
            acc += grow[j] * dw[j];
        }
        let hrow = &scr.h[l * q * q..(l + 1) * q * q];
        for t in 0..q * q {
            acc += hrow[t] * scr.a[t];
        }
        scr.x_next[l] = acc;
        finite &= acc.is_finite();
    }
    x.copy_from_slice(&scr.x_next);
    finite
}

/// One truncated Milstein step from `x` with time step `dt` and noise
/// increment `dw`.
pub fn milstein_step(model: &SdeModel, x: &[f64], dt: f64, dw: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.dim_state() || dw.len() != model.dim_noise() {
        return Err(Error::invalid(format!(
            "milstein_step expects x of length {} and dw of length {}",
            model.dim_state(),
            model.dim_noise()
        )));
    }
    if !(dt > 0.0) || !x.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("milstein_step needs finite x and dt > 0"));
    }
    let mut scr = StepScratch::new(model);
    let mut state = x.to_vec();
    if raw_step(model, &mut state, dt, dw, &mut scr) {
        Ok(state)
    } else {
        Err(Error::Divergence { leg: "single", step: 0 })
    }
}

/// Run the scheme over a flat sequence of `steps` increments (row-major
/// (step, q)) with constant `dt`, returning the terminal state.
pub fn milstein_path(
    model: &SdeModel,
    increments: &[f64],
    steps: usize,
    dt: f64,
) -> Result<Vec<f64>> {
    let q = model.dim_noise();
    if increments.len() != steps * q {
        return Err(Error::invalid("increment buffer does not match step count"));
    }
    let mut scr = StepScratch::new(model);
    let mut x = model.initial_state().to_vec();
    for s in 0..steps {
        if !raw_step(model, &mut x, dt, &increments[s * q..(s + 1) * q], &mut scr) {
            return Err(Error::Divergence { leg: "path", step: s });
        }
    }
    Ok(x)
}

/// States of one leg recorded on an equidistant time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|i| i as f64 * self.dt).collect()
    }
}

/// Coarse scheme on the grid's summed increments: n steps of size 1/n.
pub fn simulate_coarse(model: &SdeModel, grid: &FineIncrementGrid) -> Result<Trajectory> {
    check_dims(model, grid)?;
    let q = grid.q;
    let dt = 1.0 / grid.n as f64;
    let coarse = grid.coarse_increments();
    let mut scr = StepScratch::new(model);
    let mut x = model.initial_state().to_vec();
    let mut states = Vec::with_capacity(grid.n + 1);
    states.push(x.clone());
    for i in 0..grid.n {
        if !raw_step(model, &mut x, dt, &coarse[i * q..(i + 1) * q], &mut scr) {
            return Err(Error::Divergence { leg: "coarse", step: i });
        }
        states.push(x.clone());
    }
    Ok(Trajectory { dt, states })
}

/// Fine scheme at full fine resolution: n*m steps of size 1/(n m), the
/// k-th step of cell i consuming the sigma(k)-th increment of that
/// cell. With the identity permutation this is the plain fine scheme.
pub fn simulate_fine(
    model: &SdeModel,
    grid: &FineIncrementGrid,
    sigma: &Permutation,
) -> Result<Trajectory> {
    check_dims(model, grid)?;
    if sigma.order() != grid.m {
        return Err(Error::invalid(format!(
            "permutation order {} does not match grid refinement {}",
            sigma.order(),
            grid.m
        )));
    }
    let dt = 1.0 / (grid.n * grid.m) as f64;
    let mut scr = StepScratch::new(model);
    let mut x = model.initial_state().to_vec();
    let mut states = Vec::with_capacity(grid.n * grid.m + 1);
    states.push(x.clone());
    for i in 0..grid.n {
        for k in 0..grid.m {
            if !raw_step(model, &mut x, dt, grid.delta(i, sigma.image(k)), &mut scr) {
                return Err(Error::Divergence {
                    leg: "fine",
                    step: i * grid.m + k,
                });
            }
            states.push(x.clone());
        }
    }
    Ok(Trajectory { dt, states })
}

fn check_dims(model: &SdeModel, grid: &FineIncrementGrid) -> Result<()> {
    if grid.q != model.dim_noise() {
        return Err(Error::invalid(format!(
            "grid noise dimension {} does not match model ({})",
            grid.q,
            model.dim_noise()
        )));
    }
    Ok(())
}

/// Trajectories of the three legs, recorded at the coarse times i/n
/// (error functionals are evaluated on the coarse grid).
#[derive(Clone, Debug)]
pub struct CoupledTrajectories {
    pub fine: Trajectory,
    pub antithetic: Trajectory,
    pub coarse: Trajectory,
}

/// Terminal values of the fine, sigma-antithetic and coarse schemes
/// driven by one shared Brownian grid.
#[derive(Clone, Debug)]
pub struct CoupledTriple {
    pub n: usize,
    pub m: usize,
    pub sigma: Permutation,
    pub fine_terminal: Vec<f64>,
    pub antithetic_terminal: Vec<f64>,
    pub coarse_terminal: Vec<f64>,
    pub trajectories: Option<CoupledTrajectories>,
}

impl CoupledTriple {
    /// The antithetic average (fine + antithetic)/2, derived on demand.
    pub fn average_terminal(&self) -> Vec<f64> {
        self.fine_terminal
            .iter()
            .zip(&self.antithetic_terminal)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }
}

/// Simulate the three coupled legs on a freshly sampled grid.
pub fn coupled_triple(
    model: &SdeModel,
    key: &StreamKey,
    n: usize,
    m: usize,
    sigma: &Permutation,
    record_trajectories: bool,
) -> Result<CoupledTriple> {
    let grid = sample_grid(key, n, m, model.dim_noise())?;
    coupled_triple_from_grid(model, &grid, sigma, record_trajectories)
}

/// Simulate the three coupled legs on an existing grid.
pub fn coupled_triple_from_grid(
    model: &SdeModel,
    grid: &FineIncrementGrid,
    sigma: &Permutation,
    record_trajectories: bool,
) -> Result<CoupledTriple> {
    let mut engine = CoupledEngine::new(model);
    let mut record = if record_trajectories {
        let dt = 1.0 / grid.n as f64;
        let init = model.initial_state().to_vec();
        Some(CoupledTrajectories {
            fine: Trajectory {
                dt,
                states: vec![init.clone()],
            },
            antithetic: Trajectory {
                dt,
                states: vec![init.clone()],
            },
            coarse: Trajectory {
                dt,
                states: vec![init],
            },
        })
    } else {
        None
    };
    engine.run_grid(model, grid, sigma, record.as_mut())?;
    Ok(CoupledTriple {
        n: grid.n,
        m: grid.m,
        sigma: sigma.clone(),
        fine_terminal: engine.fine.clone(),
        antithetic_terminal: engine.antithetic.clone(),
        coarse_terminal: engine.coarse.clone(),
        trajectories: record,
    })
}

/// Reusable driver for replicate loops: owns the grid and state
/// buffers, so per-replicate work is allocation-free.
pub struct CoupledEngine {
    grid: FineIncrementGrid,
    scr: StepScratch,
    dw_coarse: Vec<f64>,
    cell_scratch: Vec<f64>,
    pub fine: Vec<f64>,
    pub antithetic: Vec<f64>,
    pub coarse: Vec<f64>,
}

impl CoupledEngine {
    pub fn new(model: &SdeModel) -> Self {
        let d = model.dim_state();
        CoupledEngine {
            grid: FineIncrementGrid::from_values(1, 2, 1, vec![0.0, 0.0]).expect("static shape"),
            scr: StepScratch::new(model),
            dw_coarse: vec![0.0; model.dim_noise()],
            cell_scratch: Vec::new(),
            fine: vec![0.0; d],
            antithetic: vec![0.0; d],
            coarse: vec![0.0; d],
        }
    }

    /// Sample a grid for `key` and run the coupled triple on it; the
    /// terminals land in `self.fine`, `self.antithetic`, `self.coarse`.
    pub fn run(
        &mut self,
        model: &SdeModel,
        key: &StreamKey,
        n: usize,
        m: usize,
        sigma: &Permutation,
    ) -> Result<()> {
        let mut grid = std::mem::replace(
            &mut self.grid,
            FineIncrementGrid::from_values(1, 2, 1, vec![0.0, 0.0]).expect("static shape"),
        );
        crate::noise::sample_grid_into(key, n, m, model.dim_noise(), &mut grid)?;
        let out = self.run_grid(model, &grid, sigma, None);
        self.grid = grid;
        out
    }

    /// Run the coupled triple over an existing grid.
    pub fn run_grid(
        &mut self,
        model: &SdeModel,
        grid: &FineIncrementGrid,
        sigma: &Permutation,
        mut record: Option<&mut CoupledTrajectories>,
    ) -> Result<()> {
        check_dims(model, grid)?;
        if sigma.order() != grid.m {
            return Err(Error::invalid(format!(
                "permutation order {} does not match grid refinement {}",
                sigma.order(),
                grid.m
            )));
        }
        let (n, m, q) = (grid.n, grid.m, grid.q);
        let dt_c = 1.0 / n as f64;
        let dt_f = dt_c / m as f64;
        self.fine.copy_from_slice(model.initial_state());
        self.antithetic.copy_from_slice(model.initial_state());
        self.coarse.copy_from_slice(model.initial_state());
        for i in 0..n {
            for k in 0..m {
                if !raw_step(model, &mut self.fine, dt_f, grid.delta(i, k), &mut self.scr) {
                    return Err(Error::Divergence {
                        leg: "fine",
                        step: i * m + k,
                    });
                }
                let dw = grid.delta(i, sigma.image(k));
                if !raw_step(model, &mut self.antithetic, dt_f, dw, &mut self.scr) {
                    return Err(Error::Divergence {
                        leg: "antithetic",
                        step: i * m + k,
                    });
                }
            }
            grid.cell_sum_into(i, &mut self.dw_coarse, &mut self.cell_scratch);
            debug_assert_eq!(self.dw_coarse.len(), q);
            if !raw_step(model, &mut self.coarse, dt_c, &self.dw_coarse, &mut self.scr) {
                return Err(Error::Divergence {
                    leg: "coarse",
                    step: i,
                });
            }
            if let Some(rec) = record.as_deref_mut() {
                rec.fine.states.push(self.fine.clone());
                rec.antithetic.states.push(self.antithetic.clone());
                rec.coarse.states.push(self.coarse.clone());
            }
        }
        Ok(())
    }

    /// Run only the coarse scheme (used for the base MLMC level, where
    /// a single step spans the whole interval). Terminal lands in
    /// `self.coarse`.
    pub fn run_coarse_only(
        &mut self,
        model: &SdeModel,
        key: &StreamKey,
        n: usize,
        m: usize,
    ) -> Result<()> {
        let mut grid = std::mem::replace(
            &mut self.grid,
            FineIncrementGrid::from_values(1, 2, 1, vec![0.0, 0.0]).expect("static shape"),
        );
        crate::noise::sample_grid_into(key, n, m, model.dim_noise(), &mut grid)?;
        let dt = 1.0 / n as f64;
        self.coarse.copy_from_slice(model.initial_state());
        for i in 0..n {
            grid.cell_sum_into(i, &mut self.dw_coarse, &mut self.cell_scratch);
            if !raw_step(model, &mut self.coarse, dt, &self.dw_coarse, &mut self.scr) {
                self.grid = grid;
                return Err(Error::Divergence {
                    leg: "coarse",
                    step: i,
                });
            }
        }
        self.grid = grid;
        Ok(())
    }

    /// Payoff of the antithetic pair minus the coarse leg,
    /// `(phi(fine) + phi(anti))/2 - phi(coarse)`, for the terminals of
    /// the last run.
    pub fn level_correction(&self, payoff: &Payoff) -> f64 {
        0.5 * (payoff.value(&self.fine) + payoff.value(&self.antithetic))
            - payoff.value(&self.coarse)
    }
}

/// Dump coupled trajectories as CSV rows `(leg, i, t, x_1..x_d)`.
pub fn write_trajectories_csv<W: std::io::Write>(
    triple: &CoupledTriple,
    out: &mut W,
) -> std::io::Result<()> {
    let Some(rec) = &triple.trajectories else {
        return Ok(());
    };
    let d = triple.fine_terminal.len();
    let header: Vec<String> = (1..=d).map(|l| format!("x_{l}")).collect();
    writeln!(out, "leg,i,t,{}", header.join(","))?;
    for (leg, traj) in [
        ("fine", &rec.fine),
        ("antithetic", &rec.antithetic),
        ("coarse", &rec.coarse),
    ] {
        for (i, state) in traj.states.iter().enumerate() {
            let cols: Vec<String> = state.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{leg},{i},{:.16e},{}", i as f64 * traj.dt, cols.join(","))?;
        }
    }
    Ok(())
}
