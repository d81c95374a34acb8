//! SDE data model: drift, diffusion, diffusion Jacobians, the derived
//! h-tensor, built-in test models and regularity checks.
//!
//! The scheme only ever needs f, g and the gradients of g (through the
//! h-tensor); second derivatives are deliberately not part of the
//! contract.

use crate::error::{Error, Result};
use serde::Serialize;
use std::fmt;
use std::sync::Arc;

/// Writes coefficient values into a caller-provided buffer.
type CoeffFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianKind {
    Analytic,
    /// Central finite differences of the diffusion with step
    /// `1e-5 * (1 + |x_l|)`; diagnostics widen tolerances for these.
    FiniteDifference,
}

/// An autonomous d-dimensional SDE driven by q-dimensional Brownian
/// noise on the unit time interval:
/// `dX = f(X) dt + g(X) dW`, starting at `x0`.
///
/// Values are immutable after construction and cheap to clone; all
/// evaluations are pure, so models can be shared across workers.
#[derive(Clone)]
pub struct SdeModel {
    name: String,
    dim_state: usize,
    dim_noise: usize,
    initial_state: Vec<f64>,
    drift: CoeffFn,
    diffusion: CoeffFn,
    jacobian: CoeffFn,
    jacobian_kind: JacobianKind,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("name", &self.name)
            .field("dim_state", &self.dim_state)
            .field("dim_noise", &self.dim_noise)
            .field("initial_state", &self.initial_state)
            .field("jacobian_kind", &self.jacobian_kind)
            .finish()
    }
}

impl SdeModel {
    /// Build a model with an analytic diffusion Jacobian.
    ///
    /// `drift` fills d values, `diffusion` fills d*q values (row-major
    /// over (l, j)), and `jacobian` fills d*q*d values laid out as
    /// (l, j, l') = dg_{lj}/dx_{l'}.
    pub fn new(
        name: impl Into<String>,
        dim_state: usize,
        dim_noise: usize,
        initial_state: Vec<f64>,
        drift: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        jacobian: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        let model = SdeModel {
            name: name.into(),
            dim_state,
            dim_noise,
            initial_state,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            jacobian: Arc::new(jacobian),
            jacobian_kind: JacobianKind::Analytic,
        };
        model.validate()?;
        Ok(model)
    }

    /// Build a model without analytic derivatives; the Jacobian falls
    /// back to central finite differences of the diffusion.
    pub fn new_with_fd_jacobian(
        name: impl Into<String>,
        dim_state: usize,
        dim_noise: usize,
        initial_state: Vec<f64>,
        drift: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        let diffusion: CoeffFn = Arc::new(diffusion);
        let g = Arc::clone(&diffusion);
        let (d, q) = (dim_state, dim_noise);
        let jacobian = move |x: &[f64], out: &mut [f64]| {
            let mut xp = x.to_vec();
            let mut gp = vec![0.0; d * q];
            let mut gm = vec![0.0; d * q];
            for lp in 0..d {
                let h = 1e-5 * (1.0 + x[lp].abs());
                xp[lp] = x[lp] + h;
                g(&xp, &mut gp);
                xp[lp] = x[lp] - h;
                g(&xp, &mut gm);
                xp[lp] = x[lp];
                for l in 0..d {
                    for j in 0..q {
                        out[(l * q + j) * d + lp] = (gp[l * q + j] - gm[l * q + j]) / (2.0 * h);
                    }
                }
            }
        };
        let model = SdeModel {
            name: name.into(),
            dim_state,
            dim_noise,
            initial_state,
            drift: Arc::new(drift),
            diffusion,
            jacobian: Arc::new(jacobian),
            jacobian_kind: JacobianKind::FiniteDifference,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.dim_state == 0 || self.dim_noise == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.initial_state.len() != self.dim_state {
            return Err(Error::invalid(format!(
                "initial state has length {}, expected {}",
                self.initial_state.len(),
                self.dim_state
            )));
        }
        if !self.initial_state.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("initial state must be finite"));
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial_state
    }

    pub fn jacobian_kind(&self) -> JacobianKind {
        self.jacobian_kind
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out);
    }

    #[inline]
    pub fn diffusion_into(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out);
    }

    #[inline]
    pub fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        (self.jacobian)(x, out);
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_state];
        self.drift_into(x, &mut out);
        out
    }

    /// Diffusion matrix, row-major (l, j).
    pub fn diffusion(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_state * self.dim_noise];
        self.diffusion_into(x, &mut out);
        out
    }

    /// All gradients of the diffusion, laid out (l, j, l').
    pub fn diffusion_jacobian(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_state * self.dim_noise * self.dim_state];
        self.jacobian_into(x, &mut out);
        out
    }
}

/// The tensor h_{l j j'}(x) = 1/2 grad(g_{lj})^T(x) g_{.j'}(x) driving
/// the second-order term of the truncated Milstein step.
#[derive(Clone, Debug, PartialEq)]
pub struct HTensor {
    pub dim_state: usize,
    pub dim_noise: usize,
    entries: Vec<f64>, // (l, j, j') row-major
}

impl HTensor {
    #[inline]
    pub fn get(&self, l: usize, j: usize, jp: usize) -> f64 {
        self.entries[(l * self.dim_noise + j) * self.dim_noise + jp]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// max over (l, j, j') of |h_{ljj'} - h_{lj'j}|.
    pub fn commutativity_defect(&self) -> f64 {
        let (d, q) = (self.dim_state, self.dim_noise);
        let mut defect: f64 = 0.0;
        for l in 0..d {
            for j in 0..q {
                for jp in 0..q {
                    defect = defect.max((self.get(l, j, jp) - self.get(l, jp, j)).abs());
                }
            }
        }
        defect
    }
}

/// Evaluate the h-tensor at `x`:
/// h_{l j j'} = 1/2 sum_{l'} (dg_{lj}/dx_{l'}) g_{l' j'}.
pub fn h_tensor(model: &SdeModel, x: &[f64]) -> Result<HTensor> {
    let (d, q) = (model.dim_state(), model.dim_noise());
    if x.len() != d || !x.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid(format!(
            "evaluation point must be a finite vector of length {d}"
        )));
    }
    let g = model.diffusion(x);
    let jac = model.diffusion_jacobian(x);
    if !g.iter().all(|v| v.is_finite()) || !jac.iter().all(|v| v.is_finite()) {
        return Err(Error::Evaluation { x: x.to_vec() });
    }
    let mut entries = vec![0.0; d * q * q];
    h_tensor_into(&g, &jac, d, q, &mut entries);
    Ok(HTensor {
        dim_state: d,
        dim_noise: q,
        entries,
    })
}

/// Core contraction shared with the stepping hot loop; `g` is (l, j),
/// `jac` is (l, j, l'), `out` is (l, j, j').
#[inline]
pub(crate) fn h_tensor_into(g: &[f64], jac: &[f64], d: usize, q: usize, out: &mut [f64]) {
    for l in 0..d {
        for j in 0..q {
            let grad = &jac[(l * q + j) * d..(l * q + j + 1) * d];
            for jp in 0..q {
                let mut acc = 0.0;
                for lp in 0..d {
                    acc += grad[lp] * g[lp * q + jp];
                }
                out[(l * q + j) * q + jp] = 0.5 * acc;
            }
        }
    }
}

/// max |h_{ljj'} - h_{lj'j}| at `x`; zero everywhere exactly when the
/// diffusion commutes (always for q = 1 or constant g).
pub fn commutativity_defect(model: &SdeModel, x: &[f64]) -> Result<f64> {
    Ok(h_tensor(model, x)?.commutativity_defect())
}

#[derive(Clone, Debug, Serialize)]
pub struct RegularityReport {
    pub model: String,
    pub jacobian_kind: JacobianKind,
    pub probes: usize,
    pub tolerance: f64,
    /// Largest scale-protected relative deviation between the model's
    /// Jacobian and central finite differences of its diffusion.
    pub max_deviation: f64,
    pub pass: bool,
}

/// Compare the model's diffusion Jacobian against central finite
/// differences of its diffusion at each probe point.
pub fn check_regularity(
    model: &SdeModel,
    probe_points: &[Vec<f64>],
    tol: f64,
) -> Result<RegularityReport> {
    if probe_points.is_empty() {
        return Err(Error::invalid("check_regularity needs at least one probe point"));
    }
    let (d, q) = (model.dim_state(), model.dim_noise());
    let mut max_dev: f64 = 0.0;
    let mut gp = vec![0.0; d * q];
    let mut gm = vec![0.0; d * q];
    for x in probe_points {
        if x.len() != d {
            return Err(Error::invalid(format!(
                "probe point {x:?} has wrong dimension, expected {d}"
            )));
        }
        let jac = model.diffusion_jacobian(x);
        let mut xp = x.clone();
        for lp in 0..d {
            let h = 1e-5 * (1.0 + x[lp].abs());
            xp[lp] = x[lp] + h;
            model.diffusion_into(&xp, &mut gp);
            xp[lp] = x[lp] - h;
            model.diffusion_into(&xp, &mut gm);
            xp[lp] = x[lp];
            for l in 0..d {
                for j in 0..q {
                    let fd = (gp[l * q + j] - gm[l * q + j]) / (2.0 * h);
                    let an = jac[(l * q + j) * d + lp];
                    let dev = (an - fd).abs() / an.abs().max(1.0);
                    max_dev = max_dev.max(dev);
                }
            }
        }
    }
    Ok(RegularityReport {
        model: model.name().to_string(),
        jacobian_kind: model.jacobian_kind(),
        probes: probe_points.len(),
        tolerance: tol,
        max_deviation: max_dev,
        pass: max_dev <= tol,
    })
}

/// A scalar payoff evaluated at the terminal state.
#[derive(Clone)]
pub struct Payoff {
    id: String,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Payoff").field("id", &self.id).finish()
    }
}

impl Payoff {
    pub fn new(id: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Payoff {
            id: id.into(),
            f: Arc::new(f),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// Numeric parameters accepted by the model registry. Unset fields use
/// the model defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ModelParams {
    /// Initial state override (length must match the model dimension).
    pub x0: Option<Vec<f64>>,
    /// gbm-1d drift coefficient.
    pub mu: Option<f64>,
    /// gbm-1d diffusion coefficient.
    pub sigma: Option<f64>,
    /// additive-2d constant drift vector (length 2).
    pub drift: Option<Vec<f64>>,
    /// additive-2d constant diffusion matrix, row-major (length 4).
    pub gmat: Option<Vec<f64>>,
}

pub const MODEL_IDS: [&str; 4] = ["clark-cameron", "additive-2d", "trig-2d", "gbm-1d"];

/// Instantiate a built-in model by registry id.
pub fn build_model(id: &str, params: &ModelParams) -> Result<SdeModel> {
    match id {
        "clark-cameron" => clark_cameron(params),
        "additive-2d" => additive_2d(params),
        "trig-2d" => trig_2d(params),
        "gbm-1d" => gbm_1d(params),
        other => Err(Error::invalid(format!(
            "unknown model id {other:?}; known ids: {MODEL_IDS:?}"
        ))),
    }
}

fn take_x0(params: &ModelParams, default: &[f64]) -> Result<Vec<f64>> {
    match &params.x0 {
        None => Ok(default.to_vec()),
        Some(v) if v.len() == default.len() => Ok(v.clone()),
        Some(v) => Err(Error::invalid(format!(
            "x0 override has length {}, expected {}",
            v.len(),
            default.len()
        ))),
    }
}

/// Clark-Cameron system: d = q = 2, zero drift,
/// g = [[1, 0], [0, x1]]. The only nonzero h entry is h_{221} = 1/2,
/// so the commutativity defect is 1/2 everywhere and the second state
/// is the iterated integral of W1 against W2.
fn clark_cameron(params: &ModelParams) -> Result<SdeModel> {
    let x0 = take_x0(params, &[0.0, 0.0])?;
    SdeModel::new(
        "clark-cameron",
        2,
        2,
        x0,
        |_x, f| f.fill(0.0),
        |x, g| {
            g[0] = 1.0;
            g[1] = 0.0;
            g[2] = 0.0;
            g[3] = x[0];
        },
        |_x, jac| {
            jac.fill(0.0);
            // dg_{22}/dx_1 = 1, laid out at (l=1, j=1, l'=0).
            jac[(1 * 2 + 1) * 2 + 0] = 1.0;
        },
    )
}

/// Constant-coefficient two-dimensional system: the h-tensor vanishes
/// and the truncated Milstein scheme degenerates to Euler, which makes
/// the coupled legs coincide pathwise.
fn additive_2d(params: &ModelParams) -> Result<SdeModel> {
    let x0 = take_x0(params, &[0.0, 0.0])?;
    let drift = match &params.drift {
        None => vec![0.3, -0.2],
        Some(v) if v.len() == 2 => v.clone(),
        Some(v) => {
            return Err(Error::invalid(format!(
                "additive-2d drift must have length 2, got {}",
                v.len()
            )))
        }
    };
    let gmat = match &params.gmat {
        None => vec![1.0, 0.2, 0.1, 0.8],
        Some(v) if v.len() == 4 => v.clone(),
        Some(v) => {
            return Err(Error::invalid(format!(
                "additive-2d gmat must have length 4, got {}",
                v.len()
            )))
        }
    };
    SdeModel::new(
        "additive-2d",
        2,
        2,
        x0,
        move |_x, f| f.copy_from_slice(&drift),
        move |_x, g| g.copy_from_slice(&gmat),
        |_x, jac| jac.fill(0.0),
    )
}

/// Bounded-coefficient two-dimensional system with trigonometric
/// diffusion entries; all coefficient derivatives are globally bounded
/// and the diffusion does not commute.
fn trig_2d(params: &ModelParams) -> Result<SdeModel> {
    let x0 = take_x0(params, &[0.5, 0.3])?;
    SdeModel::new(
        "trig-2d",
        2,
        2,
        x0,
        |x, f| {
            f[0] = 0.2 * x[1].sin();
            f[1] = 0.2 * x[0].cos();
        },
        |x, g| {
            g[0] = x[1].cos();
            g[1] = 0.5;
            g[2] = 0.3;
            g[3] = x[0].sin();
        },
        |x, jac| {
            jac.fill(0.0);
            // dg_{11}/dx_2 = -sin(x2)
            jac[(0 * 2 + 0) * 2 + 1] = -x[1].sin();
            // dg_{22}/dx_1 = cos(x1)
            jac[(1 * 2 + 1) * 2 + 0] = x[0].cos();
        },
    )
}

/// Scalar geometric Brownian motion, dX = mu X dt + sigma X dW.
fn gbm_1d(params: &ModelParams) -> Result<SdeModel> {
    let x0 = take_x0(params, &[1.0])?;
    let mu = params.mu.unwrap_or(0.0);
    let sigma = params.sigma.unwrap_or(1.0);
    if !mu.is_finite() || !sigma.is_finite() {
        return Err(Error::invalid("gbm-1d parameters must be finite"));
    }
    SdeModel::new(
        "gbm-1d",
        1,
        1,
        x0,
        move |x, f| f[0] = mu * x[0],
        move |x, g| g[0] = sigma * x[0],
        move |_x, jac| jac[0] = sigma,
    )
}

pub const PAYOFF_IDS: [&str; 4] = ["x1", "x2", "x2sq", "const"];

/// Instantiate a built-in payoff by id. `x2` and `x2sq` require a
/// state dimension of at least two.
pub fn build_payoff(id: &str, dim_state: usize, const_value: f64) -> Result<Payoff> {
    match id {
        "x1" => Ok(Payoff::new("x1", |x: &[f64]| x[0])),
        "x2" if dim_state >= 2 => Ok(Payoff::new("x2", |x: &[f64]| x[1])),
        "x2sq" if dim_state >= 2 => Ok(Payoff::new("x2sq", |x: &[f64]| x[1] * x[1])),
        "x2" | "x2sq" => Err(Error::invalid(format!(
            "payoff {id:?} needs a model with at least 2 state dimensions, got {dim_state}"
        ))),
        "const" => Ok(Payoff::new("const", move |_| const_value)),
        other => Err(Error::invalid(format!(
            "unknown payoff id {other:?}; known ids: {PAYOFF_IDS:?}"
        ))),
    }
}
