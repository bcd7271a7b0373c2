//! Regularized least-squares volume reconstruction:
//!
//! `min_x ||I - S H x||^2 + lambda_tv ||grad x||_1 + lambda_l1 ||x||_1`,
//!
//! solved with Adam, optionally jointly with per-pixel per-channel
//! multiplicative weights on the predicted channel images.

use ndarray::{Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{ForwardOperator, Measurement, Volume3D};
use crate::mask::PsfStack;

/// Weight learning rate relative to the scene's.
pub const WEIGHT_LR_RATIO: f64 = 0.1;
/// Lower bound keeping estimated weights positive.
pub const MIN_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    pub lambda_tv: f64,
    pub lambda_l1: f64,
    pub iterations: usize,
    pub step_size: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub nonneg: bool,
    pub estimate_weights: bool,
    pub seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            lambda_tv: 0.0,
            lambda_l1: 0.0,
            iterations: 2000,
            step_size: 0.05,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            nonneg: true,
            estimate_weights: false,
            seed: 0,
        }
    }
}

impl ReconConfig {
    /// Named regularization presets: `usaf`, `beads`, `strands`.
    pub fn preset(name: &str) -> Result<ReconConfig> {
        let (lambda_l1, lambda_tv) = match name {
            "usaf" => (0.02, 0.005),
            "beads" => (0.05, 0.0),
            "strands" => (0.002, 0.002),
            other => return Err(Error::param("preset", format!("unknown preset `{other}` (usaf, beads, strands)"))),
        };
        Ok(ReconConfig { lambda_l1, lambda_tv, ..ReconConfig::default() })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_tv >= 0.0) || !(self.lambda_l1 >= 0.0) {
            return Err(Error::param("lambda", "regularization weights must be non-negative"));
        }
        if self.iterations == 0 {
            return Err(Error::param("iterations", "at least one iteration is required"));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::param("step_size", "must be positive"));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::param("adam_betas", "must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::param("adam_eps", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    pub volume: Volume3D,
    /// `[channel][y][x]` multiplicative weights, when estimated.
    pub weights: Option<Array3<f64>>,
    /// Objective before each iteration, then at the final iterate.
    pub loss_trace: Vec<f64>,
    /// Final data term `||I - S H x||^2`.
    pub data_residual: f64,
    pub converged: bool,
}

/// Relative loss change below which the final iterate counts as converged.
pub const CONVERGENCE_TOL: f64 = 1e-5;

/// A measurement paired with the forward operator of a stack.
pub struct Problem<'a> {
    pub meas: &'a Measurement,
    pub op: ForwardOperator,
    pub template: Volume3D,
}

impl<'a> Problem<'a> {
    /// Sets up the reconstruction grid from the stack planes (uniform
    /// spacing required) and the measurement's image size, and selects the
    /// stack channels named by the measurement.
    pub fn new(meas: &'a Measurement, stack: &PsfStack) -> Result<Self> {
        let stack = stack.select(&meas.channels)?;
        let (h, w) = meas.image_shape();
        let n = stack.n_z();
        let (lo, hi) = stack.z_range();
        let dz = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 1.0 };
        if stack.z_samples.iter().enumerate().any(|(k, z)| (z - (lo + k as f64 * dz)).abs() > 1e-6 * dz) {
            return Err(Error::param("stack", "reconstruction needs uniformly spaced stack planes"));
        }
        let template = Volume3D::new(Array3::zeros((n, h, w)), (stack.pitch, stack.pitch, dz), lo)?;
        let op = ForwardOperator::new(&template, &stack)?;
        Ok(Problem { meas, op, template })
    }

    /// As [`Problem::new`] on an explicit scene grid.
    pub fn on_grid(meas: &'a Measurement, stack: &PsfStack, template: &Volume3D) -> Result<Self> {
        let stack = stack.select(&meas.channels)?;
        let (_, h, w) = template.values.dim();
        if (h, w) != meas.image_shape() {
            return Err(Error::ShapeMismatch { expected: vec![h, w], found: vec![meas.image_shape().0, meas.image_shape().1] });
        }
        let op = ForwardOperator::new(template, &stack)?;
        Ok(Problem { meas, op, template: template.with_values(Array3::zeros(template.values.dim()))? })
    }
}

/// Anisotropic TV with forward differences and a reflective boundary.
pub fn total_variation(x: &Array3<f64>) -> f64 {
    let mut tv = 0.0;
    for ax in 0..3 {
        let n = x.len_of(Axis(ax));
        if n < 2 {
            continue;
        }
        let a = x.slice_axis(Axis(ax), (1..n).into());
        let b = x.slice_axis(Axis(ax), (0..n - 1).into());
        tv += Zip::from(&a).and(&b).fold(0.0, |acc, p, q| acc + (p - q).abs());
    }
    tv
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Subgradient of [`total_variation`], with sign(0) = 0.
pub fn tv_subgradient(x: &Array3<f64>) -> Array3<f64> {
    let mut g = Array3::zeros(x.dim());
    for ax in 0..3 {
        let n = x.len_of(Axis(ax));
        if n < 2 {
            continue;
        }
        let a = x.slice_axis(Axis(ax), (1..n).into());
        let b = x.slice_axis(Axis(ax), (0..n - 1).into());
        let s = Zip::from(&a).and(&b).map_collect(|p, q| sign(p - q));
        let mut hi = g.slice_axis_mut(Axis(ax), (1..n).into());
        hi += &s;
        let mut lo = g.slice_axis_mut(Axis(ax), (0..n - 1).into());
        lo -= &s;
    }
    g
}

fn predicted(op: &ForwardOperator, x: &Array3<f64>, weights: Option<&Array3<f64>>) -> Result<(Array3<f64>, Array3<f64>)> {
    let ax = op.apply(x)?;
    let pred = match weights {
        Some(w) => &ax * w,
        None => ax.clone(),
    };
    Ok((ax, pred))
}

fn regularizer(x: &Array3<f64>, cfg: &ReconConfig) -> f64 {
    let mut r = 0.0;
    if cfg.lambda_tv > 0.0 {
        r += cfg.lambda_tv * total_variation(x);
    }
    if cfg.lambda_l1 > 0.0 {
        r += cfg.lambda_l1 * x.iter().map(|v| v.abs()).sum::<f64>();
    }
    r
}

/// The full objective at `x` (weights fixed at 1).
pub fn objective(x: &Volume3D, problem: &Problem<'_>, cfg: &ReconConfig) -> Result<f64> {
    let (_, pred) = predicted(&problem.op, &x.values, None)?;
    let data = (&problem.meas.images - &pred).mapv(|r| r * r).sum();
    Ok(data + regularizer(&x.values, cfg))
}

/// Gradient (subgradient for the L1 terms) of [`objective`].
pub fn gradient(x: &Volume3D, problem: &Problem<'_>, cfg: &ReconConfig) -> Result<Array3<f64>> {
    let (_, pred) = predicted(&problem.op, &x.values, None)?;
    let residual = &pred - &problem.meas.images;
    let mut g = problem.op.adjoint(&residual)? * 2.0;
    add_regularizer_gradient(&mut g, &x.values, cfg);
    Ok(g)
}

fn add_regularizer_gradient(g: &mut Array3<f64>, x: &Array3<f64>, cfg: &ReconConfig) {
    if cfg.lambda_tv > 0.0 {
        g.scaled_add(cfg.lambda_tv, &tv_subgradient(x));
    }
    if cfg.lambda_l1 > 0.0 {
        Zip::from(g).and(x).for_each(|g, v| *g += cfg.lambda_l1 * sign(*v));
    }
}

struct Adam {
    m: Array3<f64>,
    v: Array3<f64>,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
}

impl Adam {
    fn new(shape: (usize, usize, usize), lr: f64, cfg: &ReconConfig) -> Self {
        Adam { m: Array3::zeros(shape), v: Array3::zeros(shape), lr, b1: cfg.adam_betas.0, b2: cfg.adam_betas.1, eps: cfg.adam_eps }
    }

    fn step(&mut self, x: &mut Array3<f64>, g: &Array3<f64>, t: i32) {
        let (b1, b2, lr, eps) = (self.b1, self.b2, self.lr, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        Zip::from(x).and(&mut self.m).and(&mut self.v).and(g).for_each(|x, m, v, g| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *x -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        });
    }
}

fn run(problem: &Problem<'_>, cfg: &ReconConfig, init: Array3<f64>, estimate_weights: bool) -> Result<ReconResult> {
    cfg.validate()?;
    let meas = &problem.meas.images;
    let mut x = init;
    let mut weights = estimate_weights.then(|| Array3::<f64>::ones(meas.dim()));
    let mut adam_x = Adam::new(x.dim(), cfg.step_size, cfg);
    let mut adam_w = Adam::new(meas.dim(), cfg.step_size * WEIGHT_LR_RATIO, cfg);
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    for it in 0..cfg.iterations {
        let (ax, pred) = predicted(&problem.op, &x, weights.as_ref())?;
        let residual = &pred - meas;
        let loss = residual.mapv(|r| r * r).sum() + regularizer(&x, cfg);
        if !loss.is_finite() {
            trace.push(loss);
            return Err(Error::Diverged { iteration: it, trace });
        }
        trace.push(loss);
        let back = match &weights {
            Some(w) => &residual * w,
            None => residual.clone(),
        };
        let mut gx = problem.op.adjoint(&back)? * 2.0;
        add_regularizer_gradient(&mut gx, &x, cfg);
        let t = it as i32 + 1;
        adam_x.step(&mut x, &gx, t);
        if cfg.nonneg {
            x.mapv_inplace(|v| v.max(0.0));
        }
        if let Some(w) = weights.as_mut() {
            let gw = &residual * &ax * 2.0;
            adam_w.step(w, &gw, t);
            w.mapv_inplace(|v| v.max(MIN_WEIGHT));
        }
    }
    let (_, pred) = predicted(&problem.op, &x, weights.as_ref())?;
    let data_residual = (&pred - meas).mapv(|r| r * r).sum();
    let final_loss = data_residual + regularizer(&x, cfg);
    if !final_loss.is_finite() {
        trace.push(final_loss);
        return Err(Error::Diverged { iteration: cfg.iterations, trace });
    }
    let prev = *trace.last().expect("at least one iteration");
    trace.push(final_loss);
    let converged = (prev - final_loss).abs() <= CONVERGENCE_TOL * prev.abs().max(f64::MIN_POSITIVE);
    Ok(ReconResult { volume: problem.template.with_values(x)?, weights, loss_trace: trace, data_residual, converged })
}

/// Adam from a zero volume.
pub fn solve(problem: &Problem<'_>, cfg: &ReconConfig) -> Result<ReconResult> {
    let init = Array3::zeros(problem.template.values.dim());
    run(problem, cfg, init, false)
}

/// Adam from a given initial volume.
pub fn solve_from(problem: &Problem<'_>, cfg: &ReconConfig, init: &Volume3D) -> Result<ReconResult> {
    if init.values.dim() != problem.template.values.dim() {
        let (a, b, c) = problem.template.values.dim();
        let (d, e, f) = init.values.dim();
        return Err(Error::ShapeMismatch { expected: vec![a, b, c], found: vec![d, e, f] });
    }
    run(problem, cfg, init.values.clone(), false)
}

/// Joint estimate of the volume and per-pixel per-channel weights when
/// `cfg.estimate_weights` is set; otherwise identical to [`solve`].
pub fn solve_with_weights(problem: &Problem<'_>, cfg: &ReconConfig) -> Result<ReconResult> {
    let init = Array3::zeros(problem.template.values.dim());
    run(problem, cfg, init, cfg.estimate_weights)
}
