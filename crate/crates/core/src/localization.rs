//! Weighted range multilateration by gradient descent.
//!
//! Minimizes `L(x) = sum_n w_n (|x - p_n| - d_n)^2` over the 3D position `x`.
//! Weights are normalized to sum to one before solving, so the minimizer and
//! the iteration path do not depend on their overall scale.
//!
//! Steps start at `GdConfig::step` and then follow the Barzilai-Borwein
//! estimate of the local curvature; with `line_search` set, each step is
//! halved until the loss strictly decreases.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::measurement::Point3;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub pos: Point3,
    pub range_m: f64,
    /// Reliability weight, usually the inverse reported variance.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GdConfig {
    pub max_iters: usize,
    pub step: f64,
    /// Stop once the position update is shorter than this, m.
    pub tol: f64,
    pub line_search: bool,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            step: 0.5,
            tol: 1e-4,
            line_search: true,
        }
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::Config("gd.max_iters must be >= 1".into()));
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::Config(format!("gd.step must be finite and > 0, got {}", self.step)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("gd.tol must be > 0, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub position: Point3,
    pub converged: bool,
    pub iterations: usize,
    /// Loss after every accepted iterate, starting with the initial point.
    pub loss_trace: Vec<f64>,
}

// Below this separation an anchor's gradient term is skipped for the step.
const COINCIDENT_M: f64 = 1e-9;
// Anchors whose weighted spread has a second principal variance below this
// (m^2) are collinear and cannot fix a 3D position.
const COLLINEAR_VAR_M2: f64 = 1e-6;

struct Problem {
    pos: Vec<Vector3<f64>>,
    range: Vec<f64>,
    weight: Vec<f64>,
}

impl Problem {
    fn new(anchors: &[Anchor]) -> Result<Self> {
        if anchors.len() < 4 {
            return Err(Error::DegenerateGeometry(format!(
                "need at least 4 anchors, got {}",
                anchors.len()
            )));
        }
        let total: f64 = anchors.iter().map(|a| a.weight).sum();
        if anchors.iter().any(|a| !(a.weight >= 0.0) || !a.weight.is_finite()) {
            return Err(Error::domain("anchor weights must be finite and non-negative"));
        }
        if !(total > 0.0) {
            return Err(Error::domain("anchor weights are all zero"));
        }
        if anchors.iter().any(|a| !a.range_m.is_finite()) {
            return Err(Error::domain("anchor ranges must be finite"));
        }
        Ok(Self {
            pos: anchors.iter().map(|a| Vector3::from(a.pos)).collect(),
            range: anchors.iter().map(|a| a.range_m).collect(),
            weight: anchors.iter().map(|a| a.weight / total).collect(),
        })
    }

    fn centroid(&self) -> Vector3<f64> {
        self.pos
            .iter()
            .zip(&self.weight)
            .fold(Vector3::zeros(), |acc, (p, w)| acc + p * *w)
    }

    fn is_collinear(&self) -> bool {
        let c = self.centroid();
        let mut cov = Matrix3::zeros();
        for (p, w) in self.pos.iter().zip(&self.weight) {
            let d = p - c;
            cov += d * d.transpose() * *w;
        }
        let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev[1] < COLLINEAR_VAR_M2
    }

    fn loss(&self, x: &Vector3<f64>) -> f64 {
        self.pos
            .iter()
            .zip(&self.range)
            .zip(&self.weight)
            .map(|((p, d), w)| {
                let r = (x - p).norm() - d;
                w * r * r
            })
            .sum()
    }

    /// Length of the Gauss-Newton step at `x`, an estimate of the distance
    /// to the nearby minimum. Infinite when the normal matrix is singular.
    fn gauss_newton_distance(&self, x: &Vector3<f64>, planar: bool) -> f64 {
        let mut h = Matrix3::zeros();
        let mut g = Vector3::zeros();
        for ((p, d), w) in self.pos.iter().zip(&self.range).zip(&self.weight) {
            let diff = x - p;
            let dist = diff.norm();
            if dist < COINCIDENT_M {
                continue;
            }
            let u = diff / dist;
            h += u * u.transpose() * *w;
            g += u * (*w * (dist - d));
        }
        if planar {
            h.row_mut(2).fill(0.0);
            h.column_mut(2).fill(0.0);
            h[(2, 2)] = 1.0;
            g.z = 0.0;
        }
        h.cholesky().map_or(f64::INFINITY, |c| c.solve(&g).norm())
    }

    fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let mut g = Vector3::zeros();
        for ((p, d), w) in self.pos.iter().zip(&self.range).zip(&self.weight) {
            let diff = x - p;
            let dist = diff.norm();
            if dist < COINCIDENT_M {
                continue;
            }
            g += diff * (2.0 * w * (dist - d) / dist);
        }
        g
    }
}

/// Estimates the 3D position. Starts at the weighted anchor centroid unless
/// `init` is given.
pub fn localize(anchors: &[Anchor], cfg: &GdConfig, init: Option<Point3>) -> Result<Solution> {
    localize_with(anchors, cfg, init, None)
}

/// As [`localize`], optionally holding the altitude fixed at `fixed_z`.
pub fn localize_with(
    anchors: &[Anchor],
    cfg: &GdConfig,
    init: Option<Point3>,
    fixed_z: Option<f64>,
) -> Result<Solution> {
    cfg.validate()?;
    let problem = Problem::new(anchors)?;

    let mut x = init.map(Vector3::from).unwrap_or_else(|| problem.centroid());
    if let Some(z) = fixed_z {
        x.z = z;
    }
    let project = |mut g: Vector3<f64>| {
        if fixed_z.is_some() {
            g.z = 0.0;
        }
        g
    };

    let mut loss = problem.loss(&x);
    let mut trace = vec![loss];
    if problem.is_collinear() {
        return Ok(Solution {
            position: x.into(),
            converged: false,
            iterations: 0,
            loss_trace: trace,
        });
    }

    let mut grad = project(problem.gradient(&x));
    let mut step = cfg.step;
    for iter in 1..=cfg.max_iters {
        if grad.norm() == 0.0 {
            return Ok(done(x, true, iter - 1, trace));
        }
        let mut trial_step = step;
        let mut candidate = x - grad * trial_step;
        let mut cand_loss = problem.loss(&candidate);
        if cfg.line_search {
            while !(cand_loss < loss) {
                trial_step *= 0.5;
                if trial_step < cfg.step * 1e-12 {
                    // no descent left at floating-point resolution
                    return Ok(done(x, true, iter - 1, trace));
                }
                candidate = x - grad * trial_step;
                cand_loss = problem.loss(&candidate);
            }
        }
        if !cand_loss.is_finite() {
            return Ok(done(x, false, iter, trace));
        }

        let s = candidate - x;
        let new_grad = project(problem.gradient(&candidate));
        let y = new_grad - grad;
        x = candidate;
        loss = cand_loss;
        grad = new_grad;
        trace.push(loss);

        let sy = s.dot(&y);
        step = if sy > 0.0 {
            (s.dot(&s) / sy).clamp(cfg.step * 1e-6, cfg.step * 1e6)
        } else {
            cfg.step
        };
        // Short steps also happen far from the minimum along flat directions
        // (altitude above near-coplanar anchors), so the Gauss-Newton
        // distance estimate has to agree.
        if s.norm() < cfg.tol && problem.gauss_newton_distance(&x, fixed_z.is_some()) < cfg.tol {
            return Ok(done(x, true, iter, trace));
        }
    }
    Ok(done(x, false, cfg.max_iters, trace))
}

fn done(x: Vector3<f64>, converged: bool, iterations: usize, loss_trace: Vec<f64>) -> Solution {
    Solution {
        position: x.into(),
        converged,
        iterations,
        loss_trace,
    }
}

/// Weighted range loss at `x`, with weights normalized as the solver sees them.
pub fn objective(anchors: &[Anchor], x: &Point3) -> Result<f64> {
    Ok(Problem::new(anchors)?.loss(&Vector3::from(*x)))
}

pub fn position_error(est: &Point3, truth: &Point3) -> f64 {
    (Vector3::from(*est) - Vector3::from(*truth)).norm()
}
