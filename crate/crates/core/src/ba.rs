//! Sliding-window bundle adjustment over camera poses and per-keypoint
//! inverse-free depths.
//!
//! Each landmark is a pixel in its host frame plus a depth; observations
//! are its tracked positions in other frames. Gauss-Newton steps with mild
//! Levenberg damping eliminate the depths through the Schur complement and
//! solve the reduced camera system.

use crate::geometry::{reproject, reproject_with_jacobians, Intrinsics, Pose, Twist};
use nalgebra::{Cholesky, DMatrix, DVector, Matrix2x6, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaError {
    #[error("reduced camera system is singular even with damping {0}")]
    SingularSystem(f64),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

/// Robust cost `ρ(r)` and IRLS weight `ρ'(r)/r` of the Huber function.
pub fn huber(r: f64, delta: f64) -> (f64, f64) {
    if r <= delta {
        (0.5 * r * r, 1.0)
    } else {
        (delta * (r - 0.5 * delta), delta / r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    /// Window index of the host frame.
    pub host: usize,
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub landmark: usize,
    /// Window index of the observing frame.
    pub target: usize,
    pub measured: Vector2<f64>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaProblem {
    pub intrinsics: Intrinsics,
    pub poses: Vec<Pose>,
    pub fixed: Vec<bool>,
    pub landmarks: Vec<Landmark>,
    pub observations: Vec<Observation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaConfig {
    pub iterations: usize,
    pub huber_delta: f64,
    pub damping: f64,
    /// Damping above which the solve gives up.
    pub max_damping: f64,
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for BaConfig {
    fn default() -> Self {
        Self {
            iterations: 4,
            huber_delta: 2.0,
            damping: 1e-4,
            max_damping: 1e2,
            min_depth: 1e-3,
            max_depth: 1e6,
        }
    }
}

impl BaProblem {
    pub fn validate(&self) -> Result<(), BaError> {
        let bad = |m: String| Err(BaError::InvalidProblem(m));
        let n = self.poses.len();
        if self.fixed.len() != n {
            return bad(format!("{} poses but {} fixed flags", n, self.fixed.len()));
        }
        if !self.fixed.iter().any(|&f| f) {
            return bad("at least one pose must be fixed".into());
        }
        if let Some(l) = self.landmarks.iter().find(|l| l.host >= n || !(l.depth > 0.0)) {
            return bad(format!("landmark hosted at {} with depth {}", l.host, l.depth));
        }
        if let Some(o) = self
            .observations
            .iter()
            .find(|o| o.target >= n || o.landmark >= self.landmarks.len() || !(o.weight >= 0.0))
        {
            return bad(format!("observation {o:?} out of range"));
        }
        Ok(())
    }

    /// Column offset of each free pose in the camera block.
    fn free_index(&self) -> (Vec<Option<usize>>, usize) {
        let mut k = 0;
        let idx = self
            .fixed
            .iter()
            .map(|&f| {
                if f {
                    None
                } else {
                    k += 1;
                    Some(6 * (k - 1))
                }
            })
            .collect();
        (idx, 6 * k)
    }

    /// Robust cost and the number of observations failing cheirality.
    pub fn cost(&self, delta: f64) -> (f64, usize) {
        let mut total = 0.0;
        let mut violations = 0;
        for o in self.observations.iter().filter(|o| o.weight > 0.0) {
            let l = &self.landmarks[o.landmark];
            if l.host == o.target {
                continue;
            }
            match reproject(&self.poses[l.host], &self.poses[o.target], &self.intrinsics, &l.pixel, l.depth) {
                Ok(r) => total += o.weight * huber((r.pixel - o.measured).norm(), delta).0,
                Err(_) => violations += 1,
            }
        }
        (total, violations)
    }
}

/// Normal equations split into camera and depth blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalSystem {
    pub h_cc: DMatrix<f64>,
    pub h_cl: DMatrix<f64>,
    pub h_ll: DVector<f64>,
    pub b_c: DVector<f64>,
    pub b_l: DVector<f64>,
    pub cost: f64,
    /// Observations skipped for failing cheirality.
    pub masked: usize,
}

/// Builds `JᵀWJ` and `JᵀWr` at the current estimate, `W` combining the
/// observation weight and the Huber IRLS weight.
pub fn linearize(problem: &BaProblem, delta: f64) -> NormalSystem {
    let (index, nc) = problem.free_index();
    let nl = problem.landmarks.len();
    let mut sys = NormalSystem {
        h_cc: DMatrix::zeros(nc, nc),
        h_cl: DMatrix::zeros(nc, nl),
        h_ll: DVector::zeros(nl),
        b_c: DVector::zeros(nc),
        b_l: DVector::zeros(nl),
        cost: 0.0,
        masked: 0,
    };
    for o in problem.observations.iter().filter(|o| o.weight > 0.0) {
        let l = &problem.landmarks[o.landmark];
        if l.host == o.target {
            continue;
        }
        let Ok(j) = reproject_with_jacobians(
            &problem.poses[l.host],
            &problem.poses[o.target],
            &problem.intrinsics,
            &l.pixel,
            l.depth,
        ) else {
            sys.masked += 1;
            continue;
        };
        let r = j.pixel - o.measured;
        let (c, hw) = huber(r.norm(), delta);
        sys.cost += o.weight * c;
        let w = o.weight * hw;

        let blocks: [(Option<usize>, &Matrix2x6<f64>); 2] =
            [(index[l.host], &j.d_host), (index[o.target], &j.d_target)];
        for (a, ja) in blocks.iter() {
            let Some(a) = *a else { continue };
            let jtw = ja.transpose() * w;
            let mut bc = sys.b_c.rows_mut(a, 6);
            bc += jtw * r;
            let mut hcl = sys.h_cl.view_mut((a, o.landmark), (6, 1));
            hcl += jtw * j.d_depth;
            for (b, jb) in blocks.iter() {
                let Some(b) = *b else { continue };
                let mut block = sys.h_cc.view_mut((a, b), (6, 6));
                block += jtw * *jb;
            }
        }
        sys.h_ll[o.landmark] += w * j.d_depth.norm_squared();
        sys.b_l[o.landmark] += w * j.d_depth.dot(&r);
    }
    sys
}

/// Damped step `(pose increments, depth increments)` solving
/// `(H + λI) δ = −b` by eliminating the depths; damping is raised ×10 up to
/// `max_lambda` if the reduced system will not factor.
pub fn schur_solve(sys: &NormalSystem, lambda: f64, max_lambda: f64) -> Result<(DVector<f64>, DVector<f64>, f64), BaError> {
    let mut lambda = lambda;
    loop {
        let h_ll = sys.h_ll.map(|v| v + lambda);
        let inv = h_ll.map(|v| 1.0 / v);
        let mut s = sys.h_cc.clone();
        for i in 0..s.nrows() {
            s[(i, i)] += lambda;
        }
        let scaled = DMatrix::from_fn(sys.h_cl.nrows(), sys.h_cl.ncols(), |r, c| sys.h_cl[(r, c)] * inv[c]);
        s -= &scaled * sys.h_cl.transpose();
        let rhs = -&sys.b_c + &scaled * &sys.b_l;
        let sym = (&s + s.transpose()) * 0.5;
        if let Some(chol) = Cholesky::new(sym) {
            let dc = chol.solve(&rhs);
            if dc.iter().all(|v| v.is_finite()) {
                let dl = DVector::from_fn(h_ll.len(), |i, _| {
                    -(sys.b_l[i] + sys.h_cl.column(i).dot(&dc)) * inv[i]
                });
                return Ok((dc, dl, lambda));
            }
        }
        if lambda >= max_lambda {
            return Err(BaError::SingularSystem(lambda));
        }
        lambda = (lambda.max(1e-12) * 10.0).min(max_lambda);
    }
}

/// Outcome of one window optimization.
#[derive(Clone, Debug, PartialEq)]
pub struct BaReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after every accepted iteration, starting with the initial cost.
    pub costs: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
    /// Largest step norm of the last accepted iteration.
    pub last_step: f64,
}

/// Depth update `d·exp(δ/d)`: first-order equal to `d + δ` but never
/// crossing zero.
pub fn retract_depth(depth: f64, delta: f64) -> f64 {
    depth * (delta / depth).exp()
}

fn apply_step(problem: &mut BaProblem, dc: &DVector<f64>, dl: &DVector<f64>, config: &BaConfig) {
    let (index, _) = problem.free_index();
    for (pose, idx) in problem.poses.iter_mut().zip(&index) {
        if let Some(a) = idx {
            let xi = Twist::from_iterator(dc.rows(*a, 6).iter().copied());
            *pose = pose.retract(&xi);
        }
    }
    for (l, d) in problem.landmarks.iter_mut().zip(dl.iter()) {
        l.depth = retract_depth(l.depth, *d).clamp(config.min_depth, config.max_depth);
    }
}

/// Runs up to `config.iterations` damped Gauss-Newton iterations in place.
///
/// A step that raises the robust cost or pushes points behind a camera is
/// undone and the damping raised ×10. On a singular system the problem is
/// restored to its input state.
pub fn ba_optimize(problem: &mut BaProblem, config: &BaConfig) -> Result<BaReport, BaError> {
    problem.validate()?;
    let original = problem.clone();
    let (mut cost, mut violations) = problem.cost(config.huber_delta);
    let mut report = BaReport {
        initial_cost: cost,
        final_cost: cost,
        costs: vec![cost],
        accepted: 0,
        rejected: 0,
        last_step: 0.0,
    };
    let mut lambda = config.damping;
    for _ in 0..config.iterations {
        let sys = linearize(problem, config.huber_delta);
        let (dc, dl, used) = match schur_solve(&sys, lambda, config.max_damping) {
            Ok(x) => x,
            Err(e) => {
                *problem = original;
                return Err(e);
            }
        };
        lambda = used;
        let backup = (problem.poses.clone(), problem.landmarks.clone());
        apply_step(problem, &dc, &dl, config);
        let (new_cost, new_violations) = problem.cost(config.huber_delta);
        if new_cost <= cost && new_violations <= violations {
            cost = new_cost;
            violations = new_violations;
            report.accepted += 1;
            report.costs.push(cost);
            report.last_step = dc.amax().max(dl.amax());
            lambda = (lambda * 0.1).max(config.damping);
        } else {
            problem.poses = backup.0;
            problem.landmarks = backup.1;
            report.rejected += 1;
            if lambda >= config.max_damping {
                break;
            }
            lambda = (lambda * 10.0).min(config.max_damping);
        }
    }
    report.final_cost = cost;
    Ok(report)
}
