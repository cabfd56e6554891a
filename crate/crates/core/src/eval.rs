//! Trajectory metrics and TUM-format trajectory files.
//!
//! ATE is the RMSE of positions after a least-squares similarity alignment.
//! RPE compares relative motions over a fixed ground-truth arc length and is
//! reported per meter travelled.

use crate::geometry::{so3_exp, so3_log, Pose};
use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

/// Maximum timestamp difference when pairing poses, seconds.
pub const ASSOCIATION_TOLERANCE: f64 = 0.02;

/// Default RPE arc length, meters.
pub const DEFAULT_RPE_DELTA: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("timestamps must be strictly increasing (entry {0})")]
    NonMonotonic(usize),
    #[error("no ground-truth pose within {tolerance}s of t={timestamp}")]
    Association { timestamp: f64, tolerance: f64 },
    #[error("need at least 2 poses, found {0}")]
    TooFewPoses(usize),
    #[error("ground-truth path ({length:.3} m) shorter than delta ({delta} m)")]
    PathTooShort { length: f64, delta: f64 },
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    entries: Vec<(f64, Pose)>,
}

impl Trajectory {
    /// Requires strictly increasing timestamps.
    pub fn new(entries: Vec<(f64, Pose)>) -> Result<Self, EvalError> {
        if let Some(i) = entries.windows(2).position(|w| !(w[1].0 > w[0].0)) {
            return Err(EvalError::NonMonotonic(i + 1));
        }
        Ok(Self { entries })
    }

    /// Sorts by timestamp first; duplicates are still rejected.
    pub fn from_unsorted(mut entries: Vec<(f64, Pose)>) -> Result<Self, EvalError> {
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(f64, Pose)] {
        &self.entries
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose> {
        self.entries.iter().map(|(_, p)| p)
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses().map(|p| p.translation).collect()
    }

    /// Largest distance between any two positions.
    pub fn extent(&self) -> f64 {
        let pos = self.positions();
        let mut best = 0.0f64;
        for (i, a) in pos.iter().enumerate() {
            for b in &pos[i + 1..] {
                best = best.max((a - b).norm());
            }
        }
        best
    }

    /// Applies `p ↦ g ∘ p` to every pose.
    pub fn transformed(&self, g: &Pose) -> Trajectory {
        Trajectory {
            entries: self.entries.iter().map(|(t, p)| (*t, g.compose(p))).collect(),
        }
    }

    /// Applies a similarity to every pose: positions map to `s R x + t` and
    /// orientations are rotated by `R`.
    pub fn similarity_transformed(&self, sim: &Similarity) -> Trajectory {
        Trajectory {
            entries: self
                .entries
                .iter()
                .map(|(t, p)| {
                    (
                        *t,
                        Pose::new(sim.rotation * p.rotation, sim.apply(&p.translation)),
                    )
                })
                .collect(),
        }
    }
}

/// Pairs every estimated pose with the nearest ground-truth timestamp.
pub fn associate(est: &Trajectory, gt: &Trajectory, tolerance: f64) -> Result<Vec<(usize, usize)>, EvalError> {
    let g = gt.entries();
    if g.is_empty() {
        return Err(EvalError::TooFewPoses(0));
    }
    let mut pairs = Vec::with_capacity(est.len());
    for (i, (t, _)) in est.entries().iter().enumerate() {
        let j = g.partition_point(|(tg, _)| tg < t);
        let best = [j.checked_sub(1), (j < g.len()).then_some(j)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (g[a].0 - t).abs().total_cmp(&(g[b].0 - t).abs()))
            .expect("non-empty ground truth");
        if (g[best].0 - t).abs() > tolerance {
            return Err(EvalError::Association {
                timestamp: *t,
                tolerance,
            });
        }
        pairs.push((i, best));
    }
    Ok(pairs)
}

/// `x ↦ s R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Set when the points were too few or collinear and only the
    /// translation was estimated.
    pub degenerate: bool,
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            degenerate: false,
        }
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x * self.scale + self.translation
    }
}

/// Least-squares similarity taking `est` onto `gt`.
pub fn umeyama_align(est: &[Vector3<f64>], gt: &[Vector3<f64>], with_scale: bool) -> Similarity {
    assert_eq!(est.len(), gt.len(), "point counts differ");
    let n = est.len().max(1) as f64;
    let mu_e = est.iter().sum::<Vector3<f64>>() / n;
    let mu_g = gt.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_e = 0.0;
    for (e, g) in est.iter().zip(gt) {
        let de = e - mu_e;
        cov += (g - mu_g) * de.transpose();
        var_e += de.norm_squared();
    }
    cov /= n;
    var_e /= n;

    let spread = {
        let mut c = Matrix3::zeros();
        for e in est {
            let de = e - mu_e;
            c += de * de.transpose();
        }
        c.symmetric_eigenvalues()
    };
    let mut sv: Vec<f64> = spread.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if est.len() < 3 || sv[0] <= 0.0 || sv[1] <= 1e-12 * sv[0] {
        return Similarity {
            translation: mu_g - mu_e,
            degenerate: true,
            ..Similarity::identity()
        };
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let scale = if with_scale {
        (Matrix3::from_diagonal(&svd.singular_values) * s).trace() / var_e
    } else {
        1.0
    };
    Similarity {
        scale,
        rotation,
        translation: mu_g - rotation * mu_e * scale,
        degenerate: false,
    }
}

fn paired(est: &Trajectory, gt: &Trajectory) -> Result<(Vec<Pose>, Vec<Pose>), EvalError> {
    let pairs = associate(est, gt, ASSOCIATION_TOLERANCE)?;
    if pairs.len() < 2 {
        return Err(EvalError::TooFewPoses(pairs.len()));
    }
    Ok(pairs
        .iter()
        .map(|&(i, j)| (est.entries()[i].1, gt.entries()[j].1))
        .unzip())
}

fn position_rmse(est: &[Vector3<f64>], gt: &[Vector3<f64>], sim: &Similarity) -> f64 {
    let sum: f64 = est
        .iter()
        .zip(gt)
        .map(|(e, g)| (sim.apply(e) - g).norm_squared())
        .sum();
    (sum / est.len() as f64).sqrt()
}

/// Position RMSE after similarity alignment, meters.
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory) -> Result<f64, EvalError> {
    let (e, g) = paired(est, gt)?;
    let ep: Vec<_> = e.iter().map(|p| p.translation).collect();
    let gp: Vec<_> = g.iter().map(|p| p.translation).collect();
    let sim = umeyama_align(&ep, &gp, true);
    Ok(position_rmse(&ep, &gp, &sim))
}

fn interpolate(a: &Pose, b: &Pose, alpha: f64) -> Pose {
    let rel = so3_log(&(a.rotation.transpose() * b.rotation));
    Pose::new(
        a.rotation * so3_exp(&(rel * alpha)),
        a.translation + (b.translation - a.translation) * alpha,
    )
}

/// Pose at fractional index `k + alpha`.
fn at(poses: &[Pose], k: usize, alpha: f64) -> Pose {
    if alpha <= 0.0 || k + 1 >= poses.len() {
        poses[k]
    } else {
        interpolate(&poses[k], &poses[k + 1], alpha)
    }
}

/// Mean relative translation (m/m) and rotation (deg/m) error over
/// ground-truth arc length `delta`. Poses are compared unaligned.
pub fn rpe(est: &Trajectory, gt: &Trajectory, delta: f64) -> Result<(f64, f64), EvalError> {
    let (e, g) = paired(est, gt)?;
    rpe_paired(&e, &g, delta)
}

fn rpe_paired(e: &[Pose], g: &[Pose], delta: f64) -> Result<(f64, f64), EvalError> {
    let mut arc = vec![0.0];
    for w in g.windows(2) {
        arc.push(arc.last().unwrap() + (w[1].translation - w[0].translation).norm());
    }
    let length = *arc.last().unwrap();
    if !(delta > 0.0) || length < delta {
        return Err(EvalError::PathTooShort { length, delta });
    }
    let (mut sum_t, mut sum_r, mut count) = (0.0, 0.0, 0usize);
    for i in 0..g.len() {
        let target = arc[i] + delta;
        if target > length + 1e-12 {
            break;
        }
        let k = arc.partition_point(|&s| s <= target).saturating_sub(1).min(g.len() - 1);
        let seg = if k + 1 < arc.len() { arc[k + 1] - arc[k] } else { 0.0 };
        let alpha = if seg > 0.0 { ((target - arc[k]) / seg).clamp(0.0, 1.0) } else { 0.0 };
        let g_rel = g[i].inverse().compose(&at(g, k, alpha));
        let e_rel = e[i].inverse().compose(&at(e, k, alpha));
        let err = g_rel.inverse().compose(&e_rel);
        sum_t += err.translation.norm();
        sum_r += err.angle().to_degrees();
        count += 1;
    }
    if count == 0 {
        return Err(EvalError::PathTooShort { length, delta });
    }
    let n = count as f64;
    Ok((sum_t / n / delta, sum_r / n / delta))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub ate: f64,
    pub rpe_trans: f64,
    pub rpe_rot: f64,
}

impl Metrics {
    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        format!(
            "metric,value\nate,{}\nrpe_trans,{}\nrpe_rot,{}\n",
            self.ate, self.rpe_trans, self.rpe_rot
        )
    }
}

/// ATE plus RPE on the estimate rescaled by the ATE alignment scale, so
/// monocular estimates are compared in ground-truth units.
pub fn evaluate(est: &Trajectory, gt: &Trajectory, delta: f64) -> Result<Metrics, EvalError> {
    let (e, g) = paired(est, gt)?;
    let ep: Vec<_> = e.iter().map(|p| p.translation).collect();
    let gp: Vec<_> = g.iter().map(|p| p.translation).collect();
    let sim = umeyama_align(&ep, &gp, true);
    let ate = position_rmse(&ep, &gp, &sim);
    let scaled: Vec<Pose> = e
        .iter()
        .map(|p| Pose::new(p.rotation, p.translation * sim.scale))
        .collect();
    let (rpe_trans, rpe_rot) = rpe_paired(&scaled, &g, delta)?;
    Ok(Metrics {
        ate,
        rpe_trans,
        rpe_rot,
    })
}

/// Non-fatal issue found while reading a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TumWarning {
    pub line: usize,
    pub message: String,
}

fn parse_line(line: &str, no: usize) -> Result<(f64, Pose, Option<TumWarning>), EvalError> {
    let bad = |message: String| EvalError::Parse { line: no, message };
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| bad(format!("'{t}': {e}"))))
        .collect::<Result<_, _>>()?;
    if vals.len() != 8 {
        return Err(bad(format!("expected 8 fields, found {}", vals.len())));
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite value".into()));
    }
    let q = nalgebra::Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
    let norm = q.norm();
    if norm < 1e-12 {
        return Err(bad("zero quaternion".into()));
    }
    let warning = ((norm - 1.0).abs() > 1e-6).then(|| TumWarning {
        line: no,
        message: format!("quaternion norm {norm} renormalized"),
    });
    let rot = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
    Ok((vals[0], Pose::new(rot, Vector3::new(vals[1], vals[2], vals[3])), warning))
}

/// Parses `timestamp tx ty tz qx qy qz qw` lines; `#` lines are comments.
pub fn parse_tum(text: &str) -> Result<(Trajectory, Vec<TumWarning>), EvalError> {
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (t, pose, w) = parse_line(line, i + 1)?;
        entries.push((t, pose));
        warnings.extend(w);
    }
    Ok((Trajectory::new(entries)?, warnings))
}

pub fn read_tum(path: &Path) -> Result<Trajectory, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    Ok(parse_tum(&text)?.0)
}

fn quaternion(r: &Matrix3<f64>) -> [f64; 4] {
    // renormalized so that round-off in `r` never yields a non-unit output
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r))
        .into_inner()
        .normalize();
    let sign = if q.w < 0.0 { -1.0 } else { 1.0 };
    // + 0.0 folds negative zeros
    [q.i * sign + 0.0, q.j * sign + 0.0, q.k * sign + 0.0, q.w * sign + 0.0]
}

pub fn format_tum_line(t: f64, p: &Pose) -> String {
    let q = quaternion(&p.rotation);
    let tr = p.translation.map(|v| v + 0.0);
    format!(
        "{:?} {} {} {} {} {} {} {}",
        t, tr.x, tr.y, tr.z, q[0], q[1], q[2], q[3]
    )
}

pub fn format_tum(traj: &Trajectory) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (t, p) in traj.entries() {
        let _ = writeln!(out, "{}", format_tum_line(*t, p));
    }
    out
}

pub fn write_tum(path: &Path, traj: &Trajectory) -> Result<(), EvalError> {
    std::fs::write(path, format_tum(traj)).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{se3_exp, Twist};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        se3_exp(&Twist::from_fn(|i, _| {
            if i < 3 {
                rng.random_range(-1.5..1.5)
            } else {
                rng.random_range(-5.0..5.0)
            }
        }))
    }

    fn curve(n: usize) -> Trajectory {
        Trajectory::new(
            (0..n)
                .map(|i| {
                    let u = i as f64 * 0.1;
                    let pose = se3_exp(&Twist::new(0.1 * u.sin(), 0.3 * u, 0.0, u.cos(), 2.0 * u, 0.3 * (2.0 * u).sin()));
                    (i as f64 * 0.1, pose)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let t = curve(40);
        assert!(ate_rmse(&t, &t).unwrap() < 1e-12);
        let (a, b) = rpe(&t, &t, 1.0).unwrap();
        assert!(a < 1e-12 && b < 1e-9);
    }

    #[test]
    fn umeyama_recovers_exact_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt: Vec<Vector3<f64>> = (0..30)
            .map(|_| Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
            .collect();
        let r0 = so3_exp(&Vector3::new(0.3, -1.1, 0.7));
        let t0 = Vector3::new(1.0, 2.0, -3.0);
        let est: Vec<_> = gt.iter().map(|g| r0 * g * 2.0 + t0).collect();
        let sim = umeyama_align(&est, &gt, true);
        assert!((sim.scale - 0.5).abs() < 1e-12);
        assert!((sim.rotation - r0.transpose()).abs().max() < 1e-12);
        assert!(position_rmse(&est, &gt, &sim) < 1e-12);

        let same = umeyama_align(&gt, &gt, true);
        assert!((same.scale - 1.0).abs() < 1e-12);
        assert!((same.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(same.translation.norm() < 1e-12);
        assert_eq!(umeyama_align(&est, &gt, false).scale, 1.0);
    }

    #[test]
    fn umeyama_noise_level_sanity() {
        // with n points and isotropic noise σ per axis the aligned RMSE
        // approaches σ·√3·√(1 − 7/(3n)), well inside ±20% of σ√3 for n = 200
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let normal = rand_distr::Normal::new(0.0, 0.05).unwrap();
        let mut ratios = Vec::new();
        for _ in 0..50 {
            let gt: Vec<Vector3<f64>> = (0..200)
                .map(|_| Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
                .collect();
            let r0 = so3_exp(&Vector3::new(rng.random_range(-1.0..1.0), 0.4, -0.2));
            let est: Vec<_> = gt
                .iter()
                .map(|g| {
                    let n = Vector3::from_fn(|_, _| rng.sample(normal));
                    r0 * (g + n) * 1.7 + Vector3::new(0.5, 0.0, 1.0)
                })
                .collect();
            let sim = umeyama_align(&est, &gt, true);
            ratios.push(position_rmse(&est, &gt, &sim) / (0.05 * 3f64.sqrt()));
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - 1.0).abs() < 0.2, "mean ratio {mean}");
    }

    #[test]
    fn collinear_points_fall_back_to_translation() {
        let est: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let gt: Vec<_> = est.iter().map(|p| p + Vector3::new(0.0, 1.0, 0.0)).collect();
        let sim = umeyama_align(&est, &gt, true);
        assert!(sim.degenerate);
        assert!((sim.translation - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn alternating_offset_ate() {
        let gt = Trajectory::new(
            (0..20)
                .map(|i| {
                    let (x, y) = ((i % 5) as f64, (i / 5) as f64);
                    (i as f64, Pose::from_translation(Vector3::new(x, y, 0.1 * (x * y))))
                })
                .collect(),
        )
        .unwrap();
        let est = Trajectory::new(
            gt.entries()
                .iter()
                .enumerate()
                .map(|(i, (t, p))| {
                    let dx = if i % 2 == 0 { 0.1 } else { 0.0 };
                    (*t, Pose::from_translation(p.translation + Vector3::new(dx, 0.0, 0.0)))
                })
                .collect(),
        )
        .unwrap();
        // translation-only alignment leaves ±0.05 residuals, RMSE exactly
        // 0.05; the similarity fit may shave a little more off
        let ep = est.positions();
        let gp = gt.positions();
        let shift = Similarity {
            translation: (gp.iter().sum::<Vector3<f64>>() - ep.iter().sum::<Vector3<f64>>()) / 20.0,
            ..Similarity::identity()
        };
        assert!((position_rmse(&ep, &gp, &shift) - 0.05).abs() < 1e-12);
        let ate = ate_rmse(&est, &gt).unwrap();
        assert!(ate <= 0.05 + 1e-12 && ate > 0.045, "{ate}");
    }

    #[test]
    fn ate_is_similarity_invariant() {
        let gt = curve(50);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let est = curve(50).transformed(&random_pose(&mut rng));
        assert!(ate_rmse(&est, &gt).unwrap() < 1e-9);
        let sim = Similarity {
            scale: 3.0,
            rotation: so3_exp(&Vector3::new(0.1, 0.2, 0.3)),
            translation: Vector3::new(1.0, -1.0, 2.0),
            degenerate: false,
        };
        assert!(ate_rmse(&gt.similarity_transformed(&sim), &gt).unwrap() < 1e-9);
    }

    #[test]
    fn rpe_ignores_global_rigid_motion() {
        let gt = curve(60);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let est = gt.transformed(&random_pose(&mut rng));
            let (t, r) = rpe(&est, &gt, 1.0).unwrap();
            assert!(t < 1e-9 && r < 1e-6, "{t} {r}");
        }
    }

    #[test]
    fn yaw_drift_per_meter() {
        // straight path along X, 0.05 m steps; estimate yaws 1°/m of travel
        let rate = 1f64.to_radians();
        let entries = |drift: bool| {
            (0..200)
                .map(|i| {
                    let s = 0.05 * i as f64;
                    let yaw = if drift { rate * s } else { 0.0 };
                    (i as f64 * 0.1, Pose::new(so3_exp(&Vector3::new(0.0, 0.0, yaw)), Vector3::new(s, 0.0, 0.0)))
                })
                .collect::<Vec<_>>()
        };
        let gt = Trajectory::new(entries(false)).unwrap();
        let est = Trajectory::new(entries(true)).unwrap();
        let (_, rot) = rpe(&est, &gt, 1.0).unwrap();
        assert!((rot - 1.0).abs() < 0.05, "{rot}");
    }

    #[test]
    fn short_path_rejected() {
        let gt = curve(3);
        assert!(matches!(rpe(&gt, &gt, 100.0), Err(EvalError::PathTooShort { .. })));
    }

    #[test]
    fn association_tolerance() {
        let gt = curve(10);
        let shifted = Trajectory::new(gt.entries().iter().map(|(t, p)| (t + 0.015, *p)).collect()).unwrap();
        assert!(ate_rmse(&shifted, &gt).unwrap() < 1e-12);
        let far = Trajectory::new(gt.entries().iter().map(|(t, p)| (t + 0.05, *p)).collect()).unwrap();
        assert!(matches!(ate_rmse(&far, &gt), Err(EvalError::Association { .. })));
    }

    #[test]
    fn input_order_does_not_matter() {
        let gt = curve(30);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let est = Trajectory::new(
            gt.entries()
                .iter()
                .map(|(t, p)| (*t, Pose::from_translation(p.translation + Vector3::from_fn(|_, _| rng.random_range(-0.01..0.01)))))
                .collect(),
        )
        .unwrap();
        let mut shuffled = est.entries().to_vec();
        shuffled.reverse();
        shuffled.swap(3, 17);
        let resorted = Trajectory::from_unsorted(shuffled).unwrap();
        assert_eq!(ate_rmse(&resorted, &gt).unwrap(), ate_rmse(&est, &gt).unwrap());
    }

    #[test]
    fn tum_identity_line() {
        assert_eq!(format_tum_line(0.0, &Pose::identity()), "0.0 0 0 0 0 0 0 1");
    }

    #[test]
    fn tum_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let traj = Trajectory::new((0..100).map(|i| (i as f64 * 0.033, random_pose(&mut rng))).collect()).unwrap();
        let (back, warnings) = parse_tum(&format_tum(&traj)).unwrap();
        assert!(warnings.is_empty());
        for ((ta, a), (tb, b)) in traj.entries().iter().zip(back.entries()) {
            assert_eq!(ta, tb);
            assert!((a.to_matrix() - b.to_matrix()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn tum_errors_and_warnings() {
        let err = parse_tum("# header\n0 0 0 0 0 0 0 1\n1 0 0 zero 0 0 0 1\n").unwrap_err();
        assert!(matches!(err, EvalError::Parse { line: 3, .. }), "{err:?}");
        let err = parse_tum("0 0 0 0 0 0 1\n").unwrap_err();
        assert!(matches!(err, EvalError::Parse { line: 1, .. }));
        let (t, w) = parse_tum("0 1 2 3 0 0 0 2\n").unwrap();
        assert_eq!(w.len(), 1);
        assert!(t.entries()[0].1.orthonormality_error() < 1e-12);
    }
}
