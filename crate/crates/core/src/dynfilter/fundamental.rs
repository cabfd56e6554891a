//! Robust fundamental-matrix fitting and the Sampson distance.

use super::DynError;
use nalgebra::{DMatrix, Matrix3, Vector2};

/// Number of reweighting rounds after the initial fit.
pub const IRLS_ROUNDS: usize = 5;

/// Cauchy weight scale, pixels.
pub const IRLS_SCALE: f64 = 1.0;

const DENOM_GUARD: f64 = 1e-12;

/// First-order distance (pixels) of `(x1, x2)` from `x2ᵀ F x1 = 0`.
pub fn sampson_distance(f: &Matrix3<f64>, x1: &Vector2<f64>, x2: &Vector2<f64>) -> f64 {
    let p1 = x1.push(1.0);
    let p2 = x2.push(1.0);
    let fx1 = f * p1;
    let ftx2 = f.transpose() * p2;
    let num = p2.dot(&fx1);
    let den = (fx1.x * fx1.x + fx1.y * fx1.y + ftx2.x * ftx2.x + ftx2.y * ftx2.y).max(DENOM_GUARD);
    num.abs() / den.sqrt()
}

/// Similarity moving the centroid to the origin with mean distance √2.
fn normalizer(pts: &[Vector2<f64>], weights: &[f64]) -> Matrix3<f64> {
    let wsum: f64 = weights.iter().sum();
    let c = pts.iter().zip(weights).map(|(p, w)| p * *w).sum::<Vector2<f64>>() / wsum;
    let mean_dist = pts.iter().zip(weights).map(|(p, w)| (p - c).norm() * w).sum::<f64>() / wsum;
    let s = if mean_dist > 1e-12 { 2f64.sqrt() / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn weighted_eight_point(x1: &[Vector2<f64>], x2: &[Vector2<f64>], w: &[f64]) -> Result<Matrix3<f64>, DynError> {
    let t1 = normalizer(x1, w);
    let t2 = normalizer(x2, w);
    // zero rows pad the system so the SVD always yields all nine right vectors
    let rows = x1.len().max(9);
    let mut a = DMatrix::zeros(rows, 9);
    for (i, ((p1, p2), wi)) in x1.iter().zip(x2).zip(w).enumerate() {
        let u = t1 * p1.push(1.0);
        let v = t2 * p2.push(1.0);
        let sw = wi.sqrt();
        for r in 0..3 {
            for c in 0..3 {
                a[(i, 3 * r + c)] = sw * v[r] * u[c];
            }
        }
    }
    // R of a thin QR has the singular values and right vectors of A
    let svd = a.qr().r().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = &svd.singular_values;
    // homography-compatible motion (pure rotation, no motion) leaves a
    // three-dimensional null space, and any member is a consistent answer
    if sv[order[5]] <= 1e-10 * sv[order[0]].max(f64::MIN_POSITIVE) {
        return Err(DynError::DegenerateConfiguration);
    }
    let null = v_t.row(order[8]);
    let f_hat = Matrix3::from_fn(|r, c| null[3 * r + c]);

    let fs = f_hat.svd(true, true);
    let mut s = fs.singular_values;
    let smallest = s.imin();
    s[smallest] = 0.0;
    let f_rank2 = fs.u.unwrap() * Matrix3::from_diagonal(&s) * fs.v_t.unwrap();

    let f = t2.transpose() * f_rank2 * t1;
    let n = f.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(DynError::DegenerateConfiguration);
    }
    Ok(f / n)
}

/// Normalized 8-point fit refined by Cauchy-weighted reweighting; the
/// result has rank 2 and unit Frobenius norm.
pub fn fit_dominant_motion(x1: &[Vector2<f64>], x2: &[Vector2<f64>]) -> Result<Matrix3<f64>, DynError> {
    if x1.len() != x2.len() {
        return Err(DynError::Shape(format!("{} vs {} points", x1.len(), x2.len())));
    }
    if x1.len() < 8 {
        return Err(DynError::DegenerateConfiguration);
    }
    let mut w = vec![1.0; x1.len()];
    let mut f = weighted_eight_point(x1, x2, &w)?;
    for _ in 0..IRLS_ROUNDS {
        for (wi, (p1, p2)) in w.iter_mut().zip(x1.iter().zip(x2)) {
            let r = sampson_distance(&f, p1, p2) / IRLS_SCALE;
            *wi = 1.0 / (1.0 + r * r);
        }
        f = weighted_eight_point(x1, x2, &w)?;
    }
    Ok(f)
}

/// Unit-norm fundamental matrix of two posed views; maps frame-1 pixels to
/// epipolar lines in frame 2.
pub fn fundamental_from_poses(
    k: &crate::geometry::Intrinsics,
    cam1: &crate::geometry::Pose,
    cam2: &crate::geometry::Pose,
) -> Matrix3<f64> {
    let rel = cam2.inverse().compose(cam1);
    let kinv = Matrix3::new(1.0 / k.fx, 0.0, -k.cx / k.fx, 0.0, 1.0 / k.fy, -k.cy / k.fy, 0.0, 0.0, 1.0);
    let e = crate::geometry::skew(&rel.translation) * rel.rotation;
    let f = kinv.transpose() * e * kinv;
    let n = f.norm();
    if n > 0.0 {
        f / n
    } else {
        f
    }
}
