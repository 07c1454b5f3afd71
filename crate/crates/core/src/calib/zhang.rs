//! Planar-target intrinsics estimation: closed-form initialization from
//! per-view homographies (zero-skew absolute-conic constraints) followed
//! by Levenberg–Marquardt refinement of intrinsics, two radial terms,
//! and per-view extrinsics.

use super::{estimate_homography, BoardSpec, CameraModel, CornerGrid};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, SymmetricEigen, Vector3};

/// Calibration output: the refined model, its RMS corner reprojection
/// error, and the error of the closed-form initialization it started
/// from (refinement never makes this worse).
#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub camera: CameraModel,
    pub rms_px: f64,
    pub rms_init_px: f64,
}

/// Zero-skew constraint row for the conic vector
/// `b = (B11, B22, B13, B23, B33)` from homography columns `p` and `q`.
fn conic_row(h: &[f64; 9], p: usize, q: usize) -> [f64; 5] {
    let hp = [h[p], h[3 + p], h[6 + p]];
    let hq = [h[q], h[3 + q], h[6 + q]];
    [
        hp[0] * hq[0],
        hp[1] * hq[1],
        hp[2] * hq[0] + hp[0] * hq[2],
        hp[2] * hq[1] + hp[1] * hq[2],
        hp[2] * hq[2],
    ]
}

/// Per-view pose initialization from `H = K [r1 r2 t]`, orthonormalized
/// through the SVD and flipped so the board sits in front of the camera.
fn pose_from_homography(k_inv: &Matrix3<f64>, h: &[f64; 9]) -> (Vector3<f64>, Vector3<f64>) {
    let h1 = Vector3::new(h[0], h[3], h[6]);
    let h2 = Vector3::new(h[1], h[4], h[7]);
    let h3 = Vector3::new(h[2], h[5], h[8]);
    let scale = 1.0 / (k_inv * h1).norm();
    let mut r1 = scale * (k_inv * h1);
    let mut r2 = scale * (k_inv * h2);
    let mut t = scale * (k_inv * h3);
    if t.z < 0.0 {
        r1 = -r1;
        r2 = -r2;
        t = -t;
    }
    let r3 = r1.cross(&r2);
    let q = Matrix3::from_columns(&[r1, r2, r3]);
    let svd = q.svd(true, true);
    let mut u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    if (u * v_t).determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    let rot = Rotation3::from_matrix_unchecked(u * v_t);
    (rot.scaled_axis(), t)
}

/// Projects one board point through intrinsics + distortion + pose.
fn project(
    params: &[f64],
    view: usize,
    model_pt: (f64, f64),
    rotations: &[Rotation3<f64>],
) -> (f64, f64) {
    let (fx, fy, cx, cy, k1, k2) = (params[0], params[1], params[2], params[3], params[4], params[5]);
    let base = 6 + view * 6;
    let t = Vector3::new(params[base + 3], params[base + 4], params[base + 5]);
    let p = rotations[view] * Vector3::new(model_pt.0, model_pt.1, 0.0) + t;
    let xn = p.x / p.z;
    let yn = p.y / p.z;
    let r2 = xn * xn + yn * yn;
    let f = 1.0 + k1 * r2 + k2 * r2 * r2;
    (fx * xn * f + cx, fy * yn * f + cy)
}

fn residuals(params: &[f64], views: &[CornerGrid], model: &[(f64, f64)]) -> DVector<f64> {
    let rotations: Vec<Rotation3<f64>> = (0..views.len())
        .map(|i| {
            let base = 6 + i * 6;
            Rotation3::new(Vector3::new(params[base], params[base + 1], params[base + 2]))
        })
        .collect();
    let mut res = DVector::zeros(views.len() * model.len() * 2);
    let mut m = 0;
    for (i, view) in views.iter().enumerate() {
        for (j, &pt) in model.iter().enumerate() {
            let (u, v) = project(params, i, pt, &rotations);
            res[m] = u - view.points[j].0;
            res[m + 1] = v - view.points[j].1;
            m += 2;
        }
    }
    res
}

fn rms_of(res: &DVector<f64>) -> f64 {
    // RMS of per-corner Euclidean distances (two residual rows each).
    (res.norm_squared() / (res.len() as f64 / 2.0)).sqrt()
}

/// Estimates thermal-camera intrinsics from `>= 3` corner grids of the
/// board at distinct orientations.
pub fn estimate_intrinsics(views: &[CornerGrid], board: &BoardSpec) -> Result<CalibrationResult> {
    if views.len() < 3 {
        return Err(Error::InsufficientViews { needed: 3, got: views.len() });
    }
    let model = board.model_points_mm();
    for (i, v) in views.iter().enumerate() {
        if v.points.len() != model.len() {
            return Err(Error::DimensionMismatch(format!(
                "view {i} has {} corners, board defines {}",
                v.points.len(),
                model.len()
            )));
        }
    }
    let homs: Vec<[f64; 9]> = views
        .iter()
        .map(|v| estimate_homography(&model, &v.points).map(|h| h.h))
        .collect::<Result<_>>()?;

    // Stack the two absolute-conic constraints per view and take the
    // eigenvector of VᵀV with the smallest eigenvalue.
    let mut vmat = DMatrix::<f64>::zeros(2 * homs.len(), 5);
    for (i, h) in homs.iter().enumerate() {
        let v12 = conic_row(h, 0, 1);
        let v11 = conic_row(h, 0, 0);
        let v22 = conic_row(h, 1, 1);
        for c in 0..5 {
            vmat[(2 * i, c)] = v12[c];
            vmat[(2 * i + 1, c)] = v11[c] - v22[c];
        }
    }
    let eig = SymmetricEigen::new(vmat.transpose() * &vmat);
    let mut idx: Vec<usize> = (0..5).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    if eig.eigenvalues[idx[1]] < 1e-10 * eig.eigenvalues[idx[4]].max(1.0) {
        return Err(Error::SingularSystem("board poses do not constrain the intrinsics".into()));
    }
    let mut b = [0.0f64; 5];
    for i in 0..5 {
        b[i] = eig.eigenvectors[(i, idx[0])];
    }
    if b[0] < 0.0 {
        for v in b.iter_mut() {
            *v = -*v;
        }
    }
    let (b11, b22, b13, b23, b33) = (b[0], b[1], b[2], b[3], b[4]);
    if b11 <= 0.0 || b22 <= 0.0 {
        return Err(Error::SingularSystem("conic solution is not positive definite".into()));
    }
    let cx = -b13 / b11;
    let cy = -b23 / b22;
    let lambda = b33 - (b13 * b13 / b11 + b23 * b23 / b22);
    if lambda <= 0.0 {
        return Err(Error::SingularSystem("conic solution is not positive definite".into()));
    }
    let fx = (lambda / b11).sqrt();
    let fy = (lambda / b22).sqrt();

    // Assemble the joint parameter vector and refine.
    let k = Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0);
    let k_inv = k.try_inverse().ok_or(Error::SingularSystem("singular intrinsics".into()))?;
    let mut params = vec![fx, fy, cx, cy, 0.0, 0.0];
    for h in &homs {
        let (rvec, t) = pose_from_homography(&k_inv, h);
        params.extend_from_slice(&[rvec.x, rvec.y, rvec.z, t.x, t.y, t.z]);
    }

    let rms_init_px = rms_of(&residuals(&params, views, &model));
    let params = levenberg_marquardt(params, |p| residuals(p, views, &model))?;
    let rms_px = rms_of(&residuals(&params, views, &model));

    let camera =
        CameraModel { fx: params[0], fy: params[1], cx: params[2], cy: params[3], k1: params[4], k2: params[5] };
    if camera.fx <= 0.0 || camera.fy <= 0.0 {
        return Err(Error::SingularSystem("refinement collapsed the focal length".into()));
    }
    Ok(CalibrationResult { camera, rms_px, rms_init_px: rms_init_px.max(rms_px) })
}

/// Levenberg–Marquardt with a central-difference Jacobian and
/// multiplicative damping (start 1e-3, ×10 on rejection, ÷10 on
/// acceptance, at most 50 outer iterations, stop when the accepted step
/// norm falls below 1e-10). Only cost-decreasing steps are taken.
fn levenberg_marquardt(
    mut params: Vec<f64>,
    f: impl Fn(&[f64]) -> DVector<f64>,
) -> Result<Vec<f64>> {
    let n = params.len();
    let mut lambda = 1e-3;
    let mut res = f(&params);
    let mut cost = res.norm_squared();
    for _ in 0..50 {
        // Central-difference Jacobian.
        let mut jac = DMatrix::<f64>::zeros(res.len(), n);
        for p in 0..n {
            let h = 1e-6 * params[p].abs().max(1.0);
            let mut plus = params.clone();
            plus[p] += h;
            let mut minus = params.clone();
            minus[p] -= h;
            let col = (f(&plus) - f(&minus)) / (2.0 * h);
            jac.column_mut(p).copy_from(&col);
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;

        let mut accepted = false;
        for _ in 0..12 {
            let mut damped = jtj.clone();
            for d in 0..n {
                damped[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p + s).collect();
            let trial_res = f(&trial);
            let trial_cost = trial_res.norm_squared();
            if trial_cost < cost {
                let step_norm = step.norm();
                params = trial;
                res = trial_res;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if step_norm < 1e-10 {
                    return Ok(params);
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e10 {
                return Ok(params);
            }
        }
        if !accepted {
            break;
        }
    }
    Ok(params)
}
