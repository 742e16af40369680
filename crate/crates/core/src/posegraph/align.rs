use nalgebra::{Matrix2, Vector2};

use super::PoseGraphError;

/// `p -> rotation * p + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform2 {
    pub rotation: Matrix2<f64>,
    pub translation: Vector2<f64>,
}

impl RigidTransform2 {
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let q = self.rotation * Vector2::new(p[0], p[1]) + self.translation;
        [q.x, q.y]
    }

    pub fn angle(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }
}

fn centroid(pts: &[[f64; 2]]) -> Vector2<f64> {
    let n = pts.len() as f64;
    pts.iter()
        .fold(Vector2::zeros(), |acc, p| acc + Vector2::new(p[0], p[1]))
        / n
}

/// Least-squares rigid transform taking `est` onto `gt` (Kabsch via SVD of
/// the cross-covariance, with the reflection case corrected).
pub fn kabsch_align(
    est: &[[f64; 2]],
    gt: &[[f64; 2]],
) -> Result<RigidTransform2, PoseGraphError> {
    if est.len() != gt.len() {
        return Err(PoseGraphError::LengthMismatch {
            est: est.len(),
            gt: gt.len(),
        });
    }
    if est.len() < 2 {
        return Err(PoseGraphError::DegenerateAlignment);
    }
    let ce = centroid(est);
    let cg = centroid(gt);
    let spread = |pts: &[[f64; 2]], c: &Vector2<f64>| {
        pts.iter()
            .map(|p| (Vector2::new(p[0], p[1]) - c).norm_squared())
            .sum::<f64>()
    };
    let scale = spread(est, &ce).max(spread(gt, &cg));
    if spread(est, &ce) <= 1e-24 * scale.max(1.0) || spread(gt, &cg) <= 1e-24 * scale.max(1.0) {
        return Err(PoseGraphError::DegenerateAlignment);
    }

    let mut cov = Matrix2::zeros();
    for (e, g) in est.iter().zip(gt) {
        let de = Vector2::new(e[0], e[1]) - ce;
        let dg = Vector2::new(g[0], g[1]) - cg;
        cov += de * dg.transpose();
    }
    let svd = cov.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(PoseGraphError::DegenerateAlignment);
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix2::new(1.0, 0.0, 0.0, d) * u.transpose();
    let translation = cg - rotation * ce;
    Ok(RigidTransform2 {
        rotation,
        translation,
    })
}

/// Root mean squared positional distance between corresponding points.
pub fn rmse(est: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<f64, PoseGraphError> {
    if est.len() != gt.len() {
        return Err(PoseGraphError::LengthMismatch {
            est: est.len(),
            gt: gt.len(),
        });
    }
    if est.is_empty() {
        return Err(PoseGraphError::EmptyTrajectory);
    }
    let sum: f64 = est
        .iter()
        .zip(gt)
        .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
        .sum();
    Ok((sum / est.len() as f64).sqrt())
}
