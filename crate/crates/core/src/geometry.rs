//! Poses with Gaussian uncertainty and the first-order compound / inverse
//! relationships used to move beliefs between frames.
//!
//! Two pose groups are supported:
//!
//! * `Se2`: `(x, y, psi)`.
//! * `Se3`: `(x, y, z, psi, theta)`, the five-coordinate state of the
//!   fixed-wing model with roll fixed to zero. Frames are gravity aligned:
//!   translation is rotated by the heading only and the pitch coordinate
//!   composes additively, which keeps the set closed under composition and
//!   inversion.
//!
//! Means are composed exactly. Covariances are propagated with the Jacobians
//! of the composition, `J1 * Sa * J1^T + J2 * Sb * J2^T (+ cross terms)`.

use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Wrap an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PoseGroup {
    Se2,
    Se3,
}

impl PoseGroup {
    /// Number of pose coordinates.
    pub fn dim(self) -> usize {
        match self {
            PoseGroup::Se2 => 3,
            PoseGroup::Se3 => 5,
        }
    }

    /// Number of positional (workspace) coordinates.
    pub fn workspace_dim(self) -> usize {
        match self {
            PoseGroup::Se2 => 2,
            PoseGroup::Se3 => 3,
        }
    }

    pub fn for_workspace(dim: usize) -> Result<Self> {
        match dim {
            2 => Ok(PoseGroup::Se2),
            3 => Ok(PoseGroup::Se3),
            d => Err(Error::invalid(format!("workspace dimension {d} not in {{2, 3}}"))),
        }
    }

    fn heading_index(self) -> usize {
        match self {
            PoseGroup::Se2 => 2,
            PoseGroup::Se3 => 3,
        }
    }

    fn is_angle(self, i: usize) -> bool {
        match self {
            PoseGroup::Se2 => i == 2,
            PoseGroup::Se3 => i >= 3,
        }
    }
}

/// A pose with a Gaussian uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseBelief {
    group: PoseGroup,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl PoseBelief {
    pub fn new(group: PoseGroup, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = group.dim();
        if mean.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: mean.len() });
        }
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: cov.nrows() });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("pose belief contains non-finite values"));
        }
        let mut out = PoseBelief { group, mean, cov };
        out.normalize();
        Ok(out)
    }

    pub fn from_slices(group: PoseGroup, mean: &[f64], cov_diag: &[f64]) -> Result<Self> {
        if cov_diag.len() != group.dim() {
            return Err(Error::DimensionMismatch { expected: group.dim(), found: cov_diag.len() });
        }
        Self::new(
            group,
            DVector::from_column_slice(mean),
            DMatrix::from_diagonal(&DVector::from_column_slice(cov_diag)),
        )
    }

    /// Exact pose with zero covariance.
    pub fn exact(group: PoseGroup, mean: &[f64]) -> Result<Self> {
        let n = group.dim();
        Self::new(group, DVector::from_column_slice(mean), DMatrix::zeros(n, n))
    }

    pub fn identity(group: PoseGroup) -> Self {
        let n = group.dim();
        PoseBelief { group, mean: DVector::zeros(n), cov: DMatrix::zeros(n, n) }
    }

    /// Translation-only frame at `position` with positional covariance `pos_cov`.
    pub fn translation(position: &[f64], pos_cov: &DMatrix<f64>) -> Result<Self> {
        let group = PoseGroup::for_workspace(position.len())?;
        let n = group.dim();
        let w = group.workspace_dim();
        if pos_cov.nrows() != w || pos_cov.ncols() != w {
            return Err(Error::DimensionMismatch { expected: w, found: pos_cov.nrows() });
        }
        let mut mean = DVector::zeros(n);
        mean.rows_mut(0, w).copy_from_slice(position);
        let mut cov = DMatrix::zeros(n, n);
        cov.view_mut((0, 0), (w, w)).copy_from(pos_cov);
        Self::new(group, mean, cov)
    }

    pub fn group(&self) -> PoseGroup {
        self.group
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn position(&self) -> &[f64] {
        &self.mean.as_slice()[..self.group.workspace_dim()]
    }

    pub fn heading(&self) -> f64 {
        self.mean[self.group.heading_index()]
    }

    /// Marginal covariance of the positional coordinates.
    pub fn position_cov(&self) -> DMatrix<f64> {
        let w = self.group.workspace_dim();
        self.cov.view((0, 0), (w, w)).into_owned()
    }

    /// Variance of the heading coordinate.
    pub fn heading_var(&self) -> f64 {
        let h = self.group.heading_index();
        self.cov[(h, h)]
    }

    fn normalize(&mut self) {
        for i in 0..self.mean.len() {
            if self.group.is_angle(i) {
                self.mean[i] = normalize_angle(self.mean[i]);
            }
        }
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        self.cov = sym;
    }

    fn check_same_group(&self, other: &PoseBelief) -> Result<()> {
        if self.group != other.group {
            return Err(Error::DimensionMismatch {
                expected: self.group.dim(),
                found: other.group.dim(),
            });
        }
        Ok(())
    }
}

/// Exact composition of two pose means, `a (+) b`.
pub fn compose_mean(group: PoseGroup, a: &[f64], b: &[f64]) -> DVector<f64> {
    let h = group.heading_index();
    let (s, c) = a[h].sin_cos();
    let mut out = DVector::zeros(group.dim());
    out[0] = a[0] + c * b[0] - s * b[1];
    out[1] = a[1] + s * b[0] + c * b[1];
    match group {
        PoseGroup::Se2 => {
            out[2] = normalize_angle(a[2] + b[2]);
        }
        PoseGroup::Se3 => {
            out[2] = a[2] + b[2];
            out[3] = normalize_angle(a[3] + b[3]);
            out[4] = normalize_angle(a[4] + b[4]);
        }
    }
    out
}

/// Exact inverse of a pose mean, `(-) a`.
pub fn inverse_mean(group: PoseGroup, a: &[f64]) -> DVector<f64> {
    let h = group.heading_index();
    let (s, c) = a[h].sin_cos();
    let mut out = DVector::zeros(group.dim());
    out[0] = -c * a[0] - s * a[1];
    out[1] = s * a[0] - c * a[1];
    match group {
        PoseGroup::Se2 => out[2] = normalize_angle(-a[2]),
        PoseGroup::Se3 => {
            out[2] = -a[2];
            out[3] = normalize_angle(-a[3]);
            out[4] = normalize_angle(-a[4]);
        }
    }
    out
}

/// Jacobians `(J1, J2)` of `a (+) b` with respect to `a` and `b`.
pub fn compound_jacobians(group: PoseGroup, a: &[f64], b: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = group.dim();
    let h = group.heading_index();
    let (s, c) = a[h].sin_cos();
    let mut j1 = DMatrix::identity(n, n);
    j1[(0, h)] = -s * b[0] - c * b[1];
    j1[(1, h)] = c * b[0] - s * b[1];
    let mut j2 = DMatrix::identity(n, n);
    j2[(0, 0)] = c;
    j2[(0, 1)] = -s;
    j2[(1, 0)] = s;
    j2[(1, 1)] = c;
    (j1, j2)
}

/// Jacobian of `(-) a` with respect to `a`.
pub fn inverse_jacobian(group: PoseGroup, a: &[f64]) -> DMatrix<f64> {
    let n = group.dim();
    let h = group.heading_index();
    let (s, c) = a[h].sin_cos();
    let mut j = -DMatrix::identity(n, n);
    j[(0, 0)] = -c;
    j[(0, 1)] = -s;
    j[(1, 0)] = s;
    j[(1, 1)] = -c;
    j[(0, h)] = s * a[0] - c * a[1];
    j[(1, h)] = c * a[0] + s * a[1];
    j
}

/// First-order compound `a (+) b`.
///
/// `cross` is the cross-covariance `cov(a, b)`; `None` treats the inputs as
/// independent.
pub fn compound(a: &PoseBelief, b: &PoseBelief, cross: Option<&DMatrix<f64>>) -> Result<PoseBelief> {
    a.check_same_group(b)?;
    let g = a.group;
    let n = g.dim();
    let mean = compose_mean(g, a.mean.as_slice(), b.mean.as_slice());
    let (j1, j2) = compound_jacobians(g, a.mean.as_slice(), b.mean.as_slice());
    let mut cov = &j1 * &a.cov * j1.transpose() + &j2 * &b.cov * j2.transpose();
    if let Some(x) = cross {
        if x.nrows() != n || x.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: x.nrows() });
        }
        let t = &j1 * x * j2.transpose();
        cov += &t + t.transpose();
    }
    PoseBelief::new(g, mean, cov)
}

/// First-order inverse `(-) a`.
pub fn inverse(a: &PoseBelief) -> PoseBelief {
    let g = a.group;
    let mean = inverse_mean(g, a.mean.as_slice());
    let j = inverse_jacobian(g, a.mean.as_slice());
    let cov = &j * &a.cov * j.transpose();
    let mut out = PoseBelief { group: g, mean, cov };
    out.normalize();
    out
}

/// A workspace point with Gaussian uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct PointBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Express a world point in the coordinates of an uncertain frame,
/// `(-) frame (+) point`, returning the induced positional covariance.
pub fn transform_point_to_frame(point: &[f64], frame: &PoseBelief) -> Result<PointBelief> {
    let g = frame.group;
    let w = g.workspace_dim();
    if point.len() != w {
        return Err(Error::DimensionMismatch { expected: w, found: point.len() });
    }
    let mut p = vec![0.0; g.dim()];
    p[..w].copy_from_slice(point);
    let as_pose = PoseBelief::exact(g, &p)?;
    let local = compound(&inverse(frame), &as_pose, None)?;
    Ok(PointBelief {
        mean: local.mean.rows(0, w).into_owned(),
        cov: local.cov.view((0, 0), (w, w)).into_owned(),
    })
}

/// Express a frame-local point in world coordinates (`frame (+) point`), mean only.
pub fn point_to_world(point: &[f64], frame: &PoseBelief) -> Vec<f64> {
    let g = frame.group;
    let w = g.workspace_dim();
    let mut p = vec![0.0; g.dim()];
    p[..w].copy_from_slice(point);
    compose_mean(g, frame.mean.as_slice(), &p).as_slice()[..w].to_vec()
}
