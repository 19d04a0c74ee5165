//! Belief dynamics for the closed-loop unicycle and the fixed-wing model.
//!
//! Unicycle state is `z = (x, y, vx, vy)` driven through a per-axis PD loop
//! towards a reference `r`. A control carries `r` as an offset
//! `(dx, dy, vx, vy)` from the mean at the start of the segment, so the
//! absolute reference is fixed for the whole segment and replays exactly.
//!
//! Fixed-wing state is `(x, y, z, psi, theta)` with inputs `(v, omega, q)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::normalize_angle;

const STEP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Unicycle,
    FixedWing,
}

impl ModelKind {
    pub fn state_dim(self) -> usize {
        match self {
            ModelKind::Unicycle => 4,
            ModelKind::FixedWing => 5,
        }
    }

    pub fn control_dim(self) -> usize {
        match self {
            ModelKind::Unicycle => 4,
            ModelKind::FixedWing => 3,
        }
    }

    pub fn workspace_dim(self) -> usize {
        match self {
            ModelKind::Unicycle => 2,
            ModelKind::FixedWing => 3,
        }
    }
}

/// Gaussian state estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub kind: ModelKind,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub stamp: f64,
}

impl Belief {
    pub fn new(kind: ModelKind, mean: DVector<f64>, cov: DMatrix<f64>, stamp: f64) -> Result<Self> {
        let n = kind.state_dim();
        if mean.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: mean.len() });
        }
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: cov.nrows() });
        }
        let mut b = Belief { kind, mean, cov, stamp };
        b.normalize();
        Ok(b)
    }

    /// Belief with zero covariance.
    pub fn exact(kind: ModelKind, mean: &[f64]) -> Result<Self> {
        let n = kind.state_dim();
        Self::new(kind, DVector::from_column_slice(mean), DMatrix::zeros(n, n), 0.0)
    }

    pub fn position(&self) -> &[f64] {
        &self.mean.as_slice()[..self.kind.workspace_dim()]
    }

    pub fn position_cov(&self) -> DMatrix<f64> {
        let w = self.kind.workspace_dim();
        self.cov.view((0, 0), (w, w)).into_owned()
    }

    /// Heading in radians. The unicycle heading is the direction of motion.
    pub fn heading(&self) -> f64 {
        match self.kind {
            ModelKind::Unicycle => self.mean[3].atan2(self.mean[2]),
            ModelKind::FixedWing => self.mean[3],
        }
    }

    fn normalize(&mut self) {
        if self.kind == ModelKind::FixedWing {
            self.mean[3] = normalize_angle(self.mean[3]);
            self.mean[4] = normalize_angle(self.mean[4]);
        }
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;
    }
}

/// Control input held for `duration` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub u: Vec<f64>,
    pub duration: f64,
}

impl Control {
    pub fn new(u: Vec<f64>, duration: f64) -> Self {
        Control { u, duration }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnicycleParams {
    pub kp: f64,
    pub kd: f64,
    /// Per-step process-noise variance of the position components.
    pub q_pos: f64,
    /// Per-step process-noise variance of the velocity components.
    pub q_vel: f64,
    /// Bound on the reference position offset per axis.
    pub max_offset: f64,
    /// Bound on the reference velocity per axis.
    pub v_max: f64,
}

impl Default for UnicycleParams {
    fn default() -> Self {
        UnicycleParams { kp: 1.0, kd: 2.0, q_pos: 2.5e-5, q_vel: 1e-4, max_offset: 2.0, v_max: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedWingParams {
    pub v_min: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub q_max: f64,
    /// Maximum deceleration used when braking, m/s^2.
    pub a_max: f64,
    /// Constant part of the per-step process noise (diagonal).
    pub sigma_w0: [f64; 5],
    pub k_v: f64,
    pub k_omega: f64,
    /// Pitch is kept within `+-(pi/2 - theta_margin)`.
    pub theta_margin: f64,
}

impl Default for FixedWingParams {
    fn default() -> Self {
        FixedWingParams {
            v_min: 0.0,
            v_max: 1.5,
            omega_max: 1.6,
            q_max: 0.5,
            a_max: 1.0,
            sigma_w0: [1e-6, 1e-6, 1e-6, 1e-7, 1e-7],
            k_v: 1e-4,
            k_omega: 1e-5,
            theta_margin: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub dt: f64,
    pub t_min: f64,
    pub t_max: f64,
    /// Speed under which the vehicle counts as stopped.
    pub stop_speed: f64,
    pub unicycle: UnicycleParams,
    pub fixed_wing: FixedWingParams,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            kind: ModelKind::Unicycle,
            dt: 0.05,
            t_min: 0.2,
            t_max: 1.0,
            stop_speed: 0.01,
            unicycle: UnicycleParams::default(),
            fixed_wing: FixedWingParams::default(),
        }
    }
}

impl ModelParams {
    pub fn fixed_wing() -> Self {
        ModelParams { kind: ModelKind::FixedWing, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.dt > 0.0) {
            return bad("model.dt must be positive");
        }
        if !(self.t_min > 0.0 && self.t_min <= self.t_max) {
            return bad("model.t_min/t_max must satisfy 0 < t_min <= t_max");
        }
        let u = &self.unicycle;
        if !(u.kp > 0.0 && u.kd > 0.0) || u.q_pos < 0.0 || u.q_vel < 0.0 || !(u.max_offset >= 0.0 && u.v_max >= 0.0) {
            return bad("model.unicycle parameters out of range");
        }
        let f = &self.fixed_wing;
        if !(f.v_min >= 0.0 && f.v_min <= f.v_max && f.omega_max >= 0.0 && f.q_max >= 0.0 && f.a_max > 0.0)
            || f.sigma_w0.iter().any(|v| *v < 0.0)
            || f.k_v < 0.0
            || f.k_omega < 0.0
            || !(f.theta_margin > 0.0 && f.theta_margin < std::f64::consts::FRAC_PI_2)
        {
            return bad("model.fixed_wing parameters out of range");
        }
        Ok(())
    }
}

/// Discrete closed-loop matrices of one PD-controlled axis, from the
/// exponential of the augmented continuous system.
fn pd_axis(kp: f64, kd: f64, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut m = DMatrix::zeros(4, 4);
    m[(0, 1)] = 1.0;
    m[(1, 0)] = -kp;
    m[(1, 1)] = -kd;
    m[(1, 2)] = kp;
    m[(1, 3)] = kd;
    let e = (m * dt).exp();
    (e.view((0, 0), (2, 2)).into_owned(), e.view((0, 2), (2, 2)).into_owned())
}

/// A configured motion model.
#[derive(Debug, Clone)]
pub struct MotionModel {
    params: ModelParams,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    sigma_w: DMatrix<f64>,
}

impl MotionModel {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        let (a, b, sigma_w) = match params.kind {
            ModelKind::Unicycle => {
                let u = &params.unicycle;
                let (a2, b2) = pd_axis(u.kp, u.kd, params.dt);
                let mut a = DMatrix::zeros(4, 4);
                let mut b = DMatrix::zeros(4, 4);
                // state and reference ordering (x, y, vx, vy); axis i uses rows/cols (i, i+2)
                for axis in 0..2 {
                    let idx = [axis, axis + 2];
                    for r in 0..2 {
                        for c in 0..2 {
                            a[(idx[r], idx[c])] = a2[(r, c)];
                            b[(idx[r], idx[c])] = b2[(r, c)];
                        }
                    }
                }
                let w = DMatrix::from_diagonal(&DVector::from_vec(vec![u.q_pos, u.q_pos, u.q_vel, u.q_vel]));
                (a, b, w)
            }
            ModelKind::FixedWing => {
                let w = DMatrix::from_diagonal(&DVector::from_column_slice(&params.fixed_wing.sigma_w0));
                (DMatrix::identity(5, 5), DMatrix::zeros(5, 3), w)
            }
        };
        Ok(MotionModel { params, a, b, sigma_w })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn kind(&self) -> ModelKind {
        self.params.kind
    }

    pub fn dt(&self) -> f64 {
        self.params.dt
    }

    /// Closed-loop matrices `(A, B)` of the unicycle.
    pub fn closed_loop(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.a, &self.b)
    }

    /// Number of integration steps in a control, or an error if the
    /// duration is not a positive multiple of `dt`.
    pub fn steps(&self, c: &Control) -> Result<usize> {
        let n = (c.duration / self.params.dt).round();
        if n < 1.0 || (n * self.params.dt - c.duration).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "control duration {} is not a positive multiple of dt={}",
                c.duration, self.params.dt
            )));
        }
        Ok(n as usize)
    }

    pub fn check_control(&self, c: &Control) -> Result<()> {
        let k = self.params.kind;
        if c.u.len() != k.control_dim() {
            return Err(Error::DimensionMismatch { expected: k.control_dim(), found: c.u.len() });
        }
        let tol = 1e-9;
        let ok = match k {
            ModelKind::Unicycle => {
                let p = &self.params.unicycle;
                c.u[0].abs() <= p.max_offset + tol
                    && c.u[1].abs() <= p.max_offset + tol
                    && c.u[2].abs() <= p.v_max + tol
                    && c.u[3].abs() <= p.v_max + tol
            }
            ModelKind::FixedWing => {
                let p = &self.params.fixed_wing;
                c.u[0] >= p.v_min - tol
                    && c.u[0] <= p.v_max + tol
                    && c.u[1].abs() <= p.omega_max + tol
                    && c.u[2].abs() <= p.q_max + tol
            }
        };
        if !ok || c.u.iter().any(|v| !v.is_finite()) {
            return Err(Error::ControlOutOfBounds(format!("{:?}", c.u)));
        }
        Ok(())
    }

    /// Input applied at every step of a segment that starts at `start_mean`.
    pub fn resolve(&self, c: &Control, start_mean: &DVector<f64>) -> Vec<f64> {
        match self.params.kind {
            ModelKind::Unicycle => vec![start_mean[0] + c.u[0], start_mean[1] + c.u[1], c.u[2], c.u[3]],
            ModelKind::FixedWing => c.u.clone(),
        }
    }

    fn theta_limit(&self) -> f64 {
        std::f64::consts::FRAC_PI_2 - self.params.fixed_wing.theta_margin
    }

    /// One nominal step of the mean.
    pub fn step_mean(&self, x: &DVector<f64>, r: &[f64]) -> DVector<f64> {
        match self.params.kind {
            ModelKind::Unicycle => &self.a * x + &self.b * DVector::from_column_slice(r),
            ModelKind::FixedWing => {
                let dt = self.params.dt;
                let (v, w, q) = (r[0], r[1], r[2]);
                let psi_m = x[3] + 0.5 * w * dt;
                let th_m = x[4] + 0.5 * q * dt;
                let lim = self.theta_limit();
                let mut out = x.clone();
                out[0] += v * psi_m.cos() * th_m.cos() * dt;
                out[1] += v * psi_m.sin() * th_m.cos() * dt;
                out[2] += v * th_m.sin() * dt;
                out[3] = normalize_angle(x[3] + w * dt);
                out[4] = (x[4] + q * dt).clamp(-lim, lim);
                out
            }
        }
    }

    /// Jacobian of [`Self::step_mean`] with respect to the state.
    pub fn step_jacobian(&self, x: &DVector<f64>, r: &[f64]) -> DMatrix<f64> {
        match self.params.kind {
            ModelKind::Unicycle => self.a.clone(),
            ModelKind::FixedWing => {
                let dt = self.params.dt;
                let (v, w, q) = (r[0], r[1], r[2]);
                let psi_m = x[3] + 0.5 * w * dt;
                let th_m = x[4] + 0.5 * q * dt;
                let (sp, cp) = psi_m.sin_cos();
                let (st, ct) = th_m.sin_cos();
                let mut f = DMatrix::identity(5, 5);
                f[(0, 3)] = -v * sp * ct * dt;
                f[(0, 4)] = -v * cp * st * dt;
                f[(1, 3)] = v * cp * ct * dt;
                f[(1, 4)] = -v * sp * st * dt;
                f[(2, 4)] = v * ct * dt;
                let lim = self.theta_limit();
                if (x[4] + q * dt).abs() > lim {
                    f[(4, 4)] = 0.0;
                }
                f
            }
        }
    }

    /// Per-step process-noise covariance for input `r`.
    pub fn noise_cov(&self, r: &[f64]) -> DMatrix<f64> {
        match self.params.kind {
            ModelKind::Unicycle => self.sigma_w.clone(),
            ModelKind::FixedWing => {
                let p = &self.params.fixed_wing;
                let dt = self.params.dt;
                let kv = p.k_v * r[0].abs() * dt;
                let add = [kv, kv, kv, p.k_omega * r[1].abs() * dt, p.k_omega * r[2].abs() * dt];
                let mut w = self.sigma_w.clone();
                for (i, a) in add.iter().enumerate() {
                    w[(i, i)] += a;
                }
                w
            }
        }
    }

    /// One step of mean and covariance.
    pub fn step(&self, b: &Belief, r: &[f64]) -> Belief {
        let f = self.step_jacobian(&b.mean, r);
        let mean = self.step_mean(&b.mean, r);
        let cov = &f * &b.cov * f.transpose() + self.noise_cov(r);
        let mut out = Belief { kind: b.kind, mean, cov, stamp: b.stamp + self.params.dt };
        out.normalize();
        out
    }

    fn check_belief(&self, b: &Belief) -> Result<()> {
        let n = self.params.kind.state_dim();
        if b.kind != self.params.kind || b.mean.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: b.mean.len() });
        }
        let scale = 1.0 + b.cov.diagonal().iter().map(|v| v.abs()).sum::<f64>();
        let shifted = &b.cov + DMatrix::identity(n, n) * (1e-9 * scale);
        if nalgebra::Cholesky::new(shifted).is_none() {
            let min = b.cov.clone().symmetric_eigenvalues().min();
            return Err(Error::NotPsd(min));
        }
        Ok(())
    }

    /// Propagate a belief through a control, calling `visit` after every step.
    pub fn rollout(&self, b: &Belief, c: &Control, mut visit: impl FnMut(&Belief)) -> Result<Belief> {
        self.check_belief(b)?;
        self.check_control(c)?;
        let n = self.steps(c)?;
        let r = self.resolve(c, &b.mean);
        let mut cur = b.clone();
        for _ in 0..n {
            cur = self.step(&cur, &r);
            visit(&cur);
        }
        Ok(cur)
    }

    pub fn propagate(&self, b: &Belief, c: &Control) -> Result<Belief> {
        self.rollout(b, c, |_| {})
    }

    /// Propagate along a sequence of controls, truncating at `horizon`
    /// seconds (the last control is cut to whole steps).
    pub fn propagate_for(&self, b: &Belief, controls: &[Control], horizon: f64) -> Result<Belief> {
        let dt = self.params.dt;
        let mut left = (horizon / dt + STEP_EPS).floor() as usize;
        let mut cur = b.clone();
        for c in controls {
            if left == 0 {
                break;
            }
            let n = self.steps(c)?;
            let take = n.min(left);
            let cut = Control::new(c.u.clone(), take as f64 * dt);
            cur = self.propagate(&cur, &cut)?;
            left -= take;
        }
        Ok(cur)
    }

    /// Nominal speed of a belief given the control currently applied.
    pub fn speed(&self, b: &Belief, current: Option<&Control>) -> f64 {
        match self.params.kind {
            ModelKind::Unicycle => b.mean[2].hypot(b.mean[3]),
            ModelKind::FixedWing => current.map(|c| c.u[0].abs()).unwrap_or(0.0),
        }
    }

    /// Maximal-deceleration controls bringing the vehicle to rest.
    ///
    /// `current` is the control being applied when braking starts; only the
    /// fixed-wing model needs it since its speed is an input.
    pub fn braking_sequence(&self, b: &Belief, current: Option<&Control>) -> Vec<Control> {
        let eps = self.params.stop_speed;
        let dt = self.params.dt;
        if self.speed(b, current) <= eps {
            return Vec::new();
        }
        match self.params.kind {
            ModelKind::Unicycle => {
                // critically damped stop: hold the point v0 / lambda ahead so
                // that speed decays as v0 exp(-lambda t)
                let p = &self.params.unicycle;
                let lambda = p.kp.sqrt();
                let (vx, vy) = (b.mean[2], b.mean[3]);
                let v0 = vx.hypot(vy);
                let mut dx = vx / lambda;
                let mut dy = vy / lambda;
                let reach = dx.abs().max(dy.abs());
                if reach > p.max_offset {
                    dx *= p.max_offset / reach;
                    dy *= p.max_offset / reach;
                }
                let t = (v0 / eps).ln() / lambda;
                let n = (t / dt).ceil().max(1.0) as usize;
                // a clamped offset slows the decay, so extend until stopped
                self.extend_unicycle_stop(b, dx, dy, n)
            }
            ModelKind::FixedWing => {
                let p = &self.params.fixed_wing;
                let mut v = current.map(|c| c.u[0]).unwrap_or(0.0);
                let mut out = Vec::new();
                while v > eps.max(p.v_min) {
                    v = (v - p.a_max * dt).max(p.v_min);
                    out.push(Control::new(vec![v, 0.0, 0.0], dt));
                }
                out
            }
        }
    }

    fn extend_unicycle_stop(&self, b: &Belief, dx: f64, dy: f64, mut n: usize) -> Vec<Control> {
        let eps = self.params.stop_speed;
        let dt = self.params.dt;
        loop {
            let c = Control::new(vec![dx, dy, 0.0, 0.0], n as f64 * dt);
            match self.propagate(b, &c) {
                Ok(end) if end.mean[2].hypot(end.mean[3]) > eps && n < 100_000 => n = n * 5 / 4 + 1,
                _ => return vec![c],
            }
        }
    }

    /// Control that keeps the vehicle where it is.
    pub fn hold_control(&self) -> Control {
        let u = match self.params.kind {
            ModelKind::Unicycle => vec![0.0; 4],
            ModelKind::FixedWing => vec![self.params.fixed_wing.v_min, 0.0, 0.0],
        };
        Control::new(u, self.params.dt)
    }

    /// Uniform sample over the control box with a random whole-step duration.
    pub fn sample_control<R: Rng + ?Sized>(&self, rng: &mut R) -> Control {
        let u = match self.params.kind {
            ModelKind::Unicycle => {
                let p = &self.params.unicycle;
                let o = p.max_offset;
                let v = p.v_max;
                vec![
                    rng.random_range(-o..=o),
                    rng.random_range(-o..=o),
                    rng.random_range(-v..=v),
                    rng.random_range(-v..=v),
                ]
            }
            ModelKind::FixedWing => {
                let p = &self.params.fixed_wing;
                vec![
                    rng.random_range(p.v_min..=p.v_max),
                    rng.random_range(-p.omega_max..=p.omega_max),
                    rng.random_range(-p.q_max..=p.q_max),
                ]
            }
        };
        let t = rng.random_range(self.params.t_min..=self.params.t_max);
        let n = (t / self.params.dt).round().max(1.0);
        Control::new(u, n * self.params.dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unicycle() -> MotionModel {
        MotionModel::new(ModelParams::default()).unwrap()
    }

    fn fixed_wing() -> MotionModel {
        MotionModel::new(ModelParams::fixed_wing()).unwrap()
    }

    #[test]
    fn closed_loop_matches_euler_oracle() {
        // integrate the continuous PD loop with a tiny step
        let m = unicycle();
        let (a, b) = m.closed_loop();
        let z0 = DVector::from_vec(vec![0.3, -0.2, 0.5, -0.1]);
        let r = [1.0, 2.0, 0.2, 0.0];
        let exact = a * &z0 + b * DVector::from_column_slice(&r);
        let (kp, kd) = (1.0, 2.0);
        let mut z = z0.clone();
        let h = 1e-6;
        for _ in 0..(0.05 / h) as usize {
            let ax = kp * (r[0] - z[0]) + kd * (r[2] - z[2]);
            let ay = kp * (r[1] - z[1]) + kd * (r[3] - z[3]);
            z = DVector::from_vec(vec![z[0] + z[2] * h, z[1] + z[3] * h, z[2] + ax * h, z[3] + ay * h]);
        }
        assert!((exact - z).amax() < 1e-6);
    }

    #[test]
    fn unicycle_rest_is_fixed_point() {
        let mut p = ModelParams::default();
        p.unicycle.q_pos = 0.0;
        p.unicycle.q_vel = 0.0;
        let m = MotionModel::new(p).unwrap();
        let b = Belief::exact(ModelKind::Unicycle, &[2.0, -1.0, 0.0, 0.0]).unwrap();
        let out = m.propagate(&b, &Control::new(vec![0.0; 4], 1.0)).unwrap();
        assert!((&out.mean - &b.mean).amax() < 1e-12);
        assert!(out.cov.amax() < 1e-15);
    }

    #[test]
    fn fixed_wing_straight_line() {
        let m = fixed_wing();
        let b = Belief::exact(ModelKind::FixedWing, &[0.0; 5]).unwrap();
        let out = m.propagate(&b, &Control::new(vec![1.0, 0.0, 0.0], 1.0)).unwrap();
        let want = [1.0, 0.0, 0.0, 0.0, 0.0];
        for i in 0..5 {
            assert!((out.mean[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_wing_quarter_arc_matches_fine_integration() {
        let m = fixed_wing();
        let b = Belief::exact(ModelKind::FixedWing, &[0.0; 5]).unwrap();
        let out = m.propagate(&b, &Control::new(vec![1.0, PI / 2.0, 0.0], 1.0)).unwrap();
        let (mut x, mut y, mut psi) = (0.0_f64, 0.0_f64, 0.0_f64);
        let h = 1e-4;
        for _ in 0..10_000 {
            x += psi.cos() * h;
            y += psi.sin() * h;
            psi += PI / 2.0 * h;
        }
        assert!((out.mean[3] - PI / 2.0).abs() < 1e-9);
        assert!((out.mean[0] - x).abs() < 1e-3 && (out.mean[1] - y).abs() < 1e-3);
        let r = 2.0 / PI;
        assert!(((out.mean[0]).hypot(out.mean[1] - r) - r).abs() < 1e-3);
    }

    #[test]
    fn fixed_wing_jacobian_matches_finite_differences() {
        let mut p = ModelParams::fixed_wing();
        p.dt = 0.01;
        let m = MotionModel::new(p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let x = DVector::from_fn(5, |i, _| if i < 3 { rng.random_range(-5.0..5.0) } else { rng.random_range(-1.0..1.0) });
            let u = m.sample_control(&mut rng).u;
            let f = m.step_jacobian(&x, &u);
            let eps = 1e-6;
            for k in 0..5 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += eps;
                xm[k] -= eps;
                let d = (m.step_mean(&xp, &u) - m.step_mean(&xm, &u)) / (2.0 * eps);
                for r in 0..5 {
                    assert!((f[(r, k)] - d[r]).abs() <= 1e-6, "F[{r},{k}]");
                }
            }
        }
    }

    #[test]
    fn out_of_bounds_and_bad_duration_rejected() {
        let m = unicycle();
        let b = Belief::exact(ModelKind::Unicycle, &[0.0; 4]).unwrap();
        assert!(matches!(m.propagate(&b, &Control::new(vec![0.0, 0.0, 5.0, 0.0], 0.5)), Err(Error::ControlOutOfBounds(_))));
        assert!(m.propagate(&b, &Control::new(vec![0.0; 4], 0.033)).is_err());
        let mut bad = b.clone();
        bad.cov[(0, 0)] = -1.0;
        assert!(matches!(m.propagate(&bad, &Control::new(vec![0.0; 4], 0.05)), Err(Error::NotPsd(_))));
    }

    #[test]
    fn braking_examples() {
        let m = unicycle();
        let still = Belief::exact(ModelKind::Unicycle, &[0.0; 4]).unwrap();
        assert!(m.braking_sequence(&still, None).is_empty());
        let moving = Belief::exact(ModelKind::Unicycle, &[0.0, 0.0, 1.0, 0.0]).unwrap();
        let seq = m.braking_sequence(&moving, None);
        let mut cur = moving.clone();
        for c in &seq {
            cur = m.propagate(&cur, c).unwrap();
        }
        assert!(cur.mean[2].hypot(cur.mean[3]) <= 0.01);
        let mut last = 0.0;
        for i in 0..=15 {
            let v = 0.5 + 0.1 * i as f64;
            let b = Belief::exact(ModelKind::Unicycle, &[0.0, 0.0, v, 0.0]).unwrap();
            let mut cur = b.clone();
            for c in m.braking_sequence(&b, None) {
                cur = m.propagate(&cur, &c).unwrap();
            }
            assert!(cur.mean[0] > last, "braking distance must grow with speed");
            last = cur.mean[0];
        }
    }

    #[test]
    fn fixed_wing_braking_ramps_down() {
        let m = fixed_wing();
        let b = Belief::exact(ModelKind::FixedWing, &[0.0; 5]).unwrap();
        let c = Control::new(vec![1.5, 0.0, 0.0], 0.5);
        let seq = m.braking_sequence(&b, Some(&c));
        assert!(!seq.is_empty());
        assert!(seq.last().unwrap().u[0] <= 0.01);
        assert!(seq.windows(2).all(|w| w[1].u[0] <= w[0].u[0]));
        assert!(m.braking_sequence(&b, None).is_empty());
    }

    #[test]
    fn sampled_controls_are_bounded_and_centred() {
        for m in [unicycle(), fixed_wing()] {
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let n = 10_000;
            let samples: Vec<Control> = (0..n).map(|_| m.sample_control(&mut rng)).collect();
            for c in &samples {
                m.check_control(c).unwrap();
                m.steps(c).unwrap();
            }
            let d = m.kind().control_dim();
            let (lo, hi): (Vec<f64>, Vec<f64>) = match m.kind() {
                ModelKind::Unicycle => (vec![-2.0, -2.0, -1.0, -1.0], vec![2.0, 2.0, 1.0, 1.0]),
                ModelKind::FixedWing => (vec![0.0, -1.6, -0.5], vec![1.5, 1.6, 0.5]),
            };
            for k in 0..d {
                let mean = samples.iter().map(|c| c.u[k]).sum::<f64>() / n as f64;
                let se = (hi[k] - lo[k]) / 12f64.sqrt() / (n as f64).sqrt();
                assert!((mean - 0.5 * (lo[k] + hi[k])).abs() < 3.0 * se, "component {k}");
            }
            let mut a = ChaCha8Rng::seed_from_u64(1);
            let mut b = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..100 {
                assert_eq!(m.sample_control(&mut a), m.sample_control(&mut b));
            }
        }
    }

    #[test]
    fn unicycle_trace_grows_below_steady_state() {
        let m = unicycle();
        let mut b = Belief::exact(ModelKind::Unicycle, &[0.0, 0.0, 0.5, 0.0]).unwrap();
        let mut last = 0.0;
        for _ in 0..40 {
            b = m.step(&b, &[0.0, 0.0, 0.5, 0.0]);
            let t = b.cov.trace();
            assert!(t > last);
            last = t;
        }
    }

    #[test]
    fn fixed_wing_trace_strictly_increases() {
        let m = fixed_wing();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut b = Belief::exact(ModelKind::FixedWing, &[0.0; 5]).unwrap();
        let mut last = 0.0;
        for _ in 0..50 {
            let c = m.sample_control(&mut rng);
            m.rollout(&b, &c, |s| {
                assert!(s.cov.trace() > last);
                last = s.cov.trace();
            })
            .unwrap();
            b = m.propagate(&b, &c).unwrap();
        }
    }
}
