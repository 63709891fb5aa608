//! Planar four-link revolute arm with point masses at the link tips.
//!
//! The arm moves in the x–z plane, gravity acts along −z, and the task
//! coordinates are the tool-tip position `(x, z)` plus the tool pitch (the sum
//! of the joint angles, measured counter-clockwise from +x toward +z).
//!
//! For point masses the Lagrangian dynamics reduce to
//! `Σₖ mₖ Jₖᵀ (Jₖ q̈ + J̇ₖ q̇) + g(q) = τ`, which gives the inertia matrix, the
//! Coriolis/centripetal vector and the gravity vector in closed form.

use nalgebra::{Matrix2x4, Matrix3x4, Matrix4, Vector2, Vector3, Vector4};

use crate::error::{invalid, Error, Result};

pub const DOF: usize = 4;

/// Inertia condition number (1-norm) beyond which integration aborts.
pub const MAX_INERTIA_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel {
    pub link_lengths: [f64; DOF],
    pub link_masses: [f64; DOF],
    /// Magnitude of the gravitational acceleration along −z.
    pub gravity: f64,
    pub joint_viscous_friction: [f64; DOF],
}

impl Default for ArmModel {
    fn default() -> Self {
        Self {
            link_lengths: [0.30, 0.30, 0.25, 0.15],
            link_masses: [2.0, 2.0, 1.5, 1.0],
            gravity: 9.81,
            joint_viscous_friction: [0.05; DOF],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub q: Vector4<f64>,
    pub qdot: Vector4<f64>,
}

impl JointState {
    pub fn at_rest(q: Vector4<f64>) -> Self {
        Self { q, qdot: Vector4::zeros() }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite())
    }
}

/// Tool-tip pose and twist in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskState {
    /// `(x, z)` in metres.
    pub position: Vector2<f64>,
    pub pitch: f64,
    /// `(ẋ, ż, pitch rate)`.
    pub velocity: Vector3<f64>,
}

impl TaskState {
    pub fn pose(&self) -> Vector3<f64> {
        Vector3::new(self.position.x, self.position.y, self.pitch)
    }

    pub fn speed(&self) -> f64 {
        self.velocity.x.hypot(self.velocity.y)
    }
}

impl ArmModel {
    pub fn validate(&self) -> Result<()> {
        if self.link_lengths.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return invalid("link lengths must be positive");
        }
        if self.link_masses.iter().any(|&m| !(m.is_finite() && m > 0.0)) {
            return invalid("link masses must be positive");
        }
        if self.joint_viscous_friction.iter().any(|&c| !(c.is_finite() && c >= 0.0)) {
            return invalid("joint friction coefficients must be non-negative");
        }
        if !self.gravity.is_finite() {
            return invalid("gravity must be finite");
        }
        Ok(())
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    /// Cumulative link angles `θᵢ = Σ_{j≤i} q_j`.
    fn absolute_angles(q: &Vector4<f64>) -> [f64; DOF] {
        let mut acc = 0.0;
        let mut out = [0.0; DOF];
        for i in 0..DOF {
            acc += q[i];
            out[i] = acc;
        }
        out
    }

    /// Positions of the four link tips (the last one is the tool tip).
    pub fn link_tips(&self, q: &Vector4<f64>) -> [Vector2<f64>; DOF] {
        let theta = Self::absolute_angles(q);
        let mut p = Vector2::zeros();
        let mut out = [Vector2::zeros(); DOF];
        for i in 0..DOF {
            p += self.link_lengths[i] * Vector2::new(theta[i].cos(), theta[i].sin());
            out[i] = p;
        }
        out
    }

    /// Translational Jacobian of the tip of link `k` (zero-based); columns past `k` vanish.
    pub fn link_jacobian(&self, k: usize, q: &Vector4<f64>) -> Matrix2x4<f64> {
        let theta = Self::absolute_angles(q);
        let mut jac = Matrix2x4::zeros();
        // column j = Σ_{i=j..=k} lᵢ (−sin θᵢ, cos θᵢ), accumulated from the far end
        let mut tail = Vector2::zeros();
        for i in (0..=k).rev() {
            tail += self.link_lengths[i] * Vector2::new(-theta[i].sin(), theta[i].cos());
            jac.set_column(i, &tail);
        }
        jac
    }

    pub fn forward_kinematics(&self, state: &JointState) -> TaskState {
        let tips = self.link_tips(&state.q);
        let jac = self.jacobian(&state.q);
        TaskState { position: tips[DOF - 1], pitch: state.q.sum(), velocity: jac * state.qdot }
    }

    /// Rows are `∂(x, z, pitch)/∂q`.
    pub fn jacobian(&self, q: &Vector4<f64>) -> Matrix3x4<f64> {
        let lin = self.link_jacobian(DOF - 1, q);
        let mut jac = Matrix3x4::zeros();
        jac.fixed_view_mut::<2, 4>(0, 0).copy_from(&lin);
        jac.row_mut(2).fill(1.0);
        jac
    }

    /// `M(q) = Σₖ mₖ JₖᵀJₖ`.
    pub fn mass_matrix(&self, q: &Vector4<f64>) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        for k in 0..DOF {
            let jk = self.link_jacobian(k, q);
            m += self.link_masses[k] * jk.transpose() * jk;
        }
        // exact symmetry regardless of rounding in the products
        (m + m.transpose()) * 0.5
    }

    /// `C(q, q̇)q̇ = Σₖ mₖ Jₖᵀ J̇ₖq̇`, with `J̇ₖq̇ = −Σ_{i≤k} lᵢ ωᵢ² (cos θᵢ, sin θᵢ)`.
    pub fn bias_forces(&self, state: &JointState) -> Vector4<f64> {
        let theta = Self::absolute_angles(&state.q);
        let omega = Self::absolute_angles(&state.qdot);
        let mut tau = Vector4::zeros();
        let mut accel = Vector2::zeros();
        for k in 0..DOF {
            accel -= self.link_lengths[k] * omega[k] * omega[k] * Vector2::new(theta[k].cos(), theta[k].sin());
            let jk = self.link_jacobian(k, &state.q);
            tau += self.link_masses[k] * jk.transpose() * accel;
        }
        tau
    }

    /// Generalized gravity vector `∂U/∂q` for `U = Σ mₖ g zₖ`: the joint torque
    /// that holds the arm still against gravity.
    pub fn gravity_torque(&self, q: &Vector4<f64>) -> Vector4<f64> {
        let mut tau = Vector4::zeros();
        for k in 0..DOF {
            let jk = self.link_jacobian(k, q);
            tau += self.link_masses[k] * self.gravity * jk.row(1).transpose();
        }
        tau
    }

    pub fn potential_energy(&self, q: &Vector4<f64>) -> f64 {
        let tips = self.link_tips(q);
        (0..DOF).map(|k| self.link_masses[k] * self.gravity * tips[k].y).sum()
    }

    pub fn kinetic_energy(&self, state: &JointState) -> f64 {
        0.5 * state.qdot.dot(&(self.mass_matrix(&state.q) * state.qdot))
    }

    /// One semi-implicit Euler step of
    /// `M q̈ = τ + Jᵀw − C q̇ − g(q) − diag(b) q̇`.
    pub fn step(
        &self,
        state: &JointState,
        tau_command: &Vector4<f64>,
        tip_wrench_ext: &Vector3<f64>,
        dt: f64,
    ) -> Result<JointState> {
        if !(dt.is_finite() && dt > 0.0) {
            return invalid(format!("time step must be positive, got {dt}"));
        }
        let m = self.mass_matrix(&state.q);
        let m_inv = invert_inertia(&m)?;
        let friction = Vector4::from_fn(|i, _| self.joint_viscous_friction[i] * state.qdot[i]);
        let tau_ext = self.jacobian(&state.q).transpose() * tip_wrench_ext;
        let rhs = tau_command + tau_ext - self.bias_forces(state) - self.gravity_torque(&state.q) - friction;
        let qddot = m_inv * rhs;
        let qdot = state.qdot + qddot * dt;
        let next = JointState { q: state.q + qdot * dt, qdot };
        if !next.is_finite() {
            return Err(Error::Dynamics("non-finite joint state after integration".into()));
        }
        Ok(next)
    }

    /// Damped Newton solve for a joint configuration reaching `target = (x, z, pitch)`,
    /// using the nullspace to stay close to `guess`.
    pub fn inverse_kinematics(&self, target: &Vector3<f64>, guess: &Vector4<f64>) -> Result<Vector4<f64>> {
        let mut q = *guess;
        for _ in 0..200 {
            let pose = self.forward_kinematics(&JointState::at_rest(q)).pose();
            let err = target - pose;
            if err.norm() < 1e-12 {
                return Ok(q);
            }
            let jac = self.jacobian(&q);
            let jjt = jac * jac.transpose() + nalgebra::Matrix3::identity() * 1e-10;
            let Some(jjt_inv) = jjt.try_inverse() else {
                break;
            };
            let pinv = jac.transpose() * jjt_inv;
            let null = Matrix4::identity() - pinv * jac;
            q += pinv * err + null * (guess - q) * 0.1;
        }
        let pose = self.forward_kinematics(&JointState::at_rest(q)).pose();
        if (target - pose).norm() < 1e-9 {
            Ok(q)
        } else {
            invalid(format!("no inverse-kinematics solution for target {target:?}"))
        }
    }
}

/// Cholesky inverse of a symmetric inertia matrix, rejecting ill-conditioned input.
pub fn invert_inertia(m: &Matrix4<f64>) -> Result<Matrix4<f64>> {
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Dynamics("inertia matrix is not positive definite".into()))?;
    let inv = chol.inverse();
    let cond = one_norm(m) * one_norm(&inv);
    if !(cond.is_finite() && cond <= MAX_INERTIA_CONDITION) {
        return Err(Error::Dynamics(format!("inertia matrix condition number {cond:.3e}")));
    }
    Ok(inv)
}

fn one_norm(m: &Matrix4<f64>) -> f64 {
    m.column_iter().map(|c| c.abs().sum()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_state(rng: &mut impl Rng) -> JointState {
        JointState {
            q: Vector4::from_fn(|_, _| rng.random_range(-3.0..3.0)),
            qdot: Vector4::from_fn(|_, _| rng.random_range(-2.0..2.0)),
        }
    }

    /// Independent FK oracle: compose homogeneous planar transforms link by link.
    fn fk_by_transforms(model: &ArmModel, q: &Vector4<f64>) -> (Vector2<f64>, f64) {
        let mut t = nalgebra::Matrix3::<f64>::identity();
        for i in 0..DOF {
            let (s, c) = q[i].sin_cos();
            let rot = nalgebra::Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
            let trans = nalgebra::Matrix3::new(1.0, 0.0, model.link_lengths[i], 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
            t = t * rot * trans;
        }
        (Vector2::new(t[(0, 2)], t[(1, 2)]), t[(1, 0)].atan2(t[(0, 0)]))
    }

    #[test]
    fn stretched_and_rotated_poses() {
        let model = ArmModel::default();
        let tip = model.forward_kinematics(&JointState::at_rest(Vector4::zeros()));
        assert!((tip.position - Vector2::new(1.0, 0.0)).norm() < 1e-15);
        assert_eq!(tip.pitch, 0.0);
        let up = model.forward_kinematics(&JointState::at_rest(Vector4::new(FRAC_PI_2, 0.0, 0.0, 0.0)));
        assert!((up.position - Vector2::new(0.0, 1.0)).norm() < 1e-15);
        assert_eq!(up.pitch, FRAC_PI_2);
    }

    #[test]
    fn fk_matches_transform_composition() {
        let model = ArmModel::default();
        let mut rng = crate::rng::seeded_rng(1);
        for _ in 0..200 {
            let s = random_state(&mut rng);
            let tip = model.forward_kinematics(&s);
            let (p, pitch) = fk_by_transforms(&model, &s.q);
            assert!((tip.position - p).norm() < 1e-14);
            let wrapped = (tip.pitch - pitch + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI)
                - std::f64::consts::PI;
            assert!(wrapped.abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_at_zero_pose_and_pitch_row() {
        let model = ArmModel::default();
        let j = model.jacobian(&Vector4::zeros());
        assert!(j[(0, 3)].abs() < 1e-16);
        assert!((j[(1, 3)] - 0.15).abs() < 1e-15);
        let mut rng = crate::rng::seeded_rng(2);
        for _ in 0..20 {
            let j = model.jacobian(&random_state(&mut rng).q);
            assert_eq!(j.row(2).iter().copied().collect::<Vec<_>>(), vec![1.0; 4]);
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let model = ArmModel::default();
        let mut rng = crate::rng::seeded_rng(3);
        let h = 1e-6;
        for _ in 0..100 {
            let q = random_state(&mut rng).q;
            let j = model.jacobian(&q);
            let mut fd = Matrix3x4::zeros();
            for c in 0..DOF {
                let mut qp = q;
                let mut qm = q;
                qp[c] += h;
                qm[c] -= h;
                let pp = model.forward_kinematics(&JointState::at_rest(qp)).pose();
                let pm = model.forward_kinematics(&JointState::at_rest(qm)).pose();
                fd.set_column(c, &((pp - pm) / (2.0 * h)));
            }
            assert!((j - fd).norm() / j.norm() < 1e-6);
        }
    }

    #[test]
    fn mass_matrix_symmetric_positive_definite() {
        let model = ArmModel::default();
        let mut rng = crate::rng::seeded_rng(4);
        for _ in 0..200 {
            let m = model.mass_matrix(&random_state(&mut rng).q);
            assert!((m - m.transpose()).norm() < 1e-12);
            let eig = m.symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e > 0.0), "{eig:?}");
        }
    }

    #[test]
    fn kinetic_energy_matches_link_velocities() {
        let model = ArmModel::default();
        let mut rng = crate::rng::seeded_rng(5);
        let h = 1e-6;
        for _ in 0..100 {
            let s = random_state(&mut rng);
            // per-link velocities by differentiating link positions along q̇
            let plus = model.link_tips(&(s.q + s.qdot * h));
            let minus = model.link_tips(&(s.q - s.qdot * h));
            let oracle: f64 = (0..DOF)
                .map(|k| 0.5 * model.link_masses[k] * ((plus[k] - minus[k]) / (2.0 * h)).norm_squared())
                .sum();
            let ke = model.kinetic_energy(&s);
            assert!((ke - oracle).abs() <= 1e-6 * oracle.max(1e-9), "{ke} vs {oracle}");
        }
    }

    #[test]
    fn bias_forces_vanish_at_rest_and_scale_quadratically() {
        let model = ArmModel::default();
        let mut rng = crate::rng::seeded_rng(6);
        for _ in 0..50 {
            let s = random_state(&mut rng);
            assert_eq!(model.bias_forces(&JointState::at_rest(s.q)), Vector4::zeros());
            let c1 = model.bias_forces(&s);
            let c2 = model.bias_forces(&JointState { q: s.q, qdot: s.qdot * 2.0 });
            assert!((c2 - c1 * 4.0).norm() <= 1e-12 * c2.norm().max(1.0));
        }
    }

    #[test]
    fn coriolis_skew_symmetry_residual() {
        let model = ArmModel::default();
        let mut rng = crate::rng::seeded_rng(7);
        let h = 1e-3;
        for _ in 0..200 {
            let s = random_state(&mut rng);
            // five-point stencil along q̇
            let m = |t: f64| model.mass_matrix(&(s.q + s.qdot * t));
            let mdot = (m(-2.0 * h) - m(-h) * 8.0 + m(h) * 8.0 - m(2.0 * h)) / (12.0 * h);
            let residual = s.qdot.dot(&(mdot * s.qdot)) - 2.0 * s.qdot.dot(&model.bias_forces(&s));
            assert!(residual.abs() < 1e-9, "residual {residual}");
        }
    }

    #[test]
    fn gravity_torque_cases() {
        let mut model = ArmModel::default();
        let vertical = Vector4::new(FRAC_PI_2, 0.0, 0.0, 0.0);
        assert!(model.gravity_torque(&vertical)[0].abs() < 1e-12);
        let mut rng = crate::rng::seeded_rng(8);
        let h = 1e-6;
        for _ in 0..100 {
            let q = random_state(&mut rng).q;
            let g = model.gravity_torque(&q);
            let fd = Vector4::from_fn(|i, _| {
                let mut qp = q;
                let mut qm = q;
                qp[i] += h;
                qm[i] -= h;
                (model.potential_energy(&qp) - model.potential_energy(&qm)) / (2.0 * h)
            });
            assert!((g - fd).norm() / g.norm() < 1e-6);
        }
        model.gravity = 0.0;
        assert_eq!(model.gravity_torque(&Vector4::new(0.3, 0.2, 0.1, 0.0)), Vector4::zeros());
    }

    #[test]
    fn equilibrium_is_preserved() {
        let model = ArmModel { gravity: 0.0, joint_viscous_friction: [0.0; DOF], ..Default::default() };
        let s = JointState::at_rest(Vector4::new(0.4, -0.3, 0.2, -0.9));
        let next = model.step(&s, &Vector4::zeros(), &Vector3::zeros(), 1e-3).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn single_step_from_rest_matches_inverse_inertia() {
        let model = ArmModel { gravity: 0.0, ..Default::default() };
        let s = JointState::at_rest(Vector4::new(0.4, -0.3, 0.2, -0.9));
        let dt = 1e-3;
        let next = model.step(&s, &Vector4::new(1.0, 0.0, 0.0, 0.0), &Vector3::zeros(), dt).unwrap();
        let minv = model.mass_matrix(&s.q).try_inverse().unwrap();
        assert!((next.qdot[0] - minv[(0, 0)] * dt).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_dt_and_bad_models() {
        let model = ArmModel::default();
        let s = JointState::at_rest(Vector4::zeros());
        assert!(model.step(&s, &Vector4::zeros(), &Vector3::zeros(), 0.0).is_err());
        let bad = ArmModel { link_masses: [1.0, 0.0, 1.0, 1.0], ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(ArmModel::default().validate().is_ok());
    }

    #[test]
    fn step_is_bitwise_deterministic() {
        let model = ArmModel::default();
        let s = JointState { q: Vector4::new(0.1, 0.2, 0.3, 0.4), qdot: Vector4::new(0.5, -0.1, 0.2, 0.0) };
        let tau = Vector4::new(1.0, -2.0, 0.5, 0.1);
        let w = Vector3::new(-3.0, 1.0, 0.2);
        let a = model.step(&s, &tau, &w, 1e-3).unwrap();
        let b = model.step(&s, &tau, &w, 1e-3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inverse_kinematics_reaches_target() {
        let model = ArmModel::default();
        let target = Vector3::new(0.6, 0.075, -1.3);
        let q = model.inverse_kinematics(&target, &Vector4::new(0.9, -1.0, -0.6, -0.6)).unwrap();
        let pose = model.forward_kinematics(&JointState::at_rest(q)).pose();
        assert!((pose - target).norm() < 1e-9);
        assert!(model.inverse_kinematics(&Vector3::new(3.0, 0.0, 0.0), &Vector4::zeros()).is_err());
    }
}
