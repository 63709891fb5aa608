//! Cartesian impedance control with nullspace posture and feedforward wrench.
//!
//! The commanded torque superimposes three components plus exact gravity
//! compensation:
//!
//! ```text
//! τ_c = Jᵀ(K(x_d − x) − D ẋ)          impedance
//!     + (I − Jᵀ J̄ᵀ) τ_posture          nullspace, dynamically consistent
//!     + Jᵀ F_cmd                       feedforward wrench
//!     + g(q)                           gravity compensation
//! ```
//!
//! with `J̄ = M⁻¹Jᵀ(J M⁻¹ Jᵀ)⁻¹`. The x axis is force controlled: its spring is
//! disabled while a normal force is commanded.

use nalgebra::{Matrix3x4, Matrix4, Vector3, Vector4};

use crate::arm::{invert_inertia, ArmModel, JointState};
use crate::error::{invalid, Result};

/// Smallest singular value of `J` below which a configuration counts as singular.
pub const SINGULAR_VALUE_FLOOR: f64 = 1e-6;

/// Fixed gains of the low-level controller, diagonal over `(x, z, pitch)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpedanceParams {
    pub stiffness: Vector3<f64>,
    pub damping: Vector3<f64>,
    pub nullspace_stiffness: f64,
    pub nullspace_damping: f64,
    pub nullspace_posture: Vector4<f64>,
}

impl Default for ImpedanceParams {
    fn default() -> Self {
        Self {
            stiffness: Vector3::new(0.0, 500.0, 20.0),
            damping: Vector3::new(40.0, 45.0, 4.0),
            nullspace_stiffness: 5.0,
            nullspace_damping: 1.0,
            nullspace_posture: Vector4::zeros(),
        }
    }
}

impl ImpedanceParams {
    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            let (k, d) = (self.stiffness[i], self.damping[i]);
            if !(k >= 0.0 && d >= 0.0 && k.is_finite() && d.is_finite()) {
                return invalid("impedance gains must be finite and non-negative");
            }
            if k > 0.0 && d == 0.0 {
                return invalid(format!("axis {i} has stiffness without damping"));
            }
        }
        if !(self.nullspace_stiffness >= 0.0 && self.nullspace_damping >= 0.0) {
            return invalid("nullspace gains must be non-negative");
        }
        Ok(())
    }
}

/// Commanded feedforward wrench at the tool tip plus the vertical setpoint.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WrenchCommand {
    pub f_x: f64,
    pub f_z: f64,
    pub tau_pitch: f64,
    pub z_setpoint: f64,
}

impl WrenchCommand {
    pub fn wrench(&self) -> Vector3<f64> {
        Vector3::new(self.f_x, self.f_z, self.tau_pitch)
    }
}

/// Held components of the impedance setpoint that the policy does not command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskHold {
    pub x: f64,
    pub pitch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullspaceTorque {
    pub torque: Vector4<f64>,
    pub singular: bool,
}

/// Result of one control-law evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlTorque {
    pub total: Vector4<f64>,
    pub impedance: Vector4<f64>,
    pub nullspace: Vector4<f64>,
    pub wrench: Vector4<f64>,
    pub gravity: Vector4<f64>,
    pub singular: bool,
}

pub fn impedance_torque(
    params: &ImpedanceParams,
    model: &ArmModel,
    state: &JointState,
    x_desired: &Vector3<f64>,
) -> Vector4<f64> {
    impedance_with_stiffness(&params.stiffness, &params.damping, model, state, x_desired)
}

fn impedance_with_stiffness(
    stiffness: &Vector3<f64>,
    damping: &Vector3<f64>,
    model: &ArmModel,
    state: &JointState,
    x_desired: &Vector3<f64>,
) -> Vector4<f64> {
    let task = model.forward_kinematics(state);
    let force = stiffness.component_mul(&(x_desired - task.pose())) - damping.component_mul(&task.velocity);
    model.jacobian(&state.q).transpose() * force
}

/// Smallest singular value of a 3×4 Jacobian.
pub fn min_singular_value(jac: &Matrix3x4<f64>) -> f64 {
    let eig = (jac * jac.transpose()).symmetric_eigenvalues();
    eig.min().max(0.0).sqrt()
}

/// Torque-space projector `I − Jᵀ J̄ᵀ`, or `None` at a singular configuration.
///
/// Evaluated as `L n nᵀ L⁻¹` with `M = L Lᵀ` and `n` the unit null vector of
/// `J L⁻ᵀ`; this avoids inverting `J M⁻¹ Jᵀ`, which is badly conditioned near
/// singularities.
pub fn nullspace_projector(model: &ArmModel, q: &Vector4<f64>) -> Option<Matrix4<f64>> {
    let jac = model.jacobian(q);
    if min_singular_value(&jac) < SINGULAR_VALUE_FLOOR {
        return None;
    }
    let m = model.mass_matrix(q);
    invert_inertia(&m).ok()?;
    let l = m.cholesky()?.l();
    let l_inv = l.solve_lower_triangular(&Matrix4::identity())?;
    let b = jac * l_inv.transpose();
    let mut padded = Matrix4::zeros();
    padded.fixed_view_mut::<3, 4>(0, 0).copy_from(&b);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t?;
    let k = svd.singular_values.imin();
    let n: Vector4<f64> = v_t.row(k).transpose();
    Some(l * n * (n.transpose() * l_inv))
}

pub fn nullspace_torque(params: &ImpedanceParams, model: &ArmModel, state: &JointState) -> NullspaceTorque {
    match nullspace_projector(model, &state.q) {
        Some(projector) => {
            let posture = params.nullspace_stiffness * (params.nullspace_posture - state.q)
                - params.nullspace_damping * state.qdot;
            NullspaceTorque { torque: projector * posture, singular: false }
        }
        None => NullspaceTorque { torque: Vector4::zeros(), singular: true },
    }
}

pub fn wrench_torque(model: &ArmModel, state: &JointState, cmd: &WrenchCommand) -> Vector4<f64> {
    model.jacobian(&state.q).transpose() * cmd.wrench()
}

/// Full control law. The impedance setpoint is `(hold.x, cmd.z_setpoint, hold.pitch)`.
pub fn compose(
    params: &ImpedanceParams,
    model: &ArmModel,
    state: &JointState,
    cmd: &WrenchCommand,
    hold: &TaskHold,
) -> ControlTorque {
    let x_desired = Vector3::new(hold.x, cmd.z_setpoint, hold.pitch);
    let mut stiffness = params.stiffness;
    if cmd.f_x != 0.0 {
        stiffness.x = 0.0;
    }
    let impedance = impedance_with_stiffness(&stiffness, &params.damping, model, state, &x_desired);
    let ns = nullspace_torque(params, model, state);
    let wrench = wrench_torque(model, state, cmd);
    let gravity = model.gravity_torque(&state.q);
    ControlTorque {
        total: impedance + ns.torque + wrench + gravity,
        impedance,
        nullspace: ns.torque,
        wrench,
        gravity,
        singular: ns.singular,
    }
}

/// Planar wrench `(f_x, f_z, τ_pitch)` recovered as `(Jᵀ)⁺ τ_ext`.
pub fn planar_wrench_from_torque(model: &ArmModel, q: &Vector4<f64>, tau_ext: &Vector4<f64>) -> Result<Vector3<f64>> {
    let jac = model.jacobian(q);
    if min_singular_value(&jac) < SINGULAR_VALUE_FLOOR {
        return invalid("jacobian is rank deficient");
    }
    let Some(chol) = (jac * jac.transpose()).cholesky() else {
        return invalid("jacobian is rank deficient");
    };
    Ok(chol.solve(&(jac * tau_ext)))
}

/// Six-component wrench `(F_x, F_y, F_z, T_x, T_y, T_z)`; out-of-plane entries are zero.
pub type Wrench6 = [f64; 6];

pub fn embed_planar(w: &Vector3<f64>) -> Wrench6 {
    [w.x, 0.0, w.y, 0.0, w.z, 0.0]
}

pub fn estimate_external_wrench(model: &ArmModel, state: &JointState, tau_ext: &Vector4<f64>) -> Result<Wrench6> {
    planar_wrench_from_torque(model, &state.q, tau_ext).map(|w| embed_planar(&w))
}

/// Stateful estimator that holds the last valid estimate through singular configurations.
#[derive(Debug, Clone, Default)]
pub struct WrenchEstimator {
    last: Wrench6,
    pub singular: bool,
}

impl WrenchEstimator {
    pub fn update(&mut self, model: &ArmModel, state: &JointState, tau_ext: &Vector4<f64>) -> Wrench6 {
        match estimate_external_wrench(model, state, tau_ext) {
            Ok(w) => {
                self.last = w;
                self.singular = false;
            }
            Err(_) => self.singular = true,
        }
        self.last
    }

    pub fn last(&self) -> Wrench6 {
        self.last
    }
}
