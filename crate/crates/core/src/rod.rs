//! Right-hand sides of the kinetostatic rod equations.
//!
//! The state is `(p, q, v, u)`: centerline position, orientation quaternion,
//! linear strain and angular strain, all as functions of arc length `s`. The
//! stiffness matrices vary with `s`, so their derivatives appear in the strain
//! equations. Tendon actuation adds the implicit coupling blocks `A`, `B`,
//! `G`, `H` and the explicit terms `a`, `b`.
//!
//! Sign convention: the distributed tendon load on the backbone is
//! `f_act = sum_i tau_i t_i'`, which is `R (a + A v' + G u')`. The tendon
//! terminations add `-tau_i t_i(l)` (and its moment) to the tip boundary
//! condition.

use nalgebra::{Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{tendon_paths, RobotSpec, Stiffness, TendonPath};
use crate::se3::{hat, quat_derivative, quat_to_rotation, identity_quat, Mat3, Quat, Vec3};

/// Tendon tangents shorter than this are treated as degenerate.
pub const MIN_TANGENT_NORM: f64 = 1e-9;
/// Largest accepted 1-norm condition estimate of the 6x6 strain-rate system.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RodState {
    pub p: Vec3,
    pub q: Quat,
    pub v: Vec3,
    pub u: Vec3,
}

impl RodState {
    /// Clamped base in the undeformed configuration.
    pub fn reference() -> Self {
        RodState {
            p: Vec3::zeros(),
            q: identity_quat(),
            v: ReferenceStrains::V0,
            u: ReferenceStrains::U0,
        }
    }

    pub fn base(v: Vec3, u: Vec3) -> Self {
        RodState { p: Vec3::zeros(), q: identity_quat(), v, u }
    }

    pub fn rotation(&self) -> Mat3 {
        quat_to_rotation(&self.q)
    }

    pub fn to_array(&self) -> [f64; 13] {
        [
            self.p.x, self.p.y, self.p.z, self.q.w, self.q.i, self.q.j, self.q.k, self.v.x, self.v.y, self.v.z,
            self.u.x, self.u.y, self.u.z,
        ]
    }

    pub fn from_array(a: &[f64; 13]) -> Self {
        RodState {
            p: Vec3::new(a[0], a[1], a[2]),
            q: Quat::new(a[3], a[4], a[5], a[6]),
            v: Vec3::new(a[7], a[8], a[9]),
            u: Vec3::new(a[10], a[11], a[12]),
        }
    }

    pub(crate) fn add_scaled(&self, rate: &StateRate, h: f64) -> Self {
        RodState {
            p: self.p + rate.p * h,
            q: self.q + rate.q * h,
            v: self.v + rate.v * h,
            u: self.u + rate.u * h,
        }
    }
}

/// Arc-length derivative of a [`RodState`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateRate {
    pub p: Vec3,
    pub q: Quat,
    pub v: Vec3,
    pub u: Vec3,
}

impl StateRate {
    pub fn max_abs_diff(&self, other: &StateRate) -> f64 {
        let dq = self.q - other.q;
        (self.p - other.p)
            .amax()
            .max(dq.coords.amax())
            .max((self.v - other.v).amax())
            .max((self.u - other.u).amax())
    }

    pub fn max_abs(&self) -> f64 {
        self.p.amax().max(self.q.coords.amax()).max(self.v.amax()).max(self.u.amax())
    }
}

/// Straight tapered reference configuration.
pub struct ReferenceStrains;

impl ReferenceStrains {
    pub const V0: Vec3 = Vec3::new(0.0, 0.0, 1.0);
    pub const U0: Vec3 = Vec3::new(0.0, 0.0, 0.0);
}

/// Constant tendon tensions in newtons.
#[derive(Clone, Debug, PartialEq)]
pub struct TensionSet(Vec<f64>);

impl TensionSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidSpec("tensions must be finite and non-negative".into()));
        }
        Ok(TensionSet(values))
    }

    pub fn zeros(count: usize) -> Self {
        TensionSet(vec![0.0; count])
    }

    /// Only tendon `index` carries `tension`.
    pub fn single(count: usize, index: usize, tension: f64) -> Result<Self> {
        let mut values = vec![0.0; count];
        *values
            .get_mut(index)
            .ok_or_else(|| Error::InvalidSpec(format!("tendon {index} out of range")))? = tension;
        TensionSet::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        TensionSet(self.0.iter().map(|t| t * c).collect())
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Largest tension; for single-tendon experiments this is the actuated one.
    pub fn actuated(&self) -> f64 {
        self.0.iter().cloned().fold(0.0, f64::max)
    }
}

/// Uniform gravity acting on the backbone material.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gravity {
    /// kg/m^3
    pub density: f64,
    /// m/s^2, inertial frame
    pub acceleration: Vec3,
}

/// External loads. Distributed terms are per unit arc length in the inertial
/// frame; gravity, when enabled, adds `density * A(s) * g` to the force.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExternalLoads {
    pub tip_force: Vec3,
    pub tip_couple: Vec3,
    pub distributed_force: Vec3,
    pub distributed_couple: Vec3,
    pub gravity: Option<Gravity>,
}

impl ExternalLoads {
    pub fn tip_force(f: Vec3) -> Self {
        ExternalLoads { tip_force: f, ..Default::default() }
    }

    pub fn force_at(&self, spec: &RobotSpec, s: f64) -> Vec3 {
        match self.gravity {
            Some(g) => self.distributed_force + g.acceleration * (g.density * spec.section_unchecked(s).area),
            None => self.distributed_force,
        }
    }

    pub fn couple_at(&self, _s: f64) -> Vec3 {
        self.distributed_couple
    }

    fn has_distributed(&self) -> bool {
        self.gravity.is_some() || self.distributed_force != Vec3::zeros() || self.distributed_couple != Vec3::zeros()
    }
}

/// Coupling terms contributed by the tendons at one arc length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Actuation {
    pub a_mat: Mat3,
    pub b_mat: Mat3,
    pub g_mat: Mat3,
    pub h_mat: Mat3,
    pub a_vec: Vec3,
    pub b_vec: Vec3,
}

impl Actuation {
    fn zero() -> Self {
        Actuation {
            a_mat: Mat3::zeros(),
            b_mat: Mat3::zeros(),
            g_mat: Mat3::zeros(),
            h_mat: Mat3::zeros(),
            a_vec: Vec3::zeros(),
            b_vec: Vec3::zeros(),
        }
    }
}

/// Body-frame tendon tangent `p_i'^b` and the part of `p_i''^b` that does not
/// depend on `u'` or `v'`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TendonKinematics {
    pub tangent: Vec3,
    pub curvature_partial: Vec3,
}

pub fn tendon_kinematics(state: &RodState, s: f64, tendon: &TendonPath) -> Result<TendonKinematics> {
    let d = tendon.offset(s);
    let dd = tendon.offset_rate(s);
    let ddd = tendon.offset_accel(s);
    let uh = hat(&state.u);
    let tangent = uh * d + dd + state.v;
    if tangent.norm() < MIN_TANGENT_NORM {
        return Err(Error::ZeroTangent { tendon: tendon.index, s });
    }
    Ok(TendonKinematics { tangent, curvature_partial: uh * tangent + uh * dd + ddd })
}

/// A robot with fixed tensions and loads, ready for ODE evaluation.
#[derive(Clone, Debug)]
pub struct RodModel {
    spec: RobotSpec,
    tendons: Vec<TendonPath>,
    tensions: TensionSet,
    loads: ExternalLoads,
}

impl RodModel {
    pub fn new(spec: &RobotSpec, tensions: &TensionSet, loads: &ExternalLoads) -> Result<Self> {
        spec.validate()?;
        let tendons = tendon_paths(spec)?;
        if tensions.len() != tendons.len() {
            return Err(Error::InvalidSpec(format!(
                "{} tensions given for {} tendons",
                tensions.len(),
                tendons.len()
            )));
        }
        Ok(RodModel { spec: spec.clone(), tendons, tensions: tensions.clone(), loads: *loads })
    }

    pub fn unactuated(spec: &RobotSpec, loads: &ExternalLoads) -> Result<Self> {
        RodModel::new(spec, &TensionSet::zeros(spec.tendon_count), loads)
    }

    pub fn spec(&self) -> &RobotSpec {
        &self.spec
    }

    pub fn tensions(&self) -> &TensionSet {
        &self.tensions
    }

    pub fn loads(&self) -> &ExternalLoads {
        &self.loads
    }

    pub fn tendons(&self) -> &[TendonPath] {
        &self.tendons
    }

    pub fn with_tensions(&self, tensions: TensionSet) -> Self {
        RodModel { tensions, ..self.clone() }
    }

    fn is_actuated(&self) -> bool {
        self.tensions.values().iter().any(|&t| t != 0.0)
    }

    fn stiffness(&self, s: f64) -> Result<Stiffness> {
        let k = self.spec.stiffness_unchecked(s);
        if k.se.min() <= 0.0 || k.bt.min() <= 0.0 || !k.se.min().is_finite() {
            return Err(Error::SingularStiffness { s });
        }
        Ok(k)
    }

    pub fn actuation(&self, state: &RodState, s: f64) -> Result<Actuation> {
        let mut act = Actuation::zero();
        for (tendon, &tau) in self.tendons.iter().zip(self.tensions.values()) {
            if tau == 0.0 {
                continue;
            }
            let kin = tendon_kinematics(state, s, tendon)?;
            let norm = kin.tangent.norm();
            let th = hat(&kin.tangent);
            let a_i = th * th * (-tau / (norm * norm * norm));
            let dh = hat(&tendon.offset(s));
            let b_i = dh * a_i;
            let a_vec_i = a_i * kin.curvature_partial;
            act.a_mat += a_i;
            act.b_mat += b_i;
            act.g_mat -= a_i * dh;
            act.h_mat -= b_i * dh;
            act.a_vec += a_vec_i;
            act.b_vec += dh * a_vec_i;
        }
        Ok(act)
    }

    fn distributed_body(&self, rt: &Mat3, s: f64) -> (Vec3, Vec3) {
        if !self.loads.has_distributed() {
            return (Vec3::zeros(), Vec3::zeros());
        }
        (rt * self.loads.force_at(&self.spec, s), rt * self.loads.couple_at(s))
    }

    /// Strain rates without tendons (tendon tensions are ignored).
    pub fn unactuated_rate(&self, state: &RodState, s: f64) -> Result<StateRate> {
        let k = self.stiffness(s)?;
        let r = state.rotation();
        let rt = r.transpose();
        let (f_body, l_body) = self.distributed_body(&rt, s);
        let uh = hat(&state.u);
        let dv = state.v - ReferenceStrains::V0;
        let du = state.u - ReferenceStrains::U0;
        let n_body = k.se.component_mul(&dv);
        let m_body = k.bt.component_mul(&du);
        let v_rhs = uh * n_body + k.se_rate.component_mul(&dv) + f_body;
        let u_rhs = uh * m_body + k.bt_rate.component_mul(&du) + state.v.cross(&n_body) + l_body;
        Ok(StateRate {
            p: r * state.v,
            q: quat_derivative(&state.q, &state.u),
            v: -v_rhs.component_div(&k.se),
            u: -u_rhs.component_div(&k.bt),
        })
    }

    /// Full tendon-actuated rate. Falls back to [`Self::unactuated_rate`]
    /// when every tension is zero, where the two agree exactly.
    pub fn rate(&self, state: &RodState, s: f64) -> Result<StateRate> {
        if !self.is_actuated() {
            return self.unactuated_rate(state, s);
        }
        let k = self.stiffness(s)?;
        let act = self.actuation(state, s)?;
        let r = state.rotation();
        let rt = r.transpose();
        let (f_body, l_body) = self.distributed_body(&rt, s);
        let uh = hat(&state.u);
        let dv = state.v - ReferenceStrains::V0;
        let du = state.u - ReferenceStrains::U0;
        let n_body = k.se.component_mul(&dv);
        let m_body = k.bt.component_mul(&du);

        let d = -(uh * n_body + k.se_rate.component_mul(&dv)) - f_body - act.a_vec;
        let c = -(uh * m_body + k.bt_rate.component_mul(&du)) - state.v.cross(&n_body) - l_body - act.b_vec;

        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Mat3::from_diagonal(&k.se) + act.a_mat));
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&act.g_mat);
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&act.b_mat);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Mat3::from_diagonal(&k.bt) + act.h_mat));
        let rhs = Vector6::new(d.x, d.y, d.z, c.x, c.y, c.z);
        let x = solve_guarded(&m, &rhs, s)?;

        Ok(StateRate {
            p: r * state.v,
            q: quat_derivative(&state.q, &state.u),
            v: Vec3::new(x[0], x[1], x[2]),
            u: Vec3::new(x[3], x[4], x[5]),
        })
    }

    /// Internal force and moment in the inertial frame.
    pub fn internal_loads(&self, state: &RodState, s: f64) -> (Vec3, Vec3) {
        let k = self.spec.stiffness_unchecked(s);
        let r = state.rotation();
        (
            r * k.se.component_mul(&(state.v - ReferenceStrains::V0)),
            r * k.bt.component_mul(&(state.u - ReferenceStrains::U0)),
        )
    }

    /// Required `(n(l), m(l))`: the external tip wrench plus the pull of each
    /// tendon termination.
    pub fn tip_targets(&self, tip: &RodState) -> Result<(Vec3, Vec3)> {
        let s = self.spec.length;
        let r = tip.rotation();
        let mut n = self.loads.tip_force;
        let mut m = self.loads.tip_couple;
        for (tendon, &tau) in self.tendons.iter().zip(self.tensions.values()) {
            if tau == 0.0 {
                continue;
            }
            let kin = tendon_kinematics(tip, s, tendon)?;
            let pull = r * kin.tangent * (-tau / kin.tangent.norm());
            n += pull;
            m += (r * tendon.offset(s)).cross(&pull);
        }
        Ok((n, m))
    }

    /// Distributed force on the backbone in the inertial frame: tendon
    /// contribution plus external load. Needs the strain rates at `s`.
    pub fn distributed_force(&self, state: &RodState, s: f64, rate: &StateRate) -> Result<Vec3> {
        let r = state.rotation();
        let act = self.actuation(state, s)?;
        let f_act = r * (act.a_vec + act.a_mat * rate.v + act.g_mat * rate.u);
        Ok(f_act + self.loads.force_at(&self.spec, s))
    }

    /// Distributed couple on the backbone in the inertial frame.
    pub fn distributed_couple(&self, state: &RodState, s: f64, rate: &StateRate) -> Result<Vec3> {
        let r = state.rotation();
        let act = self.actuation(state, s)?;
        let l_act = r * (act.b_vec + act.b_mat * rate.v + act.h_mat * rate.u);
        Ok(l_act + self.loads.couple_at(s))
    }
}

fn solve_guarded(m: &Matrix6<f64>, rhs: &Vector6<f64>, s: f64) -> Result<Vector6<f64>> {
    let inv = m.try_inverse().ok_or(Error::SingularSystem { s, condition: f64::INFINITY })?;
    let condition = norm1(m) * norm1(&inv);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::SingularSystem { s, condition });
    }
    Ok(inv * rhs)
}

fn norm1(m: &Matrix6<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn rhs_unactuated(spec: &RobotSpec, state: &RodState, s: f64, loads: &ExternalLoads) -> Result<StateRate> {
    check_domain(spec, s)?;
    RodModel::unactuated(spec, loads)?.unactuated_rate(state, s)
}

pub fn rhs_actuated(
    spec: &RobotSpec,
    state: &RodState,
    s: f64,
    tensions: &TensionSet,
    loads: &ExternalLoads,
) -> Result<StateRate> {
    check_domain(spec, s)?;
    RodModel::new(spec, tensions, loads)?.rate(state, s)
}

pub fn actuation_matrices(spec: &RobotSpec, state: &RodState, s: f64, tensions: &TensionSet) -> Result<Actuation> {
    check_domain(spec, s)?;
    RodModel::new(spec, tensions, &ExternalLoads::default())?.actuation(state, s)
}

pub fn internal_loads(spec: &RobotSpec, state: &RodState, s: f64) -> Result<(Vec3, Vec3)> {
    check_domain(spec, s)?;
    Ok(RodModel::unactuated(spec, &ExternalLoads::default())?.internal_loads(state, s))
}

fn check_domain(spec: &RobotSpec, s: f64) -> Result<()> {
    if !(0.0..=spec.length).contains(&s) {
        return Err(Error::OutOfDomain { s, length: spec.length });
    }
    Ok(())
}
