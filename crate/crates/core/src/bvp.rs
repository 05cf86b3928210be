//! Shooting solver for the clamped-free rod.
//!
//! The base pose is fixed (`p(0) = 0`, `R(0) = I`); the unknowns are the
//! proximal strains `v(0)`, `u(0)`. Each residual evaluation integrates the
//! 13-dimensional state with fixed-step RK4 and compares the internal wrench
//! at the tip with the applied tip wrench plus the tendon terminations.

use nalgebra::{Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::geometry::RobotSpec;
use crate::rod::{ExternalLoads, ReferenceStrains, RodModel, RodState, StateRate, TensionSet};
use crate::se3::{normalized, Mat3, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub grid_steps: usize,
    pub newton_max_iter: usize,
    /// Applies separately to the force (N) and moment (N·m) residuals.
    pub residual_tol: f64,
    /// Relative finite-difference step for the shooting Jacobian.
    pub fd_epsilon: f64,
    /// Smallest damping factor tried before giving up on a Newton step.
    pub min_damping: f64,
    /// Number of uniform tension increments used when the direct solve fails.
    pub continuation_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            grid_steps: 200,
            newton_max_iter: 50,
            residual_tol: 1e-8,
            fd_epsilon: 1e-7,
            min_damping: 1.0 / 1024.0,
            continuation_steps: 5,
        }
    }
}

impl SolverConfig {
    pub fn with_steps(steps: usize) -> Self {
        SolverConfig { grid_steps: steps, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_steps < 10 {
            return Err(Error::InvalidSpec("grid_steps must be at least 10".into()));
        }
        if !(self.residual_tol > 0.0 && self.fd_epsilon > 0.0 && self.min_damping > 0.0) {
            return Err(Error::InvalidSpec("solver tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// The pieces of a rod model the integrator and shooting loop need.
pub trait RodSystem {
    fn length(&self) -> f64;
    fn rate(&self, state: &RodState, s: f64) -> Result<StateRate>;
    /// Internal force and moment, inertial frame.
    fn internal_loads(&self, state: &RodState, s: f64) -> (Vec3, Vec3);
    /// Values `n(l)` and `m(l)` must take.
    fn tip_targets(&self, tip: &RodState) -> Result<(Vec3, Vec3)>;
}

impl RodSystem for RodModel {
    fn length(&self) -> f64 {
        self.spec().length
    }
    fn rate(&self, state: &RodState, s: f64) -> Result<StateRate> {
        RodModel::rate(self, state, s)
    }
    fn internal_loads(&self, state: &RodState, s: f64) -> (Vec3, Vec3) {
        RodModel::internal_loads(self, state, s)
    }
    fn tip_targets(&self, tip: &RodState) -> Result<(Vec3, Vec3)> {
        RodModel::tip_targets(self, tip)
    }
}

/// Sampled rod configuration over `[0, l]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RodSolution {
    pub s: Vec<f64>,
    pub states: Vec<RodState>,
    pub converged: bool,
    /// Larger of the force and moment tip residual norms.
    pub residual: f64,
    pub iterations: usize,
    /// Largest `| |q| - 1 |` seen after an RK4 step, before renormalizing.
    pub max_quat_drift: f64,
}

impl RodSolution {
    pub fn length(&self) -> f64 {
        *self.s.last().unwrap()
    }

    pub fn tip(&self) -> &RodState {
        self.states.last().unwrap()
    }

    pub fn tip_position(&self) -> Vec3 {
        self.tip().p
    }

    pub fn tip_rotation(&self) -> Mat3 {
        self.tip().rotation()
    }

    pub fn proximal_strains(&self) -> (Vec3, Vec3) {
        (self.states[0].v, self.states[0].u)
    }

    /// Total turning of the centerline tangent, `∫ |(u_x, u_y)| ds`.
    pub fn bending_angle(&self) -> f64 {
        let k: Vec<f64> = self.states.iter().map(|st| st.u.x.hypot(st.u.y)).collect();
        trapezoid(&self.s, &k)
    }

    /// Angle between the tip and base tangents, in `[0, π]`.
    pub fn tip_tilt(&self) -> f64 {
        let z = self.tip_rotation().column(2).into_owned();
        z.z.clamp(-1.0, 1.0).acos()
    }

    /// Centerline position at arc length `s` by cubic Hermite interpolation
    /// with the tangents `R v` at the grid nodes.
    pub fn position_at(&self, s: f64) -> Vec3 {
        let n = self.s.len();
        let s = s.clamp(self.s[0], self.s[n - 1]);
        let mut i = self.s.partition_point(|&x| x <= s).saturating_sub(1);
        if i >= n - 1 {
            i = n - 2;
        }
        let (s0, s1) = (self.s[i], self.s[i + 1]);
        let h = s1 - s0;
        let t = (s - s0) / h;
        let (a, b) = (&self.states[i], &self.states[i + 1]);
        let ma = a.rotation() * a.v * h;
        let mb = b.rotation() * b.v * h;
        let t2 = t * t;
        let t3 = t2 * t;
        a.p * (2.0 * t3 - 3.0 * t2 + 1.0) + ma * (t3 - 2.0 * t2 + t) + b.p * (-2.0 * t3 + 3.0 * t2) + mb * (t3 - t2)
    }
}

pub(crate) fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

fn normalize_state(mut st: RodState) -> RodState {
    st.q = normalized(&st.q);
    st
}

/// Fixed-step RK4 from the clamped base with proximal strains `(v0, u0)`.
/// Stage quaternions are renormalized before each rate evaluation.
pub fn integrate_system<S: RodSystem + ?Sized>(sys: &S, v0: Vec3, u0: Vec3, steps: usize) -> Result<RodSolution> {
    let l = sys.length();
    let h = l / steps as f64;
    let mut s_grid = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut y = RodState::base(v0, u0);
    let mut drift: f64 = 0.0;
    s_grid.push(0.0);
    states.push(y);
    for i in 0..steps {
        let s = l * i as f64 / steps as f64;
        let s_mid = s + 0.5 * h;
        let s_next = l * (i + 1) as f64 / steps as f64;
        let k1 = sys.rate(&y, s)?;
        let k2 = sys.rate(&normalize_state(y.add_scaled(&k1, 0.5 * h)), s_mid)?;
        let k3 = sys.rate(&normalize_state(y.add_scaled(&k2, 0.5 * h)), s_mid)?;
        let k4 = sys.rate(&normalize_state(y.add_scaled(&k3, h)), s_next)?;
        let w = h / 6.0;
        let next = RodState {
            p: y.p + (k1.p + (k2.p + k3.p) * 2.0 + k4.p) * w,
            q: y.q + (k1.q + (k2.q + k3.q) * 2.0 + k4.q) * w,
            v: y.v + (k1.v + (k2.v + k3.v) * 2.0 + k4.v) * w,
            u: y.u + (k1.u + (k2.u + k3.u) * 2.0 + k4.u) * w,
        };
        let qn = next.q.norm();
        if !qn.is_finite() || !next.p.iter().chain(next.v.iter()).chain(next.u.iter()).all(|x| x.is_finite()) {
            return Err(Error::SingularSystem { s: s_next, condition: f64::INFINITY });
        }
        drift = drift.max((qn - 1.0).abs());
        y = normalize_state(next);
        s_grid.push(s_next);
        states.push(y);
    }
    Ok(RodSolution {
        s: s_grid,
        states,
        converged: false,
        residual: f64::INFINITY,
        iterations: 0,
        max_quat_drift: drift,
    })
}

/// Integrate the forward model from the given proximal strains without
/// enforcing the tip conditions. The returned candidate carries its tip
/// residual but is never marked converged.
pub fn integrate(
    spec: &RobotSpec,
    v0: Vec3,
    u0: Vec3,
    tensions: &TensionSet,
    loads: &ExternalLoads,
    config: &SolverConfig,
) -> Result<RodSolution> {
    config.validate()?;
    let model = RodModel::new(spec, tensions, loads)?;
    let mut sol = integrate_system(&model, v0, u0, config.grid_steps)?;
    let (rn, rm) = tip_residual(&model, &sol)?;
    sol.residual = rn.norm().max(rm.norm());
    Ok(sol)
}

fn tip_residual<S: RodSystem + ?Sized>(sys: &S, sol: &RodSolution) -> Result<(Vec3, Vec3)> {
    let tip = sol.tip();
    let (n, m) = sys.internal_loads(tip, sys.length());
    let (nt, mt) = sys.tip_targets(tip)?;
    Ok((n - nt, m - mt))
}

fn pack(v: &Vec3, u: &Vec3) -> Vector6<f64> {
    Vector6::new(v.x, v.y, v.z, u.x, u.y, u.z)
}

fn unpack(x: &Vector6<f64>) -> (Vec3, Vec3) {
    (Vec3::new(x[0], x[1], x[2]), Vec3::new(x[3], x[4], x[5]))
}

struct Evaluation {
    residual: Vector6<f64>,
    solution: RodSolution,
}

impl Evaluation {
    fn merit(&self) -> f64 {
        self.residual.norm()
    }

    fn split_norm(&self) -> f64 {
        let r = &self.residual;
        Vec3::new(r[0], r[1], r[2]).norm().max(Vec3::new(r[3], r[4], r[5]).norm())
    }
}

fn evaluate<S: RodSystem + ?Sized>(sys: &S, x: &Vector6<f64>, steps: usize) -> Result<Evaluation> {
    let (v0, u0) = unpack(x);
    let solution = integrate_system(sys, v0, u0, steps)?;
    let (rn, rm) = tip_residual(sys, &solution)?;
    let residual = pack(&rn, &rm);
    if !residual.iter().all(|r| r.is_finite()) {
        return Err(Error::SingularSystem { s: sys.length(), condition: f64::INFINITY });
    }
    Ok(Evaluation { residual, solution })
}

/// Damped Newton on the six proximal strains with a forward-difference
/// Jacobian.
pub fn shoot_system<S: RodSystem + ?Sized>(
    sys: &S,
    config: &SolverConfig,
    guess: Option<(Vec3, Vec3)>,
) -> Result<RodSolution> {
    config.validate()?;
    let (v0, u0) = guess.unwrap_or((ReferenceStrains::V0, ReferenceStrains::U0));
    let mut x = pack(&v0, &u0);
    let mut current = evaluate(sys, &x, config.grid_steps)?;
    let mut best = current.split_norm();
    let mut iterations = 0;
    loop {
        if current.split_norm() < config.residual_tol {
            let residual = current.split_norm();
            let mut sol = current.solution;
            sol.converged = true;
            sol.residual = residual;
            sol.iterations = iterations;
            return Ok(sol);
        }
        if iterations >= config.newton_max_iter {
            return Err(Error::NoConvergence { residual: best, iterations });
        }
        iterations += 1;

        let mut jac = Matrix6::zeros();
        for j in 0..6 {
            let step = config.fd_epsilon * x[j].abs().max(1.0);
            let mut xp = x;
            xp[j] += step;
            let col = match evaluate(sys, &xp, config.grid_steps) {
                Ok(e) => (e.residual - current.residual) / step,
                Err(_) => return Err(Error::NoConvergence { residual: best, iterations }),
            };
            jac.set_column(j, &col);
        }
        let dx = match jac.lu().solve(&(-current.residual)) {
            Some(dx) if dx.iter().all(|d| d.is_finite()) => dx,
            _ => return Err(Error::NoConvergence { residual: best, iterations }),
        };

        let merit = current.merit();
        let mut lambda = 1.0;
        let accepted = loop {
            let trial_x = x + dx * lambda;
            if let Ok(trial) = evaluate(sys, &trial_x, config.grid_steps) {
                if trial.merit() < (1.0 - 1e-4 * lambda) * merit {
                    break Some((trial_x, trial));
                }
            }
            lambda *= 0.5;
            if lambda < config.min_damping {
                break None;
            }
        };
        match accepted {
            Some((nx, trial)) => {
                x = nx;
                current = trial;
                best = best.min(current.split_norm());
            }
            None => return Err(Error::NoConvergence { residual: best, iterations }),
        }
    }
}

/// Solve the boundary value problem. If Newton fails from the initial guess,
/// the tensions are ramped up from zero in uniform increments, warm-starting
/// each stage from the previous one.
pub fn shoot(
    spec: &RobotSpec,
    tensions: &TensionSet,
    loads: &ExternalLoads,
    config: &SolverConfig,
    guess: Option<(Vec3, Vec3)>,
) -> Result<RodSolution> {
    let model = RodModel::new(spec, tensions, loads)?;
    shoot_model(&model, config, guess)
}

pub fn shoot_model(model: &RodModel, config: &SolverConfig, guess: Option<(Vec3, Vec3)>) -> Result<RodSolution> {
    let first = match shoot_system(model, config, guess) {
        Ok(sol) => return Ok(sol),
        Err(e @ (Error::InvalidSpec(_) | Error::OffsetInsideBackbone { .. })) => return Err(e),
        Err(e) => e,
    };
    if model.tensions().total() == 0.0 || config.continuation_steps == 0 {
        return Err(first);
    }
    let steps = config.continuation_steps;
    let full = model.tensions().clone();
    let mut warm = None;
    let mut total_iterations = 0;
    let mut last = None;
    for k in 1..=steps {
        let staged = model.with_tensions(full.scaled(k as f64 / steps as f64));
        match shoot_system(&staged, config, warm) {
            Ok(sol) => {
                total_iterations += sol.iterations;
                warm = Some(sol.proximal_strains());
                last = Some(sol);
            }
            Err(Error::NoConvergence { residual, iterations }) => {
                return Err(Error::NoConvergence { residual, iterations: total_iterations + iterations });
            }
            Err(e) => return Err(e),
        }
    }
    let mut sol = last.expect("at least one continuation step");
    sol.iterations = total_iterations;
    Ok(sol)
}

/// Solve a sequence of tension sets, warm-starting each solve from the last
/// converged one. Failed samples are returned as errors and the sweep goes on.
pub fn solve_tension_sweep(
    spec: &RobotSpec,
    schedule: &[TensionSet],
    loads: &ExternalLoads,
    config: &SolverConfig,
) -> Vec<Result<RodSolution>> {
    let mut warm = None;
    schedule
        .iter()
        .map(|tensions| {
            let out = shoot(spec, tensions, loads, config, warm);
            if let Ok(sol) = &out {
                warm = Some(sol.proximal_strains());
            }
            out
        })
        .collect()
}

/// `‖n(0) − n(l) − ∫ f ds‖` for a solution, where `f` is the full distributed
/// force (tendon plus external). Uses Simpson's rule when the grid has an even
/// number of intervals.
pub fn force_balance_error(model: &RodModel, sol: &RodSolution) -> Result<f64> {
    let mut f = Vec::with_capacity(sol.s.len());
    for (st, &s) in sol.states.iter().zip(&sol.s) {
        let rate = model.rate(st, s)?;
        f.push(model.distributed_force(st, s, &rate)?);
    }
    let integral = integrate_vectors(&sol.s, &f);
    let (n0, _) = model.internal_loads(&sol.states[0], 0.0);
    let (nl, _) = model.internal_loads(sol.tip(), model.spec().length);
    Ok((n0 - nl - integral).norm())
}

fn integrate_vectors(s: &[f64], f: &[Vec3]) -> Vec3 {
    let n = s.len() - 1;
    if n.is_multiple_of(2) {
        let h = (s[n] - s[0]) / n as f64;
        let mut acc = f[0] + f[n];
        for (i, fi) in f.iter().enumerate().take(n).skip(1) {
            acc += fi * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * (h / 3.0)
    } else {
        s.windows(2).zip(f.windows(2)).map(|(x, y)| (y[0] + y[1]) * (0.5 * (x[1] - x[0]))).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn robot() -> RobotSpec {
        RobotSpec::validation_robot()
    }

    #[test]
    fn straight_solution_without_load() {
        let spec = robot();
        let sol = shoot(&spec, &TensionSet::zeros(3), &ExternalLoads::default(), &SolverConfig::default(), None).unwrap();
        assert!(sol.converged);
        assert!(sol.iterations <= 1);
        assert!((sol.tip_position() - Vec3::new(0.0, 0.0, 0.345)).norm() < 1e-12);
        assert!((sol.tip_rotation() - Mat3::identity()).amax() < 1e-12);
        assert_eq!(sol.s.len(), 201);
        assert_eq!(sol.s[200], spec.length);
    }

    #[test]
    fn unbalanced_curvature_is_reported() {
        let spec = RobotSpec { tip_radius: 0.0111, ..robot() };
        let kappa = 2.0;
        let sol = integrate(
            &spec,
            ReferenceStrains::V0,
            Vec3::new(0.0, kappa, 0.0),
            &TensionSet::zeros(3),
            &ExternalLoads::default(),
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(!sol.converged);
        // free constant-curvature arc: m(l) = R K_bt u0
        let ei = spec.youngs_modulus * std::f64::consts::PI * spec.base_radius.powi(4) / 4.0;
        assert!((sol.residual - ei * kappa).abs() < 1e-9 * ei * kappa);
        for st in &sol.states {
            assert!((st.u - Vec3::new(0.0, kappa, 0.0)).amax() < 1e-12);
        }
    }

    #[test]
    fn single_tendon_bends_towards_tendon() {
        let spec = robot();
        let config = SolverConfig::default();
        let sol = shoot(&spec, &TensionSet::single(3, 0, 5.0).unwrap(), &ExternalLoads::default(), &config, None).unwrap();
        assert!(sol.converged && sol.residual < 1e-8);
        assert!(sol.tip_position().x > 0.01);
        assert!(sol.tip_position().y.abs() < 1e-9);
        let model = RodModel::new(&spec, &TensionSet::single(3, 0, 5.0).unwrap(), &ExternalLoads::default()).unwrap();
        assert!(force_balance_error(&model, &sol).unwrap() < 5e-5);
    }

    #[test]
    fn sweep_warm_start_matches_cold_start() {
        let spec = robot();
        let config = SolverConfig::default();
        let schedule: Vec<TensionSet> = (0..=4).map(|t| TensionSet::single(3, 0, 2.0 * t as f64).unwrap()).collect();
        let warm = solve_tension_sweep(&spec, &schedule, &ExternalLoads::default(), &config);
        for (tensions, w) in schedule.iter().zip(&warm) {
            let cold = shoot(&spec, tensions, &ExternalLoads::default(), &config, None).unwrap();
            let w = w.as_ref().unwrap();
            assert!((cold.tip_position() - w.tip_position()).norm() < 1e-8);
        }
        let single = solve_tension_sweep(&spec, &schedule[..1], &ExternalLoads::default(), &config);
        assert!((single[0].as_ref().unwrap().tip_position() - Vec3::new(0.0, 0.0, 0.345)).norm() < 1e-12);
    }

    #[test]
    fn hermite_interpolation_hits_nodes() {
        let spec = robot();
        let sol = shoot(&spec, &TensionSet::single(3, 0, 6.0).unwrap(), &ExternalLoads::default(), &SolverConfig::default(), None).unwrap();
        for i in [0, 17, 100, 200] {
            assert!((sol.position_at(sol.s[i]) - sol.states[i].p).norm() < 1e-15);
        }
        let fine = shoot(&spec, &TensionSet::single(3, 0, 6.0).unwrap(), &ExternalLoads::default(), &SolverConfig::with_steps(400), None).unwrap();
        let mid = 0.5 * (sol.s[50] + sol.s[51]);
        assert!((sol.position_at(mid) - fine.states[101].p).norm() < 1e-7);
    }

    #[test]
    fn rejects_bad_config() {
        let config = SolverConfig { grid_steps: 5, ..Default::default() };
        assert!(shoot(&robot(), &TensionSet::zeros(3), &ExternalLoads::default(), &config, None).is_err());
    }
}
