//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{Matrix3, Quaternion, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use taper_rod::bvp::{force_balance_error, integrate, shoot, shoot_system, RodSystem, SolverConfig};
use taper_rod::calibration::{
    evaluate_test, linesearch_youngs, register_rigid, split_train_test, synthesize, CalibrationSetup, LoadCellTable,
    ModulusRange, RigidTransform, SyntheticPlant,
};
use taper_rod::design::{is_unimodal, optimize_taper, DesignProblem, NoiseModel};
use taper_rod::rod::{ExternalLoads, RodModel, RodState, StateRate, TensionSet};
use taper_rod::RobotSpec;

type V3 = Vector3<f64>;
type M3 = Matrix3<f64>;

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Check {
    Check { pass, detail }
}

// ---------------------------------------------------------------------------
// constant-stiffness tendon rod, written out directly

fn skew(a: &V3) -> M3 {
    M3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

struct UniformTendonRod {
    length: f64,
    kse: M3,
    kbt: M3,
    tensions: Vec<f64>,
    /// `(angle, base offset, tip offset)`
    routes: Vec<(f64, f64, f64)>,
}

impl UniformTendonRod {
    fn new(spec: &RobotSpec, tensions: &[f64]) -> Self {
        let r = spec.base_radius;
        let e = spec.youngs_modulus;
        let g = e / (2.0 * (1.0 + spec.poisson_ratio));
        let area = PI * r * r;
        let i = PI * r.powi(4) / 4.0;
        let m = spec.tendon_count;
        UniformTendonRod {
            length: spec.length,
            kse: M3::from_diagonal(&V3::new(g * area, g * area, e * area)),
            kbt: M3::from_diagonal(&V3::new(e * i, e * i, 2.0 * e * i)),
            tensions: tensions.to_vec(),
            routes: (0..m).map(|k| (2.0 * PI * k as f64 / m as f64, spec.tendon_base_offset, spec.tendon_tip_offset)).collect(),
        }
    }

    fn route(&self, k: usize, s: f64) -> (V3, V3) {
        let (angle, r0, r1) = self.routes[k];
        let dir = V3::new(angle.cos(), angle.sin(), 0.0);
        (dir * (r0 + (r1 - r0) * s / self.length), dir * ((r1 - r0) / self.length))
    }

    fn rotation(q: &Quaternion<f64>) -> M3 {
        Rotation3::from(Unit::new_normalize(*q)).into_inner()
    }

    fn strain_rates(&self, st: &RodState, s: f64) -> (V3, V3) {
        let (v, u) = (st.v, st.u);
        let uh = skew(&u);
        let (mut a, mut b, mut g, mut h) = (M3::zeros(), M3::zeros(), M3::zeros(), M3::zeros());
        let (mut av, mut bv) = (V3::zeros(), V3::zeros());
        for (k, &tau) in self.tensions.iter().enumerate() {
            let (r, dr) = self.route(k, s);
            let pb = uh * r + dr + v;
            let n = pb.norm();
            let pbh = skew(&pb);
            let ai = -tau / (n * n * n) * pbh * pbh;
            let rh = skew(&r);
            let bi = rh * ai;
            let aiv = ai * (uh * pb + uh * dr);
            a += ai;
            b += bi;
            g -= ai * rh;
            h -= bi * rh;
            av += aiv;
            bv += rh * aiv;
        }
        let nb = self.kse * (v - V3::z());
        let mb = self.kbt * u;
        let c = -uh * mb - v.cross(&nb) - bv;
        let d = -uh * nb - av;
        // block elimination on the strain-rate system
        let p = (self.kse + a).try_inverse().unwrap();
        let schur = self.kbt + h - b * p * g;
        let du = schur.try_inverse().unwrap() * (c - b * p * d);
        let dv = p * (d - g * du);
        (dv, du)
    }
}

impl RodSystem for UniformTendonRod {
    fn length(&self) -> f64 {
        self.length
    }

    fn rate(&self, st: &RodState, s: f64) -> taper_rod::Result<StateRate> {
        let (dv, du) = self.strain_rates(st, s);
        let r = Self::rotation(&st.q);
        let q = st.q;
        let dq = Quaternion::new(
            -0.5 * (q.i * st.u.x + q.j * st.u.y + q.k * st.u.z),
            0.5 * (q.w * st.u.x + q.j * st.u.z - q.k * st.u.y),
            0.5 * (q.w * st.u.y + q.k * st.u.x - q.i * st.u.z),
            0.5 * (q.w * st.u.z + q.i * st.u.y - q.j * st.u.x),
        );
        Ok(StateRate { p: r * st.v, q: dq, v: dv, u: du })
    }

    fn internal_loads(&self, st: &RodState, _s: f64) -> (V3, V3) {
        let r = Self::rotation(&st.q);
        (r * self.kse * (st.v - V3::z()), r * self.kbt * st.u)
    }

    fn tip_targets(&self, tip: &RodState) -> taper_rod::Result<(V3, V3)> {
        let r = Self::rotation(&tip.q);
        let (mut n, mut m) = (V3::zeros(), V3::zeros());
        for (k, &tau) in self.tensions.iter().enumerate() {
            let (d, dd) = self.route(k, self.length);
            let tangent = skew(&tip.u) * d + dd + tip.v;
            let f = -tau * (r * tangent.normalize());
            n += f;
            m += (r * d).cross(&f);
        }
        Ok((n, m))
    }
}

fn random_state(rng: &mut ChaCha8Rng) -> RodState {
    let q = Quaternion::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    RodState {
        p: V3::from_fn(|_, _| rng.random_range(-0.3..0.3)),
        q: q / q.norm(),
        v: V3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(0.95..1.05)),
        u: V3::from_fn(|_, _| rng.random_range(-10.0..10.0)),
    }
}

fn rate_gap(a: &StateRate, b: &StateRate) -> f64 {
    a.max_abs_diff(b) / a.max_abs().max(1.0)
}

// ---------------------------------------------------------------------------

fn c1_straight() -> Check {
    let spec = RobotSpec::validation_robot();
    let t0 = Instant::now();
    let sol = shoot(&spec, &TensionSet::zeros(3), &ExternalLoads::default(), &SolverConfig::default(), None).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let err = (sol.tip_position() - V3::new(0.0, 0.0, 0.345)).norm();
    check(
        err < 1e-6 && sol.residual < 1e-8 && dt < 0.1,
        format!("tip error {err:.2e} m, residual {:.2e}, {dt:.4} s", sol.residual),
    )
}

fn c2_constant_stiffness() -> Check {
    let spec = RobotSpec::validation_robot().with_taper_angle(0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let tensions: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..15.0)).collect();
        let model = RodModel::new(&spec, &TensionSet::new(tensions.clone()).unwrap(), &ExternalLoads::default()).unwrap();
        let oracle = UniformTendonRod::new(&spec, &tensions);
        let st = random_state(&mut rng);
        let s = rng.random_range(0.0..spec.length);
        worst = worst.max(rate_gap(&oracle.rate(&st, s).unwrap(), &model.rate(&st, s).unwrap()));
    }
    let config = SolverConfig::default();
    let mut tip_gap: f64 = 0.0;
    for tensions in [[4.0, 0.0, 0.0], [10.0, 0.0, 0.0], [6.0, 3.0, 0.0], [2.0, 5.0, 8.0]] {
        let ours = shoot(&spec, &TensionSet::new(tensions.to_vec()).unwrap(), &ExternalLoads::default(), &config, None).unwrap();
        let theirs = shoot_system(&UniformTendonRod::new(&spec, &tensions), &config, None).unwrap();
        tip_gap = tip_gap.max((ours.tip_position() - theirs.tip_position()).norm());
    }
    check(
        worst < 1e-13 && tip_gap < 1e-9,
        format!("max relative rate gap {worst:.2e} over 1000 states, max tip gap {tip_gap:.2e} m"),
    )
}

fn tapered_deflection(spec: &RobotSpec, force: f64) -> f64 {
    // Simpson on F ∫ (l − s)² / (E I(s)) ds
    let n = 20_000;
    let l = spec.length;
    let h = l / n as f64;
    let f = |s: f64| {
        let r = spec.base_radius + (spec.tip_radius - spec.base_radius) * s / l;
        (l - s).powi(2) / (spec.youngs_modulus * PI * r.powi(4) / 4.0)
    };
    let mut acc = f(0.0) + f(l);
    for i in 1..n {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    force * acc * h / 3.0
}

fn c3_cantilever() -> Check {
    let t0 = Instant::now();
    let config = SolverConfig::default();
    let uniform = RobotSpec::validation_robot().with_taper_angle(0.0).unwrap();
    let tapered = RobotSpec::validation_robot();
    let l = uniform.length;
    let ei = uniform.youngs_modulus * PI * uniform.base_radius.powi(4) / 4.0;
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, spec, unit) in [("uniform", &uniform, l.powi(3) / (3.0 * ei)), ("tapered", &tapered, tapered_deflection(&tapered, 1.0))] {
        let force = 0.01 * l / unit;
        let expected = force * unit;
        let sol = shoot(spec, &TensionSet::zeros(3), &ExternalLoads::tip_force(V3::new(force, 0.0, 0.0)), &config, None).unwrap();
        let got = sol.tip_position().x;
        let rel = (got - expected).abs() / expected;
        pass &= rel < 0.01 && got <= 0.02 * l;
        parts.push(format!("{name} F={force:.4} N δ={got:.5} m vs {expected:.5} m ({:.3}%)", 100.0 * rel));
    }
    let dt = t0.elapsed().as_secs_f64();
    check(pass && dt < 1.0, format!("{}, {dt:.3} s", parts.join("; ")))
}

struct Fig3 {
    alphas: Vec<f64>,
    tensions: Vec<f64>,
    bend: Vec<Vec<f64>>,
    worst_balance: f64,
    failures: usize,
}

fn fig3_grid() -> Fig3 {
    let alphas = vec![0.0, 0.4, 0.8, 1.2];
    let tensions: Vec<f64> = (0..=12).map(f64::from).collect();
    let base = RobotSpec::validation_robot();
    let config = SolverConfig::default();
    let mut bend = Vec::new();
    let mut worst_balance: f64 = 0.0;
    let mut failures = 0;
    for &alpha in &alphas {
        let spec = base.with_taper_angle(alpha).unwrap();
        let mut row = Vec::new();
        let mut warm = None;
        for &tau in &tensions {
            let set = TensionSet::single(3, 0, tau).unwrap();
            match shoot(&spec, &set, &ExternalLoads::default(), &config, warm) {
                Ok(sol) => {
                    warm = Some(sol.proximal_strains());
                    let model = RodModel::new(&spec, &set, &ExternalLoads::default()).unwrap();
                    let err = force_balance_error(&model, &sol).unwrap();
                    let per_newton = if tau > 0.0 { err / tau } else if err == 0.0 { 0.0 } else { f64::INFINITY };
                    worst_balance = worst_balance.max(per_newton);
                    row.push(sol.bending_angle());
                }
                Err(_) => {
                    failures += 1;
                    row.push(f64::NAN);
                }
            }
        }
        bend.push(row);
    }
    Fig3 { alphas, tensions, bend, worst_balance, failures }
}

fn c4_force_balance(grid: &Fig3) -> Check {
    check(
        grid.worst_balance < 1e-5 && grid.failures == 0,
        format!(
            "worst ‖n(0) − n(l) − ∫f‖ per N of tension {:.2e} over {} solves, {} failed",
            grid.worst_balance,
            grid.alphas.len() * grid.tensions.len(),
            grid.failures
        ),
    )
}

fn c5_fig3_trends(grid: &Fig3) -> Check {
    let mut increasing_tau = true;
    for row in &grid.bend {
        increasing_tau &= row.windows(2).all(|w| w[1] > w[0]);
    }
    let mut monotone_alpha = true;
    for t in 1..grid.tensions.len() {
        monotone_alpha &= (1..grid.alphas.len()).all(|a| grid.bend[a][t] >= grid.bend[a - 1][t]);
    }
    let last = grid.tensions.len() - 1;
    check(
        increasing_tau && monotone_alpha,
        format!(
            "bending angle at 12 N: {}",
            grid.alphas.iter().zip(&grid.bend).map(|(a, r)| format!("α={a}°→{:.3} rad", r[last])).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn c6_table1() -> Check {
    let t0 = Instant::now();
    let alphas = [0.0, 0.4, 0.8, 1.2];
    let base = DesignProblem::new(RobotSpec::validation_robot(), TensionSet::zeros(3));
    let cells = taper_rod::design::recovery_table(&base, 0, &[5.0, 6.0, 7.0, 8.0, 9.0], &alphas, 0.5, 42).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let worst = cells.iter().map(|c| c.error().abs()).fold(0.0, f64::max);
    check(
        cells.len() == 20 && worst <= 0.1 && dt < 300.0,
        format!("{} cells, max |α* − α| = {worst:.4}°, {dt:.1} s", cells.len()),
    )
}

fn c7_fig5() -> Check {
    let plant = 1.08;
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, tau) in [5.0, 6.0, 7.0, 8.0, 9.0].into_iter().enumerate() {
        let mut problem = DesignProblem::new(RobotSpec::validation_robot(), TensionSet::single(3, 0, tau).unwrap());
        problem.noise = NoiseModel { level: 0.5, seed: 500 + i as u64 };
        let target = problem.planted_target(plant).unwrap();
        let result = optimize_taper(&problem, &target).unwrap();
        let curve = &result.curve;
        let k = (0..curve.len()).min_by(|&a, &b| curve[a].1.total_cmp(&curve[b].1)).unwrap();
        let interior = k > 0 && k < curve.len() - 1;
        let ok = is_unimodal(curve) && interior && (curve[k].0 - plant).abs() <= 0.05 && (result.alpha - plant).abs() <= 0.05;
        pass &= ok;
        parts.push(format!("τ={tau}: scan min {:.2}°, α*={:.4}°", curve[k].0, result.alpha));
    }
    check(pass, parts.join("; "))
}

fn c8_registration() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_rot: f64 = 0.0;
    let mut worst_trans: f64 = 0.0;
    for trial in 0..50 {
        let n = 4 + trial % 20;
        let axis = Unit::new_normalize(V3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
        let truth = RigidTransform {
            rotation: Rotation3::from_axis_angle(&axis, rng.random_range(0.0..PI)).into_inner(),
            translation: V3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
        };
        let src: Vec<V3> = (0..n).map(|_| V3::from_fn(|_, _| rng.random_range(-0.5..0.5))).collect();
        let dst: Vec<V3> = src.iter().map(|x| truth.apply(x)).collect();
        let fit = register_rigid(&src, &dst).unwrap();
        worst_rot = worst_rot.max(fit.rotation_angle_to(&truth));
        worst_trans = worst_trans.max((fit.translation - truth.translation).norm());
    }
    check(
        worst_rot < 1e-8 && worst_trans < 1e-10,
        format!("50 clouds of 4–23 points: rotation error {worst_rot:.2e} rad, translation error {worst_trans:.2e} m"),
    )
}

fn c9_load_cells() -> Check {
    let table = LoadCellTable::bench();
    let mut exact = true;
    let mut rows = 0;
    for cell in 1..=table.cell_count() {
        for &(f, b) in table.rows(cell).unwrap() {
            exact &= table.tension_from_adc(cell, b).unwrap() == f;
            rows += 1;
        }
    }
    let interp = table.tension_from_adc(1, 104).unwrap();
    let res = table.pooled_resolution();
    check(
        exact && (interp - 1.367).abs() < 1e-3 && (res / 0.125 - 1.0).abs() < 0.1,
        format!("{rows} rows exact, cell 1 bit 104 → {interp:.4} N, pooled resolution {res:.4} N/bit"),
    )
}

fn c10_calibration() -> Check {
    let t0 = Instant::now();
    let setup = CalibrationSetup::new(RobotSpec::validation_robot());
    let plant = SyntheticPlant::new(120e6, 142, 10);
    let (data, bias) = synthesize(&setup, &plant).unwrap();
    let (train, test) = split_train_test(&data, 0.7, 10).unwrap();
    let report = linesearch_youngs(&train, &setup, &ModulusRange::default()).unwrap();
    let eval = evaluate_test(&test, &setup, report.youngs_modulus, &report.transform, &report.bias, 1.0).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let e_err = (report.youngs_modulus - 120e6).abs() / 1e6;
    let rot = report.transform.rotation_angle_to(&plant.transform).to_degrees();
    let trans = (report.transform.translation - plant.transform.translation).norm();
    let bias_err = report.bias.offsets.iter().zip(&bias.offsets).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    let tip_err = eval.discs.last().map(|d| d.mean).unwrap_or(f64::NAN);
    check(
        train.len() == 100 && e_err <= 2.0 && report.is_unimodal() && rot <= 0.1 && trans <= 1e-3 && bias_err <= 1e-3 && dt < 600.0,
        format!(
            "{} train: E*={:.0} MPa, unimodal {}, R err {rot:.4}°, t err {:.3} mm, δ err {:.3} mm, test tip error {:.2} mm, {dt:.1} s",
            train.len(),
            report.youngs_modulus / 1e6,
            report.is_unimodal(),
            trans * 1e3,
            bias_err * 1e3,
            tip_err * 1e3
        ),
    )
}

fn c11_hygiene() -> Check {
    let spec = RobotSpec::validation_robot();
    let set = TensionSet::single(3, 0, 8.0).unwrap();
    let loads = ExternalLoads::default();
    let sol = shoot(&spec, &set, &loads, &SolverConfig::default(), None).unwrap();
    let (v0, u0) = sol.proximal_strains();
    let tip = |n: usize| integrate(&spec, v0, u0, &set, &loads, &SolverConfig::with_steps(n)).unwrap().tip_position();
    let (a, b, c) = (tip(25), tip(50), tip(100));
    let ratio = (a - b).norm() / (b - c).norm();
    let umax = sol.states.iter().map(|s| s.u.norm()).fold(0.0, f64::max);
    check(
        (ratio - 16.0).abs() <= 3.0 && sol.max_quat_drift < 1e-9,
        format!("Richardson ratio {ratio:.2}, max quaternion drift {:.2e} per step (|u| ≤ {umax:.1} 1/m, h = {:.2} mm)", sol.max_quat_drift, 1e3 * spec.length / 200.0),
    )
}

fn run(id: u32, name: &str, f: impl FnOnce() -> Check) -> bool {
    let t0 = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
        Check { pass: false, detail: format!("panicked: {msg}") }
    });
    println!(
        "[{}] {id:>2} {name}: {} ({:.1} s)",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.detail,
        t0.elapsed().as_secs_f64()
    );
    outcome.pass
}

fn main() {
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: u32| filter.is_empty() || filter.contains(&id);
    let mut results = Vec::new();

    if wanted(1) {
        results.push(run(1, "straight equilibrium", c1_straight));
    }
    if wanted(2) {
        results.push(run(2, "constant-stiffness reduction", c2_constant_stiffness));
    }
    if wanted(3) {
        results.push(run(3, "cantilever oracle", c3_cantilever));
    }
    if wanted(4) || wanted(5) {
        let grid = fig3_grid();
        if wanted(4) {
            results.push(run(4, "global force balance", || c4_force_balance(&grid)));
        }
        if wanted(5) {
            results.push(run(5, "taper/tension sweep trends", || c5_fig3_trends(&grid)));
        }
    }
    if wanted(6) {
        results.push(run(6, "noisy taper recovery table", c6_table1));
    }
    if wanted(7) {
        results.push(run(7, "cost curve shape", c7_fig5));
    }
    if wanted(8) {
        results.push(run(8, "rigid registration", c8_registration));
    }
    if wanted(9) {
        results.push(run(9, "load-cell lookup", c9_load_cells));
    }
    if wanted(10) {
        results.push(run(10, "end-to-end modulus calibration", c10_calibration));
    }
    if wanted(11) {
        results.push(run(11, "numerical hygiene", c11_hygiene));
    }
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
