//! Configuration-space sweeps and inverse taper design.
//!
//! The inverse problem picks the taper angle whose forward solution has the
//! curvature profile closest (in the L2 sense over arc length) to a target
//! profile, with tendon tensions held fixed.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bvp::{shoot, trapezoid, RodSolution, SolverConfig};
use crate::error::{Error, Result};
use crate::geometry::RobotSpec;
use crate::rod::{ExternalLoads, TensionSet};
use crate::se3::Vec3;

/// Number of uniform samples in the pre-scan and exported cost curve.
pub const SCAN_POINTS: usize = 41;
/// Absolute tolerance of the golden-section search, degrees.
pub const ANGLE_TOL_DEG: f64 = 1e-3;

/// Angular strain samples `u(s)` on an arc-length grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureProfile {
    pub s: Vec<f64>,
    pub u: Vec<Vec3>,
}

impl CurvatureProfile {
    pub fn new(s: Vec<f64>, u: Vec<Vec3>) -> Result<Self> {
        if s.len() != u.len() || s.len() < 2 {
            return Err(Error::Parse("curvature profile needs matching s and u with at least two samples".into()));
        }
        if s.windows(2).any(|w| w[1] <= w[0]) || u.iter().any(|x| !x.iter().all(|c| c.is_finite())) {
            return Err(Error::Parse("curvature profile must have increasing s and finite values".into()));
        }
        Ok(CurvatureProfile { s, u })
    }

    pub fn zeros(length: f64, steps: usize) -> Self {
        let s = (0..=steps).map(|i| length * i as f64 / steps as f64).collect();
        CurvatureProfile { s, u: vec![Vec3::zeros(); steps + 1] }
    }

    /// Linear interpolation onto `grid`; values outside the sampled range are
    /// held constant.
    pub fn resample(&self, grid: &[f64]) -> Vec<Vec3> {
        if grid == self.s.as_slice() {
            return self.u.clone();
        }
        grid.iter()
            .map(|&x| {
                let n = self.s.len();
                if x <= self.s[0] {
                    return self.u[0];
                }
                if x >= self.s[n - 1] {
                    return self.u[n - 1];
                }
                let i = self.s.partition_point(|&v| v <= x) - 1;
                let t = (x - self.s[i]) / (self.s[i + 1] - self.s[i]);
                self.u[i] * (1.0 - t) + self.u[i + 1] * t
            })
            .collect()
    }

    /// Scale each component by an independent draw from `[1 - level, 1 + level]`.
    pub fn with_noise(&self, noise: &NoiseModel) -> Self {
        if noise.level == 0.0 {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        let lo = 1.0 - noise.level;
        let hi = 1.0 + noise.level;
        let u = self
            .u
            .iter()
            .map(|x| x.map(|c| c * rng.random_range(lo..=hi)))
            .collect();
        CurvatureProfile { s: self.s.clone(), u }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["s_m", "ux", "uy", "uz"])?;
        for (s, u) in self.s.iter().zip(&self.u) {
            out.write_record([s.to_string(), u.x.to_string(), u.y.to_string(), u.z.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Parse(format!("profile column `{name}` missing")))
        };
        let idx = [col("s_m")?, col("ux")?, col("uy")?, col("uz")?];
        let mut s = Vec::new();
        let mut u = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let v: Vec<f64> = idx
                .iter()
                .map(|&i| parse_f64(rec.get(i).unwrap_or("")))
                .collect::<Result<_>>()?;
            s.push(v[0]);
            u.push(Vec3::new(v[1], v[2], v[3]));
        }
        CurvatureProfile::new(s, u)
    }
}

pub(crate) fn parse_f64(text: &str) -> Result<f64> {
    text.trim().parse::<f64>().map_err(|_| Error::Parse(format!("not a number: `{text}`")))
}

/// Curvature profile of a converged solution.
pub fn curvature_of(solution: &RodSolution) -> Result<CurvatureProfile> {
    if !solution.converged {
        return Err(Error::NotConverged);
    }
    Ok(CurvatureProfile { s: solution.s.clone(), u: solution.states.iter().map(|st| st.u).collect() })
}

/// Multiplicative element-wise noise applied to planted target profiles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub level: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { level: 0.0, seed: 42 }
    }
}

#[derive(Clone, Debug)]
pub struct DesignProblem {
    /// Every field except `tip_radius` is used; the tip radius follows from
    /// the candidate taper angle.
    pub base: RobotSpec,
    pub tensions: TensionSet,
    /// Degrees.
    pub bounds: (f64, f64),
    pub loads: ExternalLoads,
    pub config: SolverConfig,
    pub noise: NoiseModel,
}

impl DesignProblem {
    pub fn new(base: RobotSpec, tensions: TensionSet) -> Self {
        DesignProblem {
            base,
            tensions,
            bounds: (0.0, 2.0),
            loads: ExternalLoads::default(),
            config: SolverConfig::default(),
            noise: NoiseModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds;
        if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::InvalidSpec(format!("taper bounds [{lo}, {hi}] must satisfy 0 <= lo < hi")));
        }
        if self.tensions.len() != self.base.tendon_count {
            return Err(Error::InvalidSpec("tension count does not match tendon count".into()));
        }
        self.config.validate()
    }

    pub fn solve(&self, alpha_deg: f64, guess: Option<(Vec3, Vec3)>) -> Result<RodSolution> {
        let spec = self.base.with_taper_angle(alpha_deg)?;
        shoot(&spec, &self.tensions, &self.loads, &self.config, guess)
    }

    /// Target generated by the forward model at `alpha_deg`, with this
    /// problem's noise model applied.
    pub fn planted_target(&self, alpha_deg: f64) -> Result<CurvatureProfile> {
        let clean = curvature_of(&self.solve(alpha_deg, None)?)?;
        Ok(clean.with_noise(&self.noise))
    }
}

fn profile_cost(solution: &RodSolution, target: &CurvatureProfile) -> f64 {
    let wanted = target.resample(&solution.s);
    let sq: Vec<f64> = solution.states.iter().zip(&wanted).map(|(st, ud)| (st.u - ud).norm_squared()).collect();
    trapezoid(&solution.s, &sq)
}

/// `J(α) = ∫ |u(s, α) − u_d(s)|² ds` by the trapezoidal rule on the solver grid.
pub fn design_cost(problem: &DesignProblem, alpha_deg: f64, target: &CurvatureProfile) -> Result<f64> {
    problem.validate()?;
    let (lo, hi) = problem.bounds;
    if !(lo..=hi).contains(&alpha_deg) {
        return Err(Error::InvalidSpec(format!("taper angle {alpha_deg} outside [{lo}, {hi}]")));
    }
    let sol = problem.solve(alpha_deg, None)?;
    Ok(profile_cost(&sol, target))
}

/// Cost evaluations that warm-start from the nearest previously solved angle.
struct CostEvaluator<'a> {
    problem: &'a DesignProblem,
    target: &'a CurvatureProfile,
    solved: Vec<(f64, (Vec3, Vec3))>,
    evaluations: Vec<(f64, f64)>,
}

impl<'a> CostEvaluator<'a> {
    fn new(problem: &'a DesignProblem, target: &'a CurvatureProfile) -> Self {
        CostEvaluator { problem, target, solved: Vec::new(), evaluations: Vec::new() }
    }

    /// Infeasible or unsolvable angles cost `+inf`.
    fn cost(&mut self, alpha: f64) -> f64 {
        let guess = self
            .solved
            .iter()
            .min_by(|a, b| (a.0 - alpha).abs().total_cmp(&(b.0 - alpha).abs()))
            .map(|(_, g)| *g);
        let j = match self.problem.solve(alpha, guess) {
            Ok(sol) => {
                self.solved.push((alpha, sol.proximal_strains()));
                profile_cost(&sol, self.target)
            }
            Err(_) => f64::INFINITY,
        };
        self.evaluations.push((alpha, j));
        j
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignResult {
    pub alpha: f64,
    pub cost: f64,
    /// Uniform scan over the bounds, `(alpha_deg, cost)`.
    pub curve: Vec<(f64, f64)>,
    pub evaluations: usize,
}

impl DesignResult {
    pub fn write_curve_csv<W: Write>(&self, w: W) -> Result<()> {
        write_cost_curve_csv(&self.curve, w)
    }
}

pub fn write_cost_curve_csv<W: Write>(curve: &[(f64, f64)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["alpha_deg", "cost"])?;
    for (a, j) in curve {
        out.write_record([a.to_string(), j.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// A sampled curve is unimodal when its discrete differences change sign at
/// most once, from falling to rising. Differences below `1e-12` of the largest
/// finite value are ignored; steps into `+inf` count as rising.
pub fn is_unimodal(curve: &[(f64, f64)]) -> bool {
    let scale = curve.iter().map(|c| c.1).filter(|j| j.is_finite()).fold(0.0f64, |m, j| m.max(j.abs()));
    let tol = 1e-12 * scale;
    let mut rising = false;
    for w in curve.windows(2) {
        let (a, b) = (w[0].1, w[1].1);
        let sign = match (a.is_finite(), b.is_finite()) {
            (true, true) if (b - a).abs() <= tol => 0,
            (true, true) => {
                if b > a {
                    1
                } else {
                    -1
                }
            }
            (true, false) => 1,
            (false, true) => -1,
            (false, false) => 0,
        };
        match sign {
            1 => rising = true,
            -1 if rising => return false,
            _ => {}
        }
    }
    true
}

/// Uniformly sampled cost curve over the problem bounds.
pub fn cost_curve(problem: &DesignProblem, target: &CurvatureProfile, points: usize) -> Result<Vec<(f64, f64)>> {
    problem.validate()?;
    let mut eval = CostEvaluator::new(problem, target);
    Ok(uniform_grid(problem.bounds.0, problem.bounds.1, points.max(2))
        .into_iter()
        .map(|a| (a, eval.cost(a)))
        .collect())
}

/// Coarse scan followed by golden-section refinement around the best scan
/// sample.
pub fn optimize_taper(problem: &DesignProblem, target: &CurvatureProfile) -> Result<DesignResult> {
    problem.validate()?;
    let (lo, hi) = problem.bounds;
    let mut eval = CostEvaluator::new(problem, target);
    let grid = uniform_grid(lo, hi, SCAN_POINTS);
    let curve: Vec<(f64, f64)> = grid.iter().map(|&a| (a, eval.cost(a))).collect();

    if curve.iter().all(|c| !c.1.is_finite()) {
        return Err(Error::NoConvergence { residual: f64::INFINITY, iterations: 0 });
    }
    if !is_unimodal(&curve) {
        return Err(Error::NonUnimodal { scan: curve });
    }

    let k = (0..curve.len()).min_by(|&i, &j| curve[i].1.total_cmp(&curve[j].1)).unwrap();
    let mut a = curve[k.saturating_sub(1)].0;
    let mut b = curve[(k + 1).min(curve.len() - 1)].0;

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval.cost(c);
    let mut fd = eval.cost(d);
    while b - a > ANGLE_TOL_DEG {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval.cost(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval.cost(d);
        }
    }

    let (alpha, cost) = eval
        .evaluations
        .iter()
        .cloned()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("evaluations are never empty");
    Ok(DesignResult { alpha, cost, curve, evaluations: eval.evaluations.len() })
}

/// One cell of a planted-angle recovery table.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryCell {
    pub tension: f64,
    pub alpha: f64,
    pub alpha_star: f64,
    pub cost: f64,
}

impl RecoveryCell {
    pub fn error(&self) -> f64 {
        self.alpha_star - self.alpha
    }
}

/// Plant each `(tension, alpha)` pair, perturb the target with
/// `noise_level`, and recover the angle. Cell `i` uses seed `seed + i`.
pub fn recovery_table(
    base: &DesignProblem,
    tendon: usize,
    tensions: &[f64],
    alphas: &[f64],
    noise_level: f64,
    seed: u64,
) -> Result<Vec<RecoveryCell>> {
    let mut cells = Vec::with_capacity(tensions.len() * alphas.len());
    for (ti, &tension) in tensions.iter().enumerate() {
        for (ai, &alpha) in alphas.iter().enumerate() {
            let cell_seed = seed.wrapping_add((ti * alphas.len() + ai) as u64);
            let problem = DesignProblem {
                tensions: TensionSet::single(base.base.tendon_count, tendon, tension)?,
                noise: NoiseModel { level: noise_level, seed: cell_seed },
                ..base.clone()
            };
            let target = problem.planted_target(alpha)?;
            let result = optimize_taper(&problem, &target)?;
            cells.push(RecoveryCell { tension, alpha, alpha_star: result.alpha, cost: result.cost });
        }
    }
    Ok(cells)
}

/// Table layout: one row per tension, one error column per planted angle.
pub fn write_recovery_table_csv<W: Write>(cells: &[RecoveryCell], w: W) -> Result<()> {
    let mut alphas: Vec<f64> = Vec::new();
    let mut tensions: Vec<f64> = Vec::new();
    for c in cells {
        if !alphas.contains(&c.alpha) {
            alphas.push(c.alpha);
        }
        if !tensions.contains(&c.tension) {
            tensions.push(c.tension);
        }
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["tension_N".to_string()];
    header.extend(alphas.iter().map(|a| format!("err_deg_alpha_{a}")));
    out.write_record(&header)?;
    for t in &tensions {
        let mut row = vec![t.to_string()];
        for a in &alphas {
            let cell = cells.iter().find(|c| c.tension == *t && c.alpha == *a);
            row.push(cell.map(|c| c.error().to_string()).unwrap_or_default());
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Result of one `(alpha, tension)` forward solve in a sweep.
#[derive(Clone, Debug)]
pub struct SweepCell {
    pub alpha: f64,
    pub tension: f64,
    pub outcome: std::result::Result<RodSolution, String>,
}

impl SweepCell {
    pub fn solution(&self) -> Option<&RodSolution> {
        self.outcome.as_ref().ok()
    }
}

/// Solve every `(alpha, tension)` pair with tension applied to `tendon`.
/// Tensions are swept in the given order per angle with warm starts.
pub fn taper_tension_sweep(
    base: &RobotSpec,
    alphas: &[f64],
    tensions: &[f64],
    tendon: usize,
    loads: &ExternalLoads,
    config: &SolverConfig,
) -> Result<Vec<SweepCell>> {
    config.validate()?;
    let mut cells = Vec::with_capacity(alphas.len() * tensions.len());
    for &alpha in alphas {
        let spec = match base.with_taper_angle(alpha) {
            Ok(spec) => spec,
            Err(e) => {
                for &tension in tensions {
                    cells.push(SweepCell { alpha, tension, outcome: Err(e.to_string()) });
                }
                continue;
            }
        };
        let mut warm = None;
        for &tension in tensions {
            let set = TensionSet::single(spec.tendon_count, tendon, tension)?;
            let outcome = shoot(&spec, &set, loads, config, warm).map_err(|e| e.to_string());
            if let Ok(sol) = &outcome {
                warm = Some(sol.proximal_strains());
            }
            cells.push(SweepCell { alpha, tension, outcome });
        }
    }
    Ok(cells)
}

/// `alpha_deg,tension_N,s_m,px,py,pz,ux,uy,uz`, one row per grid sample of
/// every converged cell.
pub fn write_sweep_csv<W: Write>(cells: &[SweepCell], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["alpha_deg", "tension_N", "s_m", "px", "py", "pz", "ux", "uy", "uz"])?;
    for cell in cells {
        if let Some(sol) = cell.solution() {
            for (s, st) in sol.s.iter().zip(&sol.states) {
                out.write_record([
                    cell.alpha.to_string(),
                    cell.tension.to_string(),
                    s.to_string(),
                    st.p.x.to_string(),
                    st.p.y.to_string(),
                    st.p.z.to_string(),
                    st.u.x.to_string(),
                    st.u.y.to_string(),
                    st.u.z.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
