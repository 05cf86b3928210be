//! `taper-rod` command-line front end.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bvp::{shoot, SolverConfig};
use crate::calibration::{
    calibrate, synthesize, CalibrationDataset, CalibrationSetup, DatasetLayout, LoadCellTable, ModulusRange, PipelineOptions,
    SyntheticPlant,
};
use crate::design::{
    optimize_taper, recovery_table, taper_tension_sweep, write_recovery_table_csv, write_sweep_csv, CurvatureProfile,
    DesignProblem, NoiseModel,
};
use crate::error::{Error, Result};
use crate::geometry::{disc_layout, export_manifest, load_spec, spec_to_toml, taper_angle, RobotSpec};
use crate::rod::{ExternalLoads, TensionSet};
use crate::se3::Vec3;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_CONVERGENCE: i32 = 2;
pub const EXIT_OPTIMIZATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "taper-rod", version, about = "Tendon-driven continuum robots with tapered backbones")]
pub struct Cli {
    /// Robot spec (TOML). Defaults to the built-in validation robot.
    #[arg(long, global = true)]
    pub spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Integration steps along the backbone.
    #[arg(long, global = true, default_value_t = 200)]
    pub steps: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one configuration and write its centerline.
    Solve(SolveArgs),
    /// Solve a grid of taper angles and tensions.
    Sweep(SweepArgs),
    /// Recover the taper angle that best matches a curvature profile.
    Design(DesignArgs),
    /// Fit Young's modulus to a motion-capture dataset.
    Calibrate(CalibrateArgs),
    /// Export the derived geometry manifest.
    Geometry(GeometryArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Tendon tensions, N.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub tensions: Option<Vec<f64>>,
    /// Tip force in the base frame, N.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub tip_force: Option<Vec<f64>>,
    /// Tip couple in the base frame, N m.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub tip_couple: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Taper angles, degrees.
    #[arg(long, value_delimiter = ',', required = true)]
    pub alphas: Vec<f64>,
    /// Tensions on the actuated tendon, N.
    #[arg(long, value_delimiter = ',', required = true)]
    pub tensions: Vec<f64>,
    /// 1-based actuated tendon.
    #[arg(long, default_value_t = 1)]
    pub tendon: usize,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Target curvature CSV (`s_m,ux,uy,uz`).
    #[arg(long, conflicts_with = "plant_alpha")]
    pub target: Option<PathBuf>,
    /// Generate the target from the model at this angle, degrees.
    #[arg(long)]
    pub plant_alpha: Option<f64>,
    /// Tension on the actuated tendon, N.
    #[arg(long, default_value_t = 7.0)]
    pub tension: f64,
    /// 1-based actuated tendon.
    #[arg(long, default_value_t = 1)]
    pub tendon: usize,
    /// Search bounds `lo:hi`, degrees.
    #[arg(long, default_value = "0:2")]
    pub bounds: String,
    /// Relative element-wise noise on planted targets.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Run a recovery table over these tensions (with `--grid-alphas`).
    #[arg(long, value_delimiter = ',', requires = "grid_alphas")]
    pub grid_tensions: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', requires = "grid_tensions")]
    pub grid_alphas: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Dataset CSV, long or wide layout.
    #[arg(long, required_unless_present = "synthetic")]
    pub dataset: Option<PathBuf>,
    /// Load-cell table; raw `adc*` columns are converted with it.
    #[arg(long)]
    pub loadcells: Option<PathBuf>,
    /// Generate this many synthetic samples instead of reading a dataset.
    #[arg(long, conflicts_with = "dataset")]
    pub synthetic: Option<usize>,
    /// Modulus of the synthetic plant, MPa.
    #[arg(long, default_value_t = 120.0)]
    pub plant_modulus: f64,
    /// Modulus search `min:max[:step]`, MPa.
    #[arg(long, default_value = "50:200:1")]
    pub range: String,
    #[arg(long, default_value_t = 0.7)]
    pub split: f64,
    /// Resampling bin width, N.
    #[arg(long, default_value_t = 1.0)]
    pub bin: f64,
    /// Half-width of the tension window for test statistics, N.
    #[arg(long, default_value_t = 1.0)]
    pub window: f64,
}

#[derive(Debug, Args)]
pub struct GeometryArgs {
    /// Override the taper angle, degrees.
    #[arg(long)]
    pub alpha: Option<f64>,
}

/// Process exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NoConvergence { .. }
        | Error::NotConverged
        | Error::TooManyDrops { .. }
        | Error::SingularSystem { .. }
        | Error::ZeroTangent { .. } => EXIT_CONVERGENCE,
        Error::NonUnimodal { .. } => EXIT_OPTIMIZATION,
        _ => EXIT_INPUT,
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct Context {
    spec: RobotSpec,
    config: SolverConfig,
    out: PathBuf,
    seed: u64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn vec3(values: &Option<Vec<f64>>, what: &str) -> Result<Vec3> {
    match values.as_deref() {
        None => Ok(Vec3::zeros()),
        Some([x, y, z]) => Ok(Vec3::new(*x, *y, *z)),
        Some(_) => Err(Error::Parse(format!("{what} needs three comma-separated values"))),
    }
}

fn tendon_index(spec: &RobotSpec, tendon: usize) -> Result<usize> {
    if tendon == 0 || tendon > spec.tendon_count {
        return Err(Error::InvalidSpec(format!("tendon {tendon} not in 1..={}", spec.tendon_count)));
    }
    Ok(tendon - 1)
}

fn parse_bounds(text: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(':').collect();
    let [lo, hi] = parts.as_slice() else {
        return Err(Error::Parse(format!("bounds `{text}` are not lo:hi")));
    };
    Ok((crate::design::parse_f64(lo)?, crate::design::parse_f64(hi)?))
}

fn execute(cli: &Cli) -> Result<()> {
    let spec = match &cli.spec {
        Some(path) if !path.is_file() => return Err(Error::SpecNotFound(path.clone())),
        Some(path) => load_spec(path)?,
        None => RobotSpec::validation_robot(),
    };
    let config = SolverConfig::with_steps(cli.steps);
    config.validate()?;
    fs::create_dir_all(&cli.out)?;
    let ctx = Context { spec, config, out: cli.out.clone(), seed: cli.seed };
    match &cli.command {
        Command::Solve(a) => cmd_solve(&ctx, a),
        Command::Sweep(a) => cmd_sweep(&ctx, a),
        Command::Design(a) => cmd_design(&ctx, a),
        Command::Calibrate(a) => cmd_calibrate(&ctx, a),
        Command::Geometry(a) => cmd_geometry(&ctx, a),
    }
}

#[derive(Serialize)]
struct SolveSummary {
    converged: bool,
    residual: f64,
    iterations: usize,
    tip_position_m: [f64; 3],
    tip_quaternion_wxyz: [f64; 4],
    bending_angle_rad: f64,
    tip_tilt_rad: f64,
    max_quaternion_drift: f64,
}

fn cmd_solve(ctx: &Context, a: &SolveArgs) -> Result<()> {
    let tensions = match &a.tensions {
        Some(t) => TensionSet::new(t.clone())?,
        None => TensionSet::zeros(ctx.spec.tendon_count),
    };
    if tensions.len() != ctx.spec.tendon_count {
        return Err(Error::InvalidSpec(format!("{} tensions for {} tendons", tensions.len(), ctx.spec.tendon_count)));
    }
    let loads = ExternalLoads {
        tip_force: vec3(&a.tip_force, "--tip-force")?,
        tip_couple: vec3(&a.tip_couple, "--tip-couple")?,
        ..ExternalLoads::default()
    };
    let sol = shoot(&ctx.spec, &tensions, &loads, &ctx.config, None)?;

    let mut out = csv::Writer::from_writer(create(&ctx.out.join("centerline.csv"))?);
    out.write_record(["s_m", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "ux", "uy", "uz"])?;
    for (s, st) in sol.s.iter().zip(&sol.states) {
        let mut row = vec![s.to_string()];
        row.extend(st.to_array().iter().map(|x| x.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;

    let tip = sol.tip();
    let summary = SolveSummary {
        converged: sol.converged,
        residual: sol.residual,
        iterations: sol.iterations,
        tip_position_m: [tip.p.x, tip.p.y, tip.p.z],
        tip_quaternion_wxyz: [tip.q.w, tip.q.i, tip.q.j, tip.q.k],
        bending_angle_rad: sol.bending_angle(),
        tip_tilt_rad: sol.tip_tilt(),
        max_quaternion_drift: sol.max_quat_drift,
    };
    let text = toml::to_string(&summary)?;
    fs::write(ctx.out.join("summary.toml"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_sweep(ctx: &Context, a: &SweepArgs) -> Result<()> {
    let tendon = tendon_index(&ctx.spec, a.tendon)?;
    let cells = taper_tension_sweep(&ctx.spec, &a.alphas, &a.tensions, tendon, &ExternalLoads::default(), &ctx.config)?;
    write_sweep_csv(&cells, create(&ctx.out.join("sweep.csv"))?)?;

    let mut out = csv::Writer::from_writer(create(&ctx.out.join("sweep_summary.csv"))?);
    out.write_record(["alpha_deg", "tension_N", "converged", "tip_x_m", "tip_y_m", "tip_z_m", "bending_angle_rad", "error"])?;
    let mut failed = 0;
    for c in &cells {
        let mut row = vec![c.alpha.to_string(), c.tension.to_string()];
        match &c.outcome {
            Ok(sol) => {
                let p = sol.tip_position();
                row.extend(["true".into(), p.x.to_string(), p.y.to_string(), p.z.to_string(), sol.bending_angle().to_string(), String::new()]);
            }
            Err(e) => {
                failed += 1;
                row.extend(["false".into(), String::new(), String::new(), String::new(), String::new(), e.clone()]);
            }
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    println!("cells = {}\nfailed = {failed}", cells.len());
    Ok(())
}

fn cmd_design(ctx: &Context, a: &DesignArgs) -> Result<()> {
    let tendon = tendon_index(&ctx.spec, a.tendon)?;
    let mut problem = DesignProblem::new(ctx.spec.clone(), TensionSet::single(ctx.spec.tendon_count, tendon, a.tension)?);
    problem.bounds = parse_bounds(&a.bounds)?;
    problem.config = ctx.config.clone();
    problem.noise = NoiseModel { level: a.noise, seed: ctx.seed };
    if !(0.0..=1.0).contains(&a.noise) {
        return Err(Error::InvalidSpec(format!("noise level {} not in [0, 1]", a.noise)));
    }
    problem.validate()?;

    if let (Some(tensions), Some(alphas)) = (&a.grid_tensions, &a.grid_alphas) {
        let cells = recovery_table(&problem, tendon, tensions, alphas, a.noise, ctx.seed)?;
        write_recovery_table_csv(&cells, create(&ctx.out.join("recovery_table.csv"))?)?;
        let worst = cells.iter().map(|c| c.error().abs()).fold(0.0, f64::max);
        println!("cells = {}\nmax_abs_error_deg = {worst}", cells.len());
        return Ok(());
    }

    let target = match (&a.target, a.plant_alpha) {
        (Some(path), _) => CurvatureProfile::read_csv(File::open(path)?)?,
        (None, Some(alpha)) => {
            let t = problem.planted_target(alpha)?;
            t.write_csv(create(&ctx.out.join("target.csv"))?)?;
            t
        }
        (None, None) => return Err(Error::Parse("design needs --target or --plant-alpha".into())),
    };
    let result = match optimize_taper(&problem, &target) {
        Err(Error::NonUnimodal { scan }) => {
            crate::design::write_cost_curve_csv(&scan, create(&ctx.out.join("cost_curve.csv"))?)?;
            return Err(Error::NonUnimodal { scan });
        }
        other => other?,
    };
    result.write_curve_csv(create(&ctx.out.join("cost_curve.csv"))?)?;
    let mut out = csv::Writer::from_writer(create(&ctx.out.join("design.csv"))?);
    out.write_record(["alpha_star_deg", "cost", "evaluations"])?;
    out.write_record([result.alpha.to_string(), result.cost.to_string(), result.evaluations.to_string()])?;
    out.flush()?;
    println!("alpha_star_deg = {}\ncost = {}", result.alpha, result.cost);
    Ok(())
}

#[derive(Serialize)]
struct FitSummary {
    youngs_modulus_mpa: f64,
    cost: f64,
    used: usize,
    dropped: usize,
    unimodal: bool,
    rotation: [[f64; 3]; 3],
    translation_m: [f64; 3],
    bias_m: Vec<[f64; 3]>,
    test_dropped: usize,
    test_disc_s_over_l: Vec<f64>,
    test_disc_err_mean_m: Vec<f64>,
    test_disc_err_std_m: Vec<f64>,
}

fn cmd_calibrate(ctx: &Context, a: &CalibrateArgs) -> Result<()> {
    let setup = CalibrationSetup { spec: ctx.spec.clone(), loads: ExternalLoads::default(), config: ctx.config.clone() };
    let mut dataset = match (a.synthetic, &a.dataset) {
        (Some(n), _) => {
            let plant = SyntheticPlant::new(a.plant_modulus * 1e6, n, ctx.seed);
            let (data, _) = synthesize(&setup, &plant)?;
            data.write_csv(create(&ctx.out.join("dataset.csv"))?, DatasetLayout::Long)?;
            data
        }
        (None, Some(path)) => CalibrationDataset::read_csv(File::open(path)?, &disc_layout(&ctx.spec).positions)?,
        (None, None) => return Err(Error::Parse("calibrate needs --dataset or --synthetic".into())),
    };
    if let Some(path) = &a.loadcells {
        let table = LoadCellTable::parse(&fs::read_to_string(path)?)?;
        dataset.apply_load_cells(&table)?;
    }
    let options = PipelineOptions {
        bin_width: a.bin,
        train_fraction: a.split,
        range: ModulusRange::parse(&a.range)?,
        half_window: a.window,
        seed: ctx.seed,
    };
    let report = calibrate(&dataset, &setup, &options)?;
    report.write_curve_csv(create(&ctx.out.join("linesearch.csv"))?)?;
    let mut summary = FitSummary {
        youngs_modulus_mpa: report.youngs_modulus / 1e6,
        cost: report.curve.iter().map(|c| c.1).fold(f64::INFINITY, f64::min),
        used: report.used,
        dropped: report.dropped,
        unimodal: report.is_unimodal(),
        rotation: std::array::from_fn(|i| std::array::from_fn(|j| report.transform.rotation[(i, j)])),
        translation_m: report.transform.translation.into(),
        bias_m: report.bias.offsets.iter().map(|o| (*o).into()).collect(),
        test_dropped: 0,
        test_disc_s_over_l: Vec::new(),
        test_disc_err_mean_m: Vec::new(),
        test_disc_err_std_m: Vec::new(),
    };
    if let Some(test) = &report.test {
        test.write_csv(create(&ctx.out.join("test_errors.csv"))?)?;
        summary.test_dropped = test.dropped;
        summary.test_disc_s_over_l = test.discs.iter().map(|d| d.s_over_l).collect();
        summary.test_disc_err_mean_m = test.discs.iter().map(|d| d.mean).collect();
        summary.test_disc_err_std_m = test.discs.iter().map(|d| d.std).collect();
    }
    let text = toml::to_string(&summary)?;
    fs::write(ctx.out.join("fit.toml"), &text)?;
    println!("youngs_modulus_mpa = {}\nused = {}\ndropped = {}", summary.youngs_modulus_mpa, summary.used, summary.dropped);
    Ok(())
}

fn cmd_geometry(ctx: &Context, a: &GeometryArgs) -> Result<()> {
    let spec = match a.alpha {
        Some(alpha) => ctx.spec.with_taper_angle(alpha)?,
        None => ctx.spec.clone(),
    };
    fs::write(ctx.out.join("manifest.toml"), export_manifest(&spec)?)?;
    fs::write(ctx.out.join("spec.toml"), spec_to_toml(&spec)?)?;
    println!("taper_angle_deg = {}\ntip_radius_m = {}", taper_angle(&spec), spec.tip_radius);
    Ok(())
}
