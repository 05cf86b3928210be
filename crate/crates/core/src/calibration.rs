//! Model calibration against motion-capture data.
//!
//! The pipeline: load-cell lookup, tension-uniform resampling, a seeded
//! train/test split, then a line search over Young's modulus. Each candidate
//! modulus is scored after a rigid registration of the capture frame onto
//! the model frame and removal of a per-disc marker offset.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bvp::{shoot, SolverConfig};
use crate::design::{is_unimodal, parse_f64};
use crate::error::{Error, Result};
use crate::geometry::{disc_layout, RobotSpec};
use crate::rod::{ExternalLoads, TensionSet};
use crate::se3::{Mat3, Vec3};

/// Fraction of samples allowed to fail before a fit is rejected.
pub const MAX_DROP_FRACTION: f64 = 0.1;

/// Force/bit calibration rows for each load cell.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadCellTable {
    cells: Vec<Vec<(f64, i64)>>,
}

impl LoadCellTable {
    /// Rows per cell as `(force N, adc bit)`.
    pub fn new(cells: Vec<Vec<(f64, i64)>>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Parse("load-cell table has no cells".into()));
        }
        for (i, rows) in cells.iter().enumerate() {
            if rows.len() < 2 {
                return Err(Error::Parse(format!("load cell {} needs at least two rows", i + 1)));
            }
            if rows.windows(2).any(|w| w[1].1 <= w[0].1 || w[1].0 < w[0].0) {
                return Err(Error::Parse(format!("load cell {} rows must increase in bit and force", i + 1)));
            }
        }
        Ok(LoadCellTable { cells })
    }

    /// The three-cell bench calibration of the validation robot.
    pub fn bench() -> Self {
        LoadCellTable {
            cells: vec![
                vec![(0.000, 98), (1.079, 101), (1.942, 110), (2.992, 120), (3.953, 124), (5.042, 142)],
                vec![(0.000, 100), (0.912, 102), (2.099, 111), (3.051, 118), (3.924, 125), (4.993, 136)],
                vec![(0.000, 100), (0.922, 104), (1.864, 111), (2.884, 117), (4.012, 125), (4.689, 129)],
            ],
        }
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Rows of a 1-based cell.
    pub fn rows(&self, cell: usize) -> Result<&[(f64, i64)]> {
        if cell == 0 || cell > self.cells.len() {
            return Err(Error::InvalidSpec(format!("load cell {cell} not in 1..={}", self.cells.len())));
        }
        Ok(&self.cells[cell - 1])
    }

    /// End-to-end slope of a cell, N per bit.
    pub fn resolution(&self, cell: usize) -> Result<f64> {
        let rows = self.rows(cell)?;
        let (f0, b0) = rows[0];
        let (f1, b1) = rows[rows.len() - 1];
        Ok((f1 - f0) / (b1 - b0) as f64)
    }

    /// Least-squares slope shared by all cells, each with its own intercept,
    /// N per bit.
    pub fn pooled_resolution(&self) -> f64 {
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for rows in &self.cells {
            let n = rows.len() as f64;
            let fm = rows.iter().map(|r| r.0).sum::<f64>() / n;
            let bm = rows.iter().map(|r| r.1 as f64).sum::<f64>() / n;
            for &(f, b) in rows {
                sxy += (b as f64 - bm) * (f - fm);
                sxx += (b as f64 - bm).powi(2);
            }
        }
        sxy / sxx
    }

    /// Piecewise-linear lookup for a 1-based cell. Bits outside the table use
    /// the nearest end segment; the result is clamped at zero.
    pub fn tension_from_adc(&self, cell: usize, bit: i64) -> Result<f64> {
        let rows = self.rows(cell)?;
        let n = rows.len();
        let k = rows.partition_point(|r| r.1 <= bit).clamp(1, n - 1);
        let (f0, b0) = rows[k - 1];
        let (f1, b1) = rows[k];
        let f = f0 + (f1 - f0) * (bit - b0) as f64 / (b1 - b0) as f64;
        Ok(f.max(0.0))
    }

    /// Sections of the form `[cell N]` followed by `force_N,adc_bit` rows.
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cells: BTreeMap<usize, Vec<(f64, i64)>> = BTreeMap::new();
        let mut current = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Parse(format!("load-cell table line {}: {what}", lineno + 1));
            if let Some(inner) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let id = inner
                    .trim()
                    .strip_prefix("cell")
                    .and_then(|n| n.trim().parse::<usize>().ok())
                    .filter(|&n| n > 0)
                    .ok_or_else(|| bad("expected `[cell N]`"))?;
                if cells.insert(id, Vec::new()).is_some() {
                    return Err(bad("duplicate cell"));
                }
                current = Some(id);
                continue;
            }
            let id = current.ok_or_else(|| bad("row before any `[cell N]` header"))?;
            if line.replace(' ', "") == "force_N,adc_bit" {
                continue;
            }
            let mut parts = line.split(',');
            let (Some(f), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected `force_N,adc_bit`"));
            };
            let force = parse_f64(f)?;
            let bit = b.trim().parse::<i64>().map_err(|_| bad("bit must be an integer"))?;
            cells.get_mut(&id).unwrap().push((force, bit));
        }
        if cells.keys().enumerate().any(|(i, &id)| id != i + 1) {
            return Err(Error::Parse("load cells must be numbered 1..N".into()));
        }
        LoadCellTable::new(cells.into_values().collect())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, rows) in self.cells.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("[cell {}]\nforce_N,adc_bit\n", i + 1));
            for (f, b) in rows {
                out.push_str(&format!("{f:.3},{b}\n"));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationSample {
    pub time: f64,
    /// Tendon tensions, N.
    pub tensions: Vec<f64>,
    /// Raw load-cell readings, when recorded.
    pub adc: Option<Vec<i64>>,
    /// One marker per disc, capture frame, m.
    pub markers: Vec<Vec3>,
}

impl CalibrationSample {
    /// Tension of the most loaded tendon.
    pub fn actuated_tension(&self) -> f64 {
        self.tensions.iter().cloned().fold(0.0, f64::max)
    }
}

/// Dataset layout on disk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetLayout {
    /// `t_s,tau1_N,..,disc,index,mx_m,my_m,mz_m`, one row per disc per sample.
    /// `disc` is the 1-based disc number, `index` the sample number.
    Long,
    /// `t_s,tau1_N,..,m1x,m1y,m1z,..`, one row per sample.
    Wide,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationDataset {
    pub samples: Vec<CalibrationSample>,
    /// Arc length of each tracked disc, m.
    pub disc_positions: Vec<f64>,
}

impl CalibrationDataset {
    pub fn new(samples: Vec<CalibrationSample>, disc_positions: Vec<f64>) -> Result<Self> {
        let discs = disc_positions.len();
        let tendons = samples.first().map(|s| s.tensions.len()).unwrap_or(0);
        for (i, s) in samples.iter().enumerate() {
            if s.markers.len() != discs {
                return Err(Error::Parse(format!("sample {i} has {} markers, expected {discs}", s.markers.len())));
            }
            if s.tensions.len() != tendons || s.tensions.iter().any(|t| t.is_nan() || *t < 0.0) {
                return Err(Error::Parse(format!("sample {i} has invalid tensions")));
            }
        }
        Ok(CalibrationDataset { samples, disc_positions })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        CalibrationDataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            disc_positions: self.disc_positions.clone(),
        }
    }

    /// Replace tensions with load-cell lookups wherever raw bits are present.
    pub fn apply_load_cells(&mut self, table: &LoadCellTable) -> Result<()> {
        for s in &mut self.samples {
            if let Some(bits) = &s.adc {
                s.tensions = bits
                    .iter()
                    .enumerate()
                    .map(|(k, &b)| table.tension_from_adc(k + 1, b))
                    .collect::<Result<_>>()?;
            }
        }
        Ok(())
    }

    /// Reads either layout, detected from the header. Optional `adc1,..`
    /// columns carry raw load-cell bits.
    pub fn read_csv<R: Read>(r: R, disc_positions: &[f64]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let need = |name: &str| col(name).ok_or_else(|| Error::Parse(format!("dataset column `{name}` missing")));
        let tendon_cols: Vec<usize> = (1..).map_while(|k| col(&format!("tau{k}_N"))).collect();
        if tendon_cols.is_empty() {
            return Err(Error::Parse("dataset has no `tau1_N` column".into()));
        }
        let adc_cols: Vec<usize> = (1..=tendon_cols.len()).map_while(|k| col(&format!("adc{k}"))).collect();
        if !adc_cols.is_empty() && adc_cols.len() != tendon_cols.len() {
            return Err(Error::Parse("adc columns must match tension columns".into()));
        }
        let time_col = col("t_s");
        let discs = disc_positions.len();

        let read_row = |rec: &csv::StringRecord| -> Result<(f64, Vec<f64>, Option<Vec<i64>>)> {
            let field = |i: usize| rec.get(i).unwrap_or("");
            let time = match time_col {
                Some(i) if !field(i).is_empty() => parse_f64(field(i))?,
                _ => 0.0,
            };
            let tensions = tendon_cols.iter().map(|&i| parse_f64(field(i))).collect::<Result<Vec<_>>>()?;
            let adc = if adc_cols.is_empty() {
                None
            } else {
                Some(
                    adc_cols
                        .iter()
                        .map(|&i| field(i).parse::<i64>().map_err(|_| Error::Parse(format!("bad adc value `{}`", field(i)))))
                        .collect::<Result<Vec<_>>>()?,
                )
            };
            Ok((time, tensions, adc))
        };

        let mut samples = Vec::new();
        if col("disc").is_some() {
            let (dc, ic) = (need("disc")?, need("index")?);
            let (xc, yc, zc) = (need("mx_m")?, need("my_m")?, need("mz_m")?);
            let mut by_index: BTreeMap<i64, (CalibrationSample, Vec<Option<Vec3>>)> = BTreeMap::new();
            for rec in rdr.records() {
                let rec = rec?;
                let (time, tensions, adc) = read_row(&rec)?;
                let get = |i: usize| rec.get(i).unwrap_or("");
                let disc: usize = get(dc).parse().map_err(|_| Error::Parse(format!("bad disc `{}`", get(dc))))?;
                let index: i64 = get(ic).parse().map_err(|_| Error::Parse(format!("bad index `{}`", get(ic))))?;
                if disc == 0 || disc > discs {
                    return Err(Error::Parse(format!("disc {disc} not in 1..={discs}")));
                }
                let m = Vec3::new(parse_f64(get(xc))?, parse_f64(get(yc))?, parse_f64(get(zc))?);
                let entry = by_index.entry(index).or_insert_with(|| {
                    (CalibrationSample { time, tensions: tensions.clone(), adc: adc.clone(), markers: Vec::new() }, vec![None; discs])
                });
                if entry.0.tensions != tensions {
                    return Err(Error::Parse(format!("sample {index} has inconsistent tensions")));
                }
                if entry.1[disc - 1].replace(m).is_some() {
                    return Err(Error::Parse(format!("sample {index} repeats disc {disc}")));
                }
            }
            for (index, (mut sample, markers)) in by_index {
                sample.markers = markers
                    .into_iter()
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| Error::Parse(format!("sample {index} is missing discs")))?;
                samples.push(sample);
            }
        } else {
            let mut marker_cols = Vec::with_capacity(discs);
            for k in 1..=discs {
                marker_cols.push([need(&format!("m{k}x"))?, need(&format!("m{k}y"))?, need(&format!("m{k}z"))?]);
            }
            for rec in rdr.records() {
                let rec = rec?;
                let (time, tensions, adc) = read_row(&rec)?;
                let markers = marker_cols
                    .iter()
                    .map(|c| {
                        let g = |i: usize| parse_f64(rec.get(i).unwrap_or(""));
                        Ok(Vec3::new(g(c[0])?, g(c[1])?, g(c[2])?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                samples.push(CalibrationSample { time, tensions, adc, markers });
            }
        }
        CalibrationDataset::new(samples, disc_positions.to_vec())
    }

    pub fn write_csv<W: Write>(&self, w: W, layout: DatasetLayout) -> Result<()> {
        let tendons = self.samples.first().map(|s| s.tensions.len()).unwrap_or(0);
        let with_adc = self.samples.first().is_some_and(|s| s.adc.is_some());
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t_s".to_string()];
        header.extend((1..=tendons).map(|k| format!("tau{k}_N")));
        if with_adc {
            header.extend((1..=tendons).map(|k| format!("adc{k}")));
        }
        match layout {
            DatasetLayout::Long => header.extend(["disc", "index", "mx_m", "my_m", "mz_m"].map(String::from)),
            DatasetLayout::Wide => {
                for k in 1..=self.disc_positions.len() {
                    header.extend([format!("m{k}x"), format!("m{k}y"), format!("m{k}z")]);
                }
            }
        }
        out.write_record(&header)?;
        for (i, s) in self.samples.iter().enumerate() {
            let mut lead = vec![s.time.to_string()];
            lead.extend(s.tensions.iter().map(|t| t.to_string()));
            if with_adc {
                let bits = s.adc.as_ref().ok_or_else(|| Error::Parse("adc present on some samples only".into()))?;
                lead.extend(bits.iter().map(|b| b.to_string()));
            }
            match layout {
                DatasetLayout::Long => {
                    for (k, m) in s.markers.iter().enumerate() {
                        let mut row = lead.clone();
                        row.extend([(k + 1).to_string(), i.to_string(), m.x.to_string(), m.y.to_string(), m.z.to_string()]);
                        out.write_record(&row)?;
                    }
                }
                DatasetLayout::Wide => {
                    let mut row = lead;
                    for m in &s.markers {
                        row.extend([m.x.to_string(), m.y.to_string(), m.z.to_string()]);
                    }
                    out.write_record(&row)?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Equalize tension bins: every occupied bin of width `bin_width` keeps as
/// many samples as the least occupied one, drawn without replacement.
/// Original order is preserved.
pub fn resample_uniform(dataset: &CalibrationDataset, bin_width: f64, seed: u64) -> Result<CalibrationDataset> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvalidSpec(format!("bin width {bin_width} must be positive")));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut bins: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        bins.entry((s.actuated_tension() / bin_width).floor() as i64).or_default().push(i);
    }
    let quota = bins.values().map(Vec::len).min().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(quota * bins.len());
    for members in bins.values_mut() {
        members.shuffle(&mut rng);
        keep.extend_from_slice(&members[..quota]);
    }
    keep.sort_unstable();
    Ok(dataset.subset(&keep))
}

/// Seeded shuffle split; the training part gets `ceil(fraction * n)` samples.
pub fn split_train_test(dataset: &CalibrationDataset, fraction: f64, seed: u64) -> Result<(CalibrationDataset, CalibrationDataset)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidSpec(format!("train fraction {fraction} must be in (0, 1]")));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = dataset.len();
    let n_train = ((fraction * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, test) = order.split_at(n_train);
    let (mut train, mut test) = (train.to_vec(), test.to_vec());
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

/// `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Angle of the relative rotation, rad.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        rotation_angle(&(self.rotation * other.rotation.transpose()))
    }
}

/// Rotation angle that stays accurate near zero.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let axis = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    (0.5 * axis.norm()).atan2(0.5 * (r.trace() - 1.0))
}

/// Least-squares `(R, t)` minimizing `Σ |R a_i + t − b_i|²`, with `det R = +1`.
pub fn register_rigid(source: &[Vec3], target: &[Vec3]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::DegenerateGeometry(format!("{} source vs {} target points", source.len(), target.len())));
    }
    if source.len() < 3 {
        return Err(Error::DegenerateGeometry(format!("{} point pairs, need at least 3", source.len())));
    }
    let n = source.len() as f64;
    let ca = source.iter().sum::<Vec3>() / n;
    let cb = target.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (a, b) in source.iter().zip(target) {
        h += (a - ca) * (b - cb).transpose();
    }
    let svd = h.svd(true, true);
    let mut sv = svd.singular_values;
    let mut u = svd.u.unwrap();
    let mut v_t = svd.v_t.unwrap();
    // nalgebra does not sort singular values
    let mut idx = [0, 1, 2];
    idx.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let perm = |m: &Mat3, cols: bool| {
        let mut out = *m;
        for (k, &i) in idx.iter().enumerate() {
            if cols {
                out.set_column(k, &m.column(i));
            } else {
                out.set_row(k, &m.row(i));
            }
        }
        out
    };
    u = perm(&u, true);
    v_t = perm(&v_t, false);
    sv = Vec3::new(sv[idx[0]], sv[idx[1]], sv[idx[2]]);
    if sv[0].is_nan() || sv[0] <= 0.0 || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::DegenerateGeometry("points are collinear or coincident".into()));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    Ok(RigidTransform { rotation, translation: cb - rotation * ca })
}

/// Per-disc marker offset `δ(s_k)`, model frame.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasField {
    pub positions: Vec<f64>,
    pub offsets: Vec<Vec3>,
}

/// Mean residual per disc. `registered[i][k]` and `model[i][k]` are the
/// transformed capture and model positions of disc `k` in sample `i`.
pub fn estimate_bias(registered: &[Vec<Vec3>], model: &[Vec<Vec3>], positions: &[f64]) -> Result<BiasField> {
    if registered.is_empty() || registered.len() != model.len() {
        return Err(Error::EmptyDataset);
    }
    let discs = positions.len();
    let mut offsets = vec![Vec3::zeros(); discs];
    for (r, m) in registered.iter().zip(model) {
        if r.len() != discs || m.len() != discs {
            return Err(Error::Parse("disc count mismatch".into()));
        }
        for k in 0..discs {
            offsets[k] += r[k] - m[k];
        }
    }
    let n = registered.len() as f64;
    Ok(BiasField { positions: positions.to_vec(), offsets: offsets.into_iter().map(|o| o / n).collect() })
}

/// Registration, bias and cost for one set of model predictions.
fn fit_frame(capture: &[&[Vec3]], model: &[&[Vec3]], positions: &[f64]) -> Result<(RigidTransform, BiasField, f64)> {
    let src: Vec<Vec3> = capture.iter().flat_map(|m| m.iter().copied()).collect();
    let dst: Vec<Vec3> = model.iter().flat_map(|m| m.iter().copied()).collect();
    let transform = register_rigid(&src, &dst)?;
    let registered: Vec<Vec<Vec3>> = capture.iter().map(|m| m.iter().map(|x| transform.apply(x)).collect()).collect();
    let owned: Vec<Vec<Vec3>> = model.iter().map(|m| m.to_vec()).collect();
    let bias = estimate_bias(&registered, &owned, positions)?;
    let cost = registered
        .iter()
        .zip(&owned)
        .map(|(r, m)| (0..positions.len()).map(|k| (r[k] - m[k] - bias.offsets[k]).norm_squared()).sum::<f64>())
        .sum();
    Ok((transform, bias, cost))
}

/// Line-search grid in MPa.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModulusRange {
    pub min_mpa: f64,
    pub max_mpa: f64,
    pub step_mpa: f64,
}

impl Default for ModulusRange {
    fn default() -> Self {
        ModulusRange { min_mpa: 50.0, max_mpa: 200.0, step_mpa: 1.0 }
    }
}

impl ModulusRange {
    pub fn candidates(&self) -> Result<Vec<f64>> {
        let ModulusRange { min_mpa, max_mpa, step_mpa } = *self;
        if !(min_mpa > 0.0 && max_mpa >= min_mpa && step_mpa > 0.0 && max_mpa.is_finite()) {
            return Err(Error::InvalidSpec(format!("modulus range {min_mpa}:{max_mpa}:{step_mpa} is invalid")));
        }
        let n = ((max_mpa - min_mpa) / step_mpa + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| min_mpa + step_mpa * i as f64).collect())
    }

    /// `min:max:step` or `min:max` (step 1).
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<f64> = text.split(':').map(parse_f64).collect::<Result<_>>()?;
        let range = match parts.as_slice() {
            [lo, hi] => ModulusRange { min_mpa: *lo, max_mpa: *hi, step_mpa: 1.0 },
            [lo, hi, step] => ModulusRange { min_mpa: *lo, max_mpa: *hi, step_mpa: *step },
            _ => return Err(Error::Parse(format!("range `{text}` is not min:max[:step]"))),
        };
        range.candidates()?;
        Ok(range)
    }
}

/// Windowed test error at one disc.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowStat {
    pub s_over_l: f64,
    pub tension: f64,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Error over all test samples at one disc.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscError {
    pub s_over_l: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestEvaluation {
    /// `errors[i][k]`: distance at disc `k` of test sample `i`, m.
    pub errors: Vec<Vec<f64>>,
    pub tensions: Vec<f64>,
    pub discs: Vec<DiscError>,
    pub windows: Vec<WindowStat>,
    pub dropped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    /// Pa.
    pub youngs_modulus: f64,
    /// `(E Pa, cost m²)` for every candidate.
    pub curve: Vec<(f64, f64)>,
    pub transform: RigidTransform,
    pub bias: BiasField,
    pub used: usize,
    pub dropped: usize,
    pub test: Option<TestEvaluation>,
}

impl FitReport {
    pub fn is_unimodal(&self) -> bool {
        is_unimodal(&self.curve)
    }

    /// `E_MPa,cost`.
    pub fn write_curve_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["E_MPa", "cost"])?;
        for (e, c) in &self.curve {
            out.write_record([(e / 1e6).to_string(), c.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

impl TestEvaluation {
    /// `s_over_l,tension_N,err_mean_m,err_std_m`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["s_over_l", "tension_N", "err_mean_m", "err_std_m"])?;
        for s in &self.windows {
            out.write_record([s.s_over_l.to_string(), s.tension.to_string(), s.mean.to_string(), s.std.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Shared fit inputs.
#[derive(Clone, Debug)]
pub struct CalibrationSetup {
    /// Geometry used for every solve; its modulus is replaced per candidate.
    pub spec: RobotSpec,
    pub loads: ExternalLoads,
    pub config: SolverConfig,
}

impl CalibrationSetup {
    pub fn new(spec: RobotSpec) -> Self {
        CalibrationSetup { spec, loads: ExternalLoads::default(), config: SolverConfig::default() }
    }

    fn check(&self, dataset: &CalibrationDataset) -> Result<()> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if dataset.samples[0].tensions.len() != self.spec.tendon_count {
            return Err(Error::InvalidSpec("dataset tendon count does not match spec".into()));
        }
        if dataset.disc_positions.iter().any(|&s| !(0.0..=self.spec.length).contains(&s)) {
            return Err(Error::InvalidSpec("disc positions outside the backbone".into()));
        }
        self.config.validate()
    }

    /// Disc positions predicted for each sample at each modulus, warm-starting
    /// along the modulus list. `None` marks a failed solve.
    fn predict(&self, dataset: &CalibrationDataset, moduli: &[f64]) -> Result<Vec<Vec<Option<Vec<Vec3>>>>> {
        let mut out = vec![Vec::with_capacity(dataset.len()); moduli.len()];
        for sample in &dataset.samples {
            let tensions = TensionSet::new(sample.tensions.clone())?;
            let mut warm = None;
            for (j, &e) in moduli.iter().enumerate() {
                let spec = self.spec.with_youngs_modulus(e);
                let pred = match shoot(&spec, &tensions, &self.loads, &self.config, warm) {
                    Ok(sol) => {
                        warm = Some(sol.proximal_strains());
                        Some(dataset.disc_positions.iter().map(|&s| sol.position_at(s)).collect())
                    }
                    Err(Error::InvalidSpec(m)) => return Err(Error::InvalidSpec(m)),
                    Err(_) => None,
                };
                out[j].push(pred);
            }
        }
        Ok(out)
    }

    /// Model disc positions at one modulus.
    pub fn model_positions(&self, dataset: &CalibrationDataset, youngs_modulus: f64) -> Result<Vec<Option<Vec<Vec3>>>> {
        self.check(dataset)?;
        Ok(self.predict(dataset, &[youngs_modulus])?.pop().unwrap())
    }
}

/// Score every candidate modulus on `train` and keep the cheapest. A sample
/// that fails to solve at any candidate is dropped from all of them.
pub fn linesearch_youngs(train: &CalibrationDataset, setup: &CalibrationSetup, range: &ModulusRange) -> Result<FitReport> {
    setup.check(train)?;
    let moduli: Vec<f64> = range.candidates()?.into_iter().map(|m| m * 1e6).collect();
    let preds = setup.predict(train, &moduli)?;

    let total = train.len();
    let keep: Vec<usize> = (0..total).filter(|&i| preds.iter().all(|p| p[i].is_some())).collect();
    let dropped = total - keep.len();
    if keep.is_empty() || dropped as f64 > MAX_DROP_FRACTION * total as f64 {
        return Err(Error::TooManyDrops { dropped, total });
    }
    let capture: Vec<&[Vec3]> = keep.iter().map(|&i| train.samples[i].markers.as_slice()).collect();

    let mut curve = Vec::with_capacity(moduli.len());
    let mut best: Option<(f64, RigidTransform, BiasField, f64)> = None;
    for (j, &e) in moduli.iter().enumerate() {
        let model: Vec<&[Vec3]> = keep.iter().map(|&i| preds[j][i].as_deref().unwrap()).collect();
        let (transform, bias, cost) = fit_frame(&capture, &model, &train.disc_positions)?;
        curve.push((e, cost));
        if best.as_ref().is_none_or(|b| cost < b.3) {
            best = Some((e, transform, bias, cost));
        }
    }
    let (youngs_modulus, transform, bias, _) = best.unwrap();
    Ok(FitReport { youngs_modulus, curve, transform, bias, used: keep.len(), dropped, test: None })
}

/// Test-set errors `|R m + t − r − δ|` per disc, summarized over the whole
/// set and over ±`half_window` N tension windows centred every
/// `half_window / 2` N between the smallest and largest actuated tension.
pub fn evaluate_test(
    test: &CalibrationDataset,
    setup: &CalibrationSetup,
    youngs_modulus: f64,
    transform: &RigidTransform,
    bias: &BiasField,
    half_window: f64,
) -> Result<TestEvaluation> {
    if half_window.is_nan() || half_window <= 0.0 {
        return Err(Error::InvalidSpec("window half-width must be positive".into()));
    }
    if bias.offsets.len() != test.disc_positions.len() {
        return Err(Error::InvalidSpec("bias does not match disc count".into()));
    }
    let preds = setup.model_positions(test, youngs_modulus)?;
    let mut errors = Vec::new();
    let mut tensions = Vec::new();
    for (sample, pred) in test.samples.iter().zip(&preds) {
        if let Some(model) = pred {
            errors.push(
                sample
                    .markers
                    .iter()
                    .zip(model)
                    .zip(&bias.offsets)
                    .map(|((m, r), d)| (transform.apply(m) - r - d).norm())
                    .collect::<Vec<_>>(),
            );
            tensions.push(sample.actuated_tension());
        }
    }
    let dropped = test.len() - errors.len();
    let length = setup.spec.length;
    let discs = test.disc_positions.len();
    let column = |k: usize, pick: &dyn Fn(usize) -> bool| -> Vec<f64> {
        errors.iter().enumerate().filter(|(i, _)| pick(*i)).map(|(_, e)| e[k]).collect()
    };

    let mut disc_stats = Vec::with_capacity(discs);
    let mut windows = Vec::new();
    if !errors.is_empty() {
        let lo = tensions.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = tensions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let step = 0.5 * half_window;
        let centers: Vec<f64> = (0..).map(|i| lo + step * i as f64).take_while(|c| *c <= hi + 1e-12).collect();
        for k in 0..discs {
            let s_over_l = test.disc_positions[k] / length;
            let (mean, std) = mean_std(&column(k, &|_| true));
            disc_stats.push(DiscError { s_over_l, mean, std });
            for &c in &centers {
                let xs = column(k, &|i| (tensions[i] - c).abs() <= half_window);
                if !xs.is_empty() {
                    let (mean, std) = mean_std(&xs);
                    windows.push(WindowStat { s_over_l, tension: c, mean, std, count: xs.len() });
                }
            }
        }
    }
    Ok(TestEvaluation { errors, tensions, discs: disc_stats, windows, dropped })
}

/// Options for the full pipeline.
#[derive(Clone, Debug)]
pub struct PipelineOptions {
    pub bin_width: f64,
    pub train_fraction: f64,
    pub range: ModulusRange,
    pub half_window: f64,
    pub seed: u64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions { bin_width: 1.0, train_fraction: 0.7, range: ModulusRange::default(), half_window: 1.0, seed: 42 }
    }
}

/// Resample, split, fit on train and evaluate on test.
pub fn calibrate(dataset: &CalibrationDataset, setup: &CalibrationSetup, options: &PipelineOptions) -> Result<FitReport> {
    let balanced = resample_uniform(dataset, options.bin_width, options.seed)?;
    let (train, test) = split_train_test(&balanced, options.train_fraction, options.seed)?;
    let mut report = linesearch_youngs(&train, setup, &options.range)?;
    if !test.is_empty() {
        report.test = Some(evaluate_test(&test, setup, report.youngs_modulus, &report.transform, &report.bias, options.half_window)?);
    }
    Ok(report)
}

/// Ground truth of a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPlant {
    pub youngs_modulus: f64,
    /// Maps capture coordinates into the model frame.
    pub transform: RigidTransform,
    /// Marker offset at each disc is `bias_scale` times the disc's mean
    /// model position relative to the overall mean.
    pub bias_scale: f64,
    /// Per-coordinate Gaussian marker noise, m.
    pub noise_sigma: f64,
    pub samples: usize,
    /// Actuated tendon tension drawn uniformly from this range, N.
    pub tension_range: (f64, f64),
    pub tendon: usize,
    pub seed: u64,
}

impl SyntheticPlant {
    pub fn new(youngs_modulus: f64, samples: usize, seed: u64) -> Self {
        let axis = nalgebra::Unit::new_normalize(Vec3::new(0.3, -0.5, 0.8));
        let rotation = nalgebra::Rotation3::from_axis_angle(&axis, 0.4).into_inner();
        SyntheticPlant {
            youngs_modulus,
            transform: RigidTransform { rotation, translation: Vec3::new(0.25, -0.1, 0.6) },
            bias_scale: 0.02,
            noise_sigma: 5e-4,
            samples,
            tension_range: (2.0, 25.0),
            tendon: 0,
            seed,
        }
    }
}

/// Samples a synthetic capture dataset and returns it with the planted bias.
pub fn synthesize(setup: &CalibrationSetup, plant: &SyntheticPlant) -> Result<(CalibrationDataset, BiasField)> {
    let spec = setup.spec.with_youngs_modulus(plant.youngs_modulus);
    let positions = disc_layout(&spec).positions;
    let (lo, hi) = plant.tension_range;
    if !(lo >= 0.0 && hi >= lo) || plant.tendon >= spec.tendon_count || plant.noise_sigma.is_nan() || plant.noise_sigma < 0.0 {
        return Err(Error::InvalidSpec("invalid synthetic plant".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plant.seed);
    let mut draws: Vec<f64> = (0..plant.samples).map(|_| rng.random_range(lo..=hi)).collect();
    let mut order: Vec<usize> = (0..draws.len()).collect();
    order.sort_by(|&a, &b| draws[a].total_cmp(&draws[b]));

    let mut model = vec![Vec::new(); draws.len()];
    let mut warm = None;
    for &i in &order {
        let tensions = TensionSet::single(spec.tendon_count, plant.tendon, draws[i])?;
        let sol = shoot(&spec, &tensions, &setup.loads, &setup.config, warm)?;
        warm = Some(sol.proximal_strains());
        model[i] = positions.iter().map(|&s| sol.position_at(s)).collect::<Vec<Vec3>>();
    }

    let n = model.len().max(1) as f64;
    let disc_mean: Vec<Vec3> = (0..positions.len()).map(|k| model.iter().map(|m| m[k]).sum::<Vec3>() / n).collect();
    let overall = disc_mean.iter().sum::<Vec3>() / disc_mean.len() as f64;
    let offsets: Vec<Vec3> = disc_mean.iter().map(|m| (m - overall) * plant.bias_scale).collect();

    let noise = Normal::new(0.0, plant.noise_sigma).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let to_capture = plant.transform.inverse();
    let samples = draws
        .iter_mut()
        .zip(&model)
        .enumerate()
        .map(|(i, (tau, m))| {
            let mut tensions = vec![0.0; spec.tendon_count];
            tensions[plant.tendon] = *tau;
            let markers = m
                .iter()
                .zip(&offsets)
                .map(|(r, d)| to_capture.apply(&(r + d)) + Vec3::from_fn(|_, _| noise.sample(&mut rng)))
                .collect();
            CalibrationSample { time: 0.01 * i as f64, tensions, adc: None, markers }
        })
        .collect();
    Ok((CalibrationDataset::new(samples, positions.clone())?, BiasField { positions, offsets }))
}
