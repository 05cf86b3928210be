//! Backbone geometry: linearly tapered circular section, diagonal stiffness
//! matrices and their arc-length derivatives, tendon routing and the
//! geometric disc layout.
//!
//! Everything is stored in SI units. [`SpecFile`] accepts centimetres and
//! megapascals and converts on load.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::Vec3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossSection {
    #[default]
    CircularTapered,
}

/// Geometric and material description of one robot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub length: f64,
    pub base_radius: f64,
    pub tip_radius: f64,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub tendon_count: usize,
    pub tendon_base_offset: f64,
    pub tendon_tip_offset: f64,
    pub disc_count: usize,
    pub disc_base_radius: f64,
    pub disc_tip_radius: f64,
    pub disc_base_thickness: f64,
    #[serde(default)]
    pub cross_section: CrossSection,
}

pub const DEFAULT_DISC_THICKNESS: f64 = 0.004;

impl RobotSpec {
    /// The 34.5 cm TPU robot used for hardware validation.
    pub fn validation_robot() -> Self {
        RobotSpec {
            length: 0.345,
            base_radius: 0.0111,
            tip_radius: 0.0045,
            youngs_modulus: 67e6,
            poisson_ratio: 0.39,
            tendon_count: 3,
            tendon_base_offset: 0.032,
            tendon_tip_offset: 0.014,
            disc_count: 10,
            disc_base_radius: 0.037,
            disc_tip_radius: 0.016,
            disc_base_thickness: DEFAULT_DISC_THICKNESS,
            cross_section: CrossSection::CircularTapered,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(msg.to_string()));
        let all = [
            self.length,
            self.base_radius,
            self.tip_radius,
            self.youngs_modulus,
            self.poisson_ratio,
            self.tendon_base_offset,
            self.tendon_tip_offset,
            self.disc_base_radius,
            self.disc_tip_radius,
            self.disc_base_thickness,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return bad("non-finite field");
        }
        if self.length <= 0.0 {
            return bad("length must be positive");
        }
        if !(self.tip_radius > 0.0 && self.tip_radius <= self.base_radius) {
            return bad("radii must satisfy 0 < tip_radius <= base_radius");
        }
        if self.youngs_modulus <= 0.0 {
            return bad("youngs_modulus must be positive");
        }
        if !(self.poisson_ratio > -1.0 && self.poisson_ratio < 0.5) {
            return bad("poisson_ratio must lie in (-1, 0.5)");
        }
        if self.tendon_count == 0 {
            return bad("tendon_count must be at least 1");
        }
        if self.disc_count < 2 {
            return bad("disc_count must be at least 2");
        }
        if self.disc_base_radius <= 0.0 || self.disc_tip_radius <= 0.0 || self.disc_base_thickness <= 0.0 {
            return bad("disc radii and thickness must be positive");
        }
        // both profiles are linear, so clearance at the ends implies clearance everywhere
        for (s, offset, radius) in [
            (0.0, self.tendon_base_offset, self.base_radius),
            (self.length, self.tendon_tip_offset, self.tip_radius),
        ] {
            if offset <= radius {
                return Err(Error::OffsetInsideBackbone { tendon: 0, s, offset, radius });
            }
        }
        Ok(())
    }

    pub fn shear_modulus(&self) -> f64 {
        self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))
    }

    /// Same robot with the tip radius chosen to give `alpha_deg`; base radius
    /// and length are kept.
    pub fn with_taper_angle(&self, alpha_deg: f64) -> Result<Self> {
        let tip = self.base_radius - self.length * alpha_deg.to_radians().tan();
        let spec = RobotSpec { tip_radius: tip, ..self.clone() };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_youngs_modulus(&self, e: f64) -> Self {
        RobotSpec { youngs_modulus: e, ..self.clone() }
    }

    fn check_domain(&self, s: f64) -> Result<()> {
        if !(0.0..=self.length).contains(&s) {
            return Err(Error::OutOfDomain { s, length: self.length });
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn radius_slope(&self) -> f64 {
        (self.tip_radius - self.base_radius) / self.length
    }

    #[inline]
    pub(crate) fn radius_unchecked(&self, s: f64) -> f64 {
        self.base_radius + (self.tip_radius - self.base_radius) * (s / self.length)
    }

    #[inline]
    pub(crate) fn section_unchecked(&self, s: f64) -> SectionProperties {
        let r = self.radius_unchecked(s);
        let dr = self.radius_slope();
        let r2 = r * r;
        let r3 = r2 * r;
        let i = PI * r2 * r2 / 4.0;
        let di = PI * r3 * dr;
        SectionProperties {
            area: PI * r2,
            i_xx: i,
            i_yy: i,
            i_zz: 2.0 * i,
            area_rate: 2.0 * PI * r * dr,
            i_xx_rate: di,
            i_yy_rate: di,
            i_zz_rate: 2.0 * di,
        }
    }

    #[inline]
    pub(crate) fn stiffness_unchecked(&self, s: f64) -> Stiffness {
        let sec = self.section_unchecked(s);
        let e = self.youngs_modulus;
        let g = self.shear_modulus();
        Stiffness {
            se: Vec3::new(g * sec.area, g * sec.area, e * sec.area),
            bt: Vec3::new(e * sec.i_xx, e * sec.i_yy, e * sec.i_zz),
            se_rate: Vec3::new(g * sec.area_rate, g * sec.area_rate, e * sec.area_rate),
            bt_rate: Vec3::new(e * sec.i_xx_rate, e * sec.i_yy_rate, e * sec.i_zz_rate),
        }
    }
}

/// Backbone radius at `s` (linear taper).
pub fn radius_at(spec: &RobotSpec, s: f64) -> Result<f64> {
    spec.check_domain(s)?;
    Ok(spec.radius_unchecked(s))
}

/// Area and second moments of area with their arc-length derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SectionProperties {
    pub area: f64,
    pub i_xx: f64,
    pub i_yy: f64,
    pub i_zz: f64,
    pub area_rate: f64,
    pub i_xx_rate: f64,
    pub i_yy_rate: f64,
    pub i_zz_rate: f64,
}

pub fn section_at(spec: &RobotSpec, s: f64) -> Result<SectionProperties> {
    spec.check_domain(s)?;
    Ok(spec.section_unchecked(s))
}

/// Diagonals of `K_se`, `K_bt` and their derivatives. All four matrices are
/// diagonal, so only the diagonals are stored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stiffness {
    pub se: Vec3,
    pub bt: Vec3,
    pub se_rate: Vec3,
    pub bt_rate: Vec3,
}

impl Stiffness {
    pub fn k_se(&self) -> crate::se3::Mat3 {
        crate::se3::Mat3::from_diagonal(&self.se)
    }
    pub fn k_bt(&self) -> crate::se3::Mat3 {
        crate::se3::Mat3::from_diagonal(&self.bt)
    }
    pub fn k_se_rate(&self) -> crate::se3::Mat3 {
        crate::se3::Mat3::from_diagonal(&self.se_rate)
    }
    pub fn k_bt_rate(&self) -> crate::se3::Mat3 {
        crate::se3::Mat3::from_diagonal(&self.bt_rate)
    }
}

pub fn stiffness_at(spec: &RobotSpec, s: f64) -> Result<Stiffness> {
    spec.check_domain(s)?;
    Ok(spec.stiffness_unchecked(s))
}

/// Tendon routing in the cross-section frame: a fixed body angle with a radial
/// offset that tapers linearly from base to tip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TendonPath {
    pub index: usize,
    pub angle: f64,
    pub base_offset: f64,
    pub tip_offset: f64,
    pub length: f64,
}

impl TendonPath {
    #[inline]
    fn direction(&self) -> Vec3 {
        let (s, c) = self.angle.sin_cos();
        Vec3::new(c, s, 0.0)
    }

    #[inline]
    pub fn radial_offset(&self, s: f64) -> f64 {
        self.base_offset + (self.tip_offset - self.base_offset) * (s / self.length)
    }

    /// `d_i(s)`
    #[inline]
    pub fn offset(&self, s: f64) -> Vec3 {
        self.direction() * self.radial_offset(s)
    }

    /// `d_i'(s)`
    #[inline]
    pub fn offset_rate(&self, _s: f64) -> Vec3 {
        self.direction() * ((self.tip_offset - self.base_offset) / self.length)
    }

    /// `d_i''(s)`, identically zero for linear routing.
    #[inline]
    pub fn offset_accel(&self, _s: f64) -> Vec3 {
        Vec3::zeros()
    }
}

pub fn tendon_paths(spec: &RobotSpec) -> Result<Vec<TendonPath>> {
    if spec.tendon_count == 0 {
        return Err(Error::InvalidSpec("tendon_count must be at least 1".into()));
    }
    let paths: Vec<TendonPath> = (0..spec.tendon_count)
        .map(|i| TendonPath {
            index: i,
            angle: 2.0 * PI * i as f64 / spec.tendon_count as f64,
            base_offset: spec.tendon_base_offset,
            tip_offset: spec.tendon_tip_offset,
            length: spec.length,
        })
        .collect();
    for p in &paths {
        for (s, radius) in [(0.0, spec.base_radius), (spec.length, spec.tip_radius)] {
            let offset = p.radial_offset(s);
            if offset <= radius {
                return Err(Error::OffsetInsideBackbone { tendon: p.index, s, offset, radius });
            }
        }
    }
    Ok(paths)
}

/// Taper angle in degrees.
pub fn taper_angle(spec: &RobotSpec) -> f64 {
    ((spec.base_radius - spec.tip_radius) / spec.length).atan().to_degrees()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscLayout {
    pub ratio: f64,
    pub positions: Vec<f64>,
    pub radii: Vec<f64>,
    pub thicknesses: Vec<f64>,
}

/// Discs whose radii, thicknesses and spacings shrink by one common ratio.
/// Spacings are normalized so the last disc sits at the tip.
pub fn disc_layout(spec: &RobotSpec) -> DiscLayout {
    let n = spec.disc_count.max(2);
    let ratio = (spec.disc_tip_radius / spec.disc_base_radius).powf(1.0 / (n - 1) as f64);
    let weights: Vec<f64> = (0..n).map(|k| ratio.powi(k as i32)).collect();
    let total: f64 = weights.iter().sum();
    let mut positions = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in &weights[..n - 1] {
        acc += w;
        positions.push(spec.length * acc / total);
    }
    positions.push(spec.length);
    DiscLayout {
        ratio,
        positions,
        radii: weights.iter().map(|w| spec.disc_base_radius * w).collect(),
        thicknesses: weights.iter().map(|w| spec.disc_base_thickness * w).collect(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    #[default]
    #[serde(rename = "si", alias = "m-pa")]
    Si,
    #[serde(rename = "cm-mpa")]
    CmMpa,
}

/// On-disk robot description with an explicit unit system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecFile {
    #[serde(default)]
    pub units: Units,
    pub length: f64,
    pub base_radius: f64,
    pub tip_radius: f64,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub tendon_count: usize,
    pub tendon_base_offset: f64,
    pub tendon_tip_offset: f64,
    pub disc_count: usize,
    pub disc_base_radius: f64,
    pub disc_tip_radius: f64,
    #[serde(default)]
    pub disc_base_thickness: Option<f64>,
}

impl SpecFile {
    pub fn into_spec(self) -> Result<RobotSpec> {
        let (len, modulus) = match self.units {
            Units::Si => (1.0, 1.0),
            Units::CmMpa => (0.01, 1e6),
        };
        let spec = RobotSpec {
            length: self.length * len,
            base_radius: self.base_radius * len,
            tip_radius: self.tip_radius * len,
            youngs_modulus: self.youngs_modulus * modulus,
            poisson_ratio: self.poisson_ratio,
            tendon_count: self.tendon_count,
            tendon_base_offset: self.tendon_base_offset * len,
            tendon_tip_offset: self.tendon_tip_offset * len,
            disc_count: self.disc_count,
            disc_base_radius: self.disc_base_radius * len,
            disc_tip_radius: self.disc_tip_radius * len,
            disc_base_thickness: self.disc_base_thickness.map(|t| t * len).unwrap_or(DEFAULT_DISC_THICKNESS),
            cross_section: CrossSection::CircularTapered,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_spec(spec: &RobotSpec) -> Self {
        SpecFile {
            units: Units::Si,
            length: spec.length,
            base_radius: spec.base_radius,
            tip_radius: spec.tip_radius,
            youngs_modulus: spec.youngs_modulus,
            poisson_ratio: spec.poisson_ratio,
            tendon_count: spec.tendon_count,
            tendon_base_offset: spec.tendon_base_offset,
            tendon_tip_offset: spec.tendon_tip_offset,
            disc_count: spec.disc_count,
            disc_base_radius: spec.disc_base_radius,
            disc_tip_radius: spec.disc_tip_radius,
            disc_base_thickness: Some(spec.disc_base_thickness),
        }
    }
}

pub fn parse_spec(text: &str) -> Result<RobotSpec> {
    let file: SpecFile = toml::from_str(text)?;
    file.into_spec()
}

pub fn load_spec(path: &Path) -> Result<RobotSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_spec(&text)
}

pub fn spec_to_toml(spec: &RobotSpec) -> Result<String> {
    Ok(toml::to_string(&SpecFile::from_spec(spec))?)
}

// ---------------------------------------------------------------------------
// geometry manifest

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub taper_angle_deg: f64,
    pub backbone: ManifestBackbone,
    pub layout: ManifestLayout,
    pub discs: Vec<ManifestDisc>,
    pub tendons: Vec<ManifestTendon>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestBackbone {
    pub cross_section: CrossSection,
    pub length_m: f64,
    pub base_radius_m: f64,
    pub tip_radius_m: f64,
    pub youngs_modulus_pa: f64,
    pub shear_modulus_pa: f64,
    pub poisson_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestLayout {
    pub disc_count: usize,
    pub disc_ratio: f64,
    pub disc_base_radius_m: f64,
    pub disc_tip_radius_m: f64,
    pub disc_base_thickness_m: f64,
    pub tendon_count: usize,
    pub tendon_base_offset_m: f64,
    pub tendon_tip_offset_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestDisc {
    pub index: usize,
    pub position_m: f64,
    pub radius_m: f64,
    pub thickness_m: f64,
    /// Tendon hole centres `[x, y]` in the disc frame, one per tendon.
    pub holes_m: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestTendon {
    pub index: usize,
    pub angle_deg: f64,
    pub base_offset_m: f64,
    pub tip_offset_m: f64,
}

impl Manifest {
    pub fn from_spec(spec: &RobotSpec) -> Result<Self> {
        spec.validate()?;
        let layout = disc_layout(spec);
        let tendons = tendon_paths(spec)?;
        let discs = (0..layout.positions.len())
            .map(|k| {
                let s = layout.positions[k];
                ManifestDisc {
                    index: k,
                    position_m: s,
                    radius_m: layout.radii[k],
                    thickness_m: layout.thicknesses[k],
                    holes_m: tendons
                        .iter()
                        .map(|t| {
                            let d = t.offset(s);
                            [d.x, d.y]
                        })
                        .collect(),
                }
            })
            .collect();
        Ok(Manifest {
            manifest_version: MANIFEST_VERSION,
            taper_angle_deg: taper_angle(spec),
            backbone: ManifestBackbone {
                cross_section: spec.cross_section,
                length_m: spec.length,
                base_radius_m: spec.base_radius,
                tip_radius_m: spec.tip_radius,
                youngs_modulus_pa: spec.youngs_modulus,
                shear_modulus_pa: spec.shear_modulus(),
                poisson_ratio: spec.poisson_ratio,
            },
            layout: ManifestLayout {
                disc_count: spec.disc_count,
                disc_ratio: layout.ratio,
                disc_base_radius_m: spec.disc_base_radius,
                disc_tip_radius_m: spec.disc_tip_radius,
                disc_base_thickness_m: spec.disc_base_thickness,
                tendon_count: spec.tendon_count,
                tendon_base_offset_m: spec.tendon_base_offset,
                tendon_tip_offset_m: spec.tendon_tip_offset,
            },
            discs,
            tendons: tendons
                .iter()
                .map(|t| ManifestTendon {
                    index: t.index,
                    angle_deg: t.angle.to_degrees(),
                    base_offset_m: t.base_offset,
                    tip_offset_m: t.tip_offset,
                })
                .collect(),
        })
    }

    pub fn to_spec(&self) -> Result<RobotSpec> {
        if self.manifest_version != MANIFEST_VERSION {
            return Err(Error::Parse(format!("unsupported manifest_version {}", self.manifest_version)));
        }
        let b = &self.backbone;
        let l = &self.layout;
        let spec = RobotSpec {
            length: b.length_m,
            base_radius: b.base_radius_m,
            tip_radius: b.tip_radius_m,
            youngs_modulus: b.youngs_modulus_pa,
            poisson_ratio: b.poisson_ratio,
            tendon_count: l.tendon_count,
            tendon_base_offset: l.tendon_base_offset_m,
            tendon_tip_offset: l.tendon_tip_offset_m,
            disc_count: l.disc_count,
            disc_base_radius: l.disc_base_radius_m,
            disc_tip_radius: l.disc_tip_radius_m,
            disc_base_thickness: l.disc_base_thickness_m,
            cross_section: b.cross_section,
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn export_manifest(spec: &RobotSpec) -> Result<String> {
    Ok(toml::to_string(&Manifest::from_spec(spec)?)?)
}

pub fn import_manifest(text: &str) -> Result<RobotSpec> {
    let manifest: Manifest = toml::from_str(text)?;
    manifest.to_spec()
}

pub fn write_manifest(spec: &RobotSpec, path: &Path) -> Result<()> {
    std::fs::write(path, export_manifest(spec)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn robot() -> RobotSpec {
        RobotSpec::validation_robot()
    }

    fn uniform() -> RobotSpec {
        RobotSpec { tip_radius: 0.0111, ..robot() }
    }

    #[test]
    fn radius_profile() {
        let spec = robot();
        assert_eq!(radius_at(&spec, 0.0).unwrap(), 0.0111);
        assert!((radius_at(&spec, spec.length).unwrap() - 0.0045).abs() < 1e-15);
        assert!((radius_at(&spec, spec.length / 2.0).unwrap() - 0.0078).abs() < 1e-15);
        assert!(matches!(radius_at(&spec, -1e-6), Err(Error::OutOfDomain { .. })));
        assert!(matches!(radius_at(&spec, 0.3451), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn section_values_and_derivatives() {
        let spec = robot();
        let sec = section_at(&spec, 0.0).unwrap();
        assert!((sec.area - PI * 0.0111f64.powi(2)).abs() < 1e-18);
        assert!((sec.area - 3.871e-4).abs() < 1e-7);
        assert_eq!(sec.i_zz, sec.i_xx + sec.i_yy);

        let h = 1e-5;
        for s in [0.01, 0.1, 0.2, 0.3] {
            let sp = section_at(&spec, s + h).unwrap();
            let sm = section_at(&spec, s - h).unwrap();
            let sec = section_at(&spec, s).unwrap();
            let fd = (sp.area - sm.area) / (2.0 * h);
            assert!(((fd - sec.area_rate) / sec.area_rate).abs() < 1e-10);
            let fd = (sp.i_xx - sm.i_xx) / (2.0 * h);
            assert!(((fd - sec.i_xx_rate) / sec.i_xx_rate).abs() < 1e-8);
        }

        let sec = section_at(&uniform(), 0.2).unwrap();
        assert_eq!(sec.area_rate, 0.0);
        assert_eq!(sec.i_xx_rate, 0.0);
        assert_eq!(sec.i_yy_rate, 0.0);
        assert_eq!(sec.i_zz_rate, 0.0);
    }

    #[test]
    fn stiffness_entries() {
        let spec = robot();
        let g = spec.shear_modulus();
        assert!((g - 67e6 / 2.78).abs() < 1e-6);
        assert!((g - 24.1e6).abs() < 0.05e6);
        let k = stiffness_at(&spec, 0.0).unwrap();
        assert!((k.bt.x - 67e6 * PI * 0.0111f64.powi(4) / 4.0).abs() < 1e-15);
        assert!((k.se.x - g * PI * 0.0111f64.powi(2)).abs() < 1e-9);
        assert!(k.se.iter().chain(k.bt.iter()).all(|&x| x > 0.0));

        let k = stiffness_at(&uniform(), 0.3).unwrap();
        assert_eq!(k.se_rate, Vec3::zeros());
        assert_eq!(k.bt_rate, Vec3::zeros());
    }

    #[test]
    fn stiffness_derivative_matches_finite_difference() {
        let spec = robot();
        let h = 1e-6;
        for i in 1..20 {
            let s = spec.length * i as f64 / 20.0;
            let kp = stiffness_at(&spec, s + h).unwrap();
            let km = stiffness_at(&spec, s - h).unwrap();
            let k = stiffness_at(&spec, s).unwrap();
            for j in 0..3 {
                let fd = (kp.se[j] - km.se[j]) / (2.0 * h);
                assert!(((fd - k.se_rate[j]) / k.se_rate[j]).abs() < 1e-8);
                let fd = (kp.bt[j] - km.bt[j]) / (2.0 * h);
                assert!(((fd - k.bt_rate[j]) / k.bt_rate[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn tendon_routing() {
        let spec = robot();
        let paths = tendon_paths(&spec).unwrap();
        let angles: Vec<f64> = paths.iter().map(|p| p.angle.to_degrees()).collect();
        assert!((angles[0] - 0.0).abs() < 1e-12);
        assert!((angles[1] - 120.0).abs() < 1e-12);
        assert!((angles[2] - 240.0).abs() < 1e-12);
        assert_eq!(paths[0].offset(0.0), Vec3::new(0.032, 0.0, 0.0));
        for p in &paths {
            for s in [0.0, 0.1, 0.345] {
                assert_eq!(p.offset(s).z, 0.0);
                assert_eq!(p.offset_accel(s), Vec3::zeros());
            }
            assert!(p.offset(0.1).norm() > p.offset(0.2).norm());
        }

        let inside = RobotSpec { tendon_tip_offset: 0.004, ..spec };
        assert!(matches!(tendon_paths(&inside), Err(Error::OffsetInsideBackbone { .. })));
    }

    #[test]
    fn taper_angle_values() {
        let spec = robot();
        let alpha = taper_angle(&spec);
        assert!((alpha - (0.0066f64 / 0.345).atan().to_degrees()).abs() < 1e-12);
        assert!((alpha - 1.096).abs() < 1e-3);
        assert_eq!(taper_angle(&uniform()), 0.0);
        let back = spec.with_taper_angle(alpha).unwrap();
        assert!((back.tip_radius - spec.tip_radius).abs() < 1e-12);
        assert!(spec.with_taper_angle(2.0).is_err());
    }

    #[test]
    fn disc_layout_geometric() {
        let spec = robot();
        let layout = disc_layout(&spec);
        assert!((layout.ratio - (1.6f64 / 3.7).powf(1.0 / 9.0)).abs() < 1e-15);
        assert!((layout.ratio - 0.9111).abs() < 1e-4);
        assert_eq!(layout.positions.len(), 10);
        assert_eq!(*layout.positions.last().unwrap(), spec.length);
        for w in layout.radii.windows(2) {
            assert!((w[1] / w[0] - layout.ratio).abs() < 1e-12);
        }
        let mut prev = 0.0;
        let mut prev_gap = f64::INFINITY;
        for &p in &layout.positions {
            let gap = p - prev;
            assert!(gap > 0.0 && gap < prev_gap);
            prev = p;
            prev_gap = gap;
        }

        let two = RobotSpec { disc_count: 2, ..spec.clone() };
        let layout = disc_layout(&two);
        assert_eq!(layout.positions.len(), 2);
        assert_eq!(layout.positions[1], spec.length);
        assert!(layout.positions[0] > 0.0 && layout.positions[0] < spec.length);
        assert_eq!(layout.radii[0], 0.037);
        assert!((layout.radii[1] - 0.016).abs() < 1e-15);
    }

    #[test]
    fn manifest_round_trip() {
        let spec = robot();
        let text = export_manifest(&spec).unwrap();
        assert!(text.contains("manifest_version = 1"));
        assert_eq!(text.matches("[[discs]]").count(), 10);
        assert_eq!(text.matches("[[tendons]]").count(), 3);
        let manifest: Manifest = toml::from_str(&text).unwrap();
        assert!((manifest.taper_angle_deg - taper_angle(&spec)).abs() < 1e-9);
        assert_eq!(import_manifest(&text).unwrap(), spec);
    }

    #[test]
    fn spec_file_units() {
        let text = r#"
            units = "cm-mpa"
            length = 34.5
            base_radius = 1.11
            tip_radius = 0.45
            youngs_modulus = 67
            poisson_ratio = 0.39
            tendon_count = 3
            tendon_base_offset = 3.2
            tendon_tip_offset = 1.4
            disc_count = 10
            disc_base_radius = 3.7
            disc_tip_radius = 1.6
        "#;
        let spec = parse_spec(text).unwrap();
        let reference = robot();
        assert!((spec.length - reference.length).abs() < 1e-15);
        assert!((spec.youngs_modulus - 67e6).abs() < 1e-6);
        assert_eq!(spec.disc_base_thickness, DEFAULT_DISC_THICKNESS);
        let si = spec_to_toml(&reference).unwrap();
        assert_eq!(parse_spec(&si).unwrap(), reference);
    }

    #[test]
    fn invalid_specs_rejected() {
        let spec = robot();
        assert!(RobotSpec { length: 0.0, ..spec.clone() }.validate().is_err());
        assert!(RobotSpec { tip_radius: 0.02, ..spec.clone() }.validate().is_err());
        assert!(RobotSpec { poisson_ratio: 0.5, ..spec.clone() }.validate().is_err());
        assert!(RobotSpec { youngs_modulus: -1.0, ..spec }.validate().is_err());
    }

    proptest! {
        #[test]
        fn perpendicular_axis_relation(frac in 0.0..=1.0f64, tip in 0.002..0.0111f64) {
            let spec = RobotSpec { tip_radius: tip, ..robot() };
            let sec = section_at(&spec, frac * spec.length).unwrap();
            prop_assert!((sec.i_zz - (sec.i_xx + sec.i_yy)).abs() <= 1e-15 * sec.i_zz);
            prop_assert!(sec.area > 0.0);
        }

        #[test]
        fn taper_round_trip(alpha in 0.0..1.7f64) {
            let spec = robot().with_taper_angle(alpha).unwrap();
            prop_assert!((taper_angle(&spec) - alpha).abs() < 1e-9);
        }
    }
}
