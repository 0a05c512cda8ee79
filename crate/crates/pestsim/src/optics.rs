//! Beam-pair optics: radiation intensity along the radial axis, pest shading
//! geometry along the transverse axis, and layout coverage over the drop zone.
//!
//! The sensing plane is the drop-zone cross-section. The origin is the zone
//! center; for sensor pair 1 the transverse axis runs through the emitter
//! (at −D) and the receiver (at +D or +(D−R) depending on layout), and the
//! radial axis is perpendicular to it. Pair 2 is pair 1 rotated about the
//! origin by `second_pair_rotation_deg` (90° for the orthogonal layout).

use crate::{Error, Result};

/// Polynomial coefficients of the radial relative-radiation-intensity fit,
/// ordered from the constant term upward.
const RRI_COEFFS: [f64; 7] = [100.11, 3e-9, -1.4844, 2e-10, -0.4593, 4e-12, 0.0027];

/// Radial span (mm) over which the intensity fit is sampled and valid.
/// The fit's sample table extends to 3 mm, beyond the 2 mm drop-zone radius.
pub const RRI_FIT_SPAN_MM: f64 = 3.0;

/// Default emitter distance from the zone center, mm.
pub const DEFAULT_EMITTER_DISTANCE_MM: f64 = 19.13;
/// Default drop-zone radius, mm.
pub const DEFAULT_DROPZONE_RADIUS_MM: f64 = 2.0;
/// Default half-power / half-acceptance angle, degrees.
pub const DEFAULT_HALF_ANGLE_DEG: f64 = 10.0;

/// Sensor-pair arrangement across the drop zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Layout {
    /// Receivers sit at the emitter distance D, mirroring the emitters.
    Symmetric,
    /// Receivers sit closer, at D − R, so both apertures span the whole zone.
    AsymmetricOrthogonal,
}

/// Which of the two emitter/receiver pairs to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pair {
    One,
    Two,
}

/// Geometry of the two-pair beam gate.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct BeamGeometry {
    /// Origin → emitter distance along the transverse axis, mm.
    pub emitter_distance: f64,
    /// Drop-zone radius, mm.
    pub dropzone_radius: f64,
    /// Emitter half-power angle, degrees.
    pub emitter_half_power_deg: f64,
    /// Receiver effective half-acceptance angle, degrees. The device datasheet
    /// quantifies only the emitter's angle; the receiver's defaults to the same
    /// value and is configurable.
    pub receiver_half_angle_deg: f64,
    pub layout: Layout,
    /// Rotation of the second pair about the origin, degrees.
    pub second_pair_rotation_deg: f64,
    /// Base effective reach of a receiver, mm. The usable reach grows with the
    /// acceptance angle (wider aperture gathers more light):
    /// `reach = receiver_range_base / cos(half_angle)`, unbounded at 90°.
    pub receiver_range_base: f64,
}

impl BeamGeometry {
    /// Default geometry for the given layout.
    pub fn new(layout: Layout) -> Self {
        Self {
            emitter_distance: DEFAULT_EMITTER_DISTANCE_MM,
            dropzone_radius: DEFAULT_DROPZONE_RADIUS_MM,
            emitter_half_power_deg: DEFAULT_HALF_ANGLE_DEG,
            receiver_half_angle_deg: DEFAULT_HALF_ANGLE_DEG,
            layout,
            second_pair_rotation_deg: 90.0,
            receiver_range_base: DEFAULT_EMITTER_DISTANCE_MM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.emitter_distance > self.dropzone_radius && self.dropzone_radius > 0.0) {
            return Err(Error::Domain(format!(
                "geometry requires D > R > 0, got D={} R={}",
                self.emitter_distance, self.dropzone_radius
            )));
        }
        if !(self.emitter_half_power_deg > 0.0 && self.emitter_half_power_deg < 90.0) {
            return Err(Error::Domain(format!(
                "emitter half-power angle must lie in (0, 90), got {}",
                self.emitter_half_power_deg
            )));
        }
        // 90° is allowed as the degenerate all-direction receiver.
        if !(self.receiver_half_angle_deg > 0.0 && self.receiver_half_angle_deg <= 90.0) {
            return Err(Error::Domain(format!(
                "receiver half-angle must lie in (0, 90], got {}",
                self.receiver_half_angle_deg
            )));
        }
        if !(self.second_pair_rotation_deg > 0.0 && self.second_pair_rotation_deg < 180.0) {
            return Err(Error::Domain(format!(
                "second-pair rotation must lie in (0, 180), got {}",
                self.second_pair_rotation_deg
            )));
        }
        if !(self.receiver_range_base > 0.0) {
            return Err(Error::Domain("receiver range base must be positive".into()));
        }
        Ok(())
    }

    /// Distance of a receiver from the origin for this layout.
    pub fn receiver_distance(&self) -> f64 {
        match self.layout {
            Layout::Symmetric => self.emitter_distance,
            Layout::AsymmetricOrthogonal => self.emitter_distance - self.dropzone_radius,
        }
    }

    /// Receiver position in the sensing plane. Pair 1 sits on the +transverse
    /// side; pair 2 is rotated by `second_pair_rotation_deg`.
    pub fn receiver_position(&self, pair: Pair) -> (f64, f64) {
        let d = self.receiver_distance();
        match pair {
            Pair::One => (d, 0.0),
            Pair::Two => {
                let th = self.second_pair_rotation_deg.to_radians();
                (d * th.cos(), d * th.sin())
            }
        }
    }

    /// Effective reach of a receiver, mm (see `receiver_range_base`).
    pub fn receiver_effective_range(&self) -> f64 {
        let cos_half = self.receiver_half_angle_deg.to_radians().cos();
        if cos_half <= 0.0 {
            f64::INFINITY
        } else {
            self.receiver_range_base / cos_half
        }
    }

    /// Whether the given receiver's aperture geometrically reaches a point of
    /// the sensing plane: within its acceptance cone and its effective range.
    pub fn pair_reaches(&self, pair: Pair, point: (f64, f64)) -> bool {
        let (rx, ry) = self.receiver_position(pair);
        let (vx, vy) = (point.0 - rx, point.1 - ry);
        let dist = (vx * vx + vy * vy).sqrt();
        if dist == 0.0 {
            return true;
        }
        if dist > self.receiver_effective_range() {
            return false;
        }
        // Receiver boresight points at the origin.
        let norm = (rx * rx + ry * ry).sqrt();
        let (ax, ay) = (-rx / norm, -ry / norm);
        let cos_ang = ((vx * ax + vy * ay) / dist).clamp(-1.0, 1.0);
        cos_ang.acos() <= self.receiver_half_angle_deg.to_radians()
    }

    /// Occluder plane coordinates expressed in the given pair's own frame
    /// (transverse toward that pair's receiver, radial perpendicular).
    fn frame_coords(&self, pair: Pair, t: f64, r: f64) -> (f64, f64) {
        match pair {
            Pair::One => (t, r),
            Pair::Two => {
                let th = self.second_pair_rotation_deg.to_radians();
                // Inverse rotation of the plane point into the pair-2 frame.
                (t * th.cos() + r * th.sin(), -t * th.sin() + r * th.cos())
            }
        }
    }
}

impl Default for BeamGeometry {
    fn default() -> Self {
        Self::new(Layout::AsymmetricOrthogonal)
    }
}

/// A circular occluder (pest cross-section) inside the drop zone.
#[derive(Debug, Clone, Copy)]
pub struct Occluder {
    /// Occluder radius, mm. May be zero (vanishing occluder).
    pub radius: f64,
    /// Transverse coordinate, mm.
    pub transverse: f64,
    /// Radial coordinate, mm.
    pub radial: f64,
}

impl Occluder {
    /// Positions outside the drop zone are rejected, not clamped: the funnel
    /// physically confines drops.
    pub fn new(radius: f64, transverse: f64, radial: f64, geom: &BeamGeometry) -> Result<Self> {
        if radius < 0.0 || !radius.is_finite() {
            return Err(Error::Domain(format!("occluder radius must be >= 0, got {radius}")));
        }
        let r2 = geom.dropzone_radius * geom.dropzone_radius;
        if transverse * transverse + radial * radial > r2 {
            return Err(Error::Domain(format!(
                "occluder position ({transverse}, {radial}) lies outside the drop zone"
            )));
        }
        Ok(Self { radius, transverse, radial })
    }
}

/// Relative radiation intensity (percent of on-axis) at radial coordinate `r`
/// mm, from the sixth-degree polynomial fit of the emitter's radial profile.
///
/// Valid on the fitted span |r| ≤ 3 mm; outside it the fit is meaningless and
/// a domain error is returned. Even-symmetric up to the fit's vanishing odd
/// coefficients.
pub fn rri_radial(r: f64) -> Result<f64> {
    if !r.is_finite() || r.abs() > RRI_FIT_SPAN_MM {
        return Err(Error::Domain(format!(
            "radial coordinate {r} outside the fitted span ±{RRI_FIT_SPAN_MM} mm"
        )));
    }
    // Horner evaluation, highest degree first.
    let mut acc = 0.0;
    for &c in RRI_COEFFS.iter().rev() {
        acc = acc * r + c;
    }
    Ok(acc)
}

/// Relative shaded range at transverse coordinate `t`: the angular extent a
/// fixed occluder shades at `t`, relative to the reference position t = −R.
///
/// `arctan(1/(D+t)) / arctan(1/(D−R))`; strictly decreasing in `t`.
pub fn rsr(t: f64, geom: &BeamGeometry) -> Result<f64> {
    if t.abs() > geom.dropzone_radius {
        return Err(Error::Domain(format!(
            "transverse coordinate {t} outside the drop zone (|t| <= {})",
            geom.dropzone_radius
        )));
    }
    let d = geom.emitter_distance;
    let num = (1.0 / (d + t)).atan();
    let den = (1.0 / (d - geom.dropzone_radius)).atan();
    Ok(num / den)
}

/// Fraction of the receiver's effective angular aperture occluded by `occ`,
/// weighted by the radial intensity profile and clamped to [0, 1].
///
/// The shaded angle is `arctan(ρ/(D+t))` in the pair's own frame; the weight
/// is `rri_radial(r)` normalized to the on-axis value. Positions the pair's
/// receiver cannot reach contribute nothing.
pub fn shaded_fraction(occ: &Occluder, geom: &BeamGeometry, pair: Pair) -> f64 {
    if !geom.pair_reaches(pair, (occ.transverse, occ.radial)) {
        return 0.0;
    }
    let (t, r) = geom.frame_coords(pair, occ.transverse, occ.radial);
    let shaded = (occ.radius / (geom.emitter_distance + t)).atan();
    let aperture = geom.receiver_half_angle_deg.to_radians();
    // Inside the drop zone |r| <= R < fit span, so the weight is total.
    let weight = rri_radial(r).unwrap_or(0.0) / rri_radial(0.0).unwrap();
    (shaded / aperture * weight).clamp(0.0, 1.0)
}

/// Coverage ratios of the drop-zone disc for a geometry. Ratios partition the
/// rasterized cells, so they sum to one exactly up to rounding.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CoverageReport {
    /// Fraction of the zone both receiver apertures reach.
    pub both_pairs: f64,
    /// Fraction only one aperture reaches.
    pub one_pair: f64,
    /// Fraction neither aperture reaches.
    pub blind: f64,
}

impl CoverageReport {
    pub fn to_csv(&self) -> String {
        format!("both_pairs,one_pair,blind\n{},{},{}\n", self.both_pairs, self.one_pair, self.blind)
    }
}

/// Rasterize the drop-zone disc at `grid_step` mm and classify each cell by
/// how many receiver apertures reach its center.
pub fn coverage_map(geom: &BeamGeometry, grid_step: f64) -> Result<CoverageReport> {
    if !(grid_step > 0.0) {
        return Err(Error::Domain(format!("grid step must be positive, got {grid_step}")));
    }
    let r = geom.dropzone_radius;
    let n = (2.0 * r / grid_step).ceil() as usize;
    let (mut both, mut one, mut blind, mut total) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..n {
        let x = -r + (i as f64 + 0.5) * grid_step;
        for j in 0..n {
            let y = -r + (j as f64 + 0.5) * grid_step;
            if x * x + y * y > r * r {
                continue;
            }
            total += 1;
            let hits = geom.pair_reaches(Pair::One, (x, y)) as u8
                + geom.pair_reaches(Pair::Two, (x, y)) as u8;
            match hits {
                2 => both += 1,
                1 => one += 1,
                _ => blind += 1,
            }
        }
    }
    if total == 0 {
        return Err(Error::Domain("grid step too coarse: no cells inside the zone".into()));
    }
    let tot = total as f64;
    Ok(CoverageReport {
        both_pairs: both as f64 / tot,
        one_pair: one as f64 / tot,
        blind: blind as f64 / tot,
    })
}
