//! Earth and orbit constants, circular-orbit kinematics, the stereographic
//! chart of the footprint, and elliptical ROI sizing from the constellation.
//!
//! The footprint chart maps a tangent-plane point `(x, y)` through the Earth's
//! centre onto the sphere:
//!
//! ```text
//! p(x, y) = R · (R·u_sat + x·u_x + y·u_y) / sqrt(R² + x² + y²)
//! ```
//!
//! where `u_sat` points at the satellite, `u_x` along its velocity and
//! `u_y = u_x × u_sat` across track.

use crate::error::{Error, Result};
use crate::num::{Basis, Real, Vec3};

/// WGS-84 equatorial radius in metres.
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;
/// Geocentric gravitational constant `G·m_earth` in m³/s².
pub const EARTH_MU_M3S2: f64 = 3.986_004_418e14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarthModel<T> {
    pub radius_m: T,
    pub mu_m3s2: T,
}

impl<T: Real> EarthModel<T> {
    pub fn new(radius_m: T, mu_m3s2: T) -> Result<Self> {
        if !(radius_m > T::zero() && radius_m.is_finite()) {
            return Err(Error::domain("EarthModel", "radius must be positive"));
        }
        if !(mu_m3s2 > T::zero() && mu_m3s2.is_finite()) {
            return Err(Error::domain("EarthModel", "mu must be positive"));
        }
        Ok(Self { radius_m, mu_m3s2 })
    }
}

impl<T: Real> Default for EarthModel<T> {
    fn default() -> Self {
        Self {
            radius_m: T::lit(EARTH_RADIUS_M),
            mu_m3s2: T::lit(EARTH_MU_M3S2),
        }
    }
}

/// Walker-like constellation: `n_planes` planes of `n_sats_per_plane`
/// satellites, all at the same inclination and altitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstellationGeometry<T> {
    pub n_planes: usize,
    pub n_sats_per_plane: usize,
    pub inclination_rad: T,
    pub altitude_m: T,
}

impl<T: Real> ConstellationGeometry<T> {
    pub fn new(
        n_planes: usize,
        n_sats_per_plane: usize,
        inclination_rad: T,
        altitude_m: T,
    ) -> Result<Self> {
        if n_planes == 0 || n_sats_per_plane == 0 {
            return Err(Error::domain(
                "ConstellationGeometry",
                "plane and satellite counts must be at least 1",
            ));
        }
        if !(inclination_rad > T::zero() && inclination_rad <= T::FRAC_PI_2()) {
            return Err(Error::domain(
                "ConstellationGeometry",
                "inclination must lie in (0, pi/2]",
            ));
        }
        if !(altitude_m > T::zero()) {
            return Err(Error::domain(
                "ConstellationGeometry",
                "altitude must be positive",
            ));
        }
        Ok(Self {
            n_planes,
            n_sats_per_plane,
            inclination_rad,
            altitude_m,
        })
    }
}

/// Position and velocity relative to the Earth's centre (non-rotating frame).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SatelliteState<T> {
    pub position_m: Vec3<T>,
    pub velocity_mps: Vec3<T>,
    pub epoch_s: T,
}

impl<T: Real> SatelliteState<T> {
    /// State on a circular orbit with zero right ascension of the ascending
    /// node, at argument of latitude `arg_latitude_rad`.
    pub fn circular(
        earth: &EarthModel<T>,
        altitude_m: T,
        inclination_rad: T,
        arg_latitude_rad: T,
    ) -> Result<Self> {
        let speed = orbital_speed(earth, altitude_m)?.speed_mps;
        let r = earth.radius_m + altitude_m;
        let (su, cu) = arg_latitude_rad.sin_cos();
        let (si, ci) = inclination_rad.sin_cos();
        Ok(Self {
            position_m: Vec3::new(cu, ci * su, si * su) * r,
            velocity_mps: Vec3::new(-su, ci * cu, si * cu) * speed,
            epoch_s: T::zero(),
        })
    }

    pub fn radius_m(&self) -> T {
        self.position_m.norm()
    }

    pub fn speed_mps(&self) -> T {
        self.velocity_mps.norm()
    }

    /// Stereographic frame anchored at the current sub-satellite point.
    pub fn frame(&self) -> Result<StereoFrame<T>> {
        StereoFrame::from_state(self)
    }
}

/// Scalar kinematics of a circular orbit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrbitKinematics<T> {
    pub speed_mps: T,
    pub angular_speed_rad_s: T,
    /// Ground speed of the sub-satellite point.
    pub shadow_speed_mps: T,
    pub period_s: T,
}

/// Circular orbital speed `sqrt(mu / (R + h))` and derived quantities.
pub fn orbital_speed<T: Real>(earth: &EarthModel<T>, altitude_m: T) -> Result<OrbitKinematics<T>> {
    if !(altitude_m > T::zero()) {
        return Err(Error::domain("orbital_speed", "altitude must be positive"));
    }
    let r = earth.radius_m + altitude_m;
    let speed = (earth.mu_m3s2 / r).sqrt();
    let w = speed / r;
    Ok(OrbitKinematics {
        speed_mps: speed,
        angular_speed_rad_s: w,
        shadow_speed_mps: w * earth.radius_m,
        period_s: T::TAU() / w,
    })
}

/// Advances a circular-orbit state by `dt_s`, rotating position and velocity
/// about the orbit normal by `w·dt` with `w = |v| / |r|`.
pub fn propagate_circular<T: Real>(
    state0: &SatelliteState<T>,
    dt_s: T,
    _earth: &EarthModel<T>,
) -> SatelliteState<T> {
    let r = state0.position_m.norm();
    let w = state0.velocity_mps.norm() / r;
    let angle = w * dt_s;
    let normal = match state0.position_m.cross(state0.velocity_mps).normalized() {
        Some(n) => n,
        None => return *state0,
    };
    SatelliteState {
        position_m: rotate(state0.position_m, normal, angle),
        velocity_mps: rotate(state0.velocity_mps, normal, angle),
        epoch_s: state0.epoch_s + dt_s,
    }
}

// Rodrigues rotation of `v` about unit `axis`.
fn rotate<T: Real>(v: Vec3<T>, axis: Vec3<T>, angle: T) -> Vec3<T> {
    let (s, c) = angle.sin_cos();
    v * c + axis.cross(v) * s + axis * (axis.dot(v) * (T::one() - c))
}

/// Orthonormal frame of the footprint chart: `u_sat` radial, `u_x` along
/// track, `u_y = u_x × u_sat` cross track.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StereoFrame<T> {
    pub u_sat: Vec3<T>,
    pub u_x: Vec3<T>,
    pub u_y: Vec3<T>,
}

impl<T: Real> StereoFrame<T> {
    pub fn from_state(state: &SatelliteState<T>) -> Result<Self> {
        let u_sat = state
            .position_m
            .normalized()
            .ok_or_else(|| Error::domain("StereoFrame", "satellite at the Earth's centre"))?;
        // Velocity is already orthogonal on a circular orbit; the projection
        // only removes rounding.
        let along = state.velocity_mps - u_sat * u_sat.dot(state.velocity_mps);
        let u_x = along
            .normalized()
            .ok_or_else(|| Error::domain("StereoFrame", "velocity parallel to position"))?;
        Ok(Self {
            u_sat,
            u_x,
            u_y: u_x.cross(u_sat),
        })
    }

    /// Satellite antenna frame: x along track, y cross track, z radial
    /// outward. Earth-pointing directions have negative z.
    pub fn array_basis(&self) -> Basis<T> {
        Basis {
            x: self.u_x,
            y: self.u_y,
            z: self.u_sat,
        }
    }

    pub fn stereo_to_sphere(&self, p_xy: [T; 2], earth: &EarthModel<T>) -> Vec3<T> {
        stereo_to_sphere(p_xy, self, earth)
    }

    /// Inverse chart. `None` for points on or behind the great circle
    /// orthogonal to `u_sat`.
    pub fn sphere_to_stereo(&self, p: Vec3<T>, earth: &EarthModel<T>) -> Option<[T; 2]> {
        let c = p.dot(self.u_sat);
        if c <= T::zero() {
            return None;
        }
        let r = earth.radius_m;
        Some([r * p.dot(self.u_x) / c, r * p.dot(self.u_y) / c])
    }
}

pub fn stereo_to_sphere<T: Real>(
    p_xy: [T; 2],
    frame: &StereoFrame<T>,
    earth: &EarthModel<T>,
) -> Vec3<T> {
    let r = earth.radius_m;
    let [x, y] = p_xy;
    let s = (r * r + x * x + y * y).sqrt();
    (frame.u_sat * r + frame.u_x * x + frame.u_y * y) * (r / s)
}

/// Nearest intersection of the ray `origin + t·dir` (t > 0) with a sphere of
/// `radius` centred at the origin.
pub fn ray_sphere_intersection<T: Real>(
    origin: Vec3<T>,
    dir: Vec3<T>,
    radius: T,
) -> Option<Vec3<T>> {
    let b = origin.dot(dir);
    let c = origin.dot(origin) - radius * radius;
    let disc = b * b - c;
    if disc < T::zero() {
        return None;
    }
    let sq = disc.sqrt();
    let t_near = -b - sq;
    let t = if t_near > T::zero() { t_near } else { -b + sq };
    (t > T::zero()).then(|| origin + dir * t)
}

/// Elliptical region of interest in stereographic metres, centred on the
/// sub-satellite point. The anchoring frame moves with the satellite and is
/// passed alongside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoiEllipse<T> {
    pub semi_x_m: T,
    pub semi_y_m: T,
}

impl<T: Real> RoiEllipse<T> {
    pub fn new(semi_x_m: T, semi_y_m: T) -> Result<Self> {
        if !(semi_x_m > T::zero() && semi_y_m > T::zero()) {
            return Err(Error::domain("RoiEllipse", "semi-radii must be positive"));
        }
        Ok(Self { semi_x_m, semi_y_m })
    }

    /// Normalised radius `(x/R_x)² + (y/R_y)²`; inside iff ≤ 1.
    #[inline]
    pub fn level(&self, p_xy: [T; 2]) -> T {
        let u = p_xy[0] / self.semi_x_m;
        let v = p_xy[1] / self.semi_y_m;
        u * u + v * v
    }

    #[inline]
    pub fn contains(&self, p_xy: [T; 2]) -> bool {
        self.level(p_xy) <= T::one()
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            semi_x_m: self.semi_x_m * s,
            semi_y_m: self.semi_y_m * s,
        }
    }
}

/// Semi-radii that make the constellation's ellipses tile the globe:
/// `R_x = √2·π·R/N_s`, `R_y = √2·π·R·sin(θ_op)/N_p`.
pub fn design_roi<T: Real>(
    geom: &ConstellationGeometry<T>,
    earth: &EarthModel<T>,
) -> RoiEllipse<T> {
    let k = T::SQRT_2() * T::PI() * earth.radius_m;
    RoiEllipse {
        semi_x_m: k / T::from_usize_lossy(geom.n_sats_per_plane),
        semi_y_m: k * geom.inclination_rad.sin() / T::from_usize_lossy(geom.n_planes),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoiCoverage<T> {
    pub covered: bool,
    /// Left-hand side of the covering inequality; ≤ 1 means covered.
    pub lhs: T,
}

/// Whether ellipses with semi-radii `(rx, ry)` on the constellation grid
/// contain the grid cell centres, i.e.
/// `(πR/N_s / R_x)² + (πR·sin θ_op/N_p / R_y)² ≤ 1`.
pub fn check_roi_coverage<T: Real>(
    rx: T,
    ry: T,
    geom: &ConstellationGeometry<T>,
    earth: &EarthModel<T>,
) -> Result<RoiCoverage<T>> {
    if !(rx > T::zero() && ry > T::zero()) {
        return Err(Error::domain("check_roi_coverage", "semi-radii must be positive"));
    }
    let a = T::PI() * earth.radius_m / T::from_usize_lossy(geom.n_sats_per_plane) / rx;
    let b = T::PI() * earth.radius_m * geom.inclination_rad.sin()
        / T::from_usize_lossy(geom.n_planes)
        / ry;
    let lhs = a * a + b * b;
    Ok(RoiCoverage {
        covered: lhs <= T::one(),
        lhs,
    })
}
