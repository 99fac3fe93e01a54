//! Link budget terms, the standard-atmosphere absorption integral, Doppler and
//! relative angular speed, and the Rician channel matrix.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::antennas::{steering_vector_unchecked, ArrayGeometry};
#[cfg(test)]
use crate::antennas::steering_vector;
use crate::error::{Error, Result};
use crate::geo_orbit::{orbital_speed, ConstellationGeometry, EarthModel, RoiEllipse, SatelliteState};
use crate::num::{from_db, to_db, Basis, Real, Vec3};

pub const SPEED_OF_LIGHT_MPS: f64 = 299_792_458.0;
/// Boltzmann constant in dBW/K/Hz.
pub const BOLTZMANN_DBW: f64 = -228.6;

/// Free-space path loss `20·(log10 d + log10 f + log10(4π/c))`.
pub fn free_space_loss_db<T: Real>(distance_m: T, freq_hz: T) -> Result<T> {
    if !(distance_m > T::zero() && freq_hz > T::zero()) {
        return Err(Error::domain("free_space_loss_db", "distance and frequency must be positive"));
    }
    let c = T::lit(SPEED_OF_LIGHT_MPS);
    Ok(T::lit(20.0) * (distance_m.log10() + freq_hz.log10() + (T::lit(4.0) * T::PI() / c).log10()))
}

/// Thermal noise power `T[dBK] + k[dBW/K/Hz] + 10·log10(B)`.
pub fn noise_power_dbw<T: Real>(temp_dbk: T, bandwidth_hz: T) -> Result<T> {
    if !(bandwidth_hz > T::zero()) {
        return Err(Error::domain("noise_power_dbw", "bandwidth must be positive"));
    }
    Ok(temp_dbk + T::lit(BOLTZMANN_DBW) + to_db(bandwidth_hz))
}

/// All dB terms of a single downlink budget.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkBudget<T> {
    pub p_tx_dbw: T,
    pub lp_cable_db: T,
    pub g_tx_db: T,
    pub lp_at_db: T,
    pub lp_fs_db: T,
    pub g_rx_db: T,
    pub noise_temp_dbk: T,
    pub bandwidth_hz: T,
}

impl<T: Real> LinkBudget<T> {
    pub fn rss_dbw(&self) -> T {
        self.p_tx_dbw - self.lp_cable_db + self.g_tx_db - self.lp_at_db - self.lp_fs_db + self.g_rx_db
    }

    pub fn noise_dbw(&self) -> Result<T> {
        noise_power_dbw(self.noise_temp_dbk, self.bandwidth_hz)
    }

    pub fn snr_db(&self) -> Result<T> {
        Ok(self.rss_dbw() - self.noise_dbw()?)
    }

    /// `|γ|²`: cable, atmospheric and free-space losses in linear form.
    pub fn path_gain(&self) -> T {
        from_db(-(self.lp_cable_db + self.lp_at_db + self.lp_fs_db))
    }

    pub fn with_g_tx(self, g_tx_db: T) -> Self {
        Self { g_tx_db, ..self }
    }
}

/// Amplitude `γ` with zero phase for the given losses.
pub fn path_amplitude<T: Real>(lp_cable_db: T, lp_at_db: T, lp_fs_db: T) -> Complex<T> {
    Complex::new(from_db(-(lp_cable_db + lp_at_db + lp_fs_db)).sqrt(), T::zero())
}

// ---------------------------------------------------------------------------
// Atmosphere

/// Effective top of the absorbing atmosphere.
pub const ATMOSPHERE_TOP_M: f64 = 81_000.0;
/// Water vapour is confined below this height (freezing level, no clouds).
pub const WATER_VAPOR_TOP_M: f64 = 2_300.0;
pub const SEA_LEVEL_WATER_VAPOR_GM3: f64 = 7.5;

const EARTH_RADIUS_GEOPOTENTIAL_M: f64 = 6_356_766.0;
// g0·M/R* in K/m.
const HYDROSTATIC_K_PER_M: f64 = 0.034_163_2;

/// One layer of the 1976 standard atmosphere (geopotential base height and
/// constant lapse rate).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AtmosphereLayer<T> {
    pub base_height_m: T,
    pub base_temperature_k: T,
    pub base_pressure_pa: T,
    pub lapse_k_per_m: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AtmosphereState<T> {
    pub temperature_k: T,
    pub pressure_pa: T,
    pub water_vapor_gm3: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AtmosphereProfile<T> {
    pub layers: Vec<AtmosphereLayer<T>>,
    pub surface_water_vapor_gm3: T,
    pub water_vapor_top_m: T,
    pub h_max_m: T,
}

impl<T: Real> AtmosphereProfile<T> {
    /// U.S. Standard Atmosphere 1976 below 84.852 km geopotential, with water
    /// vapour proportional to air density up to 2.3 km.
    pub fn standard_1976(surface_water_vapor_gm3: T) -> Self {
        const BASES_KM: [f64; 7] = [0.0, 11.0, 20.0, 32.0, 47.0, 51.0, 71.0];
        const LAPSE_K_PER_KM: [f64; 7] = [-6.5, 0.0, 1.0, 2.8, 0.0, -2.8, -2.0];
        let mut layers = Vec::with_capacity(7);
        let mut t = 288.15_f64;
        let mut p = 101_325.0_f64;
        for i in 0..7 {
            let lapse = LAPSE_K_PER_KM[i] / 1000.0;
            layers.push(AtmosphereLayer {
                base_height_m: T::lit(BASES_KM[i] * 1000.0),
                base_temperature_k: T::lit(t),
                base_pressure_pa: T::lit(p),
                lapse_k_per_m: T::lit(lapse),
            });
            if i + 1 < 7 {
                let dh = (BASES_KM[i + 1] - BASES_KM[i]) * 1000.0;
                let t_next = t + lapse * dh;
                p = if lapse == 0.0 {
                    p * (-HYDROSTATIC_K_PER_M * dh / t).exp()
                } else {
                    p * (t / t_next).powf(HYDROSTATIC_K_PER_M / lapse)
                };
                t = t_next;
            }
        }
        Self {
            layers,
            surface_water_vapor_gm3,
            water_vapor_top_m: T::lit(WATER_VAPOR_TOP_M),
            h_max_m: T::lit(ATMOSPHERE_TOP_M),
        }
    }

    fn dry_state(&self, height_m: T) -> (T, T) {
        let r0 = T::lit(EARTH_RADIUS_GEOPOTENTIAL_M);
        let h = r0 * height_m / (r0 + height_m);
        let layer = self
            .layers
            .iter()
            .rev()
            .find(|l| l.base_height_m <= h)
            .unwrap_or(&self.layers[0]);
        let dh = h - layer.base_height_m;
        let t = layer.base_temperature_k + layer.lapse_k_per_m * dh;
        let g = T::lit(HYDROSTATIC_K_PER_M);
        let p = if layer.lapse_k_per_m == T::zero() {
            layer.base_pressure_pa * (-g * dh / layer.base_temperature_k).exp()
        } else {
            layer.base_pressure_pa * (layer.base_temperature_k / t).powf(g / layer.lapse_k_per_m)
        };
        (t, p)
    }

    /// State at geometric height `height_m`.
    pub fn state_at(&self, height_m: T) -> AtmosphereState<T> {
        let (t, p) = self.dry_state(height_m);
        let water = if height_m <= self.water_vapor_top_m {
            let (t0, p0) = self.dry_state(T::zero());
            self.surface_water_vapor_gm3 * (p / t) / (p0 / t0)
        } else {
            T::zero()
        };
        AtmosphereState {
            temperature_k: t,
            pressure_pa: p,
            water_vapor_gm3: water,
        }
    }
}

/// Specific attenuation in dB/km from the approximate line-shape model for
/// oxygen (valid up to 54 GHz) and water vapour. Returns `(dry, vapour)`.
pub fn specific_attenuation_db_per_km<T: Real>(freq_ghz: T, state: &AtmosphereState<T>) -> (T, T) {
    let f = freq_ghz;
    let rp = state.pressure_pa / T::lit(101_300.0);
    let rt = T::lit(288.0) / state.temperature_k;
    let rho = state.water_vapor_gm3;
    let one = T::one();
    let phi = |a: f64, b: f64, c: f64, d: f64| {
        rp.powf(T::lit(a)) * rt.powf(T::lit(b)) * (T::lit(c) * (one - rp) + T::lit(d) * (one - rt)).exp()
    };
    let xi1 = phi(0.0717, -1.8132, 0.0156, -1.6515);
    let xi2 = phi(0.5146, -4.6368, -0.1921, -5.7416);
    let xi3 = phi(0.3414, -6.5851, 0.2130, -8.5854);
    let dry = (T::lit(7.2) * rt.powf(T::lit(2.8)) / (f * f + T::lit(0.34) * rp * rp * rt.powf(T::lit(1.6)))
        + T::lit(0.62) * xi3 / ((T::lit(54.0) - f).powf(T::lit(1.16) * xi1) + T::lit(0.83) * xi2))
        * f
        * f
        * rp
        * rp
        * T::lit(1e-3);

    let eta1 = T::lit(0.955) * rp * rt.powf(T::lit(0.68)) + T::lit(0.006) * rho;
    let eta2 = T::lit(0.735) * rp * rt.sqrt() + T::lit(0.0353) * rt.powi(4) * rho;
    let g = |fi: f64| {
        let r = (f - T::lit(fi)) / (f + T::lit(fi));
        one + r * r
    };
    let e = |c: f64| (T::lit(c) * (one - rt)).exp();
    let sq = |x: T| x * x;
    let line = |strength: f64, ex: f64, f0: f64, width: f64| {
        T::lit(strength) * eta1 * e(ex) / (sq(f - T::lit(f0)) + T::lit(width) * eta1 * eta1)
    };
    let wing = |strength: f64, ex: f64, f0: f64| T::lit(strength) * eta1 * e(ex) / sq(f - T::lit(f0));
    let vapour = (line(3.98, 2.23, 22.235, 9.42) * g(22.0)
        + line(11.96, 0.7, 183.31, 11.14)
        + line(0.081, 6.44, 321.226, 6.29)
        + line(3.66, 1.6, 325.153, 9.22)
        + wing(25.37, 1.09, 380.0)
        + wing(17.4, 1.46, 448.0)
        + wing(844.6, 0.17, 557.0) * g(557.0)
        + wing(290.0, 0.41, 752.0) * g(752.0)
        + T::lit(8.3328e4) * eta2 * e(0.99) / sq(f - T::lit(1780.0)) * g(1780.0))
        * f
        * f
        * rt.powf(T::lit(2.5))
        * rho
        * T::lit(1e-4);
    (dry, vapour)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AtmosphericLoss<T> {
    pub dry_db: T,
    pub water_vapor_db: T,
}

impl<T: Real> AtmosphericLoss<T> {
    pub fn total_db(&self) -> T {
        self.dry_db + self.water_vapor_db
    }
}

const SIMPSON_INTERVALS: usize = 2000;

/// Gaseous absorption integrated from `h_min_m` to the top of the profile,
/// scaled by `1/sin(elevation)` for the slant path.
pub fn atmospheric_loss_db<T: Real>(
    profile: &AtmosphereProfile<T>,
    freq_hz: T,
    elevation_rad: T,
    h_min_m: T,
) -> Result<AtmosphericLoss<T>> {
    if !(elevation_rad > T::zero() && elevation_rad <= T::FRAC_PI_2() + T::epsilon()) {
        return Err(Error::domain("atmospheric_loss_db", "elevation must lie in (0, pi/2]"));
    }
    if !(h_min_m < profile.h_max_m) {
        return Ok(AtmosphericLoss {
            dry_db: T::zero(),
            water_vapor_db: T::zero(),
        });
    }
    let f_ghz = freq_hz / T::lit(1e9);
    let mut bounds = vec![h_min_m];
    if h_min_m < profile.water_vapor_top_m {
        bounds.push(profile.water_vapor_top_m);
    }
    bounds.push(profile.h_max_m);
    let mut dry = T::zero();
    let mut wet = T::zero();
    for w in bounds.windows(2) {
        let (d, v) = simpson_segment(profile, f_ghz, w[0], w[1]);
        dry += d;
        wet += v;
    }
    let csc = elevation_rad.sin().recip();
    Ok(AtmosphericLoss {
        dry_db: dry * csc,
        water_vapor_db: wet * csc,
    })
}

/// Composite Simpson over `[a, b]` (metres) of the specific attenuation.
/// Endpoints are nudged inward so the vapour step at its ceiling is taken as
/// the one-sided limit of each segment.
fn simpson_segment<T: Real>(profile: &AtmosphereProfile<T>, f_ghz: T, a: T, b: T) -> (T, T) {
    let n = SIMPSON_INTERVALS;
    let span = b - a;
    let step = span / T::from_usize_lossy(n);
    let nudge = span * T::lit(1e-9);
    let mut dry = T::zero();
    let mut wet = T::zero();
    for i in 0..=n {
        let (weight, z) = if i == 0 {
            (T::one(), a + nudge)
        } else if i == n {
            (T::one(), b - nudge)
        } else if i % 2 == 1 {
            (T::lit(4.0), a + step * T::from_usize_lossy(i))
        } else {
            (T::lit(2.0), a + step * T::from_usize_lossy(i))
        };
        let (gd, gw) = specific_attenuation_db_per_km(f_ghz, &profile.state_at(z));
        dry += weight * gd;
        wet += weight * gw;
    }
    let scale = step / T::lit(3.0) / T::lit(1000.0);
    (dry * scale, wet * scale)
}

// ---------------------------------------------------------------------------
// Doppler and angular speed

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DopplerSample<T> {
    pub doppler_hz: T,
    pub w_rel_rad_s: T,
}

/// Doppler shift and relative angular speed seen by a user at `user_pos`.
pub fn doppler_and_angular_speed<T: Real>(
    sat: &SatelliteState<T>,
    user_pos: Vec3<T>,
    freq_hz: T,
) -> Result<DopplerSample<T>> {
    let los = user_pos - sat.position_m;
    let dist = los.norm();
    if !(dist > T::zero()) {
        return Err(Error::domain("doppler_and_angular_speed", "user and satellite coincide"));
    }
    let u = los * dist.recip();
    let speed = sat.speed_mps();
    let radial = sat.velocity_mps.dot(u);
    let c = if speed > T::zero() { radial / speed } else { T::zero() };
    Ok(DopplerSample {
        doppler_hz: radial * freq_hz / T::lit(SPEED_OF_LIGHT_MPS),
        w_rel_rad_s: (T::one() - c * c).max(T::zero()).sqrt() * speed / dist,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaxDoppler<T> {
    /// Doppler at the along-track ROI boundary.
    pub exact_hz: T,
    /// Small-footprint approximation `(R_x/h)·v_sat·f/c`.
    pub simplified_hz: T,
    /// Relative angular speed at the sub-satellite point, `v_sat/h`.
    pub max_w_rel_rad_s: T,
}

pub fn max_doppler_hz<T: Real>(
    geom: &ConstellationGeometry<T>,
    roi: &RoiEllipse<T>,
    earth: &EarthModel<T>,
    freq_hz: T,
) -> Result<MaxDoppler<T>> {
    let r = earth.radius_m;
    let h = geom.altitude_m;
    let rx = roi.semi_x_m;
    let v = orbital_speed(earth, h)?.speed_mps;
    let f_over_c = freq_hz / T::lit(SPEED_OF_LIGHT_MPS);
    let s = (r * r + rx * rx).sqrt();
    let rh = r + h;
    let dist = (r * r + rh * rh - T::lit(2.0) * r * r * rh / s).sqrt();
    Ok(MaxDoppler {
        exact_hz: (r * rx / s) * v / dist * f_over_c,
        simplified_hz: rx / h * v * f_over_c,
        max_w_rel_rad_s: v / h,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UserDoppler<T> {
    pub max_hz: T,
    pub mean_abs_hz: T,
}

/// Doppler from terminal motion at speed `v_user_mps` when the arrival
/// direction is uniform on the sphere. The maximum is analytic; the mean
/// absolute value is estimated by Monte Carlo (its exact value is
/// `v·f/(2c)`).
pub fn user_doppler<T: Real>(v_user_mps: T, freq_hz: T, n_trials: usize, seed: u64) -> Result<UserDoppler<T>> {
    if !(v_user_mps >= T::zero()) {
        return Err(Error::domain("user_doppler", "speed must be non-negative"));
    }
    if n_trials == 0 {
        return Err(Error::domain("user_doppler", "n_trials must be positive"));
    }
    let f_over_c = freq_hz / T::lit(SPEED_OF_LIGHT_MPS);
    let velocity = Vec3::new(T::zero(), T::zero(), v_user_mps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = T::zero();
    for _ in 0..n_trials {
        let d = random_unit_vector(&mut rng);
        acc += velocity.dot(d).abs();
    }
    Ok(UserDoppler {
        max_hz: v_user_mps * f_over_c,
        mean_abs_hz: acc / T::from_usize_lossy(n_trials) * f_over_c,
    })
}

pub(crate) fn random_unit_vector<T: Real, R: Rng>(rng: &mut R) -> Vec3<T> {
    loop {
        let v: Vec3<T> = Vec3::new(
            T::lit(rng.sample(StandardNormal)),
            T::lit(rng.sample(StandardNormal)),
            T::lit(rng.sample(StandardNormal)),
        );
        if let Some(u) = v.normalized() {
            return u;
        }
    }
}

// ---------------------------------------------------------------------------
// Channel matrix

/// Terminal frame at a point on the Earth: z up, x east, y north. At the
/// poles x falls back to the global x axis.
pub fn local_frame<T: Real>(user_pos: Vec3<T>) -> Result<Basis<T>> {
    let up = user_pos
        .normalized()
        .ok_or_else(|| Error::domain("local_frame", "user at the Earth's centre"))?;
    let pole = Vec3::new(T::zero(), T::zero(), T::one());
    let east = pole
        .cross(up)
        .normalized()
        .unwrap_or_else(|| Vec3::new(T::one(), T::zero(), T::zero()));
    Ok(Basis {
        x: east,
        y: up.cross(east),
        z: up,
    })
}

/// Rank-one Rician channel `H = γ·(a_u + a_R/√K)·a_sat^H`.
#[derive(Clone, Debug, PartialEq)]
pub struct RicianChannel<T> {
    pub gamma: Complex<T>,
    pub k_factor: T,
    pub n_ut: usize,
    pub n_sat: usize,
    /// Row-major `n_ut × n_sat`.
    pub h_matrix: Vec<Complex<T>>,
    pub los_ut: Vec<Complex<T>>,
    pub rician_component: Vec<Complex<T>>,
    pub sat_steering: Vec<Complex<T>>,
}

impl<T: Real> RicianChannel<T> {
    pub fn entry(&self, row: usize, col: usize) -> Complex<T> {
        self.h_matrix[row * self.n_sat + col]
    }

    /// `a_u + a_R/√K`, the terminal-side factor of the outer product.
    pub fn ut_factor(&self) -> Vec<Complex<T>> {
        let s = self.k_factor.sqrt().recip();
        self.los_ut
            .iter()
            .zip(&self.rician_component)
            .map(|(a, r)| a + r * s)
            .collect()
    }
}

/// Circularly-symmetric complex normal draws with unit variance per entry.
pub fn complex_normal_vector<T: Real, R: Rng>(rng: &mut R, n: usize) -> Vec<Complex<T>> {
    let s = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    (0..n)
        .map(|_| {
            Complex::new(
                T::lit(rng.sample(StandardNormal)) * s,
                T::lit(rng.sample(StandardNormal)) * s,
            )
        })
        .collect()
}

/// Builds the Doppler-corrected channel between `sat` and a terminal at
/// `user_pos`. The terminal array lies in its local horizontal plane; the
/// satellite array lies in the along-track/cross-track plane. Both steering
/// vectors are evaluated at the propagation direction satellite → user
/// expressed in each array's frame.
pub fn build_channel<T: Real>(
    sat: &SatelliteState<T>,
    user_pos: Vec3<T>,
    ut_geom: &ArrayGeometry<T>,
    sat_geom: &ArrayGeometry<T>,
    gamma: Complex<T>,
    k_factor: T,
    seed: u64,
) -> Result<RicianChannel<T>> {
    if !(k_factor > T::zero()) {
        return Err(Error::domain("build_channel", "Rician factor must be positive"));
    }
    let d = (user_pos - sat.position_m)
        .normalized()
        .ok_or_else(|| Error::domain("build_channel", "user and satellite coincide"))?;
    let ut_frame = local_frame(user_pos)?;
    let sat_frame = sat.frame()?.array_basis();
    let los_ut = steering_vector_unchecked(ut_geom, ut_frame.to_local(d));
    let sat_steering = steering_vector_unchecked(sat_geom, sat_frame.to_local(d));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rician_component = complex_normal_vector(&mut rng, los_ut.len());
    let mut ch = RicianChannel {
        gamma,
        k_factor,
        n_ut: los_ut.len(),
        n_sat: sat_steering.len(),
        h_matrix: Vec::new(),
        los_ut,
        rician_component,
        sat_steering,
    };
    let left = ch.ut_factor();
    let mut h = Vec::with_capacity(ch.n_ut * ch.n_sat);
    for l in &left {
        let gl = gamma * l;
        h.extend(ch.sat_steering.iter().map(|s| gl * s.conj()));
    }
    ch.h_matrix = h;
    Ok(ch)
}
