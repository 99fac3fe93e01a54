//! Array geometry, steering vectors and the user-terminal antenna models.
//!
//! Directions handed to terminal antennas are unit vectors in the terminal's
//! local frame: x and y span the panel, z is the local zenith. The steering
//! vector convention is `[a(v)]_n = exp(-i·2π/λ·<k_n, v>)` and combining
//! gain is `|a^H w|² / ‖w‖²`.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::num::{from_db, to_db, Real, Vec3};

/// Element positions relative to the array origin, in metres.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrayGeometry<T> {
    pub element_positions_m: Vec<Vec3<T>>,
    pub wavelength_m: T,
    /// `(nx, ny, spacing_m)` when the array is a uniform planar grid, with
    /// element `n = ix + nx·iy` at `(ix·d, iy·d, 0)`.
    pub grid: Option<(usize, usize, T)>,
}

impl<T: Real> ArrayGeometry<T> {
    /// Uniform planar array with half-wavelength spacing on both axes.
    pub fn upa(nx: usize, ny: usize, wavelength_m: T) -> Result<Self> {
        Self::upa_with_spacing(nx, ny, wavelength_m, wavelength_m / T::lit(2.0))
    }

    pub fn upa_with_spacing(nx: usize, ny: usize, wavelength_m: T, spacing_m: T) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::domain("ArrayGeometry::upa", "array must have at least one element"));
        }
        if !(wavelength_m > T::zero() && spacing_m > T::zero()) {
            return Err(Error::domain("ArrayGeometry::upa", "wavelength and spacing must be positive"));
        }
        let mut pos = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                pos.push(Vec3::new(
                    T::from_usize_lossy(ix) * spacing_m,
                    T::from_usize_lossy(iy) * spacing_m,
                    T::zero(),
                ));
            }
        }
        Ok(Self {
            element_positions_m: pos,
            wavelength_m,
            grid: Some((nx, ny, spacing_m)),
        })
    }

    pub fn from_positions(positions: Vec<Vec3<T>>, wavelength_m: T) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::domain("ArrayGeometry", "array must have at least one element"));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::domain("ArrayGeometry", "element positions must be finite"));
        }
        Ok(Self {
            element_positions_m: positions,
            wavelength_m,
            grid: None,
        })
    }

    pub fn len(&self) -> usize {
        self.element_positions_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.element_positions_m.is_empty()
    }
}

pub(crate) fn check_unit<T: Real>(op: &'static str, v: Vec3<T>) -> Result<()> {
    let tol = T::lit(1e-9).max(T::epsilon() * T::lit(100.0));
    if !v.is_finite() || (v.norm() - T::one()).abs() > tol {
        return Err(Error::domain(op, "direction must be a unit vector"));
    }
    Ok(())
}

pub fn steering_vector<T: Real>(geom: &ArrayGeometry<T>, direction: Vec3<T>) -> Result<Vec<Complex<T>>> {
    check_unit("steering_vector", direction)?;
    Ok(steering_vector_unchecked(geom, direction))
}

pub(crate) fn steering_vector_unchecked<T: Real>(
    geom: &ArrayGeometry<T>,
    direction: Vec3<T>,
) -> Vec<Complex<T>> {
    let k = T::TAU() / geom.wavelength_m;
    geom.element_positions_m
        .iter()
        .map(|p| Complex::from_polar(T::one(), -k * p.dot(direction)))
        .collect()
}

/// `a^H w`.
pub fn inner<T: Real>(a: &[Complex<T>], w: &[Complex<T>]) -> Complex<T> {
    a.iter().zip(w).map(|(a, w)| a.conj() * w).sum()
}

pub fn norm_sqr<T: Real>(w: &[Complex<T>]) -> T {
    w.iter().map(|z| z.norm_sqr()).sum()
}

/// Linear combining gain `|a^H w|² / ‖w‖²`.
pub fn combiner_gain<T: Real>(a: &[Complex<T>], w: &[Complex<T>]) -> T {
    inner(a, w).norm_sqr() / norm_sqr(w)
}

/// Beamforming or combining weights.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamWeights<T>(pub Vec<Complex<T>>);

impl<T: Real> BeamWeights<T> {
    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn has_nan(&self) -> bool {
        self.0.iter().any(|z| z.re.is_nan() || z.im.is_nan())
    }

    pub fn is_constant_modulus(&self, tol: T) -> bool {
        self.0.iter().all(|z| (z.norm() - T::one()).abs() < tol)
    }
}

/// Largest gain a UPA can reach in any direction with unit-gain elements.
pub fn upa_max_gain_db<T: Real>(geom: &ArrayGeometry<T>) -> T {
    to_db(T::from_usize_lossy(geom.len()))
}

/// Closed-form gain of a leaky-wave panel with exponential taper `alpha` per
/// element:
///
/// ```text
/// (1-e^{-αNx})(1-e^{-αNy})(1+e^{-α})² / ((1+e^{-αNx})(1+e^{-αNy})(1-e^{-α})²)
/// ```
///
/// `alpha = 0` is the untapered UPA and is rejected here; use
/// [`upa_max_gain_db`].
pub fn leaky_wave_gain_db<T: Real>(nx: usize, ny: usize, alpha: T) -> Result<T> {
    if !(alpha > T::zero()) || !alpha.is_finite() {
        return Err(Error::domain(
            "leaky_wave_gain_db",
            "leakage factor must be positive (alpha = 0 is the UPA formula)",
        ));
    }
    if nx == 0 || ny == 0 {
        return Err(Error::domain("leaky_wave_gain_db", "element counts must be at least 1"));
    }
    Ok(to_db(leaky_axis_factor(nx, alpha) * leaky_axis_factor(ny, alpha)))
}

// tanh(αN/2)·coth(α/2), the per-axis factor of the closed form.
fn leaky_axis_factor<T: Real>(n: usize, alpha: T) -> T {
    let e1 = (-alpha).exp();
    let en = (-alpha * T::from_usize_lossy(n)).exp();
    (T::one() - en) * (T::one() + e1) / ((T::one() + en) * (T::one() - e1))
}

/// Gain ceiling of an infinitely large leaky-wave panel.
pub fn leaky_wave_threshold_db<T: Real>(alpha: T) -> Result<T> {
    if !(alpha > T::zero()) {
        return Err(Error::domain("leaky_wave_threshold_db", "leakage factor must be positive"));
    }
    let e = (-alpha).exp();
    let r = (T::one() + e) / (T::one() - e);
    Ok(to_db(r * r))
}

/// User-terminal antenna.
#[derive(Clone, Debug, PartialEq)]
pub enum TerminalAntenna<T> {
    /// Phased array with unit-modulus weights.
    Upa { geometry: ArrayGeometry<T> },
    /// Flat leaky-wave panel; weights have an exponential amplitude taper.
    LeakyWave { geometry: ArrayGeometry<T>, alpha: T },
    /// Liquid-crystal metasurface described only by peak gain and cosine
    /// roll-off exponent.
    Metasurface { peak_gain_db: T, rolloff: T },
}

impl<T: Real> TerminalAntenna<T> {
    pub fn upa(nx: usize, ny: usize, wavelength_m: T) -> Result<Self> {
        Ok(Self::Upa {
            geometry: ArrayGeometry::upa(nx, ny, wavelength_m)?,
        })
    }

    pub fn leaky_wave(nx: usize, ny: usize, alpha: T, wavelength_m: T) -> Result<Self> {
        if !(alpha >= T::zero()) {
            return Err(Error::domain("TerminalAntenna", "leakage factor must be non-negative"));
        }
        Ok(Self::LeakyWave {
            geometry: ArrayGeometry::upa(nx, ny, wavelength_m)?,
            alpha,
        })
    }

    pub fn metasurface(peak_gain_db: T, rolloff: T) -> Result<Self> {
        if !peak_gain_db.is_finite() || !rolloff.is_finite() {
            return Err(Error::domain("TerminalAntenna", "metasurface parameters must be finite"));
        }
        Ok(Self::Metasurface {
            peak_gain_db,
            rolloff,
        })
    }

    /// Gain with perfect alignment towards `direction`, from closed forms.
    pub fn aligned_gain_db(&self, direction: Vec3<T>) -> Result<T> {
        match self {
            Self::Upa { geometry } => Ok(upa_max_gain_db(geometry)),
            Self::LeakyWave { geometry, alpha } => {
                let (nx, ny, _) = grid_of(geometry)?;
                if *alpha == T::zero() {
                    Ok(upa_max_gain_db(geometry))
                } else {
                    leaky_wave_gain_db(nx, ny, *alpha)
                }
            }
            Self::Metasurface {
                peak_gain_db,
                rolloff,
            } => metasurface_gain_db(*peak_gain_db, *rolloff, direction),
        }
    }
}

fn grid_of<T: Real>(g: &ArrayGeometry<T>) -> Result<(usize, usize, T)> {
    g.grid
        .ok_or_else(|| Error::domain("TerminalAntenna", "planar grid geometry required"))
}

// Cosine roll-off: cos^r of the scan angle from zenith, i.e. sin^r(elevation).
fn metasurface_gain_db<T: Real>(peak: T, rolloff: T, direction: Vec3<T>) -> Result<T> {
    check_unit("metasurface gain", direction)?;
    let sin_el = direction.z;
    if sin_el <= T::zero() {
        return Err(Error::domain("best_combiner", "satellite below the terminal horizon"));
    }
    Ok(peak + rolloff * to_db(sin_el))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Combiner<T> {
    /// `None` for antennas without an array-factor model.
    pub weights: Option<BeamWeights<T>>,
    pub gain_db: T,
}

/// Leaky-wave pointing scan: points per axis over `[-π, π]`.
pub const LEAKY_SCAN_POINTS: usize = 512;

/// Weights maximising `|<a(v), w>|² / ‖w‖²` over the antenna's feasible set.
pub fn best_combiner<T: Real>(antenna: &TerminalAntenna<T>, direction: Vec3<T>) -> Result<Combiner<T>> {
    check_unit("best_combiner", direction)?;
    match antenna {
        TerminalAntenna::Upa { geometry } => {
            // Conjugate match: w = a(v) maximises the normalised inner product
            // and is unit modulus.
            let a = steering_vector_unchecked(geometry, direction);
            let gain = combiner_gain(&a, &a);
            Ok(Combiner {
                weights: Some(BeamWeights(a)),
                gain_db: to_db(gain),
            })
        }
        TerminalAntenna::LeakyWave { geometry, alpha } => {
            let (nx, ny, d) = grid_of(geometry)?;
            let k = T::TAU() * d / geometry.wavelength_m;
            let t1 = scan_axis(nx, *alpha, k * direction.x);
            let t2 = scan_axis(ny, *alpha, k * direction.y);
            let w = leaky_wave_weights(nx, ny, *alpha, t1, t2);
            let a = steering_vector_unchecked(geometry, direction);
            Ok(Combiner {
                gain_db: to_db(combiner_gain(&a, &w)),
                weights: Some(BeamWeights(w)),
            })
        }
        TerminalAntenna::Metasurface {
            peak_gain_db,
            rolloff,
        } => Ok(Combiner {
            weights: None,
            gain_db: metasurface_gain_db(*peak_gain_db, *rolloff, direction)?,
        }),
    }
}

/// `[w]_n = exp(-α(ix+iy) - i(ix·θ1 + iy·θ2))` for element `n = ix + nx·iy`.
pub fn leaky_wave_weights<T: Real>(nx: usize, ny: usize, alpha: T, theta1: T, theta2: T) -> Vec<Complex<T>> {
    let mut w = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let (fx, fy) = (T::from_usize_lossy(ix), T::from_usize_lossy(iy));
            w.push(Complex::from_polar(
                (-alpha * (fx + fy)).exp(),
                -(fx * theta1 + fy * theta2),
            ));
        }
    }
    w
}

// Separable per-axis response of the tapered weights against a steering
// phase progression `psi` per element.
fn axis_response<T: Real>(n: usize, alpha: T, psi: T, theta: T) -> T {
    let mut acc = Complex::new(T::zero(), T::zero());
    for i in 0..n {
        let fi = T::from_usize_lossy(i);
        acc += Complex::from_polar((-alpha * fi).exp(), fi * (psi - theta));
    }
    acc.norm_sqr()
}

// Grid scan over [-π, π] followed by one golden-section refinement around
// the best grid point.
fn scan_axis<T: Real>(n: usize, alpha: T, psi: T) -> T {
    let m = LEAKY_SCAN_POINTS;
    let step = T::TAU() / T::from_usize_lossy(m - 1);
    let theta_at = |j: usize| -T::PI() + step * T::from_usize_lossy(j);
    let mut best = 0;
    let mut best_val = T::neg_infinity();
    for j in 0..m {
        let v = axis_response(n, alpha, psi, theta_at(j));
        if v > best_val {
            best_val = v;
            best = j;
        }
    }
    let lo = theta_at(best) - step;
    let hi = theta_at(best) + step;
    let f = |t: T| axis_response(n, alpha, psi, t);
    let r = (T::lit(5.0).sqrt() - T::one()) / T::lit(2.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let t = (a + b) / T::lit(2.0);
    if f(t) >= best_val {
        t
    } else {
        theta_at(best)
    }
}

/// Summary of a realised-gain distribution, in dB. The mean is taken over
/// linear gains.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainStats<T> {
    pub mean_db: T,
    pub min_db: T,
    pub max_db: T,
}

/// Uniform direction on the spherical cap of half-angle `half_angle_rad`
/// around unit `axis`.
pub fn sample_cap<T: Real, R: Rng>(rng: &mut R, axis: Vec3<T>, half_angle_rad: T) -> Vec3<T> {
    let u1 = T::lit(rng.gen::<f64>());
    let u2 = T::lit(rng.gen::<f64>());
    let cos_t = T::one() - u1 * (T::one() - half_angle_rad.cos());
    let sin_t = (T::one() - cos_t * cos_t).max(T::zero()).sqrt();
    let phi = T::TAU() * u2;
    let (p1, p2) = perpendicular_pair(axis);
    axis * cos_t + (p1 * phi.cos() + p2 * phi.sin()) * sin_t
}

fn perpendicular_pair<T: Real>(axis: Vec3<T>) -> (Vec3<T>, Vec3<T>) {
    let helper = if axis.x.abs() < T::lit(0.9) {
        Vec3::new(T::one(), T::zero(), T::zero())
    } else {
        Vec3::new(T::zero(), T::one(), T::zero())
    };
    let p1 = helper.cross(axis).normalized().expect("non-parallel helper");
    (p1, axis.cross(p1))
}

/// Monte Carlo realised gain when the combiner is aligned to `true_dir` but
/// the satellite actually lies anywhere in a cone of half-angle `error_deg`.
pub fn gain_with_pointing_error<T: Real>(
    antenna: &TerminalAntenna<T>,
    true_dir: Vec3<T>,
    error_deg: T,
    n_trials: usize,
    seed: u64,
) -> Result<GainStats<T>> {
    if n_trials == 0 {
        return Err(Error::domain("gain_with_pointing_error", "n_trials must be positive"));
    }
    if !(error_deg >= T::zero()) {
        return Err(Error::domain("gain_with_pointing_error", "error must be non-negative"));
    }
    let geometry = match antenna {
        TerminalAntenna::Upa { geometry } | TerminalAntenna::LeakyWave { geometry, .. } => geometry,
        TerminalAntenna::Metasurface { .. } => {
            return Err(Error::domain(
                "gain_with_pointing_error",
                "no array factor available for the metasurface model",
            ))
        }
    };
    let w = best_combiner(antenna, true_dir)?
        .weights
        .expect("array antennas always return weights");
    let half = error_deg.to_radians();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = T::zero();
    let mut min = T::infinity();
    let mut max = T::neg_infinity();
    for _ in 0..n_trials {
        let d = sample_cap(&mut rng, true_dir, half);
        let g = combiner_gain(&steering_vector_unchecked(geometry, d), w.as_slice());
        sum += g;
        min = min.min(g);
        max = max.max(g);
    }
    Ok(GainStats {
        mean_db: to_db(sum / T::from_usize_lossy(n_trials)),
        min_db: to_db(min),
        max_db: to_db(max),
    })
}

/// Rounds each phase to the nearest of `2^bits` uniform levels, keeping each
/// entry's modulus.
pub fn quantize_phases<T: Real>(weights: &BeamWeights<T>, bits: u32) -> Result<BeamWeights<T>> {
    if bits == 0 || bits > 30 {
        return Err(Error::domain("quantize_phases", "bits must be in 1..=30"));
    }
    let levels = T::from_usize_lossy(1usize << bits);
    let step = T::TAU() / levels;
    Ok(BeamWeights(
        weights
            .0
            .iter()
            .map(|z| {
                let q = (z.arg() / step).round() * step;
                Complex::from_polar(z.norm(), q)
            })
            .collect(),
    ))
}

/// Gain of the analog terminal: conjugate beamformer with quantized phase
/// shifters.
pub fn analog_quantized_gain_db<T: Real>(geom: &ArrayGeometry<T>, direction: Vec3<T>, bits: u32) -> Result<T> {
    let a = steering_vector(geom, direction)?;
    let w = quantize_phases(&BeamWeights(a.clone()), bits)?;
    Ok(to_db(combiner_gain(&a, w.as_slice())))
}

/// Gain of a hybrid terminal with `n_rf` RF chains of quantized phase
/// shifters followed by a digital combiner.
///
/// This is a simple stand-in for a full hybrid design: RF columns are built
/// greedily (each quantizes the phases of the residual of the ideal steering
/// vector), and the digital stage is the least-squares fit of the ideal
/// steering vector onto their span. The least-squares fit is the orthogonal
/// projection, so the achieved gain is `‖P a‖²` and never falls below the
/// single-chain analog gain.
pub fn hybrid_quantized_gain_db<T: Real>(
    geom: &ArrayGeometry<T>,
    direction: Vec3<T>,
    bits: u32,
    n_rf: usize,
) -> Result<T> {
    if n_rf == 0 {
        return Err(Error::domain("hybrid_quantized_gain_db", "at least one RF chain required"));
    }
    let a = steering_vector(geom, direction)?;
    let mut basis: Vec<Vec<Complex<T>>> = Vec::with_capacity(n_rf);
    let mut residual = a.clone();
    for _ in 0..n_rf {
        let unit: Vec<Complex<T>> = residual
            .iter()
            .map(|z| Complex::from_polar(T::one(), z.arg()))
            .collect();
        let col = quantize_phases(&BeamWeights(unit), bits)?.0;
        // Gram-Schmidt against the columns already in the span.
        let mut q = col;
        for b in &basis {
            let c = inner(b, &q);
            for (qi, bi) in q.iter_mut().zip(b) {
                *qi -= bi * c;
            }
        }
        let n = norm_sqr(&q).sqrt();
        if n <= T::epsilon() * T::from_usize_lossy(a.len()) {
            continue;
        }
        q.iter_mut().for_each(|z| *z /= n);
        let c = inner(&q, &residual);
        for (ri, qi) in residual.iter_mut().zip(&q) {
            *ri -= qi * c;
        }
        basis.push(q);
    }
    let proj: T = basis.iter().map(|q| inner(q, &a).norm_sqr()).sum();
    Ok(to_db(proj))
}

/// Linear expected gain helper used by the link budget: aligned gain from the
/// closed forms.
pub fn aligned_gain_linear<T: Real>(antenna: &TerminalAntenna<T>, direction: Vec3<T>) -> Result<T> {
    antenna.aligned_gain_db(direction).map(from_db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    const LAMBDA: f64 = 0.026;

    fn dir(az: f64, el: f64) -> Vec3<f64> {
        Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }

    #[test]
    fn broadside_steering_is_all_ones() {
        let g = ArrayGeometry::upa(4, 3, LAMBDA).unwrap();
        let a = steering_vector(&g, Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert!(a.iter().all(|z| (z - Complex::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn half_wavelength_pair_along_x() {
        let g = ArrayGeometry::upa(2, 1, LAMBDA).unwrap();
        let a = steering_vector(&g, Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((a[0] - Complex::new(1.0, 0.0)).norm() < 1e-15);
        assert!((a[1] - Complex::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn steering_rejects_non_unit_direction() {
        let g = ArrayGeometry::upa(2, 2, LAMBDA).unwrap();
        assert!(steering_vector(&g, Vec3::new(0.0, 0.0, 1.1)).is_err());
    }

    #[test]
    fn upa_gain_values() {
        let g = |n, m| upa_max_gain_db(&ArrayGeometry::<f64>::upa(n, m, LAMBDA).unwrap());
        assert!((g(24, 24) - 27.60).abs() < 0.01);
        assert_eq!(g(1, 1), 0.0);
        assert!((g(2, 2) - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn upa_best_combiner_matches_max_gain_everywhere() {
        let ant = TerminalAntenna::upa(24, 24, LAMBDA).unwrap();
        let max = 10.0 * 576f64.log10();
        for i in 0..100 {
            let d = dir(i as f64 * 0.61, 0.05 + (i as f64 / 100.0) * 1.5);
            let c = best_combiner(&ant, d).unwrap();
            assert!((c.gain_db - max).abs() < 1e-9);
            assert!(c.weights.unwrap().is_constant_modulus(1e-12));
        }
    }

    #[test]
    fn metasurface_peak_at_zenith_and_horizon_error() {
        let ant = TerminalAntenna::metasurface(33.0, 1.2).unwrap();
        let c = best_combiner(&ant, Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(c.gain_db, 33.0);
        assert!(c.weights.is_none());
        let low = best_combiner(&ant, dir(0.0, 30f64.to_radians())).unwrap();
        assert!((low.gain_db - (33.0 - 12.0 * 2f64.log10())).abs() < 1e-12);
        assert!(best_combiner(&ant, dir(0.0, -0.1)).is_err());
        assert!(best_combiner(&ant, Vec3::new(1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn leaky_wave_small_alpha_approaches_upa() {
        let ant = TerminalAntenna::leaky_wave(24, 24, 1e-6, LAMBDA).unwrap();
        let c = best_combiner(&ant, dir(0.4, 0.9)).unwrap();
        assert!((c.gain_db - 27.6042).abs() < 1e-3, "{}", c.gain_db);
        let closed: f64 = leaky_wave_gain_db(24, 24, 1e-6).unwrap();
        assert!((closed - 27.6042).abs() < 1e-3);
    }

    #[test]
    fn leaky_wave_scan_matches_closed_form() {
        for alpha in [0.05, 0.1, 0.3] {
            let ant = TerminalAntenna::leaky_wave(24, 24, alpha, LAMBDA).unwrap();
            let closed = leaky_wave_gain_db(24, 24, alpha).unwrap();
            for d in [dir(0.3, 1.2), dir(2.0, 0.5), dir(-1.0, 0.2)] {
                let c = best_combiner(&ant, d).unwrap();
                assert!((c.gain_db - closed).abs() < 1e-6, "{} vs {closed}", c.gain_db);
            }
        }
    }

    #[test]
    fn leaky_wave_limits_and_monotonicity() {
        assert!(leaky_wave_gain_db(24, 24, 0.0).is_err());
        assert!(leaky_wave_gain_db(24, 24, 60.0_f64).unwrap().abs() < 1e-12);
        assert!(leaky_wave_threshold_db(60.0_f64).unwrap().abs() < 1e-12);
        let g24 = leaky_wave_gain_db(24, 24, 0.1).unwrap();
        let g12 = leaky_wave_gain_db(12, 12, 0.1).unwrap();
        let thr = leaky_wave_threshold_db(0.1).unwrap();
        assert!(g12 < g24 && g24 < thr);
    }

    #[test]
    fn leaky_threshold_strictly_decreasing() {
        // Finite-difference derivative of the threshold over a sweep.
        let h = 1e-6;
        let mut prev = f64::INFINITY;
        for i in 1..=100 {
            let a = i as f64 * 0.01;
            let t = leaky_wave_threshold_db(a).unwrap();
            let deriv = (leaky_wave_threshold_db(a + h).unwrap() - leaky_wave_threshold_db(a - h).unwrap()) / (2.0 * h);
            assert!(t < prev && deriv < 0.0);
            prev = t;
        }
    }

    proptest! {
        #[test]
        fn leaky_wave_never_exceeds_threshold(nx in 1usize..200, ny in 1usize..200, alpha in 0.001f64..3.0) {
            let g = leaky_wave_gain_db(nx, ny, alpha).unwrap();
            let t = leaky_wave_threshold_db(alpha).unwrap();
            prop_assert!(g <= t + 1e-9);
        }

        #[test]
        fn steering_entries_unit_modulus(az in -3.1f64..3.1, el in -1.5f64..1.5) {
            let g = ArrayGeometry::upa(5, 7, LAMBDA).unwrap();
            let a = steering_vector(&g, dir(az, el)).unwrap();
            prop_assert!(a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
            prop_assert!((inner(&a, &a).re - 35.0).abs() < 1e-9);
        }

        #[test]
        fn quantization_is_idempotent(bits in 1u32..8, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = BeamWeights((0..16).map(|_| Complex::from_polar(1.0, rng.gen_range(-3.2..3.2))).collect());
            let q1 = quantize_phases(&w, bits).unwrap();
            let q2 = quantize_phases(&q1, bits).unwrap();
            for (a, b) in q1.0.iter().zip(&q2.0) {
                prop_assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn one_bit_quantization_is_binary() {
        let w: BeamWeights<f64> = BeamWeights(vec![
            Complex::from_polar(1.0, 0.3),
            Complex::from_polar(1.0, 2.0),
            Complex::from_polar(1.0, -2.5),
        ]);
        let q = quantize_phases(&w, 1).unwrap();
        for z in &q.0 {
            assert!(z.im.abs() < 1e-12 && (z.re.abs() - 1.0).abs() < 1e-12);
        }
        assert!(q.is_constant_modulus(1e-12));
    }

    #[test]
    fn fine_quantization_is_lossless() {
        let g = ArrayGeometry::upa(24, 24, LAMBDA).unwrap();
        let d = dir(0.7, 0.8);
        let q = analog_quantized_gain_db(&g, d, 16).unwrap();
        assert!((q - 27.6042).abs() < 0.01);
    }

    #[test]
    fn hybrid_single_chain_equals_analog() {
        let g = ArrayGeometry::upa(8, 8, LAMBDA).unwrap();
        let d = dir(0.2, 0.7);
        for bits in 1..5 {
            let a = analog_quantized_gain_db(&g, d, bits).unwrap();
            let h = hybrid_quantized_gain_db(&g, d, bits, 1).unwrap();
            assert!((a - h).abs() < 1e-9);
            let h2 = hybrid_quantized_gain_db(&g, d, bits, 2).unwrap();
            assert!(h2 >= a - 1e-12);
        }
    }

    #[test]
    fn pointing_error_zero_is_exact_and_seeded() {
        let ant = TerminalAntenna::upa(12, 12, LAMBDA).unwrap();
        let d = dir(0.5, 1.0);
        let aligned = best_combiner(&ant, d).unwrap().gain_db;
        let s = gain_with_pointing_error(&ant, d, 0.0, 50, 3).unwrap();
        assert_eq!(s.min_db, aligned);
        assert_eq!(s.max_db, aligned);
        assert!((s.mean_db - aligned).abs() < 1e-9);
        let a = gain_with_pointing_error(&ant, d, 3.0, 200, 9).unwrap();
        let b = gain_with_pointing_error(&ant, d, 3.0, 200, 9).unwrap();
        assert_eq!(a, b);
        assert!(gain_with_pointing_error(&ant, d, 3.0, 0, 9).is_err());
    }

    #[test]
    fn pointing_error_mean_non_increasing() {
        let ant = TerminalAntenna::upa(24, 24, LAMBDA).unwrap();
        let d = Vec3::new(0.0, 0.0, 1.0);
        let mut prev = f64::INFINITY;
        for i in 0..=16 {
            let s = gain_with_pointing_error(&ant, d, i as f64 * 0.5, 400, 11).unwrap();
            assert!(s.mean_db <= prev + 1e-9, "error {}: {} > {}", i as f64 * 0.5, s.mean_db, prev);
            assert!(s.min_db <= s.mean_db && s.mean_db <= s.max_db);
            prev = s.mean_db;
        }
    }

    #[test]
    fn cap_samples_stay_in_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let axis = dir(1.0, 0.6);
        let half = 5f64.to_radians();
        for _ in 0..1000 {
            let d = sample_cap(&mut rng, axis, half);
            assert!((d.norm() - 1.0).abs() < 1e-12);
            assert!(d.dot(axis) >= half.cos() - 1e-12);
        }
    }
}
