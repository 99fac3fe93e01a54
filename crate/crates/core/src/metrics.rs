//! Received power, interference, SINR and spectral efficiency.
//!
//! Interference from the other beams of the same satellite is assembled by
//! summing their transmit gains in linear power and feeding the sum through
//! the serving link budget in place of `G_TX`.

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::antennas::{best_combiner, inner, norm_sqr, steering_vector, ArrayGeometry, TerminalAntenna};
use crate::channel::{complex_normal_vector, LinkBudget, RicianChannel};
use crate::error::{Error, Result};
use crate::num::{from_db, to_db, Real, Vec3};

/// Received power for unit-norm precoder and combiner, i.e. per watt
/// transmitted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rss<T> {
    pub watts: T,
    pub dbw: T,
}

fn check_len(op: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension { op, expected, found });
    }
    Ok(())
}

fn unit_norm<T: Real>(op: &'static str, v: &[Complex<T>]) -> Result<T> {
    let n = norm_sqr(v);
    if !(n > T::zero() && n.is_finite()) {
        return Err(Error::domain(op, "weights must be non-zero and finite"));
    }
    Ok(n)
}

/// `|w^H H f|² / (‖w‖²‖f‖²)` via the full matrix product.
pub fn rss<T: Real>(channel: &RicianChannel<T>, f: &[Complex<T>], w: &[Complex<T>]) -> Result<Rss<T>> {
    check_len("rss", channel.n_sat, f.len())?;
    check_len("rss", channel.n_ut, w.len())?;
    let nf = unit_norm("rss", f)?;
    let nw = unit_norm("rss", w)?;
    let mut acc = Complex::new(T::zero(), T::zero());
    for (i, wi) in w.iter().enumerate() {
        let row = &channel.h_matrix[i * channel.n_sat..(i + 1) * channel.n_sat];
        let hf: Complex<T> = row.iter().zip(f).map(|(h, x)| h * x).sum();
        acc += wi.conj() * hf;
    }
    let watts = acc.norm_sqr() / (nf * nw);
    Ok(Rss {
        watts,
        dbw: to_db(watts),
    })
}

/// Same quantity from the rank-one factors:
/// `|γ|² · |w^H(a_u + a_R/√K)|²/‖w‖² · |a_sat^H f|²/‖f‖²`.
pub fn rss_factorized<T: Real>(channel: &RicianChannel<T>, f: &[Complex<T>], w: &[Complex<T>]) -> Result<Rss<T>> {
    check_len("rss_factorized", channel.n_sat, f.len())?;
    check_len("rss_factorized", channel.n_ut, w.len())?;
    let nf = unit_norm("rss_factorized", f)?;
    let nw = unit_norm("rss_factorized", w)?;
    let g_rx = inner(w, &channel.ut_factor()).norm_sqr() / nw;
    let g_tx = inner(&channel.sat_steering, f).norm_sqr() / nf;
    let watts = channel.gamma.norm_sqr() * g_rx * g_tx;
    Ok(Rss {
        watts,
        dbw: to_db(watts),
    })
}

/// `E[max_w |<a_u + a_R/√K, w>|²/‖w‖²]` with `a_R ~ CN(0, I)`: the best
/// combiner gain plus `1/K`.
pub fn expected_receive_gain<T: Real>(antenna: &TerminalAntenna<T>, direction: Vec3<T>, k_factor: T) -> Result<T> {
    if !(k_factor > T::zero()) {
        return Err(Error::domain("expected_receive_gain", "Rician factor must be positive"));
    }
    let best = best_combiner(antenna, direction)?;
    Ok(from_db(best.gain_db) + k_factor.recip())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonteCarloGain<T> {
    pub mean: T,
    pub std_error: T,
}

/// Sample estimate of the expected receive gain of a UPA terminal with the
/// line-of-sight matched combiner.
pub fn expected_receive_gain_monte_carlo<T: Real>(
    geom: &ArrayGeometry<T>,
    direction: Vec3<T>,
    k_factor: T,
    n_draws: usize,
    seed: u64,
) -> Result<MonteCarloGain<T>> {
    if !(k_factor > T::zero()) {
        return Err(Error::domain("expected_receive_gain_monte_carlo", "Rician factor must be positive"));
    }
    if n_draws < 2 {
        return Err(Error::domain("expected_receive_gain_monte_carlo", "need at least two draws"));
    }
    let a = steering_vector(geom, direction)?;
    let nw = norm_sqr(&a);
    let s = k_factor.sqrt().recip();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = T::zero();
    let mut sum_sq = T::zero();
    for _ in 0..n_draws {
        let r = complex_normal_vector::<T, _>(&mut rng, a.len());
        let h: Vec<Complex<T>> = a.iter().zip(&r).map(|(x, y)| x + y * s).collect();
        let g = inner(&h, &a).norm_sqr() / nw;
        sum += g;
        sum_sq += g * g;
    }
    let n = T::from_usize_lossy(n_draws);
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(T::zero()) * n / (n - T::one());
    Ok(MonteCarloGain {
        mean,
        std_error: (var / n).sqrt(),
    })
}

/// Interference power received from every beam except `selected`, in dBW.
/// A single-beam codebook yields `-inf`.
pub fn interference_dbw<T: Real>(budget: &LinkBudget<T>, beam_gains_db: &[T], selected: usize) -> Result<T> {
    if beam_gains_db.is_empty() {
        return Err(Error::domain("interference_dbw", "no beams"));
    }
    if selected >= beam_gains_db.len() {
        return Err(Error::domain("interference_dbw", "selected beam out of range"));
    }
    let sum: T = beam_gains_db
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != selected)
        .map(|(_, &g)| from_db(g))
        .sum();
    if sum > T::zero() {
        Ok(budget.with_g_tx(to_db(sum)).rss_dbw())
    } else {
        Ok(T::neg_infinity())
    }
}

/// `RSS/(I + σ²)` in linear units.
pub fn sinr<T: Real>(rss_w: T, interference_w: T, noise_w: T) -> Result<T> {
    if !(noise_w > T::zero()) {
        return Err(Error::domain("sinr", "noise power must be positive"));
    }
    if interference_w < T::zero() || rss_w < T::zero() {
        return Err(Error::domain("sinr", "powers must be non-negative"));
    }
    Ok(rss_w / (interference_w + noise_w))
}

/// Signal-to-interference ratio with the noise removed.
pub fn sir<T: Real>(rss_w: T, interference_w: T) -> T {
    rss_w / interference_w
}

/// `log2(1 + ratio)` in bit/s/Hz.
pub fn spectral_efficiency<T: Real>(ratio: T) -> Result<T> {
    if !(ratio >= T::zero()) {
        return Err(Error::domain("spectral_efficiency", "ratio must be non-negative"));
    }
    Ok(ratio.ln_1p() / T::LN_2())
}

pub fn throughput_bps<T: Real>(bandwidth_hz: T, ratio: T) -> Result<T> {
    Ok(bandwidth_hz * spectral_efficiency(ratio)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMetrics<T> {
    pub rss_dbw: T,
    pub snr_db: T,
    pub interference_dbw: T,
    pub sinr_db: T,
    pub se_no_interf_bps_hz: T,
    pub se_interf_bps_hz: T,
    pub throughput_no_interf_bps: T,
    pub throughput_interf_bps: T,
}

impl<T: Real> PointMetrics<T> {
    /// Metrics for serving beam `selected`. `budget.g_tx_db` is replaced by
    /// that beam's gain.
    pub fn evaluate(budget: &LinkBudget<T>, beam_gains_db: &[T], selected: usize) -> Result<Self> {
        let interference_dbw = interference_dbw(budget, beam_gains_db, selected)?;
        let serving = budget.with_g_tx(beam_gains_db[selected]);
        let rss_dbw = serving.rss_dbw();
        let noise_dbw = serving.noise_dbw()?;
        let (s, i, n) = (from_db(rss_dbw), from_db(interference_dbw), from_db(noise_dbw));
        let snr = s / n;
        let sinr_lin = sinr(s, i, n)?;
        let snr_db = rss_dbw - noise_dbw;
        // Exact equality with SNR when nothing interferes.
        let sinr_db = if i > T::zero() { to_db(sinr_lin) } else { snr_db };
        let bw = budget.bandwidth_hz;
        Ok(Self {
            rss_dbw,
            snr_db,
            interference_dbw,
            sinr_db,
            se_no_interf_bps_hz: spectral_efficiency(snr)?,
            se_interf_bps_hz: spectral_efficiency(sinr_lin)?,
            throughput_no_interf_bps: throughput_bps(bw, snr)?,
            throughput_interf_bps: throughput_bps(bw, sinr_lin)?,
        })
    }
}

/// Digital precoder carried with identity structure: row `m` feeds only RF
/// chain `m`, scaled to the per-chain power `p_rf_w`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasebandPrecoder<T> {
    pub n_rf: usize,
    /// Row-major `n_rf × n_rf`.
    pub matrix: Vec<Complex<T>>,
}

impl<T: Real> BasebandPrecoder<T> {
    pub fn identity(n_rf: usize, p_rf_w: T) -> Result<Self> {
        if n_rf == 0 || !(p_rf_w > T::zero()) {
            return Err(Error::domain("BasebandPrecoder", "need at least one chain and positive power"));
        }
        let s = p_rf_w.sqrt();
        let mut matrix = vec![Complex::new(T::zero(), T::zero()); n_rf * n_rf];
        for m in 0..n_rf {
            matrix[m * n_rf + m] = Complex::new(s, T::zero());
        }
        Ok(Self { n_rf, matrix })
    }

    /// `‖[F_BB]_{m,:}‖² ≤ p_rf_w` for every row, with relative slack `tol`.
    pub fn satisfies_power(&self, p_rf_w: T, tol: T) -> bool {
        self.matrix
            .chunks(self.n_rf)
            .all(|row| norm_sqr(row) <= p_rf_w * (T::one() + tol))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_channel, SPEED_OF_LIGHT_MPS};
    use crate::geo_orbit::{EarthModel, SatelliteState, EARTH_MU_M3S2};
    use proptest::prelude::*;

    fn budget() -> LinkBudget<f64> {
        LinkBudget {
            p_tx_dbw: 15.0,
            lp_cable_db: 0.0,
            g_tx_db: 24.59,
            lp_at_db: 0.017,
            lp_fs_db: 175.9,
            g_rx_db: 27.6,
            noise_temp_dbk: 24.1,
            bandwidth_hz: 250e6,
        }
    }

    /// Channel, UT array, satellite array, departure and arrival directions.
    type Fixture = (RicianChannel<f64>, ArrayGeometry<f64>, ArrayGeometry<f64>, Vec3<f64>, Vec3<f64>);

    fn small_channel(k: f64, seed: u64) -> Fixture {
        let e = EarthModel::new(6_371_000.0, EARTH_MU_M3S2).unwrap();
        let sat = SatelliteState::circular(&e, 1_300_000.0, 0.9, 0.7).unwrap();
        let frame = sat.frame().unwrap();
        let user = frame.stereo_to_sphere([90_000.0, 40_000.0], &e);
        let lambda = SPEED_OF_LIGHT_MPS / 11.45e9;
        let ut = ArrayGeometry::upa(4, 4, lambda).unwrap();
        let sa = ArrayGeometry::upa(8, 8, lambda).unwrap();
        let ch = build_channel(&sat, user, &ut, &sa, Complex::new(1e-3, 2e-4), k, seed).unwrap();
        let d = (user - sat.position_m).normalized().unwrap();
        let d_sat = frame.array_basis().to_local(d);
        let d_ut = crate::channel::local_frame(user).unwrap().to_local(d);
        (ch, ut, sa, d_sat, d_ut)
    }

    #[test]
    fn factorization_matches_full_product() {
        for seed in 0..5 {
            let (ch, ut, sa, d_sat, d_ut) = small_channel(10.0, seed);
            let f = steering_vector(&sa, d_sat).unwrap();
            let w = steering_vector(&ut, d_ut).unwrap();
            let full = rss(&ch, &f, &w).unwrap().watts;
            let fact = rss_factorized(&ch, &f, &w).unwrap().watts;
            assert!((full - fact).abs() / fact < 1e-12, "{full} {fact}");
            // Arbitrary (non-matched) weights as well.
            let f2: Vec<_> = (0..64).map(|i| Complex::from_polar(1.0, 0.37 * i as f64)).collect();
            let w2: Vec<_> = (0..16).map(|i| Complex::new(1.0 + i as f64, -0.5)).collect();
            let a = rss(&ch, &f2, &w2).unwrap().watts;
            let b = rss_factorized(&ch, &f2, &w2).unwrap().watts;
            assert!((a - b).abs() / b < 1e-12);
        }
    }

    #[test]
    fn matched_filter_strong_los() {
        let (ch, ut, sa, d_sat, d_ut) = small_channel(1e14, 1);
        let f = steering_vector(&sa, d_sat).unwrap();
        let w = steering_vector(&ut, d_ut).unwrap();
        let r = rss(&ch, &f, &w).unwrap();
        let expected = ch.gamma.norm_sqr() * 64.0 * 16.0;
        assert!((r.watts - expected).abs() / expected < 1e-6);
    }

    #[test]
    fn orthogonal_combiner_gives_zero() {
        let (ch, ut, _, d_sat, d_ut) = small_channel(1e30, 1);
        let a = steering_vector(&ut, d_ut).unwrap();
        // Orthogonalize a fixed vector against a.
        let mut w: Vec<_> = (0..16).map(|i| Complex::new((i % 3) as f64, 1.0)).collect();
        let c = inner(&a, &w) / norm_sqr(&a);
        for (wi, ai) in w.iter_mut().zip(&a) {
            *wi -= ai * c;
        }
        let f = ch.sat_steering.clone();
        let _ = d_sat;
        let r = rss(&ch, &f, &w).unwrap();
        assert!(r.watts < 1e-20 * ch.gamma.norm_sqr() * 64.0 * 16.0);
    }

    #[test]
    fn rss_dimension_errors() {
        let (ch, _, _, _, _) = small_channel(10.0, 0);
        let f = vec![Complex::new(1.0, 0.0); 63];
        let w = vec![Complex::new(1.0, 0.0); 16];
        assert!(matches!(rss(&ch, &f, &w), Err(Error::Dimension { .. })));
        let f = vec![Complex::new(0.0, 0.0); 64];
        assert!(rss(&ch, &f, &w).is_err());
    }

    #[test]
    fn expected_gain_closed_form() {
        let ant: TerminalAntenna<f64> = TerminalAntenna::upa(24, 24, 0.026).unwrap();
        let zenith = Vec3::new(0.0, 0.0, 1.0);
        let g = expected_receive_gain(&ant, zenith, 10.0).unwrap();
        assert!((g - 576.1).abs() < 1e-9);
        let big = expected_receive_gain(&ant, zenith, 1e15).unwrap();
        assert!((big - 576.0).abs() < 1e-9);
        assert!(expected_receive_gain(&ant, zenith, 0.0).is_err());
    }

    #[test]
    fn expected_gain_monte_carlo_within_three_sigma() {
        let geom = ArrayGeometry::upa(6, 6, 0.026).unwrap();
        let ant = TerminalAntenna::upa(6, 6, 0.026).unwrap();
        let d = Vec3::new(0.3, -0.2, (1.0f64 - 0.13).sqrt());
        for k in [1.0, 10.0] {
            let mc = expected_receive_gain_monte_carlo(&geom, d, k, 10_000, 4).unwrap();
            let closed = expected_receive_gain(&ant, d, k).unwrap();
            assert!((mc.mean - closed).abs() <= 3.0 * mc.std_error, "{mc:?} {closed}");
        }
    }

    #[test]
    fn interference_corner_ceilings() {
        let b = budget();
        assert_eq!(interference_dbw(&b, &[20.0], 0).unwrap(), f64::NEG_INFINITY);
        assert!(interference_dbw(&b, &[], 0).is_err());
        assert!(interference_dbw(&b, &[1.0], 1).is_err());
        let rss_w = from_db(b.with_g_tx(20.0).rss_dbw());
        let i4 = from_db(interference_dbw(&b, &[20.0; 4], 0).unwrap());
        assert!((to_db(sir(rss_w, i4)) + 4.771).abs() < 1e-3);
        let i3 = from_db(interference_dbw(&b, &[20.0; 3], 2).unwrap());
        assert!((to_db(sir(rss_w, i3)) + 3.010).abs() < 1e-3);
    }

    #[test]
    fn sinr_limits() {
        assert_eq!(sinr(2.0, 0.0, 0.5).unwrap(), 4.0);
        assert!(sinr(2.0, 1e30, 0.5).unwrap() < 1e-29);
        assert!((to_db(sinr(1.0_f64, 1.0, 1e-12).unwrap())).abs() < 1e-9);
        assert!(sinr(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn spectral_efficiency_values() {
        assert_eq!(spectral_efficiency(0.0).unwrap(), 0.0);
        assert!((spectral_efficiency(1.0_f64).unwrap() - 1.0).abs() < 1e-15);
        assert!((spectral_efficiency(3.0_f64).unwrap() - 2.0).abs() < 1e-15);
        assert!(spectral_efficiency(-0.1).is_err());
        assert!((throughput_bps(250e6_f64, 3.0).unwrap() - 500e6).abs() < 1e-3);
    }

    #[test]
    fn point_metrics_consistency() {
        let b = budget();
        let gains = [24.0, 18.0, 10.0, 3.0];
        let m = PointMetrics::evaluate(&b, &gains, 0).unwrap();
        assert!((m.rss_dbw - b.with_g_tx(24.0).rss_dbw()).abs() < 1e-12);
        assert!(m.sinr_db <= m.snr_db);
        assert!(m.se_interf_bps_hz <= m.se_no_interf_bps_hz);
        assert!((m.throughput_interf_bps - 250e6 * m.se_interf_bps_hz).abs() < 1e-3);
        let single = PointMetrics::evaluate(&b, &[24.0], 0).unwrap();
        assert_eq!(single.sinr_db, single.snr_db);
    }

    #[test]
    fn baseband_identity_power() {
        let p = BasebandPrecoder::identity(15, 31.6).unwrap();
        assert!(p.satisfies_power(31.6, 1e-12));
        assert!(!p.satisfies_power(30.0, 1e-12));
        assert!(BasebandPrecoder::<f64>::identity(0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn se_monotone(a in 0.0..1e4f64, b in 0.0..1e4f64) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(spectral_efficiency(lo).unwrap() <= spectral_efficiency(hi).unwrap());
        }

        #[test]
        fn sinr_never_exceeds_snr(g in proptest::collection::vec(-10.0..25.0f64, 1..16), sel in 0usize..16) {
            let sel = sel % g.len();
            let m = PointMetrics::evaluate(&budget(), &g, sel).unwrap();
            prop_assert!(m.sinr_db <= m.snr_db);
        }
    }
}
