//! Experiment drivers: coverage and cell maps, axis cuts, Doppler fields,
//! beam-switching timeline and terminal-antenna sweeps, plus their CSV/JSON
//! writers.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde_json::json;

use crate::antennas::{
    analog_quantized_gain_db, gain_with_pointing_error, hybrid_quantized_gain_db, leaky_wave_gain_db,
    leaky_wave_threshold_db, ArrayGeometry, TerminalAntenna,
};
use crate::channel::{
    atmospheric_loss_db, doppler_and_angular_speed, free_space_loss_db, local_frame, max_doppler_hz,
    user_doppler, AtmosphereProfile, LinkBudget, MaxDoppler, UserDoppler,
};
use crate::codebook::{
    build_codebook, corner_points, find_oversampling, grid_axis, tile_cells, CellMap, CornerPoint,
    HybridArchitecture, OversamplingSearch, SubarrayCodebook,
};
use crate::config::{AtmosphereMode, RunConfig};
use crate::error::{Error, Result};
use crate::geo_orbit::{
    orbital_speed, propagate_circular, ConstellationGeometry, EarthModel, RoiEllipse, SatelliteState,
    StereoFrame,
};
use crate::metrics::PointMetrics;
use crate::num::{derive_seed, from_db, to_db, Vec3};

/// Everything derived from a configuration that every driver needs.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: RunConfig,
    pub earth: EarthModel<f64>,
    pub geometry: ConstellationGeometry<f64>,
    pub roi: RoiEllipse<f64>,
    pub arch: HybridArchitecture,
    pub sat: SatelliteState<f64>,
    pub frame: StereoFrame<f64>,
    pub codebook: SubarrayCodebook<f64>,
    pub terminal: TerminalAntenna<f64>,
    /// Zenith gaseous absorption; slant values scale with `1/sin(el)`.
    pub zenith_absorption_db: Option<f64>,
    pub oversampling_search: Option<OversamplingSearch<f64>>,
}

impl Scenario {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let earth = config.earth()?;
        let geometry = config.geometry()?;
        let roi = config.roi()?;
        let arch = config.arch()?;
        let sat = SatelliteState::circular(&earth, geometry.altitude_m, geometry.inclination_rad, 0.0)?;
        let frame = sat.frame()?;
        let cb = &config.codebook;
        let (oversampling, search) = if cb.auto_oversampling {
            let s = find_oversampling(&arch, &roi, &sat, &earth, cb.o_min, cb.o_max, cb.o_step)?;
            (s.oversampling, Some(s))
        } else {
            (cb.oversampling, None)
        };
        let codebook = build_codebook(&arch, oversampling, &roi, &sat, &earth)?;
        if codebook.is_empty() {
            return Err(Error::config("codebook.oversampling", "no beam points into the region of interest"));
        }
        let zenith_absorption_db = match config.atmosphere.mode {
            AtmosphereMode::Constant => None,
            AtmosphereMode::Computed => {
                let profile = AtmosphereProfile::standard_1976(config.atmosphere.water_vapor_gm3);
                let loss = atmospheric_loss_db(&profile, config.freq_hz(), std::f64::consts::FRAC_PI_2, 0.0)?;
                Some(loss.total_db())
            }
        };
        Ok(Self {
            config: config.clone(),
            earth,
            geometry,
            roi,
            arch,
            sat,
            frame,
            codebook,
            terminal: config.terminal()?,
            zenith_absorption_db,
            oversampling_search: search,
        })
    }

    /// Geometry of the link from `sat` to the ground point `user`.
    pub fn link_geometry(&self, sat: &SatelliteState<f64>, frame: &StereoFrame<f64>, user: Vec3<f64>) -> Result<LinkGeometry> {
        let los = user - sat.position_m;
        let distance_m = los.norm();
        let d = los
            .normalized()
            .ok_or_else(|| Error::domain("link_geometry", "user and satellite coincide"))?;
        let up = local_frame(user)?.to_local(-d);
        Ok(LinkGeometry {
            sat_direction: frame.array_basis().to_local(d),
            user_direction: up,
            distance_m,
            elevation_rad: up.z.clamp(-1.0, 1.0).asin(),
        })
    }

    /// Budget for `geom` with `g_tx_db = 0`; the beam gain is substituted
    /// per beam.
    pub fn budget(&self, geom: &LinkGeometry) -> Result<LinkBudget<f64>> {
        let c = &self.config;
        let lp_at_db = match self.zenith_absorption_db {
            None => c.atmosphere.lp_at_db,
            Some(z) => {
                if geom.elevation_rad <= 0.0 {
                    return Err(Error::domain("budget", "satellite below the horizon"));
                }
                z / geom.elevation_rad.sin()
            }
        };
        let aligned_db = match (&self.terminal, c.ut.phase_bits) {
            (TerminalAntenna::Upa { geometry }, bits) if bits > 0 => {
                analog_quantized_gain_db(geometry, geom.user_direction, bits)?
            }
            (t, _) => t.aligned_gain_db(geom.user_direction)?,
        };
        let g_rx = from_db(aligned_db) + c.link.k_factor.recip();
        Ok(LinkBudget {
            p_tx_dbw: c.link.p_tx_dbw,
            lp_cable_db: c.link.lp_cable_db,
            g_tx_db: 0.0,
            lp_at_db,
            lp_fs_db: free_space_loss_db(geom.distance_m, c.freq_hz())?,
            g_rx_db: to_db(g_rx),
            noise_temp_dbk: c.link.noise_temp_dbk,
            bandwidth_hz: c.bandwidth_hz(),
        })
    }

    /// Full evaluation at stereographic point `xy` for the reference
    /// satellite state.
    pub fn evaluate_point(&self, xy: [f64; 2]) -> Result<CoveragePoint> {
        let user = self.frame.stereo_to_sphere(xy, &self.earth);
        let geom = self.link_geometry(&self.sat, &self.frame, user)?;
        let budget = self.budget(&geom)?;
        let gains = self.codebook.gains(geom.sat_direction);
        CoveragePoint::from_gains(&budget, &gains)
    }

    pub fn v_sat_mps(&self) -> f64 {
        orbital_speed(&self.earth, self.geometry.altitude_m)
            .map(|k| k.speed_mps)
            .unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkGeometry {
    /// Satellite → user, satellite array frame.
    pub sat_direction: Vec3<f64>,
    /// User → satellite, terminal local frame.
    pub user_direction: Vec3<f64>,
    pub distance_m: f64,
    pub elevation_rad: f64,
}

// ---------------------------------------------------------------------------
// Coverage

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoveragePoint {
    pub best_beam: usize,
    pub g_tx_db: f64,
    pub metrics: PointMetrics<f64>,
    /// Noise-free signal-to-interference ratio.
    pub sir_db: f64,
    /// Four largest beam gains, descending; `-inf` padded.
    pub top_gains_db: [f64; 4],
}

impl CoveragePoint {
    /// Best beam by transmit gain (lowest index on ties).
    pub fn from_gains(budget: &LinkBudget<f64>, gains_lin: &[f64]) -> Result<Self> {
        if gains_lin.is_empty() {
            return Err(Error::domain("CoveragePoint", "no beams"));
        }
        let mut best = 0;
        for (i, &g) in gains_lin.iter().enumerate() {
            if g > gains_lin[best] {
                best = i;
            }
        }
        let gains_db: Vec<f64> = gains_lin.iter().map(|&g| to_db(g)).collect();
        let metrics = PointMetrics::evaluate(budget, &gains_db, best)?;
        let others: f64 = gains_lin.iter().enumerate().filter(|&(i, _)| i != best).map(|(_, g)| g).sum();
        let mut sorted = gains_db.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut top = [f64::NEG_INFINITY; 4];
        for (t, g) in top.iter_mut().zip(&sorted) {
            *t = *g;
        }
        Ok(Self {
            best_beam: best,
            g_tx_db: gains_db[best],
            metrics,
            sir_db: if others > 0.0 {
                to_db(gains_lin[best] / others)
            } else {
                f64::INFINITY
            },
            top_gains_db: top,
        })
    }
}

/// Per-point metrics over the ROI bounding box, row-major with `y` outer.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageGrid {
    pub xs_m: Vec<f64>,
    pub ys_m: Vec<f64>,
    pub points: Vec<Option<CoveragePoint>>,
}

impl CoverageGrid {
    pub fn at(&self, ix: usize, iy: usize) -> Option<&CoveragePoint> {
        self.points[iy * self.xs_m.len() + ix].as_ref()
    }

    pub fn in_roi(&self) -> impl Iterator<Item = ([f64; 2], &CoveragePoint)> {
        let nx = self.xs_m.len();
        self.points
            .iter()
            .enumerate()
            .filter_map(move |(i, p)| p.as_ref().map(|p| ([self.xs_m[i % nx], self.ys_m[i / nx]], p)))
    }
}

pub fn run_coverage(scn: &Scenario, resolution: usize) -> Result<CoverageGrid> {
    let xs = grid_axis(scn.roi.semi_x_m, resolution);
    let ys = grid_axis(scn.roi.semi_y_m, resolution);
    let rows: Vec<Result<Vec<Option<CoveragePoint>>>> = ys
        .par_iter()
        .map(|&y| {
            xs.iter()
                .map(|&x| {
                    if scn.roi.contains([x, y]) {
                        scn.evaluate_point([x, y]).map(Some)
                    } else {
                        Ok(None)
                    }
                })
                .collect()
        })
        .collect();
    let mut points = Vec::with_capacity(xs.len() * ys.len());
    for r in rows {
        points.extend(r?);
    }
    Ok(CoverageGrid {
        xs_m: xs,
        ys_m: ys,
        points,
    })
}

pub fn run_cells(scn: &Scenario, resolution: usize) -> Result<CellMap<f64>> {
    tile_cells(&scn.codebook, &scn.roi, &scn.sat, &scn.earth, resolution)
}

/// Noise-free SIR at every interior meeting point of four cells.
pub fn corner_sir(scn: &Scenario) -> Result<Vec<(CornerPoint<f64>, CoveragePoint)>> {
    corner_points(&scn.codebook, &scn.roi, &scn.sat, &scn.earth)?
        .into_iter()
        .map(|c| Ok((c, scn.evaluate_point(c.xy_m)?)))
        .collect()
}

// ---------------------------------------------------------------------------
// Axis cuts

/// Envelope of SNR across one axis: for every coordinate along the cut, the
/// extreme SNR over the other axis. `NaN` where no in-ROI point exists.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisCut {
    pub coord_m: Vec<f64>,
    pub max_snr_db: Vec<f64>,
    pub min_snr_db: Vec<f64>,
    /// Index on the other axis where the maximum occurs.
    pub argmax_line: Vec<Option<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AxisCuts {
    pub along_x: AxisCut,
    pub along_y: AxisCut,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

fn cut(grid: &CoverageGrid, axis: Axis) -> AxisCut {
    let (nx, ny) = (grid.xs_m.len(), grid.ys_m.len());
    let (n_along, n_across) = match axis {
        Axis::X => (nx, ny),
        Axis::Y => (ny, nx),
    };
    let mut out = AxisCut {
        coord_m: match axis {
            Axis::X => grid.xs_m.clone(),
            Axis::Y => grid.ys_m.clone(),
        },
        max_snr_db: vec![f64::NAN; n_along],
        min_snr_db: vec![f64::NAN; n_along],
        argmax_line: vec![None; n_along],
    };
    for a in 0..n_along {
        for b in 0..n_across {
            let (ix, iy) = match axis {
                Axis::X => (a, b),
                Axis::Y => (b, a),
            };
            if let Some(p) = grid.at(ix, iy) {
                let s = p.metrics.snr_db;
                if out.argmax_line[a].is_none() || s > out.max_snr_db[a] {
                    out.max_snr_db[a] = s;
                    out.argmax_line[a] = Some(b);
                }
                if out.min_snr_db[a].is_nan() || s < out.min_snr_db[a] {
                    out.min_snr_db[a] = s;
                }
            }
        }
    }
    out
}

pub fn run_axis_cuts(grid: &CoverageGrid) -> Result<AxisCuts> {
    if grid.points.iter().all(Option::is_none) {
        return Err(Error::domain("run_axis_cuts", "grid has no in-region points"));
    }
    Ok(AxisCuts {
        along_x: cut(grid, Axis::X),
        along_y: cut(grid, Axis::Y),
    })
}

/// Peak-to-trough SNR along the central line of `axis`, restricted to the
/// span between the outermost beam-axis ground points so the ROI boundary
/// roll-off is excluded.
pub fn central_ripple_db(grid: &CoverageGrid, codebook: &SubarrayCodebook<f64>, axis: Axis) -> Result<f64> {
    let (along, across, k) = match axis {
        Axis::X => (&grid.xs_m, &grid.ys_m, 0),
        Axis::Y => (&grid.ys_m, &grid.xs_m, 1),
    };
    if along.is_empty() || codebook.is_empty() {
        return Err(Error::domain("central_ripple_db", "empty grid or codebook"));
    }
    let centre = (0..across.len())
        .min_by(|&a, &b| across[a].abs().total_cmp(&across[b].abs()))
        .expect("non-empty axis");
    let lo = codebook.ground_xy_m.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
    let hi = codebook.ground_xy_m.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-6 * (hi - lo).abs().max(1.0);
    let snr: Vec<f64> = (0..along.len())
        .filter(|&a| along[a] >= lo - tol && along[a] <= hi + tol)
        .filter_map(|a| {
            let (ix, iy) = match axis {
                Axis::X => (a, centre),
                Axis::Y => (centre, a),
            };
            grid.at(ix, iy).map(|p| p.metrics.snr_db)
        })
        .collect();
    if snr.len() < 2 {
        return Err(Error::domain("central_ripple_db", "fewer than two samples between beam axes"));
    }
    let max = snr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = snr.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

// ---------------------------------------------------------------------------
// Doppler

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DopplerPoint {
    pub doppler_hz: f64,
    pub w_rel_rad_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DopplerMaps {
    pub xs_m: Vec<f64>,
    pub ys_m: Vec<f64>,
    pub points: Vec<Option<DopplerPoint>>,
    pub closed_form: MaxDoppler<f64>,
    pub user: UserDoppler<f64>,
}

impl DopplerMaps {
    pub fn max_abs_doppler_hz(&self) -> f64 {
        self.points.iter().flatten().map(|p| p.doppler_hz.abs()).fold(0.0, f64::max)
    }

    pub fn max_w_rel_rad_s(&self) -> f64 {
        self.points.iter().flatten().map(|p| p.w_rel_rad_s).fold(0.0, f64::max)
    }
}

pub fn run_doppler_maps(scn: &Scenario, resolution: usize) -> Result<DopplerMaps> {
    let f = scn.config.freq_hz();
    let xs = grid_axis(scn.roi.semi_x_m, resolution);
    let ys = grid_axis(scn.roi.semi_y_m, resolution);
    let rows: Vec<Result<Vec<Option<DopplerPoint>>>> = ys
        .par_iter()
        .map(|&y| {
            xs.iter()
                .map(|&x| {
                    if !scn.roi.contains([x, y]) {
                        return Ok(None);
                    }
                    let user = scn.frame.stereo_to_sphere([x, y], &scn.earth);
                    let s = doppler_and_angular_speed(&scn.sat, user, f)?;
                    Ok(Some(DopplerPoint {
                        doppler_hz: s.doppler_hz,
                        w_rel_rad_s: s.w_rel_rad_s,
                    }))
                })
                .collect()
        })
        .collect();
    let mut points = Vec::with_capacity(xs.len() * ys.len());
    for r in rows {
        points.extend(r?);
    }
    let c = &scn.config;
    Ok(DopplerMaps {
        xs_m: xs,
        ys_m: ys,
        points,
        closed_form: max_doppler_hz(&scn.geometry, &scn.roi, &scn.earth, f)?,
        user: user_doppler(
            c.ut.speed_mps,
            f,
            c.sweeps.doppler_trials,
            derive_seed(c.seed, "doppler.user"),
        )?,
    })
}

// ---------------------------------------------------------------------------
// Timeline

#[derive(Clone, Debug, PartialEq)]
pub struct TimelineSample {
    pub t_s: f64,
    pub sat_position_m: Vec3<f64>,
    pub user_xy_m: [f64; 2],
    pub beam: usize,
    pub snr_db: f64,
    /// SNR through every beam, for post-hoc argmax checks.
    pub beam_snr_db: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwitchEvent {
    pub t_s: f64,
    pub from: usize,
    pub to: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimelineTrace {
    pub samples: Vec<TimelineSample>,
    pub switches: Vec<SwitchEvent>,
    /// First sample time at which the user was outside the moving ROI; the
    /// trace stops there.
    pub left_roi_at_s: Option<f64>,
}

impl TimelineTrace {
    /// Time from the start to the first beam switch.
    pub fn first_switch_s(&self) -> Option<f64> {
        self.switches.first().map(|s| s.t_s - self.samples[0].t_s)
    }

    /// Time a beam serves the user from hand-over to hand-over: between the
    /// first and second switch.
    pub fn full_dwell_s(&self) -> Option<f64> {
        match self.switches.as_slice() {
            [a, b, ..] => Some(b.t_s - a.t_s),
            _ => None,
        }
    }

    pub fn argmax_holds(&self) -> bool {
        self.samples
            .iter()
            .all(|s| s.beam_snr_db.iter().all(|&v| v <= s.beam_snr_db[s.beam]) && s.snr_db == s.beam_snr_db[s.beam])
    }
}

/// Fixed user at stereographic point `user_xy_m` of the initial frame; the
/// satellite moves, and at every step the user is served by the beam with
/// the highest SNR (expected receive gain, no fading draw).
pub fn run_timeline(scn: &Scenario, duration_s: f64, step_s: f64, user_xy_m: [f64; 2]) -> Result<TimelineTrace> {
    if !(step_s > 0.0) || !(duration_s >= 0.0) {
        return Err(Error::domain("run_timeline", "step must be positive and duration non-negative"));
    }
    if !scn.roi.contains(user_xy_m) {
        return Err(Error::domain("run_timeline", "user starts outside the region of interest"));
    }
    let user = scn.frame.stereo_to_sphere(user_xy_m, &scn.earth);
    let n = (duration_s / step_s + 1e-9).floor() as usize;
    let mut samples: Vec<TimelineSample> = Vec::new();
    let mut switches = Vec::new();
    let mut left = None;
    for i in 0..=n {
        let t = step_s * i as f64;
        let sat = propagate_circular(&scn.sat, t, &scn.earth);
        let frame = sat.frame()?;
        let xy = match frame.sphere_to_stereo(user, &scn.earth) {
            Some(xy) if scn.roi.contains(xy) => xy,
            _ => {
                left = Some(t);
                break;
            }
        };
        let geom = scn.link_geometry(&sat, &frame, user)?;
        let budget = scn.budget(&geom)?;
        let beam_snr_db: Vec<f64> = scn
            .codebook
            .gains(geom.sat_direction)
            .into_iter()
            .map(|g| budget.with_g_tx(to_db(g)).snr_db())
            .collect::<Result<_>>()?;
        let mut beam = 0;
        for (b, &s) in beam_snr_db.iter().enumerate() {
            if s > beam_snr_db[beam] {
                beam = b;
            }
        }
        if let Some(prev) = samples.last() {
            if prev.beam != beam {
                switches.push(SwitchEvent {
                    t_s: t,
                    from: prev.beam,
                    to: beam,
                });
            }
        }
        samples.push(TimelineSample {
            t_s: t,
            sat_position_m: sat.position_m,
            user_xy_m: xy,
            beam,
            snr_db: beam_snr_db[beam],
            beam_snr_db,
        });
    }
    Ok(TimelineTrace {
        samples,
        switches,
        left_roi_at_s: left,
    })
}

// ---------------------------------------------------------------------------
// Terminal sweeps

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub sweep: &'static str,
    pub param: f64,
    pub series: &'static str,
    pub value_db: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtSweeps {
    pub rows: Vec<SweepRow>,
}

impl UtSweeps {
    pub fn series(&self, sweep: &str, series: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.sweep == sweep && r.series == series)
            .map(|r| (r.param, r.value_db))
            .collect()
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Leakage, pointing-error and phase-resolution sweeps of the terminal
/// antennas.
pub fn run_ut_sweeps(config: &RunConfig) -> Result<UtSweeps> {
    config.validate()?;
    let u = &config.ut;
    let s = &config.sweeps;
    let lambda = config.wavelength_m();
    let mut rows = Vec::new();
    let upa_db = to_db((u.nx * u.ny) as f64);
    let (la, lb) = (s.alpha_min.ln(), s.alpha_max.ln());
    for x in linspace(la, lb, s.alpha_points) {
        let alpha = x.exp();
        rows.push(SweepRow { sweep: "alpha", param: alpha, series: "leaky_wave", value_db: leaky_wave_gain_db(u.nx, u.ny, alpha)? });
        rows.push(SweepRow { sweep: "alpha", param: alpha, series: "threshold", value_db: leaky_wave_threshold_db(alpha)? });
        rows.push(SweepRow { sweep: "alpha", param: alpha, series: "upa", value_db: upa_db });
    }

    let el = s.elevation_deg.to_radians();
    let dir = Vec3::new(el.cos(), 0.0, el.sin());
    let upa = TerminalAntenna::upa(u.nx, u.ny, lambda)?;
    let leaky = TerminalAntenna::leaky_wave(u.nx, u.ny, u.alpha, lambda)?;
    let seed = derive_seed(config.seed, "ut.pointing");
    for err in linspace(0.0, s.error_max_deg, s.error_points) {
        let g = gain_with_pointing_error(&upa, dir, err, s.error_trials, seed)?;
        rows.push(SweepRow { sweep: "error", param: err, series: "upa_mean", value_db: g.mean_db });
        rows.push(SweepRow { sweep: "error", param: err, series: "upa_min", value_db: g.min_db });
        rows.push(SweepRow { sweep: "error", param: err, series: "upa_max", value_db: g.max_db });
        let g = gain_with_pointing_error(&leaky, dir, err, s.error_trials, seed)?;
        rows.push(SweepRow { sweep: "error", param: err, series: "leaky_wave_mean", value_db: g.mean_db });
    }

    let geom = ArrayGeometry::upa(u.nx, u.ny, lambda)?;
    for bits in 1..=s.bits_max {
        rows.push(SweepRow {
            sweep: "bits",
            param: f64::from(bits),
            series: "analog",
            value_db: analog_quantized_gain_db(&geom, dir, bits)?,
        });
        rows.push(SweepRow {
            sweep: "bits",
            param: f64::from(bits),
            series: "hybrid",
            value_db: hybrid_quantized_gain_db(&geom, dir, bits, s.hybrid_rf)?,
        });
    }
    Ok(UtSweeps { rows })
}

// ---------------------------------------------------------------------------
// Single-point link budget

#[derive(Clone, Debug, PartialEq)]
pub struct LinkReport {
    pub xy_m: [f64; 2],
    pub geometry: LinkGeometry,
    pub budget: LinkBudget<f64>,
    pub point: CoveragePoint,
    pub noise_dbw: f64,
}

pub fn link_report(scn: &Scenario, xy_m: [f64; 2]) -> Result<LinkReport> {
    let user = scn.frame.stereo_to_sphere(xy_m, &scn.earth);
    let geometry = scn.link_geometry(&scn.sat, &scn.frame, user)?;
    let base = scn.budget(&geometry)?;
    let point = CoveragePoint::from_gains(&base, &scn.codebook.gains(geometry.sat_direction))?;
    let budget = base.with_g_tx(point.g_tx_db);
    Ok(LinkReport {
        xy_m,
        geometry,
        noise_dbw: budget.noise_dbw()?,
        budget,
        point,
    })
}

impl fmt::Display for LinkReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = &self.budget;
        let m = &self.point.metrics;
        writeln!(f, "position           x = {:.1} km, y = {:.1} km", self.xy_m[0] / 1e3, self.xy_m[1] / 1e3)?;
        writeln!(f, "slant range        {:.3} km", self.geometry.distance_m / 1e3)?;
        writeln!(f, "elevation          {:.3} deg", self.geometry.elevation_rad.to_degrees())?;
        writeln!(f, "serving beam       {}", self.point.best_beam)?;
        writeln!(f, "P_TX               {:>9.3} dBW", b.p_tx_dbw)?;
        writeln!(f, "LP_cable           {:>9.3} dB", b.lp_cable_db)?;
        writeln!(f, "G_TX               {:>9.3} dB", b.g_tx_db)?;
        writeln!(f, "LP_at              {:>9.3} dB", b.lp_at_db)?;
        writeln!(f, "LP_fs              {:>9.3} dB", b.lp_fs_db)?;
        writeln!(f, "G_RX               {:>9.3} dB", b.g_rx_db)?;
        writeln!(f, "RSS                {:>9.3} dBW", m.rss_dbw)?;
        writeln!(f, "noise T            {:>9.3} dBK", b.noise_temp_dbk)?;
        writeln!(f, "bandwidth          {:>9.3} MHz", b.bandwidth_hz / 1e6)?;
        writeln!(f, "sigma^2            {:>9.3} dBW", self.noise_dbw)?;
        writeln!(f, "SNR                {:>9.3} dB", m.snr_db)?;
        writeln!(f, "interference       {:>9.3} dBW", m.interference_dbw)?;
        writeln!(f, "SINR               {:>9.3} dB", m.sinr_db)?;
        writeln!(f, "SE (no interf.)    {:>9.4} bit/s/Hz", m.se_no_interf_bps_hz)?;
        write!(f, "SE (interf.)       {:>9.4} bit/s/Hz", m.se_interf_bps_hz)
    }
}

// ---------------------------------------------------------------------------
// Writers

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_coverage_csv(grid: &CoverageGrid, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x_m", "y_m", "in_roi", "best_beam", "gtx_db", "snr_db", "sinr_db", "se", "se_noint"])?;
    let nx = grid.xs_m.len();
    for (i, p) in grid.points.iter().enumerate() {
        let (x, y) = (grid.xs_m[i % nx], grid.ys_m[i / nx]);
        let rec = match p {
            Some(p) => [
                x.to_string(),
                y.to_string(),
                "1".into(),
                p.best_beam.to_string(),
                p.g_tx_db.to_string(),
                p.metrics.snr_db.to_string(),
                p.metrics.sinr_db.to_string(),
                p.metrics.se_interf_bps_hz.to_string(),
                p.metrics.se_no_interf_bps_hz.to_string(),
            ],
            None => [x.to_string(), y.to_string(), "0".into(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new()],
        };
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cells_csv(map: &CellMap<f64>, codebook: &SubarrayCodebook<f64>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x_m", "y_m", "in_roi", "beam", "gain_db", "second_gain_db", "is_beam_max"])?;
    let nx = map.xs_m.len();
    // Grid point nearest each beam's axis ground point, per beam.
    let nearest: Vec<Option<usize>> = codebook
        .ground_xy_m
        .iter()
        .enumerate()
        .map(|(b, g)| {
            (0..map.points.len())
                .filter(|&i| matches!(map.points[i], Some(p) if p.beam == b))
                .min_by(|&i, &j| {
                    let d = |k: usize| (map.xs_m[k % nx] - g[0]).hypot(map.ys_m[k / nx] - g[1]);
                    d(i).total_cmp(&d(j))
                })
        })
        .collect();
    for (i, p) in map.points.iter().enumerate() {
        let (x, y) = (map.xs_m[i % nx], map.ys_m[i / nx]);
        let rec = match p {
            Some(p) => [
                x.to_string(),
                y.to_string(),
                "1".into(),
                p.beam.to_string(),
                p.gain_db.to_string(),
                p.second_gain_db.to_string(),
                u8::from(nearest[p.beam] == Some(i)).to_string(),
            ],
            None => [x.to_string(), y.to_string(), "0".into(), String::new(), String::new(), String::new(), "0".into()],
        };
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_axis_cuts_csv(cuts: &AxisCuts, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["axis", "coord_m", "max_snr_db", "min_snr_db"])?;
    for (name, c) in [("x", &cuts.along_x), ("y", &cuts.along_y)] {
        for i in 0..c.coord_m.len() {
            let present = c.argmax_line[i].is_some();
            w.write_record([
                name.to_string(),
                c.coord_m[i].to_string(),
                opt(present.then_some(c.max_snr_db[i])),
                opt(present.then_some(c.min_snr_db[i])),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_doppler_csv(maps: &DopplerMaps, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x_m", "y_m", "in_roi", "doppler_hz", "w_rel_rad_s"])?;
    let nx = maps.xs_m.len();
    for (i, p) in maps.points.iter().enumerate() {
        w.write_record([
            maps.xs_m[i % nx].to_string(),
            maps.ys_m[i / nx].to_string(),
            u8::from(p.is_some()).to_string(),
            opt(p.map(|p| p.doppler_hz)),
            opt(p.map(|p| p.w_rel_rad_s)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timeline_csv(trace: &TimelineTrace, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t_s", "beam", "snr_db", "switch_flag"])?;
    for (i, s) in trace.samples.iter().enumerate() {
        let switched = i > 0 && trace.samples[i - 1].beam != s.beam;
        w.write_record([
            s.t_s.to_string(),
            s.beam.to_string(),
            s.snr_db.to_string(),
            u8::from(switched).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ut_sweeps_csv(sweeps: &UtSweeps, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sweep", "param", "series", "value_db"])?;
    for r in &sweeps.rows {
        w.write_record([r.sweep.to_string(), r.param.to_string(), r.series.to_string(), r.value_db.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn codebook_json(scn: &Scenario) -> serde_json::Value {
    let beams: Vec<_> = scn
        .codebook
        .beams
        .iter()
        .zip(&scn.codebook.ground_xy_m)
        .enumerate()
        .map(|(i, (b, g))| {
            json!({
                "index": i,
                "theta1": b.theta1,
                "theta2": b.theta2,
                "direction": [b.direction.x, b.direction.y, b.direction.z],
                "grid_index": [b.grid_index.0, b.grid_index.1],
                "offset": [b.offset.0, b.offset.1],
                "ground_xy_m": [g[0], g[1]],
            })
        })
        .collect();
    json!({
        "oversampling": scn.codebook.oversampling,
        "sat_nx": scn.arch.sat_nx,
        "sat_ny": scn.arch.sat_ny,
        "rf_nx": scn.arch.rf_nx,
        "rf_ny": scn.arch.rf_ny,
        "beam_count": scn.codebook.len(),
        "max_gain_db": scn.codebook.max_gain_db(),
        "beams": beams,
        "oversampling_curve": scn.oversampling_search.as_ref().map(|s| {
            s.curve.iter().map(|(o, c)| json!([o, c])).collect::<Vec<_>>()
        }),
    })
}

/// Configuration echo plus the derived constants of the run.
pub fn run_meta(scn: &Scenario, command: &str, overrides: &[String]) -> serde_json::Value {
    let c = &scn.config;
    json!({
        "command": command,
        "config": serde_json::to_value(c).expect("configuration always serialises"),
        "overrides": overrides,
        "seed": c.seed,
        "derived_seeds": {
            "doppler.user": derive_seed(c.seed, "doppler.user"),
            "ut.pointing": derive_seed(c.seed, "ut.pointing"),
        },
        "v_sat_mps": scn.v_sat_mps(),
        "roi_semi_x_m": scn.roi.semi_x_m,
        "roi_semi_y_m": scn.roi.semi_y_m,
        "oversampling": scn.codebook.oversampling,
        "beam_count": scn.codebook.len(),
        "zenith_absorption_db": scn.zenith_absorption_db,
    })
}

pub fn write_json(value: &serde_json::Value, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> Scenario {
        Scenario::new(&RunConfig::default()).unwrap()
    }

    #[test]
    fn nadir_budget_terms() {
        let scn = scenario();
        let r = link_report(&scn, [0.0, 0.0]).unwrap();
        assert!((r.budget.lp_fs_db - 175.90).abs() < 0.01, "{}", r.budget.lp_fs_db);
        assert!((r.noise_dbw + 120.52).abs() < 0.01);
        assert!((r.budget.g_tx_db - 10.0 * 288f64.log10()).abs() < 1e-9);
        assert!((r.budget.g_rx_db - 10.0 * 576.1f64.log10()).abs() < 1e-9);
        assert!((r.geometry.elevation_rad.to_degrees() - 90.0).abs() < 1e-6);
        let text = r.to_string();
        assert!(text.contains("LP_fs") && text.contains("175.9"));
    }

    #[test]
    fn zero_resolution_is_empty() {
        let scn = scenario();
        let g = run_coverage(&scn, 0).unwrap();
        assert!(g.points.is_empty());
        assert!(run_axis_cuts(&g).is_err());
    }

    #[test]
    fn coverage_sinr_below_snr_and_finite() {
        let scn = scenario();
        let g = run_coverage(&scn, 41).unwrap();
        let mut n = 0;
        for (xy, p) in g.in_roi() {
            assert!(scn.roi.contains(xy));
            assert!(p.metrics.sinr_db <= p.metrics.snr_db);
            assert!(p.metrics.snr_db.is_finite() && p.metrics.sinr_db.is_finite());
            n += 1;
        }
        assert!(n > 1000);
    }

    #[test]
    fn half_resolution_matches_shared_points() {
        let scn = scenario();
        let full = run_coverage(&scn, 41).unwrap();
        let half = run_coverage(&scn, 21).unwrap();
        for iy in 0..21 {
            for ix in 0..21 {
                assert_eq!(half.at(ix, iy), full.at(2 * ix, 2 * iy));
            }
        }
    }

    #[test]
    fn axis_cuts_symmetric_and_ordered() {
        let scn = scenario();
        let g = run_coverage(&scn, 41).unwrap();
        let cuts = run_axis_cuts(&g).unwrap();
        for c in [&cuts.along_x, &cuts.along_y] {
            let n = c.coord_m.len();
            for i in 0..n {
                if c.argmax_line[i].is_some() {
                    assert!(c.max_snr_db[i] >= c.min_snr_db[i]);
                    assert!((c.max_snr_db[i] - c.max_snr_db[n - 1 - i]).abs() < 1e-6);
                }
            }
        }
        assert_eq!(cuts.along_x.argmax_line[20], Some(20));
    }

    #[test]
    fn timeline_argmax_and_refinement() {
        let scn = scenario();
        let coarse = run_timeline(&scn, 120.0, 1.0, [0.0, 0.0]).unwrap();
        assert!(coarse.argmax_holds());
        let fine = run_timeline(&scn, 120.0, 0.25, [0.0, 0.0]).unwrap();
        for (a, b) in coarse.switches.iter().zip(&fine.switches) {
            assert!((a.t_s - b.t_s).abs() <= 1.0);
            assert_eq!((a.from, a.to), (b.from, b.to));
        }
        assert!(coarse.samples.windows(2).all(|w| w[1].t_s > w[0].t_s));
        assert!(run_timeline(&scn, 10.0, 1.0, [600_000.0, 0.0]).is_err());
        assert!(run_timeline(&scn, 10.0, 0.0, [0.0, 0.0]).is_err());
    }

    #[test]
    fn doppler_zero_on_cross_track_axis() {
        let scn = scenario();
        let m = run_doppler_maps(&scn, 21).unwrap();
        for iy in 0..21 {
            if let Some(p) = m.points[iy * 21 + 10] {
                assert!(p.doppler_hz.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn computed_atmosphere_mode() {
        let mut c = RunConfig::default();
        c.atmosphere.mode = AtmosphereMode::Computed;
        let scn = Scenario::new(&c).unwrap();
        let z = scn.zenith_absorption_db.unwrap();
        assert!(z > 0.0 && z < 0.2);
        let r = link_report(&scn, [0.0, 0.0]).unwrap();
        assert!((r.budget.lp_at_db - z).abs() < 1e-9);
        let edge = link_report(&scn, [500_000.0, 0.0]).unwrap();
        assert!(edge.budget.lp_at_db > z);
    }

    #[test]
    fn auto_oversampling_picks_full_codebook() {
        let mut c = RunConfig::default();
        c.codebook.auto_oversampling = true;
        let scn = Scenario::new(&c).unwrap();
        assert_eq!(scn.codebook.len(), 15);
        assert!(scn.oversampling_search.unwrap().exact);
    }

    #[test]
    fn phase_bits_lower_nadir_snr() {
        let ideal = link_report(&scenario(), [0.0, 0.0]).unwrap();
        let mut c = RunConfig::default();
        c.ut.phase_bits = 1;
        let q = link_report(&Scenario::new(&c).unwrap(), [0.0, 0.0]).unwrap();
        // Broadside phases are all equal, so quantisation is lossless there.
        assert!((q.budget.g_rx_db - ideal.budget.g_rx_db).abs() < 1e-9);
        let e1 = link_report(&scenario(), [300_000.0, 100_000.0]).unwrap();
        let e2 = link_report(&Scenario::new(&c).unwrap(), [300_000.0, 100_000.0]).unwrap();
        assert!(e2.budget.g_rx_db < e1.budget.g_rx_db - 0.5);
        c.ut.kind = crate::config::UtKind::Metasurface;
        assert!(Scenario::new(&c).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        let mut c = RunConfig::default();
        c.sat.rf_ny = 5;
        assert!(matches!(Scenario::new(&c), Err(Error::Config(_))));
    }

    #[test]
    fn sweeps_shapes() {
        let mut c = RunConfig::default();
        c.sweeps.error_trials = 50;
        let s = run_ut_sweeps(&c).unwrap();
        assert_eq!(s.series("alpha", "leaky_wave").len(), 31);
        assert_eq!(s.series("bits", "hybrid").len(), 8);
        assert_eq!(s.series("error", "upa_mean").len(), 9);
    }
}
