//! Partially connected hybrid architecture and its oversampled 2-D DFT grid
//! of beams.
//!
//! Every RF chain drives one contiguous `sub_nx × sub_ny` tile of the
//! satellite UPA and forms one beam. Beam directions are expressed in the
//! satellite array frame (x along track, y cross track, z radial outward), so
//! an Earth-pointing beam has a negative third component. The DFT relation
//! `v = θ/π` assumes half-wavelength element spacing.

use num_complex::Complex;
use rayon::prelude::*;

use crate::antennas::{ArrayGeometry, BeamWeights};
use crate::error::{Error, Result};
use crate::geo_orbit::{ray_sphere_intersection, EarthModel, RoiEllipse, SatelliteState, StereoFrame};
use crate::num::{to_db, Real, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HybridArchitecture {
    pub sat_nx: usize,
    pub sat_ny: usize,
    pub rf_nx: usize,
    pub rf_ny: usize,
}

impl HybridArchitecture {
    pub fn new(sat_nx: usize, sat_ny: usize, rf_nx: usize, rf_ny: usize) -> Result<Self> {
        if sat_nx == 0 || sat_ny == 0 || rf_nx == 0 || rf_ny == 0 {
            return Err(Error::domain("HybridArchitecture", "all counts must be at least 1"));
        }
        if !sat_nx.is_multiple_of(rf_nx) || !sat_ny.is_multiple_of(rf_ny) {
            return Err(Error::domain(
                "HybridArchitecture",
                format!("RF chains {rf_nx}x{rf_ny} do not divide the {sat_nx}x{sat_ny} array"),
            ));
        }
        Ok(Self {
            sat_nx,
            sat_ny,
            rf_nx,
            rf_ny,
        })
    }

    pub fn sub_nx(&self) -> usize {
        self.sat_nx / self.rf_nx
    }

    pub fn sub_ny(&self) -> usize {
        self.sat_ny / self.rf_ny
    }

    pub fn n_rf(&self) -> usize {
        self.rf_nx * self.rf_ny
    }

    pub fn n_sub(&self) -> usize {
        self.sub_nx() * self.sub_ny()
    }

    pub fn n_sat(&self) -> usize {
        self.sat_nx * self.sat_ny
    }

    /// RF chain driving element `n = ix + sat_nx·iy`.
    pub fn chain_of(&self, n: usize) -> usize {
        let (ix, iy) = (n % self.sat_nx, n / self.sat_nx);
        ix / self.sub_nx() + self.rf_nx * (iy / self.sub_ny())
    }
}

/// Element-to-chain assignment of a partially connected array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RfIndexMap {
    pub chain: Vec<usize>,
    pub n_rf: usize,
}

impl RfIndexMap {
    pub fn new(arch: &HybridArchitecture) -> Self {
        Self {
            chain: (0..arch.n_sat()).map(|n| arch.chain_of(n)).collect(),
            n_rf: arch.n_rf(),
        }
    }

    pub fn elements_of(&self, m: usize) -> Vec<usize> {
        (0..self.chain.len()).filter(|&n| self.chain[n] == m).collect()
    }
}

/// One column family of the oversampled DFT dictionary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DftBeam<T> {
    pub theta1: T,
    pub theta2: T,
    /// Unit vector in the satellite array frame, `z < 0`.
    pub direction: Vec3<T>,
    /// Raw grid position `(n1, n2)` before centring.
    pub grid_index: (usize, usize),
    /// Signed grid offset from broadside; `v = 2k/(O·N_sub)`.
    pub offset: (i64, i64),
}

impl<T: Real> DftBeam<T> {
    pub fn spatial_frequency(&self) -> (T, T) {
        (self.direction.x, self.direction.y)
    }
}

fn grid_count<T: Real>(oversampling: T, n_sub: usize) -> usize {
    let c = (oversampling * T::from_usize_lossy(n_sub)).round();
    c.to_usize().unwrap_or(0).max(1)
}

fn centred(n: usize, count: usize) -> i64 {
    if 2 * n < count {
        n as i64
    } else {
        n as i64 - count as i64
    }
}

/// Candidate phase-grid size `(round(O·sub_nx), round(O·sub_ny))` before the
/// visible-region restriction.
pub fn dictionary_grid_size<T: Real>(arch: &HybridArchitecture, oversampling: T) -> (usize, usize) {
    (
        grid_count(oversampling, arch.sub_nx()),
        grid_count(oversampling, arch.sub_ny()),
    )
}

/// Oversampled DFT dictionary: `round(O·sub_nx) × round(O·sub_ny)` phase
/// pairs with step `2π/(O·N_sub)`, centred on broadside, restricted to the
/// visible region. Sorted by signed offset.
pub fn build_dictionary<T: Real>(arch: &HybridArchitecture, oversampling: T) -> Result<Vec<DftBeam<T>>> {
    if !(oversampling > T::zero() && oversampling.is_finite()) {
        return Err(Error::domain("build_dictionary", "oversampling must be positive"));
    }
    let (cx, cy) = dictionary_grid_size(arch, oversampling);
    let step_x = T::lit(2.0) / (oversampling * T::from_usize_lossy(arch.sub_nx()));
    let step_y = T::lit(2.0) / (oversampling * T::from_usize_lossy(arch.sub_ny()));
    let mut beams = Vec::with_capacity(cx * cy);
    for n1 in 0..cx {
        let k1 = centred(n1, cx);
        let v1 = step_x * T::lit(k1 as f64);
        for n2 in 0..cy {
            let k2 = centred(n2, cy);
            let v2 = step_y * T::lit(k2 as f64);
            let rho = v1 * v1 + v2 * v2;
            if rho > T::one() {
                continue;
            }
            beams.push(DftBeam {
                theta1: v1 * T::PI(),
                theta2: v2 * T::PI(),
                direction: Vec3::new(v1, v2, -(T::one() - rho).sqrt()),
                grid_index: (n1, n2),
                offset: (k1, k2),
            });
        }
    }
    beams.sort_by_key(|b| b.offset);
    Ok(beams)
}

/// Column `m` of `F_RF`: the satellite steering vector towards the beam
/// direction, masked to the elements of chain `m`.
pub fn beam_weights<T: Real>(
    beam: &DftBeam<T>,
    arch: &HybridArchitecture,
    geom: &ArrayGeometry<T>,
    m: usize,
) -> Result<BeamWeights<T>> {
    if geom.len() != arch.n_sat() {
        return Err(Error::Dimension {
            op: "beam_weights",
            expected: arch.n_sat(),
            found: geom.len(),
        });
    }
    if m >= arch.n_rf() {
        return Err(Error::domain("beam_weights", format!("chain {m} out of range 0..{}", arch.n_rf())));
    }
    let k = T::TAU() / geom.wavelength_m;
    let w = geom
        .element_positions_m
        .iter()
        .enumerate()
        .map(|(n, p)| {
            if arch.chain_of(n) == m {
                Complex::from_polar(T::one(), -k * p.dot(beam.direction))
            } else {
                Complex::new(T::zero(), T::zero())
            }
        })
        .collect();
    Ok(BeamWeights(w))
}

/// `|Σ_{i<n} e^{iiψ}|²`.
fn dirichlet_sq<T: Real>(n: usize, psi: T) -> T {
    let half = psi / T::lit(2.0);
    let s = half.sin();
    let nn = T::from_usize_lossy(n);
    if s.abs() < T::lit(1e-9) {
        return nn * nn;
    }
    let r = (nn * half).sin() / s;
    r * r
}

/// Linear transmit gain `|a(d)^H f|²/‖f‖²` of a half-wavelength
/// `sub_nx × sub_ny` tile steered to `v`, towards `d` (both in the array
/// frame). Independent of which tile is used.
pub fn subarray_gain<T: Real>(sub_nx: usize, sub_ny: usize, v: Vec3<T>, d: Vec3<T>) -> T {
    let gx = dirichlet_sq(sub_nx, T::PI() * (d.x - v.x));
    let gy = dirichlet_sq(sub_ny, T::PI() * (d.y - v.y));
    gx * gy / T::from_usize_lossy(sub_nx * sub_ny)
}

/// Pruned beam set plus the stereographic point each beam axis hits.
#[derive(Clone, Debug, PartialEq)]
pub struct SubarrayCodebook<T> {
    pub beams: Vec<DftBeam<T>>,
    pub ground_xy_m: Vec<[T; 2]>,
    pub oversampling: T,
    pub arch: HybridArchitecture,
}

impl<T: Real> SubarrayCodebook<T> {
    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    /// Linear transmit gain of every beam towards `d` (array frame).
    pub fn gains(&self, d: Vec3<T>) -> Vec<T> {
        let (sx, sy) = (self.arch.sub_nx(), self.arch.sub_ny());
        self.beams.iter().map(|b| subarray_gain(sx, sy, b.direction, d)).collect()
    }

    pub fn gains_into(&self, d: Vec3<T>, out: &mut Vec<T>) {
        let (sx, sy) = (self.arch.sub_nx(), self.arch.sub_ny());
        out.clear();
        out.extend(self.beams.iter().map(|b| subarray_gain(sx, sy, b.direction, d)));
    }

    pub fn max_gain_db(&self) -> T {
        to_db(T::from_usize_lossy(self.arch.n_sub()))
    }

    pub fn position_of(&self, offset: (i64, i64)) -> Option<usize> {
        self.beams.iter().position(|b| b.offset == offset)
    }
}

/// Stereographic point where the ray along `dir_local` (array frame) from the
/// satellite meets the Earth, if it does.
pub fn ground_point<T: Real>(
    dir_local: Vec3<T>,
    sat: &SatelliteState<T>,
    frame: &StereoFrame<T>,
    earth: &EarthModel<T>,
) -> Option<[T; 2]> {
    let dir = frame.array_basis().to_parent(dir_local);
    let hit = ray_sphere_intersection(sat.position_m, dir, earth.radius_m)?;
    frame.sphere_to_stereo(hit, earth)
}

/// Keeps beams whose axis meets the Earth inside the ellipse.
pub fn prune_to_roi<T: Real>(
    beams: Vec<DftBeam<T>>,
    arch: &HybridArchitecture,
    oversampling: T,
    roi: &RoiEllipse<T>,
    sat: &SatelliteState<T>,
    earth: &EarthModel<T>,
) -> Result<SubarrayCodebook<T>> {
    let frame = sat.frame()?;
    let mut kept = Vec::new();
    let mut ground = Vec::new();
    for b in beams {
        if let Some(xy) = ground_point(b.direction, sat, &frame, earth) {
            if roi.contains(xy) {
                kept.push(b);
                ground.push(xy);
            }
        }
    }
    Ok(SubarrayCodebook {
        beams: kept,
        ground_xy_m: ground,
        oversampling,
        arch: *arch,
    })
}

pub fn build_codebook<T: Real>(
    arch: &HybridArchitecture,
    oversampling: T,
    roi: &RoiEllipse<T>,
    sat: &SatelliteState<T>,
    earth: &EarthModel<T>,
) -> Result<SubarrayCodebook<T>> {
    prune_to_roi(build_dictionary(arch, oversampling)?, arch, oversampling, roi, sat, earth)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OversamplingSearch<T> {
    pub oversampling: T,
    /// `true` when the pruned count equals the number of RF chains.
    pub exact: bool,
    pub count: usize,
    pub curve: Vec<(T, usize)>,
}

/// Sweeps `O = o_min + i·step` up to `o_max` and returns the largest value
/// whose pruned beam count equals `rf_nx·rf_ny`. Without an exact match the
/// value with the closest count is returned (largest on ties) and `exact` is
/// false.
pub fn find_oversampling<T: Real>(
    arch: &HybridArchitecture,
    roi: &RoiEllipse<T>,
    sat: &SatelliteState<T>,
    earth: &EarthModel<T>,
    o_min: T,
    o_max: T,
    step: T,
) -> Result<OversamplingSearch<T>> {
    if !(o_min > T::zero() && o_max >= o_min && step > T::zero()) {
        return Err(Error::domain("find_oversampling", "need 0 < o_min <= o_max and step > 0"));
    }
    let n = ((o_max - o_min) / step + T::lit(1e-9)).floor().to_usize().unwrap_or(0);
    let mut curve = Vec::with_capacity(n + 1);
    for i in 0..=n {
        // Rounded to the step's decimal grid so printed values are clean.
        let o = o_min + step * T::from_usize_lossy(i);
        let o = (o * T::lit(1e6)).round() / T::lit(1e6);
        let count = build_codebook(arch, o, roi, sat, earth)?.len();
        curve.push((o, count));
    }
    let target = arch.n_rf();
    let best = curve
        .iter()
        .rev()
        .min_by_key(|(_, c)| c.abs_diff(target))
        .copied()
        .expect("sweep has at least one point");
    Ok(OversamplingSearch {
        oversampling: best.0,
        exact: best.1 == target,
        count: best.1,
        curve,
    })
}

/// Best and runner-up beam at one grid point inside the ellipse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellPoint<T> {
    pub beam: usize,
    pub gain_db: T,
    pub second_gain_db: T,
}

/// Stereographic sample points `R·(2i/(N−1) − 1)`, so both edges and the
/// centre are included exactly for odd `N`.
pub fn grid_axis<T: Real>(semi_m: T, resolution: usize) -> Vec<T> {
    match resolution {
        0 => Vec::new(),
        1 => vec![T::zero()],
        n => (0..n)
            .map(|i| {
                semi_m * (T::lit(2.0) * T::from_usize_lossy(i) / T::from_usize_lossy(n - 1) - T::one())
            })
            .collect(),
    }
}

/// Argmax-beam map over the ROI bounding box, row-major with `y` outer.
#[derive(Clone, Debug, PartialEq)]
pub struct CellMap<T> {
    pub xs_m: Vec<T>,
    pub ys_m: Vec<T>,
    pub points: Vec<Option<CellPoint<T>>>,
}

impl<T: Real> CellMap<T> {
    pub fn at(&self, ix: usize, iy: usize) -> Option<&CellPoint<T>> {
        self.points[iy * self.xs_m.len() + ix].as_ref()
    }

    /// Number of distinct beams that own at least one point.
    pub fn distinct_cells(&self) -> usize {
        let mut seen: Vec<usize> = self.points.iter().flatten().map(|p| p.beam).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Whether the points owned by `beam` form one 4-connected region.
    pub fn is_connected(&self, beam: usize) -> bool {
        let nx = self.xs_m.len();
        let owned = |i: usize| matches!(self.points[i], Some(p) if p.beam == beam);
        let Some(start) = (0..self.points.len()).find(|&i| owned(i)) else {
            return true;
        };
        let mut seen = vec![false; self.points.len()];
        let mut stack = vec![start];
        seen[start] = true;
        let mut reached = 0;
        while let Some(i) = stack.pop() {
            reached += 1;
            let (x, y) = (i % nx, i / nx);
            let mut push = |j: usize| {
                if !seen[j] && owned(j) {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                push(i - 1);
            }
            if x + 1 < nx {
                push(i + 1);
            }
            if y > 0 {
                push(i - nx);
            }
            if i + nx < self.points.len() {
                push(i + nx);
            }
        }
        reached == (0..self.points.len()).filter(|&i| owned(i)).count()
    }
}

/// Unit vector from the satellite to the stereographic point, in the array
/// frame.
pub fn direction_to<T: Real>(
    xy: [T; 2],
    sat: &SatelliteState<T>,
    frame: &StereoFrame<T>,
    earth: &EarthModel<T>,
) -> Option<Vec3<T>> {
    let p = frame.stereo_to_sphere(xy, earth);
    let d = (p - sat.position_m).normalized()?;
    Some(frame.array_basis().to_local(d))
}

fn top_two<T: Real>(gains: &[T]) -> (usize, T, T) {
    let mut best = 0;
    let mut g1 = T::neg_infinity();
    let mut g2 = T::neg_infinity();
    for (i, &g) in gains.iter().enumerate() {
        if g > g1 {
            g2 = g1;
            g1 = g;
            best = i;
        } else if g > g2 {
            g2 = g;
        }
    }
    (best, g1, g2)
}

/// Assigns every in-ellipse grid point to its highest-gain beam (lowest index
/// on ties).
pub fn tile_cells<T: Real>(
    codebook: &SubarrayCodebook<T>,
    roi: &RoiEllipse<T>,
    sat: &SatelliteState<T>,
    earth: &EarthModel<T>,
    resolution: usize,
) -> Result<CellMap<T>> {
    if codebook.is_empty() {
        return Err(Error::domain("tile_cells", "codebook is empty"));
    }
    let frame = sat.frame()?;
    let xs = grid_axis(roi.semi_x_m, resolution);
    let ys = grid_axis(roi.semi_y_m, resolution);
    let points = ys
        .par_iter()
        .flat_map_iter(|&y| {
            let mut gains = Vec::with_capacity(codebook.len());
            xs.iter()
                .map(|&x| {
                    if !roi.contains([x, y]) {
                        return None;
                    }
                    let d = direction_to([x, y], sat, &frame, earth)?;
                    codebook.gains_into(d, &mut gains);
                    let (beam, g1, g2) = top_two(&gains);
                    Some(CellPoint {
                        beam,
                        gain_db: to_db(g1),
                        second_gain_db: to_db(g2),
                    })
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(CellMap {
        xs_m: xs,
        ys_m: ys,
        points,
    })
}

/// Ground point where four grid-adjacent beams meet with equal gain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CornerPoint<T> {
    pub xy_m: [T; 2],
    pub direction: Vec3<T>,
    pub beams: [usize; 4],
}

/// Meeting points of every 2×2 block of grid-adjacent beams, at the
/// spatial-frequency midpoint (where the four tile gains are equal by
/// symmetry). Points outside the ellipse are dropped.
pub fn corner_points<T: Real>(
    codebook: &SubarrayCodebook<T>,
    roi: &RoiEllipse<T>,
    sat: &SatelliteState<T>,
    earth: &EarthModel<T>,
) -> Result<Vec<CornerPoint<T>>> {
    let frame = sat.frame()?;
    let mut out = Vec::new();
    for (i, b) in codebook.beams.iter().enumerate() {
        let (k1, k2) = b.offset;
        let (Some(j1), Some(j2), Some(j3)) = (
            codebook.position_of((k1 + 1, k2)),
            codebook.position_of((k1, k2 + 1)),
            codebook.position_of((k1 + 1, k2 + 1)),
        ) else {
            continue;
        };
        let quad = [i, j1, j2, j3];
        let four = T::lit(4.0);
        let v1 = quad.iter().map(|&q| codebook.beams[q].direction.x).sum::<T>() / four;
        let v2 = quad.iter().map(|&q| codebook.beams[q].direction.y).sum::<T>() / four;
        let rho = v1 * v1 + v2 * v2;
        if rho >= T::one() {
            continue;
        }
        let d = Vec3::new(v1, v2, -(T::one() - rho).sqrt());
        if let Some(xy) = ground_point(d, sat, &frame, earth) {
            if roi.contains(xy) {
                out.push(CornerPoint {
                    xy_m: xy,
                    direction: d,
                    beams: quad,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::antennas::{combiner_gain, steering_vector};
    use crate::channel::SPEED_OF_LIGHT_MPS;
    use proptest::prelude::*;

    fn reference() -> (HybridArchitecture, RoiEllipse<f64>, SatelliteState<f64>, EarthModel<f64>) {
        let e = EarthModel::default();
        let sat = SatelliteState::circular(&e, 1_300_000.0, 53f64.to_radians(), 0.0).unwrap();
        (
            HybridArchitecture::new(60, 72, 5, 3).unwrap(),
            RoiEllipse::new(534_100.0, 170_500.0).unwrap(),
            sat,
            e,
        )
    }

    #[test]
    fn architecture_validation_and_chain_map() {
        assert!(HybridArchitecture::new(60, 72, 7, 3).is_err());
        assert!(HybridArchitecture::new(60, 72, 0, 3).is_err());
        let a = HybridArchitecture::new(60, 72, 5, 3).unwrap();
        assert_eq!((a.sub_nx(), a.sub_ny(), a.n_sub()), (12, 24, 288));
        let map = RfIndexMap::new(&a);
        for m in 0..15 {
            let els = map.elements_of(m);
            assert_eq!(els.len(), 288);
            let xs: Vec<_> = els.iter().map(|n| n % 60).collect();
            let ys: Vec<_> = els.iter().map(|n| n / 60).collect();
            assert_eq!(xs.iter().max().unwrap() - xs.iter().min().unwrap(), 11);
            assert_eq!(ys.iter().max().unwrap() - ys.iter().min().unwrap(), 23);
        }
        assert_eq!(a.chain_of(0), 0);
        assert_eq!(a.chain_of(59 + 60 * 71), 14);
    }

    #[test]
    fn dictionary_sizes() {
        // Visible-region oracle: count grid points with v1² + v2² <= 1.
        let visible = |cx: i64, cy: i64, sx: f64, sy: f64| {
            let mut n = 0;
            for i in 0..cx {
                let k1 = if 2 * i < cx { i } else { i - cx } as f64;
                for j in 0..cy {
                    let k2 = if 2 * j < cy { j } else { j - cy } as f64;
                    let (v1, v2) = (2.0 * k1 / sx, 2.0 * k2 / sy);
                    n += (v1 * v1 + v2 * v2 <= 1.0) as usize;
                }
            }
            n
        };
        let a = HybridArchitecture::new(12, 24, 1, 1).unwrap();
        assert_eq!(dictionary_grid_size(&a, 1.0), (12, 24));
        assert_eq!(build_dictionary(&a, 1.0).unwrap().len(), visible(12, 24, 12.0, 24.0));
        let b = HybridArchitecture::new(128, 64, 8, 8).unwrap();
        assert_eq!(dictionary_grid_size(&b, 2.0), (32, 16));
        assert_eq!(build_dictionary(&b, 2.0).unwrap().len(), visible(32, 16, 32.0, 16.0));
        assert!(build_dictionary(&b, 0.0).is_err());
        let t1 = HybridArchitecture::new(60, 72, 5, 3).unwrap();
        assert_eq!(dictionary_grid_size(&t1, 1.2), (14, 29));
        assert_eq!(build_dictionary(&t1, 1.2).unwrap().len(), visible(14, 29, 14.4, 28.8));
    }

    #[test]
    fn dictionary_spacing_and_centering() {
        let a = HybridArchitecture::new(60, 72, 5, 3).unwrap();
        let d = build_dictionary(&a, 1.2).unwrap();
        let step = 2.0 / (1.2 * 12.0);
        for b in &d {
            assert!((b.direction.x - step * b.offset.0 as f64).abs() < 1e-15);
            assert!((b.direction.norm() - 1.0).abs() < 1e-12 && b.direction.z <= 0.0);
            assert!((b.theta1 / std::f64::consts::PI - b.direction.x).abs() < 1e-15);
        }
        assert!(d.iter().any(|b| b.offset == (0, 0) && b.direction.z == -1.0));
        assert!(d.windows(2).all(|w| w[0].offset < w[1].offset));
    }

    #[test]
    fn beam_weights_are_masked_steering() {
        let a = HybridArchitecture::new(8, 6, 2, 3).unwrap();
        let lambda = SPEED_OF_LIGHT_MPS / 11.45e9;
        let g = ArrayGeometry::upa(8, 6, lambda).unwrap();
        let d = build_dictionary(&a, 1.5).unwrap();
        for b in d.iter().take(5) {
            for m in 0..6 {
                let w = beam_weights(b, &a, &g, m).unwrap();
                let nz: Vec<usize> = (0..48).filter(|&n| w.0[n].norm() > 0.0).collect();
                assert_eq!(nz.len(), a.n_sub());
                assert!(nz.iter().all(|&n| a.chain_of(n) == m));
            }
        }
        let broad = d.iter().find(|b| b.offset == (0, 0)).unwrap();
        let w = beam_weights(broad, &a, &g, 2).unwrap();
        assert!(w.0.iter().filter(|z| z.norm() > 0.0).all(|z| (z - Complex::new(1.0, 0.0)).norm() < 1e-12));
        assert!(beam_weights(broad, &a, &g, 6).is_err());
        let small = ArrayGeometry::upa(4, 6, lambda).unwrap();
        assert!(beam_weights(broad, &a, &small, 0).is_err());
    }

    #[test]
    fn separable_gain_matches_full_inner_product() {
        let a = HybridArchitecture::new(12, 8, 3, 2).unwrap();
        let lambda = 0.026;
        let g = ArrayGeometry::upa(12, 8, lambda).unwrap();
        let beams = build_dictionary(&a, 1.3).unwrap();
        let dirs = [
            Vec3::new(0.1, -0.2, -(1.0f64 - 0.05).sqrt()),
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(-0.5, 0.3, -(1.0f64 - 0.34).sqrt()),
        ];
        for b in beams.iter().step_by(3) {
            for m in [0, 5] {
                let w = beam_weights(b, &a, &g, m).unwrap();
                for d in dirs {
                    let full = combiner_gain(&steering_vector(&g, d).unwrap(), &w.0);
                    let fast = subarray_gain(a.sub_nx(), a.sub_ny(), b.direction, d);
                    assert!((full - fast).abs() < 1e-9 * a.n_sub() as f64, "{full} {fast}");
                }
            }
        }
    }

    #[test]
    fn beams_o_steps_apart_are_orthogonal() {
        for o in [1usize, 2, 3] {
            let a = HybridArchitecture::new(16, 8, 1, 1).unwrap();
            let lambda = 0.026;
            let g = ArrayGeometry::upa(16, 8, lambda).unwrap();
            let d = build_dictionary(&a, o as f64).unwrap();
            let b0 = d.iter().find(|b| b.offset == (0, 0)).unwrap();
            let bo = d.iter().find(|b| b.offset == (o as i64, 0)).unwrap();
            let w0 = beam_weights(b0, &a, &g, 0).unwrap();
            let wo = beam_weights(bo, &a, &g, 0).unwrap();
            let ip = crate::antennas::inner(&w0.0, &wo.0).norm();
            assert!(ip < 1e-9 * 128.0, "O={o}: {ip}");
            if o > 1 {
                let b1 = d.iter().find(|b| b.offset == (1, 0)).unwrap();
                let w1 = beam_weights(b1, &a, &g, 0).unwrap();
                assert!(crate::antennas::inner(&w0.0, &w1.0).norm() > 1.0);
            }
        }
    }

    #[test]
    fn reference_prunes_to_fifteen_in_five_by_three() {
        let (a, roi, sat, e) = reference();
        let cb = build_codebook(&a, 1.2, &roi, &sat, &e).unwrap();
        assert_eq!(cb.len(), 15);
        let mut k1: Vec<_> = cb.beams.iter().map(|b| b.offset.0).collect();
        let mut k2: Vec<_> = cb.beams.iter().map(|b| b.offset.1).collect();
        k1.sort();
        k1.dedup();
        k2.sort();
        k2.dedup();
        assert_eq!(k1, vec![-2, -1, 0, 1, 2]);
        assert_eq!(k2, vec![-1, 0, 1]);
        for xy in &cb.ground_xy_m {
            assert!(roi.contains(*xy));
        }
    }

    #[test]
    fn tiny_roi_keeps_at_most_broadside() {
        let (a, _, sat, e) = reference();
        let roi = RoiEllipse::new(1.0, 1.0).unwrap();
        let cb = build_codebook(&a, 1.2, &roi, &sat, &e).unwrap();
        assert!(cb.len() <= 1);
    }

    #[test]
    fn oversampling_search_reference() {
        let (a, roi, sat, e) = reference();
        let s = find_oversampling(&a, &roi, &sat, &e, 0.5, 3.0, 0.1).unwrap();
        assert!(s.exact);
        assert!((s.oversampling - 1.2).abs() < 1e-9, "{}", s.oversampling);
        assert_eq!(s.curve.len(), 26);
        // Non-decreasing up to rounding plateaus: never drops by more than a
        // couple of beams between neighbouring steps.
        for w in s.curve.windows(2) {
            assert!(w[1].1 + 4 >= w[0].1, "{:?}", s.curve);
        }
        assert!(s.curve.last().unwrap().1 > s.curve[0].1);
    }

    #[test]
    fn oversampling_search_single_chain() {
        let (_, roi, sat, e) = reference();
        let a = HybridArchitecture::new(60, 72, 1, 1).unwrap();
        let s = find_oversampling(&a, &roi, &sat, &e, 0.05, 1.0, 0.05).unwrap();
        assert!(s.exact && s.count == 1);
    }

    #[test]
    fn reference_cells() {
        let (a, roi, sat, e) = reference();
        let cb = build_codebook(&a, 1.2, &roi, &sat, &e).unwrap();
        let map = tile_cells(&cb, &roi, &sat, &e, 61).unwrap();
        assert_eq!(map.distinct_cells(), 15);
        for (i, p) in map.points.iter().enumerate() {
            let (x, y) = (map.xs_m[i % 61], map.ys_m[i / 61]);
            assert_eq!(p.is_some(), roi.contains([x, y]));
            if let Some(p) = p {
                assert!(p.gain_db <= cb.max_gain_db() + 1e-9);
                assert!(p.second_gain_db <= p.gain_db);
            }
        }
        for b in 0..15 {
            assert!(map.is_connected(b), "beam {b}");
        }
    }

    #[test]
    fn single_beam_owns_whole_roi() {
        let (_, roi, sat, e) = reference();
        let a = HybridArchitecture::new(60, 72, 1, 1).unwrap();
        let cb = build_codebook(&a, 0.05, &roi, &sat, &e).unwrap();
        assert_eq!(cb.len(), 1);
        let map = tile_cells(&cb, &roi, &sat, &e, 21).unwrap();
        assert!(map.points.iter().flatten().all(|p| p.beam == 0));
        assert_eq!(map.distinct_cells(), 1);
    }

    #[test]
    fn corners_have_four_equal_gains() {
        let (a, roi, sat, e) = reference();
        let cb = build_codebook(&a, 1.2, &roi, &sat, &e).unwrap();
        let corners = corner_points(&cb, &roi, &sat, &e).unwrap();
        assert_eq!(corners.len(), 8);
        let frame = sat.frame().unwrap();
        for c in corners {
            let d = direction_to(c.xy_m, &sat, &frame, &e).unwrap();
            let mut g: Vec<(usize, f64)> = cb.gains(d).into_iter().enumerate().collect();
            g.sort_by(|x, y| y.1.total_cmp(&x.1));
            let mut top: Vec<usize> = g[..4].iter().map(|p| p.0).collect();
            top.sort();
            let mut quad = c.beams.to_vec();
            quad.sort();
            assert_eq!(top, quad);
            assert!(to_db(g[0].1) - to_db(g[3].1) < 0.1);
        }
    }

    #[test]
    fn grid_axis_is_exact_at_edges() {
        let xs = grid_axis(534_100.0, 201);
        assert_eq!(xs[0], -534_100.0);
        assert_eq!(xs[100], 0.0);
        assert_eq!(xs[200], 534_100.0);
        assert!(grid_axis(1.0f64, 0).is_empty());
        assert_eq!(grid_axis(1.0f64, 1), vec![0.0]);
    }

    #[test]
    fn empty_codebook_rejected() {
        let (a, roi, sat, e) = reference();
        let cb = SubarrayCodebook {
            beams: Vec::new(),
            ground_xy_m: Vec::new(),
            oversampling: 1.0,
            arch: a,
        };
        assert!(tile_cells(&cb, &roi, &sat, &e, 11).is_err());
    }

    proptest! {
        #[test]
        fn pruning_is_monotone_in_roi(s1 in 0.1..2.0f64, s2 in 0.1..2.0f64, o in 0.8..2.5f64) {
            let (a, roi, sat, e) = reference();
            let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
            let small = build_codebook(&a, o, &roi.scaled(lo), &sat, &e).unwrap();
            let large = build_codebook(&a, o, &roi.scaled(hi), &sat, &e).unwrap();
            for b in &small.beams {
                prop_assert!(large.beams.iter().any(|c| c.offset == b.offset));
            }
        }

        #[test]
        fn subarray_gain_bounded(v1 in -0.6..0.6f64, v2 in -0.6..0.6f64, d1 in -0.6..0.6f64, d2 in -0.6..0.6f64) {
            let v = Vec3::new(v1, v2, -(1.0 - v1 * v1 - v2 * v2).sqrt());
            let d = Vec3::new(d1, d2, -(1.0 - d1 * d1 - d2 * d2).sqrt());
            let g = subarray_gain(12, 24, v, d);
            prop_assert!((0.0..=288.0 * (1.0 + 1e-12)).contains(&g));
            prop_assert!((subarray_gain(12, 24, v, v) - 288.0).abs() < 1e-9);
        }
    }
}
