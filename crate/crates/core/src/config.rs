//! Run configuration: TOML file, dotted-key overrides and validation.
//!
//! The built-in default is the reference Ku-band scenario (1300 km shell,
//! 60×72 satellite array with 5×3 RF chains, 24×24 terminal).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::antennas::TerminalAntenna;
use crate::channel::SPEED_OF_LIGHT_MPS;
use crate::codebook::HybridArchitecture;
use crate::error::{ConfigIssue, Error, Result};
use crate::geo_orbit::{design_roi, ConstellationGeometry, EarthModel, RoiEllipse};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub earth: EarthSection,
    pub constellation: ConstellationSection,
    pub roi: RoiSection,
    pub link: LinkSection,
    pub atmosphere: AtmosphereSection,
    pub sat: SatSection,
    pub codebook: CodebookSection,
    pub ut: UtSection,
    pub grid: GridSection,
    pub timeline: TimelineSection,
    pub sweeps: SweepSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarthSection {
    pub radius_km: f64,
    pub mu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstellationSection {
    pub n_planes: usize,
    pub n_sats: usize,
    pub inclination_deg: f64,
    pub altitude_km: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiMode {
    /// Use `semi_x_km`/`semi_y_km` as given.
    Fixed,
    /// Derive the semi-radii from the constellation so ellipses tile the
    /// globe.
    Designed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiSection {
    pub mode: RoiMode,
    pub semi_x_km: f64,
    pub semi_y_km: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    pub freq_ghz: f64,
    pub bandwidth_mhz: f64,
    /// Per RF chain.
    pub p_tx_dbw: f64,
    pub lp_cable_db: f64,
    pub noise_temp_dbk: f64,
    pub k_factor: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtmosphereMode {
    Constant,
    Computed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtmosphereSection {
    pub mode: AtmosphereMode,
    pub lp_at_db: f64,
    pub water_vapor_gm3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SatSection {
    pub nx: usize,
    pub ny: usize,
    pub rf_nx: usize,
    pub rf_ny: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookSection {
    pub oversampling: f64,
    /// Replace `oversampling` by the sweep result before every run.
    pub auto_oversampling: bool,
    pub o_min: f64,
    pub o_max: f64,
    pub o_step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtKind {
    Upa,
    LeakyWave,
    Metasurface,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtSection {
    pub kind: UtKind,
    pub nx: usize,
    pub ny: usize,
    pub alpha: f64,
    pub peak_gain_db: f64,
    pub rolloff: f64,
    /// Phase-shifter resolution of the UPA combiner; 0 = unquantised.
    pub phase_bits: u32,
    pub speed_mps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub resolution: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineSection {
    pub duration_s: f64,
    pub step_s: f64,
    pub user_x_km: f64,
    pub user_y_km: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_points: usize,
    pub error_max_deg: f64,
    pub error_points: usize,
    pub error_trials: usize,
    pub bits_max: u32,
    pub hybrid_rf: usize,
    pub elevation_deg: f64,
    pub doppler_trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            earth: EarthSection {
                radius_km: 6378.137,
                mu: 3.986004418e14,
            },
            constellation: ConstellationSection {
                n_planes: 83,
                n_sats: 53,
                inclination_deg: 53.0,
                altitude_km: 1300.0,
            },
            roi: RoiSection {
                mode: RoiMode::Fixed,
                semi_x_km: 534.1,
                semi_y_km: 170.5,
            },
            link: LinkSection {
                freq_ghz: 11.45,
                bandwidth_mhz: 250.0,
                p_tx_dbw: 15.0,
                lp_cable_db: 0.0,
                noise_temp_dbk: 24.1,
                k_factor: 10.0,
            },
            atmosphere: AtmosphereSection {
                mode: AtmosphereMode::Constant,
                lp_at_db: 0.017,
                water_vapor_gm3: 7.5,
            },
            sat: SatSection {
                nx: 60,
                ny: 72,
                rf_nx: 5,
                rf_ny: 3,
            },
            codebook: CodebookSection {
                oversampling: 1.2,
                auto_oversampling: false,
                o_min: 0.5,
                o_max: 3.0,
                o_step: 0.1,
            },
            ut: UtSection {
                kind: UtKind::Upa,
                nx: 24,
                ny: 24,
                alpha: 0.1,
                peak_gain_db: 33.0,
                rolloff: 1.2,
                phase_bits: 0,
                speed_mps: 30.0,
            },
            grid: GridSection { resolution: 201 },
            timeline: TimelineSection {
                duration_s: 200.0,
                step_s: 1.0,
                user_x_km: 0.0,
                user_y_km: 0.0,
            },
            sweeps: SweepSection {
                alpha_min: 1e-3,
                alpha_max: 1.0,
                alpha_points: 31,
                error_max_deg: 8.0,
                error_points: 9,
                error_trials: 400,
                bits_max: 8,
                hybrid_rf: 4,
                elevation_deg: 60.0,
                doppler_trials: 100_000,
            },
            output: OutputSection { dir: "out".into() },
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| {
            Error::Config(vec![ConfigIssue {
                key: "<toml>".into(),
                message: e.message().trim().to_string(),
            }])
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(vec![ConfigIssue {
                key: path.display().to_string(),
                message: e.to_string(),
            }])
        })?;
        Self::from_toml_str(&text)
    }

    /// Canonical TOML text; `load(save(c)) == c` and saving again gives the
    /// same bytes.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration always serialises")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    /// Every settable dotted key, in file order.
    pub fn keys(&self) -> Vec<String> {
        let value = toml::Value::try_from(self).expect("configuration always serialises");
        let mut out = Vec::new();
        collect_keys(&value, String::new(), &mut out);
        out
    }

    /// Applies `key.path=value`. The value is parsed with the type of the
    /// current entry; unknown keys are reported with the closest valid one.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "expected key.path=value"))?;
        let (key, raw) = (key.trim(), raw.trim());
        let mut root = toml::Value::try_from(&*self).expect("configuration always serialises");
        let mut slot = &mut root;
        for part in key.split('.') {
            let next = slot.as_table_mut().and_then(|t| t.get_mut(part));
            match next {
                Some(v) => slot = v,
                None => return Err(unknown_key(key, &self.keys())),
            }
        }
        if slot.is_table() {
            return Err(unknown_key(key, &self.keys()));
        }
        *slot = parse_like(slot, raw).ok_or_else(|| {
            Error::config(key, format!("cannot parse {raw:?} as {}", slot.type_str()))
        })?;
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(key, e.message().trim().to_string()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        let mut check = |ok: bool, key: &str, msg: &str| {
            if !ok {
                issues.push(ConfigIssue {
                    key: key.into(),
                    message: msg.into(),
                });
            }
        };
        let pos = |x: f64| x > 0.0 && x.is_finite();
        check(pos(self.earth.radius_km), "earth.radius_km", "must be positive");
        check(pos(self.earth.mu), "earth.mu", "must be positive");
        let c = &self.constellation;
        check(c.n_planes >= 1, "constellation.n_planes", "must be at least 1");
        check(c.n_sats >= 1, "constellation.n_sats", "must be at least 1");
        check(
            c.inclination_deg > 0.0 && c.inclination_deg <= 90.0,
            "constellation.inclination_deg",
            "must lie in (0, 90]",
        );
        check(pos(c.altitude_km), "constellation.altitude_km", "must be positive");
        if self.roi.mode == RoiMode::Fixed {
            check(pos(self.roi.semi_x_km), "roi.semi_x_km", "must be positive");
            check(pos(self.roi.semi_y_km), "roi.semi_y_km", "must be positive");
        }
        let l = &self.link;
        check(pos(l.freq_ghz), "link.freq_ghz", "must be positive");
        check(pos(l.bandwidth_mhz), "link.bandwidth_mhz", "must be positive");
        check(l.p_tx_dbw.is_finite(), "link.p_tx_dbw", "must be finite");
        check(l.lp_cable_db >= 0.0, "link.lp_cable_db", "must be non-negative");
        check(l.noise_temp_dbk.is_finite(), "link.noise_temp_dbk", "must be finite");
        check(pos(l.k_factor), "link.k_factor", "must be positive");
        check(self.atmosphere.lp_at_db >= 0.0, "atmosphere.lp_at_db", "must be non-negative");
        check(
            self.atmosphere.water_vapor_gm3 >= 0.0,
            "atmosphere.water_vapor_gm3",
            "must be non-negative",
        );
        let s = &self.sat;
        check(s.nx >= 1, "sat.nx", "must be at least 1");
        check(s.ny >= 1, "sat.ny", "must be at least 1");
        check(
            s.rf_nx >= 1 && s.nx.is_multiple_of(s.rf_nx.max(1)),
            "sat.rf_nx",
            "must be at least 1 and divide sat.nx",
        );
        check(
            s.rf_ny >= 1 && s.ny.is_multiple_of(s.rf_ny.max(1)),
            "sat.rf_ny",
            "must be at least 1 and divide sat.ny",
        );
        let cb = &self.codebook;
        check(pos(cb.oversampling), "codebook.oversampling", "must be positive");
        check(pos(cb.o_min), "codebook.o_min", "must be positive");
        check(cb.o_max >= cb.o_min, "codebook.o_max", "must be at least codebook.o_min");
        check(pos(cb.o_step), "codebook.o_step", "must be positive");
        let u = &self.ut;
        check(u.nx >= 1, "ut.nx", "must be at least 1");
        check(u.ny >= 1, "ut.ny", "must be at least 1");
        check(pos(u.alpha), "ut.alpha", "must be positive");
        check(u.peak_gain_db.is_finite(), "ut.peak_gain_db", "must be finite");
        check(u.rolloff >= 0.0, "ut.rolloff", "must be non-negative");
        check(u.speed_mps >= 0.0, "ut.speed_mps", "must be non-negative");
        check(u.phase_bits <= 16, "ut.phase_bits", "must be at most 16");
        check(
            u.phase_bits == 0 || u.kind == UtKind::Upa,
            "ut.phase_bits",
            "phase quantisation applies to the upa terminal only",
        );
        check(self.grid.resolution <= 5001, "grid.resolution", "must not exceed 5001");
        let t = &self.timeline;
        check(pos(t.duration_s), "timeline.duration_s", "must be positive");
        check(pos(t.step_s), "timeline.step_s", "must be positive");
        check(t.user_x_km.is_finite(), "timeline.user_x_km", "must be finite");
        check(t.user_y_km.is_finite(), "timeline.user_y_km", "must be finite");
        let w = &self.sweeps;
        check(pos(w.alpha_min), "sweeps.alpha_min", "must be positive");
        check(w.alpha_max >= w.alpha_min, "sweeps.alpha_max", "must be at least sweeps.alpha_min");
        check(w.alpha_points >= 2, "sweeps.alpha_points", "must be at least 2");
        check(w.error_max_deg >= 0.0, "sweeps.error_max_deg", "must be non-negative");
        check(w.error_points >= 2, "sweeps.error_points", "must be at least 2");
        check(w.error_trials >= 1, "sweeps.error_trials", "must be at least 1");
        check((1..=30).contains(&w.bits_max), "sweeps.bits_max", "must lie in 1..=30");
        check(w.hybrid_rf >= 1, "sweeps.hybrid_rf", "must be at least 1");
        check(
            w.elevation_deg > 0.0 && w.elevation_deg <= 90.0,
            "sweeps.elevation_deg",
            "must lie in (0, 90]",
        );
        check(w.doppler_trials >= 1, "sweeps.doppler_trials", "must be at least 1");
        check(!self.output.dir.trim().is_empty(), "output.dir", "must not be empty");
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }

    pub fn earth(&self) -> Result<EarthModel<f64>> {
        EarthModel::new(self.earth.radius_km * 1e3, self.earth.mu)
    }

    pub fn geometry(&self) -> Result<ConstellationGeometry<f64>> {
        let c = &self.constellation;
        ConstellationGeometry::new(
            c.n_planes,
            c.n_sats,
            c.inclination_deg.to_radians(),
            c.altitude_km * 1e3,
        )
    }

    pub fn roi(&self) -> Result<RoiEllipse<f64>> {
        match self.roi.mode {
            RoiMode::Fixed => RoiEllipse::new(self.roi.semi_x_km * 1e3, self.roi.semi_y_km * 1e3),
            RoiMode::Designed => Ok(design_roi(&self.geometry()?, &self.earth()?)),
        }
    }

    pub fn arch(&self) -> Result<HybridArchitecture> {
        HybridArchitecture::new(self.sat.nx, self.sat.ny, self.sat.rf_nx, self.sat.rf_ny)
    }

    pub fn freq_hz(&self) -> f64 {
        self.link.freq_ghz * 1e9
    }

    pub fn bandwidth_hz(&self) -> f64 {
        self.link.bandwidth_mhz * 1e6
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT_MPS / self.freq_hz()
    }

    pub fn terminal(&self) -> Result<TerminalAntenna<f64>> {
        let u = &self.ut;
        match u.kind {
            UtKind::Upa => TerminalAntenna::upa(u.nx, u.ny, self.wavelength_m()),
            UtKind::LeakyWave => TerminalAntenna::leaky_wave(u.nx, u.ny, u.alpha, self.wavelength_m()),
            UtKind::Metasurface => TerminalAntenna::metasurface(u.peak_gain_db, u.rolloff),
        }
    }
}

fn collect_keys(v: &toml::Value, prefix: String, out: &mut Vec<String>) {
    match v.as_table() {
        Some(t) => {
            for (k, child) in t {
                let p = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                collect_keys(child, p, out);
            }
        }
        None => out.push(prefix),
    }
}

fn unknown_key(key: &str, valid: &[String]) -> Error {
    let nearest = valid
        .iter()
        .min_by_key(|k| strsim::levenshtein(k, key))
        .cloned()
        .unwrap_or_default();
    Error::config(key, format!("unknown key; did you mean `{nearest}`?"))
}

fn parse_like(current: &toml::Value, raw: &str) -> Option<toml::Value> {
    use toml::Value;
    match current {
        Value::Integer(_) => raw.parse::<i64>().ok().map(Value::Integer),
        Value::Float(_) => raw.parse::<f64>().ok().map(Value::Float),
        Value::Boolean(_) => raw.parse::<bool>().ok().map(Value::Boolean),
        Value::String(_) => Some(Value::String(raw.trim_matches('"').to_string())),
        _ => None,
    }
}
