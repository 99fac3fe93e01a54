use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use leosim::sim::{self, Axis, Scenario};
use leosim::RunConfig;
use sha2::{Digest, Sha256};

const OUTPUT_ENV: &str = "LEOSIM_OUTPUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "leosim", about = "LEO massive-MIMO downlink simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set codebook.oversampling=1.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; falls back to $LEOSIM_OUTPUT_DIR, then `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// SNR/SINR/SE maps, beam cells and axis cuts over the region.
    Coverage(Common),
    /// Doppler shift and relative angular speed maps.
    Doppler(Common),
    /// Beam switching for a fixed user as the satellite passes.
    Timeline(Common),
    /// Pruned codebook and its cell map.
    Codebook(Common),
    /// Link budget table at one ground point.
    Linkbudget {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        x_km: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        y_km: f64,
    },
    /// Terminal antenna sweeps: leakage, pointing error, phase resolution.
    UtGain(Common),
    /// Every experiment above in one output directory.
    All(Common),
    /// Print the default configuration as TOML.
    DefaultConfig,
}

struct Run {
    scenario: Scenario,
    overrides: Vec<String>,
    out: PathBuf,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        cfg.apply_override(o).with_context(|| format!("applying --set {o}"))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare(common: &Common) -> Result<Run> {
    let cfg = load_config(common)?;
    let out = common
        .out
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    std::fs::create_dir_all(&out).with_context(|| format!("creating output directory {}", out.display()))?;
    Ok(Run {
        scenario: Scenario::new(&cfg)?,
        overrides: common.overrides.clone(),
        out,
    })
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn meta(&self, command: &str) -> Result<()> {
        let m = sim::run_meta(&self.scenario, command, &self.overrides);
        sim::write_json(&m, &self.path("run_meta.json"))?;
        Ok(())
    }
}

fn wrote(path: &Path) {
    println!("wrote {}", path.display());
}

fn coverage(run: &Run) -> Result<()> {
    let scn = &run.scenario;
    let res = scn.config.grid.resolution;
    let t = Instant::now();
    let grid = sim::run_coverage(scn, res)?;
    let cells = sim::run_cells(scn, res)?;
    let cuts = sim::run_axis_cuts(&grid)?;
    let p = run.path("coverage.csv");
    sim::write_coverage_csv(&grid, &p)?;
    wrote(&p);
    let p = run.path("cells.csv");
    sim::write_cells_csv(&cells, &scn.codebook, &p)?;
    wrote(&p);
    let p = run.path("cuts.csv");
    sim::write_axis_cuts_csv(&cuts, &p)?;
    wrote(&p);
    let p = run.path("codebook.json");
    sim::write_json(&sim::codebook_json(scn), &p)?;
    wrote(&p);

    let snr: Vec<f64> = grid.in_roi().map(|(_, p)| p.metrics.snr_db).collect();
    let sinr: Vec<f64> = grid.in_roi().map(|(_, p)| p.metrics.sinr_db).collect();
    let nadir = sim::link_report(scn, [0.0, 0.0])?;
    println!("beams: {}  oversampling: {}", scn.codebook.len(), scn.codebook.oversampling);
    println!("grid: {res}x{res}, {} points in region, {:.2} s", snr.len(), t.elapsed().as_secs_f64());
    println!(
        "SNR  dB: min {:.2}  max {:.2}  nadir {:.2}",
        snr.iter().copied().fold(f64::INFINITY, f64::min),
        snr.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        nadir.point.metrics.snr_db
    );
    println!(
        "SINR dB: min {:.2}  max {:.2}",
        sinr.iter().copied().fold(f64::INFINITY, f64::min),
        sinr.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    );
    if let (Ok(rx), Ok(ry)) = (
        sim::central_ripple_db(&grid, &scn.codebook, Axis::X),
        sim::central_ripple_db(&grid, &scn.codebook, Axis::Y),
    ) {
        println!("central ripple dB: x {rx:.2}  y {ry:.2}");
    }
    Ok(())
}

fn doppler(run: &Run) -> Result<()> {
    let scn = &run.scenario;
    let maps = sim::run_doppler_maps(scn, scn.config.grid.resolution)?;
    let p = run.path("doppler.csv");
    sim::write_doppler_csv(&maps, &p)?;
    wrote(&p);
    let cf = &maps.closed_form;
    println!("v_sat: {:.3} m/s", scn.v_sat_mps());
    println!(
        "max |doppler|: grid {:.3} kHz  exact {:.3} kHz  simplified {:.3} kHz",
        maps.max_abs_doppler_hz() / 1e3,
        cf.exact_hz / 1e3,
        cf.simplified_hz / 1e3
    );
    println!(
        "max w_rel: grid {:.4e} rad/s  closed form {:.4e} rad/s",
        maps.max_w_rel_rad_s(),
        cf.max_w_rel_rad_s
    );
    println!(
        "user motion at {} m/s: max {:.1} Hz  mean |.| {:.1} Hz",
        scn.config.ut.speed_mps, maps.user.max_hz, maps.user.mean_abs_hz
    );
    Ok(())
}

fn timeline(run: &Run) -> Result<()> {
    let scn = &run.scenario;
    let c = &scn.config.timeline;
    let tr = sim::run_timeline(scn, c.duration_s, c.step_s, [c.user_x_km * 1e3, c.user_y_km * 1e3])?;
    let p = run.path("timeline.csv");
    sim::write_timeline_csv(&tr, &p)?;
    wrote(&p);
    println!("samples: {}  switches: {}", tr.samples.len(), tr.switches.len());
    for s in &tr.switches {
        println!("  t = {:>7.2} s  beam {} -> {}", s.t_s, s.from, s.to);
    }
    if let Some(t) = tr.left_roi_at_s {
        println!("user left the region at t = {t:.2} s");
    }
    if let Some(d) = tr.full_dwell_s() {
        println!("first complete dwell: {d:.2} s");
    }
    Ok(())
}

fn codebook(run: &Run) -> Result<()> {
    let scn = &run.scenario;
    let p = run.path("codebook.json");
    sim::write_json(&sim::codebook_json(scn), &p)?;
    wrote(&p);
    let cells = sim::run_cells(scn, scn.config.grid.resolution)?;
    let p = run.path("cells.csv");
    sim::write_cells_csv(&cells, &scn.codebook, &p)?;
    wrote(&p);
    println!("beams: {}", scn.codebook.len());
    println!("oversampling: {}", scn.codebook.oversampling);
    println!("peak sub-array gain: {:.2} dB", scn.codebook.max_gain_db());
    Ok(())
}

fn ut_gain(run: &Run) -> Result<()> {
    let sweeps = sim::run_ut_sweeps(&run.scenario.config)?;
    let p = run.path("ut_sweeps.csv");
    sim::write_ut_sweeps_csv(&sweeps, &p)?;
    wrote(&p);
    println!("rows: {}", sweeps.rows.len());
    Ok(())
}

fn version() -> String {
    let digest = Sha256::digest(RunConfig::default().to_toml_string().as_bytes());
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("{} (default config {hex})", env!("CARGO_PKG_VERSION"))
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::DefaultConfig => {
            print!("{}", RunConfig::default().to_toml_string());
            Ok(())
        }
        Cmd::Linkbudget { common, x_km, y_km } => {
            let cfg = load_config(&common)?;
            let scn = Scenario::new(&cfg)?;
            println!("{}", sim::link_report(&scn, [x_km * 1e3, y_km * 1e3])?);
            Ok(())
        }
        Cmd::Coverage(c) => {
            let run = prepare(&c)?;
            coverage(&run)?;
            run.meta("coverage")
        }
        Cmd::Doppler(c) => {
            let run = prepare(&c)?;
            doppler(&run)?;
            run.meta("doppler")
        }
        Cmd::Timeline(c) => {
            let run = prepare(&c)?;
            timeline(&run)?;
            run.meta("timeline")
        }
        Cmd::Codebook(c) => {
            let run = prepare(&c)?;
            codebook(&run)?;
            run.meta("codebook")
        }
        Cmd::UtGain(c) => {
            let run = prepare(&c)?;
            ut_gain(&run)?;
            run.meta("ut-gain")
        }
        Cmd::All(c) => {
            let run = prepare(&c)?;
            coverage(&run)?;
            doppler(&run)?;
            timeline(&run)?;
            ut_gain(&run)?;
            run.meta("all")
        }
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().version(version()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
