//! Commands behind the `pcs-isac` binary. Each command is a pure function of
//! the run configuration and writes its artifacts under `cfg.out`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::comms_metrics::{mutual_information, rate_curve, rate_curve_csv, ChannelSpec};
use crate::config::RunConfig;
use crate::constellation::{Constellation, Distribution};
use crate::detection::{calibrate_so_cfar, pd_curve, pd_curve_csv, pd_curve_with_alpha, CfarWindow, DetectionScenario};
use crate::error::{Error, Result};
use crate::numfmt::{csv_row, sig9};
use crate::ofdm_af::{analytic_moments, average_af, average_zero_doppler, SincConvention};
use crate::pcs_heuristic::{feasible_c0_range, solve_heuristic};
use crate::pcs_optimal::{run_mba, MbaConfig, Method, PcsResult};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Tradeoff,
    Af,
    Air,
    Shape,
    Detect,
    LutExport,
}

/// Flag values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub method: Option<Method>,
    pub c0: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Replaces the main Monte-Carlo count of the command.
    pub n_mc: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig, cmd: Command) -> Result<()> {
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(c0) = self.c0 {
            cfg.c0 = Some(c0);
            // A c0 flag on a sweeping command narrows the sweep to that point.
            if matches!(cmd, Command::Tradeoff | Command::LutExport) {
                cfg.sweep = None;
            }
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(n) = self.n_mc {
            match cmd {
                Command::Tradeoff | Command::Shape | Command::LutExport => cfg.n_mc = n,
                Command::Af => cfg.af.n_mc = n,
                Command::Air => cfg.report_n_mc = n,
                Command::Detect => cfg.detection.n_mc = n,
            }
        }
        cfg.validate()
    }
}

/// Files written and warnings raised by a command.
#[derive(Debug, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
    /// Solver runs that stopped at the iteration cap.
    pub nonconverged: usize,
}

impl Report {
    fn write(&mut self, dir: &Path, name: &str, contents: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let path = dir.join(name);
        fs::write(&path, contents)?;
        self.files.push(path);
        Ok(())
    }
}

pub fn constellation(cfg: &RunConfig) -> Result<Constellation> {
    Constellation::new(cfg.family, cfg.order).map_err(|e| Error::Config(format!("[constellation] order: {e}")))
}

/// Clamp into the feasible range, with a warning when the value moves.
pub fn clamp_c0(c: &Constellation, c0: f64, warnings: &mut Vec<String>) -> Result<f64> {
    let (lo, hi) = feasible_c0_range(c)?;
    let used = c0.clamp(lo, hi);
    if used != c0 {
        warnings.push(format!(
            "warning: c0 = {} outside the feasible range [{}, {}] of {}; using {}",
            sig9(c0),
            sig9(lo),
            sig9(hi),
            c.id(),
            sig9(used)
        ));
    }
    Ok(used)
}

/// Shape with either solver. Rates are estimated from the same seed, so the
/// two methods are compared on common noise.
pub fn solve(c: &Constellation, cfg: &RunConfig, c0: f64, method: Method) -> Result<PcsResult> {
    match method {
        Method::Optimal => {
            let mut m = MbaConfig::new(c0, cfg.sigma2);
            m.eps = cfg.eps;
            m.max_iter = cfg.max_iter;
            m.n_mc = cfg.n_mc;
            m.report_n_mc = cfg.report_n_mc;
            run_mba(c, &m, cfg.seed)
        }
        Method::Heuristic => {
            let sol = solve_heuristic(c, c0)?;
            let air = mutual_information(
                c,
                &sol.distribution,
                &ChannelSpec::new(cfg.sigma2)?,
                cfg.report_n_mc,
                seeds::derive(cfg.seed, "report"),
            )?;
            Ok(PcsResult::from_heuristic(&sol, &air, c))
        }
    }
}

/// Uniform unless a c0 is configured, in which case the selected solver shapes it.
fn selected_distribution(c: &Constellation, cfg: &RunConfig, report: &mut Report) -> Result<Distribution> {
    match cfg.c0 {
        None => Ok(Distribution::uniform(c)),
        Some(c0) => {
            let used = clamp_c0(c, c0, &mut report.warnings)?;
            let r = solve(c, cfg, used, cfg.method)?;
            if !r.converged {
                report.nonconverged += 1;
            }
            r.distribution(c)
        }
    }
}

fn scenario(c: &Constellation, d: &Distribution, cfg: &RunConfig) -> Result<DetectionScenario> {
    let s = &cfg.detection;
    let mut sc = DetectionScenario::new(c, d)?;
    sc.ofdm = cfg.ofdm;
    sc.target_cell = s.target_cell;
    sc.si_cell = s.si_cell;
    sc.si_db = s.si_db;
    sc.pfa = s.pfa;
    sc.n_mc = s.n_mc;
    sc.snr_db = s.sensing_snr_db;
    sc.window = CfarWindow { reference: s.reference_cells, guard: s.guard_cells };
    sc.validate().map_err(|e| Error::Config(format!("[detection]: {e}")))?;
    Ok(sc)
}

#[derive(Debug, Clone)]
pub struct TradeoffRow {
    pub c0: f64,
    pub optimal: PcsResult,
    pub heuristic: PcsResult,
    pub pd_optimal: f64,
    pub pd_heuristic: f64,
}

/// c0 grid after clamping; an error when the whole sweep misses the range.
fn sweep_points(c: &Constellation, cfg: &RunConfig, warnings: &mut Vec<String>) -> Result<Vec<f64>> {
    let points = cfg.c0_points()?;
    let (lo, hi) = feasible_c0_range(c)?;
    let first = points.iter().cloned().fold(f64::INFINITY, f64::min);
    let last = points.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if last < lo - 1e-12 || first > hi + 1e-12 {
        return Err(Error::Config(format!(
            "[shaping] c0_min: sweep [{}, {}] lies outside the feasible range [{}, {}] of {}",
            sig9(first),
            sig9(last),
            sig9(lo),
            sig9(hi),
            c.id()
        )));
    }
    points.iter().map(|&v| clamp_c0(c, v, warnings)).collect()
}

pub fn tradeoff_rows(cfg: &RunConfig, report: &mut Report) -> Result<Vec<TradeoffRow>> {
    let c = constellation(cfg)?;
    let points = sweep_points(&c, cfg, &mut report.warnings)?;
    let template = scenario(&c, &Distribution::uniform(&c), cfg)?;
    let alpha = calibrate_so_cfar(&template, cal_cells(cfg), cfg.seed)?;
    let pd = |d: &Distribution| -> Result<f64> {
        let mut sc = template.clone();
        sc.distribution = d.clone();
        Ok(pd_curve_with_alpha(&sc, &[cfg.detection.sensing_snr_db], alpha, cfg.seed)?[0].pd)
    };
    let mut rows = Vec::with_capacity(points.len());
    for c0 in points {
        let optimal = solve(&c, cfg, c0, Method::Optimal)?;
        let heuristic = solve(&c, cfg, c0, Method::Heuristic)?;
        if !optimal.converged {
            report.nonconverged += 1;
        }
        let pd_optimal = pd(&optimal.distribution(&c)?)?;
        let pd_heuristic = pd(&heuristic.distribution(&c)?)?;
        rows.push(TradeoffRow { c0, optimal, heuristic, pd_optimal, pd_heuristic });
    }
    Ok(rows)
}

fn cal_cells(cfg: &RunConfig) -> usize {
    crate::detection::DEFAULT_CALIBRATION_CELLS.max((100.0 / cfg.detection.pfa).ceil() as usize)
}

pub fn tradeoff_csv(rows: &[TradeoffRow]) -> String {
    let w = rows.first().map_or(0, |r| r.optimal.ring_mass.len());
    let mut out = String::from(
        "c0,air_optimal,air_optimal_se,air_heuristic,air_heuristic_se,fourth_moment_optimal,pd_optimal,pd_heuristic",
    );
    for k in 0..w {
        let _ = write!(out, ",optimal_mass_{k}");
    }
    for k in 0..w {
        let _ = write!(out, ",heuristic_mass_{k}");
    }
    out.push('\n');
    for r in rows {
        let mut v = vec![
            r.c0,
            r.optimal.air_bits,
            r.optimal.air_std_err,
            r.heuristic.air_bits,
            r.heuristic.air_std_err,
            r.optimal.fourth_moment,
            r.pd_optimal,
            r.pd_heuristic,
        ];
        v.extend(&r.optimal.ring_mass);
        v.extend(&r.heuristic.ring_mass);
        out.push_str(&csv_row(&v));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LutEntry {
    pub c0: f64,
    pub sigma2: f64,
    pub ring_mass: Vec<f64>,
    pub air_bits: f64,
    pub method: Method,
}

/// Entries sorted by c0; ties keep their input order.
pub fn lut_json(results: &[PcsResult], sigma2: f64) -> Result<String> {
    if results.is_empty() {
        return Err(Error::Config("[shaping] c0_min: look-up table would be empty".into()));
    }
    let mut entries: Vec<LutEntry> = results
        .iter()
        .map(|r| LutEntry { c0: r.c0, sigma2, ring_mass: r.ring_mass.clone(), air_bits: r.air_bits, method: r.method })
        .collect();
    entries.sort_by(|a, b| a.c0.total_cmp(&b.c0));
    let mut s = serde_json::to_string_pretty(&entries)?;
    s.push('\n');
    Ok(s)
}

pub fn cmd_tradeoff(cfg: &RunConfig) -> Result<Report> {
    let mut report = Report::default();
    let rows = tradeoff_rows(cfg, &mut report)?;
    report.write(&cfg.out, "tradeoff.csv", &tradeoff_csv(&rows))?;
    let results: Vec<PcsResult> = rows.iter().flat_map(|r| [r.optimal.clone(), r.heuristic.clone()]).collect();
    report.write(&cfg.out, "lut.json", &lut_json(&results, cfg.sigma2)?)?;
    Ok(report)
}

pub fn cmd_lut_export(cfg: &RunConfig) -> Result<Report> {
    let mut report = Report::default();
    let c = constellation(cfg)?;
    let points = sweep_points(&c, cfg, &mut report.warnings)?;
    let mut results = Vec::with_capacity(points.len());
    for c0 in points {
        let r = solve(&c, cfg, c0, cfg.method)?;
        if !r.converged {
            report.nonconverged += 1;
        }
        results.push(r);
    }
    report.write(&cfg.out, "lut.json", &lut_json(&results, cfg.sigma2)?)?;
    Ok(report)
}

pub fn cmd_shape(cfg: &RunConfig) -> Result<Report> {
    let mut report = Report::default();
    let c = constellation(cfg)?;
    let c0 = cfg.c0.ok_or_else(|| Error::Config("[shaping] c0: required by the shape command".into()))?;
    let used = clamp_c0(&c, c0, &mut report.warnings)?;
    let r = solve(&c, cfg, used, cfg.method)?;
    if !r.converged {
        report.nonconverged += 1;
    }
    let mut json = r.to_json()?;
    json.push('\n');
    report.write(&cfg.out, "shape.json", &json)?;
    Ok(report)
}

pub fn cmd_air(cfg: &RunConfig) -> Result<Report> {
    let mut report = Report::default();
    let c = constellation(cfg)?;
    let d = selected_distribution(&c, cfg, &mut report)?;
    let curve = rate_curve(&c, &d, &cfg.snr_db, cfg.report_n_mc, seeds::derive(cfg.seed, "air"))?;
    report.write(&cfg.out, "air.csv", &rate_curve_csv(&curve))?;
    Ok(report)
}

pub fn cmd_detect(cfg: &RunConfig) -> Result<Report> {
    let mut report = Report::default();
    let c = constellation(cfg)?;
    let d = selected_distribution(&c, cfg, &mut report)?;
    let sc = scenario(&c, &d, cfg)?;
    let curve = pd_curve(&sc, &cfg.detection.snr_db, cfg.seed)?;
    report.write(&cfg.out, "pd.csv", &pd_curve_csv(&curve))?;
    Ok(report)
}

/// Zero-Doppler slice with the closed-form variances at each delay.
pub fn af_slice_csv(c: &Constellation, d: &Distribution, cfg: &RunConfig) -> Result<String> {
    let slice = average_zero_doppler(c, d, &cfg.ofdm, cfg.af.n_mc, seeds::derive(cfg.seed, "af-slice"), true)?;
    let power = slice.power().expect("power grid");
    let mut out = String::from("tau,value_db,var_s,var_c\n");
    for (tau, p) in slice.tau_axis.iter().zip(power) {
        let m = analytic_moments(c, d, &cfg.ofdm, *tau, 0.0, SincConvention::default())?;
        out.push_str(&csv_row(&[*tau, *p, m.var_s, m.var_c]));
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_af(cfg: &RunConfig) -> Result<Report> {
    let mut report = Report::default();
    let c = constellation(cfg)?;
    let d = selected_distribution(&c, cfg, &mut report)?;
    let tau: Vec<f64> = cfg.af.tau.points().iter().map(|t| t * cfg.ofdm.t_p).collect();
    let nu: Vec<f64> = cfg.af.nu.points().iter().map(|v| v * cfg.ofdm.delta_f).collect();
    let grid = average_af(&c, &d, &cfg.ofdm, &tau, &nu, cfg.af.n_mc, seeds::derive(cfg.seed, "af-grid"), true)?;
    report.write(&cfg.out, "af_grid.csv", &grid.to_csv())?;
    report.write(&cfg.out, "af_slice.csv", &af_slice_csv(&c, &d, cfg)?)?;
    Ok(report)
}

pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Report> {
    match cmd {
        Command::Tradeoff => cmd_tradeoff(cfg),
        Command::Af => cmd_af(cfg),
        Command::Air => cmd_air(cfg),
        Command::Shape => cmd_shape(cfg),
        Command::Detect => cmd_detect(cfg),
        Command::LutExport => cmd_lut_export(cfg),
    }
}

/// Process exit status for an error: 2 for configuration problems, 3 for
/// numerical non-convergence, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::Infeasible(_)
        | Error::UnsupportedConstellation(_)
        | Error::NonFinite(_) => 2,
        Error::NonConvergence(_) | Error::Overflow(_, _) => 3,
        _ => 1,
    }
}
