//! INI run configuration.
//!
//! ```ini
//! [constellation]
//! family = qam
//! order = 64
//!
//! [channel]
//! sigma2 = 0.01
//! snr_db = 0, 10, 20
//!
//! [shaping]
//! c0_min = 1.0363
//! c0_max = 1.3805
//! c0_step = 0.05
//!
//! [run]
//! seed = 1
//! ```
//!
//! Every key is optional; see [`RunConfig::default`] for the defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;

use crate::constellation::Family;
use crate::error::{Error, Result};
use crate::ofdm_af::OfdmConfig;
use crate::pcs_optimal::Method;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sweep {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Sweep {
    /// `min, min + step, ...` up to `max`, with `max` appended when the last
    /// step falls short of it by more than a hundredth of a step.
    pub fn points(&self) -> Vec<f64> {
        if self.step <= 0.0 || self.max <= self.min {
            return vec![self.min];
        }
        let mut out = Vec::new();
        let mut i = 0usize;
        loop {
            let v = self.min + i as f64 * self.step;
            if v > self.max + 1e-9 * self.step {
                break;
            }
            out.push(v.min(self.max));
            i += 1;
        }
        if out.last().is_some_and(|l| self.max - l > 1e-2 * self.step) {
            out.push(self.max);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AfSettings {
    /// Delay axis in units of the symbol duration.
    pub tau: Sweep,
    /// Doppler axis in units of the subcarrier spacing.
    pub nu: Sweep,
    pub n_mc: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSettings {
    pub snr_db: Vec<f64>,
    /// Sensing SNR at which the tradeoff sweep reports P_d.
    pub sensing_snr_db: f64,
    pub si_db: Option<f64>,
    pub pfa: f64,
    pub target_cell: usize,
    pub si_cell: usize,
    pub reference_cells: usize,
    pub guard_cells: usize,
    pub n_mc: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub family: Family,
    pub order: usize,
    pub ofdm: OfdmConfig,
    pub sigma2: f64,
    pub snr_db: Vec<f64>,
    pub method: Method,
    pub c0: Option<f64>,
    pub sweep: Option<Sweep>,
    pub eps: f64,
    pub max_iter: usize,
    /// Inner Monte-Carlo size of the optimal solver.
    pub n_mc: usize,
    /// Draws for every reported rate.
    pub report_n_mc: usize,
    pub af: AfSettings,
    pub detection: DetectionSettings,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            family: Family::Qam,
            order: 16,
            ofdm: OfdmConfig::new(64, 1).expect("valid default"),
            sigma2: 0.01,
            snr_db: (0..=6).map(|k| 5.0 * k as f64).collect(),
            method: Method::Optimal,
            c0: None,
            sweep: None,
            eps: 1e-5,
            max_iter: 200,
            n_mc: 10_000,
            report_n_mc: 100_000,
            af: AfSettings {
                tau: Sweep { min: -0.5, max: 0.5, step: 1.0 / 64.0 },
                nu: Sweep { min: -2.0, max: 2.0, step: 0.25 },
                n_mc: 1000,
            },
            detection: DetectionSettings {
                snr_db: (0..=10).map(|k| 6.0 + k as f64).collect(),
                sensing_snr_db: 12.0,
                si_db: Some(10.0),
                pfa: 1e-4,
                target_cell: 8,
                si_cell: 0,
                reference_cells: 16,
                guard_cells: 2,
                n_mc: 5000,
            },
            seed: 1,
            out: PathBuf::from("out"),
        }
    }
}

const KEYS: &[(&str, &[&str])] = &[
    ("constellation", &["family", "order"]),
    ("ofdm", &["subcarriers", "symbols"]),
    ("channel", &["sigma2", "snr_db"]),
    ("shaping", &["method", "c0", "c0_min", "c0_max", "c0_step", "eps", "max_iter", "n_mc", "report_n_mc"]),
    ("af", &["tau_min", "tau_max", "tau_step", "nu_min", "nu_max", "nu_step", "n_mc"]),
    (
        "detection",
        &[
            "snr_db",
            "sensing_snr_db",
            "si_db",
            "pfa",
            "target_cell",
            "si_cell",
            "reference_cells",
            "guard_cells",
            "n_mc",
        ],
    ),
    ("run", &["seed", "out"]),
];

fn bad(section: &str, key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("[{section}] {key}: {msg}"))
}

struct Reader<'a> {
    ini: &'a Ini,
}

impl Reader<'_> {
    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.ini.section(Some(section)).and_then(|p| p.get(key)).map(str::trim)
    }

    fn parse<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(section, key)
            .map(|v| v.parse::<T>().map_err(|e| bad(section, key, format!("'{v}': {e}"))))
            .transpose()
    }

    fn set<T: FromStr>(&self, section: &str, key: &str, target: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.parse(section, key)? {
            *target = v;
        }
        Ok(())
    }

    fn list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.raw(section, key) else { return Ok(None) };
        let items: std::result::Result<Vec<f64>, _> = v.split(',').map(|s| s.trim().parse::<f64>()).collect();
        match items {
            Ok(xs) if !xs.is_empty() && xs.iter().all(|x| x.is_finite()) => Ok(Some(xs)),
            Ok(_) => Err(bad(section, key, "expected a nonempty list of finite numbers")),
            Err(e) => Err(bad(section, key, e)),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_ini_str(&text)
    }

    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (section, props) in ini.iter() {
            let Some(name) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(Error::Config(format!("{k}: key outside any section")));
                }
                continue;
            };
            let Some((_, allowed)) = KEYS.iter().find(|(s, _)| *s == name) else {
                return Err(Error::Config(format!("[{name}]: unknown section")));
            };
            for (k, _) in props.iter() {
                if !allowed.contains(&k) {
                    return Err(bad(name, k, "unknown key"));
                }
            }
        }

        let r = Reader { ini: &ini };
        let mut cfg = RunConfig::default();
        r.set("constellation", "family", &mut cfg.family)?;
        r.set("constellation", "order", &mut cfg.order)?;

        let mut l = cfg.ofdm.l;
        let mut n = cfg.ofdm.n;
        r.set("ofdm", "subcarriers", &mut l)?;
        r.set("ofdm", "symbols", &mut n)?;
        cfg.ofdm = OfdmConfig::new(l, n).map_err(|e| bad("ofdm", "subcarriers", e))?;

        r.set("channel", "sigma2", &mut cfg.sigma2)?;
        if let Some(v) = r.list("channel", "snr_db")? {
            cfg.snr_db = v;
        }

        if let Some(m) = r.raw("shaping", "method") {
            cfg.method = parse_method(m).map_err(|e| bad("shaping", "method", e))?;
        }
        cfg.c0 = r.parse("shaping", "c0")?;
        let sweep = (
            r.parse::<f64>("shaping", "c0_min")?,
            r.parse::<f64>("shaping", "c0_max")?,
            r.parse::<f64>("shaping", "c0_step")?,
        );
        cfg.sweep = match sweep {
            (None, None, None) => None,
            (Some(min), Some(max), step) => Some(Sweep { min, max, step: step.unwrap_or(max - min) }),
            _ => return Err(bad("shaping", "c0_min", "c0_min and c0_max must be given together")),
        };
        r.set("shaping", "eps", &mut cfg.eps)?;
        r.set("shaping", "max_iter", &mut cfg.max_iter)?;
        r.set("shaping", "n_mc", &mut cfg.n_mc)?;
        r.set("shaping", "report_n_mc", &mut cfg.report_n_mc)?;

        r.set("af", "tau_min", &mut cfg.af.tau.min)?;
        r.set("af", "tau_max", &mut cfg.af.tau.max)?;
        r.set("af", "tau_step", &mut cfg.af.tau.step)?;
        r.set("af", "nu_min", &mut cfg.af.nu.min)?;
        r.set("af", "nu_max", &mut cfg.af.nu.max)?;
        r.set("af", "nu_step", &mut cfg.af.nu.step)?;
        r.set("af", "n_mc", &mut cfg.af.n_mc)?;

        let d = &mut cfg.detection;
        if let Some(v) = r.list("detection", "snr_db")? {
            d.snr_db = v;
        }
        r.set("detection", "sensing_snr_db", &mut d.sensing_snr_db)?;
        if let Some(v) = r.raw("detection", "si_db") {
            d.si_db = if v.eq_ignore_ascii_case("off") {
                None
            } else {
                Some(v.parse().map_err(|e| bad("detection", "si_db", format!("'{v}': {e}")))?)
            };
        }
        r.set("detection", "pfa", &mut d.pfa)?;
        r.set("detection", "target_cell", &mut d.target_cell)?;
        r.set("detection", "si_cell", &mut d.si_cell)?;
        r.set("detection", "reference_cells", &mut d.reference_cells)?;
        r.set("detection", "guard_cells", &mut d.guard_cells)?;
        r.set("detection", "n_mc", &mut d.n_mc)?;

        r.set("run", "seed", &mut cfg.seed)?;
        if let Some(v) = r.raw("run", "out") {
            cfg.out = PathBuf::from(v);
        }

        cfg.validate()?;
        Ok(cfg)
    }

    /// Range and positivity checks, naming the offending key.
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, s: &str, k: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(bad(s, k, format!("must be positive and finite, got {v}")))
            }
        };
        positive(self.sigma2, "channel", "sigma2")?;
        positive(self.eps, "shaping", "eps")?;
        for (v, s, k) in [
            (self.max_iter, "shaping", "max_iter"),
            (self.n_mc, "shaping", "n_mc"),
            (self.af.n_mc, "af", "n_mc"),
            (self.detection.n_mc, "detection", "n_mc"),
        ] {
            if v == 0 {
                return Err(bad(s, k, "must be at least 1"));
            }
        }
        if self.report_n_mc < 1000 {
            return Err(bad("shaping", "report_n_mc", "must be at least 1000"));
        }
        if let Some(c0) = self.c0 {
            if !c0.is_finite() {
                return Err(bad("shaping", "c0", "must be finite"));
            }
        }
        if let Some(s) = self.sweep {
            if !(s.min.is_finite() && s.max.is_finite() && s.min <= s.max) {
                return Err(bad("shaping", "c0_min", "sweep range is empty"));
            }
            if (s.step.is_nan() || s.step <= 0.0) && s.max > s.min {
                return Err(bad("shaping", "c0_step", "must be positive"));
            }
        }
        for (axis, name) in [(&self.af.tau, "tau"), (&self.af.nu, "nu")] {
            if !(axis.min.is_finite() && axis.max.is_finite() && axis.min <= axis.max && axis.step > 0.0) {
                return Err(bad("af", &format!("{name}_step"), "axis range is empty"));
            }
        }
        let d = &self.detection;
        if !(d.pfa > 0.0 && d.pfa < 1.0) {
            return Err(bad("detection", "pfa", "must lie in (0, 1)"));
        }
        if !d.sensing_snr_db.is_finite() {
            return Err(bad("detection", "sensing_snr_db", "must be finite"));
        }
        Ok(())
    }

    /// c0 values for sweeping commands: the sweep, else the single c0.
    pub fn c0_points(&self) -> Result<Vec<f64>> {
        match (self.sweep, self.c0) {
            (Some(s), _) => Ok(s.points()),
            (None, Some(c0)) => Ok(vec![c0]),
            (None, None) => Err(bad("shaping", "c0_min", "a c0 or a c0 sweep is required")),
        }
    }
}

pub fn parse_method(s: &str) -> std::result::Result<Method, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "optimal" => Ok(Method::Optimal),
        "heuristic" => Ok(Method::Heuristic),
        other => Err(format!("unknown method '{other}' (expected optimal or heuristic)")),
    }
}
