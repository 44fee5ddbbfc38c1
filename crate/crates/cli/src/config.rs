use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Arg, ArgAction, ArgMatches, Command};
use heston_hybrid::hybrid::DEFAULT_K_STD;
use heston_hybrid::smoothing::DEFAULT_QUADRATURE;
use heston_hybrid::{Error as CoreError, HestonParams, McConfig, Payoff, SchemeConfig};

use crate::CliError;

/// Every setting, usable both as `--key value` and as `key = value` in a
/// config file.
const KEYS: &[(&str, &str)] = &[
    ("mode", "price | mc | converge | tree-dump"),
    ("payoff", "call:K | put:K | digital:c[:d] | constant:v | identity | table:s1=v1;s2=v2"),
    ("mollify", "smoothing index l >= 1 applied to the payoff"),
    ("quadrature", "mollifier quadrature nodes per axis"),
    ("s0", "spot price"),
    ("y0", "spot variance"),
    ("r", "risk-free rate"),
    ("delta", "dividend yield (default 0)"),
    ("a", "variance drift constant, a > 0"),
    ("b", "variance mean reversion"),
    ("sigma", "vol of vol, sigma > 0"),
    ("rho", "correlation in (-1, 1)"),
    ("t", "maturity"),
    ("n", "time steps of the hybrid scheme"),
    ("dx", "log-price step of the hybrid scheme"),
    ("k-std", "grid half-width in standard deviations (default 6)"),
    ("ladder", "comma-separated time steps for converge (default 25,50,100,200)"),
    ("dx-ratio", "converge: dx = ratio * h (default 1)"),
    ("paths", "Monte Carlo paths (default 100000)"),
    ("steps", "Monte Carlo Euler steps (default 1000)"),
    ("seed", "Monte Carlo seed (default 1)"),
    ("antithetic", "true | false (default true)"),
    ("output", "CSV output path (default stdout)"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Price,
    Mc,
    Converge,
    TreeDump,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "price" => Ok(Mode::Price),
            "mc" => Ok(Mode::Mc),
            "converge" => Ok(Mode::Converge),
            "tree-dump" => Ok(Mode::TreeDump),
            _ => Err("expected one of price, mc, converge, tree-dump".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Smoothing {
    pub l: f64,
    pub quadrature: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub params: HestonParams,
    pub payoff: Option<Payoff>,
    pub smoothing: Option<Smoothing>,
    pub s0: f64,
    pub y0: f64,
    pub maturity: f64,
    pub n_steps: usize,
    pub dx: f64,
    pub k_std: f64,
    pub ladder: Vec<usize>,
    pub dx_ratio: f64,
    pub mc: McConfig,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn scheme(&self) -> Result<SchemeConfig, CoreError> {
        SchemeConfig::with_k_std(self.n_steps, self.dx, self.maturity, self.k_std)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Source {
    Flag,
    File { path: PathBuf, line: usize },
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Flag => write!(f, "command line"),
            Source::File { path, line } => write!(f, "{}:{line}", path.display()),
        }
    }
}

pub fn command() -> Command {
    let mut cmd = Command::new("heston-hybrid")
        .about("Hybrid tree/finite-difference Heston pricer with a Monte Carlo oracle")
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("line-oriented `key = value` file; flags override it"),
        );
    for &(key, help) in KEYS {
        cmd = cmd.arg(
            Arg::new(key)
                .long(key)
                .help(help)
                .action(ArgAction::Set)
                .allow_negative_numbers(true),
        );
    }
    cmd
}

/// Reads `key = value` lines; `#` starts a comment.
fn read_config_file(path: &Path) -> Result<BTreeMap<String, (String, Source)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| {
            CliError::Config(format!("{}:{line}: expected `key = value`", path.display()))
        })?;
        let key = key.trim();
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(CliError::Config(format!(
                "{}:{line}: unknown key `{key}`",
                path.display()
            )));
        }
        let src = Source::File {
            path: path.to_path_buf(),
            line,
        };
        out.insert(key.to_string(), (value.trim().to_string(), src));
    }
    Ok(out)
}

struct Settings {
    values: BTreeMap<String, (String, Source)>,
}

impl Settings {
    fn from_matches(m: &ArgMatches) -> Result<Self, CliError> {
        let mut values = match m.get_one::<String>("config") {
            Some(path) => read_config_file(Path::new(path))?,
            None => BTreeMap::new(),
        };
        for &(key, _) in KEYS {
            if let Some(v) = m.get_one::<String>(key) {
                values.insert(key.to_string(), (v.clone(), Source::Flag));
            }
        }
        Ok(Self { values })
    }

    fn raw(&self, key: &str) -> Option<&(String, Source)> {
        self.values.get(key)
    }

    fn get<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some((v, src)) => v.parse::<T>().map(Some).map_err(|e| {
                CliError::Config(format!("invalid value `{v}` for `{key}` ({src}): {e}"))
            }),
        }
    }

    fn require<T>(&self, key: &str, mode: &str) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.get(key)?.ok_or_else(|| {
            CliError::Config(format!("missing required key `{key}` for mode {mode}"))
        })
    }

    fn or<T>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Attributes a core validation error to the setting it names.
    fn attribute(&self, err: CoreError) -> CliError {
        match &err {
            CoreError::InvalidParameter { name, reason } => match self.raw(name) {
                Some((v, src)) => CliError::Config(format!(
                    "invalid value `{v}` for `{name}` ({src}): {reason}"
                )),
                None => CliError::Config(format!("`{name}`: {reason}")),
            },
            _ => CliError::Config(err.to_string()),
        }
    }
}

fn parse_ladder(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect()
}

struct Ladder(Vec<usize>);

impl FromStr for Ladder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        parse_ladder(s).map(Ladder)
    }
}

/// Builds a validated configuration from parsed arguments (and the config
/// file they name).
pub fn parse_config(matches: &ArgMatches) -> Result<RunConfig, CliError> {
    let s = Settings::from_matches(matches)?;
    let mode: Mode = s
        .get("mode")?
        .ok_or_else(|| CliError::Config("missing required key `mode`".into()))?;
    let mode_name = s.raw("mode").map(|(v, _)| v.clone()).unwrap_or_default();
    let m = mode_name.as_str();

    let pricing = mode != Mode::TreeDump;
    let (r, rho) = if pricing {
        (s.require("r", m)?, s.require("rho", m)?)
    } else {
        (s.or("r", 0.0)?, s.or("rho", 0.0)?)
    };
    let a: f64 = s.require("a", m)?;
    let b: f64 = s.require("b", m)?;
    let sigma: f64 = s.require("sigma", m)?;
    let delta: f64 = s.or("delta", 0.0)?;
    let params = HestonParams::new(r, delta, a, b, sigma, rho).map_err(|e| s.attribute(e))?;

    let y0: f64 = s.require("y0", m)?;
    if !(y0 >= 0.0 && y0.is_finite()) {
        return Err(s.attribute(CoreError::InvalidParameter {
            name: "y0",
            reason: "must be finite and >= 0".into(),
        }));
    }
    let maturity: f64 = s.require("t", m)?;
    if !(maturity > 0.0 && maturity.is_finite()) {
        return Err(s.attribute(CoreError::InvalidParameter {
            name: "t",
            reason: "must be > 0".into(),
        }));
    }
    let s0: f64 = if pricing { s.require("s0", m)? } else { s.or("s0", 1.0)? };
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(s.attribute(CoreError::InvalidParameter {
            name: "s0",
            reason: "must be > 0".into(),
        }));
    }

    let payoff = if pricing {
        Some(s.require::<Payoff>("payoff", m)?)
    } else {
        None
    };
    let smoothing = match s.get::<f64>("mollify")? {
        Some(l) => {
            let quadrature = s.or("quadrature", DEFAULT_QUADRATURE)?;
            if !(l >= 1.0 && l.is_finite()) {
                return Err(s.attribute(CoreError::InvalidParameter {
                    name: "mollify",
                    reason: "smoothing index must be >= 1".into(),
                }));
            }
            if quadrature < 1 {
                return Err(s.attribute(CoreError::InvalidParameter {
                    name: "quadrature",
                    reason: "need at least one node".into(),
                }));
            }
            Some(Smoothing { l, quadrature })
        }
        None => None,
    };

    let needs_scheme = matches!(mode, Mode::Price | Mode::TreeDump);
    let n_steps: usize = if needs_scheme { s.require("n", m)? } else { s.or("n", 1)? };
    let dx: f64 = if mode == Mode::Price { s.require("dx", m)? } else { s.or("dx", 0.01)? };
    let k_std: f64 = s.or("k-std", DEFAULT_K_STD)?;
    SchemeConfig::with_k_std(n_steps, dx, maturity, k_std).map_err(|e| s.attribute(e))?;

    let ladder = s.or("ladder", Ladder(vec![25, 50, 100, 200]))?.0;
    let dx_ratio: f64 = s.or("dx-ratio", 1.0)?;
    if mode == Mode::Converge {
        if ladder.len() < 3 {
            return Err(CliError::Config(
                "`ladder` needs at least three resolutions".into(),
            ));
        }
        if ladder.windows(2).any(|w| w[0] >= w[1]) || ladder[0] == 0 {
            return Err(CliError::Config(
                "`ladder` must be positive and strictly increasing".into(),
            ));
        }
        if !(dx_ratio > 0.0 && dx_ratio.is_finite()) {
            return Err(CliError::Config("`dx-ratio` must be > 0".into()));
        }
    }

    let mc = McConfig {
        n_paths: s.or("paths", 100_000)?,
        n_steps: s.or("steps", 1000)?,
        seed: s.or("seed", 1)?,
        antithetic: s.or("antithetic", true)?,
    };
    if mode == Mode::Mc {
        mc.validate().map_err(|e| s.attribute(e))?;
    }

    let output = s.raw("output").map(|(v, _)| PathBuf::from(v));

    Ok(RunConfig {
        mode,
        params,
        payoff,
        smoothing,
        s0,
        y0,
        maturity,
        n_steps,
        dx,
        k_std,
        ladder,
        dx_ratio,
        mc,
        output,
    })
}
