use std::fmt::Write as _;
use std::io::Write as _;

use heston_hybrid::hybrid::ObservedOrder;
use heston_hybrid::smoothing::mollify;
use heston_hybrid::{
    convergence_study, mc_price, price, CirTree, DxRule, StudyConfig, TerminalPayoff,
};

use crate::config::{Mode, RunConfig};
use crate::CliError;

/// `%.12g`: 12 significant digits, trailing zeros dropped.
pub fn fmt_g12(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    const DIGITS: i32 = 12;
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..DIGITS).contains(&exp) {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, v))
    } else {
        let m = trim_zeros(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Diagnostics for the regime being priced; never part of the CSV.
pub fn warnings(cfg: &RunConfig) -> Vec<String> {
    let p = &cfg.params;
    let mut out = Vec::new();
    if p.b() <= 0.0 {
        out.push(format!(
            "warning: b = {} <= 0, the variance is not mean reverting",
            p.b()
        ));
    }
    if !p.feller_satisfied() {
        out.push(format!(
            "warning: Feller condition violated (sigma^2 = {} > 2a = {}), the variance can reach 0",
            fmt_g12(p.sigma() * p.sigma()),
            fmt_g12(2.0 * p.a())
        ));
    }
    out
}

fn with_payoff<T>(
    cfg: &RunConfig,
    run: impl FnOnce(&dyn TerminalPayoff) -> Result<T, heston_hybrid::Error>,
) -> Result<T, CliError> {
    let base = cfg
        .payoff
        .clone()
        .ok_or_else(|| CliError::Config("missing required key `payoff`".into()))?;
    let out = match &cfg.smoothing {
        Some(sm) => {
            let m = mollify(base, sm.l, sm.quadrature).map_err(CliError::from_core)?;
            run(&m)
        }
        None => run(&base),
    };
    out.map_err(CliError::from_core)
}

/// Produces the CSV text for a run.
pub fn render(cfg: &RunConfig) -> Result<String, CliError> {
    let mut out = String::new();
    let p = &cfg.params;
    match cfg.mode {
        Mode::Price => {
            let scheme = cfg.scheme().map_err(CliError::from_core)?;
            let v = with_payoff(cfg, |f| price(f, p, cfg.y0, cfg.s0, &scheme))?;
            writeln!(out, "price,h,dx,n,feller").unwrap();
            writeln!(
                out,
                "{},{},{},{},{}",
                fmt_g12(v),
                fmt_g12(scheme.h()),
                fmt_g12(scheme.dx),
                scheme.n_steps,
                p.feller_satisfied()
            )
            .unwrap();
        }
        Mode::Mc => {
            let est = with_payoff(cfg, |f| mc_price(f, p, cfg.s0, cfg.y0, cfg.maturity, &cfg.mc))?;
            writeln!(out, "mean,stderr,n_paths,seed").unwrap();
            writeln!(
                out,
                "{},{},{},{}",
                fmt_g12(est.mean),
                fmt_g12(est.stderr),
                cfg.mc.n_paths,
                cfg.mc.seed
            )
            .unwrap();
        }
        Mode::Converge => {
            let study = StudyConfig {
                maturity: cfg.maturity,
                ladder: cfg.ladder.clone(),
                dx_rule: DxRule::Proportional(cfg.dx_ratio),
                k_std: cfg.k_std,
            };
            let rows = with_payoff(cfg, |f| convergence_study(f, p, cfg.y0, cfg.s0, &study))?;
            writeln!(out, "n,h,dx,price,delta,order").unwrap();
            for r in rows {
                let delta = r.delta.map(fmt_g12).unwrap_or_default();
                let order = match r.order {
                    None => String::new(),
                    Some(ObservedOrder::Exact) => "exact".into(),
                    Some(ObservedOrder::Value(v)) => fmt_g12(v),
                };
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.n,
                    fmt_g12(r.h),
                    fmt_g12(r.dx),
                    fmt_g12(r.price),
                    delta,
                    order
                )
                .unwrap();
            }
        }
        Mode::TreeDump => {
            let tree =
                CirTree::build(cfg.y0, p, cfg.n_steps, cfg.maturity).map_err(CliError::from_core)?;
            writeln!(out, "n,k,y,k_u,k_d,p_u").unwrap();
            for (n, level) in tree.levels().iter().enumerate() {
                for (k, &y) in level.values.iter().enumerate() {
                    if n < tree.n_steps() {
                        writeln!(
                            out,
                            "{n},{k},{},{},{},{}",
                            fmt_g12(y),
                            level.k_up[k],
                            level.k_down[k],
                            fmt_g12(level.p_up[k])
                        )
                        .unwrap();
                    } else {
                        writeln!(out, "{n},{k},{},,,", fmt_g12(y)).unwrap();
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Runs the configured mode and writes its CSV to the output path or stdout.
pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    for w in warnings(cfg) {
        eprintln!("{w}");
    }
    let csv = render(cfg)?;
    match &cfg.output {
        Some(path) => std::fs::write(path, csv)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(csv.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Io(format!("cannot write to stdout: {e}")))
        }
    }
}
