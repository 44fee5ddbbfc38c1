//! Heston parameters, the decorrelating change of variables and payoffs.
//!
//! Pricing works in the coordinates `x = log(s) - (rho / sigma) * y`, where
//! the log-price noise is independent of the variance noise:
//!
//! ```text
//! dX = mu_x(Y) dt + rho_bar sqrt(Y) dB
//! dY = mu_y(Y) dt + sigma sqrt(Y) dW
//! ```
//!
//! with `mu_x(y) = r - delta - rho a / sigma + (rho b / sigma - 1/2) y`,
//! `mu_y(y) = a - b y` and `rho_bar = sqrt(1 - rho^2)`.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

/// Risk-neutral Heston dynamics `dS = (r - delta) S dt + sqrt(Y) S dZ`,
/// `dY = (a - b Y) dt + sigma sqrt(Y) dW`, `d<Z, W> = rho dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HestonParams {
    r: f64,
    delta: f64,
    a: f64,
    b: f64,
    sigma: f64,
    rho: f64,
}

impl HestonParams {
    pub fn new(r: f64, delta: f64, a: f64, b: f64, sigma: f64, rho: f64) -> Result<Self> {
        if !r.is_finite() {
            return Err(invalid("r", "must be finite"));
        }
        if !delta.is_finite() {
            return Err(invalid("delta", "must be finite"));
        }
        if !(a.is_finite() && a > 0.0) {
            return Err(invalid("a", format!("must be > 0, got {a}")));
        }
        if !b.is_finite() {
            return Err(invalid("b", "must be finite"));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(invalid("sigma", format!("must be > 0, got {sigma}")));
        }
        if !(rho > -1.0 && rho < 1.0) {
            return Err(invalid(
                "rho",
                format!("must lie in the open interval (-1, 1), got {rho}"),
            ));
        }
        Ok(Self {
            r,
            delta,
            a,
            b,
            sigma,
            rho,
        })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `sqrt(1 - rho^2)`, the loading of the log-price on its own noise.
    pub fn rho_bar(&self) -> f64 {
        (1.0 - self.rho * self.rho).sqrt()
    }

    /// `sigma^2 <= 2a`. Nothing downstream requires it.
    pub fn feller_satisfied(&self) -> bool {
        self.sigma * self.sigma <= 2.0 * self.a
    }

    /// Drift of the transformed log-price at variance `y`.
    pub fn mu_x(&self, y: f64) -> f64 {
        let k = self.rho / self.sigma;
        self.r - self.delta - k * self.a + (k * self.b - 0.5) * y
    }

    /// Drift of the variance.
    pub fn mu_y(&self, y: f64) -> f64 {
        self.a - self.b * y
    }

    /// `(s, y) -> log(s) - (rho / sigma) y`.
    pub fn to_transformed(&self, s: f64, y: f64) -> Result<f64> {
        if !s.is_finite() || s <= 0.0 {
            return Err(Error::Domain(format!("asset price must be > 0, got {s}")));
        }
        if y.is_nan() || y < 0.0 {
            return Err(Error::Domain(format!("variance must be >= 0, got {y}")));
        }
        Ok(s.ln() - self.rho / self.sigma * y)
    }

    /// Inverse of [`to_transformed`](Self::to_transformed) at fixed `y`.
    pub fn from_transformed(&self, x: f64, y: f64) -> f64 {
        (x + self.rho / self.sigma * y).exp()
    }
}

/// Piecewise-linear payoff in the asset price, flat beyond the end knots.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffTable {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl PayoffTable {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(invalid(
                "payoff",
                "table needs matching, non-empty knot and value lists",
            ));
        }
        if knots.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(invalid("payoff", "table knots must be strictly increasing"));
        }
        if knots.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(invalid("payoff", "table entries must be finite"));
        }
        Ok(Self { knots, values })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, s: f64) -> f64 {
        let n = self.knots.len();
        if s <= self.knots[0] {
            return self.values[0];
        }
        if s >= self.knots[n - 1] {
            return self.values[n - 1];
        }
        let j = self.knots.partition_point(|&k| k <= s);
        let (s0, s1) = (self.knots[j - 1], self.knots[j]);
        let (v0, v1) = (self.values[j - 1], self.values[j]);
        v0 + (v1 - v0) * (s - s0) / (s1 - s0)
    }
}

/// European payoffs of the asset price `s` (and possibly the variance `y`).
#[derive(Debug, Clone, PartialEq)]
pub enum Payoff {
    Call { strike: f64 },
    Put { strike: f64 },
    /// Indicator of `s` in `[lower, upper)`; `upper` may be `+inf`.
    Digital { lower: f64, upper: f64 },
    Constant(f64),
    /// `f(s, y) = s`.
    IdentityAsset,
    Table(PayoffTable),
}

impl Payoff {
    pub fn call(strike: f64) -> Result<Self> {
        check_strike(strike)?;
        Ok(Payoff::Call { strike })
    }

    pub fn put(strike: f64) -> Result<Self> {
        check_strike(strike)?;
        Ok(Payoff::Put { strike })
    }

    pub fn digital(lower: f64, upper: f64) -> Result<Self> {
        if !(lower >= 0.0 && lower.is_finite()) {
            return Err(invalid("payoff", "digital lower bound must be finite and >= 0"));
        }
        if upper.is_nan() || lower >= upper {
            return Err(invalid(
                "payoff",
                format!("digital needs lower < upper, got [{lower}, {upper})"),
            ));
        }
        Ok(Payoff::Digital { lower, upper })
    }

    pub fn constant(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(invalid("payoff", "constant must be finite"));
        }
        Ok(Payoff::Constant(value))
    }

    /// Value at asset price `s` and variance `y`.
    pub fn value(&self, s: f64, _y: f64) -> f64 {
        match self {
            Payoff::Call { strike } => (s - strike).max(0.0),
            Payoff::Put { strike } => (strike - s).max(0.0),
            Payoff::Digital { lower, upper } => {
                if *lower <= s && s < *upper {
                    1.0
                } else {
                    0.0
                }
            }
            Payoff::Constant(v) => *v,
            Payoff::IdentityAsset => s,
            Payoff::Table(t) => t.eval(s),
        }
    }
}

fn check_strike(strike: f64) -> Result<()> {
    if strike.is_finite() && strike >= 0.0 {
        Ok(())
    } else {
        Err(invalid("payoff", format!("strike must be finite and >= 0, got {strike}")))
    }
}

/// Anything that can serve as terminal data in transformed coordinates.
pub trait TerminalPayoff: Sync {
    fn eval(&self, x: f64, y: f64, params: &HestonParams) -> f64;
}

impl TerminalPayoff for Payoff {
    fn eval(&self, x: f64, y: f64, params: &HestonParams) -> f64 {
        payoff_transformed(self, x, y, params)
    }
}

impl<P: TerminalPayoff + ?Sized> TerminalPayoff for &P {
    fn eval(&self, x: f64, y: f64, params: &HestonParams) -> f64 {
        (**self).eval(x, y, params)
    }
}

/// The payoff composed with the inverse coordinate change.
pub fn payoff_transformed(f: &Payoff, x: f64, y: f64, params: &HestonParams) -> f64 {
    f.value(params.from_transformed(x, y), y)
}

impl FromStr for Payoff {
    type Err = Error;

    /// `call:K`, `put:K`, `digital:c[:d]`, `constant:v`, `identity`,
    /// `table:s1=v1;s2=v2;...`.
    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        let (kind, rest) = match text.split_once(':') {
            Some((k, r)) => (k, Some(r)),
            None => (text, None),
        };
        let bad = |msg: &str| invalid("payoff", format!("{msg} in `{text}`"));
        let num = |s: &str| -> Result<f64> {
            let s = s.trim();
            if matches!(s, "inf" | "+inf" | "infinity") {
                return Ok(f64::INFINITY);
            }
            s.parse::<f64>().map_err(|_| bad("expected a number"))
        };
        match (kind, rest) {
            ("call", Some(k)) => Payoff::call(num(k)?),
            ("put", Some(k)) => Payoff::put(num(k)?),
            ("digital", Some(r)) => match r.split_once(':') {
                Some((c, d)) => Payoff::digital(num(c)?, num(d)?),
                None => Payoff::digital(num(r)?, f64::INFINITY),
            },
            ("constant", Some(v)) => Payoff::constant(num(v)?),
            ("identity", None) => Ok(Payoff::IdentityAsset),
            ("table", Some(r)) => {
                let mut knots = Vec::new();
                let mut values = Vec::new();
                for pair in r.split(';').filter(|p| !p.trim().is_empty()) {
                    let (s, v) = pair.split_once('=').ok_or_else(|| bad("expected s=v"))?;
                    knots.push(num(s)?);
                    values.push(num(v)?);
                }
                Ok(Payoff::Table(PayoffTable::new(knots, values)?))
            }
            _ => Err(bad("unknown payoff kind")),
        }
    }
}

impl fmt::Display for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payoff::Call { strike } => write!(f, "call:{strike}"),
            Payoff::Put { strike } => write!(f, "put:{strike}"),
            Payoff::Digital { lower, upper } if upper.is_infinite() => {
                write!(f, "digital:{lower}")
            }
            Payoff::Digital { lower, upper } => write!(f, "digital:{lower}:{upper}"),
            Payoff::Constant(v) => write!(f, "constant:{v}"),
            Payoff::IdentityAsset => write!(f, "identity"),
            Payoff::Table(t) => {
                write!(f, "table:")?;
                for (i, (s, v)) in t.knots.iter().zip(&t.values).enumerate() {
                    if i > 0 {
                        write!(f, ";")?;
                    }
                    write!(f, "{s}={v}")?;
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(r: f64, delta: f64, a: f64, b: f64, sigma: f64, rho: f64) -> HestonParams {
        HestonParams::new(r, delta, a, b, sigma, rho).unwrap()
    }

    #[test]
    fn transform_examples() {
        let p = params(0.05, 0.0, 0.02, 0.5, 0.3, 0.0);
        assert_eq!(p.to_transformed(1.0, 0.04).unwrap(), 0.0);

        let p = params(0.05, 0.0, 0.02, 0.5, 1.0, -0.5);
        assert_relative_eq!(p.to_transformed(std::f64::consts::E, 2.0).unwrap(), 2.0);
        assert_relative_eq!(p.from_transformed(2.0, 2.0), std::f64::consts::E);
        assert_eq!(p.from_transformed(0.0, 0.0), 1.0);

        let p = params(0.05, 0.0, 0.02, 0.5, 0.3, 0.0);
        assert_relative_eq!(p.from_transformed(100f64.ln(), 0.04), 100.0, max_relative = 1e-14);
    }

    #[test]
    fn transform_rejects_bad_price() {
        let p = params(0.05, 0.0, 0.02, 0.5, 0.3, 0.0);
        assert!(matches!(p.to_transformed(0.0, 0.1), Err(Error::Domain(_))));
        assert!(matches!(p.to_transformed(-1.0, 0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn drift_examples() {
        let p = params(0.05, 0.0, 0.02, 0.5, 0.3, 0.0);
        assert_relative_eq!(p.mu_x(0.04), 0.03, epsilon = 1e-15);
        let p = params(0.03, 0.03, 0.02, 0.5, 0.3, 0.0);
        assert_eq!(p.mu_x(0.0), 0.0);

        // -rho a / sigma = 0.046667, rho b / sigma - 1/2 = -1.666667
        let p = params(0.0, 0.0, 0.02, 0.5, 0.3, -0.7);
        assert_relative_eq!(p.mu_x(0.04), -0.02, epsilon = 1e-14);

        let p = params(0.05, 0.0, 0.02, 0.5, 0.3, -0.7);
        assert_relative_eq!(p.mu_y(0.04), 0.0, epsilon = 1e-16);
        assert_eq!(p.mu_y(0.0), 0.02);
        assert_relative_eq!(p.mu_y(0.1), -0.03, epsilon = 1e-15);
    }

    #[test]
    fn feller_flag() {
        assert!(!params(0.05, 0.0, 0.02, 0.5, 0.3, -0.7).feller_satisfied());
        assert!(params(0.05, 0.0, 0.02, 0.5, 0.15, -0.7).feller_satisfied());
    }

    #[test]
    fn parameter_validation() {
        assert!(matches!(
            HestonParams::new(0.05, 0.0, 0.02, 0.5, 0.3, 1.5),
            Err(Error::InvalidParameter { name: "rho", .. })
        ));
        assert!(HestonParams::new(0.05, 0.0, 0.0, 0.5, 0.3, 0.0).is_err());
        assert!(HestonParams::new(0.05, 0.0, 0.02, 0.5, -0.3, 0.0).is_err());
        // non-positive mean reversion is allowed
        assert!(HestonParams::new(0.05, 0.0, 0.02, -0.5, 0.3, 0.0).is_ok());
    }

    #[test]
    fn payoff_examples() {
        let p = params(0.05, 0.0, 0.02, 0.5, 0.3, 0.0);
        let c = Payoff::constant(7.0).unwrap();
        assert_eq!(payoff_transformed(&c, -3.0, 1.2, &p), 7.0);
        let put = Payoff::put(100.0).unwrap();
        assert_relative_eq!(payoff_transformed(&put, 90f64.ln(), 0.0, &p), 10.0, epsilon = 1e-12);
        let dig = Payoff::digital(100.0, f64::INFINITY).unwrap();
        assert_eq!(dig.value(100.0, 0.04), 1.0);
        assert_eq!(dig.value(99.999, 0.04), 0.0);
    }

    #[test]
    fn digital_requires_ordered_bounds() {
        assert!(Payoff::digital(100.0, 100.0).is_err());
        assert!(Payoff::digital(100.0, 90.0).is_err());
        assert!(Payoff::digital(-1.0, 90.0).is_err());
        let d = Payoff::digital(90.0, 110.0).unwrap();
        assert_eq!(d.value(110.0, 0.0), 0.0);
        assert_eq!(d.value(90.0, 0.0), 1.0);
    }

    #[test]
    fn parse_payoffs() {
        assert_eq!("put:100".parse::<Payoff>().unwrap(), Payoff::Put { strike: 100.0 });
        assert_eq!(
            "digital:100".parse::<Payoff>().unwrap(),
            Payoff::Digital { lower: 100.0, upper: f64::INFINITY }
        );
        assert_eq!(
            "digital:90:inf".parse::<Payoff>().unwrap(),
            Payoff::Digital { lower: 90.0, upper: f64::INFINITY }
        );
        assert_eq!("identity".parse::<Payoff>().unwrap(), Payoff::IdentityAsset);
        let t: Payoff = "table:80=20;100=0".parse().unwrap();
        assert_eq!(t.value(90.0, 0.0), 10.0);
        assert_eq!(t.value(50.0, 0.0), 20.0);
        assert_eq!(t.value(150.0, 0.0), 0.0);
        for bad in ["put", "put:x", "swap:1", "digital:5:5", "table:1=2;1=3"] {
            assert!(bad.parse::<Payoff>().is_err(), "{bad}");
        }
        for p in ["call:95", "digital:1:2", "constant:3", "table:1=2;3=4"] {
            assert_eq!(p.parse::<Payoff>().unwrap().to_string(), p);
        }
    }

    proptest! {
        #[test]
        fn transform_round_trip(s in 1e-3f64..1e4, y in 0.0f64..4.0, rho in -0.99f64..0.99, sigma in 0.05f64..2.0) {
            let p = params(0.05, 0.01, 0.02, 0.5, sigma, rho);
            let x = p.to_transformed(s, y).unwrap();
            prop_assert!((p.from_transformed(x, y) - s).abs() <= 1e-12 * s);
        }

        #[test]
        fn mu_x_is_affine(y1 in 0.0f64..2.0, y2 in 0.0f64..2.0, rho in -0.99f64..0.99) {
            let p = params(0.05, 0.01, 0.02, 0.5, 0.3, rho);
            let lhs = p.mu_x(y1) + p.mu_x(y2);
            let rhs = p.mu_x(0.0) + p.mu_x(y1 + y2);
            prop_assert!((lhs - rhs).abs() <= 1e-14);
        }

        #[test]
        fn payoff_shapes(s in 0.0f64..400.0, k in 1.0f64..200.0) {
            let call = Payoff::call(k).unwrap().value(s, 0.0);
            let put = Payoff::put(k).unwrap().value(s, 0.0);
            prop_assert!(call >= 0.0 && put >= 0.0);
            prop_assert!((put + s - k - call).abs() <= 1e-12 * (1.0 + s + k));
            let d = Payoff::digital(k, 2.0 * k).unwrap().value(s, 0.0);
            prop_assert!(d == 0.0 || d == 1.0);
        }
    }
}
