//! Monte Carlo estimate of `E[f(X_T, Y_T)]` in the decorrelated coordinates.
//!
//! Paths use full-truncation Euler: the variance iterate may go negative, but
//! only its positive part enters the coefficients. Each path (or antithetic
//! pair) draws from its own ChaCha8 stream, selected by the path index, and
//! normals come from the inverse normal CDF, so the estimate does not depend
//! on how paths are scheduled across threads.

use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result};
use crate::model::{HestonParams, TerminalPayoff};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl McConfig {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            n_paths,
            n_steps,
            seed,
            antithetic: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(invalid("paths", "need at least two paths"));
        }
        if self.antithetic && !self.n_paths.is_multiple_of(2) {
            return Err(invalid(
                "paths",
                format!("must be even with antithetic sampling, got {}", self.n_paths),
            ));
        }
        if self.n_steps < 1 {
            return Err(invalid("steps", "need at least one time step"));
        }
        Ok(())
    }

    /// Number of independent contributions to the sample mean.
    pub fn n_effective(&self) -> usize {
        if self.antithetic {
            self.n_paths / 2
        } else {
            self.n_paths
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_effective: usize,
}

/// Terminal states; with antithetic sampling paths `2j` and `2j + 1` form a pair.
#[derive(Debug, Clone)]
pub struct TerminalSamples {
    pub x: Vec<f64>,
    /// Positive part of the terminal variance iterate.
    pub y: Vec<f64>,
    pub antithetic: bool,
}

impl TerminalSamples {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Discounted estimate of `E[g(X_T, Y_T)]`.
    pub fn estimate_fn<G>(&self, discount: f64, g: G) -> McEstimate
    where
        G: Fn(f64, f64) -> f64 + Sync,
    {
        let values: Vec<f64> = self
            .x
            .par_iter()
            .zip(self.y.par_iter())
            .map(|(&x, &y)| g(x, y))
            .collect();
        let contributions: Vec<f64> = if self.antithetic {
            values.chunks_exact(2).map(|c| 0.5 * (c[0] + c[1])).collect()
        } else {
            values
        };
        let (mean, var) = mean_and_variance(&contributions);
        let n = contributions.len();
        McEstimate {
            mean: discount * mean,
            stderr: discount * (var / n as f64).sqrt(),
            n_effective: n,
        }
    }

    pub fn estimate<F: TerminalPayoff + ?Sized>(
        &self,
        f: &F,
        params: &HestonParams,
        discount: f64,
    ) -> McEstimate {
        self.estimate_fn(discount, |x, y| f.eval(x, y, params))
    }
}

/// Sample mean and unbiased variance, accumulated around the first value.
fn mean_and_variance(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let shift = v[0];
    let (s, s2) = v.iter().fold((0.0, 0.0), |(s, s2), &c| {
        let d = c - shift;
        (s + d, s2 + d * d)
    });
    let mean = shift + s / n;
    let var = if v.len() > 1 {
        ((s2 - s * s / n) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    (mean, var)
}

fn uniform_open(rng: &mut ChaCha8Rng) -> f64 {
    // (k + 1/2) 2^-53 lies strictly inside (0, 1)
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

struct Stepper<'a> {
    params: &'a HestonParams,
    dt: f64,
    sqrt_dt: f64,
    rho_bar: f64,
}

impl Stepper<'_> {
    fn step(&self, x: &mut f64, y: &mut f64, z_w: f64, z_b: f64) {
        let yp = y.max(0.0);
        debug_assert!(yp >= 0.0);
        let vol = yp.sqrt();
        *x += self.params.mu_x(yp) * self.dt + self.rho_bar * vol * self.sqrt_dt * z_b;
        *y += self.params.mu_y(yp) * self.dt + self.params.sigma() * vol * self.sqrt_dt * z_w;
    }
}

pub fn simulate_terminal(
    params: &HestonParams,
    x0: f64,
    y0: f64,
    maturity: f64,
    cfg: &McConfig,
) -> Result<TerminalSamples> {
    cfg.validate()?;
    if !(y0 >= 0.0 && y0.is_finite()) {
        return Err(invalid("y0", format!("must be >= 0, got {y0}")));
    }
    if !(maturity > 0.0 && maturity.is_finite()) {
        return Err(invalid("t", format!("must be > 0, got {maturity}")));
    }

    let normal = Normal::standard();
    let dt = maturity / cfg.n_steps as f64;
    let stepper = Stepper {
        params,
        dt,
        sqrt_dt: dt.sqrt(),
        rho_bar: params.rho_bar(),
    };
    let base = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_streams = cfg.n_effective();
    let width = if cfg.antithetic { 2 } else { 1 };

    let states: Vec<[(f64, f64); 2]> = (0..n_streams)
        .into_par_iter()
        .map(|j| {
            let mut rng = base.clone();
            rng.set_stream(j as u64);
            let mut s = [(x0, y0); 2];
            for _ in 0..cfg.n_steps {
                let z_w = normal.inverse_cdf(uniform_open(&mut rng));
                let z_b = normal.inverse_cdf(uniform_open(&mut rng));
                stepper.step(&mut s[0].0, &mut s[0].1, z_w, z_b);
                if cfg.antithetic {
                    stepper.step(&mut s[1].0, &mut s[1].1, -z_w, -z_b);
                }
            }
            s
        })
        .collect();

    let mut x = Vec::with_capacity(cfg.n_paths);
    let mut y = Vec::with_capacity(cfg.n_paths);
    for s in &states {
        for &(xi, yi) in &s[..width] {
            x.push(xi);
            y.push(yi.max(0.0));
        }
    }
    Ok(TerminalSamples {
        x,
        y,
        antithetic: cfg.antithetic,
    })
}

/// Discounted Monte Carlo price of `f` at `(s0, y0)`.
pub fn mc_price<F: TerminalPayoff + ?Sized>(
    f: &F,
    params: &HestonParams,
    s0: f64,
    y0: f64,
    maturity: f64,
    cfg: &McConfig,
) -> Result<McEstimate> {
    let x0 = params.to_transformed(s0, y0)?;
    let samples = simulate_terminal(params, x0, y0, maturity, cfg)?;
    Ok(samples.estimate(f, params, (-params.r() * maturity).exp()))
}
