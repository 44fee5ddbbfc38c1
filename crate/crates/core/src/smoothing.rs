//! Mollified payoffs.
//!
//! The payoff is first extended to negative variances by `f(x, max(0, y))`
//! and then convolved in `(x, y)` with the bump `exp(-1 / (1 - |z|^2))`
//! rescaled to radius `1 / l`. The convolution integral is a fixed
//! tensor-product Gauss-Legendre rule on the square enclosing the support.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

use crate::error::{invalid, Result};
use crate::model::{HestonParams, TerminalPayoff};

/// Nodes per axis. Even, so no node falls on the symmetry axes of the kernel.
pub const DEFAULT_QUADRATURE: usize = 32;

/// `f(x, max(0, y))`: continuous extension below the variance boundary.
pub fn extend<F: TerminalPayoff + ?Sized>(f: &F, x: f64, y_signed: f64, params: &HestonParams) -> f64 {
    f.eval(x, y_signed.max(0.0), params)
}

fn bump(r2: f64) -> f64 {
    if r2 < 1.0 {
        (-1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

/// `(f~ * phi_l)(x, y)` evaluated by quadrature.
#[derive(Debug, Clone)]
pub struct MollifiedPayoff<P> {
    base: P,
    l: f64,
    quadrature: usize,
    /// Offsets on the unit disk and normalized weights.
    stencil: Vec<(f64, f64, f64)>,
}

pub fn mollify<P: TerminalPayoff>(base: P, l: f64, quadrature: usize) -> Result<MollifiedPayoff<P>> {
    if !(l >= 1.0 && l.is_finite()) {
        return Err(invalid("mollify", format!("smoothing index must be >= 1, got {l}")));
    }
    let degree = NonZeroUsize::new(quadrature)
        .ok_or_else(|| invalid("quadrature", "need at least one node"))?;
    let rule = GaussLegendre::new(degree);
    let pairs = rule.as_node_weight_pairs();

    let mut stencil = Vec::with_capacity(quadrature * quadrature);
    for &(zx, wx) in pairs {
        for &(zy, wy) in pairs {
            let w = wx * wy * bump(zx * zx + zy * zy);
            if w > 0.0 {
                stencil.push((zx, zy, w));
            }
        }
    }
    if stencil.is_empty() {
        return Err(invalid("quadrature", "no node falls inside the kernel support"));
    }
    let total: f64 = stencil.iter().map(|s| s.2).sum();
    for s in &mut stencil {
        s.2 /= total;
    }

    Ok(MollifiedPayoff {
        base,
        l,
        quadrature,
        stencil,
    })
}

impl<P> MollifiedPayoff<P> {
    pub fn base(&self) -> &P {
        &self.base
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn quadrature(&self) -> usize {
        self.quadrature
    }

    /// Kernel radius `1 / l`.
    pub fn radius(&self) -> f64 {
        1.0 / self.l
    }

    pub fn weight_sum(&self) -> f64 {
        self.stencil.iter().map(|s| s.2).sum()
    }
}

impl<P: TerminalPayoff> TerminalPayoff for MollifiedPayoff<P> {
    fn eval(&self, x: f64, y: f64, params: &HestonParams) -> f64 {
        let r = self.radius();
        self.stencil
            .iter()
            .map(|&(zx, zy, w)| w * extend(&self.base, x - r * zx, y - r * zy, params))
            .sum()
    }
}
