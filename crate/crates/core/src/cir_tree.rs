//! Recombining binomial chain for the CIR variance.
//!
//! Level `n` holds `n + 1` values `y_k = (sqrt(y0) + sigma/2 (2k - n) sqrt(h))^2`,
//! truncated to zero where the base is non-positive. From each node the
//! chain moves to the closest level-`n+1` values bracketing the one-step
//! Euler target `y + mu_y(y) h`, with probabilities matching that target
//! whenever it is bracketed.

use crate::error::{invalid, Result};
use crate::model::HestonParams;

/// Variance of node `(n, k)` of a lattice rooted at `y0`.
pub fn node_value(y0: f64, sigma: f64, h: f64, n: usize, k: usize) -> f64 {
    debug_assert!(k <= n);
    if 2 * k == n {
        // (sqrt(y0))^2 need not round back to y0
        return y0;
    }
    let base = y0.sqrt() + 0.5 * sigma * (2.0 * k as f64 - n as f64) * h.sqrt();
    if base > 0.0 {
        base * base
    } else {
        0.0
    }
}

/// Up and down child indices in `next` (sorted, nondecreasing) for node `k`
/// whose one-step target is `target`.
///
/// `k_u` is the smallest `k* in [k+1, n+1]` with `target <= next[k*]`
/// (`n + 1` if none); `k_d` is the largest `k* in [0, k]` with
/// `next[k*] <= target` (`0` if none).
pub fn jump_indices(target: f64, next: &[f64], k: usize) -> (usize, usize) {
    let top = next.len() - 1;
    debug_assert!(k < top);

    let above = &next[k + 1..];
    let k_up = k + 1 + above.partition_point(|&v| v < target);
    let k_up = k_up.min(top);

    let below = &next[..=k];
    let k_down = below.partition_point(|&v| v <= target).saturating_sub(1);
    (k_up, k_down)
}

/// Probability of the up move, clamped to `[0, 1]`. When both children
/// carry the same value the move is degenerate and `1` is returned.
pub fn jump_prob(target: f64, y_up: f64, y_down: f64) -> f64 {
    let span = y_up - y_down;
    if span <= 0.0 {
        return 1.0;
    }
    ((target - y_down) / span).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeLevel {
    pub values: Vec<f64>,
    /// Empty on the last level.
    pub k_up: Vec<usize>,
    pub k_down: Vec<usize>,
    pub p_up: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CirTree {
    n_steps: usize,
    h: f64,
    levels: Vec<TreeLevel>,
}

impl CirTree {
    pub fn build(y0: f64, params: &HestonParams, n_steps: usize, maturity: f64) -> Result<Self> {
        if n_steps < 1 {
            return Err(invalid("n", "need at least one time step"));
        }
        if !(maturity > 0.0 && maturity.is_finite()) {
            return Err(invalid("t", format!("maturity must be > 0, got {maturity}")));
        }
        if !(y0 >= 0.0 && y0.is_finite()) {
            return Err(invalid("y0", format!("initial variance must be >= 0, got {y0}")));
        }
        let h = maturity / n_steps as f64;
        let sigma = params.sigma();

        let mut levels: Vec<TreeLevel> = (0..=n_steps)
            .map(|n| TreeLevel {
                values: (0..=n).map(|k| node_value(y0, sigma, h, n, k)).collect(),
                k_up: Vec::new(),
                k_down: Vec::new(),
                p_up: Vec::new(),
            })
            .collect();

        for n in 0..n_steps {
            let (head, tail) = levels.split_at_mut(n + 1);
            let level = &mut head[n];
            let next = &tail[0].values;
            for k in 0..=n {
                let y = level.values[k];
                let target = y + params.mu_y(y) * h;
                let (ku, kd) = jump_indices(target, next, k);
                level.k_up.push(ku);
                level.k_down.push(kd);
                level.p_up.push(jump_prob(target, next[ku], next[kd]));
            }
        }

        Ok(Self {
            n_steps,
            h,
            levels,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn levels(&self) -> &[TreeLevel] {
        &self.levels
    }

    pub fn level(&self, n: usize) -> &TreeLevel {
        &self.levels[n]
    }

    pub fn value(&self, n: usize, k: usize) -> f64 {
        self.levels[n].values[k]
    }

    /// `(k_u, k_d)` of node `(n, k)`, `n < N`.
    pub fn jumps(&self, n: usize, k: usize) -> (usize, usize) {
        let l = &self.levels[n];
        (l.k_up[k], l.k_down[k])
    }

    pub fn p_up(&self, n: usize, k: usize) -> f64 {
        self.levels[n].p_up[k]
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(|l| l.values.len()).sum()
    }

    /// Largest variance anywhere in the lattice.
    pub fn max_value(&self) -> f64 {
        self.levels
            .iter()
            .flat_map(|l| l.values.iter().copied())
            .fold(0.0, f64::max)
    }

    /// Distribution of the chain at every level, by forward propagation.
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![1.0]];
        for n in 0..self.n_steps {
            let cur = &out[n];
            let mut next = vec![0.0; n + 2];
            for (k, &mass) in cur.iter().enumerate() {
                let (ku, kd) = self.jumps(n, k);
                let p = self.p_up(n, k);
                next[ku] += mass * p;
                next[kd] += mass * (1.0 - p);
            }
            out.push(next);
        }
        out
    }
}
