//! Backward hybrid recursion: a tree step in the variance, then one implicit
//! finite-difference step in the log-price, per time slice.
//!
//! ```text
//! u_N(x, y)  = f(x, y)
//! u_n(., y)  = A(y)^{-1} [ p_u u_{n+1}(., y_{k_u}) + (1 - p_u) u_{n+1}(., y_{k_d}) ]
//! ```

use std::collections::HashMap;

use rayon::prelude::*;

use crate::cir_tree::CirTree;
use crate::error::{invalid, Error, Result};
use crate::fd::{SpatialGrid, TridiagonalOperator};
use crate::model::{HestonParams, TerminalPayoff};

pub const DEFAULT_K_STD: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub n_steps: usize,
    pub dx: f64,
    /// Half-width of the grid in frozen-coefficient standard deviations.
    pub k_std: f64,
    pub maturity: f64,
}

impl SchemeConfig {
    pub fn new(n_steps: usize, dx: f64, maturity: f64) -> Result<Self> {
        Self::with_k_std(n_steps, dx, maturity, DEFAULT_K_STD)
    }

    pub fn with_k_std(n_steps: usize, dx: f64, maturity: f64, k_std: f64) -> Result<Self> {
        let cfg = Self {
            n_steps,
            dx,
            k_std,
            maturity,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 1 {
            return Err(invalid("n", "need at least one time step"));
        }
        if !(self.dx > 0.0 && self.dx.is_finite()) {
            return Err(invalid("dx", format!("must be > 0, got {}", self.dx)));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(invalid("t", format!("must be > 0, got {}", self.maturity)));
        }
        if !(self.k_std >= 1.0 && self.k_std.is_finite()) {
            return Err(invalid("k-std", format!("must be >= 1, got {}", self.k_std)));
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        self.maturity / self.n_steps as f64
    }
}

/// Value vectors over the grid, one per tree node of a level.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSurface {
    pub level: usize,
    pub nodes: Vec<Vec<f64>>,
}

/// One assembled operator per distinct node variance.
#[derive(Debug, Clone)]
pub struct OperatorCache {
    ops: HashMap<u64, TridiagonalOperator>,
}

impl OperatorCache {
    pub fn for_tree(tree: &CirTree, params: &HestonParams, grid: &SpatialGrid) -> Self {
        let mut ops = HashMap::new();
        for level in &tree.levels()[..tree.n_steps()] {
            for &y in &level.values {
                ops.entry(y.to_bits())
                    .or_insert_with(|| TridiagonalOperator::assemble(y, params, tree.h(), grid));
            }
        }
        Self { ops }
    }

    pub fn get(&self, y: f64) -> Result<&TridiagonalOperator> {
        self.ops.get(&y.to_bits()).ok_or(Error::MissingOperator(y))
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TridiagonalOperator> {
        self.ops.values()
    }
}

pub fn terminal_surface<F: TerminalPayoff + ?Sized>(
    tree: &CirTree,
    grid: &SpatialGrid,
    f: &F,
    params: &HestonParams,
) -> ValueSurface {
    let n = tree.n_steps();
    let nodes = tree
        .level(n)
        .values
        .par_iter()
        .map(|&y| grid.points().map(|x| f.eval(x, y, params)).collect())
        .collect();
    ValueSurface { level: n, nodes }
}

/// Level `n` from level `n + 1`.
pub fn backward_step(
    next: &ValueSurface,
    tree: &CirTree,
    ops: &OperatorCache,
    n: usize,
) -> Result<ValueSurface> {
    assert_eq!(next.level, n + 1, "surface is not one level ahead");
    let level = tree.level(n);
    let nodes = (0..=n)
        .into_par_iter()
        .map_init(Vec::new, |scratch, k| {
            let op = ops.get(level.values[k])?;
            let p = level.p_up[k];
            let up = &next.nodes[level.k_up[k]];
            let down = &next.nodes[level.k_down[k]];
            let mut w: Vec<f64> = up
                .iter()
                .zip(down)
                .map(|(u, d)| p * u + (1.0 - p) * d)
                .collect();
            op.solve_in_place(&mut w, scratch);
            Ok(w)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ValueSurface { level: n, nodes })
}

/// Undiscounted values `u_0(., y0)` at the root, over the grid.
#[derive(Debug, Clone)]
pub struct RootValues {
    pub grid: SpatialGrid,
    pub values: Vec<f64>,
}

impl RootValues {
    pub fn at_center(&self) -> f64 {
        self.values[self.grid.center()]
    }
}

/// Tree, grid and operators for one pricing run.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub tree: CirTree,
    pub grid: SpatialGrid,
    pub ops: OperatorCache,
}

impl Lattice {
    pub fn build(params: &HestonParams, y0: f64, s0: f64, cfg: &SchemeConfig) -> Result<Self> {
        cfg.validate()?;
        if !(s0 > 0.0 && s0.is_finite()) {
            return Err(invalid("s0", format!("must be > 0, got {s0}")));
        }
        let tree = CirTree::build(y0, params, cfg.n_steps, cfg.maturity)?;
        let x0 = params.to_transformed(s0, y0)?;
        let grid = SpatialGrid::covering(
            x0,
            cfg.dx,
            params,
            tree.max_value(),
            cfg.maturity,
            cfg.k_std,
        )?;
        let ops = OperatorCache::for_tree(&tree, params, &grid);
        Ok(Self { tree, grid, ops })
    }

    pub fn solve<F: TerminalPayoff + ?Sized>(&self, f: &F, params: &HestonParams) -> Result<RootValues> {
        let mut surface = terminal_surface(&self.tree, &self.grid, f, params);
        for n in (0..self.tree.n_steps()).rev() {
            surface = backward_step(&surface, &self.tree, &self.ops, n)?;
        }
        let values = surface.nodes.swap_remove(0);
        Ok(RootValues {
            grid: self.grid,
            values,
        })
    }
}

pub fn price_surface<F: TerminalPayoff + ?Sized>(
    f: &F,
    params: &HestonParams,
    y0: f64,
    s0: f64,
    cfg: &SchemeConfig,
) -> Result<RootValues> {
    Lattice::build(params, y0, s0, cfg)?.solve(f, params)
}

/// Discounted price at `(s0, y0)`.
pub fn price<F: TerminalPayoff + ?Sized>(
    f: &F,
    params: &HestonParams,
    y0: f64,
    s0: f64,
    cfg: &SchemeConfig,
) -> Result<f64> {
    let root = price_surface(f, params, y0, s0, cfg)?;
    Ok((-params.r() * cfg.maturity).exp() * root.at_center())
}

/// How the spatial step follows the time step in a refinement study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DxRule {
    /// `dx = c h`.
    Proportional(f64),
    Fixed(f64),
}

impl DxRule {
    pub fn dx(&self, h: f64) -> f64 {
        match *self {
            DxRule::Proportional(c) => c * h,
            DxRule::Fixed(dx) => dx,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObservedOrder {
    /// Both successive differences vanish.
    Exact,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub dx: f64,
    pub price: f64,
    /// `price - previous price`; absent on the coarsest row.
    pub delta: Option<f64>,
    pub delta_to_finest: f64,
    /// Self-convergence order from this row and the two coarser ones.
    pub order: Option<ObservedOrder>,
}

/// Refinement ladder for [`convergence_study`].
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub maturity: f64,
    /// Strictly increasing time-step counts.
    pub ladder: Vec<usize>,
    pub dx_rule: DxRule,
    pub k_std: f64,
}

/// Prices on a ladder of time steps and the observed self-convergence order
/// `log(|p_a - p_b| / |p_b - p_c|) / log(h_b / h_c)` (`log2` when `N` doubles).
pub fn convergence_study<F: TerminalPayoff + ?Sized>(
    f: &F,
    params: &HestonParams,
    y0: f64,
    s0: f64,
    study: &StudyConfig,
) -> Result<Vec<ConvergenceRow>> {
    let ladder = &study.ladder;
    if ladder.len() < 3 {
        return Err(Error::Usage(
            "a convergence study needs at least three resolutions".into(),
        ));
    }
    if ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Usage("resolutions must be strictly increasing".into()));
    }

    let mut priced = Vec::with_capacity(ladder.len());
    for &n in ladder {
        let h = study.maturity / n as f64;
        let dx = study.dx_rule.dx(h);
        let cfg = SchemeConfig::with_k_std(n, dx, study.maturity, study.k_std)?;
        priced.push((n, h, dx, price(f, params, y0, s0, &cfg)?));
    }

    let finest = priced.last().map(|r| r.3).unwrap_or_default();
    let scale = priced.iter().fold(1.0f64, |m, r| m.max(r.3.abs()));
    let rows = priced
        .iter()
        .enumerate()
        .map(|(i, &(n, h, dx, p))| {
            let delta = (i >= 1).then(|| p - priced[i - 1].3);
            let order = (i >= 2).then(|| {
                let d1 = (priced[i - 1].3 - priced[i - 2].3).abs();
                let d2 = (p - priced[i - 1].3).abs();
                let tiny = 1e-14 * scale;
                if d1 <= tiny && d2 <= tiny {
                    ObservedOrder::Exact
                } else {
                    ObservedOrder::Value((d1 / d2).ln() / (priced[i - 1].1 / h).ln())
                }
            });
            ConvergenceRow {
                n,
                h,
                dx,
                price: p,
                delta,
                delta_to_finest: p - finest,
                order,
            }
        })
        .collect();
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Payoff;
    use approx::assert_relative_eq;

    fn toy_params() -> HestonParams {
        HestonParams::new(0.05, 0.0, 0.02, 0.5, 0.2, 0.0).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SchemeConfig::new(0, 0.01, 1.0).is_err());
        assert!(SchemeConfig::new(10, 0.0, 1.0).is_err());
        assert!(SchemeConfig::new(10, 0.01, 0.0).is_err());
        assert!(SchemeConfig::with_k_std(10, 0.01, 1.0, 0.5).is_err());
        assert_relative_eq!(SchemeConfig::new(4, 0.01, 1.0).unwrap().h(), 0.25);
    }

    #[test]
    fn terminal_surface_examples() {
        let p = toy_params();
        let lat = Lattice::build(&p, 0.04, 100.0, &SchemeConfig::new(4, 0.05, 1.0).unwrap()).unwrap();
        let one = Payoff::constant(1.0).unwrap();
        let s = terminal_surface(&lat.tree, &lat.grid, &one, &p);
        assert_eq!(s.level, 4);
        assert_eq!(s.nodes.len(), 5);
        assert!(s.nodes.iter().flatten().all(|&v| v == 1.0));

        // rho = 0: the transform is plain log, so the put surface is (K - e^x)^+
        let put = Payoff::put(100.0).unwrap();
        let s = terminal_surface(&lat.tree, &lat.grid, &put, &p);
        for (j, x) in lat.grid.points().enumerate() {
            assert_relative_eq!(s.nodes[0][j], (100.0 - x.exp()).max(0.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn digital_step_moves_with_variance() {
        let p = HestonParams::new(0.05, 0.0, 0.02, 0.5, 0.3, -0.7).unwrap();
        let lat = Lattice::build(&p, 0.04, 100.0, &SchemeConfig::new(4, 0.01, 1.0).unwrap()).unwrap();
        let dig = Payoff::digital(100.0, f64::INFINITY).unwrap();
        let s = terminal_surface(&lat.tree, &lat.grid, &dig, &p);
        for (k, &y) in lat.tree.level(4).values.iter().enumerate() {
            let step = 100f64.ln() - p.rho() / p.sigma() * y;
            for (j, x) in lat.grid.points().enumerate() {
                let v = s.nodes[k][j];
                assert!(v == 0.0 || v == 1.0);
                // away from floating-point ties at the step
                if (x - step).abs() > 1e-9 {
                    assert_eq!(v == 1.0, x > step, "k={k} x={x} step={step}");
                }
            }
        }
    }

    #[test]
    fn one_step_composition() {
        let p = toy_params();
        let cfg = SchemeConfig::new(1, 0.05, 0.25).unwrap();
        let lat = Lattice::build(&p, 0.04, 100.0, &cfg).unwrap();
        let put = Payoff::put(100.0).unwrap();
        let term = terminal_surface(&lat.tree, &lat.grid, &put, &p);
        let root = backward_step(&term, &lat.tree, &lat.ops, 0).unwrap();

        let pu = 0.4375;
        assert_relative_eq!(lat.tree.p_up(0, 0), pu, epsilon = 1e-14);
        let mix: Vec<f64> = term.nodes[1]
            .iter()
            .zip(&term.nodes[0])
            .map(|(u, d)| pu * u + (1.0 - pu) * d)
            .collect();
        let op = TridiagonalOperator::assemble(0.04, &p, 0.25, &lat.grid);
        let expect = op.apply_inverse(&mix);
        for (a, b) in root.nodes[0].iter().zip(&expect) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_surface_stays_constant() {
        let p = HestonParams::new(0.05, 0.0, 0.02, 0.5, 0.3, -0.7).unwrap();
        let cfg = SchemeConfig::new(40, 0.05, 1.0).unwrap();
        let root = price_surface(&Payoff::constant(3.0).unwrap(), &p, 0.04, 100.0, &cfg).unwrap();
        assert!(root.values.iter().all(|v| (v - 3.0).abs() <= 1e-12));
        let disc = price(&Payoff::constant(1.0).unwrap(), &p, 0.04, 100.0, &cfg).unwrap();
        assert_relative_eq!(disc, (-0.05f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn zero_rate_price_is_undiscounted() {
        let p = HestonParams::new(0.0, 0.0, 0.02, 0.5, 0.3, -0.7).unwrap();
        let cfg = SchemeConfig::new(20, 0.02, 1.0).unwrap();
        let put = Payoff::put(100.0).unwrap();
        let root = price_surface(&put, &p, 0.04, 100.0, &cfg).unwrap();
        assert_eq!(price(&put, &p, 0.04, 100.0, &cfg).unwrap(), root.at_center());
    }

    #[test]
    fn missing_operator_is_reported() {
        let p = toy_params();
        let cfg = SchemeConfig::new(2, 0.05, 1.0).unwrap();
        let lat = Lattice::build(&p, 0.04, 100.0, &cfg).unwrap();
        let empty = OperatorCache { ops: HashMap::new() };
        let term = terminal_surface(&lat.tree, &lat.grid, &Payoff::constant(1.0).unwrap(), &p);
        assert!(matches!(
            backward_step(&term, &lat.tree, &empty, 1),
            Err(Error::MissingOperator(_))
        ));
    }

    #[test]
    fn operators_are_shared_between_levels() {
        // y^n_k depends on 2k - n only, so about 2N distinct values
        let p = HestonParams::new(0.05, 0.0, 0.02, 0.5, 0.3, -0.7).unwrap();
        let lat = Lattice::build(&p, 0.04, 100.0, &SchemeConfig::new(50, 0.05, 1.0).unwrap()).unwrap();
        assert!(lat.ops.len() <= 2 * 50 + 1);
    }

    #[test]
    fn study_needs_three_resolutions() {
        let p = toy_params();
        let one = Payoff::constant(1.0).unwrap();
        for ladder in [vec![10, 20], vec![10, 20, 20]] {
            let study = StudyConfig {
                maturity: 1.0,
                ladder,
                dx_rule: DxRule::Proportional(1.0),
                k_std: 6.0,
            };
            let err = convergence_study(&one, &p, 0.04, 100.0, &study);
            assert!(matches!(err, Err(Error::Usage(_))));
        }
    }

    #[test]
    fn constant_payoff_study_is_exact() {
        let p = toy_params();
        let one = Payoff::constant(1.0).unwrap();
        let study = StudyConfig {
            maturity: 1.0,
            ladder: vec![5, 10, 20],
            dx_rule: DxRule::Fixed(0.05),
            k_std: 6.0,
        };
        let rows = convergence_study(&one, &p, 0.04, 100.0, &study).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].delta.is_none() && rows[0].order.is_none());
        for r in &rows[1..] {
            assert!(r.delta.unwrap().abs() <= 1e-14);
        }
        assert_eq!(rows[2].order, Some(ObservedOrder::Exact));
    }
}
