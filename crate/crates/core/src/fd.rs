//! Implicit upwind finite differences in the transformed log-price.
//!
//! For a frozen variance `y` one backward step of `v_t + mu_x(y) v_x +
//! (rho_bar^2 y / 2) v_xx = 0` is `A(y) v^n = v^{n+1}`, with interior rows
//!
//! ```text
//! sub   = -beta - |alpha| 1{alpha < 0}
//! diag  = 1 + 2 beta + |alpha|
//! super = -beta - |alpha| 1{alpha > 0}
//! ```
//!
//! `alpha = (h / dx) mu_x(y)`, `beta = h rho_bar^2 y / (2 dx^2)`. Every row
//! sums to one and has nonpositive off-diagonals, so `A` is a strictly
//! diagonally dominant M-matrix and `||A^{-1}||_inf <= 1`.

use crate::error::{invalid, Result};
use crate::model::HestonParams;

/// Uniform grid `x0 + i dx`, `i = -M..=M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    x0: f64,
    dx: f64,
    half_count: usize,
}

impl SpatialGrid {
    pub fn new(x0: f64, dx: f64, half_count: usize) -> Result<Self> {
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(invalid("dx", format!("spatial step must be > 0, got {dx}")));
        }
        if !x0.is_finite() {
            return Err(invalid("s0", "grid center must be finite"));
        }
        if half_count < 1 {
            return Err(invalid("dx", "grid needs at least three points"));
        }
        Ok(Self { x0, dx, half_count })
    }

    /// Grid wide enough for every frozen-coefficient dynamics with variance
    /// up to `y_max` over `[0, maturity]`: half-width
    /// `max|mu_x| T + k_std rho_bar sqrt(y_max T)`.
    pub fn covering(
        x0: f64,
        dx: f64,
        params: &HestonParams,
        y_max: f64,
        maturity: f64,
        k_std: f64,
    ) -> Result<Self> {
        if !(k_std >= 1.0 && k_std.is_finite()) {
            return Err(invalid("k-std", format!("must be >= 1, got {k_std}")));
        }
        let drift = params.mu_x(0.0).abs().max(params.mu_x(y_max).abs());
        let width = drift * maturity + k_std * params.rho_bar() * (y_max * maturity).sqrt();
        let half_count = ((width / dx).ceil() as usize).max(1);
        Self::new(x0, dx, half_count)
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn half_count(&self) -> usize {
        self.half_count
    }

    pub fn len(&self) -> usize {
        2 * self.half_count + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Storage index of `x0`.
    pub fn center(&self) -> usize {
        self.half_count
    }

    /// Point at storage index `j` (`x0` sits at `j = M`).
    pub fn point(&self, j: usize) -> f64 {
        self.x0 + (j as f64 - self.half_count as f64) * self.dx
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|j| self.point(j))
    }
}

/// Thomas algorithm for a tridiagonal system given row by row as
/// `(sub, diag, super)`. No pivoting: the system must be diagonally dominant.
fn thomas_in_place<R>(row: R, rhs: &mut [f64], scratch: &mut Vec<f64>)
where
    R: Fn(usize) -> (f64, f64, f64),
{
    let n = rhs.len();
    if n == 0 {
        return;
    }
    scratch.clear();
    scratch.resize(n, 0.0);
    let c = scratch.as_mut_slice();

    let (_, d0, u0) = row(0);
    c[0] = u0 / d0;
    rhs[0] /= d0;
    for i in 1..n {
        let (l, d, u) = row(i);
        let den = d - l * c[i - 1];
        c[i] = u / den;
        rhs[i] = (rhs[i] - l * rhs[i - 1]) / den;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Solves a diagonally dominant tridiagonal system. `lower[0]` and
/// `upper[n - 1]` are ignored.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    assert!(lower.len() == n && diag.len() == n && upper.len() == n);
    let mut w = rhs.to_vec();
    let mut scratch = Vec::with_capacity(n);
    thomas_in_place(
        |i| {
            let l = if i > 0 { lower[i] } else { 0.0 };
            let u = if i + 1 < n { upper[i] } else { 0.0 };
            (l, diag[i], u)
        },
        &mut w,
        &mut scratch,
    );
    w
}

/// Upwind convection coefficient `(h / dx) mu_x(y)`.
pub fn alpha(y: f64, params: &HestonParams, h: f64, dx: f64) -> f64 {
    h / dx * params.mu_x(y)
}

/// Diffusion coefficient `h rho_bar^2 y / (2 dx^2)`.
pub fn beta(y: f64, params: &HestonParams, h: f64, dx: f64) -> f64 {
    let rb2 = 1.0 - params.rho() * params.rho();
    h * rb2 * y / (2.0 * dx * dx)
}

/// `A(y)` on a truncated grid.
///
/// Interior rows have constant coefficients, so only the stencil and the two
/// boundary rows are stored. The boundary rows drop the second difference and
/// keep the upwind first difference when its stencil lies inside the grid
/// (left edge with `alpha > 0`, right edge with `alpha < 0`); at an outflow
/// edge the row is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TridiagonalOperator {
    y: f64,
    size: usize,
    alpha: f64,
    beta: f64,
    stencil: [f64; 3],
    first: [f64; 2],
    last: [f64; 2],
}

impl TridiagonalOperator {
    pub fn assemble(y: f64, params: &HestonParams, h: f64, grid: &SpatialGrid) -> Self {
        let a = alpha(y, params, h, grid.dx());
        let b = beta(y, params, h, grid.dx());
        let lower = -b - if a < 0.0 { a.abs() } else { 0.0 };
        let upper = -b - if a > 0.0 { a } else { 0.0 };
        let diag = 1.0 + 2.0 * b + a.abs();

        let first = if a > 0.0 { [1.0 + a, -a] } else { [1.0, 0.0] };
        let last = if a < 0.0 { [a, 1.0 - a] } else { [0.0, 1.0] };

        Self {
            y,
            size: grid.len(),
            alpha: a,
            beta: b,
            stencil: [lower, diag, upper],
            first,
            last,
        }
    }

    /// Variance the operator was frozen at.
    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `(sub, diag, super)` of row `i`; out-of-matrix entries are zero.
    pub fn row(&self, i: usize) -> (f64, f64, f64) {
        if i == 0 {
            (0.0, self.first[0], self.first[1])
        } else if i + 1 == self.size {
            (self.last[0], self.last[1], 0.0)
        } else {
            let [l, d, u] = self.stencil;
            (l, d, u)
        }
    }

    pub fn lower(&self) -> Vec<f64> {
        (0..self.size).map(|i| self.row(i).0).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.size).map(|i| self.row(i).1).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        (0..self.size).map(|i| self.row(i).2).collect()
    }

    /// `A v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.size);
        let n = self.size;
        (0..n)
            .map(|i| {
                let (l, d, u) = self.row(i);
                let mut acc = d * v[i];
                if i > 0 {
                    acc += l * v[i - 1];
                }
                if i + 1 < n {
                    acc += u * v[i + 1];
                }
                acc
            })
            .collect()
    }

    /// Nonpositive off-diagonals and positive diagonal.
    pub fn has_m_matrix_signs(&self) -> bool {
        (0..self.size).all(|i| {
            let (l, d, u) = self.row(i);
            l <= 0.0 && u <= 0.0 && d > 0.0
        })
    }

    /// Smallest row margin `|a_ii| - sum_{j != i} |a_ij|`.
    pub fn dominance_margin(&self) -> f64 {
        let margin = |(l, d, u): (f64, f64, f64)| d.abs() - l.abs() - u.abs();
        let mut m = margin(self.row(0)).min(margin(self.row(self.size - 1)));
        if self.size > 2 {
            m = m.min(margin(self.row(1)));
        }
        m
    }

    /// Upper bound on `||A^{-1}||_inf` from strict diagonal dominance,
    /// `1 / min_i margin_i`; infinite if some row is not dominant.
    pub fn inverse_norm_bound(&self) -> f64 {
        let m = self.dominance_margin();
        if m > 0.0 {
            1.0 / m
        } else {
            f64::INFINITY
        }
    }

    /// Solves `A w = rhs` in place. `scratch` is resized as needed.
    pub fn solve_in_place(&self, rhs: &mut [f64], scratch: &mut Vec<f64>) {
        assert_eq!(rhs.len(), self.size);
        thomas_in_place(|i| self.row(i), rhs, scratch);
    }

    /// `A^{-1} v`, i.e. one implicit backward step.
    pub fn apply_inverse(&self, v: &[f64]) -> Vec<f64> {
        let mut w = v.to_vec();
        let mut scratch = Vec::with_capacity(self.size);
        self.solve_in_place(&mut w, &mut scratch);
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn desk_params(rho: f64) -> HestonParams {
        HestonParams::new(0.05, 0.0, 0.02, 0.5, 0.3, rho).unwrap()
    }

    fn small_grid(n_half: usize) -> SpatialGrid {
        SpatialGrid::new(0.0, 0.1, n_half).unwrap()
    }

    #[test]
    fn coefficient_examples() {
        let p = desk_params(0.0);
        assert_relative_eq!(alpha(0.04, &p, 0.01, 0.1), 0.003, epsilon = 1e-15);
        assert_relative_eq!(beta(0.04, &p, 0.01, 0.1), 0.02, epsilon = 1e-15);
        assert_eq!(beta(0.0, &p, 0.01, 0.1), 0.0);

        let flat = HestonParams::new(0.03, 0.03, 0.02, 0.5, 0.3, 0.0).unwrap();
        assert_eq!(alpha(0.0, &flat, 0.01, 0.1), 0.0);

        let near_one = desk_params(0.999_999);
        assert!(beta(0.04, &near_one, 0.01, 0.1) < 1e-7);
    }

    #[test]
    fn interior_row_example() {
        let p = desk_params(0.0);
        let op = TridiagonalOperator::assemble(0.04, &p, 0.01, &small_grid(3));
        let (l, d, u) = op.row(3);
        assert_relative_eq!(l, -0.02, epsilon = 1e-15);
        assert_relative_eq!(d, 1.043, epsilon = 1e-15);
        assert_relative_eq!(u, -0.023, epsilon = 1e-15);
        assert_relative_eq!(l + d + u, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn pure_transport_and_pure_diffusion_rows() {
        let p = desk_params(0.0);
        let op = TridiagonalOperator::assemble(0.0, &p, 0.01, &small_grid(3));
        let a = op.alpha();
        assert!(a > 0.0);
        assert_eq!(op.row(2), (0.0, 1.0 + a, -a));

        let flat = HestonParams::new(0.05, 0.0, 0.02, 0.5, 0.3, 0.0).unwrap();
        // mu_x(0.1) = 0.05 - 0.05 = 0
        let op = TridiagonalOperator::assemble(0.1, &flat, 0.01, &small_grid(3));
        assert_eq!(op.alpha(), 0.0);
        let b = op.beta();
        let (l, d, u) = op.row(2);
        assert_eq!((l, u), (-b, -b));
        assert_relative_eq!(d, 1.0 + 2.0 * b);
    }

    #[test]
    fn boundary_rows_follow_drift_sign() {
        let p = desk_params(0.0);
        let up = TridiagonalOperator::assemble(0.04, &p, 0.01, &small_grid(3));
        assert!(up.alpha() > 0.0);
        assert_eq!(up.row(0), (0.0, 1.0 + up.alpha(), -up.alpha()));
        assert_eq!(up.row(6), (0.0, 1.0, 0.0));

        // mu_x(1.0) < 0 at rho = 0
        let down = TridiagonalOperator::assemble(1.0, &p, 0.01, &small_grid(3));
        let a = down.alpha();
        assert!(a < 0.0);
        assert_eq!(down.row(0), (0.0, 1.0, 0.0));
        assert_eq!(down.row(6), (a, 1.0 - a, 0.0));
    }

    #[test]
    fn constant_vector_is_fixed() {
        let p = desk_params(-0.7);
        for y in [0.0, 0.04, 0.5, 3.0] {
            let op = TridiagonalOperator::assemble(y, &p, 0.02, &small_grid(20));
            let w = op.apply_inverse(&vec![2.5; op.size()]);
            for v in w {
                assert!((v - 2.5).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn affine_data_is_transported_at_interior_points() {
        // A (x + mu h) = x on interior rows
        let p = desk_params(0.0);
        let grid = small_grid(5);
        let h = 0.01;
        for y in [0.0, 0.04, 1.0] {
            let op = TridiagonalOperator::assemble(y, &p, h, &grid);
            let shift = p.mu_x(y) * h;
            let v: Vec<f64> = grid.points().map(|x| x + shift).collect();
            let av = op.apply(&v);
            for (j, a) in av.iter().enumerate().take(grid.len() - 1).skip(1) {
                assert!((a - grid.point(j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn covering_grid_width() {
        let p = desk_params(-0.7);
        let g = SpatialGrid::covering(0.3, 0.01, &p, 0.04, 1.0, 6.0).unwrap();
        let w = p.mu_x(0.0).abs().max(p.mu_x(0.04).abs()) + 6.0 * p.rho_bar() * 0.2;
        assert_eq!(g.half_count(), (w / 0.01).ceil() as usize);
        assert_eq!(g.point(g.center()), 0.3);
        assert!(SpatialGrid::covering(0.0, 0.01, &p, 0.04, 1.0, 0.5).is_err());
        assert!(SpatialGrid::new(0.0, 0.0, 3).is_err());
    }

    #[test]
    fn m_matrix_certificate() {
        let p = desk_params(-0.7);
        for y in [0.0, 0.01, 0.04, 0.3, 5.0] {
            let op = TridiagonalOperator::assemble(y, &p, 0.005, &small_grid(10));
            assert!(op.has_m_matrix_signs());
            assert!(op.inverse_norm_bound() <= 1.0 + 1e-12);
            for i in 0..op.size() {
                let (l, d, u) = op.row(i);
                assert!(d >= 1.0 + l.abs() + u.abs() - 1e-14);
                assert!((l + d + u - 1.0).abs() <= 1e-14);
            }
        }
    }

    proptest! {
        #[test]
        fn solve_has_small_residual(
            y in 0.0f64..4.0,
            rho in -0.95f64..0.95,
            h in 1e-3f64..0.2,
            dx in 1e-3f64..0.2,
            v in proptest::collection::vec(-10.0f64..10.0, 21),
        ) {
            let p = desk_params(rho);
            let op = TridiagonalOperator::assemble(y, &p, h, &SpatialGrid::new(0.0, dx, 10).unwrap());
            let w = op.apply_inverse(&v);
            let r = op.apply(&w);
            let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for (ri, vi) in r.iter().zip(&v) {
                prop_assert!((ri - vi).abs() <= 1e-10 * (1.0 + vmax));
            }
        }

        #[test]
        fn solve_is_monotone(
            y in 0.0f64..4.0,
            rho in -0.95f64..0.95,
            lo in proptest::collection::vec(-5.0f64..5.0, 15),
            bump in proptest::collection::vec(0.0f64..5.0, 15),
        ) {
            let p = desk_params(rho);
            let op = TridiagonalOperator::assemble(y, &p, 0.01, &SpatialGrid::new(0.0, 0.02, 7).unwrap());
            let hi: Vec<f64> = lo.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let wl = op.apply_inverse(&lo);
            let wh = op.apply_inverse(&hi);
            for (a, b) in wl.iter().zip(&wh) {
                prop_assert!(a <= b);
            }
            let vmax = lo.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            prop_assert!(wl.iter().all(|w| w.abs() <= vmax * (1.0 + 1e-12)));
        }
    }
}
