//! Hybrid tree/finite-difference pricing for the Heston model.
//!
//! The variance follows a recombining binomial chain ([`cir_tree`]); between
//! tree levels the log-price is advanced by one implicit upwind
//! finite-difference step ([`fd`]) frozen at the current node variance. The
//! combination ([`hybrid`]) is monotone and nonexpansive in the sup norm, and
//! works whether or not the Feller condition holds. [`mc_oracle`] provides an
//! independent Monte Carlo estimate and [`smoothing`] mollified payoffs for
//! convergence studies.

pub mod cir_tree;
pub mod error;
pub mod fd;
pub mod hybrid;
pub mod mc_oracle;
pub mod model;
pub mod smoothing;

pub use cir_tree::CirTree;
pub use error::{Error, Result};
pub use fd::{SpatialGrid, TridiagonalOperator};
pub use hybrid::{
    convergence_study, price, price_surface, ConvergenceRow, DxRule, Lattice, ObservedOrder,
    SchemeConfig, StudyConfig,
};
pub use mc_oracle::{mc_price, simulate_terminal, McConfig, McEstimate};
pub use model::{HestonParams, Payoff, PayoffTable, TerminalPayoff};
pub use smoothing::{mollify, MollifiedPayoff};
