//! Central tolerance constants. Every acceptance-grade check pins its
//! threshold here so the tiers stay visible in one place.

/// Identities that hold by construction in exact arithmetic (transposes,
/// sweep inverses, set equalities). Budget: accumulated rounding only.
pub const TOL_MACHINE_IDENTITY: f64 = 1e-11;

/// Identities that need one extra stencil application on top of a machine
/// identity (adjoint defects, reconstruction through P).
pub const TOL_ONE_APPLICATION: f64 = 1e-9;

/// Relative magnitude allowed outside a causal envelope (dilated by
/// `SUPPORT_DILATION_CELLS`).
pub const TOL_SUPPORT_LEAKAGE: f64 = 1e-8;

/// Cells of dilation applied to rasterised causal sets before a support
/// comparison: one for rasterisation rounding, one for the stencil halo.
pub const SUPPORT_DILATION_CELLS: usize = 2;

/// Relative threshold for numerical support extraction.
pub const SUPPORT_THRESHOLD: f64 = 1e-10;

/// Frontier radius against the closed-form horizon integral, trapezoid at
/// Nt = 4096.
pub const TOL_FRONTIER_ABS: f64 = 1e-4;

/// Principal symbol certification over random covectors.
pub const TOL_SYMBOL: f64 = 1e-12;

/// Linearity of the discrete solve map on random data pairs.
pub const TOL_LINEARITY: f64 = 1e-12;

/// Pairing sums against an independently re-summed oracle.
pub const TOL_PAIRING: f64 = 1e-12;

/// Dense-matrix cross-check of the matrix-free Green sweeps (grids <= 32x32).
pub const TOL_DENSE_CROSS_CHECK: f64 = 1e-10;

/// Time-reversal round trip of the solver.
pub const TOL_TIME_REVERSAL: f64 = 1e-10;

/// Observed L-infinity convergence ratio for smooth data under grid doubling
/// must land in this window (second order).
pub const CONVERGENCE_RATIO_WINDOW: (f64, f64) = (3.5, 4.5);

/// Default CFL safety factor `eta`: max_t c(t) * dt / min_i dx_i <= eta.
pub const DEFAULT_CFL_SAFETY: f64 = 0.8;

/// Floor used when two roundoff-level residuals are compared as a ratio.
pub const RESIDUAL_FLOOR: f64 = 1e-13;
