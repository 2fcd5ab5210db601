//! Normally hyperbolic operators on rank-r sections:
//!
//!   P u = (1/beta) u_tt - (1/f^2) sum_i u_xixi + A_t u_t + sum_i A_i u_xi + B u
//!
//! with A_t, A_i, B matrix fields over the grid. The discretisation uses
//! centered differences on interior rows, one-sided second-order rows at the
//! time boundary, and periodic wrap in space. A single row enumerator
//! drives both the forward application and the volume-weighted transpose,
//! so the two stay transposes of each other to rounding.
//!
//! Coefficient matrix fields are stored as `GridSection`s of rank r*r,
//! row-major per node. The operator also carries the divergence fields
//! d(A_t)/dt and d(A_i)/dx_i needed by the formal adjoint; they are exact
//! for the metric presets and finite differences for custom coefficients.

use crate::error::{Error, Result};
use crate::linalg::{matvec_acc, matvec_transpose_acc, C64};
use crate::manifold::{Grid, SpacetimeSpec};
use crate::sections::GridSection;

/// Scalar curved-wave first-order coefficient: the contraction of the
/// Christoffel symbols gives c^t = d f'/(f beta) - beta'/(2 beta^2) and
/// c^x = 0 on the warped slab.
fn christoffel_trace_t(spec: &SpacetimeSpec, t: f64) -> f64 {
    let d = spec.dim() as f64;
    let b = spec.beta_eff(t);
    let b1 = spec.beta_eff_d(t);
    let f = spec.warp_eff(t);
    let f1 = spec.warp_eff_d(t);
    d * f1 / (f * b) - b1 / (2.0 * b * b)
}

fn christoffel_trace_t_deriv(spec: &SpacetimeSpec, t: f64) -> f64 {
    let d = spec.dim() as f64;
    let b = spec.beta_eff(t);
    let b1 = spec.beta_eff_d(t);
    let b2 = spec.beta_eff_dd(t);
    let f = spec.warp_eff(t);
    let f1 = spec.warp_eff_d(t);
    let f2 = spec.warp_eff_dd(t);
    let quot = (f2 * f * b - f1 * (f1 * b + f * b1)) / (f * f * b * b);
    d * quot - (b2 / (2.0 * b * b) - b1 * b1 / (b * b * b))
}

/// rho = sqrt(beta) f^d and its first two time derivatives.
fn volume_profile(spec: &SpacetimeSpec, t: f64) -> (f64, f64, f64) {
    let d = spec.dim() as f64;
    let b = spec.beta_eff(t);
    let b1 = spec.beta_eff_d(t);
    let b2 = spec.beta_eff_dd(t);
    let f = spec.warp_eff(t);
    let f1 = spec.warp_eff_d(t);
    let f2 = spec.warp_eff_dd(t);
    let s = b.sqrt();
    let s1 = b1 / (2.0 * s);
    let s2 = b2 / (2.0 * s) - b1 * b1 / (4.0 * s * s * s);
    let p = f.powf(d);
    let p1 = d * f.powf(d - 1.0) * f1;
    let p2 = d * (d - 1.0) * f.powf(d - 2.0) * f1 * f1 + d * f.powf(d - 1.0) * f2;
    (s * p, s1 * p + s * p1, s2 * p + 2.0 * s1 * p1 + s * p2)
}

/// Per-slice scalars used by the formal adjoint. With q = rho / beta:
/// the t-derivative pair picks up 2 q'/rho on the first-order term and
/// q''/rho on the zeroth, A_t picks up -(rho'/rho) A_t - dA_t/dt.
struct AdjointProfile {
    e1: f64,   // 2 q' / rho
    e0: f64,   // q'' / rho
    m: f64,    // rho' / rho
    e1_d: f64, // d/dt of e1
}

fn adjoint_profile(spec: &SpacetimeSpec, t: f64) -> AdjointProfile {
    let b = spec.beta_eff(t);
    let b1 = spec.beta_eff_d(t);
    let b2 = spec.beta_eff_dd(t);
    let (rho, rho1, rho2) = volume_profile(spec, t);
    let q1 = rho1 / b - rho * b1 / (b * b);
    let q2 = rho2 / b - 2.0 * rho1 * b1 / (b * b) + rho * (2.0 * b1 * b1 / (b * b * b) - b2 / (b * b));
    AdjointProfile {
        e1: 2.0 * q1 / rho,
        e0: q2 / rho,
        m: rho1 / rho,
        e1_d: 2.0 * (q2 * rho - q1 * rho1) / (rho * rho),
    }
}

/// Matrix fields are `GridSection`s of rank r*r; this slices out one node's
/// block.
#[inline]
fn block(field: &GridSection, node: usize, r: usize) -> &[C64] {
    &field.values[node * r * r..(node + 1) * r * r]
}

fn identity_field(grid: &Grid, r: usize, diag: impl Fn(f64) -> f64) -> GridSection {
    GridSection::from_fn(grid, r * r, |t, _, k| {
        if k / r == k % r {
            C64::new(diag(t), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Discrete time derivative of a matrix field with the same one-sided rules
/// the stencil uses, for custom coefficients without analytic derivatives.
fn fd_time_derivative(grid: &Grid, u: &GridSection) -> GridSection {
    let mut out = GridSection::zeros(grid, u.rank);
    let s = 1.0 / (2.0 * grid.dt);
    for n in 0..u.nt {
        for cell in 0..u.cells {
            for k in 0..u.rank {
                let v = if n == 0 {
                    (-3.0 * u.get(0, cell, k) + 4.0 * u.get(1, cell, k) - u.get(2, cell, k)) * s
                } else if n == u.nt - 1 {
                    (3.0 * u.get(n, cell, k) - 4.0 * u.get(n - 1, cell, k) + u.get(n - 2, cell, k)) * s
                } else {
                    (u.get(n + 1, cell, k) - u.get(n - 1, cell, k)) * s
                };
                out.set(n, cell, k, v);
            }
        }
    }
    out
}

fn fd_space_derivative(grid: &Grid, u: &GridSection, axis: usize) -> GridSection {
    let mut out = GridSection::zeros(grid, u.rank);
    let s = 1.0 / (2.0 * grid.dx[axis]);
    let (nx, ny) = (grid.nx[0], grid.nx[1]);
    for n in 0..u.nt {
        for cell in 0..u.cells {
            let (jx, jy) = grid.cell_coords(cell);
            let (p, m) = if axis == 0 {
                (grid.cell_index((jx + 1) % nx, jy), grid.cell_index((jx + nx - 1) % nx, jy))
            } else {
                (grid.cell_index(jx, (jy + 1) % ny), grid.cell_index(jx, (jy + ny - 1) % ny))
            };
            for k in 0..u.rank {
                out.set(n, cell, k, (u.get(n, p, k) - u.get(n, m, k)) * s);
            }
        }
    }
    out
}

pub struct WaveOperator {
    pub spec: SpacetimeSpec,
    pub grid: Grid,
    pub rank: usize,
    /// 1/beta at each slice: coefficient of u_tt.
    pub(crate) inv_beta: Vec<f64>,
    /// -1/f^2 at each slice: coefficient of each u_xixi.
    pub(crate) neg_inv_f2: Vec<f64>,
    a_t: GridSection,
    a_x: Vec<GridSection>,
    b: GridSection,
    da_t: GridSection,
    da_x: Vec<GridSection>,
}

impl WaveOperator {
    /// Scalar curved-space d'Alembertian extended diagonally to rank r.
    pub fn dalembert(spec: &SpacetimeSpec, grid: &Grid, rank: usize) -> Result<Self> {
        crate::manifold::validate(spec, grid)?;
        let a_t = identity_field(grid, rank, |t| christoffel_trace_t(spec, t));
        let da_t = identity_field(grid, rank, |t| christoffel_trace_t_deriv(spec, t));
        let zero = GridSection::zeros(grid, rank * rank);
        Ok(Self {
            spec: spec.clone(),
            grid: grid.clone(),
            rank,
            inv_beta: (0..grid.nt).map(|n| 1.0 / spec.beta_eff(grid.t(n))).collect(),
            neg_inv_f2: (0..grid.nt)
                .map(|n| {
                    let f = spec.warp_eff(grid.t(n));
                    -1.0 / (f * f)
                })
                .collect(),
            a_t,
            a_x: vec![zero.clone(); grid.dim],
            b: zero.clone(),
            da_t,
            da_x: vec![zero; grid.dim],
        })
    }

    /// Operator with caller-supplied lower-order matrix fields (each a
    /// GridSection of rank r*r). Divergence fields come from finite
    /// differences of the samples.
    pub fn custom(
        spec: &SpacetimeSpec,
        grid: &Grid,
        rank: usize,
        a_t: GridSection,
        a_x: Vec<GridSection>,
        b: GridSection,
    ) -> Result<Self> {
        crate::manifold::validate(spec, grid)?;
        let rr = rank * rank;
        if a_t.rank != rr || b.rank != rr || a_x.len() != grid.dim || a_x.iter().any(|f| f.rank != rr) {
            return Err(Error::RankMismatch { expected: rr, got: a_t.rank });
        }
        let da_t = fd_time_derivative(grid, &a_t);
        let da_x = a_x
            .iter()
            .enumerate()
            .map(|(ax, f)| fd_space_derivative(grid, f, ax))
            .collect();
        Ok(Self {
            spec: spec.clone(),
            grid: grid.clone(),
            rank,
            inv_beta: (0..grid.nt).map(|n| 1.0 / spec.beta_eff(grid.t(n))).collect(),
            neg_inv_f2: (0..grid.nt)
                .map(|n| {
                    let f = spec.warp_eff(grid.t(n));
                    -1.0 / (f * f)
                })
                .collect(),
            a_t,
            a_x,
            b,
            da_t,
            da_x,
        })
    }

    /// Connection d'Alembertian plus potential: the square of d + A expanded
    /// into stencil coefficients,
    ///   A_t^op = 2/beta A_t + c^t I,
    ///   A_i^op = -2/f^2 A_i,
    ///   B^op   = 1/beta (dA_t/dt + A_t^2) - 1/f^2 sum_i (dA_i/dx_i + A_i^2)
    ///            + c^t A_t + V.
    pub fn connection_dalembert(
        spec: &SpacetimeSpec,
        grid: &Grid,
        rank: usize,
        conn_t: GridSection,
        conn_x: Vec<GridSection>,
        v: GridSection,
    ) -> Result<Self> {
        let rr = rank * rank;
        if conn_t.rank != rr || v.rank != rr || conn_x.len() != grid.dim || conn_x.iter().any(|f| f.rank != rr) {
            return Err(Error::RankMismatch { expected: rr, got: conn_t.rank });
        }
        let d_conn_t = fd_time_derivative(grid, &conn_t);
        let d_conn_x: Vec<GridSection> = conn_x
            .iter()
            .enumerate()
            .map(|(ax, f)| fd_space_derivative(grid, f, ax))
            .collect();

        let mut a_t = GridSection::zeros(grid, rr);
        let mut a_x = vec![GridSection::zeros(grid, rr); grid.dim];
        let mut b = GridSection::zeros(grid, rr);
        let cells = grid.cells();
        for n in 0..grid.nt {
            let t = grid.t(n);
            let ib = 1.0 / spec.beta_eff(t);
            let f = spec.warp_eff(t);
            let nif2 = -1.0 / (f * f);
            let ct = christoffel_trace_t(spec, t);
            for cell in 0..cells {
                let node = n * cells + cell;
                let ct_blk = block(&conn_t, node, rank);
                let dct_blk = block(&d_conn_t, node, rank);
                let v_blk = block(&v, node, rank);
                for i in 0..rank {
                    for j in 0..rank {
                        let e = i * rank + j;
                        let diag = if i == j { 1.0 } else { 0.0 };
                        a_t.values[node * rr + e] = 2.0 * ib * ct_blk[e] + C64::new(ct * diag, 0.0);
                        // A_t^2 entry
                        let mut sq = C64::new(0.0, 0.0);
                        for l in 0..rank {
                            sq += ct_blk[i * rank + l] * ct_blk[l * rank + j];
                        }
                        let mut acc = ib * (dct_blk[e] + sq) + ct * ct_blk[e] + v_blk[e];
                        for ax in 0..grid.dim {
                            let cx_blk = block(&conn_x[ax], node, rank);
                            let dcx_blk = block(&d_conn_x[ax], node, rank);
                            let mut sqx = C64::new(0.0, 0.0);
                            for l in 0..rank {
                                sqx += cx_blk[i * rank + l] * cx_blk[l * rank + j];
                            }
                            acc += nif2 * (dcx_blk[e] + sqx);
                            a_x[ax].values[node * rr + e] = 2.0 * nif2 * cx_blk[e];
                        }
                        b.values[node * rr + e] = acc;
                    }
                }
            }
        }
        Self::custom(spec, grid, rank, a_t, a_x, b)
    }

    fn check_section(&self, u: &GridSection) -> Result<()> {
        if u.rank != self.rank {
            return Err(Error::RankMismatch { expected: self.rank, got: u.rank });
        }
        if u.nt != self.grid.nt || u.cells != self.grid.cells() {
            return Err(Error::GridMismatch("section does not match the operator grid".into()));
        }
        Ok(())
    }

    /// M(n, cell, sign) = (1/(beta dt^2)) I + sign A_t/(2 dt): the block
    /// multiplying u^{n+sign} in an interior row. The marching solvers in
    /// the Green and Cauchy modules factor exactly this matrix.
    pub(crate) fn time_neighbor_matrix(&self, n: usize, cell: usize, sign: f64, out: &mut [C64]) {
        let r = self.rank;
        let kb = self.inv_beta[n] / (self.grid.dt * self.grid.dt);
        let s = sign / (2.0 * self.grid.dt);
        let node = n * self.grid.cells() + cell;
        let at = block(&self.a_t, node, r);
        for i in 0..r {
            for j in 0..r {
                let e = i * r + j;
                out[e] = at[e] * s + if i == j { C64::new(kb, 0.0) } else { C64::new(0.0, 0.0) };
            }
        }
    }

    /// Diagonal scalar of the interior time stencil: -2/(beta dt^2).
    pub(crate) fn time_diag_scalar(&self, n: usize) -> f64 {
        -2.0 * self.inv_beta[n] / (self.grid.dt * self.grid.dt)
    }

    /// Spatial stencil plus zeroth order applied to one slice:
    /// out = -1/f^2 sum_i D_ii u + sum_i A_i D_i u + B u, slice-local.
    pub(crate) fn spatial_zeroth_slice(&self, n: usize, u: &[C64], out: &mut [C64]) {
        let r = self.rank;
        let cells = self.grid.cells();
        debug_assert_eq!(u.len(), cells * r);
        debug_assert_eq!(out.len(), cells * r);
        out.fill(C64::new(0.0, 0.0));
        let (nx, ny) = (self.grid.nx[0], self.grid.nx[1]);
        for cell in 0..cells {
            let node = n * cells + cell;
            let (jx, jy) = self.grid.cell_coords(cell);
            let mut diag_scalar = 0.0;
            for ax in 0..self.grid.dim {
                let dx = self.grid.dx[ax];
                let sx = self.neg_inv_f2[n] / (dx * dx);
                diag_scalar += -2.0 * sx;
                let (p, m) = if ax == 0 {
                    (self.grid.cell_index((jx + 1) % nx, jy), self.grid.cell_index((jx + nx - 1) % nx, jy))
                } else {
                    (self.grid.cell_index(jx, (jy + 1) % ny), self.grid.cell_index(jx, (jy + ny - 1) % ny))
                };
                let axf = block(&self.a_x[ax], node, r);
                let g = 1.0 / (2.0 * dx);
                for i in 0..r {
                    let mut acc = C64::new(0.0, 0.0);
                    for j in 0..r {
                        acc += axf[i * r + j] * ((u[p * r + j] - u[m * r + j]) * g);
                    }
                    out[cell * r + i] += acc + (u[p * r + i] + u[m * r + i]) * sx;
                }
            }
            let bb = block(&self.b, node, r);
            for i in 0..r {
                let mut acc = u[cell * r + i] * diag_scalar;
                for j in 0..r {
                    acc += bb[i * r + j] * u[cell * r + j];
                }
                out[cell * r + i] += acc;
            }
        }
    }

    /// Transpose of `spatial_zeroth_slice` as a matrix over one slice.
    /// First-order blocks move to the neighbours they came from:
    /// out(c) = sum_ax [ sx (u(c+) + u(c-)) + g (A_ax(c-)^T u(c-) - A_ax(c+)^T u(c+)) ]
    ///          - 2 sum_ax sx u(c) + B(c)^T u(c).
    pub(crate) fn spatial_zeroth_slice_transposed(&self, n: usize, u: &[C64], out: &mut [C64]) {
        let r = self.rank;
        let cells = self.grid.cells();
        debug_assert_eq!(u.len(), cells * r);
        debug_assert_eq!(out.len(), cells * r);
        out.fill(C64::new(0.0, 0.0));
        let (nx, ny) = (self.grid.nx[0], self.grid.nx[1]);
        for cell in 0..cells {
            let (jx, jy) = self.grid.cell_coords(cell);
            let mut diag_scalar = 0.0;
            for ax in 0..self.grid.dim {
                let dx = self.grid.dx[ax];
                let sx = self.neg_inv_f2[n] / (dx * dx);
                diag_scalar += -2.0 * sx;
                let (p, m) = if ax == 0 {
                    (self.grid.cell_index((jx + 1) % nx, jy), self.grid.cell_index((jx + nx - 1) % nx, jy))
                } else {
                    (self.grid.cell_index(jx, (jy + 1) % ny), self.grid.cell_index(jx, (jy + ny - 1) % ny))
                };
                let axp = block(&self.a_x[ax], n * cells + p, r);
                let axm = block(&self.a_x[ax], n * cells + m, r);
                let g = 1.0 / (2.0 * dx);
                for i in 0..r {
                    let mut acc = C64::new(0.0, 0.0);
                    for j in 0..r {
                        acc += (axm[j * r + i] * u[m * r + j] - axp[j * r + i] * u[p * r + j]) * g;
                    }
                    out[cell * r + i] += acc + (u[p * r + i] + u[m * r + i]) * sx;
                }
            }
            let bb = block(&self.b, n * cells + cell, r);
            for i in 0..r {
                let mut acc = u[cell * r + i] * diag_scalar;
                for j in 0..r {
                    acc += bb[j * r + i] * u[cell * r + j];
                }
                out[cell * r + i] += acc;
            }
        }
    }

    /// One-sided time rows: list of (slice, c2, c1) pairs so that
    /// u_tt ~ sum c2 u^m and u_t ~ sum c1 u^m at the boundary row.
    fn boundary_time_taps(&self, n: usize) -> Vec<(usize, f64, f64)> {
        let dt = self.grid.dt;
        let dt2 = dt * dt;
        let nt = self.grid.nt;
        if nt >= 4 {
            if n == 0 {
                vec![
                    (0, 2.0 / dt2, -3.0 / (2.0 * dt)),
                    (1, -5.0 / dt2, 4.0 / (2.0 * dt)),
                    (2, 4.0 / dt2, -1.0 / (2.0 * dt)),
                    (3, -1.0 / dt2, 0.0),
                ]
            } else {
                vec![
                    (nt - 1, 2.0 / dt2, 3.0 / (2.0 * dt)),
                    (nt - 2, -5.0 / dt2, -4.0 / (2.0 * dt)),
                    (nt - 3, 4.0 / dt2, 1.0 / (2.0 * dt)),
                    (nt - 4, -1.0 / dt2, 0.0),
                ]
            }
        } else {
            // three slices: fall back to the centered curvature evaluated
            // off-center, first order but well-posed
            if n == 0 {
                vec![
                    (0, 1.0 / dt2, -3.0 / (2.0 * dt)),
                    (1, -2.0 / dt2, 4.0 / (2.0 * dt)),
                    (2, 1.0 / dt2, -1.0 / (2.0 * dt)),
                ]
            } else {
                vec![
                    (2, 1.0 / dt2, 3.0 / (2.0 * dt)),
                    (1, -2.0 / dt2, -4.0 / (2.0 * dt)),
                    (0, 1.0 / dt2, 1.0 / (2.0 * dt)),
                ]
            }
        }
    }

    /// Canonical row enumeration: every nonzero r x r block of the stencil
    /// row (n, cell), emitted as (slice, cell, block). Both `apply` and
    /// `discrete_adjoint` consume exactly this enumeration, and the dense
    /// cross-check assembles its matrix from it.
    pub(crate) fn for_each_row_block(
        &self,
        n: usize,
        cell: usize,
        scratch: &mut Vec<C64>,
        emit: &mut dyn FnMut(usize, usize, &[C64]),
    ) {
        let r = self.rank;
        let rr = r * r;
        scratch.resize(rr, C64::new(0.0, 0.0));
        let cells = self.grid.cells();
        let node = n * cells + cell;
        let interior = n >= 1 && n + 1 < self.grid.nt;

        // time taps
        if interior {
            self.time_neighbor_matrix(n, cell, -1.0, scratch);
            emit(n - 1, cell, scratch);
            self.time_neighbor_matrix(n, cell, 1.0, scratch);
            emit(n + 1, cell, scratch);
        } else {
            let at = block(&self.a_t, node, r).to_vec();
            for (m, c2, c1) in self.boundary_time_taps(n) {
                let k = self.inv_beta[n] * c2;
                for i in 0..r {
                    for j in 0..r {
                        let e = i * r + j;
                        scratch[e] = at[e] * c1 + if i == j { C64::new(k, 0.0) } else { C64::new(0.0, 0.0) };
                    }
                }
                emit(m, cell, scratch);
            }
        }

        // spatial neighbor taps
        let (nx, ny) = (self.grid.nx[0], self.grid.nx[1]);
        let (jx, jy) = self.grid.cell_coords(cell);
        let mut diag_scalar = if interior { self.time_diag_scalar(n) } else { 0.0 };
        for ax in 0..self.grid.dim {
            let dx = self.grid.dx[ax];
            let sx = self.neg_inv_f2[n] / (dx * dx);
            diag_scalar += -2.0 * sx;
            let (p, m) = if ax == 0 {
                (self.grid.cell_index((jx + 1) % nx, jy), self.grid.cell_index((jx + nx - 1) % nx, jy))
            } else {
                (self.grid.cell_index(jx, (jy + 1) % ny), self.grid.cell_index(jx, (jy + ny - 1) % ny))
            };
            let axf = block(&self.a_x[ax], node, r).to_vec();
            let g = 1.0 / (2.0 * dx);
            for (target, sign) in [(p, 1.0), (m, -1.0)] {
                for i in 0..r {
                    for j in 0..r {
                        let e = i * r + j;
                        scratch[e] =
                            axf[e] * (sign * g) + if i == j { C64::new(sx, 0.0) } else { C64::new(0.0, 0.0) };
                    }
                }
                emit(n, target, scratch);
            }
        }

        // diagonal block
        let bb = block(&self.b, node, r);
        for i in 0..r {
            for j in 0..r {
                let e = i * r + j;
                scratch[e] = bb[e] + if i == j { C64::new(diag_scalar, 0.0) } else { C64::new(0.0, 0.0) };
            }
        }
        emit(n, cell, scratch);
    }

    pub fn apply(&self, u: &GridSection) -> Result<GridSection> {
        self.check_section(u)?;
        let r = self.rank;
        let cells = self.grid.cells();
        let mut out = GridSection::zeros(&self.grid, r);
        let mut scratch = Vec::new();
        for n in 0..self.grid.nt {
            for cell in 0..cells {
                let row = (n * cells + cell) * r;
                let mut acc = vec![C64::new(0.0, 0.0); r];
                self.for_each_row_block(n, cell, &mut scratch, &mut |ms, mc, blk| {
                    let col = (ms * cells + mc) * r;
                    matvec_acc(blk, &u.values[col..col + r], &mut acc);
                });
                out.values[row..row + r].copy_from_slice(&acc);
            }
        }
        Ok(out)
    }

    /// Volume-weighted transpose: Pt v = W^{-1} S^T (W v) where S is the
    /// stencil matrix and W the diagonal of volume weights. Satisfies
    /// [S u, v] = [u, Pt v] in the bilinear volume pairing to rounding.
    pub fn discrete_adjoint(&self, v: &GridSection) -> Result<GridSection> {
        self.check_section(v)?;
        let r = self.rank;
        let cells = self.grid.cells();
        let w = self.grid.volume_weights(&self.spec);
        let mut out = GridSection::zeros(&self.grid, r);
        let mut scratch = Vec::new();
        let mut wv = vec![C64::new(0.0, 0.0); r];
        for n in 0..self.grid.nt {
            for cell in 0..cells {
                let node = n * cells + cell;
                let row = node * r;
                for i in 0..r {
                    wv[i] = v.values[row + i] * w[node];
                }
                self.for_each_row_block(n, cell, &mut scratch, &mut |ms, mc, blk| {
                    let col = (ms * cells + mc) * r;
                    matvec_transpose_acc(blk, &wv, &mut out.values[col..col + r]);
                });
            }
        }
        for node in 0..self.grid.nt * cells {
            for i in 0..r {
                out.values[node * r + i] /= w[node];
            }
        }
        Ok(out)
    }

    /// Formal adjoint in the bilinear volume pairing: the operator Pt with
    /// integral[(P u) . v] = integral[u . (Pt v)] for sections vanishing
    /// near the time boundary. Principal part unchanged; lower-order fields
    /// transform by transposition plus volume-profile corrections. The
    /// divergence fields of the result are assembled algebraically, which
    /// makes the double adjoint collapse to the original operator instead
    /// of drifting by a finite-difference error.
    pub fn formal_adjoint(&self) -> Self {
        let grid = &self.grid;
        let r = self.rank;
        let rr = r * r;
        let cells = grid.cells();
        let mut a_t = GridSection::zeros(grid, rr);
        let mut b = GridSection::zeros(grid, rr);
        let mut da_t = GridSection::zeros(grid, rr);
        let mut a_x = vec![GridSection::zeros(grid, rr); grid.dim];
        let mut da_x = vec![GridSection::zeros(grid, rr); grid.dim];
        for n in 0..grid.nt {
            let prof = adjoint_profile(&self.spec, grid.t(n));
            for cell in 0..cells {
                let node = n * cells + cell;
                let at = block(&self.a_t, node, r);
                let dat = block(&self.da_t, node, r);
                let bb = block(&self.b, node, r);
                for i in 0..r {
                    for j in 0..r {
                        let e = i * r + j;
                        let te = j * r + i; // transposed entry
                        let diag = if i == j { 1.0 } else { 0.0 };
                        a_t.values[node * rr + e] = C64::new(prof.e1 * diag, 0.0) - at[te];
                        da_t.values[node * rr + e] = C64::new(prof.e1_d * diag, 0.0) - dat[te];
                        b.values[node * rr + e] = bb[te] + C64::new(prof.e0 * diag, 0.0)
                            - at[te] * prof.m
                            - dat[te];
                        for ax in 0..grid.dim {
                            let axf = block(&self.a_x[ax], node, r);
                            let daxf = block(&self.da_x[ax], node, r);
                            a_x[ax].values[node * rr + e] = -axf[te];
                            da_x[ax].values[node * rr + e] = -daxf[te];
                            b.values[node * rr + e] -= daxf[te];
                        }
                    }
                }
            }
        }
        Self {
            spec: self.spec.clone(),
            grid: self.grid.clone(),
            rank: r,
            inv_beta: self.inv_beta.clone(),
            neg_inv_f2: self.neg_inv_f2.clone(),
            a_t,
            a_x,
            b,
            da_t,
            da_x,
        }
    }

    /// sigma(xi) = (xi_t^2/beta - |xi_x|^2/f^2) I: the second-order part of
    /// the operator evaluated on a covector, equal to minus the metric
    /// square of xi times the identity.
    pub fn principal_symbol(&self, t: f64, xi: &[f64]) -> Result<Vec<C64>> {
        if xi.len() != self.grid.dim + 1 {
            return Err(Error::Domain(format!(
                "covector needs {} components, got {}",
                self.grid.dim + 1,
                xi.len()
            )));
        }
        let mut s = xi[0] * xi[0] / self.spec.beta_eff(t);
        let f = self.spec.warp_eff(t);
        for x in &xi[1..] {
            s -= x * x / (f * f);
        }
        let r = self.rank;
        let mut out = vec![C64::new(0.0, 0.0); r * r];
        for i in 0..r {
            out[i * r + i] = C64::new(s, 0.0);
        }
        Ok(out)
    }

    /// Inverse-metric square of a covector, for symbol comparisons.
    pub fn metric_square(&self, t: f64, xi: &[f64]) -> f64 {
        let f = self.spec.warp_eff(t);
        let mut s = -xi[0] * xi[0] / self.spec.beta_eff(t);
        for x in &xi[1..] {
            s += x * x / (f * f);
        }
        s
    }

    pub(crate) fn a_t_block(&self, node: usize) -> &[C64] {
        block(&self.a_t, node, self.rank)
    }

    #[cfg(test)]
    pub(crate) fn coefficient_fields(&self) -> (&GridSection, &[GridSection], &GridSection) {
        (&self.a_t, &self.a_x, &self.b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sections::{apply_op_to_distribution, pair, DiscreteDistribution};
    use crate::tolerances;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn desitter(nt: usize, nx: usize) -> (SpacetimeSpec, Grid) {
        let spec = SpacetimeSpec::desitter(&[2.0 * PI], 0.0, 1.5).unwrap();
        let grid = Grid::new(&spec, nt, &[nx], 1.0).unwrap();
        (spec, grid)
    }

    fn random_field(grid: &Grid, rank: usize, seed: u64) -> GridSection {
        // smooth trig fields so finite differences behave
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<(f64, f64, f64)> = (0..rank)
            .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        GridSection::from_fn(grid, rank, |t, x, k| {
            let (a, b, c) = coeffs[k];
            C64::new(a * (x[0] + b * t).cos(), c * (t - x[0]).sin())
        })
    }

    fn padded_section(grid: &Grid, rank: usize, pad: usize, seed: u64) -> GridSection {
        let mut s = random_field(grid, rank, seed);
        for n in (0..pad).chain(grid.nt - pad..grid.nt) {
            s.slice_data_mut(n).fill(C64::new(0.0, 0.0));
        }
        s
    }

    #[test]
    fn dalembert_matches_expanded_stencil() {
        let (spec, grid) = desitter(33, 32);
        let op = WaveOperator::dalembert(&spec, &grid, 1).unwrap();
        let u = random_field(&grid, 1, 5);
        let pu = op.apply(&u).unwrap();
        // independent evaluation at interior nodes
        let dt2 = grid.dt * grid.dt;
        for n in 1..grid.nt - 1 {
            let t = grid.t(n);
            let ib = 1.0 / spec.beta_eff(t);
            let f = spec.warp_eff(t);
            let at = (spec.dim() as f64) * spec.warp_eff_d(t) / (f * spec.beta_eff(t))
                - spec.beta_eff_d(t) / (2.0 * spec.beta_eff(t).powi(2));
            for cell in 0..grid.cells() {
                let jp = (cell + 1) % grid.nx[0];
                let jm = (cell + grid.nx[0] - 1) % grid.nx[0];
                let dtt = (u.get(n + 1, cell, 0) - 2.0 * u.get(n, cell, 0) + u.get(n - 1, cell, 0)) / dt2;
                let dt1 = (u.get(n + 1, cell, 0) - u.get(n - 1, cell, 0)) / (2.0 * grid.dt);
                let dxx = (u.get(n, jp, 0) - 2.0 * u.get(n, cell, 0) + u.get(n, jm, 0))
                    / (grid.dx[0] * grid.dx[0]);
                let want = dtt * ib + dt1 * at - dxx / (f * f);
                let got = pu.get(n, cell, 0);
                assert!(
                    (got - want).norm() <= 1e-10 * want.norm().max(1.0),
                    "node ({n}, {cell}): {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn dalembert_annihilates_constants() {
        let (spec, grid) = desitter(17, 16);
        let op = WaveOperator::dalembert(&spec, &grid, 2).unwrap();
        let u = GridSection::from_fn(&grid, 2, |_, _, k| C64::new(1.0 + k as f64, -0.5));
        let pu = op.apply(&u).unwrap();
        assert!(pu.max_abs() < tolerances::TOL_MACHINE_IDENTITY, "P(const) = {}", pu.max_abs());
    }

    #[test]
    fn truncation_error_is_second_order_everywhere() {
        // u = e^{ -t } cos x has Pu = (1 - tanh t + sech^2 t) u in closed
        // form on the de Sitter slab; boundary rows must keep the order.
        let run = |nt: usize, nx: usize| -> f64 {
            let (spec, grid) = desitter(nt, nx);
            let op = WaveOperator::dalembert(&spec, &grid, 1).unwrap();
            let u = GridSection::from_fn(&grid, 1, |t, x, _| C64::new((-t).exp() * x[0].cos(), 0.0));
            let pu = op.apply(&u).unwrap();
            let mut worst = 0.0f64;
            for n in 0..grid.nt {
                let t = grid.t(n);
                let factor = 1.0 - t.tanh() + 1.0 / t.cosh().powi(2);
                for cell in 0..grid.cells() {
                    let want = factor * (-t).exp() * grid.cell_center(cell)[0].cos();
                    worst = worst.max((pu.get(n, cell, 0) - C64::new(want, 0.0)).norm());
                }
            }
            worst
        };
        let e1 = run(41, 40);
        let e2 = run(81, 80);
        let ratio = e1 / e2;
        let (lo, hi) = tolerances::CONVERGENCE_RATIO_WINDOW;
        assert!(ratio > lo && ratio < hi, "halving h: error {e1} -> {e2}, ratio {ratio}");
    }

    #[test]
    fn principal_symbol_is_minus_metric_square() {
        let (spec, grid) = desitter(17, 16);
        let op = WaveOperator::dalembert(&spec, &grid, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let t = rng.gen_range(0.0..1.5);
            let xi = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let sym = op.principal_symbol(t, &xi).unwrap();
            let q = op.metric_square(t, &xi);
            for i in 0..2 {
                for j in 0..2 {
                    let want = if i == j { -q } else { 0.0 };
                    assert!(
                        (sym[i * 2 + j] - C64::new(want, 0.0)).norm() <= tolerances::TOL_SYMBOL,
                        "sigma({xi:?}) entry ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn plane_wave_extraction_recovers_symbol() {
        // apply P to e^{i lambda (xi_t t + xi_x x)} and strip the lower
        // orders with a lambda -> -lambda average; stencil consistency
        // makes the quotient approach sigma as the grid refines
        let (spec, grid) = desitter(161, 160);
        let op = WaveOperator::dalembert(&spec, &grid, 1).unwrap();
        let xi = [0.7, 1.0];
        let lam = 1.0;
        let wave = |l: f64| {
            GridSection::from_fn(&grid, 1, |t, x, _| {
                (C64::i() * l * (xi[0] * t + xi[1] * x[0])).exp()
            })
        };
        let up = wave(lam);
        let um = wave(-lam);
        let pp = op.apply(&up).unwrap();
        let pm = op.apply(&um).unwrap();
        let (n, cell) = (grid.nt / 2, grid.cells() / 2);
        let t = grid.t(n);
        let qp = pp.get(n, cell, 0) / up.get(n, cell, 0);
        let qm = pm.get(n, cell, 0) / um.get(n, cell, 0);
        let even = (qp + qm) / 2.0; // -lam^2 sigma + B + O(h^2)
        let sym = op.principal_symbol(t, &xi).unwrap()[0];
        let got = -(even - C64::new(0.0, 0.0)) / (lam * lam);
        assert!(
            (got - sym).norm() < 5e-3 * sym.norm().max(1.0),
            "extracted {got} vs symbol {sym}"
        );
    }

    #[test]
    fn scalar_dalembert_is_formally_self_adjoint() {
        let (spec, grid) = desitter(33, 24);
        let op = WaveOperator::dalembert(&spec, &grid, 1).unwrap();
        let adj = op.formal_adjoint();
        let u = padded_section(&grid, 1, 3, 17);
        let a = op.apply(&u).unwrap();
        let b = adj.apply(&u).unwrap();
        let scale = a.max_abs().max(1.0);
        assert!(
            a.max_abs_diff(&b).unwrap() <= 1e-11 * scale,
            "self-adjointness defect {}",
            a.max_abs_diff(&b).unwrap() / scale
        );
    }

    #[test]
    fn formal_adjoint_is_an_involution() {
        let (spec, grid) = desitter(25, 24);
        let rank = 2;
        let rr = rank * rank;
        let a_t = random_field(&grid, rr, 31);
        let a_x = vec![random_field(&grid, rr, 32)];
        let b = random_field(&grid, rr, 33);
        let op = WaveOperator::custom(&spec, &grid, rank, a_t.clone(), a_x.clone(), b.clone()).unwrap();
        let back = op.formal_adjoint().formal_adjoint();
        let (bat, bax, bb) = back.coefficient_fields();
        assert!(a_t.max_abs_diff(bat).unwrap() < 1e-12 * a_t.max_abs().max(1.0));
        assert!(a_x[0].max_abs_diff(&bax[0]).unwrap() < 1e-12 * a_x[0].max_abs().max(1.0));
        assert!(b.max_abs_diff(bb).unwrap() < 1e-12 * b.max_abs().max(1.0));
        // and at the level of applications
        let u = random_field(&grid, rank, 34);
        let pu = op.apply(&u).unwrap();
        let qu = back.apply(&u).unwrap();
        assert!(pu.max_abs_diff(&qu).unwrap() <= 1e-11 * pu.max_abs().max(1.0));
    }

    #[test]
    fn formal_adjoint_pairing_converges_at_second_order() {
        // continuum duality [Pu, v] = [u, Pt v] holds up to the stencil
        // truncation; halving the step must shrink the defect fourfold
        let defect = |nt: usize, nx: usize| -> f64 {
            let (spec, grid) = desitter(nt, nx);
            let rank = 1;
            let a_t = GridSection::from_fn(&grid, 1, |t, x, _| C64::new(0.3 * (x[0] - t).sin(), 0.1));
            let a_x = vec![GridSection::from_fn(&grid, 1, |t, x, _| {
                C64::new(0.2 * (x[0] + t).cos(), 0.0)
            })];
            let b = GridSection::from_fn(&grid, 1, |t, x, _| C64::new(0.5 * (t * x[0].sin()).cos(), 0.2));
            let op = WaveOperator::custom(&spec, &grid, rank, a_t, a_x, b).unwrap();
            let adj = op.formal_adjoint();
            let pad = 3;
            let u = {
                let mut s = GridSection::from_fn(&grid, 1, |t, x, _| {
                    let bump = (PI * t / 1.5).sin().powi(2);
                    C64::new(bump * x[0].sin(), bump * (2.0 * x[0]).cos())
                });
                for n in (0..pad).chain(grid.nt - pad..grid.nt) {
                    s.slice_data_mut(n).fill(C64::new(0.0, 0.0));
                }
                s
            };
            let v = {
                let mut s = GridSection::from_fn(&grid, 1, |t, x, _| {
                    let bump = (PI * t / 1.5).sin().powi(2);
                    C64::new(bump * (x[0] * 2.0).sin(), -bump * x[0].cos())
                });
                for n in (0..pad).chain(grid.nt - pad..grid.nt) {
                    s.slice_data_mut(n).fill(C64::new(0.0, 0.0));
                }
                s
            };
            let w = grid.volume_weights(&spec);
            let lhs = pair(&w, &op.apply(&u).unwrap(), &v).unwrap();
            let rhs = pair(&w, &u, &adj.apply(&v).unwrap()).unwrap();
            (lhs - rhs).norm()
        };
        let d1 = defect(61, 60);
        let d2 = defect(121, 120);
        let ratio = d1 / d2;
        let (lo, hi) = tolerances::CONVERGENCE_RATIO_WINDOW;
        assert!(ratio > lo && ratio < hi, "defect {d1} -> {d2}, ratio {ratio}");
    }

    #[test]
    fn discrete_adjoint_pairing_is_machine_exact() {
        let (spec, grid) = desitter(21, 20);
        let rank = 2;
        let rr = rank * rank;
        let op = WaveOperator::custom(
            &spec,
            &grid,
            rank,
            random_field(&grid, rr, 41),
            vec![random_field(&grid, rr, 42)],
            random_field(&grid, rr, 43),
        )
        .unwrap();
        let u = random_field(&grid, rank, 44);
        let v = random_field(&grid, rank, 45);
        let w = grid.volume_weights(&spec);
        let lhs = pair(&w, &op.apply(&u).unwrap(), &v).unwrap();
        let rhs = pair(&w, &u, &op.discrete_adjoint(&v).unwrap()).unwrap();
        // scale of the sum's terms, not of the nearly-cancelling total
        let scale = op.apply(&u).unwrap().max_abs() * v.max_abs() * w.iter().sum::<f64>();
        assert!((lhs - rhs).norm() <= 1e-13 * scale, "defect {} vs scale {scale}", (lhs - rhs).norm());
    }

    #[test]
    fn distribution_pushforward_matches_embedding() {
        let (spec, grid) = desitter(21, 20);
        let op = WaveOperator::dalembert(&spec, &grid, 1).unwrap();
        let g = random_field(&grid, 1, 50);
        let t_emb = DiscreteDistribution::from_section(&spec, &grid, &g);
        let pushed = apply_op_to_distribution(&op, &t_emb).unwrap();
        let direct = DiscreteDistribution::from_section(&spec, &grid, &op.apply(&g).unwrap());
        let scale = direct.weights.iter().map(|w| w.norm()).fold(0.0, f64::max).max(1e-30);
        let worst = pushed
            .weights
            .iter()
            .zip(&direct.weights)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-12 * scale, "pushforward defect {}", worst / scale);
    }

    #[test]
    fn connection_dalembert_with_zero_connection_is_scalar() {
        let (spec, grid) = desitter(17, 16);
        let rank = 2;
        let rr = rank * rank;
        let zero = GridSection::zeros(&grid, rr);
        let conn = WaveOperator::connection_dalembert(
            &spec,
            &grid,
            rank,
            zero.clone(),
            vec![zero.clone()],
            zero.clone(),
        )
        .unwrap();
        let scalar = WaveOperator::dalembert(&spec, &grid, rank).unwrap();
        let u = random_field(&grid, rank, 60);
        let a = conn.apply(&u).unwrap();
        let b = scalar.apply(&u).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() <= 1e-12 * a.max_abs().max(1.0));
    }

    #[test]
    fn connection_terms_enter_with_metric_factors() {
        // rank 1, purely imaginary electromagnetic-style connection:
        // check the assembled first-order coefficients directly
        let (spec, grid) = desitter(17, 16);
        let conn_t = GridSection::from_fn(&grid, 1, |t, _, _| C64::new(0.0, 0.4 * t));
        let conn_x = GridSection::from_fn(&grid, 1, |_, x, _| C64::new(0.0, 0.3 * x[0].sin()));
        let v = GridSection::zeros(&grid, 1);
        let op = WaveOperator::connection_dalembert(
            &spec,
            &grid,
            1,
            conn_t.clone(),
            vec![conn_x.clone()],
            v,
        )
        .unwrap();
        let (a_t, a_x, _) = op.coefficient_fields();
        let n = 8;
        let t = grid.t(n);
        let cell = 5;
        let node_v = a_t.get(n, cell, 0);
        let want_t = 2.0 / spec.beta_eff(t) * conn_t.get(n, cell, 0)
            + C64::new(christoffel_trace_t(&spec, t), 0.0);
        assert!((node_v - want_t).norm() < 1e-13);
        let f = spec.warp_eff(t);
        let want_x = -2.0 / (f * f) * conn_x.get(n, cell, 0);
        assert!((a_x[0].get(n, cell, 0) - want_x).norm() < 1e-13);
    }

    #[test]
    fn rank_and_grid_mismatches_are_reported() {
        let (spec, grid) = desitter(17, 16);
        let op = WaveOperator::dalembert(&spec, &grid, 2).unwrap();
        let wrong_rank = GridSection::zeros(&grid, 1);
        assert!(matches!(op.apply(&wrong_rank), Err(Error::RankMismatch { .. })));
        let grid2 = Grid::new(&spec, 17, &[24], 1.0).unwrap();
        let wrong_grid = GridSection::zeros(&grid2, 2);
        assert!(matches!(op.apply(&wrong_grid), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn three_slice_fallback_rows_apply() {
        let spec = SpacetimeSpec::desitter(&[2.0 * PI], 0.0, 0.5).unwrap();
        let grid = Grid::new(&spec, 3, &[16], 1.0).unwrap();
        let op = WaveOperator::dalembert(&spec, &grid, 1).unwrap();
        let u = GridSection::from_fn(&grid, 1, |t, x, _| C64::new(t + x[0].cos(), 0.0));
        let pu = op.apply(&u).unwrap();
        assert!(pu.values.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
        // constants still die
        let c = GridSection::from_fn(&grid, 1, |_, _, _| C64::new(2.0, 1.0));
        assert!(op.apply(&c).unwrap().max_abs() < 1e-10);
    }
}
