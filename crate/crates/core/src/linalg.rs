//! Small complex dense kernels: r x r fibre matrices stored row-major in
//! flat slices, and a partial-pivot LU for the coarse-grid cross checks.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// y += M * x for a row-major r x r matrix.
pub fn matvec_acc(m: &[C64], x: &[C64], y: &mut [C64]) {
    let r = x.len();
    debug_assert_eq!(m.len(), r * r);
    for i in 0..r {
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..r {
            acc += m[i * r + j] * x[j];
        }
        y[i] += acc;
    }
}

/// y -= M * x.
pub fn matvec_sub(m: &[C64], x: &[C64], y: &mut [C64]) {
    let r = x.len();
    debug_assert_eq!(m.len(), r * r);
    for i in 0..r {
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..r {
            acc += m[i * r + j] * x[j];
        }
        y[i] -= acc;
    }
}

/// y -= M^T * x.
pub fn matvec_transpose_sub(m: &[C64], x: &[C64], y: &mut [C64]) {
    let r = x.len();
    for i in 0..r {
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..r {
            acc += m[j * r + i] * x[j];
        }
        y[i] -= acc;
    }
}

/// y += M^T * x.
pub fn matvec_transpose_acc(m: &[C64], x: &[C64], y: &mut [C64]) {
    let r = x.len();
    for i in 0..r {
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..r {
            acc += m[j * r + i] * x[j];
        }
        y[i] += acc;
    }
}

/// Solve M z = rhs in place (rhs becomes z). Gaussian elimination with
/// partial pivoting; ranks are tiny so no blocking.
pub fn solve_in_place(m: &mut [C64], rhs: &mut [C64]) -> Result<()> {
    let r = rhs.len();
    if r == 1 {
        let d = m[0];
        if d.norm() == 0.0 {
            return Err(Error::Singular("1x1 fibre system".into()));
        }
        rhs[0] /= d;
        return Ok(());
    }
    for col in 0..r {
        let mut piv = col;
        let mut best = m[col * r + col].norm();
        for row in col + 1..r {
            let v = m[row * r + col].norm();
            if v > best {
                best = v;
                piv = row;
            }
        }
        if best == 0.0 {
            return Err(Error::Singular(format!("{r}x{r} fibre system")));
        }
        if piv != col {
            for j in 0..r {
                m.swap(col * r + j, piv * r + j);
            }
            rhs.swap(col, piv);
        }
        let d = m[col * r + col];
        for row in col + 1..r {
            let factor = m[row * r + col] / d;
            if factor.norm() == 0.0 {
                continue;
            }
            for j in col..r {
                let v = m[col * r + j];
                m[row * r + j] -= factor * v;
            }
            let v = rhs[col];
            rhs[row] -= factor * v;
        }
    }
    for col in (0..r).rev() {
        let mut acc = rhs[col];
        for j in col + 1..r {
            acc -= m[col * r + j] * rhs[j];
        }
        rhs[col] = acc / m[col * r + col];
    }
    Ok(())
}

/// Dense LU with partial pivoting, for n up to a few thousand.
pub struct DenseLu {
    n: usize,
    lu: Vec<C64>,
    perm: Vec<usize>,
}

impl DenseLu {
    pub fn factor(mut a: Vec<C64>, n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let mut piv = col;
            let mut best = a[col * n + col].norm();
            for row in col + 1..n {
                let v = a[row * n + col].norm();
                if v > best {
                    best = v;
                    piv = row;
                }
            }
            if best == 0.0 {
                return Err(Error::Singular(format!("dense {n}x{n} system at column {col}")));
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                }
                perm.swap(col, piv);
            }
            let d = a[col * n + col];
            for row in col + 1..n {
                let factor = a[row * n + col] / d;
                a[row * n + col] = factor;
                if factor.norm() == 0.0 {
                    continue;
                }
                for j in col + 1..n {
                    let v = a[col * n + j];
                    a[row * n + j] -= factor * v;
                }
            }
        }
        Ok(Self { n, lu: a, perm })
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.n;
        let mut x: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        x
    }
}
