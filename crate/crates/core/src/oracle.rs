//! Dense reference evaluations used to check both sparse methods.
//!
//! Everything here is O(n_b²) or worse and shares no code with the sparse
//! paths beyond the network data itself.

use num_complex::Complex64;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::netcase::IndexedNetwork;
use crate::sparse::CscMatrix;

/// Largest network the dense routines will accept by default.
pub const DEFAULT_ORACLE_CAP: usize = 5000;
/// Default central-difference step, used for both angles and magnitudes.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    pub n_rows: usize,
    pub n_cols: usize,
    pub values: Vec<T>,
}

impl<T: Copy + Zero> DenseMatrix<T> {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            values: vec![T::zero(); n_rows * n_cols],
        }
    }

    pub fn from_csc(m: &CscMatrix<T>) -> Self {
        Self {
            n_rows: m.n_rows(),
            n_cols: m.n_cols(),
            values: m.to_dense(),
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.n_cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.values[i * self.n_cols + j] = v;
    }

    fn add(&mut self, i: usize, j: usize, v: T) {
        let p = i * self.n_cols + j;
        self.values[p] = self.values[p] + v;
    }
}

fn check_cap(n_b: usize, cap: usize) -> Result<()> {
    if n_b > cap {
        return Err(Error::OracleCap { n_b, cap });
    }
    Ok(())
}

/// Dense admittance matrix, stamped directly from the π-model terminal
/// relations.
pub fn dense_ybus(net: &IndexedNetwork) -> DenseMatrix<Complex64> {
    let n = net.n_b();
    let mut y = DenseMatrix::zeros(n, n);
    for e in 0..net.n_l() {
        let (h, k) = (net.from_idx[e], net.to_idx[e]);
        let m = net.tap_m[e];
        let (s, c) = net.tap_phi[e].sin_cos();
        let ys = net.y_series[e];
        // I_h = (y_h + y_s)/m² V_h - y_s/(m e^{-jφ}) V_k
        // I_k = -y_s/(m e^{jφ}) V_h + (y_k + y_s) V_k
        let tap = Complex64::new(m * c, m * s);
        y.add(h, h, (net.y_sh_from[e] + ys) / (m * m));
        y.add(h, k, -ys / tap.conj());
        y.add(k, h, -ys / tap);
        y.add(k, k, net.y_sh_to[e] + ys);
    }
    for (i, &ysh) in net.bus_shunt.iter().enumerate() {
        y.add(i, i, ysh);
    }
    y
}

fn dense_power(y: &DenseMatrix<Complex64>, vm: &[f64], va: &[f64], out: &mut [Complex64]) {
    let n = vm.len();
    let v: Vec<Complex64> = vm
        .iter()
        .zip(va)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect();
    for i in 0..n {
        let row = &y.values[i * n..(i + 1) * n];
        let mut current = Complex64::zero();
        for j in 0..n {
            current += row[j] * v[j];
        }
        out[i] = v[i] * current.conj();
    }
}

/// `S = V conj(Y V)` with a dense `Y`.
pub fn dense_power_oracle(net: &IndexedNetwork, vm: &[f64], va: &[f64]) -> Result<Vec<Complex64>> {
    dense_power_oracle_capped(net, vm, va, DEFAULT_ORACLE_CAP)
}

pub fn dense_power_oracle_capped(
    net: &IndexedNetwork,
    vm: &[f64],
    va: &[f64],
    cap: usize,
) -> Result<Vec<Complex64>> {
    let n = net.n_b();
    check_cap(n, cap)?;
    if vm.len() != n || va.len() != n {
        return Err(Error::Domain("state length differs from bus count".into()));
    }
    let y = dense_ybus(net);
    let mut s = vec![Complex64::zero(); n];
    dense_power(&y, vm, va, &mut s);
    Ok(s)
}

/// Central differences of `[Re S; Im S]` with respect to `[θ; V_m]`.
/// Column `j < n_b` is `∂/∂θ_j`, column `n_b + j` is `∂/∂V_m,j`.
pub fn finite_difference_jacobian(
    net: &IndexedNetwork,
    vm: &[f64],
    va: &[f64],
    h: f64,
) -> Result<DenseMatrix<f64>> {
    finite_difference_jacobian_capped(net, vm, va, h, DEFAULT_ORACLE_CAP)
}

pub fn finite_difference_jacobian_capped(
    net: &IndexedNetwork,
    vm: &[f64],
    va: &[f64],
    h: f64,
    cap: usize,
) -> Result<DenseMatrix<f64>> {
    let n = net.n_b();
    check_cap(n, cap)?;
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Domain(format!("step must be positive, got {h}")));
    }
    if vm.len() != n || va.len() != n {
        return Err(Error::Domain("state length differs from bus count".into()));
    }
    let y = dense_ybus(net);
    let mut jac = DenseMatrix::zeros(2 * n, 2 * n);
    let (mut vm_w, mut va_w) = (vm.to_vec(), va.to_vec());
    let mut plus = vec![Complex64::zero(); n];
    let mut minus = vec![Complex64::zero(); n];
    for col in 0..2 * n {
        let (state, j) = if col < n {
            (&mut va_w, col)
        } else {
            (&mut vm_w, col - n)
        };
        let x0 = state[j];
        state[j] = x0 + h;
        dense_power(&y, &vm_w, &va_w, &mut plus);
        let state = if col < n { &mut va_w } else { &mut vm_w };
        state[j] = x0 - h;
        dense_power(&y, &vm_w, &va_w, &mut minus);
        let state = if col < n { &mut va_w } else { &mut vm_w };
        state[j] = x0;
        for i in 0..n {
            let d = (plus[i] - minus[i]) / (2.0 * h);
            jac.set(i, col, d.re);
            jac.set(n + i, col, d.im);
        }
    }
    Ok(jac)
}

/// Worst-case mismatch between a sparse and a dense matrix over every
/// position (structural zeros included).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareReport {
    pub max_abs: f64,
    /// Largest `|a - b| / |b|` over positions where `b != 0`.
    pub max_rel: f64,
    /// `(row, col)` of the largest tolerance violation ratio.
    pub worst: Option<(usize, usize)>,
    /// Every position satisfies `|a - b| <= max(rel_tol |b|, abs_floor)`.
    pub within: bool,
}

pub fn compare_sparse_dense(
    j: &CscMatrix<f64>,
    d: &DenseMatrix<f64>,
    rel_tol: f64,
    abs_floor: f64,
) -> Result<CompareReport> {
    if j.n_rows() != d.n_rows || j.n_cols() != d.n_cols {
        return Err(Error::Domain(format!(
            "comparing {}x{} with {}x{}",
            j.n_rows(),
            j.n_cols(),
            d.n_rows,
            d.n_cols
        )));
    }
    let dense = j.to_dense();
    let mut report = CompareReport {
        max_abs: 0.0,
        max_rel: 0.0,
        worst: None,
        within: true,
    };
    let mut worst_ratio = 0.0;
    for (p, (&a, &b)) in dense.iter().zip(&d.values).enumerate() {
        let diff = (a - b).abs();
        report.max_abs = report.max_abs.max(diff);
        if b != 0.0 {
            report.max_rel = report.max_rel.max(diff / b.abs());
        }
        let allowed = (rel_tol * b.abs()).max(abs_floor);
        let ratio = if allowed > 0.0 {
            diff / allowed
        } else if diff > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if ratio > worst_ratio || diff.is_nan() {
            worst_ratio = ratio;
            report.worst = Some((p / d.n_cols, p % d.n_cols));
        }
        if diff.is_nan() || diff > allowed {
            report.within = false;
        }
    }
    Ok(report)
}
