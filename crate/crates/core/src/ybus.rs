//! Admittance-matrix path: Ybus stamping, `S = V (Y V)*`, the two-pass
//! derivative kernel, and in-place Jacobian assembly through precomputed
//! write positions. The literal matrix-product derivatives and the
//! concatenation assembly are kept as baselines.

use std::sync::Arc;

use num_complex::Complex64;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::netcase::IndexedNetwork;
use crate::sparse::{
    concat4, csc_from_triplets, sparse_add, sparse_sub, spgemm, spmv_complex_into, CscMatrix,
    SparsityPattern, TripletList,
};

const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Stamps every in-service branch and bus shunt into a complex CSC matrix.
///
/// For a branch `h -> k` with series `y_hk`, terminal shunts `y_h`, `y_k` and
/// tap `m e^{jφ}` on the `h` side:
///
/// ```text
/// Y[h,h] += (y_h + y_hk) / m²      Y[h,k] += -(y_hk / m) e^{+jφ}
/// Y[k,h] += -(y_hk / m) e^{-jφ}    Y[k,k] += y_k + y_hk
/// ```
///
/// Every diagonal entry is stored, zero or not.
pub fn build_ybus(net: &IndexedNetwork) -> Result<CscMatrix<Complex64>> {
    let n = net.n_b();
    let mut t = TripletList::with_capacity(n, n, n + 4 * net.n_l());
    for (i, &ysh) in net.bus_shunt.iter().enumerate() {
        t.push(i, i, ysh);
    }
    for e in 0..net.n_l() {
        let (h, k) = (net.from_idx[e], net.to_idx[e]);
        let (m, phi) = (net.tap_m[e], net.tap_phi[e]);
        let y = net.y_series[e];
        let shift = Complex64::from_polar(1.0, phi);
        t.push(h, h, (net.y_sh_from[e] + y) / (m * m));
        t.push(h, k, -(y / m) * shift);
        t.push(k, h, -(y / m) * shift.conj());
        t.push(k, k, net.y_sh_to[e] + y);
    }
    csc_from_triplets(&t)
}

/// Memory layout used when refreshing the voltage phasors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StorageMode {
    /// `(re, im)` pairs side by side, as `Complex64`.
    #[default]
    Interleaved,
    /// Real and imaginary parts in two contiguous `f64` arrays, copied into
    /// the interleaved arrays afterwards for the sparse product.
    Separate,
}

/// Ybus plus the voltage state and the work arrays of the injection kernel.
#[derive(Debug, Clone)]
pub struct YbusModel {
    ybus: CscMatrix<Complex64>,
    vm: Vec<f64>,
    va: Vec<f64>,
    u: Vec<Complex64>,
    v: Vec<Complex64>,
    u_re: Vec<f64>,
    u_im: Vec<f64>,
    v_re: Vec<f64>,
    v_im: Vec<f64>,
    i_bus: Vec<Complex64>,
    s: Vec<Complex64>,
    storage: StorageMode,
}

impl YbusModel {
    pub fn new(
        ybus: CscMatrix<Complex64>,
        vm: &[f64],
        va: &[f64],
        storage: StorageMode,
    ) -> Result<Self> {
        let n = ybus.n_rows();
        if ybus.n_cols() != n || vm.len() != n || va.len() != n {
            return Err(Error::Domain(format!(
                "Ybus is {}x{} with {} magnitudes and {} angles",
                n,
                ybus.n_cols(),
                vm.len(),
                va.len()
            )));
        }
        let (sep, cplx) = match storage {
            StorageMode::Separate => (n, n),
            StorageMode::Interleaved => (0, n),
        };
        let mut model = Self {
            ybus,
            vm: vm.to_vec(),
            va: va.to_vec(),
            u: vec![Complex64::zero(); cplx],
            v: vec![Complex64::zero(); cplx],
            u_re: vec![0.0; sep],
            u_im: vec![0.0; sep],
            v_re: vec![0.0; sep],
            v_im: vec![0.0; sep],
            i_bus: vec![Complex64::zero(); n],
            s: vec![Complex64::zero(); n],
            storage,
        };
        model.update_phasors();
        Ok(model)
    }

    /// Builds Ybus from `net` and starts at the case-file voltages.
    pub fn from_network(net: &IndexedNetwork, storage: StorageMode) -> Result<Self> {
        Self::new(build_ybus(net)?, &net.vm0, &net.va0, storage)
    }

    /// Overwrites the voltage state; phasors are stale until
    /// [`update_phasors`](Self::update_phasors).
    pub fn set_state(&mut self, vm: &[f64], va: &[f64]) -> Result<()> {
        if vm.len() != self.vm.len() || va.len() != self.va.len() {
            return Err(Error::Domain("state length differs from bus count".into()));
        }
        self.vm.copy_from_slice(vm);
        self.va.copy_from_slice(va);
        Ok(())
    }

    /// `U = e^{jθ}`, `V = V_m U`.
    pub fn update_phasors(&mut self) {
        let n = self.vm.len();
        match self.storage {
            StorageMode::Interleaved => {
                let (vm, va) = (&self.vm[..n], &self.va[..n]);
                let (u, v) = (&mut self.u[..n], &mut self.v[..n]);
                for i in 0..n {
                    let (s, c) = va[i].sin_cos();
                    u[i] = Complex64::new(c, s);
                    v[i] = Complex64::new(vm[i] * c, vm[i] * s);
                }
            }
            StorageMode::Separate => {
                let (vm, va) = (&self.vm[..n], &self.va[..n]);
                let (u_re, u_im) = (&mut self.u_re[..n], &mut self.u_im[..n]);
                let (v_re, v_im) = (&mut self.v_re[..n], &mut self.v_im[..n]);
                for i in 0..n {
                    let (s, c) = va[i].sin_cos();
                    u_re[i] = c;
                    u_im[i] = s;
                }
                for i in 0..n {
                    v_re[i] = vm[i] * u_re[i];
                    v_im[i] = vm[i] * u_im[i];
                }
                // Layout conversion for the sparse product.
                let (u, v) = (&mut self.u[..n], &mut self.v[..n]);
                for i in 0..n {
                    u[i] = Complex64::new(u_re[i], u_im[i]);
                    v[i] = Complex64::new(v_re[i], v_im[i]);
                }
            }
        }
    }

    /// `I_bus = Y V`, then `S = V · conj(I_bus)`. `I_bus` is kept for reuse.
    pub fn power_injection(&mut self) -> Result<&[Complex64]> {
        spmv_complex_into(&self.ybus, &self.v, &mut self.i_bus)?;
        for ((s, v), i) in self.s.iter_mut().zip(&self.v).zip(&self.i_bus) {
            *s = v * i.conj();
        }
        Ok(&self.s)
    }

    pub fn ybus(&self) -> &CscMatrix<Complex64> {
        &self.ybus
    }

    pub fn vm(&self) -> &[f64] {
        &self.vm
    }

    pub fn va(&self) -> &[f64] {
        &self.va
    }

    pub fn u(&self) -> &[Complex64] {
        &self.u
    }

    pub fn v(&self) -> &[Complex64] {
        &self.v
    }

    /// Separate-storage phasor arrays `(re, im)`; empty in interleaved mode.
    pub fn v_separate(&self) -> (&[f64], &[f64]) {
        (&self.v_re, &self.v_im)
    }

    pub fn i_bus(&self) -> &[Complex64] {
        &self.i_bus
    }

    /// Result of the last [`power_injection`](Self::power_injection).
    pub fn s(&self) -> &[Complex64] {
        &self.s
    }

    pub fn storage(&self) -> StorageMode {
        self.storage
    }

    pub fn n_b(&self) -> usize {
        self.vm.len()
    }
}

/// Frozen Jacobian pattern and the positions each Ybus nonzero is written to
/// in every block.
///
/// `p11[k]` is where `Re(dS/dθ)` for Ybus nonzero `k` lands in `J.nzval`;
/// likewise `p12` for `Re(dS/dV_m)`, `p21` for `Im(dS/dθ)`, `p22` for
/// `Im(dS/dV_m)`.
#[derive(Debug, Clone)]
pub struct JacobianPlanYbus {
    pub ybus_pattern: Arc<SparsityPattern>,
    pub j_pattern: Arc<SparsityPattern>,
    pub p11: Vec<usize>,
    pub p12: Vec<usize>,
    pub p21: Vec<usize>,
    pub p22: Vec<usize>,
}

/// Mutable outputs of the derivative and assembly kernels.
#[derive(Debug, Clone)]
pub struct YbusJacobian {
    pub ds_dtheta: CscMatrix<Complex64>,
    pub ds_dvm: CscMatrix<Complex64>,
    pub j: CscMatrix<f64>,
}

/// Builds the `2n_b x 2n_b` pattern from the four Ybus-shaped blocks and
/// finds every block entry's slot by scanning the destination column.
pub fn build_jacobian_plan(ybus: &CscMatrix<Complex64>) -> Result<JacobianPlanYbus> {
    let pattern = ybus.pattern();
    if !pattern.has_full_diagonal() {
        return Err(Error::Inconsistency(
            "Ybus must store every diagonal entry".into(),
        ));
    }
    let j_pattern = Arc::new(pattern.tile_2x2());
    let n = pattern.n_cols();

    let (y_row, y_col): (Vec<usize>, Vec<usize>) = ybus.iter().map(|(r, c, _)| (r, c)).unzip();
    let jp = j_pattern.col_start();
    let ji = j_pattern.row_idx();
    let positions = |x: usize, y: usize| -> Result<Vec<usize>> {
        let mut p = vec![0usize; y_col.len()];
        for i in 0..y_col.len() {
            let col = y_col[i] + y * n;
            let row = y_row[i] + x * n;
            p[i] = (jp[col]..jp[col + 1])
                .find(|&k| ji[k] == row)
                .ok_or_else(|| {
                    Error::Inconsistency(format!("({row}, {col}) missing from Jacobian pattern"))
                })?;
        }
        Ok(p)
    };

    Ok(JacobianPlanYbus {
        p11: positions(0, 0)?,
        p12: positions(0, 1)?,
        p21: positions(1, 0)?,
        p22: positions(1, 1)?,
        ybus_pattern: Arc::clone(pattern),
        j_pattern,
    })
}

impl JacobianPlanYbus {
    /// Zeroed derivative matrices on the Ybus pattern and a zeroed `J`.
    pub fn workspace(&self) -> YbusJacobian {
        YbusJacobian {
            ds_dtheta: CscMatrix::filled(Arc::clone(&self.ybus_pattern), Complex64::zero()),
            ds_dvm: CscMatrix::filled(Arc::clone(&self.ybus_pattern), Complex64::zero()),
            j: CscMatrix::filled(Arc::clone(&self.j_pattern), 0.0),
        }
    }
}

/// Computes `dS/dθ` and `dS/dV_m` on the Ybus pattern in two sweeps over the
/// nonzeros, refreshing `I_bus` on the way.
///
/// Pass 1 scales column `j` by `V[j]` (for `dS/dθ`) and `U[j]` (for
/// `dS/dV_m`) and accumulates `I_bus`. Pass 2 conjugates, applies the
/// diagonal `I_bus` terms and multiplies by the row voltage:
///
/// ```text
/// dS/dθ   = -j · conj(Y diag(V) - diag(I_bus)) · diag(V)   (row-scaled)
/// dS/dV_m = diag(V) conj(Y diag(U)) + diag(conj(I_bus) U)
/// ```
pub fn derivatives_two_pass(model: &mut YbusModel, ws: &mut YbusJacobian) -> Result<()> {
    let ybus = &model.ybus;
    if !ws.ds_dtheta.shares_pattern_with(ybus) || !ws.ds_dvm.shares_pattern_with(ybus) {
        return Err(Error::PlanStale(
            "derivative matrices do not share the Ybus pattern".into(),
        ));
    }
    let n = model.vm.len();
    let yp = ybus.col_start();
    let yi = ybus.row_idx();
    let yv = ybus.nzval();
    let (v, u) = (&model.v[..n], &model.u[..n]);
    let i_bus = &mut model.i_bus[..n];
    let ds_t = ws.ds_dtheta.nzval_mut();
    ds_t.copy_from_slice(yv);
    let ds_v = ws.ds_dvm.nzval_mut();
    ds_v.copy_from_slice(yv);
    i_bus.fill(Complex64::zero());

    for j in 0..n {
        let (vj, uj) = (v[j], u[j]);
        for k in yp[j]..yp[j + 1] {
            i_bus[yi[k]] += yv[k] * vj;
            ds_t[k] *= vj;
            ds_v[k] *= uj;
        }
    }

    let neg_j = -J;
    for j in 0..n {
        for k in yp[j]..yp[j + 1] {
            let i = yi[k];
            ds_v[k] = v[i] * ds_v[k].conj();
            if i == j {
                ds_t[k] -= i_bus[j];
                ds_v[k] += i_bus[j].conj() * u[j];
            }
            ds_t[k] = neg_j * ds_t[k].conj() * v[i];
        }
    }
    Ok(())
}

/// Literal sparse-matrix evaluation of the derivative formulas, allocating
/// every intermediate:
///
/// ```text
/// dS/dθ   = j diag(V) [diag(conj(I)) - conj(Y diag(V))]
/// dS/dV_m = diag(conj(I) U) + diag(V) conj(Y diag(U))
/// ```
pub fn derivatives_matmul(
    model: &YbusModel,
) -> Result<(CscMatrix<Complex64>, CscMatrix<Complex64>)> {
    let ybus = &model.ybus;
    let mut i_c = vec![Complex64::zero(); model.n_b()];
    spmv_complex_into(ybus, &model.v, &mut i_c)?;

    let diag_v = CscMatrix::diag(&model.v);
    let diag_u = CscMatrix::diag(&model.u);
    let diag_ic_conj = CscMatrix::diag(&i_c.iter().map(|z| z.conj()).collect::<Vec<_>>());
    let diag_jv = CscMatrix::diag(&model.v.iter().map(|&z| J * z).collect::<Vec<_>>());

    let y_dv = spgemm(ybus, &diag_v)?;
    let ds_dtheta = spgemm(&diag_jv, &sparse_sub(&diag_ic_conj, &y_dv.conj())?)?;

    let y_du = spgemm(ybus, &diag_u)?;
    let ic_u: Vec<Complex64> = i_c
        .iter()
        .zip(&model.u)
        .map(|(i, u)| i.conj() * u)
        .collect();
    let ds_dvm = sparse_add(&CscMatrix::diag(&ic_u), &spgemm(&diag_v, &y_du.conj())?)?;
    Ok((ds_dtheta, ds_dvm))
}

fn on_pattern(have: &Arc<SparsityPattern>, want: &Arc<SparsityPattern>) -> bool {
    Arc::ptr_eq(have, want) || **have == **want
}

/// Scatters the real and imaginary parts of the derivative matrices into
/// `ws.j` through the plan's positions. Nothing else in `J` is written.
pub fn assemble_jacobian_inplace(plan: &JacobianPlanYbus, ws: &mut YbusJacobian) -> Result<()> {
    if !on_pattern(ws.ds_dtheta.pattern(), &plan.ybus_pattern)
        || !on_pattern(ws.ds_dvm.pattern(), &plan.ybus_pattern)
        || !on_pattern(ws.j.pattern(), &plan.j_pattern)
    {
        return Err(Error::PlanStale(
            "workspace patterns differ from the plan".into(),
        ));
    }
    let nz = ws.j.nzval_mut();
    for (&p, d) in plan.p11.iter().zip(ws.ds_dtheta.nzval()) {
        nz[p] = d.re;
    }
    for (&p, d) in plan.p21.iter().zip(ws.ds_dtheta.nzval()) {
        nz[p] = d.im;
    }
    for (&p, d) in plan.p12.iter().zip(ws.ds_dvm.nzval()) {
        nz[p] = d.re;
    }
    for (&p, d) in plan.p22.iter().zip(ws.ds_dvm.nzval()) {
        nz[p] = d.im;
    }
    Ok(())
}

/// Baseline assembly: builds the four real blocks and concatenates them into
/// a new matrix.
pub fn assemble_jacobian_concat(
    ds_dtheta: &CscMatrix<Complex64>,
    ds_dvm: &CscMatrix<Complex64>,
) -> Result<CscMatrix<f64>> {
    concat4(&ds_dtheta.re(), &ds_dvm.re(), &ds_dtheta.im(), &ds_dvm.im())
}
