//! Element-wise path: per-branch injections and partial derivatives
//! evaluated in flat loops over structure-of-arrays data, then reduced onto
//! buses and into a frozen Jacobian pattern.
//!
//! A branch `h -> k` with tap `m e^{jφ}` injects, with `δ = θ_h - θ_k - φ`,
//!
//! ```text
//! S_hk = v_h² conj(a_hh) - v_h v_k conj(a_hk) e^{+jδ}
//! S_kh = v_k² conj(a_kk) - v_h v_k conj(a_hk) e^{-jδ}
//!
//! a_hh = (y_h + y_hk) / m²   a_hk = y_hk / m   a_kk = y_k + y_hk
//! ```
//!
//! Splitting into real arithmetic with `a_hk = g + jb`, `c = cos δ`,
//! `s = sin δ`:
//!
//! ```text
//! P_h =  v_h² g_hh - v_h v_k (g c + b s)
//! Q_h = -v_h² b_hh - v_h v_k (g s - b c)
//! P_k =  v_k² g_kk - v_h v_k (g c - b s)
//! Q_k = -v_k² b_kk + v_h v_k (g s + b c)
//! ```
//!
//! Every evaluation loop body is straight-line arithmetic with no
//! data-dependent branches, so the compiler is free to vectorize it.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::netcase::IndexedNetwork;
use crate::sparse::{csc_from_triplets, CscMatrix, SparsityPattern, TripletList};

/// Number of per-branch partial-derivative arrays.
pub const N_BRANCH_PARTIALS: usize = 16;
/// Per-bus shunt partial arrays: `dP/dθ`, `dP/dv`, `dQ/dθ`, `dQ/dv`.
pub const N_SHUNT_PARTIALS: usize = 4;
pub const N_SOURCES: usize = N_BRANCH_PARTIALS + N_SHUNT_PARTIALS;

/// Quantity differentiated, in row-block order of the branch partials.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Injection {
    Ph,
    Qh,
    Pk,
    Qk,
}

/// Variable differentiated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variable {
    ThetaH,
    ThetaK,
    Vh,
    Vk,
}

const INJECTIONS: [Injection; 4] = [Injection::Ph, Injection::Qh, Injection::Pk, Injection::Qk];
const VARIABLES: [Variable; 4] = [
    Variable::ThetaH,
    Variable::ThetaK,
    Variable::Vh,
    Variable::Vk,
];

/// Index of `d(x)/d(y)` among the 16 branch partial arrays.
pub const fn partial_index(x: Injection, y: Variable) -> usize {
    4 * x as usize + y as usize
}

/// Voltage-independent branch constants, one contiguous array per field.
/// Bus shunts ride along as `shunt_g`/`shunt_b` (per bus).
#[derive(Debug, Clone, PartialEq)]
pub struct BranchSoA {
    pub from_idx: Vec<usize>,
    pub to_idx: Vec<usize>,
    /// `Re((y_h + y_hk) / m²)`
    pub g_hh: Vec<f64>,
    pub b_hh: Vec<f64>,
    /// `Re(y_hk / m)`
    pub g_hk: Vec<f64>,
    pub b_hk: Vec<f64>,
    /// `Re(y_k + y_hk)`
    pub g_kk: Vec<f64>,
    pub b_kk: Vec<f64>,
    pub phi: Vec<f64>,
    pub shunt_g: Vec<f64>,
    pub shunt_b: Vec<f64>,
}

impl BranchSoA {
    pub fn n_l(&self) -> usize {
        self.from_idx.len()
    }

    pub fn n_b(&self) -> usize {
        self.shunt_g.len()
    }
}

pub fn build_branch_soa(net: &IndexedNetwork) -> BranchSoA {
    let n_l = net.n_l();
    let mut soa = BranchSoA {
        from_idx: net.from_idx.clone(),
        to_idx: net.to_idx.clone(),
        g_hh: Vec::with_capacity(n_l),
        b_hh: Vec::with_capacity(n_l),
        g_hk: Vec::with_capacity(n_l),
        b_hk: Vec::with_capacity(n_l),
        g_kk: Vec::with_capacity(n_l),
        b_kk: Vec::with_capacity(n_l),
        phi: net.tap_phi.clone(),
        shunt_g: net.bus_shunt.iter().map(|y| y.re).collect(),
        shunt_b: net.bus_shunt.iter().map(|y| y.im).collect(),
    };
    for e in 0..n_l {
        let m = net.tap_m[e];
        let y = net.y_series[e];
        let a_hh = (net.y_sh_from[e] + y) / (m * m);
        let a_hk = y / m;
        let a_kk = net.y_sh_to[e] + y;
        soa.g_hh.push(a_hh.re);
        soa.b_hh.push(a_hh.im);
        soa.g_hk.push(a_hk.re);
        soa.b_hk.push(a_hk.im);
        soa.g_kk.push(a_kk.re);
        soa.b_kk.push(a_kk.im);
    }
    soa
}

/// Scratch arrays for the element-wise kernels. Sized once; no kernel
/// allocates.
#[derive(Debug, Clone)]
pub struct ElemWorkspace {
    pub vh: Vec<f64>,
    pub vk: Vec<f64>,
    pub th: Vec<f64>,
    pub tk: Vec<f64>,
    pub cos_d: Vec<f64>,
    pub sin_d: Vec<f64>,
    pub ph: Vec<f64>,
    pub qh: Vec<f64>,
    pub pk: Vec<f64>,
    pub qk: Vec<f64>,
    /// Indexed by [`partial_index`].
    pub d_branch: [Vec<f64>; N_BRANCH_PARTIALS],
    pub dpsh_dv: Vec<f64>,
    pub dqsh_dv: Vec<f64>,
    /// Shunt θ-partials; identically zero, kept so every diagonal Jacobian
    /// slot has a writer.
    pub dsh_dtheta: Vec<f64>,
    /// Bus-level results of [`reduce_powers`].
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl ElemWorkspace {
    pub fn new(n_b: usize, n_l: usize) -> Self {
        let br = || vec![0.0; n_l];
        let bus = || vec![0.0; n_b];
        Self {
            vh: br(),
            vk: br(),
            th: br(),
            tk: br(),
            cos_d: br(),
            sin_d: br(),
            ph: br(),
            qh: br(),
            pk: br(),
            qk: br(),
            d_branch: std::array::from_fn(|_| br()),
            dpsh_dv: bus(),
            dqsh_dv: bus(),
            dsh_dtheta: bus(),
            p: bus(),
            q: bus(),
        }
    }

    pub fn for_soa(soa: &BranchSoA) -> Self {
        Self::new(soa.n_b(), soa.n_l())
    }

    pub fn n_l(&self) -> usize {
        self.vh.len()
    }

    pub fn n_b(&self) -> usize {
        self.p.len()
    }

    /// Source array `a` in scatter enumeration order: the 16 branch
    /// partials, then shunt `dP/dθ`, `dP/dv`, `dQ/dθ`, `dQ/dv`.
    pub fn source(&self, a: usize) -> &[f64] {
        match a {
            0..N_BRANCH_PARTIALS => &self.d_branch[a],
            16 | 18 => &self.dsh_dtheta,
            17 => &self.dpsh_dv,
            19 => &self.dqsh_dv,
            _ => panic!("source array {a} out of range"),
        }
    }

    fn check(&self, soa: &BranchSoA) -> Result<()> {
        if self.n_l() != soa.n_l() || self.n_b() != soa.n_b() {
            return Err(Error::Domain(format!(
                "workspace sized for {} buses / {} branches, data has {} / {}",
                self.n_b(),
                self.n_l(),
                soa.n_b(),
                soa.n_l()
            )));
        }
        Ok(())
    }
}

/// Copies terminal states from bus arrays into the branch-ordered arrays.
pub fn gather(soa: &BranchSoA, ws: &mut ElemWorkspace, vm: &[f64], va: &[f64]) -> Result<()> {
    ws.check(soa)?;
    if vm.len() != soa.n_b() || va.len() != soa.n_b() {
        return Err(Error::Domain("state length differs from bus count".into()));
    }
    let n = soa.n_l();
    let (from, to) = (&soa.from_idx[..n], &soa.to_idx[..n]);
    for e in 0..n {
        ws.vh[e] = vm[from[e]];
        ws.vk[e] = vm[to[e]];
        ws.th[e] = va[from[e]];
        ws.tk[e] = va[to[e]];
    }
    Ok(())
}

/// Gathers the terminal states, then evaluates `P_h, Q_h, P_k, Q_k` for
/// every branch. Also leaves `cos δ`, `sin δ` in the workspace for
/// [`eval_jacobian_elements`].
pub fn eval_powers(soa: &BranchSoA, ws: &mut ElemWorkspace, vm: &[f64], va: &[f64]) -> Result<()> {
    gather(soa, ws, vm, va)?;
    let n = soa.n_l();
    let (th, tk, phi) = (&ws.th[..n], &ws.tk[..n], &soa.phi[..n]);
    let (cos_d, sin_d) = (&mut ws.cos_d[..n], &mut ws.sin_d[..n]);
    for e in 0..n {
        let (s, c) = (th[e] - tk[e] - phi[e]).sin_cos();
        cos_d[e] = c;
        sin_d[e] = s;
    }

    let (vh, vk) = (&ws.vh[..n], &ws.vk[..n]);
    let (cos_d, sin_d) = (&ws.cos_d[..n], &ws.sin_d[..n]);
    let (g_hh, b_hh) = (&soa.g_hh[..n], &soa.b_hh[..n]);
    let (g, b) = (&soa.g_hk[..n], &soa.b_hk[..n]);
    let (g_kk, b_kk) = (&soa.g_kk[..n], &soa.b_kk[..n]);
    let (ph, qh) = (&mut ws.ph[..n], &mut ws.qh[..n]);
    let (pk, qk) = (&mut ws.pk[..n], &mut ws.qk[..n]);
    for e in 0..n {
        let (c, s) = (cos_d[e], sin_d[e]);
        let vhvk = vh[e] * vk[e];
        let gc = g[e] * c;
        let gs = g[e] * s;
        let bc = b[e] * c;
        let bs = b[e] * s;
        ph[e] = vh[e] * vh[e] * g_hh[e] - vhvk * (gc + bs);
        qh[e] = -vh[e] * vh[e] * b_hh[e] - vhvk * (gs - bc);
        pk[e] = vk[e] * vk[e] * g_kk[e] - vhvk * (gc - bs);
        qk[e] = -vk[e] * vk[e] * b_kk[e] + vhvk * (gs + bc);
    }
    Ok(())
}

/// Sums branch-terminal injections onto buses: shunt term first, then
/// branches in index order. Results land in `ws.p`, `ws.q`.
pub fn reduce_powers(soa: &BranchSoA, ws: &mut ElemWorkspace, vm: &[f64]) -> Result<()> {
    ws.check(soa)?;
    if vm.len() != soa.n_b() {
        return Err(Error::Domain("state length differs from bus count".into()));
    }
    let n_b = soa.n_b();
    let (p, q) = (&mut ws.p[..n_b], &mut ws.q[..n_b]);
    let (gsh, bsh) = (&soa.shunt_g[..n_b], &soa.shunt_b[..n_b]);
    for i in 0..n_b {
        let v2 = vm[i] * vm[i];
        p[i] = v2 * gsh[i];
        q[i] = -v2 * bsh[i];
    }
    let n = soa.n_l();
    let (from, to) = (&soa.from_idx[..n], &soa.to_idx[..n]);
    for e in 0..n {
        p[from[e]] += ws.ph[e];
        q[from[e]] += ws.qh[e];
        p[to[e]] += ws.pk[e];
        q[to[e]] += ws.qk[e];
    }
    Ok(())
}

/// Evaluates the 16 branch partials and the shunt `v`-partials. Needs the
/// gathered states and `cos δ`/`sin δ` from [`eval_powers`] at the same
/// voltage state.
///
/// With `vhvk = v_h v_k`:
///
/// ```text
/// dP_h/dθ_h =  vhvk (g s - b c)          dP_h/dθ_k = -dP_h/dθ_h
/// dP_h/dv_h =  2 v_h g_hh - v_k (g c + b s)
/// dP_h/dv_k = -v_h (g c + b s)
/// dQ_h/dθ_h = -vhvk (g c + b s)          dQ_h/dθ_k = -dQ_h/dθ_h
/// dQ_h/dv_h = -2 v_h b_hh - v_k (g s - b c)
/// dQ_h/dv_k = -v_h (g s - b c)
/// dP_k/dθ_h =  vhvk (g s + b c)          dP_k/dθ_k = -dP_k/dθ_h
/// dP_k/dv_h = -v_k (g c - b s)
/// dP_k/dv_k =  2 v_k g_kk - v_h (g c - b s)
/// dQ_k/dθ_h =  vhvk (g c - b s)          dQ_k/dθ_k = -dQ_k/dθ_h
/// dQ_k/dv_h =  v_k (g s + b c)
/// dQ_k/dv_k = -2 v_k b_kk + v_h (g s + b c)
/// ```
pub fn eval_jacobian_elements(soa: &BranchSoA, ws: &mut ElemWorkspace, vm: &[f64]) -> Result<()> {
    ws.check(soa)?;
    if vm.len() != soa.n_b() {
        return Err(Error::Domain("state length differs from bus count".into()));
    }
    let n = soa.n_l();
    let (vh, vk) = (&ws.vh[..n], &ws.vk[..n]);
    let (cos_d, sin_d) = (&ws.cos_d[..n], &ws.sin_d[..n]);
    let (g_hh, b_hh) = (&soa.g_hh[..n], &soa.b_hh[..n]);
    let (g, b) = (&soa.g_hk[..n], &soa.b_hk[..n]);
    let (g_kk, b_kk) = (&soa.g_kk[..n], &soa.b_kk[..n]);

    let [d0, d1, d2, d3, d4, d5, d6, d7, d8, d9, d10, d11, d12, d13, d14, d15] = &mut ws.d_branch;
    let (d0, d1, d2, d3) = (&mut d0[..n], &mut d1[..n], &mut d2[..n], &mut d3[..n]);
    let (d4, d5, d6, d7) = (&mut d4[..n], &mut d5[..n], &mut d6[..n], &mut d7[..n]);
    let (d8, d9, d10, d11) = (&mut d8[..n], &mut d9[..n], &mut d10[..n], &mut d11[..n]);
    let (d12, d13, d14, d15) = (&mut d12[..n], &mut d13[..n], &mut d14[..n], &mut d15[..n]);

    for e in 0..n {
        let (c, s) = (cos_d[e], sin_d[e]);
        let vhvk = vh[e] * vk[e];
        let gc_p_bs = g[e] * c + b[e] * s;
        let gc_m_bs = g[e] * c - b[e] * s;
        let gs_m_bc = g[e] * s - b[e] * c;
        let gs_p_bc = g[e] * s + b[e] * c;

        // P_h
        d0[e] = vhvk * gs_m_bc;
        d1[e] = -d0[e];
        d2[e] = 2.0 * vh[e] * g_hh[e] - vk[e] * gc_p_bs;
        d3[e] = -vh[e] * gc_p_bs;
        // Q_h
        d4[e] = -vhvk * gc_p_bs;
        d5[e] = -d4[e];
        d6[e] = -2.0 * vh[e] * b_hh[e] - vk[e] * gs_m_bc;
        d7[e] = -vh[e] * gs_m_bc;
        // P_k
        d8[e] = vhvk * gs_p_bc;
        d9[e] = -d8[e];
        d10[e] = -vk[e] * gc_m_bs;
        d11[e] = 2.0 * vk[e] * g_kk[e] - vh[e] * gc_m_bs;
        // Q_k
        d12[e] = vhvk * gc_m_bs;
        d13[e] = -d12[e];
        d14[e] = vk[e] * gs_p_bc;
        d15[e] = -2.0 * vk[e] * b_kk[e] + vh[e] * gs_p_bc;
    }

    let n_b = soa.n_b();
    let (gsh, bsh) = (&soa.shunt_g[..n_b], &soa.shunt_b[..n_b]);
    let (dp, dq) = (&mut ws.dpsh_dv[..n_b], &mut ws.dqsh_dv[..n_b]);
    for i in 0..n_b {
        dp[i] = 2.0 * vm[i] * gsh[i];
        dq[i] = -2.0 * vm[i] * bsh[i];
    }
    Ok(())
}

/// Jacobian pattern plus, for every source array, the `nzval` slot each
/// element is added into, split into first-visit copies and remaining adds.
#[derive(Debug, Clone)]
pub struct ScatterPlan {
    pub j_pattern: Arc<SparsityPattern>,
    n_b: usize,
    n_l: usize,
    /// `positions[a][e]`: destination of element `e` of source array `a`.
    pub positions: Vec<Vec<usize>>,
    pub copy_src: Vec<Vec<usize>>,
    pub copy_dst: Vec<Vec<usize>>,
    pub add_src: Vec<Vec<usize>>,
    pub add_dst: Vec<Vec<usize>>,
}

/// Row and column blocks of a Jacobian destination; `false` picks the
/// `θ`/`P` half, `true` the `v`/`Q` half.
fn branch_destination(x: Injection, y: Variable, h: usize, k: usize, n_b: usize) -> (usize, usize) {
    let row = match x {
        Injection::Ph => h,
        Injection::Qh => n_b + h,
        Injection::Pk => k,
        Injection::Qk => n_b + k,
    };
    let col = match y {
        Variable::ThetaH => h,
        Variable::ThetaK => k,
        Variable::Vh => n_b + h,
        Variable::Vk => n_b + k,
    };
    (row, col)
}

fn shunt_destination(a: usize, i: usize, n_b: usize) -> (usize, usize) {
    match a - N_BRANCH_PARTIALS {
        0 => (i, i),
        1 => (i, n_b + i),
        2 => (n_b + i, i),
        _ => (n_b + i, n_b + i),
    }
}

/// Bus-level structural pattern of the admittance matrix: branch endpoints
/// plus every diagonal.
pub fn network_pattern(net: &IndexedNetwork) -> Result<Arc<SparsityPattern>> {
    let n = net.n_b();
    let mut t = TripletList::<f64>::with_capacity(n, n, n + 4 * net.n_l());
    for i in 0..n {
        t.push(i, i, 0.0);
    }
    for (&h, &k) in net.from_idx.iter().zip(&net.to_idx) {
        t.push(h, h, 0.0);
        t.push(h, k, 0.0);
        t.push(k, h, 0.0);
        t.push(k, k, 0.0);
    }
    Ok(Arc::clone(csc_from_triplets(&t)?.pattern()))
}

pub fn build_scatter_plan(net: &IndexedNetwork) -> Result<ScatterPlan> {
    let (n_b, n_l) = (net.n_b(), net.n_l());
    let j_pattern = Arc::new(network_pattern(net)?.tile_2x2());

    let locate = |row: usize, col: usize| {
        j_pattern.find(row, col).ok_or_else(|| {
            Error::Inconsistency(format!("({row}, {col}) missing from Jacobian pattern"))
        })
    };

    let mut positions = Vec::with_capacity(N_SOURCES);
    for x in INJECTIONS {
        for y in VARIABLES {
            let mut pos = Vec::with_capacity(n_l);
            for e in 0..n_l {
                let (r, c) = branch_destination(x, y, net.from_idx[e], net.to_idx[e], n_b);
                pos.push(locate(r, c)?);
            }
            positions.push(pos);
        }
    }
    for a in N_BRANCH_PARTIALS..N_SOURCES {
        let pos = (0..n_b)
            .map(|i| {
                let (r, c) = shunt_destination(a, i, n_b);
                locate(r, c)
            })
            .collect::<Result<Vec<_>>>()?;
        positions.push(pos);
    }

    let mut visited = vec![false; j_pattern.nnz()];
    let mut copy_src = Vec::with_capacity(N_SOURCES);
    let mut copy_dst = Vec::with_capacity(N_SOURCES);
    let mut add_src = Vec::with_capacity(N_SOURCES);
    let mut add_dst = Vec::with_capacity(N_SOURCES);
    for pos in &positions {
        let (mut cs, mut cd, mut as_, mut ad) = (vec![], vec![], vec![], vec![]);
        for (e, &p) in pos.iter().enumerate() {
            if visited[p] {
                as_.push(e);
                ad.push(p);
            } else {
                visited[p] = true;
                cs.push(e);
                cd.push(p);
            }
        }
        copy_src.push(cs);
        copy_dst.push(cd);
        add_src.push(as_);
        add_dst.push(ad);
    }
    if let Some(p) = visited.iter().position(|v| !v) {
        return Err(Error::Inconsistency(format!(
            "Jacobian slot {p} has no contributing element"
        )));
    }

    Ok(ScatterPlan {
        j_pattern,
        n_b,
        n_l,
        positions,
        copy_src,
        copy_dst,
        add_src,
        add_dst,
    })
}

impl ScatterPlan {
    /// A zeroed Jacobian on the plan's pattern.
    pub fn new_jacobian(&self) -> CscMatrix<f64> {
        CscMatrix::filled(Arc::clone(&self.j_pattern), 0.0)
    }

    pub fn copy_len(&self) -> usize {
        self.copy_dst.iter().map(Vec::len).sum()
    }

    pub fn add_len(&self) -> usize {
        self.add_dst.iter().map(Vec::len).sum()
    }

    fn check(&self, ws: &ElemWorkspace, j: &CscMatrix<f64>) -> Result<()> {
        if ws.n_b() != self.n_b || ws.n_l() != self.n_l {
            return Err(Error::PlanStale(format!(
                "plan built for {} buses / {} branches, workspace has {} / {}",
                self.n_b,
                self.n_l,
                ws.n_b(),
                ws.n_l()
            )));
        }
        if !Arc::ptr_eq(j.pattern(), &self.j_pattern) && **j.pattern() != *self.j_pattern {
            return Err(Error::PlanStale(
                "output matrix does not use the plan's pattern".into(),
            ));
        }
        Ok(())
    }
}

/// Two-step reduction: first-visit elements are stored directly, the rest
/// are added afterwards in enumeration order.
pub fn reduce_jacobian_two_step(
    plan: &ScatterPlan,
    ws: &ElemWorkspace,
    j: &mut CscMatrix<f64>,
) -> Result<()> {
    plan.check(ws, j)?;
    let nz = j.nzval_mut();
    for a in 0..N_SOURCES {
        let src = ws.source(a);
        for (&e, &p) in plan.copy_src[a].iter().zip(&plan.copy_dst[a]) {
            nz[p] = src[e];
        }
    }
    for a in 0..N_SOURCES {
        let src = ws.source(a);
        for (&e, &p) in plan.add_src[a].iter().zip(&plan.add_dst[a]) {
            nz[p] += src[e];
        }
    }
    Ok(())
}

/// Copy-add reduction: clear, then add every element at its slot.
pub fn reduce_jacobian_copy_add(
    plan: &ScatterPlan,
    ws: &ElemWorkspace,
    j: &mut CscMatrix<f64>,
) -> Result<()> {
    plan.check(ws, j)?;
    let nz = j.nzval_mut();
    // -0.0 is the exact additive identity (-0.0 + x == x bit for bit), which
    // keeps this path bitwise equal to the two-step reduction.
    nz.fill(-0.0);
    for a in 0..N_SOURCES {
        let src = ws.source(a);
        for (&p, &v) in plan.positions[a].iter().zip(src) {
            nz[p] += v;
        }
    }
    Ok(())
}

/// Baseline reduction: a fresh triplet list through the generic
/// triplet-to-CSC conversion. Only generated entries are stored, so the
/// always-zero shunt θ-partials do not appear.
pub fn reduce_jacobian_new_matrix(
    net: &IndexedNetwork,
    ws: &ElemWorkspace,
) -> Result<CscMatrix<f64>> {
    let (n_b, n_l) = (net.n_b(), net.n_l());
    if ws.n_b() != n_b || ws.n_l() != n_l {
        return Err(Error::Domain("workspace does not match network".into()));
    }
    let mut t = TripletList::with_capacity(2 * n_b, 2 * n_b, N_BRANCH_PARTIALS * n_l + 2 * n_b);
    for x in INJECTIONS {
        for y in VARIABLES {
            let vals = &ws.d_branch[partial_index(x, y)];
            for ((&h, &k), &v) in net.from_idx.iter().zip(&net.to_idx).zip(vals) {
                let (r, c) = branch_destination(x, y, h, k, n_b);
                t.push(r, c, v);
            }
        }
    }
    for i in 0..n_b {
        t.push(i, n_b + i, ws.dpsh_dv[i]);
    }
    for i in 0..n_b {
        t.push(n_b + i, n_b + i, ws.dqsh_dv[i]);
    }
    csc_from_triplets(&t)
}
