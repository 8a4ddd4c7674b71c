//! Case preparation, untimed verification and the timed loop.

use std::hint::black_box;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gridkern::elementwise::{
    build_branch_soa, build_scatter_plan, eval_jacobian_elements, eval_powers, partial_index,
    reduce_jacobian_copy_add, reduce_jacobian_new_matrix, reduce_jacobian_two_step, reduce_powers,
    BranchSoA, ElemWorkspace, Injection, ScatterPlan, Variable,
};
use gridkern::ybus::{
    assemble_jacobian_concat, assemble_jacobian_inplace, build_jacobian_plan, derivatives_matmul,
    derivatives_two_pass, JacobianPlanYbus, YbusJacobian, YbusModel,
};
use gridkern::{load_case, replicate_case, CscMatrix, IndexedNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Assembly, BenchConfig, Derivatives, Method, Reduction};
use crate::error::{BenchError, Result};
use crate::report::{ElementwiseTimings, StepTimings, Verification, YbusTimings};

/// Cross-method agreement required before any timing is reported.
pub const VERIFY_TOL: f64 = 1e-9;

/// Seed of the `--perturb` generator.
pub const PERTURB_SEED: u64 = 42;

/// Directory of the case files shipped with the core crate.
pub fn bundled_case_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data")
}

/// Returns `path` if it exists, otherwise a bundled case of that name (with
/// or without the `.m` extension) when `path` is a bare file name.
pub fn resolve_case_path(path: &Path) -> PathBuf {
    if path.exists() || path.components().count() != 1 {
        return path.to_path_buf();
    }
    let dir = bundled_case_dir();
    let plain = dir.join(path);
    if plain.exists() {
        return plain;
    }
    let with_ext = dir.join(path).with_extension("m");
    if with_ext.exists() {
        return with_ext;
    }
    path.to_path_buf()
}

/// A loaded case with the operating point to evaluate at.
#[derive(Debug, Clone)]
pub struct PreparedCase {
    pub name: String,
    pub net: IndexedNetwork,
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
}

/// Loads, replicates and optionally perturbs the configured case.
pub fn prepare_case(cfg: &BenchConfig) -> Result<PreparedCase> {
    cfg.validate()?;
    let path = resolve_case_path(&cfg.case_path);
    let text = std::fs::read_to_string(&path).map_err(|source| BenchError::Io {
        path: path.clone(),
        source,
    })?;
    let mut net = load_case(&text)?;
    if cfg.replicate_k > 1 {
        net = replicate_case(&net, cfg.replicate_k)?;
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "case".into());
    let name = if cfg.replicate_k > 1 {
        format!("{stem}x{}", cfg.replicate_k)
    } else {
        stem
    };
    let (mut vm, mut va) = (net.vm0.clone(), net.va0.clone());
    if cfg.perturb > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(PERTURB_SEED);
        let eps = cfg.perturb;
        for x in vm.iter_mut().chain(va.iter_mut()) {
            *x += rng.gen_range(-eps..=eps);
        }
    }
    Ok(PreparedCase { name, net, vm, va })
}

struct YbusRun {
    model: YbusModel,
    plan: JacobianPlanYbus,
    ws: YbusJacobian,
    derivatives: Derivatives,
    assembly: Assembly,
}

impl YbusRun {
    fn new(case: &PreparedCase, cfg: &BenchConfig) -> Result<Self> {
        let mut model = YbusModel::from_network(&case.net, cfg.storage.into())?;
        model.set_state(&case.vm, &case.va)?;
        let plan = build_jacobian_plan(model.ybus())?;
        let ws = plan.workspace();
        Ok(Self {
            model,
            plan,
            ws,
            derivatives: cfg.derivatives,
            assembly: cfg.assembly,
        })
    }

    fn phasor(&mut self) {
        self.model.update_phasors();
    }

    fn power(&mut self) -> Result<()> {
        black_box(self.model.power_injection()?);
        Ok(())
    }

    fn j_calc(&mut self) -> Result<()> {
        match self.derivatives {
            Derivatives::TwoPass => derivatives_two_pass(&mut self.model, &mut self.ws)?,
            Derivatives::Matmul => {
                let (dt, dv) = derivatives_matmul(&self.model)?;
                self.ws.ds_dtheta = dt;
                self.ws.ds_dvm = dv;
            }
        }
        Ok(())
    }

    fn j_red(&mut self) -> Result<()> {
        match self.assembly {
            Assembly::Inplace => assemble_jacobian_inplace(&self.plan, &mut self.ws)?,
            Assembly::Concat => {
                self.ws.j = assemble_jacobian_concat(&self.ws.ds_dtheta, &self.ws.ds_dvm)?
            }
        }
        black_box(self.ws.j.nzval());
        Ok(())
    }
}

struct ElemRun<'a> {
    net: &'a IndexedNetwork,
    vm: &'a [f64],
    va: &'a [f64],
    soa: BranchSoA,
    ws: ElemWorkspace,
    plan: ScatterPlan,
    j: CscMatrix<f64>,
    reduction: Reduction,
}

impl<'a> ElemRun<'a> {
    fn new(case: &'a PreparedCase, cfg: &BenchConfig) -> Result<Self> {
        let soa = build_branch_soa(&case.net);
        let ws = ElemWorkspace::for_soa(&soa);
        let plan = build_scatter_plan(&case.net)?;
        let j = plan.new_jacobian();
        Ok(Self {
            net: &case.net,
            vm: &case.vm,
            va: &case.va,
            soa,
            ws,
            plan,
            j,
            reduction: cfg.reduction,
        })
    }

    fn power(&mut self) -> Result<()> {
        eval_powers(&self.soa, &mut self.ws, self.vm, self.va)?;
        Ok(())
    }

    fn power_red(&mut self) -> Result<()> {
        reduce_powers(&self.soa, &mut self.ws, self.vm)?;
        black_box(&self.ws.p);
        Ok(())
    }

    fn j_calc(&mut self) -> Result<()> {
        eval_jacobian_elements(&self.soa, &mut self.ws, self.vm)?;
        Ok(())
    }

    fn j_red(&mut self) -> Result<()> {
        match self.reduction {
            Reduction::TwoStep => reduce_jacobian_two_step(&self.plan, &self.ws, &mut self.j)?,
            Reduction::CopyAdd => reduce_jacobian_copy_add(&self.plan, &self.ws, &mut self.j)?,
            Reduction::NewMatrix => self.j = reduce_jacobian_new_matrix(self.net, &self.ws)?,
        }
        black_box(self.j.nzval());
        Ok(())
    }
}

/// Largest absolute difference over the union of both patterns, with
/// absent entries read as zero.
pub fn max_positional_diff(a: &CscMatrix<f64>, b: &CscMatrix<f64>) -> f64 {
    if a.n_rows() != b.n_rows() || a.n_cols() != b.n_cols() {
        return f64::INFINITY;
    }
    let one_way = |x: &CscMatrix<f64>, y: &CscMatrix<f64>| {
        x.iter()
            .map(|(i, j, v)| (v - y.get(i, j).unwrap_or(0.0)).abs())
            .fold(0.0, f64::max)
    };
    one_way(a, b).max(one_way(b, a))
}

/// Runs every step of both methods once with the configured variants and
/// checks that injections and Jacobians agree within [`VERIFY_TOL`].
pub fn verify_case(case: &PreparedCase, cfg: &BenchConfig) -> Result<Verification> {
    let mut y = YbusRun::new(case, cfg)?;
    y.phasor();
    y.power()?;
    y.j_calc()?;
    y.j_red()?;

    let mut e = ElemRun::new(case, cfg)?;
    e.power()?;
    e.power_red()?;
    e.j_calc()?;
    if cfg.inject_sign_error {
        for v in e.ws.d_branch[partial_index(Injection::Ph, Variable::ThetaH)].iter_mut() {
            *v = -*v;
        }
    }
    e.j_red()?;

    let max_power = y
        .model
        .s()
        .iter()
        .zip(e.ws.p.iter().zip(&e.ws.q))
        .map(|(s, (&p, &q))| (s.re - p).hypot(s.im - q))
        .fold(0.0, f64::max);
    let max_jacobian = max_positional_diff(&y.ws.j, &e.j);
    let fail = |what, mismatch| BenchError::Verification {
        case: case.name.clone(),
        what,
        mismatch,
        tol: VERIFY_TOL,
    };
    if max_power.is_nan() || max_power > VERIFY_TOL {
        return Err(fail("power", max_power));
    }
    if max_jacobian.is_nan() || max_jacobian > VERIFY_TOL {
        return Err(fail("jacobian", max_jacobian));
    }
    Ok(Verification {
        max_power,
        max_jacobian,
    })
}

fn time_step(best: &mut u64, f: impl FnOnce() -> Result<()>) -> Result<()> {
    let t0 = Instant::now();
    f()?;
    let ns = u64::try_from(t0.elapsed().as_nanos())
        .unwrap_or(u64::MAX)
        .max(1);
    *best = (*best).min(ns);
    Ok(())
}

/// Benchmarks one case: setup and verification untimed, then `warmup`
/// discarded and `reps` timed repetitions of each selected method's steps,
/// keeping the minimum per step.
pub fn run_bench(cfg: &BenchConfig) -> Result<StepTimings> {
    let case = prepare_case(cfg)?;
    let verification = if cfg.verify {
        Some(verify_case(&case, cfg)?)
    } else {
        None
    };

    let ybus = if cfg.runs(Method::Ybus) {
        let mut run = YbusRun::new(&case, cfg)?;
        let mut best = [u64::MAX; 4];
        for rep in 0..cfg.warmup + cfg.reps {
            let mut t = [u64::MAX; 4];
            time_step(&mut t[0], || {
                run.phasor();
                Ok(())
            })?;
            time_step(&mut t[1], || run.power())?;
            time_step(&mut t[2], || run.j_calc())?;
            time_step(&mut t[3], || run.j_red())?;
            if rep >= cfg.warmup {
                for (b, x) in best.iter_mut().zip(t) {
                    *b = (*b).min(x);
                }
            }
        }
        Some(YbusTimings {
            phasor_calc: best[0],
            power_calc: best[1],
            j_calc: best[2],
            j_red: best[3],
        })
    } else {
        None
    };

    let elementwise = if cfg.runs(Method::Elementwise) {
        let mut run = ElemRun::new(&case, cfg)?;
        let mut best = [u64::MAX; 4];
        for rep in 0..cfg.warmup + cfg.reps {
            let mut t = [u64::MAX; 4];
            time_step(&mut t[0], || run.power())?;
            time_step(&mut t[1], || run.power_red())?;
            time_step(&mut t[2], || run.j_calc())?;
            time_step(&mut t[3], || run.j_red())?;
            if rep >= cfg.warmup {
                for (b, x) in best.iter_mut().zip(t) {
                    *b = (*b).min(x);
                }
            }
        }
        Some(ElementwiseTimings {
            power_calc: best[0],
            power_red: best[1],
            j_calc: best[2],
            j_red: best[3],
        })
    } else {
        None
    };

    Ok(StepTimings {
        case: case.name,
        n_b: case.net.n_b(),
        n_l: case.net.n_l(),
        ybus,
        elementwise,
        verification,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Storage;

    fn cfg(name: &str) -> BenchConfig {
        let mut c = BenchConfig::new(bundled_case_dir().join(name));
        c.reps = 2;
        c.warmup = 1;
        c
    }

    #[test]
    fn case14_with_verification() {
        let mut c = cfg("case14.m");
        c.verify = true;
        let t = run_bench(&c).unwrap();
        assert_eq!((t.case.as_str(), t.n_b, t.n_l), ("case14", 14, 20));
        let v = t.verification.unwrap();
        assert!(v.max_power <= VERIFY_TOL && v.max_jacobian <= VERIFY_TOL);
        assert!(t.ybus.unwrap().steps().iter().all(|&x| x > 0));
        assert!(t.elementwise.unwrap().steps().iter().all(|&x| x > 0));
    }

    #[test]
    fn replication_is_reported() {
        let mut c = cfg("case14.m");
        c.replicate_k = 5;
        let t = run_bench(&c).unwrap();
        assert_eq!((t.case.as_str(), t.n_b, t.n_l), ("case14x5", 70, 100));
    }

    #[test]
    fn single_method_leaves_other_empty() {
        let mut c = cfg("case14.m");
        c.methods = vec![Method::Ybus];
        let t = run_bench(&c).unwrap();
        assert!(t.ybus.is_some() && t.elementwise.is_none());
    }

    #[test]
    fn every_variant_verifies() {
        for storage in [Storage::Interleaved, Storage::Separate] {
            for reduction in [Reduction::TwoStep, Reduction::CopyAdd, Reduction::NewMatrix] {
                for derivatives in [Derivatives::TwoPass, Derivatives::Matmul] {
                    for assembly in [Assembly::Inplace, Assembly::Concat] {
                        let mut c = cfg("case118.m");
                        c.reps = 1;
                        c.warmup = 0;
                        c.verify = true;
                        c.perturb = 0.02;
                        c.storage = storage;
                        c.reduction = reduction;
                        c.derivatives = derivatives;
                        c.assembly = assembly;
                        run_bench(&c).unwrap_or_else(|e| {
                            panic!("{storage:?} {reduction:?} {derivatives:?} {assembly:?}: {e}")
                        });
                    }
                }
            }
        }
    }

    #[test]
    fn injected_sign_error_fails_verification() {
        let mut c = cfg("case14.m");
        c.verify = true;
        c.inject_sign_error = true;
        let err = run_bench(&c).unwrap_err();
        assert!(
            matches!(
                err,
                BenchError::Verification {
                    what: "jacobian",
                    ..
                }
            ),
            "{err}"
        );
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn perturbation_is_deterministic() {
        let mut c = cfg("case14.m");
        c.perturb = 0.01;
        let a = prepare_case(&c).unwrap();
        let b = prepare_case(&c).unwrap();
        assert_eq!(a.vm, b.vm);
        assert_eq!(a.va, b.va);
        assert_ne!(a.vm, a.net.vm0);
        assert!(a
            .vm
            .iter()
            .zip(&a.net.vm0)
            .all(|(x, y)| (x - y).abs() <= 0.01));
    }

    #[test]
    fn bare_names_resolve_to_bundled_cases() {
        assert!(resolve_case_path(Path::new("case14")).exists());
        assert!(resolve_case_path(Path::new("case14.m")).exists());
        assert!(!resolve_case_path(Path::new("no_such_case")).exists());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = cfg("case14.m");
        c.reps = 0;
        assert!(matches!(run_bench(&c), Err(BenchError::Config(_))));
        let mut c = cfg("case14.m");
        c.perturb = -1.0;
        assert!(matches!(run_bench(&c), Err(BenchError::Config(_))));
        let mut c = cfg("case14.m");
        c.methods.clear();
        assert!(matches!(run_bench(&c), Err(BenchError::Config(_))));
        let c = cfg("missing.m");
        assert_eq!(run_bench(&c).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn positional_diff_counts_missing_entries() {
        use gridkern::{sparse::csc_from_triplets, TripletList};
        let mut a = TripletList::with_capacity(2, 2, 2);
        a.push(0, 0, 1.0);
        a.push(1, 1, 2.0);
        let mut b = TripletList::with_capacity(2, 2, 1);
        b.push(0, 0, 1.5);
        let (a, b) = (
            csc_from_triplets(&a).unwrap(),
            csc_from_triplets(&b).unwrap(),
        );
        assert_eq!(max_positional_diff(&a, &b), 2.0);
        assert_eq!(max_positional_diff(&b, &a), 2.0);
    }
}
