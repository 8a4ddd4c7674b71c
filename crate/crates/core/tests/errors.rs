mod common;

use gridkern::elementwise::{
    build_branch_soa, build_scatter_plan, eval_powers, reduce_jacobian_two_step, ElemWorkspace,
};
use gridkern::oracle::{
    compare_sparse_dense, dense_power_oracle, dense_power_oracle_capped,
    finite_difference_jacobian, finite_difference_jacobian_capped, DenseMatrix,
};
use gridkern::ybus::{build_jacobian_plan, derivatives_two_pass, StorageMode, YbusModel};
use gridkern::Error;

#[test]
fn oracle_refuses_above_cap() {
    let net = common::load("case14");
    assert!(matches!(
        dense_power_oracle_capped(&net, &net.vm0, &net.va0, 10),
        Err(Error::OracleCap { n_b: 14, cap: 10 })
    ));
    assert!(matches!(
        finite_difference_jacobian_capped(&net, &net.vm0, &net.va0, 1e-6, 13),
        Err(Error::OracleCap { .. })
    ));
    let big = gridkern::replicate_case(&common::load("case2736sp"), 2).unwrap();
    assert!(matches!(
        dense_power_oracle(&big, &big.vm0, &big.va0),
        Err(Error::OracleCap { .. })
    ));
}

#[test]
fn oracle_rejects_bad_inputs() {
    let net = common::load("case14");
    assert!(finite_difference_jacobian(&net, &net.vm0, &net.va0, 0.0).is_err());
    assert!(dense_power_oracle(&net, &net.vm0[..3], &net.va0).is_err());
    let model = YbusModel::from_network(&net, StorageMode::Interleaved).unwrap();
    let plan = build_jacobian_plan(model.ybus()).unwrap();
    let j = plan.workspace().j;
    let wrong = DenseMatrix::<f64>::zeros(3, 3);
    assert!(matches!(
        compare_sparse_dense(&j, &wrong, 1e-5, 1e-7),
        Err(Error::Domain(_))
    ));
}

#[test]
fn state_length_is_checked() {
    let net = common::load("case14");
    let mut model = YbusModel::from_network(&net, StorageMode::Interleaved).unwrap();
    assert!(matches!(
        model.set_state(&net.vm0[..5], &net.va0),
        Err(Error::Domain(_))
    ));
    let soa = build_branch_soa(&net);
    let mut ws = ElemWorkspace::for_soa(&soa);
    assert!(eval_powers(&soa, &mut ws, &net.vm0, &net.va0[..5]).is_err());
}

#[test]
fn workspaces_from_another_case_are_stale() {
    let a = common::load("case14");
    let b = common::load("case118");

    let mut model = YbusModel::from_network(&a, StorageMode::Interleaved).unwrap();
    let other = YbusModel::from_network(&b, StorageMode::Interleaved).unwrap();
    let mut ws = build_jacobian_plan(other.ybus()).unwrap().workspace();
    assert!(matches!(
        derivatives_two_pass(&mut model, &mut ws),
        Err(Error::PlanStale(_))
    ));

    let plan = build_scatter_plan(&a).unwrap();
    let soa_b = build_branch_soa(&b);
    let ws_b = ElemWorkspace::for_soa(&soa_b);
    let mut j = plan.new_jacobian();
    assert!(reduce_jacobian_two_step(&plan, &ws_b, &mut j).is_err());

    let other_plan = build_scatter_plan(&b).unwrap();
    let soa_a = build_branch_soa(&a);
    let ws_a = ElemWorkspace::for_soa(&soa_a);
    let mut wrong_j = other_plan.new_jacobian();
    assert!(reduce_jacobian_two_step(&plan, &ws_a, &mut wrong_j).is_err());
}
