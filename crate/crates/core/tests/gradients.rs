use dsl_core::gradflow::{fd_check, implicit_grad, implicit_state, mapping_residual, Upstream};
use dsl_core::learner::{
    sample_gradient, Block, DslModel, Formulation, LossKind, ModelConfig, SolverOptions,
};
use dsl_core::netfuncs::InitScheme;

fn tiny(formulation: Formulation, learned_v: bool, seed: u64) -> DslModel {
    let cfg = ModelConfig {
        d: 2,
        a_hidden: vec![4],
        coef_hidden: vec![4],
        learned_v,
        head_bias: true,
        init: InitScheme::GlorotUniform,
        formulation,
    };
    DslModel::new(2, 2, &cfg, seed).unwrap()
}

fn report(model: &DslModel, x: &[f64], opts: &SolverOptions) -> dsl_core::gradflow::FdReport {
    let r = fd_check(model, x, 1, LossKind::CrossEntropy, 1e-4, 1e-5, opts).unwrap();
    for (b, e) in &r.blocks {
        eprintln!("{:>2}: max rel {e:.3e}", b.name());
    }
    for (i, (a, n)) in r.analytic.iter().zip(&r.numeric).enumerate() {
        if r.rel_errors[i] > 1e-3 {
            eprintln!(
                "param {i}: analytic {a:.6e} fd {n:.6e} rel {:.2e}",
                r.rel_errors[i]
            );
        }
    }
    r
}

#[test]
fn field_line_gradients_match_finite_differences() {
    let opts = SolverOptions::finite_difference(50);
    for seed in [1, 2] {
        let model = tiny(Formulation::FieldLine, false, seed);
        let r = report(&model, &[0.4, 0.6], &opts);
        assert!(
            r.fraction_within(1e-3) >= 0.99,
            "seed {seed}: {}",
            r.fraction_within(1e-3)
        );
        assert!(r.max_rel <= 1e-2, "seed {seed}: {}", r.max_rel);
    }
}

#[test]
fn learned_slope_gradients_match_finite_differences() {
    let opts = SolverOptions::finite_difference(50);
    let model = tiny(Formulation::FieldLine, true, 3);
    let r = report(&model, &[0.55, 0.35], &opts);
    assert!(r.blocks.iter().any(|(b, _)| *b == Block::V));
    assert!(r.fraction_within(1e-3) >= 0.99);
    assert!(r.max_rel <= 1e-2);
}

#[test]
fn fixed_interval_gradients_match_finite_differences() {
    let opts = SolverOptions::finite_difference(50);
    let model = tiny(Formulation::FixedInterval, false, 4);
    let r = report(&model, &[0.3, 0.7], &opts);
    assert!(r.fraction_within(1e-3) >= 0.99);
    assert!(r.max_rel <= 1e-2);
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[test]
fn exit_rows_vanish_at_exact_exit_times() {
    let mut model = tiny(Formulation::FieldLine, false, 5);
    let a = model.a_net.as_mut().unwrap();
    a.weights
        .iter_mut()
        .for_each(|w| w.iter_mut().for_each(|v| *v = 0.0));
    let last = a.biases.len() - 1;
    a.biases[last] = vec![logit((0.25 - 0.01) / 0.99), logit((0.5 - 0.01) / 0.99)];
    let opts = SolverOptions::finite_difference(50);
    let h = mapping_residual(&model, &[0.5, 0.5], &[10.0, 40.0, -1.0, 1.0], &opts).unwrap();
    assert!(h[2].abs() < 1e-10 && h[3].abs() < 1e-10, "{h:?}");
}

#[test]
fn converged_state_and_jacobian_structure() {
    let model = tiny(Formulation::FieldLine, true, 6);
    let opts = SolverOptions::finite_difference(50);
    let x = [0.45, 0.6];
    let cache = model.forward(&x, &opts).unwrap();
    let st = implicit_state(&model, &cache, &opts).unwrap();
    let scale = cache.trace.v0.iter().fold(0.0f64, |m, v| m.max(*v)) * cache.trace.length();
    let h = mapping_residual(&model, &x, &st.psi, &opts).unwrap();
    for (a, b) in h.iter().zip(&st.h) {
        assert!(a.abs() <= 1e-8 * scale, "{h:?}");
        assert!((a - b).abs() <= 1e-8 * scale);
    }
    // perturbing λ_1 opens a boundary residual in H_1 only
    let mut psi = st.psi.clone();
    psi[0] += 1.0;
    let hp = mapping_residual(&model, &x, &psi, &opts).unwrap();
    assert!(hp[0].abs() > 1e-4 * scale);
    assert!(hp[1].abs() <= 1e-8 * scale);

    // J_ψ against central differences of the mapping
    let eps = 1e-6;
    for col in 0..st.psi.len() {
        let mut up = st.psi.clone();
        up[col] += eps;
        let mut dn = st.psi.clone();
        dn[col] -= eps;
        let hu = mapping_residual(&model, &x, &up, &opts).unwrap();
        let hd = mapping_residual(&model, &x, &dn, &opts).unwrap();
        for row in 0..st.psi.len() {
            let fd = (hu[row] - hd[row]) / (2.0 * eps);
            let an = st.j_psi[(row, col)];
            assert!(
                (fd - an).abs() <= 1e-4 * (1.0 + fd.abs()),
                "J[{row},{col}]: fd {fd} analytic {an}"
            );
            let both_lambda = row < 2 && col < 2 && row != col;
            let exit_vs_lambda = row >= 2 && col < 2;
            if both_lambda || exit_vs_lambda {
                assert!(
                    an == 0.0 && fd.abs() <= 1e-8 * scale.max(1.0),
                    "J[{row},{col}] = {fd}"
                );
            }
        }
    }
    assert!(st.condition_estimate.is_finite());
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let model = tiny(Formulation::FieldLine, true, 7);
    let opts = SolverOptions::standard(50);
    let cache = model.forward(&[0.3, 0.3], &opts).unwrap();
    let g = implicit_grad(
        &model,
        &cache,
        &Upstream {
            logits: vec![0.0; 2],
            lambdas: vec![0.0; 2],
        },
        &opts,
    )
    .unwrap();
    assert!(g.params().all(|v| *v == 0.0));
}

#[test]
fn squared_loss_head_gradient() {
    let model = tiny(Formulation::FieldLine, false, 8);
    let opts = SolverOptions::standard(50);
    let x = [0.62, 0.41];
    let cache = model.forward(&x, &opts).unwrap();
    let (_, g) = sample_gradient(&model, &x, 0, LossKind::Squared, 0.0, &opts).unwrap();
    for r in 0..2 {
        let resid = cache.logits[r] - if r == 0 { 1.0 } else { 0.0 };
        for i in 0..2 {
            assert!((g.head_l[r * 2 + i] - resid * cache.u_at_zero[i]).abs() < 1e-14);
        }
        assert!((g.head_bias.as_ref().unwrap()[r] - resid).abs() < 1e-14);
    }
}

#[test]
fn frozen_knot_positions_drop_field_dependence_of_coefficients() {
    let model = tiny(Formulation::FieldLine, false, 9);
    let mut opts = SolverOptions::finite_difference(50);
    let x = [0.5, 0.45];
    let (_, full) = sample_gradient(&model, &x, 1, LossKind::CrossEntropy, 1e-4, &opts).unwrap();
    opts.freeze_knot_positions = true;
    let (_, frozen) = sample_gradient(&model, &x, 1, LossKind::CrossEntropy, 1e-4, &opts).unwrap();
    assert_ne!(full.a_net, frozen.a_net);
    assert!(frozen.a_net.unwrap().params().all(|v| v.is_finite()));
}

#[test]
fn fd_error_shrinks_with_step() {
    let model = tiny(Formulation::FieldLine, false, 10);
    let opts = SolverOptions::finite_difference(50);
    let x = [0.4, 0.5];
    let coarse = fd_check(&model, &x, 0, LossKind::CrossEntropy, 1e-4, 1e-3, &opts).unwrap();
    let fine = fd_check(&model, &x, 0, LossKind::CrossEntropy, 1e-4, 1e-5, &opts).unwrap();
    assert!(
        fine.max_rel < coarse.max_rel,
        "{} vs {}",
        fine.max_rel,
        coarse.max_rel
    );
}
