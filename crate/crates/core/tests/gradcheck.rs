//! Every tape primitive, and the composed encoder + decoder, against
//! central finite differences in 64-bit mode.

use se_kge_core::encoder::Composition;
use se_kge_core::oracle::gradcheck::{
    check_batch_norm_eval, check_bce_with_logits, check_composed_model, check_primitive,
    CheckResult, PRIMITIVES, REL_TOL,
};

fn assert_pass(r: &CheckResult) {
    assert!(
        r.passed(),
        "{}: max relative error {:.3e} over {} probes exceeds {:.0e}",
        r.name,
        r.max_rel_err,
        r.probes,
        REL_TOL
    );
}

#[test]
fn primitives_match_finite_differences() {
    for name in PRIMITIVES {
        let r = check_primitive(name, 0xC0FFEE, 3);
        assert!(r.probes >= 20, "{name}: only {} probes", r.probes);
        assert_pass(&r);
    }
}

#[test]
fn batch_norm_eval_mode_matches_finite_differences() {
    assert_pass(&check_batch_norm_eval(7));
}

#[test]
fn bce_with_logits_matches_finite_differences() {
    assert_pass(&check_bce_with_logits(3));
}

#[test]
fn composed_model_matches_finite_differences() {
    for comp in [Composition::Mult, Composition::Add, Composition::Mlp] {
        assert_pass(&check_composed_model(41, comp));
    }
}
