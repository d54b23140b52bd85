#[path = "support/gradcheck.rs"]
mod gradcheck;

use gradcheck::{check, Loss};
use semcd_core::loss::Objective;
use semcd_core::nn::ParamGroup;

const TOL: f64 = 1e-3;

fn assert_close(which: Loss, seed: u64) {
    for r in check(which, seed, 400) {
        assert!(r.rel_err <= TOL, "{which:?} {:?}: {r:?}", r.group);
    }
}

#[test]
fn weighted_ce_gradients() {
    assert_close(Loss::WeightedCe, 1);
}

#[test]
fn combined_gradients_for_each_lambda() {
    for lambda in [0.0, 0.05, 1.0] {
        assert_close(Loss::Objective(Objective::Combined { lambda }), 2);
    }
}

#[test]
fn land_cover_pair_does_not_reach_the_change_branch() {
    let res = check(Loss::Objective(Objective::LandCoverPair), 3, 400);
    for r in &res {
        assert!(r.rel_err <= TOL, "{r:?}");
        if matches!(r.group, ParamGroup::EncCd | ParamGroup::DecCd) {
            assert_eq!((r.analytic_norm, r.numeric_norm), (0.0, 0.0));
        } else {
            assert!(r.analytic_norm > 0.0);
        }
    }
}

#[test]
fn change_loss_reaches_the_land_cover_encoder_only() {
    let res = check(Loss::Objective(Objective::Change), 4, 400);
    for r in &res {
        assert!(r.rel_err <= TOL, "{r:?}");
        if r.group == ParamGroup::DecLcm {
            assert_eq!((r.analytic_norm, r.numeric_norm), (0.0, 0.0));
        } else {
            assert!(r.analytic_norm > 0.0, "{r:?}");
        }
    }
}
