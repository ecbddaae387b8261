//! Central finite-difference checks of every differentiable layer.

mod common;

use common::gradcheck::{self, Worst, SEEDS};
use common::FD_REL_TOL;

fn assert_fd(seed: u64, worst: &[Worst]) {
    for w in worst {
        assert!(
            w.err <= FD_REL_TOL,
            "{} seed {seed}: relative error {:.2e} at entry {}",
            w.label,
            w.err,
            w.index
        );
    }
}

#[test]
fn conv2d_gradients() {
    for seed in 0..SEEDS {
        assert_fd(seed, &gradcheck::conv(seed));
    }
}

#[test]
fn relu_gradients() {
    for seed in 0..SEEDS {
        assert_fd(seed, &gradcheck::relu_op(seed));
    }
}

#[test]
fn sigmoid_gradients() {
    for seed in 0..SEEDS {
        assert_fd(seed, &gradcheck::sigmoid_op(seed));
    }
}

#[test]
fn maxpool_gradients() {
    for seed in 0..SEEDS {
        let (worst, routed) = gradcheck::maxpool(seed);
        assert_fd(seed, &worst);
        // one winner per output entry
        assert!(routed <= 2 * 2 * 3 * 2);
    }
}

#[test]
fn upsample_gradients() {
    for seed in 0..SEEDS {
        assert_fd(seed, &gradcheck::upsample(seed));
    }
}

#[test]
fn bce_gradients() {
    for seed in 0..SEEDS {
        assert_fd(seed, &gradcheck::bce(seed));
    }
}

#[test]
fn rcu_gradients() {
    let (mut checked, mut skipped) = (0, 0);
    for seed in 0..SEEDS {
        let sweep = gradcheck::rcu(seed);
        assert_fd(seed, &sweep.worst);
        checked += sweep.checked;
        skipped += sweep.skipped;
    }
    eprintln!("rcu: {skipped} of {checked} entries straddle a kink");
    assert!(skipped * 10 <= checked, "{skipped} of {checked} entries straddle a kink");
}
