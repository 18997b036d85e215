mod common;

use bga_core::autograd::{Conv2dSpec, Conv3dSpec, Var};
use bga_core::costvolume::build_gwc_volume;
use bga_core::regression::soft_argmin;
use bga_core::training::smooth_l1;
use bga_core::Tensor;
use common::{directional_check, grad_check, randn};

const OP_TOL: f64 = 1e-4;

#[test]
fn conv2d_grouped_strided() {
    let spec = Conv2dSpec {
        stride: 2,
        padding: 1,
        groups: 2,
    };
    let inputs = [randn(&[2, 4, 5, 6], 1), randn(&[6, 2, 3, 3], 2), randn(&[6], 3)];
    let err = grad_check(&inputs, |v| v[0].conv2d(v[1], Some(v[2]), spec), 4);
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn conv2d_pointwise() {
    let inputs = [randn(&[1, 3, 4, 4], 5), randn(&[5, 3, 1, 1], 6)];
    let err = grad_check(&inputs, |v| v[0].conv2d(v[1], None, Conv2dSpec::same(1)), 7);
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn conv3d_strided() {
    let spec = Conv3dSpec {
        stride: [2, 2, 2],
        padding: [1, 1, 1],
    };
    let inputs = [randn(&[1, 2, 4, 3, 5], 8), randn(&[3, 2, 3, 3, 3], 9), randn(&[3], 10)];
    let err = grad_check(&inputs, |v| v[0].conv3d(v[1], Some(v[2]), spec), 11);
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn elementwise_ops() {
    let inputs = [randn(&[2, 3, 2, 2], 12), randn(&[2, 3, 2, 2], 13)];
    let err = grad_check(
        &inputs,
        |v| {
            let a = v[0].mul(v[1]).add(v[0]).sub(v[1].scale(0.5));
            a.leaky_relu(0.1).add(v[1].sigmoid())
        },
        14,
    );
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn affine_and_gate() {
    let inputs = [randn(&[2, 3, 2, 3], 15), randn(&[3], 16), randn(&[3], 17), randn(&[2, 1, 2, 3], 18)];
    let err = grad_check(&inputs, |v| v[0].channel_affine(v[1], v[2]).gate(v[3].sigmoid()), 19);
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn structural_ops() {
    let inputs = [randn(&[2, 2, 3, 3], 20), randn(&[2, 1, 3, 3], 21)];
    let err = grad_check(
        &inputs,
        |v| {
            let c = Var::concat_channels(&[v[0], v[1]]);
            let b = Var::concat_batch(&[c, c.scale(2.0)]).slice_batch(1, 2);
            b.reshape(&[2, 9, 3]).reshape(&[2, 3, 3, 3]).mean().add(b.sum())
        },
        22,
    );
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn resampling_ops() {
    let inputs = [randn(&[1, 2, 3, 4], 23)];
    let nearest = grad_check(&inputs, |v| v[0].upsample_nearest(&[2, 2]).crop_spatial(&[5, 7]), 24);
    let bilinear = grad_check(&inputs, |v| v[0].upsample_bilinear(7, 9), 25);
    assert!(nearest < OP_TOL, "{nearest}");
    assert!(bilinear < OP_TOL, "{bilinear}");
    let vol = [randn(&[1, 1, 2, 3, 2], 26)];
    let nearest3 = grad_check(&vol, |v| v[0].upsample_nearest(&[2, 2, 2]).crop_spatial(&[3, 5, 4]), 27);
    assert!(nearest3 < OP_TOL, "{nearest3}");
}

#[test]
fn convex_upsample() {
    let inputs = [randn(&[1, 1, 3, 4], 28), randn(&[1, 9 * 4, 3, 4], 29)];
    let err = grad_check(&inputs, |v| v[0].convex_upsample(v[1], 2), 30);
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn softmax_expectation() {
    let inputs = [randn(&[2, 5, 2, 3], 31)];
    let err = grad_check(&inputs, |v| soft_argmin(v[0]).0, 32);
    assert!(err < OP_TOL, "{err}");
    let err = grad_check(&inputs, |v| v[0].softmax_channels(), 33);
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn group_correlation() {
    let inputs = [randn(&[2, 2, 3, 3], 34), randn(&[2, 2, 3, 3], 35)];
    let err = grad_check(&inputs, |v| build_gwc_volume(v[0], v[1], 8, 2).unwrap(), 36);
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn smooth_l1_both_pieces() {
    let gt = Tensor::<f64>::zeros(&[1, 1, 2, 3]);
    let mask = Tensor::from_vec(&[1, 1, 2, 3], vec![1.0, 1.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
    let pred = Tensor::from_vec(&[1, 1, 2, 3], vec![0.3, -0.7, 5.0, 2.5, -1.8, 0.05]).unwrap();
    let err = grad_check(&[pred], |v| smooth_l1(v[0], &gt, &mask).unwrap(), 37);
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn whole_model_bga() {
    for prefix in ["", "backbone.", "agg.", "upsample."] {
        let err = directional_check(bga_core::aggregation::Paradigm::Bga, 40, prefix);
        assert!(err < 1e-3, "{prefix}: {err}");
    }
}

#[test]
fn whole_model_conv3d() {
    for prefix in ["", "backbone.", "agg."] {
        let err = directional_check(bga_core::aggregation::Paradigm::Conv3d, 41, prefix);
        assert!(err < 1e-3, "{prefix}: {err}");
    }
}

#[test]
fn affine_volume() {
    let inputs = [randn(&[2, 3, 2, 3, 2], 50), randn(&[3], 51), randn(&[3], 52)];
    let err = grad_check(&inputs, |v| v[0].channel_affine(v[1], v[2]), 53);
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn conv3d_same() {
    let spec = Conv3dSpec {
        stride: [1, 1, 1],
        padding: [1, 1, 1],
    };
    let inputs = [randn(&[2, 3, 4, 3, 5], 54), randn(&[2, 3, 3, 3, 3], 55)];
    let err = grad_check(&inputs, |v| v[0].conv3d(v[1], None, spec), 56);
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn conv3d_volume_sized() {
    let spec = Conv3dSpec {
        stride: [1, 1, 1],
        padding: [1, 1, 1],
    };
    let inputs = [randn(&[1, 8, 4, 4, 4], 57), randn(&[6, 8, 3, 3, 3], 58)];
    let err = grad_check(&inputs, |v| v[0].conv3d(v[1], None, spec), 59);
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn sample_norm() {
    let inputs = [randn(&[2, 3, 2, 3], 60)];
    let err = grad_check(&inputs, |v| v[0].sample_norm(1e-5), 61);
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn instance_norm() {
    let inputs = [randn(&[2, 3, 2, 3], 62)];
    let err = grad_check(&inputs, |v| v[0].instance_norm(1e-5), 63);
    assert!(err < OP_TOL, "{err}");
}
