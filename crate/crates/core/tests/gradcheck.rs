//! Central finite-difference checks for every autodiff primitive, in 64-bit
//! mode at relative error 1e-6 and in 32-bit mode at 1e-3.

mod common;

use common::{max_grad_error, tensor};
use equilearn::tensor::{NodeId, Tape, TensorData};

const H64: f64 = 1e-5;
const TOL64: f64 = 1e-6;
const H32: f64 = 5e-3;
const TOL32: f64 = 1e-3;

/// Wrap a non-scalar output into a scalar loss with a fixed random target so
/// upstream gradients are non-uniform.
fn to_loss(tape: &mut Tape<f64>, out: NodeId, salt: u64) -> NodeId {
    let shape = tape.shape(out).to_vec();
    let target = tape.leaf(tensor::<f64>(&shape, salt)).unwrap();
    tape.mse(out, target).unwrap()
}

#[test]
fn matmul_2d_gradients() {
    let params = [tensor::<f64>(&[3, 4], 1), tensor::<f64>(&[4, 5], 2)];
    let err = max_grad_error(&params, H64, &|tape, ids| {
        let c = tape.matmul(ids[0], ids[1]).unwrap();
        to_loss(tape, c, 3)
    });
    assert!(err < TOL64, "matmul 2d: {err}");
}

#[test]
fn matmul_grouped_gradients() {
    let params = [tensor::<f64>(&[2, 3, 4], 4), tensor::<f64>(&[2, 4, 3], 5)];
    let err = max_grad_error(&params, H64, &|tape, ids| {
        let c = tape.matmul(ids[0], ids[1]).unwrap();
        to_loss(tape, c, 6)
    });
    assert!(err < TOL64, "matmul grouped: {err}");
}

#[test]
fn conv2d_gradients_stride1_padded() {
    let params = [
        tensor::<f64>(&[2, 2, 4, 4], 7),
        tensor::<f64>(&[3, 2, 3, 3], 8),
        tensor::<f64>(&[3], 9),
    ];
    let err = max_grad_error(&params, H64, &|tape, ids| {
        let c = tape.conv2d(ids[0], ids[1], Some(ids[2]), 1, 1).unwrap();
        to_loss(tape, c, 10)
    });
    assert!(err < TOL64, "conv2d s1 p1: {err}");
}

#[test]
fn conv2d_gradients_patchify_stride() {
    // Patch-embedding geometry: kernel = stride, no padding.
    let params = [tensor::<f64>(&[1, 3, 4, 4], 11), tensor::<f64>(&[4, 3, 2, 2], 12)];
    let err = max_grad_error(&params, H64, &|tape, ids| {
        let c = tape.conv2d(ids[0], ids[1], None, 2, 0).unwrap();
        to_loss(tape, c, 13)
    });
    assert!(err < TOL64, "conv2d patchify: {err}");
}

#[test]
fn upsample_gradients() {
    let params = [tensor::<f64>(&[1, 2, 3, 3], 14)];
    let err = max_grad_error(&params, H64, &|tape, ids| {
        let c = tape.upsample_nearest(ids[0], 2).unwrap();
        to_loss(tape, c, 15)
    });
    assert!(err < TOL64, "upsample: {err}");
}

#[test]
fn elementwise_gradients() {
    let params = [tensor::<f64>(&[2, 3, 4], 16), tensor::<f64>(&[2, 3, 4], 17)];
    let err = max_grad_error(&params, H64, &|tape, ids| {
        let s = tape.add(ids[0], ids[1]).unwrap();
        let m = tape.mul(s, ids[1]).unwrap();
        let sc = tape.scale(m, -1.7).unwrap();
        let sh = tape.shift(sc, 0.3).unwrap();
        to_loss(tape, sh, 18)
    });
    assert!(err < TOL64, "add/mul/scale/shift: {err}");
}

#[test]
fn broadcast_add_gradients() {
    let params = [
        tensor::<f64>(&[2, 3, 4], 19),
        tensor::<f64>(&[4], 20),
        tensor::<f64>(&[3, 4], 21),
    ];
    let err = max_grad_error(&params, H64, &|tape, ids| {
        let a = tape.add_broadcast(ids[0], ids[1]).unwrap();
        let b = tape.add_broadcast(a, ids[2]).unwrap();
        to_loss(tape, b, 22)
    });
    assert!(err < TOL64, "add_broadcast: {err}");
}

#[test]
fn structural_gradients() {
    // reshape -> permute -> expand -> concat -> slice chain.
    let params = [tensor::<f64>(&[2, 6], 23), tensor::<f64>(&[3, 2, 2], 24)];
    let err = max_grad_error(&params, H64, &|tape, ids| {
        let r = tape.reshape(ids[0], &[2, 3, 2]).unwrap();
        let p = tape.permute(r, &[1, 0, 2]).unwrap(); // [3,2,2]
        let cat = tape.concat(&[p, ids[1]], 1).unwrap(); // [3,4,2]
        let s = tape.slice(cat, 1, 1, 2).unwrap();
        to_loss(tape, s, 25)
    });
    assert!(err < TOL64, "reshape/permute/concat/slice: {err}");
}

#[test]
fn expand_gradients() {
    let params = [tensor::<f64>(&[1, 5], 26)];
    let err = max_grad_error(&params, H64, &|tape, ids| {
        let e = tape.expand(ids[0], 3).unwrap(); // [3,1,5]
        to_loss(tape, e, 27)
    });
    assert!(err < TOL64, "expand: {err}");
}

#[test]
fn reduction_gradients() {
    let params = [tensor::<f64>(&[3, 4, 2], 28)];
    for axis in 0..3 {
        let err = max_grad_error(&params, H64, &|tape, ids| {
            let m = tape.mean_axis(ids[0], axis).unwrap();
            to_loss(tape, m, 29 + axis as u64)
        });
        assert!(err < TOL64, "mean_axis {axis}: {err}");
    }
    let err = max_grad_error(&params, H64, &|tape, ids| {
        let sq = tape.mul(ids[0], ids[0]).unwrap();
        tape.mean_all(sq).unwrap()
    });
    assert!(err < TOL64, "mean_all: {err}");
}

#[test]
fn layer_norm_gradients() {
    let params = [
        tensor::<f64>(&[4, 6], 32),
        tensor::<f64>(&[6], 33),
        tensor::<f64>(&[6], 34),
    ];
    let err = max_grad_error(&params, H64, &|tape, ids| {
        let ln = tape.layer_norm(ids[0], ids[1], ids[2], 1e-6).unwrap();
        to_loss(tape, ln, 35)
    });
    assert!(err < TOL64, "layer_norm: {err}");
}

#[test]
fn softmax_gradients() {
    let params = [tensor::<f64>(&[3, 5], 36)];
    let err = max_grad_error(&params, H64, &|tape, ids| {
        let s = tape.softmax(ids[0]).unwrap();
        to_loss(tape, s, 37)
    });
    assert!(err < TOL64, "softmax: {err}");
}

#[test]
fn activation_gradients() {
    // Inputs pushed away from the relu kink.
    let mut t = tensor::<f64>(&[2, 8], 38);
    for v in t.data.iter_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    for (name, f) in [
        ("gelu", 0usize),
        ("sigmoid", 1),
        ("relu", 2),
        ("sqrt", 3),
    ] {
        let params = [t.clone()];
        let err = max_grad_error(&params, H64, &|tape, ids| {
            let y = match f {
                0 => tape.gelu(ids[0]).unwrap(),
                1 => tape.sigmoid(ids[0]).unwrap(),
                2 => tape.relu(ids[0]).unwrap(),
                _ => {
                    let sq = tape.mul(ids[0], ids[0]).unwrap();
                    tape.sqrt_eps(sq, 1e-4).unwrap()
                }
            };
            to_loss(tape, y, 39)
        });
        assert!(err < TOL64, "{name}: {err}");
    }
}

#[test]
fn mse_gradients_both_sides() {
    let params = [tensor::<f64>(&[3, 4], 40), tensor::<f64>(&[3, 4], 41)];
    let err = max_grad_error(&params, H64, &|tape, ids| tape.mse(ids[0], ids[1]).unwrap());
    assert!(err < TOL64, "mse: {err}");
}

#[test]
fn cross_entropy_gradients() {
    let params = [tensor::<f64>(&[4, 3], 42)];
    let err = max_grad_error(&params, H64, &|tape, ids| {
        tape.cross_entropy(ids[0], &[0, 2, 1, 2]).unwrap()
    });
    assert!(err < TOL64, "cross_entropy: {err}");
}

#[test]
fn mlp_gradients_match_finite_differences() {
    // A random 3-layer MLP: every parameter within 1e-6 relative error.
    let params = [
        tensor::<f64>(&[2, 6], 50),  // input
        tensor::<f64>(&[6, 5], 51),  // w1
        tensor::<f64>(&[5], 52),     // b1
        tensor::<f64>(&[5, 4], 53),  // w2
        tensor::<f64>(&[4], 54),     // b2
        tensor::<f64>(&[4, 3], 55),  // w3
        tensor::<f64>(&[3], 56),     // b3
    ];
    let err = max_grad_error(&params, H64, &|tape, ids| {
        let h1 = tape.matmul(ids[0], ids[1]).unwrap();
        let h1 = tape.add_broadcast(h1, ids[2]).unwrap();
        let h1 = tape.gelu(h1).unwrap();
        let h2 = tape.matmul(h1, ids[3]).unwrap();
        let h2 = tape.add_broadcast(h2, ids[4]).unwrap();
        let h2 = tape.sigmoid(h2).unwrap();
        let h3 = tape.matmul(h2, ids[5]).unwrap();
        let h3 = tape.add_broadcast(h3, ids[6]).unwrap();
        to_loss(tape, h3, 57)
    });
    assert!(err < TOL64, "mlp: {err}");
}

#[test]
fn f32_mode_stays_within_loose_tolerance() {
    fn max_grad_error_f32(params: &[TensorData<f32>]) -> f64 {
        max_grad_error(params, H32, &|tape: &mut Tape<f32>, ids| {
            let c = tape.matmul(ids[0], ids[1]).unwrap();
            let g = tape.gelu(c).unwrap();
            let target = tape.leaf(tensor::<f32>(&[3, 3], 99)).unwrap();
            tape.mse(g, target).unwrap()
        })
    }
    let params = [tensor::<f32>(&[3, 4], 60), tensor::<f32>(&[4, 3], 61)];
    let err = max_grad_error_f32(&params);
    assert!(err < TOL32, "f32 mode: {err}");
}
