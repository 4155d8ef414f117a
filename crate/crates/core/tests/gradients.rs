//! Finite-difference checks of every differentiable op and of the full
//! training loss. Central differences, eps = 1e-5, relative error <= 1e-4.

mod common;

use acre::model::Structure;
use acre::tensor::{Padding, Tape, Tensor, Var};
use common::{end_to_end_grad_errors, fd_check, random_tensor, rng, FD_TOL as TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check(name: &str, inputs: &[Tensor], op: impl Fn(&mut Tape<'_>, &[Var]) -> Var) {
    let err = fd_check(inputs, op);
    assert!(err <= TOL, "{name}: rel err {err:e}");
}

/// Values bounded away from zero so relu kinks are not straddled.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.1..2.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[test]
fn closed_form_gradients() {
    let x = random_tensor(&mut rng(0), &[3, 2]);
    let mut tape = Tape::new();
    let v = tape.input(x.clone().with_grad());
    let loss = tape.sum(v);
    tape.backward(loss).unwrap();
    assert!(tape.grad(v).unwrap().iter().all(|&g| g == 1.0));

    let mut tape = Tape::new();
    let w = tape.input(Tensor::zeros(&[2, 1]).with_grad());
    let xv = tape.input(Tensor::new(vec![1, 2], vec![0.7, -1.3]).unwrap());
    let z = tape.matmul(xv, w, false).unwrap();
    let p = tape.sigmoid(z);
    let loss = tape.sum(p);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(w).unwrap(), &[0.25 * 0.7, 0.25 * -1.3]);
}

#[test]
fn elementwise_ops() {
    let mut r = rng(1);
    let a = random_tensor(&mut r, &[2, 3, 4]);
    let b = random_tensor(&mut r, &[2, 3, 4]);
    let row = random_tensor(&mut r, &[4]);
    check("add", &[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]).unwrap());
    check("add broadcast", &[a.clone(), row], |t, v| t.add(v[0], v[1]).unwrap());
    check("mul", &[a.clone(), b], |t, v| t.mul(v[0], v[1]).unwrap());
    check("scale", std::slice::from_ref(&a), |t, v| t.scale(v[0], -1.7));
    check("sigmoid", &[a], |t, v| t.sigmoid(v[0]));
    check("relu", &[off_zero(&mut r, &[3, 5])], |t, v| t.relu(v[0]));
}

#[test]
fn reductions_and_reshapes() {
    let mut r = rng(2);
    let a = random_tensor(&mut r, &[2, 3, 4]);
    check("sum", std::slice::from_ref(&a), |t, v| t.sum(v[0]));
    check("mean", std::slice::from_ref(&a), |t, v| t.mean(v[0]));
    check("reshape", std::slice::from_ref(&a), |t, v| t.reshape(v[0], &[4, 6]).unwrap());
    check("flatten", std::slice::from_ref(&a), |t, v| t.flatten(v[0]).unwrap());
    check("flatten_batch", std::slice::from_ref(&a), |t, v| t.flatten_batch(v[0]).unwrap());
    let b = random_tensor(&mut r, &[2, 2, 4]);
    check("concat axis 1", &[a.clone(), b], |t, v| t.concat(&[v[0], v[1]], 1).unwrap());
    let c = random_tensor(&mut r, &[1, 3, 4]);
    check("concat axis 0", &[a, c], |t, v| t.concat(&[v[0], v[1]], 0).unwrap());
}

#[test]
fn linear_algebra() {
    let mut r = rng(3);
    let x = random_tensor(&mut r, &[3, 4]);
    let w = random_tensor(&mut r, &[4, 5]);
    let wt = random_tensor(&mut r, &[5, 4]);
    let bias = random_tensor(&mut r, &[5]);
    check("matmul", &[x.clone(), w.clone()], |t, v| t.matmul(v[0], v[1], false).unwrap());
    check("matmul transposed", &[x.clone(), wt], |t, v| t.matmul(v[0], v[1], true).unwrap());
    check("affine", &[x, w, bias], |t, v| t.affine(v[0], v[1], v[2]).unwrap());
    let table = random_tensor(&mut r, &[6, 3]);
    check("embedding lookup", &[table], |t, v| t.embedding_lookup(v[0], &[4, 1, 4, 0]).unwrap());
}

#[test]
fn convolutions() {
    let mut r = rng(4);
    for (rate, padding) in [
        (1, Padding::SameZero),
        (2, Padding::SameZero),
        (3, Padding::SameZero),
        (1, Padding::Valid),
        (2, Padding::Valid),
    ] {
        let x = random_tensor(&mut r, &[2, 2, 7, 8]);
        let f = random_tensor(&mut r, &[3, 2, 3, 3]);
        let b = random_tensor(&mut r, &[3]);
        check(&format!("dilated rate {rate} {padding:?}"), &[x, f, b], |t, v| {
            t.conv2d_dilated(v[0], v[1], v[2], rate, padding).unwrap()
        });
    }
    let x = random_tensor(&mut r, &[2, 5, 6]);
    let f = random_tensor(&mut r, &[4, 2, 3, 3]);
    let b = random_tensor(&mut r, &[4]);
    check("standard unbatched", &[x, f, b], |t, v| t.conv2d(v[0], v[1], v[2], Padding::SameZero).unwrap());
    let x = random_tensor(&mut r, &[3, 4, 2, 3]);
    let f = random_tensor(&mut r, &[1, 4, 1, 1]);
    let b = random_tensor(&mut r, &[1]);
    check("1x1", &[x, f, b], |t, v| t.conv2d(v[0], v[1], v[2], Padding::Valid).unwrap());
}

#[test]
fn dropout_with_fixed_mask() {
    let x = random_tensor(&mut rng(5), &[4, 6]);
    check("dropout", &[x], |t, v| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(17);
        t.dropout(v[0], 0.4, true, &mut mask_rng).unwrap()
    });
}

#[test]
fn batch_norm_both_modes() {
    let mut r = rng(6);
    let x = random_tensor(&mut r, &[5, 3, 2, 2]);
    let gamma = random_tensor(&mut r, &[3]);
    let beta = random_tensor(&mut r, &[3]);
    let mean = vec![0.1, -0.2, 0.3];
    let var = vec![0.5, 1.5, 2.0];
    for train in [true, false] {
        check(&format!("batch norm train={train}"), &[x.clone(), gamma.clone(), beta.clone()], |t, v| {
            t.batch_norm(v[0], v[1], v[2], (&mean, &var), 1e-5, train).unwrap()
        });
    }
    let h = random_tensor(&mut r, &[6, 4]);
    let g = random_tensor(&mut r, &[4]);
    let b = random_tensor(&mut r, &[4]);
    let zeros = vec![0.0; 4];
    let ones = vec![1.0; 4];
    check("batch norm 2d", &[h, g, b], |t, v| t.batch_norm(v[0], v[1], v[2], (&zeros, &ones), 1e-5, true).unwrap());
}

#[test]
fn listwise_bce() {
    let mut r = rng(7);
    let z = random_tensor(&mut r, &[3, 5]);
    let labels: Vec<f64> = (0..15).map(|i| if i % 4 == 0 { 0.92 } else { 0.02 }).collect();
    check("bce", &[z], |t, v| {
        let p = t.sigmoid(v[0]);
        t.bce_listwise(p, &labels).unwrap()
    });
}

#[test]
fn end_to_end_loss_on_toy_graph() {
    for (structure, bn) in [
        (Structure::Serial, false),
        (Structure::Parallel, false),
        (Structure::Serial, true),
        (Structure::Parallel, true),
    ] {
        for (name, err) in end_to_end_grad_errors(structure, bn) {
            assert!(err <= TOL, "{structure:?} bn={bn} {name}: rel err {err:e}");
        }
    }
}
