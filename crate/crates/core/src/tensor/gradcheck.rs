//! Central finite-difference checking of tape gradients.
//!
//! The checker never looks at backward code: it re-evaluates the forward
//! closure at perturbed inputs, so it stays an independent oracle for the
//! analytic gradients.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::{Tape, TensorId};

/// Relative error with a small floor so that near-zero pairs compare equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Worst relative error between analytic tape gradients and central finite
/// differences for a scalar-valued graph over the given inputs.
///
/// `build` receives a fresh tape plus the input tensors and must return a
/// scalar output node.
pub fn check<F>(inputs: &[(Vec<usize>, Vec<f64>)], build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[TensorId]) -> TensorId,
{
    let eval = |values: &[Vec<f64>]| -> f64 {
        let mut tape = Tape::<f64>::new();
        let ids: Vec<TensorId> = inputs
            .iter()
            .zip(values)
            .map(|((shape, _), v)| tape.constant(shape, v.clone()))
            .collect();
        let out = build(&mut tape, &ids);
        tape.value(out)
    };

    // Analytic gradients.
    let mut tape = Tape::<f64>::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|(shape, data)| tape.constant(shape, data.clone()))
        .collect();
    let out = build(&mut tape, &ids);
    let grads = tape.backward(out);

    let mut worst = 0.0f64;
    let mut values: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| d.clone()).collect();
    for (which, (_, data)) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = grads
            .get(ids[which])
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; data.len()]);
        for i in 0..data.len() {
            let x = data[i];
            let h = 1e-6 * x.abs().max(1.0);
            values[which][i] = x + h;
            let fp = eval(&values);
            values[which][i] = x - h;
            let fm = eval(&values);
            values[which][i] = x;
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max(rel_err(analytic[i], fd));
        }
    }
    worst
}

/// One named check from the primitive suite.
pub struct OpCheck {
    pub name: &'static str,
    pub worst_rel_err: f64,
}

fn rand_vec(rng: &mut StdRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Keeps values away from zero so kinked activations stay locally smooth.
fn rand_vec_off_zero(rng: &mut StdRng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.random_range(0.2..1.5);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// Finite-difference suite over every differentiable primitive.
///
/// Each entry contracts a random projection of the op output to a scalar so
/// all output elements influence the check.
pub fn op_suite(seed: u64) -> Vec<OpCheck> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let mut push = |name: &'static str, err: f64| checks.push(OpCheck { name, worst_rel_err: err });

    {
        let a = (vec![3, 4], rand_vec(&mut rng, 12, -1.0, 1.0));
        let b = (vec![4, 2], rand_vec(&mut rng, 8, -1.0, 1.0));
        let w = rand_vec(&mut rng, 6, -1.0, 1.0);
        push(
            "matmul",
            check(&[a, b], move |t, ids| {
                let y = t.matmul(ids[0], ids[1]);
                let wc = t.constant(&[3, 2], w.clone());
                let p = t.mul(y, wc);
                t.sum_all(p)
            }),
        );
    }
    {
        let a = (vec![3, 5], rand_vec(&mut rng, 15, -2.0, 2.0));
        let w = rand_vec(&mut rng, 15, -1.0, 1.0);
        push(
            "softmax",
            check(&[a], move |t, ids| {
                let y = t.softmax(ids[0], 1);
                let wc = t.constant(&[3, 5], w.clone());
                let p = t.mul(y, wc);
                t.sum_all(p)
            }),
        );
    }
    {
        let a = (vec![7], rand_vec(&mut rng, 7, 0.05, 0.95));
        let b = (vec![7], rand_vec(&mut rng, 7, 0.0, 1.0));
        push("bce", check(&[a, b], |t, ids| t.bce(ids[0], ids[1])));
    }
    {
        let a = (vec![7], rand_vec(&mut rng, 7, 0.05, 0.95));
        let b = (vec![7], rand_vec(&mut rng, 7, 0.0, 1.0));
        let mask = vec![true, false, true, true, false, true, false];
        push(
            "bce_masked",
            check(&[a, b], move |t, ids| t.bce_masked(ids[0], ids[1], &mask)),
        );
    }
    {
        let res = (vec![4, 6], rand_vec(&mut rng, 24, -1.0, 1.0));
        let br = (vec![4, 6], rand_vec(&mut rng, 24, -1.0, 1.0));
        let gamma = (vec![6], rand_vec(&mut rng, 6, 0.5, 1.5));
        let beta = (vec![6], rand_vec(&mut rng, 6, -0.5, 0.5));
        let w = rand_vec(&mut rng, 24, -1.0, 1.0);
        push(
            "add_norm",
            check(&[res, br, gamma, beta], move |t, ids| {
                let y = t.add_norm(ids[0], ids[1], ids[2], ids[3]);
                let wc = t.constant(&[4, 6], w.clone());
                let p = t.mul(y, wc);
                t.sum_all(p)
            }),
        );
    }
    {
        let x = (vec![4, 4, 1], rand_vec(&mut rng, 16, -1.0, 1.0));
        let k = (vec![3, 3, 1, 2], rand_vec(&mut rng, 18, -0.6, 0.6));
        let b = (vec![2], rand_vec(&mut rng, 2, -0.2, 0.2));
        let w = rand_vec(&mut rng, 32, -1.0, 1.0);
        push(
            "conv2d_3x3",
            check(&[x, k, b], move |t, ids| {
                let y = t.conv2d(ids[0], ids[1], Some(ids[2]), 1);
                let wc = t.constant(&[4, 4, 2], w.clone());
                let p = t.mul(y, wc);
                t.sum_all(p)
            }),
        );
    }
    {
        let x = (vec![4, 4, 2], rand_vec(&mut rng, 32, -1.0, 1.0));
        let k = (vec![3, 3, 2, 3], rand_vec(&mut rng, 54, -0.5, 0.5));
        let w = rand_vec(&mut rng, 12, -1.0, 1.0);
        push(
            "conv2d_3x3_stride2",
            check(&[x, k], move |t, ids| {
                let y = t.conv2d(ids[0], ids[1], None, 2);
                let wc = t.constant(&[2, 2, 3], w.clone());
                let p = t.mul(y, wc);
                t.sum_all(p)
            }),
        );
    }
    {
        let x = (vec![3, 3, 3], rand_vec(&mut rng, 27, -1.0, 1.0));
        let k = (vec![1, 1, 3, 2], rand_vec(&mut rng, 6, -0.8, 0.8));
        let w = rand_vec(&mut rng, 18, -1.0, 1.0);
        push(
            "conv2d_1x1",
            check(&[x, k], move |t, ids| {
                let y = t.conv2d(ids[0], ids[1], None, 1);
                let wc = t.constant(&[3, 3, 2], w.clone());
                let p = t.mul(y, wc);
                t.sum_all(p)
            }),
        );
    }
    {
        let x = (vec![10], rand_vec_off_zero(&mut rng, 10));
        let w = rand_vec(&mut rng, 10, -1.0, 1.0);
        push(
            "relu",
            check(&[x], move |t, ids| {
                let y = t.relu(ids[0]);
                let wc = t.constant(&[10], w.clone());
                let p = t.mul(y, wc);
                t.sum_all(p)
            }),
        );
    }
    {
        let x = (vec![10], rand_vec(&mut rng, 10, -2.0, 2.0));
        let w = rand_vec(&mut rng, 10, -1.0, 1.0);
        push(
            "sigmoid",
            check(&[x], move |t, ids| {
                let y = t.sigmoid(ids[0]);
                let wc = t.constant(&[10], w.clone());
                let p = t.mul(y, wc);
                t.sum_all(p)
            }),
        );
    }
    {
        let x = (vec![10], rand_vec(&mut rng, 10, -2.0, 2.0));
        let w = rand_vec(&mut rng, 10, -1.0, 1.0);
        push(
            "tanh",
            check(&[x], move |t, ids| {
                let y = t.tanh(ids[0]);
                let wc = t.constant(&[10], w.clone());
                let p = t.mul(y, wc);
                t.sum_all(p)
            }),
        );
    }
    {
        let x = (vec![2, 3, 2], rand_vec(&mut rng, 12, -1.0, 1.0));
        let w = rand_vec(&mut rng, 48, -1.0, 1.0);
        push(
            "upsample2x",
            check(&[x], move |t, ids| {
                let y = t.upsample2x(ids[0]);
                let wc = t.constant(&[4, 6, 2], w.clone());
                let p = t.mul(y, wc);
                t.sum_all(p)
            }),
        );
    }
    {
        let a = (vec![3, 2, 1], rand_vec(&mut rng, 6, -1.0, 1.0));
        let b = (vec![3, 2, 2], rand_vec(&mut rng, 12, -1.0, 1.0));
        let w = rand_vec(&mut rng, 18, -1.0, 1.0);
        push(
            "concat_channels",
            check(&[a, b], move |t, ids| {
                let y = t.concat_channels(ids[0], ids[1]);
                let wc = t.constant(&[3, 2, 3], w.clone());
                let p = t.mul(y, wc);
                t.sum_all(p)
            }),
        );
    }
    {
        // Points chosen away from integer coordinates, where bilinear
        // interpolation is differentiable.
        let map = (vec![4, 5, 3], rand_vec(&mut rng, 60, -1.0, 1.0));
        let pts = (
            vec![4, 2],
            vec![1.3, 2.6, 0.4, 0.7, 3.6, 1.2, -0.4, 2.3],
        );
        let w = rand_vec(&mut rng, 12, -1.0, 1.0);
        push(
            "bilinear_sample",
            check(&[map, pts], move |t, ids| {
                let y = t.bilinear_sample(ids[0], ids[1]);
                let wc = t.constant(&[4, 3], w.clone());
                let p = t.mul(y, wc);
                t.sum_all(p)
            }),
        );
    }
    {
        let a = (vec![4, 3], rand_vec(&mut rng, 12, -1.0, 1.0));
        let bias = (vec![3], rand_vec(&mut rng, 3, -1.0, 1.0));
        let rows = (vec![4], rand_vec(&mut rng, 4, -1.0, 1.0));
        let w = rand_vec(&mut rng, 12, -1.0, 1.0);
        push(
            "add_bias_scale_rows",
            check(&[a, bias, rows], move |t, ids| {
                let y = t.add_bias(ids[0], ids[1]);
                let z = t.scale_rows(y, ids[2]);
                let wc = t.constant(&[4, 3], w.clone());
                let p = t.mul(z, wc);
                t.sum_all(p)
            }),
        );
    }
    {
        let a = (vec![6, 3], rand_vec(&mut rng, 18, -1.0, 1.0));
        let w = rand_vec(&mut rng, 6, -1.0, 1.0);
        push(
            "sum_group_rows",
            check(&[a], move |t, ids| {
                let y = t.sum_group_rows(ids[0], 3);
                let wc = t.constant(&[2, 3], w.clone());
                let p = t.mul(y, wc);
                t.sum_all(p)
            }),
        );
    }
    {
        let a = (vec![4, 4], rand_vec(&mut rng, 16, -1.0, 1.0));
        let w = rand_vec(&mut rng, 12, -1.0, 1.0);
        push(
            "slice_gather_transpose",
            check(&[a], move |t, ids| {
                let s = t.slice_cols(ids[0], 1, 3);
                let g = t.gather_rows(s, &[0, 2, 2, 3]);
                let tr = t.transpose(g);
                let wc = t.constant(&[3, 4], w.clone());
                let p = t.mul(tr, wc);
                t.sum_all(p)
            }),
        );
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitive_suite_passes_tight_tolerance() {
        for c in op_suite(7) {
            assert!(
                c.worst_rel_err < 1e-6,
                "{}: worst rel err {:.3e}",
                c.name,
                c.worst_rel_err
            );
        }
    }

    #[test]
    fn matmul_grad_matches_row_sums() {
        // d sum(A @ B) / dA_ij = sum_j B_jk over k, i.e. row sums of B broadcast.
        let a = (vec![2, 3], vec![0.3, -0.7, 1.1, 0.2, 0.5, -0.4]);
        let b_data = vec![0.9, -0.2, 0.4, 0.6, -1.0, 0.3];
        let b = (vec![3, 2], b_data.clone());
        let worst = check(&[a, b], |t, ids| {
            let y = t.matmul(ids[0], ids[1]);
            t.sum_all(y)
        });
        assert!(worst < 1e-6, "worst rel err {worst:.3e}");

        let mut t = Tape::<f64>::new();
        let a = t.constant(&[2, 3], vec![0.3, -0.7, 1.1, 0.2, 0.5, -0.4]);
        let b = t.constant(&[3, 2], b_data);
        let y = t.matmul(a, b);
        let s = t.sum_all(y);
        let g = t.backward(s);
        let ga = g.get(a).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let row_sum: f64 = t.data(b)[j * 2..(j + 1) * 2].iter().sum();
                assert!((ga[i * 3 + j] - row_sum).abs() < 1e-12);
            }
        }
    }
}
