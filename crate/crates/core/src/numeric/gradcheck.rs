//! Central finite-difference checks for every differentiable op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Axis, Graph, Var};
use super::nn::EncoderBlock;
use super::params::ParamSet;

/// Largest relative error between the analytic gradient of `build` and
/// central differences with step `h`, over every entry of every input.
pub(crate) fn max_rel_error(
    inputs: &[(Vec<f64>, usize, usize)],
    h: f64,
    build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var,
) -> f64 {
    let eval = |vals: &[Vec<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals
            .iter()
            .zip(inputs)
            .map(|(v, (_, r, c))| g.param(v.clone(), *r, *c).unwrap())
            .collect();
        let out = build(&mut g, &vars);
        g.value(out)[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(v, r, c)| g.param(v.clone(), *r, *c).unwrap())
        .collect();
    let out = build(&mut g, &vars);
    let grads = g.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    let base: Vec<Vec<f64>> = inputs.iter().map(|(v, _, _)| v.clone()).collect();
    for (k, &var) in vars.iter().enumerate() {
        let analytic = grads.get(var).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; base[k].len()]);
        for i in 0..base[k].len() {
            let mut plus = base.clone();
            plus[k][i] += h;
            let mut minus = base.clone();
            minus[k][i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> (Vec<f64>, usize, usize) {
    ((0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(), r, c)
}

/// Inputs bounded away from zero so ReLU kinks stay outside the stencil.
fn rand_mat_off_zero(rng: &mut ChaCha8Rng, r: usize, c: usize) -> (Vec<f64>, usize, usize) {
    (
        (0..r * c)
            .map(|_| {
                let v: f64 = rng.random_range(0.05..1.0);
                if rng.random_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect(),
        r,
        c,
    )
}

/// Projects an arbitrary-shaped output onto a fixed random direction.
fn probe(g: &mut Graph<f64>, x: Var, seed: u64) -> Var {
    let (r, c) = g.shape(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g
        .constant((0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(), r, c)
        .unwrap();
    let d = g.row_dot(x, w).unwrap();
    g.sum(d)
}

const H: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn check(name: &str, inputs: Vec<(Vec<f64>, usize, usize)>, build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var) {
    let err = max_rel_error(&inputs, H, build);
    assert!(err < TOL, "{name}: relative gradient error {err:e}");
}

#[test]
fn matmul_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    check("matmul", vec![rand_mat(&mut rng, 4, 4), rand_mat(&mut rng, 4, 4)], &|g, v| {
        let y = g.matmul(v[0], v[1], false).unwrap();
        probe(g, y, 9)
    });
    check("matmul_t", vec![rand_mat(&mut rng, 4, 3), rand_mat(&mut rng, 5, 3)], &|g, v| {
        let y = g.matmul(v[0], v[1], true).unwrap();
        probe(g, y, 9)
    });
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    check("add", vec![rand_mat(&mut rng, 4, 4), rand_mat(&mut rng, 4, 4)], &|g, v| {
        let y = g.add(v[0], v[1]).unwrap();
        probe(g, y, 3)
    });
    check("add_row", vec![rand_mat(&mut rng, 4, 4), rand_mat(&mut rng, 1, 4)], &|g, v| {
        let y = g.add_row(v[0], v[1]).unwrap();
        probe(g, y, 3)
    });
    check("add_tiled", vec![rand_mat(&mut rng, 4, 4), rand_mat(&mut rng, 2, 4)], &|g, v| {
        let y = g.add_tiled(v[0], v[1], 2).unwrap();
        probe(g, y, 3)
    });
    check("scale", vec![rand_mat(&mut rng, 4, 4)], &|g, v| {
        let y = g.scale(v[0], -1.7);
        probe(g, y, 3)
    });
    check("relu", vec![rand_mat_off_zero(&mut rng, 4, 4)], &|g, v| {
        let y = g.relu(v[0]);
        probe(g, y, 3)
    });
    check("concat_cols", vec![rand_mat(&mut rng, 4, 2), rand_mat(&mut rng, 4, 3)], &|g, v| {
        let y = g.concat(v[0], v[1], Axis::Cols).unwrap();
        probe(g, y, 3)
    });
    check("concat_rows", vec![rand_mat(&mut rng, 2, 4), rand_mat(&mut rng, 3, 4)], &|g, v| {
        let y = g.concat(v[0], v[1], Axis::Rows).unwrap();
        probe(g, y, 3)
    });
    check("gather", vec![rand_mat(&mut rng, 4, 4)], &|g, v| {
        let y = g.gather(v[0], &[3, 0, 3, 1]).unwrap();
        probe(g, y, 3)
    });
}

#[test]
fn normalization_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    check(
        "layer_norm",
        vec![rand_mat(&mut rng, 4, 4), rand_mat(&mut rng, 1, 4), rand_mat(&mut rng, 1, 4)],
        &|g, v| {
            let y = g.layer_norm(v[0], v[1], v[2]).unwrap();
            probe(g, y, 4)
        },
    );
    check("softmax_cols", vec![rand_mat(&mut rng, 4, 4)], &|g, v| {
        let y = g.softmax(v[0], Axis::Cols);
        probe(g, y, 4)
    });
    check("softmax_rows", vec![rand_mat(&mut rng, 4, 4)], &|g, v| {
        let y = g.softmax(v[0], Axis::Rows);
        probe(g, y, 4)
    });
    check("l2_normalize", vec![rand_mat(&mut rng, 4, 4)], &|g, v| {
        let y = g.l2_normalize(v[0]);
        probe(g, y, 4)
    });
    check("masked_mean", vec![rand_mat(&mut rng, 8, 4)], &|g, v| {
        let mask = [false, true, false, false, true, true, true, true];
        let y = g.masked_mean(v[0], &mask, 4).unwrap();
        probe(g, y, 4)
    });
}

#[test]
fn attention_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    check("attention", vec![rand_mat(&mut rng, 8, 12)], &|g, v| {
        let pad = [false, false, true, false, false, false, true, true];
        let y = g.attention(v[0], &pad, 2, 4, 2).unwrap();
        probe(g, y, 5)
    });
}

#[test]
fn loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    check("cross_entropy", vec![rand_mat(&mut rng, 4, 4)], &|g, v| {
        g.cross_entropy(v[0], &[0, 2, 1, 0]).unwrap()
    });
    check("mse", vec![rand_mat(&mut rng, 4, 1)], &|g, v| g.mse(v[0], &[0.1, -0.3, 0.5, 2.0]).unwrap());
    check("row_dot", vec![rand_mat(&mut rng, 4, 4), rand_mat(&mut rng, 4, 4)], &|g, v| {
        let y = g.row_dot(v[0], v[1]).unwrap();
        probe(g, y, 6)
    });
    check("row_distance", vec![rand_mat(&mut rng, 4, 4), rand_mat(&mut rng, 4, 4)], &|g, v| {
        let y = g.row_distance(v[0], v[1]).unwrap();
        probe(g, y, 6)
    });
}

#[test]
fn composite_block_gradients() {
    // A full pre-norm block followed by pooling and normalization.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut set: ParamSet<f64> = ParamSet::new();
    let block = EncoderBlock::new(&mut set, &mut rng, "blk", 4, 2, 8);
    let mut inputs: Vec<(Vec<f64>, usize, usize)> = set
        .params
        .iter()
        .map(|p| {
            let (r, c) = p.matrix_shape();
            let v = p.value.iter().map(|&x| x + rng.random_range(-0.1..0.1)).collect();
            (v, r, c)
        })
        .collect();
    inputs.push(rand_mat(&mut rng, 6, 4));
    let n = set.len();
    let err = max_rel_error(&inputs, 1e-5, &move |g, v| {
        let pad = [false, false, false, false, true, true];
        let y = block.forward(g, &v[..n], v[n], &pad, 2, 3).unwrap();
        let pooled = g.masked_mean(y, &pad, 3).unwrap();
        let z = g.l2_normalize(pooled);
        probe(g, z, 7)
    });
    assert!(err < TOL, "composite: {err:e}");
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.constant(vec![0.0, 0.0], 1, 2).unwrap();
    let y = g.softmax(x, Axis::Cols);
    assert_eq!(g.value(y), &[0.5, 0.5]);
}

#[test]
fn masked_mean_single_survivor() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.constant(vec![1.0, 2.0, 30.0, 40.0], 2, 2).unwrap();
    let y = g.masked_mean(x, &[false, true], 2).unwrap();
    assert_eq!(g.value(y), &[1.0, 2.0]);
}

#[test]
fn l2_normalize_gives_unit_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut g: Graph<f32> = Graph::new();
    let x = g
        .constant((0..40).map(|_| rng.random_range(-3.0..3.0)).collect(), 10, 4)
        .unwrap();
    let y = g.l2_normalize(x);
    for row in g.value(y).chunks(4) {
        let n: f32 = row.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
}

#[test]
fn shape_errors_name_the_op() {
    let mut g: Graph<f32> = Graph::new();
    let a = g.constant(vec![0.0; 6], 2, 3).unwrap();
    let b = g.constant(vec![0.0; 6], 2, 3).unwrap();
    let err = g.matmul(a, b, false).unwrap_err().to_string();
    assert!(err.contains("matmul") && err.contains("[2x3]"), "{err}");
}
