//! Central finite differences, used to validate analytic gradients. These
//! helpers only ever evaluate the forward function.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};

/// Probe step for central differences.
pub const EPS: f64 = 1e-5;

/// Gradients whose magnitude is below this floor are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// Central-difference estimates of `∂f/∂x[i]` for each `i` in `coords`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64, coords: &[usize]) -> Vec<f64> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = f(&probe);
            probe[i] = orig - eps;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Largest elementwise relative error between two gradient estimates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// A leaf input: shape and values.
pub type Input = (Vec<usize>, Vec<f64>);
pub type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

pub fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn forward(inputs: &[Input], cotangent: &[f64], build: &Build, requires_grad: bool) -> (Tape<f64>, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(s, d)| tape.leaf(s.clone(), d.clone(), requires_grad).unwrap())
        .collect();
    let out = build(&mut tape, &vars).expect("graph builds");
    let r = tape.constant(tape.shape(out).to_vec(), cotangent.to_vec()).unwrap();
    let weighted = tape.mul(out, r).unwrap();
    let loss = tape.sum(weighted).unwrap();
    (tape, vars, loss)
}

/// Checks `build` at one random point; returns the worst relative error.
pub fn check_once(inputs: Vec<Input>, rng: &mut ChaCha8Rng, build: &Build) -> f64 {
    let out_len = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|(s, d)| tape.leaf(s.clone(), d.clone(), false).unwrap())
            .collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.value(out).len()
    };
    let cotangent = randn(rng, out_len);
    let (mut tape, vars, loss) = forward(&inputs, &cotangent, build, true);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].1.len()]);
        let coords: Vec<usize> = (0..inputs[i].1.len()).collect();
        let numeric = numeric_gradient(
            |x| {
                let mut probe = inputs.clone();
                probe[i].1 = x.to_vec();
                let (tape, _, loss) = forward(&probe, &cotangent, build, false);
                tape.item(loss)
            },
            &inputs[i].1,
            EPS,
            &coords,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    worst
}

/// Worst relative error of `build` over `seeds` random draws of its inputs.
pub fn check_graph(seeds: u64, make: impl Fn(&mut ChaCha8Rng) -> Vec<Input>, build: &Build) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = make(&mut rng);
        worst = worst.max(check_once(inputs, &mut rng, build));
    }
    worst
}

pub fn mat(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Input {
    (vec![n, m], randn(rng, n * m))
}

/// Values whose pairwise gaps are far larger than the probe step, so the
/// argmax never flips under perturbation.
pub fn separated(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Input {
    let mut ladder: Vec<f64> = (0..n * m).map(|i| i as f64 * 0.1).collect();
    for i in (1..ladder.len()).rev() {
        ladder.swap(i, rng.random_range(0..=i));
    }
    let data = ladder.into_iter().map(|v| v + rng.random_range(-0.01..0.01)).collect();
    (vec![n, m], data)
}

/// Every primitive (and one composed graph) checked over `seeds` draws.
/// Returns each case's worst relative error.
pub fn primitive_suite(seeds: u64) -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut run = |name: &'static str, make: &dyn Fn(&mut ChaCha8Rng) -> Vec<Input>, build: &Build| {
        out.push((name, check_graph(seeds, make, build)));
    };
    run("matmul", &|r| vec![mat(r, 3, 4), mat(r, 4, 2)], &|t, v| t.matmul(v[0], v[1]));
    run("transpose", &|r| vec![mat(r, 3, 5)], &|t, v| t.transpose(v[0]));
    run("add", &|r| vec![mat(r, 2, 3), mat(r, 2, 3)], &|t, v| t.add(v[0], v[1]));
    run("sub", &|r| vec![mat(r, 2, 3), mat(r, 2, 3)], &|t, v| t.sub(v[0], v[1]));
    run("mul", &|r| vec![mat(r, 2, 3), mat(r, 2, 3)], &|t, v| t.mul(v[0], v[1]));
    run("mul_self", &|r| vec![mat(r, 2, 3)], &|t, v| t.mul(v[0], v[0]));
    run("scale", &|r| vec![mat(r, 2, 3)], &|t, v| t.scale(v[0], -1.7));
    run("add_row", &|r| vec![mat(r, 4, 3), (vec![3], randn(r, 3))], &|t, v| t.add_row(v[0], v[1]));
    run("softmax", &|r| vec![mat(r, 3, 5)], &|t, v| t.softmax(v[0]));
    run("log_softmax", &|r| vec![mat(r, 3, 5)], &|t, v| t.log_softmax(v[0]));
    run(
        "layer_norm",
        &|r| {
            let gain = (0..6).map(|_| r.random_range(0.5..1.5)).collect();
            vec![mat(r, 3, 6), (vec![6], gain), (vec![6], randn(r, 6))]
        },
        &|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5),
    );
    run(
        "gelu",
        &|r| vec![(vec![12], randn(r, 12).iter().map(|x| 3.0 * x).collect())],
        &|t, v| t.gelu(v[0]),
    );
    run("gather_rows", &|r| vec![mat(r, 6, 4)], &|t, v| t.gather_rows(v[0], &[3, 0, 3, 5, 1]));
    run("concat_rows", &|r| vec![mat(r, 2, 3), mat(r, 1, 3), mat(r, 3, 3)], &|t, v| t.concat(v, 0));
    run("concat_cols", &|r| vec![mat(r, 2, 3), mat(r, 2, 1)], &|t, v| t.concat(v, 1));
    run("slice_rows", &|r| vec![mat(r, 5, 3)], &|t, v| t.slice(v[0], 0, 1, 4));
    run("slice_cols", &|r| vec![mat(r, 3, 5)], &|t, v| t.slice(v[0], 1, 2, 5));
    run("mean_axis0", &|r| vec![mat(r, 4, 3)], &|t, v| t.mean_axis(v[0], 0));
    run("mean_axis1", &|r| vec![mat(r, 4, 3)], &|t, v| t.mean_axis(v[0], 1));
    run("sum", &|r| vec![mat(r, 4, 3)], &|t, v| t.sum(v[0]));
    run("max_axis0", &|r| vec![separated(r, 4, 3)], &|t, v| t.max_axis(v[0], 0));
    run("max_axis1", &|r| vec![separated(r, 4, 3)], &|t, v| t.max_axis(v[0], 1));
    run(
        "max_3d",
        &|r| {
            let (_, d) = separated(r, 2, 12);
            vec![(vec![2, 3, 4], d)]
        },
        &|t, v| t.max_axis(v[0], 1),
    );
    run("reshape", &|r| vec![mat(r, 2, 6)], &|t, v| {
        let x = t.reshape(v[0], vec![3, 4])?;
        t.softmax(x)
    });
    // A small attention-like block exercising fan-out and chained ops.
    run(
        "composed",
        &|r| vec![mat(r, 4, 3), mat(r, 3, 3), (vec![3], randn(r, 3))],
        &|t, v| {
            let h = t.matmul(v[0], v[1])?;
            let h = t.add_row(h, v[2])?;
            let ht = t.transpose(h)?;
            let s = t.matmul(h, ht)?;
            let p = t.softmax(s)?;
            let o = t.matmul(p, v[0])?;
            let o = t.gelu(o)?;
            t.max_axis(o, 1)
        },
    );
    out
}
