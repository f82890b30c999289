//! Finite-difference checks of the losses and the full model, shared by the
//! gradient tests and the acceptance run.

use mlr_autodiff::gradcheck::{check_graph, mat, max_relative_error, numeric_gradient, Input, EPS};
use mlr_autodiff::{AutodiffError, Tape, Var};
use mlr_core::encoder::{EncoderConfig, LayerSet, PoolingMode, RepresentationSpec, Strategy, TapedReps};
use mlr_core::scoring::taped::batch_loss;
use mlr_core::scoring::{positive_column, LossConfig, Pooling};
use mlr_core::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const B: usize = 2;
const D: usize = 3;

fn lift(e: mlr_core::MlrError) -> AutodiffError {
    AutodiffError::InvalidArgument {
        op: "loss",
        msg: e.to_string(),
    }
}

/// Which part of the batch loss a case reads out.
#[derive(Clone, Copy)]
enum Readout {
    Total,
    Reg,
}

fn loss_case(seeds: u64, m: usize, pooling: Pooling, lambda: f64, readout: Readout) -> f64 {
    let nd = 2 * B;
    let with_alpha = pooling == Pooling::ScalarMix;
    let make = move |r: &mut ChaCha8Rng| {
        let mut v: Vec<Input> = vec![mat(r, B, D), mat(r, nd * m, D)];
        if with_alpha {
            v.push((vec![m], (0..m).map(|_| r.random_range(-1.0..1.0)).collect()));
        }
        v
    };
    let build = move |t: &mut Tape<f64>, v: &[Var]| {
        let docs = TapedReps {
            vectors: v[1],
            docs: nd,
            m,
        };
        let positives: Vec<usize> = (0..B).map(positive_column).collect();
        let cfg = LossConfig { lambda, pooling };
        let out = batch_loss(t, v[0], &docs, &positives, m - 1, &cfg, v.get(2).copied()).map_err(lift)?;
        Ok(match readout {
            Readout::Total => out.loss,
            Readout::Reg => out.reg.expect("λ > 0"),
        })
    };
    check_graph(seeds, make, &build)
}

/// Every loss form on random query and document vectors.
pub fn loss_suite(seeds: u64) -> Vec<(&'static str, f64)> {
    vec![
        ("contrastive max-sim", loss_case(seeds, 3, Pooling::None, 0.0, Readout::Total)),
        ("self-contrastive", loss_case(seeds, 3, Pooling::SelfContrastive, 0.0, Readout::Total)),
        ("reg", loss_case(seeds, 3, Pooling::SelfContrastive, 1.0, Readout::Reg)),
        ("total λ=0.7", loss_case(seeds, 3, Pooling::SelfContrastive, 0.7, Readout::Total)),
        ("average pooling", loss_case(seeds, 3, Pooling::Average, 0.0, Readout::Total)),
        ("scalar mix", loss_case(seeds, 3, Pooling::ScalarMix, 0.0, Readout::Total)),
    ]
}

pub fn tiny_config(pooling: PoolingMode) -> EncoderConfig {
    EncoderConfig {
        vocab_size: 12,
        dim: 8,
        layers: 2,
        heads: 2,
        ff_dim: 12,
        max_len: 6,
        pooling,
        ..EncoderConfig::default()
    }
}

/// A model with parameters large enough that every path carries signal.
fn random_model(spec: RepresentationSpec, pooling: Pooling, enc: EncoderConfig, rng: &mut ChaCha8Rng) -> Model<f64> {
    let mut model = Model::<f64>::init(enc, spec, pooling, rng.random()).unwrap();
    for (name, t) in model.named_params_mut() {
        let gain = name.ends_with(".gain");
        for v in t.data_mut() {
            *v = if gain {
                rng.random_range(0.5..1.5)
            } else {
                rng.random_range(-0.3..0.3)
            };
        }
    }
    model
}

fn random_tokens(rng: &mut ChaCha8Rng, n: usize, cfg: &EncoderConfig) -> Vec<Vec<u32>> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..cfg.max_len);
            (0..len).map(|_| rng.random_range(2..cfg.vocab_size as u32)).collect()
        })
        .collect()
}

/// Compares the analytic gradient of every parameter tensor (two random
/// coordinates each) against central differences of `f`.
fn check_params(
    model: &mut Model<f64>,
    rng: &mut ChaCha8Rng,
    f: &dyn Fn(&Model<f64>, &mut Tape<f64>, &mlr_core::model::BoundModel) -> Var,
) -> f64 {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape).unwrap();
    let loss = f(model, &mut tape, &bound);
    let grads = tape.backward(loss).unwrap();
    model.absorb(&bound, &grads).unwrap();
    let snapshot = model.clone();
    let mut worst: f64 = 0.0;
    let names: Vec<String> = snapshot.named_params().into_iter().map(|(n, _)| n).collect();
    for name in names {
        let tensor = snapshot.named_params().into_iter().find(|(n, _)| *n == name).unwrap().1;
        let x = tensor.data().to_vec();
        let analytic_all = tensor.grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; x.len()]);
        let coords: Vec<usize> = (0..2).map(|_| rng.random_range(0..x.len())).collect();
        let numeric = numeric_gradient(
            |probe| {
                let mut m = snapshot.clone();
                let (_, t) = m.named_params_mut().find(|(n, _)| *n == name).unwrap();
                t.data_mut().copy_from_slice(probe);
                let mut tape = Tape::new();
                let bound = m.bind(&mut tape).unwrap();
                let out = f(&m, &mut tape, &bound);
                tape.item(out)
            },
            &x,
            EPS,
            &coords,
        );
        let analytic: Vec<f64> = coords.iter().map(|&i| analytic_all[i]).collect();
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    worst
}

/// A random linear readout of the last layer's CLS vectors, differentiated with
/// respect to every encoder parameter.
pub fn encoder_readout(seeds: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let enc = tiny_config(PoolingMode::Cls);
        let spec = RepresentationSpec {
            strategy: Strategy::Dual,
            layers: LayerSet::last_only(enc.layers),
            mebert_m: 1,
            pooling: PoolingMode::Cls,
        };
        let mut model = random_model(spec, Pooling::None, enc.clone(), &mut rng);
        let toks = random_tokens(&mut rng, 2, &enc);
        let weights: Vec<f64> = (0..toks.len() * enc.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |m: &Model<f64>, tape: &mut Tape<f64>, b: &mlr_core::model::BoundModel| {
            let h = m.query.forward(tape, &b.query, &toks).unwrap();
            let starts: Vec<usize> = h.spans.iter().map(|s| s.start).collect();
            let last = tape.gather_rows(*h.layers.last().unwrap(), &starts).unwrap();
            let w = tape.constant(vec![toks.len(), enc.dim], weights.clone()).unwrap();
            let p = tape.mul(last, w).unwrap();
            tape.sum(p).unwrap()
        };
        worst = worst.max(check_params(&mut model, &mut rng, &f));
    }
    worst
}

/// The full training loss through both encoders for each representation
/// strategy and pooling.
pub fn model_suite(seeds: u64) -> Vec<(&'static str, f64)> {
    let cases: [(&'static str, Strategy, &[usize], Pooling, f64, PoolingMode); 7] = [
        ("model dual", Strategy::Dual, &[2], Pooling::None, 0.0, PoolingMode::Cls),
        ("model mlr", Strategy::Mlr, &[1, 2], Pooling::None, 0.0, PoolingMode::Cls),
        ("model mlr mean-mode", Strategy::Mlr, &[1, 2], Pooling::None, 0.0, PoolingMode::Mean),
        ("model mlr self-contrastive", Strategy::Mlr, &[1, 2], Pooling::SelfContrastive, 0.5, PoolingMode::Cls),
        ("model mlr scalar mix", Strategy::Mlr, &[1, 2], Pooling::ScalarMix, 0.0, PoolingMode::Cls),
        ("model mebert", Strategy::MeBert, &[2], Pooling::None, 0.0, PoolingMode::Cls),
        ("model colbert", Strategy::ColBert, &[2], Pooling::None, 0.0, PoolingMode::Cls),
    ];
    cases
        .iter()
        .map(|&(name, strategy, layers, pooling, lambda, mode)| {
            let mut worst: f64 = 0.0;
            for seed in 0..seeds {
                let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
                let enc = tiny_config(mode);
                let spec = RepresentationSpec {
                    strategy,
                    layers: LayerSet::new(layers.to_vec(), enc.layers).unwrap(),
                    mebert_m: 3,
                    pooling: mode,
                };
                let mut model = random_model(spec, pooling, enc.clone(), &mut rng);
                let queries = random_tokens(&mut rng, 2, &enc);
                let docs = random_tokens(&mut rng, 4, &enc);
                let cfg = LossConfig { lambda, pooling };
                let f = |m: &Model<f64>, tape: &mut Tape<f64>, b: &mlr_core::model::BoundModel| {
                    m.batch_loss(tape, b, &queries, &docs, &cfg).unwrap().loss
                };
                worst = worst.max(check_params(&mut model, &mut rng, &f));
            }
            (name, worst)
        })
        .collect()
}
