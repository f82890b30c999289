//! Configurations that must collapse onto simpler ones.

use mlr_core::encoder::{
    doc_representation, DocRepresentation, EncoderConfig, LayerSet, PoolingMode, RepresentationSpec, Strategy,
};
use mlr_core::scoring::{average_pool, contrastive_loss, max_sim, scalar_mix_pool, self_contrastive_loss, total_loss, Pooling};
use mlr_core::train::{TrainConfig, Trainer};
use mlr_core::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Check;

const L: usize = 3;

fn encoder(pooling: PoolingMode) -> EncoderConfig {
    EncoderConfig {
        vocab_size: 64,
        dim: 16,
        layers: L,
        heads: 2,
        ff_dim: 24,
        max_len: 12,
        pooling,
        ..EncoderConfig::default()
    }
}

fn spec(strategy: Strategy, layers: LayerSet, pooling: PoolingMode) -> RepresentationSpec {
    RepresentationSpec {
        strategy,
        layers,
        mebert_m: 1,
        pooling,
    }
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..10);
    (0..n).map(|_| format!("w{}", rng.random_range(0..40))).collect::<Vec<_>>().join(" ")
}

fn bits(vs: &[Vec<Vec<f32>>]) -> Vec<u32> {
    vs.iter().flatten().flatten().map(|x| x.to_bits()).collect()
}

/// MLR over the last layer alone produces the dual encoder's vectors, bit
/// for bit, both from raw encoder output and through a whole model.
pub fn mlr_last_layer_is_dual(seeds: u64) -> Check {
    let mut mismatches = 0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pooling = if seed % 2 == 0 { PoolingMode::Cls } else { PoolingMode::Mean };
        let cfg = encoder(pooling);
        let dual = Model::<f32>::init(cfg.clone(), spec(Strategy::Dual, LayerSet::last_only(L), pooling), Pooling::None, seed).unwrap();
        let mlr = Model::<f32>::init(cfg.clone(), spec(Strategy::Mlr, LayerSet::last_only(L), pooling), Pooling::None, seed).unwrap();
        let texts: Vec<String> = (0..4).map(|_| random_text(&mut rng)).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        if bits(&dual.embed_docs(&refs).unwrap()) != bits(&mlr.embed_docs(&refs).unwrap()) {
            mismatches += 1;
        }
        let out = dual.doc.encode(&cfg.tokenize(&texts[0])).unwrap();
        let a = doc_representation(&out, &dual.spec).unwrap();
        let b = doc_representation(&out, &mlr.spec).unwrap();
        if bits(&[a.vectors]) != bits(&[b.vectors]) || a.primary != b.primary {
            mismatches += 1;
        }
    }
    Check::new("MLR S={L} ≡ dual (bitwise)", mismatches == 0, format!("{mismatches} mismatches over {seeds} models"))
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()
}

fn single(v: Vec<f64>) -> DocRepresentation<f64> {
    DocRepresentation {
        strategy: Strategy::Mlr,
        vectors: vec![v],
        primary: 0,
    }
}

/// With one vector per document and λ = 0, the self-contrastive loss is the
/// plain contrastive loss.
pub fn self_contrastive_m1_is_contrastive(seeds: u64) -> Check {
    let mut mismatches = 0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(1..12);
        let hq = gaussian(&mut rng, d);
        let pos = single(gaussian(&mut rng, d));
        let negs: Vec<_> = (0..rng.random_range(1..8)).map(|_| single(gaussian(&mut rng, d))).collect();
        let sc = self_contrastive_loss(&hq, &pos, &negs).unwrap();
        let total = total_loss(sc, 0.0, 0.0).unwrap();
        let s_pos = max_sim(&hq, &pos).unwrap().0;
        let s_neg: Vec<f64> = negs.iter().map(|r| max_sim(&hq, r).unwrap().0).collect();
        let plain = contrastive_loss(s_pos, &s_neg).unwrap();
        if sc.to_bits() != plain.to_bits() || total.to_bits() != plain.to_bits() {
            mismatches += 1;
        }
    }
    Check::new(
        "self-contrastive m=1 λ=0 ≡ contrastive (bitwise)",
        mismatches == 0,
        format!("{mismatches} mismatches over {seeds} cases"),
    )
}

/// Equal mixing weights, whatever their common value, average the vectors.
pub fn equal_scalar_mix_is_average(seeds: u64) -> Check {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, d) = (rng.random_range(1..9), rng.random_range(1..12));
        let vs: Vec<Vec<f64>> = (0..m).map(|_| gaussian(&mut rng, d)).collect();
        let alpha = vec![rng.random_range(-5.0..5.0); m];
        let mix = scalar_mix_pool(&vs, &alpha).unwrap();
        let avg = average_pool(&vs).unwrap();
        for (a, b) in mix.iter().zip(&avg) {
            worst = worst.max((a - b).abs());
        }
    }
    Check::new("scalar mix, equal α ≈ average", worst <= 1e-6, format!("max |Δ| {worst:.2e} (tol 1e-6)"))
}

/// Training self-contrastive MLR over the last layer alone with λ = 0
/// follows the dual encoder's trajectory exactly.
pub fn self_contrastive_m1_trains_like_dual(steps: usize) -> Check {
    let task = super::fixtures::small_task();
    let base = TrainConfig {
        batch_size: 4,
        epochs: 2,
        encoder: encoder(PoolingMode::Cls),
        ..TrainConfig::default()
    };
    let sc = TrainConfig {
        strategy: Strategy::Mlr,
        layers: Some(LayerSet::last_only(L)),
        pooling: Pooling::SelfContrastive,
        lambda: 0.0,
        ..base.clone()
    };
    let (mut a, mut b) = (Trainer::new(base).unwrap(), Trainer::new(sc).unwrap());
    let mut diverged = None;
    for s in 0..steps {
        let (la, lb) = (a.train_step(&task.train).unwrap(), b.train_step(&task.train).unwrap());
        let same = la.loss.to_bits() == lb.loss.to_bits()
            && a.model().query == b.model().query
            && a.model().doc == b.model().doc;
        if !same {
            diverged = Some(s);
            break;
        }
    }
    Check::new(
        "self-contrastive m=1 λ=0 trains like dual (bitwise)",
        diverged.is_none(),
        match diverged {
            None => format!("{steps} identical steps"),
            Some(s) => format!("diverged at step {s}"),
        },
    )
}

pub fn suite(seeds: u64) -> Vec<Check> {
    vec![
        mlr_last_layer_is_dual(seeds),
        self_contrastive_m1_is_contrastive(seeds),
        equal_scalar_mix_is_average(seeds),
        self_contrastive_m1_trains_like_dual(6),
    ]
}
