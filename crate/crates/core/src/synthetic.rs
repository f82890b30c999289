//! A generated two-topic retrieval task. Every passage describes one
//! entity with two facts (where it lives, what it cooks), so it answers one
//! question template per fact. Held-out questions ask about the fact whose
//! sibling question was seen in training: the document is known, the
//! question is new.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MlrError, Result};
use crate::tokenizer::token_id;
use crate::train::{CorpusDoc, Passage, TrainingInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub passages: usize,
    pub train_queries: usize,
    pub dev_queries: usize,
    pub test_queries: usize,
    pub negatives: usize,
    pub places: usize,
    pub dishes: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            passages: 500,
            train_queries: 400,
            dev_queries: 50,
            test_queries: 100,
            negatives: 10,
            places: 25,
            dishes: 25,
            vocab_size: 4096,
            seed: 7,
        }
    }
}

/// A held-out question with the id of the passage that answers it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestQuery {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    pub doc_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub corpus: Vec<CorpusDoc>,
    pub train: Vec<TrainingInstance>,
    pub dev: Vec<TrainingInstance>,
    pub test: Vec<TestQuery>,
}

const TEMPLATE_WORDS: &[&str] = &["where", "does", "live", "lives", "in", "what", "cook", "cooks"];

/// Consonant-vowel nonce words whose hashed ids collide neither with each
/// other nor with the template words.
struct Nonce {
    ids: HashSet<u32>,
    vocab_size: usize,
}

impl Nonce {
    fn take(&mut self, n: usize, syllables: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        const C: &[u8] = b"bdfgklmnprstvz";
        const V: &[u8] = b"aeiou";
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let w: String = (0..syllables)
                .flat_map(|_| [C[rng.random_range(0..C.len())], V[rng.random_range(0..V.len())]])
                .map(char::from)
                .collect();
            if self.ids.insert(token_id(&w, self.vocab_size)) {
                out.push(w);
            }
        }
        out
    }
}

struct Fact {
    entity: String,
    place: usize,
    dish: usize,
}

struct World {
    facts: Vec<Fact>,
    places: Vec<String>,
    dishes: Vec<String>,
}

impl World {
    fn text(&self, p: usize) -> String {
        let f = &self.facts[p];
        format!(
            "{e} lives in {} . {e} cooks {}",
            self.places[f.place],
            self.dishes[f.dish],
            e = f.entity
        )
    }

    /// Question, answer, and the other passages sharing the asked-about value.
    fn question(&self, p: usize, topic: usize) -> (String, String, Vec<usize>) {
        let f = &self.facts[p];
        let (q, a) = if topic == 0 {
            (
                format!("where does {} live", f.entity),
                format!("{} lives in {}", f.entity, self.places[f.place]),
            )
        } else {
            (
                format!("what does {} cook", f.entity),
                format!("{} cooks {}", f.entity, self.dishes[f.dish]),
            )
        };
        let related = (0..self.facts.len())
            .filter(|&o| o != p)
            .filter(|&o| {
                let g = &self.facts[o];
                if topic == 0 { g.place == f.place } else { g.dish == f.dish }
            })
            .collect();
        (q, a, related)
    }
}

/// Every dev and test question is paired with a training question about the
/// same passage's other fact; remaining training questions cover the other
/// passages, one random fact each.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticTask> {
    let held_out = cfg.dev_queries + cfg.test_queries;
    if held_out > cfg.train_queries || cfg.train_queries > cfg.passages {
        return Err(MlrError::Config(format!(
            "need dev + test ({held_out}) <= train ({}) <= passages ({})",
            cfg.train_queries, cfg.passages
        )));
    }
    if cfg.places == 0 || cfg.dishes == 0 {
        return Err(MlrError::Config("places and dishes must be nonempty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut nonce = Nonce {
        ids: TEMPLATE_WORDS.iter().map(|w| token_id(w, cfg.vocab_size)).collect(),
        vocab_size: cfg.vocab_size,
    };
    if cfg.passages + cfg.places + cfg.dishes + TEMPLATE_WORDS.len() > cfg.vocab_size / 2 {
        return Err(MlrError::Config(format!("vocabulary of {} is too small", cfg.vocab_size)));
    }
    let entities = nonce.take(cfg.passages, 3, &mut rng);
    let world = World {
        places: nonce.take(cfg.places, 2, &mut rng),
        dishes: nonce.take(cfg.dishes, 2, &mut rng),
        facts: entities
            .into_iter()
            .map(|entity| Fact {
                entity,
                place: rng.random_range(0..cfg.places),
                dish: rng.random_range(0..cfg.dishes),
            })
            .collect(),
    };
    let corpus: Vec<CorpusDoc> = (0..cfg.passages)
        .map(|i| CorpusDoc {
            id: format!("p{i:04}"),
            title: String::new(),
            text: world.text(i),
        })
        .collect();

    let instance = |p: usize, topic: usize, rng: &mut ChaCha8Rng| {
        let (q, answer, mut related) = world.question(p, topic);
        related.shuffle(rng);
        related.truncate(cfg.negatives);
        TrainingInstance {
            question: q,
            answers: vec![answer],
            positive_ctxs: vec![corpus[p].passage()],
            negative_ctxs: related.iter().map(|&o| corpus[o].passage()).collect::<Vec<Passage>>(),
        }
    };
    let mut order: Vec<usize> = (0..cfg.passages).collect();
    order.shuffle(&mut rng);
    let mut train = Vec::with_capacity(cfg.train_queries);
    let mut dev = Vec::with_capacity(cfg.dev_queries);
    let mut test = Vec::with_capacity(cfg.test_queries);
    for (n, &p) in order.iter().take(cfg.train_queries).enumerate() {
        let topic = rng.random_range(0..2);
        if n < cfg.test_queries {
            let (q, answer, _) = world.question(p, topic);
            test.push(TestQuery {
                id: format!("q{n:04}"),
                question: q,
                answers: vec![answer],
                doc_id: corpus[p].id.clone(),
            });
            train.push(instance(p, 1 - topic, &mut rng));
        } else if n < held_out {
            dev.push(instance(p, topic, &mut rng));
            train.push(instance(p, 1 - topic, &mut rng));
        } else {
            train.push(instance(p, topic, &mut rng));
        }
    }
    Ok(SyntheticTask {
        corpus,
        train,
        dev,
        test,
    })
}
