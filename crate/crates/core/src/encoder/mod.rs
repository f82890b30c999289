//! A small pre-norm transformer encoder that exposes the hidden states of
//! every layer, and the document/query representation strategies built on
//! top of them.

mod repr;

use mlr_autodiff::{Bound, ParamSet, Scalar, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{MlrError, Result};
use crate::tokenizer::{self, CLS_ID};

pub use repr::{
    doc_representation, query_embedding, taped_doc_reps, taped_query_embeddings, DocRepresentation,
    EncoderOutput, LayerSet, RepresentationSpec, Strategy, TapedReps,
};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

/// How a sequence is summarized into a single vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    /// The CLS slot (position 0).
    #[default]
    Cls,
    /// Mean over token positions 1..=T, CLS slot excluded.
    Mean,
}

impl std::str::FromStr for PoolingMode {
    type Err = MlrError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(Self::Cls),
            "mean" => Ok(Self::Mean),
            other => Err(MlrError::Config(format!("unknown pooling mode `{other}` (expected cls or mean)"))),
        }
    }
}

/// Placement of layer normalization inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormPlacement {
    #[default]
    Pre,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub pooling: PoolingMode,
    pub norm: NormPlacement,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4096,
            dim: 64,
            layers: 4,
            heads: 4,
            ff_dim: 256,
            max_len: 64,
            pooling: PoolingMode::Cls,
            norm: NormPlacement::Pre,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("dim", self.dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ff_dim", self.ff_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(MlrError::Config(format!("encoder {name} must be positive")));
        }
        if self.vocab_size <= tokenizer::RESERVED_IDS as usize {
            return Err(MlrError::Config("vocab_size must exceed the 2 reserved ids".into()));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(MlrError::Config(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.max_len < 2 {
            return Err(MlrError::Config("max_len must be at least 2".into()));
        }
        Ok(())
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        tokenizer::tokenize(text, self.vocab_size, self.max_len)
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Row range of one sequence inside a batched hidden-state matrix. `len`
/// counts the CLS slot, so a sequence of `T` tokens has `len == T + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

/// Hidden states of a batch of sequences recorded on a tape. Each entry of
/// `layers` is a `[rows, dim]` matrix; layer 0 is the embedding output.
#[derive(Debug, Clone)]
pub struct BatchHidden {
    pub layers: Vec<Var>,
    pub spans: Vec<Span>,
    pub dim: usize,
}

impl BatchHidden {
    pub fn rows(&self) -> usize {
        self.spans.last().map_or(0, |s| s.start + s.len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    config: EncoderConfig,
    params: ParamSet<T>,
}

fn layer_param(l: usize, name: &str) -> String {
    format!("layers.{l}.{name}")
}

/// Parameter names and shapes in construction order.
fn param_shapes(c: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f) = (c.dim, c.ff_dim);
    let mut out = vec![
        ("tok_emb".to_string(), vec![c.vocab_size, d]),
        ("pos_emb".to_string(), vec![c.max_len, d]),
    ];
    for l in 0..c.layers {
        for (name, shape) in [
            ("ln1.gain", vec![d]),
            ("ln1.bias", vec![d]),
            ("attn.wq", vec![d, d]),
            ("attn.bq", vec![d]),
            ("attn.wk", vec![d, d]),
            ("attn.bk", vec![d]),
            ("attn.wv", vec![d, d]),
            ("attn.bv", vec![d]),
            ("attn.wo", vec![d, d]),
            ("attn.bo", vec![d]),
            ("ln2.gain", vec![d]),
            ("ln2.bias", vec![d]),
            ("ff.w1", vec![d, f]),
            ("ff.b1", vec![f]),
            ("ff.w2", vec![f, d]),
            ("ff.b2", vec![d]),
        ] {
            out.push((layer_param(l, name), shape));
        }
    }
    out
}

impl<T: Scalar> Encoder<T> {
    /// Fresh parameters: N(0, 0.02) weights and embeddings, zero biases,
    /// unit layer-norm gains.
    pub fn init(config: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = ParamSet::new();
        for (name, shape) in param_shapes(&config) {
            let n: usize = shape.iter().product();
            let data: Vec<T> = if name.ends_with(".gain") {
                vec![T::one(); n]
            } else if is_bias(&name) {
                vec![T::zero(); n]
            } else {
                (0..n).map(|_| T::lit(normal.sample(rng))).collect()
            };
            params.insert(name, Tensor::param(shape, data)?);
        }
        Ok(Self { config, params })
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(config: EncoderConfig, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        let expected = param_shapes(&config);
        if expected.len() != params.len() {
            return Err(MlrError::format(
                "encoder parameters",
                format!("expected {} tensors, found {}", expected.len(), params.len()),
            ));
        }
        for (name, shape) in &expected {
            match params.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(MlrError::format(
                        "encoder parameters",
                        format!("`{name}` has shape {:?}, expected {shape:?}", t.shape()),
                    ))
                }
                None => return Err(MlrError::format("encoder parameters", format!("missing `{name}`"))),
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet<T> {
        self.params
    }

    pub fn cast<U: Scalar>(&self) -> Encoder<U> {
        Encoder {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Result<Bound> {
        Ok(self.params.bind(tape)?)
    }

    /// Runs the encoder over a batch of token sequences. A CLS slot is
    /// prepended to every sequence.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &Bound, batch: &[Vec<u32>]) -> Result<BatchHidden> {
        let c = &self.config;
        if batch.is_empty() {
            return Err(MlrError::Invalid("cannot encode an empty batch".into()));
        }
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        let mut spans = Vec::with_capacity(batch.len());
        for seq in batch {
            if seq.len() + 1 > c.max_len {
                return Err(MlrError::Invalid(format!(
                    "sequence of {} tokens exceeds max_len {} (CLS slot included)",
                    seq.len(),
                    c.max_len
                )));
            }
            if let Some(bad) = seq.iter().find(|&&t| t as usize >= c.vocab_size) {
                return Err(MlrError::Invalid(format!("token id {bad} outside vocabulary {}", c.vocab_size)));
            }
            spans.push(Span {
                start: ids.len(),
                len: seq.len() + 1,
            });
            ids.push(CLS_ID as usize);
            ids.extend(seq.iter().map(|&t| t as usize));
            positions.extend(0..=seq.len());
        }

        let tok = tape.gather_rows(bound.get("tok_emb")?, &ids)?;
        let pos = tape.gather_rows(bound.get("pos_emb")?, &positions)?;
        let mut x = tape.add(tok, pos)?;
        let mut layers = vec![x];
        for l in 0..c.layers {
            let p = |name: &str| bound.get(&layer_param(l, name));
            let a = tape.layer_norm(x, p("ln1.gain")?, p("ln1.bias")?, T::lit(LN_EPS))?;
            let attn = self.attention(tape, a, &spans, l, bound)?;
            x = tape.add(x, attn)?;
            let f = tape.layer_norm(x, p("ln2.gain")?, p("ln2.bias")?, T::lit(LN_EPS))?;
            let h = linear(tape, f, p("ff.w1")?, p("ff.b1")?)?;
            let h = tape.gelu(h)?;
            let h = linear(tape, h, p("ff.w2")?, p("ff.b2")?)?;
            x = tape.add(x, h)?;
            layers.push(x);
        }
        Ok(BatchHidden {
            layers,
            spans,
            dim: c.dim,
        })
    }

    fn attention(&self, tape: &mut Tape<T>, a: Var, spans: &[Span], l: usize, bound: &Bound) -> Result<Var> {
        let c = &self.config;
        let p = |name: &str| bound.get(&layer_param(l, name));
        let q = linear(tape, a, p("attn.wq")?, p("attn.bq")?)?;
        let k = linear(tape, a, p("attn.wk")?, p("attn.bk")?)?;
        let v = linear(tape, a, p("attn.wv")?, p("attn.bv")?)?;
        let dh = c.head_dim();
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let mut per_seq = Vec::with_capacity(spans.len());
        for span in spans {
            let rows = |tape: &mut Tape<T>, m: Var| tape.slice(m, 0, span.start, span.start + span.len);
            let (qs, ks, vs) = (rows(tape, q)?, rows(tape, k)?, rows(tape, v)?);
            // [dim, len]: head h owns rows h*dh..(h+1)*dh.
            let kt = tape.transpose(ks)?;
            let mut heads = Vec::with_capacity(c.heads);
            for h in 0..c.heads {
                let (lo, hi) = (h * dh, (h + 1) * dh);
                let qh = tape.slice(qs, 1, lo, hi)?;
                let kth = tape.slice(kt, 0, lo, hi)?;
                let vh = tape.slice(vs, 1, lo, hi)?;
                let scores = tape.matmul(qh, kth)?;
                let scores = tape.scale(scores, scale)?;
                let weights = tape.softmax(scores)?;
                heads.push(tape.matmul(weights, vh)?);
            }
            per_seq.push(if heads.len() == 1 { heads[0] } else { tape.concat(&heads, 1)? });
        }
        let joined = if per_seq.len() == 1 {
            per_seq[0]
        } else {
            tape.concat(&per_seq, 0)?
        };
        linear(tape, joined, p("attn.wo")?, p("attn.bo")?)
    }

    /// Hidden states of all layers for one token sequence.
    pub fn encode(&self, tokens: &[u32]) -> Result<EncoderOutput<T>> {
        let mut out = self.encode_batch(&[tokens.to_vec()])?;
        Ok(out.pop().expect("one output per input"))
    }

    pub fn encode_batch(&self, batch: &[Vec<u32>]) -> Result<Vec<EncoderOutput<T>>> {
        let mut tape = Tape::new();
        let bound = self.frozen().bind(&mut tape)?;
        let hidden = self.forward(&mut tape, &bound, batch)?;
        let d = self.config.dim;
        Ok(hidden
            .spans
            .iter()
            .map(|span| {
                let mut values = Vec::with_capacity(hidden.layers.len() * span.len * d);
                for &layer in &hidden.layers {
                    values.extend_from_slice(&tape.value(layer)[span.start * d..(span.start + span.len) * d]);
                }
                EncoderOutput::new(hidden.layers.len(), span.len, d, values)
            })
            .collect())
    }

    /// A view of the parameters with gradients disabled, for inference.
    fn frozen(&self) -> ParamSet<T> {
        let mut frozen = ParamSet::new();
        for (name, t) in self.params.iter() {
            frozen.insert(
                name,
                Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid tensor"),
            );
        }
        frozen
    }
}

fn is_bias(name: &str) -> bool {
    [".bq", ".bk", ".bv", ".bo", ".b1", ".b2", ".bias"]
        .iter()
        .any(|s| name.ends_with(s))
}

fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let h = tape.matmul(x, w)?;
    Ok(tape.add_row(h, b)?)
}
