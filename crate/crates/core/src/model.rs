//! The trainable retriever: separate query and document encoders, the
//! representation strategy, and the optional scalar-mix weights.

use mlr_autodiff::{Bound, Gradients, ParamSet, Scalar, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{
    doc_representation, query_embedding, taped_doc_reps, taped_query_embeddings, Encoder, EncoderConfig,
    RepresentationSpec, Strategy,
};
use crate::error::{MlrError, Result};
use crate::scoring::taped::{batch_loss, BatchLoss};
use crate::scoring::{index_vectors, positive_column, LossConfig, Pooling};

pub const QUERY_PREFIX: &str = "query/";
pub const DOC_PREFIX: &str = "doc/";
pub const ALPHA_NAME: &str = "mix/alpha";

/// Sequences encoded per forward pass at inference.
const INFERENCE_CHUNK: usize = 64;

/// A model's parameters as recorded on one tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub query: Bound,
    pub doc: Bound,
    pub alpha: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub query: Encoder<T>,
    pub doc: Encoder<T>,
    pub spec: RepresentationSpec,
    pub pooling: Pooling,
    pub alpha: Option<Tensor<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn init(config: EncoderConfig, spec: RepresentationSpec, pooling: Pooling, seed: u64) -> Result<Self> {
        spec.validate(config.layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Both encoders start from the same weights, as two copies of one
        // pre-trained checkpoint would; they are trained independently.
        let query = Encoder::init(config, &mut rng)?;
        let doc = query.clone();
        let alpha = match pooling {
            Pooling::ScalarMix => {
                let m = spec
                    .fixed_m()
                    .ok_or_else(|| MlrError::Config("scalar mix needs a fixed vector count".into()))?;
                Some(Tensor::param(vec![m], vec![T::zero(); m])?)
            }
            _ => None,
        };
        Ok(Self {
            query,
            doc,
            spec,
            pooling,
            alpha,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        self.query.config()
    }

    /// Vectors stored per document in an index built from this model.
    pub fn index_m(&self) -> usize {
        match self.pooling {
            Pooling::None => self.spec.fixed_m().unwrap_or(self.config().max_len),
            _ => 1,
        }
    }

    /// All trainable tensors under their checkpoint names.
    pub fn named_params_mut(&mut self) -> impl Iterator<Item = (String, &mut Tensor<T>)> {
        let q = self.query.params_mut().iter_mut().map(|(n, t)| (format!("{QUERY_PREFIX}{n}"), t));
        let d = self.doc.params_mut().iter_mut().map(|(n, t)| (format!("{DOC_PREFIX}{n}"), t));
        let a = self.alpha.iter_mut().map(|t| (ALPHA_NAME.to_string(), t));
        q.chain(d).chain(a)
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<_> = self
            .query
            .params()
            .iter()
            .map(|(n, t)| (format!("{QUERY_PREFIX}{n}"), t))
            .collect();
        out.extend(self.doc.params().iter().map(|(n, t)| (format!("{DOC_PREFIX}{n}"), t)));
        out.extend(self.alpha.iter().map(|t| (ALPHA_NAME.to_string(), t)));
        out
    }

    /// Reassembles a model from named tensors, the inverse of `named_params`.
    pub fn from_named(
        config: EncoderConfig,
        spec: RepresentationSpec,
        pooling: Pooling,
        tensors: impl IntoIterator<Item = (String, Tensor<T>)>,
    ) -> Result<Self> {
        spec.validate(config.layers)?;
        let (mut q, mut d, mut alpha) = (ParamSet::new(), ParamSet::new(), None);
        for (name, t) in tensors {
            if let Some(n) = name.strip_prefix(QUERY_PREFIX) {
                q.insert(n, t.with_grad());
            } else if let Some(n) = name.strip_prefix(DOC_PREFIX) {
                d.insert(n, t.with_grad());
            } else if name == ALPHA_NAME {
                alpha = Some(t.with_grad());
            } else {
                return Err(MlrError::format("model parameters", format!("unexpected tensor `{name}`")));
            }
        }
        if (pooling == Pooling::ScalarMix) != alpha.is_some() {
            return Err(MlrError::format(
                "model parameters",
                "scalar-mix weights must be present exactly when pooling is scalar_mix",
            ));
        }
        if let (Some(a), Some(m)) = (&alpha, spec.fixed_m()) {
            if a.shape() != [m] {
                return Err(MlrError::format("model parameters", format!("mix weights have shape {:?}", a.shape())));
            }
        }
        Ok(Self {
            query: Encoder::from_params(config.clone(), q)?,
            doc: Encoder::from_params(config, d)?,
            spec,
            pooling,
            alpha,
        })
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Result<BoundModel> {
        Ok(BoundModel {
            query: self.query.bind(tape)?,
            doc: self.doc.bind(tape)?,
            alpha: self.alpha.as_ref().map(|a| tape.param(a)).transpose()?,
        })
    }

    /// Training loss of one batch: `queries[i]` is paired with the positive
    /// `docs[2i]` and sampled negative `docs[2i + 1]`, and every other
    /// document in the batch serves as an extra negative.
    pub fn batch_loss(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundModel,
        queries: &[Vec<u32>],
        docs: &[Vec<u32>],
        loss: &LossConfig,
    ) -> Result<BatchLoss> {
        if docs.len() != 2 * queries.len() {
            return Err(MlrError::Invalid(format!(
                "{} documents for {} queries; expected a positive and a negative each",
                docs.len(),
                queries.len()
            )));
        }
        let qh = self.query.forward(tape, &bound.query, queries)?;
        let dh = self.doc.forward(tape, &bound.doc, docs)?;
        let spec = RepresentationSpec {
            pooling: self.config().pooling,
            ..self.spec.clone()
        };
        let hq = taped_query_embeddings(tape, &qh, spec.pooling)?;
        let reps = taped_doc_reps(tape, &dh, &spec)?;
        let positives: Vec<usize> = (0..queries.len()).map(positive_column).collect();
        batch_loss(tape, hq, &reps, &positives, spec.primary(), loss, bound.alpha)
    }

    /// Adds the gradients of a backward pass into the parameters.
    pub fn absorb(&mut self, bound: &BoundModel, grads: &Gradients<T>) -> Result<()> {
        self.query.params_mut().absorb(&bound.query, grads)?;
        self.doc.params_mut().absorb(&bound.doc, grads)?;
        if let (Some(a), Some(var)) = (self.alpha.as_mut(), bound.alpha) {
            if let Some(g) = grads.get(var) {
                a.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            query: self.query.cast(),
            doc: self.doc.cast(),
            spec: self.spec.clone(),
            pooling: self.pooling,
            alpha: self.alpha.as_ref().map(|a| a.cast()),
        }
    }

    pub fn embed_queries(&self, texts: &[&str]) -> Result<Vec<Vec<T>>> {
        let cfg = self.config();
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(INFERENCE_CHUNK) {
            let toks: Vec<Vec<u32>> = chunk.iter().map(|t| cfg.tokenize(t)).collect();
            for o in self.query.encode_batch(&toks)? {
                out.push(query_embedding(&o, cfg.pooling)?);
            }
        }
        Ok(out)
    }

    /// Index vectors for each document, padded to exactly `index_m()`.
    pub fn embed_docs(&self, texts: &[&str]) -> Result<Vec<Vec<Vec<T>>>> {
        let cfg = self.config();
        let spec = RepresentationSpec {
            pooling: cfg.pooling,
            ..self.spec.clone()
        };
        let alpha = self.alpha.as_ref().map(|a| a.data());
        let m = self.index_m();
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(INFERENCE_CHUNK) {
            let toks: Vec<Vec<u32>> = chunk.iter().map(|t| cfg.tokenize(t)).collect();
            for o in self.doc.encode_batch(&toks)? {
                let mut rep = doc_representation(&o, &spec)?;
                rep.vectors = index_vectors(&rep, self.pooling, alpha)?;
                if self.spec.strategy == Strategy::ColBert && self.pooling == Pooling::None {
                    rep.pad_to(m)?;
                }
                out.push(rep.vectors);
            }
        }
        Ok(out)
    }
}
