use std::fmt;
use std::str::FromStr;

use mlr_autodiff::{Scalar, Tape, Var};
use serde::{Deserialize, Serialize};

use super::{BatchHidden, PoolingMode};
use crate::error::{MlrError, Result};

/// Hidden states for one sequence: `layers × positions × dim`, layer 0 being
/// the embedding output and position 0 the CLS slot.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<T> {
    layers: usize,
    positions: usize,
    dim: usize,
    values: Vec<T>,
}

impl<T: Scalar> EncoderOutput<T> {
    pub fn new(layers: usize, positions: usize, dim: usize, values: Vec<T>) -> Self {
        assert_eq!(values.len(), layers * positions * dim, "hidden state size");
        Self {
            layers,
            positions,
            dim,
            values,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers
    }

    /// Index of the last transformer layer (`L`).
    pub fn last_layer(&self) -> usize {
        self.layers - 1
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn vector(&self, layer: usize, pos: usize) -> &[T] {
        let off = (layer * self.positions + pos) * self.dim;
        &self.values[off..off + self.dim]
    }

    /// Mean over token positions `1..=T` of one layer.
    fn token_mean(&self, layer: usize) -> Result<Vec<T>> {
        let t = self.positions - 1;
        if t == 0 {
            return Err(MlrError::Invalid("mean pooling over an empty sequence".into()));
        }
        let mut acc = vec![T::zero(); self.dim];
        for pos in 1..self.positions {
            for (a, &v) in acc.iter_mut().zip(self.vector(layer, pos)) {
                *a += v;
            }
        }
        let inv = T::one() / T::lit(t as f64);
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(acc)
    }

    fn summary(&self, layer: usize, pooling: PoolingMode) -> Result<Vec<T>> {
        match pooling {
            PoolingMode::Cls => Ok(self.vector(layer, 0).to_vec()),
            PoolingMode::Mean => self.token_mean(layer),
        }
    }
}

/// Selected layers `l_1 < … < l_m`, always ending with the last layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LayerSet(Vec<usize>);

impl LayerSet {
    /// Builds and validates against an encoder with `num_layers` layers.
    pub fn new(mut layers: Vec<usize>, num_layers: usize) -> Result<Self> {
        let set = Self::unchecked(std::mem::take(&mut layers))?;
        set.check(num_layers)?;
        Ok(set)
    }

    fn unchecked(mut layers: Vec<usize>) -> Result<Self> {
        layers.sort_unstable();
        layers.dedup();
        if layers.is_empty() {
            return Err(MlrError::Config("layer set is empty".into()));
        }
        if layers[0] == 0 {
            return Err(MlrError::Config("layer set may only use layers 1..=L".into()));
        }
        Ok(Self(layers))
    }

    pub fn last_only(num_layers: usize) -> Self {
        Self(vec![num_layers])
    }

    pub fn all(num_layers: usize) -> Self {
        Self((1..=num_layers).collect())
    }

    /// Parses a comma-separated list such as `"3,4"`.
    pub fn parse(s: &str, num_layers: usize) -> Result<Self> {
        let layers = s
            .split(',')
            .map(|p| p.trim())
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<usize>().map_err(|_| MlrError::Config(format!("bad layer `{p}`"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, num_layers)
    }

    pub fn check(&self, num_layers: usize) -> Result<()> {
        let last = *self.0.last().expect("nonempty");
        if last > num_layers {
            return Err(MlrError::Config(format!(
                "layer {last} exceeds the encoder's {num_layers} layers"
            )));
        }
        if last != num_layers {
            return Err(MlrError::Config(format!(
                "layer set {self} must include the last layer {num_layers}"
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<usize>> for LayerSet {
    type Error = MlrError;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::unchecked(v)
    }
}

impl From<LayerSet> for Vec<usize> {
    fn from(s: LayerSet) -> Self {
        s.0
    }
}

impl fmt::Display for LayerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|l| l.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Dual,
    Mlr,
    MeBert,
    ColBert,
}

impl FromStr for Strategy {
    type Err = MlrError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dual" => Ok(Self::Dual),
            "mlr" => Ok(Self::Mlr),
            "mebert" => Ok(Self::MeBert),
            "colbert" => Ok(Self::ColBert),
            other => Err(MlrError::Config(format!(
                "unknown strategy `{other}` (expected dual, mlr, mebert or colbert)"
            ))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dual => "dual",
            Self::Mlr => "mlr",
            Self::MeBert => "mebert",
            Self::ColBert => "colbert",
        })
    }
}

/// Everything needed to turn encoder output into document vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepresentationSpec {
    pub strategy: Strategy,
    pub layers: LayerSet,
    pub mebert_m: usize,
    pub pooling: PoolingMode,
}

impl RepresentationSpec {
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        self.layers.check(num_layers)?;
        if self.strategy == Strategy::MeBert && self.mebert_m == 0 {
            return Err(MlrError::Config("mebert_m must be positive".into()));
        }
        Ok(())
    }

    /// Vectors per document, or `None` when it depends on the document
    /// length (colbert).
    pub fn fixed_m(&self) -> Option<usize> {
        match self.strategy {
            Strategy::Dual => Some(1),
            Strategy::Mlr => Some(self.layers.len()),
            Strategy::MeBert => Some(self.mebert_m),
            Strategy::ColBert => None,
        }
    }

    /// Position of the last-layer vector `h_0^(L)` within a representation.
    pub fn primary(&self) -> usize {
        match self.strategy {
            Strategy::Mlr => self.layers.len() - 1,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocRepresentation<T> {
    pub strategy: Strategy,
    pub vectors: Vec<Vec<T>>,
    /// Index of the last-layer vector used as the single-vector summary.
    pub primary: usize,
}

impl<T: Scalar> DocRepresentation<T> {
    pub fn m(&self) -> usize {
        self.vectors.len()
    }

    /// Pads to `m` vectors by repeating the first (CLS) vector. Max-sim
    /// scores are unchanged by the padding.
    pub fn pad_to(&mut self, m: usize) -> Result<()> {
        if self.vectors.len() > m {
            return Err(MlrError::Invalid(format!(
                "representation has {} vectors, more than the index's {m}",
                self.vectors.len()
            )));
        }
        let first = self.vectors[0].clone();
        self.vectors.resize(m, first);
        Ok(())
    }
}

pub fn query_embedding<T: Scalar>(out: &EncoderOutput<T>, pooling: PoolingMode) -> Result<Vec<T>> {
    out.summary(out.last_layer(), pooling)
}

pub fn doc_representation<T: Scalar>(out: &EncoderOutput<T>, spec: &RepresentationSpec) -> Result<DocRepresentation<T>> {
    let last = out.last_layer();
    let vectors = match spec.strategy {
        Strategy::Dual => vec![query_embedding(out, spec.pooling)?],
        Strategy::Mlr => {
            spec.layers.check(last)?;
            spec.layers
                .layers()
                .iter()
                .map(|&l| out.summary(l, spec.pooling))
                .collect::<Result<_>>()?
        }
        Strategy::MeBert => (0..spec.mebert_m)
            .map(|i| {
                let pos = if i < out.positions() { i } else { 0 };
                out.vector(last, pos).to_vec()
            })
            .collect(),
        Strategy::ColBert => (0..out.positions()).map(|i| out.vector(last, i).to_vec()).collect(),
    };
    Ok(DocRepresentation {
        strategy: spec.strategy,
        vectors,
        primary: spec.primary(),
    })
}

/// Rows of several documents' vectors, `m` consecutive rows per document.
#[derive(Debug, Clone, Copy)]
pub struct TapedReps {
    pub vectors: Var,
    pub docs: usize,
    pub m: usize,
}

/// Per-sequence summaries of one layer, `[n, dim]`.
fn taped_summary<T: Scalar>(tape: &mut Tape<T>, hidden: &BatchHidden, layer: usize, pooling: PoolingMode) -> Result<Var> {
    let h = hidden.layers[layer];
    match pooling {
        PoolingMode::Cls => {
            let starts: Vec<usize> = hidden.spans.iter().map(|s| s.start).collect();
            Ok(tape.gather_rows(h, &starts)?)
        }
        PoolingMode::Mean => {
            let rows = hidden.rows();
            let mut avg = vec![T::zero(); hidden.spans.len() * rows];
            for (i, s) in hidden.spans.iter().enumerate() {
                if s.len < 2 {
                    return Err(MlrError::Invalid("mean pooling over an empty sequence".into()));
                }
                let w = T::one() / T::lit((s.len - 1) as f64);
                for r in s.start + 1..s.start + s.len {
                    avg[i * rows + r] = w;
                }
            }
            let avg = tape.constant(vec![hidden.spans.len(), rows], avg)?;
            Ok(tape.matmul(avg, h)?)
        }
    }
}

/// Query embeddings `[n, dim]` from the last layer.
pub fn taped_query_embeddings<T: Scalar>(tape: &mut Tape<T>, hidden: &BatchHidden, pooling: PoolingMode) -> Result<Var> {
    taped_summary(tape, hidden, hidden.layers.len() - 1, pooling)
}

/// Document representations on the tape. Colbert representations are padded
/// with the CLS vector to the longest sequence in the batch.
pub fn taped_doc_reps<T: Scalar>(tape: &mut Tape<T>, hidden: &BatchHidden, spec: &RepresentationSpec) -> Result<TapedReps> {
    let last = hidden.layers.len() - 1;
    let n = hidden.spans.len();
    let d = hidden.dim;
    let position_rows = |tape: &mut Tape<T>, m: usize| -> Result<Var> {
        let idx: Vec<usize> = hidden
            .spans
            .iter()
            .flat_map(|s| (0..m).map(move |j| if j < s.len { s.start + j } else { s.start }))
            .collect();
        Ok(tape.gather_rows(hidden.layers[last], &idx)?)
    };
    let (vectors, m) = match spec.strategy {
        Strategy::Dual => (taped_summary(tape, hidden, last, spec.pooling)?, 1),
        Strategy::Mlr => {
            spec.layers.check(last)?;
            let parts = spec
                .layers
                .layers()
                .iter()
                .map(|&l| taped_summary(tape, hidden, l, spec.pooling))
                .collect::<Result<Vec<_>>>()?;
            let m = parts.len();
            let joined = if m == 1 { parts[0] } else { tape.concat(&parts, 1)? };
            (tape.reshape(joined, vec![n * m, d])?, m)
        }
        Strategy::MeBert => (position_rows(tape, spec.mebert_m)?, spec.mebert_m),
        Strategy::ColBert => {
            let m = hidden.spans.iter().map(|s| s.len).max().unwrap_or(1);
            (position_rows(tape, m)?, m)
        }
    };
    Ok(TapedReps { vectors, docs: n, m })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn output() -> EncoderOutput<f64> {
        // 3 layers, 3 positions, dim 2; value encodes (layer, pos, coord).
        let values = (0..3)
            .flat_map(|l| (0..3).flat_map(move |p| (0..2).map(move |c| (100 * l + 10 * p + c) as f64)))
            .collect();
        EncoderOutput::new(3, 3, 2, values)
    }

    fn spec(strategy: Strategy, layers: &[usize]) -> RepresentationSpec {
        RepresentationSpec {
            strategy,
            layers: LayerSet::new(layers.to_vec(), 2).unwrap(),
            mebert_m: 2,
            pooling: PoolingMode::Cls,
        }
    }

    #[test]
    fn layer_set_rules() {
        assert!(LayerSet::new(vec![1], 2).is_err());
        assert!(LayerSet::new(vec![0, 2], 2).is_err());
        assert!(LayerSet::new(vec![3], 2).is_err());
        assert_eq!(LayerSet::parse("12, 10", 12).unwrap().layers(), &[10, 12]);
        assert_eq!(LayerSet::parse("10,12", 12).unwrap().len(), 2);
    }

    #[test]
    fn query_embedding_modes() {
        let out = output();
        assert_eq!(query_embedding(&out, PoolingMode::Cls).unwrap(), vec![200.0, 201.0]);
        assert_eq!(query_embedding(&out, PoolingMode::Mean).unwrap(), vec![215.0, 216.0]);
        let single = EncoderOutput::new(1, 2, 2, vec![0.0, 0.0, 3.0, 4.0]);
        assert_eq!(query_embedding(&single, PoolingMode::Mean).unwrap(), vec![3.0, 4.0]);
        let sym = EncoderOutput::new(1, 3, 2, vec![9.0, 9.0, 1.5, -2.0, -1.5, 2.0]);
        assert_eq!(query_embedding(&sym, PoolingMode::Mean).unwrap(), vec![0.0, 0.0]);
        let empty = EncoderOutput::new(1, 1, 2, vec![1.0, 1.0]);
        assert!(query_embedding(&empty, PoolingMode::Mean).is_err());
    }

    #[test]
    fn strategies() {
        let out = output();
        let mlr = doc_representation(&out, &spec(Strategy::Mlr, &[1, 2])).unwrap();
        assert_eq!(mlr.vectors, vec![vec![100.0, 101.0], vec![200.0, 201.0]]);
        assert_eq!(mlr.primary, 1);
        let dual = doc_representation(&out, &spec(Strategy::Dual, &[2])).unwrap();
        let last = doc_representation(&out, &spec(Strategy::Mlr, &[2])).unwrap();
        assert_eq!(dual.vectors, last.vectors);
        let colbert = doc_representation(&out, &spec(Strategy::ColBert, &[2])).unwrap();
        assert_eq!(colbert.m(), 3);
        let mut me = spec(Strategy::MeBert, &[2]);
        me.mebert_m = 5;
        let rep = doc_representation(&out, &me).unwrap();
        assert_eq!(rep.m(), 5);
        assert_eq!(rep.vectors[3], rep.vectors[0]);
        assert_eq!(rep.vectors[2], vec![220.0, 221.0]);
    }

    #[test]
    fn layer_beyond_encoder_rejected() {
        let out = EncoderOutput::new(2, 3, 1, vec![0.0; 6]);
        assert!(doc_representation(&out, &spec(Strategy::Mlr, &[1, 2])).is_err());
    }
}
