//! Word encoders that turn a token sequence into one vector per word.
//!
//! Two families are provided:
//!
//! * a toy encoder whose output is a pure, hash-derived function of the
//!   tokens (no parameters), used by tests and oracles;
//! * a trainable encoder: hashed word/suffix/shape embeddings followed by
//!   stacked context layers (`tanh` over the `[prev, cur, next]` window), with
//!   optional bottleneck adapters after every layer.
//!
//! The `main-pretrained` and `proxy-pretrained` kinds are trainable encoders
//! whose base weights are a fixed function of the backend name, so they play
//! the role of shipped pretrained weights; `small-trainable` draws its base
//! weights from the training seed.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checksum::{stable_hash, stable_hash_str};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    MainPretrained,
    ProxyPretrained,
    ToyDeterministic,
    SmallTrainable,
}

/// Bottleneck adapter placed after every encoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub bottleneck_dim: usize,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self { bottleneck_dim: 64 }
    }
}

/// Static description of an encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderBackend {
    pub name: String,
    pub kind: BackendKind,
    pub hidden_dim: usize,
    pub layers: usize,
    pub max_tokens: usize,
    pub hash_buckets: usize,
    #[serde(default)]
    pub adapter: Option<AdapterConfig>,
}

pub const TOY: &str = "toy-deterministic";
pub const SMALL: &str = "small-trainable";
pub const MAIN: &str = "main-pretrained";
pub const PROXY: &str = "proxy-pretrained";

impl EncoderBackend {
    pub fn toy(hidden_dim: usize) -> Self {
        Self {
            name: TOY.into(),
            kind: BackendKind::ToyDeterministic,
            hidden_dim,
            layers: 0,
            max_tokens: 512,
            hash_buckets: 0,
            adapter: None,
        }
    }

    pub fn small_trainable(hidden_dim: usize) -> Self {
        Self {
            name: SMALL.into(),
            kind: BackendKind::SmallTrainable,
            hidden_dim,
            layers: 1,
            max_tokens: 512,
            hash_buckets: 4096,
            adapter: None,
        }
    }

    /// Looks up a registered backend by name.
    pub fn named(name: &str) -> Result<Self> {
        let backend = match name {
            TOY => Self::toy(16),
            SMALL => Self::small_trainable(32),
            MAIN => Self {
                name: MAIN.into(),
                kind: BackendKind::MainPretrained,
                hidden_dim: 32,
                layers: 2,
                max_tokens: 512,
                hash_buckets: 8192,
                adapter: None,
            },
            PROXY => Self {
                name: PROXY.into(),
                kind: BackendKind::ProxyPretrained,
                hidden_dim: 12,
                layers: 1,
                max_tokens: 512,
                hash_buckets: 8192,
                adapter: None,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown encoder backend {other:?} (known: {TOY}, {SMALL}, {MAIN}, {PROXY})"
                )))
            }
        };
        Ok(backend)
    }

    pub fn with_adapter(mut self, adapter: Option<AdapterConfig>) -> Self {
        self.adapter = adapter;
        self
    }

    pub fn is_trainable(&self) -> bool {
        self.kind != BackendKind::ToyDeterministic
    }

    fn check_length(&self, len: usize) -> Result<()> {
        if len > self.max_tokens {
            return Err(Error::InputTooLong { len, limit: self.max_tokens });
        }
        if len == 0 {
            return Err(Error::Shape("cannot encode an empty sentence".into()));
        }
        Ok(())
    }
}

/// Which optimizer partition a parameter tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Base,
    Adapter,
    Head,
}

/// Affine map `y = x W^T + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { weight: Array2::zeros((out_dim, in_dim)), bias: Array1::zeros(out_dim) }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((out_dim, in_dim), |_| rng.random_range(-limit..limit)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. `x`.
    fn backward(&self, x: &Array2<f64>, d_out: &Array2<f64>, grad: Option<&mut Dense>) -> Array2<f64> {
        if let Some(g) = grad {
            g.weight += &d_out.t().dot(x);
            g.bias += &d_out.sum_axis(Axis(0));
        }
        d_out.dot(&self.weight)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.weight.nrows(), self.weight.ncols())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub down: Dense,
    pub up: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    /// `hidden x 3*input` map over the `[prev, cur, next]` window.
    pub mix: Dense,
    pub adapter: Option<Adapter>,
}

impl EncoderLayer {
    pub fn zeros_like(&self) -> Self {
        Self {
            mix: self.mix.zeros_like(),
            adapter: self.adapter.as_ref().map(|a| Adapter { down: a.down.zeros_like(), up: a.up.zeros_like() }),
        }
    }
}

/// Trainable hashed-feature context encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableEncoder {
    pub embeddings: Array2<f64>,
    pub layers: Vec<EncoderLayer>,
    hash_buckets: usize,
}

const SHAPES: usize = 6;

/// Feature rows feeding one token: word, suffix, shape.
fn token_features(token: &str, buckets: usize) -> [usize; 3] {
    let lower = token.to_lowercase();
    let suffix: String = {
        let chars: Vec<char> = lower.chars().collect();
        chars[chars.len().saturating_sub(3)..].iter().collect()
    };
    let word = (stable_hash_str(&["w", &lower]) % buckets as u64) as usize;
    let suf = (stable_hash_str(&["s", &suffix]) % buckets as u64) as usize;
    [word, suf, buckets + word_shape(token)]
}

fn word_shape(token: &str) -> usize {
    let mut chars = token.chars();
    let first = chars.next().unwrap_or(' ');
    if token.chars().any(|c| c.is_ascii_digit()) {
        3
    } else if token.chars().all(|c| !c.is_alphanumeric()) {
        4
    } else if token.chars().all(|c| !c.is_alphabetic() || c.is_lowercase()) {
        0
    } else if first.is_uppercase() && chars.all(|c| !c.is_alphabetic() || c.is_lowercase()) {
        1
    } else if token.chars().all(|c| !c.is_alphabetic() || c.is_uppercase()) {
        2
    } else {
        5
    }
}

/// `[x_{i-1}, x_i, x_{i+1}]` rows with zero padding at the edges.
fn context_window(x: &Array2<f64>) -> Array2<f64> {
    let (k, d) = x.dim();
    let mut c = Array2::zeros((k, 3 * d));
    c.slice_mut(s![1.., 0..d]).assign(&x.slice(s![..k - 1, ..]));
    c.slice_mut(s![.., d..2 * d]).assign(x);
    c.slice_mut(s![..k - 1, 2 * d..]).assign(&x.slice(s![1.., ..]));
    c
}

fn context_window_backward(dc: &Array2<f64>, d: usize) -> Array2<f64> {
    let k = dc.nrows();
    let mut dx = dc.slice(s![.., d..2 * d]).to_owned();
    // c[i] holds x[i-1] in its first block and x[i+1] in its last block.
    {
        let mut lower = dx.slice_mut(s![..k - 1, ..]);
        lower += &dc.slice(s![1.., 0..d]);
    }
    {
        let mut upper = dx.slice_mut(s![1.., ..]);
        upper += &dc.slice(s![..k - 1, 2 * d..]);
    }
    dx
}

struct LayerTrace {
    input: Array2<f64>,
    window: Array2<f64>,
    activation: Array2<f64>,
    adapter_hidden: Option<Array2<f64>>,
}

/// Intermediate values kept from a forward pass for backpropagation.
pub struct EncoderTrace {
    features: Vec<[usize; 3]>,
    layers: Vec<LayerTrace>,
}

/// Parameter gradients for a [`TrainableEncoder`]; embedding rows are sparse.
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub embeddings: BTreeMap<usize, Array1<f64>>,
    pub layers: Vec<EncoderLayer>,
}

impl EncoderGrads {
    pub fn layer_params(&self) -> Vec<(ParamGroup, &[f64])> {
        self.layers.iter().flat_map(layer_slices).collect()
    }

    pub fn scale(&mut self, factor: f64) {
        for row in self.embeddings.values_mut() {
            *row *= factor;
        }
        for layer in &mut self.layers {
            for (_, slice) in layer_slices_mut(layer) {
                slice.iter_mut().for_each(|x| *x *= factor);
            }
        }
    }

    pub fn add(&mut self, other: &EncoderGrads) {
        for (row, g) in &other.embeddings {
            match self.embeddings.get_mut(row) {
                Some(acc) => *acc += g,
                None => {
                    self.embeddings.insert(*row, g.clone());
                }
            }
        }
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            for ((_, a), (_, b)) in layer_slices_mut(mine).into_iter().zip(layer_slices(theirs)) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
    }
}

fn layer_slices(layer: &EncoderLayer) -> Vec<(ParamGroup, &[f64])> {
    let mut out: Vec<(ParamGroup, &[f64])> = vec![
        (ParamGroup::Base, layer.mix.weight.as_slice().expect("contiguous")),
        (ParamGroup::Base, layer.mix.bias.as_slice().expect("contiguous")),
    ];
    if let Some(a) = &layer.adapter {
        for dense in [&a.down, &a.up] {
            out.push((ParamGroup::Adapter, dense.weight.as_slice().expect("contiguous")));
            out.push((ParamGroup::Adapter, dense.bias.as_slice().expect("contiguous")));
        }
    }
    out
}

fn layer_slices_mut(layer: &mut EncoderLayer) -> Vec<(ParamGroup, &mut [f64])> {
    let mut out: Vec<(ParamGroup, &mut [f64])> = vec![
        (ParamGroup::Base, layer.mix.weight.as_slice_mut().expect("contiguous")),
        (ParamGroup::Base, layer.mix.bias.as_slice_mut().expect("contiguous")),
    ];
    if let Some(a) = &mut layer.adapter {
        for dense in [&mut a.down, &mut a.up] {
            out.push((ParamGroup::Adapter, dense.weight.as_slice_mut().expect("contiguous")));
            out.push((ParamGroup::Adapter, dense.bias.as_slice_mut().expect("contiguous")));
        }
    }
    out
}

fn layer_names(i: usize, layer: &EncoderLayer) -> Vec<String> {
    let mut names = vec![format!("layers.{i}.mix.weight"), format!("layers.{i}.mix.bias")];
    if layer.adapter.is_some() {
        for part in ["down", "up"] {
            names.push(format!("layers.{i}.adapter.{part}.weight"));
            names.push(format!("layers.{i}.adapter.{part}.bias"));
        }
    }
    names
}

impl TrainableEncoder {
    /// Base weights come from `base_seed`, adapters from `adapter_seed`.
    /// Adapter up-projections start at zero so a fresh adapter is the identity.
    pub fn new(backend: &EncoderBackend, base_seed: u64, adapter_seed: u64) -> Self {
        let d = backend.hidden_dim;
        let mut base_rng = ChaCha8Rng::seed_from_u64(base_seed);
        let mut adapter_rng = ChaCha8Rng::seed_from_u64(adapter_seed);
        let rows = backend.hash_buckets + SHAPES;
        let embeddings = Array2::from_shape_fn((rows, d), |_| base_rng.random_range(-0.1..0.1));
        let layers = (0..backend.layers)
            .map(|_| EncoderLayer {
                mix: Dense::glorot(d, 3 * d, &mut base_rng),
                adapter: backend.adapter.map(|cfg| Adapter {
                    down: Dense::glorot(cfg.bottleneck_dim, d, &mut adapter_rng),
                    up: Dense::zeros(d, cfg.bottleneck_dim),
                }),
            })
            .collect();
        Self { embeddings, layers, hash_buckets: backend.hash_buckets }
    }

    pub fn hidden_dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn forward(&self, tokens: &[String]) -> (Array2<f64>, EncoderTrace) {
        let d = self.hidden_dim();
        let features: Vec<[usize; 3]> =
            tokens.iter().map(|t| token_features(t, self.hash_buckets)).collect();
        let mut x = Array2::zeros((tokens.len(), d));
        for (i, feats) in features.iter().enumerate() {
            let mut row = x.row_mut(i);
            for &f in feats {
                row += &self.embeddings.row(f);
            }
        }
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let window = context_window(&x);
            let activation = layer.mix.forward(&window).mapv(f64::tanh);
            let (out, adapter_hidden) = match &layer.adapter {
                Some(a) => {
                    let hidden = a.down.forward(&activation).mapv(|v| v.max(0.0));
                    (&activation + &a.up.forward(&hidden), Some(hidden))
                }
                None => (activation.clone(), None),
            };
            traces.push(LayerTrace { input: x, window, activation, adapter_hidden });
            x = out;
        }
        (x, EncoderTrace { features, layers: traces })
    }

    pub fn zero_grads(&self) -> EncoderGrads {
        EncoderGrads {
            embeddings: BTreeMap::new(),
            layers: self.layers.iter().map(EncoderLayer::zeros_like).collect(),
        }
    }

    /// Backpropagates `d_out` (gradient w.r.t. the encoder output) into `grads`.
    /// With `base_frozen`, base-weight gradients are skipped but adapter
    /// gradients still flow through the frozen layers.
    pub fn backward(&self, trace: &EncoderTrace, d_out: Array2<f64>, grads: &mut EncoderGrads, base_frozen: bool) {
        let d = self.hidden_dim();
        let mut d_x = d_out;
        for ((layer, lt), lg) in self.layers.iter().zip(&trace.layers).zip(grads.layers.iter_mut()).rev() {
            let d_act = match (&layer.adapter, &lt.adapter_hidden, &mut lg.adapter) {
                (Some(a), Some(hidden), Some(ga)) => {
                    let d_hidden = a.up.backward(hidden, &d_x, Some(&mut ga.up));
                    let d_hidden = d_hidden * &hidden.mapv(|h| if h > 0.0 { 1.0 } else { 0.0 });
                    let d_from_adapter = a.down.backward(&lt.activation, &d_hidden, Some(&mut ga.down));
                    d_x + d_from_adapter
                }
                _ => d_x,
            };
            let d_pre = d_act * &lt.activation.mapv(|a| 1.0 - a * a);
            let mix_grad = if base_frozen { None } else { Some(&mut lg.mix) };
            let d_window = layer.mix.backward(&lt.window, &d_pre, mix_grad);
            debug_assert_eq!(lt.input.ncols(), d);
            d_x = context_window_backward(&d_window, d);
        }
        if base_frozen {
            return;
        }
        for (i, feats) in trace.features.iter().enumerate() {
            for &f in feats {
                grads
                    .embeddings
                    .entry(f)
                    .and_modify(|g| *g += &d_x.row(i))
                    .or_insert_with(|| d_x.row(i).to_owned());
            }
        }
    }

    pub fn layer_params(&self) -> Vec<(ParamGroup, &[f64])> {
        self.layers.iter().flat_map(layer_slices).collect()
    }

    pub fn layer_params_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        self.layers.iter_mut().flat_map(layer_slices_mut).collect()
    }

    /// `(name, shape, values)` for every tensor, embeddings first.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = vec![(
            "embeddings".into(),
            self.embeddings.shape().to_vec(),
            self.embeddings.as_slice().expect("contiguous"),
        )];
        for (i, layer) in self.layers.iter().enumerate() {
            let shapes = layer_shapes(layer);
            for ((name, (_, values)), shape) in layer_names(i, layer).into_iter().zip(layer_slices(layer)).zip(shapes) {
                out.push((name, shape, values));
            }
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, Vec<usize>, &mut [f64])> {
        let names: Vec<(String, Vec<usize>)> = self
            .layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| layer_names(i, l).into_iter().zip(layer_shapes(l)))
            .collect();
        let shape = self.embeddings.shape().to_vec();
        let mut out: Vec<(String, Vec<usize>, &mut [f64])> =
            vec![("embeddings".into(), shape, self.embeddings.as_slice_mut().expect("contiguous"))];
        let slices = self.layers.iter_mut().flat_map(layer_slices_mut);
        for ((name, shape), (_, values)) in names.into_iter().zip(slices) {
            out.push((name, shape, values));
        }
        out
    }

    /// Base weights only: embeddings and the context layers.
    pub fn base_tensors(&self) -> impl Iterator<Item = &[f64]> {
        std::iter::once(self.embeddings.as_slice().expect("contiguous")).chain(
            self.layers.iter().flat_map(|l| {
                [l.mix.weight.as_slice().expect("contiguous"), l.mix.bias.as_slice().expect("contiguous")]
            }),
        )
    }
}

fn layer_shapes(layer: &EncoderLayer) -> Vec<Vec<usize>> {
    let mut shapes = vec![layer.mix.weight.shape().to_vec(), layer.mix.bias.shape().to_vec()];
    if let Some(a) = &layer.adapter {
        for dense in [&a.down, &a.up] {
            shapes.push(dense.weight.shape().to_vec());
            shapes.push(dense.bias.shape().to_vec());
        }
    }
    shapes
}

/// Parameter-free encoder: each token maps to a pseudo-random vector seeded by
/// its FNV-1a hash, and word `i` is `v(w_i) + (v(w_{i-1}) + v(w_{i+1})) / 2`
/// with `<s>` / `</s>` standing in past the edges.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    hidden_dim: usize,
}

impl ToyEncoder {
    pub fn new(hidden_dim: usize) -> Self {
        Self { hidden_dim }
    }

    /// The hash vector of a single token, entries uniform in `[-1, 1)`.
    pub fn token_vector(&self, token: &str) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(token.as_bytes()));
        Array1::from_shape_fn(self.hidden_dim, |_| rng.random_range(-1.0..1.0))
    }

    pub fn forward(&self, tokens: &[String]) -> Array2<f64> {
        let k = tokens.len();
        let vectors: Vec<Array1<f64>> = tokens.iter().map(|t| self.token_vector(t)).collect();
        let bos = self.token_vector("<s>");
        let eos = self.token_vector("</s>");
        let mut out = Array2::zeros((k, self.hidden_dim));
        for i in 0..k {
            let prev = if i == 0 { &bos } else { &vectors[i - 1] };
            let next = if i + 1 == k { &eos } else { &vectors[i + 1] };
            out.row_mut(i).assign(&(&vectors[i] + &((prev + next) * 0.5)));
        }
        out
    }

    /// Mean of the token hash vectors.
    pub fn sentence_vector(&self, tokens: &[String]) -> Array1<f64> {
        let mut acc = Array1::zeros(self.hidden_dim);
        for t in tokens {
            acc += &self.token_vector(t);
        }
        acc / tokens.len() as f64
    }
}

/// An instantiated encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Toy(ToyEncoder),
    Trainable(TrainableEncoder),
}

impl Encoder {
    pub fn new(backend: &EncoderBackend, seed: u64) -> Self {
        match backend.kind {
            BackendKind::ToyDeterministic => Encoder::Toy(ToyEncoder::new(backend.hidden_dim)),
            BackendKind::SmallTrainable => Encoder::Trainable(TrainableEncoder::new(backend, seed, seed ^ 0xada9)),
            BackendKind::MainPretrained | BackendKind::ProxyPretrained => {
                let base_seed = stable_hash_str(&["pretrained", &backend.name]);
                Encoder::Trainable(TrainableEncoder::new(backend, base_seed, seed ^ 0xada9))
            }
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            Encoder::Toy(t) => t.hidden_dim,
            Encoder::Trainable(t) => t.hidden_dim(),
        }
    }
}

/// Encodes a sentence with `encoder`, enforcing the backend length limit.
pub fn encode(tokens: &[String], backend: &EncoderBackend, encoder: &Encoder) -> Result<Array2<f64>> {
    backend.check_length(tokens.len())?;
    Ok(match encoder {
        Encoder::Toy(t) => t.forward(tokens),
        Encoder::Trainable(t) => t.forward(tokens).0,
    })
}

pub fn check_length(backend: &EncoderBackend, len: usize) -> Result<()> {
    backend.check_length(len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn toy_is_deterministic() {
        let backend = EncoderBackend::toy(8);
        let enc = Encoder::new(&backend, 1);
        let other = Encoder::new(&backend, 99);
        let t = toks(&["Obama", "visited", "Paris"]);
        let a = encode(&t, &backend, &enc).unwrap();
        let b = encode(&t, &backend, &other).unwrap();
        assert_eq!(a.dim(), (3, 8));
        assert_eq!(a, b);
        assert_eq!(encode(&toks(&["x"]), &backend, &enc).unwrap().dim(), (1, 8));
    }

    // FNV-1a 64 of "Paris", computed independently.
    const PARIS_FNV: u64 = 0xcbb57d0e13c03ee0;

    #[test]
    fn toy_vectors_are_pinned() {
        // Token hashing must agree across processes and platforms.
        let enc = ToyEncoder::new(4);
        let v = enc.token_vector("Paris");
        let again = ToyEncoder::new(4).token_vector("Paris");
        assert_eq!(v, again);
        assert!(v.iter().all(|x| (-1.0..1.0).contains(x)));
        assert_eq!(crate::checksum::stable_hash(b"Paris"), PARIS_FNV);
    }

    #[test]
    fn registry_and_limits() {
        assert!(EncoderBackend::named("bert-base").is_err());
        let mut backend = EncoderBackend::named(TOY).unwrap();
        backend.max_tokens = 2;
        let enc = Encoder::new(&backend, 0);
        match encode(&toks(&["a", "b", "c"]), &backend, &enc) {
            Err(Error::InputTooLong { len: 3, limit: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fresh_adapter_is_identity() {
        let plain = EncoderBackend::small_trainable(6);
        let adapted = plain.clone().with_adapter(Some(AdapterConfig { bottleneck_dim: 3 }));
        let a = TrainableEncoder::new(&plain, 5, 6);
        let b = TrainableEncoder::new(&adapted, 5, 6);
        let t = toks(&["The", "cat", "sat"]);
        assert_eq!(a.forward(&t).0, b.forward(&t).0);
    }

    #[test]
    fn pretrained_base_ignores_training_seed() {
        let backend = EncoderBackend::named(PROXY).unwrap();
        let (Encoder::Trainable(a), Encoder::Trainable(b)) = (Encoder::new(&backend, 1), Encoder::new(&backend, 2)) else {
            panic!("expected trainable encoders");
        };
        assert!(a.base_tensors().eq(b.base_tensors()));
    }

    #[test]
    fn shapes() {
        assert_eq!(word_shape("paris"), 0);
        assert_eq!(word_shape("Paris"), 1);
        assert_eq!(word_shape("NATO"), 2);
        assert_eq!(word_shape("1999"), 3);
        assert_eq!(word_shape(","), 4);
        assert_eq!(word_shape("McDonald"), 5);
    }

    /// Finite-difference check of the encoder backward pass through a
    /// scalar objective `sum(out * probe)`.
    #[test]
    fn backward_matches_finite_differences() {
        let backend = EncoderBackend::small_trainable(5).with_adapter(Some(AdapterConfig { bottleneck_dim: 3 }));
        let mut enc = TrainableEncoder::new(&backend, 3, 4);
        // give the adapter non-zero up weights so its path is exercised
        for layer in &mut enc.layers {
            let a = layer.adapter.as_mut().unwrap();
            a.up.weight.mapv_inplace(|_| 0.3);
        }
        let t = toks(&["Ada", "Lovelace", "wrote", "notes"]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let probe = Array2::from_shape_fn((4, 5), |_| rng.random_range(-1.0..1.0));
        let objective = |e: &TrainableEncoder| (e.forward(&t).0 * &probe).sum();

        let (_, trace) = enc.forward(&t);
        let mut grads = enc.zero_grads();
        enc.backward(&trace, probe.clone(), &mut grads, false);

        let analytic: Vec<f64> = grads.layers.iter().flat_map(|l| layer_slices(l).into_iter().flat_map(|(_, s)| s.to_vec())).collect();
        let n = analytic.len();
        let h = 1e-6;
        for idx in (0..n).step_by(7) {
            let bump = |delta: f64| {
                let mut e = enc.clone();
                let mut seen = 0;
                for (_, slice) in e.layer_params_mut() {
                    if idx < seen + slice.len() {
                        slice[idx - seen] += delta;
                        break;
                    }
                    seen += slice.len();
                }
                objective(&e)
            };
            let numeric = (bump(h) - bump(-h)) / (2.0 * h);
            let err = (numeric - analytic[idx]).abs() / (numeric.abs().max(analytic[idx].abs()).max(1e-6));
            assert!(err < 1e-5, "param {idx}: numeric {numeric} analytic {}", analytic[idx]);
        }

        let (&row, g) = grads.embeddings.iter().next().unwrap();
        for col in 0..5 {
            let bump = |delta: f64| {
                let mut e = enc.clone();
                e.embeddings[[row, col]] += delta;
                objective(&e)
            };
            let numeric = (bump(h) - bump(-h)) / (2.0 * h);
            assert!((numeric - g[col]).abs() < 1e-6, "embedding row {row} col {col}");
        }
    }
}
