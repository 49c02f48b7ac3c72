use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::crf::{bio_mask, log_softmax_backward, log_softmax_rows, softmax_backward, softmax_rows, CrfOutputs};
use super::distill::{distillation_terms, DistillationSignal, LossConfig};
use super::encoder::{check_length, encode, Dense, Encoder, EncoderBackend, EncoderGrads, ParamGroup};
use crate::checksum::sha256_hex;
use crate::error::{Error, Result};
use crate::labels::{LabelSet, TagId};
use crate::sentence::{Sentence, TagSequence};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_trained: usize,
    pub optimizer_steps: usize,
    pub optimizer: String,
    pub seed: u64,
    /// Hash of the sorted sentence ids the model was last trained on.
    pub trained_on: Option<String>,
}

/// How head outputs become CRF unary scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnaryActivation {
    /// Tag probabilities `softmax(FFN(x_i))`, each in `[0, 1]`.
    #[default]
    Softmax,
    /// Log tag probabilities. Unlike probabilities these are unbounded below,
    /// so token evidence can outweigh a strong transition prior.
    LogSoftmax,
}

/// Encoder + feed-forward head + CRF transitions over a label set.
#[derive(Debug, Clone)]
pub struct SequenceLabeler {
    pub backend: EncoderBackend,
    pub encoder: Encoder,
    /// `|V| x hidden` map from word vectors to tag logits.
    pub head: Dense,
    /// Raw transition parameters; masked entries are overridden with `-inf`.
    pub transitions: Array2<f64>,
    pub labels: LabelSet,
    pub unary: UnaryActivation,
    mask: Option<Array2<bool>>,
    pub meta: TrainingMeta,
}

/// Gradients for every trainable tensor of a [`SequenceLabeler`].
#[derive(Debug, Clone)]
pub struct LabelerGrads {
    pub encoder: Option<EncoderGrads>,
    pub head: Dense,
    pub transitions: Array2<f64>,
}

impl LabelerGrads {
    pub fn scale(&mut self, factor: f64) {
        if let Some(e) = &mut self.encoder {
            e.scale(factor);
        }
        self.head.weight *= factor;
        self.head.bias *= factor;
        self.transitions *= factor;
    }

    pub fn add(&mut self, other: &LabelerGrads) {
        if let (Some(mine), Some(theirs)) = (&mut self.encoder, &other.encoder) {
            mine.add(theirs);
        }
        self.head.weight += &other.head.weight;
        self.head.bias += &other.head.bias;
        self.transitions += &other.transitions;
    }

    /// Dense tensors in the same order as [`SequenceLabeler::dense_params_mut`].
    pub fn dense_params(&self) -> Vec<(ParamGroup, &[f64])> {
        let mut out = self.encoder.as_ref().map(EncoderGrads::layer_params).unwrap_or_default();
        out.push((ParamGroup::Head, self.head.weight.as_slice().expect("contiguous")));
        out.push((ParamGroup::Head, self.head.bias.as_slice().expect("contiguous")));
        out.push((ParamGroup::Head, self.transitions.as_slice().expect("contiguous")));
        out
    }
}

impl SequenceLabeler {
    pub fn new(backend: EncoderBackend, labels: LabelSet, seed: u64, mask_bio: bool) -> Self {
        let encoder = Encoder::new(&backend, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4ead);
        let v = labels.num_tags();
        let head = Dense::glorot(v, encoder.hidden_dim(), &mut rng);
        let mask = mask_bio.then(|| bio_mask(&labels));
        Self {
            backend,
            encoder,
            head,
            transitions: Array2::zeros((v + 2, v + 2)),
            labels,
            unary: UnaryActivation::Softmax,
            mask,
            meta: TrainingMeta { seed, optimizer: "adam".into(), ..Default::default() },
        }
    }

    pub fn with_unary(mut self, unary: UnaryActivation) -> Self {
        self.unary = unary;
        self
    }

    pub fn mask_bio(&self) -> bool {
        self.mask.is_some()
    }

    pub fn num_tags(&self) -> usize {
        self.labels.num_tags()
    }

    pub fn encode(&self, sentence: &Sentence) -> Result<Array2<f64>> {
        encode(&sentence.tokens, &self.backend, &self.encoder)
    }

    fn logits(&self, embeddings: &Array2<f64>) -> Result<Array2<f64>> {
        if embeddings.ncols() != self.head.weight.ncols() {
            return Err(Error::Shape(format!(
                "embedding width {} does not match head input width {}",
                embeddings.ncols(),
                self.head.weight.ncols()
            )));
        }
        Ok(self.head.forward(embeddings))
    }

    /// `softmax(FFN(x_i))` for every row of `embeddings`.
    pub fn tag_probabilities(&self, embeddings: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.logits(embeddings)?))
    }

    /// CRF unary scores for every row of `embeddings`: the tag probabilities,
    /// or their logarithms under [`UnaryActivation::LogSoftmax`].
    pub fn emission_scores(&self, embeddings: &Array2<f64>) -> Result<Array2<f64>> {
        let logits = self.logits(embeddings)?;
        Ok(match self.unary {
            UnaryActivation::Softmax => softmax_rows(&logits),
            UnaryActivation::LogSoftmax => log_softmax_rows(&logits),
        })
    }

    /// Transition scores with the BIO mask applied.
    pub fn transition_scores(&self) -> Array2<f64> {
        let mut t = self.transitions.clone();
        if let Some(mask) = &self.mask {
            t.zip_mut_with(mask, |x, &ok| {
                if !ok {
                    *x = f64::NEG_INFINITY
                }
            });
        }
        t
    }

    pub fn outputs(&self, sentence: &Sentence) -> Result<CrfOutputs> {
        let x = self.encode(sentence)?;
        CrfOutputs::new(self.emission_scores(&x)?, self.transition_scores())
    }

    pub fn predict(&self, sentence: &Sentence) -> Result<TagSequence> {
        Ok(TagSequence(self.outputs(sentence)?.viterbi()))
    }

    /// Word vectors and tag distributions, as used by gradient embeddings.
    pub fn token_view(&self, sentence: &Sentence) -> Result<(Array2<f64>, Array2<f64>)> {
        let x = self.encode(sentence)?;
        let p = self.tag_probabilities(&x)?;
        Ok((x, p))
    }

    /// Sentence-level vector: the mean of the final word vectors for trainable
    /// encoders, the mean token hash vector for the toy encoder.
    pub fn sentence_embedding(&self, sentence: &Sentence) -> Result<Array1<f64>> {
        check_length(&self.backend, sentence.len())?;
        match &self.encoder {
            Encoder::Toy(t) => Ok(t.sentence_vector(&sentence.tokens)),
            Encoder::Trainable(_) => Ok(self.encode(sentence)?.mean_axis(Axis(0)).expect("non-empty")),
        }
    }

    /// Distillation signals for `sentences`; a pure read of this model.
    pub fn compute_signal(&self, sentences: &[Sentence]) -> Result<Vec<DistillationSignal>> {
        let transitions = self.transition_scores();
        sentences
            .iter()
            .map(|s| {
                let x = self.encode(s)?;
                let probs = self.tag_probabilities(&x)?;
                let out = CrfOutputs::new(self.emission_scores(&x)?, transitions.clone())?;
                let path = out.viterbi();
                let along: Vec<f64> = path.windows(2).map(|w| transitions[[w[0], w[1]]]).collect();
                Ok(DistillationSignal {
                    sentence_id: s.id.clone(),
                    main_unary: probs,
                    main_path: TagSequence(path),
                    main_path_transitions: along,
                    main_transitions: Some(transitions.clone()),
                })
            })
            .collect()
    }

    pub fn zero_grads(&self) -> LabelerGrads {
        LabelerGrads {
            encoder: match &self.encoder {
                Encoder::Trainable(t) => Some(t.zero_grads()),
                Encoder::Toy(_) => None,
            },
            head: self.head.zeros_like(),
            transitions: Array2::zeros(self.transitions.dim()),
        }
    }

    /// Loss `L_task + w * L_dist` for one sentence and its gradients.
    pub fn loss_and_grads(
        &self,
        sentence: &Sentence,
        gold: Option<&[TagId]>,
        signal: Option<&DistillationSignal>,
        config: &LossConfig,
        base_frozen: bool,
    ) -> Result<(f64, LabelerGrads)> {
        if gold.is_none() && signal.is_none() {
            return Err(Error::Usage("a loss needs gold tags, a distillation signal, or both".into()));
        }
        check_length(&self.backend, sentence.len())?;
        let (x, trace) = match &self.encoder {
            Encoder::Trainable(t) => {
                let (x, trace) = t.forward(&sentence.tokens);
                (x, Some(trace))
            }
            Encoder::Toy(t) => (t.forward(&sentence.tokens), None),
        };
        let logits = self.logits(&x)?;
        let probs = softmax_rows(&logits);
        let unary = match self.unary {
            UnaryActivation::Softmax => probs.clone(),
            UnaryActivation::LogSoftmax => log_softmax_rows(&logits),
        };
        let outputs = CrfOutputs::new(unary, self.transition_scores())?;

        let mut loss = 0.0;
        // Gradients w.r.t. the CRF unary scores and w.r.t. the probabilities.
        let mut d_unary = Array2::zeros(outputs.unary.dim());
        let mut d_probs = Array2::zeros(probs.dim());
        let mut d_trans = Array2::zeros(self.transitions.dim());
        if let Some(gold) = gold {
            let (l, du, dt) = outputs
                .nll_with_grad(gold)
                .map_err(|_| Error::data(&sentence.id, "gold path uses a masked transition"))?;
            loss += l;
            d_unary += &du;
            d_trans += &dt;
        }
        if let Some(signal) = signal {
            let (l, dp, dt) = distillation_terms(&probs, &outputs.transitions, signal, config.transition_mode)?;
            loss += config.distill_weight * l.total();
            d_probs.scaled_add(config.distill_weight, &dp);
            d_trans.scaled_add(config.distill_weight, &dt);
        }

        let mut grads = self.zero_grads();
        if let Some(mask) = &self.mask {
            d_trans.zip_mut_with(mask, |g, &ok| {
                if !ok {
                    *g = 0.0
                }
            });
        }
        grads.transitions = d_trans;
        let d_logits = match self.unary {
            UnaryActivation::Softmax => softmax_backward(&probs, &(d_unary + &d_probs)),
            UnaryActivation::LogSoftmax => log_softmax_backward(&probs, &d_unary) + softmax_backward(&probs, &d_probs),
        };
        grads.head.weight = d_logits.t().dot(&x);
        grads.head.bias = d_logits.sum_axis(Axis(0));
        if let (Encoder::Trainable(enc), Some(trace), Some(eg)) = (&self.encoder, trace, grads.encoder.as_mut()) {
            let d_x = d_logits.dot(&self.head.weight);
            enc.backward(&trace, d_x, eg, base_frozen);
        }
        Ok((loss, grads))
    }

    /// Dense trainable tensors (everything but the embedding table), in a
    /// fixed order shared with [`LabelerGrads::dense_params`].
    pub fn dense_params_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out: Vec<(ParamGroup, &mut [f64])> = match &mut self.encoder {
            Encoder::Trainable(t) => t.layer_params_mut(),
            Encoder::Toy(_) => Vec::new(),
        };
        out.push((ParamGroup::Head, self.head.weight.as_slice_mut().expect("contiguous")));
        out.push((ParamGroup::Head, self.head.bias.as_slice_mut().expect("contiguous")));
        out.push((ParamGroup::Head, self.transitions.as_slice_mut().expect("contiguous")));
        out
    }

    /// `(name, shape, values)` for every tensor.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = match &self.encoder {
            Encoder::Trainable(t) => t.named_tensors(),
            Encoder::Toy(_) => Vec::new(),
        };
        out.push(("head.weight".into(), self.head.weight.shape().to_vec(), self.head.weight.as_slice().expect("contiguous")));
        out.push(("head.bias".into(), self.head.bias.shape().to_vec(), self.head.bias.as_slice().expect("contiguous")));
        out.push(("transitions".into(), self.transitions.shape().to_vec(), self.transitions.as_slice().expect("contiguous")));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, Vec<usize>, &mut [f64])> {
        let mut out = match &mut self.encoder {
            Encoder::Trainable(t) => t.named_tensors_mut(),
            Encoder::Toy(_) => Vec::new(),
        };
        let hw = self.head.weight.shape().to_vec();
        let hb = self.head.bias.shape().to_vec();
        let tr = self.transitions.shape().to_vec();
        out.push(("head.weight".into(), hw, self.head.weight.as_slice_mut().expect("contiguous")));
        out.push(("head.bias".into(), hb, self.head.bias.as_slice_mut().expect("contiguous")));
        out.push(("transitions".into(), tr, self.transitions.as_slice_mut().expect("contiguous")));
        out
    }

    /// SHA-256 over the base encoder weights (empty for the toy encoder).
    pub fn base_weights_hash(&self) -> String {
        let mut bytes = Vec::new();
        if let Encoder::Trainable(t) = &self.encoder {
            for tensor in t.base_tensors() {
                bytes.extend(tensor.iter().flat_map(|x| x.to_le_bytes()));
            }
        }
        sha256_hex(&bytes)
    }

    /// SHA-256 over every tensor; identifies a checkpoint.
    pub fn fingerprint(&self) -> String {
        let mut bytes = format!("{:?}", self.unary).into_bytes();
        for (name, _, values) in self.named_tensors() {
            bytes.extend(name.as_bytes());
            bytes.extend(values.iter().flat_map(|x| x.to_le_bytes()));
        }
        sha256_hex(&bytes)
    }
}

/// `softmax(FFN(x_i))` rows for precomputed embeddings.
pub fn emission_scores(embeddings: &Array2<f64>, labeler: &SequenceLabeler) -> Result<Array2<f64>> {
    labeler.emission_scores(embeddings)
}

/// `L_task + L_dist` over whichever terms are supplied.
pub fn total_loss(
    outputs: &CrfOutputs,
    gold: Option<&[TagId]>,
    signal: Option<&DistillationSignal>,
    config: &LossConfig,
) -> Result<f64> {
    if gold.is_none() && signal.is_none() {
        return Err(Error::Usage("total_loss needs gold tags, a distillation signal, or both".into()));
    }
    let task = gold.map(|g| outputs.nll(g)).transpose()?.unwrap_or(0.0);
    let dist = signal
        .map(|s| super::distill::distillation_loss(outputs, s, config.transition_mode))
        .transpose()?
        .map_or(0.0, |d| d.total());
    Ok(task + config.distill_weight * dist)
}
