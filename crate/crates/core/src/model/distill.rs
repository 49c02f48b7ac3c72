//! Distillation from a main model into a proxy: cross-entropy between the
//! per-token tag distributions plus squared differences of transition scores.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::crf::{entropy, CrfOutputs};
use crate::error::{Error, Result};
use crate::sentence::TagSequence;

/// Floor applied to proxy probabilities inside the log.
pub const CE_EPSILON: f64 = 1e-12;

/// Which transitions the squared-difference term compares.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionDistillation {
    /// Consecutive tag pairs along the main model's decoded path.
    #[default]
    MainPath,
    /// Every finite entry of the two transition matrices.
    FullMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Multiplier on the distillation term.
    pub distill_weight: f64,
    pub transition_mode: TransitionDistillation,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { distill_weight: 1.0, transition_mode: TransitionDistillation::MainPath }
    }
}

/// What the main model tells the proxy about one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillationSignal {
    pub sentence_id: String,
    /// `K x V` main-model tag distributions.
    pub main_unary: Array2<f64>,
    pub main_path: TagSequence,
    /// Main transition scores along `main_path` (`K - 1` values).
    pub main_path_transitions: Vec<f64>,
    /// The full main transition matrix, needed by [`TransitionDistillation::FullMatrix`].
    #[serde(default, skip_serializing_if = "Option::is_none", with = "masked_matrix")]
    pub main_transitions: Option<Array2<f64>>,
}

/// JSON has no infinities: masked (`-inf`) transition entries are written as
/// `null` and read back as `-inf`.
mod masked_matrix {
    use ndarray::Array2;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        shape: [usize; 2],
        data: Vec<Option<f64>>,
    }

    pub fn serialize<S: Serializer>(matrix: &Option<Array2<f64>>, s: S) -> Result<S::Ok, S::Error> {
        matrix
            .as_ref()
            .map(|m| Repr { shape: [m.nrows(), m.ncols()], data: m.iter().map(|&x| x.is_finite().then_some(x)).collect() })
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Array2<f64>>, D::Error> {
        Option::<Repr>::deserialize(d)?
            .map(|r| {
                let data = r.data.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect();
                Array2::from_shape_vec((r.shape[0], r.shape[1]), data).map_err(D::Error::custom)
            })
            .transpose()
    }
}

impl DistillationSignal {
    pub fn validate(&self) -> Result<()> {
        let k = self.main_unary.nrows();
        if self.main_path.len() != k || self.main_path_transitions.len() + 1 != k {
            return Err(Error::data(&self.sentence_id, "signal path length disagrees with its unary rows"));
        }
        for row in self.main_unary.rows() {
            if (row.sum() - 1.0).abs() > 1e-6 || row.iter().any(|&p| p < 0.0) {
                return Err(Error::data(&self.sentence_id, "signal unary row is not a distribution"));
            }
        }
        Ok(())
    }

    /// `sum_i H(p_main_i)`: the smallest value the cross-entropy term can take.
    pub fn entropy(&self) -> f64 {
        self.main_unary.rows().into_iter().map(entropy).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillationLoss {
    pub cross_entropy: f64,
    pub transition: f64,
}

impl DistillationLoss {
    pub fn total(&self) -> f64 {
        self.cross_entropy + self.transition
    }
}

pub fn distillation_loss(
    proxy: &CrfOutputs,
    signal: &DistillationSignal,
    mode: TransitionDistillation,
) -> Result<DistillationLoss> {
    distillation_loss_with_grad(proxy, signal, mode).map(|(loss, _, _)| loss)
}

/// Loss together with its gradient w.r.t. the proxy unary scores and the
/// proxy transition matrix. The proxy unary rows are read as tag
/// distributions.
pub fn distillation_loss_with_grad(
    proxy: &CrfOutputs,
    signal: &DistillationSignal,
    mode: TransitionDistillation,
) -> Result<(DistillationLoss, Array2<f64>, Array2<f64>)> {
    distillation_terms(&proxy.unary, &proxy.transitions, signal, mode)
}

/// As [`distillation_loss_with_grad`], with the proxy tag distributions and
/// transition scores given separately.
pub fn distillation_terms(
    proxy_probs: &Array2<f64>,
    proxy_transitions: &Array2<f64>,
    signal: &DistillationSignal,
    mode: TransitionDistillation,
) -> Result<(DistillationLoss, Array2<f64>, Array2<f64>)> {
    if proxy_probs.dim() != signal.main_unary.dim() {
        return Err(Error::Shape(format!(
            "proxy unary {:?} vs main unary {:?} for sentence {}",
            proxy_probs.dim(),
            signal.main_unary.dim(),
            signal.sentence_id
        )));
    }
    let mut d_unary = Array2::zeros(proxy_probs.dim());
    let mut cross_entropy = 0.0;
    for ((p_main, p_prx), mut d_row) in signal
        .main_unary
        .rows()
        .into_iter()
        .zip(proxy_probs.rows())
        .zip(d_unary.rows_mut())
    {
        for v in 0..p_main.len() {
            if p_main[v] == 0.0 {
                continue;
            }
            let q = p_prx[v];
            if q > CE_EPSILON {
                cross_entropy -= p_main[v] * q.ln();
                d_row[v] = -p_main[v] / q;
            } else {
                cross_entropy -= p_main[v] * CE_EPSILON.ln();
            }
        }
    }

    let mut d_trans = Array2::zeros(proxy_transitions.dim());
    let mut transition = 0.0;
    match mode {
        TransitionDistillation::MainPath => {
            let path = signal.main_path.as_slice();
            if path.len() != proxy_probs.nrows() || signal.main_path_transitions.len() + 1 != path.len() {
                return Err(Error::Shape(format!(
                    "signal path for {} does not match {} tokens",
                    signal.sentence_id,
                    proxy_probs.nrows()
                )));
            }
            for (pair, &main) in path.windows(2).zip(&signal.main_path_transitions) {
                let (a, b) = (pair[0], pair[1]);
                let diff = main - proxy_transitions[[a, b]];
                transition += diff * diff;
                d_trans[[a, b]] -= 2.0 * diff;
            }
        }
        TransitionDistillation::FullMatrix => {
            let main = signal.main_transitions.as_ref().ok_or_else(|| {
                Error::data(&signal.sentence_id, "signal lacks the full transition matrix")
            })?;
            if main.dim() != proxy_transitions.dim() {
                return Err(Error::Shape("main and proxy transition matrices differ in shape".into()));
            }
            for ((idx, &m), &p) in main.indexed_iter().zip(proxy_transitions.iter()) {
                if m.is_finite() && p.is_finite() {
                    let diff = m - p;
                    transition += diff * diff;
                    d_trans[idx] -= 2.0 * diff;
                }
            }
        }
    }
    Ok((DistillationLoss { cross_entropy, transition }, d_unary, d_trans))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn signal_from(outputs: &CrfOutputs, path: Vec<usize>) -> DistillationSignal {
        let along = path.windows(2).map(|w| outputs.transitions[[w[0], w[1]]]).collect();
        DistillationSignal {
            sentence_id: "s".into(),
            main_unary: outputs.unary.clone(),
            main_path: TagSequence(path),
            main_path_transitions: along,
            main_transitions: Some(outputs.transitions.clone()),
        }
    }

    #[test]
    fn masked_transitions_survive_json() {
        let mut trans = Array2::zeros((4, 4));
        trans[[0, 1]] = f64::NEG_INFINITY;
        trans[[2, 3]] = 0.5;
        let out = CrfOutputs::new(array![[0.6, 0.4], [0.5, 0.5]], trans).unwrap();
        let signal = signal_from(&out, vec![0, 0]);
        let json = serde_json::to_string(&signal).unwrap();
        assert!(json.contains("null"));
        assert_eq!(serde_json::from_str::<DistillationSignal>(&json).unwrap(), signal);
    }

    #[test]
    fn self_distillation_equals_entropy() {
        let unary = array![[0.7, 0.2, 0.1], [0.1, 0.1, 0.8], [0.3, 0.3, 0.4]];
        let trans = Array2::from_shape_fn((5, 5), |(a, b)| (a as f64 - b as f64) * 0.1);
        let out = CrfOutputs::new(unary, trans).unwrap();
        let signal = signal_from(&out, vec![0, 2, 2]);
        for mode in [TransitionDistillation::MainPath, TransitionDistillation::FullMatrix] {
            let loss = distillation_loss(&out, &signal, mode).unwrap();
            assert!((loss.cross_entropy - signal.entropy()).abs() < 1e-12);
            assert_eq!(loss.transition, 0.0);
        }
    }

    #[test]
    fn single_token_cross_entropy() {
        let out = CrfOutputs::new(array![[0.5, 0.5]], Array2::zeros((4, 4))).unwrap();
        let signal = DistillationSignal {
            sentence_id: "s".into(),
            main_unary: array![[1.0, 0.0]],
            main_path: TagSequence(vec![0]),
            main_path_transitions: vec![],
            main_transitions: None,
        };
        let loss = distillation_loss(&out, &signal, TransitionDistillation::MainPath).unwrap();
        assert!((loss.total() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn transition_offsets_add_squared_delta() {
        let unary = Array2::from_elem((4, 2), 0.5);
        let main = CrfOutputs::new(unary.clone(), Array2::zeros((4, 4))).unwrap();
        let signal = signal_from(&main, vec![0, 1, 1, 0]);
        let delta = 0.3;
        let proxy = CrfOutputs::new(unary, Array2::from_elem((4, 4), delta)).unwrap();
        let loss = distillation_loss(&proxy, &signal, TransitionDistillation::MainPath).unwrap();
        let expected = signal.entropy() + 3.0 * delta * delta;
        assert!((loss.total() - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let out = CrfOutputs::new(array![[1.0, 0.0]], Array2::zeros((4, 4))).unwrap();
        let signal = DistillationSignal {
            sentence_id: "s".into(),
            main_unary: array![[0.5, 0.5]],
            main_path: TagSequence(vec![0]),
            main_path_transitions: vec![],
            main_transitions: None,
        };
        let loss = distillation_loss(&out, &signal, TransitionDistillation::MainPath).unwrap();
        assert!(loss.total().is_finite());
        assert!((loss.total() + 0.5 * CE_EPSILON.ln()).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let out = CrfOutputs::new(array![[0.5, 0.5]], Array2::zeros((4, 4))).unwrap();
        let signal = DistillationSignal {
            sentence_id: "s".into(),
            main_unary: array![[0.5, 0.5], [0.5, 0.5]],
            main_path: TagSequence(vec![0, 0]),
            main_path_transitions: vec![0.0],
            main_transitions: None,
        };
        assert!(distillation_loss(&out, &signal, TransitionDistillation::MainPath).is_err());
    }
}
