//! 8-class emotion head over the shared encoder trunk.
//!
//! The label set and its order are fixed; every probability vector in the
//! system indexes it the same way.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::nnet::{softmax, Model};
use crate::pipeline::{FrameWindow, DEFAULT_GATE_DBFS};

/// The 8 basic emotion classes, in the system-wide canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EmotionClass {
    Happiness,
    Sadness,
    Anger,
    Fear,
    Disgust,
    Surprise,
    Boredom,
    Neutrality,
}

impl EmotionClass {
    /// Canonical order; class index = position in this array.
    pub const ALL: [EmotionClass; 8] = [
        EmotionClass::Happiness,
        EmotionClass::Sadness,
        EmotionClass::Anger,
        EmotionClass::Fear,
        EmotionClass::Disgust,
        EmotionClass::Surprise,
        EmotionClass::Boredom,
        EmotionClass::Neutrality,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|c| *c == self).expect("class in ALL")
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::invalid(format!("emotion index {i} out of range 0..8")))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionClass::Happiness => "Happiness",
            EmotionClass::Sadness => "Sadness",
            EmotionClass::Anger => "Anger",
            EmotionClass::Fear => "Fear",
            EmotionClass::Disgust => "Disgust",
            EmotionClass::Surprise => "Surprise",
            EmotionClass::Boredom => "Boredom",
            EmotionClass::Neutrality => "Neutrality",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown emotion label {s:?}")))
    }
}

impl fmt::Display for EmotionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A probability distribution over the 8 classes.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionDistribution {
    probs: [f64; 8],
}

impl EmotionDistribution {
    /// Validates: entries in [0, 1], summing to 1 within 1e-9.
    pub fn new(probs: [f64; 8]) -> Result<Self> {
        for (i, p) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(p) || !p.is_finite() {
                return Err(Error::invalid(format!(
                    "probability {p} for {} outside [0, 1]",
                    EmotionClass::ALL[i]
                )));
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "probabilities sum to {sum}, expected 1 within 1e-9"
            )));
        }
        Ok(EmotionDistribution { probs })
    }

    pub fn probs(&self) -> &[f64; 8] {
        &self.probs
    }

    pub fn prob(&self, class: EmotionClass) -> f64 {
        self.probs[class.index()]
    }

    /// Most probable class and its probability; ties break to the earlier
    /// class in canonical order.
    pub fn top(&self) -> (EmotionClass, f64) {
        let mut best = 0;
        for i in 1..8 {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        (EmotionClass::ALL[best], self.probs[best])
    }

    /// Class-name-keyed map, for JSON serialization.
    pub fn to_map(&self) -> BTreeMap<String, f64> {
        EmotionClass::ALL
            .iter()
            .map(|c| (c.as_str().to_string(), self.probs[c.index()]))
            .collect()
    }

    /// Elementwise mean of several distributions (renormalized for safety).
    pub fn mean(dists: &[EmotionDistribution]) -> Result<EmotionDistribution> {
        if dists.is_empty() {
            return Err(Error::EmptyInput("no distributions to average".into()));
        }
        let mut probs = [0.0f64; 8];
        for d in dists {
            for (acc, p) in probs.iter_mut().zip(&d.probs) {
                *acc += p;
            }
        }
        let sum: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= sum;
        }
        EmotionDistribution::new(probs)
    }
}

/// Run the emotion head on a speech window: trunk features (pooled encoder
/// activations) -> dense head -> softmax.
///
/// The speech precondition is enforced with the deterministic energy gate:
/// a window below the gate threshold cannot be speech and is refused.
pub fn classify_emotion(
    window: &FrameWindow,
    trunk: &Model,
    head: &Model,
) -> Result<EmotionDistribution> {
    if window.rms_dbfs < DEFAULT_GATE_DBFS {
        return Err(Error::Precondition(format!(
            "window at {:.2} s is noise ({:.1} dBFS); emotion runs on speech only",
            window.start_time_s, window.rms_dbfs
        )));
    }
    let features = trunk.forward_pooled(&window.model_input())?;
    let logits = head.predict(&features)?;
    if logits.len() != 8 {
        return Err(Error::Model(format!(
            "emotion head produced {} logits, expected 8",
            logits.len()
        )));
    }
    let p = softmax(logits.data());
    let mut probs = [0.0f64; 8];
    probs.copy_from_slice(&p);
    EmotionDistribution::new(probs)
}
