//! The hierarchical streaming cascade: per-window energy gate, learned
//! noise/speech gate, gender classifier, and speaker-embedding extraction.
//!
//! Audio is cut into 1 s windows at a 0.5 s hop. Later stages run only when
//! every earlier stage admitted the window, so a noise window can never carry
//! gender, embedding, or emotion output.

use std::path::Path;

use crate::diarization::EmbeddingVector;
use crate::dsp::{log_mel_frames, AudioBuffer, FrameConfig};
use crate::emotion::{classify_emotion, EmotionDistribution};
use crate::error::{Error, Result};
use crate::nnet::{softmax, Layer, Model, Tensor};
use crate::synth::{Gender, VadLabel};

/// Analysis window length in seconds.
pub const WINDOW_S: f64 = 1.0;
/// Hop between window starts in seconds.
pub const HOP_S: f64 = 0.5;
/// Energy-gate threshold: windows quieter than this are noise by definition.
pub const DEFAULT_GATE_DBFS: f64 = -60.0;
/// Embedding dimensionality produced by the encoders.
pub const EMBEDDING_DIM: usize = 32;

/// RMS level of raw samples in dBFS; silence is negative infinity.
pub fn rms_dbfs(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return f64::NEG_INFINITY;
    }
    let rms = (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt();
    if rms <= 0.0 {
        f64::NEG_INFINITY
    } else {
        20.0 * rms.log10()
    }
}

/// One analysis window: its mel patch and raw-signal level.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameWindow {
    /// Log-mel patch shaped `[1, n_mels, n_frames]` (channel, mel, time).
    pub mel_patch: Tensor,
    pub start_time_s: f64,
    /// RMS of the window's raw samples in dBFS.
    pub rms_dbfs: f64,
}

impl FrameWindow {
    /// Build a window from `window_len` raw samples starting at
    /// `start_time_s`, using `cfg` for the mel geometry.
    pub fn from_samples(
        samples: &[f64],
        sample_rate_hz: u32,
        start_time_s: f64,
        cfg: &FrameConfig,
    ) -> Result<Self> {
        let audio = AudioBuffer::new(samples.to_vec(), sample_rate_hz)?;
        let mel = log_mel_frames(&audio, cfg)?;
        let n_frames = mel.frames.len();
        if n_frames == 0 {
            return Err(Error::EmptyInput(
                "window shorter than one analysis frame".into(),
            ));
        }
        let n_mels = mel.frames[0].len();
        // Transpose [frame][mel] to channel-major [1, mel, frame].
        let mut data = vec![0.0f64; n_mels * n_frames];
        for (t, frame) in mel.frames.iter().enumerate() {
            for (m, v) in frame.iter().enumerate() {
                data[m * n_frames + t] = *v;
            }
        }
        Ok(FrameWindow {
            mel_patch: Tensor::from_vec(&[1, n_mels, n_frames], data)?,
            start_time_s,
            rms_dbfs: rms_dbfs(samples),
        })
    }

    /// Standardized copy of the mel patch (zero mean, unit variance over the
    /// whole patch) — the models' input convention for every stage.
    pub fn model_input(&self) -> Tensor {
        let data = self.mel_patch.data();
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(1e-6);
        let standardized: Vec<f64> = data.iter().map(|v| (v - mean) / std).collect();
        Tensor::from_vec(self.mel_patch.shape(), standardized).expect("same shape")
    }
}

/// Verdict of the deterministic energy pre-filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Candidate,
    Rejected,
}

/// Reject windows whose raw RMS falls below `threshold_dbfs`.
pub fn energy_gate(window: &FrameWindow, threshold_dbfs: f64) -> Gate {
    if window.rms_dbfs < threshold_dbfs {
        Gate::Rejected
    } else {
        Gate::Candidate
    }
}

/// Run a 2-class head and return (winning index, its probability).
fn classify_2class(window: &FrameWindow, model: &Model, what: &str) -> Result<(usize, f64)> {
    let logits = model.predict(&window.model_input())?;
    if logits.len() != 2 {
        return Err(Error::Model(format!(
            "{what} model produced {} logits, expected 2",
            logits.len()
        )));
    }
    let p = softmax(logits.data());
    let winner = if p[1] > p[0] { 1 } else { 0 };
    Ok((winner, p[winner]))
}

/// Learned noise/speech decision. Class order: noise = 0, speech = 1.
pub fn classify_vad(window: &FrameWindow, model: &Model) -> Result<(VadLabel, f64)> {
    let (idx, p) = classify_2class(window, model, "vad")?;
    Ok((VadLabel::from_index(idx)?, p))
}

/// Learned gender decision. Class order: male = 0, female = 1.
///
/// Callable only on windows that passed the energy gate; the learned VAD
/// verdict is enforced by the cascade driver.
pub fn classify_gender(window: &FrameWindow, model: &Model) -> Result<(Gender, f64)> {
    if window.rms_dbfs < DEFAULT_GATE_DBFS {
        return Err(Error::Precondition(format!(
            "window at {:.2} s is noise ({:.1} dBFS); gender runs on speech only",
            window.start_time_s, window.rms_dbfs
        )));
    }
    let (idx, p) = classify_2class(window, model, "gender")?;
    Ok((Gender::from_index(idx)?, p))
}

/// Extract the speaker embedding for a speech window.
pub fn embed_frame(window: &FrameWindow, encoder: &Model) -> Result<EmbeddingVector> {
    let out = encoder.predict(&window.model_input())?;
    EmbeddingVector::new(out.data().to_vec())
}

/// The full annotation the cascade produces for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAnnotation {
    pub window: FrameWindow,
    /// Noise/speech label with the winning probability.
    pub vad: (VadLabel, f64),
    pub gender: Option<(Gender, f64)>,
    pub embedding: Option<EmbeddingVector>,
    pub emotion: Option<EmotionDistribution>,
}

impl FrameAnnotation {
    pub fn is_speech(&self) -> bool {
        self.vad.0 == VadLabel::Speech
    }
}

/// All models of the cascade plus the gate threshold.
#[derive(Debug, Clone)]
pub struct CascadeBundle {
    pub vad: Model,
    pub gender: Model,
    /// Shared encoder: fallback route and the emotion trunk.
    pub encoder_shared: Model,
    pub encoder_male: Model,
    pub encoder_female: Model,
    pub emotion_head: Option<Model>,
    pub gate_threshold_dbfs: f64,
}

/// Checkpoint file names inside a bundle directory.
pub const VAD_FILE: &str = "vad.asya";
pub const GENDER_FILE: &str = "gender.asya";
pub const ENCODER_SHARED_FILE: &str = "encoder_shared.asya";
pub const ENCODER_MALE_FILE: &str = "encoder_male.asya";
pub const ENCODER_FEMALE_FILE: &str = "encoder_female.asya";
pub const EMOTION_HEAD_FILE: &str = "emotion_head.asya";

/// The 2-class classifier architecture used by the VAD and gender stages.
pub fn make_classifier_model(seed: u64) -> Model {
    Model::new(
        vec![
            Layer::conv2d("c1", 1, 8, 3, 2),
            Layer::Relu,
            Layer::conv2d("c2", 8, 16, 3, 2),
            Layer::Relu,
            Layer::GlobalAvgPool,
            Layer::dense("fc", 16, 2),
        ],
        seed,
    )
    .expect("classifier architecture is valid")
}

/// The speaker-embedding encoder architecture.
pub fn make_encoder_model(seed: u64) -> Model {
    Model::new(
        vec![
            Layer::conv2d("c1", 1, 8, 3, 2),
            Layer::Relu,
            Layer::conv2d("c2", 8, 16, 3, 2),
            Layer::Relu,
            Layer::conv2d("c3", 16, 32, 3, 2),
            Layer::Relu,
            Layer::GlobalAvgPool,
            Layer::dense("fc", EMBEDDING_DIM, EMBEDDING_DIM),
            Layer::L2Normalize,
        ],
        seed,
    )
    .expect("encoder architecture is valid")
}

/// The emotion head: one dense layer over the trunk's pooled features.
pub fn make_emotion_head(seed: u64) -> Model {
    Model::new(vec![Layer::dense("head", EMBEDDING_DIM, 8)], seed).expect("head is valid")
}

impl CascadeBundle {
    /// A freshly initialized (untrained) bundle; used as the training start
    /// point and for property tests that must not depend on training.
    pub fn random_init(seed: u64) -> Self {
        CascadeBundle {
            vad: make_classifier_model(seed.wrapping_add(1)),
            gender: make_classifier_model(seed.wrapping_add(2)),
            encoder_shared: make_encoder_model(seed.wrapping_add(3)),
            encoder_male: make_encoder_model(seed.wrapping_add(4)),
            encoder_female: make_encoder_model(seed.wrapping_add(5)),
            emotion_head: Some(make_emotion_head(seed.wrapping_add(6))),
            gate_threshold_dbfs: DEFAULT_GATE_DBFS,
        }
    }

    /// Write every model to its checkpoint file under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.vad.save(&dir.join(VAD_FILE))?;
        self.gender.save(&dir.join(GENDER_FILE))?;
        self.encoder_shared.save(&dir.join(ENCODER_SHARED_FILE))?;
        self.encoder_male.save(&dir.join(ENCODER_MALE_FILE))?;
        self.encoder_female.save(&dir.join(ENCODER_FEMALE_FILE))?;
        if let Some(head) = &self.emotion_head {
            head.save(&dir.join(EMOTION_HEAD_FILE))?;
        }
        Ok(())
    }

    /// Load a bundle from a checkpoint directory. The per-gender encoders
    /// are optional; when absent the shared encoder serves both routes.
    /// The emotion head is optional.
    pub fn load(dir: &Path) -> Result<Self> {
        let vad = Model::load(&dir.join(VAD_FILE))?;
        let gender = Model::load(&dir.join(GENDER_FILE))?;
        let encoder_shared = Model::load(&dir.join(ENCODER_SHARED_FILE))?;
        let load_opt = |name: &str| -> Result<Option<Model>> {
            let path = dir.join(name);
            if path.exists() {
                Ok(Some(Model::load(&path)?))
            } else {
                Ok(None)
            }
        };
        let encoder_male = load_opt(ENCODER_MALE_FILE)?.unwrap_or_else(|| encoder_shared.clone());
        let encoder_female =
            load_opt(ENCODER_FEMALE_FILE)?.unwrap_or_else(|| encoder_shared.clone());
        let emotion_head = load_opt(EMOTION_HEAD_FILE)?;
        Ok(CascadeBundle {
            vad,
            gender,
            encoder_shared,
            encoder_male,
            encoder_female,
            emotion_head,
            gate_threshold_dbfs: DEFAULT_GATE_DBFS,
        })
    }

    /// The encoder serving a given gender route.
    pub fn encoder_for(&self, gender: Gender) -> &Model {
        match gender {
            Gender::Male => &self.encoder_male,
            Gender::Female => &self.encoder_female,
        }
    }
}

/// Run the full cascade on one window.
pub fn annotate_window(window: FrameWindow, bundle: &CascadeBundle) -> Result<FrameAnnotation> {
    if energy_gate(&window, bundle.gate_threshold_dbfs) == Gate::Rejected {
        return Ok(FrameAnnotation {
            window,
            vad: (VadLabel::Noise, 1.0),
            gender: None,
            embedding: None,
            emotion: None,
        });
    }
    let vad = classify_vad(&window, &bundle.vad)?;
    if vad.0 == VadLabel::Noise {
        return Ok(FrameAnnotation {
            window,
            vad,
            gender: None,
            embedding: None,
            emotion: None,
        });
    }
    let gender = classify_gender(&window, &bundle.gender)?;
    let embedding = embed_frame(&window, bundle.encoder_for(gender.0))?;
    let emotion = match &bundle.emotion_head {
        Some(head) => Some(classify_emotion(&window, &bundle.encoder_shared, head)?),
        None => None,
    };
    Ok(FrameAnnotation {
        window,
        vad,
        gender: Some(gender),
        embedding: Some(embedding),
        emotion,
    })
}

/// Incremental window-by-window processor. Push samples as they arrive;
/// annotations come out as soon as a full window is available. Feeding the
/// same audio in any chunking yields the same annotations as
/// [`process_stream`].
pub struct StreamProcessor<'a> {
    bundle: &'a CascadeBundle,
    cfg: FrameConfig,
    sample_rate_hz: u32,
    window_len: usize,
    hop_len: usize,
    /// Ring of not-yet-consumed samples; `buf[0]` is absolute index `buf_start`.
    buf: Vec<f64>,
    buf_start: u64,
    /// Absolute sample index where the next window begins.
    next_window_start: u64,
}

impl<'a> StreamProcessor<'a> {
    pub fn new(bundle: &'a CascadeBundle, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        let cfg = FrameConfig::default();
        cfg.validate(sample_rate_hz)?;
        Ok(StreamProcessor {
            bundle,
            cfg,
            sample_rate_hz,
            window_len: (WINDOW_S * f64::from(sample_rate_hz)).round() as usize,
            hop_len: (HOP_S * f64::from(sample_rate_hz)).round() as usize,
            buf: Vec::new(),
            buf_start: 0,
            next_window_start: 0,
        })
    }

    /// Feed samples; returns annotations for every window completed by them.
    pub fn push_samples(&mut self, samples: &[f64]) -> Result<Vec<FrameAnnotation>> {
        self.buf.extend_from_slice(samples);
        let mut out = Vec::new();
        loop {
            let have_end = self.buf_start + self.buf.len() as u64;
            if self.next_window_start + self.window_len as u64 > have_end {
                break;
            }
            let rel = (self.next_window_start - self.buf_start) as usize;
            let window_samples = &self.buf[rel..rel + self.window_len];
            let start_time_s = self.next_window_start as f64 / f64::from(self.sample_rate_hz);
            let window = FrameWindow::from_samples(
                window_samples,
                self.sample_rate_hz,
                start_time_s,
                &self.cfg,
            )?;
            out.push(annotate_window(window, self.bundle)?);
            self.next_window_start += self.hop_len as u64;
            // Drop samples no future window needs.
            let drop_n = (self.next_window_start - self.buf_start) as usize;
            if drop_n > 0 {
                self.buf.drain(..drop_n.min(self.buf.len()));
                self.buf_start = self.next_window_start.min(have_end);
            }
        }
        Ok(out)
    }
}

/// Batch entry point: annotate every full window of `audio` in time order.
///
/// Errors with [`Error::EmptyInput`] when the audio is shorter than one
/// window.
pub fn process_stream(audio: &AudioBuffer, bundle: &CascadeBundle) -> Result<Vec<FrameAnnotation>> {
    let window_len = (WINDOW_S * f64::from(audio.sample_rate_hz)).round() as usize;
    if audio.samples.len() < window_len {
        return Err(Error::EmptyInput(format!(
            "{} samples is shorter than one {window_len}-sample window",
            audio.samples.len()
        )));
    }
    let mut proc = StreamProcessor::new(bundle, audio.sample_rate_hz)?;
    proc.push_samples(&audio.samples)
}
