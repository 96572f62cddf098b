//! Python bindings for the asya voice-analysis toolkit.
//!
//! The module is a thin veneer over `asya-core`: plain lists and dicts in,
//! the same audited Rust paths underneath. It exposes the numeric kernels
//! (mel scale, FFT, log-mel), the synthetic corpus generator, cascade
//! training/evaluation, the trained [`Bundle`] with streaming annotation and
//! full WAV analysis, and the online diarization [`Registry`].
//!
//! Build with `cargo build -p asya-py`; `python/smoke_test.py` shows how to
//! import the resulting shared library without a packaging step.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use asya_core::diarization::{
    assign_speaker, build_segments, diarize, enroll_or_update, Assignment, EmbeddingVector,
    SpeakerRegistry, DEFAULT_D_NEW, DEFAULT_TAU,
};
use asya_core::dsp::{self, AudioBuffer, FrameConfig};
use asya_core::emotion::EmotionClass;
use asya_core::eval::evaluate_accuracy;
use asya_core::metrics::{attach_tempo, conversation_metrics};
use asya_core::pipeline::{
    process_stream, CascadeBundle, FrameAnnotation, EMBEDDING_DIM, HOP_S, WINDOW_S,
};
use asya_core::report::{build_report, Report, SCHEMA};
use asya_core::synth::{self, CorpusConfig, CorpusManifest, SAMPLE_RATE_HZ};
use asya_core::train::{load_dataset, train_cascade, TrainConfig};
use asya_core::wav;
use asya_core::Error;

/// Map core errors onto idiomatic Python exception types: bad inputs and
/// configurations become `ValueError`, I/O failures `OSError`, everything
/// else (training/model/file-format faults) `RuntimeError`.
fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Io(_) => PyIOError::new_err(msg),
        Error::InvalidArgument(_)
        | Error::Config(_)
        | Error::EmptyInput(_)
        | Error::Precondition(_)
        | Error::Shape { .. }
        | Error::TooShort(_) => PyValueError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

/// Convert a frequency in hertz to mels (HTK formula).
#[pyfunction]
fn hz_to_mel(hz: f64) -> PyResult<f64> {
    dsp::hz_to_mel(hz).map_err(py_err)
}

/// Convert mels back to hertz; inverse of [`hz_to_mel`].
#[pyfunction]
fn mel_to_hz(mel: f64) -> PyResult<f64> {
    dsp::mel_to_hz(mel).map_err(py_err)
}

/// In-place radix-2 FFT as a pure function: returns `(re, im)` spectra.
/// `re` must have power-of-two length; `im` defaults to all zeros.
#[pyfunction]
#[pyo3(signature = (re, im=None))]
fn fft(re: Vec<f64>, im: Option<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let mut re = re;
    let mut im = im.unwrap_or_else(|| vec![0.0; re.len()]);
    dsp::fft_in_place(&mut re, &mut im).map_err(py_err)?;
    Ok((re, im))
}

/// Log-mel spectrogram of raw samples.
///
/// Returns `(frames, frame_times_s)` where `frames[t]` is the vector of
/// `n_mels` natural-log energies for the frame starting at
/// `frame_times_s[t]`.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate_hz=SAMPLE_RATE_HZ, n_mels=40))]
fn log_mel(
    samples: Vec<f64>,
    sample_rate_hz: u32,
    n_mels: usize,
) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let audio = AudioBuffer::new(samples, sample_rate_hz).map_err(py_err)?;
    let cfg = FrameConfig {
        n_mels,
        ..FrameConfig::default()
    };
    let mel = dsp::log_mel_frames(&audio, &cfg).map_err(py_err)?;
    Ok((mel.frames, mel.frame_times_s))
}

/// Read a 16-bit mono PCM WAV file: `(samples, sample_rate_hz)` with samples
/// scaled to `[-1, 1]`.
#[pyfunction]
fn read_wav(path: PathBuf) -> PyResult<(Vec<f64>, u32)> {
    let audio = wav::read_wav(&path).map_err(py_err)?;
    Ok((audio.samples, audio.sample_rate_hz))
}

/// Write samples in `[-1, 1]` as a 16-bit mono PCM WAV file.
#[pyfunction]
fn write_wav(path: PathBuf, samples: Vec<f64>, sample_rate_hz: u32) -> PyResult<()> {
    let audio = AudioBuffer::new(samples, sample_rate_hz).map_err(py_err)?;
    wav::write_wav(&path, &audio).map_err(py_err)
}

/// Generate the deterministic synthetic corpus (WAV files plus
/// `manifest.csv`) under `out_dir`; returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, speakers=8, utts_per_speaker=20, duration_s=2.0, noise_fraction=0.2, seed=7))]
fn generate_corpus(
    out_dir: PathBuf,
    speakers: usize,
    utts_per_speaker: usize,
    duration_s: f64,
    noise_fraction: f64,
    seed: u64,
) -> PyResult<String> {
    let cfg = CorpusConfig {
        n_speakers: speakers,
        n_utts_per_speaker: utts_per_speaker,
        duration_s,
        noise_fraction,
        root_seed: seed,
    };
    synth::generate_corpus(&out_dir, &cfg).map_err(py_err)?;
    Ok(out_dir.join("manifest.csv").display().to_string())
}

/// Train the full cascade (VAD, gender, encoders, emotion head) on a corpus
/// directory, save the checkpoints into `out_dir`, and return the per-stage
/// loss curves as `{"vad": [...], "gender": [...], "encoder": [...],
/// "emotion": [...]}`.
#[pyfunction]
#[pyo3(signature = (corpus_dir, out_dir, epochs=40, lr=0.1, batch_size=16, margin=0.2, beta=1.0, emotion_epochs=60, emotion_lr=0.05, seed=7))]
#[allow(clippy::too_many_arguments)]
fn train(
    corpus_dir: PathBuf,
    out_dir: PathBuf,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    margin: f64,
    beta: f64,
    emotion_epochs: usize,
    emotion_lr: f64,
    seed: u64,
) -> PyResult<BTreeMap<String, Vec<f64>>> {
    let manifest = CorpusManifest::load(&corpus_dir.join("manifest.csv")).map_err(py_err)?;
    let dataset = load_dataset(&corpus_dir, &manifest, &FrameConfig::default()).map_err(py_err)?;
    let cfg = TrainConfig {
        epochs,
        lr,
        batch_size,
        margin,
        beta,
        emotion_epochs,
        emotion_lr,
        seed,
    };
    let training = train_cascade(&dataset, &cfg).map_err(py_err)?;
    training.bundle.save(&out_dir).map_err(py_err)?;
    Ok(BTreeMap::from([
        ("vad".to_string(), training.vad_losses),
        ("gender".to_string(), training.gender_losses),
        ("encoder".to_string(), training.encoder_losses),
        ("emotion".to_string(), training.emotion_losses),
    ]))
}

/// Evaluate saved checkpoints against a corpus' test split. Returns a dict
/// with VAD/gender/re-id/emotion accuracies, intra/inter centroid distance
/// means, histogram overlap, and the test-set sizes.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    corpus_dir: PathBuf,
    models_dir: PathBuf,
) -> PyResult<Bound<'py, PyDict>> {
    let manifest = CorpusManifest::load(&corpus_dir.join("manifest.csv")).map_err(py_err)?;
    let dataset = load_dataset(&corpus_dir, &manifest, &FrameConfig::default()).map_err(py_err)?;
    let bundle = CascadeBundle::load(&models_dir).map_err(py_err)?;
    let acc = evaluate_accuracy(&dataset, &bundle).map_err(py_err)?;

    let d = PyDict::new(py);
    d.set_item("vad_accuracy", acc.vad_accuracy)?;
    d.set_item("gender_accuracy", acc.gender_accuracy)?;
    d.set_item("reid_accuracy", acc.reid_accuracy)?;
    d.set_item("emotion_accuracy", acc.emotion_accuracy)?;
    d.set_item("intra_mean", acc.intra_mean)?;
    d.set_item("inter_mean", acc.inter_mean)?;
    d.set_item("histogram_overlap", acc.histogram_overlap)?;
    d.set_item("n_test_windows", acc.n_test_windows)?;
    d.set_item("n_test_utterances", acc.n_test_utterances)?;
    Ok(d)
}

/// Parse and validate an `asya-report/1` JSON document, raising `ValueError`
/// or `RuntimeError` on malformed input; returns the schema string.
#[pyfunction]
fn validate_report(text: &str) -> PyResult<String> {
    let report = Report::from_json(text).map_err(py_err)?;
    Ok(report.schema)
}

/// One cascade annotation as a plain dict.
fn annotation_dict<'py>(py: Python<'py>, ann: &FrameAnnotation) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("start_s", ann.window.start_time_s)?;
    d.set_item("rms_dbfs", ann.window.rms_dbfs)?;
    d.set_item("is_speech", ann.is_speech())?;
    d.set_item("vad_label", ann.vad.0.as_str())?;
    d.set_item("vad_p", ann.vad.1)?;
    match &ann.gender {
        Some((g, p)) => {
            d.set_item("gender", g.as_str())?;
            d.set_item("gender_p", *p)?;
        }
        None => {
            d.set_item("gender", py.None())?;
            d.set_item("gender_p", py.None())?;
        }
    }
    match &ann.embedding {
        Some(e) => d.set_item("embedding", e.values().to_vec())?,
        None => d.set_item("embedding", py.None())?,
    }
    match &ann.emotion {
        Some(dist) => d.set_item("emotion", dist.to_map())?,
        None => d.set_item("emotion", py.None())?,
    }
    Ok(d)
}

/// The trained model cascade: VAD, gender, per-gender speaker encoders and
/// the emotion head, loaded from or saved as `.asya` checkpoints.
#[pyclass]
struct Bundle {
    inner: CascadeBundle,
}

#[pymethods]
impl Bundle {
    /// Load the checkpoint set written by [`train`] from a directory.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Bundle {
            inner: CascadeBundle::load(&dir).map_err(py_err)?,
        })
    }

    /// Untrained bundle with seeded random weights — deterministic, useful
    /// for exercising the pipeline without a training run.
    #[staticmethod]
    fn random_init(seed: u64) -> Self {
        Bundle {
            inner: CascadeBundle::random_init(seed),
        }
    }

    /// Write the checkpoint set into `dir` (created if missing).
    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(&dir).map_err(py_err)
    }

    /// Run the noise → gender → embedding → emotion cascade over raw
    /// samples. Returns one dict per 1 s analysis window (0.5 s hop) with
    /// keys `start_s`, `rms_dbfs`, `is_speech`, `vad_label`, `vad_p`,
    /// `gender`, `gender_p`, `embedding`, `emotion`; the last four are
    /// `None` for noise windows.
    #[pyo3(signature = (samples, sample_rate_hz=SAMPLE_RATE_HZ))]
    fn annotate<'py>(
        &self,
        py: Python<'py>,
        samples: Vec<f64>,
        sample_rate_hz: u32,
    ) -> PyResult<Bound<'py, PyList>> {
        let audio = AudioBuffer::new(samples, sample_rate_hz).map_err(py_err)?;
        let annotations = process_stream(&audio, &self.inner).map_err(py_err)?;
        let out = PyList::empty(py);
        for ann in &annotations {
            out.append(annotation_dict(py, ann)?)?;
        }
        Ok(out)
    }

    /// Full analysis of a WAV file: cascade, online diarization, segments
    /// and conversation metrics. Returns the `asya-report/1` JSON document
    /// as a string (feed it to `json.loads`).
    #[pyo3(signature = (path, tau=DEFAULT_TAU, d_new=DEFAULT_D_NEW))]
    fn analyze_wav(&self, path: PathBuf, tau: f64, d_new: f64) -> PyResult<String> {
        let audio = wav::read_wav(&path).map_err(py_err)?;
        let mut registry = SpeakerRegistry::new(tau, d_new).map_err(py_err)?;

        let start = Instant::now();
        let annotations = process_stream(&audio, &self.inner).map_err(py_err)?;
        let decisions = diarize(&annotations, &mut registry).map_err(py_err)?;
        let segments = build_segments(&decisions, HOP_S).map_err(py_err)?;
        let mut conversation =
            conversation_metrics(&segments, audio.duration_s()).map_err(py_err)?;
        attach_tempo(&mut conversation, &audio, &segments).map_err(py_err)?;
        let real_time_factor = start.elapsed().as_secs_f64() / audio.duration_s();

        let report = build_report(
            &path.display().to_string(),
            audio.duration_s(),
            audio.sample_rate_hz,
            &annotations,
            &segments,
            &conversation,
            &self.inner,
            real_time_factor,
        );
        Ok(report.to_json())
    }

    fn __repr__(&self) -> String {
        format!(
            "Bundle(embedding_dim={EMBEDDING_DIM}, window_s={WINDOW_S}, hop_s={HOP_S})"
        )
    }
}

/// Online centroid-based speaker registry: softmax-over-distance assignment
/// with threshold `d_new` for enrolling unseen speakers.
#[pyclass]
struct Registry {
    inner: SpeakerRegistry,
}

#[pymethods]
impl Registry {
    #[new]
    #[pyo3(signature = (tau=DEFAULT_TAU, d_new=DEFAULT_D_NEW))]
    fn new(tau: f64, d_new: f64) -> PyResult<Self> {
        Ok(Registry {
            inner: SpeakerRegistry::new(tau, d_new).map_err(py_err)?,
        })
    }

    /// Score an embedding against every enrolled centroid without changing
    /// state. Returns `(speaker_id, {speaker_id: probability})`;
    /// `speaker_id` is `None` when the embedding would enroll a new speaker.
    /// The embedding is L2-normalized before use.
    fn assign(&self, embedding: Vec<f64>) -> PyResult<(Option<u32>, BTreeMap<u32, f64>)> {
        let e = EmbeddingVector::normalized(embedding).map_err(py_err)?;
        let outcome = assign_speaker(&e, &self.inner).map_err(py_err)?;
        let id = match outcome.decision {
            Assignment::Existing(id) => Some(id),
            Assignment::New => None,
        };
        Ok((id, outcome.probabilities.into_iter().collect()))
    }

    /// Assign and then enroll or fold into the running centroid; returns the
    /// speaker id the embedding ended up in.
    fn observe(&mut self, embedding: Vec<f64>) -> PyResult<u32> {
        let e = EmbeddingVector::normalized(embedding).map_err(py_err)?;
        let outcome = assign_speaker(&e, &self.inner).map_err(py_err)?;
        enroll_or_update(&e, outcome.decision, &mut self.inner).map_err(py_err)
    }

    /// Current centroid (unit vector) of an enrolled speaker.
    fn centroid(&self, speaker_id: u32) -> PyResult<Vec<f64>> {
        match self.inner.get(speaker_id) {
            Some(profile) => Ok(profile.centroid.values().to_vec()),
            None => Err(PyValueError::new_err(format!(
                "unknown speaker id {speaker_id}"
            ))),
        }
    }

    /// Ids of all enrolled speakers, in enrollment order.
    fn speaker_ids(&self) -> Vec<u32> {
        self.inner
            .profiles()
            .iter()
            .map(|p| p.speaker_id)
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Registry(tau={}, d_new={}, speakers={})",
            self.inner.tau,
            self.inner.d_new,
            self.inner.len()
        )
    }
}

#[pymodule]
fn asya_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("REPORT_SCHEMA", SCHEMA)?;
    m.add("SAMPLE_RATE_HZ", SAMPLE_RATE_HZ)?;
    m.add("EMBEDDING_DIM", EMBEDDING_DIM)?;
    m.add("WINDOW_S", WINDOW_S)?;
    m.add("HOP_S", HOP_S)?;
    m.add(
        "EMOTION_CLASSES",
        EmotionClass::ALL.map(EmotionClass::as_str).to_vec(),
    )?;
    m.add_function(wrap_pyfunction!(hz_to_mel, m)?)?;
    m.add_function(wrap_pyfunction!(mel_to_hz, m)?)?;
    m.add_function(wrap_pyfunction!(fft, m)?)?;
    m.add_function(wrap_pyfunction!(log_mel, m)?)?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(write_wav, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(validate_report, m)?)?;
    m.add_class::<Bundle>()?;
    m.add_class::<Registry>()?;
    Ok(())
}
