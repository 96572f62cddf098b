//! Held-out evaluation of a trained cascade: per-stage accuracies, speaker
//! re-identification, embedding-distance separation, and wall-clock latency.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::diarization::{
    centroid, cosine_distance, diarize, distance_histograms, intra_inter_means,
    overlap_coefficient, EmbeddingVector, SpeakerRegistry,
};
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::nnet::softmax;
use crate::pipeline::{annotate_window, CascadeBundle, FrameWindow, HOP_S, WINDOW_S};
use crate::synth::{Split, VadLabel};
use crate::train::{Dataset, WindowExample};

/// Accuracy-side evaluation results over the test split.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    /// Per-window noise/speech accuracy.
    pub vad_accuracy: f64,
    /// Per-window gender accuracy over speech windows.
    pub gender_accuracy: f64,
    /// Per-utterance nearest-centroid speaker re-identification.
    pub reid_accuracy: f64,
    /// Per-utterance emotion-proxy accuracy; `None` without an emotion head.
    pub emotion_accuracy: Option<f64>,
    /// Mean same-speaker pairwise cosine distance (test utterances).
    pub intra_mean: f64,
    /// Mean cross-speaker pairwise cosine distance (test utterances).
    pub inter_mean: f64,
    /// Overlap coefficient of the intra/inter distance histograms.
    pub histogram_overlap: f64,
    pub n_test_windows: usize,
    pub n_test_utterances: usize,
}

/// Nearest-centroid classification accuracy: each query is correct when the
/// closest centroid (cosine distance, ties to the earliest centroid) carries
/// its label. Pure so oracle embeddings can be injected directly.
pub fn nearest_centroid_accuracy(
    centroids: &[(String, EmbeddingVector)],
    queries: &[(String, EmbeddingVector)],
) -> Result<f64> {
    if centroids.is_empty() {
        return Err(Error::invalid("no centroids to classify against"));
    }
    if queries.is_empty() {
        return Err(Error::invalid("no queries to classify"));
    }
    let mut correct = 0usize;
    for (label, q) in queries {
        let mut best: Option<(f64, &str)> = None;
        for (cl, c) in centroids {
            let d = cosine_distance(q, c)?;
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, cl));
            }
        }
        if best.expect("centroids nonempty").1 == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / queries.len() as f64)
}

/// Mean window embedding of one utterance, renormalized to the sphere. The
/// encoder route follows the utterance's labeled gender, mirroring the
/// cascade's routing.
fn utterance_embedding(windows: &[&WindowExample], bundle: &CascadeBundle) -> Result<EmbeddingVector> {
    let gender = windows[0]
        .gender
        .ok_or_else(|| Error::invalid("utterance has no gender label"))?;
    let encoder = bundle.encoder_for(gender);
    let embeddings: Vec<EmbeddingVector> = windows
        .iter()
        .map(|e| Ok(EmbeddingVector::new(encoder.predict(&e.input)?.data().to_vec())?))
        .collect::<Result<_>>()?;
    centroid(&embeddings)
}

/// Group the examples of one split by source utterance, keeping window order.
fn utterances_of(dataset: &Dataset, split: Split) -> BTreeMap<usize, Vec<&WindowExample>> {
    let mut map: BTreeMap<usize, Vec<&WindowExample>> = BTreeMap::new();
    for e in dataset.examples.iter().filter(|e| e.split == split) {
        map.entry(e.utterance).or_default().push(e);
    }
    map
}

/// Histogram bin count for the distance-separation measurement.
pub const EVAL_HISTOGRAM_BINS: usize = 40;

/// Evaluate accuracies on the dataset's test split. Speaker centroids are
/// enrolled from the train split; everything else never sees training data.
pub fn evaluate_accuracy(dataset: &Dataset, bundle: &CascadeBundle) -> Result<AccuracyReport> {
    let test = dataset.split(Split::Test);
    if test.is_empty() {
        return Err(Error::invalid("test split is empty"));
    }

    // Per-window VAD over all test windows.
    let mut vad_correct = 0usize;
    for e in &test {
        let logits = bundle.vad.predict(&e.input)?;
        let p = softmax(logits.data());
        let pred = if p[1] > p[0] { VadLabel::Speech } else { VadLabel::Noise };
        if pred == e.vad {
            vad_correct += 1;
        }
    }

    // Per-window gender over speech windows.
    let speech: Vec<&&WindowExample> = test.iter().filter(|e| e.gender.is_some()).collect();
    if speech.is_empty() {
        return Err(Error::invalid("test split has no speech windows"));
    }
    let mut gender_correct = 0usize;
    for e in &speech {
        let logits = bundle.gender.predict(&e.input)?;
        let p = softmax(logits.data());
        let pred = if p[1] > p[0] { 1 } else { 0 };
        if pred == e.gender.expect("speech window").index() {
            gender_correct += 1;
        }
    }

    // Utterance embeddings: train split enrolls centroids, test split queries.
    let mut speaker_train: BTreeMap<String, Vec<EmbeddingVector>> = BTreeMap::new();
    for (_, windows) in utterances_of(dataset, Split::Train) {
        if let Some(id) = &windows[0].speaker_id {
            speaker_train
                .entry(id.clone())
                .or_default()
                .push(utterance_embedding(&windows, bundle)?);
        }
    }
    let centroids: Vec<(String, EmbeddingVector)> = speaker_train
        .into_iter()
        .map(|(id, embs)| Ok((id, centroid(&embs)?)))
        .collect::<Result<_>>()?;

    let test_utts = utterances_of(dataset, Split::Test);
    let mut queries: Vec<(String, EmbeddingVector)> = Vec::new();
    let mut emotion_totals = (0usize, 0usize); // correct, counted
    for (_, windows) in &test_utts {
        if let Some(id) = &windows[0].speaker_id {
            queries.push((id.clone(), utterance_embedding(windows, bundle)?));
        }
        if let (Some(label), Some(head)) = (windows[0].emotion, &bundle.emotion_head) {
            // Mean softmax distribution over the utterance's windows.
            let mut probs = vec![0.0f64; 8];
            for e in windows.iter() {
                let pooled = bundle.encoder_shared.forward_pooled(&e.input)?;
                let logits = head.predict(&pooled)?;
                for (acc, p) in probs.iter_mut().zip(softmax(logits.data())) {
                    *acc += p;
                }
            }
            let pred = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
                .map(|(i, _)| i)
                .expect("8 classes");
            emotion_totals.1 += 1;
            if pred == label.index() {
                emotion_totals.0 += 1;
            }
        }
    }
    let reid_accuracy = nearest_centroid_accuracy(&centroids, &queries)?;
    let emotion_accuracy = if emotion_totals.1 > 0 {
        Some(emotion_totals.0 as f64 / emotion_totals.1 as f64)
    } else {
        None
    };

    // Distance separation over test utterance embeddings.
    let embeddings: Vec<EmbeddingVector> = queries.iter().map(|(_, e)| e.clone()).collect();
    let labels: Vec<&str> = queries.iter().map(|(l, _)| l.as_str()).collect();
    let (intra_mean, inter_mean) = intra_inter_means(&embeddings, &labels)?;
    let (intra_h, inter_h) = distance_histograms(&embeddings, &labels, EVAL_HISTOGRAM_BINS)?;
    let histogram_overlap = overlap_coefficient(&intra_h, &inter_h)?;

    Ok(AccuracyReport {
        vad_accuracy: vad_correct as f64 / test.len() as f64,
        gender_accuracy: gender_correct as f64 / speech.len() as f64,
        reid_accuracy,
        emotion_accuracy,
        intra_mean,
        inter_mean,
        histogram_overlap,
        n_test_windows: test.len(),
        n_test_utterances: test_utts.len(),
    })
}

/// Wall-clock cost of the full per-window path (cascade + diarization).
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub median_window_ms: f64,
    pub mean_window_ms: f64,
    pub max_window_ms: f64,
    /// Total processing time divided by audio duration.
    pub real_time_factor: f64,
    pub audio_s: f64,
    pub n_windows: usize,
}

/// Time every 1 s window of `audio` through annotate + assign/enroll.
pub fn measure_latency(audio: &AudioBuffer, bundle: &CascadeBundle) -> Result<LatencyReport> {
    let sr = audio.sample_rate_hz;
    let window_len = (WINDOW_S * f64::from(sr)).round() as usize;
    let hop_len = (HOP_S * f64::from(sr)).round() as usize;
    if audio.samples.len() < window_len {
        return Err(Error::EmptyInput(format!(
            "audio of {:.2} s is shorter than one {WINDOW_S} s window",
            audio.duration_s()
        )));
    }
    let cfg = crate::dsp::FrameConfig::default();
    let mut registry = SpeakerRegistry::with_defaults();
    let mut times_ms = Vec::new();
    let mut start = 0usize;
    while start + window_len <= audio.samples.len() {
        let t0 = Instant::now();
        let window = FrameWindow::from_samples(
            &audio.samples[start..start + window_len],
            sr,
            start as f64 / f64::from(sr),
            &cfg,
        )?;
        let ann = annotate_window(window, bundle)?;
        diarize(std::slice::from_ref(&ann), &mut registry)?;
        times_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        start += hop_len;
    }
    let n = times_ms.len();
    let mut sorted = times_ms.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    let total_ms: f64 = times_ms.iter().sum();
    Ok(LatencyReport {
        median_window_ms: sorted[n / 2],
        mean_window_ms: total_ms / n as f64,
        max_window_ms: *sorted.last().expect("at least one window"),
        real_time_factor: (total_ms / 1e3) / audio.duration_s(),
        audio_s: audio.duration_s(),
        n_windows: n,
    })
}
