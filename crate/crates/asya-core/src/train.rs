//! Stage-wise training of the cascade: corpus loading, minibatch SGD for the
//! classifier heads, triplet training for the encoder, and the frozen-trunk
//! emotion head.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{AudioBuffer, FrameConfig};
use crate::emotion::EmotionClass;
use crate::error::{Error, Result};
use crate::nnet::{
    exp_triplet_loss, sgd_step, softmax_cross_entropy, Layer, Model, Tensor, TripletBatch,
};
use crate::pipeline::{
    make_classifier_model, make_emotion_head, make_encoder_model, CascadeBundle, FrameWindow,
    DEFAULT_GATE_DBFS, HOP_S, WINDOW_S,
};
use crate::synth::{CorpusManifest, Gender, Split, VadLabel};
use crate::wav::read_wav;

/// Hyperparameters shared by every training stage.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Triplet margin (encoder stage only).
    pub margin: f64,
    /// Triplet exponential sharpness (encoder stage only).
    pub beta: f64,
    /// Epochs for the emotion stage (own budget: its loss is unrelated to
    /// the other stages').
    pub emotion_epochs: usize,
    /// Learning rate for the emotion stage.
    pub emotion_lr: f64,
    /// Seeds both parameter init and the shuffling/sampling streams.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            lr: 0.1,
            batch_size: 16,
            margin: 0.2,
            beta: 1.0,
            emotion_epochs: 60,
            emotion_lr: 0.05,
            seed: 7,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be > 0", self.lr)));
        }
        if self.emotion_epochs == 0 {
            return Err(Error::invalid("emotion epochs must be >= 1"));
        }
        if !(self.emotion_lr > 0.0 && self.emotion_lr.is_finite()) {
            return Err(Error::invalid(format!(
                "emotion learning rate {} must be > 0",
                self.emotion_lr
            )));
        }
        Ok(())
    }

    /// Same hyperparameters, decorrelated random stream for another stage.
    fn for_stage(&self, stage: u64) -> TrainConfig {
        TrainConfig {
            seed: self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(stage),
            ..self.clone()
        }
    }
}

/// One 1-second analysis window with every label its source file carries.
#[derive(Debug, Clone)]
pub struct WindowExample {
    /// Standardized model input (the cascade's input convention).
    pub input: Tensor,
    pub vad: VadLabel,
    pub gender: Option<Gender>,
    /// Corpus speaker id (speech only).
    pub speaker_id: Option<String>,
    pub emotion: Option<EmotionClass>,
    pub split: Split,
    /// Index of the source file in the manifest; groups windows by utterance.
    pub utterance: usize,
}

/// All windows of a corpus, cut with the pipeline geometry (1 s / 0.5 s hop).
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub examples: Vec<WindowExample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&WindowExample> {
        self.examples.iter().filter(|e| e.split == split).collect()
    }
}

/// Cut an utterance into pipeline-aligned windows. Windows below the energy
/// gate are omitted: the learned stages never see them at inference time.
pub fn windows_of_file(audio: &AudioBuffer, cfg: &FrameConfig) -> Result<Vec<FrameWindow>> {
    let sr = audio.sample_rate_hz;
    let window_len = (WINDOW_S * f64::from(sr)).round() as usize;
    let hop_len = (HOP_S * f64::from(sr)).round() as usize;
    let mut windows = Vec::new();
    let mut start = 0usize;
    while start + window_len <= audio.samples.len() {
        let w = FrameWindow::from_samples(
            &audio.samples[start..start + window_len],
            sr,
            start as f64 / f64::from(sr),
            cfg,
        )?;
        if w.rms_dbfs >= DEFAULT_GATE_DBFS {
            windows.push(w);
        }
        start += hop_len;
    }
    Ok(windows)
}

/// Read every WAV the manifest lists (paths relative to `root`) and expand it
/// into labeled windows.
pub fn load_dataset(root: &Path, manifest: &CorpusManifest, cfg: &FrameConfig) -> Result<Dataset> {
    manifest.validate()?;
    let mut examples = Vec::new();
    for (utterance, entry) in manifest.entries.iter().enumerate() {
        let audio = read_wav(&crate::synth::entry_path(root, entry))?;
        for w in windows_of_file(&audio, cfg)? {
            examples.push(WindowExample {
                input: w.model_input(),
                vad: entry.vad,
                gender: entry.gender,
                speaker_id: if entry.vad == VadLabel::Speech {
                    Some(entry.speaker_id.clone())
                } else {
                    None
                },
                emotion: entry.emotion,
                split: entry.split,
                utterance,
            });
        }
    }
    if examples.is_empty() {
        return Err(Error::EmptyInput("manifest yielded no windows".into()));
    }
    Ok(Dataset { examples })
}

/// A trained model together with its mean loss per epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub epoch_losses: Vec<f64>,
}

/// Reinterpret a non-finite-tensor error raised during a training step as
/// divergence: once the optimizer is running, overflowing activations or
/// gradients mean the run has blown up, not that the caller passed bad input.
fn as_divergence(e: Error) -> Error {
    match e {
        Error::InvalidArgument(msg) if msg.contains("non-finite") => {
            Error::TrainingDiverged(format!("training step produced {msg}"))
        }
        other => other,
    }
}

/// Add `scale * grads` into the accumulator, keyed by parameter name.
fn accumulate(
    acc: &mut BTreeMap<String, Tensor>,
    grads: BTreeMap<String, Tensor>,
    scale: f64,
) -> Result<()> {
    for (name, mut g) in grads {
        g.scale(scale);
        match acc.entry(name) {
            Entry::Occupied(mut e) => e.get_mut().add_assign(&g)?,
            Entry::Vacant(e) => {
                e.insert(g);
            }
        }
    }
    Ok(())
}

/// Minibatch SGD with softmax cross-entropy. `data` pairs each input with an
/// integer class label. Serves the VAD, gender, and emotion-head stages.
pub fn train_classifier(
    mut model: Model,
    data: &[(Tensor, usize)],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("no training examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let inv = 1.0 / chunk.len() as f64;
            let mut grad_acc = BTreeMap::new();
            let mut batch_loss = 0.0;
            for &i in chunk {
                let (input, label) = &data[i];
                let trace = model.forward_traced(input).map_err(as_divergence)?;
                let (loss, dlogits) = softmax_cross_entropy(trace.output(), *label)?;
                batch_loss += loss * inv;
                let grads = model
                    .backward_traced(&trace, &dlogits)
                    .map_err(as_divergence)?;
                accumulate(&mut grad_acc, grads.params, inv)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "cross-entropy loss became {batch_loss}"
                )));
            }
            sgd_step(model.params_mut(), &grad_acc, cfg.lr)?;
            loss_sum += batch_loss * chunk.len() as f64;
        }
        epoch_losses.push(loss_sum / data.len() as f64);
    }
    Ok(TrainOutcome { model, epoch_losses })
}

/// Train the embedding encoder with the exponential triplet loss. `groups`
/// holds one inner list of window inputs per speaker; every epoch visits each
/// window once as an anchor, with positives sampled from the same speaker and
/// negatives from another.
pub fn train_encoder(
    mut model: Model,
    groups: &[Vec<Tensor>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if groups.len() < 2 {
        return Err(Error::invalid(format!(
            "triplet training needs >= 2 speakers, have {}",
            groups.len()
        )));
    }
    if let Some(small) = groups.iter().position(|g| g.len() < 2) {
        return Err(Error::invalid(format!(
            "speaker {small} has {} window(s); positives need >= 2",
            groups[small].len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut anchors: Vec<(usize, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, ws)| (0..ws.len()).map(move |i| (g, i)))
        .collect();
    let n_total = anchors.len();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        anchors.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in anchors.chunks(cfg.batch_size) {
            let mut traces = Vec::with_capacity(chunk.len());
            let (mut a_e, mut p_e, mut n_e) = (Vec::new(), Vec::new(), Vec::new());
            for &(g, i) in chunk {
                let j = {
                    // A same-speaker window other than the anchor.
                    let j = rng.random_range(0..groups[g].len() - 1);
                    if j >= i { j + 1 } else { j }
                };
                let og = {
                    let og = rng.random_range(0..groups.len() - 1);
                    if og >= g { og + 1 } else { og }
                };
                let ok = rng.random_range(0..groups[og].len());
                let ta = model.forward_traced(&groups[g][i]).map_err(as_divergence)?;
                let tp = model.forward_traced(&groups[g][j]).map_err(as_divergence)?;
                let tn = model.forward_traced(&groups[og][ok]).map_err(as_divergence)?;
                a_e.push(ta.output().clone());
                p_e.push(tp.output().clone());
                n_e.push(tn.output().clone());
                traces.push((ta, tp, tn));
            }
            let batch = TripletBatch::new(a_e, p_e, n_e)?;
            let (loss, tgrads) = exp_triplet_loss(&batch, cfg.margin, cfg.beta)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "triplet loss became {loss}"
                )));
            }
            // The loss gradients are already for the batch mean; sum the
            // per-trace parameter contributions.
            let mut grad_acc = BTreeMap::new();
            for (k, (ta, tp, tn)) in traces.iter().enumerate() {
                for (trace, grad) in [
                    (ta, &tgrads.anchors[k]),
                    (tp, &tgrads.positives[k]),
                    (tn, &tgrads.negatives[k]),
                ] {
                    let grads = model.backward_traced(trace, grad).map_err(as_divergence)?;
                    accumulate(&mut grad_acc, grads.params, 1.0)?;
                }
            }
            sgd_step(model.params_mut(), &grad_acc, cfg.lr)?;
            loss_sum += loss * chunk.len() as f64;
        }
        epoch_losses.push(loss_sum / n_total as f64);
    }
    Ok(TrainOutcome { model, epoch_losses })
}

/// Whether emotion training may touch the trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrunkMode {
    /// The trunk is read-only; its parameters are bit-identical afterwards.
    Frozen,
    /// A copy of the trunk's feature layers (up to the pooling layer) is
    /// adapted jointly with the head; the input trunk itself is untouched.
    FineTune,
}

/// Result of the emotion stage: the trunk to use at inference (the input
/// trunk under [`TrunkMode::Frozen`], an adapted copy under
/// [`TrunkMode::FineTune`]), the trained head, and the loss curve.
#[derive(Debug, Clone)]
pub struct EmotionTraining {
    pub trunk: Model,
    pub head: Model,
    pub epoch_losses: Vec<f64>,
}

/// The trunk's feature extractor: its layers up to and including the first
/// pooling layer, sharing copies of the corresponding parameters.
fn trunk_prefix(trunk: &Model) -> Result<Model> {
    let gap = trunk
        .layers()
        .iter()
        .position(|l| matches!(l, Layer::GlobalAvgPool))
        .ok_or_else(|| Error::Model("trunk has no pooling layer".into()))?;
    let layers: Vec<Layer> = trunk.layers()[..=gap].to_vec();
    let mut params = BTreeMap::new();
    for layer in &layers {
        let name = match layer {
            Layer::Conv2d { name, .. } | Layer::Dense { name, .. } => name,
            _ => continue,
        };
        for suffix in ["w", "b"] {
            let key = format!("{name}.{suffix}");
            let p = trunk
                .params()
                .get(&key)
                .ok_or_else(|| Error::Model(format!("trunk is missing parameter `{key}`")))?;
            params.insert(key, p.clone());
        }
    }
    Model::from_parts(layers, params, trunk.rng_seed())
}

/// Train the emotion head over the trunk's pooled features.
///
/// Under [`TrunkMode::Frozen`] the features are precomputed once and only the
/// head learns. Under [`TrunkMode::FineTune`] the gradient also flows into a
/// copy of the trunk's feature layers, which the returned trunk carries.
pub fn train_emotion_head(
    trunk: &Model,
    head: Model,
    data: &[(Tensor, usize)],
    cfg: &TrainConfig,
    mode: TrunkMode,
) -> Result<EmotionTraining> {
    if data.is_empty() {
        return Err(Error::EmptyInput("no emotion training examples".into()));
    }
    match mode {
        TrunkMode::Frozen => {
            let pooled: Vec<(Tensor, usize)> = data
                .iter()
                .map(|(x, y)| Ok((trunk.forward_pooled(x)?, *y)))
                .collect::<Result<_>>()?;
            let out = train_classifier(head, &pooled, cfg)?;
            Ok(EmotionTraining {
                trunk: trunk.clone(),
                head: out.model,
                epoch_losses: out.epoch_losses,
            })
        }
        TrunkMode::FineTune => finetune_emotion(trunk, head, data, cfg),
    }
}

/// Joint SGD over the trunk prefix and the head with softmax cross-entropy.
fn finetune_emotion(
    trunk: &Model,
    mut head: Model,
    data: &[(Tensor, usize)],
    cfg: &TrainConfig,
) -> Result<EmotionTraining> {
    cfg.validate()?;
    let mut prefix = trunk_prefix(trunk)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let inv = 1.0 / chunk.len() as f64;
            let mut prefix_acc = BTreeMap::new();
            let mut head_acc = BTreeMap::new();
            let mut batch_loss = 0.0;
            for &i in chunk {
                let (input, label) = &data[i];
                let tp = prefix.forward_traced(input).map_err(as_divergence)?;
                let th = head.forward_traced(tp.output()).map_err(as_divergence)?;
                let (loss, dlogits) = softmax_cross_entropy(th.output(), *label)?;
                batch_loss += loss * inv;
                let hg = head.backward_traced(&th, &dlogits).map_err(as_divergence)?;
                accumulate(&mut head_acc, hg.params, inv)?;
                let pg = prefix
                    .backward_traced(&tp, &hg.input)
                    .map_err(as_divergence)?;
                accumulate(&mut prefix_acc, pg.params, inv)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "emotion loss became {batch_loss}"
                )));
            }
            sgd_step(head.params_mut(), &head_acc, cfg.lr)?;
            sgd_step(prefix.params_mut(), &prefix_acc, cfg.lr)?;
            loss_sum += batch_loss * chunk.len() as f64;
        }
        epoch_losses.push(loss_sum / data.len() as f64);
    }
    // Graft the adapted feature layers onto a copy of the full trunk.
    let mut adapted = trunk.clone();
    for (key, p) in prefix.params() {
        adapted.params_mut().insert(key.clone(), p.clone());
    }
    Ok(EmotionTraining {
        trunk: adapted,
        head,
        epoch_losses,
    })
}

/// The trained cascade plus per-stage loss curves.
#[derive(Debug, Clone)]
pub struct CascadeTraining {
    pub bundle: CascadeBundle,
    pub vad_losses: Vec<f64>,
    pub gender_losses: Vec<f64>,
    pub encoder_losses: Vec<f64>,
    pub emotion_losses: Vec<f64>,
}

/// Train all cascade stages in order on the train split: VAD, gender, the
/// shared encoder (triplets), then the emotion head on the frozen encoder
/// trunk. One encoder serves all routes; the per-gender slots receive copies.
pub fn train_cascade(dataset: &Dataset, cfg: &TrainConfig) -> Result<CascadeTraining> {
    cfg.validate()?;
    let train = dataset.split(Split::Train);
    if train.is_empty() {
        return Err(Error::EmptyInput("train split is empty".into()));
    }

    let vad_data: Vec<(Tensor, usize)> = train
        .iter()
        .map(|e| (e.input.clone(), e.vad.index()))
        .collect();
    let vad = train_classifier(
        make_classifier_model(cfg.seed.wrapping_add(1)),
        &vad_data,
        &cfg.for_stage(1),
    )?;

    let gender_data: Vec<(Tensor, usize)> = train
        .iter()
        .filter_map(|e| e.gender.map(|g| (e.input.clone(), g.index())))
        .collect();
    if gender_data.is_empty() {
        return Err(Error::EmptyInput("no speech windows for the gender stage".into()));
    }
    let gender = train_classifier(
        make_classifier_model(cfg.seed.wrapping_add(2)),
        &gender_data,
        &cfg.for_stage(2),
    )?;

    let mut by_speaker: BTreeMap<&str, Vec<Tensor>> = BTreeMap::new();
    for e in &train {
        if let Some(id) = &e.speaker_id {
            by_speaker.entry(id).or_default().push(e.input.clone());
        }
    }
    let groups: Vec<Vec<Tensor>> = by_speaker.into_values().collect();
    let encoder = train_encoder(
        make_encoder_model(cfg.seed.wrapping_add(3)),
        &groups,
        &cfg.for_stage(3),
    )?;

    let emotion_data: Vec<(Tensor, usize)> = train
        .iter()
        .filter_map(|e| e.emotion.map(|c| (e.input.clone(), c.index())))
        .collect();
    // The emotion stage fine-tunes its own copy of the trunk: triplet
    // training makes the encoder invariant to within-speaker variation,
    // which is exactly where the emotion signal lives. The adapted copy
    // becomes the shared trunk; the per-gender embedding routes keep the
    // speaker-trained weights.
    let emotion = train_emotion_head(
        &encoder.model,
        make_emotion_head(cfg.seed.wrapping_add(6)),
        &emotion_data,
        &TrainConfig {
            epochs: cfg.emotion_epochs,
            lr: cfg.emotion_lr,
            ..cfg.for_stage(6)
        },
        TrunkMode::FineTune,
    )?;

    Ok(CascadeTraining {
        bundle: CascadeBundle {
            vad: vad.model,
            gender: gender.model,
            encoder_shared: emotion.trunk,
            encoder_male: encoder.model.clone(),
            encoder_female: encoder.model,
            emotion_head: Some(emotion.head),
            gate_threshold_dbfs: DEFAULT_GATE_DBFS,
        },
        vad_losses: vad.epoch_losses,
        gender_losses: gender.epoch_losses,
        encoder_losses: encoder.epoch_losses,
        emotion_losses: emotion.epoch_losses,
    })
}
