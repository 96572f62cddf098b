//! Deterministic synthetic speaker corpus: harmonic voices shaped by formant
//! resonances, amplitude-modulated at a syllabic rate, plus noise files.
//!
//! Everything derives from integer seeds so a corpus is reproducible
//! bit-for-bit. The "emotion" labels are prosody archetypes that exercise the
//! classifier machinery; they are not claimed to be human emotions.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::AudioBuffer;
use crate::emotion::EmotionClass;
use crate::error::{Error, Result};
use crate::wav::write_wav;

/// Corpus audio is always mono at this rate.
pub const SAMPLE_RATE_HZ: u32 = 16_000;

/// Speaker gender label, defined by the fundamental-frequency band the
/// speaker is synthesized in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    /// Class index used by the gender classifier head (male = 0, female = 1).
    pub fn index(self) -> usize {
        match self {
            Gender::Male => 0,
            Gender::Female => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Gender::Male),
            1 => Ok(Gender::Female),
            _ => Err(Error::invalid(format!("gender index {i} out of range"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "male" => Ok(Gender::Male),
            "female" => Ok(Gender::Female),
            other => Err(Error::invalid(format!("unknown gender label {other:?}"))),
        }
    }

    /// Inclusive fundamental-frequency band in Hz that defines the label.
    pub fn f0_band_hz(self) -> (f64, f64) {
        match self {
            Gender::Male => (85.0, 155.0),
            Gender::Female => (165.0, 255.0),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parameters of one synthetic voice.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpeaker {
    pub speaker_id: String,
    pub gender: Gender,
    /// Fundamental frequency, within the gender band.
    pub f0_hz: f64,
    /// Formant resonance centers, strictly increasing.
    pub formants_hz: [f64; 3],
    /// Resonance bandwidths (full width at half maximum).
    pub formant_bw_hz: [f64; 3],
    /// Spectral slope of the harmonic source in dB per octave (negative).
    pub tilt_db_per_octave: f64,
    pub seed: u64,
}

/// splitmix64: cheap, well-mixed derivation of sub-seeds from a root seed.
fn mix_seed(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Create a speaker with parameters drawn deterministically from `seed`.
pub fn make_speaker(seed: u64, gender: Gender) -> SynthSpeaker {
    // Fold the gender into the stream so (seed, Male) and (seed, Female)
    // are unrelated voices.
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ ((gender.index() as u64) << 32)));
    let (f0_lo, f0_hi) = gender.f0_band_hz();
    let f0_hz = rng.random_range(f0_lo..=f0_hi);
    // Vowel-like ranges; female vocal tracts shift formants upward.
    let shift = match gender {
        Gender::Male => 1.0,
        Gender::Female => 1.15,
    };
    let formants_hz = [
        shift * rng.random_range(450.0..850.0),
        shift * rng.random_range(1050.0..1700.0),
        shift * rng.random_range(2200.0..2900.0),
    ];
    let formant_bw_hz = [
        rng.random_range(60.0..120.0),
        rng.random_range(90.0..170.0),
        rng.random_range(120.0..220.0),
    ];
    let tilt_db_per_octave = rng.random_range(-14.0..-7.0);
    SynthSpeaker {
        speaker_id: format!("seed{seed}"),
        gender,
        f0_hz,
        formants_hz,
        formant_bw_hz,
        tilt_db_per_octave,
        seed,
    }
}

/// One row of the emotion-proxy table: how an archetype perturbs the voice.
///
/// | class      | f0 ×  | contour (oct/s) | AM Hz | AM depth | energy | vibrato Hz/depth | tilt +dB/oct | formant × |
/// |------------|-------|-----------------|-------|----------|--------|------------------|--------------|-----------|
/// | Happiness  | 1.25  | +0.10 rise      | 5.5   | 0.55     | 1.00   | 5.5 / 0.020      | +2.0         | 1.08      |
/// | Sadness    | 0.88  | −0.08 fall      | 2.6   | 0.35     | 0.45   | 3.0 / 0.025      | −4.0         | 0.94      |
/// | Anger      | 1.15  | 0 flat          | 6.5   | 0.80     | 1.15   | —                | +4.0         | 1.00      |
/// | Fear       | 1.35  | +0.12 rise      | 7.5   | 0.45     | 0.70   | 8.0 / 0.030      |  0.0         | 1.05      |
/// | Disgust    | 0.92  | −0.06 fall      | 3.4   | 0.60     | 0.80   | —                | −2.0         | 0.90      |
/// | Surprise   | 1.45  | +0.25 rise      | 4.6   | 0.50     | 1.05   | 4.0 / 0.015      | +1.0         | 1.12      |
/// | Boredom    | 0.78  | −0.03 fall      | 1.8   | 0.25     | 0.55   | —                | −3.0         | 0.97      |
/// | Neutrality | 1.00  | 0 flat          | 4.0   | 0.45     | 0.85   | —                |  0.0         | 1.00      |
#[derive(Debug, Clone, Copy)]
struct Archetype {
    f0_mult: f64,
    contour_oct_per_s: f64,
    am_rate_hz: f64,
    am_depth: f64,
    energy: f64,
    vibrato_hz: f64,
    vibrato_depth: f64,
    tilt_shift_db: f64,
    formant_mult: f64,
}

fn archetype(class: EmotionClass) -> Archetype {
    use EmotionClass::*;
    let row = |f0_mult, contour_oct_per_s, am_rate_hz, am_depth, energy, vibrato_hz, vibrato_depth, tilt_shift_db, formant_mult| Archetype {
        f0_mult,
        contour_oct_per_s,
        am_rate_hz,
        am_depth,
        energy,
        vibrato_hz,
        vibrato_depth,
        tilt_shift_db,
        formant_mult,
    };
    match class {
        Happiness => row(1.25, 0.10, 5.5, 0.55, 1.00, 5.5, 0.020, 2.0, 1.08),
        Sadness => row(0.88, -0.08, 2.6, 0.35, 0.45, 3.0, 0.025, -4.0, 0.94),
        Anger => row(1.15, 0.0, 6.5, 0.80, 1.15, 0.0, 0.0, 4.0, 1.00),
        Fear => row(1.35, 0.12, 7.5, 0.45, 0.70, 8.0, 0.030, 0.0, 1.05),
        Disgust => row(0.92, -0.06, 3.4, 0.60, 0.80, 0.0, 0.0, -2.0, 0.90),
        Surprise => row(1.45, 0.25, 4.6, 0.50, 1.05, 4.0, 0.015, 1.0, 1.12),
        Boredom => row(0.78, -0.03, 1.8, 0.25, 0.55, 0.0, 0.0, -3.0, 0.97),
        Neutrality => row(1.00, 0.0, 4.0, 0.45, 0.85, 0.0, 0.0, 0.0, 1.00),
    }
}

/// Sum of three Lorentzian resonances evaluated at `f`, with a small floor so
/// inter-formant harmonics are attenuated, not erased.
fn formant_gain(f: f64, centers: &[f64; 3], bandwidths: &[f64; 3]) -> f64 {
    let mut g = 0.05;
    for (c, bw) in centers.iter().zip(bandwidths) {
        let half = bw / 2.0;
        g += 1.0 / (1.0 + ((f - c) / half).powi(2));
    }
    g
}

/// Render one utterance of `speaker`. `emotion_proxy` defaults to
/// [`EmotionClass::Neutrality`]; `seed` varies takes (jitter, phases).
pub fn render_utterance(
    speaker: &SynthSpeaker,
    duration_s: f64,
    emotion_proxy: Option<EmotionClass>,
    seed: u64,
) -> Result<AudioBuffer> {
    if !(duration_s >= 0.5) {
        return Err(Error::invalid(format!(
            "utterance duration {duration_s} s is below the 0.5 s minimum"
        )));
    }
    let arch = archetype(emotion_proxy.unwrap_or(EmotionClass::Neutrality));
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(speaker.seed).wrapping_add(mix_seed(seed)));

    let n = (duration_s * f64::from(SAMPLE_RATE_HZ)).round() as usize;
    let dt = 1.0 / f64::from(SAMPLE_RATE_HZ);
    let nyquist = f64::from(SAMPLE_RATE_HZ) / 2.0;

    let base_f0 = speaker.f0_hz * arch.f0_mult;
    let centers = [
        speaker.formants_hz[0] * arch.formant_mult,
        speaker.formants_hz[1] * arch.formant_mult,
        speaker.formants_hz[2] * arch.formant_mult,
    ];
    let tilt = speaker.tilt_db_per_octave + arch.tilt_shift_db;

    // Slow multi-sine jitter stands in for cycle-to-cycle f0 wobble.
    let jitter_freqs: [f64; 3] = [
        rng.random_range(1.0..2.5),
        rng.random_range(2.5..4.0),
        rng.random_range(4.0..6.0),
    ];
    let jitter_phases: [f64; 3] = [
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.0..std::f64::consts::TAU),
    ];
    let am_phase0: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let vib_phase0: f64 = rng.random_range(0.0..std::f64::consts::TAU);

    // Harmonic count from the *highest* instantaneous f0 so no partial ever
    // crosses Nyquist. Contour and vibrato together stay under +40%.
    let f0_max = base_f0 * 1.4;
    let n_harmonics = ((nyquist * 0.95) / f0_max).floor().max(1.0) as usize;

    // Per-harmonic source amplitude: tilt in dB/octave, then formant shaping
    // at the harmonic's nominal frequency. Amplitudes are refreshed every
    // 10 ms block — f0 moves slowly, so this is inaudible at feature scale.
    let mut phases = vec![0.0f64; n_harmonics];
    for p in phases.iter_mut() {
        *p = rng.random_range(0.0..std::f64::consts::TAU);
    }
    let block = 160; // 10 ms at 16 kHz
    let mut amps = vec![0.0f64; n_harmonics];
    let mut samples = vec![0.0f64; n];

    for (i, sample) in samples.iter_mut().enumerate() {
        let t = i as f64 * dt;
        // Instantaneous f0: archetype contour (octaves/s), vibrato, jitter.
        let contour = (arch.contour_oct_per_s * (t - duration_s / 2.0)).exp2();
        let vibrato = if arch.vibrato_depth > 0.0 {
            1.0 + arch.vibrato_depth
                * (std::f64::consts::TAU * arch.vibrato_hz * t + vib_phase0).sin()
        } else {
            1.0
        };
        let jitter: f64 = jitter_freqs
            .iter()
            .zip(&jitter_phases)
            .map(|(f, p)| (std::f64::consts::TAU * f * t + p).sin())
            .sum::<f64>()
            / 3.0;
        let f0 = base_f0 * contour * vibrato * (1.0 + 0.004 * jitter);

        if i % block == 0 {
            for (k, amp) in amps.iter_mut().enumerate() {
                let fk = (k + 1) as f64 * f0;
                let tilt_gain = 10f64.powf(tilt * (k as f64 + 1.0).log2() / 20.0);
                *amp = if fk < nyquist {
                    tilt_gain * formant_gain(fk, &centers, &speaker.formant_bw_hz)
                } else {
                    0.0
                };
            }
        }

        let mut v = 0.0;
        for (k, (phase, amp)) in phases.iter_mut().zip(&amps).enumerate() {
            *phase += std::f64::consts::TAU * (k + 1) as f64 * f0 * dt;
            if *amp > 0.0 {
                v += amp * phase.sin();
            }
        }

        // Syllabic amplitude modulation plus 50 ms edge ramps.
        let am = (1.0 - arch.am_depth)
            + arch.am_depth
                * 0.5
                * (1.0 - (std::f64::consts::TAU * arch.am_rate_hz * t + am_phase0).cos());
        let edge = (t / 0.05).min((duration_s - t) / 0.05).min(1.0).max(0.0);
        *sample = v * am * edge;
    }

    // Loudness from the archetype's energy column: scale to a target RMS,
    // then hard-limit the peak below full scale.
    let rms = (samples.iter().map(|s| s * s).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        let gain = 0.18 * arch.energy / rms;
        for s in samples.iter_mut() {
            *s *= gain;
        }
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.97 {
        let g = 0.97 / peak;
        for s in samples.iter_mut() {
            *s *= g;
        }
    }
    AudioBuffer::new(samples, SAMPLE_RATE_HZ)
}

/// Kinds of non-speech audio included in the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Pink,
    Babble,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Babble => "babble",
        }
    }
}

/// Render `duration_s` of the given noise kind.
pub fn render_noise(kind: NoiseKind, duration_s: f64, seed: u64) -> Result<AudioBuffer> {
    if !(duration_s >= 0.5) {
        return Err(Error::invalid(format!(
            "noise duration {duration_s} s is below the 0.5 s minimum"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ 0x6E6F_6973_6500_0000));
    let n = (duration_s * f64::from(SAMPLE_RATE_HZ)).round() as usize;
    let mut samples = vec![0.0f64; n];
    match kind {
        NoiseKind::White => {
            for s in samples.iter_mut() {
                *s = rng.random_range(-1.0..1.0);
            }
        }
        NoiseKind::Pink => {
            // Paul Kellet's three-pole 1/f approximation.
            let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
            for s in samples.iter_mut() {
                let w: f64 = rng.random_range(-1.0..1.0);
                b0 = 0.99765 * b0 + w * 0.0990460;
                b1 = 0.96300 * b1 + w * 0.2965164;
                b2 = 0.57000 * b2 + w * 1.0526913;
                *s = (b0 + b1 + b2 + w * 0.1848) / 4.0;
            }
        }
        NoiseKind::Babble => {
            // Six unrelated voices summed: dense, temporally smeared
            // harmonic content without a single dominant stack.
            for v in 0..6u64 {
                let gender = if v % 2 == 0 { Gender::Male } else { Gender::Female };
                let voice = make_speaker(rng.random::<u64>(), gender);
                let talk = render_utterance(&voice, duration_s, None, mix_seed(seed ^ v))?;
                for (s, x) in samples.iter_mut().zip(&talk.samples) {
                    *s += x / 6.0;
                }
            }
        }
    }
    // Match loudness roughly to speech so VAD cannot key on level alone.
    let rms = (samples.iter().map(|s| s * s).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        let gain = 0.15 / rms;
        for s in samples.iter_mut() {
            *s *= gain;
        }
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.97 {
        let g = 0.97 / peak;
        for s in samples.iter_mut() {
            *s *= g;
        }
    }
    AudioBuffer::new(samples, SAMPLE_RATE_HZ)
}

/// Voice-activity label of a corpus file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VadLabel {
    Speech,
    Noise,
}

impl VadLabel {
    /// Class index used by the VAD head (noise = 0, speech = 1).
    pub fn index(self) -> usize {
        match self {
            VadLabel::Noise => 0,
            VadLabel::Speech => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(VadLabel::Noise),
            1 => Ok(VadLabel::Speech),
            _ => Err(Error::invalid(format!("vad index {i} out of range"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VadLabel::Speech => "speech",
            VadLabel::Noise => "noise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "speech" => Ok(VadLabel::Speech),
            "noise" => Ok(VadLabel::Noise),
            other => Err(Error::invalid(format!("unknown vad label {other:?}"))),
        }
    }
}

/// Train/test split assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split label {other:?}"))),
        }
    }
}

/// One manifest row describing a corpus file.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Path relative to the manifest's directory.
    pub path: String,
    /// Speaker id for speech, `-` for noise.
    pub speaker_id: String,
    pub gender: Option<Gender>,
    pub vad: VadLabel,
    pub emotion: Option<EmotionClass>,
    pub duration_s: f64,
    pub split: Split,
}

/// The corpus index: one entry per WAV file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_HEADER: &str = "path,speaker_id,gender,vad,emotion,duration_s,split";

impl CorpusManifest {
    /// Serialize to the CSV format with the fixed column header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{:.3},{}\n",
                e.path,
                e.speaker_id,
                e.gender.map_or("-", Gender::as_str),
                e.vad.as_str(),
                e.emotion.map_or("-", EmotionClass::as_str),
                e.duration_s,
                e.split.as_str(),
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parse manifest CSV; errors carry the 1-based line number.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim_end() == MANIFEST_HEADER => {}
            Some((_, header)) => {
                return Err(Error::Parse {
                    line: 1,
                    detail: format!("bad header {header:?}, expected {MANIFEST_HEADER:?}"),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    detail: "empty manifest".into(),
                })
            }
        }
        let mut entries = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(Error::Parse {
                    line: lineno,
                    detail: format!("expected 7 fields, found {}", fields.len()),
                });
            }
            let parse_ctx = |detail: String| Error::Parse { line: lineno, detail };
            let gender = match fields[2] {
                "-" => None,
                g => Some(Gender::parse(g).map_err(|e| parse_ctx(e.to_string()))?),
            };
            let vad = VadLabel::parse(fields[3]).map_err(|e| parse_ctx(e.to_string()))?;
            let emotion = match fields[4] {
                "-" => None,
                e => Some(EmotionClass::parse(e).map_err(|e| parse_ctx(e.to_string()))?),
            };
            let duration_s: f64 = fields[5]
                .parse()
                .map_err(|e| parse_ctx(format!("bad duration {:?}: {e}", fields[5])))?;
            let split = Split::parse(fields[6]).map_err(|e| parse_ctx(e.to_string()))?;
            entries.push(ManifestEntry {
                path: fields[0].to_string(),
                speaker_id: fields[1].to_string(),
                gender,
                vad,
                emotion,
                duration_s,
                split,
            });
        }
        let manifest = CorpusManifest { entries };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv(&text)
    }

    /// Paths unique; speech entries carry gender, noise entries do not.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.path.as_str()) {
                return Err(Error::invalid(format!("duplicate manifest path {:?}", e.path)));
            }
            match e.vad {
                VadLabel::Speech if e.gender.is_none() => {
                    return Err(Error::invalid(format!(
                        "speech entry {:?} missing gender",
                        e.path
                    )))
                }
                VadLabel::Noise if e.gender.is_some() => {
                    return Err(Error::invalid(format!(
                        "noise entry {:?} carries a gender label",
                        e.path
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Knobs for [`generate_corpus`]. Defaults give the 8 × 20 × 2 s corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub n_speakers: usize,
    pub n_utts_per_speaker: usize,
    pub duration_s: f64,
    /// Fraction of the *total* corpus that is noise files.
    pub noise_fraction: f64,
    pub root_seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_speakers: 8,
            n_utts_per_speaker: 20,
            duration_s: 2.0,
            noise_fraction: 0.2,
            root_seed: 7,
        }
    }
}

/// Generate the corpus under `out_dir`: WAVs plus `manifest.csv`.
///
/// Speakers alternate male/female (balanced genders); the emotion proxy
/// cycles through all 8 classes by global utterance index; every fifth
/// utterance of a speaker goes to the test split (80/20).
pub fn generate_corpus(out_dir: &Path, cfg: &CorpusConfig) -> Result<CorpusManifest> {
    if cfg.n_speakers < 2 {
        return Err(Error::invalid("need at least 2 speakers"));
    }
    if cfg.n_speakers % 2 != 0 {
        return Err(Error::invalid(
            "n_speakers must be even for balanced genders",
        ));
    }
    if cfg.n_utts_per_speaker == 0 {
        return Err(Error::invalid("need at least 1 utterance per speaker"));
    }
    if !(0.0..1.0).contains(&cfg.noise_fraction) {
        return Err(Error::invalid(format!(
            "noise_fraction {} outside [0, 1)",
            cfg.noise_fraction
        )));
    }
    std::fs::create_dir_all(out_dir)?;

    let mut entries = Vec::new();
    let mut global_idx = 0usize;
    for spk_idx in 0..cfg.n_speakers {
        let gender = if spk_idx % 2 == 0 { Gender::Male } else { Gender::Female };
        let mut speaker = make_speaker(mix_seed(cfg.root_seed.wrapping_add(spk_idx as u64)), gender);
        speaker.speaker_id = format!("spk{spk_idx:02}");
        for utt_idx in 0..cfg.n_utts_per_speaker {
            let emotion = EmotionClass::ALL[global_idx % EmotionClass::ALL.len()];
            let utt_seed = mix_seed(
                cfg.root_seed ^ ((spk_idx as u64) << 32) ^ (utt_idx as u64).wrapping_mul(0x10001),
            );
            let audio = render_utterance(&speaker, cfg.duration_s, Some(emotion), utt_seed)?;
            let rel = format!("speech/{}_utt{utt_idx:02}.wav", speaker.speaker_id);
            write_wav(&out_dir.join(&rel), &audio)?;
            entries.push(ManifestEntry {
                path: rel,
                speaker_id: speaker.speaker_id.clone(),
                gender: Some(gender),
                vad: VadLabel::Speech,
                emotion: Some(emotion),
                duration_s: cfg.duration_s,
                split: if utt_idx % 5 == 4 { Split::Test } else { Split::Train },
            });
            global_idx += 1;
        }
    }

    // noise_fraction is of the total file count:
    // n_noise / (n_speech + n_noise) = fraction.
    let n_speech = cfg.n_speakers * cfg.n_utts_per_speaker;
    let n_noise =
        (cfg.noise_fraction / (1.0 - cfg.noise_fraction) * n_speech as f64).round() as usize;
    for i in 0..n_noise {
        let kind = NoiseKind::ALL[i % NoiseKind::ALL.len()];
        let audio = render_noise(
            kind,
            cfg.duration_s,
            mix_seed(cfg.root_seed ^ 0xA0A0_0000 ^ i as u64),
        )?;
        let rel = format!("noise/{}_{i:03}.wav", kind.as_str());
        write_wav(&out_dir.join(&rel), &audio)?;
        entries.push(ManifestEntry {
            path: rel,
            speaker_id: "-".into(),
            gender: None,
            vad: VadLabel::Noise,
            emotion: None,
            duration_s: cfg.duration_s,
            split: if i % 5 == 4 { Split::Test } else { Split::Train },
        });
    }

    let manifest = CorpusManifest { entries };
    manifest.validate()?;
    manifest.save(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Absolute path of a manifest entry given the corpus root.
pub fn entry_path(root: &Path, entry: &ManifestEntry) -> PathBuf {
    root.join(&entry.path)
}
