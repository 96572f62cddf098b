//! `asya` — desk-scale voice analysis from the command line.
//!
//! Four subcommands cover the whole workflow: `synth` writes a labeled
//! synthetic corpus, `train` fits the cascade and saves checkpoints,
//! `analyze` turns a WAV recording into a JSON conversation report, and
//! `eval` scores trained checkpoints against a corpus test split.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use asya_core::diarization::{
    build_segments, diarize, distance_histograms, spherical_pca_3d, SpeakerRegistry,
    DEFAULT_D_NEW, DEFAULT_TAU,
};
use asya_core::dsp::{AudioBuffer, FrameConfig};
use asya_core::eval::{
    evaluate_accuracy, measure_latency, AccuracyReport, LatencyReport, EVAL_HISTOGRAM_BINS,
};
use asya_core::metrics::{attach_tempo, conversation_metrics};
use asya_core::pipeline::{process_stream, CascadeBundle, HOP_S};
use asya_core::report::{build_report, histogram_csv, projection_csv};
use asya_core::synth::{entry_path, generate_corpus, CorpusConfig, CorpusManifest, Split, VadLabel};
use asya_core::train::{load_dataset, train_cascade, TrainConfig};
use asya_core::wav::read_wav;
use asya_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "asya",
    version,
    about = "Desk-scale voice analysis: corpus synthesis, cascade training, \
             conversation reports and checkpoint evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic corpus (WAV files + manifest.csv)
    Synth(SynthArgs),
    /// Train the cascade on a corpus and write ASYA1 checkpoints
    Train(TrainArgs),
    /// Analyze a WAV recording and emit a JSON conversation report
    Analyze(AnalyzeArgs),
    /// Score trained checkpoints against a corpus test split
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the WAV files and manifest.csv
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    /// Number of speakers; must be even for balanced genders
    #[arg(long, default_value_t = CorpusConfig::default().n_speakers)]
    speakers: usize,

    /// Utterances per speaker
    #[arg(long, default_value_t = CorpusConfig::default().n_utts_per_speaker)]
    utts: usize,

    /// Duration of each file in seconds
    #[arg(long, default_value_t = CorpusConfig::default().duration_s)]
    duration: f64,

    /// Fraction of all corpus files that are pure noise, in [0, 1)
    #[arg(long, default_value_t = CorpusConfig::default().noise_fraction)]
    noise_fraction: f64,

    /// Root seed; equal seeds give byte-identical corpora
    #[arg(long, default_value_t = CorpusConfig::default().root_seed)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus directory containing manifest.csv (as written by `synth`)
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,

    /// Checkpoint output directory; created if missing
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    /// Epochs for the VAD, gender and encoder stages
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,

    /// Learning rate for the VAD, gender and encoder stages
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,

    /// Minibatch size for the classifier stages
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,

    /// Triplet margin (encoder stage)
    #[arg(long, default_value_t = TrainConfig::default().margin)]
    margin: f64,

    /// Triplet exponential sharpness (encoder stage)
    #[arg(long, default_value_t = TrainConfig::default().beta)]
    beta: f64,

    /// Epochs for the emotion stage
    #[arg(long, default_value_t = TrainConfig::default().emotion_epochs)]
    emotion_epochs: usize,

    /// Learning rate for the emotion stage
    #[arg(long, default_value_t = TrainConfig::default().emotion_lr)]
    emotion_lr: f64,

    /// Seeds parameter init and all sampling; equal seeds give identical
    /// checkpoints
    #[arg(long, default_value_t = TrainConfig::default().seed)]
    seed: u64,

    #[command(flatten)]
    frame: FrameArgs,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Input recording: RIFF WAV, 16-bit PCM, mono, 16 kHz
    #[arg(long, value_name = "WAV")]
    input: PathBuf,

    /// Checkpoint directory written by `train`
    #[arg(long, value_name = "DIR")]
    models: PathBuf,

    /// Write the JSON report to this file instead of stdout
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,

    /// Also write distance-histogram and 3-D projection CSVs into this
    /// directory
    #[arg(long, value_name = "DIR")]
    emit_plots: Option<PathBuf>,

    /// Assignment softmax temperature
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,

    /// Cosine distance above which a window enrolls a new speaker
    #[arg(long, default_value_t = DEFAULT_D_NEW)]
    d_new: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Corpus directory containing manifest.csv with a test split
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,

    /// Checkpoint directory written by `train`
    #[arg(long, value_name = "DIR")]
    models: PathBuf,

    /// Also write the metrics as machine-readable CSV (metric,value rows)
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,

    #[command(flatten)]
    frame: FrameArgs,
}

/// Log-mel frontend overrides. Defaults are the standard 16 kHz settings;
/// use the same values for `train` and `eval` of one checkpoint set.
#[derive(Args)]
struct FrameArgs {
    /// Number of mel bands
    #[arg(long, value_name = "N")]
    n_mels: Option<usize>,

    /// FFT size in samples
    #[arg(long, value_name = "N")]
    fft_size: Option<usize>,

    /// Analysis window length in samples
    #[arg(long, value_name = "N")]
    mel_window: Option<usize>,

    /// Analysis hop length in samples
    #[arg(long, value_name = "N")]
    mel_hop: Option<usize>,

    /// Lowest filterbank frequency in Hz
    #[arg(long, value_name = "HZ")]
    fmin_hz: Option<f64>,

    /// Highest filterbank frequency in Hz
    #[arg(long, value_name = "HZ")]
    fmax_hz: Option<f64>,
}

impl FrameArgs {
    fn to_config(&self) -> FrameConfig {
        let mut cfg = FrameConfig::default();
        if let Some(v) = self.n_mels {
            cfg.n_mels = v;
        }
        if let Some(v) = self.fft_size {
            cfg.fft_size = v;
        }
        if let Some(v) = self.mel_window {
            cfg.window_len_samples = v;
        }
        if let Some(v) = self.mel_hop {
            cfg.hop_len_samples = v;
        }
        if let Some(v) = self.fmin_hz {
            cfg.fmin_hz = v;
        }
        if let Some(v) = self.fmax_hz {
            cfg.fmax_hz = v;
        }
        cfg
    }
}

/// Die quietly on a closed pipe (`asya analyze … | head`) instead of
/// panicking: restore the default SIGPIPE disposition the Rust runtime
/// masks out.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() {
    reset_sigpipe();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Eval(args) => cmd_eval(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

/// Map library errors onto the documented exit codes: 2 bad input or
/// configuration, 3 training failure, 4 I/O, 5 file format or version,
/// 1 anything else. (Usage errors exit 2 via clap itself.)
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) | Error::EmptyInput(_) => 2,
        Error::TrainingDiverged(_) => 3,
        Error::Io(_) => 4,
        Error::Format { .. } | Error::Version(_) | Error::Parse { .. } => 5,
        _ => 1,
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let cfg = CorpusConfig {
        n_speakers: args.speakers,
        n_utts_per_speaker: args.utts,
        duration_s: args.duration,
        noise_fraction: args.noise_fraction,
        root_seed: args.seed,
    };
    let manifest = generate_corpus(&args.out, &cfg)?;
    let n_speech = manifest
        .entries
        .iter()
        .filter(|e| e.vad == VadLabel::Speech)
        .count();
    let n_noise = manifest.entries.len() - n_speech;
    println!(
        "wrote {n_speech} speech and {n_noise} noise files under {}",
        args.out.display()
    );
    println!("{}", args.out.join("manifest.csv").display());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let manifest = CorpusManifest::load(&args.corpus.join("manifest.csv"))?;
    let dataset = load_dataset(&args.corpus, &manifest, &args.frame.to_config())?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        lr: args.lr,
        batch_size: args.batch_size,
        margin: args.margin,
        beta: args.beta,
        emotion_epochs: args.emotion_epochs,
        emotion_lr: args.emotion_lr,
        seed: args.seed,
    };

    let start = Instant::now();
    let training = train_cascade(&dataset, &cfg)?;
    for (stage, losses) in [
        ("vad", &training.vad_losses),
        ("gender", &training.gender_losses),
        ("encoder", &training.encoder_losses),
        ("emotion", &training.emotion_losses),
    ] {
        let total = losses.len();
        for (epoch, loss) in losses.iter().enumerate() {
            println!("[{stage}] epoch {:>3}/{total} loss {loss:.6}", epoch + 1);
        }
    }
    println!("trained in {:.1} s", start.elapsed().as_secs_f64());

    training.bundle.save(&args.out)?;
    println!("saved checkpoints to {}", args.out.display());

    match evaluate_accuracy(&dataset, &training.bundle) {
        Ok(acc) => print_accuracy(&acc),
        Err(e) => eprintln!("warning: skipping final test metrics: {e}"),
    }
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let audio = read_wav(&args.input)?;
    let bundle = CascadeBundle::load(&args.models)?;
    let mut registry = SpeakerRegistry::new(args.tau, args.d_new)?;

    let start = Instant::now();
    let annotations = process_stream(&audio, &bundle)?;
    let decisions = diarize(&annotations, &mut registry)?;
    let segments = build_segments(&decisions, HOP_S)?;
    let mut conversation = conversation_metrics(&segments, audio.duration_s())?;
    attach_tempo(&mut conversation, &audio, &segments)?;
    let real_time_factor = start.elapsed().as_secs_f64() / audio.duration_s();

    let report = build_report(
        &args.input.display().to_string(),
        audio.duration_s(),
        audio.sample_rate_hz,
        &annotations,
        &segments,
        &conversation,
        &bundle,
        real_time_factor,
    );
    let json = report.to_json();
    match &args.out {
        Some(path) => {
            std::fs::write(path, json.as_bytes())?;
            println!("wrote report to {}", path.display());
        }
        None => println!("{json}"),
    }

    if let Some(dir) = &args.emit_plots {
        emit_plots(dir, &annotations, &decisions)?;
    }
    Ok(())
}

/// Write the per-window distance histogram and 3-D projection CSVs, labeling
/// windows with their diarized speaker ids. Either file is skipped with a
/// warning when its preconditions do not hold (too few speakers or windows).
fn emit_plots(
    dir: &Path,
    annotations: &[asya_core::pipeline::FrameAnnotation],
    decisions: &[asya_core::diarization::WindowDecision],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut embeddings = Vec::new();
    let mut speaker_ids = Vec::new();
    for (ann, dec) in annotations.iter().zip(decisions) {
        if let (Some(e), Some((id, _))) = (&ann.embedding, dec.speaker) {
            embeddings.push(e.clone());
            speaker_ids.push(id);
        }
    }

    let histogram = distance_histograms(&embeddings, &speaker_ids, EVAL_HISTOGRAM_BINS)
        .and_then(|(intra, inter)| histogram_csv(&intra, &inter));
    match histogram {
        Ok(csv) => {
            let path = dir.join("distance_histogram.csv");
            std::fs::write(&path, csv)?;
            eprintln!("wrote {}", path.display());
        }
        Err(e) => eprintln!("warning: skipping distance histogram: {e}"),
    }

    let projection =
        spherical_pca_3d(&embeddings).and_then(|points| projection_csv(&points, &speaker_ids));
    match projection {
        Ok(csv) => {
            let path = dir.join("projection_3d.csv");
            std::fs::write(&path, csv)?;
            eprintln!("wrote {}", path.display());
        }
        Err(e) => eprintln!("warning: skipping 3-D projection: {e}"),
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let manifest = CorpusManifest::load(&args.corpus.join("manifest.csv"))?;
    let dataset = load_dataset(&args.corpus, &manifest, &args.frame.to_config())?;
    let bundle = CascadeBundle::load(&args.models)?;

    let accuracy = evaluate_accuracy(&dataset, &bundle)?;
    let latency_audio = concat_test_audio(&args.corpus, &manifest)?;
    let latency = measure_latency(&latency_audio, &bundle)?;

    print_accuracy(&accuracy);
    print_latency(&latency);

    if let Some(path) = &args.csv {
        std::fs::write(path, metrics_csv(&accuracy, &latency))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// All test-split files spliced end to end, giving one long buffer for the
/// latency measurement.
fn concat_test_audio(root: &Path, manifest: &CorpusManifest) -> Result<AudioBuffer> {
    let mut samples = Vec::new();
    let mut sample_rate = None;
    for entry in manifest.entries.iter().filter(|e| e.split == Split::Test) {
        let audio = read_wav(&entry_path(root, entry))?;
        match sample_rate {
            None => sample_rate = Some(audio.sample_rate_hz),
            Some(rate) if rate != audio.sample_rate_hz => {
                return Err(Error::invalid(format!(
                    "mixed sample rates in corpus: {rate} vs {}",
                    audio.sample_rate_hz
                )));
            }
            Some(_) => {}
        }
        samples.extend_from_slice(&audio.samples);
    }
    let Some(rate) = sample_rate else {
        return Err(Error::invalid("manifest has no test-split files"));
    };
    AudioBuffer::new(samples, rate)
}

fn print_accuracy(acc: &AccuracyReport) {
    println!("{:<22} {:>12}", "metric", "value");
    println!("{:<22} {:>12.4}", "vad_accuracy", acc.vad_accuracy);
    println!("{:<22} {:>12.4}", "gender_accuracy", acc.gender_accuracy);
    println!("{:<22} {:>12.4}", "reid_accuracy", acc.reid_accuracy);
    match acc.emotion_accuracy {
        Some(v) => println!("{:<22} {:>12.4}", "emotion_accuracy", v),
        None => println!("{:<22} {:>12}", "emotion_accuracy", "n/a"),
    }
    println!("{:<22} {:>12.4}", "intra_mean", acc.intra_mean);
    println!("{:<22} {:>12.4}", "inter_mean", acc.inter_mean);
    println!("{:<22} {:>12.4}", "histogram_overlap", acc.histogram_overlap);
    println!("{:<22} {:>12}", "n_test_windows", acc.n_test_windows);
    println!("{:<22} {:>12}", "n_test_utterances", acc.n_test_utterances);
}

fn print_latency(lat: &LatencyReport) {
    println!("{:<22} {:>12.2}", "median_window_ms", lat.median_window_ms);
    println!("{:<22} {:>12.2}", "mean_window_ms", lat.mean_window_ms);
    println!("{:<22} {:>12.2}", "max_window_ms", lat.max_window_ms);
    println!("{:<22} {:>12.4}", "real_time_factor", lat.real_time_factor);
    println!("{:<22} {:>12.1}", "latency_audio_s", lat.audio_s);
    println!("{:<22} {:>12}", "n_latency_windows", lat.n_windows);
}

fn metrics_csv(acc: &AccuracyReport, lat: &LatencyReport) -> String {
    let mut out = String::from("metric,value\n");
    let mut row = |name: &str, value: String| {
        out.push_str(name);
        out.push(',');
        out.push_str(&value);
        out.push('\n');
    };
    row("vad_accuracy", format!("{:.6}", acc.vad_accuracy));
    row("gender_accuracy", format!("{:.6}", acc.gender_accuracy));
    row("reid_accuracy", format!("{:.6}", acc.reid_accuracy));
    if let Some(v) = acc.emotion_accuracy {
        row("emotion_accuracy", format!("{v:.6}"));
    }
    row("intra_mean", format!("{:.6}", acc.intra_mean));
    row("inter_mean", format!("{:.6}", acc.inter_mean));
    row("histogram_overlap", format!("{:.6}", acc.histogram_overlap));
    row("n_test_windows", acc.n_test_windows.to_string());
    row("n_test_utterances", acc.n_test_utterances.to_string());
    row("median_window_ms", format!("{:.3}", lat.median_window_ms));
    row("mean_window_ms", format!("{:.3}", lat.mean_window_ms));
    row("max_window_ms", format!("{:.3}", lat.max_window_ms));
    row("real_time_factor", format!("{:.6}", lat.real_time_factor));
    row("latency_audio_s", format!("{:.3}", lat.audio_s));
    row("n_latency_windows", lat.n_windows.to_string());
    out
}
