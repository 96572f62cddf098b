//! Deterministic signal processing: framing, Hann windowing, FFT power
//! spectra, mel filterbank construction and log-mel spectrograms.
//!
//! Everything here is a pure function of its inputs; the FFT is a
//! self-contained iterative radix-2 implementation so the DSP path carries no
//! external numerical dependency.

use crate::error::{Error, Result};

/// Natural-log floor applied to mel energies before the log, so silence maps
/// to `ln(LOG_FLOOR)` instead of negative infinity.
pub const LOG_FLOOR: f64 = 1e-10;

/// Decoded mono PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample_rate_hz must be positive"));
        }
        if let Some(s) = samples.iter().find(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample {s}")));
        }
        Ok(AudioBuffer {
            samples,
            sample_rate_hz,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Analysis frame geometry plus mel filterbank parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameConfig {
    pub window_len_samples: usize,
    pub hop_len_samples: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
}

impl Default for FrameConfig {
    /// Conventional speech analysis values for 16 kHz input: 25 ms window,
    /// 10 ms hop, 512-point FFT, 40 mel bands over 0..8000 Hz.
    fn default() -> Self {
        FrameConfig {
            window_len_samples: 400,
            hop_len_samples: 160,
            fft_size: 512,
            n_mels: 40,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
        }
    }
}

impl FrameConfig {
    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        if self.window_len_samples == 0 || self.hop_len_samples == 0 {
            return Err(Error::config("window and hop must be positive"));
        }
        if self.hop_len_samples > self.window_len_samples {
            return Err(Error::config(format!(
                "hop ({}) must not exceed window ({})",
                self.hop_len_samples, self.window_len_samples
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::config(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        if self.fft_size < self.window_len_samples {
            return Err(Error::config(format!(
                "fft_size {} smaller than window {}",
                self.fft_size, self.window_len_samples
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::config("n_mels must be positive"));
        }
        let nyquist = sample_rate_hz as f64 / 2.0;
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return Err(Error::config(format!(
                "need 0 <= fmin ({}) < fmax ({}) <= nyquist ({})",
                self.fmin_hz, self.fmax_hz, nyquist
            )));
        }
        Ok(())
    }

    /// Number of analysis frames produced from `n_samples` of audio.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.window_len_samples {
            0
        } else {
            (n_samples - self.window_len_samples) / self.hop_len_samples + 1
        }
    }
}

/// Convert frequency in Hz to mel: `mel = 2595 * log10(1 + f / 700)`.
pub fn hz_to_mel(f: f64) -> Result<f64> {
    if !f.is_finite() || f < 0.0 {
        return Err(Error::invalid(format!("frequency must be finite and >= 0, got {f}")));
    }
    Ok(2595.0 * (1.0 + f / 700.0).log10())
}

/// Inverse of [`hz_to_mel`].
pub fn mel_to_hz(m: f64) -> Result<f64> {
    if !m.is_finite() || m < 0.0 {
        return Err(Error::invalid(format!("mel value must be finite and >= 0, got {m}")));
    }
    Ok(700.0 * (10f64.powf(m / 2595.0) - 1.0))
}

/// Triangular mel filters as a dense `n_mels x (fft_size/2 + 1)` weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterBank {
    n_mels: usize,
    n_bins: usize,
    /// Row-major weights, row = filter, column = FFT bin.
    weights: Vec<f64>,
    /// Filter center frequencies in Hz, one per row.
    centers_hz: Vec<f64>,
}

impl MelFilterBank {
    /// Build `cfg.n_mels` triangular filters with edges equally spaced on the
    /// mel axis between `fmin_hz` and `fmax_hz`.
    pub fn build(cfg: &FrameConfig, sample_rate_hz: u32) -> Result<Self> {
        cfg.validate(sample_rate_hz)?;
        let n_bins = cfg.fft_size / 2 + 1;
        let bin_hz = sample_rate_hz as f64 / cfg.fft_size as f64;

        // n_mels + 2 edge points on the mel axis; consecutive triples define
        // the (left, center, right) of each filter.
        let mel_lo = hz_to_mel(cfg.fmin_hz)?;
        let mel_hi = hz_to_mel(cfg.fmax_hz)?;
        let n_points = cfg.n_mels + 2;
        let edges_hz: Vec<f64> = (0..n_points)
            .map(|i| {
                let mel = mel_lo + (mel_hi - mel_lo) * i as f64 / (n_points - 1) as f64;
                mel_to_hz(mel)
            })
            .collect::<Result<_>>()?;

        // Reject configurations where the FFT grid cannot resolve adjacent
        // filters: two neighboring centers falling on the same bin.
        let center_bins: Vec<i64> = edges_hz[1..=cfg.n_mels]
            .iter()
            .map(|f| (f / bin_hz).round() as i64)
            .collect();
        for pair in center_bins.windows(2) {
            if pair[0] == pair[1] {
                return Err(Error::config(format!(
                    "n_mels {} too large for fft_size {}: adjacent filter centers share bin {}",
                    cfg.n_mels, cfg.fft_size, pair[0]
                )));
            }
        }

        let mut weights = vec![0.0; cfg.n_mels * n_bins];
        for m in 0..cfg.n_mels {
            let (left, center, right) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
            let row = &mut weights[m * n_bins..(m + 1) * n_bins];
            let mut any_positive = false;
            for (k, w) in row.iter_mut().enumerate() {
                let f = k as f64 * bin_hz;
                let v = if f >= left && f <= center {
                    (f - left) / (center - left)
                } else if f > center && f <= right {
                    (right - f) / (right - center)
                } else {
                    0.0
                };
                *w = v;
                any_positive |= v > 0.0;
            }
            if !any_positive {
                return Err(Error::config(format!(
                    "filter {m} has no positive weight; fft_size {} cannot resolve it",
                    cfg.fft_size
                )));
            }
        }

        Ok(MelFilterBank {
            n_mels: cfg.n_mels,
            n_bins,
            weights,
            centers_hz: edges_hz[1..=cfg.n_mels].to_vec(),
        })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    pub fn center_hz(&self, m: usize) -> f64 {
        self.centers_hz[m]
    }

    /// Apply the filterbank to a power spectrum of `n_bins` values.
    pub fn apply(&self, power: &[f64]) -> Result<Vec<f64>> {
        if power.len() != self.n_bins {
            return Err(Error::Shape {
                expected: format!("{} spectrum bins", self.n_bins),
                actual: format!("{}", power.len()),
            });
        }
        Ok((0..self.n_mels)
            .map(|m| {
                self.row(m)
                    .iter()
                    .zip(power)
                    .map(|(w, p)| w * p)
                    .sum::<f64>()
            })
            .collect())
    }
}

/// Time-ordered log-mel frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// One vector of `n_mels` natural-log energies per analysis frame.
    pub frames: Vec<Vec<f64>>,
    /// Start time of each frame in seconds.
    pub frame_times_s: Vec<f64>,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }
}

/// In-place iterative radix-2 FFT. `re`/`im` must have equal power-of-two length.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) -> Result<()> {
    let n = re.len();
    if n != im.len() {
        return Err(Error::invalid("re/im length mismatch"));
    }
    if !n.is_power_of_two() {
        return Err(Error::config(format!("FFT length {n} is not a power of two")));
    }
    if n <= 1 {
        return Ok(());
    }

    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let mut len = 2;
    while len <= n {
        let ang = -2.0 * std::f64::consts::PI / len as f64;
        let (w_im, w_re) = ang.sin_cos();
        for start in (0..n).step_by(len) {
            let mut cur_re = 1.0;
            let mut cur_im = 0.0;
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let t_re = re[b] * cur_re - im[b] * cur_im;
                let t_im = re[b] * cur_im + im[b] * cur_re;
                re[b] = re[a] - t_re;
                im[b] = im[a] - t_im;
                re[a] += t_re;
                im[a] += t_im;
                let next_re = cur_re * w_re - cur_im * w_im;
                cur_im = cur_re * w_im + cur_im * w_re;
                cur_re = next_re;
            }
        }
        len *= 2;
    }
    Ok(())
}

/// Power spectrum `P[k] = |X[k]|^2 / fft_size` of a (windowed) frame, zero
/// padded to `fft_size`. Returns `fft_size/2 + 1` values.
pub fn power_spectrum(frame: &[f64], fft_size: usize) -> Result<Vec<f64>> {
    if !fft_size.is_power_of_two() {
        return Err(Error::config(format!(
            "fft_size {fft_size} is not a power of two"
        )));
    }
    if frame.len() > fft_size {
        return Err(Error::invalid(format!(
            "frame length {} exceeds fft_size {fft_size}",
            frame.len()
        )));
    }
    let mut re = vec![0.0; fft_size];
    let mut im = vec![0.0; fft_size];
    re[..frame.len()].copy_from_slice(frame);
    fft_in_place(&mut re, &mut im)?;
    Ok((0..=fft_size / 2)
        .map(|k| (re[k] * re[k] + im[k] * im[k]) / fft_size as f64)
        .collect())
}

/// Periodic Hann window of the given length.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()))
        .collect()
}

/// Full log-mel pipeline: Hann window, power spectrum, filterbank multiply,
/// natural log floored at [`LOG_FLOOR`].
pub fn log_mel_frames(audio: &AudioBuffer, cfg: &FrameConfig) -> Result<MelSpectrogram> {
    cfg.validate(audio.sample_rate_hz)?;
    if audio.samples.len() < cfg.window_len_samples {
        return Err(Error::EmptyInput(format!(
            "audio has {} samples, need at least one window of {}",
            audio.samples.len(),
            cfg.window_len_samples
        )));
    }
    let bank = MelFilterBank::build(cfg, audio.sample_rate_hz)?;
    log_mel_frames_with_bank(audio, cfg, &bank)
}

/// Same as [`log_mel_frames`] with a prebuilt filterbank, for callers that
/// process many buffers under one configuration.
pub fn log_mel_frames_with_bank(
    audio: &AudioBuffer,
    cfg: &FrameConfig,
    bank: &MelFilterBank,
) -> Result<MelSpectrogram> {
    if audio.samples.len() < cfg.window_len_samples {
        return Err(Error::EmptyInput(format!(
            "audio has {} samples, need at least one window of {}",
            audio.samples.len(),
            cfg.window_len_samples
        )));
    }
    let window = hann_window(cfg.window_len_samples);
    let n_frames = cfg.n_frames(audio.samples.len());
    let mut frames = Vec::with_capacity(n_frames);
    let mut times = Vec::with_capacity(n_frames);
    let mut buf = vec![0.0; cfg.window_len_samples];
    for i in 0..n_frames {
        let start = i * cfg.hop_len_samples;
        for (b, (s, w)) in buf
            .iter_mut()
            .zip(audio.samples[start..start + cfg.window_len_samples].iter().zip(&window))
        {
            *b = s * w;
        }
        let power = power_spectrum(&buf, cfg.fft_size)?;
        let mel = bank.apply(&power)?;
        frames.push(mel.into_iter().map(|e| e.max(LOG_FLOOR).ln()).collect());
        times.push(start as f64 / audio.sample_rate_hz as f64);
    }
    Ok(MelSpectrogram {
        frames,
        frame_times_s: times,
    })
}
