//! Mindful-communication metrics over diarization output: talk/listen
//! ratios, utterance statistics, 30-second-rule violations, and
//! envelope-based tempo estimation.

use crate::diarization::DiarizationSegment;
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};

/// An utterance longer than this violates the 30-second rule.
pub const THIRTY_SECOND_RULE_S: f64 = 30.0;

/// Per-speaker conversation statistics. An utterance is a maximal
/// diarization segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerStats {
    pub speaker_id: u32,
    pub total_speech_s: f64,
    /// Fraction of the whole recording this speaker talked, in [0, 1].
    pub talk_ratio: f64,
    pub n_utterances: u64,
    pub mean_utterance_s: f64,
    pub max_utterance_s: f64,
    pub n_30s_violations: u64,
    /// Duration-weighted mean syllable rate; filled by [`attach_tempo`],
    /// `None` until then.
    pub tempo_syl_per_s: Option<f64>,
}

/// Conversation-level metrics: one entry per speaker plus global totals.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversationReport {
    /// Sorted by speaker id.
    pub speakers: Vec<SpeakerStats>,
    pub total_duration_s: f64,
    /// Time attributed to no speaker (noise or silence).
    pub silence_s: f64,
}

/// Aggregate non-overlapping segments into per-speaker statistics.
pub fn conversation_metrics(
    segments: &[DiarizationSegment],
    total_duration_s: f64,
) -> Result<ConversationReport> {
    if !(total_duration_s >= 0.0 && total_duration_s.is_finite()) {
        return Err(Error::invalid(format!(
            "total duration {total_duration_s} must be a nonnegative number"
        )));
    }
    let mut sorted: Vec<&DiarizationSegment> = segments.iter().collect();
    sorted.sort_by(|a, b| a.start_s.partial_cmp(&b.start_s).unwrap());
    for pair in sorted.windows(2) {
        if pair[1].start_s < pair[0].end_s - 1e-9 {
            return Err(Error::invalid(format!(
                "segments overlap: [{:.3}, {:.3}) and [{:.3}, {:.3})",
                pair[0].start_s, pair[0].end_s, pair[1].start_s, pair[1].end_s
            )));
        }
    }
    for s in &sorted {
        if s.start_s < -1e-9 || s.end_s > total_duration_s + 1e-6 || s.start_s >= s.end_s {
            return Err(Error::invalid(format!(
                "segment [{:.3}, {:.3}) outside [0, {total_duration_s:.3}]",
                s.start_s, s.end_s
            )));
        }
    }

    let mut by_speaker: std::collections::BTreeMap<u32, Vec<f64>> =
        std::collections::BTreeMap::new();
    for s in &sorted {
        by_speaker
            .entry(s.speaker_id)
            .or_default()
            .push(s.end_s - s.start_s);
    }
    let mut speakers = Vec::with_capacity(by_speaker.len());
    let mut speech_total = 0.0;
    for (speaker_id, durations) in by_speaker {
        let total_speech_s: f64 = durations.iter().sum();
        speech_total += total_speech_s;
        let n = durations.len() as u64;
        let max = durations.iter().cloned().fold(0.0f64, f64::max);
        speakers.push(SpeakerStats {
            speaker_id,
            total_speech_s,
            talk_ratio: if total_duration_s > 0.0 {
                total_speech_s / total_duration_s
            } else {
                0.0
            },
            n_utterances: n,
            mean_utterance_s: total_speech_s / n as f64,
            max_utterance_s: max,
            n_30s_violations: durations
                .iter()
                .filter(|d| **d > THIRTY_SECOND_RULE_S)
                .count() as u64,
            tempo_syl_per_s: None,
        });
    }
    Ok(ConversationReport {
        speakers,
        total_duration_s,
        silence_s: (total_duration_s - speech_total).max(0.0),
    })
}

/// Envelope geometry for [`tempo_estimate`]: 25 ms RMS frames at a 10 ms hop.
const ENVELOPE_WIN_S: f64 = 0.025;
const ENVELOPE_HOP_S: f64 = 0.010;
/// Two syllable nuclei cannot be closer than this.
const MIN_PEAK_GAP_S: f64 = 0.100;

/// Syllable-rate estimate for one segment: peaks of the smoothed RMS energy
/// envelope above half of the median-to-max range, at least 100 ms apart,
/// divided by the segment duration.
pub fn tempo_estimate(audio: &AudioBuffer, segment: &DiarizationSegment) -> Result<f64> {
    let sr = f64::from(audio.sample_rate_hz);
    let duration = segment.end_s - segment.start_s;
    if segment.start_s < -1e-9 || segment.end_s > audio.duration_s() + 1e-6 || duration <= 0.0 {
        return Err(Error::invalid(format!(
            "segment [{:.3}, {:.3}) outside the {:.3} s audio",
            segment.start_s,
            segment.end_s,
            audio.duration_s()
        )));
    }
    if duration < 0.2 {
        return Err(Error::TooShort(format!(
            "segment of {duration:.3} s; tempo needs at least 0.2 s"
        )));
    }
    let start = (segment.start_s * sr).round() as usize;
    let end = ((segment.end_s * sr).round() as usize).min(audio.samples.len());
    let samples = &audio.samples[start..end];

    let win = (ENVELOPE_WIN_S * sr).round() as usize;
    let hop = (ENVELOPE_HOP_S * sr).round() as usize;
    if samples.len() < win {
        return Err(Error::TooShort(format!(
            "{} samples is shorter than one envelope frame",
            samples.len()
        )));
    }
    let mut envelope: Vec<f64> = (0..=(samples.len() - win) / hop)
        .map(|i| {
            let frame = &samples[i * hop..i * hop + win];
            (frame.iter().map(|s| s * s).sum::<f64>() / win as f64).sqrt()
        })
        .collect();
    // Light 3-tap smoothing removes single-frame glitches.
    if envelope.len() >= 3 {
        let raw = envelope.clone();
        for i in 1..raw.len() - 1 {
            envelope[i] = (raw[i - 1] + raw[i] + raw[i + 1]) / 3.0;
        }
    }

    let mut ordered = envelope.clone();
    ordered.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = ordered[ordered.len() / 2];
    let max = *ordered.last().expect("nonempty envelope");
    if max <= 0.0 {
        return Ok(0.0); // silent segment: no peaks
    }
    let threshold = median + 0.5 * (max - median);

    let min_gap_frames = (MIN_PEAK_GAP_S / ENVELOPE_HOP_S).round() as usize;
    let mut peaks = 0u64;
    let mut last_peak: Option<usize> = None;
    for i in 1..envelope.len().saturating_sub(1) {
        let is_peak =
            envelope[i] > threshold && envelope[i] >= envelope[i - 1] && envelope[i] > envelope[i + 1];
        if is_peak {
            let far_enough = last_peak.map_or(true, |p| i - p >= min_gap_frames);
            if far_enough {
                peaks += 1;
                last_peak = Some(i);
            }
        }
    }
    Ok(peaks as f64 / duration)
}

/// Fill each speaker's tempo as the duration-weighted mean over their
/// segments (total peak count over total speech time).
pub fn attach_tempo(
    report: &mut ConversationReport,
    audio: &AudioBuffer,
    segments: &[DiarizationSegment],
) -> Result<()> {
    for stats in report.speakers.iter_mut() {
        let mut weighted = 0.0;
        let mut time = 0.0;
        for seg in segments.iter().filter(|s| s.speaker_id == stats.speaker_id) {
            let duration = seg.end_s - seg.start_s;
            match tempo_estimate(audio, seg) {
                Ok(rate) => {
                    weighted += rate * duration;
                    time += duration;
                }
                // Sub-200 ms fragments contribute no tempo evidence.
                Err(Error::TooShort(_)) => {}
                Err(e) => return Err(e),
            }
        }
        stats.tempo_syl_per_s = if time > 0.0 { Some(weighted / time) } else { None };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(speaker_id: u32, start_s: f64, end_s: f64) -> DiarizationSegment {
        DiarizationSegment {
            speaker_id,
            start_s,
            end_s,
            mean_confidence: 0.9,
        }
    }

    #[test]
    fn talk_ratios_match_the_contract_example() {
        // A speaks 40 s, B speaks 20 s, total 60 s -> 0.667 / 0.333.
        let report =
            conversation_metrics(&[seg(0, 0.0, 40.0), seg(1, 40.0, 60.0)], 60.0).unwrap();
        assert!((report.speakers[0].talk_ratio - 2.0 / 3.0).abs() < 1e-9);
        assert!((report.speakers[1].talk_ratio - 1.0 / 3.0).abs() < 1e-9);
        assert_eq!(report.speakers[0].n_30s_violations, 1, "40 s utterance");
        assert_eq!(report.speakers[1].n_30s_violations, 0);
        assert!(report.silence_s.abs() < 1e-9);
    }

    #[test]
    fn thirty_five_second_utterance_is_one_violation() {
        let report = conversation_metrics(&[seg(0, 0.0, 35.0)], 40.0).unwrap();
        assert_eq!(report.speakers[0].n_30s_violations, 1);
        assert!((report.speakers[0].max_utterance_s - 35.0).abs() < 1e-9);
    }

    #[test]
    fn exactly_thirty_seconds_is_not_a_violation() {
        let report = conversation_metrics(&[seg(0, 0.0, 30.0)], 30.0).unwrap();
        assert_eq!(report.speakers[0].n_30s_violations, 0, "rule is strictly over 30 s");
    }

    #[test]
    fn empty_segments_are_all_silence() {
        let report = conversation_metrics(&[], 12.5).unwrap();
        assert!(report.speakers.is_empty());
        assert!((report.silence_s - 12.5).abs() < 1e-9);
    }

    #[test]
    fn overlapping_segments_are_rejected() {
        let err = conversation_metrics(&[seg(0, 0.0, 2.0), seg(1, 1.5, 3.0)], 5.0).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)), "got {err:?}");
    }

    #[test]
    fn out_of_bounds_segment_is_rejected() {
        let err = conversation_metrics(&[seg(0, 0.0, 7.0)], 5.0).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn metrics_are_invariant_under_segment_order() {
        let a = [seg(0, 0.0, 2.0), seg(1, 2.0, 3.0), seg(0, 3.0, 4.5)];
        let b = [a[2].clone(), a[0].clone(), a[1].clone()];
        assert_eq!(
            conversation_metrics(&a, 5.0).unwrap(),
            conversation_metrics(&b, 5.0).unwrap()
        );
    }

    #[test]
    fn speech_plus_silence_accounts_for_the_whole_recording() {
        let segs = [seg(0, 0.5, 2.0), seg(1, 2.5, 4.0), seg(0, 4.0, 4.75)];
        let report = conversation_metrics(&segs, 6.0).unwrap();
        let speech: f64 = report.speakers.iter().map(|s| s.total_speech_s).sum();
        assert!(
            (speech + report.silence_s - 6.0).abs() < 1e-6,
            "speech {speech} + silence {} != 6",
            report.silence_s
        );
    }

    /// Tone amplitude-modulated at `rate_hz`: one envelope peak per cycle.
    fn modulated_tone(duration_s: f64, rate_hz: f64) -> AudioBuffer {
        let sr = 16_000u32;
        let n = (duration_s * f64::from(sr)) as usize;
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / f64::from(sr);
                let carrier = (std::f64::consts::TAU * 800.0 * t).sin();
                let env = 0.5 * (1.0 - (std::f64::consts::TAU * rate_hz * t).cos());
                0.7 * env * carrier
            })
            .collect();
        AudioBuffer::new(samples, sr).unwrap()
    }

    #[test]
    fn silent_segment_has_zero_tempo() {
        let audio = AudioBuffer::new(vec![0.0; 32_000], 16_000).unwrap();
        let rate = tempo_estimate(&audio, &seg(0, 0.0, 2.0)).unwrap();
        assert_eq!(rate, 0.0);
    }

    #[test]
    fn four_hertz_modulation_reads_as_four_syllables_per_second() {
        // [DERIVED] a 2 s tone AM-modulated at 4 Hz has 8 envelope peaks.
        let audio = modulated_tone(2.0, 4.0);
        let rate = tempo_estimate(&audio, &seg(0, 0.0, 2.0)).unwrap();
        assert!((rate - 4.0).abs() <= 0.5, "got {rate} syl/s, expected 4.0 +- 0.5");
    }

    #[test]
    fn doubling_the_modulation_doubles_the_estimate() {
        let slow = tempo_estimate(&modulated_tone(2.0, 3.0), &seg(0, 0.0, 2.0)).unwrap();
        let fast = tempo_estimate(&modulated_tone(2.0, 6.0), &seg(0, 0.0, 2.0)).unwrap();
        assert!(
            (fast - 2.0 * slow).abs() <= 0.5,
            "doubling: {slow} -> {fast}"
        );
    }

    #[test]
    fn tempo_is_invariant_under_global_gain() {
        let audio = modulated_tone(2.0, 5.0);
        let quiet = AudioBuffer::new(
            audio.samples.iter().map(|s| s * 0.05).collect(),
            audio.sample_rate_hz,
        )
        .unwrap();
        assert_eq!(
            tempo_estimate(&audio, &seg(0, 0.0, 2.0)).unwrap(),
            tempo_estimate(&quiet, &seg(0, 0.0, 2.0)).unwrap(),
            "threshold is relative, gain must not matter"
        );
    }

    #[test]
    fn sub_200ms_segment_is_too_short() {
        let audio = modulated_tone(1.0, 4.0);
        let err = tempo_estimate(&audio, &seg(0, 0.0, 0.15)).unwrap_err();
        assert!(matches!(err, Error::TooShort(_)), "got {err:?}");
    }

    #[test]
    fn segment_beyond_audio_is_invalid() {
        let audio = modulated_tone(1.0, 4.0);
        let err = tempo_estimate(&audio, &seg(0, 0.5, 2.0)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)), "got {err:?}");
    }

    #[test]
    fn attach_tempo_weights_by_duration() {
        let audio = modulated_tone(4.0, 4.0);
        let segs = [seg(0, 0.0, 2.0), seg(0, 2.0, 4.0)];
        let mut report = conversation_metrics(&segs, 4.0).unwrap();
        attach_tempo(&mut report, &audio, &segs).unwrap();
        let tempo = report.speakers[0].tempo_syl_per_s.unwrap();
        assert!((tempo - 4.0).abs() <= 0.7, "got {tempo}");
    }
}
