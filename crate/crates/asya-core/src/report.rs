//! The `asya-report/1` JSON document: schema types, assembly from pipeline
//! output, and the plot-data CSVs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diarization::DiarizationSegment;
use crate::emotion::EmotionDistribution;
use crate::error::{Error, Result};
use crate::metrics::ConversationReport;
use crate::pipeline::{CascadeBundle, FrameAnnotation, HOP_S};
use crate::synth::Gender;

/// Schema identifier carried by every report.
pub const SCHEMA: &str = "asya-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub audio: AudioInfo,
    pub segments: Vec<SegmentInfo>,
    pub speakers: Vec<SpeakerInfo>,
    pub pipeline: PipelineInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioInfo {
    pub path: String,
    pub duration_s: f64,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub speaker_id: u32,
    pub start_s: f64,
    pub end_s: f64,
    /// Mean assignment confidence over the segment's windows.
    pub confidence: f64,
    /// Majority-vote gender over the segment's windows, if any carried one.
    pub gender: Option<String>,
    /// Mean emotion distribution over the segment's windows, if any.
    pub emotion: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerInfo {
    pub id: u32,
    pub total_speech_s: f64,
    pub talk_ratio: f64,
    pub n_utterances: u64,
    pub mean_utterance_s: f64,
    pub n_30s_violations: u64,
    pub tempo_syl_per_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineInfo {
    /// Checkpoint format version per model stem.
    pub model_versions: BTreeMap<String, u16>,
    pub real_time_factor: f64,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Parse and check the schema identifier.
    pub fn from_json(text: &str) -> Result<Report> {
        let report: Report = serde_json::from_str(text)
            .map_err(|e| Error::Format {
                field: "report".into(),
                detail: e.to_string(),
            })?;
        if report.schema != SCHEMA {
            return Err(Error::Version(format!(
                "unsupported report schema `{}`, expected `{SCHEMA}`",
                report.schema
            )));
        }
        Ok(report)
    }
}

/// Checkpoint versions of every model a bundle carries.
pub fn model_versions(bundle: &CascadeBundle) -> BTreeMap<String, u16> {
    let mut m = BTreeMap::new();
    for stem in ["vad", "gender", "encoder_shared", "encoder_male", "encoder_female"] {
        m.insert(stem.to_string(), crate::nnet::FORMAT_VERSION);
    }
    if bundle.emotion_head.is_some() {
        m.insert("emotion_head".to_string(), crate::nnet::FORMAT_VERSION);
    }
    m
}

/// Windows whose start lies inside the segment's span.
fn windows_in<'a>(
    annotations: &'a [FrameAnnotation],
    segment: &DiarizationSegment,
) -> Vec<&'a FrameAnnotation> {
    annotations
        .iter()
        .filter(|a| {
            a.window.start_time_s >= segment.start_s - 1e-9
                && a.window.start_time_s < segment.end_s - 1e-9
        })
        .collect()
}

/// Majority gender over the windows; probability mass breaks count ties.
fn majority_gender(windows: &[&FrameAnnotation]) -> Option<String> {
    let (mut n_m, mut n_f, mut p_m, mut p_f) = (0u64, 0u64, 0.0f64, 0.0f64);
    for a in windows {
        match a.gender {
            Some((Gender::Male, p)) => {
                n_m += 1;
                p_m += p;
            }
            Some((Gender::Female, p)) => {
                n_f += 1;
                p_f += p;
            }
            None => {}
        }
    }
    if n_m == 0 && n_f == 0 {
        return None;
    }
    let gender = if n_m > n_f || (n_m == n_f && p_m >= p_f) {
        Gender::Male
    } else {
        Gender::Female
    };
    Some(gender.as_str().to_string())
}

fn mean_emotion(windows: &[&FrameAnnotation]) -> Option<BTreeMap<String, f64>> {
    let dists: Vec<EmotionDistribution> = windows
        .iter()
        .filter_map(|a| a.emotion.clone())
        .collect();
    if dists.is_empty() {
        return None;
    }
    Some(
        EmotionDistribution::mean(&dists)
            .expect("nonempty distribution list")
            .to_map(),
    )
}

/// Assemble the report document from the pipeline's products. `conversation`
/// is expected to carry tempo values already (see
/// [`crate::metrics::attach_tempo`]).
pub fn build_report(
    audio_path: &str,
    duration_s: f64,
    sample_rate: u32,
    annotations: &[FrameAnnotation],
    segments: &[DiarizationSegment],
    conversation: &ConversationReport,
    bundle: &CascadeBundle,
    real_time_factor: f64,
) -> Report {
    let segments = segments
        .iter()
        .map(|s| {
            let windows = windows_in(annotations, s);
            SegmentInfo {
                speaker_id: s.speaker_id,
                start_s: s.start_s,
                end_s: s.end_s,
                confidence: s.mean_confidence,
                gender: majority_gender(&windows),
                emotion: mean_emotion(&windows),
            }
        })
        .collect();
    let speakers = conversation
        .speakers
        .iter()
        .map(|s| SpeakerInfo {
            id: s.speaker_id,
            total_speech_s: s.total_speech_s,
            talk_ratio: s.talk_ratio,
            n_utterances: s.n_utterances,
            mean_utterance_s: s.mean_utterance_s,
            n_30s_violations: s.n_30s_violations,
            tempo_syl_per_s: s.tempo_syl_per_s,
        })
        .collect();
    Report {
        schema: SCHEMA.to_string(),
        audio: AudioInfo {
            path: audio_path.to_string(),
            duration_s,
            sample_rate,
        },
        segments,
        speakers,
        pipeline: PipelineInfo {
            model_versions: model_versions(bundle),
            real_time_factor,
        },
    }
}

/// Distance-histogram CSV (`bin_lo,bin_hi,intra,inter`), bins over [0, 2].
pub fn histogram_csv(intra: &[u64], inter: &[u64]) -> Result<String> {
    if intra.len() != inter.len() || intra.is_empty() {
        return Err(Error::invalid(format!(
            "histograms must have equal nonzero length, got {} and {}",
            intra.len(),
            inter.len()
        )));
    }
    let n = intra.len();
    let mut out = String::from("bin_lo,bin_hi,intra,inter\n");
    for i in 0..n {
        let lo = 2.0 * i as f64 / n as f64;
        let hi = 2.0 * (i + 1) as f64 / n as f64;
        out.push_str(&format!("{lo:.4},{hi:.4},{},{}\n", intra[i], inter[i]));
    }
    Ok(out)
}

/// 3-D projection CSV (`x,y,z,speaker_id`), one row per embedding.
pub fn projection_csv(points: &[[f64; 3]], speaker_ids: &[u32]) -> Result<String> {
    if points.len() != speaker_ids.len() {
        return Err(Error::invalid(format!(
            "{} points vs {} speaker ids",
            points.len(),
            speaker_ids.len()
        )));
    }
    let mut out = String::from("x,y,z,speaker_id\n");
    for (p, id) in points.iter().zip(speaker_ids) {
        out.push_str(&format!("{:.6},{:.6},{:.6},{id}\n", p[0], p[1], p[2]));
    }
    Ok(out)
}

/// The hop windows advance by, re-exported for segment assembly callers.
pub const SEGMENT_HOP_S: f64 = HOP_S;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diarization::EmbeddingVector;
    use crate::metrics::conversation_metrics;
    use crate::nnet::Tensor;
    use crate::pipeline::FrameWindow;
    use crate::synth::VadLabel;

    fn speech_annotation(
        start_s: f64,
        gender: (Gender, f64),
        emotion_peak: usize,
    ) -> FrameAnnotation {
        let mut probs = [0.04; 8];
        probs[emotion_peak] = 0.72;
        FrameAnnotation {
            window: FrameWindow {
                mel_patch: Tensor::from_vec(&[1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
                start_time_s: start_s,
                rms_dbfs: -20.0,
            },
            vad: (VadLabel::Speech, 0.99),
            gender: Some(gender),
            embedding: Some(EmbeddingVector::normalized(vec![1.0, 0.0]).unwrap()),
            emotion: Some(EmotionDistribution::new(probs).unwrap()),
        }
    }

    fn tiny_report() -> Report {
        let annotations = vec![
            speech_annotation(0.0, (Gender::Female, 0.9), 0),
            speech_annotation(0.5, (Gender::Female, 0.8), 0),
            speech_annotation(1.0, (Gender::Male, 0.6), 2),
        ];
        let segments = vec![DiarizationSegment {
            speaker_id: 0,
            start_s: 0.0,
            end_s: 1.5,
            mean_confidence: 0.91,
        }];
        let mut conversation = conversation_metrics(&segments, 2.0).unwrap();
        conversation.speakers[0].tempo_syl_per_s = Some(4.2);
        build_report(
            "session.wav",
            2.0,
            16_000,
            &annotations,
            &segments,
            &conversation,
            &CascadeBundle::random_init(1),
            0.01,
        )
    }

    #[test]
    fn report_assembles_segments_and_speakers() {
        let report = tiny_report();
        assert_eq!(report.schema, SCHEMA);
        assert_eq!(report.segments.len(), 1);
        let seg = &report.segments[0];
        assert_eq!(seg.speaker_id, 0);
        assert_eq!(seg.gender.as_deref(), Some("female"), "2 of 3 windows vote female");
        let emotion = seg.emotion.as_ref().unwrap();
        let sum: f64 = emotion.values().sum();
        assert!((sum - 1.0).abs() < 1e-9, "distribution sums to {sum}");
        // Two windows peak on class 0, one on class 2.
        assert!(emotion["Happiness"] > emotion["Anger"]);
        assert_eq!(report.speakers.len(), 1);
        assert!((report.speakers[0].total_speech_s - 1.5).abs() < 1e-9);
        assert_eq!(report.speakers[0].tempo_syl_per_s, Some(4.2));
        assert_eq!(report.pipeline.model_versions["vad"], 1);
    }

    #[test]
    fn report_round_trips_through_json() {
        let report = tiny_report();
        let parsed = Report::from_json(&report.to_json()).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let mut report = tiny_report();
        report.schema = "asya-report/2".to_string();
        let err = Report::from_json(&report.to_json()).unwrap_err();
        assert!(matches!(err, Error::Version(_)), "got {err:?}");
    }

    #[test]
    fn malformed_json_is_a_format_error() {
        let err = Report::from_json("{not json").unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn histogram_csv_layout() {
        let csv = histogram_csv(&[3, 0], &[0, 5]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "bin_lo,bin_hi,intra,inter");
        assert_eq!(lines[1], "0.0000,1.0000,3,0");
        assert_eq!(lines[2], "1.0000,2.0000,0,5");
    }

    #[test]
    fn projection_csv_layout() {
        let csv = projection_csv(&[[0.5, -0.25, 0.125]], &[3]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x,y,z,speaker_id");
        assert_eq!(lines[1], "0.500000,-0.250000,0.125000,3");
    }

    #[test]
    fn mismatched_plot_inputs_are_invalid() {
        assert!(matches!(
            histogram_csv(&[1], &[1, 2]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            projection_csv(&[[0.0; 3]], &[1, 2]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn noise_only_segment_fields_are_null() {
        // A segment whose windows carry no gender/emotion yields None fields.
        let ann = FrameAnnotation {
            window: FrameWindow {
                mel_patch: Tensor::from_vec(&[1, 2, 2], vec![0.1; 4]).unwrap(),
                start_time_s: 0.0,
                rms_dbfs: -70.0,
            },
            vad: (VadLabel::Noise, 1.0),
            gender: None,
            embedding: None,
            emotion: None,
        };
        let segments = vec![DiarizationSegment {
            speaker_id: 0,
            start_s: 0.0,
            end_s: 0.5,
            mean_confidence: 1.0,
        }];
        let conversation = conversation_metrics(&segments, 1.0).unwrap();
        let report = build_report(
            "noise.wav",
            1.0,
            16_000,
            &[ann],
            &segments,
            &conversation,
            &CascadeBundle::random_init(1),
            0.01,
        );
        assert!(report.segments[0].gender.is_none());
        assert!(report.segments[0].emotion.is_none());
        let json = report.to_json();
        assert!(json.contains("\"gender\": null"));
    }
}
