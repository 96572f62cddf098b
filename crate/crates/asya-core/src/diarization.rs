//! Speaker enrollment, centroid maintenance, assignment probabilities,
//! online clustering, segment construction, and the embedding-space
//! diagnostics (distance histograms, spherical PCA).

use crate::error::{Error, Result};
use crate::pipeline::FrameAnnotation;
use crate::synth::Gender;

/// Default softmax temperature for assignment probabilities.
pub const DEFAULT_TAU: f64 = 0.1;
/// Default new-speaker distance threshold.
pub const DEFAULT_D_NEW: f64 = 0.6;

/// A unit-norm voiceprint vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Validates: nonempty, finite, unit l2 norm within 1e-6.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("embedding has no components".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding contains a non-finite component"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "embedding norm {norm} is not 1 within 1e-6"
            )));
        }
        Ok(EmbeddingVector { values })
    }

    /// Normalize an arbitrary nonzero vector into an embedding.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::DegenerateCentroid);
        }
        EmbeddingVector::new(values.iter().map(|v| v / norm).collect())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dot(&self, other: &EmbeddingVector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::invalid(format!(
                "embedding dimensions differ: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }
}

/// Cosine distance `1 − a·b` between unit vectors; in [0, 2].
pub fn cosine_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    Ok((1.0 - a.dot(b)?).clamp(0.0, 2.0))
}

/// Normalized mean ("center of mass") of a nonempty set of embeddings.
pub fn centroid(embeddings: &[EmbeddingVector]) -> Result<EmbeddingVector> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::invalid("centroid of an empty embedding list"))?;
    let mut sum = vec![0.0f64; first.dim()];
    for e in embeddings {
        if e.dim() != first.dim() {
            return Err(Error::invalid(format!(
                "embedding dimensions differ: {} vs {}",
                first.dim(),
                e.dim()
            )));
        }
        for (acc, v) in sum.iter_mut().zip(e.values()) {
            *acc += v;
        }
    }
    for v in sum.iter_mut() {
        *v /= embeddings.len() as f64;
    }
    EmbeddingVector::normalized(sum)
}

/// One enrolled speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub speaker_id: u32,
    pub centroid: EmbeddingVector,
    pub n_samples: u64,
    /// Majority of the cascade's gender votes for this speaker, if any.
    pub gender: Option<Gender>,
    /// Unnormalized embedding sum, so the running centroid equals the batch
    /// centroid of the same sample multiset exactly.
    sum: Vec<f64>,
    gender_votes: [u64; 2],
}

/// The online clustering state.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerRegistry {
    profiles: Vec<SpeakerProfile>,
    pub tau: f64,
    pub d_new: f64,
    next_id: u32,
}

/// Decision of [`assign_speaker`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    Existing(u32),
    New,
}

/// Assignment decision plus the per-speaker probabilities it was based on.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignOutcome {
    pub decision: Assignment,
    /// `(speaker_id, probability)` per enrolled speaker, in id order; empty
    /// when the registry is empty.
    pub probabilities: Vec<(u32, f64)>,
}

impl SpeakerRegistry {
    pub fn new(tau: f64, d_new: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::config(format!("tau {tau} must be positive")));
        }
        if !(d_new > 0.0 && d_new < 2.0) {
            return Err(Error::config(format!("d_new {d_new} must be in (0, 2)")));
        }
        Ok(SpeakerRegistry {
            profiles: Vec::new(),
            tau,
            d_new,
            next_id: 0,
        })
    }

    pub fn with_defaults() -> Self {
        SpeakerRegistry::new(DEFAULT_TAU, DEFAULT_D_NEW).expect("defaults are valid")
    }

    pub fn profiles(&self) -> &[SpeakerProfile] {
        &self.profiles
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn get(&self, speaker_id: u32) -> Option<&SpeakerProfile> {
        self.profiles.iter().find(|p| p.speaker_id == speaker_id)
    }

    fn get_mut(&mut self, speaker_id: u32) -> Option<&mut SpeakerProfile> {
        self.profiles.iter_mut().find(|p| p.speaker_id == speaker_id)
    }

    /// Record one cascade gender vote for a speaker.
    pub fn note_gender(&mut self, speaker_id: u32, gender: Gender) -> Result<()> {
        let profile = self
            .get_mut(speaker_id)
            .ok_or_else(|| Error::invalid(format!("unknown speaker id {speaker_id}")))?;
        profile.gender_votes[gender.index()] += 1;
        profile.gender = if profile.gender_votes[0] >= profile.gender_votes[1] {
            Some(Gender::Male)
        } else {
            Some(Gender::Female)
        };
        Ok(())
    }
}

/// Distances and softmax probabilities of `e` against every enrolled
/// centroid; the decision is NEW iff the registry is empty or the closest
/// centroid is farther than `d_new`. Arg-min ties break to the lowest id.
pub fn assign_speaker(e: &EmbeddingVector, reg: &SpeakerRegistry) -> Result<AssignOutcome> {
    if reg.is_empty() {
        return Ok(AssignOutcome {
            decision: Assignment::New,
            probabilities: Vec::new(),
        });
    }
    let mut distances = Vec::with_capacity(reg.len());
    for p in reg.profiles() {
        distances.push((p.speaker_id, cosine_distance(e, &p.centroid)?));
    }
    // Stable softmax of -d/tau.
    let max_score = distances
        .iter()
        .map(|(_, d)| -d / reg.tau)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = distances
        .iter()
        .map(|(_, d)| (-d / reg.tau - max_score).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    let probabilities: Vec<(u32, f64)> = distances
        .iter()
        .zip(&exps)
        .map(|((id, _), e)| (*id, e / z))
        .collect();

    let (best_id, best_d) = distances
        .iter()
        .fold((u32::MAX, f64::INFINITY), |(bid, bd), (id, d)| {
            // Strict < keeps the earliest (lowest) id on exact ties because
            // profiles are stored in allocation (id) order.
            if *d < bd {
                (*id, *d)
            } else {
                (bid, bd)
            }
        });
    let decision = if best_d > reg.d_new {
        Assignment::New
    } else {
        Assignment::Existing(best_id)
    };
    Ok(AssignOutcome {
        decision,
        probabilities,
    })
}

/// Apply an assignment: enroll a fresh profile or fold `e` into an existing
/// one (running mean, re-normalized). Returns the speaker id used.
pub fn enroll_or_update(
    e: &EmbeddingVector,
    decision: Assignment,
    reg: &mut SpeakerRegistry,
) -> Result<u32> {
    match decision {
        Assignment::New => {
            let id = reg.next_id;
            reg.next_id += 1;
            reg.profiles.push(SpeakerProfile {
                speaker_id: id,
                centroid: e.clone(),
                n_samples: 1,
                gender: None,
                sum: e.values().to_vec(),
                gender_votes: [0, 0],
            });
            Ok(id)
        }
        Assignment::Existing(id) => {
            let profile = reg
                .get_mut(id)
                .ok_or_else(|| Error::invalid(format!("unknown speaker id {id}")))?;
            if profile.centroid.dim() != e.dim() {
                return Err(Error::invalid(format!(
                    "embedding dimensions differ: {} vs {}",
                    profile.centroid.dim(),
                    e.dim()
                )));
            }
            for (acc, v) in profile.sum.iter_mut().zip(e.values()) {
                *acc += v;
            }
            profile.n_samples += 1;
            profile.centroid = EmbeddingVector::normalized(profile.sum.clone())?;
            Ok(id)
        }
    }
}

/// One window's diarization outcome: `None` for noise, otherwise the
/// assigned speaker and the assignment confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDecision {
    pub start_s: f64,
    pub speaker: Option<(u32, f64)>,
}

/// Drive assign → enroll over a cascade annotation stream, in order.
///
/// Confidence is the post-hoc assignment probability of the chosen speaker;
/// a freshly enrolled speaker gets 1.0 (it is its own centroid).
pub fn diarize(
    annotations: &[FrameAnnotation],
    reg: &mut SpeakerRegistry,
) -> Result<Vec<WindowDecision>> {
    let mut decisions = Vec::with_capacity(annotations.len());
    for ann in annotations {
        let speaker = match &ann.embedding {
            None => None,
            Some(e) => {
                let outcome = assign_speaker(e, reg)?;
                let confidence = match outcome.decision {
                    Assignment::New => 1.0,
                    Assignment::Existing(id) => outcome
                        .probabilities
                        .iter()
                        .find(|(pid, _)| *pid == id)
                        .map(|(_, p)| *p)
                        .unwrap_or(0.0),
                };
                let id = enroll_or_update(e, outcome.decision, reg)?;
                if let Some((gender, _)) = ann.gender {
                    reg.note_gender(id, gender)?;
                }
                Some((id, confidence))
            }
        };
        decisions.push(WindowDecision {
            start_s: ann.window.start_time_s,
            speaker,
        });
    }
    Ok(decisions)
}

/// A maximal run of windows assigned to one speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct DiarizationSegment {
    pub speaker_id: u32,
    pub start_s: f64,
    pub end_s: f64,
    pub mean_confidence: f64,
}

/// Merge consecutive same-speaker windows into segments. A window spans
/// `[start, start + hop)`; noise windows close any open segment.
pub fn build_segments(decisions: &[WindowDecision], hop_s: f64) -> Result<Vec<DiarizationSegment>> {
    if !(hop_s > 0.0 && hop_s.is_finite()) {
        return Err(Error::invalid(format!("hop {hop_s} must be positive")));
    }
    let mut segments: Vec<DiarizationSegment> = Vec::new();
    let mut open: Option<(u32, f64, f64, f64, u64)> = None; // id, start, end, conf sum, n
    for d in decisions {
        match d.speaker {
            Some((id, conf)) => {
                match &mut open {
                    Some((oid, _, end, conf_sum, n)) if *oid == id => {
                        *end = d.start_s + hop_s;
                        *conf_sum += conf;
                        *n += 1;
                    }
                    Some(state) => {
                        let (oid, start, end, conf_sum, n) = *state;
                        segments.push(DiarizationSegment {
                            speaker_id: oid,
                            start_s: start,
                            end_s: end,
                            mean_confidence: conf_sum / n as f64,
                        });
                        open = Some((id, d.start_s, d.start_s + hop_s, conf, 1));
                    }
                    None => {
                        open = Some((id, d.start_s, d.start_s + hop_s, conf, 1));
                    }
                }
            }
            None => {
                if let Some((oid, start, end, conf_sum, n)) = open.take() {
                    segments.push(DiarizationSegment {
                        speaker_id: oid,
                        start_s: start,
                        end_s: end,
                        mean_confidence: conf_sum / n as f64,
                    });
                }
            }
        }
    }
    if let Some((oid, start, end, conf_sum, n)) = open {
        segments.push(DiarizationSegment {
            speaker_id: oid,
            start_s: start,
            end_s: end,
            mean_confidence: conf_sum / n as f64,
        });
    }
    Ok(segments)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotation.
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors as columns,
/// sorted by eigenvalue descending; each vector's largest-magnitude
/// component is made positive for a deterministic sign.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v = vec![vec![0.0f64; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p][q] * a[p][q];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-18 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i][i]).collect();
    let mut eigenvectors = vec![vec![0.0f64; n]; n];
    for (new_col, &old_col) in order.iter().enumerate() {
        let mut biggest = 0usize;
        for k in 0..n {
            if v[k][old_col].abs() > v[biggest][old_col].abs() {
                biggest = k;
            }
        }
        let sign = if v[biggest][old_col] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            eigenvectors[k][new_col] = sign * v[k][old_col];
        }
    }
    (eigenvalues, eigenvectors)
}

/// Project embeddings onto the top-3 principal components of their
/// mean-centered covariance, then re-normalize each projection to the unit
/// sphere. Errors when the original embeddings span fewer than 3 dimensions.
pub fn spherical_pca_3d(embeddings: &[EmbeddingVector]) -> Result<Vec<[f64; 3]>> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::EmptyInput("no embeddings to project".into()))?;
    let d = first.dim();
    let n = embeddings.len();
    if n < 3 || d < 3 {
        return Err(Error::DegenerateProjection(format!(
            "need at least 3 embeddings of dimension >= 3, have {n} of dimension {d}"
        )));
    }
    for e in embeddings {
        if e.dim() != d {
            return Err(Error::invalid(format!(
                "embedding dimensions differ: {d} vs {}",
                e.dim()
            )));
        }
    }

    // Rank of the *uncentered* span decides degeneracy: three orthonormal
    // basis vectors are a legitimate input even though centering collapses
    // them to a 2-D plane.
    let mut second_moment = vec![vec![0.0f64; d]; d];
    for e in embeddings {
        for i in 0..d {
            for j in 0..d {
                second_moment[i][j] += e.values()[i] * e.values()[j] / n as f64;
            }
        }
    }
    let (moment_eigs, _) = jacobi_eigen(second_moment);
    let lambda_max = moment_eigs[0].max(1e-300);
    let rank = moment_eigs.iter().filter(|l| **l > 1e-10 * lambda_max).count();
    if rank < 3 {
        return Err(Error::DegenerateProjection(format!(
            "embeddings span only {rank} dimensions, need 3"
        )));
    }

    let mut mean = vec![0.0f64; d];
    for e in embeddings {
        for (m, v) in mean.iter_mut().zip(e.values()) {
            *m += v / n as f64;
        }
    }
    let mut cov = vec![vec![0.0f64; d]; d];
    for e in embeddings {
        let c: Vec<f64> = e.values().iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += c[i] * c[j] / n as f64;
            }
        }
    }
    let (_, basis) = jacobi_eigen(cov);

    let mut out = Vec::with_capacity(n);
    for e in embeddings {
        let mut y = [0.0f64; 3];
        for (axis, yv) in y.iter_mut().enumerate() {
            *yv = e
                .values()
                .iter()
                .enumerate()
                .map(|(k, v)| v * basis[k][axis])
                .sum();
        }
        let norm = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
        if norm < 1e-12 {
            return Err(Error::DegenerateProjection(
                "an embedding projects to the zero vector".into(),
            ));
        }
        out.push([y[0] / norm, y[1] / norm, y[2] / norm]);
    }
    Ok(out)
}

/// Histogram all pairwise cosine distances over [0, 2]: one histogram for
/// same-label pairs, one for different-label pairs.
pub fn distance_histograms<L: PartialEq>(
    embeddings: &[EmbeddingVector],
    labels: &[L],
    n_bins: usize,
) -> Result<(Vec<u64>, Vec<u64>)> {
    if embeddings.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} embeddings vs {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    if n_bins == 0 {
        return Err(Error::invalid("need at least one histogram bin"));
    }
    // Validate the 2-labels / 2-samples-per-label precondition.
    let mut representatives: Vec<(usize, usize)> = Vec::new(); // (first index, count)
    for (i, label) in labels.iter().enumerate() {
        match representatives
            .iter_mut()
            .find(|(first, _)| labels[*first] == *label)
        {
            Some((_, count)) => *count += 1,
            None => representatives.push((i, 1)),
        }
    }
    if representatives.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 distinct labels, have {}",
            representatives.len()
        )));
    }
    if let Some((first, count)) = representatives.iter().find(|(_, c)| *c < 2) {
        let _ = first;
        return Err(Error::invalid(format!(
            "every label needs at least 2 samples, one has {count}"
        )));
    }

    let mut intra = vec![0u64; n_bins];
    let mut inter = vec![0u64; n_bins];
    for i in 0..embeddings.len() {
        for j in (i + 1)..embeddings.len() {
            let dist = cosine_distance(&embeddings[i], &embeddings[j])?;
            let bin = ((dist / 2.0) * n_bins as f64).floor() as usize;
            let bin = bin.min(n_bins - 1);
            if labels[i] == labels[j] {
                intra[bin] += 1;
            } else {
                inter[bin] += 1;
            }
        }
    }
    Ok((intra, inter))
}

/// Mean same-label and different-label pairwise cosine distances.
pub fn intra_inter_means<L: PartialEq>(
    embeddings: &[EmbeddingVector],
    labels: &[L],
) -> Result<(f64, f64)> {
    if embeddings.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} embeddings vs {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    let (mut intra_sum, mut intra_n, mut inter_sum, mut inter_n) = (0.0, 0u64, 0.0, 0u64);
    for i in 0..embeddings.len() {
        for j in (i + 1)..embeddings.len() {
            let dist = cosine_distance(&embeddings[i], &embeddings[j])?;
            if labels[i] == labels[j] {
                intra_sum += dist;
                intra_n += 1;
            } else {
                inter_sum += dist;
                inter_n += 1;
            }
        }
    }
    if intra_n == 0 || inter_n == 0 {
        return Err(Error::invalid(
            "need at least one same-label and one different-label pair",
        ));
    }
    Ok((intra_sum / intra_n as f64, inter_sum / inter_n as f64))
}

/// Overlap coefficient of two histograms: sum of bin-wise minima after
/// normalizing each to unit mass. 0 = disjoint, 1 = identical.
pub fn overlap_coefficient(intra: &[u64], inter: &[u64]) -> Result<f64> {
    if intra.len() != inter.len() {
        return Err(Error::invalid(format!(
            "histogram lengths differ: {} vs {}",
            intra.len(),
            inter.len()
        )));
    }
    let intra_total: u64 = intra.iter().sum();
    let inter_total: u64 = inter.iter().sum();
    if intra_total == 0 || inter_total == 0 {
        return Err(Error::invalid("cannot compare an empty histogram"));
    }
    Ok(intra
        .iter()
        .zip(inter)
        .map(|(a, b)| (*a as f64 / intra_total as f64).min(*b as f64 / inter_total as f64))
        .sum())
}
