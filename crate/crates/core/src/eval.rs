//! Objective metrics over merged models: statistics-pooling embeddings and
//! their cosine similarity along a sweep, frame-level content decoding
//! error, and intensity ranking by simulated raters.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::merge::{merge_pair, MergePolicy, SweepSpec};
use crate::tensor_store::Checkpoint;
use crate::toy::{
    forward_batch, AttributeProfile, Dataset, FeatureTable, FrameMatrix, ToyModelConfig,
};

/// Per-channel means followed by per-channel (population) standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ZeroVector("embedding has non-finite entries".into()));
        }
        Ok(Self { values })
    }

    /// Pools all rows of all frame matrices.
    pub fn from_frames<'a>(frames: impl IntoIterator<Item = &'a FrameMatrix>) -> Result<Self> {
        let mut dim = None;
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut rows: Vec<&[f64]> = Vec::new();
        for m in frames {
            let d = *dim.get_or_insert(m.cols());
            if d != m.cols() {
                return Err(Error::LengthMismatch(d, m.cols()));
            }
            sum.resize(d, 0.0);
            for j in 0..m.rows() {
                let row = m.row(j);
                sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                rows.push(row);
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::EmptySentenceSet);
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut var = vec![0.0; mean.len()];
        for row in rows {
            for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let mut values = mean;
        values.extend(var.iter().map(|v| (v / n).sqrt()));
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean_part(&self) -> &[f64] {
        &self.values[..self.values.len() / 2]
    }

    pub fn std_part(&self) -> &[f64] {
        &self.values[self.values.len() / 2..]
    }
}

/// Runs every sentence through `model` and pools the frames.
pub fn extract_embedding(model: &Checkpoint, sentences: &[Vec<usize>]) -> Result<EmbeddingVector> {
    if sentences.is_empty() {
        return Err(Error::EmptySentenceSet);
    }
    let outputs = forward_batch(model, sentences)?;
    EmbeddingVector::from_frames(&outputs)
}

/// One embedding per sentence.
fn sentence_embeddings(
    model: &Checkpoint,
    sentences: &[Vec<usize>],
) -> Result<Vec<EmbeddingVector>> {
    forward_batch(model, sentences)?
        .iter()
        .map(|m| EmbeddingVector::from_frames([m]))
        .collect()
}

pub fn cosine_similarity(x: &EmbeddingVector, y: &EmbeddingVector) -> Result<f64> {
    cosine(x.values(), y.values())
}

fn cosine(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::ZeroVector(
            "cosine similarity of a zero vector".into(),
        ));
    }
    Ok((dot / (nx * ny)).clamp(-1.0, 1.0))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub alpha: f64,
    pub sim_to_a: f64,
    pub sim_to_b: f64,
    /// Spread of the per-sentence similarities.
    pub sim_to_a_std: f64,
    pub sim_to_b_std: f64,
}

/// Similarity of each merged model to both bases along a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityCurve {
    points: Vec<CurvePoint>,
}

impl SimilarityCurve {
    pub fn new(points: Vec<CurvePoint>) -> Result<Self> {
        if points
            .windows(2)
            .any(|w| w[0].alpha.partial_cmp(&w[1].alpha) != Some(std::cmp::Ordering::Less))
        {
            return Err(Error::InvalidSweep(
                "curve alphas must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    /// `alpha,sim_to_a,sim_to_b,sim_to_a_std,sim_to_b_std` with 6 decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,sim_to_a,sim_to_b,sim_to_a_std,sim_to_b_std\n");
        for p in &self.points {
            writeln!(
                out,
                "{:.6},{:.6},{:.6},{:.6},{:.6}",
                p.alpha, p.sim_to_a, p.sim_to_b, p.sim_to_a_std, p.sim_to_b_std
            )
            .unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothness {
    /// Largest rise of `sim_to_a` between consecutive points.
    pub max_violation: f64,
    /// Largest absolute change of `sim_to_a` between consecutive points.
    pub max_jump: f64,
}

pub fn smoothness_metrics(curve: &SimilarityCurve) -> Result<Smoothness> {
    let values: Vec<f64> = curve.points.iter().map(|p| p.sim_to_a).collect();
    smoothness_of(&values)
}

/// Smoothness statistics of a sequence expected to be non-increasing.
pub fn smoothness_of(values: &[f64]) -> Result<Smoothness> {
    if values.len() < 2 {
        return Err(Error::TooFewPoints(values.len()));
    }
    let mut s = Smoothness {
        max_violation: 0.0,
        max_jump: 0.0,
    };
    for w in values.windows(2) {
        let d = w[1] - w[0];
        s.max_violation = s.max_violation.max(d);
        s.max_jump = s.max_jump.max(d.abs());
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecsReport {
    pub curve: SimilarityCurve,
    pub smoothness: Smoothness,
}

/// Merges at every alpha of `spec`, embeds each result over `sentences`, and
/// compares it with both base embeddings. Points are computed in parallel
/// and assembled in alpha order.
pub fn secs_curve(
    base_a: &Checkpoint,
    base_b: &Checkpoint,
    spec: &SweepSpec,
    sentences: &[Vec<usize>],
    policy: &MergePolicy,
) -> Result<SecsReport> {
    if sentences.is_empty() {
        return Err(Error::EmptySentenceSet);
    }
    let ref_a = extract_embedding(base_a, sentences)?;
    let ref_b = extract_embedding(base_b, sentences)?;
    let per_a = sentence_embeddings(base_a, sentences)?;
    let per_b = sentence_embeddings(base_b, sentences)?;

    let points: Vec<Result<CurvePoint>> = spec
        .alphas()
        .par_iter()
        .map(|&alpha| {
            let merged = merge_pair(base_a, base_b, &policy.with_alpha(alpha))?;
            let outputs = forward_batch(&merged, sentences)?;
            let pooled = EmbeddingVector::from_frames(&outputs)?;
            let mut to_a = Vec::with_capacity(outputs.len());
            let mut to_b = Vec::with_capacity(outputs.len());
            for ((out, ea), eb) in outputs.iter().zip(&per_a).zip(&per_b) {
                let e = EmbeddingVector::from_frames([out])?;
                to_a.push(cosine_similarity(&e, ea)?);
                to_b.push(cosine_similarity(&e, eb)?);
            }
            Ok(CurvePoint {
                alpha,
                sim_to_a: cosine_similarity(&pooled, &ref_a)?,
                sim_to_b: cosine_similarity(&pooled, &ref_b)?,
                sim_to_a_std: mean_std(&to_a).1,
                sim_to_b_std: mean_std(&to_b).1,
            })
        })
        .collect();
    let curve = SimilarityCurve::new(points.into_iter().collect::<Result<_>>()?)?;
    let smoothness = smoothness_metrics(&curve)?;
    Ok(SecsReport { curve, smoothness })
}

/// Nearest-template token decoder. Templates are the target frames of every
/// token at every position under one reference profile.
#[derive(Debug, Clone)]
pub struct ContentDecoder {
    table: FeatureTable,
    reference: AttributeProfile,
}

impl ContentDecoder {
    pub fn new(vocab_size: usize, feature_dim: usize, reference: AttributeProfile) -> Self {
        Self {
            table: FeatureTable::standard(vocab_size, feature_dim),
            reference,
        }
    }

    /// Decoder with templates from the midpoint of two base profiles.
    pub fn midpoint(
        vocab_size: usize,
        feature_dim: usize,
        a: &AttributeProfile,
        b: &AttributeProfile,
    ) -> Self {
        Self::new(vocab_size, feature_dim, AttributeProfile::midpoint(a, b))
    }

    pub fn template(&self, token: usize, position: usize) -> Vec<f64> {
        self.table.frame(token, position, &self.reference)
    }

    /// Token whose template at `position` is closest to `frame`; ties go to
    /// the lower token id.
    pub fn decode_frame(&self, frame: &[f64], position: usize) -> usize {
        let mut best = (f64::INFINITY, 0);
        for t in 0..self.table.vocab_size() {
            let d: f64 = frame
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    let e = v - self.table.value(t, position, c, &self.reference);
                    e * e
                })
                .sum();
            if d < best.0 {
                best = (d, t);
            }
        }
        best.1
    }

    pub fn decode(&self, frames: &FrameMatrix) -> Vec<usize> {
        (0..frames.rows())
            .map(|j| self.decode_frame(frames.row(j), j))
            .collect()
    }

    /// Count of mis-decoded frames and total frames.
    pub fn errors(&self, frames: &FrameMatrix, tokens: &[usize]) -> Result<(usize, usize)> {
        if frames.rows() != tokens.len() || frames.cols() != self.table.feature_dim() {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} frames for {} tokens x {} channels",
                frames.rows(),
                frames.cols(),
                tokens.len(),
                self.table.feature_dim()
            )));
        }
        let wrong = self
            .decode(frames)
            .iter()
            .zip(tokens)
            .filter(|(d, t)| d != t)
            .count();
        Ok((wrong, tokens.len()))
    }
}

/// Fraction of output frames decoded to the wrong token.
pub fn content_error_rate(
    model: &Checkpoint,
    dataset: &Dataset,
    decoder: &ContentDecoder,
) -> Result<f64> {
    let config = ToyModelConfig::infer(model)?;
    if config.feature_dim != decoder.table.feature_dim()
        || config.vocab_size != decoder.table.vocab_size()
    {
        return Err(Error::ShapeMismatch(format!(
            "model has vocab {} / {} channels, decoder has {} / {}",
            config.vocab_size,
            config.feature_dim,
            decoder.table.vocab_size(),
            decoder.table.feature_dim()
        )));
    }
    let sentences = dataset.sentences();
    let outputs = forward_batch(model, &sentences)?;
    let (mut wrong, mut total) = (0, 0);
    for (out, tokens) in outputs.iter().zip(&sentences) {
        let (w, t) = decoder.errors(out, tokens)?;
        wrong += w;
        total += t;
    }
    Ok(if total == 0 {
        0.0
    } else {
        wrong as f64 / total as f64
    })
}

/// Projection axis from a neutral to an emotive embedding, over mean parts.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityAxis {
    origin: Vec<f64>,
    direction: Vec<f64>,
    length: f64,
}

impl IntensityAxis {
    pub fn new(neutral: &EmbeddingVector, emotive: &EmbeddingVector) -> Result<Self> {
        if neutral.len() != emotive.len() {
            return Err(Error::LengthMismatch(neutral.len(), emotive.len()));
        }
        let origin = neutral.mean_part().to_vec();
        let delta: Vec<f64> = emotive
            .mean_part()
            .iter()
            .zip(&origin)
            .map(|(e, n)| e - n)
            .collect();
        let length = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if length == 0.0 {
            return Err(Error::ZeroVector(
                "neutral and emotive embeddings have identical means".into(),
            ));
        }
        Ok(Self {
            origin,
            direction: delta.iter().map(|v| v / length).collect(),
            length,
        })
    }

    /// Distance between the two defining embeddings' mean parts.
    pub fn length(&self) -> f64 {
        self.length
    }

    /// Signed projection of `e`'s mean part onto the axis, measured from the
    /// neutral end.
    pub fn estimate(&self, e: &EmbeddingVector) -> Result<f64> {
        let m = e.mean_part();
        if m.len() != self.origin.len() {
            return Err(Error::LengthMismatch(m.len(), self.origin.len()));
        }
        Ok(m.iter()
            .zip(&self.origin)
            .zip(&self.direction)
            .map(|((v, o), d)| (v - o) * d)
            .sum())
    }
}

pub fn intensity_estimate(
    model: &Checkpoint,
    sentences: &[Vec<usize>],
    axis: &IntensityAxis,
) -> Result<f64> {
    axis.estimate(&extract_embedding(model, sentences)?)
}

pub const INTENSITY_LEVELS: usize = 5;

/// Rater noise: absolute, or relative to the gap between the highest- and
/// lowest-level estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RaterNoise {
    Absolute(f64),
    GapFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaterConfig {
    pub trials: usize,
    pub noise: RaterNoise,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankRow {
    /// 1-based intensity level.
    pub level: usize,
    pub alpha: f64,
    pub avg_rank: f64,
    pub rank_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankTable {
    pub rows: Vec<RankRow>,
    /// Absolute noise standard deviation used.
    pub sigma: f64,
}

impl RankTable {
    pub fn grand_mean(&self) -> f64 {
        self.rows.iter().map(|r| r.avg_rank).sum::<f64>() / self.rows.len() as f64
    }

    pub fn strictly_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].avg_rank < w[1].avg_rank)
    }

    /// `level,alpha,avg_rank,rank_std` with 6 decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,alpha,avg_rank,rank_std\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6}",
                r.level, r.alpha, r.avg_rank, r.rank_std
            )
            .unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityReport {
    /// Noise-free estimate per level.
    pub estimates: Vec<f64>,
    pub table: RankTable,
}

/// Simulated rearrangement study over pre-computed estimates. Each trial
/// perturbs every estimate with Gaussian noise and ranks them (1 = least
/// intense); the noise stream of trial `i` depends only on `(seed, i)`.
pub fn rank_estimates(
    estimates: &[f64],
    alphas: &[f64],
    raters: &RaterConfig,
) -> Result<RankTable> {
    if estimates.len() != INTENSITY_LEVELS || alphas.len() != INTENSITY_LEVELS {
        return Err(Error::WrongModelCount(estimates.len()));
    }
    if raters.trials == 0 {
        return Err(Error::InvalidConfig("trials must be positive".into()));
    }
    let sigma = match raters.noise {
        RaterNoise::Absolute(s) => s,
        RaterNoise::GapFraction(f) => f * (estimates[INTENSITY_LEVELS - 1] - estimates[0]).abs(),
    };
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidConfig(format!("rater noise sigma {sigma}: {e}")))?;

    let ranks: Vec<[usize; INTENSITY_LEVELS]> = (0..raters.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(raters.noise_seed);
            rng.set_stream(trial as u64);
            let noisy: Vec<f64> = estimates
                .iter()
                .map(|e| e + normal.sample(&mut rng))
                .collect();
            let mut order: Vec<usize> = (0..INTENSITY_LEVELS).collect();
            order.sort_by(|&i, &j| noisy[i].total_cmp(&noisy[j]));
            let mut rank = [0; INTENSITY_LEVELS];
            for (r, &i) in order.iter().enumerate() {
                rank[i] = r + 1;
            }
            rank
        })
        .collect();

    let rows = (0..INTENSITY_LEVELS)
        .map(|level| {
            let r: Vec<f64> = ranks.iter().map(|t| t[level] as f64).collect();
            let (avg_rank, rank_std) = mean_std(&r);
            RankRow {
                level: level + 1,
                alpha: alphas[level],
                avg_rank,
                rank_std,
            }
        })
        .collect();
    Ok(RankTable { rows, sigma })
}

/// Ranks five models ordered by alpha. The first model is the neutral end of
/// the intensity axis and the last the emotive end.
pub fn intensity_rank_eval(
    models: &[(f64, Checkpoint)],
    sentences: &[Vec<usize>],
    raters: &RaterConfig,
) -> Result<IntensityReport> {
    if models.len() != INTENSITY_LEVELS {
        return Err(Error::WrongModelCount(models.len()));
    }
    let embeddings: Vec<EmbeddingVector> = models
        .par_iter()
        .map(|(_, m)| extract_embedding(m, sentences))
        .collect::<Result<_>>()?;
    let axis = IntensityAxis::new(&embeddings[0], &embeddings[INTENSITY_LEVELS - 1])?;
    let estimates: Vec<f64> = embeddings
        .iter()
        .map(|e| axis.estimate(e))
        .collect::<Result<_>>()?;
    let alphas: Vec<f64> = models.iter().map(|(a, _)| *a).collect();
    let table = rank_estimates(&estimates, &alphas, raters)?;
    Ok(IntensityReport { estimates, table })
}
