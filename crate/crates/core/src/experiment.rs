//! End-to-end attribute interpolation experiment on the toy synthesizer:
//! shared pretraining, one fine-tune per profile, then smoothness, content
//! and intensity evaluation over alpha sweeps.
//!
//! All randomness derives from one seed through fixed role offsets, so any
//! stage can be rerun on its own and agree with a full run.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eval::{
    content_error_rate, intensity_rank_eval, secs_curve, ContentDecoder, IntensityReport,
    RaterConfig, RaterNoise, SecsReport,
};
use crate::merge::{sweep, IntTensorPolicy, KeyMismatch, MergePolicy, SweepSpec};
use crate::tensor_store::Checkpoint;
use crate::toy::{
    generate_dataset, init_model, pitch_statistic, train, AttributeProfile, ContentSpec, Dataset,
    ToyModelConfig, TrainingRun,
};

/// Seed offsets per role.
pub mod seed_role {
    pub const INIT: u64 = 0;
    pub const PRETRAIN_SHUFFLE: u64 = 1;
    pub const FINETUNE_A_SHUFFLE: u64 = 2;
    pub const FINETUNE_B_SHUFFLE: u64 = 3;
    pub const CONTENT_A: u64 = 10;
    pub const CONTENT_B: u64 = 11;
    pub const EVAL_CONTENT: u64 = 12;
    pub const RATER_NOISE: u64 = 20;
}

/// Everything needed to rebuild the bases and evaluate them.
#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    pub model: ToyModelConfig,
    pub profile_a: AttributeProfile,
    pub profile_b: AttributeProfile,
    /// Minimum field separation required between the two profiles.
    pub min_separation: f64,
    pub sentence_length: usize,
    pub train_sentences: usize,
    pub eval_sentences: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub secs_step: f64,
    pub intensity_step: f64,
    pub rater_trials: usize,
    /// Rater noise as a fraction of the endpoint intensity gap.
    pub rater_sigma_fraction: f64,
}

impl Default for Recipe {
    fn default() -> Self {
        Self {
            model: ToyModelConfig::default(),
            profile_a: AttributeProfile::new("a", 1.0, 1.0, 0.0),
            profile_b: AttributeProfile::new("b", 2.0, -1.0, 0.5),
            min_separation: 1.0,
            sentence_length: 32,
            train_sentences: 64,
            eval_sentences: 16,
            pretrain_epochs: 200,
            finetune_epochs: 100,
            learning_rate: 0.2,
            batch_size: 8,
            secs_step: 0.1,
            intensity_step: 0.25,
            rater_trials: 50,
            rater_sigma_fraction: 0.25,
        }
    }
}

impl Recipe {
    fn content(&self, seed: u64, num_sentences: usize) -> ContentSpec {
        ContentSpec {
            vocab_size: self.model.vocab_size,
            sentence_length: self.sentence_length,
            num_sentences,
            feature_dim: self.model.feature_dim,
            seed,
        }
    }

    pub fn eval_content(&self, seed: u64) -> ContentSpec {
        self.content(
            seed.wrapping_add(seed_role::EVAL_CONTENT),
            self.eval_sentences,
        )
    }

    /// Held-out evaluation sentences, rendered under profile A.
    pub fn eval_dataset(&self, seed: u64) -> Result<Dataset> {
        generate_dataset(&self.profile_a, &self.eval_content(seed))
    }

    pub fn decoder(&self) -> ContentDecoder {
        ContentDecoder::midpoint(
            self.model.vocab_size,
            self.model.feature_dim,
            &self.profile_a,
            &self.profile_b,
        )
    }

    /// Merge policy used for sweeps over the recipe's bases.
    pub fn merge_policy(&self) -> MergePolicy {
        MergePolicy {
            alpha: 0.0,
            extrapolate: false,
            key_mismatch: KeyMismatch::Strict,
            int_tensor: IntTensorPolicy::RequireEqual,
        }
    }
}

/// Pretrained model and the two fine-tuned bases.
#[derive(Debug, Clone)]
pub struct Bases {
    pub pretrained: Checkpoint,
    pub base_a: Checkpoint,
    pub base_b: Checkpoint,
    pub pretrain_mse: f64,
    pub base_a_mse: f64,
    pub base_b_mse: f64,
}

/// Shared pretraining on both profiles' data, then one fine-tune per profile.
pub fn build_bases(recipe: &Recipe, seed: u64) -> Result<Bases> {
    recipe
        .profile_a
        .check_separation(&recipe.profile_b, recipe.min_separation)?;
    let s = |role: u64| seed.wrapping_add(role);
    let data_a = generate_dataset(
        &recipe.profile_a,
        &recipe.content(s(seed_role::CONTENT_A), recipe.train_sentences),
    )?;
    let data_b = generate_dataset(
        &recipe.profile_b,
        &recipe.content(s(seed_role::CONTENT_B), recipe.train_sentences),
    )?;
    let init = init_model(&ToyModelConfig {
        init_seed: s(seed_role::INIT),
        ..recipe.model.clone()
    })?;

    let run = |init: Checkpoint, dataset: Dataset, epochs: usize, shuffle: u64| TrainingRun {
        init,
        dataset,
        epochs,
        learning_rate: recipe.learning_rate,
        batch_size: recipe.batch_size,
        shuffle_seed: s(shuffle),
    };
    let pre = train(&run(
        init,
        data_a.mixed(&data_b)?,
        recipe.pretrain_epochs,
        seed_role::PRETRAIN_SHUFFLE,
    ))?;
    let ft_a = train(&run(
        pre.checkpoint.clone(),
        data_a,
        recipe.finetune_epochs,
        seed_role::FINETUNE_A_SHUFFLE,
    ))?;
    let ft_b = train(&run(
        pre.checkpoint.clone(),
        data_b,
        recipe.finetune_epochs,
        seed_role::FINETUNE_B_SHUFFLE,
    ))?;
    Ok(Bases {
        pretrained: pre.checkpoint,
        base_a: ft_a.checkpoint,
        base_b: ft_b.checkpoint,
        pretrain_mse: pre.final_mse,
        base_a_mse: ft_a.final_mse,
        base_b_mse: ft_b.final_mse,
    })
}

/// Validity gates on the bases; a failed gate invalidates the run rather
/// than indicating a merge failure.
#[derive(Debug, Clone, PartialEq)]
pub struct GateReport {
    pub pitch_a: f64,
    pub pitch_b: f64,
    /// Required `|pitch_a - pitch_b|`: half the profiles' pitch separation.
    pub required_pitch_gap: f64,
    pub error_rate_a: f64,
    pub error_rate_b: f64,
    pub max_base_error_rate: f64,
}

impl GateReport {
    pub fn separation_ok(&self) -> bool {
        (self.pitch_a - self.pitch_b).abs() >= self.required_pitch_gap
    }

    pub fn content_ok(&self) -> bool {
        self.error_rate_a <= self.max_base_error_rate
            && self.error_rate_b <= self.max_base_error_rate
    }

    pub fn passed(&self) -> bool {
        self.separation_ok() && self.content_ok()
    }
}

pub const MAX_BASE_ERROR_RATE: f64 = 0.1;

pub fn check_gates(recipe: &Recipe, bases: &Bases, eval: &Dataset) -> Result<GateReport> {
    let sentences = eval.sentences();
    let decoder = recipe.decoder();
    Ok(GateReport {
        pitch_a: pitch_statistic(&bases.base_a, &sentences)?,
        pitch_b: pitch_statistic(&bases.base_b, &sentences)?,
        required_pitch_gap: 0.5 * (recipe.profile_a.pitch_base - recipe.profile_b.pitch_base).abs(),
        error_rate_a: content_error_rate(&bases.base_a, eval, &decoder)?,
        error_rate_b: content_error_rate(&bases.base_b, eval, &decoder)?,
        max_base_error_rate: MAX_BASE_ERROR_RATE,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContentPoint {
    pub alpha: f64,
    pub error_rate: f64,
}

pub fn content_csv(points: &[ContentPoint]) -> String {
    let mut out = String::from("alpha,error_rate\n");
    for p in points {
        writeln!(out, "{:.6},{:.6}", p.alpha, p.error_rate).unwrap();
    }
    out
}

/// Content error of every model along a sweep.
pub fn content_sweep(
    recipe: &Recipe,
    a: &Checkpoint,
    b: &Checkpoint,
    spec: &SweepSpec,
    eval: &Dataset,
) -> Result<Vec<ContentPoint>> {
    let decoder = recipe.decoder();
    sweep(a, b, spec, &recipe.merge_policy())?
        .map(|item| {
            let (alpha, model) = item?;
            Ok(ContentPoint {
                alpha,
                error_rate: content_error_rate(&model, eval, &decoder)?,
            })
        })
        .collect()
}

/// Intensity ranking over the intensity sweep, with both noiseless and
/// noisy raters.
pub fn intensity_eval(
    recipe: &Recipe,
    neutral: &Checkpoint,
    emotive: &Checkpoint,
    sentences: &[Vec<usize>],
    noise_seed: u64,
) -> Result<(IntensityReport, IntensityReport)> {
    let spec = SweepSpec::by_step(recipe.intensity_step)?;
    let models: Vec<(f64, Checkpoint)> =
        sweep(neutral, emotive, &spec, &recipe.merge_policy())?.collect::<Result<_>>()?;
    let noiseless = intensity_rank_eval(
        &models,
        sentences,
        &RaterConfig {
            trials: recipe.rater_trials,
            noise: RaterNoise::Absolute(0.0),
            noise_seed,
        },
    )?;
    let noisy = intensity_rank_eval(
        &models,
        sentences,
        &RaterConfig {
            trials: recipe.rater_trials,
            noise: RaterNoise::GapFraction(recipe.rater_sigma_fraction),
            noise_seed,
        },
    )?;
    Ok((noiseless, noisy))
}

/// Results of one full experiment.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub seed: u64,
    pub bases: Bases,
    pub gates: GateReport,
    pub secs: SecsReport,
    pub content: Vec<ContentPoint>,
    pub intensity_noiseless: IntensityReport,
    pub intensity_noisy: IntensityReport,
}

impl ExperimentReport {
    pub fn secs_csv(&self) -> String {
        self.secs.curve.to_csv()
    }

    pub fn content_csv(&self) -> String {
        content_csv(&self.content)
    }

    pub fn intensity_csv(&self) -> String {
        self.intensity_noisy.table.to_csv()
    }

    /// Human-readable digest.
    pub fn summary(&self) -> String {
        let g = &self.gates;
        let mut out = String::new();
        writeln!(out, "seed {}", self.seed).unwrap();
        writeln!(
            out,
            "train mse: pretrain {:.6}, base_a {:.6}, base_b {:.6}",
            self.bases.pretrain_mse, self.bases.base_a_mse, self.bases.base_b_mse
        )
        .unwrap();
        writeln!(
            out,
            "gates: pitch {:.4} vs {:.4} (need gap >= {:.4}), base error {:.4} / {:.4} (need <= {:.2}) -> {}",
            g.pitch_a,
            g.pitch_b,
            g.required_pitch_gap,
            g.error_rate_a,
            g.error_rate_b,
            g.max_base_error_rate,
            if g.passed() { "ok" } else { "FAILED" }
        )
        .unwrap();
        writeln!(
            out,
            "secs: max_violation {:.6}, max_jump {:.6}",
            self.secs.smoothness.max_violation, self.secs.smoothness.max_jump
        )
        .unwrap();
        let worst = self
            .content
            .iter()
            .map(|p| p.error_rate)
            .fold(0.0, f64::max);
        writeln!(out, "content: worst error rate along sweep {worst:.4}").unwrap();
        writeln!(
            out,
            "intensity: estimates {:?}, sigma {:.6}, avg ranks {:?}",
            self.intensity_noiseless
                .estimates
                .iter()
                .map(|e| (e * 1e6).round() / 1e6)
                .collect::<Vec<_>>(),
            self.intensity_noisy.table.sigma,
            self.intensity_noisy
                .table
                .rows
                .iter()
                .map(|r| r.avg_rank)
                .collect::<Vec<_>>()
        )
        .unwrap();
        out
    }
}

/// Builds the bases, checks the gates, and runs every evaluation.
pub fn run_experiment(recipe: &Recipe, seed: u64) -> Result<ExperimentReport> {
    let bases = build_bases(recipe, seed)?;
    let eval = recipe.eval_dataset(seed)?;
    let gates = check_gates(recipe, &bases, &eval)?;
    if !gates.passed() {
        return Err(Error::GateFailed(format!(
            "seed {seed}: pitch {:.4} vs {:.4} (need gap {:.4}), base error rates {:.4} / {:.4} (max {:.2})",
            gates.pitch_a,
            gates.pitch_b,
            gates.required_pitch_gap,
            gates.error_rate_a,
            gates.error_rate_b,
            gates.max_base_error_rate
        )));
    }
    let sentences = eval.sentences();
    let secs = secs_curve(
        &bases.base_a,
        &bases.base_b,
        &SweepSpec::by_step(recipe.secs_step)?,
        &sentences,
        &recipe.merge_policy(),
    )?;
    let content = content_sweep(
        recipe,
        &bases.base_a,
        &bases.base_b,
        &SweepSpec::by_step(recipe.secs_step)?,
        &eval,
    )?;
    let (intensity_noiseless, intensity_noisy) = intensity_eval(
        recipe,
        &bases.base_a,
        &bases.base_b,
        &sentences,
        seed.wrapping_add(seed_role::RATER_NOISE),
    )?;
    Ok(ExperimentReport {
        seed,
        bases,
        gates,
        secs,
        content,
        intensity_noiseless,
        intensity_noisy,
    })
}
