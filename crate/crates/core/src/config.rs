//! Plain-text recipe files: one `key = value` per line, `#` starts a comment.
//! Keys not present keep their defaults; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::experiment::Recipe;

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("line {line}: bad value `{value}` for `{key}`")))
}

impl Recipe {
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut r = Recipe::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "line {line}: expected `key = value`, got `{content}`"
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "vocab_size" => r.model.vocab_size = parse(line, key, value)?,
                "embed_dim" => r.model.embed_dim = parse(line, key, value)?,
                "hidden_dim" => r.model.hidden_dim = parse(line, key, value)?,
                "feature_dim" => r.model.feature_dim = parse(line, key, value)?,
                "num_layers" => r.model.num_layers = parse(line, key, value)?,
                "sentence_length" => r.sentence_length = parse(line, key, value)?,
                "train_sentences" => r.train_sentences = parse(line, key, value)?,
                "eval_sentences" => r.eval_sentences = parse(line, key, value)?,
                "pretrain_epochs" => r.pretrain_epochs = parse(line, key, value)?,
                "finetune_epochs" => r.finetune_epochs = parse(line, key, value)?,
                "learning_rate" => r.learning_rate = parse(line, key, value)?,
                "batch_size" => r.batch_size = parse(line, key, value)?,
                "min_separation" => r.min_separation = parse(line, key, value)?,
                "secs_step" => r.secs_step = parse(line, key, value)?,
                "intensity_step" => r.intensity_step = parse(line, key, value)?,
                "rater_trials" => r.rater_trials = parse(line, key, value)?,
                "rater_sigma_fraction" => r.rater_sigma_fraction = parse(line, key, value)?,
                "profile_a.id" => r.profile_a.profile_id = value.to_string(),
                "profile_a.pitch_base" => r.profile_a.pitch_base = parse(line, key, value)?,
                "profile_a.tilt" => r.profile_a.tilt = parse(line, key, value)?,
                "profile_a.energy" => r.profile_a.energy = parse(line, key, value)?,
                "profile_b.id" => r.profile_b.profile_id = value.to_string(),
                "profile_b.pitch_base" => r.profile_b.pitch_base = parse(line, key, value)?,
                "profile_b.tilt" => r.profile_b.tilt = parse(line, key, value)?,
                "profile_b.energy" => r.profile_b.energy = parse(line, key, value)?,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "line {line}: unknown key `{other}`"
                    )))
                }
            }
        }
        r.model.validate()?;
        if r.sentence_length == 0 || r.train_sentences == 0 || r.eval_sentences == 0 {
            return Err(Error::InvalidConfig(
                "sentence_length, train_sentences and eval_sentences must be positive".into(),
            ));
        }
        if r.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(r)
    }

    pub fn from_config_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_config_str(&std::fs::read_to_string(path)?)
    }

    /// Serializes every key; parsing the result gives back `self`.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let m = &self.model;
        let (a, b) = (&self.profile_a, &self.profile_b);
        let entries: [(&str, String); 25] = [
            ("vocab_size", m.vocab_size.to_string()),
            ("embed_dim", m.embed_dim.to_string()),
            ("hidden_dim", m.hidden_dim.to_string()),
            ("feature_dim", m.feature_dim.to_string()),
            ("num_layers", m.num_layers.to_string()),
            ("sentence_length", self.sentence_length.to_string()),
            ("train_sentences", self.train_sentences.to_string()),
            ("eval_sentences", self.eval_sentences.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("finetune_epochs", self.finetune_epochs.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("min_separation", self.min_separation.to_string()),
            ("secs_step", self.secs_step.to_string()),
            ("intensity_step", self.intensity_step.to_string()),
            ("rater_trials", self.rater_trials.to_string()),
            (
                "rater_sigma_fraction",
                self.rater_sigma_fraction.to_string(),
            ),
            ("profile_a.id", a.profile_id.clone()),
            ("profile_a.pitch_base", a.pitch_base.to_string()),
            ("profile_a.tilt", a.tilt.to_string()),
            ("profile_a.energy", a.energy.to_string()),
            ("profile_b.id", b.profile_id.clone()),
            ("profile_b.pitch_base", b.pitch_base.to_string()),
            ("profile_b.tilt", b.tilt.to_string()),
            ("profile_b.energy", b.energy.to_string()),
        ];
        for (k, v) in entries {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }
}
