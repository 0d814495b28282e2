//! Held-out evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::categorize::{categorize_error, ErrorCategory};
use super::ErrorRates;
use crate::error::{Error, Result};
use crate::policy::{generate, Decoding, PolicyModel, PolicyParams, Role, TokenId};
use crate::rng::{rng_for, stream};
use crate::synthenv::{generate_instance, verify, EnvConfig, Instance};

/// How answers are produced at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Observer caption first, then the Solver on (image?, question, caption).
    DualRole { solver_image: bool },
    /// Solver directly on (image, question) with an empty caption.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalMode {
    Greedy,
    Sampled { n: usize, temperature: f64, top_p: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `(samples, correct)` per question; present in sampled mode.
    pub per_question: Option<Vec<(usize, usize)>>,
    /// Greedy mode only.
    pub error_rates: Option<ErrorRates>,
    pub categories: Vec<ErrorCategory>,
}

/// Held-out instances from a stream disjoint from training draws.
pub fn eval_set(env: &EnvConfig, seed: u64, size: usize) -> Result<Vec<Instance>> {
    (0..size)
        .map(|i| generate_instance(crate::rng::derive_seed(seed, &[stream::EVAL_INSTANCE, i as u64]), env))
        .collect()
}

/// One pass of the pipeline; returns (caption tokens, answer tokens).
fn run_pipeline(
    model: &PolicyModel,
    params: &PolicyParams,
    inst: &Instance,
    pipeline: Pipeline,
    decoding: Decoding,
    rng: &mut crate::rng::Rng,
) -> Result<(Vec<TokenId>, Vec<TokenId>)> {
    match pipeline {
        Pipeline::DualRole { solver_image } => {
            let caption = generate(model, params, Role::Observer, inst, true, None, decoding, rng)?;
            let answer =
                generate(model, params, Role::Solver, inst, solver_image, Some(&caption.tokens), decoding, rng)?;
            Ok((caption.tokens, answer.tokens))
        }
        Pipeline::Direct => {
            let answer = generate(model, params, Role::Solver, inst, true, Some(&[]), decoding, rng)?;
            Ok((Vec::new(), answer.tokens))
        }
    }
}

pub fn evaluate(
    model: &PolicyModel,
    params: &PolicyParams,
    eval_set: &[Instance],
    mode: EvalMode,
    pipeline: Pipeline,
    seed: u64,
) -> Result<EvalReport> {
    if eval_set.is_empty() {
        return Err(Error::Input("evaluation set is empty".into()));
    }
    model.check_params(params)?;
    let vocab = &model.vocab;
    match mode {
        EvalMode::Greedy => {
            let categories = eval_set
                .par_iter()
                .enumerate()
                .map(|(i, inst)| {
                    let mut rng = rng_for(seed, &[stream::EVAL_SAMPLE, i as u64]);
                    let (caption, answer) = run_pipeline(model, params, inst, pipeline, Decoding::Greedy, &mut rng)?;
                    Ok(categorize_error(
                        &inst.scene,
                        &inst.question,
                        &vocab.decode(&caption),
                        &vocab.decode(&answer),
                        inst.gold,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let rates = ErrorRates::from_categories(&categories);
            let correct = categories.iter().filter(|c| **c == ErrorCategory::Correct).count();
            Ok(EvalReport {
                accuracy: correct as f64 / categories.len() as f64,
                per_question: None,
                error_rates: Some(rates),
                categories,
            })
        }
        EvalMode::Sampled { n, temperature, top_p } => {
            if n == 0 {
                return Err(Error::Input("sampled evaluation needs n >= 1".into()));
            }
            let decoding = Decoding::Sample { temperature, top_p };
            let counts = eval_set
                .par_iter()
                .enumerate()
                .map(|(i, inst)| {
                    let mut rng = rng_for(seed, &[stream::EVAL_SAMPLE, i as u64]);
                    let mut c = 0;
                    for _ in 0..n {
                        let (_, answer) = run_pipeline(model, params, inst, pipeline, decoding, &mut rng)?;
                        c += usize::from(verify(&vocab.decode(&answer), inst.gold));
                    }
                    Ok((n, c))
                })
                .collect::<Result<Vec<_>>>()?;
            let correct: usize = counts.iter().map(|(_, c)| c).sum();
            Ok(EvalReport {
                accuracy: correct as f64 / (n * counts.len()) as f64,
                per_question: Some(counts),
                error_rates: None,
                categories: Vec::new(),
            })
        }
    }
}
