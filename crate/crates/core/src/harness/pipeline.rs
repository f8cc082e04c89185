use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EpisodeLog, HarnessError};
use crate::attack::{
    build_multi_instance_system, detect_specs, detect_specs_unordered, extend_spec2, invariants,
    reconstruct_with_anchor, resolve_permutations, structure_guess, svd_guess, AttackError, InvariantPair,
    PermutationMap, PermutationOptions, RankReport, SpecReport, StepObservation,
};
use crate::cipher::{check_consistency, Guess, Permutation, Provenance};
use crate::numerics::{numeric_rank_with, svd};
use crate::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackStage {
    Invariants,
    Detection,
    Permutations,
    Guess,
    Anchor,
    Extension,
}

/// What to declare as the optimizer of the anchor step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum AnchorPolicy {
    /// `z^* = 0`, the natural guess for a regulator near its setpoint.
    Zero,
    /// The true optimizer, taken from the log's ground truth.
    Oracle,
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "step", rename_all = "snake_case")]
pub enum KSelection {
    Largest,
    Containing(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOptions {
    pub anchor: AnchorPolicy,
    pub k_selection: KSelection,
    /// A known absolute permutation `(step, P)` for permuted logs.
    #[serde(default)]
    pub reference_perm: Option<(usize, Permutation)>,
    /// Leading rows of `e` shared by all steps; defaults to the `2l` box
    /// rows the structure guess exposes.
    #[serde(default)]
    pub q_fix: Option<usize>,
    /// Overrides the log's constancy tolerance.
    #[serde(default)]
    pub constancy_tol: Option<f64>,
}

impl Default for AttackOptions {
    fn default() -> Self {
        AttackOptions {
            anchor: AnchorPolicy::Zero,
            k_selection: KSelection::Largest,
            reference_perm: None,
            q_fix: None,
            constancy_tol: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    pub steps: Vec<usize>,
    /// `z^_k - z*_k` on the applied input components.
    pub errors: Vec<Vec<f64>>,
    pub max_abs_error: f64,
    pub mean_abs_error: Vec<f64>,
    /// Mean signed error per component, i.e. the estimated offset.
    pub offset: Vec<f64>,
    pub offset_std: Vec<f64>,
    pub spec1: bool,
    pub spec3_sets: Vec<Vec<usize>>,
    pub period_estimate: Option<usize>,
    pub k_used: Vec<usize>,
    pub anchor_step: usize,
    pub guess_kind: Provenance,
    /// Fraction of steps whose permutation was recovered exactly.
    pub permutation_recovery_rate: Option<f64>,
    pub consistency_failures: usize,
    /// Rank of the stacked system over the chosen set, before anchoring.
    pub rank_report: RankReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedInput {
    pub k: usize,
    pub estimate: Vec<f64>,
    pub truth: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub spec_report: SpecReport,
    pub permutation_map: Option<PermutationMap>,
    pub metrics: AttackMetrics,
    pub inputs: Vec<ReconstructedInput>,
}

fn abort(stage: AttackStage) -> impl Fn(AttackError) -> HarnessError {
    move |source| HarnessError::AttackAbort { stage, source }
}

/// The full attack on a logged episode. Only ciphertexts, `y*` and the
/// optional known permutation feed the attack; the ground truth in the log
/// is read only for the oracle anchor and the final metrics.
pub fn run_attack(log: &EpisodeLog, opts: &AttackOptions) -> Result<AttackReport, HarnessError> {
    let view = log.adversary_view();
    let tol = opts.constancy_tol.unwrap_or(log.config.tolerances.constancy);
    let pairs: Vec<InvariantPair> = view
        .steps
        .iter()
        .map(|o| invariants(&o.ciphertext))
        .collect::<Result<_, _>>()
        .map_err(abort(AttackStage::Invariants))?;
    if pairs.len() < 2 {
        return Err(abort(AttackStage::Detection)(AttackError::TooFewObservations {
            need: 2,
            got: pairs.len(),
        }));
    }

    let spec_report = if view.permuted {
        detect_specs_unordered(&pairs, tol)
    } else {
        detect_specs(&pairs, tol)
    };
    if !spec_report.spec1 {
        return Err(abort(AttackStage::Guess)(AttackError::SpecificationMissing(format!(
            "a constant invariant matrix (deviation {:.3e} > {tol:.1e})",
            spec_report.spec1_deviation
        ))));
    }

    // Observations with rows restored to the client's order.
    let (obs, permutation_map): (Vec<StepObservation>, _) = if view.permuted {
        let (ref_step, ref_perm) = opts
            .reference_perm
            .clone()
            .ok_or(AttackError::MissingReferencePermutation)
            .map_err(abort(AttackStage::Permutations))?;
        let popts = PermutationOptions {
            refine_sets: spec_report.spec3_sets.clone(),
            vector_tol: tol,
            ..Default::default()
        };
        let map =
            resolve_permutations(&pairs, ref_step, &ref_perm, &popts).map_err(abort(AttackStage::Permutations))?;
        let obs = view
            .steps
            .iter()
            .zip(&map.absolute)
            .filter_map(|(o, p)| {
                p.as_ref().map(|p| StepObservation {
                    step: o.step,
                    ciphertext: o.ciphertext.unpermuted(p),
                    y_star: o.y_star.clone(),
                })
            })
            .collect();
        (obs, Some(map))
    } else {
        (view.steps.clone(), None)
    };

    let guesses = guess_all(&obs).map_err(abort(AttackStage::Guess))?;
    let guess_kind = guesses[0].provenance;
    let l = obs[0].ciphertext.num_vars();

    let available: Vec<usize> = obs.iter().map(|o| o.step).collect();
    let chosen = match &opts.k_selection {
        KSelection::Largest => spec_report.largest_set(),
        KSelection::Containing(k) => spec_report.set_containing(*k),
    };
    let k_used: Vec<usize> = chosen
        .map(|set| set.iter().copied().filter(|k| available.contains(k)).collect())
        .unwrap_or_default();
    let Some(&anchor_step) = k_used.last() else {
        return Err(abort(AttackStage::Anchor)(AttackError::SpecificationMissing(
            "a set of steps with constant v".into(),
        )));
    };
    let idx = |k: usize| available.iter().position(|&s| s == k).unwrap();
    let k_idx: Vec<usize> = k_used.iter().map(|&k| idx(k)).collect();
    let obs_k: Vec<StepObservation> = k_idx.iter().map(|&i| obs[i].clone()).collect();
    let guesses_k: Vec<Guess> = k_idx.iter().map(|&i| guesses[i].clone()).collect();

    let anchor = match &opts.anchor {
        AnchorPolicy::Zero => Vector::zeros(l),
        AnchorPolicy::Oracle => log
            .records
            .iter()
            .find(|r| r.k == anchor_step)
            .map(|r| r.z_star.clone())
            .expect("anchor step is logged"),
        AnchorPolicy::Custom(v) if v.len() == l => Vector::from_column_slice(v),
        AnchorPolicy::Custom(v) => {
            return Err(abort(AttackStage::Anchor)(AttackError::ShapeMismatch(format!(
                "anchor has {} entries, need {l}",
                v.len()
            ))))
        }
    };
    let anchored = reconstruct_with_anchor(&obs_k, &guesses_k, &anchor).map_err(abort(AttackStage::Anchor))?;
    let system = build_multi_instance_system(&obs_k, &guesses_k).map_err(abort(AttackStage::Anchor))?;
    let singular_values = svd(&system.a)
        .map_err(|e| abort(AttackStage::Anchor)(e.into()))?
        .singular_values;
    let rank = numeric_rank_with(&singular_values, log.config.tolerances.rank);
    let rank_report = RankReport {
        unknowns: system.a.ncols(),
        rank,
        nullspace_dim: system.a.ncols() - rank,
    };

    let q_fix = match (opts.q_fix, guess_kind) {
        (Some(q), _) => q,
        (None, Provenance::Structure) => 2 * l,
        (None, _) => {
            return Err(abort(AttackStage::Extension)(AttackError::SpecificationMissing(
                "a known block of constant constraint rows".into(),
            )))
        }
    };
    let anchor_r = &anchored.guesses.last().expect("K is not empty").r_vec;
    let full =
        extend_spec2(&obs, &guesses, idx(anchor_step), anchor_r, q_fix).map_err(abort(AttackStage::Extension))?;

    let consistency_failures = full
        .guesses
        .iter()
        .zip(&obs)
        .filter(|(g, o)| match check_consistency(g, &o.ciphertext) {
            Ok(c) => {
                let r = c.residuals;
                [r.h, r.g, r.f, r.e]
                    .iter()
                    .any(|&x| x > log.config.tolerances.consistency)
            }
            Err(_) => true,
        })
        .count();

    let estimates = full.optimizers(&obs);
    let mut inputs = Vec::with_capacity(obs.len());
    for (o, z_hat) in obs.iter().zip(&estimates) {
        let record = log
            .records
            .iter()
            .find(|r| r.k == o.step)
            .expect("observed steps are logged");
        let m = record.u.len();
        inputs.push(ReconstructedInput {
            k: o.step,
            estimate: z_hat.rows(0, m).iter().copied().collect(),
            truth: record.z_star.rows(0, m).iter().copied().collect(),
        });
    }

    let permutation_recovery_rate = permutation_map.as_ref().map(|map| {
        let hits = log
            .records
            .iter()
            .filter(|r| map.absolute_for(r.k).is_some_and(|p| Some(p) == r.key.perm.as_ref()))
            .count();
        hits as f64 / log.records.len() as f64
    });

    let metrics = error_metrics(
        &inputs,
        AttackMetrics {
            steps: available.clone(),
            errors: Vec::new(),
            max_abs_error: 0.0,
            mean_abs_error: Vec::new(),
            offset: Vec::new(),
            offset_std: Vec::new(),
            spec1: spec_report.spec1,
            spec3_sets: spec_report.spec3_sets.clone(),
            period_estimate: spec_report.period_estimate,
            k_used,
            anchor_step,
            guess_kind,
            permutation_recovery_rate,
            consistency_failures,
            rank_report,
        },
    );
    Ok(AttackReport {
        spec_report,
        permutation_map,
        metrics,
        inputs,
    })
}

/// Structure guesses when every step has the box pattern, otherwise the
/// SVD guess.
fn guess_all(obs: &[StepObservation]) -> Result<Vec<Guess>, AttackError> {
    if obs.is_empty() {
        return Err(AttackError::TooFewObservations { need: 1, got: 0 });
    }
    let structured: Result<Vec<Guess>, _> = obs.iter().map(|o| structure_guess(&o.ciphertext)).collect();
    match structured {
        Ok(g) => Ok(g),
        Err(_) => obs.iter().map(|o| svd_guess(&o.ciphertext)).collect(),
    }
}

fn error_metrics(inputs: &[ReconstructedInput], mut m: AttackMetrics) -> AttackMetrics {
    let dim = inputs.first().map_or(0, |i| i.truth.len());
    let n = inputs.len() as f64;
    m.errors = inputs
        .iter()
        .map(|i| i.estimate.iter().zip(&i.truth).map(|(a, b)| a - b).collect())
        .collect();
    m.max_abs_error = m.errors.iter().flatten().fold(0.0, |acc: f64, e| acc.max(e.abs()));
    m.offset = (0..dim)
        .map(|c| m.errors.iter().map(|e| e[c]).sum::<f64>() / n)
        .collect();
    m.mean_abs_error = (0..dim)
        .map(|c| m.errors.iter().map(|e| e[c].abs()).sum::<f64>() / n)
        .collect();
    m.offset_std = (0..dim)
        .map(|c| (m.errors.iter().map(|e| (e[c] - m.offset[c]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    m
}

/// Writes `metrics.json` and `reconstructed_inputs.csv` into `dir`.
pub fn write_attack_outputs(report: &AttackReport, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let metrics = dir.join("metrics.json");
    fs::write(&metrics, serde_json::to_string_pretty(report)?)?;

    let inputs = dir.join("reconstructed_inputs.csv");
    let mut w = csv::Writer::from_path(&inputs)?;
    let dim = report.inputs.first().map_or(0, |i| i.truth.len());
    let mut header = vec!["k".to_string()];
    header.extend((1..=dim).map(|c| format!("u{c}_hat")));
    header.extend((1..=dim).map(|c| format!("u{c}")));
    w.write_record(&header)?;
    for i in &report.inputs {
        let mut row = vec![i.k.to_string()];
        row.extend(i.estimate.iter().chain(&i.truth).map(|x| format!("{x:e}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(vec![metrics, inputs])
}
