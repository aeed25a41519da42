//! The coefficient-anchored fine-tuning loss.
//!
//! For a batch B: fit ridge coefficients on the batch's interior non-ROI
//! rows (B--), predict reading times for all interior rows (B-), and take
//!
//!   mean squared residual over B-  +  lambda * || beta_B -- beta_anchor ||^2
//!
//! Both terms differentiate with respect to the model parameters: the
//! residual term through the design-matrix surprisal entries and through
//! the coefficients, the anchor term through the coefficients alone.

use super::{AnchorCoefficients, TrainingConfig, TrainingError};
use crate::corpus::{subset, Dataset, SubsetLevel};
use crate::features::{build_plan, FeatureConfig, FeaturePlan, FrequencyTable};
use crate::lm::TinyLm;
use crate::tape::{Placement, Tape, Var};
use ndarray::{Array1, Array2};
use std::collections::BTreeMap;

/// Scalar components of one loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub total: f64,
    pub mse_term: f64,
    pub anchor_term: f64,
    pub minus_rows: usize,
    pub minus_minus_rows: usize,
}

pub(crate) struct LossGraph {
    pub loss: Var,
    pub breakdown: LossBreakdown,
}

/// Builds the loss graph on an existing tape whose parameter leaves are in
/// `tp` (see [`TinyLm::tape_params`]).
pub(crate) fn loss_graph(
    lm: &TinyLm,
    tape: &mut Tape,
    tp: &crate::lm::tiny::TapeParams,
    batch: &Dataset,
    anchors: &AnchorCoefficients,
    freq: &FrequencyTable,
    fcfg: &FeatureConfig,
    tcfg: &TrainingConfig,
) -> Result<LossGraph, TrainingError> {
    let minus_view = subset(batch, SubsetLevel::Minus);
    let mm_view = subset(batch, SubsetLevel::MinusMinus);
    let plan_minus = build_plan(&minus_view, freq, fcfg)?;
    let plan_mm = build_plan(&mm_view, freq, fcfg)?;
    if plan_minus.rows.is_empty() {
        return Err(TrainingError::EmptyBatch);
    }
    let need = plan_mm.columns.len() + 1;
    if plan_mm.rows.len() < need {
        return Err(TrainingError::InsufficientRows {
            have: plan_mm.rows.len(),
            need,
        });
    }
    if anchors.beta0.len() != plan_mm.columns.len() {
        return Err(TrainingError::Config(format!(
            "anchor coefficients have {} entries but the design has {} columns",
            anchors.beta0.len(),
            plan_mm.columns.len()
        )));
    }

    // One differentiable surprisal series per sentence, shared by both plans.
    let mut surp_vars: BTreeMap<String, Var> = BTreeMap::new();
    for plan in [&plan_mm, &plan_minus] {
        for s in &plan.sentences {
            if !surp_vars.contains_key(&s.sentence_id) {
                let var = lm.word_surprisal_var(tape, tp, &s.words)?;
                surp_vars.insert(s.sentence_id.clone(), var);
            }
        }
    }

    let (x_mm, psi_mm) = scatter_plan(tape, &plan_mm, &surp_vars);
    let beta = tape.ridge_solve(x_mm, &psi_mm, tcfg.rho)?;

    let (x_minus, psi_minus) = scatter_plan(tape, &plan_minus, &surp_vars);
    let pred = tape.matmul(x_minus, beta);
    let psi_node = tape.constant(
        Array2::from_shape_vec((psi_minus.len(), 1), psi_minus.to_vec()).expect("column shape"),
    );
    let resid = tape.sub(psi_node, pred);
    let resid_sq = tape.square(resid);
    let mse = tape.mean_all(resid_sq);

    let anchor_node = tape.constant(
        Array2::from_shape_vec((anchors.beta0.len(), 1), anchors.beta0.to_vec())
            .expect("column shape"),
    );
    let dev = tape.sub(beta, anchor_node);
    let dev_sq = tape.square(dev);
    let dev_sum = tape.sum_all(dev_sq);
    let anchor_term = tape.scale(dev_sum, tcfg.lambda);

    let loss = tape.add(mse, anchor_term);
    let breakdown = LossBreakdown {
        total: tape.scalar(loss),
        mse_term: tape.scalar(mse),
        anchor_term: tape.scalar(anchor_term),
        minus_rows: plan_minus.rows.len(),
        minus_minus_rows: plan_mm.rows.len(),
    };
    Ok(LossGraph { loss, breakdown })
}

/// Scatters a feature plan onto the tape: constant control entries plus
/// differentiable surprisal placements.
fn scatter_plan(
    tape: &mut Tape,
    plan: &FeaturePlan,
    surp_vars: &BTreeMap<String, Var>,
) -> (Var, Array1<f64>) {
    let rows = plan.rows.len();
    let cols = plan.columns.len();
    let mut base = Array2::<f64>::zeros((rows, cols));
    let mut psi = Array1::<f64>::zeros(rows);
    let sources: Vec<Var> = plan
        .sentences
        .iter()
        .map(|s| surp_vars[&s.sentence_id])
        .collect();
    let mut places = Vec::new();
    for (r, row) in plan.rows.iter().enumerate() {
        for (c, v) in row.controls.iter().enumerate() {
            base[(r, c)] = *v;
        }
        for &(c, w) in &row.surprisal_slots {
            places.push(Placement {
                row: r,
                col: c,
                source: row.sentence,
                index: w,
            });
        }
        psi[r] = row.target_rt;
    }
    (tape.scatter_design(base, &sources, &places), psi)
}

/// Evaluates the loss for a batch without keeping the graph (probes, tests).
pub fn compute_loss(
    lm: &TinyLm,
    batch: &Dataset,
    anchors: &AnchorCoefficients,
    freq: &FrequencyTable,
    fcfg: &FeatureConfig,
    tcfg: &TrainingConfig,
) -> Result<LossBreakdown, TrainingError> {
    let mut tape = Tape::new();
    let tp = lm.tape_params(&mut tape);
    Ok(loss_graph(lm, &mut tape, &tp, batch, anchors, freq, fcfg, tcfg)?.breakdown)
}
