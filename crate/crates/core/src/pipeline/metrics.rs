//! Event-level detection quality under tolerance-window matching.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Perturbation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub flags: Vec<usize>,
    /// Per truth event, the flag matched to it.
    pub matches: Vec<Option<usize>>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tolerance: usize,
}

impl DetectionReport {
    pub fn matched_events(&self) -> usize {
        self.matches.iter().filter(|m| m.is_some()).count()
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// One-to-one matching of flags to events: a flag may match an unmatched
/// event whose window `[start − tol, end + tol]` contains it. Flags are
/// visited in time order and each takes the eligible event whose window
/// closes first, which maximizes the number of matches.
pub fn evaluate_detection(
    flags: &[usize],
    events: &[Perturbation],
    tolerance: i64,
) -> Result<DetectionReport> {
    if tolerance < 0 {
        return Err(Error::Config(format!(
            "match tolerance {tolerance} must be nonnegative"
        )));
    }
    let tol = tolerance as usize;
    let mut sorted_flags = flags.to_vec();
    sorted_flags.sort_unstable();
    let mut matches: Vec<Option<usize>> = vec![None; events.len()];
    let mut matched_flags = 0;
    for &f in &sorted_flags {
        let best = events
            .iter()
            .enumerate()
            .filter(|(i, e)| {
                matches[*i].is_none() && e.start.saturating_sub(tol) <= f && f <= e.end + tol
            })
            .min_by_key(|(i, e)| (e.end, *i))
            .map(|(i, _)| i);
        if let Some(i) = best {
            matches[i] = Some(f);
            matched_flags += 1;
        }
    }
    let precision = if sorted_flags.is_empty() {
        0.0
    } else {
        matched_flags as f64 / sorted_flags.len() as f64
    };
    let recall = if events.is_empty() {
        0.0
    } else {
        matched_flags as f64 / events.len() as f64
    };
    Ok(DetectionReport {
        flags: sorted_flags,
        matches,
        precision,
        recall,
        f1: f1_score(precision, recall),
        tolerance: tol,
    })
}
