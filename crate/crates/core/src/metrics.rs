//! Note-level transcription metrics: precision/recall/F1 under the three
//! nested criteria (onset; onset+offset; onset+offset+velocity), with
//! maximum-cardinality bipartite matching so crossed candidates are
//! resolved optimally rather than greedily.
//!
//! Velocity handling: a single least-squares linear rescale of estimate
//! velocities is fitted on the pairs matched by the non-velocity
//! criteria, then the tolerance is applied against the 0-127 scale (or
//! per-note when `velocity_relative_to_note` is set).

use crate::error::{input_err, Result};
use crate::tokenizer::NoteEvent;

#[derive(Debug, Clone, PartialEq)]
pub struct MatchCriteria {
    pub onset_tolerance: f64,
    pub offset_ratio: f64,
    pub offset_min_tolerance: f64,
    pub velocity_tolerance: f64,
    pub use_offset: bool,
    pub use_velocity: bool,
    /// Tolerance relative to each reference note's velocity instead of
    /// the full 0-127 scale.
    pub velocity_relative_to_note: bool,
}

impl Default for MatchCriteria {
    fn default() -> Self {
        MatchCriteria {
            onset_tolerance: 0.05,
            offset_ratio: 0.2,
            offset_min_tolerance: 0.05,
            velocity_tolerance: 0.1,
            use_offset: false,
            use_velocity: false,
            velocity_relative_to_note: false,
        }
    }
}

impl MatchCriteria {
    pub fn onset_only() -> Self {
        MatchCriteria::default()
    }

    pub fn onset_offset() -> Self {
        MatchCriteria {
            use_offset: true,
            ..MatchCriteria::default()
        }
    }

    pub fn onset_offset_velocity() -> Self {
        MatchCriteria {
            use_offset: true,
            use_velocity: true,
            ..MatchCriteria::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.onset_tolerance <= 0.0
            || self.offset_ratio <= 0.0
            || self.offset_min_tolerance <= 0.0
            || self.velocity_tolerance <= 0.0
        {
            return input_err("matching tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub n_ref: usize,
    pub n_est: usize,
}

impl EvalResult {
    fn from_counts(matched: usize, n_ref: usize, n_est: usize) -> EvalResult {
        if n_ref == 0 && n_est == 0 {
            // vacuous perfection
            return EvalResult {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
                matched: 0,
                n_ref,
                n_est,
            };
        }
        let precision = if n_est > 0 {
            matched as f64 / n_est as f64
        } else {
            0.0
        };
        let recall = if n_ref > 0 {
            matched as f64 / n_ref as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        EvalResult {
            precision,
            recall,
            f1,
            matched,
            n_ref,
            n_est,
        }
    }
}

/// Is (r, e) a candidate under the non-velocity part of the criteria?
fn pair_valid(r: &NoteEvent, e: &NoteEvent, c: &MatchCriteria) -> bool {
    if r.pitch != e.pitch {
        return false;
    }
    if (e.onset - r.onset).abs() > c.onset_tolerance {
        return false;
    }
    if c.use_offset {
        let dur = r.offset - r.onset;
        let tol = c.offset_min_tolerance.max(c.offset_ratio * dur);
        if (e.offset - r.offset).abs() > tol {
            return false;
        }
    }
    true
}

/// Kuhn's augmenting-path maximum bipartite matching.
/// `adj[i]` lists the estimate indices valid for reference `i`.
/// Returns, per reference, the matched estimate index.
fn max_matching(adj: &[Vec<usize>], n_est: usize) -> Vec<Option<usize>> {
    let n_ref = adj.len();
    let mut match_ref: Vec<Option<usize>> = vec![None; n_ref];
    let mut match_est: Vec<Option<usize>> = vec![None; n_est];

    fn try_augment(
        i: usize,
        adj: &[Vec<usize>],
        seen: &mut [bool],
        match_ref: &mut [Option<usize>],
        match_est: &mut [Option<usize>],
    ) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if match_est[j].is_none()
                || try_augment(match_est[j].unwrap(), adj, seen, match_ref, match_est)
            {
                match_ref[i] = Some(j);
                match_est[j] = Some(i);
                return true;
            }
        }
        false
    }

    for i in 0..n_ref {
        let mut seen = vec![false; n_est];
        try_augment(i, adj, &mut seen, &mut match_ref, &mut match_est);
    }
    match_ref
}

/// Least-squares line mapping estimate velocities onto reference
/// velocities over the given pairs. Zero-variance input degenerates to a
/// constant at the mean reference velocity.
fn velocity_fit(pairs: &[(f64, f64)]) -> (f64, f64) {
    if pairs.is_empty() {
        return (1.0, 0.0);
    }
    let n = pairs.len() as f64;
    let mean_e = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_r = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let var_e = pairs.iter().map(|p| (p.0 - mean_e).powi(2)).sum::<f64>();
    if var_e < 1e-12 {
        return (0.0, mean_r);
    }
    let cov = pairs
        .iter()
        .map(|p| (p.0 - mean_e) * (p.1 - mean_r))
        .sum::<f64>();
    let slope = cov / var_e;
    (slope, mean_r - slope * mean_e)
}

/// Match estimate notes against reference notes under the criteria and
/// report precision/recall/F1.
pub fn match_notes(
    reference: &[NoteEvent],
    estimate: &[NoteEvent],
    criteria: &MatchCriteria,
) -> Result<EvalResult> {
    criteria.validate()?;
    for n in reference.iter().chain(estimate.iter()) {
        n.validate()?;
    }
    let n_ref = reference.len();
    let n_est = estimate.len();
    if n_ref == 0 || n_est == 0 {
        return Ok(EvalResult::from_counts(0, n_ref, n_est));
    }

    let adj: Vec<Vec<usize>> = reference
        .iter()
        .map(|r| {
            estimate
                .iter()
                .enumerate()
                .filter(|(_, e)| pair_valid(r, e, criteria))
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    let matching = max_matching(&adj, n_est);

    let matched = if criteria.use_velocity {
        let pairs: Vec<(usize, usize)> = matching
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|j| (i, j)))
            .collect();
        let fit_data: Vec<(f64, f64)> = pairs
            .iter()
            .map(|&(i, j)| (estimate[j].velocity as f64, reference[i].velocity as f64))
            .collect();
        let (slope, intercept) = velocity_fit(&fit_data);
        pairs
            .iter()
            .filter(|&&(i, j)| {
                let scaled = slope * estimate[j].velocity as f64 + intercept;
                let tol = if criteria.velocity_relative_to_note {
                    criteria.velocity_tolerance * reference[i].velocity as f64
                } else {
                    criteria.velocity_tolerance * 127.0
                };
                (scaled - reference[i].velocity as f64).abs() <= tol
            })
            .count()
    } else {
        matching.iter().filter(|m| m.is_some()).count()
    };
    Ok(EvalResult::from_counts(matched, n_ref, n_est))
}

/// The three standard criteria in nesting order.
pub fn evaluate_all(reference: &[NoteEvent], estimate: &[NoteEvent]) -> Result<[EvalResult; 3]> {
    Ok([
        match_notes(reference, estimate, &MatchCriteria::onset_only())?,
        match_notes(reference, estimate, &MatchCriteria::onset_offset())?,
        match_notes(reference, estimate, &MatchCriteria::onset_offset_velocity())?,
    ])
}

pub const CRITERION_NAMES: [&str; 3] = ["onset", "onset_offset", "onset_offset_velocity"];

/// Machine-readable report: `criterion,precision,recall,f1,matched,ref,est`.
pub fn format_eval_csv(results: &[EvalResult; 3]) -> String {
    let mut out = String::from("criterion,precision,recall,f1,matched,ref,est\n");
    for (name, r) in CRITERION_NAMES.iter().zip(results.iter()) {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{},{},{}\n",
            name, r.precision, r.recall, r.f1, r.matched, r.n_ref, r.n_est
        ));
    }
    out
}

/// Human-readable table.
pub fn format_eval_table(results: &[EvalResult; 3]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>9} {:>9} {:>9} {:>8} {:>6} {:>6}\n",
        "criterion", "precision", "recall", "f1", "matched", "ref", "est"
    ));
    for (name, r) in CRITERION_NAMES.iter().zip(results.iter()) {
        out.push_str(&format!(
            "{:<24} {:>9.4} {:>9.4} {:>9.4} {:>8} {:>6} {:>6}\n",
            name, r.precision, r.recall, r.f1, r.matched, r.n_ref, r.n_est
        ));
    }
    out
}
