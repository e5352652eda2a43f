//! Attention mask construction.
//!
//! Three sparse families plus full attention:
//! - band: query i attends keys j with |i-j| <= floor(w/2)
//! - causal band: query i attends keys j with 0 <= i-j <= w
//! - hybrid global-local: Time-type queries attend everywhere; other
//!   queries attend keys j with |j - t_i| <= w around their anchored
//!   input frame t_i
//!
//! Note the asymmetry kept on purpose: the symmetric band spans w/2 each
//! side while the causal band admits w past positions and the hybrid
//! window spans w each side. All three are parameterized by the same w.

use crate::error::{contract_err, input_err, Result};
use crate::tensor::{Scalar, Tensor};
use crate::tokenizer::TokenKind;

/// Declarative mask family. `materialize` produces the concrete mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskSpec {
    Full,
    Band { window: usize },
    CausalBand { window: usize },
    Hybrid { window: usize },
}

/// Per-query metadata for the hybrid mask: the query token's kind and the
/// input frame index anchored by the most recent Time token, if any.
/// Queries with no anchor yet (BOS, anything before the first Time token)
/// get a global row, as do Time-type and special queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HybridQuery {
    pub kind: TokenKind,
    pub anchor: Option<usize>,
}

impl HybridQuery {
    pub fn is_global(&self) -> bool {
        !matches!(
            self.kind,
            TokenKind::NoteOn | TokenKind::NoteOff | TokenKind::Velocity
        ) || self.anchor.is_none()
    }
}

/// Materialized additive mask: entries are 0 (attend) or -inf (blocked).
/// Every admitted pattern here is contiguous per row, so the mask also
/// carries a band descriptor: per-row admitted `[start, end)` columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n_q: usize,
    n_k: usize,
    rows: Vec<(usize, usize)>,
}

impl AttentionMask {
    fn from_rows(n_q: usize, n_k: usize, rows: Vec<(usize, usize)>) -> Result<Self> {
        for (i, &(s, e)) in rows.iter().enumerate() {
            if s >= e || e > n_k {
                return contract_err(format!(
                    "mask row {i} admits no key (range {s}..{e} of {n_k})"
                ));
            }
        }
        Ok(AttentionMask { n_q, n_k, rows })
    }

    pub fn query_len(&self) -> usize {
        self.n_q
    }

    pub fn key_len(&self) -> usize {
        self.n_k
    }

    /// Per-row admitted column ranges `[start, end)`.
    pub fn band(&self) -> &[(usize, usize)] {
        &self.rows
    }

    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        let (s, e) = self.rows[i];
        j >= s && j < e
    }

    /// Total admitted entries; the work a band kernel performs per feature.
    pub fn admitted(&self) -> usize {
        self.rows.iter().map(|(s, e)| e - s).sum()
    }

    /// Additive matrix form: 0 where admitted, a large negative sentinel
    /// elsewhere (finite, so softmax max-subtraction stays NaN-free).
    pub fn additive<S: Scalar>(&self) -> Tensor<S> {
        let mut m = Tensor::zeros(&[self.n_q, self.n_k]);
        let sentinel = S::mask_sentinel();
        for i in 0..self.n_q {
            let (s, e) = self.rows[i];
            let row = m.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                if j < s || j >= e {
                    *v = sentinel;
                }
            }
        }
        m
    }
}

/// Full attention: every query sees every key.
pub fn build_full_mask(n_q: usize, n_k: usize) -> Result<AttentionMask> {
    if n_q == 0 || n_k == 0 {
        return input_err("mask dimensions must be at least 1");
    }
    AttentionMask::from_rows(n_q, n_k, vec![(0, n_k); n_q])
}

/// Symmetric sliding-window mask: admit |i-j| <= floor(w/2).
pub fn build_band_mask(n: usize, w: usize) -> Result<AttentionMask> {
    if n == 0 {
        return input_err("sequence length must be at least 1");
    }
    if w == 0 {
        return input_err("window must be at least 1");
    }
    let half = w / 2;
    let rows = (0..n)
        .map(|i| (i.saturating_sub(half), (i + half + 1).min(n)))
        .collect();
    AttentionMask::from_rows(n, n, rows)
}

/// Causal sliding-window mask: admit 0 <= i-j <= w.
pub fn build_causal_band_mask(n: usize, w: usize) -> Result<AttentionMask> {
    if n == 0 {
        return input_err("sequence length must be at least 1");
    }
    if w == 0 {
        return input_err("window must be at least 1");
    }
    let rows = (0..n).map(|i| (i.saturating_sub(w), i + 1)).collect();
    AttentionMask::from_rows(n, n, rows)
}

/// Token-type-aware hybrid global-local cross-attention mask.
/// Global rows for Time-type (and special/unanchored) queries; local rows
/// admit |j - t_i| <= w, clamped at the sequence edges.
pub fn build_hybrid_mask(
    queries: &[HybridQuery],
    key_len: usize,
    w: usize,
) -> Result<AttentionMask> {
    if queries.is_empty() || key_len == 0 {
        return input_err("hybrid mask needs at least one query and one key");
    }
    if w == 0 {
        return input_err("window must be at least 1");
    }
    let mut rows = Vec::with_capacity(queries.len());
    for (i, q) in queries.iter().enumerate() {
        if q.is_global() {
            rows.push((0, key_len));
        } else {
            let t = q.anchor.unwrap();
            if t >= key_len {
                return input_err(format!(
                    "hybrid query {i}: anchor {t} outside key range 0..{key_len}"
                ));
            }
            rows.push((t.saturating_sub(w), (t + w + 1).min(key_len)));
        }
    }
    AttentionMask::from_rows(queries.len(), key_len, rows)
}

impl MaskSpec {
    /// Build the mask for a (query_len, key_len) pair. Hybrid needs
    /// per-query metadata; the other kinds ignore it. Band kinds require
    /// square q/k (self-attention).
    pub fn materialize(
        &self,
        n_q: usize,
        n_k: usize,
        query_meta: Option<&[HybridQuery]>,
    ) -> Result<AttentionMask> {
        match *self {
            MaskSpec::Full => build_full_mask(n_q, n_k),
            MaskSpec::Band { window } => {
                if n_q != n_k {
                    return input_err("band mask is for self-attention (square shapes)");
                }
                build_band_mask(n_q, window)
            }
            MaskSpec::CausalBand { window } => {
                if n_q != n_k {
                    return input_err("causal band mask is for self-attention (square shapes)");
                }
                build_causal_band_mask(n_q, window)
            }
            MaskSpec::Hybrid { window } => {
                let meta = query_meta
                    .ok_or_else(|| crate::error::Error::Input("hybrid mask needs query metadata".into()))?;
                if meta.len() != n_q {
                    return input_err(format!(
                        "hybrid metadata length {} != query length {n_q}",
                        meta.len()
                    ));
                }
                build_hybrid_mask(meta, n_k, window)
            }
        }
    }
}
