//! Masked scaled dot-product attention kernels.
//!
//! Two routes with identical semantics:
//! - `attention_dense`: reference path; computes the full query-key logit
//!   matrix, then a masked softmax (blocked logits treated as -inf, so
//!   blocked weights are exactly zero).
//! - `attention_band`: optimized path; touches only each row's admitted
//!   `[start, end)` column range, so work is proportional to the number
//!   of admitted entries instead of n_q * n_k.
//!
//! Both routes traverse admitted columns in the same order, so their
//! outputs agree to the last bit in exact regimes.
//!
//! Forward kernels bump a global multiply-accumulate counter (logit dots
//! plus weight-times-value accumulation) used by the benchmark harness as
//! a hardware-independent work measure.

use super::mask::AttentionMask;
use crate::error::{contract_err, input_err, Result};
use crate::tensor::{Scalar, Tensor};
use std::sync::atomic::{AtomicU64, Ordering};

static MAC_COUNT: AtomicU64 = AtomicU64::new(0);

/// Reset the global forward-pass MAC counter to zero.
pub fn reset_macs() {
    MAC_COUNT.store(0, Ordering::Relaxed);
}

/// Multiply-accumulate operations performed by attention forward kernels
/// since the last reset.
pub fn macs() -> u64 {
    MAC_COUNT.load(Ordering::Relaxed)
}

pub(crate) fn add_macs(n: u64) {
    MAC_COUNT.fetch_add(n, Ordering::Relaxed);
}

fn check_shapes<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    mask: &AttentionMask,
) -> Result<(usize, usize, usize, usize)> {
    if q.shape().len() != 2 || k.shape().len() != 2 || v.shape().len() != 2 {
        return input_err("attention expects 2-D Q, K, V");
    }
    let (n_q, d_k) = (q.shape()[0], q.shape()[1]);
    let (n_k, d_k2) = (k.shape()[0], k.shape()[1]);
    let (n_v, d_v) = (v.shape()[0], v.shape()[1]);
    if d_k != d_k2 {
        return input_err(format!("Q feature dim {d_k} != K feature dim {d_k2}"));
    }
    if n_k != n_v {
        return input_err(format!("K rows {n_k} != V rows {n_v}"));
    }
    if mask.query_len() != n_q || mask.key_len() != n_k {
        return input_err(format!(
            "mask shape [{}, {}] does not match attention shape [{n_q}, {n_k}]",
            mask.query_len(),
            mask.key_len()
        ));
    }
    Ok((n_q, n_k, d_k, d_v))
}

/// Softmax over `row[start..end]`, exact zeros elsewhere.
/// Errors if the admitted logits are not finite (never emits NaN).
fn masked_softmax_row<S: Scalar>(row: &mut [S], start: usize, end: usize, i: usize) -> Result<()> {
    if start >= end {
        return contract_err(format!("attention row {i} is fully masked"));
    }
    let mut max = S::neg_infinity();
    for &x in &row[start..end] {
        if x > max {
            max = x;
        }
    }
    if !max.is_finite() {
        return contract_err(format!("non-finite attention logit in row {i}"));
    }
    let mut sum = S::zero();
    for x in &mut row[start..end] {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = S::one() / sum;
    for x in row[..start].iter_mut() {
        *x = S::zero();
    }
    for x in row[start..end].iter_mut() {
        *x *= inv;
    }
    for x in row[end..].iter_mut() {
        *x = S::zero();
    }
    Ok(())
}

/// Saved forward state for the dense backward pass.
#[derive(Debug, Clone)]
pub struct DenseAttnCache<S> {
    q: Tensor<S>,
    k: Tensor<S>,
    v: Tensor<S>,
    probs: Tensor<S>,
}

/// Dense reference path: full logit matrix, masked softmax, full
/// probability-times-value product.
pub fn attention_dense<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    mask: &AttentionMask,
) -> Result<Tensor<S>> {
    attention_dense_fwd(q, k, v, mask).map(|(out, _)| out)
}

pub fn attention_dense_fwd<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    mask: &AttentionMask,
) -> Result<(Tensor<S>, DenseAttnCache<S>)> {
    let (n_q, n_k, d_k, d_v) = check_shapes(q, k, v, mask)?;
    let scale = S::one() / S::from_f64((d_k as f64).sqrt());

    let mut probs = Tensor::zeros(&[n_q, n_k]);
    for i in 0..n_q {
        let qrow = q.row(i);
        let prow = probs.row_mut(i);
        for (j, p) in prow.iter_mut().enumerate() {
            let krow = k.row(j);
            let mut dot = S::zero();
            for (&a, &b) in qrow.iter().zip(krow.iter()) {
                dot += a * b;
            }
            *p = dot * scale;
        }
        let (s, e) = mask.band()[i];
        masked_softmax_row(prow, s, e, i)?;
    }

    let mut out = Tensor::zeros(&[n_q, d_v]);
    for i in 0..n_q {
        let prow = probs.row(i);
        let orow = out.row_mut(i);
        for (j, &p) in prow.iter().enumerate() {
            let vrow = v.row(j);
            for (o, &vv) in orow.iter_mut().zip(vrow.iter()) {
                *o += p * vv;
            }
        }
    }
    add_macs((n_q * n_k) as u64 * (d_k + d_v) as u64);

    let cache = DenseAttnCache {
        q: q.clone(),
        k: k.clone(),
        v: v.clone(),
        probs,
    };
    Ok((out, cache))
}

/// Gradients of the dense path w.r.t. Q, K, V. Blocked positions carry
/// exactly zero probability, hence exactly zero gradient.
pub fn attention_dense_backward<S: Scalar>(
    cache: &DenseAttnCache<S>,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let (n_q, d_k) = (cache.q.shape()[0], cache.q.shape()[1]);
    let (n_k, d_v) = (cache.v.shape()[0], cache.v.shape()[1]);
    if grad_out.shape() != [n_q, d_v] {
        return contract_err(format!(
            "attention grad shape {:?}, expected [{n_q}, {d_v}]",
            grad_out.shape()
        ));
    }
    let scale = S::one() / S::from_f64((d_k as f64).sqrt());

    // dV = P^T dO
    let dv = crate::tensor::matmul_at(&cache.probs, grad_out)?;
    // dP = dO V^T
    let dp = crate::tensor::matmul_bt(grad_out, &cache.v)?;
    // dS = P .* (dP - rowsum(dP .* P))
    let mut ds = Tensor::zeros(&[n_q, n_k]);
    for i in 0..n_q {
        let prow = cache.probs.row(i);
        let dprow = dp.row(i);
        let mut dot = S::zero();
        for (&p, &g) in prow.iter().zip(dprow.iter()) {
            dot += p * g;
        }
        let dsrow = ds.row_mut(i);
        for ((d, &p), &g) in dsrow.iter_mut().zip(prow.iter()).zip(dprow.iter()) {
            *d = p * (g - dot);
        }
    }
    // dQ = dS K * scale ; dK = dS^T Q * scale
    let mut dq = crate::tensor::matmul(&ds, &cache.k)?;
    dq.scale(scale);
    let mut dk = crate::tensor::matmul_at(&ds, &cache.q)?;
    dk.scale(scale);
    Ok((dq, dk, dv))
}

/// Saved forward state for the band backward pass: probabilities stored
/// compactly, one slice per admitted row range.
#[derive(Debug, Clone)]
pub struct BandAttnCache<S> {
    q: Tensor<S>,
    k: Tensor<S>,
    v: Tensor<S>,
    rows: Vec<(usize, usize)>,
    row_offsets: Vec<usize>,
    probs: Vec<S>,
}

/// Band-sparse path: per row, compute logits and the weighted value sum
/// only over the admitted `[start, end)` range.
pub fn attention_band<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    mask: &AttentionMask,
) -> Result<Tensor<S>> {
    attention_band_fwd(q, k, v, mask).map(|(out, _)| out)
}

pub fn attention_band_fwd<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    mask: &AttentionMask,
) -> Result<(Tensor<S>, BandAttnCache<S>)> {
    let (n_q, _n_k, d_k, d_v) = check_shapes(q, k, v, mask)?;
    let scale = S::one() / S::from_f64((d_k as f64).sqrt());
    let rows = mask.band().to_vec();

    let mut row_offsets = Vec::with_capacity(n_q + 1);
    let mut total = 0usize;
    for &(s, e) in &rows {
        row_offsets.push(total);
        total += e - s;
    }
    row_offsets.push(total);

    let mut probs = vec![S::zero(); total];
    let mut out = Tensor::zeros(&[n_q, d_v]);
    for i in 0..n_q {
        let (s, e) = rows[i];
        let width = e - s;
        let qrow = q.row(i);
        let prow = &mut probs[row_offsets[i]..row_offsets[i] + width];
        for (off, p) in prow.iter_mut().enumerate() {
            let krow = k.row(s + off);
            let mut dot = S::zero();
            for (&a, &b) in qrow.iter().zip(krow.iter()) {
                dot += a * b;
            }
            *p = dot * scale;
        }
        masked_softmax_row(prow, 0, width, i)?;
        let orow = out.row_mut(i);
        for (off, &p) in prow.iter().enumerate() {
            let vrow = v.row(s + off);
            for (o, &vv) in orow.iter_mut().zip(vrow.iter()) {
                *o += p * vv;
            }
        }
    }
    add_macs(mask.admitted() as u64 * (d_k + d_v) as u64);

    let cache = BandAttnCache {
        q: q.clone(),
        k: k.clone(),
        v: v.clone(),
        rows,
        row_offsets,
        probs,
    };
    Ok((out, cache))
}

/// Gradients of the band path; only admitted entries are ever touched, so
/// blocked positions receive exactly zero gradient by construction.
pub fn attention_band_backward<S: Scalar>(
    cache: &BandAttnCache<S>,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let (n_q, d_k) = (cache.q.shape()[0], cache.q.shape()[1]);
    let (n_k, d_v) = (cache.v.shape()[0], cache.v.shape()[1]);
    if grad_out.shape() != [n_q, d_v] {
        return contract_err(format!(
            "attention grad shape {:?}, expected [{n_q}, {d_v}]",
            grad_out.shape()
        ));
    }
    let scale = S::one() / S::from_f64((d_k as f64).sqrt());

    let mut dq = Tensor::zeros(&[n_q, d_k]);
    let mut dk = Tensor::zeros(&[n_k, d_k]);
    let mut dv = Tensor::zeros(&[n_k, d_v]);

    for i in 0..n_q {
        let (s, e) = cache.rows[i];
        let width = e - s;
        let prow = &cache.probs[cache.row_offsets[i]..cache.row_offsets[i] + width];
        let grow = grad_out.row(i);

        // dP over the band, plus the softmax Jacobian dot term
        let mut dprow = vec![S::zero(); width];
        let mut jac_dot = S::zero();
        for (off, dp) in dprow.iter_mut().enumerate() {
            let vrow = cache.v.row(s + off);
            let mut acc = S::zero();
            for (&g, &vv) in grow.iter().zip(vrow.iter()) {
                acc += g * vv;
            }
            *dp = acc;
            jac_dot += acc * prow[off];
        }

        let qrow = cache.q.row(i);
        for off in 0..width {
            let dsij = prow[off] * (dprow[off] - jac_dot) * scale;
            let krow = cache.k.row(s + off);
            let dqrow = dq.row_mut(i);
            for (dqv, &kv) in dqrow.iter_mut().zip(krow.iter()) {
                *dqv += dsij * kv;
            }
            let dkrow = dk.row_mut(s + off);
            for (dkv, &qv) in dkrow.iter_mut().zip(qrow.iter()) {
                *dkv += dsij * qv;
            }
            let dvrow = dv.row_mut(s + off);
            for (dvv, &g) in dvrow.iter_mut().zip(grow.iter()) {
                *dvv += prow[off] * g;
            }
        }
    }
    Ok((dq, dk, dv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::mask::{build_band_mask, build_full_mask};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Literal Eq.-style oracle: full logits, -inf at blocked entries,
    /// textbook softmax row by row, then weights times values.
    fn brute_force_attention(
        q: &Tensor<f64>,
        k: &Tensor<f64>,
        v: &Tensor<f64>,
        mask: &AttentionMask,
    ) -> Tensor<f64> {
        let (n_q, d_k) = (q.shape()[0], q.shape()[1]);
        let (n_k, d_v) = (v.shape()[0], v.shape()[1]);
        let scale = 1.0 / (d_k as f64).sqrt();
        let mut out = Tensor::zeros(&[n_q, d_v]);
        for i in 0..n_q {
            let mut logits = vec![f64::NEG_INFINITY; n_k];
            for (j, l) in logits.iter_mut().enumerate() {
                if mask.is_allowed(i, j) {
                    let mut dot = 0.0;
                    for d in 0..d_k {
                        dot += q.at(i, d) * k.at(j, d);
                    }
                    *l = dot * scale;
                }
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits
                .iter()
                .map(|&l| if l.is_finite() { (l - max).exp() } else { 0.0 })
                .collect();
            let sum: f64 = exps.iter().sum();
            for j in 0..n_k {
                for d in 0..d_v {
                    let val = out.at(i, d) + exps[j] / sum * v.at(j, d);
                    out.set(i, d, val);
                }
            }
        }
        out
    }

    #[test]
    fn single_position_full_mask_returns_value() {
        let q = Tensor::from_vec(&[1, 3], vec![0.3f64, -0.2, 0.9]).unwrap();
        let k = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let v = Tensor::from_vec(&[1, 2], vec![5.0, -7.0]).unwrap();
        let mask = build_full_mask(1, 1).unwrap();
        let out = attention_dense(&q, &k, &v, &mask).unwrap();
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn identical_keys_average_unmasked_values() {
        // equal logits -> uniform weights over the admitted range
        let q = Tensor::from_vec(&[1, 2], vec![0.5f64, 0.5]).unwrap();
        let k = Tensor::from_vec(&[3, 2], vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let v = Tensor::from_vec(&[3, 1], vec![3.0, 6.0, 9.0]).unwrap();
        let mask = build_full_mask(1, 3).unwrap();
        let out = attention_dense(&q, &k, &v, &mask).unwrap();
        assert!((out[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn dense_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = rand_tensor(&mut rng, &[8, 4]);
        let k = rand_tensor(&mut rng, &[8, 4]);
        let v = rand_tensor(&mut rng, &[8, 5]);
        let mask = build_band_mask(8, 2).unwrap();
        let got = attention_dense(&q, &k, &v, &mask).unwrap();
        let want = brute_force_attention(&q, &k, &v, &mask);
        for (a, b) in got.data().iter().zip(want.data().iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn band_equals_dense_on_full_rows_and_bands() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for w in [1usize, 3, 8, 64] {
            let q = rand_tensor(&mut rng, &[16, 6]);
            let k = rand_tensor(&mut rng, &[16, 6]);
            let v = rand_tensor(&mut rng, &[16, 3]);
            let mask = build_band_mask(16, w).unwrap();
            let dense = attention_dense(&q, &k, &v, &mask).unwrap();
            let band = attention_band(&q, &k, &v, &mask).unwrap();
            for (a, b) in dense.data().iter().zip(band.data().iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn probabilities_sum_to_one_and_masked_are_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = rand_tensor(&mut rng, &[6, 4]);
        let k = rand_tensor(&mut rng, &[6, 4]);
        let v = rand_tensor(&mut rng, &[6, 4]);
        let mask = build_band_mask(6, 2).unwrap();
        let (_, cache) = attention_dense_fwd(&q, &k, &v, &mask).unwrap();
        for i in 0..6 {
            let row = cache.probs.row(i);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for (j, &p) in row.iter().enumerate() {
                if !mask.is_allowed(i, j) {
                    assert_eq!(p, 0.0, "masked weight must be exactly zero");
                }
            }
        }
    }

    #[test]
    fn mac_counter_reflects_band_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 32;
        let d = 4;
        let q = rand_tensor(&mut rng, &[n, d]);
        let k = rand_tensor(&mut rng, &[n, d]);
        let v = rand_tensor(&mut rng, &[n, d]);

        let full = build_full_mask(n, n).unwrap();
        reset_macs();
        attention_dense(&q, &k, &v, &full).unwrap();
        assert_eq!(macs(), (n * n * 2 * d) as u64);

        let band = build_band_mask(n, 4).unwrap();
        reset_macs();
        attention_band(&q, &k, &v, &band).unwrap();
        assert_eq!(macs(), (band.admitted() * 2 * d) as u64);
        assert!(band.admitted() < n * n);
    }

    #[test]
    fn mac_count_doubles_with_sequence_length_at_fixed_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 8;
        let w = 6;
        let mut counts = Vec::new();
        for n in [64usize, 128] {
            let q = rand_tensor(&mut rng, &[n, d]);
            let k = rand_tensor(&mut rng, &[n, d]);
            let v = rand_tensor(&mut rng, &[n, d]);
            let mask = build_band_mask(n, w).unwrap();
            reset_macs();
            attention_band(&q, &k, &v, &mask).unwrap();
            counts.push(macs() as f64);
        }
        let ratio = counts[1] / counts[0];
        assert!((1.8..=2.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn backward_constant_loss_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = rand_tensor(&mut rng, &[4, 3]);
        let k = rand_tensor(&mut rng, &[4, 3]);
        let v = rand_tensor(&mut rng, &[4, 2]);
        let mask = build_band_mask(4, 2).unwrap();
        let (_, cache) = attention_dense_fwd(&q, &k, &v, &mask).unwrap();
        let zero_grad = Tensor::zeros(&[4, 2]);
        let (dq, dk, dv) = attention_dense_backward(&cache, &zero_grad).unwrap();
        assert!(dq.data().iter().all(|&x| x == 0.0));
        assert!(dk.data().iter().all(|&x| x == 0.0));
        assert!(dv.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn backward_scalar_case_matches_closed_form() {
        // n_q = n_k = 1: softmax weight is 1 regardless of the logit, so
        // out = v, d out/d v = 1, and q/k receive zero gradient.
        let q = Tensor::from_vec(&[1, 2], vec![0.7f64, -0.3]).unwrap();
        let k = Tensor::from_vec(&[1, 2], vec![0.1, 0.2]).unwrap();
        let v = Tensor::from_vec(&[1, 1], vec![2.5]).unwrap();
        let mask = build_full_mask(1, 1).unwrap();
        let (_, cache) = attention_dense_fwd(&q, &k, &v, &mask).unwrap();
        let grad = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        let (dq, dk, dv) = attention_dense_backward(&cache, &grad).unwrap();
        assert!(dq.data().iter().all(|&x| x.abs() < 1e-15));
        assert!(dk.data().iter().all(|&x| x.abs() < 1e-15));
        assert!((dv[0] - 1.0).abs() < 1e-15);
    }

    /// Central finite differences on a scalar loss sum(attention * weights).
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 5;
        let d = 3;
        let q0 = rand_tensor(&mut rng, &[n, d]);
        let k0 = rand_tensor(&mut rng, &[n, d]);
        let v0 = rand_tensor(&mut rng, &[n, d]);
        let mask = build_band_mask(n, 2).unwrap();
        let loss_w = rand_tensor(&mut rng, &[n, d]);

        let loss = |q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>| -> f64 {
            let out = attention_band(q, k, v, &mask).unwrap();
            out.data()
                .iter()
                .zip(loss_w.data().iter())
                .map(|(a, b)| a * b)
                .sum()
        };

        let (_, cache) = attention_band_fwd(&q0, &k0, &v0, &mask).unwrap();
        let (dq, dk, dv) = attention_band_backward(&cache, &loss_w).unwrap();

        let eps = 1e-5;
        let mut check = |which: usize, idx: usize, analytic: f64| {
            let (mut qp, mut kp, mut vp) = (q0.clone(), k0.clone(), v0.clone());
            let (mut qm, mut km, mut vm) = (q0.clone(), k0.clone(), v0.clone());
            match which {
                0 => {
                    qp[idx] += eps;
                    qm[idx] -= eps;
                }
                1 => {
                    kp[idx] += eps;
                    km[idx] -= eps;
                }
                _ => {
                    vp[idx] += eps;
                    vm[idx] -= eps;
                }
            }
            let fd = (loss(&qp, &kp, &vp) - loss(&qm, &km, &vm)) / (2.0 * eps);
            let denom = analytic.abs().max(fd.abs()).max(1e-8);
            assert!(
                (analytic - fd).abs() / denom < 1e-6,
                "which={which} idx={idx}: analytic {analytic} vs fd {fd}"
            );
        };

        for idx in 0..n * d {
            check(0, idx, dq[idx]);
            check(1, idx, dk[idx]);
            check(2, idx, dv[idx]);
        }
    }
}
