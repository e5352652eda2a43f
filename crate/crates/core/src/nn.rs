//! Small neural-net building blocks: linear projection, layer norm,
//! position-wise feed-forward (ReLU), token embedding, dropout, sinusoidal
//! positional encoding, and softmax cross-entropy.
//!
//! Every block exposes a `forward` that returns whatever state its
//! `backward` needs. Gradients reuse the parameter struct of the block
//! they belong to.

use crate::error::{contract_err, input_err, Result};
use crate::tensor::{matmul, matmul_at, matmul_bt, Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Affine projection `y = x W + b`, weights `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<S> {
    pub w: Tensor<S>,
    pub b: Tensor<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w: Tensor::zeros(&[in_dim, out_dim]),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.cols() != self.in_dim() {
            return input_err(format!(
                "linear expects {} input features, got {}",
                self.in_dim(),
                x.cols()
            ));
        }
        let mut y = matmul(x, &self.w)?;
        let out = self.out_dim();
        for i in 0..y.rows() {
            let row = y.row_mut(i);
            for (v, &b) in row.iter_mut().zip(self.b.data().iter()) {
                *v += b;
            }
        }
        debug_assert_eq!(y.cols(), out);
        Ok(y)
    }

    pub fn accumulate(&mut self, g: &Linear<S>) -> Result<()> {
        self.w.add_assign(&g.w)?;
        self.b.add_assign(&g.b)
    }

    /// Returns (grad wrt x, grads for w and b).
    pub fn backward(&self, x: &Tensor<S>, grad_y: &Tensor<S>) -> Result<(Tensor<S>, Linear<S>)> {
        let grad_x = matmul_bt(grad_y, &self.w)?;
        let dw = matmul_at(x, grad_y)?;
        let mut db = Tensor::zeros(&[self.out_dim()]);
        for i in 0..grad_y.rows() {
            for (d, &g) in db.data_mut().iter_mut().zip(grad_y.row(i).iter()) {
                *d += g;
            }
        }
        Ok((grad_x, Linear { w: dw, b: db }))
    }
}

/// Layer normalization over the trailing dimension with learned gain/bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<S> {
    pub gain: Tensor<S>,
    pub bias: Tensor<S>,
}

/// LN epsilon; fixed across the crate.
pub const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LayerNormCache<S> {
    xhat: Tensor<S>,
    inv_std: Vec<S>,
}

impl<S: Scalar> LayerNorm<S> {
    pub fn new(dim: usize) -> Self {
        let mut gain = Tensor::zeros(&[dim]);
        gain.fill(S::one());
        LayerNorm {
            gain,
            bias: Tensor::zeros(&[dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.len()
    }

    pub fn accumulate(&mut self, g: &LayerNorm<S>) -> Result<()> {
        self.gain.add_assign(&g.gain)?;
        self.bias.add_assign(&g.bias)
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, LayerNormCache<S>)> {
        let d = self.dim();
        if x.cols() != d {
            return input_err(format!("layer norm dim {} vs input {}", d, x.cols()));
        }
        let n = x.rows();
        let eps = S::from_f64(LN_EPS);
        let inv_d = S::one() / S::from_f64(d as f64);
        let mut xhat = Tensor::zeros(&[n, d]);
        let mut y = Tensor::zeros(&[n, d]);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = x.row(i);
            let mut mean = S::zero();
            for &v in row {
                mean += v;
            }
            mean *= inv_d;
            let mut var = S::zero();
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var *= inv_d;
            let istd = S::one() / (var + eps).sqrt();
            inv_std.push(istd);
            let xh = xhat.row_mut(i);
            let yr = y.row_mut(i);
            for j in 0..d {
                let h = (row[j] - mean) * istd;
                xh[j] = h;
                yr[j] = h * self.gain[j] + self.bias[j];
            }
        }
        Ok((y, LayerNormCache { xhat, inv_std }))
    }

    pub fn backward(
        &self,
        cache: &LayerNormCache<S>,
        grad_y: &Tensor<S>,
    ) -> Result<(Tensor<S>, LayerNorm<S>)> {
        let d = self.dim();
        let n = grad_y.rows();
        if grad_y.cols() != d || cache.xhat.rows() != n {
            return contract_err("layer norm backward shape mismatch");
        }
        let inv_d = S::one() / S::from_f64(d as f64);
        let mut grad_x = Tensor::zeros(&[n, d]);
        let mut dgain = Tensor::zeros(&[d]);
        let mut dbias = Tensor::zeros(&[d]);
        for i in 0..n {
            let gy = grad_y.row(i);
            let xh = cache.xhat.row(i);
            let istd = cache.inv_std[i];
            let mut mean_g = S::zero();
            let mut mean_gx = S::zero();
            for j in 0..d {
                let gh = gy[j] * self.gain[j];
                mean_g += gh;
                mean_gx += gh * xh[j];
                dgain[j] += gy[j] * xh[j];
                dbias[j] += gy[j];
            }
            mean_g *= inv_d;
            mean_gx *= inv_d;
            let gx = grad_x.row_mut(i);
            for j in 0..d {
                let gh = gy[j] * self.gain[j];
                gx[j] = istd * (gh - mean_g - xh[j] * mean_gx);
            }
        }
        Ok((
            grad_x,
            LayerNorm {
                gain: dgain,
                bias: dbias,
            },
        ))
    }
}

/// Position-wise feed-forward network: `w2(relu(w1 x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward<S> {
    pub w1: Linear<S>,
    pub w2: Linear<S>,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache<S> {
    x: Tensor<S>,
    hidden: Tensor<S>, // post-ReLU
}

impl<S: Scalar> FeedForward<S> {
    pub fn zeros(d_model: usize, d_ff: usize) -> Self {
        FeedForward {
            w1: Linear::zeros(d_model, d_ff),
            w2: Linear::zeros(d_ff, d_model),
        }
    }

    pub fn accumulate(&mut self, g: &FeedForward<S>) -> Result<()> {
        self.w1.accumulate(&g.w1)?;
        self.w2.accumulate(&g.w2)
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, FeedForwardCache<S>)> {
        let mut hidden = self.w1.forward(x)?;
        for v in hidden.data_mut() {
            if *v < S::zero() {
                *v = S::zero();
            }
        }
        let y = self.w2.forward(&hidden)?;
        Ok((
            y,
            FeedForwardCache {
                x: x.clone(),
                hidden,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &FeedForwardCache<S>,
        grad_y: &Tensor<S>,
    ) -> Result<(Tensor<S>, FeedForward<S>)> {
        let (mut grad_hidden, dw2) = self.w2.backward(&cache.hidden, grad_y)?;
        // ReLU gate: zero where the activation was clipped
        for (g, &h) in grad_hidden.data_mut().iter_mut().zip(cache.hidden.data()) {
            if h == S::zero() {
                *g = S::zero();
            }
        }
        let (grad_x, dw1) = self.w1.backward(&cache.x, &grad_hidden)?;
        Ok((grad_x, FeedForward { w1: dw1, w2: dw2 }))
    }
}

/// Token embedding table `[vocab, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<S> {
    pub table: Tensor<S>,
}

impl<S: Scalar> Embedding<S> {
    pub fn zeros(vocab: usize, d: usize) -> Self {
        Embedding {
            table: Tensor::zeros(&[vocab, d]),
        }
    }

    pub fn vocab(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn accumulate(&mut self, g: &Embedding<S>) -> Result<()> {
        self.table.add_assign(&g.table)
    }

    pub fn forward(&self, ids: &[u32]) -> Result<Tensor<S>> {
        let d = self.dim();
        let mut out = Tensor::zeros(&[ids.len(), d]);
        for (i, &id) in ids.iter().enumerate() {
            if id as usize >= self.vocab() {
                return input_err(format!("token id {id} outside vocab {}", self.vocab()));
            }
            out.row_mut(i).copy_from_slice(self.table.row(id as usize));
        }
        Ok(out)
    }

    /// Scatter-add output gradients back into a table-shaped gradient.
    pub fn backward(&self, ids: &[u32], grad_y: &Tensor<S>) -> Result<Embedding<S>> {
        if grad_y.rows() != ids.len() || grad_y.cols() != self.dim() {
            return contract_err("embedding backward shape mismatch");
        }
        let mut dt = Tensor::zeros(&[self.vocab(), self.dim()]);
        for (i, &id) in ids.iter().enumerate() {
            let dst = dt.row_mut(id as usize);
            for (d, &g) in dst.iter_mut().zip(grad_y.row(i).iter()) {
                *d += g;
            }
        }
        Ok(Embedding { table: dt })
    }
}

/// Inverted dropout applied in place; `None` mask means identity (eval
/// mode or rate zero). The kept mask replays exactly in backward.
#[derive(Debug, Clone)]
pub struct DropoutMask<S> {
    mask: Option<Tensor<S>>,
}

pub fn dropout_forward<S: Scalar>(
    x: &mut Tensor<S>,
    rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<DropoutMask<S>> {
    if !(0.0..1.0).contains(&rate) {
        return input_err(format!("dropout rate {rate} outside [0, 1)"));
    }
    let Some(rng) = rng else {
        return Ok(DropoutMask { mask: None });
    };
    if rate == 0.0 {
        return Ok(DropoutMask { mask: None });
    }
    let keep_scale = S::from_f64(1.0 / (1.0 - rate));
    let mut mask = Tensor::zeros(x.shape());
    for (m, v) in mask.data_mut().iter_mut().zip(x.data_mut().iter_mut()) {
        if rng.gen::<f64>() < rate {
            *m = S::zero();
            *v = S::zero();
        } else {
            *m = keep_scale;
            *v *= keep_scale;
        }
    }
    Ok(DropoutMask { mask: Some(mask) })
}

pub fn dropout_backward<S: Scalar>(grad: &mut Tensor<S>, mask: &DropoutMask<S>) {
    if let Some(m) = &mask.mask {
        for (g, &k) in grad.data_mut().iter_mut().zip(m.data().iter()) {
            *g *= k;
        }
    }
}

/// Fixed sinusoidal positional encoding rows `[offset, offset + n)`.
pub fn sinusoidal_pe<S: Scalar>(n: usize, d: usize, offset: usize) -> Tensor<S> {
    let mut pe = Tensor::zeros(&[n, d]);
    for i in 0..n {
        let pos = (offset + i) as f64;
        let row = pe.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            let pair = (j / 2) as f64;
            let freq = (10000f64).powf(-2.0 * pair / d as f64);
            let angle = pos * freq;
            *v = S::from_f64(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

pub fn add_positional<S: Scalar>(x: &mut Tensor<S>, offset: usize) {
    let pe = sinusoidal_pe::<S>(x.rows(), x.cols(), offset);
    for (v, &p) in x.data_mut().iter_mut().zip(pe.data().iter()) {
        *v += p;
    }
}

/// Softmax cross-entropy summed over positions where `counted` is true.
/// Returns (loss sum, counted positions, d loss / d logits) with zero rows
/// at uncounted positions; the caller applies any averaging scale.
pub fn softmax_cross_entropy<S: Scalar>(
    logits: &Tensor<S>,
    targets: &[u32],
    counted: &[bool],
) -> Result<(S, usize, Tensor<S>)> {
    let n = logits.rows();
    let vocab = logits.cols();
    if targets.len() != n || counted.len() != n {
        return contract_err("cross entropy target length mismatch");
    }
    let mut dlogits = Tensor::zeros(&[n, vocab]);
    let mut loss = S::zero();
    let mut count = 0usize;
    for i in 0..n {
        if !counted[i] {
            continue;
        }
        let t = targets[i] as usize;
        if t >= vocab {
            return contract_err(format!("target id {t} outside vocab {vocab}"));
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        if !max.is_finite() {
            return contract_err(format!("non-finite logit at position {i}"));
        }
        let mut sum = S::zero();
        for &x in row {
            sum += (x - max).exp();
        }
        let log_z = sum.ln() + max;
        loss += log_z - row[t];
        count += 1;
        let drow = dlogits.row_mut(i);
        for (j, dv) in drow.iter_mut().enumerate() {
            let p = (row[j] - log_z).exp();
            *dv = if j == t { p - S::one() } else { p };
        }
    }
    Ok((loss, count, dlogits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn linear_identity_plus_bias() {
        let mut lin = Linear::<f64>::zeros(2, 2);
        lin.w.set(0, 0, 1.0);
        lin.w.set(1, 1, 1.0);
        lin.b[0] = 1.0;
        lin.b[1] = 2.0;
        let x = Tensor::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap();
        let y = lin.forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0]);
    }

    #[test]
    fn linear_backward_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lin = Linear::<f64>::zeros(3, 2);
        lin.w = rand_tensor(&mut rng, &[3, 2]);
        lin.b = rand_tensor(&mut rng, &[2]);
        let x = rand_tensor(&mut rng, &[4, 3]);
        let gy = rand_tensor(&mut rng, &[4, 2]);
        let loss = |l: &Linear<f64>, x: &Tensor<f64>| -> f64 {
            l.forward(x)
                .unwrap()
                .data()
                .iter()
                .zip(gy.data().iter())
                .map(|(a, b)| a * b)
                .sum()
        };
        let (gx, grads) = lin.backward(&x, &gy).unwrap();
        let eps = 1e-6;
        for idx in 0..6 {
            let mut lp = lin.clone();
            let mut lm = lin.clone();
            lp.w[idx] += eps;
            lm.w[idx] -= eps;
            let fd = (loss(&lp, &x) - loss(&lm, &x)) / (2.0 * eps);
            assert!((grads.w[idx] - fd).abs() < 1e-7);
        }
        for idx in 0..12 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[idx] += eps;
            xm[idx] -= eps;
            let fd = (loss(&lin, &xp) - loss(&lin, &xm)) / (2.0 * eps);
            assert!((gx[idx] - fd).abs() < 1e-7);
        }
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let ln = LayerNorm::<f64>::new(4);
        let x = Tensor::from_vec(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = ln.forward(&x).unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / 4.0;
        let var: f64 = y.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_backward_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ln = LayerNorm::<f64>::new(5);
        ln.gain = rand_tensor(&mut rng, &[5]);
        ln.bias = rand_tensor(&mut rng, &[5]);
        let x = rand_tensor(&mut rng, &[3, 5]);
        let gy = rand_tensor(&mut rng, &[3, 5]);
        let loss = |ln: &LayerNorm<f64>, x: &Tensor<f64>| -> f64 {
            ln.forward(x)
                .unwrap()
                .0
                .data()
                .iter()
                .zip(gy.data().iter())
                .map(|(a, b)| a * b)
                .sum()
        };
        let (_, cache) = ln.forward(&x).unwrap();
        let (gx, grads) = ln.backward(&cache, &gy).unwrap();
        let eps = 1e-6;
        for idx in 0..15 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[idx] += eps;
            xm[idx] -= eps;
            let fd = (loss(&ln, &xp) - loss(&ln, &xm)) / (2.0 * eps);
            assert!((gx[idx] - fd).abs() < 1e-6, "gx[{idx}] {} vs {fd}", gx[idx]);
        }
        for idx in 0..5 {
            let mut lp = ln.clone();
            let mut lm = ln.clone();
            lp.gain[idx] += eps;
            lm.gain[idx] -= eps;
            let fd = (loss(&lp, &x) - loss(&lm, &x)) / (2.0 * eps);
            assert!((grads.gain[idx] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn feed_forward_backward_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ffn = FeedForward::<f64>::zeros(3, 6);
        ffn.w1.w = rand_tensor(&mut rng, &[3, 6]);
        ffn.w1.b = rand_tensor(&mut rng, &[6]);
        ffn.w2.w = rand_tensor(&mut rng, &[6, 3]);
        ffn.w2.b = rand_tensor(&mut rng, &[3]);
        let x = rand_tensor(&mut rng, &[4, 3]);
        let gy = rand_tensor(&mut rng, &[4, 3]);
        let loss = |f: &FeedForward<f64>, x: &Tensor<f64>| -> f64 {
            f.forward(x)
                .unwrap()
                .0
                .data()
                .iter()
                .zip(gy.data().iter())
                .map(|(a, b)| a * b)
                .sum()
        };
        let (_, cache) = ffn.forward(&x).unwrap();
        let (gx, grads) = ffn.backward(&cache, &gy).unwrap();
        let eps = 1e-6;
        for idx in 0..12 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[idx] += eps;
            xm[idx] -= eps;
            let fd = (loss(&ffn, &xp) - loss(&ffn, &xm)) / (2.0 * eps);
            assert!((gx[idx] - fd).abs() < 1e-6);
        }
        for idx in 0..18 {
            let mut fp = ffn.clone();
            let mut fm = ffn.clone();
            fp.w1.w[idx] += eps;
            fm.w1.w[idx] -= eps;
            let fd = (loss(&fp, &x) - loss(&fm, &x)) / (2.0 * eps);
            assert!((grads.w1.w[idx] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn embedding_lookup_and_scatter() {
        let mut emb = Embedding::<f64>::zeros(5, 2);
        for i in 0..10 {
            emb.table[i] = i as f64;
        }
        let ids = [3u32, 0, 3];
        let y = emb.forward(&ids).unwrap();
        assert_eq!(y.row(0), &[6.0, 7.0]);
        assert_eq!(y.row(1), &[0.0, 1.0]);
        let gy = Tensor::from_vec(&[3, 2], vec![1.0; 6]).unwrap();
        let grads = emb.backward(&ids, &gy).unwrap();
        // id 3 hit twice
        assert_eq!(grads.table.row(3), &[2.0, 2.0]);
        assert_eq!(grads.table.row(0), &[1.0, 1.0]);
        assert_eq!(grads.table.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn dropout_eval_is_identity_and_train_is_seed_stable() {
        let mut x = Tensor::from_vec(&[2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let orig = x.clone();
        let m = dropout_forward(&mut x, 0.5, None).unwrap();
        assert_eq!(x, orig);
        assert!(m.mask.is_none());

        let mut a = orig.clone();
        let mut b = orig.clone();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        dropout_forward(&mut a, 0.5, Some(&mut r1)).unwrap();
        dropout_forward(&mut b, 0.5, Some(&mut r2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn positional_encoding_first_row_alternates_zero_one() {
        let pe = sinusoidal_pe::<f64>(3, 4, 0);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        // offset view matches the tail of a longer table
        let tail = sinusoidal_pe::<f64>(1, 4, 2);
        assert_eq!(tail.row(0), pe.row(2));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_log_vocab() {
        let logits = Tensor::<f64>::zeros(&[2, 10]);
        let (loss, count, dlogits) =
            softmax_cross_entropy(&logits, &[1, 7], &[true, true]).unwrap();
        assert_eq!(count, 2);
        assert!((loss / 2.0 - (10f64).ln()).abs() < 1e-12);
        // gradient rows sum to zero
        for i in 0..2 {
            let s: f64 = dlogits.row(i).iter().sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_skips_uncounted_positions() {
        let logits = Tensor::<f64>::zeros(&[2, 4]);
        let (loss1, count, dlogits) =
            softmax_cross_entropy(&logits, &[1, 2], &[true, false]).unwrap();
        assert_eq!(count, 1);
        assert!((loss1 - (4f64).ln()).abs() < 1e-12);
        assert!(dlogits.row(1).iter().all(|&x| x == 0.0));
    }
}
