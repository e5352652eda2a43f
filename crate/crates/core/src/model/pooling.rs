//! Average pooling along the time axis of the encoder output, used to
//! feed coarser views to lower decoder layers.

use crate::error::{input_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Non-overlapping mean over consecutive `kernel` frames. The last group
/// may be shorter and averages its actual members. Kernel 1 is identity.
pub fn pool_encoder_output<S: Scalar>(z: &Tensor<S>, kernel: usize) -> Result<Tensor<S>> {
    if kernel == 0 {
        return input_err("pooling kernel must be at least 1");
    }
    if kernel == 1 {
        return Ok(z.clone());
    }
    let t = z.rows();
    let d = z.cols();
    let groups = t.div_ceil(kernel);
    let mut out = Tensor::zeros(&[groups, d]);
    for g in 0..groups {
        let start = g * kernel;
        let end = (start + kernel).min(t);
        let inv = S::one() / S::from_f64((end - start) as f64);
        let orow = out.row_mut(g);
        for i in start..end {
            for (o, &v) in orow.iter_mut().zip(z.row(i).iter()) {
                *o += v;
            }
        }
        for o in orow.iter_mut() {
            *o *= inv;
        }
    }
    Ok(out)
}

/// Backward of [`pool_encoder_output`]: each pooled row's gradient is
/// spread evenly over the frames it averaged.
pub fn pool_backward<S: Scalar>(
    grad_pooled: &Tensor<S>,
    t_orig: usize,
    kernel: usize,
) -> Result<Tensor<S>> {
    if kernel == 0 {
        return input_err("pooling kernel must be at least 1");
    }
    if kernel == 1 {
        return Ok(grad_pooled.clone());
    }
    let d = grad_pooled.cols();
    let groups = t_orig.div_ceil(kernel);
    if grad_pooled.rows() != groups {
        return input_err(format!(
            "pooled gradient has {} rows, expected {}",
            grad_pooled.rows(),
            groups
        ));
    }
    let mut out = Tensor::zeros(&[t_orig, d]);
    for g in 0..groups {
        let start = g * kernel;
        let end = (start + kernel).min(t_orig);
        let inv = S::one() / S::from_f64((end - start) as f64);
        let grow = grad_pooled.row(g);
        for i in start..end {
            for (o, &gv) in out.row_mut(i).iter_mut().zip(grow.iter()) {
                *o = gv * inv;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(&[rows, cols], data).unwrap()
    }

    #[test]
    fn kernel_one_is_identity() {
        let z = t(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(pool_encoder_output(&z, 1).unwrap(), z);
    }

    #[test]
    fn exact_grouping() {
        let z = t(8, 1, (0..8).map(|x| x as f64).collect());
        let p = pool_encoder_output(&z, 4).unwrap();
        assert_eq!(p.shape(), &[2, 1]);
        assert_eq!(p[0], 1.5); // mean of 0..=3
        assert_eq!(p[1], 5.5);
    }

    #[test]
    fn ragged_tail_averages_actual_members() {
        let z = t(7, 1, (0..7).map(|x| x as f64).collect());
        let p = pool_encoder_output(&z, 4).unwrap();
        assert_eq!(p.shape(), &[2, 1]);
        assert_eq!(p[1], 5.0); // mean of 4, 5, 6
    }

    #[test]
    fn mean_preserved_under_exact_grouping() {
        let z = t(12, 3, (0..36).map(|x| (x as f64).sin()).collect());
        let p = pool_encoder_output(&z, 3).unwrap();
        for c in 0..3 {
            let mz: f64 = (0..12).map(|r| z.at(r, c)).sum::<f64>() / 12.0;
            let mp: f64 = (0..4).map(|r| p.at(r, c)).sum::<f64>() / 4.0;
            assert!((mz - mp).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let z = t(7, 2, (0..14).map(|x| x as f64 * 0.3 - 1.0).collect());
        let gp = t(2, 2, vec![0.5, -1.0, 2.0, 0.25]);
        let loss = |z: &Tensor<f64>| -> f64 {
            pool_encoder_output(z, 4)
                .unwrap()
                .data()
                .iter()
                .zip(gp.data().iter())
                .map(|(a, b)| a * b)
                .sum()
        };
        let gz = pool_backward(&gp, 7, 4).unwrap();
        let eps = 1e-6;
        for idx in 0..14 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[idx] += eps;
            zm[idx] -= eps;
            let fd = (loss(&zp) - loss(&zm)) / (2.0 * eps);
            assert!((gz[idx] - fd).abs() < 1e-9);
        }
    }
}
