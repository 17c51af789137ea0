use crate::error::{Error, Result};
use crate::linalg::{Matrix, Scalar};

/// Mean squared error over a [B x C] prediction batch.
///
/// Returns the scalar mean loss and the per-row losses (mean over the C
/// channels of the squared error). The per-row vector feeds the hard
/// example pool.
pub fn mse_loss<S: Scalar>(pred: &Matrix<S>, target: &Matrix<S>) -> Result<(S, Vec<S>)> {
    if pred.rows != target.rows || pred.cols != target.cols {
        return Err(Error::Config(format!(
            "mse shapes differ: {}x{} vs {}x{}",
            pred.rows, pred.cols, target.rows, target.cols
        )));
    }
    let c = S::from_f64(pred.cols as f64);
    let mut per_row = Vec::with_capacity(pred.rows);
    for r in 0..pred.rows {
        let mut acc = S::zero();
        for (p, t) in pred.row(r).iter().zip(target.row(r)) {
            let d = *p - *t;
            acc = acc + d * d;
        }
        per_row.push(acc / c);
    }
    let total: S = per_row.iter().copied().sum();
    let scalar = total / S::from_f64(pred.rows as f64);
    Ok((scalar, per_row))
}

/// dL/dpred for the scalar mean loss above: 2 (pred - target) / (B * C).
pub fn mse_grad<S: Scalar>(pred: &Matrix<S>, target: &Matrix<S>) -> Matrix<S> {
    let scale = S::from_f64(2.0 / (pred.rows * pred.cols) as f64);
    let mut g = pred.clone();
    for (gi, t) in g.data.iter_mut().zip(target.data.iter()) {
        *gi = (*gi - *t) * scale;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_when_equal() {
        let a = Matrix::from_vec(2, 3, vec![0.1f64; 6]);
        let (s, per) = mse_loss(&a, &a).unwrap();
        assert_eq!(s, 0.0);
        assert!(per.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn uniform_offset() {
        let a = Matrix::from_vec(2, 3, vec![0.1f64; 6]);
        let b = Matrix::from_vec(2, 3, vec![0.2f64; 6]);
        let (s, _) = mse_loss(&a, &b).unwrap();
        assert!((s - 0.01).abs() < 1e-15);
    }

    #[test]
    fn scalar_is_mean_of_per_row() {
        // rows with per-row losses 0.04 and 0.00
        let a = Matrix::from_vec(2, 3, vec![0.2f64, 0.2, 0.2, 0.5, 0.5, 0.5]);
        let b = Matrix::from_vec(2, 3, vec![0.0f64, 0.0, 0.0, 0.5, 0.5, 0.5]);
        let (s, per) = mse_loss(&a, &b).unwrap();
        assert!((per[0] - 0.04).abs() < 1e-15);
        assert_eq!(per[1], 0.0);
        assert!((s - 0.02).abs() < 1e-15);
        let mean: f64 = per.iter().sum::<f64>() / per.len() as f64;
        assert_eq!(s, mean);
    }
}
