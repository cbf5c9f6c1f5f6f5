//! Forward/backward pairs for the layer types used by the networks.
//!
//! Shapes are validated by the callers in `resnet`; these functions only
//! `debug_assert!` them.

use super::Matrix;

/// `x · w + b` with `x: batch×in`, `w: in×out`, `b: out`.
pub fn affine(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    debug_assert_eq!(w.cols(), b.len());
    let mut out = x.matmul_unchecked(w);
    let cols = out.cols();
    for chunk in out.data_mut().chunks_exact_mut(cols.max(1)) {
        for (o, bias) in chunk.iter_mut().zip(b) {
            *o += bias;
        }
    }
    out
}

/// Gradients of [`affine`]: returns `(dx, dw, db)`.
pub fn affine_backward(x: &Matrix, w: &Matrix, dy: &Matrix) -> (Matrix, Matrix, Vec<f64>) {
    let dx = dy.matmul_t(w);
    let dw = x.t_matmul(dy);
    let db = dy.col_sums();
    (dx, dw, db)
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Subgradient at 0 is 0.
pub fn relu_backward(pre: &Matrix, dy: &Matrix) -> Matrix {
    pre.zip_map(dy, |p, g| if p > 0.0 { g } else { 0.0 })
}

/// Row-wise softmax, max-shifted for stability.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    let cols = out.cols();
    for row in out.data_mut().chunks_exact_mut(cols.max(1)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the
/// logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    debug_assert_eq!(logits.rows(), labels.len());
    let n = logits.rows() as f64;
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        let g = grad.row_mut(i);
        g[y] -= 1.0;
        for v in g.iter_mut() {
            *v /= n;
        }
    }
    (loss / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Matrix::zeros(3, 4);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 1, 3]);
        assert!((loss - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one_even_for_large_logits() {
        let logits = Matrix::new(2, 3, vec![1000.0, 999.0, -1000.0, 0.0, 0.0, 0.0]).unwrap();
        let p = softmax_rows(&logits);
        for row in p.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_kink_has_zero_subgradient() {
        let pre = Matrix::new(1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        let dy = Matrix::filled(1, 3, 5.0);
        assert_eq!(relu_backward(&pre, &dy).data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn affine_backward_linear_case() {
        // L = w·x with x = 3.
        let x = Matrix::new(1, 1, vec![3.0]).unwrap();
        let w = Matrix::new(1, 1, vec![0.7]).unwrap();
        let dy = Matrix::new(1, 1, vec![1.0]).unwrap();
        let (dx, dw, db) = affine_backward(&x, &w, &dy);
        assert_eq!(dw.data(), &[3.0]);
        assert_eq!(dx.data(), &[0.7]);
        assert_eq!(db, vec![1.0]);
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        // L = relu(w·x) with w·x < 0.
        let x = Matrix::new(1, 1, vec![3.0]).unwrap();
        let w = Matrix::new(1, 1, vec![-0.5]).unwrap();
        let pre = affine(&x, &w, &[0.0]);
        let d_pre = relu_backward(&pre, &Matrix::filled(1, 1, 1.0));
        let (_, dw, _) = affine_backward(&x, &w, &d_pre);
        assert_eq!(dw.data(), &[0.0]);
    }
}
