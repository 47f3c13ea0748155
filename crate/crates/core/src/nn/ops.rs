//! ReLU, global average pooling, fully connected head and the loss.

use super::{NnError, Real, Tensor};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient through ReLU given the forward *input* `x`.
pub fn relu_grad<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if x.shape() != grad_out.shape() {
        return Err(NnError::Shape("relu grad shape".into()));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&a, &g)| if a > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Mean over H*W of every (item, channel) plane; output is `(N, C, 1, 1)`.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let plen = T::from_usize(x.plane_len()).unwrap();
    let data = x
        .data()
        .chunks_exact(x.plane_len())
        .map(|p| p.iter().copied().sum::<T>() / plen)
        .collect();
    Tensor::from_vec([x.n(), x.c(), 1, 1], data).expect("pooled shape")
}

pub fn global_avg_pool_grad<T: Real>(
    input_shape: [usize; 4],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    if grad_out.shape() != [input_shape[0], input_shape[1], 1, 1] {
        return Err(NnError::Shape("gap grad shape".into()));
    }
    let plen = input_shape[2] * input_shape[3];
    let scale = T::one() / T::from_usize(plen).unwrap();
    let mut g = Tensor::zeros(input_shape);
    for (dst, &v) in g.data_mut().chunks_exact_mut(plen).zip(grad_out.data()) {
        dst.fill(v * scale);
    }
    Ok(g)
}

/// `logits = x W + b` with `x: (N, C)`, `W: (C, classes)` row-major.
pub fn fully_connected<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    bias: &[T],
) -> Result<Tensor<T>, NnError> {
    let (n, c) = (x.n(), x.c() * x.plane_len());
    let classes = bias.len();
    if weight.len() != c * classes {
        return Err(NnError::Shape(format!(
            "fc weight has {} values, expected {c}x{classes}",
            weight.len()
        )));
    }
    let mut out = Tensor::zeros([n, classes, 1, 1]);
    super::matmul(n, c, classes, x.data(), false, weight, false, out.data_mut(), false);
    for row in out.data_mut().chunks_exact_mut(classes) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FcGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
}

pub fn fully_connected_grad<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    grad_out: &Tensor<T>,
) -> Result<FcGrads<T>, NnError> {
    let (n, c) = (x.n(), x.c() * x.plane_len());
    let classes = grad_out.c();
    if grad_out.n() != n || weight.len() != c * classes {
        return Err(NnError::Shape("fc grad shapes".into()));
    }
    let mut grad_x = Tensor::zeros(x.shape());
    // dX = dY W^T
    super::matmul(n, classes, c, grad_out.data(), false, weight, true, grad_x.data_mut(), false);
    // dW = X^T dY
    let mut grad_weight = vec![T::zero(); c * classes];
    super::matmul(c, n, classes, x.data(), true, grad_out.data(), false, &mut grad_weight, false);
    let mut grad_bias = vec![T::zero(); classes];
    for row in grad_out.data().chunks_exact(classes) {
        for (g, &v) in grad_bias.iter_mut().zip(row) {
            *g += v;
        }
    }
    Ok(FcGrads {
        grad_x,
        grad_weight,
        grad_bias,
    })
}

/// Row-wise softmax of `(N, classes)` logits, max-shifted.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let k = logits.c() * logits.plane_len();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v = *v / s;
        }
    }
    out
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>), NnError> {
    let (n, k) = (logits.n(), logits.c() * logits.plane_len());
    if labels.len() != n {
        return Err(NnError::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(NnError::BadLabel { row, label });
    }
    let nn = T::from_usize(n).unwrap();
    let mut loss = T::zero();
    let mut grad = softmax(logits);
    for (i, (row, &label)) in logits.data().chunks_exact(k).zip(labels).enumerate() {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        loss += lse - row[label];
        let g = &mut grad.data_mut()[i * k..(i + 1) * k];
        g[label] -= T::one();
        for v in g.iter_mut() {
            *v = *v / nn;
        }
    }
    Ok((loss / nn, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_of_small_plane() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0f64, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(global_avg_pool(&x).data(), &[4.0]);
    }

    #[test]
    fn relu_values() {
        let x = Tensor::from_vec([1, 2, 1, 1], vec![-2.0f32, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
    }

    #[test]
    fn equal_logits_give_ln2() {
        let z = Tensor::from_vec([2, 2, 1, 1], vec![0.3f64, 0.3, -5.0, -5.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&z, &[0, 1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn huge_logits_are_stable() {
        let z = Tensor::from_vec([1, 2, 1, 1], vec![1000.0f32, -1000.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&z, &[0]).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-6);
        assert!(grad.data().iter().all(|v| v.is_finite()));
        let (loss1, _) = softmax_cross_entropy(&z, &[1]).unwrap();
        assert!((loss1 - 2000.0).abs() < 1e-3);
    }

    #[test]
    fn bad_label_rejected() {
        let z = Tensor::<f64>::zeros([2, 2, 1, 1]);
        assert_eq!(
            softmax_cross_entropy(&z, &[1, 2]).unwrap_err(),
            NnError::BadLabel { row: 1, label: 2 }
        );
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let z = Tensor::from_vec([3, 2, 1, 1], vec![1.0f32, 2.0, -40.0, 3.0, 0.0, 0.0]).unwrap();
        for row in softmax(&z).data().chunks(2) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fc_known_values() {
        let x = Tensor::from_vec([1, 2, 1, 1], vec![1.0f64, 2.0]).unwrap();
        let w = [1.0, -1.0, 0.5, 2.0];
        let y = fully_connected(&x, &w, &[0.1, 0.2]).unwrap();
        assert_eq!(y.data(), &[2.1, 3.2]);
    }
}
