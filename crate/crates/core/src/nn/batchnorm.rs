use super::{NnError, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel affine parameters and running statistics. Running stats
/// update as `r = momentum * r + (1 - momentum) * batch`; the running
/// variance uses the unbiased batch variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub epsilon: T,
}

impl<T: Real> BnParams<T> {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::of(Self::DEFAULT_MOMENTUM),
            epsilon: T::of(Self::DEFAULT_EPSILON),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// What the backward pass needs: normalized input and `1/sqrt(var+eps)`.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub mode: BnMode,
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Normalizes over (N, H, W) per channel. In `Train` mode batch statistics
/// are used and the running statistics are updated.
pub fn batch_norm<T: Real>(
    x: &Tensor<T>,
    p: &mut BnParams<T>,
    mode: BnMode,
) -> Result<(Tensor<T>, BnCache<T>), NnError> {
    let ch = x.c();
    if p.channels() != ch {
        return Err(NnError::Shape(format!(
            "batch norm has {} channels, input has {ch}",
            p.channels()
        )));
    }
    let count = x.n() * x.plane_len();
    let mut mean = vec![T::zero(); ch];
    let mut var = vec![T::zero(); ch];
    match mode {
        BnMode::Train => {
            if count < 2 {
                return Err(NnError::BatchTooSmall(count));
            }
            let cnt = T::from_usize(count).unwrap();
            for c in 0..ch {
                let mut s = T::zero();
                for n in 0..x.n() {
                    for &v in x.plane(n, c) {
                        s += v;
                    }
                }
                let m = s / cnt;
                let mut ss = T::zero();
                for n in 0..x.n() {
                    for &v in x.plane(n, c) {
                        ss += (v - m) * (v - m);
                    }
                }
                mean[c] = m;
                var[c] = ss / cnt;
                let unbiased = ss / (cnt - T::one());
                p.running_mean[c] = p.momentum * p.running_mean[c] + (T::one() - p.momentum) * m;
                p.running_var[c] =
                    p.momentum * p.running_var[c] + (T::one() - p.momentum) * unbiased;
            }
        }
        BnMode::Eval => return batch_norm_eval(x, p),
    }
    normalize(x, p, &mean, &var, mode)
}

/// Inference-mode normalization with the running statistics; does not
/// touch the parameters.
pub fn batch_norm_eval<T: Real>(
    x: &Tensor<T>,
    p: &BnParams<T>,
) -> Result<(Tensor<T>, BnCache<T>), NnError> {
    if p.channels() != x.c() {
        return Err(NnError::Shape(format!(
            "batch norm has {} channels, input has {}",
            p.channels(),
            x.c()
        )));
    }
    normalize(x, p, &p.running_mean, &p.running_var, BnMode::Eval)
}

fn normalize<T: Real>(
    x: &Tensor<T>,
    p: &BnParams<T>,
    mean: &[T],
    var: &[T],
    mode: BnMode,
) -> Result<(Tensor<T>, BnCache<T>), NnError> {
    let ch = x.c();
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + p.epsilon).sqrt()).collect();
    let mut x_hat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    let plen = x.plane_len();
    for (i, ((xv, xh), yv)) in x
        .data()
        .chunks_exact(plen)
        .zip(x_hat.data_mut().chunks_exact_mut(plen))
        .zip(y.data_mut().chunks_exact_mut(plen))
        .enumerate()
    {
        let c = i % ch;
        for ((&a, h), o) in xv.iter().zip(xh.iter_mut()).zip(yv.iter_mut()) {
            *h = (a - mean[c]) * inv_std[c];
            *o = p.gamma[c] * *h + p.beta[c];
        }
    }
    Ok((
        y,
        BnCache {
            mode,
            x_hat,
            inv_std,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
}

pub fn batch_norm_grad<T: Real>(
    cache: &BnCache<T>,
    gamma: &[T],
    grad_out: &Tensor<T>,
) -> Result<BnGrads<T>, NnError> {
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(NnError::Shape("batch norm grad_out shape".into()));
    }
    let ch = grad_out.c();
    let plen = grad_out.plane_len();
    let count = T::from_usize(grad_out.n() * plen).unwrap();
    let mut grad_gamma = vec![T::zero(); ch];
    let mut grad_beta = vec![T::zero(); ch];
    for n in 0..grad_out.n() {
        for c in 0..ch {
            for (&g, &h) in grad_out.plane(n, c).iter().zip(cache.x_hat.plane(n, c)) {
                grad_beta[c] += g;
                grad_gamma[c] += g * h;
            }
        }
    }
    let mut grad_x = Tensor::zeros(grad_out.shape());
    for (i, (gx, (go, xh))) in grad_x
        .data_mut()
        .chunks_exact_mut(plen)
        .zip(grad_out.data().chunks_exact(plen).zip(cache.x_hat.data().chunks_exact(plen)))
        .enumerate()
    {
        let c = i % ch;
        let k = gamma[c] * cache.inv_std[c];
        match cache.mode {
            BnMode::Train => {
                for ((d, &g), &h) in gx.iter_mut().zip(go).zip(xh) {
                    *d = k * (g - grad_beta[c] / count - h * grad_gamma[c] / count);
                }
            }
            BnMode::Eval => {
                for (d, &g) in gx.iter_mut().zip(go) {
                    *d = k * g;
                }
            }
        }
    }
    Ok(BnGrads {
        grad_x,
        grad_gamma,
        grad_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_output_is_standardized() {
        let data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|i| ((i * 37) % 23) as f64 * 0.7 - 3.0).collect();
        let x = Tensor::from_vec([2, 3, 4, 4], data).unwrap();
        let mut p = BnParams::new(3);
        let (y, _) = batch_norm(&x, &mut p, BnMode::Train).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..2).flat_map(|n| y.plane(n, c).to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-4);
        }
        // running stats moved toward the batch
        assert!(p.running_mean.iter().any(|&m| m != 0.0));
    }

    #[test]
    fn eval_with_identity_stats_is_near_identity() {
        let x = Tensor::from_vec([1, 2, 1, 3], vec![1.0f64, -2.0, 3.0, 0.5, 0.0, -7.0]).unwrap();
        let mut p = BnParams::new(2);
        let (y, _) = batch_norm(&x, &mut p, BnMode::Eval).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= a.abs() * 1e-5 + 1e-12);
        }
    }

    #[test]
    fn single_value_per_channel_rejected() {
        let x = Tensor::from_vec([1, 2, 1, 1], vec![1.0f32, 2.0]).unwrap();
        let mut p = BnParams::new(2);
        assert_eq!(
            batch_norm(&x, &mut p, BnMode::Train).unwrap_err(),
            NnError::BatchTooSmall(1)
        );
    }
}
