//! Grouped 2-D convolution (correlation orientation) via im2col + GEMM.

use super::{matmul, NnError, Real, Tensor};

/// Weights are `(c_out, c_in / groups, k, k)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Real> ConvParams<T> {
    /// Zero-initialized parameters after validating the geometry.
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        bias: bool,
    ) -> Result<Self, NnError> {
        let p = Self {
            c_in,
            c_out,
            k,
            stride,
            pad,
            groups,
            weight: vec![T::zero(); c_out * (c_in / groups.max(1)) * k * k],
            bias: bias.then(|| vec![T::zero(); c_out]),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.groups == 0 || self.c_in % self.groups != 0 || self.c_out % self.groups != 0 {
            return Err(NnError::Groups(format!(
                "groups={} must divide c_in={} and c_out={}",
                self.groups, self.c_in, self.c_out
            )));
        }
        if self.k % 2 == 0 || self.stride == 0 || self.c_in == 0 || self.c_out == 0 {
            return Err(NnError::Shape(format!(
                "kernel {} stride {} channels {}->{}",
                self.k, self.stride, self.c_in, self.c_out
            )));
        }
        if self.weight.len() != self.c_out * self.cin_per_group() * self.k * self.k {
            return Err(NnError::Shape("weight length".into()));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.c_out {
                return Err(NnError::Shape("bias length".into()));
            }
        }
        Ok(())
    }

    pub fn cin_per_group(&self) -> usize {
        self.c_in / self.groups
    }

    pub fn cout_per_group(&self) -> usize {
        self.c_out / self.groups
    }

    /// Length of one im2col column: `c_in/groups * k * k`.
    fn patch_len(&self) -> usize {
        self.cin_per_group() * self.k * self.k
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize), NnError> {
        let (hp, wp) = (h + 2 * self.pad, w + 2 * self.pad);
        if hp < self.k || wp < self.k {
            return Err(NnError::Shape(format!(
                "input {h}x{w} with pad {} smaller than kernel {}",
                self.pad, self.k
            )));
        }
        Ok(((hp - self.k) / self.stride + 1, (wp - self.k) / self.stride + 1))
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize), NnError> {
        self.validate()?;
        if x.c() != self.c_in {
            return Err(NnError::Shape(format!(
                "conv expects {} input channels, got {}",
                self.c_in,
                x.c()
            )));
        }
        self.output_hw(x.h(), x.w())
    }
}

/// Unfolds channels `[c0, c0 + cin_per_group)` of one item into a
/// `(patch_len x Ho*Wo)` matrix.
fn im2col<T: Real>(
    item: &[T],
    h: usize,
    w: usize,
    c0: usize,
    p: &ConvParams<T>,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let (k, s, pad) = (p.k, p.stride, p.pad as isize);
    let npos = ho * wo;
    for ci in 0..p.cin_per_group() {
        let src = &item[(c0 + ci) * h * w..(c0 + ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * npos..][..npos];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - pad;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - pad;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adds a `(patch_len x Ho*Wo)` column gradient back into channels
/// `[c0, c0 + cin_per_group)` of one item.
fn col2im<T: Real>(
    cols: &[T],
    h: usize,
    w: usize,
    c0: usize,
    p: &ConvParams<T>,
    ho: usize,
    wo: usize,
    item: &mut [T],
) {
    let (k, s, pad) = (p.k, p.stride, p.pad as isize);
    let npos = ho * wo;
    for ci in 0..p.cin_per_group() {
        let dst = &mut item[(c0 + ci) * h * w..(c0 + ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * npos..][..npos];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &g) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * s + kx) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            drow[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

/// Grouped convolution. Group `g` reads input channels
/// `[g*c_in/G, (g+1)*c_in/G)` and writes output channels
/// `[g*c_out/G, (g+1)*c_out/G)`.
pub fn conv2d<T: Real>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>, NnError> {
    let (ho, wo) = p.check_input(x)?;
    let (h, w) = (x.h(), x.w());
    let npos = ho * wo;
    let (cig, cog, plen) = (p.cin_per_group(), p.cout_per_group(), p.patch_len());
    let mut out = Tensor::zeros([x.n(), p.c_out, ho, wo]);
    let mut cols = if p.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); plen * npos]
    };
    for n in 0..x.n() {
        let item = x.item(n);
        let oitem = out.item_mut(n);
        for g in 0..p.groups {
            let wg = &p.weight[g * cog * plen..(g + 1) * cog * plen];
            let og = &mut oitem[g * cog * npos..(g + 1) * cog * npos];
            let b: &[T] = if p.is_pointwise() {
                &item[g * cig * npos..(g + 1) * cig * npos]
            } else {
                im2col(item, h, w, g * cig, p, ho, wo, &mut cols);
                &cols
            };
            matmul(cog, plen, npos, wg, false, b, false, og, false);
        }
        if let Some(bias) = &p.bias {
            for (c, plane) in oitem.chunks_exact_mut(npos).enumerate() {
                for v in plane {
                    *v += bias[c];
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub grad_x: Option<Tensor<T>>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Option<Vec<T>>,
}

/// Gradients of [`conv2d`] with respect to input, weights and bias.
pub fn conv2d_grad<T: Real>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>, NnError> {
    conv_backward(x, p, grad_out, true)
}

/// As [`conv2d_grad`] but skips the input gradient (for layers fed by
/// fixed preprocessing).
pub fn conv2d_grad_params<T: Real>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>, NnError> {
    conv_backward(x, p, grad_out, false)
}

fn conv_backward<T: Real>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> Result<ConvGrads<T>, NnError> {
    let (ho, wo) = p.check_input(x)?;
    if grad_out.shape() != [x.n(), p.c_out, ho, wo] {
        return Err(NnError::Shape(format!(
            "conv grad_out {:?}, expected {:?}",
            grad_out.shape(),
            [x.n(), p.c_out, ho, wo]
        )));
    }
    let (h, w) = (x.h(), x.w());
    let npos = ho * wo;
    let (cig, cog, plen) = (p.cin_per_group(), p.cout_per_group(), p.patch_len());
    let mut grad_weight = vec![T::zero(); p.weight.len()];
    let mut grad_x = want_input.then(|| Tensor::zeros(x.shape()));
    let pointwise = p.is_pointwise();
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); plen * npos]
    };
    let mut gcols = vec![T::zero(); plen * npos];

    for n in 0..x.n() {
        let item = x.item(n);
        let gitem = grad_out.item(n);
        for g in 0..p.groups {
            let wg = &p.weight[g * cog * plen..(g + 1) * cog * plen];
            let gog = &gitem[g * cog * npos..(g + 1) * cog * npos];
            let colsref: &[T] = if pointwise {
                &item[g * cig * npos..(g + 1) * cig * npos]
            } else {
                im2col(item, h, w, g * cig, p, ho, wo, &mut cols);
                &cols
            };
            // dW_g += dY_g (cog x npos) * cols^T (npos x plen)
            let gw = &mut grad_weight[g * cog * plen..(g + 1) * cog * plen];
            matmul(cog, npos, plen, gog, false, colsref, true, gw, true);

            if let Some(gx) = grad_x.as_mut() {
                // dcols = W_g^T (plen x cog) * dY_g (cog x npos)
                let gxi = gx.item_mut(n);
                if pointwise {
                    let dst = &mut gxi[g * cig * npos..(g + 1) * cig * npos];
                    matmul(plen, cog, npos, wg, true, gog, false, dst, true);
                } else {
                    matmul(plen, cog, npos, wg, true, gog, false, &mut gcols, false);
                    col2im(&gcols, h, w, g * cig, p, ho, wo, gxi);
                }
            }
        }
    }

    let grad_bias = p.bias.as_ref().map(|_| {
        let mut gb = vec![T::zero(); p.c_out];
        for n in 0..x.n() {
            for (c, g) in gb.iter_mut().enumerate() {
                for &v in grad_out.plane(n, c) {
                    *g += v;
                }
            }
        }
        gb
    });
    Ok(ConvGrads {
        grad_x,
        grad_weight,
        grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_identity() {
        let mut p = ConvParams::<f64>::new(1, 1, 1, 1, 0, 1, false).unwrap();
        p.weight[0] = 1.0;
        let x = Tensor::from_vec([1, 1, 3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(conv2d(&x, &p).unwrap(), x);
    }

    #[test]
    fn ones_sum_to_nine() {
        let mut p = ConvParams::<f32>::new(1, 1, 3, 1, 0, 1, false).unwrap();
        p.weight.fill(1.0);
        let x = Tensor::from_vec([1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn output_geometry() {
        let p = ConvParams::<f32>::new(4, 8, 3, 2, 1, 2, false).unwrap();
        assert_eq!(p.output_hw(64, 64).unwrap(), (32, 32));
        assert_eq!(p.output_hw(7, 5).unwrap(), (4, 3));
        let q = ConvParams::<f32>::new(4, 8, 1, 2, 0, 1, false).unwrap();
        assert_eq!(q.output_hw(64, 64).unwrap(), (32, 32));
    }

    #[test]
    fn invalid_groups_rejected() {
        assert!(matches!(
            ConvParams::<f32>::new(6, 8, 3, 1, 1, 4, false),
            Err(NnError::Groups(_))
        ));
        assert!(ConvParams::<f32>::new(4, 4, 2, 1, 1, 1, false).is_err());
    }

    #[test]
    fn channel_mismatch_rejected() {
        let p = ConvParams::<f32>::new(2, 2, 3, 1, 1, 1, false).unwrap();
        let x = Tensor::zeros([1, 3, 5, 5]);
        assert!(matches!(conv2d(&x, &p), Err(NnError::Shape(_))));
    }

    #[test]
    fn scalar_weight_gradient_is_product() {
        let mut p = ConvParams::<f64>::new(1, 1, 1, 1, 0, 1, true).unwrap();
        p.weight[0] = 0.7;
        let x = Tensor::from_vec([1, 1, 1, 1], vec![3.0]).unwrap();
        let go = Tensor::from_vec([1, 1, 1, 1], vec![-2.0]).unwrap();
        let g = conv2d_grad(&x, &p, &go).unwrap();
        assert_eq!(g.grad_weight, vec![-6.0]);
        assert_eq!(g.grad_bias, Some(vec![-2.0]));
        assert_eq!(g.grad_x.unwrap().data(), &[-1.4]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut p = ConvParams::<f64>::new(2, 4, 3, 1, 1, 2, true).unwrap();
        p.weight.iter_mut().enumerate().for_each(|(i, w)| *w = i as f64 * 0.1);
        let x = Tensor::from_vec([2, 2, 4, 4], (0..64).map(|i| i as f64).collect()).unwrap();
        let go = Tensor::zeros([2, 4, 4, 4]);
        let g = conv2d_grad(&x, &p, &go).unwrap();
        assert!(g.grad_weight.iter().all(|&v| v == 0.0));
        assert!(g.grad_x.unwrap().data().iter().all(|&v| v == 0.0));
    }
}
