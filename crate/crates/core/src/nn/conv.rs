use rand::Rng;
use rayon::prelude::*;

use super::{gemm, Param, Parameterized, Scalar, Tensor};

/// 2-D convolution with per-axis stride and symmetric zero padding,
/// lowered to GEMM through im2col.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    in_channels: usize,
    out_channels: usize,
    kernel: [usize; 2],
    stride: [usize; 2],
    padding: [usize; 2],
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel[0] * kernel[1];
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<T> {
            (0..n)
                .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
                .collect()
        };
        let weight = Param::new(
            &[out_channels, in_channels, kernel[0], kernel[1]],
            draw(fan_in * out_channels),
        );
        let bias = Param::new(&[out_channels], draw(out_channels));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            input: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    /// Output spatial size for an `h × w` input, or `None` if the kernel does not fit.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let out = |len: usize, ax: usize| {
            let padded = len + 2 * self.padding[ax];
            (padded >= self.kernel[ax]).then(|| (padded - self.kernel[ax]) / self.stride[ax] + 1)
        };
        Some((out(h, 0)?, out(w, 1)?))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1] && self.stride == [1, 1] && self.padding == [0, 0]
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, ho: usize, wo: usize, cols: &mut [T]) {
        let [kh, kw] = self.kernel;
        let [sh, sw] = self.stride;
        let [ph, pw] = self.padding;
        let p = ho * wo;
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for i in 0..kh {
                for j in 0..kw {
                    let row = &mut cols[((c * kh + i) * kw + j) * p..][..p];
                    for oy in 0..ho {
                        let iy = (oy * sh + i) as isize - ph as isize;
                        let dst = &mut row[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            dst.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        if sw == 1 {
                            // Contiguous run: zero the padded edges, copy the rest.
                            let lo = pw.saturating_sub(j).min(wo);
                            let hi = (w + pw).saturating_sub(j).clamp(lo, wo);
                            dst[..lo].iter_mut().for_each(|v| *v = T::zero());
                            dst[hi..].iter_mut().for_each(|v| *v = T::zero());
                            let s0 = lo + j - pw;
                            dst[lo..hi].copy_from_slice(&src[s0..s0 + hi - lo]);
                            continue;
                        }
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * sw + j) as isize - pw as isize;
                            *d = if ix < 0 || ix >= w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [T]) {
        let [kh, kw] = self.kernel;
        let [sh, sw] = self.stride;
        let [ph, pw] = self.padding;
        let p = ho * wo;
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for i in 0..kh {
                for j in 0..kw {
                    let row = &cols[((c * kh + i) * kw + j) * p..][..p];
                    for oy in 0..ho {
                        let iy = (oy * sh + i) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let src = &row[oy * wo..(oy + 1) * wo];
                        if sw == 1 {
                            let lo = pw.saturating_sub(j).min(wo);
                            let hi = (w + pw).saturating_sub(j).clamp(lo, wo);
                            let s0 = lo + j - pw;
                            for (d, &g) in dst[s0..s0 + hi - lo].iter_mut().zip(&src[lo..hi]) {
                                *d += g;
                            }
                            continue;
                        }
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * sw + j) as isize - pw as isize;
                            if ix >= 0 && (ix as usize) < w {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward_sample(&self, x: &[T], h: usize, w: usize, ho: usize, wo: usize, out: &mut [T]) {
        let k = self.in_channels * self.kernel[0] * self.kernel[1];
        let p = ho * wo;
        for (row, &b) in out.chunks_mut(p).zip(&self.bias.value) {
            row.iter_mut().for_each(|v| *v = b);
        }
        if self.is_pointwise() {
            gemm(
                self.out_channels,
                k,
                p,
                &self.weight.value,
                false,
                x,
                false,
                T::one(),
                out,
            );
        } else {
            let mut cols = vec![T::zero(); k * p];
            self.im2col(x, h, w, ho, wo, &mut cols);
            gemm(
                self.out_channels,
                k,
                p,
                &self.weight.value,
                false,
                &cols,
                false,
                T::one(),
                out,
            );
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (ho, wo) = self
            .output_hw(h, w)
            .expect("conv kernel larger than padded input");
        let mut out = Tensor::zeros([n, self.out_channels, ho, wo]);
        let out_len = self.out_channels * ho * wo;
        out.data_mut()
            .par_chunks_mut(out_len)
            .zip(x.data().par_chunks(c * h * w))
            .for_each(|(o, xs)| self.forward_sample(xs, h, w, ho, wo, o));
        out
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let out = self.infer(x);
        self.input = Some(x.clone());
        out
    }

    /// Accumulates weight and bias gradients and returns the input gradient.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("conv backward without forward");
        let [n, c, h, w] = x.shape();
        let [_, co, ho, wo] = grad.shape();
        let k = c * self.kernel[0] * self.kernel[1];
        let p = ho * wo;
        let this = &*self;
        let per_sample: Vec<(Vec<T>, Vec<T>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let g = grad.sample(i);
                let xs = x.sample(i);
                let mut cols_buf;
                let cols: &[T] = if this.is_pointwise() {
                    xs
                } else {
                    cols_buf = vec![T::zero(); k * p];
                    this.im2col(xs, h, w, ho, wo, &mut cols_buf);
                    &cols_buf
                };
                let mut dw = vec![T::zero(); co * k];
                gemm(co, p, k, g, false, cols, true, T::zero(), &mut dw);
                let mut dcols = vec![T::zero(); k * p];
                gemm(
                    k,
                    co,
                    p,
                    &this.weight.value,
                    true,
                    g,
                    false,
                    T::zero(),
                    &mut dcols,
                );
                let dx = if this.is_pointwise() {
                    dcols
                } else {
                    let mut dx = vec![T::zero(); c * h * w];
                    this.col2im(&dcols, h, w, ho, wo, &mut dx);
                    dx
                };
                (dw, dx)
            })
            .collect();
        let mut dx_all = Vec::with_capacity(n * c * h * w);
        for (i, (dw, dx)) in per_sample.into_iter().enumerate() {
            for (acc, v) in self.weight.grad.iter_mut().zip(dw) {
                *acc += v;
            }
            for (o, row) in grad.sample(i).chunks(p).enumerate() {
                self.bias.grad[o] += row.iter().copied().sum::<T>();
            }
            dx_all.extend(dx);
        }
        Tensor::from_vec([n, c, h, w], dx_all)
    }
}

impl<T: Scalar> Parameterized<T> for Conv2d<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![
            ("weight".into(), &mut self.weight),
            ("bias".into(), &mut self.bias),
        ]
    }
}
