use rayon::prelude::*;

use super::{Scalar, Tensor};

/// Average pooling with zero padding counted in the divisor.
#[derive(Debug, Clone)]
pub struct AvgPool2d {
    kernel: [usize; 2],
    stride: [usize; 2],
    padding: [usize; 2],
    input_shape: Option<[usize; 4]>,
}

impl AvgPool2d {
    pub fn new(kernel: [usize; 2], stride: [usize; 2], padding: [usize; 2]) -> Self {
        Self {
            kernel,
            stride,
            padding,
            input_shape: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let out = |len: usize, ax: usize| {
            let padded = len + 2 * self.padding[ax];
            (padded >= self.kernel[ax]).then(|| (padded - self.kernel[ax]) / self.stride[ax] + 1)
        };
        Some((out(h, 0)?, out(w, 1)?))
    }

    /// Valid input span `[lo, hi)` of every output position along one axis.
    fn spans(&self, len: usize, out: usize, ax: usize) -> Vec<(usize, usize)> {
        (0..out)
            .map(|o| {
                let start = (o * self.stride[ax]) as isize - self.padding[ax] as isize;
                let lo = start.max(0) as usize;
                let hi = ((start + self.kernel[ax] as isize).max(0) as usize).min(len);
                (lo, hi.max(lo))
            })
            .collect()
    }

    pub fn infer<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        let (ho, wo) = self
            .output_hw(h, w)
            .expect("pool kernel larger than padded input");
        let norm = T::one() / T::from_usize(self.kernel[0] * self.kernel[1]).unwrap();
        let (rows, cols) = (self.spans(h, ho, 0), self.spans(w, wo, 1));
        let mut out = Tensor::zeros([n, c, ho, wo]);
        out.data_mut()
            .par_chunks_mut(ho * wo)
            .zip(x.data().par_chunks(h * w))
            .for_each(|(op, ip)| {
                // Separable box sum: along the width first, then the height.
                let mut tmp = vec![T::zero(); h * wo];
                for (iy, row) in ip.chunks(w).enumerate() {
                    for (ox, &(lo, hi)) in cols.iter().enumerate() {
                        tmp[iy * wo + ox] = row[lo..hi].iter().copied().sum();
                    }
                }
                for (oy, &(lo, hi)) in rows.iter().enumerate() {
                    let dst = &mut op[oy * wo..(oy + 1) * wo];
                    for iy in lo..hi {
                        for (d, &t) in dst.iter_mut().zip(&tmp[iy * wo..(iy + 1) * wo]) {
                            *d += t;
                        }
                    }
                    dst.iter_mut().for_each(|v| *v *= norm);
                }
            });
        out
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.input_shape = Some(x.shape());
        self.infer(x)
    }

    pub fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let shape = self
            .input_shape
            .take()
            .expect("pool backward without forward");
        let [_, _, h, w] = shape;
        let [_, _, ho, wo] = grad.shape();
        let norm = T::one() / T::from_usize(self.kernel[0] * self.kernel[1]).unwrap();
        let (rows, cols) = (self.spans(h, ho, 0), self.spans(w, wo, 1));
        let mut dx = Tensor::zeros(shape);
        dx.data_mut()
            .par_chunks_mut(h * w)
            .zip(grad.data().par_chunks(ho * wo))
            .for_each(|(dp, gp)| {
                let mut tmp = vec![T::zero(); h * wo];
                for (oy, &(lo, hi)) in rows.iter().enumerate() {
                    let g = &gp[oy * wo..(oy + 1) * wo];
                    for iy in lo..hi {
                        for (t, &gv) in tmp[iy * wo..(iy + 1) * wo].iter_mut().zip(g) {
                            *t += gv * norm;
                        }
                    }
                }
                for (iy, row) in dp.chunks_mut(w).enumerate() {
                    for (ox, &(lo, hi)) in cols.iter().enumerate() {
                        let t = tmp[iy * wo + ox];
                        row[lo..hi].iter_mut().for_each(|v| *v += t);
                    }
                }
            });
        dx
    }
}

/// Adaptive average pooling to a fixed output grid. Bin `i` spans
/// `[floor(i·in/out), ceil((i+1)·in/out))` on each axis.
#[derive(Debug, Clone)]
pub struct AdaptiveAvgPool2d {
    output: [usize; 2],
    input_shape: Option<[usize; 4]>,
}

fn bins(input: usize, output: usize) -> Vec<(usize, usize)> {
    (0..output)
        .map(|i| ((i * input) / output, ((i + 1) * input).div_ceil(output)))
        .collect()
}

impl AdaptiveAvgPool2d {
    pub fn new(output: [usize; 2]) -> Self {
        Self {
            output,
            input_shape: None,
        }
    }

    pub fn output(&self) -> [usize; 2] {
        self.output
    }

    pub fn infer<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        let [oh, ow] = self.output;
        let (rows, cols) = (bins(h, oh), bins(w, ow));
        let mut out = Tensor::zeros([n, c, oh, ow]);
        for (op, ip) in out
            .data_mut()
            .chunks_mut(oh * ow)
            .zip(x.data().chunks(h * w))
        {
            for (by, &(y0, y1)) in rows.iter().enumerate() {
                for (bx, &(x0, x1)) in cols.iter().enumerate() {
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            acc += ip[y * w + xx];
                        }
                    }
                    op[by * ow + bx] = acc / T::from_usize((y1 - y0) * (x1 - x0)).unwrap();
                }
            }
        }
        out
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.input_shape = Some(x.shape());
        self.infer(x)
    }

    pub fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let shape = self
            .input_shape
            .take()
            .expect("pool backward without forward");
        let [_, _, h, w] = shape;
        let [oh, ow] = self.output;
        let (rows, cols) = (bins(h, oh), bins(w, ow));
        let mut dx = Tensor::zeros(shape);
        for (dp, gp) in dx
            .data_mut()
            .chunks_mut(h * w)
            .zip(grad.data().chunks(oh * ow))
        {
            for (by, &(y0, y1)) in rows.iter().enumerate() {
                for (bx, &(x0, x1)) in cols.iter().enumerate() {
                    let g = gp[by * ow + bx] / T::from_usize((y1 - y0) * (x1 - x0)).unwrap();
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            dp[y * w + xx] += g;
                        }
                    }
                }
            }
        }
        dx
    }
}
