use rayon::prelude::*;

use super::{Param, Parameterized, Scalar, Tensor};

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

/// Per-channel batch normalisation over N×H×W. Training uses batch
/// statistics and updates exponential running averages; inference uses
/// the running averages.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T: Scalar> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    cache: Option<Cache<T>>,
}

#[derive(Debug, Clone)]
struct Cache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(&[channels], T::one()),
            beta: Param::filled(&[channels], T::zero()),
            running_mean: Param::buffer(&[channels], T::zero()),
            running_var: Param::buffer(&[channels], T::one()),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let [_, c, h, w] = x.shape();
        let eps = T::from_f64_lossy(EPS);
        let scale: Vec<T> = (0..c)
            .map(|ch| self.gamma.value[ch] / (self.running_var.value[ch] + eps).sqrt())
            .collect();
        let mut out = x.clone();
        out.data_mut()
            .par_chunks_mut(h * w)
            .enumerate()
            .for_each(|(i, plane)| {
                let ch = i % c;
                let (m, s, b) = (self.running_mean.value[ch], scale[ch], self.beta.value[ch]);
                plane.iter_mut().for_each(|v| *v = (*v - m) * s + b);
            });
        out
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        let plane = h * w;
        let count = (n * plane) as f64;
        let eps = T::from_f64_lossy(EPS);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = 0.0;
            for i in 0..n {
                s += x.sample(i)[ch * plane..(ch + 1) * plane]
                    .iter()
                    .map(|v| v.to_f64().unwrap())
                    .sum::<f64>();
            }
            let m = s / count;
            let mut sq = 0.0;
            for i in 0..n {
                sq += x.sample(i)[ch * plane..(ch + 1) * plane]
                    .iter()
                    .map(|v| {
                        let d = v.to_f64().unwrap() - m;
                        d * d
                    })
                    .sum::<f64>();
            }
            mean[ch] = T::from_f64_lossy(m);
            var[ch] = T::from_f64_lossy(sq / count);
            let unbiased = if count > 1.0 { sq / (count - 1.0) } else { 0.0 };
            let mom = T::from_f64_lossy(MOMENTUM);
            let keep = T::one() - mom;
            self.running_mean.value[ch] = keep * self.running_mean.value[ch] + mom * mean[ch];
            self.running_var.value[ch] =
                keep * self.running_var.value[ch] + mom * T::from_f64_lossy(unbiased);
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = x.clone();
        let mut out = x.clone();
        for (i, (xp, op)) in xhat
            .data_mut()
            .chunks_mut(plane)
            .zip(out.data_mut().chunks_mut(plane))
            .enumerate()
        {
            let ch = i % c;
            for (xv, ov) in xp.iter_mut().zip(op.iter_mut()) {
                *xv = (*xv - mean[ch]) * inv_std[ch];
                *ov = self.gamma.value[ch] * *xv + self.beta.value[ch];
            }
        }
        self.cache = Some(Cache { xhat, inv_std });
        out
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let Cache { xhat, inv_std } = self
            .cache
            .take()
            .expect("batch norm backward without forward");
        let [n, c, h, w] = grad.shape();
        let plane = h * w;
        let count = T::from_usize((n * plane).max(1)).unwrap();
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for (i, (gp, xp)) in grad
            .data()
            .chunks(plane)
            .zip(xhat.data().chunks(plane))
            .enumerate()
        {
            let ch = i % c;
            for (&g, &xv) in gp.iter().zip(xp) {
                sum_g[ch] += g;
                sum_gx[ch] += g * xv;
            }
        }
        for ch in 0..c {
            self.gamma.grad[ch] += sum_gx[ch];
            self.beta.grad[ch] += sum_g[ch];
        }
        let mut dx = Tensor::zeros(grad.shape());
        for (i, ((dp, gp), xp)) in dx
            .data_mut()
            .chunks_mut(plane)
            .zip(grad.data().chunks(plane))
            .zip(xhat.data().chunks(plane))
            .enumerate()
        {
            let ch = i % c;
            let k = self.gamma.value[ch] * inv_std[ch] / count;
            for ((d, &g), &xv) in dp.iter_mut().zip(gp).zip(xp) {
                *d = k * (count * g - sum_g[ch] - xv * sum_gx[ch]);
            }
        }
        dx
    }
}

impl<T: Scalar> Parameterized<T> for BatchNorm2d<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        vec![
            ("gamma".into(), &self.gamma),
            ("beta".into(), &self.beta),
            ("running_mean".into(), &self.running_mean),
            ("running_var".into(), &self.running_var),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![
            ("gamma".into(), &mut self.gamma),
            ("beta".into(), &mut self.beta),
            ("running_mean".into(), &mut self.running_mean),
            ("running_var".into(), &mut self.running_var),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn training_output_is_standardised() {
        let mut bn = BatchNorm2d::<f64>::new(2);
        let x = Tensor::from_vec(
            [2, 2, 1, 3],
            vec![
                1.0, 2.0, 3.0, 10.0, 10.0, 10.0, 4.0, 5.0, 6.0, 10.0, 10.0, 10.0,
            ],
        );
        let y = bn.forward(&x);
        let ch0: Vec<f64> = [0, 1, 2, 6, 7, 8].iter().map(|&i| y.data()[i]).collect();
        let mean = ch0.iter().sum::<f64>() / 6.0;
        let var = ch0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-4);
        // constant channel maps to beta
        assert!([3, 4, 5, 9, 10, 11]
            .iter()
            .all(|&i| y.data()[i].abs() < 1e-12));
        assert!((bn.running_mean.value[1] - 1.0).abs() < 1e-12);
    }
}
