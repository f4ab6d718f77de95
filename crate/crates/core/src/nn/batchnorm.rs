use crate::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization with learned scale/shift and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

#[derive(Debug)]
pub struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            weight: Tensor::full(&[channels], T::one()),
            bias: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
        }
    }

    pub fn channels(&self) -> usize {
        self.weight.len()
    }

    fn dims(&self, x: &Tensor<T>) -> (usize, usize, usize) {
        let s = x.shape();
        assert_eq!(s[1], self.channels(), "batchnorm channels");
        (s[0], s[1], s[2] * s[3])
    }

    /// Normalizes with the running statistics.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let (batch, channels, plane) = self.dims(x);
        let eps = T::from_f64_lossy(BN_EPS);
        let mut y = x.clone();
        let data = y.data_mut();
        for c in 0..channels {
            let inv = (self.running_var.data()[c] + eps).sqrt().recip();
            let scale = self.weight.data()[c] * inv;
            let shift = self.bias.data()[c] - self.running_mean.data()[c] * scale;
            for b in 0..batch {
                for v in &mut data[(b * channels + c) * plane..][..plane] {
                    *v = *v * scale + shift;
                }
            }
        }
        y
    }

    /// Normalizes with batch statistics and folds them into the running estimates.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> (Tensor<T>, BnCache<T>) {
        let (batch, channels, plane) = self.dims(x);
        let count = (batch * plane) as f64;
        let momentum = T::from_f64_lossy(BN_MOMENTUM);
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); channels];
        let mut y = x.clone();
        for c in 0..channels {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for b in 0..batch {
                for &v in &x.data()[(b * channels + c) * plane..][..plane] {
                    let v = v.to_f64_lossy();
                    sum += v;
                    sq += v * v;
                }
            }
            let mean = sum / count;
            let var = (sq / count - mean * mean).max(0.0);
            let inv = 1.0 / (var + BN_EPS).sqrt();
            inv_std[c] = T::from_f64_lossy(inv);
            let (m, istd) = (T::from_f64_lossy(mean), inv_std[c]);
            let (gamma, beta) = (self.weight.data()[c], self.bias.data()[c]);
            for b in 0..batch {
                let off = (b * channels + c) * plane;
                for i in off..off + plane {
                    let h = (x.data()[i] - m) * istd;
                    xhat[i] = h;
                    y.data_mut()[i] = gamma * h + beta;
                }
            }
            let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
            let rm = &mut self.running_mean.data_mut()[c];
            *rm = (T::one() - momentum) * *rm + momentum * m;
            let rv = &mut self.running_var.data_mut()[c];
            *rv = (T::one() - momentum) * *rv + momentum * T::from_f64_lossy(unbiased);
        }
        (y, BnCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &BnCache<T>, gy: &Tensor<T>, grad: Option<&mut BatchNorm2d<T>>) -> Tensor<T> {
        let (batch, channels, plane) = self.dims(gy);
        let count = T::from_usize(batch * plane).expect("count");
        let mut gx = gy.clone();
        let mut sums = Vec::with_capacity(channels);
        for c in 0..channels {
            let mut sum_g = T::zero();
            let mut sum_gh = T::zero();
            for b in 0..batch {
                let off = (b * channels + c) * plane;
                for i in off..off + plane {
                    sum_g += gy.data()[i];
                    sum_gh += gy.data()[i] * cache.xhat[i];
                }
            }
            sums.push((sum_g, sum_gh));
            let k = self.weight.data()[c] * cache.inv_std[c] / count;
            for b in 0..batch {
                let off = (b * channels + c) * plane;
                for i in off..off + plane {
                    gx.data_mut()[i] = k * (count * gy.data()[i] - sum_g - cache.xhat[i] * sum_gh);
                }
            }
        }
        if let Some(grad) = grad {
            for (c, (sum_g, sum_gh)) in sums.into_iter().enumerate() {
                grad.weight.data_mut()[c] += sum_gh;
                grad.bias.data_mut()[c] += sum_g;
            }
        }
        gx
    }
}
