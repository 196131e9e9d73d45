//! Layers with explicit forward tapes and reverse-mode backward passes.
//!
//! `forward` never mutates a network; `backward` consumes the tape of one
//! forward call and accumulates parameter gradients, so a network applied
//! several times in one objective sums the gradients of every application.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{GanError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-5;

/// A trainable buffer with its gradient and adaptive-moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Vec<T>) -> Self {
        let z = vec![T::zero(); value.len()];
        Self { value, grad: z.clone(), m: z.clone(), v: z }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// 2-D convolution with zero padding, computed as GEMM over im2col columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[out, in·k·k]`, row-major.
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Weights drawn from N(0, 0.02²); bias (if any) starts at zero.
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        assert!(kernel > 0 && stride > 0, "kernel and stride must be positive");
        let normal = Normal::new(0.0, 0.02).unwrap();
        let n = out_channels * in_channels * kernel * kernel;
        let weight = Param::new((0..n).map(|_| T::from_f64(normal.sample(rng))).collect());
        let bias = bias.then(|| Param::new(vec![T::zero(); out_channels]));
        Self { in_channels, out_channels, kernel, stride, pad, weight, bias }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        if h + 2 * p < k || w + 2 * p < k {
            return Err(GanError::Config(format!("{h}×{w} input is smaller than a {k}×{k} kernel with padding {p}")));
        }
        Ok(((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1))
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, ho: usize, wo: usize, cols: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        let n = ho * wo;
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * n..][..n];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        let out = &mut row[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            out.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, v) in out.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p as isize;
                            *v = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        let n = ho * wo;
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * n..][..n];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &v) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] = dst[ix as usize] + v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
        let [b, c, h, w] = x.shape();
        if c != self.in_channels {
            return Err(GanError::Shape { expected: vec![self.in_channels], found: vec![c] });
        }
        let (ho, wo) = self.output_size(h, w)?;
        let kk = c * self.kernel * self.kernel;
        let n = ho * wo;
        let mut cols = vec![T::zero(); b * kk * n];
        let mut y = Tensor::zeros([b, self.out_channels, ho, wo]);
        let out_len = self.out_channels * n;
        for i in 0..b {
            let ci = &mut cols[i * kk * n..(i + 1) * kk * n];
            self.im2col(x.sample(i), h, w, ho, wo, ci);
            let yi = &mut y.data_mut()[i * out_len..(i + 1) * out_len];
            T::gemm(self.out_channels, kk, n, &self.weight.value, false, ci, false, T::zero(), yi);
            if let Some(bias) = &self.bias {
                for (o, plane) in yi.chunks_mut(n).enumerate() {
                    plane.iter_mut().for_each(|v| *v = *v + bias.value[o]);
                }
            }
        }
        Ok((y, cols))
    }

    fn backward(&mut self, in_shape: [usize; 4], cols: &[T], dy: &Tensor<T>) -> Tensor<T> {
        let [b, c, h, w] = in_shape;
        let [_, oc, ho, wo] = dy.shape();
        let kk = c * self.kernel * self.kernel;
        let n = ho * wo;
        let mut dx = Tensor::zeros(in_shape);
        let mut dcols = vec![T::zero(); kk * n];
        for i in 0..b {
            let ci = &cols[i * kk * n..(i + 1) * kk * n];
            let dyi = dy.sample(i);
            T::gemm(oc, n, kk, dyi, false, ci, true, T::one(), &mut self.weight.grad);
            if let Some(bias) = &mut self.bias {
                for (o, plane) in dyi.chunks(n).enumerate() {
                    bias.grad[o] = plane.iter().fold(bias.grad[o], |a, &v| a + v);
                }
            }
            T::gemm(kk, oc, n, &self.weight.value, true, dyi, false, T::zero(), &mut dcols);
            let s = dx.sample_len();
            self.col2im(&dcols, h, w, ho, wo, &mut dx.data_mut()[i * s..(i + 1) * s]);
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    /// Per-sample, per-channel normalisation over space, without affine terms.
    InstanceNorm,
    Relu,
    LeakyRelu(f64),
    Tanh,
    /// Nearest-neighbour ×2 upsampling.
    Upsample2,
    /// `x + body(x)`.
    Residual(Sequential<T>),
}

#[derive(Debug)]
enum Cache<T> {
    Conv { in_shape: [usize; 4], cols: Vec<T> },
    Norm { xhat: Tensor<T>, inv_std: Vec<T> },
    Mask(Tensor<T>),
    Tanh(Tensor<T>),
    Upsample([usize; 4]),
    Residual(Tape<T>),
}

/// Intermediate values recorded by one forward pass.
#[derive(Debug)]
pub struct Tape<T>(Vec<Cache<T>>);

fn instance_norm<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
    let [b, c, h, w] = x.shape();
    let n = h * w;
    let nf = T::from_f64(n as f64);
    let mut y = x.clone();
    let mut inv = Vec::with_capacity(b * c);
    for plane in y.data_mut().chunks_mut(n) {
        let mean = plane.iter().fold(T::zero(), |a, &v| a + v) / nf;
        let var = plane.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / nf;
        let is = T::one() / (var + T::from_f64(NORM_EPS)).sqrt();
        plane.iter_mut().for_each(|v| *v = (*v - mean) * is);
        inv.push(is);
    }
    (y, inv)
}

fn instance_norm_backward<T: Scalar>(xhat: &Tensor<T>, inv: &[T], dy: &Tensor<T>) -> Tensor<T> {
    let [_, _, h, w] = dy.shape();
    let n = h * w;
    let nf = T::from_f64(n as f64);
    let mut dx = dy.clone();
    for ((d, xh), &is) in dx.data_mut().chunks_mut(n).zip(xhat.data().chunks(n)).zip(inv) {
        let sum = d.iter().fold(T::zero(), |a, &v| a + v);
        let dot = d.iter().zip(xh).fold(T::zero(), |a, (&g, &x)| a + g * x);
        for (g, &x) in d.iter_mut().zip(xh) {
            *g = is / nf * (nf * *g - sum - x * dot);
        }
    }
    dx
}

fn upsample2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [b, c, h, w] = x.shape();
    let mut y = Tensor::zeros([b, c, 2 * h, 2 * w]);
    let out = y.data_mut();
    for (p, plane) in x.data().chunks(h * w).enumerate() {
        let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
        for r in 0..2 * h {
            for col in 0..2 * w {
                dst[r * 2 * w + col] = plane[(r / 2) * w + col / 2];
            }
        }
    }
    y
}

fn upsample2_backward<T: Scalar>(in_shape: [usize; 4], dy: &Tensor<T>) -> Tensor<T> {
    let [_, _, h, w] = in_shape;
    let mut dx = Tensor::zeros(in_shape);
    let out = dx.data_mut();
    for (p, plane) in dy.data().chunks(4 * h * w).enumerate() {
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for r in 0..2 * h {
            for col in 0..2 * w {
                let i = (r / 2) * w + col / 2;
                dst[i] = dst[i] + plane[r * 2 * w + col];
            }
        }
    }
    dx
}

impl<T: Scalar> Layer<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Cache<T>)> {
        Ok(match self {
            Layer::Conv(conv) => {
                let (y, cols) = conv.forward(x)?;
                (y, Cache::Conv { in_shape: x.shape(), cols })
            }
            Layer::InstanceNorm => {
                let (y, inv_std) = instance_norm(x);
                (y.clone(), Cache::Norm { xhat: y, inv_std })
            }
            Layer::Relu => (x.map(|v| v.max(T::zero())), Cache::Mask(x.map(|v| if v > T::zero() { T::one() } else { T::zero() }))),
            Layer::LeakyRelu(slope) => {
                let s = T::from_f64(*slope);
                let mask = x.map(|v| if v > T::zero() { T::one() } else { s });
                let mut y = x.clone();
                y.data_mut().iter_mut().zip(mask.data()).for_each(|(v, &m)| *v = *v * m);
                (y, Cache::Mask(mask))
            }
            Layer::Tanh => {
                let y = x.map(|v| v.tanh());
                (y.clone(), Cache::Tanh(y))
            }
            Layer::Upsample2 => (upsample2(x), Cache::Upsample(x.shape())),
            Layer::Residual(body) => {
                let (mut y, tape) = body.forward(x)?;
                if y.shape() != x.shape() {
                    return Err(GanError::Shape { expected: x.shape().to_vec(), found: y.shape().to_vec() });
                }
                y.add_assign(x);
                (y, Cache::Residual(tape))
            }
        })
    }

    fn backward(&mut self, cache: Cache<T>, dy: Tensor<T>) -> Tensor<T> {
        match (self, cache) {
            (Layer::Conv(conv), Cache::Conv { in_shape, cols }) => conv.backward(in_shape, &cols, &dy),
            (Layer::InstanceNorm, Cache::Norm { xhat, inv_std }) => instance_norm_backward(&xhat, &inv_std, &dy),
            (Layer::Relu | Layer::LeakyRelu(_), Cache::Mask(mask)) => {
                let mut dx = dy;
                dx.data_mut().iter_mut().zip(mask.data()).for_each(|(g, &m)| *g = *g * m);
                dx
            }
            (Layer::Tanh, Cache::Tanh(y)) => {
                let mut dx = dy;
                dx.data_mut().iter_mut().zip(y.data()).for_each(|(g, &v)| *g = *g * (T::one() - v * v));
                dx
            }
            (Layer::Upsample2, Cache::Upsample(in_shape)) => upsample2_backward(in_shape, &dy),
            (Layer::Residual(body), Cache::Residual(tape)) => {
                let mut dx = body.backward(tape, dy.clone());
                dx.add_assign(&dy);
                dx
            }
            _ => unreachable!("tape does not belong to this network"),
        }
    }

    fn collect<'a>(&'a self, out: &mut Vec<&'a Param<T>>) {
        match self {
            Layer::Conv(c) => {
                out.push(&c.weight);
                out.extend(c.bias.as_ref());
            }
            Layer::Residual(body) => body.layers.iter().for_each(|l| l.collect(out)),
            _ => {}
        }
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        match self {
            Layer::Conv(c) => {
                out.push(&mut c.weight);
                out.extend(c.bias.as_mut());
            }
            Layer::Residual(body) => body.layers.iter_mut().for_each(|l| l.collect_mut(out)),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tape<T>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (y, cache) = layer.forward(&cur)?;
            caches.push(cache);
            cur = y;
        }
        Ok((cur, Tape(caches)))
    }

    /// Forward pass without keeping the tape.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x)?.0)
    }

    /// Propagates `dy` back through the pass recorded in `tape`, accumulating
    /// parameter gradients, and returns the gradient with respect to the input.
    pub fn backward(&mut self, tape: Tape<T>, dy: Tensor<T>) -> Tensor<T> {
        assert_eq!(tape.0.len(), self.layers.len(), "tape does not belong to this network");
        let mut grad = dy;
        for (layer, cache) in self.layers.iter_mut().zip(tape.0).rev() {
            grad = layer.backward(cache, grad);
        }
        grad
    }

    /// All parameters in a fixed depth-first order.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.collect(&mut out));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        self.layers.iter_mut().for_each(|l| l.collect_mut(&mut out));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nc2c_core::rng::rng_for;

    fn ramp(shape: [usize; 4]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i * 7919) % 23) as f64 / 23.0 - 0.4).collect()).unwrap()
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = rng_for(1, &[]);
        let conv = Conv2d::<f64>::new(2, 3, 3, 2, 1, true, &mut rng);
        let x = ramp([1, 2, 5, 6]);
        let (y, _) = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), [1, 3, 3, 3]);
        for o in 0..3 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut s = 0.0;
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (iy, ix) = ((oy * 2 + ky) as isize - 1, (ox * 2 + kx) as isize - 1);
                                if (0..5).contains(&iy) && (0..6).contains(&ix) {
                                    s += conv.weight.value[((o * 2 + c) * 3 + ky) * 3 + kx]
                                        * x.data()[(c * 5 + iy as usize) * 6 + ix as usize];
                                }
                            }
                        }
                    }
                    assert!((y.data()[(o * 3 + oy) * 3 + ox] - s).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn instance_norm_output_is_standardised() {
        let (y, _) = Layer::<f64>::InstanceNorm.forward(&ramp([2, 3, 4, 4])).unwrap();
        for plane in y.data().chunks(16) {
            let mean = plane.iter().sum::<f64>() / 16.0;
            let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn upsample_backward_sums_blocks() {
        let x = ramp([1, 1, 2, 3]);
        let y = upsample2(&x);
        assert_eq!(y.shape(), [1, 1, 4, 6]);
        assert_eq!(y.data()[6 + 5], x.data()[2]);
        let dx = upsample2_backward(x.shape(), &Tensor::filled(y.shape(), 1.0));
        assert!(dx.data().iter().all(|&v| v == 4.0));
    }

    /// Central differences of `L = Σ r ⊙ net(x)` for a fixed random weighting `r`.
    fn check_network(mut net: Sequential<f64>, x: Tensor<f64>) {
        let (y, tape) = net.forward(&x).unwrap();
        let r = ramp(y.shape()).map(|v| v + 0.05);
        let loss = |net: &Sequential<f64>, x: &Tensor<f64>| -> f64 {
            net.apply(x).unwrap().data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        net.zero_grad();
        let dx = net.backward(tape, r.clone());
        let h = 1e-6;
        for i in (0..x.len()).step_by(3) {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += h;
            xm.data_mut()[i] -= h;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() <= 1e-6 * fd.abs().max(1e-2), "dx[{i}]: {fd} vs {}", dx.data()[i]);
        }
        let grads: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();
        for (pi, g) in grads.iter().enumerate() {
            for j in (0..g.len()).step_by(5) {
                let orig = net.params()[pi].value[j];
                net.params_mut()[pi].value[j] = orig + h;
                let lp = loss(&net, &x);
                net.params_mut()[pi].value[j] = orig - h;
                let lm = loss(&net, &x);
                net.params_mut()[pi].value[j] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-6 * fd.abs().max(1e-2), "param {pi}[{j}]: {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn every_layer_backward_matches_finite_differences() {
        let mut rng = rng_for(3, &[]);
        let mut conv = |i, o, k, s, p, b| Layer::Conv(Conv2d::new(i, o, k, s, p, b, &mut rng));
        let body = Sequential::new(vec![conv(3, 3, 3, 1, 1, false), Layer::InstanceNorm]);
        let net = Sequential::new(vec![
            conv(2, 3, 3, 2, 1, true),
            Layer::InstanceNorm,
            Layer::LeakyRelu(0.2),
            Layer::Residual(body),
            Layer::Upsample2,
            conv(3, 2, 4, 1, 2, true),
            Layer::Relu,
            conv(2, 1, 3, 1, 1, true),
            Layer::Tanh,
        ]);
        // weights scaled up so activations leave the linear regime
        let mut net = net;
        net.params_mut().into_iter().for_each(|p| p.value.iter_mut().for_each(|v| *v *= 25.0));
        check_network(net, ramp([2, 2, 6, 6]));
    }
}
