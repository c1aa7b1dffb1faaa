//! Parameter tensors and the layers the three networks are built from.
//!
//! Activations are single-sample `C x H x W` buffers. Every layer has a
//! `forward` that returns whatever its `backward` needs, and a `backward`
//! that accumulates parameter gradients and returns the input gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};
use wmsync_core::Real;

/// A named parameter tensor with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![T::zero(); n],
            grad: vec![T::zero(); n],
        }
    }

    /// Glorot/Xavier uniform initialization.
    pub fn xavier(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut p = Self::zeros(name, shape);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in &mut p.value {
            *v = T::lit(rng.random_range(-a..a));
        }
        p
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

/// Single-sample activation map.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor shape mismatch");
        Self { c, h, w, data }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.c, self.h, self.w) == (other.c, other.h, other.w)
    }
}

/// Geometry of a square-kernel convolution over a `h x w` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Self {
            c,
            h,
            w,
            k,
            stride,
            pad,
            oh,
            ow,
        }
    }

    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Source pixel of output `(oy, ox)` under kernel tap `(ky, kx)`.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let y = (oy * self.stride + ky) as isize - self.pad as isize;
        let x = (ox * self.stride + kx) as isize - self.pad as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some(y as usize * self.w + x as usize)
        }
    }

    fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let n = self.col_cols();
        let mut cols = vec![T::zero(); self.col_rows() * n];
        let plane = self.h * self.w;
        for ci in 0..self.c {
            let src = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            if let Some(i) = self.source(oy, ox, ky, kx) {
                                dst[oy * self.ow + ox] = src[i];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Real>(&self, cols: &[T], x: &mut [T]) {
        let n = self.col_cols();
        let plane = self.h * self.w;
        for ci in 0..self.c {
            let dst = &mut x[ci * plane..(ci + 1) * plane];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            if let Some(i) = self.source(oy, ox, ky, kx) {
                                dst[i] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `C[m x n] (+)= A[m x k] * B[k x n]`, all row-major, optional transposes.
fn matmul<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    accumulate: bool,
) {
    let a_str = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let b_str = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, a_str, b, b_str, beta, c, (n as isize, 1));
}

/// Square-kernel convolution with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// `cout x (cin * k * k)`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

pub struct ConvCache<T> {
    geom: ConvGeom,
    cols: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            cin,
            cout,
            k,
            stride,
            pad,
            weight: Param::xavier(
                format!("{name}.weight"),
                &[cout, cin, k, k],
                cin * k * k,
                cout * k * k,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), &[cout]),
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let g = ConvGeom::new(self.cin, h, w, self.k, self.stride, self.pad);
        (g.oh, g.ow)
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, ConvCache<T>) {
        assert_eq!(x.c, self.cin, "{}: channel mismatch", self.weight.name);
        let geom = ConvGeom::new(self.cin, x.h, x.w, self.k, self.stride, self.pad);
        let cols = geom.im2col(&x.data);
        let n = geom.col_cols();
        let mut out = Tensor::zeros(self.cout, geom.oh, geom.ow);
        for (co, chunk) in out.data.chunks_mut(n).enumerate() {
            chunk.iter_mut().for_each(|v| *v = self.bias.value[co]);
        }
        matmul(
            self.cout,
            geom.col_rows(),
            n,
            &self.weight.value,
            false,
            &cols,
            false,
            &mut out.data,
            true,
        );
        (out, ConvCache { geom, cols })
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, cache: &ConvCache<T>, dout: &Tensor<T>, need_input: bool) -> Option<Tensor<T>> {
        let g = cache.geom;
        let n = g.col_cols();
        let kk = g.col_rows();
        for (co, chunk) in dout.data.chunks(n).enumerate() {
            self.bias.grad[co] += chunk.iter().copied().sum::<T>();
        }
        matmul(self.cout, n, kk, &dout.data, false, &cache.cols, true, &mut self.weight.grad, true);
        if !need_input {
            return None;
        }
        let mut dcols = vec![T::zero(); kk * n];
        matmul(kk, self.cout, n, &self.weight.value, true, &dout.data, false, &mut dcols, false);
        let mut dx = Tensor::zeros(g.c, g.h, g.w);
        g.col2im(&dcols, &mut dx.data);
        Some(dx)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Transposed convolution (the adjoint of a strided convolution) with bias.
/// Output side is `stride * input side` for `k = 3, pad = 1, stride = 2`
/// (one extra row and column of output padding).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
    /// `cin x (cout * k * k)`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

pub struct ConvTCache<T> {
    geom: ConvGeom,
    input: Vec<T>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new(name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let k = 3;
        Self {
            cin,
            cout,
            k,
            stride: 2,
            pad: 1,
            output_pad: 1,
            weight: Param::xavier(
                format!("{name}.weight"),
                &[cin, cout, k, k],
                cin * k * k,
                cout * k * k,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), &[cout]),
        }
    }

    fn geom(&self, h: usize, w: usize) -> ConvGeom {
        let oh = (h - 1) * self.stride + self.k + self.output_pad - 2 * self.pad;
        let ow = (w - 1) * self.stride + self.k + self.output_pad - 2 * self.pad;
        let g = ConvGeom::new(self.cout, oh, ow, self.k, self.stride, self.pad);
        debug_assert_eq!((g.oh, g.ow), (h, w));
        g
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, ConvTCache<T>) {
        assert_eq!(x.c, self.cin, "{}: channel mismatch", self.weight.name);
        let g = self.geom(x.h, x.w);
        let n = g.col_cols();
        let mut cols = vec![T::zero(); g.col_rows() * n];
        matmul(g.col_rows(), self.cin, n, &self.weight.value, true, &x.data, false, &mut cols, false);
        let mut out = Tensor::zeros(self.cout, g.h, g.w);
        g.col2im(&cols, &mut out.data);
        let plane = out.plane();
        for (co, chunk) in out.data.chunks_mut(plane).enumerate() {
            let b = self.bias.value[co];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        (out, ConvTCache { geom: g, input: x.data.clone() })
    }

    pub fn backward(&mut self, cache: &ConvTCache<T>, dout: &Tensor<T>, need_input: bool) -> Option<Tensor<T>> {
        let g = cache.geom;
        let n = g.col_cols();
        let kk = g.col_rows();
        let plane = dout.plane();
        for (co, chunk) in dout.data.chunks(plane).enumerate() {
            self.bias.grad[co] += chunk.iter().copied().sum::<T>();
        }
        let dcols = g.im2col(&dout.data);
        matmul(self.cin, n, kk, &cache.input, false, &dcols, true, &mut self.weight.grad, true);
        if !need_input {
            return None;
        }
        let mut dx = Tensor::zeros(self.cin, g.oh, g.ow);
        matmul(self.cin, kk, n, &self.weight.value, false, &dcols, false, &mut dx.data, false);
        Some(dx)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Fully connected layer `y = W x + b` on flattened input.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub nin: usize,
    pub nout: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(name: &str, nin: usize, nout: usize, rng: &mut impl Rng) -> Self {
        Self {
            nin,
            nout,
            weight: Param::xavier(format!("{name}.weight"), &[nout, nin], nin, nout, rng),
            bias: Param::zeros(format!("{name}.bias"), &[nout]),
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.nin, "{}: input length", self.weight.name);
        let mut y = self.bias.value.clone();
        matmul(self.nout, self.nin, 1, &self.weight.value, false, x, false, &mut y, true);
        y
    }

    pub fn backward(&mut self, x: &[T], dy: &[T], need_input: bool) -> Option<Vec<T>> {
        for (g, &d) in self.bias.grad.iter_mut().zip(dy) {
            *g += d;
        }
        matmul(self.nout, 1, self.nin, dy, false, x, false, &mut self.weight.grad, true);
        if !need_input {
            return None;
        }
        let mut dx = vec![T::zero(); self.nin];
        matmul(self.nin, self.nout, 1, &self.weight.value, true, dy, false, &mut dx, false);
        Some(dx)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Smooth nonlinearities used between layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Silu,
    Tanh,
    Sigmoid,
    Identity,
}

fn sigmoid<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

impl Activation {
    pub fn apply<T: Real>(self, z: T) -> T {
        match self {
            Self::Silu => z * sigmoid(z),
            Self::Tanh => z.tanh(),
            Self::Sigmoid => sigmoid(z),
            Self::Identity => z,
        }
    }

    /// Derivative at pre-activation `z`.
    pub fn derivative<T: Real>(self, z: T) -> T {
        match self {
            Self::Silu => {
                let s = sigmoid(z);
                s * (T::one() + z * (T::one() - s))
            }
            Self::Tanh => {
                let t = z.tanh();
                T::one() - t * t
            }
            Self::Sigmoid => {
                let s = sigmoid(z);
                s * (T::one() - s)
            }
            Self::Identity => T::one(),
        }
    }

    pub fn map<T: Real>(self, z: &[T]) -> Vec<T> {
        z.iter().map(|&v| self.apply(v)).collect()
    }

    /// `dz = dy * f'(z)`
    pub fn backprop<T: Real>(self, z: &[T], dy: &[T]) -> Vec<T> {
        z.iter().zip(dy).map(|(&v, &d)| d * self.derivative(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(c: usize, h: usize, w: usize, rng: &mut impl Rng) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::<f64>::new("c", 2, 3, 3, 2, 1, &mut rng);
        let x = rand_tensor(2, 7, 6, &mut rng);
        let (y, _) = conv.forward(&x);
        assert_eq!((y.h, y.w), (4, 3));
        for co in 0..3 {
            for oy in 0..y.h {
                for ox in 0..y.w {
                    let mut s = conv.bias.value[co];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy >= 0 && ix >= 0 && iy < 7 && ix < 6 {
                                    s += conv.weight.value[((co * 2 + ci) * 3 + ky) * 3 + kx]
                                        * x.data[(ci * 7 + iy as usize) * 6 + ix as usize];
                                }
                            }
                        }
                    }
                    assert!((y.data[(co * y.h + oy) * y.w + ox] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <convT(x), y> == <x, conv(y)> with shared weights and zero biases
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ct = ConvTranspose2d::<f64>::new("t", 3, 2, &mut rng);
        let mut conv = Conv2d::<f64>::new("c", 2, 3, 3, 2, 1, &mut rng);
        // conv weight [cout=3, cin=2, k, k] equals convT weight [cin=3, cout=2, k, k]
        conv.weight.value = ct.weight.value.clone();
        let x = rand_tensor(3, 5, 4, &mut rng);
        let y = rand_tensor(2, 10, 8, &mut rng);
        let (tx, _) = ct.forward(&x);
        assert_eq!((tx.c, tx.h, tx.w), (2, 10, 8));
        let (cy, _) = conv.forward(&y);
        assert!((dot(&tx.data, &y.data) - dot(&x.data, &cy.data)).abs() < 1e-10);
    }

    fn check_layer_grads<F>(params: usize, mut loss_and_grad: F)
    where
        F: FnMut(Option<(usize, f64)>) -> (f64, Vec<f64>),
    {
        let (_, grad) = loss_and_grad(None);
        assert_eq!(grad.len(), params);
        for i in (0..params).step_by((params / 7).max(1)) {
            let h = 1e-6;
            let lp = loss_and_grad(Some((i, h))).0;
            let lm = loss_and_grad(Some((i, -h))).0;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = Conv2d::<f64>::new("c", 2, 2, 3, 2, 1, &mut rng);
        let x = rand_tensor(2, 6, 6, &mut rng);
        let r = rand_tensor(2, 3, 3, &mut rng);
        let n = base.weight.len() + base.bias.len() + x.data.len();
        check_layer_grads(n, |perturb| {
            let mut conv = base.clone();
            let mut xin = x.clone();
            if let Some((i, h)) = perturb {
                let nw = conv.weight.len();
                if i < nw {
                    conv.weight.value[i] += h;
                } else if i < nw + 2 {
                    conv.bias.value[i - nw] += h;
                } else {
                    xin.data[i - nw - 2] += h;
                }
            }
            let (y, cache) = conv.forward(&xin);
            let loss = dot(&y.data, &r.data);
            let dx = conv.backward(&cache, &r, true).unwrap();
            let mut g = conv.weight.grad.clone();
            g.extend(&conv.bias.grad);
            g.extend(&dx.data);
            (loss, g)
        });
    }

    #[test]
    fn transposed_conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = ConvTranspose2d::<f64>::new("t", 2, 3, &mut rng);
        let x = rand_tensor(2, 3, 4, &mut rng);
        let r = rand_tensor(3, 6, 8, &mut rng);
        let n = base.weight.len() + base.bias.len() + x.data.len();
        check_layer_grads(n, |perturb| {
            let mut ct = base.clone();
            let mut xin = x.clone();
            if let Some((i, h)) = perturb {
                let nw = ct.weight.len();
                if i < nw {
                    ct.weight.value[i] += h;
                } else if i < nw + 3 {
                    ct.bias.value[i - nw] += h;
                } else {
                    xin.data[i - nw - 3] += h;
                }
            }
            let (y, cache) = ct.forward(&xin);
            let loss = dot(&y.data, &r.data);
            let dx = ct.backward(&cache, &r, true).unwrap();
            let mut g = ct.weight.grad.clone();
            g.extend(&ct.bias.grad);
            g.extend(&dx.data);
            (loss, g)
        });
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = Linear::<f64>::new("l", 5, 3, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = [0.3, -1.2, 0.7];
        check_layer_grads(15 + 3 + 5, |perturb| {
            let mut l = base.clone();
            let mut xin = x.clone();
            if let Some((i, h)) = perturb {
                if i < 15 {
                    l.weight.value[i] += h;
                } else if i < 18 {
                    l.bias.value[i - 15] += h;
                } else {
                    xin[i - 18] += h;
                }
            }
            let y = l.forward(&xin);
            let loss = dot(&y, &r);
            let dx = l.backward(&xin, &r, true).unwrap();
            let mut g = l.weight.grad.clone();
            g.extend(&l.bias.grad);
            g.extend(&dx);
            (loss, g)
        });
    }

    #[test]
    fn activation_derivatives() {
        for act in [Activation::Silu, Activation::Tanh, Activation::Sigmoid, Activation::Identity] {
            for &z in &[-3.0f64, -0.4, 0.0, 0.9, 2.5] {
                let fd = (act.apply(z + 1e-6) - act.apply(z - 1e-6)) / 2e-6;
                assert!((fd - act.derivative(z)).abs() < 1e-8, "{act:?} at {z}");
            }
        }
    }

    #[test]
    fn xavier_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = Param::<f32>::xavier("w", &[16, 8, 3, 3], 72, 144, &mut rng);
        let a = (6.0f32 / 216.0).sqrt();
        assert!(p.value.iter().all(|v| v.abs() <= a));
        assert!(p.value.iter().any(|v| v.abs() > a * 0.9));
    }
}
