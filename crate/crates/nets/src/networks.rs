//! Generator, extractor and siamese matcher.

use rand::Rng;
use serde::{Deserialize, Serialize};
use wmsync_core::{Real, RstParams};

use crate::layers::{Activation, Conv2d, ConvCache, ConvTCache, ConvTranspose2d, Linear, Param, Tensor};

/// Maps the template map `K_r` to raw template noise on the canvas.
///
/// Stride-2 transposed convolutions double the side per stage, a stride-1
/// convolution collapses to one channel, and a per-pixel bias is added last.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    pub ups: Vec<ConvTranspose2d<T>>,
    pub out: Conv2d<T>,
    /// Untied bias, one value per output pixel.
    pub pixel_bias: Option<Param<T>>,
    pub act: Activation,
}

pub struct GeneratorCache<T> {
    ups: Vec<(ConvTCache<T>, Vec<T>)>,
    out: ConvCache<T>,
}

impl<T: Real> Generator<T> {
    pub fn new(widths: &[usize], canvas: usize, pixel_bias: bool, rng: &mut impl Rng) -> Self {
        let mut cin = 1;
        let mut ups = Vec::with_capacity(widths.len());
        for (i, &w) in widths.iter().enumerate() {
            ups.push(ConvTranspose2d::new(&format!("gen.up{i}"), cin, w, rng));
            cin = w;
        }
        Self {
            ups,
            out: Conv2d::new("gen.out", cin, 1, 3, 1, 1, rng),
            pixel_bias: pixel_bias.then(|| Param::zeros("gen.pixel_bias", &[canvas, canvas])),
            act: Activation::Silu,
        }
    }

    pub fn forward(&self, k: &Tensor<T>) -> (Tensor<T>, GeneratorCache<T>) {
        let mut x = k.clone();
        let mut ups = Vec::with_capacity(self.ups.len());
        for up in &self.ups {
            let (z, cache) = up.forward(&x);
            x = Tensor::from_vec(z.c, z.h, z.w, self.act.map(&z.data));
            ups.push((cache, z.data));
        }
        let (mut y, out) = self.out.forward(&x);
        if let Some(b) = &self.pixel_bias {
            assert_eq!(b.len(), y.data.len(), "pixel bias does not match the canvas");
            for (v, &bv) in y.data.iter_mut().zip(&b.value) {
                *v += bv;
            }
        }
        (y, GeneratorCache { ups, out })
    }

    pub fn backward(&mut self, cache: &GeneratorCache<T>, dout: &Tensor<T>) {
        if let Some(b) = &mut self.pixel_bias {
            for (g, &d) in b.grad.iter_mut().zip(&dout.data) {
                *g += d;
            }
        }
        let mut d = self.out.backward(&cache.out, dout, true).expect("input gradient");
        for (up, (c, z)) in self.ups.iter_mut().zip(&cache.ups).rev() {
            let dz = Tensor::from_vec(d.c, d.h, d.w, self.act.backprop(z, &d.data));
            d = up.backward(c, &dz, true).expect("input gradient");
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.ups.iter().flat_map(|u| u.params()).collect();
        v.extend(self.out.params());
        v.extend(self.pixel_bias.iter());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.ups.iter_mut().flat_map(|u| u.params_mut()).collect();
        v.extend(self.out.params_mut());
        v.extend(self.pixel_bias.iter_mut());
        v
    }
}

/// Maps a canvas image (normalized to `[0, 1]`) to a template map in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Extractor<T> {
    pub downs: Vec<Conv2d<T>>,
    pub out: Conv2d<T>,
    pub act: Activation,
}

pub struct ExtractorCache<T> {
    downs: Vec<(ConvCache<T>, Vec<T>)>,
    out: ConvCache<T>,
    z_out: Vec<T>,
}

impl<T: Real> Extractor<T> {
    pub fn new(widths: &[usize], rng: &mut impl Rng) -> Self {
        let mut cin = 1;
        let mut downs = Vec::with_capacity(widths.len());
        for (i, &w) in widths.iter().enumerate() {
            downs.push(Conv2d::new(&format!("ext.down{i}"), cin, w, 3, 2, 1, rng));
            cin = w;
        }
        Self {
            downs,
            out: Conv2d::new("ext.out", cin, 1, 3, 1, 1, rng),
            act: Activation::Silu,
        }
    }

    pub fn forward(&self, image: &Tensor<T>) -> (Tensor<T>, ExtractorCache<T>) {
        let mut x = image.clone();
        let mut downs = Vec::with_capacity(self.downs.len());
        for conv in &self.downs {
            let (z, cache) = conv.forward(&x);
            x = Tensor::from_vec(z.c, z.h, z.w, self.act.map(&z.data));
            downs.push((cache, z.data));
        }
        let (z, out) = self.out.forward(&x);
        let y = Tensor::from_vec(z.c, z.h, z.w, Activation::Sigmoid.map(&z.data));
        (y, ExtractorCache { downs, out, z_out: z.data })
    }

    /// Returns the gradient with respect to the normalized input image when asked.
    pub fn backward(&mut self, cache: &ExtractorCache<T>, dout: &Tensor<T>, need_input: bool) -> Option<Tensor<T>> {
        let dz = Tensor::from_vec(dout.c, dout.h, dout.w, Activation::Sigmoid.backprop(&cache.z_out, &dout.data));
        let mut d = self.out.backward(&cache.out, &dz, true).expect("input gradient");
        for (i, (conv, (c, z))) in self.downs.iter_mut().zip(&cache.downs).enumerate().rev() {
            let dz = Tensor::from_vec(d.c, d.h, d.w, self.act.backprop(z, &d.data));
            d = conv.backward(c, &dz, i > 0 || need_input)?;
        }
        Some(d)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.downs.iter().flat_map(|c| c.params()).collect();
        v.extend(self.out.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.downs.iter_mut().flat_map(|c| c.params_mut()).collect();
        v.extend(self.out.params_mut());
        v
    }
}

/// Output box of the matcher: `(lo, hi)` for R, Sx, Sy, Tx, Ty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges(pub [(f64, f64); 5]);

impl Default for ParamRanges {
    fn default() -> Self {
        Self([
            (-5.0, 95.0),
            (0.6, 1.6),
            (0.6, 1.6),
            (-0.35, 0.35),
            (-0.35, 0.35),
        ])
    }
}

impl ParamRanges {
    /// `lo + (hi - lo) (tanh z + 1) / 2` and its derivative.
    fn squash(&self, i: usize, z: f64) -> (f64, f64) {
        let (lo, hi) = self.0[i];
        let t = z.tanh();
        (lo + (hi - lo) * (t + 1.0) / 2.0, (hi - lo) * (1.0 - t * t) / 2.0)
    }

    /// Inverse of the squash, clamped inside the open box.
    pub fn unsquash(&self, p: &RstParams) -> [f64; 5] {
        let v = p.to_array();
        std::array::from_fn(|i| {
            let (lo, hi) = self.0[i];
            let u = ((v[i] - lo) / (hi - lo) * 2.0 - 1.0).clamp(-0.999_999, 0.999_999);
            u.atanh()
        })
    }
}

/// Siamese feature branches with shared weights, concatenation, two 3x3
/// convolutions and a dense regression to the five RST parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Matcher<T> {
    pub template_side: usize,
    pub feature_side: usize,
    /// Full-template-size kernel: one dense map shared by both branches.
    pub branch: Linear<T>,
    pub head1: Conv2d<T>,
    pub head2: Conv2d<T>,
    pub dense: Linear<T>,
    pub ranges: ParamRanges,
    pub act: Activation,
}

pub struct MatcherCache<T> {
    x_ext: Vec<T>,
    x_orig: Vec<T>,
    z_ext: Vec<T>,
    z_orig: Vec<T>,
    c1: ConvCache<T>,
    z1: Vec<T>,
    c2: ConvCache<T>,
    z2: Vec<T>,
    flat: Vec<T>,
    z_out: [f64; 5],
}

impl<T: Real> Matcher<T> {
    pub fn new(template_side: usize, feature_side: usize, head_channels: usize, rng: &mut impl Rng) -> Self {
        let f2 = feature_side * feature_side;
        Self {
            template_side,
            feature_side,
            branch: Linear::new("match.branch", template_side * template_side, f2, rng),
            head1: Conv2d::new("match.head1", 2, head_channels, 3, 1, 1, rng),
            head2: Conv2d::new("match.head2", head_channels, head_channels, 3, 1, 1, rng),
            dense: Linear::new("match.dense", head_channels * f2, 5, rng),
            ranges: ParamRanges::default(),
            act: Activation::Silu,
        }
    }

    fn center(k: &[T]) -> Vec<T> {
        let half = T::lit(0.5);
        k.iter().map(|&v| v - half).collect()
    }

    /// Features of one branch (after the nonlinearity).
    pub fn features(&self, k: &[T]) -> Vec<T> {
        self.act.map(&self.branch.forward(&Self::center(k)))
    }

    pub fn forward(&self, k_ext: &[T], k_orig: &[T]) -> (RstParams, MatcherCache<T>) {
        let n = self.template_side * self.template_side;
        assert_eq!(k_ext.len(), n, "extracted template size");
        assert_eq!(k_orig.len(), n, "original template size");
        let x_ext = Self::center(k_ext);
        let x_orig = Self::center(k_orig);
        let z_ext = self.branch.forward(&x_ext);
        let z_orig = self.branch.forward(&x_orig);
        let mut cat = self.act.map(&z_ext);
        cat.extend(self.act.map(&z_orig));
        let fs = self.feature_side;
        let cat = Tensor::from_vec(2, fs, fs, cat);
        let (z1, c1) = self.head1.forward(&cat);
        let a1 = Tensor::from_vec(z1.c, z1.h, z1.w, self.act.map(&z1.data));
        let (z2, c2) = self.head2.forward(&a1);
        let flat = self.act.map(&z2.data);
        let out = self.dense.forward(&flat);
        let mut z_out = [0.0; 5];
        let mut p = [0.0; 5];
        for i in 0..5 {
            z_out[i] = out[i].f64();
            p[i] = self.ranges.squash(i, z_out[i]).0;
        }
        let cache = MatcherCache {
            x_ext,
            x_orig,
            z_ext,
            z_orig,
            c1,
            z1: z1.data,
            c2,
            z2: z2.data,
            flat,
            z_out,
        };
        (RstParams::from_array(p), cache)
    }

    /// Backpropagates `dL/d(R, Sx, Sy, Tx, Ty)`; returns `dL/dK_ext`.
    pub fn backward(&mut self, cache: &MatcherCache<T>, dparams: [f64; 5]) -> Vec<T> {
        let dout: Vec<T> = (0..5)
            .map(|i| T::lit(dparams[i] * self.ranges.squash(i, cache.z_out[i]).1))
            .collect();
        let dflat = self.dense.backward(&cache.flat, &dout, true).expect("input gradient");
        let fs = self.feature_side;
        let hc = self.head2.cout;
        let dz2 = Tensor::from_vec(hc, fs, fs, self.act.backprop(&cache.z2, &dflat));
        let da1 = self.head2.backward(&cache.c2, &dz2, true).expect("input gradient");
        let dz1 = Tensor::from_vec(da1.c, fs, fs, self.act.backprop(&cache.z1, &da1.data));
        let dcat = self.head1.backward(&cache.c1, &dz1, true).expect("input gradient");
        let f2 = fs * fs;
        let dz_ext = self.act.backprop(&cache.z_ext, &dcat.data[..f2]);
        let dz_orig = self.act.backprop(&cache.z_orig, &dcat.data[f2..]);
        self.branch.backward(&cache.x_orig, &dz_orig, false);
        self.branch.backward(&cache.x_ext, &dz_ext, true).expect("input gradient")
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.branch.params();
        v.extend(self.head1.params());
        v.extend(self.head2.params());
        v.extend(self.dense.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.branch.params_mut();
        v.extend(self.head1.params_mut());
        v.extend(self.head2.params_mut());
        v.extend(self.dense.params_mut());
        v
    }
}
