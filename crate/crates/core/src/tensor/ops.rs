use rayon::prelude::*;

use super::Tensor;
use crate::error::TensorError;

/// A 2-D convolution layer, plain or transposed, possibly grouped.
///
/// Weight layout follows the usual convention: `[out, in / G, k, k]` for a
/// forward convolution and `[in, out / G, k, k]` for a transposed one.
/// Padding is `kernel / 2` ("same"); a transposed convolution chooses its
/// output padding so that stride `s` scales each spatial dim by exactly `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub groups: usize,
    pub stride: usize,
    pub padding: usize,
    pub transposed: bool,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl ConvSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        groups: usize,
        stride: usize,
        transposed: bool,
        weight: Tensor,
        bias: Option<Tensor>,
    ) -> Result<Self, TensorError> {
        let spec = Self {
            kernel,
            in_channels,
            out_channels,
            groups,
            stride,
            padding: kernel / 2,
            transposed,
            weight,
            bias,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Zero weights and zero bias.
    pub fn zeros(
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        groups: usize,
        stride: usize,
        transposed: bool,
    ) -> Result<Self, TensorError> {
        let shape = Self::weight_shape_for(kernel, in_channels, out_channels, groups, transposed)?;
        Self::new(
            kernel,
            in_channels,
            out_channels,
            groups,
            stride,
            transposed,
            Tensor::zeros(&shape),
            Some(Tensor::zeros(&[out_channels])),
        )
    }

    /// Expected weight shape for the given geometry.
    pub fn weight_shape_for(
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        groups: usize,
        transposed: bool,
    ) -> Result<[usize; 4], TensorError> {
        if groups == 0
            || !in_channels.is_multiple_of(groups)
            || !out_channels.is_multiple_of(groups)
        {
            return Err(TensorError::InvalidSpec(format!(
                "channels {in_channels}->{out_channels} not divisible by {groups} groups"
            )));
        }
        Ok(if transposed {
            [in_channels, out_channels / groups, kernel, kernel]
        } else {
            [out_channels, in_channels / groups, kernel, kernel]
        })
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        if self.transposed {
            [
                self.in_channels,
                self.out_channels / self.groups,
                self.kernel,
                self.kernel,
            ]
        } else {
            [
                self.out_channels,
                self.in_channels / self.groups,
                self.kernel,
                self.kernel,
            ]
        }
    }

    /// Fan-in of one output unit, used for weight initialisation bounds.
    pub fn fan_in(&self) -> usize {
        if self.transposed {
            // each output receives contributions from (in/G) channels and on
            // average k*k/s^2 kernel taps
            (self.in_channels / self.groups) * self.kernel * self.kernel
                / (self.stride * self.stride).max(1)
        } else {
            (self.in_channels / self.groups) * self.kernel * self.kernel
        }
        .max(1)
    }

    pub fn output_padding(&self) -> usize {
        if self.transposed {
            (self.stride + 2 * self.padding).saturating_sub(self.kernel)
        } else {
            0
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize), TensorError> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        if self.transposed {
            if h == 0 || w == 0 {
                return Ok((0, 0));
            }
            let op = self.output_padding();
            Ok(((h - 1) * s + k + op - 2 * p, (w - 1) * s + k + op - 2 * p))
        } else {
            if h + 2 * p < k {
                return Err(TensorError::Axis {
                    op: "conv2d",
                    axis: "height",
                    expected: k,
                    actual: h + 2 * p,
                });
            }
            if w + 2 * p < k {
                return Err(TensorError::Axis {
                    op: "conv2d",
                    axis: "width",
                    expected: k,
                    actual: w + 2 * p,
                });
            }
            Ok(((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1))
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }

    fn validate(&self) -> Result<(), TensorError> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(TensorError::InvalidSpec(
                "kernel and stride must be positive".into(),
            ));
        }
        let expected = Self::weight_shape_for(
            self.kernel,
            self.in_channels,
            self.out_channels,
            self.groups,
            self.transposed,
        )?;
        if self.weight.shape() != expected {
            return Err(TensorError::InvalidSpec(format!(
                "weight shape {:?}, expected {:?}",
                self.weight.shape(),
                expected
            )));
        }
        if let Some(b) = &self.bias {
            if b.shape() != [self.out_channels] {
                return Err(TensorError::InvalidSpec(format!(
                    "bias shape {:?}, expected [{}]",
                    b.shape(),
                    self.out_channels
                )));
            }
        }
        if self.transposed {
            let op = (self.stride + 2 * self.padding) as isize - self.kernel as isize;
            if op < 0 || op as usize >= self.stride {
                return Err(TensorError::InvalidSpec(format!(
                    "transposed kernel {} cannot scale by stride {} exactly",
                    self.kernel, self.stride
                )));
            }
        }
        Ok(())
    }

    fn check_input(
        &self,
        input: &Tensor,
        op: &'static str,
    ) -> Result<(usize, usize, usize), TensorError> {
        let (c, h, w) = input.chw()?;
        if c != self.in_channels {
            return Err(TensorError::Axis {
                op,
                axis: "channels",
                expected: self.in_channels,
                actual: c,
            });
        }
        Ok((c, h, w))
    }

    fn bias_of(&self, oc: usize) -> f64 {
        self.bias.as_ref().map_or(0.0, |b| b.data()[oc] as f64)
    }
}

/// Inference-form batch normalisation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormSpec {
    pub mean: Tensor,
    pub var: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f32,
}

impl BatchNormSpec {
    pub const DEFAULT_EPS: f32 = 1e-5;

    pub fn new(
        mean: Tensor,
        var: Tensor,
        gamma: Tensor,
        beta: Tensor,
        eps: f32,
    ) -> Result<Self, TensorError> {
        let c = mean.len();
        for (name, t) in [
            ("mean", &mean),
            ("var", &var),
            ("gamma", &gamma),
            ("beta", &beta),
        ] {
            if t.shape() != [c] {
                return Err(TensorError::InvalidSpec(format!(
                    "batchnorm {name} has shape {:?}, expected [{c}]",
                    t.shape()
                )));
            }
        }
        if var.data().iter().any(|&v| v.is_nan() || v < 0.0) {
            return Err(TensorError::InvalidSpec(
                "batchnorm variance must be >= 0".into(),
            ));
        }
        if eps.is_nan() || eps <= 0.0 {
            return Err(TensorError::InvalidSpec("batchnorm eps must be > 0".into()));
        }
        Ok(Self {
            mean,
            var,
            gamma,
            beta,
            eps,
        })
    }

    /// Freshly initialised statistics: mean 0, variance 1, gamma 1, beta 0.
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], 1.0),
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            eps: Self::DEFAULT_EPS,
        }
    }

    /// gamma = beta = 0, which forces the fused ReLU output to zero.
    pub fn zeroed(channels: usize) -> Self {
        Self {
            gamma: Tensor::zeros(&[channels]),
            ..Self::identity(channels)
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Learnable parameters (scale and shift); running statistics are buffers.
    pub fn param_count(&self) -> usize {
        2 * self.channels()
    }
}

pub fn conv2d(input: &Tensor, spec: &ConvSpec) -> Result<Tensor, TensorError> {
    if spec.transposed {
        return Err(TensorError::InvalidSpec(
            "conv2d called with a transposed spec".into(),
        ));
    }
    let (_, h, w) = spec.check_input(input, "conv2d")?;
    let (oh, ow) = spec.output_hw(h, w)?;
    let (k, s, p) = (spec.kernel, spec.stride as isize, spec.padding as isize);
    let in_pg = spec.in_channels / spec.groups;
    let out_pg = spec.out_channels / spec.groups;
    let x = input.data();
    let wt = spec.weight.data();
    let mut out = vec![0f32; spec.out_channels * oh * ow];
    if oh * ow == 0 {
        return Tensor::new(vec![spec.out_channels, oh, ow], out);
    }

    out.par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(oc, plane_out)| {
            let g = oc / out_pg;
            let mut acc = vec![spec.bias_of(oc); oh * ow];
            for icg in 0..in_pg {
                let ic = g * in_pg + icg;
                let plane = &x[ic * h * w..(ic + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wt[((oc * in_pg + icg) * k + ky) * k + kx] as f64;
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = oy as isize * s + ky as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &plane[iy as usize * w..(iy as usize + 1) * w];
                            let acc_row = &mut acc[oy * ow..(oy + 1) * ow];
                            for (ox, a) in acc_row.iter_mut().enumerate() {
                                let ix = ox as isize * s + kx as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    *a += wv * row[ix as usize] as f64;
                                }
                            }
                        }
                    }
                }
            }
            for (o, a) in plane_out.iter_mut().zip(&acc) {
                *o = *a as f32;
            }
        });
    Tensor::new(vec![spec.out_channels, oh, ow], out)
}

pub fn conv_transpose2d(input: &Tensor, spec: &ConvSpec) -> Result<Tensor, TensorError> {
    if !spec.transposed {
        return Err(TensorError::InvalidSpec(
            "conv_transpose2d called with a forward spec".into(),
        ));
    }
    let (_, h, w) = spec.check_input(input, "conv_transpose2d")?;
    let (oh, ow) = spec.output_hw(h, w)?;
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding as isize);
    let in_pg = spec.in_channels / spec.groups;
    let out_pg = spec.out_channels / spec.groups;
    let x = input.data();
    let wt = spec.weight.data();
    let mut out = vec![0f32; spec.out_channels * oh * ow];
    if oh * ow == 0 {
        return Tensor::new(vec![spec.out_channels, oh, ow], out);
    }

    out.par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(oc, plane_out)| {
            let g = oc / out_pg;
            let ocg = oc % out_pg;
            let mut acc = vec![spec.bias_of(oc); oh * ow];
            for icg in 0..in_pg {
                let ic = g * in_pg + icg;
                let plane = &x[ic * h * w..(ic + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wt[((ic * out_pg + ocg) * k + ky) * k + kx] as f64;
                        if wv == 0.0 {
                            continue;
                        }
                        for iy in 0..h {
                            let oy = (iy * s + ky) as isize - p;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            let acc_row = &mut acc[oy as usize * ow..(oy as usize + 1) * ow];
                            for ix in 0..w {
                                let ox = (ix * s + kx) as isize - p;
                                if ox >= 0 && ox < ow as isize {
                                    acc_row[ox as usize] += wv * plane[iy * w + ix] as f64;
                                }
                            }
                        }
                    }
                }
            }
            for (o, a) in plane_out.iter_mut().zip(&acc) {
                *o = *a as f32;
            }
        });
    Tensor::new(vec![spec.out_channels, oh, ow], out)
}

/// `max(0, gamma * (x - mean) / sqrt(var + eps) + beta)` per channel.
pub fn batchnorm_relu(input: &Tensor, spec: &BatchNormSpec) -> Result<Tensor, TensorError> {
    let (c, h, w) = input.chw()?;
    if c != spec.channels() {
        return Err(TensorError::Axis {
            op: "batchnorm_relu",
            axis: "channels",
            expected: spec.channels(),
            actual: c,
        });
    }
    let plane = h * w;
    let mut out = input.clone();
    if plane == 0 {
        return Ok(out);
    }
    out.data_mut()
        .chunks_mut(plane)
        .enumerate()
        .for_each(|(ch, values)| {
            let mean = spec.mean.data()[ch] as f64;
            let inv = 1.0 / (spec.var.data()[ch] as f64 + spec.eps as f64).sqrt();
            let gamma = spec.gamma.data()[ch] as f64;
            let beta = spec.beta.data()[ch] as f64;
            for v in values {
                let y = gamma * (*v as f64 - mean) * inv + beta;
                *v = y.max(0.0) as f32;
            }
        });
    Ok(out)
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (m, k) = a.rows_cols()?;
    let (kb, n) = b.rows_cols()?;
    if k != kb {
        return Err(TensorError::Axis {
            op: "matmul",
            axis: "inner",
            expected: k,
            actual: kb,
        });
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0f32; m * n];
    if n == 0 {
        return Tensor::new(vec![m, n], out);
    }
    out.par_chunks_mut(n).enumerate().for_each(|(i, row_out)| {
        let mut acc = vec![0f64; n];
        for (p, &av) in ad[i * k..(i + 1) * k].iter().enumerate() {
            let av = av as f64;
            if av == 0.0 {
                continue;
            }
            for (a, &bv) in acc.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *a += av * bv as f64;
            }
        }
        for (o, a) in row_out.iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    });
    Tensor::new(vec![m, n], out)
}

pub fn transpose2d(a: &Tensor) -> Result<Tensor, TensorError> {
    let (r, c) = a.rows_cols()?;
    let d = a.data();
    let mut out = vec![0f32; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out)
}

/// Row-wise softmax, stabilised by subtracting each row's maximum.
pub fn softmax_rows(a: &Tensor) -> Result<Tensor, TensorError> {
    let (_, c) = a.rows_cols()?;
    let mut out = a.clone();
    if c == 0 {
        return Ok(out);
    }
    out.data_mut().par_chunks_mut(c).for_each(|row| {
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (o, e) in row.iter_mut().zip(&exps) {
            *o = (e / sum) as f32;
        }
    });
    Ok(out)
}

/// Bilinear upsampling by integer factors `(u, v)` with half-pixel
/// (corner-unaligned) sampling: output pixel `o` reads source coordinate
/// `(o + 0.5) / factor - 0.5`, clamped to the valid range.
pub fn upsample_bilinear(input: &Tensor, factor: (usize, usize)) -> Result<Tensor, TensorError> {
    let (c, h, w) = input.chw()?;
    let (u, v) = factor;
    if u == 0 || v == 0 {
        return Err(TensorError::InvalidSpec(
            "upsample factor must be positive".into(),
        ));
    }
    let (oh, ow) = (h * u, w * v);
    let mut out = vec![0f32; c * oh * ow];
    if oh * ow == 0 {
        return Tensor::new(vec![c, oh, ow], out);
    }
    let taps = |o: usize, f: usize, n: usize| -> (usize, usize, f64) {
        let src = ((o as f64 + 0.5) / f as f64 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, src - i0 as f64)
    };
    let ytaps: Vec<_> = (0..oh).map(|o| taps(o, u, h)).collect();
    let xtaps: Vec<_> = (0..ow).map(|o| taps(o, v, w)).collect();
    let x = input.data();
    out.par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(ch, plane_out)| {
            let plane = &x[ch * h * w..(ch + 1) * h * w];
            for (oy, &(y0, y1, ly)) in ytaps.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in xtaps.iter().enumerate() {
                    let a = plane[y0 * w + x0] as f64;
                    let b = plane[y0 * w + x1] as f64;
                    let c2 = plane[y1 * w + x0] as f64;
                    let d = plane[y1 * w + x1] as f64;
                    let top = a * (1.0 - lx) + b * lx;
                    let bottom = c2 * (1.0 - lx) + d * lx;
                    plane_out[oy * ow + ox] = (top * (1.0 - ly) + bottom * ly) as f32;
                }
            }
        });
    Tensor::new(vec![c, oh, ow], out)
}

/// `d x h x w` map to `T x d` token matrix, tokens in row-major spatial order.
pub fn map_to_tokens(map: &Tensor) -> Result<Tensor, TensorError> {
    let (d, h, w) = map.chw()?;
    let t = h * w;
    let src = map.data();
    let mut out = vec![0f32; t * d];
    for c in 0..d {
        for i in 0..t {
            out[i * d + c] = src[c * t + i];
        }
    }
    Tensor::new(vec![t, d], out)
}

/// Inverse of [`map_to_tokens`].
pub fn tokens_to_map(tokens: &Tensor, h: usize, w: usize) -> Result<Tensor, TensorError> {
    let (t, d) = tokens.rows_cols()?;
    if t != h * w {
        return Err(TensorError::Axis {
            op: "tokens_to_map",
            axis: "tokens",
            expected: h * w,
            actual: t,
        });
    }
    let src = tokens.data();
    let mut out = vec![0f32; t * d];
    for i in 0..t {
        for c in 0..d {
            out[c * t + i] = src[i * d + c];
        }
    }
    Tensor::new(vec![d, h, w], out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::Axis {
            op: "add",
            axis: "shape",
            expected: a.len(),
            actual: b.len(),
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn conv(
        kernel: usize,
        cin: usize,
        cout: usize,
        groups: usize,
        stride: usize,
        seed: u64,
    ) -> ConvSpec {
        let shape = ConvSpec::weight_shape_for(kernel, cin, cout, groups, false).unwrap();
        ConvSpec::new(
            kernel,
            cin,
            cout,
            groups,
            stride,
            false,
            random(&shape, seed),
            Some(random(&[cout], seed + 1)),
        )
        .unwrap()
    }

    fn conv_t(
        kernel: usize,
        cin: usize,
        cout: usize,
        groups: usize,
        stride: usize,
        seed: u64,
    ) -> ConvSpec {
        let shape = ConvSpec::weight_shape_for(kernel, cin, cout, groups, true).unwrap();
        ConvSpec::new(
            kernel,
            cin,
            cout,
            groups,
            stride,
            true,
            random(&shape, seed),
            Some(random(&[cout], seed + 1)),
        )
        .unwrap()
    }

    /// Direct definition of a strided, padded, grouped convolution.
    fn conv_oracle(x: &Tensor, spec: &ConvSpec) -> Tensor {
        let (c, h, w) = x.chw().unwrap();
        let (k, s, p) = (
            spec.kernel as isize,
            spec.stride as isize,
            spec.padding as isize,
        );
        let oh = ((h as isize + 2 * p - k) / s + 1) as usize;
        let ow = ((w as isize + 2 * p - k) / s + 1) as usize;
        let in_pg = c / spec.groups;
        let out_pg = spec.out_channels / spec.groups;
        let mut out = Tensor::zeros(&[spec.out_channels, oh, ow]);
        for oc in 0..spec.out_channels {
            let g = oc / out_pg;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = spec.bias.as_ref().unwrap().data()[oc] as f64;
                    for icg in 0..in_pg {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = oy as isize * s + ky - p;
                                let ix = ox as isize * s + kx - p;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let wi = ((oc * in_pg + icg) * k as usize + ky as usize)
                                    * k as usize
                                    + kx as usize;
                                let xi = ((g * in_pg + icg) * h + iy as usize) * w + ix as usize;
                                acc += spec.weight.data()[wi] as f64 * x.data()[xi] as f64;
                            }
                        }
                    }
                    out.data_mut()[(oc * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
        out
    }

    #[test]
    fn identity_1x1_conv_is_identity() {
        let x = random(&[5, 6, 7], 1);
        let spec = ConvSpec::new(
            1,
            5,
            5,
            1,
            1,
            false,
            Tensor::eye(5).reshape(&[5, 5, 1, 1]).unwrap(),
            Some(Tensor::zeros(&[5])),
        )
        .unwrap();
        assert_eq!(conv2d(&x, &spec).unwrap(), x);
    }

    #[test]
    fn zero_depthwise_kernel_halves_grid() {
        let x = random(&[4, 8, 8], 2);
        let spec = ConvSpec::zeros(3, 4, 4, 4, 2, false).unwrap();
        let y = conv2d(&x, &spec).unwrap();
        assert_eq!(y.shape(), &[4, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pointwise_conv_matches_triple_loop() {
        let x = random(&[4, 8, 8], 3);
        let spec = conv(1, 4, 6, 1, 1, 4);
        let y = conv2d(&x, &spec).unwrap();
        let mut expected = Tensor::zeros(&[6, 8, 8]);
        for o in 0..6 {
            for pix in 0..64 {
                let mut acc = spec.bias.as_ref().unwrap().data()[o];
                for i in 0..4 {
                    acc += spec.weight.data()[o * 4 + i] * x.data()[i * 64 + pix];
                }
                expected.data_mut()[o * 64 + pix] = acc;
            }
        }
        assert!(y.max_abs_diff(&expected).unwrap() < 1e-5);
    }

    #[test]
    fn strided_grouped_conv_matches_oracle() {
        for (k, groups, stride, seed) in
            [(3, 1, 2, 10), (3, 2, 2, 11), (5, 4, 1, 12), (3, 4, 2, 13)]
        {
            let x = random(&[4, 9, 8], seed);
            let spec = conv(k, 4, 8, groups, stride, seed + 100);
            let y = conv2d(&x, &spec).unwrap();
            let want = conv_oracle(&x, &spec);
            assert!(
                y.max_abs_diff(&want).unwrap() < 1e-5,
                "k={k} g={groups} s={stride}"
            );
        }
    }

    #[test]
    fn grouped_conv_equals_concatenated_independent_convs() {
        let groups = 3;
        let x = random(&[6, 7, 7], 20);
        let spec = conv(3, 6, 9, groups, 2, 21);
        let whole = conv2d(&x, &spec).unwrap();
        let mut parts = Vec::new();
        for g in 0..groups {
            let xs = x.channel_slice(g * 2, 2).unwrap();
            let w = &spec.weight.data()[g * 3 * 2 * 9..(g + 1) * 3 * 2 * 9];
            let b = &spec.bias.as_ref().unwrap().data()[g * 3..(g + 1) * 3];
            let sub = ConvSpec::new(
                3,
                2,
                3,
                1,
                2,
                false,
                Tensor::new(vec![3, 2, 3, 3], w.to_vec()).unwrap(),
                Some(Tensor::new(vec![3], b.to_vec()).unwrap()),
            )
            .unwrap();
            parts.push(conv2d(&xs, &sub).unwrap());
        }
        let joined = Tensor::concat_channels(&parts).unwrap();
        assert!(whole.bit_identical(&joined));
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let x = random(&[3, 4, 4], 5);
        let spec = conv(1, 4, 4, 1, 1, 6);
        match conv2d(&x, &spec) {
            Err(TensorError::Axis {
                axis,
                expected,
                actual,
                ..
            }) => {
                assert_eq!((axis, expected, actual), ("channels", 4, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn too_small_input_is_rejected() {
        let x = random(&[1, 1, 8], 5);
        let mut spec = conv(5, 1, 1, 1, 1, 6);
        spec.padding = 1;
        assert!(matches!(
            conv2d(&x, &spec),
            Err(TensorError::Axis { axis: "height", .. })
        ));
    }

    #[test]
    fn identity_transposed_1x1() {
        let x = random(&[3, 5, 4], 7);
        let spec = ConvSpec::new(
            1,
            3,
            3,
            1,
            1,
            true,
            Tensor::eye(3).reshape(&[3, 3, 1, 1]).unwrap(),
            Some(Tensor::zeros(&[3])),
        )
        .unwrap();
        assert_eq!(conv_transpose2d(&x, &spec).unwrap(), x);
    }

    #[test]
    fn stride_two_transposed_doubles_grid() {
        for k in [3, 5] {
            let spec = conv_t(k, 6, 6, 6, 2, 8);
            let y = conv_transpose2d(&random(&[6, 8, 8], 9), &spec).unwrap();
            assert_eq!(y.shape(), &[6, 16, 16]);
        }
    }

    /// Scatter-add definition: each input pixel spreads its kernel footprint.
    fn conv_t_oracle(x: &Tensor, spec: &ConvSpec) -> Tensor {
        let (c, h, w) = x.chw().unwrap();
        let (k, s, p) = (spec.kernel, spec.stride, spec.padding as isize);
        let (oh, ow) = (h * s, w * s);
        let in_pg = c / spec.groups;
        let out_pg = spec.out_channels / spec.groups;
        let mut acc = vec![0f64; spec.out_channels * oh * ow];
        for oc in 0..spec.out_channels {
            for i in 0..oh * ow {
                acc[oc * oh * ow + i] = spec.bias.as_ref().unwrap().data()[oc] as f64;
            }
        }
        for ic in 0..c {
            let g = ic / in_pg;
            for iy in 0..h {
                for ix in 0..w {
                    let v = x.data()[(ic * h + iy) * w + ix] as f64;
                    for ocg in 0..out_pg {
                        let oc = g * out_pg + ocg;
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (iy * s + ky) as isize - p;
                                let ox = (ix * s + kx) as isize - p;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                let wv = spec.weight.data()[((ic * out_pg + ocg) * k + ky) * k + kx]
                                    as f64;
                                acc[(oc * oh + oy as usize) * ow + ox as usize] += wv * v;
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(
            vec![spec.out_channels, oh, ow],
            acc.iter().map(|&a| a as f32).collect(),
        )
        .unwrap()
    }

    #[test]
    fn transposed_conv_matches_scatter_add() {
        let x = random(&[2, 5, 5], 30);
        for (k, groups) in [(3, 1), (3, 2), (5, 2)] {
            let spec = conv_t(k, 2, 4, groups, 2, 31);
            let y = conv_transpose2d(&x, &spec).unwrap();
            assert!(y.max_abs_diff(&conv_t_oracle(&x, &spec)).unwrap() < 1e-5);
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> for bias-free layers sharing weights
        let x = random(&[3, 10, 10], 40);
        let y = random(&[3, 5, 5], 41);
        let fwd = ConvSpec {
            bias: None,
            ..conv(3, 3, 3, 1, 2, 42)
        };
        // conv weight [out, in, k, k] read as transposed [in', out', k, k]
        let adj = ConvSpec::new(3, 3, 3, 1, 2, true, fwd.weight.clone(), None).unwrap();
        let cx = conv2d(&x, &fwd).unwrap();
        let ty = conv_transpose2d(&y, &adj).unwrap();
        let lhs: f64 = cx
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum();
        let rhs: f64 = x
            .data()
            .iter()
            .zip(ty.data())
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }

    #[test]
    fn batchnorm_identity_on_non_negative_input() {
        let x = random(&[3, 4, 4], 50).map(f32::abs);
        let mut bn = BatchNormSpec::identity(3);
        bn.eps = f32::MIN_POSITIVE;
        assert!(batchnorm_relu(&x, &bn).unwrap().max_abs_diff(&x).unwrap() < 1e-7);
    }

    #[test]
    fn batchnorm_negative_shift_clamps_to_zero() {
        let x = random(&[3, 4, 4], 51).scale(100.0);
        let mut bn = BatchNormSpec::zeroed(3);
        bn.beta = Tensor::full(&[3], -1.0);
        let y = batchnorm_relu(&x, &bn).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batchnorm_matches_scalar_formula() {
        let x = random(&[4, 3, 5], 52).scale(3.0);
        let bn = BatchNormSpec::new(
            random(&[4], 53),
            random(&[4], 54).map(|v| v.abs() + 0.1),
            random(&[4], 55),
            random(&[4], 56),
            1e-3,
        )
        .unwrap();
        let y = batchnorm_relu(&x, &bn).unwrap();
        for c in 0..4 {
            for i in 0..15 {
                let v = x.data()[c * 15 + i];
                let want = (bn.gamma.data()[c] * (v - bn.mean.data()[c])
                    / (bn.var.data()[c] + bn.eps).sqrt()
                    + bn.beta.data()[c])
                    .max(0.0);
                assert!((y.data()[c * 15 + i] - want).abs() < 1e-6);
            }
        }
        assert!(batchnorm_relu(&random(&[5, 3, 5], 1), &bn).is_err());
    }

    #[test]
    fn matmul_cases() {
        let a = random(&[4, 3], 60);
        assert_eq!(matmul(&Tensor::eye(4), &a).unwrap(), a);
        let q = random(&[16, 5], 61);
        let kt = transpose2d(&q).unwrap();
        assert_eq!(matmul(&q, &kt).unwrap().shape(), &[16, 16]);

        let a = Tensor::new(vec![3, 3], vec![1., 2., 3., 4., 5., 6., 7., 8., 9.]).unwrap();
        let b = Tensor::new(vec![3, 3], vec![9., 8., 7., 6., 5., 4., 3., 2., 1.]).unwrap();
        let expected = [30., 24., 18., 84., 69., 54., 138., 114., 90.];
        assert_eq!(matmul(&a, &b).unwrap().data(), &expected);
        assert!(matmul(&a, &random(&[2, 3], 1)).is_err());
    }

    #[test]
    fn softmax_cases() {
        let c = softmax_rows(&Tensor::full(&[2, 5], 3.0)).unwrap();
        assert!(c.data().iter().all(|&v| (v - 0.2).abs() < 1e-7));

        let one_hot = softmax_rows(&Tensor::new(vec![1, 2], vec![1000.0, 0.0]).unwrap()).unwrap();
        assert!((one_hot.data()[0] - 1.0).abs() < 1e-7 && one_hot.data()[1] < 1e-30);

        let a = random(&[4, 4], 70).scale(4.0);
        let s = softmax_rows(&a).unwrap();
        for r in 0..4 {
            let row = &a.data()[r * 4..r * 4 + 4];
            let sum: f64 = row.iter().map(|&v| (v as f64).exp()).sum();
            for (j, &v) in row.iter().enumerate() {
                let want = (v as f64).exp() / sum;
                assert!((s.data()[r * 4 + j] as f64 - want).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn upsample_cases() {
        let c = upsample_bilinear(&Tensor::full(&[2, 3, 3], 1.5), (4, 4)).unwrap();
        assert!(c.data().iter().all(|&v| v == 1.5));
        assert_eq!(
            upsample_bilinear(&random(&[1, 2, 2], 80), (4, 4))
                .unwrap()
                .shape(),
            &[1, 8, 8]
        );

        // ramp f(y, x) = 2y + 3x + 1 is reproduced wherever the source
        // coordinate lies inside the input grid (no border clamping)
        let (h, w, u, v) = (5, 6, 4, 2);
        let ramp = Tensor::from_fn(&[1, h, w], |i| (2 * (i / w) + 3 * (i % w) + 1) as f32);
        let up = upsample_bilinear(&ramp, (u, v)).unwrap();
        let mut checked = 0;
        for oy in 0..h * u {
            let sy = (oy as f64 + 0.5) / u as f64 - 0.5;
            for ox in 0..w * v {
                let sx = (ox as f64 + 0.5) / v as f64 - 0.5;
                if sy < 0.0 || sx < 0.0 || sy > (h - 1) as f64 || sx > (w - 1) as f64 {
                    continue;
                }
                let want = 2.0 * sy + 3.0 * sx + 1.0;
                assert!((up.data()[oy * w * v + ox] as f64 - want).abs() < 1e-6);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn token_reshape_round_trip() {
        let m = random(&[3, 4, 5], 90);
        let t = map_to_tokens(&m).unwrap();
        assert_eq!(t.shape(), &[20, 3]);
        // token (y=1, x=2) holds channel 2 at that pixel
        assert_eq!(t.data()[(5 + 2) * 3 + 2], m.data()[2 * 20 + 5 + 2]);
        assert_eq!(tokens_to_map(&t, 4, 5).unwrap(), m);
    }

    #[test]
    fn ops_are_bit_reproducible_across_thread_counts() {
        let x = random(&[8, 16, 16], 91);
        let spec = conv(3, 8, 8, 1, 1, 92);
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let a = single.install(|| conv2d(&x, &spec).unwrap());
        let b = conv2d(&x, &spec).unwrap();
        assert!(a.bit_identical(&b));
    }
}
