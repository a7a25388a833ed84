//! The layers of the fixed network: 2D convolution (circular width padding,
//! zero height padding), 2x2 max pooling, and a fully connected layer.

use super::{Param, ShapeError, Tensor};

/// Same-size 2D cross-correlation, stride 1. Width padding is cyclic since
/// the input is a 360-degree panorama; height padding is zero.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    out_channels: usize,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
}

impl Conv2d {
    pub fn new(out_channels: usize, in_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        assert!(kernel_h % 2 == 1 && kernel_w % 2 == 1, "kernels must be odd-sized");
        Self {
            weight: Param::zeros(&[out_channels, in_channels, kernel_h, kernel_w]),
            bias: Param::zeros(&[out_channels]),
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
        }
    }

    pub fn output_shape(&self, input_shape: &[usize]) -> Vec<usize> {
        vec![self.out_channels, input_shape[1], input_shape[2]]
    }

    /// Copy of the input with materialized padding: zero rows above/below,
    /// wrapped columns left/right.
    fn pad(&self, input: &Tensor) -> (Vec<f64>, usize, usize) {
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (ph, pw) = (self.kernel_h / 2, self.kernel_w / 2);
        let (hp, wp) = (h + 2 * ph, w + 2 * pw);
        let mut padded = vec![0.0f64; c * hp * wp];
        for ic in 0..c {
            for y in 0..h {
                let src = &input.data[(ic * h + y) * w..(ic * h + y + 1) * w];
                let dst = &mut padded[(ic * hp + y + ph) * wp..(ic * hp + y + ph + 1) * wp];
                dst[pw..pw + w].copy_from_slice(src);
                for x in 0..pw {
                    dst[x] = src[(x + w - pw) % w];
                    dst[pw + w + x] = src[x % w];
                }
            }
        }
        (padded, hp, wp)
    }

    fn check(&self, input: &Tensor) -> Result<(), ShapeError> {
        let s = input.shape();
        if s.len() != 3 || s[0] != self.in_channels {
            return Err(ShapeError::Mismatch {
                expected: vec![self.in_channels, s.get(1).copied().unwrap_or(0), s.get(2).copied().unwrap_or(0)],
                got: s.to_vec(),
            });
        }
        assert!(s[2] >= self.kernel_w, "input width must cover the kernel");
        Ok(())
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor, ShapeError> {
        self.check(input)?;
        let (h, w) = (input.shape()[1], input.shape()[2]);
        let (padded, _hp, wp) = self.pad(input);
        let (kh, kw) = (self.kernel_h, self.kernel_w);
        let mut out = vec![0.0f64; self.out_channels * h * w];
        for oc in 0..self.out_channels {
            let w_oc = &self.weight.value[oc * self.in_channels * kh * kw..];
            for oy in 0..h {
                let row = &mut out[(oc * h + oy) * w..(oc * h + oy + 1) * w];
                row.iter_mut().for_each(|v| *v = self.bias.value[oc]);
                for ic in 0..self.in_channels {
                    for ky in 0..kh {
                        let in_row = &padded[(ic * (h + kh - 1) + oy + ky) * wp..];
                        let w_row = &w_oc[(ic * kh + ky) * kw..(ic * kh + ky) * kw + kw];
                        for (kx, &wv) in w_row.iter().enumerate() {
                            let src = &in_row[kx..kx + w];
                            for (o, s) in row.iter_mut().zip(src) {
                                *o += wv * s;
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::from_vec(&[self.out_channels, h, w], out);
        out.assert_finite();
        Ok(out)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor, ShapeError> {
        self.check(input)?;
        let (h, w) = (input.shape()[1], input.shape()[2]);
        grad_out.check_shape(&[self.out_channels, h, w])?;
        let (padded, hp, wp) = self.pad(input);
        let (kh, kw) = (self.kernel_h, self.kernel_w);
        let (ph, pw) = (kh / 2, kw / 2);

        let mut grad_padded = vec![0.0f64; self.in_channels * hp * wp];
        for oc in 0..self.out_channels {
            let w_base = oc * self.in_channels * kh * kw;
            for oy in 0..h {
                let g_row = &grad_out.data[(oc * h + oy) * w..(oc * h + oy + 1) * w];
                self.bias.grad[oc] += g_row.iter().sum::<f64>();
                for ic in 0..self.in_channels {
                    for ky in 0..kh {
                        let in_row = &padded[(ic * hp + oy + ky) * wp..];
                        let gp_row = &mut grad_padded[(ic * hp + oy + ky) * wp..(ic * hp + oy + ky + 1) * wp];
                        for kx in 0..kw {
                            let widx = w_base + (ic * kh + ky) * kw + kx;
                            let wv = self.weight.value[widx];
                            let mut wg = 0.0;
                            for (ox, &g) in g_row.iter().enumerate() {
                                wg += g * in_row[kx + ox];
                                gp_row[kx + ox] += g * wv;
                            }
                            self.weight.grad[widx] += wg;
                        }
                    }
                }
            }
        }

        // Fold the padded gradient back: wrapped columns accumulate into
        // their source column, zero-padded rows are discarded.
        let mut grad_in = vec![0.0f64; self.in_channels * h * w];
        for ic in 0..self.in_channels {
            for y in 0..h {
                let gp_row = &grad_padded[(ic * hp + y + ph) * wp..(ic * hp + y + ph + 1) * wp];
                let gi_row = &mut grad_in[(ic * h + y) * w..(ic * h + y + 1) * w];
                for (j, &g) in gp_row.iter().enumerate() {
                    gi_row[(j as isize - pw as isize).rem_euclid(w as isize) as usize] += g;
                }
            }
        }
        Ok(Tensor::from_vec(&[self.in_channels, h, w], grad_in))
    }
}

/// 2x2 max pooling with stride 2. Odd extents are padded by edge
/// replication; gradient routes to the argmax, first index on ties.
#[derive(Debug, Clone, Copy, Default)]
pub struct MaxPool2;

impl MaxPool2 {
    pub fn output_shape(input_shape: &[usize]) -> Vec<usize> {
        vec![input_shape[0], input_shape[1].div_ceil(2), input_shape[2].div_ceil(2)]
    }

    /// Returns the pooled tensor and, per output element, the flat input
    /// index that produced it.
    pub fn forward(&self, input: &Tensor) -> (Tensor, Vec<u32>) {
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ic in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0u32;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let iy = (2 * oy + dy).min(h - 1);
                            let ix = (2 * ox + dx).min(w - 1);
                            let idx = (ic * h + iy) * w + ix;
                            let v = input.data[idx];
                            if v > best {
                                best = v;
                                best_idx = idx as u32;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
        (Tensor::from_vec(&[c, oh, ow], out), argmax)
    }

    pub fn backward(&self, input_shape: &[usize], argmax: &[u32], grad_out: &Tensor) -> Tensor {
        let mut grad_in = vec![0.0f64; input_shape.iter().product()];
        for (&idx, &g) in argmax.iter().zip(&grad_out.data) {
            grad_in[idx as usize] += g;
        }
        Tensor::from_vec(input_shape, grad_in)
    }
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    out_dim: usize,
    in_dim: usize,
}

impl Dense {
    pub fn new(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Param::zeros(&[out_dim, in_dim]),
            bias: Param::zeros(&[out_dim]),
            out_dim,
            in_dim,
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor, ShapeError> {
        input.check_shape(&[self.in_dim])?;
        let mut out = Vec::with_capacity(self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.weight.value[o * self.in_dim..(o + 1) * self.in_dim];
            let dot: f64 = row.iter().zip(&input.data).map(|(w, x)| w * x).sum();
            out.push(dot + self.bias.value[o]);
        }
        let out = Tensor::from_vec(&[self.out_dim], out);
        out.assert_finite();
        Ok(out)
    }

    pub fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor, ShapeError> {
        input.check_shape(&[self.in_dim])?;
        grad_out.check_shape(&[self.out_dim])?;
        let mut grad_in = vec![0.0f64; self.in_dim];
        for o in 0..self.out_dim {
            let g = grad_out.data[o];
            self.bias.grad[o] += g;
            let w_row = &self.weight.value[o * self.in_dim..(o + 1) * self.in_dim];
            let gw_row = &mut self.weight.grad[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                gw_row[i] += g * input.data[i];
                grad_in[i] += g * w_row[i];
            }
        }
        Ok(Tensor::from_vec(&[self.in_dim], grad_in))
    }
}
