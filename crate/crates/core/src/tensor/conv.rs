//! Spatial operations on `[H, W, C]` feature maps.

use super::{Grads, Scalar, Tape, TensorId};

fn conv_out_extent(n: usize, k: usize, pad: usize, stride: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

fn im2col<S: Scalar>(x: &[S], h: usize, w: usize, c: usize, kh: usize, kw: usize, pad: usize, stride: usize) -> Vec<S> {
    let oh = conv_out_extent(h, kh, pad, stride);
    let ow = conv_out_extent(w, kw, pad, stride);
    let patch = kh * kw * c;
    let mut col = vec![S::zero(); oh * ow * patch];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = (oy * ow + ox) * patch;
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = (iy as usize * w + ix as usize) * c;
                    let dst = row + (ky * kw + kx) * c;
                    col[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
    col
}

impl<S: Scalar> Tape<S> {
    /// 2-D convolution over `x: [H, W, Cin]` with kernel `[kh, kw, Cin, Cout]`,
    /// zero padding of `(k-1)/2`, and the given stride.
    pub fn conv2d(&mut self, x: TensorId, kernel: TensorId, bias: Option<TensorId>, stride: usize) -> TensorId {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(kernel).to_vec();
        assert_eq!(sx.len(), 3, "conv2d: input must be [H, W, C], got {:?}", sx);
        assert_eq!(sk.len(), 4, "conv2d: kernel must be [kh, kw, Cin, Cout], got {:?}", sk);
        let (h, w, cin) = (sx[0], sx[1], sx[2]);
        let (kh, kw, kcin, cout) = (sk[0], sk[1], sk[2], sk[3]);
        assert_eq!(cin, kcin, "conv2d: channel mismatch {:?} vs {:?}", sx, sk);
        assert!(stride == 1 || stride == 2, "conv2d: unsupported stride {stride}");
        let pad = (kh - 1) / 2;
        let oh = conv_out_extent(h, kh, pad, stride);
        let ow = conv_out_extent(w, kw, pad, stride);
        let patch = kh * kw * cin;

        let (dx, dk) = (self.arc(x), self.arc(kernel));
        let col = im2col(&dx, h, w, cin, kh, kw, pad, stride);
        let mut out = vec![S::zero(); oh * ow * cout];
        S::gemm(oh * ow, patch, cout, S::one(), &col, &dk, S::zero(), &mut out);
        if let Some(b) = bias {
            assert_eq!(self.numel(b), cout, "conv2d: bias length mismatch");
            let db = self.data(b);
            for (i, v) in out.iter_mut().enumerate() {
                *v += db[i % cout];
            }
        }

        let id = self.push(vec![oh, ow, cout], out, move |g, gr| {
            // Kernel gradient: col^T @ g, with col rebuilt on demand.
            let col = im2col(&dx, h, w, cin, kh, kw, pad, stride);
            {
                let gk = gr.accum(kernel);
                let mut col_t = vec![S::zero(); patch * oh * ow];
                for i in 0..oh * ow {
                    for j in 0..patch {
                        col_t[j * oh * ow + i] = col[i * patch + j];
                    }
                }
                S::gemm(patch, oh * ow, cout, S::one(), &col_t, g, S::one(), gk);
            }
            // Input gradient: scatter g @ k^T back through the patch map.
            {
                let mut kt = vec![S::zero(); cout * patch];
                for i in 0..patch {
                    for j in 0..cout {
                        kt[j * patch + i] = dk[i * cout + j];
                    }
                }
                let mut dcol = vec![S::zero(); oh * ow * patch];
                S::gemm(oh * ow, cout, patch, S::one(), g, &kt, S::zero(), &mut dcol);
                let gx = gr.accum(x);
                for oy in 0..oh {
                    for ox in 0..ow {
                        let row = (oy * ow + ox) * patch;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let dst = (iy as usize * w + ix as usize) * cin;
                                let src = row + (ky * kw + kx) * cin;
                                for ch in 0..cin {
                                    gx[dst + ch] += dcol[src + ch];
                                }
                            }
                        }
                    }
                }
            }
        });
        // Bias was added in the forward buffer above; its gradient is routed
        // through a zero-copy identity node chained onto the conv.
        if let Some(b) = bias {
            return self.attach_bias_grad(id, b, cout);
        }
        id
    }

    /// Internal: identity node that also routes gradient into a conv bias.
    fn attach_bias_grad(&mut self, y: TensorId, bias: TensorId, cout: usize) -> TensorId {
        let data = self.arc(y);
        let shape = self.shape(y).to_vec();
        self.push_node(
            shape,
            data,
            Some(Box::new(move |g: &[S], gr: &mut Grads<S>| {
                for (d, &gi) in gr.accum(y).iter_mut().zip(g) {
                    *d += gi;
                }
                let gb = gr.accum(bias);
                for (i, &gi) in g.iter().enumerate() {
                    gb[i % cout] += gi;
                }
            })),
            None,
        )
    }

    /// Nearest-neighbor 2x upsampling of `[H, W, C]`.
    pub fn upsample2x(&mut self, x: TensorId) -> TensorId {
        let sx = self.shape(x).to_vec();
        assert_eq!(sx.len(), 3, "upsample2x: input must be [H, W, C], got {:?}", sx);
        let (h, w, c) = (sx[0], sx[1], sx[2]);
        let dx = self.data(x);
        let mut out = vec![S::zero(); 4 * h * w * c];
        let ow = 2 * w;
        for y in 0..h {
            for xcol in 0..w {
                let src = (y * w + xcol) * c;
                for (dy, dxo) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let dst = ((2 * y + dy) * ow + 2 * xcol + dxo) * c;
                    out[dst..dst + c].copy_from_slice(&dx[src..src + c]);
                }
            }
        }
        self.push(vec![2 * h, 2 * w, c], out, move |g, gr| {
            let gx = gr.accum(x);
            for y in 0..h {
                for xcol in 0..w {
                    let dst = (y * w + xcol) * c;
                    for (dy, dxo) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let src = ((2 * y + dy) * ow + 2 * xcol + dxo) * c;
                        for ch in 0..c {
                            gx[dst + ch] += g[src + ch];
                        }
                    }
                }
            }
        })
    }

    /// Concatenates two `[H, W, C]` maps along the channel axis.
    pub fn concat_channels(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(
            sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[1] == sb[1],
            "concat_channels: incompatible shapes {:?} vs {:?}",
            sa,
            sb
        );
        let (h, w, ca, cb) = (sa[0], sa[1], sa[2], sb[2]);
        let (da, db) = (self.data(a), self.data(b));
        let ct = ca + cb;
        let mut out = vec![S::zero(); h * w * ct];
        for i in 0..h * w {
            out[i * ct..i * ct + ca].copy_from_slice(&da[i * ca..(i + 1) * ca]);
            out[i * ct + ca..(i + 1) * ct].copy_from_slice(&db[i * cb..(i + 1) * cb]);
        }
        self.push(vec![h, w, ct], out, move |g, gr| {
            {
                let ga = gr.accum(a);
                for i in 0..h * w {
                    for ch in 0..ca {
                        ga[i * ca + ch] += g[i * ct + ch];
                    }
                }
            }
            {
                let gb = gr.accum(b);
                for i in 0..h * w {
                    for ch in 0..cb {
                        gb[i * cb + ch] += g[i * ct + ca + ch];
                    }
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_1x1_conv_preserves_input() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let k = t.constant(&[1, 1, 1, 1], vec![1.0]);
        let y = t.conv2d(x, k, None, 1);
        assert_eq!(t.data(y), t.data(x));
    }

    #[test]
    fn upsample_single_pixel() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(&[1, 1, 1], vec![1.0]);
        let y = t.upsample2x(x);
        assert_eq!(t.shape(y), &[2, 2, 1]);
        assert_eq!(t.data(y), &[1.0; 4]);
    }

    #[test]
    fn conv_shapes_follow_stride() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(&[8, 8, 2], vec![0.5; 128]);
        let k = t.constant(&[3, 3, 2, 4], vec![0.1; 72]);
        let y1 = t.conv2d(x, k, None, 1);
        assert_eq!(t.shape(y1), &[8, 8, 4]);
        let y2 = t.conv2d(x, k, None, 2);
        assert_eq!(t.shape(y2), &[4, 4, 4]);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_output() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(&[4, 4, 3], vec![0.0; 48]);
        let k = t.constant(&[3, 3, 3, 2], vec![0.3; 54]);
        let b = t.constant(&[2], vec![0.0, 0.0]);
        let y = t.conv2d(x, k, Some(b), 2);
        assert!(t.data(y).iter().all(|&v| v == 0.0));
    }
}
