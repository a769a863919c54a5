//! Differentiable bilinear lookup into `[H, W, C]` maps.

use super::{Scalar, Tape, TensorId};

impl<S: Scalar> Tape<S> {
    /// Samples `map: [H, W, C]` at continuous pixel coordinates
    /// `points: [N, 2]` (x, y), returning `[N, C]`.
    ///
    /// Texels addressed outside the map contribute zero, and the result is
    /// differentiable with respect to both the map values and the point
    /// coordinates. Grid value `map[y][x]` sits at coordinate `(x, y)`.
    pub fn bilinear_sample(&mut self, map: TensorId, points: TensorId) -> TensorId {
        let sm = self.shape(map).to_vec();
        let sp = self.shape(points).to_vec();
        assert_eq!(sm.len(), 3, "bilinear_sample: map must be [H, W, C], got {:?}", sm);
        assert!(
            sp.len() == 2 && sp[1] == 2,
            "bilinear_sample: points must be [N, 2], got {:?}",
            sp
        );
        let (h, w, c) = (sm[0], sm[1], sm[2]);
        let n = sp[0];
        let (dm, dp) = (self.arc(map), self.arc(points));

        let texel = |xi: isize, yi: isize, ch: usize| -> S {
            if xi < 0 || yi < 0 || xi >= w as isize || yi >= h as isize {
                S::zero()
            } else {
                dm[(yi as usize * w + xi as usize) * c + ch]
            }
        };

        let mut out = vec![S::zero(); n * c];
        for i in 0..n {
            let x = dp[i * 2];
            let y = dp[i * 2 + 1];
            let x0 = x.floor();
            let y0 = y.floor();
            let fx = x - x0;
            let fy = y - y0;
            let (xi, yi) = (x0.as_f64() as isize, y0.as_f64() as isize);
            let one = S::one();
            for ch in 0..c {
                let v00 = texel(xi, yi, ch);
                let v10 = texel(xi + 1, yi, ch);
                let v01 = texel(xi, yi + 1, ch);
                let v11 = texel(xi + 1, yi + 1, ch);
                out[i * c + ch] = v00 * (one - fx) * (one - fy)
                    + v10 * fx * (one - fy)
                    + v01 * (one - fx) * fy
                    + v11 * fx * fy;
            }
        }

        self.push(vec![n, c], out, move |g, gr| {
            let texel = |xi: isize, yi: isize, ch: usize| -> S {
                if xi < 0 || yi < 0 || xi >= w as isize || yi >= h as isize {
                    S::zero()
                } else {
                    dm[(yi as usize * w + xi as usize) * c + ch]
                }
            };
            let one = S::one();
            {
                let gm = gr.accum(map);
                for i in 0..n {
                    let x = dp[i * 2];
                    let y = dp[i * 2 + 1];
                    let x0 = x.floor();
                    let y0 = y.floor();
                    let fx = x - x0;
                    let fy = y - y0;
                    let (xi, yi) = (x0.as_f64() as isize, y0.as_f64() as isize);
                    let mut scatter = |xx: isize, yy: isize, wgt: S, ch: usize| {
                        if xx >= 0 && yy >= 0 && xx < w as isize && yy < h as isize {
                            gm[(yy as usize * w + xx as usize) * c + ch] += g[i * c + ch] * wgt;
                        }
                    };
                    for ch in 0..c {
                        scatter(xi, yi, (one - fx) * (one - fy), ch);
                        scatter(xi + 1, yi, fx * (one - fy), ch);
                        scatter(xi, yi + 1, (one - fx) * fy, ch);
                        scatter(xi + 1, yi + 1, fx * fy, ch);
                    }
                }
            }
            {
                let gp = gr.accum(points);
                for i in 0..n {
                    let x = dp[i * 2];
                    let y = dp[i * 2 + 1];
                    let x0 = x.floor();
                    let y0 = y.floor();
                    let fx = x - x0;
                    let fy = y - y0;
                    let (xi, yi) = (x0.as_f64() as isize, y0.as_f64() as isize);
                    let mut gx = S::zero();
                    let mut gy = S::zero();
                    for ch in 0..c {
                        let v00 = texel(xi, yi, ch);
                        let v10 = texel(xi + 1, yi, ch);
                        let v01 = texel(xi, yi + 1, ch);
                        let v11 = texel(xi + 1, yi + 1, ch);
                        let go = g[i * c + ch];
                        gx += go * ((v10 - v00) * (one - fy) + (v11 - v01) * fy);
                        gy += go * ((v01 - v00) * (one - fx) + (v11 - v10) * fx);
                    }
                    gp[i * 2] += gx;
                    gp[i * 2 + 1] += gy;
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_point_returns_grid_value() {
        let mut t = Tape::<f64>::new();
        let m = t.constant(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let p = t.constant(&[1, 2], vec![1.0, 0.0]); // (x=1, y=0)
        let y = t.bilinear_sample(m, p);
        assert_eq!(t.data(y), &[2.0]);
    }

    #[test]
    fn midpoint_averages_four_texels() {
        let mut t = Tape::<f64>::new();
        let m = t.constant(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let p = t.constant(&[1, 2], vec![0.5, 0.5]);
        let y = t.bilinear_sample(m, p);
        assert!((t.data(y)[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn far_out_of_range_point_is_zero() {
        let mut t = Tape::<f64>::new();
        let m = t.constant(&[2, 2, 3], vec![1.0; 12]);
        let p = t.constant(&[1, 2], vec![-10.0, -10.0]);
        let y = t.bilinear_sample(m, p);
        assert_eq!(t.data(y), &[0.0, 0.0, 0.0]);
    }
}
