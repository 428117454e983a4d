//! 2-D convolution and transposed convolution via im2col + GEMM.
//!
//! Layouts follow the channels-first convention: activations `[B, C, H, W]`,
//! convolution weights `[C_out, C_in, k, k]`, transposed-convolution weights
//! `[C_in, C_out, k, k]`. GEMMs run one sample at a time so outputs land
//! directly in their batch slice.

use ndarray::IxDyn;

use super::{Arr, Var};

/// C = alpha * A(m,k) * B(k,n) + beta * C(m,n), row-major packed slices with
/// optional logical transposes.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn conv(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Geometry {
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Geometry {
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho,
            wo,
        }
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfold one sample `[C, H, W]` into `[C*k*k, Ho*Wo]` columns.
fn im2col(x: &[f32], g: Geometry, col: &mut [f32]) {
    debug_assert_eq!(x.len(), g.c * g.h * g.w);
    debug_assert_eq!(col.len(), g.rows() * g.cols());
    let (k, s, p) = (g.k, g.stride, g.pad);
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let out_base = row * g.cols();
                for oy in 0..g.ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    let dst = &mut col[out_base + oy * g.wo..out_base + (oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p as isize;
                        *d = if ix >= 0 && (ix as usize) < g.w {
                            src_row[ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Fold `[C*k*k, Ho*Wo]` columns back onto a `[C, H, W]` sample,
/// accumulating overlaps.
fn col2im_add(col: &[f32], g: Geometry, x: &mut [f32]) {
    debug_assert_eq!(x.len(), g.c * g.h * g.w);
    debug_assert_eq!(col.len(), g.rows() * g.cols());
    let (k, s, p) = (g.k, g.stride, g.pad);
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src_base = row * g.cols();
                for oy in 0..g.ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &col[src_base + oy * g.wo..src_base + (oy + 1) * g.wo];
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn dims4(v: &Var) -> [usize; 4] {
    let s = v.shape();
    assert_eq!(s.len(), 4, "expected a [B, C, H, W] tensor, got {s:?}");
    [s[0], s[1], s[2], s[3]]
}

/// 2-D convolution with square kernel. `w: [C_out, C_in, k, k]`,
/// `b: [C_out]`.
pub fn conv2d(x: &Var, w: &Var, b: &Var, stride: usize, pad: usize) -> Var {
    let [bs, c_in, h, wi] = dims4(x);
    let ws = w.shape();
    assert_eq!(ws.len(), 4);
    assert_eq!(ws[1], c_in, "conv2d weight expects {c_in} input channels");
    assert_eq!(ws[2], ws[3], "square kernels only");
    let (c_out, k) = (ws[0], ws[2]);
    assert!(h + 2 * pad >= k && wi + 2 * pad >= k, "input smaller than kernel");
    let g = Geometry::conv(c_in, h, wi, k, stride, pad);
    let (ho, wo) = (g.ho, g.wo);

    let mut out = Arr::zeros(IxDyn(&[bs, c_out, ho, wo]));
    let mut cols = vec![0.0f32; bs * g.rows() * g.cols()];
    {
        let xv = x.value();
        let xs = xv.as_slice().expect("contiguous input");
        let wv = w.value();
        let wsl = wv.as_slice().expect("contiguous weights");
        let bv = b.value();
        let bsl = bv.as_slice().expect("contiguous bias");
        let os = out.as_slice_mut().unwrap();
        let sample = c_in * h * wi;
        let out_sample = c_out * ho * wo;
        let col_len = g.rows() * g.cols();
        for i in 0..bs {
            let col = &mut cols[i * col_len..(i + 1) * col_len];
            im2col(&xs[i * sample..(i + 1) * sample], g, col);
            let dst = &mut os[i * out_sample..(i + 1) * out_sample];
            gemm(c_out, g.rows(), g.cols(), 1.0, wsl, false, col, false, 0.0, dst);
            for (co, chunk) in dst.chunks_mut(ho * wo).enumerate() {
                let bias = bsl[co];
                for v in chunk {
                    *v += bias;
                }
            }
        }
    }

    let xc = x.clone();
    let wc = w.clone();
    Var::from_op(
        out,
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(move |gout, needs| {
            let gs = gout.as_slice().unwrap();
            let out_sample = c_out * ho * wo;
            let col_len = g.rows() * g.cols();

            let grad_b = needs[2].then(|| {
                let mut gb = vec![0.0f64; c_out];
                for i in 0..bs {
                    for co in 0..c_out {
                        let base = i * out_sample + co * ho * wo;
                        gb[co] += gs[base..base + ho * wo]
                            .iter()
                            .map(|&v| v as f64)
                            .sum::<f64>();
                    }
                }
                Arr::from_shape_vec(IxDyn(&[c_out]), gb.iter().map(|&v| v as f32).collect())
                    .unwrap()
            });

            let grad_w = needs[1].then(|| {
                let mut gw = vec![0.0f32; c_out * g.rows()];
                for i in 0..bs {
                    let col = &cols[i * col_len..(i + 1) * col_len];
                    // [c_out, n] x [n, rows] accumulated
                    gemm(
                        c_out,
                        g.cols(),
                        g.rows(),
                        1.0,
                        &gs[i * out_sample..(i + 1) * out_sample],
                        false,
                        col,
                        true,
                        1.0,
                        &mut gw,
                    );
                }
                Arr::from_shape_vec(IxDyn(&[c_out, c_in, k, k]), gw).unwrap()
            });

            let grad_x = needs[0].then(|| {
                let wv = wc.value();
                let wsl = wv.as_slice().unwrap();
                let mut gx = Arr::zeros(IxDyn(&[bs, c_in, h, wi]));
                let gxs = gx.as_slice_mut().unwrap();
                let sample = c_in * h * wi;
                let mut gcol = vec![0.0f32; col_len];
                for i in 0..bs {
                    // [rows, c_out] x [c_out, n]
                    gemm(
                        g.rows(),
                        c_out,
                        g.cols(),
                        1.0,
                        wsl,
                        true,
                        &gs[i * out_sample..(i + 1) * out_sample],
                        false,
                        0.0,
                        &mut gcol,
                    );
                    col2im_add(&gcol, g, &mut gxs[i * sample..(i + 1) * sample]);
                }
                let _ = &xc; // keeps the input alive for the graph walk
                gx
            });

            vec![grad_x, grad_w, grad_b]
        }),
    )
}

/// 2-D transposed convolution with square kernel. `w: [C_in, C_out, k, k]`,
/// `b: [C_out]`. Output spatial size is `(H-1)*stride - 2*pad + k`.
pub fn conv_transpose2d(x: &Var, w: &Var, b: &Var, stride: usize, pad: usize) -> Var {
    let [bs, c_in, h, wi] = dims4(x);
    let ws = w.shape();
    assert_eq!(ws.len(), 4);
    assert_eq!(ws[0], c_in, "conv_transpose2d weight expects {c_in} input channels");
    assert_eq!(ws[2], ws[3], "square kernels only");
    let (c_out, k) = (ws[1], ws[2]);
    let ho = (h - 1) * stride + k - 2 * pad;
    let wo = (wi - 1) * stride + k - 2 * pad;
    // the equivalent forward convolution maps [c_out, ho, wo] -> [c_in, h, wi]
    let g = Geometry::conv(c_out, ho, wo, k, stride, pad);
    debug_assert_eq!(g.ho, h);
    debug_assert_eq!(g.wo, wi);

    let mut out = Arr::zeros(IxDyn(&[bs, c_out, ho, wo]));
    {
        let xv = x.value();
        let xs = xv.as_slice().expect("contiguous input");
        let wv = w.value();
        let wsl = wv.as_slice().expect("contiguous weights");
        let bv = b.value();
        let bsl = bv.as_slice().expect("contiguous bias");
        let os = out.as_slice_mut().unwrap();
        let sample = c_in * h * wi;
        let out_sample = c_out * ho * wo;
        let mut col = vec![0.0f32; g.rows() * g.cols()];
        for i in 0..bs {
            // col[rows, n_in] = W^T[rows, c_in] x x[c_in, n_in]
            gemm(
                g.rows(),
                c_in,
                g.cols(),
                1.0,
                wsl,
                true,
                &xs[i * sample..(i + 1) * sample],
                false,
                0.0,
                &mut col,
            );
            let dst = &mut os[i * out_sample..(i + 1) * out_sample];
            col2im_add(&col, g, dst);
            for (co, chunk) in dst.chunks_mut(ho * wo).enumerate() {
                let bias = bsl[co];
                for v in chunk {
                    *v += bias;
                }
            }
        }
    }

    let xc = x.clone();
    let wc = w.clone();
    Var::from_op(
        out,
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(move |gout, needs| {
            let gs = gout.as_slice().unwrap();
            let out_sample = c_out * ho * wo;
            let sample = c_in * h * wi;
            let col_len = g.rows() * g.cols();

            let grad_b = needs[2].then(|| {
                let mut gb = vec![0.0f64; c_out];
                for i in 0..bs {
                    for co in 0..c_out {
                        let base = i * out_sample + co * ho * wo;
                        gb[co] += gs[base..base + ho * wo]
                            .iter()
                            .map(|&v| v as f64)
                            .sum::<f64>();
                    }
                }
                Arr::from_shape_vec(IxDyn(&[c_out]), gb.iter().map(|&v| v as f32).collect())
                    .unwrap()
            });

            let needs_x = needs[0];
            let needs_w = needs[1];
            let mut grad_x = needs_x.then(|| Arr::zeros(IxDyn(&[bs, c_in, h, wi])));
            let mut grad_w = needs_w.then(|| vec![0.0f32; c_in * g.rows()]);
            if needs_x || needs_w {
                let xv = xc.value();
                let xs = xv.as_slice().unwrap();
                let wv = wc.value();
                let wsl = wv.as_slice().unwrap();
                let mut col = vec![0.0f32; col_len];
                for i in 0..bs {
                    // unfolding the output gradient with the conv geometry
                    // serves both parameter and input gradients
                    im2col(&gs[i * out_sample..(i + 1) * out_sample], g, &mut col);
                    if let Some(gx) = grad_x.as_mut() {
                        let gxs = gx.as_slice_mut().unwrap();
                        // [c_in, rows] x [rows, n_in]
                        gemm(
                            c_in,
                            g.rows(),
                            g.cols(),
                            1.0,
                            wsl,
                            false,
                            &col,
                            false,
                            0.0,
                            &mut gxs[i * sample..(i + 1) * sample],
                        );
                    }
                    if let Some(gw) = grad_w.as_mut() {
                        // [c_in, n_in] x [n_in, rows] accumulated
                        gemm(
                            c_in,
                            g.cols(),
                            g.rows(),
                            1.0,
                            &xs[i * sample..(i + 1) * sample],
                            false,
                            &col,
                            true,
                            1.0,
                            gw,
                        );
                    }
                }
            }
            vec![
                grad_x,
                grad_w.map(|gw| Arr::from_shape_vec(IxDyn(&[c_in, c_out, k, k]), gw).unwrap()),
                grad_b,
            ]
        }),
    )
}
