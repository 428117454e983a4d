//! Batch and instance normalization with affine parameters.

use ndarray::{Axis, IxDyn};
use std::cell::RefCell;
use std::rc::Rc;

use super::{Arr, Var};

/// Which statistics a normalization layer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Per-feature statistics over the whole batch, with running averages
    /// for inference.
    Batch,
    /// Per-sample statistics; identical in training and inference.
    Instance,
}

/// Mutable non-trainable per-channel state (running mean/variance).
pub type SharedStats = Rc<RefCell<Arr>>;

pub fn shared_stats(init: Arr) -> SharedStats {
    Rc::new(RefCell::new(init))
}

const BN_MOMENTUM: f32 = 0.1;

/// Batch normalization over `[B, C, H, W]`, normalizing each channel across
/// batch and spatial axes. In training mode the running statistics are
/// updated in place; in inference mode they replace the batch statistics.
pub fn batch_norm(
    x: &Var,
    gamma: &Var,
    beta: &Var,
    running_mean: &SharedStats,
    running_var: &SharedStats,
    training: bool,
    eps: f32,
) -> Var {
    let shape = x.shape();
    assert_eq!(shape.len(), 4, "batch_norm expects [B, C, H, W]");
    let (bs, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let m = bs * h * w;

    let (mean, inv_std) = if training {
        let xv = x.value();
        let mut mean = vec![0.0f32; c];
        let mut inv_std = vec![0.0f32; c];
        for ci in 0..c {
            let plane = xv.index_axis(Axis(1), ci);
            let mu: f64 = plane.iter().map(|&v| v as f64).sum::<f64>() / m as f64;
            let var: f64 =
                plane.iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>() / m as f64;
            mean[ci] = mu as f32;
            inv_std[ci] = 1.0 / ((var as f32) + eps).sqrt();
        }
        {
            let mut rm = running_mean.borrow_mut();
            let mut rv = running_var.borrow_mut();
            let unbias = if m > 1 { m as f32 / (m as f32 - 1.0) } else { 1.0 };
            for ci in 0..c {
                let var = 1.0 / (inv_std[ci] * inv_std[ci]) - eps;
                rm[[ci]] = (1.0 - BN_MOMENTUM) * rm[[ci]] + BN_MOMENTUM * mean[ci];
                rv[[ci]] = (1.0 - BN_MOMENTUM) * rv[[ci]] + BN_MOMENTUM * var * unbias;
            }
        }
        (mean, inv_std)
    } else {
        let rm = running_mean.borrow();
        let rv = running_var.borrow();
        let mean: Vec<f32> = (0..c).map(|ci| rm[[ci]]).collect();
        let inv_std: Vec<f32> = (0..c).map(|ci| 1.0 / (rv[[ci]] + eps).sqrt()).collect();
        (mean, inv_std)
    };

    let mut xhat = x.value_clone();
    for ci in 0..c {
        let (mu, is) = (mean[ci], inv_std[ci]);
        xhat.index_axis_mut(Axis(1), ci)
            .mapv_inplace(|v| (v - mu) * is);
    }
    let mut value = xhat.clone();
    {
        let gv = gamma.value();
        let bv = beta.value();
        for ci in 0..c {
            let (ga, be) = (gv[[ci]], bv[[ci]]);
            value
                .index_axis_mut(Axis(1), ci)
                .mapv_inplace(|v| ga * v + be);
        }
    }

    let gammac = gamma.clone();
    Var::from_op(
        value,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, needs| {
            let gv = gammac.value();
            let grad_beta = needs[2].then(|| {
                let mut gb = vec![0.0f32; c];
                for ci in 0..c {
                    gb[ci] = g
                        .index_axis(Axis(1), ci)
                        .iter()
                        .map(|&v| v as f64)
                        .sum::<f64>() as f32;
                }
                Arr::from_shape_vec(IxDyn(&[c]), gb).unwrap()
            });
            let grad_gamma = needs[1].then(|| {
                let mut gg = vec![0.0f32; c];
                for ci in 0..c {
                    gg[ci] = g
                        .index_axis(Axis(1), ci)
                        .iter()
                        .zip(xhat.index_axis(Axis(1), ci).iter())
                        .map(|(&gi, &xi)| gi as f64 * xi as f64)
                        .sum::<f64>() as f32;
                }
                Arr::from_shape_vec(IxDyn(&[c]), gg).unwrap()
            });
            let grad_x = needs[0].then(|| {
                let mut gx = g.clone();
                for ci in 0..c {
                    let scale = gv[[ci]] * inv_std[ci];
                    if training {
                        let gplane = g.index_axis(Axis(1), ci);
                        let xplane = xhat.index_axis(Axis(1), ci);
                        let sum_g: f64 = gplane.iter().map(|&v| v as f64).sum();
                        let sum_gx: f64 = gplane
                            .iter()
                            .zip(xplane.iter())
                            .map(|(&gi, &xi)| gi as f64 * xi as f64)
                            .sum();
                        let mean_g = (sum_g / m as f64) as f32;
                        let mean_gx = (sum_gx / m as f64) as f32;
                        let mut out_plane = gx.index_axis_mut(Axis(1), ci);
                        ndarray::Zip::from(&mut out_plane).and(&xplane).for_each(
                            |o, &xh| {
                                *o = scale * (*o - mean_g - xh * mean_gx);
                            },
                        );
                    } else {
                        gx.index_axis_mut(Axis(1), ci).mapv_inplace(|v| v * scale);
                    }
                }
                gx
            });
            vec![grad_x, grad_gamma, grad_beta]
        }),
    )
}

/// Instance normalization over `[B, C, H, W]`: each (sample, channel) plane
/// is normalized by its own spatial statistics. No running state.
pub fn instance_norm(x: &Var, gamma: &Var, beta: &Var, eps: f32) -> Var {
    let shape = x.shape();
    assert_eq!(shape.len(), 4, "instance_norm expects [B, C, H, W]");
    let (bs, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let m = h * w;
    assert!(m > 1, "instance_norm needs more than one spatial element");

    let mut inv_std = vec![0.0f32; bs * c];
    let mut xhat = x.value_clone();
    {
        for bi in 0..bs {
            for ci in 0..c {
                let plane = xhat.slice_mut(ndarray::s![bi, ci, .., ..]);
                let mu: f64 = plane.iter().map(|&v| v as f64).sum::<f64>() / m as f64;
                let var: f64 =
                    plane.iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>() / m as f64;
                let is = 1.0 / ((var as f32) + eps).sqrt();
                inv_std[bi * c + ci] = is;
                let mu = mu as f32;
                let mut plane = plane;
                plane.mapv_inplace(|v| (v - mu) * is);
            }
        }
    }
    let mut value = xhat.clone();
    {
        let gv = gamma.value();
        let bv = beta.value();
        for ci in 0..c {
            let (ga, be) = (gv[[ci]], bv[[ci]]);
            value
                .index_axis_mut(Axis(1), ci)
                .mapv_inplace(|v| ga * v + be);
        }
    }

    let gammac = gamma.clone();
    Var::from_op(
        value,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, needs| {
            let gv = gammac.value();
            let grad_beta = needs[2].then(|| {
                let mut gb = vec![0.0f32; c];
                for ci in 0..c {
                    gb[ci] = g
                        .index_axis(Axis(1), ci)
                        .iter()
                        .map(|&v| v as f64)
                        .sum::<f64>() as f32;
                }
                Arr::from_shape_vec(IxDyn(&[c]), gb).unwrap()
            });
            let grad_gamma = needs[1].then(|| {
                let mut gg = vec![0.0f32; c];
                for ci in 0..c {
                    gg[ci] = g
                        .index_axis(Axis(1), ci)
                        .iter()
                        .zip(xhat.index_axis(Axis(1), ci).iter())
                        .map(|(&gi, &xi)| gi as f64 * xi as f64)
                        .sum::<f64>() as f32;
                }
                Arr::from_shape_vec(IxDyn(&[c]), gg).unwrap()
            });
            let grad_x = needs[0].then(|| {
                let mut gx = g.clone();
                for bi in 0..bs {
                    for ci in 0..c {
                        let scale = gv[[ci]] * inv_std[bi * c + ci];
                        let gplane = g.slice(ndarray::s![bi, ci, .., ..]);
                        let xplane = xhat.slice(ndarray::s![bi, ci, .., ..]);
                        let sum_g: f64 = gplane.iter().map(|&v| v as f64).sum();
                        let sum_gx: f64 = gplane
                            .iter()
                            .zip(xplane.iter())
                            .map(|(&gi, &xi)| gi as f64 * xi as f64)
                            .sum();
                        let mean_g = (sum_g / m as f64) as f32;
                        let mean_gx = (sum_gx / m as f64) as f32;
                        let mut out_plane = gx.slice_mut(ndarray::s![bi, ci, .., ..]);
                        ndarray::Zip::from(&mut out_plane).and(&xplane).for_each(
                            |o, &xh| {
                                *o = scale * (*o - mean_g - xh * mean_gx);
                            },
                        );
                    }
                }
                gx
            });
            vec![grad_x, grad_gamma, grad_beta]
        }),
    )
}
