//! Elementwise operations, channel concatenation and scalar reductions.

use ndarray::{ArrayD, Axis, IxDyn, Slice};

use super::{Arr, Var};

fn same_shape(a: &Var, b: &Var, what: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{what}: operand shapes must match"
    );
}

/// Elementwise sum of two equally shaped tensors.
pub fn add(a: &Var, b: &Var) -> Var {
    same_shape(a, b, "add");
    let value = &*a.value() + &*b.value();
    Var::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|g, needs| {
            vec![
                needs[0].then(|| g.clone()),
                needs[1].then(|| g.clone()),
            ]
        }),
    )
}

/// Elementwise difference `a - b`.
pub fn sub(a: &Var, b: &Var) -> Var {
    same_shape(a, b, "sub");
    let value = &*a.value() - &*b.value();
    Var::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|g, needs| {
            vec![needs[0].then(|| g.clone()), needs[1].then(|| g.mapv(|x| -x))]
        }),
    )
}

/// Multiply by a compile-time constant.
pub fn mul_scalar(x: &Var, c: f32) -> Var {
    let value = x.value().mapv(|v| v * c);
    let out = Var::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, needs| vec![needs[0].then(|| g.mapv(|v| v * c))]),
    );
    if x.shape().is_empty() || x.value().len() == 1 {
        out.set_precise(x.scalar_f64() * c as f64);
    }
    out
}

/// LeakyReLU with the given negative slope.
pub fn leaky_relu(x: &Var, slope: f32) -> Var {
    let value = x.value().mapv(|v| if v > 0.0 { v } else { slope * v });
    let xc = x.clone();
    Var::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let xv = xc.value();
                let mut out = g.clone();
                out.zip_mut_with(&xv, |gv, &v| {
                    if v <= 0.0 {
                        *gv *= slope;
                    }
                });
                out
            })]
        }),
    )
}

pub fn relu(x: &Var) -> Var {
    leaky_relu(x, 0.0)
}

pub fn tanh(x: &Var) -> Var {
    let value = x.value().mapv(f32::tanh);
    let y = value.clone();
    Var::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let mut out = g.clone();
                out.zip_mut_with(&y, |gv, &yv| *gv *= 1.0 - yv * yv);
                out
            })]
        }),
    )
}

pub fn sigmoid(x: &Var) -> Var {
    let value = x.value().mapv(|v| 1.0 / (1.0 + (-v).exp()));
    let y = value.clone();
    Var::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let mut out = g.clone();
                out.zip_mut_with(&y, |gv, &yv| *gv *= yv * (1.0 - yv));
                out
            })]
        }),
    )
}

/// Concatenate `[B, C_i, H, W]` tensors along the channel axis.
pub fn concat_channels(inputs: &[&Var]) -> Var {
    assert!(!inputs.is_empty());
    let views: Vec<_> = inputs.iter().map(|v| v.value_clone()).collect();
    let view_refs: Vec<_> = views.iter().map(|a| a.view()).collect();
    let value = ndarray::concatenate(Axis(1), &view_refs).expect("concat shape mismatch");
    let channels: Vec<usize> = inputs.iter().map(|v| v.shape()[1]).collect();
    Var::from_op(
        value,
        inputs.iter().map(|v| (*v).clone()).collect(),
        Box::new(move |g, needs| {
            let mut grads = Vec::with_capacity(channels.len());
            let mut start = 0isize;
            for (i, &c) in channels.iter().enumerate() {
                let end = start + c as isize;
                grads.push(needs[i].then(|| {
                    g.slice_axis(Axis(1), Slice::new(start, Some(end), 1))
                        .to_owned()
                }));
                start = end;
            }
            grads
        }),
    )
}

/// Channel slice `x[:, from..to]`.
pub fn slice_channels(x: &Var, from: usize, to: usize) -> Var {
    let shape = x.shape();
    assert!(to <= shape[1] && from < to, "channel slice out of range");
    let value = x
        .value()
        .slice_axis(Axis(1), Slice::new(from as isize, Some(to as isize), 1))
        .to_owned();
    let full_shape = shape.clone();
    Var::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let mut out = ArrayD::<f32>::zeros(IxDyn(&full_shape));
                out.slice_axis_mut(
                    Axis(1),
                    Slice::new(from as isize, Some(to as isize), 1),
                )
                .assign(g);
                out
            })]
        }),
    )
}

/// Mean absolute difference, `mean(|a - b|)`, accumulated in f64.
pub fn l1_mean(a: &Var, b: &Var) -> Var {
    same_shape(a, b, "l1_mean");
    let (sum, n) = {
        let av = a.value();
        let bv = b.value();
        let mut s = 0.0f64;
        for (&x, &y) in av.iter().zip(bv.iter()) {
            s += (x as f64 - y as f64).abs();
        }
        (s, av.len())
    };
    let mean = sum / n as f64;
    let ac = a.clone();
    let bc = b.clone();
    let out = Var::from_op(
        Arr::from_elem(IxDyn(&[]), mean as f32),
        vec![a.clone(), b.clone()],
        Box::new(move |g, needs| {
            let scale = g.iter().next().copied().unwrap() / n as f32;
            let av = ac.value();
            let bv = bc.value();
            let sign = |x: f32, y: f32| {
                if x > y {
                    scale
                } else if x < y {
                    -scale
                } else {
                    0.0
                }
            };
            let ga = needs[0].then(|| {
                let mut out = Arr::zeros(av.raw_dim());
                ndarray::Zip::from(&mut out)
                    .and(&*av)
                    .and(&*bv)
                    .for_each(|o, &x, &y| *o = sign(x, y));
                out
            });
            let gb = needs[1].then(|| {
                let mut out = Arr::zeros(av.raw_dim());
                ndarray::Zip::from(&mut out)
                    .and(&*av)
                    .and(&*bv)
                    .for_each(|o, &x, &y| *o = -sign(x, y));
                out
            });
            vec![ga, gb]
        }),
    );
    out.set_precise(mean);
    out
}

/// Weighted mean absolute difference: `mean(|a - b| * w)` with `w` a
/// `[B, 1, H, W]` map broadcast over channels (or a same-shape tensor).
pub fn weighted_l1_mean(a: &Var, b: &Var, weights: &Arr) -> Var {
    same_shape(a, b, "weighted_l1_mean");
    let shape = a.shape();
    let broadcast_channels = weights.shape() != shape.as_slice();
    if broadcast_channels {
        assert_eq!(weights.shape()[0], shape[0], "weight batch mismatch");
        assert_eq!(weights.shape()[1], 1, "weight map must have one channel");
        assert_eq!(&weights.shape()[2..], &shape[2..], "weight spatial mismatch");
    }
    let w = if broadcast_channels {
        weights
            .broadcast(IxDyn(&shape))
            .expect("weight broadcast failed")
            .to_owned()
    } else {
        weights.clone()
    };
    let (sum, n) = {
        let av = a.value();
        let bv = b.value();
        let mut s = 0.0f64;
        for ((&x, &y), &wi) in av.iter().zip(bv.iter()).zip(w.iter()) {
            s += (x as f64 - y as f64).abs() * wi as f64;
        }
        (s, av.len())
    };
    let mean = sum / n as f64;
    let ac = a.clone();
    let bc = b.clone();
    let out = Var::from_op(
        Arr::from_elem(IxDyn(&[]), mean as f32),
        vec![a.clone(), b.clone()],
        Box::new(move |g, needs| {
            let scale = g.iter().next().copied().unwrap() / n as f32;
            let av = ac.value();
            let bv = bc.value();
            let signed = |x: f32, y: f32, wi: f32| {
                if x > y {
                    scale * wi
                } else if x < y {
                    -scale * wi
                } else {
                    0.0
                }
            };
            let ga = needs[0].then(|| {
                let mut out = Arr::zeros(av.raw_dim());
                ndarray::Zip::from(&mut out)
                    .and(&*av)
                    .and(&*bv)
                    .and(&w)
                    .for_each(|o, &x, &y, &wi| *o = signed(x, y, wi));
                out
            });
            let gb = needs[1].then(|| {
                let mut out = Arr::zeros(av.raw_dim());
                ndarray::Zip::from(&mut out)
                    .and(&*av)
                    .and(&*bv)
                    .and(&w)
                    .for_each(|o, &x, &y, &wi| *o = -signed(x, y, wi));
                out
            });
            vec![ga, gb]
        }),
    );
    out.set_precise(mean);
    out
}

/// Log terms saturate at this bound instead of overflowing to infinity,
/// matching the common BCE implementation convention.
const LOG_FLOOR: f64 = -100.0;

/// Binary cross-entropy against a constant target, averaged over all
/// elements: `mean(-[t*ln(d) + (1-t)*ln(1-d)])`, accumulated in f64.
pub fn bce_mean(d: &Var, target: f32) -> Var {
    let t = target as f64;
    let (sum, n) = {
        let dv = d.value();
        let mut s = 0.0f64;
        for &v in dv.iter() {
            let v = v as f64;
            let term = t * v.ln().max(LOG_FLOOR) + (1.0 - t) * (1.0 - v).ln().max(LOG_FLOOR);
            s -= term;
        }
        (s, dv.len())
    };
    let mean = sum / n as f64;
    let dc = d.clone();
    let out = Var::from_op(
        Arr::from_elem(IxDyn(&[]), mean as f32),
        vec![d.clone()],
        Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let scale = g.iter().next().copied().unwrap() / n as f32;
                let dv = dc.value();
                // clamp the derivative where the log term has saturated
                dv.mapv(|v| {
                    let v = v.clamp(1e-7, 1.0 - 1e-7);
                    scale * (-(target / v) + (1.0 - target) / (1.0 - v))
                })
            })]
        }),
    );
    out.set_precise(mean);
    out
}

/// Weighted sum of scalar terms, f64-precise. The backbone of loss
/// aggregation.
pub fn weighted_sum(terms: &[(Var, f64)]) -> Var {
    assert!(!terms.is_empty());
    let total: f64 = terms.iter().map(|(v, w)| v.scalar_f64() * w).sum();
    let weights: Vec<f64> = terms.iter().map(|&(_, w)| w).collect();
    let shapes: Vec<Vec<usize>> = terms.iter().map(|(v, _)| v.shape()).collect();
    let out = Var::from_op(
        Arr::from_elem(IxDyn(&[]), total as f32),
        terms.iter().map(|(v, _)| v.clone()).collect(),
        Box::new(move |g, needs| {
            let gs = g.iter().next().copied().unwrap();
            weights
                .iter()
                .zip(&shapes)
                .enumerate()
                .map(|(i, (&w, shape))| {
                    needs[i].then(|| Arr::from_elem(IxDyn(shape), gs * w as f32))
                })
                .collect()
        }),
    );
    out.set_precise(total);
    out
}
