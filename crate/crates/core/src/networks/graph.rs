//! Layer programs shared by generators and discriminators.
//!
//! A network is a flat list of [`Op`]s (residual blocks nest a sub-list).
//! Parameters live outside the program and are referenced by index, so one
//! program can run against any parameter set derived from the same config.

use ndarray::ArrayD;

use super::kernels::{self, Geometry, Tensor};
use super::NamedTensor;

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Op {
    ReflectPad(usize),
    Conv {
        weight: usize,
        bias: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        out_channels: usize,
    },
    /// Output spatial size is exactly `stride` times the input size.
    ConvTranspose {
        weight: usize,
        bias: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        out_channels: usize,
    },
    InstanceNorm,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Residual(Vec<Op>),
}

/// Activations retained by a forward pass for the matching backward pass.
#[derive(Debug)]
pub(crate) enum Saved {
    Input(Tensor),
    Normalized { y: Tensor, inv_stds: Vec<f64> },
    Output(Tensor),
    Residual(Vec<Saved>),
}

pub(crate) type Tape = Vec<Saved>;

fn slice(t: &NamedTensor) -> &[f64] {
    t.value
        .as_slice().expect("parameters are kept in standard layout")
}

fn conv_geometry(x: &Tensor, kernel: usize, stride: usize, pad: usize) -> Geometry {
    let (_, _, h, w) = x.dim();
    Geometry::conv(kernel, stride, pad, h, w).expect("spatial size validated before execution")
}

fn transposed_geometry(x: &Tensor, kernel: usize, stride: usize, pad: usize) -> Geometry {
    let (_, _, h, w) = x.dim();
    let g = Geometry::conv(kernel, stride, pad, h * stride, w * stride).expect("valid upsampling geometry");
    debug_assert_eq!((g.out_h, g.out_w), (h, w));
    g
}

pub(crate) fn forward(ops: &[Op], params: &[NamedTensor], input: Tensor, mut tape: Option<&mut Tape>) -> Tensor {
    let mut x = input;
    for op in ops {
        x = match op {
            Op::ReflectPad(p) => {
                let y = kernels::reflection_pad(&x, *p);
                if let Some(t) = tape.as_mut() {
                    t.push(Saved::Input(x));
                }
                y
            }
            Op::Conv {
                weight,
                bias,
                kernel,
                stride,
                pad,
                out_channels,
            } => {
                let g = conv_geometry(&x, *kernel, *stride, *pad);
                let y = kernels::conv2d(&x, slice(&params[*weight]), slice(&params[*bias]), *out_channels, &g);
                if let Some(t) = tape.as_mut() {
                    t.push(Saved::Input(x));
                }
                y
            }
            Op::ConvTranspose {
                weight,
                bias,
                kernel,
                stride,
                pad,
                out_channels,
            } => {
                let g = transposed_geometry(&x, *kernel, *stride, *pad);
                let y = kernels::conv_transpose2d(&x, slice(&params[*weight]), slice(&params[*bias]), *out_channels, &g);
                if let Some(t) = tape.as_mut() {
                    t.push(Saved::Input(x));
                }
                y
            }
            Op::InstanceNorm => {
                let (y, inv_stds) = kernels::instance_norm(&x);
                if let Some(t) = tape.as_mut() {
                    t.push(Saved::Normalized {
                        y: y.clone(),
                        inv_stds,
                    });
                }
                y
            }
            // NaN must survive so divergence is detected downstream.
            Op::Relu => activation(x, &mut tape, |v| if v < 0.0 { 0.0 } else { v }),
            Op::LeakyRelu(slope) => {
                let slope = *slope;
                activation(x, &mut tape, move |v| if v > 0.0 { v } else { v * slope })
            }
            Op::Tanh => activation(x, &mut tape, f64::tanh),
            Op::Residual(body) => {
                let mut sub = tape.as_ref().map(|_| Tape::new());
                let y = forward(body, params, x.clone(), sub.as_mut());
                if let (Some(t), Some(sub)) = (tape.as_mut(), sub) {
                    t.push(Saved::Residual(sub));
                }
                x + y
            }
        };
    }
    x
}

fn activation(mut x: Tensor, tape: &mut Option<&mut Tape>, f: impl Fn(f64) -> f64) -> Tensor {
    x.mapv_inplace(f);
    if let Some(t) = tape.as_mut() {
        t.push(Saved::Output(x.clone()));
    }
    x
}

/// Backpropagates `dy` through `ops`, consuming the tape recorded by
/// [`forward`]. Parameter gradients are accumulated into `grads` when given.
/// Returns the gradient with respect to the network input.
pub(crate) fn backward(
    ops: &[Op],
    params: &[NamedTensor],
    tape: Tape,
    dy: Tensor,
    mut grads: Option<&mut [ArrayD<f64>]>,
) -> Tensor {
    assert_eq!(ops.len(), tape.len(), "tape does not belong to this program");
    let mut d = dy;
    for (op, saved) in ops.iter().zip(tape).rev() {
        d = match (op, saved) {
            (Op::ReflectPad(p), Saved::Input(_)) => kernels::reflection_pad_backward(&d, *p),
            (
                Op::Conv {
                    weight,
                    bias,
                    kernel,
                    stride,
                    pad,
                    out_channels,
                },
                Saved::Input(x),
            ) => {
                let g = conv_geometry(&x, *kernel, *stride, *pad);
                let pg = grads.as_deref_mut().map(|gs| split_pair(gs, *weight, *bias));
                kernels::conv2d_backward(&x, slice(&params[*weight]), *out_channels, &g, &d, pg, true)
                    .expect("input gradient requested")
            }
            (
                Op::ConvTranspose {
                    weight,
                    bias,
                    kernel,
                    stride,
                    pad,
                    out_channels,
                },
                Saved::Input(x),
            ) => {
                let g = transposed_geometry(&x, *kernel, *stride, *pad);
                let pg = grads.as_deref_mut().map(|gs| split_pair(gs, *weight, *bias));
                kernels::conv_transpose2d_backward(&x, slice(&params[*weight]), *out_channels, &g, &d, pg, true)
                    .expect("input gradient requested")
            }
            (Op::InstanceNorm, Saved::Normalized { y, inv_stds }) => kernels::instance_norm_backward(&y, &inv_stds, &d),
            (Op::Relu, Saved::Output(y)) => {
                ndarray::Zip::from(&mut d).and(&y).for_each(|g, &v| {
                    if v <= 0.0 {
                        *g = 0.0
                    }
                });
                d
            }
            (Op::LeakyRelu(slope), Saved::Output(y)) => {
                ndarray::Zip::from(&mut d).and(&y).for_each(|g, &v| {
                    if v <= 0.0 {
                        *g *= slope
                    }
                });
                d
            }
            (Op::Tanh, Saved::Output(y)) => {
                ndarray::Zip::from(&mut d).and(&y).for_each(|g, &v| *g *= 1.0 - v * v);
                d
            }
            (Op::Residual(body), Saved::Residual(sub)) => {
                let through = backward(body, params, sub, d.clone(), grads.as_deref_mut());
                d + through
            }
            (op, _) => unreachable!("tape entry does not match op {op:?}"),
        };
    }
    d
}

fn split_pair(grads: &mut [ArrayD<f64>], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a < b, "weight index precedes bias index");
    let (lo, hi) = grads.split_at_mut(b);
    (
        lo[a].as_slice_mut().expect("standard layout"),
        hi[0].as_slice_mut().expect("standard layout"),
    )
}
