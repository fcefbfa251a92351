//! Forward and backward kernels for the layer types used by every network.
//!
//! Kernels are free functions over plain tensors so that the same code runs
//! static weights, folded expert weights, and per-sample recombined weights.

use super::{Activation, Real, Tensor};
use crate::error::{Error, Result};

/// Gradients produced by a layer's backward pass.
#[derive(Clone, Debug)]
pub struct LayerGrads<T: Real> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// `act(input · weightᵀ + bias)` for `input: [B, n]`, `weight: [m, n]`, `bias: [m]`.
pub fn dense_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    act: Activation,
) -> Result<Tensor<T>> {
    let (batch, n) = dense_dims(input, weight, bias)?;
    let m = weight.dim(0);
    let mut out = Tensor::zeros(vec![batch, m]);
    {
        let data = out.data_mut();
        for row in data.chunks_exact_mut(m) {
            row.copy_from_slice(bias.data());
        }
        T::gemm(
            batch,
            n,
            m,
            T::one(),
            input.data(),
            n as isize,
            1,
            weight.data(),
            1,
            n as isize,
            T::one(),
            data,
            m as isize,
            1,
        );
        data.iter_mut().for_each(|x| *x = act.apply(*x));
    }
    Ok(out)
}

pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    output: &Tensor<T>,
    grad_output: &Tensor<T>,
    act: Activation,
) -> Result<LayerGrads<T>> {
    let batch = input.dim(0);
    let n = input.len() / batch;
    let m = weight.dim(0);
    grad_output.expect_shape("dense_backward", &[batch, m])?;
    output.expect_shape("dense_backward", &[batch, m])?;

    let mut pre = grad_output.clone();
    act.backprop_in_place(output.data(), pre.data_mut());

    let mut grad_weight = Tensor::zeros(vec![m, n]);
    T::gemm(
        m,
        batch,
        n,
        T::one(),
        pre.data(),
        1,
        m as isize,
        input.data(),
        n as isize,
        1,
        T::zero(),
        grad_weight.data_mut(),
        n as isize,
        1,
    );
    let mut grad_bias = Tensor::zeros(vec![m]);
    for row in pre.data().chunks_exact(m) {
        for (g, &p) in grad_bias.data_mut().iter_mut().zip(row) {
            *g += p;
        }
    }
    let mut grad_input = Tensor::zeros(input.shape().to_vec());
    T::gemm(
        batch,
        m,
        n,
        T::one(),
        pre.data(),
        m as isize,
        1,
        weight.data(),
        n as isize,
        1,
        T::zero(),
        grad_input.data_mut(),
        n as isize,
        1,
    );
    Ok(LayerGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}

fn dense_dims<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize)> {
    if weight.rank() != 2 {
        return Err(Error::shape("dense_forward", "weight [m, n]", format!("{:?}", weight.shape())));
    }
    let (m, n) = (weight.dim(0), weight.dim(1));
    if input.rank() != 2 || input.dim(1) != n {
        return Err(Error::shape(
            "dense_forward",
            format!("input [B, {n}]"),
            format!("{:?}", input.shape()),
        ));
    }
    bias.expect_shape("dense_forward", &[m])?;
    Ok((input.dim(0), n))
}

/// Stride and zero padding of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn output_extent(&self, input: usize, kernel: usize, axis: &'static str) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::InvalidArgument("convolution stride must be >= 1".into()));
        }
        let padded = input + 2 * self.pad;
        if kernel > padded {
            return Err(Error::KernelTooLarge { kernel, padded, axis });
        }
        Ok((padded - kernel) / self.stride + 1)
    }
}

struct ConvDims {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    kernel: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvDims {
    fn patch(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn spatial(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn conv_dims<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    geom: ConvGeometry,
) -> Result<ConvDims> {
    if input.rank() != 4 {
        return Err(Error::shape("conv2d", "input [B, C, H, W]", format!("{:?}", input.shape())));
    }
    if weight.rank() != 4 || weight.dim(2) != weight.dim(3) {
        return Err(Error::shape("conv2d", "weight [F, C, k, k]", format!("{:?}", weight.shape())));
    }
    if weight.dim(1) != input.dim(1) {
        return Err(Error::shape(
            "conv2d",
            format!("{} input channels", weight.dim(1)),
            input.dim(1),
        ));
    }
    bias.expect_shape("conv2d", &[weight.dim(0)])?;
    let kernel = weight.dim(2);
    let out_h = geom.output_extent(input.dim(2), kernel, "height")?;
    let out_w = geom.output_extent(input.dim(3), kernel, "width")?;
    Ok(ConvDims {
        batch: input.dim(0),
        channels: input.dim(1),
        height: input.dim(2),
        width: input.dim(3),
        filters: weight.dim(0),
        kernel,
        out_h,
        out_w,
    })
}

/// Lays out every receptive field as a column: `[C·k·k, B·H'·W']`.
fn im2col<T: Real>(input: &[T], d: &ConvDims, geom: ConvGeometry) -> Vec<T> {
    let cols_n = d.batch * d.spatial();
    let mut cols = vec![T::zero(); d.patch() * cols_n];
    for c in 0..d.channels {
        for ki in 0..d.kernel {
            for kj in 0..d.kernel {
                let row = (c * d.kernel + ki) * d.kernel + kj;
                let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                for b in 0..d.batch {
                    let plane = &input[(b * d.channels + c) * d.height * d.width..][..d.height * d.width];
                    for oy in 0..d.out_h {
                        let y = (oy * geom.stride + ki) as isize - geom.pad as isize;
                        if y < 0 || y >= d.height as isize {
                            continue;
                        }
                        let src_row = &plane[y as usize * d.width..][..d.width];
                        let dst_row = &mut dst[b * d.spatial() + oy * d.out_w..][..d.out_w];
                        for (ox, v) in dst_row.iter_mut().enumerate() {
                            let x = (ox * geom.stride + kj) as isize - geom.pad as isize;
                            if x >= 0 && x < d.width as isize {
                                *v = src_row[x as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], d: &ConvDims, geom: ConvGeometry, grad_input: &mut [T]) {
    let cols_n = d.batch * d.spatial();
    for c in 0..d.channels {
        for ki in 0..d.kernel {
            for kj in 0..d.kernel {
                let row = (c * d.kernel + ki) * d.kernel + kj;
                let src = &cols[row * cols_n..(row + 1) * cols_n];
                for b in 0..d.batch {
                    let plane = &mut grad_input[(b * d.channels + c) * d.height * d.width..][..d.height * d.width];
                    for oy in 0..d.out_h {
                        let y = (oy * geom.stride + ki) as isize - geom.pad as isize;
                        if y < 0 || y >= d.height as isize {
                            continue;
                        }
                        let src_row = &src[b * d.spatial() + oy * d.out_w..][..d.out_w];
                        for (ox, &g) in src_row.iter().enumerate() {
                            let x = (ox * geom.stride + kj) as isize - geom.pad as isize;
                            if x >= 0 && x < d.width as isize {
                                plane[y as usize * d.width + x as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded cross-correlation: `input: [B, C, H, W]`, `weight: [F, C, k, k]`.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    geom: ConvGeometry,
    act: Activation,
) -> Result<Tensor<T>> {
    let d = conv_dims(input, weight, bias, geom)?;
    let cols = im2col(input.data(), &d, geom);
    let cols_n = d.batch * d.spatial();
    let mut prod = vec![T::zero(); d.filters * cols_n];
    T::gemm(
        d.filters,
        d.patch(),
        cols_n,
        T::one(),
        weight.data(),
        d.patch() as isize,
        1,
        &cols,
        cols_n as isize,
        1,
        T::zero(),
        &mut prod,
        cols_n as isize,
        1,
    );
    let mut out = Tensor::zeros(vec![d.batch, d.filters, d.out_h, d.out_w]);
    let spatial = d.spatial();
    let data = out.data_mut();
    for f in 0..d.filters {
        let b_f = bias.data()[f];
        for b in 0..d.batch {
            let src = &prod[f * cols_n + b * spatial..][..spatial];
            let dst = &mut data[(b * d.filters + f) * spatial..][..spatial];
            for (o, &p) in dst.iter_mut().zip(src) {
                *o = act.apply(p + b_f);
            }
        }
    }
    Ok(out)
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    output: &Tensor<T>,
    grad_output: &Tensor<T>,
    geom: ConvGeometry,
    act: Activation,
) -> Result<LayerGrads<T>> {
    let bias_stub = Tensor::zeros(vec![weight.dim(0)]);
    let d = conv_dims(input, weight, &bias_stub, geom)?;
    let out_shape = [d.batch, d.filters, d.out_h, d.out_w];
    output.expect_shape("conv2d_backward", &out_shape)?;
    grad_output.expect_shape("conv2d_backward", &out_shape)?;

    let spatial = d.spatial();
    let cols_n = d.batch * spatial;
    // Upstream gradient through the activation, regrouped as [F, B·H'·W'].
    let mut g = vec![T::zero(); d.filters * cols_n];
    let mut grad_bias = Tensor::zeros(vec![d.filters]);
    for b in 0..d.batch {
        for f in 0..d.filters {
            let off = (b * d.filters + f) * spatial;
            let dst = &mut g[f * cols_n + b * spatial..][..spatial];
            dst.copy_from_slice(&grad_output.data()[off..off + spatial]);
            act.backprop_in_place(&output.data()[off..off + spatial], dst);
            grad_bias.data_mut()[f] += dst.iter().copied().sum::<T>();
        }
    }

    let cols = im2col(input.data(), &d, geom);
    let mut grad_weight = Tensor::zeros(weight.shape().to_vec());
    T::gemm(
        d.filters,
        cols_n,
        d.patch(),
        T::one(),
        &g,
        cols_n as isize,
        1,
        &cols,
        1,
        cols_n as isize,
        T::zero(),
        grad_weight.data_mut(),
        d.patch() as isize,
        1,
    );

    let mut grad_cols = vec![T::zero(); d.patch() * cols_n];
    T::gemm(
        d.patch(),
        d.filters,
        cols_n,
        T::one(),
        weight.data(),
        1,
        d.patch() as isize,
        &g,
        cols_n as isize,
        1,
        T::zero(),
        &mut grad_cols,
        cols_n as isize,
        1,
    );
    let mut grad_input = Tensor::zeros(input.shape().to_vec());
    col2im(&grad_cols, &d, geom, grad_input.data_mut());
    Ok(LayerGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}

/// Mean over the spatial axes: `[B, C, H, W] -> [B, C]`.
pub fn global_avg_pool_forward<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    if input.rank() != 4 {
        return Err(Error::shape("global_avg_pool", "[B, C, H, W]", format!("{:?}", input.shape())));
    }
    let (b, c) = (input.dim(0), input.dim(1));
    let area = input.dim(2) * input.dim(3);
    let inv = T::one() / T::lit(area as f64);
    let data = input
        .data()
        .chunks_exact(area)
        .map(|plane| plane.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(vec![b, c], data)
}

pub fn global_avg_pool_backward<T: Real>(input_shape: &[usize], grad_output: &Tensor<T>) -> Tensor<T> {
    let area = input_shape[2] * input_shape[3];
    let inv = T::one() / T::lit(area as f64);
    let mut grad = Tensor::zeros(input_shape.to_vec());
    for (plane, &g) in grad.data_mut().chunks_exact_mut(area).zip(grad_output.data()) {
        plane.iter_mut().for_each(|x| *x = g * inv);
    }
    grad
}
