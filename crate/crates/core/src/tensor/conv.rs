use super::{dim_err, LayerParams, Real, Tensor, TensorError};

/// Output length of a strided window sweep along one axis, or `None` if the
/// window does not fit.
pub fn conv_output_size(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn geometry<T: Real>(
    op: &'static str,
    input: &Tensor<T>,
    params: &LayerParams<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGeometry, TensorError> {
    let [n, c, h, w] = input.dims4(op)?;
    let [k, kc, kh, kw] = params.weights.dims4(op)?;
    if kc != c {
        return Err(dim_err(
            op,
            format!("input channel axis C={c} but kernel channel axis is {kc}"),
        ));
    }
    if params.bias.len() != k {
        return Err(dim_err(
            op,
            format!(
                "bias has {} entries for {k} output channels",
                params.bias.len()
            ),
        ));
    }
    let oh = conv_output_size(h, kh, stride, pad).ok_or_else(|| {
        dim_err(
            op,
            format!("height axis: H={h} pad={pad} kernel={kh} stride={stride}"),
        )
    })?;
    let ow = conv_output_size(w, kw, stride, pad).ok_or_else(|| {
        dim_err(
            op,
            format!("width axis: W={w} pad={pad} kernel={kw} stride={stride}"),
        )
    })?;
    Ok(ConvGeometry {
        n,
        c,
        h,
        w,
        k,
        kh,
        kw,
        oh,
        ow,
    })
}

/// Range of output positions `o` for which `o * stride + tap - pad` lands
/// inside `0..len`.
#[inline]
fn valid_outputs(tap: usize, pad: usize, stride: usize, len: usize, out: usize) -> (usize, usize) {
    // smallest o with o*stride + tap >= pad
    let lo = if tap >= pad {
        0
    } else {
        (pad - tap).div_ceil(stride)
    };
    // largest o with o*stride + tap - pad <= len - 1
    let limit = len - 1 + pad;
    let hi = if tap > limit {
        0
    } else {
        ((limit - tap) / stride + 1).min(out)
    };
    (lo.min(hi), hi)
}

/// 2-D cross-correlation with zero padding. Weights are `[K, C, kh, kw]`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, TensorError> {
    let g = geometry("conv2d", input, params, stride, pad)?;
    let mut out = Tensor::zeros(&[g.n, g.k, g.oh, g.ow]);
    let x = input.data();
    let wt = params.weights.data();
    let bias = params.bias.data();
    let o = out.data_mut();

    for n in 0..g.n {
        for k in 0..g.k {
            let obase = (n * g.k + k) * g.oh * g.ow;
            o[obase..obase + g.oh * g.ow].fill(bias[k]);
            for c in 0..g.c {
                let ibase = (n * g.c + c) * g.h * g.w;
                for i in 0..g.kh {
                    let (oy0, oy1) = valid_outputs(i, pad, stride, g.h, g.oh);
                    for j in 0..g.kw {
                        let wv = wt[((k * g.c + c) * g.kh + i) * g.kw + j];
                        let (ox0, ox1) = valid_outputs(j, pad, stride, g.w, g.ow);
                        for oy in oy0..oy1 {
                            let iy = oy * stride + i - pad;
                            let row = ibase + iy * g.w;
                            let orow = obase + oy * g.ow;
                            for ox in ox0..ox1 {
                                let ix = ox * stride + j - pad;
                                o[orow + ox] = o[orow + ox] + wv * x[row + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Backward pass of [`conv2d`].
///
/// Accumulates into `params.grad_weights` / `params.grad_bias` and returns the
/// gradient with respect to `input`. Pass `need_input_grad = false` for the
/// first layer of a network to skip that work; a zero tensor is returned.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    params: &mut LayerParams<T>,
    grad_output: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_input_grad: bool,
) -> Result<Tensor<T>, TensorError> {
    let g = geometry("conv2d_backward", input, params, stride, pad)?;
    let expected = [g.n, g.k, g.oh, g.ow];
    if grad_output.shape() != expected {
        return Err(dim_err(
            "conv2d_backward",
            format!(
                "grad_output shape {:?} does not match conv output {:?}",
                grad_output.shape(),
                expected
            ),
        ));
    }
    let mut grad_input = Tensor::zeros(input.shape());
    let x = input.data();
    let go = grad_output.data();
    let LayerParams {
        weights,
        grad_weights,
        grad_bias,
        ..
    } = params;
    let wt = weights.data();
    let gw = grad_weights.data_mut();
    let gb = grad_bias.data_mut();
    let gi = grad_input.data_mut();

    for n in 0..g.n {
        for (k, gbk) in gb.iter_mut().enumerate() {
            let obase = (n * g.k + k) * g.oh * g.ow;
            let plane = &go[obase..obase + g.oh * g.ow];
            *gbk = *gbk + plane.iter().copied().sum::<T>();
            for c in 0..g.c {
                let ibase = (n * g.c + c) * g.h * g.w;
                for i in 0..g.kh {
                    let (oy0, oy1) = valid_outputs(i, pad, stride, g.h, g.oh);
                    for j in 0..g.kw {
                        let widx = ((k * g.c + c) * g.kh + i) * g.kw + j;
                        let wv = wt[widx];
                        let (ox0, ox1) = valid_outputs(j, pad, stride, g.w, g.ow);
                        let mut acc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * stride + i - pad;
                            let row = ibase + iy * g.w;
                            let orow = obase + oy * g.ow;
                            for ox in ox0..ox1 {
                                let ix = ox * stride + j - pad;
                                let gv = go[orow + ox];
                                acc = acc + gv * x[row + ix];
                                if need_input_grad {
                                    gi[row + ix] = gi[row + ix] + gv * wv;
                                }
                            }
                        }
                        gw[widx] = gw[widx] + acc;
                    }
                }
            }
        }
    }
    Ok(grad_input)
}
