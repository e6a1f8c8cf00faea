use super::{dim_err, Real, Tensor, TensorError};

/// Winning input positions recorded by [`maxpool2d`], one flat input index per
/// output cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndex {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

/// Max pooling over `window × window` regions. Ties go to the first position
/// in row-major scan order.
pub fn maxpool2d<T: Real>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, PoolIndex), TensorError> {
    let [n, c, h, w] = input.dims4("maxpool2d")?;
    if window == 0 || stride == 0 {
        return Err(dim_err("maxpool2d", "window and stride must be positive"));
    }
    if window > h || window > w {
        return Err(dim_err(
            "maxpool2d",
            format!("window {window} larger than input {h}x{w}"),
        ));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let x = input.data();
    let o = out.data_mut();
    let mut cell = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + oy * stride * w + ox * stride;
                let mut best = x[best_idx];
                for i in 0..window {
                    let row = base + (oy * stride + i) * w + ox * stride;
                    for j in 0..window {
                        let v = x[row + j];
                        if v > best {
                            best = v;
                            best_idx = row + j;
                        }
                    }
                }
                o[cell] = best;
                argmax.push(best_idx);
                cell += 1;
            }
        }
    }
    let output_shape = out.shape().to_vec();
    Ok((
        out,
        PoolIndex {
            input_shape: input.shape().to_vec(),
            output_shape,
            argmax,
        },
    ))
}

/// Routes each output gradient back to the input position that won its window.
pub fn maxpool2d_backward<T: Real>(
    index: &PoolIndex,
    grad_output: &Tensor<T>,
    input_shape: &[usize],
) -> Result<Tensor<T>, TensorError> {
    if index.input_shape != input_shape {
        return Err(dim_err(
            "maxpool2d_backward",
            format!(
                "argmax built for input {:?}, asked for {:?}",
                index.input_shape, input_shape
            ),
        ));
    }
    if grad_output.shape() != index.output_shape.as_slice() {
        return Err(dim_err(
            "maxpool2d_backward",
            format!(
                "grad_output {:?} vs pooled output {:?}",
                grad_output.shape(),
                index.output_shape
            ),
        ));
    }
    let mut grad_input = Tensor::zeros(input_shape);
    let gi = grad_input.data_mut();
    for (&src, &g) in index.argmax.iter().zip(grad_output.data()) {
        gi[src] = gi[src] + g;
    }
    Ok(grad_input)
}
