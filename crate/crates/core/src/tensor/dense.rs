use super::{dim_err, LayerParams, Real, Tensor, TensorError};

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient passes where `input > 0`; the subgradient at exactly zero is zero.
pub fn relu_backward<T: Real>(
    input: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    if input.shape() != grad_output.shape() {
        return Err(dim_err(
            "relu_backward",
            format!(
                "input {:?} vs grad {:?}",
                input.shape(),
                grad_output.shape()
            ),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

fn linear_dims<T: Real>(
    op: &'static str,
    input: &Tensor<T>,
    params: &LayerParams<T>,
) -> Result<(usize, usize, usize), TensorError> {
    let [n, d] = input.dims2(op)?;
    let [wd, m] = params.weights.dims2(op)?;
    if wd != d {
        return Err(dim_err(
            op,
            format!("input has {d} features but weights expect {wd}"),
        ));
    }
    if params.bias.len() != m {
        return Err(dim_err(
            op,
            format!("bias has {} entries for {m} outputs", params.bias.len()),
        ));
    }
    Ok((n, d, m))
}

/// Fully connected layer: `input[N,D] · weights[D,M] + bias[M]`.
pub fn linear<T: Real>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
) -> Result<Tensor<T>, TensorError> {
    let (n, d, m) = linear_dims("linear", input, params)?;
    let x = input.data();
    let w = params.weights.data();
    let mut out = Tensor::zeros(&[n, m]);
    let o = out.data_mut();
    for r in 0..n {
        let orow = &mut o[r * m..(r + 1) * m];
        orow.copy_from_slice(params.bias.data());
        for (i, &xv) in x[r * d..(r + 1) * d].iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            for (ov, &wv) in orow.iter_mut().zip(&w[i * m..(i + 1) * m]) {
                *ov = *ov + xv * wv;
            }
        }
    }
    Ok(out)
}

/// Backward pass of [`linear`]; accumulates parameter gradients and returns
/// `grad_output · weightsᵀ`.
pub fn linear_backward<T: Real>(
    input: &Tensor<T>,
    params: &mut LayerParams<T>,
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let (n, d, m) = linear_dims("linear_backward", input, params)?;
    if grad_output.shape() != [n, m] {
        return Err(dim_err(
            "linear_backward",
            format!("grad_output {:?}, expected [{n}, {m}]", grad_output.shape()),
        ));
    }
    let x = input.data();
    let go = grad_output.data();
    let mut grad_input = Tensor::zeros(&[n, d]);
    let gi = grad_input.data_mut();
    let LayerParams {
        weights,
        grad_weights,
        grad_bias,
        ..
    } = params;
    let w = weights.data();
    let gw = grad_weights.data_mut();
    let gb = grad_bias.data_mut();
    for r in 0..n {
        let grow = &go[r * m..(r + 1) * m];
        for (b, &g) in gb.iter_mut().zip(grow) {
            *b = *b + g;
        }
        for i in 0..d {
            let xv = x[r * d + i];
            let wrow = &w[i * m..(i + 1) * m];
            let gwrow = &mut gw[i * m..(i + 1) * m];
            let mut acc = T::zero();
            for j in 0..m {
                gwrow[j] = gwrow[j] + xv * grow[j];
                acc = acc + grow[j] * wrow[j];
            }
            gi[r * d + i] = acc;
        }
    }
    Ok(grad_input)
}

/// Row-wise softmax of a `[N, K]` tensor, stabilised by subtracting each
/// row's maximum.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let [n, k] = logits.dims2("softmax")?;
    let mut probs = logits.clone();
    for row in probs.data_mut().chunks_mut(k).take(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(probs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossEntropy<T = f32> {
    /// Mean negative log-probability of the true class.
    pub loss: T,
    /// `(probs − onehot) / N`.
    pub grad_logits: Tensor<T>,
    pub probs: Tensor<T>,
}

pub fn softmax_cross_entropy<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<CrossEntropy<T>, TensorError> {
    let [n, k] = logits.dims2("softmax_cross_entropy")?;
    if labels.len() != n {
        return Err(TensorError::Validation {
            op: "softmax_cross_entropy",
            detail: format!("{} labels for {n} rows", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(TensorError::Validation {
            op: "softmax_cross_entropy",
            detail: format!("label {bad} out of range for {k} classes"),
        });
    }
    let probs = softmax(logits)?;
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut grad = probs.clone();
    let mut loss = T::zero();
    let z = logits.data();
    for (r, &label) in labels.iter().enumerate() {
        let row = &z[r * k..(r + 1) * k];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        loss = loss + (lse - row[label]);
        let g = &mut grad.data_mut()[r * k..(r + 1) * k];
        g[label] = g[label] - T::one();
        for v in g.iter_mut() {
            *v = *v * inv_n;
        }
    }
    Ok(CrossEntropy {
        loss: loss * inv_n,
        grad_logits: grad,
        probs,
    })
}

/// Plain SGD step with L2 weight decay on the weights (not the bias).
///
/// Gradients are zeroed afterwards. Frozen parameters are left bit-identical.
pub fn sgd_update<T: Real>(
    params: &mut LayerParams<T>,
    lr: T,
    weight_decay: T,
) -> Result<(), TensorError> {
    if params.frozen {
        params.zero_grad();
        return Ok(());
    }
    if !params.grad_weights.is_finite() {
        return Err(TensorError::NonFiniteGradient { param: "weights" });
    }
    if !params.grad_bias.is_finite() {
        return Err(TensorError::NonFiniteGradient { param: "bias" });
    }
    for (w, &g) in params
        .weights
        .data_mut()
        .iter_mut()
        .zip(params.grad_weights.data())
    {
        *w = *w - lr * (g + weight_decay * *w);
    }
    for (b, &g) in params
        .bias
        .data_mut()
        .iter_mut()
        .zip(params.grad_bias.data())
    {
        *b = *b - lr * g;
    }
    params.zero_grad();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn relu_forward_and_backward() {
        let x = v(&[3], vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &v(&[3], vec![5.0; 3])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn linear_identity_and_scalar_case() {
        let x = v(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let eye = LayerParams::new(v(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]), Tensor::zeros(&[2]));
        assert_eq!(linear(&x, &eye).unwrap(), x);

        let p = LayerParams::new(v(&[2, 1], vec![3.0, 4.0]), v(&[1], vec![5.0]));
        let out = linear(&v(&[1, 2], vec![1.0, 2.0]), &p).unwrap();
        assert_eq!(out.data(), &[16.0]);
    }

    #[test]
    fn linear_inner_dim_mismatch() {
        let p = LayerParams::new(Tensor::<f64>::zeros(&[3, 1]), Tensor::zeros(&[1]));
        assert!(linear(&Tensor::zeros(&[1, 2]), &p).is_err());
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let ce = softmax_cross_entropy(&v(&[1, 2], vec![0.0, 0.0]), &[1]).unwrap();
        assert_eq!(ce.probs.data(), &[0.5, 0.5]);
        assert!((ce.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn large_logits_are_stable() {
        let ce = softmax_cross_entropy(&v(&[1, 2], vec![1000.0, 0.0]), &[0]).unwrap();
        assert!(ce.loss.is_finite());
        assert!(ce.loss.abs() < 1e-12);
        assert!(ce.grad_logits.is_finite());
        let ce32 = softmax_cross_entropy(
            &Tensor::<f32>::from_vec(&[1, 2], vec![1000.0, 0.0]).unwrap(),
            &[1],
        )
        .unwrap();
        assert!((ce32.loss - 1000.0).abs() < 1e-3);
    }

    #[test]
    fn label_out_of_range() {
        let err = softmax_cross_entropy(&v(&[1, 2], vec![0.0, 0.0]), &[2]).unwrap_err();
        assert!(matches!(err, TensorError::Validation { .. }));
    }

    #[test]
    fn sgd_plain_step() {
        let mut p = LayerParams::new(v(&[1], vec![1.0]), v(&[1], vec![1.0]));
        p.grad_weights = v(&[1], vec![1.0]);
        p.grad_bias = v(&[1], vec![1.0]);
        sgd_update(&mut p, 0.01, 0.0).unwrap();
        assert!((p.weights.data()[0] - 0.99).abs() < 1e-15);
        assert!((p.bias.data()[0] - 0.99).abs() < 1e-15);
        assert_eq!(p.grad_weights.data(), &[0.0]);
    }

    #[test]
    fn sgd_weight_decay_only() {
        let mut p = LayerParams::new(v(&[1], vec![1.0]), v(&[1], vec![1.0]));
        sgd_update(&mut p, 0.01, 0.0005).unwrap();
        assert!((p.weights.data()[0] - 0.999995).abs() < 1e-15);
        // bias is not decayed
        assert_eq!(p.bias.data()[0], 1.0);
    }

    #[test]
    fn sgd_frozen_is_noop() {
        let mut p = LayerParams::new(v(&[2], vec![0.3, -0.7]), v(&[1], vec![0.1]));
        p.frozen = true;
        p.grad_weights = v(&[2], vec![9.0, f64::NAN]);
        p.grad_bias = v(&[1], vec![4.0]);
        let before = (p.weights.clone(), p.bias.clone());
        sgd_update(&mut p, 0.5, 0.1).unwrap();
        assert_eq!(p.weights.data()[0].to_bits(), before.0.data()[0].to_bits());
        assert_eq!(p.weights.data()[1].to_bits(), before.0.data()[1].to_bits());
        assert_eq!(p.bias, before.1);
        assert!(p.grad_weights.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn sgd_rejects_non_finite() {
        let mut p = LayerParams::new(v(&[1], vec![1.0]), v(&[1], vec![1.0]));
        p.grad_weights = v(&[1], vec![f64::INFINITY]);
        assert!(matches!(
            sgd_update(&mut p, 0.01, 0.0),
            Err(TensorError::NonFiniteGradient { .. })
        ));
        assert_eq!(p.weights.data()[0], 1.0);
    }
}
