use super::tensor::{matvec_acc, matvec_t_acc, outer_acc, ParamTensor};
use super::NnError;

fn check(weights: &ParamTensor, bias: &ParamTensor, input_len: usize) -> Result<(), NnError> {
    let shape = weights.shape();
    if shape.len() != 2 {
        return Err(NnError::shape("dense weights rank", 2, shape.len()));
    }
    if shape[1] != input_len {
        return Err(NnError::shape("dense input", shape[1], input_len));
    }
    if bias.len() != shape[0] {
        return Err(NnError::shape("dense bias", shape[0], bias.len()));
    }
    Ok(())
}

/// Affine map `W x + b` with `W` stored row-major as `out x in`.
pub fn dense_forward(
    weights: &ParamTensor,
    bias: &ParamTensor,
    input: &[f64],
) -> Result<Vec<f64>, NnError> {
    check(weights, bias, input.len())?;
    let mut out = bias.values.clone();
    matvec_acc(&weights.values, input.len(), input, &mut out);
    Ok(out)
}

/// Accumulates parameter gradients for `W x + b` given `d_out`, and returns
/// the gradient with respect to `input`.
pub fn dense_backward(
    weights: &mut ParamTensor,
    bias: &mut ParamTensor,
    input: &[f64],
    d_out: &[f64],
) -> Result<Vec<f64>, NnError> {
    check(weights, bias, input.len())?;
    if d_out.len() != bias.len() {
        return Err(NnError::shape("dense upstream", bias.len(), d_out.len()));
    }
    outer_acc(&mut weights.grad, input.len(), d_out, input);
    for (g, d) in bias.grad.iter_mut().zip(d_out) {
        *g += d;
    }
    weights.mask_grad();
    let mut d_in = vec![0.0; input.len()];
    matvec_t_acc(&weights.values, input.len(), d_out, &mut d_in);
    Ok(d_in)
}
