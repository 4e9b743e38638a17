use super::tensor::Tensor;
use super::value::Value;
use crate::error::{Error, Result};

/// Adam moments for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`, with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(params: &[Value]) -> Self {
        Self::with_hyperparameters(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparameters(params: &[Value], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| {
                    let (r, c) = p.shape();
                    Tensor::zeros(r, c)
                })
                .collect::<Vec<_>>()
        };
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }
}

/// One bias-corrected Adam update of `params` at learning rate `lr`, then
/// clears their gradients.
///
/// Every registered parameter must carry a gradient; nothing is updated if
/// one is missing.
pub fn adam_step(params: &[Value], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != state.first_moment.len() {
        return Err(Error::InvalidArgument(format!(
            "adam_step: {} parameters registered against {} moment slots",
            params.len(),
            state.first_moment.len()
        )));
    }
    for (index, (p, m)) in params.iter().zip(&state.first_moment).enumerate() {
        if p.shape() != m.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("parameter #{index} {:?} vs moment {:?}", p.shape(), m.shape()),
            ));
        }
        if p.grad_ref().is_none() {
            let (r, c) = p.shape();
            return Err(Error::MissingGradient {
                index,
                shape: format!("{r}x{c}"),
            });
        }
    }

    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    for ((p, m), v) in params
        .iter()
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        {
            let grad = p.grad_ref();
            let g = grad.as_ref().expect("checked above");
            let mut data = p.data_mut();
            for (((x, mi), vi), &gi) in data
                .as_mut_slice()
                .iter_mut()
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
                .zip(g.as_slice())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        p.zero_grad();
    }
    Ok(())
}
