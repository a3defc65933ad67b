use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Adam moments and hyperparameters for a fixed parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Zeroed moments shaped like `params`, with the usual β = (0.9, 0.999), ε = 1e-8.
    pub fn new(params: &[Tensor], learning_rate: f64) -> Self {
        AdamState {
            step_count: 0,
            first_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, applied in place to `params`.
pub fn adam_step(params: &[Tensor], grads: &[&[f64]], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(TensorError::dimension(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.first_moment.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.numel() != g.len() || state.first_moment[i].len() != g.len() {
            return Err(TensorError::dimension(
                "adam_step",
                format!("param {i} has {} values but grad has {}", p.numel(), g.len()),
            ));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        let mut data = p.data_mut();
        for j in 0..g.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            data[j] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Convenience wrapper that reads each parameter's accumulated gradient
/// (missing gradients count as zero) and then clears it.
#[derive(Debug, Clone)]
pub struct Adam {
    params: Vec<Tensor>,
    pub state: AdamState,
}

impl Adam {
    pub fn new(params: Vec<Tensor>, learning_rate: f64) -> Self {
        let state = AdamState::new(&params, learning_rate);
        Adam { params, state }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.state.learning_rate = lr;
    }

    pub fn step(&mut self) -> Result<()> {
        let grads: Vec<Vec<f64>> = self
            .params
            .iter()
            .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
            .collect();
        let refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        adam_step(&self.params, &refs, &mut self.state)?;
        self.zero_grad();
        Ok(())
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(Tensor::zero_grad);
    }
}
