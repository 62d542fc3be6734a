use super::{TrainConfig, TrainError};
use crate::seqmodel::{Gradients, ModelParams};

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self::with_len(params.values().len())
    }

    pub fn with_len(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

/// One bias-corrected Adam update. Gradients are clipped to
/// `gradient_clip_norm` (global L2 norm) first when configured.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    let n = params.values().len();
    if grads.values.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(TrainError::Shape(format!(
            "{} parameters, {} gradients, {} moments",
            n,
            grads.values.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.values.iter().position(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient(params.dims().param_path(i)));
    }
    let clip = match cfg.gradient_clip_norm {
        Some(max) => {
            let norm = grads.norm();
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let correct1 = 1.0 - b1.powi(t);
    let correct2 = 1.0 - b2.powi(t);
    for (((p, &g), m), v) in params
        .values_mut()
        .iter_mut()
        .zip(&grads.values)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let g = g * clip;
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / correct1;
        let v_hat = *v / correct2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::{ModelDims, Readout};

    fn scalar_model() -> ModelParams {
        // input 1, hidden 1: 4 * (1 + 1 + 1) + 1 + 1 = 14 parameters
        ModelParams::zeros(ModelDims::new(1, vec![1]).unwrap(), Readout::LastStep).unwrap()
    }

    fn grads_with(n: usize, index: usize, value: f64) -> Gradients {
        let mut g = Gradients { values: vec![0.0; n] };
        g.values[index] = value;
        g
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = scalar_model();
        let mut state = AdamState::new(&params);
        let cfg = TrainConfig::default();
        adam_step(&mut params, &grads_with(14, 0, 1.0), &mut state, &cfg).unwrap();
        // m_hat = v_hat = 1 at t = 1, so the step is lr / (1 + eps).
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((params.values()[0] - expected).abs() < 1e-18);
        assert!((params.values()[0] + 0.000_999_999_99).abs() < 1e-12);
        assert!(params.values()[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn repeated_gradient_keeps_step_size() {
        let mut params = scalar_model();
        let mut state = AdamState::new(&params);
        let cfg = TrainConfig::default();
        let g = grads_with(14, 3, 0.7);
        adam_step(&mut params, &g, &mut state, &cfg).unwrap();
        let first = params.values()[3];
        adam_step(&mut params, &g, &mut state, &cfg).unwrap();
        let second = params.values()[3] - first;
        assert!((second / first - 1.0).abs() < 0.1);
    }

    #[test]
    fn zero_gradient_is_a_no_op_and_decays_moments() {
        let mut params = scalar_model();
        params.values_mut()[6] = 0.5;
        let fresh = params.clone();
        let mut state = AdamState::new(&params);
        let cfg = TrainConfig::default();
        adam_step(&mut params, &Gradients { values: vec![0.0; 14] }, &mut state, &cfg).unwrap();
        assert_eq!(params, fresh);

        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads_with(14, 2, 1.0), &mut state, &cfg).unwrap();
        let (m, v) = (state.m[2], state.v[2]);
        let before = params.clone();
        adam_step(&mut params, &Gradients { values: vec![0.0; 14] }, &mut state, &cfg).unwrap();
        assert_eq!(params.values()[5], before.values()[5]);
        assert!(state.m[2].abs() < m && state.v[2] < v);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut params = scalar_model();
        params.values_mut()[4] = 0.25;
        let before = params.clone();
        let mut state = AdamState::new(&params);
        let cfg = TrainConfig { learning_rate: 0.0, ..Default::default() };
        for _ in 0..3 {
            adam_step(&mut params, &grads_with(14, 4, -2.0), &mut state, &cfg).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        let mut clipped = scalar_model();
        let mut unclipped = scalar_model();
        let g = Gradients { values: (0..14).map(|i| i as f64 - 3.0).collect() };
        let cfg = TrainConfig { gradient_clip_norm: Some(1e-3), ..Default::default() };
        let mut s1 = AdamState::new(&clipped);
        let mut s2 = AdamState::new(&unclipped);
        adam_step(&mut clipped, &g, &mut s1, &cfg).unwrap();
        adam_step(&mut unclipped, &g, &mut s2, &TrainConfig::default()).unwrap();
        let norm = s1.m.iter().map(|m| (m / 0.1).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1e-3).abs() < 1e-12);
        assert_ne!(s1.m, s2.m);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut params = scalar_model();
        let mut state = AdamState::new(&params);
        let err = adam_step(&mut params, &grads_with(14, 13, f64::NAN), &mut state, &TrainConfig::default());
        assert!(matches!(err, Err(TrainError::NonFiniteGradient(p)) if p == "head.b"));
        let short = Gradients { values: vec![0.0; 3] };
        assert!(matches!(
            adam_step(&mut params, &short, &mut state, &TrainConfig::default()),
            Err(TrainError::Shape(_))
        ));
    }
}
