use super::mlp::MlpParams;

pub const LR_START: f64 = 5e-3;
pub const LR_END: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: MlpParams,
    pub second: MlpParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut MlpParams, state: &mut AdamState, grads: &MlpParams, lr: f64) {
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let tensors = params
        .tensors_mut()
        .zip(state.first.tensors_mut())
        .zip(state.second.tensors_mut())
        .zip(grads.tensors());
    for (((p, m), v), g) in tensors {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Exponential decay from `LR_START` at epoch 0 to `LR_END` at `total_epochs`.
/// `epoch` may be fractional.
pub fn lr_schedule(epoch: f64, total_epochs: f64) -> f64 {
    if total_epochs <= 0.0 || epoch <= 0.0 {
        return LR_START;
    }
    if epoch >= total_epochs {
        return LR_END;
    }
    LR_START * (LR_END / LR_START).powf(epoch / total_epochs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = MlpParams::init(5, 2, 4, 3);
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let g = p.zeros_like();
        adam_step(&mut p, &mut s, &g, 1e-2);
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = MlpParams::init(5, 1, 3, 3);
        let before = p.to_flat();
        let mut s = AdamState::new(&p);
        let mut g = p.zeros_like();
        let signs: Vec<f64> = (0..p.param_count())
            .map(|i| if i % 3 == 0 { -0.7 } else { 2.5 })
            .collect();
        g.set_flat(&signs);
        let lr = 1e-3;
        adam_step(&mut p, &mut s, &g, lr);
        for ((a, b), gi) in p.to_flat().iter().zip(&before).zip(&signs) {
            let delta = a - b;
            assert!((delta + lr * gi.signum()).abs() < 1e-8 * lr * 10.0);
        }
    }

    #[test]
    fn descends_on_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = MlpParams::zeros(3, 1, 2);
        let start: Vec<f64> = (0..p.param_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        p.set_flat(&start);
        let mut s = AdamState::new(&p);
        let norm = |p: &MlpParams| p.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut last = norm(&p);
        for _ in 0..100 {
            let mut g = p.clone();
            let twice: Vec<f64> = g.to_flat().iter().map(|v| 2.0 * v).collect();
            g.set_flat(&twice);
            adam_step(&mut p, &mut s, &g, 1e-2);
            let now = norm(&p);
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        assert_eq!(lr_schedule(0.0, 50.0), 5e-3);
        assert_eq!(lr_schedule(50.0, 50.0), 1e-4);
        assert!((lr_schedule(25.0, 50.0) - (5e-3f64 * 1e-4).sqrt()).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for e in 0..=500 {
            let lr = lr_schedule(e as f64 / 10.0, 50.0);
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
