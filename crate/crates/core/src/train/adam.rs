use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Bias-corrected Adam over a list of parameter slices.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = shapes.into_iter().map(|len| (vec![0.0; len], vec![0.0; len])).unzip();
        Self { config, step: 0, m, v }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// `p ← p − lr · m̂ / (√v̂ + eps)`.
    pub fn step(&mut self, params: Vec<&mut [f32]>, grads: Vec<&[f32]>) {
        assert_eq!(params.len(), self.m.len(), "parameter block count");
        assert_eq!(grads.len(), self.m.len(), "gradient block count");
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i] as f64;
                let mi = beta1 * m[i] as f64 + (1.0 - beta1) * gi;
                let vi = beta2 * v[i] as f64 + (1.0 - beta2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                p[i] = (p[i] as f64 - learning_rate * m_hat / (v_hat.sqrt() + eps)) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_matches_hand_computation() {
        let cfg = AdamConfig { learning_rate: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut adam = Adam::new(cfg, [1]);
        let mut p = [1.0f32];
        adam.step(vec![&mut p[..]], vec![&[0.5f32][..]]);
        // m̂ = 0.5, v̂ = 0.25 after bias correction, so the step is lr·0.5/(0.5 + eps).
        let expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((p[0] as f64 - expected).abs() < 1e-7);

        adam.step(vec![&mut p[..]], vec![&[-0.25f32][..]]);
        let m: f64 = 0.9 * 0.05 + 0.1 * -0.25;
        let v: f64 = 0.999 * 0.00025 + 0.001 * 0.0625;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.999f64.powi(2));
        let expected2 = expected - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] as f64 - expected2).abs() < 1e-6);
    }
}
