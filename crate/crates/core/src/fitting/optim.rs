//! RMSProp with bias-corrected second moments and per-group step sizes.

const DECAY: f64 = 0.99;
const EPS: f64 = 1e-12;

/// Second-moment state for one flat parameter group.
#[derive(Debug, Clone, Default)]
pub(crate) struct RmsProp {
    second: Vec<f64>,
    steps: Vec<u32>,
}

impl RmsProp {
    /// Normalized descent steps `lr * g / sqrt(v_hat)`. Entries with a zero
    /// gradient keep their moment and take no step, so groups that are only
    /// sometimes active do not decay while idle.
    pub(crate) fn step(&mut self, grad: &[f64], lr: f64) -> Vec<f64> {
        if self.second.len() != grad.len() {
            self.second = vec![0.0; grad.len()];
            self.steps = vec![0; grad.len()];
        }
        grad.iter()
            .enumerate()
            .map(|(i, &g)| {
                if g == 0.0 || lr == 0.0 {
                    return 0.0;
                }
                self.steps[i] += 1;
                self.second[i] = DECAY * self.second[i] + (1.0 - DECAY) * g * g;
                let v_hat = self.second[i] / (1.0 - DECAY.powi(self.steps[i] as i32));
                lr * g / (v_hat.sqrt() + EPS)
            })
            .collect()
    }
}

/// Cosine decay from `peak` to a tenth of it over `[0, 1]`.
pub(crate) fn cosine_lr(peak: f64, progress: f64) -> f64 {
    let p = progress.clamp(0.0, 1.0);
    peak * (0.1 + 0.45 * (1.0 + (std::f64::consts::PI * p).cos()))
}
