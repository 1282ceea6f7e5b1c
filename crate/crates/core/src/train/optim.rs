//! Adam with bias correction over one or more parameter stores.

use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment buffers for a fixed list of stores, indexed by store then entry.
#[derive(Debug, Clone)]
pub struct Adam {
    settings: AdamSettings,
    step: u64,
    first: Vec<Vec<Vec<f64>>>,
    second: Vec<Vec<Vec<f64>>>,
}

impl Adam {
    pub fn new(settings: AdamSettings, stores: &[&ParamStore]) -> Self {
        let zeros = || -> Vec<Vec<Vec<f64>>> {
            stores.iter().map(|s| s.entries().iter().map(|e| vec![0.0; e.tensor.numel()]).collect()).collect()
        };
        Self { settings, step: 0, first: zeros(), second: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the stores' accumulated gradients, then
    /// clears them. `stores` must be passed in construction order. With
    /// `lr == 0` parameters are left untouched bit for bit.
    pub fn step(&mut self, lr: f64, stores: &mut [&mut ParamStore]) {
        assert_eq!(stores.len(), self.first.len(), "store list changed since construction");
        self.step += 1;
        let AdamSettings { beta1, beta2, eps } = self.settings;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (si, store) in stores.iter_mut().enumerate() {
            for (ei, entry) in store.iter_mut().enumerate() {
                let m = &mut self.first[si][ei];
                let v = &mut self.second[si][ei];
                let Some(grad) = entry.tensor.grad().map(<[f64]>::to_vec) else {
                    continue;
                };
                for (i, &g) in grad.iter().enumerate() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                }
                if lr != 0.0 {
                    let data = entry.tensor.data_mut();
                    for i in 0..data.len() {
                        let mhat = m[i] / c1;
                        let vhat = v[i] / c2;
                        data[i] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
                entry.tensor.zero_grad();
            }
        }
    }
}
