use std::collections::BTreeMap;

use super::{round_f32, ParamStore};

/// Adam with bias correction. Values are rounded back to f32 after every
/// update and gradients are zeroed.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        self.step_where(store, |_| true);
    }

    /// Updates only parameters whose id satisfies `pred`; all gradients are
    /// zeroed regardless.
    pub fn step_where(&mut self, store: &mut ParamStore, pred: impl Fn(&str) -> bool) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for p in store.iter_mut() {
            if pred(&p.id) {
                let n = p.value.len();
                let m = self.m.entry(p.id.clone()).or_insert_with(|| vec![0.0; n]);
                let v = self.v.entry(p.id.clone()).or_insert_with(|| vec![0.0; n]);
                for i in 0..n {
                    let g = p.grad[i];
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                    let update = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                    p.value[i] = round_f32(p.value[i] - update);
                }
            }
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_values() {
        let mut s = ParamStore::new();
        s.insert("w", vec![2], vec![0.5, -1.0]).unwrap();
        let before = s.clone();
        let mut opt = Adam::new(1e-2);
        opt.step(&mut s);
        assert_eq!(s, before);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn constant_grad_descends() {
        let mut s = ParamStore::new();
        s.insert("w", vec![1], vec![0.0]).unwrap();
        let mut opt = Adam::new(1e-3);
        for _ in 0..100 {
            s.get_mut("w").unwrap().grad[0] = 3.0;
            opt.step(&mut s);
        }
        assert!(s.value("w").unwrap()[0] < -0.05);
        assert_eq!(s.get("w").unwrap().grad[0], 0.0);
    }

    #[test]
    fn quadratic_converges() {
        let mut s = ParamStore::new();
        s.insert("w", vec![1], vec![1.0]).unwrap();
        let target = 0.3;
        let mut opt = Adam::new(1e-2);
        for _ in 0..5000 {
            let w = s.value("w").unwrap()[0];
            s.get_mut("w").unwrap().grad[0] = 2.0 * (w - target);
            opt.step(&mut s);
        }
        let w = s.value("w").unwrap()[0];
        assert!((w - target).powi(2) < 1e-6, "{w}");
    }

    #[test]
    fn step_where_skips_frozen() {
        let mut s = ParamStore::new();
        s.insert("a", vec![1], vec![1.0]).unwrap();
        s.insert("b", vec![1], vec![1.0]).unwrap();
        s.get_mut("a").unwrap().grad[0] = 1.0;
        s.get_mut("b").unwrap().grad[0] = 1.0;
        let mut opt = Adam::new(0.1);
        opt.step_where(&mut s, |id| id == "a");
        assert!(s.value("a").unwrap()[0] < 1.0);
        assert_eq!(s.value("b").unwrap()[0], 1.0);
        assert_eq!(s.get("b").unwrap().grad[0], 0.0);
    }
}
