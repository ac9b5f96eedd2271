#![allow(dead_code)]

pub mod checks;

use kgrl::numcore::{Graph, ParamStore, Var};
use kgrl::Result;

/// Central-difference gradient oracle.
///
/// Returns the worst relative error between the analytic gradient of every
/// parameter element and `(f(x + h) - f(x - h)) / 2h`.
pub fn max_grad_error<F>(store: &mut ParamStore, h: f64, mut f: F) -> f64
where
    F: FnMut(&mut Graph) -> Result<Var>,
{
    let grads = {
        let mut g = Graph::new(store);
        let loss = f(&mut g).unwrap();
        g.backward(loss).unwrap()
    };
    let mut eval = |store: &ParamStore| -> f64 {
        let mut g = Graph::inference(store);
        let loss = f(&mut g).unwrap();
        g.value(loss).item()
    };
    let mut worst = 0.0_f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).numel();
        for k in 0..n {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + h;
            let up = eval(store);
            store.get_mut(id).data_mut()[k] = orig - h;
            let down = eval(store);
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[k]);
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            let err = (analytic - numeric).abs() / denom;
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}

/// Tiny deterministic generator so fixtures do not depend on the library's RNG plumbing.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64) / ((1u64 << 53) as f64)
    }

    /// Uniform in `[-1, 1)`.
    pub fn sym(&mut self) -> f64 {
        2.0 * self.next_f64() - 1.0
    }

    pub fn vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sym()).collect()
    }
}
