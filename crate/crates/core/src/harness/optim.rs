use crate::numcore::ParamStore;

pub const CLIP_NORM: f64 = 1.0;

/// Adam with global gradient-norm clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = (0..params.len()).map(|i| vec![0.0; params.values(i).len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Clip `grads` to global norm [`CLIP_NORM`] and update `params`.
    /// Returns the pre-clipping norm.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) -> f64 {
        let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        let scale = if norm > CLIP_NORM { CLIP_NORM / norm } else { 1.0 };
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let values = params.values_mut(i);
            for (j, &gj) in g.iter().enumerate() {
                let gj = gj * scale;
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gj;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gj * gj;
                values[j] -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParamStore::new();
        p.add("x", &[2], vec![1.0, -1.0]);
        let mut opt = Adam::new(&p, 0.1);
        opt.step(&mut p, &[vec![0.3, -0.2]]);
        assert!((p.values(0)[0] - 0.9).abs() < 1e-6);
        assert!((p.values(0)[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn large_gradients_are_clipped() {
        let mut p = ParamStore::new();
        p.add("x", &[1], vec![0.0]);
        let mut opt = Adam::new(&p, 0.1);
        let norm = opt.step(&mut p, &[vec![30.0]]);
        assert_eq!(norm, 30.0);
        assert!((opt.m[0][0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = ParamStore::new();
        p.add("x", &[1], vec![3.0]);
        let mut opt = Adam::new(&p, 0.05);
        for _ in 0..500 {
            let g = 2.0 * p.values(0)[0];
            opt.step(&mut p, &[vec![g]]);
        }
        assert!(p.values(0)[0].abs() < 1e-2);
    }
}
