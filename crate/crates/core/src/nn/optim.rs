use super::ParamStore;

/// RMSProp with the accumulator outside the square root:
/// `acc <- decay * acc + (1 - decay) * g^2`, `p <- p - lr * g / (sqrt(acc) + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    acc: ParamStore,
}

impl RmsProp {
    pub fn new(params: &ParamStore) -> Self {
        Self::with_hyper(params, 1e-3, 0.99, 1e-8)
    }

    pub fn with_hyper(params: &ParamStore, learning_rate: f64, decay: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            decay,
            epsilon,
            acc: params.zeros_like(),
        }
    }

    pub fn accumulator(&self) -> &ParamStore {
        &self.acc
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &ParamStore) {
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let acc = self
                .acc
                .get_mut(name)
                .expect("optimizer state built for a different parameter set");
            for ((pv, &gv), av) in p.data_mut().iter_mut().zip(g.data()).zip(acc.data_mut()) {
                *av = self.decay * *av + (1.0 - self.decay) * gv * gv;
                *pv -= self.learning_rate * gv / (av.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(v));
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store(0.7);
        let mut opt = RmsProp::new(&p);
        opt.update(&mut p, &store(0.0));
        assert_eq!(p.get("w").unwrap().item(), 0.7);
    }

    #[test]
    fn single_step_matches_hand_computation() {
        // acc = 0.01 * 4 = 0.04, step = 1e-3 * 2 / (0.2 + 1e-8)
        let mut p = store(1.0);
        let mut opt = RmsProp::new(&p);
        opt.update(&mut p, &store(2.0));
        let expected = 1.0 - 1e-3 * 2.0 / (0.04f64.sqrt() + 1e-8);
        assert!((p.get("w").unwrap().item() - expected).abs() < 1e-15);
        assert!((opt.accumulator().get("w").unwrap().item() - 0.04).abs() < 1e-15);
        assert!((p.get("w").unwrap().item() - 0.9900000004999999).abs() < 1e-12);
    }

    #[test]
    fn identical_calls_are_identical() {
        let (mut p1, mut p2) = (store(0.3), store(0.3));
        let (mut o1, mut o2) = (RmsProp::new(&p1), RmsProp::new(&p2));
        o1.update(&mut p1, &store(-1.5));
        o2.update(&mut p2, &store(-1.5));
        assert_eq!(p1, p2);
        assert_eq!(o1, o2);
    }
}
