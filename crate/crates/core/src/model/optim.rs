use super::params::Parameters;

/// Adam with decoupled weight decay, applied to every tensor.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Parameters,
    v: Parameters,
}

impl AdamW {
    pub fn new(params: &Parameters, lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps, lr, wd) = (self.beta1, self.beta2, self.eps, self.lr, self.weight_decay);
        let tensors = params
            .named_mut()
            .into_iter()
            .zip(grads.named())
            .zip(self.m.named_mut())
            .zip(self.v.named_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in tensors {
            let p = p.as_slice_mut().expect("contiguous");
            let g = g.as_slice().expect("contiguous");
            let m = m.as_slice_mut().expect("contiguous");
            let v = v.as_slice_mut().expect("contiguous");
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * (mh / (vh.sqrt() + eps) + wd * p[i]);
            }
        }
    }
}

/// Scale `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Parameters, max_norm: f64) -> f64 {
    let norm = grads.sq_norm().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;

    #[test]
    fn zero_lr_is_identity() {
        let cfg = ModelConfig::desk();
        let p0 = Parameters::init(&cfg);
        let mut p = p0.clone();
        let mut g = p0.clone();
        g.scale(0.3);
        let mut opt = AdamW::new(&p, 0.0, 0.0);
        opt.step(&mut p, &g);
        assert_eq!(p, p0);
    }

    #[test]
    fn clipping_hits_target() {
        let cfg = ModelConfig::desk();
        let mut g = Parameters::init(&cfg);
        g.scale(1e4);
        let before = clip_global_norm(&mut g, 0.5);
        assert!(before > 0.5);
        assert!((g.sq_norm().sqrt() - 0.5).abs() < 1e-6);
        let mut small = Parameters::init(&cfg);
        small.scale(1e-6);
        let copy = small.clone();
        clip_global_norm(&mut small, 0.5);
        assert_eq!(small, copy);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first update is lr * g/|g| per element.
        let cfg = ModelConfig::desk();
        let p0 = Parameters::init(&cfg);
        let mut p = p0.clone();
        let mut g = p0.zeros_like();
        g.embed[[3, 4]] = 2.5;
        let mut opt = AdamW::new(&p, 1e-3, 0.0);
        opt.step(&mut p, &g);
        let delta = p0.embed[[3, 4]] - p.embed[[3, 4]];
        assert!((delta - 1e-3).abs() < 1e-9);
        assert_eq!(p.embed[[0, 0]], p0.embed[[0, 0]]);
    }
}
