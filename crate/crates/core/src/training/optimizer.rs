//! AdamW: adaptive moments with decoupled weight decay.

use ndarray::Array2;

#[derive(Debug, Clone)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over an ordered parameter list. The order must be stable
    /// across steps; moment buffers are allocated on first use.
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>], lr: f64) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Array2::zeros(p.dim())).collect();
            self.v = params.iter().map(|p| Array2::zeros(p.dim())).collect();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            // decoupled weight decay
            if self.weight_decay != 0.0 {
                p.mapv_inplace(|w| w - lr * self.weight_decay * w);
            }
            m.zip_mut_with(g, |mi, &gi| *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi);
            v.zip_mut_with(g, |vi, &gi| *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi);
            ndarray::Zip::from(&mut **p)
                .and(&*m)
                .and(&*v)
                .for_each(|w, &mi, &vi| {
                    let mhat = mi / bc1;
                    let vhat = vi / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn descends_a_quadratic() {
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.0);
        let mut w = array![[5.0]];
        for _ in 0..400 {
            let g = array![[2.0 * w[(0, 0)]]];
            let mut params = [&mut w];
            opt.step(&mut params, &[g], 0.05);
        }
        assert!(w[(0, 0)].abs() < 0.05, "w = {}", w[(0, 0)]);
    }

    #[test]
    fn weight_decay_shrinks_parameters_without_gradient() {
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.1);
        let mut w = array![[1.0]];
        let g = array![[0.0]];
        let before = w[(0, 0)];
        let mut params = [&mut w];
        opt.step(&mut params, &[g], 0.01);
        assert!(w[(0, 0)] < before);
    }
}
