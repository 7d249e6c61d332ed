use super::{Matrix, Param};

/// Parameters sharing one learning rate.
pub struct ParamGroup<'a> {
    pub lr: f64,
    pub params: Vec<&'a mut Param>,
}

/// Adam with bias correction and no weight decay. Moment buffers are matched
/// to parameters by position, so groups must be passed in a stable order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Vec<(Matrix, Matrix)>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }
}

impl Adam {
    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, groups: &mut [ParamGroup<'_>]) {
        if self.moments.is_empty() {
            self.moments = groups
                .iter()
                .map(|g| {
                    g.params
                        .iter()
                        .map(|p| {
                            (
                                Matrix::zeros(p.value.raw_dim()),
                                Matrix::zeros(p.value.raw_dim()),
                            )
                        })
                        .collect()
                })
                .collect();
        }
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (group, moments) in groups.iter_mut().zip(self.moments.iter_mut()) {
            let lr = group.lr;
            for (param, (m, v)) in group.params.iter_mut().zip(moments.iter_mut()) {
                ndarray::Zip::from(&mut param.value)
                    .and(&param.grad)
                    .and(m)
                    .and(v)
                    .for_each(|w, &g, m, v| {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    });
            }
        }
    }
}
