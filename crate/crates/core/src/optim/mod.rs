//! Adam and Nadam updates and the reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::autograd::{ParamStore, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Nadam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Nadam => "nadam",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Spec(format!("optim.learning_rate must be positive, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Spec(format!("optim.{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Spec(format!("optim.eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Moment estimates for every parameter of one store.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    lr: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Optimizer {
            cfg,
            lr: cfg.learning_rate,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update using the gradients held in `params`. Nothing is
    /// modified if any gradient is non-finite.
    pub fn step<T: Real>(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        for p in params.params() {
            if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in {} at element {i}", p.name)));
            }
        }
        if self.m.is_empty() {
            self.m = params.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.params().len()
            || self.m.iter().zip(params.params()).any(|(m, p)| m.len() != p.value.len())
        {
            return Err(Error::Shape("parameter layout changed between optimizer steps".into()));
        }
        self.t += 1;
        let OptimizerConfig {
            kind, beta1, beta2, eps, ..
        } = self.cfg;
        let t = self.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let lr = self.lr;
        for ((p, m), v) in params.params_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i].f64();
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                let num = match kind {
                    OptimizerKind::Adam => m_hat,
                    OptimizerKind::Nadam => beta1 * m_hat + (1.0 - beta1) * g / c1,
                };
                p.value[i] = T::of(p.value[i].f64() - lr * num / (v_hat.sqrt() + eps));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauConfig {
    pub patience: usize,
    pub factor: f64,
    pub min_delta: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            patience: 10,
            factor: 0.5,
            min_delta: 1e-4,
        }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Spec("optim.plateau.patience must be at least 1".into()));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Spec(format!("optim.plateau.factor must lie in (0, 1), got {}", self.factor)));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::Spec(format!("optim.plateau.min_delta must be ≥ 0, got {}", self.min_delta)));
        }
        Ok(())
    }
}

/// Halves (by default) the learning rate once the monitored loss has not
/// improved by more than `min_delta` for `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    cfg: PlateauConfig,
    lr: f64,
    best: f64,
    since_best: usize,
}

impl PlateauSchedule {
    pub fn new(cfg: PlateauConfig, lr: f64) -> Result<Self> {
        cfg.validate()?;
        Ok(PlateauSchedule {
            cfg,
            lr,
            best: f64::INFINITY,
            since_best: 0,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records one epoch's loss and returns the learning rate to use next.
    pub fn update(&mut self, loss: f64) -> Result<f64> {
        if loss.is_nan() {
            return Err(Error::Numeric("validation loss is NaN".into()));
        }
        if loss < self.best - self.cfg.min_delta {
            self.best = loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= self.cfg.patience {
                self.lr *= self.cfg.factor;
                self.since_best = 0;
            }
        }
        Ok(self.lr)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn scalar(theta: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add_param("theta", vec![1], vec![theta]);
        s
    }

    fn set_grad(s: &mut ParamStore<f64>, g: f64) {
        s.params_mut()[0].grad[0] = g;
    }

    fn cfg(kind: OptimizerKind, lr: f64) -> OptimizerConfig {
        OptimizerConfig {
            kind,
            learning_rate: lr,
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn adam_first_step() {
        let mut s = scalar(0.0);
        set_grad(&mut s, 1.0);
        let mut opt = Optimizer::new(cfg(OptimizerKind::Adam, 0.1)).unwrap();
        opt.step(&mut s).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((s.value(crate::autograd::ParamId(0))[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn nadam_first_step() {
        // m = 0.1, m̂ = 1, v̂ = 1; numerator 0.9·1 + 0.1·1/0.1 = 1.9.
        let mut s = scalar(0.0);
        set_grad(&mut s, 1.0);
        let mut opt = Optimizer::new(cfg(OptimizerKind::Nadam, 0.1)).unwrap();
        opt.step(&mut s).unwrap();
        let expected = -0.1 * 1.9 / (1.0 + 1e-8);
        assert!((s.params()[0].value[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Nadam] {
            let mut s = scalar(0.7);
            let mut opt = Optimizer::new(cfg(kind, 0.1)).unwrap();
            for _ in 0..5 {
                opt.step(&mut s).unwrap();
            }
            assert_eq!(s.params()[0].value[0], 0.7);
        }
    }

    fn minimize_quadratic(kind: OptimizerKind, lr: f64, steps: usize) -> Vec<f64> {
        let mut s = scalar(1.0);
        let mut opt = Optimizer::new(cfg(kind, lr)).unwrap();
        let mut trace = vec![0.5];
        for _ in 0..steps {
            let th = s.params()[0].value[0];
            set_grad(&mut s, th);
            opt.step(&mut s).unwrap();
            let th = s.params()[0].value[0];
            trace.push(th * th / 2.0);
        }
        trace
    }

    #[test]
    fn adam_two_steps_decrease_quadratic() {
        let f = minimize_quadratic(OptimizerKind::Adam, 0.1, 2);
        assert!(f[1] < f[0] && f[2] < f[1], "{f:?}");
    }

    #[test]
    fn nadam_converges_on_quadratic() {
        // Scalar simulation of the same recurrences as the oracle.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.05);
        let (mut th, mut m, mut v) = (1.0f64, 0.0, 0.0);
        for t in 1..=100 {
            let g = th;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let c1 = 1.0 - b1.powi(t);
            let num = b1 * m / c1 + (1.0 - b1) * g / c1;
            th -= lr * num / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        let f = minimize_quadratic(OptimizerKind::Nadam, lr, 100);
        let ours = (2.0 * f[100]).sqrt();
        assert!((ours - th.abs()).abs() < 1e-12);
        assert!(ours < 0.1, "{ours}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = scalar(1.0);
        set_grad(&mut s, f64::NAN);
        let mut opt = Optimizer::new(OptimizerConfig::default()).unwrap();
        match opt.step(&mut s) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("theta")),
            r => panic!("{r:?}"),
        }
        assert_eq!(s.params()[0].value[0], 1.0);
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn plateau_constant_loss() {
        let mut p = PlateauSchedule::new(PlateauConfig::default(), 0.1).unwrap();
        for epoch in 1..=11 {
            let lr = p.update(1.0).unwrap();
            if epoch < 11 {
                assert_eq!(lr, 0.1, "epoch {epoch}");
            } else {
                assert_eq!(lr, 0.05);
            }
        }
    }

    #[test]
    fn plateau_reset_by_improvement() {
        let mut p = PlateauSchedule::new(PlateauConfig::default(), 0.1).unwrap();
        for epoch in 1..=19 {
            let loss = if epoch == 9 { 0.5 } else { 1.0 };
            let lr = p.update(loss).unwrap();
            assert_eq!(lr, if epoch < 19 { 0.1 } else { 0.05 }, "epoch {epoch}");
        }
        assert!(matches!(p.update(f64::NAN), Err(Error::Numeric(_))));
    }

    #[test]
    fn plateau_decreasing_never_reduces() {
        let mut p = PlateauSchedule::new(PlateauConfig::default(), 0.1).unwrap();
        for e in 0..50 {
            assert_eq!(p.update(10.0 - e as f64 * 0.01).unwrap(), 0.1);
        }
    }

    #[test]
    fn config_validation() {
        assert!(Optimizer::new(cfg(OptimizerKind::Adam, 0.0)).is_err());
        assert!(PlateauSchedule::new(PlateauConfig { patience: 0, ..Default::default() }, 0.1).is_err());
        assert!(PlateauSchedule::new(PlateauConfig { factor: 1.0, ..Default::default() }, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn updates_are_elementwise(
            values in prop::collection::vec(-2.0f64..2.0, 2..12),
            grads in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 12), 1..4),
            nadam in any::<bool>(),
        ) {
            let n = values.len();
            let kind = if nadam { OptimizerKind::Nadam } else { OptimizerKind::Adam };
            let perm: Vec<usize> = (0..n).rev().collect();
            let mut a = ParamStore::new();
            a.add_param("x", vec![n], values.clone());
            let mut b = ParamStore::new();
            b.add_param("x", vec![n], perm.iter().map(|&i| values[i]).collect());
            let (mut oa, mut ob) = (Optimizer::new(cfg(kind, 0.1)).unwrap(), Optimizer::new(cfg(kind, 0.1)).unwrap());
            for g in &grads {
                a.params_mut()[0].grad.copy_from_slice(&g[..n]);
                let gp: Vec<f64> = perm.iter().map(|&i| g[i]).collect();
                b.params_mut()[0].grad.copy_from_slice(&gp);
                oa.step(&mut a).unwrap();
                ob.step(&mut b).unwrap();
            }
            for (j, &i) in perm.iter().enumerate() {
                prop_assert_eq!(a.params()[0].value[i].to_bits(), b.params()[0].value[j].to_bits());
            }
        }

        #[test]
        fn learning_rate_is_non_increasing(losses in prop::collection::vec(0.0f64..2.0, 1..60)) {
            let mut p = PlateauSchedule::new(PlateauConfig { patience: 3, ..Default::default() }, 0.1).unwrap();
            let mut last = 0.1;
            for l in losses {
                let lr = p.update(l).unwrap();
                prop_assert!(lr <= last);
                last = lr;
            }
        }
    }
}
