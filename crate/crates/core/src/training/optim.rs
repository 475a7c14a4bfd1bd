use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::InvalidConfig(format!("unknown optimizer '{other}', expected sgd or adam"))),
        }
    }
}

/// SGD or Adam over a fixed subset of a model's parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    indices: Vec<usize>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ParamStore, indices: Vec<usize>) -> Self {
        let zeros = |i: &usize| Tensor::zeros(params.get(*i).shape());
        let (m, v) = match kind {
            OptimizerKind::Adam => (indices.iter().map(zeros).collect(), indices.iter().map(zeros).collect()),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Self { kind, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, indices, m, v, t: 0 }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update; `grads[k]` belongs to `indices()[k]`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.indices.len() {
            return Err(Error::ShapeMismatch(format!("{} gradients for {} tensors", grads.len(), self.indices.len())));
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (&i, g) in self.indices.iter().zip(grads) {
                    for (p, d) in params.get_mut(i).data_mut().iter_mut().zip(g.data()) {
                        *p -= self.lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (self.beta1, self.beta2);
                let c1 = 1.0 - b1.powi(self.t as i32);
                let c2 = 1.0 - b2.powi(self.t as i32);
                for (k, (&i, g)) in self.indices.iter().zip(grads).enumerate() {
                    let p = params.get_mut(i).data_mut();
                    let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
                    for (((p, &d), m), v) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (1.0 - b1) * d;
                        *v = b2 * *v + (1.0 - b2) * d * d;
                        *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }

    /// Moment buffers and step counter as a checkpoint-compatible store.
    pub fn state(&self, params: &ParamStore) -> ParamStore {
        let mut s = ParamStore::new();
        s.push("optim.step", Tensor::scalar(self.t as f64));
        for (k, &i) in self.indices.iter().enumerate() {
            if self.kind == OptimizerKind::Adam {
                s.push(format!("optim.m.{}", params.name(i)), self.m[k].clone());
                s.push(format!("optim.v.{}", params.name(i)), self.v[k].clone());
            }
        }
        s
    }

    /// Restores state written by [`state`](Self::state) for the same parameter set.
    pub fn load_state(&mut self, params: &ParamStore, state: &ParamStore) -> Result<()> {
        let bad = |what: String| Error::Format(format!("optimizer state: {what}"));
        let step = state.index_of("optim.step").ok_or_else(|| bad("missing step".into()))?;
        let t = state.get(step).item();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        if self.kind == OptimizerKind::Adam {
            for &i in &self.indices {
                for (prefix, out) in [("optim.m.", &mut m), ("optim.v.", &mut v)] {
                    let name = format!("{prefix}{}", params.name(i));
                    let k = state.index_of(&name).ok_or_else(|| bad(format!("missing {name}")))?;
                    if state.get(k).shape() != params.get(i).shape() {
                        return Err(bad(format!("{name} has shape {:?}", state.get(k).shape())));
                    }
                    out.push(state.get(k).clone());
                }
            }
        }
        self.t = t as u64;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut p = ParamStore::new();
        p.push("a", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        p.push("b", Tensor::new(vec![1], vec![4.0]).unwrap());
        p
    }

    #[test]
    fn zero_learning_rate_is_bit_identity() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut p = store();
            let before = p.clone();
            let mut o = Optimizer::new(kind, 0.0, &p, vec![0, 1]);
            let g = [Tensor::new(vec![3], vec![0.3, -1e3, 7.0]).unwrap(), Tensor::scalar(1.0).reshape(&[1]).unwrap()];
            o.step(&mut p, &g).unwrap();
            assert_eq!(p, before);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        let mut p = store();
        let mut o = Optimizer::new(OptimizerKind::Adam, 0.01, &p, vec![0]);
        o.step(&mut p, &[Tensor::new(vec![3], vec![2.0, -0.5, 1e-3]).unwrap()]).unwrap();
        let want = [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01];
        for (a, b) in p.get(0).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-7, "{a} {b}");
        }
        assert_eq!(p.get(1).data(), [4.0]);
    }

    #[test]
    fn sgd_matches_closed_form_on_quadratic() {
        // f(x) = x^2 / 2, x <- x (1 - lr)
        let mut p = store();
        let mut o = Optimizer::new(OptimizerKind::Sgd, 0.1, &p, vec![1]);
        for _ in 0..10 {
            let g = p.get(1).clone();
            o.step(&mut p, &[g]).unwrap();
        }
        assert!((p.get(1).data()[0] - 4.0 * 0.9f64.powi(10)).abs() < 1e-12);
    }

    #[test]
    fn state_round_trip_resumes_exactly() {
        let grads = |k: f64| [Tensor::new(vec![3], vec![k, -k, 0.5 * k]).unwrap(), Tensor::new(vec![1], vec![k * k]).unwrap()];
        let mut p1 = store();
        let mut o1 = Optimizer::new(OptimizerKind::Adam, 0.05, &p1, vec![0, 1]);
        for k in 0..4 {
            o1.step(&mut p1, &grads(k as f64)).unwrap();
        }
        let mut p2 = store();
        let mut o2 = Optimizer::new(OptimizerKind::Adam, 0.05, &p2, vec![0, 1]);
        for k in 0..2 {
            o2.step(&mut p2, &grads(k as f64)).unwrap();
        }
        let saved = ParamStore::from_bytes(&o2.state(&p2).to_bytes()).unwrap();
        let mut o3 = Optimizer::new(OptimizerKind::Adam, 0.05, &p2, vec![0, 1]);
        o3.load_state(&p2, &saved).unwrap();
        for k in 2..4 {
            o3.step(&mut p2, &grads(k as f64)).unwrap();
        }
        assert_eq!(p1, p2);
    }
}
