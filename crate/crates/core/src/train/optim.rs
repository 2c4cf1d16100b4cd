use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::tensor::Tensor;

pub const ADAGRAD_EPS: f64 = 1e-8;
pub const ADADELTA_DECAY: f64 = 0.95;
pub const ADADELTA_EPS: f64 = 1e-6;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Sgd,
    Adagrad,
    Adadelta,
    Adam,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Sgd, Algorithm::Adagrad, Algorithm::Adadelta, Algorithm::Adam];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sgd => "sgd",
            Algorithm::Adagrad => "adagrad",
            Algorithm::Adadelta => "adadelta",
            Algorithm::Adam => "adam",
        }
    }

    pub fn default_lr(self) -> f64 {
        match self {
            Algorithm::Sgd | Algorithm::Adagrad | Algorithm::Adadelta => 0.1,
            Algorithm::Adam => 0.001,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown optimizer {s:?} (sgd, adagrad, adadelta, adam)")))
    }
}

/// Learning-rate grid `b·10^e` for `b ∈ {1, 5}`, `e ∈ {1, -1, …, -6}`,
/// in descending order.
pub fn learning_rate_grid() -> Vec<f64> {
    let mut grid = Vec::new();
    for e in [1i32, -1, -2, -3, -4, -5, -6] {
        for b in [5.0, 1.0] {
            grid.push(format!("{b}e{e}").parse().expect("grid literal"));
        }
    }
    grid
}

/// Optimizer algorithm, learning rate and per-parameter accumulators.
///
/// `first` holds Σg² (Adagrad), the gradient RMS average (Adadelta) or the
/// first moment (Adam); `second` holds the update RMS average (Adadelta) or
/// the second moment (Adam).
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub algorithm: Algorithm,
    pub lr: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(algorithm: Algorithm, lr: f64, params: &[Tensor]) -> Result<Self> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::Invalid(format!("learning rate must be finite and non-negative, got {lr}")));
        }
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect::<Vec<_>>();
        let (first, second) = match algorithm {
            Algorithm::Sgd => (Vec::new(), Vec::new()),
            Algorithm::Adagrad => (zeros(), Vec::new()),
            Algorithm::Adadelta | Algorithm::Adam => (zeros(), zeros()),
        };
        Ok(Self { algorithm, lr, step: 0, first, second })
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    fn check(&self, params: &[Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!("{} params but {} gradients", params.len(), grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient {i}: {:?} vs param {:?}", g.shape(), p.shape())));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient {i}")));
            }
        }
        for acc in [&self.first, &self.second] {
            if !acc.is_empty() && (acc.len() != params.len() || acc.iter().zip(params).any(|(a, p)| a.shape() != p.shape())) {
                return Err(Error::Shape("optimizer accumulators do not match parameters".into()));
            }
        }
        Ok(())
    }

    /// One update. Nothing is modified unless the whole update is finite.
    pub fn apply_update(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        self.check(params, grads)?;
        let step = self.step + 1;
        let lr = self.lr;
        let mut new_params = Vec::with_capacity(params.len());
        let mut new_first = Vec::with_capacity(self.first.len());
        let mut new_second = Vec::with_capacity(self.second.len());
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let (p, g) = (p.data(), g.data());
            let mut np = p.to_vec();
            match self.algorithm {
                Algorithm::Sgd => {
                    for k in 0..p.len() {
                        np[k] = p[k] - lr * g[k];
                    }
                }
                Algorithm::Adagrad => {
                    let mut acc = self.first[i].data().to_vec();
                    for k in 0..p.len() {
                        acc[k] += g[k] * g[k];
                        np[k] = p[k] - lr * g[k] / (acc[k].sqrt() + ADAGRAD_EPS);
                    }
                    new_first.push(acc);
                }
                Algorithm::Adadelta => {
                    let mut acc = self.first[i].data().to_vec();
                    let mut delta = self.second[i].data().to_vec();
                    for k in 0..p.len() {
                        acc[k] = ADADELTA_DECAY * acc[k] + (1.0 - ADADELTA_DECAY) * g[k] * g[k];
                        let update = g[k] * (delta[k] + ADADELTA_EPS).sqrt() / (acc[k] + ADADELTA_EPS).sqrt();
                        np[k] = p[k] - lr * update;
                        delta[k] = ADADELTA_DECAY * delta[k] + (1.0 - ADADELTA_DECAY) * update * update;
                    }
                    new_first.push(acc);
                    new_second.push(delta);
                }
                Algorithm::Adam => {
                    let mut m = self.first[i].data().to_vec();
                    let mut v = self.second[i].data().to_vec();
                    let c1 = 1.0 - ADAM_BETA1.powf(step as f64);
                    let c2 = 1.0 - ADAM_BETA2.powf(step as f64);
                    for k in 0..p.len() {
                        m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
                        v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
                        np[k] = p[k] - lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
                    }
                    new_first.push(m);
                    new_second.push(v);
                }
            }
            if np.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("updated parameter {i}")));
            }
            new_params.push(np);
        }
        for (p, np) in params.iter_mut().zip(new_params) {
            p.data_mut().copy_from_slice(&np);
        }
        for (acc, v) in self.first.iter_mut().zip(new_first) {
            acc.data_mut().copy_from_slice(&v);
        }
        for (acc, v) in self.second.iter_mut().zip(new_second) {
            acc.data_mut().copy_from_slice(&v);
        }
        self.step = step;
        Ok(())
    }

    /// Stores the state under `opt.` keys.
    pub fn write_checkpoint(&self, ck: &mut Checkpoint) {
        ck.meta.insert("opt.algorithm".into(), self.algorithm.to_string());
        ck.meta.insert("opt.lr".into(), format!("{:e}", self.lr));
        ck.meta.insert("opt.step".into(), self.step.to_string());
        for (i, t) in self.first.iter().enumerate() {
            ck.insert(format!("opt.first.{i}"), t.clone());
        }
        for (i, t) in self.second.iter().enumerate() {
            ck.insert(format!("opt.second.{i}"), t.clone());
        }
    }

    /// Restores the state written by [`write_checkpoint`](Self::write_checkpoint),
    /// checking accumulator shapes against `params`.
    pub fn read_checkpoint(ck: &Checkpoint, params: &[Tensor]) -> Result<Self> {
        let get = |k: &str| ck.meta.get(k).ok_or_else(|| Error::Parse(format!("checkpoint lacks {k}")));
        let algorithm: Algorithm = get("opt.algorithm")?.parse()?;
        let lr: f64 = get("opt.lr")?.parse().map_err(|_| Error::Parse("bad opt.lr".into()))?;
        let step: u64 = get("opt.step")?.parse().map_err(|_| Error::Parse("bad opt.step".into()))?;
        let mut state = Self::new(algorithm, lr, params)?;
        state.step = step;
        for (kind, accs) in [("first", &mut state.first), ("second", &mut state.second)] {
            for (i, acc) in accs.iter_mut().enumerate() {
                let name = format!("opt.{kind}.{i}");
                let t = ck.tensor(&name).ok_or_else(|| Error::Parse(format!("checkpoint lacks {name}")))?;
                if t.shape() != acc.shape() {
                    return Err(Error::Shape(format!("{name}: {:?} vs {:?}", t.shape(), acc.shape())));
                }
                *acc = t.clone();
            }
        }
        Ok(state)
    }
}
