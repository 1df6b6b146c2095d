use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// A fixed, ordered set of named parameter tensors.
pub trait ParamSet: Clone {
    fn names() -> &'static [&'static str];
    fn tensors(&self) -> Vec<&Matrix>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data().iter().all(|v| v.is_finite()))
    }

    fn to_records(&self) -> Vec<TensorRecord> {
        Self::names()
            .iter()
            .zip(self.tensors())
            .map(|(name, t)| TensorRecord { name: name.to_string(), shape: [t.rows(), t.cols()], data: t.data().to_vec() })
            .collect()
    }

    /// Overwrite every tensor from `records`, checking names and shapes.
    fn load_records(&mut self, records: &[TensorRecord]) -> Result<()> {
        let names = Self::names();
        if records.len() != names.len() {
            return Err(Error::Shape(format!("expected {} tensors, got {}", names.len(), records.len())));
        }
        for ((t, rec), name) in self.tensors_mut().into_iter().zip(records).zip(names) {
            if rec.name != *name || rec.shape != [t.rows(), t.cols()] {
                return Err(Error::Shape(format!(
                    "tensor `{}` {:?} does not match `{name}` {:?}",
                    rec.name,
                    rec.shape,
                    [t.rows(), t.cols()]
                )));
            }
            *t = Matrix::from_vec(rec.shape[0], rec.shape[1], rec.data.clone())?;
        }
        Ok(())
    }
}

/// Checkpoint entry: a flat row-major array with its shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

pub fn sgd_step<P: ParamSet>(params: &mut P, grads: &P, lr: f64) {
    for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * d;
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<P: ParamSet>(params: &P, lr: f64) -> Self {
        let m: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.data().len()]).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, v: m.clone(), m }
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
            for (i, (w, d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * d;
                *v = self.beta2 * *v + (1.0 - self.beta2) * d * d;
                *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}
