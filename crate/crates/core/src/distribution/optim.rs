use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayViewMut1};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Array2<f64>,
    v: Array2<f64>,
}

/// Adam with decoupled weight decay, one moment pair per keyed tensor.
///
/// Row-sparse updates touch only the given rows' moments; bias correction
/// uses the shared step count.
#[derive(Debug, Clone)]
pub struct AdamW<K: Ord + Clone> {
    config: AdamWConfig,
    lr: f64,
    t: u64,
    state: BTreeMap<K, Moments>,
}

impl<K: Ord + Clone> AdamW<K> {
    pub fn new(lr: f64, config: AdamWConfig) -> Self {
        AdamW {
            config,
            lr,
            t: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Starts a new optimiser step; call once before the tensor updates.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    fn moments(&mut self, key: &K, shape: (usize, usize)) -> &mut Moments {
        self.state.entry(key.clone()).or_insert_with(|| Moments {
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
        })
    }

    pub fn step_dense(&mut self, key: &K, param: &mut Array2<f64>, grad: &Array2<f64>) {
        let (c, lr, t) = (self.config, self.lr, self.t);
        let st = self.moments(key, param.dim());
        for (r, mut row) in param.rows_mut().into_iter().enumerate() {
            update_row(&c, lr, t, row.view_mut(), grad.row(r).iter().copied(), &mut st.m, &mut st.v, r);
        }
    }

    pub fn step_rows(&mut self, key: &K, param: &mut Array2<f64>, rows: &BTreeMap<usize, Array1<f64>>) {
        let (c, lr, t) = (self.config, self.lr, self.t);
        let st = self.moments(key, param.dim());
        for (&r, g) in rows {
            update_row(&c, lr, t, param.row_mut(r), g.iter().copied(), &mut st.m, &mut st.v, r);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_row(
    c: &AdamWConfig,
    lr: f64,
    t: u64,
    mut p: ArrayViewMut1<'_, f64>,
    g: impl Iterator<Item = f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    row: usize,
) {
    let bc1 = 1.0 - c.beta1.powi(t as i32);
    let bc2 = 1.0 - c.beta2.powi(t as i32);
    let mut m = m.row_mut(row);
    let mut v = v.row_mut(row);
    for (k, gk) in g.enumerate() {
        p[k] -= lr * c.weight_decay * p[k];
        m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
        v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
        let mhat = m[k] / bc1;
        let vhat = v[k] / bc2;
        p[k] -= lr * mhat / (vhat.sqrt() + c.eps);
    }
}
