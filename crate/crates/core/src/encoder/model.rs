use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::cf::normal_matrix;
use crate::error::{Error, Result};
use crate::numeric::checksum;
use crate::seed;

/// The adaptable projection matrices of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weight {
    Query,
    Key,
    Value,
    Output,
    FfnUp,
    FfnDown,
}

impl Weight {
    pub const ALL: [Weight; 6] = [
        Weight::Query,
        Weight::Key,
        Weight::Value,
        Weight::Output,
        Weight::FfnUp,
        Weight::FfnDown,
    ];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Weight::Query => "wq",
            Weight::Key => "wk",
            Weight::Value => "wv",
            Weight::Output => "wo",
            Weight::FfnUp => "w1",
            Weight::FfnDown => "w2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bias {
    FfnUp,
    FfnDown,
}

/// Identifies one parameter tensor of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamHandle {
    TokenEmbedding,
    Weight { layer: usize, weight: Weight },
    Bias { layer: usize, bias: Bias },
    /// `A` in `W + s·A·B` (in × r)
    AdapterDown { layer: usize, weight: Weight },
    /// `B` in `W + s·A·B` (r × out)
    AdapterUp { layer: usize, weight: Weight },
}

impl ParamHandle {
    pub fn is_adapter(self) -> bool {
        matches!(self, ParamHandle::AdapterDown { .. } | ParamHandle::AdapterUp { .. })
    }

    pub fn name(self) -> String {
        match self {
            ParamHandle::TokenEmbedding => "embed.token".into(),
            ParamHandle::Weight { layer, weight } => format!("layer{layer}.{}", weight.name()),
            ParamHandle::Bias { layer, bias } => format!(
                "layer{layer}.{}",
                match bias {
                    Bias::FfnUp => "b1",
                    Bias::FfnDown => "b2",
                }
            ),
            ParamHandle::AdapterDown { layer, weight } => {
                format!("layer{layer}.adapter.{}.down", weight.name())
            }
            ParamHandle::AdapterUp { layer, weight } => {
                format!("layer{layer}.adapter.{}.up", weight.name())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMode {
    Frozen,
    Trainable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Filled from the tokenizer when the model is built for a corpus.
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// 0 selects `4 * dim`.
    pub ffn_dim: usize,
    pub max_len: usize,
    pub adapter_rank: usize,
    pub adapter_alpha: f64,
    pub adapter_targets: Vec<Weight>,
    pub base: BaseMode,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 0,
            dim: 200,
            layers: 2,
            heads: 2,
            ffn_dim: 0,
            max_len: 128,
            adapter_rank: 8,
            adapter_alpha: 16.0,
            adapter_targets: Weight::ALL.to_vec(),
            base: BaseMode::Frozen,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn ffn(&self) -> usize {
        if self.ffn_dim == 0 {
            4 * self.dim
        } else {
            self.ffn_dim
        }
    }

    pub fn adapter_scale(&self) -> f64 {
        self.adapter_alpha / self.adapter_rank as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.dim == 0 || self.layers == 0 || self.max_len == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "encoder.dim {} is not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.adapter_rank == 0 || self.adapter_rank >= self.dim {
            return Err(Error::Config(format!(
                "adapter rank must satisfy 1 ≤ r < d, got r={} d={}",
                self.adapter_rank, self.dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Adapter {
    down: Array2<f64>,
    up: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    weights: [Array2<f64>; 6],
    b1: Array2<f64>,
    b2: Array2<f64>,
    adapters: [Option<Adapter>; 6],
}

/// The final-layer, last-position hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState(pub Array1<f64>);

impl HiddenState {
    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Fixed sinusoidal position table.
pub fn sinusoidal_positions(max_len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((max_len, dim), |(pos, k)| {
        let pair = (k / 2) as f64;
        let angle = pos as f64 / 10_000f64.powf(2.0 * pair / dim as f64);
        if k % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Causal self-attention + feed-forward stack with residual connections.
///
/// Base weights are plain matrices; each adapted matrix carries a rank-`r`
/// pair so its effective value is `W + (alpha/r)·A·B`. `B` starts at zero.
pub struct EncoderModel {
    config: EncoderConfig,
    token_embedding: Array2<f64>,
    positions: Array2<f64>,
    blocks: Vec<Block>,
    forwards: AtomicU64,
}

impl Clone for EncoderModel {
    fn clone(&self) -> Self {
        EncoderModel {
            config: self.config.clone(),
            token_embedding: self.token_embedding.clone(),
            positions: self.positions.clone(),
            blocks: self.blocks.clone(),
            forwards: AtomicU64::new(self.forward_count()),
        }
    }
}

impl fmt::Debug for EncoderModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EncoderModel")
            .field("config", &self.config)
            .field("forwards", &self.forward_count())
            .finish_non_exhaustive()
    }
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
}

struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    heads_out: Array2<f64>,
    mid: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
}

/// Gradients keyed by parameter. Only trainable parameters are present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncoderGrads {
    pub tensors: BTreeMap<ParamHandle, Array2<f64>>,
}

impl EncoderGrads {
    pub fn accumulate(&mut self, other: &EncoderGrads) {
        for (h, g) in &other.tensors {
            match self.tensors.get_mut(h) {
                Some(t) => *t += g,
                None => {
                    self.tensors.insert(*h, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, by: f64) {
        for g in self.tensors.values_mut() {
            *g *= by;
        }
    }

    fn add(&mut self, h: ParamHandle, g: Array2<f64>) {
        match self.tensors.get_mut(&h) {
            Some(t) => *t += &g,
            None => {
                self.tensors.insert(h, g);
            }
        }
    }
}

fn causal_softmax(scores: &mut Array2<f64>) {
    for (t, mut row) in scores.axis_iter_mut(Axis(0)).enumerate() {
        let m = row.slice(s![..=t]).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut z = 0.0;
        for (j, x) in row.iter_mut().enumerate() {
            if j <= t {
                *x = (*x - m).exp();
                z += *x;
            } else {
                *x = 0.0;
            }
        }
        row.mapv_inplace(|x| x / z);
    }
}

impl EncoderModel {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let f = config.ffn();
        let r = config.adapter_rank;
        let mut rng = seed::rng(seed::derive_seed(config.seed, "encoder/base"));
        let token_embedding = normal_matrix(config.vocab_size, d, 1.0, &mut rng);
        let mut blocks = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let sd = 1.0 / (d as f64).sqrt();
            let sf = 1.0 / (f as f64).sqrt();
            let weights = [
                normal_matrix(d, d, sd, &mut rng),
                normal_matrix(d, d, sd, &mut rng),
                normal_matrix(d, d, sd, &mut rng),
                normal_matrix(d, d, sd, &mut rng),
                normal_matrix(d, f, sd, &mut rng),
                normal_matrix(f, d, sf, &mut rng),
            ];
            blocks.push(Block {
                weights,
                b1: Array2::zeros((1, f)),
                b2: Array2::zeros((1, d)),
                adapters: Default::default(),
            });
        }
        let mut rng = seed::rng(seed::derive_seed(config.seed, "encoder/adapters"));
        for block in blocks.iter_mut() {
            for &w in &config.adapter_targets {
                let (rows, cols) = block.weights[w.index()].dim();
                block.adapters[w.index()] = Some(Adapter {
                    down: normal_matrix(rows, r, 1.0 / (rows as f64).sqrt(), &mut rng),
                    up: Array2::zeros((r, cols)),
                });
            }
        }
        Ok(EncoderModel {
            positions: sinusoidal_positions(config.max_len, d),
            config,
            token_embedding,
            blocks,
            forwards: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn forward_count(&self) -> u64 {
        self.forwards.load(Ordering::Relaxed)
    }

    pub fn reset_forward_count(&self) {
        self.forwards.store(0, Ordering::Relaxed);
    }

    /// Same weights with the fixed position table extended or cut to `max_len`.
    pub fn with_max_len(&self, max_len: usize) -> Result<Self> {
        let mut config = self.config.clone();
        config.max_len = max_len;
        config.validate()?;
        Ok(EncoderModel {
            positions: sinusoidal_positions(max_len, config.dim),
            config,
            token_embedding: self.token_embedding.clone(),
            blocks: self.blocks.clone(),
            forwards: AtomicU64::new(0),
        })
    }

    pub fn set_base_mode(&mut self, mode: BaseMode) {
        self.config.base = mode;
    }

    /// Adapter factors, plus every base tensor when the base is trainable.
    pub fn trainable_parameters(&self) -> Vec<ParamHandle> {
        let mut out = Vec::new();
        if self.config.base == BaseMode::Trainable {
            out.extend(self.base_parameters());
        }
        for (layer, block) in self.blocks.iter().enumerate() {
            for w in Weight::ALL {
                if block.adapters[w.index()].is_some() {
                    out.push(ParamHandle::AdapterDown { layer, weight: w });
                    out.push(ParamHandle::AdapterUp { layer, weight: w });
                }
            }
        }
        out
    }

    pub fn base_parameters(&self) -> Vec<ParamHandle> {
        let mut out = vec![ParamHandle::TokenEmbedding];
        for layer in 0..self.blocks.len() {
            for w in Weight::ALL {
                out.push(ParamHandle::Weight { layer, weight: w });
            }
            out.push(ParamHandle::Bias { layer, bias: Bias::FfnUp });
            out.push(ParamHandle::Bias { layer, bias: Bias::FfnDown });
        }
        out
    }

    pub fn all_parameters(&self) -> Vec<ParamHandle> {
        let mut out = self.base_parameters();
        for (layer, block) in self.blocks.iter().enumerate() {
            for w in Weight::ALL {
                if block.adapters[w.index()].is_some() {
                    out.push(ParamHandle::AdapterDown { layer, weight: w });
                    out.push(ParamHandle::AdapterUp { layer, weight: w });
                }
            }
        }
        out
    }

    pub fn param(&self, h: ParamHandle) -> Option<&Array2<f64>> {
        match h {
            ParamHandle::TokenEmbedding => Some(&self.token_embedding),
            ParamHandle::Weight { layer, weight } => {
                self.blocks.get(layer).map(|b| &b.weights[weight.index()])
            }
            ParamHandle::Bias { layer, bias } => self.blocks.get(layer).map(|b| match bias {
                Bias::FfnUp => &b.b1,
                Bias::FfnDown => &b.b2,
            }),
            ParamHandle::AdapterDown { layer, weight } => self
                .blocks
                .get(layer)
                .and_then(|b| b.adapters[weight.index()].as_ref())
                .map(|a| &a.down),
            ParamHandle::AdapterUp { layer, weight } => self
                .blocks
                .get(layer)
                .and_then(|b| b.adapters[weight.index()].as_ref())
                .map(|a| &a.up),
        }
    }

    pub fn param_mut(&mut self, h: ParamHandle) -> Option<&mut Array2<f64>> {
        match h {
            ParamHandle::TokenEmbedding => Some(&mut self.token_embedding),
            ParamHandle::Weight { layer, weight } => {
                self.blocks.get_mut(layer).map(|b| &mut b.weights[weight.index()])
            }
            ParamHandle::Bias { layer, bias } => self.blocks.get_mut(layer).map(|b| match bias {
                Bias::FfnUp => &mut b.b1,
                Bias::FfnDown => &mut b.b2,
            }),
            ParamHandle::AdapterDown { layer, weight } => self
                .blocks
                .get_mut(layer)
                .and_then(|b| b.adapters[weight.index()].as_mut())
                .map(|a| &mut a.down),
            ParamHandle::AdapterUp { layer, weight } => self
                .blocks
                .get_mut(layer)
                .and_then(|b| b.adapters[weight.index()].as_mut())
                .map(|a| &mut a.up),
        }
    }

    /// Replaces a parameter tensor, checking its shape.
    pub fn set_param(&mut self, h: ParamHandle, value: Array2<f64>) -> Result<()> {
        let slot = self
            .param_mut(h)
            .ok_or_else(|| Error::Contract(format!("no parameter {}", h.name())))?;
        if slot.dim() != value.dim() {
            return Err(Error::Contract(format!(
                "shape mismatch for {}: {:?} vs {:?}",
                h.name(),
                slot.dim(),
                value.dim()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn base_checksum(&self) -> String {
        let handles = self.base_parameters();
        checksum(handles.iter().flat_map(|h| self.param(*h).unwrap().iter()))
    }

    pub fn adapter_checksum(&self) -> String {
        let handles: Vec<_> = self
            .all_parameters()
            .into_iter()
            .filter(|h| h.is_adapter())
            .collect();
        checksum(handles.iter().flat_map(|h| self.param(*h).unwrap().iter()))
    }

    /// `W + s·A·B` for adapted matrices, the base matrix otherwise.
    pub fn effective_weight(&self, layer: usize, weight: Weight) -> Array2<f64> {
        let block = &self.blocks[layer];
        let base = &block.weights[weight.index()];
        match &block.adapters[weight.index()] {
            Some(a) => {
                let mut w = a.down.dot(&a.up);
                w *= self.config.adapter_scale();
                w += base;
                w
            }
            None => base.clone(),
        }
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Contract("cannot encode an empty sequence".into()));
        }
        if ids.len() > self.config.max_len {
            return Err(Error::Contract(format!(
                "sequence of {} tokens exceeds max length {}",
                ids.len(),
                self.config.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::Contract(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn embed(&self, ids: &[u32]) -> Array2<f64> {
        let mut x = Array2::zeros((ids.len(), self.config.dim));
        for (t, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(t);
            row.assign(&self.token_embedding.row(id as usize));
            row += &self.positions.row(t);
        }
        x
    }

    fn run(&self, ids: &[u32], keep: bool) -> (Array2<f64>, Vec<LayerCache>) {
        self.forwards.fetch_add(1, Ordering::Relaxed);
        let d = self.config.dim;
        let heads = self.config.heads;
        let dh = d / heads;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let k_len = ids.len();
        let mut x = self.embed(ids);
        let mut caches = Vec::new();
        for (l, block) in self.blocks.iter().enumerate() {
            let wq = self.effective_weight(l, Weight::Query);
            let wk = self.effective_weight(l, Weight::Key);
            let wv = self.effective_weight(l, Weight::Value);
            let wo = self.effective_weight(l, Weight::Output);
            let w1 = self.effective_weight(l, Weight::FfnUp);
            let w2 = self.effective_weight(l, Weight::FfnDown);
            let q = x.dot(&wq);
            let k = x.dot(&wk);
            let v = x.dot(&wv);
            let mut heads_out = Array2::zeros((k_len, d));
            let mut attn = Vec::with_capacity(heads);
            for h in 0..heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let mut sc = q.slice(cols).dot(&k.slice(cols).t());
                sc *= inv_sqrt;
                causal_softmax(&mut sc);
                heads_out.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
                if keep {
                    attn.push(sc);
                }
            }
            let mid = &x + &heads_out.dot(&wo);
            let pre_act = mid.dot(&w1) + &block.b1;
            let act = pre_act.mapv(gelu);
            let out = &mid + &(act.dot(&w2) + &block.b2);
            if keep {
                caches.push(LayerCache {
                    input: x,
                    q,
                    k,
                    v,
                    attn,
                    heads_out,
                    mid,
                    pre_act,
                    act,
                });
            }
            x = out;
        }
        (x, caches)
    }

    /// Final-layer hidden states for every position.
    pub fn encode_all(&self, ids: &[u32]) -> Result<Array2<f64>> {
        self.check_ids(ids)?;
        Ok(self.run(ids, false).0)
    }

    pub fn encode_ids(&self, ids: &[u32]) -> Result<HiddenState> {
        self.check_ids(ids)?;
        let (x, _) = self.run(ids, false);
        Ok(HiddenState(x.row(ids.len() - 1).to_owned()))
    }

    pub fn encode(&self, tokens: &crate::dataset::TokenSequence) -> Result<HiddenState> {
        self.encode_ids(tokens.ids())
    }

    pub fn forward_train(&self, ids: &[u32]) -> Result<(HiddenState, ForwardCache)> {
        self.check_ids(ids)?;
        let (x, layers) = self.run(ids, true);
        Ok((
            HiddenState(x.row(ids.len() - 1).to_owned()),
            ForwardCache {
                ids: ids.to_vec(),
                layers,
            },
        ))
    }

    /// Gradients of a scalar loss with respect to the trainable parameters,
    /// given `dh = ∂loss/∂h` for the last-position output.
    pub fn backward(&self, cache: &ForwardCache, dh: ArrayView1<'_, f64>) -> EncoderGrads {
        let d = self.config.dim;
        let heads = self.config.heads;
        let dh_size = d / heads;
        let inv_sqrt = 1.0 / (dh_size as f64).sqrt();
        let k_len = cache.ids.len();
        let base_trainable = self.config.base == BaseMode::Trainable;
        let mut grads = EncoderGrads::default();

        let mut dx = Array2::zeros((k_len, d));
        dx.row_mut(k_len - 1).assign(&dh);

        for l in (0..self.blocks.len()).rev() {
            let c = &cache.layers[l];
            let block = &self.blocks[l];
            // feed-forward
            let d_out = dx;
            let w2 = self.effective_weight(l, Weight::FfnDown);
            let w1 = self.effective_weight(l, Weight::FfnUp);
            let dw2 = c.act.t().dot(&d_out);
            let d_act = d_out.dot(&w2.t());
            let d_pre = &d_act * &c.pre_act.mapv(gelu_grad);
            let dw1 = c.mid.t().dot(&d_pre);
            let mut d_mid = d_out.clone();
            d_mid += &d_pre.dot(&w1.t());
            if base_trainable {
                grads.add(
                    ParamHandle::Bias { layer: l, bias: Bias::FfnDown },
                    d_out.sum_axis(Axis(0)).insert_axis(Axis(0)),
                );
                grads.add(
                    ParamHandle::Bias { layer: l, bias: Bias::FfnUp },
                    d_pre.sum_axis(Axis(0)).insert_axis(Axis(0)),
                );
            }
            self.weight_grad(&mut grads, l, Weight::FfnDown, dw2);
            self.weight_grad(&mut grads, l, Weight::FfnUp, dw1);

            // attention
            let wo = self.effective_weight(l, Weight::Output);
            let dwo = c.heads_out.t().dot(&d_mid);
            let d_heads = d_mid.dot(&wo.t());
            self.weight_grad(&mut grads, l, Weight::Output, dwo);
            let mut dq = Array2::zeros((k_len, d));
            let mut dk = Array2::zeros((k_len, d));
            let mut dv = Array2::zeros((k_len, d));
            for h in 0..heads {
                let cols = s![.., h * dh_size..(h + 1) * dh_size];
                let a = &c.attn[h];
                let d_o = d_heads.slice(cols);
                let da = d_o.dot(&c.v.slice(cols).t());
                dv.slice_mut(cols).assign(&a.t().dot(&d_o));
                // softmax backward, row-wise
                let mut ds = &da * a;
                let row_sums = ds.sum_axis(Axis(1));
                for (t, mut row) in ds.axis_iter_mut(Axis(0)).enumerate() {
                    let at = a.row(t);
                    row.zip_mut_with(&at, |x, &p| *x -= p * row_sums[t]);
                }
                ds *= inv_sqrt;
                dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
            }
            let wq = self.effective_weight(l, Weight::Query);
            let wk = self.effective_weight(l, Weight::Key);
            let wv = self.effective_weight(l, Weight::Value);
            let mut d_in = d_mid;
            d_in += &dq.dot(&wq.t());
            d_in += &dk.dot(&wk.t());
            d_in += &dv.dot(&wv.t());
            let x_t = c.input.t();
            self.weight_grad(&mut grads, l, Weight::Query, x_t.dot(&dq));
            self.weight_grad(&mut grads, l, Weight::Key, x_t.dot(&dk));
            self.weight_grad(&mut grads, l, Weight::Value, x_t.dot(&dv));
            let _ = block;
            dx = d_in;
        }
        if base_trainable {
            let mut de = Array2::zeros(self.token_embedding.raw_dim());
            for (t, &id) in cache.ids.iter().enumerate() {
                let mut row = de.row_mut(id as usize);
                row += &dx.row(t);
            }
            grads.add(ParamHandle::TokenEmbedding, de);
        }
        grads
    }

    fn weight_grad(&self, grads: &mut EncoderGrads, layer: usize, weight: Weight, dw: Array2<f64>) {
        let block = &self.blocks[layer];
        if let Some(a) = &block.adapters[weight.index()] {
            let s = self.config.adapter_scale();
            let mut d_down = dw.dot(&a.up.t());
            d_down *= s;
            let mut d_up = a.down.t().dot(&dw);
            d_up *= s;
            grads.add(ParamHandle::AdapterDown { layer, weight }, d_down);
            grads.add(ParamHandle::AdapterUp { layer, weight }, d_up);
        }
        if self.config.base == BaseMode::Trainable {
            grads.add(ParamHandle::Weight { layer, weight }, dw);
        }
    }

    /// Token embedding rows; used by the judgement baseline's head and tests.
    pub fn token_embeddings(&self) -> ArrayView2<'_, f64> {
        self.token_embedding.view()
    }
}
