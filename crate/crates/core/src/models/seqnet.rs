//! Sequence network: a per-step tanh MLP feeding one GRU layer, read out by a
//! linear head on the last hidden state. Hand-written backpropagation through time.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeqNetConfig {
    /// Lookback length in bins.
    pub window: usize,
    pub mlp: Vec<usize>,
    pub hidden: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Trailing share of the training samples held out when no validation set is given.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SeqNetConfig {
    fn default() -> Self {
        Self {
            window: 26,
            mlp: vec![64, 32],
            hidden: 32,
            batch_size: 64,
            learning_rate: 1e-3,
            max_epochs: 100,
            patience: 10,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SeqNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.hidden == 0 || self.batch_size == 0 || self.mlp.contains(&0) {
            return Err(Error::Config("window, hidden, batch_size and MLP widths must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("learning_rate must be > 0 and validation_fraction in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Fixed-length windows, `windows[i]` is `window x n_features` row-major (oldest step first).
#[derive(Debug, Clone, Default)]
pub struct SeqData {
    pub window: usize,
    pub n_features: usize,
    pub windows: Vec<f64>,
    pub targets: Vec<f64>,
}

impl SeqData {
    pub fn new(window: usize, n_features: usize) -> Self {
        Self {
            window,
            n_features,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn push(&mut self, window: &[f64], target: f64) {
        assert_eq!(window.len(), self.window * self.n_features, "window shape");
        self.windows.extend_from_slice(window);
        self.targets.push(target);
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let w = self.window * self.n_features;
        &self.windows[i * w..(i + 1) * w]
    }

    fn subset(&self, idx: &[usize]) -> SeqData {
        let mut out = SeqData::new(self.window, self.n_features);
        for &i in idx {
            out.push(self.sample(i), self.targets[i]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Block {
    fn len(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    /// Training stopped on a non-finite loss; parameters are the last finite checkpoint.
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceNet {
    pub config: SeqNetConfig,
    pub n_features: usize,
    pub blocks: Vec<Block>,
    #[serde(skip)]
    pub params: Vec<f64>,
    pub log: TrainingLog,
}

// Block order within `blocks`.
struct Layout {
    mlp: Vec<(usize, usize)>,
    w: [usize; 3],
    u: [usize; 3],
    b: [usize; 3],
    b_hn: usize,
    head_w: usize,
    head_b: usize,
}

const GATES: [&str; 3] = ["z", "r", "n"];

impl SequenceNet {
    /// Parameters drawn uniformly in `+-1/sqrt(fan_in)`; biases start at 0.
    pub fn new(n_features: usize, config: SeqNetConfig) -> Result<Self> {
        config.validate()?;
        if n_features == 0 {
            return Err(Error::InvalidInput("sequence network needs at least one feature".into()));
        }
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut add = |name: String, rows: usize, cols: usize| {
            blocks.push(Block { name, rows, cols, offset });
            offset += rows * cols;
        };
        let mut width = n_features;
        for (i, &w) in config.mlp.iter().enumerate() {
            add(format!("mlp{i}.weight"), w, width);
            add(format!("mlp{i}.bias"), w, 1);
            width = w;
        }
        let h = config.hidden;
        for g in GATES {
            add(format!("gru.w_{g}"), h, width);
            add(format!("gru.u_{g}"), h, h);
            add(format!("gru.b_{g}"), h, 1);
        }
        add("gru.b_hn".into(), h, 1);
        add("head.weight".into(), 1, h);
        add("head.bias".into(), 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = vec![0.0; offset];
        for b in &blocks {
            if b.name.ends_with("bias") || b.name.contains(".b_") {
                continue;
            }
            let bound = 1.0 / (b.cols as f64).sqrt();
            for p in &mut params[b.offset..b.offset + b.len()] {
                *p = rng.random_range(-bound..bound);
            }
        }
        log::debug!("sequence network with {} parameters", params.len());
        Ok(Self {
            config,
            n_features,
            blocks,
            params,
            log: TrainingLog::default(),
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn layout(&self) -> Layout {
        let n_mlp = self.config.mlp.len();
        let mlp = (0..n_mlp).map(|i| (2 * i, 2 * i + 1)).collect();
        let base = 2 * n_mlp;
        Layout {
            mlp,
            w: [base, base + 3, base + 6],
            u: [base + 1, base + 4, base + 7],
            b: [base + 2, base + 5, base + 8],
            b_hn: base + 9,
            head_w: base + 10,
            head_b: base + 11,
        }
    }

    pub fn predict_one(&self, window: &[f64]) -> f64 {
        forward(self, &self.params, window, None)
    }

    pub fn predict(&self, data: &SeqData) -> Result<Vec<f64>> {
        self.check_data(data)?;
        Ok((0..data.len()).into_par_iter().map(|i| self.predict_one(data.sample(i))).collect())
    }

    fn check_data(&self, data: &SeqData) -> Result<()> {
        if data.window != self.config.window || data.n_features != self.n_features {
            return Err(Error::InvalidInput(format!(
                "data windows are {}x{}, network expects {}x{}",
                data.window, data.n_features, self.config.window, self.n_features
            )));
        }
        Ok(())
    }

    /// Squared error on one sample and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, params: &[f64], window: &[f64], target: f64, grad: &mut [f64]) -> f64 {
        let mut cache = Cache::default();
        let y = forward(self, params, window, Some(&mut cache));
        let dy = 2.0 * (y - target);
        backward(self, params, window, &cache, dy, grad);
        (y - target).powi(2)
    }

    fn mean_loss(&self, params: &[f64], data: &SeqData) -> f64 {
        if data.is_empty() {
            return f64::NAN;
        }
        let total: f64 = (0..data.len())
            .into_par_iter()
            .map(|i| (forward(self, params, data.sample(i), None) - data.targets[i]).powi(2))
            .collect::<Vec<_>>()
            .iter()
            .sum();
        total / data.len() as f64
    }

    /// Write a little-endian binary: u64 header length, JSON header, then f64 parameters.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(self)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&(header.len() as u64).to_le_bytes())?;
        f.write_all(&header)?;
        for p in &self.params {
            f.write_all(&p.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut len = [0u8; 8];
        f.read_exact(&mut len)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        f.read_exact(&mut header)?;
        let mut net: SequenceNet = serde_json::from_slice(&header)?;
        let n: usize = net.blocks.iter().map(Block::len).sum();
        let mut buf = vec![0u8; 8 * n];
        f.read_exact(&mut buf)
            .map_err(|e| Error::Validation(format!("{}: truncated parameter section: {e}", path.display())))?;
        net.params = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(net)
    }
}

#[derive(Default)]
struct Cache {
    /// Per step, activations of each MLP layer.
    mlp: Vec<Vec<Vec<f64>>>,
    h: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    n: Vec<Vec<f64>>,
    hn: Vec<Vec<f64>>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `out = W x + b` with `W` stored row-major.
fn affine(w: &[f64], b: Option<&[f64]>, x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        *o = b.map_or(0.0, |b| b[i]) + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `acc += W^T d`
fn affine_t(w: &[f64], d: &[f64], acc: &mut [f64]) {
    let cols = acc.len();
    for (i, di) in d.iter().enumerate() {
        if *di == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (a, wv) in acc.iter_mut().zip(row) {
            *a += wv * di;
        }
    }
}

/// `G += d x^T`
fn outer_acc(g: &mut [f64], d: &[f64], x: &[f64]) {
    let cols = x.len();
    for (i, di) in d.iter().enumerate() {
        let row = &mut g[i * cols..(i + 1) * cols];
        for (gv, xv) in row.iter_mut().zip(x) {
            *gv += di * xv;
        }
    }
}

fn forward(net: &SequenceNet, params: &[f64], window: &[f64], mut cache: Option<&mut Cache>) -> f64 {
    let lay = net.layout();
    let blk = |k: usize| {
        let b = &net.blocks[k];
        &params[b.offset..b.offset + b.len()]
    };
    let hdim = net.config.hidden;
    let f = net.n_features;
    let mut h = vec![0.0; hdim];
    if let Some(c) = cache.as_deref_mut() {
        c.h.push(h.clone());
    }
    let (mut zp, mut rp, mut np, mut tmp) = (vec![0.0; hdim], vec![0.0; hdim], vec![0.0; hdim], vec![0.0; hdim]);
    for t in 0..net.config.window {
        let mut a = window[t * f..(t + 1) * f].to_vec();
        let mut acts = Vec::new();
        for &(wi, bi) in &lay.mlp {
            let mut out = vec![0.0; net.blocks[wi].rows];
            affine(blk(wi), Some(blk(bi)), &a, &mut out);
            out.iter_mut().for_each(|v| *v = v.tanh());
            a = out;
            acts.push(a.clone());
        }
        affine(blk(lay.w[0]), Some(blk(lay.b[0])), &a, &mut zp);
        affine(blk(lay.u[0]), None, &h, &mut tmp);
        let z: Vec<f64> = zp.iter().zip(&tmp).map(|(p, q)| sigmoid(p + q)).collect();
        affine(blk(lay.w[1]), Some(blk(lay.b[1])), &a, &mut rp);
        affine(blk(lay.u[1]), None, &h, &mut tmp);
        let r: Vec<f64> = rp.iter().zip(&tmp).map(|(p, q)| sigmoid(p + q)).collect();
        let mut hn = vec![0.0; hdim];
        affine(blk(lay.u[2]), Some(blk(lay.b_hn)), &h, &mut hn);
        affine(blk(lay.w[2]), Some(blk(lay.b[2])), &a, &mut np);
        let n: Vec<f64> = (0..hdim).map(|k| (np[k] + r[k] * hn[k]).tanh()).collect();
        let h_new: Vec<f64> = (0..hdim).map(|k| (1.0 - z[k]) * n[k] + z[k] * h[k]).collect();
        if let Some(c) = cache.as_deref_mut() {
            c.mlp.push(acts);
            c.z.push(z);
            c.r.push(r);
            c.n.push(n);
            c.hn.push(hn);
            c.h.push(h_new.clone());
        }
        h = h_new;
    }
    blk(lay.head_b)[0] + blk(lay.head_w).iter().zip(&h).map(|(a, b)| a * b).sum::<f64>()
}

fn backward(net: &SequenceNet, params: &[f64], window: &[f64], c: &Cache, dy: f64, grad: &mut [f64]) {
    let lay = net.layout();
    let off = |k: usize| net.blocks[k].offset..net.blocks[k].offset + net.blocks[k].len();
    let hdim = net.config.hidden;
    let f = net.n_features;
    let t_len = net.config.window;
    let h_last = &c.h[t_len];
    grad[off(lay.head_b)][0] += dy;
    for (g, hv) in grad[off(lay.head_w)].iter_mut().zip(h_last) {
        *g += dy * hv;
    }
    let mut dh: Vec<f64> = params[off(lay.head_w)].iter().map(|w| w * dy).collect();
    for t in (0..t_len).rev() {
        let (z, r, n, hn, h_prev) = (&c.z[t], &c.r[t], &c.n[t], &c.hn[t], &c.h[t]);
        let input: &[f64] = c.mlp[t].last().map_or(&window[t * f..(t + 1) * f], Vec::as_slice);
        let mut dh_prev: Vec<f64> = (0..hdim).map(|k| dh[k] * z[k]).collect();
        let dnp: Vec<f64> = (0..hdim).map(|k| dh[k] * (1.0 - z[k]) * (1.0 - n[k] * n[k])).collect();
        let dzp: Vec<f64> = (0..hdim).map(|k| dh[k] * (h_prev[k] - n[k]) * z[k] * (1.0 - z[k])).collect();
        let drp: Vec<f64> = (0..hdim).map(|k| dnp[k] * hn[k] * r[k] * (1.0 - r[k])).collect();
        let dhn: Vec<f64> = (0..hdim).map(|k| dnp[k] * r[k]).collect();
        let mut d_input = vec![0.0; input.len()];
        for (gate, d) in [&dzp, &drp, &dnp].into_iter().enumerate() {
            outer_acc(&mut grad[off(lay.w[gate])], d, input);
            for (g, v) in grad[off(lay.b[gate])].iter_mut().zip(d.iter()) {
                *g += v;
            }
            affine_t(&params[off(lay.w[gate])], d, &mut d_input);
        }
        for (gate, d) in [(0, &dzp), (1, &drp), (2, &dhn)] {
            outer_acc(&mut grad[off(lay.u[gate])], d, h_prev);
            affine_t(&params[off(lay.u[gate])], d, &mut dh_prev);
        }
        for (g, v) in grad[off(lay.b_hn)].iter_mut().zip(&dhn) {
            *g += v;
        }
        // Back through the MLP at this step.
        let mut da = d_input;
        for (layer, &(wi, bi)) in lay.mlp.iter().enumerate().rev() {
            let a = &c.mlp[t][layer];
            let below: &[f64] = if layer == 0 { &window[t * f..(t + 1) * f] } else { &c.mlp[t][layer - 1] };
            let dpre: Vec<f64> = da.iter().zip(a).map(|(d, a)| d * (1.0 - a * a)).collect();
            outer_acc(&mut grad[off(wi)], &dpre, below);
            for (g, v) in grad[off(bi)].iter_mut().zip(&dpre) {
                *g += v;
            }
            if layer > 0 {
                let mut next = vec![0.0; below.len()];
                affine_t(&params[off(wi)], &dpre, &mut next);
                da = next;
            }
        }
        dh = dh_prev;
    }
}

/// Per-block maximum relative error between the analytic gradient and central
/// differences with step `h`, over `n_sampled` parameters spread across blocks.
pub fn seqnet_grad_check(
    net: &SequenceNet,
    window: &[f64],
    target: f64,
    n_sampled: usize,
    h: f64,
    seed: u64,
) -> Vec<(String, f64)> {
    let mut grad = vec![0.0; net.n_params()];
    net.loss_and_grad(&net.params, window, target, &mut grad);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_block = n_sampled.div_ceil(net.blocks.len()).max(1);
    let mut scratch = vec![0.0; net.n_params()];
    let mut out = Vec::new();
    for b in &net.blocks {
        let mut worst: f64 = 0.0;
        for _ in 0..per_block.min(b.len()) {
            let k = b.offset + rng.random_range(0..b.len());
            let mut p = net.params.clone();
            p[k] += h;
            let up = net.loss_and_grad(&p, window, target, &mut scratch);
            p[k] -= 2.0 * h;
            let dn = net.loss_and_grad(&p, window, target, &mut scratch);
            let numeric = (up - dn) / (2.0 * h);
            let rel = (numeric - grad[k]).abs() / numeric.abs().max(grad[k].abs()).max(1e-8);
            worst = worst.max(rel);
        }
        out.push((b.name.clone(), worst));
    }
    out
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

/// Mini-batch Adam on mean squared error with early stopping on validation loss.
/// Per-sample gradients run in parallel but are summed in sample order, so results
/// do not depend on the thread count.
pub fn fit_seqnet(train: &SeqData, validation: Option<&SeqData>, config: &SeqNetConfig) -> Result<SequenceNet> {
    config.validate()?;
    if train.window != config.window {
        return Err(Error::InvalidInput(format!("windows have length {}, config says {}", train.window, config.window)));
    }
    if train.is_empty() {
        return Err(Error::InvalidInput("no training windows".into()));
    }
    let (fit_set, val_set) = match validation {
        Some(v) => (train.clone(), Some(v.clone())),
        None => {
            let n_val = (train.len() as f64 * config.validation_fraction).floor() as usize;
            if n_val == 0 {
                (train.clone(), None)
            } else {
                let cut = train.len() - n_val;
                let idx: Vec<usize> = (0..train.len()).collect();
                (train.subset(&idx[..cut]), Some(train.subset(&idx[cut..])))
            }
        }
    };
    let mut net = SequenceNet::new(train.n_features, config.clone())?;
    net.check_data(&fit_set)?;
    let head_b = net.blocks[net.layout().head_b].offset;
    net.params[head_b] = fit_set.targets.iter().sum::<f64>() / fit_set.len() as f64;
    let np = net.n_params();
    let mut adam = Adam {
        m: vec![0.0; np],
        v: vec![0.0; np],
        t: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..fit_set.len()).collect();
    let mut params = net.params.clone();
    let score = |net: &SequenceNet, p: &[f64]| match &val_set {
        Some(v) => net.mean_loss(p, v),
        None => net.mean_loss(p, &fit_set),
    };
    let mut best = (score(&net, &params), params.clone(), 0usize);
    let mut log = TrainingLog {
        train_loss: vec![net.mean_loss(&params, &fit_set)],
        val_loss: vec![best.0],
        best_epoch: 0,
        aborted: false,
    };
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let grads: Vec<Vec<f64>> = batch
                .par_iter()
                .map(|&i| {
                    let mut g = vec![0.0; np];
                    net.loss_and_grad(&params, fit_set.sample(i), fit_set.targets[i], &mut g);
                    g
                })
                .collect();
            let mut g = vec![0.0; np];
            for gi in &grads {
                for (a, b) in g.iter_mut().zip(gi) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            g.iter_mut().for_each(|v| *v *= scale);
            adam.step(&mut params, &g, config.learning_rate);
        }
        let train_loss = net.mean_loss(&params, &fit_set);
        let val_loss = score(&net, &params);
        if !train_loss.is_finite() || !val_loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            log::warn!("sequence network loss became non-finite at epoch {epoch}; keeping the last finite checkpoint");
            log.aborted = true;
            break;
        }
        log.train_loss.push(train_loss);
        log.val_loss.push(val_loss);
        if val_loss < best.0 {
            best = (val_loss, params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    net.params = best.1;
    log.best_epoch = best.2;
    net.log = log;
    Ok(net)
}
