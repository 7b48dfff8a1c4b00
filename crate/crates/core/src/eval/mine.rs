use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::numeric::{AdamW, AdamWConfig, Decay, LrSchedule, ParamId, ParamStore, Tape, Tensor};

/// Statistic-network and optimization settings for the Donsker–Varadhan
/// estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MineConfig {
    /// Fully connected layers, the scalar output layer included.
    pub layers: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup_frac: f64,
    pub repetitions: usize,
    /// Epochs averaged into the final estimate.
    pub readout_epochs: usize,
    pub seed: u64,
}

impl Default for MineConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            hidden: 1024,
            epochs: 100,
            batch: 512,
            lr: 1e-4,
            warmup_frac: 0.1,
            repetitions: 50,
            readout_epochs: 10,
            seed: 0,
        }
    }
}

impl MineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 || self.hidden == 0 || self.epochs == 0 || self.batch < 2 || self.repetitions == 0 {
            return Err(contract(format!("degenerate MINE config {self:?}")));
        }
        if !(self.lr > 0.0) || self.readout_epochs == 0 {
            return Err(contract("learning rate and read-out window must be positive"));
        }
        Ok(())
    }
}

/// Per-repetition estimates (nats, clamped at 0) with their median and
/// quartiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MineResult {
    pub estimates: Vec<f64>,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl MineResult {
    pub fn from_estimates(estimates: Vec<f64>) -> Self {
        let mut s = estimates.clone();
        s.sort_by(f64::total_cmp);
        Self {
            median: quantile(&s, 0.5),
            q1: quantile(&s, 0.25),
            q3: quantile(&s, 0.75),
            estimates,
        }
    }
}

struct Network {
    layers: Vec<(ParamId, ParamId)>,
}

impl Network {
    fn new(input: usize, cfg: &MineConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut fan_in = input;
        for l in 0..cfg.layers {
            let out = if l + 1 == cfg.layers { 1 } else { cfg.hidden };
            let std = (2.0 / fan_in as f64).sqrt();
            let w = store.add(format!("t{l}.w"), Tensor::randn(&[fan_in, out], std, rng));
            let b = store.add(format!("t{l}.b"), Tensor::zeros(&[out]));
            layers.push((w, b));
            fan_in = out;
        }
        Self { layers }
    }
}

fn rows(data: &[Vec<f64>], idx: &[usize]) -> Result<Tensor> {
    let cols = data[0].len();
    let mut v = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        v.extend_from_slice(&data[i]);
    }
    Ok(Tensor::new(&[idx.len(), cols], v)?)
}

fn estimate_once(x: &[Vec<f64>], y: &[Vec<f64>], cfg: &MineConfig, seed: u64) -> Result<f64> {
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let net = Network::new(x[0].len() + y[0].len(), cfg, &mut store, &mut rng);
    let per_epoch = n / cfg.batch;
    let total = per_epoch * cfg.epochs;
    let warmup = ((cfg.warmup_frac * total as f64).round() as usize).min(total - 1);
    let schedule = LrSchedule::new(cfg.lr, 0.0, total, warmup, Decay::Linear)?;
    let mut opt = AdamW::for_store(
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        },
        &store,
    )?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_values = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks_exact(cfg.batch) {
            let mut shuffled = batch.to_vec();
            shuffled.shuffle(&mut rng);
            let xb = rows(x, batch)?;
            let yb = rows(y, batch)?;
            let ym = rows(y, &shuffled)?;
            store.zero_grad();
            let mut tape = Tape::with_nan_check(false);
            let p = store.bind(&mut tape, true);
            let xv = tape.constant(xb);
            let yv = tape.constant(yb);
            let mv = tape.constant(ym);
            let joint = tape.concat_cols(&[xv, yv])?;
            let marg = tape.concat_cols(&[xv, mv])?;
            let mut h = tape.concat_rows(&[joint, marg])?;
            for (l, &(w, b)) in net.layers.iter().enumerate() {
                h = tape.matmul(h, p[w])?;
                h = tape.add(h, p[b])?;
                if l + 1 < net.layers.len() {
                    h = tape.relu(h)?;
                }
            }
            let tj = tape.slice_rows(h, 0, batch.len())?;
            let tm = tape.slice_rows(h, batch.len(), batch.len())?;
            let ej = tape.mean(tj)?;
            let lme = tape.log_mean_exp(tm)?;
            let dv = tape.sub(ej, lme)?;
            let value = tape.value(dv).item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step: step + 1,
                    detail: "non-finite Donsker-Varadhan bound".into(),
                });
            }
            let loss = tape.neg(dv)?;
            tape.backward(loss)?;
            store.accumulate(&tape, &p);
            drop(tape);
            opt.set_lr(schedule.lr_at(step + 1)?);
            opt.step_store(&mut store)?;
            step += 1;
            sum += value;
        }
        epoch_values.push(sum / per_epoch as f64);
    }
    let k = cfg.readout_epochs.min(epoch_values.len());
    let tail = &epoch_values[epoch_values.len() - k..];
    Ok((tail.iter().sum::<f64>() / k as f64).max(0.0))
}

/// Mutual-information lower bound between paired samples, repeated with
/// independent seeds.
pub fn mine_estimate(x: &[Vec<f64>], y: &[Vec<f64>], cfg: &MineConfig) -> Result<MineResult> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(contract(format!("{} x samples but {} y samples", x.len(), y.len())));
    }
    if x.len() < cfg.batch {
        return Err(contract(format!("{} samples fewer than batch size {}", x.len(), cfg.batch)));
    }
    for (name, m) in [("x", x), ("y", y)] {
        let d = m[0].len();
        if d == 0 || m.iter().any(|r| r.len() != d) {
            return Err(contract(format!("{name} rows must share a positive dimension")));
        }
    }
    let estimates = (0..cfg.repetitions)
        .map(|r| estimate_once(x, y, cfg, cfg.seed.wrapping_add(r as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MineResult::from_estimates(estimates))
}

/// Column-wise z-scoring; constant columns become zero.
pub fn standardize(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if rows.is_empty() {
        return Vec::new();
    }
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
    }
    let mut var = vec![0.0; d];
    for r in rows {
        var.iter_mut().zip(r.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m).powi(2) / n);
    }
    rows.iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(j, v)| if var[j] > 1e-24 { (v - mean[j]) / var[j].sqrt() } else { 0.0 })
                .collect()
        })
        .collect()
}
