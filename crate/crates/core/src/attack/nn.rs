use serde::{Deserialize, Serialize};

use super::features::{check_training_set, AttackFeature, FeatureMode, Standardizer};
use crate::audit::metrics::auc;
use crate::error::{Error, Result};
use crate::numerics::{
    adam_step, bce_with_logit, finite_diff_check, sigmoid, stream_id, AdamConfig, AdamState, Matrix, ParamBlock, Rng,
    FD_STEP,
};

/// Hyperparameters shared by DCA and MIAttacker training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Fraction of each class held out for early stopping.
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for AttackTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 256,
            max_epochs: 500,
            patience: 20,
            valid_fraction: 0.1,
            seed: 0,
        }
    }
}

impl AttackTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("attack lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("attack batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return Err(Error::Config("attack valid_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Three dense layers, ReLU on the two hidden ones, sigmoid output. With
/// `gated`, the first hidden activation is multiplied elementwise by a
/// learned vector (the membership embedding) before the second layer.
///
/// Block order: `w0 b0 [gate] w1 b1 w2 b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Network {
    pub gated: bool,
    pub blocks: Vec<ParamBlock>,
}

struct Pass {
    a0: Vec<f64>,
    h0: Vec<f64>,
    g: Vec<f64>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    logit: f64,
    p: f64,
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

impl Network {
    /// He-normal weights with fan-out scaling, zero biases, unit gate.
    ///
    /// Weights are drawn column by column from a per-layer stream, so the
    /// columns for the first inputs do not depend on how many inputs follow.
    pub fn new(input: usize, widths: [usize; 2], gated: bool, seed: u64) -> Self {
        let base = Rng::new(seed, stream_id("attack-init"));
        let dims = [input, widths[0], widths[1], 1];
        let mut blocks = Vec::new();
        for layer in 0..3 {
            let (fan_in, fan_out) = (dims[layer], dims[layer + 1]);
            let mut rng = base.fork(&format!("layer{layer}"));
            let std = (2.0 / fan_out as f64).sqrt();
            let mut w = Matrix::zeros(fan_out, fan_in);
            for c in 0..fan_in {
                for r in 0..fan_out {
                    w.set(r, c, std * rng.normal());
                }
            }
            blocks.push(ParamBlock::new(format!("w{layer}"), w));
            blocks.push(ParamBlock::new(format!("b{layer}"), Matrix::zeros(fan_out, 1)));
            if gated && layer == 0 {
                blocks.push(ParamBlock::new(
                    "gate",
                    Matrix::from_vec(1, fan_out, vec![1.0; fan_out]),
                ));
            }
        }
        Self { gated, blocks }
    }

    fn idx(&self, name: &str) -> usize {
        let base = match name {
            "w0" => 0,
            "b0" => 1,
            "gate" => 2,
            "w1" => 2,
            "b1" => 3,
            "w2" => 4,
            "b2" => 5,
            _ => unreachable!("unknown block {name}"),
        };
        if self.gated && !matches!(name, "w0" | "b0" | "gate") {
            base + 1
        } else {
            base
        }
    }

    fn v(&self, name: &str) -> &Matrix {
        &self.blocks[self.idx(name)].values
    }

    pub fn input_dim(&self) -> usize {
        self.v("w0").cols()
    }

    pub fn gate(&self) -> Option<&[f64]> {
        self.gated.then(|| self.v("gate").as_slice())
    }

    pub(crate) fn gate_mut(&mut self) -> Option<&mut [f64]> {
        if !self.gated {
            return None;
        }
        let i = self.idx("gate");
        Some(self.blocks[i].values.as_mut_slice())
    }

    fn forward(&self, x: &[f64]) -> Pass {
        let layer = |w: &str, b: &str, input: &[f64]| {
            let (wm, bm) = (self.v(w), self.v(b));
            let mut a = vec![0.0; wm.rows()];
            wm.matvec_into(input, &mut a);
            a.iter_mut().zip(bm.as_slice()).for_each(|(a, b)| *a += b);
            a
        };
        let a0 = layer("w0", "b0", x);
        let h0: Vec<f64> = a0.iter().map(|&v| relu(v)).collect();
        let g = match self.gate() {
            Some(gate) => h0.iter().zip(gate).map(|(h, e)| h * e).collect(),
            None => h0.clone(),
        };
        let a1 = layer("w1", "b1", &g);
        let h1: Vec<f64> = a1.iter().map(|&v| relu(v)).collect();
        let a2 = layer("w2", "b2", &h1);
        Pass {
            a0,
            h0,
            g,
            a1,
            h1,
            logit: a2[0],
            p: sigmoid(a2[0]),
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.forward(x).p
    }

    /// Adds `scale · ∂loss/∂θ` for one sample into `grads` and returns the
    /// unscaled loss.
    fn accumulate(&self, x: &[f64], y: f64, scale: f64, grads: &mut [Matrix]) -> Result<f64> {
        let pass = self.forward(x);
        let loss = bce_with_logit(pass.logit, y)?;
        let d2 = scale * (pass.p - y);

        let (iw2, ib2, iw1, ib1, iw0, ib0) = (
            self.idx("w2"),
            self.idx("b2"),
            self.idx("w1"),
            self.idx("b1"),
            self.idx("w0"),
            self.idx("b0"),
        );
        grads[iw2].add_outer(&[d2], &pass.h1, 1.0);
        grads[ib2].as_mut_slice()[0] += d2;

        let mut d1 = vec![0.0; pass.h1.len()];
        self.v("w2").matvec_t_acc(&[d2], &mut d1);
        d1.iter_mut().zip(&pass.a1).for_each(|(d, a)| {
            if *a <= 0.0 {
                *d = 0.0
            }
        });
        grads[iw1].add_outer(&d1, &pass.g, 1.0);
        grads[ib1].as_mut_slice().iter_mut().zip(&d1).for_each(|(g, d)| *g += d);

        let mut dg = vec![0.0; pass.g.len()];
        self.v("w1").matvec_t_acc(&d1, &mut dg);
        let mut d0 = match self.gate() {
            Some(gate) => {
                let ig = self.idx("gate");
                grads[ig]
                    .as_mut_slice()
                    .iter_mut()
                    .zip(dg.iter().zip(&pass.h0))
                    .for_each(|(g, (d, h))| *g += d * h);
                dg.iter().zip(gate).map(|(d, e)| d * e).collect()
            }
            None => dg,
        };
        d0.iter_mut().zip(&pass.a0).for_each(|(d, a)| {
            if *a <= 0.0 {
                *d = 0.0
            }
        });
        grads[iw0].add_outer(&d0, x, 1.0);
        grads[ib0].as_mut_slice().iter_mut().zip(&d0).for_each(|(g, d)| *g += d);
        Ok(loss)
    }

    fn zero_grads_like(&self) -> Vec<Matrix> {
        self.blocks
            .iter()
            .map(|b| Matrix::zeros(b.values.rows(), b.values.cols()))
            .collect()
    }

    pub fn mean_loss(&self, xs: &[Vec<f64>], ys: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            total += bce_with_logit(self.forward(x).logit, y)?;
        }
        Ok(total / xs.len() as f64)
    }

    /// Gradient of the mean loss in flat block order.
    pub fn flat_grad(&self, xs: &[Vec<f64>], ys: &[f64]) -> Result<Vec<f64>> {
        let mut grads = self.zero_grads_like();
        let scale = 1.0 / xs.len() as f64;
        for (x, &y) in xs.iter().zip(ys) {
            self.accumulate(x, y, scale, &mut grads)?;
        }
        Ok(grads.iter().flat_map(|g| g.as_slice().iter().copied()).collect())
    }

    pub fn flat_params(&self) -> Vec<f64> {
        crate::numerics::flatten_values(&self.blocks)
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        crate::numerics::assign_values(&mut self.blocks, flat);
    }

    pub(crate) fn restore_grads(&mut self) {
        self.blocks.iter_mut().for_each(ParamBlock::ensure_grad);
    }
}

/// Worst relative error of backprop against central differences on a
/// fresh network. A gate, if any, is drawn away from its all-ones start so
/// that it does not act as the identity.
pub(crate) fn gradient_check(widths: [usize; 2], gated: bool, xs: &[Vec<f64>], ys: &[f64], seed: u64) -> Result<f64> {
    let input = xs.first().map_or(0, Vec::len);
    if input == 0 || xs.len() != ys.len() {
        return Err(Error::Validation(
            "gradient check needs matching nonempty inputs and labels".into(),
        ));
    }
    let mut net = Network::new(input, widths, gated, seed);
    if let Some(g) = net.gate_mut() {
        let mut rng = Rng::new(seed, stream_id("gate-jitter"));
        g.iter_mut().for_each(|e| *e = rng.uniform_range(0.2, 1.5));
    }
    let theta = net.flat_params();
    let analytic = net.flat_grad(xs, ys)?;
    let mut probe = net.clone();
    finite_diff_check(
        |t| {
            probe.set_flat_params(t);
            probe.mean_loss(xs, ys)
        },
        &theta,
        &analytic,
        FD_STEP,
        None,
    )
}

/// Trained network plus the standardizer it was fitted with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct FittedNet {
    pub mode: FeatureMode,
    pub standardizer: Standardizer,
    pub net: Network,
}

impl FittedNet {
    pub fn predict(&self, values: &[f64]) -> f64 {
        self.net.predict(&self.standardizer.apply(values))
    }
}

/// Stratified hold-out: `valid_fraction` of each class, at least one record
/// of a class with two or more members.
fn stratified_split(labels: &[u8], fraction: f64, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rng.shuffle(&mut idx);
        let mut n_valid = (fraction * idx.len() as f64).round() as usize;
        if fraction > 0.0 && idx.len() >= 2 {
            n_valid = n_valid.clamp(1, idx.len() - 1);
        }
        valid.extend_from_slice(&idx[..n_valid]);
        train.extend_from_slice(&idx[n_valid..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    (train, valid)
}

/// Mini-batch Adam on BCE with early stopping on hold-out AUC (ties broken
/// by lower hold-out loss). Returns the best checkpoint.
pub(crate) fn fit_network(
    features: &[AttackFeature],
    labels: &[u8],
    widths: [usize; 2],
    gated: bool,
    config: &AttackTrainConfig,
) -> Result<FittedNet> {
    config.validate()?;
    let (mode, width) = check_training_set(features, labels)?;
    let rows: Vec<&[f64]> = features.iter().map(|f| f.values.as_slice()).collect();
    let standardizer = Standardizer::fit(&rows);
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.apply(r)).collect();
    let ys: Vec<f64> = labels.iter().map(|&y| f64::from(y)).collect();

    let mut rng = Rng::new(config.seed, stream_id("attack-train"));
    let (train, valid) = stratified_split(labels, config.valid_fraction, &mut rng.fork("holdout"));
    let vx: Vec<Vec<f64>> = valid.iter().map(|&i| xs[i].clone()).collect();
    let vy: Vec<f64> = valid.iter().map(|&i| ys[i]).collect();
    let vl: Vec<u8> = valid.iter().map(|&i| labels[i]).collect();

    let mut net = Network::new(width, widths, gated, config.seed);
    let score = |n: &Network| -> Result<(f64, f64)> {
        if valid.is_empty() {
            return Ok((0.0, 0.0));
        }
        let s: Vec<f64> = vx.iter().map(|x| n.predict(x)).collect();
        let a = auc(&s, &vl).unwrap_or(0.5);
        Ok((a, n.mean_loss(&vx, &vy)?))
    };
    let better = |cur: (f64, f64), best: (f64, f64)| cur.0 > best.0 || (cur.0 == best.0 && cur.1 < best.1);

    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), &net.blocks);
    let mut grads = net.zero_grads_like();
    let mut order = train.clone();
    let mut best = net.clone();
    let mut best_score = score(&net)?;
    let mut since_best = 0;
    for _ in 0..config.max_epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                net.accumulate(&xs[i], ys[i], scale, &mut grads)?;
            }
            for (block, g) in net.blocks.iter_mut().zip(grads.iter_mut()) {
                std::mem::swap(&mut block.grad, g);
            }
            adam_step(&mut net.blocks, &mut adam);
        }
        if net.blocks.iter().any(|b| !b.values.is_finite()) {
            return Err(Error::Numeric("attacker parameters diverged".into()));
        }
        if valid.is_empty() {
            best = net.clone();
            continue;
        }
        let cur = score(&net)?;
        if better(cur, best_score) {
            best_score = cur;
            best = net.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience.max(1) {
                break;
            }
        }
    }
    Ok(FittedNet {
        mode,
        standardizer,
        net: best,
    })
}
