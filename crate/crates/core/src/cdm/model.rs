use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{InteractionRecord, QMatrix};
use crate::error::{Error, Result};
use crate::numerics::{
    assign_values, bce_with_logit, dot, flatten_values, sigmoid, stream_id, Matrix, ParamBlock, Rng,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    NeuralCd,
    Kscd,
    Kancd,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::NeuralCd, Arch::Kscd, Arch::Kancd];

    pub fn as_str(&self) -> &'static str {
        match self {
            Arch::NeuralCd => "neuralcd",
            Arch::Kscd => "kscd",
            Arch::Kancd => "kancd",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neuralcd" => Ok(Arch::NeuralCd),
            "kscd" => Ok(Arch::Kscd),
            "kancd" => Ok(Arch::Kancd),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CdmConfig {
    pub arch: Arch,
    /// Shared latent width of student and KC embeddings (kscd / kancd).
    pub latent_dim: usize,
    pub hidden: [usize; 2],
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for CdmConfig {
    fn default() -> Self {
        Self {
            arch: Arch::NeuralCd,
            latent_dim: 16,
            hidden: [64, 32],
            epochs: 50,
            batch_size: 64,
            lr: 2e-3,
            patience: 5,
            seed: 0,
        }
    }
}

impl CdmConfig {
    pub fn for_arch(arch: Arch) -> Self {
        Self {
            arch,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        if self.arch != Arch::NeuralCd && self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// Block positions inside [`CdmModel::params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    pub student: usize,
    pub kc: Option<usize>,
    pub fusion: Option<usize>,
    pub fusion_bias: Option<usize>,
    pub difficulty: usize,
    pub discrimination: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub w3: usize,
    pub b3: usize,
}

impl Layout {
    fn from_blocks(blocks: &[ParamBlock]) -> Result<Self> {
        let find = |name: &str| blocks.iter().position(|b| b.name == name);
        let need = |name: &str| find(name).ok_or_else(|| Error::Validation(format!("checkpoint lacks block {name:?}")));
        Ok(Self {
            student: need("student")?,
            kc: find("kc"),
            fusion: find("fusion"),
            fusion_bias: find("fusion_bias"),
            difficulty: need("difficulty")?,
            discrimination: need("discrimination")?,
            w1: need("w1")?,
            b1: need("b1")?,
            w2: need("w2")?,
            b2: need("b2")?,
            w3: need("w3")?,
            b3: need("b3")?,
        })
    }

    /// Blocks whose entries must stay nonnegative.
    pub fn monotone_blocks(&self) -> [usize; 3] {
        [self.w1, self.w2, self.w3]
    }
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    /// Knowledge state (post-sigmoid), length K.
    pub kstate: Vec<f64>,
    /// sigmoid(difficulty_j), length K.
    pub hardness: Vec<f64>,
    /// sigmoid(discrimination_j).
    pub disc: f64,
    pub x: Vec<f64>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub logit: f64,
    pub p: f64,
}

/// A trained (or initialized) cognitive diagnosis model.
#[derive(Debug, Clone, PartialEq)]
pub struct CdmModel {
    pub(crate) arch: Arch,
    pub(crate) config: CdmConfig,
    pub(crate) n_students: usize,
    pub(crate) n_questions: usize,
    pub(crate) n_kcs: usize,
    pub(crate) q: Matrix,
    pub(crate) params: Vec<ParamBlock>,
    pub(crate) layout: Layout,
}

fn xavier(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| std * rng.normal())
}

fn q_to_matrix(q: &QMatrix) -> Matrix {
    Matrix::from_fn(q.n_questions(), q.n_kcs(), |j, k| f64::from(q.row(j)[k]))
}

impl CdmModel {
    /// Allocates and randomly initializes every block, with embeddings for
    /// all `n_students` students.
    pub fn new(config: &CdmConfig, n_students: usize, q: &QMatrix) -> Result<Self> {
        config.validate()?;
        let (j, k) = (q.n_questions(), q.n_kcs());
        let [h1, h2] = config.hidden;
        let d = config.latent_dim;
        let mut rng = Rng::new(config.seed, stream_id("cdm-init"));

        let mut blocks = Vec::new();
        match config.arch {
            Arch::NeuralCd => {
                blocks.push(ParamBlock::new("student", xavier(&mut rng, n_students, k)));
            }
            Arch::Kancd => {
                blocks.push(ParamBlock::new("student", xavier(&mut rng, n_students, d)));
                blocks.push(ParamBlock::new("kc", xavier(&mut rng, k, d)));
            }
            Arch::Kscd => {
                blocks.push(ParamBlock::new("student", xavier(&mut rng, n_students, d)));
                blocks.push(ParamBlock::new("kc", xavier(&mut rng, k, d)));
                blocks.push(ParamBlock::new("fusion", xavier(&mut rng, 1, d)));
                blocks.push(ParamBlock::new("fusion_bias", Matrix::zeros(1, 1)));
            }
        }
        blocks.push(ParamBlock::new("difficulty", xavier(&mut rng, j, k)));
        blocks.push(ParamBlock::new("discrimination", xavier(&mut rng, j, 1)));
        let mut nonneg = |rows, cols| {
            let mut m = xavier(&mut rng, rows, cols);
            m.as_mut_slice().iter_mut().for_each(|w| *w = w.abs());
            m
        };
        // Nonnegative weights feeding sigmoid units saturate unless the bias
        // cancels the mean input of 0.5 per unit.
        let centered_bias = |w: &Matrix| Matrix::from_fn(w.rows(), 1, |r, _| -0.5 * w.row(r).iter().sum::<f64>());
        let w1 = nonneg(h1, k);
        let w2 = nonneg(h2, h1);
        let w3 = nonneg(1, h2);
        let b2 = centered_bias(&w2);
        let b3 = centered_bias(&w3);
        blocks.push(ParamBlock::new("w1", w1));
        blocks.push(ParamBlock::new("b1", Matrix::zeros(h1, 1)));
        blocks.push(ParamBlock::new("w2", w2));
        blocks.push(ParamBlock::new("b2", b2));
        blocks.push(ParamBlock::new("w3", w3));
        blocks.push(ParamBlock::new("b3", b3));

        let layout = Layout::from_blocks(&blocks)?;
        Ok(Self {
            arch: config.arch,
            config: config.clone(),
            n_students,
            n_questions: j,
            n_kcs: k,
            q: q_to_matrix(q),
            params: blocks,
            layout,
        })
    }

    pub(crate) fn from_parts(
        config: CdmConfig,
        n_students: usize,
        q: &QMatrix,
        mut params: Vec<ParamBlock>,
    ) -> Result<Self> {
        let reference = Self::new(&config, n_students, q)?;
        if params.len() != reference.params.len() {
            return Err(Error::Validation(format!(
                "expected {} parameter blocks, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (p, r) in params.iter_mut().zip(&reference.params) {
            if p.name != r.name || p.values.shape() != r.values.shape() {
                return Err(Error::Validation(format!(
                    "block {:?} {:?} does not match expected {:?} {:?}",
                    p.name,
                    p.values.shape(),
                    r.name,
                    r.values.shape()
                )));
            }
            if !p.values.is_finite() {
                return Err(Error::Numeric(format!("block {:?} has non-finite values", p.name)));
            }
            p.ensure_grad();
        }
        let layout = Layout::from_blocks(&params)?;
        Ok(Self {
            params,
            layout,
            ..reference
        })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn config(&self) -> &CdmConfig {
        &self.config
    }

    pub fn n_students(&self) -> usize {
        self.n_students
    }

    pub fn n_questions(&self) -> usize {
        self.n_questions
    }

    pub fn n_kcs(&self) -> usize {
        self.n_kcs
    }

    pub fn params(&self) -> &[ParamBlock] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamBlock] {
        &mut self.params
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.params.iter().find(|b| b.name == name)
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut ParamBlock> {
        self.params.iter_mut().find(|b| b.name == name)
    }

    pub fn flat_params(&self) -> Vec<f64> {
        flatten_values(&self.params)
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assign_values(&mut self.params, flat);
    }

    /// Zero-filled gradient buffers shaped like the parameters.
    pub fn zero_grads_like(&self) -> Vec<Matrix> {
        self.params
            .iter()
            .map(|b| Matrix::zeros(b.values.rows(), b.values.cols()))
            .collect()
    }

    /// Projects the interaction-MLP weights onto the nonnegative orthant.
    pub fn clamp_monotone(&mut self) {
        for idx in self.layout.monotone_blocks() {
            for w in self.params[idx].values.as_mut_slice() {
                if *w < 0.0 {
                    *w = 0.0;
                }
            }
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.layout
            .monotone_blocks()
            .iter()
            .all(|&i| self.params[i].values.as_slice().iter().all(|&w| w >= 0.0))
    }

    fn check_student(&self, s: usize) -> Result<()> {
        if s >= self.n_students {
            return Err(Error::OutOfRange {
                what: "student",
                id: s,
                bound: self.n_students,
            });
        }
        Ok(())
    }

    fn check_question(&self, j: usize) -> Result<()> {
        if j >= self.n_questions {
            return Err(Error::OutOfRange {
                what: "question",
                id: j,
                bound: self.n_questions,
            });
        }
        Ok(())
    }

    /// K-dim mastery vector in `[0, 1]` for `student`.
    pub fn kstate(&self, student: usize) -> Result<Vec<f64>> {
        self.check_student(student)?;
        Ok(self.kstate_unchecked(student))
    }

    pub(crate) fn kstate_unchecked(&self, s: usize) -> Vec<f64> {
        let l = &self.layout;
        let emb = self.params[l.student].values.row(s);
        match self.arch {
            Arch::NeuralCd => emb.iter().map(|&v| sigmoid(v)).collect(),
            Arch::Kancd => {
                let kc = &self.params[l.kc.unwrap()].values;
                (0..self.n_kcs).map(|k| sigmoid(dot(emb, kc.row(k)))).collect()
            }
            Arch::Kscd => {
                let kc = &self.params[l.kc.unwrap()].values;
                let fusion = self.params[l.fusion.unwrap()].values.row(0);
                let bias = self.params[l.fusion_bias.unwrap()].values.get(0, 0);
                (0..self.n_kcs)
                    .map(|k| {
                        let u: f64 = emb.iter().zip(kc.row(k)).zip(fusion).map(|((e, c), f)| f * e * c).sum();
                        sigmoid(u + bias)
                    })
                    .collect()
            }
        }
    }

    /// Probability of a correct response.
    pub fn predict_proba(&self, student: usize, question: usize) -> Result<f64> {
        self.check_student(student)?;
        self.check_question(question)?;
        Ok(self.trace(student, question).p)
    }

    /// Output of the interaction function for an explicit knowledge state.
    pub fn predict_from_kstate(&self, kstate: &[f64], question: usize) -> Result<f64> {
        self.check_question(question)?;
        if kstate.len() != self.n_kcs {
            return Err(Error::Validation(format!(
                "kstate has length {}, expected {}",
                kstate.len(),
                self.n_kcs
            )));
        }
        Ok(self.interact(kstate.to_vec(), question).p)
    }

    pub(crate) fn trace(&self, s: usize, j: usize) -> Trace {
        self.interact(self.kstate_unchecked(s), j)
    }

    fn interact(&self, kstate: Vec<f64>, j: usize) -> Trace {
        let l = &self.layout;
        let hardness: Vec<f64> = self.params[l.difficulty]
            .values
            .row(j)
            .iter()
            .map(|&v| sigmoid(v))
            .collect();
        let disc = sigmoid(self.params[l.discrimination].values.get(j, 0));
        let qrow = self.q.row(j);
        let x: Vec<f64> = (0..self.n_kcs)
            .map(|k| qrow[k] * (kstate[k] - hardness[k]) * disc)
            .collect();

        let layer = |w: usize, b: usize, input: &[f64]| -> Vec<f64> {
            let wm = &self.params[w].values;
            let bias = self.params[b].values.as_slice();
            let mut out = vec![0.0; wm.rows()];
            wm.matvec_into(input, &mut out);
            out.iter_mut().zip(bias).for_each(|(o, b)| *o = sigmoid(*o + b));
            out
        };
        let z1 = layer(l.w1, l.b1, &x);
        let z2 = layer(l.w2, l.b2, &z1);
        let logit = dot(self.params[l.w3].values.row(0), &z2) + self.params[l.b3].values.get(0, 0);
        Trace {
            kstate,
            hardness,
            disc,
            x,
            z1,
            z2,
            logit,
            p: sigmoid(logit),
        }
    }

    /// Accumulates `scale · ∂BCE/∂θ` for one record into `grads` and
    /// returns the record's BCE.
    pub(crate) fn accumulate_grad(&self, record: &InteractionRecord, scale: f64, grads: &mut [Matrix]) -> Result<f64> {
        let (s, j) = (record.student, record.question);
        let t = self.trace(s, j);
        let y = record.label();
        let loss = bce_with_logit(t.logit, y)?;
        let l = &self.layout;
        let k_n = self.n_kcs;

        // d loss / d logit for sigmoid + BCE
        let g3 = (t.p - y) * scale;
        let w3 = &self.params[l.w3].values;
        grads[l.w3].add_outer(&[g3], &t.z2, 1.0);
        grads[l.b3].as_mut_slice()[0] += g3;

        let da2: Vec<f64> =
            t.z2.iter()
                .zip(w3.row(0))
                .map(|(&z, &w)| g3 * w * z * (1.0 - z))
                .collect();
        grads[l.w2].add_outer(&da2, &t.z1, 1.0);
        grads[l.b2]
            .as_mut_slice()
            .iter_mut()
            .zip(&da2)
            .for_each(|(g, d)| *g += d);

        let mut dz1 = vec![0.0; t.z1.len()];
        self.params[l.w2].values.matvec_t_acc(&da2, &mut dz1);
        let da1: Vec<f64> = dz1.iter().zip(&t.z1).map(|(&d, &z)| d * z * (1.0 - z)).collect();
        grads[l.w1].add_outer(&da1, &t.x, 1.0);
        grads[l.b1]
            .as_mut_slice()
            .iter_mut()
            .zip(&da1)
            .for_each(|(g, d)| *g += d);

        let mut dx = vec![0.0; k_n];
        self.params[l.w1].values.matvec_t_acc(&da1, &mut dx);

        let qrow = self.q.row(j);
        let mut dks = vec![0.0; k_n];
        let mut d_disc = 0.0;
        {
            let gdiff = grads[l.difficulty].row_mut(j);
            for k in 0..k_n {
                if qrow[k] == 0.0 {
                    continue;
                }
                let dxk = dx[k] * qrow[k];
                dks[k] = dxk * t.disc;
                let h = t.hardness[k];
                gdiff[k] += -dxk * t.disc * h * (1.0 - h);
                d_disc += dxk * (t.kstate[k] - h);
            }
        }
        grads[l.discrimination].row_mut(j)[0] += d_disc * t.disc * (1.0 - t.disc);

        // through the knowledge-state map
        let du: Vec<f64> = dks.iter().zip(&t.kstate).map(|(&d, &ks)| d * ks * (1.0 - ks)).collect();
        match self.arch {
            Arch::NeuralCd => {
                grads[l.student]
                    .row_mut(s)
                    .iter_mut()
                    .zip(&du)
                    .for_each(|(g, d)| *g += d);
            }
            Arch::Kancd => {
                let kc_i = l.kc.unwrap();
                let emb = self.params[l.student].values.row(s).to_vec();
                let kc = &self.params[kc_i].values;
                let mut de = vec![0.0; emb.len()];
                kc.matvec_t_acc(&du, &mut de);
                grads[l.student]
                    .row_mut(s)
                    .iter_mut()
                    .zip(&de)
                    .for_each(|(g, d)| *g += d);
                grads[kc_i].add_outer(&du, &emb, 1.0);
            }
            Arch::Kscd => {
                let kc_i = l.kc.unwrap();
                let f_i = l.fusion.unwrap();
                let emb = self.params[l.student].values.row(s).to_vec();
                let kc = &self.params[kc_i].values;
                let fusion = self.params[f_i].values.row(0).to_vec();
                let d = emb.len();
                let mut de = vec![0.0; d];
                let mut df = vec![0.0; d];
                let mut dbias = 0.0;
                for (k, &duk) in du.iter().enumerate() {
                    if duk == 0.0 {
                        continue;
                    }
                    dbias += duk;
                    let c = kc.row(k);
                    let gk = grads[kc_i].row_mut(k);
                    for t_ in 0..d {
                        de[t_] += duk * fusion[t_] * c[t_];
                        df[t_] += duk * emb[t_] * c[t_];
                        gk[t_] += duk * fusion[t_] * emb[t_];
                    }
                }
                grads[l.student]
                    .row_mut(s)
                    .iter_mut()
                    .zip(&de)
                    .for_each(|(g, d)| *g += d);
                grads[f_i].row_mut(0).iter_mut().zip(&df).for_each(|(g, d)| *g += d);
                grads[l.fusion_bias.unwrap()].as_mut_slice()[0] += dbias;
            }
        }
        Ok(loss)
    }

    /// Mean BCE over `records`.
    pub fn mean_loss(&self, records: &[InteractionRecord]) -> Result<f64> {
        if records.is_empty() {
            return Err(Error::Validation("mean loss over no records".into()));
        }
        let mut total = 0.0;
        for r in records {
            self.check_student(r.student)?;
            self.check_question(r.question)?;
            total += bce_with_logit(self.trace(r.student, r.question).logit, r.label())?;
        }
        Ok(total / records.len() as f64)
    }

    /// Mean BCE and its gradient (per block) over `records`.
    pub fn batch_grad(&self, records: &[InteractionRecord]) -> Result<(f64, Vec<Matrix>)> {
        if records.is_empty() {
            return Err(Error::Validation("gradient over no records".into()));
        }
        let mut grads = self.zero_grads_like();
        let scale = 1.0 / records.len() as f64;
        let mut total = 0.0;
        for r in records {
            self.check_student(r.student)?;
            self.check_question(r.question)?;
            total += self.accumulate_grad(r, scale, &mut grads)?;
        }
        Ok((total * scale, grads))
    }

    /// Flattened mean gradient over `records`, in block order.
    pub fn flat_grad(&self, records: &[InteractionRecord]) -> Result<Vec<f64>> {
        let (_, grads) = self.batch_grad(records)?;
        Ok(grads.iter().flat_map(|g| g.as_slice().iter().copied()).collect())
    }
}
