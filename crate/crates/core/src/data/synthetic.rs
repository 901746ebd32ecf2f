use serde::{Deserialize, Serialize};

use super::{Dataset, InteractionRecord, QMatrix};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Parameters of the DINA-style response generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_students: usize,
    pub n_questions: usize,
    pub n_kcs: usize,
    /// P(incorrect | all required KCs mastered).
    pub slip: f64,
    /// P(correct | some required KC missing).
    pub guess: f64,
    /// Fraction of nonzero Q-matrix cells.
    pub density: f64,
    /// P(student masters a KC), drawn independently per (student, KC).
    #[serde(default = "default_mastery_rate")]
    pub mastery_rate: f64,
    pub seed: u64,
}

fn default_mastery_rate() -> f64 {
    0.5
}

impl SyntheticSpec {
    /// Frcsub-shaped defaults: 536 students, 20 questions, 8 KCs.
    pub fn frcsub_shape(seed: u64) -> Self {
        Self {
            n_students: 536,
            n_questions: 20,
            n_kcs: 8,
            slip: 0.1,
            guess: 0.2,
            density: 0.3,
            mastery_rate: 0.6,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_students == 0 || self.n_questions == 0 || self.n_kcs == 0 {
            return Err(Error::Config("synthetic counts must be positive".into()));
        }
        for (name, p) in [
            ("slip", self.slip),
            ("guess", self.guess),
            ("mastery_rate", self.mastery_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Config(format!("density {} not in (0, 1]", self.density)));
        }
        Ok(())
    }
}

/// Binary S×K ground-truth mastery matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mastery {
    pub n_kcs: usize,
    pub entries: Vec<u8>,
}

impl Mastery {
    pub fn row(&self, student: usize) -> &[u8] {
        &self.entries[student * self.n_kcs..(student + 1) * self.n_kcs]
    }
}

/// Samples a complete response matrix under the DINA model.
///
/// A response is correct with probability `1 - slip` when the student
/// masters every KC the question requires, and `guess` otherwise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Mastery)> {
    spec.validate()?;
    let root = Rng::new(spec.seed, 0);

    let mut q_rng = root.fork("qmatrix");
    let q_rows: Vec<Vec<u8>> = (0..spec.n_questions)
        .map(|_| {
            let mut row: Vec<u8> = (0..spec.n_kcs)
                .map(|_| u8::from(q_rng.bernoulli(spec.density)))
                .collect();
            if row.iter().all(|&v| v == 0) {
                row[q_rng.below(spec.n_kcs)] = 1;
            }
            row
        })
        .collect();
    let q = QMatrix::from_rows(q_rows)?;

    let mut m_rng = root.fork("mastery");
    let entries: Vec<u8> = (0..spec.n_students * spec.n_kcs)
        .map(|_| u8::from(m_rng.bernoulli(spec.mastery_rate)))
        .collect();
    let mastery = Mastery {
        n_kcs: spec.n_kcs,
        entries,
    };

    let mut r_rng = root.fork("responses");
    let mut records = Vec::with_capacity(spec.n_students * spec.n_questions);
    for s in 0..spec.n_students {
        let m = mastery.row(s);
        for j in 0..spec.n_questions {
            let eta = q.row(j).iter().zip(m).all(|(&req, &has)| req == 0 || has == 1);
            let p = if eta { 1.0 - spec.slip } else { spec.guess };
            records.push(InteractionRecord::new(s, j, u8::from(r_rng.bernoulli(p))));
        }
    }
    let dataset = Dataset::with_student_count(records, q, spec.n_students)?;
    Ok((dataset, mastery))
}

/// Whether `student` masters every KC required by `question`.
pub fn masters_all(q: &QMatrix, mastery: &Mastery, student: usize, question: usize) -> bool {
    q.row(question)
        .iter()
        .zip(mastery.row(student))
        .all(|(&req, &has)| req == 0 || has == 1)
}
