use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One `(student, question, response)` observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub student: usize,
    pub question: usize,
    pub response: u8,
}

impl InteractionRecord {
    pub fn new(student: usize, question: usize, response: u8) -> Self {
        Self {
            student,
            question,
            response,
        }
    }

    #[inline]
    pub fn label(&self) -> f64 {
        f64::from(self.response)
    }
}

/// Binary question × knowledge-component requirement matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QMatrix {
    n_questions: usize,
    n_kcs: usize,
    entries: Vec<u8>,
}

impl QMatrix {
    /// Builds a Q-matrix from rows, rejecting non-binary cells and rows
    /// without any required KC.
    pub fn from_rows(rows: Vec<Vec<u8>>) -> Result<Self> {
        let n_questions = rows.len();
        if n_questions == 0 {
            return Err(Error::Validation("Q-matrix has no rows".into()));
        }
        let n_kcs = rows[0].len();
        if n_kcs == 0 {
            return Err(Error::Validation("Q-matrix has no KC columns".into()));
        }
        let mut entries = Vec::with_capacity(n_questions * n_kcs);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != n_kcs {
                return Err(Error::Validation(format!(
                    "Q-matrix row {j} has {} columns, expected {n_kcs}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|&&v| v > 1) {
                return Err(Error::Validation(format!("Q-matrix row {j} has non-binary entry {v}")));
            }
            if row.iter().all(|&v| v == 0) {
                return Err(Error::Validation(format!(
                    "Q-matrix row {j} requires no knowledge component"
                )));
            }
            entries.extend_from_slice(row);
        }
        Ok(Self {
            n_questions,
            n_kcs,
            entries,
        })
    }

    pub fn n_questions(&self) -> usize {
        self.n_questions
    }

    pub fn n_kcs(&self) -> usize {
        self.n_kcs
    }

    #[inline]
    pub fn row(&self, question: usize) -> &[u8] {
        &self.entries[question * self.n_kcs..(question + 1) * self.n_kcs]
    }

    #[inline]
    pub fn requires(&self, question: usize, kc: usize) -> bool {
        self.row(question)[kc] == 1
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.entries.chunks(self.n_kcs)
    }
}

/// Validated response log plus its Q-matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<InteractionRecord>,
    q_matrix: QMatrix,
    n_students: usize,
}

impl Dataset {
    /// Validates `records` against `q_matrix`. The student count is derived
    /// from the largest student id.
    pub fn new(records: Vec<InteractionRecord>, q_matrix: QMatrix) -> Result<Self> {
        let n_students = records.iter().map(|r| r.student + 1).max().unwrap_or(0);
        Self::with_student_count(records, q_matrix, n_students)
    }

    /// Like [`Dataset::new`] but with an explicit student count, which may
    /// exceed the largest id (students without records).
    pub fn with_student_count(records: Vec<InteractionRecord>, q_matrix: QMatrix, n_students: usize) -> Result<Self> {
        let j = q_matrix.n_questions();
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.response > 1 {
                return Err(Error::Validation(format!(
                    "record {i} has non-binary response {}",
                    r.response
                )));
            }
            if r.question >= j {
                return Err(Error::Validation(format!(
                    "record {i} references question {} but the Q-matrix has {j} rows",
                    r.question
                )));
            }
            if r.student >= n_students {
                return Err(Error::Validation(format!(
                    "record {i} references student {} beyond count {n_students}",
                    r.student
                )));
            }
            if !seen.insert((r.student, r.question)) {
                return Err(Error::Validation(format!(
                    "duplicate record for student {} question {}",
                    r.student, r.question
                )));
            }
        }
        Ok(Self {
            records,
            q_matrix,
            n_students,
        })
    }

    pub fn records(&self) -> &[InteractionRecord] {
        &self.records
    }

    pub fn q_matrix(&self) -> &QMatrix {
        &self.q_matrix
    }

    pub fn n_students(&self) -> usize {
        self.n_students
    }

    pub fn n_questions(&self) -> usize {
        self.q_matrix.n_questions()
    }

    pub fn n_kcs(&self) -> usize {
        self.q_matrix.n_kcs()
    }

    /// Records selected by index.
    pub fn select(&self, indices: &[usize]) -> Vec<InteractionRecord> {
        indices.iter().map(|&i| self.records[i]).collect()
    }
}
