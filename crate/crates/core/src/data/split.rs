use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{check_format, Error, Result};
use crate::numerics::Rng;

pub const SPLITPLAN_FORMAT: &str = "splitplan/1";

/// Fractions of each student's records assigned to valid and test.
pub const VALID_FRACTION: f64 = 0.1;
pub const TEST_FRACTION: f64 = 0.2;

/// A student's record indices (into `Dataset::records`) per split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudentSet {
    Retain,
    Forget,
    NonmemberTrain,
    NonmemberEval,
}

/// Student-level partition into retain / forget / two non-member sets,
/// plus a per-student train/valid/test split of every student's records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub format: String,
    pub ratio: f64,
    pub seed: u64,
    pub retain: Vec<usize>,
    pub forget: Vec<usize>,
    pub nonmember_train: Vec<usize>,
    pub nonmember_eval: Vec<usize>,
    /// Indexed by student id.
    pub splits: Vec<StudentSplit>,
}

impl SplitPlan {
    pub fn students(&self, set: StudentSet) -> &[usize] {
        match set {
            StudentSet::Retain => &self.retain,
            StudentSet::Forget => &self.forget,
            StudentSet::NonmemberTrain => &self.nonmember_train,
            StudentSet::NonmemberEval => &self.nonmember_eval,
        }
    }

    /// Record indices of `part` for every student in `students`, in
    /// student order.
    pub fn indices_for(&self, students: &[usize], part: Part) -> Vec<usize> {
        let mut out = Vec::new();
        for &s in students {
            let sp = &self.splits[s];
            out.extend_from_slice(match part {
                Part::Train => &sp.train,
                Part::Valid => &sp.valid,
                Part::Test => &sp.test,
            });
        }
        out
    }

    pub fn indices(&self, set: StudentSet, part: Part) -> Vec<usize> {
        self.indices_for(self.students(set), part)
    }

    /// S_r ∪ S_f, sorted.
    pub fn member_students(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.retain.iter().chain(&self.forget).copied().collect();
        v.sort_unstable();
        v
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let plan: SplitPlan = serde_json::from_str(s)?;
        check_format(SPLITPLAN_FORMAT, &plan.format)?;
        Ok(plan)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// `round(ratio · S)`, the size of the forget set and each non-member set.
pub fn forget_set_size(n_students: usize, ratio: f64) -> usize {
    (ratio * n_students as f64).round() as usize
}

/// Draws the four disjoint student sets and the per-student 70/10/20
/// record split.
pub fn partition_students(dataset: &Dataset, ratio: f64, seed: u64) -> Result<SplitPlan> {
    let s = dataset.n_students();
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("forgetting ratio {ratio} not in (0, 1)")));
    }
    let n_f = forget_set_size(s, ratio);
    if n_f == 0 {
        return Err(Error::Config(format!(
            "ratio {ratio} of {s} students rounds to an empty forget set"
        )));
    }
    if 3 * n_f > s {
        return Err(Error::Config(format!(
            "ratio {ratio}: three sets of {n_f} students exceed the {s} available"
        )));
    }

    let root = Rng::new(seed, 0);
    let mut order: Vec<usize> = (0..s).collect();
    root.fork("students").shuffle(&mut order);
    let take = |range: std::ops::Range<usize>| {
        let mut v = order[range].to_vec();
        v.sort_unstable();
        v
    };
    let forget = take(0..n_f);
    let nonmember_train = take(n_f..2 * n_f);
    let nonmember_eval = take(2 * n_f..3 * n_f);
    let retain = take(3 * n_f..s);

    let mut by_student: Vec<Vec<usize>> = vec![Vec::new(); s];
    for (i, r) in dataset.records().iter().enumerate() {
        by_student[r.student].push(i);
    }
    let mut split_rng = root.fork("records");
    let splits = by_student
        .into_iter()
        .map(|mut idx| {
            split_rng.shuffle(&mut idx);
            let n = idx.len();
            let n_test = (TEST_FRACTION * n as f64).round() as usize;
            let n_valid = (VALID_FRACTION * n as f64).round() as usize;
            let mut test = idx[..n_test].to_vec();
            let mut valid = idx[n_test..n_test + n_valid].to_vec();
            let mut train = idx[n_test + n_valid..].to_vec();
            test.sort_unstable();
            valid.sort_unstable();
            train.sort_unstable();
            StudentSplit { train, valid, test }
        })
        .collect();

    Ok(SplitPlan {
        format: SPLITPLAN_FORMAT.to_string(),
        ratio,
        seed,
        retain,
        forget,
        nonmember_train,
        nonmember_eval,
        splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn data(s: usize) -> Dataset {
        let mut spec = SyntheticSpec::frcsub_shape(3);
        spec.n_students = s;
        generate_synthetic(&spec).unwrap().0
    }

    #[test]
    fn frcsub_sizes() {
        // round(0.05 * 536) = round(26.8) = 27; 536 - 3 * 27 = 455
        let plan = partition_students(&data(536), 0.05, 1).unwrap();
        assert_eq!(plan.forget.len(), 27);
        assert_eq!(plan.nonmember_train.len(), 27);
        assert_eq!(plan.nonmember_eval.len(), 27);
        assert_eq!(plan.retain.len(), 455);
        // 20 questions -> 14 / 2 / 4
        let sp = &plan.splits[plan.forget[0]];
        assert_eq!((sp.train.len(), sp.valid.len(), sp.test.len()), (14, 2, 4));
    }

    #[test]
    fn infeasible_ratio_errors() {
        assert!(matches!(partition_students(&data(100), 0.40, 1), Err(Error::Config(_))));
        assert!(matches!(partition_students(&data(20), 0.01, 1), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_plan() {
        let d = data(120);
        assert_eq!(
            partition_students(&d, 0.1, 9).unwrap(),
            partition_students(&d, 0.1, 9).unwrap()
        );
        assert_ne!(
            partition_students(&d, 0.1, 9).unwrap(),
            partition_students(&d, 0.1, 10).unwrap()
        );
    }

    #[test]
    fn json_roundtrip_and_format_check() {
        let plan = partition_students(&data(60), 0.1, 2).unwrap();
        let back = SplitPlan::from_json(&plan.to_json().unwrap()).unwrap();
        assert_eq!(plan, back);
        let bad = plan.to_json().unwrap().replace("splitplan/1", "splitplan/9");
        assert!(matches!(SplitPlan::from_json(&bad), Err(Error::Format { .. })));
    }

    #[test]
    fn disjoint_over_100_seeds() {
        let d = data(200);
        for seed in 0..100 {
            let plan = partition_students(&d, 0.1, seed).unwrap();
            let sets = [&plan.retain, &plan.forget, &plan.nonmember_train, &plan.nonmember_eval];
            let mut seen = HashSet::new();
            for set in sets {
                for &s in set {
                    assert!(seen.insert(s), "student {s} in two sets (seed {seed})");
                }
            }
            assert_eq!(seen.len(), 200);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn every_record_lands_in_exactly_one_split(seed in 0u64..1000, s in 40usize..120) {
            let d = data(s);
            let plan = partition_students(&d, 0.05, seed).unwrap();
            let mut count = vec![0u8; d.records().len()];
            for (student, sp) in plan.splits.iter().enumerate() {
                for &i in sp.train.iter().chain(&sp.valid).chain(&sp.test) {
                    prop_assert_eq!(d.records()[i].student, student);
                    count[i] += 1;
                }
            }
            prop_assert!(count.iter().all(|&c| c == 1));
        }
    }
}
