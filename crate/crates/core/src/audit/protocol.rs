use std::collections::HashSet;

use crate::attack::{extract_batch, predict_batch, train_attacker, AttackConfig, Attacker, AttackerKind, FeatureMode};
use crate::cdm::{evaluate_cdm, train_cdm, Arch, CdmConfig, CdmModel, Evaluation, TrainLog};
use crate::data::{partition_students, Dataset, InteractionRecord, Part, SplitPlan, StudentSet};
use crate::error::{Error, Result};
use crate::unlearn::{retrain, unlearn, Defense, ForgetRequest};

use super::metrics::{accuracy, auc};

/// Step 3 training set: target-model features of forget-student test
/// records (label 1) and non-member-train test records (label 0).
pub fn build_attack_training_set(
    m_orig: &CdmModel,
    plan: &SplitPlan,
    dataset: &Dataset,
    mode: FeatureMode,
) -> Result<(Vec<crate::attack::AttackFeature>, Vec<u8>)> {
    labelled_features(
        m_orig,
        dataset,
        &plan.indices(StudentSet::Forget, Part::Test),
        &plan.indices(StudentSet::NonmemberTrain, Part::Test),
        mode,
    )
}

fn labelled_features(
    model: &CdmModel,
    dataset: &Dataset,
    pos: &[usize],
    neg: &[usize],
    mode: FeatureMode,
) -> Result<(Vec<crate::attack::AttackFeature>, Vec<u8>)> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Validation(
            "attack set needs member and non-member test records".into(),
        ));
    }
    let mut features = extract_batch(model, &dataset.select(pos), mode)?;
    features.extend(extract_batch(model, &dataset.select(neg), mode)?);
    let mut labels = vec![1u8; pos.len()];
    labels.resize(pos.len() + neg.len(), 0);
    Ok((features, labels))
}

/// Step 4 evaluation set: forget-student test records against
/// non-member-eval test records, featured on `model`.
pub fn build_attack_eval_set(
    model: &CdmModel,
    plan: &SplitPlan,
    dataset: &Dataset,
    mode: FeatureMode,
) -> Result<(Vec<crate::attack::AttackFeature>, Vec<u8>)> {
    labelled_features(
        model,
        dataset,
        &plan.indices(StudentSet::Forget, Part::Test),
        &plan.indices(StudentSet::NonmemberEval, Part::Test),
        mode,
    )
}

/// `(acc_mia, auc_mia)` of `attacker` against a defended model.
pub fn evaluate_defense(
    m_defended: &CdmModel,
    attacker: &Attacker,
    plan: &SplitPlan,
    dataset: &Dataset,
    mode: FeatureMode,
) -> Result<(f64, f64)> {
    let (features, labels) = build_attack_eval_set(m_defended, plan, dataset, mode)?;
    let scores = predict_batch(attacker, &features)?;
    Ok((accuracy(&scores, &labels)?, auc(&scores, &labels)?))
}

/// Everything Steps 1–3 produce for one (arch, ratio, seed).
#[derive(Debug, Clone)]
pub struct AuditContext {
    pub plan: SplitPlan,
    pub m_orig: CdmModel,
    pub orig_log: TrainLog,
    pub m_retrain: CdmModel,
    pub retrain_log: TrainLog,
}

impl AuditContext {
    /// Steps 1 and 2: partition, then train `M_orig` on `S_r ∪ S_f` and
    /// `M_retrain` on `S_r`.
    pub fn prepare(dataset: &Dataset, arch: Arch, ratio: f64, seed: u64, base: &CdmConfig) -> Result<Self> {
        let plan = partition_students(dataset, ratio, seed)?;
        let config = CdmConfig {
            arch,
            seed,
            ..base.clone()
        };
        let (m_orig, orig_log) = train_cdm(dataset, &plan, &plan.member_students(), &config)?;
        let (m_retrain, retrain_log) = retrain(dataset, &plan, &config)?;
        Ok(Self {
            plan,
            m_orig,
            orig_log,
            m_retrain,
            retrain_log,
        })
    }

    /// Step 3 for one attacker kind.
    pub fn train_attacker(&self, dataset: &Dataset, kind: AttackerKind, config: &AttackConfig) -> Result<Attacker> {
        let (f, y) = build_attack_training_set(&self.m_orig, &self.plan, dataset, kind.mode())?;
        train_attacker(kind, &f, &y, config)
    }

    pub fn forget_train(&self, dataset: &Dataset) -> Vec<InteractionRecord> {
        dataset.select(&self.plan.indices(StudentSet::Forget, Part::Train))
    }

    pub fn retain_train(&self, dataset: &Dataset) -> Vec<InteractionRecord> {
        dataset.select(&self.plan.indices(StudentSet::Retain, Part::Train))
    }

    /// The defended model for one concrete defense.
    pub fn defend(&self, dataset: &Dataset, defense: Defense, seed: u64) -> Result<CdmModel> {
        match defense {
            Defense::None => Ok(self.m_orig.clone()),
            Defense::Retrain => Ok(self.m_retrain.clone()),
            _ => {
                let forget = self.forget_train(dataset);
                let retain = self.retain_train(dataset);
                unlearn(&ForgetRequest {
                    model: &self.m_orig,
                    forget: &forget,
                    retain: &retain,
                    defense,
                    seed,
                })
            }
        }
    }

    /// Retain-test utility of a model.
    pub fn utility(&self, dataset: &Dataset, model: &CdmModel) -> Result<Evaluation> {
        evaluate_cdm(
            model,
            &dataset.select(&self.plan.indices(StudentSet::Retain, Part::Test)),
        )
    }

    /// Student ids whose features enter attack training.
    pub fn attack_training_students(&self) -> HashSet<usize> {
        self.plan
            .forget
            .iter()
            .chain(&self.plan.nonmember_train)
            .copied()
            .collect()
    }
}
