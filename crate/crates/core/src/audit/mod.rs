//! The four-step audit: partition students, train the original and retrained
//! targets, fit membership attackers on the original, then measure every
//! defense by how far the attack stays from chance.

pub mod metrics;
mod protocol;
mod report;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use protocol::{build_attack_eval_set, build_attack_training_set, evaluate_defense, AuditContext};
pub use report::{AuditCell, AuditReport, Provenance, AUDIT_FORMAT};

use crate::attack::{AttackConfig, Attacker, AttackerKind};
use crate::cdm::{Arch, CdmConfig, CdmModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::stream_id;
use crate::unlearn::{tune_defense, Defense, DefenseKind, TuneRow};

/// Which cells to run and with what settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditPlan {
    pub archs: Vec<Arch>,
    pub defenses: Vec<DefenseKind>,
    pub ratios: Vec<f64>,
    pub attackers: Vec<AttackerKind>,
    pub seeds: Vec<u64>,
    /// Grid overrides. A kind with at least one entry here is searched over
    /// exactly these points instead of its default grid.
    #[serde(default)]
    pub grids: Vec<Defense>,
    #[serde(default)]
    pub cdm: CdmConfig,
    #[serde(default)]
    pub attack: AttackConfig,
}

impl AuditPlan {
    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("archs", self.archs.is_empty()),
            ("defenses", self.defenses.is_empty()),
            ("ratios", self.ratios.is_empty()),
            ("attackers", self.attackers.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("audit plan has no {name}")));
        }
        for &r in &self.ratios {
            if !(r > 0.0 && r <= 1.0 / 3.0) {
                return Err(Error::Config(format!("forgetting ratio {r} outside (0, 1/3]")));
            }
        }
        for d in &self.grids {
            let kind = d.kind();
            if matches!(kind, DefenseKind::None | DefenseKind::Retrain) {
                return Err(Error::Config(format!("{kind} takes no grid")));
            }
            if !self.defenses.contains(&kind) {
                return Err(Error::Config(format!(
                    "grid entry for {kind}, which is not in defenses"
                )));
            }
        }
        self.cdm.validate()?;
        self.attack.nn.validate()
    }

    pub fn grid_for(&self, kind: DefenseKind) -> Vec<Defense> {
        let custom: Vec<Defense> = self.grids.iter().copied().filter(|d| d.kind() == kind).collect();
        if custom.is_empty() {
            kind.default_grid()
        } else {
            custom
        }
    }

    /// Stable hash of the plan and the dataset it runs on.
    pub fn config_hash(&self, dataset: &Dataset) -> Result<String> {
        let text = format!("{}\n{}", serde_json::to_string(self)?, serde_json::to_string(dataset)?);
        Ok(format!("fnv1a64:{:016x}", stream_id(&text)))
    }
}

/// Runs every requested cell. Failures inside a cell, or inside the shared
/// training of its (arch, ratio, seed) block, become error records.
pub fn run_audit(plan: &AuditPlan, dataset: &Dataset) -> Result<AuditReport> {
    plan.validate()?;
    let mut blocks = Vec::new();
    for &arch in &plan.archs {
        for &ratio in &plan.ratios {
            for &seed in &plan.seeds {
                blocks.push((arch, ratio, seed));
            }
        }
    }
    let cells: Vec<AuditCell> = blocks
        .par_iter()
        .map(|&(arch, ratio, seed)| run_block(plan, dataset, arch, ratio, seed))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Ok(AuditReport::new(plan.config_hash(dataset)?, cells))
}

fn run_block(plan: &AuditPlan, dataset: &Dataset, arch: Arch, ratio: f64, seed: u64) -> Vec<AuditCell> {
    let blank = |defense: DefenseKind, attacker: AttackerKind| AuditCell {
        arch,
        defense,
        ratio,
        attacker,
        seed,
        acc_mia: None,
        auc_mia: None,
        defense_hyper: None,
        tuning: Vec::new(),
        utility: None,
        wall_time: 0.0,
        error: None,
    };
    let started = Instant::now();
    let ctx = match AuditContext::prepare(dataset, arch, ratio, seed, &plan.cdm) {
        Ok(c) => c,
        Err(e) => {
            let msg = format!("training failed: {e}");
            return plan
                .defenses
                .iter()
                .flat_map(|&d| plan.attackers.iter().map(move |&a| (d, a)))
                .map(|(d, a)| AuditCell {
                    error: Some(msg.clone()),
                    wall_time: started.elapsed().as_secs_f64(),
                    ..blank(d, a)
                })
                .collect();
        }
    };

    let attack_config = AttackConfig {
        nn: crate::attack::AttackTrainConfig { seed, ..plan.attack.nn },
        ..plan.attack
    };
    let attackers: Vec<Result<Attacker>> = plan
        .attackers
        .par_iter()
        .map(|&k| ctx.train_attacker(dataset, k, &attack_config))
        .collect();

    let mut cells = Vec::new();
    for &kind in &plan.defenses {
        let grid = plan.grid_for(kind);
        let t0 = Instant::now();
        let models: Vec<Result<CdmModel>> = grid.par_iter().map(|&d| ctx.defend(dataset, d, seed)).collect();
        let defense_time = t0.elapsed().as_secs_f64();

        let per_attacker: Vec<AuditCell> = plan
            .attackers
            .par_iter()
            .zip(&attackers)
            .map(|(&attacker_kind, attacker)| {
                let t1 = Instant::now();
                let outcome = evaluate_cell(&ctx, dataset, &grid, &models, attacker, attacker_kind);
                let wall_time = defense_time + t1.elapsed().as_secs_f64();
                match outcome {
                    Ok(CellOutcome {
                        best,
                        acc,
                        auc,
                        utility,
                        tuning,
                    }) => AuditCell {
                        acc_mia: Some(acc),
                        auc_mia: Some(auc),
                        defense_hyper: Some(best),
                        tuning,
                        utility: Some(utility),
                        wall_time,
                        ..blank(kind, attacker_kind)
                    },
                    Err(e) => AuditCell {
                        error: Some(e.to_string()),
                        wall_time,
                        ..blank(kind, attacker_kind)
                    },
                }
            })
            .collect();
        cells.extend(per_attacker);
    }
    cells
}

struct CellOutcome {
    best: Defense,
    acc: f64,
    auc: f64,
    utility: crate::cdm::Evaluation,
    tuning: Vec<TuneRow>,
}

fn evaluate_cell(
    ctx: &AuditContext,
    dataset: &Dataset,
    grid: &[Defense],
    models: &[Result<CdmModel>],
    attacker: &Result<Attacker>,
    kind: AttackerKind,
) -> Result<CellOutcome> {
    let attacker = attacker
        .as_ref()
        .map_err(|e| Error::Validation(format!("attacker training failed: {e}")))?;
    let model_at = |i: usize| -> Result<&CdmModel> {
        models[i]
            .as_ref()
            .map_err(|e| Error::Validation(format!("defense {:?} failed: {e}", grid[i])))
    };
    let (best_index, tuning) = if grid.len() == 1 {
        (0, Vec::new())
    } else {
        let t = tune_defense(grid, |i, _| {
            evaluate_defense(model_at(i)?, attacker, &ctx.plan, dataset, kind.mode())
        })?;
        (t.best_index, t.rows)
    };
    let model = model_at(best_index)?;
    let (acc, auc) = evaluate_defense(model, attacker, &ctx.plan, dataset, kind.mode())?;
    let utility = ctx.utility(dataset, model)?;
    Ok(CellOutcome {
        best: grid[best_index],
        acc,
        auc,
        utility,
        tuning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{extract_batch, FeatureMode};
    use crate::data::{generate_synthetic, Part, StudentSet, SyntheticSpec};

    fn dataset() -> Dataset {
        let spec = SyntheticSpec {
            n_students: 160,
            n_questions: 20,
            n_kcs: 5,
            slip: 0.1,
            guess: 0.2,
            density: 0.35,
            mastery_rate: 0.6,
            seed: 5,
        };
        generate_synthetic(&spec).unwrap().0
    }

    fn fast_plan() -> AuditPlan {
        AuditPlan {
            archs: vec![Arch::NeuralCd],
            defenses: vec![DefenseKind::None],
            ratios: vec![0.1],
            attackers: vec![AttackerKind::DcaGrey],
            seeds: vec![1],
            grids: vec![],
            cdm: CdmConfig {
                epochs: 5,
                ..CdmConfig::default()
            },
            attack: AttackConfig {
                nn: crate::attack::AttackTrainConfig {
                    max_epochs: 50,
                    ..Default::default()
                },
                ..Default::default()
            },
        }
    }

    fn context(d: &Dataset) -> AuditContext {
        let plan = fast_plan();
        AuditContext::prepare(d, Arch::NeuralCd, 0.1, 1, &plan.cdm).unwrap()
    }

    #[test]
    fn training_set_shape_and_balance() {
        let d = dataset();
        let ctx = context(&d);
        let (f, y) = build_attack_training_set(&ctx.m_orig, &ctx.plan, &d, FeatureMode::Black).unwrap();
        assert!(f.iter().all(|x| x.len() == 2));
        let pos = y.iter().filter(|&&v| v == 1).count();
        let neg = y.len() - pos;
        assert_eq!(pos, ctx.plan.indices(StudentSet::Forget, Part::Test).len());
        assert!(pos.abs_diff(neg) as f64 <= 0.1 * y.len() as f64, "{pos} vs {neg}");
    }

    #[test]
    fn swapping_member_sets_flips_labels() {
        let d = dataset();
        let ctx = context(&d);
        let (f, y) = build_attack_training_set(&ctx.m_orig, &ctx.plan, &d, FeatureMode::Grey).unwrap();
        let mut swapped = ctx.plan.clone();
        std::mem::swap(&mut swapped.forget, &mut swapped.nonmember_train);
        let (f2, y2) = build_attack_training_set(&ctx.m_orig, &swapped, &d, FeatureMode::Grey).unwrap();
        let n_pos = y.iter().filter(|&&v| v == 1).count();
        let n_neg = y.len() - n_pos;
        assert_eq!(f2[..n_neg], f[n_pos..]);
        assert_eq!(f2[n_neg..], f[..n_pos]);
        assert!(y2[..n_neg].iter().all(|&v| v == 1));
        assert!(y2[n_neg..].iter().all(|&v| v == 0));
    }

    #[test]
    fn evaluation_students_never_reach_attack_training() {
        let d = dataset();
        let ctx = context(&d);
        let train_students = ctx.attack_training_students();
        assert!(ctx.plan.nonmember_eval.iter().all(|s| !train_students.contains(s)));
        let idx = [
            ctx.plan.indices(StudentSet::Forget, Part::Test),
            ctx.plan.indices(StudentSet::NonmemberTrain, Part::Test),
        ]
        .concat();
        let students: std::collections::HashSet<usize> = d.select(&idx).iter().map(|r| r.student).collect();
        assert_eq!(students, train_students);
    }

    #[test]
    fn constant_attacker_scores_half() {
        let d = dataset();
        let ctx = context(&d);
        let (f, y) = build_attack_training_set(&ctx.m_orig, &ctx.plan, &d, FeatureMode::Black).unwrap();
        let cfg = crate::attack::GbdtConfig {
            n_trees: 0,
            ..Default::default()
        };
        let attacker = Attacker::Gbdt(crate::attack::train_gbdt(&f, &y, &cfg).unwrap());
        let (_, auc) = evaluate_defense(&ctx.m_orig, &attacker, &ctx.plan, &d, FeatureMode::Black).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn evaluation_features_come_from_the_defended_model() {
        let d = dataset();
        let ctx = context(&d);
        let (f, _) = build_attack_eval_set(&ctx.m_retrain, &ctx.plan, &d, FeatureMode::Grey).unwrap();
        let recs = d.select(&ctx.plan.indices(StudentSet::Forget, Part::Test));
        assert_eq!(
            f[..recs.len()],
            extract_batch(&ctx.m_retrain, &recs, FeatureMode::Grey).unwrap()[..]
        );
    }

    #[test]
    fn smallest_plan_gives_one_cell() {
        let d = dataset();
        let report = run_audit(&fast_plan(), &d).unwrap();
        assert_eq!(report.cells.len(), 1);
        let c = &report.cells[0];
        assert!(c.error.is_none(), "{:?}", c.error);
        let (acc, auc) = (c.acc_mia.unwrap(), c.auc_mia.unwrap());
        assert!((0.0..=1.0).contains(&acc) && (0.0..=1.0).contains(&auc));
        assert_eq!(c.defense_hyper, Some(Defense::None));
        assert!(report.to_csv().unwrap().lines().count() == 2);
    }

    #[test]
    fn full_amnesiac_grid_logs_every_point() {
        let d = dataset();
        let plan = AuditPlan {
            defenses: vec![DefenseKind::Amnesiac],
            attackers: vec![AttackerKind::GbdtBlack],
            ..fast_plan()
        };
        let report = run_audit(&plan, &d).unwrap();
        let c = &report.cells[0];
        assert!(c.error.is_none(), "{:?}", c.error);
        assert_eq!(c.tuning.len(), 9);
        let best = c.tuning.iter().map(|r| r.score).fold(f64::INFINITY, f64::min);
        let chosen = c.tuning.iter().find(|r| Some(r.defense) == c.defense_hyper).unwrap();
        assert_eq!(chosen.score, best);
        assert_eq!(c.auc_mia, Some(chosen.auc_mia));
        let back = AuditReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(back.cells[0].tuning, c.tuning);
    }

    #[test]
    fn none_cell_matches_direct_evaluation() {
        let d = dataset();
        let plan = fast_plan();
        let report = run_audit(&plan, &d).unwrap();
        let ctx = context(&d);
        let cfg = AttackConfig {
            nn: crate::attack::AttackTrainConfig {
                seed: 1,
                ..plan.attack.nn
            },
            ..plan.attack
        };
        let attacker = ctx.train_attacker(&d, AttackerKind::DcaGrey, &cfg).unwrap();
        let (acc, auc) = evaluate_defense(&ctx.m_orig, &attacker, &ctx.plan, &d, FeatureMode::Grey).unwrap();
        assert_eq!(report.cells[0].acc_mia, Some(acc));
        assert_eq!(report.cells[0].auc_mia, Some(auc));
    }

    #[test]
    fn failures_become_error_records() {
        let tiny = Dataset::new(
            vec![
                crate::data::InteractionRecord::new(0, 0, 1),
                crate::data::InteractionRecord::new(9, 0, 0),
            ],
            crate::data::QMatrix::from_rows(vec![vec![1]]).unwrap(),
        )
        .unwrap();
        let mut plan = fast_plan();
        plan.attackers = vec![AttackerKind::DcaGrey, AttackerKind::GbdtBlack];
        let report = run_audit(&plan, &tiny).unwrap();
        assert_eq!(report.cells.len(), 2);
        assert!(report.cells.iter().all(|c| c.error.is_some() && c.auc_mia.is_none()));
    }

    #[test]
    fn invalid_plans_are_rejected() {
        let mut p = fast_plan();
        p.ratios = vec![0.5];
        assert!(p.validate().is_err());
        let mut p = fast_plan();
        p.seeds.clear();
        assert!(p.validate().is_err());
        let mut p = fast_plan();
        p.grids = vec![Defense::Ssd {
            alpha: 2.0,
            lambda: 0.1,
        }];
        assert!(p.validate().is_err());
    }

    #[test]
    fn plan_rejects_unknown_keys() {
        let json = serde_json::to_value(fast_plan()).unwrap();
        let mut obj = json.as_object().unwrap().clone();
        obj.insert("extra".into(), serde_json::json!(1));
        assert!(serde_json::from_value::<AuditPlan>(serde_json::Value::Object(obj)).is_err());
    }

    #[test]
    fn report_json_round_trip() {
        let d = dataset();
        let report = run_audit(&fast_plan(), &d).unwrap();
        let back = AuditReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.format, AUDIT_FORMAT);
    }
}
