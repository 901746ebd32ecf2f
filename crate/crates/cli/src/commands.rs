use std::path::{Path, PathBuf};

use cdaudit::attack::{predict_batch, AttackerKind};
use cdaudit::audit::metrics::{accuracy, auc};
use cdaudit::audit::{build_attack_training_set, evaluate_defense, run_audit};
use cdaudit::cdm::{evaluate_cdm, train_cdm, Arch, CdmModel};
use cdaudit::data::{generate_synthetic, partition_students, write_dataset, Part, SplitPlan, StudentSet};
use cdaudit::radar::{
    extract_kstate_canny, extract_kstate_llm, mae, random_kstates, render_radar, roundtrip, LlmEndpoint, PromptKind,
};
use cdaudit::unlearn::{retrain, unlearn, Defense, DefenseKind, ForgetRequest};
use cdaudit::{Error, Result};
use serde_json::json;

use crate::config::RunConfig;
use crate::output::{record_run, write_atomic, write_atomic_with, Layout};

/// What a command produced, for the manifest.
pub struct Produced {
    pub outputs: Vec<PathBuf>,
    /// Command flags merged into the recorded effective config.
    pub flags: serde_json::Value,
}

pub fn finish(cfg: &RunConfig, layout: &Layout, command: &str, produced: Produced) -> Result<()> {
    let mut effective = serde_json::to_value(cfg)?;
    effective["flags"] = produced.flags;
    record_run(
        layout,
        command,
        cfg.seed,
        effective,
        &cfg.input_files(),
        &produced.outputs,
    )
}

fn write_json(path: PathBuf, value: &impl serde::Serialize, outputs: &mut Vec<PathBuf>) -> Result<()> {
    write_atomic(&path, serde_json::to_string_pretty(value)?.as_bytes())?;
    outputs.push(path);
    Ok(())
}

pub fn gen_data(cfg: &RunConfig, layout: &Layout) -> Result<Produced> {
    let spec = cfg.synthetic_spec();
    let (dataset, mastery) = generate_synthetic(&spec)?;
    let records = layout.data().join("records.csv");
    let q = layout.data().join("q_matrix.csv");
    let mastery_path = layout.data().join("mastery.csv");
    // write both through temp names, then move into place
    write_atomic_with(&records, |tmp_r| {
        write_atomic_with(&q, |tmp_q| write_dataset(&dataset, tmp_r, tmp_q))
    })?;
    let mut text = String::from("student_id");
    for k in 0..mastery.n_kcs {
        text.push_str(&format!(",kc_{k}"));
    }
    text.push('\n');
    for s in 0..dataset.n_students() {
        text.push_str(&s.to_string());
        for v in mastery.row(s) {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    write_atomic(&mastery_path, text.as_bytes())?;
    Ok(Produced {
        outputs: vec![records, q, mastery_path],
        flags: json!({ "synthetic": spec }),
    })
}

fn plan_path(layout: &Layout) -> PathBuf {
    layout.checkpoints().join("split_plan.json")
}

fn model_path(layout: &Layout, arch: Arch, tag: &str) -> PathBuf {
    layout.checkpoints().join(format!("{arch}_{tag}.json"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Orig,
    Retrain,
    Both,
}

pub fn train(cfg: &RunConfig, layout: &Layout, which: ModelChoice) -> Result<Produced> {
    let dataset = cfg.dataset()?;
    let plan = partition_students(&dataset, cfg.split.ratio, cfg.seed)?;
    let cdm = cfg.cdm_config();
    let mut outputs = Vec::new();
    let ppath = plan_path(layout);
    write_atomic(&ppath, plan.to_json()?.as_bytes())?;
    outputs.push(ppath);

    let retain_test = dataset.select(&plan.indices(StudentSet::Retain, Part::Test));
    let mut summary = serde_json::Map::new();
    let mut jobs = Vec::new();
    if matches!(which, ModelChoice::Orig | ModelChoice::Both) {
        jobs.push(("orig", plan.member_students()));
    }
    if matches!(which, ModelChoice::Retrain | ModelChoice::Both) {
        jobs.push(("retrain", plan.retain.clone()));
    }
    for (tag, scope) in jobs {
        let (model, log) = train_cdm(&dataset, &plan, &scope, &cdm)?;
        let path = model_path(layout, cdm.arch, tag);
        write_atomic(&path, model.to_checkpoint_json(Some(&log))?.as_bytes())?;
        outputs.push(path);
        summary.insert(
            tag.to_string(),
            json!({ "training": log, "retain_test": evaluate_cdm(&model, &retain_test)? }),
        );
    }
    write_json(
        layout.reports().join(format!("train_{}.json", cdm.arch)),
        &summary,
        &mut outputs,
    )?;
    Ok(Produced {
        outputs,
        flags: json!({ "model": which }),
    })
}

fn load_plan(layout: &Layout, path: Option<&Path>) -> Result<SplitPlan> {
    SplitPlan::load(path.unwrap_or(&plan_path(layout)))
}

fn load_model(path: &Path) -> Result<CdmModel> {
    Ok(CdmModel::load(path)?.0)
}

pub struct UnlearnArgs {
    pub defense: Defense,
    pub checkpoint: Option<PathBuf>,
    pub plan: Option<PathBuf>,
}

pub fn unlearn_cmd(cfg: &RunConfig, layout: &Layout, args: &UnlearnArgs) -> Result<Produced> {
    let dataset = cfg.dataset()?;
    let plan = load_plan(layout, args.plan.as_deref())?;
    let arch = cfg.cdm.arch;
    let ckpt = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| model_path(layout, arch, "orig"));
    let m_orig = load_model(&ckpt)?;
    let forget = dataset.select(&plan.indices(StudentSet::Forget, Part::Train));
    let retain = dataset.select(&plan.indices(StudentSet::Retain, Part::Train));
    let defended = match args.defense {
        Defense::Retrain => retrain(&dataset, &plan, &cfg.cdm_config())?.0,
        d => unlearn(&ForgetRequest {
            model: &m_orig,
            forget: &forget,
            retain: &retain,
            defense: d,
            seed: cfg.seed,
        })?,
    };
    let mut outputs = Vec::new();
    let path = model_path(layout, arch, args.defense.kind().as_str());
    write_atomic(&path, defended.to_checkpoint_json(None)?.as_bytes())?;
    outputs.push(path);
    let retain_test = dataset.select(&plan.indices(StudentSet::Retain, Part::Test));
    let report = json!({
        "defense": args.defense,
        "forget_train_loss_before": m_orig.mean_loss(&forget)?,
        "forget_train_loss_after": defended.mean_loss(&forget)?,
        "retain_test": evaluate_cdm(&defended, &retain_test)?,
    });
    write_json(
        layout
            .reports()
            .join(format!("unlearn_{arch}_{}.json", args.defense.kind())),
        &report,
        &mut outputs,
    )?;
    Ok(Produced {
        outputs,
        flags: json!({ "defense": args.defense, "checkpoint": ckpt }),
    })
}

pub struct AttackArgs {
    pub attackers: Vec<AttackerKind>,
    pub checkpoint: Option<PathBuf>,
    pub plan: Option<PathBuf>,
}

pub fn attack(cfg: &RunConfig, layout: &Layout, args: &AttackArgs) -> Result<Produced> {
    let dataset = cfg.dataset()?;
    let plan = load_plan(layout, args.plan.as_deref())?;
    let arch = cfg.cdm.arch;
    let ckpt = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| model_path(layout, arch, "orig"));
    let m_orig = load_model(&ckpt)?;
    let retrain_path = model_path(layout, arch, "retrain");
    let m_retrain = if args.checkpoint.is_none() && retrain_path.exists() {
        Some(load_model(&retrain_path)?)
    } else {
        None
    };
    let attack_cfg = cdaudit::attack::AttackConfig {
        nn: cdaudit::attack::AttackTrainConfig {
            seed: cfg.seed,
            ..cfg.attack.nn
        },
        ..cfg.attack
    };
    let kinds = if args.attackers.is_empty() {
        cfg.audit.attackers.clone()
    } else {
        args.attackers.clone()
    };
    let mut outputs = Vec::new();
    for kind in &kinds {
        let (f, y) = build_attack_training_set(&m_orig, &plan, &dataset, kind.mode())?;
        let attacker = cdaudit::attack::train_attacker(*kind, &f, &y, &attack_cfg)?;
        let s = predict_batch(&attacker, &f)?;
        let apath = layout.checkpoints().join(format!("attacker_{arch}_{kind}.json"));
        write_atomic(&apath, attacker.to_json()?.as_bytes())?;
        outputs.push(apath);
        let eval = |m: &CdmModel| -> Result<serde_json::Value> {
            let (acc, auc) = evaluate_defense(m, &attacker, &plan, &dataset, kind.mode())?;
            Ok(json!({ "acc_mia": acc, "auc_mia": auc }))
        };
        let mut report = json!({
            "attacker": kind,
            "train": { "acc": accuracy(&s, &y)?, "auc": auc(&s, &y)?, "n": y.len() },
            "orig": eval(&m_orig)?,
        });
        if let Some(m) = &m_retrain {
            report["retrain"] = eval(m)?;
        }
        write_json(
            layout.reports().join(format!("attack_{arch}_{kind}.json")),
            &report,
            &mut outputs,
        )?;
    }
    Ok(Produced {
        outputs,
        flags: json!({ "attackers": kinds, "checkpoint": ckpt }),
    })
}

pub fn audit(cfg: &RunConfig, layout: &Layout) -> Result<Produced> {
    let dataset = cfg.dataset()?;
    let plan = cfg.audit_plan();
    let report = run_audit(&plan, &dataset)?;
    let json_path = layout.reports().join("audit.json");
    let csv_path = layout.reports().join("audit.csv");
    write_atomic(&json_path, report.to_json()?.as_bytes())?;
    write_atomic(&csv_path, report.to_csv()?.as_bytes())?;
    Ok(Produced {
        outputs: vec![json_path, csv_path],
        flags: json!({ "plan": plan }),
    })
}

pub struct RadarArgs {
    pub image: Option<PathBuf>,
    pub llm: Option<PromptKind>,
    /// Plot knowledge states of this checkpoint's first `n` students instead
    /// of random vectors.
    pub checkpoint: Option<PathBuf>,
}

fn llm_endpoint(kind: Option<PromptKind>) -> Result<Option<(PromptKind, LlmEndpoint)>> {
    kind.map(|k| Ok((k, LlmEndpoint::from_env()?))).transpose()
}

pub fn radar(cfg: &RunConfig, layout: &Layout, args: &RadarArgs) -> Result<Produced> {
    let style = &cfg.radar.style;
    let k = cfg.radar.k;
    let llm = llm_endpoint(args.llm)?;
    let mut outputs = Vec::new();

    if let Some(image_path) = &args.image {
        let img = image::open(image_path).map_err(Error::from)?.to_rgb8();
        let mut report = json!({ "image": image_path, "canny": extract_kstate_canny(&img, k, style)? });
        if let Some((kind, endpoint)) = &llm {
            report["llm"] = serde_json::to_value(extract_kstate_llm(&img, k, *kind, endpoint, style)?)?;
        }
        write_json(layout.reports().join("radar_extract.json"), &report, &mut outputs)?;
        return Ok(Produced {
            outputs,
            flags: json!({ "image": image_path, "llm": args.llm }),
        });
    }

    let kstates = match &args.checkpoint {
        Some(p) => {
            let m = load_model(p)?;
            if m.n_kcs() != k {
                return Err(Error::Config(format!(
                    "checkpoint has {} KCs but radar.k = {k}",
                    m.n_kcs()
                )));
            }
            (0..cfg.radar.n.min(m.n_students()))
                .map(|s| m.kstate(s))
                .collect::<Result<Vec<_>>>()?
        }
        None => random_kstates(cfg.radar.n, k, cfg.seed),
    };
    let (rows, canny_mae) = roundtrip(&kstates, style)?;
    for (i, ks) in kstates.iter().enumerate() {
        let path = layout.charts().join(format!("chart_{i:04}.png"));
        let img = render_radar(ks, style)?;
        write_atomic_with(&path, |tmp| {
            img.save_with_format(tmp, image::ImageFormat::Png).map_err(Error::from)
        })?;
        outputs.push(path);
    }

    let mut llm_estimates: Vec<Vec<f64>> = Vec::new();
    if let Some((kind, endpoint)) = &llm {
        for ks in &kstates {
            let img = render_radar(ks, style)?;
            llm_estimates.push(extract_kstate_llm(&img, k, *kind, endpoint, style)?.estimates);
        }
    }
    let mut csv = String::from("chart,axis,ground_truth,estimate,abs_error");
    if llm.is_some() {
        csv.push_str(",llm_estimate,llm_abs_error");
    }
    csv.push('\n');
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}",
            r.chart, r.axis, r.ground_truth, r.estimate, r.abs_error
        ));
        if let Some(est) = llm_estimates.get(r.chart) {
            let e = est[r.axis];
            csv.push_str(&format!(",{},{}", e, (e - r.ground_truth).abs()));
        }
        csv.push('\n');
    }
    let csv_path = layout.reports().join("radar_roundtrip.csv");
    write_atomic(&csv_path, csv.as_bytes())?;
    outputs.push(csv_path);

    let llm_mae = if llm.is_some() {
        let mut total = 0.0;
        for (est, ks) in llm_estimates.iter().zip(&kstates) {
            total += mae(est, ks)?;
        }
        Some(total / kstates.len() as f64)
    } else {
        None
    };
    let summary = json!({
        "k": k,
        "n": kstates.len(),
        "canny_mae": canny_mae,
        "llm_mae": llm_mae,
        "source": if args.checkpoint.is_some() { "checkpoint" } else { "random" },
    });
    write_json(layout.reports().join("radar_summary.json"), &summary, &mut outputs)?;
    Ok(Produced {
        outputs,
        flags: json!({ "llm": args.llm, "checkpoint": args.checkpoint }),
    })
}

/// Builds a concrete defense from a kind and optional hyperparameter flags;
/// missing values take the first point of the default grid.
pub fn defense_from_flags(
    kind: DefenseKind,
    lr: Option<f64>,
    steps: Option<usize>,
    n_probes: Option<usize>,
    n_batches: Option<usize>,
    alpha: Option<f64>,
    lambda: Option<f64>,
) -> Defense {
    match kind.default_grid()[0] {
        Defense::Amnesiac { lr: l, steps: s } => Defense::Amnesiac {
            lr: lr.unwrap_or(l),
            steps: steps.unwrap_or(s),
        },
        Defense::Lcodec {
            n_probes: p,
            n_batches: b,
        } => Defense::Lcodec {
            n_probes: n_probes.unwrap_or(p),
            n_batches: n_batches.unwrap_or(b),
        },
        Defense::Ssd { alpha: a, lambda: l } => Defense::Ssd {
            alpha: alpha.unwrap_or(a),
            lambda: lambda.unwrap_or(l),
        },
        d => d,
    }
}
