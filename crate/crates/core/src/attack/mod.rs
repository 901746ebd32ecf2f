//! Profile-based membership inference: feature extraction from a target
//! model and the three membership classifiers.
//!
//! * GBDT: black-box baseline over `[proba, response]`.
//! * DCA: standardized MLP (64, 32) over black or grey features.
//! * MIAttacker: encoder to a 32-dim attack embedding, elementwise product
//!   with a learned membership embedding, then a 32→16→1 head.

mod features;
mod gbdt;
mod nn;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use features::{extract_batch, extract_features, AttackFeature, FeatureMode, Standardizer};
pub use gbdt::{train_gbdt, GbdtConfig, GbdtModel, TreeNode};
pub use nn::AttackTrainConfig;

use crate::audit::metrics::DECISION_THRESHOLD;
use crate::error::{check_format, Error, Result};
use nn::{fit_network, FittedNet};

pub const ATTACKER_FORMAT: &str = "attacker/1";

pub const DCA_HIDDEN: [usize; 2] = [64, 32];
pub const MIA_EMBED_DIM: usize = 32;
pub const MIA_HEAD_HIDDEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcaModel {
    #[serde(flatten)]
    inner: FittedNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiAttackerModel {
    #[serde(flatten)]
    inner: FittedNet,
}

impl DcaModel {
    pub fn standardizer(&self) -> &Standardizer {
        &self.inner.standardizer
    }
}

impl MiAttackerModel {
    pub fn standardizer(&self) -> &Standardizer {
        &self.inner.standardizer
    }

    /// The learned membership embedding.
    pub fn membership_embedding(&self) -> &[f64] {
        self.inner.net.gate().expect("MIAttacker network is gated")
    }

    pub fn set_membership_embedding(&mut self, values: &[f64]) {
        self.inner
            .net
            .gate_mut()
            .expect("MIAttacker network is gated")
            .copy_from_slice(values);
    }
}

pub fn train_dca(features: &[AttackFeature], labels: &[u8], config: &AttackTrainConfig) -> Result<DcaModel> {
    Ok(DcaModel {
        inner: fit_network(features, labels, DCA_HIDDEN, false, config)?,
    })
}

pub fn train_miattacker(
    features: &[AttackFeature],
    labels: &[u8],
    config: &AttackTrainConfig,
) -> Result<MiAttackerModel> {
    Ok(MiAttackerModel {
        inner: fit_network(features, labels, [MIA_EMBED_DIM, MIA_HEAD_HIDDEN], true, config)?,
    })
}

/// Gradient check of a DCA or MIAttacker network at production widths:
/// the worst relative error of backprop against central differences of the
/// mean loss over `(inputs, labels)`, for a fresh network seeded by `seed`.
pub fn attacker_gradient_check(kind: AttackerKind, inputs: &[Vec<f64>], labels: &[f64], seed: u64) -> Result<f64> {
    match kind {
        AttackerKind::DcaGrey | AttackerKind::DcaBlack => nn::gradient_check(DCA_HIDDEN, false, inputs, labels, seed),
        AttackerKind::MiaGrey | AttackerKind::MiaBlack => {
            nn::gradient_check([MIA_EMBED_DIM, MIA_HEAD_HIDDEN], true, inputs, labels, seed)
        }
        AttackerKind::GbdtBlack => Err(Error::Config("tree ensembles have no gradient to check".into())),
    }
}

/// Attacker family and the feature mode it consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackerKind {
    GbdtBlack,
    DcaGrey,
    MiaGrey,
    DcaBlack,
    MiaBlack,
}

impl AttackerKind {
    pub const ALL: [AttackerKind; 5] = [
        AttackerKind::GbdtBlack,
        AttackerKind::DcaGrey,
        AttackerKind::MiaGrey,
        AttackerKind::DcaBlack,
        AttackerKind::MiaBlack,
    ];

    pub fn mode(&self) -> FeatureMode {
        match self {
            AttackerKind::DcaGrey | AttackerKind::MiaGrey => FeatureMode::Grey,
            _ => FeatureMode::Black,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            AttackerKind::GbdtBlack => "gbdt-black",
            AttackerKind::DcaGrey => "dca-grey",
            AttackerKind::MiaGrey => "mia-grey",
            AttackerKind::DcaBlack => "dca-black",
            AttackerKind::MiaBlack => "mia-black",
        }
    }
}

impl fmt::Display for AttackerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AttackerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown attacker kind {s:?}")))
    }
}

/// A trained membership classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Attacker {
    Gbdt(GbdtModel),
    Dca(DcaModel),
    #[serde(rename = "miattacker")]
    MiAttacker(MiAttackerModel),
}

/// Training hyperparameters for every attacker family.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub nn: AttackTrainConfig,
    pub gbdt: GbdtConfig,
}

pub fn train_attacker(
    kind: AttackerKind,
    features: &[AttackFeature],
    labels: &[u8],
    config: &AttackConfig,
) -> Result<Attacker> {
    if let Some(f) = features.iter().find(|f| f.mode != kind.mode()) {
        return Err(Error::ModeMismatch {
            expected: kind.mode().to_string(),
            got: f.mode.to_string(),
        });
    }
    Ok(match kind {
        AttackerKind::GbdtBlack => Attacker::Gbdt(train_gbdt(features, labels, &config.gbdt)?),
        AttackerKind::DcaGrey | AttackerKind::DcaBlack => Attacker::Dca(train_dca(features, labels, &config.nn)?),
        AttackerKind::MiaGrey | AttackerKind::MiaBlack => {
            Attacker::MiAttacker(train_miattacker(features, labels, &config.nn)?)
        }
    })
}

#[derive(Serialize, Deserialize)]
struct AttackerFile {
    format: String,
    attacker: Attacker,
}

impl Attacker {
    pub fn mode(&self) -> FeatureMode {
        match self {
            Attacker::Gbdt(_) => FeatureMode::Black,
            Attacker::Dca(m) => m.inner.mode,
            Attacker::MiAttacker(m) => m.inner.mode,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Attacker::Gbdt(_) => 2,
            Attacker::Dca(m) => m.inner.net.input_dim(),
            Attacker::MiAttacker(m) => m.inner.net.input_dim(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = AttackerFile {
            format: ATTACKER_FORMAT.to_string(),
            attacker: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: AttackerFile = serde_json::from_str(s)?;
        check_format(ATTACKER_FORMAT, &file.format)?;
        let mut attacker = file.attacker;
        match &mut attacker {
            Attacker::Gbdt(_) => {}
            Attacker::Dca(m) => m.inner.net.restore_grads(),
            Attacker::MiAttacker(m) => m.inner.net.restore_grads(),
        }
        Ok(attacker)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Membership probability of one record's feature vector.
pub fn predict_membership(attacker: &Attacker, feature: &AttackFeature) -> Result<f64> {
    if feature.mode != attacker.mode() {
        return Err(Error::ModeMismatch {
            expected: attacker.mode().to_string(),
            got: feature.mode.to_string(),
        });
    }
    if feature.len() != attacker.input_dim() {
        return Err(Error::Validation(format!(
            "attacker expects {} features, got {}",
            attacker.input_dim(),
            feature.len()
        )));
    }
    let p = match attacker {
        Attacker::Gbdt(m) => m.predict(&feature.values),
        Attacker::Dca(m) => m.inner.predict(&feature.values),
        Attacker::MiAttacker(m) => m.inner.predict(&feature.values),
    };
    Ok(p)
}

pub fn predict_batch(attacker: &Attacker, features: &[AttackFeature]) -> Result<Vec<f64>> {
    features.iter().map(|f| predict_membership(attacker, f)).collect()
}

/// Hard membership decision: strictly above the threshold.
pub fn is_member(p_mem: f64) -> bool {
    p_mem > DECISION_THRESHOLD
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::metrics::{accuracy, auc};
    use crate::cdm::{Arch, CdmConfig, CdmModel};
    use crate::data::{InteractionRecord, QMatrix};
    use crate::numerics::Rng;

    fn feats(mode: FeatureMode, rows: &[Vec<f64>]) -> Vec<AttackFeature> {
        rows.iter()
            .map(|v| AttackFeature {
                mode,
                values: v.clone(),
            })
            .collect()
    }

    /// Two Gaussian blobs separated along x0 by a wide margin.
    fn separable(seed: u64, n: usize) -> (Vec<AttackFeature>, Vec<u8>) {
        let mut rng = Rng::new(seed, 1);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = (i % 2) as u8;
            let c = if y == 1 { 2.0 } else { -2.0 };
            rows.push(vec![c + 0.3 * rng.normal(), rng.normal()]);
            labels.push(y);
        }
        (feats(FeatureMode::Black, &rows), labels)
    }

    fn quick() -> AttackTrainConfig {
        AttackTrainConfig {
            max_epochs: 200,
            ..AttackTrainConfig::default()
        }
    }

    fn train_acc(a: &Attacker, f: &[AttackFeature], y: &[u8]) -> f64 {
        accuracy(&predict_batch(a, f).unwrap(), y).unwrap()
    }

    #[test]
    fn feature_widths() {
        let q = QMatrix::from_rows((0..4).map(|j| (0..8).map(|k| u8::from(k % 4 == j)).collect()).collect()).unwrap();
        let m = CdmModel::new(&CdmConfig::for_arch(Arch::Kscd), 3, &q).unwrap();
        let r1 = InteractionRecord::new(1, 0, 1);
        let r2 = InteractionRecord::new(1, 3, 0);
        let g1 = extract_features(&m, &r1, FeatureMode::Grey).unwrap();
        let g2 = extract_features(&m, &r2, FeatureMode::Grey).unwrap();
        assert_eq!(g1.len(), 10);
        assert_eq!(g1.values[2..], g2.values[2..]);
        assert_eq!(g1.values[1], 1.0);
        assert_eq!(extract_features(&m, &r1, FeatureMode::Black).unwrap().len(), 2);
        assert!(extract_features(&m, &InteractionRecord::new(3, 0, 1), FeatureMode::Black).is_err());
    }

    #[test]
    fn dca_and_mia_fit_separable_set() {
        let (f, y) = separable(0, 200);
        let dca = Attacker::Dca(train_dca(&f, &y, &quick()).unwrap());
        let mia = Attacker::MiAttacker(train_miattacker(&f, &y, &quick()).unwrap());
        for a in [&dca, &mia] {
            assert_eq!(train_acc(a, &f, &y), 1.0);
            let member = AttackFeature {
                mode: FeatureMode::Black,
                values: vec![2.0, 0.0],
            };
            assert!(predict_membership(a, &member).unwrap() > 0.9);
        }
    }

    #[test]
    fn shuffled_labels_give_chance_on_holdout() {
        let mut rng = Rng::new(3, 0);
        let rows: Vec<Vec<f64>> = (0..600)
            .map(|_| vec![rng.normal(), rng.normal(), rng.uniform()])
            .collect();
        let y: Vec<u8> = (0..600).map(|_| u8::from(rng.bernoulli(0.5))).collect();
        let f = feats(FeatureMode::Grey, &rows);
        let dca = Attacker::Dca(train_dca(&f[..400], &y[..400], &AttackTrainConfig::default()).unwrap());
        let s = predict_batch(&dca, &f[400..]).unwrap();
        let a = auc(&s, &y[400..]).unwrap();
        assert!((a - 0.5).abs() <= 0.1, "holdout auc {a}");
    }

    #[test]
    fn constant_features_collapse_to_prior() {
        let rows = vec![vec![0.4, 1.0]; 100];
        let y: Vec<u8> = (0..100).map(|i| u8::from(i < 30)).collect();
        let f = feats(FeatureMode::Black, &rows);
        let dca = Attacker::Dca(train_dca(&f, &y, &AttackTrainConfig::default()).unwrap());
        let s = predict_batch(&dca, &f).unwrap();
        assert_eq!(auc(&s, &y).unwrap(), 0.5);
        assert!(s.iter().all(|&p| p == s[0]));
        assert!((s[0] - 0.3).abs() < 0.1, "p = {}", s[0]);
    }

    #[test]
    fn single_class_errors() {
        let (f, _) = separable(0, 10);
        assert!(train_dca(&f, &[1; 10], &quick()).is_err());
        assert!(train_miattacker(&f, &[0; 10], &quick()).is_err());
    }

    #[test]
    fn zero_membership_embedding_is_constant() {
        let (f, y) = separable(1, 100);
        let mut m = train_miattacker(&f, &y, &quick()).unwrap();
        m.set_membership_embedding(&[0.0; MIA_EMBED_DIM]);
        let a = Attacker::MiAttacker(m);
        let s = predict_batch(&a, &f).unwrap();
        assert!(s.iter().all(|&p| p == s[0]));
    }

    #[test]
    fn mode_mismatch_is_an_error() {
        let (f, y) = separable(2, 40);
        let a = Attacker::Dca(train_dca(&f, &y, &quick()).unwrap());
        let grey = AttackFeature {
            mode: FeatureMode::Grey,
            values: vec![0.5, 1.0, 0.2],
        };
        assert!(matches!(predict_membership(&a, &grey), Err(Error::ModeMismatch { .. })));
        assert!(matches!(
            train_attacker(AttackerKind::DcaGrey, &f, &y, &AttackConfig::default()),
            Err(Error::ModeMismatch { .. })
        ));
    }

    #[test]
    fn threshold_is_strict() {
        assert!(!is_member(0.5));
        assert!(is_member(0.5 + f64::EPSILON));
    }

    #[test]
    fn zeroed_kstate_matches_black_training() {
        let mut rng = Rng::new(6, 0);
        let mut black = Vec::new();
        let mut grey = Vec::new();
        let mut y = Vec::new();
        for i in 0..160 {
            let label = (i % 2) as u8;
            let p = (0.5 + 0.2 * (f64::from(label) - 0.5) + 0.15 * rng.normal()).clamp(0.0, 1.0);
            let r = f64::from(u8::from(rng.bernoulli(p)));
            black.push(vec![p, r]);
            grey.push(vec![p, r, 0.0, 0.0, 0.0, 0.0, 0.0]);
            y.push(label);
        }
        let fb = feats(FeatureMode::Black, &black);
        let fg = feats(FeatureMode::Grey, &grey);
        let cfg = AttackTrainConfig {
            max_epochs: 60,
            seed: 17,
            ..AttackTrainConfig::default()
        };
        let db = Attacker::Dca(train_dca(&fb, &y, &cfg).unwrap());
        let dg = Attacker::Dca(train_dca(&fg, &y, &cfg).unwrap());
        let mb = Attacker::MiAttacker(train_miattacker(&fb, &y, &cfg).unwrap());
        let mg = Attacker::MiAttacker(train_miattacker(&fg, &y, &cfg).unwrap());
        let sb = predict_batch(&db, &fb).unwrap();
        let sg = predict_batch(&dg, &fg).unwrap();
        assert!(sb.iter().zip(&sg).all(|(a, b)| a.to_bits() == b.to_bits()));
        let sb = predict_batch(&mb, &fb).unwrap();
        let sg = predict_batch(&mg, &fg).unwrap();
        assert!(sb.iter().zip(&sg).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let (f, y) = separable(4, 60);
        let all = [
            train_attacker(AttackerKind::GbdtBlack, &f, &y, &AttackConfig::default()).unwrap(),
            train_attacker(AttackerKind::DcaBlack, &f, &y, &AttackConfig::default()).unwrap(),
            train_attacker(AttackerKind::MiaBlack, &f, &y, &AttackConfig::default()).unwrap(),
        ];
        for a in all {
            let json = a.to_json().unwrap();
            assert!(json.contains(ATTACKER_FORMAT));
            let back = Attacker::from_json(&json).unwrap();
            assert_eq!(back, a);
            let s1 = predict_batch(&a, &f).unwrap();
            let s2 = predict_batch(&back, &f).unwrap();
            assert!(s1.iter().zip(&s2).all(|(x, z)| x.to_bits() == z.to_bits()));
        }
        let bad = r#"{"format":"attacker/9","attacker":{"kind":"gbdt","config":{},"base_score":0.0,"trees":[]}}"#;
        assert!(matches!(Attacker::from_json(bad), Err(Error::Format { .. })));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in AttackerKind::ALL {
            assert_eq!(k.as_str().parse::<AttackerKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{k}\""));
        }
    }
}
