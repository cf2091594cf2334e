//! Scenario and road-type vocabularies and the classifiers built on them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, FeatureVector, LabeledDataset};
use crate::gbdt::{argmax, BoostedEnsemble, TrainConfig};
use crate::labelmap::ClassTaxonomy;
use crate::metrics::{f1_macro, ConfusionMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioLabel {
    /// No object ahead in the ego lane.
    FreeDriving,
    /// A vehicle ahead in the ego lane.
    Following,
    /// A vehicle riding the lane line into the ego lane.
    CutIn,
    /// Vehicles or pedestrians crossing in front.
    EmergencyAvoidance,
}

impl ScenarioLabel {
    pub const ALL: [ScenarioLabel; 4] = [
        ScenarioLabel::FreeDriving,
        ScenarioLabel::Following,
        ScenarioLabel::CutIn,
        ScenarioLabel::EmergencyAvoidance,
    ];

    /// Relation complexity `s(i)` of the scenario.
    pub fn relation_value(self) -> f64 {
        match self {
            ScenarioLabel::FreeDriving => 1.0,
            ScenarioLabel::Following => 3.0,
            ScenarioLabel::CutIn => 4.0,
            ScenarioLabel::EmergencyAvoidance => 5.0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioLabel::FreeDriving => "FreeDriving",
            ScenarioLabel::Following => "Following",
            ScenarioLabel::CutIn => "CutIn",
            ScenarioLabel::EmergencyAvoidance => "EmergencyAvoidance",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == name)
    }

    pub fn display(self) -> &'static str {
        match self {
            ScenarioLabel::FreeDriving => "free driving",
            ScenarioLabel::Following => "following",
            ScenarioLabel::CutIn => "cut-in",
            ScenarioLabel::EmergencyAvoidance => "emergency avoidance",
        }
    }
}

impl std::fmt::Display for ScenarioLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoadType {
    Cross,
    Ground,
    FlyOver,
    Ramp,
    Tunnel,
    Expressway,
}

impl RoadType {
    pub const ALL: [RoadType; 6] = [
        RoadType::Cross,
        RoadType::Ground,
        RoadType::FlyOver,
        RoadType::Ramp,
        RoadType::Tunnel,
        RoadType::Expressway,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RoadType::Cross => "Cross",
            RoadType::Ground => "Ground",
            RoadType::FlyOver => "FlyOver",
            RoadType::Ramp => "Ramp",
            RoadType::Tunnel => "Tunnel",
            RoadType::Expressway => "Expressway",
        }
    }
}

/// Probability per scenario label, indexed by [`ScenarioLabel::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDistribution {
    p: [f64; 4],
}

impl ScenarioDistribution {
    pub fn new(p: [f64; 4]) -> Result<Self> {
        if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("scenario probabilities must be finite and >= 0: {p:?}")));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("scenario probabilities sum to {s}")));
        }
        Ok(ScenarioDistribution { p })
    }

    pub fn uniform() -> Self {
        ScenarioDistribution { p: [0.25; 4] }
    }

    pub fn probabilities(&self) -> [f64; 4] {
        self.p
    }

    pub fn prob(&self, label: ScenarioLabel) -> f64 {
        self.p[label.index()]
    }

    /// Most probable label; exact ties resolve to the earliest label.
    pub fn argmax(&self) -> ScenarioLabel {
        ScenarioLabel::ALL[argmax(&self.p)]
    }
}

/// Runs the ensemble on one frame's features. The model's classes must be
/// the four scenario names.
pub fn classify_scenario(x: &FeatureVector, model: &BoostedEnsemble) -> Result<ScenarioDistribution> {
    classify_values(&x.values(), model)
}

pub fn classify_values(values: &[f64], model: &BoostedEnsemble) -> Result<ScenarioDistribution> {
    let probs = model.predict_proba(values)?;
    let mut p = [0.0; 4];
    if model.classes().len() != 4 {
        return Err(Error::Model(format!(
            "scenario model must have 4 classes, found {}",
            model.classes().len()
        )));
    }
    for (name, prob) in model.classes().iter().zip(probs) {
        let label = ScenarioLabel::from_name(name)
            .ok_or_else(|| Error::Model(format!("class {name:?} is not a scenario label")))?;
        p[label.index()] = prob;
    }
    ScenarioDistribution::new(p)
}

/// Condition over one frame's class features. All listed requirements must
/// hold; class names are resolved against the taxonomy.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadCondition {
    pub present: Vec<String>,
    pub absent: Vec<String>,
    /// Class name to minimum pixel fraction (inclusive).
    pub min_fraction: std::collections::BTreeMap<String, f64>,
    /// Class name to maximum pixel fraction (exclusive).
    pub max_fraction: std::collections::BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadRule {
    pub when: RoadCondition,
    pub then: RoadType,
}

/// Ordered road-type rules; the first rule whose condition holds wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoadRuleSet {
    pub rules: Vec<RoadRule>,
}

/// Road type used when no rule matches.
pub const ROAD_FALLBACK: RoadType = RoadType::Ground;

impl Default for RoadRuleSet {
    fn default() -> Self {
        Self::from_json(include_str!("../data/road_rules.json")).expect("built-in road rules parse")
    }
}

impl RoadRuleSet {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("road rules", e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Checks every class name against `tax`.
    pub fn validate(&self, tax: &ClassTaxonomy) -> Result<()> {
        for rule in &self.rules {
            let c = &rule.when;
            for name in c.present.iter().chain(&c.absent).chain(c.min_fraction.keys()).chain(c.max_fraction.keys()) {
                if tax.id_of(name).is_none() {
                    return Err(Error::invalid(format!("road rule refers to unknown class {name:?}")));
                }
            }
        }
        Ok(())
    }
}

fn condition_holds(c: &RoadCondition, x: &FeatureVector, tax: &ClassTaxonomy) -> Result<bool> {
    let id = |name: &str| tax.id_of(name).ok_or_else(|| Error::invalid(format!("unknown class {name:?}")));
    let present = |name: &str| -> Result<bool> { Ok(x.class(id(name)?).is_some_and(|f| f.presence)) };
    for name in &c.present {
        if !present(name)? {
            return Ok(false);
        }
    }
    for name in &c.absent {
        if present(name)? {
            return Ok(false);
        }
    }
    for (name, &min) in &c.min_fraction {
        if x.fraction(id(name)?) < min {
            return Ok(false);
        }
    }
    for (name, &max) in &c.max_fraction {
        if x.fraction(id(name)?) >= max {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn classify_road_type(x: &FeatureVector, rules: &RoadRuleSet, tax: &ClassTaxonomy) -> Result<RoadType> {
    for rule in &rules.rules {
        if condition_holds(&rule.when, x, tax)? {
            return Ok(rule.then);
        }
    }
    Ok(ROAD_FALLBACK)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub classes: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub f1_macro: f64,
    pub accuracy: f64,
}

/// Stratified k-fold cross-validation; out-of-fold predictions are pooled
/// into one confusion matrix.
pub fn cross_validate(data: &LabeledDataset, folds: usize, cfg: &TrainConfig) -> Result<CrossValidation> {
    let pred = features::cross_val_predict(data, folds, cfg)?;
    let confusion = ConfusionMatrix::from_labels(data.labels(), &pred, data.n_classes())?;
    Ok(CrossValidation {
        classes: data.class_names().to_vec(),
        f1_macro: f1_macro(&confusion)?,
        accuracy: confusion.accuracy(),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::extract_features;
    use crate::labelmap::{class, LabelMap};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relation_values_are_fixed() {
        let s: Vec<f64> = ScenarioLabel::ALL.iter().map(|l| l.relation_value()).collect();
        assert_eq!(s, vec![1.0, 3.0, 4.0, 5.0]);
    }

    fn scenario_model(base: [f64; 4]) -> BoostedEnsemble {
        BoostedEnsemble::new(
            ScenarioLabel::ALL.iter().map(|l| l.name().to_string()).collect(),
            vec!["x".into()],
            base.to_vec(),
            0.3,
            0.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn uniform_margins_tie_to_free_driving() {
        let d = classify_values(&[0.0], &scenario_model([0.0; 4])).unwrap();
        assert_eq!(d.probabilities(), [0.25; 4]);
        assert_eq!(d.argmax(), ScenarioLabel::FreeDriving);
        let shifted = classify_values(&[0.0], &scenario_model([3.0, 3.0, 5.0, 3.0])).unwrap();
        assert_eq!(shifted.argmax(), ScenarioLabel::CutIn);
        let shifted2 = classify_values(&[0.0], &scenario_model([-7.0, -7.0, -5.0, -7.0])).unwrap();
        assert_eq!(shifted2.argmax(), ScenarioLabel::CutIn);
        assert!(classify_values(&[0.0, 1.0], &scenario_model([0.0; 4])).is_err());
    }

    #[test]
    fn distribution_validation() {
        assert!(ScenarioDistribution::new([0.5, 0.5, 0.1, 0.0]).is_err());
        assert!(ScenarioDistribution::new([1.5, -0.5, 0.0, 0.0]).is_err());
        assert!(ScenarioDistribution::new([0.1, 0.2, 0.3, 0.4]).is_ok());
    }

    fn scene(build: impl FnOnce(&mut LabelMap)) -> FeatureVector {
        let mut map = LabelMap::filled(20, 10, class::BACKGROUND).unwrap();
        build(&mut map);
        extract_features(&map, &ClassTaxonomy::driving_default())
    }

    #[test]
    fn road_rules_examples() {
        let tax = ClassTaxonomy::driving_default();
        let rules = RoadRuleSet::default();
        rules.validate(&tax).unwrap();

        let zebra = scene(|m| m.fill_rect(0, 8, 20, 9, class::ZEBRA_LINE));
        assert_eq!(classify_road_type(&zebra, &rules, &tax).unwrap(), RoadType::Cross);

        let empty = scene(|_| {});
        assert_eq!(classify_road_type(&empty, &rules, &tax).unwrap(), RoadType::Ground);

        let tunnel = scene(|m| m.fill_rect(0, 0, 20, 4, class::TUNNEL));
        assert_eq!(classify_road_type(&tunnel, &rules, &tax).unwrap(), RoadType::Tunnel);
        let thin_tunnel = scene(|m| m.fill_rect(0, 0, 20, 1, class::TUNNEL));
        assert_ne!(classify_road_type(&thin_tunnel, &rules, &tax).unwrap(), RoadType::Tunnel);

        let expressway = scene(|m| {
            m.fill_rect(0, 4, 20, 10, class::ROAD);
            m.fill_rect(0, 3, 20, 4, class::GUARDRAIL);
        });
        assert_eq!(classify_road_type(&expressway, &rules, &tax).unwrap(), RoadType::Expressway);
        let ramp = scene(|m| {
            m.fill_rect(5, 8, 15, 10, class::ROAD);
            m.fill_rect(0, 3, 20, 4, class::GUARDRAIL);
        });
        assert_eq!(classify_road_type(&ramp, &rules, &tax).unwrap(), RoadType::Ramp);
        let flyover = scene(|m| m.fill_rect(0, 0, 20, 2, class::BRIDGE));
        assert_eq!(classify_road_type(&flyover, &rules, &tax).unwrap(), RoadType::FlyOver);
    }

    #[test]
    fn non_overlapping_rule_order_is_irrelevant() {
        let tax = ClassTaxonomy::driving_default();
        let rules = RoadRuleSet::default();
        let mut reversed = rules.clone();
        reversed.rules.reverse();
        let scenes = [
            scene(|m| m.fill_rect(0, 8, 20, 9, class::ZEBRA_LINE)),
            scene(|m| m.fill_rect(0, 0, 20, 4, class::TUNNEL)),
            scene(|m| {
                m.fill_rect(0, 4, 20, 10, class::ROAD);
                m.fill_rect(0, 3, 20, 4, class::GUARDRAIL);
            }),
            scene(|m| m.fill_rect(0, 0, 20, 2, class::BRIDGE)),
            scene(|m| m.fill_rect(0, 5, 20, 10, class::SIDEWALK)),
        ];
        for s in &scenes {
            assert_eq!(
                classify_road_type(s, &rules, &tax).unwrap(),
                classify_road_type(s, &reversed, &tax).unwrap()
            );
        }
    }

    #[test]
    fn rules_reject_unknown_fields_and_classes() {
        assert!(RoadRuleSet::from_json(r#"[{"when": {"present": ["x"]}, "then": "Mars"}]"#).is_err());
        assert!(RoadRuleSet::from_json(r#"[{"when": {"near": ["Car"]}, "then": "Cross"}]"#).is_err());
        let unknown = RoadRuleSet::from_json(r#"[{"when": {"present": ["Unicorn"]}, "then": "Cross"}]"#).unwrap();
        assert!(unknown.validate(&ClassTaxonomy::driving_default()).is_err());
    }

    fn separable(seed: u64, n: usize, shuffle_labels: bool) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let l = ScenarioLabel::ALL[i % 4];
            rows.push(vec![l.index() as f64 * 10.0 + rng.gen_range(0.0..5.0), rng.gen_range(0.0..1.0)]);
            labels.push(l);
        }
        if shuffle_labels {
            use rand::seq::SliceRandom;
            labels.shuffle(&mut rng);
        }
        LabeledDataset::scenarios(vec!["signal".into(), "noise".into()], rows, &labels).unwrap()
    }

    #[test]
    fn separable_corpus_scores_perfectly() {
        let cfg = TrainConfig { rounds: 10, ..TrainConfig::default() };
        let cv = cross_validate(&separable(1, 80, false), 5, &cfg).unwrap();
        assert_eq!(cv.f1_macro, 1.0);
        assert_eq!(cv.confusion.total(), 80);
    }

    #[test]
    fn shuffled_labels_score_near_chance() {
        let cfg = TrainConfig { rounds: 10, seed: 4, ..TrainConfig::default() };
        let data = separable(2, 400, true);
        let cv = cross_validate(&data, 5, &cfg).unwrap();
        assert!((cv.f1_macro - 0.25).abs() <= 0.1, "{}", cv.f1_macro);
        assert_eq!(cv, cross_validate(&data, 5, &cfg).unwrap());
    }
}
