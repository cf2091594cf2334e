//! Textual scene explanations: element states, scenario, road type, conflict
//! tracks, complexity and rule-driven advisories for each frame.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complexity::{quantity_count, ComplexityReport};
use crate::error::{Error, Result, StageExt};
use crate::features::extract_features;
use crate::gbdt::BoostedEnsemble;
use crate::labelmap::{ClassId, ClassTaxonomy, LabelMap, RgbImage};
use crate::motion::{self, DbscanParams, KinematicState, TrackParams};
use crate::scenario::{classify_road_type, classify_scenario, RoadRuleSet, RoadType, ScenarioLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightColor {
    Red,
    Green,
    Yellow,
    Unknown,
}

impl LightColor {
    pub fn name(self) -> &'static str {
        match self {
            LightColor::Red => "red",
            LightColor::Green => "green",
            LightColor::Yellow => "yellow",
            LightColor::Unknown => "unknown",
        }
    }
}

/// Hue windows (degrees, inclusive) and gating for traffic-light color.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LightColorConfig {
    /// Wraps through 0: `[red.0, 360) ∪ [0, red.1]`.
    pub red: (f64, f64),
    pub green: (f64, f64),
    pub yellow: (f64, f64),
    pub min_saturation: f64,
    pub min_value: f64,
    /// Share of mask pixels that must fall in some color window.
    pub min_qualifying_fraction: f64,
}

impl Default for LightColorConfig {
    fn default() -> Self {
        LightColorConfig {
            red: (345.0, 15.0),
            green: (90.0, 150.0),
            yellow: (45.0, 70.0),
            min_saturation: 0.3,
            min_value: 0.3,
            min_qualifying_fraction: 0.2,
        }
    }
}

/// HSV with hue in degrees `[0, 360)` and saturation/value in `[0, 1]`.
pub fn rgb_to_hsv([r, g, b]: [u8; 3]) -> (f64, f64, f64) {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    (hue, sat, max)
}

fn pixel_color(rgb: [u8; 3], cfg: &LightColorConfig) -> Option<LightColor> {
    let (h, s, v) = rgb_to_hsv(rgb);
    if s < cfg.min_saturation || v < cfg.min_value {
        return None;
    }
    let within = |(lo, hi): (f64, f64)| h >= lo && h <= hi;
    if h >= cfg.red.0 || h <= cfg.red.1 {
        Some(LightColor::Red)
    } else if within(cfg.green) {
        Some(LightColor::Green)
    } else if within(cfg.yellow) {
        Some(LightColor::Yellow)
    } else {
        None
    }
}

/// Dominant lamp color over the mask pixels (row-major indices). Plurality
/// among qualifying pixels wins; a tie or too few qualifying pixels gives
/// `Unknown`.
pub fn light_color(rgb: &RgbImage, mask: &[usize], cfg: &LightColorConfig) -> LightColor {
    if mask.is_empty() {
        return LightColor::Unknown;
    }
    let mut counts = [0usize; 3];
    for &i in mask {
        match pixel_color(rgb.pixel_at(i), cfg) {
            Some(LightColor::Red) => counts[0] += 1,
            Some(LightColor::Green) => counts[1] += 1,
            Some(LightColor::Yellow) => counts[2] += 1,
            _ => {}
        }
    }
    let qualifying: usize = counts.iter().sum();
    if (qualifying as f64) < cfg.min_qualifying_fraction * mask.len() as f64 || qualifying == 0 {
        return LightColor::Unknown;
    }
    let best = *counts.iter().max().expect("three counts");
    if counts.iter().filter(|&&c| c == best).count() > 1 {
        return LightColor::Unknown;
    }
    [LightColor::Red, LightColor::Green, LightColor::Yellow][counts.iter().position(|&c| c == best).unwrap()]
}

/// A class present in the frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementState {
    pub class_id: u32,
    pub name: String,
    pub present: bool,
    pub pixel_area: u64,
    pub centroid: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<LightColor>,
}

/// Latest state of a conflict track at one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub track_id: usize,
    pub x: f64,
    pub y: f64,
    pub v_x: Option<f64>,
    pub v_y: Option<f64>,
    pub a_x: Option<f64>,
    pub a_y: Option<f64>,
    /// Seconds; `None` when the object is not approaching.
    pub ttc: Option<f64>,
    pub severe: bool,
}

/// Condition language for advisory rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Predicate {
    /// A class with this name is present.
    Present(String),
    Absent(String),
    /// A present class carries this attribute value.
    Attribute { class: String, equals: LightColor },
    /// Some track moves sideways faster than `min_abs_vx` px/s while its
    /// center lies within the central `band` fraction of the frame width.
    LateralTrack { min_abs_vx: f64, band: f64 },
    /// Some track's TTC is at most this many seconds.
    TtcAtMost(f64),
    Scenario(ScenarioLabel),
    RoadType(RoadType),
    All(Vec<Predicate>),
    Any(Vec<Predicate>),
    Not(Box<Predicate>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvisoryRule {
    pub name: String,
    pub when: Predicate,
    /// May reference `{ttc}`, `{scenario}` and `{road_type}`.
    pub message: String,
}

const PLACEHOLDERS: [&str; 3] = ["ttc", "scenario", "road_type"];

fn placeholders(template: &str) -> Result<Vec<&str>> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| Error::invalid(format!("unclosed placeholder in {template:?}")))?;
        out.push(&rest[open + 1..open + close]);
        rest = &rest[open + close + 1..];
    }
    if rest.contains('}') {
        return Err(Error::invalid(format!("stray '}}' in {template:?}")));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AdvisoryRuleSet {
    pub rules: Vec<AdvisoryRule>,
}

impl Default for AdvisoryRuleSet {
    fn default() -> Self {
        Self::from_json(include_str!("../data/advisory_rules.json")).expect("built-in advisory rules parse")
    }
}

impl AdvisoryRuleSet {
    pub fn from_json(text: &str) -> Result<Self> {
        let set: AdvisoryRuleSet =
            serde_json::from_str(text).map_err(|e| Error::format("advisory rules", e.to_string()))?;
        for rule in &set.rules {
            for p in placeholders(&rule.message)? {
                if !PLACEHOLDERS.contains(&p) {
                    return Err(Error::format(
                        "advisory rules",
                        format!("rule {:?} uses unknown placeholder {{{p}}}", rule.name),
                    ));
                }
            }
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Everything a rule condition can inspect.
pub struct RuleContext<'a> {
    pub elements: &'a [ElementState],
    pub tracks: &'a [TrackSummary],
    pub frame_width: usize,
    pub scenario: ScenarioLabel,
    pub road_type: RoadType,
}

impl RuleContext<'_> {
    fn element(&self, name: &str) -> Option<&ElementState> {
        self.elements
            .iter()
            .find(|e| e.present && e.name.eq_ignore_ascii_case(name))
    }

    fn min_ttc(&self) -> Option<f64> {
        self.tracks.iter().filter_map(|t| t.ttc).min_by(f64::total_cmp)
    }

    pub fn holds(&self, p: &Predicate) -> bool {
        match p {
            Predicate::Present(name) => self.element(name).is_some(),
            Predicate::Absent(name) => self.element(name).is_none(),
            Predicate::Attribute { class, equals } => {
                self.element(class).is_some_and(|e| e.attribute == Some(*equals))
            }
            Predicate::LateralTrack { min_abs_vx, band } => {
                let half = self.frame_width as f64 / 2.0;
                self.tracks.iter().any(|t| {
                    t.v_x.is_some_and(|vx| vx.abs() > *min_abs_vx) && (t.x - half).abs() <= band * half
                })
            }
            Predicate::TtcAtMost(limit) => self.min_ttc().is_some_and(|t| t <= *limit),
            Predicate::Scenario(label) => self.scenario == *label,
            Predicate::RoadType(road) => self.road_type == *road,
            Predicate::All(ps) => ps.iter().all(|p| self.holds(p)),
            Predicate::Any(ps) => ps.iter().any(|p| self.holds(p)),
            Predicate::Not(p) => !self.holds(p),
        }
    }

    fn bind(&self, template: &str) -> String {
        let ttc = self.min_ttc().map_or_else(|| "inf".to_string(), |t| format!("{t:.2}"));
        template
            .replace("{ttc}", &ttc)
            .replace("{scenario}", self.scenario.display())
            .replace("{road_type}", self.road_type.name())
    }
}

/// Messages of all rules whose conditions hold, in rule order, without
/// duplicates.
pub fn apply_rules(ctx: &RuleContext, rules: &AdvisoryRuleSet) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for rule in &rules.rules {
        if ctx.holds(&rule.when) {
            let msg = ctx.bind(&rule.message);
            if !out.contains(&msg) {
                out.push(msg);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub label: ScenarioLabel,
    pub probabilities: BTreeMap<ScenarioLabel, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub frame_id: String,
    pub scenario: ScenarioSummary,
    pub road_type: RoadType,
    pub elements: Vec<ElementState>,
    pub tracks: Vec<TrackSummary>,
    pub complexity: ComplexityReport,
    pub advisories: Vec<String>,
}

impl ExplanationReport {
    /// Single-line JSON, suitable for NDJSON output.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("report", e.to_string()))
    }

    /// Human-readable block.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Frame {}", self.frame_id);
        let _ = writeln!(
            s,
            "  Scenario: {} ({:.1}%)",
            self.scenario.label.display(),
            100.0 * self.scenario.probabilities.get(&self.scenario.label).copied().unwrap_or(0.0)
        );
        let _ = writeln!(s, "  Road type: {}", self.road_type.name());
        let names: Vec<String> = self
            .elements
            .iter()
            .map(|e| match e.attribute {
                Some(a) => format!("{} ({})", e.name, a.name()),
                None => e.name.clone(),
            })
            .collect();
        let _ = writeln!(s, "  Elements: {}", if names.is_empty() { "none".into() } else { names.join(", ") });
        for t in &self.tracks {
            let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"));
            let _ = writeln!(
                s,
                "  Track {} at ({:.1}, {:.1}) v=({}, {}) px/s, TTC {}{}",
                t.track_id,
                t.x,
                t.y,
                fmt(t.v_x),
                fmt(t.v_y),
                t.ttc.map_or_else(|| "inf".to_string(), |v| format!("{v:.2} s")),
                if t.severe { " [severe]" } else { "" }
            );
        }
        let c = &self.complexity;
        let _ = writeln!(
            s,
            "  Complexity d = {:.2} (C = {:.2}, m = {:.1}%, n = {}/{}, 1/TTC = {:.3})",
            c.d, c.c, c.m, c.n, c.n_max, c.inv_ttc
        );
        for a in &self.advisories {
            let _ = writeln!(s, "  > {a}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    /// Classes whose pixels form conflict objects.
    pub conflict_classes: Vec<String>,
    /// Classes carrying a traffic-light color attribute.
    pub light_classes: Vec<String>,
    /// Defaults to [`DbscanParams::for_frame`].
    pub dbscan: Option<DbscanParams>,
    pub fps: f64,
    /// Defaults to 10% of the frame diagonal.
    pub max_jump: Option<f64>,
    /// Defaults to the frame height.
    pub ego_row: Option<f64>,
    /// Segmentation accuracy in percent, applied to every frame.
    pub variety_m: f64,
    /// Defaults to the number of non-background taxonomy classes.
    pub n_max: Option<usize>,
    pub light: LightColorConfig,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            conflict_classes: vec!["Car".into(), "nmt".into(), "Pedestrian".into()],
            light_classes: vec!["Sign".into()],
            dbscan: None,
            fps: 25.0,
            max_jump: None,
            ego_row: None,
            variety_m: 78.8,
            n_max: None,
            light: LightColorConfig::default(),
        }
    }
}

pub struct FrameInput {
    pub frame_id: String,
    pub labelmap: LabelMap,
    pub rgb: Option<RgbImage>,
}

/// Per-frame, order-independent results.
struct FrameAnalysis {
    elements: Vec<ElementState>,
    scenario: crate::scenario::ScenarioDistribution,
    road_type: RoadType,
    n: usize,
    centers: Vec<motion::PixelPoint>,
}

/// Bundles the models and rule sets needed to explain frames.
pub struct Explainer<'a> {
    pub taxonomy: &'a ClassTaxonomy,
    pub model: &'a BoostedEnsemble,
    pub road_rules: &'a RoadRuleSet,
    pub advisories: &'a AdvisoryRuleSet,
    pub config: &'a ExplainConfig,
}

impl Explainer<'_> {
    fn resolve(&self, names: &[String]) -> Result<Vec<ClassId>> {
        names
            .iter()
            .map(|n| {
                self.taxonomy
                    .id_of(n)
                    .ok_or_else(|| Error::invalid(format!("unknown class {n:?} in explain config")))
            })
            .collect()
    }

    fn analyze(&self, frame: &FrameInput, conflict: &[ClassId], light: &[ClassId]) -> Result<FrameAnalysis> {
        let map = &frame.labelmap;
        map.validate(self.taxonomy).stage("labelmap")?;
        let features = extract_features(map, self.taxonomy);
        let scenario = classify_scenario(&features, self.model).stage("scenario")?;
        let road_type = classify_road_type(&features, self.road_rules, self.taxonomy).stage("road_type")?;

        if let Some(rgb) = &frame.rgb {
            if (rgb.width(), rgb.height()) != (map.width(), map.height()) {
                return Err(Error::DimensionMismatch {
                    expected: format!("{}x{}", map.width(), map.height()),
                    found: format!("{}x{}", rgb.width(), rgb.height()),
                })
                .stage("light_color");
            }
        }
        let elements = features
            .classes()
            .iter()
            .filter(|c| c.presence && c.class != crate::labelmap::class::BACKGROUND)
            .map(|c| {
                let attribute = light.contains(&c.class).then(|| match &frame.rgb {
                    Some(rgb) => light_color(rgb, &map.mask(c.class), &self.config.light),
                    None => LightColor::Unknown,
                });
                ElementState {
                    class_id: c.class as u32,
                    name: self.taxonomy.name(c.class).unwrap_or_default().to_string(),
                    present: true,
                    pixel_area: c.pixel_sum,
                    centroid: Some(c.centroid),
                    attribute,
                }
            })
            .collect();

        let params = self
            .config
            .dbscan
            .unwrap_or_else(|| DbscanParams::for_frame(map.width(), map.height()));
        let centers = motion::detect_centers(map, conflict, &params).stage("motion")?;
        Ok(FrameAnalysis {
            elements,
            scenario,
            road_type,
            n: quantity_count(map),
            centers,
        })
    }

    /// Explains a frame sequence in order. Per-frame analysis runs in
    /// parallel; tracking runs over the whole sequence.
    pub fn explain_sequence(&self, frames: &[FrameInput]) -> Result<Vec<ExplanationReport>> {
        let Some(first) = frames.first() else {
            return Ok(Vec::new());
        };
        let conflict = self.resolve(&self.config.conflict_classes).stage("config")?;
        let light = self.resolve(&self.config.light_classes).stage("config")?;
        let analyses: Vec<FrameAnalysis> = frames
            .par_iter()
            .map(|f| self.analyze(f, &conflict, &light).map_err(|e| tag_frame(e, &f.frame_id)))
            .collect::<Result<_>>()?;

        let (w, h) = (first.labelmap.width(), first.labelmap.height());
        let diag = (w as f64).hypot(h as f64);
        let track_params = TrackParams {
            fps: self.config.fps,
            max_jump: self.config.max_jump.unwrap_or(0.1 * diag),
            ego_row: self.config.ego_row.unwrap_or(h as f64),
        };
        let centers: Vec<_> = analyses.iter().map(|a| a.centers.clone()).collect();
        let tracks = motion::track(&centers, &track_params).stage("motion")?;
        let kin: Vec<Vec<KinematicState>> = tracks
            .iter()
            .map(|t| motion::track_states(&t.trajectory))
            .collect::<Result<_>>()
            .stage("motion")?;

        let n_max = self.config.n_max.unwrap_or(self.taxonomy.len().saturating_sub(1));
        frames
            .iter()
            .zip(analyses)
            .enumerate()
            .map(|(index, (frame, a))| {
                let summaries: Vec<TrackSummary> = tracks
                    .iter()
                    .zip(&kin)
                    .filter_map(|(t, k)| {
                        let p = t.trajectory.at_frame(index)?;
                        let state = k[index - t.trajectory.start_frame];
                        Some(TrackSummary {
                            track_id: t.id,
                            x: p.x,
                            y: p.y,
                            v_x: state.vx,
                            v_y: state.vy,
                            a_x: state.ax,
                            a_y: state.ay,
                            ttc: state.ttc.is_finite().then_some(state.ttc),
                            severe: state.is_severe(),
                        })
                    })
                    .collect();
                let min_ttc = summaries.iter().filter_map(|t| t.ttc).fold(f64::INFINITY, f64::min);
                let complexity = ComplexityReport::compute(&a.scenario, self.config.variety_m, a.n, n_max, min_ttc)
                    .stage("complexity")
                    .map_err(|e| tag_frame(e, &frame.frame_id))?;
                let label = a.scenario.argmax();
                let ctx = RuleContext {
                    elements: &a.elements,
                    tracks: &summaries,
                    frame_width: w,
                    scenario: label,
                    road_type: a.road_type,
                };
                let advisories = apply_rules(&ctx, self.advisories);
                Ok(ExplanationReport {
                    frame_id: frame.frame_id.clone(),
                    scenario: ScenarioSummary {
                        label,
                        probabilities: ScenarioLabel::ALL
                            .iter()
                            .map(|&l| (l, a.scenario.prob(l)))
                            .collect(),
                    },
                    road_type: a.road_type,
                    elements: a.elements,
                    tracks: summaries,
                    complexity,
                    advisories,
                })
            })
            .collect()
    }

    /// Explains a single frame with no motion history.
    pub fn build_report(&self, frame: &FrameInput) -> Result<ExplanationReport> {
        self.explain_sequence(std::slice::from_ref(frame))
            .map(|mut v| v.pop().expect("one report per frame"))
    }
}

fn tag_frame(e: Error, frame: &str) -> Error {
    match e {
        Error::Stage { stage, source } => Error::Stage {
            stage,
            source: Box::new(Error::invalid(format!("frame {frame}: {source}"))),
        },
        other => other,
    }
}
