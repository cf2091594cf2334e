//! Deterministic blocky driving scenes with ground truth: label maps, RGB
//! stubs, object centers, scenario and road labels, and analytic TTC.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::LightColor;
use crate::features::{extract_features, feature_names, LabeledDataset};
use crate::labelmap::{class, save_labelmap, save_rgb, ClassId, ClassTaxonomy, LabelMap, RgbImage};
use crate::motion::{PixelPoint, MIN_TTC_DISTANCE};
use crate::scenario::{RoadType, ScenarioLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    /// Taxonomy class name.
    pub class: String,
    /// Center at frame 0, pixels.
    pub center: (f64, f64),
    /// Pixels per second.
    pub velocity: (f64, f64),
    /// Block width and height, pixels.
    pub size: (usize, usize),
}

impl ObjectSpec {
    pub fn center_at(&self, t: usize, fps: f64) -> PixelPoint {
        let dt = t as f64 / fps;
        PixelPoint::new(self.center.0 + self.velocity.0 * dt, self.center.1 + self.velocity.1 * dt)
    }

    /// Half-open pixel rectangle `(x0, y0, x1, y1)` whose pixel centroid is
    /// within half a pixel of the center.
    fn rect_at(&self, t: usize, fps: f64) -> (i64, i64, i64, i64) {
        let c = self.center_at(t, fps);
        let (w, h) = self.size;
        let x0 = (c.x - (w as f64 - 1.0) / 2.0).round() as i64;
        let y0 = (c.y - (h as f64 - 1.0) / 2.0).round() as i64;
        (x0, y0, x0 + w as i64, y0 + h as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub scenario: ScenarioLabel,
    pub road_type: RoadType,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub frames: usize,
    pub objects: Vec<ObjectSpec>,
    /// Traffic light drawn in the sky band when set.
    pub light: Option<LightColor>,
    /// Roadside clutter, 0 to 1.
    pub infra_density: f64,
    /// Per-pixel probability of replacing the label with a random class.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            scenario: ScenarioLabel::FreeDriving,
            road_type: RoadType::Ground,
            width: 256,
            height: 128,
            fps: 25.0,
            frames: 10,
            objects: Vec::new(),
            light: None,
            infra_density: 0.5,
            noise: 0.0,
            seed: 0,
        }
    }
}

fn taxonomy() -> &'static ClassTaxonomy {
    use std::sync::OnceLock;
    static TAX: OnceLock<ClassTaxonomy> = OnceLock::new();
    TAX.get_or_init(ClassTaxonomy::driving_default)
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(text).map_err(|e| Error::format("scene spec", e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(Error::invalid(format!("scene must be at least 32x32, got {}x{}", self.width, self.height)));
        }
        if self.width * self.height > crate::labelmap::MAX_PIXELS {
            return Err(Error::invalid("scene too large"));
        }
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(Error::invalid(format!("fps must be positive, got {}", self.fps)));
        }
        if self.frames == 0 {
            return Err(Error::invalid("scene needs at least one frame"));
        }
        if !(0.0..=1.0).contains(&self.noise) || !(0.0..=1.0).contains(&self.infra_density) {
            return Err(Error::invalid("noise and infra_density must lie in [0, 1]"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if taxonomy().id_of(&o.class).is_none() {
                return Err(Error::invalid(format!("object {i}: unknown class {:?}", o.class)));
            }
            if o.size.0 == 0 || o.size.1 == 0 {
                return Err(Error::invalid(format!("object {i}: empty size")));
            }
            for t in 0..self.frames {
                let (x0, y0, x1, y1) = o.rect_at(t, self.fps);
                if x0 < 0 || y0 < 0 || x1 > self.width as i64 || y1 > self.height as i64 {
                    return Err(Error::invalid(format!("object {i} leaves the frame at t = {t}")));
                }
            }
        }
        Ok(())
    }

    /// A random scene of the given kind. Object centers and velocities are
    /// aligned to whole pixels per frame so rendered centroids are exact.
    pub fn sample(scenario: ScenarioLabel, seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = SceneSpec {
            scenario,
            road_type: RoadType::ALL[rng.gen_range(0..RoadType::ALL.len())],
            light: [None, Some(LightColor::Red), Some(LightColor::Green), Some(LightColor::Yellow)][rng.gen_range(0..4)],
            infra_density: rng.gen_range(0.0..1.0),
            seed: rng.gen(),
            ..SceneSpec::default()
        };
        let (w, h) = (spec.width as f64, spec.height as f64);
        let fps = spec.fps;
        // Top-left corner in whole pixels, converted to a center.
        let place = |x0: f64, y0: f64, size: (usize, usize)| {
            (x0.round() + (size.0 as f64 - 1.0) / 2.0, y0.round() + (size.1 as f64 - 1.0) / 2.0)
        };
        let mut objects = Vec::new();
        match scenario {
            ScenarioLabel::FreeDriving => {
                if rng.gen_bool(0.5) {
                    let size = (8, 6);
                    let x = if rng.gen_bool(0.5) { rng.gen_range(0.12..0.2) } else { rng.gen_range(0.76..0.84) } * w;
                    objects.push(ObjectSpec {
                        class: "Car".into(),
                        center: place(x, rng.gen_range(0.46..0.5) * h, size),
                        velocity: (0.0, 0.0),
                        size,
                    });
                }
            }
            ScenarioLabel::Following => {
                let cw = rng.gen_range(20..32);
                let size = (cw, cw * 7 / 10);
                let cy = rng.gen_range(0.58..0.72) * h;
                objects.push(ObjectSpec {
                    class: "Car".into(),
                    center: place(w / 2.0 - cw as f64 / 2.0 + rng.gen_range(-4.0..4.0), cy - size.1 as f64 / 2.0, size),
                    velocity: (0.0, fps * rng.gen_range(-1..=1) as f64),
                    size,
                });
            }
            ScenarioLabel::CutIn => {
                let cw = rng.gen_range(18..28);
                let size = (cw, cw * 7 / 10);
                let left = rng.gen_bool(0.5);
                let line = if left { w / 3.0 } else { 2.0 * w / 3.0 };
                let cx = line + rng.gen_range(-6.0..6.0);
                let cy = rng.gen_range(0.58..0.72) * h;
                let toward_center = if left { 1.0 } else { -1.0 };
                objects.push(ObjectSpec {
                    class: "Car".into(),
                    center: place(cx - cw as f64 / 2.0, cy - size.1 as f64 / 2.0, size),
                    velocity: (toward_center * fps * rng.gen_range(1..=2) as f64, 0.0),
                    size,
                });
            }
            ScenarioLabel::EmergencyAvoidance => {
                let side = rng.gen_range(8..14);
                let (class, size) = ("nmt", (side, side));
                let from_left = rng.gen_bool(0.5);
                let x = if from_left { rng.gen_range(0.12..0.3) } else { rng.gen_range(0.6..0.78) } * w;
                objects.push(ObjectSpec {
                    class: class.into(),
                    center: place(x, rng.gen_range(0.62..0.78) * h, size),
                    velocity: (if from_left { 4.0 } else { -4.0 } * fps, fps),
                    size,
                });
            }
        }
        spec.objects = objects;
        spec
    }

    /// A cyclist crossing in front at 100 px/s under a red light, on a road
    /// with a zebra crossing.
    pub fn crossing() -> SceneSpec {
        SceneSpec {
            scenario: ScenarioLabel::EmergencyAvoidance,
            road_type: RoadType::Cross,
            frames: 12,
            light: Some(LightColor::Red),
            infra_density: 0.4,
            objects: vec![ObjectSpec {
                class: "nmt".into(),
                center: (60.5, 86.5),
                velocity: (100.0, 25.0),
                size: (12, 12),
            }],
            seed: 11,
            ..SceneSpec::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub id: usize,
    pub class: String,
    pub center: PixelPoint,
    pub velocity: (f64, f64),
    /// Seconds until the center reaches the bottom row; `None` when not
    /// approaching.
    pub ttc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub frame: usize,
    pub scenario: ScenarioLabel,
    pub road_type: RoadType,
    pub light: Option<LightColor>,
    pub objects: Vec<ObjectTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub labelmap: LabelMap,
    pub rgb: RgbImage,
    pub truth: FrameTruth,
}

pub fn light_rgb(color: LightColor) -> [u8; 3] {
    match color {
        LightColor::Red => [230, 30, 30],
        LightColor::Green => [30, 200, 80],
        LightColor::Yellow => [240, 200, 20],
        LightColor::Unknown => [90, 90, 90],
    }
}

/// Achromatic stub color: the class gray level on all channels.
pub fn palette(tax: &ClassTaxonomy, id: ClassId) -> [u8; 3] {
    let g = tax.gray(id).unwrap_or(0);
    [g, g, g]
}

fn frac(v: usize, f: f64) -> i64 {
    (v as f64 * f).round() as i64
}

fn static_layers(spec: &SceneSpec, map: &mut LabelMap) {
    let (w, h) = (spec.width, spec.height);
    let (wi, hi) = (w as i64, h as i64);
    let sky_end = frac(h, 0.3);
    let horizon = frac(h, 0.45);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let top = if spec.road_type == RoadType::Tunnel { class::TUNNEL } else { class::SKY };
    map.fill_rect(0, 0, wi, sky_end, top);
    map.fill_rect(0, sky_end, wi, horizon, class::BUILDING);
    for _ in 0..(spec.infra_density * 10.0).round() as usize {
        let c = [class::TREE, class::POLE, class::WALL, class::FENCE][rng.gen_range(0..4)];
        let bw = rng.gen_range(3..12);
        let x0 = rng.gen_range(0..wi - bw);
        let y0 = rng.gen_range(sky_end - 4..horizon - 2);
        map.fill_rect(x0, y0, x0 + bw, horizon, c);
    }

    map.fill_rect(0, horizon, wi, hi, class::ROAD);
    match spec.road_type {
        RoadType::Expressway => {
            map.fill_rect(0, horizon, frac(w, 0.08), hi, class::TERRAIN);
            map.fill_rect(frac(w, 0.92), horizon, wi, hi, class::TERRAIN);
            map.fill_rect(frac(w, 0.08), horizon, frac(w, 0.1), hi, class::GUARDRAIL);
            map.fill_rect(frac(w, 0.9), horizon, frac(w, 0.92), hi, class::GUARDRAIL);
        }
        RoadType::Ramp => {
            map.fill_rect(0, horizon, frac(w, 0.25), hi, class::TERRAIN);
            map.fill_rect(frac(w, 0.75), horizon, wi, hi, class::TERRAIN);
            map.fill_rect(frac(w, 0.23), horizon, frac(w, 0.25), hi, class::GUARDRAIL);
            map.fill_rect(frac(w, 0.75), horizon, frac(w, 0.77), hi, class::GUARDRAIL);
        }
        _ => {
            map.fill_rect(0, horizon, frac(w, 0.1), hi, class::SIDEWALK);
            map.fill_rect(frac(w, 0.9), horizon, wi, hi, class::SIDEWALK);
        }
    }
    match spec.road_type {
        RoadType::Cross => {
            let (y0, y1) = (horizon + frac(h, 0.03), horizon + frac(h, 0.09));
            let mut x = frac(w, 0.1);
            while x < frac(w, 0.9) {
                map.fill_rect(x, y0, x + 4, y1, class::ZEBRA_LINE);
                x += 8;
            }
        }
        RoadType::FlyOver => {
            map.fill_rect(0, sky_end - frac(h, 0.08), wi, sky_end + frac(h, 0.04), class::BRIDGE);
        }
        _ => {}
    }
    for line in [w / 3, 2 * w / 3] {
        let x = line as i64;
        let mut y = horizon + 2;
        while y < hi {
            map.fill_rect(x - 1, y, x + 1, y + 5, class::ROAD_LINE);
            y += 10;
        }
    }
}

fn light_rect(spec: &SceneSpec) -> (i64, i64, i64, i64) {
    let x0 = frac(spec.width, 0.82);
    let y0 = frac(spec.height, 0.06);
    (x0, y0, x0 + 6, y0 + 12)
}

/// Renders frame `t` of a scene.
pub fn generate_frame(spec: &SceneSpec, t: usize) -> Result<SynthFrame> {
    if t >= spec.frames {
        return Err(Error::invalid(format!("frame {t} out of range for {} frames", spec.frames)));
    }
    spec.validate()?;
    let tax = taxonomy();
    let mut map = LabelMap::filled(spec.width, spec.height, class::BACKGROUND)?;
    static_layers(spec, &mut map);

    let light = spec.light.map(|c| (c, light_rect(spec)));
    if let Some((_, (x0, y0, x1, y1))) = light {
        map.fill_rect(x0, y0, x1, y1, class::SIGN);
    }

    let ego_row = spec.height as f64;
    let mut objects = Vec::with_capacity(spec.objects.len());
    for (id, o) in spec.objects.iter().enumerate() {
        let c = tax.id_of(&o.class).expect("validated class");
        let (x0, y0, x1, y1) = o.rect_at(t, spec.fps);
        map.fill_rect(x0, y0, x1, y1, c);
        let center = o.center_at(t, spec.fps);
        let ttc = (o.velocity.1 > 0.0).then(|| (ego_row - center.y).max(MIN_TTC_DISTANCE) / o.velocity.1);
        objects.push(ObjectTruth {
            id,
            class: o.class.clone(),
            center,
            velocity: o.velocity,
            ttc,
        });
    }

    if spec.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let top = (tax.len() - 1) as ClassId;
        for y in 0..spec.height {
            for x in 0..spec.width {
                if rng.gen_bool(spec.noise) {
                    map.set(x, y, rng.gen_range(1..=top));
                }
            }
        }
    }

    let mut rgb = RgbImage::filled(spec.width, spec.height, [0, 0, 0])?;
    for y in 0..spec.height {
        for x in 0..spec.width {
            rgb.set_pixel(x, y, palette(tax, map.get(x, y)));
        }
    }
    if let Some((color, (x0, y0, x1, y1))) = light {
        for y in y0..y1 {
            for x in x0..x1 {
                if map.get(x as usize, y as usize) == class::SIGN {
                    rgb.set_pixel(x as usize, y as usize, light_rgb(color));
                }
            }
        }
    }

    Ok(SynthFrame {
        labelmap: map,
        rgb,
        truth: FrameTruth {
            frame: t,
            scenario: spec.scenario,
            road_type: spec.road_type,
            light: spec.light,
            objects,
        },
    })
}

/// All frames of a scene, in order.
pub fn generate_sequence(spec: &SceneSpec) -> Result<Vec<SynthFrame>> {
    spec.validate()?;
    (0..spec.frames).into_par_iter().map(|t| generate_frame(spec, t)).collect()
}

#[derive(Debug, Clone)]
pub struct CorpusFrame {
    pub id: String,
    pub spec: SceneSpec,
    pub frame: SynthFrame,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub frames: Vec<CorpusFrame>,
    pub dataset: LabeledDataset,
}

/// `count` single frames with labels cycling through the four scenarios,
/// each from its own random scene at a random time.
pub fn generate_corpus(count: usize, seed: u64) -> Result<Corpus> {
    if count == 0 {
        return Err(Error::invalid("corpus count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan: Vec<(ScenarioLabel, u64, usize)> = (0..count)
        .map(|i| (ScenarioLabel::ALL[i % 4], rng.gen(), rng.gen_range(0..SceneSpec::default().frames)))
        .collect();
    let tax = taxonomy();
    let frames: Vec<CorpusFrame> = plan
        .par_iter()
        .enumerate()
        .map(|(i, &(label, s, t))| {
            let spec = SceneSpec::sample(label, s);
            let frame = generate_frame(&spec, t)?;
            Ok(CorpusFrame {
                id: format!("{i:05}"),
                spec,
                frame,
            })
        })
        .collect::<Result<_>>()?;
    let rows = frames
        .iter()
        .map(|f| extract_features(&f.frame.labelmap, tax).values())
        .collect();
    let labels: Vec<ScenarioLabel> = plan.iter().map(|p| p.0).collect();
    let dataset = LabeledDataset::scenarios(feature_names(tax), rows, &labels)?;
    Ok(Corpus { frames, dataset })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `frames/<id>.pgm`, `rgb/<id>.ppm`, `frames/labels.csv` and
/// `truth.csv` under `dir`.
fn write_frames<'a>(dir: &Path, frames: impl Iterator<Item = (&'a str, &'a SynthFrame)> + Clone) -> Result<()> {
    let frame_dir = dir.join("frames");
    let rgb_dir = dir.join("rgb");
    create_dir(&frame_dir)?;
    create_dir(&rgb_dir)?;
    for (id, f) in frames.clone() {
        save_labelmap(&f.labelmap, frame_dir.join(format!("{id}.pgm")))?;
        save_rgb(&f.rgb, rgb_dir.join(format!("{id}.ppm")))?;
    }

    let labels_path = frame_dir.join("labels.csv");
    let mut labels = csv::Writer::from_writer(Vec::new());
    let truth_path = dir.join("truth.csv");
    let mut truth = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::format("synth csv", e.to_string());
    labels.write_record(["frame_id", "label"]).map_err(csv_err)?;
    truth
        .write_record([
            "frame_id", "t", "scenario", "road_type", "light", "object_id", "class", "cx", "cy", "vx", "vy", "ttc",
        ])
        .map_err(csv_err)?;
    for (id, f) in frames {
        let tr = &f.truth;
        labels.write_record([id, tr.scenario.name()]).map_err(csv_err)?;
        let head = [
            id.to_string(),
            tr.frame.to_string(),
            tr.scenario.name().to_string(),
            tr.road_type.name().to_string(),
            tr.light.map_or("", |l| l.name()).to_string(),
        ];
        if tr.objects.is_empty() {
            let mut row = head.to_vec();
            row.extend(std::iter::repeat_n(String::new(), 7));
            truth.write_record(&row).map_err(csv_err)?;
        }
        for o in &tr.objects {
            let mut row = head.to_vec();
            row.extend([
                o.id.to_string(),
                o.class.clone(),
                o.center.x.to_string(),
                o.center.y.to_string(),
                o.velocity.0.to_string(),
                o.velocity.1.to_string(),
                o.ttc.map_or_else(|| "inf".to_string(), |t| t.to_string()),
            ]);
            truth.write_record(&row).map_err(csv_err)?;
        }
    }
    for (path, w) in [(labels_path, labels), (truth_path, truth)] {
        let bytes = w.into_inner().map_err(|e| Error::format("synth csv", e.to_string()))?;
        let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

impl Corpus {
    /// Frame files plus `features.csv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_frames(dir, self.frames.iter().map(|f| (f.id.as_str(), &f.frame)))?;
        self.dataset.save_csv(dir.join("features.csv"))
    }
}

/// Writes a scene's frames, named by frame index.
pub fn write_sequence(spec: &SceneSpec, dir: impl AsRef<Path>) -> Result<Vec<SynthFrame>> {
    let frames = generate_sequence(spec)?;
    let ids: Vec<String> = (0..frames.len()).map(|t| format!("{t:05}")).collect();
    write_frames(dir.as_ref(), ids.iter().map(String::as_str).zip(frames.iter()))?;
    Ok(frames)
}
