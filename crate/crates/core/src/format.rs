//! On-disk formats.
//!
//! - FMAP: feature maps, `"FMAP"`, version `u16`, `H`, `W`, `D` as `u32`,
//!   then `H·W·D` `f32` values, row-major `[row][col][channel]`.
//! - CNMO: trained models, `"CNMO"`, version `u16`, dictionary, occluder
//!   simplex, then per class the label and its mixtures.
//! - JSON scene annotations and manifests, with masks run-length encoded.
//! - JSON predictions plus an order-graph text file per scene.
//!
//! All binary fields are little-endian. Writes go through a temporary file
//! in the target directory followed by a rename.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{PredictedObject, ScenePrediction};
use crate::learning::TrainedModel;
use crate::model::{ClassModel, MixtureModel, OccluderModel};
use crate::orm::{OrderEdge, OrderGraph, SceneResult};
use crate::synth::{
    GeneratedScene, GroundTruth, GroundTruthObject, OcclusionLevel, SceneSpec, Split, WorldConfig,
};
use crate::tensor::{BinaryMask, BoundingBox, FeatureMap};
use crate::vmf::{VmfComponent, VmfDictionary};

pub const FMAP_MAGIC: [u8; 4] = *b"FMAP";
pub const FMAP_VERSION: u16 = 1;
pub const MODEL_MAGIC: [u8; 4] = *b"CNMO";
pub const MODEL_VERSION: u16 = 1;
pub const MANIFEST_VERSION: u16 = 1;

const FMAP_HEADER: usize = 4 + 2 + 3 * 4;
/// Upper bound on any length field, against corrupt headers.
const MAX_LEN: u64 = 1 << 32;

/// Little-endian reader over a byte slice.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Truncated(format!("{what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4, "magic")?.try_into().expect("4 bytes");
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Truncated(what.into()))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.len(what)?;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Malformed(format!("{what}: not UTF-8")))
    }

    fn finish(&self, what: &str) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Malformed(format!(
                "{what}: {} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn check_len(v: usize, what: &str) -> Result<()> {
    if v as u64 >= MAX_LEN {
        return Err(Error::DimensionMismatch(format!("{what} {v} does not fit in u32")));
    }
    Ok(())
}

pub fn feature_map_bytes(map: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(FMAP_HEADER + map.raw().len() * 4);
    out.extend_from_slice(&FMAP_MAGIC);
    out.extend_from_slice(&FMAP_VERSION.to_le_bytes());
    put_u32(&mut out, map.height());
    put_u32(&mut out, map.width());
    put_u32(&mut out, map.channels());
    put_f32s(&mut out, map.raw());
    out
}

/// Parses an FMAP stream. Vectors are renormalized; vectors already of
/// unit norm come back bit-for-bit.
pub fn load_feature_map(bytes: &[u8]) -> Result<FeatureMap> {
    let mut r = Reader::new(bytes);
    r.magic(FMAP_MAGIC)?;
    let version = r.u16("version")?;
    if version != FMAP_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (h, w, d) = (r.len("height")?, r.len("width")?, r.len("channels")?);
    let n = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(d))
        .ok_or_else(|| Error::DimensionMismatch(format!("{h}x{w}x{d} overflows")))?;
    let payload = bytes.len() - FMAP_HEADER;
    if payload != n * 4 {
        return Err(Error::DimensionMismatch(format!(
            "header says {h}x{w}x{d} ({} bytes), payload has {payload}",
            n * 4
        )));
    }
    let data = r.f32s(n, "feature data")?;
    FeatureMap::new(h, w, d, data)
}

pub fn model_bytes(model: &TrainedModel) -> Result<Vec<u8>> {
    let dict = &model.dictionary;
    let (k, d) = (dict.len(), dict.dim());
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    put_u32(&mut out, k);
    put_u32(&mut out, d);
    for c in dict.components() {
        put_f32s(&mut out, &c.mean);
        out.extend_from_slice(&c.concentration.to_le_bytes());
    }
    for b in model.occluder.coeffs() {
        out.extend_from_slice(&b.to_le_bytes());
    }
    check_len(model.classes.len(), "class count")?;
    put_u32(&mut out, model.classes.len());
    for class in &model.classes {
        check_len(class.label.len(), "label length")?;
        put_u32(&mut out, class.label.len());
        out.extend_from_slice(class.label.as_bytes());
        put_u32(&mut out, class.mixtures.len());
        for mix in &class.mixtures {
            if mix.k() != k {
                return Err(Error::DimensionMismatch(format!(
                    "class `{}` has K={}, dictionary K={k}",
                    class.label,
                    mix.k()
                )));
            }
            put_u32(&mut out, mix.height());
            put_u32(&mut out, mix.width());
            put_f32s(&mut out, mix.fg_prior());
            put_f32s(&mut out, mix.fg_coeffs());
            put_f32s(&mut out, mix.ctx_coeffs());
        }
    }
    Ok(out)
}

/// Parses a CNMO stream. Unit means and every simplex are validated by the
/// model constructors.
pub fn load_model(bytes: &[u8]) -> Result<TrainedModel> {
    let mut r = Reader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    let version = r.u16("version")?;
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (k, d) = (r.len("K")?, r.len("D")?);
    let mut comps = Vec::with_capacity(k.min(1 << 16));
    for _ in 0..k {
        let mean = r.f32s(d, "component mean")?;
        let sigma = r.f64("component concentration")?;
        comps.push(VmfComponent::new(mean, sigma)?);
    }
    let dictionary = VmfDictionary::new(comps)?;
    let beta = (0..k).map(|_| r.f64("occluder coefficient")).collect::<Result<Vec<_>>>()?;
    let occluder = OccluderModel::new(beta)?;
    let n_classes = r.len("class count")?;
    let mut classes = Vec::with_capacity(n_classes.min(1 << 16));
    for _ in 0..n_classes {
        let label = r.string("class label")?;
        let m = r.len("mixture count")?;
        let mut mixtures = Vec::with_capacity(m.min(1 << 16));
        for _ in 0..m {
            let (h, w) = (r.len("mixture height")?, r.len("mixture width")?);
            let cells = h
                .checked_mul(w)
                .ok_or_else(|| Error::DimensionMismatch("mixture grid overflows".into()))?;
            let kc = cells
                .checked_mul(k)
                .ok_or_else(|| Error::DimensionMismatch("mixture grid overflows".into()))?;
            let prior = r.f32s(cells, "prior")?;
            let alpha = r.f32s(kc, "foreground coefficients")?;
            let chi = r.f32s(kc, "context coefficients")?;
            mixtures.push(MixtureModel::new(h, w, k, prior, alpha, chi)?);
        }
        classes.push(ClassModel::new(label, mixtures)?);
    }
    r.finish("model")?;
    Ok(TrainedModel {
        dictionary,
        classes,
        occluder,
    })
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("`{}` has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn save_feature_map(path: &Path, map: &FeatureMap) -> Result<()> {
    write_atomic(path, &feature_map_bytes(map))
}

pub fn read_feature_map(path: &Path) -> Result<FeatureMap> {
    load_feature_map(&fs::read(path)?)
}

pub fn save_model(path: &Path, model: &TrainedModel) -> Result<()> {
    write_atomic(path, &model_bytes(model)?)
}

pub fn read_model(path: &Path) -> Result<TrainedModel> {
    load_model(&fs::read(path)?)
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Run-length encoded mask: alternating run lengths in row-major order,
/// starting with a run of zeros.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub height: usize,
    pub width: usize,
    pub runs: Vec<u32>,
}

impl From<&BinaryMask> for Rle {
    fn from(m: &BinaryMask) -> Self {
        Self {
            height: m.height(),
            width: m.width(),
            runs: m.to_rle(),
        }
    }
}

impl Rle {
    pub fn decode(&self) -> Result<BinaryMask> {
        BinaryMask::from_rle(self.height, self.width, &self.runs)
    }
}

/// One ground-truth object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: usize,
    pub class: String,
    pub class_index: usize,
    pub template: usize,
    /// Amodal box.
    pub bbox: BoundingBox,
    /// 0 is nearest to the viewer.
    pub depth: usize,
    pub occlusion: f64,
    pub level: Option<OcclusionLevel>,
    pub amodal: Rle,
    pub modal: Rle,
}

/// Annotation for one scene; the feature map lives in a sibling FMAP file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: String,
    pub split: Split,
    /// FMAP file name, relative to this record.
    pub features: String,
    pub spec: SceneSpec,
    pub objects: Vec<ObjectRecord>,
    pub unknown: Rle,
    pub order: Vec<OrderEdge>,
}

impl SceneRecord {
    pub fn new(scene: &GeneratedScene, labels: &[String], features: &str) -> Self {
        Self {
            id: scene.id.clone(),
            split: scene.split,
            features: features.to_string(),
            spec: scene.spec.clone(),
            objects: scene
                .truth
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    id: o.id,
                    class: labels.get(o.class).cloned().unwrap_or_else(|| o.class.to_string()),
                    class_index: o.class,
                    template: o.template,
                    bbox: o.bbox,
                    depth: o.depth,
                    occlusion: o.occlusion,
                    level: o.level,
                    amodal: o.amodal().into(),
                    modal: o.modal().into(),
                })
                .collect(),
            unknown: (&scene.truth.unknown).into(),
            order: scene.truth.order.edges.clone(),
        }
    }

    pub fn truth(&self) -> Result<GroundTruth> {
        let objects = self
            .objects
            .iter()
            .map(|o| {
                Ok(GroundTruthObject {
                    id: o.id,
                    class: o.class_index,
                    template: o.template,
                    bbox: o.bbox,
                    depth: o.depth,
                    amodal: Some(o.amodal.decode()?),
                    modal: Some(o.modal.decode()?),
                    occlusion: o.occlusion,
                    level: o.level,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GroundTruth {
            order: OrderGraph {
                nodes: objects.iter().map(|o| o.id).collect(),
                edges: self.order.clone(),
            },
            objects,
            unknown: self.unknown.decode()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    /// Annotation file, relative to the manifest.
    pub annotation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u16,
    pub seed: u64,
    pub world: WorldConfig,
    pub class_labels: Vec<String>,
    pub scenes: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(seed: u64, world: WorldConfig, class_labels: Vec<String>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            seed,
            world,
            class_labels,
            scenes: Vec::new(),
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCENE_DIR: &str = "scenes";

/// Writes every scene (FMAP plus annotation) under `dir/scenes` and the
/// manifest at `dir/manifest.json`, which is returned.
pub fn save_challenge(dir: &Path, mut manifest: Manifest, scenes: &[GeneratedScene]) -> Result<PathBuf> {
    let scene_dir = dir.join(SCENE_DIR);
    fs::create_dir_all(&scene_dir)?;
    for scene in scenes {
        let fmap = format!("{}.fmap", scene.id);
        save_feature_map(&scene_dir.join(&fmap), &scene.features)?;
        let record = SceneRecord::new(scene, &manifest.class_labels, &fmap);
        let annotation = format!("{}.json", scene.id);
        save_json(&scene_dir.join(&annotation), &record)?;
        manifest.scenes.push(ManifestEntry {
            id: scene.id.clone(),
            split: scene.split,
            annotation: format!("{SCENE_DIR}/{annotation}"),
        });
    }
    let path = dir.join(MANIFEST_FILE);
    save_json(&path, &manifest)?;
    Ok(path)
}

/// Reads one annotation and its feature map.
pub fn load_scene(annotation: &Path) -> Result<GeneratedScene> {
    let record: SceneRecord = read_json(annotation)?;
    let dir = annotation.parent().unwrap_or(Path::new("."));
    let features = read_feature_map(&dir.join(&record.features))?;
    let truth = record.truth()?;
    for o in &truth.objects {
        if o.amodal().height() != features.height() || o.amodal().width() != features.width() {
            return Err(Error::DimensionMismatch(format!(
                "scene `{}`: masks do not match the feature lattice",
                record.id
            )));
        }
    }
    Ok(GeneratedScene {
        id: record.id,
        split: record.split,
        spec: record.spec,
        features,
        truth,
    })
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let manifest: Manifest = read_json(path)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::UnsupportedVersion(manifest.version));
    }
    Ok(manifest)
}

/// Loads the manifest and the scenes of the requested split (all scenes
/// when `split` is `None`), in manifest order.
pub fn load_challenge(path: &Path, split: Option<Split>) -> Result<(Manifest, Vec<GeneratedScene>)> {
    let manifest = read_manifest(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let scenes = manifest
        .scenes
        .iter()
        .filter(|e| split.is_none_or(|s| s == e.split))
        .map(|e| load_scene(&dir.join(&e.annotation)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, scenes))
}

/// Predicted object as written by `segment`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionObjectRecord {
    pub id: usize,
    pub class: String,
    pub class_index: usize,
    pub mixture: usize,
    pub score: f64,
    pub bbox: BoundingBox,
    pub amodal: Rle,
    pub modal: Rle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub scene: String,
    pub objects: Vec<PredictionObjectRecord>,
}

pub const PREDICTION_SUFFIX: &str = ".pred.json";
pub const ORDER_SUFFIX: &str = ".order.txt";

/// Writes `<scene>.pred.json` and `<scene>.order.txt` into `dir`.
pub fn save_prediction(dir: &Path, scene: &str, result: &SceneResult, labels: &[String]) -> Result<()> {
    let record = PredictionRecord {
        scene: scene.to_string(),
        objects: result
            .objects
            .iter()
            .map(|o| PredictionObjectRecord {
                id: o.id,
                class: labels.get(o.class).cloned().unwrap_or_else(|| o.class.to_string()),
                class_index: o.class,
                mixture: o.mixture,
                score: o.score,
                bbox: o.bbox,
                amodal: o.amodal().into(),
                modal: o.modal().into(),
            })
            .collect(),
    };
    save_json(&dir.join(format!("{scene}{PREDICTION_SUFFIX}")), &record)?;
    write_atomic(&dir.join(format!("{scene}{ORDER_SUFFIX}")), result.graph.to_text().as_bytes())
}

/// Reads every prediction in `dir`, keyed by scene id.
pub fn load_predictions(dir: &Path) -> Result<BTreeMap<String, ScenePrediction>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(scene) = name.strip_suffix(PREDICTION_SUFFIX) else {
            continue;
        };
        let record: PredictionRecord = read_json(&path)?;
        let order_path = dir.join(format!("{scene}{ORDER_SUFFIX}"));
        let text = fs::read_to_string(&order_path)?;
        let graph = OrderGraph::from_text(record.objects.iter().map(|o| o.id).collect(), &text)?;
        let objects = record
            .objects
            .iter()
            .map(|o| {
                Ok(PredictedObject {
                    id: o.id,
                    class: o.class_index,
                    modal: o.modal.decode()?,
                    amodal: o.amodal.decode()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(scene.to_string(), ScenePrediction { objects, graph });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map() -> FeatureMap {
        FeatureMap::new(2, 2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.6, 0.8, 0.0]).unwrap()
    }

    #[test]
    fn fmap_round_trip() {
        let m = map();
        let bytes = feature_map_bytes(&m);
        assert_eq!(&bytes[..4], b"FMAP");
        assert_eq!(bytes.len(), FMAP_HEADER + 12 * 4);
        assert_eq!(load_feature_map(&bytes).unwrap(), m);
    }

    #[test]
    fn fmap_normalizes_and_rejects() {
        let mut bytes = feature_map_bytes(&map());
        bytes[FMAP_HEADER..FMAP_HEADER + 4].copy_from_slice(&2.0f32.to_le_bytes());
        let m = load_feature_map(&bytes).unwrap();
        assert_eq!(m.get(0, 0), &[1.0, 0.0, 0.0]);

        bytes[FMAP_HEADER..FMAP_HEADER + 4].copy_from_slice(&0.0f32.to_le_bytes());
        assert!(matches!(load_feature_map(&bytes), Err(Error::ZeroNorm { .. })));

        let mut bad = feature_map_bytes(&map());
        bad[0] = b'X';
        assert!(matches!(load_feature_map(&bad), Err(Error::BadMagic { .. })));

        let good = feature_map_bytes(&map());
        assert!(matches!(
            load_feature_map(&good[..good.len() - 4]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(load_feature_map(&good[..10]), Err(Error::Truncated(_))));

        let mut v2 = feature_map_bytes(&map());
        v2[4] = 2;
        assert!(matches!(load_feature_map(&v2), Err(Error::UnsupportedVersion(2))));
    }

    fn tiny_model() -> TrainedModel {
        let dictionary = VmfDictionary::new(vec![
            VmfComponent::new(vec![1.0, 0.0], 30.0).unwrap(),
            VmfComponent::new(vec![0.0, 1.0], 30.0).unwrap(),
        ])
        .unwrap();
        let mix = MixtureModel::new(1, 2, 2, vec![0.25, 1.0], vec![0.5, 0.5, 1.0, 0.0], vec![0.1, 0.9, 0.0, 1.0])
            .unwrap();
        TrainedModel {
            dictionary,
            classes: vec![ClassModel::new("car", vec![mix]).unwrap()],
            occluder: OccluderModel::new(vec![0.3, 0.7]).unwrap(),
        }
    }

    #[test]
    fn model_round_trip() {
        let m = tiny_model();
        let bytes = model_bytes(&m).unwrap();
        assert_eq!(&bytes[..4], b"CNMO");
        let back = load_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(model_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn model_simplex_validated() {
        let bytes = model_bytes(&tiny_model()).unwrap();
        // occluder β starts after header, K, D and two components
        let beta = 4 + 2 + 4 + 4 + 2 * (2 * 4 + 8);
        let mut bad = bytes.clone();
        bad[beta..beta + 8].copy_from_slice(&0.9f64.to_le_bytes());
        assert!(matches!(load_model(&bad), Err(Error::InvalidSimplex(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(load_model(&extra), Err(Error::Malformed(_))));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("x.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn rle_record_round_trip() {
        let m = BinaryMask::from_fn(3, 4, |r, c| r == c || c == 3);
        let rle = Rle::from(&m);
        let json = serde_json::to_string(&rle).unwrap();
        let back: Rle = serde_json::from_str(&json).unwrap();
        assert_eq!(back.decode().unwrap(), m);
    }
}
