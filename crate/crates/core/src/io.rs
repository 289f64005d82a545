//! On-disk formats.
//!
//! Feature-map dumps use a small binary container:
//!
//! ```text
//! offset  size        field
//! 0       4           magic "EZT1"
//! 4       4           ndim (u32 LE, 1..=4)
//! 8       4 * ndim    dims (u32 LE each)
//! ..      4 * prod    payload, f32 LE, row-major (last dim fastest)
//! ```
//!
//! A dump directory holds one container per layer plus `manifest.json`.
//! Scores, plans and keep specifications are JSON. Channel indices in JSON
//! documents are 1-based; in memory they are 0-based.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::{FeatureMapBatch, LayerImportance, Metric};
use crate::pruner::{LayerPlan, PrunePlan};

pub const MAGIC: &[u8; 4] = b"EZT1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Decoded container contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

pub fn encode_tensor(dims: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    if dims.is_empty() || dims.len() > 4 {
        return Err(Error::Shape(format!(
            "containers hold 1 to 4 dimensions, got {}",
            dims.len()
        )));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Shape(format!("dims {dims:?} overflow")))?;
    if count != data.len() {
        return Err(Error::Shape(format!(
            "dims {dims:?} need {count} values, got {}",
            data.len()
        )));
    }
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mut bytes = Vec::with_capacity(8 + 4 * dims.len() + 4 * count);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Shape(format!("dimension {d} exceeds u32")))?;
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    Ok(bytes)
}

pub fn decode_tensor(path: &Path, bytes: &[u8]) -> Result<Tensor> {
    let path_buf = || path.to_path_buf();
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic { path: path_buf() });
    }
    let word = |offset: usize| -> Option<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    };
    let ndim = word(4).ok_or(Error::LengthMismatch {
        path: path_buf(),
        expected: 8,
        found: bytes.len() as u64,
    })?;
    if !(1..=4).contains(&ndim) {
        return Err(Error::BadRank {
            path: path_buf(),
            ndim,
        });
    }
    let ndim = ndim as usize;
    let header = 8 + 4 * ndim;
    let mut dims = Vec::with_capacity(ndim);
    for k in 0..ndim {
        match word(8 + 4 * k) {
            Some(d) => dims.push(d as usize),
            None => {
                return Err(Error::LengthMismatch {
                    path: path_buf(),
                    expected: header as u64,
                    found: bytes.len() as u64,
                })
            }
        }
    }
    let count: u64 = dims.iter().map(|&d| d as u64).product();
    let expected = header as u64 + 4 * count;
    if bytes.len() as u64 != expected {
        return Err(Error::LengthMismatch {
            path: path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let data: Vec<f32> = bytes[header..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinitePayload {
            path: path_buf(),
            index,
        });
    }
    Ok(Tensor { dims, data })
}

pub fn write_tensor(path: &Path, dims: &[usize], data: &[f32]) -> Result<()> {
    let bytes = encode_tensor(dims, data)?;
    write_atomic(path, &bytes)
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_tensor(path, &bytes)
}

/// Stores a feature-map batch as a 4-D container, narrowing to f32.
pub fn write_feature_maps(path: &Path, fm: &FeatureMapBatch) -> Result<()> {
    let data: Vec<f32> = fm.data().iter().map(|&v| v as f32).collect();
    write_tensor(path, &fm.dims(), &data)
}

/// Reads a `[B, T, H, W]` container. Values are widened to f64 and the batch
/// records single-precision epsilon for the rank metric.
pub fn read_feature_maps(path: &Path) -> Result<FeatureMapBatch> {
    let t = read_tensor(path)?;
    let dims: [usize; 4] = t.dims.as_slice().try_into().map_err(|_| {
        Error::schema(path, "dims", format!("expected 4 dimensions, found {}", t.dims.len()))
    })?;
    Ok(
        FeatureMapBatch::new(dims, t.data.into_iter().map(f64::from).collect())?
            .with_epsilon(f64::from(f32::EPSILON)),
    )
}

fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        Error::schema(path, field, e.into_inner().to_string())
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_json(path, &text)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("documents always serialize");
    s.push('\n');
    s
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestLayer {
    pub id: String,
    pub file: String,
    /// `[B, T, H, W]`.
    pub dims: [usize; 4],
    #[serde(default)]
    pub source: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub layers: Vec<ManifestLayer>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        to_json(self)
    }
}

/// Reads `dir/manifest.json` and checks every referenced container exists
/// and carries the advertised dims.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = read_json(&path)?;
    if manifest.layers.is_empty() {
        return Err(Error::schema(&path, "layers", "manifest lists no layers"));
    }
    for (k, layer) in manifest.layers.iter().enumerate() {
        if manifest.layers[..k].iter().any(|l| l.id == layer.id) {
            return Err(Error::schema(
                &path,
                format!("layers[{k}].id"),
                format!("duplicate layer id {:?}", layer.id),
            ));
        }
        let file = dir.join(&layer.file);
        let header = read_header(&file)?;
        if header != layer.dims {
            return Err(Error::schema(
                &path,
                format!("layers[{k}].dims"),
                format!(
                    "manifest says {:?} but {} holds {:?}",
                    layer.dims,
                    layer.file,
                    header
                ),
            ));
        }
    }
    Ok(manifest)
}

fn read_header(path: &Path) -> Result<Vec<usize>> {
    use std::io::Read;
    let mut f = fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut head = [0u8; 24];
    let mut filled = 0;
    while filled < head.len() {
        let n = f
            .read(&mut head[filled..])
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    let head = &head[..filled];
    if head.len() < 4 || &head[..4] != MAGIC {
        return Err(Error::BadMagic { path: path.into() });
    }
    if head.len() < 8 {
        return Err(Error::LengthMismatch {
            path: path.into(),
            expected: 8,
            found: head.len() as u64,
        });
    }
    let ndim = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if !(1..=4).contains(&ndim) {
        return Err(Error::BadRank {
            path: path.into(),
            ndim,
        });
    }
    let end = 8 + 4 * ndim as usize;
    if head.len() < end {
        return Err(Error::LengthMismatch {
            path: path.into(),
            expected: end as u64,
            found: head.len() as u64,
        });
    }
    Ok(head[8..end]
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect())
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    write_atomic(&dir.join(MANIFEST_FILE), manifest.to_json().as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoresEntry {
    layer: String,
    metric: Metric,
    beta: Option<f64>,
    batch: usize,
    scores: Vec<f64>,
    order: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoresDocument {
    layers: Vec<ScoresEntry>,
}

pub fn scores_to_json(layers: &[LayerImportance]) -> String {
    let doc = ScoresDocument {
        layers: layers
            .iter()
            .map(|l| ScoresEntry {
                layer: l.layer.clone(),
                metric: l.metric,
                beta: l.beta,
                batch: l.batch,
                scores: l.scores.clone(),
                order: l.order.iter().map(|k| k + 1).collect(),
            })
            .collect(),
    };
    to_json(&doc)
}

pub fn scores_from_json(path: &Path, text: &str) -> Result<Vec<LayerImportance>> {
    let doc: ScoresDocument = parse_json(path, text)?;
    let mut out = Vec::with_capacity(doc.layers.len());
    for (k, e) in doc.layers.into_iter().enumerate() {
        let field = |name: &str| format!("layers[{k}].{name}");
        let t = e.scores.len();
        if t == 0 {
            return Err(Error::schema(path, field("scores"), "no channels"));
        }
        if let Some(bad) = e.scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::schema(path, format!("layers[{k}].scores[{bad}]"), "not finite"));
        }
        if e.order.len() != t {
            return Err(Error::schema(
                path,
                field("order"),
                format!("{} entries for {t} channels", e.order.len()),
            ));
        }
        let mut seen = vec![false; t];
        for (pos, &idx) in e.order.iter().enumerate() {
            if idx == 0 || idx > t {
                return Err(Error::schema(
                    path,
                    format!("layers[{k}].order[{pos}]"),
                    "index out of range",
                ));
            }
            if std::mem::replace(&mut seen[idx - 1], true) {
                return Err(Error::schema(
                    path,
                    format!("layers[{k}].order[{pos}]"),
                    "duplicate channel",
                ));
            }
        }
        if e.order.windows(2).any(|w| e.scores[w[0] - 1] < e.scores[w[1] - 1]) {
            return Err(Error::schema(path, field("order"), "order not descending by score"));
        }
        if e.batch == 0 {
            return Err(Error::schema(path, field("batch"), "batch must be positive"));
        }
        if e.metric == Metric::Energy && e.beta.is_none() {
            return Err(Error::schema(path, field("beta"), "energy scores need beta"));
        }
        out.push(LayerImportance {
            layer: e.layer,
            metric: e.metric,
            beta: e.beta,
            batch: e.batch,
            scores: e.scores,
            order: e.order.into_iter().map(|i| i - 1).collect(),
        });
    }
    Ok(out)
}

pub fn write_scores(path: &Path, layers: &[LayerImportance]) -> Result<()> {
    write_atomic(path, scores_to_json(layers).as_bytes())
}

pub fn read_scores(path: &Path) -> Result<Vec<LayerImportance>> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    scores_from_json(path, &text)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanEntry {
    layer: String,
    channels: usize,
    keep: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanDocument {
    layers: Vec<PlanEntry>,
}

pub fn plan_to_json(plan: &PrunePlan) -> String {
    let doc = PlanDocument {
        layers: plan
            .layers
            .iter()
            .map(|l| PlanEntry {
                layer: l.layer.clone(),
                channels: l.channels(),
                keep: l.keep().iter().map(|k| k + 1).collect(),
            })
            .collect(),
    };
    to_json(&doc)
}

pub fn plan_from_json(path: &Path, text: &str) -> Result<PrunePlan> {
    let doc: PlanDocument = parse_json(path, text)?;
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (k, e) in doc.layers.into_iter().enumerate() {
        if e.keep.is_empty() {
            return Err(Error::schema(path, format!("layers[{k}].keep"), "keep is empty"));
        }
        if let Some(pos) = e.keep.iter().position(|&i| i == 0 || i > e.channels) {
            return Err(Error::schema(
                path,
                format!("layers[{k}].keep[{pos}]"),
                "index out of range",
            ));
        }
        if e.keep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::schema(path, format!("layers[{k}].keep"), "keep not ascending"));
        }
        let keep = e.keep.into_iter().map(|i| i - 1).collect();
        layers.push(LayerPlan::new(e.layer, e.channels, keep)?);
    }
    Ok(PrunePlan::new(layers))
}

pub fn write_plan(path: &Path, plan: &PrunePlan) -> Result<()> {
    write_atomic(path, plan_to_json(plan).as_bytes())
}

pub fn read_plan(path: &Path) -> Result<PrunePlan> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    plan_from_json(path, &text)
}

/// How many channels of a layer survive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum KeepRule {
    Ratio(f64),
    Count(usize),
}

/// Per-layer keep rules, e.g. `{"default": {"ratio": 0.5}, "layers": {"conv1": {"count": 16}}}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeepSpec {
    #[serde(default)]
    pub default: Option<KeepRule>,
    #[serde(default)]
    pub layers: BTreeMap<String, KeepRule>,
}

pub fn read_keep_spec(path: &Path) -> Result<KeepSpec> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn golden_two_by_two() {
        let bytes = encode_tensor(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let expected: Vec<u8> = [
            &b"EZT1"[..],
            &[2, 0, 0, 0],
            &[2, 0, 0, 0],
            &[2, 0, 0, 0],
            &[0x00, 0x00, 0x80, 0x3f],
            &[0x00, 0x00, 0x00, 0x40],
            &[0x00, 0x00, 0x40, 0x40],
            &[0x00, 0x00, 0x80, 0x40],
        ]
        .concat();
        assert_eq!(bytes, expected);
        // 8-byte preamble, two u32 dims, four f32 values
        assert_eq!(bytes.len(), 32);
    }

    #[test]
    fn smallest_container() {
        assert_eq!(encode_tensor(&[1], &[0.0]).unwrap().len(), 16);
    }

    #[test]
    fn decode_errors_are_distinct() {
        let p = Path::new("t.ezt");
        let mut bytes = encode_tensor(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();

        let mut bad = bytes.clone();
        bad[3] = b'0';
        let e = decode_tensor(p, &bad).unwrap_err();
        assert!(e.to_string().contains("bad magic"), "{e}");

        let e = decode_tensor(p, &bytes[..bytes.len() - 2]).unwrap_err();
        assert!(e.to_string().contains("length mismatch"), "{e}");

        let mut rank5 = bytes.clone();
        rank5[4] = 5;
        assert!(matches!(decode_tensor(p, &rank5), Err(Error::BadRank { ndim: 5, .. })));

        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_tensor(p, &bytes),
            Err(Error::NonFinitePayload { index: 3, .. })
        ));
    }

    #[test]
    fn write_rejects_non_finite() {
        let dir = tempdir().unwrap();
        let e = write_tensor(&dir.path().join("x"), &[2], &[1.0, f32::INFINITY]).unwrap_err();
        assert!(matches!(e, Error::NonFinite { index: 1 }));
        assert!(!dir.path().join("x").exists());
    }

    #[test]
    fn manifest_checks_headers() {
        let dir = tempdir().unwrap();
        write_tensor(&dir.path().join("a.ezt"), &[1, 2, 2, 2], &[0.5; 8]).unwrap();
        let mut manifest = Manifest {
            layers: vec![ManifestLayer {
                id: "a".into(),
                file: "a.ezt".into(),
                dims: [1, 2, 2, 2],
                source: "test".into(),
            }],
        };
        write_manifest(dir.path(), &manifest).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), manifest);

        manifest.layers[0].dims = [1, 2, 2, 3];
        write_manifest(dir.path(), &manifest).unwrap();
        let e = read_manifest(dir.path()).unwrap_err();
        assert!(e.to_string().contains("layers[0].dims"), "{e}");

        manifest.layers[0].file = "missing.ezt".into();
        write_manifest(dir.path(), &manifest).unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn scores_round_trip_is_canonical() {
        let layers = vec![
            LayerImportance::new(Metric::Energy, Some(0.25), 4, vec![0.1, 1.0 / 3.0, 0.859375])
                .with_layer("conv1"),
            LayerImportance::new(Metric::Rank, None, 4, vec![3.5, 8.0]).with_layer("conv2"),
        ];
        let text = scores_to_json(&layers);
        let back = scores_from_json(Path::new("s.json"), &text).unwrap();
        assert_eq!(back, layers);
        assert_eq!(scores_to_json(&back), text);
        assert!(text.contains("\"order\": [\n        3,"));
    }

    #[test]
    fn scores_schema_errors() {
        let p = Path::new("s.json");
        let unknown = r#"{"layers":[{"layer":"a","metric":"rank","beta":null,"batch":1,"scores":[1.0],"order":[1],"extra":1}]}"#;
        let e = scores_from_json(p, unknown).unwrap_err();
        assert!(e.to_string().contains("layers[0]"), "{e}");

        let bad_metric = r#"{"layers":[{"layer":"a","metric":"l1","beta":null,"batch":1,"scores":[1.0],"order":[1]}]}"#;
        let e = scores_from_json(p, bad_metric).unwrap_err();
        assert!(e.to_string().contains("layers[0].metric"), "{e}");

        let bad_order = r#"{"layers":[{"layer":"a","metric":"rank","beta":null,"batch":1,"scores":[1.0,2.0],"order":[1,2]}]}"#;
        let e = scores_from_json(p, bad_order).unwrap_err();
        assert!(e.to_string().contains("not descending"), "{e}");
    }

    #[test]
    fn plan_documents() {
        let p = Path::new("p.json");
        let plan = PrunePlan::new(vec![LayerPlan::new("conv1", 4, vec![0, 2]).unwrap()]);
        let text = plan_to_json(&plan);
        assert_eq!(plan_from_json(p, &text).unwrap(), plan);
        assert!(text.contains("\"keep\": [\n        1,\n        3\n      ]"));

        let unsorted = r#"{"layers":[{"layer":"a","channels":3,"keep":[2,1]}]}"#;
        let e = plan_from_json(p, unsorted).unwrap_err();
        assert!(e.to_string().contains("keep not ascending"), "{e}");

        let beyond = r#"{"layers":[{"layer":"a","channels":3,"keep":[1,4]}]}"#;
        let e = plan_from_json(p, beyond).unwrap_err();
        assert!(e.to_string().contains("index out of range"), "{e}");
        assert!(e.to_string().contains("layers[0].keep[1]"), "{e}");
    }

    #[test]
    fn keep_spec_parsing() {
        let p = Path::new("k.json");
        let spec: KeepSpec =
            parse_json(p, r#"{"default":{"ratio":0.5},"layers":{"c1":{"count":3}}}"#).unwrap();
        assert_eq!(spec.default, Some(KeepRule::Ratio(0.5)));
        assert_eq!(spec.layers["c1"], KeepRule::Count(3));
        assert!(parse_json::<KeepSpec>(p, r#"{"layers":{"c1":{"fraction":3}}}"#).is_err());
    }
}
