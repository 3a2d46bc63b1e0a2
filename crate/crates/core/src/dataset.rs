//! Newline-delimited dataset store and per-object statistics.
//!
//! Layout: line 1 is a [`DatasetHeader`] object; every further line is one
//! record, either `{"human_demo": HumanDemo}` or `{"trajectory": RobotTrajectory}`.
//! Human demos come first, then trajectories, each in stored order. Floats
//! are written in scientific notation with 17 significant digits, so every
//! `f64` survives a round trip bit for bit. Poses are `[tx, ty, tz, qw, qx, qy, qz]`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kinematics::HandModel;
use crate::retarget::{HumanDemo, RobotTrajectory, Stage};
use crate::sim::ObjectSpec;

pub const FORMAT_NAME: &str = "dexgrasp-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("load error at byte offset {offset} (record {record:?}): {message}")]
    Load {
        offset: usize,
        /// Zero-based record index; `None` for the header line.
        record: Option<usize>,
        message: String,
    },
    #[error("unsupported dataset version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// A human demonstration the dataset descends from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoRef {
    pub id: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub hand_model_hash: String,
    pub dof: usize,
    pub objects: Vec<ObjectSpec>,
    pub human_demos: Vec<DemoRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl DatasetHeader {
    pub fn new(model: &HandModel, objects: Vec<ObjectSpec>, human_demos: Vec<DemoRef>) -> Self {
        Self {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            hand_model_hash: model.content_hash(),
            dof: model.dof_count(),
            objects,
            human_demos,
            seed: None,
            config_hash: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Record {
    HumanDemo(HumanDemo),
    Trajectory(RobotTrajectory),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspDataset {
    pub header: DatasetHeader,
    pub human_demos: Vec<HumanDemo>,
    pub trajectories: Vec<RobotTrajectory>,
}

/// Writes floats as `d.dddddddddddddddde±x` (17 significant digits).
struct SigDigits;

impl serde_json::ser::Formatter for SigDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
}

/// Canonical single-line encoding used by the store and for content hashes.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigits);
    value.serialize(&mut ser)?;
    Ok(out)
}

/// Hex SHA-256 of the canonical encoding.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let bytes = to_canonical_json(value).expect("value serializes");
    hex::encode(Sha256::digest(&bytes))
}

fn encode_err(e: serde_json::Error) -> DatasetError {
    DatasetError::Invalid(format!("cannot encode: {e}"))
}

impl GraspDataset {
    pub fn new(header: DatasetHeader) -> Self {
        Self {
            header,
            human_demos: Vec::new(),
            trajectories: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.human_demos.len() + self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fails unless `model` is the hand the dataset was generated for.
    pub fn check_model(&self, model: &HandModel) -> Result<(), DatasetError> {
        if self.header.hand_model_hash != model.content_hash() {
            return Err(DatasetError::Invalid("dataset was generated for a different hand model".into()));
        }
        Ok(())
    }

    pub fn object(&self, name: &str) -> Option<&ObjectSpec> {
        self.header.objects.iter().find(|o| o.name == name)
    }

    /// Structural checks: dof, known objects, unique ids, provenance present
    /// beyond the retargeted stage, and provenance closure (every record's
    /// source demo is declared in the header and parent links inside the
    /// dataset are acyclic and share that source).
    pub fn validate(&self) -> Result<(), DatasetError> {
        let h = &self.header;
        if h.format != FORMAT_NAME {
            return Err(DatasetError::Invalid(format!("unknown format `{}`", h.format)));
        }
        if h.version != FORMAT_VERSION {
            return Err(DatasetError::Version { found: h.version });
        }
        let objects: HashSet<&str> = h.objects.iter().map(|o| o.name.as_str()).collect();
        let demo_ids: HashSet<&str> = h.human_demos.iter().map(|d| d.id.as_str()).collect();
        if demo_ids.len() != h.human_demos.len() {
            return Err(DatasetError::Invalid("duplicate human demo id in header".into()));
        }
        for d in &self.human_demos {
            if !demo_ids.contains(d.id.as_str()) {
                return Err(DatasetError::Invalid(format!("human demo `{}` is not declared in the header", d.id)));
            }
            if !d.frames.iter().all(|f| f.is_valid()) {
                return Err(DatasetError::Invalid(format!("human demo `{}` has an invalid frame", d.id)));
            }
        }
        let mut by_id: HashMap<&str, &RobotTrajectory> = HashMap::new();
        for t in &self.trajectories {
            if by_id.insert(t.id.as_str(), t).is_some() {
                return Err(DatasetError::Invalid(format!("duplicate trajectory id `{}`", t.id)));
            }
            if !objects.contains(t.object.as_str()) {
                return Err(DatasetError::Invalid(format!("`{}` uses undeclared object `{}`", t.id, t.object)));
            }
            if !demo_ids.contains(t.source_demo_id.as_str()) {
                return Err(DatasetError::Invalid(format!(
                    "`{}` descends from undeclared demo `{}`",
                    t.id, t.source_demo_id
                )));
            }
            if t.frames.is_empty() || t.actions.len() + 1 != t.frames.len() {
                return Err(DatasetError::Invalid(format!("`{}` has inconsistent frames and actions", t.id)));
            }
            let dof_ok = t.frames.iter().map(|f| &f.hand).chain(&t.actions).all(|s| s.joints.len() == h.dof);
            if !dof_ok {
                return Err(DatasetError::Invalid(format!("`{}` does not match the header dof {}", t.id, h.dof)));
            }
            if t.stage != Stage::Retargeted && t.provenance.parent.is_none() {
                return Err(DatasetError::Invalid(format!("`{}` ({}) has no parent", t.id, t.stage.as_str())));
            }
        }
        for t in &self.trajectories {
            let mut seen = HashSet::from([t.id.as_str()]);
            let mut cur: &RobotTrajectory = t;
            while let Some(p) = cur.provenance.parent.as_deref().and_then(|p| by_id.get(p)) {
                if !seen.insert(p.id.as_str()) {
                    return Err(DatasetError::Invalid(format!("provenance cycle through `{}`", t.id)));
                }
                if p.source_demo_id != t.source_demo_id {
                    return Err(DatasetError::Invalid(format!("`{}` and its ancestor `{}` cite different demos", t.id, p.id)));
                }
                cur = *p;
            }
        }
        Ok(())
    }

    /// Canonical bytes: header line then one line per record.
    pub fn to_bytes(&self) -> Result<Vec<u8>, DatasetError> {
        self.validate()?;
        let mut out = to_canonical_json(&self.header).map_err(encode_err)?;
        out.push(b'\n');
        for d in &self.human_demos {
            append_record(&mut out, &Record::HumanDemo(d.clone()))?;
        }
        for t in &self.trajectories {
            append_record(&mut out, &Record::Trajectory(t.clone()))?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        let mut lines = Lines { bytes, pos: 0 };
        let (offset, line) = lines.next_line()?.ok_or(DatasetError::Load {
            offset: 0,
            record: None,
            message: "missing header line".into(),
        })?;
        let header = parse_header(line).map_err(|(col, message)| DatasetError::Load {
            offset: offset + col,
            record: None,
            message,
        })?;
        let mut ds = GraspDataset::new(header);
        let mut index = 0;
        while let Some((offset, line)) = lines.next_line().map_err(|e| with_record(e, index))? {
            let rec: Record = serde_json::from_slice(line).map_err(|e| DatasetError::Load {
                offset: offset + column_offset(line, &e),
                record: Some(index),
                message: e.to_string(),
            })?;
            match rec {
                Record::HumanDemo(d) => {
                    if !ds.trajectories.is_empty() {
                        return Err(DatasetError::Load {
                            offset,
                            record: Some(index),
                            message: "human demo record after trajectory records".into(),
                        });
                    }
                    ds.human_demos.push(d)
                }
                Record::Trajectory(t) => ds.trajectories.push(t),
            }
            index += 1;
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn append_record(out: &mut Vec<u8>, rec: &Record) -> Result<(), DatasetError> {
    out.extend(to_canonical_json(rec).map_err(encode_err)?);
    out.push(b'\n');
    Ok(())
}

fn with_record(e: DatasetError, index: usize) -> DatasetError {
    match e {
        DatasetError::Load { offset, message, .. } => DatasetError::Load {
            offset,
            record: Some(index),
            message,
        },
        other => other,
    }
}

fn parse_header(line: &[u8]) -> Result<DatasetHeader, (usize, String)> {
    let value: serde_json::Value = serde_json::from_slice(line).map_err(|e| (column_offset(line, &e), e.to_string()))?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(FORMAT_NAME) => {}
        Some(other) => return Err((0, format!("unknown format `{other}`"))),
        None => return Err((0, "header has no `format` field".into())),
    }
    if let Some(v) = value.get("version").and_then(|v| v.as_u64()) {
        if v != FORMAT_VERSION as u64 {
            return Err((0, format!("unsupported dataset version {v} (expected {FORMAT_VERSION})")));
        }
    }
    // Re-parse from the bytes so floats keep their exact decoding.
    serde_json::from_slice(line).map_err(|e| (column_offset(line, &e), e.to_string()))
}

/// Byte offset within `line` of a parse error (columns are 1-based bytes).
fn column_offset(line: &[u8], e: &serde_json::Error) -> usize {
    e.column().saturating_sub(1).min(line.len())
}

struct Lines<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lines<'a> {
    /// Next newline-terminated line and its starting offset. A final line
    /// without a newline means the file was cut short.
    fn next_line(&mut self) -> Result<Option<(usize, &'a [u8])>, DatasetError> {
        if self.pos >= self.bytes.len() {
            return Ok(None);
        }
        let start = self.pos;
        match self.bytes[start..].iter().position(|b| *b == b'\n') {
            Some(n) => {
                self.pos = start + n + 1;
                Ok(Some((start, &self.bytes[start..start + n])))
            }
            None => Err(DatasetError::Load {
                offset: self.bytes.len(),
                record: None,
                message: format!("truncated record starting at byte {start}"),
            }),
        }
    }
}

/// Trajectory counts for one object, by stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectCounts {
    pub object: String,
    pub human: usize,
    /// Retargeted plus templated.
    pub normalized: usize,
    pub refined: usize,
    pub augmented: usize,
    pub funneled: usize,
}

impl ObjectCounts {
    /// `|augmented| / |human|`; zero without demos.
    pub fn amplification(&self) -> f64 {
        ratio(self.augmented, self.human)
    }

    /// `|augmented ∪ funneled| / |human|`; zero without demos.
    pub fn amplification_with_funneled(&self) -> f64 {
        ratio(self.augmented + self.funneled, self.human)
    }

    fn add(&mut self, other: &ObjectCounts) {
        self.human += other.human;
        self.normalized += other.normalized;
        self.refined += other.refined;
        self.augmented += other.augmented;
        self.funneled += other.funneled;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Sorted by object name.
    pub per_object: Vec<ObjectCounts>,
    pub total: ObjectCounts,
}

/// Counts by (object, stage). Human counts come from the header.
pub fn stats(ds: &GraspDataset) -> DatasetStats {
    let mut map: BTreeMap<&str, ObjectCounts> = BTreeMap::new();
    for o in &ds.header.objects {
        map.entry(o.name.as_str()).or_default();
    }
    for d in &ds.header.human_demos {
        map.entry(d.object.as_str()).or_default().human += 1;
    }
    for t in &ds.trajectories {
        let c = map.entry(t.object.as_str()).or_default();
        match t.stage {
            Stage::Retargeted | Stage::Templated => c.normalized += 1,
            Stage::Refined => c.refined += 1,
            Stage::Augmented => c.augmented += 1,
            Stage::Funneled => c.funneled += 1,
        }
    }
    let mut total = ObjectCounts {
        object: "sum".into(),
        ..ObjectCounts::default()
    };
    let per_object: Vec<ObjectCounts> = map
        .into_iter()
        .map(|(name, mut c)| {
            c.object = name.to_string();
            total.add(&c);
            c
        })
        .collect();
    DatasetStats { per_object, total }
}

/// Plain-text table: one column per object plus a sum column.
pub fn render_stats(s: &DatasetStats) -> String {
    let cols: Vec<&ObjectCounts> = s.per_object.iter().chain(std::iter::once(&s.total)).collect();
    let width = cols.iter().map(|c| c.object.len()).max().unwrap_or(0).max(8);
    let rows: [(&str, fn(&ObjectCounts) -> String); 6] = [
        ("Human Demo", |c| c.human.to_string()),
        ("Normalized Trajectory", |c| c.normalized.to_string()),
        ("Refined Instance", |c| c.refined.to_string()),
        ("Augmented Trajectory", |c| c.augmented.to_string()),
        ("Funneled Trajectory", |c| c.funneled.to_string()),
        ("Amplification", |c| format!("{:.2}", c.amplification())),
    ];
    let mut out = String::new();
    let _ = write!(out, "{:<22}", "");
    for c in &cols {
        let _ = write!(out, " {:>width$}", c.object);
    }
    out.push('\n');
    for (label, cell) in rows {
        let _ = write!(out, "{label:<22}");
        for c in &cols {
            let _ = write!(out, " {:>width$}", cell(c));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Rotation, SE3Pose, Vec3};
    use crate::kinematics::{HandState, HumanFrame, JointConfig, HUMAN_KEYPOINT_NAMES};
    use crate::retarget::{ObservedFrame, Provenance, TrajFrame};
    use crate::sim::{PhysicsParams, Shape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const DOF: usize = 16;

    fn header(demos: Vec<DemoRef>) -> DatasetHeader {
        let objects = vec![
            ObjectSpec::new("box", Shape::Box { w: 0.05, d: 0.05, h: 0.1 }, 0.15),
            ObjectSpec::new("can", Shape::Cylinder { r: 0.03, h: 0.1 }, 0.15),
        ];
        DatasetHeader::new(&HandModel::four_finger(), objects, demos)
    }

    fn rpose(rng: &mut ChaCha8Rng) -> SE3Pose {
        let q = [0; 4].map(|_| rng.random_range(-1.0..1.0));
        SE3Pose::new(
            Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..0.5)),
            Rotation::from_wxyz_normalized(q[0], q[1], q[2], q[3]),
        )
    }

    fn rstate(rng: &mut ChaCha8Rng) -> HandState {
        HandState::new(rpose(rng), JointConfig::new((0..DOF).map(|_| rng.random_range(-0.2..1.5)).collect()))
    }

    fn rtraj(rng: &mut ChaCha8Rng, id: String, demo: &DemoRef, stage: Stage, parent: Option<String>) -> RobotTrajectory {
        let n = rng.random_range(1..6);
        let start = rstate(rng);
        let actions: Vec<HandState> = (0..n).map(|_| rstate(rng)).collect();
        let poses: Vec<SE3Pose> = (0..=n).map(|_| rpose(rng)).collect();
        let mut t = RobotTrajectory::from_plan(id, demo.id.clone(), demo.object.clone(), stage, start, actions, &poses);
        t.provenance = Provenance {
            parent,
            seed: Some(rng.random()),
            t: Some(rng.random()),
            physics: Some(PhysicsParams {
                mass: rng.random_range(0.1..0.3),
                friction: rng.random(),
                noise_std: 0.01,
                seed: rng.random(),
            }),
            offset: rng.random_bool(0.5).then(|| Vec3::new(rng.random(), rng.random(), 0.0)),
            verified: rng.random_bool(0.5),
            ..Provenance::default()
        };
        if rng.random_bool(0.5) {
            t.observed = t
                .frames
                .iter()
                .map(|f| ObservedFrame {
                    hand: f.hand.clone(),
                    object_pose: rpose(rng),
                    contacts: (0..4).map(|_| rng.random_bool(0.3)).collect(),
                })
                .collect();
        }
        t
    }

    fn rdemo(rng: &mut ChaCha8Rng, d: &DemoRef) -> HumanDemo {
        let frames = (0..rng.random_range(1..4))
            .map(|_| HumanFrame {
                keypoints: (0..HUMAN_KEYPOINT_NAMES.len()).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect(),
                palm_orientation: rpose(rng).rotation,
                object_pose: rpose(rng),
            })
            .collect();
        HumanDemo {
            id: d.id.clone(),
            object: d.object.clone(),
            frames,
        }
    }

    /// `n` records: a few human demos, then trajectories chained through stages.
    fn random_dataset(seed: u64, n: usize) -> GraspDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let demos: Vec<DemoRef> = (0..4)
            .map(|i| DemoRef {
                id: format!("d{i}"),
                object: if i % 2 == 0 { "box" } else { "can" }.into(),
            })
            .collect();
        let mut ds = GraspDataset::new(header(demos.clone()));
        ds.header.seed = Some(seed);
        for d in &demos {
            ds.human_demos.push(rdemo(&mut rng, d));
        }
        let mut last: Vec<Option<String>> = vec![None; demos.len()];
        for k in 0..n - demos.len() {
            let i = rng.random_range(0..demos.len());
            let stage = match &last[i] {
                None => Stage::Retargeted,
                Some(_) => Stage::ALL[rng.random_range(1..5)],
            };
            let t = rtraj(&mut rng, format!("t{k}"), &demos[i], stage, last[i].clone());
            last[i] = Some(t.id.clone());
            ds.trajectories.push(t);
        }
        ds
    }

    #[test]
    fn empty_dataset_round_trips() {
        let ds = GraspDataset::new(header(Vec::new()));
        let bytes = ds.to_bytes().unwrap();
        let back = GraspDataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn hundred_records_round_trip_byte_identical() {
        let ds = random_dataset(7, 100);
        assert_eq!(ds.len(), 100);
        let bytes = ds.to_bytes().unwrap();
        let back = GraspDataset::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back, ds);
        for (a, b) in back.trajectories.iter().zip(&ds.trajectories) {
            for (fa, fb) in a.frames.iter().zip(&b.frames) {
                assert_eq!(fa.hand.palm_pose.to_array(), fb.hand.palm_pose.to_array());
                assert_eq!(fa.hand.joints.angles, fb.hand.joints.angles);
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let ds = random_dataset(3, 20);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ndjson");
        ds.write(&path).unwrap();
        assert_eq!(GraspDataset::read(&path).unwrap(), ds);
    }

    #[test]
    fn floats_use_seventeen_significant_digits() {
        let bytes = to_canonical_json(&[0.1f64, -2.5e-7, 0.0]).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "[1.0000000000000001e-1,-2.4999999999999999e-7,0.0000000000000000e0]"
        );
    }

    #[test]
    fn truncated_file_names_the_byte_offset() {
        let bytes = random_dataset(1, 10).to_bytes().unwrap();
        let cut = bytes.len() - 40;
        match GraspDataset::from_bytes(&bytes[..cut]) {
            Err(DatasetError::Load { offset, record, .. }) => {
                assert_eq!(offset, cut);
                assert!(record.is_some());
            }
            other => panic!("expected load error, got {other:?}"),
        }
        // Damage the first byte of the first record.
        let first_nl = bytes.iter().position(|b| *b == b'\n').unwrap();
        let mut broken = bytes.clone();
        broken[first_nl + 1] = b'#';
        match GraspDataset::from_bytes(&broken) {
            Err(DatasetError::Load { offset, record, .. }) => {
                assert_eq!(record, Some(0));
                assert_eq!(offset, first_nl + 1);
            }
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let ds = GraspDataset::new(header(Vec::new()));
        let text = String::from_utf8(ds.to_bytes().unwrap()).unwrap().replace("\"version\":1", "\"version\":9");
        let err = GraspDataset::from_bytes(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
        assert!(GraspDataset::from_bytes(b"").is_err());
    }

    #[test]
    fn validation_catches_broken_provenance() {
        let mut ds = random_dataset(2, 30);
        let k = ds.trajectories.iter().position(|t| t.stage != Stage::Retargeted).unwrap();
        let mut bad = ds.clone();
        bad.trajectories[k].provenance.parent = None;
        assert!(bad.validate().is_err());
        let mut bad = ds.clone();
        bad.trajectories[k].source_demo_id = "nobody".into();
        assert!(bad.validate().is_err());
        let mut bad = ds.clone();
        bad.trajectories[k].frames[0].hand.joints.angles.pop();
        assert!(bad.validate().is_err());
        // A self-parent is a cycle.
        let id = ds.trajectories[k].id.clone();
        ds.trajectories[k].provenance.parent = Some(id);
        assert!(ds.validate().is_err());
    }

    fn stub(id: String, demo: &str, object: &str, stage: Stage, parent: Option<&str>) -> RobotTrajectory {
        let s = HandState::new(SE3Pose::identity(), JointConfig::zeros(DOF));
        let mut t = RobotTrajectory {
            id,
            source_demo_id: demo.into(),
            object: object.into(),
            stage,
            frames: vec![TrajFrame {
                hand: s,
                object_pose: SE3Pose::identity(),
            }],
            actions: Vec::new(),
            provenance: Provenance::default(),
            observed: Vec::new(),
        };
        t.provenance.parent = parent.map(str::to_string);
        t
    }

    fn demo_refs(object: &str, n: usize) -> Vec<DemoRef> {
        (0..n)
            .map(|i| DemoRef {
                id: format!("{object}-{i}"),
                object: object.into(),
            })
            .collect()
    }

    #[test]
    fn table_row_counts() {
        // One row of a published dataset table: 26 demos, 78 normalized,
        // 182 refined, 286 augmented.
        let demos = demo_refs("box", 26);
        let mut ds = GraspDataset::new(header(demos.clone()));
        let mut push = |n: usize, stage: Stage, tag: &str| {
            for i in 0..n {
                let d = &demos[i % demos.len()].id;
                let parent = (stage != Stage::Retargeted).then(|| format!("{d}/n"));
                ds.trajectories.push(stub(format!("{d}/{tag}{i}"), d, "box", stage, parent.as_deref()));
            }
        };
        push(78, Stage::Templated, "n");
        push(182, Stage::Refined, "r");
        push(286, Stage::Augmented, "a");
        let s = stats(&ds);
        let b = s.per_object.iter().find(|c| c.object == "box").unwrap();
        assert_eq!((b.human, b.normalized, b.refined, b.augmented), (26, 78, 182, 286));
        assert_eq!(b.amplification(), 11.0);
        let text = render_stats(&s);
        for label in ["Human Demo", "Normalized Trajectory", "Refined Instance", "Augmented Trajectory"] {
            assert!(text.contains(label));
        }
    }

    #[test]
    fn empty_stats_are_zero() {
        let s = stats(&GraspDataset::new(header(Vec::new())));
        assert!(s.per_object.iter().all(|c| c.human + c.normalized + c.refined + c.augmented + c.funneled == 0));
        assert_eq!(s.total.amplification(), 0.0);
    }

    #[test]
    fn ratio_matches_a_recount() {
        let mut demos = demo_refs("box", 10);
        demos.extend(demo_refs("can", 10));
        let mut ds = GraspDataset::new(header(demos.clone()));
        let mut augmented = 0;
        for (i, d) in demos.iter().enumerate() {
            ds.trajectories.push(stub(format!("{}/r", d.id), &d.id, &d.object, Stage::Retargeted, None));
            for j in 0..(i * 7) % 5 {
                ds.trajectories.push(stub(format!("{}/a{j}", d.id), &d.id, &d.object, Stage::Augmented, Some(&format!("{}/r", d.id))));
                augmented += 1;
            }
        }
        let s = stats(&ds);
        assert_eq!(s.total.human, 20);
        assert_eq!(s.total.augmented, augmented);
        assert_eq!(s.total.amplification(), augmented as f64 / 20.0);
        let box_aug: usize = (0..10).map(|i| (i * 7) % 5).sum();
        assert_eq!(s.per_object[0].augmented, box_aug);
    }
}
