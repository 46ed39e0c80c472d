//! Versioned JSON envelope for trained ensembles. Trees are stored as
//! preorder node lists; floats use shortest round-trip formatting so a
//! save/load cycle is bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tree::{Direction, TreeNode};
use super::{BoostedEnsemble, GbdtError, TrainConfig};

pub const MODEL_FORMAT: &str = "ntl-gbdt";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    config: TrainConfig,
    feature_names: Vec<String>,
    base_score: f64,
    learning_rate: f64,
    trees: Vec<Vec<FlatNode>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum FlatNode {
    Leaf { value: f64, cover: u64 },
    Split { feature: usize, threshold: f64, missing_goes: Direction, cover: u64 },
}

fn flatten(node: &TreeNode, out: &mut Vec<FlatNode>) {
    match node {
        TreeNode::Leaf { value, cover } => out.push(FlatNode::Leaf { value: *value, cover: *cover }),
        TreeNode::Split { feature, threshold, missing_goes, cover, left, right } => {
            out.push(FlatNode::Split {
                feature: *feature,
                threshold: *threshold,
                missing_goes: *missing_goes,
                cover: *cover,
            });
            flatten(left, out);
            flatten(right, out);
        }
    }
}

fn unflatten(nodes: &[FlatNode], pos: &mut usize) -> Result<TreeNode, GbdtError> {
    let node = nodes
        .get(*pos)
        .ok_or_else(|| GbdtError::CorruptModel("tree ends before its last leaf".into()))?;
    *pos += 1;
    match *node {
        FlatNode::Leaf { value, cover } => Ok(TreeNode::Leaf { value, cover }),
        FlatNode::Split { feature, threshold, missing_goes, cover } => {
            let left = unflatten(nodes, pos)?;
            let right = unflatten(nodes, pos)?;
            Ok(TreeNode::Split {
                feature,
                threshold,
                missing_goes,
                cover,
                left: Box::new(left),
                right: Box::new(right),
            })
        }
    }
}

pub fn write_model<W: Write>(model: &BoostedEnsemble, out: W) -> Result<(), GbdtError> {
    let envelope = Envelope {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        config: model.config.clone(),
        feature_names: model.feature_names.clone(),
        base_score: model.base_score,
        learning_rate: model.learning_rate,
        trees: model
            .trees
            .iter()
            .map(|t| {
                let mut v = Vec::new();
                flatten(t, &mut v);
                v
            })
            .collect(),
    };
    serde_json::to_writer(out, &envelope).map_err(|e| GbdtError::Io(e.into()))
}

pub fn read_model<R: Read>(input: R) -> Result<BoostedEnsemble, GbdtError> {
    let value: serde_json::Value =
        serde_json::from_reader(input).map_err(|e| GbdtError::CorruptModel(e.to_string()))?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(MODEL_FORMAT) => {}
        other => {
            return Err(GbdtError::CorruptModel(format!("unexpected format tag {other:?}")));
        }
    }
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| GbdtError::CorruptModel("missing version".into()))?;
    if version != u64::from(MODEL_VERSION) {
        return Err(GbdtError::VersionMismatch {
            found: version.min(u64::from(u32::MAX)) as u32,
            expected: MODEL_VERSION,
        });
    }
    let envelope: Envelope =
        serde_json::from_value(value).map_err(|e| GbdtError::CorruptModel(e.to_string()))?;
    let mut trees = Vec::with_capacity(envelope.trees.len());
    for (i, flat) in envelope.trees.iter().enumerate() {
        let mut pos = 0;
        let tree = unflatten(flat, &mut pos)?;
        if pos != flat.len() {
            return Err(GbdtError::CorruptModel(format!("tree {i} has trailing nodes")));
        }
        trees.push(tree);
    }
    let model = BoostedEnsemble {
        base_score: envelope.base_score,
        learning_rate: envelope.learning_rate,
        trees,
        feature_names: envelope.feature_names,
        config: envelope.config,
    };
    model.check().map_err(GbdtError::CorruptModel)?;
    Ok(model)
}

pub fn save_model(model: &BoostedEnsemble, path: impl AsRef<Path>) -> Result<(), GbdtError> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    write_model(model, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<BoostedEnsemble, GbdtError> {
    let bytes = fs::read(path)?;
    read_model(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> BoostedEnsemble {
        BoostedEnsemble {
            base_score: 1.0 / 3.0,
            learning_rate: 0.1,
            trees: vec![
                TreeNode::split(
                    1,
                    0.1 + 0.2,
                    Direction::Right,
                    TreeNode::leaf(-2.5e-17, 4),
                    TreeNode::split(0, -7.0, Direction::Left, TreeNode::leaf(1e300, 1), TreeNode::leaf(3.0, 2)),
                ),
                TreeNode::leaf(0.0, 7),
            ],
            feature_names: vec!["#Visit".into(), "LastVisit".into()],
            config: TrainConfig::default(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.base_score.to_bits(), m.base_score.to_bits());
    }

    #[test]
    fn truncated_is_corrupt() {
        let mut buf = Vec::new();
        write_model(&model(), &mut buf).unwrap();
        buf.truncate(buf.len() / 2);
        assert!(matches!(read_model(buf.as_slice()), Err(GbdtError::CorruptModel(_))));
    }

    #[test]
    fn wrong_version() {
        let mut buf = Vec::new();
        write_model(&model(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("\"version\":1", "\"version\":9");
        assert!(matches!(
            read_model(text.as_bytes()),
            Err(GbdtError::VersionMismatch { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn dangling_preorder_is_corrupt() {
        let text = r#"{"format":"ntl-gbdt","version":1,"config":{},"feature_names":["x"],
            "base_score":0.0,"learning_rate":1.0,
            "trees":[[{"kind":"split","feature":0,"threshold":1.0,"missing_goes":"left","cover":2},
                      {"kind":"leaf","value":1.0,"cover":1}]]}"#;
        assert!(matches!(read_model(text.as_bytes()), Err(GbdtError::CorruptModel(_))));
    }
}
