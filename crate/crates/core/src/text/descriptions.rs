//! Offline action descriptions.
//!
//! File format: one JSON object per line,
//! `{"action": "...", "global": "...", "joints": {"<joint name>": "...", ...}}`.
//! Joint names match the topology case-insensitively.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::topology::SkeletonTopology;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionDescription {
    pub action_name: String,
    pub global_text: String,
    /// Topology joint name (lowercase) -> motion description.
    pub joint_texts: BTreeMap<String, String>,
}

impl ActionDescription {
    /// Joint texts in topology order.
    pub fn ordered_joint_texts<'a>(&'a self, topology: &'a SkeletonTopology) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        topology
            .joint_names
            .iter()
            .map(move |j| (j.as_str(), self.joint_texts.get(j).map_or("", String::as_str)))
    }
}

/// JSON object kept as ordered pairs so duplicate keys survive parsing.
struct Pairs(Vec<(String, String)>);

impl<'de> Deserialize<'de> for Pairs {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Pairs;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object of joint name -> text")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Pairs, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, String>()? {
                    out.push((k, v));
                }
                Ok(Pairs(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Deserialize)]
struct RawRecord {
    action: String,
    global: String,
    joints: Pairs,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    action: &'a str,
    global: &'a str,
    joints: &'a BTreeMap<String, String>,
}

/// Parses description records from text, validating full joint coverage.
pub fn parse_descriptions(text: &str, topology: &SkeletonTopology) -> Result<Vec<ActionDescription>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::record(i, e.to_string()))?;
        out.push(validate(raw, topology)?);
    }
    Ok(out)
}

pub fn ingest_descriptions(path: &Path, topology: &SkeletonTopology) -> Result<Vec<ActionDescription>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_descriptions(&text, topology)
}

fn validate(raw: RawRecord, topology: &SkeletonTopology) -> Result<ActionDescription> {
    let action = raw.action.trim().to_string();
    let err = |message: String| Error::Description {
        action: action.clone(),
        message,
    };
    if action.is_empty() {
        return Err(err("empty action name".into()));
    }
    if raw.global.trim().is_empty() {
        return Err(err("empty global description".into()));
    }
    let mut joint_texts = BTreeMap::new();
    for (name, text) in raw.joints.0 {
        let key = name.trim().to_lowercase();
        if topology.joint_index(&key).is_none() {
            return Err(err(format!("unknown joint `{name}`")));
        }
        if text.trim().is_empty() {
            return Err(err(format!("empty text for joint `{key}`")));
        }
        if joint_texts.insert(key.clone(), text.trim().to_string()).is_some() {
            return Err(err(format!("duplicate joint entry `{key}`")));
        }
    }
    if let Some(missing) = topology.joint_names.iter().find(|j| !joint_texts.contains_key(*j)) {
        return Err(err(format!("missing joint `{missing}`")));
    }
    Ok(ActionDescription {
        action_name: action,
        global_text: raw.global.trim().to_string(),
        joint_texts,
    })
}

pub fn write_descriptions(path: &Path, descriptions: &[ActionDescription]) -> Result<()> {
    let mut body = String::new();
    for d in descriptions {
        let rec = OutRecord {
            action: &d.action_name,
            global: &d.global_text,
            joints: &d.joint_texts,
        };
        body.push_str(&serde_json::to_string(&rec)?);
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::load_topology;

    const APPENDIX: &str = include_str!("../../data/fixtures/appendix_descriptions.jsonl");

    #[test]
    fn appendix_fixture_covers_all_joints() {
        let topo = load_topology("ntu25").unwrap();
        let ds = parse_descriptions(APPENDIX, &topo).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds[0].action_name, "wave hand");
        assert_eq!(ds[0].joint_texts.len(), 25);
        assert!(ds[0].joint_texts["tip of left hand"].contains("waving motion"));
    }

    fn record_without(joint: &str) -> String {
        let topo = load_topology("ntu25").unwrap();
        let joints: serde_json::Map<String, serde_json::Value> = topo
            .joint_names
            .iter()
            .filter(|j| *j != joint)
            .map(|j| (j.clone(), serde_json::Value::from("moves")))
            .collect();
        serde_json::json!({"action": "x", "global": "the arm moves", "joints": joints}).to_string()
    }

    #[test]
    fn missing_joint_is_named() {
        let topo = load_topology("ntu25").unwrap();
        let e = parse_descriptions(&record_without("neck"), &topo).unwrap_err();
        assert!(e.to_string().contains("neck"), "{e}");
    }

    #[test]
    fn duplicate_joint_key_is_rejected() {
        let topo = load_topology("ntu25").unwrap();
        let line = record_without("neck").replacen("{\"base of spine\"", "{\"Neck\":\"a\",\"neck\":\"b\",\"base of spine\"", 1);
        let e = parse_descriptions(&line, &topo).unwrap_err();
        assert!(e.to_string().contains("duplicate"), "{e}");
    }

    #[test]
    fn unknown_joint_and_empty_text_are_rejected() {
        let topo = load_topology("ntu25").unwrap();
        let line = record_without("neck").replacen("{\"base of spine\"", "{\"tail\":\"wags\",\"base of spine\"", 1);
        assert!(parse_descriptions(&line, &topo).unwrap_err().to_string().contains("unknown joint"));
        let line = record_without("neck").replacen("{\"base of spine\"", "{\"neck\":\"  \",\"base of spine\"", 1);
        assert!(parse_descriptions(&line, &topo).unwrap_err().to_string().contains("empty text"));
    }

    #[test]
    fn write_then_parse_is_identity() {
        let topo = load_topology("ntu25").unwrap();
        let ds = parse_descriptions(APPENDIX, &topo).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_descriptions(&p, &ds).unwrap();
        assert_eq!(ingest_descriptions(&p, &topo).unwrap(), ds);
    }
}
