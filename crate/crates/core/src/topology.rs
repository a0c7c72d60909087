//! Skeleton layouts and the body-part lexicon that maps text terms to joints.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NTU25_JSON: &str = include_str!("../data/topology/ntu25.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub name: String,
    pub joint_names: Vec<String>,
    pub edges: Vec<(usize, usize)>,
    /// Lowercase body-part term -> joint indices. Every joint name is a term
    /// whose joint set contains that joint.
    pub part_map: BTreeMap<String, Vec<usize>>,
}

impl SkeletonTopology {
    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        let name = name.trim().to_lowercase();
        self.joint_names.iter().position(|j| *j == name)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut topo: SkeletonTopology = serde_json::from_str(text)?;
        topo.joint_names = topo.joint_names.iter().map(|n| n.trim().to_lowercase()).collect();
        topo.part_map = topo
            .part_map
            .into_iter()
            .map(|(k, v)| (k.trim().to_lowercase(), v))
            .collect();
        topo.validate()?;
        Ok(topo)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.num_joints();
        if v == 0 {
            return Err(Error::InvalidTopology("no joints".into()));
        }
        let mut seen = HashSet::new();
        for n in &self.joint_names {
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidTopology(format!("duplicate joint name `{n}`")));
            }
        }
        for &(a, b) in &self.edges {
            if a >= v || b >= v {
                return Err(Error::InvalidTopology(format!("edge ({a}, {b}) out of range for {v} joints")));
            }
        }
        for (term, joints) in &self.part_map {
            if joints.is_empty() {
                return Err(Error::InvalidTopology(format!("part `{term}` maps to no joints")));
            }
            if let Some(j) = joints.iter().find(|&&j| j >= v) {
                return Err(Error::InvalidTopology(format!("part `{term}` references joint {j}")));
            }
        }
        for (i, n) in self.joint_names.iter().enumerate() {
            match self.part_map.get(n) {
                Some(js) if js.contains(&i) => {}
                _ => return Err(Error::InvalidTopology(format!("joint `{n}` is not a part term covering itself"))),
            }
        }
        Ok(())
    }

    /// Mean bone length over the topology edges for one `V x 3` frame.
    pub fn mean_bone_length(&self, frame: &[[f64; 3]]) -> f64 {
        if self.edges.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .edges
            .iter()
            .map(|&(a, b)| {
                let d: f64 = (0..3).map(|k| (frame[a][k] - frame[b][k]).powi(2)).sum();
                d.sqrt()
            })
            .sum();
        total / self.edges.len() as f64
    }
}

/// Built-in topologies by name.
pub fn load_topology(name: &str) -> Result<SkeletonTopology> {
    match name.trim().to_lowercase().as_str() {
        "ntu25" => SkeletonTopology::from_json(NTU25_JSON),
        other => Err(Error::UnknownTopology(other.to_string())),
    }
}
