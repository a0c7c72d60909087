//! Key joints named by a global action description.

use serde::{Deserialize, Serialize};

use super::ActionDescription;
use crate::error::{Error, Result};
use crate::topology::SkeletonTopology;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyJointDistribution {
    /// Binary key-joint indicator.
    pub k: Vec<u8>,
    /// `k / sum(k)`.
    pub k_gt: Vec<f64>,
}

impl KeyJointDistribution {
    pub fn from_binary(k: Vec<u8>) -> Option<Self> {
        let n: usize = k.iter().map(|&b| b as usize).sum();
        if n == 0 || k.iter().any(|&b| b > 1) {
            return None;
        }
        let k_gt = k.iter().map(|&b| b as f64 / n as f64).collect();
        Some(Self { k, k_gt })
    }

    pub fn key_indices(&self) -> Vec<usize> {
        self.k.iter().enumerate().filter(|(_, &b)| b == 1).map(|(i, _)| i).collect()
    }

    /// Calibration target: normalized by default, raw binary on request.
    pub fn target(&self, raw_binary: bool) -> Vec<f64> {
        if raw_binary {
            self.k.iter().map(|&b| b as f64).collect()
        } else {
            self.k_gt.clone()
        }
    }
}

/// Export record: `{"action", "K", "k_gt"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyJointRecord {
    pub action: String,
    #[serde(rename = "K")]
    pub k: Vec<u8>,
    pub k_gt: Vec<f64>,
}

/// Lowercase alphabetic tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn token_matches(word: &str, term: &str) -> bool {
    if word == term {
        return true;
    }
    if let Some(stem) = word.strip_suffix("es") {
        if stem == term {
            return true;
        }
    }
    if let Some(stem) = word.strip_suffix('s') {
        if stem == term {
            return true;
        }
    }
    matches!((word, term), ("feet", "foot") | ("teeth", "tooth"))
}

/// Scans the global description for body-part terms of the topology lexicon.
///
/// Matching is case-insensitive, on word boundaries, longest term first at
/// each position, and tolerant to regular plurals. Every matched term marks
/// all joints it maps to.
pub fn extract_key_joints(desc: &ActionDescription, topology: &SkeletonTopology) -> Result<KeyJointDistribution> {
    let words = tokenize(&desc.global_text);
    let mut lexicon: Vec<(Vec<String>, &Vec<usize>)> = topology
        .part_map
        .iter()
        .map(|(term, joints)| (tokenize(term), joints))
        .collect();
    // longest terms first so the first hit at a position is the longest one
    lexicon.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));

    let mut k = vec![0u8; topology.num_joints()];
    let mut i = 0;
    while i < words.len() {
        let hit = lexicon.iter().find(|(term, _)| {
            term.len() <= words.len() - i && term.iter().zip(&words[i..]).all(|(t, w)| token_matches(w, t))
        });
        match hit {
            Some((term, joints)) => {
                for &j in joints.iter() {
                    k[j] = 1;
                }
                i += term.len();
            }
            None => i += 1,
        }
    }
    KeyJointDistribution::from_binary(k).ok_or_else(|| Error::NoKeyJoints(desc.action_name.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::load_topology;
    use proptest::prelude::*;

    fn desc(global: &str) -> ActionDescription {
        ActionDescription {
            action_name: "t".into(),
            global_text: global.into(),
            joint_texts: Default::default(),
        }
    }

    fn key_set(global: &str) -> Vec<usize> {
        let topo = load_topology("ntu25").unwrap();
        extract_key_joints(&desc(global), &topo).unwrap().key_indices()
    }

    #[test]
    fn spine_only_text_marks_the_spine_chain() {
        let topo = load_topology("ntu25").unwrap();
        let d = extract_key_joints(&desc("the spine stays straight"), &topo).unwrap();
        assert_eq!(d.key_indices(), vec![0, 1, 20]);
        for j in [0, 1, 20] {
            assert!((d.k_gt[j] - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((d.k_gt.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn longest_match_and_sides() {
        assert_eq!(key_set("the tip of left hand"), vec![21]);
        assert_eq!(key_set("left arm"), vec![4, 5, 6]);
        assert_eq!(key_set("the left hand"), vec![7]);
        assert_eq!(key_set("both hands"), vec![7, 11]);
        assert_eq!(key_set("the feet"), vec![15, 19]);
        assert_eq!(key_set("the KNEES"), vec![13, 17]);
    }

    #[test]
    fn nothing_matched_is_an_error() {
        let topo = load_topology("ntu25").unwrap();
        assert!(matches!(extract_key_joints(&desc("a person stands"), &topo), Err(Error::NoKeyJoints(_))));
    }

    const TERMS: &[&str] = &["arm", "hand", "knee", "hip", "eye", "head", "neck", "elbow", "wrist", "leg", "foot", "thumb"];
    const FILLER: &[&str] = &["the", "moves", "quickly", "while", "and", "slowly", "raised", "bent"];

    fn sentence() -> impl Strategy<Value = Vec<&'static str>> {
        prop::collection::vec(
            prop_oneof![prop::sample::select(TERMS), prop::sample::select(FILLER)],
            1..12,
        )
    }

    proptest! {
        #[test]
        fn single_word_terms_ignore_order_and_case(words in sentence(), seed in any::<u64>()) {
            prop_assume!(words.iter().any(|w| TERMS.contains(w)));
            let topo = load_topology("ntu25").unwrap();
            let base = extract_key_joints(&desc(&words.join(" ")), &topo).unwrap();
            let mut shuffled = words.clone();
            let n = shuffled.len();
            for i in (1..n).rev() {
                let j = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) % (i as u64 + 1)) as usize;
                shuffled.swap(i, j);
            }
            let upper = shuffled.join(" ").to_uppercase();
            let other = extract_key_joints(&desc(&upper), &topo).unwrap();
            prop_assert_eq!(base, other);
        }

        #[test]
        fn appending_text_never_clears_joints(a in sentence(), b in sentence()) {
            prop_assume!(a.iter().any(|w| TERMS.contains(w)));
            let topo = load_topology("ntu25").unwrap();
            let first = extract_key_joints(&desc(&a.join(" ")), &topo).unwrap();
            let both = extract_key_joints(&desc(&format!("{} {}", a.join(" "), b.join(" "))), &topo).unwrap();
            for j in 0..25 {
                prop_assert!(both.k[j] >= first.k[j]);
            }
            let support: Vec<usize> = both.key_indices();
            for (j, &v) in both.k_gt.iter().enumerate() {
                prop_assert_eq!(v > 0.0, support.contains(&j));
            }
            prop_assert!((both.k_gt.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
