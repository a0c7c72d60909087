//! Textual guidance: prompt rendering, offline description ingestion,
//! key-joint extraction and per-joint text embeddings.

mod descriptions;
mod embed;
mod keyjoints;
mod prompts;

pub use descriptions::{ingest_descriptions, parse_descriptions, write_descriptions, ActionDescription};
pub use embed::{
    default_text_embedder, embed_joint_texts, load_external_embeddings, save_external_embeddings, HashedBagOfWords,
    JointTextEmbeddings, TextEmbedder, DEFAULT_TEXT_DIM,
};
pub use keyjoints::{extract_key_joints, tokenize, KeyJointDistribution, KeyJointRecord};
pub use prompts::{render_prompts, GLOBAL_ACTION_PROMPT, JOINT_MOTION_PROMPT};
