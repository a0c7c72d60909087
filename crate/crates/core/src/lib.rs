pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod interaction;
pub mod model;
pub mod params;
pub mod synthetic;
pub mod tensor;
pub mod text;
pub mod topology;
pub mod train;

pub use checkpoint::{Checkpoint, TrainingMetadata};
pub use config::{EncoderConfig, InteractionConfig, ModelConfig, TemporalPooling};
pub use data::{load_dataset, Dataset, SkeletonSequence};
pub use error::{Error, Result};
pub use eval::{ClassifierKind, DcParams, EvalReport, EvalSettings, Episode, FeatureSet};
pub use model::{CrossGlg, LossBreakdown};
pub use tensor::Mat;
pub use text::{ActionDescription, JointTextEmbeddings, KeyJointDistribution};
pub use topology::{load_topology, SkeletonTopology};
pub use train::{EpochLog, TrainingSet};
