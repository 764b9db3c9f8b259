pub mod attrs;
pub mod baselines;
pub mod checkpoint;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod model;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{BipartiteGraph, CsrMatrix, NormMode};
pub use attrs::{AttributeSchema, AttributeTable, FieldKind, FieldSpec, RawRecord, Side};
pub use model::{ForwardTrace, ModelDims, ModelParams};
pub use eval::{EvalReport, HrMode, RankingMetrics};
pub use dataio::{Dataset, IdMap, Interactions, SplitRatios};
pub use trainer::{train, TrainConfig, TrainOutcome, Trainer};
