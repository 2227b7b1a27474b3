//! Conjunctive query answering over incomplete knowledge graphs with a
//! bidirectional self-attention encoder.
//!
//! Query DAGs are decomposed into root-to-leaf paths, each path is rendered
//! tail first with positional ids restarting at every path boundary, free
//! variables become `MASK` tokens and existential variables are dropped.
//! A transformer encoder predicts every masked entity jointly; duplicate
//! masks of one variable are averaged at test time.
//!
//! The crate is `no_std` (it needs `alloc`). File IO, the command-line
//! driver and the on-disk formats live in the companion `biqe` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod answers;
pub mod checkpoint;
pub mod datagen;
pub mod encoder;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod gqe;
pub mod kg;
pub mod optim;
pub mod query;
pub mod real;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use kg::{EntityId, KnowledgeGraph, RelationId, Triple, Vocabulary};
pub use query::{LabeledQuery, NodeId, NodeKind, QueryDag, QueryNode, QueryPath, VarId};
pub use real::Real;
