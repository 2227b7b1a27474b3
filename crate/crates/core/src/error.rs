use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("duplicate triple at line {line}: {triple}")]
    DuplicateTriple { line: usize, triple: String },
    #[error("no triples found")]
    EmptyGraph,
    #[error("unknown entity id {0}")]
    UnknownEntity(u32),
    #[error("unknown relation id {0}")]
    UnknownRelation(u32),
    #[error("unknown token id {0}")]
    UnknownToken(u32),
    #[error("unknown query node {0}")]
    UnknownNode(u32),
    #[error("query graph contains a cycle")]
    Cycle,
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("query decomposes into more than {cap} paths")]
    TooManyPaths { cap: usize },
    #[error("encoded query has {len} tokens, more than max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("positional id {position} exceeds the {max_positions} position embeddings")]
    PositionOverflow { position: usize, max_positions: usize },
    #[error("variable {0} has no mask slot")]
    MissingVariable(u32),
    #[error("probability vectors have mismatched lengths")]
    LengthMismatch,
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("label {0} lies outside the entity range")]
    LabelOutOfRange(u32),
    #[error("batch has no mask slots, nothing to predict")]
    NothingToPredict,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("parameter shapes do not match")]
    ShapeMismatch,
    #[error("node {0} is not reachable from any anchor")]
    Unreachable(u32),
    #[error("gold entity {0} missing from score vector")]
    GoldMissing(u32),
    #[error("no filter entry for query {query} variable {var}")]
    MissingFilter { query: String, var: u32 },
    #[error("query {0} has an empty answer set")]
    EmptyAnswerSet(String),
    #[error("model exposes no attention")]
    NoAttention,
    #[error("ablation is defined on path queries only; query {0} is a DAG")]
    NotAPath(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
}
