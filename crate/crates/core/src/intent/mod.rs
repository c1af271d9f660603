//! Policy backends for both decision stages: prompt rendering, a scripted
//! oracle, an OpenAI-compatible remote client and strict output parsing.

mod oracle;
mod parse;
mod prompt;
mod remote;

pub use oracle::{
    greedy_target, oracle_intent, oracle_role, reasoning_text, target_score, FixedTextPolicy, OracleConfig,
    OracleConsensusPolicy, OracleIntentPolicy,
};
pub use parse::{extract_coordinates, parse_decision, IllegalReason, ParsedDecision};
pub use prompt::{fmt_target, role_description, FewShotExample, PromptBundle, NO_NEIGHBORS};
pub use remote::{
    remote_complete, ChatMessage, ChatRequest, ChatResponse, RemoteClient, RemoteConfig, RemoteError, RemotePolicy,
    TransportFailure, API_KEY_ENV, ENDPOINT_ENV,
};
