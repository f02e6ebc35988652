//! Turns a video into per-frame person detections by sending sampled frames
//! to a vision-language model over a chat-completions API, validating what
//! comes back, and persisting a JSON artifact. Also renders annotated video
//! from an artifact.

pub mod annotate;
pub mod artifact;
pub mod chat;
pub mod contract;
pub mod detection;
pub mod gateway;
pub mod linker;
pub mod media;
pub mod pipeline;
pub mod validate;
