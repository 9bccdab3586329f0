//! Static and dynamic analysis of on-device ML models shipped inside app packages.

pub mod bench;
pub mod catalog;
pub mod corpus;
pub mod detect;
pub mod fingerprint;
pub mod ir;
pub mod metrics;
pub mod optscan;
pub mod pipeline;
pub mod records;
pub mod report;
pub mod synth;
pub mod wire;
