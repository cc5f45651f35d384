//! End-to-end learned query-optimizer pipeline at desk scale: synthetic
//! multi-database generation, exact labeling oracles (brute-force
//! cardinality, analytic cost, exact join-order search), a multi-task
//! transformer predicting cardinality/cost/join order, legality-constrained
//! beam decoding, sequence-level training, and cross-database meta-learning.

pub mod decode;
pub mod error;
pub mod featurize;
pub mod losses;
pub mod meta;
pub mod model;
pub mod oracle;
pub mod par;
pub mod report;
pub mod schema_gen;
pub mod tensor;
pub mod workload;

pub use error::{Error, Result};
