//! Interaction-log ingestion, filtering policy, leave-one-out splitting and
//! fixed-length window construction.

pub mod canonical;
mod parse;
mod policy;
mod split;
pub mod synthetic;

pub use parse::{parse_log, Interaction, LogFormat, ParsedLog, MAX_MALFORMED_FRACTION};
pub use policy::{apply_policy, Dataset, DatasetStats, Policy};
pub use split::{
    leave_one_out, left_pad, make_windows, FixedWindow, LeaveOneOut, SplitBundle, UserSplit, PAD,
};
