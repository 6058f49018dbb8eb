//! Intersectional groups, streaming expected counts, differentiable ε-DF
//! with its hinge penalty, and the audit metric suite.

mod audit;
mod counts;
mod groups;

pub use audit::{audit_metrics, contingency, AttributeAudit, AuditReport, GroupSummary, DEFAULT_AUDIT_ALPHA};
pub use counts::{
    epsilon_df, epsilon_df_tape, fairness_penalty, fairness_penalty_value, CountState, PendingCounts, TapeCounts,
};
pub use groups::{encode_intersections, GroupIndex};
