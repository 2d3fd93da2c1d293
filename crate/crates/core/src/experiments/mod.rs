//! Experiment plans and the runner that trains, evaluates and reports
//! every group of a plan.

mod plan;
mod report;
mod run;

pub use plan::{
    derive_seed, parse_ratio, DataSource, EvalPlan, ExperimentPlan, PlanData, PlanKind, SelectionPlan, StagePlan,
    PLAN_SCHEMA, RATIO_LABELS,
};
pub use report::{merge_reports, write_report, ExperimentReport, GroupSummary, MergedReport, REPORT_FILE};
pub use run::{group_slug, manual_pick, run_plan, RunOptions};
