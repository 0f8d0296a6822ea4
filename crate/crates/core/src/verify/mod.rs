//! Trace ladder, expansion fit and the acceptance checks.

pub mod checks;
pub mod fit;
pub mod kernel;
pub mod ladder;
pub mod report;

pub use checks::{AnalyticTargets, FreeWeyl, GaugeCheck, HsCheck};
pub use fit::{ExpansionFit, FitCoefficient, SubsetStability};
pub use kernel::{KernelConsistency, KernelStudy};
pub use ladder::{LadderEntry, TraceLadder, TraceMethod};
pub use report::{run_report, Criterion, Report, Stage};
