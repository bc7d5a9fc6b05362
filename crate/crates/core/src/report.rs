//! Serialization schemas shared with the experiment harness: per-test
//! records, suite results, the aggregate report, and the CSV row formats.
//! Reports are fully deterministic given the resolved configuration: no
//! timestamps, no host data, stable field and row ordering.

use crate::surface::{DensityMethod, LevelKind, SurfaceDensityEstimate};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Outcome of one test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatus {
    Pass,
    Fail,
    /// Not run because a prerequisite suite failed; never silently dropped.
    Blocked,
}

/// One verdict row of a suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestRecord {
    /// Stable identifier, e.g. `ibp.whole_space.m2.phi_cos.z1`.
    pub id: String,
    /// Human-readable statement of the identity or property under test.
    pub identity: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub status: TestStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl TestRecord {
    pub fn checked(id: &str, identity: &str, estimate: f64, tolerance: f64, pass: bool) -> Self {
        Self {
            id: id.to_string(),
            identity: identity.to_string(),
            estimate: Some(estimate),
            tolerance: Some(tolerance),
            status: if pass { TestStatus::Pass } else { TestStatus::Fail },
            detail: None,
        }
    }

    pub fn blocked(id: &str, identity: &str, reason: &str) -> Self {
        Self {
            id: id.to_string(),
            identity: identity.to_string(),
            estimate: None,
            tolerance: None,
            status: TestStatus::Blocked,
            detail: Some(reason.to_string()),
        }
    }

    pub fn with_detail(mut self, detail: &str) -> Self {
        self.detail = Some(detail.to_string());
        self
    }

    pub fn passed(&self) -> bool {
        self.status == TestStatus::Pass
    }
}

/// All records produced by one suite run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: String,
    pub seed: u64,
    pub records: Vec<TestRecord>,
}

impl SuiteResult {
    pub fn all_pass(&self) -> bool {
        self.records.iter().all(|r| r.passed())
    }
}

/// The aggregate acceptance report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub schema_version: u32,
    pub package_version: String,
    pub seed: u64,
    /// Statistical fine print for the suite-level pass rule.
    pub note: String,
    pub suites: Vec<SuiteResult>,
    pub all_pass: bool,
}

impl AcceptanceReport {
    pub fn from_suites(seed: u64, suites: Vec<SuiteResult>) -> Self {
        let all_pass = !suites.is_empty() && suites.iter().all(|s| s.all_pass());
        Self {
            schema_version: SCHEMA_VERSION,
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            note: "Each statistical test passes at 4 standard errors (about 1 in 16000 \
                   false failures per test); across the whole suite the family-wise \
                   false-failure rate is bounded by the number of tests times that rate."
                .to_string(),
            suites,
            all_pass,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// CSV schema for surface-density results.
pub const SURFACE_CSV_HEADER: &str = "kind,m,n,r,method,value,std_error,n_samples,seed";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceCsvRow {
    pub kind: LevelKind,
    pub m: u32,
    pub n: usize,
    pub r: f64,
    pub method: DensityMethod,
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl SurfaceCsvRow {
    pub fn from_estimate(
        kind: LevelKind,
        m: u32,
        n: usize,
        est: &SurfaceDensityEstimate,
    ) -> Self {
        Self {
            kind,
            m,
            n,
            r: est.r,
            method: est.method,
            value: est.value,
            std_error: est.std_error,
            n_samples: est.n_samples,
            seed: est.seed,
        }
    }

    pub fn to_csv_line(&self) -> String {
        let kind = match self.kind {
            LevelKind::Sphere => "sphere",
            LevelKind::Hyperplane => "hyperplane",
        };
        let method = match self.method {
            DensityMethod::Divergence => "divergence",
            DensityMethod::SmoothedFd => "smoothed_fd",
            DensityMethod::Oracle => "oracle",
        };
        format!(
            "{kind},{},{},{},{method},{},{},{},{}",
            self.m, self.n, self.r, self.value, self.std_error, self.n_samples, self.seed
        )
    }
}

/// CSV schema for trajectory summaries.
pub const TRAJECTORY_CSV_HEADER: &str = "time,mean_norm_sq,std_error,bound,phi_mean,pass";

pub fn trajectory_csv_line(row: &crate::dynamics::MomentBoundRow) -> String {
    let phi = row.phi_mean.map(|v| format!("{v}")).unwrap_or_default();
    format!(
        "{},{},{},{},{phi},{}",
        row.t, row.mean_norm_sq, row.std_error, row.bound, row.pass
    )
}
