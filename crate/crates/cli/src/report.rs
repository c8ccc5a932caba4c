//! Reports: everything needed to replay a result without the original problem file.

use iqcloc::analysis::StorageCertificate;
use iqcloc::lti::Controller;
use serde::{Deserialize, Serialize};

use crate::problem::{Matrix, MultiplierSpec, ProblemFile, QuadSpec};
use crate::{CliError, Command, Flags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Admissible,
    NotAdmissible,
    Infeasible,
    MaxIter,
    Valid,
    Invalid,
}

impl Status {
    /// 0 for an answer, 2 for a negative answer, 1 when the method gave up.
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok | Status::Admissible | Status::Valid => 0,
            Status::NotAdmissible | Status::Infeasible | Status::Invalid => 2,
            Status::MaxIter => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub ac: Matrix,
    pub bc: Matrix,
    pub cc: Matrix,
    pub dc: Matrix,
}

impl ControllerSpec {
    pub fn from_controller(k: &Controller) -> Self {
        Self { ac: Matrix(k.ac.clone()), bc: Matrix(k.bc.clone()), cc: Matrix(k.cc.clone()), dc: Matrix(k.dc.clone()) }
    }

    pub fn to_controller(&self) -> Result<Controller, CliError> {
        Controller::new(self.ac.0.clone(), self.bc.0.clone(), self.cc.0.clone(), self.dc.0.clone())
            .map_err(|e| CliError::Dimension(format!("controller: {e}")))
    }
}

/// Storage certificate for one subsystem or one group of subsystems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSpec {
    /// Subsystem indices, in port order.
    pub members: Vec<usize>,
    pub gamma: f64,
    pub multiplier: MultiplierSpec,
    pub p: Matrix,
    /// Present when the single member was closed with a synthesized controller.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerSpec>,
    pub feas_residual: f64,
}

impl CertificateSpec {
    pub fn new(members: Vec<usize>, gamma: f64, cert: &StorageCertificate, controller: Option<&Controller>) -> Self {
        Self {
            members,
            gamma,
            multiplier: MultiplierSpec::from_multiplier(&cert.multiplier),
            p: Matrix(cert.p.clone()),
            controller: controller.map(ControllerSpec::from_controller),
            feas_residual: cert.feas_residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemReport {
    pub name: String,
    /// Lowest certified level of this subsystem on its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Local supply rate assigned to this subsystem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<QuadSpec>,
}

/// One replayed check of `validate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub command: Command,
    pub flags: Flags,
    pub problem: ProblemFile,
    pub status: Status,
    /// Certified level of the whole command (largest over the units).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_global: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    pub subsystems: Vec<SubsystemReport>,
    /// Aggregate multiplier on `(v, y)` when it is not block diagonal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<QuadSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub certificates: Vec<CertificateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    /// Per-iteration residual pairs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<Check>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl Report {
    pub fn new(command: Command, flags: Flags, problem: ProblemFile, status: Status) -> Self {
        let subsystems = problem
            .subsystems
            .iter()
            .map(|s| SubsystemReport { name: s.name.clone(), gamma: None, allocation: None })
            .collect();
        Self {
            command,
            flags,
            problem,
            status,
            gamma: None,
            gamma_global: None,
            distance: None,
            gap: None,
            subsystems,
            aggregate: None,
            groups: None,
            certificates: Vec::new(),
            iterations: None,
            trace: Vec::new(),
            checks: Vec::new(),
            message: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports contain only finite numbers") + "\n"
    }
}
