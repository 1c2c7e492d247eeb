//! Placement, selection and routing of AI services over a network with
//! mobile users whose results are tunneled back through their anchor.

pub mod baselines;
pub mod dmp;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod flow;
pub mod grad;
pub mod io;
pub mod lfw;
pub mod model;
pub mod scenarios;

pub use baselines::Algorithm;
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, ResultRow, SweepAxis};
pub use flow::{FlowOptions, FlowState, Objective, TunnelPayload};
pub use grad::{GradientBundle, KktResidual};
pub use lfw::{BlockedSets, GradSource, LfwConfig, LfwOutcome, StepSchedule};
pub use model::{
    CostModel, DecisionState, DelayFamily, Instance, MobilityModel, NetworkModel, PlacementMode, RequestProfile,
    Service, ServiceCatalog,
};
pub use scenarios::{MobilityKind, ScenarioSpec, Topology};
