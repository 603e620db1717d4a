//! Price-driven load shaping for a residential neighborhood.
//!
//! A coordinator announces a price per time slot. Each home answers with the
//! appliance schedule minimising its bill plus a weighted squared deviation
//! from its preferred schedule, subject to linear comfort constraints. The
//! coordinator differentiates those answers through the homes' KKT
//! conditions and runs projected stochastic gradient descent on the prices
//! so the aggregate load tracks a flat target.
//!
//! ```no_run
//! use loadshape::{generate_neighborhood, run_coordination, CoordinatorConfig, NeighborhoodConfig};
//!
//! let scenario = generate_neighborhood(&NeighborhoodConfig { n_homes: 20, ..Default::default() })?;
//! let result = run_coordination(&scenario, &CoordinatorConfig { batch_size: Some(5), ..Default::default() })?;
//! println!("z = {}", result.final_objective());
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod appliance;
pub mod coordinator;
pub mod error;
pub mod home;
pub mod oracle;
pub mod qp;
pub mod scenario;
pub mod sensitivity;

pub use appliance::{
    assemble_home_polyhedron, build_basic_block, build_ev_block, build_ewh_block, build_hvac_block,
    ev_charge_trajectory, ewh_level_trajectory, hvac_temperature_trajectory, ApplianceSpec, BasicApplianceSpec,
    ConstraintBlock, ConstraintPolyhedron, EvSpec, EwhSpec, HvacMode, HvacSpec, RowLabel,
};
pub use coordinator::{
    aggregate_load, coordinator_objective, coordinator_partial_fp, estimate_gradient, project_price, run_coordination,
    sample_batch, CoordinatorConfig, GradientScaling, IterationRecord, OptimizerKind, OptimizerState, PriceBox,
    RunResult, StopReason,
};
pub use error::{ApplianceError, CoordinatorError, ScenarioError, SensitivityError, SolveError};
pub use home::{
    home_objective, kkt_residuals, solve_home_qp, HomeSolver, KktResiduals, PriceVector, PrimalDualSolution,
    SolveStatus,
};
pub use qp::QpSettings;
pub use scenario::{
    desired_schedules, feasibility_certify, generate_neighborhood, outside_temperature, target_profile, Certificate,
    ComfortWeights, DesiredSchedule, Home, NeighborhoodConfig, Scenario, TargetProfile,
};
pub use sensitivity::{active_set, home_gradient_contribution, price_jacobian, ActiveSetInfo, SensitivityMatrix};
