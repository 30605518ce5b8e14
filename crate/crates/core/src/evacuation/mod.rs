//! Simulated clot evacuation: voxel phantom, fiducial registration, target
//! selection and aspiration.

mod phantom;
mod registration;
mod workflow;

pub use phantom::{import_pgm_stack, load_phantom, save_phantom, ClotPhantom, PhantomHeader};
pub use registration::{random_rigid, register, registration_trials, RegistrationResult, RegistrationTrials};
pub use workflow::{
    aspirate, aspiration_cap, component_targets, far_end_target, plan_targets, run_evacuation,
    simulate_registration, Aspiration, EvacuationPolicy, EvacuationReport, EvacuationSetup, MotorStage,
    PhantomScenario, PlannedTarget, TargetKind, TargetMap, TargetRecord, Termination, Workspace,
    MIN_ASPIRATION_RADIUS,
};
