use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ctrkit", version, about = "Concentric tube robot modeling, control and evacuation simulation")]
pub struct Cli {
    /// Robot configuration (JSON). Built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    /// Write outputs as files here instead of printing them.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    /// Output format; each command has its own default.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    /// Only for `design --table1`.
    Markdown,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a polynomial centerline to digitized samples.
    FitShape(FitShapeArgs),
    /// Forward kinematics: tip pose and backbone.
    Fk(FkArgs),
    /// Inverse kinematics with torsion compensation.
    Ik(IkArgs),
    /// Straightening force, friction torque and twist over an (s, θ) grid.
    Torsion(TorsionArgs),
    /// Tube-pair design report, comparison table or RoC check.
    Design(DesignArgs),
    /// Simulate one pneumatic motor move.
    MotorSim(MotorSimArgs),
    /// Simulated hematoma evacuation.
    Evacuate(EvacuateArgs),
    /// Rigid fiducial registration.
    Register(RegisterArgs),
    /// Check a configuration file.
    ValidateConfig,
}

#[derive(Debug, Args)]
pub struct FitShapeArgs {
    /// CSV with columns x_mm,y_mm.
    #[arg(long)]
    pub centerline: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub degree: usize,
    /// Curvature samples in CSV output.
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct FkArgs {
    /// d,s,theta in mm, mm, rad.
    #[arg(long, allow_hyphen_values = true)]
    pub joints: String,
    /// Overrides the configured segment count.
    #[arg(long)]
    pub segments: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IkArgs {
    /// x,y,z in mm, robot frame.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "targets", required_unless_present = "targets")]
    pub target: Option<String>,
    /// CSV with columns x,y,z.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Current joints d,s,theta (mm, mm, rad); default home.
    #[arg(long, allow_hyphen_values = true)]
    pub current: Option<String>,
    /// Plan without torsion compensation.
    #[arg(long)]
    pub no_compensation: bool,
}

#[derive(Debug, Args)]
pub struct TorsionArgs {
    #[arg(long, default_value_t = 30)]
    pub s_steps: usize,
    #[arg(long, default_value_t = 12)]
    pub theta_steps: usize,
    #[arg(long, default_value_t = 180.0)]
    pub theta_max_deg: f64,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Tube pair JSON; the configured pair when omitted.
    #[arg(long)]
    pub pair: Option<PathBuf>,
    /// Comparison of precurved tube options (stiffness, bending force, F/k).
    #[arg(long, conflicts_with = "check_roc")]
    pub table1: bool,
    /// Check a proposed heat-set radius of curvature, mm.
    #[arg(long)]
    pub check_roc: Option<f64>,
    /// Residual curvature for the RoC check; computed from the pair when omitted, 1/mm.
    #[arg(long)]
    pub kappa_limit: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Rot,
    Trans,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Scheduled,
    Constant,
}

#[derive(Debug, Args)]
pub struct MotorSimArgs {
    #[arg(long, value_enum, default_value_t = Axis::Rot)]
    pub axis: Axis,
    /// Output-shaft move, degrees.
    #[arg(long, allow_hyphen_values = true)]
    pub setpoint_deg: f64,
    #[arg(long, value_enum, default_value_t = Mode::Scheduled)]
    pub mode: Mode,
    /// Gain for constant mode; the axis's kp_const when omitted.
    #[arg(long)]
    pub kp: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 300.0)]
    pub t_max: f64,
}

#[derive(Debug, Args)]
pub struct EvacuateArgs {
    /// Phantom header JSON (image frame); the configured scenario phantom when omitted.
    #[arg(long)]
    pub phantom: Option<PathBuf>,
    /// Residual volume at which to stop, mL; 0 disables.
    #[arg(long)]
    pub stop_ml: Option<f64>,
    /// Same as --stop-ml 0.
    #[arg(long, conflicts_with = "stop_ml")]
    pub unlimited: bool,
    /// Route every move through the pneumatic motor simulation.
    #[arg(long)]
    pub motors: bool,
    /// Ideal transmission: no friction wind-up and no compensation.
    #[arg(long)]
    pub no_torsion: bool,
    /// Also write the initial phantom (header + raw) to this path.
    #[arg(long)]
    pub export_phantom: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Image-frame fiducials, CSV with columns x,y,z.
    #[arg(long, requires = "robot", required_unless_present = "simulate")]
    pub image: Option<PathBuf>,
    /// Robot-frame fiducials, same order.
    #[arg(long)]
    pub robot: Option<PathBuf>,
    /// Monte Carlo over this many random rigid transforms instead.
    #[arg(long, conflicts_with = "image")]
    pub simulate: Option<usize>,
    /// Fiducial noise for --simulate, mm.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    /// Fiducial count for --simulate.
    #[arg(long, default_value_t = 4)]
    pub fiducials: usize,
}
