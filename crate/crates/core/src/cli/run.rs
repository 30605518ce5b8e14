use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use ctrkit::config::RobotConfig;
use ctrkit::evacuation::{
    load_phantom, register, registration_trials, run_evacuation, save_phantom, simulate_registration,
    EvacuationSetup,
};
use ctrkit::inverse_kinematics::{MovePlan, Planner};
use ctrkit::kinematics::{forward_kinematics, JointConfig, Transform};
use ctrkit::motor_control::{simulate_move_with, write_trace_csv, GainMode, SimOptions};
use ctrkit::torsion::wind_up;
use ctrkit::tube_design::{
    bending_report, check_roc, comparison_rows, comparison_table, kappa_limit, max_precurvature, BendGeometry,
    BendingReport, TableLine, TubePair,
};
use ctrkit::tube_shape::{fit_centerline, CenterlineSamples, PlanarShape};
use ctrkit::{CtrError, Execution, Result};

use super::args::*;

struct Ctx {
    config: RobotConfig,
    seed: u64,
    out_dir: Option<PathBuf>,
    format: Option<Format>,
}

impl Ctx {
    fn format(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }

    /// Prints `body`, or writes it to `<out-dir>/<name>` when an output
    /// directory was given.
    fn emit(&self, name: &str, body: &str) -> Result<()> {
        match &self.out_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
                let path = dir.join(name);
                fs::write(&path, body).map_err(|e| io_err(&path, e))?;
                log::info!("wrote {}", path.display());
                Ok(())
            }
            None => {
                print!("{body}");
                Ok(())
            }
        }
    }

    /// Writes `body` only when an output directory was given.
    fn emit_file(&self, name: &str, body: &str) -> Result<()> {
        if self.out_dir.is_some() {
            self.emit(name, body)?;
        }
        Ok(())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CtrError {
    CtrError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn parse_err(path: &Path, message: impl ToString) -> CtrError {
    CtrError::Parse {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| CtrError::InvalidInput(format!("csv output: {e}"));
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(&row).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CtrError::InvalidInput(format!("csv output: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn f(v: f64) -> String {
    format!("{v:.6}")
}

fn triple(text: &str, what: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(CtrError::InvalidInput(format!("{what} needs three comma-separated values, got `{text}`")));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p
            .parse()
            .map_err(|_| CtrError::InvalidInput(format!("{what}: `{p}` is not a number")))?;
    }
    Ok(out)
}

fn joints(text: &str) -> Result<JointConfig> {
    let [d, s, theta] = triple(text, "joints")?;
    Ok(JointConfig::new(d, s, theta))
}

#[derive(Debug, Deserialize)]
struct XyzRow {
    x: f64,
    y: f64,
    z: f64,
}

fn read_points(path: &Path) -> Result<Vec<Point3<f64>>> {
    let mut text = String::new();
    fs::File::open(path)
        .and_then(|mut file| file.read_to_string(&mut text))
        .map_err(|e| io_err(path, e))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    r.deserialize::<XyzRow>()
        .map(|row| row.map(|p| Point3::new(p.x, p.y, p.z)).map_err(|e| parse_err(path, e)))
        .collect()
}

pub fn run(cli: Cli) -> Result<()> {
    let config = match (&cli.config, &cli.command) {
        (Some(path), Command::ValidateConfig) => return validate_config(path),
        (None, Command::ValidateConfig) => {
            return Err(CtrError::InvalidInput("validate-config needs --config".into()));
        }
        (Some(path), _) => RobotConfig::load(path)?,
        (None, _) => RobotConfig::default(),
    };
    let ctx = Ctx {
        config,
        seed: cli.seed,
        out_dir: cli.out_dir,
        format: cli.format,
    };
    match &cli.command {
        Command::FitShape(a) => fit_shape(&ctx, a),
        Command::Fk(a) => fk(&ctx, a),
        Command::Ik(a) => ik(&ctx, a),
        Command::Torsion(a) => torsion(&ctx, a),
        Command::Design(a) => design(&ctx, a),
        Command::MotorSim(a) => motor_sim(&ctx, a),
        Command::Evacuate(a) => evacuate(&ctx, a),
        Command::Register(a) => registration(&ctx, a),
        Command::ValidateConfig => unreachable!("handled above"),
    }
}

fn validate_config(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let (_, v) = RobotConfig::from_json_str(&text, path.parent());
    #[derive(Serialize)]
    struct Out<'a> {
        valid: bool,
        #[serde(flatten)]
        validation: &'a ctrkit::config::Validation,
    }
    print!(
        "{}",
        json(&Out {
            valid: v.is_valid(),
            validation: &v,
        })
    );
    if v.is_valid() {
        Ok(())
    } else {
        Err(CtrError::Config(v.issues))
    }
}

#[derive(Serialize)]
struct FitOutput {
    shape: PlanarShape,
    degree: usize,
    samples: usize,
    rms_residual: f64,
    arc_total: f64,
    bend_angle_deg: f64,
}

fn fit_shape(ctx: &Ctx, a: &FitShapeArgs) -> Result<()> {
    let samples = CenterlineSamples::from_csv_path(&a.centerline)?;
    let shape = fit_centerline(&samples, a.degree)?;
    let pts = samples.points();
    let rms = (pts.iter().map(|(x, y)| (shape.f(*x) - y).powi(2)).sum::<f64>() / pts.len() as f64).sqrt();
    let out = FitOutput {
        degree: a.degree,
        samples: pts.len(),
        rms_residual: rms,
        arc_total: shape.arc_total(),
        bend_angle_deg: shape.bend_angle().to_degrees(),
        shape: shape.clone(),
    };
    let n = a.samples.max(1);
    let mut rows = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let x = shape.x_max_total() * i as f64 / n as f64;
        rows.push(vec![f(x), f(shape.f(x)), format!("{:.8}", shape.curvature(x)?)]);
    }
    let table = csv_string(&["x_mm", "y_mm", "curvature_per_mm"], rows)?;
    match ctx.format(Format::Json) {
        Format::Csv => ctx.emit("shape_samples.csv", &table)?,
        _ => {
            ctx.emit("shape.json", &json(&out))?;
            ctx.emit_file("shape_samples.csv", &table)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct FkOutput {
    joints: JointConfig,
    tip_position: [f64; 3],
    tip_pose: Transform,
    segments: usize,
}

fn fk(ctx: &Ctx, a: &FkArgs) -> Result<()> {
    let shape = ctx.config.shape()?;
    let q = ctx.config.limits(&shape).check(&joints(&a.joints)?)?;
    let n = a.segments.unwrap_or(ctx.config.segments);
    let sol = forward_kinematics(&shape, &q, n)?;
    let out = FkOutput {
        joints: q,
        tip_position: sol.tip_position().into(),
        tip_pose: sol.tip,
        segments: n,
    };
    let backbone = csv_string(
        &["x", "y", "z"],
        sol.backbone.iter().map(|p| p.iter().map(|v| f(*v)).collect()),
    )?;
    match ctx.format(Format::Json) {
        Format::Csv => ctx.emit("backbone.csv", &backbone)?,
        _ => {
            ctx.emit("tip_pose.json", &json(&out))?;
            ctx.emit_file("backbone.csv", &backbone)?;
        }
    }
    Ok(())
}

fn planner(ctx: &Ctx, compensate: bool) -> Result<Planner> {
    if compensate {
        ctx.config.planner()
    } else {
        let shape = ctx.config.shape()?;
        Planner::new(shape.clone(), ctx.config.segments, ctx.config.limits(&shape))
    }
}

#[derive(Serialize)]
struct IkOutput {
    target: [f64; 3],
    plan: MovePlan,
    nominal_tip: [f64; 3],
    roundtrip_error: f64,
}

#[derive(Serialize)]
struct IkRow {
    index: usize,
    target: [f64; 3],
    status: &'static str,
    joints: Option<JointConfig>,
    roundtrip_error: Option<f64>,
    message: Option<String>,
}

fn ik(ctx: &Ctx, a: &IkArgs) -> Result<()> {
    let planner = planner(ctx, !a.no_compensation)?;
    if let Some(text) = &a.target {
        let target = Point3::from(triple(text, "target")?);
        let current = match &a.current {
            Some(c) => joints(c)?,
            None => JointConfig::home(),
        };
        let plan = planner.plan_move(&current, &target)?;
        let tip = planner.tip(&plan.nominal)?;
        return ctx.emit(
            "ik.json",
            &json(&IkOutput {
                target: target.into(),
                nominal_tip: tip.into(),
                roundtrip_error: (tip - target).norm(),
                plan,
            }),
        );
    }
    let path = a.targets.as_ref().expect("clap requires --target or --targets");
    let targets = read_points(path)?;
    let solved = planner.solve_batch(&targets, Execution::default());
    let mut rows = Vec::with_capacity(targets.len());
    for (i, (p, r)) in targets.iter().zip(solved).enumerate() {
        let row = match r {
            Ok(q) => {
                let tip = planner.tip(&q)?;
                IkRow {
                    index: i,
                    target: (*p).into(),
                    status: "ok",
                    joints: Some(q),
                    roundtrip_error: Some((tip - p).norm()),
                    message: None,
                }
            }
            Err(e) => IkRow {
                index: i,
                target: (*p).into(),
                status: e.code(),
                joints: None,
                roundtrip_error: None,
                message: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    match ctx.format(Format::Csv) {
        Format::Json => ctx.emit("ik_batch.json", &json(&rows)),
        _ => {
            let opt = |v: Option<f64>| v.map(f).unwrap_or_default();
            let table = csv_string(
                &["index", "x", "y", "z", "status", "d", "s", "theta_rad", "roundtrip_error"],
                rows.iter().map(|r| {
                    vec![
                        r.index.to_string(),
                        f(r.target[0]),
                        f(r.target[1]),
                        f(r.target[2]),
                        r.status.to_string(),
                        opt(r.joints.map(|q| q.d)),
                        opt(r.joints.map(|q| q.s)),
                        opt(r.joints.map(|q| q.theta)),
                        r.roundtrip_error.map(|e| format!("{e:.3e}")).unwrap_or_default(),
                    ]
                }),
            )?;
            ctx.emit("ik_batch.csv", &table)
        }
    }
}

#[derive(Serialize)]
struct TorsionRow {
    s: f64,
    theta_command_deg: f64,
    force: f64,
    torque: f64,
    resultant_location: f64,
    phi: f64,
    /// Twist actually lost on a rotation of `theta_command` from rest.
    wind_up: f64,
}

fn torsion(ctx: &Ctx, a: &TorsionArgs) -> Result<()> {
    let shape = ctx.config.shape()?;
    let model = ctx.config.torsion_model(&shape);
    let s_max = model.s_max();
    let ns = a.s_steps.max(1);
    let nt = a.theta_steps.max(1);
    let s_values: Vec<f64> = (0..=ns).map(|i| s_max * i as f64 / ns as f64).collect();
    let per_s = Execution::default().map(&s_values, |&s| -> Result<(f64, f64, f64, f64)> {
        let sf = model.straightening_force(s)?;
        Ok((sf.force, model.resistive_torque(s)?, sf.resultant_location, model.deflection(s)?))
    });
    let mut rows = Vec::new();
    for (s, r) in s_values.iter().zip(per_s) {
        let (force, torque, loc, phi) = r?;
        for j in 0..=nt {
            let th = a.theta_max_deg * j as f64 / nt as f64;
            rows.push(TorsionRow {
                s: *s,
                theta_command_deg: th,
                force,
                torque,
                resultant_location: loc,
                phi,
                wind_up: wind_up(phi, th.to_radians()),
            });
        }
    }
    match ctx.format(Format::Csv) {
        Format::Json => ctx.emit("torsion_grid.json", &json(&rows)),
        _ => {
            let table = csv_string(
                &["s_mm", "theta_command_deg", "force_n", "torque_nmm", "resultant_mm", "phi_rad", "wind_up_rad"],
                rows.iter().map(|r| {
                    vec![
                        f(r.s),
                        f(r.theta_command_deg),
                        format!("{:.8}", r.force),
                        format!("{:.8}", r.torque),
                        f(r.resultant_location),
                        format!("{:.8}", r.phi),
                        format!("{:.8}", r.wind_up),
                    ]
                }),
            )?;
            ctx.emit("torsion_grid.csv", &table)
        }
    }
}

#[derive(Serialize)]
struct DesignReport {
    pair: TubePair,
    clearance: f64,
    kappa_limit: f64,
    max_precurvature: f64,
    min_roc: f64,
    shape_bending: BendingReport,
}

fn table_markdown(lines: &[TableLine]) -> String {
    let mut s = String::from(
        "| tube | material | E (GPa) | OD (mm) | ID (mm) | RoC (mm) | LoC (mm) | stiffness (N/rad) | F_bend (N) | F/k |\n\
         |---|---|---|---|---|---|---|---|---|---|\n",
    );
    for l in lines {
        let roc = l.roc.map(|r| format!("{r:.2}")).unwrap_or_else(|| "variable".into());
        s.push_str(&format!(
            "| {} | {} | {} | {:.2} | {:.2} | {} | {:.2} | {:.4} | {:.4} | {:.4} |\n",
            l.label, l.material, l.elastic_modulus_gpa, l.od, l.id, roc, l.loc, l.stiffness, l.f_bend, l.f_over_k
        ));
    }
    s
}

fn design(ctx: &Ctx, a: &DesignArgs) -> Result<()> {
    let pair = match &a.pair {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let pair: TubePair = serde_json::from_str(&text).map_err(|e| parse_err(path, e))?;
            pair.validate()?;
            pair
        }
        None => ctx.config.pair(),
    };
    let shape = ctx.config.shape()?;
    if a.table1 {
        let lines = comparison_table(&comparison_rows())?;
        return match ctx.format(Format::Csv) {
            Format::Json => ctx.emit("table1.json", &json(&lines)),
            Format::Markdown => ctx.emit("table1.md", &table_markdown(&lines)),
            Format::Csv => {
                let table = csv_string(
                    &[
                        "tube", "material", "E_gpa", "od_mm", "id_mm", "roc_mm", "loc_mm", "stiffness_n_per_rad",
                        "f_bend_n", "f_over_k", "loc_over_roc",
                    ],
                    lines.iter().map(|l| {
                        vec![
                            l.label.clone(),
                            l.material.clone(),
                            l.elastic_modulus_gpa.to_string(),
                            l.od.to_string(),
                            l.id.to_string(),
                            l.roc.map(|r| r.to_string()).unwrap_or_default(),
                            f(l.loc),
                            f(l.stiffness),
                            f(l.f_bend),
                            f(l.f_over_k),
                            l.roc.map(|r| f(l.loc / r)).unwrap_or_default(),
                        ]
                    }),
                )?;
                ctx.emit("table1.csv", &table)
            }
        };
    }
    let s_max = ctx.config.limits(&shape).s_max;
    let kl = match a.kappa_limit {
        Some(k) => k,
        None => kappa_limit(&pair, s_max)?,
    };
    if let Some(roc) = a.check_roc {
        let check = check_roc(&pair.inner_material, pair.inner.r_od, roc, kl)?;
        return ctx.emit("roc_check.json", &json(&check));
    }
    let kmax = max_precurvature(&pair.inner_material, pair.inner.r_od, kl)?;
    let report = DesignReport {
        clearance: pair.clearance(),
        kappa_limit: kl,
        max_precurvature: kmax,
        min_roc: 1.0 / kmax,
        shape_bending: bending_report(
            pair.inner.r_od,
            pair.inner.r_id,
            &pair.inner_material,
            &BendGeometry::Shape { shape },
        )?,
        pair,
    };
    ctx.emit("design.json", &json(&report))
}

#[derive(Serialize)]
struct MotorSummary {
    axis: &'static str,
    setpoint_deg: f64,
    setpoint_counts: i64,
    mode: GainMode,
    final_position: i64,
    final_error: f64,
    first_settle: Option<f64>,
    settled: bool,
    oscillation: bool,
    late_reversals: usize,
    limit_cycle: bool,
    elapsed: f64,
}

fn motor_sim(ctx: &Ctx, a: &MotorSimArgs) -> Result<()> {
    let (axis, label) = match a.axis {
        Axis::Rot => (&ctx.config.rotation, "rot"),
        Axis::Trans => (&ctx.config.translation, "trans"),
    };
    let mode = match a.mode {
        Mode::Scheduled => GainMode::Scheduled,
        Mode::Constant => GainMode::Constant {
            kp: a.kp.unwrap_or(axis.controller.kp_const),
        },
    };
    let counts = (a.setpoint_deg / 360.0 * axis.motor.counts_per_rev).round() as i64;
    let opts = SimOptions {
        dt: a.dt,
        t_max: a.t_max,
        mode,
        ..SimOptions::default()
    };
    let result = simulate_move_with(counts, &axis.motor, &axis.controller, &opts)?;
    let mut buf = Vec::new();
    write_trace_csv(&result, axis.motor.counts_per_rev, &mut buf)
        .map_err(|e| CtrError::InvalidInput(format!("csv output: {e}")))?;
    let trace = String::from_utf8(buf).expect("csv is utf-8");
    let summary = MotorSummary {
        axis: label,
        setpoint_deg: a.setpoint_deg,
        setpoint_counts: counts,
        mode,
        final_position: result.final_position,
        final_error: result.final_error,
        first_settle: result.first_settle,
        settled: result.settled,
        oscillation: result.oscillation,
        late_reversals: result.late_reversals,
        limit_cycle: result.limit_cycle,
        elapsed: result.elapsed,
    };
    match ctx.format(Format::Csv) {
        Format::Json => ctx.emit("motor_summary.json", &json(&summary)),
        _ => {
            ctx.emit("motor_trace.csv", &trace)?;
            ctx.emit_file("motor_summary.json", &json(&summary))
        }
    }
}

fn evacuate(ctx: &Ctx, a: &EvacuateArgs) -> Result<()> {
    let cfg = &ctx.config;
    let scenario = &cfg.evacuation.scenario;
    let mut phantom = match &a.phantom {
        Some(path) => load_phantom(path)?,
        None => scenario.phantom()?,
    };
    if let Some(path) = &a.export_phantom {
        save_phantom(&phantom, path)?;
    }
    let mut policy = cfg.evacuation.policy;
    if a.unlimited {
        policy.stop_ml = 0.0;
    } else if let Some(stop) = a.stop_ml {
        policy.stop_ml = stop;
    }
    let true_frame = scenario.true_frame();
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let registration =
        simulate_registration(&scenario.fiducials(), &true_frame, scenario.fiducial_noise_mm, &mut rng)?;
    let setup = EvacuationSetup {
        planner: planner(ctx, !a.no_torsion)?,
        plant: if a.no_torsion { None } else { Some(cfg.torsion_plant()?) },
        motors: a.motors.then(|| cfg.motor_stage()),
        true_frame,
        registration,
        policy,
    };
    let report = run_evacuation(&mut phantom, &setup)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    let log_csv = String::from_utf8(buf).expect("csv is utf-8");
    match ctx.format(Format::Json) {
        Format::Csv => ctx.emit("evacuation_targets.csv", &log_csv),
        _ => {
            ctx.emit("evacuation_report.json", &json(&report))?;
            ctx.emit_file("evacuation_targets.csv", &log_csv)
        }
    }
}

fn registration(ctx: &Ctx, a: &RegisterArgs) -> Result<()> {
    if let Some(trials) = a.simulate {
        let stats = registration_trials(trials, a.fiducials, a.noise, ctx.seed, Execution::default())?;
        return ctx.emit("registration_trials.json", &json(&stats));
    }
    let (image, robot) = match (&a.image, &a.robot) {
        (Some(i), Some(r)) => (read_points(i)?, read_points(r)?),
        _ => return Err(CtrError::InvalidInput("register needs --image and --robot, or --simulate".into())),
    };
    ctx.emit("registration.json", &json(&register(&image, &robot)?))
}
