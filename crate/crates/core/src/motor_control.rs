//! Three-region variable-gain PID for the pneumatic motors, and a simulated
//! plant with transport delay, dead-band, first-order lag and encoder
//! quantization.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{CtrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    /// Region I half-width, counts.
    pub delta: f64,
    /// Region II/III boundary, counts.
    pub err_thresh: f64,
    /// Voltage that starts a stationary motor, V.
    pub v_start: f64,
    /// Voltage that keeps a moving motor out of the dead-band, V.
    pub v_deadband: f64,
    pub kp_const: f64,
    pub kd: f64,
    pub ki: f64,
    /// Full-scale output range, V.
    pub v_range: f64,
    pub resolution_bits: u32,
}

impl ControllerParams {
    /// Inner-tube rotation axis.
    pub fn rotational() -> Self {
        ControllerParams {
            delta: 11.0,
            err_thresh: 1000.0,
            v_start: 9.0,
            v_deadband: 3.5,
            kp_const: 11.5,
            kd: 4000.0,
            ki: 0.0,
            v_range: 20.0,
            resolution_bits: 16,
        }
    }

    /// Outer- and inner-tube translation axes.
    pub fn translational() -> Self {
        ControllerParams {
            v_start: 6.4,
            v_deadband: 3.0,
            kp_const: 9.8,
            ..Self::rotational()
        }
    }

    /// Volts per controller unit, `v_range / 2^bits`.
    pub fn scale(&self) -> f64 {
        self.v_range / f64::from(1u32 << self.resolution_bits.min(31))
    }

    /// The constant gain that meets the moving Region II voltage at `err_thresh`.
    pub fn matched_kp_const(&self) -> f64 {
        self.v_deadband / (self.err_thresh * self.scale())
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.delta > 0.0 && self.delta < self.err_thresh) {
            problems.push("0 < delta < err_thresh");
        }
        if !(self.v_deadband <= self.v_start && self.v_start <= 10.0 && self.v_deadband > 0.0) {
            problems.push("0 < v_deadband <= v_start <= 10");
        }
        if !(self.kp_const > 0.0 && self.kd >= 0.0 && self.ki >= 0.0) {
            problems.push("gains must be non-negative, kp_const positive");
        }
        if !(self.v_range > 0.0 && (1..=31).contains(&self.resolution_bits)) {
            problems.push("v_range > 0 and 1 <= resolution_bits <= 31");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CtrError::InvalidInput(format!(
                "controller parameters violate: {}",
                problems.join("; ")
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    I,
    II,
    III,
}

impl Region {
    pub fn of(err: f64, params: &ControllerParams) -> Region {
        let e = err.abs();
        if e <= params.delta {
            Region::I
        } else if e <= params.err_thresh {
            Region::II
        } else {
            Region::III
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Region::I => "I",
            Region::II => "II",
            Region::III => "III",
        }
    }
}

/// Proportional gain for error `err` (counts) and shaft rate `omega`.
pub fn gain_schedule(err: f64, omega: f64, params: &ControllerParams) -> f64 {
    match Region::of(err, params) {
        Region::I => 0.0,
        Region::II => {
            let v = if omega == 0.0 {
                params.v_start
            } else {
                params.v_deadband
            };
            v / (err.abs() * params.scale())
        }
        Region::III => params.kp_const,
    }
}

/// `(Kp err + Kd d_err) * scale`, saturated to half the output range.
pub fn command_voltage(err: f64, d_err: f64, kp: f64, params: &ControllerParams) -> f64 {
    let limit = 0.5 * params.v_range;
    ((kp * err + params.kd * d_err) * params.scale()).clamp(-limit, limit)
}

/// Bipolar command (±10 V) to the 0–10 V proportional valve; 5 V is closed.
pub fn differential_map(v_bipolar: f64) -> Result<f64> {
    if !(-10.0..=10.0).contains(&v_bipolar) {
        return Err(CtrError::OutOfDomain {
            what: "v_bipolar",
            value: v_bipolar,
            lo: -10.0,
            hi: 10.0,
        });
    }
    Ok(v_bipolar / 2.0 + 5.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorPlant {
    /// Turbine speed with the valve fully open, rpm.
    pub nominal_speed: f64,
    pub gear_ratio: f64,
    /// Output-shaft encoder counts per revolution.
    pub counts_per_rev: f64,
    /// Pneumatic line delay, s.
    pub transport_delay: f64,
    /// Valve offset from center below which the motor does not turn, V.
    pub plant_deadband: f64,
    /// Spin-up/down time constant, s.
    pub time_constant: f64,
    pub valve_center: f64,
}

impl MotorPlant {
    /// Plant whose dead-band sits just under the controller's moving voltage,
    /// halfway between it and the next 0.1 V step below.
    pub fn for_controller(params: &ControllerParams, gear_ratio: f64) -> Self {
        MotorPlant {
            nominal_speed: 11_000.0,
            gear_ratio,
            counts_per_rev: 4000.0,
            transport_delay: 0.352,
            plant_deadband: (params.v_deadband - 0.05) / 2.0,
            time_constant: 0.05,
            valve_center: 5.0,
        }
    }

    pub fn rotational() -> Self {
        Self::for_controller(&ControllerParams::rotational(), 400.0)
    }

    pub fn translational() -> Self {
        Self::for_controller(&ControllerParams::translational(), 100.0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.nominal_speed,
            self.gear_ratio,
            self.counts_per_rev,
            self.time_constant,
            self.valve_center,
        ]
        .iter()
        .all(|v| *v > 0.0 && v.is_finite());
        if !positive || self.transport_delay < 0.0 || self.plant_deadband < 0.0 {
            return Err(CtrError::InvalidInput("motor plant parameters must be positive".into()));
        }
        if self.plant_deadband >= self.valve_center {
            return Err(CtrError::InvalidInput(
                "plant dead-band must be below the valve half-range".into(),
            ));
        }
        Ok(())
    }

    /// Output-shaft speed with the valve fully open, counts/s.
    pub fn max_rate(&self) -> f64 {
        self.nominal_speed / 60.0 / self.gear_ratio * self.counts_per_rev
    }

    /// Steady output-shaft rate for a valve offset from center, counts/s.
    pub fn steady_rate(&self, valve_offset: f64) -> f64 {
        let excess = (valve_offset.abs() - self.plant_deadband).max(0.0);
        valve_offset.signum() * excess / (self.valve_center - self.plant_deadband) * self.max_rate()
    }
}

/// How the proportional gain is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GainMode {
    Scheduled,
    /// Fixed gain at every error, including inside the tolerance band.
    Constant { kp: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Control period, s.
    pub dt: f64,
    pub t_max: f64,
    pub mode: GainMode,
    /// Encoder velocity sample period, s.
    pub omega_sample: f64,
    /// Velocity window length in samples.
    pub omega_window: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            dt: 1e-3,
            t_max: 300.0,
            mode: GainMode::Scheduled,
            omega_sample: 0.05,
            omega_window: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    /// Encoder position, counts.
    pub position: i64,
    pub err: f64,
    pub voltage: f64,
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveResult {
    pub setpoint: i64,
    pub trace: Vec<TraceSample>,
    pub final_position: i64,
    pub final_error: f64,
    /// First time the motor was at rest inside Region I.
    pub first_settle: Option<f64>,
    /// Ended inside Region I with the motor at rest.
    pub settled: bool,
    /// Left Region I after first coming to rest in it.
    pub oscillation: bool,
    /// Error sign changes with |err| beyond delta during the last half of the run.
    pub late_reversals: usize,
    /// Sustained oscillation about the setpoint: repeated reversals up to the end.
    pub limit_cycle: bool,
    pub elapsed: f64,
}

/// Runs the scheduled controller from rest at count 0 to `setpoint`.
pub fn simulate_move(
    setpoint: i64,
    plant: &MotorPlant,
    params: &ControllerParams,
    dt: f64,
    t_max: f64,
) -> Result<MoveResult> {
    simulate_move_with(
        setpoint,
        plant,
        params,
        &SimOptions {
            dt,
            t_max,
            ..SimOptions::default()
        },
    )
}

pub fn simulate_move_with(
    setpoint: i64,
    plant: &MotorPlant,
    params: &ControllerParams,
    opts: &SimOptions,
) -> Result<MoveResult> {
    params.validate()?;
    plant.validate()?;
    if !(opts.dt > 0.0 && opts.t_max > 0.0) {
        return Err(CtrError::InvalidInput("dt and t_max must be positive".into()));
    }
    if plant.transport_delay > 0.0 && opts.dt > plant.transport_delay / 10.0 {
        return Err(CtrError::InvalidInput(format!(
            "dt {} must not exceed a tenth of the transport delay",
            opts.dt
        )));
    }
    if opts.omega_window == 0 || opts.omega_sample < opts.dt {
        return Err(CtrError::InvalidInput("velocity window must span at least one step".into()));
    }
    let steps = (opts.t_max / opts.dt).ceil() as usize;
    let delay_steps = (plant.transport_delay / opts.dt).round() as usize;
    let per_sample = ((opts.omega_sample / opts.dt).round() as usize).max(1);
    let window_steps = per_sample * opts.omega_window;
    let tau = plant.time_constant;
    let alpha = 1.0 - (-opts.dt / tau).exp();

    let mut pipe: VecDeque<f64> = std::iter::repeat_n(0.0, delay_steps).collect();
    let mut history: VecDeque<i64> = VecDeque::with_capacity(window_steps + 1);
    let mut angle = 0.0f64;
    let mut rate = 0.0f64;
    let mut prev_err: Option<f64> = None;
    let mut trace = Vec::with_capacity(steps.min(1 << 20));
    let mut first_settle = None;
    let mut oscillation = false;
    let target = setpoint as f64;
    let mut t = 0.0;
    let mut position = 0i64;

    for k in 0..=steps {
        t = k as f64 * opts.dt;
        position = angle.floor() as i64;
        let err = target - position as f64;
        let region = Region::of(err, params);

        history.push_back(position);
        if history.len() > window_steps + 1 {
            history.pop_front();
        }
        // velocity is only known once a full window has been observed
        let omega = if history.len() == window_steps + 1 {
            let moved = (position - history[0]) as f64;
            if moved.abs() < 1.0 {
                0.0
            } else {
                moved / (window_steps as f64 * opts.dt)
            }
        } else {
            0.0
        };

        // settling means resting inside the band; passing through it does not count
        if region == Region::I && omega == 0.0 {
            first_settle.get_or_insert(t);
        } else if region != Region::I && first_settle.is_some() {
            oscillation = true;
        }

        let d_err = prev_err.map_or(0.0, |p| err - p);
        prev_err = Some(err);
        let voltage = match opts.mode {
            GainMode::Scheduled if region == Region::I => 0.0,
            GainMode::Scheduled => command_voltage(err, d_err, gain_schedule(err, omega, params), params),
            GainMode::Constant { kp } => command_voltage(err, d_err, kp, params),
        };
        trace.push(TraceSample {
            t,
            position,
            err,
            voltage,
            region,
        });

        // valve offset from center; the differential map halves the command
        let offset = differential_map(voltage)? - plant.valve_center;
        pipe.push_back(offset);
        let applied = pipe.pop_front().unwrap_or(offset);
        rate += alpha * (plant.steady_rate(applied) - rate);
        angle += rate * opts.dt;

        let quiescent = region == Region::I
            && rate.abs() < 1e-9
            && matches!(opts.mode, GainMode::Scheduled)
            && pipe.iter().all(|v| *v == 0.0);
        if quiescent {
            break;
        }
    }

    let final_error = target - position as f64;
    let settled = Region::of(final_error, params) == Region::I && rate.abs() < 1e-6;
    let late_reversals = count_reversals(&trace, t / 2.0, params.delta);
    let limit_cycle = !settled && late_reversals >= 2;
    Ok(MoveResult {
        setpoint,
        trace,
        final_position: position,
        final_error,
        first_settle,
        settled,
        oscillation,
        late_reversals,
        limit_cycle,
        elapsed: t,
    })
}

fn count_reversals(trace: &[TraceSample], from: f64, delta: f64) -> usize {
    let mut last_sign = 0.0;
    let mut count = 0;
    for s in trace.iter().filter(|s| s.t >= from && s.err.abs() > delta) {
        let sign = s.err.signum();
        if last_sign != 0.0 && sign != last_sign {
            count += 1;
        }
        last_sign = sign;
    }
    count
}

/// Writes `t, position_deg, err_counts, V, region` rows.
pub fn write_trace_csv<W: std::io::Write>(
    result: &MoveResult,
    counts_per_rev: f64,
    out: W,
) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "position_deg", "err_counts", "V", "region"])?;
    for s in &result.trace {
        w.write_record([
            format!("{:.4}", s.t),
            format!("{:.6}", s.position as f64 * 360.0 / counts_per_rev),
            format!("{}", s.err),
            format!("{:.6}", s.voltage),
            s.region.label().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
