//! Quasi-static time loop: profiles drive injections, power flow runs every
//! simulation step, the control update runs every control period using the
//! previous step's converged voltages, and per-step records accumulate into
//! scenario results.

use thiserror::Error;

use crate::coordination::{
    dynamic_weights, fixed_weights, has_globally_reachable_node, normalize, CoefficientMatrix,
    CommTopology, ControlMethod, CoordinationError,
};
use crate::feeder_model::FeederModel;
use crate::inverter_agent::{
    available_reactive, gradient, volt_var, InverterAgent, InverterError, VoltVarParams,
};
use crate::power_flow::{losses, solve, InjectionSet, PowerFlowError};
use crate::{num, Scalar};

#[derive(Debug, Error)]
pub enum SimulationError<T: Scalar> {
    #[error("power flow failed to converge at step {step} (t = {time} s); partial results retained")]
    NonConvergence {
        step: usize,
        time: u32,
        partial: Box<ScenarioResults<T>>,
    },
    #[error("agent `{agent}` references bus `{bus}` which is not in the feeder")]
    AgentBusMissing { agent: String, bus: String },
    #[error("profiles do not cover the simulation window")]
    ProfileCoverage,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("topology size {topology} does not match agent count {agents}")]
    TopologySize { topology: usize, agents: usize },
    #[error(transparent)]
    Coordination(#[from] CoordinationError),
    #[error(transparent)]
    Inverter(#[from] InverterError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error("runs are not comparable: {0}")]
    MismatchedRuns(String),
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile syntax error at line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("timestamps must be strictly increasing (line {line})")]
    NonMonotonic { line: usize },
    #[error("negative value at line {line}")]
    Negative { line: usize },
    #[error("profile is empty")]
    Empty,
}

/// Irradiance and load-multiplier time series, sampled with zero-order hold.
#[derive(Debug, Clone)]
pub struct Profiles<T> {
    pub times_s: Vec<u32>,
    pub ghi_w_m2: Vec<T>,
    pub load_mult: Vec<T>,
}

impl<T: Scalar> Profiles<T> {
    /// Parses CSV with header `time,ghi,load_mult`; time is seconds-of-day or
    /// HH:MM.
    pub fn parse(text: &str) -> Result<Self, ProfileError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(ProfileError::Empty)?;
        let header: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        if header != ["time", "ghi", "load_mult"] {
            return Err(ProfileError::Syntax {
                line: 1,
                msg: "expected header `time,ghi,load_mult`".into(),
            });
        }
        let mut times = Vec::new();
        let mut ghi = Vec::new();
        let mut mult = Vec::new();
        for (i, raw) in lines {
            let line = i + 1;
            let row = raw.trim();
            if row.is_empty() {
                continue;
            }
            let cols: Vec<&str> = row.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(ProfileError::Syntax {
                    line,
                    msg: format!("expected 3 columns, found {}", cols.len()),
                });
            }
            let t = parse_time(cols[0]).ok_or_else(|| ProfileError::Syntax {
                line,
                msg: format!("bad time `{}`", cols[0]),
            })?;
            if let Some(&last) = times.last() {
                if t <= last {
                    return Err(ProfileError::NonMonotonic { line });
                }
            }
            let g: f64 = cols[1].parse().map_err(|_| ProfileError::Syntax {
                line,
                msg: format!("bad ghi `{}`", cols[1]),
            })?;
            let m: f64 = cols[2].parse().map_err(|_| ProfileError::Syntax {
                line,
                msg: format!("bad load_mult `{}`", cols[2]),
            })?;
            if g < 0.0 || m < 0.0 {
                return Err(ProfileError::Negative { line });
            }
            times.push(t);
            ghi.push(num::<T>(g));
            mult.push(num::<T>(m));
        }
        if times.is_empty() {
            return Err(ProfileError::Empty);
        }
        Ok(Profiles {
            times_s: times,
            ghi_w_m2: ghi,
            load_mult: mult,
        })
    }

    /// Zero-order-hold sample at t seconds-of-day.
    pub fn sample(&self, t: u32) -> Option<(T, T)> {
        let k = self.times_s.partition_point(|&ts| ts <= t);
        if k == 0 {
            return None;
        }
        Some((self.ghi_w_m2[k - 1], self.load_mult[k - 1]))
    }

    pub fn covers(&self, start: u32, end: u32) -> bool {
        match (self.times_s.first(), self.times_s.last()) {
            (Some(&first), Some(&last)) => first <= start && last >= end,
            _ => false,
        }
    }
}

/// Parses `HH:MM` or plain seconds-of-day.
pub fn parse_time(s: &str) -> Option<u32> {
    if let Some((h, m)) = s.split_once(':') {
        let h: u32 = h.parse().ok()?;
        let m: u32 = m.parse().ok()?;
        if h > 24 || m > 59 {
            return None;
        }
        Some(h * 3600 + m * 60)
    } else {
        s.parse().ok()
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig<T> {
    pub window_start_s: u32,
    pub window_end_s: u32,
    pub sim_step_s: u32,
    pub control_period_s: u32,
    pub method: ControlMethod,
    pub pf_tolerance: T,
    pub pf_max_iterations: usize,
    pub slack_voltage: T,
    pub volt_var: VoltVarParams<T>,
    /// Var-priority mode: reactive dispatch may curtail active power.
    pub var_priority: bool,
}

impl<T: Scalar> SimConfig<T> {
    pub fn validate(&self) -> Result<(), SimulationError<T>> {
        if self.window_end_s <= self.window_start_s {
            return Err(SimulationError::Config("window_end must be after window_start".into()));
        }
        if self.sim_step_s == 0 {
            return Err(SimulationError::Config("sim_step must be positive".into()));
        }
        if self.control_period_s == 0 || self.control_period_s % self.sim_step_s != 0 {
            return Err(SimulationError::Config(
                "control_period must be a positive multiple of sim_step".into(),
            ));
        }
        if self.pf_tolerance <= T::zero() {
            return Err(SimulationError::Config("pf_tolerance must be positive".into()));
        }
        self.volt_var
            .validate()
            .map_err(|e| SimulationError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentStep<T> {
    pub v_pu: T,
    pub p_out_kw: T,
    pub q_out_kvar: T,
    pub alpha: T,
    pub f_v: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<T> {
    pub time_s: u32,
    pub agents: Vec<AgentStep<T>>,
    pub loss_p_kw: T,
    pub loss_q_kvar: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSummary<T> {
    pub id: String,
    /// Delivered AC energy over the window.
    pub delivered_kwh: T,
    pub mean_abs_alpha: T,
    /// Time integral of |q_out|.
    pub abs_q_kvarh: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary<T> {
    /// (sum over steps of F_v)^2.
    pub fv_sum_then_square: T,
    /// Sum over steps of F_v^2.
    pub fv_square_per_step_sum: T,
    pub mean_loss_p_kw: T,
    pub mean_loss_q_kvar: T,
    pub agents: Vec<AgentSummary<T>>,
}

#[derive(Debug, Clone)]
pub struct ScenarioResults<T> {
    pub method: ControlMethod,
    pub agent_ids: Vec<String>,
    pub sim_step_s: u32,
    pub window: (u32, u32),
    pub steps: Vec<StepRecord<T>>,
    pub summary: Summary<T>,
    pub complete: bool,
}

impl<T: Scalar> ScenarioResults<T> {
    /// Recomputes the summary from the step records (self-consistency check).
    pub fn recompute_summary(&self) -> Summary<T> {
        compute_summary(&self.agent_ids, &self.steps, self.sim_step_s)
    }
}

/// Per-agent objective terms f_v = (1 - V)^2 / 2 and their sum.
pub fn objective_terms<T: Scalar>(voltages: &[T]) -> (Vec<T>, T) {
    let half = num::<T>(0.5);
    let terms: Vec<T> = voltages
        .iter()
        .map(|&v| {
            let d = T::one() - v;
            half * d * d
        })
        .collect();
    let sum = terms.iter().copied().sum();
    (terms, sum)
}

fn compute_summary<T: Scalar>(
    agent_ids: &[String],
    steps: &[StepRecord<T>],
    sim_step_s: u32,
) -> Summary<T> {
    let n_steps = steps.len();
    let hours = num::<T>(sim_step_s as f64 / 3600.0);
    let mut fv_sum = T::zero();
    let mut fv_sq_sum = T::zero();
    let mut loss_p = T::zero();
    let mut loss_q = T::zero();
    let mut delivered = vec![T::zero(); agent_ids.len()];
    let mut abs_alpha = vec![T::zero(); agent_ids.len()];
    let mut abs_q = vec![T::zero(); agent_ids.len()];
    for step in steps {
        let fv: T = step.agents.iter().map(|a| a.f_v).sum();
        fv_sum = fv_sum + fv;
        fv_sq_sum = fv_sq_sum + fv * fv;
        loss_p = loss_p + step.loss_p_kw;
        loss_q = loss_q + step.loss_q_kvar;
        for (i, a) in step.agents.iter().enumerate() {
            delivered[i] = delivered[i] + a.p_out_kw * hours;
            abs_alpha[i] = abs_alpha[i] + a.alpha.abs();
            abs_q[i] = abs_q[i] + a.q_out_kvar.abs() * hours;
        }
    }
    let denom = if n_steps == 0 {
        T::one()
    } else {
        num::<T>(n_steps as f64)
    };
    Summary {
        fv_sum_then_square: fv_sum * fv_sum,
        fv_square_per_step_sum: fv_sq_sum,
        mean_loss_p_kw: loss_p / denom,
        mean_loss_q_kvar: loss_q / denom,
        agents: agent_ids
            .iter()
            .enumerate()
            .map(|(i, id)| AgentSummary {
                id: id.clone(),
                delivered_kwh: delivered[i],
                mean_abs_alpha: abs_alpha[i] / denom,
                abs_q_kvarh: abs_q[i],
            })
            .collect(),
    }
}

/// Runs one scenario under one control method. Deterministic given inputs.
pub fn run_scenario<T: Scalar>(
    feeder: &FeederModel<T>,
    agents: &[InverterAgent<T>],
    topology: &CommTopology,
    profiles: &Profiles<T>,
    config: &SimConfig<T>,
) -> Result<ScenarioResults<T>, SimulationError<T>> {
    config.validate()?;
    if topology.size() != agents.len() {
        return Err(SimulationError::TopologySize {
            topology: topology.size(),
            agents: agents.len(),
        });
    }
    if !profiles.covers(config.window_start_s, config.window_end_s) {
        return Err(SimulationError::ProfileCoverage);
    }
    if config.method.uses_communication() && !has_globally_reachable_node(topology) {
        return Err(SimulationError::Coordination(
            CoordinationError::NotReachable,
        ));
    }
    let nf = feeder.to_per_unit();
    let s_base = nf.s_base_kva;
    let m = agents.len();

    let mut agent_bus = Vec::with_capacity(m);
    let mut b_mm = Vec::with_capacity(m);
    for a in agents {
        let k = nf
            .bus_index(&a.bus)
            .ok_or_else(|| SimulationError::AgentBusMissing {
                agent: a.id.clone(),
                bus: a.bus.clone(),
            })?;
        agent_bus.push(k);
        b_mm.push(nf.self_susceptance(k));
    }
    let ratings: Vec<T> = agents.iter().map(|a| a.rating_s_kva).collect();
    let betas: Vec<T> = agents.iter().map(|a| a.beta).collect();
    let agent_ids: Vec<String> = agents.iter().map(|a| a.id.clone()).collect();

    let fixed_d: Option<CoefficientMatrix<T>> =
        if config.method == ControlMethod::AdaptiveFixedWeights {
            Some(normalize(&fixed_weights::<T>(topology), topology)?)
        } else {
            None
        };

    let mut alphas: Vec<T> = agents.iter().map(|a| a.alpha).collect();
    let mut q_cmd_kvar: Vec<T> = alphas
        .iter()
        .zip(&ratings)
        .map(|(&a, &s)| a * s)
        .collect();
    let mut q_out_kvar: Vec<T> = q_cmd_kvar.clone();

    let partial = |steps: Vec<StepRecord<T>>| ScenarioResults {
        method: config.method,
        agent_ids: agent_ids.clone(),
        sim_step_s: config.sim_step_s,
        window: (config.window_start_s, config.window_end_s),
        summary: compute_summary(&agent_ids, &steps, config.sim_step_s),
        steps,
        complete: false,
    };

    // Seed the telemetry: one solve at window start with the initial dispatch,
    // standing in for the "previous step" of the first control update.
    let mut last_v: Vec<T> = {
        let (ghi, mult) = profiles
            .sample(config.window_start_s)
            .ok_or(SimulationError::ProfileCoverage)?;
        let mut inj = InjectionSet::new();
        for (i, a) in agents.iter().enumerate() {
            let d = dispatch(a, q_cmd_kvar[i], a.available_power(ghi), config.var_priority);
            inj.add(&a.bus, d.p_out_kw / s_base, d.q_out_kvar / s_base);
        }
        let sol = solve(
            &nf.with_load_multiplier(mult),
            &inj,
            config.slack_voltage,
            config.pf_tolerance,
            config.pf_max_iterations,
        )?;
        if !sol.converged {
            return Err(SimulationError::NonConvergence {
                step: 0,
                time: config.window_start_s,
                partial: Box::new(partial(Vec::new())),
            });
        }
        agent_bus.iter().map(|&k| sol.magnitude(k)).collect()
    };

    let mut steps: Vec<StepRecord<T>> = Vec::new();
    let mut t = config.window_start_s;
    let mut step_index = 0usize;
    while t < config.window_end_s {
        let (ghi, mult) = profiles.sample(t).ok_or(SimulationError::ProfileCoverage)?;
        let p_avail_kw: Vec<T> = agents.iter().map(|a| a.available_power(ghi)).collect();
        let q_avail_kvar: Vec<T> = agents
            .iter()
            .zip(&p_avail_kw)
            .map(|(a, &p)| available_reactive(a.rating_s_kva, p))
            .collect::<Result<_, _>>()?;

        if (t - config.window_start_s) % config.control_period_s == 0 {
            let grads: Vec<Option<T>> = (0..m)
                .map(|i| {
                    gradient(
                        q_avail_kvar[i] / s_base,
                        last_v[i],
                        q_out_kvar[i] / s_base,
                        b_mm[i],
                    )
                    .ok()
                })
                .collect();
            let vv_out: Vec<T> = (0..m)
                .map(|i| volt_var(last_v[i], &config.volt_var, q_avail_kvar[i]))
                .collect::<Result<_, _>>()?;
            let limits: Vec<T> = agents
                .iter()
                .zip(&q_avail_kvar)
                .map(|(a, &q)| a.alpha_limit(q, config.var_priority))
                .collect();
            let dyn_d: CoefficientMatrix<T>;
            let d = match config.method {
                ControlMethod::AdaptiveFixedWeights => fixed_d.as_ref(),
                ControlMethod::AdaptiveDynamicWeights => {
                    let w = dynamic_weights(topology, &q_avail_kvar)?;
                    dyn_d = normalize(&w, topology)?;
                    Some(&dyn_d)
                }
                _ => None,
            };
            alphas = crate::coordination::update_estimates(
                config.method,
                &alphas,
                d,
                &betas,
                &grads,
                &vv_out,
                &ratings,
                &limits,
            )?;
            for i in 0..m {
                q_cmd_kvar[i] = alphas[i] * ratings[i];
            }
        }

        let mut inj = InjectionSet::new();
        let mut dispatched = Vec::with_capacity(m);
        for (i, a) in agents.iter().enumerate() {
            let d = dispatch(a, q_cmd_kvar[i], p_avail_kw[i], config.var_priority);
            inj.add(&a.bus, d.p_out_kw / s_base, d.q_out_kvar / s_base);
            dispatched.push(d);
        }

        let sol = solve(
            &nf.with_load_multiplier(mult),
            &inj,
            config.slack_voltage,
            config.pf_tolerance,
            config.pf_max_iterations,
        )?;
        if !sol.converged {
            return Err(SimulationError::NonConvergence {
                step: step_index,
                time: t,
                partial: Box::new(partial(steps)),
            });
        }
        let loss = losses(&nf, &sol)?;

        let v_now: Vec<T> = agent_bus.iter().map(|&k| sol.magnitude(k)).collect();
        let (f_terms, _) = objective_terms(&v_now);
        let record = StepRecord {
            time_s: t,
            agents: (0..m)
                .map(|i| AgentStep {
                    v_pu: v_now[i],
                    p_out_kw: dispatched[i].p_out_kw,
                    q_out_kvar: dispatched[i].q_out_kvar,
                    alpha: dispatched[i].q_out_kvar / ratings[i],
                    f_v: f_terms[i],
                })
                .collect(),
            loss_p_kw: loss.total_active_loss * s_base,
            loss_q_kvar: loss.total_reactive_loss * s_base,
        };
        for i in 0..m {
            q_out_kvar[i] = dispatched[i].q_out_kvar;
        }
        last_v = v_now;
        steps.push(record);
        t += config.sim_step_s;
        step_index += 1;
    }

    Ok(ScenarioResults {
        method: config.method,
        agent_ids: agent_ids.clone(),
        sim_step_s: config.sim_step_s,
        window: (config.window_start_s, config.window_end_s),
        summary: compute_summary(&agent_ids, &steps, config.sim_step_s),
        steps,
        complete: true,
    })
}

fn dispatch<T: Scalar>(
    agent: &InverterAgent<T>,
    q_cmd_kvar: T,
    p_avail_kw: T,
    var_priority: bool,
) -> crate::inverter_agent::DispatchResult<T> {
    if var_priority {
        agent.dispatch(q_cmd_kvar, p_avail_kw)
    } else {
        agent.dispatch_headroom_limited(q_cmd_kvar, p_avail_kw)
    }
}

/// Per-agent active-power curtailment percentage of a method run relative to
/// a baseline run, over delivered AC energy. `None` where the baseline
/// delivered no energy.
pub fn curtailment_report<T: Scalar>(
    results: &ScenarioResults<T>,
    baseline: &ScenarioResults<T>,
) -> Result<Vec<Option<T>>, SimulationError<T>> {
    if results.agent_ids != baseline.agent_ids {
        return Err(SimulationError::MismatchedRuns("different agents".into()));
    }
    if results.window != baseline.window || results.sim_step_s != baseline.sim_step_s {
        return Err(SimulationError::MismatchedRuns("different windows".into()));
    }
    let hundred = num::<T>(100.0);
    Ok(results
        .summary
        .agents
        .iter()
        .zip(&baseline.summary.agents)
        .map(|(run, base)| {
            if base.delivered_kwh <= T::zero() {
                None
            } else {
                Some(hundred * (base.delivered_kwh - run.delivered_kwh) / base.delivered_kwh)
            }
        })
        .collect())
}
