//! Scenario files: sectioned structured text tying together a feeder, the
//! profiles, the inverter agents, the communication topology, and the
//! simulation configuration. Same record conventions as the feeder format.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::coordination::{build_topology, build_topology_lenient, CommTopology, ControlMethod};
use crate::feeder_model::{FeederError, FeederModel};
use crate::inverter_agent::{InverterAgent, InverterError, VoltVarParams};
use crate::simulation::{parse_time, ProfileError, Profiles, SimConfig};
use crate::{num, Scalar};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario syntax error at line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing required section or field: {0}")]
    Missing(String),
    #[error("could not read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("feeder: {0}")]
    Feeder(#[from] FeederError),
    #[error("profiles: {0}")]
    Profiles(#[from] ProfileError),
    #[error("agent: {0}")]
    Agent(#[from] InverterError),
    #[error("unknown control method `{0}`")]
    UnknownMethod(String),
    #[error("duplicate agent id `{0}`")]
    DuplicateAgent(String),
    #[error("topology references unknown agent `{0}`")]
    UnknownAgent(String),
}

#[derive(Debug, Clone)]
pub struct AgentSpec<T> {
    pub id: String,
    pub bus: String,
    pub rating_kva: T,
    pub dc_kw: T,
    pub beta: Option<T>,
}

/// Parsed scenario file, paths resolved against the scenario's directory.
#[derive(Debug, Clone)]
pub struct ScenarioFile<T> {
    pub feeder_path: PathBuf,
    pub profiles_path: PathBuf,
    pub agents: Vec<AgentSpec<T>>,
    pub links: Vec<(String, String)>,
    pub window_start_s: u32,
    pub window_end_s: u32,
    pub sim_step_s: u32,
    pub control_period_s: u32,
    pub pf_tolerance: T,
    pub pf_max_iterations: usize,
    pub slack_voltage: T,
    pub beta_default: T,
    pub var_priority: bool,
    pub method: Option<ControlMethod>,
    pub volt_var: VoltVarParams<T>,
}

impl<T: Scalar> ScenarioFile<T> {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        let mut feeder_path = None;
        let mut profiles_path = None;
        let mut agents: Vec<AgentSpec<T>> = Vec::new();
        let mut links = Vec::new();
        let mut window_start = None;
        let mut window_end = None;
        let mut sim_step = 10u32;
        let mut control_period = 20u32;
        let mut pf_tolerance = num::<T>(1e-8);
        let mut pf_max_iterations = 100usize;
        let mut slack_voltage = T::one();
        let mut beta_default = num::<T>(0.1);
        let mut var_priority = true;
        let mut method = None;
        let mut volt_var = VoltVarParams::<T>::default();

        let mut section: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if content.starts_with('[') && content.ends_with(']') {
                section = Some(content[1..content.len() - 1].trim().to_string());
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let syntax = |msg: String| ScenarioError::Syntax { line: lineno, msg };
            match section.as_deref() {
                Some("feeder") | Some("profiles") => {
                    if fields.len() != 2 || fields[0] != "path" {
                        return Err(syntax("expected `path <file>`".into()));
                    }
                    let p = base_dir.join(fields[1]);
                    if section.as_deref() == Some("feeder") {
                        feeder_path = Some(p);
                    } else {
                        profiles_path = Some(p);
                    }
                }
                Some("agents") => {
                    if fields.len() < 4 || fields.len() > 5 {
                        return Err(syntax(
                            "expected `<id> <bus> <rating_kva> <dc_kw> [beta]`".into(),
                        ));
                    }
                    agents.push(AgentSpec {
                        id: fields[0].to_string(),
                        bus: fields[1].to_string(),
                        rating_kva: parse_scalar(lineno, fields[2])?,
                        dc_kw: parse_scalar(lineno, fields[3])?,
                        beta: match fields.get(4) {
                            Some(f) => Some(parse_scalar(lineno, f)?),
                            None => None,
                        },
                    });
                }
                Some("topology") => {
                    if fields.len() != 2 {
                        return Err(syntax("expected `<agent_id> <agent_id>`".into()));
                    }
                    links.push((fields[0].to_string(), fields[1].to_string()));
                }
                Some("control") => {
                    if fields.len() != 2 {
                        return Err(syntax("expected `<key> <value>`".into()));
                    }
                    let (key, value) = (fields[0], fields[1]);
                    match key {
                        "window_start" => {
                            window_start = Some(
                                parse_time(value)
                                    .ok_or_else(|| syntax(format!("bad time `{value}`")))?,
                            )
                        }
                        "window_end" => {
                            window_end = Some(
                                parse_time(value)
                                    .ok_or_else(|| syntax(format!("bad time `{value}`")))?,
                            )
                        }
                        "sim_step" => sim_step = parse_int(lineno, value)?,
                        "control_period" => control_period = parse_int(lineno, value)?,
                        "pf_tolerance" => pf_tolerance = parse_scalar(lineno, value)?,
                        "pf_max_iterations" => {
                            pf_max_iterations = parse_int(lineno, value)? as usize
                        }
                        "slack_voltage" => slack_voltage = parse_scalar(lineno, value)?,
                        "beta" => beta_default = parse_scalar(lineno, value)?,
                        "var_priority" => {
                            var_priority = match value {
                                "true" => true,
                                "false" => false,
                                _ => return Err(syntax(format!("bad bool `{value}`"))),
                            }
                        }
                        "method" => {
                            method = Some(
                                ControlMethod::from_tag(value)
                                    .ok_or_else(|| ScenarioError::UnknownMethod(value.into()))?,
                            )
                        }
                        other => return Err(syntax(format!("unknown control key `{other}`"))),
                    }
                }
                Some("volt_var") => {
                    if fields.len() != 2 {
                        return Err(syntax("expected `<key> <value>`".into()));
                    }
                    let v = parse_scalar(lineno, fields[1])?;
                    match fields[0] {
                        "v_ref" => volt_var.v_ref = v,
                        "deadband_low" => volt_var.deadband_low = v,
                        "deadband_high" => volt_var.deadband_high = v,
                        "v_min" => volt_var.v_min = v,
                        "v_max" => volt_var.v_max = v,
                        other => return Err(syntax(format!("unknown volt_var key `{other}`"))),
                    }
                }
                Some(other) => {
                    return Err(syntax(format!("unknown section `[{other}]`")));
                }
                None => {
                    return Err(syntax("record before any section header".into()));
                }
            }
        }

        let mut ids = HashSet::new();
        for a in &agents {
            if !ids.insert(a.id.clone()) {
                return Err(ScenarioError::DuplicateAgent(a.id.clone()));
            }
        }
        for (a, b) in &links {
            for id in [a, b] {
                if !ids.contains(id) {
                    return Err(ScenarioError::UnknownAgent(id.clone()));
                }
            }
        }

        Ok(ScenarioFile {
            feeder_path: feeder_path.ok_or_else(|| ScenarioError::Missing("[feeder] path".into()))?,
            profiles_path: profiles_path
                .ok_or_else(|| ScenarioError::Missing("[profiles] path".into()))?,
            agents,
            links,
            window_start_s: window_start
                .ok_or_else(|| ScenarioError::Missing("control window_start".into()))?,
            window_end_s: window_end
                .ok_or_else(|| ScenarioError::Missing("control window_end".into()))?,
            sim_step_s: sim_step,
            control_period_s: control_period,
            pf_tolerance,
            pf_max_iterations,
            slack_voltage,
            beta_default,
            var_priority,
            method,
            volt_var,
        })
    }

    /// Index pairs of the topology links.
    pub fn link_indices(&self) -> Vec<(usize, usize)> {
        let idx = |id: &str| self.agents.iter().position(|a| a.id == id).unwrap();
        self.links
            .iter()
            .map(|(a, b)| (idx(a), idx(b)))
            .collect()
    }

    pub fn sim_config(&self, method: ControlMethod) -> SimConfig<T> {
        SimConfig {
            window_start_s: self.window_start_s,
            window_end_s: self.window_end_s,
            sim_step_s: self.sim_step_s,
            control_period_s: self.control_period_s,
            method,
            pf_tolerance: self.pf_tolerance,
            pf_max_iterations: self.pf_max_iterations,
            slack_voltage: self.slack_voltage,
            volt_var: self.volt_var,
            var_priority: self.var_priority,
        }
    }
}

/// Fully loaded scenario, ready to run.
#[derive(Debug)]
pub struct LoadedScenario<T> {
    pub file: ScenarioFile<T>,
    pub feeder: FeederModel<T>,
    pub profiles: Profiles<T>,
    pub agents: Vec<InverterAgent<T>>,
    pub topology: CommTopology,
}

/// Reads and fully resolves a scenario file and its referenced inputs.
pub fn load<T: Scalar>(path: &Path) -> Result<LoadedScenario<T>, ScenarioError> {
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|source| ScenarioError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
    let file = ScenarioFile::<T>::parse(&read(path)?, base_dir)?;
    let feeder = FeederModel::parse(&read(&file.feeder_path)?)?;
    let profiles = Profiles::parse(&read(&file.profiles_path)?)?;
    let agents = file
        .agents
        .iter()
        .map(|spec| {
            InverterAgent::new(
                &spec.id,
                &spec.bus,
                spec.rating_kva,
                spec.dc_kw,
                spec.beta.unwrap_or(file.beta_default),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    // Reachability is checked in `validate` and at run time for methods that
    // communicate; methods without communication tolerate a disconnected
    // topology, so loading stays lenient.
    let topology =
        build_topology_lenient(&file.link_indices(), agents.len().max(1)).map_err(|e| {
            ScenarioError::Syntax {
                line: 0,
                msg: e.to_string(),
            }
        })?;
    Ok(LoadedScenario {
        file,
        feeder,
        profiles,
        agents,
        topology,
    })
}

fn parse_scalar<T: Scalar>(line: usize, field: &str) -> Result<T, ScenarioError> {
    let v: f64 = field.parse().map_err(|_| ScenarioError::Syntax {
        line,
        msg: format!("not a number: `{field}`"),
    })?;
    T::from_f64(v).ok_or_else(|| ScenarioError::Syntax {
        line,
        msg: format!("value out of range: `{field}`"),
    })
}

fn parse_int(line: usize, field: &str) -> Result<u32, ScenarioError> {
    field.parse().map_err(|_| ScenarioError::Syntax {
        line,
        msg: format!("not an integer: `{field}`"),
    })
}

/// Result of one static validation check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &'static str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name,
            passed,
            detail: detail.into(),
        });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            )?;
        }
        Ok(())
    }
}

/// Full static validation without running: feeder radiality, topology
/// reachability, profile coverage, and cross-references.
pub fn validate<T: Scalar>(path: &Path) -> ValidationReport {
    let mut report = ValidationReport::default();
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            report.push("scenario_readable", false, e.to_string());
            return report;
        }
    };
    report.push("scenario_readable", true, path.display().to_string());
    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
    let file = match ScenarioFile::<T>::parse(&text, base_dir) {
        Ok(f) => {
            report.push("scenario_syntax", true, "parsed");
            f
        }
        Err(e) => {
            report.push("scenario_syntax", false, e.to_string());
            return report;
        }
    };

    let feeder = match std::fs::read_to_string(&file.feeder_path)
        .map_err(|e| e.to_string())
        .and_then(|t| FeederModel::<T>::parse(&t).map_err(|e| e.to_string()))
    {
        Ok(f) => {
            report.push("feeder_valid", true, "radial and connected");
            Some(f)
        }
        Err(e) => {
            report.push("feeder_valid", false, e);
            None
        }
    };

    if let Some(feeder) = &feeder {
        let missing: Vec<&str> = file
            .agents
            .iter()
            .filter(|a| feeder.bus_index(&a.bus).is_none())
            .map(|a| a.id.as_str())
            .collect();
        report.push(
            "agent_buses_exist",
            missing.is_empty(),
            if missing.is_empty() {
                "all agent buses found".to_string()
            } else {
                format!("missing buses for agents: {}", missing.join(", "))
            },
        );
    }

    match build_topology(&file.link_indices(), file.agents.len().max(1)) {
        Ok(_) => report.push("topology_reachable", true, "globally reachable node exists"),
        Err(e) => {
            // Methods without communication do not need reachability, but a
            // scenario selecting (or comparing) communication methods does.
            let needs_comm = file.method.map(|m| m.uses_communication()).unwrap_or(true);
            report.push(
                "topology_reachable",
                !needs_comm,
                format!("{e}{}", if needs_comm { "" } else { " (tolerated: method uses no communication)" }),
            );
        }
    }

    match std::fs::read_to_string(&file.profiles_path)
        .map_err(|e| e.to_string())
        .and_then(|t| Profiles::<T>::parse(&t).map_err(|e| e.to_string()))
    {
        Ok(p) => {
            report.push("profiles_valid", true, "parsed");
            let covered = p.covers(file.window_start_s, file.window_end_s);
            report.push(
                "profile_coverage",
                covered,
                format!(
                    "window {}..{} s vs samples {}..{} s",
                    file.window_start_s,
                    file.window_end_s,
                    p.times_s.first().copied().unwrap_or(0),
                    p.times_s.last().copied().unwrap_or(0)
                ),
            );
        }
        Err(e) => report.push("profiles_valid", false, e),
    }

    let cfg = file.sim_config(file.method.unwrap_or(ControlMethod::NoCtl));
    match cfg.validate() {
        Ok(()) => report.push("sim_config_valid", true, "timing and tolerances consistent"),
        Err(e) => report.push("sim_config_valid", false, e.to_string()),
    }

    report
}
