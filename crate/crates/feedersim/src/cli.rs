//! Command-line entry point logic: load a scenario, run one method or the
//! full five-method comparison, and write step CSVs plus summary files.
//!
//! Numeric output uses the shortest round-trip decimal representation, so a
//! written step CSV re-parses to exactly the in-memory records.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::coordination::ControlMethod;
use crate::scenario::{self, LoadedScenario, ScenarioError};
use crate::simulation::{
    curtailment_report, run_scenario, AgentStep, ScenarioResults, SimulationError, StepRecord,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Scenario(ScenarioError),
    #[error("no control method selected: pass --method or set one in the scenario file")]
    NoMethod,
    #[error("{0}")]
    Simulation(SimulationError<f64>),
    #[error("could not write {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed step CSV at line {line}: {msg}")]
    CsvParse { line: usize, msg: String },
}

/// Exit codes: 0 success, 2 unreadable inputs, 3 validation failures,
/// 4 power-flow nonconvergence.
pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(ScenarioError::Io { .. }) => EXIT_IO,
            CliError::Scenario(_) | CliError::NoMethod | CliError::CsvParse { .. } => {
                EXIT_VALIDATION
            }
            CliError::Simulation(SimulationError::NonConvergence { .. }) => EXIT_NONCONVERGENCE,
            CliError::Simulation(_) => EXIT_VALIDATION,
            CliError::Output { .. } => EXIT_IO,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Scenario(e)
    }
}

impl From<SimulationError<f64>> for CliError {
    fn from(e: SimulationError<f64>) -> Self {
        CliError::Simulation(e)
    }
}

/// Writes `content` atomically: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, content: &str) -> Result<(), CliError> {
    let err = |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(content.as_bytes()).map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

pub const STEP_CSV_HEADER: &str =
    "time,agent,v_pu,p_out_kw,q_out_kvar,alpha,f_v,loss_p_kw,loss_q_kvar";

/// Long-format step CSV: one row per (time, agent); system losses repeat on
/// every row of a time block.
pub fn steps_to_csv(results: &ScenarioResults<f64>) -> String {
    records_to_csv(&results.agent_ids, &results.steps)
}

/// [`steps_to_csv`] on bare records, for round-trip checks.
pub fn records_to_csv(agent_ids: &[String], steps: &[StepRecord<f64>]) -> String {
    let mut out = String::from(STEP_CSV_HEADER);
    out.push('\n');
    for step in steps {
        for (id, a) in agent_ids.iter().zip(&step.agents) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                step.time_s,
                id,
                a.v_pu,
                a.p_out_kw,
                a.q_out_kvar,
                a.alpha,
                a.f_v,
                step.loss_p_kw,
                step.loss_q_kvar
            ));
        }
    }
    out
}

/// Inverse of [`steps_to_csv`]: agent ids in first-seen order plus the
/// reconstructed step records.
pub fn steps_from_csv(text: &str) -> Result<(Vec<String>, Vec<StepRecord<f64>>), CliError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == STEP_CSV_HEADER => {}
        _ => {
            return Err(CliError::CsvParse {
                line: 1,
                msg: format!("expected header `{STEP_CSV_HEADER}`"),
            })
        }
    }
    let mut agent_ids: Vec<String> = Vec::new();
    let mut steps: Vec<StepRecord<f64>> = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split(',').collect();
        if cols.len() != 9 {
            return Err(CliError::CsvParse {
                line,
                msg: format!("expected 9 columns, found {}", cols.len()),
            });
        }
        let parse_f = |k: usize| -> Result<f64, CliError> {
            cols[k].parse().map_err(|_| CliError::CsvParse {
                line,
                msg: format!("bad number `{}`", cols[k]),
            })
        };
        let time_s: u32 = cols[0].parse().map_err(|_| CliError::CsvParse {
            line,
            msg: format!("bad time `{}`", cols[0]),
        })?;
        let agent = AgentStep {
            v_pu: parse_f(2)?,
            p_out_kw: parse_f(3)?,
            q_out_kvar: parse_f(4)?,
            alpha: parse_f(5)?,
            f_v: parse_f(6)?,
        };
        if !agent_ids.iter().any(|a| a == cols[1]) {
            agent_ids.push(cols[1].to_string());
        }
        match steps.last_mut() {
            Some(last) if last.time_s == time_s => last.agents.push(agent),
            _ => steps.push(StepRecord {
                time_s,
                agents: vec![agent],
                loss_p_kw: parse_f(7)?,
                loss_q_kvar: parse_f(8)?,
            }),
        }
    }
    Ok((agent_ids, steps))
}

/// Human-readable per-run summary.
pub fn summary_text(
    results: &ScenarioResults<f64>,
    curtailment: Option<&[Option<f64>]>,
) -> String {
    let s = &results.summary;
    let mut out = String::new();
    out.push_str(&format!("method: {}\n", results.method.tag()));
    out.push_str(&format!(
        "window: {}..{} s, step {} s, {} steps, complete: {}\n",
        results.window.0,
        results.window.1,
        results.sim_step_s,
        results.steps.len(),
        results.complete
    ));
    out.push_str(&format!("fv_sum_then_square: {}\n", s.fv_sum_then_square));
    out.push_str(&format!(
        "fv_square_per_step_sum: {}\n",
        s.fv_square_per_step_sum
    ));
    out.push_str(&format!("mean_loss_p_kw: {}\n", s.mean_loss_p_kw));
    out.push_str(&format!("mean_loss_q_kvar: {}\n", s.mean_loss_q_kvar));
    for (i, a) in s.agents.iter().enumerate() {
        out.push_str(&format!(
            "agent {}: delivered_kwh {}, mean_abs_alpha {}, abs_q_kvarh {}",
            a.id, a.delivered_kwh, a.mean_abs_alpha, a.abs_q_kvarh
        ));
        if let Some(c) = curtailment {
            match c.get(i).copied().flatten() {
                Some(pct) => out.push_str(&format!(", curtailment_pct {pct}")),
                None => out.push_str(", curtailment_pct n/a"),
            }
        }
        out.push('\n');
    }
    out
}

pub const COMPARISON_CSV_HEADER: &str = "method,agent,fv_sum_then_square,fv_square_per_step_sum,\
mean_loss_p_kw,mean_loss_q_kvar,delivered_kwh,mean_abs_alpha,abs_q_kvarh,curtailment_pct";

/// Comparison summary in long format: one row per (method, agent); the
/// system-level columns repeat within a method block. Derived only from the
/// per-method results.
pub fn comparison_csv(rows: &[(ScenarioResults<f64>, Vec<Option<f64>>)]) -> String {
    let mut out = String::from(COMPARISON_CSV_HEADER);
    out.push('\n');
    for (res, curtailment) in rows {
        let s = &res.summary;
        for (i, a) in s.agents.iter().enumerate() {
            let pct = match curtailment.get(i).copied().flatten() {
                Some(p) => p.to_string(),
                None => "n/a".to_string(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                res.method.tag(),
                a.id,
                s.fv_sum_then_square,
                s.fv_square_per_step_sum,
                s.mean_loss_p_kw,
                s.mean_loss_q_kvar,
                a.delivered_kwh,
                a.mean_abs_alpha,
                a.abs_q_kvarh,
                pct
            ));
        }
    }
    out
}

fn run_method(
    loaded: &LoadedScenario<f64>,
    method: ControlMethod,
) -> Result<ScenarioResults<f64>, CliError> {
    let config = loaded.file.sim_config(method);
    run_scenario(
        &loaded.feeder,
        &loaded.agents,
        &loaded.topology,
        &loaded.profiles,
        &config,
    )
    .map_err(CliError::from)
}

fn write_method_outputs(
    out_dir: &Path,
    results: &ScenarioResults<f64>,
    curtailment: Option<&[Option<f64>]>,
) -> Result<(), CliError> {
    let tag = results.method.tag();
    write_atomic(&out_dir.join(format!("steps_{tag}.csv")), &steps_to_csv(results))?;
    write_atomic(
        &out_dir.join(format!("summary_{tag}.txt")),
        &summary_text(results, curtailment),
    )
}

fn ensure_out_dir(out_dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir).map_err(|source| CliError::Output {
        path: out_dir.to_path_buf(),
        source,
    })
}

/// `run --scenario ... --method ...`: one method, one CSV plus summary.
pub fn cmd_run(
    scenario_path: &Path,
    method: Option<ControlMethod>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let loaded: LoadedScenario<f64> = scenario::load(scenario_path)?;
    let method = method.or(loaded.file.method).ok_or(CliError::NoMethod)?;
    let results = run_method(&loaded, method)?;
    ensure_out_dir(out_dir)?;
    write_method_outputs(out_dir, &results, None)?;
    println!(
        "{}: {} steps, fv_sum_then_square = {}",
        method.tag(),
        results.steps.len(),
        results.summary.fv_sum_then_square
    );
    Ok(())
}

/// `run --scenario ... --compare`: all five methods against the no-control
/// baseline, five result sets plus one comparison summary. Methods run
/// concurrently; each run is independent.
pub fn cmd_compare(scenario_path: &Path, out_dir: &Path) -> Result<(), CliError> {
    let loaded: LoadedScenario<f64> = scenario::load(scenario_path)?;
    let loaded_ref = &loaded;
    let results: Vec<Result<ScenarioResults<f64>, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ControlMethod::ALL
            .iter()
            .map(|&m| scope.spawn(move || run_method(loaded_ref, m)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        runs.push(r?);
    }
    let baseline = runs
        .iter()
        .find(|r| r.method == ControlMethod::NoCtl)
        .expect("comparison always includes the no-control baseline");
    let rows: Vec<(ScenarioResults<f64>, Vec<Option<f64>>)> = runs
        .iter()
        .map(|r| Ok((r.clone(), curtailment_report(r, baseline)?)))
        .collect::<Result<_, SimulationError<f64>>>()?;
    // Per-method outputs stay identical to single-method runs; curtailment
    // (which needs the baseline) lives in comparison.csv only.
    ensure_out_dir(out_dir)?;
    for (res, _) in &rows {
        write_method_outputs(out_dir, res, None)?;
    }
    write_atomic(&out_dir.join("comparison.csv"), &comparison_csv(&rows))?;
    for (res, _) in &rows {
        println!(
            "{}: fv_sum_then_square = {}",
            res.method.tag(),
            res.summary.fv_sum_then_square
        );
    }
    Ok(())
}

/// `--validate`: static validation without running; prints one line per check.
pub fn cmd_validate(scenario_path: &Path) -> i32 {
    let report = scenario::validate::<f64>(scenario_path);
    print!("{report}");
    if report.passed() {
        EXIT_OK
    } else {
        EXIT_VALIDATION
    }
}
