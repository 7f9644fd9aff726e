//! Steady-state AC power flow on a radial feeder via backward/forward sweep.
//!
//! Loads are constant power, capacitors inject q_rated * V^2, and the slack
//! bus holds its voltage setpoint. Convergence is judged on the largest nodal
//! complex-power mismatch recomputed from the voltages, not on the sweep
//! increment.

use num_complex::Complex;
use thiserror::Error;

use crate::feeder_model::NormalizedFeeder;
use crate::{num, Scalar};

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("unknown bus id `{0}` in injection set")]
    UnknownBus(String),
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("losses require a converged solution")]
    Unconverged,
}

/// Net complex power injections per bus, in per-unit (generation positive).
#[derive(Debug, Clone, Default)]
pub struct InjectionSet<T> {
    entries: Vec<(String, Complex<T>)>,
}

impl<T: Scalar> InjectionSet<T> {
    pub fn new() -> Self {
        InjectionSet {
            entries: Vec::new(),
        }
    }

    /// Adds (accumulates) an injection at a bus.
    pub fn add(&mut self, bus: &str, p: T, q: T) {
        if let Some(e) = self.entries.iter_mut().find(|(id, _)| id == bus) {
            e.1 = e.1 + Complex::new(p, q);
        } else {
            self.entries.push((bus.to_string(), Complex::new(p, q)));
        }
    }

    fn per_bus(&self, feeder: &NormalizedFeeder<T>) -> Result<Vec<Complex<T>>, PowerFlowError> {
        let mut v = vec![Complex::new(T::zero(), T::zero()); feeder.bus_count()];
        for (id, s) in &self.entries {
            let k = feeder
                .bus_index(id)
                .ok_or_else(|| PowerFlowError::UnknownBus(id.clone()))?;
            v[k] = v[k] + *s;
        }
        Ok(v)
    }
}

#[derive(Debug, Clone)]
pub struct VoltageSolution<T> {
    pub bus_ids: Vec<String>,
    /// Complex bus voltages in per-unit; slack at its setpoint exactly.
    pub v: Vec<Complex<T>>,
    /// Sending-end complex power flow per line, in per-unit.
    pub line_flow: Vec<Complex<T>>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: T,
    /// Set when any voltage magnitude fell below 0.5 p.u.
    pub collapsed: bool,
}

impl<T: Scalar> VoltageSolution<T> {
    pub fn magnitude(&self, bus: usize) -> T {
        self.v[bus].norm()
    }

    pub fn angle(&self, bus: usize) -> T {
        self.v[bus].arg()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossReport<T> {
    pub total_active_loss: T,
    pub total_reactive_loss: T,
}

const COLLAPSE_LIMIT: f64 = 0.5;

/// Solves the feeder power flow with a flat start at the slack setpoint.
pub fn solve<T: Scalar>(
    feeder: &NormalizedFeeder<T>,
    injections: &InjectionSet<T>,
    slack_setpoint: T,
    tolerance: T,
    max_iterations: usize,
) -> Result<VoltageSolution<T>, PowerFlowError> {
    if tolerance <= T::zero() {
        return Err(PowerFlowError::BadTolerance);
    }
    let n = feeder.bus_count();
    let inj = injections.per_bus(feeder)?;
    let zero = Complex::new(T::zero(), T::zero());
    let collapse = num::<T>(COLLAPSE_LIMIT);

    let mut v = vec![Complex::new(slack_setpoint, T::zero()); n];
    let mut converged = false;
    let mut collapsed = false;
    let mut iterations = 0;
    let mut max_mismatch = T::infinity();

    // Children accumulate into the branch current toward the parent when the
    // BFS order is walked in reverse.
    while iterations < max_iterations {
        iterations += 1;

        // Nodal injection currents from the latest voltages.
        let mut node_current = vec![zero; n];
        for k in 0..n {
            if k == feeder.slack {
                continue;
            }
            let s = net_injection(feeder, &inj, k, v[k].norm());
            node_current[k] = (s / v[k]).conj();
        }

        // Backward sweep: branch currents (direction parent -> child).
        let mut branch_current = vec![zero; feeder.lines.len()];
        for &k in feeder.order.iter().rev() {
            if k == feeder.slack {
                continue;
            }
            let li = feeder.parent_line[k].expect("non-slack bus has a parent line");
            let mut b = zero - node_current[k];
            for (cli, line) in feeder.lines.iter().enumerate() {
                // Lines whose parent end is k feed their current from k.
                let child = other_end(line.from, line.to, k);
                if let Some(c) = child {
                    if feeder.parent[c] == Some(k) {
                        b = b + branch_current[cli];
                    }
                }
            }
            branch_current[li] = b;
        }

        // Forward sweep: voltages from the slack outward.
        for &k in &feeder.order {
            if k == feeder.slack {
                v[k] = Complex::new(slack_setpoint, T::zero());
                continue;
            }
            let p = feeder.parent[k].unwrap();
            let li = feeder.parent_line[k].unwrap();
            v[k] = v[p] - feeder.lines[li].z * branch_current[li];
        }

        if v.iter().any(|vk| vk.norm() < collapse) {
            collapsed = true;
            break;
        }

        max_mismatch = mismatch(feeder, &inj, &v);
        if max_mismatch <= tolerance {
            converged = true;
            break;
        }
    }
    if !collapsed {
        max_mismatch = mismatch(feeder, &inj, &v);
        if max_mismatch <= tolerance {
            converged = true;
        }
    }

    let line_flow = feeder
        .lines
        .iter()
        .map(|line| {
            let i = (v[line.from] - v[line.to]) / line.z;
            v[line.from] * i.conj()
        })
        .collect();

    Ok(VoltageSolution {
        bus_ids: feeder.bus_ids.clone(),
        v,
        line_flow,
        converged,
        iterations,
        max_mismatch,
        collapsed,
    })
}

fn other_end(from: usize, to: usize, k: usize) -> Option<usize> {
    if from == k {
        Some(to)
    } else if to == k {
        Some(from)
    } else {
        None
    }
}

/// Net specified injection at a bus for a given voltage magnitude: explicit
/// injections minus load, plus the voltage-dependent capacitor term.
fn net_injection<T: Scalar>(
    feeder: &NormalizedFeeder<T>,
    inj: &[Complex<T>],
    k: usize,
    vm: T,
) -> Complex<T> {
    inj[k] - feeder.load[k] + Complex::new(T::zero(), feeder.cap_q[k] * vm * vm)
}

/// Largest nodal complex-power mismatch, recomputed from the voltages.
fn mismatch<T: Scalar>(feeder: &NormalizedFeeder<T>, inj: &[Complex<T>], v: &[Complex<T>]) -> T {
    let n = feeder.bus_count();
    let zero = Complex::new(T::zero(), T::zero());
    let mut out_flow = vec![zero; n];
    for line in &feeder.lines {
        let i = (v[line.from] - v[line.to]) / line.z;
        out_flow[line.from] = out_flow[line.from] + v[line.from] * i.conj();
        out_flow[line.to] = out_flow[line.to] - v[line.to] * i.conj();
    }
    let mut worst = T::zero();
    for k in 0..n {
        if k == feeder.slack {
            continue;
        }
        let r = net_injection(feeder, inj, k, v[k].norm()) - out_flow[k];
        worst = worst.max(r.norm());
    }
    worst
}

/// Sums |I|^2 (R + jX) over all lines of a converged solution.
pub fn losses<T: Scalar>(
    feeder: &NormalizedFeeder<T>,
    solution: &VoltageSolution<T>,
) -> Result<LossReport<T>, PowerFlowError> {
    if !solution.converged {
        return Err(PowerFlowError::Unconverged);
    }
    let mut p = T::zero();
    let mut q = T::zero();
    for line in &feeder.lines {
        let i = (solution.v[line.from] - solution.v[line.to]) / line.z;
        let i2 = i.norm_sqr();
        p = p + i2 * line.z.re;
        q = q + i2 * line.z.im;
    }
    Ok(LossReport {
        total_active_loss: p,
        total_reactive_loss: q,
    })
}
