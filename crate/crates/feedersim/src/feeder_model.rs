//! Feeder data model, definition-file parser, and per-unit normalization.
//!
//! A feeder is a radial network of buses connected by series-impedance lines,
//! with constant-power loads, shunt capacitors, and one slack bus. The parsed
//! model is immutable; [`FeederModel::to_per_unit`] produces the normalized
//! form the power-flow solver works on.

use std::collections::{HashMap, HashSet};

use num_complex::Complex;
use thiserror::Error;

use crate::{num, Scalar};

#[derive(Debug, Error)]
pub enum FeederError {
    #[error("syntax error at line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("duplicate bus id `{0}`")]
    DuplicateBus(String),
    #[error("unknown bus id `{0}`")]
    UnknownBus(String),
    #[error("line endpoint `{0}` does not match any bus")]
    DanglingLine(String),
    #[error("feeder is not radial: expected {expected} lines for {buses} buses, found {found}")]
    NonRadial {
        buses: usize,
        expected: usize,
        found: usize,
    },
    #[error("feeder graph is not connected")]
    Disconnected,
    #[error("no slack bus declared")]
    MissingSlack,
    #[error("invalid value for {what}: {detail}")]
    InvalidValue { what: String, detail: String },
}

#[derive(Debug, Clone)]
pub struct Bus<T> {
    pub id: String,
    /// Nominal line-to-neutral voltage in kV.
    pub nominal_kv: T,
}

#[derive(Debug, Clone)]
pub struct Line<T> {
    pub from: String,
    pub to: String,
    pub resistance_ohm: T,
    pub reactance_ohm: T,
}

#[derive(Debug, Clone)]
pub struct Load<T> {
    pub bus: String,
    pub p_base_kw: T,
    pub q_base_kvar: T,
}

#[derive(Debug, Clone)]
pub struct ShuntCapacitor<T> {
    pub bus: String,
    /// Injection at nominal voltage; scales with V^2 in per-unit.
    pub q_rated_kvar: T,
}

#[derive(Debug, Clone)]
pub struct FeederModel<T> {
    pub buses: Vec<Bus<T>>,
    pub lines: Vec<Line<T>>,
    pub loads: Vec<Load<T>>,
    pub capacitors: Vec<ShuntCapacitor<T>>,
    pub slack_bus: String,
    pub s_base_kva: T,
}

/// Default system power base in kVA when the feeder file does not override it.
pub const DEFAULT_S_BASE_KVA: f64 = 3490.0;

impl<T: Scalar> FeederModel<T> {
    /// Builds and validates a feeder model from its parts.
    pub fn new(
        buses: Vec<Bus<T>>,
        lines: Vec<Line<T>>,
        loads: Vec<Load<T>>,
        capacitors: Vec<ShuntCapacitor<T>>,
        slack_bus: String,
        s_base_kva: T,
    ) -> Result<Self, FeederError> {
        let model = FeederModel {
            buses,
            lines,
            loads,
            capacitors,
            slack_bus,
            s_base_kva,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), FeederError> {
        if self.s_base_kva <= T::zero() {
            return Err(FeederError::InvalidValue {
                what: "s_base_kva".into(),
                detail: "must be positive".into(),
            });
        }
        let mut seen = HashSet::new();
        for bus in &self.buses {
            if !seen.insert(bus.id.as_str()) {
                return Err(FeederError::DuplicateBus(bus.id.clone()));
            }
            if bus.nominal_kv <= T::zero() {
                return Err(FeederError::InvalidValue {
                    what: format!("nominal_kv of bus {}", bus.id),
                    detail: "must be positive".into(),
                });
            }
        }
        for line in &self.lines {
            for end in [&line.from, &line.to] {
                if !seen.contains(end.as_str()) {
                    return Err(FeederError::DanglingLine(end.clone()));
                }
            }
            if line.from == line.to {
                return Err(FeederError::InvalidValue {
                    what: format!("line {}-{}", line.from, line.to),
                    detail: "endpoints must differ".into(),
                });
            }
            if line.resistance_ohm < T::zero() {
                return Err(FeederError::InvalidValue {
                    what: format!("line {}-{} resistance", line.from, line.to),
                    detail: "must be non-negative".into(),
                });
            }
            let x = line.reactance_ohm;
            if !x.is_finite() || x == T::zero() {
                return Err(FeederError::InvalidValue {
                    what: format!("line {}-{} reactance", line.from, line.to),
                    detail: "must be finite and nonzero".into(),
                });
            }
        }
        for load in &self.loads {
            if !seen.contains(load.bus.as_str()) {
                return Err(FeederError::UnknownBus(load.bus.clone()));
            }
            if load.p_base_kw < T::zero() {
                return Err(FeederError::InvalidValue {
                    what: format!("load at bus {}", load.bus),
                    detail: "p_base must be non-negative".into(),
                });
            }
        }
        for cap in &self.capacitors {
            if !seen.contains(cap.bus.as_str()) {
                return Err(FeederError::UnknownBus(cap.bus.clone()));
            }
            if cap.q_rated_kvar < T::zero() {
                return Err(FeederError::InvalidValue {
                    what: format!("capacitor at bus {}", cap.bus),
                    detail: "q_rated must be non-negative".into(),
                });
            }
        }
        if self.slack_bus.is_empty() {
            return Err(FeederError::MissingSlack);
        }
        if !seen.contains(self.slack_bus.as_str()) {
            return Err(FeederError::UnknownBus(self.slack_bus.clone()));
        }
        // Radiality: |lines| = |buses| - 1 and connected.
        let n = self.buses.len();
        if n > 0 && self.lines.len() != n - 1 {
            return Err(FeederError::NonRadial {
                buses: n,
                expected: n.saturating_sub(1),
                found: self.lines.len(),
            });
        }
        if n > 0 && !self.is_connected() {
            return Err(FeederError::Disconnected);
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let idx: HashMap<&str, usize> = self
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id.as_str(), i))
            .collect();
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for line in &self.lines {
            let (a, b) = (idx[line.from.as_str()], idx[line.to.as_str()]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(k) = stack.pop() {
            for &next in &adj[k] {
                if !seen[next] {
                    seen[next] = true;
                    count += 1;
                    stack.push(next);
                }
            }
        }
        count == n
    }

    /// Parses a feeder definition document (see the grammar in the README).
    pub fn parse(text: &str) -> Result<Self, FeederError> {
        let mut buses = Vec::new();
        let mut lines = Vec::new();
        let mut loads = Vec::new();
        let mut capacitors = Vec::new();
        let mut slack = None;
        let mut s_base_kva = num::<T>(DEFAULT_S_BASE_KVA);

        let mut section: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if content.starts_with('[') {
                if !content.ends_with(']') {
                    return Err(FeederError::Syntax {
                        line: lineno,
                        msg: "unterminated section header".into(),
                    });
                }
                section = Some(content[1..content.len() - 1].trim().to_string());
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let section = section.as_deref().ok_or_else(|| FeederError::Syntax {
                line: lineno,
                msg: "record before any section header".into(),
            })?;
            match section {
                "bases" => {
                    expect_fields(lineno, &fields, 2)?;
                    match fields[0] {
                        "s_base_kva" => s_base_kva = parse_num(lineno, fields[1])?,
                        other => {
                            return Err(FeederError::Syntax {
                                line: lineno,
                                msg: format!("unknown base field `{other}`"),
                            })
                        }
                    }
                }
                "buses" => {
                    expect_fields(lineno, &fields, 2)?;
                    buses.push(Bus {
                        id: fields[0].to_string(),
                        nominal_kv: parse_num(lineno, fields[1])?,
                    });
                }
                "lines" => {
                    expect_fields(lineno, &fields, 4)?;
                    lines.push(Line {
                        from: fields[0].to_string(),
                        to: fields[1].to_string(),
                        resistance_ohm: parse_num(lineno, fields[2])?,
                        reactance_ohm: parse_num(lineno, fields[3])?,
                    });
                }
                "loads" => {
                    expect_fields(lineno, &fields, 3)?;
                    loads.push(Load {
                        bus: fields[0].to_string(),
                        p_base_kw: parse_num(lineno, fields[1])?,
                        q_base_kvar: parse_num(lineno, fields[2])?,
                    });
                }
                "capacitors" => {
                    expect_fields(lineno, &fields, 2)?;
                    capacitors.push(ShuntCapacitor {
                        bus: fields[0].to_string(),
                        q_rated_kvar: parse_num(lineno, fields[1])?,
                    });
                }
                "slack" => {
                    expect_fields(lineno, &fields, 1)?;
                    slack = Some(fields[0].to_string());
                }
                other => {
                    return Err(FeederError::Syntax {
                        line: lineno,
                        msg: format!("unknown section `[{other}]`"),
                    })
                }
            }
        }
        let slack = slack.ok_or(FeederError::MissingSlack)?;
        FeederModel::new(buses, lines, loads, capacitors, slack, s_base_kva)
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Sum of base load over all buses, in (kW, kVar).
    pub fn total_load(&self) -> (T, T) {
        let p = self.loads.iter().map(|l| l.p_base_kw).sum();
        let q = self.loads.iter().map(|l| l.q_base_kvar).sum();
        (p, q)
    }

    /// Self-susceptance B_mm of a bus: the sum of the imaginary parts of the
    /// per-unit admittances of all incident lines, on (s_base, bus nominal
    /// voltage) bases.
    pub fn self_susceptance(&self, bus: &str) -> Result<T, FeederError> {
        let b = self
            .buses
            .iter()
            .find(|b| b.id == bus)
            .ok_or_else(|| FeederError::UnknownBus(bus.to_string()))?;
        let z_base = b.nominal_kv * b.nominal_kv * num::<T>(1000.0) / self.s_base_kva;
        let mut total = T::zero();
        for line in &self.lines {
            if line.from == bus || line.to == bus {
                let z = Complex::new(line.resistance_ohm / z_base, line.reactance_ohm / z_base);
                total = total + (Complex::new(T::one(), T::zero()) / z).im;
            }
        }
        Ok(total)
    }

    /// Normalizes the feeder onto (s_base, per-bus nominal voltage) bases.
    pub fn to_per_unit(&self) -> NormalizedFeeder<T> {
        let idx: HashMap<&str, usize> = self
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id.as_str(), i))
            .collect();
        let n = self.buses.len();
        let kilo = num::<T>(1000.0);

        let mut norm_lines = Vec::with_capacity(self.lines.len());
        for line in &self.lines {
            let from = idx[line.from.as_str()];
            let to = idx[line.to.as_str()];
            // Impedance base from the sending-end bus voltage.
            let kv = self.buses[from].nominal_kv;
            let z_base = kv * kv * kilo / self.s_base_kva;
            norm_lines.push(NormLine {
                from,
                to,
                z: Complex::new(line.resistance_ohm / z_base, line.reactance_ohm / z_base),
            });
        }
        let mut load = vec![Complex::new(T::zero(), T::zero()); n];
        for l in &self.loads {
            let k = idx[l.bus.as_str()];
            load[k] = load[k] + Complex::new(l.p_base_kw, l.q_base_kvar) / self.s_base_kva;
        }
        let mut cap_q = vec![T::zero(); n];
        for c in &self.capacitors {
            let k = idx[c.bus.as_str()];
            cap_q[k] = cap_q[k] + c.q_rated_kvar / self.s_base_kva;
        }

        let slack = idx[self.slack_bus.as_str()];
        let (order, parent, parent_line) = bfs_tree(n, &norm_lines, slack);

        NormalizedFeeder {
            bus_ids: self.buses.iter().map(|b| b.id.clone()).collect(),
            v_base_kv: self.buses.iter().map(|b| b.nominal_kv).collect(),
            s_base_kva: self.s_base_kva,
            slack,
            lines: norm_lines,
            load,
            cap_q,
            order,
            parent,
            parent_line,
        }
    }
}

fn expect_fields(line: usize, fields: &[&str], n: usize) -> Result<(), FeederError> {
    if fields.len() != n {
        return Err(FeederError::Syntax {
            line,
            msg: format!("expected {n} fields, found {}", fields.len()),
        });
    }
    Ok(())
}

fn parse_num<T: Scalar>(line: usize, field: &str) -> Result<T, FeederError> {
    let v: f64 = field.parse().map_err(|_| FeederError::Syntax {
        line,
        msg: format!("not a number: `{field}`"),
    })?;
    T::from_f64(v).ok_or_else(|| FeederError::Syntax {
        line,
        msg: format!("value out of range: `{field}`"),
    })
}

#[derive(Debug, Clone)]
pub struct NormLine<T> {
    pub from: usize,
    pub to: usize,
    /// Series impedance in per-unit.
    pub z: Complex<T>,
}

/// Feeder expressed in per-unit with the tree structure precomputed for the
/// backward/forward sweep.
#[derive(Debug, Clone)]
pub struct NormalizedFeeder<T> {
    pub bus_ids: Vec<String>,
    pub v_base_kv: Vec<T>,
    pub s_base_kva: T,
    pub slack: usize,
    pub lines: Vec<NormLine<T>>,
    /// Per-bus constant-power consumption in per-unit at multiplier 1.0.
    pub load: Vec<Complex<T>>,
    /// Per-bus capacitor injection in per-unit at nominal voltage.
    pub cap_q: Vec<T>,
    /// Buses in BFS order from the slack.
    pub order: Vec<usize>,
    pub parent: Vec<Option<usize>>,
    pub parent_line: Vec<Option<usize>>,
}

fn bfs_tree<T: Scalar>(
    n: usize,
    lines: &[NormLine<T>],
    slack: usize,
) -> (Vec<usize>, Vec<Option<usize>>, Vec<Option<usize>>) {
    let mut adj = vec![Vec::new(); n];
    for (li, line) in lines.iter().enumerate() {
        adj[line.from].push((line.to, li));
        adj[line.to].push((line.from, li));
    }
    let mut order = Vec::with_capacity(n);
    let mut parent = vec![None; n];
    let mut parent_line = vec![None; n];
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(slack);
    seen[slack] = true;
    while let Some(k) = queue.pop_front() {
        order.push(k);
        for &(next, li) in &adj[k] {
            if !seen[next] {
                seen[next] = true;
                parent[next] = Some(k);
                parent_line[next] = Some(li);
                queue.push_back(next);
            }
        }
    }
    (order, parent, parent_line)
}

impl<T: Scalar> NormalizedFeeder<T> {
    pub fn bus_count(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.bus_ids.iter().position(|b| b == id)
    }

    /// B_mm by bus index; same quantity as [`FeederModel::self_susceptance`].
    pub fn self_susceptance(&self, bus: usize) -> T {
        let one = Complex::new(T::one(), T::zero());
        let mut total = T::zero();
        for line in &self.lines {
            if line.from == bus || line.to == bus {
                total = total + (one / line.z).im;
            }
        }
        total
    }

    /// Returns a copy with every load scaled by the given multiplier.
    pub fn with_load_multiplier(&self, mult: T) -> Self {
        let mut scaled = self.clone();
        for l in &mut scaled.load {
            *l = Complex::new(l.re * mult, l.im * mult);
        }
        scaled
    }

    /// Converts back to physical units; inverse of [`FeederModel::to_per_unit`].
    pub fn to_physical(&self) -> FeederModel<T> {
        let kilo = num::<T>(1000.0);
        let buses: Vec<Bus<T>> = self
            .bus_ids
            .iter()
            .zip(&self.v_base_kv)
            .map(|(id, &kv)| Bus {
                id: id.clone(),
                nominal_kv: kv,
            })
            .collect();
        let lines = self
            .lines
            .iter()
            .map(|l| {
                let kv = self.v_base_kv[l.from];
                let z_base = kv * kv * kilo / self.s_base_kva;
                Line {
                    from: self.bus_ids[l.from].clone(),
                    to: self.bus_ids[l.to].clone(),
                    resistance_ohm: l.z.re * z_base,
                    reactance_ohm: l.z.im * z_base,
                }
            })
            .collect();
        let loads = self
            .load
            .iter()
            .enumerate()
            .filter(|(_, s)| s.re != T::zero() || s.im != T::zero())
            .map(|(k, s)| Load {
                bus: self.bus_ids[k].clone(),
                p_base_kw: s.re * self.s_base_kva,
                q_base_kvar: s.im * self.s_base_kva,
            })
            .collect();
        let capacitors = self
            .cap_q
            .iter()
            .enumerate()
            .filter(|(_, &q)| q != T::zero())
            .map(|(k, &q)| ShuntCapacitor {
                bus: self.bus_ids[k].clone(),
                q_rated_kvar: q * self.s_base_kva,
            })
            .collect();
        FeederModel {
            buses,
            lines,
            loads,
            capacitors,
            slack_bus: self.bus_ids[self.slack].clone(),
            s_base_kva: self.s_base_kva,
        }
    }
}
