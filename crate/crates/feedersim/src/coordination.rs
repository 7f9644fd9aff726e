//! Communication topology, weight matrices, row-stochastic coefficients, and
//! the per-round agent estimate update for each control method.
//!
//! The dynamic scheme weights each link by the headroom ratio of the two
//! endpoints, so agents with spare reactive capacity lean toward the
//! estimates of agents experiencing scarcity. With equal headroom everywhere
//! it reduces exactly to the fixed-weight scheme.

use thiserror::Error;

use crate::{num, Scalar};

#[derive(Debug, Error)]
pub enum CoordinationError {
    #[error("agent index {0} out of range for {1} agents")]
    IndexOutOfRange(usize, usize),
    #[error("topology has no globally reachable node")]
    NotReachable,
    #[error("topology must have at least one agent")]
    Empty,
    #[error("negative reactive headroom for agent {0}")]
    NegativeHeadroom(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("row {0} of the weight matrix sums to zero under the topology mask")]
    ZeroRowSum(usize),
    #[error("control method `{method}` requires a {required:?}-scheme coefficient matrix")]
    SchemeMismatch {
        method: &'static str,
        required: WeightScheme,
    },
    #[error("control method requires a coefficient matrix but none was given")]
    MissingCoefficients,
}

/// Floor applied to reactive headroom inside weight ratios only.
pub const HEADROOM_EPS: f64 = 1e-6;

/// Binary communication topology with a fixed unit diagonal (self-link).
#[derive(Debug, Clone)]
pub struct CommTopology {
    m: usize,
    s: Vec<Vec<bool>>,
}

impl CommTopology {
    pub fn size(&self) -> usize {
        self.m
    }

    pub fn linked(&self, i: usize, j: usize) -> bool {
        self.s[i][j]
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.m).filter(|&j| j != i && self.s[i][j]).count()
    }
}

/// Builds a symmetric topology from undirected agent-id pairs without the
/// reachability requirement (methods that do not communicate tolerate a
/// disconnected topology).
pub fn build_topology_lenient(
    links: &[(usize, usize)],
    m: usize,
) -> Result<CommTopology, CoordinationError> {
    if m == 0 {
        return Err(CoordinationError::Empty);
    }
    let mut s = vec![vec![false; m]; m];
    for k in 0..m {
        s[k][k] = true;
    }
    for &(i, j) in links {
        for idx in [i, j] {
            if idx >= m {
                return Err(CoordinationError::IndexOutOfRange(idx, m));
            }
        }
        s[i][j] = true;
        s[j][i] = true;
    }
    Ok(CommTopology { m, s })
}

/// Whether some root reaches every agent over the directed graph induced by
/// S — the minimum connectivity for consensus convergence.
pub fn has_globally_reachable_node(topology: &CommTopology) -> bool {
    let m = topology.m;
    let reachable_from = |root: usize| -> usize {
        let mut seen = vec![false; m];
        let mut stack = vec![root];
        seen[root] = true;
        let mut count = 1;
        while let Some(k) = stack.pop() {
            for j in 0..m {
                if topology.s[k][j] && !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count
    };
    (0..m).any(|root| reachable_from(root) == m)
}

/// Builds a symmetric topology from undirected agent-id pairs and verifies
/// that at least one globally reachable node exists.
pub fn build_topology(links: &[(usize, usize)], m: usize) -> Result<CommTopology, CoordinationError> {
    let topology = build_topology_lenient(links, m)?;
    if has_globally_reachable_node(&topology) {
        Ok(topology)
    } else {
        Err(CoordinationError::NotReachable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScheme {
    Fixed,
    Dynamic,
}

#[derive(Debug, Clone)]
pub struct WeightMatrix<T> {
    pub w: Vec<Vec<T>>,
    pub scheme: WeightScheme,
    /// Set when all-zero headroom forced a uniform fallback.
    pub uniform_fallback: bool,
}

/// Fixed communication weights: every link weighted 1, with the self-weight
/// equal to the node degree so an agent balances itself against its
/// neighborhood as a whole. Matches the dynamic scheme at equal headroom.
pub fn fixed_weights<T: Scalar>(topology: &CommTopology) -> WeightMatrix<T> {
    let m = topology.size();
    let mut w = vec![vec![T::zero(); m]; m];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                let deg = topology.degree(i);
                w[i][i] = if deg == 0 {
                    T::one()
                } else {
                    num(deg as f64)
                };
            } else if topology.linked(i, j) {
                w[i][j] = T::one();
            }
        }
    }
    WeightMatrix {
        w,
        scheme: WeightScheme::Fixed,
        uniform_fallback: false,
    }
}

/// Headroom-based weights: off-diagonal w_ij = Q_i / Q_j over existing links;
/// diagonal w_ii = (sum of neighbor headroom) / Q_i. Headroom below
/// [`HEADROOM_EPS`] is floored inside the ratios only.
pub fn dynamic_weights<T: Scalar>(
    topology: &CommTopology,
    q_avail: &[T],
) -> Result<WeightMatrix<T>, CoordinationError> {
    let m = topology.size();
    if q_avail.len() != m {
        return Err(CoordinationError::DimensionMismatch {
            expected: m,
            found: q_avail.len(),
        });
    }
    for (i, &q) in q_avail.iter().enumerate() {
        if q < T::zero() {
            return Err(CoordinationError::NegativeHeadroom(i));
        }
    }
    let eps = num::<T>(HEADROOM_EPS);
    if q_avail.iter().all(|&q| q < eps) {
        // No headroom anywhere: ratios carry no information.
        let mut w = fixed_weights::<T>(topology);
        w.scheme = WeightScheme::Dynamic;
        w.uniform_fallback = true;
        return Ok(w);
    }
    let q: Vec<T> = q_avail.iter().map(|&q| q.max(eps)).collect();
    let mut w = vec![vec![T::zero(); m]; m];
    for i in 0..m {
        let mut neighbor_pool = T::zero();
        for j in 0..m {
            if j != i && topology.linked(i, j) {
                w[i][j] = q[i] / q[j];
                neighbor_pool = neighbor_pool + q[j];
            }
        }
        w[i][i] = if topology.degree(i) == 0 {
            T::one()
        } else {
            neighbor_pool / q[i]
        };
    }
    Ok(WeightMatrix {
        w,
        scheme: WeightScheme::Dynamic,
        uniform_fallback: false,
    })
}

/// Row-stochastic coefficient matrix; zero outside the topology mask.
#[derive(Debug, Clone)]
pub struct CoefficientMatrix<T> {
    pub d: Vec<Vec<T>>,
    pub scheme: WeightScheme,
}

impl<T: Scalar> CoefficientMatrix<T> {
    pub fn size(&self) -> usize {
        self.d.len()
    }

    /// D * alpha.
    pub fn mix(&self, alphas: &[T]) -> Vec<T> {
        self.d
            .iter()
            .map(|row| row.iter().zip(alphas).map(|(&d, &a)| d * a).sum())
            .collect()
    }
}

/// Normalizes masked weights into row-stochastic coefficients.
pub fn normalize<T: Scalar>(
    weights: &WeightMatrix<T>,
    topology: &CommTopology,
) -> Result<CoefficientMatrix<T>, CoordinationError> {
    let m = topology.size();
    if weights.w.len() != m {
        return Err(CoordinationError::DimensionMismatch {
            expected: m,
            found: weights.w.len(),
        });
    }
    let mut d = vec![vec![T::zero(); m]; m];
    for i in 0..m {
        let mut sum = T::zero();
        for j in 0..m {
            if topology.linked(i, j) {
                sum = sum + weights.w[i][j];
            }
        }
        if sum <= T::zero() {
            return Err(CoordinationError::ZeroRowSum(i));
        }
        for j in 0..m {
            if topology.linked(i, j) {
                d[i][j] = weights.w[i][j] / sum;
            }
        }
    }
    Ok(CoefficientMatrix {
        d,
        scheme: weights.scheme,
    })
}

/// The five control methods under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControlMethod {
    NoCtl,
    FixedCurve,
    AdaptiveNoComm,
    AdaptiveFixedWeights,
    AdaptiveDynamicWeights,
}

impl ControlMethod {
    pub const ALL: [ControlMethod; 5] = [
        ControlMethod::NoCtl,
        ControlMethod::FixedCurve,
        ControlMethod::AdaptiveNoComm,
        ControlMethod::AdaptiveFixedWeights,
        ControlMethod::AdaptiveDynamicWeights,
    ];

    /// Short tag used for CLI flags and output file names.
    pub fn tag(&self) -> &'static str {
        match self {
            ControlMethod::NoCtl => "noctl",
            ControlMethod::FixedCurve => "fc",
            ControlMethod::AdaptiveNoComm => "ac-nocm",
            ControlMethod::AdaptiveFixedWeights => "ac-fw",
            ControlMethod::AdaptiveDynamicWeights => "ac-dw",
        }
    }

    pub fn from_tag(tag: &str) -> Option<ControlMethod> {
        Self::ALL.iter().copied().find(|m| m.tag() == tag)
    }

    pub fn uses_communication(&self) -> bool {
        matches!(
            self,
            ControlMethod::AdaptiveFixedWeights | ControlMethod::AdaptiveDynamicWeights
        )
    }
}

impl std::fmt::Display for ControlMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// One synchronous update round: every agent computes its next estimate from
/// the same snapshot. Gradient entries of `None` mark agents skipping their
/// step this round (singularity guard); the consensus mixing still applies.
/// The result is clamped to the symmetric per-agent `alpha_limits`.
#[allow(clippy::too_many_arguments)]
pub fn update_estimates<T: Scalar>(
    method: ControlMethod,
    alphas: &[T],
    d: Option<&CoefficientMatrix<T>>,
    betas: &[T],
    grads: &[Option<T>],
    volt_var_outputs: &[T],
    ratings: &[T],
    alpha_limits: &[T],
) -> Result<Vec<T>, CoordinationError> {
    let m = alphas.len();
    for len in [betas.len(), grads.len(), volt_var_outputs.len(), ratings.len(), alpha_limits.len()] {
        if len != m {
            return Err(CoordinationError::DimensionMismatch {
                expected: m,
                found: len,
            });
        }
    }
    let raw: Vec<T> = match method {
        ControlMethod::NoCtl => vec![T::zero(); m],
        ControlMethod::FixedCurve => volt_var_outputs
            .iter()
            .zip(ratings)
            .map(|(&q, &s)| q / s)
            .collect(),
        ControlMethod::AdaptiveNoComm => (0..m)
            .map(|i| alphas[i] - betas[i] * grads[i].unwrap_or(T::zero()))
            .collect(),
        ControlMethod::AdaptiveFixedWeights | ControlMethod::AdaptiveDynamicWeights => {
            let required = if method == ControlMethod::AdaptiveFixedWeights {
                WeightScheme::Fixed
            } else {
                WeightScheme::Dynamic
            };
            let d = d.ok_or(CoordinationError::MissingCoefficients)?;
            if d.scheme != required {
                return Err(CoordinationError::SchemeMismatch {
                    method: method.tag(),
                    required,
                });
            }
            if d.size() != m {
                return Err(CoordinationError::DimensionMismatch {
                    expected: m,
                    found: d.size(),
                });
            }
            let mixed = d.mix(alphas);
            (0..m)
                .map(|i| mixed[i] - betas[i] * grads[i].unwrap_or(T::zero()))
                .collect()
        }
    };
    Ok(raw
        .into_iter()
        .zip(alpha_limits)
        .map(|(a, &lim)| a.max(-lim).min(lim))
        .collect())
}
