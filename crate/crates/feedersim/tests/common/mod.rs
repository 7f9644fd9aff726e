//! Shared helpers for integration tests: an independent Newton–Raphson power
//! flow (full Y-bus, finite-difference Jacobian, Gaussian elimination) used as
//! an oracle against the production solver, plus random feeder generators.

use num_complex::Complex;
use rand::prelude::*;

use feedersim::feeder_model::{Bus, FeederModel, Line, Load, NormalizedFeeder, ShuntCapacitor};

/// Solves the network with Newton–Raphson on rectangular voltage coordinates.
/// `extra_inj` is net per-unit complex power added at each bus on top of the
/// feeder's own loads and capacitors. Returns per-bus complex voltages.
pub fn newton_oracle(
    nf: &NormalizedFeeder<f64>,
    extra_inj: &[Complex<f64>],
    slack_v: f64,
) -> Vec<Complex<f64>> {
    let n = nf.bus_count();
    assert_eq!(extra_inj.len(), n);

    // Y-bus: series line admittances plus capacitors as shunt susceptance
    // (injection q = q_rated * V^2 corresponds to y_shunt = +j q_rated).
    let mut y = vec![vec![Complex::new(0.0, 0.0); n]; n];
    for line in &nf.lines {
        let ya = Complex::new(1.0, 0.0) / line.z;
        y[line.from][line.from] += ya;
        y[line.to][line.to] += ya;
        y[line.from][line.to] -= ya;
        y[line.to][line.from] -= ya;
    }
    for (k, &q) in nf.cap_q.iter().enumerate() {
        y[k][k] += Complex::new(0.0, q);
    }

    // Scheduled injection at every non-slack bus.
    let s_spec: Vec<Complex<f64>> = (0..n).map(|k| extra_inj[k] - nf.load[k]).collect();

    let unknowns: Vec<usize> = (0..n).filter(|&k| k != nf.slack).collect();
    let dim = 2 * unknowns.len();
    if dim == 0 {
        return vec![Complex::new(slack_v, 0.0)];
    }

    let assemble = |x: &[f64]| -> Vec<Complex<f64>> {
        let mut v = vec![Complex::new(slack_v, 0.0); n];
        for (i, &k) in unknowns.iter().enumerate() {
            v[k] = Complex::new(x[2 * i], x[2 * i + 1]);
        }
        v
    };
    let residual = |x: &[f64]| -> Vec<f64> {
        let v = assemble(x);
        let mut f = Vec::with_capacity(dim);
        for &k in &unknowns {
            let i_net: Complex<f64> = (0..n).map(|j| y[k][j] * v[j]).sum();
            let mismatch = s_spec[k] - v[k] * i_net.conj();
            f.push(mismatch.re);
            f.push(mismatch.im);
        }
        f
    };

    let mut x = vec![0.0; dim];
    for i in 0..unknowns.len() {
        x[2 * i] = slack_v;
    }
    for _ in 0..60 {
        let f = residual(&x);
        let worst = f.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if worst < 1e-13 {
            break;
        }
        // Finite-difference Jacobian of -F (so J * dx = F).
        let h = 1e-7;
        let mut jac = vec![vec![0.0; dim]; dim];
        for col in 0..dim {
            let mut xp = x.clone();
            xp[col] += h;
            let fp = residual(&xp);
            for row in 0..dim {
                jac[row][col] = (fp[row] - f[row]) / h;
            }
        }
        let dx = gaussian_solve(&mut jac, &f);
        for i in 0..dim {
            x[i] -= dx[i];
        }
    }
    assemble(&x)
}

/// Gaussian elimination with partial pivoting; consumes the matrix.
fn gaussian_solve(a: &mut [Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        rhs.swap(col, pivot);
        assert!(a[col][col].abs() > 1e-14, "singular Jacobian");
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

/// Random radial feeder: bus k+2 hangs off a random earlier bus; light random
/// loads and an occasional capacitor keep the system well inside convergence.
pub fn random_radial_feeder(rng: &mut StdRng, n_buses: usize) -> FeederModel<f64> {
    let s_base = 1000.0;
    let buses: Vec<Bus<f64>> = (1..=n_buses)
        .map(|k| Bus {
            id: k.to_string(),
            nominal_kv: 2.4,
        })
        .collect();
    let z_base = 2.4 * 2.4 * 1000.0 / s_base;
    let mut lines = Vec::new();
    for k in 2..=n_buses {
        let parent = rng.gen_range(1..k);
        lines.push(Line {
            from: parent.to_string(),
            to: k.to_string(),
            resistance_ohm: rng.gen_range(0.001..0.02) * z_base,
            reactance_ohm: rng.gen_range(0.005..0.08) * z_base,
        });
    }
    let mut loads = Vec::new();
    for k in 2..=n_buses {
        if rng.gen_bool(0.8) {
            loads.push(Load {
                bus: k.to_string(),
                p_base_kw: rng.gen_range(0.0..300.0),
                q_base_kvar: rng.gen_range(0.0..120.0),
            });
        }
    }
    let mut capacitors = Vec::new();
    if n_buses > 1 && rng.gen_bool(0.3) {
        capacitors.push(ShuntCapacitor {
            bus: rng.gen_range(2..=n_buses).to_string(),
            q_rated_kvar: rng.gen_range(0.0..150.0),
        });
    }
    FeederModel::new(buses, lines, loads, capacitors, "1".to_string(), s_base).unwrap()
}
