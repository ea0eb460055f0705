//! Brute-force certificate of optimality under two-point noise.
//!
//! With ω(τ) ∈ {−σ, +σ} equiprobable (same first two moments as any other
//! admissible noise, hence the same Riccati solution), controller i's
//! information at τ is the atom ω(0..τ−i−1), and the most general admissible
//! action is one free vector per atom. The state on every noise path is
//! affine in the stacked free vectors, so the exact expected cost is a
//! convex quadratic J(θ) = θᵀHθ + 2gᵀθ + c₀ whose minimizer solves Hθ = −g.
//! The optimum is compared with the Riccati cost and, path by path, with the
//! actions of the synthesized policy.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{Factored, Mat, Vector};
use crate::model::ProblemSpec;
use crate::predictor::simulate_path;
use crate::riccati::{backward_pass, optimal_cost, synthesize_gains};

/// Largest number of free parameters the oracle accepts.
pub const ORACLE_PARAM_LIMIT: usize = 1024;
/// Largest number of noise paths the oracle enumerates.
pub const ORACLE_PATH_LIMIT: usize = 256;
/// Reciprocal condition number below which the normal equations count as singular.
pub const ORACLE_RCOND_MIN: f64 = 1e-14;

/// Outcome of [`brute_force_oracle`].
#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    pub gamma: usize,
    pub params: usize,
    pub paths: usize,
    pub oracle_cost: f64,
    pub riccati_cost: f64,
    /// |oracle_cost − riccati_cost|.
    pub cost_gap: f64,
    /// cost_gap / max(1, riccati_cost).
    pub rel_cost_gap: f64,
    /// max over paths, controllers and times of |oracle action − policy action| / max(1, |policy action|).
    pub max_action_gap: f64,
    /// (path, i, τ) attaining `max_action_gap`.
    pub gap_location: Option<(usize, usize, usize)>,
    /// Oracle actions `[path][i][τ]` (warm-up values for τ < i).
    #[serde(skip)]
    pub actions: Vec<Vec<Vec<Vector>>>,
}

fn noise_values(sigma2: f64) -> Vec<f64> {
    let s = sigma2.sqrt();
    if s == 0.0 {
        vec![0.0]
    } else {
        vec![-s, s]
    }
}

/// Parameter count and path count of the oracle instance for `spec`.
pub fn oracle_size(spec: &ProblemSpec) -> (usize, usize) {
    let v = noise_values(spec.dynamics.sigma2).len();
    let paths = v.saturating_pow((spec.gamma() + 1) as u32);
    let params = (0..=spec.h())
        .map(|i| {
            (i..=spec.gamma())
                .map(|t| v.saturating_pow((t - i) as u32).saturating_mul(spec.dims.m[i]))
                .fold(0usize, |a, b| a.saturating_add(b))
        })
        .fold(0usize, |a, b| a.saturating_add(b));
    (params, paths)
}

/// Whether `spec` fits the oracle limits.
pub fn oracle_fits(spec: &ProblemSpec) -> bool {
    let (params, paths) = oracle_size(spec);
    params <= ORACLE_PARAM_LIMIT && paths <= ORACLE_PATH_LIMIT
}

/// Affine function of the parameters: M θ + c.
#[derive(Clone)]
struct Affine {
    m: Mat,
    c: Vector,
}

struct Quadratic {
    h: Mat,
    g: Vector,
    c0: f64,
}

impl Quadratic {
    /// Add w · E[(Mθ+c)ᵀ W (Mθ+c)] for one affine term.
    fn add(&mut self, a: &Affine, weight: &Mat, w: f64) {
        let wm = weight * &a.m;
        self.h += a.m.transpose() * &wm * w;
        self.g += a.m.transpose() * (weight * &a.c) * w;
        self.c0 += w * a.c.dot(&(weight * &a.c));
    }
}

fn mean(list: &[Affine]) -> Affine {
    let k = list.len() as f64;
    let mut out = list[0].clone();
    for a in &list[1..] {
        out.m += &a.m;
        out.c += &a.c;
    }
    out.m /= k;
    out.c /= k;
    out
}

/// Solve the two-point-noise problem by exhaustive path enumeration and
/// compare with the Riccati solution.
pub fn brute_force_oracle(spec: &ProblemSpec) -> Result<OracleResult> {
    let (params, paths) = oracle_size(spec);
    if params > ORACLE_PARAM_LIMIT || paths > ORACLE_PATH_LIMIT {
        return Err(Error::TooLarge {
            params,
            paths,
            limit: ORACLE_PARAM_LIMIT,
        });
    }
    let n = spec.n();
    let h = spec.h();
    let g = spec.gamma();
    let dy = &spec.dynamics;
    let co = &spec.cost;
    let values = noise_values(dy.sigma2);
    let base = values.len();
    let prob = 1.0 / paths as f64;

    // digits[path][t] selects ω(t) = values[digit].
    let digits: Vec<Vec<usize>> = (0..paths)
        .map(|mut k| {
            (0..=g)
                .map(|_| {
                    let d = k % base;
                    k /= base;
                    d
                })
                .collect()
        })
        .collect();
    // Offset of the parameter block of (i, τ) for atom code 0.
    let mut block_start = vec![vec![0usize; g + 1]; h + 1];
    let mut next = 0;
    for i in 0..=h {
        for t in i..=g {
            block_start[i][t] = next;
            next += base.pow((t - i) as u32) * spec.dims.m[i];
        }
    }
    debug_assert_eq!(next, params);
    let param_offset = |i: usize, t: usize, path: usize| -> usize {
        let code = digits[path][..t - i].iter().rev().fold(0usize, |acc, d| acc * base + d);
        block_start[i][t] + code * spec.dims.m[i]
    };

    let mut quad = Quadratic {
        h: Mat::zeros(params, params),
        g: Vector::zeros(params),
        c0: 0.0,
    };
    let mut x: Vec<Affine> = vec![
        Affine {
            m: Mat::zeros(n, params),
            c: spec.init.x0.clone(),
        };
        paths
    ];
    for t in 0..=g {
        let ex = mean(&x);
        for a in &x {
            quad.add(a, &co.q, prob);
        }
        quad.add(&ex, &co.qbar, 1.0);
        let mut controls: Vec<(Vec<Affine>, Affine)> = Vec::with_capacity(h + 1);
        for i in 0..=h {
            let mi = spec.dims.m[i];
            let per_path: Vec<Affine> = (0..paths)
                .map(|k| {
                    let mut a = Affine {
                        m: Mat::zeros(mi, params),
                        c: Vector::zeros(mi),
                    };
                    if spec.is_active(i, t) {
                        let o = param_offset(i, t, k);
                        a.m.view_mut((0, o), (mi, mi)).fill_with_identity();
                    } else {
                        a.c = spec.init.warmup[i][t].clone();
                    }
                    a
                })
                .collect();
            let ev = mean(&per_path);
            for a in &per_path {
                quad.add(a, &co.r[i], prob);
            }
            quad.add(&ev, &co.rbar[i], 1.0);
            controls.push((per_path, ev));
        }
        x = (0..paths)
            .map(|k| {
                let w = values[digits[k][t]];
                let a = &dy.a + &dy.c * w;
                let ab = &dy.abar + &dy.cbar * w;
                let mut m = &a * &x[k].m + &ab * &ex.m;
                let mut c = &a * &x[k].c + &ab * &ex.c;
                for (i, (per_path, ev)) in controls.iter().enumerate() {
                    let b = &dy.b[i] + &dy.d[i] * w;
                    let bb = &dy.bbar[i] + &dy.dbar[i] * w;
                    m += &b * &per_path[k].m + &bb * &ev.m;
                    c += &b * &per_path[k].c + &bb * &ev.c;
                }
                Affine { m, c }
            })
            .collect();
    }
    let ex = mean(&x);
    for a in &x {
        quad.add(a, &co.phi_t, prob);
    }
    quad.add(&ex, &co.phibar_t, 1.0);

    let hs = (&quad.h + quad.h.transpose()) * 0.5;
    let fac = Factored::new(&hs);
    if fac.rcond < ORACLE_RCOND_MIN {
        return Err(Error::OracleSingular { rcond: fac.rcond });
    }
    let theta = -fac.solve_vec(&quad.g);
    let oracle_cost = theta.dot(&(&hs * &theta)) + 2.0 * quad.g.dot(&theta) + quad.c0;

    let sol = backward_pass(spec)?;
    let riccati_cost = optimal_cost(spec, &sol);
    let policy = synthesize_gains(spec, &sol);

    let mut actions = Vec::with_capacity(paths);
    let mut max_action_gap = 0.0;
    let mut gap_location = None;
    for k in 0..paths {
        let omegas: Vec<f64> = digits[k].iter().map(|d| values[*d]).collect();
        let traj = simulate_path(spec, &policy, &omegas, k);
        let mut per_i = Vec::with_capacity(h + 1);
        for i in 0..=h {
            let mut per_t = Vec::with_capacity(g + 1);
            for t in 0..=g {
                let act = if spec.is_active(i, t) {
                    let o = param_offset(i, t, k);
                    theta.rows(o, spec.dims.m[i]).into_owned()
                } else {
                    spec.init.warmup[i][t].clone()
                };
                let reference = &traj.steps[t].controls.v[i];
                let scale = reference.amax().max(1.0);
                let gap = (&act - reference).amax() / scale;
                if gap > max_action_gap || gap_location.is_none() {
                    max_action_gap = gap;
                    gap_location = Some((k, i, t));
                }
                per_t.push(act);
            }
            per_i.push(per_t);
        }
        actions.push(per_i);
    }
    let cost_gap = (oracle_cost - riccati_cost).abs();
    Ok(OracleResult {
        gamma: g,
        params,
        paths,
        oracle_cost,
        riccati_cost,
        cost_gap,
        rel_cost_gap: cost_gap / riccati_cost.abs().max(1.0),
        max_action_gap,
        gap_location,
        actions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_example, random_spec, RandomSpecOptions};
    use crate::predictor::noise_stream;

    #[test]
    fn scalar_lqr_oracle() {
        let mut s = ProblemSpec::zeros(1, &[1], 0);
        let one = Mat::identity(1, 1);
        s.dynamics.a = one.clone();
        s.dynamics.b[0] = one.clone();
        s.dynamics.sigma2 = 0.0;
        s.cost.q = one.clone();
        s.cost.r[0] = one.clone();
        s.cost.phi_t = one;
        s.init.x0 = Vector::from_element(1, 1.0);
        let r = brute_force_oracle(&s).unwrap();
        assert!((r.oracle_cost - 1.5).abs() < 1e-12);
        assert!(r.max_action_gap < 1e-10);
        assert_eq!(r.paths, 1);
    }

    #[test]
    fn sec5_truncated_oracle_agrees() {
        let s = builtin_example("sec5").unwrap().with_gamma(3);
        let r = brute_force_oracle(&s).unwrap();
        assert!(r.rel_cost_gap < 1e-9, "{r:?}");
        assert!(r.max_action_gap < 1e-8, "{r:?}");
        assert_eq!(r.paths, 16);
    }

    #[test]
    fn random_with_warmup_agrees() {
        let mut rng = noise_stream(21, 0);
        for h in 0..3 {
            let s = random_spec(
                &mut rng,
                &RandomSpecOptions {
                    n: 2,
                    m: vec![1; h + 1],
                    gamma: 3,
                    scale: 0.6,
                    warmup: true,
                    sigma2: None,
                    zero_bar: false,
                },
            );
            let r = brute_force_oracle(&s).unwrap();
            assert!(r.rel_cost_gap < 1e-9, "{r:?}");
            assert!(r.max_action_gap < 1e-8, "{r:?}");
        }
    }

    #[test]
    fn size_limit_is_enforced() {
        let s = builtin_example("sec5-long").unwrap();
        assert!(!oracle_fits(&s));
        assert!(matches!(brute_force_oracle(&s), Err(Error::TooLarge { .. })));
        assert_eq!(oracle_size(&builtin_example("sec5").unwrap()), (218, 64));
    }
}
