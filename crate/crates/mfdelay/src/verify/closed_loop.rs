//! Affine closed-loop representation and exact cost by moment propagation.
//!
//! The augmented state z = [x; x̂_1; …; x̂_h] evolves under a linear policy as
//! z(τ+1) = F z + G Ex + g0 + ω(τ)(H z + W Ex + w0), where the constant
//! offsets g0, w0 carry warm-up actions and policy offsets, and
//! Ex(τ+1) = N Ex + n0. First and second moments of z therefore propagate in
//! closed form.

use serde::Serialize;

use crate::linalg::{min_sym_eig, Mat, Vector};
use crate::model::ProblemSpec;
use crate::riccati::LinearPolicy;

/// An affine map z ↦ P z + p Ex + p0.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub p: Mat,
    pub pm: Mat,
    pub p0: Vector,
}

impl AffineMap {
    fn zeros(rows: usize, zdim: usize, n: usize) -> Self {
        AffineMap {
            p: Mat::zeros(rows, zdim),
            pm: Mat::zeros(rows, n),
            p0: Vector::zeros(rows),
        }
    }

    /// Evaluate at (z, Ex).
    pub fn apply(&self, z: &Vector, mu: &Vector) -> Vector {
        &self.p * z + &self.pm * mu + &self.p0
    }
}

/// One closed-loop step in affine form.
#[derive(Debug, Clone)]
pub struct ClosedLoopStage {
    pub tau: usize,
    pub f: Mat,
    pub g: Mat,
    pub g0: Vector,
    /// Noise rows; nonzero only in the x block.
    pub h: Mat,
    pub w: Mat,
    pub w0: Vector,
    /// v_i(τ) as an affine map of (z, Ex).
    pub controls: Vec<AffineMap>,
    /// E v_i(τ) = mean_gain[i] Ex + mean_offset[i].
    pub mean_gain: Vec<Mat>,
    pub mean_offset: Vec<Vector>,
    /// Ex(τ+1) = mean_next Ex + mean_next0.
    pub mean_next: Mat,
    pub mean_next0: Vector,
}

/// z-block index helper: x̂_{τ/τ−j} lives in rows j·n .. (j+1)·n.
fn place(target: &mut Mat, row: usize, block: usize, n: usize, m: &Mat) {
    let mut view = target.view_mut((row, block * n), (m.nrows(), n));
    view += m;
}

/// Build the affine closed-loop map of stage τ, including the tower-rule
/// conditional means inside the predictor rows.
pub fn build_closed_loop(spec: &ProblemSpec, policy: &LinearPolicy, tau: usize) -> ClosedLoopStage {
    let n = spec.n();
    let h = spec.h();
    let zdim = (h + 1) * n;
    let dy = &spec.dynamics;

    // E[v_k | F_r] as affine maps, r = 0..=h.
    let cond: Vec<Vec<AffineMap>> = (0..=h)
        .map(|k| {
            let mk = spec.dims.m[k];
            (0..=h)
                .map(|r| {
                    let mut map = AffineMap::zeros(mk, zdim, n);
                    if spec.is_active(k, tau) {
                        for l in k..=h {
                            place(&mut map.p, 0, l.max(r), n, &policy.kpred[k][l][tau]);
                        }
                        map.pm = policy.kmean[k][tau].clone();
                        map.p0 = policy.offset[k][tau].clone();
                    } else {
                        map.p0 = policy.warmup[k][tau].clone();
                    }
                    map
                })
                .collect()
        })
        .collect();
    let (mean_gain, mean_offset): (Vec<Mat>, Vec<Vector>) = (0..=h)
        .map(|k| {
            if spec.is_active(k, tau) {
                (policy.mean_total(k, tau), policy.offset[k][tau].clone())
            } else {
                (Mat::zeros(spec.dims.m[k], n), policy.warmup[k][tau].clone())
            }
        })
        .unzip();

    let mut mean_next = &dy.a + &dy.abar;
    let mut mean_next0 = Vector::zeros(n);
    for k in 0..=h {
        let bb = &dy.b[k] + &dy.bbar[k];
        mean_next += &bb * &mean_gain[k];
        mean_next0 += &bb * &mean_offset[k];
    }

    // E[x(τ+1) | F_i(τ)] as affine maps.
    let xnext: Vec<AffineMap> = (0..=h)
        .map(|i| {
            let mut map = AffineMap::zeros(n, zdim, n);
            place(&mut map.p, 0, i, n, &dy.a);
            map.pm = dy.abar.clone();
            for k in 0..=h {
                map.p += &dy.b[k] * &cond[k][i].p;
                map.pm += &dy.b[k] * &cond[k][i].pm + &dy.bbar[k] * &mean_gain[k];
                map.p0 += &dy.b[k] * &cond[k][i].p0 + &dy.bbar[k] * &mean_offset[k];
            }
            map
        })
        .collect();

    let mut f = Mat::zeros(zdim, zdim);
    let mut g = Mat::zeros(zdim, n);
    let mut g0 = Vector::zeros(zdim);
    for j in 0..=h {
        let (p, pm, p0) = if j == 0 || j <= tau + 1 {
            let src = &xnext[j.saturating_sub(1)];
            (src.p.clone(), src.pm.clone(), src.p0.clone())
        } else {
            (Mat::zeros(n, zdim), mean_next.clone(), mean_next0.clone())
        };
        f.view_mut((j * n, 0), (n, zdim)).copy_from(&p);
        g.view_mut((j * n, 0), (n, n)).copy_from(&pm);
        g0.rows_mut(j * n, n).copy_from(&p0);
    }

    let mut h_rows = Mat::zeros(zdim, zdim);
    let mut w = Mat::zeros(zdim, n);
    let mut w0 = Vector::zeros(zdim);
    {
        let mut hx = Mat::zeros(n, zdim);
        place(&mut hx, 0, 0, n, &dy.c);
        let mut wx = dy.cbar.clone();
        let mut w0x = Vector::zeros(n);
        for k in 0..=h {
            hx += &dy.d[k] * &cond[k][0].p;
            wx += &dy.d[k] * &cond[k][0].pm + &dy.dbar[k] * &mean_gain[k];
            w0x += &dy.d[k] * &cond[k][0].p0 + &dy.dbar[k] * &mean_offset[k];
        }
        h_rows.view_mut((0, 0), (n, zdim)).copy_from(&hx);
        w.view_mut((0, 0), (n, n)).copy_from(&wx);
        w0.rows_mut(0, n).copy_from(&w0x);
    }

    ClosedLoopStage {
        tau,
        f,
        g,
        g0,
        h: h_rows,
        w,
        w0,
        controls: cond.into_iter().map(|mut c| c.swap_remove(0)).collect(),
        mean_gain,
        mean_offset,
        mean_next,
        mean_next0,
    }
}

/// First and second moments of the augmented state at one time.
#[derive(Debug, Clone, Serialize)]
pub struct MomentState {
    pub tau: usize,
    #[serde(skip)]
    pub m: Vector,
    #[serde(skip)]
    pub s: Mat,
    #[serde(skip)]
    pub mu: Vector,
    /// Smallest eigenvalue of the covariance S − m mᵀ.
    pub min_cov_eig: f64,
}

/// Exact expected cost together with the moment path τ = 0..=Γ+1.
#[derive(Debug, Clone)]
pub struct ExactCost {
    pub total: f64,
    pub stage_costs: Vec<f64>,
    pub terminal_cost: f64,
    pub moments: Vec<MomentState>,
}

fn trace_prod(a: &Mat, b: &Mat) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

/// Second moment of an affine image y = P z + q (q deterministic).
fn affine_second_moment(p: &Mat, q: &Vector, m: &Vector, s: &Mat) -> Mat {
    let pm = p * m;
    p * s * p.transpose() + &pm * q.transpose() + q * pm.transpose() + q * q.transpose()
}

/// Propagate moments and accumulate the exact expected cost of `policy`.
pub fn exact_cost_detail(spec: &ProblemSpec, policy: &LinearPolicy) -> ExactCost {
    let n = spec.n();
    let h = spec.h();
    let co = &spec.cost;
    let s2 = spec.dynamics.sigma2;
    let x0 = &spec.init.x0;
    let mut m = Vector::from_iterator((h + 1) * n, (0..=h).flat_map(|_| x0.iter().copied()));
    let mut s = &m * m.transpose();
    let mut mu = x0.clone();
    let mut moments = Vec::with_capacity(spec.gamma() + 2);
    let mut stage_costs = Vec::with_capacity(spec.gamma() + 1);
    let snapshot = |tau: usize, m: &Vector, s: &Mat, mu: &Vector| MomentState {
        tau,
        min_cov_eig: min_sym_eig(&(s - m * m.transpose())),
        m: m.clone(),
        s: s.clone(),
        mu: mu.clone(),
    };
    for tau in 0..=spec.gamma() {
        moments.push(snapshot(tau, &m, &s, &mu));
        let st = build_closed_loop(spec, policy, tau);
        let sxx = s.view((0, 0), (n, n)).into_owned();
        let mut cost = trace_prod(&co.q, &sxx) + mu.dot(&(&co.qbar * &mu));
        for k in 0..=h {
            let ctl = &st.controls[k];
            let q = &ctl.pm * &mu + &ctl.p0;
            let vv = affine_second_moment(&ctl.p, &q, &m, &s);
            let ev = &st.mean_gain[k] * &mu + &st.mean_offset[k];
            cost += trace_prod(&co.r[k], &vv) + ev.dot(&(&co.rbar[k] * &ev));
        }
        stage_costs.push(cost);

        let c = &st.g * &mu + &st.g0;
        let d = &st.w * &mu + &st.w0;
        let s_next = affine_second_moment(&st.f, &c, &m, &s) + affine_second_moment(&st.h, &d, &m, &s) * s2;
        m = &st.f * &m + c;
        s = (&s_next + s_next.transpose()) * 0.5;
        mu = &st.mean_next * &mu + &st.mean_next0;
    }
    moments.push(snapshot(spec.gamma() + 1, &m, &s, &mu));
    let sxx = s.view((0, 0), (n, n)).into_owned();
    let terminal_cost = trace_prod(&co.phi_t, &sxx) + mu.dot(&(&co.phibar_t * &mu));
    ExactCost {
        total: stage_costs.iter().sum::<f64>() + terminal_cost,
        stage_costs,
        terminal_cost,
        moments,
    }
}

/// Exact expected cost of a linear policy.
pub fn exact_cost(spec: &ProblemSpec, policy: &LinearPolicy) -> f64 {
    exact_cost_detail(spec, policy).total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_example, random_spec, RandomSpecOptions};
    use crate::predictor::{assemble_controls, noise_stream, simulate, step, NoiseKind, SimState};
    use crate::riccati::{backward_pass, optimal_cost, synthesize_gains};
    use rand::Rng;

    fn z_of(st: &SimState) -> Vector {
        let parts: Vec<&Vector> = std::iter::once(&st.x).chain(st.xhat.iter()).collect();
        crate::linalg::vstack_vec(&parts)
    }

    #[test]
    fn zero_policy_structure() {
        let mut s = builtin_example("sec5").unwrap();
        s.init.x0 = Vector::zeros(2);
        let p = LinearPolicy::zero(&s);
        let st = build_closed_loop(&s, &p, 3);
        assert!(st.controls.iter().all(|c| c.p.iter().all(|v| *v == 0.0)));
        assert_eq!(st.f.view((0, 0), (2, 2)).into_owned(), s.dynamics.a);
        assert_eq!(exact_cost(&s, &p), 0.0);
    }

    #[test]
    fn affine_map_matches_step() {
        let mut rng = noise_stream(77, 0);
        for warm in [false, true] {
            let s = random_spec(
                &mut rng,
                &RandomSpecOptions {
                    n: 2,
                    m: vec![1, 1, 2],
                    gamma: 4,
                    scale: 0.7,
                    warmup: warm,
                    sigma2: None,
                    zero_bar: false,
                },
            );
            let p = synthesize_gains(&s, &backward_pass(&s).unwrap());
            for t in simulate(&s, &p, 8, 10, NoiseKind::Gaussian) {
                for rec in &t.steps {
                    let tau = rec.state.tau;
                    let cl = build_closed_loop(&s, &p, tau);
                    // Random state with a consistent bank is not needed: the map is
                    // affine, so checking along sampled trajectories suffices.
                    let mut state = rec.state.clone();
                    state.x += Vector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
                    let z = z_of(&state);
                    let bundle = assemble_controls(&s, &p, &state);
                    let zero = step(&s, &state, &bundle, 0.0);
                    let one = step(&s, &state, &bundle, 1.0);
                    let det = &cl.f * &z + &cl.g * &state.mu + &cl.g0;
                    let noise = &cl.h * &z + &cl.w * &state.mu + &cl.w0;
                    assert!((det - z_of(&zero.next)).abs().max() < 1e-12);
                    assert!((noise - (z_of(&one.next) - z_of(&zero.next))).abs().max() < 1e-12);
                    for k in 0..=s.h() {
                        let v = cl.controls[k].apply(&z, &state.mu);
                        assert!((v - &bundle.v[k]).abs().max() < 1e-12);
                    }
                    assert!((&cl.mean_next * &state.mu + &cl.mean_next0 - &zero.next.mu).abs().max() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn exact_cost_matches_optimal_cost() {
        let s = builtin_example("sec5").unwrap();
        let sol = backward_pass(&s).unwrap();
        let p = synthesize_gains(&s, &sol);
        let d = exact_cost_detail(&s, &p);
        let j = optimal_cost(&s, &sol);
        assert!((d.total - j).abs() < 1e-10 * j, "{} vs {j}", d.total);
        for mstate in &d.moments {
            for b in 0..=s.h() {
                assert!((mstate.m.rows(2 * b, 2) - &mstate.mu).abs().max() < 1e-12);
            }
            assert!(mstate.min_cov_eig > -1e-10 * mstate.s.abs().max());
        }
    }

    #[test]
    fn exact_cost_matches_with_warmup() {
        let mut rng = noise_stream(3, 3);
        for _ in 0..5 {
            let s = random_spec(
                &mut rng,
                &RandomSpecOptions {
                    n: 2,
                    m: vec![1, 1, 1],
                    gamma: 4,
                    scale: 0.6,
                    warmup: true,
                    sigma2: None,
                    zero_bar: false,
                },
            );
            let sol = backward_pass(&s).unwrap();
            let j = optimal_cost(&s, &sol);
            let e = exact_cost(&s, &synthesize_gains(&s, &sol));
            assert!((j - e).abs() < 1e-9 * j.abs().max(1.0), "{j} {e}");
        }
    }
}
