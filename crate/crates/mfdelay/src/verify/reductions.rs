//! Special cases with independent reference solutions.
//!
//! * σ² = 0: the state is deterministic, every controller knows everything,
//!   and the problem is a deterministic LQ problem on the combined system
//!   (A+Ā, B_i+B̄_i, Q+Q̄, R_i+R̄_i) with warm-up inputs as known forcing.
//! * No mean-field terms: Φ̄ ≡ 0 and the mean gains vanish exactly.
//! * h = 0: a single controller with full information; checked against the oracle.

use serde::Serialize;

use crate::error::Result;
use crate::linalg::{block_diag, hstack, Factored, Mat, Vector};
use crate::model::ProblemSpec;
use crate::riccati::{backward_pass, optimal_cost, synthesize_gains};

use super::oracle::{brute_force_oracle, oracle_fits, OracleResult};

/// Optimal cost of the deterministic problem on the combined system, by an
/// affine dynamic-programming pass V_τ(x) = xᵀP x + 2pᵀx + r.
pub fn deterministic_lq_cost(spec: &ProblemSpec) -> f64 {
    let n = spec.n();
    let h = spec.h();
    let dy = &spec.dynamics;
    let co = &spec.cost;
    let a = &dy.a + &dy.abar;
    let q = &co.q + &co.qbar;
    let b_all: Vec<Mat> = (0..=h).map(|k| &dy.b[k] + &dy.bbar[k]).collect();
    let r_all: Vec<Mat> = (0..=h).map(|k| &co.r[k] + &co.rbar[k]).collect();
    let mut p = &co.phi_t + &co.phibar_t;
    let mut lin = Vector::zeros(n);
    let mut r0 = 0.0;
    for tau in (0..=spec.gamma()).rev() {
        let active = tau.min(h);
        let b = hstack(&b_all[..=active].iter().collect::<Vec<_>>(), n);
        let r = block_diag(&r_all[..=active].iter().collect::<Vec<_>>());
        let mut forcing = Vector::zeros(n);
        let mut known = 0.0;
        for k in active + 1..=h {
            let u = &spec.init.warmup[k][tau];
            forcing += &b_all[k] * u;
            known += u.dot(&(&r_all[k] * u));
        }
        let hess = &r + b.transpose() * &p * &b;
        let fac = Factored::new(&hess);
        let gain = -fac.solve(&(b.transpose() * &p * &a));
        let off = -fac.solve_vec(&(b.transpose() * (&p * &forcing + &lin)));
        let f = &a + &b * &gain;
        let fo = &b * &off + &forcing;
        let p_new = &q + gain.transpose() * &r * &gain + f.transpose() * &p * &f;
        let lin_new = gain.transpose() * (&r * &off) + f.transpose() * (&p * &fo + &lin);
        r0 += off.dot(&(&r * &off)) + fo.dot(&(&p * &fo)) + 2.0 * lin.dot(&fo) + known;
        p = (&p_new + p_new.transpose()) * 0.5;
        lin = lin_new;
    }
    let x0 = &spec.init.x0;
    x0.dot(&(&p * x0)) + 2.0 * lin.dot(x0) + r0
}

/// Copy of `spec` with σ² = 0.
pub fn noiseless(spec: &ProblemSpec) -> ProblemSpec {
    let mut s = spec.clone();
    s.dynamics.sigma2 = 0.0;
    s
}

/// Copy of `spec` with every mean-field matrix and weight set to zero.
pub fn without_mean_field(spec: &ProblemSpec) -> ProblemSpec {
    let mut s = spec.clone();
    let dy = &mut s.dynamics;
    dy.abar.fill(0.0);
    dy.cbar.fill(0.0);
    for m in dy.bbar.iter_mut().chain(dy.dbar.iter_mut()) {
        m.fill(0.0);
    }
    let co = &mut s.cost;
    co.qbar.fill(0.0);
    co.phibar_t.fill(0.0);
    for m in co.rbar.iter_mut() {
        m.fill(0.0);
    }
    s
}

/// Copy of `spec` keeping only controller 0.
pub fn single_controller(spec: &ProblemSpec) -> ProblemSpec {
    let mut s = spec.clone();
    s.dims.h = 0;
    s.dims.m.truncate(1);
    let dy = &mut s.dynamics;
    for v in [&mut dy.b, &mut dy.bbar, &mut dy.d, &mut dy.dbar] {
        v.truncate(1);
    }
    s.cost.r.truncate(1);
    s.cost.rbar.truncate(1);
    s.init.warmup.truncate(1);
    s
}

/// Largest horizon Γ' ≤ Γ for which the oracle fits.
pub fn oracle_horizon(spec: &ProblemSpec) -> usize {
    (0..=spec.gamma())
        .rev()
        .find(|g| oracle_fits(&spec.with_gamma(*g)))
        .unwrap_or(0)
}

/// Results of the three reductions.
#[derive(Debug, Clone, Serialize)]
pub struct ReductionReport {
    /// |J*(σ²=0) − J_DP| / max(1, J_DP).
    pub noiseless_rel_gap: f64,
    pub noiseless_cost: f64,
    pub dp_cost: f64,
    /// Largest |entry| of Φ̄ and of the mean gains without mean-field terms.
    pub zero_bar_phibar_max: f64,
    pub zero_bar_kmean_max: f64,
    /// Oracle comparison of the single-controller copy (horizon possibly truncated).
    pub single_controller: OracleResult,
}

/// Evaluate all reductions derived from `spec`.
pub fn reductions(spec: &ProblemSpec) -> Result<ReductionReport> {
    let quiet = noiseless(spec);
    let noiseless_cost = optimal_cost(&quiet, &backward_pass(&quiet)?);
    let dp_cost = deterministic_lq_cost(&quiet);

    let plain = without_mean_field(spec);
    let sol = backward_pass(&plain)?;
    let pol = synthesize_gains(&plain, &sol);
    let zero_bar_phibar_max = sol.phibar.iter().map(|m| m.amax()).fold(0.0, f64::max);
    let mut zero_bar_kmean_max: f64 = 0.0;
    for i in 0..=plain.h() {
        for tau in i..=plain.gamma() {
            zero_bar_kmean_max = zero_bar_kmean_max.max(pol.kmean[i][tau].amax());
        }
    }

    let single = single_controller(spec);
    let single = single.with_gamma(oracle_horizon(&single));
    let single_controller = brute_force_oracle(&single)?;

    Ok(ReductionReport {
        noiseless_rel_gap: (noiseless_cost - dp_cost).abs() / dp_cost.abs().max(1.0),
        noiseless_cost,
        dp_cost,
        zero_bar_phibar_max,
        zero_bar_kmean_max,
        single_controller,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_example, random_spec, RandomSpecOptions};
    use crate::predictor::noise_stream;

    #[test]
    fn sec5_reductions_hold() {
        let r = reductions(&builtin_example("sec5").unwrap()).unwrap();
        assert!(r.noiseless_rel_gap < 1e-10, "{r:?}");
        assert_eq!(r.zero_bar_phibar_max, 0.0);
        assert_eq!(r.zero_bar_kmean_max, 0.0);
        assert!(r.single_controller.rel_cost_gap < 1e-9);
    }

    #[test]
    fn dp_matches_with_warmup() {
        let mut rng = noise_stream(8, 1);
        for _ in 0..4 {
            let s = noiseless(&random_spec(
                &mut rng,
                &RandomSpecOptions {
                    n: 3,
                    m: vec![1, 2, 1],
                    gamma: 5,
                    scale: 0.6,
                    warmup: true,
                    sigma2: Some(0.0),
                    zero_bar: false,
                },
            ));
            let j = optimal_cost(&s, &backward_pass(&s).unwrap());
            let d = deterministic_lq_cost(&s);
            assert!((j - d).abs() < 1e-10 * d.abs().max(1.0), "{j} {d}");
        }
    }

    #[test]
    fn oracle_horizon_truncates_long_instances() {
        let s = builtin_example("sec5-long").unwrap();
        let g = oracle_horizon(&s);
        assert!((5..100).contains(&g));
        assert!(oracle_fits(&s.with_gamma(g)));
        assert!(!oracle_fits(&s.with_gamma(g + 1)));
    }
}
