//! Closed-form residuals of the costate equation and the equilibrium
//! condition along recorded trajectories.
//!
//! All conditional expectations are evaluated exactly from the recorded
//! predictor bank using only ω(τ) ⟂ F_0(τ), E ω = 0, E ω² = σ² and the tower
//! rule, so residuals of the optimal policy sit at rounding level.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{max_abs_vec, vstack_vec, Mat, Vector};
use crate::model::ProblemSpec;
use crate::predictor::{StepRecord, TrajectoryRecord};
use crate::riccati::RiccatiSolution;

/// Where a maximum residual was attained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Location {
    pub tau: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<usize>,
}

/// Maximum of a family of residuals.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub name: String,
    /// Largest absolute residual (max-norm).
    pub max_abs: f64,
    /// Largest residual relative to max(1, magnitude of its leading term).
    pub max_rel: f64,
    /// Location of `max_rel`.
    pub location: Option<Location>,
    /// Scale used at that location.
    pub scale: f64,
    /// Number of residual vectors evaluated.
    pub evaluated: usize,
}

impl ResidualReport {
    pub fn new(name: impl Into<String>) -> Self {
        ResidualReport {
            name: name.into(),
            max_abs: 0.0,
            max_rel: 0.0,
            location: None,
            scale: 1.0,
            evaluated: 0,
        }
    }

    /// Record one residual of absolute size `abs` whose leading term has size `lead`.
    pub fn record(&mut self, abs: f64, lead: f64, loc: Location) {
        let scale = lead.max(1.0);
        let rel = abs / scale;
        self.evaluated += 1;
        self.max_abs = self.max_abs.max(abs);
        if rel > self.max_rel || self.location.is_none() {
            self.max_rel = rel;
            self.location = Some(loc);
            self.scale = scale;
        }
    }

    /// Fold another report (same check, other trajectories) into this one.
    pub fn merge(&mut self, other: &ResidualReport) {
        self.max_abs = self.max_abs.max(other.max_abs);
        self.evaluated += other.evaluated;
        if other.location.is_some() && (other.max_rel > self.max_rel || self.location.is_none()) {
            self.max_rel = other.max_rel;
            self.location = other.location;
            self.scale = other.scale;
        }
    }
}

fn require_full(spec: &ProblemSpec, traj: &TrajectoryRecord) -> Result<()> {
    if traj.steps.len() != spec.gamma() + 1 {
        return Err(Error::MissingHistory(format!(
            "{} recorded steps for a horizon of {}",
            traj.steps.len(),
            spec.gamma() + 1
        )));
    }
    Ok(())
}

/// θ(τ) = Φ(τ+1)x(τ+1) + Φ̄(τ+1)Ex(τ+1) + Σ_j φ_j(τ+1) x̂_{τ+1/τ+1−j} + ψ(τ+1)
/// for τ = −1..=Γ, stored at index τ+1.
pub fn costate_path(spec: &ProblemSpec, traj: &TrajectoryRecord, sol: &RiccatiSolution) -> Result<Vec<Vector>> {
    require_full(spec, traj)?;
    Ok((0..=spec.gamma() + 1)
        .map(|t| {
            let st = traj.state(t).expect("full history");
            let mut th = &sol.phi[t] * &st.x + &sol.phibar[t] * &st.mu + &sol.psi[t];
            for j in 1..=spec.h() {
                th += &sol.varphi[j - 1][t] * st.slot(j);
            }
            th
        })
        .collect())
}

/// Weights at stage τ+1 used by the conditional expectations.
struct NextWeights {
    phi: Mat,
    phibar: Mat,
    varphi: Vec<Mat>,
    total: Mat,
    psi: Vector,
}

impl NextWeights {
    fn at(sol: &RiccatiSolution, t: usize) -> Self {
        NextWeights {
            phi: sol.phi[t].clone(),
            phibar: sol.phibar[t].clone(),
            varphi: sol.varphi.iter().map(|v| v[t].clone()).collect(),
            total: sol.total_weight(t),
            psi: sol.psi[t].clone(),
        }
    }

    /// E[θ(τ) | F_r(τ)] given E[x(τ+1) | F_q(τ)] for every q.
    fn cond_theta(&self, rec: &StepRecord, mu_next: &Vector, r: usize) -> Vector {
        let mut e = &self.phi * &rec.xnext_cond[r] + &self.phibar * mu_next + &self.psi;
        for (l, w) in self.varphi.iter().enumerate() {
            // φ_{l+1} weights x̂_{τ+1/τ−l} = E[x(τ+1) | F_l(τ)]; project onto F_r(τ).
            e += w * &rec.xnext_cond[l.max(r)];
        }
        e
    }

    fn mean_theta(&self, mu_next: &Vector) -> Vector {
        &self.total * mu_next + &self.psi
    }
}

/// E[b(τ) | F_r(τ)] for the noise multiplier b = Cx + C̄Ex + Σ(D_m v_m + D̄_m Ev_m).
fn cond_noise(spec: &ProblemSpec, rec: &StepRecord, r: usize) -> Vector {
    let dy = &spec.dynamics;
    let mut b = &dy.c * rec.state.slot(r) + &dy.cbar * &rec.state.mu;
    for m in 0..=spec.h() {
        b += &dy.d[m] * &rec.controls.vhat[m][r] + &dy.dbar[m] * &rec.controls.ev[m];
    }
    b
}

fn mean_noise(spec: &ProblemSpec, rec: &StepRecord) -> Vector {
    let dy = &spec.dynamics;
    let mut b = (&dy.c + &dy.cbar) * &rec.state.mu;
    for m in 0..=spec.h() {
        b += (&dy.d[m] + &dy.dbar[m]) * &rec.controls.ev[m];
    }
    b
}

/// Residual of
/// θ(τ−1) = Qx + Q̄Ex + E[A(τ)ᵀθ(τ) | F_0(τ)] + E[Ā(τ)ᵀθ(τ)]
/// at every τ, relative to max(1, ‖θ(τ−1)‖).
pub fn costate_residual(spec: &ProblemSpec, traj: &TrajectoryRecord, sol: &RiccatiSolution) -> Result<ResidualReport> {
    let theta = costate_path(spec, traj, sol)?;
    let dy = &spec.dynamics;
    let co = &spec.cost;
    let mut rep = ResidualReport::new("costate");
    for (tau, rec) in traj.steps.iter().enumerate() {
        let w = NextWeights::at(sol, tau + 1);
        let mu_next = &traj.state(tau + 1).expect("full").mu;
        let b = cond_noise(spec, rec, 0);
        let rhs = &co.q * &rec.state.x
            + &co.qbar * &rec.state.mu
            + dy.a.transpose() * w.cond_theta(rec, mu_next, 0)
            + dy.c.transpose() * (&w.phi * b) * dy.sigma2
            + dy.abar.transpose() * w.mean_theta(mu_next)
            + dy.cbar.transpose() * (&w.phi * mean_noise(spec, rec)) * dy.sigma2;
        let r = &theta[tau] - rhs;
        rep.record(
            max_abs_vec(&r),
            max_abs_vec(&theta[tau]),
            Location {
                tau,
                run: Some(traj.run),
                ..Default::default()
            },
        );
    }
    Ok(rep)
}

/// Equilibrium expression of controller k projected onto F_r(τ):
/// R_k E[v_k|F_r] + R̄_k Ev_k + E[B_k(τ)ᵀθ(τ) | F_r] + E[B̄_k(τ)ᵀθ(τ)],
/// returned with the size of its largest term.
fn equilibrium_term(
    spec: &ProblemSpec,
    rec: &StepRecord,
    w: &NextWeights,
    mu_next: &Vector,
    k: usize,
    r: usize,
) -> (Vector, f64) {
    let dy = &spec.dynamics;
    let co = &spec.cost;
    let s2 = dy.sigma2;
    let terms = [
        &co.r[k] * &rec.controls.vhat[k][r],
        &co.rbar[k] * &rec.controls.ev[k],
        dy.b[k].transpose() * w.cond_theta(rec, mu_next, r),
        dy.d[k].transpose() * (&w.phi * cond_noise(spec, rec, r)) * s2,
        dy.bbar[k].transpose() * w.mean_theta(mu_next),
        dy.dbar[k].transpose() * (&w.phi * mean_noise(spec, rec)) * s2,
    ];
    let lead = terms.iter().map(max_abs_vec).fold(0.0, f64::max);
    let sum = terms.iter().skip(1).fold(terms[0].clone(), |acc, t| acc + t);
    (sum, lead)
}

/// Equilibrium residual reports: per-controller condition at its own
/// information level, the stacked conditions for 𝐕_i (all controllers
/// k ≤ i projected onto F_i), the orthogonal parts for pairs j < i, and the
/// mean condition.
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumReports {
    pub individual: ResidualReport,
    pub stacked: ResidualReport,
    pub orthogonal: ResidualReport,
    pub mean: ResidualReport,
}

impl EquilibriumReports {
    pub fn new() -> Self {
        EquilibriumReports {
            individual: ResidualReport::new("equilibrium"),
            stacked: ResidualReport::new("equilibrium stacked"),
            orthogonal: ResidualReport::new("equilibrium orthogonal"),
            mean: ResidualReport::new("equilibrium mean"),
        }
    }

    pub fn merge(&mut self, other: &EquilibriumReports) {
        self.individual.merge(&other.individual);
        self.stacked.merge(&other.stacked);
        self.orthogonal.merge(&other.orthogonal);
        self.mean.merge(&other.mean);
    }

    /// Largest relative residual over all forms.
    pub fn max_rel(&self) -> f64 {
        self.all().iter().map(|r| r.max_rel).fold(0.0, f64::max)
    }

    pub fn all(&self) -> [&ResidualReport; 4] {
        [&self.individual, &self.stacked, &self.orthogonal, &self.mean]
    }
}

impl Default for EquilibriumReports {
    fn default() -> Self {
        Self::new()
    }
}

/// Evaluate the equilibrium condition for every active (i, τ) along `traj`.
pub fn equilibrium_residual(
    spec: &ProblemSpec,
    traj: &TrajectoryRecord,
    sol: &RiccatiSolution,
) -> Result<EquilibriumReports> {
    require_full(spec, traj)?;
    let dy = &spec.dynamics;
    let co = &spec.cost;
    let h = spec.h();
    let mut out = EquilibriumReports::new();
    for (tau, rec) in traj.steps.iter().enumerate() {
        let w = NextWeights::at(sol, tau + 1);
        let mu_next = &traj.state(tau + 1).expect("full").mu;
        let active = tau.min(h);
        // cond[k][r] for k ≤ active, r = k..=h.
        let cond: Vec<Vec<(Vector, f64)>> = (0..=active)
            .map(|k| {
                (0..=h)
                    .map(|r| equilibrium_term(spec, rec, &w, mu_next, k, r))
                    .collect()
            })
            .collect();
        let loc = |i: usize, j: Option<usize>| Location {
            tau,
            i: Some(i),
            j,
            run: Some(traj.run),
        };
        for i in 0..=active {
            let (r, lead) = &cond[i][i];
            out.individual.record(max_abs_vec(r), *lead, loc(i, None));

            let parts: Vec<&Vector> = (0..=i).map(|k| &cond[k][i].0).collect();
            let lead_st = (0..=i).map(|k| cond[k][i].1).fold(0.0, f64::max);
            out.stacked
                .record(max_abs_vec(&vstack_vec(&parts)), lead_st, loc(i, None));

            for j in 0..i {
                let diff = &cond[j][j].0 - &cond[j][i].0;
                let lead = cond[j][j].1.max(cond[j][i].1);
                out.orthogonal.record(max_abs_vec(&diff), lead, loc(i, Some(j)));
            }

            let mean_terms = [
                (&co.r[i] + &co.rbar[i]) * &rec.controls.ev[i],
                (&dy.b[i] + &dy.bbar[i]).transpose() * w.mean_theta(mu_next),
                (&dy.d[i] + &dy.dbar[i]).transpose() * (&w.phi * mean_noise(spec, rec)) * dy.sigma2,
            ];
            let lead = mean_terms.iter().map(max_abs_vec).fold(0.0, f64::max);
            let sum = &mean_terms[0] + &mean_terms[1] + &mean_terms[2];
            out.mean.record(max_abs_vec(&sum), lead, loc(i, None));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_example, random_spec, RandomSpecOptions};
    use crate::predictor::{noise_stream, simulate, NoiseKind};
    use crate::riccati::{backward_pass, synthesize_gains};

    #[test]
    fn sec5_residuals_vanish() {
        let s = builtin_example("sec5").unwrap();
        let sol = backward_pass(&s).unwrap();
        let p = synthesize_gains(&s, &sol);
        for t in simulate(&s, &p, 1, 10, NoiseKind::Gaussian) {
            let c = costate_residual(&s, &t, &sol).unwrap();
            assert!(c.max_rel < 1e-12, "{c:?}");
            let e = equilibrium_residual(&s, &t, &sol).unwrap();
            assert!(e.max_rel() < 1e-12, "{e:?}");
        }
    }

    #[test]
    fn random_residuals_vanish_with_warmup() {
        let mut rng = noise_stream(12, 0);
        for k in 0..6 {
            let s = random_spec(
                &mut rng,
                &RandomSpecOptions {
                    n: 1 + k % 3,
                    m: vec![1 + k % 2; 1 + k % 3],
                    gamma: 5,
                    scale: 0.6,
                    warmup: true,
                    sigma2: None,
                    zero_bar: false,
                },
            );
            let sol = backward_pass(&s).unwrap();
            let p = synthesize_gains(&s, &sol);
            for t in simulate(&s, &p, 2, 3, NoiseKind::Gaussian) {
                assert!(costate_residual(&s, &t, &sol).unwrap().max_rel < 1e-10);
                assert!(equilibrium_residual(&s, &t, &sol).unwrap().max_rel() < 1e-10);
            }
        }
    }

    #[test]
    fn terminal_costate() {
        let s = builtin_example("sec5").unwrap();
        let sol = backward_pass(&s).unwrap();
        let p = synthesize_gains(&s, &sol);
        let t = &simulate(&s, &p, 0, 1, NoiseKind::Gaussian)[0];
        let th = costate_path(&s, t, &sol).unwrap();
        let last = &s.cost.phi_t * &t.terminal.x + &s.cost.phibar_t * &t.terminal.mu;
        assert_eq!(th[s.gamma() + 1], last);
    }

    #[test]
    fn perturbations_are_detected() {
        let s = builtin_example("sec5").unwrap();
        let sol = backward_pass(&s).unwrap();
        let p = synthesize_gains(&s, &sol);
        let mut bad = p.clone();
        bad.kpred[1][1][1][(0, 0)] += 1e-3;
        let t = &simulate(&s, &bad, 0, 1, NoiseKind::Gaussian)[0];
        let e = equilibrium_residual(&s, t, &sol).unwrap();
        assert!(e.individual.max_rel >= 1e-4, "{e:?}");
        assert_eq!(e.individual.location.unwrap().i, Some(1));

        // The response is proportional to the state at the perturbed stage,
        // so take the maximum over a batch of paths.
        let mut sol_bad = sol.clone();
        sol_bad.phi[3][(0, 0)] += 1e-3;
        let worst = simulate(&s, &p, 0, 10, NoiseKind::Gaussian)
            .iter()
            .map(|t| costate_residual(&s, t, &sol_bad).unwrap().max_rel)
            .fold(0.0, f64::max);
        assert!(worst >= 1e-4, "{worst}");
    }

    #[test]
    fn zero_dynamics_have_zero_residual() {
        let mut s = crate::model::ProblemSpec::zeros(2, &[1, 1], 3);
        s.init.x0 = Vector::from_vec(vec![1.0, 1.0]);
        for r in s.cost.r.iter_mut() {
            *r = Mat::identity(1, 1);
        }
        let sol = backward_pass(&s).unwrap();
        let p = synthesize_gains(&s, &sol);
        let t = &simulate(&s, &p, 0, 1, NoiseKind::Gaussian)[0];
        assert_eq!(equilibrium_residual(&s, t, &sol).unwrap().max_rel(), 0.0);
    }

    #[test]
    fn truncated_history_is_rejected() {
        let s = builtin_example("sec5").unwrap();
        let sol = backward_pass(&s).unwrap();
        let p = synthesize_gains(&s, &sol);
        let mut t = simulate(&s, &p, 0, 1, NoiseKind::Gaussian).remove(0);
        t.steps.pop();
        assert!(matches!(costate_path(&s, &t, &sol), Err(Error::MissingHistory(_))));
    }
}
