//! Backward Riccati pass, decentralized gains and optimal cost.
//!
//! # Structure of the optimal solution
//!
//! Write y_0 = x(τ), y_j = x̂_{τ/τ−j} (1 ≤ j ≤ h), y_{h+1} = E x(τ) and the
//! *innovations* e_s = y_s − y_{s+1}, s = 0..h. Because the information sets
//! are nested, E[e_s | F_r(τ)] = e_s for s ≥ r and 0 for s < r. Expanding
//! every control as v_k = Σ_{s≥k} H_{k,s} e_s + M_k E x + κ_k, the first-order
//! condition of controller k splits into one equation per innovation and one
//! for the mean, and the equations for e_s couple exactly the controllers
//! 0..s. Stacking them gives, per stage τ and level s = 0..min(τ,h),
//!
//! ```text
//! Ῡ_s 𝐇_s = −Ȳ_s,  Ῡ_s = 𝐑_s + 𝐁_sᵀ Θ_{s+1}' 𝐁_s + σ² 𝐃_sᵀ Θ_0' 𝐃_s,
//!                  Ȳ_s = 𝐁_sᵀ Θ_{s+1}' A + σ² 𝐃_sᵀ Θ_0' C,
//! Θ_s = Q + Aᵀ Θ_{s+1}' (A + 𝐁_s 𝐇_s) + σ² Cᵀ Θ_0' (C + 𝐃_s 𝐇_s),
//! ```
//!
//! (primes denote stage τ+1, Θ_{h+1}' := Θ_h') and one mean-field system Υ, Y of
//! the same form over the active controllers with the barred sums A+Ā,
//! 𝐁+𝐁̄, 𝐑+𝐑̄, Q+Q̄ and Θ_μ' in place of Θ_{s+1}'. The costate is
//!
//! ```text
//! θ(τ−1) = Φ(τ) x + Φ̄(τ) Ex + Σ_j φ_j(τ) x̂_{τ/τ−j} + ψ(τ),
//! Φ = Θ_0,  φ_j = Θ_j − Θ_{j−1},  Φ̄ = Θ_μ − Θ_h,
//! ```
//!
//! where ψ is a deterministic offset that is nonzero only with nonzero
//! warm-up controls. Warm-up controllers (τ < i) do not optimize; they enter
//! the mean-field system as known inputs.
//!
//! At stage τ the predictors x̂_{τ/τ−j}, j ≥ τ, coincide with E x(τ), so the
//! levels s ≥ τ are formal; they are still solved (levels above min(τ,h)
//! copy level min(τ,h)), which fixes the otherwise arbitrary split between
//! predictor and mean gains such that instances without mean-field terms have
//! Φ̄ ≡ 0 and zero mean gains exactly.
//!
//! The literal form of the recursion (one equation per controller, with every
//! φ_j summed in each) is available in [`printed`] for comparison; it coincides with this one for
//! h = 0 and is not optimal for h ≥ 1.

pub mod printed;
pub mod reference;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Coefficient, Error, Result};
use crate::linalg::{block_diag, hstack, min_sym_eig, Factored, Mat, Vector};
use crate::model::ProblemSpec;

/// Reciprocal condition number below which a stage matrix counts as singular.
pub const RCOND_MIN: f64 = 1e-12;

/// One stacked linear solve of a stage: the coefficient matrix, the
/// right-hand-side coefficient and conditioning diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct LevelSolve {
    /// Innovation level s (for Ῡ) or highest active controller (for Υ).
    pub level: usize,
    /// Coefficient matrix (Ῡ_s or Υ).
    #[serde(skip)]
    pub matrix: Mat,
    /// Right-hand-side coefficient (Ȳ_s or Y), M × n.
    #[serde(skip)]
    pub rhs: Mat,
    /// Reciprocal 1-norm condition number of `matrix`.
    pub rcond: f64,
    /// Smallest eigenvalue of the symmetric part of `matrix` (diagnostic).
    pub min_sym_eig: f64,
}

/// Coefficients of one stage τ of the backward pass.
#[derive(Debug, Clone, Serialize)]
pub struct StageCoefficients {
    pub tau: usize,
    /// Highest active controller, min(τ, h).
    pub active: usize,
    /// Ῡ_s, Ȳ_s for s = 0..=active.
    pub innovation: Vec<LevelSolve>,
    /// Υ, Y for the mean-field system of the active controllers.
    pub mean: LevelSolve,
    /// Affine right-hand side of the mean-field system (warm-up inputs and ψ).
    #[serde(skip)]
    pub mean_affine: Vector,
}

/// Result of the backward pass.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    /// Φ(τ), τ = 0..=Γ+1.
    pub phi: Vec<Mat>,
    /// Φ̄(τ), τ = 0..=Γ+1.
    pub phibar: Vec<Mat>,
    /// φ_j(τ) stored as `varphi[j-1][τ]`, j = 1..=h, τ = 0..=Γ+1.
    pub varphi: Vec<Vec<Mat>>,
    /// Costate offset ψ(τ), τ = 0..=Γ+1 (zero unless warm-up is nonzero).
    pub psi: Vec<Vector>,
    /// Stage coefficients, τ = 0..=Γ.
    pub stages: Vec<StageCoefficients>,
    /// Innovation gains 𝐇_s(τ) (M_s × n) as `innovation_gains[τ][s]`.
    pub innovation_gains: Vec<Vec<Mat>>,
    /// Mean gains of the active controllers (M_a × n) per τ.
    pub mean_gains: Vec<Mat>,
    /// Deterministic control offsets of the active controllers (M_a) per τ.
    pub mean_offsets: Vec<Vector>,
}

impl RiccatiSolution {
    /// Σ_j φ_j(τ).
    pub fn varphi_sum(&self, tau: usize) -> Mat {
        let n = self.phi[tau].nrows();
        self.varphi.iter().fold(Mat::zeros(n, n), |acc, v| acc + &v[tau])
    }

    /// Φ(τ) + Φ̄(τ) + Σ_j φ_j(τ), the weight of E x in E θ(τ−1).
    pub fn total_weight(&self, tau: usize) -> Mat {
        &self.phi[tau] + &self.phibar[tau] + self.varphi_sum(tau)
    }

    /// φ_j(τ), with φ_0 ≡ 0 and φ_j ≡ 0 for j > h.
    pub fn varphi_at(&self, j: usize, tau: usize) -> Mat {
        if j == 0 || j > self.varphi.len() {
            let n = self.phi[tau].nrows();
            Mat::zeros(n, n)
        } else {
            self.varphi[j - 1][tau].clone()
        }
    }
}

/// Decentralized linear feedback law
/// v_i(τ) = Σ_{j=i}^{h} Kpred[i][j][τ] x̂_{τ/τ−j} + Kmean[i][τ] E x(τ) + offset[i][τ]
/// for τ ≥ i, and v_i(τ) = warmup[i][τ] for τ < i (x̂_{τ/τ−0} = x(τ)).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    /// `kpred[i][j][τ]`, m_i × n; entries with j < i or τ < i are unused zeros.
    pub kpred: Vec<Vec<Vec<Mat>>>,
    /// `kmean[i][τ]`, m_i × n; entries with τ < i are unused zeros.
    pub kmean: Vec<Vec<Mat>>,
    /// `offset[i][τ]`, m_i; zero unless warm-up controls are nonzero.
    pub offset: Vec<Vec<Vector>>,
    /// Warm-up controls copied from the problem.
    pub warmup: Vec<Vec<Vector>>,
}

impl LinearPolicy {
    /// The policy that applies zero control whenever a controller is active.
    pub fn zero(spec: &ProblemSpec) -> Self {
        let n = spec.n();
        let (h, g) = (spec.h(), spec.gamma());
        let m = &spec.dims.m;
        LinearPolicy {
            kpred: (0..=h)
                .map(|i| (0..=h).map(|_| vec![Mat::zeros(m[i], n); g + 1]).collect())
                .collect(),
            kmean: (0..=h).map(|i| vec![Mat::zeros(m[i], n); g + 1]).collect(),
            offset: (0..=h).map(|i| vec![Vector::zeros(m[i]); g + 1]).collect(),
            warmup: spec.init.warmup.clone(),
        }
    }

    /// Σ_j Kpred[i][j][τ] + Kmean[i][τ], the gain of E v_i on E x.
    pub fn mean_total(&self, i: usize, tau: usize) -> Mat {
        let mut acc = self.kmean[i][tau].clone();
        for j in i..self.kpred[i].len() {
            acc += &self.kpred[i][j][tau];
        }
        acc
    }

    /// Visit every decision entry (gain, mean-gain and offset entries of
    /// active stages) mutably; used for perturbation experiments.
    pub fn for_each_entry_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        let h = self.kmean.len() - 1;
        let g = self.kmean[0].len() - 1;
        for i in 0..=h {
            for tau in i..=g {
                for j in i..=h {
                    self.kpred[i][j][tau].iter_mut().for_each(&mut f);
                }
                self.kmean[i][tau].iter_mut().for_each(&mut f);
                self.offset[i][tau].iter_mut().for_each(&mut f);
            }
        }
    }
}

/// Shared computation of one stacked level: coefficient matrix, right-hand
/// side coefficient, gain, and the resulting costate weight.
///
/// Solves `(r + bᵀ Π b + σ² dᵀ Θ₀ d) H = −(bᵀ Π a + σ² dᵀ Θ₀ c)` and returns
/// `Θ = q + aᵀ Π (a + b H) + σ² cᵀ Θ₀ (c + d H)`.
struct Level {
    matrix: Mat,
    rhs: Mat,
    factored: Factored,
    gain: Mat,
    theta: Mat,
}

#[allow(clippy::too_many_arguments)]
fn solve_level(b: &Mat, d: &Mat, r: &Mat, pi: &Mat, theta0: &Mat, a: &Mat, c: &Mat, q: &Mat, sigma2: f64) -> Level {
    let bt_pi = b.transpose() * pi;
    let dt_th = d.transpose() * theta0;
    let matrix = r + &bt_pi * b + (&dt_th * d) * sigma2;
    let rhs = &bt_pi * a + (&dt_th * c) * sigma2;
    let factored = Factored::new(&matrix);
    let gain = -factored.solve(&rhs);
    let closed_a = a + b * &gain;
    let closed_c = c + d * &gain;
    let theta = q + a.transpose() * pi * closed_a + (c.transpose() * theta0 * closed_c) * sigma2;
    Level {
        matrix,
        rhs,
        factored,
        gain,
        theta,
    }
}

fn stack_cols(list: &[Mat], upto: usize, n: usize) -> Mat {
    hstack(&list[..=upto].iter().collect::<Vec<_>>(), n)
}

fn summed(a: &[Mat], b: &[Mat]) -> Vec<Mat> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Run the backward pass from the terminal weights at Γ+1 down to τ = 0.
///
/// Fails with [`Error::Solvability`] when a stage matrix has reciprocal
/// condition number below [`RCOND_MIN`]; the problem then has no unique
/// optimal control.
pub fn backward_pass(spec: &ProblemSpec) -> Result<RiccatiSolution> {
    let n = spec.n();
    let h = spec.h();
    let g = spec.gamma();
    let dy = &spec.dynamics;
    let co = &spec.cost;
    let s2 = dy.sigma2;

    let a_sum = &dy.a + &dy.abar;
    let c_sum = &dy.c + &dy.cbar;
    let q_sum = &co.q + &co.qbar;
    let b_sum = summed(&dy.b, &dy.bbar);
    let d_sum = summed(&dy.d, &dy.dbar);
    let r_sum = summed(&co.r, &co.rbar);

    // Θ_s(τ+1) for s = 0..=h, Θ_μ(τ+1), ψ(τ+1).
    let mut theta: Vec<Mat> = vec![co.phi_t.clone(); h + 1];
    let mut theta_mu = &co.phi_t + &co.phibar_t;
    let mut psi = Vector::zeros(n);

    let mut phi = vec![Mat::zeros(n, n); g + 2];
    let mut phibar = vec![Mat::zeros(n, n); g + 2];
    let mut varphi = vec![vec![Mat::zeros(n, n); g + 2]; h];
    let mut psis = vec![Vector::zeros(n); g + 2];
    phi[g + 1] = co.phi_t.clone();
    phibar[g + 1] = co.phibar_t.clone();

    let mut stages = Vec::with_capacity(g + 1);
    let mut innovation_gains = Vec::with_capacity(g + 1);
    let mut mean_gains = Vec::with_capacity(g + 1);
    let mut mean_offsets = Vec::with_capacity(g + 1);

    for tau in (0..=g).rev() {
        let active = tau.min(h);
        let theta0 = theta[0].clone();

        let mut new_theta = Vec::with_capacity(h + 1);
        let mut levels = Vec::with_capacity(active + 1);
        let mut gains = Vec::with_capacity(active + 1);
        for s in 0..=active {
            let pi = &theta[(s + 1).min(h)];
            let lv = solve_level(
                &stack_cols(&dy.b, s, n),
                &stack_cols(&dy.d, s, n),
                &block_diag(&co.r[..=s].iter().collect::<Vec<_>>()),
                pi,
                &theta0,
                &dy.a,
                &dy.c,
                &co.q,
                s2,
            );
            if lv.factored.rcond < RCOND_MIN {
                return Err(Error::Solvability {
                    tau,
                    level: s,
                    which: Coefficient::UpsilonBar,
                    rcond: lv.factored.rcond,
                });
            }
            levels.push(LevelSolve {
                level: s,
                min_sym_eig: min_sym_eig(&lv.matrix),
                matrix: lv.matrix,
                rhs: lv.rhs,
                rcond: lv.factored.rcond,
            });
            gains.push(lv.gain);
            new_theta.push(lv.theta);
        }
        for _ in active + 1..=h {
            new_theta.push(new_theta[active].clone());
        }

        // Mean-field system over the active controllers 0..=active.
        let b_act = stack_cols(&b_sum, active, n);
        let d_act = stack_cols(&d_sum, active, n);
        let mean = solve_level(
            &b_act,
            &d_act,
            &block_diag(&r_sum[..=active].iter().collect::<Vec<_>>()),
            &theta_mu,
            &theta0,
            &a_sum,
            &c_sum,
            &q_sum,
            s2,
        );
        if mean.factored.rcond < RCOND_MIN {
            return Err(Error::Solvability {
                tau,
                level: active,
                which: Coefficient::Upsilon,
                rcond: mean.factored.rcond,
            });
        }
        // Known inputs of the warm-up controllers active+1..=h.
        let mut u_b = Vector::zeros(n);
        let mut u_d = Vector::zeros(n);
        for k in active + 1..=h {
            let u = &spec.init.warmup[k][tau];
            u_b += &b_sum[k] * u;
            u_d += &d_sum[k] * u;
        }
        let mean_affine = b_act.transpose() * (&theta_mu * &u_b + &psi) + (d_act.transpose() * &theta0 * &u_d) * s2;
        let offset = -mean.factored.solve_vec(&mean_affine);
        let drift_offset = &b_act * &offset + &u_b;
        let noise_offset = &d_act * &offset + &u_d;
        let new_psi =
            a_sum.transpose() * (&theta_mu * drift_offset + &psi) + (c_sum.transpose() * &theta0 * noise_offset) * s2;

        phi[tau] = new_theta[0].clone();
        for j in 1..=h {
            varphi[j - 1][tau] = &new_theta[j] - &new_theta[j - 1];
        }
        phibar[tau] = &mean.theta - &new_theta[h];
        psis[tau] = new_psi.clone();

        stages.push(StageCoefficients {
            tau,
            active,
            innovation: levels,
            mean: LevelSolve {
                level: active,
                min_sym_eig: min_sym_eig(&mean.matrix),
                matrix: mean.matrix,
                rhs: mean.rhs,
                rcond: mean.factored.rcond,
            },
            mean_affine,
        });
        innovation_gains.push(gains);
        mean_gains.push(mean.gain);
        mean_offsets.push(offset);

        theta = new_theta;
        theta_mu = mean.theta;
        psi = new_psi;
    }
    stages.reverse();
    innovation_gains.reverse();
    mean_gains.reverse();
    mean_offsets.reverse();

    Ok(RiccatiSolution {
        phi,
        phibar,
        varphi,
        psi: psis,
        stages,
        innovation_gains,
        mean_gains,
        mean_offsets,
    })
}

/// Convert the innovation-form solution into per-predictor gains:
/// Kpred[i][i] = H_{i,i}, Kpred[i][j] = H_{i,j} − H_{i,j−1} (j > i), and
/// Kmean[i] = M_i − H_{i,h}, where H_{i,s} for s > min(τ,h) repeats the last
/// solved level.
pub fn synthesize_gains(spec: &ProblemSpec, sol: &RiccatiSolution) -> LinearPolicy {
    let h = spec.h();
    let dims = &spec.dims;
    let mut policy = LinearPolicy::zero(spec);
    for (tau, gains) in sol.innovation_gains.iter().enumerate() {
        let active = sol.stages[tau].active;
        for i in 0..=active {
            let (off, mi) = (dims.offset(i), dims.m[i]);
            let block = |s: usize| gains[s.min(active)].rows(off, mi).into_owned();
            policy.kpred[i][i][tau] = block(i);
            for j in i + 1..=h {
                policy.kpred[i][j][tau] = block(j) - block(j - 1);
            }
            policy.kmean[i][tau] = sol.mean_gains[tau].rows(off, mi) - block(h);
            policy.offset[i][tau] = sol.mean_offsets[tau].rows(off, mi).into_owned();
        }
    }
    policy
}

/// Mean trajectory E x(τ), τ = 0..=Γ+1, and control means E v_i(τ) under the
/// optimal policy, computed from the mean-field gains alone.
pub fn mean_path(spec: &ProblemSpec, sol: &RiccatiSolution) -> (Vec<Vector>, Vec<Vec<Vector>>) {
    let h = spec.h();
    let dy = &spec.dynamics;
    let a_sum = &dy.a + &dy.abar;
    let mut mu = vec![spec.init.x0.clone()];
    let mut ev_all = Vec::new();
    for tau in 0..=spec.gamma() {
        let active = sol.stages[tau].active;
        let mean_v = &sol.mean_gains[tau] * &mu[tau] + &sol.mean_offsets[tau];
        let ev: Vec<Vector> = (0..=h)
            .map(|k| {
                if k <= active {
                    mean_v.rows(spec.dims.offset(k), spec.dims.m[k]).into_owned()
                } else {
                    spec.init.warmup[k][tau].clone()
                }
            })
            .collect();
        let mut next = &a_sum * &mu[tau];
        for k in 0..=h {
            next += (&dy.b[k] + &dy.bbar[k]) * &ev[k];
        }
        mu.push(next);
        ev_all.push(ev);
    }
    (mu, ev_all)
}

/// Optimal cost
/// J* = x0ᵀ[Φ(0)+Φ̄(0)+Σ_j φ_j(0)]x0 + x0ᵀψ(0)
///    + Σ_{warm-up (i,τ)} [u_iᵀ(R_i+R̄_i)u_i + u_iᵀ((B_i+B̄_i)ᵀ E θ(τ) + (D_i+D̄_i)ᵀ E[ω θ(τ)])].
///
/// With zero warm-up only the first term survives.
pub fn optimal_cost(spec: &ProblemSpec, sol: &RiccatiSolution) -> f64 {
    let x0 = &spec.init.x0;
    let mut j = x0.dot(&(sol.total_weight(0) * x0)) + x0.dot(&sol.psi[0]);
    if !spec.has_warmup() {
        return j;
    }
    let dy = &spec.dynamics;
    let co = &spec.cost;
    let (mu, ev) = mean_path(spec, sol);
    for tau in 0..=spec.gamma() {
        let mut mean_b = (&dy.c + &dy.cbar) * &mu[tau];
        for k in 0..=spec.h() {
            mean_b += (&dy.d[k] + &dy.dbar[k]) * &ev[tau][k];
        }
        let e_theta = sol.total_weight(tau + 1) * &mu[tau + 1] + &sol.psi[tau + 1];
        let e_omega_theta = (&sol.phi[tau + 1] * mean_b) * dy.sigma2;
        for k in tau + 1..=spec.h() {
            let u = &spec.init.warmup[k][tau];
            let grad =
                (&dy.b[k] + &dy.bbar[k]).transpose() * &e_theta + (&dy.d[k] + &dy.dbar[k]).transpose() * &e_omega_theta;
            j += u.dot(&((&co.r[k] + &co.rbar[k]) * u)) + u.dot(&grad);
        }
    }
    j
}

/// Gains of one controller at one time in display form.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplayGains {
    pub i: usize,
    pub tau: usize,
    /// Gains on x(τ) (j = 0) and x̂_{τ/τ−j} for i ≤ j ≤ min(τ, h).
    pub pred: BTreeMap<usize, Mat>,
    /// Gain on E x(τ) including the folded predictor gains.
    pub mean: Mat,
    pub offset: Vector,
}

impl DisplayGains {
    /// Label of the variable multiplied by `pred[j]`.
    pub fn label(&self, j: usize) -> String {
        if j == 0 {
            format!("x({})", self.tau)
        } else {
            format!("xhat({}|{})", self.tau, self.tau as i64 - j as i64)
        }
    }
}

/// Fold predictor gains with j > τ (whose predictors equal E x(τ)) into the
/// mean gain; returns one entry per controller acting at τ.
pub fn fold_gains_for_display(policy: &LinearPolicy, tau: usize) -> Vec<DisplayGains> {
    let h = policy.kmean.len() - 1;
    (0..=h.min(tau))
        .map(|i| {
            let mut mean = policy.kmean[i][tau].clone();
            let mut pred = BTreeMap::new();
            for j in i..=h {
                if j > tau {
                    mean += &policy.kpred[i][j][tau];
                } else {
                    pred.insert(j, policy.kpred[i][j][tau].clone());
                }
            }
            DisplayGains {
                i,
                tau,
                pred,
                mean,
                offset: policy.offset[i][tau].clone(),
            }
        })
        .collect()
}

fn json_num(out: &mut String, x: f64) {
    if x.is_finite() {
        let _ = write!(out, "{x:.16e}");
    } else {
        out.push_str("null");
    }
}

fn json_mat(out: &mut String, m: &Mat) {
    out.push('[');
    for r in 0..m.nrows() {
        if r > 0 {
            out.push_str(", ");
        }
        out.push('[');
        for c in 0..m.ncols() {
            if c > 0 {
                out.push_str(", ");
            }
            json_num(out, m[(r, c)]);
        }
        out.push(']');
    }
    out.push(']');
}

fn json_vec(out: &mut String, v: &Vector) {
    out.push('[');
    for (k, x) in v.iter().enumerate() {
        if k > 0 {
            out.push_str(", ");
        }
        json_num(out, *x);
    }
    out.push(']');
}

/// Serialize gains as `{ "τ": { "i": { "pred": { "j": M }, "mean": M } } }`
/// with 17 significant digits. With `folded`, predictor gains with j > τ are
/// folded into `mean`. An `"offset"` vector is added for controllers whose
/// deterministic offset is nonzero.
pub fn gains_to_json(policy: &LinearPolicy, folded: bool) -> String {
    let h = policy.kmean.len() - 1;
    let g = policy.kmean[0].len() - 1;
    let mut out = String::from("{\n");
    for tau in 0..=g {
        let _ = writeln!(out, "  \"{tau}\": {{");
        let entries: Vec<DisplayGains> = if folded {
            fold_gains_for_display(policy, tau)
        } else {
            (0..=h.min(tau))
                .map(|i| DisplayGains {
                    i,
                    tau,
                    pred: (i..=h).map(|j| (j, policy.kpred[i][j][tau].clone())).collect(),
                    mean: policy.kmean[i][tau].clone(),
                    offset: policy.offset[i][tau].clone(),
                })
                .collect()
        };
        for (k, e) in entries.iter().enumerate() {
            let _ = write!(out, "    \"{}\": {{\n      \"pred\": {{", e.i);
            for (p, (j, m)) in e.pred.iter().enumerate() {
                if p > 0 {
                    out.push_str(", ");
                }
                let _ = write!(out, "\"{j}\": ");
                json_mat(&mut out, m);
            }
            out.push_str("},\n      \"mean\": ");
            json_mat(&mut out, &e.mean);
            if e.offset.iter().any(|x| *x != 0.0) {
                out.push_str(",\n      \"offset\": ");
                json_vec(&mut out, &e.offset);
            }
            out.push_str("\n    }");
            out.push_str(if k + 1 < entries.len() { ",\n" } else { "\n" });
        }
        out.push_str("  }");
        out.push_str(if tau < g { ",\n" } else { "\n" });
    }
    out.push_str("}\n");
    out
}

fn schema_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn parse_mat(v: &serde_json::Value, path: &str, r: usize, c: usize) -> Result<Mat> {
    let rows = v
        .as_array()
        .ok_or_else(|| schema_err(path, "expected an array of rows"))?;
    if rows.len() != r {
        return Err(Error::Dimension {
            name: path.into(),
            expected: format!("{r}x{c}"),
            found: format!("{} rows", rows.len()),
        });
    }
    let mut m = Mat::zeros(r, c);
    for (i, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| schema_err(format!("{path}[{i}]"), "expected an array"))?;
        if row.len() != c {
            return Err(Error::Dimension {
                name: path.into(),
                expected: format!("{r}x{c}"),
                found: format!("row {i} with {} entries", row.len()),
            });
        }
        for (j, x) in row.iter().enumerate() {
            m[(i, j)] = x
                .as_f64()
                .ok_or_else(|| schema_err(format!("{path}[{i}][{j}]"), "expected a number"))?;
        }
    }
    Ok(m)
}

/// Parse an unfolded gains document produced by [`gains_to_json`]. Every
/// active (i, τ) must be present; warm-up values come from `spec`.
pub fn gains_from_json(spec: &ProblemSpec, text: &str) -> Result<LinearPolicy> {
    let doc: serde_json::Value = serde_json::from_str(text)?;
    let n = spec.n();
    let h = spec.h();
    let mut policy = LinearPolicy::zero(spec);
    for tau in 0..=spec.gamma() {
        for i in 0..=h.min(tau) {
            let path = format!("{tau}.{i}");
            let entry = doc
                .get(tau.to_string())
                .and_then(|t| t.get(i.to_string()))
                .ok_or_else(|| schema_err(&path, "missing gains entry"))?;
            let mi = spec.dims.m[i];
            for j in i..=h {
                let p = format!("{path}.pred.{j}");
                let v = entry
                    .get("pred")
                    .and_then(|p| p.get(j.to_string()))
                    .ok_or_else(|| schema_err(&p, "missing predictor gain"))?;
                policy.kpred[i][j][tau] = parse_mat(v, &p, mi, n)?;
            }
            let p = format!("{path}.mean");
            let v = entry.get("mean").ok_or_else(|| schema_err(&p, "missing mean gain"))?;
            policy.kmean[i][tau] = parse_mat(v, &p, mi, n)?;
            if let Some(v) = entry.get("offset") {
                let p = format!("{path}.offset");
                let m = parse_mat(&serde_json::json!([v]), &p, 1, mi)?;
                policy.offset[i][tau] = m.row(0).transpose();
            }
        }
    }
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_example, random_spec, RandomSpecOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// n = 1, h = 0, Γ = 0, A = B = Q = R = Φ(1) = 1, σ² = 0, no mean-field terms.
    fn scalar_lqr() -> ProblemSpec {
        let mut s = ProblemSpec::zeros(1, &[1], 0);
        let one = Mat::identity(1, 1);
        s.dynamics.a = one.clone();
        s.dynamics.b[0] = one.clone();
        s.dynamics.sigma2 = 0.0;
        s.cost.q = one.clone();
        s.cost.r[0] = one.clone();
        s.cost.phi_t = one;
        s.init.x0 = Vector::from_element(1, 1.0);
        s
    }

    #[test]
    fn scalar_lqr_hand_values() {
        let s = scalar_lqr();
        let sol = backward_pass(&s).unwrap();
        let st = &sol.stages[0];
        assert_eq!(st.innovation[0].matrix[(0, 0)], 2.0);
        assert_eq!(st.mean.matrix[(0, 0)], 2.0);
        assert_eq!(st.innovation[0].rhs[(0, 0)], 1.0);
        assert_eq!(st.mean.rhs[(0, 0)], 1.0);
        assert_eq!(sol.phi[0][(0, 0)], 1.5);
        assert_eq!(sol.phibar[0][(0, 0)], 0.0);
        assert_eq!(optimal_cost(&s, &sol), 1.5);
        let p = synthesize_gains(&s, &sol);
        assert_eq!(p.kpred[0][0][0][(0, 0)], -0.5);
        assert_eq!(p.kmean[0][0][(0, 0)], 0.0);
    }

    #[test]
    fn terminal_values_are_copied() {
        let s = builtin_example("sec5").unwrap();
        let sol = backward_pass(&s).unwrap();
        let g = s.gamma();
        assert_eq!(sol.phi[g + 1], s.cost.phi_t);
        assert_eq!(sol.phibar[g + 1], s.cost.phibar_t);
        assert!(sol.varphi.iter().all(|v| v[g + 1] == Mat::zeros(2, 2)));
        assert_eq!(sol.stages.len(), g + 1);
        for st in &sol.stages {
            assert!(st.mean.rcond > RCOND_MIN);
            assert!(st.innovation.iter().all(|l| l.rcond > RCOND_MIN));
        }
    }

    #[test]
    fn zero_cost_from_zero_state() {
        let mut s = builtin_example("sec5").unwrap();
        s.init.x0 = Vector::zeros(2);
        let sol = backward_pass(&s).unwrap();
        assert_eq!(optimal_cost(&s, &sol), 0.0);
    }

    #[test]
    fn zero_bar_instances_have_no_mean_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 0..6 {
            let s = random_spec(
                &mut rng,
                &RandomSpecOptions {
                    n: 2,
                    m: vec![1; 1 + k % 3],
                    gamma: 4,
                    scale: 0.6,
                    warmup: false,
                    sigma2: None,
                    zero_bar: true,
                },
            );
            let sol = backward_pass(&s).unwrap();
            assert!(sol.phibar.iter().all(|m| m.iter().all(|v| *v == 0.0)));
            for st in &sol.stages {
                assert_eq!(st.mean.matrix, st.innovation[st.active].matrix);
            }
            let p = synthesize_gains(&s, &sol);
            for i in 0..=s.h() {
                for tau in i..=s.gamma() {
                    assert!(p.kmean[i][tau].iter().all(|v| *v == 0.0));
                }
            }
        }
    }

    #[test]
    fn mean_consistency_identity() {
        let s = builtin_example("sec5").unwrap();
        let sol = backward_pass(&s).unwrap();
        let p = synthesize_gains(&s, &sol);
        for tau in 0..=s.gamma() {
            let st = &sol.stages[tau];
            let ev = -st.mean.clone().matrix.lu().solve(&st.mean.rhs).unwrap();
            for i in 0..=st.active {
                let expect = ev.rows(s.dims.offset(i), s.dims.m[i]);
                assert!((p.mean_total(i, tau) - expect).abs().max() < 1e-12);
            }
        }
    }

    #[test]
    fn sec5_cost_matches_reference() {
        // Reference value from an independent brute-force optimization.
        let s = builtin_example("sec5").unwrap();
        let sol = backward_pass(&s).unwrap();
        let j = optimal_cost(&s, &sol);
        assert!((j - 15.421158229539).abs() < 1e-9, "{j}");
        let j3 = optimal_cost(&s.with_gamma(3), &backward_pass(&s.with_gamma(3)).unwrap());
        assert!((j3 - 15.410698418568).abs() < 1e-9, "{j3}");
    }

    #[test]
    fn singular_stage_is_reported() {
        let mut s = scalar_lqr();
        s.cost.r[0] = Mat::zeros(1, 1);
        s.cost.phi_t = Mat::zeros(1, 1);
        match backward_pass(&s) {
            Err(Error::Solvability {
                tau: 0,
                level: 0,
                rcond,
                ..
            }) => assert_eq!(rcond, 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn folding_groups_like_the_display() {
        let s = builtin_example("sec5").unwrap();
        let p = synthesize_gains(&s, &backward_pass(&s).unwrap());
        let d1 = fold_gains_for_display(&p, 1);
        assert_eq!(d1.len(), 2);
        assert_eq!(d1[0].pred.keys().copied().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(d1[0].label(1), "xhat(1|0)");
        let d4 = fold_gains_for_display(&p, 4);
        assert_eq!(d4[1].pred.keys().copied().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(d4[1].mean, p.kmean[1][4]);
        let d0 = fold_gains_for_display(&p, 0);
        assert_eq!(d0.len(), 1);
        let total = &d0[0].pred[&0] + &d0[0].mean;
        assert!((total - p.mean_total(0, 0)).abs().max() < 1e-15);
    }

    #[test]
    fn gains_json_round_trips_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_spec(
            &mut rng,
            &RandomSpecOptions {
                n: 2,
                m: vec![1, 2, 1],
                gamma: 3,
                scale: 0.5,
                warmup: true,
                sigma2: None,
                zero_bar: false,
            },
        );
        let p = synthesize_gains(&s, &backward_pass(&s).unwrap());
        let text = gains_to_json(&p, false);
        let back = gains_from_json(&s, &text).unwrap();
        assert_eq!(back, p);
        let folded: serde_json::Value = serde_json::from_str(&gains_to_json(&p, true)).unwrap();
        assert!(folded["0"]["0"]["pred"].get("1").is_none());
    }
}
