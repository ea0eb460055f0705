//! Predictor bank, control assembly and Monte Carlo simulation.
//!
//! Controller i acts on F_i(τ) = σ(x(0), ω(0..τ−i−1)). The bank holds the
//! optimal predictors x̂_{τ/τ−j} = E[x(τ) | F_j(τ)], j = 1..h, and is advanced
//! by the recursion
//!
//! ```text
//! x̂_{τ+1/τ+1−j} = E[x(τ+1) | F_{j−1}(τ)]
//!               = A x̂_{τ/τ−(j−1)} + Ā Ex(τ) + Σ_k B_k E[v_k(τ) | F_{j−1}(τ)] + Σ_k B̄_k Ev_k(τ),
//! ```
//!
//! with x̂_{τ/τ} = x(τ) and x̂_{τ/τ−j} = E x(τ) for j > τ (nothing about the
//! noise is known yet). Conditional expectations of other controllers'
//! actions follow from the tower rule:
//! E[x̂_{τ/τ−l} | F_r(τ)] = x̂_{τ/τ−max(l,r)}.
//!
//! Noise substreams: run `r` of seed `s` draws ω(0), ω(1), … in order from
//! `ChaCha8Rng::seed_from_u64(s)` switched to stream `r`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{vstack_vec, Mat, Vector};
use crate::model::ProblemSpec;
use crate::riccati::LinearPolicy;

/// Distribution of the scalar noise ω(τ); both have mean 0 and variance σ².
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseKind {
    /// ω ~ N(0, σ²).
    #[default]
    Gaussian,
    /// ω = ±σ with probability ½ each.
    TwoPoint,
}

/// Closed-loop state at time τ.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub tau: usize,
    /// Realized state x(τ).
    pub x: Vector,
    /// E x(τ).
    pub mu: Vector,
    /// x̂_{τ/τ−j} stored at index j − 1, j = 1..=h.
    pub xhat: Vec<Vector>,
}

impl SimState {
    /// State at τ = 0: every predictor equals x(0) = E x(0).
    pub fn initial(spec: &ProblemSpec) -> Self {
        let x0 = spec.init.x0.clone();
        SimState {
            tau: 0,
            mu: x0.clone(),
            xhat: vec![x0.clone(); spec.h()],
            x: x0,
        }
    }

    /// x̂_{τ/τ−j}: x(τ) for j = 0, the bank slot for 1 ≤ j ≤ h, E x(τ) beyond.
    pub fn slot(&self, j: usize) -> &Vector {
        match j {
            0 => &self.x,
            j if j <= self.xhat.len() => &self.xhat[j - 1],
            _ => &self.mu,
        }
    }
}

/// All controllers' actions at one time, with their conditional means.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBundle {
    /// Realized action v_i(τ).
    pub v: Vec<Vector>,
    /// E v_i(τ).
    pub ev: Vec<Vector>,
    /// `vhat[j][r]` = E[v_j(τ) | F_r(τ)] for all j, r in 0..=h
    /// (equal to v_j whenever r ≤ j or v_j is a warm-up constant).
    pub vhat: Vec<Vec<Vector>>,
    /// `vtilde[j][r]` = v_j − vhat[j][r].
    pub vtilde: Vec<Vec<Vector>>,
    /// 𝐕_i = [v̂_{0,i}; …; v̂_{i−1,i}; v_i].
    pub vstack: Vec<Vector>,
    /// E𝐕_i = [Ev_0; …; Ev_i].
    pub evstack: Vec<Vector>,
}

/// Conditional expectation E[v_k(τ) | F_r(τ)] under `policy` for the bank in `state`.
pub fn conditional_control(spec: &ProblemSpec, policy: &LinearPolicy, state: &SimState, k: usize, r: usize) -> Vector {
    let tau = state.tau;
    if !spec.is_active(k, tau) {
        return policy.warmup[k][tau].clone();
    }
    let mut v = &policy.kmean[k][tau] * &state.mu + &policy.offset[k][tau];
    for l in k..=spec.h() {
        v += &policy.kpred[k][l][tau] * state.slot(l.max(r));
    }
    v
}

/// Assemble every controller's action, mean, conditional means and stacks.
pub fn assemble_controls(spec: &ProblemSpec, policy: &LinearPolicy, state: &SimState) -> ControlBundle {
    let h = spec.h();
    let tau = state.tau;
    // For r ≤ k the projection leaves every slot l ≥ k unchanged, so the
    // same formula yields the realized action.
    let vhat: Vec<Vec<Vector>> = (0..=h)
        .map(|k| {
            (0..=h)
                .map(|r| conditional_control(spec, policy, state, k, r))
                .collect()
        })
        .collect();
    let v: Vec<Vector> = (0..=h).map(|k| vhat[k][0].clone()).collect();
    let ev: Vec<Vector> = (0..=h)
        .map(|k| {
            if spec.is_active(k, tau) {
                policy.mean_total(k, tau) * &state.mu + &policy.offset[k][tau]
            } else {
                policy.warmup[k][tau].clone()
            }
        })
        .collect();
    let vtilde = (0..=h)
        .map(|k| (0..=h).map(|r| &v[k] - &vhat[k][r]).collect())
        .collect();
    let vstack = (0..=h)
        .map(|i| {
            let parts: Vec<&Vector> = (0..i).map(|j| &vhat[j][i]).chain([&v[i]]).collect();
            vstack_vec(&parts)
        })
        .collect();
    let evstack = (0..=h)
        .map(|i| vstack_vec(&ev[..=i].iter().collect::<Vec<_>>()))
        .collect();
    ControlBundle {
        v,
        ev,
        vhat,
        vtilde,
        vstack,
        evstack,
    }
}

/// Result of one closed-loop step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: SimState,
    /// E[x(τ+1) | F_i(τ)] for i = 0..=h.
    pub xnext_cond: Vec<Vector>,
    /// Noise multiplier C x + C̄ Ex + Σ (D_k v_k + D̄_k Ev_k) at τ.
    pub noise_term: Vector,
}

/// Advance the state, its mean and the predictor bank by one step.
pub fn step(spec: &ProblemSpec, state: &SimState, bundle: &ControlBundle, omega: f64) -> StepOutcome {
    let h = spec.h();
    let dy = &spec.dynamics;
    let mut mean_input = &dy.abar * &state.mu;
    let mut noise_term = &dy.c * &state.x + &dy.cbar * &state.mu;
    let mut mu_next = (&dy.a + &dy.abar) * &state.mu;
    for k in 0..=h {
        mean_input += &dy.bbar[k] * &bundle.ev[k];
        noise_term += &dy.d[k] * &bundle.v[k] + &dy.dbar[k] * &bundle.ev[k];
        mu_next += (&dy.b[k] + &dy.bbar[k]) * &bundle.ev[k];
    }
    let xnext_cond: Vec<Vector> = (0..=h)
        .map(|i| {
            let mut e = &dy.a * state.slot(i) + &mean_input;
            for k in 0..=h {
                e += &dy.b[k] * &bundle.vhat[k][i];
            }
            e
        })
        .collect();
    let x_next = &xnext_cond[0] + &noise_term * omega;
    let tau = state.tau + 1;
    let xhat = (1..=h)
        .map(|j| {
            if j > tau {
                mu_next.clone()
            } else {
                xnext_cond[j - 1].clone()
            }
        })
        .collect();
    StepOutcome {
        next: SimState {
            tau,
            x: x_next,
            mu: mu_next,
            xhat,
        },
        xnext_cond,
        noise_term,
    }
}

/// Record of one step of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub state: SimState,
    pub controls: ControlBundle,
    pub omega: f64,
    /// E[x(τ+1) | F_i(τ)], i = 0..=h.
    pub xnext_cond: Vec<Vector>,
    pub noise_term: Vector,
    /// xᵀQx + ExᵀQ̄Ex + Σ_i (v_iᵀR_i v_i + Ev_iᵀR̄_i Ev_i).
    pub stage_cost: f64,
}

/// One simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub run: usize,
    /// Steps τ = 0..=Γ.
    pub steps: Vec<StepRecord>,
    /// State at Γ+1.
    pub terminal: SimState,
    /// x(Γ+1)ᵀΦ_T x(Γ+1) + Ex(Γ+1)ᵀΦ̄_T Ex(Γ+1).
    pub terminal_cost: f64,
    /// Sum of stage costs and terminal cost.
    pub total_cost: f64,
}

impl TrajectoryRecord {
    /// The state record at τ = 0..=Γ+1.
    pub fn state(&self, tau: usize) -> Option<&SimState> {
        if tau < self.steps.len() {
            Some(&self.steps[tau].state)
        } else if tau == self.steps.len() {
            Some(&self.terminal)
        } else {
            None
        }
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.omega).collect()
    }
}

fn quad(v: &Vector, m: &Mat) -> f64 {
    v.dot(&(m * v))
}

/// Run the closed loop along a given noise sequence ω(0..=Γ).
pub fn simulate_path(spec: &ProblemSpec, policy: &LinearPolicy, omegas: &[f64], run: usize) -> TrajectoryRecord {
    assert_eq!(omegas.len(), spec.gamma() + 1, "one noise sample per step");
    let co = &spec.cost;
    let mut state = SimState::initial(spec);
    let mut steps = Vec::with_capacity(omegas.len());
    let mut total = 0.0;
    for &omega in omegas {
        let controls = assemble_controls(spec, policy, &state);
        let mut stage_cost = quad(&state.x, &co.q) + quad(&state.mu, &co.qbar);
        for k in 0..=spec.h() {
            stage_cost += quad(&controls.v[k], &co.r[k]) + quad(&controls.ev[k], &co.rbar[k]);
        }
        total += stage_cost;
        let out = step(spec, &state, &controls, omega);
        steps.push(StepRecord {
            state,
            controls,
            omega,
            xnext_cond: out.xnext_cond,
            noise_term: out.noise_term,
            stage_cost,
        });
        state = out.next;
    }
    let terminal_cost = quad(&state.x, &co.phi_t) + quad(&state.mu, &co.phibar_t);
    TrajectoryRecord {
        run,
        steps,
        terminal: state,
        terminal_cost,
        total_cost: total + terminal_cost,
    }
}

/// Noise generator for run `run` of seed `seed`.
pub fn noise_stream(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

/// Draw one noise sample with variance `sigma2`.
pub fn draw_noise<R: Rng + ?Sized>(rng: &mut R, sigma2: f64, kind: NoiseKind) -> f64 {
    let sd = sigma2.sqrt();
    match kind {
        NoiseKind::Gaussian => {
            if sd == 0.0 {
                // Keep the stream position independent of σ.
                let _: f64 = rng.gen();
                0.0
            } else {
                Normal::new(0.0, sd).expect("finite sd").sample(rng)
            }
        }
        NoiseKind::TwoPoint => {
            if rng.gen::<bool>() {
                sd
            } else {
                -sd
            }
        }
    }
}

/// Simulate `runs` independent trajectories; run r uses [`noise_stream`]`(seed, r)`.
pub fn simulate(
    spec: &ProblemSpec,
    policy: &LinearPolicy,
    seed: u64,
    runs: usize,
    noise: NoiseKind,
) -> Vec<TrajectoryRecord> {
    (0..runs)
        .map(|run| {
            let mut rng = noise_stream(seed, run);
            let omegas: Vec<f64> = (0..=spec.gamma())
                .map(|_| draw_noise(&mut rng, spec.dynamics.sigma2, noise))
                .collect();
            simulate_path(spec, policy, &omegas, run)
        })
        .collect()
}

/// Simulate `runs` trajectories sharing the noise prefix `prefix`
/// (ω(0..prefix.len())) and resampling the rest; used to estimate
/// conditional means by nested Monte Carlo.
pub fn simulate_with_prefix(
    spec: &ProblemSpec,
    policy: &LinearPolicy,
    prefix: &[f64],
    seed: u64,
    runs: usize,
    noise: NoiseKind,
) -> Vec<TrajectoryRecord> {
    (0..runs)
        .map(|run| {
            let mut rng = noise_stream(seed, run);
            let omegas: Vec<f64> = (0..=spec.gamma())
                .map(|t| {
                    prefix
                        .get(t)
                        .copied()
                        .unwrap_or_else(|| draw_noise(&mut rng, spec.dynamics.sigma2, noise))
                })
                .collect();
            simulate_path(spec, policy, &omegas, run)
        })
        .collect()
}

/// Closed-form unrolled predictor
/// x̂_{τ/τ−i} = A^τ x(0) + Σ_{j=1}^{τ} A^{j−1}[Ā Ex(τ−j) + Σ_k B_k E[v_k(τ−j) | F_{max(i−j,0)}(τ−j)]
///             + Σ_k B̄_k Ev_k(τ−j)] + Σ_{j=i+1}^{τ} A^{j−1} ω(τ−j) b(τ−j),
/// with b the recorded noise multiplier; an independent evaluation of the
/// recursive bank from the recorded history.
pub fn explicit_predictor(spec: &ProblemSpec, traj: &TrajectoryRecord, tau: usize, i: usize) -> Result<Vector> {
    if tau > traj.steps.len() {
        return Err(Error::MissingHistory(format!(
            "tau={tau} beyond recorded horizon {}",
            traj.steps.len()
        )));
    }
    if i > spec.h() {
        return Err(Error::IndexOutOfRange {
            index: i,
            max: spec.h(),
        });
    }
    let dy = &spec.dynamics;
    let mut power = Mat::identity(spec.n(), spec.n()); // A^{j−1}
    let mut acc = Vector::zeros(spec.n());
    for j in 1..=tau {
        let rec = &traj.steps[tau - j];
        let r = i.saturating_sub(j);
        let mut term = &dy.abar * &rec.state.mu;
        for k in 0..=spec.h() {
            term += &dy.b[k] * &rec.controls.vhat[k][r] + &dy.bbar[k] * &rec.controls.ev[k];
        }
        if j > i {
            term += &rec.noise_term * rec.omega;
        }
        acc += &power * term;
        power = &power * &dy.a;
    }
    Ok(acc + power * &spec.init.x0)
}

/// Trajectory CSV header.
pub fn csv_header(spec: &ProblemSpec) -> String {
    let n = spec.n();
    let mut cols = vec!["run".to_string(), "tau".into(), "omega".into()];
    cols.extend((1..=n).map(|k| format!("x_{k}")));
    cols.extend((1..=n).map(|k| format!("mu_{k}")));
    for j in 1..=spec.h() {
        cols.extend((1..=n).map(|k| format!("xhat{j}_{k}")));
    }
    for i in 0..=spec.h() {
        cols.extend((1..=spec.dims.m[i]).map(|k| format!("v{i}_{k}")));
    }
    cols.push("stage_cost".into());
    cols.join(",")
}

fn push_vec(row: &mut Vec<String>, v: &Vector) {
    row.extend(v.iter().map(|x| x.to_string()));
}

/// Trajectory CSV: one row per (run, τ ≤ Γ) and a terminal row per run with
/// τ = Γ+1 carrying x, E x and the terminal cost (other fields empty).
pub fn trajectories_to_csv(spec: &ProblemSpec, batch: &[TrajectoryRecord]) -> String {
    let mut out = csv_header(spec);
    out.push('\n');
    let n = spec.n();
    let width_pred = n * spec.h();
    let width_v: usize = spec.dims.m.iter().sum();
    for t in batch {
        for s in &t.steps {
            let mut row = vec![t.run.to_string(), s.state.tau.to_string(), s.omega.to_string()];
            push_vec(&mut row, &s.state.x);
            push_vec(&mut row, &s.state.mu);
            for p in &s.state.xhat {
                push_vec(&mut row, p);
            }
            for v in &s.controls.v {
                push_vec(&mut row, v);
            }
            row.push(s.stage_cost.to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        let mut row = vec![t.run.to_string(), t.terminal.tau.to_string(), String::new()];
        push_vec(&mut row, &t.terminal.x);
        push_vec(&mut row, &t.terminal.mu);
        row.extend(std::iter::repeat_n(String::new(), width_pred + width_v));
        row.push(t.terminal_cost.to_string());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Whitespace-separated plot data of the first run: τ followed by each state
/// component (one series per component, e.g. `plot for [k=2:3] 'f' u 1:k`).
pub fn plot_data(spec: &ProblemSpec, batch: &[TrajectoryRecord]) -> String {
    let mut out = String::from("# tau");
    for k in 1..=spec.n() {
        let _ = write!(out, " x_{k}");
    }
    out.push('\n');
    if let Some(t) = batch.first() {
        for tau in 0..=t.steps.len() {
            let s = t.state(tau).expect("in range");
            let _ = write!(out, "{tau}");
            for v in s.x.iter() {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
    }
    out
}
