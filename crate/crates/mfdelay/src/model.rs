//! Problem instances: dimensions, mean-field dynamics with multiplicative
//! noise, quadratic cost weights, initial data, validation against the
//! weight assumptions, stacked-block notation, and the JSON configuration
//! format.
//!
//! The controlled system is
//!
//! ```text
//! x(τ+1) = A x + Ā Ex + Σ_i (B_i v_i + B̄_i Ev_i)
//!        + ω(τ) (C x + C̄ Ex + Σ_i (D_i v_i + D̄_i Ev_i)),   ω(τ) ~ N(0, σ²),
//! ```
//!
//! where controller `i` (0 ≤ i ≤ h) observes x(0) and ω(0..τ−i−1), and acts
//! with given warm-up values while τ < i.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, block_diag, hstack, min_sym_eig, Mat, Vector};

/// Tolerance for positive-semidefinite checks (smallest eigenvalue ≥ −PSD_TOL).
pub const PSD_TOL: f64 = 1e-10;
/// Tolerance for positive-definite checks (smallest eigenvalue ≥ PD_TOL).
pub const PD_TOL: f64 = 1e-10;
/// Relative asymmetry below which weights are silently symmetrized.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Problem sizes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dimensions {
    /// State dimension.
    pub n: usize,
    /// Largest delay; controllers are indexed 0..=h and controller i has delay i.
    pub h: usize,
    /// Control dimension of each controller, `m.len() == h + 1`.
    pub m: Vec<usize>,
    /// Horizon Γ: stage costs for τ = 0..=Γ, terminal weight at Γ+1.
    pub gamma: usize,
}

impl Dimensions {
    /// Cumulative stack size M_i = m_0 + … + m_i.
    pub fn stack_size(&self, i: usize) -> usize {
        self.m[..=i].iter().sum()
    }

    /// Row offset of controller `i`'s block inside any stack of index ≥ i.
    pub fn offset(&self, i: usize) -> usize {
        self.m[..i].iter().sum()
    }
}

/// System matrices and noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldDynamics {
    pub a: Mat,
    pub abar: Mat,
    pub c: Mat,
    pub cbar: Mat,
    pub b: Vec<Mat>,
    pub bbar: Vec<Mat>,
    pub d: Vec<Mat>,
    pub dbar: Vec<Mat>,
    /// Variance σ² of the scalar noise.
    pub sigma2: f64,
}

/// Quadratic cost weights, including the terminal pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: Mat,
    pub qbar: Mat,
    pub r: Vec<Mat>,
    pub rbar: Vec<Mat>,
    /// Terminal weight Φ(Γ+1).
    pub phi_t: Mat,
    /// Terminal mean weight Φ̄(Γ+1).
    pub phibar_t: Mat,
}

/// Deterministic initial state and warm-up controls.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub x0: Vector,
    /// `warmup[i][τ]` for 1 ≤ i ≤ h and 0 ≤ τ < i; `warmup[0]` is empty.
    pub warmup: Vec<Vec<Vector>>,
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub dims: Dimensions,
    pub dynamics: MeanFieldDynamics,
    pub cost: CostWeights,
    pub init: InitialData,
}

impl ProblemSpec {
    /// An instance of the given shape with every matrix and vector zero,
    /// σ² = 1, and zero warm-up.
    pub fn zeros(n: usize, m: &[usize], gamma: usize) -> Self {
        let h = m.len() - 1;
        let z = Mat::zeros(n, n);
        let per = |f: &dyn Fn(usize) -> Mat| m.iter().map(|&k| f(k)).collect::<Vec<_>>();
        ProblemSpec {
            dims: Dimensions {
                n,
                h,
                m: m.to_vec(),
                gamma,
            },
            dynamics: MeanFieldDynamics {
                a: z.clone(),
                abar: z.clone(),
                c: z.clone(),
                cbar: z.clone(),
                b: per(&|k| Mat::zeros(n, k)),
                bbar: per(&|k| Mat::zeros(n, k)),
                d: per(&|k| Mat::zeros(n, k)),
                dbar: per(&|k| Mat::zeros(n, k)),
                sigma2: 1.0,
            },
            cost: CostWeights {
                q: z.clone(),
                qbar: z.clone(),
                r: per(&|k| Mat::zeros(k, k)),
                rbar: per(&|k| Mat::zeros(k, k)),
                phi_t: z.clone(),
                phibar_t: z,
            },
            init: InitialData {
                x0: Vector::zeros(n),
                warmup: (0..=h).map(|i| (0..i).map(|_| Vector::zeros(m[i])).collect()).collect(),
            },
        }
    }

    pub fn n(&self) -> usize {
        self.dims.n
    }

    pub fn h(&self) -> usize {
        self.dims.h
    }

    pub fn gamma(&self) -> usize {
        self.dims.gamma
    }

    /// Whether controller `i` acts optimally (rather than with its warm-up
    /// value) at time `tau`.
    pub fn is_active(&self, i: usize, tau: usize) -> bool {
        tau >= i
    }

    /// Whether every bar matrix and bar weight is exactly zero.
    pub fn is_zero_bar(&self) -> bool {
        let z = |m: &Mat| m.iter().all(|v| *v == 0.0);
        z(&self.dynamics.abar)
            && z(&self.dynamics.cbar)
            && self.dynamics.bbar.iter().all(z)
            && self.dynamics.dbar.iter().all(z)
            && z(&self.cost.qbar)
            && self.cost.rbar.iter().all(z)
            && z(&self.cost.phibar_t)
    }

    /// Whether any warm-up entry is nonzero.
    pub fn has_warmup(&self) -> bool {
        self.init.warmup.iter().flatten().any(|v| v.iter().any(|x| *x != 0.0))
    }

    /// Copy with a different horizon (warm-up data is kept).
    pub fn with_gamma(&self, gamma: usize) -> Self {
        let mut s = self.clone();
        s.dims.gamma = gamma;
        s
    }
}

// ---------------------------------------------------------------------------
// Configuration format
// ---------------------------------------------------------------------------

type Rows = Vec<Vec<f64>>;

fn one() -> f64 {
    1.0
}

/// On-disk JSON layout; matrices are row-major arrays of rows.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemDoc {
    n: usize,
    h: usize,
    m: Vec<usize>,
    gamma: usize,
    #[serde(default = "one")]
    sigma2: f64,
    #[serde(rename = "A")]
    a: Rows,
    #[serde(rename = "Abar", default)]
    abar: Option<Rows>,
    #[serde(rename = "C")]
    c: Rows,
    #[serde(rename = "Cbar", default)]
    cbar: Option<Rows>,
    #[serde(rename = "B")]
    b: Vec<Rows>,
    #[serde(rename = "Bbar", default)]
    bbar: Option<Vec<Rows>>,
    #[serde(rename = "D")]
    d: Vec<Rows>,
    #[serde(rename = "Dbar", default)]
    dbar: Option<Vec<Rows>>,
    #[serde(rename = "Q")]
    q: Rows,
    #[serde(rename = "Qbar", default)]
    qbar: Option<Rows>,
    #[serde(rename = "R")]
    r: Vec<Rows>,
    #[serde(rename = "Rbar", default)]
    rbar: Option<Vec<Rows>>,
    #[serde(rename = "PhiT")]
    phi_t: Rows,
    #[serde(rename = "PhibarT", default)]
    phibar_t: Option<Rows>,
    x0: Vec<f64>,
    #[serde(default)]
    warmup: Option<BTreeMap<String, BTreeMap<String, Vec<f64>>>>,
}

fn to_mat(name: &str, rows: &Rows, r: usize, c: usize) -> Result<Mat> {
    let found_cols = rows.first().map_or(0, |row| row.len());
    if let Some(bad) = rows.iter().position(|row| row.len() != found_cols) {
        return Err(Error::Schema {
            path: format!("{name}[{bad}]"),
            message: "ragged matrix: rows have different lengths".into(),
        });
    }
    if rows.len() != r || found_cols != c {
        return Err(Error::Dimension {
            name: name.into(),
            expected: format!("{r}x{c}"),
            found: format!("{}x{}", rows.len(), found_cols),
        });
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

fn opt_mat(name: &str, rows: &Option<Rows>, r: usize, c: usize) -> Result<Mat> {
    match rows {
        Some(rows) => to_mat(name, rows, r, c),
        None => Ok(Mat::zeros(r, c)),
    }
}

fn mat_list(
    name: &str,
    list: Option<&Vec<Rows>>,
    count: usize,
    shape: impl Fn(usize) -> (usize, usize),
) -> Result<Vec<Mat>> {
    match list {
        None => Ok((0..count)
            .map(|i| {
                let (r, c) = shape(i);
                Mat::zeros(r, c)
            })
            .collect()),
        Some(list) => {
            if list.len() != count {
                return Err(Error::Dimension {
                    name: name.into(),
                    expected: format!("{count} matrices"),
                    found: format!("{} matrices", list.len()),
                });
            }
            list.iter()
                .enumerate()
                .map(|(i, rows)| {
                    let (r, c) = shape(i);
                    to_mat(&format!("{name}[{i}]"), rows, r, c)
                })
                .collect()
        }
    }
}

fn from_rows(m: &Mat) -> Rows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Symmetrize `m` in place if its asymmetry is within tolerance; error otherwise.
fn enforce_symmetry(name: &str, m: &mut Mat) -> Result<()> {
    let rel = asymmetry(m);
    if rel > SYMMETRY_TOL {
        return Err(Error::Asymmetric {
            name: name.into(),
            relative: rel,
        });
    }
    if rel > 0.0 {
        *m = (&*m + m.transpose()) * 0.5;
    }
    Ok(())
}

/// Parse a JSON configuration document into a problem instance.
///
/// Omitted bar matrices/weights and warm-up entries default to zero and an
/// omitted `sigma2` defaults to 1. Weights whose asymmetry is within
/// [`SYMMETRY_TOL`] are symmetrized; larger asymmetry is an error.
pub fn load_problem(document: &str) -> Result<ProblemSpec> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let doc: ProblemDoc = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    from_doc(doc)
}

fn from_doc(doc: ProblemDoc) -> Result<ProblemSpec> {
    let n = doc.n;
    let h = doc.h;
    if n == 0 {
        return Err(Error::Schema {
            path: "n".into(),
            message: "state dimension must be at least 1".into(),
        });
    }
    if doc.m.len() != h + 1 {
        return Err(Error::Dimension {
            name: "m".into(),
            expected: format!("{} entries (h+1)", h + 1),
            found: format!("{} entries", doc.m.len()),
        });
    }
    if let Some(i) = doc.m.iter().position(|&k| k == 0) {
        return Err(Error::Schema {
            path: format!("m[{i}]"),
            message: "control dimensions must be at least 1".into(),
        });
    }
    if !doc.sigma2.is_finite() || doc.sigma2 < 0.0 {
        return Err(Error::Schema {
            path: "sigma2".into(),
            message: format!("noise variance must be a finite number >= 0, got {}", doc.sigma2),
        });
    }
    let m = doc.m.clone();
    let nm = |i: usize| (n, m[i]);
    let mm = |i: usize| (m[i], m[i]);

    let dynamics = MeanFieldDynamics {
        a: to_mat("A", &doc.a, n, n)?,
        abar: opt_mat("Abar", &doc.abar, n, n)?,
        c: to_mat("C", &doc.c, n, n)?,
        cbar: opt_mat("Cbar", &doc.cbar, n, n)?,
        b: mat_list("B", Some(&doc.b), h + 1, nm)?,
        bbar: mat_list("Bbar", doc.bbar.as_ref(), h + 1, nm)?,
        d: mat_list("D", Some(&doc.d), h + 1, nm)?,
        dbar: mat_list("Dbar", doc.dbar.as_ref(), h + 1, nm)?,
        sigma2: doc.sigma2,
    };
    let mut cost = CostWeights {
        q: to_mat("Q", &doc.q, n, n)?,
        qbar: opt_mat("Qbar", &doc.qbar, n, n)?,
        r: mat_list("R", Some(&doc.r), h + 1, mm)?,
        rbar: mat_list("Rbar", doc.rbar.as_ref(), h + 1, mm)?,
        phi_t: to_mat("PhiT", &doc.phi_t, n, n)?,
        phibar_t: opt_mat("PhibarT", &doc.phibar_t, n, n)?,
    };
    enforce_symmetry("Q", &mut cost.q)?;
    enforce_symmetry("Qbar", &mut cost.qbar)?;
    enforce_symmetry("PhiT", &mut cost.phi_t)?;
    enforce_symmetry("PhibarT", &mut cost.phibar_t)?;
    for i in 0..=h {
        enforce_symmetry(&format!("R[{i}]"), &mut cost.r[i])?;
        enforce_symmetry(&format!("Rbar[{i}]"), &mut cost.rbar[i])?;
    }

    if doc.x0.len() != n {
        return Err(Error::Dimension {
            name: "x0".into(),
            expected: format!("{n} entries"),
            found: format!("{} entries", doc.x0.len()),
        });
    }
    let mut warmup: Vec<Vec<Vector>> = (0..=h).map(|i| (0..i).map(|_| Vector::zeros(m[i])).collect()).collect();
    if let Some(map) = &doc.warmup {
        for (ikey, inner) in map {
            let i: usize = ikey.parse().map_err(|_| Error::Schema {
                path: format!("warmup.{ikey}"),
                message: "controller key must be an integer".into(),
            })?;
            if i == 0 || i > h {
                return Err(Error::Schema {
                    path: format!("warmup.{ikey}"),
                    message: format!("controller index must be in 1..={h}"),
                });
            }
            for (tkey, vals) in inner {
                let path = format!("warmup.{ikey}.{tkey}");
                let tau: usize = tkey.parse().map_err(|_| Error::Schema {
                    path: path.clone(),
                    message: "time key must be an integer".into(),
                })?;
                if tau >= i {
                    return Err(Error::Schema {
                        path,
                        message: format!("warm-up times for controller {i} are 0..{i}"),
                    });
                }
                if vals.len() != m[i] {
                    return Err(Error::Dimension {
                        name: path,
                        expected: format!("{} entries", m[i]),
                        found: format!("{} entries", vals.len()),
                    });
                }
                warmup[i][tau] = Vector::from_vec(vals.clone());
            }
        }
    }

    Ok(ProblemSpec {
        dims: Dimensions {
            n,
            h,
            m,
            gamma: doc.gamma,
        },
        dynamics,
        cost,
        init: InitialData {
            x0: Vector::from_vec(doc.x0),
            warmup,
        },
    })
}

/// Serialize a problem instance to the configuration format (every key
/// written explicitly, so the document re-parses to an identical instance).
pub fn emit_problem(spec: &ProblemSpec) -> Result<String> {
    let dy = &spec.dynamics;
    let co = &spec.cost;
    let list = |v: &[Mat]| v.iter().map(from_rows).collect::<Vec<_>>();
    let mut warmup = BTreeMap::new();
    for (i, per) in spec.init.warmup.iter().enumerate().skip(1) {
        let inner: BTreeMap<String, Vec<f64>> = per
            .iter()
            .enumerate()
            .map(|(t, v)| (t.to_string(), v.iter().copied().collect()))
            .collect();
        warmup.insert(i.to_string(), inner);
    }
    let doc = ProblemDoc {
        n: spec.dims.n,
        h: spec.dims.h,
        m: spec.dims.m.clone(),
        gamma: spec.dims.gamma,
        sigma2: dy.sigma2,
        a: from_rows(&dy.a),
        abar: Some(from_rows(&dy.abar)),
        c: from_rows(&dy.c),
        cbar: Some(from_rows(&dy.cbar)),
        b: list(&dy.b),
        bbar: Some(list(&dy.bbar)),
        d: list(&dy.d),
        dbar: Some(list(&dy.dbar)),
        q: from_rows(&co.q),
        qbar: Some(from_rows(&co.qbar)),
        r: list(&co.r),
        rbar: Some(list(&co.rbar)),
        phi_t: from_rows(&co.phi_t),
        phibar_t: Some(from_rows(&co.phibar_t)),
        x0: spec.init.x0.iter().copied().collect(),
        warmup: if warmup.is_empty() { None } else { Some(warmup) },
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Whether a failed check blocks synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// Outcome of one validation check.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub severity: Severity,
    /// The measured quantity (smallest eigenvalue, relative asymmetry, …).
    pub measured: f64,
    pub detail: String,
}

/// All validation checks of a problem instance.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    /// Whether any error-severity check failed.
    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    /// Failed error-severity checks.
    pub fn errors(&self) -> impl Iterator<Item = &Check> {
        self.checks
            .iter()
            .filter(|c| !c.passed && c.severity == Severity::Error)
    }

    /// Failed warning-severity checks.
    pub fn warnings(&self) -> impl Iterator<Item = &Check> {
        self.checks
            .iter()
            .filter(|c| !c.passed && c.severity == Severity::Warning)
    }

    /// Look up a check by name.
    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// One line per failed check.
    pub fn summary(&self) -> String {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{:?}: {} ({})", c.severity, c.name, c.detail))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn shape_ok(m: &Mat, r: usize, c: usize) -> bool {
    m.nrows() == r && m.ncols() == c
}

/// Check an instance against the structural and weight requirements.
///
/// Never fails; the report carries every outcome. Checks: dimensional
/// consistency, symmetry of each weight, Q ≥ 0, Q+Q̄ ≥ 0, Φ(Γ+1) ≥ 0,
/// Φ(Γ+1)+Φ̄(Γ+1) ≥ 0, R_i > 0, R_i+R̄_i > 0, σ² ≥ 0, warm-up coverage, and a
/// warning when Γ < h (some controllers never act on information).
pub fn validate(spec: &ProblemSpec) -> ValidationReport {
    let mut checks = Vec::new();
    let d = &spec.dims;
    let (n, h) = (d.n, d.h);
    let dy = &spec.dynamics;
    let co = &spec.cost;

    let mut bad_shapes = Vec::new();
    if n == 0 {
        bad_shapes.push("n".to_string());
    }
    if d.m.len() != h + 1 || d.m.contains(&0) {
        bad_shapes.push("m".to_string());
    }
    for (name, mat) in [
        ("A", &dy.a),
        ("Abar", &dy.abar),
        ("C", &dy.c),
        ("Cbar", &dy.cbar),
        ("Q", &co.q),
        ("Qbar", &co.qbar),
        ("PhiT", &co.phi_t),
        ("PhibarT", &co.phibar_t),
    ] {
        if !shape_ok(mat, n, n) {
            bad_shapes.push(name.into());
        }
    }
    if bad_shapes.is_empty() {
        for (name, list) in [("B", &dy.b), ("Bbar", &dy.bbar), ("D", &dy.d), ("Dbar", &dy.dbar)] {
            if list.len() != h + 1 {
                bad_shapes.push(name.into());
                continue;
            }
            for (i, mat) in list.iter().enumerate() {
                if !shape_ok(mat, n, d.m[i]) {
                    bad_shapes.push(format!("{name}[{i}]"));
                }
            }
        }
        for (name, list) in [("R", &co.r), ("Rbar", &co.rbar)] {
            if list.len() != h + 1 {
                bad_shapes.push(name.into());
                continue;
            }
            for (i, mat) in list.iter().enumerate() {
                if !shape_ok(mat, d.m[i], d.m[i]) {
                    bad_shapes.push(format!("{name}[{i}]"));
                }
            }
        }
        if spec.init.x0.len() != n {
            bad_shapes.push("x0".into());
        }
    }
    let dims_ok = bad_shapes.is_empty();
    checks.push(Check {
        name: "dimensions".into(),
        passed: dims_ok,
        severity: Severity::Error,
        measured: bad_shapes.len() as f64,
        detail: if dims_ok {
            "all shapes consistent".into()
        } else {
            format!("inconsistent: {}", bad_shapes.join(", "))
        },
    });
    if !dims_ok {
        return ValidationReport { checks };
    }

    let mut weights: Vec<(String, &Mat)> = vec![
        ("Q".into(), &co.q),
        ("Qbar".into(), &co.qbar),
        ("PhiT".into(), &co.phi_t),
        ("PhibarT".into(), &co.phibar_t),
    ];
    for i in 0..=h {
        weights.push((format!("R[{i}]"), &co.r[i]));
        weights.push((format!("Rbar[{i}]"), &co.rbar[i]));
    }
    for (name, mat) in &weights {
        let rel = asymmetry(mat);
        checks.push(Check {
            name: format!("symmetric {name}"),
            passed: rel <= SYMMETRY_TOL,
            severity: Severity::Error,
            measured: rel,
            detail: format!("relative asymmetry {rel:.3e} (limit {SYMMETRY_TOL:e})"),
        });
    }

    let mut psd = |name: String, mat: Mat| {
        let e = min_sym_eig(&mat);
        checks.push(Check {
            name,
            passed: e >= -PSD_TOL,
            severity: Severity::Error,
            measured: e,
            detail: format!("min eigenvalue {e:.6e} (need >= -{PSD_TOL:e})"),
        });
    };
    psd("Q positive semidefinite".into(), co.q.clone());
    psd("Q+Qbar positive semidefinite".into(), &co.q + &co.qbar);
    psd("PhiT positive semidefinite".into(), co.phi_t.clone());
    psd("PhiT+PhibarT positive semidefinite".into(), &co.phi_t + &co.phibar_t);
    for i in 0..=h {
        for (name, mat) in [
            (format!("R[{i}] positive definite"), co.r[i].clone()),
            (format!("R[{i}]+Rbar[{i}] positive definite"), &co.r[i] + &co.rbar[i]),
        ] {
            let e = min_sym_eig(&mat);
            checks.push(Check {
                name,
                passed: e >= PD_TOL,
                severity: Severity::Error,
                measured: e,
                detail: format!("min eigenvalue {e:.6e} (need >= {PD_TOL:e})"),
            });
        }
    }

    checks.push(Check {
        name: "sigma2 nonnegative".into(),
        passed: dy.sigma2 >= 0.0 && dy.sigma2.is_finite(),
        severity: Severity::Error,
        measured: dy.sigma2,
        detail: format!("sigma2 = {}", dy.sigma2),
    });

    let coverage_ok = spec.init.warmup.len() == h + 1
        && spec
            .init
            .warmup
            .iter()
            .enumerate()
            .all(|(i, per)| per.len() == i && per.iter().all(|v| v.len() == d.m[i]));
    checks.push(Check {
        name: "warmup coverage".into(),
        passed: coverage_ok,
        severity: Severity::Error,
        measured: spec.init.warmup.iter().map(|p| p.len()).sum::<usize>() as f64,
        detail: "warm-up defined exactly for 1 <= i <= h, 0 <= tau < i".into(),
    });

    checks.push(Check {
        name: "horizon covers delays".into(),
        passed: d.gamma >= h,
        severity: Severity::Warning,
        measured: d.gamma as f64,
        detail: format!(
            "gamma = {}, h = {h}: controllers with delay > gamma only use warm-up values",
            d.gamma
        ),
    });

    ValidationReport { checks }
}

// ---------------------------------------------------------------------------
// Stacked blocks
// ---------------------------------------------------------------------------

/// Stacked-block notation for controllers 0..=i.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedBlocks {
    pub i: usize,
    /// [B_0 … B_i], n × M_i.
    pub b: Mat,
    /// [B̄_0 … B̄_i].
    pub bbar: Mat,
    /// [D_0 … D_i].
    pub d: Mat,
    /// [D̄_0 … D̄_i].
    pub dbar: Mat,
    /// diag(R_0 … R_i), M_i × M_i.
    pub r: Mat,
    /// diag(R̄_0 … R̄_i).
    pub rbar: Mat,
    /// [0 … 0 I_{m_i}], m_i × M_i.
    pub selector: Mat,
}

/// Build the stacked blocks for controllers 0..=i.
pub fn stack_blocks(spec: &ProblemSpec, i: usize) -> Result<StackedBlocks> {
    let h = spec.h();
    if i > h {
        return Err(Error::IndexOutOfRange { index: i, max: h });
    }
    let n = spec.n();
    let dy = &spec.dynamics;
    let co = &spec.cost;
    fn refs(v: &[Mat], i: usize) -> Vec<&Mat> {
        v[..=i].iter().collect()
    }
    let big_m = spec.dims.stack_size(i);
    let mi = spec.dims.m[i];
    let mut selector = Mat::zeros(mi, big_m);
    selector.view_mut((0, big_m - mi), (mi, mi)).fill_with_identity();
    Ok(StackedBlocks {
        i,
        b: hstack(&refs(&dy.b, i), n),
        bbar: hstack(&refs(&dy.bbar, i), n),
        d: hstack(&refs(&dy.d, i), n),
        dbar: hstack(&refs(&dy.dbar, i), n),
        r: block_diag(&refs(&co.r, i)),
        rbar: block_diag(&refs(&co.rbar, i)),
        selector,
    })
}

// ---------------------------------------------------------------------------
// Built-in fixtures and random instances
// ---------------------------------------------------------------------------

const SEC5_JSON: &str = include_str!("../data/sec5.json");

/// Built-in instances.
///
/// * `"sec5"` — the two-dimensional, three-controller example (h = 2,
///   m = (2,2,2), σ² = 1, unit weights) with Γ = 5 and x(0) = (2,1).
/// * `"sec5-long"` — the same matrices with Γ = 100 and x(0) = (2,1).
pub fn builtin_example(name: &str) -> Result<ProblemSpec> {
    let base = load_problem(SEC5_JSON)?;
    match name {
        "sec5" => Ok(base),
        "sec5-long" => {
            let mut s = base.with_gamma(100);
            s.init.x0 = Vector::from_vec(vec![2.0, 1.0]);
            Ok(s)
        }
        other => Err(Error::UnknownExample(other.into())),
    }
}

/// The JSON text of the built-in `sec5` fixture (also a schema example).
pub fn builtin_document() -> &'static str {
    SEC5_JSON
}

/// Options for [`random_spec`].
#[derive(Debug, Clone)]
pub struct RandomSpecOptions {
    pub n: usize,
    pub m: Vec<usize>,
    pub gamma: usize,
    /// Standard deviation of the entries of the system matrices.
    pub scale: f64,
    /// Draw nonzero warm-up controls.
    pub warmup: bool,
    /// Fixed σ²; drawn uniformly from [0.2, 1.5] when `None`.
    pub sigma2: Option<f64>,
    /// Make every bar matrix and bar weight zero.
    pub zero_bar: bool,
}

fn gaussian_mat<R: Rng + ?Sized>(rng: &mut R, r: usize, c: usize, scale: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| scale * normal(rng))
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn gram<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Mat {
    let x = gaussian_mat(rng, k, k, 1.0);
    let g = &x * x.transpose() / k as f64;
    (&g + g.transpose()) * 0.5
}

/// Draw a random instance satisfying the weight requirements: Q, Φ(Γ+1)
/// positive semidefinite; the bar weights possibly indefinite but with
/// Q+Q̄, Φ+Φ̄ ≥ 0 and R+R̄ > 0 by construction.
pub fn random_spec<R: Rng + ?Sized>(rng: &mut R, opts: &RandomSpecOptions) -> ProblemSpec {
    let n = opts.n;
    let mut spec = ProblemSpec::zeros(n, &opts.m, opts.gamma);
    let s = opts.scale;
    let zb = opts.zero_bar;
    let maybe = |rng: &mut R, r: usize, c: usize| {
        if zb {
            Mat::zeros(r, c)
        } else {
            gaussian_mat(rng, r, c, s)
        }
    };
    let dy = &mut spec.dynamics;
    dy.a = gaussian_mat(rng, n, n, s);
    dy.abar = maybe(rng, n, n);
    dy.c = gaussian_mat(rng, n, n, s);
    dy.cbar = maybe(rng, n, n);
    for (i, &k) in opts.m.iter().enumerate() {
        dy.b[i] = gaussian_mat(rng, n, k, s);
        dy.bbar[i] = maybe(rng, n, k);
        dy.d[i] = gaussian_mat(rng, n, k, s);
        dy.dbar[i] = maybe(rng, n, k);
    }
    dy.sigma2 = opts.sigma2.unwrap_or_else(|| rng.gen_range(0.2..1.5));

    let co = &mut spec.cost;
    co.q = gram(rng, n);
    co.phi_t = gram(rng, n);
    if !zb {
        co.qbar = gram(rng, n) - &co.q * 0.5;
        co.phibar_t = gram(rng, n) - &co.phi_t * 0.5;
    }
    for (i, &k) in opts.m.iter().enumerate() {
        co.r[i] = gram(rng, k) + Mat::identity(k, k) * 0.5;
        if !zb {
            co.rbar[i] = gram(rng, k) - &co.r[i] * 0.3;
        }
    }
    spec.init.x0 = Vector::from_fn(n, |_, _| normal(rng));
    if opts.warmup {
        for (i, per) in spec.init.warmup.iter_mut().enumerate() {
            for v in per.iter_mut() {
                *v = Vector::from_fn(opts.m[i], |_, _| normal(rng));
            }
        }
    }
    spec
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sec5_document_loads() {
        let s = builtin_example("sec5").unwrap();
        assert_eq!((s.n(), s.h(), s.gamma()), (2, 2, 5));
        assert_eq!(s.dims.m, vec![2, 2, 2]);
        assert_eq!(s.dynamics.sigma2, 1.0);
        assert_eq!(s.dynamics.a, Mat::from_row_slice(2, 2, &[0.6, 0.3, 0.4, 0.2]));
        assert_eq!(s.dynamics.abar, Mat::from_row_slice(2, 2, &[0.2, 0.0, 0.0, -0.6]));
        assert_eq!(s.cost.q, Mat::identity(2, 2));
        assert!(!validate(&s).has_errors());
    }

    #[test]
    fn long_example_has_long_horizon() {
        let s = builtin_example("sec5-long").unwrap();
        assert_eq!(s.gamma(), 100);
        assert_eq!(s.init.x0, Vector::from_vec(vec![2.0, 1.0]));
        assert!(matches!(builtin_example("bogus"), Err(Error::UnknownExample(_))));
    }

    #[test]
    fn omitted_bars_default_to_zero() {
        let doc = r#"{"n":1,"h":0,"m":[1],"gamma":2,"A":[[1]],"C":[[0.5]],
            "B":[[[1]]],"D":[[[0.1]]],"Q":[[1]],"R":[[[1]]],"PhiT":[[1]],"x0":[1]}"#;
        let s = load_problem(doc).unwrap();
        assert!(s.is_zero_bar());
        assert_eq!(s.dynamics.sigma2, 1.0);
        assert_eq!(s.dynamics.bbar[0], Mat::zeros(1, 1));
    }

    #[test]
    fn wrong_shape_names_the_matrix() {
        let mut v: serde_json::Value = serde_json::from_str(SEC5_JSON).unwrap();
        v["B"][1] = serde_json::json!([[0.1, 0.2, 0.3], [0.0, 0.1, 0.2]]);
        let err = load_problem(&v.to_string()).unwrap_err();
        match err {
            Error::Dimension { name, .. } => assert_eq!(name, "B[1]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_errors_name_the_key() {
        let mut v: serde_json::Value = serde_json::from_str(SEC5_JSON).unwrap();
        v["Q"] = serde_json::json!("identity");
        match load_problem(&v.to_string()).unwrap_err() {
            Error::Schema { path, .. } => assert_eq!(path, "Q"),
            other => panic!("unexpected {other:?}"),
        }
        let mut v: serde_json::Value = serde_json::from_str(SEC5_JSON).unwrap();
        v.as_object_mut().unwrap().remove("A");
        assert!(load_problem(&v.to_string()).unwrap_err().to_string().contains("`A`"));
        let mut v: serde_json::Value = serde_json::from_str(SEC5_JSON).unwrap();
        v["warmup"] = serde_json::json!({"1": {"1": [0.0, 0.0]}});
        match load_problem(&v.to_string()).unwrap_err() {
            Error::Schema { path, .. } => assert_eq!(path, "warmup.1.1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn warmup_is_parsed_and_defaults_to_zero() {
        let mut v: serde_json::Value = serde_json::from_str(SEC5_JSON).unwrap();
        v["warmup"] = serde_json::json!({"2": {"1": [0.5, -1.0]}});
        let s = load_problem(&v.to_string()).unwrap();
        assert_eq!(s.init.warmup[2][1], Vector::from_vec(vec![0.5, -1.0]));
        assert_eq!(s.init.warmup[2][0], Vector::zeros(2));
        assert_eq!(s.init.warmup[1][0], Vector::zeros(2));
        assert!(s.has_warmup());
    }

    #[test]
    fn near_symmetric_weights_are_symmetrized_and_others_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(SEC5_JSON).unwrap();
        v["Q"] = serde_json::json!([[1.0, 1e-14], [0.0, 1.0]]);
        let s = load_problem(&v.to_string()).unwrap();
        assert_eq!(s.cost.q[(0, 1)], s.cost.q[(1, 0)]);
        v["Q"] = serde_json::json!([[1.0, 0.1], [0.0, 1.0]]);
        assert!(matches!(load_problem(&v.to_string()), Err(Error::Asymmetric { .. })));
    }

    #[test]
    fn validation_flags_weight_violations() {
        let mut s = builtin_example("sec5").unwrap();
        s.cost.r[0] = Mat::zeros(2, 2);
        let rep = validate(&s);
        let c = rep.get("R[0] positive definite").unwrap();
        assert!(!c.passed);
        assert_eq!(c.measured, 0.0);
        assert!(rep.has_errors());

        let mut s = builtin_example("sec5").unwrap();
        s.cost.q = -Mat::identity(2, 2);
        s.cost.qbar = Mat::identity(2, 2) * 2.0;
        let rep = validate(&s);
        assert!(!rep.get("Q positive semidefinite").unwrap().passed);
        assert!(rep.get("Q+Qbar positive semidefinite").unwrap().passed);
    }

    #[test]
    fn short_horizon_is_a_warning() {
        let s = builtin_example("sec5").unwrap().with_gamma(1);
        let rep = validate(&s);
        assert!(!rep.has_errors());
        assert_eq!(rep.warnings().count(), 1);
    }

    #[test]
    fn validation_reports_bad_shapes() {
        let mut s = builtin_example("sec5").unwrap();
        s.dynamics.d[2] = Mat::zeros(3, 2);
        let rep = validate(&s);
        assert!(!rep.get("dimensions").unwrap().passed);
        assert!(rep.get("dimensions").unwrap().detail.contains("D[2]"));
    }

    #[test]
    fn stacked_blocks_match_components() {
        let s = builtin_example("sec5").unwrap();
        let b0 = stack_blocks(&s, 0).unwrap();
        assert_eq!(b0.b, s.dynamics.b[0]);
        assert_eq!(b0.selector, Mat::identity(2, 2));
        let b2 = stack_blocks(&s, 2).unwrap();
        assert_eq!(b2.b.shape(), (2, 6));
        assert_eq!(b2.b.columns(4, 2).into_owned(), s.dynamics.b[2]);
        let mut sel = Mat::zeros(2, 6);
        sel.view_mut((0, 4), (2, 2)).fill_with_identity();
        assert_eq!(b2.selector, sel);
        for i in 0..=2 {
            let b = stack_blocks(&s, i).unwrap();
            assert_eq!(&b.selector * &b.r * b.selector.transpose(), s.cost.r[i]);
            assert_eq!(&b.selector * b.b.transpose(), s.dynamics.b[i].transpose());
        }
        assert!(matches!(
            stack_blocks(&s, 3),
            Err(Error::IndexOutOfRange { index: 3, max: 2 })
        ));
    }

    #[test]
    fn random_specs_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 0..20 {
            let opts = RandomSpecOptions {
                n: 1 + k % 3,
                m: vec![1 + k % 2; 1 + k % 3],
                gamma: 4,
                scale: 0.5,
                warmup: k % 2 == 0,
                sigma2: None,
                zero_bar: k % 5 == 0,
            };
            let s = random_spec(&mut rng, &opts);
            let rep = validate(&s);
            assert!(!rep.has_errors(), "{}", rep.summary());
            assert_eq!(s.is_zero_bar(), k % 5 == 0);
        }
    }
}
