//! Dense convex QP solver.
//!
//! ```text
//!     minimize     ½ xᵀ H x + gᵀ x
//!     subject to   A x ≤ b
//! ```
//!
//! A Mehrotra predictor-corrector interior-point method brings the iterate
//! close to the optimum, then an active-set step solves the equality system
//! implied by the constraints the IPM found active. When the problem carries
//! a least-squares factor (`H = FᵀF`, `g = −Fᵀt`) that step runs through QR
//! on `F`, which keeps weakly penalized directions accurate.

use nalgebra::{Cholesky, DMatrix, DVector, QR};

/// Problem data. `hessian` must be symmetric positive semidefinite.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseQp {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub constraints: DMatrix<f64>,
    pub bounds: DVector<f64>,
    pub factor: Option<LeastSquaresFactor>,
}

/// Objective written as `½‖F x − t‖²` up to a constant.
#[derive(Clone, Debug, PartialEq)]
pub struct LeastSquaresFactor {
    pub matrix: DMatrix<f64>,
    pub target: DVector<f64>,
}

impl DenseQp {
    /// Builds `H` and `g` from a least-squares factor.
    pub fn from_factor(factor: LeastSquaresFactor, constraints: DMatrix<f64>, bounds: DVector<f64>) -> Self {
        let hessian = factor.matrix.tr_mul(&factor.matrix);
        let gradient = -factor.matrix.tr_mul(&factor.target);
        Self { hessian, gradient, constraints, bounds, factor: Some(factor) }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.bounds.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x)
    }

    /// `H x + g`, through the factor when one is present.
    pub fn objective_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Some(f) => f.matrix.tr_mul(&(&f.matrix * x - &f.target)),
            None => &self.hessian * x + &self.gradient,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QpSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 100, polish: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    /// Iteration limit hit; the best iterate is returned.
    MaxIterations,
    /// Constraints could not be satisfied; the residual is reported.
    Infeasible,
}

impl QpStatus {
    pub fn name(self) -> &'static str {
        match self {
            QpStatus::Solved => "solved",
            QpStatus::MaxIterations => "max_iterations",
            QpStatus::Infeasible => "infeasible",
        }
    }
}

/// First-order optimality residuals, all in infinity norm.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktResiduals {
    /// `‖H x + g + Aᵀ z‖`.
    pub stationarity: f64,
    /// Largest constraint violation `max(A x − b, 0)`.
    pub primal: f64,
    /// Largest `|zᵢ (b − A x)ᵢ|`.
    pub complementarity: f64,
    /// Largest negative multiplier magnitude.
    pub dual: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity).max(self.dual)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub multipliers: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub polished: bool,
    pub residuals: KktResiduals,
}

pub fn kkt_residuals(qp: &DenseQp, x: &DVector<f64>, z: &DVector<f64>) -> KktResiduals {
    let slack = &qp.bounds - &qp.constraints * x;
    let stationarity = (qp.objective_gradient(x) + qp.constraints.tr_mul(z)).amax();
    let primal = slack.iter().fold(0.0f64, |m, &s| if s.is_nan() { f64::INFINITY } else { m.max(-s) });
    let complementarity = slack.iter().zip(z.iter()).fold(0.0f64, |m, (s, z)| m.max((s * z).abs()));
    let dual = z.iter().fold(0.0f64, |m, &z| m.max(-z));
    KktResiduals { stationarity, primal, complementarity, dual }
}

/// `AᵀDA` skipping structural zeros of `A`.
fn weighted_gram(a: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    let mut out = DMatrix::zeros(n, n);
    let mut nz = Vec::with_capacity(n);
    for r in 0..a.nrows() {
        nz.clear();
        nz.extend((0..n).filter(|&c| a[(r, c)] != 0.0));
        for &i in &nz {
            let wi = d[r] * a[(r, i)];
            for &j in &nz {
                out[(i, j)] += wi * a[(r, j)];
            }
        }
    }
    out
}

fn factorize(mut m: DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    let scale = m.diagonal().amax().max(1.0);
    let mut shift = 0.0;
    for _ in 0..8 {
        if let Some(c) = m.clone().cholesky() {
            return Some(c);
        }
        shift = if shift == 0.0 { 1e-14 * scale } else { shift * 100.0 };
        for i in 0..m.nrows() {
            m[(i, i)] += shift;
        }
    }
    None
}

fn step_to_boundary(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter().zip(dv.iter()).filter(|(_, &d)| d < 0.0).fold(1.0f64, |a, (&x, &d)| a.min(-x / d))
}

pub fn solve(qp: &DenseQp, settings: &QpSettings) -> QpSolution {
    let n = qp.dim();
    let m = qp.num_constraints();
    if n == 0 {
        let x = DVector::zeros(0);
        let z = DVector::zeros(m);
        let residuals = kkt_residuals(qp, &x, &z);
        let status = if residuals.primal > 0.0 { QpStatus::Infeasible } else { QpStatus::Solved };
        return QpSolution { x, multipliers: z, status, iterations: 0, polished: false, residuals };
    }

    let tol = settings.tolerance;
    let a = &qp.constraints;
    let b = &qp.bounds;
    let scale_d = 1.0 + qp.gradient.amax();
    let scale_p = 1.0 + b.amax();

    let mut x = DVector::zeros(n);
    let mut s = b.map(|v| v.max(1.0));
    let mut z = DVector::from_element(m, 1.0);
    let mut status = QpStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < settings.max_iterations {
        let r_d = &qp.hessian * &x + &qp.gradient + a.tr_mul(&z);
        let r_p = a * &x + &s - b;
        let mu = if m > 0 { s.dot(&z) / m as f64 } else { 0.0 };
        if r_d.amax() <= tol * scale_d && r_p.amax() <= tol * scale_p && mu <= tol {
            status = QpStatus::Solved;
            break;
        }
        if !x.iter().all(|v| v.is_finite()) || x.amax() > 1e14 {
            status = QpStatus::Infeasible;
            break;
        }
        iterations += 1;

        let w = z.component_div(&s);
        let mut kkt = qp.hessian.clone();
        if m > 0 {
            kkt += weighted_gram(a, &w);
        }
        let Some(chol) = factorize(kkt) else {
            status = QpStatus::Infeasible;
            break;
        };

        let solve_dir = |r_c: &DVector<f64>| {
            let rhs = -&r_d + a.tr_mul(&(r_c - z.component_mul(&r_p)).component_div(&s));
            let dx = chol.solve(&rhs);
            let ds = -&r_p - a * &dx;
            let dz = (-r_c - z.component_mul(&ds)).component_div(&s);
            (dx, ds, dz)
        };

        let r_aff = s.component_mul(&z);
        let (_, ds_a, dz_a) = solve_dir(&r_aff);
        let alpha_a = step_to_boundary(&s, &ds_a).min(step_to_boundary(&z, &dz_a));
        let mu_aff = (&s + &ds_a * alpha_a).dot(&(&z + &dz_a * alpha_a)) / m.max(1) as f64;
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3) } else { 0.0 };

        let r_c = r_aff + ds_a.component_mul(&dz_a) - DVector::from_element(m, sigma * mu);
        let (dx, ds, dz) = solve_dir(&r_c);
        let alpha = (0.99 * step_to_boundary(&s, &ds).min(step_to_boundary(&z, &dz))).min(1.0);
        let finite = |v: &DVector<f64>| v.iter().all(|e| e.is_finite());
        if !(finite(&dx) && finite(&ds) && finite(&dz) && alpha.is_finite()) {
            status = QpStatus::Infeasible;
            break;
        }
        x += &dx * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
    }

    let mut solution = QpSolution {
        residuals: kkt_residuals(qp, &x, &z),
        x,
        multipliers: z,
        status,
        iterations,
        polished: false,
    };
    if settings.polish && status != QpStatus::Infeasible {
        polish(qp, &s, &mut solution, tol);
    }
    solution
}

fn polish(qp: &DenseQp, slack: &DVector<f64>, sol: &mut QpSolution, tol: f64) {
    let active: Vec<usize> = (0..qp.num_constraints()).filter(|&i| sol.multipliers[i] > slack[i]).collect();
    let Some((x, lambda)) = solve_equality(qp, &active) else {
        return;
    };
    let mut z = DVector::zeros(qp.num_constraints());
    for (&i, &l) in active.iter().zip(lambda.iter()) {
        z[i] = l;
    }
    let residuals = kkt_residuals(qp, &x, &z);
    let feasible_tol = tol * (1.0 + qp.bounds.amax());
    if residuals.primal > feasible_tol || residuals.dual > tol * (1.0 + z.amax()) {
        return;
    }
    if residuals.max() > sol.residuals.max().max(tol) {
        return;
    }
    sol.x = x;
    sol.multipliers = z;
    sol.residuals = residuals;
    sol.status = QpStatus::Solved;
    sol.polished = true;
}

/// Minimizes the objective with the `active` rows held as equalities.
/// Returns the point and the multipliers of the active rows.
pub fn solve_equality(qp: &DenseQp, active: &[usize]) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = qp.dim();
    let na = active.len();
    if na > n {
        return None;
    }
    let mut c = DMatrix::zeros(na, n);
    let mut d = DVector::zeros(na);
    for (r, &i) in active.iter().enumerate() {
        c.set_row(r, &qp.constraints.row(i));
        d[r] = qp.bounds[i];
    }
    match &qp.factor {
        Some(f) => solve_equality_factored(f, &c, &d),
        None => solve_equality_kkt(qp, &c, &d),
    }
}

fn solve_equality_factored(
    f: &LeastSquaresFactor,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = f.matrix.ncols();
    let na = c.nrows();
    let mut padded = DMatrix::zeros(n, n);
    padded.columns_mut(0, na).copy_from(&c.transpose());
    let qr = QR::new(padded);
    let q = qr.q();
    let r = qr.r();
    let r1 = r.view((0, 0), (na, na)).into_owned();
    let rmax = r1.diagonal().amax();
    if na > 0 && r1.diagonal().iter().any(|v| v.abs() <= 1e-12 * rmax.max(1.0)) {
        return None;
    }
    let q1 = q.columns(0, na).into_owned();
    let z = q.columns(na, n - na).into_owned();

    let w = r1.transpose().solve_lower_triangular(d)?;
    let particular = &q1 * w;
    let mut x = particular.clone();
    if n > na {
        let reduced = &f.matrix * &z;
        let rhs = &f.target - &f.matrix * &particular;
        let y = least_squares(reduced, &rhs)?;
        x += &z * y;
    }
    let grad = f.matrix.tr_mul(&(&f.matrix * &x - &f.target));
    let lambda = r1.solve_upper_triangular(&(-q1.tr_mul(&grad)))?;
    Some((x, lambda))
}

fn least_squares(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if a.nrows() < a.ncols() {
        return None;
    }
    let cols = a.ncols();
    let qr = QR::new(a);
    let qtb = qr.q().tr_mul(b);
    let r = qr.r();
    let rmax = r.diagonal().amax();
    if r.diagonal().iter().any(|v| v.abs() <= 1e-14 * rmax.max(1e-300)) {
        return None;
    }
    r.solve_upper_triangular(&qtb.rows(0, cols).into_owned())
}

fn solve_equality_kkt(qp: &DenseQp, c: &DMatrix<f64>, d: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = qp.dim();
    let na = c.nrows();
    let mut k = DMatrix::zeros(n + na, n + na);
    k.view_mut((0, 0), (n, n)).copy_from(&qp.hessian);
    k.view_mut((0, n), (n, na)).copy_from(&c.transpose());
    k.view_mut((n, 0), (na, n)).copy_from(c);
    let mut rhs = DVector::zeros(n + na);
    rhs.rows_mut(0, n).copy_from(&(-&qp.gradient));
    rhs.rows_mut(n, na).copy_from(d);
    let sol = k.lu().solve(&rhs)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, n).into_owned(), sol.rows(n, na).into_owned()))
}
