//! m-domination along orbit segments, point classification and the jump
//! functional, plus the symplectic domination-implies-hyperbolicity check.

use crate::dynamics::{BaseSystem, Cocycle, DynamicsError, FactoredProduct, MatrixPath, OrbitSegment, OrbitStream, State};
use crate::linalg::{self, LinalgError, Mat, Subspace, SymplecticForm};
use crate::lyapunov::{self, LyapunovError};
use crate::sample;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_WINDOWS: usize = 1000;
const COLLAPSE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DominationError {
    #[error("splitting collapse at step {0}")]
    SplittingCollapse(usize),
    #[error("domination margin insufficient: ratio {ratio:e} not below {required:e}")]
    MarginInsufficient { ratio: f64, required: f64 },
    #[error("not Lagrangian")]
    NotLagrangian,
    #[error("λ_q not resolved")]
    LambdaQUnresolved,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Lyapunov(#[from] LyapunovError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

pub type Result<T> = std::result::Result<T, DominationError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominationReport {
    /// dim E.
    pub p: usize,
    pub m: usize,
    /// Tested windows start at n = 0..windows.
    pub windows: usize,
    /// r_n(m) = ‖A^m|F_n‖ / m(A^m|E_n).
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    /// Some(m) when every tested ratio is ≤ 1/2.
    pub verdict: Option<usize>,
    pub min_angle: f64,
}

impl DominationReport {
    pub fn dominated(&self) -> bool {
        self.verdict.is_some()
    }
}

/// (log‖P|E‖, log m(P|E)) for a frame pushed through P.
fn frame_log_norms(fp: &FactoredProduct) -> (f64, f64) {
    let s = linalg::singular_values(&fp.r);
    (s[0].ln() + fp.log_scale, s[s.len() - 1].ln() + fp.log_scale)
}

/// (max, min) of ‖Bv‖ over unit v, for a dense image B of an orthonormal frame.
fn frame_extremes(b: &Mat) -> (f64, f64) {
    if b.ncols() == 1 {
        let n = b.norm();
        return (n, n);
    }
    let s = linalg::singular_values(b);
    (s[0], s[s.len() - 1])
}

const DENSE_RANGE: f64 = 1e100;

/// Window ratios r_n(m) for m = 1..=m_max at every start n with given frames
/// of E_n and F_n. Images are carried densely while they stay in range, so
/// that ratios like 2^{-1} come out exact; afterwards in factored log form.
fn ratio_rows(path: &MatrixPath, e_frames: &[Mat], f_frames: &[Mat], m_max: usize) -> Vec<Vec<f64>> {
    e_frames
        .par_iter()
        .zip(f_frames.par_iter())
        .enumerate()
        .map(|(n, (e, f))| {
            let mut be = Some(e.clone());
            let mut bf = Some(f.clone());
            let mut pe = FactoredProduct::from_frame(e.clone());
            let mut pf = FactoredProduct::from_frame(f.clone());
            (1..=m_max)
                .map(|m| {
                    let a = path.matrix(n + m - 1);
                    path.push_into(n + m - 1, n + m, &mut pe);
                    path.push_into(n + m - 1, n + m, &mut pf);
                    if let (Some(x), Some(y)) = (be.take(), bf.take()) {
                        let (x, y) = (a * x, a * y);
                        let (_, co) = frame_extremes(&x);
                        let (no, _) = frame_extremes(&y);
                        let in_range = |v: f64| v < DENSE_RANGE && v > 1.0 / DENSE_RANGE;
                        if in_range(co) && in_range(no) {
                            be = Some(x);
                            bf = Some(y);
                            return no / co;
                        }
                    }
                    (frame_log_norms(&pf).0 - frame_log_norms(&pe).1).exp()
                })
                .collect()
        })
        .collect()
}

fn orthonormal_frame(m: &Mat) -> Mat {
    if m.ncols() == 1 {
        // plain normalization keeps axis-aligned lines exact
        return m / m.norm();
    }
    m.clone().qr().q()
}

/// Frames of A^n(S) for n = 0..count, re-orthonormalized every step.
fn propagate_forward(path: &MatrixPath, s: &Subspace, count: usize) -> Vec<Mat> {
    let mut out = Vec::with_capacity(count);
    let mut b = s.basis().clone();
    for n in 0..count {
        out.push(b.clone());
        if n + 1 < count {
            b = orthonormal_frame(&(path.matrix(n) * &b));
        }
    }
    out
}

fn min_angle_check(e_frames: &[Mat], f_frames: &[Mat]) -> Result<f64> {
    let mut min_angle = f64::INFINITY;
    for (n, (e, f)) in e_frames.iter().zip(f_frames).enumerate() {
        let es = Subspace::from_orthonormal(e.clone())?;
        let fs = Subspace::from_orthonormal(f.clone())?;
        if linalg::sin_principal_angle(&es, &fs) < COLLAPSE_TOL {
            return Err(DominationError::SplittingCollapse(n));
        }
        min_angle = min_angle.min(linalg::principal_angle(&es, &fs));
    }
    Ok(min_angle)
}

fn check_splitting(e: &Subspace, f: &Subspace, d: usize) -> Result<()> {
    if e.ambient_dim() != d || f.ambient_dim() != d || e.dim() + f.dim() != d {
        return Err(DominationError::InvalidArgument("E ⊕ F must have dimension d".into()));
    }
    if e.sum(f).is_err() {
        return Err(DominationError::SplittingCollapse(0));
    }
    Ok(())
}

fn report_from_rows(p: usize, m: usize, rows: &[Vec<f64>], min_angle: f64) -> DominationReport {
    let ratios: Vec<f64> = rows.iter().map(|r| r[m - 1]).collect();
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let verdict = ratios.iter().all(|&r| r <= 0.5).then_some(m);
    DominationReport { p, m, windows: rows.len(), ratios, max_ratio, verdict, min_angle }
}

/// Tests the ratio condition at scale m on windows starting at 0..windows,
/// with E and F carried forward by the cocycle.
pub fn domination_test(orbit: &OrbitSegment, e: &Subspace, f: &Subspace, m: usize, windows: usize) -> Result<DominationReport> {
    check_splitting(e, f, orbit.dim())?;
    if m == 0 || windows == 0 || windows + m > orbit.len() {
        return Err(DominationError::InvalidArgument(format!(
            "need 1 ≤ m, 1 ≤ windows and windows + m ≤ {} (m = {m}, windows = {windows})",
            orbit.len()
        )));
    }
    let path = orbit.path();
    let ef = propagate_forward(&path, e, windows);
    let ff = propagate_forward(&path, f, windows);
    let min_angle = min_angle_check(&ef, &ff)?;
    let rows = ratio_rows(&path, &ef, &ff, m);
    Ok(report_from_rows(e.dim(), m, &rows, min_angle))
}

/// Smallest m ≤ m_max for which every window starting in 0..n−m_max passes.
pub fn min_domination_m(orbit: &OrbitSegment, e: &Subspace, f: &Subspace, m_max: usize) -> Result<Option<usize>> {
    check_splitting(e, f, orbit.dim())?;
    if m_max == 0 || m_max >= orbit.len() {
        return Err(DominationError::InvalidArgument(format!("m_max = {m_max} must lie in 1..{}", orbit.len())));
    }
    let windows = orbit.len() - m_max;
    let path = orbit.path();
    let ef = propagate_forward(&path, e, windows);
    let ff = propagate_forward(&path, f, windows);
    min_angle_check(&ef, &ff)?;
    let rows = ratio_rows(&path, &ef, &ff, m_max);
    Ok(first_dominating_m(&rows, m_max))
}

fn first_dominating_m(rows: &[Vec<f64>], m_max: usize) -> Option<usize> {
    (1..=m_max).find(|&m| rows.iter().all(|r| r[m - 1] <= 0.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointClass {
    DominatedLike,
    GammaLike,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointRecord {
    pub x: State,
    pub class: PointClass,
    /// λ_p − λ_{p+1} at the point.
    pub gap: f64,
    pub resolution: f64,
    pub m: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub p: usize,
    pub m_max: usize,
    pub horizon: usize,
    pub points: Vec<PointRecord>,
    pub dominated_fraction: f64,
    pub gamma_fraction: f64,
    pub unresolved_fraction: f64,
}

/// Matrices A(f^j x) for j in −before..after (index j + before).
fn two_sided_path(system: &BaseSystem, cocycle: &Cocycle, x: &State, before: usize, after: usize) -> MatrixPath {
    let mut back: Vec<Mat> = OrbitStream::backward(system, cocycle, x)
        .take(before)
        .map(|m| m.try_inverse().expect("cocycle matrices are invertible"))
        .collect();
    back.reverse();
    back.extend(OrbitStream::forward(system, cocycle, x).take(after));
    MatrixPath::explicit(back)
}

/// Fast p-space E_n (pushed forward from −burn) and slow space F_n (pushed
/// back from the far end) at n = 0..count; `path` starts at −burn.
fn stable_frames(path: &MatrixPath, p: usize, burn: usize, count: usize) -> (Vec<Mat>, Vec<Mat>) {
    let d = path.dim();
    let start = sample::orthogonal(&mut sample::rng(0x5eed), d);
    let mut e = start.columns(0, p).into_owned();
    for j in 0..burn {
        e = orthonormal_frame(&(path.matrix(j) * &e));
    }
    let mut ef = Vec::with_capacity(count);
    for n in 0..count {
        ef.push(e.clone());
        e = orthonormal_frame(&(path.matrix(burn + n) * &e));
    }
    let mut f = start.columns(p, d - p).into_owned();
    let mut ff = vec![Mat::zeros(0, 0); count];
    for j in (burn..path.len()).rev() {
        let inv = path.matrix(j).clone().try_inverse().expect("cocycle matrices are invertible");
        f = orthonormal_frame(&(inv * &f));
        if j - burn < count {
            ff[j - burn] = f.clone();
        }
    }
    (ef, ff)
}

fn classify_one(system: &BaseSystem, cocycle: &Cocycle, x: &State, p: usize, m_max: usize, horizon: usize) -> PointRecord {
    let unresolved = |gap: f64, resolution: f64| PointRecord {
        x: x.clone(),
        class: PointClass::Unresolved,
        gap,
        resolution,
        m: None,
    };
    let est = match lyapunov::qr_spectrum(system, cocycle, x, horizon, lyapunov::DEFAULT_CADENCE.min(horizon)) {
        Ok(e) => e,
        Err(_) => return unresolved(f64::NAN, f64::NAN),
    };
    let gap = est.exponents[p - 1] - est.exponents[p];
    let resolution = (10.0 * est.stderr[p - 1].max(est.stderr[p])).max(lyapunov::MIN_CLUSTER_TOL);
    if gap <= resolution {
        return unresolved(gap, resolution);
    }
    let count = horizon;
    let path = two_sided_path(system, cocycle, x, horizon, count + m_max + horizon);
    let (ef, ff) = stable_frames(&path, p, horizon, count);
    if min_angle_check(&ef, &ff).is_err() {
        return unresolved(gap, resolution);
    }
    let shifted = path.slice(horizon, path.len());
    let rows = ratio_rows(&shifted, &ef, &ff, m_max);
    let m = first_dominating_m(&rows, m_max);
    PointRecord {
        x: x.clone(),
        class: if m.is_some() { PointClass::DominatedLike } else { PointClass::GammaLike },
        gap,
        resolution,
        m,
    }
}

/// Sorts sampled points into D_p-like (dominated at some m ≤ m_max along a
/// length-`horizon` orbit), Γ_p-like and unresolved (gap below resolution).
pub fn classify_points(
    system: &BaseSystem,
    cocycle: &Cocycle,
    p: usize,
    m_max: usize,
    samples: usize,
    horizon: usize,
    seed: u64,
) -> Result<Classification> {
    let d = cocycle.dim();
    if p == 0 || p >= d {
        return Err(DominationError::InvalidArgument(format!("p = {p} outside 1..{d}")));
    }
    if samples == 0 || m_max == 0 || horizon < lyapunov::DEFAULT_CADENCE {
        return Err(DominationError::InvalidArgument("need samples ≥ 1, m_max ≥ 1, horizon ≥ 10".into()));
    }
    let mut rng = sample::rng(seed);
    let starts = system.stratified_samples(samples, &mut rng);
    let points: Vec<PointRecord> = starts.par_iter().map(|x| classify_one(system, cocycle, x, p, m_max, horizon)).collect();
    let frac = |c: PointClass| points.iter().filter(|r| r.class == c).count() as f64 / samples as f64;
    Ok(Classification {
        p,
        m_max,
        horizon,
        dominated_fraction: frac(PointClass::DominatedLike),
        gamma_fraction: frac(PointClass::GammaLike),
        unresolved_fraction: frac(PointClass::Unresolved),
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpEstimate {
    pub value: f64,
    pub gamma_fraction: f64,
    pub mean_half_gap: f64,
    pub classification: Classification,
}

/// (1/S)·Σ over Γ_p-like samples of (λ_p − λ_{p+1})/2.
pub fn jump_estimate(
    system: &BaseSystem,
    cocycle: &Cocycle,
    p: usize,
    m_max: usize,
    samples: usize,
    horizon: usize,
    seed: u64,
) -> Result<JumpEstimate> {
    let classification = classify_points(system, cocycle, p, m_max, samples, horizon, seed)?;
    let gamma: Vec<f64> = classification
        .points
        .iter()
        .filter(|r| r.class == PointClass::GammaLike)
        .map(|r| r.gap / 2.0)
        .collect();
    let mean_half_gap = if gamma.is_empty() { 0.0 } else { gamma.iter().sum::<f64>() / gamma.len() as f64 };
    Ok(JumpEstimate {
        value: mean_half_gap * classification.gamma_fraction,
        gamma_fraction: classification.gamma_fraction,
        mean_half_gap,
        classification,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HyperbolicityReport {
    pub m: usize,
    pub windows: usize,
    pub alpha_min: f64,
    /// C = C_ω²/sin α_min.
    pub constant: f64,
    pub max_ratio: f64,
    pub min_conorm_plus: f64,
    pub max_norm_minus: f64,
    /// Windows where m(A^m|E⁺) ≤ 2 or ‖A^m|E⁻‖ ≥ 1/2.
    pub counterexamples: usize,
    /// Windows where the Lagrangian product bound fails.
    pub product_violations: usize,
}

/// Checks expansion of E⁺ and contraction of E⁻ at scale m on every window,
/// once the strengthened margin ratio < 1/(4C) is confirmed.
pub fn symplectic_hyperbolicity_check(
    orbit: &OrbitSegment,
    e_plus: &Subspace,
    e_minus: &Subspace,
    m: usize,
    form: &SymplecticForm,
) -> Result<HyperbolicityReport> {
    let tol = 1e-9;
    if !form.is_lagrangian(e_plus, tol) || !form.is_lagrangian(e_minus, tol) {
        return Err(DominationError::NotLagrangian);
    }
    check_splitting(e_plus, e_minus, orbit.dim())?;
    if m == 0 || m >= orbit.len() {
        return Err(DominationError::InvalidArgument(format!("m = {m} must lie in 1..{}", orbit.len())));
    }
    let windows = orbit.len() - m;
    let path = orbit.path();
    let ep = propagate_forward(&path, e_plus, windows);
    let em = propagate_forward(&path, e_minus, windows);
    let alpha_min = min_angle_check(&ep, &em)?;
    let constant = form.c_omega().powi(2) / alpha_min.sin();
    let rows = ratio_rows(&path, &ep, &em, m);
    let max_ratio = rows.iter().map(|r| r[m - 1]).fold(0.0, f64::max);
    let required = 1.0 / (4.0 * constant);
    if !(max_ratio < required) {
        return Err(DominationError::MarginInsufficient { ratio: max_ratio, required });
    }
    let mut min_conorm_plus = f64::INFINITY;
    let mut max_norm_minus: f64 = 0.0;
    let mut counterexamples = 0;
    let mut product_violations = 0;
    for n in 0..windows {
        let s = path.product(n, n + m);
        let ps = Subspace::from_orthonormal(ep[n].clone())?;
        let ms = Subspace::from_orthonormal(em[n].clone())?;
        let (_, co) = linalg::restricted_norms(&s, &ps);
        let (no, _) = linalg::restricted_norms(&s, &ms);
        min_conorm_plus = min_conorm_plus.min(co);
        max_norm_minus = max_norm_minus.max(no);
        if !(co > 2.0 && no < 0.5) {
            counterexamples += 1;
        }
        let (value, lower, upper) = linalg::lagrangian_product_bounds(&s, &ps, &ms, form)?;
        let slack = 1e-9 * upper;
        if value < lower - slack || value > upper + slack {
            product_violations += 1;
        }
    }
    Ok(HyperbolicityReport {
        m,
        windows,
        alpha_min,
        constant,
        max_ratio,
        min_conorm_plus,
        max_norm_minus,
        counterexamples,
        product_violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagrangianReport {
    pub lambda_q: f64,
    pub isotropy_plus: f64,
    pub isotropy_minus: f64,
}

/// Isotropy of the estimated unstable and stable Oseledets sums.
pub fn lagrangian_oseledets_check(
    system: &BaseSystem,
    cocycle: &Cocycle,
    x: &State,
    horizon: usize,
    form: &SymplecticForm,
) -> Result<LagrangianReport> {
    if cocycle.dim() != form.dim() {
        return Err(DominationError::InvalidArgument("form dimension differs from cocycle".into()));
    }
    let s = lyapunov::oseledets_splitting(system, cocycle, x, horizon, None)?;
    let q = form.q();
    let lambda_q = s.estimate.exponents[q - 1];
    if !(lambda_q > s.cluster_tol) {
        return Err(DominationError::LambdaQUnresolved);
    }
    let (plus, minus) = s.split_at_dim(q).ok_or(DominationError::LambdaQUnresolved)?;
    Ok(LagrangianReport {
        lambda_q,
        isotropy_plus: form.isotropy_residual(&plus),
        isotropy_minus: form.isotropy_residual(&minus),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::shear_rotate_witness;
    use crate::linalg::{GroupTag, SquareMatrix, Vector};

    fn diag(v: &[f64]) -> Mat {
        Mat::from_diagonal(&Vector::from_column_slice(v))
    }

    fn constant_orbit(m: Mat, n: usize) -> OrbitSegment {
        OrbitSegment::from_matrices(vec![m; n], GroupTag::GeneralLinear).unwrap()
    }

    fn axes() -> (Subspace, Subspace) {
        (Subspace::coordinate(2, &[0]), Subspace::coordinate(2, &[1]))
    }

    #[test]
    fn diagonal_is_one_dominated() {
        let (e, f) = axes();
        let r = domination_test(&constant_orbit(diag(&[2.0, 0.5]), 20), &e, &f, 1, 10).unwrap();
        assert!(r.ratios.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        assert_eq!(r.verdict, Some(1));
    }

    #[test]
    fn rotation_never_dominated() {
        let (e, f) = axes();
        let orbit = constant_orbit(sample::rotation(2, 0, 1, 0.4), 60);
        let r = domination_test(&orbit, &e, &f, 5, 10).unwrap();
        assert!(r.ratios.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        assert_eq!(min_domination_m(&orbit, &e, &f, 20).unwrap(), None);
    }

    #[test]
    fn slow_diagonal_needs_two_steps() {
        let (e, f) = axes();
        let q = 2f64.powf(0.25);
        let orbit = constant_orbit(diag(&[q, 2f64.powf(-0.25)]), 40);
        let r = domination_test(&orbit, &e, &f, 3, 10).unwrap();
        assert!(r.ratios.iter().all(|&x| (x - 2f64.powf(-1.5)).abs() < 1e-12));
        assert_eq!(min_domination_m(&orbit, &e, &f, 10).unwrap(), Some(2));
    }

    #[test]
    fn collapse_detected() {
        let e = Subspace::coordinate(2, &[0]);
        let f = Subspace::line(&Vector::from_vec(vec![1.0, 1e-3])).unwrap();
        let orbit = constant_orbit(diag(&[1e3, 1e-3]), 20);
        assert!(matches!(domination_test(&orbit, &e, &f, 1, 10), Err(DominationError::SplittingCollapse(_))));
    }

    #[test]
    fn classification_of_constant_cocycles() {
        let sys = BaseSystem::CircleRotation { alpha: 2f64.sqrt() - 1.0 };
        let dg = Cocycle::Constant(SquareMatrix::new(diag(&[2.0, 0.5]), GroupTag::SpecialLinear).unwrap());
        let c = classify_points(&sys, &dg, 1, 5, 8, 100, 1).unwrap();
        assert_eq!(c.dominated_fraction, 1.0);
        assert_eq!(jump_estimate(&sys, &dg, 1, 5, 8, 100, 1).unwrap().value, 0.0);
        let rot = Cocycle::Constant(SquareMatrix::new(sample::rotation(2, 0, 1, 0.3), GroupTag::SpecialLinear).unwrap());
        let c = classify_points(&sys, &rot, 1, 5, 8, 100, 1).unwrap();
        assert_eq!(c.unresolved_fraction, 1.0);
    }

    #[test]
    fn shear_rotate_has_gamma_points() {
        let (sys, c) = shear_rotate_witness(40);
        let cl = classify_points(&sys, &c, 1, 20, 16, 2000, 7).unwrap();
        assert!(cl.gamma_fraction > 0.0 && cl.unresolved_fraction == 0.0, "{cl:?}");
        let j = jump_estimate(&sys, &c, 1, 20, 16, 2000, 7).unwrap();
        assert!(j.value > 0.0);
    }

    #[test]
    fn symplectic_diagonal_hyperbolicity() {
        let form = SymplecticForm::new(2);
        let orbit = constant_orbit(diag(&[2.0, 2.0, 0.5, 0.5]), 10);
        let r = symplectic_hyperbolicity_check(
            &orbit,
            &Subspace::coordinate(4, &[0, 1]),
            &Subspace::coordinate(4, &[2, 3]),
            2,
            &form,
        )
        .unwrap();
        assert!((r.min_conorm_plus - 4.0).abs() < 1e-12 && (r.max_norm_minus - 0.25).abs() < 1e-12);
        assert_eq!(r.counterexamples + r.product_violations, 0);
    }

    #[test]
    fn lagrangian_spaces_of_symplectic_diagonal() {
        let form = SymplecticForm::new(2);
        let sys = BaseSystem::CircleRotation { alpha: 0.3 };
        let c = Cocycle::Constant(SquareMatrix::new(diag(&[3.0, 2.0, 1.0 / 3.0, 0.5]), GroupTag::Symplectic).unwrap());
        let r = lagrangian_oseledets_check(&sys, &c, &vec![0.0], 200, &form).unwrap();
        assert!(r.isotropy_plus < 1e-10 && r.isotropy_minus < 1e-10);
    }
}
