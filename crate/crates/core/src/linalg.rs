//! Matrix and subspace geometry: norms, co-norms, principal angles,
//! exterior powers and the standard symplectic form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

const GROUP_TOL: f64 = 1e-9;
const ORTHO_TOL: f64 = 1e-10;
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("non-invertible")]
    NonInvertible,
    #[error("degenerate pair")]
    DegeneratePair,
    #[error("degenerate configuration")]
    DegenerateConfiguration,
    #[error("not Lagrangian")]
    NotLagrangian,
    #[error("non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("group violation: {0}")]
    Group(String),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupTag {
    GeneralLinear,
    SpecialLinear,
    Symplectic,
    Orthogonal,
}

/// Entrywise max of |a_ij|.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Singular values sorted in decreasing order.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Thin SVD with singular triples sorted by decreasing singular value.
/// Returns (U, sigma, V) with A = U diag(sigma) V^T.
pub fn sorted_svd(m: &Mat) -> (Mat, Vec<f64>, Mat) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let mut uu = Mat::zeros(u.nrows(), k);
    let mut vv = Mat::zeros(vt.ncols(), k);
    let mut s = Vec::with_capacity(k);
    for (c, &i) in order.iter().enumerate() {
        uu.set_column(c, &u.column(i));
        vv.set_column(c, &vt.row(i).transpose());
        s.push(svd.singular_values[i]);
    }
    (uu, s, vv)
}

/// Operator 2-norm.
pub fn op_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_values(m)[0]
}

/// Co-norm m(L) = ‖L⁻¹‖⁻¹, the smallest singular value.
pub fn conorm(m: &Mat) -> Result<f64> {
    if !m.is_square() {
        return Err(LinalgError::Dimension("co-norm needs a square matrix".into()));
    }
    let s = singular_values(m);
    let smin = *s.last().unwrap();
    if !(smin > 0.0) || smin <= f64::EPSILON * s[0] * 0.5 {
        return Err(LinalgError::NonInvertible);
    }
    Ok(smin)
}

pub fn is_finite(m: &Mat) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Checks the invariant attached to a group tag.
pub fn check_group(m: &Mat, tag: GroupTag) -> std::result::Result<(), String> {
    if !is_finite(m) {
        return Err("non-finite entries".into());
    }
    if !m.is_square() {
        return Err("not square".into());
    }
    match tag {
        GroupTag::GeneralLinear => {}
        GroupTag::SpecialLinear => {
            let det = m.determinant();
            if (det - 1.0).abs() > GROUP_TOL {
                return Err(format!("|det - 1| = {:e}", (det - 1.0).abs()));
            }
        }
        GroupTag::Symplectic => {
            if m.nrows() % 2 != 0 {
                return Err("odd dimension for symplectic tag".into());
            }
            let r = SymplecticForm::new(m.nrows() / 2).residual(m);
            if r > GROUP_TOL {
                return Err(format!("symplectic residual {r:e}"));
            }
        }
        GroupTag::Orthogonal => {
            let r = max_abs(&(m.transpose() * m - Mat::identity(m.nrows(), m.nrows())));
            if r > GROUP_TOL {
                return Err(format!("orthogonality residual {r:e}"));
            }
        }
    }
    match conorm(m) {
        Ok(_) => Ok(()),
        Err(_) => Err("singular matrix".into()),
    }
}

/// A d×d real matrix carrying a group tag; construction validates the tag.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    m: Mat,
    tag: GroupTag,
}

impl SquareMatrix {
    pub fn new(m: Mat, tag: GroupTag) -> Result<Self> {
        check_group(&m, tag).map_err(LinalgError::Group)?;
        Ok(SquareMatrix { m, tag })
    }

    pub fn identity(d: usize, tag: GroupTag) -> Self {
        SquareMatrix { m: Mat::identity(d, d), tag }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn tag(&self) -> GroupTag {
        self.tag
    }

    pub fn mat(&self) -> &Mat {
        &self.m
    }

    pub fn into_mat(self) -> Mat {
        self.m
    }
}

/// Divides a matrix by det^{1/d} so that the determinant becomes one.
pub fn project_special_linear(m: &Mat) -> Mat {
    let d = m.nrows() as f64;
    let det = m.determinant();
    let s = det.abs().powf(1.0 / d);
    m / s
}

/// Subspace of ℝ^d stored through an orthonormal basis (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: Mat,
}

impl Subspace {
    /// Orthonormalizes the given columns; fails if they are not independent.
    pub fn from_columns(cols: &Mat) -> Result<Self> {
        if cols.ncols() == 0 || cols.ncols() > cols.nrows() {
            return Err(LinalgError::Dimension(format!(
                "{} columns in ambient dimension {}",
                cols.ncols(),
                cols.nrows()
            )));
        }
        if !is_finite(cols) {
            return Err(LinalgError::NonFinite);
        }
        let (u, s, _) = sorted_svd(cols);
        let k = cols.ncols();
        if !(s[k - 1] > RANK_TOL * s[0]) {
            return Err(LinalgError::DegenerateConfiguration);
        }
        Ok(Subspace { basis: u.columns(0, k).into_owned() })
    }

    /// Wraps a basis that is already orthonormal (checked).
    pub fn from_orthonormal(basis: Mat) -> Result<Self> {
        let k = basis.ncols();
        if k == 0 || k > basis.nrows() {
            return Err(LinalgError::Dimension("bad subspace dimension".into()));
        }
        let r = max_abs(&(basis.transpose() * &basis - Mat::identity(k, k)));
        if r > ORTHO_TOL {
            return Err(LinalgError::Dimension(format!("basis not orthonormal ({r:e})")));
        }
        Ok(Subspace { basis })
    }

    pub fn line(v: &Vector) -> Result<Self> {
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(LinalgError::DegeneratePair);
        }
        Ok(Subspace { basis: Mat::from_column_slice(v.len(), 1, (v / n).as_slice()) })
    }

    pub fn span(vs: &[Vector]) -> Result<Self> {
        if vs.is_empty() {
            return Err(LinalgError::Dimension("empty span".into()));
        }
        Self::from_columns(&Mat::from_columns(vs))
    }

    pub fn coordinate(d: usize, idx: &[usize]) -> Self {
        let mut b = Mat::zeros(d, idx.len());
        for (c, &i) in idx.iter().enumerate() {
            b[(i, c)] = 1.0;
        }
        Subspace { basis: b }
    }

    pub fn whole(d: usize) -> Self {
        Subspace { basis: Mat::identity(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn basis(&self) -> &Mat {
        &self.basis
    }

    pub fn projector(&self) -> Mat {
        &self.basis * self.basis.transpose()
    }

    /// Orthogonal complement; `None` for the whole space.
    pub fn complement(&self) -> Option<Subspace> {
        let d = self.ambient_dim();
        let k = self.dim();
        if k == d {
            return None;
        }
        let (u, _, _) = sorted_svd(&{
            let mut full = Mat::zeros(d, d);
            full.columns_mut(0, k).copy_from(&self.basis);
            full
        });
        Some(Subspace { basis: u.columns(k, d - k).into_owned() })
    }

    /// E + F; fails when the two spaces are not transverse.
    pub fn sum(&self, other: &Subspace) -> Result<Subspace> {
        let d = self.ambient_dim();
        if other.ambient_dim() != d {
            return Err(LinalgError::Dimension("ambient dimensions differ".into()));
        }
        let mut m = Mat::zeros(d, self.dim() + other.dim());
        m.columns_mut(0, self.dim()).copy_from(&self.basis);
        m.columns_mut(self.dim(), other.dim()).copy_from(&other.basis);
        Subspace::from_columns(&m)
    }

    /// Image L(E).
    pub fn image(&self, l: &Mat) -> Result<Subspace> {
        Subspace::from_columns(&(l * &self.basis))
    }

    /// Distance from v to the subspace relative to ‖v‖.
    pub fn sin_angle_to(&self, v: &Vector) -> f64 {
        let n = v.norm();
        if n == 0.0 {
            return 0.0;
        }
        let proj = &self.basis * (self.basis.transpose() * v);
        (v - proj).norm() / n
    }
}

/// Angle between two nonzero vectors in [0, π].
pub fn vector_angle(v: &Vector, w: &Vector) -> f64 {
    let nv = v.norm();
    let nw = w.norm();
    let vh = v / nv;
    let wh = w / nw;
    let c = vh.dot(&wh);
    let s = (&wh - &vh * c).norm();
    s.atan2(c)
}

/// |sin ∠(v, w)|.
pub fn vector_sin_angle(v: &Vector, w: &Vector) -> f64 {
    let nv = v.norm();
    let nw = w.norm();
    if nv == 0.0 || nw == 0.0 {
        return 0.0;
    }
    let vh = v / nv;
    let wh = w / nw;
    (&wh - &vh * vh.dot(&wh)).norm()
}

/// Sine of the smallest principal angle.
pub fn sin_principal_angle(e: &Subspace, f: &Subspace) -> f64 {
    let (small, big) = if e.dim() <= f.dim() { (e, f) } else { (f, e) };
    let resid = small.basis() - big.basis() * (big.basis().transpose() * small.basis());
    let s = singular_values(&resid);
    s.last().copied().unwrap_or(0.0).min(1.0)
}

/// Smallest principal angle between E and F, in [0, π/2].
pub fn principal_angle(e: &Subspace, f: &Subspace) -> f64 {
    let cross = e.basis().transpose() * f.basis();
    let c = singular_values(&cross)[0].min(1.0);
    if c < std::f64::consts::FRAC_1_SQRT_2 {
        c.acos()
    } else {
        sin_principal_angle(e, f).asin()
    }
}

/// Extreme values of ‖Lv‖ over unit v ∈ E: (norm, conorm).
pub fn restricted_norms(l: &Mat, e: &Subspace) -> (f64, f64) {
    let s = singular_values(&(l * e.basis()));
    (s[0], *s.last().unwrap())
}

/// Unit vectors of E attaining the max and the min of ‖Lv‖.
pub fn restricted_extremal_vectors(l: &Mat, e: &Subspace) -> (Vector, Vector) {
    let (_, _, v) = sorted_svd(&(l * e.basis()));
    let k = v.ncols();
    let vmax = e.basis() * v.column(0);
    let vmin = e.basis() * v.column(k - 1);
    (vmax, vmin)
}

/// Index sets {i_1 < … < i_p} ⊂ {0..d} in lexicographic order.
pub fn combinations(d: usize, p: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, d: usize, p: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == p {
            out.push(cur.clone());
            return;
        }
        for i in start..d {
            cur.push(i);
            rec(i + 1, d, p, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if p <= d {
        rec(0, d, p, &mut Vec::with_capacity(p), &mut out);
    }
    out
}

fn minor(m: &Mat, rows: &[usize], cols: &[usize]) -> f64 {
    match rows.len() {
        0 => 1.0,
        1 => m[(rows[0], cols[0])],
        2 => m[(rows[0], cols[0])] * m[(rows[1], cols[1])] - m[(rows[0], cols[1])] * m[(rows[1], cols[0])],
        p => Mat::from_fn(p, p, |i, j| m[(rows[i], cols[j])]).determinant(),
    }
}

/// Matrix of ∧^p L in the lexicographic basis e_I = e_{i1}∧…∧e_{ip}:
/// the entry (I, J) is the minor det L[I, J].
pub fn exterior_power(l: &Mat, p: usize) -> Mat {
    assert!(l.is_square(), "exterior power of a non-square matrix");
    let d = l.nrows();
    assert!(p >= 1 && p <= d, "exterior degree {p} outside 1..={d}");
    let idx = combinations(d, p);
    let n = idx.len();
    Mat::from_fn(n, n, |i, j| minor(l, &idx[i], &idx[j]))
}

/// Wedge v_1∧…∧v_p of the columns of `vs`, in lexicographic coordinates.
pub fn wedge(vs: &Mat) -> Vector {
    let d = vs.nrows();
    let p = vs.ncols();
    let all: Vec<usize> = (0..p).collect();
    let idx = combinations(d, p);
    Vector::from_iterator(idx.len(), idx.iter().map(|rows| minor(vs, rows, &all)))
}

/// sin∠(Lv, Lw) / sin∠(v, w).
pub fn angle_distortion_ratio(l: &Mat, v: &Vector, w: &Vector) -> Result<f64> {
    let s0 = vector_sin_angle(v, w);
    if !(s0 > 1e-14) {
        return Err(LinalgError::DegeneratePair);
    }
    let lv = l * v;
    let lw = l * w;
    let s1 = vector_sin_angle(&lv, &lw);
    Ok(s1 / s0)
}

/// (‖L‖/m(L), 4·max(‖Lv‖/‖Lw‖, ‖Lw‖/‖Lv‖)/(sin∠(v,w) sin∠(Lv,Lw))) for 2×2 L,
/// with v and w normalised first.
pub fn planar_angle_bound_check(l: &Mat, v: &Vector, w: &Vector) -> Result<(f64, f64)> {
    if l.nrows() != 2 || l.ncols() != 2 || v.len() != 2 || w.len() != 2 {
        return Err(LinalgError::Dimension("planar check needs d = 2".into()));
    }
    let s0 = vector_sin_angle(v, w);
    if !(s0 > 1e-14) {
        return Err(LinalgError::DegeneratePair);
    }
    let lv = l * v / v.norm();
    let lw = l * w / w.norm();
    let s1 = vector_sin_angle(&lv, &lw);
    if !(s1 > 0.0) {
        return Err(LinalgError::NonInvertible);
    }
    let lhs = op_norm(l) / conorm(l)?;
    let q = lv.norm() / lw.norm();
    let rhs = 4.0 * q.max(1.0 / q) / (s0 * s1);
    Ok((lhs, rhs))
}

/// (sin∠(A, B+C), sin∠(A,B)·sin∠(A+B, C)).
pub fn triple_angle_check(a: &Subspace, b: &Subspace, c: &Subspace) -> Result<(f64, f64)> {
    let ab = a.sum(b).map_err(|_| LinalgError::DegenerateConfiguration)?;
    let bc = b.sum(c).map_err(|_| LinalgError::DegenerateConfiguration)?;
    ab.sum(c).map_err(|_| LinalgError::DegenerateConfiguration)?;
    let lhs = sin_principal_angle(a, &bc);
    let rhs = sin_principal_angle(a, b) * sin_principal_angle(&ab, c);
    Ok((lhs, rhs))
}

/// The standard symplectic form on ℝ^{2q}, coordinates (x_1..x_q, y_1..y_q),
/// ω(u, v) = ⟨Ju, v⟩ with J = [[0, −I], [I, 0]]. J is also multiplication
/// by i under z_k = x_k + i y_k, so ⟨·,·⟩ = Re(·,·) and ω = Im(·,·).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymplecticForm {
    q: usize,
}

impl SymplecticForm {
    pub fn new(q: usize) -> Self {
        SymplecticForm { q }
    }

    pub fn for_dim(d: usize) -> Result<Self> {
        if d == 0 || d % 2 != 0 {
            return Err(LinalgError::Dimension(format!("symplectic form needs even d, got {d}")));
        }
        Ok(SymplecticForm { q: d / 2 })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn dim(&self) -> usize {
        2 * self.q
    }

    pub fn j(&self) -> Mat {
        let q = self.q;
        let mut j = Mat::zeros(2 * q, 2 * q);
        for k in 0..q {
            j[(k, q + k)] = -1.0;
            j[(q + k, k)] = 1.0;
        }
        j
    }

    /// sup ‖J^{±1}‖; one for the standard form.
    pub fn c_omega(&self) -> f64 {
        1.0
    }

    pub fn omega(&self, u: &Vector, v: &Vector) -> f64 {
        let q = self.q;
        let mut s = 0.0;
        for k in 0..q {
            s += u[k] * v[q + k] - u[q + k] * v[k];
        }
        s
    }

    /// Jv, i.e. multiplication by i.
    pub fn apply_j(&self, v: &Vector) -> Vector {
        let q = self.q;
        Vector::from_fn(2 * q, |i, _| if i < q { -v[q + i] } else { v[i - q] })
    }

    /// Entrywise max of |MᵀJM − J|.
    pub fn residual(&self, m: &Mat) -> f64 {
        let j = self.j();
        max_abs(&(m.transpose() * &j * m - j))
    }

    /// Largest |ω(b_i, b_j)| over the orthonormal basis of E.
    pub fn isotropy_residual(&self, e: &Subspace) -> f64 {
        let b = e.basis();
        let g = b.transpose() * self.j().transpose() * b;
        max_abs(&g)
    }

    pub fn is_lagrangian(&self, e: &Subspace, tol: f64) -> bool {
        e.ambient_dim() == self.dim() && e.dim() == self.q && self.isotropy_residual(e) <= tol
    }

    /// Symplectic complement E^ω = {v : ω(e, v) = 0 for all e ∈ E}.
    pub fn complement(&self, e: &Subspace) -> Option<Subspace> {
        // ω(e, v) = ⟨Je, v⟩, so E^ω = (JE)^⊥.
        let je = Subspace::from_orthonormal(self.j() * e.basis()).ok()?;
        je.complement()
    }
}

/// w = projection of Jv onto F along E, together with |ω(v,w)|/(‖v‖‖w‖).
pub fn symplectic_pairing_bound(
    e: &Subspace,
    f: &Subspace,
    v: &Vector,
    form: &SymplecticForm,
) -> Result<(Vector, f64)> {
    let tol = 1e-9;
    if !form.is_lagrangian(e, tol) || !form.is_lagrangian(f, tol) {
        return Err(LinalgError::NotLagrangian);
    }
    if v.norm() == 0.0 || e.sin_angle_to(v) > 1e-9 {
        return Err(LinalgError::DegeneratePair);
    }
    let w = project_along(f, e, &form.apply_j(v))?;
    let ratio = form.omega(v, &w).abs() / (v.norm() * w.norm());
    Ok((w, ratio))
}

/// Component in F of x with respect to ℝ^d = E ⊕ F.
pub fn project_along(f: &Subspace, e: &Subspace, x: &Vector) -> Result<Vector> {
    let d = e.ambient_dim();
    let mut m = Mat::zeros(d, e.dim() + f.dim());
    m.columns_mut(0, e.dim()).copy_from(e.basis());
    m.columns_mut(e.dim(), f.dim()).copy_from(f.basis());
    if m.ncols() != d {
        return Err(LinalgError::Dimension("E ⊕ F must span the space".into()));
    }
    let c = m.lu().solve(x).ok_or(LinalgError::DegenerateConfiguration)?;
    Ok(f.basis() * c.rows(e.dim(), f.dim()))
}

/// m(S|E)·‖S|F‖ with its lower bound sin∠(E,F)·C_ω⁻² and upper bound
/// C_ω²/sin∠(SE,SF), valid for symplectic S and Lagrangian E, F.
pub fn lagrangian_product_bounds(s: &Mat, e: &Subspace, f: &Subspace, form: &SymplecticForm) -> Result<(f64, f64, f64)> {
    let (_, m_e) = restricted_norms(s, e);
    let (n_f, _) = restricted_norms(s, f);
    let c2 = form.c_omega().powi(2);
    let alpha = sin_principal_angle(e, f);
    let beta = sin_principal_angle(&e.image(s)?, &f.image(s)?);
    if !(beta > 0.0) {
        return Err(LinalgError::DegenerateConfiguration);
    }
    Ok((m_e * n_f, alpha / c2, c2 / beta))
}

/// Log singular values (decreasing) of a matrix, computed through the
/// top singular values of its exterior powers so small values keep
/// relative accuracy.
pub fn log_singular_values(m: &Mat) -> Vec<f64> {
    let r = m.ncols().min(m.nrows());
    let mut out = Vec::with_capacity(r);
    let mut prev = 0.0;
    for k in 1..=r {
        let lk = if k == 1 {
            op_norm(m).ln()
        } else if m.is_square() {
            op_norm(&exterior_power(m, k)).ln()
        } else {
            // thin R factor keeps the singular values
            let qr = m.clone().qr();
            let rr = qr.r();
            op_norm(&exterior_power(&rr, k)).ln()
        };
        out.push(lk - prev);
        prev = lk;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn diag(v: &[f64]) -> Mat {
        Mat::from_diagonal(&Vector::from_column_slice(v))
    }

    #[test]
    fn conorm_of_diagonal_and_identity() {
        assert!((conorm(&diag(&[2.0, 0.5])).unwrap() - 0.5).abs() < 1e-15);
        assert!((conorm(&Mat::identity(5, 5)).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(conorm(&diag(&[1.0, 0.0])), Err(LinalgError::NonInvertible));
    }

    #[test]
    fn restricted_norms_on_coordinate_plane() {
        let (n, m) = restricted_norms(&diag(&[3.0, 2.0, 1.0]), &Subspace::coordinate(3, &[0, 1]));
        assert!((n - 3.0).abs() < 1e-14 && (m - 2.0).abs() < 1e-14);
    }

    #[test]
    fn principal_angles_planar() {
        let e1 = Subspace::coordinate(2, &[0]);
        let e2 = Subspace::coordinate(2, &[1]);
        assert!((principal_angle(&e1, &e2) - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(principal_angle(&e1, &e1), 0.0);
        for &t in &[1e-9, 1e-4, 0.3, 1.2, FRAC_PI_2] {
            let l = Subspace::line(&Vector::from_column_slice(&[t.cos(), t.sin()])).unwrap();
            assert!((principal_angle(&e1, &l) - t).abs() < 1e-15 * (1.0 + 1.0 / t.max(1e-3)));
        }
    }

    #[test]
    fn lex_combinations() {
        assert_eq!(combinations(4, 2), vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
        assert_eq!(combinations(3, 1).len(), 3);
    }

    #[test]
    fn exterior_power_of_diagonal() {
        let w = exterior_power(&diag(&[3.0, 2.0, 1.0]), 2);
        assert_eq!(w, diag(&[6.0, 3.0, 2.0]));
        assert!((op_norm(&w) - 6.0).abs() < 1e-14);
    }

    #[test]
    fn top_exterior_power_is_determinant() {
        let m = Mat::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0]);
        let m = project_special_linear(&m);
        let w = exterior_power(&m, 3);
        assert_eq!(w.shape(), (1, 1));
        assert!((w[(0, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conformal_map_preserves_angles() {
        let t: f64 = 0.7;
        let l = Mat::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]) * 3.0;
        let v = Vector::from_column_slice(&[1.0, 0.2]);
        let w = Vector::from_column_slice(&[-0.3, 1.0]);
        assert!((angle_distortion_ratio(&l, &v, &w).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(angle_distortion_ratio(&l, &v, &(&v * 2.0)), Err(LinalgError::DegeneratePair));
    }

    #[test]
    fn planar_bound_on_diagonal() {
        let e1 = Vector::from_column_slice(&[1.0, 0.0]);
        let e2 = Vector::from_column_slice(&[0.0, 1.0]);
        let (lhs, rhs) = planar_angle_bound_check(&diag(&[4.0, 0.25]), &e1, &e2).unwrap();
        assert!((lhs - 16.0).abs() < 1e-12 && (rhs - 64.0).abs() < 1e-12);
        let r = Mat::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let (lhs, rhs) = planar_angle_bound_check(&r, &e1, &Vector::from_column_slice(&[1.0, 1.0])).unwrap();
        assert!((lhs - 1.0).abs() < 1e-14 && lhs <= rhs);
    }

    #[test]
    fn triple_angle_orthogonal_lines() {
        let a = Subspace::coordinate(3, &[0]);
        let b = Subspace::coordinate(3, &[1]);
        let c = Subspace::coordinate(3, &[2]);
        let (lhs, rhs) = triple_angle_check(&a, &b, &c).unwrap();
        assert!((lhs - 1.0).abs() < 1e-15 && (rhs - 1.0).abs() < 1e-15);
        let c2 = Subspace::line(&Vector::from_column_slice(&[1.0, 0.0, 1.0])).unwrap();
        let (lhs, rhs) = triple_angle_check(&a, &b, &c2).unwrap();
        // sin∠(e1, span{e2, e1+e3}) = 1/√2; sin∠(e1,e2) = 1; sin∠(span{e1,e2}, e1+e3) = 1/√2
        assert!((lhs - 0.5_f64.sqrt()).abs() < 1e-14);
        assert!((rhs - 0.5_f64.sqrt()).abs() < 1e-14);
        assert!(triple_angle_check(&a, &a, &c).is_err());
    }

    #[test]
    fn pairing_on_standard_lagrangians() {
        let form = SymplecticForm::new(2);
        let e = Subspace::coordinate(4, &[0, 1]);
        let f = Subspace::coordinate(4, &[2, 3]);
        let v = Vector::from_column_slice(&[1.0, 0.0, 0.0, 0.0]);
        let (w, ratio) = symplectic_pairing_bound(&e, &f, &v, &form).unwrap();
        assert!((ratio - 1.0).abs() < 1e-15);
        assert!((w - Vector::from_column_slice(&[0.0, 0.0, 1.0, 0.0])).norm() < 1e-15);
        let g = Subspace::coordinate(4, &[0, 2]);
        assert_eq!(symplectic_pairing_bound(&g, &f, &v, &form).unwrap_err(), LinalgError::NotLagrangian);
    }

    #[test]
    fn tilted_lagrangian_family() {
        // F_t = span{(cos t) e3 + (sin t) e1, e4}: Lagrangian at angle t from E.
        let form = SymplecticForm::new(2);
        let e = Subspace::coordinate(4, &[0, 1]);
        for k in 1..20 {
            let t = k as f64 * PI / 40.0;
            let f = Subspace::span(&[
                Vector::from_column_slice(&[t.sin(), 0.0, t.cos(), 0.0]),
                Vector::from_column_slice(&[0.0, 0.0, 0.0, 1.0]),
            ])
            .unwrap();
            assert!(form.is_lagrangian(&f, 1e-12));
            let v = Vector::from_column_slice(&[1.0, 0.0, 0.0, 0.0]);
            let (_, ratio) = symplectic_pairing_bound(&e, &f, &v, &form).unwrap();
            assert!(ratio >= sin_principal_angle(&e, &f) - 1e-12);
        }
    }

    #[test]
    fn j_squares_to_minus_identity() {
        let form = SymplecticForm::new(3);
        let j = form.j();
        assert_eq!(&j * &j, -Mat::identity(6, 6));
        assert_eq!(j.transpose(), -&j);
        let v = Vector::from_fn(6, |i, _| i as f64 + 1.0);
        assert_eq!(form.apply_j(&v), &j * &v);
        assert!((form.omega(&v, &form.apply_j(&v)) - v.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn group_checks() {
        assert!(SquareMatrix::new(diag(&[2.0, 0.5]), GroupTag::SpecialLinear).is_ok());
        assert!(SquareMatrix::new(diag(&[2.0, 0.6]), GroupTag::SpecialLinear).is_err());
        assert!(SquareMatrix::new(diag(&[3.0, 2.0, 1.0 / 3.0, 0.5]), GroupTag::Symplectic).is_ok());
        assert!(SquareMatrix::new(diag(&[3.0, 2.0, 0.5, 1.0 / 3.0]), GroupTag::Symplectic).is_err());
    }

    #[test]
    fn log_singular_values_of_graded_matrix() {
        let m = diag(&[1e150, 1.0, 1e-150]);
        let l = log_singular_values(&m);
        assert!((l[0] - 150.0 * 10f64.ln()).abs() < 1e-10);
        assert!(l[1].abs() < 1e-10);
        assert!((l[2] + 150.0 * 10f64.ln()).abs() < 1e-10);
    }
}
