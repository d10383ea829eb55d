//! Explicit local perturbation maps: the volume-preserving cylinder rotation,
//! the closed-form unitary Hamiltonian kernel (and its composite for
//! mixed-sign rotations), the integrated symplectic cylinder kernel, and a
//! grid verifier for all of them.

use crate::linalg::{max_abs, op_norm, Mat, Subspace, SymplecticForm, Vector};
use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("cylinder not thin enough: a = {a} must exceed {bound}")]
    NotThin { a: f64, bound: f64 },
    #[error("use composite kernel: eigenvalue arguments are not all of one sign")]
    MixedSign,
    #[error("flow integration failed: {0}")]
    FlowIntegrationFailed(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, KernelError>;

/// C² quintic step: 1 on (−∞, lo], 0 on [hi, ∞), monotone in between.
/// |f′| ≤ 1.875/(hi − lo) and |f″| ≤ 5.78/(hi − lo)².
#[derive(Debug, Clone, Copy)]
pub struct Bump {
    pub lo: f64,
    pub hi: f64,
}

impl Bump {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo < hi, "bump needs lo < hi");
        Bump { lo, hi }
    }

    fn u(&self, t: f64) -> f64 {
        ((t - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }

    pub fn value(&self, t: f64) -> f64 {
        let u = self.u(t);
        1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
    }

    pub fn d1(&self, t: f64) -> f64 {
        let u = self.u(t);
        -30.0 * u * u * (1.0 - u) * (1.0 - u) / (self.hi - self.lo)
    }

    pub fn d2(&self, t: f64) -> f64 {
        let u = self.u(t);
        let w = self.hi - self.lo;
        -60.0 * u * (1.0 - u) * (1.0 - 2.0 * u) / (w * w)
    }

    /// ∫₀ᵗ of the bump, for 0 ≤ lo and t ≥ 0.
    pub fn integral(&self, t: f64) -> f64 {
        if t <= self.lo {
            return t;
        }
        let w = self.hi - self.lo;
        let u = self.u(t);
        let u4 = u * u * u * u;
        self.lo + w * (u - 2.5 * u4 + 3.0 * u4 * u - u4 * u * u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Region {
    Outside,
    Inner,
    Transition,
}

/// A compactly supported map with analytic Jacobian and a linear model on
/// its inner region.
pub trait Kernel: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, z: &Vector) -> Result<(Vector, Mat)>;
    fn value(&self, z: &Vector) -> Result<Vector> {
        Ok(self.evaluate(z)?.0)
    }
    /// The linear map the kernel realises on its inner region.
    fn linear(&self) -> &Mat;
    fn region(&self, z: &Vector) -> Region;
    /// Maps u ∈ [−1, 1]^d onto a box containing twice the support.
    fn grid_point(&self, u: &Vector) -> Vector;
    fn is_symplectic(&self) -> bool;
    fn inner_tolerance(&self) -> f64 {
        1e-10
    }
    /// Whether h(z) = Rz on the inner region (otherwise only Dh = R).
    fn inner_is_linear(&self) -> bool {
        true
    }
}

fn rot2(t: f64) -> nalgebra::Matrix2<f64> {
    let (s, c) = t.sin_cos();
    nalgebra::Matrix2::new(c, -s, s, c)
}

fn to_dmat2(m: &nalgebra::Matrix2<f64>) -> Mat {
    Mat::from_fn(2, 2, |i, j| m[(i, j)])
}

/// Symmetric square root and inverse square root of a positive definite matrix.
fn sqrt_pd(q: &Mat) -> Result<(Mat, Mat, f64)> {
    let n = q.nrows();
    if n == 0 {
        return Ok((Mat::zeros(0, 0), Mat::zeros(0, 0), 0.0));
    }
    if max_abs(&(q - q.transpose())) > 1e-12 * max_abs(q).max(1.0) {
        return Err(KernelError::InvalidArgument("quadratic form is not symmetric".into()));
    }
    let eig = q.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(KernelError::InvalidArgument("quadratic form is not positive definite".into()));
    }
    let v = &eig.eigenvectors;
    let s = Mat::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let si = Mat::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let lmax = eig.eigenvalues.max();
    Ok((v * s * v.transpose(), v * si * v.transpose(), lmax.sqrt()))
}

/// Data of a right cylinder 𝒞 = a𝒜 ⊕ bℬ and the rotation to realise on σ𝒞.
#[derive(Debug, Clone)]
pub struct CylinderSpec {
    /// Orthonormal d×d basis: the first d − 2 columns span the axis space X,
    /// the last two span Y = X^⊥ along the axes of the ellipse.
    pub basis: Mat,
    /// Positive definite form on X coordinates; 𝒜 = {Q ≤ 1}.
    pub q_form: Mat,
    /// Ellipse ℬ = {λ⁻²x² + λ²y² ≤ ρ²}.
    pub lambda: f64,
    pub rho: f64,
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    /// Angle of the rotation R̂ = H_λ R_α H_λ⁻¹ of ℬ.
    pub alpha_rot: f64,
}

impl CylinderSpec {
    /// Standard coordinates: X = first d − 2 axes, round axis and base.
    pub fn standard(d: usize, a: f64, b: f64, sigma: f64, alpha_rot: f64) -> Self {
        CylinderSpec {
            basis: Mat::identity(d, d),
            q_form: Mat::identity(d - 2, d - 2),
            lambda: 1.0,
            rho: 1.0,
            a,
            b,
            sigma,
            alpha_rot,
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Norm of the normalizer Q^{1/2} taking 𝒜 to the unit ball.
    pub fn tau(&self) -> f64 {
        sqrt_pd(&self.q_form).map(|r| r.2).unwrap_or(f64::NAN)
    }
}

/// Largest ‖R̂ − I‖ the volume kernel accepts for a target ε₀: 18ε/(1 − σ) < ε₀.
pub fn volume_kernel_epsilon(eps0: f64, sigma: f64) -> f64 {
    eps0 * (1.0 - sigma) / 18.0
}

pub struct VolumeKernel {
    spec: CylinderSpec,
    xb: Mat,
    yb: Mat,
    q_sqrt_inv: Mat,
    n: nalgebra::Matrix2<f64>,
    n_inv: nalgebra::Matrix2<f64>,
    phi: Bump,
    r: Mat,
}

/// h(z) = z′ + b g_t(b⁻¹z″) with t = a⁻²Q(z′), g_t = N ∘ g̃_t ∘ N⁻¹ and
/// g̃_t(p) = R_{φ(t)αφ(|p|)} p, where N = ρH_λ takes the unit disk to ℬ.
pub fn volume_kernel(spec: CylinderSpec) -> Result<VolumeKernel> {
    let d = spec.dim();
    if d < 2 || spec.basis.ncols() != d {
        return Err(KernelError::InvalidArgument("basis must be square of size at least 2".into()));
    }
    if max_abs(&(spec.basis.transpose() * &spec.basis - Mat::identity(d, d))) > 1e-10 {
        return Err(KernelError::InvalidArgument("basis is not orthonormal".into()));
    }
    if spec.q_form.nrows() != d - 2 || spec.q_form.ncols() != d - 2 {
        return Err(KernelError::InvalidArgument("quadratic form has the wrong size".into()));
    }
    if !(spec.sigma > 0.0 && spec.sigma < 1.0) {
        return Err(KernelError::InvalidArgument(format!("sigma = {} not in (0, 1)", spec.sigma)));
    }
    if !(spec.lambda >= 1.0 && spec.rho > 0.0 && spec.a > 0.0 && spec.b > 0.0) {
        return Err(KernelError::InvalidArgument("need lambda >= 1 and rho, a, b > 0".into()));
    }
    let (_, q_sqrt_inv, tau) = sqrt_pd(&spec.q_form)?;
    if spec.a <= tau * spec.b {
        return Err(KernelError::NotThin { a: spec.a, bound: tau * spec.b });
    }
    let xb = spec.basis.columns(0, d - 2).into_owned();
    let yb = spec.basis.columns(d - 2, 2).into_owned();
    let n = nalgebra::Matrix2::new(spec.lambda * spec.rho, 0.0, 0.0, spec.rho / spec.lambda);
    let n_inv = n.try_inverse().expect("diagonal with positive entries");
    let rhat = n * rot2(spec.alpha_rot) * n_inv;
    let r = Mat::identity(d, d) + &yb * (to_dmat2(&rhat) - Mat::identity(2, 2)) * yb.transpose();
    let phi = Bump::new(spec.sigma, 1.0);
    Ok(VolumeKernel { spec, xb, yb, q_sqrt_inv, n, n_inv, phi, r })
}

impl VolumeKernel {
    pub fn spec(&self) -> &CylinderSpec {
        &self.spec
    }

    fn coords(&self, z: &Vector) -> (Vector, nalgebra::Vector2<f64>, f64, nalgebra::Vector2<f64>) {
        let zx = self.xb.transpose() * z;
        let zy = self.yb.transpose() * z;
        let zy = nalgebra::Vector2::new(zy[0], zy[1]);
        let t = (zx.transpose() * &self.spec.q_form * &zx)[(0, 0)] / (self.spec.a * self.spec.a);
        let p = self.n_inv * zy / self.spec.b;
        (zx, zy, t, p)
    }
}

impl Kernel for VolumeKernel {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn evaluate(&self, z: &Vector) -> Result<(Vector, Mat)> {
        let d = self.dim();
        let (zx, zy, t, p) = self.coords(z);
        let r = p.norm();
        if t >= 1.0 || r >= 1.0 {
            return Ok((z.clone(), Mat::identity(d, d)));
        }
        let (sp, alpha, b) = (&self.spec, self.spec.alpha_rot, self.spec.b);
        let s = self.phi.value(t) * alpha * self.phi.value(r);
        let rs = rot2(s);
        let rp = rot2(s + std::f64::consts::FRAC_PI_2) * p;
        let y_new = self.n * rs * p * b;
        let dy = y_new - zy;
        let h = z + &self.yb * Vector::from_column_slice(dy.as_slice());
        // ∂s/∂p and ∂s/∂t
        let grad_p = if r > 0.0 {
            p * (self.phi.value(t) * alpha * self.phi.d1(r) / r)
        } else {
            nalgebra::Vector2::zeros()
        };
        let ds_dt = self.phi.d1(t) * alpha * self.phi.value(r);
        let dyy = self.n * (rs + rp * grad_p.transpose()) * self.n_inv;
        let grad_t = &sp.q_form * &zx * (2.0 / (sp.a * sp.a));
        let col = self.n * rp * (b * ds_dt);
        let col = Vector::from_column_slice(col.as_slice());
        let mut jac = Mat::identity(d, d);
        jac += &self.yb * (to_dmat2(&dyy) - Mat::identity(2, 2)) * self.yb.transpose();
        if d > 2 {
            jac += &self.yb * col * grad_t.transpose() * self.xb.transpose();
        }
        Ok((h, jac))
    }

    fn linear(&self) -> &Mat {
        &self.r
    }

    fn region(&self, z: &Vector) -> Region {
        let (_, _, t, p) = self.coords(z);
        let r = p.norm();
        let s2 = self.spec.sigma * self.spec.sigma;
        if t >= 1.0 || r >= 1.0 {
            Region::Outside
        } else if t <= s2 && r <= self.spec.sigma {
            Region::Inner
        } else {
            Region::Transition
        }
    }

    fn grid_point(&self, u: &Vector) -> Vector {
        let d = self.dim();
        let (a, b) = (self.spec.a, self.spec.b);
        let ux = Vector::from_fn(d - 2, |i, _| 2.0 * a * u[i]);
        let x = &self.q_sqrt_inv * ux;
        let y = self.n * nalgebra::Vector2::new(u[d - 2], u[d - 1]) * (2.0 * b);
        &self.xb * x + &self.yb * Vector::from_column_slice(y.as_slice())
    }

    fn is_symplectic(&self) -> bool {
        false
    }
}

type CMat = DMatrix<Complex<f64>>;

/// Real 2q×2q matrix of a complex q×q matrix, z = x + iy.
fn complex_to_real(c: &CMat) -> Mat {
    let q = c.nrows();
    let mut m = Mat::zeros(2 * q, 2 * q);
    for i in 0..q {
        for j in 0..q {
            let z = c[(i, j)];
            m[(i, j)] = z.re;
            m[(i, q + j)] = -z.im;
            m[(q + i, j)] = z.im;
            m[(q + i, q + j)] = z.re;
        }
    }
    m
}

fn real_to_complex(m: &Mat) -> CMat {
    let q = m.nrows() / 2;
    CMat::from_fn(q, q, |i, j| Complex::new(m[(i, j)], m[(q + i, j)]))
}

/// Orthonormal eigenbasis (as a real unitary matrix) and eigenvalue
/// arguments of a unitary map of ℝ^{2q}.
pub fn unitary_eigen(r: &Mat) -> Result<(Mat, Vec<f64>)> {
    let d = r.nrows();
    let form = SymplecticForm::for_dim(d).map_err(|e| KernelError::InvalidArgument(e.to_string()))?;
    if max_abs(&(r.transpose() * r - Mat::identity(d, d))) > 1e-10 || form.residual(r) > 1e-10 {
        return Err(KernelError::InvalidArgument("map is not unitary".into()));
    }
    let c = real_to_complex(r);
    let (q, t) = nalgebra::linalg::Schur::new(c).unpack();
    let thetas = (0..d / 2).map(|k| t[(k, k)].arg()).collect();
    Ok((complex_to_real(&q), thetas))
}

/// Unitary map with eigenbasis `basis` (real form of a unitary matrix) and
/// eigenvalues e^{iθ_k}.
pub fn unitary_with_arguments(basis: &Mat, thetas: &[f64]) -> Mat {
    let q = thetas.len();
    let mut d = Mat::zeros(2 * q, 2 * q);
    for (k, &t) in thetas.iter().enumerate() {
        let (s, c) = t.sin_cos();
        d[(k, k)] = c;
        d[(k, q + k)] = -s;
        d[(q + k, k)] = s;
        d[(q + k, q + k)] = c;
    }
    basis * d * basis.transpose()
}

/// Closed-form time-one map of ψ∘H with H(w) = ½Σ|θ_k||w_k|² in eigen
/// coordinates: ĥ(w)_k = e^{iθ_k τ(H(w))} w_k.
#[derive(Debug, Clone)]
struct DiagonalFlow {
    thetas: Vec<f64>,
    cut: Bump,
}

impl DiagonalFlow {
    fn q(&self) -> usize {
        self.thetas.len()
    }

    fn energy(&self, w: &Vector) -> f64 {
        let q = self.q();
        (0..q).map(|k| 0.5 * self.thetas[k].abs() * (w[k] * w[k] + w[q + k] * w[q + k])).sum()
    }

    fn evaluate(&self, w: &Vector) -> (Vector, Mat) {
        let q = self.q();
        let hw = self.energy(w);
        if hw >= 1.0 {
            return (w.clone(), Mat::identity(2 * q, 2 * q));
        }
        let tau = self.cut.value(hw);
        let dtau = self.cut.d1(hw);
        let grad = Vector::from_fn(2 * q, |i, _| self.thetas[i % q].abs() * w[i]);
        let mut out = Vector::zeros(2 * q);
        let mut jac = Mat::zeros(2 * q, 2 * q);
        for k in 0..q {
            let th = self.thetas[k];
            let (s, c) = (th * tau).sin_cos();
            let (x, y) = (w[k], w[q + k]);
            out[k] = c * x - s * y;
            out[q + k] = s * x + c * y;
            jac[(k, k)] = c;
            jac[(k, q + k)] = -s;
            jac[(q + k, k)] = s;
            jac[(q + k, q + k)] = c;
            // d/ds of the rotated point, times ds/dz = θ τ′ ∇H
            let (rx, ry) = (-out[q + k], out[k]);
            for j in 0..2 * q {
                let g = th * dtau * grad[j];
                jac[(k, j)] += rx * g;
                jac[(q + k, j)] += ry * g;
            }
        }
        (out, jac)
    }
}

pub struct UnitaryKernel {
    basis: Mat,
    flow: DiagonalFlow,
    sigma: f64,
    r: Mat,
}

/// Closed-form kernel for a unitary R whose eigenvalue arguments all lie on
/// one side of zero. Support U = {H < 1}, equal to R on {H ≤ σ²}.
pub fn unitary_kernel(r: &Mat, sigma: f64) -> Result<UnitaryKernel> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(KernelError::InvalidArgument(format!("sigma = {sigma} not in (0, 1)")));
    }
    let (basis, thetas) = unitary_eigen(r)?;
    let all_zero = thetas.iter().all(|t| t.abs() <= 1e-14);
    let positive = thetas.iter().all(|&t| t > 0.0);
    let negative = thetas.iter().all(|&t| t < 0.0);
    if !(all_zero || positive || negative) {
        return Err(KernelError::MixedSign);
    }
    let thetas = if all_zero { vec![0.0; thetas.len()] } else { thetas };
    Ok(UnitaryKernel {
        basis,
        flow: DiagonalFlow { thetas, cut: Bump::new(sigma * sigma, 1.0) },
        sigma,
        r: r.clone(),
    })
}

impl UnitaryKernel {
    pub fn arguments(&self) -> &[f64] {
        &self.flow.thetas
    }

    pub fn energy(&self, z: &Vector) -> f64 {
        self.flow.energy(&(self.basis.transpose() * z))
    }
}

impl Kernel for UnitaryKernel {
    fn dim(&self) -> usize {
        self.r.nrows()
    }

    fn evaluate(&self, z: &Vector) -> Result<(Vector, Mat)> {
        let w = self.basis.transpose() * z;
        if self.flow.energy(&w) >= 1.0 {
            return Ok((z.clone(), Mat::identity(self.dim(), self.dim())));
        }
        let (hw, dh) = self.flow.evaluate(&w);
        Ok((&self.basis * hw, &self.basis * dh * self.basis.transpose()))
    }

    fn linear(&self) -> &Mat {
        &self.r
    }

    fn region(&self, z: &Vector) -> Region {
        let e = self.energy(z);
        if e >= 1.0 {
            Region::Outside
        } else if e <= self.sigma * self.sigma {
            Region::Inner
        } else {
            Region::Transition
        }
    }

    fn grid_point(&self, u: &Vector) -> Vector {
        let q = self.flow.q();
        let w = Vector::from_fn(2 * q, |i, _| {
            let th = self.flow.thetas[i % q].abs();
            let radius = if th > 0.0 { (2.0 / th).sqrt() } else { 1.0 };
            2.0 * radius * u[i]
        });
        &self.basis * w
    }

    fn is_symplectic(&self) -> bool {
        true
    }
}

/// Mixed-sign unitary R realised as h₊ ∘ h₋ⁱ: R = R₊R₋ in a common
/// eigenbasis, U = U₊, and disjoint scaled copies of U₋ packed inside U₊
/// by dyadic cubes. Dh = R on the kept set K.
pub struct CompositeKernel {
    basis: Mat,
    plus: DiagonalFlow,
    minus: DiagonalFlow,
    /// v = T w normalises U₋ to the unit ball; per real coordinate.
    t_scale: Vec<f64>,
    /// T(U₊) = {Σ c_j v_j² < 1}.
    ellipse: Vec<f64>,
    base_side: f64,
    levels: usize,
    sigma: f64,
    r: Mat,
}

pub fn composite_unitary_kernel(r: &Mat, sigma: f64, levels: usize) -> Result<CompositeKernel> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(KernelError::InvalidArgument(format!("sigma = {sigma} not in (0, 1)")));
    }
    let (basis, thetas) = unitary_eigen(r)?;
    let q = thetas.len();
    let max_arg = thetas.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let eta = if max_arg > 0.0 { 0.5 * max_arg } else { 1e-3 };
    let mut plus = Vec::with_capacity(q);
    let mut minus = Vec::with_capacity(q);
    for &t in &thetas {
        if t > 0.0 {
            plus.push(t + eta);
            minus.push(-eta);
        } else {
            plus.push(eta);
            minus.push(t - eta);
        }
    }
    let t_scale: Vec<f64> = (0..2 * q).map(|i| (minus[i % q].abs() / 2.0).sqrt()).collect();
    let ellipse: Vec<f64> = (0..2 * q).map(|i| plus[i % q] / minus[i % q].abs()).collect();
    let min_axis = ellipse.iter().map(|c| 1.0 / c.sqrt()).fold(f64::INFINITY, f64::min);
    Ok(CompositeKernel {
        basis,
        plus: DiagonalFlow { thetas: plus, cut: Bump::new(sigma * sigma, 1.0) },
        minus: DiagonalFlow { thetas: minus, cut: Bump::new(sigma * sigma, 1.0) },
        t_scale,
        ellipse,
        base_side: min_axis,
        levels,
        sigma,
        r: r.clone(),
    })
}

impl CompositeKernel {
    pub fn plus_arguments(&self) -> &[f64] {
        &self.plus.thetas
    }

    pub fn minus_arguments(&self) -> &[f64] {
        &self.minus.thetas
    }

    /// Ball (center, radius) in normalised coordinates containing v, if any.
    fn locate(&self, v: &[f64]) -> Option<(Vec<f64>, f64)> {
        let d = v.len();
        let mut selected: Vec<(Vec<f64>, f64)> = Vec::new();
        for k in 0..self.levels {
            let side = self.base_side / (1u64 << k) as f64;
            let lo: Vec<f64> = v.iter().map(|x| (x / side).floor() * side).collect();
            let far: f64 = (0..d)
                .map(|j| self.ellipse[j] * lo[j].powi(2).max((lo[j] + side).powi(2)))
                .sum();
            if far > 1.0 {
                continue;
            }
            let clear = selected.iter().all(|(c, rad)| {
                let dist2: f64 = (0..d).map(|j| (c[j].clamp(lo[j], lo[j] + side) - c[j]).powi(2)).sum();
                dist2 >= rad * rad
            });
            if !clear {
                continue;
            }
            let center: Vec<f64> = lo.iter().map(|x| x + 0.5 * side).collect();
            let rad = 0.5 * side;
            let dist2: f64 = (0..d).map(|j| (v[j] - center[j]).powi(2)).sum();
            if dist2 < rad * rad {
                return Some((center, rad));
            }
            selected.push((center, rad));
        }
        None
    }

    /// Eigen coordinates → (image, Jacobian, kept).
    fn eval_eigen(&self, w: &Vector) -> (Vector, Mat, bool) {
        let d = w.len();
        if self.plus.energy(w) >= 1.0 {
            return (w.clone(), Mat::identity(d, d), false);
        }
        let v: Vec<f64> = (0..d).map(|i| self.t_scale[i] * w[i]).collect();
        let (w1, d1, inner_minus) = match self.locate(&v) {
            Some((c, rad)) => {
                let b = Vector::from_fn(d, |i, _| c[i] / self.t_scale[i]);
                let local = (w - &b) / rad;
                let inner = self.minus.energy(&local) < self.sigma * self.sigma;
                let (hl, dl) = self.minus.evaluate(&local);
                (b + hl * rad, dl, inner)
            }
            None => (w.clone(), Mat::identity(d, d), false),
        };
        let kept = inner_minus && self.plus.energy(&w1) <= self.sigma * self.sigma;
        let (w2, d2) = self.plus.evaluate(&w1);
        (w2, d2 * d1, kept)
    }

    pub fn in_support(&self, z: &Vector) -> bool {
        self.plus.energy(&(self.basis.transpose() * z)) < 1.0
    }

    pub fn is_kept(&self, z: &Vector) -> bool {
        self.eval_eigen(&(self.basis.transpose() * z)).2
    }
}

impl Kernel for CompositeKernel {
    fn dim(&self) -> usize {
        self.r.nrows()
    }

    fn evaluate(&self, z: &Vector) -> Result<(Vector, Mat)> {
        let w = self.basis.transpose() * z;
        if self.plus.energy(&w) >= 1.0 {
            return Ok((z.clone(), Mat::identity(self.dim(), self.dim())));
        }
        let (hw, dh, _) = self.eval_eigen(&w);
        Ok((&self.basis * hw, &self.basis * dh * self.basis.transpose()))
    }

    fn linear(&self) -> &Mat {
        &self.r
    }

    fn region(&self, z: &Vector) -> Region {
        let w = self.basis.transpose() * z;
        if self.plus.energy(&w) >= 1.0 {
            Region::Outside
        } else if self.eval_eigen(&w).2 {
            Region::Inner
        } else {
            Region::Transition
        }
    }

    fn grid_point(&self, u: &Vector) -> Vector {
        let q = self.plus.q();
        let w = Vector::from_fn(2 * q, |i, _| 2.0 * (2.0 / self.plus.thetas[i % q]).sqrt() * u[i]);
        &self.basis * w
    }

    fn is_symplectic(&self) -> bool {
        true
    }

    fn inner_is_linear(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VolumeLoss {
    pub support_points: usize,
    pub kept_points: usize,
    /// vol(U∖K)/vol(U) by grid counting.
    pub measured: f64,
    /// 3(1 − σ^d).
    pub bound: f64,
}

/// Counts grid points of U₊ outside the kept set.
pub fn composite_volume_loss(k: &CompositeKernel, points: usize, seed: u64) -> VolumeLoss {
    let d = k.dim();
    let alpha = roberts_alpha(d);
    let (support, kept) = (0..points)
        .into_par_iter()
        .map(|i| {
            let u = roberts_point(&alpha, i as u64 + seed);
            let w = Vector::from_fn(d, |j, _| (2.0 / k.plus.thetas[j % (d / 2)]).sqrt() * u[j]);
            if k.plus.energy(&w) >= 1.0 {
                return (0usize, 0usize);
            }
            (1, k.eval_eigen(&w).2 as usize)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    VolumeLoss {
        support_points: support,
        kept_points: kept,
        measured: if support > 0 { 1.0 - kept as f64 / support as f64 } else { 0.0 },
        bound: 3.0 * (1.0 - k.sigma.powi(d as i32)),
    }
}

/// Constants of the integrated kernel for a target ε₀: K bounds ‖D²H̃‖,
/// e^{t̄K} − 1 < ε₀ and ‖R − I‖ < ε = √2 sin t̄.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IntegratedConstants {
    pub k: f64,
    pub t_bar: f64,
    pub epsilon: f64,
}

pub fn integrated_kernel_constants(eps0: f64, sigma: f64) -> IntegratedConstants {
    let s = 1.0 - sigma;
    let k = 10.0 / (s * s) + 20.0 / (sigma * s) + 30.0 / s + 3.0;
    let t_bar = (1.0 + eps0).ln() / k * (1.0 - 1e-9);
    let epsilon = std::f64::consts::SQRT_2 * t_bar.sin() * (1.0 - 1e-9);
    IntegratedConstants { k, t_bar, epsilon }
}

/// Time-t₀ flow of H̃(x, y) = c − ψ(x)(c − φ(y)) on ℝ^{2q} = X ⊕ Y, with
/// Y = span{u, Ju}, ψ(x) = ζ(a⁻¹‖Ax‖), φ(y) = ½b²ρ(b⁻¹‖y‖)², ρ = ∫ζ.
/// Equals the rotation by t₀ in Y on σ𝒞 and the identity off 𝒞.
pub struct SymplecticCylinderKernel {
    xb: Mat,
    yb: Mat,
    axis: Mat,
    axis_inv: Mat,
    a: f64,
    b: f64,
    sigma: f64,
    t0: f64,
    zeta: Bump,
    c: f64,
    j: Mat,
    r: Mat,
    tol: f64,
}

pub fn symplectic_cylinder_kernel(
    y_dir: &Vector,
    axis: &Mat,
    a: f64,
    b: f64,
    sigma: f64,
    t0: f64,
) -> Result<SymplecticCylinderKernel> {
    let d = y_dir.len();
    let form = SymplecticForm::for_dim(d).map_err(|e| KernelError::InvalidArgument(e.to_string()))?;
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(KernelError::InvalidArgument(format!("sigma = {sigma} not in (0, 1)")));
    }
    if axis.nrows() != d - 2 || axis.ncols() != d - 2 {
        return Err(KernelError::InvalidArgument("axis map has the wrong size".into()));
    }
    let nu = y_dir.norm();
    if !(nu > 0.0) || !(a > 0.0 && b > 0.0) {
        return Err(KernelError::InvalidArgument("need a nonzero Y direction and a, b > 0".into()));
    }
    let u = y_dir / nu;
    let ju = form.apply_j(&u);
    let mut yb = Mat::zeros(d, 2);
    yb.set_column(0, &u);
    yb.set_column(1, &ju);
    let xb = Subspace::from_orthonormal(yb.clone())
        .ok()
        .and_then(|y| y.complement())
        .map(|x| x.basis().clone())
        .unwrap_or_else(|| Mat::zeros(d, 0));
    let axis_inv = if d > 2 {
        axis.clone()
            .try_inverse()
            .ok_or_else(|| KernelError::InvalidArgument("axis map is singular".into()))?
    } else {
        Mat::zeros(0, 0)
    };
    let tau = if d > 2 { op_norm(axis) } else { 0.0 };
    if a <= tau * b {
        return Err(KernelError::NotThin { a, bound: tau * b });
    }
    let zeta = Bump::new(sigma, 1.0);
    let rho1 = zeta.integral(1.0);
    let r = Mat::identity(d, d) + &yb * (to_dmat2(&rot2(t0)) - Mat::identity(2, 2)) * yb.transpose();
    Ok(SymplecticCylinderKernel {
        xb,
        yb,
        axis: axis.clone(),
        axis_inv,
        a,
        b,
        sigma,
        t0,
        zeta,
        c: 0.5 * b * b * rho1 * rho1,
        j: form.j(),
        r,
        tol: 1e-12,
    })
}

impl SymplecticCylinderKernel {
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// H̃ with its ambient gradient and Hessian.
    pub fn hamiltonian(&self, z: &Vector) -> (f64, Vector, Mat) {
        let d = z.len();
        let x = self.xb.transpose() * z;
        let y = self.yb.transpose() * z;
        // ψ and derivatives in X coordinates
        let ax = &self.axis * &x;
        let nx = ax.norm();
        let rx = nx / self.a;
        let psi = self.zeta.value(rx);
        let (gpsi, hpsi) = if nx > 0.0 && rx > self.sigma && rx < 1.0 {
            let ata_x = self.axis.transpose() * &ax;
            let ata = self.axis.transpose() * &self.axis;
            let z1 = self.zeta.d1(rx);
            let z2 = self.zeta.d2(rx);
            let g = &ata_x * (z1 / (self.a * nx));
            let outer = &ata_x * ata_x.transpose() / (nx * nx);
            let h = &outer * (z2 / (self.a * self.a)) + (ata - &outer) * (z1 / (self.a * nx));
            (g, h)
        } else {
            (Vector::zeros(x.len()), Mat::zeros(x.len(), x.len()))
        };
        // φ and derivatives in Y coordinates
        let ny = y.norm();
        let s = ny / self.b;
        let rho = self.zeta.integral(s);
        let phi = 0.5 * self.b * self.b * rho * rho;
        let (gphi, hphi) = if s <= self.sigma {
            (y.clone(), Mat::identity(2, 2))
        } else if s >= 1.0 {
            (Vector::zeros(2), Mat::zeros(2, 2))
        } else {
            let z0 = self.zeta.value(s);
            let z1 = self.zeta.d1(s);
            let g = &y * (self.b * rho * z0 / ny);
            let outer = &y * y.transpose() / (ny * ny);
            let h = &outer * (z0 * z0 + rho * z1) + (Mat::identity(2, 2) - &outer) * (self.b * rho * z0 / ny);
            (g, h)
        };
        let value = self.c - psi * (self.c - phi);
        let gx = &gpsi * (-(self.c - phi));
        let gy = &gphi * psi;
        let grad = &self.xb * gx + &self.yb * gy;
        let hxx = &hpsi * (-(self.c - phi));
        let hxy = &gpsi * gphi.transpose();
        let hyy = &hphi * psi;
        let mut hess = &self.yb * hyy * self.yb.transpose();
        if d > 2 {
            hess += &self.xb * hxx * self.xb.transpose();
            let cross = &self.xb * hxy * self.yb.transpose();
            hess += &cross + cross.transpose();
        }
        (value, grad, hess)
    }

    fn rhs(&self, state: &[f64], with_var: bool, out: &mut [f64]) {
        let d = self.r.nrows();
        let z = Vector::from_column_slice(&state[..d]);
        let (_, g, h) = self.hamiltonian(&z);
        let f = &self.j * g;
        out[..d].copy_from_slice(f.as_slice());
        if with_var {
            let m = Mat::from_column_slice(d, d, &state[d..]);
            let dm = &self.j * h * m;
            out[d..].copy_from_slice(dm.as_slice());
        }
    }

    /// Dormand–Prince 5(4) with step control on the mixed error norm.
    fn integrate(&self, z: &Vector, with_var: bool) -> Result<Vec<f64>> {
        let d = z.len();
        let n = if with_var { d + d * d } else { d };
        let mut y = vec![0.0; n];
        y[..d].copy_from_slice(z.as_slice());
        if with_var {
            for i in 0..d {
                y[d + i * d + i] = 1.0;
            }
        }
        if self.t0 == 0.0 {
            return Ok(y);
        }
        const A: [[f64; 6]; 7] = [
            [0.0; 6],
            [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
            [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
            [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
            [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
            [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
            [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
        ];
        const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
        const B4: [f64; 7] = [
            5179.0 / 57600.0,
            0.0,
            7571.0 / 16695.0,
            393.0 / 640.0,
            -92097.0 / 339200.0,
            187.0 / 2100.0,
            1.0 / 40.0,
        ];
        let total = self.t0.abs();
        let sign = self.t0.signum();
        let mut t = 0.0;
        let mut h = total.min(0.05 * self.b.min(1.0));
        let mut k = vec![vec![0.0; n]; 7];
        let mut tmp = vec![0.0; n];
        let mut steps = 0usize;
        while t < total {
            steps += 1;
            if steps > 200_000 {
                return Err(KernelError::FlowIntegrationFailed("step limit reached".into()));
            }
            if h < 1e-14 * total {
                return Err(KernelError::FlowIntegrationFailed(format!("step size underflow at t = {t}")));
            }
            h = h.min(total - t);
            let hs = h * sign;
            self.rhs(&y, with_var, &mut k[0]);
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for (l, kl) in k.iter().enumerate().take(s) {
                        acc += hs * A[s][l] * kl[i];
                    }
                    tmp[i] = acc;
                }
                self.rhs(&tmp, with_var, &mut k[s]);
            }
            let mut err = 0.0f64;
            let mut y5 = vec![0.0; n];
            for i in 0..n {
                let mut s5 = 0.0;
                let mut s4 = 0.0;
                for s in 0..7 {
                    s5 += B5[s] * k[s][i];
                    s4 += B4[s] * k[s][i];
                }
                y5[i] = y[i] + hs * s5;
                let sc = self.tol * (1.0 + y[i].abs().max(y5[i].abs()));
                err = err.max((hs * (s5 - s4)).abs() / sc);
            }
            if !err.is_finite() {
                return Err(KernelError::FlowIntegrationFailed("non-finite state".into()));
            }
            if err <= 1.0 {
                t += h;
                y = y5;
            }
            let factor = if err > 0.0 { 0.9 * err.powf(-0.2) } else { 5.0 };
            h *= factor.clamp(0.2, 5.0);
        }
        Ok(y)
    }
}

impl Kernel for SymplecticCylinderKernel {
    fn dim(&self) -> usize {
        self.r.nrows()
    }

    fn evaluate(&self, z: &Vector) -> Result<(Vector, Mat)> {
        let d = self.dim();
        let y = self.integrate(z, true)?;
        Ok((Vector::from_column_slice(&y[..d]), Mat::from_column_slice(d, d, &y[d..])))
    }

    fn value(&self, z: &Vector) -> Result<Vector> {
        Ok(Vector::from_vec(self.integrate(z, false)?))
    }

    fn linear(&self) -> &Mat {
        &self.r
    }

    fn region(&self, z: &Vector) -> Region {
        let x = self.xb.transpose() * z;
        let y = self.yb.transpose() * z;
        let rx = (&self.axis * x).norm() / self.a;
        let ry = y.norm() / self.b;
        if rx >= 1.0 || ry >= 1.0 {
            Region::Outside
        } else if rx <= self.sigma && ry <= self.sigma {
            Region::Inner
        } else {
            Region::Transition
        }
    }

    fn grid_point(&self, u: &Vector) -> Vector {
        let d = self.dim();
        let ux = Vector::from_fn(d - 2, |i, _| 2.0 * self.a * u[i]);
        let x = &self.axis_inv * ux;
        let y = Vector::from_vec(vec![2.0 * self.b * u[d - 2], 2.0 * self.b * u[d - 1]]);
        &self.xb * x + &self.yb * y
    }

    fn is_symplectic(&self) -> bool {
        true
    }

    fn inner_tolerance(&self) -> f64 {
        1e-7
    }
}

/// Kronecker-sequence direction for dimension d (golden-ratio generalisation).
fn roberts_alpha(d: usize) -> Vec<f64> {
    let mut g = 2.0f64;
    for _ in 0..64 {
        g = (1.0 + g).powf(1.0 / (d as f64 + 1.0));
    }
    (1..=d).map(|k| (1.0 / g.powi(k as i32)).fract()).collect()
}

/// n-th point of the sequence, mapped to [−1, 1]^d.
fn roberts_point(alpha: &[f64], n: u64) -> Vector {
    Vector::from_fn(alpha.len(), |i, _| {
        let u = (0.5 + alpha[i] * n as f64).fract();
        2.0 * u - 1.0
    })
}

/// Deterministic verification grid: `points` elements of a low-discrepancy
/// sequence starting at offset `seed`, placed in the kernel's box.
pub fn verification_grid(kernel: &dyn Kernel, points: usize, seed: u64) -> Vec<Vector> {
    let alpha = roberts_alpha(kernel.dim());
    (0..points).map(|i| kernel.grid_point(&roberts_point(&alpha, seed + i as u64))).collect()
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct KernelReport {
    pub points: usize,
    pub inner_points: usize,
    pub outside_points: usize,
    pub max_det_error: f64,
    pub max_jacobian_distance: f64,
    pub max_displacement: f64,
    /// Points off the support that moved, or inner points where h ≠ R.
    pub support_violations: usize,
    pub max_inner_error: f64,
    pub max_outside_error: f64,
    /// Entrywise max of analytic minus central-difference Jacobian.
    pub max_fd_error: f64,
    /// Entrywise max of DhᵀJDh − J, for symplectic kernels.
    pub symplectic_residual: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub points: usize,
    pub seed: u64,
    /// Central-difference step; None skips the finite-difference check.
    pub fd_step: Option<f64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { points: 10_000, seed: 0, fd_step: Some(1e-5) }
    }
}

/// Checks at one grid point.
#[derive(Debug, Clone, Serialize)]
pub struct PointCheck {
    pub z: Vec<f64>,
    pub region: Region,
    pub det_error: f64,
    pub jacobian_distance: f64,
    pub displacement: f64,
    /// Deviation from identity (outside) or from R (inner); zero in between.
    pub support_error: f64,
    pub violation: bool,
    pub fd_error: f64,
    pub symplectic_residual: f64,
}

fn finite_difference(kernel: &dyn Kernel, z: &Vector, step: f64) -> Result<Mat> {
    let d = z.len();
    let mut m = Mat::zeros(d, d);
    for j in 0..d {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[j] += step;
        zm[j] -= step;
        let col = (kernel.value(&zp)? - kernel.value(&zm)?) / (2.0 * step);
        m.set_column(j, &col);
    }
    Ok(m)
}

pub fn check_point(kernel: &dyn Kernel, z: &Vector, fd_step: Option<f64>) -> Result<PointCheck> {
    let d = kernel.dim();
    let (h, dh) = kernel.evaluate(z)?;
    let id = Mat::identity(d, d);
    let region = kernel.region(z);
    let (support_error, violation) = match region {
        Region::Outside => {
            let e = (&h - z).amax().max(max_abs(&(&dh - &id)));
            (e, e > 1e-10)
        }
        Region::Inner => {
            let r = kernel.linear();
            let e = if kernel.inner_is_linear() {
                (&h - r * z).amax().max(max_abs(&(&dh - r)))
            } else {
                max_abs(&(&dh - r))
            };
            (e, e > kernel.inner_tolerance())
        }
        Region::Transition => (0.0, false),
    };
    let fd_error = match fd_step {
        Some(step) => max_abs(&(finite_difference(kernel, z, step)? - &dh)),
        None => 0.0,
    };
    let symplectic_residual = if kernel.is_symplectic() {
        SymplecticForm::for_dim(d).expect("symplectic kernels have even dimension").residual(&dh)
    } else {
        0.0
    };
    Ok(PointCheck {
        z: z.iter().copied().collect(),
        region,
        det_error: (dh.determinant() - 1.0).abs(),
        jacobian_distance: op_norm(&(&dh - &id)),
        displacement: (&h - z).norm(),
        support_error,
        violation,
        fd_error,
        symplectic_residual,
    })
}

/// Per-point checks over the verification grid, in grid order.
pub fn kernel_point_checks(kernel: &dyn Kernel, opts: VerifyOptions) -> Result<Vec<PointCheck>> {
    let grid = verification_grid(kernel, opts.points, opts.seed);
    grid.par_iter().map(|z| check_point(kernel, z, opts.fd_step)).collect()
}

pub fn summarize_checks(kernel: &dyn Kernel, checks: &[PointCheck]) -> KernelReport {
    let max = |f: &dyn Fn(&PointCheck) -> f64| checks.iter().map(f).fold(0.0, f64::max);
    let of_region = |r: Region| move |c: &PointCheck| if c.region == r { c.support_error } else { 0.0 };
    KernelReport {
        points: checks.len(),
        inner_points: checks.iter().filter(|c| c.region == Region::Inner).count(),
        outside_points: checks.iter().filter(|c| c.region == Region::Outside).count(),
        max_det_error: max(&|c| c.det_error),
        max_jacobian_distance: max(&|c| c.jacobian_distance),
        max_displacement: max(&|c| c.displacement),
        support_violations: checks.iter().filter(|c| c.violation).count(),
        max_inner_error: max(&of_region(Region::Inner)),
        max_outside_error: max(&of_region(Region::Outside)),
        max_fd_error: max(&|c| c.fd_error),
        symplectic_residual: kernel.is_symplectic().then(|| max(&|c| c.symplectic_residual)),
    }
}

/// Evaluates the kernel on a deterministic grid in twice its support.
pub fn kernel_verify(kernel: &dyn Kernel, opts: VerifyOptions) -> Result<KernelReport> {
    let checks = kernel_point_checks(kernel, opts)?;
    Ok(summarize_checks(kernel, &checks))
}
