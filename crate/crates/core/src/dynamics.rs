//! Base systems, cocycle families, orbit segments and long matrix products.

use crate::linalg::{self, check_group, max_abs, GroupTag, Mat, SquareMatrix, Vector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("group violation at step {step}: {msg}")]
    GroupViolation { step: usize, msg: String },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid cocycle: {0}")]
    InvalidCocycle(String),
    #[error("orbit length must be at least 1")]
    EmptyOrbit,
}

pub type State = Vec<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaseSystem {
    CircleRotation { alpha: f64 },
    TorusTranslation { shift: Vec<f64> },
    CatMap,
    /// Cyclic shift through an explicit list of `len` states, encoded by index.
    Symbolic { len: usize },
}

fn frac(x: f64) -> f64 {
    let y = x - x.floor();
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

impl BaseSystem {
    pub fn state_dim(&self) -> usize {
        match self {
            BaseSystem::CircleRotation { .. } | BaseSystem::Symbolic { .. } => 1,
            BaseSystem::TorusTranslation { shift } => shift.len(),
            BaseSystem::CatMap => 2,
        }
    }

    pub fn validate(&self, x: &State) -> Result<(), DynamicsError> {
        if x.len() != self.state_dim() {
            return Err(DynamicsError::InvalidState(format!(
                "expected {} coordinates, got {}",
                self.state_dim(),
                x.len()
            )));
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(DynamicsError::InvalidState("non-finite coordinate".into()));
        }
        if let BaseSystem::Symbolic { len } = self {
            if *len == 0 || x[0] < 0.0 || x[0] >= *len as f64 || x[0].fract() != 0.0 {
                return Err(DynamicsError::InvalidState(format!("symbol {} outside 0..{len}", x[0])));
            }
        }
        Ok(())
    }

    pub fn step(&self, x: &State) -> State {
        match self {
            BaseSystem::CircleRotation { alpha } => vec![frac(x[0] + alpha)],
            BaseSystem::TorusTranslation { shift } => x.iter().zip(shift).map(|(a, b)| frac(a + b)).collect(),
            BaseSystem::CatMap => vec![frac(2.0 * x[0] + x[1]), frac(x[0] + x[1])],
            BaseSystem::Symbolic { len } => vec![((x[0] as usize + 1) % len) as f64],
        }
    }

    pub fn step_back(&self, x: &State) -> State {
        match self {
            BaseSystem::CircleRotation { alpha } => vec![frac(x[0] - alpha)],
            BaseSystem::TorusTranslation { shift } => x.iter().zip(shift).map(|(a, b)| frac(a - b)).collect(),
            BaseSystem::CatMap => vec![frac(x[0] - x[1]), frac(2.0 * x[1] - x[0])],
            BaseSystem::Symbolic { len } => vec![((x[0] as usize + len - 1) % len) as f64],
        }
    }

    /// Draw from the invariant measure (Lebesgue/Haar, or counting measure).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        match self {
            BaseSystem::Symbolic { len } => vec![rng.random_range(0..*len) as f64],
            _ => (0..self.state_dim()).map(|_| rng.random::<f64>()).collect(),
        }
    }

    /// `count` start points, stratified along the first coordinate.
    pub fn stratified_samples<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<State> {
        (0..count)
            .map(|i| match self {
                BaseSystem::Symbolic { len } => vec![((i * len) / count.max(1)) as f64],
                _ => {
                    let mut x = self.sample(rng);
                    x[0] = (i as f64 + x[0]) / count as f64;
                    x
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Potential {
    Zero,
    /// V(θ) = 2λ cos(2πθ).
    Cosine { lambda: f64 },
    /// Samples at θ = k/n, linearly interpolated and periodic.
    Tabulated { values: Vec<f64> },
}

impl Potential {
    pub fn eval(&self, theta: f64) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Cosine { lambda } => 2.0 * lambda * (TAU * theta).cos(),
            Potential::Tabulated { values } => {
                let n = values.len();
                if n == 0 {
                    return 0.0;
                }
                let t = frac(theta) * n as f64;
                let i = (t.floor() as usize).min(n - 1);
                let s = t - i as f64;
                values[i] * (1.0 - s) + values[(i + 1) % n] * s
            }
        }
    }
}

/// Piecewise constant function on the circle: value `values[i]` on
/// [breaks[i], breaks[i+1]), wrapping around.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub breaks: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepFunction {
    pub fn constant(v: f64) -> Self {
        StepFunction { breaks: vec![0.0], values: vec![v] }
    }

    /// `inside` on [a, b), `outside` elsewhere.
    pub fn interval(a: f64, b: f64, inside: f64, outside: f64) -> Self {
        StepFunction { breaks: vec![a, b], values: vec![inside, outside] }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = frac(x);
        match self.breaks.iter().rposition(|&b| b <= x) {
            Some(i) => self.values[i],
            None => *self.values.last().unwrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cocycle {
    Constant(SquareMatrix),
    Schrodinger { energy: f64, potential: Potential },
    /// A(x) = R_{θ(x)} D, rotation in the (e1, e2) plane.
    ShearRotate { diag: Vec<f64>, theta: StepFunction },
    /// Matrix list indexed by the integer part of the first state coordinate.
    Table(Vec<SquareMatrix>),
}

/// Slow circle rotation with A = R_{π/2}·diag(2, 1/2) on an arc crossed in
/// exactly `arc_steps` iterates and A = diag(2, 1/2) elsewhere. For even
/// `arc_steps` each crossing multiplies by ±I, so λ_1 ≈ (1 − arc length)·log 2
/// while windows inside the arc are isometric (no domination at short scales).
pub fn shear_rotate_witness(arc_steps: usize) -> (BaseSystem, Cocycle) {
    let alpha = (5f64.sqrt() - 1.0) / 2000.0;
    let system = BaseSystem::CircleRotation { alpha };
    let arc = StepFunction::interval(0.0, arc_steps as f64 * alpha, std::f64::consts::FRAC_PI_2, 0.0);
    (system, Cocycle::ShearRotate { diag: vec![2.0, 0.5], theta: arc })
}

/// [[E − V(θ), −1], [1, 0]].
pub fn schrodinger_matrix(energy: f64, potential: &Potential, theta: f64) -> Mat {
    Mat::from_row_slice(2, 2, &[energy - potential.eval(theta), -1.0, 1.0, 0.0])
}

impl Cocycle {
    pub fn shear_rotate(diag: Vec<f64>, theta: StepFunction) -> Result<Self, DynamicsError> {
        if diag.len() < 2 || diag.iter().any(|x| !(x.abs() > 0.0) || !x.is_finite()) {
            return Err(DynamicsError::InvalidCocycle("shear-rotate needs d ≥ 2 nonzero diagonal entries".into()));
        }
        if theta.breaks.is_empty() || theta.breaks.len() != theta.values.len() {
            return Err(DynamicsError::InvalidCocycle("step function breaks/values mismatch".into()));
        }
        Ok(Cocycle::ShearRotate { diag, theta })
    }

    pub fn table(mats: Vec<SquareMatrix>) -> Result<Self, DynamicsError> {
        if mats.is_empty() {
            return Err(DynamicsError::InvalidCocycle("empty table".into()));
        }
        let d = mats[0].dim();
        if mats.iter().any(|m| m.dim() != d) {
            return Err(DynamicsError::InvalidCocycle("table matrices of different sizes".into()));
        }
        Ok(Cocycle::Table(mats))
    }

    pub fn dim(&self) -> usize {
        match self {
            Cocycle::Constant(m) => m.dim(),
            Cocycle::Schrodinger { .. } => 2,
            Cocycle::ShearRotate { diag, .. } => diag.len(),
            Cocycle::Table(ms) => ms[0].dim(),
        }
    }

    pub fn group_tag(&self) -> GroupTag {
        match self {
            Cocycle::Constant(m) => m.tag(),
            Cocycle::Schrodinger { .. } => GroupTag::SpecialLinear,
            Cocycle::ShearRotate { diag, .. } => {
                if (diag.iter().product::<f64>() - 1.0).abs() <= 1e-9 {
                    GroupTag::SpecialLinear
                } else {
                    GroupTag::GeneralLinear
                }
            }
            Cocycle::Table(ms) => {
                let t = ms[0].tag();
                if ms.iter().all(|m| m.tag() == t) {
                    t
                } else {
                    GroupTag::GeneralLinear
                }
            }
        }
    }

    pub fn matrix(&self, x: &State) -> Mat {
        match self {
            Cocycle::Constant(m) => m.mat().clone(),
            Cocycle::Schrodinger { energy, potential } => schrodinger_matrix(*energy, potential, x[0]),
            Cocycle::ShearRotate { diag, theta } => {
                let d = diag.len();
                let t = theta.eval(x[0]);
                let r = crate::sample::rotation(d, 0, 1, t);
                let mut m = r * Mat::from_diagonal(&Vector::from_column_slice(diag));
                if self.group_tag() == GroupTag::SpecialLinear {
                    m = linalg::project_special_linear(&m);
                }
                m
            }
            Cocycle::Table(ms) => {
                let n = ms.len() as i64;
                ms[(x[0].floor() as i64).rem_euclid(n) as usize].mat().clone()
            }
        }
    }

    pub fn constant_matrix(&self) -> Option<&Mat> {
        match self {
            Cocycle::Constant(m) => Some(m.mat()),
            _ => None,
        }
    }
}

/// Product B ↦ M·B kept as Q·R·e^{log_scale} with Q orthonormal (d×r),
/// R upper triangular normalized to unit max entry. `log_diag` accumulates
/// log|R_ii| of each QR step, which is what the discrete QR method sums.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredProduct {
    pub q: Mat,
    pub r: Mat,
    pub log_scale: f64,
    pub log_diag: Vec<f64>,
}

impl FactoredProduct {
    /// Start from an orthonormal frame.
    pub fn from_frame(frame: Mat) -> Self {
        let k = frame.ncols();
        FactoredProduct { q: frame, r: Mat::identity(k, k), log_scale: 0.0, log_diag: vec![0.0; k] }
    }

    pub fn identity(d: usize) -> Self {
        Self::from_frame(Mat::identity(d, d))
    }

    /// Left-multiply by `a`·e^{log_a}.
    pub fn push_scaled(&mut self, a: &Mat, log_a: f64) {
        let m = a * &self.q;
        let qr = m.qr();
        let q = qr.q();
        let rs = qr.r();
        let k = rs.ncols();
        for i in 0..k {
            self.log_diag[i] += rs[(i, i)].abs().ln() + log_a;
        }
        let r = rs * &self.r;
        let s = max_abs(&r);
        self.q = q;
        if s > 0.0 && s.is_finite() {
            self.r = r / s;
            self.log_scale += s.ln() + log_a;
        } else {
            self.r = r;
            self.log_scale += log_a;
        }
    }

    pub fn push(&mut self, a: &Mat) {
        self.push_scaled(a, 0.0)
    }

    pub fn recompose(&self) -> Mat {
        &self.q * &self.r * self.log_scale.exp()
    }

    /// Log singular values (decreasing) of the represented product.
    pub fn log_singular_values(&self) -> Vec<f64> {
        let mut out: Vec<f64> = linalg::log_singular_values(&self.r).into_iter().map(|x| x + self.log_scale).collect();
        // for a full frame the sum is log|det|, which the QR steps track exactly
        if self.q.is_square() && !out.is_empty() {
            let k = out.len() - 1;
            let total: f64 = self.log_diag.iter().sum();
            out[k] = total - out[..k].iter().sum::<f64>();
        }
        out
    }
}

/// Run of matrices inside a [`MatrixPath`].
#[derive(Debug, Clone, PartialEq)]
pub enum Run {
    Constant { a: Mat, len: usize },
    Explicit(Vec<Mat>),
}

impl Run {
    fn len(&self) -> usize {
        match self {
            Run::Constant { len, .. } => *len,
            Run::Explicit(v) => v.len(),
        }
    }
}

/// Finite sequence A_0, …, A_{n−1} stored as runs, so constant stretches
/// of any length cost O(1) memory and O(log n) to multiply out.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPath {
    runs: Vec<Run>,
    starts: Vec<usize>,
    len: usize,
    dim: usize,
}

/// Below this length a constant run is multiplied step by step.
const POWERING_THRESHOLD: usize = 64;

impl MatrixPath {
    pub fn from_runs(runs: Vec<Run>) -> Self {
        let runs: Vec<Run> = runs.into_iter().filter(|r| r.len() > 0).collect();
        let mut starts = Vec::with_capacity(runs.len());
        let mut len = 0;
        for r in &runs {
            starts.push(len);
            len += r.len();
        }
        let dim = match runs.first() {
            Some(Run::Constant { a, .. }) => a.nrows(),
            Some(Run::Explicit(v)) => v[0].nrows(),
            None => 0,
        };
        MatrixPath { runs, starts, len, dim }
    }

    pub fn constant(a: Mat, len: usize) -> Self {
        Self::from_runs(vec![Run::Constant { a, len }])
    }

    pub fn explicit(mats: Vec<Mat>) -> Self {
        Self::from_runs(vec![Run::Explicit(mats)])
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    fn locate(&self, j: usize) -> (usize, usize) {
        assert!(j < self.len, "step {j} outside path of length {}", self.len);
        let r = self.starts.partition_point(|&s| s <= j) - 1;
        (r, j - self.starts[r])
    }

    pub fn matrix(&self, j: usize) -> &Mat {
        let (r, off) = self.locate(j);
        match &self.runs[r] {
            Run::Constant { a, .. } => a,
            Run::Explicit(v) => &v[off],
        }
    }

    /// (start, end, is_constant) of the run containing step j.
    pub fn run_at(&self, j: usize) -> (usize, usize, bool) {
        let (r, _) = self.locate(j);
        let s = self.starts[r];
        (s, s + self.runs[r].len(), matches!(self.runs[r], Run::Constant { .. }))
    }

    /// The common matrix if every step uses the same one.
    pub fn as_constant(&self) -> Option<&Mat> {
        let first = match self.runs.first()? {
            Run::Constant { a, .. } => a,
            Run::Explicit(v) => &v[0],
        };
        let same = self.runs.iter().all(|r| match r {
            Run::Constant { a, .. } => a == first,
            Run::Explicit(v) => v.iter().all(|m| m == first),
        });
        same.then_some(first)
    }

    pub fn concat(&self, other: &MatrixPath) -> MatrixPath {
        let mut runs = self.runs.clone();
        runs.extend(other.runs.iter().cloned());
        Self::from_runs(runs)
    }

    /// Steps [start, end).
    pub fn slice(&self, start: usize, end: usize) -> MatrixPath {
        assert!(start <= end && end <= self.len);
        let mut out = Vec::new();
        for (r, run) in self.runs.iter().enumerate() {
            let s = self.starts[r];
            let e = s + run.len();
            let a = start.max(s);
            let b = end.min(e);
            if a >= b {
                continue;
            }
            out.push(match run {
                Run::Constant { a: m, .. } => Run::Constant { a: m.clone(), len: b - a },
                Run::Explicit(v) => Run::Explicit(v[a - s..b - s].to_vec()),
            });
        }
        Self::from_runs(out)
    }

    /// {A_{n−1}⁻¹, …, A_0⁻¹}.
    pub fn inverse(&self) -> Result<MatrixPath, linalg::LinalgError> {
        let inv = |m: &Mat| m.clone().try_inverse().ok_or(linalg::LinalgError::NonInvertible);
        let mut runs = Vec::with_capacity(self.runs.len());
        for run in self.runs.iter().rev() {
            runs.push(match run {
                Run::Constant { a, len } => Run::Constant { a: inv(a)?, len: *len },
                Run::Explicit(v) => Run::Explicit(v.iter().rev().map(inv).collect::<Result<_, _>>()?),
            });
        }
        Ok(Self::from_runs(runs))
    }

    fn distinct(&self) -> impl Iterator<Item = &Mat> {
        self.runs.iter().flat_map(|r| match r {
            Run::Constant { a, .. } => std::slice::from_ref(a).iter(),
            Run::Explicit(v) => v.iter(),
        })
    }

    /// sup_j ‖A_j‖.
    pub fn sup_norm(&self) -> f64 {
        self.distinct().map(linalg::op_norm).fold(0.0, f64::max)
    }

    /// sup_j ‖A_j⁻¹‖.
    pub fn sup_inv_norm(&self) -> f64 {
        self.distinct().map(|m| linalg::conorm(m).map(|c| 1.0 / c).unwrap_or(f64::INFINITY)).fold(0.0, f64::max)
    }

    /// Largest single-step ratio ‖A_j‖/m(A_j).
    pub fn sup_condition(&self) -> f64 {
        self.distinct()
            .map(|m| linalg::op_norm(m) / linalg::conorm(m).unwrap_or(0.0))
            .fold(0.0, f64::max)
    }

    /// Left-multiplies `fp` by A_{end−1}···A_start.
    pub fn push_into(&self, start: usize, end: usize, fp: &mut FactoredProduct) {
        if start >= end {
            return;
        }
        for (r, run) in self.runs.iter().enumerate() {
            let s = self.starts[r];
            let e = s + run.len();
            let a = start.max(s);
            let b = end.min(e);
            if a >= b {
                continue;
            }
            match run {
                Run::Constant { a: m, .. } => push_power(m, b - a, fp),
                Run::Explicit(v) => {
                    for m in &v[a - s..b - s] {
                        fp.push(m);
                    }
                }
            }
        }
    }

    /// Direction and log-norm of A_{end−1}···A_start v.
    pub fn apply(&self, start: usize, end: usize, v: &Vector) -> (Vector, f64) {
        let n = v.norm();
        let mut fp = FactoredProduct::from_frame(Mat::from_column_slice(v.len(), 1, (v / n).as_slice()));
        self.push_into(start, end, &mut fp);
        let sign = fp.r[(0, 0)].signum();
        (fp.q.column(0) * sign, fp.log_scale + fp.r[(0, 0)].abs().ln() + n.ln())
    }

    /// Dense product A_{end−1}···A_start (moderate lengths only).
    pub fn product(&self, start: usize, end: usize) -> Mat {
        let mut fp = FactoredProduct::identity(self.dim);
        self.push_into(start, end, &mut fp);
        fp.recompose()
    }
}

/// fp ← A^k fp via binary powering with normalized squares.
fn push_power(a: &Mat, k: usize, fp: &mut FactoredProduct) {
    if k <= POWERING_THRESHOLD {
        for _ in 0..k {
            fp.push(a);
        }
        return;
    }
    let mut sq = a.clone();
    let mut log_sq = 0.0;
    let mut k = k;
    while k > 0 {
        if k & 1 == 1 {
            fp.push_scaled(&sq, log_sq);
        }
        k >>= 1;
        if k > 0 {
            let next = &sq * &sq;
            let s = max_abs(&next);
            sq = next / s;
            log_sq = 2.0 * log_sq + s.ln();
        }
    }
}

/// States x_0..x_n, matrices A_0..A_{n−1} and factored partial products A^j.
#[derive(Debug, Clone)]
pub struct OrbitSegment {
    pub states: Vec<State>,
    pub matrices: Vec<Mat>,
    pub products: Vec<FactoredProduct>,
    pub group_tag: GroupTag,
}

impl OrbitSegment {
    /// Orbit segment over explicit matrices (states are step indices).
    pub fn from_matrices(matrices: Vec<Mat>, group_tag: GroupTag) -> Result<Self, DynamicsError> {
        if matrices.is_empty() {
            return Err(DynamicsError::EmptyOrbit);
        }
        let states = (0..=matrices.len()).map(|j| vec![j as f64]).collect();
        Self::assemble(states, matrices, group_tag)
    }

    fn assemble(states: Vec<State>, matrices: Vec<Mat>, group_tag: GroupTag) -> Result<Self, DynamicsError> {
        for (j, m) in matrices.iter().enumerate() {
            check_group(m, group_tag).map_err(|msg| DynamicsError::GroupViolation { step: j, msg })?;
        }
        let d = matrices[0].nrows();
        let mut products = Vec::with_capacity(matrices.len() + 1);
        let mut fp = FactoredProduct::identity(d);
        products.push(fp.clone());
        for m in &matrices {
            fp.push(m);
            products.push(fp.clone());
        }
        Ok(OrbitSegment { states, matrices, products, group_tag })
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    /// A^j = A_{j−1}···A_0 recomposed from the factored form.
    pub fn product(&self, j: usize) -> Mat {
        self.products[j].recompose()
    }

    pub fn path(&self) -> MatrixPath {
        MatrixPath::explicit(self.matrices.clone())
    }
}

pub fn orbit_segment(system: &BaseSystem, cocycle: &Cocycle, x: &State, n: usize) -> Result<OrbitSegment, DynamicsError> {
    if n == 0 {
        return Err(DynamicsError::EmptyOrbit);
    }
    system.validate(x)?;
    let mut states = Vec::with_capacity(n + 1);
    let mut matrices = Vec::with_capacity(n);
    let mut cur = x.clone();
    for _ in 0..n {
        matrices.push(cocycle.matrix(&cur));
        let next = system.step(&cur);
        states.push(cur);
        cur = next;
    }
    states.push(cur);
    OrbitSegment::assemble(states, matrices, cocycle.group_tag())
}

/// Streams A(x), A(f x), … without storing the orbit.
pub struct OrbitStream<'a> {
    system: &'a BaseSystem,
    cocycle: &'a Cocycle,
    state: State,
    backward: bool,
}

impl<'a> OrbitStream<'a> {
    pub fn forward(system: &'a BaseSystem, cocycle: &'a Cocycle, x: &State) -> Self {
        OrbitStream { system, cocycle, state: x.clone(), backward: false }
    }

    /// Yields A(f^{−1}x)⁻¹, A(f^{−2}x)⁻¹, …: the cocycle over f⁻¹.
    pub fn backward(system: &'a BaseSystem, cocycle: &'a Cocycle, x: &State) -> Self {
        OrbitStream { system, cocycle, state: x.clone(), backward: true }
    }

    pub fn state(&self) -> &State {
        &self.state
    }
}

impl Iterator for OrbitStream<'_> {
    type Item = Mat;

    fn next(&mut self) -> Option<Mat> {
        if self.backward {
            self.state = self.system.step_back(&self.state);
            let m = self.cocycle.matrix(&self.state);
            m.try_inverse()
        } else {
            let m = self.cocycle.matrix(&self.state);
            self.state = self.system.step(&self.state);
            Some(m)
        }
    }
}
