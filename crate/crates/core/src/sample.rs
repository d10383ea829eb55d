//! Seeded random generators for matrices and subspaces.

use crate::linalg::{project_special_linear, Mat, Subspace, SymplecticForm, Vector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vector {
    Vector::from_fn(d, |_, _| standard_normal(rng))
}

pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vector {
    let v = gaussian_vector(rng, d);
    let n = v.norm();
    v / n
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Mat {
    Mat::from_fn(d, d, |_, _| standard_normal(rng))
}

/// Entries uniform in [−1, 1].
pub fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Mat {
    Mat::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0))
}

/// Random invertible matrix with condition number at most `max_cond`.
pub fn invertible_matrix<R: Rng + ?Sized>(rng: &mut R, d: usize, max_cond: f64) -> Mat {
    loop {
        let m = gaussian_matrix(rng, d);
        let s = crate::linalg::singular_values(&m);
        if s[d - 1] > 0.0 && s[0] / s[d - 1] <= max_cond {
            return m;
        }
    }
}

pub fn special_linear<R: Rng + ?Sized>(rng: &mut R, d: usize, max_cond: f64) -> Mat {
    let mut m = invertible_matrix(rng, d, max_cond);
    if m.determinant() < 0.0 {
        let c = -m.column(0);
        m.set_column(0, &c);
    }
    project_special_linear(&m)
}

pub fn orthogonal<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Mat {
    let qr = gaussian_matrix(rng, d).qr();
    let q = qr.q();
    let r = qr.r();
    let mut q = q;
    for i in 0..d {
        if r[(i, i)] < 0.0 {
            let c = -q.column(i);
            q.set_column(i, &c);
        }
    }
    q
}

pub fn rotation(d: usize, i: usize, j: usize, t: f64) -> Mat {
    let mut r = Mat::identity(d, d);
    r[(i, i)] = t.cos();
    r[(j, j)] = t.cos();
    r[(i, j)] = -t.sin();
    r[(j, i)] = t.sin();
    r
}

pub fn subspace<R: Rng + ?Sized>(rng: &mut R, d: usize, k: usize) -> Subspace {
    loop {
        let cols = Mat::from_fn(d, k, |_, _| standard_normal(rng));
        if let Ok(s) = Subspace::from_columns(&cols) {
            return s;
        }
    }
}

/// Random unitary matrix of ℂ^q seen as an orthogonal symplectic map of ℝ^{2q}.
pub fn unitary<R: Rng + ?Sized>(rng: &mut R, q: usize) -> Mat {
    // exp of a random skew-Hermitian generator, via a product of
    // complex-line rotations and coordinate phases.
    let mut u = Mat::identity(2 * q, 2 * q);
    for _ in 0..2 * q {
        let a = rng.random_range(0..q);
        let b = rng.random_range(0..q);
        let t = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let g = if a == b {
            phase(q, a, t)
        } else {
            // real rotation mixing z_a and z_b
            let mut g = Mat::identity(2 * q, 2 * q);
            for off in [0, q] {
                g[(a + off, a + off)] = t.cos();
                g[(b + off, b + off)] = t.cos();
                g[(a + off, b + off)] = -t.sin();
                g[(b + off, a + off)] = t.sin();
            }
            g
        };
        u = g * u;
    }
    u
}

/// Multiplication of z_k by e^{it}.
pub fn phase(q: usize, k: usize, t: f64) -> Mat {
    rotation(2 * q, k, q + k, t)
}

/// Random symplectic matrix: product of symmetric shears, a block
/// diag(A, A^{-T}) and a unitary factor.
pub fn symplectic<R: Rng + ?Sized>(rng: &mut R, q: usize, scale: f64) -> Mat {
    let d = 2 * q;
    let shear = |rng: &mut R, upper: bool| {
        let mut s = Mat::from_fn(q, q, |_, _| scale * standard_normal(rng));
        s = (&s + s.transpose()) * 0.5;
        let mut m = Mat::identity(d, d);
        if upper {
            m.view_mut((0, q), (q, q)).copy_from(&s);
        } else {
            m.view_mut((q, 0), (q, q)).copy_from(&s);
        }
        m
    };
    let (a, a_inv_t) = loop {
        let a = Mat::identity(q, q) + Mat::from_fn(q, q, |_, _| 0.5 * scale * standard_normal(rng));
        let s = crate::linalg::singular_values(&a);
        if s[q - 1] > 1e-3 * s[0] {
            let inv = a.clone().try_inverse().expect("well-conditioned");
            break (a, inv.transpose());
        }
    };
    let mut blk = Mat::zeros(d, d);
    blk.view_mut((0, 0), (q, q)).copy_from(&a);
    blk.view_mut((q, q), (q, q)).copy_from(&a_inv_t);
    let m = shear(rng, true) * blk * shear(rng, false) * unitary(rng, q);
    debug_assert!(SymplecticForm::new(q).residual(&m) < 1e-8 * (1.0 + crate::linalg::max_abs(&m)).powi(2));
    m
}
