//! Lyapunov spectra (discrete QR method), integrated exponents and
//! numerical Oseledets splittings.

use crate::dynamics::{BaseSystem, Cocycle, DynamicsError, FactoredProduct, OrbitStream, State};
use crate::linalg::{self, exterior_power, LinalgError, Mat, Subspace, Vector};
use crate::sample;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_CADENCE: usize = 10;
pub const DEFAULT_SAMPLES: usize = 64;
/// Lower bound on the clustering tolerance when the standard error vanishes.
pub const MIN_CLUSTER_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LyapunovError {
    #[error("cadence too large: product overflowed before re-orthonormalization")]
    CadenceTooLarge,
    #[error("unresolved multiplicity")]
    UnresolvedMultiplicity,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, LyapunovError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovEstimate {
    /// λ_1 ≥ … ≥ λ_d in nats per iterate.
    pub exponents: Vec<f64>,
    /// Batch-means standard error of each exponent.
    pub stderr: Vec<f64>,
    pub horizon: usize,
    pub cadence: usize,
    /// Largest change of the running estimate over the last 10% of iterations.
    pub drift: f64,
}

impl LyapunovEstimate {
    /// Λ_p = λ_1 + … + λ_p.
    pub fn partial_sum(&self, p: usize) -> f64 {
        self.exponents[..p].iter().sum()
    }
}

const BATCHES: usize = 10;

/// Discrete QR method over an explicit matrix stream.
pub fn qr_spectrum_stream<I>(mats: I, d: usize, n: usize, cadence: usize) -> Result<LyapunovEstimate>
where
    I: IntoIterator<Item = Mat>,
{
    if cadence == 0 || n < cadence {
        return Err(LyapunovError::InvalidArgument(format!("need n ≥ cadence ≥ 1 (n = {n}, cadence = {cadence})")));
    }
    let mut q = Mat::identity(d, d);
    let mut block = q.clone();
    let mut sums = vec![0.0; d];
    // (iterations done, sums) at every re-orthonormalization
    let mut checkpoints: Vec<(usize, Vec<f64>)> = Vec::with_capacity(n / cadence + 2);
    let mut it = mats.into_iter();
    for j in 0..n {
        let a = it.next().ok_or(LyapunovError::InvalidArgument("matrix stream ended early".into()))?;
        block = a * block;
        if (j + 1) % cadence == 0 || j + 1 == n {
            if !linalg::is_finite(&block) {
                return Err(LyapunovError::CadenceTooLarge);
            }
            let qr = block.qr();
            let r = qr.r();
            for i in 0..d {
                let v = r[(i, i)].abs();
                if !(v > 0.0) {
                    return Err(LyapunovError::CadenceTooLarge);
                }
                sums[i] += v.ln();
            }
            q = qr.q();
            block = q.clone();
            checkpoints.push((j + 1, sums.clone()));
        }
    }
    let nf = n as f64;
    let raw: Vec<f64> = sums.iter().map(|s| s / nf).collect();

    let tail_start = n - n / 10;
    let mut drift: f64 = 0.0;
    for (t, s) in checkpoints.iter().filter(|(t, _)| *t >= tail_start) {
        for i in 0..d {
            drift = drift.max((s[i] / *t as f64 - raw[i]).abs());
        }
    }

    let mut stderr = vec![0.0; d];
    if checkpoints.len() >= BATCHES {
        let mut bounds = vec![(0usize, vec![0.0; d])];
        for b in 1..=BATCHES {
            let idx = (b * checkpoints.len()) / BATCHES - 1;
            bounds.push(checkpoints[idx].clone());
        }
        for i in 0..d {
            let vals: Vec<f64> = bounds
                .windows(2)
                .map(|w| (w[1].1[i] - w[0].1[i]) / (w[1].0 - w[0].0) as f64)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
            stderr[i] = (var / vals.len() as f64).sqrt();
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| raw[b].partial_cmp(&raw[a]).unwrap());
    Ok(LyapunovEstimate {
        exponents: order.iter().map(|&i| raw[i]).collect(),
        stderr: order.iter().map(|&i| stderr[i]).collect(),
        horizon: n,
        cadence,
        drift,
    })
}

pub fn qr_spectrum(system: &BaseSystem, cocycle: &Cocycle, x: &State, n: usize, cadence: usize) -> Result<LyapunovEstimate> {
    system.validate(x)?;
    qr_spectrum_stream(OrbitStream::forward(system, cocycle, x), cocycle.dim(), n, cadence)
}

/// log‖∧^p A^n(x)‖ at each requested n (ascending), from one forward pass.
pub fn log_exterior_norms(system: &BaseSystem, cocycle: &Cocycle, x: &State, p: usize, ns: &[usize]) -> Vec<f64> {
    let d = cocycle.dim();
    let mut fp = FactoredProduct::identity(d);
    let mut out = Vec::with_capacity(ns.len());
    let mut stream = OrbitStream::forward(system, cocycle, x);
    let mut done = 0;
    for &n in ns {
        while done < n {
            fp.push(&stream.next().expect("forward stream is infinite"));
            done += 1;
        }
        out.push(linalg::op_norm(&exterior_power(&fp.r, p)).ln() + p as f64 * fp.log_scale);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegratedEstimate {
    pub p: usize,
    pub samples: usize,
    /// (n, a_n/n, standard error) for each horizon, ascending in n.
    pub sequence: Vec<(usize, f64, f64)>,
}

impl IntegratedEstimate {
    pub fn value_at(&self, n: usize) -> Option<f64> {
        self.sequence.iter().find(|s| s.0 == n).map(|s| s.1)
    }
}

/// Monte Carlo estimate of (1/n)∫ log‖∧^p A^n‖ dμ for every n in `ns`,
/// using the same stratified start points for all horizons.
pub fn integrated_sequence(
    system: &BaseSystem,
    cocycle: &Cocycle,
    p: usize,
    ns: &[usize],
    samples: usize,
    seed: u64,
) -> Result<IntegratedEstimate> {
    let d = cocycle.dim();
    if p == 0 || p >= d {
        return Err(LyapunovError::InvalidArgument(format!("p = {p} outside 1..{d}")));
    }
    if samples == 0 || ns.is_empty() || ns.contains(&0) {
        return Err(LyapunovError::InvalidArgument("need samples ≥ 1 and horizons ≥ 1".into()));
    }
    let mut ns_sorted = ns.to_vec();
    ns_sorted.sort_unstable();
    ns_sorted.dedup();
    let mut rng = sample::rng(seed);
    let starts = system.stratified_samples(samples, &mut rng);
    let per_sample: Vec<Vec<f64>> = starts.par_iter().map(|x| log_exterior_norms(system, cocycle, x, p, &ns_sorted)).collect();
    let sequence = ns_sorted
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let vals: Vec<f64> = per_sample.iter().map(|v| v[k] / n as f64).collect();
            let mean = vals.iter().sum::<f64>() / samples as f64;
            let se = if samples > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ((samples - 1) * samples) as f64).sqrt()
            } else {
                0.0
            };
            (n, mean, se)
        })
        .collect();
    Ok(IntegratedEstimate { p, samples, sequence })
}

/// Integrated exponent at n, reported together with n/2 and n/4.
pub fn integrated_exponent(
    system: &BaseSystem,
    cocycle: &Cocycle,
    p: usize,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<IntegratedEstimate> {
    let ns: Vec<usize> = [n / 4, n / 2, n].into_iter().filter(|&k| k > 0).collect();
    integrated_sequence(system, cocycle, p, &ns, samples, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OseledetsApprox {
    /// E^1, …, E^k in order of decreasing exponent.
    pub spaces: Vec<Subspace>,
    /// λ̂_1 > … > λ̂_k (group means).
    pub exponents: Vec<f64>,
    pub multiplicities: Vec<usize>,
    pub cluster_tol: f64,
    pub estimate: LyapunovEstimate,
}

impl OseledetsApprox {
    pub fn k(&self) -> usize {
        self.spaces.len()
    }

    /// Sum of the spaces with indices in `range`.
    pub fn sum(&self, range: std::ops::Range<usize>) -> Result<Subspace> {
        let mut it = self.spaces[range].iter();
        let mut acc = it.next().ok_or(LyapunovError::InvalidArgument("empty range".into()))?.clone();
        for s in it {
            acc = acc.sum(s)?;
        }
        Ok(acc)
    }

    /// Fast space of dimension p and its slow complement in the splitting,
    /// when p falls on a group boundary.
    pub fn split_at_dim(&self, p: usize) -> Option<(Subspace, Subspace)> {
        let mut acc = 0;
        for (j, m) in self.multiplicities.iter().enumerate() {
            acc += m;
            if acc == p && j + 1 < self.k() {
                return Some((self.sum(0..j + 1).ok()?, self.sum(j + 1..self.k()).ok()?));
            }
        }
        None
    }
}

/// Groups sorted exponents whose consecutive gaps are at most `tol`.
pub fn cluster(exponents: &[f64], tol: f64) -> Vec<usize> {
    let mut mult = Vec::new();
    let mut count = 0;
    for (i, &l) in exponents.iter().enumerate() {
        if i > 0 && exponents[i - 1] - l > tol {
            mult.push(count);
            count = 0;
        }
        count += 1;
    }
    if count > 0 {
        mult.push(count);
    }
    mult
}

/// Orthonormal frame whose leading r columns approximate the top-r right
/// singular space of the product C_{n−1}···C_0 (adjoint push from the far end).
fn right_singular_flag(mats: &[Mat], d: usize) -> Mat {
    // generic start frame, so that diagonal cocycles still get sorted
    let mut fp = FactoredProduct::from_frame(sample::orthogonal(&mut sample::rng(0x5eed), d));
    for m in mats.iter().rev() {
        fp.push(&m.transpose());
    }
    fp.q
}

pub fn oseledets_splitting(
    system: &BaseSystem,
    cocycle: &Cocycle,
    x: &State,
    horizon: usize,
    cluster_tol: Option<f64>,
) -> Result<OseledetsApprox> {
    if horizon < 100 {
        return Err(LyapunovError::InvalidArgument(format!("horizon {horizon} below 100")));
    }
    system.validate(x)?;
    let d = cocycle.dim();
    let forward: Vec<Mat> = OrbitStream::forward(system, cocycle, x).take(horizon).collect();
    let backward: Vec<Mat> = OrbitStream::backward(system, cocycle, x).take(horizon).collect();
    if backward.len() < horizon {
        return Err(LinalgError::NonInvertible.into());
    }
    let estimate = qr_spectrum_stream(forward.iter().cloned(), d, horizon, DEFAULT_CADENCE.min(horizon))?;
    let tol = cluster_tol.unwrap_or_else(|| default_cluster_tol(&estimate));
    let multiplicities = cluster(&estimate.exponents, tol);

    let fwd = right_singular_flag(&forward, d);
    let bwd = right_singular_flag(&backward, d);
    let k = multiplicities.len();
    let mut spaces = Vec::with_capacity(k);
    let mut exps = Vec::with_capacity(k);
    let mut r_prev = 0;
    for &mj in &multiplicities {
        let r = r_prev + mj;
        exps.push(estimate.exponents[r_prev..r].iter().sum::<f64>() / mj as f64);
        let space = if k == 1 {
            Subspace::whole(d)
        } else {
            let mut w = Mat::zeros(d, d - mj);
            w.columns_mut(0, r_prev).copy_from(&fwd.columns(0, r_prev));
            w.columns_mut(r_prev, d - r).copy_from(&bwd.columns(0, d - r));
            let s = linalg::singular_values(&w);
            if s.last().copied().unwrap_or(1.0) < 1e-12 {
                return Err(LyapunovError::UnresolvedMultiplicity);
            }
            Subspace::from_columns(&w)
                .map_err(|_| LyapunovError::UnresolvedMultiplicity)?
                .complement()
                .ok_or(LyapunovError::UnresolvedMultiplicity)?
        };
        spaces.push(space);
        r_prev = r;
    }
    let mut all = Mat::zeros(d, d);
    let mut c = 0;
    for s in &spaces {
        all.columns_mut(c, s.dim()).copy_from(s.basis());
        c += s.dim();
    }
    if linalg::singular_values(&all)[d - 1] <= 1e-10 {
        return Err(LyapunovError::UnresolvedMultiplicity);
    }
    Ok(OseledetsApprox { spaces, exponents: exps, multiplicities, cluster_tol: tol, estimate })
}

pub fn default_cluster_tol(est: &LyapunovEstimate) -> f64 {
    let se = est.stderr.iter().copied().fold(0.0, f64::max);
    (10.0 * se).max(MIN_CLUSTER_TOL)
}

/// Top exponent of the cocycle ∧^p A along the orbit of x.
pub fn exterior_top_exponent(system: &BaseSystem, cocycle: &Cocycle, x: &State, p: usize, n: usize) -> f64 {
    let d = cocycle.dim();
    let dim = linalg::combinations(d, p).len();
    // generic start vector
    let mut v = Vector::from_fn(dim, |i, _| 1.0 + 0.1 * i as f64 + 0.01 * ((i * i) as f64).sin());
    v /= v.norm();
    let fixed = cocycle.constant_matrix().map(|m| exterior_power(m, p));
    let mut log = 0.0;
    let mut stream = OrbitStream::forward(system, cocycle, x);
    for _ in 0..n {
        let a = stream.next().expect("forward stream is infinite");
        let w = match &fixed {
            Some(m) => m * &v,
            None => exterior_power(&a, p) * &v,
        };
        let nw = w.norm();
        log += nw.ln();
        v = w / nw;
    }
    log / n as f64
}

/// (Λ_p from the QR spectrum, top exponent of ∧^p A).
pub fn exterior_consistency(system: &BaseSystem, cocycle: &Cocycle, x: &State, p: usize, horizon: usize) -> Result<(f64, f64)> {
    let d = cocycle.dim();
    if p == 0 || p > d {
        return Err(LyapunovError::InvalidArgument(format!("p = {p} outside 1..={d}")));
    }
    let est = qr_spectrum(system, cocycle, x, horizon, DEFAULT_CADENCE.min(horizon))?;
    Ok((est.partial_sum(p), exterior_top_exponent(system, cocycle, x, p, horizon)))
}

/// (1/n)(log sin∠_n − log sin∠_0) for each Oseledets space against the sum
/// of the others, comparing the splittings at x and at f^n(x).
pub fn angle_decay_rate(system: &BaseSystem, cocycle: &Cocycle, x: &State, horizon: usize) -> Result<Vec<f64>> {
    let flag_horizon = horizon.clamp(100, 1000);
    let s0 = oseledets_splitting(system, cocycle, x, flag_horizon, None)?;
    let mut y = x.clone();
    for _ in 0..horizon {
        y = system.step(&y);
    }
    let sn = oseledets_splitting(system, cocycle, &y, flag_horizon, Some(s0.cluster_tol))?;
    if sn.multiplicities != s0.multiplicities {
        return Err(LyapunovError::UnresolvedMultiplicity);
    }
    let k = s0.k();
    if k == 1 {
        return Ok(vec![0.0]);
    }
    let sin_against_rest = |s: &OseledetsApprox, j: usize| -> Result<f64> {
        let mut rest: Option<Subspace> = None;
        for (i, e) in s.spaces.iter().enumerate() {
            if i != j {
                rest = Some(match rest {
                    None => e.clone(),
                    Some(r) => r.sum(e)?,
                });
            }
        }
        Ok(linalg::sin_principal_angle(&s.spaces[j], &rest.unwrap()))
    };
    (0..k)
        .map(|j| {
            let a0 = sin_against_rest(&s0, j)?;
            let an = sin_against_rest(&sn, j)?;
            Ok((an.ln() - a0.ln()) / horizon as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{GroupTag, SquareMatrix};

    fn constant(m: Mat, tag: GroupTag) -> Cocycle {
        Cocycle::Constant(SquareMatrix::new(m, tag).unwrap())
    }

    fn diag(v: &[f64]) -> Mat {
        Mat::from_diagonal(&Vector::from_column_slice(v))
    }

    fn circle() -> BaseSystem {
        BaseSystem::CircleRotation { alpha: (5f64.sqrt() - 1.0) / 2.0 }
    }

    #[test]
    fn rotation_and_diagonal_spectra() {
        let r = constant(crate::sample::rotation(2, 0, 1, 0.7), GroupTag::SpecialLinear);
        let e = qr_spectrum(&circle(), &r, &vec![0.0], 10_000, 10).unwrap();
        assert!(e.exponents.iter().all(|l| l.abs() < 1e-9));
        let dg = constant(diag(&[2.0, 0.5]), GroupTag::SpecialLinear);
        let e = qr_spectrum(&circle(), &dg, &vec![0.0], 10_000, 10).unwrap();
        assert!((e.exponents[0] - 2f64.ln()).abs() < 1e-12);
        assert!((e.exponents[1] + 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cadence_overflow_detected() {
        let dg = constant(diag(&[1e100, 1e100]), GroupTag::GeneralLinear);
        assert_eq!(
            qr_spectrum(&circle(), &dg, &vec![0.0], 100, 10).unwrap_err(),
            LyapunovError::CadenceTooLarge
        );
    }

    #[test]
    fn clustering() {
        assert_eq!(cluster(&[1.0, 0.99, 0.0, -1.0], 0.05), vec![2, 1, 1]);
        assert_eq!(cluster(&[0.0, 0.0], 1e-6), vec![2]);
    }

    #[test]
    fn diagonal_splitting_is_coordinate_axes() {
        let dg = constant(diag(&[2.0, 1.0, 0.5]), GroupTag::SpecialLinear);
        let s = oseledets_splitting(&circle(), &dg, &vec![0.1], 200, None).unwrap();
        assert_eq!(s.multiplicities, vec![1, 1, 1]);
        for (j, e) in s.spaces.iter().enumerate() {
            assert!(linalg::principal_angle(e, &Subspace::coordinate(3, &[j])) < 1e-10);
        }
        assert!((s.exponents[0] - 2f64.ln()).abs() < 1e-10);
        assert!(s.exponents[1].abs() < 1e-10);
    }

    #[test]
    fn rotation_splitting_is_trivial() {
        let r = constant(crate::sample::rotation(2, 0, 1, 0.3), GroupTag::SpecialLinear);
        let s = oseledets_splitting(&circle(), &r, &vec![0.1], 200, None).unwrap();
        assert_eq!(s.multiplicities, vec![2]);
        assert_eq!(s.spaces[0].dim(), 2);
    }

    #[test]
    fn conjugated_splitting_matches_eigenvectors() {
        let s = Mat::from_row_slice(2, 2, &[1.0, 0.4, 0.3, 1.0]);
        let m = &s * diag(&[2.0, 0.5]) * s.clone().try_inverse().unwrap();
        let c = constant(m, GroupTag::GeneralLinear);
        let sp = oseledets_splitting(&circle(), &c, &vec![0.2], 200, None).unwrap();
        for j in 0..2 {
            let col = Subspace::line(&s.column(j).into_owned()).unwrap();
            assert!(linalg::principal_angle(&sp.spaces[j], &col) < 1e-6);
        }
    }

    #[test]
    fn exterior_consistency_on_diagonal() {
        let k = 6f64.powf(1.0 / 3.0);
        let dg = constant(diag(&[3.0 / k, 2.0 / k, 1.0 / k]), GroupTag::SpecialLinear);
        let (a, b) = exterior_consistency(&circle(), &dg, &vec![0.0], 2, 1000).unwrap();
        let expected = 6f64.ln() / 3.0;
        assert!((a - expected).abs() < 1e-10 && (b - expected).abs() < 1e-3);
    }

    #[test]
    fn integrated_constant_cases() {
        let dg = constant(diag(&[2.0, 0.5]), GroupTag::SpecialLinear);
        let est = integrated_exponent(&circle(), &dg, 1, 40, 8, 3).unwrap();
        for (_, v, _) in &est.sequence {
            assert!((v - 2f64.ln()).abs() < 1e-12);
        }
        let r = constant(crate::sample::rotation(2, 0, 1, 0.3), GroupTag::SpecialLinear);
        let est = integrated_exponent(&circle(), &r, 1, 40, 8, 3).unwrap();
        assert!(est.sequence.iter().all(|s| s.1.abs() < 1e-12));
    }

    #[test]
    fn angle_rate_zero_for_constant() {
        let dg = constant(diag(&[2.0, 0.5]), GroupTag::SpecialLinear);
        let r = angle_decay_rate(&circle(), &dg, &vec![0.0], 1000).unwrap();
        assert!(r.iter().all(|x| x.abs() < 1e-12));
    }
}
