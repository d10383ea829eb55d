//! Experiment drivers behind each subcommand.

use super::config::{Command, ExperimentConfig};
use super::output::{self, jnum, num, Series};
use super::CliError;
use crate::domination::{self, PointClass};
use crate::dynamics::{orbit_segment, BaseSystem, Cocycle, OrbitSegment, State};
use crate::kernels::{self, Kernel, Region, VerifyOptions};
use crate::linalg::{Mat, Subspace, Vector};
use crate::lyapunov::{self, DEFAULT_CADENCE};
use crate::perturb::{self, PerturbBudget, PerturbError, PerturbedSequence};
use crate::sample;
use rayon::prelude::*;
use serde_json::{json, Value};
use std::path::PathBuf;

#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub exit_code: i32,
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    match cfg.command {
        Command::Spectrum => spectrum(cfg),
        Command::SchrodingerScan => schrodinger_scan(cfg),
        Command::Perturb => perturb_cmd(cfg),
        Command::KernelCheck => kernel_check(cfg),
        Command::Dominate => dominate(cfg),
        Command::Jump => jump(cfg),
    }
}

fn fmt_state(x: &[f64]) -> String {
    x.iter().map(|v| num(*v)).collect::<Vec<_>>().join(" ")
}

fn start_points(cfg: &ExperimentConfig, system: &BaseSystem, count: usize) -> Result<Vec<State>, CliError> {
    if let Some(x) = cfg.start_point(system)? {
        return Ok(vec![x]);
    }
    let mut rng = sample::rng(cfg.u64("seed")?);
    Ok(system.stratified_samples(count, &mut rng))
}

fn positive(cfg: &ExperimentConfig, key: &str) -> Result<usize, CliError> {
    let v = cfg.usize(key)?;
    if v == 0 {
        return Err(CliError::config(key, "must be positive"));
    }
    Ok(v)
}

fn index_p(cfg: &ExperimentConfig, d: usize) -> Result<usize, CliError> {
    let p = cfg.usize("p")?;
    if p == 0 || p >= d {
        return Err(CliError::config("p", format!("must lie in 1..{}", d - 1)));
    }
    Ok(p)
}

fn mean_se(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn spectrum(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let system = cfg.system()?;
    let cocycle = cfg.cocycle()?;
    let n = positive(cfg, "n")?;
    if n < DEFAULT_CADENCE {
        return Err(CliError::config("n", format!("must be at least {DEFAULT_CADENCE}")));
    }
    let starts = start_points(cfg, &system, positive(cfg, "samples")?)?;
    let ests = starts
        .par_iter()
        .map(|x| lyapunov::qr_spectrum(&system, &cocycle, x, n, DEFAULT_CADENCE))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::numeric)?;
    let d = cocycle.dim();
    let mut header: Vec<String> = vec!["sample_index".into(), "x".into()];
    header.extend((1..=d).map(|k| format!("lambda_{k}")));
    header.push("drift".into());
    let rows: Vec<Vec<String>> = ests
        .iter()
        .zip(&starts)
        .enumerate()
        .map(|(i, (e, x))| {
            let mut r = vec![i.to_string(), fmt_state(x)];
            r.extend(e.exponents.iter().map(|v| num(*v)));
            r.push(num(e.drift));
            r
        })
        .collect();
    let (means, ses): (Vec<f64>, Vec<f64>) = (0..d)
        .map(|k| {
            let vals: Vec<f64> = ests.iter().map(|e| e.exponents[k]).collect();
            if ests.len() == 1 {
                (vals[0], ests[0].stderr[k])
            } else {
                mean_se(&vals)
            }
        })
        .unzip();
    let max_drift = ests.iter().map(|e| e.drift).fold(0.0, f64::max);
    let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out = Outcome::default();
    out.files.push(output::write_csv(cfg, &hdr, &rows)?);
    out.files.push(output::write_json(
        cfg,
        json!({
            "dim": d,
            "horizon": n,
            "samples": ests.len(),
            "exponents_mean": means.iter().map(|v| jnum(*v)).collect::<Vec<_>>(),
            "exponents_stderr": ses.iter().map(|v| jnum(*v)).collect::<Vec<_>>(),
            "max_drift": jnum(max_drift),
        }),
    )?);
    if cfg.bool("svg")? {
        let series: Vec<Series> = (0..d)
            .map(|k| Series {
                name: format!("lambda_{}", k + 1),
                points: ests.iter().zip(&starts).map(|(e, x)| (x[0], e.exponents[k])).collect(),
                scatter: true,
            })
            .collect();
        let svg = output::svg_plot("Lyapunov exponents by start point", "x", "exponent", &series, &output::config_desc(cfg));
        out.files.push(output::write_svg(cfg, &svg)?);
    }
    Ok(out)
}

fn schrodinger_scan(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    if cfg.raw("cocycle") != "schrodinger" {
        return Err(CliError::config("cocycle", "schrodinger-scan needs cocycle = schrodinger"));
    }
    let system = cfg.system()?;
    let potential = cfg.potential()?;
    let energies = cfg.energies()?;
    let n = positive(cfg, "n")?;
    let samples = positive(cfg, "samples")?;
    let mmax = positive(cfg, "mmax")?;
    let seed = cfg.u64("seed")?;
    let threshold = cfg.f64("threshold")?;
    if n < 100 || mmax >= n {
        return Err(CliError::config("n", "need n >= 100 and mmax < n"));
    }
    let x0 = start_points(cfg, &system, 1)?.remove(0);
    let rows = energies
        .par_iter()
        .map(|&energy| {
            let cocycle = Cocycle::Schrodinger { energy, potential: potential.clone() };
            let est = lyapunov::qr_spectrum(&system, &cocycle, &x0, n, DEFAULT_CADENCE).map_err(CliError::numeric)?;
            let cls = domination::classify_points(&system, &cocycle, 1, mmax, samples, n, seed).map_err(CliError::numeric)?;
            let dominated = cls.dominated_fraction >= 1.0;
            let m = if dominated { cls.points.iter().filter_map(|r| r.m).max() } else { None };
            let lambda1 = est.exponents[0];
            Ok((energy, lambda1, dominated, m, cls.dominated_fraction, cls.gamma_fraction, lambda1 > threshold && !dominated))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.0),
                num(r.1),
                r.2.to_string(),
                r.3.map(|m| m.to_string()).unwrap_or_default(),
                num(r.4),
                num(r.5),
                r.6.to_string(),
            ]
        })
        .collect();
    let mut out = Outcome::default();
    out.files.push(output::write_csv(
        cfg,
        &["E", "lambda_1", "dominated", "m", "dominated_fraction", "gamma_fraction", "discontinuity_candidate"],
        &csv_rows,
    )?);
    let entries: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "E": jnum(r.0),
                "lambda_1": jnum(r.1),
                "dominated": r.2,
                "m": r.3,
                "dominated_fraction": jnum(r.4),
                "gamma_fraction": jnum(r.5),
                "discontinuity_candidate": r.6,
            })
        })
        .collect();
    let candidates = rows.iter().filter(|r| r.6).count();
    out.files.push(output::write_json(cfg, json!({ "rows": entries, "candidates": candidates }))?);
    if cfg.bool("svg")? {
        let series = vec![
            Series { name: "lambda_1".into(), points: rows.iter().map(|r| (r.0, r.1)).collect(), scatter: false },
            Series {
                name: "candidate".into(),
                points: rows.iter().filter(|r| r.6).map(|r| (r.0, r.1)).collect(),
                scatter: true,
            },
        ];
        let svg = output::svg_plot("Top exponent across energies", "E", "lambda_1", &series, &output::config_desc(cfg));
        out.files.push(output::write_svg(cfg, &svg)?);
    }
    Ok(out)
}

fn finite_lambda_p(seq: &PerturbedSequence, p: usize) -> f64 {
    let ls = seq.log_singular_values();
    ls.iter().take(p).sum::<f64>() / seq.len() as f64
}

/// Orbit long enough for the budget at this ε.
fn budgeted_orbit(
    system: &BaseSystem,
    cocycle: &Cocycle,
    x: &State,
    m_req: usize,
    eps: f64,
) -> Result<(OrbitSegment, PerturbBudget), CliError> {
    const MAX_LEN: usize = 5_000_000;
    let mut len = m_req.max(1);
    for _ in 0..8 {
        let orbit = orbit_segment(system, cocycle, x, len).map_err(CliError::numeric)?;
        let budget = PerturbBudget::for_path(&orbit.path(), eps).map_err(|e| match e {
            PerturbError::InvalidArgument(msg) => CliError::config("eps", msg),
            e => CliError::numeric(e),
        })?;
        let need = budget.m_min_steps().filter(|&m| m <= MAX_LEN).ok_or_else(|| {
            CliError::Numeric(format!("m_min = {} exceeds {MAX_LEN} steps; increase eps", budget.m_min))
        })?;
        if need <= len {
            return Ok((orbit, budget));
        }
        len = need;
    }
    Err(CliError::Numeric("budget did not stabilise".into()))
}

fn sequence_rows(seq: &PerturbedSequence) -> Vec<Vec<String>> {
    (0..seq.len())
        .map(|j| vec![j.to_string(), seq.provenance(j).label().to_string(), num(seq.distance(j))])
        .collect()
}

fn perturb_cmd(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    match cfg.raw("mode") {
        "interchange" => perturb_interchange(cfg),
        "lower-norm" => perturb_lower_norm(cfg),
        _ => Err(CliError::config("mode", "expected interchange or lower-norm")),
    }
}

fn perturb_interchange(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let system = cfg.system()?;
    let cocycle = cfg.cocycle()?;
    let d = cocycle.dim();
    let p = index_p(cfg, d)?;
    let eps = cfg.f64("eps")?;
    let x = start_points(cfg, &system, 1)?.remove(0);
    let (orbit, budget) = budgeted_orbit(&system, &cocycle, &x, cfg.usize("m")?, eps)?;
    let e = Subspace::coordinate(d, &(0..p).collect::<Vec<_>>());
    let f = Subspace::coordinate(d, &(p..d).collect::<Vec<_>>());
    let base = PerturbedSequence::from_orbit(&orbit, 0, eps);
    let unperturbed = finite_lambda_p(&base, p);
    let mut out = Outcome::default();
    let common = json!({
        "mode": "interchange",
        "x": x.iter().map(|v| jnum(*v)).collect::<Vec<_>>(),
        "m": orbit.len(),
        "budget": budget,
        "log_domination_ratio": jnum(perturb::log_domination_ratio(&orbit.path(), &e, &f)),
        "unperturbed_lambda_p": jnum(unperturbed),
    });
    match perturb::interchange_orbit(&orbit, &e, &f, &budget) {
        Ok(seq) => {
            let dominated: Vec<String> = seq.notes().iter().filter(|n| n.starts_with("dominated")).cloned().collect();
            out.warnings.extend(dominated.iter().cloned());
            out.files.push(output::write_csv(cfg, &["step", "provenance", "distance"], &sequence_rows(&seq))?);
            let mut body = common;
            body["status"] = json!(if dominated.is_empty() { "ok" } else { "dominated" });
            body["interchange"] = json!("succeeded");
            if let Some(note) = dominated.first() {
                body["note"] = json!(note);
            }
            body["summary"] = serde_json::to_value(seq.summary()).map_err(CliError::numeric)?;
            body["perturbed_lambda_p"] = jnum(finite_lambda_p(&seq, p));
            out.files.push(output::write_json(cfg, body)?);
        }
        Err(err @ PerturbError::Dominated { .. }) => {
            let msg = err.to_string();
            out.warnings.push(msg.clone());
            out.files.push(output::write_csv(cfg, &["step", "provenance", "distance"], &sequence_rows(&base))?);
            let mut body = common;
            body["status"] = json!("dominated");
            body["interchange"] = json!("failed");
            body["note"] = json!(msg);
            out.files.push(output::write_json(cfg, body)?);
        }
        Err(e) => return Err(CliError::numeric(e)),
    }
    Ok(out)
}

fn perturb_lower_norm(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let system = cfg.system()?;
    let cocycle = cfg.cocycle()?;
    let d = cocycle.dim();
    let p = index_p(cfg, d)?;
    let eps = cfg.f64("eps")?;
    let delta = cfg.f64("delta")?;
    let n = positive(cfg, "n")?;
    let probe = orbit_segment(&system, &cocycle, &start_points(cfg, &system, 1)?[0], n.min(1000)).map_err(CliError::numeric)?;
    let budget = PerturbBudget::for_path(&probe.path(), eps).map_err(CliError::numeric)?;
    let m = budget.m_min_steps().filter(|&m| m <= n).ok_or_else(|| {
        CliError::Numeric(format!("m_min = {} does not fit in n = {n}; increase eps or n", budget.m_min))
    })?;
    // the witness arc is centred in the orbit unless a start point is given
    let (x, ell) = match (cfg.witness(), cfg.start_point(&system)?, &system) {
        (Some(arc), None, BaseSystem::CircleRotation { alpha }) if arc < n => {
            let ell = (n - arc) / 2;
            (vec![(1.0 - ell as f64 * alpha + 0.5 * alpha).rem_euclid(1.0)], ell)
        }
        _ => (start_points(cfg, &system, 1)?.remove(0), (n - m) / 2),
    };
    let orbit = orbit_segment(&system, &cocycle, &x, n).map_err(CliError::numeric)?;
    let path = orbit.path();
    let budget = PerturbBudget::for_path(&path, eps).map_err(CliError::numeric)?;
    let rep = perturb::lower_norm_sequence(&path, orbit.group_tag, p, ell, &budget, delta).map_err(CliError::numeric)?;
    let mut out = Outcome::default();
    out.files.push(output::write_csv(cfg, &["step", "provenance", "distance"], &sequence_rows(&rep.sequence))?);
    let meets = rep.achieved <= rep.target;
    if !meets {
        out.warnings.push(format!("achieved exponent {} above target {}", rep.achieved, rep.target));
    }
    out.files.push(output::write_json(
        cfg,
        json!({
            "mode": "lower-norm",
            "status": "ok",
            "x": x.iter().map(|v| jnum(*v)).collect::<Vec<_>>(),
            "n": rep.n,
            "p": rep.p,
            "ell": rep.ell,
            "block_len": rep.block_len,
            "budget": budget,
            "achieved": jnum(rep.achieved),
            "achieved_direct": jnum(rep.achieved_direct),
            "unperturbed": jnum(rep.unperturbed),
            "finite_lambda": rep.finite_lambda.iter().map(|v| jnum(*v)).collect::<Vec<_>>(),
            "target": jnum(rep.target),
            "meets_target": meets,
            "v_component": jnum(rep.v_component),
            "block_norms": rep.block_norms,
            "summary": serde_json::to_value(rep.sequence.summary()).map_err(CliError::numeric)?,
        }),
    )?);
    Ok(out)
}

fn build_kernel(cfg: &ExperimentConfig) -> Result<Box<dyn Kernel>, CliError> {
    let eps = cfg.f64("eps")?;
    let sigma = cfg.f64("sigma")?;
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(CliError::config("sigma", "must lie in (0, 1)"));
    }
    let dim = cfg.usize("dim")?;
    let kind = cfg.raw("kernel");
    let symplectic = kind != "volume";
    if dim < 2 || (symplectic && dim % 2 != 0) {
        return Err(CliError::config("dim", "need dim >= 2, even for symplectic kernels"));
    }
    let q = dim / 2;
    let k: Box<dyn Kernel> = match kind {
        "volume" => Box::new(
            kernels::volume_kernel(kernels::CylinderSpec::standard(dim, 4.0, 1.0, sigma, eps)).map_err(CliError::numeric)?,
        ),
        "unitary" => {
            let args: Vec<f64> = (0..q).map(|k| eps * (k + 1) as f64 / q as f64).collect();
            let r = kernels::unitary_with_arguments(&Mat::identity(dim, dim), &args);
            Box::new(kernels::unitary_kernel(&r, sigma).map_err(CliError::numeric)?)
        }
        "composite" => {
            let args: Vec<f64> = (0..q).map(|k| if k % 2 == 0 { eps } else { -eps / 2.0 }).collect();
            let r = kernels::unitary_with_arguments(&Mat::identity(dim, dim), &args);
            let levels = if dim <= 2 { 8 } else { 5 };
            Box::new(kernels::composite_unitary_kernel(&r, sigma, levels).map_err(CliError::numeric)?)
        }
        "integrated" => {
            let mut y = Vector::zeros(dim);
            y[0] = 1.0;
            Box::new(
                kernels::symplectic_cylinder_kernel(&y, &Mat::identity(dim - 2, dim - 2), 2.0, 1.0, sigma, eps)
                    .map_err(CliError::numeric)?,
            )
        }
        _ => return Err(CliError::config("kernel", "expected volume, unitary, composite or integrated")),
    };
    Ok(k)
}

fn region_label(r: Region) -> &'static str {
    match r {
        Region::Outside => "outside",
        Region::Inner => "inner",
        Region::Transition => "transition",
    }
}

fn kernel_check(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let kernel = build_kernel(cfg)?;
    let opts = VerifyOptions { points: positive(cfg, "samples")?, seed: cfg.u64("seed")?, fd_step: Some(1e-5) };
    let checks = kernels::kernel_point_checks(kernel.as_ref(), opts).map_err(CliError::numeric)?;
    let report = kernels::summarize_checks(kernel.as_ref(), &checks);
    let rows: Vec<Vec<String>> = checks
        .iter()
        .enumerate()
        .map(|(i, c)| {
            vec![
                i.to_string(),
                fmt_state(&c.z),
                region_label(c.region).to_string(),
                num(c.det_error),
                num(c.jacobian_distance),
                num(c.displacement),
                num(c.support_error),
                num(c.fd_error),
                num(c.symplectic_residual),
            ]
        })
        .collect();
    let mut out = Outcome::default();
    out.files.push(output::write_csv(
        cfg,
        &[
            "point_index",
            "z",
            "region",
            "det_error",
            "jacobian_distance",
            "displacement",
            "support_error",
            "fd_error",
            "symplectic_residual",
        ],
        &rows,
    )?);
    let mut body = json!({ "kernel": cfg.raw("kernel"), "report": report });
    if cfg.raw("kernel") == "composite" {
        let eps = cfg.f64("eps")?;
        let dim = cfg.usize("dim")?;
        let q = dim / 2;
        let args: Vec<f64> = (0..q).map(|k| if k % 2 == 0 { eps } else { -eps / 2.0 }).collect();
        let r = kernels::unitary_with_arguments(&Mat::identity(dim, dim), &args);
        let levels = if dim <= 2 { 8 } else { 5 };
        let ck = kernels::composite_unitary_kernel(&r, cfg.f64("sigma")?, levels).map_err(CliError::numeric)?;
        body["volume_loss"] = serde_json::to_value(kernels::composite_volume_loss(&ck, opts.points, opts.seed))
            .map_err(CliError::numeric)?;
    }
    out.files.push(output::write_json(cfg, body)?);
    if report.support_violations > 0 {
        out.warnings.push(format!("{} support violations", report.support_violations));
        out.exit_code = 1;
    }
    Ok(out)
}

fn dominate(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let system = cfg.system()?;
    let cocycle = cfg.cocycle()?;
    let d = cocycle.dim();
    let p = index_p(cfg, d)?;
    let n = positive(cfg, "n")?;
    let mmax = positive(cfg, "mmax")?;
    if n < 100 || mmax >= n {
        return Err(CliError::config("n", "need n >= 100 and mmax < n"));
    }
    let x = start_points(cfg, &system, 1)?.remove(0);
    let split = lyapunov::oseledets_splitting(&system, &cocycle, &x, n, None).map_err(CliError::numeric)?;
    let (e, f) = split
        .split_at_dim(p)
        .ok_or_else(|| CliError::Numeric(format!("no spectral gap after index {p} at this point")))?;
    let orbit = orbit_segment(&system, &cocycle, &x, n).map_err(CliError::numeric)?;
    let verdict = domination::min_domination_m(&orbit, &e, &f, mmax).map_err(CliError::numeric)?;
    let m = verdict.unwrap_or(mmax);
    let rep = domination::domination_test(&orbit, &e, &f, m, n - mmax).map_err(CliError::numeric)?;
    let rows: Vec<Vec<String>> = rep.ratios.iter().enumerate().map(|(i, r)| vec![i.to_string(), num(*r)]).collect();
    let mut out = Outcome::default();
    out.files.push(output::write_csv(cfg, &["window", "ratio"], &rows)?);
    out.files.push(output::write_json(
        cfg,
        json!({
            "x": x.iter().map(|v| jnum(*v)).collect::<Vec<_>>(),
            "p": p,
            "exponents": split.exponents.iter().map(|v| jnum(*v)).collect::<Vec<_>>(),
            "verdict_m": verdict,
            "tested_m": m,
            "windows": rep.windows,
            "max_ratio": jnum(rep.max_ratio),
            "min_angle": jnum(rep.min_angle),
        }),
    )?);
    if cfg.bool("svg")? {
        let series = vec![Series {
            name: format!("log10 ratio, m = {m}"),
            points: rep.ratios.iter().enumerate().map(|(i, r)| (i as f64, r.log10())).collect(),
            scatter: false,
        }];
        let svg = output::svg_plot("Domination ratio by window", "window start", "log10 ratio", &series, &output::config_desc(cfg));
        out.files.push(output::write_svg(cfg, &svg)?);
    }
    Ok(out)
}

fn jump(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let system = cfg.system()?;
    let cocycle = cfg.cocycle()?;
    let p = index_p(cfg, cocycle.dim())?;
    let n = positive(cfg, "n")?;
    let mmax = positive(cfg, "mmax")?;
    let samples = positive(cfg, "samples")?;
    let seed = cfg.u64("seed")?;
    let est = domination::jump_estimate(&system, &cocycle, p, mmax, samples, n, seed).map_err(CliError::numeric)?;
    let class_label = |c: PointClass| match c {
        PointClass::DominatedLike => "dominated",
        PointClass::GammaLike => "gamma",
        PointClass::Unresolved => "unresolved",
    };
    let rows: Vec<Vec<String>> = est
        .classification
        .points
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                i.to_string(),
                fmt_state(&r.x),
                class_label(r.class).to_string(),
                num(r.gap),
                num(r.resolution),
                r.m.map(|m| m.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    let mut out = Outcome::default();
    out.files.push(output::write_csv(cfg, &["sample_index", "x", "class", "gap", "resolution", "m"], &rows)?);
    let c = &est.classification;
    out.files.push(output::write_json(
        cfg,
        json!({
            "p": p,
            "jump": jnum(est.value),
            "gamma_fraction": jnum(est.gamma_fraction),
            "mean_half_gap": jnum(est.mean_half_gap),
            "dominated_fraction": jnum(c.dominated_fraction),
            "unresolved_fraction": jnum(c.unresolved_fraction),
            "samples": c.points.len(),
        }),
    )?);
    Ok(out)
}
