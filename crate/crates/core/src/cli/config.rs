//! Experiment configuration: key = value files merged with command-line flags.

use super::CliError;
use crate::dynamics::{shear_rotate_witness, BaseSystem, Cocycle, Potential};
use crate::linalg::{GroupTag, Mat, SquareMatrix};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Spectrum,
    SchrodingerScan,
    Perturb,
    KernelCheck,
    Dominate,
    Jump,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::SchrodingerScan => "schrodinger-scan",
            Command::Perturb => "perturb",
            Command::KernelCheck => "kernel-check",
            Command::Dominate => "dominate",
            Command::Jump => "jump",
        }
    }
}

/// Keys accepted in config files and through --set.
pub const KEYS: &[&str] = &[
    "system", "cocycle", "E", "V", "lambda", "n", "m", "p", "eps", "delta", "samples", "seed", "mmax", "out", "svg",
    "x", "mode", "kernel", "sigma", "dim", "threshold",
];

fn defaults(cmd: Command) -> Vec<(&'static str, &'static str)> {
    let mut d = vec![
        ("system", "rotation"),
        ("cocycle", "schrodinger"),
        ("E", "3"),
        ("V", "zero"),
        ("lambda", "1"),
        ("p", "1"),
        ("seed", "0"),
        ("out", "out"),
        ("svg", "false"),
    ];
    let extra: &[(&str, &str)] = match cmd {
        Command::Spectrum => &[("n", "100000"), ("samples", "1")],
        Command::SchrodingerScan => &[("E", "0:4:41"), ("n", "20000"), ("samples", "4"), ("mmax", "50"), ("threshold", "0.05")],
        Command::Perturb => &[("n", "3000"), ("m", "0"), ("eps", "3"), ("delta", "0.05"), ("mode", "interchange"), ("x", "auto")],
        Command::KernelCheck => &[("kernel", "volume"), ("eps", "0.01"), ("sigma", "0.9"), ("dim", "4"), ("samples", "10000")],
        Command::Dominate => &[("n", "2000"), ("mmax", "50"), ("x", "auto")],
        Command::Jump => &[("n", "2000"), ("mmax", "50"), ("samples", "16")],
    };
    for (k, v) in extra {
        if let Some(slot) = d.iter_mut().find(|(key, _)| key == k) {
            slot.1 = v;
        } else {
            d.push((k, v));
        }
    }
    d
}

/// Parses a key = value file. Blank lines and lines starting with '#' are skipped.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("line {}", i + 1), "expected key = value"))?;
        let k = k.trim();
        check_key(k)?;
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn check_key(k: &str) -> Result<(), CliError> {
    if KEYS.contains(&k) {
        Ok(())
    } else {
        Err(CliError::config(k, "unknown key"))
    }
}

/// Resolved configuration: defaults, then the file, then flags.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub command: Command,
    pub values: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn resolve(
        command: Command,
        file: BTreeMap<String, String>,
        flags: BTreeMap<String, String>,
    ) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> =
            defaults(command).into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for (k, v) in file.into_iter().chain(flags) {
            check_key(&k)?;
            values.insert(k, v);
        }
        let cfg = ExperimentConfig { command, values };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        for k in ["n", "m", "p", "samples", "seed", "mmax", "dim"] {
            if self.values.contains_key(k) {
                self.usize(k)?;
            }
        }
        for k in ["eps", "delta", "lambda", "sigma", "threshold"] {
            if self.values.contains_key(k) {
                self.f64(k)?;
            }
        }
        self.bool("svg")?;
        self.system()?;
        self.cocycle()?;
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        let v: f64 = self.raw(key).parse().map_err(|_| CliError::config(key, "expected a number"))?;
        if !v.is_finite() {
            return Err(CliError::config(key, "must be finite"));
        }
        Ok(v)
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        self.raw(key).parse().map_err(|_| CliError::config(key, "expected a non-negative integer"))
    }

    pub fn u64(&self, key: &str) -> Result<u64, CliError> {
        self.raw(key).parse().map_err(|_| CliError::config(key, "expected a non-negative integer"))
    }

    pub fn bool(&self, key: &str) -> Result<bool, CliError> {
        match self.raw(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" | "" => Ok(false),
            _ => Err(CliError::config(key, "expected true or false")),
        }
    }

    /// Energies: a single value, a comma list, or start:end:count.
    pub fn energies(&self) -> Result<Vec<f64>, CliError> {
        let raw = self.raw("E");
        let bad = || CliError::config("E", "expected a number, a comma list or start:end:count");
        let out: Vec<f64> = if let Some((a, rest)) = raw.split_once(':') {
            let (b, k) = rest.split_once(':').ok_or_else(bad)?;
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            let k: usize = k.trim().parse().map_err(|_| bad())?;
            if k == 0 {
                return Err(bad());
            }
            if k == 1 {
                vec![a]
            } else {
                (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect()
            }
        } else {
            raw.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_, _>>()?
        };
        if out.iter().any(|e| !e.is_finite()) {
            return Err(bad());
        }
        if out.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::config("E", "energy grid must be increasing"));
        }
        Ok(out)
    }

    pub fn potential(&self) -> Result<Potential, CliError> {
        match self.raw("V") {
            "zero" | "0" => Ok(Potential::Zero),
            "cosine" => Ok(Potential::Cosine { lambda: self.f64("lambda")? }),
            _ => Err(CliError::config("V", "expected zero or cosine")),
        }
    }

    fn witness_arc(&self) -> Result<Option<usize>, CliError> {
        match self.raw("cocycle").split_once(':') {
            Some(("witness", arc)) => {
                let arc: usize = arc.parse().map_err(|_| CliError::config("cocycle", "witness arc must be an integer"))?;
                if arc == 0 {
                    return Err(CliError::config("cocycle", "witness arc must be positive"));
                }
                Ok(Some(arc))
            }
            _ => Ok(None),
        }
    }

    pub fn system(&self) -> Result<BaseSystem, CliError> {
        if let Some(arc) = self.witness_arc()? {
            return Ok(shear_rotate_witness(arc).0);
        }
        let raw = self.raw("system");
        let bad = |msg: &str| CliError::config("system", msg);
        let (kind, arg) = raw.split_once(':').map(|(a, b)| (a, Some(b))).unwrap_or((raw, None));
        match kind {
            "rotation" => {
                let alpha = match arg {
                    Some(a) => a.parse().map_err(|_| bad("rotation angle must be a number"))?,
                    None => (5f64.sqrt() - 1.0) / 2.0,
                };
                Ok(BaseSystem::CircleRotation { alpha })
            }
            "torus" => {
                let shift = parse_list(arg.ok_or_else(|| bad("torus needs a shift vector"))?)
                    .map_err(|_| bad("torus shift must be a comma list of numbers"))?;
                Ok(BaseSystem::TorusTranslation { shift })
            }
            "cat" => Ok(BaseSystem::CatMap),
            "symbolic" => {
                let len: usize = arg.and_then(|a| a.parse().ok()).ok_or_else(|| bad("symbolic needs a length"))?;
                if len == 0 {
                    return Err(bad("symbolic length must be positive"));
                }
                Ok(BaseSystem::Symbolic { len })
            }
            _ => Err(bad("expected rotation[:alpha], torus:a,b, cat or symbolic:len")),
        }
    }

    pub fn cocycle(&self) -> Result<Cocycle, CliError> {
        if let Some(arc) = self.witness_arc()? {
            return Ok(shear_rotate_witness(arc).1);
        }
        let raw = self.raw("cocycle");
        let bad = |msg: &str| CliError::config("cocycle", msg);
        let (kind, arg) = raw.split_once(':').map(|(a, b)| (a, Some(b))).unwrap_or((raw, None));
        let mat = match kind {
            "schrodinger" => {
                let e = self.energies()?;
                return Ok(Cocycle::Schrodinger { energy: e[0], potential: self.potential()? });
            }
            "constant" => {
                let rows: Vec<Vec<f64>> = arg
                    .ok_or_else(|| bad("constant needs rows like 2,0;0,0.5"))?
                    .split(';')
                    .map(parse_list)
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("matrix entries must be numbers"))?;
                let d = rows.len();
                if d == 0 || rows.iter().any(|r| r.len() != d) {
                    return Err(bad("matrix must be square"));
                }
                Mat::from_fn(d, d, |i, j| rows[i][j])
            }
            "diag" => {
                let v = parse_list(arg.ok_or_else(|| bad("diag needs entries"))?).map_err(|_| bad("diag entries must be numbers"))?;
                Mat::from_diagonal(&crate::linalg::Vector::from_vec(v))
            }
            "identity" => {
                let d: usize = arg.and_then(|a| a.parse().ok()).unwrap_or(2);
                Mat::identity(d, d)
            }
            "rotation" => {
                let t: f64 = arg.and_then(|a| a.parse().ok()).ok_or_else(|| bad("rotation needs an angle"))?;
                crate::sample::rotation(2, 0, 1, t)
            }
            _ => return Err(bad("expected schrodinger, constant:rows, diag:entries, identity:d, rotation:angle or witness:arc")),
        };
        if mat.nrows() < 2 {
            return Err(bad("matrix must be at least 2x2"));
        }
        let tag = if (mat.determinant() - 1.0).abs() <= 1e-9 { GroupTag::SpecialLinear } else { GroupTag::GeneralLinear };
        let sq = SquareMatrix::new(mat, tag).map_err(|e| bad(&e.to_string()))?;
        Ok(Cocycle::Constant(sq))
    }

    /// Start point: explicit comma list, or `auto`/absent for the first stratified sample.
    pub fn start_point(&self, system: &BaseSystem) -> Result<Option<Vec<f64>>, CliError> {
        match self.raw("x") {
            "" | "auto" => Ok(None),
            s => {
                let x = parse_list(s).map_err(|_| CliError::config("x", "expected a comma list of numbers"))?;
                system.validate(&x).map_err(|e| CliError::config("x", &e.to_string()))?;
                Ok(Some(x))
            }
        }
    }

    pub fn witness(&self) -> Option<usize> {
        self.witness_arc().ok().flatten()
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, std::num::ParseFloatError> {
    s.split(',').map(|t| t.trim().parse::<f64>()).collect()
}
