//! Run configuration: bracketed sections of `key = value` lines, plus
//! command-line overrides of the form `section.key=value`.

use std::fmt;

use toml::{Table, Value};

use crate::model::{ModelParams, VelocityLaw};

/// Every accepted key, with a one-line description for `--help`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("model", "ell", "car length (required)"),
    ("model", "v", "speed limit, default 1"),
    ("model", "law", "\"linear\" (default) or \"poly\""),
    (
        "model",
        "coeffs",
        "poly law: phi(rho) = sum c_k rho^k, needs phi(0)=1, phi(1)=0",
    ),
    (
        "model",
        "c0_hat",
        "poly law: declared bound -phi' >= c0_hat",
    ),
    (
        "model",
        "c0_unit",
        "poly law: declared bound -(rho phi)'' >= c0_unit",
    ),
    ("problem", "rho_minus", "left state"),
    ("problem", "rho_plus", "right state"),
    (
        "problem",
        "conjugate",
        "true: derive rho_plus from rho_minus",
    ),
    (
        "problem",
        "pairs",
        "bvp batch: [[rho_minus, rho_plus], ...]",
    ),
    (
        "solver",
        "h",
        "profile step, default min(ell/128, 0.1/lambda_plus)",
    ),
    ("solver", "x_hat", "profile-solve: tail anchor, default 0"),
    (
        "solver",
        "delta",
        "profile-solve: tail amplitude at the anchor, default 0.2",
    ),
    ("solver", "span", "distance solved left of each anchor"),
    ("solver", "plateau_tol", "plateau stopping tolerance"),
    (
        "solver",
        "bvp_tol",
        "sequence convergence tolerance, default 1e-6",
    ),
    (
        "solver",
        "delta0",
        "bvp: tail amplitude at the first anchor, default 0.2",
    ),
    ("solver", "anchors", "bvp: explicit anchors [x_0, x_1, ...]"),
    (
        "solver",
        "n_anchors",
        "bvp: number of default anchors, default 8",
    ),
    ("solver", "dt", "time step, default 0.1 ell / V"),
    ("solver", "t_end", "simulation horizon"),
    ("solver", "periods", "simulation horizon in periods"),
    ("solver", "stride", "save every stride-th step"),
    ("solver", "n_back", "cars behind the origin"),
    ("solver", "n_fwd", "cars ahead of the origin"),
    (
        "solver",
        "margin",
        "stability: admissible density margin, default 1e-6",
    ),
    ("solver", "ells", "compare-macro: car lengths of the sweep"),
    (
        "solver",
        "epsilon",
        "compare-macro: viscosity, default V ell / 2",
    ),
    (
        "solver",
        "window",
        "compare-macro: [x_lo, x_hi], default [-10, 10]",
    ),
    (
        "solver",
        "samples",
        "compare-macro: grid points, default 2001",
    ),
    ("run", "out", "output directory, default \"out\""),
    (
        "run",
        "input",
        "figures: directory holding the CSVs, default the output directory",
    ),
    ("run", "eps", "perturbation size, default 0.02"),
    (
        "run",
        "pattern",
        "\"dipole\" (default), \"bump\", \"seeded\" or \"none\"",
    ),
    ("run", "seed", "seed for the \"seeded\" pattern, default 1"),
    ("run", "sigma", "moving-frame wave speed fraction"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type CResult<T> = std::result::Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> CResult<T> {
    Err(ConfigError(msg.into()))
}

/// Parsed configuration: the original text, the overrides and the merged table.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub source: String,
    pub overrides: Vec<String>,
    table: Table,
}

impl RunConfig {
    pub fn parse(text: &str) -> CResult<Self> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError(one_line(&e.to_string())))?;
        let cfg = Self {
            source: text.to_string(),
            overrides: vec![],
            table,
        };
        cfg.validate_keys()?;
        Ok(cfg)
    }

    /// Applies `section.key=value`; the value is read as a TOML value, or as a string otherwise.
    pub fn set(&mut self, spec: &str) -> CResult<()> {
        let (path, raw) = spec
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("override `{spec}` is not section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| ConfigError(format!("override key `{path}` is not section.key")))?;
        let raw = raw.trim();
        let value = match format!("v = {raw}").parse::<Table>() {
            Ok(mut t) => t.remove("v").unwrap(),
            Err(_) => Value::String(raw.to_string()),
        };
        let entry = self
            .table
            .entry(section.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        match entry {
            Value::Table(t) => {
                t.insert(key.to_string(), value);
            }
            _ => return err(format!("`{section}` is not a section")),
        }
        self.overrides.push(spec.to_string());
        self.validate_keys()
    }

    fn validate_keys(&self) -> CResult<()> {
        for (section, v) in &self.table {
            let t = match v {
                Value::Table(t) => t,
                _ => return err(format!("top-level key `{section}` must be a section")),
            };
            if !KEYS.iter().any(|(s, _, _)| s == section) {
                return err(format!("unknown section [{section}]"));
            }
            for key in t.keys() {
                if !KEYS.iter().any(|(s, k, _)| s == section && k == key) {
                    return err(format!("unknown key {section}.{key}"));
                }
            }
        }
        Ok(())
    }

    /// Merged configuration as `key = value` text with sorted keys.
    pub fn effective(&self) -> String {
        self.table.to_string()
    }

    fn get(&self, section: &str, key: &str) -> Option<&Value> {
        self.table
            .get(section)
            .and_then(|s| s.as_table())
            .and_then(|t| t.get(key))
    }

    pub fn has(&self, section: &str, key: &str) -> bool {
        self.get(section, key).is_some()
    }

    pub fn f64_opt(&self, section: &str, key: &str) -> CResult<Option<f64>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(Value::Float(v)) => Ok(Some(*v)),
            Some(Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(v) => err(format!("{section}.{key} must be a number, got {v}")),
        }
    }

    pub fn f64_req(&self, section: &str, key: &str) -> CResult<f64> {
        self.f64_opt(section, key)?
            .ok_or_else(|| ConfigError(format!("{key} required")))
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> CResult<f64> {
        Ok(self.f64_opt(section, key)?.unwrap_or(default))
    }

    /// A number that must be positive when present.
    pub fn pos_opt(&self, section: &str, key: &str) -> CResult<Option<f64>> {
        match self.f64_opt(section, key)? {
            Some(v) if !(v > 0.0 && v.is_finite()) => {
                err(format!("{section}.{key} must be positive, got {v}"))
            }
            other => Ok(other),
        }
    }

    pub fn usize_opt(&self, section: &str, key: &str) -> CResult<Option<usize>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(Value::Integer(v)) if *v >= 0 => Ok(Some(*v as usize)),
            Some(v) => err(format!(
                "{section}.{key} must be a nonnegative integer, got {v}"
            )),
        }
    }

    pub fn u64_or(&self, section: &str, key: &str, default: u64) -> CResult<u64> {
        Ok(self
            .usize_opt(section, key)?
            .map(|v| v as u64)
            .unwrap_or(default))
    }

    pub fn bool_or(&self, section: &str, key: &str, default: bool) -> CResult<bool> {
        match self.get(section, key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(v) => err(format!("{section}.{key} must be true or false, got {v}")),
        }
    }

    pub fn str_opt(&self, section: &str, key: &str) -> CResult<Option<String>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => err(format!("{section}.{key} must be a string, got {v}")),
        }
    }

    pub fn f64_list(&self, section: &str, key: &str) -> CResult<Option<Vec<f64>>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Float(x) => Ok(*x),
                    Value::Integer(x) => Ok(*x as f64),
                    other => err(format!(
                        "{section}.{key} entries must be numbers, got {other}"
                    )),
                })
                .collect::<CResult<Vec<f64>>>()
                .map(Some),
            Some(v) => err(format!("{section}.{key} must be an array, got {v}")),
        }
    }

    pub fn pairs(&self) -> CResult<Option<Vec<(f64, f64)>>> {
        let Some(v) = self.get("problem", "pairs") else {
            return Ok(None);
        };
        let arr = v
            .as_array()
            .ok_or_else(|| ConfigError("problem.pairs must be an array of pairs".into()))?;
        let mut out = Vec::with_capacity(arr.len());
        for item in arr {
            let pair: Vec<f64> = item
                .as_array()
                .map(|a| {
                    a.iter()
                        .filter_map(|x| x.as_float().or_else(|| x.as_integer().map(|i| i as f64)))
                        .collect()
                })
                .unwrap_or_default();
            if pair.len() != 2 {
                return err(format!(
                    "problem.pairs entry {item} is not [rho_minus, rho_plus]"
                ));
            }
            out.push((pair[0], pair[1]));
        }
        Ok(Some(out))
    }

    pub fn model(&self) -> CResult<ModelParams> {
        let ell = self.f64_req("model", "ell")?;
        let v = self.f64_or("model", "v", 1.0)?;
        let law = match self.str_opt("model", "law")?.as_deref().unwrap_or("linear") {
            "linear" => VelocityLaw::Linear,
            "poly" => poly_law(
                self.f64_list("model", "coeffs")?
                    .ok_or_else(|| ConfigError("coeffs required".into()))?,
                self.f64_req("model", "c0_hat")?,
                self.f64_req("model", "c0_unit")?,
            )?,
            other => {
                return err(format!(
                    "model.law must be \"linear\" or \"poly\", got \"{other}\""
                ))
            }
        };
        ModelParams::new(ell, v, law).map_err(|e| ConfigError(e.to_string()))
    }

    /// `(rho_minus, rho_plus)` with the conjugate option applied.
    pub fn states(&self, params: &ModelParams) -> CResult<(f64, f64)> {
        let rm = self.f64_req("problem", "rho_minus")?;
        if self.bool_or("problem", "conjugate", false)? {
            let rp = params
                .conjugate_density(rm)
                .map_err(|e| ConfigError(e.to_string()))?;
            return Ok((rm, rp));
        }
        Ok((rm, self.f64_req("problem", "rho_plus")?))
    }
}

fn poly_law(coeffs: Vec<f64>, c0_hat: f64, c0_unit: f64) -> CResult<VelocityLaw> {
    VelocityLaw::polynomial(coeffs, c0_hat, c0_unit).map_err(|e| ConfigError(e.to_string()))
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Key reference printed after `--help`.
pub fn help_text() -> String {
    let mut out = String::from("Config keys (section.key):\n");
    for (s, k, d) in KEYS {
        out.push_str(&format!("  {:<22} {d}\n", format!("{s}.{k}")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const REF: &str = "[model]\nell = 0.5\nv = 1\n\n[problem]\nrho_minus = 0.3\nrho_plus = 0.7\n";

    #[test]
    fn parse_and_override() {
        let mut c = RunConfig::parse(REF).unwrap();
        assert_eq!(c.f64_req("model", "ell").unwrap(), 0.5);
        assert_eq!(c.f64_req("model", "v").unwrap(), 1.0);
        c.set("solver.anchors=[0.0, 0.7]").unwrap();
        c.set("run.pattern=bump").unwrap();
        c.set("model.ell = 0.1").unwrap();
        assert_eq!(
            c.f64_list("solver", "anchors").unwrap(),
            Some(vec![0.0, 0.7])
        );
        assert_eq!(
            c.str_opt("run", "pattern").unwrap().as_deref(),
            Some("bump")
        );
        assert_eq!(c.model().unwrap().ell, 0.1);
        assert!(c.effective().contains("ell = 0.1"));
    }

    #[test]
    fn errors_are_single_line() {
        let c = RunConfig::parse("[model]\nell = 0.5\n[problem]\nrho_minus = 0.3\n").unwrap();
        assert_eq!(
            c.states(&c.model().unwrap()).unwrap_err().0,
            "rho_plus required"
        );
        assert!(RunConfig::parse("[model]\nel = 1\n")
            .unwrap_err()
            .0
            .contains("unknown key model.el"));
        assert!(RunConfig::parse("[x]\n").is_err());
        let e = RunConfig::parse("[model\nell = ").unwrap_err().0;
        assert!(!e.contains('\n'));
        let mut c = RunConfig::parse(REF).unwrap();
        assert!(c.set("ell=1").is_err());
        assert!(c.set("model.ell").is_err());
        c.set("model.ell=\"a\"").unwrap();
        assert!(c.model().is_err());
    }

    #[test]
    fn conjugate_and_poly() {
        let c = RunConfig::parse(
            "[model]\nell = 0.2\nlaw = \"poly\"\ncoeffs = [1.0, 0.0, -1.0]\nc0_hat = 0.0\nc0_unit = 2.0\n[problem]\nrho_minus = 0.2\nconjugate = true\npairs = [[0.1, 0.9], [0.2, 0.8]]\n",
        )
        .unwrap();
        let p = c.model().unwrap();
        assert!((p.law.value(0.5) - 0.75).abs() < 1e-15);
        assert!((p.law.deriv(0.5) + 1.0).abs() < 1e-15);
        let (rm, rp) = c.states(&p).unwrap();
        assert!((p.flux(rm).unwrap() - p.flux(rp).unwrap()).abs() < 1e-12);
        assert_eq!(c.pairs().unwrap().unwrap(), vec![(0.1, 0.9), (0.2, 0.8)]);
        let bad = RunConfig::parse(
            "[model]\nell = 0.2\nlaw = \"poly\"\ncoeffs = [1.0, -0.5]\nc0_hat = 0\nc0_unit = 0\n",
        )
        .unwrap();
        assert!(bad.model().is_err());
    }
}
