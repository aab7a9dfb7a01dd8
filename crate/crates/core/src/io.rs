//! Scenario files, deterministic JSON/CSV output and content hashes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha1::{Digest, Sha1};

use crate::central_config::{CentralConfigOptions, CentralConfigResult, ClusterCentral};
use crate::error::{Error, Result};
use crate::model::{Configuration, MassSystem};
use crate::minimize::SolveOptions;
use crate::reference::{MotionClass, ScenarioSpec};
use crate::spectral::SpectralOptions;
use crate::value::{Slice, ValueOptions};

/// `%.17g`-style rendering: 17 significant digits, trailing zeros removed,
/// exponent form when the decimal exponent is below −4 or at least 17.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let e = format!("{v:.16e}");
    let (mant, exp) = e.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    let neg = mant.starts_with('-');
    let digits: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    let digits = digits.trim_end_matches('0');
    let digits = if digits.is_empty() { "0" } else { digits };
    let sign = if neg { "-" } else { "" };
    if !(-4..17).contains(&exp) {
        let (h, t) = digits.split_at(1);
        let m = if t.is_empty() { h.to_string() } else { format!("{h}.{t}") };
        let es = if exp < 0 { "-" } else { "+" };
        return format!("{sign}{m}e{es}{:02}", exp.abs());
    }
    let s = if exp >= 0 {
        let ip = (exp + 1) as usize;
        if digits.len() <= ip {
            format!("{digits}{}", "0".repeat(ip - digits.len()))
        } else {
            format!("{}.{}", &digits[..ip], &digits[ip..])
        }
    } else {
        format!("0.{}{digits}", "0".repeat((-exp - 1) as usize))
    };
    format!("{sign}{s}")
}

struct G17;

impl serde_json::ser::Formatter for G17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> std::io::Result<()> {
        if v.is_finite() {
            let s = fmt_f64(v);
            // keep integral floats recognizable as numbers with a fraction
            if s.contains(['.', 'e']) {
                w.write_all(s.as_bytes())
            } else {
                write!(w, "{s}.0")
            }
        } else {
            w.write_all(b"null")
        }
    }
}

/// Recursively sorts object keys.
fn canonical(v: Value) -> Value {
    match v {
        Value::Object(m) => {
            let sorted: BTreeMap<String, Value> = m.into_iter().map(|(k, v)| (k, canonical(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonical).collect()),
        other => other,
    }
}

/// Deterministic pretty JSON: sorted keys, `%.17g` floats, non-finite as `null`.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Internal(e.to_string()))?;
    let v = canonical(v);
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PrettyG17::default());
    v.serialize(&mut ser).map_err(|e| Error::Internal(e.to_string()))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("json is utf-8"))
}

/// Pretty printer that delegates float rendering to [`G17`].
#[derive(Default)]
struct PrettyG17 {
    inner: serde_json::ser::PrettyFormatter<'static>,
}

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {
        $(fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> std::io::Result<()> {
            self.inner.$name(w $(, $arg)*)
        })*
    };
}

impl serde_json::ser::Formatter for PrettyG17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> std::io::Result<()> {
        G17.write_f64(w, v)
    }
    delegate!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        end_object_key(),
        begin_object_value(),
        end_object_value(),
    );
}

/// Git blob hash: SHA-1 of `"blob <len>\0" + content`, lowercase hex.
pub fn git_blob_sha1(content: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub const SCHEMA_VERSION: u32 = 1;

/// Solver options carried by a scenario file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Mesh elements per decade of time.
    pub nodes_per_decade: usize,
    /// Working horizon; `None` picks a class default.
    pub horizon: Option<f64>,
    pub tol_grad: f64,
    pub tol_horizon: f64,
    /// Relative action gap under which two minimizers count as co-minimal.
    pub tol_action: f64,
    pub tol_hj: f64,
    pub r_min: f64,
    pub h_fd: f64,
    pub restarts: usize,
    pub seed: u64,
    pub restart_sigma: f64,
    pub cluster_tol: f64,
    pub central_restarts: usize,
    pub spectral: SpectralOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            nodes_per_decade: 128,
            horizon: None,
            tol_grad: 1e-8,
            tol_horizon: 1e-6,
            tol_action: 1e-6,
            tol_hj: 1e-3,
            r_min: 1e-3,
            h_fd: 1e-4,
            restarts: 8,
            seed: 0,
            restart_sigma: 0.05,
            cluster_tol: 0.0,
            central_restarts: 32,
            spectral: SpectralOptions::default(),
        }
    }
}

impl SolverOptions {
    pub fn solve_options(&self, kind: MotionClass) -> SolveOptions {
        let mut o = SolveOptions::for_class(kind);
        if let Some(h) = self.horizon {
            o.horizon = h;
        }
        o.nodes_per_decade = self.nodes_per_decade;
        o.tol_horizon = self.tol_horizon;
        o.tol_action = self.tol_action;
        o.restarts = self.restarts;
        o.seed = self.seed;
        o.restart_sigma = self.restart_sigma;
        o.opt.tol_grad = self.tol_grad;
        o
    }

    pub fn value_options(&self, kind: MotionClass) -> ValueOptions {
        let mut o = ValueOptions::for_class(kind);
        o.solve = self.solve_options(kind);
        o.spectral = self.spectral.clone();
        o.spectral.seed = self.seed;
        o.r_min = self.r_min;
        o
    }
}

/// On-disk scenario description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub dim: usize,
    pub masses: Vec<f64>,
    pub kind: MotionClass,
    /// Asymptotic velocities, one row per body (omitted or zero for parabolic).
    #[serde(default)]
    pub a: Option<Vec<Vec<f64>>>,
    /// Initial configuration at `t = 1`; defaults to `r₀(1)`.
    #[serde(default)]
    pub x0: Option<Vec<Vec<f64>>>,
    /// Optional normalized minimal central configuration (parabolic only).
    #[serde(default)]
    pub b_m: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub solver: SolverOptions,
}

fn rows_to_flat(rows: &[Vec<f64>], ms: &MassSystem, what: &str) -> Result<Vec<f64>> {
    if rows.len() != ms.n_bodies() || rows.iter().any(|r| r.len() != ms.dim()) {
        return Err(Error::Validation(format!("`{what}` must have {} rows of length {}", ms.n_bodies(), ms.dim())));
    }
    Ok(Configuration::from_rows(rows)?.into_vec())
}

impl ScenarioFile {
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let f: ScenarioFile =
            serde_json::from_str(text).map_err(|e| Error::Parse { path: path.into(), msg: e.to_string() })?;
        if f.schema_version != SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                f.schema_version
            )));
        }
        Ok(f)
    }

    /// Builds the scenario; computes central configurations when needed.
    pub fn to_spec(&self) -> Result<ScenarioSpec> {
        let ms = MassSystem::new(self.dim, self.masses.clone()).map_err(|e| Error::Validation(e.to_string()))?;
        let x0 = self.x0.as_ref().map(|r| rows_to_flat(r, &ms, "x0")).transpose()?;
        let a = self.a.as_ref().map(|r| rows_to_flat(r, &ms, "a")).transpose()?;
        let cc = CentralConfigOptions {
            restarts: self.solver.central_restarts,
            seed: self.solver.seed,
            ..Default::default()
        };
        match self.kind {
            MotionClass::Hyperbolic => {
                let a = a.ok_or_else(|| Error::Validation("hyperbolic scenarios need `a`".into()))?;
                let x0 = x0.unwrap_or_else(|| a.clone());
                ScenarioSpec::hyperbolic(ms, a, x0)
            }
            MotionClass::Parabolic => {
                if a.as_ref().is_some_and(|a| a.iter().any(|v| *v != 0.0)) {
                    return Err(Error::Validation("parabolic scenarios need a = 0".into()));
                }
                match &self.b_m {
                    Some(b) => {
                        let b = rows_to_flat(b, &ms, "b_m")?;
                        let kkt = crate::central_config::kkt_residual(&ms, &b)?;
                        let norm = crate::model::mass_inner(&ms, &b, &b)?;
                        if (norm - 1.0).abs() > 1e-9 || kkt > 1e-8 {
                            return Err(Error::Validation(format!(
                                "`b_m` is not a normalized central configuration (norm {norm}, KKT residual {kkt:e})"
                            )));
                        }
                        let u = crate::potential::u_value(&ms, &b)?;
                        let n = ms.n_bodies();
                        let result = CentralConfigResult {
                            b_m: Configuration::from_flat(ms.dim(), b)?,
                            u_min: u,
                            beta: crate::central_config::beta_from_u(u),
                            kkt_residual: kkt,
                            restart: 0,
                            converged_restarts: 1,
                            hits: 1,
                        };
                        ScenarioSpec::parabolic_with_shape(ms, ClusterCentral { bodies: (0..n).collect(), result }, x0)
                    }
                    None => ScenarioSpec::parabolic(ms, x0, &cc),
                }
            }
            MotionClass::HyperbolicParabolic => {
                let a = a.ok_or_else(|| Error::Validation("hyperbolic-parabolic scenarios need `a`".into()))?;
                ScenarioSpec::hyperbolic_parabolic(ms, a, x0, self.solver.cluster_tol, &cc)
            }
        }
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<(ScenarioSpec, ScenarioFile)> {
    let text = std::fs::read_to_string(path)?;
    let file = ScenarioFile::parse(&text, &path.display().to_string())?;
    let spec = file.to_spec()?;
    Ok((spec, file))
}

/// Closed interval sampled at `n` uniform points.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

/// On-disk 2-D slice: rows per body, like scenario configurations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceFile {
    /// Defaults to the scenario's `x0`.
    #[serde(default)]
    pub center: Option<Vec<Vec<f64>>>,
    pub e1: Vec<Vec<f64>>,
    pub e2: Vec<Vec<f64>>,
    pub s1: AxisRange,
    pub s2: AxisRange,
}

impl SliceFile {
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { path: path.into(), msg: e.to_string() })
    }

    pub fn to_slice(&self, spec: &ScenarioSpec) -> Result<Slice> {
        let center = match &self.center {
            Some(r) => rows_to_flat(r, &spec.ms, "center")?,
            None => spec.x0.clone(),
        };
        let e1 = rows_to_flat(&self.e1, &spec.ms, "e1")?;
        let e2 = rows_to_flat(&self.e2, &spec.ms, "e2")?;
        for r in [self.s1, self.s2] {
            if !(r.min.is_finite() && r.max.is_finite()) || r.min > r.max {
                return Err(Error::Validation(format!("invalid slice range [{}, {}]", r.min, r.max)));
            }
        }
        Ok(Slice::uniform(center, e1, e2, (self.s1.min, self.s1.max, self.s1.n), (self.s2.min, self.s2.max, self.s2.n)))
    }
}

pub fn load_slice(path: &Path, spec: &ScenarioSpec) -> Result<Slice> {
    let text = std::fs::read_to_string(path)?;
    SliceFile::parse(&text, &path.display().to_string())?.to_slice(spec)
}

/// Writes canonical JSON and returns its git-style hash.
pub fn save_result<T: Serialize>(path: &Path, value: &T) -> Result<String> {
    let text = to_canonical_json(value)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, &text)?;
    Ok(git_blob_sha1(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_formatting() {
        assert_eq!(fmt_f64(1.0), "1");
        assert_eq!(fmt_f64(0.5), "0.5");
        assert_eq!(fmt_f64(0.1), "0.10000000000000001");
        assert_eq!(fmt_f64(-2.5e-7), "-2.4999999999999999e-07");
        assert_eq!(fmt_f64(1e17), "1e+17");
        assert_eq!(fmt_f64(123456.0), "123456");
        assert_eq!(fmt_f64(0.0001), "0.0001");
        assert_eq!(fmt_f64(f64::NAN), "nan");
    }

    #[test]
    fn canonical_json_is_sorted_and_stable() {
        #[derive(Serialize)]
        struct S {
            z: f64,
            a: Vec<f64>,
            m: BTreeMap<String, f64>,
            bad: f64,
        }
        let s = S { z: 1.0, a: vec![0.25, 1e-9], m: [("y".into(), 2.0), ("b".into(), 3.5)].into(), bad: f64::NAN };
        let j = to_canonical_json(&s).unwrap();
        assert!(j.find("\"a\"").unwrap() < j.find("\"z\"").unwrap());
        assert!(j.contains("\"bad\": null"));
        assert!(j.contains("1.0000000000000001e-09"));
        assert!(j.contains("\"z\": 1.0"));
        assert_eq!(j, to_canonical_json(&s).unwrap());
    }

    #[test]
    fn git_hash_matches_known_value() {
        // `printf 'hello\n' | git hash-object --stdin`
        assert_eq!(git_blob_sha1(b"hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
        assert_eq!(git_blob_sha1(b""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    }

    #[test]
    fn scenario_round_trip_and_validation() {
        let text = r#"{"schema_version": 1, "dim": 2, "masses": [1, 1], "kind": "hyperbolic",
                       "a": [[1, 0], [-1, 0]], "solver": {"restarts": 4}}"#;
        let f = ScenarioFile::parse(text, "mem").unwrap();
        let spec = f.to_spec().unwrap();
        assert_eq!(spec.x0, vec![1.0, 0.0, -1.0, 0.0]);
        assert_eq!(f.solver.restarts, 4);
        assert_eq!(f.solver.tol_grad, 1e-8);

        let bad = text.replace("\"hyperbolic\"", "\"elliptic\"");
        assert!(matches!(ScenarioFile::parse(&bad, "mem"), Err(Error::Parse { .. })));
        let coll = text.replace("[-1, 0]", "[1, 0]");
        assert!(ScenarioFile::parse(&coll, "mem").unwrap().to_spec().is_err());
        let ver = text.replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(ScenarioFile::parse(&ver, "mem"), Err(Error::Validation(_))));
        let extra = text.replace("\"dim\"", "\"colour\": 1, \"dim\"");
        assert!(ScenarioFile::parse(&extra, "mem").is_err());
    }

    #[test]
    fn slice_file_defaults_center() {
        let f = ScenarioFile::parse(
            r#"{"schema_version": 1, "dim": 2, "masses": [1, 1], "kind": "hyperbolic", "a": [[1, 0], [-1, 0]]}"#,
            "mem",
        )
        .unwrap();
        let spec = f.to_spec().unwrap();
        let sl = SliceFile::parse(
            r#"{"e1": [[0, 1], [0, -1]], "e2": [[1, 0], [-1, 0]],
                "s1": {"min": -0.1, "max": 0.1, "n": 3}, "s2": {"min": 0, "max": 0, "n": 1}}"#,
            "mem",
        )
        .unwrap()
        .to_slice(&spec)
        .unwrap();
        assert_eq!(sl.len(), 3);
        assert_eq!(sl.point(&spec.ms, 1, 0), spec.x0);
        assert!(SliceFile::parse(r#"{"e1": [], "e2": []}"#, "mem").is_err());
    }

    #[test]
    fn save_writes_hash_of_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.json");
        let h = save_result(&p, &serde_json::json!({"b": 1.5, "a": [1, 2]})).unwrap();
        let text = std::fs::read(&p).unwrap();
        assert_eq!(h, git_blob_sha1(&text));
        assert!(String::from_utf8(text).unwrap().starts_with("{\n  \"a\""));
    }
}
