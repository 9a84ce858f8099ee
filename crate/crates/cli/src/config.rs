//! Versioned JSON run configuration.
//!
//! Parsing walks the JSON tree by hand instead of relying on
//! `deny_unknown_fields`, so that one pass can report every unknown,
//! mistyped or out-of-range key rather than stopping at the first.

use std::fmt;
use std::path::PathBuf;

use serde::Serialize;
use serde_json::{Map, Value};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Rbergomi,
    Abergomi,
    Bergomi2f,
    Bs,
}

impl ModelTag {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "rbergomi" => Some(ModelTag::Rbergomi),
            "abergomi" => Some(ModelTag::Abergomi),
            "bergomi2f" => Some(ModelTag::Bergomi2f),
            "bs" => Some(ModelTag::Bs),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelTag::Rbergomi => "rbergomi",
            ModelTag::Abergomi => "abergomi",
            ModelTag::Bergomi2f => "bergomi2f",
            ModelTag::Bs => "bs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMethod {
    ClosedForm,
    LeastSquares,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamsSpec {
    pub xi0: f64,
    pub eta: f64,
    pub hurst: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub maturities: Vec<f64>,
    pub steps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelSpec {
    pub terms: usize,
    pub method: KernelMethod,
    /// Fit grid size for least squares; `None` means "the simulation's N".
    pub grid_points: Option<usize>,
    pub max_iterations: usize,
}

/// `None` for the multiplication factor means "use the tabulated value for
/// the step count".
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbergomiSpec {
    pub truncation: Option<f64>,
    pub mult_factor: Option<f64>,
    pub placement: String,
    pub scheme: String,
    pub vol_scale: String,
    pub compensator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoFactorSpec {
    pub omega: f64,
    pub theta: f64,
    pub kappa_x: f64,
    pub kappa_y: f64,
    pub rho_sx: f64,
    pub rho_sy: f64,
    pub rho_xy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkewSpec {
    pub maturities: Vec<f64>,
    pub bump: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareSpec {
    pub terms: Vec<usize>,
    pub steps: Vec<usize>,
}

/// A fully resolved configuration: every default is filled in, so its
/// serialization is the canonical form that gets hashed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub version: u64,
    pub model: ModelTag,
    pub params: ParamsSpec,
    pub grid: GridSpec,
    pub paths: usize,
    pub seed: u64,
    pub kernel: KernelSpec,
    pub abergomi: AbergomiSpec,
    pub bs_vol: f64,
    pub two_factor: Option<TwoFactorSpec>,
    pub strikes: Vec<f64>,
    pub reference: bool,
    pub skew: SkewSpec,
    pub compare: CompareSpec,
    /// Not part of the canonical form: moving a run elsewhere must not
    /// change its hash.
    #[serde(skip)]
    pub output_dir: Option<PathBuf>,
}

/// One offending key, with a JSON-pointer-like path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaIssue {
    pub key: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaError {
    pub issues: Vec<SchemaIssue>,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem(s)):", self.issues.len())?;
        for i in &self.issues {
            writeln!(f, "  {}: {}", i.key, i.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for SchemaError {}

impl SchemaError {
    pub fn single(key: &str, message: impl Into<String>) -> Self {
        SchemaError { issues: vec![SchemaIssue { key: key.into(), message: message.into() }] }
    }

    pub fn keys(&self) -> Vec<&str> {
        self.issues.iter().map(|i| i.key.as_str()).collect()
    }
}

struct Reader<'a> {
    obj: &'a Map<String, Value>,
    prefix: String,
    seen: Vec<&'static str>,
}

impl<'a> Reader<'a> {
    fn new(obj: &'a Map<String, Value>, prefix: &str) -> Self {
        Reader { obj, prefix: prefix.to_string(), seen: Vec::new() }
    }

    fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    /// `null` counts as absent, so the canonical form parses back.
    fn get(&mut self, key: &'static str) -> Option<&'a Value> {
        self.seen.push(key);
        self.obj.get(key).filter(|v| !v.is_null())
    }

    fn issue(&self, out: &mut Vec<SchemaIssue>, key: &str, message: impl Into<String>) {
        out.push(SchemaIssue { key: self.path(key), message: message.into() });
    }

    fn f64_where(
        &mut self,
        out: &mut Vec<SchemaIssue>,
        key: &'static str,
        default: Option<f64>,
        ok: impl Fn(f64) -> bool,
        rule: &str,
    ) -> f64 {
        match self.get(key) {
            None => default.unwrap_or_else(|| {
                self.issue(out, key, "required");
                f64::NAN
            }),
            Some(v) => match v.as_f64() {
                Some(x) if x.is_finite() && ok(x) => x,
                Some(_) => {
                    self.issue(out, key, format!("must be {rule}"));
                    f64::NAN
                }
                None => {
                    self.issue(out, key, "must be a number");
                    f64::NAN
                }
            },
        }
    }

    fn usize_where(
        &mut self,
        out: &mut Vec<SchemaIssue>,
        key: &'static str,
        default: Option<usize>,
        min: usize,
    ) -> usize {
        match self.get(key) {
            None => default.unwrap_or_else(|| {
                self.issue(out, key, "required");
                0
            }),
            Some(v) => match v.as_u64() {
                Some(x) if x as usize >= min => x as usize,
                _ => {
                    self.issue(out, key, format!("must be an integer >= {min}"));
                    0
                }
            },
        }
    }

    fn list<T>(
        &mut self,
        out: &mut Vec<SchemaIssue>,
        key: &'static str,
        default: Vec<T>,
        item: impl Fn(&Value) -> Option<T>,
        rule: &str,
    ) -> Vec<T> {
        match self.get(key) {
            None => default,
            Some(Value::Array(a)) if !a.is_empty() => {
                let parsed: Option<Vec<T>> = a.iter().map(&item).collect();
                parsed.unwrap_or_else(|| {
                    self.issue(out, key, format!("every entry must be {rule}"));
                    Vec::new()
                })
            }
            Some(_) => {
                self.issue(out, key, format!("must be a non-empty array of {rule}"));
                Vec::new()
            }
        }
    }

    fn choice(
        &mut self,
        out: &mut Vec<SchemaIssue>,
        key: &'static str,
        default: &str,
        allowed: &[&str],
    ) -> String {
        match self.get(key) {
            None => default.to_string(),
            Some(Value::String(s)) if allowed.contains(&s.as_str()) => s.clone(),
            Some(_) => {
                self.issue(out, key, format!("must be one of {}", allowed.join(", ")));
                default.to_string()
            }
        }
    }

    fn object(&mut self, out: &mut Vec<SchemaIssue>, key: &'static str) -> Option<&'a Map<String, Value>> {
        match self.get(key) {
            None => None,
            Some(Value::Object(m)) => Some(m),
            Some(_) => {
                self.issue(out, key, "must be an object");
                None
            }
        }
    }

    fn finish(self, out: &mut Vec<SchemaIssue>) {
        for k in self.obj.keys() {
            if !self.seen.contains(&k.as_str()) {
                self.issue(out, k, "unknown key");
            }
        }
    }
}

fn positive(x: f64) -> bool {
    x > 0.0
}

fn pos_f64(v: &Value) -> Option<f64> {
    v.as_f64().filter(|x| x.is_finite() && *x > 0.0)
}

fn pos_usize(v: &Value) -> Option<usize> {
    v.as_u64().filter(|x| *x > 0).map(|x| x as usize)
}

impl RunConfig {
    /// Parses and validates a configuration document.
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| SchemaError::single("<document>", format!("not valid JSON: {e}")))?;
        Self::from_value(&value)
    }

    pub fn from_value(value: &Value) -> Result<Self, SchemaError> {
        let Value::Object(root) = value else {
            return Err(SchemaError::single("<document>", "must be a JSON object"));
        };
        let mut out = Vec::new();
        let mut r = Reader::new(root, "");

        match r.get("version").map(Value::as_u64) {
            Some(Some(SCHEMA_VERSION)) => {}
            None => r.issue(&mut out, "version", "required"),
            Some(_) => r.issue(&mut out, "version", format!("unsupported, expected {SCHEMA_VERSION}")),
        }
        let model = match r.get("model") {
            Some(Value::String(s)) => ModelTag::parse(s),
            _ => None,
        };
        if model.is_none() {
            r.issue(&mut out, "model", "required, one of rbergomi, abergomi, bergomi2f, bs");
        }

        let params = {
            let obj = r.object(&mut out, "params");
            let empty = Map::new();
            let mut p = Reader::new(obj.unwrap_or(&empty), "params");
            let spec = ParamsSpec {
                xi0: p.f64_where(&mut out, "xi0", Some(0.026), positive, "positive"),
                eta: p.f64_where(&mut out, "eta", Some(1.9), |x| x >= 0.0, "non-negative"),
                hurst: p.f64_where(&mut out, "hurst", Some(0.07), |x| x > 0.0 && x < 0.5, "in (0, 0.5)"),
                rho: p.f64_where(&mut out, "rho", Some(-0.9), |x| (-1.0..=1.0).contains(&x), "in [-1, 1]"),
            };
            p.finish(&mut out);
            spec
        };

        let grid = {
            let obj = r.object(&mut out, "grid");
            let empty = Map::new();
            let mut g = Reader::new(obj.unwrap_or(&empty), "grid");
            let spec = GridSpec {
                maturities: g.list(&mut out, "maturities", vec![1.0], pos_f64, "positive numbers"),
                steps: g.list(&mut out, "steps", vec![100], pos_usize, "positive integers"),
            };
            g.finish(&mut out);
            spec
        };

        let paths = r.usize_where(&mut out, "paths", Some(20_000), 1);
        let seed = match r.get("seed") {
            None => 0,
            Some(v) => v.as_u64().unwrap_or_else(|| {
                r.issue(&mut out, "seed", "must be a non-negative integer");
                0
            }),
        };

        let kernel = {
            let obj = r.object(&mut out, "kernel");
            let empty = Map::new();
            let mut k = Reader::new(obj.unwrap_or(&empty), "kernel");
            let terms = k.usize_where(&mut out, "terms", Some(25), 1);
            let method = match k.choice(&mut out, "method", "least-squares", &["closed-form", "least-squares"]).as_str() {
                "closed-form" => KernelMethod::ClosedForm,
                _ => KernelMethod::LeastSquares,
            };
            let grid_points = match k.get("grid_points") {
                None => None,
                Some(_) => Some(k.usize_where(&mut out, "grid_points", None, 2)),
            };
            let max_iterations = k.usize_where(&mut out, "max_iterations", Some(500), 1);
            k.finish(&mut out);
            KernelSpec { terms, method, grid_points, max_iterations }
        };

        let abergomi = {
            let obj = r.object(&mut out, "abergomi");
            let empty = Map::new();
            let mut a = Reader::new(obj.unwrap_or(&empty), "abergomi");
            let truncation = match a.get("truncation") {
                None => None,
                Some(v) => match v.as_f64() {
                    Some(x) if x > 0.0 && x.is_finite() => Some(x),
                    _ => {
                        a.issue(&mut out, "truncation", "must be null or a positive theta");
                        None
                    }
                },
            };
            let mult_factor = match a.get("mult_factor") {
                None => None,
                Some(Value::String(t)) if t == "table" => None,
                Some(v) => match v.as_f64().filter(|x| x.is_finite() && *x > 0.0) {
                    Some(x) => Some(x),
                    None => {
                        a.issue(&mut out, "mult_factor", "must be \"table\" or a positive number");
                        None
                    }
                },
            };
            let spec = AbergomiSpec {
                truncation,
                mult_factor,
                placement: a.choice(&mut out, "placement", "exponent", &["exponent", "smile"]),
                scheme: a.choice(&mut out, "scheme", "exponential", &["exponential", "euler"]),
                vol_scale: a.choice(&mut out, "vol_scale", "explicit", &["explicit", "absorbed"]),
                compensator: a.choice(&mut out, "compensator", "rough-power", &["rough-power", "exact-chi"]),
            };
            a.finish(&mut out);
            spec
        };

        let bs_vol = r.f64_where(&mut out, "bs_vol", Some(0.2), positive, "positive");

        let two_factor = match r.object(&mut out, "two_factor") {
            None => {
                if model == Some(ModelTag::Bergomi2f) {
                    r.issue(&mut out, "two_factor", "required for model bergomi2f");
                }
                None
            }
            Some(obj) => {
                let mut t = Reader::new(obj, "two_factor");
                let any = |_: f64| true;
                let corr = |x: f64| (-1.0..=1.0).contains(&x);
                let spec = TwoFactorSpec {
                    omega: t.f64_where(&mut out, "omega", None, |x| x >= 0.0, "non-negative"),
                    theta: t.f64_where(&mut out, "theta", None, any, "finite"),
                    kappa_x: t.f64_where(&mut out, "kappa_x", None, positive, "positive"),
                    kappa_y: t.f64_where(&mut out, "kappa_y", None, positive, "positive"),
                    rho_sx: t.f64_where(&mut out, "rho_sx", None, corr, "in [-1, 1]"),
                    rho_sy: t.f64_where(&mut out, "rho_sy", None, corr, "in [-1, 1]"),
                    rho_xy: t.f64_where(&mut out, "rho_xy", None, corr, "in [-1, 1]"),
                };
                t.finish(&mut out);
                Some(spec)
            }
        };

        let finite = |v: &Value| v.as_f64().filter(|x| x.is_finite());
        let strikes = match r.get("strikes") {
            None => roughvol::analytics::default_log_moneyness(),
            Some(Value::Array(_)) => r.list(&mut out, "strikes", Vec::new(), finite, "finite numbers"),
            Some(Value::Object(obj)) => {
                let mut s = Reader::new(obj, "strikes");
                let ks = if obj.contains_key("log_moneyness") {
                    let ks = s.list(&mut out, "log_moneyness", Vec::new(), finite, "finite numbers");
                    for k in ["from", "to", "count"] {
                        if s.get(k).is_some() {
                            s.issue(&mut out, k, "conflicts with log_moneyness");
                        }
                    }
                    ks
                } else {
                    let from = s.f64_where(&mut out, "from", Some(-0.2), |_| true, "finite");
                    let to = s.f64_where(&mut out, "to", Some(0.2), |_| true, "finite");
                    let count = s.usize_where(&mut out, "count", Some(21), 2);
                    roughvol::analytics::uniform_log_moneyness(from, to, count).unwrap_or_else(|e| {
                        s.issue(&mut out, "to", e.to_string());
                        Vec::new()
                    })
                };
                s.finish(&mut out);
                ks
            }
            Some(_) => {
                r.issue(&mut out, "strikes", "must be an array or an object");
                Vec::new()
            }
        };

        let reference = match r.get("reference") {
            None => false,
            Some(Value::Bool(b)) => *b,
            Some(_) => {
                r.issue(&mut out, "reference", "must be a boolean");
                false
            }
        };

        let skew = {
            let obj = r.object(&mut out, "skew");
            let empty = Map::new();
            let mut s = Reader::new(obj.unwrap_or(&empty), "skew");
            let maturities = s.list(&mut out, "maturities", vec![0.1, 0.25, 0.5, 1.0, 2.0], pos_f64, "positive numbers");
            let bump = s.f64_where(&mut out, "bump", Some(roughvol::analytics::DEFAULT_SKEW_BUMP), positive, "positive");
            s.finish(&mut out);
            SkewSpec { maturities, bump }
        };

        let compare = {
            let obj = r.object(&mut out, "compare");
            let empty = Map::new();
            let mut c = Reader::new(obj.unwrap_or(&empty), "compare");
            let spec = CompareSpec {
                terms: c.list(&mut out, "terms", vec![15, 20, 25], pos_usize, "positive integers"),
                steps: c.list(&mut out, "steps", vec![50, 100, 150, 200], pos_usize, "positive integers"),
            };
            c.finish(&mut out);
            spec
        };

        let output_dir = match r.get("output_dir") {
            None => None,
            Some(Value::String(s)) => Some(PathBuf::from(s)),
            Some(_) => {
                r.issue(&mut out, "output_dir", "must be a string");
                None
            }
        };
        r.finish(&mut out);

        if out.is_empty() {
            Ok(RunConfig {
                version: SCHEMA_VERSION,
                model: model.expect("checked above"),
                params,
                grid,
                paths,
                seed,
                kernel,
                abergomi,
                bs_vol,
                two_factor,
                strikes,
                reference,
                skew,
                compare,
                output_dir,
            })
        } else {
            out.sort_by(|a, b| a.key.cmp(&b.key));
            Err(SchemaError { issues: out })
        }
    }

    /// Canonical JSON: defaults filled in, output directory left out.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of [`RunConfig::canonical_json`].
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}
