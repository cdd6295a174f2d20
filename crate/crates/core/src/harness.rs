//! Run configuration, scenarios and persistence.
//!
//! A configuration is flat `key = value` text layered over built-in defaults.
//! Every CSV is written next to a `.config` sidecar holding the canonical
//! configuration and its SHA-256 digest; the same digest reproduces the same
//! bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::diagnostics::{
    decay_fit, energy_inequality_run, null_form_estimate_check, DiagnosticSeries, Inequality,
    RunMonitor,
};
use crate::error::{Error, Result};
use crate::frames::{frame_sweep, random_cone_point, step_residual, S0};
use crate::hyperboloid::{
    boost_indices, conformal_energy, fill_jobs, identity_residual, natural_energy, sample_slice,
    sobolev_check, Channel, HyperboloidSlice, IdentityPlan, SliceGeometry, SliceJob,
    SliceSampler, DEFAULT_DS,
};
use crate::nulltensor::{verify_null, CubicTensor, NullVerdict, NULL_SAMPLES, NULL_TOLERANCE};
use crate::solver::{
    manufactured_error, run, GridSpec, InitialData, ManufacturedBump, Observer, Profile,
    Simulation, SolutionHistory,
};
use crate::vectorfields::{commutator_check, FieldId, MultiIndex};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "HYPERWAVE_THREADS";

/// Worker count requested by the contents of [`THREADS_ENV`].
pub fn thread_cap(value: Option<&str>) -> Result<Option<usize>> {
    match value.map(str::trim) {
        None | Some("") => Ok(None),
        Some(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config {
                line: 0,
                message: format!("{THREADS_ENV} must be a positive integer, got `{v}`"),
            }),
        },
    }
}

/// Size the global pool from [`THREADS_ENV`] and return the pool size.
pub fn configure_threads() -> Result<usize> {
    if let Some(n) = thread_cap(std::env::var(THREADS_ENV).ok().as_deref())? {
        // the pool can only be built once per process; later calls keep it
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

/// Where the initial data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataKind {
    /// `(w, ∂_tw)(2) = ε·(w0, w1)`.
    Profiles { w0: Profile, w1: Profile },
    /// Forced `P = 0` runs against `ε·sin t·χ(|x|/0.8)`.
    Manufactured,
    /// The same with `(1 − |x|²/0.64)^6` in place of `χ`.
    ManufacturedPolynomial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub kind: DataKind,
    pub epsilon: f64,
}

impl DataSpec {
    pub fn initial_data(&self) -> Option<InitialData> {
        match &self.kind {
            DataKind::Profiles { w0, w1 } => Some(InitialData::Profiles {
                w0: w0.clone(),
                w1: w1.clone(),
                epsilon: self.epsilon,
            }),
            _ => None,
        }
    }

    pub fn manufactured(&self) -> Option<ManufacturedBump> {
        match self.kind {
            DataKind::Manufactured => Some(ManufacturedBump::new(self.epsilon, 0.8)),
            DataKind::ManufacturedPolynomial => Some(ManufacturedBump::polynomial(self.epsilon, 0.8, 6)),
            DataKind::Profiles { .. } => None,
        }
    }
}

/// A loaded tensor with its nullity recorded (not required).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorSpec {
    pub tensor: CubicTensor,
    pub verdict: NullVerdict,
}

impl TensorSpec {
    pub fn new(tensor: CubicTensor) -> Self {
        TensorSpec {
            tensor,
            verdict: verify_null(&tensor, NULL_SAMPLES, NULL_TOLERANCE),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagSpec {
    pub delta: f64,
    pub n_max: usize,
    /// Hyperbolic times of the slice energies.
    pub s_list: Vec<f64>,
    /// Times of the pointwise ratio checks.
    pub t_list: Vec<f64>,
    /// Constant-time energies every this many snapshots.
    pub energy_every: usize,
    pub fit_window: (f64, f64),
    /// Window of the boundedness band and growth measures.
    pub band_window: (f64, f64),
}

/// Everything one scenario needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub data: DataSpec,
    pub tensor: TensorSpec,
    pub diag: DiagSpec,
    pub seed: u64,
    pub scenario: String,
    pub out: PathBuf,
    /// Amplitudes tried by `contrast`, largest first.
    pub contrast_epsilons: Vec<f64>,
    /// The non-null partner of `contrast`.
    pub contrast_tensor: CubicTensor,
    canonical: String,
}

/// Recognised keys in canonical order.
pub const KEYS: [&str; 24] = [
    "grid.L",
    "grid.h",
    "grid.dt",
    "grid.t_max",
    "grid.stride",
    "data.profile",
    "data.velocity",
    "data.epsilon",
    "tensor.kind",
    "tensor.values",
    "run.seed",
    "run.scenario",
    "run.out",
    "diag.delta",
    "diag.orders",
    "diag.s_list",
    "diag.t_list",
    "diag.energy_every",
    "diag.fit_lo",
    "diag.fit_hi",
    "diag.band_lo",
    "diag.band_hi",
    "contrast.epsilons",
    "contrast.tensor",
];

const DEFAULT_TEXT: &str = "\
grid.L = 44
grid.h = 0.05
grid.dt = 0.02
grid.t_max = 40
grid.stride = 4
data.profile = bump
data.velocity = zero
data.epsilon = 0.01
tensor.kind = cm
tensor.values = 1 0 0
run.seed = 7
run.scenario = default
run.out = out
diag.delta = 0.1
diag.orders = 2
diag.s_list = 3,4,5,6
diag.t_list = 10,20,30
diag.energy_every = 12
diag.fit_lo = 10
diag.fit_hi = 40
diag.band_lo = 4
diag.band_hi = 40
contrast.epsilons = 0.4,0.2,0.1,0.05,0.02
contrast.tensor = 1 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0
";

/// `key → (value, line)`; line 0 marks an override.
type Entries = BTreeMap<String, (String, usize)>;

fn split_pair(body: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = body
        .split_once('=')
        .ok_or_else(|| format!("expected `key = value`, found `{body}`"))?;
    let key = k.trim().to_string();
    if !KEYS.contains(&key.as_str()) {
        return Err(format!("unknown key `{key}`"));
    }
    Ok((key, v.trim().to_string()))
}

fn parse_entries(text: &str, into: &mut Entries) -> Result<()> {
    let mut seen = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = split_pair(body).map_err(|message| Error::Config { line, message })?;
        if seen.contains(&key) {
            return Err(Error::Config {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        seen.push(key.clone());
        into.insert(key, (value, line));
    }
    Ok(())
}

struct Reader<'a>(&'a Entries);

impl Reader<'_> {
    fn raw(&self, key: &str) -> (&str, usize) {
        let (v, l) = &self.0[key];
        (v.as_str(), *l)
    }

    fn fail(&self, key: &str, what: impl std::fmt::Display) -> Error {
        Error::Config {
            line: self.raw(key).1,
            message: format!("`{key}`: {what}"),
        }
    }

    fn num<T: FromStr>(&self, key: &str) -> Result<T> {
        let (v, _) = self.raw(key);
        v.parse().map_err(|_| self.fail(key, format!("cannot parse `{v}`")))
    }

    fn list(&self, key: &str) -> Result<Vec<f64>> {
        let (v, _) = self.raw(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| self.fail(key, format!("cannot parse `{}`", tok.trim())))
            })
            .collect()
    }

    fn window(&self, lo: &str, hi: &str) -> Result<(f64, f64)> {
        let w = (self.num(lo)?, self.num(hi)?);
        if !(w.0 < w.1) {
            return Err(self.fail(hi, format!("window [{}, {}] is empty", w.0, w.1)));
        }
        Ok(w)
    }

    fn profile(&self, key: &str) -> Result<Profile> {
        Profile::parse(self.raw(key).0).map_err(|e| self.fail(key, e))
    }

    fn tensor(&self, key: &str, text: &str) -> Result<CubicTensor> {
        text.parse().map_err(|e| self.fail(key, e))
    }
}

impl RunConfig {
    /// The built-in defaults as config text.
    pub fn default_text() -> &'static str {
        DEFAULT_TEXT
    }

    /// Parse `text` over the defaults, then apply `key=value` overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut entries = Entries::new();
        parse_entries(DEFAULT_TEXT, &mut entries).expect("valid defaults");
        for v in entries.values_mut() {
            v.1 = 0;
        }
        parse_entries(text, &mut entries)?;
        for o in overrides {
            let (k, v) = split_pair(o.trim()).map_err(|m| Error::Config {
                line: 0,
                message: format!("override `{o}`: {m}"),
            })?;
            entries.insert(k, (v, 0));
        }
        Self::from_entries(&entries)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides)
    }

    /// This configuration with more overrides applied.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        Self::parse(&self.canonical, overrides)
    }

    /// Canonical `key = value` text, one line per key in [`KEYS`] order.
    pub fn canonical(&self) -> &str {
        &self.canonical
    }

    /// Hex SHA-256 of [`RunConfig::canonical`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical.as_bytes()))
    }

    fn from_entries(entries: &Entries) -> Result<Self> {
        let r = Reader(entries);
        let grid = GridSpec {
            half_width: r.num("grid.L")?,
            h: r.num("grid.h")?,
            dt: r.num("grid.dt")?,
            t0: S0,
            t_max: r.num("grid.t_max")?,
            snapshot_stride: r.num("grid.stride")?,
        };
        grid.validate().map_err(|e| r.fail("grid.h", e))?;

        let epsilon: f64 = r.num("data.epsilon")?;
        if !epsilon.is_finite() {
            return Err(r.fail("data.epsilon", "must be finite"));
        }
        let kind = match r.raw("data.profile").0 {
            "manufactured" => DataKind::Manufactured,
            "manufactured_poly" => DataKind::ManufacturedPolynomial,
            _ => DataKind::Profiles {
                w0: r.profile("data.profile")?,
                w1: r.profile("data.velocity")?,
            },
        };

        let values = r.raw("tensor.values").0;
        let tensor = match r.raw("tensor.kind").0 {
            "cm" => r.tensor("tensor.values", &format!("cm {values}"))?,
            "values" => r.tensor("tensor.values", values)?,
            "zero" => CubicTensor::zero(),
            other => return Err(r.fail("tensor.kind", format!("expected cm, values or zero, got `{other}`"))),
        };
        let contrast_tensor = r.tensor("contrast.tensor", r.raw("contrast.tensor").0)?;

        let delta: f64 = r.num("diag.delta")?;
        if !(delta > 0.0) {
            return Err(r.fail("diag.delta", "must be positive"));
        }
        let s_list = r.list("diag.s_list")?;
        if let Some(s) = s_list.iter().find(|&&s| !(s >= S0)) {
            return Err(r.fail("diag.s_list", format!("s = {s} is below 2")));
        }
        let diag = DiagSpec {
            delta,
            n_max: r.num("diag.orders")?,
            s_list,
            t_list: r.list("diag.t_list")?,
            energy_every: r.num::<usize>("diag.energy_every")?.max(1),
            fit_window: r.window("diag.fit_lo", "diag.fit_hi")?,
            band_window: r.window("diag.band_lo", "diag.band_hi")?,
        };

        let scenario = r.raw("run.scenario").0.to_string();
        if scenario.is_empty() || scenario.contains(['/', '\\']) {
            return Err(r.fail("run.scenario", "must be a plain file stem"));
        }
        let mut contrast_epsilons = r.list("contrast.epsilons")?;
        contrast_epsilons.sort_by(|a, b| b.total_cmp(a));

        let mut canonical = String::new();
        for key in KEYS {
            canonical.push_str(&format!("{key} = {}\n", entries[key].0));
        }
        Ok(RunConfig {
            grid,
            data: DataSpec { kind, epsilon },
            tensor: TensorSpec::new(tensor),
            diag,
            seed: r.num("run.seed")?,
            scenario,
            out: PathBuf::from(r.raw("run.out").0),
            contrast_epsilons,
            contrast_tensor,
            canonical,
        })
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::parse("", &[]).expect("valid defaults")
    }
}

/// Row kinds of the diagnostics CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    EnergyT,
    EnergyS,
    EconS,
    Sup,
    Ghost,
    Ratio,
    Margin,
    Fit,
}

impl Kind {
    pub const ALL: [Kind; 8] = [
        Kind::EnergyT,
        Kind::EnergyS,
        Kind::EconS,
        Kind::Sup,
        Kind::Ghost,
        Kind::Ratio,
        Kind::Margin,
        Kind::Fit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::EnergyT => "energy_t",
            Kind::EnergyS => "energy_s",
            Kind::EconS => "econ_s",
            Kind::Sup => "sup",
            Kind::Ghost => "ghost",
            Kind::Ratio => "ratio",
            Kind::Margin => "margin",
            Kind::Fit => "fit",
        }
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Kind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown kind `{s}`"))
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub kind: Kind,
    pub param: f64,
    pub label: String,
    pub value: f64,
    pub extra: String,
}

impl CsvRow {
    pub fn new(kind: Kind, param: f64, label: impl Into<String>, value: f64) -> Self {
        CsvRow {
            kind,
            param,
            label: label.into(),
            value,
            extra: String::new(),
        }
    }

    pub fn with_extra(mut self, extra: impl Into<String>) -> Self {
        self.extra = extra.into();
        self
    }
}

pub const CSV_HEADER: [&str; 5] = ["kind", "param", "label", "value", "extra"];

/// Serialise rows; reals use the shortest representation that round-trips.
pub fn csv_bytes(rows: &[CsvRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.kind.as_str(),
            &r.param.to_string(),
            &r.label,
            &r.value.to_string(),
            &r.extra,
        ])?;
    }
    w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
}

/// Parse CSV text; schema problems are reported with 1-based row numbers
/// (the header is row 1).
pub fn parse_csv(bytes: &[u8]) -> Result<Vec<CsvRow>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(bytes);
    let mut records = rd.records();
    let schema = |row: usize, message: String| Error::Schema { row, message };
    match records.next() {
        None => return Err(schema(1, "missing header".into())),
        Some(h) => {
            let h = h?;
            if h.iter().ne(CSV_HEADER) {
                return Err(schema(1, format!("header must be `{}`", CSV_HEADER.join(","))));
            }
        }
    }
    let mut rows = Vec::new();
    for (n, rec) in records.enumerate() {
        let row = n + 2;
        let rec = rec?;
        if rec.len() != 5 {
            return Err(schema(row, format!("expected 5 columns, found {}", rec.len())));
        }
        let real = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|_| schema(row, format!("column `{}` is not a number: `{}`", CSV_HEADER[i], &rec[i])))
        };
        rows.push(CsvRow {
            kind: rec[0].parse().map_err(|m| schema(row, m))?,
            param: real(1)?,
            label: rec[2].to_string(),
            value: real(3)?,
            extra: rec[4].to_string(),
        });
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    parse_csv(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// One pass/fail line of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: String,
    pub pass: bool,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, bound: impl Into<String>, pass: bool) -> Self {
        Check {
            name: name.into(),
            value,
            bound: bound.into(),
            pass,
        }
    }
}

/// Rows and checks produced by a scenario.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<CsvRow>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// The check table as aligned text.
    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:width$}  {:<14.6e} {}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.bound
            ));
        }
        out
    }

    /// Write `<out>/<name>.csv` and its `.config` sidecar; returns the CSV path.
    pub fn write(&self, cfg: &RunConfig, name: &str) -> Result<PathBuf> {
        let csv_path = cfg.out.join(format!("{name}.csv"));
        write_atomic(&csv_path, &csv_bytes(&self.rows)?)?;
        let verdict = &cfg.tensor.verdict;
        let sidecar = format!(
            "# digest = {}\n# tensor null = {} (max residual {})\n{}",
            cfg.digest(),
            verdict.is_null,
            verdict.max_residual,
            cfg.canonical()
        );
        write_atomic(&cfg.out.join(format!("{name}.config")), sidecar.as_bytes())?;
        Ok(csv_path)
    }
}

/// `last/first − 1` of the samples inside `window`.
pub fn growth(series: &DiagnosticSeries, window: (f64, f64)) -> f64 {
    let mut pts = series.window(window.0, window.1);
    match (pts.next(), pts.last()) {
        (Some((_, a)), Some((_, b))) if a > 0.0 => b / a - 1.0,
        _ => f64::NAN,
    }
}

fn fit_extra(fit: &crate::diagnostics::DecayFit, window: (f64, f64)) -> String {
    format!(
        "amplitude={};r2={};samples={};window={}..{}",
        fit.amplitude, fit.r_squared, fit.samples, window.0, window.1
    )
}

/// Pointwise ratio checks at chosen snapshot times.
struct TimeProbe {
    tensor: CubicTensor,
    /// Snapshots nearest to the requested times.
    snapshots: Vec<i64>,
    rows: Vec<CsvRow>,
}

impl Observer for TimeProbe {
    fn margin(&self) -> usize {
        2
    }

    fn observe(&mut self, hist: &SolutionHistory, k: i64) -> crate::error::Result<()> {
        if !self.snapshots.contains(&k) {
            return Ok(());
        }
        let t = hist.time(k);
        let nf = null_form_estimate_check(hist, &self.tensor, t)?;
        self.rows.push(CsvRow::new(Kind::Ratio, t, "null_bilinear", nf.bilinear));
        self.rows.push(CsvRow::new(Kind::Ratio, t, "null_trilinear", nf.trilinear));
        for (name, v) in commutator_check(hist, t)?.maxima() {
            self.rows.push(CsvRow::new(Kind::Ratio, t, format!("commutator:{name}"), v));
        }
        Ok(())
    }
}

fn slice_channels(indices: &[MultiIndex]) -> Vec<Channel> {
    let mut ch = Vec::new();
    for i in indices {
        for c in Channel::with_gradient(i) {
            if !ch.contains(&c) {
                ch.push(c);
            }
        }
    }
    ch
}

fn profile_data(cfg: &RunConfig) -> Result<InitialData> {
    cfg.data.initial_data().ok_or_else(|| Error::Config {
        line: 0,
        message: "this scenario needs profile data (data.profile = bump, two_bumps, zero or table:<path>)".into(),
    })
}

fn monitored_run(
    cfg: &RunConfig,
    tensor: CubicTensor,
    indices: Vec<MultiIndex>,
    extra: &mut [&mut dyn Observer],
) -> Result<RunMonitor> {
    let mut sim = Simulation::new(cfg.grid, tensor, profile_data(cfg)?);
    sim.capacity = Some(8);
    let mut monitor = RunMonitor::new(indices, cfg.diag.energy_every, cfg.diag.delta)?;
    let mut observers: Vec<&mut dyn Observer> = vec![&mut monitor];
    for o in extra.iter_mut() {
        observers.push(&mut **o);
    }
    run(&sim, &mut observers)?;
    Ok(monitor)
}

fn monitor_rows(monitor: &RunMonitor, prefix: &str, rows: &mut Vec<CsvRow>) {
    for (index, series) in monitor.indices.iter().zip(&monitor.energy) {
        for &(t, v) in &series.samples {
            rows.push(CsvRow::new(Kind::EnergyT, t, format!("{prefix}{index}"), v));
        }
    }
    for series in [&monitor.sup_w, &monitor.sup_dw] {
        let label = series.label.trim_start_matches("sup:");
        for &(t, v) in &series.samples {
            rows.push(CsvRow::new(Kind::Sup, t, format!("{prefix}{label}"), v));
        }
    }
    for &(t, v) in &monitor.ghost_series.samples {
        rows.push(CsvRow::new(Kind::Ghost, t, format!("{prefix}w"), v));
    }
}

/// `run`: one simulation with energies, sup norms, ghost weight, slice
/// energies on `diag.s_list`, ratio checks on `diag.t_list` and decay fits.
pub fn scenario_run(cfg: &RunConfig) -> Result<Report> {
    let indices = MultiIndex::all_up_to(cfg.diag.n_max, &FieldId::ALL);
    let slice_indices = MultiIndex::all_up_to(cfg.diag.n_max.min(1), &FieldId::ALL);
    let channels = slice_channels(&slice_indices);
    let jobs = cfg
        .diag
        .s_list
        .iter()
        .map(|&s| Ok(SliceJob::new(Arc::new(SliceGeometry::new(&cfg.grid, s)?), channels.clone())))
        .collect::<Result<Vec<_>>>()?;
    let mut sampler = SliceSampler::new(&cfg.grid, jobs)?;
    let mut probe = TimeProbe {
        tensor: cfg.tensor.tensor,
        snapshots: cfg
            .diag
            .t_list
            .iter()
            .map(|t| ((t - S0) / cfg.grid.snapshot_dt()).round() as i64)
            .collect(),
        rows: Vec::new(),
    };
    let monitor = monitored_run(cfg, cfg.tensor.tensor, indices, &mut [&mut sampler, &mut probe])?;

    let mut report = Report::default();
    monitor_rows(&monitor, "", &mut report.rows);
    for slice in sampler.into_slices() {
        for index in &slice_indices {
            let field = slice.field(index).expect("sampled");
            let e = natural_energy(&field);
            report.rows.push(
                CsvRow::new(Kind::EnergyS, slice.s(), index.to_string(), e.v1)
                    .with_extra(format!("v2={};v3={};defect={}", e.v2, e.v3, e.max_pointwise_defect)),
            );
            report
                .rows
                .push(CsvRow::new(Kind::EconS, slice.s(), index.to_string(), conformal_energy(&field)));
        }
    }
    report.rows.extend(probe.rows);
    for series in [&monitor.sup_w, &monitor.sup_dw] {
        if let Ok(fit) = decay_fit(series, cfg.diag.fit_window) {
            report.rows.push(
                CsvRow::new(Kind::Fit, cfg.diag.fit_window.0, series.label.clone(), fit.exponent)
                    .with_extra(fit_extra(&fit, cfg.diag.fit_window)),
            );
        }
    }
    let verdict = cfg.tensor.verdict;
    report.checks.push(Check::new(
        "tensor_null_residual",
        verdict.max_residual,
        format!("recorded (null = {})", verdict.is_null),
        true,
    ));
    Ok(report)
}

fn short_history(tensor: CubicTensor, data: InitialData, h: f64, t_max: f64) -> Result<SolutionHistory> {
    let spec = GridSpec::fitted(h, 0.4 * h, S0, t_max, 4);
    let mut sim = Simulation::new(spec, tensor, data);
    sim.margin = 4;
    run(&sim, &mut [])
}

/// A history covering the slices of an identity study on `[2, s1]`.
pub fn identity_history(tensor: CubicTensor, data: InitialData, h: f64, s1: f64) -> Result<SolutionHistory> {
    let t_max = 0.5 * ((s1 + 2.0 * DEFAULT_DS).powi(2) + 1.0) + 4.0 * h;
    short_history(tensor, data, h, t_max)
}

/// Residual of the quasilinear conformal identity for one `u = Γ^I w`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityRow {
    pub index: MultiIndex,
    pub relative: f64,
    pub m3_relative: f64,
    /// Largest `|Ẽ_con|` over the slices.
    pub size: f64,
}

/// The identity on `n` intervals of `[2, s1]`, one index at a time so that
/// only one family of slices is held at once.
pub fn identity_residuals(hist: &SolutionHistory, indices: &[MultiIndex], s1: f64, n: usize) -> Result<Vec<IdentityRow>> {
    indices
        .iter()
        .map(|index| {
            let plan = IdentityPlan::new(*hist.tensor(), vec![index.clone()], S0, s1, n, DEFAULT_DS)?;
            let mut jobs = plan.jobs(hist.spec())?;
            fill_jobs(hist, &mut jobs)?;
            let slices: Vec<HyperboloidSlice> = jobs.into_iter().map(SliceJob::into_slice).collect();
            let (_, series) = plan.evaluate(&slices).remove(0);
            let r = identity_residual(&series);
            Ok(IdentityRow {
                index: index.clone(),
                relative: r.relative,
                m3_relative: r.m3_relative,
                size: series.iter().map(|q| q.e_tilde.abs()).fold(0.0, f64::max),
            })
        })
        .collect()
}

/// Rows whose energy is a meaningful fraction of the largest.
pub fn nondegenerate(rows: &[IdentityRow]) -> impl Iterator<Item = &IdentityRow> {
    let scale = rows.iter().map(|r| r.size).fold(0.0, f64::max);
    rows.iter().filter(move |r| r.size >= DEGENERATE_ENERGY_FRACTION * scale)
}

/// Indices whose conformal energy is below this fraction of the largest are
/// excluded from the identity convergence check (their relative residual is
/// rounding noise on an identically vanishing field).
pub const DEGENERATE_ENERGY_FRACTION: f64 = 1e-3;

/// `verify`: the algebraic identities and estimate checks on short,
/// self-contained runs.
pub fn scenario_verify(cfg: &RunConfig) -> Result<Report> {
    let mut report = Report::default();
    let p = cfg.tensor.tensor;
    let data = cfg.data.initial_data().unwrap_or_else(|| InitialData::bump(cfg.data.epsilon));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let fine = verify_null(&p, 100_000, NULL_TOLERANCE);
    let gap = (fine.max_residual - cfg.tensor.verdict.max_residual).abs();
    report.checks.push(Check::new(
        "null_scan_agreement",
        gap,
        format!("<= 1e-6 (null = {})", cfg.tensor.verdict.is_null),
        gap <= 1e-6 && fine.is_null == cfg.tensor.verdict.is_null,
    ));

    let sweep = frame_sweep(&p, 10_000, 10.0, &mut rng);
    report.checks.push(Check::new(
        "frame_norm_defect_ulps",
        sweep.max_norm_defect_ulps,
        "<= 4",
        sweep.max_norm_defect_ulps <= 4.0,
    ));
    report
        .checks
        .push(Check::new("frame_cone_bounds", sweep.bounds_hold as u8 as f64, "= 1", sweep.bounds_hold));
    let (mut coarse, mut finer) = (0.0_f64, 0.0_f64);
    for _ in 0..200 {
        let q = random_cone_point(&mut rng, 10.0);
        if q.s < S0 + 0.5 {
            continue;
        }
        coarse = coarse.max(step_residual(&q, 0.2));
        finer = finer.max(step_residual(&q, 0.1));
    }
    let order = coarse / finer;
    report
        .checks
        .push(Check::new("frame_step_order", order, "in [3.5, 4.5]", (3.5..=4.5).contains(&order)));

    let hist = short_history(p, data.clone(), 0.1, 12.5)?;
    let simple = [MultiIndex::empty(), MultiIndex::new(&[FieldId::L0]), MultiIndex::new(&[FieldId::L1])];
    let mut defect = 0.0_f64;
    for s in [3.0, 4.0, 4.7] {
        let slice = sample_slice(&hist, s, slice_channels(&simple))?;
        for i in &simple {
            defect = defect.max(natural_energy(&slice.field(i).expect("sampled")).max_pointwise_defect);
        }
    }
    report
        .checks
        .push(Check::new("energy_forms", defect, "<= 1e-12", defect <= 1e-12));

    let flat = short_history(CubicTensor::zero(), data.clone(), 0.1, 7.0)?;
    let plan = IdentityPlan::new(CubicTensor::zero(), simple.to_vec(), 3.0, 3.5, 1, DEFAULT_DS)?;
    let mut jobs = plan.jobs(flat.spec())?;
    fill_jobs(&flat, &mut jobs)?;
    let slices: Vec<HyperboloidSlice> = jobs.into_iter().map(SliceJob::into_slice).collect();
    let mut flat_gap = 0.0_f64;
    for (_, series) in plan.evaluate(&slices) {
        for q in series {
            flat_gap = flat_gap.max((q.e_tilde - q.e_con).abs() / q.e_con.abs().max(f64::MIN_POSITIVE));
        }
    }
    report
        .checks
        .push(Check::new("flat_reduction", flat_gap, "<= 1e-12", flat_gap <= 1e-12));

    let s1 = 3.0;
    let first_order = MultiIndex::all_up_to(1, &FieldId::ALL);
    let coarse = identity_residuals(&identity_history(p, data.clone(), 0.1, s1)?, &first_order, s1, 10)?;
    let fine = identity_residuals(&identity_history(p, data.clone(), 0.05, s1)?, &first_order, s1, 20)?;
    for f in nondegenerate(&fine) {
        let c = coarse.iter().find(|c| c.index == f.index).expect("same indices");
        report.rows.push(CsvRow::new(Kind::Ratio, 0.1, format!("identity:{}", c.index), c.relative));
        report.rows.push(CsvRow::new(Kind::Ratio, 0.05, format!("identity:{}", f.index), f.relative));
        report.checks.push(Check::new(
            format!("identity_converges:{}", f.index),
            f.relative,
            format!("< {:.3e} (h = 0.1)", c.relative),
            f.relative < c.relative,
        ));
    }

    let spec = *hist.spec();
    let t = spec.snapshot_time(((8.0 - S0) / spec.snapshot_dt()).round() as i64);
    let nf = null_form_estimate_check(&hist, &p, t)?;
    let worst = nf.bilinear.max(nf.trilinear);
    report
        .checks
        .push(Check::new("null_form_majorant", worst, "finite", worst.is_finite()));
    let comm = commutator_check(&hist, t)?.maxima();
    let worst = comm.iter().map(|c| c.1).fold(0.0, f64::max);
    let finite = comm.iter().all(|c| c.1.is_finite());
    report
        .checks
        .push(Check::new("commutator_ratios", worst, "finite", finite));
    for (name, v) in comm {
        report.rows.push(CsvRow::new(Kind::Ratio, t, format!("commutator:{name}"), v));
    }

    let boosts: Vec<Channel> = boost_indices().into_iter().map(Channel::Field).collect();
    let slice = sample_slice(&hist, 4.0, boosts)?;
    let sob = sobolev_check(&slice, &MultiIndex::empty())?;
    let worst = sob.plain.ratio().max(sob.weighted.ratio());
    report
        .checks
        .push(Check::new("sobolev_ratio", worst, "finite", worst.is_finite()));

    let s_values: Vec<f64> = (0..=6).map(|q| 2.5 + 0.25 * q as f64).collect();
    for which in Inequality::ALL {
        let samples = energy_inequality_run(&hist, which, &MultiIndex::empty(), &s_values)?;
        let worst = samples.iter().map(|m| m.ratio()).fold(0.0, f64::max);
        for m in &samples {
            report
                .rows
                .push(CsvRow::new(Kind::Margin, m.s, which.label(), m.margin()).with_extra(format!("ratio={}", m.ratio())));
        }
        report
            .checks
            .push(Check::new(format!("{}_ratio", which.label()), worst, "finite", worst.is_finite()));
    }
    Ok(report)
}

/// The config key a sweep parameter maps to.
pub fn sweep_key(param: &str) -> Result<&'static str> {
    match param {
        "epsilon" | "eps" => Ok("data.epsilon"),
        "h" => Ok("grid.h"),
        "delta" => Ok("diag.delta"),
        other => Err(Error::Config {
            line: 0,
            message: format!("cannot sweep `{other}`; expected epsilon, h or delta"),
        }),
    }
}

/// Parse `param=v1,v2,...`.
pub fn parse_sweep(text: &str) -> Result<(String, Vec<f64>)> {
    let fail = |m: String| Error::Config { line: 0, message: m };
    let (p, vs) = text
        .split_once('=')
        .ok_or_else(|| fail(format!("sweep must look like `h=0.04,0.02`, got `{text}`")))?;
    let values = vs
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| fail(format!("bad sweep value `{v}`"))))
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(fail("empty sweep".into()));
    }
    sweep_key(p.trim())?;
    Ok((p.trim().to_string(), values))
}

/// `sweep`: vary one parameter. On manufactured data with `h` this is the
/// refinement study (error and ratio between adjacent rows); otherwise each
/// value gets a monitored run summarised by decay fits, band ratios and the
/// final ghost-weight integral.
pub fn scenario_sweep(cfg: &RunConfig, param: &str, values: &[f64]) -> Result<Report> {
    let key = sweep_key(param)?;
    let mut report = Report::default();
    if let Some(field) = cfg.data.manufactured() {
        if key != "grid.h" {
            return Err(Error::Config {
                line: 0,
                message: "manufactured data can only be swept in h".into(),
            });
        }
        let mut prev: Option<f64> = None;
        for &h in values {
            let err = manufactured_error(field, h, cfg.grid.t_max);
            let mut row = CsvRow::new(Kind::Ratio, h, "mms_error", err);
            if let Some(p) = prev {
                let ratio = p / err;
                row = row.with_extra(format!("ratio={ratio}"));
                report.rows.push(CsvRow::new(Kind::Ratio, h, "mms_ratio", ratio));
                report.checks.push(Check::new(
                    format!("mms_ratio@h={h}"),
                    ratio,
                    "in [3.5, 4.5]",
                    (3.5..=4.5).contains(&ratio),
                ));
            }
            report.rows.push(row);
            prev = Some(err);
        }
        return Ok(report);
    }

    let indices = MultiIndex::all_up_to(cfg.diag.n_max, &FieldId::ALL);
    let cfl = cfg.grid.dt / cfg.grid.h;
    for &v in values {
        let mut overrides = vec![format!("{key}={v}")];
        if key == "grid.h" {
            overrides.push(format!("grid.dt={}", cfl * v));
        }
        let c = cfg.with_overrides(&overrides)?;
        match monitored_run(&c, c.tensor.tensor, indices.clone(), &mut []) {
            Ok(m) => {
                report.rows.push(CsvRow::new(Kind::Ratio, v, "completed", 1.0));
                for series in [&m.sup_w, &m.sup_dw] {
                    if let Ok(fit) = decay_fit(series, c.diag.fit_window) {
                        report.rows.push(
                            CsvRow::new(Kind::Fit, v, series.label.clone(), fit.exponent)
                                .with_extra(fit_extra(&fit, c.diag.fit_window)),
                        );
                    }
                }
                for (index, series) in m.indices.iter().zip(&m.energy) {
                    let (lo, hi) = c.diag.band_window;
                    report
                        .rows
                        .push(CsvRow::new(Kind::Ratio, v, format!("band:{index}"), series.max_over_min(lo, hi)));
                }
                report.rows.push(CsvRow::new(Kind::Ghost, v, "total", m.ghost.total()));
            }
            Err(e) => {
                report
                    .rows
                    .push(CsvRow::new(Kind::Ratio, v, "completed", 0.0).with_extra(e.to_string()));
            }
        }
    }
    Ok(report)
}

/// Outcome of [`scenario_contrast`].
#[derive(Debug, Clone)]
pub struct Contrast {
    pub report: Report,
    /// The amplitude both runs used, if any non-null run completed.
    pub epsilon: Option<f64>,
    /// Largest growth over `|I| ≤ 1` for the non-null and null runs.
    pub growth: Option<(f64, f64)>,
    /// Amplitudes whose non-null run was aborted, with the reason.
    pub aborted: Vec<(f64, String)>,
}

/// `contrast`: the non-null tensor at the largest amplitude in
/// `contrast.epsilons` that completes, matched by a run with the configured
/// tensor at the same amplitude.
pub fn scenario_contrast(cfg: &RunConfig) -> Result<Contrast> {
    let indices = MultiIndex::all_up_to(1, &FieldId::ALL);
    let window = cfg.diag.band_window;
    let mut report = Report::default();
    let mut aborted = Vec::new();
    for &eps in &cfg.contrast_epsilons {
        let c = cfg.with_overrides(&[format!("data.epsilon={eps}")])?;
        let nonnull = match monitored_run(&c, cfg.contrast_tensor, indices.clone(), &mut []) {
            Ok(m) => m,
            Err(e) => {
                report
                    .rows
                    .push(CsvRow::new(Kind::Ratio, eps, "completed:nonnull", 0.0).with_extra(e.to_string()));
                aborted.push((eps, e.to_string()));
                continue;
            }
        };
        report.rows.push(CsvRow::new(Kind::Ratio, eps, "completed:nonnull", 1.0));
        let null = monitored_run(&c, cfg.tensor.tensor, indices.clone(), &mut [])?;
        let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (tag, m) in [("nonnull", &nonnull), ("null", &null)] {
            monitor_rows(m, &format!("{tag}:"), &mut report.rows);
            for (index, series) in m.indices.iter().zip(&m.energy) {
                let g = growth(series, window);
                report.rows.push(CsvRow::new(Kind::Ratio, eps, format!("growth:{tag}:{index}"), g));
                let slot = if tag == "nonnull" { &mut best.0 } else { &mut best.1 };
                if g > *slot {
                    *slot = g;
                }
            }
        }
        report.checks.push(Check::new(
            "nonnull_growth",
            best.0,
            format!(">= 0.25 at epsilon = {eps} (null partner {:.3})", best.1),
            best.0 >= 0.25,
        ));
        return Ok(Contrast {
            report,
            epsilon: Some(eps),
            growth: Some(best),
            aborted,
        });
    }
    report.checks.push(Check::new("nonnull_growth", f64::NAN, "no amplitude completed", false));
    Ok(Contrast {
        report,
        epsilon: None,
        growth: None,
        aborted,
    })
}

/// `fit`: decay fits of every `sup` and `energy_t` series in a stored CSV.
pub fn scenario_fit(rows: &[CsvRow], window: (f64, f64)) -> Result<Report> {
    let mut report = Report::default();
    for ((kind, label), samples) in group_series(rows) {
        if !matches!(kind, Kind::Sup | Kind::EnergyT) {
            continue;
        }
        let series = DiagnosticSeries::from_samples(format!("{}:{label}", kind.as_str()), &samples)?;
        if let Ok(fit) = decay_fit(&series, window) {
            report.rows.push(
                CsvRow::new(Kind::Fit, window.0, series.label.clone(), fit.exponent)
                    .with_extra(fit_extra(&fit, window)),
            );
        }
    }
    Ok(report)
}

/// Rows grouped by `(kind, label)` in order of first appearance.
fn group_series(rows: &[CsvRow]) -> Vec<((Kind, String), Vec<(f64, f64)>)> {
    let mut out: Vec<((Kind, String), Vec<(f64, f64)>)> = Vec::new();
    for r in rows {
        let key = (r.kind, r.label.clone());
        match out.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push((r.param, r.value)),
            None => out.push((key, vec![(r.param, r.value)])),
        }
    }
    out
}

/// One plot file listed in the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub file: String,
    pub kind: Kind,
    pub label: String,
    pub samples: usize,
}

fn file_stem(kind: Kind, label: &str) -> String {
    let clean: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '-' })
        .collect();
    format!("{}__{clean}.dat", kind.as_str())
}

/// Two-column `param value` files, one per `(kind, label)` series, plus
/// `manifest.tsv` listing them.
pub fn emit_plotdata(csv_path: &Path, dir: &Path) -> Result<Vec<ManifestEntry>> {
    let rows = read_csv(csv_path)?;
    let mut manifest = Vec::new();
    let mut listing = String::from("file\tkind\tlabel\tsamples\n");
    for ((kind, label), samples) in group_series(&rows) {
        let file = file_stem(kind, &label);
        let mut text = String::new();
        for (p, v) in &samples {
            text.push_str(&format!("{p} {v}\n"));
        }
        write_atomic(&dir.join(&file), text.as_bytes())?;
        listing.push_str(&format!("{file}\t{}\t{label}\t{}\n", kind.as_str(), samples.len()));
        manifest.push(ManifestEntry {
            file,
            kind,
            label,
            samples: samples.len(),
        });
    }
    write_atomic(&dir.join("manifest.tsv"), listing.as_bytes())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = RunConfig::default();
        assert_eq!(c.grid, GridSpec::default());
        assert_eq!(c.data.epsilon, 0.01);
        assert_eq!(c.diag.delta, 0.1);
        assert_eq!(c.diag.n_max, 2);
        assert_eq!(c.tensor.tensor, "cm 1 0 0".parse().unwrap());
        assert!(c.tensor.verdict.is_null);
        assert!(!TensorSpec::new(c.contrast_tensor).verdict.is_null);
        assert_eq!(c.contrast_epsilons[0], 0.4);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = RunConfig::parse("grid.h = 0.1\n\nbogus = 3\n", &[]).unwrap_err();
        assert!(matches!(e, Error::Config { line: 3, .. }), "{e}");
        let e = RunConfig::parse("# c\ngrid.h = abc\n", &[]).unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }), "{e}");
        let e = RunConfig::parse("grid.h = 0.1\ngrid.h = 0.2\n", &[]).unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }), "{e}");
        let e = RunConfig::parse("no equals sign\n", &[]).unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }), "{e}");
        let e = RunConfig::parse("tensor.values = 1 2\n", &[]).unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }), "{e}");
        let e = RunConfig::parse("", &["diag.delta=0".into()]).unwrap_err();
        assert!(matches!(e, Error::Config { line: 0, .. }), "{e}");
    }

    #[test]
    fn overrides_and_digest() {
        let a = RunConfig::parse("grid.h = 0.1\n", &[]).unwrap();
        let b = RunConfig::parse("", &["grid.h=0.1".into()]).unwrap();
        assert_eq!(a.canonical(), b.canonical());
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        let c = a.with_overrides(&["data.epsilon=0.02".into()]).unwrap();
        assert_ne!(c.digest(), a.digest());
        assert_eq!(c.grid.h, 0.1);
        let back = RunConfig::parse(c.canonical(), &[]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn tensor_kinds() {
        let z = RunConfig::parse("tensor.kind = zero\n", &[]).unwrap();
        assert!(z.tensor.tensor.is_zero());
        let mut values = vec!["0"; 27];
        values[0] = "1";
        let g = RunConfig::parse(&format!("tensor.kind = values\ntensor.values = {}\n", values.join(" ")), &[]).unwrap();
        assert_eq!(g.tensor.tensor, CubicTensor::unit(0, 0, 0));
        assert!(!g.tensor.verdict.is_null);
    }

    #[test]
    fn thread_caps() {
        assert_eq!(thread_cap(None).unwrap(), None);
        assert_eq!(thread_cap(Some("3")).unwrap(), Some(3));
        assert!(thread_cap(Some("0")).is_err());
        assert!(thread_cap(Some("many")).is_err());
    }

    #[test]
    fn csv_round_trip_and_schema_errors() {
        let rows = vec![
            CsvRow::new(Kind::EnergyT, 4.0, "L1,L0", 0.1 + 0.2),
            CsvRow::new(Kind::Fit, 10.0, "sup:w", -0.5).with_extra("r2=0.99"),
        ];
        let bytes = csv_bytes(&rows).unwrap();
        assert!(bytes.starts_with(b"kind,param,label,value,extra\n"));
        assert_eq!(parse_csv(&bytes).unwrap(), rows);
        let e = parse_csv(b"kind,param,label,value,extra\nenergy_t,1,a,2,\nnope,1,a,2,\n").unwrap_err();
        assert!(matches!(e, Error::Schema { row: 3, .. }), "{e}");
        let e = parse_csv(b"kind,param,label,value,extra\nsup,x,a,2,\n").unwrap_err();
        assert!(matches!(e, Error::Schema { row: 2, .. }), "{e}");
        let e = parse_csv(b"a,b\n").unwrap_err();
        assert!(matches!(e, Error::Schema { row: 1, .. }), "{e}");
    }

    #[test]
    fn growth_measure() {
        let s = DiagnosticSeries::from_samples("x", &[(1.0, 2.0), (5.0, 9.0), (10.0, 3.0), (20.0, 1.0)]).unwrap();
        assert_eq!(growth(&s, (1.0, 10.0)), 0.5);
        assert!(growth(&s, (30.0, 40.0)).is_nan());
    }

    #[test]
    fn sweep_syntax() {
        let (p, v) = parse_sweep("h=0.04,0.02,0.01").unwrap();
        assert_eq!(p, "h");
        assert_eq!(v, vec![0.04, 0.02, 0.01]);
        assert!(parse_sweep("mass=1").is_err());
        assert!(parse_sweep("h=").is_err());
    }
}
