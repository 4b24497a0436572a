//! Run configuration, file formats and the command pipeline behind the binary.
//!
//! Every command reads a [`RunConfig`] (TOML), writes its artifacts into the
//! configured output directory and returns a [`CommandOutcome`]. Reports are
//! deterministic: no timestamps, fixed iteration orders, fixed number formats.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bench::{circle_fit, perturb_sweep, FcmEstimate, FluxAnchor, LinearInductor, PreisachDevice, RlDevice, SweepSettings, VoltageDevice};
use crate::error::{Error, Result};
use crate::fitting::{fit_model, FitConfig, FitReport, FittedModel, TestRecord, A_LADDER, MODEL_SCHEMA_VERSION};
use crate::hps::{HarmonicVector, PeriodicSignal};
use crate::jet::Jet;
use crate::linearize::{analytic_fcm, solve_base_from_voltage, validate_base, AnalyticFcm, DcPolicy, LinearizeOptions, NewtonOptions};
use crate::preisach::{simulate, CentreLine, HysteresisModel, SyntheticModel};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const WAVEFORM_HEADER: [&str; 3] = ["time_s", "voltage_V", "current_A"];

// ---------------------------------------------------------------- config

fn d_schema() -> u32 {
    CONFIG_SCHEMA_VERSION
}
fn d_frequency() -> f64 {
    50.0
}
fn d_sample_rate() -> f64 {
    100e3
}
fn d_order() -> usize {
    11
}
fn d_output() -> PathBuf {
    PathBuf::from("out")
}
fn d_drive() -> Vec<DriveHarmonic> {
    vec![DriveHarmonic {
        harmonic: 1,
        rms: 230.0,
        phase_deg: 0.0,
    }]
}

/// One sinusoidal component `rms·√2·cos(nωt + φ)` of the base voltage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveHarmonic {
    pub harmonic: usize,
    pub rms: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// One waveform CSV per amplitude step.
    pub inputs: Vec<PathBuf>,
    pub zeta_cells: usize,
    pub gamma_samples: usize,
    pub zeta_samples: usize,
    pub a_candidates: Vec<f64>,
}

impl Default for FitSection {
    fn default() -> Self {
        let f = FitConfig::default();
        FitSection {
            inputs: vec![],
            zeta_cells: f.zeta_cells,
            gamma_samples: f.gamma_samples,
            zeta_samples: f.zeta_samples,
            a_candidates: A_LADDER.to_vec(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Waveform CSV whose current column drives the model.
    pub input: Option<PathBuf>,
}

/// How the linearisation base current is obtained from the drive voltage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseSolver {
    /// Integrate the voltage and invert the branches sample by sample.
    #[default]
    BranchInversion,
    /// Newton iteration on the current harmonics.
    HarmonicNewton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearizeSection {
    pub base_solver: BaseSolver,
    pub newton_max_iter: usize,
    pub newton_tol: f64,
}

impl Default for LinearizeSection {
    fn default() -> Self {
        LinearizeSection {
            base_solver: BaseSolver::BranchInversion,
            newton_max_iter: 30,
            newton_tol: 1e-10,
        }
    }
}

/// Time-domain device swept by `bench`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DeviceSpec {
    /// The configured model, driven by voltage.
    #[default]
    Model,
    LinearInductor { inductance: f64 },
    /// Series resistance with a memoryless saturating inductance.
    Rl { resistance: f64, centre: CentreLine },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub dv: f64,
    pub nphi: usize,
    /// Perturbed harmonics; empty means 1..=order.
    pub harmonics: Vec<usize>,
    pub device: DeviceSpec,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            dv: 2.0,
            nphi: 12,
            harmonics: vec![],
            device: DeviceSpec::Model,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// Sinusoidal test voltages, one recording each.
    pub amplitudes_rms: Vec<f64>,
    pub cycles: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            amplitudes_rms: (1..=12).map(|k| 20.0 * k as f64).collect(),
            cycles: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_schema")]
    pub schema_version: u32,
    #[serde(default = "d_frequency")]
    pub frequency: f64,
    #[serde(default = "d_sample_rate")]
    pub sample_rate: f64,
    #[serde(default = "d_order")]
    pub order: usize,
    #[serde(default)]
    pub dc_policy: DcPolicy,
    #[serde(default)]
    pub inversion_order: Option<usize>,
    /// Model document read by simulate/linearize/bench and written by fit.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default = "d_output")]
    pub output_dir: PathBuf,
    #[serde(default = "d_drive")]
    pub drive: Vec<DriveHarmonic>,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub linearize: LinearizeSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub synth: SynthSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub order: Option<usize>,
    pub dc_policy: Option<DcPolicy>,
    pub nphi: Option<usize>,
    pub dv: Option<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c: RunConfig = toml::from_str(text).map_err(|e| Error::Invalid(format!("config: {e}")))?;
        c.base_dir = base_dir.to_path_buf();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &dir)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(n) = o.order {
            self.order = n;
        }
        if let Some(p) = o.dc_policy {
            self.dc_policy = p;
        }
        if let Some(n) = o.nphi {
            self.bench.nphi = n;
        }
        if let Some(v) = o.dv {
            self.bench.dv = v;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(format!("config: {m}")));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(self.frequency > 0.0) || !(self.sample_rate > 0.0) {
            return bad("frequency and sample_rate must be positive".into());
        }
        if self.order == 0 {
            return bad("order must be at least 1".into());
        }
        if !(self.bench.dv >= 0.0) {
            return bad("bench.dv must be non-negative".into());
        }
        if self.bench.nphi < 3 {
            return bad(format!("bench.nphi must be at least 3, got {}", self.bench.nphi));
        }
        if self.fit.zeta_cells == 0 || self.fit.gamma_samples == 0 || self.fit.zeta_samples < 2 {
            return bad("fit grid sizes must be positive".into());
        }
        if self.fit.a_candidates.iter().any(|a| !(*a > 0.0)) {
            return bad("fit.a_candidates must be positive".into());
        }
        for d in &self.drive {
            if d.harmonic == 0 {
                return bad("drive harmonics must be ≥ 1".into());
            }
        }
        self.samples_per_period()?;
        Ok(())
    }

    pub fn period(&self) -> f64 {
        1.0 / self.frequency
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI * self.frequency
    }

    pub fn samples_per_period(&self) -> Result<usize> {
        let r = self.sample_rate / self.frequency;
        let n = r.round();
        if (r - n).abs() > 1e-6 * r || n < 4.0 {
            return Err(Error::Invalid(format!(
                "config: sample_rate/frequency = {r} must be an integer ≥ 4"
            )));
        }
        Ok(n as usize)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self, name: &str) -> PathBuf {
        self.resolve(&self.output_dir).join(name)
    }

    fn model_path(&self) -> Result<PathBuf> {
        self.model
            .as_ref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Invalid("config: `model` path is required for this command".into()))
    }

    pub fn bench_harmonics(&self) -> Vec<usize> {
        if self.bench.harmonics.is_empty() {
            (1..=self.order).collect()
        } else {
            self.bench.harmonics.clone()
        }
    }

    /// Base voltage harmonics up to `order`.
    pub fn drive_harmonics(&self) -> Result<HarmonicVector> {
        let mut c = vec![Complex64::new(0.0, 0.0); self.order + 1];
        for d in &self.drive {
            if d.harmonic > self.order {
                return Err(Error::Invalid(format!(
                    "drive harmonic {} exceeds order {}",
                    d.harmonic, self.order
                )));
            }
            c[d.harmonic] += Complex64::from_polar(d.rms * 2f64.sqrt(), d.phase_deg.to_radians());
        }
        Ok(HarmonicVector::new(c, self.omega()))
    }

    pub fn drive_signal(&self) -> Result<PeriodicSignal> {
        let n = self.samples_per_period()?;
        let drive = self.drive.clone();
        let w = self.omega();
        PeriodicSignal::from_fn(n, self.period(), move |t| {
            drive
                .iter()
                .map(|d| d.rms * 2f64.sqrt() * (d.harmonic as f64 * w * t + d.phase_deg.to_radians()).cos())
                .sum()
        })
    }
}

// ---------------------------------------------------------------- model document

/// Model kinds a document can hold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Fitted(FittedModel),
    Synthetic(SyntheticModel),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub model: ModelSpec,
}

impl ModelDocument {
    pub fn new(model: ModelSpec) -> Self {
        ModelDocument {
            schema_version: MODEL_SCHEMA_VERSION,
            model,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let doc: ModelDocument = serde_json::from_str(&text)?;
        if doc.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Invalid(format!(
                "{}: model schema_version {} unsupported (expected {MODEL_SCHEMA_VERSION})",
                path.display(),
                doc.schema_version
            )));
        }
        Ok(doc)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &(serde_json::to_string_pretty(self)? + "\n"))
    }
}

macro_rules! dispatch {
    ($s:expr, $m:ident => $e:expr) => {
        match $s {
            ModelSpec::Fitted($m) => $e,
            ModelSpec::Synthetic($m) => $e,
        }
    };
}

impl HysteresisModel for ModelSpec {
    fn current_limit(&self) -> f64 {
        dispatch!(self, m => m.current_limit())
    }
    fn shape(&self, beta: f64, alpha: f64) -> f64 {
        dispatch!(self, m => m.shape(beta, alpha))
    }
    fn shape_jet(&self, beta: Jet, alpha: Jet) -> Jet {
        dispatch!(self, m => m.shape_jet(beta, alpha))
    }
    fn common(&self, i: f64, beta_m: f64, alpha_m: f64) -> f64 {
        dispatch!(self, m => m.common(i, beta_m, alpha_m))
    }
    fn common_jet(&self, i: Jet, beta_m: Jet, alpha_m: Jet) -> Jet {
        dispatch!(self, m => m.common_jet(i, beta_m, alpha_m))
    }
    fn centre_line(&self, i: f64) -> f64 {
        dispatch!(self, m => m.centre_line(i))
    }
    fn centre_line_jet(&self, i: Jet) -> Jet {
        dispatch!(self, m => m.centre_line_jet(i))
    }
}

// ---------------------------------------------------------------- waveforms

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub time: Vec<f64>,
    pub voltage: Vec<f64>,
    pub current: Vec<f64>,
}

impl Waveform {
    /// Uniform sample interval; rejects jittered time stamps.
    pub fn sample_interval(&self) -> Result<f64> {
        if self.time.len() < 2 {
            return Err(Error::Invalid("waveform needs at least two samples".into()));
        }
        let n = self.time.len() - 1;
        let dt = (self.time[n] - self.time[0]) / n as f64;
        if !(dt > 0.0) {
            return Err(Error::Invalid("waveform time stamps must increase".into()));
        }
        if let Some(k) = (0..n).find(|&k| ((self.time[k + 1] - self.time[k]) - dt).abs() > 1e-6 * dt) {
            return Err(Error::Invalid(format!("non-uniform sampling at row {}", k + 2)));
        }
        Ok(dt)
    }
}

pub fn read_waveform_csv(path: &Path) -> Result<Waveform> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    for (k, want) in WAVEFORM_HEADER.iter().enumerate() {
        match headers.get(k) {
            Some(h) if h.trim() == *want => {}
            Some(h) => {
                return Err(Error::Invalid(format!(
                    "{}: column {} must be `{want}`, found `{h}`",
                    path.display(),
                    k + 1
                )))
            }
            None => return Err(Error::Invalid(format!("{}: missing column `{want}`", path.display()))),
        }
    }
    if headers.len() > 3 {
        return Err(Error::Invalid(format!(
            "{}: unexpected column `{}`",
            path.display(),
            &headers[3]
        )));
    }
    let mut w = Waveform {
        time: vec![],
        voltage: vec![],
        current: vec![],
    };
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut vals = [0.0; 3];
        for (k, v) in vals.iter_mut().enumerate() {
            let field = rec.get(k).unwrap_or("").trim();
            *v = field.parse().map_err(|_| {
                Error::Invalid(format!(
                    "{}: row {}: column `{}` value `{field}` is not a number",
                    path.display(),
                    row + 2,
                    WAVEFORM_HEADER[k]
                ))
            })?;
        }
        w.time.push(vals[0]);
        w.voltage.push(vals[1]);
        w.current.push(vals[2]);
    }
    Ok(w)
}

pub fn write_waveform_csv(path: &Path, w: &Waveform) -> Result<()> {
    let mut s = WAVEFORM_HEADER.join(",");
    s.push('\n');
    for k in 0..w.time.len() {
        let _ = writeln!(s, "{},{},{}", w.time[k], w.voltage[k], w.current[k]);
    }
    write_file(path, &s)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------- tables

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cell {
    Value(f64),
    /// Entry not produced (unmeasured column, undefined phase or metric).
    Undefined,
    /// DC-voltage column under an unbounded integral operator.
    Unbounded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub title: String,
    pub cols: Vec<usize>,
    pub rows: Vec<(usize, Vec<Cell>)>,
    /// Decimal places used when rendering values.
    pub decimals: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TableReport {
    pub meta: Vec<(String, String)>,
    pub tables: Vec<Table>,
}

const CELL_WIDTH: usize = 12;

fn fmt_value(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    // no "-0.000"
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn fmt_cell(c: &Cell, decimals: usize) -> String {
    match c {
        Cell::Value(v) => fmt_value(*v, decimals),
        Cell::Undefined => "--".into(),
        Cell::Unbounded => "unbounded".into(),
    }
}

impl TableReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(s, "# {k}: {v}");
        }
        for t in &self.tables {
            let _ = writeln!(s, "\n[{}]", t.title);
            let _ = write!(s, "{:>6}", "n\\m");
            for c in &t.cols {
                let _ = write!(s, "{c:>CELL_WIDTH$}");
            }
            s.push('\n');
            for (r, cells) in &t.rows {
                let _ = write!(s, "{r:>6}");
                for c in cells {
                    let _ = write!(s, "{:>CELL_WIDTH$}", fmt_cell(c, t.decimals));
                }
                s.push('\n');
            }
        }
        s
    }

    /// Inverse of [`TableReport::render`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = TableReport::default();
        let bad = |line: usize, m: &str| Error::Invalid(format!("report line {line}: {m}"));
        let mut lines = text.lines().enumerate().peekable();
        while let Some((ln, line)) = lines.next() {
            let ln = ln + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# ") {
                let (k, v) = rest.split_once(": ").ok_or_else(|| bad(ln, "metadata needs `key: value`"))?;
                out.meta.push((k.to_string(), v.to_string()));
                continue;
            }
            let title = line
                .strip_prefix('[')
                .and_then(|l| l.strip_suffix(']'))
                .ok_or_else(|| bad(ln, "expected `[table title]`"))?
                .to_string();
            let (hl, header) = lines.next().ok_or_else(|| bad(ln, "table without header"))?;
            let mut tok = header.split_whitespace();
            if tok.next() != Some("n\\m") {
                return Err(bad(hl + 1, "table header must start with n\\m"));
            }
            let cols = tok
                .map(|t| t.parse::<usize>().map_err(|_| bad(hl + 1, "column labels must be integers")))
                .collect::<Result<Vec<_>>>()?;
            let mut rows = vec![];
            let mut decimals = 0;
            while let Some((rl, row)) = lines.peek().copied() {
                if row.trim().is_empty() || row.starts_with('[') || row.starts_with('#') {
                    break;
                }
                lines.next();
                let mut tok = row.split_whitespace();
                let r = tok
                    .next()
                    .and_then(|t| t.parse::<usize>().ok())
                    .ok_or_else(|| bad(rl + 1, "row label must be an integer"))?;
                let cells = tok
                    .map(|t| match t {
                        "--" => Ok(Cell::Undefined),
                        "unbounded" => Ok(Cell::Unbounded),
                        _ => {
                            if let Some((_, frac)) = t.split_once('.') {
                                decimals = decimals.max(frac.len());
                            }
                            t.parse::<f64>()
                                .map(Cell::Value)
                                .map_err(|_| bad(rl + 1, &format!("bad cell `{t}`")))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                if cells.len() != cols.len() {
                    return Err(bad(rl + 1, "cell count differs from header"));
                }
                rows.push((r, cells));
            }
            out.tables.push(Table {
                title,
                cols,
                rows,
                decimals,
            });
        }
        Ok(out)
    }

    pub fn table(&self, title: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.title == title)
    }
}

/// Magnitude (mS) and phase (degrees) tables of one admittance matrix.
fn admittance_tables(
    name: &str,
    y: &DMatrix<Complex64>,
    cols: &[usize],
    unbounded_dc: bool,
    measured: &dyn Fn(usize) -> bool,
    phase_defined: &dyn Fn(usize, usize) -> bool,
) -> [Table; 2] {
    let d = y.nrows();
    let mut mag = vec![];
    let mut ph = vec![];
    for n in 0..d {
        let mut mr = vec![];
        let mut pr = vec![];
        for &m in cols {
            if m == 0 && unbounded_dc {
                mr.push(Cell::Unbounded);
                pr.push(Cell::Unbounded);
            } else if !measured(m) {
                mr.push(Cell::Undefined);
                pr.push(Cell::Undefined);
            } else {
                let v = y[(n, m)];
                mr.push(Cell::Value(v.norm() * 1e3));
                pr.push(if phase_defined(n, m) && v.norm() > 0.0 {
                    Cell::Value(v.arg().to_degrees())
                } else {
                    Cell::Undefined
                });
            }
        }
        mag.push((n, mr));
        ph.push((n, pr));
    }
    [
        Table {
            title: format!("{name} magnitude [mS]"),
            cols: cols.to_vec(),
            rows: mag,
            decimals: 6,
        },
        Table {
            title: format!("{name} phase [deg]"),
            cols: cols.to_vec(),
            rows: ph,
            decimals: 2,
        },
    ]
}

/// Human-readable analytic report (magnitudes in mS, phases in degrees).
pub fn analytic_report(fcm: &AnalyticFcm, extra_meta: &[(String, String)]) -> TableReport {
    let p = &fcm.fcm.pair;
    let cols: Vec<usize> = (0..p.dim()).collect();
    let unb = fcm.fcm.dc_column_unbounded;
    let mut tables = vec![];
    for (name, y) in [("Y1", &p.y1), ("Y2", &p.y2)] {
        tables.extend(admittance_tables(name, y, &cols, unb, &|_| true, &|_, _| true));
    }
    let mut meta = vec![
        ("report".into(), "analytic coupling matrices".into()),
        ("dc-policy".into(), fcm.fcm.policy.to_string()),
        ("order".into(), (p.dim() - 1).to_string()),
        ("inversion-order".into(), fcm.inversion_order.to_string()),
    ];
    meta.extend_from_slice(extra_meta);
    TableReport { meta, tables }
}

/// Human-readable sweep report: Y1/Y2 tables plus the circularity metric.
pub fn bench_report(est: &FcmEstimate, harmonics: &[usize], extra_meta: &[(String, String)]) -> TableReport {
    let cols: Vec<usize> = harmonics.to_vec();
    let measured = |m: usize| est.measured.get(m).copied().unwrap_or(false);
    let mut tables = vec![];
    tables.extend(admittance_tables("Y1", &est.y1, &cols, false, &measured, &|_, _| true));
    tables.extend(admittance_tables("Y2", &est.y2, &cols, false, &measured, &|n, m| est.phase_defined[n][m]));
    let rows = (0..est.y1.nrows())
        .map(|n| {
            (
                n,
                cols.iter()
                    .map(|&m| est.m_metric[n][m].map_or(Cell::Undefined, Cell::Value))
                    .collect(),
            )
        })
        .collect();
    tables.push(Table {
        title: "M metric".into(),
        cols: cols.clone(),
        rows,
        decimals: 4,
    });
    let mut meta = vec![("report".into(), "perturbation sweep coupling matrices".into())];
    meta.extend_from_slice(extra_meta);
    TableReport { meta, tables }
}

// ---------------------------------------------------------------- companion csv

#[derive(Clone, Debug, PartialEq)]
pub struct CompanionEntry {
    pub matrix: String,
    pub row: usize,
    pub col: usize,
    pub value: Complex64,
    pub flag: String,
}

pub const COMPANION_HEADER: &str = "matrix,row,col,re,im,flag";

pub fn render_companion(entries: &[CompanionEntry]) -> String {
    let mut s = String::from(COMPANION_HEADER);
    s.push('\n');
    for e in entries {
        let _ = writeln!(s, "{},{},{},{:e},{:e},{}", e.matrix, e.row, e.col, e.value.re, e.value.im, e.flag);
    }
    s
}

pub fn parse_companion(text: &str) -> Result<Vec<CompanionEntry>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let h: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if h.join(",") != COMPANION_HEADER {
        return Err(Error::Invalid(format!(
            "companion header `{}` (expected `{COMPANION_HEADER}`)",
            h.join(",")
        )));
    }
    rdr.records()
        .enumerate()
        .map(|(k, r)| {
            let r = r?;
            let num = |i: usize| -> Result<f64> {
                r.get(i)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| Error::Invalid(format!("companion row {}: bad number", k + 2)))
            };
            Ok(CompanionEntry {
                matrix: r.get(0).unwrap_or("").to_string(),
                row: num(1)? as usize,
                col: num(2)? as usize,
                value: Complex64::new(num(3)?, num(4)?),
                flag: r.get(5).unwrap_or("").to_string(),
            })
        })
        .collect()
}

fn matrix_entries(name: &str, y: &DMatrix<Complex64>, flag: impl Fn(usize, usize) -> &'static str) -> Vec<CompanionEntry> {
    let mut out = vec![];
    for n in 0..y.nrows() {
        for m in 0..y.ncols() {
            out.push(CompanionEntry {
                matrix: name.into(),
                row: n,
                col: m,
                value: y[(n, m)],
                flag: flag(n, m).into(),
            });
        }
    }
    out
}

pub fn analytic_companion(fcm: &AnalyticFcm) -> Vec<CompanionEntry> {
    let unb = fcm.fcm.dc_column_unbounded;
    let f = |_: usize, m: usize| if m == 0 && unb { "unbounded" } else { "" };
    let mut out = matrix_entries("Y1", &fcm.fcm.pair.y1, f);
    out.extend(matrix_entries("Y2", &fcm.fcm.pair.y2, f));
    out.extend(matrix_entries("P1", &fcm.flux.y1, |_, _| ""));
    out.extend(matrix_entries("P2", &fcm.flux.y2, |_, _| ""));
    out
}

pub fn bench_companion(est: &FcmEstimate) -> Vec<CompanionEntry> {
    let measured = |m: usize| est.measured.get(m).copied().unwrap_or(false);
    let mut out = matrix_entries("Y1", &est.y1, |_, m| if measured(m) { "" } else { "unmeasured" });
    out.extend(matrix_entries("Y2", &est.y2, |n, m| {
        if !measured(m) {
            "unmeasured"
        } else if !est.phase_defined[n][m] {
            "phase-undefined"
        } else {
            ""
        }
    }));
    let d = est.y1.nrows();
    for n in 0..d {
        for m in 0..d {
            out.push(CompanionEntry {
                matrix: "M".into(),
                row: n,
                col: m,
                value: Complex64::new(est.m_metric[n][m].unwrap_or(0.0), 0.0),
                flag: if est.m_metric[n][m].is_some() { "" } else { "undefined" }.into(),
            });
        }
    }
    out
}

// ---------------------------------------------------------------- diff

#[derive(Clone, Debug, PartialEq)]
pub struct DiffEntry {
    pub matrix: String,
    pub row: usize,
    pub col: usize,
    pub a: Complex64,
    pub b: Complex64,
    pub rel_mag: f64,
    /// Absent when either phase is undefined.
    pub phase_deg: Option<f64>,
    pub exceeds: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct DiffTolerance {
    pub rel_mag: f64,
    pub phase_deg: f64,
    pub odd_only: bool,
    /// Highest row/column compared.
    pub max_index: Option<usize>,
}

impl Default for DiffTolerance {
    fn default() -> Self {
        DiffTolerance {
            rel_mag: 0.02,
            phase_deg: 2.0,
            odd_only: false,
            max_index: None,
        }
    }
}

/// Entries below this fraction of the largest admittance in either file are
/// treated as zero in both and not compared.
pub const DIFF_NOISE_FLOOR: f64 = 1e-9;

/// Compare Y1/Y2 entries present and defined in both companions.
pub fn diff_companions(a: &[CompanionEntry], b: &[CompanionEntry], tol: &DiffTolerance) -> Vec<DiffEntry> {
    let key = |e: &CompanionEntry| (e.matrix.clone(), e.row, e.col);
    let bm: BTreeMap<_, _> = b.iter().map(|e| (key(e), e)).collect();
    let is_y = |e: &&CompanionEntry| e.matrix == "Y1" || e.matrix == "Y2";
    let scale = a.iter().chain(b).filter(is_y).map(|e| e.value.norm()).fold(0.0, f64::max);
    let floor = DIFF_NOISE_FLOOR * scale;
    let mut out = vec![];
    for ea in a {
        if ea.matrix != "Y1" && ea.matrix != "Y2" {
            continue;
        }
        if tol.odd_only && (ea.row % 2 == 0 || ea.col % 2 == 0) {
            continue;
        }
        if tol.max_index.is_some_and(|mx| ea.row > mx || ea.col > mx) {
            continue;
        }
        let Some(eb) = bm.get(&key(ea)) else { continue };
        let unusable = |f: &str| f == "unbounded" || f == "unmeasured";
        if unusable(&ea.flag) || unusable(&eb.flag) {
            continue;
        }
        let (ma, mb) = (ea.value.norm(), eb.value.norm());
        if ma <= floor && mb <= floor {
            out.push(DiffEntry {
                matrix: ea.matrix.clone(),
                row: ea.row,
                col: ea.col,
                a: ea.value,
                b: eb.value,
                rel_mag: 0.0,
                phase_deg: None,
                exceeds: false,
            });
            continue;
        }
        let rel_mag = if ma == mb {
            0.0
        } else {
            (ma - mb).abs() / ma.max(mb)
        };
        let phase_ok = ea.flag.is_empty() && eb.flag.is_empty() && ma > 0.0 && mb > 0.0;
        let phase_deg = phase_ok.then(|| (ea.value / eb.value).arg().to_degrees());
        let exceeds = rel_mag > tol.rel_mag || phase_deg.is_some_and(|p| p.abs() > tol.phase_deg);
        out.push(DiffEntry {
            matrix: ea.matrix.clone(),
            row: ea.row,
            col: ea.col,
            a: ea.value,
            b: eb.value,
            rel_mag,
            phase_deg,
            exceeds,
        });
    }
    out
}

pub fn render_diff(entries: &[DiffEntry], tol: &DiffTolerance) -> String {
    let mut s = String::new();
    let over = entries.iter().filter(|e| e.exceeds).count();
    let _ = writeln!(
        s,
        "# tolerance: {:.4} relative magnitude, {:.2} deg phase",
        tol.rel_mag, tol.phase_deg
    );
    let _ = writeln!(s, "# entries compared: {}", entries.len());
    let _ = writeln!(s, "# entries beyond tolerance: {over}");
    s.push_str("matrix,row,col,mag_a_mS,mag_b_mS,rel_mag,phase_a_deg,phase_b_deg,phase_diff_deg,status\n");
    for e in entries {
        let ph = |c: Complex64| if e.phase_deg.is_some() { format!("{:.3}", c.arg().to_degrees()) } else { "--".into() };
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.3e},{},{},{},{}",
            e.matrix,
            e.row,
            e.col,
            e.a.norm() * 1e3,
            e.b.norm() * 1e3,
            e.rel_mag,
            ph(e.a),
            ph(e.b),
            e.phase_deg.map_or("--".into(), |p| format!("{p:.3}")),
            if e.exceeds { "EXCEEDS" } else { "ok" }
        );
    }
    s
}

// ---------------------------------------------------------------- commands

#[derive(Clone, Debug, Default)]
pub struct CommandOutcome {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub summary: String,
}

/// Fit report document written next to the model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitDocument {
    pub schema_version: u32,
    pub inputs: Vec<String>,
    pub warnings: Vec<String>,
    pub report: FitReport,
}

pub fn load_model(cfg: &RunConfig) -> Result<ModelSpec> {
    let p = cfg.model_path()?;
    Ok(ModelDocument::read(&p).map_err(|e| e.at("model"))?.model)
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<CommandOutcome> {
    if cfg.fit.inputs.is_empty() {
        return Err(Error::Invalid("config: fit.inputs is empty".into()).at("ingest"));
    }
    let mut records = vec![];
    let mut names = vec![];
    for p in &cfg.fit.inputs {
        let path = cfg.resolve(p);
        let w = read_waveform_csv(&path).map_err(|e| e.at("ingest"))?;
        let dt = w.sample_interval().map_err(|e| e.at("ingest"))?;
        records.push(TestRecord {
            voltage: w.voltage,
            current: w.current,
            sample_interval: dt,
            period: cfg.period(),
        });
        names.push(p.display().to_string());
    }
    let fc = FitConfig {
        zeta_cells: cfg.fit.zeta_cells,
        gamma_samples: cfg.fit.gamma_samples,
        zeta_samples: cfg.fit.zeta_samples,
        a_candidates: cfg.fit.a_candidates.clone(),
    };
    let out = fit_model(&records, &fc).map_err(|e| e.at("fit"))?;
    let mut warnings = vec![];
    if records.len() == 1 {
        warnings.push("single amplitude supplied: the model has one γ cell".to_string());
    }
    for t in &out.report.tests {
        for d in &t.diagnostics {
            warnings.push(format!("test {}: {d}", t.test_index));
        }
    }
    for (k, m) in out.report.measures.iter().enumerate() {
        if !m.flagged.is_empty() {
            warnings.push(format!("measure m{}: {} samples skipped (vanishing denominator)", k + 1, m.flagged.len()));
        }
    }
    let model_path = cfg.model.as_ref().map(|p| cfg.resolve(p)).unwrap_or_else(|| cfg.output_path("model.json"));
    ModelDocument::new(ModelSpec::Fitted(out.model.clone())).write(&model_path)?;
    let report_path = cfg.output_path("fit_report.json");
    let doc = FitDocument {
        schema_version: MODEL_SCHEMA_VERSION,
        inputs: names,
        warnings: warnings.clone(),
        report: out.report.clone(),
    };
    write_file(&report_path, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    Ok(CommandOutcome {
        files: vec![model_path, report_path],
        warnings,
        summary: format!(
            "fitted {} tests, γ_max = {:.6} A, splitting a = {}",
            records.len(),
            out.model.gamma_max,
            out.model.a
        ),
    })
}

/// Last whole period of a recording, at the configured frequency.
fn last_period(cfg: &RunConfig, w: &Waveform, column: &[f64]) -> Result<PeriodicSignal> {
    let dt = w.sample_interval()?;
    let spp_f = cfg.period() / dt;
    let spp = spp_f.round() as usize;
    if (spp_f - spp as f64).abs() > 1e-6 * spp_f || spp < 4 {
        return Err(Error::Invalid(format!("period/sample interval = {spp_f} is not an integer ≥ 4")));
    }
    if column.len() < spp {
        return Err(Error::Invalid(format!(
            "recording has {} samples, one period needs {spp}",
            column.len()
        )));
    }
    let whole = column.len() / spp * spp;
    PeriodicSignal::new(column[whole - spp..whole].to_vec(), cfg.period())
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<CommandOutcome> {
    let model = load_model(cfg)?;
    let input = cfg
        .simulate
        .input
        .as_ref()
        .ok_or_else(|| Error::Invalid("config: simulate.input is required".into()).at("ingest"))?;
    let w = read_waveform_csv(&cfg.resolve(input)).map_err(|e| e.at("ingest"))?;
    let i = last_period(cfg, &w, &w.current).map_err(|e| e.at("ingest"))?;
    let lam = simulate(&model, &i).map_err(|e| e.at("simulate"))?;
    let mut flux = String::from("time_s,current_A,flux_Vs\n");
    let mut lp = String::from("current_A,flux_Vs\n");
    for k in 0..i.len() {
        let _ = writeln!(flux, "{},{},{}", i.time(k), i.samples()[k], lam.samples()[k]);
    }
    // the loop trace is closed: start at the global minimum and return to it
    let e = crate::preisach::global_extrema(i.samples());
    for step in 0..=i.len() {
        let k = (e.min_index + step) % i.len();
        let _ = writeln!(lp, "{},{}", i.samples()[k], lam.samples()[k]);
    }
    let fp = cfg.output_path("simulate_flux.csv");
    let lpp = cfg.output_path("simulate_loop.csv");
    write_file(&fp, &flux)?;
    write_file(&lpp, &lp)?;
    let peak = lam.samples().iter().map(|x| x.abs()).fold(0.0, f64::max);
    Ok(CommandOutcome {
        files: vec![fp, lpp],
        warnings: vec![],
        summary: format!("simulated {} samples, peak flux {peak:.6} Vs", i.len()),
    })
}

fn base_current(cfg: &RunConfig, model: &ModelSpec) -> Result<PeriodicSignal> {
    match cfg.linearize.base_solver {
        BaseSolver::BranchInversion => {
            let dev = PreisachDevice::new(model.clone(), FluxAnchor::from(cfg.dc_policy));
            dev.steady_current(&cfg.drive_signal()?)
        }
        BaseSolver::HarmonicNewton => {
            let sol = solve_base_from_voltage(
                model,
                &cfg.drive_harmonics()?,
                NewtonOptions {
                    samples: cfg.samples_per_period()?,
                    max_iter: cfg.linearize.newton_max_iter,
                    tol: cfg.linearize.newton_tol,
                    policy: cfg.dc_policy,
                },
            )?;
            Ok(sol.base.current)
        }
    }
}

fn linearize_about(cfg: &RunConfig, model: &ModelSpec, i_b: &PeriodicSignal) -> Result<AnalyticFcm> {
    let base = validate_base(i_b).map_err(|e| e.at("base validation"))?;
    analytic_fcm(
        model,
        &base,
        &LinearizeOptions {
            order: cfg.order,
            inversion_order: cfg.inversion_order,
            policy: cfg.dc_policy,
        },
    )
}

fn write_base_current(cfg: &RunConfig, i_b: &PeriodicSignal, name: &str) -> Result<PathBuf> {
    let mut s = String::from("time_s,current_A\n");
    for k in 0..i_b.len() {
        let _ = writeln!(s, "{},{}", i_b.time(k), i_b.samples()[k]);
    }
    let p = cfg.output_path(name);
    write_file(&p, &s)?;
    Ok(p)
}

fn drive_meta(cfg: &RunConfig) -> Vec<(String, String)> {
    let drive = cfg
        .drive
        .iter()
        .map(|d| format!("{}:{}Vrms@{}deg", d.harmonic, d.rms, d.phase_deg))
        .collect::<Vec<_>>()
        .join(" ");
    vec![
        ("frequency-hz".into(), cfg.frequency.to_string()),
        ("samples-per-period".into(), cfg.samples_per_period().map(|n| n.to_string()).unwrap_or_default()),
        ("drive".into(), drive),
    ]
}

pub fn cmd_linearize(cfg: &RunConfig) -> Result<CommandOutcome> {
    let model = load_model(cfg)?;
    let i_b = base_current(cfg, &model).map_err(|e| e.at("base solve"))?;
    let fcm = linearize_about(cfg, &model, &i_b)?;
    let report = analytic_report(&fcm, &drive_meta(cfg));
    let rp = cfg.output_path("fcm_report.txt");
    let cp = cfg.output_path("fcm_companion.csv");
    write_file(&rp, &report.render())?;
    write_file(&cp, &render_companion(&analytic_companion(&fcm)))?;
    let bp = write_base_current(cfg, &i_b, "base_current.csv")?;
    let y11 = fcm.fcm.pair.y1[(1, 1)];
    Ok(CommandOutcome {
        files: vec![rp, cp, bp],
        warnings: vec![],
        summary: format!(
            "Y1[1,1] = {:.6} mS ∠ {:.2}°, policy {}",
            y11.norm() * 1e3,
            y11.arg().to_degrees(),
            cfg.dc_policy
        ),
    })
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<CommandOutcome> {
    let harmonics = cfg.bench_harmonics();
    let settings = SweepSettings {
        dv: cfg.bench.dv,
        harmonics: harmonics.clone(),
        nphi: cfg.bench.nphi,
        order: cfg.order,
    };
    let v = cfg.drive_signal()?;
    let model = match cfg.bench.device {
        DeviceSpec::Model => Some(load_model(cfg)?),
        _ => None,
    };
    let device: Box<dyn VoltageDevice> = match &cfg.bench.device {
        DeviceSpec::Model => Box::new(PreisachDevice::new(model.clone().unwrap(), FluxAnchor::from(cfg.dc_policy))),
        DeviceSpec::LinearInductor { inductance } => Box::new(LinearInductor { inductance: *inductance }),
        DeviceSpec::Rl { resistance, centre } => Box::new(RlDevice::new(*resistance, centre.clone())),
    };
    let sweep = perturb_sweep(device.as_ref(), &v, &settings).map_err(|e| e.at("sweep"))?;
    let est = circle_fit(&sweep.records, &sweep.base_current, settings.nphi).map_err(|e| e.at("circle fit"))?;
    let mut meta = drive_meta(cfg);
    meta.push(("dv-volts".into(), cfg.bench.dv.to_string()));
    meta.push(("phase-steps".into(), cfg.bench.nphi.to_string()));
    meta.push(("sweep-points".into(), sweep.records.len().to_string()));
    meta.push(("failed-points".into(), sweep.failures.len().to_string()));
    let rp = cfg.output_path("bench_report.txt");
    let cp = cfg.output_path("bench_companion.csv");
    let fp = cfg.output_path("bench_failures.csv");
    write_file(&rp, &bench_report(&est, &harmonics, &meta).render())?;
    let bench_entries = bench_companion(&est);
    write_file(&cp, &render_companion(&bench_entries))?;
    let mut failures = String::from("harmonic,phase_index,error\n");
    for f in &sweep.failures {
        let _ = writeln!(failures, "{},{},\"{}\"", f.harmonic, f.phase_index, f.error.replace('"', "'"));
    }
    write_file(&fp, &failures)?;
    let mut files = vec![rp, cp, fp];
    let mut warnings: Vec<String> = sweep
        .failures
        .iter()
        .map(|f| format!("sweep point m={} φ={} failed: {}", f.harmonic, f.phase_index, f.error))
        .collect();
    let mut summary = format!("{} sweep points, {} failed", sweep.records.len(), sweep.failures.len());
    if let Some(model) = &model {
        // analytic counterpart about the same base current, for side-by-side review
        match linearize_about(cfg, model, &sweep.base_current_samples) {
            Ok(fcm) => {
                let ap = cfg.output_path("fcm_report.txt");
                let acp = cfg.output_path("fcm_companion.csv");
                let dp = cfg.output_path("bench_vs_analytic.csv");
                write_file(&ap, &analytic_report(&fcm, &drive_meta(cfg)).render())?;
                let a_entries = analytic_companion(&fcm);
                write_file(&acp, &render_companion(&a_entries))?;
                let tol = DiffTolerance::default();
                let diff = diff_companions(&a_entries, &bench_entries, &tol);
                write_file(&dp, &render_diff(&diff, &tol))?;
                let over = diff.iter().filter(|e| e.exceeds && e.row % 2 == 1 && e.col % 2 == 1).count();
                summary.push_str(&format!("; {over} odd-odd entries beyond tolerance vs analytic"));
                files.extend([ap, acp, dp]);
            }
            Err(e) => warnings.push(format!("analytic comparison skipped: {e}")),
        }
    }
    Ok(CommandOutcome { files, warnings, summary })
}

pub fn cmd_report_diff(a: &Path, b: &Path, tol: &DiffTolerance, out: Option<&Path>) -> Result<CommandOutcome> {
    let ea = parse_companion(&fs::read_to_string(a)?).map_err(|e| e.at("read first report"))?;
    let eb = parse_companion(&fs::read_to_string(b)?).map_err(|e| e.at("read second report"))?;
    let diff = diff_companions(&ea, &eb, tol);
    let text = render_diff(&diff, tol);
    let mut files = vec![];
    if let Some(p) = out {
        write_file(p, &text)?;
        files.push(p.to_path_buf());
    }
    let over = diff.iter().filter(|e| e.exceeds).count();
    Ok(CommandOutcome {
        files,
        warnings: vec![],
        summary: if out.is_some() {
            format!("{} entries compared, {over} beyond tolerance", diff.len())
        } else {
            text
        },
    })
}

/// Synthetic open-circuit recordings of the configured model, one per amplitude.
pub fn cmd_synth(cfg: &RunConfig) -> Result<CommandOutcome> {
    let model = load_model(cfg)?;
    let n = cfg.samples_per_period()?;
    let dev = PreisachDevice::new(model, FluxAnchor::FluxMean);
    let cycles = cfg.synth.cycles.max(2);
    let mut files = vec![];
    for (k, &rms) in cfg.synth.amplitudes_rms.iter().enumerate() {
        let w = cfg.omega();
        let v = PeriodicSignal::from_fn(n, cfg.period(), |t| rms * 2f64.sqrt() * (w * t).sin()).map_err(|e| e.at("synth"))?;
        let i = dev.steady_current(&v).map_err(|e| e.at("synth"))?;
        let wf = Waveform {
            time: (0..n * cycles).map(|s| s as f64 / cfg.sample_rate).collect(),
            voltage: (0..n * cycles).map(|s| v.samples()[s % n]).collect(),
            current: (0..n * cycles).map(|s| i.samples()[s % n]).collect(),
        };
        let p = cfg.output_path(&format!("synth_{:02}.csv", k + 1));
        write_waveform_csv(&p, &wf)?;
        files.push(p);
    }
    Ok(CommandOutcome {
        summary: format!("wrote {} recordings", files.len()),
        files,
        warnings: vec![],
    })
}

