//! JSON-configured pipeline: resolve a catalog surface, run analysis and
//! transform steps in order, and write one report per step.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::conformal::{
    canonical_lift, conformal_gcr_residuals, conformal_invariants, dictionary_defects, embed, lift_catalog,
    lifted_seed, transform_field, willmore, ConformalFrame, ConformalInvariants,
};
use crate::error::{Error, Result};
use crate::gridcalc::{Field, GridSpec, Scheme};
use crate::isometric::isometric_invariants;
use crate::polar::{
    dual_lift, from_coords, moduli_sample, polar_metric, polar_transform, product_polar_seed,
    sphere_section_coords, verify_polar, ModuliOptions, PolarSurface,
};
use crate::pseudolinalg::random_isometry;
use crate::surfaces::{Ambient, SurfaceDef};
use crate::tolerances::Tolerances;
use crate::transforms::{
    darboux_construct, darboux_verify, permute_darboux, permute_spectral, spectral_transform, DarbouxTransform,
    SpectralTransform,
};

pub const SCHEMA_VERSION: &str = "1.0.0";

pub fn report_schema_version() -> &'static str {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    pub name: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_n")]
    pub nu: usize,
    #[serde(default = "default_n")]
    pub nv: usize,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
}

fn default_n() -> usize {
    64
}

fn default_scheme() -> Scheme {
    Scheme::Spectral
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { nu: 64, nv: 64, scheme: Scheme::Spectral }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Write `grid_<field>.csv` files next to the reports.
    #[serde(default = "yes")]
    pub csv: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: None, csv: true }
    }
}

/// A complex number given either as a real or as `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComplexParam {
    Real(f64),
    Pair([f64; 2]),
}

impl ComplexParam {
    pub fn value(self) -> Complex64 {
        match self {
            ComplexParam::Real(x) => Complex64::new(x, 0.0),
            ComplexParam::Pair([a, b]) => Complex64::new(a, b),
        }
    }
}

fn default_mu0() -> ComplexParam {
    ComplexParam::Real(1.0)
}

fn one() -> f64 {
    1.0
}

fn default_count() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Step {
    Analyze,
    /// Polar transform with `<ψ,ψ> = c`. The seed is, in order of
    /// preference: an ambient vector, parallel-basis coordinates, or the
    /// angle of a product surface's normal `n^θ`.
    Polar {
        #[serde(default = "one")]
        c: f64,
        #[serde(default)]
        theta: Option<f64>,
        #[serde(default)]
        coords: Option<Vec<f64>>,
        #[serde(default)]
        seed: Option<Vec<f64>>,
    },
    Moduli {
        #[serde(default = "one")]
        c: f64,
        #[serde(default = "default_count")]
        count: usize,
        #[serde(default)]
        require_full: bool,
    },
    Spectral {
        c_tilde: f64,
    },
    /// `ξ_0` defaults to `2 Re κ + eps ψ_1` at the base node, in the
    /// adapted coordinate.
    Darboux {
        theta: f64,
        #[serde(default = "default_mu0")]
        mu0: ComplexParam,
        #[serde(default)]
        xi0: Option<Vec<f64>>,
        #[serde(default)]
        eps: f64,
    },
    PermuteSpectral {
        c_tilde: f64,
    },
    /// Uses the latest `darboux` step unless `theta` is given.
    PermuteDarboux {
        #[serde(default)]
        theta: Option<f64>,
        #[serde(default = "default_mu0")]
        mu0: ComplexParam,
        #[serde(default)]
        xi0: Option<Vec<f64>>,
        #[serde(default)]
        eps: f64,
    },
    VerifyAll,
}

impl Step {
    pub fn name(&self) -> &'static str {
        match self {
            Step::Analyze => "analyze",
            Step::Polar { .. } => "polar",
            Step::Moduli { .. } => "moduli",
            Step::Spectral { .. } => "spectral",
            Step::Darboux { .. } => "darboux",
            Step::PermuteSpectral { .. } => "permute-spectral",
            Step::PermuteDarboux { .. } => "permute-darboux",
            Step::VerifyAll => "verify-all",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub surface: SurfaceConfig,
    #[serde(default)]
    pub grid: GridConfig,
    pub pipeline: Vec<Step>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputConfig,
    /// Seed for sampled moduli and random Möbius motions.
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    7
}

fn finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be finite")))
    }
}

fn nonzero_theta(theta: f64) -> Result<()> {
    finite("theta", theta)?;
    if theta == 0.0 {
        return Err(Error::Config("Darboux transforms need a non-zero theta".into()));
    }
    Ok(())
}

impl JobConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: JobConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Parameter ranges and step ordering.
    pub fn validate(&self) -> Result<()> {
        if self.pipeline.is_empty() {
            return Err(Error::Config("empty pipeline".into()));
        }
        if self.grid.nu < 8 || self.grid.nv < 8 {
            return Err(Error::Config("grid needs at least 8 points per axis".into()));
        }
        let mut polar = false;
        let mut darboux = false;
        for step in &self.pipeline {
            match step {
                Step::Polar { c, theta, .. } => {
                    finite("c", *c)?;
                    finite("theta", theta.unwrap_or(0.0))?;
                    polar = true;
                }
                Step::Moduli { c, count, .. } => {
                    finite("c", *c)?;
                    if *count < 2 {
                        return Err(Error::Config("moduli needs at least 2 samples".into()));
                    }
                }
                Step::Spectral { c_tilde } => finite("c_tilde", *c_tilde)?,
                Step::Darboux { theta, eps, .. } => {
                    nonzero_theta(*theta)?;
                    finite("eps", *eps)?;
                    darboux = true;
                }
                Step::PermuteSpectral { c_tilde } => {
                    finite("c_tilde", *c_tilde)?;
                    if !polar {
                        return Err(Error::Config("permute-spectral needs an earlier polar step".into()));
                    }
                }
                Step::PermuteDarboux { theta, eps, .. } => {
                    match theta {
                        Some(t) => nonzero_theta(*t)?,
                        None if !darboux => {
                            return Err(Error::Config(
                                "permute-darboux needs theta or an earlier darboux step".into(),
                            ))
                        }
                        None => {}
                    }
                    finite("eps", *eps)?;
                    if !polar {
                        return Err(Error::Config("permute-darboux needs an earlier polar step".into()));
                    }
                }
                Step::Analyze | Step::VerifyAll => {}
            }
        }
        Ok(())
    }

    pub fn surface_def(&self) -> Result<SurfaceDef> {
        SurfaceDef::from_config(&self.surface.name, &self.surface.params)
    }

    pub fn grid_spec(&self, def: &SurfaceDef) -> Result<GridSpec> {
        def.grid_with(self.grid.nu, self.grid.nv, self.grid.scheme)
    }
}

/// Parse `NUxNV`.
pub fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("grid '{s}' is not of the form NUxNV"));
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub value: Option<f64>,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepReport {
    pub schema_version: &'static str,
    pub step: String,
    pub index: usize,
    pub parameters: Value,
    pub tolerances: Tolerances,
    pub checks: BTreeMap<String, Check>,
    pub values: BTreeMap<String, Value>,
    pub error: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepSummary {
    pub step: String,
    pub report: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub schema_version: &'static str,
    pub surface: String,
    pub params: BTreeMap<String, f64>,
    pub grid: GridSpec,
    pub tolerances: Tolerances,
    pub steps: Vec<StepSummary>,
    pub pass: bool,
}

/// Everything a run produced, already written to `dir`.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: Summary,
    pub reports: Vec<StepReport>,
    pub dir: PathBuf,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.summary.pass {
            0
        } else {
            1
        }
    }
}

/// Errors caused by the configuration rather than by the numerics.
pub fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_) | Error::Parameter(_) | Error::Seed(_) | Error::Dimension { .. } | Error::Io(_)
    )
}

pub fn exit_code(e: &Error) -> i32 {
    if is_config_error(e) {
        2
    } else {
        1
    }
}

struct Builder {
    tol: Tolerances,
    checks: BTreeMap<String, Check>,
    values: BTreeMap<String, Value>,
    fields: Vec<(String, Field)>,
}

impl Builder {
    fn new(tol: Tolerances) -> Self {
        Self { tol, checks: BTreeMap::new(), values: BTreeMap::new(), fields: Vec::new() }
    }

    fn check_with(&mut self, name: &str, value: f64, tol: f64) {
        let pass = value.is_finite() && value <= tol;
        let value = value.is_finite().then_some(value);
        self.checks.insert(name.into(), Check { value, tol, pass });
    }

    fn check(&mut self, name: &str, value: f64) {
        self.check_with(name, value, self.tol.check_tol);
    }

    /// One check per numeric field of `report`, except `skip`.
    fn checks_from<T: Serialize>(&mut self, prefix: &str, report: &T, skip: &[&str]) {
        let Ok(Value::Object(map)) = serde_json::to_value(report) else {
            return;
        };
        for (k, v) in map {
            let name = format!("{prefix}{k}");
            match v.as_f64() {
                Some(x) if !skip.contains(&k.as_str()) => self.check(&name, x),
                _ => {
                    self.values.insert(name, v);
                }
            }
        }
    }

    fn value<T: Serialize>(&mut self, name: &str, v: T) {
        let v = serde_json::to_value(v).unwrap_or(Value::Null);
        self.values.insert(name.into(), v);
    }

    fn field(&mut self, name: &str, f: &Field) {
        self.fields.push((name.into(), f.clone()));
    }
}

struct State<'a> {
    def: &'a SurfaceDef,
    frame: &'a ConformalFrame,
    inv: &'a ConformalInvariants,
    polar: Option<PolarSurface<'a>>,
    spectral: Vec<SpectralTransform>,
    darboux: Option<DarbouxTransform>,
    seed: u64,
}

fn default_coords(frame: &ConformalFrame, c: f64) -> Result<Vec<f64>> {
    let m = frame.rank();
    let pick = |sign: f64| frame.signs.iter().position(|&e| e == sign);
    let mut x = vec![0.0; m];
    if c == 0.0 {
        match (pick(1.0), pick(-1.0)) {
            (Some(a), Some(b)) => {
                x[a] = 1.0;
                x[b] = 1.0;
            }
            _ => return Err(Error::Parameter("definite normal bundle has no null sections".into())),
        }
    } else {
        let a = pick(c.signum()).ok_or_else(|| Error::Parameter(format!("no normal direction with sign of c = {c}")))?;
        x[a] = c.abs().sqrt();
    }
    Ok(x)
}

fn base_xi(frame: &ConformalFrame, inv: &ConformalInvariants, eps: f64) -> Vec<f64> {
    let b = frame.y.spec().base_index();
    let rot = Complex64::from_polar(1.0, -2.0 * frame.phase);
    let k = frame.normal_basis.len().min(2).saturating_sub(1);
    (0..frame.y.sig().dim())
        .map(|i| 2.0 * (rot * inv.kappa.at(b)[i]).re + eps * frame.normal_basis[k].at(b)[i].re)
        .collect()
}

impl<'a> State<'a> {
    fn analyze(&mut self, out: &mut Builder) -> Result<()> {
        let (frame, inv) = (self.frame, self.inv);
        let d = frame.defects();
        out.checks_from("frame_", &d, &[]);
        out.check("structure", crate::conformal::structure_defect(frame, &inv.kappa, &inv.s));
        out.checks_from("conformal_", &conformal_gcr_residuals(frame, inv), &[]);
        out.value("isothermic_defect", inv.imaginary_defect(frame));
        out.value("rank", frame.rank());
        out.value("signs", &frame.signs);
        out.value("holonomy", frame.holonomy);
        out.value("masked_points", frame.masked_count());
        out.value("omega_range", inv.omega_range(frame));
        out.value("willmore", willmore(frame, inv).ok());
        out.field("y", &frame.y);
        out.field("kappa", &inv.kappa);
        out.field("schwarzian", &inv.s);
        out.field("kappa_norm", &inv.g);
        Ok(())
    }

    fn polar(
        &mut self,
        c: f64,
        theta: Option<f64>,
        coords: Option<&Vec<f64>>,
        seed: Option<&Vec<f64>>,
        tol: &Tolerances,
        out: &mut Builder,
    ) -> Result<()> {
        let (frame, inv) = (self.frame, self.inv);
        let ps = if let Some(s) = seed {
            polar_transform(frame, inv, s, c, tol)?
        } else if let Some(x) = coords {
            from_coords(frame, inv, x.clone(), c, tol)?
        } else if let Some(t) = theta {
            if c != 1.0 {
                return Err(Error::Parameter("product seeds have <psi,psi> = 1".into()));
            }
            polar_transform(frame, inv, &product_polar_seed(self.def, frame, t)?, c, tol)?
        } else if let Some(x) = sphere_section_coords(frame).filter(|_| c == 1.0) {
            from_coords(frame, inv, x, c, tol)?
        } else {
            from_coords(frame, inv, default_coords(frame, c)?, c, tol)?
        };
        out.value("coords", &ps.coords);
        out.value("target", ps.target);
        out.value("twist", ps.twist);
        out.value("mask_fraction", ps.mask_fraction());
        out.checks_from("", &verify_polar(&ps), &[]);
        let dl = dual_lift(&ps, tol)?;
        out.check("duality", dl.duality);
        out.check("minimal_section", dl.minimal);
        if ps.twist == [0.0, 0.0] {
            let pm = polar_metric(&ps, tol)?;
            out.check("metric_formula", pm.discrepancy);
            out.check("metric_imag", pm.imag);
            out.value("willmore_formula", pm.willmore_formula);
            out.value("willmore_pipeline", pm.willmore_pipeline);
            if let (Some(wp), Ok(w)) = (pm.willmore_pipeline, willmore(frame, inv)) {
                out.check("willmore_invariance", (wp - w).abs());
            }
            out.field("polar_metric", &pm.formula);
        }
        out.field("psi", &ps.psi);
        self.polar = Some(ps);
        Ok(())
    }

    fn moduli(&mut self, c: f64, count: usize, require_full: bool, tol: &Tolerances, out: &mut Builder) -> Result<()> {
        let opts = ModuliOptions { require_full, rng_seed: self.seed, ..ModuliOptions::default() };
        let (_, report) = moduli_sample(self.frame, self.inv, c, count, &opts, tol)?;
        out.value("class_count", report.class_count);
        out.value("classes", &report.classes);
        out.value("seeds", &report.seeds);
        out.value("full", report.full);
        out.value("orthogonal", &report.orthogonal);
        out.value("min_pairwise_first_form", report.min_pairwise_ff);
        Ok(())
    }

    fn spectral(&mut self, c_tilde: f64, tol: &Tolerances) -> Result<usize> {
        if let Some(i) = self.spectral.iter().position(|st| st.c_tilde == c_tilde) {
            return Ok(i);
        }
        self.spectral.push(spectral_transform(self.frame, self.inv, c_tilde, None, tol)?);
        Ok(self.spectral.len() - 1)
    }

    fn report_spectral(&self, i: usize, tol: &Tolerances, out: &mut Builder) {
        let st = &self.spectral[i];
        let r = st.residuals;
        out.check_with("compat", r.compat, tol.compat_tol);
        out.check("schwarzian", r.schwarzian);
        out.check("kappa_norm", r.kappa_norm);
        out.check("isothermic", r.isothermic);
        if st.c_tilde == 0.0 {
            out.check("congruence", r.congruence);
        } else {
            out.value("congruence", r.congruence);
        }
        out.value("closure", r.closure);
        out.value("closed", st.closed);
        out.field("spectral_y", &st.y_out);
    }

    fn darboux(&self, theta: f64, mu0: ComplexParam, xi0: Option<&Vec<f64>>, eps: f64, tol: &Tolerances) -> Result<DarbouxTransform> {
        let xi = match xi0 {
            Some(x) => x.clone(),
            None => base_xi(self.frame, self.inv, eps),
        };
        darboux_construct(self.frame, self.inv, theta, mu0.value(), &xi, tol)
    }

    fn report_darboux(&self, dt: &DarbouxTransform, tol: &Tolerances, out: &mut Builder) {
        out.check_with("compat", dt.compat, tol.compat_tol);
        out.checks_from("", &darboux_verify(self.frame, self.inv, dt), &["theta_mean"]);
        out.value("closed", dt.closed);
        out.field("darboux_y", &dt.y_star);
        out.field("mu", &dt.mu);
    }

    fn verify_all(&self, tol: &Tolerances, out: &mut Builder) -> Result<()> {
        let (frame, inv) = (self.frame, self.inv);
        out.checks_from("conformal_", &conformal_gcr_residuals(frame, inv), &[]);
        let spec = *frame.y.spec();
        if let Ambient::SpaceForm { c, .. } = self.def.ambient() {
            let x = self.def.sample(&spec);
            let iso = isometric_invariants(&x, c, None, tol)?;
            out.checks_from("isometric_", &iso.gcr_residuals(), &[]);
            if c == 0.0 {
                let seed = lifted_seed(&iso);
                let seeded = canonical_lift(&embed(&x, 0.0, tol)?, Some(&seed), tol)?;
                let sinv = conformal_invariants(&seeded);
                out.checks_from("dictionary_", &dictionary_defects(&iso, &seeded, &sinv)?, &[]);
            }
        }
        let t = random_isometry(frame.y.sig(), 0.5, self.seed);
        let moved = canonical_lift(&transform_field(&t, &frame.y)?, None, tol)?.with_phase(frame.phase);
        let minv = conformal_invariants(&moved);
        let pts: Vec<usize> = frame.points().into_iter().filter(|&p| moved.mask[p]).collect();
        let dg = pts.iter().map(|&p| (inv.g.val(p) - minv.g.val(p)).norm()).fold(0.0, f64::max);
        out.check("mobius_kappa_norm", dg);
        if let (Ok(w), Ok(wm)) = (willmore(frame, inv), willmore(&moved, &minv)) {
            out.check("mobius_willmore", (w - wm).abs());
        }
        Ok(())
    }

    fn run_step(&mut self, step: &Step, tol: &Tolerances, out: &mut Builder) -> Result<()> {
        match step {
            Step::Analyze => self.analyze(out),
            Step::Polar { c, theta, coords, seed } => self.polar(*c, *theta, coords.as_ref(), seed.as_ref(), tol, out),
            Step::Moduli { c, count, require_full } => self.moduli(*c, *count, *require_full, tol, out),
            Step::Spectral { c_tilde } => {
                let i = self.spectral(*c_tilde, tol)?;
                self.report_spectral(i, tol, out);
                Ok(())
            }
            Step::Darboux { theta, mu0, xi0, eps } => {
                let dt = self.darboux(*theta, *mu0, xi0.as_ref(), *eps, tol)?;
                self.report_darboux(&dt, tol, out);
                self.darboux = Some(dt);
                Ok(())
            }
            Step::PermuteSpectral { c_tilde } => {
                let i = self.spectral(*c_tilde, tol)?;
                let ps = self.polar.as_ref().ok_or_else(|| Error::Config("no polar surface".into()))?;
                let dg = permute_spectral(self.frame, self.inv, ps, &self.spectral[i], tol)?;
                out.checks_from("", &dg, &["c_tilde"]);
                out.check("composite", dg.composite());
                Ok(())
            }
            Step::PermuteDarboux { theta, mu0, xi0, eps } => {
                let own;
                let dt = match theta {
                    Some(t) => {
                        own = self.darboux(*t, *mu0, xi0.as_ref(), *eps, tol)?;
                        &own
                    }
                    None => self.darboux.as_ref().ok_or_else(|| Error::Config("no darboux transform".into()))?,
                };
                let ps = self.polar.as_ref().ok_or_else(|| Error::Config("no polar surface".into()))?;
                let dg = permute_darboux(self.frame, self.inv, ps, dt, tol)?;
                out.checks_from("", &dg, &["theta", "theta_recovered"]);
                out.check("composite", dg.composite());
                Ok(())
            }
            Step::VerifyAll => self.verify_all(tol, out),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_field(dir: &Path, name: &str, f: &Field) -> Result<()> {
    let file = fs::File::create(dir.join(format!("grid_{name}.csv")))?;
    f.write_csv(std::io::BufWriter::new(file))
}

fn unique_name(used: &mut BTreeMap<String, usize>, name: &str) -> String {
    let n = used.entry(name.to_string()).or_insert(0);
    *n += 1;
    if *n == 1 {
        name.to_string()
    } else {
        format!("{name}_{n}")
    }
}

/// Run the pipeline and write reports into `dir`. Configuration problems
/// come back as errors; numerical failures are recorded in the reports.
pub fn run(cfg: &JobConfig, dir: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let def = cfg.surface_def()?;
    let spec = cfg.grid_spec(&def)?;
    let tol = cfg.tolerances;
    fs::create_dir_all(dir)?;

    let mut reports = Vec::new();
    let mut steps = Vec::new();
    let mut used = BTreeMap::new();
    let lifted = lift_catalog(&def, &spec, &tol);
    let lift_error = lifted.as_ref().err().cloned();
    if let Some(e) = lift_error {
        if is_config_error(&e) {
            return Err(e);
        }
        let report = StepReport {
            schema_version: SCHEMA_VERSION,
            step: "lift".into(),
            index: 0,
            parameters: Value::Null,
            tolerances: tol,
            checks: BTreeMap::new(),
            values: BTreeMap::new(),
            error: Some(e.to_string()),
            pass: false,
        };
        write_json(&dir.join("report_lift.json"), &report)?;
        steps.push(StepSummary { step: "lift".into(), report: "report_lift.json".into(), pass: false });
        reports.push(report);
    }

    if let Ok((frame, inv)) = &lifted {
        let mut state = State {
            def: &def,
            frame,
            inv,
            polar: None,
            spectral: Vec::new(),
            darboux: None,
            seed: cfg.seed,
        };
        for (index, step) in cfg.pipeline.iter().enumerate() {
            let mut out = Builder::new(tol);
            let result = state.run_step(step, &tol, &mut out);
            let error = match result {
                Err(e) if is_config_error(&e) => return Err(e),
                Err(e) => Some(e.to_string()),
                Ok(()) => None,
            };
            let pass = error.is_none() && out.checks.values().all(|c| c.pass);
            let mut parameters = serde_json::to_value(step).unwrap_or(Value::Null);
            if let Value::Object(m) = &mut parameters {
                m.remove("step");
            }
            let name = unique_name(&mut used, step.name());
            let file = format!("report_{name}.json");
            let report = StepReport {
                schema_version: SCHEMA_VERSION,
                step: step.name().into(),
                index,
                parameters,
                tolerances: tol,
                checks: out.checks,
                values: out.values,
                error,
                pass,
            };
            write_json(&dir.join(&file), &report)?;
            if cfg.output.csv {
                for (field, f) in &out.fields {
                    write_field(dir, field, f)?;
                }
            }
            steps.push(StepSummary { step: step.name().into(), report: file, pass });
            let failed = report.error.is_some();
            reports.push(report);
            if failed {
                break;
            }
        }
    }

    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        surface: def.name.clone(),
        params: def.params.iter().cloned().collect(),
        grid: spec,
        tolerances: tol,
        pass: steps.iter().all(|s| s.pass),
        steps,
    };
    write_json(&dir.join("report_summary.json"), &summary)?;
    Ok(Outcome { summary, reports, dir: dir.to_path_buf() })
}
