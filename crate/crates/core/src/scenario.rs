//! Named scenarios: configuration, presets, checks and reports shared by the
//! command line tool and the acceptance suite.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::courant::{self, random::random_poly, random::random_section, ClosedThreeForm, GeneralizedSection, LagrangianFrame};
use crate::duality::{self, DualityScenario, LeafKind, SweepOrder};
use crate::equivariant::{self, DoubleModel, PolyConnection, PrincipalConnection};
use crate::error::{Error, Result};
use crate::liealg::{abelian_constants, aff1_constants, su2_constants, AlgebraFile, Subspace};
use crate::poly::{Form, FormJson, Poly, PolyJson};
use crate::reduction::{self, graph_subspace, Side, SplittingRule};
use crate::sampling::{cube, halton_box};
use crate::sigma::{self, ChartMap, DataPreset, EdgeFlag, InitialData, LightConeLattice};
use crate::study::{convergence_order, Order};

#[derive(Clone, Copy, Debug, PartialEq, Hash, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Axioms,
    Reduce,
    Dualize,
    Branes,
    Noether,
}

impl std::str::FromStr for Kind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| Error::Config(format!("unknown scenario kind '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Hash, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    StandardCa,
    AbelianR4,
    AbelianSelfdual,
    #[serde(rename = "semiabelian-2d")]
    Semiabelian2d,
    SemiabelianSu2,
    BranesAbelian,
}

impl Preset {
    pub const ALL: [Preset; 6] =
        [Preset::StandardCa, Preset::AbelianR4, Preset::AbelianSelfdual, Preset::Semiabelian2d, Preset::SemiabelianSu2, Preset::BranesAbelian];

    pub fn name(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
    }
}

/// `"calibrate"` or a fixed normalization of the 3-form on the double.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KappaSpec {
    Fixed(f64),
    Named(String),
}

/// Chart, 3-form and sections for an axiom check on `R^dim`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AxiomFile {
    pub dim: usize,
    pub h: FormJson,
    pub sections: Vec<SectionJson>,
    pub function: PolyJson,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SectionJson {
    pub u: Vec<PolyJson>,
    pub alpha: FormJson,
}

impl SectionJson {
    fn build(&self, n: usize) -> Result<GeneralizedSection> {
        if self.u.len() != n {
            return Err(Error::Config("section vector part has the wrong length".into()));
        }
        let comps = self.u.iter().map(|p| Poly::from_json(n, p)).collect::<Result<Vec<_>>>()?;
        GeneralizedSection::new(crate::poly::VectorField { comps }, Form::from_json(n, &self.alpha)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: Kind,
    #[serde(default)]
    pub preset: Option<Preset>,
    /// Algebra definition file (relative paths resolve against the config file).
    #[serde(default)]
    pub algebra: Option<PathBuf>,
    #[serde(default)]
    pub kappa: Option<KappaSpec>,
    /// Chart, `H` and sections for `axioms`.
    #[serde(default)]
    pub axiom_file: Option<PathBuf>,
    #[serde(default)]
    pub side: Option<Side>,
    #[serde(default)]
    pub rule: Option<SplittingRule>,
    /// `R_D` as the graph of a matrix `m`: `span(e_i + sum_j m_ji e*_j)`.
    #[serde(default)]
    pub r_graph: Option<Vec<Vec<f64>>>,
    /// `R_D` by basis vectors in `d`.
    #[serde(default)]
    pub r_d: Option<Vec<Vec<f64>>>,
    /// Brane subalgebra `C_D` by basis vectors in `d`.
    #[serde(default)]
    pub c_d: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub lattice: Option<LatticeConfig>,
    /// Initial data preset for the critical maps.
    #[serde(default)]
    pub data: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Divisors of the base lattice step.
    #[serde(default)]
    pub convergence_levels: Option<Vec<usize>>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub n: usize,
    #[serde(default = "one")]
    pub t: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub axioms: f64,
    pub curvature: f64,
    pub equivariance: f64,
    pub coherence: f64,
    pub exact: f64,
    pub seed_equivariance: f64,
    pub flow: f64,
    pub dirac_leaf: f64,
    pub min_order: f64,
    pub random_slope: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            axioms: 1e-9,
            curvature: 1e-12,
            equivariance: 1e-9,
            coherence: 1e-8,
            exact: 1e-12,
            seed_equivariance: 1e-9,
            flow: 1e-10,
            dirac_leaf: 1e-10,
            min_order: 1.9,
            random_slope: 0.2,
        }
    }
}

impl ScenarioConfig {
    pub fn preset(kind: Kind, preset: Preset) -> Self {
        Self {
            kind,
            preset: Some(preset),
            algebra: None,
            kappa: None,
            axiom_file: None,
            side: None,
            rule: None,
            r_graph: None,
            r_d: None,
            c_d: None,
            lattice: None,
            data: None,
            seed: None,
            convergence_levels: None,
            samples: None,
            tolerances: Tolerances::default(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::File(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Referenced files exist and kind-specific fields are present.
    pub fn validate(&self) -> Result<()> {
        for p in [&self.algebra, &self.axiom_file].into_iter().flatten() {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(Error::File(format!("referenced file {} does not exist", full.display())));
            }
        }
        let has_model = self.preset.is_some() || self.algebra.is_some();
        let ok = match self.kind {
            Kind::Axioms => self.preset.is_some() || self.axiom_file.is_some(),
            Kind::Reduce => has_model,
            Kind::Dualize | Kind::Noether => has_model && (self.preset.is_some() || self.r_graph.is_some() || self.r_d.is_some()),
            Kind::Branes => has_model && (self.preset.is_some() || self.c_d.is_some()),
        };
        if !ok {
            return Err(Error::Config(format!("missing required fields for kind {:?}", self.kind)));
        }
        if let Some(levels) = &self.convergence_levels {
            if levels.len() < 3 || levels.iter().any(|l| *l == 0) {
                return Err(Error::Config("convergence_levels needs at least 3 positive divisors".into()));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(7)
    }

    pub fn samples(&self) -> usize {
        self.samples.unwrap_or(128)
    }

    pub fn levels(&self) -> Vec<usize> {
        self.convergence_levels.clone().unwrap_or_else(|| vec![1, 2, 4])
    }

    pub fn rule(&self) -> SplittingRule {
        self.rule.unwrap_or_default()
    }

    pub fn model(&self) -> Result<DoubleModel> {
        if let Some(p) = &self.algebra {
            let full = self.resolve(p);
            let text = std::fs::read_to_string(&full).map_err(|e| Error::File(format!("{}: {e}", full.display())))?;
            let file: AlgebraFile = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", full.display())))?;
            let (triple, group) = file.build()?;
            let mut model = DoubleModel::new(triple, group, 0.0)?;
            model.kappa = match &self.kappa {
                Some(KappaSpec::Fixed(k)) => *k,
                Some(KappaSpec::Named(s)) if s == "calibrate" => equivariant::calibrate_kappa(&model, &PrincipalConnection::maurer_cartan(model.dim()))?,
                Some(KappaSpec::Named(s)) => return Err(Error::Config(format!("kappa must be a number or \"calibrate\", got '{s}'"))),
                None => equivariant::calibrate_kappa(&model, &PrincipalConnection::maurer_cartan(model.dim()))?,
            };
            return Ok(model);
        }
        match self.preset {
            Some(Preset::AbelianR4 | Preset::AbelianSelfdual | Preset::BranesAbelian | Preset::StandardCa) => DoubleModel::semiabelian(&abelian_constants(1), None),
            Some(Preset::Semiabelian2d) => DoubleModel::semiabelian(&aff1_constants(), None),
            Some(Preset::SemiabelianSu2) => DoubleModel::semiabelian(&su2_constants(), None),
            None => Err(Error::Config("no algebra file or preset given".into())),
        }
    }

    pub fn side(&self) -> Side {
        self.side.unwrap_or(Side::GPrime)
    }

    pub fn r_d(&self, model: &DoubleModel) -> Result<Subspace> {
        let n = model.dim();
        if let Some(rows) = &self.r_graph {
            let k = rows.len();
            if 2 * k != n || rows.iter().any(|r| r.len() != k) {
                return Err(Error::Config("r_graph must be a dim(g) x dim(g) matrix".into()));
            }
            return Ok(graph_subspace(&DMatrix::from_fn(k, k, |i, j| rows[i][j])));
        }
        if let Some(vs) = &self.r_d {
            return basis_subspace(vs, n);
        }
        let k = n / 2;
        Ok(match self.preset {
            Some(Preset::AbelianR4 | Preset::BranesAbelian) => graph_subspace(&DMatrix::from_element(1, 1, 4.0)),
            _ => graph_subspace(&DMatrix::identity(k, k)),
        })
    }

    pub fn c_d(&self, model: &DoubleModel) -> Result<Subspace> {
        match &self.c_d {
            Some(vs) => basis_subspace(vs, model.dim()),
            None => Ok(Subspace::coordinate(model.dim(), 0..model.dim() / 2)),
        }
    }

    /// Base lattice side and extent.
    pub fn base_lattice(&self) -> (usize, f64) {
        if let Some(l) = &self.lattice {
            return (l.n, l.t);
        }
        match self.preset {
            Some(Preset::AbelianR4 | Preset::AbelianSelfdual) => (64, 1.0),
            Some(Preset::BranesAbelian) => (32, 1.0),
            Some(Preset::Semiabelian2d) => (16, 0.5),
            _ => (16, 0.5),
        }
    }

    pub fn data(&self, dim: usize) -> Result<InitialData> {
        let name = self.data.clone().unwrap_or_else(|| match self.preset {
            Some(Preset::AbelianR4 | Preset::AbelianSelfdual | Preset::BranesAbelian) => "dalembert".into(),
            _ => format!("random-smooth({})", self.seed()),
        });
        Ok(match name.parse::<DataPreset>()? {
            DataPreset::Dalembert => InitialData::dalembert(dim, self.seed(), 0.4),
            DataPreset::RandomSmooth(s) => InitialData::random_smooth(dim, s, 0.3),
            DataPreset::PcmGeodesic => {
                let red = reduction::reduce(&self.model()?, self.side(), self.rule())?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed());
                let g0: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.2..0.2)).collect();
                let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
                InitialData::pcm_geodesic(&red.chart, &g0, &x, self.seed())
            }
        })
    }
}

fn basis_subspace(vs: &[Vec<f64>], n: usize) -> Result<Subspace> {
    if vs.is_empty() || vs.iter().any(|v| v.len() != n) {
        return Err(Error::Config(format!("basis vectors must have length {n}")));
    }
    Ok(Subspace::new(DMatrix::from_fn(n, vs.len(), |i, j| vs[j][i])))
}

/// One pass/fail line of a report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tolerance: Option<f64>,
    pub pass: bool,
    pub order: Option<Order>,
    /// Accepted order range `[lo, hi]`.
    pub order_range: Option<(f64, f64)>,
    #[serde(skip)]
    pub wall_time: f64,
}

impl Check {
    pub fn residual(name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Self { name: name.into(), residual, tolerance: Some(tolerance), pass: residual.is_finite() && residual <= tolerance, order: None, order_range: None, wall_time: 0.0 }
    }

    /// A convergence order in `[lo, hi]`; saturated passes only a lower bound.
    pub fn order(name: impl Into<String>, finest: f64, order: Order, lo: f64, hi: f64) -> Self {
        let pass = if hi.is_finite() { order.within(lo, hi) } else { order.at_least(lo) };
        Self { name: name.into(), residual: finest, tolerance: None, pass, order: Some(order), order_range: Some((lo, hi)), wall_time: 0.0 }
    }

    pub fn flag(name: impl Into<String>, pass: bool) -> Self {
        Self { name: name.into(), residual: if pass { 0.0 } else { 1.0 }, tolerance: Some(0.0), pass, order: None, order_range: None, wall_time: 0.0 }
    }

    fn timed(mut self, t0: Instant) -> Self {
        self.wall_time = t0.elapsed().as_secs_f64();
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub scenario: String,
    pub kind: Kind,
    pub checks: Vec<Check>,
    /// Per-level measurements behind the order checks.
    pub levels: serde_json::Value,
    #[serde(skip)]
    pub wall_time: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Wall times kept out of the main report so it stays byte-identical.
    pub fn timings(&self) -> serde_json::Value {
        serde_json::json!({
            "total": self.wall_time,
            "checks": self.checks.iter().map(|c| serde_json::json!({"name": c.name, "wall_time": c.wall_time})).collect::<Vec<_>>(),
        })
    }
}

/// A named output file.
#[derive(Clone, Debug)]
pub struct Artifact {
    pub name: String,
    pub content: String,
}

pub fn run(cfg: &ScenarioConfig) -> Result<(Report, Vec<Artifact>)> {
    let t0 = Instant::now();
    let (checks, levels, artifacts) = match cfg.kind {
        Kind::Axioms => run_axioms(cfg)?,
        Kind::Reduce => run_reduce(cfg)?,
        Kind::Dualize => run_dualize(cfg)?,
        Kind::Branes => run_branes(cfg)?,
        Kind::Noether => run_noether(cfg)?,
    };
    let scenario = cfg.preset.map(Preset::name).unwrap_or_else(|| "custom".into());
    let report = Report { scenario, kind: cfg.kind, checks, levels, wall_time: t0.elapsed().as_secs_f64() };
    Ok((report, artifacts))
}

type Outcome = (Vec<Check>, serde_json::Value, Vec<Artifact>);

fn sample_points(n: usize, half_width: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    halton_box(&cube(n, half_width), count, seed)
}

/// Closed 3-forms on `R^3`: zero, a constant volume form and two exact ones.
pub fn h_presets() -> Vec<(&'static str, ClosedThreeForm)> {
    let n = 3;
    let x = |i| Poly::var(n, i);
    vec![
        ("zero", ClosedThreeForm::zero(n)),
        ("volume", ClosedThreeForm::new_unchecked(Form::basic(n, &[0, 1, 2], 2.5))),
        ("d(x0 x2 dx0 dx1)", ClosedThreeForm::new_unchecked(Form::term(n, &[0, 1], x(2).mul(&x(0))).d())),
        ("d(x1^2 dx0 dx2)", ClosedThreeForm::new_unchecked(Form::term(n, &[0, 2], x(1).mul(&x(1))).d())),
    ]
}

/// 2-forms on `R^3` used for graph curvature and the shift law.
pub fn two_form_presets() -> Vec<(&'static str, Form)> {
    let n = 3;
    let x = |i| Poly::var(n, i);
    vec![
        ("x0 dx1 dx2", Form::term(n, &[1, 2], x(0))),
        ("x1 x2 dx0 dx1", Form::term(n, &[0, 1], x(1).mul(&x(2)))),
        ("x0^2 dx0 dx2 + x1 dx1 dx2", Form::term(n, &[0, 2], x(0).mul(&x(0))).add(&Form::term(n, &[1, 2], x(1)))),
    ]
}

fn run_axioms(cfg: &ScenarioConfig) -> Result<Outcome> {
    let tol = &cfg.tolerances;
    let mut checks = Vec::new();
    let mut artifacts = Vec::new();
    if let Some(p) = &cfg.axiom_file {
        let full = cfg.resolve(p);
        let text = std::fs::read_to_string(&full).map_err(|e| Error::File(format!("{}: {e}", full.display())))?;
        let file: AxiomFile = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", full.display())))?;
        let n = file.dim;
        let h = ClosedThreeForm::new(Form::from_json(n, &file.h)?)?;
        let secs = file.sections.iter().map(|s| s.build(n)).collect::<Result<Vec<_>>>()?;
        if secs.len() < 3 {
            return Err(Error::Config("the axiom file needs at least three sections".into()));
        }
        let f = Poly::from_json(n, &file.function)?;
        let pts = sample_points(n, 1.0, cfg.samples(), cfg.seed());
        let t0 = Instant::now();
        let r = courant::axiom_residuals(&h, &secs[0], &secs[1], &secs[2], &f, &pts)?;
        checks.push(Check::residual("axioms", r.max(), tol.axioms).timed(t0));
        artifacts.push(json_artifact("axioms.json", &r)?);
        return Ok((checks, serde_json::Value::Null, artifacts));
    }
    if cfg.preset == Some(Preset::StandardCa) {
        let n = 3;
        let pts = sample_points(n, 1.0, cfg.samples(), cfg.seed());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
        let mut rows = Vec::new();
        for (name, h) in h_presets() {
            let t0 = Instant::now();
            let mut worst: f64 = 0.0;
            for _ in 0..3 {
                let (s, t, u) = (random_section(&mut rng, n, 3), random_section(&mut rng, n, 3), random_section(&mut rng, n, 3));
                let f = random_poly(&mut rng, n, 3);
                let r = courant::axiom_residuals(&h, &s, &t, &u, &f, &pts)?;
                rows.push(serde_json::json!({"h": name, "residuals": r}));
                worst = worst.max(r.max());
            }
            checks.push(Check::residual(format!("axioms[H={name}]"), worst, tol.axioms).timed(t0));
        }
        let tm = LagrangianFrame::tangent(n);
        for (name, omega) in two_form_presets() {
            let t0 = Instant::now();
            let h = courant::connection_curvature(&LagrangianFrame::graph(&omega)?, &ClosedThreeForm::zero(n), &pts)?;
            checks.push(Check::residual(format!("graph_curvature[{name}]"), h.form().sub(&omega.d()).max_abs_coef(), tol.curvature).timed(t0));
            let t0 = Instant::now();
            let h0 = &h_presets()[1].1;
            let before = courant::connection_curvature(&tm, h0, &pts)?;
            let after = courant::connection_curvature(&courant::shift_splitting(&tm, &omega)?, h0, &pts)?;
            let defect = after.form().sub(before.form()).sub(&omega.d()).max_abs_coef();
            checks.push(Check::residual(format!("shift_law[{name}]"), defect, tol.curvature).timed(t0));
        }
        artifacts.push(json_artifact("axioms.json", &rows)?);
        return Ok((checks, serde_json::Value::Null, artifacts));
    }
    // double-model axioms: equivariance after calibration and Chern-Simons identities
    let model = cfg.model()?;
    let alg = model.algebra();
    let mc = PrincipalConnection::maurer_cartan(model.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let probes: Vec<equivariant::Jet> = (0..8)
        .map(|_| equivariant::Jet {
            u: DVector::from_fn(model.dim(), |_, _| rng.gen_range(-1.0..1.0)),
            alpha: DVector::from_fn(model.dim(), |_, _| rng.gen_range(-1.0..1.0)),
            du: DMatrix::from_fn(model.dim(), model.dim(), |_, _| rng.gen_range(-1.0..1.0)),
            dalpha: DMatrix::zeros(model.dim(), model.dim()),
        })
        .collect();
    let t0 = Instant::now();
    let eq = equivariant::check_equivariance(&model, &mc, &probes);
    checks.push(Check::residual("hequiv", eq.hequiv, tol.equivariance).timed(t0));
    checks.push(Check::residual("equivariance", eq.max(), tol.equivariance).timed(t0));
    let t0 = Instant::now();
    let cs = equivariant::chern_simons(alg, &mc);
    checks.push(Check::residual("chern_simons_interior", cs.interior, tol.equivariance).timed(t0));
    checks.push(Check::residual("chern_simons_pontryagin", cs.pontryagin, tol.equivariance).timed(t0));
    let t0 = Instant::now();
    let chart = 4;
    let comps: Vec<Form> = (0..alg.dim())
        .map(|_| (0..chart).fold(Form::zero(chart, 1), |acc, i| acc.add(&Form::term(chart, &[i], random_poly(&mut rng, chart, 2)))))
        .collect();
    let a = PolyConnection::new(alg.clone(), comps)?;
    checks.push(Check::residual("chern_simons_transgression", a.transgression_residual(), tol.equivariance).timed(t0));
    let levels = serde_json::json!({"kappa": model.kappa, "equivariance": eq_json(&eq)});
    Ok((checks, levels, artifacts))
}

fn eq_json(eq: &equivariant::EquivarianceReport) -> serde_json::Value {
    serde_json::json!({
        "splitting_invariance": eq.splitting_invariance,
        "hequiv": eq.hequiv,
        "pairing": eq.pairing,
        "bracket_morphism": eq.bracket_morphism,
    })
}

fn json_artifact(name: &str, v: &impl Serialize) -> Result<Artifact> {
    Ok(Artifact { name: name.into(), content: serde_json::to_string_pretty(v)? + "\n" })
}

fn side_name(s: Side) -> &'static str {
    match s {
        Side::G => "g",
        Side::GPrime => "g-prime",
    }
}

fn run_reduce(cfg: &ScenarioConfig) -> Result<Outcome> {
    let tol = &cfg.tolerances;
    let model = cfg.model()?;
    let rule = cfg.rule();
    let r_d = cfg.r_d(&model)?;
    let n = model.dim();
    let k = n / 2;
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    let mut lagrangians: Vec<(String, Subspace)> = vec![
        ("g".into(), model.triple.g().clone()),
        ("g-prime".into(), model.triple.gprime.clone()),
        ("r_d".into(), r_d.clone()),
    ];
    if k >= 2 {
        // a Lagrangian that is not a subalgebra in general
        let mut idx: Vec<usize> = (0..k - 1).collect();
        idx.push(n - 1);
        lagrangians.push(("mixed".into(), Subspace::coordinate(n, idx)));
    }
    let count = (cfg.samples() / 4).max(8);
    for side in [Side::GPrime, Side::G] {
        let red = reduction::reduce(&model, side, rule)?;
        let xs = sample_points(red.dim(), 0.5, count, cfg.seed());
        for (name, l) in &lagrangians {
            let t0 = Instant::now();
            let c = reduction::coherence(&model, &red, l, &xs)?;
            let s = side_name(side);
            checks.push(Check::flag(format!("fiber_rank[{s},{name}]"), c.min_fiber_rank == c.expected_rank && c.transversality_failures.is_empty()));
            checks.push(Check::residual(format!("fcfck[{s},{name}]"), c.fcfck_double.max(c.fcfck_quotient), tol.coherence).timed(t0));
            checks.push(Check::residual(format!("fvfc[{s},{name}]"), c.fvfc, tol.coherence));
            if l.closure_residual(model.algebra()) <= 1e-12 {
                // subalgebra: the reduced Lagrangian must be Dirac
                checks.push(Check::residual(format!("dirac_reduces[{s},{name}]"), c.fcfck_quotient.max(c.h_l_d_norm), tol.coherence));
            }
            rows.push(serde_json::json!({"side": s, "lagrangian": name, "coherence": c}));
        }
    }
    let mut artifacts = Vec::new();
    let mut values = serde_json::Map::new();
    for side in [Side::GPrime, Side::G] {
        let (red, _) = reduction::transport_rd(&model, side, &r_d, rule)?;
        let r0 = red.background(&vec![0.0; red.dim()], &r_d)?;
        values.insert(side_name(side).into(), serde_json::json!(matrix_rows(&r0)));
        if model.algebra().is_abelian() {
            // abelian oracle: graph(m) gives m on one side and m^-1 on the other
            let m = r_d.basis.rows(k, k).into_owned() * crate::linalg::inverse(&r_d.basis.rows(0, k).into_owned())?;
            let expected = match side {
                Side::GPrime => m.transpose(),
                Side::G => crate::linalg::inverse(&m.transpose())?,
            };
            let xs = sample_points(red.dim(), 0.5, 8, cfg.seed());
            let mut worst: f64 = 0.0;
            for x in &xs {
                worst = worst.max(crate::linalg::max_abs(&(red.background(x, &r_d)? - &expected)));
            }
            checks.push(Check::residual(format!("background[{}]", side_name(side)), worst, tol.exact));
        }
        if side == cfg.side() {
            artifacts.push(Artifact { name: "r_field.csv".into(), content: r_field_csv(&red, &r_d, &sample_points(red.dim(), 0.5, cfg.samples(), cfg.seed()))? });
            let xs = sample_points(red.dim(), 0.5, 16, cfg.seed());
            let hs: Vec<serde_json::Value> = xs.iter().map(|x| Ok(serde_json::json!({"x": x, "h_g": red.h_g(x)?}))).collect::<Result<_>>()?;
            artifacts.push(json_artifact("h_g.json", &hs)?);
        }
    }
    let levels = serde_json::json!({"background_at_origin": values, "coherence": rows});
    Ok((checks, levels, artifacts))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn r_field_csv(red: &reduction::ReducedCA, r_d: &Subspace, xs: &[Vec<f64>]) -> Result<String> {
    let m = red.dim();
    let mut out = String::new();
    let mut head: Vec<String> = (0..m).map(|i| format!("x{i}")).collect();
    for i in 0..m {
        for j in 0..m {
            head.push(format!("r{i}{j}"));
        }
    }
    out.push_str(&head.join(","));
    out.push('\n');
    for x in xs {
        let r = red.background(x, r_d)?;
        let vals: Vec<String> = x.iter().cloned().chain(r.transpose().iter().cloned()).map(|v| format!("{v:.17e}")).collect();
        out.push_str(&vals.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn critical_map(bg: &sigma::Background, lat: &LightConeLattice, data: &InitialData) -> Result<ChartMap> {
    // exact continuum solutions are sampled; anything else is solved from its boundary values
    if data.exact {
        Ok(sigma::sample(data, lat))
    } else {
        sigma::solve_sr(bg, lat, data)
    }
}

fn seed_coords(cfg: &ScenarioConfig, k: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed() ^ 0x5eed);
    (0..k).map(|_| rng.gen_range(-0.3..0.3)).collect()
}

fn order_check(name: &str, hs: &[f64], values: &[f64], lo: f64, hi: f64) -> Result<Check> {
    let o = convergence_order(hs, values)?;
    Ok(Check::order(name, *values.last().unwrap_or(&f64::NAN), o, lo, hi))
}

fn scenario(cfg: &ScenarioConfig) -> Result<DualityScenario> {
    let model = cfg.model()?;
    let r_d = cfg.r_d(&model)?;
    DualityScenario::new(model, cfg.side(), cfg.rule(), r_d)
}

/// The analytic dual of `p(t1) + q(t2)` for a constant background `r`:
/// `y = y0 + r^t (f(t1, 0) - f(0, 0)) - r (f(0, t2) - f(0, 0))`.
fn hodge_dual_error(f_dual: &ChartMap, data: &InitialData, r: &DMatrix<f64>, lat: &LightConeLattice) -> f64 {
    let f00 = data.eval(0.0, 0.0);
    let y00 = f_dual.get(0, 0).clone();
    let mut worst: f64 = 0.0;
    for (i, j, y) in f_dual.points() {
        let (t1, t2) = lat.times(i, j);
        let exact = &y00 + r.transpose() * (data.eval(t1, 0.0) - &f00) - r * (data.eval(0.0, t2) - &f00);
        worst = worst.max(crate::linalg::max_abs_vec(&(y - exact)));
    }
    worst
}

fn run_dualize(cfg: &ScenarioConfig) -> Result<Outcome> {
    let tol = &cfg.tolerances;
    let scn = scenario(cfg)?;
    let dual = scn.dual()?;
    let m = scn.dim();
    let bg = scn.background();
    let data = cfg.data(m)?;
    let (base, t) = cfg.base_lattice();
    let seed = scn.fiber_element(&seed_coords(cfg, scn.red.chart.q.dim()));
    let abelian = scn.model.algebra().is_abelian();
    let mut checks = Vec::new();

    let origin = vec![0.0; m];
    let r0 = bg.r(&origin)?.expect("SR background");
    let r_dual = dual.background().r(&origin)?.expect("SR background");
    if abelian {
        let err = crate::linalg::max_abs(&(&r_dual - crate::linalg::inverse(&r0)?));
        checks.push(Check::residual("dual_background", err, tol.exact));
    }

    let mut hs = Vec::new();
    let mut rows = Vec::new();
    let (mut flat, mut rand_flat, mut dual_el, mut rt, mut hodge) = (vec![], vec![], vec![], vec![], vec![]);
    let mut sweeps_ok = true;
    let mut last: Option<(ChartMap, ChartMap, LightConeLattice)> = None;
    let t_all = Instant::now();
    for level in cfg.levels() {
        let lat = LightConeLattice::square(base * level, t)?;
        let f = critical_map(&bg, &lat, &data)?;
        let d = duality::dualize(&f, &scn, &lat, &seed)?;
        let trip = duality::roundtrip_from(&f, &scn, &lat, &d)?;
        let g = sigma::sample(&InitialData::random_smooth(m, cfg.seed() + 1, 0.3), &lat);
        let random = duality::lift(&g, &scn, &lat, &seed, SweepOrder::T2First)?.flatness.max();
        hs.push(lat.h1);
        flat.push(d.report.flatness);
        rand_flat.push(random);
        dual_el.push(d.report.dual_el_residual);
        rt.push(trip.deviation);
        sweeps_ok &= d.report.sweeps_consistent();
        let mut row = serde_json::json!({
            "n": lat.n1,
            "h": lat.h1,
            "el_residual": d.report.el_residual,
            "flatness": d.report.flatness,
            "random_flatness": random,
            "path_independence": d.report.path_independence,
            "sweep_difference": d.report.sweep_difference,
            "dual_el_residual": d.report.dual_el_residual,
            "roundtrip_deviation": trip.deviation,
        });
        if abelian && data.exact {
            let e = hodge_dual_error(&d.f_dual, &data, &r0, &lat);
            hodge.push(e);
            row["hodge_dual_error"] = serde_json::json!(e);
        }
        rows.push(row);
        last = Some((f, d.f_dual, lat));
    }
    let mo = tol.min_order;
    checks.push(order_check("flatness_order", &hs, &flat, mo, f64::INFINITY)?);
    checks.push(order_check("random_flatness_slope", &hs, &rand_flat, -tol.random_slope, tol.random_slope)?);
    checks.push(order_check("dual_el_residual_order", &hs, &dual_el, mo, f64::INFINITY)?);
    checks.push(order_check("roundtrip_order", &hs, &rt, mo, f64::INFINITY)?);
    if !hodge.is_empty() {
        checks.push(order_check("hodge_dual_order", &hs, &hodge, mo, f64::INFINITY)?);
    }
    checks.push(Check::flag("sweep_orders_agree", sweeps_ok));
    for c in checks.iter_mut() {
        c.wall_time = t_all.elapsed().as_secs_f64();
    }

    // seed equivariance on the base level
    let t0 = Instant::now();
    let lat = LightConeLattice::square(base, t)?;
    let f = critical_map(&bg, &lat, &data)?;
    let h = scn.fiber_element(&seed_coords(&ScenarioConfig { seed: Some(cfg.seed() + 11), ..cfg.clone() }, scn.red.chart.q.dim()));
    let a = duality::lift(&f, &scn, &lat, &seed, SweepOrder::T2First)?;
    let b = duality::lift(&f, &scn, &lat, &(&seed * &h), SweepOrder::T2First)?;
    let shifted = a.phi.map(|_, _, p| p * &h);
    checks.push(Check::residual("seed_equivariance", duality::group_distance(&shifted, &b.phi, &scn)?, tol.seed_equivariance).timed(t0));

    let mut artifacts = Vec::new();
    if let Some((f, f_dual, lat)) = last {
        artifacts.push(Artifact { name: "f.csv".into(), content: f.to_csv(&lat) });
        artifacts.push(Artifact { name: "f_dual.csv".into(), content: f_dual.to_csv(&lat) });
    }
    let orders: serde_json::Map<String, serde_json::Value> =
        checks.iter().filter_map(|c| c.order.map(|o| (c.name.clone(), serde_json::to_value(o).unwrap_or_default()))).collect();
    let levels = serde_json::json!({
        "background": matrix_rows(&r0),
        "dual_background": matrix_rows(&r_dual),
        "levels": rows,
        "orders": orders,
    });
    Ok((checks, levels, artifacts))
}

fn flag_name(f: Option<EdgeFlag>) -> String {
    match f {
        Some(EdgeFlag::Free) => "neumann".into(),
        Some(EdgeFlag::Fixed) => "dirichlet".into(),
        Some(EdgeFlag::Brane(_)) => "brane".into(),
        None => "unsupported".into(),
    }
}

/// Background and half-plane lattice carrying the brane of one side.
fn brane_setup(scn: &DualityScenario, side: &duality::BraneSide, n: usize, t: f64, x0: &[f64]) -> Result<(sigma::Background, LightConeLattice)> {
    let flag = side.flag.ok_or_else(|| Error::OutOfScope(format!("no lattice boundary condition for the {:?} leaves", side.kind)))?;
    let mut bg = scn.background();
    if let Some(leaf) = side.leaf_through(x0) {
        if matches!(side.kind, LeafKind::Linear(_)) {
            bg = bg.with_leaves(vec![leaf]);
        }
    }
    Ok((bg, LightConeLattice::half_plane(n, t, flag)?))
}

fn run_branes(cfg: &ScenarioConfig) -> Result<Outcome> {
    let tol = &cfg.tolerances;
    let scn = scenario(cfg)?;
    let dual = scn.dual()?;
    let m = scn.dim();
    let c_d = cfg.c_d(&scn.model)?;
    let t0 = Instant::now();
    let xs = sample_points(m, 0.5, 16, cfg.seed());
    let bt = duality::brane_transport(&scn.model, scn.rule, &c_d, &xs)?;
    let (mine, theirs) = match scn.side {
        Side::G => (&bt.g_side, &bt.gprime_side),
        Side::GPrime => (&bt.gprime_side, &bt.g_side),
    };
    let mut checks = vec![
        Check::residual(format!("dirac_leaf[{}]", side_name(Side::G)), bt.g_side.dirac_defect, tol.dirac_leaf).timed(t0),
        Check::residual(format!("dirac_leaf[{}]", side_name(Side::GPrime)), bt.gprime_side.dirac_defect, tol.dirac_leaf).timed(t0),
    ];
    if scn.model.algebra().is_abelian() && m == 1 {
        // one-dimensional abelian double: a line either is or is not vertical
        let swapped = matches!(
            (mine.flag, theirs.flag),
            (Some(EdgeFlag::Free), Some(EdgeFlag::Fixed)) | (Some(EdgeFlag::Fixed), Some(EdgeFlag::Free))
        );
        checks.push(Check::flag("neumann_dirichlet_swap", swapped));
    }

    let data = cfg.data(m)?;
    let (base, t) = cfg.base_lattice();
    let seed = scn.fiber_element(&seed_coords(cfg, scn.red.chart.q.dim()));
    let x0: Vec<f64> = data.eval(0.0, 0.0).iter().cloned().collect();
    let (mut hs, mut here, mut there, mut rows) = (vec![], vec![], vec![], vec![]);
    let mut last = None;
    let t0 = Instant::now();
    for level in cfg.levels() {
        let (bg, lat) = brane_setup(&scn, mine, base * level, t, &x0)?;
        let f = sigma::solve_sr(&bg, &lat, &data)?;
        let d = duality::dualize(&f, &scn, &lat, &seed)?;
        let y0: Vec<f64> = d.f_dual.get(0, 0).iter().cloned().collect();
        let (dual_bg, dual_lat) = brane_setup(&dual, theirs, base * level, t, &y0)?;
        let a = sigma::boundary_residual(&f, &bg, &lat, None)?.max();
        let b = sigma::boundary_residual(&d.f_dual, &dual_bg, &dual_lat, None)?.max();
        hs.push(lat.h1);
        here.push(a);
        there.push(b);
        rows.push(serde_json::json!({"n": lat.n1, "h": lat.h1, "boundary_residual": a, "dual_boundary_residual": b, "dual_el_residual": d.report.dual_el_residual}));
        last = Some((f, d.f_dual, lat));
    }
    let mo = tol.min_order;
    checks.push(order_check("boundary_order", &hs, &here, mo, f64::INFINITY)?.timed(t0));
    checks.push(order_check("dual_boundary_order", &hs, &there, mo, f64::INFINITY)?.timed(t0));

    let mut artifacts = vec![json_artifact("branes.json", &bt)?];
    if let Some((f, f_dual, lat)) = last {
        artifacts.push(Artifact { name: "f.csv".into(), content: f.to_csv(&lat) });
        artifacts.push(Artifact { name: "f_dual.csv".into(), content: f_dual.to_csv(&lat) });
    }
    let levels = serde_json::json!({
        "side": side_name(scn.side),
        "boundary": flag_name(mine.flag),
        "dual_boundary": flag_name(theirs.flag),
        "levels": rows,
    });
    Ok((checks, levels, artifacts))
}

fn run_noether(cfg: &ScenarioConfig) -> Result<Outcome> {
    let tol = &cfg.tolerances;
    let scn = scenario(cfg)?;
    let m = scn.dim();
    let n = scn.model.dim();
    let bg = scn.background();
    let data = cfg.data(m)?;
    let (base, t) = cfg.base_lattice();
    let red = &scn.red;
    let fallback = DVector::from_element(2 * m, f64::NAN);
    let sections: Vec<Box<dyn Fn(&[f64]) -> DVector<f64> + Sync>> = (0..n)
        .map(|i| {
            let v = scn.model.algebra().basis(i);
            let red = red.clone();
            let fb = fallback.clone();
            Box::new(move |x: &[f64]| red.section(x, &v).unwrap_or_else(|_| fb.clone())) as Box<dyn Fn(&[f64]) -> DVector<f64> + Sync>
        })
        .collect();
    let pts = sample_points(m, 0.5, 16, cfg.seed());
    let mut symmetric = Vec::new();
    let mut flows = Vec::new();
    for (i, s) in sections.iter().enumerate() {
        let r = sigma::flow_preserves(s.as_ref(), &bg, &pts)?;
        flows.push(serde_json::json!({"basis": i, "flow_residual": r}));
        if r <= tol.flow {
            symmetric.push(i);
        }
    }
    let mut checks = vec![Check::flag("symmetries_found", !symmetric.is_empty())];
    let mut hs = Vec::new();
    let mut closures: Vec<Vec<f64>> = vec![Vec::new(); symmetric.len()];
    let t0 = Instant::now();
    for level in cfg.levels() {
        let lat = LightConeLattice::square(base * level, t)?;
        let f = critical_map(&bg, &lat, &data)?;
        hs.push(lat.h1);
        for (k, &i) in symmetric.iter().enumerate() {
            let j = sigma::noether_current(&f, sections[i].as_ref(), &bg, &lat)?;
            closures[k].push(j.closure.max());
        }
    }
    let free_boson = scn.model.algebra().is_abelian() && data.exact;
    let mut rows = Vec::new();
    for (k, &i) in symmetric.iter().enumerate() {
        if free_boson {
            // the identity is exact for the integrated plaquette flux; dividing by the area only scales roundoff
            let worst = closures[k].iter().zip(&hs).map(|(c, h)| c * h * h).fold(0.0, f64::max);
            checks.push(Check::residual(format!("flux_exact[e{i}]"), worst, tol.exact).timed(t0));
        } else {
            checks.push(order_check(&format!("closure_order[e{i}]"), &hs, &closures[k], tol.min_order, f64::INFINITY)?.timed(t0));
        }
        rows.push(serde_json::json!({"basis": i, "closure": closures[k]}));
    }
    let levels = serde_json::json!({"h": hs, "flow": flows, "currents": rows});
    Ok((checks, levels, Vec::new()))
}
