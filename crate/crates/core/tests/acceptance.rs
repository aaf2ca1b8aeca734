//! Acceptance run: one line per criterion, non-zero exit if any fails.
//!
//! Every criterion runs the same scenario code the CLI uses. Wall time is the
//! sum over the reports a criterion depends on, so shared runs count in full.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::Instant;

use cad_core::scenario::{run, Check, Kind, Preset, Report, ScenarioConfig};

struct Runs {
    cache: HashMap<(Kind, Preset), (Report, f64)>,
}

impl Runs {
    fn get(&mut self, kind: Kind, preset: Preset) -> Result<&(Report, f64), String> {
        if !self.cache.contains_key(&(kind, preset)) {
            let t0 = Instant::now();
            let (report, _) = run(&ScenarioConfig::preset(kind, preset)).map_err(|e| format!("{} {:?}: {e}", preset.name(), kind))?;
            self.cache.insert((kind, preset), (report, t0.elapsed().as_secs_f64()));
        }
        Ok(&self.cache[&(kind, preset)])
    }
}

type Select = fn(&str) -> bool;

struct Criterion {
    id: u8,
    title: &'static str,
    budget: f64,
    runs: &'static [(Kind, Preset, Select)],
    /// Check names that must be present in at least one selected report.
    required: &'static [&'static str],
}

fn all(_: &str) -> bool {
    true
}

fn criteria() -> Vec<Criterion> {
    use Kind::*;
    use Preset::*;
    vec![
        Criterion {
            id: 1,
            title: "Courant axioms for standard CAs",
            budget: 5.0,
            runs: &[(Axioms, StandardCa, |n| n.starts_with("axioms["))],
            required: &[],
        },
        Criterion {
            id: 2,
            title: "graph curvature and shift law",
            budget: 1.0,
            runs: &[(Axioms, StandardCa, |n| n.starts_with("graph_curvature[") || n.starts_with("shift_law["))],
            required: &[],
        },
        Criterion {
            id: 3,
            title: "equivariant 3-form and Chern-Simons identities",
            budget: 10.0,
            runs: &[(Axioms, AbelianR4, all), (Axioms, Semiabelian2d, all), (Axioms, SemiabelianSu2, all)],
            required: &["hequiv", "equivariance", "chern_simons_interior", "chern_simons_pontryagin", "chern_simons_transgression"],
        },
        Criterion {
            id: 4,
            title: "reduction coherence",
            budget: 10.0,
            runs: &[(Reduce, AbelianR4, all), (Reduce, Semiabelian2d, all), (Reduce, SemiabelianSu2, all)],
            required: &[],
        },
        Criterion {
            id: 5,
            title: "abelian backgrounds and Hodge duality",
            budget: 30.0,
            runs: &[
                (Reduce, AbelianR4, |n| n.starts_with("background[")),
                (Dualize, AbelianR4, |n| n == "dual_background" || n == "hodge_dual_order"),
            ],
            required: &["background[g]", "background[g-prime]", "dual_background", "hodge_dual_order"],
        },
        Criterion {
            id: 6,
            title: "lift flatness",
            budget: 120.0,
            runs: &[(Dualize, SemiabelianSu2, |n| n == "flatness_order" || n == "random_flatness_slope")],
            required: &["flatness_order", "random_flatness_slope"],
        },
        Criterion {
            id: 7,
            title: "dual criticality, round trip and seed equivariance",
            budget: 180.0,
            runs: &[(Dualize, SemiabelianSu2, |n| {
                n == "dual_el_residual_order" || n == "roundtrip_order" || n == "seed_equivariance"
            })],
            required: &["dual_el_residual_order", "roundtrip_order", "seed_equivariance"],
        },
        Criterion {
            id: 8,
            title: "Noether currents",
            budget: 30.0,
            runs: &[(Noether, AbelianR4, all), (Noether, SemiabelianSu2, all)],
            required: &["flux_exact[e0]", "closure_order[e0]"],
        },
        Criterion {
            id: 9,
            title: "branes",
            budget: 60.0,
            runs: &[(Branes, BranesAbelian, all)],
            required: &["dirac_leaf[g]", "dirac_leaf[g-prime]", "neumann_dirichlet_swap", "boundary_order", "dual_boundary_order"],
        },
    ]
}

fn describe(c: &Check) -> String {
    match (c.order, c.tolerance) {
        (Some(o), _) => format!("{}={o:?}", c.name),
        (None, Some(t)) if t > 0.0 => format!("{}={:.1e}/{t:.0e}", c.name, c.residual),
        _ => c.name.clone(),
    }
}

fn evaluate(runs: &mut Runs, c: &Criterion) -> (bool, String) {
    let mut time = 0.0;
    let mut seen: Vec<&Check> = Vec::new();
    let mut failures = Vec::new();
    let mut counted = Vec::new();
    let mut selected = Vec::new();
    for &(kind, preset, select) in c.runs {
        match runs.get(kind, preset) {
            Ok((report, t)) => {
                if !counted.contains(&(kind, preset)) {
                    counted.push((kind, preset));
                    time += t;
                }
                selected.extend(report.checks.iter().filter(|k| select(&k.name)).cloned());
            }
            Err(e) => failures.push(e),
        }
    }
    seen.extend(selected.iter());
    if seen.is_empty() {
        failures.push("no checks selected".into());
    }
    for name in c.required {
        if !seen.iter().any(|k| k.name == *name) {
            failures.push(format!("missing {name}"));
        }
    }
    failures.extend(seen.iter().filter(|k| !k.pass).map(|k| format!("failed {}", describe(k))));
    if time > c.budget {
        failures.push(format!("took {time:.1}s over {:.0}s", c.budget));
    }
    let pass = failures.is_empty();
    let detail = if pass {
        format!("{} checks, {time:.2}s of {:.0}s", seen.len(), c.budget)
    } else {
        failures.join("; ")
    };
    (pass, detail)
}

fn main() -> ExitCode {
    let mut runs = Runs { cache: HashMap::new() };
    let mut failed = 0;
    for c in criteria() {
        let (pass, detail) = evaluate(&mut runs, &c);
        if !pass {
            failed += 1;
        }
        println!("criterion {}: {} {} ({detail})", c.id, if pass { "PASS" } else { "FAIL" }, c.title);
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
