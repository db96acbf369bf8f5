//! Stage pipeline: analyze → solve-linear → solve-limit → sweep.
//!
//! Every stage writes into one JSON report. Stages whose preconditions fail
//! are refused with an explanation rather than attempted. Numbers that are
//! checked against theory appear as `{value, tol, pass}`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Map, Value};
use traction_core::fem::SolveOptions;
use traction_core::limit::{eval_f, minimize_f, shifted_minimizer, LimitOptions};
use traction_core::loads::{assemble_loads, classify_compatibility};
use traction_core::mesh::{write_mesh, write_solution};
use traction_core::nonlinear::{certified_threshold, h_sweep, minimize_fh, witness_start, NonlinearOptions, Status, Sweep};
use traction_core::{Classification, Compatibility, LinearProblem, LoadAssembly, Mesh, SkewParam};

use crate::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Analyze,
    SolveLinear,
    SolveLimit,
    Sweep,
    Run,
}

impl Stage {
    fn includes(self, s: Stage) -> bool {
        match self {
            Stage::Run => true,
            Stage::Sweep => matches!(s, Stage::Analyze | Stage::Sweep),
            _ => s <= self,
        }
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub report: Value,
    pub refusals: Vec<String>,
    pub failed_checks: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    /// 0 on full success, 2 when a stage was refused, 1 when a check failed.
    pub fn exit_code(&self) -> i32 {
        if !self.failed_checks.is_empty() {
            1
        } else if !self.refusals.is_empty() {
            2
        } else {
            0
        }
    }
}

/// JSON has no infinities; they are spelled out.
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn skew(w: &SkewParam) -> Value {
    json!(w.coeffs())
}

struct Ctx<'a> {
    out: &'a Path,
    refusals: Vec<String>,
    failed: Vec<String>,
    files: Vec<PathBuf>,
}

impl Ctx<'_> {
    fn check(&mut self, name: &str, value: f64, tol: f64, pass: bool) -> Value {
        if !pass {
            self.failed.push(format!("{name}: {value:e} (tol {tol:e})"));
        }
        json!({ "value": num(value), "tol": num(tol), "pass": pass })
    }

    fn refuse(&mut self, stage: &str, reason: String) -> Value {
        self.refusals.push(format!("{stage}: {reason}"));
        json!({ "refused": true, "reason": reason })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.out.join(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        self.files.push(p);
        Ok(())
    }
}

fn incompatible_reason(witness: &SkewParam, gap: f64) -> String {
    format!(
        "loads are incompatible: the witness rotation W = {:?} has L(W^2 x / 2) = {gap:.6e} > 0, so the limit \
         energy along v = t^2 W^2 x / 2 (zero linear strain after the skew correction) is at most -t^2 * {gap:.6e}; \
         inf F = -inf, no limit minimizer exists and the rescaled energies are unbounded below as h -> 0",
        witness.coeffs()
    )
}

fn classification_block(c: &Classification) -> Value {
    let eq = &c.equilibrium;
    let tol_abs = c.tol * eq.scale;
    let mut m = Map::new();
    m.insert("compatibility".into(), json!(c.compat.name()));
    m.insert("moment".into(), json!(c.moment.rows()));
    m.insert("tol".into(), num(c.tol));
    m.insert("equilibrated".into(), json!(eq.equilibrated));
    m.insert("force_residual".into(), json!({ "value": num(eq.force_residual), "tol": num(tol_abs), "pass": eq.force_residual <= tol_abs }));
    m.insert("torque_residual".into(), json!({ "value": num(eq.torque_residual), "tol": num(tol_abs), "pass": eq.torque_residual <= tol_abs }));
    m.insert("sup_gap".into(), num(c.sup_gap));
    match &c.compat {
        Compatibility::Strict => {}
        Compatibility::Weak { kernel } => {
            m.insert("kernel".into(), json!(kernel.iter().map(skew).collect::<Vec<_>>()));
        }
        Compatibility::Incompatible { witness, witness_gap } => {
            m.insert("witness".into(), skew(witness));
            m.insert("witness_gap".into(), num(*witness_gap));
            m.insert("inf_f".into(), json!("-inf"));
            m.insert("explanation".into(), json!(incompatible_reason(witness, *witness_gap)));
        }
    }
    Value::Object(m)
}

/// Runs `stage` (and the stages it depends on), writing artifacts into `out`.
pub fn execute(scenario: &Scenario, stage: Stage, out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut ctx = Ctx { out, refusals: Vec::new(), failed: Vec::new(), files: Vec::new() };
    let mesh = scenario.build_mesh()?;
    let d = scenario.density();
    let exp = &scenario.experiment;
    let loads = assemble_loads(&mesh, &scenario.load_spec()).context("assembling loads")?;
    let class = classify_compatibility(&loads, exp.classify_tol);

    let mut report = Map::new();
    report.insert("scenario".into(), json!(scenario.name));
    report.insert(
        "provenance".into(),
        json!({
            "tool": "traction",
            "version": env!("CARGO_PKG_VERSION"),
            "config_sha256": scenario.config_hash(),
        }),
    );
    report.insert("config".into(), serde_json::to_value(scenario)?);
    report.insert(
        "mesh".into(),
        json!({ "nodes": mesh.n_nodes(), "elements": mesh.n_elements(), "dofs": mesh.n_dofs(), "area": mesh.total_area() }),
    );
    ctx.write("mesh.txt", &write_mesh(&mesh))?;

    let class_json = classification_block(&class);
    ctx.write("classification.json", &(serde_json::to_string_pretty(&class_json)? + "\n"))?;
    report.insert("classification".into(), class_json);

    let equilibrated = class.equilibrium.equilibrated;
    let not_eq = || {
        format!(
            "loads are not equilibrated (force residual {:.3e}, torque residual {:.3e}); the pure-traction problem has no minimizer",
            class.equilibrium.force_residual, class.equilibrium.torque_residual
        )
    };

    let problem = LinearProblem::new(&mesh, d);
    let solve_opts = SolveOptions { rel_tol: exp.cg_tol, eq_tol: exp.classify_tol, ..Default::default() };
    let mut min_e = None;
    if stage.includes(Stage::SolveLinear) {
        let block = if !equilibrated {
            ctx.refuse("solve-linear", not_eq())
        } else {
            let sol = problem.solve(&loads, None, &solve_opts)?;
            ctx.write("linear_solution.txt", &write_solution(&mesh, sol.field.values()))?;
            min_e = Some(sol.energy);
            let res = ctx.check("linear.rel_residual", sol.rel_residual, exp.cg_tol, sol.rel_residual <= exp.cg_tol);
            json!({ "min_e": num(sol.energy), "iterations": sol.iterations, "rel_residual": res })
        };
        report.insert("linear".into(), block);
    }

    if stage.includes(Stage::SolveLimit) {
        let block = match (&class.compat, equilibrated) {
            (_, false) => ctx.refuse("solve-limit", not_eq()),
            (Compatibility::Incompatible { witness, witness_gap }, _) => {
                let reason = incompatible_reason(witness, *witness_gap);
                let mut b = ctx.refuse("solve-limit", reason);
                b["witness"] = skew(witness);
                b["witness_gap"] = num(*witness_gap);
                b["inf_f"] = json!("-inf");
                b
            }
            (compat, true) => limit_block(&mut ctx, &mesh, &problem, &loads, compat, min_e, scenario, &solve_opts)?,
        };
        report.insert("limit".into(), block);
    }

    let wants_sweep = stage == Stage::Sweep || (stage == Stage::Run && !exp.h_list.is_empty());
    if stage == Stage::Sweep && exp.h_list.is_empty() {
        anyhow::bail!("experiment.h_list is empty; nothing to sweep");
    }
    if wants_sweep {
        let block = match (&class.compat, equilibrated) {
            (_, false) => ctx.refuse("sweep", not_eq()),
            (Compatibility::Incompatible { witness, witness_gap }, _) => {
                divergence_block(&mut ctx, &mesh, &loads, scenario, witness, *witness_gap)?
            }
            (Compatibility::Weak { .. }, _) => ctx.refuse(
                "sweep",
                "loads are only weakly compatible: the limit has minimizers with W0 != 0, so the h-sweep has no unique target".into(),
            ),
            (Compatibility::Strict, true) => {
                let opts = nonlinear_options(scenario, None);
                let sweep = h_sweep(&mesh, &d, &loads, &exp.h_list, &opts, exp.classify_tol)?;
                sweep_block(&mut ctx, &mesh, &sweep)?
            }
        };
        report.insert("nonlinear".into(), block);
    }

    report.insert("refusals".into(), json!(ctx.refusals));
    report.insert("failed_checks".into(), json!(ctx.failed));
    let report = Value::Object(report);
    ctx.write("report.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok(Outcome { report, refusals: ctx.refusals, failed_checks: ctx.failed, files: ctx.files })
}

fn nonlinear_options(s: &Scenario, threshold: Option<f64>) -> NonlinearOptions {
    let e = &s.experiment;
    NonlinearOptions {
        memory: e.lbfgs_memory,
        max_iter: e.lbfgs_max_iter,
        grad_tol: e.grad_tol,
        det_floor: e.det_floor,
        divergence_threshold: threshold,
        ..Default::default()
    }
}

#[allow(clippy::too_many_arguments)]
fn limit_block(
    ctx: &mut Ctx,
    mesh: &Mesh,
    problem: &LinearProblem,
    loads: &LoadAssembly,
    compat: &Compatibility,
    min_e: Option<f64>,
    scenario: &Scenario,
    solve_opts: &SolveOptions,
) -> Result<Value> {
    let d = problem.density();
    let exp = &scenario.experiment;
    let lim = minimize_f(problem, loads, &LimitOptions { classify_tol: exp.classify_tol, solve: *solve_opts, ..Default::default() })?;
    ctx.write("limit_solution.txt", &write_solution(mesh, lim.field.values()))?;
    let rep = eval_f(mesh, d, loads, &lim.field)?;
    let min_e = match min_e {
        Some(e) => e,
        None => problem.solve(loads, None, solve_opts)?.energy,
    };
    let tol = 1e-9 * (1.0 + min_e.abs());
    let mut b = json!({
        "min_f": num(lim.min_f),
        "w0": skew(&lim.w0),
        "w0_norm": num(lim.w0.norm_sq().sqrt()),
        "iterations": lim.iterations,
        "monotone": lim.is_monotone(),
    });
    let diff = lim.min_f - min_e;
    b["min_f_minus_min_e"] = match compat {
        Compatibility::Strict => ctx.check("limit.coincidence", diff.abs(), tol, diff.abs() <= tol),
        _ => ctx.check("limit.min_f_le_min_e", diff, tol, diff <= tol),
    };
    let gap_err = (rep.gap - rep.gap_closed_form).abs();
    let gap_tol = 1e-10 * (1.0 + rep.gap.abs());
    b["gap"] = num(rep.gap);
    b["gap_vs_closed_form"] = ctx.check("limit.gap_closed_form", gap_err, gap_tol, gap_err <= gap_tol);
    if let Compatibility::Weak { kernel } = compat {
        let stol = 1e-8 * (1.0 + lim.min_f.abs());
        let mut shifts = Vec::new();
        for &t in &exp.shift_t {
            let (_, sc) = shifted_minimizer(mesh, d, loads, &lim.field, &kernel[0], t, exp.classify_tol)?;
            let name = format!("limit.shift[t={t}]");
            shifts.push(json!({
                "t": num(t),
                "f_minus_min_f": ctx.check(&format!("{name}.f"), sc.f_delta, stol, sc.f_delta <= stol),
                "e_minus_min_e": ctx.check(&format!("{name}.e"), sc.e_delta, 0.0, t == 0.0 || sc.e_delta > 0.0),
            }));
        }
        b["shifted_minimizers"] = json!({ "direction": skew(&kernel[0]), "checks": shifts });
    }
    Ok(b)
}

fn sweep_block(ctx: &mut Ctx, mesh: &Mesh, sweep: &Sweep) -> Result<Value> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["h", "Fh", "W_proxy", "moment_dist", "iters", "status"])?;
    for r in &sweep.records {
        w.write_record([
            format!("{:e}", r.h),
            format!("{:e}", r.fh),
            format!("{:e}", r.w_proxy),
            format!("{:e}", r.moment_dist),
            r.iterations.to_string(),
            r.status.name().to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?;
    ctx.write("sweep.csv", std::str::from_utf8(&bytes)?)?;
    if let Some(f) = &sweep.last_field {
        ctx.write("nonlinear_solution.txt", &write_solution(mesh, f.values()))?;
    }
    let records: Vec<Value> = sweep
        .records
        .iter()
        .map(|r| {
            json!({
                "h": num(r.h), "fh": num(r.fh), "w_proxy": num(r.w_proxy), "moments": r.moments,
                "moment_dist": num(r.moment_dist), "iterations": r.iterations, "status": r.status.name(),
                "grad_norm": num(r.grad_norm), "floor": num(r.floor), "barrier_activations": r.barrier_activations,
            })
        })
        .collect();
    let floor_ok = sweep.floor.is_finite();
    let floor = ctx.check("nonlinear.floor_finite", sweep.floor, f64::INFINITY, floor_ok);
    if let Some(msg) = &sweep.aborted {
        ctx.failed.push(format!("nonlinear.sweep: {msg}"));
    }
    Ok(json!({
        "kind": "sweep",
        "limit_min_f": num(sweep.limit_min_f),
        "limit_w0": skew(&sweep.limit_w0),
        "linear_min_e": num(sweep.linear_min_e),
        "floor": floor,
        "aborted": sweep.aborted,
        "records": records,
    }))
}

fn divergence_block(
    ctx: &mut Ctx,
    mesh: &Mesh,
    loads: &LoadAssembly,
    scenario: &Scenario,
    witness: &SkewParam,
    witness_gap: f64,
) -> Result<Value> {
    let exp = &scenario.experiment;
    let reason = incompatible_reason(witness, witness_gap);
    let Some(&h) = exp.h_list.first() else {
        return Ok(ctx.refuse("sweep", reason));
    };
    let threshold = certified_threshold(witness_gap, h);
    let init = witness_start(mesh, h, witness, exp.witness_theta0)?;
    let r = minimize_fh(mesh, &scenario.density(), loads, h, &init, &nonlinear_options(scenario, Some(threshold)))?;
    let mut b = ctx.refuse("sweep", reason);
    b["kind"] = json!("divergence_certificate");
    b["h"] = num(h);
    b["status"] = json!(r.status.name());
    if r.status != Status::Diverged {
        ctx.failed.push(format!("nonlinear.divergence: status {} at F_h = {:e}", r.status.name(), r.fh_value));
    }
    b["threshold"] = num(threshold);
    b["fh"] = num(r.fh_value);
    b["iterations"] = json!(r.iterations);
    b["barrier_activations"] = json!(r.barrier_activations);
    if let Some(c) = &r.certificate {
        ctx.write("divergence_direction.txt", &write_solution(mesh, c.direction.values()))?;
        b["energy_trace"] = json!(c.energy_trace.iter().map(|x| num(*x)).collect::<Vec<_>>());
    }
    Ok(b)
}
