//! One function per subcommand; each returns a [`Report`] and never prints.

use crate::report::{num, nums, set, unix_now, write_artifacts, Manifest, ProblemRef, Report, Table};
use crate::{Cli, Command, Format, Point, StartSpec};
use anyhow::{anyhow, bail, Context, Result};
use regdiag::continuation::{
    global_min_start, quadratic_growth_estimate, trace_branch, Branch, Termination, TraceOptions,
    DEFAULT_SEEDS_PER_AXIS,
};
use regdiag::kkt::{classify_kkt, enumerate_kkt_points, solve_reduced_kkt, ClassKind, KktPoint};
use regdiag::perturb::{failure_set_estimate, prevalence_experiment};
use regdiag::problem::{list_corpus, load_corpus, ProblemFile};
use regdiag::regularity::full_report;
use regdiag::sensitivity::{
    conditioning_profile, hypergradient_complementarity, reduced_candidates, validate_against_fd,
    SensitivityResult,
};
use regdiag::strata::{rigidity_screen, strat_signature};
use regdiag::{load_problem, repro, ParametricProblem, Tolerances};
use serde_json::{json, Value};

pub enum Outcome {
    Clean,
    Finding,
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let started = unix_now();
    let tol = tolerances(&cli.global.tol)?;
    let report = dispatch(&cli.command, cli.global.seed, &tol)?;

    let stdout = match cli.global.format {
        Format::Json => match &report.text {
            Some(t) => t.clone(),
            None => serde_json::to_string_pretty(&report.json)? + "\n",
        },
        Format::Csv => match report.tables.first() {
            Some(t) => t.to_csv()?,
            None => bail!("this subcommand has no tabular output"),
        },
    };
    emit(&stdout)?;

    if let Some(dir) = &cli.global.out {
        let mut options = serde_json::to_value(&cli.command)?;
        if let Value::Object(m) = &mut options {
            m.insert("tol_overrides".into(), json!(cli.global.tol));
            m.insert("format".into(), serde_json::to_value(cli.global.format)?);
        }
        let mut manifest = Manifest {
            tool: "regdiag",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: command_name(&cli.command),
            options,
            problem: report.problem.as_ref(),
            seed: cli.global.seed,
            tolerances: &tol,
            threads: rayon::current_num_threads(),
            started_unix: started,
            finished_unix: started,
            finding: report.finding,
            files: Vec::new(),
        };
        write_artifacts(dir, &report, &mut manifest)?;
    }
    Ok(if report.finding { Outcome::Finding } else { Outcome::Clean })
}

/// A closed pipe (`regdiag ... | head`) is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Check { .. } => "check",
        Command::Trace { .. } => "trace",
        Command::Strata { .. } => "strata",
        Command::Perturb { .. } => "perturb",
        Command::Sens { .. } => "sens",
        Command::Growth { .. } => "growth",
        Command::Corpus { .. } => "corpus",
        Command::Repro { .. } => "repro",
    }
}

/// Applies `name=value` overrides through the serde form of [`Tolerances`],
/// so unknown names and ill-typed values are rejected by the same code that
/// reads a tolerance file.
pub fn tolerances(overrides: &[String]) -> Result<Tolerances> {
    let mut v = serde_json::to_value(Tolerances::default())?;
    let map = v.as_object_mut().expect("tolerances serialize as an object");
    for o in overrides {
        let (k, val) = o
            .split_once('=')
            .ok_or_else(|| anyhow!("tolerance override {o:?} is not of the form name=value"))?;
        let k = k.trim();
        if !map.contains_key(k) {
            let names: Vec<&str> = map.keys().map(String::as_str).collect();
            bail!("unknown tolerance {k:?}; expected one of {}", names.join(", "));
        }
        let slot = map.get_mut(k).expect("checked above");
        let parsed: Value = serde_json::from_str(val.trim())
            .with_context(|| format!("tolerance {k}: {val:?} is not a number"))?;
        *slot = parsed;
    }
    let tol: Tolerances = serde_json::from_value(v).context("invalid tolerance override")?;
    tol.validate()?;
    Ok(tol)
}

fn load(source: &str) -> Result<(ParametricProblem, ProblemRef)> {
    let p = load_problem(source)?;
    let r = ProblemRef::new(source, &p)?;
    Ok((p, r))
}

fn dispatch(cmd: &Command, seed: u64, tol: &Tolerances) -> Result<Report> {
    match cmd {
        Command::Check { problem, x } => check(problem, x, tol),
        Command::Trace {
            problem,
            from,
            to,
            start,
            allow_non_minimizer,
        } => trace(problem, from, to, start, *allow_non_minimizer, tol),
        Command::Strata { problem, xs, grid } => strata(problem, xs, *grid, tol),
        Command::Perturb {
            problem,
            condition,
            nu,
            trials,
            grid,
        } => {
            let (p, r) = load(problem)?;
            let base = failure_set_estimate(&p, *condition, *grid, tol)?;
            let prev = prevalence_experiment(&p, *condition, *nu, *trials, seed, *grid, tol)?;
            let mut t = Table::new("trials", &["trial", "fraction", "intervals", "x_ranges", "a", "b"]);
            for tr in &prev.per_trial {
                let ranges: Vec<String> = tr
                    .intervals
                    .iter()
                    .map(|iv| format!("[{}, {}]", num(iv.x_lo), num(iv.x_hi)))
                    .collect();
                t.push(vec![
                    tr.trial.to_string(),
                    num(tr.fraction),
                    tr.intervals.len().to_string(),
                    ranges.join(" "),
                    nums(&tr.a),
                    nums(&tr.b),
                ]);
            }
            let finding = prev.per_trial.iter().any(|tr| !tr.intervals.is_empty());
            Ok(Report {
                name: "perturb",
                json: json!({ "unperturbed": base, "prevalence": prev }),
                tables: vec![t],
                finding,
                text: None,
                problem: Some(r),
            })
        }
        Command::Sens {
            problem,
            x,
            from,
            to,
            fd_step,
        } => match (x, from, to) {
            (Some(x), None, None) => sens_point(problem, x, tol),
            (None, Some(a), Some(b)) => sens_profile(problem, a, b, *fd_step, tol),
            _ => bail!("sens needs either --x, or both --from and --to"),
        },
        Command::Growth {
            problem,
            x,
            delta,
            samples,
        } => growth(problem, x, *delta, *samples, seed, tol),
        Command::Corpus { id } => corpus(id.as_deref()),
        Command::Repro { only } => repro_cmd(only, tol),
    }
}

fn kkt_points_at(p: &ParametricProblem, x: &[f64], tol: &Tolerances) -> Result<Vec<KktPoint>> {
    Ok(enumerate_kkt_points(p, x, DEFAULT_SEEDS_PER_AXIS, tol)?.points)
}

fn check(problem: &str, x: &[f64], tol: &Tolerances) -> Result<Report> {
    let (p, r) = load(problem)?;
    let points = kkt_points_at(&p, x, tol)?;
    let mut t = Table::new(
        "points",
        &[
            "point", "y", "lambda", "active", "class", "licq_margin", "scsc_margin", "sosc_modulus",
            "kkt_sigma_min", "licq", "scsc", "sosc",
        ],
    );
    let mut entries = Vec::new();
    let mut finding = false;
    for (i, kkt) in points.iter().enumerate() {
        let class = classify_kkt(&p, kkt, tol)?;
        let rep = full_report(&p, kkt, tol)?;
        finding |= !rep.all_hold();
        t.push(vec![
            (i + 1).to_string(),
            nums(&kkt.y),
            nums(&kkt.lambda),
            set(&kkt.active),
            class_name(class.kind).into(),
            num(rep.licq_margin),
            num(rep.scsc_margin),
            num(rep.sosc_modulus),
            num(rep.kkt_sigma_min),
            rep.licq.to_string(),
            rep.scsc.to_string(),
            rep.sosc.to_string(),
        ]);
        entries.push(json!({ "kkt": kkt, "classification": class, "report": rep }));
    }
    Ok(Report {
        name: "check",
        json: json!({ "problem": p.name, "x": x, "points": entries }),
        tables: vec![t],
        finding,
        text: None,
        problem: Some(r),
    })
}

fn class_name(k: ClassKind) -> &'static str {
    match k {
        ClassKind::StrictLocalMin => "STRICT_LOCAL_MIN",
        ClassKind::NotLocalMin => "NOT_LOCAL_MIN",
        ClassKind::Undetermined => "UNDETERMINED",
    }
}

fn parse_set(text: &str, k: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for t in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let i: usize = t.parse().with_context(|| format!("bad constraint index {t:?}"))?;
        if i == 0 || i > k {
            bail!("constraint index {i} out of range 1..={k}");
        }
        out.push(i - 1);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn start_point(p: &ParametricProblem, x: &[f64], spec: &StartSpec, tol: &Tolerances) -> Result<KktPoint> {
    match spec.start.as_str() {
        "global-min" => {
            if spec.start_y.is_some() || spec.start_set.is_some() {
                bail!("--start-y and --start-set need --start point");
            }
            Ok(global_min_start(p, x, tol)?)
        }
        "point" => {
            let y = spec.start_y.as_ref().ok_or_else(|| anyhow!("--start point needs --start-y"))?;
            let basis = parse_set(spec.start_set.as_deref().unwrap_or(""), p.k)?;
            Ok(solve_reduced_kkt(p, x, &basis, y, &vec![1.0; basis.len()], tol)?)
        }
        other => bail!("unknown --start {other:?}; expected global-min or point"),
    }
}

fn branch_tables(b: &Branch) -> Vec<Table> {
    let mut samples = Table::new(
        "branch",
        &[
            "s", "x", "y", "lambda", "active", "licq_margin", "scsc_margin", "sosc_modulus", "kkt_sigma_min",
        ],
    );
    for s in &b.samples {
        samples.push(vec![
            num(s.s),
            nums(&s.kkt.x),
            nums(&s.kkt.y),
            nums(&s.kkt.lambda),
            set(&s.kkt.active),
            num(s.report.licq_margin),
            num(s.report.scsc_margin),
            num(s.report.sosc_modulus),
            num(s.report.kkt_sigma_min),
        ]);
    }
    let mut events = Table::new("events", &["kind", "index", "x_star", "s_star", "bracket_width"]);
    for e in &b.events {
        events.push(vec![
            serde_json::to_value(e.kind)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
            e.index.map_or(String::new(), |i| (i + 1).to_string()),
            num(e.x_star),
            num(e.s_star),
            num(e.bracket_width),
        ]);
    }
    vec![samples, events]
}

fn trace(
    problem: &str,
    from: &[f64],
    to: &[f64],
    start: &StartSpec,
    allow_non_minimizer: bool,
    tol: &Tolerances,
) -> Result<Report> {
    let (p, r) = load(problem)?;
    let x0 = p.clamp_x(from)?;
    let kkt = start_point(&p, &x0, start, tol)?;
    let opts = TraceOptions {
        allow_non_minimizer,
        ..TraceOptions::default()
    };
    let b = trace_branch(&p, &x0, to, &kkt, &opts, tol)?;
    let finding = !b.events.is_empty() || b.termination != Termination::PathEnd;
    Ok(Report {
        name: "trace",
        json: json!({
            "problem": p.name,
            "options": opts,
            "termination": b.termination,
            "termination_x": b.termination_x,
            "events": b.events,
            "branch": b,
        }),
        tables: branch_tables(&b),
        finding,
        text: None,
        problem: Some(r),
    })
}

fn strata(problem: &str, xs: &[Point], grid: usize, tol: &Tolerances) -> Result<Report> {
    let (p, r) = load(problem)?;
    let (screen, sigs) = if xs.len() >= 2 {
        let samples: Vec<Vec<f64>> = xs.iter().map(|x| x.0.clone()).collect();
        let (s, sigs) = rigidity_screen(&p, &samples, grid, tol)?;
        (Some(s), sigs)
    } else {
        (None, vec![strat_signature(&p, &xs[0], grid, tol)?])
    };
    let mut t = Table::new("strata", &["x", "vertices", "arcs", "faces", "degenerate_vertices"]);
    for (x, s) in xs.iter().zip(&sigs) {
        t.push(vec![
            nums(x),
            s.vertices.to_string(),
            s.arcs.to_string(),
            s.faces.to_string(),
            s.degenerate_vertices.to_string(),
        ]);
    }
    let samples: Vec<Value> = xs
        .iter()
        .zip(&sigs)
        .map(|(x, s)| json!({ "x": x, "signature": s }))
        .collect();
    let finding = screen.as_ref().is_some_and(|s| s.is_obstructed());
    Ok(Report {
        name: "strata",
        json: json!({ "problem": p.name, "grid_res": grid, "samples": samples, "screen": screen }),
        tables: vec![t],
        finding,
        text: None,
        problem: Some(r),
    })
}

fn sens_row(t: &mut Table, point: usize, label: &str, solved: &[usize], res: &regdiag::Result<SensitivityResult>) {
    match res {
        Ok(s) => t.push(vec![
            point.to_string(),
            label.into(),
            set(&s.set),
            num(s.sigma_min),
            num(s.det),
            nums(s.dy_dx.as_slice()),
            String::new(),
        ]),
        Err(e) => t.push(vec![
            point.to_string(),
            label.into(),
            set(solved),
            String::new(),
            String::new(),
            String::new(),
            e.to_string(),
        ]),
    }
}

fn sens_json(res: &regdiag::Result<SensitivityResult>) -> Value {
    match res {
        Ok(s) => json!(s),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn sens_point(problem: &str, x: &[f64], tol: &Tolerances) -> Result<Report> {
    let (p, r) = load(problem)?;
    let points = kkt_points_at(&p, x, tol)?;
    let mut t = Table::new("sensitivity", &["point", "method", "set", "sigma_min", "det", "dy_dx", "error"]);
    let mut entries = Vec::new();
    let mut finding = false;
    for (i, kkt) in points.iter().enumerate() {
        let cands = reduced_candidates(&p, kkt, tol)?;
        let comp = hypergradient_complementarity(&p, kkt, tol);
        // Two reduced candidates mean the active set is ambiguous at this point.
        finding |= cands.len() > 1 || comp.is_err() || cands.iter().any(|(_, c)| c.is_err());
        let mut reduced = Vec::new();
        for (s, c) in &cands {
            sens_row(&mut t, i + 1, "REDUCED", s, c);
            reduced.push(json!({ "set": set(s), "result": sens_json(c) }));
        }
        let all: Vec<usize> = (0..p.k).collect();
        sens_row(&mut t, i + 1, "COMPLEMENTARITY", &all, &comp);
        entries.push(json!({ "kkt": kkt, "reduced": reduced, "complementarity": sens_json(&comp) }));
    }
    Ok(Report {
        name: "sens",
        json: json!({ "problem": p.name, "x": x, "points": entries }),
        tables: vec![t],
        finding,
        text: None,
        problem: Some(r),
    })
}

fn sens_profile(problem: &str, from: &[f64], to: &[f64], fd_step: Option<f64>, tol: &Tolerances) -> Result<Report> {
    let (p, r) = load(problem)?;
    let x0 = p.clamp_x(from)?;
    let start = global_min_start(&p, &x0, tol)?;
    let b = trace_branch(&p, &x0, to, &start, &TraceOptions::default(), tol)?;
    let rows = conditioning_profile(&p, &b, tol)?;
    let fd = fd_step
        .map(|h| validate_against_fd(&p, &b, h, repro::FD_CLEARANCE, tol))
        .transpose()?;
    let mut t = Table::new(
        "conditioning",
        &["x", "sigma_min_reduced", "sigma_min_comp", "det_comp", "reduced_singular", "comp_singular"],
    );
    for row in &rows {
        t.push(vec![
            num(row.x),
            num(row.sigma_min_reduced),
            num(row.sigma_min_comp),
            num(row.det_comp),
            row.reduced_singular.to_string(),
            row.comp_singular.to_string(),
        ]);
    }
    let finding = rows.iter().any(|r| r.reduced_singular || r.comp_singular) || !b.events.is_empty();
    Ok(Report {
        name: "sens",
        json: json!({
            "problem": p.name,
            "termination": b.termination,
            "events": b.events,
            "profile": rows,
            "fd_max_error": fd,
        }),
        tables: vec![t],
        finding,
        text: None,
        problem: Some(r),
    })
}

fn growth(problem: &str, x: &[f64], delta: f64, samples: usize, seed: u64, tol: &Tolerances) -> Result<Report> {
    let (p, r) = load(problem)?;
    let points = kkt_points_at(&p, x, tol)?;
    let mut t = Table::new("growth", &["y", "active", "c_hat", "witness_y", "feasible_samples"]);
    let mut entries = Vec::new();
    let mut finding = false;
    for kkt in &points {
        if classify_kkt(&p, kkt, tol)?.kind != ClassKind::StrictLocalMin {
            continue;
        }
        let g = quadratic_growth_estimate(&p, kkt, delta, samples, seed, tol)?;
        finding |= g.c_hat <= repro::GROWTH_LIMIT;
        t.push(vec![
            nums(&kkt.y),
            set(&kkt.active),
            num(g.c_hat),
            nums(&g.witness_y),
            g.feasible_samples.to_string(),
        ]);
        entries.push(json!({ "kkt": kkt, "growth": g }));
    }
    Ok(Report {
        name: "growth",
        json: json!({
            "problem": p.name,
            "x": x,
            "delta": delta,
            "samples": samples,
            "seed": seed,
            "threshold": repro::GROWTH_LIMIT,
            "minimizers": entries,
        }),
        tables: vec![t],
        finding,
        text: None,
        problem: Some(r),
    })
}

fn corpus(id: Option<&str>) -> Result<Report> {
    match id {
        None => {
            let entries = list_corpus();
            let mut t = Table::new("corpus", &["id", "description", "expects"]);
            let mut text = String::new();
            for e in &entries {
                t.push(vec![e.id.into(), e.description.into(), e.expects.join(" ")]);
                text.push_str(&format!("{:<20} {}\n", e.id, e.description));
            }
            Ok(Report {
                name: "corpus",
                json: json!(entries),
                tables: vec![t],
                finding: false,
                text: Some(text),
                problem: None,
            })
        }
        Some(id) => {
            let p = load_corpus(id).ok_or_else(|| anyhow!("unknown corpus id `{id}`"))??;
            let r = ProblemRef::new(id, &p)?;
            Ok(Report {
                name: "problem",
                json: serde_json::to_value(ProblemFile::from_problem(&p))?,
                tables: Vec::new(),
                finding: false,
                text: None,
                problem: Some(r),
            })
        }
    }
}

fn repro_cmd(only: &[usize], tol: &Tolerances) -> Result<Report> {
    let ids: Vec<usize> = if only.is_empty() {
        repro::CRITERIA.iter().map(|c| c.0).collect()
    } else {
        only.to_vec()
    };
    let mut t = Table::new("repro", &["criterion", "title", "passed", "seconds", "detail"]);
    let mut text = String::new();
    let mut outcomes = Vec::new();
    let mut all = true;
    for id in ids {
        let o = repro::run_criterion(id, tol)?;
        all &= o.passed;
        text.push_str(&format!(
            "{} criterion {:>2}: {} ({}) [{:.1}s]\n",
            if o.passed { "PASS" } else { "FAIL" },
            o.id,
            o.title,
            o.detail,
            o.seconds
        ));
        t.push(vec![
            o.id.to_string(),
            o.title.into(),
            o.passed.to_string(),
            format!("{:.3}", o.seconds),
            o.detail.clone(),
        ]);
        outcomes.push(o);
    }
    Ok(Report {
        name: "repro",
        json: json!({ "all_passed": all, "criteria": outcomes }),
        tables: vec![t],
        finding: !all,
        text: Some(text),
        problem: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_and_reject_unknown_names() {
        let t = tolerances(&["reg_tol=1e-5".into(), "max_newton=80".into()]).unwrap();
        assert_eq!(t.reg_tol, 1e-5);
        assert_eq!(t.max_newton, 80);
        assert!(tolerances(&["nope=1".into()]).is_err());
        assert!(tolerances(&["reg_tol".into()]).is_err());
        assert!(tolerances(&["max_newton=1.5".into()]).is_err());
    }

    #[test]
    fn start_sets_are_one_based() {
        assert_eq!(parse_set("2,1", 3).unwrap(), vec![0, 1]);
        assert_eq!(parse_set("", 3).unwrap(), Vec::<usize>::new());
        assert!(parse_set("0", 3).is_err());
        assert!(parse_set("4", 3).is_err());
    }
}
