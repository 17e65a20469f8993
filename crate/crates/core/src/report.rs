//! CSV series and `report.json`. All files are written here, after every
//! stage has finished.

use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::pipeline::{PipelineError, Result, Run};

/// Seventeen significant digits, enough to round-trip an `f64`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

/// `(file name, contents)` for every CSV the run produces.
pub fn csv_files(run: &Run) -> Vec<(&'static str, String)> {
    let mut out = Vec::new();
    if let Some(d) = &run.dispersion {
        let rows = d
            .curve
            .samples
            .iter()
            .map(|s| vec![num(s.p), num(s.energy), num(s.gap), num(s.residual)])
            .collect();
        out.push(("dispersion.csv", csv_text(&["P", "E", "gap", "residual"], rows)));
    }
    if let Some(s) = &run.static_stage {
        let rows = s
            .grounds
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let b = run.sandwich.as_ref().map(|sw| &sw.rows[i]);
                vec![num(g.lambda), num(g.energy), opt(b.map(|r| r.l1)), opt(b.map(|r| r.u_star)), num(g.residual)]
            })
            .collect();
        out.push(("staticmass.csv", csv_text(&["lambda", "e_lambda", "lower_bound", "upper_bound", "residual"], rows)));
    }
    if let Some(sw) = &run.sandwich {
        let mut rows = Vec::new();
        for b in &sw.per_lambda {
            rows.push(vec![num(b.lambda), format!("grid_optimal;R={:.10}", b.optimal.radius), num(b.optimal.energy)]);
            if let Ok(p) = &b.parametric {
                rows.push(vec![num(b.lambda), p.best.trial.describe(), num(p.best.energy)]);
            }
        }
        out.push(("trialstate.csv", csv_text(&["lambda", "f_params", "U_lambda"], rows)));
        let rows = sw
            .rows
            .iter()
            .map(|r| vec![num(r.lambda), num(r.l2), num(r.l1), num(r.e), num(r.u_star), num(r.margin_min())])
            .collect();
        out.push(("sandwich.csv", csv_text(&["lambda", "L2", "L1", "e", "U_star", "margin_min"], rows)));
    }
    if let Some(o) = &run.oracle {
        let rows = o
            .cases
            .iter()
            .map(|c| {
                vec![
                    c.suite.to_string(),
                    c.instance.to_string(),
                    c.dim.to_string(),
                    num(c.reference),
                    num(c.candidate),
                    num(c.deviation),
                    num(c.tol),
                    if c.pass { "PASS" } else { "FAIL" }.to_string(),
                ]
            })
            .collect();
        out.push((
            "oracle.csv",
            csv_text(&["suite", "instance", "dim", "reference", "candidate", "deviation", "tol", "verdict"], rows),
        ));
    }
    if let Some(rows) = &run.converge {
        let rows = rows
            .iter()
            .map(|r| {
                vec![
                    r.variant.clone(),
                    r.n_max.to_string(),
                    num(r.dk),
                    r.fock_dim.to_string(),
                    num(r.m_dyn),
                    opt(r.m_stat),
                    opt(r.rel_diff),
                    num(r.worst_margin),
                    if r.pass() { "PASS" } else { "FAIL" }.to_string(),
                ]
            })
            .collect();
        out.push((
            "converge.csv",
            csv_text(&["variant", "n_max", "dk", "fock_dim", "M_dyn", "M_stat", "rel_diff", "worst_margin", "verdict"], rows),
        ));
    }
    out
}

pub fn report_json(run: &Run) -> Value {
    let cfg = &run.config;
    let mut root = Map::new();
    root.insert("tool".into(), json!({ "name": "polaron-effmass", "version": env!("CARGO_PKG_VERSION") }));
    root.insert("subcommand".into(), json!(run.subcommand.name()));
    root.insert(
        "config".into(),
        json!({ "sha256": cfg.hash(), "echo": serde_json::to_value(cfg).expect("config serializes") }),
    );
    root.insert("model".into(), json!({ "fock_dim": run.fock_dim, "mode_count": run.mode_count }));
    let tol = &cfg.run.tolerances;

    if let Some(d) = &run.dispersion {
        let (m_pt, m_pt_error) = match &d.perturbative {
            Ok(f) => (Some(f.mass), None),
            Err(e) => (None, Some(e.clone())),
        };
        root.insert(
            "dispersion".into(),
            json!({
                "E0": d.curve.e0,
                "P_c": d.p_c,
                "samples": d.curve.samples.len(),
                "mass_fit": {
                    "M_dyn": d.fit.mass,
                    "p_fit": d.fit.p_fit,
                    "quartic": d.fit.quartic,
                    "rms": d.fit.rms,
                    "condition": d.fit.condition,
                    "samples": d.fit.samples,
                    "M_dyn_half_window": d.fit.half_window_mass,
                },
                "M_PT": m_pt,
                "M_PT_error": m_pt_error,
                "certificate": {
                    "C_min": d.certificate.c_min,
                    "worst_P": d.certificate.worst_p,
                    "margin": d.certificate.margin,
                    "pass": d.certificate_pass(tol.certificate),
                },
                "ceilings": {
                    "phonon_excess": d.ceilings.phonon_excess,
                    "parabola_excess": d.ceilings.parabola_excess,
                    "violations": d.ceilings.violations.len(),
                    "pass": d.ceilings_pass(),
                },
            }),
        );
    }

    if let Some(s) = &run.static_stage {
        let r = &s.result;
        let ex = &r.extrapolation;
        root.insert(
            "static_mass".into(),
            json!({
                "lambda_seq": r.lambda_seq,
                "e_lambda": r.e_vals,
                "e0": ex.e0,
                "e0_err": ex.e0_err,
                "M_stat": r.mass,
                "M_stat_err": r.mass_err,
                "at_lower_edge": r.at_lower_edge,
                "fit": { "c1": ex.c1, "c2": ex.c2, "rms": ex.rms, "e0_drop_largest": ex.e0_drop_largest, "accepted": ex.accepted },
                "potential_tail_mass": s.tail_mass,
            }),
        );
    }

    if let Some(sw) = &run.sandwich {
        let lambdas: Vec<f64> = sw.rows.iter().map(|r| r.lambda).collect();
        let parametric: Vec<Option<f64>> = sw.per_lambda.iter().map(|b| b.parametric.as_ref().ok().map(|p| p.best.energy)).collect();
        root.insert(
            "upper_bound".into(),
            json!({
                "lambda_seq": lambdas,
                "U_star": sw.rows.iter().map(|r| r.u_star).collect::<Vec<_>>(),
                "radius": sw.per_lambda.iter().map(|b| b.optimal.radius).collect::<Vec<_>>(),
                "U_parametric": parametric,
                "extrapolated": sw.upper_extrapolation.e0,
                "extrapolated_err": sw.upper_extrapolation.e0_err,
                "family_size": sw.family_size,
                "family_continuity": sw.family_continuity,
            }),
        );
        root.insert(
            "lower_bound".into(),
            json!({
                "lambda_seq": lambdas,
                "L1": sw.rows.iter().map(|r| r.l1).collect::<Vec<_>>(),
                "L2": sw.rows.iter().map(|r| r.l2).collect::<Vec<_>>(),
                "L2_inner": sw.per_lambda.iter().map(|b| b.split.inner).collect::<Vec<_>>(),
                "L2_tail": sw.per_lambda.iter().map(|b| b.split.tail).collect::<Vec<_>>(),
                "beta": sw.per_lambda.iter().map(|b| b.params.beta).collect::<Vec<_>>(),
                "epsilon": sw.per_lambda.iter().map(|b| b.params.epsilon).collect::<Vec<_>>(),
                "softened_mass": sw.per_lambda.iter().map(|b| b.params.softened_mass()).collect::<Vec<_>>(),
                "split_margin": sw.per_lambda.iter().map(|b| b.split_margin).collect::<Vec<_>>(),
                "C_nodes": sw.node_certificate.c_min,
                "v_sup": sw.v_sup,
            }),
        );
    }

    if let Some(o) = &run.oracle {
        let mut suites = Map::new();
        for name in ["frame", "lanczos", "poschl_teller", "monotone", "scaling"] {
            let cases: Vec<_> = o.suite(name).collect();
            let worst = cases.iter().map(|c| c.deviation).fold(f64::NEG_INFINITY, f64::max);
            suites.insert(
                name.into(),
                json!({ "count": cases.len(), "max_deviation": worst, "pass": !cases.is_empty() && cases.iter().all(|c| c.pass) }),
            );
        }
        root.insert("oracle".into(), json!({ "pass": o.pass(), "suites": suites }));
    }

    if let Some(rows) = &run.converge {
        let table: Vec<Value> = rows
            .iter()
            .map(|r| {
                json!({
                    "variant": r.variant, "n_max": r.n_max, "dk": r.dk, "fock_dim": r.fock_dim,
                    "M_dyn": r.m_dyn, "M_stat": r.m_stat, "rel_diff": r.rel_diff,
                    "ordering_pass": r.ordering_pass, "worst_margin": r.worst_margin,
                    "mass_pass": r.mass_pass, "certificate_pass": r.certificate_pass,
                    "ceilings_pass": r.ceilings_pass, "pass": r.pass(),
                })
            })
            .collect();
        root.insert("truncation".into(), Value::Array(table));
    }

    let checks: Map<String, Value> = run.verdicts().into_iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    let sw = run.sandwich.as_ref();
    root.insert(
        "verdict".into(),
        json!({
            "pass": run.pass(),
            "checks": checks,
            "worst_margin": sw.map(|s| s.ordering.worst_margin),
            "worst_lambda": sw.map(|s| s.ordering.worst_lambda),
            "worst_pair": sw.map(|s| s.ordering.worst_pair),
            "M_dyn": sw.map(|s| s.m_dyn),
            "M_stat": sw.and_then(|s| s.m_stat),
            "mass_rel_diff": sw.and_then(|s| s.mass_rel_diff),
        }),
    );
    root.insert("warnings".into(), json!(run.warnings));
    let timings: Map<String, Value> = run.timings.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    root.insert("timings_seconds".into(), Value::Object(timings));
    Value::Object(root)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Output { path: path.display().to_string(), message: e.to_string() }
}

/// Write every CSV and `report.json` into `dir`, creating it if needed.
pub fn write_outputs(run: &Run, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for (name, text) in csv_files(run) {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(io_err(&path))?;
        written.push(path);
    }
    let path = dir.join("report.json");
    let text = serde_json::to_string_pretty(&report_json(run)).expect("report serializes");
    std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}

/// Markdown table of the headline numbers of a run, at a fixed printed
/// precision, as embedded in `docs/reference_tables.md`.
pub fn reference_table(run: &Run) -> String {
    let mut t = String::new();
    if let Some(sw) = &run.sandwich {
        t.push_str("| lambda | L2 | L1 | e | U* |\n|---|---|---|---|---|\n");
        for r in &sw.rows {
            t.push_str(&format!("| {} | {:.8} | {:.8} | {:.8} | {:.8} |\n", r.lambda, r.l2, r.l1, r.e, r.u_star));
        }
        t.push_str(&format!(
            "\nM_dyn = {:.8}, M_stat = {}, verdict {}\n",
            sw.m_dyn,
            sw.m_stat.map_or("n/a".to_string(), |m| format!("{m:.8}")),
            if run.pass() { "PASS" } else { "FAIL" }
        ));
    }
    if let Some(o) = &run.oracle {
        t.push_str("| suite | cases | passed |\n|---|---|---|\n");
        for name in ["frame", "lanczos", "poschl_teller", "monotone", "scaling"] {
            let cases: Vec<_> = o.suite(name).collect();
            t.push_str(&format!("| {name} | {} | {} |\n", cases.len(), cases.iter().filter(|c| c.pass).count()));
        }
    }
    t
}

/// Replace the body between `<!-- table:NAME -->` and `<!-- /table -->`.
/// Returns `None` when the markers are missing.
pub fn splice_table(doc: &str, name: &str, body: &str) -> Option<String> {
    let open = format!("<!-- table:{name} -->\n");
    let start = doc.find(&open)? + open.len();
    let end = start + doc[start..].find("<!-- /table -->")?;
    Some(format!("{}{}{}", &doc[..start], body, &doc[end..]))
}

/// Body currently stored between the markers of `name`.
pub fn stored_table<'a>(doc: &'a str, name: &str) -> Option<&'a str> {
    let open = format!("<!-- table:{name} -->\n");
    let start = doc.find(&open)? + open.len();
    let end = start + doc[start..].find("<!-- /table -->")?;
    Some(&doc[start..end])
}

/// Dotted paths of every key in a JSON document; array elements are
/// collapsed to `[]`.
pub fn key_paths(v: &Value) -> Vec<String> {
    fn walk(v: &Value, prefix: &str, out: &mut Vec<String>) {
        match v {
            Value::Object(m) => {
                for (k, x) in m {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    out.push(p.clone());
                    walk(x, &p, out);
                }
            }
            Value::Array(items) => {
                for x in items {
                    walk(x, &format!("{prefix}[]"), out);
                }
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(v, "", &mut out);
    out.sort();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn csv_layout() {
        let t = csv_text(&["a", "b"], vec![vec!["1".into(), "2".into()]]);
        assert_eq!(t, "a,b\n1,2\n");
    }

    #[test]
    fn splice_round_trip() {
        let doc = "a\n<!-- table:x -->\nold\n<!-- /table -->\nb\n";
        let new = splice_table(doc, "x", "new\n").unwrap();
        assert_eq!(stored_table(&new, "x"), Some("new\n"));
        assert!(new.ends_with("<!-- /table -->\nb\n"));
        assert!(splice_table(doc, "y", "z").is_none());
    }

    #[test]
    fn key_paths_flatten() {
        let v = json!({"a": {"b": 1, "c": [{"d": 2}]}});
        assert_eq!(key_paths(&v), vec!["a", "a.b", "a.c", "a.c[].d"]);
    }
}
