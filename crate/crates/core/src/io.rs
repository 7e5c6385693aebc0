//! Interchange formats: sensor-log CSV, JSON config documents, the flat
//! key=value bound report, and empirical rate estimation from logs.
//!
//! Logs are strict: every cell must parse, every row must match the
//! header width, and errors carry 1-based line numbers. Rates estimated
//! here are raw frequencies; clamping happens in the theory layer.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{AuxKind, Dist, Example, GraphSpec};
use crate::theory::{AuxRates, BoundReport, PerDist, RateProfile};

const FIXED_COLUMNS: [&str; 4] = ["id", "dist", "y", "s_main"];

/// Renders rows as sensor-log CSV: `id,dist,y,s_main,<model_id>...` with
/// the row index as id.
pub fn to_sensor_log_string(spec: &GraphSpec, rows: &[Example]) -> Result<String> {
    let mut out = String::new();
    out.push_str(&FIXED_COLUMNS.join(","));
    for m in &spec.aux_models {
        if m.id.contains([',', '\n', '\r']) {
            return Err(Error::InvalidArgument(format!("model id {:?} contains a delimiter", m.id)));
        }
        out.push(',');
        out.push_str(&m.id);
    }
    out.push('\n');
    for (i, ex) in rows.iter().enumerate() {
        spec.validate_example(ex)?;
        write!(out, "{i},{},{},{}", ex.dist.as_str(), ex.label, ex.main).unwrap();
        for &s in &ex.aux {
            write!(out, ",{s}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_sensor_log(path: impl AsRef<Path>, spec: &GraphSpec, rows: &[Example]) -> Result<()> {
    std::fs::write(path, to_sensor_log_string(spec, rows)?)?;
    Ok(())
}

/// Parses a sensor log into the auxiliary-model ids declared by its
/// header and the example rows.
pub fn parse_sensor_log(content: &str) -> Result<(Vec<String>, Vec<Example>)> {
    let mut lines = content.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or(Error::Parse { line: 1, msg: "empty file (missing header)".into() })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < FIXED_COLUMNS.len() || cols[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header must start with {:?}, got {header:?}", FIXED_COLUMNS.join(",")),
        });
    }
    let aux_ids: Vec<String> = cols[FIXED_COLUMNS.len()..].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1; // enumerate is 0-based over all lines
        if raw.is_empty() {
            continue;
        }
        let cells: Vec<&str> = raw.split(',').collect();
        if cells.len() != cols.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} cells, got {}", cols.len(), cells.len()),
            });
        }
        let dist: Dist = cells[1].parse().map_err(|msg| Error::Parse { line, msg })?;
        let label = parse_cell::<usize>(cells[2], "y", line)?;
        let main = parse_cell::<usize>(cells[3], "s_main", line)?;
        let mut aux = Vec::with_capacity(aux_ids.len());
        for (cell, id) in cells[FIXED_COLUMNS.len()..].iter().zip(&aux_ids) {
            match *cell {
                "0" => aux.push(0),
                "1" => aux.push(1),
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("column {id:?} must be 0 or 1, got {other:?}"),
                    })
                }
            }
        }
        rows.push(Example { label, dist, main, aux });
    }
    Ok((aux_ids, rows))
}

fn parse_cell<T: std::str::FromStr>(cell: &str, name: &str, line: usize) -> Result<T> {
    cell.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("column {name:?} must be a nonnegative integer, got {cell:?}"),
    })
}

pub fn read_sensor_log(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Example>)> {
    parse_sensor_log(&std::fs::read_to_string(path)?)
}

/// Checks that a log header names exactly the spec's models, in order.
pub fn check_log_matches_spec(aux_ids: &[String], spec: &GraphSpec) -> Result<()> {
    let want: Vec<&str> = spec.aux_models.iter().map(|m| m.id.as_str()).collect();
    if aux_ids.iter().map(String::as_str).ne(want.iter().copied()) {
        return Err(Error::Schema {
            path: "header".into(),
            msg: format!("log columns {aux_ids:?} do not match spec models {want:?}"),
        });
    }
    Ok(())
}

/// Reads a log and validates it against `spec`.
pub fn read_examples_for_spec(path: impl AsRef<Path>, spec: &GraphSpec) -> Result<Vec<Example>> {
    let (aux_ids, rows) = read_sensor_log(&path)?;
    check_log_matches_spec(&aux_ids, spec)?;
    for ex in &rows {
        spec.validate_example(ex)?;
    }
    Ok(rows)
}

/// Reads a JSON config document, rejecting unknown fields.
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path)?;
    serde_json::from_str(&content).map_err(|e| Error::Schema {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

/// Writes a config document as pretty-printed JSON with a trailing
/// newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    std::fs::write(path, body)?;
    Ok(())
}

fn fmt_f64(v: f64) -> String {
    // f64 Display is the shortest decimal that round-trips exactly
    format!("{v}")
}

/// Renders a bound report as `key=value` lines. Bounds whose
/// preconditions failed appear only through their `*.valid=false` flag.
pub fn render_bound_report(r: &BoundReport) -> String {
    fn kv(out: &mut String, k: &str, v: String) {
        writeln!(out, "{k}={v}").unwrap();
    }
    fn per(out: &mut String, k: &str, v: &PerDist) {
        writeln!(out, "{k}.benign={}", fmt_f64(v.benign)).unwrap();
        writeln!(out, "{k}.adversarial={}", fmt_f64(v.adversarial)).unwrap();
    }
    let mut out = String::new();
    per(&mut out, "lemma1.mu.main", &r.mu_main);
    per(&mut out, "lemma1.mu.i", &r.mu_i_block);
    per(&mut out, "lemma1.mu.j", &r.mu_j_block);
    per(&mut out, "lemma1.mu.y0", &r.mu_y0);
    per(&mut out, "lemma1.mu.y1", &r.mu_y1);
    kv(&mut out, "lemma1.v2", fmt_f64(r.v2));
    kv(&mut out, "thm1.valid", r.thm1_bound.is_some().to_string());
    if let Some(b) = r.thm1_bound {
        kv(&mut out, "thm1.bound", fmt_f64(b));
    }
    kv(&mut out, "cor1.valid", r.cor1_bound.is_some().to_string());
    if let Some(b) = r.cor1_bound {
        kv(&mut out, "cor1.bound", fmt_f64(b));
    }
    kv(&mut out, "thm2.valid", r.sufficient.is_some().to_string());
    if let Some(sc) = &r.sufficient {
        per(&mut out, "thm2.gamma", &sc.gamma);
        if let Some(t) = sc.threshold {
            kv(&mut out, "thm2.threshold", fmt_f64(t));
        }
        kv(&mut out, "thm2.holds.benign", sc.holds_benign.to_string());
        kv(&mut out, "thm2.holds.adversarial", sc.holds_adversarial.to_string());
        kv(&mut out, "thm2.holds", sc.holds.to_string());
    }
    kv(&mut out, "prop.valid", r.prop_bound.is_some().to_string());
    if let Some(b) = r.prop_bound {
        kv(&mut out, "prop.bound", fmt_f64(b));
    }
    kv(&mut out, "main.weighted_acc", fmt_f64(r.a_main));
    out
}

/// Parses `key=value` lines into an ordered map; duplicate keys and
/// malformed lines are errors with line numbers.
pub fn parse_report(content: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (k, v) = raw
            .split_once('=')
            .ok_or_else(|| Error::Parse { line, msg: format!("expected key=value, got {raw:?}") })?;
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Parse { line, msg: format!("duplicate key {k:?}") });
        }
    }
    Ok(map)
}

/// A profile estimated from data, with the cells that had no supporting
/// rows named explicitly. Unestimable rates are filled with 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedRates {
    pub profile: RateProfile,
    pub unestimable: Vec<String>,
}

struct Cell {
    hits: usize,
    total: usize,
}

impl Cell {
    fn new() -> Cell {
        Cell { hits: 0, total: 0 }
    }

    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.hits += usize::from(hit);
    }

    fn rate(&self, name: String, missing: &mut Vec<String>) -> f64 {
        if self.total == 0 {
            missing.push(name);
            0.5
        } else {
            self.hits as f64 / self.total as f64
        }
    }
}

/// Empirical rate profile: every rate is the conditional relative
/// frequency of its defining event, per distribution.
pub fn estimate_rates(rows: &[Example], spec: &GraphSpec) -> Result<EstimatedRates> {
    spec.validate()?;
    if rows.is_empty() {
        return Err(Error::InvalidArgument("cannot estimate rates from an empty log".into()));
    }
    for ex in rows {
        spec.validate_example(ex)?;
    }
    let mut missing = Vec::new();
    let n = rows.len();
    let n_adv = rows.iter().filter(|e| e.dist == Dist::Adversarial).count();

    let mut class_counts = vec![0usize; spec.num_classes];
    for ex in rows {
        class_counts[ex.label] += 1;
    }
    let class_prior = class_counts.iter().map(|&c| c as f64 / n as f64).collect();

    let mut per_dist = |f: &mut dyn FnMut(Dist, &mut Vec<String>) -> f64| PerDist {
        benign: f(Dist::Benign, &mut missing),
        adversarial: f(Dist::Adversarial, &mut missing),
    };

    let main_alpha = per_dist(&mut |d, missing| {
        let mut cell = Cell::new();
        for ex in rows.iter().filter(|e| e.dist == d) {
            cell.add(ex.main == ex.label);
        }
        cell.rate(format!("main.alpha.{}", d.as_str()), missing)
    });

    let mut aux = Vec::with_capacity(spec.aux_models.len());
    for (k, model) in spec.aux_models.iter().enumerate() {
        // (event, conditioning) per rate, per the role's definition
        let rate_for = |on_target: bool, silent_event: bool, tag: &str, d: Dist, missing: &mut Vec<String>| {
            let mut cell = Cell::new();
            for ex in rows.iter().filter(|e| e.dist == d && (e.label == model.target_class) == on_target) {
                let fired = ex.aux[k] != 0;
                cell.add(if silent_event { !fired } else { fired });
            }
            cell.rate(format!("aux[{k}].{tag}.{}", d.as_str()), missing)
        };
        let (alpha, eps) = match model.kind {
            AuxKind::Permissive => (
                per_dist(&mut |d, m| rate_for(true, false, "alpha", d, m)),
                per_dist(&mut |d, m| rate_for(false, false, "eps", d, m)),
            ),
            AuxKind::Preventative => (
                per_dist(&mut |d, m| rate_for(false, true, "alpha", d, m)),
                per_dist(&mut |d, m| rate_for(true, true, "eps", d, m)),
            ),
        };
        aux.push(AuxRates { alpha, eps });
    }

    Ok(EstimatedRates {
        profile: RateProfile {
            pi_adv: n_adv as f64 / n as f64,
            class_prior,
            main_alpha,
            aux,
        },
        unestimable: missing,
    })
}
