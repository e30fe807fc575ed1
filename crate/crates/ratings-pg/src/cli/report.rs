//! Turns eval and sweep artifacts into summary tables.

use serde::{Deserialize, Serialize};

use super::{read_json, write_json, write_string, Env, GoodnessArtifact, SxsArtifact};
use crate::error::{Error, Result};

pub(crate) fn goodness_flat_csv(artifact: &GoodnessArtifact) -> String {
    let mut s = String::from("model,metric,value,ci_low,ci_high\n");
    for row in &artifact.models {
        let r = &row.result;
        s.push_str(&format!(
            "{},average,{},{},{}\n",
            row.model, r.average, r.average_ci.0, r.average_ci.1
        ));
        s.push_str(&format!(
            "{},voting,{},{},{}\n",
            row.model, r.voting, r.voting_ci.0, r.voting_ci.1
        ));
        s.push_str(&format!(
            "{},exact_expected_rating,{},,\n",
            row.model, row.exact_expected_rating
        ));
    }
    s
}

pub(crate) fn sxs_flat_csv(artifact: &SxsArtifact) -> String {
    let mut s = String::from("model,metric,value,ci_low,ci_high\n");
    for row in &artifact.models {
        for dim in &row.result.dims {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                row.model, dim.name, dim.mean, dim.ci.0, dim.ci.1
            ));
        }
    }
    s
}

#[derive(Serialize, Deserialize)]
struct GoodnessReportRow {
    model: String,
    average: f64,
    delta_average: Option<f64>,
    voting: f64,
    delta_voting: Option<f64>,
    exact_expected_rating: f64,
    delta_exact: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct GoodnessReport {
    config_hash: String,
    rows: Vec<GoodnessReportRow>,
}

#[derive(Serialize)]
struct SxsReport<'a> {
    config_hash: &'a str,
    reference: &'a str,
    models: &'a [super::SxsRow],
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn check_hash(env: &Env, artifact_hash: &str, seed: u64, what: &str) -> Result<()> {
    if artifact_hash != env.manifest.config_hash || seed != env.manifest.seed {
        return Err(Error::Manifest(format!(
            "{what} was produced under config_hash={artifact_hash} seed={seed}, manifest says config_hash={} seed={}",
            env.manifest.config_hash, env.manifest.seed
        )));
    }
    Ok(())
}

pub(crate) fn cmd_report(env: &Env) -> Result<()> {
    let goodness: GoodnessArtifact = read_json(&env.path("eval_goodness.json"))?;
    check_hash(env, &goodness.config_hash, goodness.seed, "eval_goodness.json")?;
    let sxs: SxsArtifact = read_json(&env.path("eval_sxs.json"))?;
    check_hash(env, &sxs.config_hash, sxs.seed, "eval_sxs.json")?;

    let base = goodness
        .models
        .iter()
        .find(|r| r.model == "baseline")
        .ok_or_else(|| Error::Validation("eval_goodness.json has no baseline row".into()))?;
    let (b_avg, b_vote, b_exact) = (
        base.result.average,
        base.result.voting,
        base.exact_expected_rating,
    );

    let rows: Vec<GoodnessReportRow> = goodness
        .models
        .iter()
        .map(|r| {
            let is_base = r.model == "baseline";
            let delta = |v: f64, b: f64| (!is_base).then_some(v - b);
            GoodnessReportRow {
                model: r.model.clone(),
                average: r.result.average,
                delta_average: delta(r.result.average, b_avg),
                voting: r.result.voting,
                delta_voting: delta(r.result.voting, b_vote),
                exact_expected_rating: r.exact_expected_rating,
                delta_exact: delta(r.exact_expected_rating, b_exact),
            }
        })
        .collect();

    let mut csv = String::from("model,average,delta_average,voting,delta_voting\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.model,
            r.average,
            opt(r.delta_average),
            r.voting,
            opt(r.delta_voting)
        ));
    }
    write_string(&env.path("report_goodness.csv"), &csv)?;
    write_json(
        &env.path("report_goodness.json"),
        &GoodnessReport {
            config_hash: goodness.config_hash.clone(),
            rows,
        },
    )?;

    // One column per quality dimension, confidence interval inline.
    let mut csv = String::from("model,informativeness,correctness,fluency\n");
    for row in &sxs.models {
        csv.push_str(&row.model);
        for dim in &row.result.dims {
            csv.push_str(&format!(",{} [{}; {}]", dim.mean, dim.ci.0, dim.ci.1));
        }
        csv.push('\n');
    }
    write_string(&env.path("report_sxs.csv"), &csv)?;
    write_json(
        &env.path("report_sxs.json"),
        &SxsReport {
            config_hash: &sxs.config_hash,
            reference: &sxs.reference,
            models: &sxs.models,
        },
    )?;

    let sweep_path = env.path("sweep_alpha.csv");
    let mut curves = None;
    if sweep_path.exists() {
        let s = std::fs::read_to_string(&sweep_path).map_err(|e| Error::io(&sweep_path, e))?;
        curves = Some(alpha_curves_csv(&s)?);
        write_string(
            &env.path("report_alpha_curves.csv"),
            curves.as_deref().expect("just set"),
        )?;
    }

    env.say(format!(
        "report: {} models, {} side-by-side rows{} -> {}",
        goodness.models.len(),
        sxs.models.len(),
        if curves.is_some() {
            ", alpha curves"
        } else {
            " (no sweep artifact, alpha curves skipped)"
        },
        env.out.display()
    ));
    Ok(())
}

/// Reshape the sweep table into plot-ready curves: rows grouped by method and
/// sorted by alpha, clip counters dropped.
fn alpha_curves_csv(sweep_csv: &str) -> Result<String> {
    let mut lines = sweep_csv.lines();
    let header = lines.next().unwrap_or_default();
    if header != super::SWEEP_CSV_HEADER {
        return Err(Error::Validation(format!(
            "sweep_alpha.csv has unexpected header: {header}"
        )));
    }
    let mut rows: Vec<(String, f64, String, String)> = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::Validation(format!(
                "sweep_alpha.csv row {}: expected 5 fields, got {}",
                i + 2,
                parts.len()
            )));
        }
        let alpha: f64 = parts[1].parse().map_err(|_| {
            Error::Validation(format!("sweep_alpha.csv row {}: bad alpha {}", i + 2, parts[1]))
        })?;
        rows.push((
            parts[0].to_string(),
            alpha,
            parts[2].to_string(),
            parts[3].to_string(),
        ));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out = String::from("method,alpha,exact_expected_rating,distinct_captions\n");
    for (method, alpha, exact, distinct) in rows {
        out.push_str(&format!("{method},{alpha},{exact},{distinct}\n"));
    }
    Ok(out)
}
