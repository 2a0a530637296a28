//! Markdown report assembled from the artifacts of a pipeline run.
//!
//! Regenerating the report from the same artifacts yields the same bytes: no
//! timestamps, no absolute paths, fixed number formatting.

use crate::pipeline::{
    parse_exclusions_csv, read_file, write_file, Analysis, Exclusion, PipelineError, RunMetadata, WilcoxonEntry,
    EXCLUSIONS_FILE, LMEM_FILE, METADATA_FILE, METRIC_BC, METRIC_DET, METRIC_MEAN_LR, METRIC_SDTW, WILCOXON_FILE,
};
use crate::stats::CONDITION;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

pub const REPORT_FILE: &str = "report.md";

/// Significance level of the direction checks.
pub const ALPHA: f64 = 0.05;
/// Significance level of the pitch Wilcoxon check.
pub const PITCH_ALPHA: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    fn symbol(self) -> &'static str {
        match self {
            Sign::Positive => "+",
            Sign::Negative => "−",
        }
    }

    fn matches(self, v: f64) -> bool {
        match self {
            Sign::Positive => v > 0.0,
            Sign::Negative => v < 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// The reference shows no consistent direction at this level.
    NoExpectation,
    /// The model for this check could not be fitted.
    Missing,
}

impl Verdict {
    fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::NoExpectation => "n/a",
            Verdict::Missing => "missing",
        }
    }
}

/// The expected direction of one condition effect and what the run produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionCheck {
    pub name: String,
    pub intervention: String,
    pub strength: f64,
    pub metric: String,
    pub scope: String,
    pub expected: Option<Sign>,
    /// Reference coefficient, when one is recorded for this level.
    pub reference: Option<f64>,
    pub estimate: Option<f64>,
    pub p: Option<f64>,
    pub alpha: f64,
    pub verdict: Verdict,
}

/// Reference direction of the cross-person beat-consistency effect of dampening.
fn dampen_beat_reference(strength: f64) -> (Option<Sign>, Option<f64>) {
    let table = [(10.0, 0.013), (20.0, -0.049), (30.0, -0.089), (40.0, -0.150), (50.0, -0.203)];
    match table.iter().find(|(s, _)| (s - strength).abs() < 1e-9) {
        // the reference effect at the weakest level is small and positive
        Some(&(s, v)) if s < 20.0 => (None, Some(v)),
        Some(&(_, v)) => (Some(Sign::Negative), Some(v)),
        None if strength < 20.0 => (None, None),
        None => (Some(Sign::Negative), None),
    }
}

fn verdict(expected: Option<Sign>, estimate: Option<f64>, p: Option<f64>, alpha: f64) -> Verdict {
    match (expected, estimate, p) {
        (_, None, _) | (_, _, None) => Verdict::Missing,
        (None, _, _) => Verdict::NoExpectation,
        (Some(sign), Some(e), Some(p)) => {
            if sign.matches(e) && p < alpha {
                Verdict::Pass
            } else {
                Verdict::Fail
            }
        }
    }
}

fn lmem_check(name: &str, a: &Analysis, expected: Option<Sign>, reference: Option<f64>) -> DirectionCheck {
    let est = a.fit.as_ref().and_then(|f| f.estimate(CONDITION));
    let (estimate, p) = (est.as_ref().map(|e| e.coef), est.as_ref().map(|e| e.p));
    DirectionCheck {
        name: name.to_string(),
        intervention: a.intervention.clone(),
        strength: a.strength,
        metric: a.metric.clone(),
        scope: a.scope.clone(),
        expected,
        reference,
        estimate,
        p,
        alpha: ALPHA,
        verdict: verdict(expected, estimate, p, ALPHA),
    }
}

/// Direction checks for every analysis that has a recorded reference direction.
pub fn direction_checks(analyses: &[Analysis], wilcoxon: &[WilcoxonEntry]) -> Vec<DirectionCheck> {
    let mut checks = Vec::new();
    for a in analyses {
        if a.scope != "inter" {
            continue;
        }
        match (a.intervention.as_str(), a.metric.as_str()) {
            ("dampen", METRIC_DET) => checks.push(lmem_check("cross-recurrence %DET", a, Some(Sign::Positive), Some(0.115))),
            ("dampen", METRIC_MEAN_LR) => {
                checks.push(lmem_check("cross-recurrence MeanLR", a, Some(Sign::Positive), Some(0.451)))
            }
            ("dampen", METRIC_SDTW) => checks.push(lmem_check("inter-person Soft-DTW", a, Some(Sign::Negative), Some(-0.637))),
            ("dampen", METRIC_BC) => {
                let (sign, reference) = dampen_beat_reference(a.strength);
                checks.push(lmem_check("cross-person beat consistency", a, sign, reference));
            }
            ("delay", METRIC_BC) => {
                let reference = ((a.strength - 0.25).abs() < 1e-9).then_some(-0.004);
                checks.push(lmem_check("cross-person beat consistency", a, Some(Sign::Negative), reference));
            }
            _ => {}
        }
    }
    for w in wilcoxon {
        let (estimate, p) = match &w.result {
            Some(r) => (w.mean_diff, Some(r.p)),
            None => (None, None),
        };
        checks.push(DirectionCheck {
            name: "F0 Soft-DTW, paired Wilcoxon".into(),
            intervention: w.intervention.clone(),
            strength: w.strength,
            metric: w.metric.clone(),
            scope: w.scope.clone(),
            expected: Some(Sign::Positive),
            reference: None,
            estimate,
            p,
            alpha: PITCH_ALPHA,
            verdict: verdict(Some(Sign::Positive), estimate, p, PITCH_ALPHA),
        });
    }
    checks
}

fn fmt_num(v: f64) -> String {
    if !v.is_finite() {
        return "NaN".into();
    }
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

fn fmt_p(p: f64) -> String {
    if p.is_nan() {
        "NaN".into()
    } else if p < 1e-300 {
        "<1e-300".into()
    } else if p < 1e-4 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

fn fmt_opt(v: Option<f64>, f: fn(f64) -> String) -> String {
    v.map_or_else(|| "—".to_string(), f)
}

fn load<T: serde::de::DeserializeOwned>(dir: &Path, file: &str) -> Result<T, PipelineError> {
    let path = dir.join(file);
    if !path.is_file() {
        return Err(PipelineError::MissingArtifact(PathBuf::from(file)));
    }
    serde_json::from_slice(&read_file(&path)?).map_err(|e| PipelineError::Data(format!("{file}: {e}")))
}

/// Everything the report is built from.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub metadata: RunMetadata,
    pub analyses: Vec<Analysis>,
    pub wilcoxon: Vec<WilcoxonEntry>,
    pub exclusions: Vec<Exclusion>,
}

pub fn load_artifacts(dir: &Path) -> Result<Artifacts, PipelineError> {
    let metadata: RunMetadata = load(dir, METADATA_FILE)?;
    let analyses: Vec<Analysis> = load(dir, LMEM_FILE)?;
    let wilcoxon: Vec<WilcoxonEntry> = load(dir, WILCOXON_FILE)?;
    let ex_path = dir.join(EXCLUSIONS_FILE);
    if !ex_path.is_file() {
        return Err(PipelineError::MissingArtifact(PathBuf::from(EXCLUSIONS_FILE)));
    }
    let exclusions = parse_exclusions_csv(&String::from_utf8_lossy(&read_file(&ex_path)?))?;
    Ok(Artifacts { metadata, analyses, wilcoxon, exclusions })
}

/// Render the report text.
pub fn render_report(art: &Artifacts) -> String {
    let m = &art.metadata;
    let mut s = String::new();
    let _ = writeln!(s, "# Coordination intervention report\n");
    let _ = writeln!(s, "| Field | Value |\n|---|---|");
    let _ = writeln!(s, "| Session | {} |", m.session);
    let _ = writeln!(s, "| Library | {} {} |", m.library, m.version);
    let _ = writeln!(s, "| Seed | {} |", m.seed);
    let strengths: Vec<String> = m.strengths.iter().map(|v| v.to_string()).collect();
    let _ = writeln!(s, "| Intervention | {} ({}) |", m.intervention, strengths.join(", "));
    let _ = writeln!(s, "| Persons | {} |", m.n_persons);
    let _ = writeln!(s, "| Slices per person | {} |", m.n_slices);
    let _ = writeln!(s, "| Metric records | {} |", m.n_records);
    let _ = writeln!(s, "| Exclusions | {} |", m.n_exclusions);
    let _ = writeln!(s, "| Standardization | {} |\n", m.zscore);

    let checks = direction_checks(&art.analyses, &art.wilcoxon);
    let _ = writeln!(s, "## Direction checks\n");
    let decided: Vec<&DirectionCheck> = checks.iter().filter(|c| c.expected.is_some()).collect();
    let passed = decided.iter().filter(|c| c.verdict == Verdict::Pass).count();
    let _ = writeln!(
        s,
        "A check passes when the condition effect has the expected sign and its p-value is below the stated level. {passed} of {} checks pass.\n",
        decided.len()
    );
    let _ = writeln!(s, "| Check | Strength | Expected | Reference | Estimate | p | Level | Verdict |");
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
    for c in &checks {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            c.name,
            c.strength,
            c.expected.map_or("none", Sign::symbol),
            fmt_opt(c.reference, fmt_num),
            fmt_opt(c.estimate, fmt_num),
            fmt_opt(c.p, fmt_p),
            c.alpha,
            c.verdict.as_str()
        );
    }
    s.push('\n');

    let _ = writeln!(s, "## Mixed-model tables\n");
    let _ = writeln!(s, "Model: value ~ condition [× joint] + (1 | unit), fitted by REML; Wald p-values.\n");
    for a in &art.analyses {
        let _ = writeln!(
            s,
            "### {} {}, {} {} ({}), strength {}\n",
            a.intervention, a.metric, a.scope, a.stream, if a.standardized { "z-scored" } else { "raw" }, a.strength
        );
        match &a.fit {
            Some(f) => {
                let _ = writeln!(s, "{} observations in {} groups.\n", f.n_obs, f.n_groups);
                let _ = writeln!(s, "| Predictor | Coef. | p-value | CI low | CI high | Group Variance |");
                let _ = writeln!(s, "|---|---|---|---|---|---|");
                for i in 0..f.names.len() {
                    let gv = if i == 0 { fmt_num(f.group_var) } else { String::new() };
                    let _ = writeln!(
                        s,
                        "| {} | {} | {} | {} | {} | {} |",
                        f.names[i],
                        fmt_num(f.coef[i]),
                        fmt_p(f.p[i]),
                        fmt_num(f.ci_low[i]),
                        fmt_num(f.ci_high[i]),
                        gv
                    );
                }
                let _ = writeln!(s, "| Residual variance | {} | | | | |\n", fmt_num(f.resid_var));
                if !a.condition_by_joint.is_empty() {
                    let _ = writeln!(s, "| Joint | Condition effect | p-value |\n|---|---|---|");
                    for (j, e) in &a.condition_by_joint {
                        let _ = writeln!(s, "| {j} | {} | {} |", fmt_num(e.coef), fmt_p(e.p));
                    }
                    s.push('\n');
                }
            }
            None => {
                let _ = writeln!(s, "Not fitted: {}\n", a.error.as_deref().unwrap_or("unknown error"));
            }
        }
    }

    if !art.wilcoxon.is_empty() {
        let _ = writeln!(s, "## Paired Wilcoxon signed-rank tests\n");
        let _ = writeln!(s, "| Analysis | Strength | n | W | Mean difference | p | Method |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|");
        for w in &art.wilcoxon {
            match &w.result {
                Some(r) => {
                    let _ = writeln!(
                        s,
                        "| {} {} {} | {} | {} | {} | {} | {} | {} |",
                        w.metric,
                        w.scope,
                        w.stream,
                        w.strength,
                        r.n,
                        r.w,
                        fmt_opt(w.mean_diff, fmt_num),
                        fmt_p(r.p),
                        if r.exact { "exact" } else { "normal" }
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        "| {} {} {} | {} | — | — | — | — | {} |",
                        w.metric,
                        w.scope,
                        w.stream,
                        w.strength,
                        w.error.as_deref().unwrap_or("not computed")
                    );
                }
            }
        }
        s.push('\n');
    }

    let _ = writeln!(s, "## Exclusions\n");
    if art.exclusions.is_empty() {
        let _ = writeln!(s, "No slices were excluded.");
    } else {
        let mut by_reason: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &art.exclusions {
            *by_reason.entry(e.reason.as_str()).or_default() += 1;
        }
        let _ = writeln!(s, "| Reason | Count |\n|---|---|");
        for (r, n) in &by_reason {
            let _ = writeln!(s, "| {r} | {n} |");
        }
        let _ = writeln!(s, "\n| Condition | Strength | Slice | Scope | Unit | Joint | Metric | Reason |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
        for e in &art.exclusions {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                e.condition.as_str(),
                e.strength,
                e.slice,
                e.scope,
                e.unit,
                e.joint.as_deref().unwrap_or("—"),
                e.metric,
                e.reason
            );
        }
    }
    s
}

/// Write `report.md` into `dir` from the artifacts found there.
pub fn emit_report(dir: &Path) -> Result<PathBuf, PipelineError> {
    let art = load_artifacts(dir)?;
    let path = dir.join(REPORT_FILE);
    write_file(&path, render_report(&art))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_requires_sign_and_level() {
        assert_eq!(verdict(Some(Sign::Positive), Some(0.2), Some(0.01), ALPHA), Verdict::Pass);
        assert_eq!(verdict(Some(Sign::Positive), Some(-0.2), Some(0.01), ALPHA), Verdict::Fail);
        assert_eq!(verdict(Some(Sign::Positive), Some(0.2), Some(0.2), ALPHA), Verdict::Fail);
        assert_eq!(verdict(None, Some(0.2), Some(0.01), ALPHA), Verdict::NoExpectation);
        assert_eq!(verdict(Some(Sign::Negative), None, None, ALPHA), Verdict::Missing);
    }

    #[test]
    fn weakest_dampening_has_no_beat_expectation() {
        assert_eq!(dampen_beat_reference(10.0), (None, Some(0.013)));
        assert_eq!(dampen_beat_reference(50.0), (Some(Sign::Negative), Some(-0.203)));
    }

    #[test]
    fn empty_dir_is_missing_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let err = emit_report(dir.path()).unwrap_err();
        assert!(matches!(err, PipelineError::MissingArtifact(_)), "{err}");
    }
}
