use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    classify_discounting, classify_time_mapping, paired_bayes_factor, remap_and_refit, remap_exponent, screen_subject,
    screened_values, AnalysisConfig, DiscountClass, DiscountFit, Exclusion, PairedBayesFactor, ParamStats, RemapResult,
    SubjectData, TimeMapping, TimeMappingFit, SCREENED_PARAMS,
};
use crate::error::{Error, Result};
use crate::fitting::{aggregate_series, fit_model, two_stage, DataSeries, FitResult, GridSeries, ModelFamily, TwoStageSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRemap {
    pub c: f64,
    pub h_objective: f64,
    pub r_objective: f64,
    pub h_subjective: f64,
    pub r_subjective: f64,
    pub still_hyperbolic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub id: String,
    pub time_mapping: Option<TimeMapping>,
    pub beta: Option<f64>,
    pub discount_class: Option<DiscountClass>,
    /// `BIC_exponential - BIC_general`.
    pub general_vs_exponential: Option<f64>,
    pub exclusions: Vec<Exclusion>,
    pub remap: Option<SubjectRemap>,
}

impl SubjectSummary {
    pub fn included(&self) -> bool {
        self.exclusions.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub n_subjects: usize,
    pub n_included: usize,
    pub power: usize,
    pub linear: usize,
    pub exponential: usize,
    pub proportional_hyperbolic: usize,
    pub general_hyperbolic: usize,
    pub hyperbolic: usize,
    pub remapped: usize,
    pub remapped_lower_h: usize,
    pub still_hyperbolic_after_remap: usize,
}

/// One model column of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableColumn {
    pub label: String,
    pub model: ModelFamily,
    pub subjective_time: bool,
    pub n: usize,
    pub two_stage: TwoStageSummary,
    pub aggregate: Option<FitResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemapAggregate {
    /// Mean remapping exponent over the subset.
    pub c: f64,
    pub n: usize,
    pub dv: DataSeries,
    pub objective: FitResult,
    pub subjective: FitResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiPoint {
    pub t: f64,
    pub subjective_t: f64,
    pub objective: f64,
    pub subjective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub counts: ClassCounts,
    pub subjects: Vec<SubjectSummary>,
    pub cohort_stats: Vec<ParamStats>,
    pub magnitude_columns: Vec<TableColumn>,
    pub discount_columns: Vec<TableColumn>,
    pub aggregate_magnitude: DataSeries,
    pub aggregate_dv: DataSeries,
    pub aggregate_time_mapping: Option<TimeMapping>,
    pub aggregate_discount_class: Option<DiscountClass>,
    pub remap: Option<RemapAggregate>,
    pub bayes: Option<PairedBayesFactor>,
    pub di_curve: Vec<DiPoint>,
}

impl CohortReport {
    pub fn included(&self) -> impl Iterator<Item = &SubjectSummary> {
        self.subjects.iter().filter(|s| s.included())
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Orders subjects by their data alone so that cohort sums do not depend on
/// input order or identifiers.
fn canonical_order(subjects: &[SubjectData]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..subjects.len()).collect();
    idx.sort_by(|&i, &j| {
        let (a, b) = (&subjects[i], &subjects[j]);
        lexicographic(&a.dv.y, &b.dv.y)
            .then_with(|| lexicographic(&a.dv.t, &b.dv.t))
            .then_with(|| lexicographic(&a.magnitude.y, &b.magnitude.y))
            .then_with(|| lexicographic(&a.magnitude.t, &b.magnitude.t))
    });
    idx
}

struct Fitted {
    mapping: TimeMappingFit,
    discount: DiscountFit,
}

fn column(label: &str, model: ModelFamily, subjective: bool, fits: Vec<FitResult>, aggregate: Option<FitResult>) -> TableColumn {
    TableColumn { label: label.into(), model, subjective_time: subjective, n: fits.len(), two_stage: two_stage(&fits), aggregate }
}

fn warn_err<T>(what: &str, r: Result<T>) -> Option<T> {
    r.map_err(|e| log::warn!("{what}: {e}")).ok()
}

/// Runs classification, screening, remapping and cohort summaries.
pub fn build_cohort_report(subjects: &[SubjectData], cfg: &AnalysisConfig) -> Result<CohortReport> {
    if subjects.is_empty() {
        return Err(Error::DegenerateData("empty cohort".into()));
    }
    let order = canonical_order(subjects);
    let mut summaries: Vec<SubjectSummary> = Vec::with_capacity(subjects.len());
    let mut fitted: Vec<Option<Fitted>> = Vec::with_capacity(subjects.len());

    for &i in &order {
        let s = &subjects[i];
        let mut summary = SubjectSummary {
            id: s.id.clone(),
            time_mapping: None,
            beta: None,
            discount_class: None,
            general_vs_exponential: None,
            exclusions: vec![],
            remap: None,
        };
        if let Some(flag) = super::invariance(&s.dv, &cfg.screening) {
            summary.exclusions.push(flag);
            summaries.push(summary);
            fitted.push(None);
            continue;
        }
        let fits = classify_time_mapping(&s.magnitude, &cfg.fit)
            .and_then(|m| classify_discounting(&s.dv, &cfg.fit).map(|d| Fitted { mapping: m, discount: d }));
        match fits {
            Ok(f) => {
                summary.time_mapping = Some(f.mapping.class);
                summary.beta = Some(f.mapping.beta());
                summary.discount_class = Some(f.discount.class);
                summary.general_vs_exponential = Some(f.discount.general_vs_exponential);
                fitted.push(Some(f));
            }
            Err(e) => {
                summary.exclusions.push(Exclusion::FitFailed { message: e.to_string() });
                fitted.push(None);
            }
        }
        summaries.push(summary);
    }

    // single-pass outlier screen against the stats of every fitted subject
    let cohort_stats: Vec<ParamStats> = SCREENED_PARAMS
        .iter()
        .enumerate()
        .map(|(j, (label, _, _))| {
            let vals: Vec<f64> = fitted.iter().flatten().map(|f| screened_values(&f.discount)[j].1).collect();
            ParamStats::from_values(label, &vals)
        })
        .collect();
    for (k, &i) in order.iter().enumerate() {
        if let Some(f) = &fitted[k] {
            summaries[k].exclusions = screen_subject(&subjects[i].dv, &screened_values(&f.discount), &cohort_stats, &cfg.screening);
        }
    }

    let included: Vec<usize> = (0..order.len()).filter(|&k| summaries[k].included() && fitted[k].is_some()).collect();
    if included.is_empty() {
        return Err(Error::DegenerateData("every subject was excluded".into()));
    }

    let mut remaps: Vec<(usize, RemapResult)> = vec![];
    for &k in &included {
        let f = fitted[k].as_ref().expect("included subjects are fitted");
        if !f.discount.general_beats_exponential() {
            continue;
        }
        let c = remap_exponent(&f.mapping, cfg);
        if let Some(r) = warn_err(&format!("remap of {}", summaries[k].id), remap_and_refit(&subjects[order[k]].dv, c, &cfg.fit)) {
            summaries[k].remap = Some(SubjectRemap {
                c,
                h_objective: r.h_objective(),
                r_objective: r.objective.param("r").unwrap_or(f64::NAN),
                h_subjective: r.h_subjective(),
                r_subjective: r.subjective.param("r").unwrap_or(f64::NAN),
                still_hyperbolic: r.still_hyperbolic(),
            });
            remaps.push((k, r));
        }
    }

    let mut counts = ClassCounts { n_subjects: subjects.len(), n_included: included.len(), ..Default::default() };
    for &k in &included {
        let f = fitted[k].as_ref().expect("fitted");
        match f.mapping.class {
            TimeMapping::Power => counts.power += 1,
            TimeMapping::Linear => counts.linear += 1,
        }
        match f.discount.class {
            DiscountClass::Exponential => counts.exponential += 1,
            DiscountClass::ProportionalHyperbolic => counts.proportional_hyperbolic += 1,
            DiscountClass::GeneralHyperbolic => counts.general_hyperbolic += 1,
        }
    }
    counts.hyperbolic = counts.proportional_hyperbolic + counts.general_hyperbolic;
    counts.remapped = remaps.len();
    counts.remapped_lower_h = remaps.iter().filter(|(_, r)| r.h_subjective() < r.h_objective()).count();
    counts.still_hyperbolic_after_remap = remaps.iter().filter(|(_, r)| r.still_hyperbolic()).count();

    let grid = |k: usize, dv: bool| {
        let s = &subjects[order[k]];
        GridSeries::from(if dv { &s.dv } else { &s.magnitude })
    };
    let aggregate_magnitude = aggregate_series(&included.iter().map(|&k| grid(k, false)).collect::<Vec<_>>())?;
    let aggregate_dv = aggregate_series(&included.iter().map(|&k| grid(k, true)).collect::<Vec<_>>())?;
    let agg_mapping = warn_err("aggregate magnitude fit", classify_time_mapping(&aggregate_magnitude, &cfg.fit));
    let agg_discount = warn_err("aggregate discount fit", classify_discounting(&aggregate_dv, &cfg.fit));

    let per = |sel: &dyn Fn(&Fitted) -> FitResult| -> Vec<FitResult> {
        included.iter().map(|&k| sel(fitted[k].as_ref().expect("fitted"))).collect()
    };
    let magnitude_columns = vec![
        column("Linear", ModelFamily::Linear, false, per(&|f| f.mapping.linear.clone()), agg_mapping.as_ref().map(|m| m.linear.clone())),
        column("Power", ModelFamily::Power, false, per(&|f| f.mapping.power.clone()), agg_mapping.as_ref().map(|m| m.power.clone())),
    ];
    let mut discount_columns = vec![
        column(
            "Exponential",
            ModelFamily::Exponential,
            false,
            per(&|f| f.discount.exponential.clone()),
            agg_discount.as_ref().map(|d| d.exponential.clone()),
        ),
        column(
            "Proportional hyperbolic",
            ModelFamily::ProportionalHyperbolic,
            false,
            per(&|f| f.discount.proportional.clone()),
            agg_discount.as_ref().map(|d| d.proportional.clone()),
        ),
        column(
            "General hyperbolic",
            ModelFamily::GeneralHyperbolic,
            false,
            per(&|f| f.discount.general.clone()),
            agg_discount.as_ref().map(|d| d.general.clone()),
        ),
    ];

    let mut remap_agg = None;
    let mut bayes = None;
    if !remaps.is_empty() {
        let c = remaps.iter().map(|(_, r)| r.c).sum::<f64>() / remaps.len() as f64;
        let dv = aggregate_series(&remaps.iter().map(|(k, _)| grid(*k, true)).collect::<Vec<_>>())?;
        let objective = warn_err("aggregate objective refit", fit_model(ModelFamily::GeneralHyperbolic, &dv, &cfg.fit));
        let subjective =
            warn_err("aggregate subjective refit", fit_model(ModelFamily::SubjectiveGeneralHyperbolic { c }, &dv, &cfg.fit));
        discount_columns.push(column(
            "General hyperbolic (remapped subset)",
            ModelFamily::GeneralHyperbolic,
            false,
            remaps.iter().map(|(_, r)| r.objective.clone()).collect(),
            objective.clone(),
        ));
        discount_columns.push(column(
            "General hyperbolic on subjective time",
            ModelFamily::SubjectiveGeneralHyperbolic { c },
            true,
            remaps.iter().map(|(_, r)| r.subjective.clone()).collect(),
            subjective.clone(),
        ));
        if let (Some(objective), Some(subjective)) = (objective, subjective) {
            remap_agg = Some(RemapAggregate { c, n: remaps.len(), dv, objective, subjective });
        }
        let h_obj: Vec<f64> = remaps.iter().map(|(_, r)| r.h_objective()).collect();
        let h_subj: Vec<f64> = remaps.iter().map(|(_, r)| r.h_subjective()).collect();
        bayes = warn_err("paired Bayes factor", paired_bayes_factor(&h_obj, &h_subj, &cfg.bayes));
    }

    let di_curve = remap_agg
        .as_ref()
        .map(|ra| {
            let h_obj = ra.objective.param("h").unwrap_or(f64::NAN);
            let h_subj = ra.subjective.param("h").unwrap_or(f64::NAN);
            let t_max = aggregate_dv.t.iter().copied().fold(0.0, f64::max).ceil() as u32;
            (0..=t_max)
                .map(|t| {
                    let t = t as f64;
                    let s = t.powf(ra.c);
                    DiPoint {
                        t,
                        subjective_t: s,
                        objective: h_obj / (1.0 + h_obj * t),
                        subjective: h_subj / (1.0 + h_subj * s),
                    }
                })
                .collect()
        })
        .unwrap_or_default();

    Ok(CohortReport {
        counts,
        subjects: summaries,
        cohort_stats,
        magnitude_columns,
        discount_columns,
        aggregate_magnitude,
        aggregate_dv,
        aggregate_time_mapping: agg_mapping.map(|m| m.class),
        aggregate_discount_class: agg_discount.map(|d| d.class),
        remap: remap_agg,
        bayes,
        di_curve,
    })
}

fn fmt_est(value: f64, err: Option<f64>) -> String {
    match err {
        Some(e) => format!("{value:.4} ({e:.4})"),
        None => format!("{value:.4}"),
    }
}

/// Plain-text rendering of the report.
pub fn render_text(report: &CohortReport) -> String {
    let mut out = String::new();
    let c = &report.counts;
    let _ = writeln!(out, "Subjects: {} ({} included)", c.n_subjects, c.n_included);
    let _ = writeln!(out, "Time mapping: {} power, {} linear", c.power, c.linear);
    let _ = writeln!(
        out,
        "Discounting: {} exponential, {} proportional hyperbolic, {} general hyperbolic ({} hyperbolic)",
        c.exponential, c.proportional_hyperbolic, c.general_hyperbolic, c.hyperbolic
    );
    let _ = writeln!(
        out,
        "Remapped: {} (lower h on subjective time: {}, still hyperbolic: {})",
        c.remapped, c.remapped_lower_h, c.still_hyperbolic_after_remap
    );
    for (title, cols) in [("Magnitude estimation", &report.magnitude_columns), ("Discounting", &report.discount_columns)] {
        let _ = writeln!(out, "\n{title}");
        for col in cols.iter() {
            let scale = if col.subjective_time { "subjective" } else { "objective" };
            let _ = writeln!(out, "  {} [{scale} time, n = {}]", col.label, col.n);
            if let ModelFamily::SubjectiveGeneralHyperbolic { c } = col.model {
                let _ = writeln!(out, "    c = {c:.4}");
            }
            for p in &col.two_stage.params {
                let _ = writeln!(out, "    two-stage {:<6} {}", p.name, fmt_est(p.mean, p.sem));
            }
            if let Some(r2) = &col.two_stage.r2 {
                let _ = writeln!(out, "    two-stage R2     {}", fmt_est(r2.mean, r2.sem));
            }
            if let Some(a) = &col.aggregate {
                for p in &a.params {
                    let _ = writeln!(out, "    aggregate {:<6} {}", p.name, fmt_est(p.value, p.se));
                }
                let _ = writeln!(out, "    aggregate R2     {:.4}", a.r2);
                let _ = writeln!(out, "    aggregate BIC    {:.4}", a.bic);
            }
        }
    }
    if let Some(b) = &report.bayes {
        let _ = writeln!(out, "\nPaired test on h (n = {}, t = {:.4})", b.n, b.t);
        let _ = writeln!(out, "  BF(objective h lower)      {:.4}", b.bf_objective_lower);
        let _ = writeln!(out, "  BF(objective h not lower)  {:.4}", b.bf_objective_not_lower);
    }
    let excluded: Vec<&SubjectSummary> = report.subjects.iter().filter(|s| !s.included()).collect();
    if !excluded.is_empty() {
        let _ = writeln!(out, "\nExcluded");
        for s in excluded {
            let reasons: Vec<String> = s
                .exclusions
                .iter()
                .map(|e| match e {
                    Exclusion::Invariant { .. } => "invariant".to_string(),
                    Exclusion::Outlier { parameter, z } => format!("outlier {parameter} (z = {z:.2})"),
                    Exclusion::FitFailed { message } => format!("fit failed: {message}"),
                })
                .collect();
            let _ = writeln!(out, "  {}: {}", s.id, reasons.join(", "));
        }
    }
    out
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Figure data as `(file name, CSV contents)` pairs.
pub fn figure_csvs(report: &CohortReport) -> Result<Vec<(String, String)>> {
    let pred = |cols: &[TableColumn], label: &str, t: f64| opt(cols.iter().find(|c| c.label == label).and_then(|c| c.aggregate.as_ref()).map(|f| f.predict(t)));
    let sem = |s: &DataSeries, i: usize| opt(s.sem.as_ref().map(|v| v[i]));

    let m = &report.aggregate_magnitude;
    let magnitude = csv_string(
        &["t", "mean", "sem", "linear", "power"],
        (0..m.len()).map(|i| {
            vec![
                m.t[i].to_string(),
                m.y[i].to_string(),
                sem(m, i),
                pred(&report.magnitude_columns, "Linear", m.t[i]),
                pred(&report.magnitude_columns, "Power", m.t[i]),
            ]
        }),
    )?;
    let d = &report.aggregate_dv;
    let dv = csv_string(
        &["t", "mean", "sem", "exponential", "proportional_hyperbolic", "general_hyperbolic"],
        (0..d.len()).map(|i| {
            vec![
                d.t[i].to_string(),
                d.y[i].to_string(),
                sem(d, i),
                pred(&report.discount_columns, "Exponential", d.t[i]),
                pred(&report.discount_columns, "Proportional hyperbolic", d.t[i]),
                pred(&report.discount_columns, "General hyperbolic", d.t[i]),
            ]
        }),
    )?;
    let remap = csv_string(
        &["t", "mean", "sem", "objective", "subjective"],
        report.remap.iter().flat_map(|r| {
            (0..r.dv.len()).map(move |i| {
                vec![
                    r.dv.t[i].to_string(),
                    r.dv.y[i].to_string(),
                    sem(&r.dv, i),
                    r.objective.predict(r.dv.t[i]).to_string(),
                    r.subjective.predict(r.dv.t[i]).to_string(),
                ]
            })
        }),
    )?;
    let di = csv_string(
        &["t", "subjective_t", "objective", "subjective"],
        report
            .di_curve
            .iter()
            .map(|p| vec![p.t.to_string(), p.subjective_t.to_string(), p.objective.to_string(), p.subjective.to_string()]),
    )?;
    let subjects = csv_string(
        &["subject", "included", "time_mapping", "beta", "discount_class", "c", "h_objective", "h_subjective"],
        report.subjects.iter().map(|s| {
            let name = |v: Option<String>| v.unwrap_or_default();
            vec![
                s.id.clone(),
                s.included().to_string(),
                name(s.time_mapping.map(|m| format!("{m:?}").to_lowercase())),
                opt(s.beta),
                name(s.discount_class.map(|c| format!("{c:?}"))),
                opt(s.remap.as_ref().map(|r| r.c)),
                opt(s.remap.as_ref().map(|r| r.h_objective)),
                opt(s.remap.as_ref().map(|r| r.h_subjective)),
            ]
        }),
    )?;
    Ok(vec![
        ("magnitude.csv".into(), magnitude),
        ("discounting.csv".into(), dv),
        ("remapped.csv".into(), remap),
        ("decreasing_impatience.csv".into(), di),
        ("subjects.csv".into(), subjects),
    ])
}
