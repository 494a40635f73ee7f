//! CSV export of per-interval results and ingestion back into series.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::analysis::SubjectData;
use crate::error::{Error, Result};
use crate::fitting::{DataSeries, GridSeries};
use crate::magnitude::MagnitudeSession;
use crate::staircase::ChoiceSession;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRow {
    pub subject: String,
    pub interval_months: u32,
    pub ep: f64,
    pub dv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeRow {
    pub subject: String,
    pub interval_months: u32,
    pub mean_px: Option<f64>,
    pub n_missing: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub rows: usize,
    pub skipped: Vec<String>,
}

fn sorted<'a, T>(sessions: &[(&'a str, &'a T)]) -> Vec<(&'a str, &'a T)> {
    let mut v = sessions.to_vec();
    v.sort_by(|a, b| a.0.cmp(b.0));
    v
}

/// Writes `subject,interval_months,ep,dv`. Incomplete sessions are skipped
/// and listed.
pub fn export_choice_csv<W: Write>(sessions: &[(&str, &ChoiceSession)], out: W) -> Result<ExportSummary> {
    let mut w = csv::Writer::from_writer(out);
    let mut summary = ExportSummary::default();
    for (subject, s) in sorted(sessions) {
        match s.equivalence_points().and_then(|eps| if s.is_complete() { Ok(eps) } else { Err(Error::Incomplete(subject.into())) }) {
            Ok(eps) => {
                for ep in eps {
                    w.serialize(ChoiceRow { subject: subject.to_string(), interval_months: ep.interval, ep: ep.ep, dv: ep.dv })?;
                    summary.rows += 1;
                }
            }
            Err(_) => {
                log::warn!("skipping incomplete choice session of {subject}");
                summary.skipped.push(subject.to_string());
            }
        }
    }
    w.flush()?;
    Ok(summary)
}

/// Writes `subject,interval_months,mean_px,n_missing`; an interval with no
/// answered repetition has an empty `mean_px`.
pub fn export_magnitude_csv<W: Write>(sessions: &[(&str, &MagnitudeSession)], out: W) -> Result<ExportSummary> {
    let mut w = csv::Writer::from_writer(out);
    let mut summary = ExportSummary::default();
    for (subject, s) in sorted(sessions) {
        if !s.is_complete() {
            log::warn!("skipping incomplete magnitude session of {subject}");
            summary.skipped.push(subject.to_string());
            continue;
        }
        let (grid, missing) = s.magnitude_grid();
        for ((t, mean), n_missing) in grid.t.iter().zip(&grid.y).zip(missing) {
            w.serialize(MagnitudeRow { subject: subject.to_string(), interval_months: *t as u32, mean_px: *mean, n_missing })?;
            summary.rows += 1;
        }
    }
    w.flush()?;
    Ok(summary)
}

fn rows<T: for<'de> Deserialize<'de>, R: Read>(input: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// DV series per subject.
pub fn read_choice_csv<R: Read>(input: R) -> Result<BTreeMap<String, DataSeries>> {
    let mut grouped: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in rows::<ChoiceRow, _>(input)? {
        let e = grouped.entry(row.subject).or_default();
        e.0.push(row.interval_months as f64);
        e.1.push(row.dv);
    }
    grouped.into_iter().map(|(k, (t, y))| Ok((k, DataSeries::new(t, y)?))).collect()
}

/// Mean-line grid and missing counts per subject.
pub fn read_magnitude_csv<R: Read>(input: R) -> Result<BTreeMap<String, (GridSeries, Vec<usize>)>> {
    let mut grouped: BTreeMap<String, (GridSeries, Vec<usize>)> = BTreeMap::new();
    for row in rows::<MagnitudeRow, _>(input)? {
        let e = grouped.entry(row.subject).or_insert_with(|| (GridSeries { t: vec![], y: vec![] }, vec![]));
        e.0.t.push(row.interval_months as f64);
        e.0.y.push(row.mean_px);
        e.1.push(row.n_missing);
    }
    Ok(grouped)
}

/// Joins the two exports into analysis input. Subjects missing from
/// either file, or with an empty magnitude cell, are skipped and listed.
pub fn subjects_from_csv<R1: Read, R2: Read>(choice: R1, magnitude: R2) -> Result<(Vec<SubjectData>, Vec<String>)> {
    let dv = read_choice_csv(choice)?;
    let mut mag = read_magnitude_csv(magnitude)?;
    let mut subjects = vec![];
    let mut skipped = vec![];
    for (id, dv) in dv {
        let Some((grid, _)) = mag.remove(&id) else {
            skipped.push(id);
            continue;
        };
        let y: Option<Vec<f64>> = grid.y.iter().copied().collect();
        match y.map(|y| DataSeries::new(grid.t.clone(), y)) {
            Some(Ok(magnitude)) => subjects.push(SubjectData { id, dv, magnitude }),
            _ => {
                log::warn!("skipping {id}: incomplete magnitude series");
                skipped.push(id);
            }
        }
    }
    skipped.extend(mag.into_keys());
    Ok((subjects, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::magnitude::{MagnitudeAnswer, MagnitudeConfig};
    use crate::staircase::{Choice, StaircaseConfig};

    fn complete_choice(seed: u64, rate: f64) -> ChoiceSession {
        let mut s = ChoiceSession::new(seed, StaircaseConfig::default()).unwrap();
        while !s.is_complete() {
            let t = s.next_trial().unwrap();
            let later = t.later_amount * (-rate * t.interval as f64).exp() > 100.0;
            s.record_choice(&t, if later { Choice::Later } else { Choice::Now }, None).unwrap();
        }
        s
    }

    #[test]
    fn one_subject_has_twelve_rows() {
        let s = complete_choice(1, 0.04);
        let mut buf = vec![];
        let summary = export_choice_csv(&[("p1", &s)], &mut buf).unwrap();
        assert_eq!(summary.rows, 12);
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 13);
        assert_eq!(text.lines().next().unwrap(), "subject,interval_months,ep,dv");
    }

    #[test]
    fn incomplete_sessions_are_skipped() {
        let done = complete_choice(1, 0.04);
        let fresh = ChoiceSession::new(2, StaircaseConfig::default()).unwrap();
        let summary = export_choice_csv(&[("b", &fresh), ("a", &done), ("c", &fresh)], std::io::sink()).unwrap();
        assert_eq!(summary.skipped, vec!["b".to_string(), "c".to_string()]);
        assert_eq!(summary.rows, 12);
    }

    #[test]
    fn round_trip_preserves_series() {
        let a = complete_choice(1, 0.04);
        let b = complete_choice(2, 0.09);
        let mut buf = vec![];
        export_choice_csv(&[("b", &b), ("a", &a)], &mut buf).unwrap();
        let back = read_choice_csv(buf.as_slice()).unwrap();
        assert_eq!(back["a"], a.dv_series().unwrap());
        assert_eq!(back["b"], b.dv_series().unwrap());

        let mut m = MagnitudeSession::new(4, MagnitudeConfig::default()).unwrap();
        let mut i = 0u32;
        while !m.is_complete() {
            let t = m.next_trial().unwrap();
            let ans = if i % 9 == 4 { MagnitudeAnswer::Timeout } else { MagnitudeAnswer::Line(37 + (i * 13) % 600) };
            m.record_magnitude(&t, ans, None).unwrap();
            i += 1;
        }
        let mut buf = vec![];
        export_magnitude_csv(&[("a", &m)], &mut buf).unwrap();
        let back = read_magnitude_csv(buf.as_slice()).unwrap();
        assert_eq!(back["a"], m.magnitude_grid());
    }
}
