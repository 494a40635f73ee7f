//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::time::{Duration, Instant};

use chronopref_core::analysis::{build_cohort_report, paired_bayes_factor, BayesConfig, SubjectData};
use chronopref_core::export::{export_choice_csv, export_magnitude_csv, read_choice_csv, read_magnitude_csv};
use chronopref_core::fitting::{fit_model, DataSeries, FitConfig, ModelFamily};
use chronopref_core::magnitude::MagnitudeConfig;
use chronopref_core::models::{
    eval_exponential, eval_general_hyperbolic, eval_proportional_hyperbolic, eval_subjective_general_hyperbolic,
    DiscountParams, PsychParams,
};
use chronopref_core::session_log::{session_file_name, Session, SessionRecord, TaskOrder};
use chronopref_core::simulation::{
    default_cohort, run_recovery, simulate_cohort, simulate_magnitude_session, subjective_time_cohort, AgentSpec,
    ChoiceNoise, CohortSpec, PipelineConfig, SimulatedSubject,
};
use chronopref_core::staircase::{default_intervals, Choice, ChoiceSession, SessionStatus, StaircaseConfig};
use statrs::function::gamma::ln_gamma;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(name: &str, limit: Duration, f: fn() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let pass = out.pass && elapsed < limit;
    println!(
        "{} {name}: {} [{:.2}s, limit {}s]",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn grid_0_72() -> Vec<f64> {
    (0..=720).map(|i| i as f64 * 0.1).collect()
}

fn identities() -> Outcome {
    let mut gh_ph = 0.0f64;
    for delta in [0.01, 0.05, 0.133, 0.4, 1.0, 2.5] {
        for &t in &grid_0_72() {
            let a = eval_general_hyperbolic(delta, delta, t).unwrap();
            let b = eval_proportional_hyperbolic(delta, t).unwrap();
            gh_ph = gh_ph.max((a - b).abs());
        }
    }
    let mut gh_exp = 0.0f64;
    for r in [0.01, 0.094, 0.3, 1.0] {
        // the gap is O(r h t^2), so the limit is probed at h <= 5e-8
        for h in [5e-8, 1e-8, 5e-9, 1e-12, 0.0] {
            for &t in &grid_0_72() {
                let a = eval_general_hyperbolic(h, r, t).unwrap();
                let b = eval_exponential(r, t).unwrap();
                gh_exp = gh_exp.max((a - b).abs());
            }
        }
    }
    let mut sgh = 0.0f64;
    for (h, r) in [(0.133, 0.094), (0.031, 0.133), (1.0, 0.5), (1e-10, 0.2)] {
        for &t in &grid_0_72() {
            let a = eval_subjective_general_hyperbolic(h, r, 1.0, t).unwrap();
            let b = eval_general_hyperbolic(h, r, t).unwrap();
            sgh = sgh.max((a - b).abs());
        }
    }
    Outcome {
        pass: gh_ph <= 1e-12 && gh_exp <= 1e-6 && sgh <= 1e-15,
        detail: format!("max |GH-PH| {gh_ph:.1e} (<=1e-12), |GH(h->0)-exp| {gh_exp:.1e} (<=1e-6), |SGH(c=1)-GH| {sgh:.1e} (<=1e-15)"),
    }
}

fn generate_refit() -> Outcome {
    let t: Vec<f64> = default_intervals().into_iter().map(f64::from).collect();
    let cases: Vec<(ModelFamily, Vec<f64>)> = vec![
        (ModelFamily::Linear, vec![12.0, 15.0]),
        (ModelFamily::Power, vec![20.0, 40.0, 0.6]),
        (ModelFamily::Exponential, vec![0.05]),
        (ModelFamily::ProportionalHyperbolic, vec![0.2]),
        (ModelFamily::GeneralHyperbolic, vec![0.133, 0.094]),
        (ModelFamily::GeneralHyperbolic, vec![0.6, 0.3]),
        (ModelFamily::SubjectiveGeneralHyperbolic { c: 0.7 }, vec![0.3, 0.2]),
    ];
    let cfg = FitConfig::default();
    let mut worst = 0.0f64;
    let mut failures = vec![];
    for (family, truth) in &cases {
        let y: Vec<f64> = t.iter().map(|&x| family.predict(truth, x)).collect();
        let data = DataSeries::new(t.clone(), y).unwrap();
        match fit_model(*family, &data, &cfg) {
            Ok(fit) => {
                for (est, want) in fit.values().iter().zip(truth) {
                    let rel = (est - want).abs() / want.abs();
                    worst = worst.max(rel);
                    if rel > 1e-4 {
                        failures.push(format!("{} {est} vs {want}", family.name()));
                    }
                }
            }
            Err(e) => failures.push(format!("{}: {e}", family.name())),
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: format!("{} parameter sets, worst relative error {worst:.1e} (<=1e-4){}", cases.len(), fmt_failures(&failures)),
    }
}

fn fmt_failures(f: &[String]) -> String {
    if f.is_empty() {
        String::new()
    } else {
        format!("; failed: {}", f.join(", "))
    }
}

fn deterministic_agent(discount: DiscountParams, time_map_c: f64, seed: u64) -> AgentSpec {
    AgentSpec {
        id: "oracle".into(),
        discount,
        choice_noise: ChoiceNoise::Deterministic,
        time_map_c,
        magnitude: PsychParams::Linear { c: 10.0, a: 15.0 },
        response_sd: 0.0,
        timeout_rate: 0.0,
        seed,
    }
}

/// Termination index (1-based) of a single-interval staircase fed `choices`
/// and the three midpoints, computed from first principles.
fn staircase_oracle(choices: &[Choice], cfg: &StaircaseConfig) -> Option<(usize, [f64; 3])> {
    let mut amounts = Vec::with_capacity(choices.len());
    let mut amount = cfg.start_later_amount;
    for &c in choices {
        amounts.push(amount);
        amount *= match c {
            Choice::Now => 1.0 + cfg.step,
            Choice::Later => 1.0 - cfg.step,
        };
    }
    let mut mids = vec![];
    for k in 2..=choices.len() {
        if choices[k - 1] != choices[k - 2] && k >= 11 {
            mids.push(0.5 * (amounts[k - 2] + amounts[k - 1]));
            if mids.len() == 3 {
                return Some((k, [mids[0], mids[1], mids[2]]));
            }
        }
    }
    None
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs()
}

fn staircase() -> Outcome {
    let mut failures = vec![];
    let agents = [
        DiscountParams::Exponential { delta: 0.05 },
        DiscountParams::QuasiHyperbolic { y: 0.8, delta: 0.96 },
        DiscountParams::ProportionalHyperbolic { delta: 0.15 },
        DiscountParams::GeneralHyperbolic { h: 0.133, r: 0.094 },
        DiscountParams::SubjectiveGeneralHyperbolic { h: 0.4, r: 0.2, c: 0.7 },
    ];
    let mut worst = 0.0f64;
    let mut n_checked = 0;
    for (i, d) in agents.iter().enumerate() {
        for c in [1.0, 0.7] {
            let agent = deterministic_agent(*d, c, 100 + i as u64);
            let session = match chronopref_core::simulation::simulate_choice_session(&agent, StaircaseConfig::default()) {
                Ok(s) => s,
                Err(e) => {
                    failures.push(format!("{}: {e}", d.family_name()));
                    continue;
                }
            };
            for ep in session.equivalence_points().unwrap() {
                let indifference = 100.0 / d.value_at((ep.interval as f64).powf(c));
                let rel = (ep.ep / indifference - 1.0).abs();
                worst = worst.max(rel);
                n_checked += 1;
                if rel > 0.10 {
                    failures.push(format!("{} at {}: {} vs {indifference}", d.family_name(), ep.interval, ep.ep));
                }
            }
        }
    }

    // Every Now/Later string of length 16, and again with a cap of 14.
    let len = 16;
    let mut strings = 0;
    for cap in [60, 14] {
        let cfg = StaircaseConfig { intervals: vec![12], max_trials_per_interval: cap, ..Default::default() };
        for bits in 0u32..(1 << len) {
            let choices: Vec<Choice> =
                (0..len).map(|b| if bits >> b & 1 == 1 { Choice::Later } else { Choice::Now }).collect();
            let mut s = ChoiceSession::new(7, cfg.clone()).unwrap();
            let mut fed = 0;
            while s.status() == SessionStatus::Running && fed < len {
                let t = s.next_trial().unwrap();
                s.record_choice(&t, choices[fed], None).unwrap();
                fed += 1;
            }
            strings += 1;
            let expected = staircase_oracle(&choices, &cfg).filter(|(k, _)| *k <= cap);
            let ok = match expected {
                Some((k, mids)) => {
                    let ep = s.equivalence_point(12).unwrap();
                    s.status() == SessionStatus::Complete
                        && fed == k
                        && ep.inversion_points.iter().zip(&mids).all(|(a, b)| close(*a, *b))
                        && close(ep.ep, (mids[0] + mids[1] + mids[2]) / 3.0)
                        && s.inversion_count(12).unwrap() == 3
                }
                None if cap < len => {
                    s.status() == SessionStatus::CapExceeded { interval: 12 } && fed == cap
                }
                None => s.status() == SessionStatus::Running && s.equivalence_point(12).is_err(),
            };
            if !ok && failures.len() < 5 {
                failures.push(format!("string {bits:016b} cap {cap}"));
            }
        }
    }
    Outcome {
        pass: failures.is_empty() && n_checked == 120,
        detail: format!(
            "{n_checked} EPs from deterministic agents, worst |EP/indifference-1| {worst:.3} (<=0.10); {strings} choice strings enumerated{}",
            fmt_failures(&failures)
        ),
    }
}

fn direction() -> Outcome {
    let agents = subjective_time_cohort(&CohortSpec::default(), 0.7, 0).unwrap();
    let cfg = PipelineConfig::default();
    let (subjects, capped) = simulate_cohort(&agents, &cfg).unwrap();
    let data: Vec<SubjectData> = subjects.iter().map(SimulatedSubject::subject_data).collect::<Result<_, _>>().unwrap();
    let report = build_cohort_report(&data, &cfg.analysis).unwrap();
    let hits = report
        .subjects
        .iter()
        .filter(|s| {
            s.included()
                && s.general_vs_exponential.is_some_and(|d| d >= 2.0)
                && s.remap.as_ref().is_some_and(|r| r.h_subjective < r.h_objective)
        })
        .count();
    let share = hits as f64 / agents.len() as f64;
    let Some(remap) = report.remap.as_ref() else {
        return Outcome { pass: false, detail: "no remapped aggregate".into() };
    };
    let p = |f: &chronopref_core::fitting::FitResult, n: &str| f.param(n).unwrap_or(f64::NAN);
    let (h0, h1) = (p(&remap.objective, "h"), p(&remap.subjective, "h"));
    let (r0, r1) = (p(&remap.objective, "r"), p(&remap.subjective, "r"));
    Outcome {
        pass: share >= 0.9 && h1 < h0 && r1 > r0,
        detail: format!(
            "{hits}/{} agents GH-over-exponential with lower h after remap ({} capped, {} excluded); aggregate h {h0:.3} -> {h1:.3}, r {r0:.3} -> {r1:.3} (c = {:.3})",
            agents.len(),
            capped.len(),
            report.counts.n_subjects - report.counts.n_included,
            remap.c
        ),
    }
}

fn cohort_shape() -> Outcome {
    let cfg = PipelineConfig::default();
    let mut pass = true;
    let mut lines = vec![];
    let (mut power_sum, mut hyper_sum, mut trials_sum) = (0.0, 0.0, 0.0);
    let mut floor_clamps = 0;
    let reps = 10;
    for seed in 0..reps {
        let agents = default_cohort(&CohortSpec::default(), seed).unwrap();
        let rec = run_recovery(&agents, &cfg).unwrap();
        let c = &rec.cohort.counts;
        let scale = 24.0 / c.n_included as f64;
        let power = c.power as f64 * scale;
        let hyper = c.hyperbolic as f64 * scale;
        let clamps: usize = rec.rows.iter().map(|r| r.ceiling_clamps).sum();
        floor_clamps += rec.rows.iter().map(|r| r.clamp_events - r.ceiling_clamps).sum::<usize>();
        let ok = (power - 16.0).abs() <= 3.0
            && (hyper - 15.0).abs() <= 3.0
            && (350.0..=550.0).contains(&rec.mean_choice_trials)
            && clamps == 0;
        pass &= ok;
        power_sum += power;
        hyper_sum += hyper;
        trials_sum += rec.mean_choice_trials;
        if !ok {
            lines.push(format!(
                "seed {seed}: power {}/{}, hyperbolic {}/{}, trials {:.0}, ceiling clamps {clamps}",
                c.power, c.n_included, c.hyperbolic, c.n_included, rec.mean_choice_trials
            ));
        }
    }
    let n = reps as f64;
    Outcome {
        pass,
        detail: format!(
            "{reps} replicates: mean power {:.1}/24 (16 +/- 3), hyperbolic {:.1}/24 (15 +/- 3), choice trials {:.0} (350-550), no clamping at the line end ({floor_clamps} responses floored at 0){}",
            power_sum / n,
            hyper_sum / n,
            trials_sum / n,
            fmt_failures(&lines)
        ),
    }
}

/// Composite Simpson weights on `m` (even) panels of [a, b].
fn simpson(a: f64, b: f64, m: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / m as f64;
    (0..=m)
        .map(|i| {
            let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            (a + i as f64 * h, w * h / 3.0)
        })
        .collect()
}

/// One-sided marginal of `t` under a half-Cauchy(0, scale) effect prior.
/// Outer variable: effect angle theta on [0, pi/2]. Inner: noncentral t
/// density as a mixture over the chi-square variable v = nu x / (1 - x).
fn oracle_marginal(t: f64, n: usize, sign: f64, scale: f64, m_outer: usize, m_inner: usize) -> f64 {
    let nu = (n - 1) as f64;
    let ln_norm = -0.5 * nu * 2f64.ln() - ln_gamma(0.5 * nu);
    let inner: Vec<(f64, f64)> = simpson(0.0, 1.0, m_inner)
        .into_iter()
        .filter(|&(x, _)| x > 0.0 && x < 1.0)
        .map(|(x, w)| {
            let v = nu * x / (1.0 - x);
            let ln_chi = (0.5 * nu - 1.0) * v.ln() - 0.5 * v + ln_norm;
            let s = (v / nu).sqrt();
            let jac = nu / ((1.0 - x) * (1.0 - x));
            (s, w * jac * s * ln_chi.exp())
        })
        .collect();
    let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let total: f64 = simpson(0.0, std::f64::consts::FRAC_PI_2, m_outer)
        .into_iter()
        .filter(|&(theta, _)| theta < std::f64::consts::FRAC_PI_2)
        .map(|(theta, w)| {
            let lambda = sign * (n as f64).sqrt() * scale * theta.tan();
            let dens: f64 = inner.iter().map(|&(s, wi)| wi * (-0.5 * (t * s - lambda).powi(2)).exp()).sum();
            w * dens * inv_sqrt_2pi
        })
        .sum();
    std::f64::consts::FRAC_2_PI * total
}

fn bayes() -> Outcome {
    let cfg = BayesConfig::default();
    let n = 24;
    let base: Vec<f64> = (0..n).map(|i| 0.1 + 0.01 * i as f64).collect();
    // Mirrored differences: the mean is zero up to rounding.
    let spread: Vec<f64> = (0..n).map(|i| 0.004 * (i as f64 - 11.5)).collect();
    let zero = paired_bayes_factor(&base, &base.iter().zip(&spread).map(|(b, d)| b - d).collect::<Vec<_>>(), &cfg).unwrap();
    // A slight shift, well inside sampling noise.
    let near = paired_bayes_factor(&base, &base.iter().zip(&spread).map(|(b, d)| b - d - 0.0005).collect::<Vec<_>>(), &cfg).unwrap();
    let in_band = |bf: &chronopref_core::analysis::PairedBayesFactor| {
        (0.8..=1.25).contains(&bf.bf_objective_lower) && (0.8..=1.25).contains(&bf.bf_objective_not_lower)
    };
    let zero_ok = in_band(&zero) && in_band(&near);

    // Objective h consistently below subjective h, and the reverse.
    let jitter: Vec<f64> = (0..n).map(|i| 0.01 * ((i * 7 % 11) as f64 - 5.0)).collect();
    let lower: Vec<f64> = base.iter().zip(&jitter).map(|(b, j)| b + 0.04 + j).collect();
    let strong_lower = paired_bayes_factor(&base, &lower, &cfg).unwrap();
    let higher: Vec<f64> = base.iter().zip(&jitter).map(|(b, j)| b - 0.04 + j).collect();
    let strong_higher = paired_bayes_factor(&base, &higher, &cfg).unwrap();
    let strong_ok = strong_lower.bf_objective_lower > 10.0 && strong_higher.bf_objective_not_lower > 10.0;

    // Moderate effects and a second sample size for the quadrature check.
    let weak: Vec<f64> = base.iter().zip(&jitter).map(|(b, j)| b + 0.008 + j).collect();
    let weak = paired_bayes_factor(&base, &weak, &cfg).unwrap();
    let small = paired_bayes_factor(&[0.3, 0.2, 0.25, 0.4, 0.33], &[0.35, 0.21, 0.3, 0.38, 0.4], &cfg).unwrap();

    let mut worst = 0.0f64;
    for bf in [&zero, &near, &strong_lower, &strong_higher, &weak, &small] {
        let m_pos = oracle_marginal(bf.t, bf.n, 1.0, cfg.prior_scale, 1000, 4000);
        let m_neg = oracle_marginal(bf.t, bf.n, -1.0, cfg.prior_scale, 1000, 4000);
        for (got, want) in [(bf.bf_objective_lower, m_neg / m_pos), (bf.bf_negative_vs_null, m_neg / central_t(bf.t, bf.n)), (bf.bf_positive_vs_null, m_pos / central_t(bf.t, bf.n))] {
            worst = worst.max((got / want - 1.0).abs());
        }
    }
    Outcome {
        pass: zero_ok && strong_ok && worst <= 1e-6,
        detail: format!(
            "zero effect BFs {:.3}/{:.3}, near-zero (t = {:.2}) {:.3}/{:.3} (in [0.8, 1.25]); strong effect BFs {:.3e}/{:.3e} (>10); worst relative gap to Simpson oracle {worst:.1e} (<=1e-6)",
            zero.bf_objective_lower, zero.bf_objective_not_lower, near.t, near.bf_objective_lower, near.bf_objective_not_lower, strong_lower.bf_objective_lower, strong_higher.bf_objective_not_lower
        ),
    }
}

fn central_t(t: f64, n: usize) -> f64 {
    let nu = (n - 1) as f64;
    (ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu)).exp() / (nu * std::f64::consts::PI).sqrt()
        * (1.0 + t * t / nu).powf(-0.5 * (nu + 1.0))
}

fn persistence() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let agents = default_cohort(&CohortSpec { n: 6, timeout_rate: 0.05, ..Default::default() }, 11).unwrap();
    let mut failures = vec![];
    let mut choice = vec![];
    let mut magnitude = vec![];
    for (i, agent) in agents.iter().enumerate() {
        let order = Some(TaskOrder::for_index(i as u64));
        let c = chronopref_core::simulation::run_choice_session(agent, StaircaseConfig::default()).unwrap();
        let m = simulate_magnitude_session(agent, agent.seed, MagnitudeConfig::default()).unwrap().session;
        for record in [SessionRecord::from_choice(&agent.id, c.clone(), order), SessionRecord::from_magnitude(&agent.id, m.clone(), order)] {
            let path = dir.path().join(session_file_name(&agent.id, record.header.task.kind()));
            record.save(&path).unwrap();
            let bytes = std::fs::read(&path).unwrap();
            let loaded = SessionRecord::load(&path).unwrap();
            let same = loaded.to_jsonl().unwrap().as_bytes() == bytes.as_slice()
                && match (&record.session, &loaded.session) {
                    (Session::Choice(a), Session::Choice(b)) => {
                        a.events() == b.events() && a.status() == b.status() && bits_opt(&a.dv_grid().y) == bits_opt(&b.dv_grid().y)
                    }
                    (Session::Magnitude(a), Session::Magnitude(b)) => {
                        a.events() == b.events() && a.responses() == b.responses() && bits_opt(&a.magnitude_grid().0.y) == bits_opt(&b.magnitude_grid().0.y)
                    }
                    _ => false,
                };
            if !same {
                failures.push(path.file_name().unwrap().to_string_lossy().into_owned());
            }
        }
        choice.push((agent.id.clone(), c));
        magnitude.push((agent.id.clone(), m));
    }

    let mut choice_csv = vec![];
    let cs: Vec<(&str, &ChoiceSession)> = choice.iter().map(|(id, s)| (id.as_str(), s)).collect();
    let summary = export_choice_csv(&cs, &mut choice_csv).unwrap();
    let back = read_choice_csv(choice_csv.as_slice()).unwrap();
    for (id, s) in &choice {
        if summary.skipped.contains(id) {
            continue;
        }
        if back.get(id).map(|d| (bits(&d.t), bits(&d.y))) != Some((bits(&s.dv_series().unwrap().t), bits(&s.dv_series().unwrap().y))) {
            failures.push(format!("{id} choice csv"));
        }
    }
    let mut mag_csv = vec![];
    let ms: Vec<_> = magnitude.iter().map(|(id, s)| (id.as_str(), s)).collect();
    export_magnitude_csv(&ms, &mut mag_csv).unwrap();
    let back = read_magnitude_csv(mag_csv.as_slice()).unwrap();
    for (id, s) in &magnitude {
        let (grid, missing) = s.magnitude_grid();
        match back.get(id) {
            Some((g, m)) if bits_opt(&g.y) == bits_opt(&grid.y) && bits(&g.t) == bits(&grid.t) && *m == missing => {}
            _ => failures.push(format!("{id} magnitude csv")),
        }
    }
    Outcome {
        pass: failures.is_empty() && back.len() == agents.len(),
        detail: format!(
            "{} session files replayed bit-identically, {} choice and {} magnitude series survive CSV round-trip{}",
            2 * agents.len(),
            choice.len() - summary.skipped.len(),
            back.len(),
            fmt_failures(&failures)
        ),
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn bits_opt(v: &[Option<f64>]) -> Vec<Option<u64>> {
    v.iter().map(|x| x.map(f64::to_bits)).collect()
}

fn main() {
    let s = Duration::from_secs;
    let results = [
        check("analytic identities", s(1), identities),
        check("generate-refit", s(10), generate_refit),
        check("staircase oracle", s(30), staircase),
        check("pipeline direction", s(120), direction),
        check("cohort shape", s(180), cohort_shape),
        check("bayes factor", s(5), bayes),
        check("persistence", s(5), persistence),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
