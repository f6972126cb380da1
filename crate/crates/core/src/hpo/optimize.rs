use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gp::{expected_improvement, GaussianProcess};
use super::space::{shifted_halton, Point, SearchSpace};
use crate::error::{FgttError, Result};

pub const N_CANDIDATES: usize = 512;
pub const DEFAULT_N_INIT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Complete,
    Failed,
}

impl TrialStatus {
    pub fn name(self) -> &'static str {
        match self {
            TrialStatus::Complete => "complete",
            TrialStatus::Failed => "failed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    /// 0-based position in the run.
    pub id: usize,
    pub point: Point,
    /// Maximized. Non-finite for failed trials.
    pub objective: f64,
    pub status: TrialStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub trials: Vec<Trial>,
}

impl OptimizeResult {
    /// Completed trials in run order.
    pub fn history(&self) -> Vec<&Trial> {
        self.trials
            .iter()
            .filter(|t| t.status == TrialStatus::Complete)
            .collect()
    }

    pub fn n_failed(&self) -> usize {
        self.trials.len() - self.history().len()
    }

    /// Highest objective; the earliest trial wins ties.
    pub fn best(&self) -> Option<&Trial> {
        self.history().into_iter().fold(None, |b: Option<&Trial>, t| match b {
            Some(b) if b.objective >= t.objective => Some(b),
            _ => Some(t),
        })
    }

    /// Running maximum of the objective over completed trials.
    pub fn incumbent_trace(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.history()
            .iter()
            .map(|t| {
                best = best.max(t.objective);
                best
            })
            .collect()
    }
}

/// Expected-improvement maximizer over `N_CANDIDATES` shifted-Halton
/// candidates that satisfy the space's constraints. Ties go to the first.
pub fn propose(gp: &GaussianProcess, space: &SearchSpace, rng: &mut ChaCha8Rng) -> Result<Point> {
    let best = gp.best_observed();
    let mut chosen: Option<(f64, Point)> = None;
    for u in shifted_halton(N_CANDIDATES, space.dims.len(), rng) {
        let p = space.from_unit(&u);
        if !space.contains(&p) {
            continue;
        }
        let (m, v) = gp.predict(&space.encode(&p));
        let ei = expected_improvement(m, v, best);
        if chosen.as_ref().is_none_or(|(b, _)| ei > *b) {
            chosen = Some((ei, p));
        }
    }
    match chosen {
        Some((_, p)) => Ok(p),
        None => space.sample(rng),
    }
}

/// Random trials first, then the surrogate loop.
pub fn optimize<F: FnMut(&Point) -> f64>(
    objective: F,
    space: &SearchSpace,
    budget: usize,
    n_init: usize,
    seed: u64,
) -> Result<OptimizeResult> {
    resume(objective, space, budget, n_init, seed, Vec::new(), |_| Ok(()))
}

/// Continues a run from `prior` trials. Each trial draws from its own
/// stream of the seed, so a resumed run matches an uninterrupted one.
/// `on_trial` sees every new trial as soon as it finishes.
pub fn resume<F, G>(
    mut objective: F,
    space: &SearchSpace,
    budget: usize,
    n_init: usize,
    seed: u64,
    prior: Vec<Trial>,
    mut on_trial: G,
) -> Result<OptimizeResult>
where
    F: FnMut(&Point) -> f64,
    G: FnMut(&Trial) -> Result<()>,
{
    space.validate()?;
    if n_init < 2 || budget < n_init {
        return Err(FgttError::Param(format!(
            "need budget >= n_init >= 2, got budget {budget}, n_init {n_init}"
        )));
    }
    if prior.len() > budget {
        return Err(FgttError::Param(format!(
            "{} prior trials exceed the budget {budget}",
            prior.len()
        )));
    }
    for (i, t) in prior.iter().enumerate() {
        if t.id != i || !space.contains(&t.point) {
            return Err(FgttError::Param(format!(
                "prior trial {i} does not belong to this search space"
            )));
        }
    }
    let mut trials = prior;
    for id in trials.len()..budget {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64);
        let done: Vec<&Trial> = trials.iter().filter(|t| t.status == TrialStatus::Complete).collect();
        let point = if id < n_init || done.len() < 2 {
            space.sample(&mut rng)?
        } else {
            let xs: Vec<Vec<f64>> = done.iter().map(|t| space.encode(&t.point)).collect();
            let ys: Vec<f64> = done.iter().map(|t| t.objective).collect();
            let gp = GaussianProcess::fit(&xs, &ys)?;
            propose(&gp, space, &mut rng)?
        };
        let value = objective(&point);
        let trial = Trial {
            id,
            point,
            objective: value,
            status: if value.is_finite() {
                TrialStatus::Complete
            } else {
                TrialStatus::Failed
            },
        };
        on_trial(&trial)?;
        trials.push(trial);
    }
    Ok(OptimizeResult { trials })
}

/// Pure random search with the same per-trial streams as `optimize`.
pub fn random_search<F: FnMut(&Point) -> f64>(
    objective: F,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
) -> Result<OptimizeResult> {
    optimize(objective, space, budget, budget, seed)
}

fn header(space: &SearchSpace) -> Vec<String> {
    let mut h = vec!["trial".to_string()];
    h.extend(space.dims.iter().map(|d| d.name.clone()));
    h.push("objective".into());
    h.push("status".into());
    h
}

pub fn write_history_header<W: Write>(space: &SearchSpace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(space))?;
    w.flush().map_err(|e| FgttError::io("<csv output>", e))?;
    Ok(())
}

/// One history row without a header, for appending.
pub fn write_history_row<W: Write>(space: &SearchSpace, trial: &Trial, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut rec = vec![trial.id.to_string()];
    rec.extend(space.format_point(&trial.point));
    rec.push(trial.objective.to_string());
    rec.push(trial.status.name().into());
    w.write_record(&rec)?;
    w.flush().map_err(|e| FgttError::io("<csv output>", e))?;
    Ok(())
}

pub fn write_history_csv<W: Write>(space: &SearchSpace, trials: &[Trial], mut out: W) -> Result<()> {
    write_history_header(space, &mut out)?;
    for t in trials {
        write_history_row(space, t, &mut out)?;
    }
    Ok(())
}

pub fn read_history_csv<R: Read>(space: &SearchSpace, input: R) -> Result<Vec<Trial>> {
    let mut r = csv::Reader::from_reader(input);
    let found: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if found != header(space) {
        return Err(FgttError::Header(format!(
            "trial history columns {found:?} do not match the search space"
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = |what: &str| FgttError::Param(format!("trial history row {}: bad {what}", out.len() + 1));
        let id: usize = rec[0].parse().map_err(|_| bad("trial id"))?;
        let point = space
            .dims
            .iter()
            .enumerate()
            .map(|(i, d)| d.parse(&rec[i + 1]))
            .collect::<Result<Point>>()?;
        let n = space.dims.len();
        let objective: f64 = rec[n + 1].parse().map_err(|_| bad("objective"))?;
        let status = match &rec[n + 2] {
            "complete" if objective.is_finite() => TrialStatus::Complete,
            "failed" => TrialStatus::Failed,
            _ => return Err(bad("status")),
        };
        out.push(Trial {
            id,
            point,
            objective,
            status,
        });
    }
    Ok(out)
}

/// Branin-Hoo function on x1 in [-5, 10], x2 in [0, 15]; global minimum
/// 0.397887 at three points.
pub fn branin(x1: f64, x2: f64) -> f64 {
    use std::f64::consts::PI;
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

pub const BRANIN_MIN: f64 = 0.397_887_357_729_738_2;

#[cfg(test)]
mod tests {
    use super::super::space::{Dim, Value};
    use super::*;

    fn lr_space() -> SearchSpace {
        SearchSpace::new(vec![Dim::continuous("learning_rate", 0.001, 0.1, true)], vec![]).unwrap()
    }

    fn real(p: &Point, i: usize) -> f64 {
        match p[i] {
            Value::Real(x) => x,
            _ => panic!("continuous dimension expected"),
        }
    }

    #[test]
    fn branin_minima() {
        use std::f64::consts::PI;
        for (a, b) in [(-PI, 12.275), (PI, 2.275), (9.42478, 2.475)] {
            assert!((branin(a, b) - BRANIN_MIN).abs() < 1e-5);
        }
    }

    #[test]
    fn recovers_peak_learning_rate() {
        let r = optimize(|p| -(real(p, 0) - 0.017).powi(2), &lr_space(), 30, 10, 4).unwrap();
        let best = real(&r.best().unwrap().point, 0);
        assert!((best - 0.017).abs() < 0.005, "{best}");
    }

    #[test]
    fn budget_equal_to_init_is_random_search() {
        let f = |p: &Point| -(real(p, 0) - 0.05).abs();
        let a = optimize(f, &lr_space(), 12, 12, 9).unwrap();
        let b = random_search(f, &lr_space(), 12, 9).unwrap();
        assert_eq!(a, b);
        let trace = a.incumbent_trace();
        assert!(trace.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(*trace.last().unwrap(), a.best().unwrap().objective);
    }

    #[test]
    fn failed_trials_are_skipped() {
        let mut calls = 0;
        let r = optimize(
            |p| {
                calls += 1;
                if calls % 3 == 0 {
                    f64::NAN
                } else {
                    real(p, 0)
                }
            },
            &lr_space(),
            15,
            4,
            2,
        )
        .unwrap();
        assert_eq!(r.trials.len(), 15);
        assert_eq!(r.history().len(), 15 - r.n_failed());
        assert_eq!(r.n_failed(), 5);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let s = SearchSpace::fgtt_default();
        let f = |p: &Point| {
            -(s.numeric(p, "learning_rate").unwrap().ln() + 4.0).powi(2) + s.numeric(p, "n_layers").unwrap() * 0.1
        };
        let full = optimize(f, &s, 14, 5, 11).unwrap();
        let mut buf = Vec::new();
        write_history_csv(&s, &full.trials[..8], &mut buf).unwrap();
        let prior = read_history_csv(&s, buf.as_slice()).unwrap();
        assert_eq!(prior, full.trials[..8]);
        let rest = resume(f, &s, 14, 5, 11, prior, |_| Ok(())).unwrap();
        assert_eq!(rest, full);
        assert!(full.trials.iter().all(|t| s.contains(&t.point)));
    }

    #[test]
    fn flat_objective_explores_far_from_data() {
        let s = SearchSpace::new(vec![Dim::continuous("x", 0.0, 1.0, false)], vec![]).unwrap();
        let xs = vec![vec![0.0], vec![0.1]];
        let gp = GaussianProcess::fit(&xs, &[1.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = propose(&gp, &s, &mut rng).unwrap();
        assert!(real(&p, 0) > 0.9, "{p:?}");
    }

    #[test]
    fn bad_budget_rejected() {
        assert!(optimize(|_| 0.0, &lr_space(), 5, 1, 0).is_err());
        assert!(optimize(|_| 0.0, &lr_space(), 3, 5, 0).is_err());
    }
}
