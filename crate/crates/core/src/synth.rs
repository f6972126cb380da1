//! Synthetic crash records with the published marginals and a planted,
//! documented label mechanism.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::data::{Column, CrashType, Dataset, FeatureSchema, NUM_CLASSES};
use crate::error::{FgttError, Result};
use crate::train::metrics::Metrics;

/// Signal strength used when none is given; its Bayes ceiling clears 0.80
/// weighted F1.
pub const DEFAULT_SIGNAL_STRENGTH: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_rows: usize,
    pub seed: u64,
    /// Target label marginal for (rear-end, sideswipe, angle).
    pub class_mix: [f64; NUM_CLASSES],
    pub signal_strength: f64,
    /// Masking probability for `Precip_accum` and `Hourly_avg_speed`.
    pub missing_rate: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_rows: 10_000,
            seed: 0,
            class_mix: [0.58, 0.29, 0.13],
            signal_strength: DEFAULT_SIGNAL_STRENGTH,
            missing_rate: 0.05,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 {
            return Err(FgttError::Config("n_rows must be positive".into()));
        }
        if self.class_mix.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(FgttError::Config("class_mix entries must lie in (0, 1)".into()));
        }
        if (self.class_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(FgttError::Config("class_mix must sum to 1".into()));
        }
        if !(self.signal_strength >= 0.0 && self.signal_strength.is_finite()) {
            return Err(FgttError::Config("signal_strength must be a finite value >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(FgttError::Config("missing_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Published summary of one numeric feature.
#[derive(Clone, Copy, Debug)]
pub struct NumericTarget {
    pub name: &'static str,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub const NUMERIC_TARGETS: [NumericTarget; 14] = [
    nt("Wind_speed", 1.22, 1.89, 0.0, 79.0),
    nt("Gust", 2.32, 3.07, 0.0, 79.0),
    nt("Precip_rate", 0.01, 0.09, 0.0, 3.0),
    nt("Precip_accum", 0.10, 0.33, 0.0, 4.52),
    nt("Hourly_truck_ratio", 0.08, 0.10, 0.0, 0.88),
    nt("Hourly_volume", 4370.0, 2884.0, 10.0, 10688.0),
    nt("Hourly_avg_speed", 49.06, 15.56, 4.18, 80.27),
    nt("IRI_avg", 61.43, 33.10, 25.0, 251.0),
    nt("Rut_avg", 0.107, 0.061, 0.0, 0.41),
    nt("Faulting_avg_3d", 0.005, 0.018, 0.0, 0.39),
    nt("Heading_angle", 205.0, 120.76, 0.9, 359.9),
    nt("Percent_grade", -1.29, 1.91, -7.40, 3.70),
    nt("Cross_section_slope", 0.361, 1.691, -4.70, 3.4),
    nt("Crack_percentage", 8.11, 10.74, 0.0, 57.0),
];

const fn nt(name: &'static str, mean: f64, std: f64, min: f64, max: f64) -> NumericTarget {
    NumericTarget {
        name,
        mean,
        std,
        min,
        max,
    }
}

/// Published category percentages, in schema category order.
// percentages, some happen to resemble math constants
#[allow(clippy::approx_constant)]
pub const CATEGORICAL_TARGETS: [(&str, &[f64]); 19] = [
    ("City", &[40.16, 32.33, 27.5]),
    ("Crash_location", &[80.95, 10.53, 5.27, 1.95, 1.29]),
    ("Lighting", &[74.39, 15.09, 8.43, 1.13, 0.95]),
    ("Surface", &[80.25, 19.75]),
    ("Driver1_safety_equip", &[72.11, 26.24, 1.64]),
    ("Driver2_safety_equip", &[81.37, 17.74, 0.90]),
    ("Veh1_type", &[88.99, 6.71, 3.02, 0.81, 0.47]),
    ("Veh2_type", &[90.91, 6.06, 2.09, 0.69, 0.25]),
    ("Veh1_maneuver", &[55.93, 27.69, 5.42, 4.19, 3.69, 1.31, 1.25, 0.53]),
    ("Road_composition", &[86.95, 13.05]),
    ("Trafficway_layout", &[55.28, 18.72, 13.86, 0.47]),
    ("Day_of_week", &[14.14, 16.09, 13.73, 16.67, 18.83, 11.51, 9.03]),
    ("Driver1_agerange", &[25.81, 23.79, 27.25, 10.62, 12.53]),
    ("Driver2_agerange", &[18.27, 27.44, 22.32, 16.33, 15.64]),
    ("Curvature", &[86.18, 12.76, 1.06]),
    ("Facility_type", &[78.44, 11.03, 5.77, 4.76]),
    ("Area_type", &[98.25, 1.75]),
    ("Num_lanes", &[25.64, 9.07, 8.59, 14.01, 10.41, 32.28]),
    ("Time_of_day", &[6.28, 17.40, 19.31, 41.95, 15.05]),
];

/// Normalized target frequencies for a categorical feature.
pub fn category_probabilities(feature: &str) -> Option<Vec<f64>> {
    let (_, pct) = CATEGORICAL_TARGETS.iter().find(|(n, _)| *n == feature)?;
    let total: f64 = pct.iter().sum();
    Some(pct.iter().map(|p| p / total).collect())
}

pub fn numeric_target(feature: &str) -> Option<&'static NumericTarget> {
    NUMERIC_TARGETS.iter().find(|t| t.name == feature)
}

/// Normal(mu, sigma) restricted to [lo, hi], sampled by inverse CDF.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedNormal {
    pub mu: f64,
    pub sigma: f64,
    pub lo: f64,
    pub hi: f64,
}

impl TruncatedNormal {
    /// Standardized bounds, reflected so the lower bound is not above zero;
    /// this keeps both CDF evaluations in the accurate left tail.
    fn frame(&self) -> (f64, f64, bool) {
        let a = (self.lo - self.mu) / self.sigma;
        let b = (self.hi - self.mu) / self.sigma;
        if a > 0.0 {
            (-b, -a, true)
        } else {
            (a, b, false)
        }
    }

    pub fn mean_std(&self) -> (f64, f64) {
        let n = Normal::standard();
        let (a, b, flip) = self.frame();
        let z = n.cdf(b) - n.cdf(a);
        let (pa, pb) = (n.pdf(a), n.pdf(b));
        let shift = (pa - pb) / z;
        let var = 1.0 + (a * pa - b * pb) / z - shift * shift;
        let m = if flip { -shift } else { shift };
        (self.mu + self.sigma * m, self.sigma * var.max(0.0).sqrt())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let n = Normal::standard();
        let (a, b, flip) = self.frame();
        let (ca, cb) = (n.cdf(a), n.cdf(b));
        let u: f64 = rng.random();
        let z = n.inverse_cdf(ca + u * (cb - ca)).clamp(a, b);
        let z = if flip { -z } else { z };
        (self.mu + self.sigma * z).clamp(self.lo, self.hi)
    }

    /// Finds underlying (mu, sigma) whose truncation to [min, max] has the
    /// target mean and std. When the target is not attainable (a coefficient
    /// of variation too large for the bounds) the mean is still matched and
    /// the std lands as close as the family allows.
    pub fn fit(t: &NumericTarget) -> TruncatedNormal {
        let range = t.max - t.min;
        let mut d = TruncatedNormal {
            mu: t.mean,
            sigma: t.std,
            lo: t.min,
            hi: t.max,
        };
        d.mu = d.mean_matching_mu(t.mean);
        let matched = |d: &TruncatedNormal| (d.mean_std().0 - t.mean).abs() < 1e-9 * range;
        'outer: for _ in 0..300 {
            let (_, s) = d.mean_std();
            if (s - t.std).abs() < 1e-10 * range {
                break;
            }
            let ratio = t.std / s;
            for k in 0..12 {
                let mut next = d;
                next.sigma = (d.sigma * ratio.powf(0.5f64.powi(k))).clamp(1e-6 * range, 50.0 * range);
                next.mu = next.mean_matching_mu(t.mean);
                if matched(&next) {
                    if next.sigma == d.sigma {
                        break 'outer;
                    }
                    d = next;
                    continue 'outer;
                }
            }
            break;
        }
        d
    }

    /// Location giving the requested truncated mean at the current sigma
    /// (the truncated mean is increasing in mu).
    fn mean_matching_mu(&self, target: f64) -> f64 {
        let mut lo = self.lo - 30.0 * self.sigma;
        let mut hi = self.hi + 30.0 * self.sigma;
        let mut d = *self;
        for _ in 0..200 {
            d.mu = 0.5 * (lo + hi);
            if d.mean_std().0 < target {
                lo = d.mu;
            } else {
                hi = d.mu;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Additive per-class logit contributions. Rows follow the schema's category
/// order; columns are (rear-end, sideswipe, angle).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedMechanism {
    pub description: String,
    pub maneuver: Vec<[f64; NUM_CLASSES]>,
    pub location: Vec<[f64; NUM_CLASSES]>,
    /// Per unit of `(Hourly_avg_speed - 49.06) / 15.56`.
    pub speed: [f64; NUM_CLASSES],
    /// Per unit of `(Hourly_volume - 4370) / 2884`.
    pub volume: [f64; NUM_CLASSES],
    pub signal_strength: f64,
    /// Calibrated so the label marginal equals the configured class mix.
    pub intercepts: [f64; NUM_CLASSES],
}

const MECHANISM_TEXT: &str = "SYNTHETIC planted label mechanism, not an empirical finding. \
logit_c = intercept_c + signal_strength * (maneuver[c] + location[c] + speed[c]*z_speed + volume[c]*z_volume); \
label ~ softmax(logit). Only Veh1_maneuver, Crash_location (Event group) and Hourly_avg_speed, \
Hourly_volume (Traffic group) carry signal; all other features are independent noise.";

impl PlantedMechanism {
    fn weights(signal_strength: f64) -> PlantedMechanism {
        PlantedMechanism {
            description: MECHANISM_TEXT.into(),
            maneuver: vec![
                [1.5, 0.0, 0.0], // Straight
                [0.0, 3.5, 0.0], // Changing Lanes/Passing
                [0.0, 1.5, 1.0], // Negotiating a Curve
                [0.0, 0.0, 3.5], // Turning
                [0.0, 0.5, 1.0], // Other
                [1.0, 0.0, 1.5], // Backing
                [2.0, 0.0, 0.0], // Stopped/Parked
                [0.0, 0.0, 3.0], // Entering/Leaving Parking/Driveway
            ],
            location: vec![
                [0.5, 0.0, 0.0], // Non-intersection
                [0.0, 0.0, 3.0], // Intersection
                [0.0, 1.0, 0.5], // Ramp
                [0.0, 0.0, 1.5], // Private property
                [0.0, 1.0, 0.5], // Shoulder
            ],
            speed: [-1.0, 0.3, 0.5],
            volume: [0.8, 0.2, -0.6],
            signal_strength,
            intercepts: [0.0; NUM_CLASSES],
        }
    }

    /// Feature-driven part of the logits, before intercepts.
    pub fn score(&self, maneuver: usize, location: usize, z_speed: f64, z_volume: f64) -> [f64; NUM_CLASSES] {
        let mut out = [0.0; NUM_CLASSES];
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.signal_strength
                * (self.maneuver[maneuver][c]
                    + self.location[location][c]
                    + self.speed[c] * z_speed
                    + self.volume[c] * z_volume);
        }
        out
    }

    pub fn posterior(&self, maneuver: usize, location: usize, z_speed: f64, z_volume: f64) -> [f64; NUM_CLASSES] {
        let mut l = self.score(maneuver, location, z_speed, z_volume);
        for (v, b) in l.iter_mut().zip(self.intercepts) {
            *v += b;
        }
        softmax3(l)
    }
}

fn softmax3(l: [f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = l.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Fixed reference sample of the two standardized traffic inputs, used for
/// intercept calibration and the Bayes ceiling.
fn traffic_reference(n: usize) -> Vec<(f64, f64)> {
    let speed = TruncatedNormal::fit(numeric_target("Hourly_avg_speed").expect("known"));
    let volume = TruncatedNormal::fit(numeric_target("Hourly_volume").expect("known"));
    let (ts, tv) = (
        numeric_target("Hourly_avg_speed").unwrap(),
        numeric_target("Hourly_volume").unwrap(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_7a11);
    (0..n)
        .map(|_| {
            let s = (speed.sample(&mut rng) - ts.mean) / ts.std;
            let v = (volume.sample(&mut rng) - tv.mean) / tv.std;
            (s, v)
        })
        .collect()
}

const REFERENCE_SIZE: usize = 4096;

/// Expected joint distribution of (true class, predicted class) under the
/// planted mechanism, with `predict` mapping a posterior to a class.
fn expected_confusion(mech: &PlantedMechanism, reference: &[(f64, f64)]) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
    let pm = category_probabilities("Veh1_maneuver").unwrap();
    let pl = category_probabilities("Crash_location").unwrap();
    let w = 1.0 / reference.len() as f64;
    let mut conf = [[0.0; NUM_CLASSES]; NUM_CLASSES];
    for (m, &p_m) in pm.iter().enumerate() {
        for (l, &p_l) in pl.iter().enumerate() {
            for &(zs, zv) in reference {
                let post = mech.posterior(m, l, zs, zv);
                let pred = argmax(&post);
                for (t, &pt) in post.iter().enumerate() {
                    conf[t][pred] += p_m * p_l * w * pt;
                }
            }
        }
    }
    conf
}

fn calibrate(mech: &mut PlantedMechanism, mix: &[f64; NUM_CLASSES], reference: &[(f64, f64)]) {
    let pm = category_probabilities("Veh1_maneuver").unwrap();
    let pl = category_probabilities("Crash_location").unwrap();
    mech.intercepts = mix.map(f64::ln);
    let w = 1.0 / reference.len() as f64;
    for _ in 0..200 {
        let mut marg = [0.0; NUM_CLASSES];
        for (m, &p_m) in pm.iter().enumerate() {
            for (l, &p_l) in pl.iter().enumerate() {
                for &(zs, zv) in reference {
                    let post = mech.posterior(m, l, zs, zv);
                    for c in 0..NUM_CLASSES {
                        marg[c] += p_m * p_l * w * post[c];
                    }
                }
            }
        }
        let mut worst: f64 = 0.0;
        for c in 0..NUM_CLASSES {
            worst = worst.max((marg[c] - mix[c]).abs());
            mech.intercepts[c] += (mix[c] / marg[c]).ln();
        }
        let b0 = mech.intercepts[0];
        for b in mech.intercepts.iter_mut() {
            *b -= b0;
        }
        if worst < 1e-10 {
            break;
        }
    }
}

/// Best achievable performance on data drawn from the mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesCeiling {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub per_class_f1: [f64; NUM_CLASSES],
    /// Expected confusion proportions, rows true class, columns predicted.
    pub confusion: [[f64; NUM_CLASSES]; NUM_CLASSES],
}

impl BayesCeiling {
    fn from_confusion(conf: [[f64; NUM_CLASSES]; NUM_CLASSES]) -> BayesCeiling {
        let support: Vec<f64> = conf.iter().map(|r| r.iter().sum()).collect();
        let total: f64 = support.iter().sum();
        let mut per_class_f1 = [0.0; NUM_CLASSES];
        let mut weighted_f1 = 0.0;
        for c in 0..NUM_CLASSES {
            let predicted: f64 = conf.iter().map(|r| r[c]).sum();
            let p = if predicted > 0.0 { conf[c][c] / predicted } else { 0.0 };
            let r = if support[c] > 0.0 { conf[c][c] / support[c] } else { 0.0 };
            per_class_f1[c] = crate::train::metrics::harmonic(p, r);
            weighted_f1 += per_class_f1[c] * support[c] / total;
        }
        BayesCeiling {
            accuracy: (0..NUM_CLASSES).map(|c| conf[c][c]).sum::<f64>() / total,
            weighted_f1,
            per_class_f1,
            confusion: conf,
        }
    }
}

/// Mechanism with intercepts calibrated to `config.class_mix`.
pub fn planted_mechanism(config: &GeneratorConfig) -> PlantedMechanism {
    let reference = traffic_reference(REFERENCE_SIZE);
    let mut mech = PlantedMechanism::weights(config.signal_strength);
    calibrate(&mut mech, &config.class_mix, &reference);
    mech
}

pub fn bayes_ceiling(mech: &PlantedMechanism) -> BayesCeiling {
    BayesCeiling::from_confusion(expected_confusion(mech, &traffic_reference(REFERENCE_SIZE)))
}

/// Bayes-rule class for each row of `data`, from its raw feature values.
/// Missing traffic values are replaced by the target mean.
pub fn bayes_predict(mech: &PlantedMechanism, data: &Dataset) -> Result<Vec<usize>> {
    let cat = |name: &str| -> Result<&Vec<Option<usize>>> {
        match data.column(name) {
            Some(Column::Categorical(v)) => Ok(v),
            _ => Err(FgttError::Contract(format!("dataset lacks categorical {name}"))),
        }
    };
    let num = |name: &str| -> Result<&Vec<Option<f64>>> {
        match data.column(name) {
            Some(Column::Numeric(v)) => Ok(v),
            _ => Err(FgttError::Contract(format!("dataset lacks numeric {name}"))),
        }
    };
    let (man, loc) = (cat("Veh1_maneuver")?, cat("Crash_location")?);
    let (spd, vol) = (num("Hourly_avg_speed")?, num("Hourly_volume")?);
    let (ts, tv) = (
        numeric_target("Hourly_avg_speed").unwrap(),
        numeric_target("Hourly_volume").unwrap(),
    );
    (0..data.n_rows())
        .map(|r| {
            let m = man[r].ok_or_else(|| FgttError::Contract("missing Veh1_maneuver".into()))?;
            let l = loc[r].ok_or_else(|| FgttError::Contract("missing Crash_location".into()))?;
            let zs = (spd[r].unwrap_or(ts.mean) - ts.mean) / ts.std;
            let zv = (vol[r].unwrap_or(tv.mean) - tv.mean) / tv.std;
            Ok(argmax(&mech.posterior(m, l, zs, zv)))
        })
        .collect()
}

/// Sidecar written next to generated data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorManifest {
    pub synthetic: bool,
    pub config: GeneratorConfig,
    pub mechanism: PlantedMechanism,
    pub bayes_ceiling: BayesCeiling,
}

impl GeneratorManifest {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

fn day_key(day: usize) -> String {
    const MONTHS: [usize; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    let (mut m, mut d) = (0, day);
    while d >= MONTHS[m] {
        d -= MONTHS[m];
        m += 1;
    }
    format!("2021-{:02}-{:02}", m + 1, d + 1)
}

fn draw_category<R: Rng>(rng: &mut R, cdf: &[f64]) -> usize {
    let u: f64 = rng.random();
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

/// Generates `config.n_rows` records under the default crash schema.
pub fn generate(config: &GeneratorConfig, schema: &FeatureSchema) -> Result<(Dataset, GeneratorManifest)> {
    config.validate()?;
    if schema.fingerprint() != FeatureSchema::crash_default().fingerprint() {
        return Err(FgttError::Config(
            "the generator only supports the default crash schema".into(),
        ));
    }
    let mech = planted_mechanism(config);
    let ceiling = bayes_ceiling(&mech);

    enum Sampler {
        Num(TruncatedNormal, bool),
        Cat(Vec<f64>),
    }
    let samplers: Vec<Sampler> = schema
        .features
        .iter()
        .map(|f| {
            if f.is_numeric() {
                let maskable = f.name == "Precip_accum" || f.name == "Hourly_avg_speed";
                Sampler::Num(
                    TruncatedNormal::fit(numeric_target(&f.name).expect("default schema")),
                    maskable,
                )
            } else {
                let p = category_probabilities(&f.name).expect("default schema");
                let mut acc = 0.0;
                Sampler::Cat(
                    p.iter()
                        .map(|v| {
                            acc += v;
                            acc
                        })
                        .collect(),
                )
            }
        })
        .collect();

    let idx = |n: &str| schema.feature_index(n).expect("default schema");
    let (i_man, i_loc, i_spd, i_vol) = (
        idx("Veh1_maneuver"),
        idx("Crash_location"),
        idx("Hourly_avg_speed"),
        idx("Hourly_volume"),
    );
    let (ts, tv) = (
        numeric_target("Hourly_avg_speed").unwrap(),
        numeric_target("Hourly_volume").unwrap(),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_rows;
    let mut columns: Vec<Column> = samplers
        .iter()
        .map(|s| match s {
            Sampler::Num(..) => Column::Numeric(Vec::with_capacity(n)),
            Sampler::Cat(_) => Column::Categorical(Vec::with_capacity(n)),
        })
        .collect();
    let mut dates = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut raw = vec![0.0; samplers.len()];
    let mut cats = vec![0usize; samplers.len()];
    for _ in 0..n {
        for (j, s) in samplers.iter().enumerate() {
            match s {
                Sampler::Num(d, _) => raw[j] = d.sample(&mut rng),
                Sampler::Cat(cdf) => cats[j] = draw_category(&mut rng, cdf),
            }
        }
        dates.push(day_key(rng.random_range(0..365)));
        let post = mech.posterior(
            cats[i_man],
            cats[i_loc],
            (raw[i_spd] - ts.mean) / ts.std,
            (raw[i_vol] - tv.mean) / tv.std,
        );
        let u: f64 = rng.random();
        let label = if u < post[0] {
            0
        } else if u < post[0] + post[1] {
            1
        } else {
            2
        };
        labels.push(label);
        for (j, (s, col)) in samplers.iter().zip(columns.iter_mut()).enumerate() {
            match (s, col) {
                (Sampler::Num(_, maskable), Column::Numeric(v)) => {
                    let masked = *maskable && config.missing_rate > 0.0 && rng.random::<f64>() < config.missing_rate;
                    v.push(if masked { None } else { Some(raw[j]) });
                }
                (Sampler::Cat(_), Column::Categorical(v)) => v.push(Some(cats[j])),
                _ => unreachable!(),
            }
        }
    }
    let data = Dataset::new(schema.clone(), columns, vec![dates], labels)?;
    let manifest = GeneratorManifest {
        synthetic: true,
        config: config.clone(),
        mechanism: mech,
        bayes_ceiling: ceiling,
    };
    Ok((data, manifest))
}

/// One line of a marginal summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginalRow {
    pub feature: String,
    pub kind: &'static str,
    /// `mean`, `std`, `min`, `max`, `missing`, or a category name.
    pub statistic: String,
    pub value: f64,
}

/// Numeric features: mean/std/min/max over observed cells plus the missing
/// fraction. Categorical features: frequency of every declared category,
/// including never-sampled ones. The label is reported as `Crash_type`.
pub fn marginal_report(data: &Dataset) -> Result<Vec<MarginalRow>> {
    if data.n_rows() == 0 {
        return Err(FgttError::Contract("marginal report needs a nonempty dataset".into()));
    }
    let n = data.n_rows() as f64;
    let mut rows = Vec::new();
    let mut push = |feature: &str, kind, statistic: &str, value| {
        rows.push(MarginalRow {
            feature: feature.to_string(),
            kind,
            statistic: statistic.to_string(),
            value,
        })
    };
    for (spec, col) in data.schema().features.iter().zip(data.columns()) {
        match col {
            Column::Numeric(v) => {
                let xs: Vec<f64> = v.iter().flatten().copied().collect();
                let k = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / k;
                let std = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / k).sqrt();
                let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                push(&spec.name, "numeric", "mean", mean);
                push(&spec.name, "numeric", "std", std);
                push(&spec.name, "numeric", "min", min);
                push(&spec.name, "numeric", "max", max);
                push(&spec.name, "numeric", "missing", (n - k) / n);
            }
            Column::Categorical(v) => {
                let mut counts = vec![0usize; spec.categories.len()];
                for c in v.iter().flatten() {
                    counts[*c] += 1;
                }
                for (cat, k) in spec.categories.iter().zip(counts) {
                    push(&spec.name, "categorical", cat, k as f64 / n);
                }
            }
        }
    }
    let mut counts = [0usize; NUM_CLASSES];
    for &l in data.labels() {
        counts[l] += 1;
    }
    let label = data.schema().label.clone();
    for (c, k) in CrashType::ALL.iter().zip(counts) {
        push(&label, "label", c.name(), k as f64 / n);
    }
    Ok(rows)
}

pub fn write_marginal_report<W: Write>(rows: &[MarginalRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "kind", "statistic", "value"])?;
    for r in rows {
        w.write_record([
            r.feature.as_str(),
            r.kind,
            r.statistic.as_str(),
            &format!("{:.6}", r.value),
        ])?;
    }
    w.flush().map_err(|e| FgttError::io("<csv output>", e))?;
    Ok(())
}

/// Realized metrics of the Bayes rule on a concrete dataset.
pub fn bayes_metrics(mech: &PlantedMechanism, data: &Dataset) -> Result<Metrics> {
    crate::train::metrics::compute_metrics(&bayes_predict(mech, data)?, data.labels())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            n_rows: n,
            seed,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn truncated_fits_match_targets() {
        for t in &NUMERIC_TARGETS {
            let d = TruncatedNormal::fit(t);
            let (m, s) = d.mean_std();
            let range = t.max - t.min;
            assert!((m - t.mean).abs() < 1e-6 * range, "{} mean {m}", t.name);
            assert!(s <= t.std * (1.0 + 1e-6), "{} std {s}", t.name);
        }
        let vol = TruncatedNormal::fit(numeric_target("Hourly_volume").unwrap());
        let (_, s) = vol.mean_std();
        assert!((s - 2884.0).abs() < 1e-3);
    }

    #[test]
    fn truncated_moments_against_quadrature() {
        let d = TruncatedNormal {
            mu: 1.0,
            sigma: 2.0,
            lo: 0.0,
            hi: 3.0,
        };
        let n = Normal::new(1.0, 2.0).unwrap();
        let steps = 200_000;
        let h = 3.0 / steps as f64;
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..steps {
            let x = (i as f64 + 0.5) * h;
            let p = n.pdf(x) * h;
            z += p;
            m1 += x * p;
            m2 += x * x * p;
        }
        let mean = m1 / z;
        let std = (m2 / z - mean * mean).sqrt();
        let (em, es) = d.mean_std();
        assert!((em - mean).abs() < 1e-8);
        assert!((es - std).abs() < 1e-8);
    }

    #[test]
    fn invalid_configs() {
        let mut c = GeneratorConfig::default();
        c.class_mix = [0.5, 0.3, 0.3];
        assert!(c.validate().is_err());
        c = GeneratorConfig::default();
        c.missing_rate = 1.0;
        assert!(c.validate().is_err());
        c = GeneratorConfig::default();
        c.signal_strength = -1.0;
        assert!(c.validate().is_err());
        c = GeneratorConfig::default();
        c.n_rows = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn deterministic() {
        let s = FeatureSchema::crash_default();
        let (a, _) = generate(&cfg(300, 9), &s).unwrap();
        let (b, _) = generate(&cfg(300, 9), &s).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        let (c, _) = generate(&cfg(300, 10), &s).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn calibrated_intercepts_hit_mix() {
        let mech = planted_mechanism(&GeneratorConfig::default());
        let ceiling = bayes_ceiling(&mech);
        let support: Vec<f64> = ceiling.confusion.iter().map(|r| r.iter().sum()).collect();
        for (s, t) in support.iter().zip([0.58, 0.29, 0.13]) {
            assert!((s - t).abs() < 1e-8, "{support:?}");
        }
    }

    #[test]
    fn default_ceiling_clears_target() {
        let mech = planted_mechanism(&GeneratorConfig::default());
        let c = bayes_ceiling(&mech);
        assert!(c.weighted_f1 >= 0.80, "{c:?}");
    }

    #[test]
    fn zero_signal_gives_constant_posterior() {
        let mut c = GeneratorConfig::default();
        c.signal_strength = 0.0;
        let mech = planted_mechanism(&c);
        let p = mech.posterior(3, 1, 2.0, -1.0);
        for (a, b) in p.iter().zip([0.58, 0.29, 0.13]) {
            assert!((a - b).abs() < 1e-12);
        }
        let ceiling = bayes_ceiling(&mech);
        assert!((ceiling.accuracy - 0.58).abs() < 1e-9);
    }

    #[test]
    fn missingness_only_on_two_features() {
        let mut c = cfg(2000, 3);
        c.missing_rate = 0.2;
        let (d, _) = generate(&c, &FeatureSchema::crash_default()).unwrap();
        for (spec, col) in d.schema().features.iter().zip(d.columns()) {
            let missing = match col {
                Column::Numeric(v) => v.iter().filter(|x| x.is_none()).count(),
                Column::Categorical(v) => v.iter().filter(|x| x.is_none()).count(),
            };
            if spec.name == "Precip_accum" || spec.name == "Hourly_avg_speed" {
                assert!((300..500).contains(&missing), "{} {missing}", spec.name);
            } else {
                assert_eq!(missing, 0, "{}", spec.name);
            }
        }
    }

    #[test]
    fn report_lists_unsampled_categories_and_constant_std() {
        let (d, _) = generate(&cfg(20, 1), &FeatureSchema::crash_default()).unwrap();
        let rows = marginal_report(&d).unwrap();
        let entry = rows
            .iter()
            .find(|r| r.feature == "Veh1_maneuver" && r.statistic == "Entering/Leaving Parking/Driveway")
            .unwrap();
        assert!(entry.value >= 0.0);
        let per_feature = rows.iter().filter(|r| r.feature == "Area_type").count();
        assert_eq!(per_feature, 2);

        let small = d.subset(&[0]);
        let rows = marginal_report(&small).unwrap();
        let std = rows
            .iter()
            .find(|r| r.feature == "Gust" && r.statistic == "std")
            .unwrap();
        assert_eq!(std.value, 0.0);
    }

    #[test]
    fn day_keys() {
        assert_eq!(day_key(0), "2021-01-01");
        assert_eq!(day_key(31), "2021-02-01");
        assert_eq!(day_key(364), "2021-12-31");
    }
}
