use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FgttError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DimKind {
    Continuous {
        lo: f64,
        hi: f64,
        #[serde(default)]
        log: bool,
    },
    Categorical {
        options: Vec<String>,
    },
    /// Ordered numeric options; the kernel sees the option rank.
    Ordinal {
        options: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dim {
    pub name: String,
    #[serde(flatten)]
    pub kind: DimKind,
}

impl Dim {
    pub fn continuous(name: &str, lo: f64, hi: f64, log: bool) -> Self {
        Dim {
            name: name.into(),
            kind: DimKind::Continuous { lo, hi, log },
        }
    }

    pub fn categorical(name: &str, options: &[&str]) -> Self {
        Dim {
            name: name.into(),
            kind: DimKind::Categorical {
                options: options.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    pub fn ordinal(name: &str, options: &[f64]) -> Self {
        Dim {
            name: name.into(),
            kind: DimKind::Ordinal {
                options: options.to_vec(),
            },
        }
    }

    /// Maps u in [0, 1) to a value of this dimension.
    fn from_unit(&self, u: f64) -> Value {
        match &self.kind {
            DimKind::Continuous { lo, hi, log } => {
                let v = if *log {
                    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + u * (hi - lo)
                };
                Value::Real(v.clamp(*lo, *hi))
            }
            DimKind::Categorical { options } => {
                Value::Choice(((u * options.len() as f64) as usize).min(options.len() - 1))
            }
            DimKind::Ordinal { options } => Value::Choice(((u * options.len() as f64) as usize).min(options.len() - 1)),
        }
    }

    fn n_options(&self) -> Option<usize> {
        match &self.kind {
            DimKind::Continuous { .. } => None,
            DimKind::Categorical { options } => Some(options.len()),
            DimKind::Ordinal { options } => Some(options.len()),
        }
    }

    fn contains(&self, v: &Value) -> bool {
        match (&self.kind, v) {
            (DimKind::Continuous { lo, hi, .. }, Value::Real(x)) => *x >= *lo && *x <= *hi,
            (_, Value::Choice(i)) => self.n_options().is_some_and(|n| *i < n),
            _ => false,
        }
    }

    /// Text form used in trial histories.
    pub fn format(&self, v: &Value) -> String {
        match (&self.kind, v) {
            (DimKind::Continuous { .. }, Value::Real(x)) => x.to_string(),
            (DimKind::Categorical { options }, Value::Choice(i)) => options[*i].clone(),
            (DimKind::Ordinal { options }, Value::Choice(i)) => options[*i].to_string(),
            _ => String::from("?"),
        }
    }

    pub fn parse(&self, s: &str) -> Result<Value> {
        let bad = || FgttError::Param(format!("{:?} is not a value of {}", s, self.name));
        let v = match &self.kind {
            DimKind::Continuous { .. } => Value::Real(s.parse().map_err(|_| bad())?),
            DimKind::Categorical { options } => Value::Choice(options.iter().position(|o| o == s).ok_or_else(bad)?),
            DimKind::Ordinal { options } => {
                let x: f64 = s.parse().map_err(|_| bad())?;
                Value::Choice(options.iter().position(|o| *o == x).ok_or_else(bad)?)
            }
        };
        if !self.contains(&v) {
            return Err(bad());
        }
        Ok(v)
    }
}

/// A coordinate of a point: a real for continuous dimensions, an option
/// index otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Real(f64),
    Choice(usize),
}

pub type Point = Vec<Value>;

/// `numerator`'s value must be a multiple of `denominator`'s value. Both
/// must name ordinal dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divisible {
    pub numerator: String,
    pub denominator: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<Dim>,
    #[serde(default)]
    pub constraints: Vec<Divisible>,
}

/// Rejection sampling gives up after this many draws.
const MAX_DRAWS: usize = 10_000;

impl SearchSpace {
    pub fn new(dims: Vec<Dim>, constraints: Vec<Divisible>) -> Result<Self> {
        let s = SearchSpace { dims, constraints };
        s.validate()?;
        Ok(s)
    }

    /// The FGTT tuning ranges. Hidden width must divide evenly by the
    /// head count.
    pub fn fgtt_default() -> Self {
        SearchSpace {
            dims: vec![
                Dim::continuous("learning_rate", 0.001, 0.1, true),
                Dim::categorical("optimizer", &["adam", "sgd", "rmsprop"]),
                Dim::ordinal("ffn_dim", &[16.0, 24.0, 32.0, 64.0]),
                Dim::ordinal("hidden_dim", &[16.0, 24.0, 32.0, 64.0]),
                Dim::ordinal("dropout_rate", &[0.1, 0.2, 0.3, 0.4]),
                Dim::ordinal("n_heads", &[2.0, 3.0, 4.0, 6.0]),
                Dim::ordinal("n_layers", &[2.0, 3.0, 4.0, 5.0, 6.0]),
            ],
            constraints: vec![Divisible {
                numerator: "hidden_dim".into(),
                denominator: "n_heads".into(),
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(FgttError::Param("search space has no dimensions".into()));
        }
        for (i, d) in self.dims.iter().enumerate() {
            if self.dims[..i].iter().any(|e| e.name == d.name) {
                return Err(FgttError::Param(format!("duplicate dimension {}", d.name)));
            }
            match &d.kind {
                DimKind::Continuous { lo, hi, log } => {
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) || (*log && *lo <= 0.0) {
                        return Err(FgttError::Param(format!("bad range for {}", d.name)));
                    }
                }
                DimKind::Categorical { options } if options.is_empty() => {
                    return Err(FgttError::Param(format!("{} has no options", d.name)));
                }
                DimKind::Ordinal { options } if options.is_empty() || options.windows(2).any(|w| !(w[0] < w[1])) => {
                    return Err(FgttError::Param(format!("{} needs increasing options", d.name)));
                }
                _ => {}
            }
        }
        for c in &self.constraints {
            for name in [&c.numerator, &c.denominator] {
                match self.index(name).map(|i| &self.dims[i].kind) {
                    Some(DimKind::Ordinal { .. }) => {}
                    _ => {
                        return Err(FgttError::Param(format!(
                            "constraint names {name}, not an ordinal dimension"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    /// Numeric value of an ordinal or continuous coordinate.
    pub fn numeric(&self, point: &[Value], name: &str) -> Option<f64> {
        let i = self.index(name)?;
        match (&self.dims[i].kind, point.get(i)?) {
            (DimKind::Continuous { .. }, Value::Real(x)) => Some(*x),
            (DimKind::Ordinal { options }, Value::Choice(k)) => options.get(*k).copied(),
            _ => None,
        }
    }

    pub fn label(&self, point: &[Value], name: &str) -> Option<&str> {
        let i = self.index(name)?;
        match (&self.dims[i].kind, point.get(i)?) {
            (DimKind::Categorical { options }, Value::Choice(k)) => options.get(*k).map(|s| s.as_str()),
            _ => None,
        }
    }

    pub fn contains(&self, point: &[Value]) -> bool {
        point.len() == self.dims.len()
            && self.dims.iter().zip(point).all(|(d, v)| d.contains(v))
            && self.constraints.iter().all(|c| {
                match (self.numeric(point, &c.numerator), self.numeric(point, &c.denominator)) {
                    (Some(a), Some(b)) => b != 0.0 && (a / b).fract() == 0.0,
                    _ => false,
                }
            })
    }

    pub fn from_unit(&self, u: &[f64]) -> Point {
        self.dims.iter().zip(u).map(|(d, &x)| d.from_unit(x)).collect()
    }

    /// A uniformly drawn point satisfying the constraints.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Point> {
        for _ in 0..MAX_DRAWS {
            let u: Vec<f64> = (0..self.dims.len()).map(|_| rng.random::<f64>()).collect();
            let p = self.from_unit(&u);
            if self.contains(&p) {
                return Ok(p);
            }
        }
        Err(FgttError::Param("constraints reject every sampled point".into()))
    }

    /// Width of the kernel-space encoding.
    pub fn encoded_width(&self) -> usize {
        self.dims
            .iter()
            .map(|d| match &d.kind {
                DimKind::Categorical { options } => options.len(),
                _ => 1,
            })
            .sum()
    }

    /// Kernel-space coordinates: continuous dims scaled to [0, 1] (in log
    /// space when flagged), ordinals by rank, categoricals one-hot.
    pub fn encode(&self, point: &[Value]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.encoded_width());
        for (d, v) in self.dims.iter().zip(point) {
            match (&d.kind, v) {
                (DimKind::Continuous { lo, hi, log }, Value::Real(x)) => out.push(if *log {
                    (x.ln() - lo.ln()) / (hi.ln() - lo.ln())
                } else {
                    (x - lo) / (hi - lo)
                }),
                (DimKind::Categorical { options }, Value::Choice(k)) => {
                    out.extend((0..options.len()).map(|j| if j == *k { 1.0 } else { 0.0 }))
                }
                (DimKind::Ordinal { options }, Value::Choice(k)) => out.push(if options.len() > 1 {
                    *k as f64 / (options.len() - 1) as f64
                } else {
                    0.0
                }),
                _ => panic!("point does not match the search space"),
            }
        }
        out
    }

    pub fn format_point(&self, point: &[Value]) -> Vec<String> {
        self.dims.iter().zip(point).map(|(d, v)| d.format(v)).collect()
    }
}

const PRIMES: [u32; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let mut f = 1.0 / base as f64;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % b) as f64;
        i /= b;
        f /= base as f64;
    }
    r
}

/// `n` Halton points in `[0,1)^dims`, randomly shifted modulo 1.
pub fn shifted_halton<R: Rng + ?Sized>(n: usize, dims: usize, rng: &mut R) -> Vec<Vec<f64>> {
    assert!(dims <= PRIMES.len(), "at most {} dimensions", PRIMES.len());
    let shift: Vec<f64> = (0..dims).map(|_| rng.random::<f64>()).collect();
    (1..=n as u64)
        .map(|i| {
            (0..dims)
                .map(|d| (radical_inverse(i, PRIMES[d]) + shift[d]).fract())
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_space_samples_are_feasible() {
        let s = SearchSpace::fgtt_default();
        s.validate().unwrap();
        assert_eq!(s.encoded_width(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let p = s.sample(&mut rng).unwrap();
            assert!(s.contains(&p));
            let h = s.numeric(&p, "hidden_dim").unwrap();
            let k = s.numeric(&p, "n_heads").unwrap();
            assert_eq!(h % k, 0.0);
            let e = s.encode(&p);
            assert!(e.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn log_dimension_encodes_geometric_midpoint() {
        let s = SearchSpace::new(vec![Dim::continuous("lr", 0.001, 0.1, true)], vec![]).unwrap();
        let e = s.encode(&[Value::Real(0.01)]);
        assert!((e[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn format_parse_round_trip() {
        let s = SearchSpace::fgtt_default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = s.sample(&mut rng).unwrap();
        let text = s.format_point(&p);
        let back: Vec<Value> = s.dims.iter().zip(&text).map(|(d, t)| d.parse(t).unwrap()).collect();
        assert_eq!(back, p);
        assert!(s.dims[1].parse("lbfgs").is_err());
    }

    #[test]
    fn halton_first_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut zero = ChaCha8Rng::seed_from_u64(0);
        let shift: Vec<f64> = (0..2).map(|_| zero.random::<f64>()).collect();
        let pts = shifted_halton(3, 2, &mut rng);
        let raw = [[0.5, 1.0 / 3.0], [0.25, 2.0 / 3.0], [0.75, 1.0 / 9.0]];
        for (p, r) in pts.iter().zip(raw) {
            for d in 0..2 {
                assert!((p[d] - (r[d] + shift[d]).fract()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn bad_spaces_rejected() {
        assert!(SearchSpace::new(vec![Dim::continuous("a", 1.0, 1.0, false)], vec![]).is_err());
        assert!(SearchSpace::new(vec![Dim::continuous("a", 0.0, 1.0, true)], vec![]).is_err());
        assert!(SearchSpace::new(vec![Dim::ordinal("a", &[2.0, 1.0])], vec![]).is_err());
        let c = Divisible {
            numerator: "a".into(),
            denominator: "zz".into(),
        };
        assert!(SearchSpace::new(vec![Dim::ordinal("a", &[1.0])], vec![c]).is_err());
    }
}
