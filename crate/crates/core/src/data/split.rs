use std::collections::VecDeque;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{FgttError, Result};

/// Disjoint train / validation / test row indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }

    /// Three-column index file: `train,validation,test`, shorter columns
    /// padded with empty cells.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["train", "validation", "test"])?;
        let n = self.train.len().max(self.validation.len()).max(self.test.len());
        let cell = |v: &[usize], i: usize| v.get(i).map(|x| x.to_string()).unwrap_or_default();
        for i in 0..n {
            w.write_record([cell(&self.train, i), cell(&self.validation, i), cell(&self.test, i)])?;
        }
        w.flush().map_err(|e| FgttError::io("<csv output>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["train", "validation", "test"] {
            return Err(FgttError::Header(
                "split file must have columns train,validation,test".into(),
            ));
        }
        let mut parts: [Vec<usize>; 3] = Default::default();
        for record in rdr.records() {
            let record = record?;
            for (j, part) in parts.iter_mut().enumerate() {
                let cell = record.get(j).unwrap_or("").trim();
                if !cell.is_empty() {
                    part.push(
                        cell.parse()
                            .map_err(|_| FgttError::Contract(format!("bad index {cell:?} in split file")))?,
                    );
                }
            }
        }
        let [train, validation, test] = parts;
        Ok(SplitIndices {
            train,
            validation,
            test,
        })
    }
}

#[derive(Clone, Copy, Debug)]
enum Totals {
    /// Parts after the first are rounded half-up; the first takes the rest.
    HeldOutRounded,
    LargestRemainder,
}

fn normalize_ratios(ratios: &[f64]) -> Result<Vec<f64>> {
    if ratios.is_empty() || ratios.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(FgttError::Param(format!(
            "split ratios must be positive, got {ratios:?}"
        )));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(FgttError::Param(format!("split ratios must sum to 1, got {sum}")));
    }
    Ok(ratios.iter().map(|r| r / sum).collect())
}

fn part_totals(n: usize, ratios: &[f64], rule: Totals) -> Vec<usize> {
    const EPS: f64 = 1e-9;
    match rule {
        Totals::HeldOutRounded => {
            let mut totals = vec![0usize; ratios.len()];
            for (t, r) in totals.iter_mut().zip(ratios).skip(1) {
                *t = (n as f64 * r + 0.5 - EPS).floor() as usize;
            }
            let held: usize = totals.iter().sum();
            totals[0] = n.saturating_sub(held);
            totals
        }
        Totals::LargestRemainder => largest_remainder(n, ratios),
    }
}

/// Apportions `n` by `ratios`: floors first, then one extra unit to the
/// largest fractional parts (earlier parts win ties).
pub fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| n as f64 * r).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = n - out.iter().sum::<usize>().min(n);
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// Per-class, per-part counts: every cell is the floor or ceiling of its
/// exact proportional share, row sums equal class sizes and column sums equal
/// `totals`. Extra units go to the largest fractional shares first; an
/// augmenting-path pass completes the assignment when the greedy pass stalls.
fn allocate_cells(class_counts: &[usize], ratios: &[f64], totals: &[usize]) -> Result<Vec<Vec<usize>>> {
    let k = class_counts.len();
    let p = ratios.len();
    let exact: Vec<Vec<f64>> = class_counts
        .iter()
        .map(|&n| ratios.iter().map(|r| n as f64 * r).collect())
        .collect();
    let mut cells: Vec<Vec<usize>> = exact
        .iter()
        .map(|row| row.iter().map(|e| (e + 1e-9).floor() as usize).collect())
        .collect();
    let mut class_need: Vec<isize> = (0..k)
        .map(|c| class_counts[c] as isize - cells[c].iter().sum::<usize>() as isize)
        .collect();
    let mut part_need: Vec<isize> = (0..p)
        .map(|s| totals[s] as isize - (0..k).map(|c| cells[c][s]).sum::<usize>() as isize)
        .collect();
    if part_need.iter().any(|&x| x < 0) || class_need.iter().sum::<isize>() != part_need.iter().sum::<isize>() {
        return Err(FgttError::Stratification(format!(
            "part sizes {totals:?} are incompatible with class sizes {class_counts:?}"
        )));
    }
    let mut extra = vec![vec![false; p]; k];
    let mut order: Vec<(usize, usize)> = (0..k).flat_map(|c| (0..p).map(move |s| (c, s))).collect();
    let frac = |c: usize, s: usize| exact[c][s] - cells[c][s] as f64;
    let fracs: Vec<Vec<f64>> = (0..k).map(|c| (0..p).map(|s| frac(c, s)).collect()).collect();
    order.sort_by(|a, b| fracs[b.0][b.1].partial_cmp(&fracs[a.0][a.1]).unwrap().then(a.cmp(b)));
    for &(c, s) in &order {
        if class_need[c] > 0 && part_need[s] > 0 && class_counts[c] > 0 {
            extra[c][s] = true;
            class_need[c] -= 1;
            part_need[s] -= 1;
        }
    }
    // augmenting paths: class -(add)-> part -(remove)-> class -(add)-> part ...
    while let Some(start) = (0..k).find(|&c| class_need[c] > 0) {
        let mut prev_part: Vec<Option<usize>> = vec![None; p]; // class that reached the part
        let mut prev_class: Vec<Option<usize>> = vec![None; k]; // part that reached the class
        let mut seen_class = vec![false; k];
        seen_class[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut end = None;
        'bfs: while let Some(c) = queue.pop_front() {
            for s in 0..p {
                if extra[c][s] || prev_part[s].is_some() {
                    continue;
                }
                prev_part[s] = Some(c);
                if part_need[s] > 0 {
                    end = Some(s);
                    break 'bfs;
                }
                for c2 in 0..k {
                    if extra[c2][s] && !seen_class[c2] {
                        seen_class[c2] = true;
                        prev_class[c2] = Some(s);
                        queue.push_back(c2);
                    }
                }
            }
        }
        let Some(mut s) = end else {
            return Err(FgttError::Stratification(format!(
                "cannot stratify class sizes {class_counts:?} into parts {totals:?}"
            )));
        };
        part_need[s] -= 1;
        loop {
            let c = prev_part[s].expect("path");
            extra[c][s] = true;
            match prev_class[c] {
                Some(s_prev) => {
                    extra[c][s_prev] = false;
                    s = s_prev;
                }
                None => {
                    class_need[c] -= 1;
                    break;
                }
            }
        }
    }
    for c in 0..k {
        for s in 0..p {
            cells[c][s] += extra[c][s] as usize;
        }
    }
    Ok(cells)
}

fn stratified_parts(labels: &[usize], ratios: &[f64], seed: u64, rule: Totals) -> Result<Vec<Vec<usize>>> {
    let ratios = normalize_ratios(ratios)?;
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    for (c, rows) in by_class.iter().enumerate() {
        if !rows.is_empty() && rows.len() < ratios.len() {
            return Err(FgttError::Stratification(format!(
                "class {c} has {} rows, fewer than the {} parts",
                rows.len(),
                ratios.len()
            )));
        }
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let totals = part_totals(labels.len(), &ratios, rule);
    let cells = allocate_cells(&counts, &ratios, &totals)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); ratios.len()];
    for (c, rows) in by_class.iter_mut().enumerate() {
        rows.shuffle(&mut rng);
        let mut start = 0;
        for (s, part) in parts.iter_mut().enumerate() {
            part.extend_from_slice(&rows[start..start + cells[c][s]]);
            start += cells[c][s];
        }
    }
    for part in &mut parts {
        part.sort_unstable();
    }
    Ok(parts)
}

/// Stratified three-way split with per-class counts within one row of exact
/// proportionality. Validation and test sizes are `n·ratio` rounded half-up;
/// training takes the remainder.
pub fn stratified_split(labels: &[usize], ratios: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    let mut parts = stratified_parts(labels, &[ratios.0, ratios.1, ratios.2], seed, Totals::HeldOutRounded)?;
    let test = parts.pop().expect("three parts");
    let validation = parts.pop().expect("three parts");
    let train = parts.pop().expect("three parts");
    Ok(SplitIndices {
        train,
        validation,
        test,
    })
}

/// `k` stratified folds of near-equal size (largest-remainder sizing).
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(FgttError::Param(format!("need at least 2 folds, got {k}")));
    }
    stratified_parts(labels, &vec![1.0 / k as f64; k], seed, Totals::LargestRemainder)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels_with_counts(counts: &[usize]) -> Vec<usize> {
        // interleaved so class membership is not a contiguous block
        let mut out = Vec::new();
        let mut left = counts.to_vec();
        while left.iter().any(|&x| x > 0) {
            for (c, l) in left.iter_mut().enumerate() {
                if *l > 0 {
                    out.push(c);
                    *l -= 1;
                }
            }
        }
        out
    }

    fn class_count(labels: &[usize], idx: &[usize], c: usize) -> usize {
        idx.iter().filter(|&&i| labels[i] == c).count()
    }

    #[test]
    fn ten_rows_two_classes() {
        let labels = labels_with_counts(&[5, 5]);
        let s = stratified_split(&labels, (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!(s.sizes(), (8, 1, 1));
        for c in 0..2 {
            assert_eq!(class_count(&labels, &s.train, c), 4);
        }
    }

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(6810, &[0.58, 0.29, 0.13]), [3950, 1975, 885]);
        assert_eq!(largest_remainder(10, &[1.0 / 3.0; 3]), [4, 3, 3]);
    }

    #[test]
    fn bad_ratios_rejected() {
        let labels = labels_with_counts(&[5, 5]);
        assert!(stratified_split(&labels, (0.8, 0.1, 0.2), 0).is_err());
        assert!(stratified_split(&labels, (1.0, 0.0, 0.0), 0).is_err());
    }

    #[test]
    fn tiny_class_is_a_stratification_error() {
        let labels = labels_with_counts(&[10, 2]);
        assert!(matches!(
            stratified_split(&labels, (0.8, 0.1, 0.1), 0),
            Err(FgttError::Stratification(_))
        ));
    }

    #[test]
    fn kfold_bounds_on_small_set() {
        let labels = labels_with_counts(&[58, 29, 13]);
        let folds = stratified_kfold(&labels, 5, 3).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        for f in &folds {
            for (c, n) in [58usize, 29, 13].iter().enumerate() {
                let exact = *n as f64 / 5.0;
                assert!((class_count(&labels, f, c) as f64 - exact).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn index_file_round_trip() {
        let labels = labels_with_counts(&[30, 20, 10]);
        let s = stratified_split(&labels, (0.7, 0.2, 0.1), 9).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"train,validation,test\n"));
        assert_eq!(SplitIndices::read_csv(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn allocation_needs_augmenting_paths() {
        // greedy by fraction alone would stall on some of these
        for counts in [[7usize, 3, 1], [1, 1, 1], [2, 9, 4], [13, 13, 1]] {
            let labels = labels_with_counts(&counts);
            let n = labels.len();
            if counts.iter().any(|&c| c < 3) {
                continue;
            }
            let s = stratified_split(&labels, (0.5, 0.3, 0.2), 0).unwrap();
            let (a, b, c) = s.sizes();
            assert_eq!(a + b + c, n);
        }
        let cells = allocate_cells(&[3, 3, 3], &[1.0 / 3.0; 3], &[3, 3, 3]).unwrap();
        assert_eq!(cells, vec![vec![1, 1, 1]; 3]);
        let cells = allocate_cells(&[2, 2], &[0.5, 0.5], &[1, 3]);
        assert!(cells.is_err());
    }
}
