//! Two-group dose-response data.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance under which two doses are treated as the same level.
pub const DOSE_MERGE_RTOL: f64 = 1e-9;

/// Observations of one group, organised by dose level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    levels: Vec<f64>,
    obs: Vec<Vec<f64>>,
}

impl GroupSample {
    /// Builds a sample from per-level observations. Levels are sorted and near-equal doses merged.
    pub fn new(levels: Vec<f64>, obs: Vec<Vec<f64>>) -> Result<Self> {
        if levels.len() != obs.len() {
            return Err(Error::DegenerateDesign(format!(
                "{} levels but {} observation lists",
                levels.len(),
                obs.len()
            )));
        }
        let pairs = levels
            .into_iter()
            .zip(obs)
            .flat_map(|(x, ys)| ys.into_iter().map(move |y| (x, y)));
        Self::from_pairs(pairs)
    }

    /// Builds a sample from `(dose, response)` pairs.
    pub fn from_pairs<I: IntoIterator<Item = (f64, f64)>>(pairs: I) -> Result<Self> {
        let mut pairs: Vec<(f64, f64)> = pairs.into_iter().collect();
        if let Some((x, y)) = pairs.iter().find(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::DegenerateDesign(format!("non-finite observation ({x}, {y})")));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut levels: Vec<f64> = Vec::new();
        let mut obs: Vec<Vec<f64>> = Vec::new();
        for (x, y) in pairs {
            match levels.last() {
                Some(&last) if same_dose(last, x) => obs.last_mut().unwrap().push(y),
                _ => {
                    levels.push(x);
                    obs.push(vec![y]);
                }
            }
        }
        if levels.is_empty() {
            return Err(Error::DegenerateDesign("group has no observations".into()));
        }
        Ok(Self { levels, obs })
    }

    /// A sample with `per_level` copies of `values[i]` at `levels[i]`.
    pub fn replicated(levels: &[f64], per_level: usize, mut value: impl FnMut(f64) -> f64) -> Result<Self> {
        Self::from_pairs(
            levels
                .iter()
                .flat_map(|&x| std::iter::repeat_n(x, per_level))
                .map(|x| (x, value(x)))
                .collect::<Vec<_>>(),
        )
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn obs(&self) -> &[Vec<f64>] {
        &self.obs
    }

    /// Number of distinct dose levels.
    pub fn k(&self) -> usize {
        self.levels.len()
    }

    /// Total number of observations.
    pub fn n(&self) -> usize {
        self.obs.iter().map(Vec::len).sum()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.obs.iter().map(Vec::len).collect()
    }

    /// Allocation weights `n_i / n`.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.obs.iter().map(|o| o.len() as f64 / n).collect()
    }

    pub fn level_means(&self) -> Vec<f64> {
        self.obs.iter().map(|o| o.iter().sum::<f64>() / o.len() as f64).collect()
    }

    /// Sum of squared deviations from the level means, pooled over levels.
    pub fn within_ss(&self) -> f64 {
        self.obs
            .iter()
            .zip(self.level_means())
            .map(|(o, m)| o.iter().map(|y| (y - m) * (y - m)).sum::<f64>())
            .sum()
    }

    /// Same design with every observation replaced through `f(level_index, level, obs_index)`.
    pub fn with_responses(&self, mut f: impl FnMut(usize, f64, usize) -> f64) -> Self {
        let obs = self
            .obs
            .iter()
            .enumerate()
            .map(|(i, o)| (0..o.len()).map(|j| f(i, self.levels[i], j)).collect())
            .collect();
        Self { levels: self.levels.clone(), obs }
    }
}

fn same_dose(a: f64, b: f64) -> bool {
    (a - b).abs() <= DOSE_MERGE_RTOL * a.abs().max(b.abs())
}

/// Observations of both groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoGroupData {
    pub group1: GroupSample,
    pub group2: GroupSample,
}

impl TwoGroupData {
    pub fn new(group1: GroupSample, group2: GroupSample) -> Self {
        Self { group1, group2 }
    }

    pub fn group(&self, index: usize) -> &GroupSample {
        match index {
            0 => &self.group1,
            _ => &self.group2,
        }
    }

    /// Total sample size `n1 + n2`.
    pub fn n(&self) -> usize {
        self.group1.n() + self.group2.n()
    }

    pub fn kappa_hat(&self) -> Result<f64> {
        kappa_from_sizes(self.group1.n(), self.group2.n())
    }

    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    /// Parses `group,dose,response` rows; labels must be 1 or 2.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let column = |name: &str| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::Parse { row: 1, message: format!("missing column '{name}'") })
        };
        let (gc, dc, rc) = (column("group")?, column("dose")?, column("response")?);
        let mut pairs: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
        let mut last_row = 1;
        for record in rdr.records() {
            let record = record?;
            let row = record.position().map_or(last_row + 1, |p| p.line() as usize);
            last_row = row;
            let cell = |c: usize, name: &str| -> Result<&str> {
                record
                    .get(c)
                    .ok_or_else(|| Error::Parse { row, message: format!("missing '{name}' cell") })
            };
            let number = |c: usize, name: &str| -> Result<f64> {
                let s = cell(c, name)?;
                match s.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::Parse { row, message: format!("non-numeric {name} '{s}'") }),
                }
            };
            let label = cell(gc, "group")?;
            let g = match label {
                "1" => 0,
                "2" => 1,
                other => {
                    return Err(Error::Parse { row, message: format!("unknown group label {other}") })
                }
            };
            pairs[g].push((number(dc, "dose")?, number(rc, "response")?));
        }
        let [p1, p2] = pairs;
        for (label, p) in [(1, &p1), (2, &p2)] {
            if p.is_empty() {
                return Err(Error::Parse { row: last_row, message: format!("group {label} is empty") });
            }
        }
        Ok(Self::new(GroupSample::from_pairs(p1)?, GroupSample::from_pairs(p2)?))
    }

    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_csv_writer(file)
    }

    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["group", "dose", "response"])?;
        for (label, g) in [("1", &self.group1), ("2", &self.group2)] {
            for (x, ys) in g.levels.iter().zip(&g.obs) {
                for y in ys {
                    w.write_record([label, &x.to_string(), &y.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `n / n1`; requires both groups to be non-empty so that the ratio exceeds one.
pub fn kappa_from_sizes(n1: usize, n2: usize) -> Result<f64> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::DegenerateDesign(format!(
            "kappa needs both groups non-empty (n1 = {n1}, n2 = {n2})"
        )));
    }
    Ok((n1 + n2) as f64 / n1 as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(s: &str) -> Result<TwoGroupData> {
        TwoGroupData::from_csv_reader(s.as_bytes())
    }

    #[test]
    fn grouping_rows() {
        let d = parse("group,dose,response\n1,0,5.1\n1,0,4.9\n2,0,5.0\n").unwrap();
        assert_eq!(d.group1.levels(), &[0.0]);
        assert_eq!(d.group1.obs()[0], vec![5.1, 4.9]);
        assert_eq!(d.group2.counts(), vec![1]);
    }

    #[test]
    fn unknown_label_names_the_row() {
        let err = parse("group,dose,response\n1,0,1\n2,0,1\n3,1,2\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown group label 3"), "{msg}");
        assert!(msg.starts_with("row 4"), "{msg}");
    }

    #[test]
    fn malformed_inputs() {
        assert!(parse("group,dose\n1,0\n").unwrap_err().to_string().contains("missing column 'response'"));
        let e = parse("group,dose,response\n1,0,abc\n2,0,1\n").unwrap_err();
        assert!(e.to_string().contains("non-numeric response"));
        let e = parse("group,dose,response\n1,0,1\n1,1,2\n").unwrap_err();
        assert!(e.to_string().contains("group 2 is empty"));
        assert!(e.is_input_error());
    }

    #[test]
    fn five_level_design_counts() {
        let mut s = String::from("group,dose,response\n");
        for g in 1..=2 {
            for x in 0..5 {
                for j in 0..4 {
                    s.push_str(&format!("{g},{x},{}\n", 5.0 + j as f64 * 0.1));
                }
            }
        }
        let d = parse(&s).unwrap();
        assert_eq!((d.group1.n(), d.group2.n()), (20, 20));
        assert_eq!((d.group1.k(), d.group2.k()), (5, 5));
        assert_eq!(d.group1.weights(), vec![0.2; 5]);
        assert_eq!(d.kappa_hat().unwrap(), 2.0);
    }

    #[test]
    fn weights_examples() {
        let g = GroupSample::new(vec![1.0], vec![vec![0.0; 7]]).unwrap();
        assert_eq!(g.weights(), vec![1.0]);
        let g = GroupSample::new(vec![1.0, 0.0], vec![vec![0.0; 3], vec![1.0]]).unwrap();
        assert_eq!(g.levels(), &[0.0, 1.0]);
        assert_eq!(g.weights(), vec![0.25, 0.75]);
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(kappa_from_sizes(20, 20).unwrap(), 2.0);
        assert_eq!(kappa_from_sizes(20, 40).unwrap(), 3.0);
        assert_eq!(kappa_from_sizes(100, 50).unwrap(), 1.5);
        assert!(matches!(kappa_from_sizes(20, 0), Err(Error::DegenerateDesign(_))));
    }

    #[test]
    fn near_equal_doses_merge() {
        let g = GroupSample::from_pairs(vec![(1.0, 1.0), (1.0 + 1e-12, 2.0), (2.0, 3.0)]).unwrap();
        assert_eq!(g.k(), 2);
        assert_eq!(g.counts(), vec![2, 1]);
        assert!(GroupSample::from_pairs(Vec::new()).is_err());
    }

    fn sample() -> impl Strategy<Value = TwoGroupData> {
        let group = prop::collection::vec((0u8..6, -1e3f64..1e3), 1..30).prop_map(|v| {
            GroupSample::from_pairs(v.into_iter().map(|(x, y)| (x as f64 * 0.5, y))).unwrap()
        });
        (group.clone(), group).prop_map(|(a, b)| TwoGroupData::new(a, b))
    }

    proptest! {
        #[test]
        fn csv_round_trip(d in sample()) {
            let mut buf = Vec::new();
            d.to_csv_writer(&mut buf).unwrap();
            let back = TwoGroupData::from_csv_reader(buf.as_slice()).unwrap();
            prop_assert_eq!(back, d);
        }

        #[test]
        fn weights_are_probabilities(d in sample()) {
            let w = d.group1.weights();
            prop_assert!(w.iter().all(|&v| v > 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
