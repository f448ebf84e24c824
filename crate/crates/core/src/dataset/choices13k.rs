//! CSV ingestion for choices13k-style tables.
//!
//! The published layout describes option A as `Ha` with probability `pHa` and
//! `La` otherwise, and option B as `Hb`/`pHb`/`Lb`, where the high outcome of B
//! may be spread into a multi-outcome lottery (`LotShapeB`, `LotNumB`). Every
//! column name, the lottery-shape codes, row filters and the rule that collapses
//! repeated rows of one problem into a single rate come from a key-value config.
//!
//! Recognized keys (defaults in parentheses):
//!
//! ```text
//! col.id (Problem)  col.ha (Ha)  col.pha (pHa)  col.la (La)
//! col.hb (Hb)  col.phb (pHb)  col.lb (Lb)  col.b_rate (bRate)
//! col.lot_shape (LotShapeB)  col.lot_num (LotNumB)  col.weight (n)
//! lot_shape.symm (1)  lot_shape.rskew (2)  lot_shape.lskew (3)
//! aggregate (mean)  -- mean | weighted_mean | first
//! filter.<column> = <value>  -- keep only rows whose column equals value
//! ```
//!
//! An empty value for an optional column (`col.lot_shape =`) disables it.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use super::{BehavioralTarget, ChoiceProblem, Gamble, Outcome, TargetSource};
use crate::config::KvConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateAggregation {
    Mean,
    WeightedMean,
    First,
}

impl std::str::FromStr for RateAggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "weighted_mean" => Ok(Self::WeightedMean),
            "first" => Ok(Self::First),
            other => Err(Error::Parse(format!("unknown aggregate {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LotShape {
    None,
    Symmetric,
    RightSkew,
    LeftSkew,
}

#[derive(Debug, Clone)]
pub struct Choices13kAdapter {
    columns: HashMap<&'static str, String>,
    shape_codes: [(LotShape, String); 3],
    filters: Vec<(String, String)>,
    aggregate: RateAggregation,
}

const DEFAULT_COLUMNS: [(&str, &str); 11] = [
    ("id", "Problem"),
    ("ha", "Ha"),
    ("pha", "pHa"),
    ("la", "La"),
    ("hb", "Hb"),
    ("phb", "pHb"),
    ("lb", "Lb"),
    ("b_rate", "bRate"),
    ("lot_shape", "LotShapeB"),
    ("lot_num", "LotNumB"),
    ("weight", "n"),
];

impl Default for Choices13kAdapter {
    fn default() -> Self {
        Self::from_config(&KvConfig::default()).expect("defaults are valid")
    }
}

impl Choices13kAdapter {
    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let columns = DEFAULT_COLUMNS
            .iter()
            .map(|&(k, default)| {
                let name = cfg.get(&format!("col.{k}")).unwrap_or(default).to_string();
                (k, name)
            })
            .collect();
        let shape = |key: &str, default: &str| cfg.get(key).unwrap_or(default).to_string();
        let filters = cfg
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("filter.").map(|c| (c.to_string(), v.to_string())))
            .collect();
        Ok(Self {
            columns,
            shape_codes: [
                (LotShape::Symmetric, shape("lot_shape.symm", "1")),
                (LotShape::RightSkew, shape("lot_shape.rskew", "2")),
                (LotShape::LeftSkew, shape("lot_shape.lskew", "3")),
            ],
            filters,
            aggregate: cfg.get_or("aggregate", RateAggregation::Mean)?,
        })
    }

    /// Parse a CSV stream into one problem and one human target per unique id,
    /// ordered by id.
    pub fn ingest<R: Read>(&self, reader: R) -> Result<Vec<(ChoiceProblem, BehavioralTarget)>> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let index_of = |name: &str| headers.iter().position(|h| h == name);
        let required = |key: &str| -> Result<usize> {
            let name = &self.columns[key];
            index_of(name).ok_or_else(|| Error::Parse(format!("missing CSV column {name:?}")))
        };
        let optional = |key: &str| -> Option<usize> {
            let name = &self.columns[key];
            if name.is_empty() {
                None
            } else {
                index_of(name)
            }
        };
        let id_col = required("id")?;
        let ha = required("ha")?;
        let pha = required("pha")?;
        let la = required("la")?;
        let hb = required("hb")?;
        let phb = required("phb")?;
        let lb = required("lb")?;
        let rate_col = required("b_rate")?;
        let shape_col = optional("lot_shape");
        let num_col = optional("lot_num");
        let weight_col = optional("weight");
        let filters: Vec<(usize, &str)> = self
            .filters
            .iter()
            .map(|(c, v)| {
                index_of(c)
                    .map(|i| (i, v.as_str()))
                    .ok_or_else(|| Error::Parse(format!("filter column {c:?} not in CSV")))
            })
            .collect::<Result<_>>()?;

        struct Acc {
            problem: ChoiceProblem,
            rates: Vec<(f64, f64)>,
        }
        let mut by_id: BTreeMap<String, Acc> = BTreeMap::new();

        for (rowno, row) in rdr.records().enumerate() {
            let row = row?;
            if filters.iter().any(|&(i, v)| row.get(i).map(str::trim) != Some(v)) {
                continue;
            }
            let num = |i: usize| -> Result<f64> {
                let raw = row.get(i).unwrap_or("").trim();
                raw.parse::<f64>().map_err(|_| {
                    Error::Parse(format!("row {}: column {} is not numeric: {raw:?}", rowno + 2, i))
                })
            };
            let id = row.get(id_col).unwrap_or("").trim().to_string();
            if id.is_empty() {
                return Err(Error::Parse(format!("row {}: empty problem id", rowno + 2)));
            }
            let rate = num(rate_col)?;
            let weight = match weight_col {
                Some(i) => num(i)?,
                None => 1.0,
            };
            if let Some(acc) = by_id.get_mut(&id) {
                acc.rates.push((rate, weight));
                continue;
            }
            let option_a = two_outcome(num(ha)?, num(pha)?, num(la)?)?;
            let shape = match shape_col {
                Some(i) => self.shape_of(row.get(i).unwrap_or("").trim()),
                None => LotShape::None,
            };
            let lot_num = match num_col {
                Some(i) => num(i)? as usize,
                None => 1,
            };
            let option_b = lottery(num(hb)?, num(phb)?, num(lb)?, shape, lot_num)?;
            by_id.insert(
                id.clone(),
                Acc { problem: ChoiceProblem::new(id, option_a, option_b), rates: vec![(rate, weight)] },
            );
        }

        by_id
            .into_values()
            .map(|acc| {
                let rate = match self.aggregate {
                    RateAggregation::First => acc.rates[0].0,
                    RateAggregation::Mean => {
                        acc.rates.iter().map(|r| r.0).sum::<f64>() / acc.rates.len() as f64
                    }
                    RateAggregation::WeightedMean => {
                        let w: f64 = acc.rates.iter().map(|r| r.1).sum();
                        if w <= 0.0 {
                            return Err(Error::Parse(format!(
                                "problem {}: non-positive total weight",
                                acc.problem.id
                            )));
                        }
                        acc.rates.iter().map(|r| r.0 * r.1).sum::<f64>() / w
                    }
                };
                let target = BehavioralTarget::new(acc.problem.id.clone(), rate, TargetSource::Human)?;
                Ok((acc.problem, target))
            })
            .collect()
    }

    fn shape_of(&self, code: &str) -> LotShape {
        let lowered = code.to_ascii_lowercase();
        for (shape, want) in &self.shape_codes {
            if code == want {
                return *shape;
            }
        }
        match lowered.as_str() {
            "symm" => LotShape::Symmetric,
            "r-skew" => LotShape::RightSkew,
            "l-skew" => LotShape::LeftSkew,
            _ => LotShape::None,
        }
    }
}

fn push_outcome(out: &mut Vec<Outcome>, p: f64, v: f64) {
    if p > 0.0 {
        out.push(Outcome::new(p, v));
    }
}

fn two_outcome(high: f64, p_high: f64, low: f64) -> Result<Gamble> {
    let mut out = Vec::with_capacity(2);
    push_outcome(&mut out, p_high, high);
    push_outcome(&mut out, 1.0 - p_high, low);
    Gamble::new(out)
}

/// Expand the high outcome of B into the lottery described by shape and size;
/// every shape preserves the mean of the high outcome.
fn lottery(high: f64, p_high: f64, low: f64, shape: LotShape, n: usize) -> Result<Gamble> {
    if shape == LotShape::None || n <= 1 {
        return two_outcome(high, p_high, low);
    }
    let mut out = Vec::with_capacity(n + 1);
    match shape {
        LotShape::Symmetric => {
            let k = n - 1;
            let mut coeff = 1.0f64;
            let denom = 2f64.powi(k as i32);
            for j in 0..=k {
                if j > 0 {
                    coeff = coeff * (k - j + 1) as f64 / j as f64;
                }
                let v = high - k as f64 / 2.0 + j as f64;
                push_outcome(&mut out, p_high * coeff / denom, v);
            }
        }
        LotShape::RightSkew | LotShape::LeftSkew => {
            let sign = if shape == LotShape::RightSkew { 1.0 } else { -1.0 };
            let c = -sign * (n as f64 + 1.0);
            for j in 1..=n {
                let p = if j == n { 0.5f64.powi(n as i32 - 1) } else { 0.5f64.powi(j as i32) };
                push_outcome(&mut out, p_high * p, high + c + sign * 2f64.powi(j as i32));
            }
        }
        LotShape::None => unreachable!(),
    }
    push_outcome(&mut out, 1.0 - p_high, low);
    Gamble::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::expected_value;

    const CSV: &str = "\
Problem,Feedback,n,block,Ha,pHa,La,Hb,pHb,Lb,LotShapeB,LotNumB,Amb,Corr,bRate
1,0,15,1,27,1,27,25,0.9,92,0,1,0,0,0.70
1,1,15,2,27,1,27,25,0.9,92,0,1,0,0,0.80
2,0,20,1,10,0.5,0,6,0.5,2,1,3,0,0,0.25
3,0,20,1,3,1,3,4,0.75,-1,2,3,0,0,0.60
";

    #[test]
    fn default_layout_collapses_repeated_rows() {
        let rows = Choices13kAdapter::default().ingest(CSV.as_bytes()).unwrap();
        assert_eq!(rows.len(), 3);
        let (p1, t1) = &rows[0];
        assert_eq!(p1.id, "1");
        assert_eq!(p1.option_a.len(), 1);
        let b = p1.option_b.outcomes();
        assert_eq!(b.len(), 2);
        assert_eq!((b[0].probability, b[0].value), (0.9, 25.0));
        assert!((b[1].probability - 0.1).abs() < 1e-12 && b[1].value == 92.0);
        assert!((t1.b_rate - 0.75).abs() < 1e-12);
    }

    #[test]
    fn lottery_shapes_preserve_mean() {
        let rows = Choices13kAdapter::default().ingest(CSV.as_bytes()).unwrap();
        let (p2, _) = &rows[1];
        // symmetric: 5,6,7 with weights 1/4,1/2,1/4 of 0.5, plus low 2 w.p. 0.5
        assert_eq!(p2.option_b.len(), 4);
        assert!((expected_value(&p2.option_b) - (0.5 * 6.0 + 0.5 * 2.0)).abs() < 1e-12);
        let (p3, _) = &rows[2];
        assert_eq!(p3.option_b.len(), 4);
        assert!((expected_value(&p3.option_b) - (0.75 * 4.0 - 0.25)).abs() < 1e-12);
    }

    #[test]
    fn filters_and_first_aggregation() {
        let cfg = KvConfig::parse("filter.Feedback = 1\naggregate = first").unwrap();
        let rows = Choices13kAdapter::from_config(&cfg).unwrap().ingest(CSV.as_bytes()).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].1.b_rate - 0.80).abs() < 1e-12);
    }

    #[test]
    fn weighted_mean() {
        let csv = "Problem,n,Ha,pHa,La,Hb,pHb,Lb,bRate\n7,1,1,1,1,2,1,2,0.0\n7,3,1,1,1,2,1,2,1.0\n";
        let cfg = KvConfig::parse("aggregate = weighted_mean\ncol.lot_shape =\ncol.lot_num =").unwrap();
        let rows = Choices13kAdapter::from_config(&cfg).unwrap().ingest(csv.as_bytes()).unwrap();
        assert!((rows[0].1.b_rate - 0.75).abs() < 1e-12);
    }

    #[test]
    fn renamed_columns_and_missing_columns() {
        let csv = "pid,h1,p1,l1,h2,p2,l2,rate\nx,1,1,1,2,1,2,0.5\n";
        let cfg = KvConfig::parse(
            "col.id=pid\ncol.ha=h1\ncol.pha=p1\ncol.la=l1\ncol.hb=h2\ncol.phb=p2\ncol.lb=l2\ncol.b_rate=rate",
        )
        .unwrap();
        let rows = Choices13kAdapter::from_config(&cfg).unwrap().ingest(csv.as_bytes()).unwrap();
        assert_eq!(rows[0].0.id, "x");
        assert!(Choices13kAdapter::default().ingest(csv.as_bytes()).is_err());
    }
}
