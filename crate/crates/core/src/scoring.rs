//! Scoring model responses against manifest records, and exact running
//! aggregates over the results.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::ManifestRecord;
use crate::reward::{total_reward, Rational, RewardBreakdown, RewardSpec, Validity};

/// One line of a responses file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseLine {
    pub task_id: String,
    pub response_text: String,
}

/// A breakdown tagged with its task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScoreLine {
    pub task_id: String,
    #[serde(flatten)]
    pub breakdown: RewardBreakdown,
}

impl ScoreLine {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("score lines always serialize")
    }
}

pub fn score_record(record: &ManifestRecord, response_text: &str, spec: &RewardSpec) -> Result<ScoreLine> {
    let g = record.ground_truth()?;
    Ok(ScoreLine {
        task_id: record.task_id.clone(),
        breakdown: total_reward(response_text, &g, spec),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: u64,
    pub mean_total: f64,
    pub exact_rate: f64,
    /// Share of responses that were malformed or not a permutation.
    pub invalid_rate: f64,
}

/// Running totals kept as exact fractions, so the reported mean does not
/// depend on the order scores arrive in.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aggregator {
    count: u64,
    sum_total: BigRational,
    exact: u64,
    invalid: u64,
}

fn big(r: Rational) -> BigRational {
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

fn ratio(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

impl Aggregator {
    pub fn new() -> Self {
        Aggregator {
            sum_total: BigRational::zero(),
            ..Default::default()
        }
    }

    pub fn add(&mut self, total: Rational, validity: Validity) {
        self.count += 1;
        self.sum_total += big(total);
        match validity {
            Validity::Exact => self.exact += 1,
            Validity::InvalidPermutation | Validity::BadFormat => self.invalid += 1,
            Validity::Partial => {}
        }
    }

    pub fn add_breakdown(&mut self, b: &RewardBreakdown) {
        self.add(b.total, b.validity);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn snapshot(&self) -> Aggregate {
        let mean = if self.count == 0 {
            0.0
        } else {
            (&self.sum_total / BigRational::from_integer(BigInt::from(self.count)))
                .to_f64()
                .unwrap_or(f64::NAN)
        };
        Aggregate {
            count: self.count,
            mean_total: mean,
            exact_rate: ratio(self.exact, self.count),
            invalid_rate: ratio(self.invalid, self.count),
        }
    }
}

/// Reads a responses JSONL file. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn read_responses(path: &Path) -> Result<Vec<ResponseLine>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(parsed);
    }
    Ok(out)
}

/// Scores every response against `records`, in response order. Unknown
/// task ids are an error.
pub fn score_responses(
    records: &[ManifestRecord],
    responses: &[ResponseLine],
    spec: &RewardSpec,
) -> Result<(Vec<ScoreLine>, Aggregate)> {
    let index: HashMap<&str, &ManifestRecord> = records.iter().map(|r| (r.task_id.as_str(), r)).collect();
    let mut agg = Aggregator::new();
    let mut lines = Vec::with_capacity(responses.len());
    for resp in responses {
        let record = index
            .get(resp.task_id.as_str())
            .ok_or_else(|| Error::invalid(format!("unknown task_id {}", resp.task_id)))?;
        let line = score_record(record, &resp.response_text, spec)?;
        agg.add_breakdown(&line.breakdown);
        lines.push(line);
    }
    Ok((lines, agg.snapshot()))
}
