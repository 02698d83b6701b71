//! Graded permutation reward for think/answer rollouts.
//!
//! Rewards are exact rationals so that scoring is reproducible bit-for-bit
//! and tests can compare with `==`.

use num_rational::Ratio;
use rand::Rng;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::permutation::{count_fixed, format_answer, is_valid_permutation, GroundTruth};

pub type Rational = Ratio<i64>;

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

/// Parses a plain decimal (`0.2`, `-1.25`, `3`) or a fraction (`1/5`) exactly.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || Error::invalid(format!("not a decimal or fraction: {s:?}"));
    if let Some((num, den)) = s.split_once('/') {
        let num: i64 = num.trim().parse().map_err(|_| bad())?;
        let den: i64 = den.trim().parse().map_err(|_| bad())?;
        if den == 0 {
            return Err(bad());
        }
        return Ok(Rational::new(num, den));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: i64 = if digits.is_empty() {
        0
    } else {
        digits.parse().map_err(|_| bad())?
    };
    let denom = 10i64
        .checked_pow(frac_part.len() as u32)
        .ok_or_else(bad)?;
    let r = Rational::new(numer, denom);
    Ok(if neg { -r } else { r })
}

/// Exact rational for a float, using its shortest round-trip decimal form
/// (so `0.2` becomes `1/5`).
pub fn rational_from_f64(x: f64) -> Result<Rational> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("non-finite value {x}")));
    }
    parse_rational(&x.to_string())
}

pub fn rational_to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn serialize_f64<S: Serializer>(r: &Rational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(rational_to_f64(*r))
}

/// Reward parameters: partial-credit discount and format bonus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RewardSpec {
    #[serde(serialize_with = "serialize_f64")]
    gamma: Rational,
    #[serde(serialize_with = "serialize_f64")]
    format_bonus: Rational,
    /// When off, only exact answers earn accuracy reward.
    partial_credit: bool,
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec {
            gamma: Rational::new(1, 5),
            format_bonus: Rational::new(1, 5),
            partial_credit: true,
        }
    }
}

impl RewardSpec {
    pub fn new(gamma: Rational, format_bonus: Rational) -> Result<Self> {
        if gamma <= Rational::from_integer(0) || gamma >= Rational::from_integer(1) {
            return Err(Error::invalid(format!(
                "gamma must lie in (0, 1), got {gamma}"
            )));
        }
        if format_bonus < Rational::from_integer(0) {
            return Err(Error::invalid(format!(
                "format_bonus must be >= 0, got {format_bonus}"
            )));
        }
        Ok(RewardSpec {
            gamma,
            format_bonus,
            partial_credit: true,
        })
    }

    pub fn from_f64(gamma: f64, format_bonus: f64) -> Result<Self> {
        RewardSpec::new(rational_from_f64(gamma)?, rational_from_f64(format_bonus)?)
    }

    pub fn gamma(&self) -> Rational {
        self.gamma
    }

    pub fn format_bonus(&self) -> Rational {
        self.format_bonus
    }

    pub fn partial_credit(&self) -> bool {
        self.partial_credit
    }

    pub fn with_partial_credit(mut self, on: bool) -> Self {
        self.partial_credit = on;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    MissingThink,
    MissingAnswer,
    DuplicateTags,
    BadOrder,
    UnparseableAnswer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParsedResponse {
    pub format_ok: bool,
    pub think_text: Option<String>,
    pub answer_indices: Option<Vec<i64>>,
    pub failure_reason: Option<FailureReason>,
}

impl ParsedResponse {
    fn failed(reason: FailureReason, think_text: Option<String>) -> Self {
        ParsedResponse {
            format_ok: false,
            think_text,
            answer_indices: None,
            failure_reason: Some(reason),
        }
    }
}

/// Parses the think/answer protocol.
///
/// Exactly one `<think>…</think>` block must precede exactly one
/// `<answer>…</answer>` block; tags are case-sensitive and surrounding text is
/// ignored. The answer must be `k` comma-separated base-10 integers. Indices
/// are returned as written; permutation validity is the scorer's concern.
pub fn parse_response(text: &str, k: usize) -> ParsedResponse {
    let occurrences = |tag: &str| text.match_indices(tag).map(|(i, _)| i).collect::<Vec<_>>();
    let think_open = occurrences(THINK_OPEN);
    let think_close = occurrences(THINK_CLOSE);
    let answer_open = occurrences(ANSWER_OPEN);
    let answer_close = occurrences(ANSWER_CLOSE);

    if [&think_open, &think_close, &answer_open, &answer_close]
        .iter()
        .any(|v| v.len() > 1)
    {
        return ParsedResponse::failed(FailureReason::DuplicateTags, None);
    }
    let (Some(&ts), Some(&te)) = (think_open.first(), think_close.first()) else {
        return ParsedResponse::failed(FailureReason::MissingThink, None);
    };
    let (Some(&as_), Some(&ae)) = (answer_open.first(), answer_close.first()) else {
        return ParsedResponse::failed(FailureReason::MissingAnswer, None);
    };
    let think_end = ts + THINK_OPEN.len();
    let answer_start = as_ + ANSWER_OPEN.len();
    if !(think_end <= te && te + THINK_CLOSE.len() <= as_ && answer_start <= ae) {
        return ParsedResponse::failed(FailureReason::BadOrder, None);
    }
    let think_text = text[think_end..te].to_string();

    let tokens: Option<Vec<i64>> = text[answer_start..ae]
        .split(',')
        .map(|tok| tok.trim().parse::<i64>().ok())
        .collect();
    match tokens {
        Some(indices) if indices.len() == k => ParsedResponse {
            format_ok: true,
            think_text: Some(think_text),
            answer_indices: Some(indices),
            failure_reason: None,
        },
        _ => ParsedResponse::failed(FailureReason::UnparseableAnswer, Some(think_text)),
    }
}

/// Parses raw bytes, replacing invalid UTF-8 sequences.
pub fn parse_response_bytes(bytes: &[u8], k: usize) -> ParsedResponse {
    parse_response(&String::from_utf8_lossy(bytes), k)
}

/// Accuracy reward: 1 for the exact answer, `γ·c/K` for any other valid
/// permutation with `c` correctly placed indices, 0 otherwise.
pub fn accuracy_reward(o: &[i64], g: &GroundTruth, spec: &RewardSpec) -> Rational {
    let k = g.k();
    if !is_valid_permutation(o, k) {
        return Rational::from_integer(0);
    }
    // lengths agree once validity holds
    let fixed = count_fixed(o, g).unwrap_or(0);
    if fixed == k {
        Rational::from_integer(1)
    } else if !spec.partial_credit {
        Rational::from_integer(0)
    } else {
        spec.gamma * Rational::new(fixed as i64, k as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validity {
    Exact,
    Partial,
    InvalidPermutation,
    BadFormat,
}

impl Validity {
    pub fn as_str(self) -> &'static str {
        match self {
            Validity::Exact => "exact",
            Validity::Partial => "partial",
            Validity::InvalidPermutation => "invalid_permutation",
            Validity::BadFormat => "bad_format",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RewardBreakdown {
    #[serde(serialize_with = "serialize_f64")]
    pub format_reward: Rational,
    #[serde(serialize_with = "serialize_f64")]
    pub accuracy_reward: Rational,
    #[serde(serialize_with = "serialize_f64")]
    pub total: Rational,
    pub validity: Validity,
}

impl RewardBreakdown {
    pub fn bad_format() -> Self {
        let zero = Rational::from_integer(0);
        RewardBreakdown {
            format_reward: zero,
            accuracy_reward: zero,
            total: zero,
            validity: Validity::BadFormat,
        }
    }

    pub fn total_f64(&self) -> f64 {
        rational_to_f64(self.total)
    }
}

/// Format reward plus accuracy reward. A malformed response earns nothing.
pub fn total_reward(text: &str, g: &GroundTruth, spec: &RewardSpec) -> RewardBreakdown {
    let parsed = parse_response(text, g.k());
    let Some(o) = parsed.answer_indices.filter(|_| parsed.format_ok) else {
        return RewardBreakdown::bad_format();
    };
    let accuracy = accuracy_reward(&o, g, spec);
    let validity = if !is_valid_permutation(&o, g.k()) {
        Validity::InvalidPermutation
    } else if accuracy == Rational::from_integer(1) {
        Validity::Exact
    } else {
        Validity::Partial
    };
    RewardBreakdown {
        format_reward: spec.format_bonus,
        accuracy_reward: accuracy,
        total: spec.format_bonus + accuracy,
        validity,
    }
}

/// Mean accuracy reward of a uniformly random valid answer, by enumerating
/// all `k!` permutations against a fixed ground truth.
pub fn expected_random_reward(k: usize, gamma: Rational) -> Result<Rational> {
    if !(2..=8).contains(&k) {
        return Err(Error::invalid(format!(
            "enumeration supports 2 <= k <= 8, got {k}"
        )));
    }
    let spec = RewardSpec::new(gamma, Rational::from_integer(0))?;
    // any fixed ground truth gives the same mean; use a non-identity one
    let mut g_answer: Vec<usize> = (1..=k).collect();
    g_answer.rotate_left(1);
    let g = GroundTruth::new(g_answer)?;

    let mut current: Vec<i64> = (1..=k as i64).collect();
    let mut sum = Rational::from_integer(0);
    let mut count = 0i64;
    // Heap's algorithm, iterative form
    let mut c = vec![0usize; k];
    sum += accuracy_reward(&current, &g, &spec);
    count += 1;
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                current.swap(0, i);
            } else {
                current.swap(c[i], i);
            }
            sum += accuracy_reward(&current, &g, &spec);
            count += 1;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(sum / Rational::from_integer(count))
}

/// Closed form of [`expected_random_reward`]: `1/k! + γ(1/k − 1/k!)`.
pub fn expected_random_reward_closed_form(k: usize, gamma: Rational) -> Rational {
    let factorial: i64 = (1..=k as i64).product();
    let inv_fact = Rational::new(1, factorial);
    inv_fact + gamma * (Rational::new(1, k as i64) - inv_fact)
}

/// Emits a well-formed response whose answer is the ground truth perturbed by
/// a left-to-right pass of adjacent transpositions, each applied with
/// probability `swap_prob`.
pub fn simulate_solver<R: Rng + ?Sized>(
    g: &GroundTruth,
    swap_prob: f64,
    rng: &mut R,
) -> Result<String> {
    if !(0.0..=1.0).contains(&swap_prob) {
        return Err(Error::invalid(format!(
            "swap_prob must lie in [0, 1], got {swap_prob}"
        )));
    }
    let mut answer: Vec<i64> = g.answer().iter().map(|&a| a as i64).collect();
    for i in 0..answer.len() - 1 {
        if rng.random_bool(swap_prob) {
            answer.swap(i, i + 1);
        }
    }
    Ok(format!(
        "<think>Compare the pieces' borders and place each one.</think>\n<answer>{}</answer>",
        format_answer(answer)
    ))
}
