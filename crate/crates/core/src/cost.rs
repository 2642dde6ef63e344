//! Dollar cost per question: model API, query-side retrieval and, for the
//! compressed pipeline, the summarizer's compute time.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The dated table shipped with the crate (`pricing/gpt-3.5-turbo-2023-05.toml`).
pub const DEFAULT_PRICING: &str = include_str!("../../../pricing/gpt-3.5-turbo-2023-05.toml");

#[derive(Debug, Error)]
pub enum CostError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("pricing table: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid pricing: {0}")]
    Invalid(String),
    #[error("pricing table has no [compute] section")]
    MissingCompute,
    #[error("pricing table has no [scenario] section")]
    MissingScenario,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApiPricing {
    pub input_rate: f64,
    pub output_rate: f64,
    pub tokens_per_k: u32,
}

impl ApiPricing {
    pub fn single_rate(rate: f64, tokens_per_k: u32) -> Self {
        ApiPricing { input_rate: rate, output_rate: rate, tokens_per_k }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalPricing {
    pub rate: f64,
    pub tokens_per_k: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeCostSpec {
    pub hourly_price: f64,
    pub seconds_per_sample: f64,
    /// In `(0, 1]`.
    pub utilization: f64,
}

/// Token counts of one question; fractional after compression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuestionTokens {
    pub query: f64,
    pub context: f64,
    pub output: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub query_tokens: f64,
    pub context_tokens: f64,
    pub output_tokens: f64,
    pub context_ratio: f64,
}

impl Scenario {
    pub fn tokens(&self) -> QuestionTokens {
        QuestionTokens { query: self.query_tokens, context: self.context_tokens, output: self.output_tokens }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingTable {
    pub name: String,
    pub api: ApiPricing,
    pub retrieval: RetrievalPricing,
    #[serde(default)]
    pub compute: Option<ComputeCostSpec>,
    #[serde(default)]
    pub scenario: Option<Scenario>,
}

impl PricingTable {
    pub fn parse(source: &str) -> Result<Self, CostError> {
        let t: PricingTable = toml::from_str(source)?;
        t.validate()?;
        Ok(t)
    }

    /// Loads `path`, or `path.toml` when `path` itself does not exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CostError> {
        let path = path.as_ref();
        let resolved = if path.exists() {
            path.to_path_buf()
        } else {
            let mut name = path.as_os_str().to_owned();
            name.push(".toml");
            PathBuf::from(name)
        };
        let src = fs::read_to_string(&resolved).map_err(|source| CostError::Io { path: resolved.clone(), source })?;
        Self::parse(&src)
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_PRICING).expect("shipped pricing table is valid")
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let rates = [self.api.input_rate, self.api.output_rate, self.retrieval.rate];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(CostError::Invalid("rates must be finite and non-negative".into()));
        }
        for base in [self.api.tokens_per_k, self.retrieval.tokens_per_k] {
            if base != 1000 && base != 1024 {
                return Err(CostError::Invalid(format!("tokens_per_k must be 1000 or 1024, got {base}")));
            }
        }
        if let Some(c) = &self.compute {
            validate_compute(c)?;
        }
        if let Some(s) = &self.scenario {
            if !(s.context_ratio > 0.0 && s.context_ratio <= 1.0) {
                return Err(CostError::Invalid(format!("context_ratio {} is outside (0, 1]", s.context_ratio)));
            }
        }
        Ok(())
    }

    pub fn compute(&self) -> Result<ComputeCostSpec, CostError> {
        self.compute.ok_or(CostError::MissingCompute)
    }

    pub fn scenario(&self) -> Result<Scenario, CostError> {
        self.scenario.ok_or(CostError::MissingScenario)
    }
}

fn validate_compute(c: &ComputeCostSpec) -> Result<(), CostError> {
    if !(c.utilization > 0.0 && c.utilization <= 1.0) {
        return Err(CostError::Invalid(format!("utilization {} is outside (0, 1]", c.utilization)));
    }
    if !(c.hourly_price >= 0.0 && c.seconds_per_sample >= 0.0) {
        return Err(CostError::Invalid("compute price and time must be non-negative".into()));
    }
    Ok(())
}

pub fn api_call_cost(input_tokens: f64, output_tokens: f64, pricing: &ApiPricing) -> f64 {
    let k = pricing.tokens_per_k as f64;
    input_tokens / k * pricing.input_rate + output_tokens / k * pricing.output_rate
}

pub fn retrieval_cost(query_tokens: f64, pricing: &RetrievalPricing) -> f64 {
    query_tokens / pricing.tokens_per_k as f64 * pricing.rate
}

/// `hourly_price * seconds_per_sample / (3600 * utilization)`.
pub fn summarization_compute_cost(spec: &ComputeCostSpec) -> Result<f64, CostError> {
    validate_compute(spec)?;
    Ok(spec.hourly_price * spec.seconds_per_sample / (3600.0 * spec.utilization))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pipeline", rename_all = "snake_case")]
pub enum Pipeline {
    PlainRag,
    /// Context tokens are scaled by `context_ratio` and one summarization is paid.
    CompressedRag { context_ratio: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub pipeline: Pipeline,
    pub query_tokens: f64,
    pub context_tokens: f64,
    pub output_tokens: f64,
    pub api_input_tokens: f64,
    pub api_cost: f64,
    pub retrieval_cost: f64,
    pub summarization_cost: f64,
    /// `api_cost + retrieval_cost + summarization_cost`, summed in that order.
    pub total: f64,
}

pub fn question_cost(
    tokens: QuestionTokens,
    pipeline: Pipeline,
    pricing: &PricingTable,
    compute: &ComputeCostSpec,
) -> Result<CostReport, CostError> {
    if [tokens.query, tokens.context, tokens.output].iter().any(|t| !(*t >= 0.0)) {
        return Err(CostError::Invalid("token counts must be non-negative".into()));
    }
    let (context, summarization_cost) = match pipeline {
        Pipeline::PlainRag => (tokens.context, 0.0),
        Pipeline::CompressedRag { context_ratio } => {
            if !(0.0..=1.0).contains(&context_ratio) {
                return Err(CostError::Invalid(format!("context_ratio {context_ratio} is outside [0, 1]")));
            }
            (tokens.context * context_ratio, summarization_compute_cost(compute)?)
        }
    };
    let api_input_tokens = tokens.query + context;
    let api_cost = api_call_cost(api_input_tokens, tokens.output, &pricing.api);
    let retrieval_cost = retrieval_cost(tokens.query, &pricing.retrieval);
    Ok(CostReport {
        pipeline,
        query_tokens: tokens.query,
        context_tokens: context,
        output_tokens: tokens.output,
        api_input_tokens,
        api_cost,
        retrieval_cost,
        summarization_cost,
        total: api_cost + retrieval_cost + summarization_cost,
    })
}

/// Dollar cost of one evaluated question.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QuestionCost {
    pub api: f64,
    pub retrieval: f64,
    pub summarization: f64,
    /// `api + retrieval + summarization`, summed in that order.
    pub total: f64,
}

impl QuestionCost {
    pub fn new(api: f64, retrieval: f64, summarization: f64) -> Self {
        QuestionCost { api, retrieval, summarization, total: api + retrieval + summarization }
    }

    /// Component-wise sum; `total` is the running sum of the parts' totals.
    pub fn sum<'a>(costs: impl IntoIterator<Item = &'a QuestionCost>) -> QuestionCost {
        costs.into_iter().fold(QuestionCost::default(), |acc, c| QuestionCost {
            api: acc.api + c.api,
            retrieval: acc.retrieval + c.retrieval,
            summarization: acc.summarization + c.summarization,
            total: acc.total + c.total,
        })
    }
}

/// Scientific notation with a signed two-digit exponent: `8.9050e-04`.
pub fn format_sci(x: f64, digits: usize) -> String {
    let s = format!("{x:.digits$e}");
    match s.split_once('e') {
        Some((mantissa, exp)) => {
            let (sign, digits) = exp.strip_prefix('-').map_or(("+", exp), |d| ("-", d));
            format!("{mantissa}e{sign}{digits:0>2}")
        }
        None => s,
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.pipeline {
            Pipeline::PlainRag => "plain_rag".to_string(),
            Pipeline::CompressedRag { context_ratio } => format!("compressed_rag (context ratio {context_ratio})"),
        };
        writeln!(f, "pipeline            {name}")?;
        writeln!(
            f,
            "tokens              query {} + context {} = input {}, output {}",
            self.query_tokens, self.context_tokens, self.api_input_tokens, self.output_tokens
        )?;
        for (label, v) in [
            ("api", self.api_cost),
            ("retrieval", self.retrieval_cost),
            ("summarization", self.summarization_cost),
            ("total", self.total),
        ] {
            writeln!(f, "{label:<20}${}  ({v:e})", format_sci(v, 4))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn api_cost_examples() {
        let p = ApiPricing::single_rate(0.002, 1000);
        assert_eq!(api_call_cost(0.0, 0.0, &p), 0.0);
        assert!(close(api_call_cost(375.0, 64.0, &p), (375.0 + 64.0) * 0.002 / 1000.0, 1e-18));
        let gpt4 = ApiPricing { input_rate: 0.03, output_rate: 0.06, tokens_per_k: 1000 };
        assert!(close(api_call_cost(1000.0, 1000.0, &gpt4), 0.09, 1e-15));
    }

    #[test]
    fn retrieval_cost_examples() {
        let p = RetrievalPricing { rate: 0.0001, tokens_per_k: 1024 };
        assert_eq!(retrieval_cost(0.0, &p), 0.0);
        assert_eq!(retrieval_cost(128.0, &p), 1.25e-5);
        assert_eq!(retrieval_cost(1024.0, &p), 1.0e-4);
    }

    #[test]
    fn compute_cost_examples() {
        let mut c = ComputeCostSpec { hourly_price: 0.485, seconds_per_sample: 0.383, utilization: 1.0 };
        assert!(close(summarization_compute_cost(&c).unwrap(), 0.485 * 0.383 / 3600.0, 1e-18));
        c.utilization = 0.5;
        assert!(close(summarization_compute_cost(&c).unwrap(), 1.0319e-4, 1e-8));
        let unit = ComputeCostSpec { hourly_price: 1.0, seconds_per_sample: 3600.0, utilization: 1.0 };
        assert_eq!(summarization_compute_cost(&unit).unwrap(), 1.0);
        c.utilization = 0.0;
        assert!(summarization_compute_cost(&c).is_err());
    }

    #[test]
    fn shipped_table_reproduces_totals() {
        let t = PricingTable::builtin();
        let s = t.scenario().unwrap();
        let c = t.compute().unwrap();
        let plain = question_cost(s.tokens(), Pipeline::PlainRag, &t, &c).unwrap();
        let comp = question_cost(s.tokens(), Pipeline::CompressedRag { context_ratio: s.context_ratio }, &t, &c).unwrap();
        assert!(close(plain.total, (375.0 + 64.0) * 0.002 / 1000.0 + 1.25e-5, 1e-15));
        assert_eq!(format_sci(plain.total, 4), "8.9050e-04");
        assert!(close(comp.api_input_tokens, 187.5, 1e-12));
        assert!(close(comp.total, 6.1869e-4, 1e-8));
        assert_eq!(comp.total, comp.api_cost + comp.retrieval_cost + comp.summarization_cost);
    }

    #[test]
    fn unit_ratio_and_free_compute_match_plain() {
        let t = PricingTable::builtin();
        let free = ComputeCostSpec { hourly_price: 0.0, seconds_per_sample: 0.383, utilization: 1.0 };
        let tokens = QuestionTokens { query: 17.0, context: 311.0, output: 9.0 };
        let plain = question_cost(tokens, Pipeline::PlainRag, &t, &free).unwrap();
        let comp = question_cost(tokens, Pipeline::CompressedRag { context_ratio: 1.0 }, &t, &free).unwrap();
        assert_eq!(plain.total, comp.total);
    }

    #[test]
    fn sci_format() {
        assert_eq!(format_sci(8.905e-4, 4), "8.9050e-04");
        assert_eq!(format_sci(1.25e-5, 4), "1.2500e-05");
        assert_eq!(format_sci(12.5, 2), "1.25e+01");
        assert_eq!(format_sci(0.0, 1), "0.0e+00");
    }

    #[test]
    fn table_validation() {
        let bad = DEFAULT_PRICING.replace("tokens_per_k = 1024", "tokens_per_k = 999");
        assert!(matches!(PricingTable::parse(&bad), Err(CostError::Invalid(_))));
        let neg = DEFAULT_PRICING.replace("rate = 0.0001", "rate = -1.0");
        assert!(PricingTable::parse(&neg).is_err());
    }
}
