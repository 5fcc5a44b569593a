//! Monthly labor/consumption decisions and settlement: tiered taxation,
//! even redistribution, unconditional transfers and interest.
//!
//! Settlement is generic over the money type so the accounting identity can
//! be checked exactly with rationals.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::environment::geo::SchemaError;
use crate::gateway::{Bindings, CompletionRequest, Gateway, GatewayError};
use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxBracket<S> {
    pub lower: S,
    /// marginal rate in [0, 1]
    pub rate: S,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BracketError {
    #[error("bracket schedule is empty")]
    Empty,
    #[error("first bracket must start at 0")]
    NonZeroStart,
    #[error("bracket {0} does not start above the previous one")]
    Unsorted(usize),
    #[error("bracket {0} has a rate outside [0, 1]")]
    RateOutOfRange(usize),
}

/// Marginal-rate schedule; income in each slice is taxed at that slice's rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketSchedule<S> {
    brackets: Vec<TaxBracket<S>>,
}

/// 2018 US federal single-filer brackets (annual lower bounds, rates).
pub const US_2018_SINGLE_ANNUAL: [(f64, f64); 7] = [
    (0.0, 0.10),
    (9_525.0, 0.12),
    (38_700.0, 0.22),
    (82_500.0, 0.24),
    (157_500.0, 0.32),
    (200_000.0, 0.35),
    (500_000.0, 0.37),
];

impl<S: Scalar> BracketSchedule<S> {
    pub fn new(brackets: Vec<TaxBracket<S>>) -> Result<Self, BracketError> {
        let first = brackets.first().ok_or(BracketError::Empty)?;
        if !first.lower.is_zero() {
            return Err(BracketError::NonZeroStart);
        }
        for (i, b) in brackets.iter().enumerate() {
            if b.rate < S::zero() || b.rate > S::one() {
                return Err(BracketError::RateOutOfRange(i));
            }
            if i > 0 && b.lower <= brackets[i - 1].lower {
                return Err(BracketError::Unsorted(i));
            }
        }
        Ok(Self { brackets })
    }

    /// The annual 2018 schedule divided into monthly bounds.
    pub fn us_2018_monthly() -> Self {
        let twelve = S::from_count(12);
        let brackets = US_2018_SINGLE_ANNUAL
            .iter()
            .map(|&(lo, rate)| TaxBracket {
                lower: S::from_f64_lossy(lo) / twelve.clone(),
                rate: S::from_count((rate * 100.0).round() as usize) / S::from_count(100),
            })
            .collect();
        Self::new(brackets).expect("static schedule is valid")
    }

    pub fn brackets(&self) -> &[TaxBracket<S>] {
        &self.brackets
    }

    pub fn top_rate(&self) -> S {
        self.brackets.last().expect("non-empty").rate.clone()
    }

    /// `sum_i rate_i * overlap(income, [lower_i, lower_{i+1}))`.
    pub fn tax(&self, income: &S) -> S {
        let mut total = S::zero();
        for (i, b) in self.brackets.iter().enumerate() {
            if *income <= b.lower {
                break;
            }
            let upper = match self.brackets.get(i + 1) {
                Some(next) => S::min_of(income.clone(), next.lower.clone()),
                None => income.clone(),
            };
            total = total + b.rate.clone() * (upper - b.lower.clone());
        }
        total
    }
}

impl BracketSchedule<f64> {
    /// Reads `lower_bound,rate` rows.
    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        let f = std::fs::File::open(path).map_err(|e| SchemaError { line: 0, column: 0, reason: format!("{}: {e}", path.display()) })?;
        Self::from_reader(f)
    }

    pub fn from_reader(reader: impl Read) -> Result<Self, SchemaError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| SchemaError { line: 1, column: 0, reason: e.to_string() })?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        if header != ["lower_bound", "rate"] {
            return Err(SchemaError { line: 1, column: 0, reason: "expected header lower_bound,rate".into() });
        }
        let mut brackets = Vec::new();
        let mut last_line = 1;
        for row in rdr.records() {
            let row = row.map_err(|e| SchemaError { line: 0, column: 0, reason: e.to_string() })?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            last_line = line;
            let num = |c: usize| {
                row.get(c)
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| SchemaError { line, column: c + 1, reason: "not a number".into() })
            };
            brackets.push(TaxBracket { lower: num(0)?, rate: num(1)? });
        }
        Self::new(brackets).map_err(|e| SchemaError { line: last_line, column: 0, reason: e.to_string() })
    }
}

/// Macro-economic parameters of one economy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconomyState<S> {
    pub brackets: BracketSchedule<S>,
    pub goods_price: S,
    /// monthly rate
    pub interest_rate: S,
    pub hours_per_month: S,
    /// Tax collected in the last settlement, before redistribution.
    pub redistribution_pool: S,
}

impl<S: Scalar> EconomyState<S> {
    pub fn new(brackets: BracketSchedule<S>, goods_price: S, interest_rate: S, hours_per_month: S) -> Self {
        assert!(goods_price > S::zero() && hours_per_month > S::zero());
        Self { brackets, goods_price, interest_rate, hours_per_month, redistribution_pool: S::zero() }
    }
}

impl Default for EconomyState<f64> {
    fn default() -> Self {
        Self::new(BracketSchedule::us_2018_monthly(), 1.0, 0.0025, 168.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MonthlyDecision {
    pub work: f64,
    pub consumption: f64,
}

/// The money side of one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Account<S> {
    pub savings: S,
    pub hourly_wage: S,
    /// unconditional transfer paid this month
    pub transfer: S,
    pub allow_debt: bool,
}

/// Per-participant outcome of one settlement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountFlows<S> {
    pub income: S,
    pub tax: S,
    pub redistribution: S,
    pub transfer: S,
    pub consumption: S,
    pub interest: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settlement<S> {
    pub flows: Vec<AccountFlows<S>>,
    pub total_tax: S,
    pub per_capita_redistribution: S,
}

/// Settles one month, in order: labor income, tax, even redistribution of
/// all tax, unconditional transfer, consumption (a share of savings plus net
/// income), interest.
pub fn settle_month<S: Scalar>(accounts: &mut [Account<S>], decisions: &[MonthlyDecision], econ: &mut EconomyState<S>) -> Settlement<S> {
    assert_eq!(accounts.len(), decisions.len(), "one decision per account");
    let n = accounts.len();
    let incomes: Vec<S> = accounts
        .iter()
        .zip(decisions)
        .map(|(a, d)| S::from_f64_lossy(d.work.clamp(0.0, 1.0)) * econ.hours_per_month.clone() * a.hourly_wage.clone())
        .collect();
    let taxes: Vec<S> = incomes.iter().map(|i| econ.brackets.tax(i)).collect();
    let total_tax = taxes.iter().fold(S::zero(), |acc, t| acc + t.clone());
    econ.redistribution_pool = total_tax.clone();
    let share = if n == 0 { S::zero() } else { total_tax.clone() / S::from_count(n) };

    let mut flows = Vec::with_capacity(n);
    for ((acc, d), (income, tax)) in accounts.iter_mut().zip(decisions).zip(incomes.into_iter().zip(taxes)) {
        let transfer = acc.transfer.clone();
        let net = income.clone() - tax.clone() + share.clone() + transfer.clone();
        let base = S::max_of(acc.savings.clone() + net.clone(), S::zero());
        let consumption = S::from_f64_lossy(d.consumption.clamp(0.0, 1.0)) * base;
        let mut savings = acc.savings.clone() + net - consumption.clone();
        if !acc.allow_debt && savings < S::zero() {
            savings = S::zero();
        }
        let interest = savings.clone() * econ.interest_rate.clone();
        acc.savings = savings + interest.clone();
        flows.push(AccountFlows { income, tax, redistribution: share.clone(), transfer, consumption, interest });
    }
    Settlement { flows, total_tax, per_capita_redistribution: share }
}

/// One row of the monthly economy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconomySnapshot {
    pub month: u32,
    pub group: String,
    pub total_tax: f64,
    pub per_capita_redistribution: f64,
    pub mean_consumption: f64,
    pub mean_savings: f64,
    pub price: f64,
}

/// Savings quartile label, used as the "consumption level" category. An
/// agent's quartile is the share of agents with strictly lower savings.
pub fn consumption_levels(savings: &[f64]) -> Vec<&'static str> {
    const LEVELS: [&str; 4] = ["low", "lower-middle", "upper-middle", "high"];
    let mut sorted: Vec<f64> = savings.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len().max(1);
    savings
        .iter()
        .map(|&s| {
            let below = sorted.partition_point(|&v| v < s);
            LEVELS[(below * 4 / n).min(3)]
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn monthly_bindings(
    age: u32,
    city: &str,
    job: &str,
    hourly_wage: f64,
    last_consumption: f64,
    last_tax: f64,
    transfer: f64,
    price: f64,
    savings: f64,
    interest_rate: f64,
) -> Bindings {
    let mut b = Bindings::new();
    b.insert("age".into(), age.to_string());
    b.insert("city".into(), city.to_string());
    b.insert("job".into(), job.to_string());
    b.insert("skill".into(), format!("{hourly_wage:.2}"));
    b.insert("consumption".into(), format!("{last_consumption:.2}"));
    b.insert("tax paid".into(), format!("{last_tax:.2}"));
    b.insert("UBI".into(), format!("{transfer:.2}"));
    b.insert("price".into(), format!("{price:.2}"));
    b.insert("wealth".into(), format!("{savings:.2}"));
    b.insert("interest rate".into(), format!("{:.2}", interest_rate * 100.0));
    b
}

/// Work and consumption propensities for the month.
pub fn monthly_decision(gateway: &Gateway, bindings: Bindings) -> Result<MonthlyDecision, GatewayError> {
    let rec = gateway.cached_complete(&CompletionRequest::new("consumption", bindings))?;
    Ok(MonthlyDecision {
        work: rec.f64("work").unwrap_or_default().clamp(0.0, 1.0),
        consumption: rec.f64("consumption").unwrap_or_default().clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedBackend;
    use num_rational::BigRational;
    use proptest::prelude::*;

    /// Slice-sum oracle over the annual table, scaled to monthly.
    fn oracle_tax(income: f64) -> f64 {
        let b: Vec<(f64, f64)> = US_2018_SINGLE_ANNUAL.iter().map(|&(l, r)| (l / 12.0, r)).collect();
        let mut t = 0.0;
        for i in 0..b.len() {
            let hi = if i + 1 < b.len() { b[i + 1].0 } else { f64::INFINITY };
            let overlap = (income.min(hi) - b[i].0).max(0.0);
            t += b[i].1 * overlap;
        }
        t
    }

    fn acct(savings: f64, wage: f64) -> Account<f64> {
        Account { savings, hourly_wage: wage, transfer: 0.0, allow_debt: false }
    }

    #[test]
    fn ten_thousand_a_month() {
        let s = BracketSchedule::<f64>::us_2018_monthly();
        assert!((s.tax(&10_000.0) - oracle_tax(10_000.0)).abs() < 0.005);
        // exact rational agrees
        let r = BracketSchedule::<BigRational>::us_2018_monthly();
        let exact = r.tax(&BigRational::from_integer(10_000.into()));
        assert!((exact.to_f64_lossy() - oracle_tax(10_000.0)).abs() < 1e-6);
    }

    #[test]
    fn zero_income_zero_everything() {
        let mut econ = EconomyState::default();
        econ.interest_rate = 0.0;
        let mut a = vec![acct(0.0, 20.0)];
        let s = settle_month(&mut a, &[MonthlyDecision { work: 0.0, consumption: 0.5 }], &mut econ);
        assert_eq!(s.flows[0].tax, 0.0);
        assert_eq!(s.flows[0].consumption, 0.0);
        assert_eq!(a[0].savings, 0.0);
    }

    #[test]
    fn even_redistribution() {
        // flat 10% tax: incomes 1000 and 3000 pay 100 and 300
        let flat = BracketSchedule::new(vec![TaxBracket { lower: 0.0, rate: 0.1 }]).unwrap();
        let mut econ = EconomyState::new(flat, 1.0, 0.0, 100.0);
        let mut a = vec![acct(0.0, 10.0), acct(0.0, 30.0)];
        let d = [MonthlyDecision { work: 1.0, consumption: 0.0 }; 2];
        let s = settle_month(&mut a, &d, &mut econ);
        assert_eq!((s.flows[0].tax, s.flows[1].tax), (100.0, 300.0));
        assert_eq!(s.per_capita_redistribution, 200.0);
        assert_eq!(a[0].savings, 1000.0 - 100.0 + 200.0);
    }

    #[test]
    fn transfer_and_interest_order() {
        let flat = BracketSchedule::new(vec![TaxBracket { lower: 0.0, rate: 0.0 }]).unwrap();
        let mut econ = EconomyState::new(flat, 1.0, 0.01, 168.0);
        let mut a = vec![Account { savings: 1000.0, hourly_wage: 0.0, transfer: 1000.0, allow_debt: false }];
        let s = settle_month(&mut a, &[MonthlyDecision { work: 0.0, consumption: 0.5 }], &mut econ);
        // consumption = 0.5 * (1000 + 1000); interest on the remaining 1000
        assert_eq!(s.flows[0].consumption, 1000.0);
        assert!((a[0].savings - 1010.0f64).abs() < 1e-9);
    }

    #[test]
    fn malformed_schedules() {
        let b = |v: &[(f64, f64)]| BracketSchedule::new(v.iter().map(|&(lower, rate)| TaxBracket { lower, rate }).collect());
        assert_eq!(b(&[]), Err(BracketError::Empty));
        assert_eq!(b(&[(5.0, 0.1)]), Err(BracketError::NonZeroStart));
        assert_eq!(b(&[(0.0, 0.1), (0.0, 0.2)]), Err(BracketError::Unsorted(1)));
        assert_eq!(b(&[(0.0, 1.5)]), Err(BracketError::RateOutOfRange(0)));
        let csv = "lower_bound,rate\n0,0.1\n1000,0.2\n";
        assert_eq!(BracketSchedule::from_reader(csv.as_bytes()).unwrap().brackets().len(), 2);
    }

    #[test]
    fn rule_of_thumb_decision_from_gateway() {
        let g = Gateway::with_backend(ScriptedBackend::constant(r#"{"work": 0.6, "consumption": 0.3}"#));
        let d = monthly_decision(&g, monthly_bindings(30, "Houston", "clerk", 20.0, 0.0, 0.0, 0.0, 1.0, 100.0, 0.0025)).unwrap();
        assert_eq!(d, MonthlyDecision { work: 0.6, consumption: 0.3 });
        let z = Gateway::with_backend(ScriptedBackend::constant(r#"{"work": 0, "consumption": 0}"#));
        let d = monthly_decision(&z, monthly_bindings(30, "Houston", "clerk", 20.0, 0.0, 0.0, 0.0, 1.0, 100.0, 0.0025)).unwrap();
        assert_eq!(d, MonthlyDecision::default());
    }

    #[test]
    fn quartile_levels() {
        let lv = consumption_levels(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(lv, ["low", "lower-middle", "upper-middle", "high"]);
    }

    proptest! {
        #[test]
        fn tax_matches_oracle_and_is_monotone(a in 0.0f64..100_000.0, b in 0.0f64..100_000.0) {
            let s = BracketSchedule::<f64>::us_2018_monthly();
            prop_assert!((s.tax(&a) - oracle_tax(a)).abs() < 1e-6);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(s.tax(&lo) <= s.tax(&hi) + 1e-9);
            // marginal rate bounded by the top rate
            prop_assert!(s.tax(&hi) - s.tax(&lo) <= s.top_rate() * (hi - lo) + 1e-6);
        }
    }
}
