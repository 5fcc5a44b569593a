//! State invariants checked after every tick of seeded scripted runs, plus
//! property tests of the numeric building blocks.

use std::path::Path;

use chrono::NaiveDate;
use num_traits::Zero;
use proptest::prelude::*;
use socpilot::agent::needs::{select_need, Need};
use socpilot::behaviors::economy::{settle_month, MonthlyDecision};
use socpilot::behaviors::mobility::gravity_probabilities;
use socpilot::environment::clock::{SimClock, TickLength};
use socpilot::experiment::{ExperimentConfig, Simulation};
use socpilot::{Exact, ExactAccount, ExactEconomyState};

fn recipe(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("recipes").join(name)).unwrap()
}

fn check_agents(sim: &Simulation, max_steps: usize) {
    let thresholds = sim.config().needs.clone().unwrap_or_default().thresholds;
    for a in sim.agents() {
        assert!(a.profile.age > 0);
        assert!(a.emotion.intensities.iter().all(|&v| v <= 10), "{:?}", a.emotion.intensities);
        assert!(a.attitudes.values().all(|&v| v <= 10));
        assert!(a.status.friends.iter().all(|f| f.strength <= 100));
        if !a.status.allow_debt {
            assert!(a.status.savings >= 0.0);
        }
        assert!(a.needs.in_bounds());
        if a.needs.current != Need::Whatever {
            assert_eq!(select_need(&a.needs, &thresholds), a.needs.current, "stale need for agent {}", a.id());
        }
        if let Some(p) = &a.plan {
            assert!((1..=max_steps).contains(&p.steps.len()), "{} plan steps", p.steps.len());
            assert!(p.steps.iter().all(|s| !s.intention.trim().is_empty()));
        }
    }
}

fn run_checked(mut cfg: ExperimentConfig, seed: u64) {
    cfg.seed = seed;
    let max_steps = cfg.agent.max_plan_steps;
    let mut sim = Simulation::build(cfg).unwrap();
    let profiles: Vec<_> = sim.agents().iter().map(|a| a.profile.clone()).collect();
    let mut memories: Vec<Vec<_>> = sim.agents().iter().map(|a| a.memory.entries().to_vec()).collect();
    let mut stats = sim.gateway().stats();
    let mut tick = sim.progress().tick;
    let mut days_done = 0;
    while sim.step().unwrap() {
        let p = sim.progress();
        assert_eq!(p.tick, tick + 1);
        tick = p.tick;
        let s = sim.gateway().stats();
        assert!(s.requests >= stats.requests && s.cache_hits >= stats.cache_hits && s.retries >= stats.retries && s.parse_failures >= stats.parse_failures);
        stats = s;
        for (a, before) in sim.agents().iter().zip(&mut memories) {
            let now = a.memory.entries();
            assert!(now.len() >= before.len() && now[..before.len()] == before[..], "memory of agent {} was rewritten", a.id());
            *before = now.to_vec();
        }
        if p.day > days_done + 1 {
            days_done = p.day - 1;
            assert!(sim.agents().iter().all(|a| !a.thought.text.trim().is_empty()), "empty thought after day {days_done}");
        }
        check_agents(&sim, max_steps);
    }
    let after: Vec<_> = sim.agents().iter().map(|a| a.profile.clone()).collect();
    assert_eq!(profiles, after, "profiles changed during the run");
}

fn shrink(mut cfg: ExperimentConfig, size: usize) -> ExperimentConfig {
    cfg.population.size = Some(size);
    let groups = cfg.groups.len();
    for (i, g) in cfg.groups.iter_mut().enumerate() {
        g.size = Some(size / groups + usize::from(i < size % groups));
    }
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn polarization_state_stays_in_range(seed in 0u64..1_000) {
        run_checked(shrink(recipe("polarization.cfg"), 18), seed);
    }

    #[test]
    fn hurricane_state_stays_in_range(seed in 0u64..1_000) {
        run_checked(shrink(recipe("hurricane.cfg"), 12), seed);
    }
}

proptest! {
    #[test]
    fn gravity_probabilities_form_a_distribution(cands in prop::collection::vec((0.0f64..50.0, 0.0f64..100_000.0), 1..30), alpha in 0.5f64..3.0) {
        let p = gravity_probabilities(&cands, alpha, 100.0);
        prop_assert_eq!(p.len(), cands.len());
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        // closer is likelier, all else equal
        for (i, a) in cands.iter().enumerate() {
            for (j, b) in cands.iter().enumerate() {
                if a.0 == b.0 && a.0 > 0.0 && a.1.max(100.0) < b.1.max(100.0) {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
    }

    #[test]
    fn clock_time_is_start_plus_ticks(minutes in 1u32..240, n in 0u64..2_000) {
        let start = NaiveDate::from_ymd_opt(2019, 8, 28).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let mut clock = SimClock::new(start, TickLength::Minutes(minutes));
        for i in 0..n.min(300) {
            prop_assert_eq!(clock.tick(), i);
            prop_assert_eq!(clock.now(), start + chrono::Duration::minutes(minutes as i64 * i as i64));
            clock.advance();
        }
        prop_assert_eq!(clock.time_at(n), start + chrono::Duration::minutes(minutes as i64 * n as i64));
    }

    #[test]
    fn exact_settlement_conserves_money(
        rows in prop::collection::vec((0u32..20_000, 5u32..300, 0.0f64..=1.0, 0.0f64..=1.0, 0u32..2_000), 1..40),
    ) {
        let mut accounts: Vec<ExactAccount> = rows
            .iter()
            .map(|&(s, w, _, _, t)| ExactAccount { savings: Exact::from_integer(s.into()), hourly_wage: Exact::from_integer(w.into()), transfer: Exact::from_integer(t.into()), allow_debt: false })
            .collect();
        let decisions: Vec<MonthlyDecision> = rows.iter().map(|&(_, _, work, c, _)| MonthlyDecision { work, consumption: c }).collect();
        let one = Exact::from_integer(1.into());
        let mut econ = ExactEconomyState::new(socpilot::ExactBracketSchedule::us_2018_monthly(), one.clone(), one / Exact::from_integer(400.into()), Exact::from_integer(168.into()));
        let before = accounts.iter().fold(Exact::zero(), |acc, a| acc + a.savings.clone());
        let s = settle_month(&mut accounts, &decisions, &mut econ);
        let after = accounts.iter().fold(Exact::zero(), |acc, a| acc + a.savings.clone());
        let sum = |f: &dyn Fn(&socpilot::behaviors::economy::AccountFlows<Exact>) -> Exact| s.flows.iter().fold(Exact::zero(), |acc, x| acc + f(x));
        prop_assert_eq!(sum(&|f| f.redistribution.clone()), s.total_tax.clone());
        prop_assert_eq!(after, before + sum(&|f| f.income.clone()) + sum(&|f| f.transfer.clone()) + sum(&|f| f.interest.clone()) - sum(&|f| f.consumption.clone()));
        prop_assert!(accounts.iter().all(|a| a.savings >= Exact::zero()));
    }
}
