use parcer_core::budget::{adjust, guard_status, update_ema, BudgetState, Direction, SpendLedger};
use parcer_core::contract::{baseline, BudgetSpec};
use proptest::prelude::*;

fn spec() -> BudgetSpec {
    baseline().budget.clone()
}

struct Step {
    ema: f64,
    token_budget: u32,
    tool_budget: u32,
    event: Option<Direction>,
}

fn drive(spec: &BudgetSpec, samples: &[f64]) -> Vec<Step> {
    let mut s = BudgetState::new(spec, 6);
    samples
        .iter()
        .map(|m| {
            s = update_ema(&s, *m, spec.ema_alpha).unwrap();
            let (next, ev) = adjust(&s, spec);
            s = next;
            Step {
                ema: s.ema_mus.unwrap(),
                token_budget: s.token_budget,
                tool_budget: s.tool_budget,
                event: ev.map(|e| e.direction),
            }
        })
        .collect()
}

/// Long traces that wander between hot and cold regimes.
fn trace(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![0.0f64..=100.0, Just(0.0), Just(100.0), 0.0f64..10.0, 30.0f64..100.0], len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn budgets_stay_within_caps_and_floors(samples in trace(10_000)) {
        let sp = spec();
        for st in drive(&sp, &samples) {
            prop_assert!((1..=sp.max_tokens_cap).contains(&st.token_budget));
            prop_assert!((1..=sp.max_tools_cap).contains(&st.tool_budget));
        }
    }

    #[test]
    fn no_adjustments_on_consecutive_steps(samples in trace(2_000)) {
        let mut sp = spec();
        sp.cooldown_steps = 1;
        let steps = drive(&sp, &samples);
        for w in steps.windows(2) {
            prop_assert!(!(w[0].event.is_some() && w[1].event.is_some()));
        }
    }

    #[test]
    fn hysteresis_and_direction(samples in trace(2_000)) {
        let sp = spec();
        let mut anchor: Option<f64> = None;
        for st in drive(&sp, &samples) {
            let Some(dir) = st.event else { continue };
            if let Some(a) = anchor {
                prop_assert!((st.ema - a).abs() / a.max(1.0) >= sp.hysteresis_pct);
            }
            match dir {
                Direction::Heat => prop_assert!(st.ema > sp.mus_heat),
                Direction::Cool => prop_assert!(st.ema < sp.mus_cool),
            }
            anchor = Some(st.ema);
        }
    }

    #[test]
    fn ema_converges_geometrically(start in 0.0f64..=100.0, c in 0.0f64..=100.0) {
        let mut s = BudgetState::new(&spec(), 6);
        s = update_ema(&s, start, 0.4).unwrap();
        for _ in 0..40 {
            s = update_ema(&s, c, 0.4).unwrap();
        }
        prop_assert!((s.ema_mus.unwrap() - c).abs() < 1e-6);
    }

    #[test]
    fn guard_status_is_monotone(
        cost in 0.0f64..2.0, wall in 0.0f64..150_000.0, dc in 0.0f64..1.0, dw in 0.0f64..60_000.0,
    ) {
        let sp = spec();
        let at = |c: f64, w: f64| guard_status(&SpendLedger { cost_usd: c, wall_ms: w, ..Default::default() }, &sp).unwrap();
        let base = at(cost, wall);
        prop_assert!(at(cost + dc, wall) >= base);
        prop_assert!(at(cost, wall + dw) >= base);
    }
}

#[test]
fn constant_fifty_heats_once_then_stays_quiet() {
    let steps = drive(&spec(), &[50.0; 60]);
    let events: Vec<_> = steps.iter().filter_map(|s| s.event).collect();
    assert_eq!(events, [Direction::Heat]);
    assert_eq!(steps[0].token_budget, 2300);
}

#[test]
fn constant_zero_cools_once_then_holds_at_anchor() {
    let steps = drive(&spec(), &[0.0; 400]);
    let events: Vec<_> = steps.iter().filter_map(|s| s.event).collect();
    assert_eq!(events, [Direction::Cool]);
    // round-half-up(2000 * 0.80), 6 - 1
    assert_eq!((steps[0].token_budget, steps[0].tool_budget), (1600, 5));
    assert_eq!((steps[399].token_budget, steps[399].tool_budget), (1600, 5));
}

#[test]
fn cold_trace_without_hysteresis_settles_at_rounding_fixpoint() {
    let mut sp = spec();
    sp.cooldown_steps = 0;
    sp.hysteresis_pct = 0.0;
    let steps = drive(&sp, &[0.0; 400]);
    // Independent walk of round-half-up(b * 0.80) to its fixed point. 2 maps
    // to round(1.6) = 2, so tokens settle at 2 while tools reach the floor 1.
    let mut b = 2000u32;
    let mut want = Vec::new();
    loop {
        let next = ((f64::from(b) * 0.80) + 0.5).floor().max(1.0) as u32;
        want.push(next);
        if next == b {
            break;
        }
        b = next;
    }
    let got: Vec<u32> = steps.iter().map(|s| s.token_budget).collect();
    assert_eq!(&got[..want.len()], &want[..]);
    let last = steps.last().unwrap();
    assert_eq!((last.token_budget, last.tool_budget), (2, 1));
}
