mod common;

use common::*;
use p2p_market::equilibrium::{trade_cost_heterogeneous, trade_costs};
use p2p_market::game::{expected_cost, potential_identity_error};
use p2p_market::model::{Edge, RawInstance, RawTopology};
use p2p_market::privacy::kl_budget_satisfied;
use p2p_market::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(got.abs())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn balance_holds_for_any_reports(seed in any::<u64>()) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r);
        let (y_hat, _) = random_profile(&mut r, &inst, 5.0);
        let out = equilibrium_decisions(&inst, &y_hat);
        for (n, agent) in inst.agents().iter().enumerate() {
            let residual = out.d[n] - out.g[n] - agent.delta_g - out.q_net[n];
            prop_assert!(residual.abs() < 1e-10, "agent {n}: {residual}");
        }
    }

    #[test]
    fn truthful_reports_clear_the_market(seed in any::<u64>()) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r);
        let out = equilibrium_decisions(&inst, &inst.true_values());
        let net: f64 = out.q_net.iter().sum();
        prop_assert!(net.abs() < 1e-10, "{net}");
    }

    #[test]
    fn price_ignores_sum_preserving_changes(seed in any::<u64>(), delta in -5.0..5.0_f64) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r);
        let y = inst.true_values();
        let reference = clearing_price(&inst, &y);

        let mut shuffled = y.clone();
        shuffled.shuffle(&mut r);
        prop_assert_eq!(clearing_price(&inst, &shuffled).to_bits(), reference.to_bits());

        // Replace a pair by its rounded sum and the exact rounding error
        // (TwoSum): the real-valued total is unchanged.
        let (i, j) = (0, r.random_range(1..inst.n_agents()));
        let (x, z) = (y[i] + delta, y[j]);
        let s = x + z;
        let zv = s - x;
        let err = (x - (s - zv)) + (z - zv);
        let mut base = y.clone();
        base[i] = x;
        let mut moved = base.clone();
        moved[i] = s;
        moved[j] = err;
        prop_assert_eq!(clearing_price(&inst, &moved).to_bits(), clearing_price(&inst, &base).to_bits());
    }

    #[test]
    fn price_rises_by_delta_over_b(seed in any::<u64>(), delta in 1e-3..10.0_f64) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r);
        let sens = sensitivity(&inst);
        let y = inst.true_values();
        let n = r.random_range(0..inst.n_agents());
        let mut bumped = y.clone();
        bumped[n] += delta;
        let rise = clearing_price(&inst, &bumped) - clearing_price(&inst, &y);
        prop_assert!(rise > 0.0);
        prop_assert!(rel_err(rise, delta / sens.b_total) < 1e-8, "{rise} vs {}", delta / sens.b_total);
    }

    #[test]
    fn heterogeneous_without_peer_links_is_per_agent_homogeneous(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n_agents = r.random_range(2..=10);
        let mut raw = random_raw(&mut r, n_agents);
        raw.topology.edges = (1..n_agents).map(|m| Edge { n: 0, m, kappa: None }).collect();
        let matrix = random_price_matrix(&mut r, n_agents);
        raw.topology.prices = PriceMode::Heterogeneous { matrix: matrix.clone() };
        let inst = validate_instance(raw).unwrap();
        let (y_hat, _) = random_profile(&mut r, &inst, 3.0);
        let out = equilibrium_decisions(&inst, &y_hat);
        let cost = trade_cost_heterogeneous(&inst, &out).unwrap();
        let mut root = 0.0;
        for n in 1..n_agents {
            let want = matrix[0][n] * out.q_net[n];
            prop_assert!((cost[n] - want).abs() <= 1e-12 * want.abs().max(1.0));
            root -= want;
        }
        prop_assert!((cost[0] - root).abs() <= 1e-10 * root.abs().max(1.0));
    }

    #[test]
    fn privacy_price_and_variance_agree(
        seed in any::<u64>(),
        y in -50.0..50.0_f64,
        dev in prop_oneof![-5.0..-1e-3_f64, 1e-3..5.0_f64],
        a_budget in 0.01..100.0_f64,
    ) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r);
        let sens = sensitivity(&inst);
        let n = r.random_range(0..inst.n_agents());
        let y_hat = y + dev;
        let v = optimal_variance(y, y_hat, a_budget);
        let price = privacy_price(&sens, n, y, y_hat);
        prop_assert!(price.beta_sum > 0.0);
        let from_price = p2p_market::privacy::variance_from_price(&sens, n, a_budget, price);
        prop_assert!(rel_err(from_price, v) < 1e-12, "{from_price} vs {v}");
        let check = kl_budget_satisfied(y, y_hat, v, a_budget);
        prop_assert!(check.satisfied);
        prop_assert!(check.slack.abs() <= 1e-12 * (dev * dev), "slack {}", check.slack);
    }

    #[test]
    fn privacy_quantities_scale_with_reports(
        seed in any::<u64>(),
        y in -50.0..50.0_f64,
        y_hat in -50.0..50.0_f64,
        t in prop_oneof![-10.0..-0.1_f64, 0.1..10.0_f64],
        a_budget in 0.01..100.0_f64,
    ) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r);
        let sens = sensitivity(&inst);
        let n = r.random_range(0..inst.n_agents());
        let base = privacy_price(&sens, n, y, y_hat).beta_sum;
        let scaled = privacy_price(&sens, n, t * y, t * y_hat).beta_sum;
        prop_assert!((scaled - t.abs() * base).abs() <= 1e-12 * scaled.abs().max(1e-300) + 1e-300);
        let v = optimal_variance(y, y_hat, a_budget);
        let vt = optimal_variance(t * y, t * y_hat, a_budget);
        prop_assert!((vt - t * t * v).abs() <= 1e-12 * vt.abs().max(1e-300) + 1e-300);
    }

    #[test]
    fn cost_depends_on_others_only_through_the_sum(seed in any::<u64>()) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r);
        let (y_hat, v) = random_profile(&mut r, &inst, 3.0);
        let n = r.random_range(0..inst.n_agents());
        let mut others: Vec<f64> = y_hat.iter().enumerate().filter(|&(m, _)| m != n).map(|(_, x)| *x).collect();
        others.shuffle(&mut r);
        let mut permuted = others;
        permuted.insert(n, y_hat[n]);
        prop_assert_eq!(
            expected_cost(&inst, n, &permuted, &v).to_bits(),
            expected_cost(&inst, n, &y_hat, &v).to_bits()
        );
    }

    #[test]
    fn serialization_round_trips_bit_exactly(seed in any::<u64>(), heterogeneous in any::<bool>()) {
        let mut r = rng(seed);
        let inst = if heterogeneous { random_heterogeneous(&mut r) } else { random_instance(&mut r) };
        let back = load_instance(&model::serialize_instance(&inst)).unwrap();
        prop_assert_eq!(back, inst);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn cost_gradient_matches_finite_differences(seed in any::<u64>(), heterogeneous in any::<bool>()) {
        // Central differences with step 1e-6, evaluated on the exact-arithmetic
        // cost so that cancellation does not swamp small gradients.
        let mut r = rng(seed);
        let inst = if heterogeneous { random_heterogeneous(&mut r) } else { random_instance(&mut r) };
        let (y_hat, v) = random_profile(&mut r, &inst, 3.0);
        let grad = pseudo_gradient(&inst, &y_hat, &v, OperatorVariant::CostGradient);
        let exact_y: Vec<oracle::Q> = y_hat.iter().map(|x| oracle::q(*x)).collect();
        let exact_v: Vec<oracle::Q> = v.iter().map(|x| oracle::q(*x)).collect();
        let model = oracle::ExactModel::new(&inst);
        let h = oracle::q(1e-6);
        let two_h = &h + &h;
        for n in 0..inst.n_agents() {
            let (mut up, mut down) = (exact_y.clone(), exact_y.clone());
            up[n] += &h;
            down[n] -= &h;
            let fd = (model.expected_cost(n, &up, &exact_v)
                - model.expected_cost(n, &down, &exact_v))
                / &two_h;
            let fd = oracle::to_f64(&fd);
            prop_assert!(rel_err(grad.grad_y[n], fd) < 1e-6, "agent {n}: fd {fd} vs {}", grad.grad_y[n]);

            let (mut up, mut down) = (exact_v.clone(), exact_v.clone());
            up[n] += &h;
            down[n] -= &h;
            let fd = (model.expected_cost(n, &exact_y, &up)
                - model.expected_cost(n, &exact_y, &down))
                / &two_h;
            let fd = oracle::to_f64(&fd);
            prop_assert!(rel_err(grad.grad_v[n], fd) < 1e-6, "agent {n} (V): fd {fd} vs {}", grad.grad_v[n]);
        }
    }

    #[test]
    fn expected_cost_matches_exact_oracle(seed in any::<u64>(), heterogeneous in any::<bool>()) {
        let mut r = rng(seed);
        let inst = if heterogeneous { random_heterogeneous(&mut r) } else { random_instance(&mut r) };
        let (y_hat, v) = random_profile(&mut r, &inst, 3.0);
        let exact_y: Vec<oracle::Q> = y_hat.iter().map(|x| oracle::q(*x)).collect();
        let exact_v: Vec<oracle::Q> = v.iter().map(|x| oracle::q(*x)).collect();
        let model = oracle::ExactModel::new(&inst);
        for n in 0..inst.n_agents() {
            let want = oracle::to_f64(&model.expected_cost(n, &exact_y, &exact_v));
            let got = expected_cost(&inst, n, &y_hat, &v);
            // Costs can nearly cancel; compare on the scale of the total cost level.
            prop_assert!((got - want).abs() <= 1e-11 * want.abs().max(100.0), "agent {n}: {got} vs {want}");
        }
    }

    #[test]
    fn potential_tracks_unilateral_deviations(seed in any::<u64>()) {
        let mut r = rng(seed);
        let inst = equal_share_instance(&mut r);
        prop_assert!(game::has_equal_shares(&inst));
        let worst = potential_identity_error(&inst, 50, &mut r);
        prop_assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn trade_costs_sum_to_zero_under_homogeneous_prices(seed in any::<u64>()) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r);
        let out = equilibrium_decisions(&inst, &inst.true_values());
        let cost = trade_costs(&inst, &out).unwrap();
        let total: f64 = cost.iter().sum();
        prop_assert!(total.abs() < 1e-9, "{total}");
    }
}

fn arbitrary_f64() -> impl Strategy<Value = f64> {
    prop_oneof![
        4 => -100.0..100.0_f64,
        1 => Just(0.0),
        1 => Just(f64::NAN),
        1 => Just(f64::INFINITY),
        1 => Just(f64::NEG_INFINITY),
        1 => any::<f64>(),
    ]
}

fn arbitrary_agent() -> impl Strategy<Value = AgentParams> {
    (prop::collection::vec(arbitrary_f64(), 15), any::<bool>()).prop_map(|(f, bus)| AgentParams {
        id: 0,
        a: f[0],
        b: f[1],
        d: f[2],
        a_tilde: f[3],
        b_tilde: f[4],
        d_star: f[5],
        delta_g: f[6],
        g_min: f[7],
        g_max: f[8],
        d_min: f[9],
        d_max: f[10],
        omega_g: f[11],
        omega_d: f[12],
        alpha: f[13],
        a_budget: f[14],
        figure_bus: bus.then_some(2),
    })
}

fn arbitrary_raw() -> impl Strategy<Value = RawInstance> {
    let edge = (0..8usize, 0..8usize, prop::option::of(arbitrary_f64())).prop_map(|(n, m, kappa)| Edge { n, m, kappa });
    let prices = prop_oneof![
        arbitrary_f64().prop_map(|c| PriceMode::Homogeneous { c }),
        prop::collection::vec(prop::collection::vec(arbitrary_f64(), 0..7), 0..7)
            .prop_map(|matrix| PriceMode::Heterogeneous { matrix }),
    ];
    (
        prop::collection::vec(arbitrary_agent(), 0..7),
        prop::collection::vec(edge, 0..12),
        prices,
        arbitrary_f64(),
    )
        .prop_map(|(agents, edges, prices, p0)| RawInstance { agents, topology: RawTopology { edges, prices }, p0 })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn validation_is_total(raw in arbitrary_raw()) {
        match validate_instance(raw) {
            Ok(inst) => prop_assert!(inst.n_agents() >= 1),
            Err(errs) => prop_assert!(!errs.is_empty()),
        }
    }

    #[test]
    fn loading_arbitrary_text_never_panics(text in "\\PC{0,200}") {
        let _ = load_instance(&text);
    }
}
