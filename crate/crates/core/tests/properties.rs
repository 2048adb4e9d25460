use fleetcount::abstraction::{contract_set, expand_set, quantize, ContinuousCountingSet, DiscreteCountingSet, Grid, Region};
use fleetcount::aggregate::{
    circulate, conservative_joint, coprime_partition, grouped_joint, joint_maxcnt, maxcnt, step, x_count,
};
use fleetcount::control::{advance, FleetDiscreteState};
use fleetcount::graph::{enumerate_simple_cycles, period, scc, Cycle, LabeledDigraph};
use fleetcount::model::{Domain, Mode, Polynomial};
use fleetcount::rounding::{apportion_weights, pseudo_periodic};
use fleetcount::solver::{solve_ilp, LinearProgram, Sense, SolverOptions};
use proptest::prelude::*;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn ring_cycle(len: usize) -> (LabeledDigraph, Cycle) {
    let edges: Vec<(usize, usize, usize)> = (0..len).map(|q| (q, 0, (q + 1) % len)).collect();
    let g = LabeledDigraph::from_edges(len, 1, &edges).unwrap();
    let c = Cycle::new((0..len).map(|q| (q, 0)).collect(), &g).unwrap();
    (g, c)
}

fn graph_strategy(max_nodes: usize, n_modes: usize) -> impl Strategy<Value = LabeledDigraph> {
    (1..=max_nodes).prop_flat_map(move |n| {
        prop::collection::vec(prop::option::weighted(0.7, 0..n), n * n_modes).prop_map(move |succ| {
            let edges: Vec<(usize, usize, usize)> =
                succ.iter().enumerate().filter_map(|(i, d)| d.map(|d| (i / n_modes, i % n_modes, d))).collect();
            LabeledDigraph::from_edges(n, n_modes, &edges).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn polynomial_derivative_matches_finite_difference(
        coeffs in prop::collection::vec(-2.0f64..2.0, 1..5),
        exps in prop::collection::vec((0u32..4, 0u32..4), 5),
        x in prop::collection::vec(-1.5f64..1.5, 2),
    ) {
        let pairs: Vec<(f64, Vec<u32>)> = coeffs.iter().zip(&exps).map(|(c, (a, b))| (*c, vec![*a, *b])).collect();
        let refs: Vec<(f64, &[u32])> = pairs.iter().map(|(c, e)| (*c, e.as_slice())).collect();
        let p = Polynomial::from_pairs(&refs);
        let h = 1e-6;
        for k in 0..2 {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[k] += h;
            lo[k] -= h;
            let fd = (p.eval(&hi) - p.eval(&lo)) / (2.0 * h);
            prop_assert!((p.derivative(k).eval(&x) - fd).abs() < 1e-4 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn linear_flow_matches_exponential(a in 0.1f64..3.0, x0 in -2.0f64..2.0, tau in 0.01f64..0.5) {
        let mode = Mode::new("decay", vec![Polynomial::from_pairs(&[(-a, &[1])])], a, 1.0, a, 0.0).unwrap();
        let x = mode.nominal_flow(&[x0], tau).unwrap();
        prop_assert!((x[0] - x0 * (-a * tau).exp()).abs() < 1e-6);
    }

    #[test]
    fn quantization_is_idempotent_and_close(x in prop::collection::vec(-10.0f64..10.0, 1..4), eta in 0.01f64..1.0) {
        let q = quantize(&x, eta);
        for (v, p) in x.iter().zip(&q) {
            prop_assert!((v - p).abs() <= 0.5 * eta + 1e-9);
        }
        let qq = quantize(&q, eta);
        for (a, b) in q.iter().zip(&qq) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_locate_inverts_point(w in 0.5f64..3.0, h in 0.5f64..3.0, eta in 0.1f64..0.5) {
        let grid = Grid::new(Domain::new(vec![-w, -h], vec![w, h]).unwrap(), eta).unwrap();
        for idx in (0..grid.len()).step_by(7) {
            prop_assert_eq!(grid.locate(&grid.point(idx)), Some(idx));
        }
    }

    #[test]
    fn contracted_set_inside_expanded_set(
        lo in prop::collection::vec(-1.5f64..0.0, 2),
        span in prop::collection::vec(0.0f64..1.5, 2),
        eps in 0.0f64..0.3,
        outside in any::<bool>(),
    ) {
        let grid = Grid::new(Domain::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap(), 0.2).unwrap();
        let hi: Vec<f64> = lo.iter().zip(&span).map(|(l, s)| l + s).collect();
        let region = if outside { Region::Outside { lo, hi } } else { Region::Box { lo, hi } };
        let set = ContinuousCountingSet { region: region.clone(), modes: None, bound: 1.0 };
        let ex = expand_set(&set, eps, &grid, 1);
        let co = contract_set(&set, eps, &grid, 1);
        prop_assert!(co.is_subset_of(&ex));
        // every grid point lying in the set belongs to the expansion
        for q in 0..grid.len() {
            if region.contains(&grid.point(q)) {
                prop_assert!(ex.contains(q, 0));
            }
        }
    }

    #[test]
    fn scc_partitions_nodes_and_period_divides_cycles(g in graph_strategy(9, 2)) {
        let comps = scc(&g);
        let mut seen = vec![0usize; g.n_nodes()];
        for c in &comps {
            for &q in &c.nodes {
                seen[q] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&k| k == 1));
        let cycles = enumerate_simple_cycles(&g, 9, 10_000).unwrap();
        for cy in &cycles {
            prop_assert!(Cycle::new(cy.steps().to_vec(), &g).is_ok());
            prop_assert!(cy.is_simple());
            let comp = comps.iter().find(|c| c.nodes.contains(&cy.state(0))).unwrap();
            prop_assert!(cy.states().all(|q| comp.nodes.contains(&q)));
            let p = period(&g, comp).unwrap();
            prop_assert_eq!(cy.len() % p, 0);
        }
    }

    #[test]
    fn maxcnt_equals_shift_maximum(
        alpha in prop::collection::vec(0.0f64..5.0, 1..12),
        mask in prop::collection::vec(any::<bool>(), 12),
    ) {
        let (_, c) = ring_cycle(alpha.len());
        let pairs: Vec<(usize, usize)> = (0..alpha.len()).filter(|&i| mask[i]).map(|i| (i, 0)).collect();
        let x = DiscreteCountingSet::from_pairs(alpha.len(), 1, &pairs, 0.0);
        let brute = (0..alpha.len()).map(|s| {
            circulate(&alpha, s).iter().enumerate().filter(|(i, _)| mask[*i]).map(|(_, a)| a).sum::<f64>()
        }).fold(0.0, f64::max);
        prop_assert!((maxcnt(&c, &alpha, &x) - brute).abs() < 1e-9);
        // total over all shifts is |C ∩ X| times the mass
        let total: f64 = (0..alpha.len()).map(|s| x_count(&c, &alpha, s, &x)).sum();
        let mass: f64 = alpha.iter().sum();
        prop_assert!((total - pairs.len() as f64 * mass).abs() < 1e-6);
    }

    #[test]
    fn grouped_counts_bound_joint_count(
        lens in prop::collection::vec(1usize..7, 1..4),
        seed_alpha in prop::collection::vec(0.0f64..3.0, 24),
        mask in prop::collection::vec(any::<bool>(), 24),
    ) {
        // disjoint rings stacked in one node space
        let n: usize = lens.iter().sum();
        let mut edges = Vec::new();
        let mut steps = Vec::new();
        let mut off = 0;
        for &l in &lens {
            for i in 0..l {
                edges.push((off + i, 0, off + (i + 1) % l));
            }
            steps.push((off..off + l).map(|q| (q, 0)).collect::<Vec<_>>());
            off += l;
        }
        let g = LabeledDigraph::from_edges(n, 1, &edges).unwrap();
        let cycles: Vec<Cycle> = steps.into_iter().map(|s| Cycle::new(s, &g).unwrap()).collect();
        let alphas: Vec<Vec<f64>> = cycles.iter().map(|c| {
            let q0 = c.state(0);
            (0..c.len()).map(|i| seed_alpha[q0 + i]).collect()
        }).collect();
        let pairs: Vec<(usize, usize)> = (0..n).filter(|&q| mask[q]).map(|q| (q, 0)).collect();
        let x = DiscreteCountingSet::from_pairs(n, 1, &pairs, 0.0);
        let joint = joint_maxcnt(&cycles, &alphas, &x, 1_000_000).unwrap();
        let groups = coprime_partition(&lens);
        for (a, ga) in groups.iter().enumerate() {
            for gb in groups.iter().skip(a + 1) {
                for &i in ga {
                    for &j in gb {
                        prop_assert_eq!(gcd(lens[i], lens[j]), 1);
                    }
                }
            }
        }
        let exact = grouped_joint(&cycles, &alphas, &x, &groups, 1_000_000).unwrap();
        prop_assert!((joint - exact).abs() < 1e-9);
        prop_assert!(conservative_joint(&cycles, &alphas, &x) >= joint - 1e-9);
        let sum_single: f64 = cycles.iter().zip(&alphas).map(|(c, a)| maxcnt(c, a, &x)).sum();
        prop_assert!(sum_single >= joint - 1e-9);
    }

    #[test]
    fn aggregate_step_conserves_mass(g in graph_strategy(10, 3), w in prop::collection::vec(0u32..6, 10), picks in prop::collection::vec(0usize..3, 10)) {
        let n = g.n_nodes();
        let nm = g.n_modes();
        let mut w: Vec<f64> = w[..n].iter().map(|v| *v as f64).collect();
        let mut r = vec![0.0; n * nm];
        for q in 0..n {
            let acts: Vec<usize> = g.actions(q).map(|(m, _)| m).collect();
            if acts.is_empty() {
                w[q] = 0.0;
            } else {
                r[q * nm + acts[picks[q] % acts.len()]] = w[q];
            }
        }
        let next = step(&w, &r, &g, 0.0).unwrap();
        prop_assert_eq!(next.iter().sum::<f64>(), w.iter().sum::<f64>());
    }

    #[test]
    fn fleet_advance_matches_aggregate_step(g in graph_strategy(10, 3), ids in prop::collection::vec(0usize..10, 1..30), picks in prop::collection::vec(0usize..3, 30)) {
        let n = g.n_nodes();
        let nm = g.n_modes();
        let states: Vec<usize> = ids.iter().map(|q| q % n).filter(|&q| g.actions(q).next().is_some()).collect();
        prop_assume!(!states.is_empty());
        let modes: Vec<usize> = states.iter().enumerate().map(|(k, &q)| {
            let acts: Vec<usize> = g.actions(q).map(|(m, _)| m).collect();
            acts[picks[k] % acts.len()]
        }).collect();
        let fleet = FleetDiscreteState::new(states.clone());
        let next = advance(&g, &fleet, &modes).unwrap();
        let mut r = vec![0.0; n * nm];
        for (&q, &m) in states.iter().zip(&modes) {
            r[q * nm + m] += 1.0;
        }
        let w: Vec<f64> = fleet.histogram(n).iter().map(|v| *v as f64).collect();
        let expected = step(&w, &r, &g, 0.0).unwrap();
        let got: Vec<f64> = next.histogram(n).iter().map(|v| *v as f64).collect();
        prop_assert_eq!(got, expected);
        prop_assert_eq!(next.time, fleet.time + 1);
    }

    #[test]
    fn apportionment_preserves_total(weights in prop::collection::vec(0.0f64..10.0, 1..12)) {
        let out = apportion_weights(&weights).unwrap();
        let total = weights.iter().sum::<f64>().round() as u64;
        prop_assert_eq!(out.iter().sum::<u64>(), total);
        for (o, w) in out.iter().zip(&weights) {
            prop_assert!(*o as f64 >= w.floor() && *o as f64 <= w.floor() + 1.0);
        }
    }

    #[test]
    fn pseudo_periodic_is_balanced(len in 1usize..20, n in 0u64..100) {
        let a = pseudo_periodic(len, n);
        prop_assert_eq!(a.iter().sum::<f64>(), n as f64);
        let max = a.iter().cloned().fold(f64::MIN, f64::max);
        let min = a.iter().cloned().fold(f64::MAX, f64::min);
        prop_assert!(max - min <= 1.0);
        // any window of k consecutive positions holds at most ceil(k n / len) + 1
        for k in 1..=len {
            for s in 0..len {
                let w: f64 = (0..k).map(|i| a[(s + i) % len]).sum();
                prop_assert!(w <= (k as f64 * n as f64 / len as f64).ceil() + 1.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ilp_feasibility_matches_enumeration(
        coeffs in prop::collection::vec(prop::collection::vec(-3i32..4, 3), 1..4),
        rhs in prop::collection::vec(-4i32..8, 4),
        senses in prop::collection::vec(0u8..3, 4),
        ubs in prop::collection::vec(0u32..4, 3),
    ) {
        let mut lp = LinearProgram::new();
        for (j, ub) in ubs.iter().enumerate() {
            lp.add_column(format!("x{j}"), 0.0, *ub as f64, true);
        }
        let sense_of = |s: u8| match s { 0 => Sense::Le, 1 => Sense::Ge, _ => Sense::Eq };
        for (i, row) in coeffs.iter().enumerate() {
            let c: Vec<(usize, f64)> = row.iter().enumerate().filter(|(_, a)| **a != 0).map(|(j, a)| (j, *a as f64)).collect();
            lp.add_row(format!("r{i}"), c, sense_of(senses[i]), rhs[i] as f64);
        }
        let mut brute = false;
        for a in 0..=ubs[0] {
            for b in 0..=ubs[1] {
                for c in 0..=ubs[2] {
                    let x = [a as f64, b as f64, c as f64];
                    if lp.check_point(&x, 1e-9).is_none() {
                        brute = true;
                    }
                }
            }
        }
        let res = solve_ilp(&lp, &SolverOptions::default()).unwrap();
        prop_assert_eq!(res.is_feasible(), brute);
        if let Some(x) = res.point {
            prop_assert!(lp.check_point(&x, 1e-9).is_none());
            prop_assert!(x.iter().all(|v| v.fract() == 0.0));
        }
    }
}
