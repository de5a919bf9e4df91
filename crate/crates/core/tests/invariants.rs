use gridprobe_core::feeder::{lift_phi, Feeder, Line, Load};
use gridprobe_core::graph::{build_index, enumerate_spanning_trees, random_tree, UnionFind};
use gridprobe_core::ident::{pi_matrix, project_s0, PriorMask};
use gridprobe_core::identifiability::{recover_tree, DEFAULT_TOL};
use gridprobe_core::probing::{simulate, Design, GridModel, NoiseConfig, ProbingPlan};
use gridprobe_core::verify::project_capped_simplex;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_feeder(seed: u64, bus_count: usize) -> Feeder {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_tree(&mut rng, bus_count);
    let lines: Vec<Line> = g
        .edges()
        .map(|(p, c)| Line::new(p, c, rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)))
        .collect();
    let status = vec![true; lines.len()];
    Feeder::new(bus_count, lines, status, vec![]).unwrap()
}

/// A random tree plus `extra` switchable chords.
fn random_meshed(seed: u64, bus_count: usize, extra: usize) -> Feeder {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_tree(&mut rng, bus_count);
    let mut lines: Vec<Line> = g
        .edges()
        .map(|(p, c)| Line::new(p, c, rng.random_range(0.5..2.0), 1.0).switchable())
        .collect();
    let mut status = vec![true; lines.len()];
    let mut tries = 0;
    while lines.len() < bus_count - 1 + extra && tries < 100 {
        tries += 1;
        let a = rng.random_range(0..bus_count);
        let b = rng.random_range(0..bus_count);
        let dup = lines
            .iter()
            .any(|l| (l.from, l.to) == (a, b) || (l.from, l.to) == (b, a));
        if a != b && !dup {
            lines.push(Line::new(a, b, rng.random_range(0.5..2.0), 1.0).switchable());
            status.push(false);
        }
    }
    Feeder::new(bus_count, lines, status, vec![]).unwrap()
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn path_sum_resistance_inverts_laplacian(seed in any::<u64>(), n in 2usize..15) {
        let f = random_feeder(seed, n);
        let r = f.resistance_matrix();
        let prod = &r * f.energized_laplacian();
        prop_assert!(max_abs(&(prod - DMatrix::identity(n - 1, n - 1))) < 1e-9);
    }

    #[test]
    fn resistance_rows_peak_on_the_diagonal(seed in any::<u64>(), n in 3usize..15) {
        let f = random_feeder(seed, n);
        let r = f.resistance_matrix();
        let idx = build_index(f.graph());
        for m in 1..n {
            for k in 1..n {
                if k == m {
                    continue;
                }
                prop_assert!(r[(m - 1, m - 1)] >= r[(m - 1, k - 1)] - 1e-12);
                if idx.is_leaf(m) {
                    prop_assert!(r[(m - 1, m - 1)] > r[(m - 1, k - 1)]);
                }
            }
        }
    }

    #[test]
    fn lifted_offdiagonal_mass_is_trace_with_pi(seed in any::<u64>(), n in 2usize..15) {
        let f = random_feeder(seed, n);
        let theta = f.energized_laplacian();
        let phi = lift_phi(&theta);
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| phi[(i, j)].abs())
            .sum();
        let tr = (&theta * pi_matrix(n - 1)).trace();
        prop_assert!((off - tr).abs() <= 1e-9 * tr);
    }

    #[test]
    fn leaf_columns_rebuild_the_tree(seed in any::<u64>(), n in 3usize..15) {
        let f = random_feeder(seed, n);
        let leaves = build_index(f.graph()).leaves().to_vec();
        let sel: Vec<usize> = leaves.iter().map(|l| l - 1).collect();
        let cols = f.resistance_matrix().select_columns(&sel);
        let rec = recover_tree(&cols, &leaves, DEFAULT_TOL).unwrap();
        let mut got = rec.graph.edge_set();
        let mut want = f.graph().edge_set();
        got.sort_unstable();
        want.sort_unstable();
        prop_assert_eq!(got, want);
        for line in f.lines() {
            let r = rec.resistance[line.to];
            prop_assert!(((r - line.r) / line.r).abs() < 1e-9);
        }
    }

    #[test]
    fn laplacian_of_n_lines_is_pd_exactly_on_spanning_trees(seed in any::<u64>(), n in 3usize..9, extra in 1usize..4, mask in any::<u32>()) {
        let f = random_meshed(seed, n, extra);
        let l = f.lines().len();
        // N of the L lines, chosen by rotating `mask` through the lines.
        let mut b = vec![0.0; l];
        let mut k = mask as usize;
        for _ in 0..n - 1 {
            let free: Vec<usize> = (0..l).filter(|&i| b[i] == 0.0).collect();
            b[free[k % free.len()]] = 1.0;
            k /= free.len();
            k += mask as usize >> 7;
        }
        let theta = f.reduced_laplacian(&b);
        let eig = theta.symmetric_eigen().eigenvalues;
        let pd = eig.min() > 1e-9 * eig.max();
        let mut uf = UnionFind::new(n);
        let mut joined = 0;
        for (line, &on) in f.lines().iter().zip(&b) {
            if on == 1.0 && uf.union(line.from, line.to) {
                joined += 1;
            }
        }
        prop_assert_eq!(pd, joined == n - 1);
    }

    #[test]
    fn capped_simplex_projection_is_feasible_and_idempotent(
        y in prop::collection::vec(-3.0f64..3.0, 2..12),
        pick in any::<prop::sample::Index>(),
    ) {
        let n = pick.index(y.len() + 1);
        let b = project_capped_simplex(&y, n).unwrap();
        prop_assert!(b.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
        prop_assert!((b.iter().sum::<f64>() - n as f64).abs() < 1e-9);
        let again = project_capped_simplex(&b, n).unwrap();
        for (a, c) in b.iter().zip(&again) {
            prop_assert!((a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn capped_simplex_projection_is_nearest(
        y in prop::collection::vec(-3.0f64..3.0, 2..10),
        z in prop::collection::vec(-3.0f64..3.0, 10),
        pick in any::<prop::sample::Index>(),
    ) {
        let n = pick.index(y.len() + 1);
        let b = project_capped_simplex(&y, n).unwrap();
        let other = project_capped_simplex(&z[..y.len()], n).unwrap();
        let d = |p: &[f64]| y.iter().zip(p).map(|(a, c)| (a - c) * (a - c)).sum::<f64>();
        prop_assert!(d(&b) <= d(&other) + 1e-9);
    }

    #[test]
    fn s0_projection_meets_row_constraints(seed in any::<u64>(), n in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let root_pairs: Vec<(usize, usize)> = (1..n).map(|i| (i, i + 1)).collect();
        for mask in [PriorMask::full(n), PriorMask::from_candidates(n, &root_pairs).unwrap()] {
            let p = project_s0(&y, &mask);
            for i in 0..n {
                prop_assert!(p.row(i).sum() >= -1e-12);
            }
            prop_assert!(max_abs(&(project_s0(&p, &mask) - &p)) < 1e-12);
        }
    }

    #[test]
    fn noiseless_linear_probing_reads_resistance_columns(seed in any::<u64>(), n in 3usize..12) {
        let f = random_feeder(seed, n)
            .with_loads(vec![Load { p: 0.1, q: 0.03 }; n])
            .unwrap();
        let buses = build_index(f.graph()).leaves().to_vec();
        let deltas: Vec<f64> = buses.iter().map(|&b| 0.5 + b as f64).collect();
        let plan = ProbingPlan::new(&buses, &deltas, Design::Paired).unwrap();
        let data = simulate(&f, &plan, &NoiseConfig::noiseless(), GridModel::Linear, 0).unwrap();
        let expected = f.resistance_matrix() * plan.selection(n - 1) * plan.delta();
        prop_assert!(max_abs(&(&data.v_tilde - &expected)) < 1e-12 * max_abs(&expected).max(1.0));
    }
}

#[test]
fn complete_graphs_have_cayley_many_spanning_trees() {
    for n in 2..=6usize {
        let edges: Vec<(usize, usize)> = (0..n).flat_map(|a| ((a + 1)..n).map(move |b| (a, b))).collect();
        let trees = enumerate_spanning_trees(n, &edges, &vec![false; edges.len()], 10_000).unwrap();
        assert_eq!(trees.len(), n.pow(n as u32 - 2), "K{n}");
    }
}

#[test]
fn simulation_is_deterministic_per_seed_and_run() {
    let f = random_feeder(7, 9).with_loads(vec![Load { p: 0.005, q: 0.002 }; 9]).unwrap();
    let buses = build_index(f.graph()).leaves().to_vec();
    let plan = ProbingPlan::new(&buses, &vec![0.01; buses.len()], Design::Paired).unwrap();
    let noise = NoiseConfig {
        meas_rel_accuracy: 1e-3,
        load_sigma_rel: 0.05,
        gamma: 0.0,
        seed: 11,
    };
    let a = simulate(&f, &plan, &noise, GridModel::Ac, 3).unwrap();
    let b = simulate(&f, &plan, &noise, GridModel::Ac, 3).unwrap();
    let c = simulate(&f, &plan, &noise, GridModel::Ac, 4).unwrap();
    assert_eq!(a.v_tilde, b.v_tilde);
    assert_ne!(a.v_tilde, c.v_tilde);
}
