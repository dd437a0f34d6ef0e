//! Randomized invariants over the numerics, GP, network and harness layers.

use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;

use bofn::acquisition::{ei_closed_form, ei_fn_saa, Method};
use bofn::gp::{matern52_ard, GpHyperparameters, NodePosterior};
use bofn::harness::{summarize, RunTrace, TraceRow};
use bofn::netmodel::NetworkModel;
use bofn::network::{evaluate_network, NetworkProblem, NetworkTopology, NodeFunction, NodeKind};
use bofn::numerics::{
    bounded_minimize, cholesky_with_jitter, inverse_normal_cdf, project, sobol_normal_matrix, BoxBounds,
    MinimizeOptions, SimplexConstraint,
};

fn hyper(dim: usize) -> impl Strategy<Value = GpHyperparameters> {
    (-2.0f64..2.0, 0.1f64..5.0, prop::collection::vec(0.05f64..2.0, dim)).prop_map(|(m, s, l)| GpHyperparameters {
        constant_mean: m,
        output_scale: s,
        length_scales: l,
    })
}

fn points(dim: usize, n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, dim), n)
}

/// Drops points closer than `gap` to an earlier one.
fn spread(xs: Vec<Vec<f64>>, gap: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for x in xs {
        let far = out.iter().all(|y| x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= gap);
        if far {
            out.push(x);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cholesky_reconstructs_spd(n in 1usize..50, seed in any::<u64>()) {
        let mut s = seed | 1;
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let b = DMatrix::from_fn(n, n, |_, _| next());
        let a = &b * b.transpose() + DMatrix::identity(n, n) * n as f64;
        let l = cholesky_with_jitter(&a).unwrap();
        prop_assert_eq!(l.jitter_used(), 0.0);
        let dev = (l.reconstruct() - &a).abs().max() / a.abs().max();
        prop_assert!(dev <= 1e-10, "deviation {dev:e}");
    }

    #[test]
    fn inverse_cdf_is_strictly_increasing(u in 1e-12f64..0.5, d in 1e-9f64..0.49) {
        let a = inverse_normal_cdf(u).unwrap();
        let b = inverse_normal_cdf(u + d).unwrap();
        prop_assert!(b > a);
        prop_assert!((inverse_normal_cdf(1.0 - u).unwrap() + a).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn sobol_seeds(seed in any::<u64>(), other in any::<u64>()) {
        let a = sobol_normal_matrix(64, 3, seed).unwrap();
        prop_assert_eq!(&a, &sobol_normal_matrix(64, 3, seed).unwrap());
        if seed != other {
            prop_assert_ne!(a, sobol_normal_matrix(64, 3, other).unwrap());
        }
    }

    #[test]
    fn projection_is_feasible_and_idempotent(
        x in prop::collection::vec(-5.0f64..5.0, 4),
        cap in 0.5f64..3.0,
    ) {
        let bounds = BoxBounds::uniform(4, 0.0, 1.0).unwrap();
        let c = SimplexConstraint::new(cap).unwrap();
        let p = project(&x, &bounds, Some(&c));
        prop_assert!(bounds.contains(&p, 1e-12));
        prop_assert!(c.is_satisfied(&p, 1e-10));
        let q = project(&p, &bounds, Some(&c));
        prop_assert!(p.iter().zip(&q).all(|(a, b)| (a - b).abs() <= 1e-12));
    }

    #[test]
    fn minimizer_stays_feasible(
        target in prop::collection::vec(-3.0f64..3.0, 3),
        curv in prop::collection::vec(0.1f64..10.0, 3),
        start in prop::collection::vec(0.0f64..1.0, 3),
        cap in prop::option::of(0.3f64..2.5),
    ) {
        let bounds = BoxBounds::uniform(3, 0.0, 1.0).unwrap();
        let c = cap.map(|v| SimplexConstraint::new(v).unwrap());
        let start = project(&start, &bounds, c.as_ref());
        let f = |x: &[f64]| {
            let v = x.iter().zip(&target).zip(&curv).map(|((a, t), k)| k * (a - t).powi(2)).sum();
            let g = x.iter().zip(&target).zip(&curv).map(|((a, t), k)| 2.0 * k * (a - t)).collect();
            (v, g)
        };
        let f0 = f(&start).0;
        let r = bounded_minimize(f, &start, &bounds, c.as_ref(), &MinimizeOptions::default()).unwrap();
        prop_assert!(bounds.contains(&r.argmin, 1e-12));
        if let Some(c) = &c {
            prop_assert!(c.is_satisfied(&r.argmin, 1e-10));
        }
        prop_assert!(r.value <= f0);
    }

    #[test]
    fn kernel_is_symmetric_and_bounded(h in hyper(3), a in points(3, 2..3)) {
        let k = matern52_ard(&a[0], &a[1], &h);
        prop_assert_eq!(k, matern52_ard(&a[1], &a[0], &h));
        prop_assert!(k > 0.0 && k <= h.output_scale);
        prop_assert!((matern52_ard(&a[0], &a[0], &h) - h.output_scale).abs() <= 1e-12 * h.output_scale);
    }

    #[test]
    fn variance_does_not_grow_with_data(h in hyper(2), xs in points(2, 3..12), probes in points(2, 50..51)) {
        let xs = spread(xs, 0.05);
        prop_assume!(xs.len() >= 2);
        let ys: Vec<f64> = xs.iter().map(|x| (4.0 * x[0]).sin() + x[1]).collect();
        let n = xs.len();
        let small = NodePosterior::new(h.clone(), &xs[..n - 1], &ys[..n - 1]).unwrap();
        let big = NodePosterior::new(h, &xs, &ys).unwrap();
        for p in &probes {
            prop_assert!(big.predict(p).1 <= small.predict(p).1 + 1e-8);
        }
    }

    #[test]
    fn predictive_covariance_is_psd(h in hyper(2), xs in points(2, 2..10), probes in points(2, 10..11)) {
        let xs = spread(xs, 0.05);
        let ys: Vec<f64> = xs.iter().map(|x| x[0] * x[1]).collect();
        let post = NodePosterior::new(h.clone(), &xs, &ys).unwrap();
        let cov = post.covariance(&probes);
        let sym = (&cov + cov.transpose()) * 0.5;
        let min = sym.symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-8 * h.output_scale, "min eigenvalue {min:e}");
    }

    #[test]
    fn ei_is_monotone(mean in -3.0f64..3.0, sd in 0.0f64..3.0, g in -3.0f64..3.0, dm in 0.0f64..1.0, ds in 0.0f64..1.0) {
        let base = ei_closed_form(mean, sd, g);
        prop_assert!(base >= 0.0);
        prop_assert!(ei_closed_form(mean + dm, sd, g) >= base - 1e-12);
        if mean <= g {
            prop_assert!(ei_closed_form(mean, sd + ds, g) >= base - 1e-12);
        }
    }

    #[test]
    fn chain_network_composes(x in prop::collection::vec(-2.0f64..2.0, 2)) {
        let topo = NetworkTopology::chain(2, vec![vec![0, 1], vec![1]]).unwrap();
        let f1: NodeFunction = Arc::new(|x: &[f64], _: &[f64]| x[0] * x[0] + x[1]);
        let f2: NodeFunction = Arc::new(|x: &[f64], y: &[f64]| (y[0] * x[0]).cos());
        let bounds = BoxBounds::uniform(2, -2.0, 2.0).unwrap();
        let p = NetworkProblem::from_node_functions("chain", topo, vec![NodeKind::Surrogate; 2], bounds, vec![f1, f2])
            .unwrap();
        let h = evaluate_network(&p, &x).unwrap();
        let h1 = x[0] * x[0] + x[1];
        prop_assert_eq!(h, vec![h1, (h1 * x[1]).cos()]);
    }

    #[test]
    fn summary_mean_and_monotone_best(leaves in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 1..5)) {
        let traces: Vec<RunTrace> = leaves
            .iter()
            .enumerate()
            .map(|(rep, ls)| {
                let mut best = f64::NEG_INFINITY;
                let rows = ls
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| {
                        best = best.max(g);
                        TraceRow { iter: i, x: vec![0.0], h: vec![g], best, wall_ms: 0.0 }
                    })
                    .collect();
                RunTrace {
                    problem_id: "synthetic".into(),
                    method: Method::Random,
                    rep_index: rep,
                    seed: rep as u64,
                    initial_size: 2,
                    rows,
                    incumbent: vec![0.0],
                    incumbent_value: best,
                }
            })
            .collect();
        let summary = summarize(&traces, Some(5.0));
        prop_assert_eq!(summary.len(), 6);
        for (i, row) in summary.iter().enumerate() {
            let mean = traces.iter().map(|t| t.rows[i].best).sum::<f64>() / traces.len() as f64;
            prop_assert!((row.mean_best - mean).abs() <= 1e-12);
            prop_assert!(row.se_best >= 0.0);
        }
        prop_assert!(summary.windows(2).all(|w| w[1].mean_best >= w[0].mean_best));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn ei_fn_is_nonnegative(probe in prop::collection::vec(0.0f64..1.0, 1), seed in 0u64..1000) {
        let topo = NetworkTopology::chain(1, vec![vec![0], vec![]]).unwrap();
        let f1: NodeFunction = Arc::new(|x: &[f64], _: &[f64]| (5.0 * x[0]).sin());
        let f2: NodeFunction = Arc::new(|_: &[f64], y: &[f64]| -y[0] * y[0]);
        let bounds = BoxBounds::uniform(1, 0.0, 1.0).unwrap();
        let p = NetworkProblem::from_node_functions("nonneg", topo, vec![NodeKind::Surrogate; 2], bounds, vec![f1, f2])
            .unwrap();
        let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0]).collect();
        let hs: Vec<Vec<f64>> = xs.iter().map(|x| evaluate_network(&p, x).unwrap()).collect();
        let model = NetworkModel::new(p, seed).ingest_batch(&xs, &hs).unwrap();
        let z = sobol_normal_matrix(64, 2, seed).unwrap();
        let (v, g) = ei_fn_saa(&model, &probe, &z, model.log().g_star().unwrap());
        prop_assert!(v >= 0.0);
        prop_assert!(g.iter().all(|d| d.is_finite()));
    }
}
