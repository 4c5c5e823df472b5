use std::sync::OnceLock;

use proptest::prelude::*;

use salem_core::mitigation::{
    arithmetic_mean, bitflip_bound, depolarizing_bound, geometric_mean, harmonic_mean, iv_weights, salem_bound, variance_bound,
};
use salem_core::p2lc::{logical_class_of, logical_inverse_norm, tv_distance, Characterization, Conditioning, JointTable, P2lc};
use salem_core::pauli::{inverse_norm, invert_channel, logical_channel, PauliChannel, PauliOp};
use salem_core::steane::SteaneCycle;

fn steane(eps: f64) -> (SteaneCycle, JointTable) {
    let c = SteaneCycle::new(eps).unwrap();
    let t = JointTable::build(&c, 2).unwrap();
    (c, t)
}

fn characterization() -> &'static Characterization {
    static F: OnceLock<Characterization> = OnceLock::new();
    F.get_or_init(|| {
        let (c, t) = steane(4e-4);
        P2lc::new(&c, &t).characterize(Conditioning::default())
    })
}

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6..1.0f64, n).prop_map(|v| {
        let t: f64 = v.iter().sum();
        v.into_iter().map(|x| x / t).collect()
    })
}

/// Random partition labels for `n` syndromes into `k` subsets.
fn labels(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..k, n)
}

/// Subset probabilities and probability-weighted mean error rates.
fn coarse(p: &[f64], eps: &[f64], lab: &[usize], k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut pk = vec![0.0; k];
    let mut ek = vec![0.0; k];
    for ((&pi, &ei), &l) in p.iter().zip(eps).zip(lab) {
        pk[l] += pi;
        ek[l] += pi * ei;
    }
    for i in 0..k {
        if pk[i] > 0.0 {
            ek[i] /= pk[i];
        }
    }
    (pk, ek)
}

fn bitflip(e: f64) -> f64 {
    logical_inverse_norm(&[1.0 - e, e, 0.0, 0.0]).powi(2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    // (a)
    #[test]
    fn harmonic_below_geometric(p in distribution(12), g in prop::collection::vec(1.0..1e3f64, 12)) {
        let h = harmonic_mean(&p, &g);
        let gm = geometric_mean(&p, &g);
        prop_assert!(h <= gm * (1.0 + 1e-12), "{h} > {gm}");
        prop_assert!(gm <= arithmetic_mean(&p, &g) * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    // (b)
    #[test]
    fn iv_weights_are_optimal(n in prop::collection::vec(1.0..1e4f64, 3), g in prop::collection::vec(1.0..50.0f64, 3)) {
        let best = variance_bound(&n, &g, &iv_weights(&n, &g));
        // harmonic-mean form of the optimum
        let closed = 1.0 / n.iter().zip(&g).map(|(a, b)| a / b).sum::<f64>();
        prop_assert!((best - closed).abs() <= 1e-12 * closed);
        let steps = 50;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let w = [i as f64, j as f64, (steps - i - j) as f64];
                prop_assert!(variance_bound(&n, &g, &w) >= best * (1.0 - 1e-12));
            }
        }
    }

    // (c) with a bit-flip QP overhead, W^2 = (1 - 2 eps)^-2
    #[test]
    fn coarse_graining_and_rejection_order(
        p in distribution(10),
        eps in prop::collection::vec(0.0..0.45f64, 10),
        lab in labels(10, 3),
        rej in 0usize..3,
    ) {
        let g_fg = harmonic_mean(&p, &eps.iter().map(|&e| bitflip(e)).collect::<Vec<_>>());
        let (pk, ek) = coarse(&p, &eps, &lab, 3);
        let gk: Vec<f64> = ek.iter().map(|&e| bitflip(e)).collect();
        let g_cg = harmonic_mean(&pk, &gk);
        let e_all: f64 = p.iter().zip(&eps).map(|(a, b)| a * b).sum();
        let g_ext = bitflip(e_all);
        prop_assert!(g_fg <= g_cg * (1.0 + 1e-9), "{g_fg} {g_cg}");
        prop_assert!(g_cg <= g_ext * (1.0 + 1e-9), "{g_cg} {g_ext}");

        let acc: Vec<usize> = (0..3).filter(|&k| k != rej).collect();
        let p_acc: f64 = acc.iter().map(|&k| pk[k]).sum();
        prop_assume!(p_acc > 0.0);
        let g_rej = harmonic_mean(&acc.iter().map(|&k| pk[k]).collect::<Vec<_>>(), &acc.iter().map(|&k| gk[k]).collect::<Vec<_>>()) / p_acc;
        prop_assert!(g_rej >= g_cg * (1.0 - 1e-9), "{g_rej} < {g_cg}");
        // rejecting a subset whose overhead is infinite costs nothing
        let mut inf = gk.clone();
        inf[rej] = f64::INFINITY;
        prop_assert!((harmonic_mean(&pk, &inf) - g_rej).abs() <= 1e-9 * g_rej);
    }

    // (c) with an exponential overhead e^(lambda eps)
    #[test]
    fn coarse_graining_order_exponential(p in distribution(10), eps in prop::collection::vec(0.0..0.5f64, 10), lab in labels(10, 4), lam in 1.0..8.0f64) {
        let f = |e: f64| (lam * e).exp();
        let g_fg = harmonic_mean(&p, &eps.iter().map(|&e| f(e)).collect::<Vec<_>>());
        let (pk, ek) = coarse(&p, &eps, &lab, 4);
        let g_cg = harmonic_mean(&pk, &ek.iter().map(|&e| f(e)).collect::<Vec<_>>());
        let g_ext = f(p.iter().zip(&eps).map(|(a, b)| a * b).sum());
        prop_assert!(g_fg <= g_cg * (1.0 + 1e-12) && g_cg <= g_ext * (1.0 + 1e-12));
    }

    // (d)
    #[test]
    fn qp_norm_lower_bound(w in prop::collection::vec(0.0..1.0f64, 3), eps in 0.0..0.2f64) {
        let t: f64 = w.iter().sum();
        prop_assume!(t > 1e-9);
        let l = [1.0 - eps, eps * w[0] / t, eps * w[1] / t, eps * w[2] / t];
        let bound = ((1.0 + eps) / (1.0 - eps)).powi(2);
        prop_assert!(logical_inverse_norm(&l).powi(2) >= bound * (1.0 - 1e-12));
    }

    #[test]
    fn qp_norm_lower_bound_two_qubits(w in prop::collection::vec(0.0..1.0f64, 15), eps in 0.0..0.1f64) {
        let t: f64 = w.iter().sum();
        prop_assume!(t > 1e-9);
        let paulis: Vec<PauliOp> = PauliOp::all(2).filter(|p| !p.is_identity()).collect();
        let mut terms = vec![(PauliOp::identity(2), 1.0 - eps)];
        terms.extend(paulis.iter().zip(&w).map(|(p, x)| (*p, eps * x / t)));
        let ch = PauliChannel::from_terms(2, terms).unwrap();
        let bound = ((1.0 + eps) / (1.0 - eps)).powi(2);
        prop_assert!(inverse_norm(&ch).powi(2) >= bound * (1.0 - 1e-12));
    }

    // (g)
    #[test]
    fn subset_channels_recombine(tau in 0.0..1.0f64) {
        let ch = characterization();
        let st = ch.subset_stats(&ch.partition(tau));
        for i in 0..4 {
            let v = st.p_s0 * st.channel0[i] + st.p_s1 * st.channel1[i];
            prop_assert!((v - ch.channel[i]).abs() < 1e-12);
        }
    }

    // syndrome-aware lower bound never exceeds the syndrome-blind one
    #[test]
    fn salem_bound_below_blind_bound(p in distribution(8), eps in prop::collection::vec(0.0..0.3f64, 8), depth in 0.5..40.0f64) {
        let e: f64 = p.iter().zip(&eps).map(|(a, b)| a * b).sum();
        let bf: Vec<f64> = eps.iter().map(|&x| bitflip_bound(x, depth)).collect();
        prop_assert!(salem_bound(&p, &bf) <= bitflip_bound(e, depth) * (1.0 + 1e-12));
        let dep: Vec<f64> = eps.iter().map(|&x| depolarizing_bound(x, depth)).collect();
        prop_assert!(salem_bound(&p, &dep) <= depolarizing_bound(e, depth) * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    // (f) the sign-weighted estimator of a two-cycle memory averages to <Z> = 1 exactly
    #[test]
    fn two_cycle_estimator_is_exact(
        p0 in 0.05..0.95f64,
        e in prop::collection::vec(0.0..0.15f64, 8),
        coarse in any::<bool>(),
    ) {
        // two syndromes per cycle; each has its own conditional channel over I, X, Y, Z
        let chans: Vec<[f64; 4]> = (0..2).map(|s| [1.0 - e[4 * s] - e[4 * s + 1] - e[4 * s + 2], e[4 * s], e[4 * s + 1], e[4 * s + 2]]).collect();
        prop_assume!(chans.iter().all(|c| c[0] > 0.1));
        let ps = [p0, 1.0 - p0];

        // fine-grained: invert each conditional channel
        let fg: Vec<_> = chans.iter().map(|c| invert_channel(&logical_channel(*c)).unwrap()).collect();
        // coarse-grained with a single subset: invert the average channel
        let avg: [f64; 4] = std::array::from_fn(|i| ps[0] * chans[0][i] + ps[1] * chans[1][i]);
        let cg = invert_channel(&logical_channel(avg)).unwrap();

        let flips_z = |cls: usize| cls == 1 || cls == 2;
        let mut total = 0.0;
        let mut bare = 0.0;
        for s1 in 0..2 {
            for s2 in 0..2 {
                let w = ps[s1] * ps[s2];
                for a in 0..4 {
                    for b in 0..4 {
                        let pe = w * chans[s1][a] * chans[s2][b];
                        if pe == 0.0 {
                            continue;
                        }
                        let z0 = if flips_z(a) != flips_z(b) { -1.0 } else { 1.0 };
                        bare += pe * z0;
                        let (q1, q2) = if coarse { (&cg, &cg) } else { (&fg[s1], &fg[s2]) };
                        for (c1, w1) in q1.paulis.iter().zip(&q1.quasi) {
                            for (c2, w2) in q2.paulis.iter().zip(&q2.quasi) {
                                let f = flips_z(a) ^ flips_z(b) ^ flips_z(logical_class_of(c1)) ^ flips_z(logical_class_of(c2));
                                total += pe * w1 * w2 * if f { -1.0 } else { 1.0 };
                            }
                        }
                    }
                }
            }
        }
        prop_assert!((total - 1.0).abs() < 1e-12, "E[o] = {total}");
        // the unmitigated value is biased whenever some channel flips Z
        let fz: f64 = chans.iter().zip(&ps).map(|(c, p)| p * (c[1] + c[2])).sum();
        prop_assert!((bare - (1.0 - 2.0 * fz).powi(2)).abs() < 1e-12);
    }
}

// (e) the estimated channel approaches the exact recursion at second order
#[test]
fn channel_estimate_error_is_second_order() {
    let mut ratios = Vec::new();
    for eps in [1.6e-3, 8e-4, 4e-4, 2e-4] {
        let (c, t) = steane(eps);
        let p = P2lc::new(&c, &t);
        let est = p.characterize(Conditioning::default());
        let exact = p.exact_window_channel().unwrap();
        let r = tv_distance(&est.channel, &exact) / (est.eps_l * eps);
        println!("eps {eps:e}: eps_L {:.4e}, dist/(eps_L eps) = {r:.4}", est.eps_l);
        ratios.push(r);
    }
    assert!(ratios.iter().all(|r| r.is_finite()));
    for w in ratios.windows(2) {
        assert!(w[1] <= 1.5 * w[0] + 1e-9, "{ratios:?}");
    }
    let max = ratios.iter().cloned().fold(0.0, f64::max);
    assert!(max < 100.0, "{ratios:?}");
}
