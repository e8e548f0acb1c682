mod common;

use nvdp::accountant::bdp_epsilon;
use nvdp::embedding_io::{decode_embeddings, encode_embeddings, EmbeddingRecord, Label};
use nvdp::posterior::{deserialize_posterior, pad_to_length, serialize_posterior};
use nvdp::renyi::{rd_dp_posteriors, rd_gaussian_diag, RenyiOrder};
use nvdp::special::{digamma, gamma_p, gamma_p_inv, gamma_q, log_gamma, log_sum_exp, trigamma};
use proptest::prelude::*;

fn order(l: f64) -> RenyiOrder {
    RenyiOrder::new(l).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn log_gamma_recurrence(x in 1e-3f64..1e3) {
        let lhs = log_gamma(x + 1.0).unwrap() - log_gamma(x).unwrap();
        let scale = log_gamma(x + 1.0).unwrap().abs().max(1.0);
        prop_assert!((lhs - x.ln()).abs() <= 1e-13 * scale, "{lhs} vs {}", x.ln());
    }

    #[test]
    fn digamma_is_log_gamma_slope(x in 0.5f64..50.0) {
        let h = 1e-5;
        let fd = (log_gamma(x + h).unwrap() - log_gamma(x - h).unwrap()) / (2.0 * h);
        prop_assert!((digamma(x).unwrap() - fd).abs() < 1e-7 * fd.abs().max(1.0));
    }

    #[test]
    fn trigamma_is_digamma_slope(x in 0.5f64..50.0) {
        let h = 1e-5;
        let fd = (digamma(x + h).unwrap() - digamma(x - h).unwrap()) / (2.0 * h);
        prop_assert!((trigamma(x).unwrap() - fd).abs() < 1e-6 * fd.abs().max(1.0));
    }

    #[test]
    fn log_sum_exp_shift_invariance(v in prop::collection::vec(-50.0f64..50.0, 1..20), c in -500.0f64..500.0) {
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let a = log_sum_exp(&v).unwrap() + c;
        let b = log_sum_exp(&shifted).unwrap();
        prop_assert!((a - b).abs() < 1e-11 * a.abs().max(1.0));
    }

    #[test]
    fn incomplete_gamma_halves_sum_to_one(a in 0.05f64..50.0, x in 1e-3f64..100.0) {
        let s = gamma_p(a, x).unwrap() + gamma_q(a, x).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-13);
    }

    #[test]
    fn quantile_inverts_cdf(a in 0.1f64..30.0, p in 0.01f64..0.99) {
        let x = gamma_p_inv(a, p).unwrap();
        prop_assert!((gamma_p(a, x).unwrap() - p).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn self_divergence_vanishes(seed in any::<u64>(), n in 1usize..7, d in 1usize..9, l in 1.0001f64..20.0) {
        let q = common::random_posterior(&mut common::rng(seed), n, d);
        let v = rd_dp_posteriors(&q, &q, order(l)).unwrap().value;
        prop_assert!(v.abs() <= 1e-9, "{v}");
    }

    #[test]
    fn divergence_is_non_negative(seed in any::<u64>(), n in 1usize..5, d in 1usize..5, l in 1.0001f64..10.0) {
        let mut r = common::rng(seed);
        let q = common::random_posterior(&mut r, n, d);
        let qp = common::random_posterior(&mut r, n, d);
        let v = rd_dp_posteriors(&q, &qp, order(l)).unwrap().value;
        prop_assert!(v >= -1e-9, "{v}");
    }

    #[test]
    fn divergence_non_decreasing_in_order(seed in any::<u64>(), n in 1usize..5, d in 1usize..5) {
        let mut r = common::rng(seed);
        let q = common::random_posterior(&mut r, n, d);
        let qp = common::random_posterior(&mut r, n, d);
        let mut prev = f64::NEG_INFINITY;
        for l in [1.0001, 1.1, 1.5, 2.0, 3.0, 5.0, 10.0, 50.0] {
            let v = rd_dp_posteriors(&q, &qp, order(l)).unwrap().value;
            prop_assert!(v >= prev - 1e-9, "λ={l}: {v} < {prev}");
            prev = v;
        }
    }

    #[test]
    fn gaussian_divergence_non_decreasing_in_order(seed in any::<u64>(), d in 1usize..6) {
        let [mu, s, mp, sp] = common::random_gaussian_pair(&mut common::rng(seed), d, 1.0);
        let mut prev = f64::NEG_INFINITY;
        for l in [1.0001, 1.1, 2.0, 4.0, 16.0] {
            let v = rd_gaussian_diag(&mu, &s, &mp, &sp, order(l)).unwrap().value;
            prop_assert!(v >= prev - 1e-9);
            prev = v;
        }
    }

    #[test]
    fn accountant_monotone_in_entries(
        row in prop::collection::vec(0.0f64..5.0, 1..30),
        k in any::<prop::sample::Index>(),
        bump in 0.0f64..3.0,
        l in 1.01f64..10.0,
    ) {
        let k = k.index(row.len());
        let mut up = row.clone();
        up[k] += bump;
        let a = bdp_epsilon(&row, order(l), 1e-5).unwrap();
        let b = bdp_epsilon(&up, order(l), 1e-5).unwrap();
        prop_assert!(b >= a - 1e-12 * a.abs());
    }

    #[test]
    fn zero_floor_padding_keeps_total(seed in any::<u64>(), n in 1usize..5, extra in 0usize..4) {
        let q = common::random_posterior(&mut common::rng(seed), n, 3);
        let p = pad_to_length(&q, n + extra, 0.0).unwrap();
        prop_assert_eq!(p.alpha_total(), q.alpha_total());
        prop_assert_eq!(p.n(), n + extra);
        prop_assert_eq!(p.mu(p.n()), q.mu(n));
    }

    #[test]
    fn posterior_bytes_round_trip(seed in any::<u64>(), n in 1usize..6, d in 1usize..6) {
        let q = common::random_posterior(&mut common::rng(seed), n, d);
        let back = deserialize_posterior(&serialize_posterior(&q).unwrap()).unwrap();
        prop_assert_eq!(back, q);
    }

    #[test]
    fn embedding_bytes_round_trip(
        d in 1usize..5,
        recs in prop::collection::vec((".{0,12}", any::<i64>(), 1usize..4, any::<bool>()), 0..6),
        vals in prop::collection::vec(-1e30f32..1e30, 64),
    ) {
        let records: Vec<EmbeddingRecord> = recs
            .into_iter()
            .map(|(id, lab, n, int)| EmbeddingRecord {
                id,
                label: if int { Label::Int(lab) } else { Label::Real(lab as f64 / 7.0) },
                d,
                x: vals.iter().cycle().take(n * d).copied().collect(),
            })
            .collect();
        let (dd, back) = decode_embeddings(&encode_embeddings(&records).unwrap()).unwrap();
        if !records.is_empty() {
            prop_assert_eq!(dd, d);
        }
        prop_assert_eq!(back.len(), records.len());
        for (a, b) in back.iter().zip(&records) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(a.label, b.label);
            prop_assert!(a.x.iter().zip(&b.x).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }
}
