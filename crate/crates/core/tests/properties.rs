use bitscale::distill::topkld_probs;
use bitscale::genmodels::ar::softmax;
use bitscale::numerics::{cholesky, spearman_rho};
use bitscale::oracle::pareto_brute;
use bitscale::quant::{calibrate_uniform, fake_quant_self, FpFormat, Granularity, QuantSpec};
use bitscale::scaling::{pareto_frontier, BitAxis, ExperimentRecord};
use bitscale::tolerance::{distinct_levels, inject_noise};
use bitscale::{Matrix, RngStream};
use proptest::prelude::*;
use rand_chacha::rand_core::{RngCore, SeedableRng};

fn tensor() -> impl Strategy<Value = Matrix> {
    (1usize..5, 1usize..9).prop_flat_map(|(r, c)| {
        prop::collection::vec(-1e3f64..1e3, r * c).prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
    })
}

proptest! {
    #[test]
    fn fake_quant_is_idempotent_and_bounded(x in tensor(), bits in 2u32..9, per_row in any::<bool>()) {
        let spec = QuantSpec::int(bits, if per_row { Granularity::PerRow } else { Granularity::PerTensor }).unwrap();
        let y = fake_quant_self(&x, &spec, 1.0, 1.0).unwrap();
        let cal = calibrate_uniform(&x, &spec, 1.0, 1.0).unwrap();
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                let s = cal.params_at(r, c).s;
                prop_assert!((x[(r, c)] - y[(r, c)]).abs() <= s / 2.0);
            }
        }
        let cal_y = calibrate_uniform(&y, &spec, 1.0, 1.0).unwrap();
        let yy = bitscale::quant::fake_quant(&y, &cal).unwrap();
        prop_assert_eq!(&yy, &y);
        prop_assert_eq!(cal_y.params.len(), cal.params.len());
    }

    #[test]
    fn fp_round_is_monotone_idempotent_and_odd(a in -1e3f64..1e3, b in -1e3f64..1e3, fmt in prop::sample::select(vec![(2u32, 1u32), (3, 2), (4, 3), (5, 2)])) {
        let f = FpFormat::new(fmt.0, fmt.1).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(f.round(lo) <= f.round(hi));
        prop_assert_eq!(f.round(f.round(a)), f.round(a));
        prop_assert_eq!(f.round(-a), -f.round(a));
        prop_assert!(f.round(a).abs() <= f.max_normal());
    }

    #[test]
    fn spearman_is_bounded_and_symmetric(v in prop::collection::vec((-10f64..10.0, -10f64..10.0), 3..30)) {
        let (x, y): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        if let (Ok(a), Ok(b)) = (spearman_rho(&x, &y), spearman_rho(&y, &x)) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_reconstructs_spd(v in prop::collection::vec(-2f64..2.0, 16)) {
        let a = Matrix::from_vec(4, 4, v).unwrap();
        let spd = a.t_matmul(&a).unwrap().add(&Matrix::identity(4)).unwrap();
        let l = cholesky(&spd).unwrap();
        prop_assert!(l.matmul_t(&l).unwrap().max_abs_diff(&spd) < 1e-10);
    }

    #[test]
    fn topkld_vanishes_on_equal_distributions(logits in prop::collection::vec(-5f64..5.0, 2..12), k in 0usize..12) {
        let p = softmax(&logits);
        let k = k.min(p.len());
        prop_assert!(topkld_probs(&p, &p, k).abs() <= 1e-12);
    }

    #[test]
    fn frontier_matches_brute_force(recs in prop::collection::vec((1u64..30, 2u32..9, prop::sample::select(vec![8u32, 16]), 0u32..12), 1..40)) {
        let recs: Vec<ExperimentRecord> = recs
            .into_iter()
            .enumerate()
            .map(|(i, (n, w, a, q))| ExperimentRecord { label: format!("r{i}"), n_params: n, w_bits: w, a_bits: a, quality: q as f64 })
            .collect();
        for axis in [BitAxis::Mt, BitAxis::Ct] {
            let f = pareto_frontier(&recs, axis);
            prop_assert_eq!(&f, &pareto_brute(&recs, axis));
            prop_assert!(f.windows(2).all(|w| w[1].quality <= w[0].quality));
        }
    }

    #[test]
    fn noise_scales_with_snr(seed in any::<u64>(), snr in -10f64..40.0) {
        let feature: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin() + 0.5).collect();
        let a = inject_noise(&feature, snr, &mut RngStream::new(seed, 1)).unwrap();
        let b = inject_noise(&feature, snr + 20.0, &mut RngStream::new(seed, 1)).unwrap();
        let na: f64 = a.iter().zip(&feature).map(|(x, f)| (x - f).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().zip(&feature).map(|(x, f)| (x - f).powi(2)).sum::<f64>().sqrt();
        // Same direction, tenfold amplitude per 20 dB.
        prop_assert!((na / nb - 10.0).abs() < 1e-9);
    }

    #[test]
    fn distinct_levels_is_at_most_len(v in prop::collection::vec(-5f64..5.0, 0..20)) {
        let n = distinct_levels(&v, 1e-6);
        prop_assert!(n <= v.len());
        prop_assert_eq!(n == 0, v.is_empty());
    }
}

#[test]
fn rng_stream_is_chacha8_with_stream_id() {
    for (seed, stream) in [(0u64, 0u64), (42, 7), (u64::MAX, 0x544F_4C4E)] {
        let mut ours = RngStream::new(seed, stream);
        let mut reference = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        reference.set_stream(stream);
        for _ in 0..16 {
            assert_eq!(ours.next_u64(), reference.next_u64());
        }
    }
}

#[test]
fn split_streams_do_not_depend_on_parent_position() {
    let a = RngStream::new(5, 9);
    let mut b = RngStream::new(5, 9);
    for _ in 0..10 {
        b.next_u64();
    }
    assert_eq!(a.split(3).next_u64(), b.split(3).next_u64());
    assert_ne!(a.split(3).next_u64(), a.split(4).next_u64());
}
