//! Property tests over the core invariants.

use num_complex::Complex64;
use proptest::prelude::*;

use xfcsi_core::baselines::soft_threshold;
use xfcsi_core::channel::{
    cosine_similarity, nmse, stack_real, to_angular, to_spatial, unstack_complex, ChannelMatrix,
    Domain,
};
use xfcsi_core::flow::{conditional_velocity, interpolate};
use xfcsi_core::ode::integrate;
use xfcsi_core::tensor::Tensor;

fn channel_strategy(max_dim: usize) -> impl Strategy<Value = ChannelMatrix> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(|(n_ue, n_bs)| {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n_ue * n_bs).prop_map(
            move |values| {
                let entries = values
                    .into_iter()
                    .map(|(re, im)| Complex64::new(re, im))
                    .collect();
                ChannelMatrix::new(n_ue, n_bs, entries, Domain::Spatial).unwrap()
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn stack_unstack_bit_exact(h in channel_strategy(8)) {
        let t = stack_real(&h);
        prop_assert_eq!(unstack_complex(&t, Domain::Spatial), h);
    }

    #[test]
    fn angular_round_trip_small(h in channel_strategy(8)) {
        let back = to_spatial(&to_angular(&h).unwrap()).unwrap();
        let diff = back.sub(&h).unwrap().frob_norm();
        prop_assert!(diff < 1e-10, "round trip drift {diff}");
    }

    #[test]
    fn nmse_of_scaled_estimate_matches_closed_form(
        h in channel_strategy(6),
        c in -3.0f64..3.0,
    ) {
        prop_assume!(h.frob_norm() > 1e-6);
        let est = h.scale(Complex64::new(c, 0.0));
        let got = nmse(&h, &est).unwrap().linear;
        let want = (1.0 - c) * (1.0 - c);
        prop_assert!((got - want).abs() < 1e-9 * (1.0 + want));
    }

    #[test]
    fn cosine_similarity_in_unit_interval(
        a in channel_strategy(6),
        scale in 0.1f64..5.0,
    ) {
        prop_assume!(a.frob_norm() > 1e-6);
        let b = a.scale(Complex64::new(0.0, scale));
        let v = cosine_similarity(&a, &b).unwrap();
        prop_assert!((0.0..=1.0 + 1e-9).contains(&v));
    }

    #[test]
    fn interpolation_affine_identity(
        vals0 in proptest::collection::vec(-2.0f64..2.0, 6),
        vals1 in proptest::collection::vec(-2.0f64..2.0, 6),
        t in 0.0f64..1.0,
    ) {
        let x0 = Tensor::new(&[6], vals0).unwrap();
        let x1 = Tensor::new(&[6], vals1).unwrap();
        let u = conditional_velocity(&x0, &x1).unwrap();
        // x_t + (1 - t) u == x1
        let mut xt = interpolate(&x0, &x1, t, 0.0, &Tensor::zeros(&[6])).unwrap();
        xt.axpy(1.0 - t, &u).unwrap();
        prop_assert!(xt.max_abs_diff(&x1) < 1e-12);
        // Antisymmetry of the conditional velocity.
        let v = conditional_velocity(&x1, &x0).unwrap();
        prop_assert_eq!(u.scale(-1.0), v);
    }

    #[test]
    fn soft_threshold_shrinks_magnitude_keeps_phase(
        re in -5.0f64..5.0,
        im in -5.0f64..5.0,
        theta in 0.0f64..3.0,
    ) {
        let z = Complex64::new(re, im);
        let out = soft_threshold(z, theta);
        let want_mag = (z.norm() - theta).max(0.0);
        prop_assert!((out.norm() - want_mag).abs() < 1e-12);
        if out.norm() > 1e-12 {
            prop_assert!((out.arg() - z.arg()).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_velocity_field_integrates_exactly(
        vals in proptest::collection::vec(-3.0f64..3.0, 4),
        c in proptest::collection::vec(-3.0f64..3.0, 4),
        k in 1usize..12,
    ) {
        let x0 = Tensor::new(&[4], vals).unwrap();
        let cv = Tensor::new(&[4], c).unwrap();
        let trace = integrate(&x0, |_, _| Ok(cv.clone()), k).unwrap();
        let want = x0.add(&cv).unwrap();
        prop_assert!(trace.terminal().max_abs_diff(&want) < 1e-12);
        prop_assert_eq!(trace.states.len(), k + 1);
    }
}
