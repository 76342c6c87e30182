use lfmamba::autograd::Tape;
use lfmamba::blocks::ess2d_map;
use lfmamba::checkpoint::{decode, encode};
use lfmamba::geometry::augment::Dihedral;
use lfmamba::geometry::resize::bicubic_resize;
use lfmamba::geometry::{from_slice, to_slice, SliceKind};
use lfmamba::net::NetworkConfig;
use lfmamba::nn::ParamStore;
use lfmamba::ssm::kernel::{parallel_scan, recurrence, DiagonalSsm, DiscreteSsm, Discretization};
use lfmamba::{Extents, LightField, Tensor};
use proptest::prelude::*;

fn extents() -> impl Strategy<Value = Extents> {
    (1usize..4, 1usize..4, 1usize..6, 1usize..6).prop_map(|(u, v, h, w)| Extents::new(u, v, h, w))
}

fn light_field() -> impl Strategy<Value = LightField<f64>> {
    (extents(), 1usize..3).prop_flat_map(|(e, c)| {
        proptest::collection::vec(-1.0f64..1.0, e.views() * e.h * e.w * c)
            .prop_map(move |d| LightField::new(Tensor::new(vec![e.u, e.v, e.h, e.w, c], d).unwrap()).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slices_round_trip(lf in light_field()) {
        for kind in SliceKind::ALL {
            prop_assert_eq!(from_slice(&to_slice(&lf, kind)).unwrap(), lf.clone());
        }
    }

    #[test]
    fn dihedral_invert_undoes_apply(lf in light_field(), k in 0usize..8) {
        let g = Dihedral::all()[k];
        let square = lf.extents().u == lf.extents().v;
        prop_assume!(square || g.rot.is_multiple_of(2));
        prop_assert_eq!(g.invert(&g.apply(&lf).unwrap()).unwrap(), lf);
    }

    #[test]
    fn bicubic_keeps_constants(h in 2usize..9, w in 2usize..9, c in -2.0f64..2.0, s in 1usize..4) {
        let img = Tensor::full(&[h, w, 1], c);
        let up = bicubic_resize(&img, s as f64).unwrap();
        prop_assert_eq!(up.shape(), &[h * s, w * s, 1][..]);
        for &x in up.data() {
            prop_assert!((x - c).abs() < 1e-12);
        }
    }

    #[test]
    fn ess2d_identity_map(b in 1usize..3, h in 1usize..6, w in 1usize..6, q in 1usize..3, seed in any::<u64>()) {
        let shape = [b, h, w, 4 * q];
        let mut state = seed;
        let x = Tensor::<f64>::from_fn(&shape, |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        });
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let y = ess2d_map(&mut tape, v, |_, _, s| Ok(s)).unwrap();
        prop_assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn parallel_scan_matches_recurrence(
        n in 1usize..5,
        xs in proptest::collection::vec(-1.0f64..1.0, 1..80),
        delta in 0.01f64..1.0,
    ) {
        let a: Vec<f64> = (1..=n).map(|k| -(k as f64)).collect();
        let b: Vec<f64> = (0..n).map(|k| 0.5 + 0.1 * k as f64).collect();
        let c: Vec<f64> = (0..n).map(|k| 1.0 - 0.2 * k as f64).collect();
        let ssm = DiscreteSsm::Invariant(
            DiagonalSsm::from_continuous(&a, &b, &c, delta, Some(0.3), Discretization::Zoh).unwrap(),
        );
        let seq = recurrence(&ssm, &xs).unwrap();
        let par = parallel_scan(&ssm, &xs).unwrap();
        for (s, p) in seq.iter().zip(&par) {
            prop_assert!((s - p).abs() < 1e-10);
        }
    }

    #[test]
    fn checkpoint_round_trip(shapes in proptest::collection::vec(proptest::collection::vec(1usize..4, 0..4), 1..5)) {
        let mut store = ParamStore::<f32>::new();
        for (i, s) in shapes.iter().enumerate() {
            let t = Tensor::from_fn(s, |idx| idx.iter().sum::<usize>() as f32 * 0.25 - i as f32);
            store.add(format!("p{i}"), t).unwrap();
        }
        let records = decode::<f32>(&encode(&store)).unwrap();
        prop_assert_eq!(records.len(), store.len());
        for ((name, t), (_, p)) in records.iter().zip(store.iter()) {
            prop_assert_eq!(name, &p.name);
            prop_assert_eq!(t, &p.value);
        }
    }

    #[test]
    fn config_toml_round_trip(scale in prop_oneof![Just(2usize), Just(4)], channels in 1usize..5, blocks in 1usize..4) {
        let mut cfg = NetworkConfig::sr(scale);
        cfg.channels = 8 * channels;
        cfg.blocks_per_subspace = blocks;
        prop_assert_eq!(NetworkConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
