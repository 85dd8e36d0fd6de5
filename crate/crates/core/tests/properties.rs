//! Property tests for the invariants of each module.

use intail_core::baselines::levinson_durbin;
use intail_core::calibration::{
    calibrated_quantile, conformal_quantile, gpd_fit, gpd_quantile, GpdTail,
};
use intail_core::qpt::model::pinball;
use intail_core::ra::{achieved_bler, channel_usage, channel_usage_real};
use intail_core::scenario::mobility::distance;
use intail_core::scenario::{deploy, DeploymentConfig, MobilityModel};
use intail_core::split::{MessageKind, Participant, SplitMessage};
use intail_core::windowing::{
    label_cycle, lag_correlation, restructure, stationary_interval, Part, SplitSizes,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn series(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..0.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lag_correlation_is_bounded(s in series(40), lag in 1usize..20) {
        if let Ok(r) = lag_correlation(&s, lag) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        }
    }

    #[test]
    fn stationary_window_respects_threshold(
        s in prop::collection::vec(series(60), 1..4),
        phi in 0.05f64..0.95,
        max_lag in 1usize..15,
    ) {
        let rep = stationary_interval(&s, phi, max_lag).unwrap();
        prop_assert!(rep.window >= 1 && rep.window <= max_lag);
        for (sa, &w) in rep.per_sa_window.iter().enumerate() {
            prop_assert!(w >= 1 && w <= max_lag);
            let c = &rep.correlations[sa];
            prop_assert!(c[w - 1] >= phi || (w == 1 && c.iter().all(|&x| x < phi)));
            prop_assert!(c[w..].iter().all(|&x| x < phi));
            prop_assert!(c.iter().all(|&x| (-1.0 - 1e-12..=1.0 + 1e-12).contains(&x)));
        }
    }

    #[test]
    fn labels_follow_their_window(
        s in prop::collection::vec(series(50), 1..4),
        window in 1usize..10,
    ) {
        let ds = restructure(&s, window).unwrap();
        prop_assert_eq!(ds.len(), 50 - window);
        for j in 0..ds.len() {
            let k = label_cycle(window, j);
            prop_assert_eq!(k, j + window);
            for (sa, col) in s.iter().enumerate() {
                prop_assert_eq!(ds.label(j)[sa], col[k]);
                for lag in 0..window {
                    prop_assert_eq!(ds.input(j)[lag * s.len() + sa], col[j + lag]);
                }
            }
        }
    }

    #[test]
    fn partitions_are_disjoint(
        train in 1usize..20, cal in 1usize..20, test in 1usize..20, extra in 0usize..5,
    ) {
        let s = vec![(0..train + cal + test + extra + 3).map(|i| i as f64).collect::<Vec<_>>()];
        let mut ds = restructure(&s, 3).unwrap();
        ds.set_split(SplitSizes { train, cal, test }).unwrap();
        let (a, b, c) = (ds.range(Part::Train), ds.range(Part::Cal), ds.range(Part::Test));
        prop_assert_eq!(a.end, b.start);
        prop_assert_eq!(b.end, c.start);
        prop_assert_eq!((a.len(), b.len(), c.len()), (train, cal, test));
    }

    #[test]
    fn deployment_respects_geometry(seed in 0u64..1000, n in 2usize..10, steps in 0usize..50) {
        let cfg = DeploymentConfig {
            n_subnetworks: n,
            interferer_set_size: (n - 1).min(4),
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = deploy(&cfg, &mut rng).unwrap();
        for _ in 0..steps {
            st.step(MobilityModel::Rdmm, 1e-3, &mut rng);
        }
        for (i, p) in st.positions.iter().enumerate() {
            prop_assert!(p[0] >= 0.0 && p[0] <= cfg.area[0]);
            prop_assert!(p[1] >= 0.0 && p[1] <= cfg.area[1]);
            for q in &st.positions[i + 1..] {
                prop_assert!(distance(*p, *q) >= cfg.min_distance - 1e-9);
            }
            for o in &st.sa_offsets[i] {
                prop_assert!(o[0].hypot(o[1]) <= cfg.sn_radius + 1e-12);
            }
        }
    }

    #[test]
    fn conformal_score_is_the_order_statistic(
        r in prop::collection::vec(0.0f64..10.0, 1..200),
        beta in 0.01f64..0.99,
    ) {
        let cs = conformal_quantile(&r, beta).unwrap();
        prop_assert!(cs >= 0.0);
        let mut sorted = r.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let k = (((r.len() + 1) as f64) * (1.0 - beta)).ceil() as usize;
        prop_assert_eq!(cs, sorted[k.clamp(1, r.len()) - 1]);
        let looser = conformal_quantile(&r, (beta + 0.1).min(0.999)).unwrap();
        prop_assert!(looser <= cs);
    }

    #[test]
    fn gpd_fit_respects_support(
        shape in -0.3f64..0.5,
        scale in 0.2f64..5.0,
        seed in 0u64..1000,
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..300)
            .map(|_| {
                let u: f64 = rng.random();
                if shape.abs() < 1e-9 { -scale * (1.0 - u).ln() }
                else { scale / shape * ((1.0 - u).powf(-shape) - 1.0) }
            })
            .collect();
        let t = gpd_fit(&data).unwrap();
        prop_assert!(t.scale > 0.0);
        for &y in &data {
            prop_assert!(1.0 + t.shape * y / t.scale > 0.0);
        }
        if t.shape < 0.0 {
            let endpoint = t.scale / -t.shape;
            prop_assert!(endpoint.is_finite());
            prop_assert!(data.iter().all(|&y| y < endpoint));
        }
    }

    #[test]
    fn calibrated_prediction_dominates_threshold(
        u in -100.0f64..0.0,
        shape in -0.4f64..0.4,
        scale in 0.1f64..5.0,
        q in 0.0f64..0.99,
        cs in 0.0f64..10.0,
    ) {
        let tail = GpdTail { shape, scale, n_exceedances: 50, log_likelihood: 0.0, fallback: false };
        let v = calibrated_quantile(u, &tail, q, cs).unwrap();
        prop_assert!(v >= u + cs - 1e-12);
        if q > 0.0 {
            prop_assert!((v - u - cs - gpd_quantile(&tail, q).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn pinball_is_non_negative(f in -10.0f64..10.0, y in -10.0f64..10.0, a in 0.01f64..0.99) {
        prop_assert!(pinball(f, y, a) >= 0.0);
        prop_assert_eq!(pinball(y, y, a), 0.0);
    }

    #[test]
    fn blocklength_meets_target(
        gamma_db in -5.0f64..40.0,
        d in 1.0f64..5000.0,
        log_eps in -9.0f64..-1.0,
    ) {
        let g = 10f64.powf(gamma_db / 10.0);
        let eps = 10f64.powf(log_eps);
        let r = channel_usage(g, d, eps).unwrap();
        prop_assert!(r >= 1);
        let real = channel_usage_real(g, d, eps).unwrap();
        prop_assert!((r as f64) >= real && (r as f64) < real + 1.0);
        let b = achieved_bler(r as f64, g, d);
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!(b <= eps * (1.0 + 1e-9));
        // more interference than assumed never helps
        prop_assert!(achieved_bler(r as f64, g * 0.5, d) >= b);
    }

    #[test]
    fn levinson_durbin_solves_yule_walker(rho in -0.9f64..0.9, p in 1usize..6) {
        let r: Vec<f64> = (0..=p).map(|k| rho.powi(k as i32)).collect();
        let a = levinson_durbin(&r, 0.0);
        prop_assert_eq!(a.len(), p);
        for i in 0..p {
            let lhs: f64 = (0..p).map(|j| r[i.abs_diff(j)] * a[j]).sum();
            prop_assert!((lhs - r[i + 1]).abs() < 1e-9);
        }
    }

    #[test]
    fn message_codec_round_trips(
        kind in prop::bool::ANY,
        client in 0usize..64,
        up in prop::bool::ANY,
        seq in any::<u64>(),
        epoch in 0usize..1000,
        batch in 0usize..1000,
        rows in 0usize..6,
        cols in 0usize..6,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (source, dest) = if up {
            (Participant::Client(client), Participant::Server)
        } else {
            (Participant::Server, Participant::Client(client))
        };
        let msg = SplitMessage {
            kind: if kind { MessageKind::Activation } else { MessageKind::Gradient },
            source,
            dest,
            seq,
            epoch,
            batch,
            rows,
            cols,
            payload: (0..rows * cols).map(|_| rng.random_range(-1e3..1e3)).collect(),
        };
        prop_assert_eq!(msg.byte_size(), rows * cols * 8);
        let bytes = msg.encode();
        prop_assert_eq!(SplitMessage::decode(&bytes).unwrap(), msg);
        if !bytes.is_empty() {
            prop_assert!(SplitMessage::decode(&bytes[..bytes.len() - 1]).is_err());
        }
    }
}
