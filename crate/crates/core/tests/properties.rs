use proptest::prelude::*;

use mols::grouping::{GroupingScheme, ModuleTag, SchemeName};
use mols::model::{clip_global_norm, ModelConfig, ParamSet};
use mols::numerics::{Rng, Tensor};
use mols::optim::{Hyper, OptimizerKind, OptimizerState, SecondMoment, StepConfig};
use mols::scaling::{build_plan, DEFAULT_CLAMP_MAX};
use mols::snr::{effective_step, GradStats, SnrMode, SnrReport};

fn single(name: &str, data: Vec<f64>) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert(name, Tensor::from_vec(data).unwrap()).unwrap();
    p
}

fn stream(len: usize, count: impl Into<prop::collection::SizeRange>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-50.0f64..50.0, len), count)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn welford_merge_matches_concatenation(a in stream(3, 1..20), b in stream(3, 1..20)) {
        let proto = single("w", vec![0.0; 3]);
        let mut sa = GradStats::new(&proto);
        let mut sb = GradStats::new(&proto);
        let mut all = GradStats::new(&proto);
        for g in &a {
            sa.accumulate(&single("w", g.clone())).unwrap();
            all.accumulate(&single("w", g.clone())).unwrap();
        }
        for g in &b {
            sb.accumulate(&single("w", g.clone())).unwrap();
            all.accumulate(&single("w", g.clone())).unwrap();
        }
        let merged = sa.merge(&sb).unwrap();
        prop_assert_eq!(merged.count(), all.count());
        for i in 0..3 {
            let (m, r) = (&merged.tensors()[0], &all.tensors()[0]);
            prop_assert!((m.mean[i] - r.mean[i]).abs() <= 1e-10 * r.mean[i].abs().max(1.0));
            prop_assert!((m.m2[i] - r.m2[i]).abs() <= 1e-10 * r.m2[i].abs().max(1.0));
        }
        // merge order
        let other = sb.merge(&sa).unwrap();
        for i in 0..3 {
            let (x, y) = (other.tensors()[0].m2[i], merged.tensors()[0].m2[i]);
            prop_assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0));
        }
    }

    #[test]
    fn element_snr_scale_invariant(a in stream(4, 2..30), c in 0.01f64..100.0) {
        let proto = single("w", vec![0.0; 4]);
        let mut s1 = GradStats::new(&proto);
        let mut s2 = GradStats::new(&proto);
        for g in &a {
            s1.accumulate(&single("w", g.clone())).unwrap();
            s2.accumulate(&single("w", g.iter().map(|x| c * x).collect())).unwrap();
        }
        for i in 0..4 {
            let x = s1.element_snr(0, i, 0.0);
            let y = s2.element_snr(0, i, 0.0);
            match (x, y) {
                (Ok(x), Ok(y)) => prop_assert!(close(x, y, 1e-9), "{} vs {}", x, y),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "scaling changed error status"),
            }
        }
    }

    #[test]
    fn effective_step_monotone(s in 1e-8f64..1e8, f in 1.0001f64..10.0) {
        let d1 = effective_step(s).unwrap();
        let d2 = effective_step(s * f).unwrap();
        prop_assert!(d1 > 0.0 && d2 < 1.0 + 1e-15);
        prop_assert!(d2 > d1);
    }

    #[test]
    fn second_moment_nonnegative(gs in stream(5, 1..40), kind in 0usize..3) {
        let kind = [OptimizerKind::Adam, OptimizerKind::SignGd, OptimizerKind::AdamMiniLite][kind];
        let scheme = GroupingScheme::new(SchemeName::Full);
        let mut params = single("layers.0.mlp.w_ff1", vec![0.5; 5]);
        let mut state = OptimizerState::new(kind, Hyper::default(), &scheme, &params);
        for g in gs {
            state.step(&mut params, &single("layers.0.mlp.w_ff1", g), &StepConfig::new(1e-2)).unwrap();
            match &state.slot("layers.0.mlp.w_ff1").unwrap().v {
                SecondMoment::Elementwise(v) => prop_assert!(v.data().iter().all(|&x| x >= 0.0)),
                SecondMoment::Shared(v) => prop_assert!(*v >= 0.0),
            }
            prop_assert!(params.check_finite().is_ok());
        }
    }

    #[test]
    fn adam_matches_reference(gs in stream(3, 100), bc in any::<bool>()) {
        let h = Hyper { beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.0 };
        let scheme = GroupingScheme::new(SchemeName::Full);
        let name = "layers.0.attn.w_v";
        let w0 = vec![0.3, -0.2, 1.0];
        let mut params = single(name, w0.clone());
        let mut state = OptimizerState::new(OptimizerKind::Adam, h, &scheme, &params);
        let lr = 1e-3;
        let cfg = if bc { StepConfig::new(lr) } else { StepConfig::new(lr).raw_moments() };

        let (mut w, mut m, mut v) = (w0, [0.0; 3], [0.0; 3]);
        for (t, g) in gs.iter().enumerate() {
            state.step(&mut params, &single(name, g.clone()), &cfg).unwrap();
            let t = (t + 1) as i32;
            for i in 0..3 {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.95 * v[i] + 0.05 * g[i] * g[i];
                let (mh, vh) = if bc {
                    (m[i] / (1.0 - 0.9f64.powi(t)), v[i] / (1.0 - 0.95f64.powi(t)))
                } else {
                    (m[i], v[i])
                };
                w[i] -= lr * mh / (vh.sqrt() + 1e-8);
            }
        }
        for (a, b) in params.get(name).unwrap().data().iter().zip(&w) {
            prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn displacement_increases_with_multiplier(g in prop::collection::vec(0.01f64..5.0, 4), lo in 0.1f64..3.0, f in 1.01f64..4.0) {
        let scheme = GroupingScheme::new(SchemeName::Full);
        let name = "token_embedding";
        let start = single(name, vec![1.0; 4]);
        let grads = single(name, g);
        let run = |lambda: f64| {
            let mut p = start.clone();
            let mut s = OptimizerState::new(OptimizerKind::Adam, Hyper::default(), &scheme, &p);
            s.step(&mut p, &grads, &StepConfig::new(1e-3).with_multiplier(ModuleTag::Emb, lambda)).unwrap();
            p.get(name).unwrap().data().iter().map(|x| (x - 1.0).abs()).collect::<Vec<_>>()
        };
        let (a, b) = (run(lo), run(lo * f));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(y > x);
        }
    }

    #[test]
    fn clip_bounds_norm(g in prop::collection::vec(-100.0f64..100.0, 1..50), max in 0.01f64..10.0) {
        let clipped = clip_global_norm(&single("w", g.clone()), max).unwrap();
        prop_assert!(clipped.global_norm() <= max + 1e-12);
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= max {
            prop_assert_eq!(clipped.get("w").unwrap().data(), &g[..]);
        }
    }

    #[test]
    fn alpha_strictly_decreasing(base in 0.1f64..100.0, r1 in 0.003f64..1.0, f in 1.01f64..2.0) {
        let s1 = base * r1;
        let s2 = (s1 * f).min(base);
        prop_assume!(s2 > s1);
        let plan = |s: f64| {
            build_plan(&SnrReport::from_values(SnrMode::ElementMean, &[(ModuleTag::VO, base), (ModuleTag::Emb, s)]), DEFAULT_CLAMP_MAX).unwrap()
        };
        let (p1, p2) = (plan(s1), plan(s2));
        prop_assert_eq!(p1.base_tag, ModuleTag::VO);
        prop_assert!(p2.alpha(ModuleTag::Emb) < p1.alpha(ModuleTag::Emb));
        prop_assert_eq!(p1.alpha(ModuleTag::VO), 1.0);
    }

    #[test]
    fn plan_is_pure(values in prop::collection::vec(1e-4f64..1e3, 5)) {
        let tags = [ModuleTag::Emb, ModuleTag::Head, ModuleTag::QK, ModuleTag::VO, ModuleTag::MLP];
        let pairs: Vec<_> = tags.iter().copied().zip(values).collect();
        let r = SnrReport::from_values(SnrMode::ElementMean, &pairs);
        prop_assert_eq!(build_plan(&r, 20.0).unwrap(), build_plan(&r, 20.0).unwrap());
    }
}

#[test]
fn grouping_partitions_and_refines() {
    let mc = ModelConfig::default();
    let params = mc.init_params(&mut Rng::new(0)).unwrap();
    for name in SchemeName::ALL {
        let counts = GroupingScheme::new(name).tag_counts(&params);
        assert_eq!(counts.values().sum::<usize>(), params.numel(), "{name}");
    }
    let full = GroupingScheme::new(SchemeName::Full);
    let coarse = GroupingScheme::new(SchemeName::AttnMlpEmb);
    for name in params.names() {
        let merged = matches!(full.classify(name), ModuleTag::QK | ModuleTag::VO);
        assert_eq!(merged, coarse.classify(name) == ModuleTag::Attn, "{name}");
    }
    // each scheme refines the previous one
    for pair in SchemeName::ALL.windows(2) {
        let (coarse, fine) = (GroupingScheme::new(pair[0]), GroupingScheme::new(pair[1]));
        let names: Vec<&str> = params.names().collect();
        for a in &names {
            for b in &names {
                if fine.classify(a) == fine.classify(b) {
                    assert_eq!(coarse.classify(a), coarse.classify(b), "{a} / {b} under {}", pair[0]);
                }
            }
        }
    }
}

#[test]
fn adam_mini_lite_shares_denominator() {
    let scheme = GroupingScheme::new(SchemeName::Full);
    let name = "layers.0.mlp.w_ff2";
    let mut rng = Rng::new(5);
    let mut p1 = single(name, vec![0.0; 1]);
    let mut p2 = p1.clone();
    let mut s1 = OptimizerState::new(OptimizerKind::Adam, Hyper::default(), &scheme, &p1);
    let mut s2 = OptimizerState::new(OptimizerKind::AdamMiniLite, Hyper::default(), &scheme, &p2);
    for _ in 0..50 {
        let g = single(name, vec![rng.standard_normal()]);
        s1.step(&mut p1, &g, &StepConfig::new(1e-2)).unwrap();
        s2.step(&mut p2, &g, &StepConfig::new(1e-2)).unwrap();
    }
    assert_eq!(p1.fingerprint(), p2.fingerprint());
}
