//! Property tests over the invariants the modules promise.

use expertplan::comm::{comm_volume, Stage};
use expertplan::config::{hardware_preset, model_preset, model_preset_names};
use expertplan::cost::forest::{ForestParams, RandomForest};
use expertplan::cost::polynomial_expand;
use expertplan::model::{attention_flops, expert_flops, memory_footprint, InferenceScenario, ModelSpec};
use expertplan::planner::{objective, solve_bruteforce, solve_ilp, CostTensors, Horizon};
use expertplan::simulator::simulate;
use expertplan::strategy::StrategyCatalog;
use expertplan::transition::{dequantize, quantize_int4, reshard_volume, switch_cost, GroupQuantizedTensor};
use proptest::prelude::*;

fn preset() -> impl Strategy<Value = ModelSpec> {
    let names: Vec<&'static str> = model_preset_names().collect();
    prop::sample::select(names).prop_map(|n| model_preset(n).unwrap())
}

fn devices() -> impl Strategy<Value = u32> {
    prop::sample::select(vec![1u32, 2, 4, 8])
}

fn entry() -> impl Strategy<Value = f64> {
    prop_oneof![
        8 => 0.0f64..1e-2,
        2 => (0u32..4).prop_map(|v| f64::from(v) * 0.25),
        1 => Just(f64::INFINITY),
    ]
}

fn tensors() -> impl Strategy<Value = (CostTensors, Horizon)> {
    (1usize..=5, 1usize..=5).prop_flat_map(|(ka, ke)| {
        (
            prop::collection::vec(entry(), ka * 2 + ke * 2 + ka * ke * 2 + ka * ke * ke),
            1u32..=64,
            0u32..=512,
        )
            .prop_map(move |(v, l, s)| {
                let mut it = v.into_iter();
                let mut take = |n: usize| (0..n).map(|_| it.next().unwrap()).collect::<Vec<_>>();
                let t_a_prefill = take(ka);
                let t_a_decode = take(ka);
                let t_e_prefill = take(ke);
                let t_e_decode = take(ke);
                let t_c_prefill = (0..ka).map(|_| take(ke)).collect();
                let t_c_decode = (0..ka).map(|_| take(ke)).collect();
                let c_switch = (0..ka)
                    .map(|_| {
                        (0..ke)
                            .map(|i| {
                                let mut row = take(ke);
                                row[i] = 0.0;
                                for c in &mut row {
                                    if c.is_infinite() {
                                        *c = 1.0;
                                    }
                                }
                                row
                            })
                            .collect()
                    })
                    .collect();
                let t = CostTensors {
                    t_a_prefill,
                    t_a_decode,
                    t_e_prefill,
                    t_e_decode,
                    t_c_prefill,
                    t_c_decode,
                    c_switch,
                };
                let h = Horizon {
                    n_layers: f64::from(l),
                    output_len: f64::from(s),
                };
                (t, h)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn catalog_entries_revalidate(m in preset(), n in devices(), dp in any::<bool>()) {
        let hw = hardware_preset("a100-nvlink").unwrap().with_devices(n);
        let cat = StrategyCatalog::build(&m, &hw, dp).unwrap();
        for a in &cat.attention {
            prop_assert!(a.violations(&m, n).is_empty(), "{a}");
            prop_assert_eq!(a.tp_degree * a.dp_degree, n);
        }
        for e in &cat.expert {
            prop_assert!(e.violations(&m, n).is_empty(), "{e}");
            prop_assert_eq!(e.tp_degree * e.ep_degree * e.dp_degree, n);
        }
        let again = StrategyCatalog::build(&m, &hw, dp).unwrap();
        prop_assert_eq!(&cat.attention, &again.attention);
        prop_assert_eq!(&cat.expert, &again.expert);
    }

    #[test]
    fn comm_volume_scales_with_tokens(
        m in preset(),
        n in devices(),
        batch_mult in 1u32..4,
        factor in 1u32..5,
        input in 1u32..2048,
        decode in any::<bool>(),
    ) {
        let hw = hardware_preset("a100-nvlink").unwrap().with_devices(n);
        let cat = StrategyCatalog::build(&m, &hw, true).unwrap();
        let stage = if decode { Stage::Decode } else { Stage::Prefill };
        let base = InferenceScenario::new(n * batch_mult, input, 16);
        let scaled = InferenceScenario::new(n * batch_mult * factor, input, 16);
        for a in &cat.attention {
            for e in &cat.expert {
                let v1 = comm_volume(a, e, &m, &base, stage).unwrap();
                let v2 = comm_volume(a, e, &m, &scaled, stage).unwrap();
                prop_assert_eq!(v2.total_bytes(), u64::from(factor) * v1.total_bytes());
                prop_assert_eq!(v2.tokens, u64::from(factor) * v1.tokens);
            }
        }
    }

    #[test]
    fn reshard_is_symmetric_without_shared_experts(n in devices()) {
        let m = model_preset("mixtral-8x7b").unwrap();
        let hw = hardware_preset("a6000-pcie").unwrap().with_devices(n);
        let cat = StrategyCatalog::build(&m, &hw, false).unwrap();
        let mem = memory_footprint(&m, &InferenceScenario::new(1, 1, 0)).unwrap();
        for i in &cat.expert {
            for j in &cat.expert {
                let ij = reshard_volume(i, j, &m).unwrap();
                prop_assert_eq!(ij, reshard_volume(j, i, &m).unwrap());
                // never more than a whole target shard
                prop_assert!(ij <= mem.expert_weight_bytes / u64::from(j.tp_degree * j.ep_degree));
                if i == j {
                    prop_assert_eq!(ij, 0);
                }
            }
        }
    }

    #[test]
    fn switch_cost_never_exceeds_reshard(r in 0.0f64..10.0, u in 0.0f64..10.0, d in 0.0f64..10.0, o in 0.0f64..30.0) {
        let c = switch_cost(r, u, d, o);
        prop_assert!(c >= 0.0 && c <= r);
        if o >= u + d {
            prop_assert_eq!(c, 0.0);
        }
    }

    #[test]
    fn quantization_error_within_half_step(
        x in prop::collection::vec(-1e3f32..1e3, 1..600),
        group in 1u32..200,
    ) {
        let q = quantize_int4(&x, group).unwrap();
        let y = q.dequantize_f64().unwrap();
        prop_assert_eq!(y.len(), x.len());
        for (idx, (&a, &b)) in x.iter().zip(&y).enumerate() {
            let scale = f64::from(q.scales[idx / group as usize]);
            prop_assert!((f64::from(a) - b).abs() <= scale / 2.0 * (1.0 + 1e-12) + f64::EPSILON);
        }
    }

    #[test]
    fn quantized_tensor_round_trips_bytes(x in prop::collection::vec(-50f32..50.0, 0..400), group in 1u32..130) {
        let q = quantize_int4(&x, group).unwrap();
        let bytes = q.to_bytes();
        let back = GroupQuantizedTensor::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &q);
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(dequantize(&back).unwrap(), dequantize(&q).unwrap());
    }

    #[test]
    fn forest_prediction_stays_within_leaves(
        rows in prop::collection::vec((0.1f64..10.0, 0.1f64..10.0, 0.5f64..2.0), 8..60),
        probe in (0.0f64..20.0, 0.0f64..20.0),
        seed in any::<u64>(),
    ) {
        let x: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0, r.1]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let params = ForestParams { n_trees: 8, max_depth: 4, min_leaf: 1, seed };
        let forest = RandomForest::fit(&x, &y, &params).unwrap();
        let (lo, hi) = forest.leaf_range();
        let p = forest.predict(&[probe.0, probe.1]);
        prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
        prop_assert!(lo > 0.0);
        prop_assert_eq!(p, RandomForest::fit(&x, &y, &params).unwrap().predict(&[probe.0, probe.1]));
    }

    #[test]
    fn polynomial_expansion_has_constant_term(f in prop::collection::vec(0.1f64..5.0, 1..4), degree in 1u32..4) {
        let e = polynomial_expand(&f, degree).unwrap();
        prop_assert_eq!(e[0], 1.0);
        prop_assert_eq!(&e[1..=f.len()], &f[..]);
    }

    #[test]
    fn flops_grow_with_tokens(m in preset(), t in 1u64..4096, kv in 1u64..8192) {
        prop_assert!(attention_flops(&m, t + 1, kv).unwrap() > attention_flops(&m, t, kv).unwrap());
        prop_assert!(attention_flops(&m, t, kv + 1).unwrap() > attention_flops(&m, t, kv).unwrap());
        prop_assert!(expert_flops(&m, t + 1).unwrap() > expert_flops(&m, t).unwrap());
    }

    #[test]
    fn ilp_matches_bruteforce((t, h) in tensors()) {
        match (solve_bruteforce(&t, &h), solve_ilp(&t, &h)) {
            (Ok(b), Ok(i)) => {
                prop_assert_eq!((b.k, b.i, b.j), (i.k, i.i, i.j));
                prop_assert!((b.objective - i.objective).abs() <= 1e-9 * b.objective.abs());
            }
            (Err(_), Err(_)) => {}
            (b, i) => prop_assert!(false, "bruteforce {:?} vs ilp {:?}", b.is_ok(), i.is_ok()),
        }
    }

    #[test]
    fn raising_an_entry_never_lowers_the_optimum((t, h) in tensors(), pick in any::<prop::sample::Index>(), bump in 0.0f64..1.0) {
        let Ok(before) = solve_bruteforce(&t, &h) else { return Ok(()) };
        let mut raised = t.clone();
        let mut cells: Vec<&mut f64> = raised
            .t_a_prefill
            .iter_mut()
            .chain(raised.t_a_decode.iter_mut())
            .chain(raised.t_e_prefill.iter_mut())
            .chain(raised.t_e_decode.iter_mut())
            .chain(raised.t_c_prefill.iter_mut().flatten())
            .chain(raised.t_c_decode.iter_mut().flatten())
            .collect();
        let n = cells.len();
        *cells[pick.index(n)] += bump;
        if let Ok(after) = solve_bruteforce(&raised, &h) {
            prop_assert!(after.objective >= before.objective);
        }
    }

    #[test]
    fn breakdown_is_additive((t, h) in tensors()) {
        for k in 0..t.k_a() {
            for i in 0..t.k_e() {
                for j in 0..t.k_e() {
                    let value = objective(&t, &h, k, i, j);
                    match simulate(k, i, j, &t, &h) {
                        Ok(b) => {
                            b.check(&h).unwrap();
                            prop_assert!((b.total_s - value).abs() <= 1e-9 * value.abs());
                        }
                        Err(_) => prop_assert!(value.is_infinite()),
                    }
                }
            }
        }
    }
}
