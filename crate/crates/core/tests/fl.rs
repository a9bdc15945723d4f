mod common;

use common::*;
use fedpaw::dataset::FeatureGroup;
use fedpaw::fl::{
    compute_diff_measure, fedavg_aggregate, local_train, normalize_layerwise, personalized_aggregate,
    sample_clients, Contribution, FlConfig, Method, Participation, Simulation,
};
use fedpaw::model::SpeedModel;
use fedpaw::ClientId;
use fedpaw_tensor::{Adam, AdamConfig, ParamSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: usize = 3;

fn contribs<'a>(sets: &'a [ParamSet], ks: &[f64]) -> Vec<Contribution<'a>> {
    sets.iter()
        .zip(ks)
        .enumerate()
        .map(|(i, (p, &k))| Contribution {
            client: ClientId(i as u32),
            k,
            params: p,
        })
        .collect()
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
}

fn values(p: &ParamSet) -> Vec<f64> {
    p.values().collect()
}

proptest! {
    #[test]
    fn aggregation_matches_oracles(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = random_layout(&mut rng);
        let sets: Vec<ParamSet> = (0..n).map(|_| random_set(&mut rng, &layout)).collect();
        let ks: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..5.0)).collect();
        let c = contribs(&sets, &ks);
        let pairs: Vec<(f64, &ParamSet)> = ks.iter().copied().zip(sets.iter()).collect();

        let global = fedavg_aggregate(&c).unwrap();
        prop_assert!(close(&values(&global), &brute_fedavg(&pairs)));

        let p = rng.gen_range(1..=max_layer(&global));
        let m = compute_diff_measure(&c, &global, p).unwrap();
        let bm = brute_diff(&pairs, &global, p);
        prop_assert!(close(&values(&m), &bm.iter().map(|x| x.1).collect::<Vec<_>>()));

        let w = normalize_layerwise(&m);
        let bw = brute_normalize(&bm);
        prop_assert!(close(&values(&w), &bw));

        let out = personalized_aggregate(&global, &sets[0], &w, p).unwrap();
        prop_assert!(close(&values(&out), &brute_personalized(&global, &sets[0], &bw, p)));
    }

    #[test]
    fn aggregation_is_permutation_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = random_layout(&mut rng);
        let sets: Vec<ParamSet> = (0..4).map(|_| random_set(&mut rng, &layout)).collect();
        let ks = [1.0, 2.5, 0.3, 4.0];
        let c = contribs(&sets, &ks);
        let mut rev = c.clone();
        rev.reverse();
        let a = fedavg_aggregate(&c).unwrap();
        prop_assert!(a.bit_eq(&fedavg_aggregate(&rev).unwrap()));
        let ma = compute_diff_measure(&c, &a, 1).unwrap();
        prop_assert!(ma.bit_eq(&compute_diff_measure(&rev, &a, 1).unwrap()));
    }

    #[test]
    fn personalized_stays_on_segment(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = random_layout(&mut rng);
        let g = random_set(&mut rng, &layout);
        let l = random_set(&mut rng, &layout);
        let p = max_layer(&g);
        let w = g.top_layers(p).unwrap().filled(0.0);
        let mut w = w;
        for t in w.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.0..=1.0));
        }
        let out = personalized_aggregate(&g, &l, &w, p).unwrap();
        for ((o, g), l) in out.values().zip(g.values()).zip(l.values()) {
            prop_assert!(o >= g.min(l) && o <= g.max(l));
        }
    }

    #[test]
    fn diff_measure_is_quadratic(seed in any::<u64>(), c in 0.1f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = random_layout(&mut rng);
        let g = random_set(&mut rng, &layout);
        let l = random_set(&mut rng, &layout);
        let mut scaled = l.clone();
        for (s, (gt, lt)) in scaled.tensors_mut().zip(g.tensors().zip(l.tensors())) {
            for (s, (gv, lv)) in s.data_mut().iter_mut().zip(gt.data().iter().zip(lt.data())) {
                *s = gv + c * (lv - gv);
            }
        }
        let p = max_layer(&g);
        let m1 = compute_diff_measure(&contribs(std::slice::from_ref(&l), &[1.0]), &g, p).unwrap();
        let m2 = compute_diff_measure(&contribs(std::slice::from_ref(&scaled), &[1.0]), &g, p).unwrap();
        for (a, b) in m1.values().zip(m2.values()) {
            prop_assert!((b - c * c * a).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn normalized_layers_span_unit_interval(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = random_layout(&mut rng);
        let m = random_set(&mut rng, &layout);
        let w = normalize_layerwise(&m);
        for group in w.layer_groups() {
            let vals: Vec<f64> = group.iter().flat_map(|&i| w.tensor(i).data().to_vec()).collect();
            prop_assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
            if vals.len() > 1 {
                prop_assert!(vals.contains(&0.0) && vals.contains(&1.0));
            }
        }
    }
}

#[test]
fn hand_examples() {
    let one = |v: f64| {
        ParamSet::new(vec![fedpaw_tensor::ParamEntry {
            layer: 1,
            name: "w".into(),
            tensor: fedpaw_tensor::Tensor::from_vec(vec![v]).unwrap(),
        }])
        .unwrap()
    };
    let (a, b, g) = (one(1.0), one(3.0), one(2.0));
    let sets = [a, b];
    let m = compute_diff_measure(&contribs(&sets, &[1.0, 1.0]), &g, 1).unwrap();
    assert_eq!(m.tensor(0).data(), &[1.0]);
    let same = [g.clone(), g.clone()];
    let m = compute_diff_measure(&contribs(&same, &[1.0, 2.0]), &g, 1).unwrap();
    assert_eq!(m.tensor(0).data(), &[0.0]);
}

#[test]
fn sampling_frequency() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut counts = [0usize; 10];
    let draws = 10_000;
    for _ in 0..draws {
        for i in sample_clients(10, &Participation::Fixed(0.5), &mut rng) {
            counts[i] += 1;
        }
    }
    for c in counts {
        let f = c as f64 / draws as f64;
        assert!((f - 0.5).abs() <= 0.02, "frequency {f}");
    }
}

fn fl(method: Method) -> FlConfig {
    FlConfig {
        rounds: 4,
        batch_size: 16,
        ..FlConfig::new(method, 2)
    }
}

#[test]
fn local_training_edge_cases() {
    let data = toy_datasets(1, 240, H, FeatureGroup::FG1).remove(0);
    let cfg = tiny_model(FeatureGroup::FG1, H);
    let model = SpeedModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let received = model.params().clone();

    let mut empty = data.clone();
    empty.train.clear();
    let mut m = model.clone();
    let mut opt = Adam::new(AdamConfig::default(), m.params());
    let stats = local_train(&mut m, &mut opt, &empty, &received, &fl(Method::FedAvg), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(stats.batches, 0);
    assert!(m.params().bit_eq(&received));

    let run = || {
        let mut m = model.clone();
        let mut opt = Adam::new(AdamConfig::default(), m.params());
        local_train(&mut m, &mut opt, &data, &received, &fl(Method::FedAvg), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        m.into_params()
    };
    assert!(run().bit_eq(&run()));
}

fn max_dev(a: &ParamSet, b: &ParamSet) -> f64 {
    a.values().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn proximal_term_anchors_to_received() {
    let data = toy_datasets(1, 240, H, FeatureGroup::FG1).remove(0);
    let model = SpeedModel::new(tiny_model(FeatureGroup::FG1, H), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let received = model.params().clone();
    let dev = |mu: f64| {
        let mut m = model.clone();
        let mut opt = Adam::new(AdamConfig::default(), m.params());
        let cfg = FlConfig {
            prox_mu: mu,
            lr: 1e-4,
            ..fl(Method::FedProx)
        };
        local_train(&mut m, &mut opt, &data, &received, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        max_dev(m.params(), &received)
    };
    let devs: Vec<f64> = [0.0, 1e2, 1e6].iter().map(|&mu| dev(mu)).collect();
    assert!(devs[0] > devs[1] && devs[1] > devs[2], "{devs:?}");
    assert!(devs[2] < 1e-3, "{devs:?}");
}

fn simulation(method: Method, warmup: usize, n: usize, seed: u64) -> Simulation {
    let data = toy_datasets(n, 300, H, FeatureGroup::FG1);
    let cfg = FlConfig {
        warmup,
        ..fl(method)
    };
    Simulation::new(tiny_model(FeatureGroup::FG1, H), cfg, data, seed).unwrap()
}

#[test]
fn late_warmup_reproduces_fedavg_bitwise() {
    let mut avg = simulation(Method::FedAvg, 1, 3, 5);
    let mut paw = simulation(Method::FedPAW, 100, 3, 5);
    for _ in 0..3 {
        let a = avg.run_round().unwrap();
        let p = paw.run_round().unwrap();
        assert_eq!(a.sampled, p.sampled);
        assert_eq!(a.train_loss_mean.to_bits(), p.train_loss_mean.to_bits());
        assert!(avg.state().global.bit_eq(&paw.state().global));
        for (ca, cp) in avg.clients().iter().zip(paw.clients()) {
            assert!(ca.model.params().bit_eq(cp.model.params()));
            assert!(ca.model.params().bit_eq(&avg.state().global));
        }
    }
}

#[test]
fn personalized_models_differ_between_clients() {
    let mut sim = simulation(Method::FedPAW, 1, 2, 8);
    sim.run_round().unwrap();
    sim.run_round().unwrap();
    let w = sim.state().weights.as_ref().unwrap();
    assert!(w.values().all(|v| (0.0..=1.0).contains(&v)));
    assert!(w.values().any(|v| v > 0.0));
    let [a, b] = sim.clients() else { panic!("two clients") };
    let p = sim.config().pa_layers;
    let ta = a.model.params().top_layers(p).unwrap();
    let tb = b.model.params().top_layers(p).unwrap();
    assert!(!ta.bit_eq(&tb));
    let lower = |s: &ParamSet| s.entries().iter().filter(|e| e.layer + p <= s.layer_count()).map(|e| e.tensor.clone()).collect::<Vec<_>>();
    let (la, lb) = (lower(a.model.params()), lower(b.model.params()));
    assert!(la.iter().zip(&lb).all(|(x, y)| x.bit_eq(y)));
}

#[test]
fn rounds_are_deterministic_and_accounted() {
    let run = || {
        let mut sim = simulation(Method::FedPAW, 1, 3, 21);
        let outs: Vec<_> = (0..2).map(|_| sim.run_round().unwrap()).collect();
        (outs, sim.state().global.clone())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert!(ga.bit_eq(&gb));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.train_loss_mean.to_bits(), y.train_loss_mean.to_bits());
        assert_eq!(x.params_per_client, 2 * ga.num_params() as u64);
        assert_eq!(x.params_transferred, x.params_per_client * x.sampled.len() as u64);
    }
}
