use feddrift::data::{generate_synthetic, FederatedDataset, SyntheticConfig};
use feddrift::federation::{
    feddc_local_objective_grad, gradient_variance_diagnostic, run_local_round, sample_active_set,
    server_aggregate, steps_per_round, Ablation, AlgoConfig, Algorithm, ClientState, ClientUpdate,
    Correction, LocalObjective, ServerState, Weighting,
};
use feddrift::math::{finite_diff_grad, ParamVector, Purpose, RngStream};
use feddrift::models::{init_params, loss_and_grad, BatchRef, ModelSpec};
use feddrift::Error;
use proptest::prelude::*;

const FEDDC: Algorithm = Algorithm::feddc(0.1, Ablation::Lelglp);

fn all_algorithms() -> Vec<Algorithm> {
    vec![
        Algorithm::FedAvg,
        Algorithm::FedProx { mu: 0.01 },
        Algorithm::Scaffold,
        Algorithm::FedDyn { alpha: 0.01 },
        FEDDC,
    ]
}

fn random_vec(len: usize, seed: u64, scale: f64) -> ParamVector {
    let mut r = RngStream::keyed(seed, Purpose::Test, 0, 0).open();
    ParamVector::new((0..len).map(|_| scale * r.gaussian()).collect()).unwrap()
}

fn small_data(clients: usize, seed: u64) -> FederatedDataset {
    let mut cfg = SyntheticConfig::new(1.0, 1.0, seed);
    cfg.n_clients = clients;
    cfg.samples_per_client = 24;
    cfg.input_dim = 6;
    cfg.num_classes = 3;
    generate_synthetic(&cfg).unwrap()
}

fn spec() -> ModelSpec {
    ModelSpec::mlp(6, vec![5], 3).with_weight_decay(1e-3)
}

fn setup(alg: Algorithm, data: &FederatedDataset) -> (ServerState, Vec<ClientState>) {
    let init = init_params(&spec(), RngStream::new(3, 0)).unwrap();
    let server = ServerState::new(init.clone(), data.n_clients(), 9, &alg);
    let clients = (0..data.n_clients())
        .map(|i| ClientState::new(i, data.client_size(i), &init, &alg))
        .collect();
    (server, clients)
}

fn shuffle(server: &ServerState, client: usize) -> RngStream {
    RngStream::keyed(server.seed, Purpose::Shuffle, client, server.round)
}

fn round(
    alg: Algorithm,
    data: &FederatedDataset,
    server: &ServerState,
    clients: &mut [ClientState],
    cfg: &AlgoConfig,
) -> (ServerState, Vec<ClientUpdate>) {
    assert_eq!(cfg.algorithm, alg);
    let updates: Vec<ClientUpdate> = clients
        .iter()
        .map(|c| run_local_round(&spec(), c, server, cfg, data, shuffle(server, c.id)).unwrap())
        .collect();
    let next = server_aggregate(server, &updates, cfg).unwrap();
    (next, updates)
}

fn cfg(alg: Algorithm) -> AlgoConfig {
    let mut c = AlgoConfig::new(alg, 0.1, 2, 8);
    c.lr_decay = 0.99;
    c
}

/// Mean built by summing in index order and dividing once, except where
/// all inputs agree.
fn fold_mean(vs: &[&ParamVector]) -> Vec<f64> {
    (0..vs[0].len())
        .map(|j| {
            if vs.iter().all(|v| v[j] == vs[0][j]) {
                vs[0][j]
            } else {
                vs.iter().fold(0.0, |acc, v| acc + v[j]) / vs.len() as f64
            }
        })
        .collect()
}

fn max_rel_err(a: &ParamVector, b: &ParamVector) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

#[test]
fn feddc_without_corrections_is_plain_gradient() {
    let data = small_data(2, 1);
    let alg = Algorithm::feddc(0.0, Ablation::Lelglp);
    let (server, clients) = setup(alg, &data);
    let batch = data.train_view().unwrap();
    let theta = random_vec(spec().param_count(), 4, 0.3);
    let got = feddc_local_objective_grad(&spec(), &clients[0], &server, &cfg(alg), 6, &theta, &batch).unwrap();
    let (_, want) = loss_and_grad(&spec(), &theta, &batch).unwrap();
    assert!(got.bit_eq(&want));

    // The same holds for the full FedDC objective before any state exists
    // when alpha pulls toward the current point.
    let (server, clients) = setup(FEDDC, &data);
    let at_anchor = server.global_params.clone();
    let got = feddc_local_objective_grad(&spec(), &clients[0], &server, &cfg(FEDDC), 6, &at_anchor, &batch).unwrap();
    let (_, want) = loss_and_grad(&spec(), &at_anchor, &batch).unwrap();
    assert_eq!(got.as_slice(), want.as_slice());
}

#[test]
fn parameter_correction_vanishes_at_its_minimum() {
    let data = small_data(2, 2);
    let alg = Algorithm::feddc(0.7, Ablation::Lelp);
    let (server, mut clients) = setup(alg, &data);
    let p = spec().param_count();
    let h = random_vec(p, 5, 0.1);
    clients[0].drift = Some(h.clone());
    let theta = server.global_params.sub(&h).unwrap();
    let batch = data.train_view().unwrap();
    let got = feddc_local_objective_grad(&spec(), &clients[0], &server, &cfg(alg), 6, &theta, &batch).unwrap();
    let (_, want) = loss_and_grad(&spec(), &theta, &batch).unwrap();
    assert_eq!(got.as_slice(), want.as_slice());
}

#[test]
fn feddc_rejects_other_algorithms_and_bad_dimensions() {
    let data = small_data(2, 2);
    let (server, clients) = setup(FEDDC, &data);
    let batch = data.train_view().unwrap();
    let theta = server.global_params.clone();
    let err = feddc_local_objective_grad(&spec(), &clients[0], &server, &cfg(Algorithm::FedAvg), 6, &theta, &batch);
    assert!(err.is_err());
    let short = ParamVector::zeros(theta.len() - 1);
    let err = feddc_local_objective_grad(&spec(), &clients[0], &server, &cfg(FEDDC), 6, &short, &batch);
    assert!(matches!(err, Err(Error::Dimension { .. })));
}

fn random_state(alg: Algorithm, seed: u64) -> (FederatedDataset, ServerState, ClientState) {
    let data = small_data(2, seed);
    let (mut server, mut clients) = setup(alg, &data);
    let p = spec().param_count();
    let mut s = seed * 16;
    let mut next = |scale| {
        s += 1;
        Some(random_vec(p, s, scale))
    };
    let c = &mut clients[0];
    c.drift = c.drift.as_ref().and(next(0.2));
    c.last_delta = c.last_delta.as_ref().and(next(0.05));
    c.scaffold_c = c.scaffold_c.as_ref().and(next(0.1));
    c.dyn_grad = c.dyn_grad.as_ref().and(next(0.1));
    server.global_delta = server.global_delta.as_ref().and(next(0.05));
    server.scaffold_c = server.scaffold_c.as_ref().and(next(0.1));
    server.round = 3;
    (data, server, clients.swap_remove(0))
}

#[test]
fn every_local_objective_matches_finite_differences() {
    for (i, alg) in all_algorithms().into_iter().enumerate() {
        let (data, server, client) = random_state(alg, 7 + i as u64);
        let obj = LocalObjective::new(&client, &server, &cfg(alg), 6).unwrap();
        let part: Vec<usize> = data.partitions[0][..8].to_vec();
        let inputs: Vec<f64> = part.iter().flat_map(|&i| data.train_inputs[i * 6..i * 6 + 6].to_vec()).collect();
        let labels: Vec<usize> = part.iter().map(|&i| data.train_labels[i]).collect();
        let batch = BatchRef::new(&inputs, &labels, 6).unwrap();
        let theta = random_vec(spec().param_count(), 100 + i as u64, 0.4);
        let analytic = obj.grad(&spec(), &theta, &batch).unwrap();
        let numeric = finite_diff_grad(|t| obj.value(&spec(), t, &batch).unwrap(), &theta, 1e-5).unwrap();
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < 1e-5, "{}: rel err {err}", alg.label());
    }
}

#[test]
fn fedavg_single_step_is_one_sgd_update() {
    let mut data = small_data(1, 3);
    data.partitions = vec![vec![5]];
    let alg = Algorithm::FedAvg;
    let (server, clients) = setup(alg, &data);
    let c = AlgoConfig::new(alg, 0.05, 1, 10);
    assert_eq!(steps_per_round(1, &c), 1);
    let upd = run_local_round(&spec(), &clients[0], &server, &c, &data, shuffle(&server, 0)).unwrap();
    let x = &data.train_inputs[30..36];
    let y = [data.train_labels[5]];
    let (_, g) = loss_and_grad(&spec(), &server.global_params, &BatchRef::new(x, &y, 6).unwrap()).unwrap();
    let want: Vec<f64> = server
        .global_params
        .as_slice()
        .iter()
        .zip(g.as_slice())
        .map(|(t, g)| t - 0.05 * g)
        .collect();
    assert_eq!(upd.theta_plus.as_slice(), want.as_slice());
    assert_eq!(upd.steps, 1);
    assert_eq!(upd.bytes_up, 8 * spec().param_count() as u64);
}

#[test]
fn feddc_drift_bookkeeping_is_exact() {
    let data = small_data(3, 4);
    let (mut server, mut clients) = setup(FEDDC, &data);
    let c = cfg(FEDDC);
    for r in 0..4 {
        let (next, updates) = round(FEDDC, &data, &server, &mut clients, &c);
        for (u, client) in updates.iter().zip(&clients) {
            let h = client.drift.as_ref().unwrap();
            let h_plus = u.drift_plus.as_ref().unwrap();
            let delta = u.theta_plus.sub(&server.global_params).unwrap();
            assert!(u.delta.bit_eq(&delta));
            assert!(h_plus.bit_eq(&h.add(&delta).unwrap()));
            if r == 0 {
                assert!(h_plus.sub(h).unwrap().bit_eq(&delta));
            }
            assert!(u.upload.as_ref().unwrap().bit_eq(&u.theta_plus.add(h_plus).unwrap()));
        }
        // Uniform aggregation folds θ⁺ + h⁺ in client order.
        let uploads: Vec<&ParamVector> = updates.iter().map(|u| u.upload.as_ref().unwrap()).collect();
        assert_eq!(next.global_params.as_slice(), fold_mean(&uploads).as_slice());
        // The broadcast update is the fold mean of the net local updates,
        // which are the raw ones until a correction term is active.
        let deltas: Vec<&ParamVector> = updates.iter().map(|u| u.net_delta.as_ref().unwrap_or(&u.delta)).collect();
        assert_eq!(r == 0, updates.iter().all(|u| u.net_delta.is_none()));
        assert_eq!(next.global_delta.as_ref().unwrap().as_slice(), fold_mean(&deltas).as_slice());
        assert_eq!(next.round, r + 1);
        for (client, u) in clients.iter_mut().zip(updates) {
            client.apply(u);
        }
        server = next;
    }
}

#[test]
fn scaffold_control_variates_agree_on_identical_clients() {
    let base = small_data(1, 5);
    let n = base.n_train();
    let mut data = base.clone();
    for _ in 0..2 {
        data.train_inputs.extend_from_slice(&base.train_inputs);
        data.train_labels.extend_from_slice(&base.train_labels);
    }
    data.partitions = (0..3).map(|k| (k * n..(k + 1) * n).collect()).collect();
    let alg = Algorithm::Scaffold;
    let (mut server, mut clients) = setup(alg, &data);
    let c = cfg(alg);
    for r in 0..2 {
        let stream = RngStream::keyed(1, Purpose::Shuffle, 0, r);
        let updates: Vec<ClientUpdate> = clients
            .iter()
            .map(|cl| run_local_round(&spec(), cl, &server, &c, &data, stream).unwrap())
            .collect();
        server = server_aggregate(&server, &updates, &c).unwrap();
        for (cl, u) in clients.iter_mut().zip(updates) {
            cl.apply(u);
        }
        let global_c = server.scaffold_c.as_ref().unwrap();
        for cl in &clients {
            let ci = cl.scaffold_c.as_ref().unwrap();
            if r == 0 {
                assert!(ci.bit_eq(global_c));
            } else {
                // c + (c_i+ - c) only equals c_i+ up to rounding.
                assert!(max_rel_err(ci, global_c) < 1e-12);
            }
        }
    }
}

fn fake_update(client: usize, theta: ParamVector, delta: ParamVector, alg: Algorithm) -> ClientUpdate {
    let p = theta.len();
    let feddc = matches!(alg, Algorithm::FedDc { .. });
    let scaffold = matches!(alg, Algorithm::Scaffold);
    ClientUpdate {
        client,
        upload: feddc.then(|| theta.add(&delta).unwrap()),
        drift_plus: feddc.then(|| delta.clone()),
        scaffold_c_plus: scaffold.then(|| ParamVector::zeros(p)),
        scaffold_c_delta: scaffold.then(|| ParamVector::zeros(p)),
        dyn_grad_plus: None,
        theta_plus: theta,
        delta,
        net_delta: None,
        n_samples: 10 + client,
        steps: 4,
        lr: 0.5,
        mean_loss: 0.0,
        bytes_up: 0,
    }
}

#[test]
fn aggregation_special_cases() {
    let p = 7;
    let g = random_vec(p, 1, 1.0);
    let server = ServerState::new(g.clone(), 4, 0, &FEDDC);
    let c = cfg(FEDDC);

    let theta = random_vec(p, 2, 1.0);
    let delta = theta.sub(&g).unwrap();
    let mut one = fake_update(2, theta.clone(), delta.clone(), FEDDC);
    let h_plus = random_vec(p, 3, 1.0);
    one.upload = Some(theta.add(&h_plus).unwrap());
    let next = server_aggregate(&server, &[one], &c).unwrap();
    assert!(next.global_params.bit_eq(&theta.add(&h_plus).unwrap()));

    // Zero drift: FedDC aggregation equals FedAvg's.
    let t2 = random_vec(p, 4, 1.0);
    let ups: Vec<ClientUpdate> = [&theta, &t2]
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut u = fake_update(i, (*t).clone(), t.sub(&g).unwrap(), FEDDC);
            u.upload = Some((*t).clone());
            u
        })
        .collect();
    let dc = server_aggregate(&server, &ups, &c).unwrap();
    let avg_server = ServerState::new(g.clone(), 4, 0, &Algorithm::FedAvg);
    let avg = server_aggregate(&avg_server, &ups, &cfg(Algorithm::FedAvg)).unwrap();
    assert!(dc.global_params.bit_eq(&avg.global_params));

    // Sample weighting.
    let mut by = cfg(Algorithm::FedAvg);
    by.aggregation = Weighting::BySamples;
    let w = server_aggregate(&avg_server, &ups, &by).unwrap();
    let want: Vec<f64> = (0..p).map(|j| (10.0 * theta[j] + 11.0 * t2[j]) / 21.0).collect();
    for (a, b) in w.global_params.as_slice().iter().zip(&want) {
        assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
    }

    assert!(matches!(server_aggregate(&server, &[], &c), Err(Error::EmptyAggregate)));
}

#[test]
fn zero_updates_leave_global_model_unchanged() {
    let p = 9;
    let g = random_vec(p, 11, 1.0);
    for alg in all_algorithms() {
        let server = ServerState::new(g.clone(), 3, 0, &alg);
        let ups: Vec<ClientUpdate> = (0..3)
            .map(|i| fake_update(i, g.clone(), ParamVector::zeros(p), alg))
            .collect();
        let next = server_aggregate(&server, &ups, &cfg(alg)).unwrap();
        assert!(next.global_params.bit_eq(&g), "{}", alg.label());
    }
}

#[test]
fn feddc_traffic_is_one_and_a_half_times_fedavg() {
    let data = small_data(3, 6);
    let p = spec().param_count() as u64;
    let total = |alg: Algorithm| {
        let (server, mut clients) = setup(alg, &data);
        let (_, ups) = round(alg, &data, &server, &mut clients, &cfg(alg));
        let up: u64 = ups.iter().map(|u| u.bytes_up).sum();
        up + ups.len() as u64 * alg.download_vectors() * 8 * p
    };
    let avg = total(Algorithm::FedAvg);
    let dc = total(FEDDC);
    assert_eq!(2 * dc, 3 * avg);
    assert_eq!(FEDDC.download_vectors(), 2);
    assert_eq!(FEDDC.upload_vectors(), 1);
}

#[test]
fn local_rounds_are_deterministic_and_reject_empty_partitions() {
    let mut data = small_data(2, 8);
    for alg in all_algorithms() {
        let (server, clients) = setup(alg, &data);
        let a = run_local_round(&spec(), &clients[1], &server, &cfg(alg), &data, shuffle(&server, 1)).unwrap();
        let b = run_local_round(&spec(), &clients[1], &server, &cfg(alg), &data, shuffle(&server, 1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps, 2 * 3);
    }
    data.partitions[1].clear();
    let (server, clients) = setup(FEDDC, &data);
    let err = run_local_round(&spec(), &clients[1], &server, &cfg(FEDDC), &data, shuffle(&server, 1));
    assert!(matches!(err, Err(Error::Partition(_))));
}

#[test]
fn feddyn_state_updates() {
    let data = small_data(2, 9);
    let alg = Algorithm::FedDyn { alpha: 0.01 };
    let (server, mut clients) = setup(alg, &data);
    let c = cfg(alg);
    let (next, ups) = round(alg, &data, &server, &mut clients, &c);
    for u in &ups {
        let got = u.dyn_grad_plus.as_ref().unwrap();
        for j in 0..got.len() {
            assert_eq!(got[j], -(0.01 * u.delta[j]));
        }
    }
    // Θ = mean(θ⁺) − h/α with h = −α·mean(delta) under full participation.
    let h = next.dyn_h.as_ref().unwrap();
    for j in 0..h.len() {
        let md = (ups[0].delta[j] + ups[1].delta[j]) / 2.0;
        assert!((h[j] + 0.01 * md).abs() < 1e-15);
        let mt = (ups[0].theta_plus[j] + ups[1].theta_plus[j]) / 2.0;
        assert!((next.global_params[j] - (mt - h[j] / 0.01)).abs() < 1e-12);
    }
}

#[test]
fn active_set_sampling() {
    assert_eq!(sample_active_set(100, 1.0, 3, 0), (0..100).collect::<Vec<_>>());
    let s = sample_active_set(100, 0.15, 3, 7);
    assert_eq!(s.len(), 15);
    assert!(s.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(s, sample_active_set(100, 0.15, 3, 7));
    assert_ne!(s, sample_active_set(100, 0.15, 3, 8));
    assert_eq!(sample_active_set(10, 0.01, 3, 0).len(), 1);
}

#[test]
fn gradient_variance_examples() {
    let d = random_vec(5, 1, 1.0);
    let same = vec![
        fake_update(0, d.clone(), d.clone(), Algorithm::FedAvg),
        fake_update(1, d.clone(), d.clone(), Algorithm::FedAvg),
    ];
    assert_eq!(gradient_variance_diagnostic(&same), Some(0.0));
    let opposite = vec![
        fake_update(0, d.clone(), d.clone(), Algorithm::FedAvg),
        fake_update(1, d.clone(), d.scale(-1.0).unwrap(), Algorithm::FedAvg),
    ];
    // K η = 4 · 0.5 = 2.
    let want = d.norm_sq() / 4.0;
    let got = gradient_variance_diagnostic(&opposite).unwrap();
    assert!((got - want).abs() < 1e-12 * want);
    assert_eq!(gradient_variance_diagnostic(&same[..1]), None);
}

#[test]
fn state_vectors_follow_the_algorithm() {
    let init = ParamVector::zeros(3);
    let names = |alg: Algorithm| {
        let c = ClientState::new(0, 1, &init, &alg);
        let s = ServerState::new(init.clone(), 1, 0, &alg);
        (
            c.vectors().iter().map(|v| v.0).collect::<Vec<_>>(),
            s.vectors().iter().map(|v| v.0).collect::<Vec<_>>(),
        )
    };
    assert_eq!(names(FEDDC).0, ["theta", "drift", "last_delta"]);
    assert_eq!(names(FEDDC).1, ["global_params", "global_delta"]);
    assert_eq!(names(Algorithm::Scaffold).0, ["theta", "scaffold_c"]);
    assert_eq!(names(Algorithm::FedAvg).1, ["global_params"]);
}

#[test]
fn net_correction_removes_the_terms_own_step() {
    let alg = Algorithm::feddc(0.0, Ablation::Lelg);
    let (data, server, mut client) = random_state(alg, 4);
    let c = cfg(alg);
    let u = run_local_round(&spec(), &client, &server, &c, &data, shuffle(&server, 0)).unwrap();
    // With a constant linear term g, K steps of size η add exactly −Kη·g
    // to the update, and g·Kη = Δθ_i − Δθ.
    let expected = client.last_delta.as_ref().unwrap().sub(server.global_delta.as_ref().unwrap()).unwrap();
    let net = u.net_delta.clone().unwrap();
    assert!(max_rel_err(&net.sub(&u.delta).unwrap(), &expected) < 1e-9);
    let next = server_aggregate(&server, std::slice::from_ref(&u), &c).unwrap();
    assert!(next.global_delta.as_ref().unwrap().bit_eq(&net));
    client.apply(u);
    assert!(client.last_delta.as_ref().unwrap().bit_eq(&net));

    let raw = Algorithm::FedDc { alpha: 0.0, ablation: Ablation::Lelg, correction: Correction::Raw };
    let (data, server, mut client) = random_state(raw, 4);
    let u = run_local_round(&spec(), &client, &server, &cfg(raw), &data, shuffle(&server, 0)).unwrap();
    assert!(u.net_delta.is_none());
    let delta = u.delta.clone();
    client.apply(u);
    assert!(client.last_delta.as_ref().unwrap().bit_eq(&delta));
}

#[test]
fn algorithm_json_shape() {
    let a: Algorithm = serde_json::from_str(r#"{"name":"feddc","alpha":0.1,"ablation":"lelp"}"#).unwrap();
    assert_eq!(a, Algorithm::feddc(0.1, Ablation::Lelp));
    assert_eq!(a.label(), "feddc-lelp");
    assert_eq!(FEDDC.label(), "feddc");
    let a: Algorithm = serde_json::from_str(r#"{"name":"feddc","alpha":0.1,"correction":"raw"}"#).unwrap();
    assert_eq!(a, Algorithm::FedDc { alpha: 0.1, ablation: Ablation::Lelglp, correction: Correction::Raw });
    assert_eq!(a.label(), "feddc-raw");
    let a: Algorithm = serde_json::from_str(r#"{"name":"fedavg"}"#).unwrap();
    assert_eq!(a, Algorithm::FedAvg);
    assert!(serde_json::from_str::<Algorithm>(r#"{"name":"fedprox","mu":1,"x":2}"#).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn feddc_objective_gradient_matches_finite_differences(seed in 0u64..10_000, alpha in 0.0f64..2.0) {
        let alg = Algorithm::feddc(alpha, Ablation::Lelglp);
        let (data, server, client) = random_state(alg, seed);
        let obj = LocalObjective::new(&client, &server, &cfg(alg), 6).unwrap();
        let idx = &data.partitions[0][..5];
        let inputs: Vec<f64> = idx.iter().flat_map(|&i| data.train_inputs[i * 6..i * 6 + 6].to_vec()).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| data.train_labels[i]).collect();
        let batch = BatchRef::new(&inputs, &labels, 6).unwrap();
        let theta = random_vec(spec().param_count(), seed + 1, 0.5);
        let analytic = obj.grad(&spec(), &theta, &batch).unwrap();
        let numeric = finite_diff_grad(|t| obj.value(&spec(), t, &batch).unwrap(), &theta, 1e-5).unwrap();
        prop_assert!(max_rel_err(&analytic, &numeric) < 1e-5);
    }

    #[test]
    fn zero_alpha_feddc_gradient_is_fedavg_gradient(seed in 0u64..10_000) {
        let data = small_data(2, seed);
        let alg = Algorithm::feddc(0.0, Ablation::Lelglp);
        let (server, clients) = setup(alg, &data);
        let batch = data.train_view().unwrap();
        let theta = random_vec(spec().param_count(), seed, 0.5);
        let dc = feddc_local_objective_grad(&spec(), &clients[0], &server, &cfg(alg), 3, &theta, &batch).unwrap();
        let avg = LocalObjective::empirical().grad(&spec(), &theta, &batch).unwrap();
        prop_assert!(dc.bit_eq(&avg));
    }
}
