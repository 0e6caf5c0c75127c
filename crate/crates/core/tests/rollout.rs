use ngrc::dynamics::{add_measurement_noise, add_pooled_noise, integrate, Integration, SystemSpec};
use ngrc::readout::{assemble_dataset, ChannelRoles, FitOptions};
use ngrc::rollout::{
    bifurcation_sweep, circular_distance, estimate_phase, free_run, valid_prediction_time, Exogenous, Flow,
    NgrcModel, OdeFlow, PhaseSettings, TrainSettings,
};
use ngrc::trajectory::sample_std;
use ngrc::{Model, Trajectory};
use std::f64::consts::{PI, TAU};

fn settings(delay: usize, m: usize, lambda: f64) -> TrainSettings {
    TrainSettings { delay, epsilon: 0.01, m, projection_seed: 42, fit: FitOptions::ridge(lambda) }
}

fn lorenz_model() -> (Model, Trajectory, Trajectory) {
    let gen = |init: [f64; 3], n: usize, seed: u64| {
        let mut s = Integration::new(0.025, n);
        s.transient_samples = 1000;
        let clean = integrate(&SystemSpec::lorenz(), &init, &s).unwrap();
        (add_measurement_noise(&clean, 0.01, seed).unwrap(), clean)
    };
    let (train, _) = gen([1.0, 1.0, 1.0], 20_000, 1);
    let (_, test) = gen([-3.0, 2.0, 20.0], 3000, 2);
    let (model, _) =
        NgrcModel::train(std::slice::from_ref(&train), &ChannelRoles::outputs_only(&["x"]), &settings(25, 1000, 0.0))
            .unwrap();
    (model, train, test)
}

/// Small Rössler model driven by a constant control.
fn eta_model() -> (Model, Vec<Trajectory>) {
    let clean: Vec<Trajectory> = [-0.2, 0.2]
        .iter()
        .map(|&eta| {
            let mut s = Integration::new(0.1, 3000);
            s.transient_samples = 500;
            s.constant_eta = Some(eta);
            integrate(&SystemSpec::rossler(), &[1.0, 1.0, 0.0], &s).unwrap()
        })
        .collect();
    let noisy = add_pooled_noise(&clean, 0.01, 4).unwrap();
    let roles = ChannelRoles::new(&["x", "y", "z"], &["eta"]);
    let (model, _) = NgrcModel::train(&noisy, &roles, &settings(5, 300, 1e-3)).unwrap();
    (model, noisy)
}

#[test]
fn learns_linear_contraction() {
    // restarted decays u -> 0.9 u covering [0.1, 2]
    let mut values = Vec::new();
    for start in 0..20 {
        let mut u = 2.0 - 0.05 * start as f64;
        for _ in 0..25 {
            values.push(u);
            u *= 0.9;
        }
    }
    let segments: Vec<Trajectory> = values
        .chunks(25)
        .map(|c| Trajectory::new(1.0, 0.0, vec!["u".into()], c.to_vec()).unwrap())
        .collect();
    let (model, _) =
        NgrcModel::train(&segments, &ChannelRoles::outputs_only(&["u"]), &settings(1, 200, 0.0)).unwrap();
    let seed = Trajectory::new(1.0, 0.0, vec!["u".into()], vec![1.0 / 0.9, 1.0]).unwrap();
    let mut h = model.history_from(&seed, 1).unwrap();
    let next = model.step(&mut h, &[]).unwrap()[0];
    assert!((next - 0.9).abs() < 1e-6, "{next}");
}

#[test]
fn step_reproduces_training_predictions() {
    let (model, train, _) = lorenz_model();
    let roles = model.roles().clone();
    let ds = assemble_dataset(&train, model.normalizer(), model.plan(), model.delay(), &roles).unwrap();
    let mut pred = vec![0.0];
    for (t, n) in [(0, model.delay()), (500, model.delay() + 500), (9000, model.delay() + 9000)] {
        model.weights().predict_into(ds.features(t), &mut pred);
        let expected = model.normalizer().denormalize_value(0, pred[0]);
        let mut h = model.history_from(&train, n).unwrap();
        let got = model.step(&mut h, &[]).unwrap()[0];
        assert_eq!(got.to_bits(), expected.to_bits(), "sample {t}");
    }
}

#[test]
fn lorenz_first_step_and_valid_time() {
    let (model, train, test) = lorenz_model();
    let x_std = sample_std(&train.column(0));
    let x = test.column(0);
    for n in [100, 700, 1500] {
        let mut h = model.history_from(&test, n).unwrap();
        let next = model.step(&mut h, &[]).unwrap()[0];
        assert!((next - x[n + 1]).abs() < 0.01 * x_std, "n={n}: {next} vs {}", x[n + 1]);
    }
    let vt = valid_prediction_time(&model, &test.select(&["x".into()]).unwrap().slice(0..2000), 0.3).unwrap();
    assert!(vt >= 1.0, "valid time {vt}");
}

#[test]
fn free_run_is_deterministic() {
    let (model, data) = eta_model();
    let series: Vec<f64> = (0..400).map(|k| 0.2 * (k as f64 * 0.05).sin()).collect();
    let run = || {
        let mut h = model.history_from(&data[0], 100).unwrap();
        free_run(&model, &mut h, 400, Exogenous::Series(&series)).unwrap().into_result().unwrap()
    };
    let (a, b) = (run(), run());
    let bits = |t: &Trajectory| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.len(), 400);
}

#[test]
fn short_sweep_gives_empty_maxima() {
    let (model, data) = eta_model();
    let h = model.history_from(&data[0], data[0].len() - 1).unwrap();
    let points = bifurcation_sweep(&model, &[-0.2, 0.0, 0.2], 3, 0, &h).unwrap();
    assert_eq!(points.len(), 3);
    for p in points {
        assert!(p.maxima.is_empty() && !p.failed);
    }
}

#[test]
fn ode_phase_tracks_position_on_cycle() {
    let spec = SystemSpec::Rossler { a: 0.2, b: 1.6, c: 5.7 };
    let tau = 0.1;
    let mut flow = OdeFlow::new(spec.clone(), &[1.0, 1.0, 0.0], tau, 5, 0.0).unwrap();
    for _ in 0..3000 {
        flow.advance().unwrap();
    }
    let mut xs = Vec::new();
    let mut states = Vec::new();
    for _ in 0..400 {
        flow.advance().unwrap();
        xs.push(flow.state()[0]);
        states.push(flow.state().to_vec());
    }
    let center = xs.iter().sum::<f64>() / xs.len() as f64;
    let settings = PhaseSettings { center, scales: vec![1.0; 3], tol: 1e-4, max_steps: 20_000, min_events: 5 };
    let phase_of = |s: &[f64]| estimate_phase(&mut OdeFlow::new(spec.clone(), s, tau, 5, 0.0).unwrap(), &settings).unwrap();

    // first sample after an upward crossing of the center
    let k = (1..xs.len()).find(|&k| xs[k - 1] < center && xs[k] >= center).unwrap();
    let at_event = phase_of(&states[k]);
    assert!(circular_distance(at_event.phase, 0.0) <= TAU * tau / at_event.period + 1e-3, "{}", at_event.phase);

    let half = (at_event.period / (2.0 * tau)).round() as usize;
    let later = phase_of(&states[k + half]);
    assert!(circular_distance(later.phase, (at_event.phase + PI) % TAU) < 0.1, "{}", later.phase);
}
