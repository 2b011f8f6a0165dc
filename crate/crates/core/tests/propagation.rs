mod common;

use davydov::c64;
use davydov::ensemble::{build_initial_state, Checkpoint, EnsembleState, InitialSettings};
use davydov::models::{ExcitonStart, HarmonicBath, Hamiltonian, Holstein, HolsteinCoupling, HolsteinParams, SpinBoson};
use davydov::observables::{energy, exciton_density, population_z};
use davydov::propagator::{
    run, run_collect, CheckpointPolicy, IntegratorConfig, MirrorSymmetry, PropagationConfig, RunStatus,
};
use ndarray::Array2;

fn config(t: f64, points: usize, rtol: f64) -> PropagationConfig {
    let mut ic = IntegratorConfig::new(t, points);
    ic.rtol = rtol;
    ic.atol = rtol * 1e-2;
    PropagationConfig::new(ic)
}

fn spin_boson(lambda: f64) -> SpinBoson {
    SpinBoson::new(-0.3, vec![0.4, 0.9, 1.6], vec![lambda, -0.5 * lambda, 0.3 * lambda]).unwrap()
}

fn start(model: &SpinBoson, m: usize, noise: f64) -> EnsembleState {
    let settings = InitialSettings {
        multiplicity: m,
        noise,
        seed: 3,
        ..Default::default()
    };
    build_initial_state(&model.initial_condition(), &settings).unwrap()
}

#[test]
fn uncoupled_spin_oscillates_as_a_cosine() {
    let sb = spin_boson(0.0);
    let period = 2.0 * std::f64::consts::PI / 0.3;
    for m in [1, 3] {
        let cfg = config(10.0 * period, 201, 1e-10);
        let (out, states) = run_collect(start(&sb, m, 0.0), &sb, &cfg).unwrap();
        assert!(out.status.is_completed());
        let worst = states
            .iter()
            .map(|s| (population_z(s).unwrap() - (0.3 * s.time).cos()).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "M={m}: {worst:e}");
    }
}

#[test]
fn free_oscillator_rotates_its_displacement() {
    let mut bath = HarmonicBath::new(vec![1.3]);
    bath.offset = 0.25;
    bath.initial = vec![[0.6, -0.2]];
    let st = build_initial_state(&bath.initial_condition(), &InitialSettings::default()).unwrap();
    let a0 = c64::new(0.6, -0.2);
    let (_, states) = run_collect(st, &bath, &config(20.0, 81, 1e-10)).unwrap();
    for s in &states {
        let want = a0 * c64::from_polar(1.0, -1.3 * s.time);
        assert!((s.displacements[[0, 0]] - want).norm() < 1e-8, "t={}", s.time);
        let phase = c64::from_polar(1.0, -0.25 * s.time);
        assert!((s.coefficients[[0, 0]] - phase).norm() < 1e-8, "t={}", s.time);
    }
}

#[test]
fn driven_oscillator_circles_the_shifted_origin() {
    let mut bath = HarmonicBath::new(vec![0.8]);
    bath.drive = vec![0.4];
    let st = build_initial_state(&bath.initial_condition(), &InitialSettings::default()).unwrap();
    let (_, states) = run_collect(st, &bath, &config(15.0, 61, 1e-10)).unwrap();
    let shift = 0.4 / 0.8;
    for s in &states {
        let want = c64::new(shift, 0.0) * c64::from_polar(1.0, -0.8 * s.time) - shift;
        assert!((s.displacements[[0, 0]] - want).norm() < 1e-8, "t={}", s.time);
        assert!((s.norm_squared() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn coupled_run_conserves_norm_and_energy() {
    let sb = spin_boson(0.6);
    let cfg = config(20.0, 41, 1e-9);
    let out = run(start(&sb, 4, 1e-3), &sb, &cfg, &mut |_| {}).unwrap();
    assert!(out.status.is_completed());
    let e0 = out.samples[0].energy;
    for s in &out.samples {
        assert!((s.norm_squared - 1.0).abs() < 1e-6, "t={}", s.time);
        assert!((s.energy - e0).abs() < 1e-5 * e0.abs().max(1.0), "t={}", s.time);
    }
}

#[test]
fn merged_runs_stay_conservative_and_synchronized() {
    let sb = spin_boson(0.6);
    let mut cfg = config(15.0, 31, 1e-9);
    // A wide threshold forces merges early in the run.
    cfg.apoptosis.epsilon = 1.0;
    let mut sync: f64 = 0.0;
    let out = run(start(&sb, 5, 1e-3), &sb, &cfg, &mut |s| sync = sync.max(s.member_sync_error())).unwrap();
    assert!(out.status.is_completed());
    assert!(!out.events().is_empty());
    assert!(sync < 1e-12, "{sync:e}");
    let e0 = out.samples[0].energy;
    for s in &out.samples {
        assert!((s.norm_squared - 1.0).abs() < 1e-6);
        assert!((s.energy - e0).abs() < 1e-5 * e0.abs().max(1.0));
    }
    let fin = &out.final_state;
    assert!((energy(fin, &sb).unwrap() - out.samples.last().unwrap().energy).abs() < 1e-12);
}

#[test]
fn runs_are_deterministic() {
    let sb = spin_boson(0.6);
    let cfg = config(6.0, 13, 1e-8);
    let a = run(start(&sb, 4, 1e-3), &sb, &cfg, &mut |_| {}).unwrap();
    let b = run(start(&sb, 4, 1e-3), &sb, &cfg, &mut |_| {}).unwrap();
    assert_eq!(a.final_state, b.final_state);
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.stats, b.stats);
}

#[test]
fn tighter_tolerances_converge() {
    let sb = spin_boson(0.6);
    let finals: Vec<Array2<c64>> = [1e-5, 1e-7, 1e-9, 1e-11]
        .iter()
        .map(|&tol| {
            let mut cfg = config(8.0, 2, tol);
            cfg.apoptosis.enabled = false;
            run(start(&sb, 3, 1e-3), &sb, &cfg, &mut |_| {}).unwrap().final_state.displacements
        })
        .collect();
    let diff = |a: &Array2<c64>, b: &Array2<c64>| a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    let errs: Vec<f64> = finals[..3].iter().map(|f| diff(f, &finals[3])).collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    assert!(errs[2] < 1e-7, "{errs:?}");
}

#[test]
fn checkpoint_resume_matches_a_straight_run() {
    let sb = spin_boson(0.6);
    let path = std::env::temp_dir().join(format!("davydov-ckpt-{}.json", std::process::id()));
    let mut cfg = config(4.0, 9, 1e-10);
    cfg.checkpoint = Some(CheckpointPolicy {
        period: 1.5,
        path: path.clone(),
    });
    let straight = run(start(&sb, 3, 1e-3), &sb, &cfg, &mut |_| {}).unwrap();
    let saved = Checkpoint::read(&path).unwrap().into_state().unwrap();
    std::fs::remove_file(&path).ok();
    assert!(saved.time > 0.0 && saved.time <= 4.0);
    let mut rest = config(4.0, 9, 1e-10);
    rest.integrator.initial_step = 1e-3;
    let resumed = run(saved, &sb, &rest, &mut |_| {}).unwrap();
    let d = straight
        .final_state
        .displacements
        .iter()
        .zip(resumed.final_state.displacements.iter())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(d < 1e-7, "{d:e}");
}

#[test]
fn bad_configurations_are_rejected() {
    let sb = spin_boson(0.6);
    let mut cfg = config(1.0, 3, 1e-8);
    cfg.integrator.min_step = 1.0;
    assert!(run(start(&sb, 2, 1e-3), &sb, &cfg, &mut |_| {}).is_err());
    let mut late = start(&sb, 2, 1e-3);
    late.time = 2.0;
    assert!(run(late, &sb, &config(1.0, 3, 1e-8), &mut |_| {}).is_err());
    let other = SpinBoson::new(-0.3, vec![1.0], vec![0.1]).unwrap();
    assert!(run(start(&sb, 2, 1e-3), &other, &config(1.0, 3, 1e-8), &mut |_| {}).is_err());
}

#[test]
fn exhausted_step_budget_is_an_abort() {
    let sb = spin_boson(0.6);
    let mut cfg = config(5.0, 3, 1e-8);
    cfg.integrator.max_steps = 4;
    let out = run(start(&sb, 2, 1e-3), &sb, &cfg, &mut |_| {}).unwrap();
    match out.status {
        RunStatus::Aborted { time, .. } => assert!(time < 5.0 && time == out.final_state.time),
        RunStatus::Completed => panic!("four steps cannot reach t = 5"),
    }
}

fn small_chain() -> Holstein {
    Holstein::new(&HolsteinParams {
        sites: 6,
        hopping: 0.3,
        omega0: 1.0,
        bandwidth: 0.4,
        coupling: HolsteinCoupling::Constant { g: 0.8 },
        start: ExcitonStart::Site0,
    })
    .unwrap()
}

#[test]
fn mirror_symmetry_is_found_only_on_symmetric_states() {
    let h = small_chain();
    let ic = h.initial_condition();
    let settings = InitialSettings {
        multiplicity: 5,
        seed: 2,
        ..Default::default()
    };
    let st = build_initial_state(&ic, &settings).unwrap();
    assert!(MirrorSymmetry::detect(&st, &ic).is_some());
    let mut bent = st.clone();
    bent.displacements[[1, 0]] += 1e-6;
    assert!(MirrorSymmetry::detect(&bent, &ic).is_none());
    let sb = spin_boson(0.6);
    assert!(MirrorSymmetry::detect(&start(&sb, 3, 1e-3), &sb.initial_condition()).is_none());
}

#[test]
fn symmetric_chains_stay_symmetric() {
    let h = small_chain();
    let st = build_initial_state(
        &h.initial_condition(),
        &InitialSettings {
            multiplicity: 5,
            seed: 2,
            ..Default::default()
        },
    )
    .unwrap();
    let mirror = Holstein::mirror(6);
    let mut asym: f64 = 0.0;
    let out = run(st, &h, &config(10.0, 21, 1e-8), &mut |s| {
        let rho = exciton_density(s);
        asym = asym.max(mirror.iter().enumerate().map(|(i, &j)| (rho[i] - rho[j]).abs()).fold(0.0, f64::max));
    })
    .unwrap();
    assert!(out.status.is_completed());
    assert!(asym < 1e-12, "{asym:e}");
}
