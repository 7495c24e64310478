use nrloc_core::estimators::NlosPolicy;
use nrloc_core::sim::{run_static_scenario, run_track_scenario, write_outputs, Method, NoiseSpec, RunSpec, Scenario};
use std::path::PathBuf;

fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

fn load(name: &str) -> Scenario {
    Scenario::load(&path(name)).unwrap()
}

#[test]
fn every_shipped_scenario_loads() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") && p.file_stem().is_some_and(|s| s != "grid_prs") {
            Scenario::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 6);
}

#[test]
fn noiseless_static_fixes_are_exact() {
    let mut s = load("square_static");
    s.noise = NoiseSpec {
        calibrated: false,
        ..NoiseSpec::default()
    };
    for method in [Method::DlTdoa, Method::MultiRtt, Method::UlAoa] {
        let spec = RunSpec {
            runs: 5,
            ..RunSpec::new(path("square_static"), method)
        };
        let r = run_static_scenario(&s, &spec).unwrap();
        assert!(r.stats.rmse < 1e-3, "{method:?}: {}", r.stats.rmse);
    }
}

#[test]
fn static_runs_are_reproducible() {
    let s = load("square_static");
    let spec = RunSpec {
        runs: 50,
        seed: 9,
        ..RunSpec::new(path("square_static"), Method::Fused)
    };
    let a = run_static_scenario(&s, &spec).unwrap();
    let b = run_static_scenario(&s, &RunSpec { threads: Some(3), ..spec.clone() }).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = run_static_scenario(&s, &RunSpec { seed: 10, ..spec }).unwrap();
    assert_ne!(a.stats.rmse, c.stats.rmse);
}

#[test]
fn rmse_falls_with_numerology() {
    let s = load("square_static");
    let rmse: Vec<f64> = (0..=3)
        .map(|mu| {
            let spec = RunSpec {
                mu,
                runs: 200,
                seed: 2,
                ..RunSpec::new(path("square_static"), Method::MultiRtt)
            };
            run_static_scenario(&s, &spec).unwrap().stats.rmse
        })
        .collect();
    assert!(rmse.windows(2).all(|w| w[0] > w[1]), "{rmse:?}");
}

#[test]
fn fused_city_fix_beats_single_methods() {
    let s = load("city_outdoor");
    let mae = |method| {
        let spec = RunSpec {
            runs: 10,
            seed: 3,
            ..RunSpec::new(path("city_outdoor"), method)
        };
        run_track_scenario(&s, &spec).unwrap().stats.mae
    };
    let fused = mae(Method::Fused);
    let tdoa = mae(Method::DlTdoa);
    let aoa = mae(Method::UlAoa);
    assert!(fused <= tdoa.min(aoa), "fused {fused} tdoa {tdoa} aoa {aoa}");
}

#[test]
fn indoor_gate_rejects_and_oracle_is_best() {
    let s = load("indoor_industrial");
    let run = |nlos| {
        let spec = RunSpec {
            mu: 3,
            runs: 10,
            seed: 4,
            nlos: Some(nlos),
            ..RunSpec::new(path("indoor_industrial"), Method::DlTdoa)
        };
        run_track_scenario(&s, &spec).unwrap()
    };
    let none = run(NlosPolicy::None);
    let gate = run(NlosPolicy::InnovationGate { threshold: 3.0 });
    let oracle = run(NlosPolicy::Oracle);
    assert!(none.nlos_link_fraction > 0.05);
    assert!(gate.stats.mae < none.stats.mae);
    assert!(oracle.stats.mae < none.stats.mae);
}

#[test]
fn outputs_are_written() {
    let s = load("office_single_bs");
    let spec = RunSpec {
        runs: 20,
        ..RunSpec::new(path("office_single_bs"), Method::Fused)
    };
    let r = run_static_scenario(&s, &spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&r, dir.path()).unwrap();
    for f in ["report.json", "errors.csv", "cdf.csv"] {
        assert!(dir.path().join(f).metadata().unwrap().len() > 0, "{f}");
    }
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["runs"], 20);
}
