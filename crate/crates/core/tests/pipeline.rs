use std::io::Write;

use rand::SeedableRng;

use fairhash::harness::{MEAN, ALL_USERS};
use fairhash::seeding::UserRng;
use fairhash::{gen_gaussian, read_canonical, run_experiment, write_canonical, ExperimentConfig, ExperimentKind};

#[test]
fn canonical_file_feeds_a_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gauss.txt");
    let ds = gen_gaussian(50.0, 7.0, 4000, 100, &mut UserRng::seed_from_u64(3)).unwrap();
    write_canonical(&path, &ds).unwrap();
    assert_eq!(read_canonical(&path).unwrap(), ds);

    let cfg = ExperimentConfig::from_json(&format!(
        r#"{{"kind":"BIA_DISPARITY","dataset":"FILE","dataset_path":{:?},"epsilons":[2.0],"repetitions":2,
            "output_dir":{:?},"emit_user_rows":true}}"#,
        path,
        dir.path().join("out"),
    ))
    .unwrap();
    let out = run_experiment(&cfg).unwrap();
    assert!(out.manifest.repetitions.iter().all(|r| r.dataset_seed.is_none() && r.dataset.n_users == 4000));
    let asr = out.bia().iter().find(|r| r.repetition == MEAN && r.group == ALL_USERS).unwrap().asr.unwrap();
    assert!(asr > 0.0 && asr < 1.0);

    let users = dir.path().join("out/users");
    let mut names: Vec<String> =
        std::fs::read_dir(&users).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names.len(), 4);
    assert!(names.contains(&"bia_disparity_eps2_olh_rep0_assignment.csv".to_string()));
    let bia = std::fs::read_to_string(users.join("bia_disparity_eps2_olh_rep1_bia.csv")).unwrap();
    assert_eq!(bia.lines().count(), 4001);
}

#[test]
fn raw_csv_is_ingested_by_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("people.csv");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "age,city").unwrap();
    for i in 0..3000 {
        let city = ["lyon", "oslo", "kyiv", "lima", "rome"][(i * i) % 5];
        writeln!(f, "{},{city}", 20 + i % 7).unwrap();
    }
    writeln!(f, "?,oslo").unwrap();
    drop(f);

    let cfg = ExperimentConfig::from_json(&format!(
        r#"{{"kind":"MGA_DISPARITY","dataset":"INGEST","dataset_path":{path:?},
            "ingest":{{"mode":"categorical","column":"city","has_header":true}},
            "epsilons":[1.0],"repetitions":1,"kappa":10,"targets":[0,1]}}"#,
    ))
    .unwrap();
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.manifest.repetitions[0].dataset.n_users, 3001);
    assert!(out.manifest.repetitions[0].dataset.domain_size <= 5);
    assert_eq!(out.mga().iter().filter(|r| r.repetition == MEAN).count(), 3);
    assert!(out.mga().iter().all(|r| r.status == "ok" && r.n_attackers == 15));
}

#[test]
fn timing_reports_every_protocol() {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Timing);
    cfg.n_users = 2000;
    cfg.repetitions = 2;
    cfg.epsilons = vec![1.0];
    cfg.rhos = vec![1.05];
    cfg.domain_sizes = Some(vec![50, 100]);
    let out = run_experiment(&cfg).unwrap();
    let means: Vec<_> = out.timing().iter().filter(|r| r.repetition == MEAN).collect();
    assert_eq!(means.len(), 4);
    assert!(means.iter().all(|r| r.n_users == 2000 && r.per_user_ms.unwrap() > 0.0));
    assert!(means.iter().filter(|r| r.rho.is_none()).all(|r| r.mean_draws == Some(1.0)));
    assert_eq!(out.manifest.threads, 1);
}
