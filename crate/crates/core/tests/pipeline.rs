use dexc::config::ExperimentConfig;
use dexc::eval::Method;
use dexc::ipm::IpmConfig;
use dexc::phantoms::PhantomKind;
use dexc::pipeline::{bench, write_bench_csv, Experiment, BENCH_HEADER};
use dexc::Error;

fn small_config(n: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::with_phantom(PhantomKind::Hy, n);
    cfg.seed = 3;
    cfg
}

#[test]
fn clean_data_with_strong_coupling_separates_materials() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(48);
    cfg.simulation.noise_level = 0.0;
    cfg.simulation.rotation_deg = 0.0;
    cfg.ip.alpha = 10.0;
    cfg.ip.beta = 10.0;
    cfg.jtv.enabled = false;
    let summary = Experiment::new(cfg)
        .unwrap()
        .with_output_dir(tmp.path())
        .run()
        .unwrap();
    assert!(summary.all_converged);
    let (method, report) = &summary.metrics[0];
    assert_eq!(*method, Method::Ip);
    assert!(
        report.misclassification <= 0.05,
        "{}",
        report.misclassification
    );
}

#[test]
fn stages_resume_from_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = Experiment::new(small_config(24))
        .unwrap()
        .with_output_dir(tmp.path());
    let phantom = exp.generate_phantom().unwrap();
    assert_eq!(exp.load_phantom().unwrap(), phantom);
    let m = exp.simulate(&phantom).unwrap();
    let loaded = exp.load_sinograms().unwrap();
    assert_eq!(loaded.low, m.low);
    assert_eq!(loaded.high, m.high);
    let ip = exp.reconstruct(Method::Ip, &loaded, None).unwrap();
    assert_eq!(exp.load_recon(Method::Ip).unwrap(), ip.recon);
    let report = exp.evaluate(Method::Ip, &ip.recon, &phantom).unwrap();
    exp.write_metrics(&[(Method::Ip, report)]).unwrap();
    let csv = std::fs::read_to_string(exp.layout.metrics()).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("ip,"));
    assert!(tmp.path().join("ip").join("seg_1.pgm").exists());
    assert!(tmp.path().join("sinogram").join("metadata.toml").exists());
}

#[test]
fn parameter_grid_picks_from_candidates() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(16);
    cfg.ip.alpha_grid = vec![1.0, 50.0, 500.0];
    let exp = Experiment::new(cfg).unwrap().with_output_dir(tmp.path());
    let phantom = exp.generate_phantom().unwrap();
    let m = exp.simulate(&phantom).unwrap();
    let o = exp.reconstruct(Method::Ip, &m, Some(&phantom)).unwrap();
    let sel = o.selection.unwrap();
    assert!([1.0, 50.0, 500.0].contains(&sel.chosen));
    assert_eq!(o.parameter, sel.chosen);
    assert_eq!(sel.scores.len(), 3);
    assert!(tmp.path().join("ip").join("selection.csv").exists());

    // Scoring needs the ground truth.
    assert!(matches!(
        exp.reconstruct(Method::Ip, &m, None),
        Err(Error::Config(_))
    ));
}

#[test]
fn provenance_records_hash_and_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(16);
    cfg.jtv.solver.n_iters = 20;
    Experiment::new(cfg.clone())
        .unwrap()
        .with_output_dir(tmp.path())
        .run()
        .unwrap();
    let text = std::fs::read_to_string(tmp.path().join("provenance.toml")).unwrap();
    let value: toml::Table = text.parse().unwrap();
    assert_eq!(value["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(
        value["seeds"]["noise"].as_str().unwrap(),
        cfg.sub_seeds().noise.to_string()
    );
    assert!(value["ip"]["converged"].as_bool().unwrap());
    let saved = ExperimentConfig::load(&tmp.path().join("config.toml")).unwrap();
    assert_eq!(saved.seed, cfg.seed);
}

#[test]
fn different_seeds_change_the_noise() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut sinos = Vec::new();
    for (seed, dir) in [1u64, 2].iter().zip(&dirs) {
        let mut cfg = small_config(16);
        cfg.seed = *seed;
        let exp = Experiment::new(cfg).unwrap().with_output_dir(dir.path());
        let ph = exp.generate_phantom().unwrap();
        sinos.push(exp.simulate(&ph).unwrap());
    }
    assert_ne!(sinos[0].low, sinos[1].low);
}

#[test]
fn bench_rows_and_headers() {
    let mut cfg = small_config(32);
    cfg.bench.sizes = vec![];
    let mut out = Vec::new();
    write_bench_csv(&mut out, &bench(&cfg, &IpmConfig::default()).unwrap()).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), format!("{BENCH_HEADER}\n"));

    cfg.bench.sizes = vec![32, 64];
    let rows = bench(&cfg, &IpmConfig::default()).unwrap();
    assert_eq!(rows[0].dimension, 2048);
    assert_eq!(rows[1].dimension, 8192);
    assert!(rows[1].ipm_iters >= rows[0].ipm_iters);
    assert!(rows[1].pcg_iters >= rows[0].pcg_iters);
}

#[test]
fn invalid_configs_are_rejected_with_locations() {
    let err = ExperimentConfig::from_toml_str(
        "[phantom]\nkind = \"hy\"\nsize = 32\n\n[ip]\nalpha = 1.0\nbeta = 2.0\n",
    )
    .and_then(|c| c.validate().map(|_| c))
    .unwrap_err();
    assert!(err.to_string().contains("beta"), "{err}");

    let err = ExperimentConfig::from_toml_str("[phantom]\nkind = \"hy\"\nsize = 32\nbogus = 1\n")
        .unwrap_err();
    assert!(err.to_string().contains("line 4"), "{err}");
}
