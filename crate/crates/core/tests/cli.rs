mod common;

use affground::data::Split;
use affground::pipeline;
use common::Workspace;

#[test]
fn usage_errors_exit_two() {
    let ws = Workspace::new(&[]);
    assert_eq!(ws.cli(&["eval"]), 2);
    assert_eq!(ws.cli(&["predict", "--query", "hold"]), 2);
    assert_eq!(ws.cli(&["train", "--seeds", "x"]), 2);
}

#[test]
fn missing_inputs_exit_one() {
    let ws = Workspace::new(&[]);
    assert_eq!(ws.cli(&["gen-labels"]), 1);
    assert_eq!(ws.cli(&["eval", "--seeds", "0"]), 1);
    assert_eq!(ws.cli(&["refine", "--scope", "nope/none"]), 1);
}

#[test]
fn predict_and_grasp_select() {
    let ws = Workspace::new(&["train.epochs=1"]);
    for step in [&["fixture"][..], &["gen-labels"], &["pair"], &["train"]] {
        assert_eq!(ws.cli(step), 0, "{step:?}");
    }
    let cfg = ws.config();
    let test = pipeline::load_split(&cfg, Split::Test).unwrap();
    let sample = test.ego().next().unwrap();
    let image = cfg.data_root.join(&cfg.setting).join(format!("{}.png", sample.id));
    let ckpt = pipeline::work_dir(&cfg).checkpoint(0);
    let out = ws.path("pred.json");
    let overlay = ws.path("overlay.png");
    let args = ["predict", "--checkpoint", ckpt.to_str().unwrap(), "--image", image.to_str().unwrap(), "--query", &sample.affordance, "--out", out.to_str().unwrap(), "--overlay", overlay.to_str().unwrap()];
    assert_eq!(ws.cli(&args), 0);
    let h = pipeline::load_heatmap(&out).unwrap();
    assert_eq!(h.shape(), (64, 64));
    assert!((h.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(overlay.exists());

    let (y, x) = h.grid().argmax();
    let cands = format!(r#"[{{"id": "far", "u": {}, "v": {}}}, {{"id": "peak", "u": {x}, "v": {y}}}]"#, (x + 32) % 64, (y + 32) % 64);
    let cpath = ws.path("cands.json");
    std::fs::write(&cpath, cands).unwrap();
    let best = pipeline::run_grasp_select(&out, &cpath).unwrap();
    assert_eq!(best.id, "peak");
    assert_eq!(ws.cli(&["grasp-select", "--heatmap", out.to_str().unwrap(), "--candidates", cpath.to_str().unwrap()]), 0);

    // a checkpoint from another config is refused unless asked
    let other = Workspace { dir: tempfile::tempdir().unwrap(), overrides: [ws.overrides.clone(), vec!["blur_sigma=2.0".into()]].concat() };
    assert_eq!(other.cli(&args), 1);
    let mut allowed = args.to_vec();
    allowed.push("--allow-config-mismatch");
    assert_eq!(other.cli(&allowed), 0);
}
