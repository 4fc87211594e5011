mod common;

use common::{code, finercam, small_spec, synth_fixture};
use finercam_cli::commands::{self, open_workspace};
use finercam_cli::request::{run_explain, ExplainRequest, References};
use finercam_core::eval::{EvalConfig, EvalReport, SynthSpec};
use finercam_core::head::{load_head, save_head, ClassifierHead, HeadOrigin};
use finercam_core::tensor_store::{read_tensor, Dataset, Split};

fn s(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn trained_head_reloads_with_full_train_accuracy() {
    let f = synth_fixture(&small_spec());
    let head = load_head(&f.head).unwrap();
    let ds = Dataset::open(&f.manifest).unwrap();
    let acc = commands::embeddings(&ds, Split::Train).unwrap().accuracy(&head).unwrap();
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn train_is_byte_reproducible() {
    let f = synth_fixture(&small_spec());
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = f.path(&format!("{run}.json"));
        let o = finercam(&["train", "--manifest", s(&f.manifest), "--out", s(&out), "--seed", "3", "--batch-size", "16"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push((
            std::fs::read(f.path(&format!("{run}.weights.fct"))).unwrap(),
            std::fs::read(f.path(&format!("{run}.bias.fct"))).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn exit_codes() {
    let f = synth_fixture(&small_spec());
    let missing = f.path("missing.json");
    let o = finercam(&["train", "--manifest", s(&missing), "--out", s(&f.path("h.json"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));

    assert_eq!(code(&finercam(&[])), 2);
    assert_eq!(code(&finercam(&["explain", "--bogus"])), 2);

    let out = f.path("s.fct");
    let base = ["explain", "--manifest", s(&f.manifest), "--head", s(&f.head), "--out", s(&out)];
    let run = |extra: &[&str]| {
        let mut args = base.to_vec();
        args.extend_from_slice(extra);
        finercam(&args)
    };
    assert_eq!(code(&run(&["--sample", "test_0000"])), 0);
    assert_eq!(code(&run(&["--sample", "nope"])), 2);
    assert_eq!(code(&run(&["--sample", "test_0000", "--target", "99"])), 2);
    assert_eq!(code(&run(&["--sample", "test_0000", "--gamma", "4.5"])), 2);
    assert_eq!(code(&run(&["--sample", "test_0000", "--refs", "auto:8"])), 2);
    assert_eq!(code(&run(&["--sample", "test_0000", "--method", "sharp"])), 2);

    // A backend that cannot be started is a computation failure.
    let broken = f.path("broken_backend.json");
    std::fs::write(&broken, r#"{"kind": "external", "command": ["/nonexistent/backend"]}"#).unwrap();
    assert_eq!(code(&run(&["--sample", "test_0000", "--backend", s(&broken)])), 1);
}

#[test]
fn empty_test_split_is_an_error() {
    let f = synth_fixture(&SynthSpec {
        num_train: 64,
        num_test: 0,
        ..SynthSpec::default()
    });
    let o = finercam(&["eval", "--manifest", s(&f.manifest), "--head", s(&f.head)]);
    assert_eq!(code(&o), 2);
    assert!(o.stdout.is_empty());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no test samples"));
}

#[test]
fn eval_report_round_trips() {
    let f = synth_fixture(&small_spec());
    let out = f.path("report.json");
    let o = finercam(&["eval", "--manifest", s(&f.manifest), "--head", s(&f.head), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let report: EvalReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report.num_images, 16);
    assert_eq!(report.per_image.len(), 16);
    assert!(report.rd(0.05).is_some() && report.rd(0.1).is_some());
    assert!(report.pointing_game.is_some());
    let again: EvalReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(again, report);

    let ws = open_workspace(&f.manifest, &f.head, None).unwrap();
    let direct = commands::eval(&ws, &EvalConfig::default(), Split::Test).unwrap();
    assert_eq!(direct, report);
}

fn saliency_of(ws: &finercam_cli::workspace::Workspace, req: &ExplainRequest) -> Vec<f32> {
    run_explain(ws, req).unwrap().saliency.into_vec()
}

#[test]
fn gamma_zero_single_reference_is_baseline() {
    let f = synth_fixture(&small_spec());
    let ws = open_workspace(&f.manifest, &f.head, None).unwrap();
    for method in [finercam_core::cam::Method::Grad, finercam_core::cam::Method::Layer, finercam_core::cam::Method::Score] {
        let mut req = ExplainRequest::new("test_0005");
        req.method = method;
        req.references = References::Explicit(Vec::new());
        let baseline = saliency_of(&ws, &req);
        req.references = References::Auto(1);
        req.gamma = 0.0;
        let finer = saliency_of(&ws, &req);
        assert_eq!(
            baseline.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            finer.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            "{method:?}"
        );
    }
}

#[test]
fn explicit_reference_matches_auto() {
    let f = synth_fixture(&small_spec());
    let ws = open_workspace(&f.manifest, &f.head, None).unwrap();
    let mut req = ExplainRequest::new("test_0002");
    req.references = References::Auto(1);
    let auto = run_explain(&ws, &req).unwrap();
    req.references = References::Explicit(auto.references_used.clone());
    let explicit = run_explain(&ws, &req).unwrap();
    assert_eq!(auto, explicit);
}

#[test]
fn explain_writes_tensor_and_overlay() {
    let f = synth_fixture(&small_spec());
    let out = f.path("s.fct");
    let png = f.path("o.png");
    let o = finercam(&[
        "explain", "--manifest", s(&f.manifest), "--head", s(&f.head), "--sample", "test_0001",
        "--refs", "2,3", "--out", s(&out), "--overlay", s(&png),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = read_tensor(&out).unwrap();
    assert_eq!(t.shape(), &[32, 32]);
    let max = t.as_f32().unwrap().iter().copied().fold(f32::MIN, f32::max);
    assert_eq!(max, 1.0);
    assert_eq!(&std::fs::read(&png).unwrap()[..8], b"\x89PNG\r\n\x1a\n");

    let raw = f.path("raw.fct");
    let o = finercam(&[
        "explain", "--manifest", s(&f.manifest), "--head", s(&f.head), "--sample", "test_0001",
        "--output", "raw", "--out", s(&raw),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(read_tensor(&raw).unwrap().shape(), &[8, 8]);
}

fn head_file(dir: &std::path::Path, rows: &[[f32; 2]]) -> std::path::PathBuf {
    let names = (0..rows.len()).map(|i| format!("c{i}")).collect();
    let head = ClassifierHead::new(rows.len(), 2, rows.concat(), None, names, HeadOrigin::Trained).unwrap();
    let p = dir.join(format!("head{}.json", rows.len() * 10 + rows[1][1] as usize));
    save_head(&p, &head, None).unwrap();
    p
}

fn csv_rows(text: &str) -> Vec<Vec<f64>> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("rank,mean,std"));
    lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn similarity_csv_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let identical = head_file(dir.path(), &[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]);
    let o = finercam(&["similarity", "--head", s(&identical)]);
    assert_eq!(code(&o), 0);
    for row in csv_rows(&String::from_utf8(o.stdout).unwrap()) {
        assert!((row[1] - 1.0).abs() < 1e-9);
    }

    let orthogonal = head_file(dir.path(), &[[1.0, 0.0], [0.0, 1.0]]);
    let rows = csv_rows(&commands::similarity_csv(&orthogonal).unwrap());
    assert_eq!(rows, vec![vec![1.0, 0.0, 0.0]]);

    let hand = head_file(dir.path(), &[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
    let out = dir.path().join("sim.csv");
    assert_eq!(code(&finercam(&["similarity", "--head", s(&hand), "--out", s(&out)])), 0);
    let rows = csv_rows(&std::fs::read_to_string(&out).unwrap());
    assert!((rows[0][1] - 2.0 / 3.0).abs() < 1e-9);
    assert!(rows[1][1].abs() < 1e-9);
}
