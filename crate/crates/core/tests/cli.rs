mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cytoeval::corpus::{class_split_counts, CategoryTable, Split};
use cytoeval::synth::{self, PerturbationSpec};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cytoeval"))
        .args(args)
        .env_remove("CYTOEVAL_OUT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn rows(text: &str) -> Vec<Vec<String>> {
    csv::Reader::from_reader(text.as_bytes())
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect()
}

/// A synthetic corpus on disk with `dets_perfect.json` and
/// `dets_perturbed.json`.
fn scene_dir(seed: u64) -> (tempfile::TempDir, cytoeval::synth::Scene) {
    let dir = tempfile::tempdir().unwrap();
    let scene = common::scene(seed, 6);
    let p = PerturbationSpec {
        drop_rate: 0.2,
        phantom_rate: 0.3,
        flip_rate: 0.2,
        fp_score_max: 0.9,
        tp_score_min: 0.5,
        seed,
        ..PerturbationSpec::default()
    };
    let (dets, ledger) = synth::perturb(&scene.corpus, &scene.perfect, &p).unwrap();
    synth::write_scene(
        dir.path(),
        &scene.corpus,
        &[
            ("perfect".into(), scene.perfect.clone(), None),
            ("perturbed".into(), dets, Some(ledger)),
        ],
    )
    .unwrap();
    (dir, scene)
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn expected_counts_csv(scene: &synth::Scene) -> String {
    let counts = class_split_counts(&scene.corpus);
    let table = scene.corpus.categories();
    let mut out = String::from("category,train,test,val\n");
    for c in table.iter() {
        let get = |s: Split| counts.get(&(c.id, s)).copied().unwrap_or(0);
        out += &format!("{},{},{},{}\n", c.name, get(Split::Train), get(Split::Test), get(Split::Val));
    }
    out
}

#[test]
fn validate_exit_codes() {
    let (dir, scene) = scene_dir(1);
    let d = dir.path();
    let expected = d.join("expected.csv");
    std::fs::write(&expected, expected_counts_csv(&scene)).unwrap();
    let out = p(d, "out");
    let ok = run(&["validate", "--gt", &p(d, "gt.json"), "--expected", expected.to_str().unwrap(), "--out", &out]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(read(d.join("out/statistics.csv")).starts_with("category,column,expected,actual,status\n"));

    // one count off by one
    let text = expected_counts_csv(&scene);
    let lymphoma = text.lines().find(|l| l.starts_with("Lymphoma,")).unwrap().to_string();
    let test_count: u64 = lymphoma.split(',').nth(2).unwrap().parse().unwrap();
    let bumped = format!("Lymphoma,0,{},0", test_count + 1);
    std::fs::write(&expected, text.replace(&lymphoma, &bumped)).unwrap();
    let bad = run(&["validate", "--gt", &p(d, "gt.json"), "--expected", expected.to_str().unwrap(), "--out", &out]);
    assert_eq!(code(&bad), 1);
    let stdout = String::from_utf8_lossy(&bad.stdout);
    assert!(stdout.contains("Lymphoma test"), "{stdout}");

    let missing = run(&["validate", "--gt", &p(d, "nope.json"), "--expected", expected.to_str().unwrap(), "--out", &out]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn evaluate_perfect_and_identical_models() {
    let (dir, scene) = scene_dir(2);
    let d = dir.path();
    let perfect = format!("a={}", p(d, "dets_perfect.json"));
    let twin = format!("b={}", p(d, "dets_perfect.json"));
    let o = run(&["evaluate", "--gt", &p(d, "gt.json"), "--dets", &perfect, "--dets", &twin, "--out", &p(d, "out"), "--format", "csv,json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = rows(&read(d.join("out/evaluation.csv")));
    let present: Vec<String> = scene
        .corpus
        .categories()
        .iter()
        .filter(|c| scene.corpus.annotations().iter().any(|a| a.category_id == c.id))
        .map(|c| c.name.clone())
        .collect();
    assert!(!present.is_empty());
    for r in &table {
        assert_eq!(r[3], r[4], "identical inputs gave different columns: {r:?}");
        if present.contains(&r[0]) {
            assert_eq!(r[3], "1.000", "{r:?}");
        }
    }
    let json: serde_json::Value = serde_json::from_str(&read(d.join("out/evaluation.json"))).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 2);
}

#[test]
fn confusion_variants() {
    let (dir, _) = scene_dir(3);
    let d = dir.path();
    let gt = p(d, "gt.json");
    let perfect = format!("perfect={}", p(d, "dets_perfect.json"));
    let perturbed = format!("perturbed={}", p(d, "dets_perturbed.json"));
    let out = p(d, "out");

    assert_eq!(code(&run(&["confusion", "--gt", &gt, "--dets", &perfect, "--out", &out])), 0);
    let grid = rows(&read(d.join("out/confusion_extended_perfect.csv")));
    assert_eq!(grid.len(), 12);
    for (i, r) in grid.iter().enumerate() {
        for (j, v) in r[1..].iter().enumerate() {
            if i != j {
                assert_eq!(v, "0", "off-diagonal cell {i},{j}");
            }
        }
    }

    let same = format!("again={}", p(d, "dets_perturbed.json"));
    assert_eq!(code(&run(&["confusion", "--gt", &gt, "--dets", &perturbed, "--dets", &same, "--variant", "diff", "--out", &out])), 0);
    let diff = rows(&read(d.join("out/confusion_diff_perturbed_again.csv")));
    assert!(diff.iter().all(|r| r[1..].iter().all(|v| v == "0")));

    assert_eq!(code(&run(&["confusion", "--gt", &gt, "--dets", &perturbed, "--variant", "basic", "--out", &out])), 0);
    let basic = read(d.join("out/confusion_basic_perturbed.csv"));
    let header = basic.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 1 + 8 + 1);
    for gone in ["Cut", "Damaged", "Unrecognized"] {
        assert!(!basic.contains(gone), "{gone} still in basic matrix");
    }

    let one = run(&["confusion", "--gt", &gt, "--dets", &perturbed, "--variant", "diff", "--out", &out]);
    assert_eq!(code(&one), 2);
}

#[test]
fn calibrate_perfect_scene() {
    let (dir, _) = scene_dir(4);
    let d = dir.path();
    let perfect = format!("perfect={}", p(d, "dets_perfect.json"));
    let o = run(&["calibrate", "--gt", &p(d, "gt.json"), "--dets", &perfect, "--out", &p(d, "out"), "--format", "csv,json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let optima = rows(&read(d.join("out/thresholds_perfect.csv")));
    assert_eq!(optima.len(), 11);
    assert!(optima.iter().all(|r| r[3] == "0"), "{optima:?}");
    let mistakes = rows(&read(d.join("out/mistakes_perfect.csv")));
    let labels: Vec<&str> = mistakes.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(labels, ["Not-detected", "Not-present", "Balanced"]);
    assert!(mistakes.iter().all(|r| r[3] == "0"));
    let curves = rows(&read(d.join("out/count_diff_perfect.csv")));
    assert_eq!(curves.len(), 21);
    assert!(d.join("out/calibration_perfect.json").exists());
}

#[test]
fn trend_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = p(d, "out");
    let counts = fixture("trend_counts.csv");
    let o = run(&["trend", "--counts", counts.to_str().unwrap(), "--outliers", "cut,damaged,unrecognized", "--out", &out]);
    assert_eq!(code(&o), 0);
    let fit = rows(&read(d.join("out/trend_fit.csv")));
    let slope: f64 = fit[0][1].parse().unwrap();
    assert!(slope > 0.0);
    // listed in input order
    assert_eq!(fit[3][1], "Unrecognized;Damaged;Cut");

    // two points give the exact line through them
    let two = d.join("two.csv");
    std::fs::write(&two, "category,count,ap75\nA,10,0.2\nB,1000,0.6\n").unwrap();
    assert_eq!(code(&run(&["trend", "--counts", two.to_str().unwrap(), "--out", &out])), 0);
    let fit = rows(&read(d.join("out/trend_fit.csv")));
    assert_eq!((fit[0][1].as_str(), fit[1][1].as_str(), fit[2][1].as_str()), ("0.200", "0.000", "0.600"));

    let all_but_one = "mastocytoma,unrecognized,damaged,neutrophil,cut,lymphoma,histiocytoma,macrophage,lymphocyte,eosinophil";
    let o = run(&["trend", "--counts", counts.to_str().unwrap(), "--outliers", all_but_one, "--out", &out]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least 2 points"));
}

#[test]
fn config_file_and_env() {
    let (dir, _) = scene_dir(5);
    let d = dir.path();
    let cfg = d.join("run.conf");
    std::fs::write(
        &cfg,
        format!(
            "# shared settings\ngt = {}\ndets = m={}\nout = {}\nformat = json\n",
            p(d, "gt.json"),
            p(d, "dets_perturbed.json"),
            p(d, "from_config")
        ),
    )
    .unwrap();
    assert_eq!(code(&run(&["--config", cfg.to_str().unwrap(), "evaluate"])), 0);
    assert!(d.join("from_config/evaluation.json").exists());
    assert!(!d.join("from_config/evaluation.csv").exists());

    // flags win over the file
    let o = run(&["evaluate", "--config", cfg.to_str().unwrap(), "--format", "csv", "--out", &p(d, "from_flag")]);
    assert_eq!(code(&o), 0);
    assert!(d.join("from_flag/evaluation.csv").exists());

    let env_out = d.join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_cytoeval"))
        .args(["trend", "--counts", fixture("trend_counts.csv").to_str().unwrap()])
        .env("CYTOEVAL_OUT", &env_out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(env_out.join("trend_fit.csv").exists());

    std::fs::write(&cfg, "colour = blue\n").unwrap();
    assert_eq!(code(&run(&["--config", cfg.to_str().unwrap(), "evaluate"])), 2);
    assert_eq!(code(&run(&["evaluate", "--bogus"])), 2);
    assert_eq!(code(&run(&["evaluate", "--out", &p(d, "x")])), 2);
}

#[test]
fn synth_command_writes_a_usable_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = p(d, "scene");
    let o = run(&["synth", "--out", &out, "--seed", "3", "--images", "5", "--drop-rate", "0.5", "--jitter", "-1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["gt.json", "splits.csv", "dets_perfect.json", "dets_perturbed.json", "ledger_perturbed.json"] {
        assert!(d.join("scene").join(f).exists(), "{f} missing");
    }
    let again = p(d, "again");
    assert_eq!(code(&run(&["synth", "--out", &again, "--seed", "3", "--images", "5", "--drop-rate", "0.5", "--jitter", "-1"])), 0);
    assert_eq!(read(d.join("scene/dets_perturbed.json")), read(d.join("again/dets_perturbed.json")));

    let dets = format!("m={}", p(&d.join("scene"), "dets_perturbed.json"));
    let o = run(&["evaluate", "--gt", &p(&d.join("scene"), "gt.json"), "--splits", &p(&d.join("scene"), "splits.csv"), "--split", "test", "--dets", &dets, "--out", &p(d, "eval")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(CategoryTable::cytology().len() * 4 + 4, rows(&read(d.join("eval/evaluation.csv"))).len());
}
