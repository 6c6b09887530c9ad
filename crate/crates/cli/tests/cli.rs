use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn occlude(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occlude"))
        .args(args)
        .output()
        .expect("spawn occlude")
}

fn ok(args: &[&str]) -> String {
    let out = occlude(args);
    assert!(
        out.status.success(),
        "occlude {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset and model shared by every test in this file.
struct Fixture {
    _dir: TempDir,
    root: PathBuf,
}

impl Fixture {
    fn manifest(&self) -> PathBuf {
        self.root.join("data/manifest.json")
    }

    fn model(&self) -> PathBuf {
        self.root.join("model.cnmo")
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        ok(&[
            "generate",
            "--scenarios",
            "two,four",
            "--train-per-level",
            "6",
            "--test-per-level",
            "2",
            "--seed",
            "5",
            "--out",
            s(&data),
        ]);
        let f = Fixture { _dir: dir, root };
        ok(&[
            "train",
            "--manifest",
            s(&f.manifest()),
            "--k",
            "24",
            "--m",
            "1",
            "--seed",
            "2",
            "--out",
            s(&f.model()),
        ]);
        f
    })
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn generate_train_segment_evaluate() {
    let f = fixture();
    let tmp = TempDir::new().unwrap();
    let pred = tmp.path().join("pred");
    let out = ok(&[
        "segment",
        "--model",
        s(&f.model()),
        "--manifest",
        s(&f.manifest()),
        "--out",
        s(&pred),
    ]);
    assert!(out.contains("segmented 16 scenes"), "{out}");
    assert_eq!(dir_bytes(&pred).len(), 32);

    let report = tmp.path().join("report.json");
    let table = ok(&[
        "evaluate",
        "--pred",
        s(&pred),
        "--truth",
        s(&f.root.join("data")),
        "--out",
        s(&report),
    ]);
    assert!(table.contains("Mean") && table.contains("order accuracy"), "{table}");
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["scenes"], 16);
    let mean = &json["levels"]["mean"];
    assert_eq!(mean["count"], 8 * 2 + 8 * 4);
    assert!(mean["sum"].as_f64().unwrap() > 0.0);
}

#[test]
fn training_is_reproducible() {
    let f = fixture();
    let tmp = TempDir::new().unwrap();
    let again = tmp.path().join("again.cnmo");
    ok(&[
        "train",
        "--manifest",
        s(&f.manifest()),
        "--k",
        "24",
        "--m",
        "1",
        "--seed",
        "2",
        "--out",
        s(&again),
    ]);
    assert_eq!(fs::read(&again).unwrap(), fs::read(f.model()).unwrap());
}

#[test]
fn segmentation_and_evaluation_are_byte_identical() {
    let f = fixture();
    let tmp = TempDir::new().unwrap();
    let mut runs = Vec::new();
    for (i, jobs) in ["1", "4"].into_iter().enumerate() {
        let pred = tmp.path().join(format!("pred{i}"));
        let report = tmp.path().join(format!("report{i}.json"));
        ok(&[
            "--jobs",
            jobs,
            "segment",
            "--model",
            s(&f.model()),
            "--manifest",
            s(&f.manifest()),
            "--iters",
            "2",
            "--out",
            s(&pred),
        ]);
        ok(&[
            "evaluate",
            "--pred",
            s(&pred),
            "--truth",
            s(&f.root.join("data")),
            "--mode",
            "amodal",
            "--out",
            s(&report),
        ]);
        runs.push((dir_bytes(&pred), fs::read(&report).unwrap()));
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn single_object_scene_ignores_iterations() {
    let f = fixture();
    let tmp = TempDir::new().unwrap();
    let scenes = f.root.join("data/scenes");
    let fmap = fs::read_dir(&scenes)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "fmap"))
        .min()
        .unwrap();
    let mut outputs = Vec::new();
    for iters in ["0", "2"] {
        let pred = tmp.path().join(format!("iters{iters}"));
        ok(&[
            "segment",
            "--model",
            s(&f.model()),
            "--scene",
            s(&fmap),
            "--boxes",
            "2,2,12,12",
            "--iters",
            iters,
            "--out",
            s(&pred),
        ]);
        outputs.push(dir_bytes(&pred));
    }
    assert_eq!(outputs[0].len(), 2);
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn errors_are_one_line_with_a_code() {
    let tmp = TempDir::new().unwrap();
    let bogus = tmp.path().join("bogus.cnmo");
    fs::write(&bogus, b"not a model").unwrap();
    let missing = tmp.path().join("none.json");
    let cases: [(Vec<&str>, &str, i32); 3] = [
        (
            vec![
                "segment",
                "--model",
                s(&bogus),
                "--manifest",
                s(&missing),
                "--out",
                s(tmp.path()),
            ],
            "error E_BAD_MAGIC: ",
            1,
        ),
        (vec!["segment", "--iters", "3"], "error E_USAGE: ", 2),
        (
            vec!["--jobs", "0", "oracle-check"],
            "error E_USAGE: ",
            1,
        ),
    ];
    for (args, prefix, code) in cases {
        let out = occlude(&args);
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(out.status.code(), Some(code), "{args:?}: {err}");
        assert!(err.starts_with(prefix), "{args:?}: {err}");
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
    }
}

#[test]
fn empty_generation_writes_an_empty_manifest() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("empty");
    let out = ok(&["generate", "--per-level", "0", "--out", s(&data)]);
    assert!(out.contains("generated 0 scenes"), "{out}");
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scenes"].as_array().map(Vec::len), Some(0));
}

#[test]
fn oracle_check_passes_at_tiny_scale() {
    let out = ok(&["oracle-check", "--scale", "tiny", "--seed", "3"]);
    assert!(out.lines().all(|l| !l.starts_with("FAIL")), "{out}");
    assert!(out.contains("PASS"), "{out}");
}
