use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn artrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_artrec"))
        .args(args)
        .output()
        .expect("run artrec")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "n_users = 80\nn_items = 300\nn_clusters = 4\nembedding_dim = 8\n";

fn small_dataset(root: &Path) -> std::path::PathBuf {
    let cfg = root.join("synth.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let data = root.join("data");
    let out = artrec(&["synth", "--config", path(&cfg), "--out", path(&data)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    data
}

fn write_png(path: &Path, rgb: [u8; 3]) {
    image::RgbImage::from_pixel(6, 5, image::Rgb(rgb))
        .save(path)
        .unwrap();
}

#[test]
fn extract_evf_writes_one_row_per_image() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("img");
    fs::create_dir(&images).unwrap();
    write_png(&images.join("b2.png"), [10, 200, 30]);
    write_png(&images.join("a1.png"), [128, 128, 128]);
    write_png(&images.join("c3.png"), [255, 0, 0]);
    let out_file = dir.path().join("evf.vec");
    let out = artrec(&[
        "extract-evf",
        "--images",
        path(&images),
        "--out",
        path(&out_file),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&out_file).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "#dim 7");
    let ids: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(' ').next().unwrap())
        .collect();
    assert_eq!(ids, ["a1", "b2", "c3"]);
    assert!(lines[1..].iter().all(|l| l.split(' ').count() == 8));
}

#[test]
fn extract_evf_on_empty_directory_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("img");
    fs::create_dir(&images).unwrap();
    let out_file = dir.path().join("evf.vec");
    let out = artrec(&[
        "extract-evf",
        "--images",
        path(&images),
        "--out",
        path(&out_file),
    ]);
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(&out_file).unwrap(), "#dim 7\n");
}

#[test]
fn extract_evf_rejects_corrupt_image() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("img");
    fs::create_dir(&images).unwrap();
    write_png(&images.join("ok.png"), [1, 2, 3]);
    fs::write(images.join("bad.png"), b"not a png").unwrap();
    let out = artrec(&[
        "extract-evf",
        "--images",
        path(&images),
        "--out",
        path(&dir.path().join("evf.vec")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.png"));
}

#[test]
fn synth_is_reproducible_and_writes_all_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = small_dataset(a.path());
    let db = small_dataset(b.path());
    for name in ["metadata.csv", "transactions.csv", "dnn.vec", "evf.vec"] {
        assert_eq!(
            fs::read(da.join(name)).unwrap(),
            fs::read(db.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn synth_rejects_more_clusters_than_items() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.cfg");
    fs::write(&cfg, "n_items = 3\nn_clusters = 5\n").unwrap();
    let out = artrec(&[
        "synth",
        "--config",
        path(&cfg),
        "--out",
        path(&dir.path().join("d")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_reports_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let report = dir.path().join("r.csv");
    let out = artrec(&["evaluate", "--data", path(&data), "--out", path(&report)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "method,ndcg@5,ndcg@10,rec@5,rec@10,prec@5,prec@10,cases"
    );
    assert_eq!(lines.len(), 6);
}

#[test]
fn evaluate_input_errors_use_their_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let report = dir.path().join("r.csv");
    let unknown = artrec(&[
        "evaluate",
        "--data",
        path(&data),
        "--methods",
        "Pixels",
        "--out",
        path(&report),
    ]);
    assert_eq!(unknown.status.code(), Some(2));

    fs::remove_file(data.join("evf.vec")).unwrap();
    let missing = artrec(&[
        "evaluate",
        "--data",
        path(&data),
        "--methods",
        "EVF",
        "--out",
        path(&report),
    ]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("evf.vec"));
}

#[test]
fn evaluate_without_repeat_buyers_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    // Keep only the first purchase of every user.
    let text = fs::read_to_string(data.join("transactions.csv")).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || seen.insert(line.split(',').next().unwrap().to_string()) {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(data.join("transactions.csv"), kept).unwrap();
    let out = artrec(&[
        "evaluate",
        "--data",
        path(&data),
        "--methods",
        "DNN",
        "--out",
        path(&dir.path().join("r.csv")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

fn last_purchase(data: &Path) -> (String, i64) {
    let text = fs::read_to_string(data.join("transactions.csv")).unwrap();
    let line = text.lines().last().unwrap();
    let mut fields = line.split(',');
    let user = fields.next().unwrap().to_string();
    let t: i64 = fields.next().unwrap().parse().unwrap();
    (user, t)
}

#[test]
fn recommend_is_deterministic_and_skips_owned_items() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let (user, t) = last_purchase(&data);
    let at = (t + 1).to_string();
    let args = [
        "recommend",
        "--data",
        path(&data),
        "--user",
        &user,
        "--at",
        &at,
        "--method",
        "Hyb(DNN+EVF)",
        "--k",
        "15",
    ];
    let first = artrec(&args);
    assert!(
        first.status.success(),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    assert_eq!(first.stdout, artrec(&args).stdout);

    let stdout = String::from_utf8(first.stdout).unwrap();
    let ids: Vec<&str> = stdout
        .lines()
        .map(|l| l.split('\t').nth(1).unwrap())
        .collect();
    assert_eq!(ids.len(), 15);
    let sold: std::collections::BTreeSet<String> =
        fs::read_to_string(data.join("transactions.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .flat_map(|l| {
                let items = l.split(',').nth(2).unwrap().trim_matches('"').to_string();
                items.split(';').map(str::to_string).collect::<Vec<_>>()
            })
            .collect();
    assert!(ids.iter().all(|id| !sold.contains(*id)));
}

#[test]
fn recommend_rejects_unknown_user_and_empty_profile() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let unknown = artrec(&[
        "recommend",
        "--data",
        path(&data),
        "--user",
        "nobody",
        "--at",
        "0",
    ]);
    assert_eq!(unknown.status.code(), Some(2));

    let (user, _) = last_purchase(&data);
    let early = artrec(&[
        "recommend",
        "--data",
        path(&data),
        "--user",
        &user,
        "--at",
        "0",
    ]);
    assert_eq!(early.status.code(), Some(3));
}

#[test]
fn train_writes_weights() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let weights = dir.path().join("w.txt");
    let out = artrec(&[
        "train",
        "--data",
        path(&data),
        "--sources",
        "dnn,evf",
        "--out",
        path(&weights),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&weights).unwrap();
    assert!(text.starts_with("#seed 42\n"));
    assert!(text.lines().any(|l| l.starts_with("DNN ")));
    assert!(text.lines().any(|l| l.starts_with("EVF ")));
}
