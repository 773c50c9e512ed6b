use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use texweave::imageio::{read_rgb, write_png};
use texweave::tiles::crop;
use texweave::{DrawModel, Tensor};

fn texweave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_texweave"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn texweave_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_texweave"))
        .args(args)
        .env(key, value)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Deterministic colourful 40×40 texture.
fn texture(seed: u64) -> Tensor {
    Tensor::from_fn([40, 40, 3], |i| {
        let (p, ch) = (i / 3, i % 3);
        let (y, x) = (p / 40, p % 40);
        let v = ((y / 4 + x / 4) % 2) as f64 * 0.6
            + 0.1 * ch as f64
            + 0.05 * ((x * 7 + y * 13 + seed as usize) % 5) as f64;
        (v.min(1.0) * 255.0).round() / 255.0
    })
}

/// Dataset of two textures with 8-pixel tiles.
fn dataset(dir: &Path) -> PathBuf {
    for i in 0..2 {
        write_png(&texture(i), &dir.join(format!("t{i}.png"))).unwrap();
    }
    let cfg = dir.join("data.json");
    std::fs::write(
        &cfg,
        r#"{"tile_size": 8, "textures": [{"path": "t0.png", "samples_per_epoch": 3}, {"path": "t1.png", "samples_per_epoch": 2}]}"#,
    )
    .unwrap();
    cfg
}

const TINY: [&str; 6] = ["--steps", "2", "--z-dim", "3", "--hidden", "5"];

fn train_args<'a>(data: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "train",
        "--data",
        data,
        "--out",
        out,
        "--batch-size",
        "2",
        "--seed",
        "3",
    ];
    v.extend(TINY);
    v.extend(extra);
    v
}

fn read_bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn filterbank_export_contract() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fb");
    ok(&texweave(&["filterbank", "export", "--out", s(&out)]));
    let pngs = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "png")
        })
        .count();
    assert_eq!(pngs, 48);
    let manifest: serde_json::Value =
        serde_json::from_slice(&read_bytes(&out.join("manifest.json"))).unwrap();
    let counts = &manifest["counts"];
    assert_eq!(
        counts["edge"].as_u64().unwrap() + counts["bar"].as_u64().unwrap(),
        36
    );
    assert_eq!(counts["log"], 8);
    assert_eq!(counts["gauss"], 4);
    assert_eq!(manifest["kernels"].as_array().unwrap().len(), 48);
    assert_eq!(manifest["support"], 15);
    let img = read_rgb::<f64>(&out.join("kernel_00.png")).unwrap();
    assert_eq!(img.shape(), &[15, 15, 3]);

    let again = dir.path().join("fb2");
    ok(&texweave(&[
        "rerun",
        s(&out.join("run.json")),
        "--out",
        s(&again),
    ]));
    for i in 0..48 {
        let name = format!("kernel_{i:02}.png");
        assert_eq!(
            read_bytes(&out.join(&name)),
            read_bytes(&again.join(&name)),
            "{name}"
        );
    }
    assert_eq!(
        read_bytes(&out.join("manifest.json")),
        read_bytes(&again.join("manifest.json"))
    );
}

#[test]
fn filterbank_export_rejects_even_support() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&texweave(&[
            "filterbank",
            "export",
            "--support",
            "14",
            "--out",
            s(dir.path())
        ])),
        2
    );
}

#[test]
fn train_zero_epochs_writes_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = dir.path().join("run");
    ok(&texweave(&train_args(
        s(&data),
        s(&out),
        &["--direction", "east", "--epochs", "0"],
    )));
    let csv = std::fs::read_to_string(out.join("east_loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    let (_, meta) = DrawModel::load(&out.join("east.ckpt")).unwrap();
    assert_eq!(meta.steps_trained, 0);
    assert_eq!(meta.config.tile_size, 8);
    let run: serde_json::Value =
        serde_json::from_slice(&read_bytes(&out.join("run.json"))).unwrap();
    assert_eq!(run["command"], "train");
    assert!(Path::new(run["data"].as_str().unwrap()).is_absolute());
}

#[test]
fn train_logs_identity_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&texweave(&train_args(
            s(&data),
            s(out),
            &["--direction", "north", "--epochs", "2", "--loss", "fltbnk"],
        )));
    }
    let csv = std::fs::read_to_string(a.join("north_loss.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    // 5 quintets per epoch in batches of 2.
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert!((r[col("l_total")] - r[col("l_rec")] - r[col("l_kl")]).abs() <= 1e-9);
    }
    assert_eq!(
        read_bytes(&a.join("north.ckpt")),
        read_bytes(&b.join("north.ckpt"))
    );

    let c = dir.path().join("c");
    ok(&texweave(&[
        "rerun",
        s(&a.join("run.json")),
        "--out",
        s(&c),
    ]));
    assert_eq!(
        read_bytes(&a.join("north.ckpt")),
        read_bytes(&c.join("north.ckpt"))
    );
}

#[test]
fn all_directions_match_single_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let all = dir.path().join("all");
    let out = texweave_env(
        &train_args(s(&data), s(&all), &["--all-directions", "--epochs", "1"]),
        "TEXWEAVE_THREADS",
        "2",
    );
    ok(&out);
    let west = dir.path().join("west");
    ok(&texweave(&train_args(
        s(&data),
        s(&west),
        &["--direction", "west", "--epochs", "1"],
    )));
    for d in ["north", "south", "east", "west"] {
        let (_, meta) = DrawModel::load(&all.join(format!("{d}.ckpt"))).unwrap();
        assert_eq!(meta.direction.unwrap().name(), d);
    }
    assert_eq!(
        read_bytes(&all.join("west.ckpt")),
        read_bytes(&west.join("west.ckpt"))
    );
    let bad = texweave_env(
        &train_args(s(&data), s(&all), &["--all-directions", "--epochs", "0"]),
        "TEXWEAVE_THREADS",
        "zero",
    );
    assert_eq!(code(&bad), 2);
}

#[test]
fn train_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = dir.path().join("run");
    // No direction given.
    assert_eq!(
        code(&texweave(&train_args(
            s(&data),
            s(&out),
            &["--epochs", "0"]
        ))),
        2
    );
    assert_eq!(
        code(&texweave(&train_args(
            s(&data),
            s(&out),
            &["--direction", "up"]
        ))),
        2
    );
    assert_eq!(
        code(&texweave(&train_args(
            s(&data),
            s(&out),
            &["--direction", "east", "--loss", "vae"]
        ))),
        2
    );
    let missing = dir.path().join("missing.json");
    assert_eq!(
        code(&texweave(&train_args(
            s(&missing),
            s(&out),
            &["--direction", "east"]
        ))),
        3
    );
    std::fs::write(dir.path().join("t0.png"), b"garbage").unwrap();
    assert_eq!(
        code(&texweave(&train_args(
            s(&data),
            s(&out),
            &["--direction", "east", "--epochs", "1"]
        ))),
        3
    );
    let data = dataset(dir.path());
    let out = texweave(&train_args(
        s(&data),
        s(&out),
        &["--direction", "east", "--epochs", "3", "--lr", "1e300"],
    ));
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reconstruct_montage_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let run = dir.path().join("run");
    ok(&texweave(&train_args(
        s(&data),
        s(&run),
        &["--direction", "south", "--epochs", "1"],
    )));
    let out = dir.path().join("rec");
    let ckpt = run.join("south.ckpt");
    ok(&texweave(&[
        "reconstruct",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--tiles",
        "5",
        "--k",
        "4",
        "--seed",
        "9",
        "--out",
        s(&out),
    ]));
    let montage = read_rgb::<f64>(&out.join("montage.png")).unwrap();
    assert_eq!(montage.shape(), &[2 * 8 + 2, 5 * 8 + 4 * 2, 3]);
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("tile,texture,row,col,rmse,histogram,gram")
    );
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 5);
    let sources = [
        read_rgb::<f64>(&dir.path().join("t0.png")).unwrap(),
        read_rgb::<f64>(&dir.path().join("t1.png")).unwrap(),
    ];
    for (i, r) in rows.iter().enumerate() {
        let num = |j: usize| r[j].parse::<usize>().unwrap();
        let expected = crop(&sources[num(1)], num(2), num(3), 8).unwrap();
        let shown = crop(&montage, 0, i * 10, 8).unwrap();
        assert_eq!(shown, expected, "tile {i}");
        for j in 4..7 {
            assert!(r[j].parse::<f64>().unwrap() >= 0.0);
        }
    }
    // Gutters are white.
    assert!(crop(&montage, 0, 8, 2)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 1.0));
    assert!(out.join("textons.bin").exists());

    let mut big = std::fs::read_to_string(&data).unwrap();
    big = big.replace("\"tile_size\": 8", "\"tile_size\": 10");
    let mismatch = dir.path().join("mismatch.json");
    std::fs::write(&mismatch, big).unwrap();
    let bad = texweave(&[
        "reconstruct",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&mismatch),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&bad), 3);
}

fn four_checkpoints(dir: &Path) -> Vec<String> {
    let data = dataset(dir);
    let run = dir.join("models");
    ok(&texweave(&train_args(
        s(&data),
        s(&run),
        &["--all-directions", "--epochs", "1"],
    )));
    ["north", "south", "east", "west"]
        .iter()
        .map(|d| s(&run.join(format!("{d}.ckpt"))).to_string())
        .collect()
}

fn expand_args<'a>(
    ckpts: &'a [String],
    center: &'a str,
    size: &'a str,
    out: &'a str,
) -> Vec<&'a str> {
    let mut v = vec!["expand", "--checkpoints"];
    v.extend(ckpts.iter().map(String::as_str));
    v.extend([
        "--center", center, "--size", size, "--seed", "4", "--out", out,
    ]);
    v
}

#[test]
fn expand_contract() {
    let dir = tempfile::tempdir().unwrap();
    let ckpts = four_checkpoints(dir.path());
    let center_path = dir.path().join("center.png");
    let center = crop(&texture(0), 5, 7, 8).unwrap();
    write_png(&center, &center_path).unwrap();

    let same = dir.path().join("same");
    ok(&texweave(&expand_args(
        &ckpts,
        s(&center_path),
        "8",
        s(&same),
    )));
    assert_eq!(read_rgb::<f64>(&same.join("expanded.png")).unwrap(), center);
    assert_eq!(
        std::fs::read_to_string(same.join("steps.csv"))
            .unwrap()
            .lines()
            .count(),
        1
    );

    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let mut args = expand_args(&ckpts, s(&center_path), "56", s(out));
        args.push("--dump-cells");
        ok(&texweave(&args));
    }
    let image = read_rgb::<f64>(&a.join("expanded.png")).unwrap();
    assert_eq!(image.shape(), &[56, 56, 3]);
    assert_eq!(
        read_bytes(&a.join("expanded.png")),
        read_bytes(&b.join("expanded.png"))
    );
    let steps = std::fs::read_to_string(a.join("steps.csv")).unwrap();
    assert_eq!(steps.lines().count(), 49);
    let mut cells = 0;
    for r in -3isize..=3 {
        for c in -3isize..=3 {
            let tile = read_rgb::<f64>(&a.join("cells").join(format!("r{r}_c{c}.png"))).unwrap();
            let back = crop(&image, ((r + 3) * 8) as usize, ((c + 3) * 8) as usize, 8).unwrap();
            assert_eq!(tile, back, "cell ({r}, {c})");
            cells += 1;
        }
    }
    assert_eq!(cells, 49);
    assert_eq!(crop(&image, 24, 24, 8).unwrap(), center);

    // A larger image contributes its central tile.
    let big_path = dir.path().join("big.png");
    write_png(&texture(0), &big_path).unwrap();
    let big = dir.path().join("big");
    ok(&texweave(&expand_args(&ckpts, s(&big_path), "8", s(&big))));
    assert_eq!(
        read_rgb::<f64>(&big.join("expanded.png")).unwrap(),
        crop(&texture(0), 16, 16, 8).unwrap()
    );
}

#[test]
fn expand_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ckpts = four_checkpoints(dir.path());
    let center_path = dir.path().join("center.png");
    write_png(&crop(&texture(0), 0, 0, 8).unwrap(), &center_path).unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        code(&texweave(&expand_args(
            &ckpts,
            s(&center_path),
            "16",
            s(&out)
        ))),
        2
    );
    assert_eq!(
        code(&texweave(&expand_args(
            &ckpts[..3],
            s(&center_path),
            "24",
            s(&out)
        ))),
        2
    );
    let dup: Vec<String> = vec![
        ckpts[0].clone(),
        ckpts[0].clone(),
        ckpts[2].clone(),
        ckpts[3].clone(),
    ];
    assert_eq!(
        code(&texweave(&expand_args(
            &dup,
            s(&center_path),
            "24",
            s(&out)
        ))),
        2
    );
    let missing = dir.path().join("nope.png");
    assert_eq!(
        code(&texweave(&expand_args(&ckpts, s(&missing), "24", s(&out)))),
        3
    );
    let tiny_path = dir.path().join("tiny.png");
    write_png(&Tensor::zeros([4, 4, 3]), &tiny_path).unwrap();
    assert_eq!(
        code(&texweave(&expand_args(
            &ckpts,
            s(&tiny_path),
            "24",
            s(&out)
        ))),
        3
    );
}

#[test]
fn eval_contract() {
    let dir = tempfile::tempdir().unwrap();
    let original = dir.path().join("orig.png");
    write_png(&texture(0), &original).unwrap();
    let other = dir.path().join("other.png");
    write_png(&crop(&texture(3), 2, 2, 30).unwrap(), &other).unwrap();
    let out = dir.path().join("eval");
    ok(&texweave(&[
        "eval",
        "--original",
        s(&original),
        "--generated",
        s(&original),
        s(&other),
        "--k",
        "6",
        "--out",
        s(&out),
    ]));
    let csv = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("image_a,image_b,metric,value"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let v: f64 = r[3].parse().unwrap();
        assert!(v >= 0.0);
        if r[1].ends_with("orig.png") {
            assert_eq!(v, 0.0, "{r:?}");
        }
    }
    assert_eq!(rows.iter().filter(|r| r[2] == "gram").count(), 2);

    // Reusing the learned dictionary gives the same histogram distances.
    let again = dir.path().join("again");
    ok(&texweave(&[
        "eval",
        "--original",
        s(&original),
        "--generated",
        s(&other),
        "--metric",
        "histogram",
        "--textons",
        s(&out.join("textons.bin")),
        "--out",
        s(&again),
    ]));
    let csv2 = std::fs::read_to_string(again.join("eval.csv")).unwrap();
    let hist = |csv: &str| {
        csv.lines()
            .find(|l| l.contains("other.png,histogram"))
            .unwrap()
            .rsplit(',')
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(hist(&csv), hist(&csv2));

    assert_eq!(
        code(&texweave(&[
            "eval",
            "--original",
            s(&original),
            "--out",
            s(&out)
        ])),
        2
    );
    let missing = dir.path().join("missing.png");
    assert_eq!(
        code(&texweave(&[
            "eval",
            "--original",
            s(&missing),
            "--generated",
            s(&other),
            "--out",
            s(&out)
        ])),
        3
    );
}

#[test]
fn rerun_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, r#"{"command": "dance"}"#).unwrap();
    assert_eq!(code(&texweave(&["rerun", s(&path)])), 3);
    assert_eq!(code(&texweave(&["bogus"])), 2);
}
