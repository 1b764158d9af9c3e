use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use elpose_cli::checkpoint::{load_lifter, load_physnet};
use elpose_core::heatmap::read_pyramid;
use elpose_core::lifting::{LifterConfig, LifterParams};
use elpose_core::skeleton::{load_pose_2d, load_pose_3d};
use serde_json::{json, Value};

fn elpose(config: &Path, extra: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_elpose"))
        .args(extra)
        .arg("--config")
        .arg(config)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn ok(cmd: &str, config: &Path, sets: &[&str]) -> Value {
    let mut args = vec![cmd];
    for s in sets {
        args.push("--set");
        args.push(s);
    }
    let (code, stdout, stderr) = elpose(config, &args);
    assert_eq!(code, 0, "{cmd} failed: {stderr}");
    serde_json::from_str(stdout.trim()).expect("json summary")
}

fn write_config(dir: &Path, name: &str, value: Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    p
}

fn simulate(dir: &Path, out: &str, count: usize, sigma: f64) -> PathBuf {
    let cfg = write_config(
        dir,
        &format!("sim_{out}.json"),
        json!({"out_dir": out, "count": count, "frames": 8, "noise_sigma": sigma, "seed": 3}),
    );
    ok("simulate", &cfg, &[]);
    dir.join(out)
}

fn tiny_lifter(dir: &Path, data: &str, ckpt: &str, epochs: usize) -> PathBuf {
    let cfg = write_config(
        dir,
        &format!("train_{ckpt}.json"),
        json!({
            "stage": "lifter", "dataset": data, "checkpoint": ckpt, "epochs": epochs,
            "batch_size": 2, "depth": 1, "embed_dim": 8, "heads": 2, "prompt_pairs": 1, "seed": 5
        }),
    );
    ok("train", &cfg, &[]);
    dir.join(ckpt)
}

fn tiny_physnet(dir: &Path, data: &str, lifter: &str, ckpt: &str, stage: &str) -> PathBuf {
    let cfg = write_config(
        dir,
        &format!("train_{ckpt}.json"),
        json!({
            "stage": stage, "dataset": data, "checkpoint": ckpt, "epochs": 1,
            "batch_size": 2, "hidden": 8, "decoder_hidden": 8, "prompt_pairs": 1,
            "lifter_checkpoint": lifter, "seed": 6
        }),
    );
    ok("train", &cfg, &[]);
    dir.join(ckpt)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn read_curve(path: &Path) -> Vec<(u64, f64)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].parse().unwrap(), rec[1].parse().unwrap())
        })
        .collect()
}

#[test]
fn simulate_counts_and_zero_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path(), "zero", 3, 0.0);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["sequences"].as_array().unwrap().len(), 3);
    for i in 0..3 {
        let clean = fs::read(data.join(format!("seq_{i:04}_clean.poseq.json"))).unwrap();
        let noisy = fs::read(data.join(format!("seq_{i:04}_noisy.poseq.json"))).unwrap();
        assert_eq!(clean, noisy);
        load_pose_2d(&data.join(format!("seq_{i:04}_2d.poseq.json"))).unwrap();
    }
}

#[test]
fn simulate_is_byte_identical_and_seed_sensitive() {
    let tmp = tempfile::tempdir().unwrap();
    let a = simulate(tmp.path(), "a", 2, 0.05);
    let b = simulate(tmp.path(), "b", 2, 0.05);
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    let cfg = tmp.path().join("sim_a.json");
    ok("simulate", &cfg, &["out_dir=c"]);
    let (code, _, _) = elpose(&cfg, &["simulate", "--set", "out_dir=d", "--seed", "99"]);
    assert_eq!(code, 0);
    assert_eq!(dir_bytes(&a), dir_bytes(&tmp.path().join("c")));
    assert_ne!(dir_bytes(&a), dir_bytes(&tmp.path().join("d")));
}

#[test]
fn exit_codes_follow_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_key = write_config(tmp.path(), "bad.json", json!({"out_dir": "x", "colour": 1}));
    assert_eq!(elpose(&bad_key, &["simulate"]).0, 2);
    assert_eq!(elpose(&tmp.path().join("absent.json"), &["simulate"]).0, 3);

    fs::write(tmp.path().join("broken.poseq.json"), "{not json").unwrap();
    let metrics = write_config(
        tmp.path(),
        "m.json",
        json!({"pairs": [{"pred": "broken.poseq.json", "truth": "broken.poseq.json"}], "out_csv": "r.csv"}),
    );
    assert_eq!(elpose(&metrics, &["metrics"]).0, 4);
    fs::write(
        tmp.path().join("broken.poseq.json"),
        r#"{"format": "h36m17-3d", "fps": 30, "frames": [[[0,0]]]}"#,
    )
    .unwrap();
    assert_eq!(elpose(&metrics, &["metrics"]).0, 4);
    let missing = write_config(
        tmp.path(),
        "m2.json",
        json!({"pairs": [{"pred": "nope.poseq.json", "truth": "nope.poseq.json"}], "out_csv": "r.csv"}),
    );
    assert_eq!(elpose(&missing, &["metrics"]).0, 3);

    simulate(tmp.path(), "data", 2, 0.05);
    let refine = write_config(
        tmp.path(),
        "refine.json",
        json!({
            "lifter_checkpoint": "no_lifter.elp", "physnet_checkpoint": "no_phys.elp",
            "prompt_dataset": "data", "dataset": "data", "out_dir": "out"
        }),
    );
    let (code, _, stderr) = elpose(&refine, &["refine"]);
    assert_eq!(code, 5, "{stderr}");
    let physnet = write_config(
        tmp.path(),
        "tp.json",
        json!({"stage": "physnet-pretrain", "dataset": "data", "checkpoint": "p.elp", "lifter_checkpoint": "no_lifter.elp"}),
    );
    assert_eq!(elpose(&physnet, &["train"]).0, 5);
    let no_lifter = write_config(
        tmp.path(),
        "tp2.json",
        json!({"stage": "physnet-pretrain", "dataset": "data", "checkpoint": "p.elp"}),
    );
    assert_eq!(elpose(&no_lifter, &["train"]).0, 2);
}

#[test]
fn zero_epochs_keeps_init_and_resume_continues_steps() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "data", 4, 0.05);
    let ckpt = tiny_lifter(tmp.path(), "data", "l0.elp", 0);
    let (params, steps) = load_lifter(&ckpt).unwrap();
    assert_eq!(steps, 0);
    let init = LifterParams::new(
        &LifterConfig {
            depth: 1,
            embed_dim: 8,
            heads: 2,
        },
        5,
    )
    .unwrap();
    assert_eq!(params, init);
    assert!(read_curve(&tmp.path().join("l0.curve.csv")).is_empty());

    let first = tiny_lifter(tmp.path(), "data", "l1.elp", 1);
    assert_eq!(load_lifter(&first).unwrap().1, 2);
    let curve = read_curve(&tmp.path().join("l1.curve.csv"));
    assert_eq!(curve.iter().map(|c| c.0).collect::<Vec<_>>(), vec![1, 2]);

    let cfg = tmp.path().join("train_l1.elp.json");
    ok("train", &cfg, &["resume=l1.elp", "checkpoint=l2.elp"]);
    assert_eq!(load_lifter(&tmp.path().join("l2.elp")).unwrap().1, 4);
    let curve = read_curve(&tmp.path().join("l2.curve.csv"));
    assert_eq!(curve.iter().map(|c| c.0).collect::<Vec<_>>(), vec![3, 4]);
}

#[test]
fn lifter_curve_trends_down() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "data", 8, 0.05);
    tiny_lifter(tmp.path(), "data", "l.elp", 12);
    let curve: Vec<f64> = read_curve(&tmp.path().join("l.curve.csv"))
        .into_iter()
        .map(|c| c.1)
        .collect();
    let q = curve.len() / 4;
    let head = curve[..q].iter().sum::<f64>() / q as f64;
    let tail = curve[curve.len() - q..].iter().sum::<f64>() / q as f64;
    assert!(tail < head, "head {head} tail {tail}");
}

#[test]
fn refine_writes_consistent_outputs_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "data", 4, 0.05);
    tiny_lifter(tmp.path(), "data", "l.elp", 1);
    tiny_physnet(tmp.path(), "data", "l.elp", "pre.elp", "physnet-pretrain");
    let fine_cfg = write_config(
        tmp.path(),
        "fine.json",
        json!({
            "stage": "physnet-finetune", "dataset": "data", "checkpoint": "fine.elp", "epochs": 1,
            "batch_size": 2, "prompt_pairs": 1, "lifter_checkpoint": "l.elp", "resume": "pre.elp", "seed": 6
        }),
    );
    ok("train", &fine_cfg, &[]);
    let (pre, pre_steps) = load_physnet(&tmp.path().join("pre.elp")).unwrap();
    let (fine, fine_steps) = load_physnet(&tmp.path().join("fine.elp")).unwrap();
    assert_eq!(fine_steps, 2 * pre_steps);
    assert_ne!(pre, fine);

    let refine = write_config(
        tmp.path(),
        "refine.json",
        json!({
            "lifter_checkpoint": "l.elp", "physnet_checkpoint": "fine.elp", "prompt_dataset": "data",
            "dataset": "data", "inputs": ["data/seq_0000_2d.poseq.json"], "out_dir": "out1",
            "prompt_pairs": 1, "seed": 2
        }),
    );
    let summary = ok("refine", &refine, &[]);
    assert_eq!(summary["sequences"], 5);
    ok("refine", &refine, &["out_dir=out2"]);
    let out1 = tmp.path().join("out1");
    assert_eq!(dir_bytes(&out1), dir_bytes(&tmp.path().join("out2")));

    for id in ["seq_0001", "seq_0000_2d"] {
        let dd = load_pose_3d(&out1.join(format!("{id}_dd.poseq.json"))).unwrap();
        let pp = load_pose_3d(&out1.join(format!("{id}_pp.poseq.json"))).unwrap();
        let fused = load_pose_3d(&out1.join(format!("{id}_fused.poseq.json"))).unwrap();
        for t in 0..dd.len() {
            for j in 0..17 {
                for k in 0..3 {
                    let mean = 0.5 * (dd.frames()[t][j][k] + pp.frames()[t][j][k]);
                    assert!((fused.frames()[t][j][k] - mean).abs() < 1e-12);
                }
            }
        }
        assert_eq!(
            load_pose_2d(&out1.join(format!("{id}_reproj2d.poseq.json")))
                .unwrap()
                .len(),
            8
        );
    }
}

#[test]
fn metrics_rows_and_means() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "data", 3, 0.05);
    let pairs: Vec<Value> = (0..3)
        .map(|i| json!({"pred": format!("data/seq_{i:04}_noisy.poseq.json"), "truth": format!("data/seq_{i:04}_clean.poseq.json")}))
        .collect();
    let cfg = write_config(tmp.path(), "m.json", json!({"pairs": pairs, "out_csv": "r.csv"}));
    ok("metrics", &cfg, &[]);
    let text = fs::read(tmp.path().join("r.csv")).unwrap();
    ok("metrics", &cfg, &["out_csv=r2.csv"]);
    assert_eq!(text, fs::read(tmp.path().join("r2.csv")).unwrap());

    let mut r = csv::Reader::from_reader(text.as_slice());
    let rows: Vec<(String, f64)> = r
        .records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].to_string(), rec[2].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 3 * 3);
    let summary: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("r.json")).unwrap()).unwrap();
    for m in ["mpjpe", "n_mpjpe", "mpjve"] {
        let vals: Vec<f64> = rows.iter().filter(|r| r.0 == m).map(|r| r.1).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((summary["means"][m].as_f64().unwrap() - mean).abs() < 1e-12);
        assert!(mean > 0.0);
    }

    let same: Vec<Value> = (0..2)
        .map(|i| json!({"pred": format!("data/seq_{i:04}_clean.poseq.json"), "truth": format!("data/seq_{i:04}_clean.poseq.json")}))
        .collect();
    let cfg = write_config(tmp.path(), "m0.json", json!({"pairs": same, "out_csv": "z.csv"}));
    let summary = ok("metrics", &cfg, &[]);
    assert_eq!(summary["rows"], 6);
    for m in ["mpjpe", "n_mpjpe", "mpjve"] {
        assert_eq!(summary["means"][m].as_f64().unwrap(), 0.0);
    }
}

#[test]
fn embedding_metrics_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let unit = |a: f64| vec![a.cos(), a.sin()];
    let set = |angles: &[f64]| json!({"dim": 2, "vectors": angles.iter().map(|&a| unit(a)).collect::<Vec<_>>()});
    let angles: Vec<f64> = (0..16).map(|i| i as f64 * 0.05).collect();
    write_config(tmp.path(), "gen.json", set(&angles));
    write_config(tmp.path(), "ref.json", set(&angles));
    let cfg = write_config(
        tmp.path(),
        "m.json",
        json!({"embedding_pairs": [{"generated": "gen.json", "references": ["ref.json"], "name": "g"}], "out_csv": "e.csv"}),
    );
    let summary = ok("metrics", &cfg, &[]);
    assert_eq!(summary["rows"], 3);
    assert!((summary["means"]["clip_smooth"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(summary["means"]["frechet"].as_f64().unwrap().abs() < 1e-9);
    assert!(summary["means"]["clip_domain"].as_f64().unwrap() < 1.0);
}

#[test]
fn heatmap_files_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "data", 1, 0.0);
    let cfg = write_config(
        tmp.path(),
        "h.json",
        json!({"inputs": ["data/seq_0000_2d.poseq.json"], "out_dir": "maps", "width": 16, "height": 16, "factors": [1, 4]}),
    );
    let summary = ok("heatmap", &cfg, &[]);
    assert_eq!(summary["files"], 8);
    let maps = tmp.path().join("maps");
    let first = dir_bytes(&maps);
    ok("heatmap", &cfg, &[]);
    assert_eq!(first, dir_bytes(&maps));

    let bytes = fs::read(maps.join("seq_0000_2d_f0000.elh1")).unwrap();
    let pyramid = read_pyramid(bytes.as_slice()).unwrap();
    assert_eq!(pyramid.levels.len(), 2);
    let mut again = Vec::new();
    elpose_core::heatmap::write_pyramid(&mut again, &pyramid).unwrap();
    assert_eq!(again, bytes);

    let mut r = csv::Reader::from_path(maps.join("heatmap_stats.csv")).unwrap();
    let n = r.records().count();
    assert_eq!(n, 8 * (17 + 16));

    let bad = write_config(
        tmp.path(),
        "hb.json",
        json!({"inputs": ["data/seq_0000_2d.poseq.json"], "out_dir": "m", "width": 10, "height": 10, "factors": [3]}),
    );
    assert_ne!(elpose(&bad, &["heatmap"]).0, 0);
}
