use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dynslam::geometry::CameraIntrinsics;
use dynslam::mapping::read_ply;
use dynslam::raster::{write_raw_u16_png, BinaryMask, RgbImage};
use dynslam::resampler::parse_keypoints_csv;
use dynslam::synthetic::{generate, SyntheticConfig};

fn dynslam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynslam")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_sequence(dir: &Path) {
    generate(&SyntheticConfig { frames: 8, ..Default::default() })
        .unwrap()
        .write(dir)
        .unwrap();
}

#[test]
fn eval_of_identical_trajectories_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("t.txt");
    let lines: String = (0..40)
        .map(|i| format!("{:.4} {} {} 0 0 0 0.0998 0.995\n", 1.0 + i as f64 * 0.1, i as f64 * 0.05, (i as f64).sin()))
        .collect();
    fs::write(&traj, lines).unwrap();
    let json = dir.path().join("m.json");
    let csv = dir.path().join("e.csv");
    let out = dynslam(&["eval", s(&traj), s(&traj), "--json", s(&json), "--csv", s(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = stdout(&out);
    assert!(table.contains("ATE RMSE             0.000000 m"), "{table}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["ate_rmse"], 0.0);
    assert_eq!(report["rpe_rot_rmse"], 0.0);
    assert!(fs::read_to_string(&csv).unwrap().starts_with("timestamp,ate_m,rpe_trans_m_per_s,rpe_rot_deg_per_s\n"));
}

#[test]
fn constant_depth_gives_empty_masks() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    for sub in ["rgb", "depth"] {
        fs::create_dir_all(seq.join(sub)).unwrap();
    }
    let (w, h) = (64, 48);
    let mut rgb_idx = String::from("# rgb\n");
    let mut depth_idx = String::from("# depth\n");
    for i in 0..3 {
        let t = 10.0 + i as f64 / 30.0;
        RgbImage::filled(w, h, [120, 90, 60]).write_png(&seq.join(format!("rgb/{t:.6}.png"))).unwrap();
        write_raw_u16_png(&seq.join(format!("depth/{t:.6}.png")), w, h, &vec![7500u16; w * h]).unwrap();
        rgb_idx += &format!("{t:.6} rgb/{t:.6}.png\n");
        depth_idx += &format!("{t:.6} depth/{t:.6}.png\n");
    }
    fs::write(seq.join("rgb.txt"), rgb_idx).unwrap();
    fs::write(seq.join("depth.txt"), depth_idx).unwrap();

    let out_dir = dir.path().join("masks");
    let out = dynslam(&["mask", s(&seq), "-o", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut count = 0;
    for sub in ["m_depth", "m_broad", "m_c"] {
        for entry in fs::read_dir(out_dir.join(sub)).unwrap() {
            let m = BinaryMask::read(&entry.unwrap().path()).unwrap();
            assert_eq!(m.dims(), (w, h));
            assert_eq!(m.count_ones(), 0);
            count += 1;
        }
    }
    assert_eq!(count, 9);
    assert!(out_dir.join("run_config.json").is_file());
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    assert_eq!(dynslam(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dynslam(&["eval", "only-one"]).status.code(), Some(1));
    assert_eq!(dynslam(&["--help"]).status.code(), Some(0));
    assert_eq!(dynslam(&["eval", "/no/such/a.txt", "/no/such/b.txt"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dynslam(&["track", s(dir.path()), "-o", "x.txt", "--tau-a", "1e-3"]).status.code(), Some(1));
}

#[test]
fn config_file_applies_below_flags() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    small_sequence(&seq);
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "tau_b = 6e-5\nvoxel = 0.05\nseed = 9\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = dynslam(&["pipeline", s(&seq), "-o", s(&out_dir), "--config", s(&cfg), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(rc["settings"]["tau_b"], 6e-5);
    assert_eq!(rc["settings"]["voxel"], 0.05);
    assert_eq!(rc["settings"]["seed"], 3);
    assert_eq!(rc["settings"]["tau_a"], 5e-6);

    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    assert_eq!(dynslam(&["eval", "a", "b", "--config", s(&cfg)]).status.code(), Some(1));
}

#[test]
fn track_then_map_matches_pipeline_products() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    small_sequence(&seq);
    let traj = dir.path().join("traj.txt");
    let out = dynslam(&["track", s(&seq), "-o", s(&traj)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&traj).unwrap().lines().filter(|l| !l.starts_with('#')).count(), 8);

    let ply = dir.path().join("map.ply");
    let out = dynslam(&["map", s(&seq), "--trajectory", s(&traj), "-o", s(&ply), "--ascii-ply"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(&ply).unwrap().starts_with("ply\nformat ascii 1.0\n"));

    let pipe = dir.path().join("pipe");
    let out = dynslam(&["pipeline", s(&seq), "-o", s(&pipe), "--ascii-ply"]);
    assert!(out.status.success());
    assert_eq!(fs::read(pipe.join("trajectory.txt")).unwrap(), fs::read(&traj).unwrap());
    // The text trajectory is rounded, so voxel assignment can differ slightly.
    let (a, b) = (read_ply(&pipe.join("map.ply")).unwrap().len(), read_ply(&ply).unwrap().len());
    assert!((a as f64 - b as f64).abs() <= 0.01 * a as f64, "{a} vs {b}");
}

#[test]
fn explicit_intrinsics_override_the_sequence_file() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    small_sequence(&seq);
    fs::remove_file(seq.join("intrinsics.txt")).unwrap();
    let traj = dir.path().join("t.txt");
    assert_eq!(dynslam(&["track", s(&seq), "-o", s(&traj)]).status.code(), Some(2));
    let intr = dir.path().join("cam.txt");
    let synthetic = dynslam::synthetic::intrinsics_for(320, 240);
    fs::write(&intr, synthetic.to_text()).unwrap();
    assert_eq!(CameraIntrinsics::read(&intr).unwrap(), synthetic);
    let out = dynslam(&["track", s(&seq), "-o", s(&traj), "--intrinsics", s(&intr)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn resample_writes_subset_and_overlay() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("x,y,d,theta,sigma,lambda\n");
    for i in 0..40 {
        csv += &format!("{},{},7,-1,0.5,0\n", 100.0 + (i % 5) as f64 * 0.5, 80.0 + (i / 5) as f64 * 0.5);
    }
    for i in 0..30 {
        csv += &format!("{},{},{},{},{},{}\n", (i * 37) % 300, (i * 53) % 200, 7 + i % 20, (i * 29) % 360, 0.1 * (i % 9) as f64, i % 4);
    }
    let input = dir.path().join("kp.csv");
    fs::write(&input, &csv).unwrap();
    let output = dir.path().join("kept.csv");
    let overlay = dir.path().join("overlay.png");
    let out = dynslam(&["resample", s(&input), "-o", s(&output), "--overlay", s(&overlay)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let all = parse_keypoints_csv(&csv).unwrap();
    let kept = parse_keypoints_csv(&fs::read_to_string(&output).unwrap()).unwrap();
    assert!(kept.len() < all.len());
    assert!(kept.iter().all(|k| all.contains(k)));
    assert!(RgbImage::read(&overlay).unwrap().width() >= 300);
}

#[test]
fn hist_emits_one_row_per_bin() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    small_sequence(&seq);
    let csv = dir.path().join("h.csv");
    let out = dynslam(&["hist", s(&seq), "-o", s(&csv), "--bins", "12"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "bin_lo,bin_hi,count,in_band");
    let windows: u64 = rows[1..].iter().map(|r| r.split(',').nth(2).unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(windows, 8 * 106 * 80);
}
