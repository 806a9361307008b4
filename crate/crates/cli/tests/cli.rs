use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use voxlift::data::sphere;
use voxlift::io::{read_pgm, read_voxels, write_voxels, Checkpoint, GrayImage};
use voxlift::{Objective, GRID};

fn voxlift(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxlift"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("spawn voxlift")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = voxlift(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn rejected(out: &Path, args: &[&str]) -> String {
    let o = voxlift(out, args);
    assert!(!o.status.success(), "{args:?} should fail");
    String::from_utf8(o.stderr).unwrap()
}

const COMPACT: [&str; 2] = ["--arch", "compact"];

fn untrained(dir: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--steps", "0", "--seed", "5"];
    args.extend(COMPACT);
    args.extend(extra);
    ok(dir, &args);
}

/// Tile `k` of a sheet `cols` tiles wide.
fn tile_of(img: &GrayImage, cols: usize, k: usize) -> Vec<u8> {
    let (r, c) = (k / cols, k % cols);
    (0..GRID)
        .flat_map(|h| {
            let start = (r * GRID + h) * img.width + c * GRID;
            img.pixels[start..start + GRID].to_vec()
        })
        .collect()
}

#[test]
fn zero_steps_writes_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    untrained(dir.path(), &[]);
    assert!(dir.path().join("checkpoint.v3da").exists());
    let metrics = fs::read_to_string(dir.path().join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
}

#[test]
fn beta_vae_defaults_to_thirty() {
    let dir = tempfile::tempdir().unwrap();
    untrained(dir.path(), &["--objective", "beta-vae"]);
    let ckpt = Checkpoint::load(&dir.path().join("checkpoint.v3da")).unwrap();
    assert_eq!(ckpt.config.objective, Objective::BetaVae);
    assert_eq!(ckpt.config.beta, 30.0);
    untrained(dir.path(), &["--objective", "beta-vae", "--beta", "4"]);
    assert_eq!(Checkpoint::load(&dir.path().join("checkpoint.v3da")).unwrap().config.beta, 4.0);
}

#[test]
fn seeded_runs_write_identical_metrics() {
    let run = |dir: &Path| {
        let mut args = vec![
            "train", "--steps", "50", "--batch-size", "8", "--seed", "3", "--objective", "mu-vae", "--azimuth",
            "latent", "--texturizer",
        ];
        args.extend(COMPACT);
        ok(dir, &args);
        fs::read(dir.join("metrics.tsv")).unwrap()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let metrics = run(a.path());
    assert_eq!(String::from_utf8_lossy(&metrics).lines().count(), 51);
    assert_eq!(metrics, run(b.path()));
}

#[test]
fn invalid_combinations_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let err = rejected(dir.path(), &["train", "--steps", "0", "--objective", "aae", "--azimuth", "latent"]);
    assert!(err.contains("encoder-uniform"), "{err}");
    let err = rejected(dir.path(), &["train", "--steps", "0", "--objective", "vae", "--beta", "4"]);
    assert!(err.contains("beta-vae"), "{err}");
    rejected(dir.path(), &["train", "--objective", "gan"]);
    assert!(!dir.path().join("checkpoint.v3da").exists());
}

#[test]
fn checkpoint_commands_reject_conflicting_model_flags() {
    let dir = tempfile::tempdir().unwrap();
    untrained(dir.path(), &[]);
    let err = rejected(dir.path(), &["sweep", "--objective", "aae"]);
    assert!(err.contains("--objective vae"), "{err}");
    rejected(dir.path(), &["reconstruct", "--texturizer"]);
}

#[test]
fn sweep_sheet_matches_reconstruction_at_zero_azimuth() {
    let dir = tempfile::tempdir().unwrap();
    untrained(dir.path(), &[]);
    ok(dir.path(), &["sweep", "--index", "3"]);
    let sweep = read_pgm(&dir.path().join("sweep.pgm")).unwrap();
    assert_eq!((sweep.width, sweep.height), (8 * GRID, 8 * GRID));
    assert!(fs::read(dir.path().join("sweep.pgm")).unwrap().starts_with(b"P5"));
    let stills = read_pgm(&dir.path().join("stills.pgm")).unwrap();
    assert_eq!((stills.width, stills.height), (3 * GRID, GRID));

    // Dataset image 3 is the fourth row of the reconstruction sheet.
    let stdout = ok(dir.path(), &["reconstruct", "--count", "4"]);
    assert!(stdout.contains("projection mse"));
    let recon = read_pgm(&dir.path().join("reconstruct.pgm")).unwrap();
    assert_eq!((recon.width, recon.height), (2 * GRID, 4 * GRID));
    assert_eq!(tile_of(&sweep, 8, 32), tile_of(&recon, 2, 3 * 2 + 1));
    assert_eq!(tile_of(&stills, 3, 0), tile_of(&sweep, 8, 32));
}

#[test]
fn texturizer_adds_a_third_column() {
    let dir = tempfile::tempdir().unwrap();
    untrained(dir.path(), &["--texturizer"]);
    ok(dir.path(), &["reconstruct", "--count", "2"]);
    let recon = read_pgm(&dir.path().join("reconstruct.pgm")).unwrap();
    assert_eq!((recon.width, recon.height), (3 * GRID, 2 * GRID));
}

#[test]
fn sphere_sweep_is_constant_up_to_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sphere.vox");
    write_voxels(&path, &sphere(8.0, 13.5)).unwrap();
    ok(dir.path(), &["sweep", "--voxels", path.to_str().unwrap()]);
    let sheet = read_pgm(&dir.path().join("sweep.pgm")).unwrap();
    let first = tile_of(&sheet, 8, 0);
    for k in 1..64 {
        let tile = tile_of(&sheet, 8, k);
        let mse = first
            .iter()
            .zip(&tile)
            .map(|(&a, &b)| ((a as f64 - b as f64) / 255.0).powi(2))
            .sum::<f64>()
            / first.len() as f64;
        assert!(mse < 5e-3, "tile {k}: {mse}");
    }
}

#[test]
fn exported_voxels_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    untrained(dir.path(), &[]);
    let stdout = ok(dir.path(), &["export-voxels", "--z", "0.5,-1.25"]);
    let grid = read_voxels(&dir.path().join("voxels.vox")).unwrap();
    assert_eq!(grid.size(), GRID);
    let copy = dir.path().join("copy.vox");
    write_voxels(&copy, &grid).unwrap();
    assert_eq!(fs::read(&copy).unwrap(), fs::read(dir.path().join("voxels.vox")).unwrap());
    let points = fs::read_to_string(dir.path().join("points.txt")).unwrap();
    let brute = grid.values().iter().filter(|&&v| v > 0.5).count();
    assert_eq!(points.lines().count(), brute);
    assert!(stdout.contains(&format!("({brute} points")));
    rejected(dir.path(), &["export-voxels", "--z", "1,2,3"]);
}

#[test]
fn samples_repeat_under_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    untrained(dir.path(), &["--azimuth", "latent"]);
    let sheet = |seed: &str| {
        ok(dir.path(), &["sample", "--count", "4", "--seed", seed]);
        fs::read(dir.path().join("sample.pgm")).unwrap()
    };
    let a = sheet("1");
    assert_eq!(a, sheet("1"));
    assert_ne!(a, sheet("2"));
    let img = read_pgm(&dir.path().join("sample.pgm")).unwrap();
    assert_eq!((img.width, img.height), (4 * GRID, 2 * GRID));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["gradcheck", "--seed", "4"]);
    assert!(stdout.contains("gradient checks passed"));
    assert!(!stdout.contains("FAIL"));
}
