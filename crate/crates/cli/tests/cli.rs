use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use tfce_cli::nifti::{read_nifti, write_nifti, NiftiVolume};
use tfce_core::fixtures::WORKED_EXAMPLE_VALUES;

fn exe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exact-tfce"))
        .args(args)
        .env_remove("TFCE_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = exe(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_map(dir: &Path, name: &str, dims: &[usize], data: Vec<f64>) -> PathBuf {
    let path = dir.join(name);
    write_nifti(&NiftiVolume::from_data(None, dims, data), &path).unwrap();
    path
}

fn phantom(dir: &Path, subjects: usize) -> PathBuf {
    let path = dir.join("stack.nii");
    ok(&["phantom", "--dims", "8,8,4", "--subjects", &subjects.to_string(), "--amplitude", "1.5", "--seed", "4", "--out", s(&path)]);
    path
}

fn infer(stack: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["infer", "--in", s(stack), "--n-perm", "49", "--seed", "5", "--out", s(out)];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn tfce_reproduces_the_worked_example() {
    let dir = TempDir::new().unwrap();
    let input = write_map(dir.path(), "example.nii", &[3, 3, 1], WORKED_EXAMPLE_VALUES.to_vec());
    let out = dir.path().join("tfce.nii");
    ok(&["tfce", "--in", s(&input), "--conn", "4", "--out", s(&out)]);
    let v = read_nifti(&out).unwrap();
    assert_eq!(v.shape(), vec![3, 3, 1]);
    assert!((v.data[0] - 679.93).abs() < 0.01, "voxel A scored {}", v.data[0]);
    // Voxels D and I sit below every other voxel, so they are never in a larger cluster.
    assert!(v.data.iter().all(|&x| x > 0.0));
}

#[test]
fn discretized_tfce_approaches_exact() {
    let dir = TempDir::new().unwrap();
    let input = write_map(dir.path(), "example.nii", &[3, 3, 1], WORKED_EXAMPLE_VALUES.to_vec());
    let (exact, approx) = (dir.path().join("e.nii"), dir.path().join("d.nii"));
    ok(&["tfce", "--in", s(&input), "--conn", "4", "--out", s(&exact)]);
    ok(&["tfce", "--in", s(&input), "--conn", "4", "--discretized", "20000", "--out", s(&approx)]);
    let (a, b) = (read_nifti(&exact).unwrap().data, read_nifti(&approx).unwrap().data);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() / x < 1e-3, "{x} vs {y}");
    }
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(exe(&[]).status.code(), Some(2));
    assert_eq!(exe(&["tfce", "--in", "x.nii"]).status.code(), Some(2));
    assert_eq!(exe(&["tfce", "--in", "x.nii", "--out", "y.nii", "--conn", "7"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_1_and_name_a_category() {
    let dir = TempDir::new().unwrap();
    let out = exe(&["tfce", "--in", s(&dir.path().join("missing.nii")), "--out", s(&dir.path().join("o.nii"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[io]"));

    let input = write_map(dir.path(), "m.nii", &[3, 3, 1], WORKED_EXAMPLE_VALUES.to_vec());
    let out = exe(&["tfce", "--in", s(&input), "--extent-exponent=-1", "--out", s(&dir.path().join("o.nii"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[parameter]"));
}

#[test]
fn infer_is_reproducible_and_p_values_are_valid() {
    let dir = TempDir::new().unwrap();
    let stack = phantom(dir.path(), 8);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let extra = ["--cluster-extent", "2.0", "--cluster-mass", "2.0"];
    infer(&stack, &a, &extra);
    infer(&stack, &b, &extra);

    let manifest: Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n_perm"], 49);
    for name in manifest["outputs"].as_array().unwrap() {
        let name = name.as_str().unwrap();
        if name.ends_with(".nii") || name.ends_with(".csv") {
            assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
        }
    }
    for stat in ["tfce", "cluster-extent", "cluster-mass"] {
        let p = read_nifti(a.join(format!("p_{stat}.nii"))).unwrap();
        assert!(p.data.iter().all(|&x| x > 0.0 && x <= 1.0), "{stat}");
        assert!(p.data.iter().all(|&x| ((x * 50.0).round() - x * 50.0).abs() < 1e-9), "{stat} not on the 1/50 grid");
    }
}

#[test]
fn null_csv_has_one_row_per_randomization_and_statistic() {
    let dir = TempDir::new().unwrap();
    let stack = phantom(dir.path(), 8);
    let out = dir.path().join("out");
    infer(&stack, &out, &["--cluster-mass", "2.0", "--tails", "two-sided"]);
    let csv = fs::read_to_string(out.join("null_distribution.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(tfce_cli::commands::NULL_CSV_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4 * 49);
    for label in ["tfce+", "tfce-", "cluster-mass+", "cluster-mass-"] {
        let bs: Vec<&str> = rows.iter().filter(|r| r[1] == label).map(|r| r[0]).collect();
        assert_eq!(bs.len(), 49, "{label}");
        assert_eq!((bs[0], bs[48]), ("1", "49"));
    }
    assert!(out.join("p_tfce_neg.nii").exists());
}

#[test]
fn replay_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    let stack = phantom(dir.path(), 8);
    let first = dir.path().join("first");
    infer(&stack, &first, &[]);
    let second = dir.path().join("second");
    ok(&["infer", "--replay", s(&first.join("manifest.json")), "--out", s(&second)]);
    assert_eq!(fs::read(first.join("p_tfce.nii")).unwrap(), fs::read(second.join("p_tfce.nii")).unwrap());

    // Replay refuses inputs that changed since the recording.
    let mut bytes = fs::read(&stack).unwrap();
    *bytes.last_mut().unwrap() ^= 1;
    fs::write(&stack, bytes).unwrap();
    let out = exe(&["infer", "--replay", s(&first.join("manifest.json")), "--out", s(&dir.path().join("third"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn list_input_matches_stack_input() {
    let dir = TempDir::new().unwrap();
    let stack = phantom(dir.path(), 6);
    let v = read_nifti(&stack).unwrap();
    let mut list = String::new();
    for i in 0..v.volume_count() {
        // Mix plain and gzipped subjects.
        let name = if i % 2 == 0 { format!("s{i}.nii") } else { format!("s{i}.nii.gz") };
        write_map(dir.path(), &name, &[8, 8, 4], v.volume(i).to_vec());
        list.push_str(&name);
        list.push('\n');
    }
    let list_path = dir.path().join("subjects.txt");
    fs::write(&list_path, list).unwrap();

    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    infer(&stack, &a, &[]);
    ok(&["infer", "--in-list", s(&list_path), "--n-perm", "49", "--seed", "5", "--out", s(&b)]);
    assert_eq!(read_nifti(a.join("p_tfce.nii")).unwrap().data, read_nifti(b.join("p_tfce.nii")).unwrap().data);
}

#[test]
fn permutation_matrix_fixes_the_randomizations() {
    let dir = TempDir::new().unwrap();
    let stack = phantom(dir.path(), 4);
    let matrix = dir.path().join("perm.txt");
    fs::write(&matrix, "# identity first\n1 1 1 1\n-1 1 1 1\n1 -1 1 -1\n-1 -1 -1 -1\n").unwrap();
    let out = dir.path().join("out");
    ok(&["infer", "--in", s(&stack), "--perm-matrix", s(&matrix), "--out", s(&out)]);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n_perm"], 3);
    let p = read_nifti(out.join("p_tfce.nii")).unwrap();
    assert!(p.data.iter().all(|&x| [0.25, 0.5, 0.75, 1.0].contains(&x)));

    fs::write(&matrix, "-1 1 1 1\n").unwrap();
    let bad = exe(&["infer", "--in", s(&stack), "--perm-matrix", s(&matrix), "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error[format]"));
}

#[test]
fn explicit_mask_restricts_inference() {
    let dir = TempDir::new().unwrap();
    let stack = phantom(dir.path(), 6);
    let mask: Vec<f64> = (0..8 * 8 * 4).map(|i| f64::from(u8::from(i % 3 != 0))).collect();
    let mask_path = write_map(dir.path(), "mask.nii", &[8, 8, 4], mask.clone());
    let out = dir.path().join("out");
    infer(&stack, &out, &["--mask", s(&mask_path)]);
    let stat = read_nifti(out.join("stat.nii")).unwrap();
    let p = read_nifti(out.join("p_tfce.nii")).unwrap();
    for ((m, t), p) in mask.iter().zip(&stat.data).zip(&p.data) {
        assert_eq!(*m == 0.0, *t == 0.0);
        if *m == 0.0 {
            assert_eq!(*p, 1.0);
        }
    }
}

#[test]
fn compare_with_itself_is_flat() {
    let dir = TempDir::new().unwrap();
    let stack = phantom(dir.path(), 8);
    let out = dir.path().join("out");
    infer(&stack, &out, &[]);
    let p = out.join("p_tfce.nii");
    let scatter = dir.path().join("scatter.csv");
    let report = ok(&["compare", s(&p), s(&p), "--scatter", s(&scatter)]);
    let report: Value = serde_json::from_slice(&report.stdout).unwrap();
    for key in ["d_plus_pct", "d_minus_pct", "gain_pct", "loss_pct"] {
        assert_eq!(report[key], 0.0, "{key}");
    }
    assert_eq!(report["n_voxels"], 8 * 8 * 4);
    assert_eq!(fs::read_to_string(scatter).unwrap().lines().count(), 8 * 8 * 4 + 1);
}

#[test]
fn cluster_command_reports_the_worked_example() {
    let dir = TempDir::new().unwrap();
    let input = write_map(dir.path(), "example.nii.gz", &[3, 3, 1], WORKED_EXAMPLE_VALUES.to_vec());
    let labels = dir.path().join("labels.nii");
    let out = ok(&["cluster", "--in", s(&input), "--cdt", "7.0", "--conn", "4", "--labels", s(&labels)]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let clusters = report["statistics"][0]["clusters"].as_array().unwrap();
    // Above 7: {A}, {C, F} and {G}.
    let extents: Vec<u64> = clusters.iter().map(|c| c["extent"].as_u64().unwrap()).collect();
    assert_eq!(extents, vec![1, 2, 1]);
    assert_eq!(clusters[1]["peak_voxel"], serde_json::json!([2, 1, 0]));
    let l = read_nifti(&labels).unwrap().data;
    assert_eq!(l, vec![1.0, 0.0, 2.0, 0.0, 0.0, 2.0, 3.0, 0.0, 0.0]);
}
