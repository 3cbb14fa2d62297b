use kingman_lab::cli::{run, EXIT_OK, EXIT_UNSUPPORTED, EXIT_USAGE};

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn kingman(args: &[&str]) -> Output {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(std::iter::once("kingman").chain(args.iter().copied()), &mut out, &mut err);
    Output { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn header(text: &str) -> &str {
    text.lines().next().unwrap_or("")
}

fn column(text: &str, name: &str) -> Vec<f64> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let idx = reader.headers().unwrap().iter().position(|h| h == name).expect("column present");
    reader.records().map(|r| r.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn simulate_csv_layout() {
    let o = kingman(&["simulate", "--n", "20", "--s", "3", "--reps", "4", "--seed", "9"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert_eq!(header(&o.stdout), "replicate_id,L_1,L_2,L_3,Lsm_1,Lsm_2,Lsm_3");
    assert_eq!(o.stdout.lines().count(), 5);
    assert!(!o.stdout.contains('\r'));
}

#[test]
fn simulate_two_leaves_is_exact() {
    let o = kingman(&["simulate", "--n", "2", "--s", "1", "--reps", "3", "--seed", "1"]);
    assert_eq!(o.code, EXIT_OK);
    assert!(column(&o.stdout, "Lsm_1").iter().all(|&x| x == 2.0));
}

#[test]
fn reruns_and_worker_counts_are_identical() {
    let args = ["simulate", "--n", "60", "--s", "2", "--reps", "50", "--seed", "123"];
    let first = kingman(&args).stdout;
    assert_eq!(first, kingman(&args).stdout);
    let mut with_workers = vec!["--workers", "3"];
    with_workers.extend(args);
    assert_eq!(first, kingman(&with_workers).stdout);
    let other_seed = kingman(&["simulate", "--n", "60", "--s", "2", "--reps", "50", "--seed", "124"]).stdout;
    assert_ne!(first, other_seed);
}

#[test]
fn simulate_json_parses() {
    let o = kingman(&["simulate", "--n", "10", "--reps", "2", "--seed", "5", "--format", "json"]);
    assert_eq!(o.code, EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
}

#[test]
fn out_flag_writes_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lengths.csv");
    let o = kingman(&["simulate", "--n", "10", "--reps", "3", "--seed", "5", "--out", path.to_str().unwrap()]);
    assert_eq!(o.code, EXIT_OK);
    assert!(o.stdout.is_empty());
    let written = std::fs::read_to_string(&path).unwrap();
    assert_eq!(written, kingman(&["simulate", "--n", "10", "--reps", "3", "--seed", "5"]).stdout);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(kingman(&["simulate", "--n", "10"]).code, EXIT_USAGE);
    assert_eq!(kingman(&["simulate", "--n", "1", "--seed", "1"]).code, EXIT_USAGE);
    assert_eq!(kingman(&["simulate", "--n", "10", "--s", "10", "--seed", "1"]).code, EXIT_USAGE);
    assert_eq!(kingman(&["bogus"]).code, EXIT_USAGE);
    assert_eq!(kingman(&["--help"]).code, EXIT_OK);
}

#[test]
fn moments_exact_cells() {
    let o = kingman(&["moments", "--n", "10", "--k", "5", "--r", "2"]);
    assert_eq!(o.code, EXIT_OK);
    let mut reader = csv::Reader::from_reader(o.stdout.as_bytes());
    let row = reader.records().next().unwrap().unwrap();
    assert_eq!(&row[3], "25");
    assert_eq!(&row[4], "18");
    assert_eq!(&row[9], "2375");
    assert_eq!(&row[10], "2268");
}

#[test]
fn moments_outside_variance_regime_exit_3() {
    let o = kingman(&["moments", "--n", "4", "--k", "2", "--r", "2"]);
    assert_eq!(o.code, EXIT_UNSUPPORTED);
    let mut reader = csv::Reader::from_reader(o.stdout.as_bytes());
    let row = reader.records().next().unwrap().unwrap();
    assert_eq!((&row[3], &row[4]), ("2", "3"));
    assert!(row[6].is_empty() && row[9].is_empty());
    assert!(!o.stderr.is_empty());
}

#[test]
fn moments_all_levels() {
    let o = kingman(&["moments", "--n", "12", "--r", "3"]);
    assert_eq!(o.code, EXIT_OK);
    assert_eq!(o.stdout.lines().count(), 13);
}

#[test]
fn couple_needs_a_valid_region() {
    let o = kingman(&["couple", "--n", "1000", "--reps", "2", "--seed", "1"]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(o.stderr.contains("--a") && o.stderr.contains("--b"), "{}", o.stderr);

    let o = kingman(&["couple", "--n", "1000", "--reps", "20", "--seed", "1", "--a", "30", "--b", "10"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert_eq!(
        header(&o.stdout),
        "k,r,mismatch_rate,mean_abs_diff,var_diff,lemma2_bound_shape,lemma3_bound_shape"
    );
    // levels 29 down to 10 for each of two orders
    assert_eq!(o.stdout.lines().count(), 1 + 20 * 2);
    assert!(column(&o.stdout, "mismatch_rate").iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn couple_default_region_at_larger_n() {
    let o = kingman(&["couple", "--n", "10000", "--reps", "3", "--seed", "2", "--s", "1"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    // a = 117, b = 100
    assert_eq!(o.stdout.lines().count(), 1 + 17);
}

#[test]
fn sfs_layout_and_conventions() {
    let o = kingman(&["sfs", "--rate", "1.5", "--n", "30", "--s", "3", "--reps", "5", "--seed", "4"]);
    assert_eq!(o.code, EXIT_OK);
    assert_eq!(header(&o.stdout), "replicate_id,M_1,M_2,M_3,S_n");
    assert!(o.stderr.contains("theta") || o.stderr.contains("θ"), "{}", o.stderr);
    let mut reader = csv::Reader::from_reader(o.stdout.as_bytes());
    for rec in reader.records() {
        let rec = rec.unwrap();
        let m: u64 = (1..=3).map(|i| rec[i].parse::<u64>().unwrap()).sum();
        assert!(m <= rec[4].parse::<u64>().unwrap());
    }
    assert_eq!(kingman(&["sfs", "--rate", "-1", "--n", "30", "--seed", "4"]).code, EXIT_USAGE);
}

#[test]
fn clt_summary_json() {
    let o = kingman(&["clt", "--n", "300", "--s", "2", "--reps", "40", "--seed", "8"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let v: serde_json::Value = serde_json::from_str(&o.stdout).unwrap();
    assert_eq!(v["n"], 300);
    assert_eq!(v["mean"].as_array().unwrap().len(), 2);
    assert_eq!(v["ks"].as_array().unwrap().len(), 2);
    assert_eq!(v["insufficient_sample"], false);
}

#[test]
fn figure3_both_modes() {
    for mode in ["tree", "chain"] {
        let o = kingman(&["figure3", "--n", "30", "--orders", "1,3", "--seed", "1", "--mode", mode]);
        assert_eq!(o.code, EXIT_OK);
        assert_eq!(header(&o.stdout), "k,W1,W3,EW1,EW3");
        assert_eq!(o.stdout.lines().count(), 31);
        let w1 = column(&o.stdout, "W1");
        assert_eq!(w1[0], 30.0);
        assert_eq!(*w1.last().unwrap(), 0.0);
    }
}

#[test]
fn figure2_summary_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("summary.json");
    let o = kingman(&["figure2", "--n", "50", "--reps", "30", "--seed", "3", "--summary", path.to_str().unwrap()]);
    assert_eq!(o.code, EXIT_OK);
    assert!(o.stderr.is_empty());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(v["target"], serde_json::json!([2.0, 1.0]));
    let l1 = column(&o.stdout, "L1");
    let mean = l1.iter().sum::<f64>() / l1.len() as f64;
    assert!((v["mean"][0].as_f64().unwrap() - mean).abs() < 1e-9);
}

#[test]
fn regress_rows() {
    let o = kingman(&["regress", "--n", "15", "--s", "2", "--reps", "30", "--seed", "6"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    // levels 15 down to 2, two orders each
    assert_eq!(o.stdout.lines().count(), 1 + 14 * 2);
}

#[test]
fn tree_and_chain_modes_agree_on_smoothed_means() {
    let mean = |mode: &str| {
        let o = kingman(&["simulate", "--n", "80", "--s", "2", "--reps", "3000", "--seed", "77", "--mode", mode]);
        let col = column(&o.stdout, "Lsm_2");
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
        (m, (var / col.len() as f64).sqrt())
    };
    let ((a, sa), (b, sb)) = (mean("tree"), mean("chain"));
    assert!((a - b).abs() <= 4.0 * (sa * sa + sb * sb).sqrt(), "{a} vs {b}");
    assert!((a - 1.0).abs() <= 4.0 * sa);
}
