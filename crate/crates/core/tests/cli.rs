use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gather-sir"));
    cmd.env_remove("GATHER_SIR_THREADS");
    cmd
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn scratch(name: &str, contents: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gather-sir-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

#[test]
fn r0_for_pairs() {
    let out = run(&["r0", fixture("fast_pairs.json").to_str().unwrap()]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((v["r0"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert!((v["b_prime_0"].as_f64().unwrap() - 0.4).abs() < 1e-12);
}

#[test]
fn missing_gamma_is_a_validation_error() {
    let path = scratch(
        "no_gamma.json",
        r#"{"params":{"mu":0.5,"p":0.2},"dist":{"type":"fixed","theta":2}}"#,
    );
    let out = run(&["r0", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
}

#[test]
fn invalid_values_name_their_field() {
    let path = scratch(
        "bad_p.json",
        r#"{"params":{"mu":0.5,"p":1.5,"gamma":0.1},"dist":{"type":"fixed","theta":2}}"#,
    );
    let out = run(&["r0", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("params.p"));
    let out = run(&["ode", fixture("slow_fixed5.json").to_str().unwrap(), "--dt", "-1"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["sweep", fixture("fast_pairs.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "--ns is required");
}

#[test]
fn ode_output_has_single_interior_peak() {
    let out = run(&["ode", fixture("fast_fixed5.json").to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,s,i,r"));
    let i: Vec<f64> = lines.map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(i.len(), 10_001);
    let peak = i.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert!(peak > 0 && peak < i.len() - 1);
    assert!(i[..=peak].windows(2).all(|w| w[1] >= w[0]));
    assert!(i[peak..].windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn simulate_is_deterministic_across_threads() {
    let scenario = fixture("fast_fixed5.json");
    let s = scenario.to_str().unwrap();
    let a = run(&["simulate", s, "--threads", "1"]);
    let b = run(&["simulate", s, "--threads", "3"]);
    let c = bin().args(["simulate", s]).env("GATHER_SIR_THREADS", "2").output().unwrap();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
    let text = stdout(&a);
    assert!(text.starts_with("replica,t,S,I,R\n"));
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let total: u64 = f[2..].iter().map(|x| x.parse::<u64>().unwrap()).sum();
        assert_eq!(total, 1000);
    }
    let other_seed = run(&["simulate", s, "--seed", "43"]);
    assert_ne!(a.stdout, other_seed.stdout);
}

#[test]
fn large_populations_are_grid_sampled() {
    let out = run(&[
        "simulate",
        fixture("fast_pairs.json").to_str().unwrap(),
        "--N",
        "20000",
        "--replicas",
        "2",
        "--T",
        "20",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 1 + 2 * 1000);
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("1,2.0000000000000000e1,"), "{last}");
}

#[test]
fn sweep_is_deterministic_and_writes_to_file() {
    let s = fixture("fast_pairs.json");
    let s = s.to_str().unwrap();
    let args = ["sweep", s, "--ns", "100,1000", "--replicas", "4", "--seed", "42"];
    let a = run(&[&args[..], &["--threads", "1"]].concat());
    let b = run(&[&args[..], &["--threads", "4"]].concat());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert!(text.starts_with("N,M,mean_sup_err,max_sup_err,stderr\n100,4,"));
    assert_eq!(text.lines().count(), 3);

    let target = std::env::temp_dir().join(format!("gather-sir-sweep-{}.csv", std::process::id()));
    let c = run(&[&args[..], &["--out", target.to_str().unwrap()]].concat());
    assert!(c.status.success() && c.stdout.is_empty());
    assert_eq!(std::fs::read(&target).unwrap(), a.stdout);
    std::fs::remove_file(target).ok();
}

#[test]
fn compare_orders_susceptibles() {
    let out = run(&["compare", fixture("slow_poisson.json").to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.starts_with("t,s_gathering,i_gathering,r_gathering,s_classic,i_classic,r_classic\n"));
    for line in text.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(f[1] - f[4] >= -1e-8, "{line}");
    }
}

#[test]
fn gathering_check_reports_moments() {
    let out = run(&["gathering-check", fixture("empirical_dist.json").to_str().unwrap(), "--xi", "0.5,1"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["admissible"], true);
    assert!((v["mean"].as_f64().unwrap() - 3.1).abs() < 1e-12);
    assert!((v["second_factorial_moment"].as_f64().unwrap() - 8.8).abs() < 1e-12);
    let at_half = 0.5 * 0.25 + 0.3 * 0.125 + 0.2 * 0.5f64.powi(6);
    assert!((v["pgf"][0][1].as_f64().unwrap() - at_half).abs() < 1e-15);
    assert!((v["pgf"][1][1].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let bad = scratch("bad_dist.json", r#"{"type":"empirical","pmf":[[2,0.5],[3,0.4]]}"#);
    let out = run(&["gathering-check", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dist.pmf"));
}
