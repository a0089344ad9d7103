use std::fs;
use std::process::{Command, Output};

fn fdhmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdhmm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn kernel_check_succeeds() {
    let o = fdhmm(&["kernel", "check", "--p", "3", "--q", "6"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("ok"));
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let o = fdhmm(&["cell-solve", "--coeff", "nope", "--x", "0", "--n", "32"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: unknown coefficient"));
}

#[test]
fn cell_solve_prints_tensor_and_writes_correctors() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("chi.csv");
    let o = fdhmm(&[
        "cell-solve",
        "--coeff",
        "periodic-2d",
        "--x",
        "0",
        "0",
        "--n",
        "32",
        "--corrector-csv",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("A0[1]"));
    let text = fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("y1,y2,chi0,chi1\n"));
    assert_eq!(text.lines().count(), 1 + 32 * 32);
}

#[test]
fn upscale_constant_medium() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("micro.csv");
    let o = fdhmm(&[
        "upscale",
        "--coeff",
        "constant-1d:2",
        "--eps",
        "0.01",
        "--eta",
        "0.05",
        "--slope",
        "1.5",
        "--dump-micro",
        dump.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let flux: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("flux "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((flux - 3.0).abs() < 1e-8);
    assert!(fs::read_to_string(dump).unwrap().starts_with("t,x,u\n"));
}

#[test]
fn convergence_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("conv.toml");
    let out = dir.path().join("rates.csv");
    fs::write(
        &cfg,
        format!(
            "[convergence]\ncoefficients = [\"periodic-1d\"]\neta = 0.05\nk_range = [1, 4]\noutput = \"{}\"\n",
            out.display()
        ),
    )
    .unwrap();
    let series = dir.path().join("rates_periodic-1d.csv");
    let o = fdhmm(&[
        "--jobs",
        "2",
        "convergence",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = fs::read(&series).unwrap();
    let o = fdhmm(&[
        "--jobs",
        "1",
        "convergence",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(first, fs::read(&series).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("sweep_var,error,coefficient,"));
    assert!(text.lines().last().unwrap().starts_with("# fitted_slope="));
}

#[test]
fn macro_run_and_expansion() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let snaps = dir.path().join("u.csv");
    let exp = dir.path().join("fig2.csv");
    fs::write(
        &cfg,
        format!(
            "[macro]\ncoefficient = \"constant\"\ncells = 16\nt_final = 0.25\noutput = \"{}\"\n\n\
             [expansion]\ncoefficient = \"constant\"\nhalf_width = 2\nt_final = 0.25\nwindow = 1.0\n\
             eps = [0.25, 0.125]\norders = 1\noutput = \"{}\"\n",
            snaps.display(),
            exp.display()
        ),
    )
    .unwrap();
    let o = fdhmm(&["macro-run", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("l2 error"));
    assert!(fs::read_to_string(&snaps).unwrap().starts_with("t,x,U\n"));
    let o = fdhmm(&[
        "expansion",
        "--experiment",
        "fig2",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("fig2_E0.csv").exists());
    let o = fdhmm(&[
        "expansion",
        "--experiment",
        "fig9",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
}
