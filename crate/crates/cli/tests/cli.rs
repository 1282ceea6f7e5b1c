use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use slimbert::bench::BenchReport;
use slimbert::train::RunLog;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slimbert"))
}

fn file(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().unwrap();
    (status.code().unwrap(), String::from_utf8(stdout).unwrap(), String::from_utf8(stderr).unwrap())
}

const SMALL_ENCODER: &str = "# two-block toy encoder\nnum_attention_blocks = 2\n";
const SHORT_RUN: &str =
    "total_steps = 12\nwarmup_steps = 3\nbatch_size = 4\nseq_len = 12\ntrain_sequences = 64\neval_sequences = 16\n";

#[test]
fn table1_rows_and_csv() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().to_path_buf();
    let (code, stdout, _) = run(bin().args(["count-params", "--table1", "--out"]).arg(&out));
    assert_eq!(code, 0);
    let row = stdout.lines().find(|l| l.starts_with("every:2 ")).unwrap();
    assert!(row.contains("1.35x"), "{row}");
    assert!(stdout.lines().find(|l| l.starts_with("none ")).unwrap().contains("2.07x"));
    let csv = fs::read_to_string(out.join("params.csv")).unwrap();
    assert!(csv.starts_with("variant,embeddings,attention,intermediate,layernorms,pooler,total,size_ratio\n"));
    assert_eq!(csv.lines().count(), 25);
}

#[test]
fn config_against_itself_has_unit_ratio() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().to_path_buf();
    let cfg = file(&dir, "base.cfg", "period = every:1\n");
    let (code, stdout, _) = run(bin().args(["count-params", "--config"]).arg(&cfg));
    assert_eq!(code, 0);
    assert!(stdout.contains("ratio=1.00x"), "{stdout}");
}

#[test]
fn usage_and_config_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().to_path_buf();
    let bad = file(&dir, "bad.cfg", "num_heads = 5\n");
    let (code, _, stderr) = run(bin().args(["count-params", "--config"]).arg(&bad));
    assert_eq!(code, 2);
    assert!(stderr.contains("num_heads"), "{stderr}");
    assert_eq!(run(bin().args(["count-params", "--no-such-flag"])).0, 2);
    assert_eq!(run(bin().arg("count-params")).0, 2);
    let missing = dir.join("absent.cfg");
    assert_eq!(run(bin().args(["count-params", "--config"]).arg(&missing)).0, 4);
}

#[test]
fn ablation_without_acknowledgment_is_refused() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().to_path_buf();
    let cfg = file(&dir, "abl.cfg", "attn_layernorm = remove_ablation\n");
    let (code, _, stderr) = run(bin().args(["train", "--config"]).arg(&cfg).arg("--out").arg(dir.join("out")));
    assert_eq!(code, 2);
    assert!(stderr.contains("ablation_acknowledged"), "{stderr}");
}

#[test]
fn train_is_reproducible_and_finetune_reads_its_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().to_path_buf();
    let enc = file(&dir, "enc.cfg", SMALL_ENCODER);
    let tc = file(&dir, "train.cfg", SHORT_RUN);
    let train = |out: &Path| {
        run(bin()
            .arg("train")
            .arg("--config")
            .arg(&enc)
            .arg("--train-config")
            .arg(&tc)
            .arg("--out")
            .arg(out)
            .args(["--seed", "7"]))
    };
    let (a_dir, b_dir) = (dir.join("a"), dir.join("b"));
    let (code, stdout, _) = train(&a_dir);
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("# status=Completed"));
    assert_eq!(train(&b_dir).0, 0);
    let a = RunLog::from_csv(&fs::read_to_string(a_dir.join("runlog.csv")).unwrap()).unwrap();
    let b = RunLog::from_csv(&fs::read_to_string(b_dir.join("runlog.csv")).unwrap()).unwrap();
    assert!(a.same_trajectory(&b));
    assert_eq!(a.records().len(), 12);
    assert_eq!(fs::read(a_dir.join("checkpoint.slfm")).unwrap(), fs::read(b_dir.join("checkpoint.slfm")).unwrap());

    let (code, stdout, stderr) =
        run(bin().arg("finetune").arg("--config").arg(&enc).arg("--train-config").arg(&tc).arg("--out").arg(&a_dir));
    assert_eq!(code, 0, "{stdout}{stderr}");
    assert!(stdout.contains("accuracy"));
    assert!(RunLog::from_csv(&fs::read_to_string(a_dir.join("finetune.csv")).unwrap()).is_ok());

    // A different architecture cannot load this checkpoint.
    let other = file(&dir, "other.cfg", "num_attention_blocks = 2\nattention_kind = normalized_bandd\n");
    let (code, _, stderr) = run(bin().arg("finetune").arg("--config").arg(&other).arg("--out").arg(&a_dir));
    assert_eq!(code, 2, "{stderr}");
}

#[test]
fn divergence_exits_three() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().to_path_buf();
    let enc = file(&dir, "enc.cfg", SMALL_ENCODER);
    let tc = file(&dir, "train.cfg", &format!("{SHORT_RUN}grad_norm_threshold = 1e-12\ndivergence_window = 2\n"));
    let (code, stdout, _) = run(bin()
        .arg("train")
        .arg("--config")
        .arg(&enc)
        .arg("--train-config")
        .arg(&tc)
        .arg("--out")
        .arg(dir.join("out")));
    assert_eq!(code, 3);
    assert!(stdout.contains("# status=Diverged:1:grad-explosion"), "{stdout}");
    let log = fs::read_to_string(dir.join("out/runlog.csv")).unwrap();
    assert!(log.ends_with("# status=Diverged:1:grad-explosion\n"));
}

#[test]
fn missing_output_directory_parent_is_io_error() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().to_path_buf();
    let blocker = file(&dir, "blocker", "not a directory");
    let (code, _, _) = run(bin().args(["count-params", "--table1", "--out"]).arg(blocker.join("sub")));
    assert_eq!(code, 4);
}

#[test]
fn grad_check_passes_and_names_corrupted_ops() {
    let (code, stdout, _) = run(bin().args(["grad-check", "--ops", "all"]));
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("attention_unit.normalized"));
    let (code, stdout, _) = run(bin().args(["grad-check", "--ops", "norm"]));
    assert_eq!(code, 0);
    assert!(stdout.contains("normalize_rows"));
    let (code, stdout, _) = run(bin().args(["grad-check", "--ops", "norm", "--corrupt-op", "normalize_rows"]));
    assert_ne!(code, 0);
    assert!(stdout.contains("failed: normalize_rows"), "{stdout}");
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().to_path_buf();
    let big = file(&dir, "big.cfg", "hidden_size = 512\nnum_heads = 8\n");
    assert_eq!(run(bin().arg("grad-check").arg("--config").arg(&big)).0, 2);
    assert_eq!(run(bin().args(["grad-check", "--ops", "everything"])).0, 2);
}

#[test]
fn bench_writes_csv_and_plot() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().to_path_buf();
    let base = file(&dir, "base.cfg", SMALL_ENCODER);
    let two = file(&dir, "two.cfg", &format!("{SMALL_ENCODER}period = every:2\n"));
    let two_bandd =
        file(&dir, "bandd.cfg", &format!("{SMALL_ENCODER}period = every:2\nattention_kind = normalized_bandd\n"));
    let mut cfgs = two.into_os_string();
    cfgs.push(",");
    cfgs.push(&two_bandd);
    let out = dir.join("out");
    let (code, stdout, stderr) = run(bin()
        .arg("bench")
        .arg("--config")
        .arg(&cfgs)
        .arg("--baseline-config")
        .arg(&base)
        .args(["--batch", "2", "--seqlens", "8,16", "--iterations", "3", "--out"])
        .arg(&out));
    assert_eq!(code, 0, "{stdout}{stderr}");
    let report = BenchReport::from_csv(&fs::read_to_string(out.join("bench.csv")).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 6);
    for r in report.rows.iter().filter(|r| r.variant == "every:1") {
        assert_eq!(r.speedup_vs_baseline, 1.0);
        assert_eq!(r.flop_ratio_vs_baseline, 1.0);
    }
    let plot = fs::read_to_string(out.join("bench.plot")).unwrap();
    assert_eq!(plot.split("\n\n").count(), 3);
    assert!(plot.contains("# bandd+every:2 batch=2 threads=1\n8 "));

    // The baseline is mandatory and must be the unmodified encoder.
    assert_eq!(run(bin().arg("bench").arg("--config").arg(&base).arg("--out").arg(&out)).0, 2);
    let not_base = file(&dir, "nb.cfg", "period = every:2\n");
    assert_eq!(
        run(bin()
            .arg("bench")
            .arg("--config")
            .arg(&base)
            .arg("--baseline-config")
            .arg(&not_base)
            .arg("--out")
            .arg(&out))
        .0,
        2
    );
}

#[test]
fn compare_tabulates_variants() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().to_path_buf();
    let tc = file(&dir, "train.cfg", SHORT_RUN);
    let paths: Vec<PathBuf> = [("a", "every:1"), ("b", "every:2"), ("c", "none")]
        .iter()
        .map(|(n, p)| file(&dir, &format!("{n}.cfg"), &format!("{SMALL_ENCODER}period = {p}\n")))
        .collect();
    let joined = paths.iter().map(|p| p.to_str().unwrap()).collect::<Vec<_>>().join(",");
    let (code, stdout, stderr) = run(bin()
        .args(["compare", "--configs", &joined, "--task", "mlm", "--steps", "4", "--train-config"])
        .arg(&tc)
        .arg("--out")
        .arg(&dir));
    assert_eq!(code, 0, "{stderr}");
    let rows: Vec<Vec<&str>> = stdout.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    let params: Vec<u64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(params[0] > params[1] && params[1] > params[2]);
    assert!(rows.iter().all(|r| r[5] == "Completed"));
    assert!(dir.join("compare.csv").exists());

    let twice = format!("{},{}", paths[0].display(), paths[0].display());
    let (_, stdout, _) = run(bin().args(["compare", "--configs", &twice, "--steps", "4", "--train-config"]).arg(&tc));
    let rows: Vec<&str> = stdout.lines().skip(1).collect();
    assert_eq!(rows[0], rows[1]);

    // One bad config aborts before any training.
    let bad = file(&dir, "bad.cfg", "num_heads = 5\n");
    let mixed = format!("{},{}", paths[0].display(), bad.display());
    let (code, stdout, _) = run(bin().args(["compare", "--configs", &mixed, "--steps", "4"]));
    assert_eq!(code, 2);
    assert!(stdout.is_empty());
}
