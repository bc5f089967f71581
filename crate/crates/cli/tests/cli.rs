use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qmamba::fmw::{Fmw, Tensor, TensorData};
use qmamba::model::{synthetic_checkpoint, synthetic_input, ModelConfig};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_qmamba");

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn fx(name: &str) -> String {
    fixtures().join(name).to_string_lossy().into_owned()
}

fn qmamba(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = qmamba(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn output_tensor(path: &str) -> (Vec<usize>, Vec<f32>) {
    let f = Fmw::load(path).unwrap();
    let t = f.get("output").unwrap();
    let TensorData::F32(v) = &t.data else { panic!("output dtype") };
    (t.dims.clone(), v.clone())
}

/// Regenerates the frozen fixtures; run with `QMAMBA_REGEN=1`.
#[test]
fn regenerate_fixtures() {
    if std::env::var_os("QMAMBA_REGEN").is_none() {
        return;
    }
    let dir = fixtures();
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = ModelConfig::preset("tiny").unwrap();
    std::fs::write(dir.join("tiny.json"), cfg.to_json()).unwrap();
    synthetic_checkpoint(&cfg, 1).unwrap().to_fmw().save(dir.join("tiny_float.fmw")).unwrap();
    let prompt = synthetic_input(&cfg, 8, 2);
    prompt.to_fmw().save(dir.join("prompt.fmw")).unwrap();
    prompt.slice(0, 7).to_fmw().save(dir.join("prompt7.fmw")).unwrap();
    prompt.slice(7, 8).to_fmw().save(dir.join("next.fmw")).unwrap();
    let d = |n: &str| dir.join(n).to_string_lossy().into_owned();
    ok(&["quantize", "--in", &d("tiny_float.fmw"), "--config", &d("tiny.json"), "--out", &d("tiny_quant.fmw")]);
    ok(&["run", "--weights", &d("tiny_quant.fmw"), "--config", &d("tiny.json"), "--mode", "prefill", "--input", &d("prompt.fmw"), "--out", &d("golden_prefill_quant.fmw")]);
    ok(&["run", "--weights", &d("tiny_float.fmw"), "--config", &d("tiny.json"), "--mode", "prefill", "--input", &d("prompt.fmw"), "--out", &d("golden_prefill_ref.fmw"), "--path", "ref"]);
    let o = ok(&["error-report", "--weights-f", &d("tiny_float.fmw"), "--weights-q", &d("tiny_quant.fmw"), "--config", &d("tiny.json"), "--input", &d("prompt.fmw"), "--json"]);
    std::fs::write(dir.join("golden_error_report.json"), &o.stdout).unwrap();
}

#[test]
fn usage_errors_exit_1() {
    let o = qmamba(&["quantize", "--in", &fx("tiny_float.fmw"), "--out", "/dev/null"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--config"));
    assert_eq!(qmamba(&["perf", "--bogus"]).status.code(), Some(1));
    assert_eq!(qmamba(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(qmamba(&["perf", "--power", "-3"]).status.code(), Some(1));
    assert_eq!(qmamba(&["--help"]).status.code(), Some(0));
}

#[test]
fn group_rule_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = ModelConfig { hadamard_group: 48, ..ModelConfig::preset("tiny").unwrap() };
    std::fs::write(p(&dir, "bad.json"), cfg.to_json()).unwrap();
    let o = qmamba(&["quantize", "--in", &fx("tiny_float.fmw"), "--config", &p(&dir, "bad.json"), "--out", &p(&dir, "q.fmw")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("group dimension must be 2^k"));
    assert!(!dir.path().join("q.fmw").exists());
}

#[test]
fn bad_files_exit_2_naming_the_problem() {
    let dir = TempDir::new().unwrap();
    let mut f = Fmw::load(fx("tiny_float.fmw")).unwrap();
    f.tensors.retain(|t| t.name != "layers.1.ssm.D");
    f.save(p(&dir, "missing.fmw")).unwrap();
    let o = qmamba(&["quantize", "--in", &p(&dir, "missing.fmw"), "--config", &fx("tiny.json"), "--out", &p(&dir, "q.fmw")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("layers.1.ssm.D"));

    let mut bytes = std::fs::read(fx("tiny_float.fmw")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(p(&dir, "corrupt.fmw"), bytes).unwrap();
    let o = qmamba(&["quantize", "--in", &p(&dir, "corrupt.fmw"), "--config", &fx("tiny.json"), "--out", &p(&dir, "q.fmw")]);
    assert_eq!(o.status.code(), Some(2));

    let o = qmamba(&["quantize", "--in", &fx("tiny_quant.fmw"), "--config", &fx("tiny.json"), "--out", &p(&dir, "q.fmw")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("already quantized"));
}

#[test]
fn quantize_matches_golden_bytes() {
    let dir = TempDir::new().unwrap();
    let o = ok(&["quantize", "--in", &fx("tiny_float.fmw"), "--config", &fx("tiny.json"), "--out", &p(&dir, "q.fmw")]);
    assert!(stdout(&o).contains("layer 1: in_proj m=1"));
    let got = std::fs::read(p(&dir, "q.fmw")).unwrap();
    assert_eq!(crc32fast::hash(&got), crc32fast::hash(&std::fs::read(fx("tiny_quant.fmw")).unwrap()));
}

#[test]
fn run_matches_golden_outputs() {
    let dir = TempDir::new().unwrap();
    for (path, weights, golden) in [("quant", "tiny_quant.fmw", "golden_prefill_quant.fmw"), ("ref", "tiny_float.fmw", "golden_prefill_ref.fmw")] {
        let out = p(&dir, &format!("{path}.fmw"));
        let o = ok(&["run", "--weights", &fx(weights), "--config", &fx("tiny.json"), "--mode", "prefill", "--input", &fx("prompt.fmw"), "--out", &out, "--path", path]);
        assert!(stdout(&o).contains("saturated: 0"), "{}", stdout(&o));
        assert_eq!(output_tensor(&out), output_tensor(&fx(golden)), "{path}");
    }
}

#[test]
fn prefill_then_decode_continues_prefill() {
    let dir = TempDir::new().unwrap();
    for (path, weights, golden) in [("quant", "tiny_quant.fmw", "golden_prefill_quant.fmw"), ("ref", "tiny_float.fmw", "golden_prefill_ref.fmw")] {
        let (st, step) = (p(&dir, &format!("{path}.state")), p(&dir, &format!("{path}.step")));
        ok(&["run", "--weights", &fx(weights), "--config", &fx("tiny.json"), "--mode", "prefill", "--input", &fx("prompt7.fmw"), "--out", &p(&dir, "pre.fmw"), "--path", path, "--state-out", &st]);
        ok(&["run", "--weights", &fx(weights), "--config", &fx("tiny.json"), "--mode", "decode", "--input", &fx("next.fmw"), "--out", &step, "--path", path, "--state", &st]);
        let (dims, full) = output_tensor(&fx(golden));
        let (sdims, last) = output_tensor(&step);
        assert_eq!(sdims, vec![1, dims[1]]);
        assert_eq!(last[..], full[7 * dims[1]..], "{path}");
    }
}

#[test]
fn decode_from_zero_caches_equals_prefill() {
    let dir = TempDir::new().unwrap();
    for (path, weights, golden) in [("quant", "tiny_quant.fmw", "golden_prefill_quant.fmw"), ("ref", "tiny_float.fmw", "golden_prefill_ref.fmw")] {
        let out = p(&dir, "dec.fmw");
        ok(&["run", "--weights", &fx(weights), "--config", &fx("tiny.json"), "--mode", "decode", "--input", &fx("prompt.fmw"), "--out", &out, "--path", path]);
        assert_eq!(output_tensor(&out), output_tensor(&fx(golden)), "{path}");
    }
    let o = qmamba(&["run", "--weights", &fx("tiny_quant.fmw"), "--config", &fx("tiny.json"), "--mode", "prefill", "--input", &fx("prompt.fmw"), "--out", &p(&dir, "x.fmw"), "--state", &fx("prompt.fmw")]);
    assert_eq!(o.status.code(), Some(1));
    let o = qmamba(&["run", "--weights", &fx("tiny_float.fmw"), "--config", &fx("tiny.json"), "--mode", "prefill", "--input", &fx("prompt.fmw"), "--out", &p(&dir, "x.fmw"), "--steps", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn greedy_generation_with_vocabulary() {
    let dir = TempDir::new().unwrap();
    let cfg = ModelConfig { vocab_size: 32, ..ModelConfig::preset("tiny").unwrap() };
    std::fs::write(p(&dir, "lm.json"), cfg.to_json()).unwrap();
    synthetic_checkpoint(&cfg, 4).unwrap().to_fmw().save(p(&dir, "lm.fmw")).unwrap();
    Fmw::new(vec![Tensor::f32("tokens", vec![3], vec![1.0, 7.0, 30.0])]).save(p(&dir, "toks.fmw")).unwrap();
    let run = |out: &str| {
        ok(&["run", "--weights", &p(&dir, "lm.fmw"), "--config", &p(&dir, "lm.json"), "--mode", "prefill", "--input", &p(&dir, "toks.fmw"), "--out", out, "--steps", "4"]);
        std::fs::read(out).unwrap()
    };
    let a = run(&p(&dir, "a.fmw"));
    assert_eq!(a, run(&p(&dir, "b.fmw")));
    let f = Fmw::load(p(&dir, "a.fmw")).unwrap();
    assert_eq!(f.get("output").unwrap().dims, vec![7, 32]);
    assert_eq!(f.get("tokens").unwrap().dims, vec![4]);
    Fmw::new(vec![Tensor::f32("tokens", vec![1], vec![32.0])]).save(p(&dir, "oob.fmw")).unwrap();
    let o = qmamba(&["run", "--weights", &p(&dir, "lm.fmw"), "--config", &p(&dir, "lm.json"), "--mode", "prefill", "--input", &p(&dir, "oob.fmw"), "--out", &p(&dir, "c.fmw"), "--path", "ref"]);
    assert_eq!(o.status.code(), Some(2));
}

fn report_json(weights_f: &str, weights_q: &str, cfg: &str, input: &str) -> serde_json::Value {
    let o = ok(&["error-report", "--weights-f", weights_f, "--weights-q", weights_q, "--config", cfg, "--input", input, "--json"]);
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn error_report_identical_is_zero() {
    let r = report_json(&fx("tiny_float.fmw"), &fx("tiny_float.fmw"), &fx("tiny.json"), &fx("prompt.fmw"));
    assert_eq!(r["candidate"], "float");
    for m in r["layers"].as_array().unwrap().iter().chain([&r["output"]]) {
        assert_eq!((m["rel_l2"].as_f64(), m["max_abs"].as_f64(), m["cosine"].as_f64()), (Some(0.0), Some(0.0), Some(1.0)));
    }
}

#[test]
fn error_report_matches_golden() {
    let o = ok(&["error-report", "--weights-f", &fx("tiny_float.fmw"), "--weights-q", &fx("tiny_quant.fmw"), "--config", &fx("tiny.json"), "--input", &fx("prompt.fmw"), "--json"]);
    assert_eq!(stdout(&o), std::fs::read_to_string(fx("golden_error_report.json")).unwrap());
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["version"], 1);
    assert_eq!(r["layers"].as_array().unwrap().len(), 2);
    assert!(r["output"]["cosine"].as_f64().unwrap() > 0.99);
    let text = stdout(&ok(&["error-report", "--weights-f", &fx("tiny_float.fmw"), "--weights-q", &fx("tiny_quant.fmw"), "--config", &fx("tiny.json"), "--input", &fx("prompt.fmw")]));
    assert!(text.lines().any(|l| l.starts_with("output")));
}

#[test]
fn error_report_hadamard_beats_plain_on_outliers() {
    let dir = TempDir::new().unwrap();
    let cfg = ModelConfig::preset("tiny").unwrap();
    let mut m = synthetic_checkpoint(&cfg, 11).unwrap();
    // outlier activation channels with compensating weight columns
    for b in &mut m.blocks {
        for c in [3, 40] {
            b.norm[c] *= 100.0;
            (0..b.in_proj.rows()).for_each(|r| b.in_proj.row_mut(r)[c] /= 100.0);
        }
        b.norm2[77] *= 100.0;
        (0..b.out_proj.rows()).for_each(|r| b.out_proj.row_mut(r)[77] /= 100.0);
    }
    m.to_fmw().save(p(&dir, "f.fmw")).unwrap();
    let plain = ModelConfig { hadamard_group: 1, ..cfg.clone() };
    std::fs::write(p(&dir, "had.json"), cfg.to_json()).unwrap();
    std::fs::write(p(&dir, "plain.json"), plain.to_json()).unwrap();
    ok(&["quantize", "--in", &p(&dir, "f.fmw"), "--config", &p(&dir, "had.json"), "--out", &p(&dir, "had.fmw")]);
    ok(&["quantize", "--in", &p(&dir, "f.fmw"), "--config", &p(&dir, "plain.json"), "--out", &p(&dir, "plain.fmw")]);
    let err = |q: &str| report_json(&p(&dir, "f.fmw"), &p(&dir, q), &p(&dir, "had.json"), &fx("prompt.fmw"))["output"]["rel_l2"].as_f64().unwrap();
    let (had, pl) = (err("had.fmw"), err("plain.fmw"));
    assert!(had < pl, "hadamard {had} vs plain {pl}");
}

#[test]
fn dump_pwl_has_eight_rows() {
    let out = stdout(&ok(&["dump-pwl"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "v_lo,slope,intercept,slope_code,intercept_code");
    assert_eq!(lines.len(), 9);
    let j: serde_json::Value = serde_json::from_str(&stdout(&ok(&["dump-pwl", "--json"]))).unwrap();
    assert_eq!(j["segments"].as_array().unwrap().len(), 8);
}

#[test]
fn perf_json_schema_and_breakdown() {
    let v: serde_json::Value = serde_json::from_str(&stdout(&ok(&["perf", "--json", "--power", "9.3"]))).unwrap();
    let u = |k: &str| v[k].as_u64().unwrap_or_else(|| panic!("{k} not an integer"));
    let f = |k: &str| v[k].as_f64().unwrap_or_else(|| panic!("{k} not a number"));
    assert_eq!(u("version"), 1);
    assert_eq!(v["mode"], "decode");
    assert!(v["overlap"].is_boolean());
    assert_eq!(u("tokens"), 1);
    assert_eq!(u("linear") + u("conv") + u("ssm") + u("norm_silu") + u("other"), u("total"));
    assert!(f("seconds") > 0.0 && (2.8..=11.4).contains(&f("tokens_per_s")));
    assert!((f("tokens_per_s_per_w") - f("tokens_per_s") / 9.3).abs() < 1e-12);
    let shares = v["shares"].as_object().unwrap();
    assert_eq!(shares.len(), 5);
    assert!((shares.values().map(|s| s.as_f64().unwrap()).sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(v.as_object().unwrap().len(), 14);

    let text = stdout(&ok(&["perf", "--preset", "mamba2-130m", "--mode", "prefill", "--len", "512"]));
    let cycles = |name: &str| -> u64 {
        text.lines().find(|l| l.split_whitespace().next() == Some(name)).unwrap().split_whitespace().nth(1).unwrap().parse().unwrap()
    };
    let parts: u64 = ["linear", "conv", "ssm", "norm_silu", "other"].iter().map(|n| cycles(n)).sum();
    assert_eq!(parts, cycles("total"));
}

#[test]
fn perf_reads_config_and_hw_files() {
    let dir = TempDir::new().unwrap();
    std::fs::write(p(&dir, "hw.json"), r#"{"freq_mhz": 500}"#).unwrap();
    let base: serde_json::Value = serde_json::from_str(&stdout(&ok(&["perf", "--json", "--config", &fx("tiny.json")]))).unwrap();
    let fast: serde_json::Value = serde_json::from_str(&stdout(&ok(&["perf", "--json", "--config", &fx("tiny.json"), "--hw", &p(&dir, "hw.json")]))).unwrap();
    assert_eq!(base["total"], fast["total"]);
    let r = fast["tokens_per_s"].as_f64().unwrap() / base["tokens_per_s"].as_f64().unwrap();
    assert!((r - 2.0).abs() < 1e-9);
    std::fs::write(p(&dir, "bad.json"), r#"{"nl_lanes": 0}"#).unwrap();
    assert_eq!(qmamba(&["perf", "--hw", &p(&dir, "bad.json")]).status.code(), Some(2));
}

#[test]
fn every_subcommand_is_deterministic_across_threads() {
    let dir = TempDir::new().unwrap();
    let mut seen: Vec<Vec<Vec<u8>>> = Vec::new();
    for threads in ["1", "4", "1"] {
        let q = p(&dir, &format!("q{threads}.fmw"));
        let r = p(&dir, &format!("r{threads}.fmw"));
        let mut outs = Vec::new();
        let o = ok(&["--threads", threads, "quantize", "--in", &fx("tiny_float.fmw"), "--config", &fx("tiny.json"), "--out", &q]);
        outs.push(stdout(&o).lines().filter(|l| !l.starts_with("wrote")).collect::<Vec<_>>().join("\n").into_bytes());
        outs.push(std::fs::read(&q).unwrap());
        let o = ok(&["--threads", threads, "run", "--weights", &q, "--config", &fx("tiny.json"), "--mode", "prefill", "--input", &fx("prompt.fmw"), "--out", &r, "--state-out", &p(&dir, "s.fmw")]);
        outs.push(o.stdout);
        outs.push(std::fs::read(&r).unwrap());
        outs.push(std::fs::read(p(&dir, "s.fmw")).unwrap());
        outs.push(ok(&["--threads", threads, "error-report", "--weights-f", &fx("tiny_float.fmw"), "--weights-q", &q, "--config", &fx("tiny.json"), "--input", &fx("prompt.fmw"), "--json"]).stdout);
        outs.push(ok(&["--threads", threads, "dump-pwl"]).stdout);
        outs.push(ok(&["--threads", threads, "perf", "--json", "--mode", "prefill"]).stdout);
        seen.push(outs);
    }
    assert_eq!(seen[0], seen[1]);
    assert_eq!(seen[0], seen[2]);
}

