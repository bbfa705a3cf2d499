use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use chroma_core::colorspace::{rgb_to_lab, to_grayscale, RgbImage};

fn chroma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chroma")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = chroma(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_corpus(dir: &Path, n: usize) {
    fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        RgbImage::from_fn(20, 20, |x, y| [(x * 12 + i * 20) as u8, (y * 12) as u8, (160 - i * 15) as u8])
            .save(&dir.join(format!("{i:02}.png")))
            .unwrap();
    }
}

const CONFIG: &str = "epochs = 1\nbatch_size = 2\nside = 16\nnum_classes = 4\nseed = 3\n";

#[test]
fn train_resume_colorize_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let out = dir.path().join("run");
    write_corpus(&corpus, 5);
    let config = dir.path().join("train.toml");
    fs::write(&config, CONFIG).unwrap();

    ok(&["train", "--config", p(&config), "--corpus", p(&corpus), "--out", p(&out)]);
    let log = fs::read_to_string(out.join("metrics.log")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("step=0 color_error="));

    fs::write(&config, CONFIG.replace("epochs = 1", "epochs = 2")).unwrap();
    let stdout = ok(&["train", "--config", p(&config), "--corpus", p(&corpus), "--out", p(&out), "--resume"]);
    assert!(stdout.contains("trained to step 6 (3 new steps"), "{stdout}");
    let resumed = fs::read_to_string(out.join("metrics.log")).unwrap();
    assert!(resumed.starts_with(&log));
    assert_eq!(resumed.lines().count(), 6);

    let ckpt = out.join("checkpoint.lab");
    let color_in = corpus.join("03.png");
    let gray_in = dir.path().join("gray.png");
    to_grayscale(&RgbImage::load(&color_in).unwrap()).save(&gray_in).unwrap();
    let from_color = dir.path().join("a.png");
    let from_gray = dir.path().join("b.png");
    ok(&["colorize", "--checkpoint", p(&ckpt), "--in", p(&color_in), "--out", p(&from_color)]);
    ok(&["colorize", "--checkpoint", p(&ckpt), "--in", p(&gray_in), "--out", p(&from_gray)]);
    let a = RgbImage::load(&from_color).unwrap();
    assert_eq!((a.width(), a.height()), (20, 20));
    assert_eq!(a, RgbImage::load(&from_gray).unwrap());
    let l_in = rgb_to_lab(&RgbImage::load(&gray_in).unwrap()).l;
    let l_out = rgb_to_lab(&a).l;
    let worst = l_in.iter().zip(&l_out).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 100.0 / 255.0 * 1.5, "luminance drift {worst}");

    fs::write(corpus.join("broken.png"), b"not an image").unwrap();
    let report = dir.path().join("eval.txt");
    let stdout = ok(&["evaluate", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--report", p(&report)]);
    assert!(stdout.starts_with("5 images (1 failed)"), "{stdout}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("eval.json")).unwrap()).unwrap();
    assert_eq!(json["image_count"], 5);
    assert!(fs::read_to_string(&report).unwrap().contains("baseline psnr"));
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.lab");
    let out = chroma(&["colorize", "--checkpoint", p(&missing), "--in", "x.png", "--out", "y.png"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: ") && err.contains("nope.lab"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "lr = -1.0\n").unwrap();
    let out = chroma(&["train", "--config", p(&bad), "--corpus", ".", "--out", p(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("lr must be positive"));
}

#[test]
fn study_report_and_serve() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 4);
    let manifest = dir.path().join("pool.tsv");
    fs::write(
        &manifest,
        "i0\treal\t00.png\ni1\treal\t01.png\ni2\tfull\t02.png\ni3\tfull\t03.png\n",
    )
    .unwrap();
    let store = dir.path().join("store.jsonl");
    let judgment = |img: &str, pos: usize, verdict: &str| {
        format!("{{\"kind\":\"judgment\",\"v\":1,\"session_id\":\"s\",\"image_id\":\"{img}\",\"position\":{pos},\"verdict\":\"{verdict}\"}}\n")
    };
    let mut text = String::from("{\"kind\":\"session\",\"v\":1,\"session_id\":\"s\",\"participant_id\":\"p\",\"image_ids\":[\"i0\",\"i2\",\"i3\",\"i1\"]}\n");
    text += &judgment("i0", 0, "realistic");
    text += &judgment("i2", 1, "unrealistic");
    text += &judgment("i3", 2, "realistic");
    fs::write(&store, text).unwrap();
    let report = ok(&["study-report", "--store", p(&store), "--pool", p(&manifest)]);
    assert!(report.contains("full\t1\t2\t50.00%"), "{report}");
    assert!(report.contains("real\t1\t1\t100.00%"), "{report}");
    assert!(report.contains("abandoned 1"), "{report}");

    let mut child = Command::new(env!("CARGO_BIN_EXE_chroma"))
        .args(["study-serve", "--pool", p(&manifest), "--port", "0", "--k", "2", "--seed", "4"])
        .args(["--store", p(&dir.path().join("live.jsonl"))])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().rsplit("http://").next().unwrap().to_string();
    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(stream, "POST /v1/sessions HTTP/1.1\r\nHost: x\r\nContent-Length: 0\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 201"), "{resp}");
    assert!(resp.contains("\"k\":2"));
    assert!(!resp.contains("real") && !resp.contains("full"));
}
