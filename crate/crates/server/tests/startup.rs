mod common;

use std::process::Command;

use moodloop_server::build_service;
use moodloop_server::config::ServerConfig;

#[test]
fn config_file_builds_a_working_service() {
    let dir = tempfile::tempdir().unwrap();
    common::write_library(&dir.path().join("music"));
    let (_, digest) = common::frame(10);
    std::fs::write(dir.path().join("labels.txt"), format!("{digest}=sad@0.8\n")).unwrap();
    std::fs::write(
        dir.path().join("moodloop.toml"),
        "library_root = \"music\"\nsmoothing_capacity = 1\n\
         [detector]\nkind = \"fixture\"\nlabels = \"labels.txt\"\n\
         [backend]\nkind = \"fixture\"\nlabels = \"labels.txt\"\n",
    )
    .unwrap();
    let config = ServerConfig::load(&dir.path().join("moodloop.toml")).unwrap();
    let (service, report) = build_service(&config).unwrap();
    assert!(report.missing_moods.is_empty());
    assert_eq!(service.library().track_count(), 11);

    let rt = tokio::runtime::Runtime::new().unwrap();
    let snap = rt.block_on(service.submit_frame("s1", common::frame(10).0, None)).unwrap();
    assert_eq!(snap.mood.unwrap().as_str(), "sad");
}

#[test]
fn missing_library_fails_at_startup() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "library_root = \"nowhere\"\n[backend]\nkind = \"remote\"\nurl = \"http://127.0.0.1:9\"\n").unwrap();
    let config = ServerConfig::load(&dir.path().join("c.toml")).unwrap();
    assert!(build_service(&config).is_err());
}

#[test]
fn cli_reports_errors_with_nonzero_exit() {
    let empty = tempfile::tempdir().unwrap();
    std::fs::write(empty.path().join("labels.txt"), "").unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_moodloop"))
        .args(["analyze", "--backend", "fixture", "--corpus"])
        .arg(empty.path())
        .arg("--out")
        .arg(empty.path().join("r.csv"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("no images"));
}

#[test]
fn cli_digest_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let image = image::RgbImage::from_pixel(32, 32, image::Rgb([10, 245, 5]));
    image.save(dir.path().join("f.png")).unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_moodloop")).arg("digest").arg(dir.path().join("f.png")).output().unwrap();
    assert!(output.status.success());
    let (_, digest) = common::frame(10);
    assert!(String::from_utf8_lossy(&output.stdout).starts_with(&digest));
}
