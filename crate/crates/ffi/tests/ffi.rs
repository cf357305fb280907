use std::ffi::{CStr, CString};
use std::ptr;

use elastic_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(elastic_last_error()) }.to_string_lossy().into_owned()
}

fn arch(name: &str) -> *mut ElasticArch {
    let name = CString::new(name).unwrap();
    let mut a = ptr::null_mut();
    assert_eq!(unsafe { elastic_arch_preset(name.as_ptr(), &mut a) }, ElasticStatus::Ok);
    a
}

#[test]
fn preset_cost_and_block_count() {
    let a = arch("resnext50_elastic");
    let (mut flops, mut params, mut blocks) = (0u64, 0u64, 0usize);
    unsafe {
        assert_eq!(elastic_arch_cost(a, 0, &mut flops, &mut params), ElasticStatus::Ok);
        assert_eq!(elastic_arch_elastic_blocks(a, &mut blocks), ElasticStatus::Ok);
        elastic_arch_free(a);
    }
    assert_eq!(blocks, 17);
    assert!((params as f64 / 25.2e6 - 1.0).abs() < 0.02);
    assert!((flops as f64 / 4.2e9 - 1.0).abs() < 0.05);
}

#[test]
fn errors_carry_status_and_message() {
    let name = CString::new("resnext0").unwrap();
    let mut a = ptr::null_mut();
    let status = unsafe { elastic_arch_preset(name.as_ptr(), &mut a) };
    assert_eq!(status, ElasticStatus::Usage);
    assert!(a.is_null());
    assert!(last_error().contains("resnext0"), "{}", last_error());
    let status = unsafe { elastic_arch_preset(ptr::null(), &mut a) };
    assert_eq!(status, ElasticStatus::NullPointer);
    let bad = CString::new("name = 3").unwrap();
    assert_eq!(unsafe { elastic_arch_from_toml(bad.as_ptr(), &mut a) }, ElasticStatus::Config);
    let a = arch("toy_resnext_8");
    let (mut f, mut p) = (0, 0);
    assert_eq!(unsafe { elastic_arch_cost(a, 30, &mut f, &mut p) }, ElasticStatus::Input);
    unsafe { elastic_arch_free(a) };
    // freeing NULL is a no-op
    unsafe {
        elastic_arch_free(ptr::null_mut());
        elastic_network_free(ptr::null_mut());
    }
}

#[test]
fn method_cost_from_c() {
    let (bn, bd, r) = ([2i64, 2], [1i64, 1], [1i64, 2]);
    let (mut flops, mut params) = (0.0, 0.0);
    let status = unsafe {
        elastic_conv_method_cost(
            ElasticMethod::Elastic,
            56,
            64,
            3,
            2,
            bn.as_ptr(),
            bd.as_ptr(),
            r.as_ptr(),
            &mut flops,
            &mut params,
        )
    };
    assert_eq!(status, ElasticStatus::Ok);
    assert_eq!(flops, 56.0 * 56.0 * 64.0 * 9.0 * 5.0 / 8.0);
    assert_eq!(params, 64.0 * 9.0);
    let bad = [3i64, 3];
    let status = unsafe {
        elastic_conv_method_cost(
            ElasticMethod::Elastic,
            56,
            64,
            3,
            2,
            bad.as_ptr(),
            bd.as_ptr(),
            r.as_ptr(),
            &mut flops,
            &mut params,
        )
    };
    assert_eq!(status, ElasticStatus::Input);
}

#[test]
fn network_forward_policy_and_checkpoint() {
    let a = arch("toy_resnext_8_narrow_elastic");
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { elastic_network_build(a, 3, &mut net) }, ElasticStatus::Ok);
    let (mut classes, mut count, mut blocks) = (0usize, 0u64, 0usize);
    unsafe {
        elastic_network_num_classes(net, &mut classes);
        elastic_network_param_count(net, &mut count);
        elastic_arch_elastic_blocks(a, &mut blocks);
    }
    assert_eq!((classes, count), (10, 80_026));
    let input: Vec<f32> = (0..2 * 3 * 32 * 32).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect();
    let mut logits = vec![0.0f32; 2 * classes];
    let status = unsafe { elastic_network_forward(net, input.as_ptr(), 2, 3, 32, 32, logits.as_mut_ptr(), logits.len()) };
    assert_eq!(status, ElasticStatus::Ok);
    assert!(logits.iter().all(|v| v.is_finite()));
    let mut short = vec![0.0f32; 3];
    let status = unsafe { elastic_network_forward(net, input.as_ptr(), 2, 3, 32, 32, short.as_mut_ptr(), 3) };
    assert_eq!(status, ElasticStatus::BufferTooSmall);
    let mut scores = vec![0.0f32; 2 * blocks];
    let status = unsafe { elastic_policy_scores(net, input.as_ptr(), 2, 3, 32, 32, scores.as_mut_ptr(), scores.len()) };
    assert_eq!(status, ElasticStatus::Ok);
    assert_eq!(blocks, 5);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("n.ck").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { elastic_network_save(net, path.as_ptr()) }, ElasticStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { elastic_network_load(path.as_ptr(), &mut loaded) }, ElasticStatus::Ok);
    let mut again = vec![0.0f32; 2 * classes];
    unsafe { elastic_network_forward(loaded, input.as_ptr(), 2, 3, 32, 32, again.as_mut_ptr(), again.len()) };
    assert_eq!(logits, again);
    let missing = CString::new(dir.path().join("none.ck").to_str().unwrap()).unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { elastic_network_load(missing.as_ptr(), &mut none) }, ElasticStatus::Io);
    unsafe {
        elastic_network_free(net);
        elastic_network_free(loaded);
        elastic_arch_free(a);
    }
}

#[test]
fn baseline_network_has_no_policy() {
    let a = arch("toy_resnext_8_narrow");
    let mut net = ptr::null_mut();
    unsafe { elastic_network_build(a, 0, &mut net) };
    let input = vec![0.5f32; 3 * 32 * 32];
    let mut scores = [0.0f32; 4];
    let status = unsafe { elastic_policy_scores(net, input.as_ptr(), 1, 3, 32, 32, scores.as_mut_ptr(), 4) };
    assert_eq!(status, ElasticStatus::Usage);
    unsafe {
        elastic_network_free(net);
        elastic_arch_free(a);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/elastic.h")).unwrap();
    for sym in [
        "elastic_last_error",
        "elastic_arch_preset",
        "elastic_arch_cost",
        "elastic_conv_method_cost",
        "elastic_network_build",
        "elastic_network_forward",
        "elastic_policy_scores",
        "elastic_network_free",
        "ELASTIC_STATUS_BUFFER_TOO_SMALL",
        "typedef struct ElasticNetwork ElasticNetwork",
    ] {
        assert!(header.contains(sym), "{sym}");
    }
    let version = unsafe { CStr::from_ptr(elastic_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

/// Compiles a C client against the generated header and the static library.
#[test]
fn c_client_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    // `cargo test` leaves the archive in deps/; `cargo build` also copies it up a level.
    let deps = exe.parent().unwrap();
    let lib = [deps, deps.parent().unwrap()]
        .iter()
        .map(|d| d.join("libelastic_ffi.a"))
        .find(|p| p.exists())
        .expect("libelastic_ffi.a not built");
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("client");
    let status = std::process::Command::new("cc")
        .arg(manifest.join("tests/c_client.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler is available as cc");
    assert!(status.success());
    let out = std::process::Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "client exited with {:?}", out.status.code());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mut lines = stdout.lines();
    let first: Vec<u64> = lines.next().unwrap().split(' ').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], 17);
    assert_eq!(lines.next(), Some("ok"));
}
