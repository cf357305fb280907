//! C ABI over `elastic-core`.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns an
//! [`ElasticStatus`]; on failure a one-line description is kept per thread
//! and can be read with [`elastic_last_error`]. Panics never unwind into C,
//! they surface as `ELASTIC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use elastic_core::arch::{preset, ArchSpec};
use elastic_core::checkpoint::Checkpoint;
use elastic_core::cost::{model_cost_at, conv_method_cost, CostQuery, Exact, Method};
use elastic_core::network::Network;
use elastic_core::policy::trace_batch;
use elastic_core::tensor::{Graph, NormMode, Shape, Tensor};
use elastic_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElasticStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Shape = 4,
    DegenerateInput = 5,
    Input = 6,
    Usage = 7,
    Format = 8,
    Io = 9,
    NonFiniteLoss = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElasticMethod {
    Single = 0,
    FeaturePyramidConcat = 1,
    FeaturePyramidAdd = 2,
    FilterPyramidStandard = 3,
    FilterPyramidDilated = 4,
    Elastic = 5,
}

impl From<ElasticMethod> for Method {
    fn from(m: ElasticMethod) -> Method {
        match m {
            ElasticMethod::Single => Method::Single,
            ElasticMethod::FeaturePyramidConcat => Method::FeaturePyramidConcat,
            ElasticMethod::FeaturePyramidAdd => Method::FeaturePyramidAdd,
            ElasticMethod::FilterPyramidStandard => Method::FilterPyramidStandard,
            ElasticMethod::FilterPyramidDilated => Method::FilterPyramidDilated,
            ElasticMethod::Elastic => Method::Elastic,
        }
    }
}

/// Opaque architecture description.
pub struct ElasticArch {
    spec: ArchSpec,
}

/// Opaque network with its parameters.
pub struct ElasticNetwork {
    net: Network,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> ElasticStatus {
    match e {
        Error::Config(_) => ElasticStatus::Config,
        Error::Shape { .. } => ElasticStatus::Shape,
        Error::DegenerateInput { .. } => ElasticStatus::DegenerateInput,
        Error::Input(_) => ElasticStatus::Input,
        Error::Usage(_) => ElasticStatus::Usage,
        Error::Format { .. } => ElasticStatus::Format,
        Error::Io { .. } => ElasticStatus::Io,
        Error::NonFiniteLoss { .. } => ElasticStatus::NonFiniteLoss,
    }
}

enum Fail {
    Core(Error),
    Status(ElasticStatus, String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ElasticStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ElasticStatus::Ok,
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            ElasticStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(ElasticStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Status(ElasticStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn out<T>(p: *mut T, what: &str, value: T) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn elastic_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn elastic_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn elastic_arch_preset(name: *const c_char, out_arch: *mut *mut ElasticArch) -> ElasticStatus {
    guard(|| {
        let spec = preset(text(name, "name")?)?;
        out(out_arch, "out_arch", Box::into_raw(Box::new(ElasticArch { spec })))
    })
}

/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn elastic_arch_from_toml(toml: *const c_char, out_arch: *mut *mut ElasticArch) -> ElasticStatus {
    guard(|| {
        let spec = ArchSpec::from_toml(text(toml, "toml")?)?;
        out(out_arch, "out_arch", Box::into_raw(Box::new(ElasticArch { spec })))
    })
}

/// # Safety
/// `arch` must come from an `elastic_arch_*` constructor or be NULL.
#[no_mangle]
pub unsafe extern "C" fn elastic_arch_free(arch: *mut ElasticArch) {
    if !arch.is_null() {
        drop(Box::from_raw(arch));
    }
}

/// FLOPs and parameters of `arch` at `resolution` (0 for the native size).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn elastic_arch_cost(
    arch: *const ElasticArch,
    resolution: usize,
    flops: *mut u64,
    params: *mut u64,
) -> ElasticStatus {
    guard(|| {
        let spec = &handle(arch, "arch")?.spec;
        let res = if resolution == 0 { spec.input_resolution } else { resolution };
        let report = model_cost_at(spec, res)?;
        out(flops, "flops", report.total_flops)?;
        out(params, "params", report.total_params)
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn elastic_arch_elastic_blocks(arch: *const ElasticArch, count: *mut usize) -> ElasticStatus {
    guard(|| out(count, "count", handle(arch, "arch")?.spec.elastic_block_count()))
}

/// One convolution's cost under `method`. `b` holds `q` branching
/// denominators as `b_num[i] / b_den[i]`; `r` holds `q` scale ratios. Results
/// are exact rationals rounded to double.
///
/// # Safety
/// Array pointers must reference `q` readable elements; outputs must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn elastic_conv_method_cost(
    method: ElasticMethod,
    n: i64,
    c: i64,
    k: i64,
    q: usize,
    b_num: *const i64,
    b_den: *const i64,
    r: *const i64,
    flops: *mut f64,
    params: *mut f64,
) -> ElasticStatus {
    guard(|| {
        if q > 0 && (b_num.is_null() || b_den.is_null() || r.is_null()) {
            return Err(null("branch arrays"));
        }
        let slice = |p: *const i64| if q == 0 { &[][..] } else { std::slice::from_raw_parts(p, q) };
        let (bn, bd, rs) = (slice(b_num), slice(b_den), slice(r));
        if bd.contains(&0) {
            return Err(Error::Input("branching denominators must have non-zero denominators".into()).into());
        }
        let query = CostQuery {
            method: method.into(),
            n: n as i128,
            c: c as i128,
            k: k as i128,
            b: bn.iter().zip(bd).map(|(&a, &b)| Exact::new(a as i128, b as i128)).collect(),
            r: rs.iter().map(|&v| v as i128).collect(),
        };
        let cost = conv_method_cost(&query)?;
        let f = |v: Exact| *v.numer() as f64 / *v.denom() as f64;
        out(flops, "flops", f(cost.flops))?;
        out(params, "params", f(cost.params))
    })
}

/// Builds and initializes a network from `seed`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn elastic_network_build(
    arch: *const ElasticArch,
    seed: u64,
    out_net: *mut *mut ElasticNetwork,
) -> ElasticStatus {
    guard(|| {
        let net = Network::build(&handle(arch, "arch")?.spec, seed)?;
        out(out_net, "out_net", Box::into_raw(Box::new(ElasticNetwork { net })))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out_net` valid.
#[no_mangle]
pub unsafe extern "C" fn elastic_network_load(path: *const c_char, out_net: *mut *mut ElasticNetwork) -> ElasticStatus {
    guard(|| {
        let net = Checkpoint::load(Path::new(text(path, "path")?))?.network()?;
        out(out_net, "out_net", Box::into_raw(Box::new(ElasticNetwork { net })))
    })
}

/// Writes the network's parameters as a checkpoint.
///
/// # Safety
/// `net` must be valid and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn elastic_network_save(net: *const ElasticNetwork, path: *const c_char) -> ElasticStatus {
    guard(|| {
        let net = &handle(net, "net")?.net;
        Checkpoint::of_network(net).save(Path::new(text(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `net` must come from an `elastic_network_*` constructor or be NULL.
#[no_mangle]
pub unsafe extern "C" fn elastic_network_free(net: *mut ElasticNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn elastic_network_num_classes(net: *const ElasticNetwork, classes: *mut usize) -> ElasticStatus {
    guard(|| out(classes, "classes", handle(net, "net")?.net.spec().classifier.num_classes))
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn elastic_network_param_count(net: *const ElasticNetwork, count: *mut u64) -> ElasticStatus {
    guard(|| out(count, "count", handle(net, "net")?.net.param_count()))
}

unsafe fn input_tensor(input: *const f32, n: usize, c: usize, h: usize, w: usize) -> Result<Tensor, Fail> {
    if input.is_null() {
        return Err(null("input"));
    }
    let shape = Shape::new(n, c, h, w);
    let len = shape.numel();
    if len == 0 {
        return Err(Error::Input(format!("input shape {shape} is empty")).into());
    }
    Ok(Tensor::from_vec(shape, std::slice::from_raw_parts(input, len).to_vec())?)
}

fn write_out(dst: *mut f32, capacity: usize, values: &[f32]) -> Result<(), Fail> {
    if dst.is_null() {
        return Err(null("output"));
    }
    if capacity < values.len() {
        return Err(Fail::Status(
            ElasticStatus::BufferTooSmall,
            format!("output holds {capacity} values, {} needed", values.len()),
        ));
    }
    // SAFETY: the caller guarantees `capacity` writable floats.
    unsafe { ptr::copy_nonoverlapping(values.as_ptr(), dst, values.len()) };
    Ok(())
}

/// Eval-mode forward over an NCHW batch; writes `n × classes` logits.
///
/// # Safety
/// `input` must hold `n·c·h·w` floats and `logits` `logits_len` floats.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn elastic_network_forward(
    net: *mut ElasticNetwork,
    input: *const f32,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    logits: *mut f32,
    logits_len: usize,
) -> ElasticStatus {
    guard(|| {
        let net = &mut handle_mut(net, "net")?.net;
        let x = input_tensor(input, n, c, h, w)?;
        let mut g = Graph::new();
        let xv = g.leaf(x);
        let f = net.forward(&mut g, xv, NormMode::Eval, false, false)?;
        write_out(logits, logits_len, g.value(f.logits).data())
    })
}

/// Scale policy scores for an NCHW batch; writes `n × K` row-major scores,
/// K being the network's Elastic block count.
///
/// # Safety
/// `input` must hold `n·c·h·w` floats and `scores` `scores_len` floats.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn elastic_policy_scores(
    net: *mut ElasticNetwork,
    input: *const f32,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    scores: *mut f32,
    scores_len: usize,
) -> ElasticStatus {
    guard(|| {
        let net = &mut handle_mut(net, "net")?.net;
        let x = input_tensor(input, n, c, h, w)?;
        let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let traces = trace_batch(net, &x, &ids, None)?;
        let flat: Vec<f32> = traces.iter().flat_map(|t| t.scores.iter().map(|&s| s as f32)).collect();
        write_out(scores, scores_len, &flat)
    })
}
