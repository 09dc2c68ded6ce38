//! C ABI for the inpainting core.
//!
//! Objects are exposed as opaque handles created by `*_new`/`*_read` functions
//! and released with the matching `*_free`. Every fallible function returns a
//! [`FgdviStatus`]; on failure [`fgdvi_last_error`] describes the cause for the
//! calling thread. Tensors are dense row-major `double` buffers in
//! `frames x channels x height x width` order; masks use one channel with `1`
//! marking missing pixels.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fgdvi::denoiser::DenoiserKind;
use fgdvi::diffusion::{predict_z0, q_sample, NoiseSchedule};
use fgdvi::flow::{default_fill_iterations, read_flo, warp, write_flo, FlowField, FlowSet};
use fgdvi::sampler::{sample_interpolated, sample_vanilla, SamplerConfig};
use fgdvi::Error;
use ndarray::{Array2, Array3, Array4, Axis};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FgdviStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Numeric = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FgdviDenoiser {
    /// Harmonic fill of the condition latents.
    Heuristic = 0,
    /// Exact clean latents supplied by the caller.
    Oracle = 1,
}

/// Noise schedule.
pub struct FgdviSchedule {
    inner: NoiseSchedule,
}

/// `N x C x H x W` tensor of doubles.
pub struct FgdviSequence {
    inner: Array4<f64>,
}

/// Forward and backward flows between consecutive frames.
pub struct FgdviFlowSet {
    inner: FlowSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> FgdviStatus {
    match err {
        Error::Shape { .. } => FgdviStatus::Shape,
        Error::Io(_) | Error::Json(_) | Error::Parse { .. } | Error::MissingFlow { .. } => FgdviStatus::Io,
        Error::Config(_) | Error::InvalidArgument(_) | Error::Timestep { .. } => FgdviStatus::InvalidArgument,
        _ => FgdviStatus::Numeric,
    }
}

struct Failure(FgdviStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(FgdviStatus::NullPointer, format!("{name} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(FgdviStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FgdviStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FgdviStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            FgdviStatus::Panic
        }
    }
}

unsafe fn reference<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller passes either null or a live handle from this library.
    unsafe { p.as_ref() }.ok_or_else(|| null(name))
}

unsafe fn output<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: the caller passes either null or a writable location.
    unsafe { p.as_mut() }.ok_or_else(|| null(name))
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    // SAFETY: the caller guarantees `len` readable doubles at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, name: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    // SAFETY: the caller guarantees `len` writable doubles at `p`.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    // SAFETY: the caller passes a nul-terminated string.
    let s = unsafe { CStr::from_ptr(p) };
    Ok(PathBuf::from(s.to_str().map_err(|_| invalid("path is not valid UTF-8"))?))
}

fn boxed<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    // SAFETY: checked for null by the caller through `output`.
    unsafe { *output(out, "out")? = Box::into_raw(Box::new(value)) };
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        // SAFETY: `p` came from `Box::into_raw` in this library and is freed once.
        drop(unsafe { Box::from_raw(p) });
    }
}

fn count(dims: &[usize]) -> Result<usize, Failure> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| invalid("tensor size overflows"))
}

/// Message of the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn fgdvi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn fgdvi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Linear beta schedule with `steps` steps.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn fgdvi_schedule_new_linear(
    steps: usize,
    beta_min: f64,
    beta_max: f64,
    out: *mut *mut FgdviSchedule,
) -> FgdviStatus {
    guard(|| {
        let inner = NoiseSchedule::linear(steps, beta_min, beta_max)?;
        boxed(out, FgdviSchedule { inner })
    })
}

/// # Safety
/// `schedule` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fgdvi_schedule_free(schedule: *mut FgdviSchedule) {
    unsafe { free(schedule) }
}

/// Cumulative alpha at step `t` (`alpha_0 = 1`).
///
/// # Safety
/// `schedule` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fgdvi_schedule_alpha(schedule: *const FgdviSchedule, t: usize, out: *mut f64) -> FgdviStatus {
    guard(|| {
        let s = unsafe { reference(schedule, "schedule")? };
        *unsafe { output(out, "out")? } = s.inner.alpha(t)?;
        Ok(())
    })
}

/// Creates a sequence, copying `n*c*h*w` doubles from `data`, or zero-filled when `data` is null.
///
/// # Safety
/// `data` must be null or point to `n*c*h*w` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fgdvi_sequence_new(
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: *const f64,
    out: *mut *mut FgdviSequence,
) -> FgdviStatus {
    guard(|| {
        let len = count(&[n, c, h, w])?;
        let inner = if data.is_null() {
            Array4::zeros((n, c, h, w))
        } else {
            let src = unsafe { slice(data, len, "data")? };
            Array4::from_shape_vec((n, c, h, w), src.to_vec()).expect("length checked")
        };
        boxed(out, FgdviSequence { inner })
    })
}

/// # Safety
/// `seq` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fgdvi_sequence_free(seq: *mut FgdviSequence) {
    unsafe { free(seq) }
}

/// Writes `[n, c, h, w]` into `shape`.
///
/// # Safety
/// `seq` must be a live handle and `shape` must point to four writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn fgdvi_sequence_shape(seq: *const FgdviSequence, shape: *mut usize) -> FgdviStatus {
    guard(|| {
        let s = unsafe { reference(seq, "seq")? };
        if shape.is_null() {
            return Err(null("shape"));
        }
        // SAFETY: four slots promised by the caller.
        let dst = unsafe { std::slice::from_raw_parts_mut(shape, 4) };
        dst.copy_from_slice(s.inner.shape());
        Ok(())
    })
}

/// Copies the sequence into `buffer`, which must hold exactly `len` doubles.
///
/// # Safety
/// `seq` must be a live handle and `buffer` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fgdvi_sequence_copy(seq: *const FgdviSequence, buffer: *mut f64, len: usize) -> FgdviStatus {
    guard(|| {
        let s = unsafe { reference(seq, "seq")? };
        if len != s.inner.len() {
            return Err(Failure(
                FgdviStatus::Shape,
                format!("buffer holds {len} values, sequence has {}", s.inner.len()),
            ));
        }
        let dst = unsafe { slice_mut(buffer, len, "buffer")? };
        for (d, &v) in dst.iter_mut().zip(s.inner.iter()) {
            *d = v;
        }
        Ok(())
    })
}

/// `sqrt(alpha_t) z0 + sqrt(1 - alpha_t) eps`.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fgdvi_q_sample(
    schedule: *const FgdviSchedule,
    z0: *const FgdviSequence,
    eps: *const FgdviSequence,
    t: usize,
    out: *mut *mut FgdviSequence,
) -> FgdviStatus {
    guard(|| {
        let s = unsafe { reference(schedule, "schedule")? };
        let z0 = unsafe { reference(z0, "z0")? };
        let eps = unsafe { reference(eps, "eps")? };
        let inner = q_sample(&z0.inner, t, &eps.inner, &s.inner)?;
        boxed(out, FgdviSequence { inner })
    })
}

/// Clean-latent estimate from a noisy latent and its predicted noise.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fgdvi_predict_z0(
    schedule: *const FgdviSchedule,
    z_t: *const FgdviSequence,
    eps: *const FgdviSequence,
    t: usize,
    out: *mut *mut FgdviSequence,
) -> FgdviStatus {
    guard(|| {
        let s = unsafe { reference(schedule, "schedule")? };
        let z = unsafe { reference(z_t, "z_t")? };
        let eps = unsafe { reference(eps, "eps")? };
        let inner = predict_z0(&z.inner, &eps.inner, t, &s.inner)?;
        boxed(out, FgdviSequence { inner })
    })
}

/// Flow set of `frames - 1` pairs at `h x w`.
///
/// `forward` and `backward` each hold `(frames - 1) * 2 * h * w` doubles laid
/// out as `[pair][u, v][y][x]`; both null gives zero flow.
///
/// # Safety
/// Buffers must be null or hold the stated number of doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fgdvi_flowset_new(
    frames: usize,
    h: usize,
    w: usize,
    forward: *const f64,
    backward: *const f64,
    out: *mut *mut FgdviFlowSet,
) -> FgdviStatus {
    guard(|| {
        if frames == 0 {
            return Err(invalid("a flow set needs at least one frame"));
        }
        let pairs = frames - 1;
        let len = count(&[pairs, 2, h, w])?;
        let inner = if forward.is_null() && backward.is_null() {
            FlowSet::zeros(frames, h, w)
        } else {
            let read = |buf: &[f64]| -> Vec<FlowField> {
                let a = ndarray::ArrayView4::from_shape((pairs, 2, h, w), buf).expect("length checked");
                a.outer_iter()
                    .map(|p| FlowField {
                        u: p.index_axis(Axis(0), 0).to_owned(),
                        v: p.index_axis(Axis(0), 1).to_owned(),
                    })
                    .collect()
            };
            let f = unsafe { slice(forward, len, "forward")? };
            let b = unsafe { slice(backward, len, "backward")? };
            FlowSet::new(read(f), read(b))?
        };
        boxed(out, FgdviFlowSet { inner })
    })
}

/// # Safety
/// `flows` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fgdvi_flowset_free(flows: *mut FgdviFlowSet) {
    unsafe { free(flows) }
}

/// Runs DDIM sampling from `z_t`; `flows` non-null and `interp_steps > 0` enables
/// flow-guided interpolation for the first `interp_steps` steps.
///
/// `clean` is required by the oracle denoiser and ignored otherwise.
/// `frame_denoisings` (nullable) receives the number of per-frame denoiser evaluations.
///
/// # Safety
/// Handles must be live or null where allowed; `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn fgdvi_sample(
    schedule: *const FgdviSchedule,
    z_t: *const FgdviSequence,
    z_phi: *const FgdviSequence,
    mask: *const FgdviSequence,
    flows: *const FgdviFlowSet,
    denoiser: FgdviDenoiser,
    clean: *const FgdviSequence,
    interp_steps: usize,
    seed: u64,
    out: *mut *mut FgdviSequence,
    frame_denoisings: *mut usize,
) -> FgdviStatus {
    guard(|| {
        let s = unsafe { reference(schedule, "schedule")? };
        let z_t = unsafe { reference(z_t, "z_t")? };
        let z_phi = unsafe { reference(z_phi, "z_phi")? };
        let mask = unsafe { reference(mask, "mask")? };
        let flows = unsafe { flows.as_ref() };
        let (_, _, h, w) = z_t.inner.dim();
        let d = match denoiser {
            FgdviDenoiser::Heuristic => DenoiserKind::Heuristic {
                fill_iters: default_fill_iterations(h, w),
            },
            FgdviDenoiser::Oracle => DenoiserKind::Oracle {
                clean: unsafe { reference(clean, "clean")? }.inner.clone(),
            },
        };
        let config = SamplerConfig {
            steps: s.inner.steps(),
            interp_steps,
            seed,
            ..Default::default()
        };
        let (z0, log) = match flows {
            Some(f) if interp_steps > 0 => {
                sample_interpolated(&z_t.inner, &z_phi.inner, &mask.inner, &f.inner, &d, &s.inner, &config)?
            }
            _ if interp_steps > 0 => return Err(invalid("interp_steps > 0 needs flows")),
            _ => sample_vanilla(&z_t.inner, &z_phi.inner, &mask.inner, &d, &s.inner, &config)?,
        };
        boxed(out, FgdviSequence { inner: z0 })?;
        if let Some(n) = unsafe { frame_denoisings.as_mut() } {
            *n = log.total_frame_denoisings;
        }
        Ok(())
    })
}

/// Backward-warps a `c x h x w` image by the flow `(u, v)` (each `h x w`) into `dst`.
///
/// # Safety
/// `src` and `dst` hold `c*h*w` doubles, `u` and `v` hold `h*w` doubles.
#[no_mangle]
pub unsafe extern "C" fn fgdvi_warp(
    src: *const f64,
    c: usize,
    h: usize,
    w: usize,
    u: *const f64,
    v: *const f64,
    dst: *mut f64,
) -> FgdviStatus {
    guard(|| {
        let len = count(&[c, h, w])?;
        let plane = count(&[h, w])?;
        let img = Array3::from_shape_vec((c, h, w), unsafe { slice(src, len, "src")? }.to_vec()).expect("length checked");
        let flow = FlowField::new(
            Array2::from_shape_vec((h, w), unsafe { slice(u, plane, "u")? }.to_vec()).expect("length checked"),
            Array2::from_shape_vec((h, w), unsafe { slice(v, plane, "v")? }.to_vec()).expect("length checked"),
        )?;
        let warped = warp(img.view(), &flow)?;
        let out = unsafe { slice_mut(dst, len, "dst")? };
        for (d, &x) in out.iter_mut().zip(warped.iter()) {
            *d = x;
        }
        Ok(())
    })
}

type CompareFn = fn(&Array4<f64>, &Array4<f64>, Option<&Array4<f64>>) -> fgdvi::Result<f64>;

fn metric(
    a: *const FgdviSequence,
    b: *const FgdviSequence,
    region: *const FgdviSequence,
    out: *mut f64,
    f: CompareFn,
) -> FgdviStatus {
    guard(|| {
        let a = unsafe { reference(a, "a")? };
        let b = unsafe { reference(b, "b")? };
        let region = unsafe { region.as_ref() }.map(|r| &r.inner);
        *unsafe { output(out, "out")? } = f(&a.inner, &b.inner, region)?;
        Ok(())
    })
}

/// PSNR in dB over `region` (nullable: whole frame), capped at 99.
///
/// # Safety
/// Handles must be live or null where allowed; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fgdvi_psnr(
    a: *const FgdviSequence,
    b: *const FgdviSequence,
    region: *const FgdviSequence,
    out: *mut f64,
) -> FgdviStatus {
    metric(a, b, region, out, fgdvi::metrics::psnr)
}

/// Mean SSIM over `region` (nullable: whole frame).
///
/// # Safety
/// Handles must be live or null where allowed; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fgdvi_ssim(
    a: *const FgdviSequence,
    b: *const FgdviSequence,
    region: *const FgdviSequence,
    out: *mut f64,
) -> FgdviStatus {
    metric(a, b, region, out, fgdvi::metrics::ssim)
}

/// Reads the dimensions of a `.flo` file.
///
/// # Safety
/// `path` is a nul-terminated string; `width` and `height` are writable.
#[no_mangle]
pub unsafe extern "C" fn fgdvi_flo_dims(path: *const c_char, width: *mut usize, height: *mut usize) -> FgdviStatus {
    guard(|| {
        let flow = read_flo(unsafe { self::path(path)? })?;
        let (h, w) = flow.dim();
        *unsafe { output(width, "width")? } = w;
        *unsafe { output(height, "height")? } = h;
        Ok(())
    })
}

/// Reads a `.flo` file into `u` and `v`, each holding `len = width * height` doubles.
///
/// # Safety
/// `path` is a nul-terminated string; `u` and `v` hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fgdvi_flo_read(path: *const c_char, u: *mut f64, v: *mut f64, len: usize) -> FgdviStatus {
    guard(|| {
        let flow = read_flo(unsafe { self::path(path)? })?;
        if flow.u.len() != len {
            return Err(Failure(
                FgdviStatus::Shape,
                format!("buffers hold {len} values, flow has {}", flow.u.len()),
            ));
        }
        let (du, dv) = unsafe { (slice_mut(u, len, "u")?, slice_mut(v, len, "v")?) };
        for ((a, b), (&x, &y)) in du.iter_mut().zip(dv.iter_mut()).zip(flow.u.iter().zip(flow.v.iter())) {
            *a = x;
            *b = y;
        }
        Ok(())
    })
}

/// Writes a `width x height` flow to a `.flo` file.
///
/// # Safety
/// `path` is a nul-terminated string; `u` and `v` hold `width * height` doubles.
#[no_mangle]
pub unsafe extern "C" fn fgdvi_flo_write(
    path: *const c_char,
    u: *const f64,
    v: *const f64,
    width: usize,
    height: usize,
) -> FgdviStatus {
    guard(|| {
        let len = count(&[width, height])?;
        let flow = FlowField::new(
            Array2::from_shape_vec((height, width), unsafe { slice(u, len, "u")? }.to_vec()).expect("length checked"),
            Array2::from_shape_vec((height, width), unsafe { slice(v, len, "v")? }.to_vec()).expect("length checked"),
        )?;
        write_flo(unsafe { self::path(path)? }, &flow)?;
        Ok(())
    })
}
