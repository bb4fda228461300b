//! C ABI over `stma-core`.
//!
//! Every function returns an [`StmaStatus`]; on failure the message is kept
//! per thread and read with [`stma_last_error`]. Objects cross the boundary
//! as opaque handles that the caller frees with the matching `_free`
//! function. Panics are caught and reported as `STMA_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use stma_core::embedding::Frame;
use stma_core::harness::config::RunConfig;
use stma_core::harness::metrics::{contour_accuracy, default_tolerance, region_similarity};
use stma_core::harness::verify::verify_all;
use stma_core::masks::TargetMasks;
use stma_core::model::ModelWeights;
use stma_core::pipeline::{initialize_memories, segment_frame, Memories};
use stma_core::tensor::{read_tensor_file, write_tensor_file, Tensor};
use stma_core::StmaError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StmaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Contract = 4,
    Parse = 5,
    Io = 6,
    Panic = 7,
}

/// Dense f64 tensor owned by the library.
pub struct StmaTensor {
    inner: Tensor,
}

/// Model weights plus the memory state of one video.
pub struct StmaSegmenter {
    config: RunConfig,
    weights: ModelWeights,
    memories: Option<Memories>,
    next_frame: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &StmaError) -> StmaStatus {
    match err {
        StmaError::Dimension { .. } => StmaStatus::Dimension,
        StmaError::Contract(_) | StmaError::UnknownLeaf { .. } => StmaStatus::Contract,
        StmaError::Parse(_) => StmaStatus::Parse,
        StmaError::Io(_) | StmaError::Image(_) => StmaStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Core(StmaError),
}

impl From<StmaError> for Failure {
    fn from(e: StmaError) -> Self {
        Failure::Core(e)
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> StmaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            StmaStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(&format!("{what} is NULL"));
            StmaStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_last_error(&msg);
            StmaStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            StmaStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn non_null_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn stma_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stma_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `shape[0..rank]` and `data[0..∏shape]` into a new tensor.
///
/// # Safety
/// `shape` must point to `rank` values and `data` to the product of them.
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stma_tensor_new(
    shape: *const usize,
    rank: usize,
    data: *const f64,
    out: *mut *mut StmaTensor,
) -> StmaStatus {
    guard(|| {
        let shape = slice(shape, rank, "shape")?.to_vec();
        let numel = shape.iter().product();
        let data = slice(data, numel, "data")?.to_vec();
        let t = Tensor::new(shape, data)?;
        put(out, Box::into_raw(Box::new(StmaTensor { inner: t })), "out")
    })
}

/// # Safety
/// `tensor` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stma_tensor_free(tensor: *mut StmaTensor) {
    if !tensor.is_null() {
        drop(Box::from_raw(tensor));
    }
}

/// # Safety
/// `tensor` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stma_tensor_rank(tensor: *const StmaTensor, out: *mut usize) -> StmaStatus {
    guard(|| put(out, non_null(tensor, "tensor")?.inner.rank(), "out"))
}

/// # Safety
/// `tensor` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stma_tensor_numel(tensor: *const StmaTensor, out: *mut usize) -> StmaStatus {
    guard(|| put(out, non_null(tensor, "tensor")?.inner.numel(), "out"))
}

/// Writes the dimensions into `dims`, which holds `capacity` entries.
///
/// # Safety
/// `tensor` must be a live handle and `dims` writable for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn stma_tensor_shape(tensor: *const StmaTensor, dims: *mut usize, capacity: usize) -> StmaStatus {
    guard(|| {
        let shape = non_null(tensor, "tensor")?.inner.shape();
        if capacity < shape.len() {
            return Err(Failure::Invalid(format!("shape needs {} slots, got {capacity}", shape.len())));
        }
        if dims.is_null() {
            return Err(Failure::Null("dims"));
        }
        ptr::copy_nonoverlapping(shape.as_ptr(), dims, shape.len());
        Ok(())
    })
}

/// Copies the row-major payload into `data`, which holds `capacity` values.
///
/// # Safety
/// `tensor` must be a live handle and `data` writable for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn stma_tensor_copy_data(
    tensor: *const StmaTensor,
    data: *mut f64,
    capacity: usize,
) -> StmaStatus {
    guard(|| {
        let src = non_null(tensor, "tensor")?.inner.data();
        if capacity < src.len() {
            return Err(Failure::Invalid(format!("payload needs {} values, got {capacity}", src.len())));
        }
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), data, src.len());
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stma_tensor_read(path: *const c_char, out: *mut *mut StmaTensor) -> StmaStatus {
    guard(|| {
        let t = read_tensor_file(Path::new(c_str(path, "path")?))?;
        put(out, Box::into_raw(Box::new(StmaTensor { inner: t })), "out")
    })
}

/// # Safety
/// `tensor` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn stma_tensor_write(tensor: *const StmaTensor, path: *const c_char) -> StmaStatus {
    guard(|| {
        let t = non_null(tensor, "tensor")?;
        write_tensor_file(Path::new(c_str(path, "path")?), &t.inner)?;
        Ok(())
    })
}

/// Creates a segmenter from `key=value` configuration text (NULL for the
/// defaults). Weights come from the `weights` directory when set, and are
/// drawn from `seed` otherwise.
///
/// # Safety
/// `config_text` must be NULL or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stma_segmenter_new(config_text: *const c_char, out: *mut *mut StmaSegmenter) -> StmaStatus {
    guard(|| {
        let config = if config_text.is_null() {
            RunConfig::default()
        } else {
            RunConfig::parse(c_str(config_text, "config_text")?)?
        };
        let weights = match &config.weights {
            Some(dir) => ModelWeights::load(dir)?,
            None => ModelWeights::random(config.model, config.seed)?,
        };
        let seg = StmaSegmenter { config, weights, memories: None, next_frame: 0 };
        put(out, Box::into_raw(Box::new(seg)), "out")
    })
}

/// # Safety
/// `segmenter` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stma_segmenter_free(segmenter: *mut StmaSegmenter) {
    if !segmenter.is_null() {
        drop(Box::from_raw(segmenter));
    }
}

/// Frame geometry the segmenter expects.
///
/// # Safety
/// `segmenter` must be a live handle; `height` and `width` writable.
#[no_mangle]
pub unsafe extern "C" fn stma_segmenter_geometry(
    segmenter: *const StmaSegmenter,
    height: *mut usize,
    width: *mut usize,
) -> StmaStatus {
    guard(|| {
        let cfg = &non_null(segmenter, "segmenter")?.weights.config;
        put(height, cfg.height, "height")?;
        put(width, cfg.width, "width")
    })
}

fn frame_from(seg: &StmaSegmenter, rgb: &[u8], height: usize, width: usize) -> Result<Frame, Failure> {
    let cfg = &seg.weights.config;
    if (height, width) != (cfg.height, cfg.width) {
        return Err(Failure::Invalid(format!(
            "frame is {height}x{width}, the model expects {}x{}",
            cfg.height, cfg.width
        )));
    }
    Ok(Frame::from_rgb8(height, width, rgb)?)
}

/// Starts a video: `rgb` is `height·width·3` interleaved bytes and `ids`
/// holds one target ID per pixel (0 is background, at most `targets`).
/// Any previous video state is discarded.
///
/// # Safety
/// `rgb` and `ids` must hold the stated number of bytes.
#[no_mangle]
pub unsafe extern "C" fn stma_segmenter_init(
    segmenter: *mut StmaSegmenter,
    rgb: *const u8,
    ids: *const u8,
    height: usize,
    width: usize,
    targets: usize,
) -> StmaStatus {
    guard(|| {
        let seg = non_null_mut(segmenter, "segmenter")?;
        let frame = frame_from(seg, slice(rgb, height * width * 3, "rgb")?, height, width)?;
        let mask = TargetMasks::new(height, width, targets, slice(ids, height * width, "ids")?.to_vec())?;
        seg.memories = Some(initialize_memories(&frame, &mask, &seg.weights, &seg.config.pipeline)?);
        seg.next_frame = 1;
        Ok(())
    })
}

/// Segments the next frame and writes one ID per pixel into `ids_out`.
///
/// # Safety
/// `rgb` must hold `height·width·3` bytes and `ids_out` be writable for
/// `height·width` bytes.
#[no_mangle]
pub unsafe extern "C" fn stma_segmenter_step(
    segmenter: *mut StmaSegmenter,
    rgb: *const u8,
    height: usize,
    width: usize,
    ids_out: *mut u8,
) -> StmaStatus {
    guard(|| {
        let seg = non_null_mut(segmenter, "segmenter")?;
        let frame = frame_from(seg, slice(rgb, height * width * 3, "rgb")?, height, width)?;
        if ids_out.is_null() {
            return Err(Failure::Null("ids_out"));
        }
        let idx = seg.next_frame;
        let mem = seg
            .memories
            .as_mut()
            .ok_or_else(|| Failure::Invalid("segmenter has no video; call stma_segmenter_init first".into()))?;
        let out = segment_frame(&frame, idx, mem, &seg.weights, &seg.config.pipeline)?;
        ptr::copy_nonoverlapping(out.masks.ids().as_ptr(), ids_out, height * width);
        seg.next_frame += 1;
        Ok(())
    })
}

/// Sizes of both memory banks after the last call.
///
/// # Safety
/// `segmenter` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn stma_segmenter_memory_sizes(
    segmenter: *const StmaSegmenter,
    spatial: *mut usize,
    temporal: *mut usize,
) -> StmaStatus {
    guard(|| {
        let seg = non_null(segmenter, "segmenter")?;
        let (s, t) = seg.memories.as_ref().map_or((0, 0), |m| (m.spatial.len(), m.temporal.len()));
        put(spatial, s, "spatial")?;
        put(temporal, t, "temporal")
    })
}

unsafe fn mask_pair(
    pred: *const u8,
    gt: *const u8,
    height: usize,
    width: usize,
    target: usize,
) -> Result<(TargetMasks, TargetMasks), Failure> {
    let n = height * width;
    let mk = |ids: &[u8]| -> Result<TargetMasks, Failure> {
        let hi = ids.iter().copied().max().unwrap_or(0) as usize;
        Ok(TargetMasks::new(height, width, hi.max(target), ids.to_vec())?)
    };
    Ok((mk(slice(pred, n, "pred")?)?, mk(slice(gt, n, "gt")?)?))
}

/// Region similarity (IoU) of `target` between two ID masks.
///
/// # Safety
/// `pred` and `gt` must hold `height·width` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stma_region_similarity(
    pred: *const u8,
    gt: *const u8,
    height: usize,
    width: usize,
    target: usize,
    out: *mut f64,
) -> StmaStatus {
    guard(|| {
        let (p, g) = mask_pair(pred, gt, height, width, target)?;
        put(out, region_similarity(&p, &g, target)?, "out")
    })
}

/// Boundary F-measure of `target`; `tolerance` 0 selects the default.
///
/// # Safety
/// `pred` and `gt` must hold `height·width` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stma_contour_accuracy(
    pred: *const u8,
    gt: *const u8,
    height: usize,
    width: usize,
    target: usize,
    tolerance: usize,
    out: *mut f64,
) -> StmaStatus {
    guard(|| {
        let (p, g) = mask_pair(pred, gt, height, width, target)?;
        let tol = if tolerance == 0 { default_tolerance(height, width) } else { tolerance };
        put(out, contour_accuracy(&p, &g, target, tol)?, "out")
    })
}

/// Runs the self-check suite and reports how many checks passed.
///
/// # Safety
/// `passed` and `total` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stma_verify(inject_fault: bool, passed: *mut usize, total: *mut usize) -> StmaStatus {
    guard(|| {
        let report = verify_all(inject_fault);
        put(passed, report.checks.iter().filter(|c| c.passed).count(), "passed")?;
        put(total, report.checks.len(), "total")
    })
}
