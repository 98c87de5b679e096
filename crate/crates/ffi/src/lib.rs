//! C ABI for detcal.
//!
//! Every fallible function returns a [`DetcalStatus`]; on failure the
//! message is available from [`detcal_last_error`] on the same thread.
//! Handles (`DetcalConfig`, `DetcalDataset`, `DetcalReport`,
//! `DetcalBdaParams`) are opaque and released with their `_free` function.
//! Zero-length arrays may be passed as null pointers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use detcal::bda::{self, BdaDims, BdaParams};
use detcal::dataio::{self, DatasetIndex, StatsConfig};
use detcal::metrics::EvalParams;
use detcal::rng::PortableRng;
use detcal::tensor::FeatureMap;
use detcal::{AssignmentConfig, BBox, Detection, Error, EvalReport, GroundTruth, Label, TrainingProgress};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetcalStatus {
    Ok = 0,
    NullPointer = 1,
    Dimension = 2,
    Domain = 3,
    Schema = 4,
    Parse = 5,
    Io = 6,
    InvalidUtf8 = 7,
    Panic = 8,
}

/// Axis-aligned box: left, top, width, height in pixels.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetcalBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<DetcalBox> for BBox {
    fn from(b: DetcalBox) -> BBox {
        BBox::new(b.x, b.y, b.w, b.h)
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetcalDetection {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: DetcalBox,
    pub score: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetcalGroundTruth {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: DetcalBox,
}

/// Read-only channel-major `channels x height x width` array.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DetcalTensor {
    pub data: *const f64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Fields addressable through `detcal_config_set` / `detcal_config_get`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetcalConfigField {
    Lambda = 0,
    Alpha0 = 1,
    Gamma = 2,
    AreaScale = 3,
    Floor = 4,
    Base = 5,
    Slope = 6,
}

/// Metrics readable through `detcal_report_metric`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetcalMetric {
    Ap = 0,
    Ap50 = 1,
    Ap75 = 2,
    ApSmall = 3,
    ApMedium = 4,
    ApLarge = 5,
}

pub const DETCAL_LABEL_NEGATIVE: u8 = 0;
pub const DETCAL_LABEL_POSITIVE: u8 = 1;

pub struct DetcalConfig(AssignmentConfig);

pub struct DetcalDataset {
    index: DatasetIndex,
    patient_field: String,
}

pub struct DetcalReport(EvalReport);

pub struct DetcalBdaParams(BdaParams);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure {
    status: DetcalStatus,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Dimension(_) => DetcalStatus::Dimension,
            Error::Domain(_) => DetcalStatus::Domain,
            Error::Schema(_) => DetcalStatus::Schema,
            Error::Parse { .. } | Error::Json(_) => DetcalStatus::Parse,
            Error::Io { .. } => DetcalStatus::Io,
        };
        Failure {
            status,
            message: e.to_string(),
        }
    }
}

fn fail(status: DetcalStatus, message: impl Into<String>) -> Failure {
    Failure {
        status,
        message: message.into(),
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> DetcalStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DetcalStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(e.message);
            e.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            DetcalStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .ok_or_else(|| fail(DetcalStatus::NullPointer, format!("{name} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| fail(DetcalStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(DetcalStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> FfiResult<&'a mut [T]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(DetcalStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn optional_mut<'a, T>(p: *mut T, len: usize) -> Option<&'a mut [T]> {
    (!p.is_null()).then(|| std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(fail(DetcalStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DetcalStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn tensor(t: *const DetcalTensor, name: &str) -> FfiResult<FeatureMap> {
    let t = deref(t, name)?;
    let len = t
        .channels
        .checked_mul(t.height)
        .and_then(|v| v.checked_mul(t.width))
        .ok_or_else(|| fail(DetcalStatus::Dimension, format!("{name} dimensions overflow")))?;
    let data = slice(t.data, len, name)?;
    Ok(FeatureMap::from_vec(t.channels, t.height, t.width, data.to_vec())?)
}

fn into_handle<T>(value: T, out: *mut *mut T) -> FfiResult<()> {
    if out.is_null() {
        return Err(fail(DetcalStatus::NullPointer, "output handle pointer is null"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn detcal_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn detcal_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn detcal_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `a`, `b` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn detcal_iou(a: *const DetcalBox, b: *const DetcalBox, out: *mut f64) -> DetcalStatus {
    guard(|| {
        let (a, b): (BBox, BBox) = ((*deref(a, "a")?).into(), (*deref(b, "b")?).into());
        a.validate()?;
        b.validate()?;
        *deref_mut(out, "out")? = detcal::iou(&a, &b);
        Ok(())
    })
}

unsafe fn config_or_default(cfg: *const DetcalConfig) -> AssignmentConfig {
    cfg.as_ref().map_or_else(AssignmentConfig::default, |c| c.0)
}

/// # Safety
/// `cfg` may be null (defaults); `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn detcal_adaptive_threshold(
    w: f64,
    h: f64,
    cfg: *const DetcalConfig,
    out: *mut f64,
) -> DetcalStatus {
    guard(|| {
        *deref_mut(out, "out")? = detcal::adaptive_threshold(w, h, &config_or_default(cfg))?;
        Ok(())
    })
}

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn detcal_alpha_schedule(progress: f64, alpha0: f64, out: *mut f64) -> DetcalStatus {
    guard(|| {
        *deref_mut(out, "out")? = detcal::alpha_schedule(TrainingProgress::new(progress)?, alpha0)?;
        Ok(())
    })
}

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn detcal_dynamic_iou(
    a_iou: f64,
    r_iou: f64,
    alpha: f64,
    gamma_exp: f64,
    out: *mut f64,
) -> DetcalStatus {
    guard(|| {
        *deref_mut(out, "out")? = detcal::dynamic_iou(a_iou, r_iou, alpha, gamma_exp)?;
        Ok(())
    })
}

/// New configuration holding the default values.
#[no_mangle]
pub extern "C" fn detcal_config_new() -> *mut DetcalConfig {
    Box::into_raw(Box::new(DetcalConfig(AssignmentConfig::default())))
}

/// # Safety
/// `cfg` must be null or a handle from `detcal_config_new`, freed once.
#[no_mangle]
pub unsafe extern "C" fn detcal_config_free(cfg: *mut DetcalConfig) {
    free_handle(cfg);
}

fn config_field(cfg: &mut AssignmentConfig, field: u32) -> FfiResult<&mut f64> {
    Ok(match field {
        0 => &mut cfg.lambda_exp,
        1 => &mut cfg.alpha0,
        2 => &mut cfg.gamma_exp,
        3 => &mut cfg.area_scale,
        4 => &mut cfg.floor,
        5 => &mut cfg.base,
        6 => &mut cfg.slope,
        other => return Err(fail(DetcalStatus::Domain, format!("unknown config field {other}"))),
    })
}

/// Sets one `DetcalConfigField`. The configuration is left unchanged when
/// the new value makes it invalid.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn detcal_config_set(cfg: *mut DetcalConfig, field: u32, value: f64) -> DetcalStatus {
    guard(|| {
        let cfg = deref_mut(cfg, "cfg")?;
        let mut next = cfg.0;
        *config_field(&mut next, field)? = value;
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn detcal_config_get(cfg: *const DetcalConfig, field: u32, out: *mut f64) -> DetcalStatus {
    guard(|| {
        let mut c = deref(cfg, "cfg")?.0;
        *deref_mut(out, "out")? = *config_field(&mut c, field)?;
        Ok(())
    })
}

/// Labels `n_anchors` anchors against `n_gts` ground truths.
///
/// `labels` receives `DETCAL_LABEL_POSITIVE` or `DETCAL_LABEL_NEGATIVE`.
/// The optional outputs receive the matched ground-truth index (-1 for
/// none), the dynamic IoU and the threshold used (NaN for none).
///
/// # Safety
/// Input arrays must hold the stated counts; every non-null output array
/// must hold `n_anchors` entries. `cfg` may be null (defaults).
#[no_mangle]
pub unsafe extern "C" fn detcal_assign(
    anchors: *const DetcalBox,
    regressed: *const DetcalBox,
    n_anchors: usize,
    gts: *const DetcalBox,
    n_gts: usize,
    progress: f64,
    cfg: *const DetcalConfig,
    labels: *mut u8,
    matched_gt: *mut i64,
    diou: *mut f64,
    threshold_used: *mut f64,
) -> DetcalStatus {
    guard(|| {
        let boxes = |p: *const DetcalBox, n, name| -> FfiResult<Vec<BBox>> {
            Ok(slice(p, n, name)?.iter().map(|&b| b.into()).collect())
        };
        let anchors = boxes(anchors, n_anchors, "anchors")?;
        let regressed = boxes(regressed, n_anchors, "regressed")?;
        let gts = boxes(gts, n_gts, "gts")?;
        let labels = slice_mut(labels, n_anchors, "labels")?;
        let result = detcal::assign_labels(
            &anchors,
            &regressed,
            &gts,
            TrainingProgress::new(progress)?,
            &config_or_default(cfg),
        )?;
        for (dst, l) in labels.iter_mut().zip(&result.labels) {
            *dst = match l {
                Label::Positive => DETCAL_LABEL_POSITIVE,
                Label::Negative => DETCAL_LABEL_NEGATIVE,
            };
        }
        if let Some(out) = optional_mut(matched_gt, n_anchors) {
            for (dst, m) in out.iter_mut().zip(&result.matched_gt) {
                *dst = m.map_or(-1, |j| j as i64);
            }
        }
        for (ptr, src) in [(diou, &result.diou), (threshold_used, &result.threshold_used)] {
            if let Some(out) = optional_mut(ptr, n_anchors) {
                for (dst, v) in out.iter_mut().zip(src) {
                    *dst = v.unwrap_or(f64::NAN);
                }
            }
        }
        Ok(())
    })
}

/// Loads a COCO annotation file. `patient_field` names the per-image
/// patient identifier; null means `patient_id`.
///
/// # Safety
/// `path` must be a NUL-terminated string, `patient_field` null or one, and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn detcal_dataset_load(
    path: *const c_char,
    patient_field: *const c_char,
    out: *mut *mut DetcalDataset,
) -> DetcalStatus {
    guard(|| {
        let path = string(path, "path")?;
        let field = if patient_field.is_null() {
            dataio::DEFAULT_PATIENT_FIELD
        } else {
            string(patient_field, "patient_field")?
        };
        let index = dataio::load_coco_with(path, field)?;
        into_handle(
            DetcalDataset {
                index,
                patient_field: field.to_owned(),
            },
            out,
        )
    })
}

/// # Safety
/// `ds` must be null or a handle from `detcal_dataset_load`, freed once.
#[no_mangle]
pub unsafe extern "C" fn detcal_dataset_free(ds: *mut DetcalDataset) {
    free_handle(ds);
}

/// # Safety
/// `ds` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn detcal_dataset_num_images(ds: *const DetcalDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.index.images.len())
}

/// # Safety
/// `ds` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn detcal_dataset_num_annotations(ds: *const DetcalDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.index.annotations.len())
}

/// Area-ratio histogram over `n_edges - 1` bins into `counts`, and the
/// fraction of annotations with ratio at most `small_threshold` (NaN when
/// the dataset has no annotations).
///
/// # Safety
/// `edges` must hold `n_edges` values, `counts` `n_edges - 1` entries;
/// `small_fraction` may be null.
#[no_mangle]
pub unsafe extern "C" fn detcal_dataset_ar_histogram(
    ds: *const DetcalDataset,
    edges: *const f64,
    n_edges: usize,
    small_threshold: f64,
    counts: *mut usize,
    small_fraction: *mut f64,
) -> DetcalStatus {
    guard(|| {
        let ds = deref(ds, "ds")?;
        let cfg = StatsConfig {
            ar_bins: slice(edges, n_edges, "edges")?.to_vec(),
            small_threshold,
        };
        let report = dataio::compute_stats(&ds.index, &cfg)?;
        slice_mut(counts, report.ar_histogram.len(), "counts")?.copy_from_slice(&report.ar_histogram);
        if let Some(f) = small_fraction.as_mut() {
            *f = report.small_fraction.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Patient-level split written as two COCO files.
///
/// # Safety
/// `ds` must be a live handle and both paths NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn detcal_dataset_split(
    ds: *const DetcalDataset,
    train_fraction: f64,
    seed: u64,
    train_path: *const c_char,
    test_path: *const c_char,
) -> DetcalStatus {
    guard(|| {
        let ds = deref(ds, "ds")?;
        let train_path = string(train_path, "train_path")?;
        let test_path = string(test_path, "test_path")?;
        let (train, test) = dataio::patient_split(&ds.index, train_fraction, seed)?;
        dataio::save_coco_with(&train, train_path, &ds.patient_field)?;
        dataio::save_coco_with(&test, test_path, &ds.patient_field)?;
        Ok(())
    })
}

/// COCO-style evaluation. `max_dets` of 0 keeps every detection.
///
/// # Safety
/// Arrays must hold the stated counts and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn detcal_evaluate(
    dets: *const DetcalDetection,
    n_dets: usize,
    gts: *const DetcalGroundTruth,
    n_gts: usize,
    max_dets: usize,
    out: *mut *mut DetcalReport,
) -> DetcalStatus {
    guard(|| {
        let dets: Vec<Detection> = slice(dets, n_dets, "dets")?
            .iter()
            .map(|d| Detection {
                image_id: d.image_id,
                category_id: d.category_id,
                bbox: d.bbox.into(),
                score: d.score,
            })
            .collect();
        let gts: Vec<GroundTruth> = slice(gts, n_gts, "gts")?
            .iter()
            .map(|g| GroundTruth {
                image_id: g.image_id,
                category_id: g.category_id,
                bbox: g.bbox.into(),
            })
            .collect();
        let params = EvalParams {
            max_dets: (max_dets > 0).then_some(max_dets),
        };
        into_handle(DetcalReport(detcal::evaluate_with(&dets, &gts, &params)?), out)
    })
}

/// # Safety
/// `report` must be null or a handle from `detcal_evaluate`, freed once.
#[no_mangle]
pub unsafe extern "C" fn detcal_report_free(report: *mut DetcalReport) {
    free_handle(report);
}

/// Reads one `DetcalMetric`. `*defined` is false (and `*value` NaN) when
/// no ground truth falls in the metric's bucket.
///
/// # Safety
/// `report` must be a live handle; `value` and `defined` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn detcal_report_metric(
    report: *const DetcalReport,
    metric: u32,
    value: *mut f64,
    defined: *mut bool,
) -> DetcalStatus {
    guard(|| {
        let report = &deref(report, "report")?.0;
        let headline = report.headline();
        let (_, v) = headline
            .get(metric as usize)
            .ok_or_else(|| fail(DetcalStatus::Domain, format!("unknown metric {metric}")))?;
        *deref_mut(value, "value")? = v.unwrap_or(f64::NAN);
        *deref_mut(defined, "defined")? = v.is_some();
        Ok(())
    })
}

/// Number of recall sample points in each precision curve.
#[no_mangle]
pub extern "C" fn detcal_recall_points() -> usize {
    detcal::metrics::recall_grid().len()
}

/// Interpolated precision at IoU threshold `0.50 + 0.05 * threshold_index`,
/// one value per recall point.
///
/// # Safety
/// `report` must be a live handle; `out` must hold `len` values and `len`
/// must equal `detcal_recall_points()`.
#[no_mangle]
pub unsafe extern "C" fn detcal_report_precision(
    report: *const DetcalReport,
    threshold_index: usize,
    out: *mut f64,
    len: usize,
) -> DetcalStatus {
    guard(|| {
        let report = &deref(report, "report")?.0;
        if len != report.recall_grid.len() {
            return Err(fail(
                DetcalStatus::Dimension,
                format!("precision buffer holds {len}, need {}", report.recall_grid.len()),
            ));
        }
        let t = *report.iou_thresholds.get(threshold_index).ok_or_else(|| {
            fail(
                DetcalStatus::Domain,
                format!("threshold index {threshold_index} out of range"),
            )
        })?;
        let curve = report
            .pr_curves
            .iter()
            .find(|c| c.iou_threshold == t)
            .ok_or_else(|| fail(DetcalStatus::Domain, "no ground truth: precision undefined"))?;
        slice_mut(out, len, "out")?.copy_from_slice(&curve.precision);
        Ok(())
    })
}

/// The full report as JSON, or null on failure. Free with
/// `detcal_string_free`.
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn detcal_report_to_json(report: *const DetcalReport) -> *mut c_char {
    let mut out = ptr::null_mut();
    let status = guard(|| {
        let report = &deref(report, "report")?.0;
        let text = serde_json::to_string(report).map_err(|e| Failure::from(Error::from(e)))?;
        out = CString::new(text)
            .map_err(|e| fail(DetcalStatus::Schema, e.to_string()))?
            .into_raw();
        Ok(())
    });
    if status == DetcalStatus::Ok {
        out
    } else {
        ptr::null_mut()
    }
}

/// Seeded random attention parameters for the given channel counts.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn detcal_bda_params_random(
    channels: usize,
    scene_channels: usize,
    embed_channels: usize,
    seed: u64,
    out: *mut *mut DetcalBdaParams,
) -> DetcalStatus {
    guard(|| {
        if channels == 0 || scene_channels == 0 || embed_channels == 0 {
            return Err(fail(DetcalStatus::Dimension, "channel counts must be positive"));
        }
        let dims = BdaDims::new(channels, scene_channels, embed_channels, 1, 1);
        let params = BdaParams::random(&dims, &mut PortableRng::seed_from_u64(seed));
        into_handle(DetcalBdaParams(params), out)
    })
}

/// Parameters from their JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn detcal_bda_params_from_json(
    json: *const c_char,
    out: *mut *mut DetcalBdaParams,
) -> DetcalStatus {
    guard(|| {
        let params: BdaParams = serde_json::from_str(string(json, "json")?).map_err(Error::from)?;
        params.validate()?;
        into_handle(DetcalBdaParams(params), out)
    })
}

/// # Safety
/// `params` must be null or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn detcal_bda_params_free(params: *mut DetcalBdaParams) {
    free_handle(params);
}

/// Attention output for pyramid map `p` and backbone map `c5`.
///
/// # Safety
/// Tensor views must describe valid arrays; `out` must hold as many values
/// as `p`.
#[no_mangle]
pub unsafe extern "C" fn detcal_bda_forward(
    params: *const DetcalBdaParams,
    p: *const DetcalTensor,
    c5: *const DetcalTensor,
    out: *mut f64,
) -> DetcalStatus {
    guard(|| {
        let params = &deref(params, "params")?.0;
        let (p, c5) = (tensor(p, "p")?, tensor(c5, "c5")?);
        let fwd = bda::bda_forward(&p, &c5, params)?;
        slice_mut(out, fwd.p_bd.as_slice().len(), "out")?.copy_from_slice(fwd.p_bd.as_slice());
        Ok(())
    })
}

/// Input gradients for upstream gradient `upstream` (same shape as `p`).
///
/// # Safety
/// Tensor views must describe valid arrays; `grad_p` must hold as many
/// values as `p` and `grad_c5` as many as `c5`.
#[no_mangle]
pub unsafe extern "C" fn detcal_bda_grad_input(
    params: *const DetcalBdaParams,
    p: *const DetcalTensor,
    c5: *const DetcalTensor,
    upstream: *const DetcalTensor,
    grad_p: *mut f64,
    grad_c5: *mut f64,
) -> DetcalStatus {
    guard(|| {
        let params = &deref(params, "params")?.0;
        let (p, c5, up) = (tensor(p, "p")?, tensor(c5, "c5")?, tensor(upstream, "upstream")?);
        let (gp, gc) = bda::bda_grad_input(&p, &c5, params, &up)?;
        slice_mut(grad_p, gp.as_slice().len(), "grad_p")?.copy_from_slice(gp.as_slice());
        slice_mut(grad_c5, gc.as_slice().len(), "grad_c5")?.copy_from_slice(gc.as_slice());
        Ok(())
    })
}

/// Compares analytic input gradients with central finite differences.
///
/// # Safety
/// Tensor views must describe valid arrays; `max_rel_error` and `pass` must
/// be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn detcal_bda_grad_check(
    params: *const DetcalBdaParams,
    p: *const DetcalTensor,
    c5: *const DetcalTensor,
    tolerance: f64,
    max_rel_error: *mut f64,
    pass: *mut bool,
) -> DetcalStatus {
    guard(|| {
        let params = &deref(params, "params")?.0;
        let (p, c5) = (tensor(p, "p")?, tensor(c5, "c5")?);
        if tolerance.is_nan() || tolerance <= 0.0 {
            return Err(fail(DetcalStatus::Domain, format!("tolerance {tolerance} must be > 0")));
        }
        let report = bda::grad_check(&p, &c5, params, tolerance)?;
        *deref_mut(max_rel_error, "max_rel_error")? = report.max_rel_error;
        *deref_mut(pass, "pass")? = report.pass;
        Ok(())
    })
}
