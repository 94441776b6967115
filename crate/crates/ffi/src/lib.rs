// SPDX-License-Identifier: MIT OR Apache-2.0

//! C ABI for molsae.
//!
//! Every fallible function returns a [`MolsaeStatus`]. On failure the message
//! is kept per thread and read with [`molsae_last_error`]. Models and shards
//! are opaque handles released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use molsae::io::{load_checkpoint, read_shard_data, EmbeddingShard, SaeCheckpoint};
use molsae::sae::{ablate_feature, SparseCode};
use molsae::similarity::{required_sample_size, tanimoto, Fingerprint};
use molsae::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MolsaeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Bridge = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A loaded autoencoder checkpoint.
pub struct MolsaeSae {
    inner: SaeCheckpoint,
}

/// An embedding shard held in memory.
pub struct MolsaeShard {
    inner: EmbeddingShard,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail(MolsaeStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => MolsaeStatus::Io,
            Error::Format { .. } => MolsaeStatus::Format,
            Error::Shape(_) | Error::NonFinite { .. } => MolsaeStatus::Shape,
            e if e.is_bridge() => MolsaeStatus::Bridge,
            _ => MolsaeStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MolsaeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MolsaeStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MolsaeStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(MolsaeStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|e| Fail(MolsaeStatus::InvalidArgument, format!("{what} is not UTF-8: {e}")))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Fail> {
    ptr.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(ptr: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    ptr.write(value);
    Ok(())
}

fn check_width(got: usize, want: usize) -> Result<(), Fail> {
    if got != want {
        return Err(Fail(
            MolsaeStatus::Shape,
            format!("buffer holds {got} values, model width is {want}"),
        ));
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn molsae_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn molsae_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn molsae_sae_load(path: *const c_char, out: *mut *mut MolsaeSae) -> MolsaeStatus {
    guard(|| {
        let path = PathBuf::from(text(path, "path")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = load_checkpoint(&path)?;
        write_out(out, Box::into_raw(Box::new(MolsaeSae { inner })), "out")
    })
}

/// Releases a model handle. NULL is ignored.
///
/// # Safety
/// `sae` must come from [`molsae_sae_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn molsae_sae_free(sae: *mut MolsaeSae) {
    if !sae.is_null() {
        drop(Box::from_raw(sae));
    }
}

/// # Safety
/// `sae` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn molsae_sae_dims(
    sae: *const MolsaeSae,
    d_model: *mut usize,
    dict_size: *mut usize,
    k: *mut usize,
) -> MolsaeStatus {
    guard(|| {
        let cfg = &handle(sae, "sae")?.inner.config;
        write_out(d_model, cfg.d_model, "d_model")?;
        write_out(dict_size, cfg.dict_size, "dict_size")?;
        write_out(k, cfg.k, "k")
    })
}

/// Encodes one raw embedding of `d_model` values. Writes up to `capacity`
/// active features in increasing index order and their count to `*out_len`.
/// If `capacity` is below the model's `k`, returns `BUFFER_TOO_SMALL` with the
/// required capacity in `*out_len`.
///
/// # Safety
/// `x` must hold `d_model` floats; `indices` and `values` must hold `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn molsae_sae_encode(
    sae: *const MolsaeSae,
    x: *const f32,
    d_model: usize,
    indices: *mut u32,
    values: *mut f32,
    capacity: usize,
    out_len: *mut usize,
) -> MolsaeStatus {
    guard(|| {
        let ck = &handle(sae, "sae")?.inner;
        let x = slice(x, d_model, "x")?;
        check_width(x.len(), ck.d_model())?;
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Fail(MolsaeStatus::InvalidArgument, format!("x[{i}] is not finite")));
        }
        if out_len.is_null() {
            return Err(null("out_len"));
        }
        if capacity < ck.config.k {
            out_len.write(ck.config.k);
            return Err(Fail(
                MolsaeStatus::BufferTooSmall,
                format!("capacity {capacity} is below k = {}", ck.config.k),
            ));
        }
        let code = ck.encode_raw(x)?;
        let (idx, val) = (slice_mut(indices, capacity, "indices")?, slice_mut(values, capacity, "values")?);
        idx[..code.len()].copy_from_slice(code.indices());
        val[..code.len()].copy_from_slice(code.values());
        out_len.write(code.len());
        Ok(())
    })
}

unsafe fn read_code(ck: &SaeCheckpoint, indices: *const u32, values: *const f32, len: usize) -> Result<SparseCode<f32>, Fail> {
    let idx = slice(indices, len, "indices")?;
    let val = slice(values, len, "values")?;
    Ok(SparseCode::new(ck.config.dict_size, idx.iter().copied().zip(val.iter().copied()).collect())?)
}

fn decode_into(ck: &SaeCheckpoint, code: &SparseCode<f32>, out: &mut [f32]) -> Result<(), Fail> {
    check_width(out.len(), ck.d_model())?;
    out.copy_from_slice(&ck.decode_raw(code)?);
    Ok(())
}

/// Decodes a sparse code back to the raw embedding scale.
///
/// # Safety
/// `indices` and `values` must hold `len` elements; `out` must hold `d_model` floats.
#[no_mangle]
pub unsafe extern "C" fn molsae_sae_decode(
    sae: *const MolsaeSae,
    indices: *const u32,
    values: *const f32,
    len: usize,
    out: *mut f32,
    d_model: usize,
) -> MolsaeStatus {
    guard(|| {
        let ck = &handle(sae, "sae")?.inner;
        let code = read_code(ck, indices, values, len)?;
        decode_into(ck, &code, slice_mut(out, d_model, "out")?)
    })
}

/// Decodes the code with `feature` set to zero. A feature absent from the
/// code gives the plain decode.
///
/// # Safety
/// Same contract as [`molsae_sae_decode`].
#[no_mangle]
pub unsafe extern "C" fn molsae_sae_ablate(
    sae: *const MolsaeSae,
    indices: *const u32,
    values: *const f32,
    len: usize,
    feature: u32,
    out: *mut f32,
    d_model: usize,
) -> MolsaeStatus {
    guard(|| {
        let ck = &handle(sae, "sae")?.inner;
        if feature as usize >= ck.config.dict_size {
            return Err(Fail(
                MolsaeStatus::InvalidArgument,
                format!("feature {feature} out of range for dictionary of {}", ck.config.dict_size),
            ));
        }
        let code = read_code(ck, indices, values, len)?;
        decode_into(ck, &ablate_feature(&code, feature), slice_mut(out, d_model, "out")?)
    })
}

/// Reads an embedding shard (without its manifest) into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn molsae_shard_open(path: *const c_char, out: *mut *mut MolsaeShard) -> MolsaeStatus {
    guard(|| {
        let path = PathBuf::from(text(path, "path")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = read_shard_data(&path)?;
        write_out(out, Box::into_raw(Box::new(MolsaeShard { inner })), "out")
    })
}

/// Releases a shard handle. NULL is ignored.
///
/// # Safety
/// `shard` must come from [`molsae_shard_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn molsae_shard_free(shard: *mut MolsaeShard) {
    if !shard.is_null() {
        drop(Box::from_raw(shard));
    }
}

/// # Safety
/// `shard` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn molsae_shard_dims(shard: *const MolsaeShard, count: *mut usize, d_model: *mut usize) -> MolsaeStatus {
    guard(|| {
        let s = &handle(shard, "shard")?.inner;
        write_out(count, s.count(), "count")?;
        write_out(d_model, s.d_model(), "d_model")
    })
}

/// Copies row `row` into `out`.
///
/// # Safety
/// `out` must hold `d_model` floats.
#[no_mangle]
pub unsafe extern "C" fn molsae_shard_row(shard: *const MolsaeShard, row: usize, out: *mut f32, d_model: usize) -> MolsaeStatus {
    guard(|| {
        let s = &handle(shard, "shard")?.inner;
        if row >= s.count() {
            return Err(Fail(
                MolsaeStatus::InvalidArgument,
                format!("row {row} out of range for {} rows", s.count()),
            ));
        }
        let out = slice_mut(out, d_model, "out")?;
        check_width(out.len(), s.d_model())?;
        out.copy_from_slice(s.row(row));
        Ok(())
    })
}

/// Tanimoto similarity of two fingerprints given as set-bit indices
/// (any order, duplicates allowed) over `nbits` bits.
///
/// # Safety
/// `a` and `b` must hold `a_len` and `b_len` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn molsae_tanimoto(
    a: *const u32,
    a_len: usize,
    b: *const u32,
    b_len: usize,
    nbits: u32,
    out: *mut f64,
) -> MolsaeStatus {
    guard(|| {
        let fa = Fingerprint::from_unsorted(nbits, slice(a, a_len, "a")?.to_vec())?;
        let fb = Fingerprint::from_unsorted(nbits, slice(b, b_len, "b")?.to_vec())?;
        write_out(out, tanimoto(&fa, &fb)?, "out")
    })
}

/// Edit distance between two UTF-8 strings, counted in Unicode scalar values.
///
/// # Safety
/// `a` and `b` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn molsae_levenshtein(a: *const c_char, b: *const c_char, out: *mut usize) -> MolsaeStatus {
    guard(|| {
        let d = molsae::analysis::levenshtein(text(a, "a")?, text(b, "b")?);
        write_out(out, d, "out")
    })
}

/// Number of null pairs for margin `epsilon` at critical value `z`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn molsae_required_sample_size(z: f64, sigma: f64, epsilon: f64, out: *mut u64) -> MolsaeStatus {
    guard(|| write_out(out, required_sample_size(z, sigma, epsilon)?, "out"))
}
