//! C ABI over `raml-core`.
//!
//! Every function returns a [`RamlStatus`]; results go through out-pointers.
//! On failure a message is kept per thread and can be read with
//! [`raml_last_error_message`]. Handles are opaque and must be released with
//! their matching `_free` function.

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use raml_core::counting::edit_ball_count;
use raml_core::divergence::{kl, SimplexPoint};
use raml_core::payoff::{
    edit_distance_weights, enumerate_payoff, enumerate_sequences, Categorical, EditSampler, LengthMode, PayoffSpec,
    WeightMode,
};
use raml_core::rewards::{edit_distance, hamming_distance, RewardKind, Sequence, Vocab};
use raml_core::rng::stream;
use raml_core::Error;

/// Status codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RamlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Output buffer too small; the required length is still reported.
    BufferTooSmall = 3,
    OutOfRange = 4,
    Numeric = 5,
    Panic = 6,
}

/// Weighting of the edit-count histogram.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RamlWeightMode {
    AsWritten = 0,
    Figure1 = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RamlReward {
    NegHamming = 0,
    NegEdit = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RamlLengthMode {
    Fixed = 0,
    UpTo = 1,
}

impl From<RamlWeightMode> for WeightMode {
    fn from(m: RamlWeightMode) -> Self {
        match m {
            RamlWeightMode::AsWritten => WeightMode::AsWritten,
            RamlWeightMode::Figure1 => WeightMode::Figure1,
        }
    }
}

impl From<RamlReward> for RewardKind {
    fn from(r: RamlReward) -> Self {
        match r {
            RamlReward::NegHamming => RewardKind::NegHamming,
            RamlReward::NegEdit => RewardKind::NegEdit,
        }
    }
}

impl From<RamlLengthMode> for LengthMode {
    fn from(m: RamlLengthMode) -> Self {
        match m {
            RamlLengthMode::Fixed => LengthMode::Fixed,
            RamlLengthMode::UpTo => LengthMode::UpTo,
        }
    }
}

/// Stratified edit sampler around a fixed target.
pub struct RamlEditSampler {
    inner: EditSampler,
}

/// Exact payoff distribution over an enumerated output space.
pub struct RamlPayoffTable {
    dist: Categorical<Sequence>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(RamlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::EditOutOfRange { .. } | Error::OracleTooLarge { .. } | Error::SpaceTooLarge { .. } => {
                RamlStatus::OutOfRange
            }
            Error::NonFinite(_) | Error::DegenerateWeights | Error::CertificateFailed(_) | Error::ZeroProbability => {
                RamlStatus::Numeric
            }
            _ => RamlStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> RamlStatus {
    let (status, message) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (RamlStatus::Ok, String::new()),
        Ok(Err(Failure(status, message))) => (status, message),
        Err(_) => (RamlStatus::Panic, "internal panic".to_string()),
    };
    LAST_ERROR.with(|slot| *slot.borrow_mut() = message);
    status
}

fn null() -> Failure {
    Failure(RamlStatus::NullPointer, "null pointer argument".into())
}

unsafe fn slice<'a, T>(data: *const T, len: usize) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null());
    }
    out.write(value);
    Ok(())
}

/// Copies `src` into `dst` when it fits and always reports the needed length.
unsafe fn write_buffer<T: Copy>(src: &[T], dst: *mut T, capacity: usize, out_len: *mut usize) -> Result<(), Failure> {
    write(out_len, src.len())?;
    if src.len() > capacity {
        return Err(Failure(RamlStatus::BufferTooSmall, format!("need {} elements, have {capacity}", src.len())));
    }
    if !src.is_empty() {
        if dst.is_null() {
            return Err(null());
        }
        ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    }
    Ok(())
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating to `capacity`. Returns the full message
/// length without the terminator.
///
/// # Safety
/// `buf` must be null or valid for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn raml_last_error_message(buf: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        if !buf.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Levenshtein distance between two token sequences.
///
/// # Safety
/// `a` and `b` must be valid for their lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn raml_edit_distance(
    a: *const u32,
    a_len: usize,
    b: *const u32,
    b_len: usize,
    out: *mut usize,
) -> RamlStatus {
    guard(|| write(out, edit_distance(slice(a, a_len)?, slice(b, b_len)?)))
}

/// Hamming distance; the sequences must have equal length.
///
/// # Safety
/// `a` and `b` must be valid for `len` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn raml_hamming_distance(
    a: *const u32,
    b: *const u32,
    len: usize,
    out: *mut usize,
) -> RamlStatus {
    guard(|| write(out, hamming_distance(slice(a, len)?, slice(b, len)?)?))
}

/// Natural log of the edit-ball count `c(e, m)` over `v` symbols.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn raml_log_edit_count(e: usize, m: usize, v: usize, out: *mut f64) -> RamlStatus {
    guard(|| write(out, edit_ball_count(e, m, v)?))
}

/// Normalized edit-count weights for `e = 0..=2m`, written to `out`
/// (`2m + 1` values).
///
/// # Safety
/// `out` must be valid for `capacity` doubles; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn raml_edit_weights(
    m: usize,
    v: usize,
    tau: f64,
    mode: RamlWeightMode,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> RamlStatus {
    guard(|| {
        let weights = edit_distance_weights(m, v, tau, mode.into())?;
        write_buffer(weights.probs(), out, capacity, out_len)
    })
}

/// `kl(p‖q)` for two interior points of the simplex of dimension `dim`.
///
/// # Safety
/// `p` and `q` must be valid for `dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn raml_kl(p: *const f64, q: *const f64, dim: usize, out: *mut f64) -> RamlStatus {
    guard(|| {
        let p = SimplexPoint::new(slice(p, dim)?.to_vec())?;
        let q = SimplexPoint::new(slice(q, dim)?.to_vec())?;
        write(out, kl(&p, &q)?)
    })
}

/// Builds an edit sampler for `target` over `vocab_size` symbols.
///
/// # Safety
/// `target` must be valid for `len` tokens; `out` must be writable. The
/// handle must be released with [`raml_edit_sampler_free`].
#[no_mangle]
pub unsafe extern "C" fn raml_edit_sampler_new(
    target: *const u32,
    len: usize,
    vocab_size: usize,
    tau: f64,
    mode: RamlWeightMode,
    out: *mut *mut RamlEditSampler,
) -> RamlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let target = Sequence::from(slice(target, len)?);
        let inner = EditSampler::new(target, Vocab::new(vocab_size)?, tau, mode.into())?;
        write(out, Box::into_raw(Box::new(RamlEditSampler { inner })))
    })
}

/// Draws one output from the stream `(master_seed, trial_index)`. The drawn
/// edit count goes to `out_edits` and the tokens to `out`.
///
/// # Safety
/// `sampler` must come from [`raml_edit_sampler_new`]; `out` must be valid
/// for `capacity` tokens; `out_len` and `out_edits` must be writable.
#[no_mangle]
pub unsafe extern "C" fn raml_edit_sampler_draw(
    sampler: *const RamlEditSampler,
    master_seed: u64,
    trial_index: u64,
    out: *mut u32,
    capacity: usize,
    out_len: *mut usize,
    out_edits: *mut usize,
) -> RamlStatus {
    guard(|| {
        let sampler = sampler.as_ref().ok_or_else(null)?;
        let (edits, draw) = sampler.inner.draw_with_distance(&mut stream(master_seed, trial_index));
        write(out_edits, edits)?;
        write_buffer(&draw.sequence, out, capacity, out_len)
    })
}

/// Releases a sampler. Null is accepted.
///
/// # Safety
/// `sampler` must be null or come from [`raml_edit_sampler_new`] and not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn raml_edit_sampler_free(sampler: *mut RamlEditSampler) {
    if !sampler.is_null() {
        drop(Box::from_raw(sampler));
    }
}

/// Enumerates the payoff distribution around `target` over all outputs of
/// length `len` (or up to `len`).
///
/// # Safety
/// `target` must be valid for `target_len` tokens; `out` must be writable.
/// The handle must be released with [`raml_payoff_table_free`].
#[no_mangle]
pub unsafe extern "C" fn raml_payoff_table_new(
    target: *const u32,
    target_len: usize,
    vocab_size: usize,
    tau: f64,
    reward: RamlReward,
    len: usize,
    len_mode: RamlLengthMode,
    out: *mut *mut RamlPayoffTable,
) -> RamlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let vocab = Vocab::new(vocab_size)?;
        let space = enumerate_sequences(vocab, len, len_mode.into())?;
        let spec = PayoffSpec::new(
            Sequence::from(slice(target, target_len)?),
            tau,
            reward.into(),
            vocab,
            WeightMode::AsWritten,
        )?;
        let dist = enumerate_payoff(&spec, &space)?;
        write(out, Box::into_raw(Box::new(RamlPayoffTable { dist })))
    })
}

/// Number of outputs in the table.
///
/// # Safety
/// `table` must come from [`raml_payoff_table_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn raml_payoff_table_size(table: *const RamlPayoffTable, out: *mut usize) -> RamlStatus {
    guard(|| write(out, table.as_ref().ok_or_else(null)?.dist.len()))
}

/// Output `index` in enumeration order and its probability.
///
/// # Safety
/// `table` must come from [`raml_payoff_table_new`]; `out` must be valid for
/// `capacity` tokens; `out_len` and `out_prob` must be writable.
#[no_mangle]
pub unsafe extern "C" fn raml_payoff_table_entry(
    table: *const RamlPayoffTable,
    index: usize,
    out: *mut u32,
    capacity: usize,
    out_len: *mut usize,
    out_prob: *mut f64,
) -> RamlStatus {
    guard(|| {
        let dist = &table.as_ref().ok_or_else(null)?.dist;
        if index >= dist.len() {
            return Err(Failure(RamlStatus::OutOfRange, format!("index {index} of {}", dist.len())));
        }
        write(out_prob, dist.probs()[index])?;
        write_buffer(&dist.support()[index], out, capacity, out_len)
    })
}

/// Probability of an arbitrary sequence (zero outside the table).
///
/// # Safety
/// `table` must come from [`raml_payoff_table_new`]; `seq` must be valid for
/// `len` tokens; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn raml_payoff_table_prob(
    table: *const RamlPayoffTable,
    seq: *const u32,
    len: usize,
    out: *mut f64,
) -> RamlStatus {
    guard(|| {
        let dist = &table.as_ref().ok_or_else(null)?.dist;
        write(out, dist.prob_of(&Sequence::from(slice(seq, len)?)))
    })
}

/// Releases a payoff table. Null is accepted.
///
/// # Safety
/// `table` must be null or come from [`raml_payoff_table_new`] and not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn raml_payoff_table_free(table: *mut RamlPayoffTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}
