//! C ABI over the protochem core.
//!
//! Every function returns a [`PcStatus`]; results go through out-pointers.
//! On failure the message is kept per thread and read with
//! [`pc_last_error_message`]. Molecules are opaque [`PcMol`] handles freed
//! with [`pc_mol_free`]; strings returned to the caller are freed with
//! [`pc_string_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use protochem::chemsim::{fingerprint, tanimoto, FingerprintKind};
use protochem::datakit::DatasetRecord;
use protochem::grpo::{sampling_weights, TaskMixture};
use protochem::molgraph::{canonicalize_with, parse_smiles, CanonOptions, MolGraph};
use protochem::tasks::{registry, score_answer, ScoringContext};

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PcStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A SMILES string could not be parsed.
    ParseError = 3,
    /// An argument was out of range or inconsistent.
    InvalidArgument = 4,
    /// The computation itself failed, e.g. an unscorable gold answer.
    ComputeError = 5,
    /// An internal panic was caught.
    Panic = 99,
}

/// Opaque molecule handle.
pub struct PcMol {
    graph: MolGraph,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(text).expect("nul bytes removed")));
}

struct Failure(PcStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PcStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            PcStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(PcStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PcStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn mol<'a>(p: *const PcMol, name: &str) -> Result<&'a PcMol, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(PcStatus::NullArgument, format!("{name} is null")))
}

fn out<T>(p: *mut T, name: &str) -> Result<*mut T, Failure> {
    if p.is_null() {
        Err(Failure(PcStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(p)
    }
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(PcStatus::ComputeError, "result contains a nul byte".into()))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses `smiles` into a new handle written to `*out_mol`.
///
/// # Safety
/// `smiles` must be a NUL-terminated string; `out_mol` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_mol_parse(smiles: *const c_char, out_mol: *mut *mut PcMol) -> PcStatus {
    guard(|| {
        let s = text(smiles, "smiles")?;
        let dst = out(out_mol, "out_mol")?;
        let graph = parse_smiles(s).map_err(|e| Failure(PcStatus::ParseError, e.to_string()))?;
        *dst = Box::into_raw(Box::new(PcMol { graph }));
        Ok(())
    })
}

/// Frees a handle from [`pc_mol_parse`]. Null is ignored.
///
/// # Safety
/// `mol` must come from [`pc_mol_parse`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pc_mol_free(mol: *mut PcMol) {
    if !mol.is_null() {
        drop(Box::from_raw(mol));
    }
}

/// Canonical SMILES of `mol`; stereo marks are kept when `keep_stereo` is
/// true. Free the result with [`pc_string_free`].
///
/// # Safety
/// `mol` must be a live handle; `out_smiles` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_mol_canonical_smiles(
    mol: *const PcMol,
    keep_stereo: bool,
    out_smiles: *mut *mut c_char,
) -> PcStatus {
    guard(|| {
        let m = self::mol(mol, "mol")?;
        let dst = out(out_smiles, "out_smiles")?;
        let canon = canonicalize_with(&m.graph, CanonOptions { stereo: keep_stereo });
        *dst = owned_string(canon.text)?;
        Ok(())
    })
}

/// Number of non-hydrogen atoms.
///
/// # Safety
/// `mol` must be a live handle; `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_mol_heavy_atom_count(mol: *const PcMol, out_count: *mut usize) -> PcStatus {
    guard(|| {
        let m = self::mol(mol, "mol")?;
        *out(out_count, "out_count")? = m.graph.heavy_atom_count();
        Ok(())
    })
}

/// Tanimoto similarity of Morgan fingerprints (`radius`, `nbits`).
///
/// # Safety
/// `a` and `b` must be live handles; `out_similarity` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_mol_tanimoto(
    a: *const PcMol,
    b: *const PcMol,
    radius: u32,
    nbits: usize,
    out_similarity: *mut f64,
) -> PcStatus {
    guard(|| {
        let (a, b) = (mol(a, "a")?, mol(b, "b")?);
        let dst = out(out_similarity, "out_similarity")?;
        let kind = FingerprintKind::Morgan { radius, nbits };
        let bad = |e: protochem::chemsim::ChemSimError| Failure(PcStatus::InvalidArgument, e.to_string());
        let fa = fingerprint(&a.graph, kind).map_err(bad)?;
        let fb = fingerprint(&b.graph, kind).map_err(bad)?;
        *dst = tanimoto(&fa, &fb).map_err(bad)?;
        Ok(())
    })
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Scores `answer` against `gold` for a benchmark subtask with the default
/// scoring settings, writing the primary score in [0, 1]. Subtasks whose
/// gold needs structured metadata (open molecule generation, reagent
/// options, per-record yield thresholds) are not reachable through this
/// call. A null `answer` counts as an extraction failure.
///
/// # Safety
/// `task_id` and `gold` must be NUL-terminated strings, `answer` null or
/// NUL-terminated; `out_score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_score_answer(
    task_id: *const c_char,
    gold: *const c_char,
    answer: *const c_char,
    out_score: *mut f64,
) -> PcStatus {
    guard(|| {
        let task = text(task_id, "task_id")?;
        let gold = text(gold, "gold")?;
        let answer = if answer.is_null() { None } else { Some(text(answer, "answer")?) };
        let dst = out(out_score, "out_score")?;
        let spec = registry()
            .get(task)
            .map_err(|e| Failure(PcStatus::InvalidArgument, e.to_string()))?;
        if spec.params.tomg.is_some() {
            return Err(Failure(
                PcStatus::InvalidArgument,
                format!("{task} needs constraint metadata; use the evaluation harness"),
            ));
        }
        let record = DatasetRecord {
            task_id: task.to_string(),
            question_id: "ffi".into(),
            input: String::new(),
            target: gold.to_string(),
            meta: Default::default(),
        };
        let score = score_answer(spec, &record, answer, &ScoringContext::default())
            .map_err(|e| Failure(PcStatus::ComputeError, e.to_string()))?;
        *dst = score.primary;
        Ok(())
    })
}

/// Curriculum sampling weights for `n` tasks with current accuracies
/// `accuracies[0..n]` and sharpness `alpha`, written to `out_weights[0..n]`.
///
/// # Safety
/// `accuracies` must hold `n` readable values and `out_weights` `n`
/// writable ones.
#[no_mangle]
pub unsafe extern "C" fn pc_sampling_weights(
    accuracies: *const f64,
    n: usize,
    alpha: f64,
    out_weights: *mut f64,
) -> PcStatus {
    guard(|| {
        if accuracies.is_null() {
            return Err(Failure(PcStatus::NullArgument, "accuracies is null".into()));
        }
        let dst = out(out_weights, "out_weights")?;
        let s = std::slice::from_raw_parts(accuracies, n).to_vec();
        let ids = (0..n).map(|i| i.to_string()).collect();
        let bad = |e: protochem::grpo::GrpoError| Failure(PcStatus::InvalidArgument, e.to_string());
        let w = sampling_weights(&TaskMixture::new(ids, s, alpha).map_err(bad)?).map_err(bad)?;
        std::slice::from_raw_parts_mut(dst, n).copy_from_slice(&w);
        Ok(())
    })
}
