use crate::autodiff::ParamSet;
use crate::error::{Error, Result};

/// `Σ (n_i / Σ n) · p_i` over the uploads, entry by entry.
///
/// The accumulator starts from the first weighted upload, so a single
/// upload comes back unchanged.
pub fn aggregate(uploads: &[(ParamSet, f64)]) -> Result<ParamSet> {
    let Some((first, _)) = uploads.first() else {
        return Err(Error::Protocol("aggregate called with no uploads".into()));
    };
    let total: f64 = uploads.iter().map(|(_, n)| n).sum();
    if !(total > 0.0) || uploads.iter().any(|(_, n)| !(*n >= 0.0)) {
        return Err(Error::Protocol(format!(
            "aggregation weights must be non-negative with a positive sum, got {:?}",
            uploads.iter().map(|(_, n)| *n).collect::<Vec<_>>()
        )));
    }
    for (ps, _) in &uploads[1..] {
        if !ps.same_layout(first) {
            return Err(Error::Protocol("uploads have different parameter layouts".into()));
        }
    }
    let mut out = first.clone();
    let w0 = uploads[0].1 / total;
    for e in out.entries_mut() {
        e.value = e.value.map(|x| w0 * x);
    }
    for (ps, n) in &uploads[1..] {
        let w = n / total;
        for (acc, e) in out.entries_mut().iter_mut().zip(ps.entries()) {
            acc.value.axpy(w, &e.value)?;
        }
    }
    Ok(out)
}
