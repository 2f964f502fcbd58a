//! Sliding-window column matching.
//!
//! Around anchor column `j`, a search area of `search_width` columns holds
//! `search_width - window + 1` candidate windows of `window` columns. Each
//! window is collapsed to one `C×H` column by softmax attention over its
//! columns, and the window whose aggregate is most cosine-similar to the
//! anchor wins.
//!
//! Attention logits are `cos(anchor, column) + ln p_k`, where `p_k` is a
//! triangular positional prior over the window (`1, 2, 1` for width 3).
//! Without it, a matching column at the center of one window and at the edge
//! of its neighbour gets the same attention weight in both, and the two
//! aggregates tie up to noise.

use super::{ContrastiveError, Result, NORM_EPS};
use crate::tensor::{Tape, Tensor, Var};

/// One candidate window, after clipping to the map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    /// Window center minus the anchor column.
    pub offset: i64,
    /// First column inside the map.
    pub start: usize,
    pub len: usize,
    /// Window positions cut off on the left by the map border.
    pub clipped_left: usize,
}

/// Candidate windows for anchor column `j` in a map of width `width`, in
/// tie-break order (smaller `|offset|`, then smaller offset). Windows whose
/// center falls outside the map are dropped; the rest are clipped.
pub fn candidate_windows(j: usize, width: usize, search_width: usize, window: usize) -> Vec<Window> {
    let half_area = (search_width / 2) as i64;
    let half_win = (window / 2) as i64;
    let mut out = Vec::new();
    for s in 0..=(search_width.saturating_sub(window)) as i64 {
        let start = j as i64 - half_area + s;
        let center = start + half_win;
        if center < 0 || center >= width as i64 {
            continue;
        }
        let lo = start.max(0);
        let hi = (start + window as i64).min(width as i64);
        out.push(Window {
            offset: center - j as i64,
            start: lo as usize,
            len: (hi - lo) as usize,
            clipped_left: (lo - start) as usize,
        });
    }
    out.sort_by_key(|w| (w.offset.abs(), w.offset));
    out
}

fn positional_prior(window: usize, w: &Window) -> Vec<f64> {
    (w.clipped_left..w.clipped_left + w.len)
        .map(|k| ((k + 1).min(window - k)) as f64)
        .collect()
}

/// Winning window on a tape.
pub struct VarMatch<'t> {
    pub window: Window,
    /// Attention over the window's columns, shape `[len]`.
    pub weights: Var<'t>,
    /// `C×H`
    pub aggregate: Var<'t>,
    pub score: f64,
    pub candidates: usize,
}

fn aggregate_window<'t>(anchor: Var<'t>, search: Var<'t>, win: &Window, window: usize) -> Result<(Var<'t>, Var<'t>)> {
    let s = search.shape();
    let (c, h) = (s[0], s[1]);
    let tape = anchor.tape();
    let mut logits = Vec::with_capacity(win.len);
    for k in 0..win.len {
        let col = search.slice(2, win.start + k, 1)?.reshape(&[c, h])?;
        logits.push(anchor.cosine_sim(col, NORM_EPS)?.reshape(&[1])?);
    }
    let prior = positional_prior(window, win).into_iter().map(f64::ln).collect();
    let weights = Var::concat(&logits, 0)?
        .add(tape.constant(Tensor::vector(prior)?))?
        .softmax(0)?;
    let cols = search.slice(2, win.start, win.len)?.reshape(&[c * h, win.len])?;
    let aggregate = cols.matmul(weights.reshape(&[win.len, 1])?)?.reshape(&[c, h])?;
    Ok((weights, aggregate))
}

/// Differentiable matcher: the winning window is chosen on values, and its
/// aggregate stays on the tape.
pub fn match_window_var<'t>(
    anchor: Var<'t>,
    search: Var<'t>,
    j: usize,
    search_width: usize,
    window: usize,
) -> Result<VarMatch<'t>> {
    let (sa, ss) = (anchor.shape(), search.shape());
    if sa.len() != 2 || ss.len() != 3 || sa[..] != ss[..2] {
        return Err(ContrastiveError::Shape {
            op: "sliding_window_match",
            lhs: sa,
            rhs: ss,
        });
    }
    if window == 0 || window >= search_width {
        return Err(ContrastiveError::Config(format!(
            "need 1 <= window < search_width, got {window} and {search_width}"
        )));
    }
    if j >= ss[2] {
        return Err(ContrastiveError::Config(format!("column {j} outside width {}", ss[2])));
    }
    let windows = candidate_windows(j, ss[2], search_width, window);
    let mut best: Option<VarMatch<'t>> = None;
    for win in &windows {
        let (weights, aggregate) = aggregate_window(anchor, search, win, window)?;
        let score = anchor.cosine_sim(aggregate, NORM_EPS)?.item();
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(VarMatch {
                window: *win,
                weights,
                aggregate,
                score,
                candidates: windows.len(),
            });
        }
    }
    // the window centered on j always survives clipping
    Ok(best.expect("at least one candidate window"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowMatch {
    pub offset: i64,
    pub window: Window,
    pub weights: Vec<f64>,
    /// Cosine similarity of the aggregate to the anchor.
    pub score: f64,
    pub aggregate: Tensor,
    pub candidates_evaluated: usize,
}

/// Matches `anchor` (`C×H`) against the columns of `search` (`C×H×W`)
/// around column `j`.
pub fn sliding_window_match(
    anchor: &Tensor,
    search: &Tensor,
    j: usize,
    search_width: usize,
    window: usize,
) -> Result<WindowMatch> {
    let tape = Tape::new();
    let m = match_window_var(
        tape.constant(anchor.clone()),
        tape.constant(search.clone()),
        j,
        search_width,
        window,
    )?;
    Ok(WindowMatch {
        offset: m.window.offset,
        window: m.window,
        weights: m.weights.value().into_data(),
        score: m.score,
        aggregate: m.aggregate.value(),
        candidates_evaluated: m.candidates,
    })
}
