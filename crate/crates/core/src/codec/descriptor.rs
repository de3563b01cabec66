//! Row-wise RLE descriptor sequences: the text form of a segmentation mask.

use serde::{Deserialize, Serialize};

use crate::codec::labels::{LabelSet, Mask};
use crate::error::{Error, Result};

/// One run of identical labels within a single grid row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub label: u32,
    pub count: u32,
}

/// Run-length encoding of an N-by-N label grid, row by row.
///
/// Invariants: counts sum to N*N, no run crosses a row boundary, and
/// consecutive runs within a row carry different labels (runs are maximal).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorSequence {
    grid_n: usize,
    runs: Vec<Run>,
}

impl DescriptorSequence {
    pub fn new(grid_n: usize, runs: Vec<Run>) -> Result<Self> {
        let seq = DescriptorSequence { grid_n, runs };
        seq.validate()?;
        Ok(seq)
    }

    /// Build from a flat row-major grid of cell labels, producing maximal runs.
    pub fn from_cells(grid_n: usize, cells: &[u32]) -> Result<Self> {
        if grid_n == 0 {
            return Err(Error::DegenerateInput("grid_n must be >= 1".into()));
        }
        if cells.len() != grid_n * grid_n {
            return Err(Error::LengthMismatch {
                expected: grid_n * grid_n,
                actual: cells.len(),
            });
        }
        let mut runs = Vec::new();
        for row in 0..grid_n {
            let cells = &cells[row * grid_n..(row + 1) * grid_n];
            let mut current = Run {
                label: cells[0],
                count: 1,
            };
            for &c in &cells[1..] {
                if c == current.label {
                    current.count += 1;
                } else {
                    runs.push(current);
                    current = Run { label: c, count: 1 };
                }
            }
            runs.push(current);
        }
        Ok(DescriptorSequence { grid_n, runs })
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    /// Expand back to the flat row-major cell grid.
    pub fn to_cells(&self) -> Vec<u32> {
        let mut cells = Vec::with_capacity(self.grid_n * self.grid_n);
        for run in &self.runs {
            for _ in 0..run.count {
                cells.push(run.label);
            }
        }
        cells
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_n == 0 {
            return Err(Error::DegenerateInput("grid_n must be >= 1".into()));
        }
        let n = self.grid_n;
        let total: usize = self.runs.iter().map(|r| r.count as usize).sum();
        if total != n * n {
            return Err(Error::LengthMismatch {
                expected: n * n,
                actual: total,
            });
        }
        let mut pos = 0usize;
        let mut prev: Option<(usize, u32)> = None; // (row, label)
        for run in &self.runs {
            if run.count == 0 {
                return Err(Error::DegenerateInput("zero-length run".into()));
            }
            let row = pos / n;
            let end_row = (pos + run.count as usize - 1) / n;
            if row != end_row {
                return Err(Error::Data(format!(
                    "run of {} crosses row boundary at cell {pos}",
                    run.count
                )));
            }
            if let Some((prow, plabel)) = prev {
                if prow == row && plabel == run.label {
                    return Err(Error::Data(format!(
                        "adjacent runs share label {} in row {row}",
                        run.label
                    )));
                }
            }
            prev = Some((row, run.label));
            pos += run.count as usize;
        }
        Ok(())
    }
}

/// Downsample a mask to grid_n x grid_n by per-cell majority vote
/// (ties break toward the lowest label id), then row-wise RLE.
pub fn encode_mask(mask: &Mask, grid_n: usize, labels: &LabelSet) -> Result<DescriptorSequence> {
    if grid_n == 0 {
        return Err(Error::DegenerateInput("grid_n must be >= 1".into()));
    }
    mask.validate_against(labels)?;
    let cells = downsample_majority(mask, grid_n, labels.len());
    DescriptorSequence::from_cells(grid_n, &cells)
}

/// Majority label per grid cell. Cell (gy, gx) owns the pixels that map to
/// it under p -> floor(p*N/extent); when the mask is smaller than the grid
/// and a cell owns no pixels, it takes the nearest pixel at
/// (floor(gy*H/N), floor(gx*W/N)).
pub(crate) fn downsample_majority(mask: &Mask, grid_n: usize, n_labels: usize) -> Vec<u32> {
    let mut counts = vec![0u32; grid_n * grid_n * n_labels];
    for y in 0..mask.height {
        let gy = y * grid_n / mask.height;
        for x in 0..mask.width {
            let gx = x * grid_n / mask.width;
            let label = mask.get(x, y) as usize;
            counts[(gy * grid_n + gx) * n_labels + label] += 1;
        }
    }
    let mut cells = vec![0u32; grid_n * grid_n];
    for gy in 0..grid_n {
        for gx in 0..grid_n {
            let slot = &counts[(gy * grid_n + gx) * n_labels..(gy * grid_n + gx + 1) * n_labels];
            let total: u32 = slot.iter().sum();
            if total == 0 {
                let py = (gy * mask.height / grid_n).min(mask.height - 1);
                let px = (gx * mask.width / grid_n).min(mask.width - 1);
                cells[gy * grid_n + gx] = mask.get(px, py);
                continue;
            }
            let mut best = 0usize;
            for (label, &c) in slot.iter().enumerate() {
                if c > slot[best] {
                    best = label;
                }
            }
            cells[gy * grid_n + gx] = best as u32;
        }
    }
    cells
}

/// Upsample to out_w x out_h by nearest-cell assignment.
pub fn decode_mask(d: &DescriptorSequence, out_w: usize, out_h: usize) -> Result<Mask> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::DegenerateInput(format!(
            "output dimensions {out_w}x{out_h}"
        )));
    }
    d.validate()?;
    let n = d.grid_n();
    let cells = d.to_cells();
    let mut labels = vec![0u32; out_w * out_h];
    for y in 0..out_h {
        let gy = y * n / out_h;
        for x in 0..out_w {
            let gx = x * n / out_w;
            labels[y * out_w + x] = cells[gy * n + gx];
        }
    }
    Mask::new(out_w, out_h, labels)
}

/// Runs rendered as `label*count` joined by single spaces, with a bare `|`
/// token between grid rows.
pub fn descriptor_to_text(d: &DescriptorSequence, labels: &LabelSet) -> Result<String> {
    d.validate()?;
    let n = d.grid_n();
    let mut rows: Vec<Vec<String>> = vec![Vec::new(); n];
    let mut pos = 0usize;
    for run in d.runs() {
        let row = pos / n;
        rows[row].push(format!("{}*{}", labels.name(run.label)?, run.count));
        pos += run.count as usize;
    }
    Ok(rows
        .iter()
        .map(|r| r.join(" "))
        .collect::<Vec<_>>()
        .join(" | "))
}

/// Strict inverse of [`descriptor_to_text`].
///
/// Adjacent same-label runs are merged so the result always satisfies the
/// maximal-runs invariant; everything else malformed is an error: unknown
/// labels, non-positive counts, rows not summing to grid_n, wrong row count.
pub fn parse_descriptor_text(
    t: &str,
    grid_n: usize,
    labels: &LabelSet,
) -> Result<DescriptorSequence> {
    if grid_n == 0 {
        return Err(Error::DegenerateInput("grid_n must be >= 1".into()));
    }
    let mut cells: Vec<u32> = Vec::with_capacity(grid_n * grid_n);
    let mut row_fill = 0usize;
    let mut rows_done = 0usize;
    for (token, offset) in tokens_with_offsets(t) {
        if token == "|" {
            if row_fill != grid_n {
                return Err(Error::Parse {
                    offset,
                    message: format!(
                        "row {rows_done} holds {row_fill} cells, expected {grid_n}"
                    ),
                });
            }
            rows_done += 1;
            row_fill = 0;
            continue;
        }
        let (label, count) = parse_run_token(token, offset, labels)?;
        if row_fill + count as usize > grid_n {
            return Err(Error::Parse {
                offset,
                message: format!(
                    "run of {count} overflows row {rows_done} past {grid_n} cells"
                ),
            });
        }
        for _ in 0..count {
            cells.push(label);
        }
        row_fill += count as usize;
    }
    if cells.len() != grid_n * grid_n {
        return Err(Error::LengthMismatch {
            expected: grid_n * grid_n,
            actual: cells.len(),
        });
    }
    if row_fill != grid_n || rows_done != grid_n - 1 {
        return Err(Error::Parse {
            offset: t.len(),
            message: format!("expected {grid_n} rows, found {}", rows_done + 1),
        });
    }
    DescriptorSequence::from_cells(grid_n, &cells)
}

/// What the lenient parser had to fix up.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairReport {
    pub dropped_tokens: usize,
    pub unknown_labels: usize,
    pub padded_cells: usize,
    pub truncated_cells: usize,
}

impl RepairReport {
    pub fn repaired(&self) -> bool {
        self.dropped_tokens > 0
            || self.unknown_labels > 0
            || self.padded_cells > 0
            || self.truncated_cells > 0
    }
}

/// Best-effort parse of raw model output: malformed tokens are dropped,
/// unknown labels become background, and the cell stream is padded or
/// truncated to exactly grid_n^2 before re-rowing. Row separators in the
/// input are ignored; rows are re-derived from the flat cell order.
pub fn parse_descriptor_text_lenient(
    t: &str,
    grid_n: usize,
    labels: &LabelSet,
) -> Result<(DescriptorSequence, RepairReport)> {
    if grid_n == 0 {
        return Err(Error::DegenerateInput("grid_n must be >= 1".into()));
    }
    let want = grid_n * grid_n;
    let mut report = RepairReport::default();
    let mut cells: Vec<u32> = Vec::with_capacity(want);
    for (token, offset) in tokens_with_offsets(t) {
        if token == "|" {
            continue;
        }
        match parse_run_token(token, offset, labels) {
            Ok((label, count)) => {
                for _ in 0..count {
                    if cells.len() == want {
                        report.truncated_cells += 1;
                    } else {
                        cells.push(label);
                    }
                }
            }
            Err(Error::UnknownLabel(_)) => {
                report.unknown_labels += 1;
                if cells.len() < want {
                    cells.push(LabelSet::BACKGROUND);
                }
            }
            Err(_) => report.dropped_tokens += 1,
        }
    }
    while cells.len() < want {
        cells.push(LabelSet::BACKGROUND);
        report.padded_cells += 1;
    }
    let seq = DescriptorSequence::from_cells(grid_n, &cells)?;
    Ok((seq, report))
}

fn tokens_with_offsets(t: &str) -> impl Iterator<Item = (&str, usize)> {
    t.split_whitespace()
        .map(move |tok| (tok, tok.as_ptr() as usize - t.as_ptr() as usize))
}

fn parse_run_token(token: &str, offset: usize, labels: &LabelSet) -> Result<(u32, u32)> {
    let (name, count_text) = token.rsplit_once('*').ok_or(Error::Parse {
        offset,
        message: format!("expected label*count, found {token:?}"),
    })?;
    let count: u32 = count_text.parse().map_err(|_| Error::Parse {
        offset: offset + name.len() + 1,
        message: format!("bad run count {count_text:?}"),
    })?;
    if count == 0 {
        return Err(Error::Parse {
            offset: offset + name.len() + 1,
            message: "run count must be positive".into(),
        });
    }
    let label = labels.id(name)?;
    Ok((label, count))
}
