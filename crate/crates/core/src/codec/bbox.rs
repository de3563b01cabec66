//! Pixel boxes, their normalized [0, 100] form, and the text round-trip.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, corners inclusive of extents:
/// the full image is (0, 0, w, h).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl BBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Result<Self> {
        if x1 > x2 || y1 > y2 {
            return Err(Error::DegenerateInput(format!(
                "bbox corners inverted: ({x1},{y1})-({x2},{y2})"
            )));
        }
        Ok(BBox { x1, y1, x2, y2 })
    }
}

/// Box with all four coordinates as integers in [0, 100].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedBBox {
    pub x1: u8,
    pub y1: u8,
    pub x2: u8,
    pub y2: u8,
}

impl NormalizedBBox {
    pub fn new(x1: u8, y1: u8, x2: u8, y2: u8) -> Result<Self> {
        for v in [x1, y1, x2, y2] {
            if v > 100 {
                return Err(Error::DegenerateInput(format!(
                    "normalized coordinate {v} outside [0,100]"
                )));
            }
        }
        if x1 > x2 || y1 > y2 {
            return Err(Error::DegenerateInput(format!(
                "normalized corners inverted: ({x1},{y1})-({x2},{y2})"
            )));
        }
        Ok(NormalizedBBox { x1, y1, x2, y2 })
    }
}

/// Map pixel coordinates to the [0, 100] grid: round(100*c/extent),
/// half away from zero, clamped. x uses the image width, y the height.
pub fn normalize_bbox(b: BBox, img_w: u32, img_h: u32) -> Result<NormalizedBBox> {
    if img_w == 0 || img_h == 0 {
        return Err(Error::DegenerateInput(format!(
            "zero-sized image {img_w}x{img_h}"
        )));
    }
    if b.x2 > img_w || b.y2 > img_h {
        return Err(Error::DegenerateInput(format!(
            "bbox ({},{})-({},{}) outside image {img_w}x{img_h}",
            b.x1, b.y1, b.x2, b.y2
        )));
    }
    let norm = |c: u32, extent: u32| -> u8 {
        let v = (100.0 * c as f64 / extent as f64).round();
        v.clamp(0.0, 100.0) as u8
    };
    NormalizedBBox::new(
        norm(b.x1, img_w),
        norm(b.y1, img_h),
        norm(b.x2, img_w),
        norm(b.y2, img_h),
    )
}

/// Exactly `[x1, y1, x2, y2]` with single spaces after commas.
pub fn bbox_to_text(nb: NormalizedBBox) -> String {
    format!("[{}, {}, {}, {}]", nb.x1, nb.y1, nb.x2, nb.y2)
}

/// Find the one `[a, b, c, d]` integer tuple in `t` and validate it.
///
/// Zero tuples, more than one tuple, out-of-range values, and inverted
/// corners are all parse errors carrying the byte offset of the culprit.
pub fn parse_bbox_text(t: &str) -> Result<NormalizedBBox> {
    let bytes = t.as_bytes();
    let mut found: Option<(usize, [u64; 4], [usize; 4])> = None;
    let mut first_failure: Option<Error> = None;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'[' {
            i += 1;
            continue;
        }
        match parse_tuple(bytes, i) {
            Ok((vals, offsets, end)) => {
                if found.is_some() {
                    return Err(Error::Parse {
                        offset: i,
                        message: "multiple bbox tuples found, expected exactly one".into(),
                    });
                }
                found = Some((i, vals, offsets));
                i = end;
            }
            Err(e) => {
                if first_failure.is_none() {
                    first_failure = Some(e);
                }
                i += 1;
            }
        }
    }
    let (_, vals, offsets) = match found {
        Some(f) => f,
        None => {
            return Err(first_failure.unwrap_or(Error::Parse {
                offset: 0,
                message: "no bbox tuple found".into(),
            }))
        }
    };
    for (k, &v) in vals.iter().enumerate() {
        if v > 100 {
            return Err(Error::Parse {
                offset: offsets[k],
                message: format!("coordinate {v} outside [0,100]"),
            });
        }
    }
    if vals[0] > vals[2] || vals[1] > vals[3] {
        return Err(Error::Parse {
            offset: offsets[0],
            message: "inverted bbox corners".into(),
        });
    }
    Ok(NormalizedBBox {
        x1: vals[0] as u8,
        y1: vals[1] as u8,
        x2: vals[2] as u8,
        y2: vals[3] as u8,
    })
}

/// Parse `[n, n, n, n]` starting at the `[` at `start`. Returns the values,
/// the byte offset of each number, and the index one past the `]`.
fn parse_tuple(bytes: &[u8], start: usize) -> Result<([u64; 4], [usize; 4], usize)> {
    let mut pos = start + 1;
    let mut vals = [0u64; 4];
    let mut offsets = [0usize; 4];
    for k in 0..4 {
        while pos < bytes.len() && bytes[pos] == b' ' {
            pos += 1;
        }
        let num_start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == num_start {
            return Err(Error::Parse {
                offset: num_start,
                message: "expected integer".into(),
            });
        }
        // Digits only; cap the length so the value always fits u64.
        if pos - num_start > 9 {
            return Err(Error::Parse {
                offset: num_start,
                message: "integer too long".into(),
            });
        }
        let text = std::str::from_utf8(&bytes[num_start..pos]).expect("ascii digits");
        vals[k] = text.parse().expect("checked digits");
        offsets[k] = num_start;
        while pos < bytes.len() && bytes[pos] == b' ' {
            pos += 1;
        }
        let want = if k == 3 { b']' } else { b',' };
        if pos >= bytes.len() || bytes[pos] != want {
            return Err(Error::Parse {
                offset: pos.min(bytes.len()),
                message: format!("expected '{}'", want as char),
            });
        }
        pos += 1;
    }
    Ok((vals, offsets, pos))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_image_box_hits_extremes() {
        let b = BBox::new(0, 0, 640, 480).unwrap();
        let nb = normalize_bbox(b, 640, 480).unwrap();
        assert_eq!(nb, NormalizedBBox::new(0, 0, 100, 100).unwrap());
    }

    #[test]
    fn exact_arithmetic_case() {
        let b = BBox::new(256, 128, 384, 256).unwrap();
        let nb = normalize_bbox(b, 512, 512).unwrap();
        assert_eq!((nb.x1, nb.y1, nb.x2, nb.y2), (50, 25, 75, 50));
    }

    #[test]
    fn point_box_is_preserved() {
        let b = BBox::new(10, 10, 10, 10).unwrap();
        let nb = normalize_bbox(b, 100, 100).unwrap();
        assert_eq!(nb.x1, nb.x2);
        assert_eq!(nb.y1, nb.y2);
        assert_eq!(nb.x1, 10);
    }

    #[test]
    fn zero_sized_image_rejected() {
        let b = BBox::new(0, 0, 0, 0).unwrap();
        assert!(normalize_bbox(b, 0, 100).is_err());
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        // 100*1/200 = 0.5 rounds up to 1.
        let b = BBox::new(1, 0, 3, 0).unwrap();
        let nb = normalize_bbox(b, 200, 200).unwrap();
        assert_eq!(nb.x1, 1);
        assert_eq!(nb.x2, 2); // 1.5 -> 2
    }

    #[test]
    fn renormalizing_at_100_is_idempotent() {
        for (x1, y1, x2, y2) in [(0, 0, 100, 100), (13, 7, 88, 90), (50, 50, 50, 50)] {
            let b = BBox::new(x1, y1, x2, y2).unwrap();
            let nb = normalize_bbox(b, 100, 100).unwrap();
            assert_eq!((nb.x1, nb.y1, nb.x2, nb.y2), (x1 as u8, y1 as u8, x2 as u8, y2 as u8));
        }
    }

    #[test]
    fn render_parse_round_trip() {
        let nb = NormalizedBBox::new(0, 0, 100, 100).unwrap();
        assert_eq!(bbox_to_text(nb), "[0, 0, 100, 100]");
        assert_eq!(parse_bbox_text(&bbox_to_text(nb)).unwrap(), nb);
    }

    #[test]
    fn parses_tuple_embedded_in_prose() {
        let nb = parse_bbox_text("the object is at [50, 25, 75, 50] roughly").unwrap();
        assert_eq!((nb.x1, nb.y1, nb.x2, nb.y2), (50, 25, 75, 50));
    }

    #[test]
    fn out_of_range_is_a_parse_error_with_offset() {
        let err = parse_bbox_text("[101, 0, 5, 5]").unwrap_err();
        match err {
            Error::Parse { offset, message } => {
                assert_eq!(offset, 1);
                assert!(message.contains("101"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn inverted_corners_rejected() {
        assert!(parse_bbox_text("[50, 0, 10, 5]").is_err());
    }

    #[test]
    fn multiple_tuples_rejected() {
        assert!(parse_bbox_text("[1, 2, 3, 4] and [5, 6, 7, 8]").is_err());
    }

    #[test]
    fn no_tuple_rejected() {
        assert!(parse_bbox_text("no box here").is_err());
    }

    #[test]
    fn normalize_is_monotone_per_coordinate() {
        let mut prev = 0;
        for x in (0..=512).step_by(7) {
            let b = BBox::new(x, 0, 512, 512).unwrap();
            let nb = normalize_bbox(b, 512, 512).unwrap();
            assert!(nb.x1 >= prev);
            prev = nb.x1;
        }
    }
}
