//! Mask and grayscale image files.
//!
//! Masks use an ASCII grid: a `W H` header line, then H lines of W
//! space-separated label ids. The reader also accepts plain-text portable
//! graymaps (`P2`), treating gray values as label ids. Images reuse the P2
//! layout with gray in [0, 255].

use std::path::Path;

use crate::codec::labels::Mask;
use crate::error::{Error, Result};

pub fn write_mask_file(path: &Path, mask: &Mask) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("{} {}\n", mask.width, mask.height));
    for y in 0..mask.height {
        let row: Vec<String> = (0..mask.width)
            .map(|x| mask.get(x, y).to_string())
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_mask_file(path: &Path) -> Result<Mask> {
    let text = std::fs::read_to_string(path)?;
    parse_grid_text(&text)
}

pub(crate) fn parse_grid_text(text: &str) -> Result<Mask> {
    let mut tokens = text.split_whitespace().peekable();
    // P2 magic means a graymap: skip the magic and the maxval after W/H.
    let is_pgm = tokens.peek() == Some(&"P2");
    if is_pgm {
        tokens.next();
    }
    let mut next_usize = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| Error::Parse {
                offset: 0,
                message: format!("missing {what}"),
            })?
            .parse()
            .map_err(|_| Error::Parse {
                offset: 0,
                message: format!("bad {what}"),
            })
    };
    let width = next_usize("width")?;
    let height = next_usize("height")?;
    if is_pgm {
        next_usize("maxval")?;
    }
    let mut labels = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        labels.push(next_usize("label value")? as u32);
    }
    if tokens.next().is_some() {
        return Err(Error::Parse {
            offset: 0,
            message: "trailing values after grid".into(),
        });
    }
    Mask::new(width, height, labels)
}

/// Grayscale image as a P2 graymap, values clamped to [0, 255].
pub fn write_pgm_image(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    if gray.len() != width * height {
        return Err(Error::ShapeMismatch {
            op: "write_pgm_image",
            lhs: vec![height, width],
            rhs: vec![gray.len()],
        });
    }
    let mut out = String::new();
    out.push_str(&format!("P2\n{width} {height}\n255\n"));
    for y in 0..height {
        let row: Vec<String> = (0..width)
            .map(|x| gray[y * width + x].to_string())
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a P2 graymap (or bare grid) as (width, height, gray values).
pub fn read_pgm_image(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mask = read_mask_file(path)?;
    let gray = mask
        .labels
        .iter()
        .map(|&v| v.min(255) as u8)
        .collect();
    Ok((mask.width, mask.height, gray))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.grid");
        let mask = Mask::new(3, 2, vec![0, 1, 2, 2, 1, 0]).unwrap();
        write_mask_file(&path, &mask).unwrap();
        assert_eq!(read_mask_file(&path).unwrap(), mask);
    }

    #[test]
    fn pgm_accepted_as_mask() {
        let m = parse_grid_text("P2\n2 2\n255\n0 1\n1 0\n").unwrap();
        assert_eq!(m.labels, vec![0, 1, 1, 0]);
    }

    #[test]
    fn wrong_cell_count_rejected() {
        assert!(parse_grid_text("2 2\n0 1 2\n").is_err());
        assert!(parse_grid_text("2 2\n0 1 2 3 4\n").is_err());
    }

    #[test]
    fn pgm_image_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let gray: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
        write_pgm_image(&path, 4, 3, &gray).unwrap();
        let (w, h, back) = read_pgm_image(&path).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(back, gray);
    }
}
