//! `--marginalize` specs and evidence files.

use pnc::data::{parse_idx_images, read_maybe_gz, IDX_IMAGES_MAGIC};
use pnc::structure::VariableOrder;
use pnc::{PncError, Result};
use std::path::Path;

/// Resolves a spec to a marginalization mask.
///
/// `all`, `none`, `ranks:9-16` (1-based positions in the induced order) or
/// `vars:3,7,10-12` (0-based variable ids). Items may be single numbers or
/// inclusive ranges.
pub fn parse_mask(spec: &str, order: &VariableOrder) -> Result<Vec<bool>> {
    let n = order.len();
    let bad = |m: String| PncError::Input(format!("marginalize spec {spec:?}: {m}"));
    match spec.trim() {
        "all" => return Ok(vec![true; n]),
        "none" | "" => return Ok(vec![false; n]),
        _ => {}
    }
    let (kind, list) = spec
        .split_once(':')
        .ok_or_else(|| bad("expected all, none, ranks:<list> or vars:<list>".into()))?;
    let mut mask = vec![false; n];
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (lo, hi) = match item.split_once('-') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (item, item),
        };
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("{s:?} is not a number")));
        let (lo, hi) = (parse(lo)?, parse(hi)?);
        if lo > hi {
            return Err(bad(format!("empty range {item}")));
        }
        for i in lo..=hi {
            let var = match kind.trim() {
                "ranks" => {
                    if i == 0 || i > n {
                        return Err(bad(format!("rank {i} outside 1..={n}")));
                    }
                    order.var_at(i - 1)
                }
                "vars" => {
                    if i >= n {
                        return Err(bad(format!("variable {i} outside 0..{n}")));
                    }
                    i
                }
                other => return Err(bad(format!("unknown selector {other:?}"))),
            };
            mask[var] = true;
        }
    }
    Ok(mask)
}

/// Reads evidence records: an IDX image file (optionally gzipped) or a text
/// file with one record per line, values separated by spaces or commas.
/// `?` stands for a value that will be marginalized.
pub fn read_records(path: &Path, num_vars: usize) -> Result<Vec<Vec<u8>>> {
    let bytes = read_maybe_gz(path)?;
    if bytes.len() >= 4 && u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) == IDX_IMAGES_MAGIC {
        let (count, rows, cols, pixels) = parse_idx_images(&bytes)?;
        if rows * cols != num_vars {
            return Err(PncError::Input(format!(
                "records have {rows}x{cols} values, model has {num_vars} variables"
            )));
        }
        return Ok((0..count).map(|i| pixels[i * num_vars..(i + 1) * num_vars].to_vec()).collect());
    }
    let text = String::from_utf8(bytes)
        .map_err(|e| PncError::Format {
            offset: e.utf8_error().valid_up_to(),
            message: "evidence file is neither IDX nor UTF-8 text".into(),
        })?;
    parse_text_records(&text, num_vars)
}

pub fn parse_text_records(text: &str, num_vars: usize) -> Result<Vec<Vec<u8>>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let record = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                if s == "?" {
                    Ok(0)
                } else {
                    s.parse::<u8>()
                        .map_err(|_| PncError::Input(format!("line {}: bad value {s:?}", i + 1)))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        if record.len() != num_vars {
            return Err(PncError::Input(format!(
                "line {}: {} values, model has {num_vars} variables",
                i + 1,
                record.len()
            )));
        }
        out.push(record);
    }
    Ok(out)
}
