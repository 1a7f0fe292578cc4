//! Parsers for list-valued flags: `1,2,5`, `0..8`, `0..=8`, or mixtures
//! such as `1..=3,10`.

use std::ops::RangeInclusive;

fn parse_range(part: &str) -> Result<RangeInclusive<u64>, String> {
    let num = |s: &str| s.trim().parse::<u64>().map_err(|e| format!("invalid number {s:?}: {e}"));
    if let Some((a, b)) = part.split_once("..=") {
        return Ok(num(a)?..=num(b)?);
    }
    if let Some((a, b)) = part.split_once("..") {
        let (a, b) = (num(a)?, num(b)?);
        if b <= a {
            return Err(format!("empty range {part:?}"));
        }
        return Ok(a..=b - 1);
    }
    let v = num(part)?;
    Ok(v..=v)
}

pub fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in text.split(',').filter(|p| !p.trim().is_empty()) {
        let range = parse_range(part)?;
        if range.is_empty() {
            return Err(format!("empty range {part:?}"));
        }
        out.extend(range);
    }
    if out.is_empty() {
        return Err("list must be non-empty".into());
    }
    Ok(out)
}

pub fn parse_list(text: &str) -> Result<Vec<usize>, String> {
    parse_seeds(text)?
        .into_iter()
        .map(|v| usize::try_from(v).map_err(|e| e.to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_forms() {
        assert_eq!(parse_list("1,2,5").unwrap(), vec![1, 2, 5]);
        assert_eq!(parse_list("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_list("0..=3").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_list("1..=2,10").unwrap(), vec![1, 2, 10]);
        assert!(parse_list("").is_err());
        assert!(parse_list("3..3").is_err());
        assert!(parse_list("x").is_err());
    }
}
