//! CSV helpers shared by logs and experiment tables.

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:?}")
    }
}

/// Renders a table with a `# schema=<name>-v1` header line.
pub fn table(schema: &str, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = format!("# schema={schema}-v1\n{}\n", header.join(","));
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
