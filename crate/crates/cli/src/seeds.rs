/// Parses a seed list: `7`, `1,4,9`, `0..10` (exclusive) or `0..=9`, and
/// comma-separated mixtures of those.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |s: &str| s.trim().parse::<u64>().map_err(|_| format!("bad seed `{s}` in `{spec}`"));
        if let Some((lo, hi)) = part.split_once("..=") {
            out.extend(num(lo)?..=num(hi)?);
        } else if let Some((lo, hi)) = part.split_once("..") {
            out.extend(num(lo)?..num(hi)?);
        } else {
            out.push(num(part)?);
        }
    }
    if out.is_empty() {
        return Err(format!("seed list `{spec}` is empty"));
    }
    Ok(out)
}
