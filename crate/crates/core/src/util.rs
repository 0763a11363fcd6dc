//! Small shared helpers: stable hashing, grid rounding, canonical float text.

/// 64-bit FNV-1a over raw bytes. Used wherever a stable, cross-platform,
/// cross-process hash is required (cache keys, mock outputs, seed chains).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// FNV-1a chained over multiple string parts with a `|` separator, so that
/// `("ab","c")` and `("a","bc")` hash differently.
pub fn fnv1a64_parts(parts: &[&str]) -> u64 {
    let mut hash = fnv1a64(&[]);
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hash ^= u64::from(b'|');
            hash = hash.wrapping_mul(PRIME);
        }
        for &b in part.as_bytes() {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(PRIME);
        }
    }
    hash
}

/// Rounds to 10 decimal places. Grid points are materialized through this so
/// that `min + i*step` accumulates no floating-point drift.
pub fn round10(x: f64) -> f64 {
    let r = (x * 1e10).round() / 1e10;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Canonical text form of a real value: rounded to 10 decimals, trailing
/// zeros trimmed, no exponent. `1.0` renders as `"1"`, `0.60` as `"0.6"`.
pub fn fmt_f64(x: f64) -> String {
    let r = round10(x);
    let mut s = format!("{r:.10}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s
}

/// Applies `f` to every item with up to `parallelism` worker threads,
/// returning results in input order regardless of completion order.
pub fn scoped_map<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if parallelism <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let slots: Vec<std::sync::Mutex<Option<R>>> =
        (0..items.len()).map(|_| std::sync::Mutex::new(None)).collect();
    let cursor = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..parallelism.min(items.len()) {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let result = f(&items[i]);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("worker filled slot"))
        .collect()
}

/// Appends one record per line as JSON.
pub fn append_jsonl<T: serde::Serialize>(
    path: &std::path::Path,
    items: impl IntoIterator<Item = T>,
) -> std::io::Result<()> {
    use std::io::Write;
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    for item in items {
        let line = serde_json::to_string(&item).map_err(std::io::Error::other)?;
        writeln!(file, "{line}")?;
    }
    file.flush()
}

/// Reads a JSONL file, tolerating a truncated final line (the tail a crash
/// mid-append leaves behind). A parse failure anywhere else is an error.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(
    path: &std::path::Path,
) -> std::io::Result<Vec<T>> {
    let raw = match std::fs::read_to_string(path) {
        Ok(raw) => raw,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let lines: Vec<&str> = raw.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<T>(line) {
            Ok(item) => out.push(item),
            Err(e) if i + 1 == lines.len() => {
                log::warn!("ignoring truncated trailing line in {}: {e}", path.display());
            }
            Err(e) => return Err(std::io::Error::other(format!(
                "corrupt line {} in {}: {e}",
                i + 1,
                path.display()
            ))),
        }
    }
    Ok(out)
}

/// Milliseconds since the Unix epoch.
pub fn unix_millis() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv1a64_reference_vectors() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn fnv_parts_separates_boundaries() {
        assert_ne!(fnv1a64_parts(&["ab", "c"]), fnv1a64_parts(&["a", "bc"]));
        assert_eq!(fnv1a64_parts(&["ab|c"]), fnv1a64_parts(&["ab", "c"]));
    }

    #[test]
    fn round10_kills_drift() {
        let x = 0.5 + 3.0 * 0.1; // 0.8000000000000001
        assert_eq!(round10(x), 0.8);
        assert_eq!(round10(-0.0), 0.0);
    }

    #[test]
    fn fmt_f64_canonical() {
        assert_eq!(fmt_f64(1.0), "1");
        assert_eq!(fmt_f64(0.6), "0.6");
        assert_eq!(fmt_f64(0.5 + 3.0 * 0.1), "0.8");
        assert_eq!(fmt_f64(4096.0), "4096");
    }
}
