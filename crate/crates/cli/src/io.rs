use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{io_at, CliError, CliResult};

/// Writes `bytes` next to `path` and renames into place, so readers never see
/// a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Io(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_at(path))
}

/// Parses `HxW`.
pub fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("{s:?} is not HxW"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("{s:?} is not HxW"));
    let (h, w) = (p(h)?, p(w)?);
    if h == 0 || w == 0 {
        return Err(format!("{s:?} has a zero dimension"));
    }
    Ok((h, w))
}

/// Parses a comma-separated list of numbers.
pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("{v:?} is not a number")))
        .collect()
}
