use std::path::Path;

use super::ComprehensionError;

/// Parses `text<TAB>label` lines. Blank lines and lines starting with `#`
/// are skipped; the label is everything after the last tab.
pub fn parse_labeled(content: &str) -> Result<Vec<(String, String)>, ComprehensionError> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (text, label) = line.rsplit_once('\t').ok_or(ComprehensionError::Dataset {
            line: i + 1,
            message: "expected text<TAB>label".into(),
        })?;
        let (text, label) = (text.trim(), label.trim());
        if text.is_empty() || label.is_empty() {
            return Err(ComprehensionError::Dataset {
                line: i + 1,
                message: "empty text or label".into(),
            });
        }
        out.push((text.to_owned(), label.to_owned()));
    }
    Ok(out)
}

pub fn read_labeled_file(path: &Path) -> Result<Vec<(String, String)>, ComprehensionError> {
    let content = std::fs::read_to_string(path).map_err(|e| ComprehensionError::io(path, e))?;
    parse_labeled(&content).map_err(|e| match e {
        ComprehensionError::Dataset { line, message } => ComprehensionError::Dataset {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}
