use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed JSON/TOML. `offset` is the byte offset into the input.
    #[error("parse error at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    /// An annotation refers to an image or category that is not declared.
    #[error("annotation {annotation_id}: {message}")]
    Reference { annotation_id: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("task index {index} out of range (expected 1..={count})")]
    TaskIndex { index: usize, count: usize },

    #[error("invalid task configuration: {0}")]
    TaskConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Converts a `serde_json` error into [`Error::Parse`], resolving the
    /// line/column pair reported by serde into a byte offset within `text`.
    pub(crate) fn json(text: &str, err: serde_json::Error) -> Self {
        let line = err.line();
        let column = err.column();
        Error::Parse {
            offset: byte_offset(text, line, column),
            line,
            column,
            message: err.to_string(),
        }
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    // serde_json columns are 1-based byte columns
    (line_start + column.saturating_sub(1)).min(text.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_count_preceding_lines() {
        let text = "{\n  \"a\": 1,\n  oops\n}";
        let err = serde_json::from_str::<serde_json::Value>(text).unwrap_err();
        match Error::json(text, err) {
            Error::Parse { offset, line, .. } => {
                assert_eq!(line, 3);
                assert_eq!(&text[offset..offset + 1], "o");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
