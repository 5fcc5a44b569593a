//! Stream framing: each record is its byte length in decimal, a newline,
//! the JSON text, and a newline.

use serde_json::Value;

pub const CONTENT_TYPE: &str = "application/x-socpilot-frames";

pub fn frame(record: &Value) -> Vec<u8> {
    let body = record.to_string();
    format!("{}\n{}\n", body.len(), body).into_bytes()
}

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("bad length prefix at byte {0}")]
    Length(usize),
    #[error("frame at byte {0} is truncated")]
    Truncated(usize),
    #[error("frame at byte {at}: {reason}")]
    Json { at: usize, reason: String },
}

/// Splits a complete buffer into records.
pub fn parse_frames(buf: &[u8]) -> Result<Vec<Value>, FrameError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < buf.len() {
        let nl = buf[i..].iter().position(|&b| b == b'\n').ok_or(FrameError::Length(i))? + i;
        let len: usize = std::str::from_utf8(&buf[i..nl]).ok().and_then(|s| s.parse().ok()).ok_or(FrameError::Length(i))?;
        let start = nl + 1;
        let end = start + len;
        if end + 1 > buf.len() || buf[end] != b'\n' {
            return Err(FrameError::Truncated(i));
        }
        let v = serde_json::from_slice(&buf[start..end]).map_err(|e| FrameError::Json { at: i, reason: e.to_string() })?;
        out.push(v);
        i = end + 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip_with_multibyte_text() {
        let recs = vec![json!({"a": 1}), json!({"text": "café ☕"})];
        let buf: Vec<u8> = recs.iter().flat_map(frame).collect();
        assert_eq!(parse_frames(&buf).unwrap(), recs);
        // the second frame starts where the first ends
        let second = frame(&recs[0]).len();
        assert_eq!(parse_frames(&buf[..buf.len() - 2]), Err(FrameError::Truncated(second)));
    }
}
