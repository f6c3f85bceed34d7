//! HTTP/1.1 message framing: incremental request parsing for the guest server
//! and response parsing for host-side clients.

use thiserror::Error;

pub const MAX_LINE_LEN: usize = 8 * 1024;
pub const MAX_HEADERS: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HttpError {
    #[error("request line exceeds {MAX_LINE_LEN} bytes")]
    LineTooLong,
    #[error("more than {MAX_HEADERS} headers")]
    TooManyHeaders,
    #[error("malformed message: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: String,
    pub target: String,
    pub version: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl HttpRequest {
    pub fn get(target: &str) -> Self {
        Self {
            method: "GET".into(),
            target: target.into(),
            version: "HTTP/1.1".into(),
            headers: Vec::new(),
            body: Vec::new(),
        }
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        find_header(&self.headers, name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("{} {} {}\r\n", self.method, self.target, self.version).into_bytes();
        encode_tail(&mut out, &self.headers, &self.body);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub reason: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        find_header(&self.headers, name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("HTTP/1.1 {} {}\r\n", self.status, self.reason).into_bytes();
        encode_tail(&mut out, &self.headers, &self.body);
        out
    }
}

fn find_header<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(name))
        .map(|(_, v)| v.as_str())
}

fn encode_tail(out: &mut Vec<u8>, headers: &[(String, String)], body: &[u8]) {
    for (k, v) in headers {
        out.extend_from_slice(k.as_bytes());
        out.extend_from_slice(b": ");
        out.extend_from_slice(v.as_bytes());
        out.extend_from_slice(b"\r\n");
    }
    out.extend_from_slice(b"\r\n");
    out.extend_from_slice(body);
}

fn find_crlf(buf: &[u8]) -> Option<usize> {
    buf.windows(2).position(|w| w == b"\r\n")
}

struct Head<'a> {
    start_line: &'a str,
    headers: Vec<(String, String)>,
    body_start: usize,
}

/// Splits the head of a message. `Ok(None)` means more bytes are needed.
fn parse_head(buf: &[u8]) -> Result<Option<Head<'_>>, HttpError> {
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let rest = &buf[pos..];
        let Some(end) = find_crlf(rest) else {
            if rest.len() > MAX_LINE_LEN {
                return Err(HttpError::LineTooLong);
            }
            return Ok(None);
        };
        if end > MAX_LINE_LEN {
            return Err(HttpError::LineTooLong);
        }
        let line =
            std::str::from_utf8(&rest[..end]).map_err(|_| HttpError::Malformed("non-utf8 head"))?;
        pos += end + 2;
        if line.is_empty() {
            if lines.is_empty() {
                return Err(HttpError::Malformed("empty start line"));
            }
            break;
        }
        if lines.len() > MAX_HEADERS {
            return Err(HttpError::TooManyHeaders);
        }
        lines.push(line);
    }
    let start_line = lines[0];
    let mut headers = Vec::with_capacity(lines.len() - 1);
    for line in &lines[1..] {
        let (k, v) = line
            .split_once(':')
            .ok_or(HttpError::Malformed("header without colon"))?;
        if k.is_empty() || k.contains(' ') {
            return Err(HttpError::Malformed("bad header name"));
        }
        headers.push((k.to_string(), v.trim().to_string()));
    }
    Ok(Some(Head {
        start_line,
        headers,
        body_start: pos,
    }))
}

fn content_length(headers: &[(String, String)]) -> Result<Option<usize>, HttpError> {
    find_header(headers, "Content-Length")
        .map(|v| {
            v.parse::<usize>()
                .map_err(|_| HttpError::Malformed("bad content-length"))
        })
        .transpose()
}

/// Parses one request from the front of `buf`, returning it with the number of bytes consumed.
pub fn parse_request(buf: &[u8]) -> Result<Option<(HttpRequest, usize)>, HttpError> {
    let Some(head) = parse_head(buf)? else {
        return Ok(None);
    };
    let mut parts = head.start_line.split(' ');
    let (Some(method), Some(target), Some(version), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(HttpError::Malformed("request line"));
    };
    if method.is_empty() || !method.bytes().all(|b| b.is_ascii_uppercase()) {
        return Err(HttpError::Malformed("method"));
    }
    if target.is_empty() || !version.starts_with("HTTP/1.") {
        return Err(HttpError::Malformed("request line"));
    }
    let body_len = content_length(&head.headers)?.unwrap_or(0);
    let end = head.body_start + body_len;
    if buf.len() < end {
        return Ok(None);
    }
    let req = HttpRequest {
        method: method.to_string(),
        target: target.to_string(),
        version: version.to_string(),
        headers: head.headers,
        body: buf[head.body_start..end].to_vec(),
    };
    Ok(Some((req, end)))
}

/// Parses a response. Without Content-Length the body runs to end of stream,
/// so `eof` must be set once the peer has closed.
pub fn parse_response(buf: &[u8], eof: bool) -> Result<Option<HttpResponse>, HttpError> {
    let Some(head) = parse_head(buf)? else {
        return if eof {
            Err(HttpError::Malformed("truncated head"))
        } else {
            Ok(None)
        };
    };
    let mut parts = head.start_line.splitn(3, ' ');
    let (Some(version), Some(code)) = (parts.next(), parts.next()) else {
        return Err(HttpError::Malformed("status line"));
    };
    if !version.starts_with("HTTP/1.") {
        return Err(HttpError::Malformed("status line"));
    }
    let status = code
        .parse::<u16>()
        .map_err(|_| HttpError::Malformed("status code"))?;
    let reason = parts.next().unwrap_or("").to_string();
    let body = match content_length(&head.headers)? {
        Some(n) if buf.len() >= head.body_start + n => {
            buf[head.body_start..head.body_start + n].to_vec()
        }
        Some(_) if eof => return Err(HttpError::Malformed("truncated body")),
        Some(_) => return Ok(None),
        None if eof => buf[head.body_start..].to_vec(),
        None => return Ok(None),
    };
    Ok(Some(HttpResponse {
        status,
        reason,
        headers: head.headers,
        body,
    }))
}
