//! The guest's HTTP application.

use crate::wire::http::{HttpRequest, HttpResponse};

pub const HELLO_PATH: &str = "/hello";
pub const HELLO_BODY: &str = "Hello World!";
pub const DEFAULT_BANNER: &str = "esp32-emu";

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        _ => "Error",
    }
}

/// Builds a response with the fixed header set. Header order and values
/// depend only on `banner`, status and body, so responses are byte-stable.
pub fn response(status: u16, body: &str, banner: &str) -> HttpResponse {
    let mut headers = vec![
        ("Server".to_string(), banner.to_string()),
        ("Content-Type".to_string(), "text/plain".to_string()),
        ("Content-Length".to_string(), body.len().to_string()),
        ("Connection".to_string(), "close".to_string()),
    ];
    if status == 405 {
        headers.push(("Allow".to_string(), "GET".to_string()));
    }
    HttpResponse {
        status,
        reason: reason(status).to_string(),
        headers,
        body: body.as_bytes().to_vec(),
    }
}

pub fn bad_request(banner: &str) -> HttpResponse {
    response(400, "Bad Request", banner)
}

pub fn http_handle(req: &HttpRequest, banner: &str) -> HttpResponse {
    if req.method != "GET" {
        return response(405, "Method Not Allowed", banner);
    }
    let path = req.target.split('?').next().unwrap_or("");
    if path == HELLO_PATH {
        response(200, HELLO_BODY, banner)
    } else {
        response(404, "Not Found", banner)
    }
}
