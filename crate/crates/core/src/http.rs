//! Thin blocking HTTP helpers on top of `ureq`.

use std::time::Duration;

use serde::Serialize;

use crate::retry::Attempt;

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

impl HttpResponse {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

pub fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

pub fn post_json<B: Serialize + ?Sized>(
    agent: &ureq::Agent,
    url: &str,
    bearer: Option<&str>,
    body: &B,
) -> Result<HttpResponse, String> {
    let mut req = agent.post(url);
    if let Some(token) = bearer {
        req = req.header("Authorization", &format!("Bearer {token}"));
    }
    let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    let body = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| e.to_string())?;
    Ok(HttpResponse { status, body })
}

pub fn get_with_query(
    agent: &ureq::Agent,
    url: &str,
    key: &str,
    value: &str,
) -> Result<HttpResponse, String> {
    let mut resp = agent
        .get(url)
        .query(key, value)
        .call()
        .map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    let body = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| e.to_string())?;
    Ok(HttpResponse { status, body })
}

/// Transport errors, 429 and 5xx are worth retrying; other statuses are not.
pub fn classify(result: Result<HttpResponse, String>) -> Result<HttpResponse, Attempt<String>> {
    match result {
        Err(transport) => Err(Attempt::Retry(transport)),
        Ok(resp) if resp.is_success() => Ok(resp),
        Ok(resp) => {
            let msg = format!("HTTP {}: {}", resp.status, truncate(&resp.body, 200));
            if resp.status == 429 || resp.status >= 500 {
                Err(Attempt::Retry(msg))
            } else {
                Err(Attempt::Fatal(msg))
            }
        }
    }
}

pub fn join_url(base: &str, path: &str) -> String {
    format!(
        "{}/{}",
        base.trim_end_matches('/'),
        path.trim_start_matches('/')
    )
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
