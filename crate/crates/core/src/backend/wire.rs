//! Server side of the wire protocol, independent of any HTTP library.
//!
//! [`handle`] maps `(method, path, body)` to `(status, json body)`. Errors
//! are answered as `{"error": message, "kind": ...}` with status 400 for
//! protocol or input problems, 404 for unknown routes and 500 otherwise.
//! `POST /v1/fill` also accepts a JSON array of up to 64 requests and
//! answers with an array of the same length.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use super::{mask_count, Backend, FillRequest, MAX_BATCH};
use crate::error::Error;

pub type Reply = (u16, Value);

pub fn handle(backend: &dyn Backend, method: &str, path: &str, body: &[u8]) -> Reply {
    let path = path.split('?').next().unwrap_or(path);
    match (method, path) {
        ("GET", "/v1/health") => (200, to_value(&backend.health())),
        ("POST", "/v1/fill") => fill(backend, body),
        ("POST", "/v1/pair_score") => single(body, |r| backend.pair_score(&r)),
        ("POST", "/v1/coref") => single(body, |r| backend.coref(&r)),
        ("POST", "/v1/classify") => single(body, |r| backend.classify(&r)),
        (_, "/v1/health" | "/v1/fill" | "/v1/pair_score" | "/v1/coref" | "/v1/classify") => {
            error_reply(405, "protocol", format!("method {method} not allowed on {path}"))
        }
        _ => error_reply(404, "protocol", format!("no route for {path}")),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("response serializes")
}

fn error_reply(status: u16, kind: &str, message: String) -> Reply {
    (status, json!({ "error": message, "kind": kind }))
}

fn error_of(e: &Error) -> Reply {
    match e {
        Error::Protocol(_) | Error::InvalidInput(_) | Error::Json(_) => error_reply(400, "protocol", e.to_string()),
        Error::PredictionMissing { .. } => error_reply(404, "missing", e.to_string()),
        _ => error_reply(500, "internal", e.to_string()),
    }
}

fn single<Q: DeserializeOwned, R: Serialize>(body: &[u8], f: impl FnOnce(Q) -> crate::Result<R>) -> Reply {
    let req: Q = match serde_json::from_slice(body) {
        Ok(r) => r,
        Err(e) => return error_reply(400, "protocol", format!("malformed request: {e}")),
    };
    match f(req) {
        Ok(r) => (200, to_value(&r)),
        Err(e) => error_of(&e),
    }
}

fn check_fill(req: &FillRequest) -> Result<(), Error> {
    let masks = mask_count(&req.text, &req.mask_token);
    if masks != 1 {
        return Err(Error::Protocol(format!(
            "expected exactly one `{}` in text, found {masks}",
            req.mask_token
        )));
    }
    if req.k == 0 {
        return Err(Error::Protocol("k must be positive".into()));
    }
    Ok(())
}

fn fill(backend: &dyn Backend, body: &[u8]) -> Reply {
    let value: Value = match serde_json::from_slice(body) {
        Ok(v) => v,
        Err(e) => return error_reply(400, "protocol", format!("malformed request: {e}")),
    };
    if let Value::Array(items) = value {
        if items.len() > MAX_BATCH {
            return error_reply(400, "protocol", format!("batch of {} exceeds {MAX_BATCH}", items.len()));
        }
        let mut reqs = Vec::with_capacity(items.len());
        for item in items {
            match serde_json::from_value::<FillRequest>(item) {
                Ok(r) => reqs.push(r),
                Err(e) => return error_reply(400, "protocol", format!("malformed batch item: {e}")),
            }
        }
        let answers: Vec<Value> = reqs
            .iter()
            .map(|r| {
                let result = check_fill(r).and_then(|_| backend.fill(r));
                match result {
                    Ok(resp) => to_value(&resp),
                    Err(e) => error_of(&e).1,
                }
            })
            .collect();
        return (200, Value::Array(answers));
    }
    single(&serde_json::to_vec(&value).expect("value serializes"), |r: FillRequest| {
        check_fill(&r)?;
        backend.fill(&r)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Fill, ToyModel, ToyModelSpec};

    fn toy() -> ToyModel {
        ToyModel::new(ToyModelSpec {
            default_fills: ["art", "music", "play"]
                .iter()
                .map(|t| Fill {
                    token: t.to_string(),
                    score: 0.5,
                })
                .collect(),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn two_masks_is_400() {
        let body = br#"{"text":"[MASK] studied [MASK].","mask_token":"[MASK]","k":3}"#;
        let (status, v) = handle(&toy(), "POST", "/v1/fill", body);
        assert_eq!(status, 400);
        assert_eq!(v["kind"], "protocol");
    }

    #[test]
    fn fill_and_health() {
        let body = br#"{"text":"Maria studied [MASK] at college.","mask_token":"[MASK]","k":2}"#;
        let (status, v) = handle(&toy(), "POST", "/v1/fill", body);
        assert_eq!(status, 200);
        assert_eq!(v["fills"].as_array().unwrap().len(), 2);
        let (status, v) = handle(&toy(), "GET", "/v1/health", b"");
        assert_eq!(status, 200);
        assert_eq!(v["model_id"], "toy");
    }

    #[test]
    fn batch_answers_in_order() {
        let body = br#"[{"text":"a [MASK]","mask_token":"[MASK]","k":1},{"text":"b","mask_token":"[MASK]","k":1}]"#;
        let (status, v) = handle(&toy(), "POST", "/v1/fill", body);
        assert_eq!(status, 200);
        let items = v.as_array().unwrap();
        assert_eq!(items[0]["fills"][0]["token"], "art");
        assert!(items[1]["error"].is_string());
    }

    #[test]
    fn unknown_route() {
        assert_eq!(handle(&toy(), "GET", "/v2/x", b"").0, 404);
        assert_eq!(handle(&toy(), "GET", "/v1/fill", b"").0, 405);
    }
}
