//! Wire protocol for external predictors, version 1.
//!
//! Newline-delimited JSON over the child's stdin/stdout, one object per
//! line. Replies may arrive in any order and are correlated by `id`.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::evaluation::ScoredBox;
use crate::record::BoundingBox;
use crate::{Error, Result};

pub const PROTOCOL_VERSION: u64 = 1;
pub const CAP_CLASSIFY: &str = "classify";
pub const CAP_DETECT: &str = "detect";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Hello { version: u64 },
    Classify { id: String, image: String },
    Detect { id: String, image: String },
    Bye,
}

impl Request {
    /// One JSON line, newline included.
    pub fn encode(&self) -> String {
        let mut s = serde_json::to_string(self).expect("requests always serialize");
        s.push('\n');
        s
    }

    pub fn id(&self) -> Option<&str> {
        match self {
            Request::Classify { id, .. } | Request::Detect { id, .. } => Some(id),
            _ => None,
        }
    }
}

/// Server side: parses one request line.
pub fn decode_request(line: &str) -> Result<Request> {
    serde_json::from_str(line.trim_end()).map_err(|e| Error::Protocol(format!("bad request: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Hello {
        version: u64,
        capabilities: Vec<String>,
    },
    Classify {
        id: String,
        p_animal: f64,
        p_no_animal: f64,
    },
    Detect {
        id: String,
        boxes: Vec<ScoredBox>,
    },
    Error {
        id: Option<String>,
        message: String,
    },
}

impl Reply {
    pub fn id(&self) -> Option<&str> {
        match self {
            Reply::Classify { id, .. } | Reply::Detect { id, .. } => Some(id),
            Reply::Error { id, .. } => id.as_deref(),
            Reply::Hello { .. } => None,
        }
    }

    pub fn encode(&self) -> String {
        let v = match self {
            Reply::Hello {
                version,
                capabilities,
            } => {
                json!({"op": "hello", "version": version, "capabilities": capabilities})
            }
            Reply::Classify {
                id,
                p_animal,
                p_no_animal,
            } => {
                json!({"id": id, "p_animal": p_animal, "p_no_animal": p_no_animal})
            }
            Reply::Detect { id, boxes } => json!({
                "id": id,
                "boxes": boxes
                    .iter()
                    .map(|b| json!({"x": b.bbox.x, "y": b.bbox.y, "w": b.bbox.w, "h": b.bbox.h, "score": b.score}))
                    .collect::<Vec<_>>(),
            }),
            Reply::Error { id, message } => json!({"id": id, "error": message}),
        };
        let mut s = v.to_string();
        s.push('\n');
        s
    }
}

fn field_f64(obj: &Map<String, Value>, key: &str) -> Result<f64> {
    match obj.get(key) {
        None => Err(Error::Protocol(format!("reply is missing `{key}`"))),
        Some(v) => v
            .as_f64()
            .ok_or_else(|| Error::Protocol(format!("`{key}` is not a number"))),
    }
}

/// Client side: parses one reply line. Only the shape is checked here;
/// probability validation happens when building a `Prediction`.
pub fn decode_reply(line: &str) -> Result<Reply> {
    let v: Value = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Protocol(format!("reply is not JSON: {e}")))?;
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Protocol("reply is not a JSON object".into()))?;

    if obj.get("op").and_then(Value::as_str) == Some("hello") {
        let version = obj
            .get("version")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Protocol("hello reply without integer `version`".into()))?;
        let capabilities = obj
            .get("capabilities")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Protocol("hello reply without `capabilities`".into()))?
            .iter()
            .map(|c| c.as_str().map(str::to_string))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Protocol("capabilities must be strings".into()))?;
        return Ok(Reply::Hello {
            version,
            capabilities,
        });
    }

    let id = match obj.get("id") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Null) | None => None,
        Some(_) => return Err(Error::Protocol("`id` must be a string".into())),
    };
    if let Some(err) = obj.get("error") {
        let message = err
            .as_str()
            .map(str::to_string)
            .unwrap_or_else(|| err.to_string());
        return Ok(Reply::Error { id, message });
    }
    let id = id.ok_or_else(|| Error::Protocol("reply is missing `id`".into()))?;
    if let Some(boxes) = obj.get("boxes") {
        let arr = boxes
            .as_array()
            .ok_or_else(|| Error::Protocol("`boxes` must be an array".into()))?;
        let boxes = arr
            .iter()
            .map(|b| {
                let o = b
                    .as_object()
                    .ok_or_else(|| Error::Protocol("box entries must be objects".into()))?;
                Ok(ScoredBox::new(
                    BoundingBox::new(
                        field_f64(o, "x")?,
                        field_f64(o, "y")?,
                        field_f64(o, "w")?,
                        field_f64(o, "h")?,
                    ),
                    field_f64(o, "score")?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(Reply::Detect { id, boxes });
    }
    if obj.contains_key("p_animal") || obj.contains_key("p_no_animal") {
        return Ok(Reply::Classify {
            p_animal: field_f64(obj, "p_animal")?,
            p_no_animal: field_f64(obj, "p_no_animal")?,
            id,
        });
    }
    Err(Error::Protocol(format!("unrecognized reply for id `{id}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn requests_encode_to_the_documented_lines() {
        assert_eq!(
            Request::Hello { version: 1 }.encode(),
            "{\"op\":\"hello\",\"version\":1}\n"
        );
        assert_eq!(
            Request::Classify {
                id: "7".into(),
                image: "/tmp/a.png".into()
            }
            .encode(),
            "{\"op\":\"classify\",\"id\":\"7\",\"image\":\"/tmp/a.png\"}\n"
        );
        assert_eq!(Request::Bye.encode(), "{\"op\":\"bye\"}\n");
        for r in [
            Request::Hello { version: 1 },
            Request::Detect {
                id: "x".into(),
                image: "/i".into(),
            },
            Request::Bye,
        ] {
            assert_eq!(decode_request(&r.encode()).unwrap(), r);
        }
        assert!(decode_request("{\"op\":\"dance\"}").is_err());
    }

    #[test]
    fn replies_decode() {
        assert_eq!(
            decode_reply(r#"{"op":"hello","version":1,"capabilities":["classify","detect"]}"#)
                .unwrap(),
            Reply::Hello {
                version: 1,
                capabilities: vec!["classify".into(), "detect".into()]
            }
        );
        assert_eq!(
            decode_reply(r#"{"id":"3","p_animal":0.93,"p_no_animal":0.07}"#).unwrap(),
            Reply::Classify {
                id: "3".into(),
                p_animal: 0.93,
                p_no_animal: 0.07
            }
        );
        let d =
            decode_reply(r#"{"id":"4","boxes":[{"x":1,"y":2,"w":3,"h":4,"score":0.5}]}"#).unwrap();
        assert_eq!(d.id(), Some("4"));
        assert_eq!(
            decode_reply(r#"{"id":"5","error":"unreadable"}"#).unwrap(),
            Reply::Error {
                id: Some("5".into()),
                message: "unreadable".into()
            }
        );
    }

    #[test]
    fn malformed_replies_are_protocol_errors() {
        for line in [
            r#"{"id":"3","p_animal":0.93}"#,
            r#"{"p_animal":0.5,"p_no_animal":0.5}"#,
            r#"{"id":"3","p_animal":"high","p_no_animal":0.1}"#,
            r#"{"id":"3"}"#,
            r#"[1,2]"#,
            "not json",
            r#"{"op":"hello","capabilities":[]}"#,
        ] {
            assert!(
                matches!(decode_reply(line), Err(Error::Protocol(_))),
                "{line}"
            );
        }
    }

    #[test]
    fn reply_encoding_round_trips() {
        let replies = [
            Reply::Hello {
                version: 1,
                capabilities: vec!["classify".into()],
            },
            Reply::Classify {
                id: "a".into(),
                p_animal: 0.25,
                p_no_animal: 0.75,
            },
            Reply::Detect {
                id: "b".into(),
                boxes: vec![ScoredBox::new(BoundingBox::new(1.0, 2.0, 3.0, 4.0), 0.5)],
            },
            Reply::Error {
                id: None,
                message: "bad".into(),
            },
        ];
        for r in replies {
            let line = r.encode();
            assert!(line.ends_with('\n') && line.matches('\n').count() == 1);
            assert_eq!(decode_reply(&line).unwrap(), r);
        }
    }
}
