//! Machine-readable failures printed to stderr as one JSON object.

use serde_json::json;

use sdidml::{Error, ErrorClass};

#[derive(Debug)]
pub struct Failure {
    pub class: ErrorClass,
    pub code: &'static str,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { class: ErrorClass::Config, code: "cli.usage", message: message.into() }
    }

    pub fn missing_artifacts(message: impl Into<String>) -> Self {
        Self { class: ErrorClass::Data, code: "cli.missing_artifacts", message: message.into() }
    }

    pub fn exit_code(&self) -> u8 {
        self.class.exit_code() as u8
    }

    pub fn to_json(&self) -> String {
        json!({
            "error": {
                "class": self.class.name(),
                "code": self.code,
                "message": self.message,
                "exit_code": self.exit_code(),
            }
        })
        .to_string()
    }
}

impl<E: Into<Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let e = e.into();
        Self { class: e.class(), code: e.code(), message: e.to_string() }
    }
}
