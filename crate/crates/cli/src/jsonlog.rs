//! Append-only JSON-lines log for machine-readable training/run events.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use anyhow::Result;
use serde_json::json;

pub struct JsonLog {
    file: Option<File>,
}

impl JsonLog {
    pub fn disabled() -> JsonLog {
        JsonLog { file: None }
    }

    pub fn append(path: &Path) -> Result<JsonLog> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(JsonLog { file: Some(file) })
    }

    pub fn event(&mut self, value: serde_json::Value) {
        if let Some(f) = self.file.as_mut() {
            let _ = writeln!(f, "{value}");
        }
    }

    pub fn epoch(&mut self, module: &str, e: &retrograph_core::center::EpochLog) {
        self.event(json!({
            "event": "epoch",
            "module": module,
            "epoch": e.epoch,
            "loss": e.loss,
            "val_metric": e.val_metric,
            "lr": e.lr,
        }));
    }

    pub fn counter(&mut self, name: &str, count: usize) {
        self.event(json!({"event": "counter", "name": name, "count": count}));
    }
}
