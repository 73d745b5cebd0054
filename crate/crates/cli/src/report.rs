//! Machine-report emission.
//!
//! Every command wraps its results in the same envelope: a schema tag, the
//! command name, the model path, the seed, the fully resolved parameters, and
//! the results themselves. Field order is fixed by the structs and floats are
//! printed by shortest round-trip, so the emitted bytes depend only on the
//! computed values — the same configuration and seed produce byte-identical
//! reports at any thread count.
//!
//! CSV output flattens the primary table of a command into one diffable file:
//! a header line, one record per row, floats again in shortest round-trip
//! form. Vector-valued cells use `|` as the inner separator so records never
//! need quoting.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;

/// Schema tag carried by every JSON report.
pub const SCHEMA: &str = "mbpre-report/1";

/// Common frame around command results.
#[derive(Serialize)]
struct Envelope<'a, P: Serialize, R: Serialize> {
    schema: &'static str,
    command: &'static str,
    model: &'a str,
    seed: u64,
    params: P,
    results: R,
}

/// Renders the JSON report, newline-terminated.
pub fn render_json<P: Serialize, R: Serialize>(
    command: &'static str,
    model: &str,
    seed: u64,
    params: P,
    results: R,
) -> String {
    let envelope = Envelope { schema: SCHEMA, command, model, seed, params, results };
    let mut text =
        serde_json::to_string_pretty(&envelope).expect("report structs always serialize");
    text.push('\n');
    text
}

/// Incremental CSV builder: a fixed header plus preformatted records.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &str) -> Self {
        let mut text = String::with_capacity(256);
        text.push_str(header);
        text.push('\n');
        Csv { text }
    }

    pub fn row(&mut self, record: String) {
        self.text.push_str(&record);
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }
}

/// Joins a population vector into a comma-free cell, such as `2|1`.
pub fn cell(z: &[u64]) -> String {
    let parts: Vec<String> = z.iter().map(|c| c.to_string()).collect();
    parts.join("|")
}

/// Writes the report to `--out` when given, stdout otherwise.
pub fn emit(out: &Option<PathBuf>, text: &str) -> std::io::Result<()> {
    match out {
        Some(path) => fs::write(path, text),
        None => {
            let stdout = std::io::stdout();
            let mut handle = stdout.lock();
            handle.write_all(text.as_bytes())
        }
    }
}
