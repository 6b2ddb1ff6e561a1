use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter, Serializer};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Pretty JSON whose floats are written as `{:.16e}`: 17 significant digits,
/// round-trip exact and printed the same way on every platform.
struct SciFormatter<'a>(PrettyFormatter<'a>);

impl Formatter for SciFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{v:.16e}")
    }
    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(v))
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_string(v: &Value) -> Result<String, CliError> {
    let mut buf = Vec::new();
    let mut ser = Serializer::with_formatter(&mut buf, SciFormatter(PrettyFormatter::new()));
    v.serialize(&mut ser).map_err(|e| CliError::Output(e.to_string()))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| CliError::Output(e.to_string()))
}

pub fn to_value<S: Serialize>(s: &S) -> Result<Value, CliError> {
    serde_json::to_value(s).map_err(|e| CliError::Output(e.to_string()))
}

pub fn fmt_float(f: f64) -> String {
    if f.is_finite() {
        format!("{f:.16e}")
    } else {
        String::new()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Run provenance attached to every JSON output.
pub struct Manifest {
    pub config: Value,
    pub seed: Option<u64>,
    pub input_sha256: Option<String>,
    pub started_ms: u64,
}

impl Manifest {
    pub fn new(config: Value, seed: Option<u64>, input_sha256: Option<String>) -> Self {
        Self {
            config,
            seed,
            input_sha256,
            started_ms: unix_ms(),
        }
    }

    fn finish(self) -> Value {
        let mut m = Map::new();
        m.insert("command_line".into(), Value::from(std::env::args().collect::<Vec<_>>()));
        m.insert("config".into(), self.config);
        m.insert("seed".into(), self.seed.map_or(Value::Null, Value::from));
        m.insert("version".into(), Value::from(robreg_core::VERSION));
        m.insert("input_sha256".into(), self.input_sha256.map_or(Value::Null, Value::from));
        m.insert("started_unix_ms".into(), Value::from(self.started_ms));
        m.insert("finished_unix_ms".into(), Value::from(unix_ms()));
        Value::Object(m)
    }
}

/// Adds the manifest and writes to `out` or stdout.
pub fn emit(mut body: Map<String, Value>, manifest: Manifest, out: Option<&Path>) -> Result<(), CliError> {
    body.insert("manifest".into(), manifest.finish());
    let text = to_json_string(&Value::Object(body))?;
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Output(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// `results.json` -> `results.<suffix>.csv`.
pub fn table_path(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}.{suffix}.csv"))
}

pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Output(format!("{}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}
