#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use robreg_core::Dataset;

pub fn robreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robreg"))
        .args(args)
        .env_remove("ROBREG_LOG")
        .output()
        .expect("robreg binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes `y,x1,..,xp`, dropping the intercept column of the design.
pub fn write_csv(path: &Path, d: &Dataset<f64>) {
    let mut s = String::from("y");
    for j in 1..=d.p() {
        s += &format!(",x{j}");
    }
    s.push('\n');
    for i in 0..d.n() {
        s += &format!("{:e}", d.y()[i]);
        for j in 1..=d.p() {
            s += &format!(",{:e}", d.x()[(i, j)]);
        }
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn floats(v: &serde_json::Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}
