//! Reproducibility manifest written next to every command's outputs.
//!
//! Holds no timestamps or host data, so identical invocations write
//! identical manifests.

use std::collections::BTreeMap;

use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Arguments after the program name, verbatim. Replaying them
    /// reproduces the run.
    pub argv: Vec<String>,
    /// Every flag of the command with its effective value.
    pub flags: BTreeMap<String, Value>,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of inputs and resolved configs.
    pub hashes: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, argv: &[String], spec: &clap::Command, matches: &ArgMatches) -> Self {
        Manifest {
            tool: "hiermiml",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv: argv.to_vec(),
            flags: flag_values(spec, matches),
            seeds: BTreeMap::new(),
            hashes: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn hash(&mut self, name: &str, bytes: &[u8]) {
        self.hashes.insert(name.to_string(), sha256_hex(bytes));
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

fn flag_values(spec: &clap::Command, matches: &ArgMatches) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    for arg in spec.get_arguments() {
        let id = arg.get_id().as_str();
        let Ok(Some(raw)) = matches.try_get_raw(id) else { continue };
        let values: Vec<Value> = raw.map(|v| Value::String(v.to_string_lossy().into_owned())).collect();
        let value = match values.len() {
            0 if matches.value_source(id) == Some(ValueSource::CommandLine) => Value::Bool(true),
            0 => continue,
            1 => values.into_iter().next().expect("one value"),
            _ => Value::Array(values),
        };
        out.insert(id.to_string(), value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::{Arg, ArgAction};

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn flags_capture_defaults_values_and_switches() {
        let spec = clap::Command::new("t")
            .arg(Arg::new("lr").long("lr"))
            .arg(Arg::new("seed").long("seed").default_value("0"))
            .arg(Arg::new("quiet").long("quiet").action(ArgAction::SetTrue))
            .arg(Arg::new("unset").long("unset"));
        let argv = ["t", "--lr", "0.1"];
        let matches = spec.clone().get_matches_from(argv);
        let m = Manifest::new("t", &["--lr".into(), "0.1".into()], &spec, &matches);
        assert_eq!(m.flags["lr"], "0.1");
        assert_eq!(m.flags["seed"], "0");
        assert_eq!(m.flags["quiet"], "false");
        assert!(!m.flags.contains_key("unset"));
        assert!(!m.to_json().contains("time"));
        assert_eq!(m.to_json(), Manifest::new("t", &m.argv, &spec, &matches).to_json());
    }
}
