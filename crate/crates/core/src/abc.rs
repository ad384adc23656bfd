// SPDX-License-Identifier: Apache-2.0
//! ABC command sequences: parsing, canonical serialization, hashing and
//! the feature vector consumed by the mock backend and the heuristic advisor.
//!
//! Grammar: commands are separated by `;`; inside a command, whitespace and
//! `,` both separate tokens. A leading `+` on a command (the flow-runner
//! strategy convention) is accepted and dropped. `${name}` placeholders are
//! kept verbatim until [`AbcScript::substitute`] resolves them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScriptError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("feature error in command {index} (`{command}`): {message}")]
    Feature {
        index: usize,
        command: String,
        message: String,
    },
    #[error("unresolved placeholder(s): {}", .0.iter().cloned().collect::<Vec<_>>().join(", "))]
    UnresolvedPlaceholder(BTreeSet<String>),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AbcCommand {
    pub name: String,
    pub args: Vec<String>,
}

impl AbcCommand {
    pub fn new<S: Into<String>>(name: S, args: &[&str]) -> Self {
        AbcCommand {
            name: name.into(),
            args: args.iter().map(|a| a.to_string()).collect(),
        }
    }

    /// Placeholder names appearing in the command name or its arguments.
    pub fn placeholders(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for tok in std::iter::once(&self.name).chain(self.args.iter()) {
            collect_placeholders(tok, &mut out);
        }
        out
    }

    /// Value following `flag`, if the flag is present.
    pub fn flag_value(&self, flag: &str) -> Option<Option<&str>> {
        let pos = self.args.iter().position(|a| a == flag)?;
        Some(self.args.get(pos + 1).map(String::as_str))
    }
}

impl fmt::Display for AbcCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct AbcScript {
    pub commands: Vec<AbcCommand>,
}

/// Summary features of a script.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptFeatures {
    /// Mean of `-B` values over `map` commands; 1.0 when none is given.
    pub mean_balance: f64,
    pub n_buffer: usize,
    pub has_dch: bool,
    pub n_map: usize,
}

fn is_placeholder_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_placeholder_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn collect_placeholders(tok: &str, out: &mut BTreeSet<String>) {
    let mut rest = tok;
    while let Some(start) = rest.find("${") {
        let after = &rest[start + 2..];
        match after.find('}') {
            Some(end) => {
                out.insert(after[..end].to_string());
                rest = &after[end + 1..];
            }
            None => break,
        }
    }
}

fn err(offset: usize, message: impl Into<String>) -> ScriptError {
    ScriptError::Parse {
        offset,
        message: message.into(),
    }
}

pub fn parse_script(text: &str) -> Result<AbcScript, ScriptError> {
    let mut commands = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut current = String::new();
    // Byte offset where the current command's first token started.
    let mut at_command_start = true;

    fn finish_token(current: &mut String, tokens: &mut Vec<String>) {
        if !current.is_empty() {
            tokens.push(std::mem::take(current));
        }
    }
    fn finish_command(tokens: &mut Vec<String>, commands: &mut Vec<AbcCommand>) {
        if !tokens.is_empty() {
            let mut it = std::mem::take(tokens).into_iter();
            let name = it.next().unwrap_or_default();
            commands.push(AbcCommand {
                name,
                args: it.collect(),
            });
        }
    }

    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            ';' => {
                finish_token(&mut current, &mut tokens);
                finish_command(&mut tokens, &mut commands);
                at_command_start = true;
            }
            c if c.is_whitespace() || c == ',' => finish_token(&mut current, &mut tokens),
            c if c.is_control() => {
                return Err(err(i, format!("control character U+{:04X}", c as u32)));
            }
            '+' if at_command_start && tokens.is_empty() && current.is_empty() => {
                at_command_start = false;
            }
            '$' if matches!(chars.peek(), Some((_, '{'))) => {
                chars.next();
                let mut name = String::new();
                let mut closed = false;
                for (j, d) in chars.by_ref() {
                    if d == '}' {
                        closed = true;
                        break;
                    }
                    let valid = if name.is_empty() {
                        is_placeholder_start(d)
                    } else {
                        is_placeholder_char(d)
                    };
                    if !valid {
                        if d == ';' || d.is_whitespace() || d == ',' || d == '$' || d == '{' {
                            return Err(err(i, "unterminated `${`"));
                        }
                        return Err(err(j, format!("invalid character `{d}` in placeholder name")));
                    }
                    name.push(d);
                }
                if !closed {
                    return Err(err(i, "unterminated `${`"));
                }
                if name.is_empty() {
                    return Err(err(i, "empty placeholder name"));
                }
                current.push_str("${");
                current.push_str(&name);
                current.push('}');
                at_command_start = false;
            }
            c => {
                current.push(c);
                at_command_start = false;
            }
        }
    }
    finish_token(&mut current, &mut tokens);
    finish_command(&mut tokens, &mut commands);
    Ok(AbcScript { commands })
}

impl AbcScript {
    pub fn new(commands: Vec<AbcCommand>) -> Self {
        AbcScript { commands }
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    /// `;`-joined, single-space separated. Parsing the result yields `self`.
    pub fn serialize(&self) -> String {
        self.commands
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(";")
    }

    /// 64-bit FNV-1a digest of the canonical serialization.
    pub fn canonical_hash(&self) -> u64 {
        let mut h = FnvHasher::default();
        h.write(self.serialize().as_bytes());
        h.finish()
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        self.commands.iter().flat_map(|c| c.placeholders()).collect()
    }

    pub fn extract_features(&self) -> Result<ScriptFeatures, ScriptError> {
        let mut balances = Vec::new();
        let mut n_buffer = 0;
        let mut has_dch = false;
        let mut n_map = 0;
        for (index, cmd) in self.commands.iter().enumerate() {
            match cmd.name.as_str() {
                "map" => {
                    n_map += 1;
                    if let Some(value) = cmd.flag_value("-B") {
                        let feature_err = |message: String| ScriptError::Feature {
                            index,
                            command: cmd.to_string(),
                            message,
                        };
                        let raw = value.ok_or_else(|| feature_err("`-B` without a value".into()))?;
                        let b: f64 = raw
                            .parse()
                            .map_err(|_| feature_err(format!("non-numeric `-B` value `{raw}`")))?;
                        if !(b.is_finite() && b > 0.0) {
                            return Err(feature_err(format!("`-B` value {raw} must be positive")));
                        }
                        balances.push(b);
                    }
                }
                "buffer" => n_buffer += 1,
                "dch" => has_dch = true,
                _ => {}
            }
        }
        let mean_balance = if balances.is_empty() {
            1.0
        } else {
            balances.iter().sum::<f64>() / balances.len() as f64
        };
        Ok(ScriptFeatures {
            mean_balance,
            n_buffer,
            has_dch,
            n_map,
        })
    }

    /// Replaces every `${name}` with its binding. Fails listing all unbound names.
    pub fn substitute(&self, env: &BTreeMap<String, String>) -> Result<AbcScript, ScriptError> {
        let missing: BTreeSet<String> = self
            .placeholders()
            .into_iter()
            .filter(|p| !env.contains_key(p))
            .collect();
        if !missing.is_empty() {
            return Err(ScriptError::UnresolvedPlaceholder(missing));
        }
        let subst = |tok: &str| {
            let mut out = tok.to_string();
            for (k, v) in env {
                out = out.replace(&format!("${{{k}}}"), v);
            }
            out
        };
        Ok(AbcScript {
            commands: self
                .commands
                .iter()
                .map(|c| AbcCommand {
                    name: subst(&c.name),
                    args: c.args.iter().map(|a| subst(a)).collect(),
                })
                .collect(),
        })
    }

    pub fn read_file(path: &Path) -> Result<AbcScript, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScriptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        parse_script(&text)
    }

    /// Writes the serialized script followed by a newline.
    pub fn write_file(&self, path: &Path) -> Result<(), ScriptError> {
        std::fs::write(path, format!("{}\n", self.serialize())).map_err(|e| ScriptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

impl fmt::Display for AbcScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

impl std::str::FromStr for AbcScript {
    type Err = ScriptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_script(s)
    }
}

impl Serialize for AbcScript {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&AbcScript::serialize(self))
    }
}

impl<'de> Deserialize<'de> for AbcScript {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_script(&text).map_err(serde::de::Error::custom)
    }
}

/// Digest rendered as 16 lowercase hex characters.
pub fn hash_hex(h: u64) -> String {
    format!("{h:016x}")
}

pub fn parse_hash_hex(s: &str) -> Option<u64> {
    if s.len() == 16 {
        u64::from_str_radix(s, 16).ok()
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE_FRAGMENT: &str = "strash;dch;map -B 0.85;buffer -c -N 4";

    #[test]
    fn parses_sample_fragment() {
        let s = parse_script(SAMPLE_FRAGMENT).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.commands[2].name, "map");
        assert_eq!(s.commands[2].args, vec!["-B", "0.85"]);
        assert_eq!(s.commands[3].args, vec!["-c", "-N", "4"]);
    }

    #[test]
    fn empty_input() {
        assert!(parse_script("").unwrap().is_empty());
        assert!(parse_script("  ;; ; ").unwrap().is_empty());
        assert_eq!(AbcScript::default().serialize(), "");
    }

    #[test]
    fn plus_prefix_and_placeholder() {
        let s = parse_script("+read_constr,${sdc_file}").unwrap();
        assert_eq!(s.commands[0].name, "read_constr");
        assert_eq!(s.commands[0].args, vec!["${sdc_file}"]);
        assert_eq!(
            s.placeholders().into_iter().collect::<Vec<_>>(),
            vec!["sdc_file".to_string()]
        );
        assert_eq!(s, parse_script("read_constr ${sdc_file}").unwrap());
    }

    #[test]
    fn placeholder_as_command_name() {
        let s = parse_script("strash;${abc_rf};dch").unwrap();
        assert_eq!(s.commands[1].name, "${abc_rf}");
        assert!(s.placeholders().contains("abc_rf"));
    }

    #[test]
    fn serialize_normalizes_whitespace() {
        assert_eq!(parse_script("strash ;  dch").unwrap().serialize(), "strash;dch");
        let s = parse_script("+read_constr,${sdc_file};strash;${abc_rf};dch;map -B 0.87;buffer -c -N ... -m").unwrap();
        assert_eq!(parse_script(&s.serialize()).unwrap(), s);
    }

    #[test]
    fn unterminated_placeholder_reports_offset() {
        match parse_script("strash;read_constr ${sdc_file") {
            Err(ScriptError::Parse { offset, .. }) => assert_eq!(offset, 19),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_script("map ${x;dch}"), Err(ScriptError::Parse { offset: 4, .. })));
        assert!(matches!(parse_script("map ${1x}"), Err(ScriptError::Parse { .. })));
        assert!(matches!(parse_script("map ${}"), Err(ScriptError::Parse { .. })));
    }

    #[test]
    fn control_characters_rejected() {
        assert!(matches!(
            parse_script("strash;\u{7}dch"),
            Err(ScriptError::Parse { offset: 7, .. })
        ));
        // tabs and newlines are ordinary separators
        assert_eq!(parse_script("strash\n;\tdch").unwrap().len(), 2);
    }

    #[test]
    fn lone_dollar_is_literal() {
        let s = parse_script("echo $x").unwrap();
        assert_eq!(s.commands[0].args, vec!["$x"]);
        assert!(s.placeholders().is_empty());
    }

    #[test]
    fn hash_is_whitespace_insensitive_and_order_sensitive() {
        let h = |t: &str| parse_script(t).unwrap().canonical_hash();
        assert_eq!(h("strash; dch"), h("strash;dch"));
        assert_eq!(h("+strash;+dch"), h("strash;dch"));
        assert_ne!(h("strash;dch"), h("dch;strash"));
        assert_eq!(parse_hash_hex(&hash_hex(h("strash"))), Some(h("strash")));
        assert_eq!(hash_hex(1).len(), 16);
    }

    #[test]
    fn features() {
        let f = parse_script(SAMPLE_FRAGMENT).unwrap().extract_features().unwrap();
        assert_eq!(
            f,
            ScriptFeatures { mean_balance: 0.85, n_buffer: 1, has_dch: true, n_map: 1 }
        );
        let f = parse_script("strash").unwrap().extract_features().unwrap();
        assert_eq!(
            f,
            ScriptFeatures { mean_balance: 1.0, n_buffer: 0, has_dch: false, n_map: 0 }
        );
        let f = parse_script("map -B 0.8;map -B 1.0").unwrap().extract_features().unwrap();
        assert!((f.mean_balance - 0.9).abs() < 1e-12);
        assert_eq!(f.n_map, 2);
        // map without -B counts towards n_map but not towards the mean
        let f = parse_script("map;map -B 0.8").unwrap().extract_features().unwrap();
        assert_eq!((f.n_map, f.mean_balance), (2, 0.8));
    }

    #[test]
    fn feature_error_names_command_index() {
        let e = parse_script("strash;map -B fast").unwrap().extract_features().unwrap_err();
        assert!(matches!(e, ScriptError::Feature { index: 1, .. }));
        let e = parse_script("strash;dch;map -B").unwrap().extract_features().unwrap_err();
        assert!(matches!(e, ScriptError::Feature { index: 2, .. }));
        let e = parse_script("map -B ${b}").unwrap().extract_features().unwrap_err();
        assert!(matches!(e, ScriptError::Feature { index: 0, .. }));
    }

    #[test]
    fn substitute_resolves_and_reports_missing() {
        let s = parse_script("+read_constr,${sdc_file}").unwrap();
        let env = BTreeMap::from([("sdc_file".to_string(), "top.sdc".to_string())]);
        let r = s.substitute(&env).unwrap();
        assert_eq!(r.serialize(), "read_constr top.sdc");
        assert!(r.placeholders().is_empty());

        let plain = parse_script("strash;dch").unwrap();
        assert_eq!(plain.substitute(&BTreeMap::new()).unwrap(), plain);

        let e = s.substitute(&BTreeMap::new()).unwrap_err();
        assert!(e.to_string().contains("sdc_file"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("strategy.abc");
        let s = parse_script(SAMPLE_FRAGMENT).unwrap();
        s.write_file(&p).unwrap();
        let raw = std::fs::read_to_string(&p).unwrap();
        assert!(raw.ends_with('\n'));
        assert_eq!(AbcScript::read_file(&p).unwrap(), s);
    }

    #[test]
    fn serde_as_string() {
        let s = parse_script("strash;map -B 0.9").unwrap();
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, "\"strash;map -B 0.9\"");
        assert_eq!(serde_json::from_str::<AbcScript>(&j).unwrap(), s);
    }
}
