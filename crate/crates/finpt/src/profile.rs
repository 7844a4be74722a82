//! Instruction templating, the deterministic fallback profile renderer, and
//! the JSONL profile cache.
//!
//! Every row is rendered once into an instruction ("Construct a concise
//! customer profile description including all the following information:
//! name: value; ..."), turned into a profile paragraph either by the chat
//! client ([`crate::chat`]) or by [`fallback_profile`], and cached on disk so
//! training never re-generates text.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnSchema, Value};
use crate::{Error, Result};

/// Instruction template prefix; the pair list follows after a single space.
pub const INSTRUCTION_PREFIX: &str =
    "Construct a concise customer profile description including all the following information:";

/// Fallback profile opener; one "The <name> is <value>." sentence per pair
/// follows after a single space each.
pub const FALLBACK_PREFIX: &str = "This customer has the following attributes.";

/// The Step-1 instruction for one row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub row_id: usize,
    pub text: String,
}

/// Where a profile came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileSource {
    Llm,
    Fallback,
}

/// A row's instruction, generated profile, and provenance. Field order is
/// the cache's on-disk key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub row_id: usize,
    pub instruction: String,
    pub profile: String,
    pub source: ProfileSource,
    pub model_id: String,
}

/// Renders one row into the instruction string: the template prefix followed
/// by "name: value;" pairs in schema order, separated by single spaces.
pub fn build_instruction(
    row: &[Value],
    schema: &[ColumnSchema],
    row_id: usize,
) -> Result<Instruction> {
    if row.len() != schema.len() {
        return Err(Error::Validation(format!(
            "row {row_id}: {} values for {} schema columns",
            row.len(),
            schema.len()
        )));
    }
    if schema.is_empty() {
        log::warn!("row {row_id}: empty schema, instruction carries no key-value pairs");
    }
    let mut text = String::from(INSTRUCTION_PREFIX);
    for (col, value) in schema.iter().zip(row) {
        text.push(' ');
        text.push_str(&col.name);
        text.push_str(": ");
        text.push_str(&value.to_string());
        text.push(';');
    }
    Ok(Instruction { row_id, text })
}

fn parse_pairs(instruction_text: &str) -> Result<Vec<(String, String)>> {
    let rest = instruction_text.strip_prefix(INSTRUCTION_PREFIX).ok_or_else(|| {
        Error::Validation("instruction does not start with the expected template prefix".into())
    })?;
    let mut pairs = Vec::new();
    for chunk in rest.split(';') {
        let chunk = chunk.trim();
        if chunk.is_empty() {
            continue;
        }
        let (name, value) = chunk.split_once(':').ok_or_else(|| {
            Error::Validation(format!("instruction pair {chunk:?} has no colon"))
        })?;
        pairs.push((name.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Deterministic offline substitute for the chat-completion step: one
/// "The <name> is <value>." sentence per instruction pair. Byte-identical
/// across runs for identical instructions.
pub fn fallback_profile(instr: &Instruction) -> Result<ProfileRecord> {
    let pairs = parse_pairs(&instr.text)?;
    let mut profile = String::from(FALLBACK_PREFIX);
    for (name, value) in &pairs {
        profile.push_str(" The ");
        profile.push_str(name);
        profile.push_str(" is ");
        profile.push_str(value);
        profile.push('.');
    }
    Ok(ProfileRecord {
        row_id: instr.row_id,
        instruction: instr.text.clone(),
        profile,
        source: ProfileSource::Fallback,
        model_id: "fallback".to_string(),
    })
}

/// Writes records as JSONL in ascending row_id, one object per line.
/// Returns the number of lines written. Duplicate row_ids are an error.
pub fn save_profile_cache(records: &[ProfileRecord], path: &Path) -> Result<usize> {
    let mut sorted: Vec<&ProfileRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.row_id);
    let mut seen = HashSet::new();
    for r in &sorted {
        if !seen.insert(r.row_id) {
            return Err(Error::Cache(format!("duplicate row_id {}", r.row_id)));
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(path)?;
    for r in &sorted {
        serde_json::to_writer(&mut file, r)?;
        file.write_all(b"\n")?;
    }
    Ok(sorted.len())
}

/// Loads a JSONL cache written by [`save_profile_cache`]. Malformed lines
/// are reported with their 1-based line number.
pub fn load_profile_cache(path: &Path) -> Result<Vec<ProfileRecord>> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Cache(format!("{}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ProfileRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Cache(format!("line {}: {e}", i + 1)))?;
        if record.profile.is_empty() {
            return Err(Error::Cache(format!("line {}: empty profile", i + 1)));
        }
        if !seen.insert(record.row_id) {
            return Err(Error::Cache(format!("line {}: duplicate row_id {}", i + 1, record.row_id)));
        }
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ColumnSchema;

    fn gender_age_instruction() -> Instruction {
        let schema = vec![
            ColumnSchema::categorical("Gender", vec!["Female".into(), "Male".into()]),
            ColumnSchema::numeric("Age"),
        ];
        let row = vec![Value::Categorical("Female".into()), Value::Numeric(32.0)];
        build_instruction(&row, &schema, 0).unwrap()
    }

    #[test]
    fn instruction_matches_template() {
        let instr = gender_age_instruction();
        assert_eq!(
            instr.text,
            "Construct a concise customer profile description including all the following \
             information: Gender: Female; Age: 32;"
        );
    }

    #[test]
    fn instruction_renders_integral_numeric_without_decimal() {
        let schema = vec![ColumnSchema::numeric("Income")];
        let row = vec![Value::Numeric(50000.0)];
        let instr = build_instruction(&row, &schema, 3).unwrap();
        assert!(instr.text.ends_with(" Income: 50000;"), "{}", instr.text);
    }

    #[test]
    fn instruction_zero_columns_is_bare_prefix() {
        let instr = build_instruction(&[], &[], 0).unwrap();
        assert_eq!(instr.text, INSTRUCTION_PREFIX);
    }

    #[test]
    fn instruction_rejects_length_mismatch() {
        let schema = vec![ColumnSchema::numeric("Age")];
        assert!(build_instruction(&[], &schema, 0).is_err());
    }

    #[test]
    fn instruction_contains_each_pair_once_in_order() {
        let schema = vec![
            ColumnSchema::numeric("A"),
            ColumnSchema::numeric("B"),
            ColumnSchema::numeric("C"),
        ];
        let row = vec![Value::Numeric(1.0), Value::Numeric(2.0), Value::Numeric(3.0)];
        let instr = build_instruction(&row, &schema, 0).unwrap();
        for pair in ["A: 1;", "B: 2;", "C: 3;"] {
            assert_eq!(instr.text.matches(pair).count(), 1);
        }
        let a = instr.text.find("A: 1;").unwrap();
        let b = instr.text.find("B: 2;").unwrap();
        let c = instr.text.find("C: 3;").unwrap();
        assert!(a < b && b < c);
    }

    #[test]
    fn fallback_renders_one_sentence_per_pair() {
        let instr = Instruction {
            row_id: 0,
            text: format!("{INSTRUCTION_PREFIX} Age: 32;"),
        };
        let rec = fallback_profile(&instr).unwrap();
        assert_eq!(rec.profile, "This customer has the following attributes. The Age is 32.");
        assert_eq!(rec.source, ProfileSource::Fallback);
        assert_eq!(rec.model_id, "fallback");
    }

    #[test]
    fn fallback_is_deterministic_and_injective_on_values() {
        let a = fallback_profile(&gender_age_instruction()).unwrap();
        let b = fallback_profile(&gender_age_instruction()).unwrap();
        assert_eq!(a.profile, b.profile);

        let schema = vec![ColumnSchema::numeric("Age")];
        let young = build_instruction(&[Value::Numeric(31.0)], &schema, 0).unwrap();
        let old = build_instruction(&[Value::Numeric(32.0)], &schema, 0).unwrap();
        assert_ne!(
            fallback_profile(&young).unwrap().profile,
            fallback_profile(&old).unwrap().profile
        );
    }

    #[test]
    fn fallback_preserves_commas_in_values() {
        let instr = Instruction {
            row_id: 0,
            text: format!("{INSTRUCTION_PREFIX} City: San Jose, CA;"),
        };
        let rec = fallback_profile(&instr).unwrap();
        assert_eq!(
            rec.profile,
            "This customer has the following attributes. The City is San Jose, CA."
        );
    }

    #[test]
    fn fallback_rejects_missing_prefix() {
        let instr = Instruction { row_id: 0, text: "Age: 32;".into() };
        assert!(matches!(fallback_profile(&instr), Err(Error::Validation(_))));
    }

    fn sample_records() -> Vec<ProfileRecord> {
        (0..3)
            .map(|i| ProfileRecord {
                row_id: 2 - i, // out of order on purpose
                instruction: format!("{INSTRUCTION_PREFIX} Age: {};", 30 + i),
                profile: format!("This customer has the following attributes. The Age is {}.", 30 + i),
                source: ProfileSource::Fallback,
                model_id: "fallback".into(),
            })
            .collect()
    }

    #[test]
    fn cache_roundtrip_sorted_by_row_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profiles.jsonl");
        let records = sample_records();
        let written = save_profile_cache(&records, &path).unwrap();
        assert_eq!(written, 3);

        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);

        let loaded = load_profile_cache(&path).unwrap();
        assert_eq!(loaded.len(), 3);
        let ids: Vec<usize> = loaded.iter().map(|r| r.row_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        let mut expected = records;
        expected.sort_by_key(|r| r.row_id);
        assert_eq!(loaded, expected);
    }

    #[test]
    fn cache_rejects_duplicate_row_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profiles.jsonl");
        let mut records = sample_records();
        records[1].row_id = 5;
        records[2].row_id = 5;
        match save_profile_cache(&records, &path) {
            Err(Error::Cache(msg)) => assert!(msg.contains("duplicate row_id 5"), "{msg}"),
            other => panic!("expected cache error, got {other:?}"),
        }
    }

    #[test]
    fn cache_load_names_malformed_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profiles.jsonl");
        save_profile_cache(&sample_records(), &path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{not json\n");
        std::fs::write(&path, text).unwrap();
        match load_profile_cache(&path) {
            Err(Error::Cache(msg)) => assert!(msg.starts_with("line 4"), "{msg}"),
            other => panic!("expected cache error, got {other:?}"),
        }
    }
}
