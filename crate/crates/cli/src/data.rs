use std::path::{Path, PathBuf};

use dualcse::corpus::{
    load_inli, load_pairwise, synthetic_splits, to_eis_pairs_from_inli, DatasetSplit, EisPair, SplitManifest,
    SplitName, SyntheticSplits,
};

use crate::args::{DataArgs, PairFormat};
use crate::failure::{CliResult, Failure};
use crate::manifest::RunManifest;

pub const SPLIT_FILES: [(SplitName, &str); 3] = [
    (SplitName::Train, "train.jsonl"),
    (SplitName::Development, "dev.jsonl"),
    (SplitName::Test, "test.jsonl"),
];

/// Optional size declaration next to the split files.
const SIZES_FILE: &str = "splits.json";

pub struct Splits {
    pub train: DatasetSplit,
    pub dev: DatasetSplit,
    pub test: DatasetSplit,
    pub synthetic: Option<SyntheticSplits>,
}

pub fn synthetic(data: &DataArgs, seed: u64) -> CliResult<SyntheticSplits> {
    Ok(synthetic_splits(seed, data.n_train, data.n_eval, data.n_eval, data.vocab_size)?)
}

/// Loads the splits named by `--data` and records the files read.
pub fn load_splits(data: &DataArgs, seed: u64, manifest: &mut RunManifest) -> CliResult<Splits> {
    if data.data == "synthetic" {
        let s = synthetic(data, seed)?;
        return Ok(Splits {
            train: s.train.split.clone(),
            dev: s.dev.split.clone(),
            test: s.test.split.clone(),
            synthetic: Some(s),
        });
    }
    let dir = Path::new(&data.data);
    if !dir.is_dir() {
        return Err(Failure::data(format!(
            "--data must be `synthetic` or a directory, got {}",
            dir.display()
        )));
    }
    let sizes = dir.join(SIZES_FILE);
    let declared = if sizes.is_file() {
        manifest.input(&sizes)?;
        Some(SplitManifest::load(&sizes)?)
    } else {
        None
    };
    let mut loaded = Vec::new();
    for (name, file) in SPLIT_FILES {
        let path = dir.join(file);
        manifest.input(&path)?;
        let split = load_inli(&path, name)?;
        if let Some(m) = &declared {
            m.check(&split)?;
        }
        loaded.push(split);
    }
    let [train, dev, test]: [DatasetSplit; 3] = loaded.try_into().expect("three splits");
    Ok(Splits {
        train,
        dev,
        test,
        synthetic: None,
    })
}

/// Writes the synthetic splits and their template records into `dir`.
pub fn write_synthetic(s: &SyntheticSplits, dir: &Path, manifest: &mut RunManifest) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    for ((_, file), corpus) in SPLIT_FILES.iter().zip([&s.train, &s.dev, &s.test]) {
        let path = dir.join(file);
        corpus.split.write_jsonl(&path)?;
        manifest.output(&path);
        written.push(path);
    }
    let templates = dir.join("templates.jsonl");
    let lines: Vec<String> = [&s.train, &s.dev, &s.test]
        .iter()
        .flat_map(|c| c.records.iter())
        .map(|r| serde_json::to_string(r).expect("records serialize"))
        .collect();
    std::fs::write(&templates, lines.join("\n") + "\n")
        .map_err(|e| Failure::data(format!("{}: {e}", templates.display())))?;
    manifest.output(&templates);
    written.push(templates);
    Ok(written)
}

fn first_record_has_premise(path: &Path) -> CliResult<bool> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Failure::data(format!("{} has no records", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(first)
        .map_err(|e| Failure::data(format!("{}: line 1: malformed JSON: {e}", path.display())))?;
    Ok(value.get("premise").is_some())
}

pub fn load_pairs(path: &Path, format: PairFormat, seed: u64) -> CliResult<Vec<EisPair>> {
    let inli = match format {
        PairFormat::Inli => true,
        PairFormat::Pairwise => false,
        PairFormat::Auto => first_record_has_premise(path)?,
    };
    let pairs = if inli {
        to_eis_pairs_from_inli(&load_inli(path, SplitName::Test)?, seed)
    } else {
        load_pairwise(path, seed)?
    };
    if pairs.is_empty() {
        return Err(Failure::data(format!("{} yields no pairs", path.display())));
    }
    Ok(pairs)
}

/// Premises from a query file: plain lines, or JSON objects with `premise`.
pub fn load_queries(path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('{') {
            let v: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| Failure::data(format!("{}: line {}: {e}", path.display(), i + 1)))?;
            let p = v
                .get("premise")
                .and_then(|p| p.as_str())
                .ok_or_else(|| Failure::data(format!("{}: line {}: missing `premise`", path.display(), i + 1)))?;
            out.push(p.to_string());
        } else {
            out.push(line.to_string());
        }
    }
    if out.is_empty() {
        return Err(Failure::data(format!("query file {} is empty", path.display())));
    }
    Ok(out)
}
