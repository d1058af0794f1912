//! Tab-separated manifest: one utterance per line after a header naming the
//! columns. Columns are `id`, `split`, the eight category vote counts,
//! `other`, `arousal`, `valence`, `dominance`, then one `feature:<modality>`
//! path per modality (relative to the manifest's directory).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::corpus::{
    AttributeTriple, Corpus, Split, Utterance, VoteVector, CATEGORIES, NUM_CLASSES,
};
use crate::error::{Error, Result};

const FEATURE_PREFIX: &str = "feature:";
const OTHER: &str = "other";

/// A manifest row that could not be used for classification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exclusion {
    pub id: String,
    pub line: usize,
    pub reason: String,
}

struct Columns {
    id: usize,
    split: usize,
    votes: [usize; NUM_CLASSES],
    other: usize,
    attributes: [usize; 3],
    features: Vec<(String, usize)>,
}

impl Columns {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingField {
                    line: 1,
                    field: name.to_string(),
                })
        };
        let mut votes = [0; NUM_CLASSES];
        for (slot, name) in votes.iter_mut().zip(CATEGORIES) {
            *slot = find(name)?;
        }
        let features = header
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.strip_prefix(FEATURE_PREFIX).map(|m| (m.to_string(), i)))
            .collect();
        Ok(Self {
            id: find("id")?,
            split: find("split")?,
            votes,
            other: find(OTHER)?,
            attributes: [find("arousal")?, find("valence")?, find("dominance")?],
            features,
        })
    }
}

/// Reads a manifest. Rows whose votes cannot be normalized are listed in
/// [`Corpus::exclusions`] instead of the utterance list.
pub fn load_manifest(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let cols = Columns::from_header(&header)?;

    let mut utterances = Vec::new();
    let mut exclusions = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |idx: usize, name: &str| -> Result<&str> {
            match record.get(idx) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(Error::MissingField {
                    line,
                    field: name.to_string(),
                }),
            }
        };
        let parse_err = |message: String| Error::Parse { line, message };

        let id = field(cols.id, "id")?.to_string();
        let split: Split = field(cols.split, "split")?.parse().map_err(parse_err)?;
        let mut counts = [0u32; NUM_CLASSES];
        for (c, (&idx, name)) in cols.votes.iter().zip(CATEGORIES).enumerate() {
            counts[c] = field(idx, name)?
                .parse()
                .map_err(|e| parse_err(format!("vote count `{name}`: {e}")))?;
        }
        let extra = field(cols.other, OTHER)?
            .parse()
            .map_err(|e| parse_err(format!("vote count `{OTHER}`: {e}")))?;
        let mut attrs = [0.0; 3];
        for (a, (&idx, name)) in
            attrs.iter_mut().zip(
                cols.attributes
                    .iter()
                    .zip(["arousal", "valence", "dominance"]),
            )
        {
            *a = field(idx, name)?
                .parse()
                .map_err(|e| parse_err(format!("attribute `{name}`: {e}")))?;
        }
        let attributes = AttributeTriple::from_array(attrs);
        if !attributes.in_raw_range() {
            return Err(parse_err(format!("attributes {attrs:?} outside [1, 7]")));
        }
        let mut features = BTreeMap::new();
        for (modality, idx) in &cols.features {
            let p = field(*idx, &format!("{FEATURE_PREFIX}{modality}"))?;
            features.insert(modality.clone(), PathBuf::from(p));
        }

        match Utterance::from_votes(
            id.clone(),
            split,
            VoteVector::new(counts, extra),
            attributes,
            features,
        ) {
            Ok(u) => utterances.push(u),
            Err(Error::ZeroVotes) => exclusions.push(Exclusion {
                id,
                line,
                reason: "no in-category votes".into(),
            }),
            Err(e) => return Err(e),
        }
    }

    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Corpus {
        root,
        modalities: cols.features.into_iter().map(|(m, _)| m).collect(),
        utterances,
        exclusions,
    })
}

/// Writes the corpus utterances in manifest format.
pub fn write_manifest(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut out = String::new();
    let mut header: Vec<String> = vec!["id".into(), "split".into()];
    header.extend(CATEGORIES.iter().map(|c| c.to_string()));
    header.push(OTHER.into());
    header.extend(["arousal", "valence", "dominance"].map(String::from));
    header.extend(
        corpus
            .modalities
            .iter()
            .map(|m| format!("{FEATURE_PREFIX}{m}")),
    );
    out.push_str(&header.join("\t"));
    out.push('\n');
    for u in &corpus.utterances {
        let mut row: Vec<String> = vec![u.id.clone(), u.split.as_str().into()];
        row.extend(u.votes.counts.iter().map(|c| c.to_string()));
        row.push(u.votes.extra_count.to_string());
        row.extend(u.attributes.to_array().iter().map(|a| a.to_string()));
        for m in &corpus.modalities {
            let p = u
                .features
                .get(m)
                .ok_or_else(|| Error::ModalityMissing(m.clone()))?;
            row.push(p.to_string_lossy().into_owned());
        }
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_exclusion_report(path: &Path, exclusions: &[Exclusion]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    for e in exclusions {
        writeln!(file, "{}\tline {}\t{}", e.id, e.line, e.reason)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "id\tsplit\tanger\thappiness\tsadness\tfear\tsurprise\tcontempt\tdisgust\tneutral\tother\tarousal\tvalence\tdominance\tfeature:audio\tfeature:text";

    fn write(dir: &Path, rows: &[&str]) -> PathBuf {
        let path = dir.join("manifest.tsv");
        let mut text = String::from(HEADER);
        text.push('\n');
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn loads_well_formed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            &[
                "a\ttrain\t0\t2\t0\t0\t0\t0\t0\t1\t0\t4\t3.5\t2\ta.audio\ta.text",
                "b\tval\t3\t0\t0\t0\t0\t0\t0\t0\t1\t1\t7\t6.25\tb.audio\tb.text",
                "c\ttest\t1\t1\t1\t1\t1\t1\t1\t1\t0\t2\t2\t2\tc.audio\tc.text",
            ],
        );
        let corpus = load_manifest(&path).unwrap();
        assert_eq!(corpus.len(), 3);
        assert!(corpus.exclusions.is_empty());
        assert_eq!(
            corpus.modalities,
            vec!["audio".to_string(), "text".to_string()]
        );
        let a = &corpus.utterances[0];
        assert_eq!(a.hard_label, 1);
        assert!((a.target.probs[7] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(corpus.utterances[1].split, Split::Val);
        assert_eq!(corpus.utterances[2].hard_label, 0);
        assert_eq!(
            corpus.feature_path(a, "text").unwrap(),
            dir.path().join("a.text")
        );
    }

    #[test]
    fn zero_vote_rows_are_excluded() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            &[
                "a\ttrain\t0\t2\t0\t0\t0\t0\t0\t1\t0\t4\t4\t4\ta.audio\ta.text",
                "z\ttrain\t0\t0\t0\t0\t0\t0\t0\t0\t3\t4\t4\t4\tz.audio\tz.text",
            ],
        );
        let corpus = load_manifest(&path).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.exclusions.len(), 1);
        assert_eq!(corpus.exclusions[0].id, "z");
        assert_eq!(corpus.exclusions[0].line, 3);

        let report = dir.path().join("excluded.txt");
        write_exclusion_report(&report, &corpus.exclusions).unwrap();
        assert!(fs::read_to_string(report)
            .unwrap()
            .starts_with("z\tline 3\t"));
    }

    #[test]
    fn errors_carry_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            &["a\ttrain\t0\tx\t0\t0\t0\t0\t0\t1\t0\t4\t4\t4\ta\ta"],
        );
        assert!(matches!(
            load_manifest(&path),
            Err(Error::Parse { line: 2, .. })
        ));

        let path = write(
            dir.path(),
            &["a\ttrain\t0\t1\t0\t0\t0\t0\t0\t1\t0\t4\t9\t4\ta\ta"],
        );
        assert!(matches!(
            load_manifest(&path),
            Err(Error::Parse { line: 2, .. })
        ));

        let path = write(
            dir.path(),
            &["a\ttrain\t0\t1\t0\t0\t0\t0\t0\t1\t0\t4\t\t4\ta\ta"],
        );
        match load_manifest(&path) {
            Err(Error::MissingField { line: 2, field }) => assert_eq!(field, "valence"),
            other => panic!("unexpected {other:?}"),
        }

        let path = dir.path().join("bad.tsv");
        fs::write(&path, "id\tsplit\n").unwrap();
        match load_manifest(&path) {
            Err(Error::MissingField { line: 1, field }) => assert_eq!(field, "anger"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_feature_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            &[
                "a\ttrain\t0\t2\t0\t0\t0\t0\t0\t1\t0\t4\t4\t4\ta.audio\ta.text",
                "b\ttrain\t0\t2\t0\t0\t0\t0\t0\t1\t0\t4\t4\t4\tb.audio\tb.text",
            ],
        );
        for f in ["a.audio", "a.text", "b.audio"] {
            fs::write(dir.path().join(f), b"").unwrap();
        }
        let corpus = load_manifest(&path).unwrap();
        let mods = corpus.modalities.clone();
        match corpus.validate_features(&mods) {
            Err(Error::MissingFeatureFile { ids }) => assert_eq!(ids, vec!["b".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(corpus.validate_features(&["audio".to_string()]).is_ok());
    }

    #[test]
    fn write_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let src = write(
            dir.path(),
            &[
                "a\ttrain\t0\t2\t0\t0\t0\t0\t0\t1\t2\t4.125\t3.3333333333333335\t2\ta.audio\ta.text",
                "b\tval\t3\t0\t0\t1\t0\t0\t0\t0\t0\t1\t7\t6.25\tb.audio\tb.text",
            ],
        );
        let corpus = load_manifest(&src).unwrap();
        let out = dir.path().join("copy/manifest.tsv");
        write_manifest(&out, &corpus).unwrap();
        let again = load_manifest(&out).unwrap();
        assert_eq!(again.utterances, corpus.utterances);
        assert_eq!(again.modalities, corpus.modalities);
    }
}
