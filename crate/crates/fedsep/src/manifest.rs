//! Tab-separated corpus manifests.
//!
//! Field order: `clip_id speaker_id role split duration_s path [ref1_path ref2_path]`,
//! preceded by a header line. Paths are relative to the manifest's directory.

use std::path::Path;

use fedsep_core::data::{Manifest, ManifestEntry, Role, Split};

use crate::error::{Error, Result};

pub const HEADER: [&str; 8] =
    ["clip_id", "speaker_id", "role", "split", "duration_s", "path", "ref1_path", "ref2_path"];

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    w.write_record(HEADER).map_err(|e| csv_error(path, e))?;
    for e in manifest.entries() {
        let mut rec = vec![
            e.clip_id.clone(),
            e.speaker_id.to_string(),
            e.role.as_str().to_string(),
            e.split.as_str().to_string(),
            e.duration_s.to_string(),
            e.path.clone(),
        ];
        if let Some((r1, r2)) = &e.references {
            rec.push(r1.clone());
            rec.push(r2.clone());
        }
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let mut r = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .flexible(true)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().take(6).ne(HEADER.iter().take(6).copied()) {
        return Err(Error::format(path, "manifest header does not match the expected field order"));
    }
    let mut entries = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = i + 2;
        let bad = |what: &str| Error::format(path, format!("line {line}: {what}"));
        if rec.len() != 6 && rec.len() != 8 {
            return Err(bad("expected 6 or 8 fields"));
        }
        let references = (rec.len() == 8).then(|| (rec[6].to_string(), rec[7].to_string()));
        entries.push(ManifestEntry {
            clip_id: rec[0].to_string(),
            speaker_id: rec[1].parse().map_err(|_| bad("speaker_id is not an integer"))?,
            role: Role::parse(&rec[2]).ok_or_else(|| bad("role must be mixture or noise"))?,
            split: Split::parse(&rec[3]).ok_or_else(|| bad("split must be train, valid or test"))?,
            duration_s: rec[4].parse().map_err(|_| bad("duration_s is not a number"))?,
            path: rec[5].to_string(),
            references,
        });
    }
    Ok(Manifest::new(entries)?)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io { path: path.to_path_buf(), source },
            _ => unreachable!(),
        }
    } else {
        Error::format(path, e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.tsv");
        let m = Manifest::new(vec![
            ManifestEntry {
                clip_id: "a".into(),
                speaker_id: 3,
                role: Role::Mixture,
                split: Split::Train,
                duration_s: 0.5,
                path: "audio/a.wav".into(),
                references: Some(("audio/a_s.wav".into(), "audio/a_n.wav".into())),
            },
            ManifestEntry {
                clip_id: "b".into(),
                speaker_id: 4,
                role: Role::Noise,
                split: Split::Test,
                duration_s: 0.25,
                path: "audio/b.wav".into(),
                references: None,
            },
        ])
        .unwrap();
        write_manifest(&path, &m).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), m);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("clip_id\tspeaker_id\trole\tsplit\tduration_s\tpath\tref1_path\tref2_path\n"));
    }

    #[test]
    fn rejects_bad_role() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        std::fs::write(&path, format!("{}\nx\t1\tspeech\ttrain\t1\tx.wav\n", HEADER.join("\t"))).unwrap();
        let e = read_manifest(&path).unwrap_err();
        assert_eq!(e.code(), "E_FORMAT");
        assert!(e.to_string().contains("line 2"));
    }
}
