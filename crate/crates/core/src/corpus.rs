//! Parallel corpus ingestion: `<dir>/<utt-id>.wav`, paired by file stem.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::audio::{load_wav, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct UtterancePair {
    pub id: String,
    pub source: Waveform,
    pub target: Waveform,
}

impl UtterancePair {
    pub fn new(id: impl Into<String>, source: Waveform, target: Waveform) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Config("utterance id must be nonempty".into()));
        }
        if source.sample_rate != target.sample_rate {
            return Err(Error::RateMismatch {
                context: format!("pair {id}"),
                expected: source.sample_rate,
                found: target.sample_rate,
            });
        }
        Ok(Self { id, source, target })
    }

    pub fn sample_rate(&self) -> u32 {
        self.source.sample_rate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    pub source_speaker: String,
    pub target_speaker: String,
    pub pairs: Vec<UtterancePair>,
}

impl ParallelCorpus {
    /// Builds a corpus, sorting pairs by id and rejecting duplicates.
    pub fn new(
        source_speaker: impl Into<String>,
        target_speaker: impl Into<String>,
        mut pairs: Vec<UtterancePair>,
    ) -> Result<Self> {
        pairs.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = pairs.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::Config(format!("duplicate utterance id {}", w[0].id)));
        }
        Ok(Self {
            source_speaker: source_speaker.into(),
            target_speaker: target_speaker.into(),
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sample_rate(&self) -> Option<u32> {
        self.pairs.first().map(|p| p.sample_rate())
    }

    /// First `n` pairs (by id) as a new corpus.
    pub fn truncated(&self, n: usize) -> ParallelCorpus {
        ParallelCorpus {
            source_speaker: self.source_speaker.clone(),
            target_speaker: self.target_speaker.clone(),
            pairs: self.pairs.iter().take(n).cloned().collect(),
        }
    }

    /// Same utterances with the speaker roles exchanged.
    pub fn swapped(&self) -> ParallelCorpus {
        ParallelCorpus {
            source_speaker: self.target_speaker.clone(),
            target_speaker: self.source_speaker.clone(),
            pairs: self
                .pairs
                .iter()
                .map(|p| UtterancePair {
                    id: p.id.clone(),
                    source: p.target.clone(),
                    target: p.source.clone(),
                })
                .collect(),
        }
    }
}

/// Files present in only one of the two directories.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub unmatched_source: Vec<String>,
    pub unmatched_target: Vec<String>,
}

fn wav_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_wav = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("wav"))
            .unwrap_or(false);
        if !is_wav || !path.is_file() {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

fn speaker_label(dir: &Path) -> String {
    dir.file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("speaker")
        .to_string()
}

/// Loads matching utterances from two speaker directories.
///
/// Pairs are sorted by id and limited to the first `limit`. Files without a
/// partner are returned in the report and logged.
pub fn ingest_corpus(
    src_dir: impl AsRef<Path>,
    tgt_dir: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<(ParallelCorpus, IngestReport)> {
    let (src_dir, tgt_dir) = (src_dir.as_ref(), tgt_dir.as_ref());
    let src = wav_stems(src_dir)?;
    let tgt = wav_stems(tgt_dir)?;
    let src_ids: BTreeSet<&String> = src.keys().collect();
    let tgt_ids: BTreeSet<&String> = tgt.keys().collect();
    let report = IngestReport {
        unmatched_source: src_ids.difference(&tgt_ids).map(|s| s.to_string()).collect(),
        unmatched_target: tgt_ids.difference(&src_ids).map(|s| s.to_string()).collect(),
    };
    for id in report.unmatched_source.iter() {
        log::warn!("{id}: present in {} only", src_dir.display());
    }
    for id in report.unmatched_target.iter() {
        log::warn!("{id}: present in {} only", tgt_dir.display());
    }
    let mut ids: Vec<&String> = src_ids.intersection(&tgt_ids).copied().collect();
    if let Some(n) = limit {
        ids.truncate(n);
    }
    if ids.is_empty() {
        return Err(Error::EmptyCorpus {
            source_dir: src_dir.into(),
            target_dir: tgt_dir.into(),
        });
    }
    let pairs = ids
        .par_iter()
        .map(|id| {
            let s = load_wav(&src[*id])?;
            let t = load_wav(&tgt[*id])?;
            UtterancePair::new(id.as_str(), s, t)
        })
        .collect::<Result<Vec<_>>>()?;
    let corpus = ParallelCorpus::new(speaker_label(src_dir), speaker_label(tgt_dir), pairs)?;
    Ok((corpus, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::save_wav;

    fn touch(dir: &Path, stem: &str, rate: u32) {
        let w = Waveform::new(vec![0.1, -0.1, 0.2], rate).unwrap();
        save_wav(&w, dir.join(format!("{stem}.wav"))).unwrap();
    }

    #[test]
    fn pairs_by_stem_and_reports_leftovers() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for s in ["a", "b", "c"] {
            touch(a.path(), s, 16000);
        }
        for s in ["b", "c", "d"] {
            touch(b.path(), s, 16000);
        }
        std::fs::write(a.path().join("notes.txt"), "x").unwrap();
        let (corpus, report) = ingest_corpus(a.path(), b.path(), None).unwrap();
        let ids: Vec<_> = corpus.pairs.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["b", "c"]);
        assert_eq!(report.unmatched_source, ["a"]);
        assert_eq!(report.unmatched_target, ["d"]);

        let (swapped, _) = ingest_corpus(b.path(), a.path(), None).unwrap();
        let ids2: Vec<_> = swapped.pairs.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ids2);
        assert_eq!(swapped, corpus.swapped());
    }

    #[test]
    fn limit_caps_pairs() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for i in 0..10 {
            let stem = format!("arctic_a{i:04}");
            touch(a.path(), &stem, 16000);
            touch(b.path(), &stem, 16000);
        }
        assert_eq!(ingest_corpus(a.path(), b.path(), Some(8)).unwrap().0.len(), 8);
        let (two, _) = ingest_corpus(a.path(), b.path(), Some(2)).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two.pairs[0].id, "arctic_a0000");
    }

    #[test]
    fn empty_and_rate_mismatch() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        touch(a.path(), "x", 16000);
        touch(b.path(), "y", 16000);
        assert!(matches!(
            ingest_corpus(a.path(), b.path(), None),
            Err(Error::EmptyCorpus { .. })
        ));
        touch(b.path(), "x", 8000);
        assert!(matches!(
            ingest_corpus(a.path(), b.path(), None),
            Err(Error::RateMismatch { .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let w = Waveform::new(vec![0.0], 16000).unwrap();
        let p = UtterancePair::new("u", w.clone(), w.clone()).unwrap();
        assert!(ParallelCorpus::new("s", "t", vec![p.clone(), p]).is_err());
        assert!(UtterancePair::new("", w.clone(), w).is_err());
    }
}
