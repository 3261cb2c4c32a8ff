//! Line-delimited readers and writers.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Lines, Write};
use std::iter::Peekable;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{GtLine, PredLine, TrackletWire};
use super::{FrameGroundTruth, FramePrediction, RelationVocab, Tracklet};
use crate::error::{Error, Result};

/// A per-frame record that can be parsed from one line.
pub trait Record: Sized {
    #[doc(hidden)]
    type Wire: DeserializeOwned;

    #[doc(hidden)]
    fn from_wire(wire: Self::Wire, location: &str, vocab: Option<&RelationVocab>) -> Result<Self>;

    fn video_id(&self) -> &str;
    fn frame_idx(&self) -> u32;
}

impl Record for FrameGroundTruth {
    type Wire = GtLine;

    fn from_wire(wire: GtLine, location: &str, vocab: Option<&RelationVocab>) -> Result<Self> {
        FrameGroundTruth::from_wire(wire, location, vocab)
    }

    fn video_id(&self) -> &str {
        &self.video_id
    }

    fn frame_idx(&self) -> u32 {
        self.frame_idx
    }
}

impl Record for FramePrediction {
    type Wire = PredLine;

    fn from_wire(wire: PredLine, location: &str, vocab: Option<&RelationVocab>) -> Result<Self> {
        FramePrediction::from_wire(wire, location, vocab)
    }

    fn video_id(&self) -> &str {
        &self.video_id
    }

    fn frame_idx(&self) -> u32 {
        self.frame_idx
    }
}

/// Parses and validates one record per non-blank line. Yields the 1-based
/// line number with each record.
pub struct JsonlReader<R, T> {
    lines: Lines<R>,
    line_no: usize,
    source: String,
    vocab: Option<RelationVocab>,
    _record: std::marker::PhantomData<T>,
}

impl<T: Record> JsonlReader<BufReader<File>, T> {
    pub fn open(path: &Path, vocab: Option<RelationVocab>) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(
            BufReader::new(file),
            path.display().to_string(),
            vocab,
        ))
    }
}

impl<R: BufRead, T: Record> JsonlReader<R, T> {
    pub fn new(reader: R, source: impl Into<String>, vocab: Option<RelationVocab>) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            source: source.into(),
            vocab,
            _record: std::marker::PhantomData,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

impl<R: BufRead, T: Record> Iterator for JsonlReader<R, T> {
    type Item = Result<(usize, T)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.source, e))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let loc = format!("{}:{}", self.source, self.line_no);
            let parsed = serde_json::from_str::<T::Wire>(&line)
                .map_err(|e| Error::validation(&loc, format!("malformed record: {e}")))
                .and_then(|w| T::from_wire(w, &loc, self.vocab.as_ref()));
            return Some(parsed.map(|r| (self.line_no, r)));
        }
    }
}

/// Groups a record stream into per-video batches sorted by frame index.
///
/// Each video's lines must be contiguous; a video id that reappears after a
/// different one is rejected so memory stays bounded by one video.
pub struct VideoGroups<I: Iterator> {
    inner: Peekable<I>,
    source: String,
    finished: HashSet<String>,
}

impl<I, T> VideoGroups<I>
where
    I: Iterator<Item = Result<(usize, T)>>,
    T: Record,
{
    pub fn new(inner: I, source: impl Into<String>) -> Self {
        Self {
            inner: inner.peekable(),
            source: source.into(),
            finished: HashSet::new(),
        }
    }
}

impl<I, T> Iterator for VideoGroups<I>
where
    I: Iterator<Item = Result<(usize, T)>>,
    T: Record,
{
    type Item = Result<Vec<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        let (line, first) = match self.inner.next()? {
            Ok(r) => r,
            Err(e) => return Some(Err(e)),
        };
        let video = first.video_id().to_owned();
        if self.finished.contains(&video) {
            return Some(Err(Error::validation(
                format!("{}:{line}", self.source),
                format!("video {video:?} reappears after other videos; group each video's lines together"),
            )));
        }
        let mut batch = vec![(line, first)];
        while let Some(Ok((_, r))) = self.inner.peek() {
            if r.video_id() != video {
                break;
            }
            batch.push(self.inner.next().unwrap().unwrap());
        }
        if let Some(Err(_)) = self.inner.peek() {
            if let Some(Err(e)) = self.inner.next() {
                return Some(Err(e));
            }
        }
        self.finished.insert(video);
        Some(sort_frames(batch, &self.source))
    }
}

/// Stable sort by (video, frame) and reject duplicate frames.
fn sort_frames<T: Record>(mut records: Vec<(usize, T)>, source: &str) -> Result<Vec<T>> {
    records.sort_by(|(_, a), (_, b)| {
        (a.video_id(), a.frame_idx()).cmp(&(b.video_id(), b.frame_idx()))
    });
    for pair in records.windows(2) {
        let ((_, a), (line, b)) = (&pair[0], &pair[1]);
        if a.video_id() == b.video_id() && a.frame_idx() == b.frame_idx() {
            return Err(Error::validation(
                format!("{source}:{line}"),
                format!(
                    "duplicate frame {} of video {:?}",
                    b.frame_idx(),
                    b.video_id()
                ),
            ));
        }
    }
    Ok(records.into_iter().map(|(_, r)| r).collect())
}

fn read_all<T: Record>(path: &Path, vocab: Option<&RelationVocab>) -> Result<Vec<T>> {
    let reader = JsonlReader::<_, T>::open(path, vocab.cloned())?;
    let records = reader.collect::<Result<Vec<_>>>()?;
    sort_frames(records, &path.display().to_string())
}

/// Reads a ground-truth stream, grouped by video and sorted by frame.
pub fn read_gt_stream(path: &Path, vocab: Option<&RelationVocab>) -> Result<Vec<FrameGroundTruth>> {
    read_all(path, vocab)
}

/// Reads a prediction stream, grouped by video and sorted by frame.
pub fn read_pred_stream(
    path: &Path,
    vocab: Option<&RelationVocab>,
) -> Result<Vec<FramePrediction>> {
    read_all(path, vocab)
}

fn write_lines<W: Write, S: Serialize>(
    out: &mut W,
    items: impl Iterator<Item = S>,
) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, &item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Ground truth is written back in pixel coordinates.
pub fn write_gt_stream<W: Write>(out: &mut W, frames: &[FrameGroundTruth]) -> std::io::Result<()> {
    write_lines(out, frames.iter().map(FrameGroundTruth::to_wire))
}

/// Predictions are written in normalized coordinates.
pub fn write_pred_stream<W: Write>(out: &mut W, frames: &[FramePrediction]) -> std::io::Result<()> {
    write_lines(out, frames.iter().map(FramePrediction::to_wire))
}

pub fn write_tracklets<W: Write>(out: &mut W, tracklets: &[Tracklet]) -> std::io::Result<()> {
    let wire: Vec<TrackletWire> = tracklets.iter().map(Tracklet::to_wire).collect();
    serde_json::to_writer_pretty(&mut *out, &wire)?;
    out.write_all(b"\n")
}

pub fn read_tracklets(path: &Path) -> Result<Vec<Tracklet>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    let wire: Vec<TrackletWire> = serde_json::from_str(&text)
        .map_err(|e| Error::validation(&source, format!("malformed tracklets: {e}")))?;
    wire.into_iter()
        .enumerate()
        .map(|(i, w)| Tracklet::from_wire(w, &format!("{source}[{i}]")))
        .collect()
}
