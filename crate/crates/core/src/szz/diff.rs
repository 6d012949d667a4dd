//! Unified-diff parsing and replay.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LineKind {
    Context,
    Removed,
    Added,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HunkLine {
    pub kind: LineKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub old_start: usize,
    pub old_len: usize,
    pub new_start: usize,
    pub new_len: usize,
    pub lines: Vec<HunkLine>,
}

impl Hunk {
    pub fn removed(&self) -> impl Iterator<Item = &str> {
        self.lines_of(LineKind::Removed)
    }

    pub fn added(&self) -> impl Iterator<Item = &str> {
        self.lines_of(LineKind::Added)
    }

    fn lines_of(&self, kind: LineKind) -> impl Iterator<Item = &str> {
        self.lines
            .iter()
            .filter(move |l| l.kind == kind)
            .map(|l| l.text.as_str())
    }

    /// One-based old line numbers of the removed lines.
    pub fn removed_line_numbers(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut old = self.old_start;
        for l in &self.lines {
            match l.kind {
                LineKind::Context => old += 1,
                LineKind::Removed => {
                    out.push(old);
                    old += 1;
                }
                LineKind::Added => {}
            }
        }
        out
    }

    /// Zero-based index of the first old line the hunk touches.
    fn old_offset(&self) -> usize {
        if self.old_len == 0 {
            self.old_start
        } else {
            self.old_start - 1
        }
    }
}

/// Changes to one file. A missing path stands for `/dev/null`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDiff {
    pub old_path: Option<String>,
    pub new_path: Option<String>,
    pub hunks: Vec<Hunk>,
}

impl FileDiff {
    pub fn touches(&self, path: &str) -> bool {
        self.old_path.as_deref() == Some(path) || self.new_path.as_deref() == Some(path)
    }
}

fn parse_path(raw: &str) -> Option<String> {
    // Drop a trailing "\t<timestamp>" as written by diff(1).
    let raw = raw.split('\t').next().unwrap_or("").trim_end();
    if raw == "/dev/null" {
        return None;
    }
    let stripped = raw
        .strip_prefix("a/")
        .or_else(|| raw.strip_prefix("b/"))
        .unwrap_or(raw);
    Some(stripped.to_string())
}

fn parse_range(s: &str) -> Option<(usize, usize)> {
    match s.split_once(',') {
        Some((start, len)) => Some((start.parse().ok()?, len.parse().ok()?)),
        None => Some((s.parse().ok()?, 1)),
    }
}

/// Parses `@@ -a,b +c,d @@`. Omitted lengths default to 1.
pub fn parse_hunk_header(line: &str) -> Option<(usize, usize, usize, usize)> {
    let rest = line.strip_prefix("@@ ")?;
    let end = rest.find(" @@")?;
    let mut parts = rest[..end].split(' ');
    let old = parts.next()?.strip_prefix('-')?;
    let new = parts.next()?.strip_prefix('+')?;
    if parts.next().is_some() {
        return None;
    }
    let (old_start, old_len) = parse_range(old)?;
    let (new_start, new_len) = parse_range(new)?;
    if (old_len > 0 && old_start == 0) || (new_len > 0 && new_start == 0) {
        return None;
    }
    Some((old_start, old_len, new_start, new_len))
}

/// Parses unified-diff text covering one or more files.
pub fn parse_unified_diff(text: &str) -> Result<Vec<FileDiff>, String> {
    let lines: Vec<&str> = text.lines().collect();
    let mut files = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        let Some(old) = line.strip_prefix("--- ") else {
            // git extended headers and anything before the first file header
            if line.starts_with("@@") {
                return Err(format!("line {}: hunk outside a file header", i + 1));
            }
            i += 1;
            continue;
        };
        let new = lines
            .get(i + 1)
            .and_then(|l| l.strip_prefix("+++ "))
            .ok_or_else(|| format!("line {}: `---` without following `+++`", i + 1))?;
        let mut file = FileDiff {
            old_path: parse_path(old),
            new_path: parse_path(new),
            hunks: Vec::new(),
        };
        if file.old_path.is_none() && file.new_path.is_none() {
            return Err(format!("line {}: both sides are /dev/null", i + 1));
        }
        i += 2;
        while i < lines.len() && lines[i].starts_with("@@") {
            let (old_start, old_len, new_start, new_len) = parse_hunk_header(lines[i])
                .ok_or_else(|| format!("line {}: malformed hunk header `{}`", i + 1, lines[i]))?;
            let header_line = i + 1;
            i += 1;
            let mut hunk = Hunk {
                old_start,
                old_len,
                new_start,
                new_len,
                lines: Vec::new(),
            };
            let (mut old_seen, mut new_seen) = (0, 0);
            while old_seen < old_len || new_seen < new_len {
                let Some(&body) = lines.get(i) else {
                    return Err(format!("line {header_line}: hunk truncated"));
                };
                i += 1;
                let (kind, text) = match body.chars().next() {
                    Some(' ') => (LineKind::Context, &body[1..]),
                    // Some tools strip the lone space of an empty context line.
                    None => (LineKind::Context, ""),
                    Some('-') => (LineKind::Removed, &body[1..]),
                    Some('+') => (LineKind::Added, &body[1..]),
                    Some('\\') => continue,
                    Some(_) => {
                        return Err(format!("line {i}: unexpected hunk line `{body}`"));
                    }
                };
                match kind {
                    LineKind::Context => {
                        old_seen += 1;
                        new_seen += 1;
                    }
                    LineKind::Removed => old_seen += 1,
                    LineKind::Added => new_seen += 1,
                }
                hunk.lines.push(HunkLine {
                    kind,
                    text: text.to_string(),
                });
            }
            if old_seen != old_len || new_seen != new_len {
                return Err(format!(
                    "line {header_line}: hunk body has {old_seen}/{new_seen} lines, header says {old_len}/{new_len}"
                ));
            }
            while lines.get(i).is_some_and(|l| l.starts_with('\\')) {
                i += 1;
            }
            file.hunks.push(hunk);
        }
        files.push(file);
    }
    Ok(files)
}

/// Applies the hunks of one file diff to `(content, origin)` and tags added
/// lines with `origin_of_added`. Context and removed lines must match.
pub fn apply<T: Clone>(
    content: &[String],
    origin: &[T],
    diff: &FileDiff,
    origin_of_added: T,
) -> Result<(Vec<String>, Vec<T>), String> {
    debug_assert_eq!(content.len(), origin.len());
    let mut out = Vec::with_capacity(content.len());
    let mut out_origin = Vec::with_capacity(content.len());
    let mut cursor = 0;
    for (h, hunk) in diff.hunks.iter().enumerate() {
        let start = hunk.old_offset();
        if start < cursor || start > content.len() {
            return Err(format!("hunk {h} starts at old line {} out of order or past end", hunk.old_start));
        }
        out.extend_from_slice(&content[cursor..start]);
        out_origin.extend_from_slice(&origin[cursor..start]);
        if out.len() + 1 != hunk.new_start.max(1) && hunk.new_len > 0 {
            return Err(format!(
                "hunk {h}: new start {} disagrees with replayed position {}",
                hunk.new_start,
                out.len() + 1
            ));
        }
        cursor = start;
        for line in &hunk.lines {
            match line.kind {
                LineKind::Context | LineKind::Removed => {
                    let Some(current) = content.get(cursor) else {
                        return Err(format!("hunk {h}: runs past end of file"));
                    };
                    if *current != line.text {
                        return Err(format!(
                            "hunk {h}: line {} is `{current}`, diff expects `{}`",
                            cursor + 1,
                            line.text
                        ));
                    }
                    if line.kind == LineKind::Context {
                        out.push(current.clone());
                        out_origin.push(origin[cursor].clone());
                    }
                    cursor += 1;
                }
                LineKind::Added => {
                    out.push(line.text.clone());
                    out_origin.push(origin_of_added.clone());
                }
            }
        }
    }
    out.extend_from_slice(&content[cursor..]);
    out_origin.extend_from_slice(&origin[cursor..]);
    Ok((out, out_origin))
}
