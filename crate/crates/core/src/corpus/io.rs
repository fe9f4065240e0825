//! Tab-separated line records.
//!
//! ```text
//! #relations<TAB>NA*<TAB>born_in<TAB>works_for
//! s1<TAB>born_in<TAB>0<TAB>0<TAB>4<TAB>5<TAB>Jobs was born in San Francisco
//! ```
//!
//! The optional header lists the inventory in index order; the non-relation
//! class carries a trailing `*`. Records hold id, relation name, inclusive
//! head span, inclusive tail span and space-separated tokens.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{CorpusError, Dataset, FlipLog, Instance, RelationInventory, Span, Split};

const HEADER_TAG: &str = "#relations";

/// Where the relation inventory of a line-record file comes from.
#[derive(Clone, Debug)]
pub enum InventoryMode {
    /// The file must start with a `#relations` header.
    Embedded,
    /// Supplied by the caller; a header, if present, must agree with it.
    Explicit(RelationInventory),
}

fn parse_header(line: &str, line_no: usize) -> Result<RelationInventory, CorpusError> {
    let mut names = Vec::new();
    let mut na = None;
    for (i, field) in line.split('\t').skip(1).enumerate() {
        match field.strip_suffix('*') {
            Some(name) => {
                if na.replace(i).is_some() {
                    return Err(CorpusError::Parse {
                        line: line_no,
                        msg: "more than one class marked as NA".into(),
                    });
                }
                names.push(name.to_string());
            }
            None => names.push(field.to_string()),
        }
    }
    match na {
        Some(idx) => RelationInventory::with_na(names, idx),
        None => RelationInventory::new(names),
    }
}

fn parse_usize(field: &str, what: &str, line: usize) -> Result<usize, CorpusError> {
    field.parse().map_err(|_| CorpusError::Parse {
        line,
        msg: format!("bad {what} {field:?}"),
    })
}

fn parse_record(
    text: &str,
    line: usize,
    inventory: &RelationInventory,
) -> Result<Instance, CorpusError> {
    let fields: Vec<&str> = text.split('\t').collect();
    if fields.len() != 7 {
        return Err(CorpusError::Parse {
            line,
            msg: format!("expected 7 tab-separated fields, found {}", fields.len()),
        });
    }
    let id = fields[0].to_string();
    if id.is_empty() {
        return Err(CorpusError::Parse {
            line,
            msg: "empty id".into(),
        });
    }
    let relation = inventory
        .index_of(fields[1])
        .ok_or_else(|| CorpusError::UnknownRelation {
            line,
            name: fields[1].to_string(),
        })?;
    let head = Span::new(
        parse_usize(fields[2], "head start", line)?,
        parse_usize(fields[3], "head end", line)?,
    );
    let tail = Span::new(
        parse_usize(fields[4], "tail start", line)?,
        parse_usize(fields[5], "tail end", line)?,
    );
    let tokens: Vec<String> = fields[6].split_whitespace().map(str::to_string).collect();
    if tokens.is_empty() {
        return Err(CorpusError::Parse {
            line,
            msg: "no tokens".into(),
        });
    }
    for span in [head, tail] {
        if span.start > span.end || span.end >= tokens.len() {
            return Err(CorpusError::SpanOutOfRange {
                line,
                start: span.start,
                end: span.end,
                len: tokens.len(),
            });
        }
    }
    if head.overlaps(&tail) {
        return Err(CorpusError::OverlappingSpans { line });
    }
    Ok(Instance {
        id,
        tokens,
        head,
        tail,
        relation,
    })
}

/// Parses line records from a string. Blank lines are skipped.
pub fn parse_linerecords(
    text: &str,
    mode: InventoryMode,
    split: Split,
) -> Result<Dataset, CorpusError> {
    let mut inventory = match &mode {
        InventoryMode::Explicit(inv) => Some(inv.clone()),
        InventoryMode::Embedded => None,
    };
    let mut instances = Vec::new();
    let mut saw_record = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        if raw.starts_with(HEADER_TAG) {
            if saw_record || (matches!(mode, InventoryMode::Embedded) && inventory.is_some()) {
                return Err(CorpusError::Parse {
                    line: line_no,
                    msg: "header must be the first line".into(),
                });
            }
            let header = parse_header(raw, line_no)?;
            match &inventory {
                Some(inv) if *inv != header => {
                    return Err(CorpusError::Parse {
                        line: line_no,
                        msg: "header disagrees with the supplied inventory".into(),
                    })
                }
                _ => inventory = Some(header),
            }
            continue;
        }
        let inv = inventory.as_ref().ok_or_else(|| CorpusError::Parse {
            line: line_no,
            msg: "missing #relations header".into(),
        })?;
        saw_record = true;
        instances.push(parse_record(raw, line_no, inv)?);
    }
    let inventory = inventory.ok_or_else(|| CorpusError::Parse {
        line: 0,
        msg: "missing #relations header".into(),
    })?;
    Ok(Dataset {
        inventory,
        instances,
        split,
    })
}

pub fn load_linerecords(
    path: impl AsRef<Path>,
    mode: InventoryMode,
    split: Split,
) -> Result<Dataset, CorpusError> {
    let text = fs::read_to_string(path)?;
    parse_linerecords(&text, mode, split)
}

/// Canonical serialization: header line, then one record per instance.
pub fn write_linerecords(data: &Dataset) -> String {
    let inv = &data.inventory;
    let mut out = String::from(HEADER_TAG);
    for (i, name) in inv.names().iter().enumerate() {
        out.push('\t');
        out.push_str(name);
        if inv.is_na(i) {
            out.push('*');
        }
    }
    out.push('\n');
    for inst in &data.instances {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            inst.id,
            inv.name(inst.relation),
            inst.head.start,
            inst.head.end,
            inst.tail.start,
            inst.tail.end,
            inst.tokens.join(" ")
        );
    }
    out
}

/// Two columns, id and original relation name, sorted by id.
pub fn write_fliplog(log: &FlipLog, inventory: &RelationInventory) -> String {
    let mut out = String::new();
    for (id, &rel) in &log.entries {
        let _ = writeln!(out, "{id}\t{}", inventory.name(rel));
    }
    out
}

pub fn parse_fliplog(text: &str, inventory: &RelationInventory) -> Result<FlipLog, CorpusError> {
    let mut log = FlipLog::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (id, name) = raw.split_once('\t').ok_or_else(|| CorpusError::Parse {
            line,
            msg: "expected id<TAB>relation".into(),
        })?;
        let rel = inventory
            .index_of(name)
            .ok_or_else(|| CorpusError::UnknownRelation {
                line,
                name: name.to_string(),
            })?;
        if inventory.is_na(rel) {
            return Err(CorpusError::Parse {
                line,
                msg: "flip log original relation cannot be NA".into(),
            });
        }
        log.entries.insert(id.to_string(), rel);
    }
    Ok(log)
}

pub fn read_fliplog(
    path: impl AsRef<Path>,
    inventory: &RelationInventory,
) -> Result<FlipLog, CorpusError> {
    parse_fliplog(&fs::read_to_string(path)?, inventory)
}
