//! Adapter from archive-style XML exports to corpus JSONL records.
//!
//! Only the fields the classifier and analytics use are read; every other
//! element is ignored. A file may hold one record (fields directly under
//! the root) or many (`<document>`, `<record>`, `<cable>` or `<doc>`
//! elements).

use std::fs;
use std::path::Path;

use quick_xml::events::Event;
use quick_xml::Reader;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

const CONTAINERS: [&str; 4] = ["document", "record", "cable", "doc"];

fn field_for(element: &str) -> Option<&'static str> {
    let canon: String =
        element.to_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
    Some(match canon.as_str() {
        "docid" | "documentid" | "id" | "docnumber" => "doc_id",
        "date" | "docdate" | "msgdate" => "date",
        "from" | "msgfrom" => "from",
        "to" | "msgto" => "to",
        "office" => "office",
        "tags" => "tags",
        "concepts" => "concepts",
        "subject" | "subj" => "subject",
        "body" | "msgtext" | "text" => "body",
        "origclass" | "originalclassification" => "origclass",
        "cabletype" | "type" => "cable_type",
        _ => return None,
    })
}

struct Collector {
    container_depth: Option<usize>,
    field: Option<(&'static str, usize)>,
    text: String,
    current: Map<String, Value>,
    records: Vec<Map<String, Value>>,
}

impl Collector {
    fn store(&mut self, key: &'static str) {
        let value = std::mem::take(&mut self.text).trim().to_string();
        match self.current.get_mut(key) {
            Some(Value::String(prev)) if !value.is_empty() => {
                if prev.is_empty() {
                    *prev = value;
                } else {
                    prev.push_str(", ");
                    prev.push_str(&value);
                }
            }
            Some(_) => {}
            None => {
                self.current.insert(key.to_string(), Value::String(value));
            }
        }
    }
}

fn collect(xml: &str, root_is_container: bool) -> Result<Vec<Map<String, Value>>> {
    let mut reader = Reader::from_str(xml);
    let mut c = Collector {
        container_depth: None,
        field: None,
        text: String::new(),
        current: Map::new(),
        records: Vec::new(),
    };
    let mut depth = 0usize;
    loop {
        let event = reader
            .read_event()
            .map_err(|e| Error::Xml(format!("at byte {}: {e}", reader.buffer_position())))?;
        match event {
            Event::Start(e) => {
                depth += 1;
                let name = String::from_utf8_lossy(e.local_name().as_ref()).to_string();
                match c.container_depth {
                    None => {
                        let is_container = if root_is_container {
                            depth == 1
                        } else {
                            CONTAINERS.contains(&name.to_lowercase().as_str())
                        };
                        if is_container {
                            c.container_depth = Some(depth);
                            c.current = Map::new();
                        }
                    }
                    Some(cd) if depth == cd + 1 => {
                        c.field = field_for(&name).map(|f| (f, depth));
                        c.text.clear();
                    }
                    Some(_) => {
                        if c.field.is_some() && !c.text.is_empty() && !c.text.ends_with(' ') {
                            c.text.push(' ');
                        }
                    }
                }
            }
            Event::Empty(e) => {
                if let Some(cd) = c.container_depth {
                    let name = String::from_utf8_lossy(e.local_name().as_ref()).to_string();
                    if depth == cd {
                        if let Some(f) = field_for(&name) {
                            c.text.clear();
                            c.store(f);
                        }
                    }
                }
            }
            Event::Text(t) => {
                if c.field.is_some() {
                    let s = t.unescape().map_err(|e| Error::Xml(e.to_string()))?;
                    c.text.push_str(&s);
                }
            }
            Event::CData(t) => {
                if c.field.is_some() {
                    c.text.push_str(&String::from_utf8_lossy(&t));
                }
            }
            Event::End(_) => {
                if let Some((f, d)) = c.field {
                    if d == depth {
                        c.store(f);
                        c.field = None;
                    }
                }
                if c.container_depth == Some(depth) {
                    c.container_depth = None;
                    let rec = std::mem::take(&mut c.current);
                    c.records.push(rec);
                }
                depth = depth.saturating_sub(1);
            }
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(c.records)
}

/// Extracts every record in one XML document.
pub fn parse_xml_records(xml: &str) -> Result<Vec<Map<String, Value>>> {
    let records = collect(xml, false)?;
    if !records.is_empty() {
        return Ok(records);
    }
    let records = collect(xml, true)?;
    Ok(records.into_iter().filter(|r| !r.is_empty()).collect())
}

/// Converts every `*.xml` file in `dir` (sorted by file name) into
/// record maps.
pub fn read_xml_dir(dir: &Path) -> Result<Vec<Map<String, Value>>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("xml")))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let text = fs::read_to_string(&p)?;
        let recs = parse_xml_records(&text)
            .map_err(|e| Error::Xml(format!("{}: {e}", p.display())))?;
        out.extend(recs);
    }
    Ok(out)
}
