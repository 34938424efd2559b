//! Fracture annotation schema, worksheet I/O and description templates.
//!
//! A worksheet is UTF-8, one JSON object per line. The first non-blank line is
//! the header, every following non-blank line is one fracture:
//!
//! ```text
//! {"scan_id":"S1","voxel_spacing":[0.7,0.7,1.25],"volume_shape":[512,512,300]}
//! {"scan_id":"S1","serial":1,"side":"right","rib":5,"location":"lateral","displacement":"undisplaced","characterization":"oblique","multiple":"single","flail":false,"segmental":false}
//! ```
//!
//! `volume_shape` is `[H, W, D]` in voxels and `voxel_spacing` is `[x, y, z]`
//! in millimetres. Unknown keys are rejected.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Token every head vocabulary reserves for "no fracture at this site".
pub const NO_FRACTURE: &str = "no_fracture";

pub const HEAD_LOCATION: &str = "location";
pub const HEAD_DISPLACEMENT: &str = "displacement";
pub const HEAD_MULTIPLE: &str = "multiple";
pub const HEAD_CHARACTERIZATION: &str = "characterization";

pub const DEFAULT_CHARACTERIZATIONS: [&str; 5] =
    ["buckle", "oblique", "transverse", "comminuted", "segmental"];

macro_rules! token_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $tok:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name { $(#[serde(rename = $tok)] $variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn token(self) -> &'static str {
                match self { $($name::$variant => $tok),+ }
            }

            pub fn from_token(s: &str) -> Option<Self> {
                match s { $($tok => Some($name::$variant),)+ _ => None }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.token())
            }
        }
    };
}

token_enum!(Side { Left => "left", Right => "right" });
token_enum!(Location { Anterior => "anterior", Lateral => "lateral", Posterior => "posterior" });
token_enum!(
    /// Displacement grade: the three CWIS grades plus a distinct severe grade.
    Displacement {
        Undisplaced => "undisplaced",
        Offset => "offset",
        Displaced => "displaced",
        SeverelyDisplaced => "severely-displaced",
    }
);
token_enum!(Multiplicity { Single => "single", Multiple => "multiple" });

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    pub head: String,
    pub labels: Vec<String>,
}

impl LabelVocabulary {
    pub fn new(head: &str, labels: &[&str]) -> Self {
        Self {
            head: head.to_string(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == token)
    }

    pub fn no_fracture_index(&self) -> Option<usize> {
        self.index_of(NO_FRACTURE)
    }

    /// Tokens that are legal inside a fracture annotation.
    pub fn contains_fracture_token(&self, token: &str) -> bool {
        token != NO_FRACTURE && self.index_of(token).is_some()
    }

    /// Problems with the vocabulary itself; empty when well formed.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.labels.is_empty() {
            out.push(format!("vocabulary '{}' has no labels", self.head));
        }
        let mut seen = BTreeSet::new();
        for l in &self.labels {
            if !seen.insert(l.as_str()) {
                out.push(format!("vocabulary '{}' repeats label '{l}'", self.head));
            }
            if l != NO_FRACTURE && !is_kebab(l) {
                out.push(format!("vocabulary '{}' label '{l}' is not lowercase-kebab", self.head));
            }
        }
        let nf = self.labels.iter().filter(|l| *l == NO_FRACTURE).count();
        if nf != 1 {
            out.push(format!(
                "vocabulary '{}' must contain '{NO_FRACTURE}' exactly once, found {nf}",
                self.head
            ));
        }
        out
    }
}

fn is_kebab(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('-')
        && !s.ends_with('-')
        && !s.contains("--")
        && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

/// The four classification-head vocabularies, in head order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub heads: Vec<LabelVocabulary>,
}

impl Default for Vocabularies {
    fn default() -> Self {
        Self::with_characterizations(&DEFAULT_CHARACTERIZATIONS)
    }
}

impl Vocabularies {
    pub fn with_characterizations(chars: &[&str]) -> Self {
        fn with_nf<'a>(items: &[&'a str]) -> Vec<&'a str> {
            let mut v = vec![NO_FRACTURE];
            v.extend_from_slice(items);
            v
        }
        let tokens = |all: &[&'static str]| with_nf(all);
        Self {
            heads: vec![
                LabelVocabulary::new(
                    HEAD_LOCATION,
                    &tokens(&Location::ALL.iter().map(|l| l.token()).collect::<Vec<_>>()),
                ),
                LabelVocabulary::new(
                    HEAD_DISPLACEMENT,
                    &tokens(&Displacement::ALL.iter().map(|d| d.token()).collect::<Vec<_>>()),
                ),
                LabelVocabulary::new(
                    HEAD_MULTIPLE,
                    &tokens(&Multiplicity::ALL.iter().map(|m| m.token()).collect::<Vec<_>>()),
                ),
                LabelVocabulary::new(HEAD_CHARACTERIZATION, &with_nf(chars)),
            ],
        }
    }

    pub fn head(&self, name: &str) -> Option<&LabelVocabulary> {
        self.heads.iter().find(|h| h.head == name)
    }

    pub fn head_index(&self, name: &str) -> Option<usize> {
        self.heads.iter().position(|h| h.head == name)
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Per-head class indices for an annotation, in head order.
    pub fn encode(&self, a: &FractureAnnotation) -> Option<Vec<usize>> {
        self.heads
            .iter()
            .map(|h| h.index_of(a.head_token(&h.head)?))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FractureAnnotation {
    pub scan_id: String,
    pub fracture_serial: u32,
    pub rib_side: Side,
    pub rib_number: u8,
    pub location: Location,
    pub displacement: Displacement,
    pub characterization: String,
    pub multiple: Multiplicity,
    pub flail_contributor: bool,
    pub segmental_contributor: bool,
}

impl FractureAnnotation {
    /// The token this annotation carries for a classification head.
    pub fn head_token(&self, head: &str) -> Option<&str> {
        match head {
            HEAD_LOCATION => Some(self.location.token()),
            HEAD_DISPLACEMENT => Some(self.displacement.token()),
            HEAD_MULTIPLE => Some(self.multiple.token()),
            HEAD_CHARACTERIZATION => Some(&self.characterization),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationWorksheet {
    pub scan_id: String,
    pub annotations: Vec<FractureAnnotation>,
    /// `[x, y, z]` spacing in millimetres.
    pub voxel_spacing: [f64; 3],
    /// `[H, W, D]` in voxels.
    pub volume_shape: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("malformed field '{field}': {reason}")]
    Malformed { field: String, reason: String },
    #[error("unknown token '{token}' for field '{field}'")]
    UnknownToken { field: String, token: String },
    #[error("duplicate fracture serial {0}")]
    DuplicateSerial(u32),
    #[error("missing header line")]
    MissingHeader,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

impl ParseError {
    fn malformed(line: usize, field: &str, reason: impl Into<String>) -> Self {
        Self {
            line,
            kind: ParseErrorKind::Malformed {
                field: field.to_string(),
                reason: reason.into(),
            },
        }
    }

    fn unknown(line: usize, field: &str, token: &str) -> Self {
        Self {
            line,
            kind: ParseErrorKind::UnknownToken {
                field: field.to_string(),
                token: token.to_string(),
            },
        }
    }
}

/// One schema violation found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub scan_id: String,
    pub serial: Option<u32>,
    pub field: String,
    pub message: String,
}

const HEADER_KEYS: [&str; 3] = ["scan_id", "voxel_spacing", "volume_shape"];
const RECORD_KEYS: [&str; 10] = [
    "scan_id",
    "serial",
    "side",
    "rib",
    "location",
    "displacement",
    "characterization",
    "multiple",
    "flail",
    "segmental",
];

#[derive(Serialize)]
struct HeaderOut<'a> {
    scan_id: &'a str,
    voxel_spacing: [f64; 3],
    volume_shape: [usize; 3],
}

#[derive(Serialize)]
struct RecordOut<'a> {
    scan_id: &'a str,
    serial: u32,
    side: &'a str,
    rib: u8,
    location: &'a str,
    displacement: &'a str,
    characterization: &'a str,
    multiple: &'a str,
    flail: bool,
    segmental: bool,
}

struct Fields<'a> {
    line: usize,
    map: &'a Map<String, Value>,
}

impl<'a> Fields<'a> {
    fn new(line: usize, map: &'a Map<String, Value>, allowed: &[&str]) -> Result<Self, ParseError> {
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(ParseError::malformed(line, k, "unexpected key"));
        }
        Ok(Self { line, map })
    }

    fn get(&self, key: &str) -> Result<&'a Value, ParseError> {
        self.map
            .get(key)
            .ok_or_else(|| ParseError::malformed(self.line, key, "missing"))
    }

    fn str(&self, key: &str) -> Result<&'a str, ParseError> {
        self.get(key)?
            .as_str()
            .ok_or_else(|| ParseError::malformed(self.line, key, "expected a string"))
    }

    fn uint(&self, key: &str) -> Result<u64, ParseError> {
        self.get(key)?
            .as_u64()
            .ok_or_else(|| ParseError::malformed(self.line, key, "expected a non-negative integer"))
    }

    fn bool(&self, key: &str) -> Result<bool, ParseError> {
        self.get(key)?
            .as_bool()
            .ok_or_else(|| ParseError::malformed(self.line, key, "expected a boolean"))
    }

    fn token<T>(&self, key: &str, parse: impl Fn(&str) -> Option<T>) -> Result<T, ParseError> {
        let s = self.str(key)?;
        parse(s).ok_or_else(|| ParseError::unknown(self.line, key, s))
    }

    fn triple(&self, key: &str) -> Result<[&'a Value; 3], ParseError> {
        let arr = self
            .get(key)?
            .as_array()
            .filter(|a| a.len() == 3)
            .ok_or_else(|| ParseError::malformed(self.line, key, "expected a 3-element array"))?;
        Ok([&arr[0], &arr[1], &arr[2]])
    }
}

/// Parse a worksheet with the default vocabularies.
pub fn parse_worksheet(bytes: &[u8]) -> Result<AnnotationWorksheet, ParseError> {
    parse_worksheet_with(bytes, &Vocabularies::default())
}

/// Parse a worksheet, checking characterization tokens against `vocab`.
pub fn parse_worksheet_with(
    bytes: &[u8],
    vocab: &Vocabularies,
) -> Result<AnnotationWorksheet, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        // Count lines up to the invalid byte for a useful position.
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        ParseError::malformed(line, "<line>", "invalid UTF-8")
    })?;
    let char_vocab = vocab.head(HEAD_CHARACTERIZATION);
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, htext) = lines.next().ok_or(ParseError {
        line: 1,
        kind: ParseErrorKind::MissingHeader,
    })?;
    let hval = parse_object(hline, htext)?;
    let header = Fields::new(hline, &hval, &HEADER_KEYS)?;
    if hval.contains_key("serial") {
        return Err(ParseError {
            line: hline,
            kind: ParseErrorKind::MissingHeader,
        });
    }
    let scan_id = header.str("scan_id")?.to_string();
    let mut voxel_spacing = [0.0; 3];
    for (slot, v) in voxel_spacing.iter_mut().zip(header.triple("voxel_spacing")?) {
        *slot = v
            .as_f64()
            .filter(|x| x.is_finite() && *x > 0.0)
            .ok_or_else(|| ParseError::malformed(hline, "voxel_spacing", "expected positive numbers"))?;
    }
    let mut volume_shape = [0; 3];
    for (slot, v) in volume_shape.iter_mut().zip(header.triple("volume_shape")?) {
        *slot = v
            .as_u64()
            .filter(|x| *x > 0)
            .ok_or_else(|| ParseError::malformed(hline, "volume_shape", "expected positive integers"))?
            as usize;
    }

    let mut annotations = Vec::new();
    let mut serials = BTreeSet::new();
    for (line, raw) in lines {
        let obj = parse_object(line, raw)?;
        let f = Fields::new(line, &obj, &RECORD_KEYS)?;
        let rec_scan = f.str("scan_id")?;
        if rec_scan != scan_id {
            return Err(ParseError::malformed(
                line,
                "scan_id",
                format!("'{rec_scan}' does not match header '{scan_id}'"),
            ));
        }
        let serial = f.uint("serial")?;
        if serial == 0 || serial > u32::MAX as u64 {
            return Err(ParseError::malformed(line, "serial", "must be a positive 32-bit integer"));
        }
        let serial = serial as u32;
        let rib = f.uint("rib")?;
        if !(1..=12).contains(&rib) {
            return Err(ParseError::malformed(line, "rib", format!("{rib} outside 1..=12")));
        }
        let characterization = f.str("characterization")?;
        let known = char_vocab.is_some_and(|v| v.contains_fracture_token(characterization));
        if !known {
            return Err(ParseError::unknown(line, "characterization", characterization));
        }
        let a = FractureAnnotation {
            scan_id: scan_id.clone(),
            fracture_serial: serial,
            rib_side: f.token("side", Side::from_token)?,
            rib_number: rib as u8,
            location: f.token("location", Location::from_token)?,
            displacement: f.token("displacement", Displacement::from_token)?,
            characterization: characterization.to_string(),
            multiple: f.token("multiple", Multiplicity::from_token)?,
            flail_contributor: f.bool("flail")?,
            segmental_contributor: f.bool("segmental")?,
        };
        if !serials.insert(serial) {
            return Err(ParseError {
                line,
                kind: ParseErrorKind::DuplicateSerial(serial),
            });
        }
        annotations.push(a);
    }
    Ok(AnnotationWorksheet {
        scan_id,
        annotations,
        voxel_spacing,
        volume_shape,
    })
}

fn parse_object(line: usize, text: &str) -> Result<Map<String, Value>, ParseError> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(ParseError::malformed(line, "<line>", "expected a JSON object")),
        Err(e) => Err(ParseError::malformed(line, "<line>", e.to_string())),
    }
}

/// Serialize a worksheet in the line format [`parse_worksheet`] reads.
pub fn serialize_worksheet(w: &AnnotationWorksheet) -> String {
    let mut out = String::new();
    let header = HeaderOut {
        scan_id: &w.scan_id,
        voxel_spacing: w.voxel_spacing,
        volume_shape: w.volume_shape,
    };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for a in &w.annotations {
        let rec = RecordOut {
            scan_id: &a.scan_id,
            serial: a.fracture_serial,
            side: a.rib_side.token(),
            rib: a.rib_number,
            location: a.location.token(),
            displacement: a.displacement.token(),
            characterization: &a.characterization,
            multiple: a.multiple.token(),
            flail: a.flail_contributor,
            segmental: a.segmental_contributor,
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Every schema violation in `worksheet`, plus problems in the vocabularies.
pub fn validate(worksheet: &AnnotationWorksheet, vocab: &Vocabularies) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |serial: Option<u32>, field: &str, message: String| {
        out.push(Violation {
            scan_id: worksheet.scan_id.clone(),
            serial,
            field: field.to_string(),
            message,
        })
    };
    for h in &vocab.heads {
        for p in h.problems() {
            push(None, "vocabulary", p);
        }
    }
    if worksheet.volume_shape.contains(&0) {
        push(None, "volume_shape", format!("{:?} has a zero component", worksheet.volume_shape));
    }
    if worksheet.voxel_spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        push(None, "voxel_spacing", format!("{:?} must be positive", worksheet.voxel_spacing));
    }
    let mut serials = BTreeSet::new();
    for a in &worksheet.annotations {
        let s = Some(a.fracture_serial);
        if a.scan_id != worksheet.scan_id {
            push(s, "scan_id", format!("'{}' differs from worksheet '{}'", a.scan_id, worksheet.scan_id));
        }
        if a.fracture_serial == 0 {
            push(s, "serial", "serial must be positive".into());
        }
        if !serials.insert(a.fracture_serial) {
            push(s, "serial", format!("duplicate serial {}", a.fracture_serial));
        }
        if !(1..=12).contains(&a.rib_number) {
            push(s, "rib_number", format!("{} outside 1..=12", a.rib_number));
        }
        for h in &vocab.heads {
            if let Some(tok) = a.head_token(&h.head) {
                if !h.contains_fracture_token(tok) {
                    push(s, &h.head, format!("token '{tok}' not in vocabulary"));
                }
            }
        }
    }
    out
}

fn displacement_phrase(d: Displacement) -> &'static str {
    match d {
        Displacement::Undisplaced => "non-displaced",
        Displacement::Offset => "offset",
        Displacement::Displaced => "displaced",
        Displacement::SeverelyDisplaced => "severely displaced",
    }
}

fn article(word: &str) -> &'static str {
    match word.as_bytes().first() {
        Some(b'a' | b'e' | b'i' | b'o' | b'u') => "an",
        _ => "a",
    }
}

/// Templated clinical description of one fracture.
pub fn generate_description(a: &FractureAnnotation) -> String {
    let pattern = a.characterization.replace('-', " ");
    let mut text = format!(
        "The fracture is located on the {} side of the rib, specifically in the {} region. \
         It is {} {} fracture with {} {} pattern.",
        a.rib_side,
        a.location,
        article(displacement_phrase(a.displacement)),
        displacement_phrase(a.displacement),
        article(&pattern),
        pattern,
    );
    match (a.flail_contributor, a.segmental_contributor) {
        (true, true) => text.push_str(" It is part of a segmental injury contributing to a flail chest."),
        (true, false) => text.push_str(" It contributes to a flail chest."),
        (false, true) => text.push_str(" It is part of a segmental injury."),
        (false, false) => {}
    }
    text
}
