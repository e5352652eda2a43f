//! MIDI-like event tokenization.
//!
//! Converts between note-event lists and flat token sequences. The
//! vocabulary has 987 ids:
//!
//! ```text
//! 0        PAD
//! 1        BOS
//! 2        EOS
//! 3..602   Time(0..599)      absolute 20 ms bins, 30 s reach
//! 603..730 NoteOn(0..127)
//! 731..858 NoteOff(0..127)
//! 859..986 Velocity(0..127)
//! ```
//!
//! Serialization order: BOS, then per time bin one Time token followed by
//! that bin's onsets (Velocity then NoteOn, pitch ascending) and then its
//! offsets (NoteOff, pitch ascending), then EOS.

use crate::error::{input_err, Result};

pub const NUM_TIME_BINS: u32 = 600;
pub const NUM_PITCHES: u32 = 128;
pub const NUM_VELOCITIES: u32 = 128;
pub const VOCAB_SIZE: u32 = 987;

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const TIME_BASE: u32 = 3;
pub const NOTE_ON_BASE: u32 = TIME_BASE + NUM_TIME_BINS; // 603
pub const NOTE_OFF_BASE: u32 = NOTE_ON_BASE + NUM_PITCHES; // 731
pub const VELOCITY_BASE: u32 = NOTE_OFF_BASE + NUM_PITCHES; // 859

/// Default time-bin width in seconds (20 ms hop).
pub const DEFAULT_HOP: f64 = 0.02;

/// One performed note.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoteEvent {
    pub onset: f64,
    pub offset: f64,
    pub pitch: u8,
    pub velocity: u8,
}

impl NoteEvent {
    pub fn new(onset: f64, offset: f64, pitch: u8, velocity: u8) -> Result<Self> {
        let n = NoteEvent {
            onset,
            offset,
            pitch,
            velocity,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.onset.is_finite() && self.offset.is_finite()) {
            return input_err("non-finite note time");
        }
        if self.onset < 0.0 {
            return input_err(format!("negative onset {}", self.onset));
        }
        if self.offset <= self.onset {
            return input_err(format!(
                "offset {} must exceed onset {}",
                self.offset, self.onset
            ));
        }
        if self.pitch > 127 {
            return input_err(format!("pitch {} out of [0,127]", self.pitch));
        }
        if self.velocity > 127 {
            return input_err(format!("velocity {} out of [0,127]", self.velocity));
        }
        Ok(())
    }
}

/// Token kind; `token_type_of` recovers it from a raw id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Pad,
    Bos,
    Eos,
    Time,
    NoteOn,
    NoteOff,
    Velocity,
}

/// A typed token with its value (none for specials).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token {
    Pad,
    Bos,
    Eos,
    Time(u32),
    NoteOn(u8),
    NoteOff(u8),
    Velocity(u8),
}

impl Token {
    pub fn kind(self) -> TokenKind {
        match self {
            Token::Pad => TokenKind::Pad,
            Token::Bos => TokenKind::Bos,
            Token::Eos => TokenKind::Eos,
            Token::Time(_) => TokenKind::Time,
            Token::NoteOn(_) => TokenKind::NoteOn,
            Token::NoteOff(_) => TokenKind::NoteOff,
            Token::Velocity(_) => TokenKind::Velocity,
        }
    }

    /// Vocabulary id of this token. Fails on out-of-range values.
    pub fn id(self) -> Result<u32> {
        match self {
            Token::Pad => Ok(PAD_ID),
            Token::Bos => Ok(BOS_ID),
            Token::Eos => Ok(EOS_ID),
            Token::Time(t) if t < NUM_TIME_BINS => Ok(TIME_BASE + t),
            Token::NoteOn(p) if (p as u32) < NUM_PITCHES => Ok(NOTE_ON_BASE + p as u32),
            Token::NoteOff(p) if (p as u32) < NUM_PITCHES => Ok(NOTE_OFF_BASE + p as u32),
            Token::Velocity(v) if (v as u32) < NUM_VELOCITIES => Ok(VELOCITY_BASE + v as u32),
            other => input_err(format!("token value out of range: {other:?}")),
        }
    }

    /// Inverse of [`Token::id`].
    pub fn from_id(id: u32) -> Result<Token> {
        match id {
            PAD_ID => Ok(Token::Pad),
            BOS_ID => Ok(Token::Bos),
            EOS_ID => Ok(Token::Eos),
            _ if id < NOTE_ON_BASE => Ok(Token::Time(id - TIME_BASE)),
            _ if id < NOTE_OFF_BASE => Ok(Token::NoteOn((id - NOTE_ON_BASE) as u8)),
            _ if id < VELOCITY_BASE => Ok(Token::NoteOff((id - NOTE_OFF_BASE) as u8)),
            _ if id < VOCAB_SIZE => Ok(Token::Velocity((id - VELOCITY_BASE) as u8)),
            _ => input_err(format!("token id {id} out of vocabulary (size {VOCAB_SIZE})")),
        }
    }
}

/// Token kind of a raw vocabulary id.
pub fn token_type_of(id: u32) -> Result<TokenKind> {
    Token::from_id(id).map(Token::kind)
}

/// Quantize a time in seconds to a bin index, round-half-away-from-zero,
/// clamped to the 600-bin range.
pub fn quantize_time(t: f64, hop: f64) -> Result<u32> {
    if !(t.is_finite() && hop.is_finite()) {
        return input_err("non-finite time or hop");
    }
    if t < 0.0 {
        return input_err(format!("negative time {t}"));
    }
    if hop <= 0.0 {
        return input_err(format!("hop must be positive, got {hop}"));
    }
    let bin = (t / hop).round(); // f64::round is half-away-from-zero
    Ok((bin as u64).min(NUM_TIME_BINS as u64 - 1) as u32)
}

/// Tokenize a note list into the MIDI-like event stream.
pub fn tokenize(notes: &[NoteEvent], hop: f64) -> Result<Vec<Token>> {
    for n in notes {
        n.validate()?;
    }
    // (bin, is_offset, pitch, velocity); sort puts onsets before offsets
    // inside one bin and pitches ascending inside each group.
    let mut events: Vec<(u32, bool, u8, u8)> = Vec::with_capacity(notes.len() * 2);
    for n in notes {
        events.push((quantize_time(n.onset, hop)?, false, n.pitch, n.velocity));
        events.push((quantize_time(n.offset, hop)?, true, n.pitch, n.velocity));
    }
    events.sort_by_key(|&(bin, is_off, pitch, _)| (bin, is_off, pitch));

    let mut out = Vec::with_capacity(events.len() * 2 + 2);
    out.push(Token::Bos);
    let mut current_bin: Option<u32> = None;
    for (bin, is_off, pitch, vel) in events {
        if current_bin != Some(bin) {
            out.push(Token::Time(bin));
            current_bin = Some(bin);
        }
        if is_off {
            out.push(Token::NoteOff(pitch));
        } else {
            out.push(Token::Velocity(vel));
            out.push(Token::NoteOn(pitch));
        }
    }
    out.push(Token::Eos);
    Ok(out)
}

/// Non-fatal issues encountered while decoding a token stream.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DecodeWarnings {
    /// NoteOff with no open note of that pitch; the token was skipped.
    pub unmatched_note_off: usize,
    /// NoteOn with no Velocity token since the last Time token.
    pub missing_velocity: usize,
    /// Time token earlier than a previously seen one.
    pub time_regression: usize,
    /// NoteOn for a pitch that was already open; the open note was closed.
    pub reonset: usize,
    /// Event token before any Time token, or other ordering oddities.
    pub misplaced_event: usize,
}

impl DecodeWarnings {
    pub fn total(&self) -> usize {
        self.unmatched_note_off
            + self.missing_velocity
            + self.time_regression
            + self.reonset
            + self.misplaced_event
    }
}

/// Decode a token stream back to notes. Never fails on malformed ordering;
/// problems are tallied in the returned warnings and decoding continues.
///
/// A note still open at the end of the stream is closed one bin after the
/// final Time token.
pub fn detokenize(tokens: &[Token], hop: f64) -> Result<(Vec<NoteEvent>, DecodeWarnings)> {
    if hop <= 0.0 || !hop.is_finite() {
        return input_err(format!("hop must be positive, got {hop}"));
    }
    let mut warnings = DecodeWarnings::default();
    let mut notes: Vec<NoteEvent> = Vec::new();
    // pitch -> (onset bin, velocity)
    let mut open: Vec<Option<(u32, u8)>> = vec![None; 128];
    let mut current_bin: Option<u32> = None;
    let mut last_bin: u32 = 0;
    let mut pending_velocity: Option<u8> = None;

    let close_note = |notes: &mut Vec<NoteEvent>,
                          warnings: &mut DecodeWarnings,
                          pitch: u8,
                          onset_bin: u32,
                          vel: u8,
                          off_bin: u32| {
        // Quantization can collapse a short note onto one bin; keep the
        // offset strictly after the onset.
        let off_bin = if off_bin <= onset_bin {
            onset_bin + 1
        } else {
            off_bin
        };
        match NoteEvent::new(
            onset_bin as f64 * hop,
            off_bin as f64 * hop,
            pitch,
            vel.min(127),
        ) {
            Ok(n) => notes.push(n),
            Err(_) => warnings.misplaced_event += 1,
        }
    };

    for &tok in tokens {
        match tok {
            Token::Bos | Token::Pad => {}
            Token::Eos => break,
            Token::Time(bin) => {
                if let Some(prev) = current_bin {
                    if bin < prev {
                        warnings.time_regression += 1;
                    }
                }
                current_bin = Some(bin);
                last_bin = last_bin.max(bin);
                pending_velocity = None;
            }
            Token::Velocity(v) => {
                if current_bin.is_none() {
                    warnings.misplaced_event += 1;
                }
                pending_velocity = Some(v);
            }
            Token::NoteOn(pitch) => {
                let Some(bin) = current_bin else {
                    warnings.misplaced_event += 1;
                    continue;
                };
                let vel = match pending_velocity {
                    Some(v) => v,
                    None => {
                        warnings.missing_velocity += 1;
                        64
                    }
                };
                if let Some((onset_bin, open_vel)) = open[pitch as usize].take() {
                    warnings.reonset += 1;
                    close_note(&mut notes, &mut warnings, pitch, onset_bin, open_vel, bin);
                }
                open[pitch as usize] = Some((bin, vel));
            }
            Token::NoteOff(pitch) => {
                let Some(bin) = current_bin else {
                    warnings.misplaced_event += 1;
                    continue;
                };
                match open[pitch as usize].take() {
                    Some((onset_bin, vel)) => {
                        close_note(&mut notes, &mut warnings, pitch, onset_bin, vel, bin);
                    }
                    None => warnings.unmatched_note_off += 1,
                }
            }
        }
    }

    // Close anything still sounding one bin past the final Time token.
    for pitch in 0..128u8 {
        if let Some((onset_bin, vel)) = open[pitch as usize].take() {
            close_note(&mut notes, &mut warnings, pitch, onset_bin, vel, last_bin + 1);
        }
    }

    notes.sort_by(|a, b| {
        (a.onset, a.pitch, a.offset)
            .partial_cmp(&(b.onset, b.pitch, b.offset))
            .unwrap()
    });
    Ok((notes, warnings))
}

/// Parse the tab-separated notes text format: one note per line,
/// `onset<TAB>offset<TAB>pitch<TAB>velocity`, `#` lines ignored.
pub fn parse_notes(text: &str) -> Result<Vec<NoteEvent>> {
    let mut notes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return input_err(format!(
                "notes line {}: expected 4 tab-separated fields, got {}",
                lineno + 1,
                fields.len()
            ));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| crate::error::Error::Input(format!(
                    "notes line {}: bad {what} '{s}'",
                    lineno + 1
                )))
        };
        let parse_i = |s: &str, what: &str| -> Result<u8> {
            s.parse::<u8>()
                .ok()
                .filter(|&v| v <= 127)
                .ok_or_else(|| crate::error::Error::Input(format!(
                    "notes line {}: bad {what} '{s}' (want integer in [0,127])",
                    lineno + 1
                )))
        };
        notes.push(NoteEvent::new(
            parse_f(fields[0], "onset")?,
            parse_f(fields[1], "offset")?,
            parse_i(fields[2], "pitch")?,
            parse_i(fields[3], "velocity")?,
        )?);
    }
    Ok(notes)
}

/// Canonical text form of a time value: up to six decimals, trailing
/// zeros (and a bare trailing dot) trimmed, so `0.40 -> "0.4"`, `1.0 -> "1"`.
pub fn format_seconds(t: f64) -> String {
    let mut s = format!("{t:.6}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s
}

/// Render notes in the canonical tab-separated text format.
pub fn format_notes(notes: &[NoteEvent]) -> String {
    let mut out = String::new();
    for n in notes {
        out.push_str(&format_seconds(n.onset));
        out.push('\t');
        out.push_str(&format_seconds(n.offset));
        out.push('\t');
        out.push_str(&n.pitch.to_string());
        out.push('\t');
        out.push_str(&n.velocity.to_string());
        out.push('\n');
    }
    out
}

/// Parse a whitespace-separated token-id sequence.
pub fn parse_token_ids(text: &str) -> Result<Vec<u32>> {
    text.split_whitespace()
        .map(|s| {
            s.parse::<u32>()
                .map_err(|_| crate::error::Error::Input(format!("bad token id '{s}'")))
                .and_then(|id| {
                    if id < VOCAB_SIZE {
                        Ok(id)
                    } else {
                        Err(crate::error::Error::Input(format!(
                            "token id {id} out of vocabulary"
                        )))
                    }
                })
        })
        .collect()
}

/// Render token ids whitespace-separated, one line.
pub fn format_token_ids(ids: &[u32]) -> String {
    let strs: Vec<String> = ids.iter().map(|id| id.to_string()).collect();
    let mut s = strs.join(" ");
    s.push('\n');
    s
}

pub fn tokens_to_ids(tokens: &[Token]) -> Result<Vec<u32>> {
    tokens.iter().map(|t| t.id()).collect()
}

pub fn ids_to_tokens(ids: &[u32]) -> Result<Vec<Token>> {
    ids.iter().map(|&id| Token::from_id(id)).collect()
}
