//! Text disassembly: one instruction per line, e.g. `ACT b=0 r=5`,
//! `WR b=1 c=3 p=0xAA`, `WAIT n=6`, `END`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::{gen_act, gen_pre, gen_rd, gen_wait, gen_wr, Instruction, IsaError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseInstructionError {
    #[error("empty instruction")]
    Empty,
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("expected key=value, found `{0}`")]
    BadField(String),
    #[error("bad number `{0}`")]
    BadNumber(String),
    #[error("`{mnemonic}` does not take field `{key}`")]
    UnexpectedField { mnemonic: &'static str, key: String },
    #[error("`{mnemonic}` requires field `{key}`")]
    MissingField {
        mnemonic: &'static str,
        key: &'static str,
    },
    #[error(transparent)]
    Invalid(#[from] IsaError),
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Instruction::Act { bank, row } => write!(f, "ACT b={bank} r={row}"),
            Instruction::Pre { bank } => write!(f, "PRE b={bank}"),
            Instruction::Rd { bank, col } => write!(f, "RD b={bank} c={col}"),
            Instruction::Wr { bank, col, pattern } => {
                write!(f, "WR b={bank} c={col} p={pattern:#04X}")
            }
            Instruction::Ref => f.write_str("REF"),
            Instruction::Wait { cycles } => write!(f, "WAIT n={cycles}"),
            Instruction::End => f.write_str("END"),
        }
    }
}

pub(crate) fn parse_number(s: &str) -> Result<u64, ParseInstructionError> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|_| ParseInstructionError::BadNumber(s.to_string()))
}

#[derive(Default)]
struct Fields {
    b: Option<u64>,
    r: Option<u64>,
    c: Option<u64>,
    p: Option<u64>,
    n: Option<u64>,
}

impl Fields {
    fn take(
        &mut self,
        mnemonic: &'static str,
        key: &'static str,
    ) -> Result<u64, ParseInstructionError> {
        let slot = match key {
            "b" => &mut self.b,
            "r" => &mut self.r,
            "c" => &mut self.c,
            "p" => &mut self.p,
            _ => &mut self.n,
        };
        slot.take()
            .ok_or(ParseInstructionError::MissingField { mnemonic, key })
    }

    fn leftover(&self) -> Option<&'static str> {
        [
            ("b", self.b),
            ("r", self.r),
            ("c", self.c),
            ("p", self.p),
            ("n", self.n),
        ]
        .into_iter()
        .find_map(|(k, v)| v.map(|_| k))
    }
}

fn narrow(v: u64) -> Result<u32, ParseInstructionError> {
    u32::try_from(v).map_err(|_| ParseInstructionError::BadNumber(v.to_string()))
}

/// Parses a mnemonic followed by `key=value` tokens.
pub(crate) fn parse_tokens<'a>(
    mut tokens: impl Iterator<Item = &'a str>,
) -> Result<Instruction, ParseInstructionError> {
    let mnemonic = tokens.next().ok_or(ParseInstructionError::Empty)?;
    let mut fields = Fields::default();
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| ParseInstructionError::BadField(tok.to_string()))?;
        let value = parse_number(value)?;
        let slot = match key {
            "b" => &mut fields.b,
            "r" => &mut fields.r,
            "c" => &mut fields.c,
            "p" => &mut fields.p,
            "n" => &mut fields.n,
            _ => return Err(ParseInstructionError::BadField(tok.to_string())),
        };
        *slot = Some(value);
    }
    let upper = mnemonic.to_ascii_uppercase();
    let (name, instr): (&'static str, _) = match upper.as_str() {
        "ACT" => {
            let b = narrow(fields.take("ACT", "b")?)?;
            let r = narrow(fields.take("ACT", "r")?)?;
            ("ACT", gen_act(b, r)?)
        }
        "PRE" => ("PRE", gen_pre(narrow(fields.take("PRE", "b")?)?)?),
        "RD" => {
            let b = narrow(fields.take("RD", "b")?)?;
            let c = narrow(fields.take("RD", "c")?)?;
            ("RD", gen_rd(b, c)?)
        }
        "WR" => {
            let b = narrow(fields.take("WR", "b")?)?;
            let c = narrow(fields.take("WR", "c")?)?;
            // The pattern is optional in traces; programs always carry one.
            let p = fields.p.take().unwrap_or(0);
            let p = u8::try_from(p)
                .map_err(|_| ParseInstructionError::BadNumber(format!("{p:#x}")))?;
            ("WR", gen_wr(b, c, p)?)
        }
        "REF" => ("REF", Instruction::Ref),
        "WAIT" => ("WAIT", gen_wait(narrow(fields.take("WAIT", "n")?)?)?),
        "END" => ("END", Instruction::End),
        _ => return Err(ParseInstructionError::UnknownMnemonic(mnemonic.to_string())),
    };
    if let Some(key) = fields.leftover() {
        return Err(ParseInstructionError::UnexpectedField {
            mnemonic: name,
            key: key.to_string(),
        });
    }
    Ok(instr)
}

impl FromStr for Instruction {
    type Err = ParseInstructionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_tokens(s.split_whitespace())
    }
}
