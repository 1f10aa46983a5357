//! Assembly format for counter-machine programs.
//!
//! ```text
//! # comment
//! .registers 2
//! .alphabet a b
//! 1: CASE a *Z -> (+1,0) HEAD +1 JUMP 1
//! 1: CASE $ ** -> (0,0) HEAD 0 JUMP 2
//! 2: HALT accept
//! ```
//!
//! Symbol patterns are a letter, `^`, `$` or `*`. Zero patterns have one
//! character per register: `Z` (zero), `N` (nonzero) or `*`; a machine with no
//! registers uses `-`. Rows of one instruction must cover every
//! (symbol, zero pattern) combination exactly once.

use std::collections::BTreeMap;

use super::{Branch, Instruction, Program, ProgramError, Verdict};

struct Row {
    line: usize,
    symbol: Option<char>,
    zeros: Vec<Option<bool>>,
    branch: Branch,
}

enum Entry {
    Halt(Verdict),
    Case(Vec<Row>),
}

fn syntax(line: usize, message: impl Into<String>) -> ProgramError {
    ProgramError::Syntax {
        line,
        message: message.into(),
    }
}

fn parse_unit(tok: &str, line: usize, what: &str) -> Result<i8, ProgramError> {
    match tok.trim() {
        "-1" => Ok(-1),
        "0" | "+0" | "-0" => Ok(0),
        "1" | "+1" => Ok(1),
        other => Err(syntax(line, format!("{what} must be -1, 0 or +1, got {other:?}"))),
    }
}

fn parse_zero_pattern(tok: &str, line: usize) -> Result<Vec<Option<bool>>, ProgramError> {
    if tok == "-" {
        return Ok(Vec::new());
    }
    tok.chars()
        .map(|c| match c {
            'Z' | 'z' => Ok(Some(true)),
            'N' | 'n' => Ok(Some(false)),
            '*' => Ok(None),
            _ => Err(syntax(line, format!("bad zero-pattern character {c:?}"))),
        })
        .collect()
}

fn parse_case(rest: &str, line: usize) -> Result<Row, ProgramError> {
    let (lhs, rhs) = rest
        .split_once("->")
        .ok_or_else(|| syntax(line, "expected `->` in CASE row"))?;
    let lhs: Vec<&str> = lhs.split_whitespace().collect();
    let [sym, zeros] = lhs[..] else {
        return Err(syntax(line, "expected `CASE <symbol> <zero-pattern>`"));
    };
    let mut sym_chars = sym.chars();
    let (Some(symbol), None) = (sym_chars.next(), sym_chars.next()) else {
        return Err(syntax(line, format!("symbol pattern must be one character, got {sym:?}")));
    };
    let symbol = (symbol != '*').then_some(symbol);
    let zeros = parse_zero_pattern(zeros, line)?;

    let rhs = rhs.trim();
    let close = rhs
        .find(')')
        .filter(|_| rhs.starts_with('('))
        .ok_or_else(|| syntax(line, "expected `(<deltas>)` after `->`"))?;
    let inner = rhs[1..close].trim();
    let deltas = if inner.is_empty() {
        Vec::new()
    } else {
        inner
            .split(',')
            .map(|t| parse_unit(t, line, "register delta"))
            .collect::<Result<Vec<_>, _>>()?
    };
    let tail: Vec<&str> = rhs[close + 1..].split_whitespace().collect();
    let ["HEAD", head, "JUMP", next] = tail[..] else {
        return Err(syntax(line, "expected `HEAD <move> JUMP <target>`"));
    };
    let head = parse_unit(head, line, "head move")?;
    let next = next
        .parse::<usize>()
        .map_err(|_| syntax(line, format!("bad jump target {next:?}")))?;
    Ok(Row {
        line,
        symbol,
        zeros,
        branch: Branch { deltas, head, next },
    })
}

/// Parses and validates a program in the assembly format.
pub fn parse_program(text: &str) -> Result<Program, ProgramError> {
    let mut registers: Option<usize> = None;
    let mut alphabet: Option<Vec<char>> = None;
    let mut entries: BTreeMap<usize, (usize, Entry)> = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix(".registers") {
            let k = rest
                .trim()
                .parse()
                .map_err(|_| syntax(line, "`.registers` needs a nonnegative integer"))?;
            registers = Some(k);
            continue;
        }
        if let Some(rest) = content.strip_prefix(".alphabet") {
            let mut letters = Vec::new();
            for tok in rest.split_whitespace() {
                let mut cs = tok.chars();
                match (cs.next(), cs.next()) {
                    (Some(c), None) if !matches!(c, '^' | '$' | '*') => letters.push(c),
                    _ => return Err(syntax(line, format!("bad alphabet letter {tok:?}"))),
                }
            }
            alphabet = Some(letters);
            continue;
        }

        let (num, body) = content
            .split_once(':')
            .ok_or_else(|| syntax(line, "expected `<num>: ...`"))?;
        let num: usize = num
            .trim()
            .parse()
            .map_err(|_| syntax(line, format!("bad instruction number {:?}", num.trim())))?;
        if num == 0 {
            return Err(syntax(line, "instructions are numbered from 1"));
        }
        let body = body.trim();
        let mut words = body.splitn(2, char::is_whitespace);
        let op = words.next().unwrap_or("");
        let rest = words.next().unwrap_or("").trim();
        match op {
            "HALT" => {
                let verdict = match rest {
                    "accept" => Verdict::Accept,
                    "reject" => Verdict::Reject,
                    _ => return Err(syntax(line, "HALT needs `accept` or `reject`")),
                };
                if entries.insert(num, (line, Entry::Halt(verdict))).is_some() {
                    return Err(syntax(line, format!("instruction {num} defined twice")));
                }
            }
            "CASE" => {
                let row = parse_case(rest, line)?;
                match entries.entry(num).or_insert((line, Entry::Case(Vec::new()))) {
                    (_, Entry::Case(rows)) => rows.push(row),
                    (_, Entry::Halt(..)) => {
                        return Err(syntax(line, format!("instruction {num} is already a HALT")))
                    }
                }
            }
            _ => return Err(syntax(line, format!("unknown operation {op:?}"))),
        }
    }

    if entries.is_empty() {
        return Err(ProgramError::Invalid("program has no instructions".into()));
    }
    for (expect, (&num, &(line, _))) in (1..).zip(&entries) {
        if num != expect {
            return Err(syntax(line, format!("instruction {expect} is missing")));
        }
    }
    let count = entries.len();

    let k = registers.unwrap_or_else(|| {
        entries
            .values()
            .find_map(|(_, e)| match e {
                Entry::Case(rows) => rows.first().map(|r| r.zeros.len()),
                Entry::Halt(..) => None,
            })
            .unwrap_or(0)
    });
    let mut letters = alphabet.unwrap_or_else(|| {
        entries
            .values()
            .flat_map(|(_, e)| match e {
                Entry::Case(rows) => rows.iter().filter_map(|r| r.symbol).collect(),
                Entry::Halt(..) => Vec::new(),
            })
            .filter(|c| !matches!(c, '^' | '$'))
            .collect()
    });
    letters.sort_unstable();
    letters.dedup();
    if k > 16 {
        return Err(ProgramError::Invalid(format!("{k} registers is more than 16")));
    }

    let mut symbols = vec!['^', '$'];
    symbols.extend(&letters);
    let masks = 1usize << k;

    let mut instructions = Vec::with_capacity(count);
    for (num, (_, entry)) in entries {
        let rows = match entry {
            Entry::Halt(v) => {
                instructions.push(Instruction::Halt(v));
                continue;
            }
            Entry::Case(rows) => rows,
        };
        let mut table: Vec<Option<Branch>> = vec![None; symbols.len() * masks];
        for row in rows {
            if row.zeros.len() != k || row.branch.deltas.len() != k {
                return Err(syntax(
                    row.line,
                    format!("row does not match the register count {k}"),
                ));
            }
            if row.branch.next == 0 || row.branch.next > count {
                return Err(ProgramError::DanglingJump {
                    line: row.line,
                    target: row.branch.next,
                    count,
                });
            }
            let sym_rows: Vec<usize> = match row.symbol {
                None => (0..symbols.len()).collect(),
                Some(c) => match symbols.iter().position(|s| *s == c) {
                    Some(i) => vec![i],
                    None => {
                        return Err(syntax(row.line, format!("symbol {c:?} not in alphabet")))
                    }
                },
            };
            for s in sym_rows {
                for mask in 0..masks {
                    let matches = row.zeros.iter().enumerate().all(|(j, z)| match z {
                        None => true,
                        Some(is_zero) => *is_zero == (mask >> j & 1 == 0),
                    });
                    if !matches {
                        continue;
                    }
                    let slot = &mut table[s * masks + mask];
                    if slot.is_some() {
                        return Err(ProgramError::Overlap {
                            line: row.line,
                            instr: num,
                        });
                    }
                    *slot = Some(row.branch.clone());
                }
            }
        }
        let mut dense = Vec::with_capacity(table.len());
        for (i, slot) in table.into_iter().enumerate() {
            match slot {
                Some(b) => dense.push(b),
                None => {
                    let mask = i % masks;
                    let pattern: String = (0..k)
                        .map(|j| if mask >> j & 1 == 0 { 'Z' } else { 'N' })
                        .collect();
                    return Err(ProgramError::NonTotal {
                        instr: num,
                        symbol: symbols[i / masks].to_string(),
                        pattern: if k == 0 { "-".into() } else { pattern },
                    });
                }
            }
        }
        instructions.push(Instruction::Case(dense));
    }
    Program::new(instructions, k, letters)
}
