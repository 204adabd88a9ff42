//! Line-oriented cascade text format.
//!
//! ```text
//! # comment
//! cascade <base_w> <base_h> [label]
//! stage <stage_threshold>
//! stump <threshold> <left_val> <right_val>
//! rect <x> <y> <w> <h> <weight>
//! ```
//!
//! `rect` lines bind to the preceding `stump` (two or three per stump) and
//! `stump` lines to the preceding `stage`. The canonical form written by
//! [`serialize_cascade`] prints reals with 9 significant digits.

use super::{CascadeError, CascadeModel, HaarFeature, Stage, Stump, MIN_BASE};
use crate::imaging::Rect;
use std::fmt::Write;

fn fmt_real(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e9 {
        // -0 prints as 0
        return format!("{}", v as i64);
    }
    let s = format!("{v:.8e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent form");
    let mantissa = if mantissa.contains('.') {
        mantissa.trim_end_matches('0').trim_end_matches('.')
    } else {
        mantissa
    };
    format!("{mantissa}e{exp}")
}

/// Canonical text of a model. Identical models give byte-identical text.
pub fn serialize_cascade(model: &CascadeModel) -> String {
    let mut out = String::new();
    if model.label.is_empty() {
        writeln!(out, "cascade {} {}", model.base_w, model.base_h).unwrap();
    } else {
        writeln!(out, "cascade {} {} {}", model.base_w, model.base_h, model.label).unwrap();
    }
    for stage in &model.stages {
        writeln!(out, "stage {}", fmt_real(stage.stage_threshold)).unwrap();
        for s in &stage.stumps {
            writeln!(out, "stump {} {} {}", fmt_real(s.threshold), fmt_real(s.left_val), fmt_real(s.right_val)).unwrap();
            for (r, w) in &s.feature.rects {
                writeln!(out, "rect {} {} {} {} {}", r.x(), r.y(), r.w(), r.h(), fmt_real(*w)).unwrap();
            }
        }
    }
    out
}

fn syntax(line: usize, msg: impl Into<String>) -> CascadeError {
    CascadeError::Syntax { line, msg: msg.into() }
}

fn real(tok: &str, line: usize) -> Result<f64, CascadeError> {
    let v: f64 = tok.parse().map_err(|_| syntax(line, format!("`{tok}` is not a number")))?;
    if !v.is_finite() {
        return Err(syntax(line, format!("`{tok}` is not finite")));
    }
    Ok(super::quantize(v))
}

fn int(tok: &str, line: usize) -> Result<u32, CascadeError> {
    tok.parse().map_err(|_| syntax(line, format!("`{tok}` is not a non-negative integer")))
}

fn arity(args: &[&str], expected: usize, line: usize, what: &str) -> Result<(), CascadeError> {
    if args.len() != expected {
        return Err(syntax(line, format!("`{what}` takes {expected} arguments, got {}", args.len())));
    }
    Ok(())
}

// Stump under construction with the line it started on.
struct Pending {
    line: usize,
    stump: Stump,
}

fn close_stump(p: Pending, stage: &mut Stage) -> Result<(), CascadeError> {
    let n = p.stump.feature.rects.len();
    if !(2..=3).contains(&n) {
        return Err(syntax(p.line, format!("stump needs 2 or 3 rects, has {n}")));
    }
    let sum = p.stump.feature.weighted_area();
    if sum.abs() > 1e-6 {
        return Err(CascadeError::NonZeroMean { line: p.line, sum });
    }
    stage.stumps.push(p.stump);
    Ok(())
}

fn close_stage(
    stage: Option<(usize, Stage)>,
    stump: Option<Pending>,
    stages: &mut Vec<Stage>,
) -> Result<(), CascadeError> {
    if let Some((line, mut stage)) = stage {
        if let Some(p) = stump {
            close_stump(p, &mut stage)?;
        }
        if stage.stumps.is_empty() {
            return Err(CascadeError::EmptyStage { line });
        }
        stages.push(stage);
    }
    Ok(())
}

pub fn parse_cascade(text: &str) -> Result<CascadeModel, CascadeError> {
    let mut header: Option<(u32, u32, String)> = None;
    let mut stages = Vec::new();
    let mut stage: Option<(usize, Stage)> = None;
    let mut stump: Option<Pending> = None;
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let content = raw.split('#').next().unwrap_or("");
        let mut toks = content.split_whitespace();
        let Some(word) = toks.next() else { continue };
        let args: Vec<&str> = toks.collect();
        match word {
            "cascade" => {
                if header.is_some() {
                    return Err(syntax(line, "duplicate `cascade` header"));
                }
                if !(2..=3).contains(&args.len()) {
                    return Err(syntax(line, "`cascade` takes <base_w> <base_h> [label]"));
                }
                let (w, h) = (int(args[0], line)?, int(args[1], line)?);
                if w < MIN_BASE || h < MIN_BASE {
                    return Err(syntax(line, format!("base window {w}x{h} smaller than {MIN_BASE}x{MIN_BASE}")));
                }
                header = Some((w, h, args.get(2).unwrap_or(&"").to_string()));
            }
            "stage" => {
                if header.is_none() {
                    return Err(syntax(line, "`stage` before `cascade` header"));
                }
                arity(&args, 1, line, "stage")?;
                let t = real(args[0], line)?;
                close_stage(stage.take(), stump.take(), &mut stages)?;
                stage = Some((line, Stage { stumps: Vec::new(), stage_threshold: t }));
            }
            "stump" => {
                let Some((_, st)) = stage.as_mut() else {
                    return Err(syntax(line, "`stump` outside a stage"));
                };
                arity(&args, 3, line, "stump")?;
                let (t, l, r) = (real(args[0], line)?, real(args[1], line)?, real(args[2], line)?);
                if let Some(p) = stump.take() {
                    close_stump(p, st)?;
                }
                stump = Some(Pending {
                    line,
                    stump: Stump { feature: HaarFeature { rects: Vec::new() }, threshold: t, left_val: l, right_val: r },
                });
            }
            "rect" => {
                let (base_w, base_h) = match &header {
                    Some((w, h, _)) => (*w, *h),
                    None => return Err(syntax(line, "`rect` before `cascade` header")),
                };
                let Some(p) = stump.as_mut() else {
                    return Err(syntax(line, "`rect` outside a stump"));
                };
                arity(&args, 5, line, "rect")?;
                let (x, y, w, h) = (int(args[0], line)?, int(args[1], line)?, int(args[2], line)?, int(args[3], line)?);
                let weight = real(args[4], line)?;
                let rect = Rect::new(x, y, w, h).map_err(|e| syntax(line, e.to_string()))?;
                if x.checked_add(w).is_none_or(|r| r > base_w) || y.checked_add(h).is_none_or(|b| b > base_h) {
                    return Err(CascadeError::RectOutOfWindow { line, x, y, w, h, base_w, base_h });
                }
                if p.stump.feature.rects.len() == 3 {
                    return Err(syntax(line, "stump already has 3 rects"));
                }
                p.stump.feature.rects.push((rect, weight));
            }
            other => return Err(CascadeError::UnknownDirective { line, word: other.to_string() }),
        }
    }
    close_stage(stage.take(), stump.take(), &mut stages)?;
    let Some((base_w, base_h, label)) = header else {
        return Err(syntax(last_line.max(1), "missing `cascade` header"));
    };
    if stages.is_empty() {
        return Err(syntax(last_line.max(1), "cascade has no stages"));
    }
    let model = CascadeModel { base_w, base_h, stages, label };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = "\
# toy
cascade 12 12 hand
stage -0.5
stump 0.25 -1 1
rect 0 0 6 12 1
rect 6 0 6 12 -1
";

    const TWO_STAGES: &str = "\
cascade 24 24 face
stage 0.5
stump 0.1 -1.5 1.5
rect 0 0 12 24 1
rect 12 0 12 24 -1
stump -2.5e-1 1 -1
rect 0 0 8 8 1
rect 8 0 8 8 -2
rect 16 0 8 8 1
stage 1.25
stump 0 -1 1
rect 0 0 24 12 -1
rect 0 12 24 12 1
";

    #[test]
    fn minimal_parses() {
        let m = parse_cascade(MINIMAL).unwrap();
        assert_eq!(m.stages.len(), 1);
        assert_eq!(m.label, "hand");
        assert_eq!(m.stages[0].stumps[0].feature.rects.len(), 2);
        assert_eq!(m.stages[0].stage_threshold, -0.5);
    }

    #[test]
    fn canonical_round_trip() {
        let m = parse_cascade(TWO_STAGES).unwrap();
        let text = serialize_cascade(&m);
        assert_eq!(parse_cascade(&text).unwrap(), m);
        assert_eq!(serialize_cascade(&parse_cascade(&text).unwrap()), text);
        assert!(text.contains("stump -2.5e-1 1 -1\n"));
    }

    #[test]
    fn empty_label_omitted() {
        let mut m = parse_cascade(MINIMAL).unwrap();
        m.label.clear();
        let text = serialize_cascade(&m);
        assert!(text.starts_with("cascade 12 12\n"));
        assert_eq!(parse_cascade(&text).unwrap(), m);
    }

    #[test]
    fn error_kinds_carry_lines() {
        let bad_rect = MINIMAL.replace("rect 6 0 6 12 -1", "rect 7 0 6 12 -1");
        assert!(matches!(parse_cascade(&bad_rect), Err(CascadeError::RectOutOfWindow { line: 6, .. })));
        let unknown = MINIMAL.replace("stage -0.5", "phase -0.5");
        assert!(matches!(parse_cascade(&unknown), Err(CascadeError::UnknownDirective { line: 3, .. })));
        let skew = MINIMAL.replace("rect 6 0 6 12 -1", "rect 6 0 6 12 -2");
        assert!(matches!(parse_cascade(&skew), Err(CascadeError::NonZeroMean { line: 4, .. })));
        let empty = "cascade 12 12\nstage 0\nstage 1\nstump 0 1 -1\nrect 0 0 6 6 1\nrect 6 0 6 6 -1\n";
        assert!(matches!(parse_cascade(empty), Err(CascadeError::EmptyStage { line: 2 })));
        assert!(matches!(parse_cascade("stage 0\n"), Err(CascadeError::Syntax { line: 1, .. })));
        assert!(matches!(parse_cascade(""), Err(CascadeError::Syntax { .. })));
        let one_rect = "cascade 12 12\nstage 0\nstump 0 1 -1\nrect 0 0 6 6 0\n";
        assert!(matches!(parse_cascade(one_rect), Err(CascadeError::Syntax { line: 3, .. })));
        let err = parse_cascade(&bad_rect).unwrap_err().to_string();
        assert!(err.starts_with("line 6:"), "{err}");
    }

    #[test]
    fn real_formatting() {
        assert_eq!(fmt_real(1.0), "1");
        assert_eq!(fmt_real(-0.0), "0");
        assert_eq!(fmt_real(-2.0), "-2");
        assert_eq!(fmt_real(0.5), "5e-1");
        assert_eq!(fmt_real(1.0 / 3.0), "3.33333333e-1");
        assert_eq!(fmt_real(-1e30), "-1e30");
    }

    fn corrupt(text: &str, which: usize, replacement: &str) -> String {
        let mut count = 0;
        text.lines()
            .map(|l| {
                l.split_whitespace()
                    .map(|t| {
                        count += 1;
                        if count - 1 == which { replacement.to_string() } else { t.to_string() }
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    proptest! {
        // A single corrupted token either fails to parse or still yields a
        // model that satisfies every invariant.
        #[test]
        fn single_token_corruption_never_yields_invalid_model(
            which in 0usize..62,
            replacement in prop::sample::select(vec![
                "-1", "0", "3", "13", "25", "100", "0.5", "-7e3", "nan", "inf", "x", "stage",
                "stump", "rect", "cascade", "", "4294967295", "1e400",
            ]),
        ) {
            let text = corrupt(TWO_STAGES, which, replacement);
            if let Ok(m) = parse_cascade(&text) {
                prop_assert!(m.validate().is_ok());
                prop_assert_eq!(parse_cascade(&serialize_cascade(&m)).unwrap(), m);
            }
        }
    }
}
