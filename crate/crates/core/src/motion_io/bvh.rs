use super::{BvhError, Channel, JointNode, SkeletonClip};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

/// Whitespace tokenizer that remembers 1-based line/column positions.
fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut start: Option<usize> = None;
        for (idx, ch) in line.char_indices() {
            if ch.is_whitespace() {
                if let Some(s) = start.take() {
                    out.push(Token {
                        text: &line[s..idx],
                        line: ln + 1,
                        column: s + 1,
                    });
                }
            } else if start.is_none() {
                start = Some(idx);
            }
        }
        if let Some(s) = start {
            out.push(Token {
                text: &line[s..],
                line: ln + 1,
                column: s + 1,
            });
        }
    }
    out
}

struct Parser<'a> {
    tokens: Vec<Token<'a>>,
    pos: usize,
    last_line: usize,
}

impl<'a> Parser<'a> {
    fn syntax(&self, tok: Option<Token<'a>>, message: impl Into<String>) -> BvhError {
        let (line, column) = tok.map_or((self.last_line + 1, 1), |t| (t.line, t.column));
        BvhError::Syntax {
            line,
            column,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<Token<'a>> {
        self.tokens.get(self.pos).copied()
    }

    fn next(&mut self) -> Result<Token<'a>, BvhError> {
        let tok = self.peek().ok_or_else(|| self.syntax(None, "unexpected end of input"))?;
        self.pos += 1;
        Ok(tok)
    }

    fn expect(&mut self, word: &str) -> Result<Token<'a>, BvhError> {
        let tok = self.next()?;
        if tok.text.eq_ignore_ascii_case(word) {
            Ok(tok)
        } else {
            Err(self.syntax(Some(tok), format!("expected `{word}`, found `{}`", tok.text)))
        }
    }

    fn number(&mut self) -> Result<f64, BvhError> {
        let tok = self.next()?;
        parse_number(tok).map_err(|m| self.syntax(Some(tok), m))
    }

    fn integer(&mut self) -> Result<usize, BvhError> {
        let tok = self.next()?;
        tok.text
            .parse::<usize>()
            .map_err(|_| self.syntax(Some(tok), format!("expected an integer, found `{}`", tok.text)))
    }

    fn offset(&mut self) -> Result<[f64; 3], BvhError> {
        self.expect("OFFSET")?;
        Ok([self.number()?, self.number()?, self.number()?])
    }

    fn joint(&mut self, parent: Option<usize>, joints: &mut Vec<JointNode>) -> Result<(), BvhError> {
        let name = self.next()?;
        self.expect("{")?;
        let offset = self.offset()?;
        let mut channels = Vec::new();
        if self.peek().is_some_and(|t| t.text.eq_ignore_ascii_case("CHANNELS")) {
            self.pos += 1;
            let count = self.integer()?;
            for _ in 0..count {
                let tok = self.next()?;
                let ch = Channel::from_name(tok.text).ok_or_else(|| BvhError::UnknownChannel {
                    line: tok.line,
                    column: tok.column,
                    name: tok.text.to_string(),
                })?;
                channels.push(ch);
            }
        }
        let index = joints.len();
        joints.push(JointNode::new(name.text, parent, offset, channels));
        loop {
            let tok = self.next()?;
            match tok.text {
                "}" => return Ok(()),
                t if t.eq_ignore_ascii_case("JOINT") => self.joint(Some(index), joints)?,
                t if t.eq_ignore_ascii_case("End") => {
                    self.expect("Site")?;
                    self.expect("{")?;
                    let end = self.offset()?;
                    self.expect("}")?;
                    if joints[index].end_site.replace(end).is_some() {
                        return Err(self.syntax(Some(tok), "joint has more than one End Site"));
                    }
                }
                other => {
                    return Err(self.syntax(
                        Some(tok),
                        format!("expected `JOINT`, `End Site` or `}}`, found `{other}`"),
                    ))
                }
            }
        }
    }
}

fn parse_number(tok: Token<'_>) -> Result<f64, String> {
    match tok.text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("expected a finite number, found `{}`", tok.text)),
    }
}

/// Parse a complete BVH document (HIERARCHY and MOTION sections).
pub fn parse_bvh(text: &str) -> Result<SkeletonClip, BvhError> {
    let mut parser = Parser {
        tokens: tokenize(text),
        pos: 0,
        last_line: text.lines().count(),
    };
    parser.expect("HIERARCHY")?;
    parser.expect("ROOT")?;
    let mut joints = Vec::new();
    parser.joint(None, &mut joints)?;
    parser.expect("MOTION")?;
    parser.expect("Frames:")?;
    let declared = parser.integer()?;
    parser.expect("Frame")?;
    parser.expect("Time:")?;
    let frame_time_tok = parser.peek();
    let frame_time = parser.number()?;
    if frame_time <= 0.0 {
        return Err(parser.syntax(frame_time_tok, "frame time must be positive"));
    }

    let n_channels: usize = joints.iter().map(|j| j.channels.len()).sum();
    if n_channels == 0 {
        return Err(BvhError::Invalid("skeleton declares no channels".into()));
    }
    let rest = &parser.tokens[parser.pos..];
    let mut frames = Vec::with_capacity(declared * n_channels);
    let mut rows = 0;
    let mut i = 0;
    while i < rest.len() {
        let line = rest[i].line;
        let end = rest[i..].iter().position(|t| t.line != line).map_or(rest.len(), |p| i + p);
        let row = &rest[i..end];
        if row.len() != n_channels {
            return Err(BvhError::Syntax {
                line,
                column: row[0].column,
                message: format!("expected {n_channels} channel values, found {}", row.len()),
            });
        }
        for tok in row {
            frames.push(parse_number(*tok).map_err(|m| parser.syntax(Some(*tok), m))?);
        }
        rows += 1;
        i = end;
    }
    if rows != declared {
        return Err(BvhError::FrameCountMismatch {
            declared,
            found: rows,
        });
    }
    SkeletonClip::new(joints, frame_time, frames)
}

/// Serialize a clip to BVH text. Numbers use the shortest representation that
/// parses back to the identical `f64`.
pub fn write_bvh(clip: &SkeletonClip) -> String {
    let mut out = String::from("HIERARCHY\n");
    write_joint(clip, 0, 0, &mut out);
    out.push_str("MOTION\n");
    let _ = writeln!(out, "Frames: {}", clip.n_frames());
    let _ = writeln!(out, "Frame Time: {}", clip.frame_time());
    for i in 0..clip.n_frames() {
        let row = clip.frame(i);
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

fn write_offset(out: &mut String, indent: &str, o: &[f64; 3]) {
    let _ = writeln!(out, "{indent}OFFSET {} {} {}", o[0], o[1], o[2]);
}

fn write_joint(clip: &SkeletonClip, j: usize, depth: usize, out: &mut String) {
    let pad = "\t".repeat(depth);
    let inner = "\t".repeat(depth + 1);
    let joint = &clip.joints()[j];
    let kind = if joint.parent.is_none() { "ROOT" } else { "JOINT" };
    let _ = writeln!(out, "{pad}{kind} {}", joint.name);
    let _ = writeln!(out, "{pad}{{");
    write_offset(out, &inner, &joint.offset);
    if !joint.channels.is_empty() {
        let names: Vec<&str> = joint.channels.iter().map(|c| c.name()).collect();
        let _ = writeln!(out, "{inner}CHANNELS {} {}", names.len(), names.join(" "));
    }
    let children: Vec<usize> = clip.children_of(j).collect();
    for c in children {
        write_joint(clip, c, depth + 1, out);
    }
    if let Some(end) = &joint.end_site {
        let _ = writeln!(out, "{inner}End Site");
        let _ = writeln!(out, "{inner}{{");
        write_offset(out, &"\t".repeat(depth + 2), end);
        let _ = writeln!(out, "{inner}}}");
    }
    let _ = writeln!(out, "{pad}}}");
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "HIERARCHY
ROOT Hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  End Site
  {
    OFFSET 0 1 0
  }
}
MOTION
Frames: 2
Frame Time: 0.0333
0 0 0 0 0 0
1.5 -2 3 10 20 30
";

    #[test]
    fn parses_minimal_document() {
        let clip = parse_bvh(MINIMAL).unwrap();
        assert_eq!(clip.joints().len(), 1);
        assert_eq!(clip.n_frames(), 2);
        assert_eq!(clip.frame_time(), 0.0333);
        assert_eq!(clip.frame(1), &[1.5, -2.0, 3.0, 10.0, 20.0, 30.0]);
        assert_eq!(
            clip.joints()[0].channels,
            vec![
                Channel::Xposition,
                Channel::Yposition,
                Channel::Zposition,
                Channel::Zrotation,
                Channel::Xrotation,
                Channel::Yrotation
            ]
        );
        assert_eq!(clip.joints()[0].end_site, Some([0.0, 1.0, 0.0]));
    }

    #[test]
    fn frame_count_mismatch() {
        let mut text = MINIMAL.replace("Frames: 2", "Frames: 10");
        for _ in 0..7 {
            text.push_str("0 0 0 0 0 0\n");
        }
        assert_eq!(
            parse_bvh(&text).unwrap_err(),
            BvhError::FrameCountMismatch {
                declared: 10,
                found: 9
            }
        );
    }

    #[test]
    fn unknown_channel_reports_position() {
        let text = MINIMAL.replace("Yrotation\n", "Wrotation\n");
        match parse_bvh(&text).unwrap_err() {
            BvhError::UnknownChannel { line, name, .. } => {
                assert_eq!(line, 5);
                assert_eq!(name, "Wrotation");
            }
            e => panic!("unexpected error {e:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_line_and_column() {
        let text = MINIMAL.replace("OFFSET 0 0 0", "OFFSET 0 zero 0");
        match parse_bvh(&text).unwrap_err() {
            BvhError::Syntax { line, column, .. } => assert_eq!((line, column), (4, 12)),
            e => panic!("unexpected error {e:?}"),
        }
        let text = MINIMAL.replace("1.5 -2 3 10 20 30", "1.5 -2 3 10 20");
        assert!(matches!(parse_bvh(&text), Err(BvhError::Syntax { line: 15, .. })));
    }

    #[test]
    fn writer_emits_single_root_and_motion() {
        let clip = parse_bvh(MINIMAL).unwrap();
        let text = write_bvh(&clip);
        assert_eq!(text.matches("ROOT").count(), 1);
        assert_eq!(text.matches("MOTION").count(), 1);
        assert_eq!(parse_bvh(&text).unwrap(), clip);
    }

    #[test]
    fn frame_time_keeps_six_digits() {
        let joints = vec![JointNode::new("Hips", None, [0.0; 3], vec![Channel::Xrotation])];
        let clip = SkeletonClip::new(joints, 1.0 / 30.0, vec![0.0]).unwrap();
        let text = write_bvh(&clip);
        let line = text.lines().find(|l| l.starts_with("Frame Time:")).unwrap();
        assert!(line.contains("0.033333"), "{line}");
        assert_eq!(parse_bvh(&text).unwrap().frame_time(), 1.0 / 30.0);
    }
}
