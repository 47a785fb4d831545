//! Composition requests in tuple syntax, their dependency DAG, and the
//! per-execution memo of intermediate results.
//!
//! ```text
//! Request := '<' Name ',' Inputs '>'
//! Inputs  := '(' Item (',' Item)* ')' | Literal
//! Item    := Request | Literal
//! ```

mod dag;
mod memo;

use std::fmt;

use thiserror::Error;

pub use dag::{
    fingerprint_params, result_value, CompositionDag, Consolidated, DagNode, MemberProps,
    NodeId, NodeKind, NodeProvenance, NodeState, Param, ParamValue, ResultToken,
};
pub use memo::{Claim, MemoTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompositionError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unbalanced brackets at offset {0}")]
    Unbalanced(usize),
    #[error("empty service name at offset {0}")]
    EmptyServiceName(usize),
    #[error("empty input list at offset {0}")]
    EmptyInputList(usize),
    #[error("dependency cycle through node {0}")]
    Cycle(usize),
    #[error("unknown service `{0}`")]
    UnknownService(String),
    #[error("composition incomplete: node {0} has no result")]
    Incomplete(usize),
    #[error("node {node} is {state}, expected {expected}")]
    BadState {
        node: usize,
        state: &'static str,
        expected: &'static str,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum InputItem {
    Literal(String),
    Call(InvocationNode),
}

/// One `<service, inputs>` tuple.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InvocationNode {
    pub service: String,
    pub inputs: Vec<InputItem>,
}

impl InvocationNode {
    pub fn leaf(service: impl Into<String>, input: impl Into<String>) -> Self {
        Self {
            service: service.into(),
            inputs: vec![InputItem::Literal(input.into())],
        }
    }

    pub fn size(&self) -> usize {
        1 + self
            .inputs
            .iter()
            .map(|i| match i {
                InputItem::Call(c) => c.size(),
                InputItem::Literal(_) => 0,
            })
            .sum::<usize>()
    }
}

impl fmt::Display for InvocationNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},", self.service)?;
        match self.inputs.as_slice() {
            [InputItem::Literal(l)] => write!(f, " {l}")?,
            items => {
                f.write_str("(")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    match item {
                        InputItem::Literal(l) => f.write_str(l)?,
                        InputItem::Call(c) => write!(f, "{c}")?,
                    }
                }
                f.write_str(")")?;
            }
        }
        f.write_str(">")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositionRequest {
    pub root: InvocationNode,
}

impl fmt::Display for CompositionRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl std::str::FromStr for CompositionRequest {
    type Err = CompositionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_request(s)
    }
}

pub fn parse_request(text: &str) -> Result<CompositionRequest, CompositionError> {
    let mut p = RequestParser {
        src: text.as_bytes(),
        text,
        pos: 0,
    };
    p.check_balance()?;
    p.skip_ws();
    let root = p.request()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(CompositionError::Syntax {
            offset: p.pos,
            message: "trailing input after request".into(),
        });
    }
    Ok(CompositionRequest { root })
}

struct RequestParser<'a> {
    src: &'a [u8],
    text: &'a str,
    pos: usize,
}

impl RequestParser<'_> {
    fn check_balance(&self) -> Result<(), CompositionError> {
        let mut stack = Vec::new();
        for (i, &b) in self.src.iter().enumerate() {
            match b {
                b'<' | b'(' => stack.push((b, i)),
                b'>' | b')' => {
                    let want = if b == b'>' { b'<' } else { b'(' };
                    match stack.pop() {
                        Some((open, _)) if open == want => {}
                        _ => return Err(CompositionError::Unbalanced(i)),
                    }
                }
                _ => {}
            }
        }
        match stack.pop() {
            Some((_, i)) => Err(CompositionError::Unbalanced(i)),
            None => Ok(()),
        }
    }

    fn skip_ws(&mut self) {
        while self.src.get(self.pos).is_some_and(u8::is_ascii_whitespace) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, b: u8) -> Result<(), CompositionError> {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(CompositionError::Syntax {
                offset: self.pos,
                message: format!("expected `{}`", b as char),
            })
        }
    }

    fn atom(&mut self) -> (usize, &str) {
        self.skip_ws();
        let start = self.pos;
        while self
            .src
            .get(self.pos)
            .is_some_and(|b| !matches!(b, b'<' | b'>' | b'(' | b')' | b','))
        {
            self.pos += 1;
        }
        (start, self.text[start..self.pos].trim())
    }

    fn request(&mut self) -> Result<InvocationNode, CompositionError> {
        self.eat(b'<')?;
        let (at, name) = self.atom();
        if name.is_empty() {
            return Err(CompositionError::EmptyServiceName(at));
        }
        let valid = name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid {
            return Err(CompositionError::Syntax {
                offset: at,
                message: format!("invalid service name `{name}`"),
            });
        }
        let service = name.to_string();
        self.eat(b',')?;
        self.skip_ws();
        let inputs = if self.src.get(self.pos) == Some(&b'(') {
            let open = self.pos;
            self.pos += 1;
            let mut items = Vec::new();
            loop {
                self.skip_ws();
                if self.src.get(self.pos) == Some(&b')') && items.is_empty() {
                    return Err(CompositionError::EmptyInputList(open));
                }
                items.push(self.item()?);
                self.skip_ws();
                match self.src.get(self.pos) {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => {
                        return Err(CompositionError::Syntax {
                            offset: self.pos,
                            message: "expected `,` or `)`".into(),
                        })
                    }
                }
            }
            items
        } else {
            let (at, lit) = self.atom();
            if lit.is_empty() {
                return Err(CompositionError::EmptyInputList(at));
            }
            vec![InputItem::Literal(lit.to_string())]
        };
        self.eat(b'>')?;
        Ok(InvocationNode { service, inputs })
    }

    fn item(&mut self) -> Result<InputItem, CompositionError> {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&b'<') {
            return Ok(InputItem::Call(self.request()?));
        }
        let (at, lit) = self.atom();
        if lit.is_empty() {
            return Err(CompositionError::Syntax {
                offset: at,
                message: "empty input".into(),
            });
        }
        Ok(InputItem::Literal(lit.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_three_service_request() {
        let r = parse_request("<Service3,(<Service1, Input1>,<Service2, Input2>)>").unwrap();
        assert_eq!(r.root.service, "Service3");
        assert_eq!(
            r.root.inputs,
            vec![
                InputItem::Call(InvocationNode::leaf("Service1", "Input1")),
                InputItem::Call(InvocationNode::leaf("Service2", "Input2")),
            ]
        );
    }

    #[test]
    fn parses_minimal_leaf() {
        let r = parse_request("<S, x>").unwrap();
        assert_eq!(r.root, InvocationNode::leaf("S", "x"));
    }

    #[test]
    fn parses_identical_children() {
        let r = parse_request("<A,(<A, x>,<A, x>)>").unwrap();
        let leaf = InputItem::Call(InvocationNode::leaf("A", "x"));
        assert_eq!(r.root.inputs, vec![leaf.clone(), leaf]);
    }

    #[test]
    fn mixed_literals_and_calls() {
        let r = parse_request("< T , ( a , <U, b> , c ) >").unwrap();
        assert_eq!(r.root.inputs.len(), 3);
        assert_eq!(r.root.inputs[0], InputItem::Literal("a".into()));
    }

    #[test]
    fn rejects_malformed() {
        assert!(matches!(parse_request("<S, x"), Err(CompositionError::Unbalanced(_))));
        assert!(matches!(parse_request("<S,(x>)"), Err(CompositionError::Unbalanced(_))));
        assert!(matches!(parse_request("< , x>"), Err(CompositionError::EmptyServiceName(_))));
        assert!(matches!(parse_request("<S, ()>"), Err(CompositionError::EmptyInputList(_))));
        assert!(matches!(parse_request("<S, >"), Err(CompositionError::EmptyInputList(_))));
        assert!(matches!(parse_request("<S, x> junk"), Err(CompositionError::Syntax { .. })));
        assert!(matches!(parse_request("<S,(a,,b)>"), Err(CompositionError::Syntax { .. })));
    }

    #[test]
    fn display_reparses() {
        let text = "<Service3,(<Service1, Input1>,<Service2, Input2>,lit)>";
        let r = parse_request(text).unwrap();
        assert_eq!(parse_request(&r.to_string()).unwrap(), r);
    }
}
