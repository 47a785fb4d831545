use std::collections::HashMap;
use std::net::Ipv4Addr;

use super::{
    CompositionDef, Deployment, Entry, Implementation, Member, Properties, Registry,
    RegistryError, ServiceEntry,
};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String),
    Open,
    Close,
    Semi,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("`{w}`"),
            Tok::Quoted(q) => format!("\"{q}\""),
            Tok::Open => "`{`".into(),
            Tok::Close => "`}`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Pos {
    line: usize,
    column: usize,
}

struct Lexer<'a> {
    src: &'a [u8],
    text: &'a str,
    offset: usize,
    line: usize,
    column: usize,
}

fn is_word_byte(b: u8) -> bool {
    !b.is_ascii_whitespace() && !matches!(b, b'{' | b'}' | b';' | b'"' | b'#')
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            src: text.as_bytes(),
            text,
            offset: 0,
            line: 1,
            column: 1,
        }
    }

    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            column: self.column,
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let b = *self.src.get(self.offset)?;
        self.offset += 1;
        if b == b'\n' {
            self.line += 1;
            self.column = 1;
        } else if b & 0xC0 != 0x80 {
            self.column += 1;
        }
        Some(b)
    }

    fn skip_trivia(&mut self) {
        while let Some(&b) = self.src.get(self.offset) {
            if b.is_ascii_whitespace() {
                self.bump();
            } else if b == b'#' {
                while let Some(b) = self.bump() {
                    if b == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn next(&mut self) -> Result<(Tok, Pos), RegistryError> {
        self.skip_trivia();
        let pos = self.pos();
        let Some(&b) = self.src.get(self.offset) else {
            return Ok((Tok::Eof, pos));
        };
        let tok = match b {
            b'{' => {
                self.bump();
                Tok::Open
            }
            b'}' => {
                self.bump();
                Tok::Close
            }
            b';' => {
                self.bump();
                Tok::Semi
            }
            b'"' => {
                self.bump();
                let mut out = Vec::new();
                loop {
                    match self.bump() {
                        None => return Err(syntax(pos, "unterminated string")),
                        Some(b'"') => break,
                        Some(b'\\') => match self.bump() {
                            Some(c) => out.push(c),
                            None => return Err(syntax(pos, "unterminated string")),
                        },
                        Some(c) => out.push(c),
                    }
                }
                Tok::Quoted(String::from_utf8(out).map_err(|_| syntax(pos, "invalid UTF-8"))?)
            }
            _ => {
                let start = self.offset;
                while self.src.get(self.offset).copied().is_some_and(is_word_byte) {
                    self.bump();
                }
                Tok::Word(self.text[start..self.offset].to_string())
            }
        };
        Ok((tok, pos))
    }

    /// Raw text up to the `}` matching an already consumed `{`.
    fn braced_text(&mut self, open: Pos) -> Result<String, RegistryError> {
        let start = self.offset;
        let mut depth = 1usize;
        loop {
            match self.bump() {
                None => return Err(syntax(open, "unterminated `{`")),
                Some(b'{') => depth += 1,
                Some(b'}') => {
                    depth -= 1;
                    if depth == 0 {
                        return Ok(self.text[start..self.offset - 1].trim().to_string());
                    }
                }
                Some(_) => {}
            }
        }
    }
}

fn syntax(pos: Pos, message: impl Into<String>) -> RegistryError {
    RegistryError::Syntax {
        line: pos.line,
        column: pos.column,
        message: message.into(),
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

struct Parser<'a> {
    lex: Lexer<'a>,
    peeked: Option<(Tok, Pos)>,
}

impl<'a> Parser<'a> {
    fn peek(&mut self) -> Result<&(Tok, Pos), RegistryError> {
        if self.peeked.is_none() {
            self.peeked = Some(self.lex.next()?);
        }
        Ok(self.peeked.as_ref().expect("just filled"))
    }

    fn next(&mut self) -> Result<(Tok, Pos), RegistryError> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lex.next(),
        }
    }

    fn expect(&mut self, want: Tok) -> Result<Pos, RegistryError> {
        let (tok, pos) = self.next()?;
        if tok == want {
            Ok(pos)
        } else {
            Err(syntax(
                pos,
                format!("expected {}, found {}", want.describe(), tok.describe()),
            ))
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), RegistryError> {
        let (tok, pos) = self.next()?;
        match tok {
            Tok::Word(w) if w == kw => Ok(()),
            other => Err(syntax(
                pos,
                format!("expected `{kw}`, found {}", other.describe()),
            )),
        }
    }

    fn ident(&mut self) -> Result<(String, Pos), RegistryError> {
        let (tok, pos) = self.next()?;
        match tok {
            Tok::Word(w) if is_identifier(&w) => Ok((w, pos)),
            other => Err(syntax(
                pos,
                format!("expected identifier, found {}", other.describe()),
            )),
        }
    }

    fn value(&mut self) -> Result<(String, bool, Pos), RegistryError> {
        let (tok, pos) = self.next()?;
        match tok {
            Tok::Word(w) => Ok((w, false, pos)),
            Tok::Quoted(q) => Ok((q, true, pos)),
            other => Err(syntax(
                pos,
                format!("expected value, found {}", other.describe()),
            )),
        }
    }

    fn at_close(&mut self) -> Result<bool, RegistryError> {
        Ok(matches!(self.peek()?.0, Tok::Close))
    }

    fn document(&mut self) -> Result<Registry, RegistryError> {
        self.keyword("services")?;
        self.expect(Tok::Open)?;
        let mut registry = Registry::new();
        while !self.at_close()? {
            let entry = self.service()?;
            registry.insert(entry)?;
        }
        self.expect(Tok::Close)?;
        self.expect(Tok::Eof)?;
        Ok(registry)
    }

    fn description(&mut self) -> Result<String, RegistryError> {
        let (tok, pos) = self.next()?;
        let text = match tok {
            Tok::Open => self.lex.braced_text(pos)?,
            Tok::Quoted(q) => q,
            other => {
                return Err(syntax(
                    pos,
                    format!("expected description text, found {}", other.describe()),
                ))
            }
        };
        if matches!(self.peek()?.0, Tok::Semi) {
            self.next()?;
        }
        Ok(text)
    }

    fn service(&mut self) -> Result<Entry, RegistryError> {
        self.keyword("service")?;
        let (name, name_pos) = self.ident()?;
        self.expect(Tok::Open)?;

        let mut kind: Option<String> = None;
        let mut entry_point: Option<Ipv4Addr> = None;
        let mut description = None;
        let mut properties = Properties::new();
        let mut implementations: Vec<Implementation> = Vec::new();
        let mut members: Option<Vec<Member>> = None;

        while !self.at_close()? {
            let (key, key_pos) = self.ident()?;
            match key.as_str() {
                "type" => {
                    let (t, t_pos) = self.ident()?;
                    if t != "simple" && t != "composition" {
                        return Err(syntax(t_pos, format!("unknown service type `{t}`")));
                    }
                    kind = Some(t);
                    self.expect(Tok::Semi)?;
                }
                "entry_point" => {
                    let (v, _, v_pos) = self.value()?;
                    let addr = v
                        .parse::<Ipv4Addr>()
                        .map_err(|_| syntax(v_pos, format!("invalid address `{v}`")))?;
                    entry_point = Some(addr);
                    self.expect(Tok::Semi)?;
                }
                "description" => description = Some(self.description()?),
                "impl" => {
                    let imp = self.implementation(&name)?;
                    if implementations.iter().any(|i| i.name == imp.name) {
                        return Err(syntax(
                            key_pos,
                            format!("duplicate implementation `{}`", imp.name),
                        ));
                    }
                    implementations.push(imp);
                }
                "services" => {
                    if members.is_some() {
                        return Err(syntax(key_pos, "duplicate member list"));
                    }
                    members = Some(self.members()?);
                }
                _ => {
                    let (v, _, _) = self.value()?;
                    self.expect(Tok::Semi)?;
                    properties.insert(key, v);
                }
            }
        }
        self.expect(Tok::Close)?;

        let is_composition = match kind.as_deref() {
            Some("composition") => true,
            Some(_) => false,
            None => members.is_some() || entry_point.is_some(),
        };
        if is_composition {
            if !implementations.is_empty() {
                return Err(syntax(name_pos, "composition cannot declare implementations"));
            }
            let entry_point =
                entry_point.ok_or_else(|| RegistryError::MissingEntryPoint(name.clone()))?;
            Ok(Entry::Composition(CompositionDef {
                name,
                entry_point,
                description,
                properties,
                members: members.unwrap_or_default(),
            }))
        } else {
            if members.is_some() || entry_point.is_some() {
                return Err(syntax(
                    name_pos,
                    "simple service cannot declare members or an entry_point",
                ));
            }
            if implementations.is_empty() {
                return Err(RegistryError::NoImplementations(name));
            }
            Ok(Entry::Service(ServiceEntry {
                name,
                description,
                properties,
                implementations,
            }))
        }
    }

    fn implementation(&mut self, service: &str) -> Result<Implementation, RegistryError> {
        let (name, _) = self.ident()?;
        self.expect(Tok::Open)?;
        let mut imp = Implementation::new(name);
        while !self.at_close()? {
            let (key, _) = self.ident()?;
            if key == "type" {
                let (variant, _) = self.ident()?;
                self.expect(Tok::Open)?;
                let mut props = imp.variants.remove(&variant).unwrap_or_default();
                while !self.at_close()? {
                    let (k, _) = self.ident()?;
                    self.statement(service, &mut imp, Some(&variant), &mut props, k)?;
                }
                self.expect(Tok::Close)?;
                imp.variants.insert(variant, props);
            } else {
                let mut props = std::mem::take(&mut imp.properties);
                let res = self.statement(service, &mut imp, None, &mut props, key);
                imp.properties = props;
                res?;
            }
        }
        self.expect(Tok::Close)?;
        if imp.deployments.is_empty() {
            return Err(RegistryError::NoDeployments {
                service: service.to_string(),
                implementation: imp.name,
            });
        }
        Ok(imp)
    }

    /// `alias a.b.c.d;` declares a deployment, any other `key value;` is a
    /// property of the enclosing block.
    fn statement(
        &mut self,
        service: &str,
        imp: &mut Implementation,
        variant: Option<&str>,
        props: &mut Properties,
        key: String,
    ) -> Result<(), RegistryError> {
        let (v, quoted, _) = self.value()?;
        self.expect(Tok::Semi)?;
        match (quoted, v.parse::<Ipv4Addr>()) {
            (false, Ok(addr)) => {
                if imp.deployments.iter().any(|d| d.alias == key) {
                    return Err(RegistryError::DuplicateAlias {
                        service: service.to_string(),
                        implementation: imp.name.clone(),
                        alias: key,
                    });
                }
                let mut d = Deployment::new(key, addr);
                d.variant = variant.map(str::to_string);
                imp.deployments.push(d);
            }
            _ => {
                props.insert(key, v);
            }
        }
        Ok(())
    }

    fn members(&mut self) -> Result<Vec<Member>, RegistryError> {
        self.expect(Tok::Open)?;
        let mut out: Vec<Member> = Vec::new();
        while !self.at_close()? {
            let (service, svc_pos) = self.ident()?;
            self.expect(Tok::Open)?;
            let mut order = None;
            let mut serialized = true;
            let mut properties = Properties::new();
            while !self.at_close()? {
                let (key, _) = self.ident()?;
                let (v, _, v_pos) = self.value()?;
                self.expect(Tok::Semi)?;
                match key.as_str() {
                    "order" => match v.parse::<u32>() {
                        Ok(n) if n > 0 => order = Some(n),
                        _ => return Err(syntax(v_pos, format!("order must be a positive integer, found `{v}`"))),
                    },
                    "serialized" => {
                        serialized = match v.as_str() {
                            "true" => true,
                            "false" => false,
                            _ => return Err(syntax(v_pos, format!("expected true or false, found `{v}`"))),
                        }
                    }
                    _ => {
                        properties.insert(key, v);
                    }
                }
            }
            self.expect(Tok::Close)?;
            let order = order.ok_or_else(|| syntax(svc_pos, format!("member `{service}` has no order")))?;
            if out.iter().any(|m| m.service == service) {
                return Err(syntax(svc_pos, format!("duplicate member `{service}`")));
            }
            out.push(Member {
                service,
                order,
                serialized,
                properties,
            });
        }
        self.expect(Tok::Close)?;
        Ok(out)
    }
}

/// Parses a registry document.
///
/// Structural errors (syntax, duplicates, empty implementations, missing
/// entry points, cycles among composition definitions) are rejected here.
/// Members naming services that are not defined in the document are kept;
/// use [`Registry::check_references`] to require a closed catalog.
pub fn parse_registry(text: &str) -> Result<Registry, RegistryError> {
    let mut parser = Parser {
        lex: Lexer::new(text),
        peeked: None,
    };
    let registry = parser.document()?;
    check_composition_cycles(&registry)?;
    Ok(registry)
}

fn check_composition_cycles(registry: &Registry) -> Result<(), RegistryError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Visiting,
        Done,
    }
    fn visit<'a>(
        registry: &'a Registry,
        name: &'a str,
        marks: &mut HashMap<&'a str, Mark>,
    ) -> Result<(), RegistryError> {
        match marks.get(name) {
            Some(Mark::Done) => return Ok(()),
            Some(Mark::Visiting) => return Err(RegistryError::CompositionCycle(name.to_string())),
            None => {}
        }
        let Some(comp) = registry.composition(name) else {
            return Ok(());
        };
        marks.insert(name, Mark::Visiting);
        for m in &comp.members {
            visit(registry, &m.service, marks)?;
        }
        marks.insert(name, Mark::Done);
        Ok(())
    }
    let mut marks = HashMap::new();
    for comp in registry.compositions() {
        visit(registry, &comp.name, &mut marks)?;
    }
    Ok(())
}
