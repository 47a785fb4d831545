use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use super::{Entry, Implementation, Properties, Registry};

const INDENT: &str = "    ";

fn value(v: &str) -> String {
    let plain = !v.is_empty()
        && v.bytes().all(|b| {
            !b.is_ascii_whitespace() && !matches!(b, b'{' | b'}' | b';' | b'"' | b'#' | b'\\')
        })
        && v.parse::<Ipv4Addr>().is_err();
    if plain {
        v.to_string()
    } else {
        let mut out = String::with_capacity(v.len() + 2);
        out.push('"');
        for c in v.chars() {
            if c == '"' || c == '\\' {
                out.push('\\');
            }
            out.push(c);
        }
        out.push('"');
        out
    }
}

fn description(text: &str) -> String {
    if !text.is_empty() && text == text.trim() && !text.contains(['{', '}']) {
        format!("description {{{text}}};")
    } else {
        format!("description {};", value(text))
    }
}

fn line(out: &mut String, depth: usize, s: &str) {
    for _ in 0..depth {
        out.push_str(INDENT);
    }
    out.push_str(s);
    out.push('\n');
}

fn properties(out: &mut String, depth: usize, props: &Properties) {
    for (k, v) in props {
        line(out, depth, &format!("{k} {};", value(v)));
    }
}

fn implementation(out: &mut String, depth: usize, imp: &Implementation) {
    line(out, depth, &format!("impl {} {{", imp.name));
    properties(out, depth + 1, &imp.properties);

    let mut emitted_props: BTreeSet<&str> = BTreeSet::new();
    let mut i = 0;
    while i < imp.deployments.len() {
        let variant = imp.deployments[i].variant.as_deref();
        let mut j = i;
        while j < imp.deployments.len() && imp.deployments[j].variant.as_deref() == variant {
            j += 1;
        }
        let run = &imp.deployments[i..j];
        match variant {
            None => {
                for d in run {
                    line(out, depth + 1, &format!("{} {};", d.alias, d.address));
                }
            }
            Some(v) => {
                line(out, depth + 1, &format!("type {v} {{"));
                if emitted_props.insert(v) {
                    if let Some(p) = imp.variants.get(v) {
                        properties(out, depth + 2, p);
                    }
                }
                for d in run {
                    line(out, depth + 2, &format!("{} {};", d.alias, d.address));
                }
                line(out, depth + 1, "}");
            }
        }
        i = j;
    }
    for (v, p) in &imp.variants {
        if !emitted_props.contains(v.as_str()) {
            line(out, depth + 1, &format!("type {v} {{"));
            properties(out, depth + 2, p);
            line(out, depth + 1, "}");
        }
    }
    line(out, depth, "}");
}

pub(super) fn write_registry(registry: &Registry) -> String {
    let mut out = String::new();
    line(&mut out, 0, "services {");
    for entry in registry.entries() {
        match entry {
            Entry::Service(s) => {
                line(&mut out, 1, &format!("service {} {{", s.name));
                line(&mut out, 2, "type simple;");
                if let Some(d) = &s.description {
                    line(&mut out, 2, &description(d));
                }
                properties(&mut out, 2, &s.properties);
                for imp in &s.implementations {
                    implementation(&mut out, 2, imp);
                }
                line(&mut out, 1, "}");
            }
            Entry::Composition(c) => {
                line(&mut out, 1, &format!("service {} {{", c.name));
                line(&mut out, 2, "type composition;");
                line(&mut out, 2, &format!("entry_point {};", c.entry_point));
                if let Some(d) = &c.description {
                    line(&mut out, 2, &description(d));
                }
                properties(&mut out, 2, &c.properties);
                line(&mut out, 2, "services {");
                for m in &c.members {
                    line(&mut out, 3, &format!("{} {{", m.service));
                    line(&mut out, 4, &format!("order {};", m.order));
                    line(&mut out, 4, &format!("serialized {};", m.serialized));
                    properties(&mut out, 4, &m.properties);
                    line(&mut out, 3, "}");
                }
                line(&mut out, 2, "}");
                line(&mut out, 1, "}");
            }
        }
    }
    line(&mut out, 0, "}");
    out
}
