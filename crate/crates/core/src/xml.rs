//! Small helpers shared by every XML document format in the workspace.
//!
//! Parsing goes through `roxmltree`; writing is a compact single-line
//! builder, since all wire formats here are line-framed.

use roxmltree::Node;

/// Escapes text for use in element content or a double-quoted attribute.
pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            _ => out.push(c),
        }
    }
    out
}

/// Compact XML writer. Never emits newlines.
#[derive(Debug, Default)]
pub struct XmlBuf {
    buf: String,
}

impl XmlBuf {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(&mut self, name: &str) -> &mut Self {
        self.open_with(name, &[])
    }

    pub fn open_with(&mut self, name: &str, attrs: &[(&str, &str)]) -> &mut Self {
        self.buf.push('<');
        self.buf.push_str(name);
        self.push_attrs(attrs);
        self.buf.push('>');
        self
    }

    pub fn close(&mut self, name: &str) -> &mut Self {
        self.buf.push_str("</");
        self.buf.push_str(name);
        self.buf.push('>');
        self
    }

    /// `<name>text</name>`
    pub fn leaf(&mut self, name: &str, text: &str) -> &mut Self {
        self.leaf_with(name, &[], text)
    }

    pub fn leaf_with(&mut self, name: &str, attrs: &[(&str, &str)], text: &str) -> &mut Self {
        self.open_with(name, attrs);
        self.buf.push_str(&escape(text));
        self.close(name)
    }

    /// `<name a="b" />`
    pub fn empty(&mut self, name: &str, attrs: &[(&str, &str)]) -> &mut Self {
        self.buf.push('<');
        self.buf.push_str(name);
        self.push_attrs(attrs);
        self.buf.push_str(" />");
        self
    }

    /// Appends an already serialized fragment verbatim.
    pub fn raw(&mut self, fragment: &str) -> &mut Self {
        self.buf.push_str(fragment);
        self
    }

    pub fn finish(self) -> String {
        self.buf
    }

    fn push_attrs(&mut self, attrs: &[(&str, &str)]) {
        for (k, v) in attrs {
            self.buf.push(' ');
            self.buf.push_str(k);
            self.buf.push_str("=\"");
            self.buf.push_str(&escape(v));
            self.buf.push('"');
        }
    }
}

/// First element child with the given tag name.
pub fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children()
        .find(|c| c.is_element() && c.tag_name().name() == name)
}

/// All element children with the given tag name, in document order.
pub fn children<'a, 'i: 'a>(
    node: Node<'a, 'i>,
    name: &'a str,
) -> impl Iterator<Item = Node<'a, 'i>> + 'a {
    node.children()
        .filter(move |c| c.is_element() && c.tag_name().name() == name)
}

/// Concatenated, trimmed text content of a node's direct text children.
pub fn text(node: Node<'_, '_>) -> String {
    let mut s = String::new();
    for c in node.children() {
        if let Some(t) = c.text() {
            if c.is_text() {
                s.push_str(t);
            }
        }
    }
    s.trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escape_covers_markup_and_newlines() {
        assert_eq!(escape("a<b>&\"c'\n"), "a&lt;b&gt;&amp;&quot;c&apos;&#10;");
    }

    #[test]
    fn builder_is_single_line() {
        let mut w = XmlBuf::new();
        w.open("a")
            .leaf("b", "x\ny")
            .empty("c", &[("k", "v")])
            .close("a");
        let s = w.finish();
        assert_eq!(s, "<a><b>x&#10;y</b><c k=\"v\" /></a>");
        let doc = roxmltree::Document::parse(&s).unwrap();
        let b = child(doc.root_element(), "b").unwrap();
        assert_eq!(text(b), "x\ny");
    }
}
