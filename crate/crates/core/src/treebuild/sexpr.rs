//! Strict S-expression rendering: `(1_The(2_cat(3_sat)))`.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::LayerTree;

/// Parentheses inside token text would break the nesting, so they become
/// square brackets.
pub fn sanitize_token(token: &str) -> String {
    token.replace('(', "[").replace(')', "]")
}

pub(super) fn render(tree: &LayerTree) -> String {
    let children = tree.children();
    let mut out = String::new();
    // explicit stack: Some(node) opens a node, None closes the innermost one
    let mut stack = vec![Some(tree.root())];
    while let Some(item) = stack.pop() {
        match item {
            Some(v) => {
                out.push('(');
                out.push_str(&tree.label(v));
                stack.push(None);
                stack.extend(children[v].iter().rev().map(|&c| Some(c)));
            }
            None => out.push(')'),
        }
    }
    out
}

/// A parsed S-expression tree with nodes numbered in preorder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTree {
    pub labels: Vec<String>,
    pub parent: Vec<Option<usize>>,
}

impl ParsedTree {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.len()];
        for (v, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(v);
            }
        }
        children
    }
}

pub fn parse_sexpr(text: &str) -> Result<ParsedTree> {
    let bytes = text.as_bytes();
    let err = |pos: usize, msg: &str| Error::SExpr {
        pos,
        msg: msg.to_string(),
    };
    let mut labels = Vec::new();
    let mut parent = Vec::new();
    let mut open: Vec<usize> = Vec::new();
    let mut pos = 0;
    let mut closed_root = false;

    while pos < bytes.len() {
        match bytes[pos] {
            b'(' => {
                if closed_root {
                    return Err(err(pos, "more than one top-level node"));
                }
                let start = pos + 1;
                let end = text[start..]
                    .find(['(', ')'])
                    .map_or(bytes.len(), |off| start + off);
                if end == start {
                    return Err(err(start, "empty label"));
                }
                parent.push(open.last().copied());
                labels.push(text[start..end].to_string());
                open.push(labels.len() - 1);
                pos = end;
            }
            b')' => {
                open.pop().ok_or_else(|| err(pos, "unbalanced ')'"))?;
                if open.is_empty() {
                    closed_root = true;
                }
                pos += 1;
            }
            _ => return Err(err(pos, "expected '(' or ')'")),
        }
    }
    if !open.is_empty() {
        return Err(err(bytes.len(), "unclosed '('"));
    }
    if labels.is_empty() {
        return Err(err(0, "no nodes"));
    }
    Ok(ParsedTree { labels, parent })
}

pub(super) fn to_layer_tree(parsed: &ParsedTree) -> Result<LayerTree> {
    let n = parsed.len();
    let mut position = Vec::with_capacity(n);
    let mut tokens = vec![None; n];
    for label in &parsed.labels {
        let (idx, token) = label
            .split_once('_')
            .ok_or_else(|| Error::InvalidTree(format!("label {label:?} lacks an index")))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| Error::InvalidTree(format!("bad index in label {label:?}")))?;
        if idx == 0 || idx > n || tokens[idx - 1].is_some() {
            return Err(Error::InvalidTree(format!(
                "index {idx} is out of range or repeated"
            )));
        }
        tokens[idx - 1] = Some(token.to_string());
        position.push(idx - 1);
    }
    let mut parent = vec![None; n];
    for (node, p) in parsed.parent.iter().enumerate() {
        parent[position[node]] = p.map(|p| position[p]);
    }
    let tokens: Arc<[String]> = tokens
        .into_iter()
        .map(|t| t.expect("all positions filled"))
        .collect();
    LayerTree::new(parent, tokens)
}
