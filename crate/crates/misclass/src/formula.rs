//! Model formula mini-language.
//!
//! Grammar:
//!
//! ```text
//! formula  = response [ "||" surrogate ] "~" term { "+" term }
//! term     = ident [ "||" surrogate ]
//! ident    = [A-Za-z_][A-Za-z0-9_.]*
//! ```
//!
//! `x || w` binds `w` as the error-prone proxy of the ground truth `x`.
//! When the binding sits on a right-hand-side term the proxied variable is a
//! covariate (IV position); when it sits on the response it is the outcome
//! (DV position). The DV placement is our own convention for symmetry; only
//! the IV form has an established precedent. At most one `||` is allowed.
//!
//! Interaction (`*`, `:`) and transformation syntax are rejected: models here
//! are additive with an always-on intercept.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Where the proxied (latent) variable sits in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProxyPosition {
    /// Latent variable is a covariate; the surrogate stands in for a regressor.
    Iv,
    /// Latent variable is the response.
    Dv,
}

impl fmt::Display for ProxyPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProxyPosition::Iv => write!(f, "iv"),
            ProxyPosition::Dv => write!(f, "dv"),
        }
    }
}

/// A `latent || surrogate` binding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proxy {
    pub latent: String,
    pub surrogate: String,
    pub position: ProxyPosition,
}

/// A validated model specification.
///
/// `terms` keeps the right-hand side in written order; for an IV proxy the
/// latent variable is itself one of the terms. The intercept is always
/// present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub terms: Vec<String>,
    pub intercept: bool,
    pub proxy: Option<Proxy>,
}

impl ModelSpec {
    /// All variable names the model touches (response, terms, surrogate).
    pub fn variables(&self) -> Vec<&str> {
        let mut v: Vec<&str> = Vec::with_capacity(self.terms.len() + 2);
        v.push(&self.response);
        v.extend(self.terms.iter().map(|s| s.as_str()));
        if let Some(p) = &self.proxy {
            v.push(&p.surrogate);
        }
        v
    }

    /// Name of the partially observed variable, if any.
    pub fn latent(&self) -> Option<&str> {
        self.proxy.as_ref().map(|p| p.latent.as_str())
    }

    /// Covariate names excluding the latent variable.
    pub fn observed_terms(&self) -> Vec<&str> {
        self.terms
            .iter()
            .map(|s| s.as_str())
            .filter(|t| Some(*t) != self.latent())
            .collect()
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.response)?;
        if let Some(p) = &self.proxy {
            if p.position == ProxyPosition::Dv {
                write!(f, " || {}", p.surrogate)?;
            }
        }
        write!(f, " ~ ")?;
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{t}")?;
            if let Some(p) = &self.proxy {
                if p.position == ProxyPosition::Iv && *t == p.latent {
                    write!(f, " || {}", p.surrogate)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Ident(String),
    Tilde,
    Plus,
    PipePipe,
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '~' => {
                chars.next();
                tokens.push(Token::Tilde);
            }
            '+' => {
                chars.next();
                tokens.push(Token::Plus);
            }
            '|' => {
                chars.next();
                if chars.peek() == Some(&'|') {
                    chars.next();
                    tokens.push(Token::PipePipe);
                } else {
                    return Err(Error::Syntax(
                        "single `|` is not an operator; proxy bindings use `||`".into(),
                    ));
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut ident = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
                        ident.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                tokens.push(Token::Ident(ident));
            }
            other => {
                return Err(Error::Syntax(format!("unexpected character `{other}`")));
            }
        }
    }
    Ok(tokens)
}

/// Parse a formula string into a validated [`ModelSpec`].
pub fn parse_formula(text: &str) -> Result<ModelSpec> {
    if text.trim().is_empty() {
        return Err(Error::EmptyFormula);
    }
    let tokens = tokenize(text)?;
    let mut pos = 0usize;

    let take_ident = |pos: &mut usize, what: &str| -> Result<String> {
        match tokens.get(*pos) {
            Some(Token::Ident(name)) => {
                *pos += 1;
                Ok(name.clone())
            }
            Some(other) => Err(Error::Syntax(format!("expected {what}, found {other:?}"))),
            None => Err(Error::Syntax(format!(
                "expected {what}, found end of input"
            ))),
        }
    };

    let response = take_ident(&mut pos, "response variable")?;
    let mut proxy: Option<Proxy> = None;

    if tokens.get(pos) == Some(&Token::PipePipe) {
        pos += 1;
        let surrogate = take_ident(&mut pos, "surrogate after `||`")?;
        proxy = Some(Proxy {
            latent: response.clone(),
            surrogate,
            position: ProxyPosition::Dv,
        });
    }

    match tokens.get(pos) {
        Some(Token::Tilde) => pos += 1,
        _ => {
            return Err(Error::Syntax(
                "missing `~` between response and terms".into(),
            ))
        }
    }

    let mut terms: Vec<String> = Vec::new();
    loop {
        let term = take_ident(&mut pos, "term")?;
        if tokens.get(pos) == Some(&Token::PipePipe) {
            if proxy.is_some() {
                return Err(Error::DuplicateProxy);
            }
            pos += 1;
            let surrogate = take_ident(&mut pos, "surrogate after `||`")?;
            proxy = Some(Proxy {
                latent: term.clone(),
                surrogate,
                position: ProxyPosition::Iv,
            });
        }
        terms.push(term);
        match tokens.get(pos) {
            Some(Token::Plus) => pos += 1,
            None => break,
            Some(Token::PipePipe) => return Err(Error::DuplicateProxy),
            Some(other) => {
                return Err(Error::Syntax(format!("expected `+`, found {other:?}")));
            }
        }
    }

    let spec = ModelSpec {
        response,
        terms,
        intercept: true,
        proxy,
    };
    validate(&spec)?;
    Ok(spec)
}

fn validate(spec: &ModelSpec) -> Result<()> {
    let mut seen: Vec<&str> = Vec::new();
    for name in spec.variables() {
        if seen.contains(&name) {
            return Err(Error::DuplicateName(name.to_string()));
        }
        seen.push(name);
    }
    if let Some(p) = &spec.proxy {
        match p.position {
            ProxyPosition::Iv => {
                debug_assert_eq!(spec.terms.iter().filter(|t| **t == p.latent).count(), 1);
            }
            ProxyPosition::Dv => debug_assert_eq!(p.latent, spec.response),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iv_proxy_formula() {
        let spec = parse_formula("y ~ x || w + z").unwrap();
        assert_eq!(spec.response, "y");
        assert_eq!(spec.terms, ["x", "z"]);
        assert!(spec.intercept);
        let p = spec.proxy.unwrap();
        assert_eq!(p.latent, "x");
        assert_eq!(p.surrogate, "w");
        assert_eq!(p.position, ProxyPosition::Iv);
    }

    #[test]
    fn plain_formula_has_no_proxy() {
        let spec = parse_formula("y ~ x + z").unwrap();
        assert_eq!(spec.terms, ["x", "z"]);
        assert!(spec.proxy.is_none());
    }

    #[test]
    fn dv_proxy_formula() {
        let spec = parse_formula("y || w ~ x + z").unwrap();
        assert_eq!(spec.response, "y");
        assert_eq!(spec.terms, ["x", "z"]);
        let p = spec.proxy.unwrap();
        assert_eq!(p.latent, "y");
        assert_eq!(p.surrogate, "w");
        assert_eq!(p.position, ProxyPosition::Dv);
        // round trip through Display
        let printed = parse_formula("y || w ~ x + z").unwrap().to_string();
        assert_eq!(
            parse_formula(&printed).unwrap(),
            parse_formula("y || w ~ x + z").unwrap()
        );
    }

    #[test]
    fn two_proxies_rejected() {
        assert!(matches!(
            parse_formula("y || v ~ x || w + z"),
            Err(Error::DuplicateProxy)
        ));
        assert!(matches!(
            parse_formula("y ~ x || w + z || v"),
            Err(Error::DuplicateProxy)
        ));
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(matches!(
            parse_formula("y ~ x + x"),
            Err(Error::DuplicateName(_))
        ));
        assert!(matches!(
            parse_formula("y ~ y + z"),
            Err(Error::DuplicateName(_))
        ));
        assert!(matches!(
            parse_formula("y ~ x || y + z"),
            Err(Error::DuplicateName(_))
        ));
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(parse_formula(""), Err(Error::EmptyFormula)));
        assert!(matches!(parse_formula("   "), Err(Error::EmptyFormula)));
        assert!(matches!(parse_formula("y x + z"), Err(Error::Syntax(_))));
        assert!(matches!(parse_formula("y ~ x * z"), Err(Error::Syntax(_))));
        assert!(matches!(parse_formula("y ~ x : z"), Err(Error::Syntax(_))));
        assert!(matches!(parse_formula("y ~ x | w"), Err(Error::Syntax(_))));
        assert!(matches!(parse_formula("y ~ x +"), Err(Error::Syntax(_))));
        assert!(matches!(parse_formula("~ x + z"), Err(Error::Syntax(_))));
        assert!(matches!(parse_formula("y ~ log(x)"), Err(Error::Syntax(_))));
    }

    #[test]
    fn identifiers_allow_dots_and_underscores() {
        let spec = parse_formula("out.come ~ x_1 || w.hat + z_2").unwrap();
        assert_eq!(spec.response, "out.come");
        assert_eq!(spec.terms, ["x_1", "z_2"]);
    }

    #[test]
    fn term_order_is_preserved() {
        let spec = parse_formula("y ~ a + c + b").unwrap();
        assert_eq!(spec.terms, ["a", "c", "b"]);
    }
}
