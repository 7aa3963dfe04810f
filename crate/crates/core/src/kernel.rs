//! Stationary covariance functions and their composition.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaternOrder {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl MaternOrder {
    /// State dimension `ν + ½`.
    pub fn state_dim(self) -> usize {
        match self {
            MaternOrder::Half => 1,
            MaternOrder::ThreeHalves => 2,
            MaternOrder::FiveHalves => 3,
        }
    }

    fn name(self) -> &'static str {
        match self {
            MaternOrder::Half => "matern12",
            MaternOrder::ThreeHalves => "matern32",
            MaternOrder::FiveHalves => "matern52",
        }
    }

    /// `√(2ν)`
    fn sqrt_2nu(self) -> f64 {
        match self {
            MaternOrder::Half => 1.0,
            MaternOrder::ThreeHalves => 3f64.sqrt(),
            MaternOrder::FiveHalves => 5f64.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    Matern {
        order: MaternOrder,
        variance: f64,
        lengthscale: f64,
    },
    /// `σ² cos(ω τ)`, with `ω` in radians per time unit.
    Cosine { variance: f64, frequency: f64 },
    Sum(Vec<Kernel>),
    Product(Vec<Kernel>),
}

fn check_positive(what: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidKernel(format!("{what} must be positive and finite, got {x}")))
    }
}

impl Kernel {
    pub fn matern(order: MaternOrder, variance: f64, lengthscale: f64) -> Result<Kernel> {
        check_positive("variance", variance)?;
        check_positive("lengthscale", lengthscale)?;
        Ok(Kernel::Matern {
            order,
            variance,
            lengthscale,
        })
    }

    pub fn matern12(variance: f64, lengthscale: f64) -> Result<Kernel> {
        Self::matern(MaternOrder::Half, variance, lengthscale)
    }

    pub fn matern32(variance: f64, lengthscale: f64) -> Result<Kernel> {
        Self::matern(MaternOrder::ThreeHalves, variance, lengthscale)
    }

    pub fn matern52(variance: f64, lengthscale: f64) -> Result<Kernel> {
        Self::matern(MaternOrder::FiveHalves, variance, lengthscale)
    }

    pub fn cosine(variance: f64, frequency: f64) -> Result<Kernel> {
        check_positive("variance", variance)?;
        check_positive("frequency", frequency)?;
        Ok(Kernel::Cosine {
            variance,
            frequency,
        })
    }

    pub fn sum(children: Vec<Kernel>) -> Result<Kernel> {
        if children.len() < 2 {
            return Err(Error::InvalidKernel("sum needs at least two children".into()));
        }
        Ok(Kernel::Sum(children))
    }

    pub fn product(children: Vec<Kernel>) -> Result<Kernel> {
        if children.len() < 2 {
            return Err(Error::InvalidKernel("product needs at least two children".into()));
        }
        Ok(Kernel::Product(children))
    }

    /// Re-checks every invariant of the tree.
    pub fn validate(&self) -> Result<()> {
        match self {
            Kernel::Matern {
                variance,
                lengthscale,
                ..
            } => {
                check_positive("variance", *variance)?;
                check_positive("lengthscale", *lengthscale)
            }
            Kernel::Cosine {
                variance,
                frequency,
            } => {
                check_positive("variance", *variance)?;
                check_positive("frequency", *frequency)
            }
            Kernel::Sum(c) | Kernel::Product(c) => {
                if c.len() < 2 {
                    return Err(Error::InvalidKernel(
                        "composite kernels need at least two children".into(),
                    ));
                }
                c.iter().try_for_each(Kernel::validate)
            }
        }
    }

    /// `κ(τ)`.
    pub fn eval(&self, tau: f64) -> f64 {
        let r = tau.abs();
        match self {
            Kernel::Matern {
                order,
                variance,
                lengthscale,
            } => {
                let a = order.sqrt_2nu() * r / lengthscale;
                let poly = match order {
                    MaternOrder::Half => 1.0,
                    MaternOrder::ThreeHalves => 1.0 + a,
                    MaternOrder::FiveHalves => 1.0 + a + a * a / 3.0,
                };
                variance * poly * (-a).exp()
            }
            Kernel::Cosine {
                variance,
                frequency,
            } => variance * (frequency * r).cos(),
            Kernel::Sum(c) => c.iter().map(|k| k.eval(tau)).sum(),
            Kernel::Product(c) => c.iter().map(|k| k.eval(tau)).product(),
        }
    }

    /// `κ(τ)` together with its derivatives with respect to the log of every
    /// hyperparameter, in [`Kernel::param_names`] order.
    pub fn eval_with_log_grad(&self, tau: f64) -> (f64, Vec<f64>) {
        let r = tau.abs();
        match self {
            Kernel::Matern {
                order,
                variance,
                lengthscale,
            } => {
                let a = order.sqrt_2nu() * r / lengthscale;
                let e = (-a).exp();
                let (poly, d_len) = match order {
                    MaternOrder::Half => (1.0, a * e),
                    MaternOrder::ThreeHalves => (1.0 + a, a * a * e),
                    MaternOrder::FiveHalves => (1.0 + a + a * a / 3.0, a * a * (1.0 + a) / 3.0 * e),
                };
                let k = variance * poly * e;
                (k, vec![k, variance * d_len])
            }
            Kernel::Cosine {
                variance,
                frequency,
            } => {
                let k = variance * (frequency * r).cos();
                let d_freq = -variance * (frequency * r).sin() * frequency * r;
                (k, vec![k, d_freq])
            }
            Kernel::Sum(c) => {
                let mut total = 0.0;
                let mut grad = Vec::new();
                for child in c {
                    let (k, g) = child.eval_with_log_grad(tau);
                    total += k;
                    grad.extend(g);
                }
                (total, grad)
            }
            Kernel::Product(c) => {
                let parts: Vec<(f64, Vec<f64>)> =
                    c.iter().map(|k| k.eval_with_log_grad(tau)).collect();
                let total: f64 = parts.iter().map(|p| p.0).product();
                let mut grad = Vec::new();
                for (i, (_, g)) in parts.iter().enumerate() {
                    let others: f64 = parts
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, p)| p.0)
                        .product();
                    grad.extend(g.iter().map(|x| x * others));
                }
                (total, grad)
            }
        }
    }

    /// `κ(0)`.
    pub fn variance(&self) -> f64 {
        self.eval(0.0)
    }

    /// Hyperparameter names in pre-order, e.g. `k0.variance`, `k0.lengthscale`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let mut leaf = 0;
        self.collect_names(&mut leaf, &mut names);
        names
    }

    fn collect_names(&self, leaf: &mut usize, names: &mut Vec<String>) {
        match self {
            Kernel::Matern { .. } => {
                names.push(format!("k{leaf}.variance"));
                names.push(format!("k{leaf}.lengthscale"));
                *leaf += 1;
            }
            Kernel::Cosine { .. } => {
                names.push(format!("k{leaf}.variance"));
                names.push(format!("k{leaf}.frequency"));
                *leaf += 1;
            }
            Kernel::Sum(c) | Kernel::Product(c) => {
                c.iter().for_each(|k| k.collect_names(leaf, names));
            }
        }
    }

    /// Positive hyperparameter values in [`Kernel::param_names`] order.
    pub fn params(&self) -> Vec<f64> {
        match self {
            Kernel::Matern {
                variance,
                lengthscale,
                ..
            } => vec![*variance, *lengthscale],
            Kernel::Cosine {
                variance,
                frequency,
            } => vec![*variance, *frequency],
            Kernel::Sum(c) | Kernel::Product(c) => c.iter().flat_map(Kernel::params).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Kernel::Matern { .. } | Kernel::Cosine { .. } => 2,
            Kernel::Sum(c) | Kernel::Product(c) => c.iter().map(Kernel::num_params).sum(),
        }
    }

    /// Same tree with new parameter values (same order as [`Kernel::params`]).
    pub fn with_params(&self, values: &[f64]) -> Result<Kernel> {
        if values.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "kernel has {} parameters, got {}",
                self.num_params(),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        let k = self.rebuild(&mut it);
        k.validate()?;
        Ok(k)
    }

    fn rebuild(&self, it: &mut impl Iterator<Item = f64>) -> Kernel {
        let mut next = || it.next().expect("length checked");
        match self {
            Kernel::Matern { order, .. } => Kernel::Matern {
                order: *order,
                variance: next(),
                lengthscale: next(),
            },
            Kernel::Cosine { .. } => Kernel::Cosine {
                variance: next(),
                frequency: next(),
            },
            Kernel::Sum(c) => Kernel::Sum(c.iter().map(|k| k.rebuild(it)).collect()),
            Kernel::Product(c) => Kernel::Product(c.iter().map(|k| k.rebuild(it)).collect()),
        }
    }

    pub fn parse(expr: &str) -> Result<Kernel> {
        let mut p = Parser { src: expr, pos: 0 };
        let k = p.kernel()?;
        p.skip_ws();
        if p.pos != expr.len() {
            return Err(p.err("trailing input"));
        }
        Ok(k)
    }
}

impl fmt::Display for Kernel {
    /// Writes the expression form accepted by [`Kernel::parse`]; values use
    /// the shortest round-trip representation.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Matern {
                order,
                variance,
                lengthscale,
            } => write!(f, "{}(var={variance:?},len={lengthscale:?})", order.name()),
            Kernel::Cosine {
                variance,
                frequency,
            } => write!(f, "cosine(var={variance:?},freq={frequency:?})"),
            Kernel::Sum(c) | Kernel::Product(c) => {
                f.write_str(if matches!(self, Kernel::Sum(_)) { "sum(" } else { "prod(" })?;
                for (i, k) in c.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{k}")?;
                }
                f.write_str(")")
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::KernelParse {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected '{c}'")))
        }
    }

    fn ident(&mut self) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_ascii_alphanumeric() || c == '_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        if start == self.pos {
            return Err(self.err("expected identifier"));
        }
        Ok(self.src[start..self.pos].to_ascii_lowercase())
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-') {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.src[start..self.pos].parse::<f64>().map_err(|_| Error::KernelParse {
            pos: start,
            msg: format!("invalid number '{}'", &self.src[start..self.pos]),
        })
    }

    fn kernel(&mut self) -> Result<Kernel> {
        let start = self.pos;
        let name = self.ident()?;
        self.expect('(')?;
        let k = match name.as_str() {
            "sum" | "prod" | "product" => {
                let mut children = vec![self.kernel()?];
                while self.peek() == Some(',') {
                    self.pos += 1;
                    children.push(self.kernel()?);
                }
                if name == "sum" {
                    Kernel::sum(children)
                } else {
                    Kernel::product(children)
                }
            }
            "matern12" | "matern32" | "matern52" | "cosine" => {
                let args = self.keyword_args()?;
                build_leaf(&name, &args)
            }
            other => return Err(Error::KernelParse {
                pos: start,
                msg: format!("unknown kernel '{other}'"),
            }),
        }
        .map_err(|e| match e {
            Error::InvalidKernel(msg) => Error::KernelParse { pos: start, msg },
            e => e,
        })?;
        self.expect(')')?;
        Ok(k)
    }

    fn keyword_args(&mut self) -> Result<Vec<(String, f64)>> {
        let mut args = Vec::new();
        if self.peek() == Some(')') {
            return Ok(args);
        }
        loop {
            let key = self.ident()?;
            self.expect('=')?;
            let value = self.number()?;
            if args.iter().any(|(k, _)| *k == key) {
                return Err(self.err(format!("duplicate argument '{key}'")));
            }
            args.push((key, value));
            if self.peek() == Some(',') {
                self.pos += 1;
            } else {
                return Ok(args);
            }
        }
    }
}

fn build_leaf(name: &str, args: &[(String, f64)]) -> Result<Kernel> {
    let get = |key: &str| args.iter().find(|(k, _)| k == key).map(|(_, v)| *v);
    let allowed: &[&str] = if name == "cosine" {
        &["var", "period", "freq"]
    } else {
        &["var", "len"]
    };
    if let Some((k, _)) = args.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
        return Err(Error::InvalidKernel(format!("unknown argument '{k}' for {name}")));
    }
    let variance = get("var").unwrap_or(1.0);
    match name {
        "cosine" => {
            let frequency = match (get("period"), get("freq")) {
                (Some(p), None) => {
                    check_positive("period", p)?;
                    2.0 * PI / p
                }
                (None, Some(w)) => w,
                _ => {
                    return Err(Error::InvalidKernel(
                        "cosine needs exactly one of 'period' or 'freq'".into(),
                    ))
                }
            };
            Kernel::cosine(variance, frequency)
        }
        _ => {
            let order = match name {
                "matern12" => MaternOrder::Half,
                "matern32" => MaternOrder::ThreeHalves,
                _ => MaternOrder::FiveHalves,
            };
            let len = get("len")
                .ok_or_else(|| Error::InvalidKernel(format!("{name} needs 'len'")))?;
            Kernel::matern(order, variance, len)
        }
    }
}
