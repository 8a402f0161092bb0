//! Polynomial distortion functions `f(u,v,x,y)` and `g(u,v,x,y)`.
//!
//! Each function is a sum of monomials `c * x^i y^j u^m v^n` where `(x, y)` is
//! the source position on the object plane, measured from the reference point,
//! and `(u, v)` the image-plane position. Requiring `i + j >= 1` for every term
//! makes both functions vanish for a source at the reference point, so the
//! reference PSF is reproduced there without warping.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonomialTerm {
    pub i: u32,
    pub j: u32,
    pub m: u32,
    pub n: u32,
    #[serde(rename = "c")]
    pub coefficient: f64,
}

impl MonomialTerm {
    pub const fn new(i: u32, j: u32, m: u32, n: u32, coefficient: f64) -> Self {
        Self {
            i,
            j,
            m,
            n,
            coefficient,
        }
    }

    pub fn satisfies_dfc(&self) -> bool {
        self.i + self.j >= 1
    }

    #[inline]
    pub fn eval(&self, u: f64, v: f64, x: f64, y: f64) -> f64 {
        self.coefficient * powu(x, self.i) * powu(y, self.j) * powu(u, self.m) * powu(v, self.n)
    }
}

#[inline]
fn powu(base: f64, e: u32) -> f64 {
    match e {
        0 => 1.0,
        1 => base,
        2 => base * base,
        _ => base.powi(e as i32),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    F,
    G,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionPolynomial {
    pub f_terms: Vec<MonomialTerm>,
    pub g_terms: Vec<MonomialTerm>,
    #[serde(default)]
    pub reference_point: (f64, f64),
}

impl Default for DistortionPolynomial {
    fn default() -> Self {
        Self {
            f_terms: Vec::new(),
            g_terms: Vec::new(),
            reference_point: (0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DfcViolation {
    pub component: Component,
    pub index: usize,
    pub term: MonomialTerm,
}

/// Outcome of [`DistortionPolynomial::validate_dfc`]; empty means valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DfcReport {
    pub violations: Vec<DfcViolation>,
}

impl DfcReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl DistortionPolynomial {
    pub fn new(f_terms: Vec<MonomialTerm>, g_terms: Vec<MonomialTerm>) -> Self {
        Self {
            f_terms,
            g_terms,
            reference_point: (0.0, 0.0),
        }
    }

    pub fn with_reference_point(mut self, x0: f64, y0: f64) -> Self {
        self.reference_point = (x0, y0);
        self
    }

    pub fn eval_f(&self, u: f64, v: f64, x: f64, y: f64) -> f64 {
        let (dx, dy) = self.offset(x, y);
        self.f_terms.iter().map(|t| t.eval(u, v, dx, dy)).sum()
    }

    pub fn eval_g(&self, u: f64, v: f64, x: f64, y: f64) -> f64 {
        let (dx, dy) = self.offset(x, y);
        self.g_terms.iter().map(|t| t.eval(u, v, dx, dy)).sum()
    }

    fn offset(&self, x: f64, y: f64) -> (f64, f64) {
        (x - self.reference_point.0, y - self.reference_point.1)
    }

    pub fn validate_dfc(&self) -> DfcReport {
        let tag = |component, terms: &[MonomialTerm]| {
            terms
                .iter()
                .enumerate()
                .filter(|(_, t)| !t.satisfies_dfc())
                .map(move |(index, &term)| DfcViolation {
                    component,
                    index,
                    term,
                })
                .collect::<Vec<_>>()
        };
        let mut violations = tag(Component::F, &self.f_terms);
        violations.extend(tag(Component::G, &self.g_terms));
        DfcReport { violations }
    }

    /// Collapses both functions to polynomials in `(u, v)` for a fixed source.
    pub fn restrict(&self, x: f64, y: f64) -> RestrictedPair {
        let (dx, dy) = self.offset(x, y);
        RestrictedPair {
            f: restrict_terms(&self.f_terms, dx, dy),
            g: restrict_terms(&self.g_terms, dx, dy),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.f_terms
            .iter()
            .chain(&self.g_terms)
            .all(|t| t.coefficient == 0.0)
    }
}

fn restrict_terms(terms: &[MonomialTerm], x: f64, y: f64) -> Vec<(u32, u32, f64)> {
    let mut out: Vec<(u32, u32, f64)> = Vec::new();
    for t in terms {
        let c = t.coefficient * powu(x, t.i) * powu(y, t.j);
        match out.iter_mut().find(|(m, n, _)| *m == t.m && *n == t.n) {
            Some(slot) => slot.2 += c,
            None => out.push((t.m, t.n, c)),
        }
    }
    out.retain(|&(_, _, c)| c != 0.0);
    out
}

/// `f` and `g` with the source position already substituted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RestrictedPair {
    pub f: Vec<(u32, u32, f64)>,
    pub g: Vec<(u32, u32, f64)>,
}

impl RestrictedPair {
    #[inline]
    pub fn eval(&self, u: f64, v: f64) -> (f64, f64) {
        let ev = |terms: &[(u32, u32, f64)]| {
            terms
                .iter()
                .map(|&(m, n, c)| c * powu(u, m) * powu(v, n))
                .sum::<f64>()
        };
        (ev(&self.f), ev(&self.g))
    }

    pub fn is_zero(&self) -> bool {
        self.f.is_empty() && self.g.is_empty()
    }
}

/// One adjustable coefficient in a parameterized distortion polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisTerm {
    pub component: Component,
    pub i: u32,
    pub j: u32,
    pub m: u32,
    pub n: u32,
}

/// Ordered list of monomials whose coefficients form a parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialBasis {
    pub terms: Vec<BasisTerm>,
    #[serde(default)]
    pub reference_point: (f64, f64),
}

// (i, j, m, n) for ux, vx, u^2 x, v^2 x, u x^2, v x^2
const X_MONOMIALS: [(u32, u32, u32, u32); 6] = [
    (1, 0, 1, 0),
    (1, 0, 0, 1),
    (1, 0, 2, 0),
    (1, 0, 0, 2),
    (2, 0, 1, 0),
    (2, 0, 0, 1),
];

impl PolynomialBasis {
    /// The 12-term basis: `f` and `g` each over `ux, vx, u²x, v²x, ux², vx²`.
    pub fn theta() -> Self {
        Self::from_monomials(&X_MONOMIALS, &X_MONOMIALS)
    }

    /// Like [`theta`](Self::theta) but `g` uses the mirrored `y` monomials
    /// `vy, uy, v²y, u²y, vy², uy²`.
    pub fn theta_mirrored() -> Self {
        let mirrored: Vec<_> = X_MONOMIALS.iter().map(|&(i, j, m, n)| (j, i, n, m)).collect();
        Self::from_monomials(&X_MONOMIALS, &mirrored)
    }

    fn from_monomials(f: &[(u32, u32, u32, u32)], g: &[(u32, u32, u32, u32)]) -> Self {
        let mk = |component| move |&(i, j, m, n): &(u32, u32, u32, u32)| BasisTerm {
            component,
            i,
            j,
            m,
            n,
        };
        let mut terms: Vec<BasisTerm> = f.iter().map(mk(Component::F)).collect();
        terms.extend(g.iter().map(mk(Component::G)));
        Self {
            terms,
            reference_point: (0.0, 0.0),
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn polynomial(&self, params: &[f64]) -> DistortionPolynomial {
        assert_eq!(params.len(), self.terms.len(), "parameter count mismatch");
        let mut poly = DistortionPolynomial::default();
        poly.reference_point = self.reference_point;
        for (t, &c) in self.terms.iter().zip(params) {
            let term = MonomialTerm::new(t.i, t.j, t.m, t.n, c);
            match t.component {
                Component::F => poly.f_terms.push(term),
                Component::G => poly.g_terms.push(term),
            }
        }
        poly
    }

    /// Recovers the parameter vector from a polynomial carrying exactly this basis.
    pub fn params_of(&self, poly: &DistortionPolynomial) -> Option<Vec<f64>> {
        if poly.f_terms.len() + poly.g_terms.len() != self.terms.len() {
            return None;
        }
        let (mut fi, mut gi) = (poly.f_terms.iter(), poly.g_terms.iter());
        self.terms
            .iter()
            .map(|b| {
                let t = match b.component {
                    Component::F => fi.next()?,
                    Component::G => gi.next()?,
                };
                ((t.i, t.j, t.m, t.n) == (b.i, b.j, b.m, b.n)).then_some(t.coefficient)
            })
            .collect()
    }
}

/// Coefficients of the default 12-term basis, in absolute units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector(pub [f64; 12]);

impl ThetaVector {
    pub const ZERO: Self = Self([0.0; 12]);

    /// Builds from values expressed in units of `1e-6`.
    pub fn from_micro(values: [f64; 12]) -> Self {
        Self(values.map(|v| v * 1e-6))
    }

    pub fn to_micro(&self) -> [f64; 12] {
        self.0.map(|v| v * 1e6)
    }

    pub fn to_polynomial(&self) -> DistortionPolynomial {
        PolynomialBasis::theta().polynomial(&self.0)
    }

    pub fn from_polynomial(poly: &DistortionPolynomial) -> Option<Self> {
        let v = PolynomialBasis::theta().params_of(poly)?;
        Some(Self(v.try_into().ok()?))
    }
}
