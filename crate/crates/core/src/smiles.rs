//! SMILES parsing into a [`Molecule`].
//!
//! Covers the OpenSMILES subset used by interaction datasets: organic-subset
//! and bracket atoms, bond symbols `- = # :`, branches, ring closures
//! (`1`-`9`, `%nn`) and lowercase aromatic atoms. Stereo marks (`/ \ @ @@`)
//! and isotopes are accepted and dropped. Aromaticity is syntactic.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;

use thiserror::Error;

#[rustfmt::skip]
const SYMBOLS: [&str; 86] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr",
    "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb",
    "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn",
];

/// Chemical element, stored as its atomic number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(u8);

impl Element {
    pub const H: Element = Element(1);
    pub const B: Element = Element(5);
    pub const C: Element = Element(6);
    pub const N: Element = Element(7);
    pub const O: Element = Element(8);
    pub const F: Element = Element(9);
    pub const P: Element = Element(15);
    pub const S: Element = Element(16);
    pub const CL: Element = Element(17);
    pub const BR: Element = Element(35);
    pub const I: Element = Element(53);

    pub fn from_symbol(sym: &str) -> Option<Element> {
        SYMBOLS
            .iter()
            .position(|&s| s == sym)
            .map(|i| Element(i as u8 + 1))
    }

    pub fn atomic_number(self) -> u8 {
        self.0
    }

    pub fn symbol(self) -> &'static str {
        SYMBOLS[self.0 as usize - 1]
    }

    /// Allowed valences for organic-subset atoms, ascending.
    pub fn default_valences(self) -> &'static [u8] {
        match self {
            Element::B => &[3],
            Element::C => &[4],
            Element::N => &[3],
            Element::O => &[2],
            Element::P => &[3, 5],
            Element::S => &[2, 4, 6],
            Element::F | Element::CL | Element::BR | Element::I => &[1],
            _ => &[],
        }
    }

    fn can_be_aromatic(self) -> bool {
        matches!(self.0, 5 | 6 | 7 | 8 | 15 | 16 | 33 | 34 | 52)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to an atom's valence; aromatic bonds count one here and
    /// the shared pi electron is added per atom.
    fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            BondOrder::Single => '-',
            BondOrder::Double => '=',
            BondOrder::Triple => '#',
            BondOrder::Aromatic => ':',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hybridization {
    Sp,
    Sp2,
    Sp3,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub element: Element,
    pub formal_charge: i8,
    /// Hydrogen count written inside brackets; `None` for organic-subset atoms.
    pub explicit_h: Option<u8>,
    pub aromatic: bool,
    pub degree: usize,
    pub implicit_h: u8,
    /// Byte offset of the atom in the source string.
    pub offset: usize,
}

impl Atom {
    pub fn total_h(&self) -> u8 {
        self.explicit_h.unwrap_or(0) + self.implicit_h
    }

    pub fn is_bracket(&self) -> bool {
        self.explicit_h.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    pub in_ring: bool,
    pub conjugated: bool,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Molecule {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// Smallest set of smallest rings, each an ordered atom cycle.
    pub rings: Vec<Vec<usize>>,
}

impl Molecule {
    /// Bond indices incident to each atom.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for (k, b) in self.bonds.iter().enumerate() {
            adj[b.a].push(k);
            adj[b.b].push(k);
        }
        adj
    }

    pub fn hybridization(&self, atom: usize) -> Hybridization {
        let a = &self.atoms[atom];
        if !matches!(a.element.0, 5..=9 | 14..=17 | 33..=35 | 53) {
            return Hybridization::Other;
        }
        if a.aromatic {
            return Hybridization::Sp2;
        }
        let orders = self
            .bonds
            .iter()
            .filter(|b| b.a == atom || b.b == atom)
            .map(|b| b.order);
        let mut hyb = Hybridization::Sp3;
        for o in orders {
            match o {
                BondOrder::Double | BondOrder::Aromatic => hyb = Hybridization::Sp2,
                BondOrder::Triple => return Hybridization::Sp,
                BondOrder::Single => {}
            }
        }
        hyb
    }

    /// Ring sizes each atom belongs to (from the ring basis).
    pub fn atom_ring_sizes(&self, atom: usize) -> Vec<usize> {
        self.rings
            .iter()
            .filter(|r| r.contains(&atom))
            .map(Vec::len)
            .collect()
    }

    pub fn bond_ring_sizes(&self, bond: usize) -> Vec<usize> {
        let b = &self.bonds[bond];
        self.rings
            .iter()
            .filter(|r| ring_has_edge(r, b.a, b.b))
            .map(Vec::len)
            .collect()
    }
}

fn ring_has_edge(ring: &[usize], a: usize, b: usize) -> bool {
    let n = ring.len();
    (0..n).any(|i| {
        let (x, y) = (ring[i], ring[(i + 1) % n]);
        (x == a && y == b) || (x == b && y == a)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesErrorKind {
    #[error("empty input")]
    Empty,
    #[error("non-ASCII byte 0x{0:02x}")]
    NonAscii(u8),
    #[error("unexpected character '{0}'")]
    Unexpected(char),
    #[error("unknown element '{0}'")]
    UnknownElement(String),
    #[error("unbalanced parenthesis")]
    UnbalancedParen,
    #[error("empty branch")]
    EmptyBranch,
    #[error("unclosed ring closure {0}")]
    UnclosedRing(u32),
    #[error("malformed bracket atom: {0}")]
    MalformedBracket(&'static str),
    #[error("dot-disconnected components are not supported")]
    Disconnected,
    #[error("bond symbol not followed by an atom")]
    DanglingBond,
    #[error("quadruple bonds are not supported")]
    UnsupportedBond,
    #[error("conflicting bond symbols on ring closure {0}")]
    RingBondConflict(u32),
    #[error("atom bonded to itself")]
    SelfLoop,
    #[error("duplicate bond between the same atoms")]
    DuplicateBond,
    #[error("aromatic atom outside any ring")]
    AromaticOutsideRing,
    #[error("aromatic bond between non-aromatic atoms")]
    AromaticBondMismatch,
    #[error("element {0} cannot be aromatic")]
    NotAromatic(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("SMILES parse error at byte {offset}: {kind}")]
pub struct SmilesError {
    pub offset: usize,
    pub kind: SmilesErrorKind,
}

type PResult<T> = Result<T, SmilesError>;

fn err<T>(offset: usize, kind: SmilesErrorKind) -> PResult<T> {
    Err(SmilesError { offset, kind })
}

struct RingOpen {
    atom: usize,
    bond: Option<BondOrder>,
    offset: usize,
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<(usize, usize, Option<BondOrder>)>,
    seen_pairs: HashSet<(usize, usize)>,
    rings: BTreeMap<u32, RingOpen>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn add_bond(&mut self, a: usize, b: usize, order: Option<BondOrder>, at: usize) -> PResult<()> {
        if a == b {
            return err(at, SmilesErrorKind::SelfLoop);
        }
        let key = (a.min(b), a.max(b));
        if !self.seen_pairs.insert(key) {
            return err(at, SmilesErrorKind::DuplicateBond);
        }
        self.bonds.push((a, b, order));
        Ok(())
    }

    fn bond_symbol(&mut self) -> PResult<Option<BondOrder>> {
        let order = match self.peek() {
            Some(b'-') | Some(b'/') | Some(b'\\') => BondOrder::Single,
            Some(b'=') => BondOrder::Double,
            Some(b'#') => BondOrder::Triple,
            Some(b':') => BondOrder::Aromatic,
            Some(b'$') => return err(self.pos, SmilesErrorKind::UnsupportedBond),
            _ => return Ok(None),
        };
        self.pos += 1;
        Ok(Some(order))
    }

    fn parse(mut self) -> PResult<Molecule> {
        if self.s.is_empty() {
            return err(0, SmilesErrorKind::Empty);
        }
        if let Some(i) = self.s.iter().position(|b| !b.is_ascii()) {
            return err(i, SmilesErrorKind::NonAscii(self.s[i]));
        }
        let mut prev: Option<usize> = None;
        let mut branch_stack: Vec<(usize, usize)> = Vec::new();
        let mut pending: Option<(BondOrder, usize)> = None;
        // true right after '(' until the first atom of the branch
        let mut branch_open = false;

        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'(' => {
                    if prev.is_none() || pending.is_some() || branch_open {
                        return err(start, SmilesErrorKind::Unexpected('('));
                    }
                    branch_stack.push((prev.unwrap(), start));
                    branch_open = true;
                    self.pos += 1;
                }
                b')' => {
                    if pending.is_some() {
                        return err(start, SmilesErrorKind::DanglingBond);
                    }
                    if branch_open {
                        return err(start, SmilesErrorKind::EmptyBranch);
                    }
                    let Some((p, _)) = branch_stack.pop() else {
                        return err(start, SmilesErrorKind::UnbalancedParen);
                    };
                    prev = Some(p);
                    self.pos += 1;
                }
                b'.' => return err(start, SmilesErrorKind::Disconnected),
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' | b'$' => {
                    if prev.is_none() || pending.is_some() {
                        return err(start, SmilesErrorKind::Unexpected(c as char));
                    }
                    let order = self.bond_symbol()?.expect("bond symbol");
                    pending = Some((order, start));
                }
                b'0'..=b'9' | b'%' => {
                    let Some(cur) = prev else {
                        return err(start, SmilesErrorKind::Unexpected(c as char));
                    };
                    if branch_open {
                        return err(start, SmilesErrorKind::Unexpected(c as char));
                    }
                    let num = self.ring_number()?;
                    let bond = pending.take().map(|(o, _)| o);
                    self.ring_bond(cur, num, bond, start)?;
                }
                _ => {
                    let atom = self.atom()?;
                    if let Some(p) = prev {
                        let order = pending.take().map(|(o, _)| o);
                        self.add_bond(p, atom, order, start)?;
                    } else if pending.is_some() {
                        return err(start, SmilesErrorKind::DanglingBond);
                    }
                    prev = Some(atom);
                    branch_open = false;
                }
            }
        }
        if let Some((_, at)) = pending {
            return err(at, SmilesErrorKind::DanglingBond);
        }
        if branch_open {
            return err(self.pos, SmilesErrorKind::EmptyBranch);
        }
        if let Some(&(_, at)) = branch_stack.last() {
            return err(at, SmilesErrorKind::UnbalancedParen);
        }
        if let Some((&num, open)) = self.rings.iter().next() {
            return err(open.offset, SmilesErrorKind::UnclosedRing(num));
        }
        self.finish()
    }

    fn ring_number(&mut self) -> PResult<u32> {
        let start = self.pos;
        let c = self.s[self.pos];
        if c == b'%' {
            let digits = self.s.get(self.pos + 1..self.pos + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    Ok(u32::from(d[0] - b'0') * 10 + u32::from(d[1] - b'0'))
                }
                _ => err(start, SmilesErrorKind::Unexpected('%')),
            }
        } else {
            self.pos += 1;
            Ok(u32::from(c - b'0'))
        }
    }

    fn ring_bond(&mut self, cur: usize, num: u32, bond: Option<BondOrder>, at: usize) -> PResult<()> {
        match self.rings.remove(&num) {
            None => {
                self.rings.insert(
                    num,
                    RingOpen {
                        atom: cur,
                        bond,
                        offset: at,
                    },
                );
                Ok(())
            }
            Some(open) => {
                let order = match (open.bond, bond) {
                    (Some(a), Some(b)) if a != b => {
                        return err(at, SmilesErrorKind::RingBondConflict(num))
                    }
                    (a, b) => a.or(b),
                };
                self.add_bond(open.atom, cur, order, at)
            }
        }
    }

    fn push_atom(&mut self, element: Element, aromatic: bool, charge: i8, h: Option<u8>, at: usize) -> usize {
        self.atoms.push(Atom {
            element,
            formal_charge: charge,
            explicit_h: h,
            aromatic,
            degree: 0,
            implicit_h: 0,
            offset: at,
        });
        self.atoms.len() - 1
    }

    fn atom(&mut self) -> PResult<usize> {
        let start = self.pos;
        let c = self.s[self.pos];
        if c == b'[' {
            return self.bracket_atom();
        }
        let next = self.s.get(self.pos + 1).copied();
        let (element, aromatic, len) = match (c, next) {
            (b'C', Some(b'l')) => (Element::CL, false, 2),
            (b'B', Some(b'r')) => (Element::BR, false, 2),
            (b'B', _) => (Element::B, false, 1),
            (b'C', _) => (Element::C, false, 1),
            (b'N', _) => (Element::N, false, 1),
            (b'O', _) => (Element::O, false, 1),
            (b'P', _) => (Element::P, false, 1),
            (b'S', _) => (Element::S, false, 1),
            (b'F', _) => (Element::F, false, 1),
            (b'I', _) => (Element::I, false, 1),
            (b'b', _) => (Element::B, true, 1),
            (b'c', _) => (Element::C, true, 1),
            (b'n', _) => (Element::N, true, 1),
            (b'o', _) => (Element::O, true, 1),
            (b'p', _) => (Element::P, true, 1),
            (b's', _) => (Element::S, true, 1),
            (c, _) if c.is_ascii_alphabetic() => {
                let mut sym = String::from(c as char);
                if let Some(n) = next.filter(u8::is_ascii_lowercase) {
                    sym.push(n as char);
                }
                return err(start, SmilesErrorKind::UnknownElement(sym));
            }
            (c, _) => return err(start, SmilesErrorKind::Unexpected(c as char)),
        };
        self.pos += len;
        Ok(self.push_atom(element, aromatic, 0, None, start))
    }

    fn bracket_atom(&mut self) -> PResult<usize> {
        use SmilesErrorKind::MalformedBracket as Bad;
        let start = self.pos;
        self.pos += 1;
        // isotope
        let iso_start = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos - iso_start > 3 {
            return err(iso_start, Bad("isotope too long"));
        }
        // element symbol
        let sym_start = self.pos;
        let Some(c0) = self.peek() else {
            return err(start, Bad("missing element"));
        };
        let c1 = self.s.get(self.pos + 1).copied();
        let (element, aromatic) = if c0.is_ascii_uppercase() {
            let two = c1
                .filter(u8::is_ascii_lowercase)
                .map(|c1| format!("{}{}", c0 as char, c1 as char))
                .and_then(|s| Element::from_symbol(&s));
            if let Some(e) = two {
                self.pos += 2;
                (e, false)
            } else {
                let one = (c0 as char).to_string();
                match Element::from_symbol(&one) {
                    Some(e) => {
                        self.pos += 1;
                        (e, false)
                    }
                    None => return err(sym_start, SmilesErrorKind::UnknownElement(one)),
                }
            }
        } else if c0.is_ascii_lowercase() {
            let two = c1.map(|c1| [c0, c1]);
            let e = match two.as_ref().map(|t| &t[..]) {
                Some(b"se") => Some((Element(34), 2)),
                Some(b"as") => Some((Element(33), 2)),
                Some(b"te") => Some((Element(52), 2)),
                _ => match c0 {
                    b'b' => Some((Element::B, 1)),
                    b'c' => Some((Element::C, 1)),
                    b'n' => Some((Element::N, 1)),
                    b'o' => Some((Element::O, 1)),
                    b'p' => Some((Element::P, 1)),
                    b's' => Some((Element::S, 1)),
                    _ => None,
                },
            };
            match e {
                Some((e, len)) => {
                    self.pos += len;
                    (e, true)
                }
                None => {
                    return err(
                        sym_start,
                        SmilesErrorKind::UnknownElement((c0 as char).to_string()),
                    )
                }
            }
        } else if c0 == b'*' {
            return err(sym_start, SmilesErrorKind::UnknownElement("*".into()));
        } else {
            return err(sym_start, Bad("missing element"));
        };
        // chirality
        if self.peek() == Some(b'@') {
            self.pos += 1;
            if self.peek() == Some(b'@') {
                self.pos += 1;
            } else if self.peek().is_some_and(|b| b.is_ascii_uppercase())
                && self.s.get(self.pos + 1).is_some_and(u8::is_ascii_uppercase)
            {
                self.pos += 2;
                let d = self.pos;
                while self.peek().is_some_and(|b| b.is_ascii_digit()) {
                    self.pos += 1;
                }
                if self.pos == d || self.pos - d > 2 {
                    return err(d, Bad("chirality class"));
                }
            }
        }
        // hydrogens
        let mut h = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            h = 1;
            if let Some(d) = self.peek().filter(u8::is_ascii_digit) {
                h = d - b'0';
                self.pos += 1;
            }
        }
        // charge
        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            charge = unit;
            if self.peek().is_some_and(|b| b.is_ascii_digit()) {
                let d0 = self.pos;
                while self.peek().is_some_and(|b| b.is_ascii_digit()) {
                    self.pos += 1;
                }
                if self.pos - d0 > 2 {
                    return err(d0, Bad("charge too large"));
                }
                let n: i32 = std::str::from_utf8(&self.s[d0..self.pos])
                    .ok()
                    .and_then(|t| t.parse().ok())
                    .unwrap_or(0);
                charge = unit * n;
            } else {
                while self.peek() == Some(sign) {
                    charge += unit;
                    self.pos += 1;
                }
            }
            if charge.abs() > 15 {
                return err(start, Bad("charge too large"));
            }
        }
        // atom class
        if self.peek() == Some(b':') {
            self.pos += 1;
            let d0 = self.pos;
            while self.peek().is_some_and(|b| b.is_ascii_digit()) {
                self.pos += 1;
            }
            if self.pos == d0 || self.pos - d0 > 4 {
                return err(d0, Bad("atom class"));
            }
        }
        if self.peek() != Some(b']') {
            return err(self.pos.min(self.s.len()), Bad("expected ']'"));
        }
        self.pos += 1;
        if aromatic && !element.can_be_aromatic() {
            return err(sym_start, SmilesErrorKind::NotAromatic(element.symbol().into()));
        }
        Ok(self.push_atom(element, aromatic, charge as i8, Some(h), start))
    }

    fn finish(self) -> PResult<Molecule> {
        let mut bonds = Vec::with_capacity(self.bonds.len());
        for &(a, b, order) in &self.bonds {
            let (aa, ab) = (self.atoms[a].aromatic, self.atoms[b].aromatic);
            let order = match order {
                Some(BondOrder::Aromatic) if !(aa && ab) => {
                    return err(self.atoms[b].offset, SmilesErrorKind::AromaticBondMismatch)
                }
                Some(o) => o,
                None if aa && ab => BondOrder::Aromatic,
                None => BondOrder::Single,
            };
            bonds.push(Bond {
                a,
                b,
                order,
                in_ring: false,
                conjugated: false,
            });
        }
        let mut mol = Molecule {
            atoms: self.atoms,
            bonds,
            rings: Vec::new(),
        };
        if !is_connected(&mol) {
            return err(0, SmilesErrorKind::Disconnected);
        }
        perceive_rings(&mut mol);
        for b in &mut mol.bonds {
            if b.order == BondOrder::Aromatic && !b.in_ring {
                b.order = BondOrder::Single;
            }
        }
        let ring_atoms: HashSet<usize> = mol.rings.iter().flatten().copied().collect();
        if let Some(a) = mol
            .atoms
            .iter()
            .enumerate()
            .find(|(i, a)| a.aromatic && !ring_atoms.contains(i))
        {
            return err(a.1.offset, SmilesErrorKind::AromaticOutsideRing);
        }
        assign_hydrogens(&mut mol);
        assign_conjugation(&mut mol);
        Ok(mol)
    }
}

fn is_connected(m: &Molecule) -> bool {
    let n = m.atoms.len();
    if n == 0 {
        return false;
    }
    let adj = m.adjacency();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for &k in &adj[u] {
            let v = m.bonds[k].other(u);
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn assign_hydrogens(m: &mut Molecule) {
    let n = m.atoms.len();
    let mut order_sum = vec![0u32; n];
    let mut degree = vec![0usize; n];
    for b in &m.bonds {
        for x in [b.a, b.b] {
            order_sum[x] += u32::from(b.order.valence());
            degree[x] += 1;
        }
    }
    for (i, atom) in m.atoms.iter_mut().enumerate() {
        atom.degree = degree[i];
        if atom.is_bracket() {
            atom.implicit_h = 0;
            continue;
        }
        let mut used = order_sum[i];
        // aromatic C/N/P/B contribute one electron to a ring double bond;
        // aromatic O/S donate a lone pair instead
        if atom.aromatic && !matches!(atom.element, Element::O | Element::S) {
            used += 1;
        }
        let target = atom
            .element
            .default_valences()
            .iter()
            .map(|&v| u32::from(v))
            .find(|&v| v >= used);
        atom.implicit_h = target.map_or(0, |v| (v - used) as u8);
    }
}

fn assign_conjugation(m: &mut Molecule) {
    let hyb: Vec<Hybridization> = (0..m.atoms.len()).map(|i| m.hybridization(i)).collect();
    let unsat = |h: Hybridization| matches!(h, Hybridization::Sp | Hybridization::Sp2);
    for b in &mut m.bonds {
        b.conjugated = b.order == BondOrder::Aromatic || (unsat(hyb[b.a]) && unsat(hyb[b.b]));
    }
}

/// Parses a SMILES string into a ring-perceived molecule.
pub fn parse_smiles(s: &str) -> Result<Molecule, SmilesError> {
    parse_smiles_bytes(s.as_bytes())
}

pub fn parse_smiles_bytes(s: &[u8]) -> Result<Molecule, SmilesError> {
    Parser {
        s,
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        seen_pairs: HashSet::new(),
        rings: BTreeMap::new(),
    }
    .parse()
}

/// Computes the minimum cycle basis (SSSR) and sets `in_ring` on every bond
/// that lies in one of its cycles.
pub fn perceive_rings(m: &mut Molecule) {
    let n = m.atoms.len();
    let e = m.bonds.len();
    for b in &mut m.bonds {
        b.in_ring = false;
    }
    m.rings.clear();
    if n == 0 {
        return;
    }
    let components = count_components(m);
    let nullity = (e + components).saturating_sub(n);
    if nullity == 0 {
        return;
    }
    let adj = m.adjacency();

    // Horton candidates: for every root x and bond (u, v), the cycle formed
    // by the BFS-tree paths x→u and x→v plus (u, v), when the paths only
    // share x.
    let mut candidates: Vec<Vec<usize>> = Vec::new();
    let mut seen_sets: HashSet<Vec<usize>> = HashSet::new();
    for root in 0..n {
        let (parent_bond, depth) = bfs_tree(m, &adj, root);
        for (k, bond) in m.bonds.iter().enumerate() {
            let (u, v) = (bond.a, bond.b);
            if depth[u] == usize::MAX || depth[v] == usize::MAX {
                continue;
            }
            if parent_bond[u] == Some(k) || parent_bond[v] == Some(k) {
                continue;
            }
            let pu = path_bonds(m, &parent_bond, u);
            let pv = path_bonds(m, &parent_bond, v);
            let atoms_u = path_atoms(m, &parent_bond, u);
            let atoms_v = path_atoms(m, &parent_bond, v);
            // paths must meet only at the root
            let su: HashSet<usize> = atoms_u.iter().copied().collect();
            if atoms_v.iter().filter(|a| su.contains(a)).count() != 1 {
                continue;
            }
            let mut edges: Vec<usize> = pu.into_iter().chain(pv).chain([k]).collect();
            edges.sort_unstable();
            if seen_sets.insert(edges.clone()) {
                candidates.push(edges);
            }
        }
    }
    candidates.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));

    // greedy GF(2)-independent selection
    let words = e.div_ceil(64);
    let mut basis: Vec<(usize, Vec<u64>)> = Vec::new(); // (pivot, row)
    let mut chosen: Vec<Vec<usize>> = Vec::new();
    for cand in candidates {
        if chosen.len() == nullity {
            break;
        }
        let mut row = vec![0u64; words];
        for &k in &cand {
            row[k / 64] ^= 1 << (k % 64);
        }
        for (pivot, brow) in &basis {
            if row[pivot / 64] >> (pivot % 64) & 1 == 1 {
                for (x, y) in row.iter_mut().zip(brow) {
                    *x ^= y;
                }
            }
        }
        let pivot = row
            .iter()
            .enumerate()
            .find(|(_, w)| **w != 0)
            .map(|(i, w)| i * 64 + w.trailing_zeros() as usize);
        if let Some(p) = pivot {
            // keep earlier rows reduced against the new pivot
            for (_, brow) in basis.iter_mut() {
                if brow[p / 64] >> (p % 64) & 1 == 1 {
                    for (x, y) in brow.iter_mut().zip(&row) {
                        *x ^= y;
                    }
                }
            }
            basis.push((p, row));
            chosen.push(cand);
        }
    }
    for cycle in &chosen {
        for &k in cycle {
            m.bonds[k].in_ring = true;
        }
    }
    m.rings = chosen.iter().map(|c| order_cycle(m, c)).collect();
}

fn count_components(m: &Molecule) -> usize {
    let n = m.atoms.len();
    let adj = m.adjacency();
    let mut seen = vec![false; n];
    let mut count = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(u) = stack.pop() {
            for &k in &adj[u] {
                let v = m.bonds[k].other(u);
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    count
}

fn bfs_tree(m: &Molecule, adj: &[Vec<usize>], root: usize) -> (Vec<Option<usize>>, Vec<usize>) {
    let n = m.atoms.len();
    let mut parent = vec![None; n];
    let mut depth = vec![usize::MAX; n];
    depth[root] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &k in &adj[u] {
            let v = m.bonds[k].other(u);
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                parent[v] = Some(k);
                queue.push_back(v);
            }
        }
    }
    (parent, depth)
}

fn path_bonds(m: &Molecule, parent: &[Option<usize>], mut v: usize) -> Vec<usize> {
    let mut out = Vec::new();
    while let Some(k) = parent[v] {
        out.push(k);
        v = m.bonds[k].other(v);
    }
    out
}

fn path_atoms(m: &Molecule, parent: &[Option<usize>], mut v: usize) -> Vec<usize> {
    let mut out = vec![v];
    while let Some(k) = parent[v] {
        v = m.bonds[k].other(v);
        out.push(v);
    }
    out
}

/// Walks a simple cycle given as a bond set, starting from its lowest atom.
fn order_cycle(m: &Molecule, bonds: &[usize]) -> Vec<usize> {
    let start = bonds
        .iter()
        .flat_map(|&k| [m.bonds[k].a, m.bonds[k].b])
        .min()
        .unwrap_or(0);
    let mut cycle = vec![start];
    let mut used = vec![false; bonds.len()];
    let mut cur = start;
    for _ in 0..bonds.len() {
        let next = bonds
            .iter()
            .enumerate()
            .filter(|(i, &k)| !used[*i] && (m.bonds[k].a == cur || m.bonds[k].b == cur))
            .min_by_key(|(_, &k)| m.bonds[k].other(cur));
        let Some((i, &k)) = next else { break };
        used[i] = true;
        cur = m.bonds[k].other(cur);
        if cur == start {
            break;
        }
        cycle.push(cur);
    }
    cycle
}

/// Writes a SMILES string in which every atom is a bracket atom with its
/// total hydrogen count and every bond symbol is explicit, so that parsing
/// it back reproduces the same labelled graph.
pub fn write_smiles(m: &Molecule) -> String {
    let n = m.atoms.len();
    if n == 0 {
        return String::new();
    }
    let adj = m.adjacency();
    let mut visited = vec![false; n];
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    // ring bonds opened at an atom (bond, partner) and closed at an atom
    let mut opens: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut closes: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut tree_bond = vec![false; m.bonds.len()];
    let mut ring_bond = vec![false; m.bonds.len()];

    fn dfs(
        u: usize,
        m: &Molecule,
        adj: &[Vec<usize>],
        visited: &mut [bool],
        children: &mut [Vec<(usize, usize)>],
        opens: &mut [Vec<usize>],
        closes: &mut [Vec<usize>],
        tree_bond: &mut [bool],
        ring_bond: &mut [bool],
    ) {
        visited[u] = true;
        let mut nbrs: Vec<usize> = adj[u].clone();
        nbrs.sort_by_key(|&k| m.bonds[k].other(u));
        for k in nbrs {
            if tree_bond[k] || ring_bond[k] {
                continue;
            }
            let v = m.bonds[k].other(u);
            if visited[v] {
                ring_bond[k] = true;
                opens[v].push(k);
                closes[u].push(k);
            } else {
                tree_bond[k] = true;
                children[u].push((v, k));
                dfs(v, m, adj, visited, children, opens, closes, tree_bond, ring_bond);
            }
        }
    }
    dfs(
        0,
        m,
        &adj,
        &mut visited,
        &mut children,
        &mut opens,
        &mut closes,
        &mut tree_bond,
        &mut ring_bond,
    );

    let mut out = String::new();
    let mut ring_ids: BTreeMap<usize, u32> = BTreeMap::new();
    let mut free: Vec<bool> = vec![true; 100];

    fn atom_text(a: &Atom) -> String {
        let mut s = String::from("[");
        let sym = a.element.symbol();
        if a.aromatic {
            s.push_str(&sym.to_ascii_lowercase());
        } else {
            s.push_str(sym);
        }
        match a.total_h() {
            0 => {}
            1 => s.push('H'),
            h => s.push_str(&format!("H{h}")),
        }
        match a.formal_charge {
            0 => {}
            1 => s.push('+'),
            -1 => s.push('-'),
            c if c > 0 => s.push_str(&format!("+{c}")),
            c => s.push_str(&format!("-{}", -c)),
        }
        s.push(']');
        s
    }

    fn ring_label(id: u32) -> String {
        if id < 10 {
            id.to_string()
        } else {
            format!("%{id:02}")
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn emit(
        u: usize,
        m: &Molecule,
        children: &[Vec<(usize, usize)>],
        opens: &[Vec<usize>],
        closes: &[Vec<usize>],
        ring_ids: &mut BTreeMap<usize, u32>,
        free: &mut [bool],
        out: &mut String,
    ) {
        out.push_str(&atom_text(&m.atoms[u]));
        for &k in &closes[u] {
            if let Some(id) = ring_ids.remove(&k) {
                out.push(m.bonds[k].order.symbol());
                out.push_str(&ring_label(id));
                free[id as usize] = true;
            }
        }
        for &k in &opens[u] {
            let id = (1..free.len()).find(|&i| free[i]).unwrap_or(99);
            free[id] = false;
            ring_ids.insert(k, id as u32);
            out.push_str(&ring_label(id as u32));
        }
        let kids = &children[u];
        for (i, &(v, k)) in kids.iter().enumerate() {
            let last = i + 1 == kids.len();
            if !last {
                out.push('(');
            }
            out.push(m.bonds[k].order.symbol());
            emit(v, m, children, opens, closes, ring_ids, free, out);
            if !last {
                out.push(')');
            }
        }
    }
    emit(0, m, &children, &opens, &closes, &mut ring_ids, &mut free, &mut out);
    out
}
