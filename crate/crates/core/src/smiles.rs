//! SMILES subset parser and atom featurization for drug molecular graphs.
//!
//! Supported grammar: organic-subset atoms (`B C N O P S F Cl Br I`) and
//! their aromatic forms (`b c n o p s`), bracket atoms with element, explicit
//! hydrogen count and formal charge, bonds `- = # :`, branches, ring closures
//! (`0-9` and `%nn`) and `.` component separators.
//!
//! Stereochemistry (`@`, `/`, `\`), isotopes, atom classes and the `*`
//! wildcard are rejected with a positioned error. Aromaticity is syntactic:
//! lowercase atoms are aromatic and a bond between two aromatic atoms without
//! an explicit symbol is aromatic.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::molgraph::MolecularGraph;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("SMILES error at position {position}: {kind}")]
pub struct SmilesError {
    pub position: usize,
    pub kind: SmilesErrorKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmilesErrorKind {
    #[error("empty input")]
    Empty,
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unexpected character {0:?}")]
    UnexpectedChar(char),
    #[error("unclosed branch")]
    UnclosedBranch,
    #[error("unmatched ')'")]
    UnmatchedClose,
    #[error("empty branch")]
    EmptyBranch,
    #[error("ring closure {0} never closed")]
    UnclosedRing(u32),
    #[error("ring closure {0} bonds an atom to itself")]
    RingSelfBond(u32),
    #[error("conflicting bond symbols on ring closure {0}")]
    RingBondConflict(u32),
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
    #[error("bond symbol not followed by an atom")]
    DanglingBond,
    #[error("unknown element {0:?}")]
    UnknownElement(String),
    #[error("unsupported construct: {0}")]
    Unsupported(&'static str),
    #[error("malformed bracket atom")]
    MalformedBracket,
}

fn err<T>(position: usize, kind: SmilesErrorKind) -> Result<T, SmilesError> {
    Err(SmilesError { position, kind })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    fn valence(self) -> u32 {
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

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Atom {
    pub element: String,
    pub aromatic: bool,
    pub charge: i32,
    /// Hydrogens written inside a bracket atom.
    pub explicit_hydrogens: u32,
    /// Hydrogens implied by standard valence (organic-subset atoms only).
    pub implicit_hydrogens: u32,
    pub bracket: bool,
}

impl Atom {
    pub fn total_hydrogens(&self) -> u32 {
        self.explicit_hydrogens + self.implicit_hydrogens
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

/// Heavy-atom graph parsed from SMILES.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DrugMolecule {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// Number of ring-closure bonds formed while parsing.
    pub ring_closures: usize,
}

impl DrugMolecule {
    pub fn degree(&self, atom: usize) -> usize {
        self.bonds
            .iter()
            .filter(|b| b.a == atom || b.b == atom)
            .count()
    }

    pub fn neighbors(&self, atom: usize) -> impl Iterator<Item = (usize, BondOrder)> + '_ {
        self.bonds.iter().filter_map(move |b| {
            if b.a == atom {
                Some((b.b, b.order))
            } else if b.b == atom {
                Some((b.a, b.order))
            } else {
                None
            }
        })
    }
}

const ELEMENTS: &[&str] = &[
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh",
    "Fl", "Mc", "Lv", "Ts", "Og",
];

const AROMATIC_BRACKET: &[&str] = &["b", "c", "n", "o", "p", "s", "se", "as"];

fn standard_valences(element: &str) -> &'static [u32] {
    match element {
        "B" => &[3],
        "C" => &[4],
        "N" => &[3, 5],
        "O" => &[2],
        "P" => &[3, 5],
        "S" => &[2, 4, 6],
        "F" | "Cl" | "Br" | "I" => &[1],
        _ => &[],
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
        None => String::new(),
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: BTreeMap<(usize, usize), BondOrder>,
    bond_list: Vec<Bond>,
    /// ring number -> (atom, explicit bond, position of the digit)
    open_rings: BTreeMap<u32, (usize, Option<BondOrder>, usize)>,
    ring_closures: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn add_bond(
        &mut self,
        a: usize,
        b: usize,
        order: BondOrder,
        position: usize,
    ) -> Result<(), SmilesError> {
        let key = (a.min(b), a.max(b));
        if self.bonds.insert(key, order).is_some() {
            return err(position, SmilesErrorKind::DuplicateBond(key.0, key.1));
        }
        self.bond_list.push(Bond { a, b, order });
        Ok(())
    }

    fn implied_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn parse_bond(&mut self) -> Result<Option<BondOrder>, SmilesError> {
        let order = match self.peek() {
            Some(b'-') => BondOrder::Single,
            Some(b'=') => BondOrder::Double,
            Some(b'#') => BondOrder::Triple,
            Some(b':') => BondOrder::Aromatic,
            Some(b'/') | Some(b'\\') => {
                return err(self.pos, SmilesErrorKind::Unsupported("directional bond"))
            }
            Some(b'$') => return err(self.pos, SmilesErrorKind::Unsupported("quadruple bond")),
            _ => return Ok(None),
        };
        self.pos += 1;
        Ok(Some(order))
    }

    fn parse_ring_number(&mut self) -> Result<Option<u32>, SmilesError> {
        match self.peek() {
            Some(c) if c.is_ascii_digit() => {
                self.pos += 1;
                Ok(Some(u32::from(c - b'0')))
            }
            Some(b'%') => {
                let start = self.pos;
                let digits = self.bytes.get(self.pos + 1..self.pos + 3);
                match digits {
                    Some(d) if d.iter().all(u8::is_ascii_digit) => {
                        self.pos += 3;
                        Ok(Some(u32::from(d[0] - b'0') * 10 + u32::from(d[1] - b'0')))
                    }
                    _ if self.pos + 3 > self.bytes.len() => {
                        err(self.bytes.len(), SmilesErrorKind::UnexpectedEnd)
                    }
                    _ => err(start, SmilesErrorKind::UnexpectedChar('%')),
                }
            }
            _ => Ok(None),
        }
    }

    fn parse_organic(&mut self) -> Result<Option<Atom>, SmilesError> {
        let Some(c) = self.peek() else {
            return Ok(None);
        };
        let next = self.bytes.get(self.pos + 1).copied();
        let (element, aromatic, len) = match (c, next) {
            (b'C', Some(b'l')) => ("Cl", false, 2),
            (b'B', Some(b'r')) => ("Br", false, 2),
            (b'B', _) => ("B", false, 1),
            (b'C', _) => ("C", false, 1),
            (b'N', _) => ("N", false, 1),
            (b'O', _) => ("O", false, 1),
            (b'P', _) => ("P", false, 1),
            (b'S', _) => ("S", false, 1),
            (b'F', _) => ("F", false, 1),
            (b'I', _) => ("I", false, 1),
            (b'b', _) => ("B", true, 1),
            (b'c', _) => ("C", true, 1),
            (b'n', _) => ("N", true, 1),
            (b'o', _) => ("O", true, 1),
            (b'p', _) => ("P", true, 1),
            (b's', _) => ("S", true, 1),
            _ => return Ok(None),
        };
        self.pos += len;
        Ok(Some(Atom {
            element: element.to_string(),
            aromatic,
            charge: 0,
            explicit_hydrogens: 0,
            implicit_hydrogens: 0,
            bracket: false,
        }))
    }

    fn parse_bracket(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        self.pos += 1;
        let end = |p: &Self| err(p.bytes.len(), SmilesErrorKind::UnexpectedEnd);
        match self.peek() {
            None => return end(self),
            Some(c) if c.is_ascii_digit() => {
                return err(self.pos, SmilesErrorKind::Unsupported("isotope"))
            }
            Some(b'*') => return err(self.pos, SmilesErrorKind::Unsupported("wildcard atom")),
            _ => {}
        }
        let sym_start = self.pos;
        let rest = &self.bytes[self.pos..];
        let take = |n: usize| std::str::from_utf8(&rest[..n.min(rest.len())]).unwrap_or("");
        let (element, aromatic, len) = if rest.first().is_some_and(u8::is_ascii_uppercase) {
            let two = take(2);
            if two.len() == 2 && ELEMENTS.contains(&two) {
                (two.to_string(), false, 2)
            } else if ELEMENTS.contains(&take(1)) {
                (take(1).to_string(), false, 1)
            } else {
                let written = if rest.get(1).is_some_and(u8::is_ascii_lowercase) {
                    two
                } else {
                    take(1)
                };
                return err(
                    sym_start,
                    SmilesErrorKind::UnknownElement(written.to_string()),
                );
            }
        } else if rest.first().is_some_and(u8::is_ascii_lowercase) {
            let two = take(2);
            if two.len() == 2 && AROMATIC_BRACKET.contains(&two) {
                (capitalize(two), true, 2)
            } else if AROMATIC_BRACKET.contains(&take(1)) {
                (capitalize(take(1)), true, 1)
            } else {
                return err(
                    sym_start,
                    SmilesErrorKind::UnknownElement(take(1).to_string()),
                );
            }
        } else {
            return err(sym_start, SmilesErrorKind::MalformedBracket);
        };
        self.pos += len;

        if self.peek() == Some(b'@') {
            return err(self.pos, SmilesErrorKind::Unsupported("chirality"));
        }
        let mut hydrogens = 0;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            hydrogens = 1;
            if let Some(d) = self.peek().filter(u8::is_ascii_digit) {
                hydrogens = u32::from(d - b'0');
                self.pos += 1;
            }
        }
        let mut charge = 0i32;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            charge = unit;
            if let Some(d) = self.peek().filter(u8::is_ascii_digit) {
                charge = unit * i32::from(d - b'0');
                self.pos += 1;
            } else {
                while self.peek() == Some(sign) {
                    charge += unit;
                    self.pos += 1;
                }
            }
        }
        match self.peek() {
            Some(b']') => self.pos += 1,
            Some(b':') => return err(self.pos, SmilesErrorKind::Unsupported("atom class")),
            Some(c) => return err(self.pos, SmilesErrorKind::UnexpectedChar(c as char)),
            None => return end(self),
        }
        let _ = open;
        Ok(Atom {
            element,
            aromatic,
            charge,
            explicit_hydrogens: hydrogens,
            implicit_hydrogens: 0,
            bracket: true,
        })
    }

    fn parse(mut self) -> Result<DrugMolecule, SmilesError> {
        if self.bytes.is_empty() {
            return err(0, SmilesErrorKind::Empty);
        }
        // (atom to bond from, position of '(') for each open branch
        let mut branches: Vec<(Option<usize>, usize)> = Vec::new();
        let mut prev: Option<usize> = None;
        // atoms placed since the innermost '(' (to detect "()")
        let mut branch_atoms: Vec<usize> = Vec::new();
        let mut pending_bond: Option<(BondOrder, usize)> = None;

        while let Some(c) = self.peek() {
            let here = self.pos;
            match c {
                b'(' => {
                    if prev.is_none() || pending_bond.is_some() {
                        return err(here, SmilesErrorKind::UnexpectedChar('('));
                    }
                    branches.push((prev, here));
                    branch_atoms.push(self.atoms.len());
                    self.pos += 1;
                }
                b')' => {
                    if pending_bond.is_some() {
                        return err(here, SmilesErrorKind::DanglingBond);
                    }
                    let Some((anchor, _)) = branches.pop() else {
                        return err(here, SmilesErrorKind::UnmatchedClose);
                    };
                    let first = branch_atoms.pop().expect("pushed with branch");
                    if self.atoms.len() == first {
                        return err(here, SmilesErrorKind::EmptyBranch);
                    }
                    prev = anchor;
                    self.pos += 1;
                }
                b'.' => {
                    if pending_bond.is_some() || prev.is_none() {
                        return err(here, SmilesErrorKind::UnexpectedChar('.'));
                    }
                    prev = None;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' | b'$' => {
                    if pending_bond.is_some() || prev.is_none() {
                        return err(here, SmilesErrorKind::UnexpectedChar(c as char));
                    }
                    let order = self.parse_bond()?.expect("bond character");
                    pending_bond = Some((order, here));
                }
                b'0'..=b'9' | b'%' => {
                    let Some(atom) = prev else {
                        return err(here, SmilesErrorKind::UnexpectedChar(c as char));
                    };
                    let ring = self.parse_ring_number()?.expect("ring character");
                    let bond = pending_bond.take().map(|(o, _)| o);
                    match self.open_rings.remove(&ring) {
                        Some((other, other_bond, _)) => {
                            if other == atom {
                                return err(here, SmilesErrorKind::RingSelfBond(ring));
                            }
                            let order = match (other_bond, bond) {
                                (Some(a), Some(b)) if a != b => {
                                    return err(here, SmilesErrorKind::RingBondConflict(ring))
                                }
                                (Some(a), _) | (None, Some(a)) => a,
                                (None, None) => self.implied_order(other, atom),
                            };
                            self.add_bond(other, atom, order, here)?;
                            self.ring_closures += 1;
                        }
                        None => {
                            self.open_rings.insert(ring, (atom, bond, here));
                        }
                    }
                }
                b'[' => {
                    let atom = self.parse_bracket()?;
                    self.place_atom(atom, &mut prev, &mut pending_bond, here)?;
                }
                b'@' => return err(here, SmilesErrorKind::Unsupported("chirality")),
                b'*' => return err(here, SmilesErrorKind::Unsupported("wildcard atom")),
                _ => match self.parse_organic()? {
                    Some(atom) => self.place_atom(atom, &mut prev, &mut pending_bond, here)?,
                    None => return err(here, SmilesErrorKind::UnexpectedChar(c as char)),
                },
            }
        }

        let end = self.bytes.len();
        if pending_bond.is_some() {
            return err(end, SmilesErrorKind::DanglingBond);
        }
        if !branches.is_empty() {
            return err(end, SmilesErrorKind::UnclosedBranch);
        }
        if let Some((&ring, &(_, _, position))) = self.open_rings.iter().next() {
            return err(position, SmilesErrorKind::UnclosedRing(ring));
        }

        let mut atoms = self.atoms;
        let bonds = self.bond_list;
        for (i, atom) in atoms.iter_mut().enumerate() {
            if atom.bracket {
                continue;
            }
            let valences = standard_valences(&atom.element);
            let mut used: u32 = bonds
                .iter()
                .filter(|b| b.a == i || b.b == i)
                .map(|b| b.order.valence())
                .sum();
            if atom.aromatic {
                used += 1;
                atom.implicit_hydrogens = valences.first().map_or(0, |&v| v.saturating_sub(used));
            } else {
                atom.implicit_hydrogens = valences
                    .iter()
                    .find(|&&v| v >= used)
                    .map_or(0, |&v| v - used);
            }
        }
        Ok(DrugMolecule {
            atoms,
            bonds,
            ring_closures: self.ring_closures,
        })
    }

    fn place_atom(
        &mut self,
        atom: Atom,
        prev: &mut Option<usize>,
        pending_bond: &mut Option<(BondOrder, usize)>,
        here: usize,
    ) -> Result<(), SmilesError> {
        self.atoms.push(atom);
        let idx = self.atoms.len() - 1;
        if let Some(p) = *prev {
            let order = match pending_bond.take() {
                Some((o, _)) => o,
                None => self.implied_order(p, idx),
            };
            self.add_bond(p, idx, order, here)?;
        } else if let Some((_, pos)) = pending_bond.take() {
            return err(pos, SmilesErrorKind::DanglingBond);
        }
        *prev = Some(idx);
        Ok(())
    }
}

/// Parses one SMILES string. Error positions are 0-based byte offsets;
/// errors detected at end of input report `s.len()`.
pub fn parse_smiles(s: &str) -> Result<DrugMolecule, SmilesError> {
    if let Some(p) = s
        .bytes()
        .position(|b| !b.is_ascii() || b.is_ascii_whitespace())
    {
        let c = s[p..].chars().next().unwrap_or('?');
        return err(p, SmilesErrorKind::UnexpectedChar(c));
    }
    Parser {
        bytes: s.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: BTreeMap::new(),
        bond_list: Vec::new(),
        open_rings: BTreeMap::new(),
        ring_closures: 0,
    }
    .parse()
}

/// Element vocabulary of the atom one-hot; the final slot is "unknown".
pub const ATOM_SYMBOLS: [&str; 44] = [
    "C", "N", "O", "S", "F", "Si", "P", "Cl", "Br", "Mg", "Na", "Ca", "Fe", "As", "Al", "I", "B",
    "V", "K", "Tl", "Yb", "Sb", "Sn", "Ag", "Pd", "Co", "Se", "Ti", "Zn", "H", "Li", "Ge", "Cu",
    "Au", "Ni", "Cd", "In", "Mn", "Zr", "Cr", "Pt", "Hg", "Pb", "Unknown",
];

const COUNT_SLOTS: usize = 11;

/// Atom feature layout: element (44) ++ degree (11) ++ total H (11) ++
/// implicit valence (11) ++ aromatic (1).
pub const ATOM_FEATURE_DIM: usize = ATOM_SYMBOLS.len() + 3 * COUNT_SLOTS + 1;

/// Layout tag recorded alongside featurized data.
pub const ATOM_FEATURE_LAYOUT: &str = "atom-v1:element44+degree11+hydrogens11+implicit11+aromatic1";

fn one_hot_count(out: &mut [f64], value: usize) {
    out[value.min(COUNT_SLOTS - 1)] = 1.0;
}

pub fn atom_features(mol: &DrugMolecule, atom: usize) -> Vec<f64> {
    let a = &mol.atoms[atom];
    let mut v = vec![0.0; ATOM_FEATURE_DIM];
    let slot = ATOM_SYMBOLS
        .iter()
        .position(|&s| s == a.element)
        .unwrap_or(ATOM_SYMBOLS.len() - 1);
    v[slot] = 1.0;
    let mut off = ATOM_SYMBOLS.len();
    one_hot_count(&mut v[off..off + COUNT_SLOTS], mol.degree(atom));
    off += COUNT_SLOTS;
    one_hot_count(&mut v[off..off + COUNT_SLOTS], a.total_hydrogens() as usize);
    off += COUNT_SLOTS;
    one_hot_count(
        &mut v[off..off + COUNT_SLOTS],
        a.implicit_hydrogens as usize,
    );
    off += COUNT_SLOTS;
    v[off] = if a.aromatic { 1.0 } else { 0.0 };
    v
}

pub fn drug_molecular_graph(mol: &DrugMolecule) -> MolecularGraph {
    let rows: Vec<Vec<f64>> = (0..mol.atoms.len())
        .map(|i| atom_features(mol, i))
        .collect();
    let features = Tensor::from_rows(&rows).expect("fixed feature width");
    MolecularGraph::new(
        mol.atoms.len(),
        mol.bonds.iter().map(|b| (b.a, b.b)),
        features,
    )
    .expect("parser guarantees a non-empty graph with valid bonds")
}
