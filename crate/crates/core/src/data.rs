//! Labelled molecule datasets: CSV loading with validity filtering, seeded
//! splitting, and small synthetic tasks.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actions::EditAction;
use crate::molgraph::{
    apply_edit, canonical_key, check_validity, free_valence, parse_smiles, write_smiles, Element,
    Molecule,
};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("no valid rows remain after filtering ({skipped} skipped)")]
    EmptyAfterFiltering { skipped: usize },
    #[error("dataset of {size} records is too small to split (need at least 10)")]
    TooSmall { size: usize },
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions((f64, f64, f64)),
    #[error("synthetic tasks need at least 20 molecules, asked for {0}")]
    SynthTooSmall(usize),
    #[error("unknown synthetic task {0:?} (expected contains_nitrogen or heavy_atom_count)")]
    UnknownSynthTask(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Classification { n_classes: usize },
    Regression,
}

impl Task {
    pub const BINARY: Task = Task::Classification { n_classes: 2 };

    /// Number of predictor outputs.
    pub fn output_width(self) -> usize {
        match self {
            Task::Classification { n_classes } => n_classes,
            Task::Regression => 1,
        }
    }

    pub fn is_classification(self) -> bool {
        matches!(self, Task::Classification { .. })
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Classification { n_classes } => write!(f, "classification ({n_classes} classes)"),
            Task::Regression => f.write_str("regression"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(usize),
    Value(f64),
}

impl Label {
    pub fn fits(&self, task: Task) -> bool {
        match (self, task) {
            (Label::Class(c), Task::Classification { n_classes }) => *c < n_classes,
            (Label::Value(v), Task::Regression) => v.is_finite(),
            _ => false,
        }
    }

    /// Parses a CSV cell for `task`. Class labels may be written as integral
    /// floats (`1.0`).
    pub fn parse(text: &str, task: Task) -> Result<Label, String> {
        let text = text.trim();
        let value: f64 = text
            .parse()
            .map_err(|_| format!("label {text:?} is not a number"))?;
        if !value.is_finite() {
            return Err(format!("label {text:?} is not finite"));
        }
        match task {
            Task::Regression => Ok(Label::Value(value)),
            Task::Classification { n_classes } => {
                if value.fract() != 0.0 || value < 0.0 || value >= n_classes as f64 {
                    Err(format!("label {text:?} is not a class in 0..{n_classes}"))
                } else {
                    Ok(Label::Class(value as usize))
                }
            }
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Class(c) => write!(f, "{c}"),
            Label::Value(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub smiles: String,
    pub molecule: Molecule,
    pub label: Label,
}

impl Record {
    pub fn new(smiles: &str, molecule: Molecule, label: Label) -> Self {
        Record {
            smiles: smiles.to_string(),
            molecule,
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    task: Task,
    records: Vec<Record>,
}

impl Dataset {
    pub fn new(task: Task, records: Vec<Record>) -> Self {
        Dataset { task, records }
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset::new(
            self.task,
            idx.iter().map(|&i| self.records[i].clone()).collect(),
        )
    }

    /// Writes `smiles,label` rows with a header.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), DataError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["smiles", "label"])?;
        for r in &self.records {
            out.write_record([r.smiles.as_str(), &r.label.to_string()])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvColumns {
    pub smiles: String,
    pub label: String,
}

impl Default for CsvColumns {
    fn default() -> Self {
        CsvColumns {
            smiles: "smiles".into(),
            label: "label".into(),
        }
    }
}

/// One CSV row that did not make it into the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRow {
    /// 1-based line number in the file (the header is line 1).
    pub line: u64,
    pub smiles: String,
    pub reason: String,
}

/// Loads a CSV file, dropping rows whose SMILES do not parse, describe an
/// invalid molecule, or carry an unusable label.
pub fn load_csv(
    path: &Path,
    task: Task,
    columns: &CsvColumns,
) -> Result<(Dataset, Vec<SkippedRow>), DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, task, columns)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    task: Task,
    columns: &CsvColumns,
) -> Result<(Dataset, Vec<SkippedRow>), DataError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let smiles_col = find(&columns.smiles)?;
    let label_col = find(&columns.label)?;

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let smiles = row.get(smiles_col).unwrap_or("").trim().to_string();
        let outcome = (|| {
            let label = Label::parse(row.get(label_col).unwrap_or(""), task)?;
            let molecule = parse_smiles(&smiles).map_err(|e| e.to_string())?;
            let report = check_validity(&molecule);
            if !report.valid {
                return Err(report.to_string());
            }
            Ok((molecule, label))
        })();
        match outcome {
            Ok((molecule, label)) => records.push(Record {
                smiles,
                molecule,
                label,
            }),
            Err(reason) => skipped.push(SkippedRow {
                line,
                smiles,
                reason,
            }),
        }
    }
    if records.is_empty() {
        return Err(DataError::EmptyAfterFiltering {
            skipped: skipped.len(),
        });
    }
    Ok((Dataset::new(task, records), skipped))
}

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Seeded shuffle, then `round(n·val)` validation and `round(n·test)` test
/// records; everything else is training data.
pub fn split(
    d: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(DataError::BadFractions(fractions));
    }
    let n = d.len();
    if n < 10 {
        return Err(DataError::TooSmall { size: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (b * n as f64).round() as usize;
    let n_test = (c * n as f64).round() as usize;
    let n_train = n - n_val - n_test;
    Ok((
        d.subset(&idx[..n_train]),
        d.subset(&idx[n_train..n_train + n_val]),
        d.subset(&idx[n_train + n_val..]),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Binary: does the molecule contain nitrogen?
    ContainsNitrogen,
    /// Regression: number of heavy atoms.
    HeavyAtomCount,
}

impl SynthKind {
    pub fn task(self) -> Task {
        match self {
            SynthKind::ContainsNitrogen => Task::BINARY,
            SynthKind::HeavyAtomCount => Task::Regression,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SynthKind::ContainsNitrogen => "contains_nitrogen",
            SynthKind::HeavyAtomCount => "heavy_atom_count",
        }
    }

    /// Ground-truth label of `m` for this task.
    pub fn label(self, m: &Molecule) -> Label {
        match self {
            SynthKind::ContainsNitrogen => {
                Label::Class(usize::from(m.count_element(Element::N) > 0))
            }
            SynthKind::HeavyAtomCount => Label::Value(m.atom_count() as f64),
        }
    }
}

impl FromStr for SynthKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "contains_nitrogen" => Ok(SynthKind::ContainsNitrogen),
            "heavy_atom_count" => Ok(SynthKind::HeavyAtomCount),
            other => Err(DataError::UnknownSynthTask(other.to_string())),
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const SYNTH_MIN_ATOMS: usize = 4;
pub const SYNTH_MAX_ATOMS: usize = 8;
const SYNTH_RETRIES: usize = 200;

const NON_NITROGEN: [(Element, f64); 6] = [
    (Element::C, 0.60),
    (Element::O, 0.20),
    (Element::S, 0.05),
    (Element::F, 0.05),
    (Element::Cl, 0.05),
    (Element::Br, 0.05),
];

fn pick_element<R: Rng>(rng: &mut R) -> Element {
    let mut u: f64 = rng.gen();
    for &(e, w) in &NON_NITROGEN {
        if u < w {
            return e;
        }
        u -= w;
    }
    Element::C
}

/// Grows a molecule from a single carbon by random valid edits: mostly atom
/// additions, with occasional bond upgrades and rare ring closures. If
/// `nitrogen_at` is set, exactly that growth step adds a nitrogen; no other
/// step does.
fn random_walk<R: Rng>(rng: &mut R, size: usize, nitrogen_at: Option<usize>) -> Molecule {
    let mut m = Molecule::single(Element::C);
    let mut added = 0;
    let mut guard = 0;
    while m.atom_count() < size && guard < 100 {
        guard += 1;
        let free: Vec<i32> = (0..m.atom_count())
            .map(|i| free_valence(&m, i).expect("atom in range"))
            .collect();
        let open: Vec<usize> = (0..m.atom_count()).filter(|&i| free[i] > 0).collect();
        if open.is_empty() {
            break;
        }
        let roll: f64 = rng.gen();
        let action = if roll < 0.85 || m.atom_count() < 2 {
            added += 1;
            let element = if nitrogen_at == Some(added) {
                Element::N
            } else {
                pick_element(rng)
            };
            EditAction::AddAtom {
                element,
                attach_to: *open.choose(rng).expect("non-empty"),
            }
        } else {
            let ring = roll > 0.97;
            let pairs: Vec<(usize, usize)> = open
                .iter()
                .flat_map(|&i| open.iter().map(move |&j| (i, j)))
                .filter(|&(i, j)| i < j && (m.bond_order(i, j) > 0) != ring)
                .filter(|&(i, j)| m.bond_order(i, j) < 3)
                .collect();
            let Some(&(i, j)) = pairs.choose(rng) else {
                continue;
            };
            EditAction::set_bond(i, j, m.bond_order(i, j) + 1)
        };
        if let Ok(next) = apply_edit(&m, &action) {
            m = next;
        }
    }
    m
}

/// `n` distinct random molecules (usually [`SYNTH_MIN_ATOMS`] to
/// [`SYNTH_MAX_ATOMS`] heavy atoms, never more)
/// labelled for `kind`. Nitrogen presence alternates between samples, so the
/// classes are balanced to within one molecule.
pub fn synth_task(kind: SynthKind, n: usize, seed: u64) -> Result<Dataset, DataError> {
    if n < 20 {
        return Err(DataError::SynthTooSmall(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let with_nitrogen = i % 2 == 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let size = rng.gen_range(SYNTH_MIN_ATOMS..=SYNTH_MAX_ATOMS);
            // nitrogen joins in the second half of the walk, so it tends to sit
            // near the periphery
            let nitrogen_at = with_nitrogen.then(|| rng.gen_range(size / 2..size));
            let m = random_walk(&mut rng, size, nitrogen_at);
            if (m.count_element(Element::N) > 0) != with_nitrogen {
                continue;
            }
            if seen.insert(canonical_key(&m)) || attempt >= SYNTH_RETRIES {
                // store the atom order the SMILES text reproduces
                let smiles = write_smiles(&m);
                let m = parse_smiles(&smiles).expect("writer output parses");
                records.push(Record {
                    label: kind.label(&m),
                    smiles,
                    molecule: m,
                });
                break;
            }
        }
    }
    Ok(Dataset::new(kind.task(), records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_text(rows: &[(&str, &str)]) -> String {
        let mut s = String::from("smiles,label\n");
        for (a, b) in rows {
            s.push_str(&format!("{a},{b}\n"));
        }
        s
    }

    #[test]
    fn single_valid_row() {
        let text = csv_text(&[("CCO", "1")]);
        let (d, skipped) = read_csv(text.as_bytes(), Task::BINARY, &CsvColumns::default()).unwrap();
        assert_eq!(d.len(), 1);
        assert!(skipped.is_empty());
        assert_eq!(d.records()[0].label, Label::Class(1));
    }

    #[test]
    fn aromatic_row_is_skipped() {
        let text = csv_text(&[("c1ccccc1", "0"), ("CC", "0")]);
        let (d, skipped) = read_csv(text.as_bytes(), Task::BINARY, &CsvColumns::default()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(skipped.len(), 1);
        assert_eq!(skipped[0].line, 2);
        assert!(
            skipped[0].reason.contains("aromatic"),
            "{}",
            skipped[0].reason
        );
    }

    #[test]
    fn custom_columns_and_missing_column() {
        let text = "id,mol,y\n1,CC,2.5\n";
        let cols = CsvColumns {
            smiles: "mol".into(),
            label: "y".into(),
        };
        let (d, _) = read_csv(text.as_bytes(), Task::Regression, &cols).unwrap();
        assert_eq!(d.records()[0].label, Label::Value(2.5));
        assert!(matches!(
            read_csv(text.as_bytes(), Task::Regression, &CsvColumns::default()),
            Err(DataError::MissingColumn(c)) if c == "smiles"
        ));
    }

    #[test]
    fn all_rows_invalid() {
        let text = csv_text(&[("C(", "0"), ("CC", "7")]);
        assert!(matches!(
            read_csv(text.as_bytes(), Task::BINARY, &CsvColumns::default()),
            Err(DataError::EmptyAfterFiltering { skipped: 2 })
        ));
    }

    #[test]
    fn label_parsing() {
        assert_eq!(Label::parse("1.0", Task::BINARY), Ok(Label::Class(1)));
        assert!(Label::parse("0.5", Task::BINARY).is_err());
        assert!(Label::parse("2", Task::BINARY).is_err());
        assert!(Label::parse("nan", Task::Regression).is_err());
        assert_eq!(
            Label::parse(" -3.25 ", Task::Regression),
            Ok(Label::Value(-3.25))
        );
    }

    fn dummy(n: usize) -> Dataset {
        let m = parse_smiles("C").unwrap();
        Dataset::new(
            Task::Regression,
            (0..n)
                .map(|i| Record::new("C", m.clone(), Label::Value(i as f64)))
                .collect(),
        )
    }

    #[test]
    fn split_sizes() {
        for (n, want) in [
            (100, (80, 10, 10)),
            (101, (81, 10, 10)),
            (10, (8, 1, 1)),
            (15, (11, 2, 2)),
        ] {
            let (a, b, c) = split(&dummy(n), DEFAULT_FRACTIONS, 3).unwrap();
            assert_eq!((a.len(), b.len(), c.len()), want, "n = {n}");
        }
        assert!(matches!(
            split(&dummy(9), DEFAULT_FRACTIONS, 3),
            Err(DataError::TooSmall { size: 9 })
        ));
        assert!(matches!(
            split(&dummy(50), (0.8, 0.1, 0.2), 3),
            Err(DataError::BadFractions(_))
        ));
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let d = dummy(57);
        let (a, b, c) = split(&d, DEFAULT_FRACTIONS, 9).unwrap();
        let mut seen: Vec<i64> = a
            .records()
            .iter()
            .chain(b.records())
            .chain(c.records())
            .map(|r| match r.label {
                Label::Value(v) => v as i64,
                _ => unreachable!(),
            })
            .collect();
        seen.sort();
        assert_eq!(seen, (0..57).collect::<Vec<_>>());
        assert_eq!(split(&d, DEFAULT_FRACTIONS, 9).unwrap().1, b);
        assert_ne!(split(&d, DEFAULT_FRACTIONS, 10).unwrap().0, a);
    }

    #[test]
    fn synth_molecules_are_valid_and_balanced() {
        let d = synth_task(SynthKind::ContainsNitrogen, 200, 1).unwrap();
        assert_eq!(d.len(), 200);
        let positives = d
            .records()
            .iter()
            .filter(|r| r.label == Label::Class(1))
            .count();
        assert_eq!(positives, 100);
        for r in d.records() {
            assert!(check_validity(&r.molecule).valid);
            assert!(r.molecule.atom_count() <= SYNTH_MAX_ATOMS);
            assert_eq!(parse_smiles(&r.smiles).unwrap(), r.molecule);
        }
    }

    #[test]
    fn synth_is_seeded() {
        let a = synth_task(SynthKind::HeavyAtomCount, 30, 5).unwrap();
        assert_eq!(a, synth_task(SynthKind::HeavyAtomCount, 30, 5).unwrap());
        assert_ne!(a, synth_task(SynthKind::HeavyAtomCount, 30, 6).unwrap());
        assert!(matches!(
            synth_task(SynthKind::HeavyAtomCount, 19, 5),
            Err(DataError::SynthTooSmall(19))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let d = synth_task(SynthKind::ContainsNitrogen, 20, 2).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let (back, skipped) =
            read_csv(buf.as_slice(), Task::BINARY, &CsvColumns::default()).unwrap();
        assert!(skipped.is_empty());
        assert_eq!(back, d);
    }
}
