//! Text formats for cohorts and embeddings.
//!
//! Cohort file:
//!
//! ```text
//! # cohort v1 p=<p>
//! patient_id,t,y,c,u,s,<feature_1>,...,<feature_p>
//! <id>,<t>,<y or blank>,<c or blank>,<u or blank>,<s or blank>,<d_1>,...,<d_p>
//! ```
//!
//! One row per visit, visits of a patient contiguous with `t = 1, 2, ...`.
//! Labeled patients (non-blank `y`) must precede unlabeled ones.
//!
//! Embedding file:
//!
//! ```text
//! # embeddings v1 q=<q>
//! <feature name>,<e_1>,...,<e_q>
//! SURROGATE,<e_1>,...,<e_q>
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Cohort, DataError, EmbeddingTable, PatientSeries};

pub const SURROGATE_ROW: &str = "SURROGATE";
const COHORT_MAGIC: &str = "# cohort v1";
const EMBED_MAGIC: &str = "# embeddings v1";
const FIXED_COLUMNS: [&str; 6] = ["patient_id", "t", "y", "c", "u", "s"];

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Feature column used for surrogate counts when `c` is blank.
    pub surrogate_feature: Option<usize>,
}

fn perr(line: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_header_value(line_no: usize, line: &str, magic: &str, key: &str) -> Result<usize, DataError> {
    let rest = line
        .strip_prefix(magic)
        .ok_or_else(|| perr(line_no, format!("expected header starting with '{magic}'")))?;
    let prefix = format!("{key}=");
    rest.split_whitespace()
        .find_map(|tok| tok.strip_prefix(prefix.as_str()))
        .ok_or_else(|| perr(line_no, format!("header missing {key}=")))?
        .parse()
        .map_err(|_| perr(line_no, format!("invalid {key} in header")))
}

fn parse_num(line: usize, field: &str, what: &str) -> Result<f64, DataError> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| perr(line, format!("invalid {what} '{field}'")))?;
    if !v.is_finite() {
        return Err(perr(line, format!("non-finite {what}")));
    }
    Ok(v)
}

fn opt_num(line: usize, field: &str, what: &str) -> Result<Option<f64>, DataError> {
    if field.trim().is_empty() {
        Ok(None)
    } else {
        parse_num(line, field, what).map(Some)
    }
}

struct Pending {
    id: String,
    first_line: usize,
    features: Vec<f64>,
    gold: Vec<Option<u8>>,
    silver: Vec<Option<f64>>,
    counts: Vec<Option<f64>>,
    util: Vec<Option<f64>>,
}

fn all_or_none<T: Copy>(line: usize, what: &str, v: &[Option<T>]) -> Result<Option<Vec<T>>, DataError> {
    if v.iter().all(Option::is_some) {
        Ok(Some(v.iter().map(|x| x.unwrap()).collect()))
    } else if v.iter().all(Option::is_none) {
        Ok(None)
    } else {
        Err(perr(line, format!("{what} column must be filled for all visits of a patient or none")))
    }
}

impl Pending {
    fn finish(self, p: usize, opts: LoadOptions) -> Result<PatientSeries, DataError> {
        let line = self.first_line;
        let t = self.gold.len();
        let gold = all_or_none(line, "y", &self.gold)?;
        let silver = all_or_none(line, "s", &self.silver)?;
        let mut counts = all_or_none(line, "c", &self.counts)?;
        let mut util = all_or_none(line, "u", &self.util)?;
        if counts.is_none() {
            if let Some(j) = opts.surrogate_feature {
                counts = Some((0..t).map(|r| self.features[r * p + j]).collect());
            }
        }
        if util.is_none() {
            util = Some(
                (0..t)
                    .map(|r| self.features[r * p..(r + 1) * p].iter().sum())
                    .collect(),
            );
        }
        Ok(PatientSeries {
            id: self.id,
            features: self.features,
            p,
            gold,
            silver,
            surrogate_counts: counts,
            utilization: util,
        })
    }
}

pub fn parse_cohort(text: &str, opts: LoadOptions) -> Result<Cohort, DataError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n0, magic) = lines.next().ok_or(DataError::NoPatients)?;
    let p = parse_header_value(n0, magic, COHORT_MAGIC, "p")?;
    let (n1, header) = lines.next().ok_or(DataError::NoPatients)?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() != FIXED_COLUMNS.len() + p || cols[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
        return Err(perr(
            n1,
            format!("column header must be {} followed by {p} feature names", FIXED_COLUMNS.join(",")),
        ));
    }
    let names: Vec<String> = cols[FIXED_COLUMNS.len()..].iter().map(|s| s.to_string()).collect();
    if let Some(j) = opts.surrogate_feature {
        if j >= p {
            return Err(perr(n1, format!("surrogate feature index {j} out of range for p={p}")));
        }
    }

    let mut done: Vec<PatientSeries> = Vec::new();
    let mut current: Option<Pending> = None;
    for (line, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != FIXED_COLUMNS.len() + p {
            return Err(perr(
                line,
                format!("expected {} fields, found {}", FIXED_COLUMNS.len() + p, fields.len()),
            ));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(perr(line, "empty patient_id"));
        }
        let t: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| perr(line, format!("invalid visit index '{}'", fields[1])))?;
        let y = match fields[2].trim() {
            "" => None,
            "0" => Some(0u8),
            "1" => Some(1u8),
            other => return Err(perr(line, format!("gold label '{other}' outside {{0,1}}"))),
        };
        let c = opt_num(line, fields[3], "surrogate count")?;
        let u = opt_num(line, fields[4], "utilization")?;
        let s = opt_num(line, fields[5], "silver label")?;
        if let Some(s) = s {
            if !(0.0..=1.0).contains(&s) {
                return Err(perr(line, "silver label outside [0,1]"));
            }
        }
        if c.is_some_and(|c| c < 0.0) || u.is_some_and(|u| u < 0.0) {
            return Err(perr(line, "negative count"));
        }
        let mut row = Vec::with_capacity(p);
        for f in &fields[FIXED_COLUMNS.len()..] {
            let v = parse_num(line, f, "feature count")?;
            if v < 0.0 {
                return Err(perr(line, "negative feature count"));
            }
            row.push(v);
        }

        let continues = current.as_ref().is_some_and(|c| c.id == id);
        if !continues {
            if let Some(prev) = current.take() {
                done.push(prev.finish(p, opts)?);
            }
            if done.iter().any(|s| s.id == id) {
                return Err(perr(line, format!("rows of patient {id} are not contiguous")));
            }
            current = Some(Pending {
                id: id.to_string(),
                first_line: line,
                features: Vec::new(),
                gold: Vec::new(),
                silver: Vec::new(),
                counts: Vec::new(),
                util: Vec::new(),
            });
        }
        let cur = current.as_mut().unwrap();
        if t != cur.gold.len() + 1 {
            return Err(perr(line, format!("visit index {t} out of sequence for patient {id}")));
        }
        cur.features.extend(row);
        cur.gold.push(y);
        cur.silver.push(s);
        cur.counts.push(c);
        cur.util.push(u);
    }
    if let Some(prev) = current.take() {
        done.push(prev.finish(p, opts)?);
    }
    Cohort::new(done, names)
}

pub fn load_cohort(path: &Path, opts: LoadOptions) -> Result<Cohort, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_cohort(&text, opts)
}

fn push_opt(out: &mut String, v: Option<f64>) {
    out.push(',');
    if let Some(v) = v {
        let _ = write!(out, "{v}");
    }
}

pub fn write_cohort(cohort: &Cohort) -> String {
    let p = cohort.p();
    let mut out = format!("{COHORT_MAGIC} p={p}\n{}", FIXED_COLUMNS.join(","));
    for n in &cohort.feature_names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for s in &cohort.patients {
        for t in 0..s.len() {
            let _ = write!(out, "{},{},", s.id, t + 1);
            if let Some(g) = &s.gold {
                let _ = write!(out, "{}", g[t]);
            }
            push_opt(&mut out, s.surrogate_counts.as_ref().map(|c| c[t]));
            push_opt(&mut out, s.utilization.as_ref().map(|u| u[t]));
            push_opt(&mut out, s.silver.as_ref().map(|v| v[t]));
            for v in s.visit(t) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn save_cohort(cohort: &Cohort, path: &Path) -> Result<(), DataError> {
    fs::write(path, write_cohort(cohort)).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn parse_embeddings(text: &str) -> Result<EmbeddingTable, DataError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n0, magic) = lines
        .next()
        .ok_or_else(|| DataError::Embedding("empty embeddings file".into()))?;
    let q = parse_header_value(n0, magic, EMBED_MAGIC, "q")?;
    let mut names = Vec::new();
    let mut rows = Vec::new();
    let mut surrogate = None;
    for (line, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != q + 1 {
            return Err(perr(line, format!("expected name plus {q} values, found {} fields", fields.len())));
        }
        let vals = fields[1..]
            .iter()
            .map(|f| parse_num(line, f, "embedding value"))
            .collect::<Result<Vec<_>, _>>()?;
        let name = fields[0].trim();
        if name == SURROGATE_ROW {
            if surrogate.replace(vals).is_some() {
                return Err(perr(line, "duplicate SURROGATE row"));
            }
        } else {
            names.push(name.to_string());
            rows.push(vals);
        }
    }
    let surrogate = surrogate.ok_or_else(|| DataError::Embedding("missing SURROGATE row".into()))?;
    EmbeddingTable::new(names, rows, surrogate)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_embeddings(&text)
}

pub fn write_embeddings(emb: &EmbeddingTable) -> String {
    let mut out = format!("{EMBED_MAGIC} q={}\n", emb.q());
    let row = |out: &mut String, name: &str, vals: &[f64]| {
        out.push_str(name);
        for v in vals {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    };
    for (i, name) in emb.names.iter().enumerate() {
        row(&mut out, name, emb.features.row(i));
    }
    row(&mut out, SURROGATE_ROW, emb.surrogate.data());
    out
}

pub fn save_embeddings(emb: &EmbeddingTable, path: &Path) -> Result<(), DataError> {
    fs::write(path, write_embeddings(emb)).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "\
# cohort v1 p=2
patient_id,t,y,c,u,s,flu,cough
a,1,0,0,3,,1,2
a,2,1,2,4,,3,1
b,1,,1,1,,0,1
";

    #[test]
    fn parses_two_patient_fixture() {
        let c = parse_cohort(FIXTURE, LoadOptions::default()).unwrap();
        assert_eq!(c.n_labeled, 1);
        assert_eq!(c.p(), 2);
        assert_eq!(c.feature_names, vec!["flu", "cough"]);
        assert_eq!(c.patients[0].gold, Some(vec![0, 1]));
        assert_eq!(c.patients[0].surrogate_counts, Some(vec![0.0, 2.0]));
        assert_eq!(c.patients[1].len(), 1);
        assert_eq!(c.patients[1].gold, None);
    }

    #[test]
    fn empty_file_has_no_patients() {
        let err = parse_cohort("", LoadOptions::default()).unwrap_err();
        assert_eq!(err.to_string(), "no patients");
        let header_only = "# cohort v1 p=1\npatient_id,t,y,c,u,s,f\n";
        assert_eq!(
            parse_cohort(header_only, LoadOptions::default()).unwrap_err().to_string(),
            "no patients"
        );
    }

    #[test]
    fn labeled_after_unlabeled_is_rejected() {
        let text = "# cohort v1 p=1\npatient_id,t,y,c,u,s,f\nb,1,,0,1,,1\na,1,1,0,1,,1\n";
        let err = parse_cohort(text, LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("labeled block must be prefix"));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let ragged = "# cohort v1 p=2\npatient_id,t,y,c,u,s,f,g\na,1,0,0,1,,1\n";
        match parse_cohort(ragged, LoadOptions::default()).unwrap_err() {
            DataError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        let bad_gold = "# cohort v1 p=1\npatient_id,t,y,c,u,s,f\na,1,0,0,1,,1\na,2,2,0,1,,1\n";
        match parse_cohort(bad_gold, LoadOptions::default()).unwrap_err() {
            DataError::Parse { line, msg } => {
                assert_eq!(line, 4);
                assert!(msg.contains("outside {0,1}"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn blank_counts_fall_back_to_defaults() {
        let text = "# cohort v1 p=2\npatient_id,t,y,c,u,s,f,g\na,1,,,,,2,5\na,2,,,,,1,1\n";
        let c = parse_cohort(text, LoadOptions { surrogate_feature: Some(1) }).unwrap();
        assert_eq!(c.patients[0].surrogate_counts, Some(vec![5.0, 1.0]));
        assert_eq!(c.patients[0].utilization, Some(vec![7.0, 2.0]));
        let c = parse_cohort(text, LoadOptions::default()).unwrap();
        assert_eq!(c.patients[0].surrogate_counts, None);
    }

    #[test]
    fn embeddings_parse_and_roundtrip() {
        let text = "# embeddings v1 q=2\nflu,1,0\ncough,0.5,0.5\nSURROGATE,1,1\n";
        let e = parse_embeddings(text).unwrap();
        assert_eq!(e.q(), 2);
        assert_eq!(e.p(), 2);
        assert_eq!(parse_embeddings(&write_embeddings(&e)).unwrap(), e);
        assert!(parse_embeddings("# embeddings v1 q=2\nflu,1,0\n").is_err());
    }
}
