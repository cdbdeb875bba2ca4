use super::{cumulative_curve, EvalError};

/// Per-visit probabilities of one patient with their cumulative curve.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionCurve {
    pub patient_id: String,
    pub p: Vec<f64>,
    pub cum: Vec<f64>,
}

impl PredictionCurve {
    pub fn from_probs(patient_id: impl Into<String>, p: Vec<f64>) -> Self {
        let cum = cumulative_curve(&p);
        Self {
            patient_id: patient_id.into(),
            p,
            cum,
        }
    }
}

const HEADER: &str = "patient_id,t,p,cum";

/// CSV with one row per visit: `patient_id,t,p,cum`.
pub fn write_curves(curves: &[PredictionCurve]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for c in curves {
        for (t, (p, cum)) in c.p.iter().zip(&c.cum).enumerate() {
            out.push_str(&format!("{},{},{p},{cum}\n", c.patient_id, t + 1));
        }
    }
    out
}

pub fn parse_curves(text: &str) -> Result<Vec<PredictionCurve>, EvalError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        _ => {
            return Err(EvalError::Parse {
                line: 1,
                msg: format!("expected header '{HEADER}'"),
            })
        }
    }
    let mut curves: Vec<PredictionCurve> = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| EvalError::Parse {
            line: line_no,
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let t: usize = fields[1].trim().parse().map_err(|_| bad("invalid visit index"))?;
        let p: f64 = fields[2].trim().parse().map_err(|_| bad("invalid probability"))?;
        let cum: f64 = fields[3].trim().parse().map_err(|_| bad("invalid cumulative value"))?;
        let id = fields[0].trim();
        let continuing = curves.last().is_some_and(|c| c.patient_id == id);
        if !continuing {
            if curves.iter().any(|c| c.patient_id == id) {
                return Err(bad(&format!("patient {id} rows are not contiguous")));
            }
            curves.push(PredictionCurve {
                patient_id: id.to_string(),
                p: Vec::new(),
                cum: Vec::new(),
            });
        }
        let c = curves.last_mut().expect("pushed above");
        if t != c.p.len() + 1 {
            return Err(bad(&format!("expected visit {}, found {t}", c.p.len() + 1)));
        }
        c.p.push(p);
        c.cum.push(cum);
    }
    Ok(curves)
}
