//! Small generators of labelled mixed data for tests and demonstrations.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{Schema, VarKind, VariableSpec};
use crate::rng::task_rng;

/// Generated table: schema, cells in schema order, and the generating group.
#[derive(Debug, Clone)]
pub struct LabelledTable {
    pub schema: Schema,
    pub rows: Vec<Vec<String>>,
    pub truth: Vec<usize>,
}

impl LabelledTable {
    /// CSV text with a header row, readable by [`crate::data::load_dataset`].
    pub fn to_csv(&self) -> String {
        let names: Vec<&str> = self
            .schema
            .columns
            .iter()
            .map(|c| c.name.as_str())
            .collect();
        let mut s = names.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn schema_json(&self) -> String {
        serde_json::to_string_pretty(&self.schema).expect("schema serializes")
    }

    pub fn truth_csv(&self) -> String {
        let mut s = String::from("label\n");
        for t in &self.truth {
            s.push_str(&format!("{t}\n"));
        }
        s
    }
}

/// Two alternating groups: four continuous columns centred at ±`shift` with
/// unit noise and four binary columns equal to 1 with probability 0.9 in
/// group 1 and 0.1 in group 0.
pub fn two_group_mixed(n: usize, shift: f64, seed: u64) -> LabelledTable {
    let mut rng = task_rng(seed, 0x5947);
    let mut columns = Vec::new();
    for j in 0..4 {
        columns.push(VariableSpec {
            name: format!("x{j}"),
            kind: VarKind::Continuous,
            levels: None,
            trials: None,
        });
    }
    for j in 0..4 {
        columns.push(VariableSpec {
            name: format!("b{j}"),
            kind: VarKind::Binary,
            levels: None,
            trials: None,
        });
    }
    let mut rows = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let g = i % 2;
        let centre = if g == 1 { shift } else { -shift };
        let p = if g == 1 { 0.9 } else { 0.1 };
        let mut r = Vec::with_capacity(8);
        for _ in 0..4 {
            let e: f64 = rng.sample(StandardNormal);
            r.push(format!("{}", centre + e));
        }
        for _ in 0..4 {
            r.push(if rng.random::<f64>() < p { "1" } else { "0" }.to_string());
        }
        rows.push(r);
        truth.push(g);
    }
    LabelledTable {
        schema: Schema { columns },
        rows,
        truth,
    }
}
