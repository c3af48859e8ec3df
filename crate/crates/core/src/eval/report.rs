use serde::{Deserialize, Serialize};

/// Recall cutoffs reported for every method.
pub const RECALL_CUTOFFS: [usize; 3] = [10, 100, 300];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    /// Recall@10, @100, @300; `None` if the method failed.
    pub recall: Option<[f64; 3]>,
    pub relr: Option<f64>,
    pub queries: usize,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<MethodRow>,
}

impl EvalReport {
    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,recall@10,recall@100,recall@300,relr,queries,failure\n");
        for r in &self.rows {
            let (a, b, c) = match r.recall {
                Some(v) => (format!("{:.6}", v[0]), format!("{:.6}", v[1]), format!("{:.6}", v[2])),
                None => Default::default(),
            };
            let relr = r.relr.map(|v| format!("{v:.6}")).unwrap_or_default();
            let fail = r.failure.clone().unwrap_or_default().replace([',', '\n'], " ");
            s.push_str(&format!("{},{a},{b},{c},{relr},{},{fail}\n", r.method, r.queries));
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Method | Recall@10 | Recall@100 | Recall@300 | RelR |\n|---|---|---|---|---|\n");
        let pct = |v: f64| format!("{:.2}%", 100.0 * v);
        for r in &self.rows {
            match (&r.recall, r.relr) {
                (Some(v), Some(relr)) => s.push_str(&format!(
                    "| {} | {} | {} | {} | {} |\n",
                    r.method,
                    pct(v[0]),
                    pct(v[1]),
                    pct(v[2]),
                    pct(relr)
                )),
                _ => s.push_str(&format!(
                    "| {} | failed | failed | failed | {} |\n",
                    r.method,
                    r.failure.as_deref().unwrap_or("failed")
                )),
            }
        }
        s
    }
}
