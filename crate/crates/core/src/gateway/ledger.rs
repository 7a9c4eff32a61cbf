//! Per-call token and cost accounting.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{StageGroup, StageTag, Usage};

/// USD per 1K tokens for one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Price {
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

/// Model id to price. Loaded from configuration; nothing is hard-coded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(pub BTreeMap<String, Price>);

impl PriceTable {
    pub fn get(&self, model: &str) -> Option<Price> {
        self.0.get(model).copied()
    }

    pub fn insert(&mut self, model: impl Into<String>, price: Price) {
        self.0.insert(model.into(), price);
    }

    /// Cost of one call, rounded half-up to 4 decimals. Unpriced models cost 0.
    pub fn cost(&self, model: &str, usage: Usage) -> f64 {
        let Some(price) = self.get(model) else {
            return 0.0;
        };
        let raw = usage.input_tokens as f64 / 1000.0 * price.input_per_1k
            + usage.output_tokens as f64 / 1000.0 * price.output_per_1k;
        round_to(raw, 4)
    }
}

/// Half-up rounding for non-negative amounts.
fn round_to(value: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    // The tiny nudge keeps values like 0.00015 (stored as 0.000149999...) rounding up.
    ((value * scale) + 1e-9).round() / scale
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub stage: StageTag,
    pub model: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost_usd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    /// One group per stage tag.
    Stage,
    /// One group per report column: dag, ppt, poster, pr.
    Backend,
    Model,
    All,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Totals {
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Exact sum of entry costs; use [`Totals::cost_2dp`] for reporting.
    pub cost_usd: f64,
}

impl Totals {
    pub fn add(&mut self, other: &Totals) {
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.cost_usd += other.cost_usd;
    }

    pub fn cost_2dp(&self) -> f64 {
        round_to(self.cost_usd, 2)
    }

    pub fn input_k(&self) -> f64 {
        self.input_tokens as f64 / 1000.0
    }

    pub fn output_k(&self) -> f64 {
        self.output_tokens as f64 / 1000.0
    }
}

impl fmt::Display for Totals {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}K in / {:.3}K out / ${:.2}", self.input_k(), self.output_k(), self.cost_2dp())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostLedger {
    entries: Vec<LedgerEntry>,
    prices: PriceTable,
}

pub const CSV_HEADER: [&str; 5] = ["stage", "model", "input_tokens", "output_tokens", "cost_usd"];

impl CostLedger {
    pub fn new(prices: PriceTable) -> Self {
        Self { entries: Vec::new(), prices }
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn prices(&self) -> &PriceTable {
        &self.prices
    }

    /// Appends an entry priced with this ledger's table.
    pub fn record(&mut self, stage: StageTag, model: &str, usage: Usage) -> &LedgerEntry {
        let cost_usd = self.prices.cost(model, usage);
        self.entries.push(LedgerEntry {
            stage,
            model: model.to_string(),
            input_tokens: usage.input_tokens,
            output_tokens: usage.output_tokens,
            cost_usd,
        });
        self.entries.last().expect("just pushed")
    }

    /// Appends an already-priced entry, e.g. one read back from `costs.csv`.
    pub fn push(&mut self, entry: LedgerEntry) {
        self.entries.push(entry);
    }

    pub fn extend(&mut self, other: &CostLedger) {
        self.entries.extend(other.entries.iter().cloned());
    }

    /// Totals per group, in a stable group order. `GroupBy::All` yields one `"all"` group.
    pub fn total(&self, group_by: GroupBy) -> Vec<(String, Totals)> {
        let mut groups: BTreeMap<(usize, String), Totals> = BTreeMap::new();
        for e in &self.entries {
            let key = match group_by {
                GroupBy::Stage => (e.stage as usize, e.stage.as_str().to_string()),
                GroupBy::Backend => (e.stage.group() as usize, e.stage.group().as_str().to_string()),
                GroupBy::Model => (0, e.model.clone()),
                GroupBy::All => (0, "all".to_string()),
            };
            groups.entry(key).or_default().add(&Totals {
                input_tokens: e.input_tokens,
                output_tokens: e.output_tokens,
                cost_usd: e.cost_usd,
            });
        }
        if group_by == GroupBy::All && groups.is_empty() {
            groups.insert((0, "all".into()), Totals::default());
        }
        groups.into_iter().map(|((_, name), t)| (name, t)).collect()
    }

    pub fn grand_total(&self) -> Totals {
        self.total(GroupBy::All).pop().map(|(_, t)| t).unwrap_or_default()
    }

    /// Totals for each of the four report columns, zero-filled.
    pub fn backend_totals(&self) -> Vec<(StageGroup, Totals)> {
        let by_name: BTreeMap<String, Totals> = self.total(GroupBy::Backend).into_iter().collect();
        StageGroup::ALL
            .into_iter()
            .map(|g| (g, by_name.get(g.as_str()).copied().unwrap_or_default()))
            .collect()
    }

    /// `costs.csv` contents. Rows are sorted so concurrent runs export identically.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<&LedgerEntry> = self.entries.iter().collect();
        rows.sort_by(|a, b| {
            (a.stage, &a.model, a.input_tokens, a.output_tokens)
                .cmp(&(b.stage, &b.model, b.input_tokens, b.output_tokens))
                .then(a.cost_usd.total_cmp(&b.cost_usd))
        });
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(CSV_HEADER).expect("in-memory csv");
        for e in rows {
            writer
                .write_record([
                    e.stage.as_str(),
                    &e.model,
                    &e.input_tokens.to_string(),
                    &e.output_tokens.to_string(),
                    &format!("{:.4}", e.cost_usd),
                ])
                .expect("in-memory csv");
        }
        String::from_utf8(writer.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| e.to_string())?;
        if header.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(format!("unexpected ledger header {:?}", header.iter().collect::<Vec<_>>()));
        }
        let mut ledger = CostLedger::default();
        for (idx, record) in reader.records().enumerate() {
            let record = record.map_err(|e| format!("row {}: {e}", idx + 1))?;
            let field = |i: usize| record.get(i).unwrap_or_default();
            let bad = |what: &str| format!("row {}: bad {what}", idx + 1);
            ledger.push(LedgerEntry {
                stage: field(0).parse().map_err(|_| bad("stage"))?,
                model: field(1).to_string(),
                input_tokens: field(2).parse().map_err(|_| bad("input_tokens"))?,
                output_tokens: field(3).parse().map_err(|_| bad("output_tokens"))?,
                cost_usd: field(4).parse().map_err(|_| bad("cost_usd"))?,
            });
        }
        Ok(ledger)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(stage: StageTag, cost: f64) -> LedgerEntry {
        LedgerEntry { stage, model: "m".into(), input_tokens: 1000, output_tokens: 10, cost_usd: cost }
    }

    fn ledger(costs: &[(StageTag, f64)]) -> CostLedger {
        let mut l = CostLedger::default();
        for &(s, c) in costs {
            l.push(entry(s, c));
        }
        l
    }

    #[test]
    fn table_totals_gpt4o_row() {
        let l = ledger(&[(StageTag::PptSlide, 1.23), (StageTag::PosterOutline, 0.28), (StageTag::PrFinal, 0.15)]);
        assert_eq!(l.grand_total().cost_2dp(), 1.66);
    }

    #[test]
    fn table_totals_gemini_row() {
        let l = ledger(&[(StageTag::PptSlide, 1.52), (StageTag::PosterOutline, 0.23), (StageTag::PrFinal, 0.17)]);
        assert_eq!(l.grand_total().cost_2dp(), 1.92);
    }

    #[test]
    fn empty_ledger_totals_zero() {
        let t = CostLedger::default().grand_total();
        assert_eq!((t.input_tokens, t.output_tokens, t.cost_2dp()), (0, 0, 0.0));
        assert_eq!(CostLedger::default().total(GroupBy::All).len(), 1);
    }

    #[test]
    fn cost_formula_rounds_half_up() {
        let mut prices = PriceTable::default();
        prices.insert("m", Price { input_per_1k: 0.0025, output_per_1k: 0.01 });
        // 1234/1000*0.0025 + 567/1000*0.01 = 0.003085 + 0.00567 = 0.008755 -> 0.0088
        let cost = prices.cost("m", Usage { input_tokens: 1234, output_tokens: 567 });
        assert_eq!(cost, 0.0088);
        // 0.00015 exactly on the half.
        prices.insert("h", Price { input_per_1k: 0.00015, output_per_1k: 0.0 });
        assert_eq!(prices.cost("h", Usage { input_tokens: 1000, output_tokens: 0 }), 0.0002);
        assert_eq!(prices.cost("unpriced", Usage { input_tokens: 10, output_tokens: 10 }), 0.0);
    }

    #[test]
    fn grouping_by_backend_and_stage() {
        let l = ledger(&[
            (StageTag::DagDecompose, 0.1),
            (StageTag::PptOutline, 0.2),
            (StageTag::PptRevise, 0.3),
            (StageTag::PrOutline, 0.4),
        ]);
        let backends: Vec<String> = l.total(GroupBy::Backend).into_iter().map(|(n, _)| n).collect();
        assert_eq!(backends, ["dag", "ppt", "pr"]);
        let stages = l.total(GroupBy::Stage);
        assert_eq!(stages.len(), 4);
        assert_eq!(l.backend_totals().len(), 4);
    }

    #[test]
    fn csv_round_trip() {
        let l = ledger(&[(StageTag::PptOutline, 0.1234), (StageTag::DagClean, 0.5)]);
        let csv = l.to_csv();
        assert!(csv.starts_with("stage,model,input_tokens,output_tokens,cost_usd\n"));
        assert!(csv.lines().nth(1).unwrap().starts_with("dag_clean,"));
        let back = CostLedger::from_csv(&csv).unwrap();
        assert_eq!(back.entries().len(), 2);
        assert_eq!(back.grand_total().input_tokens, 2000);
        assert!(CostLedger::from_csv("a,b\n").is_err());
    }
}
