use std::fs;
use std::path::Path;

use super::{FilteredInfo, Modality, RawDataPoint};
use crate::error::Result;
use crate::Day;

const SYSTEM: &str = include_str!("../../prompts/system.txt");
const FILTER: &str = include_str!("../../prompts/filter_user.txt");
const GENERATOR: &str = include_str!("../../prompts/generator_user.txt");
const POLARITY: &str = include_str!("../../prompts/polarity_user.txt");

const MISSING_SUMMARY: &str = "N/A";

/// Prompt templates with bracketed slots such as `[Asset Ticker]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSet {
    pub system: String,
    pub filter: String,
    pub generator: String,
    pub polarity: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            system: SYSTEM.trim_end().to_string(),
            filter: FILTER.trim_end().to_string(),
            generator: GENERATOR.trim_end().to_string(),
            polarity: POLARITY.trim_end().to_string(),
        }
    }
}

impl PromptSet {
    /// Loads `system.txt`, `filter_user.txt`, `generator_user.txt` and
    /// `polarity_user.txt` from `dir`. Missing files keep the built-in text.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut set = PromptSet::default();
        for (file, slot) in [
            ("system.txt", &mut set.system),
            ("filter_user.txt", &mut set.filter),
            ("generator_user.txt", &mut set.generator),
            ("polarity_user.txt", &mut set.polarity),
        ] {
            let path = dir.join(file);
            if path.exists() {
                *slot = fs::read_to_string(path)?.trim_end().to_string();
            }
        }
        Ok(set)
    }

    pub fn filter_prompt(&self, raw: &RawDataPoint) -> String {
        fill_asset(&self.filter, raw.asset_name(), &raw.ticker, raw.day)
            .replace("[Modality Name]", raw.modality.name())
            .replace("[Raw Data]", &raw.body)
    }

    pub fn polarity_prompt(&self, raw: &RawDataPoint) -> String {
        fill_asset(&self.polarity, raw.asset_name(), &raw.ticker, raw.day)
            .replace("[Modality Name]", raw.modality.name())
            .replace("[Raw Data]", &raw.body)
    }

    pub fn generator_prompt(&self, name: &str, ticker: &str, day: Day, infos: &[FilteredInfo]) -> String {
        let summary = |m: Modality| {
            let parts: Vec<&str> = infos
                .iter()
                .filter(|i| i.modality == m)
                .map(|i| i.summary.as_str())
                .collect();
            if parts.is_empty() {
                MISSING_SUMMARY.to_string()
            } else {
                parts.join("\n")
            }
        };
        fill_asset(&self.generator, name, ticker, day)
            .replace("[fundamental_output]", &summary(Modality::Fundamental))
            .replace("[technical_output]", &summary(Modality::Technical))
            .replace("[news_output]", &summary(Modality::News))
    }
}

fn fill_asset(template: &str, name: &str, ticker: &str, day: Day) -> String {
    template
        .replace("[Asset Name]", name)
        .replace("[Asset Ticker]", ticker)
        .replace("[Analysis Date]", &day.to_string())
}
