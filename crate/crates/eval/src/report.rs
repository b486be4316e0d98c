//! Tabular renderings of a [`Report`].

use crate::error::EvalError;
use crate::experiment::{Report, Summary};

fn mean(s: &Option<Summary>) -> String {
    s.as_ref().map_or_else(String::new, |s| format!("{:.4}", s.mean))
}

fn std(s: &Option<Summary>) -> String {
    s.as_ref().map_or_else(String::new, |s| format!("{:.4}", s.std))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.4}"))
}

const AGG_HEADER: [&str; 14] = [
    "defense",
    "variant",
    "prompts",
    "errors",
    "token_accuracy",
    "token_accuracy_std",
    "bleu",
    "keyword_recall",
    "distortion",
    "embedding_error",
    "p_truth_in_embedding",
    "p_truth_in_semantic",
    "p_truth_in_union",
    "p_chosen_given_union",
];

fn aggregate_rows(report: &Report) -> Vec<Vec<String>> {
    report
        .aggregates
        .iter()
        .map(|a| {
            let c = a.candidates;
            vec![
                a.defense.clone(),
                a.variant.clone(),
                a.prompts.to_string(),
                a.errors.to_string(),
                mean(&a.token_accuracy),
                std(&a.token_accuracy),
                mean(&a.bleu),
                mean(&a.keyword_recall),
                mean(&a.distortion),
                mean(&a.embedding_error),
                opt(c.and_then(|c| c.truth_in_embedding)),
                opt(c.and_then(|c| c.truth_in_semantic)),
                opt(c.and_then(|c| c.truth_in_union)),
                opt(c.and_then(|c| c.chosen_given_union)),
            ]
        })
        .collect()
}

fn to_csv(header: &[&str], rows: Vec<Vec<String>>) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One row per (defense, variant) pair.
pub fn aggregates_csv(report: &Report) -> Result<String, EvalError> {
    to_csv(&AGG_HEADER, aggregate_rows(report))
}

/// One row per (prompt, defense, variant).
pub fn results_csv(report: &Report) -> Result<String, EvalError> {
    let ids = |v: &[u32]| v.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
    let rows = report
        .results
        .iter()
        .map(|r| {
            vec![
                r.prompt_id.clone(),
                r.defense.clone(),
                r.variant.clone(),
                ids(&r.x),
                r.x_hat.as_deref().map(ids).unwrap_or_default(),
                opt(r.token_accuracy),
                opt(r.bleu),
                opt(r.keyword_recall),
                opt(r.distortion),
                opt(r.embedding_error),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    to_csv(
        &[
            "prompt_id",
            "defense",
            "variant",
            "x",
            "x_hat",
            "token_accuracy",
            "bleu",
            "keyword_recall",
            "distortion",
            "embedding_error",
            "error",
        ],
        rows,
    )
}

/// The aggregate table as GitHub markdown.
pub fn markdown(report: &Report) -> String {
    let mut s = format!(
        "# Inversion report\n\nAttacker boundary: {} of {} layers. Prompts: {}.\n\n",
        report.boundary,
        report
            .config
            .model_layers()
            .map_or_else(|| "?".into(), |l| l.to_string()),
        report.config.prompts
    );
    s += &format!("| {} |\n", AGG_HEADER.join(" | "));
    s += &format!("|{}\n", "---|".repeat(AGG_HEADER.len()));
    for row in aggregate_rows(report) {
        s += &format!("| {} |\n", row.join(" | "));
    }
    s
}
