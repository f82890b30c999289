//! Retrieval metrics, relevance judgments, run files and reports.

mod metrics;
mod qrels;
mod report;
mod run;

pub use metrics::{
    compute, evaluate, mrr_at_k, ndcg_at_k, parse_metrics, recall_at_k, table_text, table_tsv, topk_accuracy, Metric,
};
pub use qrels::{load_queries, parse_queries_jsonl, parse_queries_tsv, write_queries_jsonl, QRels, QueryRecord};
pub use report::{load_log, parse_log, report, write_report, EvalRecord, LogRecord, NamedLog};
pub use run::RunFile;
