use std::path::PathBuf;

use anyhow::anyhow;
use clap::Args;
use imagevec::data;
use imagevec::embeddings::WordVectors;
use imagevec::eval::{
    crosslingual_retrieval, eval_classification, eval_similarity, eval_similarity_aggregate, format_score,
    load_class_docs, load_sim_task, ClassTask, Report,
};
use imagevec::textproc::LangMode;

use crate::output::Staged;
use crate::Failure;

pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_CSV_FILE: &str = "report.csv";

#[derive(Args)]
pub struct EvalArgs {
    /// word2vec text export from `imagevec train`
    #[arg(long)]
    embeddings: PathBuf,
    /// Row label in the report
    #[arg(long, default_value = "imagevec")]
    name: String,
    /// Similarity task files (word1, word2, score); one column each
    #[arg(long, num_args = 1..)]
    sim: Vec<PathBuf>,
    /// Add an "all" column pooling the pairs of every similarity task
    #[arg(long, requires = "sim")]
    aggregate: bool,
    #[arg(long, requires = "class_test")]
    class_train: Option<PathBuf>,
    #[arg(long, requires = "class_train")]
    class_test: Option<PathBuf>,
    /// Translation lexicon (word1, word2, concept) for retrieval scoring
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = LangMode::Aware)]
    lang_mode: LangMode,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    if a.sim.is_empty() && a.class_train.is_none() && a.lexicon.is_none() {
        return Err(Failure::usage(anyhow!(
            "nothing to evaluate: pass --sim, --class-train/--class-test or --lexicon"
        )));
    }
    let vectors = WordVectors::load_word2vec(&a.embeddings)?;
    // Load every input up front so a missing file fails before any scoring.
    let sim_tasks = a.sim.iter().map(|p| load_sim_task(p)).collect::<Result<Vec<_>, _>>()?;
    let class_task = match (&a.class_train, &a.class_test) {
        (Some(train), Some(test)) => Some(ClassTask {
            name: "classification".into(),
            train: load_class_docs(train)?,
            test: load_class_docs(test)?,
        }),
        _ => None,
    };
    let lexicon = a.lexicon.as_deref().map(data::load_lexicon).transpose()?;

    let mut text = String::new();
    let mut errors = Vec::new();
    let mut reports = Vec::new();

    if !sim_tasks.is_empty() {
        let mut columns: Vec<String> = sim_tasks.iter().map(|t| t.name.clone()).collect();
        let mut cells: Vec<_> = sim_tasks
            .iter()
            .map(|t| eval_similarity(&vectors, t).map_err(|e| format!("{}: {e}", t.name)))
            .collect();
        if a.aggregate {
            columns.push("all".into());
            cells.push(eval_similarity_aggregate(&vectors, &sim_tasks).map_err(|e| format!("all: {e}")));
        }
        let mut report = Report::new(columns);
        report.push_row(&a.name, cells);
        reports.push(report);
    }

    if let Some(task) = &class_task {
        let mut report = Report::new(vec![task.name.clone()]);
        match eval_classification(&vectors, task, a.lang_mode) {
            Ok(r) => {
                text.push_str(&format!("token coverage {}\n", format_score(r.token_coverage)));
                report.push_row(&a.name, vec![Ok(r.result)]);
            }
            Err(e) => report.push_row(&a.name, vec![Err(format!("{}: {e}", task.name))]),
        }
        reports.push(report);
    }

    if let Some(lexicon) = &lexicon {
        let words = data::lexicon_words(lexicon, a.lang_mode == LangMode::Unaware);
        match crosslingual_retrieval(&vectors, &words) {
            Ok(r) => text.push_str(&format!(
                "retrieval p@1 {:.4} same-concept {:.4} diff-concept {:.4} gap {:.4} [{}/{} words]\n",
                r.precision_at_1,
                r.mean_same_concept,
                r.mean_diff_concept,
                r.concept_gap(),
                r.n_used,
                r.n_total
            )),
            Err(e) => errors.push(format!("retrieval: {e}")),
        }
    }

    let mut csv = String::new();
    let mut table = String::new();
    for (i, r) in reports.iter().enumerate() {
        table.push_str(&r.render_text());
        table.push('\n');
        let rendered = r.render_csv();
        csv.push_str(if i == 0 { &rendered } else { rendered.split_once('\n').map_or("", |(_, rest)| rest) });
        for row in &r.rows {
            errors.extend(row.cells.iter().filter_map(|c| c.as_ref().err().cloned()));
        }
    }
    let text = table + &text;
    print!("{text}");

    if let Some(dir) = &a.out_dir {
        let mut out = Staged::new();
        out.write_bytes(&dir.join(REPORT_TEXT_FILE), text.as_bytes())?;
        out.write_bytes(&dir.join(REPORT_CSV_FILE), csv.as_bytes())?;
        out.commit()?;
    }

    if errors.is_empty() {
        Ok(())
    } else {
        for e in &errors {
            eprintln!("task failed: {e}");
        }
        Err(Failure::data(anyhow!("{} evaluation task(s) failed", errors.len())))
    }
}
