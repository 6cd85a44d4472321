use serde::{Deserialize, Serialize};

use super::metrics::anls;
use super::train::TaskModel;
use crate::doc_model::{special, tokenize, GridBox, GroundTruth, RawDocument, TokenizedDocument, TokenizerModel};
use crate::encoder::params::{Initializer, Resolver};
use crate::encoder::{linear, EncoderConfig, Linear, Model, ModelInput};
use crate::error::{Error, Result};
use crate::exec;
use crate::objectives::Term;
use crate::rng::{self, domain, Rng};
use crate::tensor::{Graph, Var};

/// `[cls] question [sep] context` input with word bookkeeping for the context.
#[derive(Debug, Clone, PartialEq)]
pub struct QaExample {
    pub question: String,
    pub input: ModelInput,
    /// First and last input row of every context word, in reading order.
    pub word_rows: Vec<(usize, usize)>,
    /// Text of every context word, in reading order.
    pub word_texts: Vec<String>,
    /// Source word index of every context word.
    pub word_ids: Vec<usize>,
    /// Gold answer as `[first, last]` positions in `word_rows`.
    pub answer: Option<[usize; 2]>,
}

impl QaExample {
    /// Assembles the input. Question tokens and the two specials get a zero
    /// box; positions run 1..=n over the whole sequence. The context is
    /// truncated to fit `max_seq_len`; `answer` holds source word indices.
    pub fn assemble(
        question: &str,
        context: &TokenizedDocument,
        words: &[String],
        answer: Option<[usize; 2]>,
        tok: &TokenizerModel,
        enc: &EncoderConfig,
    ) -> Result<Self> {
        let mut tokens = vec![special::CLS];
        for w in question.split_whitespace() {
            tokens.extend(tok.encode_word(w));
        }
        tokens.push(special::SEP);
        let offset = tokens.len();
        if offset >= enc.max_seq_len {
            return Err(Error::InvalidDocument(format!("question \"{question}\" leaves no room for context")));
        }
        let mut doc = context.clone();
        doc.truncate(enc.max_seq_len - offset);
        tokens.extend(&doc.tokens);
        let n = tokens.len();
        let mut boxes = vec![GridBox([0; 4]); offset];
        boxes.extend(&doc.token_boxes);

        let spans = doc.word_spans();
        let word_rows = spans.iter().map(|(_, r)| (offset + r.start, offset + r.end - 1)).collect();
        let word_ids: Vec<usize> = spans.iter().map(|(w, _)| *w).collect();
        let word_texts = word_ids.iter().map(|&w| words[w].clone()).collect();
        let answer = match answer {
            None => None,
            Some([a, b]) => {
                let find = |w: usize| {
                    word_ids.iter().position(|&x| x == w).ok_or_else(|| {
                        Error::InvalidDocument(format!("answer word {w} is outside the (truncated) context"))
                    })
                };
                let (s, e) = (find(a)?, find(b)?);
                if s > e {
                    return Err(Error::InvalidDocument(format!("answer [{a}, {b}] runs backwards")));
                }
                Some([s, e])
            }
        };
        Ok(Self {
            question: question.to_string(),
            input: ModelInput { tokens, positions: (1..=n).collect(), boxes, padding: vec![false; n] },
            word_rows,
            word_texts,
            word_ids,
            answer,
        })
    }

    /// Context words `first..=last` joined by single spaces.
    pub fn text(&self, span: [usize; 2]) -> String {
        self.word_texts[span[0]..=span[1]].join(" ")
    }
}

/// One example per annotated question of the document.
pub fn qa_examples(raw: &RawDocument, truth: &GroundTruth, tok: &TokenizerModel, enc: &EncoderConfig) -> Result<Vec<QaExample>> {
    truth.validate(raw.len())?;
    let doc = tokenize(raw, tok)?;
    truth
        .qa_spans
        .iter()
        .map(|q| QaExample::assemble(&q.question, &doc, &raw.words, Some(q.answer), tok, enc))
        .collect()
}

/// Highest `start[s] + end[e]` with `s <= e <= s + cap`; ties go to the
/// smallest `(s, e)`.
pub fn best_span(start: &[f64], end: &[f64], cap: usize) -> Result<[usize; 2]> {
    let n = start.len().min(end.len());
    let mut best: Option<([usize; 2], f64)> = None;
    for s in 0..n {
        for e in s..n.min(s + cap + 1) {
            let score = start[s] + end[e];
            if best.is_none_or(|(_, b)| score > b) {
                best = Some(([s, e], score));
            }
        }
    }
    best.map(|(span, _)| span).ok_or(Error::NoValidSpan)
}

/// Encoder with start and end scorers (d → 1) over context words.
#[derive(Debug, Clone)]
pub struct QaModel {
    pub model: Model,
    pub start: Linear,
    pub end: Linear,
}

impl QaModel {
    pub fn new(mut model: Model, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, domain::INIT, 2);
        let (std, d) = (model.config.init_std, model.config.hidden_dim);
        let mut init = Initializer::new(&mut model.params, &mut r, std);
        let start = Linear::build(&mut init, "qa_start", d, 1)?;
        let end = Linear::build(&mut init, "qa_end", d, 1)?;
        Ok(Self { model, start, end })
    }

    pub fn from_model(model: Model) -> Result<Self> {
        let d = model.config.hidden_dim;
        let mut res = Resolver::new(&model.params);
        let start = Linear::build(&mut res, "qa_start", d, 1)?;
        let end = Linear::build(&mut res, "qa_end", d, 1)?;
        Ok(Self { model, start, end })
    }

    /// Start logits (1×W, at each word's first token) and end logits (1×W,
    /// at each word's last token).
    pub fn word_scores(&self, g: &mut Graph, ex: &QaExample, dropout: Option<&mut Rng>) -> Result<(Var, Var)> {
        if ex.word_rows.is_empty() {
            return Err(Error::NoValidSpan);
        }
        let reps = self.model.forward(g, &ex.input, dropout)?;
        let firsts: Vec<usize> = ex.word_rows.iter().map(|r| r.0).collect();
        let lasts: Vec<usize> = ex.word_rows.iter().map(|r| r.1).collect();
        let mut score = |rows: &[usize], head: &Linear| -> Result<Var> {
            let x = g.select_rows(reps, rows)?;
            let s = linear(g, x, head)?;
            g.transpose(s)
        };
        Ok((score(&firsts, &self.start)?, score(&lasts, &self.end)?))
    }

    pub fn predict(&self, ex: &QaExample, cap: usize) -> Result<QaPrediction> {
        let mut g = self.model.graph();
        let (s, e) = self.word_scores(&mut g, ex, None)?;
        let span = best_span(g.value(s).data(), g.value(e).data(), cap)?;
        Ok(QaPrediction {
            question: ex.question.clone(),
            words: [ex.word_ids[span[0]], ex.word_ids[span[1]]],
            text: ex.text(span),
            span,
        })
    }
}

impl TaskModel for QaModel {
    type Example = QaExample;

    fn encoder(&self) -> &Model {
        &self.model
    }

    fn encoder_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    fn example_loss<'p>(&'p self, ex: &QaExample, dropout: Option<&mut Rng>) -> Result<(Graph<'p>, Term)> {
        let mut g = self.model.graph();
        let Some([a, b]) = ex.answer else {
            return Ok((g, Term::default()));
        };
        let (s, e) = self.word_scores(&mut g, ex, dropout)?;
        let ls = g.cross_entropy_sum(s, &[a])?;
        let le = g.cross_entropy_sum(e, &[b])?;
        let sum = g.add(ls, le)?;
        Ok((g, Term { sum: Some(sum), count: 2, correct: 0 }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPrediction {
    pub question: String,
    /// Source word indices of the first and last answer word.
    pub words: [usize; 2],
    /// Positions within the context word list.
    pub span: [usize; 2],
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaReport {
    pub task: String,
    pub anls: f64,
    pub exact_match: f64,
}

/// ANLS and exact span match over examples with gold answers.
pub fn evaluate_qa(model: &QaModel, examples: &[QaExample], cap: usize) -> Result<(QaReport, Vec<QaPrediction>)> {
    let preds = exec::map_indexed(examples, |_, ex| model.predict(ex, cap))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (mut score, mut exact, mut n) = (0.0, 0usize, 0usize);
    for (ex, p) in examples.iter().zip(&preds) {
        if let Some(gold) = ex.answer {
            score += anls(&p.text, &[ex.text(gold)])?;
            exact += usize::from(p.span == gold);
            n += 1;
        }
    }
    let mean = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    Ok((QaReport { task: "qa".into(), anls: mean(score), exact_match: mean(exact as f64) }, preds))
}
