use rand::seq::SliceRandom;

use crate::bench::display_label;
use crate::prompts::PromptRole;
use crate::template::ChoiceSet;
use crate::util::seeded_rng;

use super::protocol::{parse_subquestions, Prediction, Target};
use super::{
    GenOutcome, PipelineError, PipelineId, Pipelines, QaTask, ReasoningChain, RejectReason, Step, StepError,
    StepSource, TaskCtx,
};

impl Pipelines<'_> {
    fn caption_step(&self, ctx: &TaskCtx<'_>, chain: &mut ReasoningChain) -> Result<(), StepError> {
        let prompt = self.prompts.template(PromptRole::Caption).to_string();
        let (answer, _) = ctx.ask(self.gateway, &self.alm(ctx, prompt.clone()))?;
        chain.push(StepSource::Alm, prompt, answer);
        Ok(())
    }

    /// LLM describes a choice, then the ALM checks the clip against that
    /// description. Two chain steps.
    fn describe_and_verify(
        &self,
        ctx: &TaskCtx<'_>,
        question: &str,
        choice: &str,
        chain: &mut ReasoningChain,
    ) -> Result<(), StepError> {
        let describe = self.prompts.render(
            PromptRole::DescribeChoice,
            &[("question", question), ("choice", choice)],
        );
        let (description, _) = ctx.ask(self.gateway, &self.llm(describe.clone()))?;
        chain.push(StepSource::Llm, describe, description.clone());
        let verify = self.prompts.render(
            PromptRole::VerifyChoice,
            &[("choice", choice), ("description", description.trim())],
        );
        let (verdict, _) = ctx.ask(self.gateway, &self.alm(ctx, verify.clone()))?;
        chain.push(StepSource::Alm, verify, verdict);
        Ok(())
    }

    fn run_body<F>(&self, pipeline: PipelineId, task: &QaTask, body: F) -> Result<GenOutcome, PipelineError>
    where
        F: FnOnce(&TaskCtx<'_>, &mut ReasoningChain) -> Result<Step, StepError>,
    {
        self.check_task(pipeline, task)?;
        let ctx = TaskCtx::new(task, self.config.task_call_budget);
        let mut chain = ReasoningChain::default();
        let result = body(&ctx, &mut chain);
        Ok(self.finish(pipeline, ctx, chain, result))
    }

    /// Broad sub-questions: the LLM lists questions, the ALM answers all of
    /// them (concurrently, order kept), then filter and rephrase.
    pub fn run_subquestions(&self, task: &QaTask) -> Result<GenOutcome, PipelineError> {
        let choices = task.choice_set().map_err(PipelineError::InvalidTask)?;
        self.run_body(PipelineId::Subquestions, task, |ctx, chain| {
            let target = Target::new(&task.question, &task.gold, choices.as_ref());
            let t_min = self.config.t_min;
            let prompt = self.prompts.render(
                PromptRole::SubQuestions,
                &[("question", &target.question), ("count", &t_min.to_string())],
            );
            let (listing, _) = ctx.ask(self.gateway, &self.llm(prompt))?;
            let subs = parse_subquestions(&listing);
            if subs.len() < t_min {
                return Ok(Step::Reject(RejectReason::TooShort));
            }
            let mut prompts = vec![self.prompts.template(PromptRole::Caption).to_string()];
            prompts.extend(subs);
            let answers = self.answer_all(ctx, &prompts);
            for (prompt, answer) in prompts.into_iter().zip(answers) {
                chain.push(StepSource::Alm, prompt, answer?);
            }
            if !self.filter(ctx, "final", &target, chain, None)? {
                return Ok(Step::Reject(RejectReason::FilterFailed));
            }
            Ok(Step::Accept(self.rephrase(ctx, &target, chain)?))
        })
    }

    /// ALM answers for `prompts`, fanned out over scoped threads; results
    /// come back in prompt order.
    fn answer_all(&self, ctx: &TaskCtx<'_>, prompts: &[String]) -> Vec<Result<String, StepError>> {
        let workers = self.config.fanout.clamp(1, prompts.len().max(1));
        let ask = |p: &String| ctx.ask(self.gateway, &self.alm(ctx, p.clone())).map(|(a, _)| a);
        if workers == 1 {
            return prompts.iter().map(ask).collect();
        }
        let next = std::sync::atomic::AtomicUsize::new(0);
        let mut slots: Vec<Option<Result<String, StepError>>> = (0..prompts.len()).map(|_| None).collect();
        let done = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= prompts.len() {
                        break;
                    }
                    let r = ask(&prompts[i]);
                    done.lock().expect("answer slots")[i] = Some(r);
                });
            }
        });
        slots.into_iter().map(|r| r.expect("every prompt answered")).collect()
    }

    /// Interactive rounds: while the LLM cannot answer from the chain, it
    /// asks the ALM one more question, up to `round_cap` rounds.
    pub fn run_interactive(&self, task: &QaTask) -> Result<GenOutcome, PipelineError> {
        let choices = task.choice_set().map_err(PipelineError::InvalidTask)?;
        self.run_body(PipelineId::Interactive, task, |ctx, chain| {
            let target = Target::new(&task.question, &task.gold, choices.as_ref());
            self.caption_step(ctx, chain)?;
            let mut rounds = 0;
            let confident = loop {
                let (prediction, digest) = self.predict(ctx, &target.question, chain)?;
                if let Prediction::Answer(_) = prediction {
                    break (prediction, digest);
                }
                if rounds == self.config.round_cap {
                    return Ok(Step::Reject(RejectReason::RoundCap));
                }
                let question = self.next_step(ctx, &target.question, chain)?;
                let (answer, _) = ctx.ask(self.gateway, &self.alm(ctx, question.clone()))?;
                chain.push(StepSource::Alm, question, answer);
                rounds += 1;
            };
            if chain.len() < self.config.t_min + 1 {
                return Ok(Step::Reject(RejectReason::TooShort));
            }
            if !self.filter(ctx, "final", &target, chain, Some(confident))? {
                return Ok(Step::Reject(RejectReason::FilterFailed));
            }
            Ok(Step::Accept(self.rephrase(ctx, &target, chain)?))
        })
    }

    /// Describe-then-verify for every choice, in the given order.
    pub fn run_mcq_choices(&self, task: &QaTask) -> Result<GenOutcome, PipelineError> {
        let choices = task.choice_set().map_err(PipelineError::InvalidTask)?;
        self.run_body(PipelineId::Mcq, task, |ctx, chain| {
            let cs = choices.as_ref().expect("checked by check_task");
            let target = Target::new(&task.question, &task.gold, Some(cs));
            self.caption_step(ctx, chain)?;
            for choice in cs.texts() {
                self.describe_and_verify(ctx, &task.question, choice, chain)?;
            }
            if !self.filter(ctx, "final", &target, chain, None)? {
                return Ok(Step::Reject(RejectReason::FilterFailed));
            }
            Ok(Step::Accept(self.rephrase(ctx, &target, chain)?))
        })
    }

    /// Walks the gold leaf's path from level 1 down. Each level offers the
    /// node and its siblings in seeded order; the level must pass the
    /// filter before the next one starts. Levels without siblings carry no
    /// decision and are skipped.
    pub fn run_hierarchy(&self, task: &QaTask) -> Result<GenOutcome, PipelineError> {
        let choices = task.choice_set().map_err(PipelineError::InvalidTask)?;
        let leaf = self.hierarchy_leaf(task)?;
        let tree = self.tree.ok_or(PipelineError::MissingTaxonomy)?;
        let path = tree
            .path_to_root(&leaf)
            .map_err(|e| PipelineError::InvalidTask(e.to_string()))?;
        self.run_body(PipelineId::Hierarchy, task, |ctx, chain| {
            self.caption_step(ctx, chain)?;
            for h in &path {
                let mut options: Vec<&str> = vec![h.as_str()];
                options.extend(tree.siblings(h).expect("node on path"));
                if options.len() < 2 {
                    continue;
                }
                let mut rng = seeded_rng(self.config.seed, &["hierarchy", &task.item_id, h]);
                options.shuffle(&mut rng);
                let gold = options.iter().position(|o| o == h).expect("h included");
                let texts: Vec<String> = options.iter().map(|o| display_label(o)).collect();
                let level = ChoiceSet::new(&texts, Some(gold)).map_err(|e| StepError::Protocol(e.to_string()))?;
                for choice in level.texts() {
                    self.describe_and_verify(ctx, &task.question, choice, chain)?;
                }
                let question = self.prompts.render(
                    PromptRole::LevelQuestion,
                    &[("question", task.question.trim()), ("choices", &level.render())],
                );
                let target = Target {
                    question,
                    answer: format!("({}) {}", level.gold_letter().expect("gold set"), texts[gold]),
                    gold_text: texts[gold].clone(),
                    choices: Some(&level),
                };
                if !self.filter(ctx, &format!("level:{h}"), &target, chain, None)? {
                    return Ok(Step::Reject(RejectReason::StepFilterFailed));
                }
            }
            let target = Target::new(&task.question, &task.gold, choices.as_ref());
            if !self.validate_only(ctx, "final", &target, chain)? {
                return Ok(Step::Reject(RejectReason::FilterFailed));
            }
            Ok(Step::Accept(self.rephrase(ctx, &target, chain)?))
        })
    }
}
